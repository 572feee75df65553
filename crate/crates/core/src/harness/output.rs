use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttackGain, BerTableRow, RocCurve, TradeoffSummary};
use crate::detection::BerFit;
use crate::error::Result;

pub fn write_roc_csv<W: Write>(curve: &RocCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "tpr", "fpr"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.tpr.to_string(), p.fpr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-channel detector result reported in `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: usize,
    pub mode_w: f64,
    pub max_mass: f64,
    pub events: u64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scenario: String,
    pub link: (usize, usize),
    pub attacked: bool,
    pub empirical_ber: f64,
    pub channels: Vec<ChannelReport>,
}

/// Machine-readable results. Each command fills the sections it computes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_proposed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_ber: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc_jammed_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc_unjammed_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_table: Option<Vec<BerTableRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_gains: Option<Vec<AttackGain>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tradeoff: Option<Vec<TradeoffSummary>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber_fit: Option<BerFit>,
}

/// Output directory; created on first use.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(Self {
            root: root.as_ref().to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Open `name` for writing and hand a buffered writer to `f`.
    pub fn write<F>(&self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }
}
