//! Bayesian-learning jamming detection over a discrete interference grid.
//!
//! Each monitored channel keeps a posterior over candidate interference
//! powers. Bit outcomes are Bernoulli with the error probability the BER model
//! assigns to `γ = PH / (i + η)`, so the likelihood only depends on the
//! correct/incorrect counts and is accumulated in the log domain.

mod fit;
mod trace;

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub use fit::{fit_ber_curve, samples_from_events, BerFit};
pub use trace::{read_events_jsonl, write_events_jsonl, BitEvent};

/// Ordered candidate interference powers in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceGrid {
    values: Vec<f64>,
}

impl Default for InterferenceGrid {
    fn default() -> Self {
        Self::uniform(0.0, 1e-7, 1e-9).expect("default grid is valid")
    }
}

impl InterferenceGrid {
    /// `min, min + step, ...` up to `max` inclusive. `min` must be 0.
    pub fn uniform(min: f64, max: f64, step: f64) -> Result<Self> {
        if min != 0.0 {
            return Err(Error::field("grid.min_w", "grid must start at 0"));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::field("grid.step_w", "must be finite and > 0"));
        }
        if !(max > min && max.is_finite()) {
            return Err(Error::field("grid.max_w", "must be finite and above min"));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize;
        let values = (0..=n).map(|k| min + k as f64 * step).collect();
        Ok(Self { values })
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.first() != Some(&0.0) {
            return Err(Error::field("grid", "must start at 0"));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::field("grid", "values must be finite and strictly increasing"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Index of the grid point closest to `i`.
    pub fn nearest(&self, i: f64) -> usize {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if (v - i).abs() < (self.values[best] - i).abs() {
                best = k;
            }
        }
        best
    }
}

/// Probability mass over an [`InterferenceGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mass: Vec<f64>,
    /// Bit events consumed so far.
    pub events: u64,
}

impl Posterior {
    pub fn uniform(grid: &InterferenceGrid) -> Self {
        let n = grid.len();
        Self {
            mass: vec![1.0 / n as f64; n],
            events: 0,
        }
    }

    /// Index of the largest mass. Ties go to the lower interference.
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (k, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = k;
            }
        }
        best
    }

    pub fn max_mass(&self) -> f64 {
        self.mass[self.mode()]
    }

    /// `P{lower <= I <= upper}`.
    pub fn mass_between(&self, grid: &InterferenceGrid, lower: f64, upper: f64) -> f64 {
        grid.values()
            .iter()
            .zip(&self.mass)
            .filter(|(v, _)| **v >= lower && **v <= upper)
            .map(|(_, m)| m)
            .sum()
    }

    pub fn write_csv<W: Write>(&self, grid: &InterferenceGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["interference_watts", "mass"])?;
        for (v, m) in grid.values().iter().zip(&self.mass) {
            w.write_record([v.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bit error probability as a function of linear SINR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum BerModel {
    /// Coherent BPSK over AWGN, `Q(sqrt(2γ))`.
    #[default]
    AnalyticBpsk,
    /// `a·exp(-bγ) + floor`, clamped to `[0, 0.5]`.
    FittedExponential { a: f64, b: f64, floor: f64 },
}

impl BerModel {
    pub fn ber(&self, gamma: f64) -> f64 {
        let gamma = gamma.max(0.0);
        match *self {
            BerModel::AnalyticBpsk => {
                if gamma.is_infinite() {
                    0.0
                } else {
                    0.5 * erfc(gamma.sqrt())
                }
            }
            BerModel::FittedExponential { a, b, floor } => {
                let v = a * (-b * gamma).exp() + floor;
                if v.is_nan() {
                    0.5
                } else {
                    v.clamp(0.0, 0.5)
                }
            }
        }
    }
}

/// What the receiver knows about one channel of the monitored link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelContext {
    pub power_w: f64,
    pub gain: f64,
    pub noise_w: f64,
}

impl ChannelContext {
    pub fn sinr(&self, interference: f64) -> f64 {
        self.power_w * self.gain / (interference + self.noise_w)
    }
}

/// Correct and incorrect bit counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitCounts {
    pub correct: u64,
    pub incorrect: u64,
}

impl BitCounts {
    pub fn of(events: &[BitEvent]) -> Self {
        let incorrect = events.iter().filter(|e| !e.correct).count() as u64;
        Self {
            correct: events.len() as u64 - incorrect,
            incorrect,
        }
    }

    pub fn total(&self) -> u64 {
        self.correct + self.incorrect
    }

    pub fn add(&mut self, other: BitCounts) {
        self.correct += other.correct;
        self.incorrect += other.incorrect;
    }

    pub fn ber(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.incorrect as f64 / self.total() as f64
        }
    }
}

/// Log-likelihood of the counts given interference `i`.
pub fn log_likelihood_counts(counts: BitCounts, i: f64, ctx: &ChannelContext, model: &BerModel) -> f64 {
    let p = model.ber(ctx.sinr(i));
    let mut ll = 0.0;
    if counts.incorrect > 0 {
        ll += counts.incorrect as f64 * p.ln();
    }
    if counts.correct > 0 {
        ll += counts.correct as f64 * (-p).ln_1p();
    }
    ll
}

/// Log-likelihood of a batch of events from one channel given interference `i`.
pub fn log_likelihood(events: &[BitEvent], i: f64, ctx: &ChannelContext, model: &BerModel) -> f64 {
    log_likelihood_counts(BitCounts::of(events), i, ctx, model)
}

pub fn posterior_update_counts(
    prior: &Posterior,
    counts: BitCounts,
    ctx: &ChannelContext,
    model: &BerModel,
    grid: &InterferenceGrid,
) -> Result<Posterior> {
    if counts.total() == 0 {
        return Ok(prior.clone());
    }
    let logs: Vec<f64> = grid
        .values()
        .iter()
        .zip(&prior.mass)
        .map(|(&i, &m)| m.ln() + log_likelihood_counts(counts, i, ctx, model))
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || top.is_nan() {
        return Err(Error::ModelInconsistency);
    }
    let mut mass: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= z;
    }
    Ok(Posterior {
        mass,
        events: prior.events + counts.total(),
    })
}

/// Bayes update of `prior` with the events of one channel.
pub fn posterior_update(
    prior: &Posterior,
    events: &[BitEvent],
    ctx: &ChannelContext,
    model: &BerModel,
    grid: &InterferenceGrid,
) -> Result<Posterior> {
    posterior_update_counts(prior, BitCounts::of(events), ctx, model, grid)
}

/// Stop once the largest mass reaches `max_mass` or `k_max` bits were consumed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub max_mass: f64,
    pub k_max: u64,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            max_mass: 0.99,
            k_max: 100_000,
        }
    }
}

/// Sequential detector for one channel of one link.
#[derive(Debug, Clone)]
pub struct JammingDetector {
    pub channel: usize,
    pub ctx: ChannelContext,
    posterior: Posterior,
    counts: BitCounts,
}

impl JammingDetector {
    pub fn new(channel: usize, ctx: ChannelContext, grid: &InterferenceGrid) -> Self {
        Self {
            channel,
            ctx,
            posterior: Posterior::uniform(grid),
            counts: BitCounts::default(),
        }
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn counts(&self) -> BitCounts {
        self.counts
    }

    pub fn is_done(&self, conv: &Convergence) -> bool {
        self.posterior.max_mass() >= conv.max_mass || self.posterior.events >= conv.k_max
    }

    /// Consume at most the events still allowed by `k_max`.
    pub fn observe(
        &mut self,
        counts: BitCounts,
        model: &BerModel,
        grid: &InterferenceGrid,
        conv: &Convergence,
    ) -> Result<()> {
        let room = conv.k_max.saturating_sub(self.posterior.events);
        let counts = if counts.total() > room {
            // Keep the batch's error ratio when truncating.
            let incorrect = (counts.incorrect as u128 * room as u128 / counts.total() as u128) as u64;
            BitCounts {
                correct: room - incorrect,
                incorrect,
            }
        } else {
            counts
        };
        self.posterior = posterior_update_counts(&self.posterior, counts, &self.ctx, model, grid)?;
        self.counts.add(counts);
        Ok(())
    }
}

/// Per-channel power, gain and noise of the monitored link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkContext {
    pub power_w: Vec<f64>,
    pub gains: Vec<f64>,
    pub noise_w: f64,
}

impl LinkContext {
    /// Channels the transmitter actually uses.
    pub fn monitored(&self) -> Vec<usize> {
        (0..self.power_w.len()).filter(|&f| self.power_w[f] != 0.0).collect()
    }

    pub fn channel(&self, f: usize) -> ChannelContext {
        ChannelContext {
            power_w: self.power_w[f],
            gain: self.gains[f],
            noise_w: self.noise_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPosterior {
    pub channel: usize,
    pub posterior: Posterior,
    pub counts: BitCounts,
    pub converged: bool,
}

/// Feed event batches (one per transmission) to a detector per monitored
/// channel until every channel has converged or hit `k_max`.
///
/// Events on channels the link does not use are ignored.
pub fn run_detector<I>(
    link: &LinkContext,
    batches: I,
    grid: &InterferenceGrid,
    model: &BerModel,
    conv: &Convergence,
) -> Result<Vec<ChannelPosterior>>
where
    I: IntoIterator<Item = Vec<BitEvent>>,
{
    let mut detectors: Vec<JammingDetector> = link
        .monitored()
        .into_iter()
        .map(|f| JammingDetector::new(f, link.channel(f), grid))
        .collect();
    let nf = link.power_w.len();
    for batch in batches {
        if detectors.iter().all(|d| d.is_done(conv)) {
            break;
        }
        let mut per_channel = vec![BitCounts::default(); nf];
        for e in &batch {
            if e.channel < nf {
                let c = &mut per_channel[e.channel];
                if e.correct {
                    c.correct += 1;
                } else {
                    c.incorrect += 1;
                }
            }
        }
        for d in detectors.iter_mut().filter(|d| !d.is_done(conv)) {
            d.observe(per_channel[d.channel], model, grid, conv)?;
        }
    }
    Ok(detectors
        .into_iter()
        .map(|d| ChannelPosterior {
            channel: d.channel,
            converged: d.posterior.max_mass() >= conv.max_mass,
            posterior: d.posterior,
            counts: d.counts,
        })
        .collect())
}

/// Decision rule applied to a link's detector output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ClassifierConfig {
    /// Flag a channel when `P{lower <= I <= upper} >= p_th`.
    InterferenceRange {
        lower_w: f64,
        upper_w: f64,
        p_th: f64,
        min_channels_flagged: usize,
    },
    /// Flag the link when its empirical BER reaches `threshold`.
    BerThreshold { threshold: f64 },
    /// Flag a channel when `P{I/η > 10^(inr_th_db/10)} > p_th`.
    InrThreshold {
        inr_th_db: f64,
        p_th: f64,
        min_channels_flagged: usize,
    },
}

impl ClassifierConfig {
    pub fn interference_range(lower_w: f64, p_th: f64) -> Self {
        ClassifierConfig::InterferenceRange {
            lower_w,
            upper_w: f64::INFINITY,
            p_th,
            min_channels_flagged: 1,
        }
    }

    pub fn inr_default() -> Self {
        ClassifierConfig::InrThreshold {
            inr_th_db: 0.0,
            p_th: 0.9,
            min_channels_flagged: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ClassifierConfig::InterferenceRange {
                lower_w,
                upper_w,
                p_th,
                ..
            } => {
                if lower_w.is_nan() || upper_w.is_nan() || lower_w > upper_w {
                    return Err(Error::field("classifier.lower_w", "must not exceed upper_w"));
                }
                check_probability("classifier.p_th", p_th)
            }
            ClassifierConfig::BerThreshold { threshold } => {
                if !(0.0..=1.0).contains(&threshold) {
                    return Err(Error::field("classifier.threshold", "must lie in [0, 1]"));
                }
                Ok(())
            }
            ClassifierConfig::InrThreshold { inr_th_db, p_th, .. } => {
                if inr_th_db.is_nan() {
                    return Err(Error::field("classifier.inr_th_db", "must be a number"));
                }
                check_probability("classifier.p_th", p_th)
            }
        }
    }
}

fn check_probability(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::field(field, "must lie in [0, 1]"));
    }
    Ok(())
}

/// Detector output for one link, as seen by the classifier.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a> {
    pub posteriors: &'a [ChannelPosterior],
    pub grid: &'a InterferenceGrid,
    pub noise_w: f64,
}

impl Evidence<'_> {
    /// Empirical BER pooled over the monitored channels.
    pub fn empirical_ber(&self) -> f64 {
        let mut total = BitCounts::default();
        for p in self.posteriors {
            total.add(p.counts);
        }
        total.ber()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Attacked,
    NotAttacked,
}

pub fn classify(evidence: &Evidence, cfg: &ClassifierConfig) -> Verdict {
    let flagged = match *cfg {
        ClassifierConfig::InterferenceRange {
            lower_w,
            upper_w,
            p_th,
            min_channels_flagged,
        } => {
            let n = evidence
                .posteriors
                .iter()
                .filter(|p| p.posterior.mass_between(evidence.grid, lower_w, upper_w) >= p_th)
                .count();
            n >= min_channels_flagged.max(1)
        }
        ClassifierConfig::BerThreshold { threshold } => evidence.empirical_ber() >= threshold,
        ClassifierConfig::InrThreshold {
            inr_th_db,
            p_th,
            min_channels_flagged,
        } => {
            let cut = evidence.noise_w * 10f64.powf(inr_th_db / 10.0);
            let n = evidence
                .posteriors
                .iter()
                .filter(|p| {
                    let above: f64 = evidence
                        .grid
                        .values()
                        .iter()
                        .zip(&p.posterior.mass)
                        .filter(|(v, _)| **v > cut)
                        .map(|(_, m)| m)
                        .sum();
                    above > p_th
                })
                .count();
            n >= min_channels_flagged.max(1)
        }
    };
    if flagged {
        Verdict::Attacked
    } else {
        Verdict::NotAttacked
    }
}
