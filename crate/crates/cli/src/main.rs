use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xlayer::detection::{
    classify, fit_ber_curve, read_events_jsonl, samples_from_events, ClassifierConfig, Evidence, Verdict,
};
use xlayer::harness::{
    attack_gains_on, ber_table, detect_link, generate_scenario, quiet_observation, roc_sweep, run_on,
    scenario_label, tradeoff_study, victim_observation_on, write_roc_csv, ChannelReport, DetectionReport,
    ExperimentConfig, OutputDir, Summary,
};
use xlayer::mitigation::write_tradeoff_csv;

#[derive(Debug, Parser)]
#[command(name = "xlayer", version, about = "Cross-layer jamming attack, detection and mitigation simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; unset fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Scenario seed. Sweeps run on this seed alone.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if absent.
    #[arg(long, global = true, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    /// Jammer budget in mW. Sweeps use this budget alone.
    #[arg(long, global = true, value_name = "MW")]
    jammer_budget: Option<f64>,
    /// Strategy-updating periods per run.
    #[arg(long, global = true)]
    periods: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the effective config and the scenario for the seed.
    Generate,
    /// Play the attack/defense iteration on one scenario.
    Simulate,
    /// Run the Bayesian detector on the victim link of one scenario.
    Detect,
    /// ROC sweep of the interference-range and BER-threshold detectors.
    Roc,
    /// Mitigation strategy choice over all jammed traces.
    Tradeoff,
    /// Victim BER per budget.
    BerTable,
    /// Fit an exponential BER curve to a recorded bit trace.
    FitBer {
        /// JSON-lines file of bit events with SINR.
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<xlayer::Error> for Failure {
    fn from(e: xlayer::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn config(common: &Common) -> Outcome<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("config: {e}")))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(b) = common.jammer_budget {
        cfg.jammer_budgets_mw = vec![b];
        cfg.ber_table_budgets_mw = vec![0.0, b];
    }
    if let Some(p) = common.periods {
        cfg.periods = p;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

/// Seed and budget for single-scenario commands.
fn single(cfg: &ExperimentConfig) -> (u64, f64) {
    (cfg.seeds[0], cfg.jammer_budgets_mw[0])
}

fn generate(cfg: &ExperimentConfig, out: &OutputDir) -> Outcome<Summary> {
    let (seed, _) = single(cfg);
    let scenario = generate_scenario(cfg, seed)?;
    out.write_json("config.json", cfg)?;
    out.write_json(&format!("scenario_s{seed}.json"), &scenario)?;
    Ok(Summary::default())
}

fn simulate(cfg: &ExperimentConfig, out: &OutputDir) -> Outcome<Summary> {
    let (seed, budget) = single(cfg);
    let scenario = generate_scenario(cfg, seed)?;
    let run = run_on(cfg, &scenario, budget)?;
    let label = scenario_label(seed, budget);
    out.write_json(&format!("scenario_{label}.json"), &run.scenario)?;
    let last = run.run.periods.last().expect("at least one period");
    out.write(&format!("traffic_{label}.csv"), |w| last.state.routing.traffic.write_csv(w))?;
    out.write("history.jsonl", |w| run.run.write_history_jsonl(w))?;
    Ok(Summary {
        attack_gains: Some(attack_gains_on(cfg, std::slice::from_ref(&scenario), budget)?),
        ..Default::default()
    })
}

fn detect(cfg: &ExperimentConfig, out: &OutputDir) -> Outcome<Summary> {
    let (seed, budget) = single(cfg);
    let obs = if budget > 0.0 {
        let scenario = generate_scenario(cfg, seed)?;
        victim_observation_on(cfg, &scenario, budget)?
            .ok_or_else(|| Failure::Runtime(format!("seed {seed}: the jammer never reached a victim link")))?
    } else {
        quiet_observation(cfg, seed)?
    };
    let grid = cfg.detection.grid()?;
    let posteriors = detect_link(cfg, &obs, seed, 0)?;
    let label = scenario_label(seed, budget);
    for p in &posteriors {
        out.write(&format!("posterior_{label}_{}.csv", p.channel), |w| p.posterior.write_csv(&grid, w))?;
    }
    let evidence = Evidence {
        posteriors: &posteriors,
        grid: &grid,
        noise_w: obs.noise_w,
    };
    // Anything at or above the first nonzero grid point counts as interference.
    let rule = ClassifierConfig::InterferenceRange {
        lower_w: cfg.detection.grid.min_w + cfg.detection.grid.step_w,
        upper_w: f64::INFINITY,
        p_th: cfg.detection.p_th,
        min_channels_flagged: cfg.detection.min_channels_flagged,
    };
    let channels = posteriors
        .iter()
        .map(|p| ChannelReport {
            channel: p.channel,
            mode_w: grid.values()[p.posterior.mode()],
            max_mass: p.posterior.max_mass(),
            events: p.counts.total(),
            converged: p.converged,
        })
        .collect();
    Ok(Summary {
        detection: Some(DetectionReport {
            scenario: label,
            link: (obs.tx, obs.rx),
            attacked: classify(&evidence, &rule) == Verdict::Attacked,
            empirical_ber: evidence.empirical_ber(),
            channels,
        }),
        ..Default::default()
    })
}

fn roc(cfg: &ExperimentConfig, out: &OutputDir) -> Outcome<Summary> {
    let report = roc_sweep(cfg)?;
    out.write("roc_proposed.csv", |w| write_roc_csv(&report.proposed, w))?;
    out.write("roc_ber.csv", |w| write_roc_csv(&report.ber_baseline, w))?;
    Ok(Summary {
        auc_proposed: Some(report.proposed.auc),
        auc_ber: Some(report.ber_baseline.auc),
        roc_jammed_samples: Some(report.jammed_samples),
        roc_unjammed_samples: Some(report.unjammed_samples),
        ..Default::default()
    })
}

fn tradeoff(cfg: &ExperimentConfig, out: &OutputDir) -> Outcome<Summary> {
    let study = tradeoff_study(cfg)?;
    out.write("tradeoff.csv", |w| write_tradeoff_csv(&study.rows, w))?;
    Ok(Summary {
        tradeoff: Some(study.summaries),
        ..Default::default()
    })
}

fn fit_ber(trace: &Path, out: &OutputDir) -> Outcome<Summary> {
    let file = File::open(trace).map_err(|e| Failure::Runtime(format!("cannot open {}: {e}", trace.display())))?;
    let events = read_events_jsonl(BufReader::new(file))?;
    let fit = fit_ber_curve(&samples_from_events(&events)?)?;
    out.write_json("ber_fit.json", &fit)?;
    println!("{}", serde_json::to_string(&fit).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(Summary {
        ber_fit: Some(fit),
        ..Default::default()
    })
}

fn run(cli: Cli) -> Outcome<()> {
    let cfg = config(&cli.common)?;
    let out = OutputDir::create(&cli.common.out)?;
    let summary = match &cli.command {
        Command::Generate => generate(&cfg, &out)?,
        Command::Simulate => simulate(&cfg, &out)?,
        Command::Detect => detect(&cfg, &out)?,
        Command::Roc => roc(&cfg, &out)?,
        Command::Tradeoff => tradeoff(&cfg, &out)?,
        Command::BerTable => Summary {
            ber_table: Some(ber_table(&cfg)?),
            ..Default::default()
        },
        Command::FitBer { trace } => fit_ber(trace, &out)?,
    };
    out.write_json("summary.json", &summary)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
