//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xlayer::defender::waterfill;
use xlayer::detection::{
    posterior_update, BerModel, BitEvent, ChannelContext, ChannelPosterior, InterferenceGrid, Posterior,
};
use xlayer::harness::*;
use xlayer::mitigation::{generate_code, gf256, write_tradeoff_csv};
use xlayer::netmodel::{link_throughput, ChannelModel, PowerAllocation, Scenario};

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn cfg() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn posterior_line(grid: &InterferenceGrid, p: &[ChannelPosterior]) -> String {
    p.iter()
        .map(|c| format!("f{}:{:.1e}@{:.3}", c.channel, grid.values()[c.posterior.mode()], c.posterior.max_mass()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Victim links of the first ten seeds with the jammer silent. The runtime
/// includes generating those scenarios.
fn no_jamming(r: &mut Report) -> Vec<Scenario> {
    let cfg = ExperimentConfig {
        seeds: (1..=10).collect(),
        ..cfg()
    };
    let grid = cfg.detection.grid().unwrap();
    let start = Instant::now();
    let scenarios = scenarios(&cfg).unwrap();
    let mut bad = Vec::new();
    let mut channels = 0;
    for s in &scenarios {
        let Some(obs) = victim_observation_on(&cfg, s, 0.0).unwrap() else {
            bad.push(format!("seed {} has no victim link", s.rng_seed));
            continue;
        };
        let post = detect_link(&cfg, &obs, s.rng_seed, 0).unwrap();
        channels += post.len();
        let off: Vec<_> = post
            .iter()
            .filter(|c| c.posterior.mode() != 0 || c.posterior.max_mass() <= 0.95)
            .cloned()
            .collect();
        if post.is_empty() || !off.is_empty() {
            let sinr = obs.sinr();
            let gammas: Vec<String> = off.iter().map(|c| format!("{:.1}", sinr[c.channel])).collect();
            bad.push(format!(
                "seed {} {}/{} [{}] SINR [{}]",
                s.rng_seed,
                off.len(),
                post.len(),
                posterior_line(&grid, &off),
                gammas.join(" ")
            ));
        }
    }
    let elapsed = start.elapsed();
    r.line(
        "posterior accuracy, no jamming",
        bad.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "{channels} channels over 10 seeds, {} seeds off; runtime {} (limit 30s) {}",
            bad.len(),
            secs(elapsed),
            bad.join("; ")
        ),
    );
    scenarios
}

/// Victim links of the shared scenarios with the interference pinned to the
/// mean value at 40.2 m.
fn pinned(r: &mut Report, scenarios: &[Scenario], budget_mw: f64, name: &str, ok: impl Fn(f64, f64) -> bool) {
    let cfg = cfg();
    let grid = cfg.detection.grid().unwrap();
    let i = expected_interference(&cfg.channel, budget_mw, 40.2).unwrap();
    let mut checked = 0;
    let mut bad = Vec::new();
    for s in scenarios.iter().take(5) {
        let Some(quiet) = victim_observation_on(&cfg, s, 0.0).unwrap() else {
            continue;
        };
        let obs = with_interference(&quiet, i).unwrap();
        let post = detect_link(&cfg, &obs, s.rng_seed, 100 + budget_mw as u64).unwrap();
        for c in &post {
            checked += 1;
            let mode = grid.values()[c.posterior.mode()];
            if !ok(mode, i) {
                bad.push(format!("seed {} f{} mode {mode:.2e}", s.rng_seed, c.channel));
            }
        }
    }
    r.line(
        name,
        checked > 0 && bad.is_empty(),
        format!(
            "true I = {i:.3e} W, {checked} channels, {} off: {}",
            bad.len(),
            bad.iter().take(8).cloned().collect::<Vec<_>>().join(", ")
        ),
    );
}

fn roc(r: &mut Report, scenarios: &[Scenario], generation: Duration) {
    let cfg = cfg();
    let start = Instant::now();
    let samples = detection_samples_on(&cfg, scenarios).unwrap();
    let report = roc_from_samples(&cfg, &samples).unwrap();
    let elapsed = start.elapsed() + generation;
    let (a, b) = (report.proposed.auc, report.ber_baseline.auc);
    r.line(
        "ROC superiority",
        scenarios.len() >= 20 && a >= 0.9 && a > b && elapsed < Duration::from_secs(600),
        format!(
            "AUC proposed {a:.4}, BER threshold {b:.4}; {} seeds, {} jammed / {} unjammed samples; runtime {} (limit 600s)",
            scenarios.len(),
            report.jammed_samples,
            report.unjammed_samples,
            secs(elapsed)
        ),
    );
}

fn ber_table(r: &mut Report, scenarios: &[Scenario]) {
    let cfg = cfg();
    let rows = ber_table_on(&cfg, scenarios).unwrap();
    let at = |b: f64| rows.iter().find(|x| x.budget_mw == b).map(|x| x.empirical_ber).unwrap();
    let (b0, b10, b100) = (at(0.0), at(10.0), at(100.0));
    r.line(
        "BER table magnitudes",
        b0 < b10 && b10 < 0.15 && b100 < 0.15,
        format!("BER 0 mW {:.2}%, 10 mW {:.2}%, 100 mW {:.2}%", 100.0 * b0, 100.0 * b10, 100.0 * b100),
    );
}

fn attack(r: &mut Report, scenarios: &[Scenario]) {
    let cfg = cfg();
    let gains = attack_gains_on(&cfg, scenarios, 10.0).unwrap();
    let wins = gains.iter().filter(|g| g.jammed_bps > g.baseline_bps).count();
    let share = wins as f64 / gains.len() as f64;
    let losers: Vec<String> = gains
        .iter()
        .filter(|g| g.jammed_bps <= g.baseline_bps)
        .map(|g| format!("seed {} {:.0}<={:.0}", g.seed, g.jammed_bps, g.baseline_bps))
        .collect();
    r.line(
        "attack efficacy",
        share >= 0.8,
        format!("{wins}/{} seeds gain with 10 mW ({:.0}%) {}", gains.len(), 100.0 * share, losers.join(", ")),
    );
}

fn mitigation(r: &mut Report, scenarios: &[Scenario]) {
    let cfg = cfg();
    let traces = jammed_traces_on(&cfg, scenarios).unwrap();
    let study = tradeoff_from_traces(&cfg, &traces).unwrap();
    let find = |a: f64, b: f64| study.summaries.iter().find(|s| s.alpha == a && s.beta == b).unwrap();
    let (sec, perf, mid) = (find(0.0, 1.0), find(1.0, 0.0), find(0.5, 0.5));
    r.line(
        "mitigation selection",
        sec.chose_snc == sec.traces && perf.chose_min_delay == perf.traces && 2 * mid.chose_snc > mid.traces,
        format!(
            "{} traces; (0,1) SNC {}; (1,0) min-delay {}; (0.5,0.5) SNC {}",
            sec.traces, sec.chose_snc, perf.chose_min_delay, mid.chose_snc
        ),
    );
}

fn oracles(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut notes = Vec::new();

    // Log-domain posterior against the plain product of per-event likelihoods.
    let grid = InterferenceGrid::uniform(0.0, 1e-7, 1e-9).unwrap();
    let model = BerModel::AnalyticBpsk;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ctx = ChannelContext {
            power_w: rng.random_range(0.01..0.2),
            gain: rng.random_range(1e-7..1e-6),
            noise_w: 1e-8,
        };
        let k = rng.random_range(1..=1000);
        let truth = rng.random_range(0.0..1e-7);
        let p = model.ber(ctx.sinr(truth));
        let events: Vec<BitEvent> = (0..k)
            .map(|_| BitEvent {
                period: 0,
                channel: 0,
                correct: rng.random::<f64>() >= p,
                sinr: None,
            })
            .collect();
        let fast = posterior_update(&Posterior::uniform(&grid), &events, &ctx, &model, &grid).unwrap();
        let mut direct = vec![1.0 / grid.len() as f64; grid.len()];
        for e in &events {
            for (m, &i) in direct.iter_mut().zip(grid.values()) {
                let q = model.ber(ctx.sinr(i));
                *m *= if e.correct { 1.0 - q } else { q };
            }
            let z: f64 = direct.iter().sum();
            direct.iter_mut().for_each(|m| *m /= z);
        }
        for (a, b) in fast.mass.iter().zip(&direct) {
            worst = worst.max((a - b).abs());
        }
    }
    let posterior_ok = worst <= 1e-9;
    notes.push(format!("posterior max diff {worst:.1e}"));

    // Waterfilling against random feasible allocations.
    let model = ChannelModel::default();
    let nf = model.num_channels;
    let mut beaten = 0;
    for _ in 0..50 {
        let h: Vec<f64> = (0..nf).map(|_| rng.random_range(1e-9..1e-6)).collect();
        let interference: Vec<f64> = (0..nf).map(|_| rng.random_range(0.0..5e-8)).collect();
        let g: Vec<f64> = h.iter().zip(&interference).map(|(h, i)| h / (i + model.noise_w())).collect();
        let best = waterfill(1.0, &g).unwrap();
        let c_best = link_throughput(&best, &h, &interference, &model);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..nf).map(|_| rng.random::<f64>()).collect();
            let scale = rng.random::<f64>() / raw.iter().sum::<f64>();
            let alloc = PowerAllocation {
                per_channel: raw.iter().map(|x| x * scale).collect(),
                budget: 1.0,
            };
            if link_throughput(&alloc, &h, &interference, &model) > c_best * (1.0 + 1e-12) {
                beaten += 1;
            }
        }
    }
    notes.push(format!("waterfill beaten {beaten}/50000"));

    // GF(256) coding roundtrip and code security.
    let mut roundtrip_bad = 0;
    for _ in 0..1000 {
        let (n_l, n_m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let code = generate_code(n_l, n_m, &mut rng).unwrap();
        let x: Vec<u8> = (0..code.dimension()).map(|_| rng.random()).collect();
        let y = code.encode(&x).unwrap();
        let all: Vec<Option<u8>> = y.via_l.iter().chain(&y.via_m).map(|v| Some(*v)).collect();
        if code.decode(&all).unwrap() != x {
            roundtrip_bad += 1;
        }
    }
    notes.push(format!("roundtrip failures {roundtrip_bad}/1000"));
    let mut rank_bad = 0;
    for _ in 0..100 {
        let (n_l, n_m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let code = generate_code(n_l, n_m, &mut rng).unwrap();
        let r = code.dimension();
        for mask in 1u32..(1 << r) - 1 {
            let rows: Vec<Vec<u8>> = (0..r).filter(|k| mask >> k & 1 == 1).map(|k| code.matrix[k].clone()).collect();
            if gf256::rank(&rows) != rows.len() {
                rank_bad += 1;
            }
        }
        if gf256::rank(code.rows_l()) != n_l || gf256::rank(code.rows_m()) != n_m || !code.is_secure() {
            rank_bad += 1;
        }
    }
    notes.push(format!("rank violations {rank_bad}"));
    r.line(
        "numerical oracles",
        posterior_ok && beaten == 0 && roundtrip_bad == 0 && rank_bad == 0,
        notes.join("; "),
    );
}

/// Every artifact the experiments emit, serialized, for a fresh run.
fn artifacts(cfg: &ExperimentConfig) -> Vec<u8> {
    let mut out = Vec::new();
    let scenarios = scenarios(cfg).unwrap();
    let grid = cfg.detection.grid().unwrap();
    for s in &scenarios {
        out.extend(serde_json::to_vec(s).unwrap());
        let run = run_on(cfg, s, 10.0).unwrap();
        run.run.periods.last().unwrap().state.routing.traffic.write_csv(&mut out).unwrap();
        run.run.write_history_jsonl(&mut out).unwrap();
        if let Some(obs) = run.run.first_jammed_link() {
            for c in detect_link(cfg, obs, s.rng_seed, 0).unwrap() {
                c.posterior.write_csv(&grid, &mut out).unwrap();
            }
        }
    }
    let samples = detection_samples_on(cfg, &scenarios).unwrap();
    let roc = roc_from_samples(cfg, &samples).unwrap();
    write_roc_csv(&roc.proposed, &mut out).unwrap();
    write_roc_csv(&roc.ber_baseline, &mut out).unwrap();
    let summary = Summary {
        ber_table: Some(ber_table_on(cfg, &scenarios).unwrap()),
        attack_gains: Some(attack_gains_on(cfg, &scenarios, 10.0).unwrap()),
        ..Default::default()
    };
    out.extend(serde_json::to_vec(&summary).unwrap());
    if let Ok(study) = tradeoff_from_traces(cfg, &jammed_traces_on(cfg, &scenarios).unwrap()) {
        write_tradeoff_csv(&study.rows, &mut out).unwrap();
    }
    out
}

fn determinism(r: &mut Report) {
    let cfg = ExperimentConfig {
        seeds: (1..=6).collect(),
        jammer_budgets_mw: vec![10.0, 100.0],
        ..cfg()
    };
    let (a, b) = (artifacts(&cfg), artifacts(&cfg));
    r.line(
        "determinism",
        a == b,
        format!("{} bytes of CSV/JSON, identical: {}", a.len(), a == b),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failed: 0 };
    let started = Instant::now();
    let mut shared = no_jamming(&mut r);
    let rest = ExperimentConfig {
        seeds: cfg().seeds.into_iter().filter(|s| !shared.iter().any(|x| x.rng_seed == *s)).collect(),
        ..cfg()
    };
    shared.extend(scenarios(&rest).unwrap());
    shared.sort_by_key(|s| s.rng_seed);
    let generation = started.elapsed();
    println!("generated {} scenarios in {}", shared.len(), secs(generation));

    pinned(&mut r, &shared, 10.0, "posterior accuracy, 10 mW", |mode, i| (mode - i).abs() <= 2e-9 + 1e-15);
    pinned(&mut r, &shared, 100.0, "posterior saturation, 100 mW", |mode, _| mode >= 1e-7 * (1.0 - 1e-12));
    roc(&mut r, &shared, generation);
    ber_table(&mut r, &shared);
    attack(&mut r, &shared);
    mitigation(&mut r, &shared);
    oracles(&mut r);
    determinism(&mut r);

    println!("{} criteria failed", r.failed);
    if r.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
