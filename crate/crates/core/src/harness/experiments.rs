use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_scenario, generate_topology, stream_rng, synthesize_bits, ExperimentConfig};
use crate::attacker::{run_iteration, IterationRun, LinkObservation, NetworkState};
use crate::defender::LinkEnv;
use crate::detection::{
    classify, run_detector, BitCounts, ChannelPosterior, ClassifierConfig, Evidence, LinkContext,
    Verdict,
};
use crate::error::{Error, Result};
use crate::mitigation::{choose_strategy, Decision, MitigationParams, StrategyKind, TradeoffRow};
use crate::netmodel::{path_gain, ChannelModel, LinkGains, NodeId, Scenario};

const TAG_BITS: u64 = 1_000;

/// File-name friendly label for a `(seed, budget)` run.
pub fn scenario_label(seed: u64, budget_mw: f64) -> String {
    format!("s{seed}_{budget_mw}mW")
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub seed: u64,
    pub budget_mw: f64,
    pub scenario: Scenario,
    pub run: IterationRun,
}

/// Generate the scenario for `seed` and play the attack/defense iteration.
/// A zero budget disables the jammer.
pub fn run_scenario(cfg: &ExperimentConfig, seed: u64, budget_mw: f64) -> Result<ScenarioRun> {
    run_on(cfg, &generate_scenario(cfg, seed)?, budget_mw)
}

/// [`run_scenario`] on an already generated scenario.
pub fn run_on(cfg: &ExperimentConfig, scenario: &Scenario, budget_mw: f64) -> Result<ScenarioRun> {
    let mut scenario = scenario.clone();
    scenario.jammer.power_budget_w = budget_mw * 1e-3;
    scenario.jammer.enabled = budget_mw > 0.0;
    let run = run_iteration(&scenario, cfg.periods)?;
    Ok(ScenarioRun {
        seed: scenario.rng_seed,
        budget_mw,
        scenario,
        run,
    })
}

/// The scenario of every configured seed, in seed order.
pub fn scenarios(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&seed| generate_scenario(cfg, seed)).collect()
}

fn positive_budgets(cfg: &ExperimentConfig) -> impl Iterator<Item = (usize, f64)> + '_ {
    cfg.jammer_budgets_mw
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, b)| *b > 0.0)
}

fn reference_budget_mw(cfg: &ExperimentConfig) -> f64 {
    cfg.jammer_budgets_mw
        .iter()
        .copied()
        .find(|b| *b > 0.0)
        .unwrap_or(10.0)
}

/// Victim link as the detector sees it. A zero budget yields the same link with the jammer silent.
pub fn victim_observation(cfg: &ExperimentConfig, seed: u64, budget_mw: f64) -> Result<Option<LinkObservation>> {
    victim_observation_on(cfg, &generate_scenario(cfg, seed)?, budget_mw)
}

/// [`victim_observation`] on an already generated scenario.
pub fn victim_observation_on(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    budget_mw: f64,
) -> Result<Option<LinkObservation>> {
    let jammed_budget = if budget_mw > 0.0 {
        budget_mw
    } else {
        reference_budget_mw(cfg)
    };
    let run = run_on(cfg, scenario, jammed_budget)?;
    match run.run.first_jammed_link() {
        Some(obs) if budget_mw > 0.0 => Ok(Some(obs.clone())),
        Some(obs) => Ok(Some(obs.quiet()?)),
        None => Ok(None),
    }
}

/// Busiest link of the first routed period on a jammer-free topology.
pub fn quiet_observation(cfg: &ExperimentConfig, seed: u64) -> Result<LinkObservation> {
    let scenario = generate_topology(cfg, seed)?;
    for period in 0..cfg.periods {
        let Ok(state) = NetworkState::quiet(&scenario, LinkGains::realize(&scenario, period)?, period) else {
            continue;
        };
        let busiest = state
            .routing
            .traffic
            .links
            .iter()
            .fold(None, |best: Option<((NodeId, NodeId), f64)>, (&k, &r)| match best {
                Some((_, b)) if b >= r => best,
                _ => Some((k, r)),
            });
        let Some(((tx, rx), _)) = busiest else {
            continue;
        };
        return LinkObservation::new(
            period,
            tx,
            rx,
            scenario.node_power_budget_w,
            state.gains.link(tx, rx).to_vec(),
            state.interference.at(rx).to_vec(),
            scenario.channel.noise_w(),
            state.routing.arrivals_bps[tx],
        );
    }
    Err(Error::SinkUnreachable(scenario.sink))
}

/// Mean interference per channel from a jammer `distance_m` away spreading
/// `budget_mw` evenly over the channels, `(P_j/|F|)·E[fading]·d^-3`.
pub fn expected_interference(channel: &ChannelModel, budget_mw: f64, distance_m: f64) -> Result<f64> {
    let h = path_gain(distance_m, channel.mean_fading(), channel)?;
    Ok(budget_mw * 1e-3 / channel.num_channels as f64 * h)
}

/// `obs` with interference `i` on every channel.
pub fn with_interference(obs: &LinkObservation, i: f64) -> Result<LinkObservation> {
    LinkObservation::new(
        obs.period,
        obs.tx,
        obs.rx,
        obs.allocation.budget,
        obs.gains.clone(),
        vec![i; obs.gains.len()],
        obs.noise_w,
        obs.arrival_bps,
    )
}

/// Victim link with the jammer's fading fixed at its mean, so the received
/// interference per channel is `(P_j/|F|)·E[fading]·d^-3`.
pub fn expected_jamming_observation(
    cfg: &ExperimentConfig,
    seed: u64,
    budget_mw: f64,
) -> Result<Option<(LinkObservation, f64)>> {
    let scenario = generate_scenario(cfg, seed)?;
    let Some(quiet) = victim_observation_on(cfg, &scenario, 0.0)? else {
        return Ok(None);
    };
    let i = expected_interference(&scenario.channel, budget_mw, scenario.jammer_distance(quiet.rx))?;
    Ok(Some((with_interference(&quiet, i)?, i)))
}

/// Run the Bayesian detector on synthetic bits drawn from the observation's true SINR.
pub fn detect_link(cfg: &ExperimentConfig, obs: &LinkObservation, rng_seed: u64, tag: u64) -> Result<Vec<ChannelPosterior>> {
    let grid = cfg.detection.grid()?;
    let link = LinkContext {
        power_w: obs.allocation.per_channel.clone(),
        gains: obs.gains.clone(),
        noise_w: obs.noise_w,
    };
    let sinr = obs.sinr();
    let model = cfg.detection.ber_model;
    let mut rng = stream_rng(rng_seed, TAG_BITS + tag);
    let k = cfg.bits_per_period;
    let batches = cfg.detection.convergence.k_max.div_ceil(k);
    let mut period = 0;
    let stream = std::iter::from_fn(move || {
        let b = synthesize_bits(&sinr, k, &model, period, &mut rng);
        period += 1;
        Some(b)
    })
    .take(batches as usize);
    run_detector(&link, stream, &grid, &model, &cfg.detection.convergence)
}

/// Detector output for one ROC sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionSample {
    pub seed: u64,
    pub budget_mw: f64,
    pub jammed: bool,
    pub link: (NodeId, NodeId),
    pub posteriors: Vec<ChannelPosterior>,
    pub empirical_ber: f64,
}

/// One jammed and one unjammed sample per `(seed, budget)` whose attack launched.
pub fn detection_samples(cfg: &ExperimentConfig) -> Result<Vec<DetectionSample>> {
    detection_samples_on(cfg, &scenarios(cfg)?)
}

/// [`detection_samples`] over already generated scenarios.
pub fn detection_samples_on(cfg: &ExperimentConfig, scenarios: &[Scenario]) -> Result<Vec<DetectionSample>> {
    cfg.validate()?;
    let grid = cfg.detection.grid()?;
    let jobs: Vec<(&Scenario, usize, f64)> = scenarios
        .iter()
        .flat_map(|s| positive_budgets(cfg).map(move |(k, b)| (s, k, b)))
        .collect();
    let per_job: Vec<Result<Vec<DetectionSample>>> = jobs
        .par_iter()
        .map(|&(scenario, k, budget)| {
            let seed = scenario.rng_seed;
            let run = run_on(cfg, scenario, budget)?;
            let Some(jammed) = run.run.first_jammed_link() else {
                return Ok(Vec::new());
            };
            let quiet = jammed.quiet()?;
            let mut out = Vec::with_capacity(2);
            for (obs, is_jammed) in [(jammed, true), (&quiet, false)] {
                let posteriors = detect_link(cfg, obs, seed, 2 * k as u64 + is_jammed as u64)?;
                let ev = Evidence {
                    posteriors: &posteriors,
                    grid: &grid,
                    noise_w: obs.noise_w,
                };
                let empirical_ber = ev.empirical_ber();
                out.push(DetectionSample {
                    seed,
                    budget_mw: budget,
                    jammed: is_jammed,
                    link: (obs.tx, obs.rx),
                    posteriors,
                    empirical_ber,
                });
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::new();
    for r in per_job {
        samples.extend(r?);
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by ascending threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Trapezoidal area under the ROC points, anchored at (0,0) and (1,1).
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Sweep thresholds over labelled verdict functions.
pub fn roc_curve<F>(thresholds: &[f64], labels: &[bool], mut flagged: F) -> Result<RocCurve>
where
    F: FnMut(f64, usize) -> bool,
{
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateSweep(format!(
            "need both classes, got {pos} positive and {neg} negative samples"
        )));
    }
    let points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut fp) = (0, 0);
            for (k, &label) in labels.iter().enumerate() {
                if flagged(t, k) {
                    if label {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: t,
                tpr: tp as f64 / pos as f64,
                fpr: fp as f64 / neg as f64,
            }
        })
        .collect();
    let auc = auc(&points);
    Ok(RocCurve { points, auc })
}

fn steps(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * step).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocReport {
    pub proposed: RocCurve,
    pub ber_baseline: RocCurve,
    pub jammed_samples: usize,
    pub unjammed_samples: usize,
}

/// Interference-range and BER-threshold ROC curves over the given samples.
///
/// The proposed sweep runs `I_lwr` over the configured range with `I_upp = ∞`
/// and ends with one threshold above the grid, where nothing is flagged.
pub fn roc_from_samples(cfg: &ExperimentConfig, samples: &[DetectionSample]) -> Result<RocReport> {
    let grid = cfg.detection.grid()?;
    let labels: Vec<bool> = samples.iter().map(|s| s.jammed).collect();
    let jammed = labels.iter().filter(|l| **l).count();
    if jammed < 10 || labels.len() - jammed < 10 {
        return Err(Error::DegenerateSweep(format!(
            "need at least 10 jammed and 10 unjammed samples, got {jammed} and {}",
            labels.len() - jammed
        )));
    }
    let mut lowers: Vec<f64> = steps(cfg.roc.i_lwr_max_mw, cfg.roc.i_lwr_step_mw)
        .into_iter()
        .map(|mw| mw * 1e-3)
        .collect();
    lowers.push(grid.max() + cfg.detection.grid.step_w);
    let noise_w = cfg.channel.noise_w();
    let proposed = roc_curve(&lowers, &labels, |lower, k| {
        let cfg_k = ClassifierConfig::InterferenceRange {
            lower_w: lower,
            upper_w: f64::INFINITY,
            p_th: cfg.detection.p_th,
            min_channels_flagged: cfg.detection.min_channels_flagged,
        };
        let ev = Evidence {
            posteriors: &samples[k].posteriors,
            grid: &grid,
            noise_w,
        };
        classify(&ev, &cfg_k) == Verdict::Attacked
    })?;
    let ber_ths = steps(cfg.roc.ber_th_max, cfg.roc.ber_th_step);
    let ber_baseline = roc_curve(&ber_ths, &labels, |th, k| samples[k].empirical_ber >= th)?;
    Ok(RocReport {
        proposed,
        ber_baseline,
        jammed_samples: jammed,
        unjammed_samples: labels.len() - jammed,
    })
}

pub fn roc_sweep(cfg: &ExperimentConfig) -> Result<RocReport> {
    roc_from_samples(cfg, &detection_samples(cfg)?)
}

/// Delays seen by a jammed node: its jammed next hop `m` and best other neighbor `l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JammedTrace {
    pub seed: u64,
    pub budget_mw: f64,
    pub n: NodeId,
    pub m: NodeId,
    pub l: NodeId,
    pub t_l: f64,
    pub t_m: f64,
    /// Message rate at `n`, packets per second.
    pub lambda: f64,
}

/// Extract the jammed-link trace from the first period the jammer hits its
/// target. `None` when the victim carries no traffic or has no finite alternative.
pub fn jammed_trace(run: &ScenarioRun) -> Option<JammedTrace> {
    let period = run.run.periods.iter().find(|p| p.victim_link.is_some())?;
    let obs = period.victim_link.as_ref()?;
    let (n, m) = (obs.tx, obs.rx);
    let s = &run.scenario;
    let state = &period.state;
    let env = LinkEnv {
        scenario: s,
        gains: &state.gains,
        interference: &state.interference,
    };
    let strategy = state.strategy();
    let arrival = obs.arrival_bps;
    let total = |x: NodeId| {
        env.evaluate_link(n, x, arrival)
            .and_then(|e| e.delay)
            .map_or(f64::INFINITY, |d| d + strategy.delay(x))
    };
    let t_m = total(m);
    let (l, t_l) = s
        .neighbors(n)
        .into_iter()
        .filter(|&x| x != m && strategy.is_connected(x) && !strategy.route(x).contains(&n))
        .map(|x| (x, total(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if !(t_l.is_finite() && t_m.is_finite() && arrival > 0.0) {
        return None;
    }
    Some(JammedTrace {
        seed: run.seed,
        budget_mw: run.budget_mw,
        n,
        m,
        l,
        t_l,
        t_m,
        lambda: arrival / s.channel.packet_size_bits,
    })
}

pub fn jammed_traces(cfg: &ExperimentConfig) -> Result<Vec<JammedTrace>> {
    jammed_traces_on(cfg, &scenarios(cfg)?)
}

/// [`jammed_traces`] over already generated scenarios.
pub fn jammed_traces_on(cfg: &ExperimentConfig, scenarios: &[Scenario]) -> Result<Vec<JammedTrace>> {
    cfg.validate()?;
    let jobs: Vec<(&Scenario, f64)> = scenarios
        .iter()
        .flat_map(|s| positive_budgets(cfg).map(move |(_, b)| (s, b)))
        .collect();
    let runs: Vec<Result<Option<JammedTrace>>> = jobs
        .par_iter()
        .map(|&(s, b)| Ok(jammed_trace(&run_on(cfg, s, b)?)))
        .collect();
    let mut out = Vec::new();
    for r in runs {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSummary {
    pub alpha: f64,
    pub beta: f64,
    pub traces: usize,
    pub chose_l: usize,
    pub chose_m: usize,
    pub chose_snc: usize,
    /// Traces where the chosen strategy has the smallest delay of the three.
    pub chose_min_delay: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffStudy {
    pub traces: Vec<JammedTrace>,
    pub rows: Vec<TradeoffRow>,
    pub summaries: Vec<TradeoffSummary>,
}

pub fn tradeoff_from_traces(cfg: &ExperimentConfig, traces: &[JammedTrace]) -> Result<TradeoffStudy> {
    if traces.is_empty() {
        return Err(Error::NoJammedTraces);
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &(alpha, beta) in &cfg.tradeoff.weights {
        let mut sum = TradeoffSummary {
            alpha,
            beta,
            traces: traces.len(),
            chose_l: 0,
            chose_m: 0,
            chose_snc: 0,
            chose_min_delay: 0,
        };
        for t in traces {
            let params = MitigationParams {
                alpha,
                beta,
                epsilon: cfg.tradeoff.epsilon,
                u_th: None,
                g_th: None,
                lambda: t.lambda,
                snc_search_limit: cfg.tradeoff.snc_search_limit,
            };
            params.validate()?;
            let d: Decision = choose_strategy(t.t_l, t.t_m, &params);
            match d.chosen.kind {
                StrategyKind::RerouteL => sum.chose_l += 1,
                StrategyKind::StayM => sum.chose_m += 1,
                StrategyKind::Snc { .. } => sum.chose_snc += 1,
            }
            let min_delay = d.candidates.iter().map(|c| c.delay).fold(f64::INFINITY, f64::min);
            if d.chosen.delay == min_delay {
                sum.chose_min_delay += 1;
            }
            rows.push(TradeoffRow::from_decision(&params, &d));
        }
        summaries.push(sum);
    }
    Ok(TradeoffStudy {
        traces: traces.to_vec(),
        rows,
        summaries,
    })
}

pub fn tradeoff_study(cfg: &ExperimentConfig) -> Result<TradeoffStudy> {
    tradeoff_from_traces(cfg, &jammed_traces(cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerTableRow {
    pub budget_mw: f64,
    /// Pooled empirical BER of the victim link over all seeds.
    pub empirical_ber: f64,
    /// Mean of `ber(γ_f)` over monitored channels and seeds.
    pub expected_ber: f64,
    pub bits: u64,
    /// Reference magnitude from the original evaluation, percent.
    pub reference_percent: Option<f64>,
}

fn reference_ber_percent(budget_mw: f64) -> Option<f64> {
    match budget_mw {
        b if b == 0.0 => Some(3.84),
        b if b == 10.0 => Some(9.84),
        b if b == 100.0 => Some(9.78),
        _ => None,
    }
}

/// Victim-link BER per jammer budget, `bits_per_period` bits per channel per seed.
pub fn ber_table(cfg: &ExperimentConfig) -> Result<Vec<BerTableRow>> {
    ber_table_on(cfg, &scenarios(cfg)?)
}

/// [`ber_table`] over already generated scenarios.
pub fn ber_table_on(cfg: &ExperimentConfig, scenarios: &[Scenario]) -> Result<Vec<BerTableRow>> {
    cfg.validate()?;
    let model = cfg.detection.ber_model;
    cfg.ber_table_budgets_mw
        .iter()
        .enumerate()
        .map(|(k, &budget)| {
            let per_seed: Vec<Result<Option<(BitCounts, f64, usize)>>> = scenarios
                .par_iter()
                .map(|scenario| {
                    let seed = scenario.rng_seed;
                    let Some(obs) = victim_observation_on(cfg, scenario, budget)? else {
                        return Ok(None);
                    };
                    let mut rng = stream_rng(seed, TAG_BITS + 500 + k as u64);
                    let sinr = obs.sinr();
                    let used: Vec<usize> = (0..sinr.len())
                        .filter(|&f| obs.allocation.per_channel[f] != 0.0)
                        .collect();
                    let used_sinr: Vec<f64> = used.iter().map(|&f| sinr[f]).collect();
                    let bits = synthesize_bits(&used_sinr, cfg.bits_per_period, &model, 0, &mut rng);
                    let expected: f64 = used_sinr.iter().map(|&g| model.ber(g)).sum();
                    Ok(Some((BitCounts::of(&bits), expected, used.len())))
                })
                .collect();
            let mut counts = BitCounts::default();
            let (mut expected, mut channels) = (0.0, 0usize);
            for r in per_seed {
                if let Some((c, e, n)) = r? {
                    counts.add(c);
                    expected += e;
                    channels += n;
                }
            }
            Ok(BerTableRow {
                budget_mw: budget,
                empirical_ber: counts.ber(),
                expected_ber: if channels > 0 { expected / channels as f64 } else { 0.0 },
                bits: counts.total(),
                reference_percent: reference_ber_percent(budget),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackGain {
    pub seed: u64,
    /// Input rate at the compromised node without jamming, bit/s.
    pub baseline_bps: f64,
    pub jammed_bps: f64,
}

/// Time-averaged attack gain with and without the jammer, per seed.
pub fn attack_gains(cfg: &ExperimentConfig, budget_mw: f64) -> Result<Vec<AttackGain>> {
    attack_gains_on(cfg, &scenarios(cfg)?, budget_mw)
}

/// [`attack_gains`] over already generated scenarios.
pub fn attack_gains_on(cfg: &ExperimentConfig, scenarios: &[Scenario], budget_mw: f64) -> Result<Vec<AttackGain>> {
    cfg.validate()?;
    scenarios
        .par_iter()
        .map(|scenario| {
            let base = run_on(cfg, scenario, 0.0)?;
            let jam = run_on(cfg, scenario, budget_mw)?;
            Ok(AttackGain {
                seed: scenario.rng_seed,
                baseline_bps: base.run.outcome.attack_gain,
                jammed_bps: jam.run.outcome.attack_gain,
            })
        })
        .collect()
}
