//! Experiment orchestration: scenario generation, synthetic bit events,
//! ROC sweeps, the mitigation trade-off study and the BER table.

mod experiments;
mod output;

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacker::{jam_allocation, NetworkState};
use crate::defender::{routed_input_rate, LinkEnv};
use crate::detection::{BerModel, BitEvent, Convergence, InterferenceGrid};
use crate::error::{Error, Result};
use crate::netmodel::{
    ChannelModel, InterferenceMap, JammerSpec, LinkGains, Node, Scenario, Source,
};

pub use experiments::*;
pub use output::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub min_w: f64,
    pub max_w: f64,
    pub step_w: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            min_w: 0.0,
            max_w: 1e-7,
            step_w: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub grid: GridConfig,
    pub convergence: Convergence,
    pub ber_model: BerModel,
    pub min_channels_flagged: usize,
    /// Posterior mass required inside `[I_lwr, I_upp]` to flag a channel.
    pub p_th: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            convergence: Convergence::default(),
            ber_model: BerModel::AnalyticBpsk,
            min_channels_flagged: 1,
            p_th: 0.9,
        }
    }
}

impl DetectionConfig {
    pub fn grid(&self) -> Result<InterferenceGrid> {
        InterferenceGrid::uniform(self.grid.min_w, self.grid.max_w, self.grid.step_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocConfig {
    /// Upper end of the `I_lwr` sweep, milliwatts.
    pub i_lwr_max_mw: f64,
    pub i_lwr_step_mw: f64,
    pub ber_th_max: f64,
    pub ber_th_step: f64,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self {
            i_lwr_max_mw: 1e-4,
            i_lwr_step_mw: 1e-6,
            ber_th_max: 0.5,
            ber_th_step: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TradeoffConfig {
    /// `(alpha, beta)` pairs.
    pub weights: Vec<(f64, f64)>,
    pub epsilon: f64,
    pub snc_search_limit: usize,
}

impl Default for TradeoffConfig {
    fn default() -> Self {
        Self {
            weights: vec![(1.0, 0.0), (0.0, 1.0), (0.5, 0.5)],
            epsilon: 0.1,
            snc_search_limit: 16,
        }
    }
}

/// Everything an experiment run depends on besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_nodes: usize,
    pub area_m: [f64; 2],
    pub num_sources: usize,
    pub mean_rate_bps: f64,
    /// Source rates are uniform in `mean · [1 - spread, 1 + spread]`.
    pub rate_spread: f64,
    pub node_power_budget_w: f64,
    pub neighbor_radius_m: f64,
    pub min_separation_m: f64,
    pub channel: ChannelModel,
    /// Distance from the jammer to the receiver of the link it aims at.
    pub jammer_offset_m: f64,
    /// Fading realizations the attacker averages over when choosing its position.
    pub planning_samples: usize,
    /// Share of planning samples in which a placement must raise the
    /// compromised node's input rate before the attacker deploys there.
    pub min_hit_rate: f64,
    pub jammer_budgets_mw: Vec<f64>,
    pub ber_table_budgets_mw: Vec<f64>,
    pub periods: u64,
    pub bits_per_period: u64,
    pub seeds: Vec<u64>,
    pub detection: DetectionConfig,
    pub roc: RocConfig,
    pub tradeoff: TradeoffConfig,
    pub max_generation_attempts: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_nodes: 25,
            area_m: [500.0, 500.0],
            num_sources: 5,
            mean_rate_bps: 80e3,
            rate_spread: 0.5,
            node_power_budget_w: 1.0,
            neighbor_radius_m: 150.0,
            min_separation_m: 1.0,
            channel: ChannelModel::default(),
            jammer_offset_m: 40.2,
            planning_samples: 16,
            min_hit_rate: 0.5,
            jammer_budgets_mw: (1..=10).map(|k| 10.0 * k as f64).collect(),
            ber_table_budgets_mw: vec![0.0, 10.0, 100.0],
            periods: 10,
            bits_per_period: 10_000,
            seeds: (1..=20).collect(),
            detection: DetectionConfig::default(),
            roc: RocConfig::default(),
            tradeoff: TradeoffConfig::default(),
            max_generation_attempts: 1000,
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::field(field, format!("must be finite and > 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.num_nodes < 3 {
            return Err(Error::field("num_nodes", "need at least 3 nodes"));
        }
        if self.num_sources == 0 || self.num_sources + 2 > self.num_nodes {
            return Err(Error::field(
                "num_sources",
                "need at least one source and room for a sink and a compromised node",
            ));
        }
        positive("area_m", self.area_m[0].min(self.area_m[1]))?;
        positive("mean_rate_bps", self.mean_rate_bps)?;
        if !(0.0..1.0).contains(&self.rate_spread) {
            return Err(Error::field("rate_spread", "must lie in [0, 1)"));
        }
        positive("node_power_budget_w", self.node_power_budget_w)?;
        positive("neighbor_radius_m", self.neighbor_radius_m)?;
        positive("min_separation_m", self.min_separation_m)?;
        positive("jammer_offset_m", self.jammer_offset_m)?;
        for (field, list) in [
            ("jammer_budgets_mw", &self.jammer_budgets_mw),
            ("ber_table_budgets_mw", &self.ber_table_budgets_mw),
        ] {
            if list.is_empty() || list.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                return Err(Error::field(field, "must be a nonempty list of finite values >= 0"));
            }
        }
        if self.periods < 2 {
            return Err(Error::field("periods", "need at least 2 periods for the attacker to act"));
        }
        if self.bits_per_period == 0 {
            return Err(Error::field("bits_per_period", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::field("seeds", "must not be empty"));
        }
        self.detection.grid()?;
        let conv = &self.detection.convergence;
        if !(conv.max_mass > 0.0 && conv.max_mass <= 1.0) {
            return Err(Error::field("detection.convergence.max_mass", "must lie in (0, 1]"));
        }
        if conv.k_max == 0 {
            return Err(Error::field("detection.convergence.k_max", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.detection.p_th) {
            return Err(Error::field("detection.p_th", "must lie in [0, 1]"));
        }
        positive("roc.i_lwr_max_mw", self.roc.i_lwr_max_mw)?;
        positive("roc.i_lwr_step_mw", self.roc.i_lwr_step_mw)?;
        positive("roc.ber_th_max", self.roc.ber_th_max)?;
        positive("roc.ber_th_step", self.roc.ber_th_step)?;
        if self.tradeoff.weights.is_empty() {
            return Err(Error::field("tradeoff.weights", "must not be empty"));
        }
        if self.planning_samples == 0 {
            return Err(Error::field("planning_samples", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.min_hit_rate) {
            return Err(Error::field("min_hit_rate", "must lie in [0, 1]"));
        }
        if self.max_generation_attempts == 0 {
            return Err(Error::field("max_generation_attempts", "must be >= 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Independent RNG stream for `(seed, tag)`.
pub fn stream_rng(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Streams 1.. are taken by per-period fading.
    rng.set_stream((1u64 << 40) + tag);
    rng
}

const TAG_GENERATION: u64 = 0;

fn place_nodes(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Vec<Node> {
    let [w, h] = cfg.area_m;
    let mut nodes: Vec<Node> = Vec::with_capacity(cfg.num_nodes);
    while nodes.len() < cfg.num_nodes {
        let x = rng.random_range(0.0..=w);
        let y = rng.random_range(0.0..=h);
        if nodes
            .iter()
            .all(|n| (n.x - x).hypot(n.y - y) > cfg.min_separation_m)
        {
            nodes.push(Node {
                id: nodes.len(),
                x,
                y,
            });
        }
    }
    nodes
}

/// Random connected topology with sources on the left, the sink on the right,
/// and the jammer `jammer_offset_m` from a relay, at the spot that raises the
/// compromised node's expected input rate the most.
pub fn generate_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    generate(cfg, seed, true)
}

/// Topology drawn like [`generate_scenario`] but with the jammer disabled and
/// never placed, which skips the attacker's planning.
pub fn generate_topology(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    generate(cfg, seed, false)
}

fn generate(cfg: &ExperimentConfig, seed: u64, with_jammer: bool) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, TAG_GENERATION);
    for _ in 0..cfg.max_generation_attempts {
        let nodes = place_nodes(cfg, &mut rng);
        let mut by_x: Vec<usize> = (0..nodes.len()).collect();
        by_x.sort_by(|&a, &b| nodes[a].x.total_cmp(&nodes[b].x).then(a.cmp(&b)));
        let sink = *by_x.last().unwrap();
        let mut source_ids: Vec<usize> = by_x[..cfg.num_sources].to_vec();
        source_ids.sort_unstable();
        let sources: Vec<Source> = source_ids
            .iter()
            .map(|&id| Source {
                id,
                rate_bps: cfg.mean_rate_bps
                    * rng.random_range(1.0 - cfg.rate_spread..=1.0 + cfg.rate_spread),
            })
            .collect();
        let others: Vec<usize> = (0..nodes.len())
            .filter(|n| *n != sink && !source_ids.contains(n))
            .collect();
        let compromised = others[rng.random_range(0..others.len())];
        let mut scenario = Scenario {
            area_m: cfg.area_m,
            nodes,
            sink,
            sources,
            compromised,
            jammer: JammerSpec {
                x: 0.0,
                y: 0.0,
                power_budget_w: cfg.jammer_budgets_mw[0] * 1e-3,
                enabled: with_jammer,
                aim: None,
            },
            channel: cfg.channel.clone(),
            node_power_budget_w: cfg.node_power_budget_w,
            neighbor_radius_m: cfg.neighbor_radius_m,
            rng_seed: seed,
        };
        if !scenario.is_connected() {
            continue;
        }
        // Reject topologies that cannot carry the offered load in a settled
        // routing under mean fading.
        let Ok(state) = NetworkState::quiet(&scenario, LinkGains::expected(&scenario)?, 0) else {
            continue;
        };
        if !state.routing.converged
            || !scenario.sources.iter().all(|x| state.strategy().is_connected(x.id))
        {
            continue;
        }
        if !with_jammer {
            scenario.validate()?;
            return Ok(scenario);
        }
        let Some((aim, x, y)) = plan_jammer(&scenario, &state, cfg)? else {
            continue;
        };
        scenario.jammer.x = x;
        scenario.jammer.y = y;
        scenario.jammer.aim = aim;
        scenario.validate()?;
        return Ok(scenario);
    }
    Err(Error::GenerationExhausted(cfg.max_generation_attempts))
}

/// First fading period used for the attacker's planning samples, far away from
/// the periods of any simulated run.
const PLANNING_PERIOD_BASE: u64 = 1 << 48;

/// Compromised-node input rate with the network routed on `gains`.
fn input_at_c(scenario: &Scenario, gains: &LinkGains, interference: &InterferenceMap) -> f64 {
    let env = LinkEnv {
        scenario,
        gains,
        interference,
    };
    routed_input_rate(&env, scenario.compromised).unwrap_or(0.0)
}

/// Jammer placement that pulls the most extra traffic into the compromised
/// node, averaged over sampled fading realizations, among placements that
/// help in at least `min_hit_rate` of the samples. Candidates sit `offset`
/// away from every relay other than the compromised node, at 12 bearings.
/// The aim is the busiest link into the chosen receiver under mean fading.
/// `None` if no placement helps on average.
fn plan_jammer(
    scenario: &Scenario,
    quiet: &NetworkState,
    cfg: &ExperimentConfig,
) -> Result<Option<(Option<(usize, usize)>, f64, f64)>> {
    let nf = scenario.channel.num_channels;
    let alloc = jam_allocation(scenario.jammer.power_budget_w, nf);
    let silent = InterferenceMap::quiet(scenario.num_nodes(), nf);
    let [w, h] = scenario.area_m;
    let periods = PLANNING_PERIOD_BASE..PLANNING_PERIOD_BASE + cfg.planning_samples as u64;
    let mut samples = Vec::with_capacity(cfg.planning_samples);
    for p in periods {
        let gains = LinkGains::realize(scenario, p)?;
        let base = input_at_c(scenario, &gains, &silent);
        samples.push((gains, base));
    }

    let mut candidates = Vec::new();
    for m in 0..scenario.num_nodes() {
        if m == scenario.compromised || m == scenario.sink {
            continue;
        }
        let (mx, my) = (scenario.nodes[m].x, scenario.nodes[m].y);
        for k in 0..12 {
            let a = 2.0 * PI * k as f64 / 12.0;
            let (x, y) = (mx + cfg.jammer_offset_m * a.cos(), my + cfg.jammer_offset_m * a.sin());
            if (0.0..=w).contains(&x) && (0.0..=h).contains(&y) {
                candidates.push((m, x, y));
            }
        }
    }
    let needed = (cfg.min_hit_rate * samples.len() as f64).ceil() as usize;
    let allowed_misses = samples.len() - needed;
    let scored: Vec<Result<Option<f64>>> = candidates
        .par_iter()
        .map(|&(_, x, y)| {
            let mut trial = scenario.clone();
            trial.jammer.x = x;
            trial.jammer.y = y;
            let (mut gain, mut misses) = (0.0, 0usize);
            for (sampled, base) in &samples {
                let gains = sampled.with_jammer_moved(scenario, &trial)?;
                let interference = InterferenceMap::from_jammer(&alloc, &gains);
                let d = input_at_c(&trial, &gains, &interference) - *base;
                gain += d;
                if d <= 0.0 {
                    misses += 1;
                    if misses > allowed_misses {
                        return Ok(None);
                    }
                }
            }
            Ok(Some(gain / samples.len() as f64).filter(|g| *g > 0.0))
        })
        .collect();
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for (&(m, x, y), score) in candidates.iter().zip(scored) {
        if let Some(gain) = score? {
            if best.is_none_or(|b| gain > b.0) {
                best = Some((gain, m, x, y));
            }
        }
    }
    Ok(best.map(|(_, m, x, y)| {
        let strategy = quiet.strategy();
        let n = (0..scenario.num_nodes())
            .filter(|&n| strategy.next_hop(n) == Some(m))
            .max_by(|&a, &b| {
                quiet.routing.arrivals_bps[a]
                    .total_cmp(&quiet.routing.arrivals_bps[b])
                    .then(b.cmp(&a))
            });
        (n.map(|n| (n, m)), x, y)
    }))
}

/// `k` bits per channel, each wrong with probability `ber(γ_f)`.
pub fn synthesize_bits<R: Rng + ?Sized>(
    sinr: &[f64],
    k: u64,
    model: &BerModel,
    period: u64,
    rng: &mut R,
) -> Vec<BitEvent> {
    let mut out = Vec::with_capacity(sinr.len() * k as usize);
    for (channel, &g) in sinr.iter().enumerate() {
        let p = model.ber(g);
        for _ in 0..k {
            out.push(BitEvent {
                period,
                channel,
                correct: rng.random::<f64>() >= p,
                sinr: Some(g),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), c);
        assert_eq!(c.jammer_budgets_mw.len(), 10);
    }

    #[test]
    fn config_errors_name_the_field() {
        let err = ExperimentConfig::from_json(r#"{"seeds": []}"#).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("seeds"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"roc": {"ber_th_step": 0}}"#).unwrap_err();
        assert!(err.to_string().contains("roc.ber_th_step"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.is_config_error());
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let cfg = ExperimentConfig::default();
        for seed in [1, 2, 3] {
            let s = generate_scenario(&cfg, seed).unwrap();
            assert_eq!(s, generate_scenario(&cfg, seed).unwrap());
            assert_eq!(s.num_nodes(), 25);
            assert_eq!(s.sources.len(), 5);
            assert!(s.is_connected());
            let max_src_x = s.sources.iter().map(|x| s.nodes[x.id].x).fold(0.0, f64::max);
            for n in &s.nodes {
                let src = s.sources.iter().any(|x| x.id == n.id);
                if !src {
                    assert!(n.x >= max_src_x);
                }
                assert!(n.x <= s.nodes[s.sink].x);
            }
            assert!(s.sources.iter().all(|x| x.id != s.compromised));
            assert_ne!(s.compromised, s.sink);
            for a in 0..s.num_nodes() {
                for b in a + 1..s.num_nodes() {
                    assert!(s.distance(a, b) > 1.0);
                }
            }
            assert!((0..s.num_nodes()).any(|m| (s.jammer_distance(m) - 40.2).abs() < 1e-9));
            if let Some((n, m)) = s.jammer.aim {
                assert!(s.neighbors(n).contains(&m));
            }
        }
    }

    #[test]
    fn generation_gives_up() {
        let cfg = ExperimentConfig {
            neighbor_radius_m: 1.5,
            max_generation_attempts: 3,
            ..Default::default()
        };
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::GenerationExhausted(3))));
    }

    #[test]
    fn bit_synthesis_statistics() {
        let mut rng = stream_rng(1, 99);
        let m = BerModel::AnalyticBpsk;
        let bits = synthesize_bits(&[0.0], 1_000_000, &m, 0, &mut rng);
        let errors = bits.iter().filter(|b| !b.correct).count() as i64;
        assert!((errors - 500_000).abs() <= 1500, "{errors}");
        let never = BerModel::FittedExponential {
            a: 0.0,
            b: 1.0,
            floor: 0.0,
        };
        assert!(synthesize_bits(&[3.0, 5.0], 1000, &never, 0, &mut rng)
            .iter()
            .all(|b| b.correct));
        let again = |seed| synthesize_bits(&[1.0, 2.0], 500, &m, 4, &mut stream_rng(seed, 7));
        assert_eq!(again(3), again(3));
        let p = m.ber(1.0);
        let bits = synthesize_bits(&[1.0], 1_000_000, &m, 0, &mut rng);
        let rate = bits.iter().filter(|b| !b.correct).count() as f64 / 1e6;
        let sigma = (p * (1.0 - p) / 1e6).sqrt();
        assert!((rate - p).abs() < 3.0 * sigma);
    }
}
