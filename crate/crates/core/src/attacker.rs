//! Hammer-and-anvil attacker: a low-power jammer degrades links that do not lead
//! to the compromised node so that delay-minimizing defenders reroute towards it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::defender::{update_routes, waterfill, DefenderStrategy, LinkEnv, RoutingOutcome};
use crate::error::Result;
use crate::netmodel::{
    link_delay, link_throughput, sinr, InterferenceMap, LinkGains, NodeId, PowerAllocation,
    Scenario,
};

/// Jammer power allocation and the link it is aimed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerStrategy {
    pub allocation: PowerAllocation,
    pub target: Option<(NodeId, NodeId)>,
}

impl AttackerStrategy {
    pub fn idle(num_channels: usize, budget: f64) -> Self {
        Self {
            allocation: PowerAllocation::zero(num_channels, budget),
            target: None,
        }
    }
}

/// Network state `V` after the defenders have responded in one period.
#[derive(Debug, Clone)]
pub struct NetworkState {
    pub period: u64,
    pub gains: LinkGains,
    pub jammer: AttackerStrategy,
    pub interference: InterferenceMap,
    pub routing: RoutingOutcome,
}

impl NetworkState {
    /// Defender equilibrium for the given gains with the jammer silent.
    pub fn quiet(scenario: &Scenario, gains: LinkGains, period: u64) -> Result<Self> {
        let nf = scenario.channel.num_channels;
        let interference = InterferenceMap::quiet(scenario.num_nodes(), nf);
        let routing = update_routes(&LinkEnv {
            scenario,
            gains: &gains,
            interference: &interference,
        })?;
        Ok(Self {
            period,
            gains,
            jammer: AttackerStrategy::idle(nf, scenario.jammer.power_budget_w),
            interference,
            routing,
        })
    }

    pub fn env<'a>(&'a self, scenario: &'a Scenario) -> LinkEnv<'a> {
        LinkEnv {
            scenario,
            gains: &self.gains,
            interference: &self.interference,
        }
    }

    pub fn strategy(&self) -> &DefenderStrategy {
        &self.routing.strategy
    }

    /// Attack gain: data rate flowing into the compromised node.
    pub fn attack_gain(&self, scenario: &Scenario) -> f64 {
        self.routing.traffic.input_rate[scenario.compromised]
    }
}

/// A victim link and the jamming needed to push its head onto a route through `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetChoice {
    pub victim: NodeId,
    pub link: (NodeId, NodeId),
    /// Neighbor of the victim whose route leads to the compromised node.
    pub alternative: NodeId,
    /// Smallest per-channel jamming power that flips the victim, `INFINITY` if none up to 1 W.
    pub flip_power_w: f64,
    /// `T_n(l) - T_n(m)` without additional jamming, seconds.
    pub delay_gap: f64,
}

const FLIP_SEARCH_CAP_W: f64 = 1.0;

/// First-hop delay `n -> rx` plus downstream delay, with the jammer emitting
/// `p` watts on every channel.
fn jammed_total(
    state: &NetworkState,
    scenario: &Scenario,
    n: NodeId,
    rx: NodeId,
    arrival: f64,
    p: f64,
) -> f64 {
    let eta = scenario.channel.noise_w();
    let interference: Vec<f64> = state.gains.jammer_to(rx).iter().map(|h| p * h).collect();
    let h = state.gains.link(n, rx);
    let g: Vec<f64> = h.iter().zip(&interference).map(|(h, i)| h / (i + eta)).collect();
    let Ok(alloc) = waterfill(scenario.node_power_budget_w, &g) else {
        return f64::INFINITY;
    };
    let mu = link_throughput(&alloc, h, &interference, &scenario.channel);
    link_delay(mu, arrival, &scenario.channel).map_or(f64::INFINITY, |d| d + state.strategy().delay(rx))
}

/// Minimum uniform per-channel jamming power making `T_n(m) > T_n(l)`.
fn flip_power(state: &NetworkState, scenario: &Scenario, n: NodeId, m: NodeId, l: NodeId) -> f64 {
    let arrival = scenario.generation_rate(n) + state.routing.traffic.input_rate[n];
    let flipped = |p: f64| {
        jammed_total(state, scenario, n, m, arrival, p) > jammed_total(state, scenario, n, l, arrival, p)
    };
    if flipped(0.0) {
        return 0.0;
    }
    // Coarse log scan, then bisection inside the first bracket that flips.
    let steps = 160;
    let lo_exp = -9.0f64;
    let hi_exp = FLIP_SEARCH_CAP_W.log10();
    let mut prev = 0.0;
    for k in 0..=steps {
        let p = 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / steps as f64);
        if flipped(p) {
            let (mut a, mut b) = (prev, p);
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                if flipped(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return b;
        }
        prev = p;
    }
    f64::INFINITY
}

/// Triples `(n, m, l)`: `n` routes to `m` while its route avoids the compromised
/// node, and neighbor `l` leads to the compromised node without passing `n`.
pub fn eligible_links(state: &NetworkState, scenario: &Scenario) -> Vec<(NodeId, NodeId, NodeId)> {
    let c = scenario.compromised;
    let strategy = state.strategy();
    let mut out = Vec::new();
    for n in 0..scenario.num_nodes() {
        if n == c || n == scenario.sink || strategy.passes_through(n, c) {
            continue;
        }
        let Some(m) = strategy.next_hop(n) else {
            continue;
        };
        for l in scenario.neighbors(n) {
            if l == m || !strategy.is_connected(l) {
                continue;
            }
            let route = strategy.route(l);
            if route.contains(&c) && !route.contains(&n) {
                out.push((n, m, l));
            }
        }
    }
    out
}

/// `T_n(l) - T_n(m)` with the current interference and no extra jamming.
pub fn delay_gap(state: &NetworkState, scenario: &Scenario, n: NodeId, m: NodeId, l: NodeId) -> f64 {
    let arrival = scenario.generation_rate(n) + state.routing.traffic.input_rate[n];
    jammed_total(state, scenario, n, l, arrival, 0.0) - jammed_total(state, scenario, n, m, arrival, 0.0)
}

/// Choose the link to jam: among nodes whose route avoids the compromised node,
/// the one a c-leading neighbor can take over with the least jamming power.
///
/// Ties fall back to the smaller delay gap, then to node ids. Returns `None`
/// when no node has such an alternative.
pub fn select_target(state: &NetworkState, scenario: &Scenario) -> Option<TargetChoice> {
    let mut best: Option<TargetChoice> = None;
    for (n, m, l) in eligible_links(state, scenario) {
        let choice = TargetChoice {
            victim: n,
            link: (n, m),
            alternative: l,
            flip_power_w: flip_power(state, scenario, n, m, l),
            delay_gap: delay_gap(state, scenario, n, m, l),
        };
        let better = match &best {
            None => true,
            Some(b) => (choice.flip_power_w, choice.delay_gap, n, l)
                .partial_cmp(&(b.flip_power_w, b.delay_gap, b.victim, b.alternative))
                .is_some_and(|o| o.is_lt()),
        };
        if better {
            best = Some(choice);
        }
    }
    best
}

/// Spread the jamming budget evenly over every channel.
pub fn jam_allocation(budget: f64, num_channels: usize) -> PowerAllocation {
    let per = if budget > 0.0 {
        budget / num_channels as f64
    } else {
        0.0
    };
    PowerAllocation {
        per_channel: vec![per; num_channels],
        budget: budget.max(0.0),
    }
}

/// The victim link as the receiver sees it right after the jammer moved and
/// before the defender re-routed (`V'`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkObservation {
    pub period: u64,
    pub tx: NodeId,
    pub rx: NodeId,
    pub allocation: PowerAllocation,
    pub gains: Vec<f64>,
    pub interference: Vec<f64>,
    pub noise_w: f64,
    /// Arrival rate at the transmitter, bit/s.
    pub arrival_bps: f64,
}

impl LinkObservation {
    /// Build the observation with the transmitter waterfilling against the given interference.
    pub fn new(
        period: u64,
        tx: NodeId,
        rx: NodeId,
        budget: f64,
        gains: Vec<f64>,
        interference: Vec<f64>,
        noise_w: f64,
        arrival_bps: f64,
    ) -> Result<Self> {
        let g: Vec<f64> = gains
            .iter()
            .zip(&interference)
            .map(|(h, i)| h / (i + noise_w))
            .collect();
        let allocation = waterfill(budget, &g)?;
        Ok(Self {
            period,
            tx,
            rx,
            allocation,
            gains,
            interference,
            noise_w,
            arrival_bps,
        })
    }

    pub fn sinr(&self) -> Vec<f64> {
        (0..self.gains.len())
            .map(|f| sinr(self.allocation.per_channel[f], self.gains[f], self.interference[f], self.noise_w))
            .collect()
    }

    /// The same link with the jammer silent.
    pub fn quiet(&self) -> Result<Self> {
        Self::new(
            self.period,
            self.tx,
            self.rx,
            self.allocation.budget,
            self.gains.clone(),
            vec![0.0; self.gains.len()],
            self.noise_w,
            self.arrival_bps,
        )
    }
}

/// One line of the per-period history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: u64,
    pub target_link: Option<(NodeId, NodeId)>,
    #[serde(rename = "P_j")]
    pub jammer_power_w: Vec<f64>,
    pub attack_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    /// Input rate of the compromised node averaged over all periods, bit/s.
    pub attack_gain: f64,
    pub periods_elapsed: u64,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PeriodState {
    pub record: PeriodRecord,
    pub state: NetworkState,
    /// Victim link under fresh jamming, before the defender's response.
    pub victim_link: Option<LinkObservation>,
}

#[derive(Debug, Clone)]
pub struct IterationRun {
    pub periods: Vec<PeriodState>,
    pub outcome: AttackOutcome,
}

impl IterationRun {
    /// First victim-link observation with the jammer active.
    pub fn first_jammed_link(&self) -> Option<&LinkObservation> {
        self.periods.iter().find_map(|p| p.victim_link.as_ref())
    }

    pub fn write_history_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for p in &self.periods {
            serde_json::to_writer(&mut out, &p.record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Alternate defender and attacker updates for `periods` strategy-updating periods.
///
/// In period `i` the gains are redrawn, the defenders solve their strategies
/// against the jammer allocation `A_i`, and the attacker then picks `A_{i+1}`.
/// An enabled jammer always spends its full budget. Its target is kept while
/// the victim stays diverted through the compromised node, and re-selected
/// otherwise; `None` when no link is eligible.
pub fn run_iteration(scenario: &Scenario, periods: u64) -> Result<IterationRun> {
    scenario.validate()?;
    let nf = scenario.channel.num_channels;
    let budget = scenario.jammer.power_budget_w;
    let mut jammer = AttackerStrategy::idle(nf, budget);
    let mut previous: Option<DefenderStrategy> = None;
    let mut out = Vec::with_capacity(periods as usize);
    let mut history = Vec::with_capacity(periods as usize);

    for period in 0..periods.max(1) {
        let gains = LinkGains::realize(scenario, period)?;
        let interference = InterferenceMap::from_jammer(&jammer.allocation, &gains);

        let victim_link = match (jammer.target, &previous) {
            (Some((n, m)), Some(prev)) if prev.next_hop(n) == Some(m) => {
                let arrival = scenario.generation_rate(n)
                    + out
                        .last()
                        .map_or(0.0, |p: &PeriodState| p.state.routing.traffic.input_rate[n]);
                Some(LinkObservation::new(
                    period,
                    n,
                    m,
                    scenario.node_power_budget_w,
                    gains.link(n, m).to_vec(),
                    interference.at(m).to_vec(),
                    scenario.channel.noise_w(),
                    arrival,
                )?)
            }
            _ => None,
        };

        let env = LinkEnv {
            scenario,
            gains: &gains,
            interference: &interference,
        };
        let routing = update_routes(&env)?;
        let state = NetworkState {
            period,
            gains,
            jammer: jammer.clone(),
            interference,
            routing,
        };
        let gain = state.attack_gain(scenario);
        history.push(gain);
        let record = PeriodRecord {
            period,
            target_link: jammer.target,
            jammer_power_w: jammer.allocation.per_channel.clone(),
            attack_gain: gain,
        };

        if scenario.jammer.enabled {
            let hold = jammer.target.is_some_and(|(n, m)| {
                let s = state.strategy();
                s.next_hop(n) != Some(m) && s.passes_through(n, scenario.compromised)
            });
            if !hold {
                jammer = AttackerStrategy {
                    allocation: jam_allocation(budget, nf),
                    target: select_target(&state, scenario).map(|c| c.link),
                };
            }
        }

        previous = Some(state.routing.strategy.clone());
        out.push(PeriodState {
            record,
            state,
            victim_link,
        });
    }

    let outcome = AttackOutcome {
        attack_gain: history.iter().sum::<f64>() / history.len() as f64,
        periods_elapsed: out.len() as u64,
        history,
    };
    Ok(IterationRun {
        periods: out,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::fixtures::scenario;

    #[test]
    fn allocation_examples() {
        let a = jam_allocation(0.010, 10);
        for p in &a.per_channel {
            assert!((p - 1e-3).abs() < 1e-15);
        }
        assert!(a.is_feasible());
        let z = jam_allocation(0.0, 10);
        assert!(z.per_channel.iter().all(|&p| p == 0.0));
    }

    /// n routes straight to m; the compromised node l sits just off the path.
    fn diamond() -> Scenario {
        let mut s = scenario(
            &[(0.0, 100.0), (90.0, 100.0), (80.0, 40.0), (180.0, 100.0)],
            3,
            &[(0, 8e4)],
        );
        s.compromised = 2;
        s.jammer.x = 90.0;
        s.jammer.y = 140.0;
        s.jammer.enabled = true;
        s.jammer.power_budget_w = 0.1;
        s
    }

    fn state_for(s: &Scenario) -> NetworkState {
        NetworkState::quiet(s, LinkGains::expected(s).unwrap(), 0).unwrap()
    }

    #[test]
    fn fig1_shape_targets_the_link_away_from_c() {
        let s = diamond();
        let st = state_for(&s);
        assert_eq!(st.strategy().next_hop(0), Some(1));
        let t = select_target(&st, &s).expect("victim exists");
        assert_eq!(t.victim, 0);
        assert_eq!(t.link, (0, 1));
        assert_eq!(t.alternative, 2);
        assert!(t.flip_power_w.is_finite() && t.flip_power_w > 0.0);
    }

    #[test]
    fn idle_when_everything_reaches_c() {
        // Line 0 -> 1(c) -> 2(sink): the only non-c node already routes through c.
        let mut s = scenario(&[(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)], 2, &[(0, 8e4)]);
        s.compromised = 1;
        let st = state_for(&s);
        assert!(select_target(&st, &s).is_none());
    }

    #[test]
    fn flip_power_is_minimal() {
        let s = diamond();
        let st = state_for(&s);
        let t = select_target(&st, &s).unwrap();
        let arrival = 8e4;
        let total = |rx, p| jammed_total(&st, &s, 0, rx, arrival, p);
        assert!(total(1, t.flip_power_w) > total(2, t.flip_power_w));
        let below = t.flip_power_w * (1.0 - 1e-6);
        assert!(total(1, below) <= total(2, below));
    }

    #[test]
    fn selects_the_cheapest_flip() {
        // Two mirror-image victims; the jammer sits closer to the first one's receiver.
        let mut s = scenario(
            &[
                (0.0, 60.0),   // 0 victim A
                (90.0, 60.0),  // 1 A's relay
                (80.0, 0.0),   // 2 compromised, between both
                (0.0, -60.0),  // 3 victim B (shifted below)
                (90.0, -60.0), // 4 B's relay
                (180.0, 0.0),  // 5 sink
            ]
            .iter()
            .map(|&(x, y)| (x + 10.0, y + 100.0))
            .collect::<Vec<_>>(),
            5,
            &[(0, 4e4), (3, 4e4)],
        );
        s.compromised = 2;
        s.jammer.enabled = true;
        s.jammer.power_budget_w = 0.1;
        s.jammer.x = 100.0;
        s.jammer.y = 200.0;
        let st = state_for(&s);
        let t = select_target(&st, &s).unwrap();
        // Oracle: brute force over every eligible (n, m, l).
        let strat = st.strategy();
        let mut best = f64::INFINITY;
        for n in 0..s.num_nodes() {
            if n == 2 || n == 5 || strat.passes_through(n, 2) {
                continue;
            }
            let m = strat.next_hop(n).unwrap();
            for l in s.neighbors(n) {
                let r = strat.route(l);
                if l != m && r.contains(&2) && !r.contains(&n) {
                    best = best.min(flip_power(&st, &s, n, m, l));
                }
            }
        }
        assert!(best.is_finite());
        assert_eq!(t.flip_power_w, best);
    }

    #[test]
    fn disabled_jammer_leaves_baseline_untouched() {
        let mut s = diamond();
        s.jammer.enabled = false;
        let run = run_iteration(&s, 3).unwrap();
        for p in &run.periods {
            assert_eq!(p.record.target_link, None);
            assert!(p.record.jammer_power_w.iter().all(|&x| x == 0.0));
            assert!(p.victim_link.is_none());
        }
        assert_eq!(run.outcome.periods_elapsed, 3);
    }

    #[test]
    fn jamming_drives_traffic_to_c_and_is_deterministic() {
        let s = diamond();
        let run = run_iteration(&s, 3).unwrap();
        let h = &run.outcome.history;
        assert_eq!(h[0], 0.0);
        assert!(h[1] > h[0], "{h:?}");
        for p in &run.periods {
            assert!(p.record.jammer_power_w.iter().sum::<f64>() <= s.jammer.power_budget_w * (1.0 + 1e-12));
            assert!(p.record.attack_gain <= s.total_source_rate() + 1e-9);
        }
        let again = run_iteration(&s, 3).unwrap();
        assert_eq!(run.outcome, again.outcome);
        let obs = run.first_jammed_link().unwrap();
        assert_eq!((obs.tx, obs.rx), (0, 1));
        assert!(obs.interference.iter().all(|&i| i > 0.0));
    }

    #[test]
    fn history_jsonl_has_expected_keys() {
        let s = diamond();
        let run = run_iteration(&s, 2).unwrap();
        let mut buf = Vec::new();
        run.write_history_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["period", "target_link", "P_j", "attack_gain"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(text.lines().count(), 2);
    }
}
