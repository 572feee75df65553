//! The defenders' cross-layer protocol: every node jointly picks a per-channel
//! power allocation and the next hop that minimizes its expected end-to-end
//! delay to the sink.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{
    link_delay, link_throughput, InterferenceMap, LinkGains, NodeId, PowerAllocation, Scenario,
};

/// Budget-constrained allocation maximizing `sum_f log2(1 + P^f g^f)`.
///
/// Solved exactly from the KKT conditions `P^f = max(0, nu - 1/g^f)`: channels
/// are activated in decreasing order of gain until the water level settles.
pub fn waterfill(budget: f64, effective_gains: &[f64]) -> Result<PowerAllocation> {
    if !(budget > 0.0 && budget.is_finite()) {
        return Err(Error::field("budget", format!("must be > 0, got {budget}")));
    }
    if effective_gains.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::field("effective_gains", "must be >= 0"));
    }
    let mut per_channel = Vec::new();
    if waterfill_into(budget, effective_gains, &mut Vec::new(), &mut per_channel).is_none() {
        return Err(Error::NoUsableChannel);
    }
    Ok(PowerAllocation {
        per_channel,
        budget,
    })
}

/// [`waterfill`] on validated inputs into caller-owned buffers. Returns the
/// water level, `None` when no channel has a positive gain.
fn waterfill_into(
    budget: f64,
    effective_gains: &[f64],
    order: &mut Vec<usize>,
    per_channel: &mut Vec<f64>,
) -> Option<f64> {
    let (level, active) = water_level(budget, effective_gains, order)?;
    per_channel.clear();
    per_channel.resize(effective_gains.len(), 0.0);
    for &f in &order[..active] {
        per_channel[f] = (level - 1.0 / effective_gains[f]).max(0.0);
    }
    Some(level)
}

/// Water level and number of active channels; `order` ends up holding the
/// channels by decreasing gain.
fn water_level(budget: f64, effective_gains: &[f64], order: &mut Vec<usize>) -> Option<(f64, usize)> {
    order.clear();
    order.extend((0..effective_gains.len()).filter(|&f| effective_gains[f] > 0.0));
    if order.is_empty() {
        return None;
    }
    order.sort_unstable_by(|&a, &b| effective_gains[b].total_cmp(&effective_gains[a]).then(a.cmp(&b)));

    let mut inv_sum = 0.0;
    let mut level = 0.0;
    let mut active = 0;
    for (k, &f) in order.iter().enumerate() {
        let inv = 1.0 / effective_gains[f];
        let candidate = (budget + inv_sum + inv) / (k + 1) as f64;
        if k > 0 && candidate <= inv {
            break;
        }
        inv_sum += inv;
        level = candidate;
        active = k + 1;
    }
    Some((level, active))
}

/// Everything a node observes about the physical layer in one period.
#[derive(Debug, Clone, Copy)]
pub struct LinkEnv<'a> {
    pub scenario: &'a Scenario,
    pub gains: &'a LinkGains,
    pub interference: &'a InterferenceMap,
}

/// Power allocation and resulting performance of one directed link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEvaluation {
    pub allocation: PowerAllocation,
    pub throughput_bps: f64,
    /// `None` when the link cannot carry its load.
    pub delay: Option<f64>,
}

impl<'a> LinkEnv<'a> {
    /// `H^f / (I^f + eta)` for link `tx -> rx`.
    pub fn effective_gains(&self, tx: NodeId, rx: NodeId) -> Vec<f64> {
        let eta = self.scenario.channel.noise_w();
        self.gains
            .link(tx, rx)
            .iter()
            .zip(self.interference.at(rx))
            .map(|(h, i)| h / (i + eta))
            .collect()
    }

    /// Waterfill `tx`'s budget onto link `tx -> rx` and evaluate its delay
    /// under `arrival_bps`. `None` if the link has no usable channel.
    pub fn evaluate_link(&self, tx: NodeId, rx: NodeId, arrival_bps: f64) -> Option<LinkEvaluation> {
        let g = self.effective_gains(tx, rx);
        let allocation = waterfill(self.scenario.node_power_budget_w, &g).ok()?;
        let throughput_bps = link_throughput(
            &allocation,
            self.gains.link(tx, rx),
            self.interference.at(rx),
            &self.scenario.channel,
        );
        let delay = link_delay(throughput_bps, arrival_bps, &self.scenario.channel);
        Some(LinkEvaluation {
            allocation,
            throughput_bps,
            delay,
        })
    }
}

/// A node's chosen strategy `{P_n, next hop}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStrategy {
    pub next_hop: NodeId,
    pub allocation: PowerAllocation,
    /// Delay of the first hop in seconds.
    pub link_delay: f64,
    /// Expected end-to-end delay to the sink in seconds.
    pub delay: f64,
}

/// Strategies of every node. `None` marks the sink and disconnected nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenderStrategy {
    pub sink: NodeId,
    pub nodes: Vec<Option<NodeStrategy>>,
}

impl DefenderStrategy {
    pub fn next_hop(&self, n: NodeId) -> Option<NodeId> {
        self.nodes[n].as_ref().map(|s| s.next_hop)
    }

    /// End-to-end delay; zero at the sink, infinite when disconnected.
    pub fn delay(&self, n: NodeId) -> f64 {
        if n == self.sink {
            return 0.0;
        }
        self.nodes[n].as_ref().map_or(f64::INFINITY, |s| s.delay)
    }

    pub fn is_connected(&self, n: NodeId) -> bool {
        n == self.sink || self.nodes[n].is_some()
    }

    pub fn next_hops(&self) -> Vec<Option<NodeId>> {
        (0..self.nodes.len()).map(|n| self.next_hop(n)).collect()
    }

    /// Nodes visited from `n` to the sink, inclusive. Empty if disconnected.
    pub fn route(&self, n: NodeId) -> Vec<NodeId> {
        let mut path = vec![n];
        let mut cur = n;
        while cur != self.sink {
            match self.next_hop(cur) {
                Some(next) if path.len() <= self.nodes.len() => {
                    path.push(next);
                    cur = next;
                }
                _ => return Vec::new(),
            }
        }
        path
    }

    /// Whether the route of `n` visits `target` (including `n == target`).
    pub fn passes_through(&self, n: NodeId, target: NodeId) -> bool {
        self.route(n).contains(&target)
    }

    pub fn is_acyclic(&self) -> bool {
        (0..self.nodes.len()).all(|n| !self.nodes[n].is_some() || !self.route(n).is_empty())
    }
}

/// Pick the neighbor minimizing `T_n(m) = link_delay(n -> m) + T_m`.
///
/// `neighbor_delays` lists `(m, T_m)`; ties go to the lowest node id. Returns
/// `None` when no neighbor is feasible, marking the node disconnected.
pub fn best_strategy(
    env: &LinkEnv<'_>,
    node: NodeId,
    neighbor_delays: &[(NodeId, f64)],
    arrival_bps: f64,
) -> Option<NodeStrategy> {
    let mut sorted: Vec<(NodeId, f64)> = neighbor_delays.to_vec();
    sorted.sort_by_key(|&(m, _)| m);
    let mut best: Option<NodeStrategy> = None;
    for (m, t_m) in sorted {
        if !t_m.is_finite() {
            continue;
        }
        let Some(eval) = env.evaluate_link(node, m, arrival_bps) else {
            continue;
        };
        let Some(d) = eval.delay else { continue };
        let total = d + t_m;
        if best.as_ref().is_none_or(|b| total < b.delay) {
            best = Some(NodeStrategy {
                next_hop: m,
                allocation: eval.allocation,
                link_delay: d,
                delay: total,
            });
        }
    }
    best
}

/// Bellman-Ford relaxation of the delay metric from the sink for fixed arrival rates.
///
/// Every round re-solves each node's strategy against the previous round's
/// delays, so shortest delays settle within `|N| - 1` rounds.
pub fn relax_routes(env: &LinkEnv<'_>, arrivals_bps: &[f64]) -> DefenderStrategy {
    let choice = relax_with(env.scenario, &LinkTable::new(env), arrivals_bps);
    DefenderStrategy {
        sink: env.scenario.sink,
        nodes: (0..choice.len())
            .map(|u| {
                choice[u].map(|(m, link_delay, delay)| NodeStrategy {
                    next_hop: m,
                    allocation: env.evaluate_link(u, m, 0.0).expect("neighbor link").allocation,
                    link_delay,
                    delay,
                })
            })
            .collect(),
    }
}

/// Per node: next hop, first-hop delay and end-to-end delay.
type Choice = Option<(NodeId, f64, f64)>;

fn relax_with(scenario: &Scenario, table: &LinkTable, arrivals_bps: &[f64]) -> Vec<Choice> {
    let n = scenario.num_nodes();
    let mut choice: Vec<Choice> = vec![None; n];
    for _ in 0..n {
        let delays: Vec<f64> = (0..n)
            .map(|u| {
                if u == scenario.sink {
                    0.0
                } else {
                    choice[u].map_or(f64::INFINITY, |c| c.2)
                }
            })
            .collect();
        let next: Vec<Choice> = (0..n)
            .map(|u| {
                if u == scenario.sink {
                    return None;
                }
                let mut best: Choice = None;
                for &(m, throughput) in &table.links[u] {
                    if !delays[m].is_finite() {
                        continue;
                    }
                    let Some(d) = link_delay(throughput, arrivals_bps[u], &scenario.channel)
                    else {
                        continue;
                    };
                    let total = d + delays[m];
                    if best.is_none_or(|b| total < b.2) {
                        best = Some((m, d, total));
                    }
                }
                best
            })
            .collect();
        if next == choice {
            break;
        }
        choice = next;
    }
    choice
}

/// Waterfilled throughput of every neighbor link. It does not depend on
/// arrival rates, so one table serves a whole routing solve.
struct LinkTable {
    links: Vec<Vec<(NodeId, f64)>>,
}

impl LinkTable {
    /// On every powered channel `1 + P^f g^f` equals `nu g^f`, so the
    /// throughput is `W log2` of the product of `nu g^f`.
    fn new(env: &LinkEnv<'_>) -> Self {
        let scenario = env.scenario;
        let model = &scenario.channel;
        let eta = model.noise_w();
        let (mut g, mut order) = (Vec::new(), Vec::new());
        let links = (0..scenario.num_nodes())
            .map(|u| {
                if u == scenario.sink {
                    return Vec::new();
                }
                let mut out = Vec::new();
                for m in scenario.neighbors(u) {
                    let h = env.gains.link(u, m);
                    let i = env.interference.at(m);
                    g.clear();
                    g.extend(h.iter().zip(i).map(|(h, i)| h / (i + eta)));
                    let Some((level, active)) =
                        water_level(scenario.node_power_budget_w, &g, &mut order)
                    else {
                        continue;
                    };
                    let product: f64 = order[..active]
                        .iter()
                        .map(|&f| level * g[f])
                        .filter(|x| *x > 1.0)
                        .product();
                    out.push((m, model.bandwidth_hz * product.log2()));
                }
                out
            })
            .collect();
        Self { links }
    }

    fn throughput(&self, u: NodeId, m: NodeId) -> Option<f64> {
        self.links[u].iter().find(|(v, _)| *v == m).map(|(_, t)| *t)
    }
}

/// Offered load and end-to-end delays for a fixed next-hop assignment.
struct Load {
    arrivals: Vec<f64>,
    delays: Vec<f64>,
    /// Throughput of each node's current first hop, zero where there is none.
    hop_throughput: Vec<f64>,
}

impl Load {
    fn new(
        scenario: &Scenario,
        table: &LinkTable,
        hops: &[Option<NodeId>],
        own: &[f64],
    ) -> Result<Self> {
        let n = hops.len();
        let order = upstream_first(hops)?;
        let mut arrivals = own.to_vec();
        for &u in &order {
            if let Some(m) = hops[u] {
                arrivals[m] += arrivals[u];
            }
        }
        let mut delays = vec![f64::INFINITY; n];
        let mut hop_throughput = vec![0.0; n];
        delays[scenario.sink] = 0.0;
        for &u in order.iter().rev() {
            if let Some(m) = hops[u] {
                hop_throughput[u] = table.throughput(u, m).unwrap_or(0.0);
                let d = link_delay(hop_throughput[u], arrivals[u], &scenario.channel);
                delays[u] = d.map_or(f64::INFINITY, |d| d + delays[m]);
            }
        }
        Ok(Self {
            arrivals,
            delays,
            hop_throughput,
        })
    }
}

/// Nodes ordered so that every node precedes its next hop.
fn upstream_first(hops: &[Option<NodeId>]) -> Result<Vec<NodeId>> {
    let n = hops.len();
    let mut indegree = vec![0usize; n];
    for m in hops.iter().flatten() {
        indegree[*m] += 1;
    }
    let mut ready: Vec<NodeId> = (0..n).rev().filter(|&u| indegree[u] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(u) = ready.pop() {
        order.push(u);
        if let Some(m) = hops[u] {
            indegree[m] -= 1;
            if indegree[m] == 0 {
                ready.push(m);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&u| indegree[u] > 0).unwrap_or(0);
        return Err(Error::RoutingCycle(stuck));
    }
    Ok(order)
}

/// Relative delay reduction a node needs before it moves to another next hop.
pub const MIN_IMPROVEMENT: f64 = 1e-9;

/// Outcome of the network-wide routing fixed point.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutcome {
    pub strategy: DefenderStrategy,
    pub traffic: TrafficMap,
    /// Offered load per node behind the final delays. Unlike `traffic`, this
    /// still counts flow from nodes whose own route is overloaded.
    pub arrivals_bps: Vec<f64>,
    /// Next-hop changes made after the initial relaxation.
    pub rounds: usize,
    pub converged: bool,
}

/// Solve the defenders' strategies for one period.
///
/// Starts from the delay-shortest tree under the nodes' own generation rates.
/// Then, one node at a time, the node that can cut its end-to-end delay the
/// most moves to another neighbor, with the delay judged after its own flow
/// has joined the new route. Stops when no node can improve, or after `|N|^2`
/// moves. Neighbors whose route runs through the moving node are never
/// considered, so routes stay acyclic.
pub fn update_routes(env: &LinkEnv<'_>) -> Result<RoutingOutcome> {
    let scenario = env.scenario;
    let Solved {
        table,
        hops,
        load,
        moves,
        converged,
    } = solve(env)?;
    let strategy = DefenderStrategy {
        sink: scenario.sink,
        nodes: (0..hops.len())
            .map(|u| {
                let m = hops[u].filter(|_| load.delays[u].is_finite())?;
                let throughput = table.throughput(u, m)?;
                Some(NodeStrategy {
                    next_hop: m,
                    allocation: env.evaluate_link(u, m, 0.0)?.allocation,
                    link_delay: link_delay(throughput, load.arrivals[u], &scenario.channel)?,
                    delay: load.delays[u],
                })
            })
            .collect(),
    };
    let traffic = traffic_map(&strategy, scenario)?;
    Ok(RoutingOutcome {
        strategy,
        traffic,
        arrivals_bps: load.arrivals,
        rounds: moves,
        converged,
    })
}

/// Input rate of node `n` under [`update_routes`], without building the full outcome.
pub fn routed_input_rate(env: &LinkEnv<'_>, n: NodeId) -> Result<f64> {
    let scenario = env.scenario;
    let Solved { hops, load, .. } = solve(env)?;
    let live: Vec<Option<NodeId>> = (0..hops.len())
        .map(|u| hops[u].filter(|_| load.delays[u].is_finite()))
        .collect();
    let mut carried: Vec<f64> = (0..live.len())
        .map(|u| {
            if live[u].is_some() {
                scenario.generation_rate(u)
            } else {
                0.0
            }
        })
        .collect();
    let mut input = 0.0;
    for u in upstream_first(&live)? {
        if let Some(m) = live[u] {
            carried[m] += carried[u];
            if m == n {
                input += carried[u];
            }
        }
    }
    Ok(input)
}

struct Solved {
    table: LinkTable,
    hops: Vec<Option<NodeId>>,
    load: Load,
    moves: usize,
    converged: bool,
}

fn solve(env: &LinkEnv<'_>) -> Result<Solved> {
    let scenario = env.scenario;
    let n = scenario.num_nodes();
    let table = LinkTable::new(env);
    let own: Vec<f64> = (0..n).map(|u| scenario.generation_rate(u)).collect();
    let start = relax_with(scenario, &table, &own);
    if (0..n).all(|u| u == scenario.sink || start[u].is_none()) {
        return Err(Error::SinkUnreachable(scenario.sink));
    }
    let mut hops: Vec<Option<NodeId>> = start.iter().map(|c| c.map(|c| c.0)).collect();

    let mut moves = 0;
    let mut converged = false;
    let mut load = Load::new(scenario, &table, &hops, &own)?;
    while moves < n * n {
        match best_move(scenario, &table, &hops, &load) {
            Some((u, m)) => {
                hops[u] = Some(m);
                moves += 1;
                load = Load::new(scenario, &table, &hops, &own)?;
            }
            None => {
                converged = true;
                break;
            }
        }
    }
    Ok(Solved {
        table,
        hops,
        load,
        moves,
        converged,
    })
}

/// The single next-hop change with the largest relative delay reduction.
///
/// A candidate path carries the moving node's flow only until it merges with
/// the node's old route; past the merge point the current delays still hold.
fn best_move(
    scenario: &Scenario,
    table: &LinkTable,
    hops: &[Option<NodeId>],
    load: &Load,
) -> Option<(NodeId, NodeId)> {
    let n = hops.len();
    let sink = scenario.sink;
    let mut best: Option<(f64, NodeId, NodeId)> = None;
    let mut on_old = vec![false; n];
    for u in 0..n {
        if u == sink {
            continue;
        }
        on_old.iter_mut().for_each(|x| *x = false);
        let mut cur = hops[u];
        while let Some(w) = cur {
            on_old[w] = true;
            if w == sink {
                break;
            }
            cur = hops[w];
        }
        let flow = load.arrivals[u];
        let current = load.delays[u];
        'candidates: for &(m, throughput) in &table.links[u] {
            if hops[u] == Some(m) {
                continue;
            }
            let Some(mut total) = link_delay(throughput, flow, &scenario.channel) else {
                continue;
            };
            let mut w = m;
            let mut steps = 0;
            while !on_old[w] && w != sink {
                let Some(x) = hops[w] else {
                    continue 'candidates;
                };
                if w == u || steps > n {
                    continue 'candidates;
                }
                match link_delay(load.hop_throughput[w], load.arrivals[w] + flow, &scenario.channel) {
                    Some(d) => total += d,
                    None => continue 'candidates,
                }
                w = x;
                steps += 1;
            }
            total += load.delays[w];
            let gain = if !total.is_finite() {
                continue;
            } else if !current.is_finite() {
                f64::INFINITY
            } else if total < current * (1.0 - MIN_IMPROVEMENT) {
                (current - total) / current
            } else {
                continue;
            };
            if best.is_none_or(|b| gain > b.0) {
                best = Some((gain, u, m));
            }
        }
    }
    best.map(|(_, u, m)| (u, m))
}

/// Fluid traffic carried on every link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrafficMap {
    /// Rate carried on each directed link, bit/s.
    pub links: BTreeMap<(NodeId, NodeId), f64>,
    /// Sum of incoming link rates per node, bit/s.
    pub input_rate: Vec<f64>,
}

impl TrafficMap {
    pub fn link_rate(&self, tx: NodeId, rx: NodeId) -> f64 {
        self.links.get(&(tx, rx)).copied().unwrap_or(0.0)
    }

    /// CSV with header `src,dst,rate_bps`, one row per carrying link.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst", "rate_bps"])?;
        for (&(s, d), &r) in &self.links {
            w.write_record([s.to_string(), d.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Propagate source rates along next hops. Disconnected nodes carry nothing.
pub fn traffic_map(strategy: &DefenderStrategy, scenario: &Scenario) -> Result<TrafficMap> {
    let n = scenario.num_nodes();
    let mut indegree = vec![0usize; n];
    for u in 0..n {
        if let Some(m) = strategy.next_hop(u) {
            indegree[m] += 1;
        }
    }
    let mut carried: Vec<f64> = (0..n)
        .map(|u| {
            if strategy.is_connected(u) {
                scenario.generation_rate(u)
            } else {
                0.0
            }
        })
        .collect();
    let mut input_rate = vec![0.0; n];
    let mut links = BTreeMap::new();
    let mut ready: Vec<NodeId> = (0..n).rev().filter(|&u| indegree[u] == 0).collect();
    let mut visited = 0;
    while let Some(u) = ready.pop() {
        visited += 1;
        if let Some(m) = strategy.next_hop(u) {
            let rate = carried[u];
            if rate > 0.0 {
                links.insert((u, m), rate);
            }
            carried[m] += rate;
            input_rate[m] += rate;
            indegree[m] -= 1;
            if indegree[m] == 0 {
                ready.push(m);
            }
        }
    }
    if visited < n {
        let stuck = (0..n).find(|&u| indegree[u] > 0).unwrap_or(0);
        return Err(Error::RoutingCycle(stuck));
    }
    Ok(TrafficMap { links, input_rate })
}
