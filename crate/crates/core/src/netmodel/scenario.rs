use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a node inside [`Scenario::nodes`].
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Position in meters.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub id: NodeId,
    /// Mean generation rate in bit/s.
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JammerSpec {
    pub x: f64,
    pub y: f64,
    pub power_budget_w: f64,
    pub enabled: bool,
    /// Link `(n, m)` the jammer was positioned against when the scenario was generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aim: Option<(NodeId, NodeId)>,
}

/// Physical channel parameters shared by every link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub num_channels: usize,
    pub bandwidth_hz: f64,
    pub path_loss_exponent: f64,
    /// Rayleigh parameter; mean power fading is `2 * sigma^2`.
    pub rayleigh_sigma: f64,
    pub noise_psd_w_per_hz: f64,
    pub packet_size_bits: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            num_channels: 10,
            bandwidth_hz: 10e3,
            path_loss_exponent: 3.0,
            rayleigh_sigma: 0.5,
            // 1e-8 W of noise per 10 kHz channel.
            noise_psd_w_per_hz: 1e-12,
            packet_size_bits: 1000.0,
        }
    }
}

impl ChannelModel {
    /// Noise power per channel in watts.
    pub fn noise_w(&self) -> f64 {
        self.noise_psd_w_per_hz * self.bandwidth_hz
    }

    pub fn mean_fading(&self) -> f64 {
        2.0 * self.rayleigh_sigma * self.rayleigh_sigma
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_channels == 0 {
            return Err(Error::field("channel.num_channels", "must be at least 1"));
        }
        let positive = [
            ("channel.bandwidth_hz", self.bandwidth_hz),
            ("channel.path_loss_exponent", self.path_loss_exponent),
            ("channel.rayleigh_sigma", self.rayleigh_sigma),
            ("channel.noise_psd_w_per_hz", self.noise_psd_w_per_hz),
            ("channel.packet_size_bits", self.packet_size_bits),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::field(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The simulated world: topology, traffic, attacker placement and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Width and height of the deployment area in meters.
    pub area_m: [f64; 2],
    pub nodes: Vec<Node>,
    pub sink: NodeId,
    pub sources: Vec<Source>,
    /// Ground truth only. Defender logic never reads it.
    pub compromised: NodeId,
    pub jammer: JammerSpec,
    pub channel: ChannelModel,
    pub node_power_budget_w: f64,
    pub neighbor_radius_m: f64,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        let (p, q) = (&self.nodes[a], &self.nodes[b]);
        (p.x - q.x).hypot(p.y - q.y)
    }

    pub fn jammer_distance(&self, n: NodeId) -> f64 {
        let p = &self.nodes[n];
        (p.x - self.jammer.x).hypot(p.y - self.jammer.y)
    }

    /// Nodes within the neighbor radius of `n`, ascending by id.
    pub fn neighbors(&self, n: NodeId) -> Vec<NodeId> {
        (0..self.num_nodes())
            .filter(|&m| m != n && self.distance(n, m) <= self.neighbor_radius_m)
            .collect()
    }

    /// Own traffic generated at `n` in bit/s.
    pub fn generation_rate(&self, n: NodeId) -> f64 {
        self.sources
            .iter()
            .filter(|s| s.id == n)
            .map(|s| s.rate_bps)
            .sum()
    }

    pub fn total_source_rate(&self) -> f64 {
        self.sources.iter().map(|s| s.rate_bps).sum()
    }

    /// Whether every node can reach the sink over the neighbor graph.
    pub fn is_connected(&self) -> bool {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        let mut stack = vec![self.sink];
        seen[self.sink] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        let n = self.num_nodes();
        if n < 2 {
            return Err(Error::field("nodes", "need at least two nodes"));
        }
        let [w, h] = self.area_m;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::field("area_m", "dimensions must be positive"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::field(
                    "nodes",
                    format!("node ids must be 0..{n} in order, found {} at index {i}", node.id),
                ));
            }
            if !(0.0..=w).contains(&node.x) || !(0.0..=h).contains(&node.y) {
                return Err(Error::field(
                    "nodes",
                    format!("node {i} at ({}, {}) lies outside the area", node.x, node.y),
                ));
            }
        }
        for a in 0..n {
            for b in a + 1..n {
                if self.distance(a, b) <= 0.0 {
                    return Err(Error::CoLocated { a, b });
                }
            }
        }
        if self.sink >= n {
            return Err(Error::field("sink", format!("{} is not a node id", self.sink)));
        }
        if self.compromised >= n {
            return Err(Error::field(
                "compromised",
                format!("{} is not a node id", self.compromised),
            ));
        }
        if self.compromised == self.sink {
            return Err(Error::field("compromised", "must differ from the sink"));
        }
        if self.sources.is_empty() {
            return Err(Error::field("sources", "at least one source required"));
        }
        for s in &self.sources {
            if s.id >= n {
                return Err(Error::field("sources", format!("{} is not a node id", s.id)));
            }
            if !(s.rate_bps.is_finite() && s.rate_bps > 0.0) {
                return Err(Error::field(
                    "sources",
                    format!("rate of source {} must be > 0", s.id),
                ));
            }
        }
        if !(self.jammer.power_budget_w >= 0.0 && self.jammer.power_budget_w.is_finite()) {
            return Err(Error::field("jammer.power_budget_w", "must be finite and >= 0"));
        }
        if !(self.node_power_budget_w > 0.0) {
            return Err(Error::field("node_power_budget_w", "must be > 0"));
        }
        if !(self.neighbor_radius_m > 0.0) {
            return Err(Error::field("neighbor_radius_m", "must be > 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
