//! Physical and link layer: path loss, block Rayleigh fading, per-channel SINR,
//! Shannon throughput and single-server queueing delay.
//!
//! Only jammer power contributes interference; defender links use orthogonal
//! channels and their mutual interference is abstracted away.

mod scenario;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scenario::{ChannelModel, JammerSpec, Node, NodeId, Scenario, Source};

#[cfg(test)]
pub(crate) use scenario::fixtures;

/// Per-channel transmit powers with the budget they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub per_channel: Vec<f64>,
    pub budget: f64,
}

impl PowerAllocation {
    pub fn zero(num_channels: usize, budget: f64) -> Self {
        Self {
            per_channel: vec![0.0; num_channels],
            budget,
        }
    }

    pub fn total(&self) -> f64 {
        self.per_channel.iter().sum()
    }

    /// Nonnegative entries summing to at most the budget (with a relative slack
    /// for floating rounding).
    pub fn is_feasible(&self) -> bool {
        self.per_channel.iter().all(|&p| p >= 0.0)
            && self.total() <= self.budget * (1.0 + 1e-12) + f64::MIN_POSITIVE
    }

    pub fn num_channels(&self) -> usize {
        self.per_channel.len()
    }
}

/// Deterministic power gain `fading * d^-exponent`.
pub fn path_gain(distance_m: f64, fading: f64, model: &ChannelModel) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::NonPositiveDistance(distance_m));
    }
    Ok(fading * distance_m.powf(-model.path_loss_exponent))
}

/// Signal-to-interference-plus-noise ratio on one channel.
pub fn sinr(power_w: f64, gain: f64, interference_w: f64, noise_w: f64) -> f64 {
    power_w * gain / (interference_w + noise_w)
}

/// Achievable throughput in bit/s, `sum_f W log2(1 + P^f H^f / (I^f + eta))`.
pub fn link_throughput(
    tx: &PowerAllocation,
    gains: &[f64],
    interference: &[f64],
    model: &ChannelModel,
) -> f64 {
    let eta = model.noise_w();
    tx.per_channel
        .iter()
        .zip(gains)
        .zip(interference)
        .map(|((&p, &h), &i)| model.bandwidth_hz * (1.0 + sinr(p, h, i, eta)).log2())
        .sum()
}

/// Mean sojourn time of a single-server queue in seconds, in packet units.
///
/// Returns `None` when the service rate does not exceed the arrival rate.
pub fn link_delay(throughput_bps: f64, arrival_bps: f64, model: &ChannelModel) -> Option<f64> {
    let mu = throughput_bps / model.packet_size_bits;
    let lambda = arrival_bps / model.packet_size_bits;
    if mu > lambda {
        Some(1.0 / (mu - lambda))
    } else {
        None
    }
}

/// One block-fading realization of every power gain in the network.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGains {
    num_nodes: usize,
    num_channels: usize,
    /// `[tx][rx][channel]`, flattened.
    node: Vec<f64>,
    /// `[rx][channel]`, flattened.
    jammer: Vec<f64>,
}

impl LinkGains {
    /// Gains for strategy-updating period `period`, a pure function of
    /// `(scenario.rng_seed, period)`.
    pub fn realize(scenario: &Scenario, period: u64) -> Result<Self> {
        let model = &scenario.channel;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
        rng.set_stream(period.wrapping_add(1));
        let fading = Exp::new(1.0 / model.mean_fading())
            .map_err(|e| Error::field("channel.rayleigh_sigma", e.to_string()))?;
        Self::build(scenario, |_| fading.sample(&mut rng))
    }

    /// Gains with every fading coefficient at its mean `2 sigma^2`.
    pub fn expected(scenario: &Scenario) -> Result<Self> {
        let mean = scenario.channel.mean_fading();
        Self::build(scenario, |_| mean)
    }

    fn build(scenario: &Scenario, mut draw: impl FnMut(()) -> f64) -> Result<Self> {
        let n = scenario.num_nodes();
        let nf = scenario.channel.num_channels;
        let model = &scenario.channel;
        let mut node = vec![0.0; n * n * nf];
        for tx in 0..n {
            for rx in 0..n {
                if tx == rx {
                    continue;
                }
                let d = scenario.distance(tx, rx);
                if d <= 0.0 {
                    return Err(Error::CoLocated { a: tx, b: rx });
                }
                for f in 0..nf {
                    node[(tx * n + rx) * nf + f] = path_gain(d, draw(()), model)?;
                }
            }
        }
        let mut jammer = vec![0.0; n * nf];
        for rx in 0..n {
            let d = scenario.jammer_distance(rx);
            for f in 0..nf {
                jammer[rx * nf + f] = path_gain(d, draw(()), model)?;
            }
        }
        Ok(Self {
            num_nodes: n,
            num_channels: nf,
            node,
            jammer,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    /// The same fading realization with the jammer moved from where `from`
    /// puts it to where `to` does. Node-to-node gains are untouched.
    pub fn with_jammer_moved(&self, from: &Scenario, to: &Scenario) -> Result<Self> {
        let mut out = self.clone();
        for rx in 0..self.num_nodes {
            let (d0, d1) = (from.jammer_distance(rx), to.jammer_distance(rx));
            let scale = path_gain(d1, 1.0, &to.channel)? / path_gain(d0, 1.0, &from.channel)?;
            let start = rx * self.num_channels;
            for g in &mut out.jammer[start..start + self.num_channels] {
                *g *= scale;
            }
        }
        Ok(out)
    }

    /// Same gain on every link and from the jammer; handy for isolating routing logic.
    #[cfg(test)]
    pub(crate) fn flat(num_nodes: usize, num_channels: usize, gain: f64) -> Self {
        let mut node = vec![gain; num_nodes * num_nodes * num_channels];
        for u in 0..num_nodes {
            for f in 0..num_channels {
                node[(u * num_nodes + u) * num_channels + f] = 0.0;
            }
        }
        Self {
            num_nodes,
            num_channels,
            node,
            jammer: vec![0.0; num_nodes * num_channels],
        }
    }

    /// Per-channel gains of link `tx -> rx`.
    pub fn link(&self, tx: NodeId, rx: NodeId) -> &[f64] {
        let start = (tx * self.num_nodes + rx) * self.num_channels;
        &self.node[start..start + self.num_channels]
    }

    /// Per-channel gains from the jammer to `rx`.
    pub fn jammer_to(&self, rx: NodeId) -> &[f64] {
        let start = rx * self.num_channels;
        &self.jammer[start..start + self.num_channels]
    }

    /// Overwrite the jammer gains towards `rx`. Used to pin a geometry in experiments.
    pub fn set_jammer_to(&mut self, rx: NodeId, gains: &[f64]) {
        let start = rx * self.num_channels;
        self.jammer[start..start + self.num_channels].copy_from_slice(gains);
    }
}

/// Interference `P_j^f H_j^f` received at `at` on `channel`.
pub fn received_interference(
    jammer_alloc: &PowerAllocation,
    gains: &LinkGains,
    at: NodeId,
    channel: usize,
) -> f64 {
    jammer_alloc.per_channel[channel] * gains.jammer_to(at)[channel]
}

/// Interference at every receiver on every channel for one jammer allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceMap {
    num_channels: usize,
    values: Vec<f64>,
}

impl InterferenceMap {
    pub fn quiet(num_nodes: usize, num_channels: usize) -> Self {
        Self {
            num_channels,
            values: vec![0.0; num_nodes * num_channels],
        }
    }

    pub fn from_jammer(jammer_alloc: &PowerAllocation, gains: &LinkGains) -> Self {
        let nf = gains.num_channels;
        let mut values = Vec::with_capacity(gains.num_nodes * nf);
        for rx in 0..gains.num_nodes {
            for f in 0..nf {
                values.push(received_interference(jammer_alloc, gains, rx, f));
            }
        }
        Self {
            num_channels: nf,
            values,
        }
    }

    pub fn at(&self, rx: NodeId) -> &[f64] {
        let start = rx * self.num_channels;
        &self.values[start..start + self.num_channels]
    }
}
