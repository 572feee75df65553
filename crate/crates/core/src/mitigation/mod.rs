//! Security-performance trade-off for a node whose next hop is being jammed:
//! reroute to the best alternative `l`, stay on the jammed `m`, or split
//! linearly coded symbols across both.

mod code;
pub mod gf256;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use code::{generate_code, Encoded, SecureCode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MitigationParams {
    pub alpha: f64,
    pub beta: f64,
    /// Residual risk of staying on the jammed link.
    pub epsilon: f64,
    /// Minimum performance `U = -T` (seconds, so a negative bound).
    #[serde(default)]
    pub u_th: Option<f64>,
    /// Maximum tolerated risk.
    #[serde(default)]
    pub g_th: Option<f64>,
    /// Message rate at the deciding node, messages per second.
    pub lambda: f64,
    /// Largest code dimension `r` considered.
    pub snc_search_limit: usize,
}

impl Default for MitigationParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            epsilon: 0.1,
            u_th: None,
            g_th: None,
            lambda: 80.0,
            snc_search_limit: 16,
        }
    }
}

impl MitigationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return Err(Error::field("alpha", "alpha and beta must be >= 0 with a positive sum"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::field("epsilon", "must lie in (0, 1]"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::field("lambda", "must be > 0"));
        }
        if self.snc_search_limit < 2 {
            return Err(Error::field("snc_search_limit", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    RerouteL,
    StayM,
    Snc { n_l: usize, n_m: usize },
}

impl StrategyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::RerouteL => "S_l",
            StrategyKind::StayM => "S_m",
            StrategyKind::Snc { .. } => "S_SNC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyCandidate {
    pub kind: StrategyKind,
    pub delay: f64,
    pub risk: f64,
    pub h: f64,
}

/// Delay of the coded strategy: mean path delay plus the wait for all `r` messages.
pub fn snc_delay(n_l: usize, n_m: usize, t_l: f64, t_m: f64, lambda: f64) -> f64 {
    let r = (n_l + n_m) as f64;
    (n_l as f64 * t_l + n_m as f64 * t_m) / r + (r - 1.0) / lambda
}

pub fn risk(kind: StrategyKind, epsilon: f64) -> f64 {
    match kind {
        StrategyKind::RerouteL => 1.0,
        StrategyKind::StayM => epsilon,
        StrategyKind::Snc { .. } => 0.0,
    }
}

/// `h = -α·T/T_max - β·R` for each `(kind, delay)`, `T_max` taken over the inputs.
pub fn evaluate_h(candidates: &[(StrategyKind, f64)], params: &MitigationParams) -> Vec<StrategyCandidate> {
    let t_max = candidates.iter().map(|c| c.1).fold(0.0, f64::max);
    candidates
        .iter()
        .map(|&(kind, delay)| {
            let r = risk(kind, params.epsilon);
            StrategyCandidate {
                kind,
                delay,
                risk: r,
                h: -params.alpha * delay / t_max - params.beta * r,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: StrategyCandidate,
    /// `S_l`, `S_m`, `S_SNC*` in that order.
    pub candidates: [StrategyCandidate; 3],
    /// Set when every candidate violates a bound and the least-violating one was returned.
    pub constraints_violated: bool,
}

/// Code split minimizing the coded delay, ties to the smaller `r` then smaller `n_l`.
pub fn best_split(t_l: f64, t_m: f64, params: &MitigationParams) -> (usize, usize, f64) {
    let mut best = (1, 1, snc_delay(1, 1, t_l, t_m, params.lambda));
    for r in 2..=params.snc_search_limit {
        for n_l in 1..r {
            let d = snc_delay(n_l, r - n_l, t_l, t_m, params.lambda);
            if d < best.2 {
                best = (n_l, r - n_l, d);
            }
        }
    }
    best
}

/// Pick among rerouting, staying and coding. Ties prefer coding, then staying.
pub fn choose_strategy(t_l: f64, t_m: f64, params: &MitigationParams) -> Decision {
    let (n_l, n_m, t_snc) = best_split(t_l, t_m, params);
    let evaluated = evaluate_h(
        &[
            (StrategyKind::RerouteL, t_l),
            (StrategyKind::StayM, t_m),
            (StrategyKind::Snc { n_l, n_m }, t_snc),
        ],
        params,
    );
    let candidates = [evaluated[0], evaluated[1], evaluated[2]];
    let t_max = t_l.max(t_m).max(t_snc);
    let violation = |c: &StrategyCandidate| {
        let u = params.u_th.map_or(0.0, |u| (u - (-c.delay)).max(0.0) / t_max);
        let g = params.g_th.map_or(0.0, |g| (c.risk - g).max(0.0));
        u + g
    };
    let feasible: Vec<bool> = candidates.iter().map(|c| violation(c) == 0.0).collect();
    let any = feasible.iter().any(|&f| f);
    // Ties go to coding, then the jammed link, then the alternative.
    let order = [2usize, 1, 0];
    let pick = if any {
        let mut best: Option<usize> = None;
        for &k in &order {
            if feasible[k] && best.is_none_or(|b| candidates[k].h > candidates[b].h) {
                best = Some(k);
            }
        }
        best.unwrap()
    } else {
        let mut best = order[0];
        for &k in &order[1..] {
            let (vk, vb) = (violation(&candidates[k]), violation(&candidates[best]));
            if vk < vb || (vk == vb && candidates[k].h > candidates[best].h) {
                best = k;
            }
        }
        best
    };
    Decision {
        chosen: candidates[pick],
        candidates,
        constraints_violated: !any,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "h_Sl")]
    pub h_sl: f64,
    #[serde(rename = "h_Sm")]
    pub h_sm: f64,
    #[serde(rename = "h_SNC")]
    pub h_snc: f64,
    pub chosen: String,
}

impl TradeoffRow {
    pub fn from_decision(params: &MitigationParams, d: &Decision) -> Self {
        Self {
            alpha: params.alpha,
            beta: params.beta,
            h_sl: d.candidates[0].h,
            h_sm: d.candidates[1].h,
            h_snc: d.candidates[2].h,
            chosen: d.chosen.kind.label().to_string(),
        }
    }
}

pub fn write_tradeoff_csv<W: Write>(rows: &[TradeoffRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["alpha", "beta", "h_Sl", "h_Sm", "h_SNC", "chosen"])?;
    }
    w.flush()?;
    Ok(())
}
