use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BerModel, BitCounts, BitEvent};
use crate::error::{Error, Result};

/// Result of fitting `a·exp(-bγ) + floor` to measured BER.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BerFit {
    pub model: BerModel,
    /// Root-mean-square of `measured - fitted` over the samples.
    pub residual_rms: f64,
    pub samples: usize,
}

/// Group a trace by SINR and return `(γ, empirical BER)` per distinct SINR value.
pub fn samples_from_events(events: &[BitEvent]) -> Result<Vec<(f64, f64)>> {
    let mut groups: BTreeMap<u64, BitCounts> = BTreeMap::new();
    for (k, e) in events.iter().enumerate() {
        let Some(g) = e.sinr else {
            return Err(Error::field("sinr", format!("event {k} carries no SINR")));
        };
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::field("sinr", format!("event {k} has invalid SINR {g}")));
        }
        let c = groups.entry(g.to_bits()).or_default();
        if e.correct {
            c.correct += 1;
        } else {
            c.incorrect += 1;
        }
    }
    let mut out: Vec<(f64, f64)> = groups
        .into_iter()
        .map(|(bits, c)| (f64::from_bits(bits), c.ber()))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

struct Linear {
    a: f64,
    floor: f64,
    cost: f64,
}

/// Weighted least squares for `a` and `floor` at fixed `b`, both kept nonnegative.
fn solve_linear(samples: &[(f64, f64)], weights: &[f64], b: f64) -> Linear {
    let (mut suu, mut su, mut s1, mut suy, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(g, y), &w) in samples.iter().zip(weights) {
        let u = (-b * g).exp();
        suu += w * u * u;
        su += w * u;
        s1 += w;
        suy += w * u * y;
        sy += w * y;
    }
    let det = suu * s1 - su * su;
    let (mut a, mut floor) = if det.abs() > 1e-300 {
        ((suy * s1 - su * sy) / det, (suu * sy - su * suy) / det)
    } else {
        (0.0, sy / s1)
    };
    if floor < 0.0 {
        floor = 0.0;
        a = if suu > 0.0 { suy / suu } else { 0.0 };
    }
    if a < 0.0 {
        a = 0.0;
        floor = (sy / s1).max(0.0);
    }
    let cost = samples
        .iter()
        .zip(weights)
        .map(|(&(g, y), &w)| {
            let r = y - a * (-b * g).exp() - floor;
            w * r * r
        })
        .sum();
    Linear { a, floor, cost }
}

/// Fit `a·exp(-bγ) + floor` by relative least squares.
///
/// `b` is located with a logarithmic scan followed by golden-section refinement;
/// `a` and `floor` are solved in closed form for each candidate `b`.
pub fn fit_ber_curve(samples: &[(f64, f64)]) -> Result<BerFit> {
    if samples.len() < 3 {
        return Err(Error::DegenerateSamples(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    for &(g, y) in samples {
        if !(g.is_finite() && g >= 0.0 && (0.0..=1.0).contains(&y)) {
            return Err(Error::DegenerateSamples(format!("invalid sample ({g}, {y})")));
        }
    }
    let g_min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let g_max = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    if g_max == g_min {
        return Err(Error::DegenerateSamples("all samples share one SINR".into()));
    }
    if g_min > 0.0 && 10.0 * (g_max / g_min).log10() < 10.0 {
        return Err(Error::DegenerateSamples(format!(
            "SINR span {:.2} dB is below 10 dB",
            10.0 * (g_max / g_min).log10()
        )));
    }
    let weights: Vec<f64> = samples.iter().map(|s| 1.0 / s.1.max(1e-6).powi(2)).collect();
    let cost = |t: f64| solve_linear(samples, &weights, t.exp()).cost;

    let lo = (1e-3 / g_max).ln();
    let hi = (100.0 / g_max.min(g_min.max(g_max * 1e-3))).ln();
    let steps = 400;
    let at = |k: usize| lo + (hi - lo) * k as f64 / steps as f64;
    let best = (0..=steps)
        .min_by(|&x, &y| cost(at(x)).total_cmp(&cost(at(y))))
        .unwrap();
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(steps)));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = cost(d);
        }
    }
    let t = if fc <= fd { c } else { d };
    let rate = t.exp();
    let lin = solve_linear(samples, &weights, rate);
    let model = BerModel::FittedExponential {
        a: lin.a,
        b: rate,
        floor: lin.floor,
    };
    let sq: f64 = samples
        .iter()
        .map(|&(g, y)| {
            let r = y - (lin.a * (-rate * g).exp() + lin.floor);
            r * r
        })
        .sum();
    Ok(BerFit {
        model,
        residual_rms: (sq / samples.len() as f64).sqrt(),
        samples: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(m: BerModel) -> (f64, f64, f64) {
        match m {
            BerModel::FittedExponential { a, b, floor } => (a, b, floor),
            _ => panic!("expected fitted model"),
        }
    }

    #[test]
    fn recovers_exact_parameters() {
        let truth = BerModel::FittedExponential {
            a: 0.4,
            b: 0.7,
            floor: 0.003,
        };
        let samples: Vec<(f64, f64)> = (0..17)
            .map(|k| {
                let g = 0.2 + k as f64 * 0.6;
                (g, truth.ber(g))
            })
            .collect();
        let fit = fit_ber_curve(&samples).unwrap();
        let (a, b, floor) = params(fit.model);
        assert!((a / 0.4 - 1.0).abs() < 1e-6, "a={a}");
        assert!((b / 0.7 - 1.0).abs() < 1e-6, "b={b}");
        assert!((floor / 0.003 - 1.0).abs() < 1e-6, "floor={floor}");
        assert!(fit.residual_rms < 1e-10);
    }

    #[test]
    fn approximates_bpsk_over_sampled_range() {
        let bpsk = BerModel::AnalyticBpsk;
        let samples: Vec<(f64, f64)> = (0..=10)
            .map(|k| {
                let g = 0.5 * 10f64.powf(k as f64 / 10.0);
                (g, bpsk.ber(g))
            })
            .collect();
        let fit = fit_ber_curve(&samples).unwrap();
        for k in 0..=100 {
            let g = 0.5 * 10f64.powf(k as f64 / 100.0);
            let rel = (fit.model.ber(g) / bpsk.ber(g) - 1.0).abs();
            assert!(rel < 0.10, "γ={g} rel={rel}");
        }
    }

    #[test]
    fn recovers_irreducible_floor_from_noisy_samples() {
        let truth = BerModel::FittedExponential {
            a: 0.3,
            b: 0.5,
            floor: 0.003,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let g = 0.1 + k as f64 * 0.75;
                (g, truth.ber(g) * (1.0 + rng.random_range(-0.05..0.05)))
            })
            .collect();
        let fit = fit_ber_curve(&samples).unwrap();
        let (_, _, floor) = params(fit.model);
        assert!((floor / 0.003 - 1.0).abs() < 0.2, "floor={floor}");
    }

    #[test]
    fn rejects_degenerate_samples() {
        assert!(fit_ber_curve(&[(1.0, 0.1), (2.0, 0.05)]).is_err());
        let same = [(2.0, 0.1), (2.0, 0.1), (2.0, 0.1)];
        assert!(matches!(fit_ber_curve(&same), Err(Error::DegenerateSamples(_))));
        let narrow = [(1.0, 0.1), (2.0, 0.05), (5.0, 0.01)];
        assert!(fit_ber_curve(&narrow).is_err());
    }

    #[test]
    fn groups_trace_by_sinr() {
        let e = |g: f64, correct| BitEvent {
            period: 0,
            channel: 0,
            correct,
            sinr: Some(g),
        };
        let events = [e(2.0, true), e(1.0, false), e(2.0, false), e(1.0, true), e(2.0, true), e(2.0, true)];
        assert_eq!(samples_from_events(&events).unwrap(), vec![(1.0, 0.5), (2.0, 0.25)]);
        let missing = [BitEvent {
            sinr: None,
            ..e(1.0, true)
        }];
        let err = samples_from_events(&missing).unwrap_err();
        assert!(err.to_string().contains("sinr"));
    }
}
