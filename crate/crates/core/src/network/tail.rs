//! Tail-decay parameters `(alpha, K)` of a product-form stationary law.
//!
//! With `pi(x) / pi(x - e_i) = c_i / theta_i(x_i)`, the requirement is
//! `c_i / theta_i(n) <= n^-alpha` for every `n >= K` and every species.
//! `K` is the smallest such value that is at least 2.

use serde::Serialize;

use super::{NetworkError, ReactionNetwork, Theta};

/// Exponents tried in order; larger exponents give shorter paths.
pub const ALPHA_CANDIDATES: [f64; 3] = [1.0, 0.5, 0.25];

const MIN_K: u64 = 2;
const SCAN_LIMIT: u64 = 10_000_000;
const RELATIVE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailDecay {
    pub alpha: f64,
    pub k: u64,
}

fn holds(theta: &Theta, c: f64, alpha: f64, n: u64) -> bool {
    let x = n as f64;
    c / theta.eval(n as i64) <= x.powf(-alpha) * (1.0 + RELATIVE_SLACK)
}

/// Smallest `n0` beyond which the inequality is guaranteed by monotonicity.
fn guaranteed_from(theta: &Theta, c: f64, alpha: f64) -> Option<u64> {
    let power_threshold = |beta: f64, scale: f64| -> Option<u64> {
        // scale * n^beta >= c n^alpha  <=>  n^(beta - alpha) >= c / scale
        let ratio = c / scale;
        if beta > alpha {
            let n = ratio.max(1.0).powf(1.0 / (beta - alpha)).ceil();
            (n <= SCAN_LIMIT as f64).then_some(n as u64)
        } else if beta == alpha && ratio <= 1.0 + RELATIVE_SLACK {
            Some(1)
        } else {
            None
        }
    };
    match theta {
        Theta::MassAction => power_threshold(1.0, 1.0),
        Theta::Power(beta) => power_threshold(*beta, 1.0),
        Theta::FallingFactorialPoly(coeffs) => {
            let top = coeffs.iter().rposition(|v| *v > 0.0)?;
            let degree = (top + 1) as f64;
            if top == 0 {
                return power_threshold(1.0, coeffs[0]);
            }
            if degree < alpha {
                return None;
            }
            // theta(n) >= c_J (n - J + 1)^J for n >= J, and
            // (n - J + 1)^J / n^alpha increases there.
            let lower = |n: u64| coeffs[top] * ((n - top as u64) as f64).powf(degree);
            let ok = |n: u64| lower(n) >= c * (n as f64).powf(alpha);
            let mut hi = (top + 1) as u64;
            while !ok(hi) {
                hi = hi.checked_mul(2)?;
                if hi > SCAN_LIMIT {
                    return None;
                }
            }
            let mut lo = (top + 1) as u64;
            while lo < hi {
                let mid = lo + (hi - lo) / 2;
                if ok(mid) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Some(hi)
        }
    }
}

/// Smallest `K >= 2` with `c / theta(n) <= n^-alpha` for all `n >= K`.
pub fn tail_decay_for_alpha(theta: &Theta, c: f64, alpha: f64) -> Option<u64> {
    let n0 = guaranteed_from(theta, c, alpha)?;
    let last_failure = (1..=n0).rev().find(|&n| !holds(theta, c, alpha, n));
    Some(last_failure.map_or(1, |n| n + 1).max(MIN_K))
}

/// Finds the largest `alpha` in [`ALPHA_CANDIDATES`] that works for every
/// species, together with the smallest common `K`.
pub fn tail_decay_parameters(net: &ReactionNetwork, c: &[f64]) -> Result<TailDecay, NetworkError> {
    tail_decay_candidates(net, c)?
        .into_iter()
        .next()
        .ok_or_else(|| {
            NetworkError::TailTooHeavy(format!(
                "equilibrium {c:?} with kinetics {:?}",
                net.kinetics()
            ))
        })
}

/// Every candidate `alpha` that works for all species, largest first.
pub fn tail_decay_candidates(net: &ReactionNetwork, c: &[f64]) -> Result<Vec<TailDecay>, NetworkError> {
    if c.len() != net.dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: net.dim(),
            found: c.len(),
        });
    }
    Ok(ALPHA_CANDIDATES
        .into_iter()
        .filter_map(|alpha| {
            let ks: Option<Vec<u64>> = net
                .kinetics()
                .iter()
                .zip(c)
                .map(|(theta, &ci)| tail_decay_for_alpha(theta, ci, alpha))
                .collect();
            ks.map(|ks| TailDecay {
                alpha,
                k: ks.into_iter().max().unwrap_or(MIN_K),
            })
        })
        .collect())
}

/// Tail parameters for the two-species autocatalytic model, whose ratio
/// `pi(x) / pi(x - e_i)` is at most `(kappa1 + kappa2) / (delta x_i)`.
pub fn autocatalytic_tail_decay(kappa1: f64, kappa2: f64, delta: f64) -> TailDecay {
    let r = (kappa1 + kappa2) / delta;
    TailDecay {
        alpha: 0.5,
        k: ((r * r).ceil() as u64).max(MIN_K),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_action_unit_equilibrium() {
        assert_eq!(tail_decay_for_alpha(&Theta::MassAction, 1.0, 1.0), Some(2));
        assert_eq!(tail_decay_for_alpha(&Theta::MassAction, 1.5, 1.0), None);
        assert_eq!(tail_decay_for_alpha(&Theta::MassAction, 4.0, 0.5), Some(16));
    }

    #[test]
    fn power_kinetics() {
        assert_eq!(tail_decay_for_alpha(&Theta::Power(2.0), 4.0, 1.0), Some(4));
        assert_eq!(tail_decay_for_alpha(&Theta::Power(0.5), 1.0, 1.0), None);
    }

    #[test]
    fn poly_kinetics_matches_brute_force() {
        let theta = Theta::FallingFactorialPoly(vec![0.1, 0.05]);
        let k = tail_decay_for_alpha(&theta, 3.0, 1.0).unwrap();
        for n in k..5000 {
            assert!(holds(&theta, 3.0, 1.0, n));
        }
        assert!(!holds(&theta, 3.0, 1.0, k - 1));
    }

    #[test]
    fn autocatalytic_unit_rates() {
        assert_eq!(
            autocatalytic_tail_decay(1.0, 1.0, 1.0),
            TailDecay { alpha: 0.5, k: 4 }
        );
    }
}
