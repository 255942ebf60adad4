//! Complex balance: verification of a candidate equilibrium and a damped
//! search for one.
//!
//! For every complex `y`, the out-flux `sum_{y->y'} kappa c^y` must equal the
//! in-flux `sum_{y'->y} kappa c^{y'}`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{Complex, NetworkError, ReactionNetwork};

/// Per-complex flux comparison at a candidate equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    pub complexes: Vec<Complex>,
    /// `|out-flux - in-flux|` per complex, aligned with `complexes`.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// Largest single-complex flux; residuals are judged relative to it.
    pub max_flux: f64,
    pub tolerance: f64,
    pub balanced: bool,
}

impl BalanceReport {
    pub fn relative_residual(&self) -> f64 {
        self.max_residual / self.max_flux
    }
}

struct Fluxes {
    complexes: Vec<Complex>,
    out_flux: Vec<f64>,
    in_flux: Vec<f64>,
}

/// Order-independent summation: contributions are sorted before adding.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn check_equilibrium(net: &ReactionNetwork, c: &[f64]) -> Result<(), NetworkError> {
    if c.len() != net.dim() {
        return Err(NetworkError::DimensionMismatch {
            expected: net.dim(),
            found: c.len(),
        });
    }
    if let Some((index, &value)) = c
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
    {
        return Err(NetworkError::NonPositiveEquilibrium { index, value });
    }
    Ok(())
}

fn fluxes(net: &ReactionNetwork, c: &[f64]) -> Fluxes {
    let mut complexes = net.complexes();
    complexes.sort();
    let position = |y: &Complex| complexes.binary_search(y).expect("complex listed");
    let mut out_terms = vec![Vec::new(); complexes.len()];
    let mut in_terms = vec![Vec::new(); complexes.len()];
    for r in net.reactions() {
        let flux = r.kappa * r.source.monomial(c);
        out_terms[position(&r.source)].push(flux);
        in_terms[position(&r.product)].push(flux);
    }
    Fluxes {
        complexes: complexes.clone(),
        out_flux: out_terms.into_iter().map(sorted_sum).collect(),
        in_flux: in_terms.into_iter().map(sorted_sum).collect(),
    }
}

/// Checks complex balance at `c` with relative tolerance `1e-12`.
pub fn verify_complex_balanced(
    net: &ReactionNetwork,
    c: &[f64],
) -> Result<BalanceReport, NetworkError> {
    verify_complex_balanced_with_tolerance(net, c, 1e-12)
}

/// Checks complex balance at `c`: balanced when the largest per-complex
/// residual is at most `tolerance` times the largest per-complex flux.
pub fn verify_complex_balanced_with_tolerance(
    net: &ReactionNetwork,
    c: &[f64],
    tolerance: f64,
) -> Result<BalanceReport, NetworkError> {
    check_equilibrium(net, c)?;
    let f = fluxes(net, c);
    let residuals: Vec<f64> = f
        .out_flux
        .iter()
        .zip(&f.in_flux)
        .map(|(o, i)| (o - i).abs())
        .collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    let max_flux = f
        .out_flux
        .iter()
        .chain(&f.in_flux)
        .copied()
        .fold(f64::MIN_POSITIVE, f64::max);
    Ok(BalanceReport {
        complexes: f.complexes,
        residuals,
        max_residual,
        max_flux,
        tolerance,
        balanced: max_residual <= tolerance * max_flux,
    })
}

/// Controls for [`search_complex_balanced_with`].
#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub max_iterations: usize,
    /// Relative residual accepted as balanced.
    pub tolerance: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-10,
        }
    }
}

/// Log flux ratios `ln(in/out)` per complex and their Jacobian in `ln c`.
fn log_ratio_system(net: &ReactionNetwork, c: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = net.dim();
    let f = fluxes(net, c);
    let m = f.complexes.len();
    let position = |y: &Complex| f.complexes.binary_search(y).expect("complex listed");
    // d(ln in_y)/d(ln c) is the flux-weighted mean of the incoming sources.
    let mut in_grad = DMatrix::<f64>::zeros(m, d);
    for r in net.reactions() {
        let row = position(&r.product);
        let weight = r.kappa * r.source.monomial(c) / f.in_flux[row];
        for (k, &y) in r.source.coefficients().iter().enumerate() {
            in_grad[(row, k)] += weight * f64::from(y);
        }
    }
    let mut residual = DVector::zeros(m);
    let mut jacobian = in_grad;
    for (row, y) in f.complexes.iter().enumerate() {
        residual[row] = (f.in_flux[row] / f.out_flux[row]).ln();
        for (k, &yk) in y.coefficients().iter().enumerate() {
            jacobian[(row, k)] -= f64::from(yk);
        }
    }
    (residual, jacobian)
}

/// Every complex must both emit and receive flux for a balanced point to exist.
fn structural_obstruction(net: &ReactionNetwork) -> Option<String> {
    for y in net.complexes() {
        let emits = net.reactions().iter().any(|r| r.source == y);
        let receives = net.reactions().iter().any(|r| r.product == y);
        if !emits || !receives {
            let side = if emits { "receives no reaction" } else { "emits no reaction" };
            return Some(format!("complex {} {side}", net.describe_complex(&y)));
        }
    }
    None
}

fn gauss_newton_step(residual: &DVector<f64>, jacobian: &DMatrix<f64>, damping: f64) -> DVector<f64> {
    let jt = jacobian.transpose();
    let mut normal = &jt * jacobian;
    let scale = normal.diagonal().max().max(1.0);
    for k in 0..normal.nrows() {
        normal[(k, k)] += damping * (normal[(k, k)] + 1e-12 * scale);
    }
    let rhs = -(&jt * residual);
    normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(rhs.len()))
}

/// One undamped iteration of the multiplicative update used by the search.
///
/// A complex-balanced point is a fixed point of this map.
pub fn balance_step(net: &ReactionNetwork, c: &[f64]) -> Result<Vec<f64>, NetworkError> {
    check_equilibrium(net, c)?;
    if let Some(reason) = structural_obstruction(net) {
        return Err(NetworkError::NoCertificate {
            iterations: 0,
            residual: f64::INFINITY,
            reason,
        });
    }
    let (r, j) = log_ratio_system(net, c);
    let delta = gauss_newton_step(&r, &j, 0.0);
    Ok(c.iter().zip(delta.iter()).map(|(ci, di)| ci * di.exp()).collect())
}

/// Searches for a complex-balanced equilibrium from `init` with default options.
pub fn search_complex_balanced(
    net: &ReactionNetwork,
    init: &[f64],
) -> Result<Vec<f64>, NetworkError> {
    search_complex_balanced_with(net, init, &SearchOptions::default())
}

/// Damped Gauss-Newton iteration on the log flux ratios in `ln c`.
///
/// Failure to converge means no certificate was found; it does not prove
/// that no balanced equilibrium exists.
pub fn search_complex_balanced_with(
    net: &ReactionNetwork,
    init: &[f64],
    options: &SearchOptions,
) -> Result<Vec<f64>, NetworkError> {
    check_equilibrium(net, init)?;
    if let Some(reason) = structural_obstruction(net) {
        return Err(NetworkError::NoCertificate {
            iterations: 0,
            residual: f64::INFINITY,
            reason,
        });
    }
    let mut log_c: Vec<f64> = init.iter().map(|v| v.ln()).collect();
    let exp = |u: &[f64]| u.iter().map(|v| v.exp()).collect::<Vec<_>>();
    let mut damping = 1e-3;
    let (mut r, mut j) = log_ratio_system(net, &exp(&log_c));
    let mut cost = r.norm_squared();
    for iteration in 0..options.max_iterations {
        let c = exp(&log_c);
        let report = verify_complex_balanced_with_tolerance(net, &c, options.tolerance)?;
        if report.balanced {
            return Ok(c);
        }
        let mut accepted = false;
        for _ in 0..40 {
            let delta = gauss_newton_step(&r, &j, damping);
            let trial: Vec<f64> = log_c.iter().zip(delta.iter()).map(|(u, d)| u + d).collect();
            if trial.iter().any(|u| !u.is_finite() || u.abs() > 700.0) {
                damping *= 4.0;
                continue;
            }
            let (r_new, j_new) = log_ratio_system(net, &exp(&trial));
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                log_c = trial;
                r = r_new;
                j = j_new;
                cost = cost_new;
                damping = (damping / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            damping *= 4.0;
        }
        if !accepted {
            return Err(NetworkError::NoCertificate {
                iterations: iteration + 1,
                residual: report.relative_residual(),
                reason: "iteration stalled at a non-balanced point".into(),
            });
        }
    }
    let c = exp(&log_c);
    let report = verify_complex_balanced_with_tolerance(net, &c, options.tolerance)?;
    Err(NetworkError::NoCertificate {
        iterations: options.max_iterations,
        residual: report.relative_residual(),
        reason: "iteration budget exhausted".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    const KEY: &str = "X1 + X2 -> X2 : 2\nX2 -> X1 + X2 : 1\n0 -> X2 : 3\nX2 -> 0 : 4\n";

    #[test]
    fn key_example_equilibrium_is_ratio_of_rates() {
        let net = parse_network(KEY).unwrap();
        let report = verify_complex_balanced(&net, &[0.5, 0.75]).unwrap();
        assert!(report.balanced, "{report:?}");
        assert!(!verify_complex_balanced(&net, &[0.5, 0.8]).unwrap().balanced);
    }

    #[test]
    fn search_recovers_key_example_equilibrium() {
        let net = parse_network(KEY).unwrap();
        let c = search_complex_balanced(&net, &[1.0, 1.0]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.75).abs() < 1e-9, "{c:?}");
        let again = balance_step(&net, &c).unwrap();
        for (a, b) in c.iter().zip(&again) {
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn search_reports_structural_failure() {
        // 2 X1 only receives flux.
        let net = parse_network("0 -> X1 : 1\nX1 -> 2 X1 : 1\n").unwrap();
        assert!(matches!(
            search_complex_balanced(&net, &[1.0]),
            Err(NetworkError::NoCertificate { iterations: 0, .. })
        ));
    }

    #[test]
    fn rejects_non_positive_candidates() {
        let net = parse_network(KEY).unwrap();
        assert!(matches!(
            verify_complex_balanced(&net, &[0.5, 0.0]),
            Err(NetworkError::NonPositiveEquilibrium { index: 1, .. })
        ));
        assert!(matches!(
            verify_complex_balanced(&net, &[0.5]),
            Err(NetworkError::DimensionMismatch { .. })
        ));
    }
}
