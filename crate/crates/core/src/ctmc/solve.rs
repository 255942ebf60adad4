//! Stationary distributions of truncated chains.
//!
//! The default is Grassmann-Taksar-Heyman elimination on the band of the
//! generator: it needs no subtractions, so tiny probabilities keep full
//! relative accuracy, and fill stays inside the band. A dense LU solve with
//! one balance equation replaced by the normalization is available for
//! cross-checks. Power iteration on the uniformized chain covers chains whose
//! band is too wide to store.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{ChainError, Distribution, TruncatedChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StationaryMethod {
    Auto,
    DenseLu,
    BandedElimination,
    PowerIteration,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub method: StationaryMethod,
    /// Largest band storage (entries) for banded elimination.
    pub band_storage_limit: usize,
    /// Relative residual `|pi Q|_1 / max_exit` accepted by power iteration.
    pub power_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            method: StationaryMethod::Auto,
            band_storage_limit: 50_000_000,
            power_tolerance: 1e-10,
            max_iterations: 5_000_000,
        }
    }
}

/// Stationary distribution with default options.
pub fn solve_stationary_truncated(chain: &TruncatedChain) -> Result<Distribution, ChainError> {
    solve_stationary_with(chain, &SolveOptions::default())
}

/// Stationary distribution of an irreducible chain.
pub fn solve_stationary_with(
    chain: &TruncatedChain,
    options: &SolveOptions,
) -> Result<Distribution, ChainError> {
    let classes = chain.communicating_classes();
    if classes.len() > 1 {
        let largest = classes.iter().map(Vec::len).max().unwrap_or(0);
        let stranded = classes
            .iter()
            .filter(|c| c.len() < largest)
            .flatten()
            .take(8)
            .map(|&i| chain.space().state(i))
            .collect();
        return Err(ChainError::Reducible {
            classes: classes.len(),
            stranded,
        });
    }
    let n = chain.len();
    if n == 1 {
        return Distribution::from_weights(chain.space().clone(), vec![1.0]);
    }
    let band = chain.bandwidth();
    let method = match options.method {
        StationaryMethod::Auto if n.saturating_mul(2 * band + 1) <= options.band_storage_limit => {
            StationaryMethod::BandedElimination
        }
        StationaryMethod::Auto => StationaryMethod::PowerIteration,
        m => m,
    };
    let weights = match method {
        StationaryMethod::DenseLu => dense_lu(chain)?,
        StationaryMethod::BandedElimination => banded_elimination(chain, band)?,
        StationaryMethod::PowerIteration => power_iteration(chain, options)?,
        StationaryMethod::Auto => unreachable!("resolved above"),
    };
    Distribution::from_weights(chain.space().clone(), weights)
}

fn dense_lu(chain: &TruncatedChain) -> Result<Vec<f64>, ChainError> {
    let n = chain.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -chain.exit_rate(i);
        for (j, q) in chain.row(i) {
            a[(j, i)] = q;
        }
    }
    for col in 0..n {
        a[(n - 1, col)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| ChainError::InvalidParameter("singular generator".into()))?;
    // Rounding can leave entries of order 1e-17 below zero.
    Ok(x.iter().map(|v| v.max(0.0)).collect())
}

fn banded_elimination(chain: &TruncatedChain, w: usize) -> Result<Vec<f64>, ChainError> {
    let n = chain.len();
    let width = 2 * w + 1;
    let mut band = vec![0.0f64; n * width];
    let at = |i: usize, j: usize| i * width + (j + w - i);
    for i in 0..n {
        for (j, q) in chain.row(i) {
            band[at(i, j)] = q;
        }
    }
    let mut pivots = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(w);
        let s: f64 = (lo..k).map(|j| band[at(k, j)]).sum();
        if s <= 0.0 {
            return Err(ChainError::InvalidParameter(
                "elimination met a state with no path to lower states".into(),
            ));
        }
        pivots[k] = s;
        for i in lo..k {
            let a_ik = band[at(i, k)];
            if a_ik == 0.0 {
                continue;
            }
            let f = a_ik / s;
            for j in lo..k {
                if j != i {
                    let v = band[at(k, j)];
                    if v != 0.0 {
                        band[at(i, j)] += f * v;
                    }
                }
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(w);
        pi[k] = (lo..k).map(|i| pi[i] * band[at(i, k)]).sum::<f64>() / pivots[k];
    }
    Ok(pi)
}

fn left_multiply(chain: &TruncatedChain, v: &[f64], out: &mut [f64]) {
    for (o, (i, vi)) in out.iter_mut().zip(v.iter().enumerate()) {
        *o = -chain.exit_rate(i) * vi;
    }
    for (i, vi) in v.iter().enumerate() {
        for (j, q) in chain.row(i) {
            out[j] += vi * q;
        }
    }
}

fn power_iteration(chain: &TruncatedChain, options: &SolveOptions) -> Result<Vec<f64>, ChainError> {
    let n = chain.len();
    let scale = chain.max_exit_rate();
    // A rate above the largest exit rate keeps the jump chain aperiodic.
    let lambda = 1.05 * scale;
    let mut v = vec![1.0 / n as f64; n];
    let mut flow = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for iteration in 0..options.max_iterations {
        left_multiply(chain, &v, &mut flow);
        if iteration % 25 == 0 {
            let total: f64 = v.iter().sum();
            residual = flow.iter().map(|f| f.abs()).sum::<f64>() / (scale * total);
            if residual <= options.power_tolerance {
                return Ok(v);
            }
        }
        for (vi, fi) in v.iter_mut().zip(&flow) {
            *vi += fi / lambda;
        }
    }
    Err(ChainError::NotConverged {
        iterations: options.max_iterations,
        residual,
    })
}

/// Balance-equation residuals `|(pi Q)(y)|`.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub per_state: Vec<f64>,
    pub max_overall: f64,
    /// Largest residual over states whose whole jump neighbourhood lies in
    /// the space; zero when there is no such state.
    pub max_interior: f64,
    pub interior_states: usize,
    /// Sup-norm reach of the chain's jumps.
    pub reach: i64,
}

/// Residual of `pi` against the balance equations of `chain`.
///
/// A state is interior when every lattice point of the non-negative orthant
/// within the chain's jump reach belongs to the space, so that truncation
/// does not touch its balance equation.
pub fn stationarity_residual(
    pi: &Distribution,
    chain: &TruncatedChain,
) -> Result<ResidualReport, ChainError> {
    if pi.space() != chain.space() {
        return Err(ChainError::InvalidParameter(
            "distribution and chain live on different spaces".into(),
        ));
    }
    let space = chain.space();
    let mut flow = vec![0.0; chain.len()];
    left_multiply(chain, pi.values(), &mut flow);
    let per_state: Vec<f64> = flow.iter().map(|f| f.abs()).collect();
    let reach = (0..chain.len())
        .flat_map(|i| {
            let x = space.state(i);
            chain
                .row(i)
                .map(move |(j, _)| {
                    let z = space.state(j);
                    x.iter().zip(&z).map(|(a, b)| (a - b).abs()).max().unwrap_or(0)
                })
                .collect::<Vec<_>>()
        })
        .max()
        .unwrap_or(0);
    let upper = space.bx().upper();
    let is_interior = |x: &[i64]| {
        if x.iter().zip(upper).any(|(&v, &u)| v + reach > i64::from(u)) {
            return false;
        }
        if space.is_full() {
            return true;
        }
        neighbourhood(x, reach).all(|y| space.index_of(&y).is_some())
    };
    let mut max_interior = 0.0f64;
    let mut interior_states = 0;
    for (i, x) in space.states().enumerate() {
        if is_interior(&x) {
            interior_states += 1;
            max_interior = max_interior.max(per_state[i]);
        }
    }
    Ok(ResidualReport {
        max_overall: per_state.iter().copied().fold(0.0, f64::max),
        per_state,
        max_interior,
        interior_states,
        reach,
    })
}

fn neighbourhood(x: &[i64], r: i64) -> impl Iterator<Item = Vec<i64>> + '_ {
    let d = x.len();
    let side = (2 * r + 1) as usize;
    (0..side.pow(d as u32)).filter_map(move |mut code| {
        let mut y = Vec::with_capacity(d);
        for &xi in x {
            y.push(xi - r + (code % side) as i64);
            code /= side;
        }
        y.iter().all(|&v| v >= 0).then_some(y)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{StateBox, TruncatedChain};
    use crate::network::parse_network;

    fn chain(text: &str, upper: Vec<u32>) -> TruncatedChain {
        TruncatedChain::from_network(&parse_network(text).unwrap(), &StateBox::new(upper).unwrap())
            .unwrap()
    }

    #[test]
    fn two_state_chain_is_uniform() {
        let c = chain("0 <-> X : 1, 1\n", vec![1]);
        for method in [
            StationaryMethod::DenseLu,
            StationaryMethod::BandedElimination,
            StationaryMethod::PowerIteration,
        ] {
            let options = SolveOptions {
                method,
                ..SolveOptions::default()
            };
            let pi = solve_stationary_with(&c, &options).unwrap();
            assert!((pi.values()[0] - 0.5).abs() < 1e-10, "{method:?}");
        }
    }

    #[test]
    fn methods_agree_on_a_two_dimensional_chain() {
        let c = chain(
            "0 <-> X1 : 1, 1\n0 <-> X2 : 1, 1\n2 X1 + X2 -> 3 X1 + 2 X2 : 1\n0 -> 2 X1 + X2 : 1\n3 X1 + 2 X2 -> 0 : 1\n",
            vec![8, 8],
        );
        let solve = |method| {
            solve_stationary_with(
                &c,
                &SolveOptions {
                    method,
                    ..SolveOptions::default()
                },
            )
            .unwrap()
        };
        let lu = solve(StationaryMethod::DenseLu);
        let band = solve(StationaryMethod::BandedElimination);
        let power = solve(StationaryMethod::PowerIteration);
        assert!(lu.tv_distance(&band).unwrap() < 1e-12);
        assert!(lu.tv_distance(&power).unwrap() < 1e-6);
        assert!(stationarity_residual(&band, &c).unwrap().max_overall < 1e-14);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let c = chain("0 <-> X1 + X2 : 1, 1\nX2 <-> 2 X2 : 1, 1\n", vec![5, 5]);
        let err = solve_stationary_truncated(&c).unwrap_err();
        assert!(matches!(err, ChainError::Reducible { classes: 2, .. }), "{err}");
    }
}
