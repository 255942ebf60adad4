//! Dirichlet forms, variances and numerical spectral gaps of truncated chains.
//!
//! For `f` on the state space,
//! `E(f, f) = -sum_x f(x) (Qf)(x) pi(x)` and
//! `E*(f) = 1/2 sum_{x,z} (f(x) - f(z))^2 pi(x) q(x, z)`;
//! they agree whenever `pi` is stationary. The gap is the infimum of
//! `E*(f) / Var(f)` over non-constant `f`, computed as the smallest non-zero
//! eigenvalue of `D^{-1/2} A D^{-1/2}` with `D = diag(pi)` and
//! `A = (D(-Q) + (-Q)^T D) / 2`.

mod band;
mod lanczos;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::ctmc::{Distribution, State, TruncatedChain};

pub use band::BandCholesky;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("function has {found} values but the space has {expected} states")]
    LengthMismatch { expected: usize, found: usize },
    #[error("distribution and chain live on different spaces")]
    SpaceMismatch,
    #[error("stationary law must be strictly positive; state {0:?} has zero mass")]
    ZeroMass(State),
    #[error("state {0:?} is not in the chain's state space")]
    StateOutside(State),
    #[error("witness set has mass {0}; it must lie strictly between 0 and 1")]
    DegenerateWitness(f64),
    #[error("chain has a single state, so the gap is undefined")]
    SingleState,
    #[error("iterative eigensolver did not converge; the gap lies in [{lower:.6e}, {upper:.6e}]")]
    NotConverged { lower: f64, upper: f64 },
    #[error("symmetric operator is not positive definite after shifting")]
    Indefinite,
}

fn check_pair(pi: &Distribution, chain: &TruncatedChain) -> Result<(), SpectralError> {
    if pi.space() != chain.space() {
        return Err(SpectralError::SpaceMismatch);
    }
    Ok(())
}

fn check_len(pi: &Distribution, f: &[f64]) -> Result<(), SpectralError> {
    if f.len() != pi.len() {
        return Err(SpectralError::LengthMismatch {
            expected: pi.len(),
            found: f.len(),
        });
    }
    Ok(())
}

/// Both Dirichlet forms of `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirichletForms {
    /// `E(f, f)`.
    pub energy: f64,
    /// `E*(f)`.
    pub symmetric: f64,
}

pub fn dirichlet_forms(
    pi: &Distribution,
    chain: &TruncatedChain,
    f: &[f64],
) -> Result<DirichletForms, SpectralError> {
    check_pair(pi, chain)?;
    check_len(pi, f)?;
    let mut energy = 0.0;
    let mut symmetric = 0.0;
    for (i, (&p, &fx)) in pi.values().iter().zip(f).enumerate() {
        let mut drift = 0.0;
        let mut spread = 0.0;
        for (j, q) in chain.row(i) {
            let diff = f[j] - fx;
            drift += q * diff;
            spread += q * diff * diff;
        }
        energy -= fx * drift * p;
        symmetric += 0.5 * spread * p;
    }
    Ok(DirichletForms { energy, symmetric })
}

pub fn mean(pi: &Distribution, f: &[f64]) -> Result<f64, SpectralError> {
    check_len(pi, f)?;
    Ok(pi.values().iter().zip(f).map(|(p, v)| p * v).sum())
}

/// `Var_pi(f)`, computed about the mean to avoid cancellation.
pub fn variance(pi: &Distribution, f: &[f64]) -> Result<f64, SpectralError> {
    let m = mean(pi, f)?;
    Ok(pi
        .values()
        .iter()
        .zip(f)
        .map(|(p, v)| p * (v - m) * (v - m))
        .sum())
}

/// Sparse symmetric matrix `D^{-1/2} A D^{-1/2}` in row-compressed form.
#[derive(Debug, Clone)]
pub struct SymmetrizedOperator {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    /// `sqrt(pi)`, the unit null vector.
    null_vector: Vec<f64>,
}

impl SymmetrizedOperator {
    pub fn new(pi: &Distribution, chain: &TruncatedChain) -> Result<Self, SpectralError> {
        check_pair(pi, chain)?;
        let n = chain.len();
        if let Some(i) = pi.values().iter().position(|p| *p <= 0.0) {
            return Err(SpectralError::ZeroMass(chain.space().state(i)));
        }
        let root: Vec<f64> = pi.values().iter().map(|p| p.sqrt()).collect();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * chain.nnz() + n);
        for i in 0..n {
            triplets.push((i, i, chain.exit_rate(i)));
            for (j, q) in chain.row(i) {
                let v = -0.5 * q * root[i] / root[j];
                triplets.push((i, j, v));
                triplets.push((j, i, v));
            }
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_start = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                cols.push(j);
                values.push(v);
                row_start[i + 1] = cols.len();
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_start[i + 1] = row_start[i + 1].max(row_start[i]);
        }
        Ok(Self {
            row_start,
            cols,
            values,
            null_vector: root,
        })
    }

    pub fn dim(&self) -> usize {
        self.null_vector.len()
    }

    pub fn null_vector(&self) -> &[f64] {
        &self.null_vector
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|(c, _)| *c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.dim())
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.dim()).map(|i| self.entry(i, i)).fold(0.0, f64::max)
    }

    /// Largest absolute row sum, an upper bound on the spectrum.
    pub fn norm_bound(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `|M v - lambda v|_2`.
    pub fn eigen_residual(&self, v: &[f64], lambda: f64) -> f64 {
        let mut mv = vec![0.0; v.len()];
        self.apply(v, &mut mv);
        mv.iter()
            .zip(v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMethod {
    Dense,
    ShiftInvertLanczos,
}

#[derive(Debug, Clone)]
pub struct GapOptions {
    /// Largest chain handled by the dense eigensolver.
    pub dense_limit: usize,
    /// Accepted eigenresidual, relative to `max(1, gap)`.
    pub tolerance: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            dense_limit: 1200,
            tolerance: 1e-8,
            krylov_dim: 60,
            max_restarts: 40,
        }
    }
}

/// Numerical spectral gap of a truncated chain.
#[derive(Debug, Clone, Serialize)]
pub struct GapEstimate {
    pub value: f64,
    pub method: GapMethod,
    /// `|M v - gap v|` for the returned unit eigenvector `v`.
    pub residual: f64,
    #[serde(rename = "box")]
    pub upper: Vec<u32>,
    pub states: usize,
    pub witness_bounds: Vec<f64>,
    /// Mean-zero, unit-variance minimiser `f = v / sqrt(pi)`.
    #[serde(skip)]
    pub eigenfunction: Vec<f64>,
}

pub fn estimate_gap(pi: &Distribution, chain: &TruncatedChain) -> Result<GapEstimate, SpectralError> {
    estimate_gap_with(pi, chain, &GapOptions::default())
}

/// Smallest non-zero eigenvalue of the symmetrized generator.
///
/// `pi` must be stationary for `chain`; the null direction `sqrt(pi)` is
/// deflated explicitly.
pub fn estimate_gap_with(
    pi: &Distribution,
    chain: &TruncatedChain,
    options: &GapOptions,
) -> Result<GapEstimate, SpectralError> {
    if chain.len() < 2 {
        return Err(SpectralError::SingleState);
    }
    let op = SymmetrizedOperator::new(pi, chain)?;
    let (value, vector, method) = if chain.len() <= options.dense_limit {
        let (value, vector) = dense_gap(&op);
        (value, vector, GapMethod::Dense)
    } else {
        let (value, vector) = lanczos::shift_invert_gap(&op, options)?;
        (value, vector, GapMethod::ShiftInvertLanczos)
    };
    let residual = op.eigen_residual(&vector, value);
    let eigenfunction = vector
        .iter()
        .zip(op.null_vector())
        .map(|(v, r)| v / r)
        .collect();
    Ok(GapEstimate {
        value,
        method,
        residual,
        upper: chain.space().bx().upper().to_vec(),
        states: chain.len(),
        witness_bounds: Vec::new(),
        eigenfunction,
    })
}

fn dense_gap(op: &SymmetrizedOperator) -> (f64, Vec<f64>) {
    let mut m = op.to_dense();
    let u = op.null_vector();
    // Lift the null eigenvalue above the spectrum.
    let shift = 2.0 * op.norm_bound() + 1.0;
    let n = op.dim();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += shift * u[i] * u[j];
        }
    }
    let eig = SymmetricEigen::new(m);
    let (k, &value) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
    lanczos::orthogonalize(&mut v, u);
    lanczos::normalize(&mut v);
    (value, v)
}

/// `E*(f) / Var(f)` for `f = 1_A` suitably centred and scaled.
pub fn witness_upper_bound(
    pi: &Distribution,
    chain: &TruncatedChain,
    set: &[State],
) -> Result<f64, SpectralError> {
    check_pair(pi, chain)?;
    let space = chain.space();
    let mut inside = vec![false; chain.len()];
    for x in set {
        let i = space
            .index_of(x)
            .ok_or_else(|| SpectralError::StateOutside(x.clone()))?;
        inside[i] = true;
    }
    let p: f64 = pi
        .values()
        .iter()
        .zip(&inside)
        .filter(|(_, &a)| a)
        .map(|(v, _)| v)
        .sum();
    if !(p > 0.0 && p < 1.0) {
        return Err(SpectralError::DegenerateWitness(p));
    }
    let mut flux = 0.0;
    for (i, &pi_i) in pi.values().iter().enumerate() {
        for (j, q) in chain.row(i) {
            if inside[i] != inside[j] {
                flux += pi_i * q;
            }
        }
    }
    Ok(flux / (2.0 * p * (1.0 - p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{solve_stationary_truncated, StateBox};
    use crate::network::parse_network;

    fn setup(text: &str, upper: Vec<u32>) -> (Distribution, TruncatedChain) {
        let net = parse_network(text).unwrap();
        let chain = TruncatedChain::from_network(&net, &StateBox::new(upper).unwrap()).unwrap();
        let pi = solve_stationary_truncated(&chain).unwrap();
        (pi, chain)
    }

    #[test]
    fn two_state_gap_is_total_rate() {
        let (pi, chain) = setup("0 <-> X : 1, 1\n", vec![1]);
        let gap = estimate_gap(&pi, &chain).unwrap();
        assert!((gap.value - 2.0).abs() < 1e-12);
        let forms = dirichlet_forms(&pi, &chain, &gap.eigenfunction).unwrap();
        assert!((forms.symmetric / variance(&pi, &gap.eigenfunction).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn immigration_death_gap_is_death_rate() {
        let (pi, chain) = setup("0 <-> X : 3, 1\n", vec![60]);
        let gap = estimate_gap(&pi, &chain).unwrap();
        assert!((gap.value - 1.0).abs() < 1e-8, "{}", gap.value);
    }

    #[test]
    fn operator_is_exactly_symmetric() {
        let (pi, chain) = setup("0 <-> X1 : 1, 1\n0 <-> X2 : 1, 1\n2 X1 + X2 -> 3 X1 + 2 X2 : 1\n0 -> 2 X1 + X2 : 1\n3 X1 + 2 X2 -> 0 : 1\n", vec![10, 10]);
        let op = SymmetrizedOperator::new(&pi, &chain).unwrap();
        for i in 0..op.dim() {
            for (j, v) in op.row(i) {
                assert_eq!(v, op.entry(j, i));
            }
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let (pi, chain) = setup("X1 + X2 -> X2 : 1\nX2 -> X1 + X2 : 1\n0 <-> X2 : 1, 1\n", vec![14, 14]);
        let dense = estimate_gap(&pi, &chain).unwrap();
        let iterative = estimate_gap_with(
            &pi,
            &chain,
            &GapOptions {
                dense_limit: 0,
                ..GapOptions::default()
            },
        )
        .unwrap();
        assert_eq!(iterative.method, GapMethod::ShiftInvertLanczos);
        assert!((dense.value - iterative.value).abs() < 1e-8, "{} vs {}", dense.value, iterative.value);
        assert!(iterative.residual < 1e-8);
    }
}
