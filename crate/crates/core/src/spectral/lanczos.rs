//! Shift-invert Lanczos for the smallest non-zero eigenvalue.
//!
//! Runs Lanczos with full reorthogonalisation on `P (M + s I)^{-1} P`, where
//! `P` projects out `sqrt(pi)`. The largest Ritz value of that operator maps
//! back to the gap. Restarts reuse the best Ritz vector.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BandCholesky, GapOptions, SpectralError, SymmetrizedOperator};

pub(super) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(super) fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Removes the component along the unit vector `u`.
pub(super) fn orthogonalize(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u);
    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
}

pub(super) fn shift_invert_gap(
    op: &SymmetrizedOperator,
    options: &GapOptions,
) -> Result<(f64, Vec<f64>), SpectralError> {
    let n = op.dim();
    let u = op.null_vector().to_vec();
    let shift = (1e-6 * op.max_diagonal()).max(1e-12);
    let factor = BandCholesky::factor(op, shift)?;
    let apply = |x: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend_from_slice(x);
        orthogonalize(out, &u);
        factor.solve_in_place(out);
        orthogonalize(out, &u);
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut start: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    orthogonalize(&mut start, &u);
    normalize(&mut start);

    let krylov = options.krylov_dim.min(n - 1).max(1);
    let mut best = (f64::NAN, start.clone(), f64::INFINITY);
    for _ in 0..=options.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = Vec::with_capacity(n);
        for k in 0..krylov {
            apply(&basis[k], &mut w);
            let a = dot(&w, &basis[k]);
            alpha.push(a);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(&w, q);
                    w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
                orthogonalize(&mut w, &u);
            }
            let b = normalize(&mut w);
            let exhausted = b < 1e-13 * alpha.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let check = exhausted || k + 1 == krylov || (k + 1) % 10 == 0;
            if check {
                let (value, vector) = ritz(&alpha, &beta, &basis);
                let rayleigh = rayleigh_quotient(op, &vector);
                let residual = op.eigen_residual(&vector, rayleigh);
                if residual < best.2 {
                    best = (rayleigh, vector, residual);
                }
                let _ = value;
                if best.2 <= options.tolerance * best.0.abs().max(1.0) {
                    return Ok((best.0, best.1));
                }
            }
            if exhausted || k + 1 == krylov {
                break;
            }
            beta.push(b);
            basis.push(w.clone());
        }
        start = best.1.clone();
    }
    Err(SpectralError::NotConverged {
        lower: best.0 - best.2,
        upper: best.0 + best.2,
    })
}

/// Largest Ritz pair of the tridiagonal projection.
fn ritz(alpha: &[f64], beta: &[f64], basis: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (k, &theta) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty tridiagonal");
    let n = basis[0].len();
    let mut v = vec![0.0; n];
    for (coef, q) in eig.eigenvectors.column(k).iter().zip(basis) {
        v.iter_mut().zip(q).for_each(|(x, y)| *x += coef * y);
    }
    normalize(&mut v);
    (theta, v)
}

fn rayleigh_quotient(op: &SymmetrizedOperator, v: &[f64]) -> f64 {
    let mut mv = vec![0.0; v.len()];
    op.apply(v, &mut mv);
    dot(v, &mv) / dot(v, v)
}
