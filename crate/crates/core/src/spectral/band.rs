//! Cholesky factorisation of symmetric banded matrices.

use super::{SpectralError, SymmetrizedOperator};

/// Lower factor `L` of `M + shift I = L L^T`, stored row by row inside the band.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    w: usize,
    /// `l[i * (w + 1) + (j + w - i)]` holds `L(i, j)` for `i - w <= j <= i`.
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(op: &SymmetrizedOperator, shift: f64) -> Result<Self, SpectralError> {
        let n = op.dim();
        let w = op.bandwidth();
        let width = w + 1;
        let mut l = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in op.row(i) {
                if j <= i {
                    l[i * width + (j + w - i)] = v;
                }
            }
            l[i * width + w] += shift;
        }
        for i in 0..n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let k_lo = lo.max(j.saturating_sub(w));
                let mut s = l[i * width + (j + w - i)];
                for k in k_lo..j {
                    s -= l[i * width + (k + w - i)] * l[j * width + (k + w - j)];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(SpectralError::Indefinite);
                    }
                    l[i * width + w] = s.sqrt();
                } else {
                    l[i * width + (j + w - i)] = s / l[j * width + w];
                }
            }
        }
        Ok(Self { n, w, l })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.w + 1) + (j + self.w - i)]
    }

    /// Solves `(M + shift I) x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.w);
            let s: f64 = (lo..i).map(|k| self.at(i, k) * x[k]).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
        for i in (0..self.n).rev() {
            let hi = (i + self.w).min(self.n - 1);
            let s: f64 = (i + 1..=hi).map(|k| self.at(k, i) * x[k]).sum();
            x[i] = (x[i] - s) / self.at(i, i);
        }
    }
}
