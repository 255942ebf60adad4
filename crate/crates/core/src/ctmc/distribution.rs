//! Probability distributions on state spaces and closed-form stationary laws
//! on the full lattice.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::{ChainError, State, StateBox, StateSpace};
use crate::network::{ReactionNetwork, Theta};

/// A stationary law on `Z^d_{>=0}` given by its normalized log-density.
pub trait StationaryRule: Sync {
    fn dim(&self) -> usize;

    /// `ln pi(x)`; `-inf` off the non-negative orthant.
    fn log_prob(&self, x: &[i64]) -> f64;

    fn prob(&self, x: &[i64]) -> f64 {
        self.log_prob(x).exp()
    }
}

const SERIES_LIMIT: usize = 10_000_000;

/// `pi(x) = prod_i c_i^{x_i} / prod_{j<=x_i} theta_i(j) / Z_i`.
#[derive(Debug, Clone)]
pub struct ProductFormRule {
    log_c: Vec<f64>,
    kinetics: Vec<Theta>,
    /// `sum_{j<=n} ln theta_i(j)` for `n` up to the table length.
    cumulative: Vec<Vec<f64>>,
    log_norm: Vec<f64>,
}

impl ProductFormRule {
    pub fn new(c: &[f64], kinetics: &[Theta]) -> Result<Self, ChainError> {
        if c.len() != kinetics.len() {
            return Err(ChainError::DimensionMismatch {
                expected: kinetics.len(),
                found: c.len(),
            });
        }
        let mut cumulative = Vec::with_capacity(c.len());
        let mut log_norm = Vec::with_capacity(c.len());
        for (&ci, theta) in c.iter().zip(kinetics) {
            if !(ci > 0.0 && ci.is_finite()) {
                return Err(ChainError::InvalidParameter(format!(
                    "equilibrium entries must be positive, got {ci}"
                )));
            }
            let (table, norm) = normalise_series(ci.ln(), theta)?;
            cumulative.push(table);
            log_norm.push(norm);
        }
        Ok(Self {
            log_c: c.iter().map(|v| v.ln()).collect(),
            kinetics: kinetics.to_vec(),
            cumulative,
            log_norm,
        })
    }

    /// Product form of a complex-balanced network at equilibrium `c`.
    pub fn for_network(net: &ReactionNetwork, c: &[f64]) -> Result<Self, ChainError> {
        Self::new(c, net.kinetics())
    }

    /// `ln pi_i(n)` for the marginal of species `i`.
    pub fn log_marginal(&self, i: usize, n: i64) -> f64 {
        if n < 0 {
            return f64::NEG_INFINITY;
        }
        let table = &self.cumulative[i];
        let n_us = n as usize;
        let cumulative = if n_us < table.len() {
            table[n_us]
        } else {
            let mut acc = *table.last().expect("table starts at n = 0");
            for j in table.len()..=n_us {
                acc += self.kinetics[i].eval(j as i64).ln();
            }
            acc
        };
        n as f64 * self.log_c[i] - cumulative - self.log_norm[i]
    }
}

/// Cumulative log-theta table and `ln Z` for one species.
fn normalise_series(log_c: f64, theta: &Theta) -> Result<(Vec<f64>, f64), ChainError> {
    let mut table = vec![0.0];
    let mut log_terms = vec![0.0];
    let mut max_log = 0.0f64;
    let mut n = 0usize;
    loop {
        n += 1;
        if n > SERIES_LIMIT {
            return Err(ChainError::InvalidParameter(
                "stationary series does not decay fast enough to normalise".into(),
            ));
        }
        let step = theta.eval(n as i64).ln();
        let cum = table[n - 1] + step;
        table.push(cum);
        let log_term = n as f64 * log_c - cum;
        log_terms.push(log_term);
        max_log = max_log.max(log_term);
        let log_ratio = log_c - step;
        // Once the term ratio is below 1/2 and theta is non-decreasing, the
        // remaining tail is at most the current term.
        if log_ratio < -std::f64::consts::LN_2 && log_term - max_log < -45.0 {
            break;
        }
    }
    let sum: f64 = log_terms.iter().map(|t| (t - max_log).exp()).sum();
    Ok((table, max_log + sum.ln()))
}

impl StationaryRule for ProductFormRule {
    fn dim(&self) -> usize {
        self.log_c.len()
    }

    fn log_prob(&self, x: &[i64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &n)| self.log_marginal(i, n))
            .sum()
    }
}

/// Stationary law of the two-species autocatalytic model
/// `0 <-> X1`, `0 <-> X2` (birth `kappa1`, `kappa2`, death `delta`) and
/// `X1 + X2 -> 2 X1`, `X1 + X2 -> 2 X2` (both at `rho`).
#[derive(Debug, Clone, Serialize)]
pub struct AutocatalyticRule {
    pub kappa1: f64,
    pub kappa2: f64,
    pub delta: f64,
    pub rho: f64,
    gamma1: f64,
    gamma2: f64,
    log_m: f64,
    log_ratio: f64,
}

impl AutocatalyticRule {
    pub fn new(kappa1: f64, kappa2: f64, delta: f64, rho: f64) -> Result<Self, ChainError> {
        for (name, v) in [("kappa1", kappa1), ("kappa2", kappa2), ("delta", delta), ("rho", rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ChainError::InvalidParameter(format!("{name} must be positive")));
            }
        }
        let total = kappa1 + kappa2;
        let gamma1 = delta * kappa1 / (rho * total);
        let gamma2 = delta * kappa2 / (rho * total);
        let log_m = ln_gamma(gamma1 + gamma2) - ln_gamma(gamma1) - ln_gamma(gamma2) - total / delta;
        Ok(Self {
            kappa1,
            kappa2,
            delta,
            rho,
            gamma1,
            gamma2,
            log_m,
            log_ratio: (total / delta).ln(),
        })
    }

    /// The model as a reaction network.
    pub fn network(&self) -> ReactionNetwork {
        let text = format!(
            "0 <-> X1 : {}, {}\n0 <-> X2 : {}, {}\nX1 + X2 -> 2 X1 : {}\nX1 + X2 -> 2 X2 : {}\n",
            self.kappa1, self.delta, self.kappa2, self.delta, self.rho, self.rho
        );
        ReactionNetwork::parse(&text).expect("well-formed autocatalytic network")
    }
}

impl StationaryRule for AutocatalyticRule {
    fn dim(&self) -> usize {
        2
    }

    fn log_prob(&self, x: &[i64]) -> f64 {
        if x[0] < 0 || x[1] < 0 {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (x[0] as f64, x[1] as f64);
        self.log_m - ln_gamma(a + 1.0) - ln_gamma(b + 1.0) + ln_gamma(a + self.gamma1)
            + ln_gamma(b + self.gamma2)
            - ln_gamma(a + b + self.gamma1 + self.gamma2)
            + (a + b) * self.log_ratio
    }
}

/// Independent geometric coordinates, `pi(x) = prod_i (1 - r_i) r_i^{x_i}`.
#[derive(Debug, Clone)]
pub struct GeometricRule {
    ratios: Vec<f64>,
}

impl GeometricRule {
    pub fn new(ratios: Vec<f64>) -> Result<Self, ChainError> {
        if ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
            return Err(ChainError::InvalidParameter("geometric ratios must lie in (0, 1)".into()));
        }
        Ok(Self { ratios })
    }
}

impl StationaryRule for GeometricRule {
    fn dim(&self) -> usize {
        self.ratios.len()
    }

    fn log_prob(&self, x: &[i64]) -> f64 {
        x.iter()
            .zip(&self.ratios)
            .map(|(&n, r)| {
                if n < 0 {
                    f64::NEG_INFINITY
                } else {
                    n as f64 * r.ln() + (1.0 - r).ln()
                }
            })
            .sum()
    }
}

/// A probability vector over a [`StateSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    space: StateSpace,
    values: Vec<f64>,
}

impl Distribution {
    /// Normalizes non-negative weights.
    pub fn from_weights(space: StateSpace, weights: Vec<f64>) -> Result<Self, ChainError> {
        if weights.len() != space.len() {
            return Err(ChainError::DimensionMismatch {
                expected: space.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ChainError::InvalidParameter(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(ChainError::NoMass);
        }
        let values = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { space, values })
    }

    /// Takes probabilities as given, without renormalizing; the total may
    /// fall short of 1 by a truncation error.
    pub fn from_probabilities(space: StateSpace, values: Vec<f64>) -> Result<Self, ChainError> {
        if values.len() != space.len() {
            return Err(ChainError::DimensionMismatch {
                expected: space.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ChainError::InvalidParameter(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        Ok(Self { space, values })
    }

    /// Normalizes weights given in log space.
    pub fn from_log_weights(space: StateSpace, log_weights: &[f64]) -> Result<Self, ChainError> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(ChainError::NoMass);
        }
        let weights = log_weights.iter().map(|l| (l - max).exp()).collect();
        Self::from_weights(space, weights)
    }

    /// A rule restricted to `space` and renormalized.
    pub fn from_rule(rule: &dyn StationaryRule, space: StateSpace) -> Result<Self, ChainError> {
        if rule.dim() != space.dim() {
            return Err(ChainError::DimensionMismatch {
                expected: rule.dim(),
                found: space.dim(),
            });
        }
        let logs: Vec<f64> = space.states().map(|x| rule.log_prob(&x)).collect();
        Self::from_log_weights(space, &logs)
    }

    pub fn point_mass(space: StateSpace, x: &[i64]) -> Result<Self, ChainError> {
        let i = space
            .index_of(x)
            .ok_or_else(|| ChainError::StateOutside(x.to_vec()))?;
        let mut values = vec![0.0; space.len()];
        values[i] = 1.0;
        Ok(Self { space, values })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Probability of `x`; zero outside the space.
    pub fn prob(&self, x: &[i64]) -> f64 {
        self.space.index_of(x).map_or(0.0, |i| self.values[i])
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.space.dim()];
        for (x, p) in self.space.states().zip(&self.values) {
            for (mi, &xi) in m.iter_mut().zip(&x) {
                *mi += p * xi as f64;
            }
        }
        m
    }

    /// Mass on states touching an upper face of the box.
    pub fn upper_face_mass(&self) -> f64 {
        let bx = self.space.bx();
        self.space
            .states()
            .zip(&self.values)
            .filter(|(x, _)| bx.on_upper_face(x))
            .map(|(_, p)| p)
            .sum()
    }

    /// Total variation distance; spaces must share a box.
    pub fn tv_distance(&self, other: &Distribution) -> Result<f64, ChainError> {
        if self.space.bx() != other.space.bx() {
            return Err(ChainError::InvalidParameter(
                "distributions live on different boxes".into(),
            ));
        }
        let bx = self.space.bx();
        let mut a = vec![0.0; bx.len()];
        for (i, p) in self.values.iter().enumerate() {
            a[self.space.box_index(i)] = *p;
        }
        for (i, p) in other.values.iter().enumerate() {
            a[other.space.box_index(i)] -= p;
        }
        Ok(0.5 * a.iter().map(|v| v.abs()).sum::<f64>())
    }

    /// Restriction to a sub-space, renormalized.
    pub fn restrict(&self, space: &StateSpace) -> Result<Distribution, ChainError> {
        let weights: Vec<f64> = space.states().map(|x| self.prob(&x)).collect();
        Self::from_weights(space.clone(), weights)
    }

    /// `(state, probability)` pairs in index order.
    pub fn entries(&self) -> impl Iterator<Item = (State, f64)> + '_ {
        self.space.states().zip(self.values.iter().copied())
    }
}

/// A product-form law truncated to a box.
#[derive(Debug, Clone)]
pub struct ProductForm {
    pub distribution: Distribution,
    /// Share of the box mass on the upper faces; small values indicate the
    /// box captures the law well.
    pub boundary_mass: f64,
}

/// Product-form stationary law at a complex-balanced equilibrium `c`,
/// restricted to `bx` and renormalized.
pub fn product_form_stationary(
    net: &ReactionNetwork,
    c: &[f64],
    bx: &StateBox,
) -> Result<ProductForm, ChainError> {
    let rule = ProductFormRule::for_network(net, c)?;
    let distribution = Distribution::from_rule(&rule, StateSpace::full(bx.clone()))?;
    let boundary_mass = distribution.upper_face_mass();
    Ok(ProductForm {
        distribution,
        boundary_mass,
    })
}

/// Stationary law of the autocatalytic model restricted to a 2-d box.
pub fn autocatalytic_stationary(
    kappa1: f64,
    kappa2: f64,
    delta: f64,
    rho: f64,
    bx: &StateBox,
) -> Result<Distribution, ChainError> {
    let rule = AutocatalyticRule::new(kappa1, kappa2, delta, rho)?;
    Distribution::from_rule(&rule, StateSpace::full(bx.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_action_product_form_is_poisson() {
        let rule = ProductFormRule::new(&[2.0], &[Theta::MassAction]).unwrap();
        for n in 0..30i64 {
            let exact = -2.0 + n as f64 * 2f64.ln() - ln_gamma(n as f64 + 1.0);
            assert!((rule.log_prob(&[n]) - exact).abs() < 1e-12, "n = {n}");
        }
        // Beyond the cached table.
        let far = rule.log_prob(&[400]);
        let exact = -2.0 + 400.0 * 2f64.ln() - ln_gamma(401.0);
        assert!((far - exact).abs() < 1e-9 * exact.abs());
    }

    #[test]
    fn autocatalytic_origin_mass() {
        let rule = AutocatalyticRule::new(1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((rule.prob(&[0, 0]) - (-2f64).exp()).abs() < 1e-14);
        let d = autocatalytic_stationary(1.0, 1.0, 1.0, 1.0, &StateBox::cube(2, 20).unwrap())
            .unwrap();
        assert!((d.prob(&[0, 0]) - (-2f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn geometric_rule_normalizes() {
        let rule = GeometricRule::new(vec![0.9]).unwrap();
        let total: f64 = (0..2000).map(|n| rule.prob(&[n])).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
