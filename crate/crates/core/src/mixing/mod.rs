//! Transient laws by uniformization, total-variation mixing times, variance
//! decay checks, and exact stochastic simulation.
//!
//! Uniformization writes `e^{tQ} = sum_k Poisson(k; L t) P^k` with
//! `P = I + Q / L` and `L` the largest exit rate. The series is cut once the
//! remaining Poisson mass is provably below the tolerance, so the mass lost
//! is bounded by the reported error.

mod ssa;

use serde::Serialize;
use thiserror::Error;

use crate::ctmc::{ChainError, Distribution, State, TruncatedChain};
use crate::path::{mixing_bound, PathError};
use crate::spectral::{variance, SpectralError};

pub use ssa::{
    empirical_vs_stationary, ssa_replicas, ssa_simulate, ssa_simulate_with, EmpiricalReport,
    Trajectory, DEFAULT_STEP_CAP,
};

/// Default bound on the discarded Poisson mass per propagation.
pub const SERIES_TOLERANCE: f64 = 1e-12;

/// Largest `L * dt` handled in one series; longer times are split.
const MAX_SPAN: f64 = 400.0;

/// Additive slack in the variance decay comparison.
const DECAY_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MixingError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("total variation still {tv:.3e} at the horizon t = {horizon}")]
    HorizonExceeded { horizon: f64, tv: f64 },
    #[error("variance decay violated at t = {t}: {variance:.6e} > {bound:.6e}")]
    DecayViolated { t: f64, variance: f64, bound: f64 },
    #[error("simulation stopped after {steps} jumps at t = {time}")]
    StepCapExceeded { steps: u64, time: f64 },
    #[error("burn-in {burnin} leaves no window before the horizon {horizon}")]
    EmptyWindow { burnin: f64, horizon: f64 },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    /// Row vectors: `mu -> mu P`.
    Forward,
    /// Column vectors: `f -> P f`.
    Backward,
}

/// The uniformized jump chain of a truncated generator.
#[derive(Debug, Clone, Copy)]
pub struct Uniformized<'a> {
    chain: &'a TruncatedChain,
    rate: f64,
    /// Largest number of stored entries in one row.
    fanout: usize,
}

impl<'a> Uniformized<'a> {
    pub fn new(chain: &'a TruncatedChain) -> Self {
        let max = chain.max_exit_rate();
        Self {
            chain,
            rate: if max > 0.0 { max } else { 1.0 },
            fanout: (0..chain.len()).map(|i| chain.row(i).count()).max().unwrap_or(0),
        }
    }

    /// The uniformization rate `L`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn step(&self, v: &[f64], out: &mut [f64], direction: Direction) {
        let inv = 1.0 / self.rate;
        match direction {
            Direction::Forward => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = v[i] * (1.0 - self.chain.exit_rate(i) * inv);
                }
                for (i, &vi) in v.iter().enumerate() {
                    if vi == 0.0 {
                        continue;
                    }
                    for (j, q) in self.chain.row(i) {
                        out[j] += vi * q * inv;
                    }
                }
            }
            Direction::Backward => {
                for (i, o) in out.iter_mut().enumerate() {
                    let jump: f64 = self.chain.row(i).map(|(j, q)| q * v[j]).sum();
                    *o = v[i] * (1.0 - self.chain.exit_rate(i) * inv) + jump * inv;
                }
            }
        }
    }

    /// `e^{tQ}` applied in `direction`; returns the result and an error
    /// bound: the discarded Poisson mass plus first-order rounding of
    /// `fanout + 2` operations per entry and step, relative to the sup norm.
    fn propagate(&self, v: &[f64], t: f64, tolerance: f64, direction: Direction) -> (Vec<f64>, f64) {
        if t <= 0.0 {
            return (v.to_vec(), 0.0);
        }
        let pieces = (self.rate * t / MAX_SPAN).ceil().max(1.0);
        let lambda = self.rate * t / pieces;
        let piece_tolerance = tolerance / pieces;
        let mut current = v.to_vec();
        let mut term = vec![0.0; v.len()];
        let mut next = vec![0.0; v.len()];
        let mut error = 0.0;
        let mut steps = 0.0;
        for _ in 0..pieces as usize {
            let mut weight = (-lambda).exp();
            let mut acc: Vec<f64> = current.iter().map(|x| weight * x).collect();
            term.copy_from_slice(&current);
            let mut k = 0.0;
            loop {
                let upcoming = weight * lambda / (k + 1.0);
                // Poisson tail beyond k is at most w_{k+1} / (1 - lambda / (k + 2)).
                if k + 2.0 > lambda {
                    let tail = upcoming / (1.0 - lambda / (k + 2.0));
                    if tail < piece_tolerance {
                        error += tail;
                        break;
                    }
                }
                self.step(&term, &mut next, direction);
                std::mem::swap(&mut term, &mut next);
                steps += 1.0;
                k += 1.0;
                weight = upcoming;
                for (a, x) in acc.iter_mut().zip(&term) {
                    *a += weight * x;
                }
            }
            current = acc;
        }
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) * v.len().min(self.fanout + 2) as f64;
        let rounding = (steps + pieces) * (self.fanout + 2) as f64 * f64::EPSILON * scale;
        (current, error + rounding)
    }
}

/// Law at time `t` of the chain started at `x0`.
#[derive(Debug, Clone)]
pub struct TransientSolution {
    pub time: f64,
    pub distribution: Distribution,
    /// Bound on the probability mass lost to series truncation.
    pub error_bound: f64,
}

pub fn transient_distribution(
    chain: &TruncatedChain,
    x0: &[i64],
    t: f64,
) -> Result<TransientSolution, MixingError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(MixingError::InvalidParameter(format!("time must be non-negative, got {t}")));
    }
    let start = Distribution::point_mass(chain.space().clone(), x0)?;
    let (values, error_bound) =
        Uniformized::new(chain).propagate(start.values(), t, SERIES_TOLERANCE, Direction::Forward);
    let values = values.into_iter().map(|p| p.max(0.0)).collect();
    Ok(TransientSolution {
        time: t,
        distribution: Distribution::from_probabilities(chain.space().clone(), values)?,
        error_bound,
    })
}

/// Half the l1 distance between two distributions on the same box.
pub fn tv_distance(mu: &Distribution, nu: &Distribution) -> Result<f64, MixingError> {
    Ok(mu.tv_distance(nu)?)
}

fn tv_to(values: &[f64], pi: &Distribution) -> f64 {
    0.5 * values
        .iter()
        .zip(pi.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

fn check_pair(chain: &TruncatedChain, pi: &Distribution) -> Result<(), MixingError> {
    if pi.space() != chain.space() {
        return Err(MixingError::InvalidParameter(
            "distribution and chain live on different state spaces".into(),
        ));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<(), MixingError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(MixingError::InvalidParameter(format!("epsilon must lie in (0, 1/2), got {eps}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct MixingOptions {
    pub grid_step: f64,
    pub horizon: f64,
    pub time_tolerance: f64,
}

impl Default for MixingOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.05,
            horizon: 500.0,
            time_tolerance: 1e-4,
        }
    }
}

pub fn mixing_time_numeric(
    chain: &TruncatedChain,
    pi: &Distribution,
    x0: &[i64],
    eps: f64,
) -> Result<f64, MixingError> {
    mixing_time_numeric_with(chain, pi, x0, eps, &MixingOptions::default())
}

/// First time the law from `x0` is within `eps` of `pi` in total variation:
/// the first grid time below `eps`, refined by bisection against the grid
/// point before it.
pub fn mixing_time_numeric_with(
    chain: &TruncatedChain,
    pi: &Distribution,
    x0: &[i64],
    eps: f64,
    options: &MixingOptions,
) -> Result<f64, MixingError> {
    check_pair(chain, pi)?;
    check_eps(eps)?;
    let u = Uniformized::new(chain);
    let forward = |v: &[f64], dt: f64| u.propagate(v, dt, SERIES_TOLERANCE, Direction::Forward).0;
    let mut current = Distribution::point_mass(chain.space().clone(), x0)?
        .values()
        .to_vec();
    if tv_to(&current, pi) <= eps {
        return Ok(0.0);
    }
    let mut t = 0.0;
    loop {
        if t >= options.horizon {
            return Err(MixingError::HorizonExceeded {
                horizon: options.horizon,
                tv: tv_to(&current, pi),
            });
        }
        let next = forward(&current, options.grid_step);
        if tv_to(&next, pi) <= eps {
            break;
        }
        current = next;
        t += options.grid_step;
    }
    let (mut lo, mut hi) = (t, t + options.grid_step);
    while hi - lo > options.time_tolerance {
        let mid = 0.5 * (lo + hi);
        let trial = forward(&current, mid - lo);
        if tv_to(&trial, pi) <= eps {
            hi = mid;
        } else {
            lo = mid;
            current = trial;
        }
    }
    Ok(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvPoint {
    pub t: f64,
    pub tv: f64,
    /// `(2 / pi(x0)) e^{-gap t}`.
    pub bound: f64,
}

/// Total variation to `pi` from `x0` at the given times, with the bound
/// implied by a gap value.
pub fn tv_curve(
    chain: &TruncatedChain,
    pi: &Distribution,
    x0: &[i64],
    times: &[f64],
    gap: f64,
) -> Result<Vec<TvPoint>, MixingError> {
    check_pair(chain, pi)?;
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.first().is_some_and(|&t| t < 0.0) {
        return Err(MixingError::InvalidParameter("times must be non-negative".into()));
    }
    let u = Uniformized::new(chain);
    let start = Distribution::point_mass(chain.space().clone(), x0)?;
    let pi_x0 = pi.prob(x0);
    let mut current = start.values().to_vec();
    let mut now = 0.0;
    let mut points = Vec::with_capacity(sorted.len());
    for t in sorted {
        current = u.propagate(&current, t - now, SERIES_TOLERANCE, Direction::Forward).0;
        now = t;
        points.push(TvPoint {
            t,
            tv: tv_to(&current, pi),
            bound: 2.0 / pi_x0 * (-gap * t).exp(),
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    /// `Var_pi(P_t f)`.
    pub variance: f64,
    /// `e^{-2 C t} Var_pi(f)`.
    pub bound: f64,
    /// `bound + 1e-10 - variance`; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub constant: f64,
    pub points: Vec<DecayPoint>,
}

impl DecayReport {
    pub fn first_violation(&self) -> Option<&DecayPoint> {
        self.points.iter().find(|p| p.margin < 0.0)
    }

    pub fn ensure(&self) -> Result<(), MixingError> {
        match self.first_violation() {
            Some(p) => Err(MixingError::DecayViolated {
                t: p.t,
                variance: p.variance,
                bound: p.bound,
            }),
            None => Ok(()),
        }
    }
}

/// Compares `Var_pi(P_t f)` with `e^{-2 C t} Var_pi(f)` at each time.
pub fn l2_decay_check(
    chain: &TruncatedChain,
    pi: &Distribution,
    f: &[f64],
    constant: f64,
    times: &[f64],
) -> Result<DecayReport, MixingError> {
    check_pair(chain, pi)?;
    if f.len() != chain.len() {
        return Err(MixingError::InvalidParameter(format!(
            "function has {} values for {} states",
            f.len(),
            chain.len()
        )));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.first().is_some_and(|&t| t < 0.0) {
        return Err(MixingError::InvalidParameter("times must be non-negative".into()));
    }
    let initial = variance(pi, f)?;
    let u = Uniformized::new(chain);
    let mut current = f.to_vec();
    let mut now = 0.0;
    let mut points = Vec::with_capacity(sorted.len());
    for t in sorted {
        current = u.propagate(&current, t - now, SERIES_TOLERANCE, Direction::Backward).0;
        now = t;
        let v = variance(pi, &current)?;
        let bound = (-2.0 * constant * t).exp() * initial;
        points.push(DecayPoint {
            t,
            variance: v,
            bound,
            margin: bound + DECAY_SLACK - v,
        });
    }
    Ok(DecayReport { constant, points })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub x0: State,
    pub eps: f64,
    pub tau_numeric: f64,
    pub tau_bound: f64,
    pub gap_used: f64,
}

/// Numeric mixing time next to the bound `(|ln(eps/2)| + |ln pi(x0)|) / gap`.
pub fn mixing_report(
    chain: &TruncatedChain,
    pi: &Distribution,
    x0: &[i64],
    eps: f64,
    gap_used: f64,
    log_pi_x0: f64,
) -> Result<MixingReport, MixingError> {
    let tau_bound = mixing_bound(gap_used, log_pi_x0, eps)?;
    let tau_numeric = mixing_time_numeric(chain, pi, x0, eps)?;
    Ok(MixingReport {
        x0: x0.to_vec(),
        eps,
        tau_numeric,
        tau_bound,
        gap_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{solve_stationary_truncated, StateBox};
    use crate::network::parse_network;
    use crate::spectral::estimate_gap;

    fn chain(text: &str, upper: Vec<u32>) -> TruncatedChain {
        let net = parse_network(text).unwrap();
        TruncatedChain::from_network(&net, &StateBox::new(upper).unwrap()).unwrap()
    }

    #[test]
    fn two_state_closed_form() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![1]);
        let at_zero = transient_distribution(&c, &[0], 0.0).unwrap();
        assert_eq!(at_zero.distribution.values(), &[1.0, 0.0]);
        let s = transient_distribution(&c, &[0], 1.0).unwrap();
        let exact = 0.5 * (1.0 + (-2.0f64).exp());
        assert!((s.distribution.values()[0] - exact).abs() < 1e-12);
        assert!(s.error_bound <= SERIES_TOLERANCE);
    }

    #[test]
    fn mass_is_conserved_over_long_times() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![40]);
        let s = transient_distribution(&c, &[0], 20.0).unwrap();
        let total: f64 = s.distribution.values().iter().sum();
        assert!((total - 1.0).abs() <= SERIES_TOLERANCE + 1e-13, "{total}");
        let pi = solve_stationary_truncated(&c).unwrap();
        assert!(tv_distance(&s.distribution, &pi).unwrap() < 1e-9);
    }

    #[test]
    fn two_state_mixing_time() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![1]);
        let pi = solve_stationary_truncated(&c).unwrap();
        let tau = mixing_time_numeric(&c, &pi, &[0], 0.25).unwrap();
        assert!((tau - 0.25 * 4f64.ln()).abs() < 1e-4, "{tau}");
    }

    #[test]
    fn two_state_variance_decay_is_tight() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![1]);
        let pi = solve_stationary_truncated(&c).unwrap();
        let report = l2_decay_check(&c, &pi, &[1.0, -1.0], 2.0, &[0.1, 0.5, 1.0, 3.0]).unwrap();
        for p in &report.points {
            assert!((p.variance - p.bound).abs() < 1e-12, "{p:?}");
        }
        report.ensure().unwrap();
    }

    #[test]
    fn inflated_constant_is_caught() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![30]);
        let pi = solve_stationary_truncated(&c).unwrap();
        let gap = estimate_gap(&pi, &c).unwrap().value;
        let f: Vec<f64> = (0..=30).map(f64::from).collect();
        let times = [0.5, 1.0, 2.0, 4.0];
        l2_decay_check(&c, &pi, &f, gap, &times).unwrap().ensure().unwrap();
        let report = l2_decay_check(&c, &pi, &f, 1.1 * gap, &times).unwrap();
        assert!(matches!(report.ensure(), Err(MixingError::DecayViolated { .. })));
    }

    #[test]
    fn tv_curve_respects_gap_bound() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![30]);
        let pi = solve_stationary_truncated(&c).unwrap();
        let gap = estimate_gap(&pi, &c).unwrap().value;
        let curve = tv_curve(&c, &pi, &[10], &[0.0, 1.0, 2.0, 5.0], gap).unwrap();
        assert!(curve.iter().all(|p| p.tv <= p.bound));
        assert!(curve.windows(2).all(|w| w[1].tv <= w[0].tv));
    }

    #[test]
    fn rejects_bad_epsilon() {
        let c = chain("0 <-> X1 : 1, 1\n", vec![1]);
        let pi = solve_stationary_truncated(&c).unwrap();
        assert!(mixing_time_numeric(&c, &pi, &[0], 0.5).is_err());
        assert!(mixing_time_numeric(&c, &pi, &[0], 0.0).is_err());
    }
}
