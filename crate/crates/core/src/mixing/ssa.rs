//! Gillespie direct-method simulation on the untruncated lattice.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::MixingError;
use crate::ctmc::{Distribution, State, TransitionModel};
use crate::network::ReactionNetwork;

/// Jump cap guarding against explosive or runaway trajectories.
pub const DEFAULT_STEP_CAP: u64 = 100_000_000;

/// Jump times and the states entered at them; `states[k]` is occupied on
/// `[times[k], times[k + 1])` and the last state until the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub horizon: f64,
}

impl Trajectory {
    pub fn jumps(&self) -> usize {
        self.times.len() - 1
    }

    /// Time spent in each state within `[from, horizon]`, in state order.
    pub fn occupancy(&self, from: f64) -> BTreeMap<State, f64> {
        let mut occupancy = BTreeMap::new();
        for (k, x) in self.states.iter().enumerate() {
            let start = self.times[k].max(from);
            let end = self.times.get(k + 1).copied().unwrap_or(self.horizon);
            if end > start {
                *occupancy.entry(x.clone()).or_insert(0.0) += end - start;
            }
        }
        occupancy
    }

    /// Time average of each coordinate over `[from, horizon]`.
    pub fn time_average(&self, from: f64) -> Vec<f64> {
        let d = self.states[0].len();
        let mut sums = vec![0.0; d];
        for (x, dt) in self.occupancy(from) {
            for (s, v) in sums.iter_mut().zip(&x) {
                *s += dt * *v as f64;
            }
        }
        let window = self.horizon - from.max(0.0);
        sums.into_iter().map(|s| s / window).collect()
    }
}

pub fn ssa_simulate(
    net: &ReactionNetwork,
    x0: &[i64],
    horizon: f64,
    seed: u64,
) -> Result<Trajectory, MixingError> {
    ssa_simulate_with(net, x0, horizon, seed, DEFAULT_STEP_CAP)
}

/// Simulates the chain from `x0` up to `horizon`. The stream is determined
/// by `seed`.
pub fn ssa_simulate_with(
    net: &ReactionNetwork,
    x0: &[i64],
    horizon: f64,
    seed: u64,
    max_steps: u64,
) -> Result<Trajectory, MixingError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(MixingError::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if x0.len() != net.dim() || x0.iter().any(|&v| v < 0) {
        return Err(MixingError::InvalidParameter(format!(
            "initial state {x0:?} is not a lattice point of dimension {}",
            net.dim()
        )));
    }
    let model = TransitionModel::new(net);
    let groups = model.displacements().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![x.clone()];
    let mut rates = vec![0.0; groups];
    let mut steps = 0u64;
    loop {
        let mut total = 0.0;
        for (g, r) in rates.iter_mut().enumerate() {
            *r = model.group_rate(g, &x);
            total += *r;
        }
        if total <= 0.0 {
            break;
        }
        let u: f64 = 1.0 - rng.gen::<f64>();
        t += -u.ln() / total;
        if t >= horizon {
            break;
        }
        if steps == max_steps {
            return Err(MixingError::StepCapExceeded { steps, time: t });
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = groups - 1;
        for (g, r) in rates.iter().enumerate() {
            acc += r;
            if target < acc && *r > 0.0 {
                chosen = g;
                break;
            }
        }
        for (v, dv) in x.iter_mut().zip(&model.displacements()[chosen]) {
            *v += dv;
        }
        steps += 1;
        times.push(t);
        states.push(x.clone());
    }
    Ok(Trajectory {
        times,
        states,
        horizon,
    })
}

/// Independent replicas, one per seed, in seed order.
pub fn ssa_replicas(
    net: &ReactionNetwork,
    x0: &[i64],
    horizon: f64,
    seeds: &[u64],
) -> Result<Vec<Trajectory>, MixingError> {
    seeds
        .par_iter()
        .map(|&seed| ssa_simulate(net, x0, horizon, seed))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalReport {
    /// Total variation between the occupancy measure and `pi`, with time
    /// spent outside the box counted as mismatch.
    pub tv: f64,
    pub outside_mass: f64,
    pub window: f64,
}

/// Compares time-averaged occupancy after `burnin` with `pi` on its box.
pub fn empirical_vs_stationary(
    trajectory: &Trajectory,
    pi: &Distribution,
    burnin: f64,
) -> Result<EmpiricalReport, MixingError> {
    if !(burnin >= 0.0) || burnin >= trajectory.horizon {
        return Err(MixingError::EmptyWindow {
            burnin,
            horizon: trajectory.horizon,
        });
    }
    let window = trajectory.horizon - burnin;
    let mut empirical = vec![0.0; pi.len()];
    let mut outside = 0.0;
    for (x, dt) in trajectory.occupancy(burnin) {
        match pi.space().index_of(&x) {
            Some(i) => empirical[i] += dt / window,
            None => outside += dt / window,
        }
    }
    let inside: f64 = empirical
        .iter()
        .zip(pi.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(EmpiricalReport {
        tv: 0.5 * (inside + outside),
        outside_mass: outside,
        window,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{StateBox, StateSpace};
    use crate::network::parse_network;

    #[test]
    fn birth_death_time_average_near_one() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        let traj = ssa_simulate(&net, &[0], 1e4, 42).unwrap();
        let mean = traj.time_average(0.0)[0];
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        let a = ssa_simulate(&net, &[3], 50.0, 7).unwrap();
        let b = ssa_simulate(&net, &[3], 50.0, 7).unwrap();
        assert_eq!(a, b);
        let c = ssa_simulate(&net, &[3], 50.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn frozen_state_waits_until_horizon() {
        let net = parse_network("X1 -> 0 : 1\n").unwrap();
        let traj = ssa_simulate(&net, &[0], 5.0, 1).unwrap();
        assert_eq!(traj.jumps(), 0);
        assert_eq!(traj.occupancy(0.0)[&vec![0]], 5.0);
    }

    #[test]
    fn step_cap_is_enforced() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        assert!(matches!(
            ssa_simulate_with(&net, &[0], 1e4, 1, 10),
            Err(MixingError::StepCapExceeded { steps: 10, .. })
        ));
    }

    #[test]
    fn empty_window_is_rejected() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        let traj = ssa_simulate(&net, &[0], 10.0, 1).unwrap();
        let pi = Distribution::from_weights(
            StateSpace::full(StateBox::new(vec![2]).unwrap()),
            vec![1.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            empirical_vs_stationary(&traj, &pi, 10.0),
            Err(MixingError::EmptyWindow { .. })
        ));
        let report = empirical_vs_stationary(&traj, &pi, 1.0).unwrap();
        assert!(report.tv >= 0.0 && report.tv <= 1.0);
    }
}
