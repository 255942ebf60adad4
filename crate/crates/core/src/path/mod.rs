//! Path families that carry each state to a terminal state, and the gap
//! certificate they yield.
//!
//! A family fixes a terminal map `t`, a path `gamma_x` from `x` to `t(x)`,
//! and for terminals `a, b` a monotone path that descends to the meet
//! `a ^ b` and then ascends to `b`. Moves are unit steps `+-e_i` taken in a
//! fixed coordinate order. Path lengths count states, so a trivial path has
//! length 1.

mod audit;
mod congestion;

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;
use thiserror::Error;

use crate::ctmc::{ChainError, State};
use crate::network::{derive_catalytic_partition, CatalyticPartition, ReactionNetwork};

pub use audit::{
    audit_path_family, certify_gap, certify_network, certificate_constant, mixing_bound, terminal_pair_sum, Consistency, GapCertificate,
    PairSum, PathAudit, SUM_TOLERANCE,
};
pub use congestion::{congestion_ratio, CongestionPaths, CongestionReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PathError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("expected dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("path edge {from:?} -> {to:?} has zero rate")]
    InactiveEdge { from: State, to: State },
    #[error("path state {0:?} lies outside the box")]
    StateOutside(State),
    #[error("no catalytic partition: {0}")]
    NoPartition(String),
    #[error("terminal-pair sum not established: relative increments {increments:?}")]
    SumNotConverged { increments: Vec<f64> },
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// How the terminal map is built.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Coordinates at or above `k0` step down by the shift.
    Basic { k0: i64 },
    /// Deficient coordinates are first raised to `level` in layer order.
    Layered {
        layers: Vec<Vec<usize>>,
        threshold: u32,
        level: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFamily {
    dim: usize,
    alpha: f64,
    k: u64,
    /// Number of unit steps `ceil(3 / alpha)` taken downward per coordinate.
    shift: i64,
    construction: Construction,
    #[serde(skip)]
    order: Vec<usize>,
}

fn shift_for(alpha: f64) -> Result<i64, PathError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PathError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    Ok((3.0 / alpha).ceil() as i64)
}

impl PathFamily {
    /// Basic family with `k0 = K + ceil(3/alpha) + 1`.
    pub fn basic(dim: usize, alpha: f64, k: u64) -> Result<Self, PathError> {
        let shift = shift_for(alpha)?;
        if k < 1 {
            return Err(PathError::InvalidParameter("K must be at least 1".into()));
        }
        Self::basic_with_threshold(dim, alpha, k, k as i64 + shift + 1)
    }

    /// Basic family with an explicit threshold `k0 >= ceil(3/alpha)`.
    pub fn basic_with_threshold(dim: usize, alpha: f64, k: u64, k0: i64) -> Result<Self, PathError> {
        let shift = shift_for(alpha)?;
        if dim == 0 {
            return Err(PathError::InvalidParameter("dimension must be positive".into()));
        }
        if k0 < shift {
            return Err(PathError::InvalidParameter(format!(
                "threshold {k0} is below the shift {shift}; terminals would leave the orthant"
            )));
        }
        Ok(Self {
            dim,
            alpha,
            k,
            shift,
            construction: Construction::Basic { k0 },
            order: (0..dim).collect(),
        })
    }

    /// Layered family with `level = N + K + ceil(3/alpha) + 1`.
    pub fn layered(alpha: f64, k: u64, partition: &CatalyticPartition) -> Result<Self, PathError> {
        let shift = shift_for(alpha)?;
        if k < 1 {
            return Err(PathError::InvalidParameter("K must be at least 1".into()));
        }
        let order = partition.layer_order();
        let dim = partition.links.len();
        let mut seen = vec![false; dim];
        for &i in &order {
            if i >= dim || std::mem::replace(&mut seen[i], true) {
                return Err(PathError::InvalidParameter("partition layers are not a partition".into()));
            }
        }
        if dim == 0 || seen.iter().any(|s| !s) {
            return Err(PathError::InvalidParameter("partition layers are not a partition".into()));
        }
        let level = i64::from(partition.threshold) + k as i64 + shift + 1;
        Ok(Self {
            dim,
            alpha,
            k,
            shift,
            construction: Construction::Layered {
                layers: partition.layers.clone(),
                threshold: partition.threshold,
                level,
            },
            order,
        })
    }

    /// The basic family when every species has a plain inflow and outflow,
    /// otherwise the layered family on the derived partition.
    pub fn for_network(net: &ReactionNetwork, alpha: f64, k: u64) -> Result<Self, PathError> {
        let partition = derive_catalytic_partition(net)
            .map_err(|failure| PathError::NoPartition(failure.reason(net)))?;
        if partition.layers.len() == 1 {
            Self::basic(net.dim(), alpha, k)
        } else {
            Self::layered(alpha, k, &partition)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn shift(&self) -> i64 {
        self.shift
    }

    pub fn construction(&self) -> &Construction {
        &self.construction
    }

    /// Largest coordinate any path from `x` visits.
    pub fn reach_above(&self, x: &[i64]) -> i64 {
        let top = x.iter().copied().max().unwrap_or(0);
        match self.construction {
            Construction::Basic { .. } => top,
            Construction::Layered { level, .. } => top.max(level),
        }
    }

    fn in_core(&self, x: &[i64]) -> bool {
        match self.construction {
            Construction::Basic { .. } => false,
            Construction::Layered { level, .. } => x.iter().all(|&v| v >= level),
        }
    }

    fn check_dim(&self, x: &[i64]) -> Result<(), PathError> {
        if x.len() != self.dim {
            return Err(PathError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// The terminal state `t(x)`.
    pub fn terminal(&self, x: &[i64]) -> Result<State, PathError> {
        self.check_dim(x)?;
        Ok(self.terminal_unchecked(x))
    }

    fn terminal_unchecked(&self, x: &[i64]) -> State {
        match self.construction {
            Construction::Basic { k0 } => x
                .iter()
                .map(|&v| if v >= k0 { v - self.shift } else { v })
                .collect(),
            Construction::Layered { level, .. } => {
                x.iter().map(|&v| v.max(level) - self.shift).collect()
            }
        }
    }

    /// The raised point of the layered construction; `None` when no
    /// coordinate is raised.
    pub fn intermediate(&self, x: &[i64]) -> Result<Option<State>, PathError> {
        self.check_dim(x)?;
        Ok(match self.construction {
            Construction::Layered { level, .. } if !self.in_core(x) => {
                Some(x.iter().map(|&v| v.max(level)).collect())
            }
            _ => None,
        })
    }

    /// `gamma_x`: distinct states from `x` to `t(x)`.
    pub fn path_to_terminal(&self, x: &[i64]) -> Result<Vec<State>, PathError> {
        self.check_dim(x)?;
        Ok(self.path_to_terminal_unchecked(x))
    }

    fn path_to_terminal_unchecked(&self, x: &[i64]) -> Vec<State> {
        let mut path = vec![x.to_vec()];
        let mut cur = x.to_vec();
        let step = |cur: &mut State, i: usize, delta: i64, path: &mut Vec<State>| {
            cur[i] += delta;
            path.push(cur.clone());
        };
        match self.construction {
            Construction::Basic { k0 } => {
                for i in 0..self.dim {
                    if x[i] >= k0 {
                        for _ in 0..self.shift {
                            step(&mut cur, i, -1, &mut path);
                        }
                    }
                }
            }
            Construction::Layered { .. } if self.in_core(x) => {
                for i in 0..self.dim {
                    for _ in 0..self.shift {
                        step(&mut cur, i, -1, &mut path);
                    }
                }
            }
            Construction::Layered { level, .. } => {
                for &i in &self.order {
                    while cur[i] < level {
                        step(&mut cur, i, 1, &mut path);
                    }
                }
                for &i in &self.order {
                    for _ in 0..self.shift {
                        step(&mut cur, i, -1, &mut path);
                    }
                }
                // Raising then lowering the first coordinate in layer order
                // can revisit states when nothing else was raised.
                return loop_erase(path);
            }
        }
        path
    }

    /// Monotone path between terminals: down to the meet, then up, each
    /// phase in ascending coordinate order.
    pub fn terminal_path(&self, a: &[i64], b: &[i64]) -> Result<Vec<State>, PathError> {
        self.check_dim(a)?;
        self.check_dim(b)?;
        Ok(monotone_path(a, b))
    }

    /// `gamma_x`, then the terminal path, then `gamma_y` reversed, with
    /// loops erased.
    pub fn composed_path(&self, x: &[i64], y: &[i64]) -> Result<Vec<State>, PathError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let mut path = self.path_to_terminal_unchecked(x);
        let middle = monotone_path(&self.terminal_unchecked(x), &self.terminal_unchecked(y));
        path.extend(middle.into_iter().skip(1));
        let mut tail = self.path_to_terminal_unchecked(y);
        tail.pop();
        path.extend(tail.into_iter().rev());
        Ok(loop_erase(path))
    }
}

/// Monotone lattice path from `a` to `b` through their componentwise minimum.
pub fn monotone_path(a: &[i64], b: &[i64]) -> Vec<State> {
    let mut cur = a.to_vec();
    let mut path = vec![cur.clone()];
    for i in 0..a.len() {
        while cur[i] > b[i].min(a[i]) {
            cur[i] -= 1;
            path.push(cur.clone());
        }
    }
    for i in 0..a.len() {
        while cur[i] < b[i] {
            cur[i] += 1;
            path.push(cur.clone());
        }
    }
    path
}

/// Chronological loop erasure: on revisiting a state, the loop since its
/// first visit is cut. Consecutive states of the result are consecutive in
/// the input, so every edge is an edge of the input.
pub fn loop_erase<T: Clone + Eq + Hash>(path: Vec<T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(path.len());
    let mut position: HashMap<T, usize> = HashMap::new();
    for v in path {
        if let Some(&p) = position.get(&v) {
            for w in out.drain(p + 1..) {
                position.remove(&w);
            }
        } else {
            position.insert(v.clone(), out.len());
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_step(a: &[i64], b: &[i64]) -> bool {
        a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<i64>() == 1
    }

    fn layered_three() -> CatalyticPartition {
        use crate::network::{Catalysis, CatalyticLink};
        let plain = Catalysis {
            catalyst: None,
            multiplicity: 0,
        };
        CatalyticPartition {
            layers: vec![vec![0], vec![1], vec![2]],
            threshold: 1,
            links: (0..3)
                .map(|species| CatalyticLink {
                    species,
                    layer: species,
                    birth: plain,
                    death: plain,
                })
                .collect(),
        }
    }

    #[test]
    fn one_dimensional_threshold_four_subtracts_three() {
        let pf = PathFamily::basic_with_threshold(1, 1.0, 1, 4).unwrap();
        assert_eq!(pf.terminal(&[3]).unwrap(), vec![3]);
        assert_eq!(pf.terminal(&[4]).unwrap(), vec![1]);
        assert_eq!(pf.terminal(&[10]).unwrap(), vec![7]);
        assert_eq!(
            pf.path_to_terminal(&[7]).unwrap(),
            vec![vec![7], vec![6], vec![5], vec![4]]
        );
    }

    #[test]
    fn basic_family_three_species() {
        let pf = PathFamily::basic(3, 1.0, 2).unwrap();
        let Construction::Basic { k0 } = *pf.construction() else { panic!() };
        assert_eq!(k0, 6);
        let x = [k0 + 2, k0 - 1, k0 + 1];
        assert_eq!(pf.terminal(&x).unwrap(), vec![k0 - 1, k0 - 1, k0 - 2]);
        let path = pf.path_to_terminal(&x).unwrap();
        assert_eq!(path.len(), 7);
        // First coordinate moves first.
        assert_eq!(path[3], vec![k0 - 1, k0 - 1, k0 + 1]);
        let low = [1, 2, 3];
        assert_eq!(pf.path_to_terminal(&low).unwrap(), vec![low.to_vec()]);
    }

    #[test]
    fn layered_family_raises_then_lowers() {
        let pf = PathFamily::layered(1.0, 2, &layered_three()).unwrap();
        let Construction::Layered { level, .. } = pf.construction().clone() else { panic!() };
        assert_eq!(level, 1 + 2 + 3 + 1);
        let x = [level - 2, level - 1, level + 1];
        assert_eq!(
            pf.intermediate(&x).unwrap().unwrap(),
            vec![level, level, level + 1]
        );
        assert_eq!(pf.terminal(&x).unwrap(), vec![level - 3, level - 3, level - 2]);
        let path = pf.path_to_terminal(&x).unwrap();
        assert_eq!(path.len(), 3 + 9 + 1);
        assert!(path.windows(2).all(|w| unit_step(&w[0], &w[1])));
    }

    #[test]
    fn layered_matches_basic_on_the_core() {
        let pf = PathFamily::layered(1.0, 2, &layered_three()).unwrap();
        let basic = PathFamily::basic(3, 1.0, 2).unwrap();
        let x = [9, 12, 10];
        assert_eq!(pf.path_to_terminal(&x).unwrap(), basic.path_to_terminal(&x).unwrap());
        assert_eq!(pf.intermediate(&x).unwrap(), None);
    }

    #[test]
    fn layered_revisit_is_erased() {
        let pf = PathFamily::layered(1.0, 2, &layered_three()).unwrap();
        let Construction::Layered { level, .. } = pf.construction().clone() else { panic!() };
        let x = [level - 1, level, level];
        let path = pf.path_to_terminal(&x).unwrap();
        assert_eq!(path.first().unwrap(), &x.to_vec());
        assert_eq!(path.last().unwrap(), &pf.terminal(&x).unwrap());
        let mut sorted = path.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), path.len());
    }

    #[test]
    fn monotone_path_passes_through_meet() {
        let path = monotone_path(&[3, 1], &[1, 4]);
        assert_eq!(path.len(), 1 + 2 + 3);
        assert!(path.contains(&vec![1, 1]));
        assert_eq!(monotone_path(&[2, 2], &[2, 2]), vec![vec![2, 2]]);
    }

    #[test]
    fn loop_erasure_cuts_cycles() {
        assert_eq!(loop_erase(vec![1, 2, 3, 2, 4, 1, 5]), vec![1, 5]);
        assert_eq!(loop_erase(vec![1, 2, 3]), vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PathFamily::basic(2, 0.0, 2).is_err());
        assert!(PathFamily::basic(2, 1.0, 0).is_err());
        assert!(PathFamily::basic_with_threshold(1, 1.0, 1, 2).is_err());
        let pf = PathFamily::basic(2, 1.0, 2).unwrap();
        assert!(matches!(
            pf.terminal(&[1]),
            Err(PathError::DimensionMismatch { .. })
        ));
    }
}
