//! Continuous-time Markov chains induced by reaction networks on `Z^d_{>=0}`
//! and their conservative truncations to finite boxes.
//!
//! Box states are indexed lexicographically (last coordinate fastest), so
//! index order and lexicographic state order coincide.

mod distribution;
mod solve;

use std::collections::HashMap;

use serde::Serialize;
use thiserror::Error;

use crate::network::{Reaction, ReactionNetwork, Theta};

pub use distribution::{
    autocatalytic_stationary, product_form_stationary, AutocatalyticRule, Distribution,
    GeometricRule, ProductForm, ProductFormRule, StationaryRule,
};
pub use solve::{
    solve_stationary_truncated, solve_stationary_with, stationarity_residual, ResidualReport,
    SolveOptions, StationaryMethod,
};

/// A lattice state. Coordinates are signed so that displacements compose.
pub type State = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("box with upper corner {0:?} has too many states")]
    TooManyStates(Vec<u32>),
    #[error("expected dimension {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("state {0:?} is not in the state space")]
    StateOutside(State),
    #[error("truncated chain is reducible: {classes} communicating classes; stranded states include {stranded:?}")]
    Reducible { classes: usize, stranded: Vec<State> },
    #[error("iterative solve stopped after {iterations} iterations at relative residual {residual:.3e}")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("distribution has no positive mass on the state space")]
    NoMass,
}

/// The box `{x : 0 <= x_i <= upper_i}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct StateBox {
    upper: Vec<u32>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    len: usize,
}

/// Hard cap on enumerated states.
pub const MAX_BOX_STATES: usize = 50_000_000;

impl StateBox {
    pub fn new(upper: Vec<u32>) -> Result<Self, ChainError> {
        let d = upper.len();
        if d == 0 {
            return Err(ChainError::InvalidParameter("box needs at least one coordinate".into()));
        }
        let mut strides = vec![1usize; d];
        let mut len = 1usize;
        for i in (0..d).rev() {
            strides[i] = len;
            len = len
                .checked_mul(upper[i] as usize + 1)
                .filter(|&l| l <= MAX_BOX_STATES)
                .ok_or_else(|| ChainError::TooManyStates(upper.clone()))?;
        }
        Ok(Self {
            upper,
            strides,
            len,
        })
    }

    pub fn cube(dim: usize, side: u32) -> Result<Self, ChainError> {
        Self::new(vec![side; dim])
    }

    pub fn dim(&self) -> usize {
        self.upper.len()
    }

    pub fn upper(&self) -> &[u32] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(&self.upper)
                .all(|(&v, &u)| v >= 0 && v <= i64::from(u))
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(x.iter().zip(&self.strides).map(|(&v, &s)| v as usize * s).sum())
    }

    pub fn state(&self, mut index: usize) -> State {
        let mut x = vec![0; self.dim()];
        for (xi, &s) in x.iter_mut().zip(&self.strides) {
            *xi = (index / s) as i64;
            index %= s;
        }
        x
    }

    /// All states in index order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len).map(|i| self.state(i))
    }

    /// Whether some coordinate sits on its upper face.
    pub fn on_upper_face(&self, x: &[i64]) -> bool {
        x.iter().zip(&self.upper).any(|(&v, &u)| v == i64::from(u))
    }
}

const ABSENT: u32 = u32::MAX;

/// A subset of a box, kept in box index order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    bx: StateBox,
    members: Vec<usize>,
    position: Vec<u32>,
}

impl StateSpace {
    pub fn full(bx: StateBox) -> Self {
        let members: Vec<usize> = (0..bx.len()).collect();
        let position = (0..bx.len() as u32).collect();
        Self {
            bx,
            members,
            position,
        }
    }

    /// Subset given by sorted, distinct box indices.
    pub fn subset(bx: StateBox, mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        let mut position = vec![ABSENT; bx.len()];
        for (p, &m) in members.iter().enumerate() {
            position[m] = p as u32;
        }
        Self {
            bx,
            members,
            position,
        }
    }

    pub fn bx(&self) -> &StateBox {
        &self.bx
    }

    pub fn dim(&self) -> usize {
        self.bx.dim()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() == self.bx.len()
    }

    pub fn state(&self, i: usize) -> State {
        self.bx.state(self.members[i])
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        self.members.iter().map(|&m| self.bx.state(m))
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        let b = self.bx.index_of(x)?;
        let p = self.position[b];
        (p != ABSENT).then_some(p as usize)
    }

    pub fn box_index(&self, i: usize) -> usize {
        self.members[i]
    }
}

/// Intensity `kappa prod_i prod_{j<y_i} theta_i(x_i - j)` of `reaction` at `x`.
pub fn intensity(reaction: &Reaction, kinetics: &[Theta], x: &[i64]) -> f64 {
    let mut rate = reaction.kappa;
    for ((&y, theta), &xi) in reaction.source.coefficients().iter().zip(kinetics).zip(x) {
        for j in 0..i64::from(y) {
            let factor = theta.eval(xi - j);
            if factor == 0.0 {
                return 0.0;
            }
            rate *= factor;
        }
    }
    rate
}

/// Reactions grouped by their net displacement.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    kinetics: Vec<Theta>,
    reactions: Vec<Reaction>,
    displacements: Vec<Vec<i64>>,
    groups: Vec<Vec<usize>>,
    lookup: HashMap<Vec<i64>, usize>,
}

impl TransitionModel {
    pub fn new(net: &ReactionNetwork) -> Self {
        let mut displacements: Vec<Vec<i64>> = Vec::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut lookup = HashMap::new();
        for (k, r) in net.reactions().iter().enumerate() {
            let v = r.reaction_vector();
            let g = *lookup.entry(v.clone()).or_insert_with(|| {
                displacements.push(v);
                groups.push(Vec::new());
                displacements.len() - 1
            });
            groups[g].push(k);
        }
        Self {
            kinetics: net.kinetics().to_vec(),
            reactions: net.reactions().to_vec(),
            displacements,
            groups,
            lookup,
        }
    }

    pub fn dim(&self) -> usize {
        self.kinetics.len()
    }

    /// Distinct displacements, in order of first appearance.
    pub fn displacements(&self) -> &[Vec<i64>] {
        &self.displacements
    }

    /// Largest sup-norm of a displacement.
    pub fn reach(&self) -> i64 {
        self.displacements
            .iter()
            .flat_map(|v| v.iter().map(|c| c.abs()))
            .max()
            .unwrap_or(0)
    }

    /// Total rate of displacement number `g` at `x`.
    pub fn group_rate(&self, g: usize, x: &[i64]) -> f64 {
        self.groups[g]
            .iter()
            .map(|&k| intensity(&self.reactions[k], &self.kinetics, x))
            .sum()
    }

    /// Rate of the jump `x -> z` on the untruncated lattice.
    pub fn rate_between(&self, x: &[i64], z: &[i64]) -> f64 {
        let v: Vec<i64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
        self.lookup.get(&v).map_or(0.0, |&g| self.group_rate(g, x))
    }

    /// Non-zero rates out of `x`, aggregated by displacement.
    pub fn rates_at(&self, x: &[i64]) -> Vec<(Vec<i64>, f64)> {
        (0..self.displacements.len())
            .filter_map(|g| {
                let rate = self.group_rate(g, x);
                (rate > 0.0).then(|| (self.displacements[g].clone(), rate))
            })
            .collect()
    }

    /// Total exit rate at `x`.
    pub fn exit_rate(&self, x: &[i64]) -> f64 {
        (0..self.displacements.len()).map(|g| self.group_rate(g, x)).sum()
    }
}

/// Non-zero transition rates out of `x`, aggregated by displacement.
pub fn transition_rates(net: &ReactionNetwork, x: &[i64]) -> Vec<(Vec<i64>, f64)> {
    TransitionModel::new(net).rates_at(x)
}

/// A finite chain on a [`StateSpace`]. Jumps leaving the space are dropped
/// and the diagonal is the sum of the retained off-diagonal rates.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    space: StateSpace,
    row_start: Vec<usize>,
    targets: Vec<usize>,
    rates: Vec<f64>,
    exit: Vec<f64>,
}

impl TruncatedChain {
    /// Conservative truncation of the network's chain to `bx`.
    pub fn from_network(net: &ReactionNetwork, bx: &StateBox) -> Result<Self, ChainError> {
        if bx.dim() != net.dim() {
            return Err(ChainError::DimensionMismatch {
                expected: net.dim(),
                found: bx.dim(),
            });
        }
        let model = TransitionModel::new(net);
        let space = StateSpace::full(bx.clone());
        Ok(Self::assemble(space, |x| {
            model
                .rates_at(x)
                .into_iter()
                .map(|(v, q)| (x.iter().zip(&v).map(|(a, b)| a + b).collect(), q))
                .collect()
        }))
    }

    /// Builds a chain from a rate function `x -> [(target, rate)]`.
    pub fn assemble<F>(space: StateSpace, mut jumps: F) -> Self
    where
        F: FnMut(&[i64]) -> Vec<(State, f64)>,
    {
        let n = space.len();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut rates = Vec::new();
        let mut exit = Vec::with_capacity(n);
        row_start.push(0);
        for i in 0..n {
            let x = space.state(i);
            let mut row: Vec<(usize, f64)> = jumps(&x)
                .into_iter()
                .filter(|(_, q)| *q > 0.0)
                .filter_map(|(z, q)| space.index_of(&z).filter(|&j| j != i).map(|j| (j, q)))
                .collect();
            row.sort_by_key(|(j, _)| *j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (j, q) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += q,
                    _ => merged.push((j, q)),
                }
            }
            exit.push(merged.iter().map(|(_, q)| q).sum());
            for (j, q) in merged {
                targets.push(j);
                rates.push(q);
            }
            row_start.push(targets.len());
        }
        Self {
            space,
            row_start,
            targets,
            rates,
            exit,
        }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.space.len()
    }

    pub fn is_empty(&self) -> bool {
        self.space.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    /// Off-diagonal entries of row `i` as `(target, rate)`, ascending target.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_start[i]..self.row_start[i + 1];
        self.targets[range.clone()]
            .iter()
            .copied()
            .zip(self.rates[range].iter().copied())
    }

    /// Position of entry `(i, j)` in the flat entry arrays.
    pub fn entry_position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_start[i];
        self.targets[start..self.row_start[i + 1]]
            .binary_search(&j)
            .ok()
            .map(|k| start + k)
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.entry_position(i, j).map_or(0.0, |k| self.rates[k])
    }

    /// Exit rate of state `i` inside the space, equal to `-Q(i, i)`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        self.exit[i]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }

    /// Largest `|i - j|` over non-zero entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.len())
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Generator entries `(row, col, rate)`, diagonal included as `-exit`.
    pub fn coo(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz() + self.len());
        for i in 0..self.len() {
            let mut diag_done = false;
            for (j, q) in self.row(i) {
                if j > i && !diag_done {
                    out.push((i, i, -self.exit[i]));
                    diag_done = true;
                }
                out.push((i, j, q));
            }
            if !diag_done {
                out.push((i, i, -self.exit[i]));
            }
        }
        out
    }

    /// Strongly connected components, each sorted, in discovery order.
    pub fn communicating_classes(&self) -> Vec<Vec<usize>> {
        tarjan(self.len(), |i| self.row(i).map(|(j, _)| j).collect())
    }

    pub fn is_irreducible(&self) -> bool {
        self.communicating_classes().len() == 1
    }

    /// Restriction to the largest closed communicating class.
    ///
    /// Returns the restricted chain and the states left out.
    pub fn closed_core(&self) -> (TruncatedChain, Vec<State>) {
        let classes = self.communicating_classes();
        let mut class_of = vec![0usize; self.len()];
        for (c, members) in classes.iter().enumerate() {
            for &i in members {
                class_of[i] = c;
            }
        }
        let best = classes
            .iter()
            .enumerate()
            .filter(|(c, members)| {
                members
                    .iter()
                    .all(|&i| self.row(i).all(|(j, _)| class_of[j] == *c))
            })
            .max_by_key(|(c, members)| (members.len(), std::cmp::Reverse(*c)))
            .map(|(c, _)| c)
            .expect("a finite chain has a closed class");
        let keep: Vec<usize> = classes[best]
            .iter()
            .map(|&i| self.space.box_index(i))
            .collect();
        let dropped: Vec<State> = (0..self.len())
            .filter(|&i| class_of[i] != best)
            .map(|i| self.space.state(i))
            .collect();
        (self.restrict(&keep), dropped)
    }

    /// Chain on a subset given by box indices; jumps leaving it are dropped.
    pub fn restrict(&self, box_indices: &[usize]) -> TruncatedChain {
        let space = StateSpace::subset(self.space.bx().clone(), box_indices.to_vec());
        TruncatedChain::assemble(space, |x| {
            let i = self.space.index_of(x).expect("subset of parent space");
            self.row(i).map(|(j, q)| (self.space.state(j), q)).collect()
        })
    }
}

/// Iterative Tarjan SCC over `n` vertices.
fn tarjan<F: Fn(usize) -> Vec<usize>>(n: usize, succ: F) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, Vec<usize>, usize)> = vec![(root, succ(root), 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some((v, next, pos)) = call.last_mut() {
            let v = *v;
            if *pos < next.len() {
                let w = next[*pos];
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, succ(w), 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some((parent, _, _)) = call.last() {
                    low[*parent] = low[*parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut component = Vec::new();
                    loop {
                        let w = stack.pop().expect("non-empty stack");
                        on_stack[w] = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    component.sort_unstable();
                    out.push(component);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    fn key() -> ReactionNetwork {
        parse_network("X1 + X2 -> X2 : 2\nX2 -> X1 + X2 : 1\n0 -> X2 : 3\nX2 -> 0 : 4\n").unwrap()
    }

    #[test]
    fn box_indexing_is_lexicographic() {
        let bx = StateBox::new(vec![2, 3]).unwrap();
        assert_eq!(bx.len(), 12);
        assert_eq!(bx.state(0), vec![0, 0]);
        assert_eq!(bx.state(1), vec![0, 1]);
        assert_eq!(bx.state(4), vec![1, 0]);
        for i in 0..bx.len() {
            assert_eq!(bx.index_of(&bx.state(i)), Some(i));
        }
        assert_eq!(bx.index_of(&[3, 0]), None);
        assert_eq!(StateBox::new(vec![0]).unwrap().len(), 1);
    }

    #[test]
    fn key_example_rates() {
        let rates = transition_rates(&key(), &[2, 3]);
        assert_eq!(
            rates,
            vec![
                (vec![-1, 0], 12.0),
                (vec![1, 0], 3.0),
                (vec![0, 1], 3.0),
                (vec![0, -1], 12.0)
            ]
        );
    }

    #[test]
    fn mass_action_intensity_is_falling_factorial() {
        let net = parse_network("2 X -> 0 : 0.5\n").unwrap();
        let r = &net.reactions()[0];
        assert_eq!(intensity(r, net.kinetics(), &[4]), 0.5 * 4.0 * 3.0);
        assert_eq!(intensity(r, net.kinetics(), &[1]), 0.0);
    }

    #[test]
    fn truncation_drops_outgoing_jumps() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        let chain = TruncatedChain::from_network(&net, &StateBox::new(vec![1]).unwrap()).unwrap();
        assert_eq!(chain.exit_rate(0), 1.0);
        assert_eq!(chain.exit_rate(1), 1.0);
        let single = TruncatedChain::from_network(&net, &StateBox::new(vec![0]).unwrap()).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single.exit_rate(0), 0.0);
    }

    #[test]
    fn closed_core_drops_isolated_corner() {
        let net = parse_network("0 <-> X1 + X2 : 1, 1\nX2 <-> 2 X2 : 1, 1\n").unwrap();
        let chain = TruncatedChain::from_network(&net, &StateBox::cube(2, 6).unwrap()).unwrap();
        assert!(!chain.is_irreducible());
        let (core, dropped) = chain.closed_core();
        assert!(core.is_irreducible());
        assert_eq!(dropped, vec![vec![6, 0]]);
        assert_eq!(core.len(), 48);
    }
}
