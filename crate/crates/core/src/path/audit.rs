//! Exhaustive audit of a path family on a box, the terminal-pair sum, and
//! assembly of the gap lower bound.
//!
//! With `Lbar = max |gamma_x|`, `Mbar` the largest number of paths
//! `gamma_z` sharing a directed edge, `R = max pi(x) / min_{gamma_x} pi`,
//! `cmin` the smallest rate on any path edge and `S` the terminal-pair sum,
//! every bounded `f` satisfies
//! `Var(f) <= (16 Lbar Mbar R + 4 S) / cmin * E*(f)`.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use super::{Construction, PathError, PathFamily};
use crate::ctmc::{State, StateBox, StationaryRule, TransitionModel};
use crate::network::{ReactionNetwork, TailDecay};
use crate::spectral::GapEstimate;

/// Relative increment of the terminal-pair sum accepted as converged.
pub const SUM_TOLERANCE: f64 = 1e-4;

/// Slack allowed when comparing a certificate with a numeric gap.
const CONSISTENCY_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathAudit {
    #[serde(rename = "box")]
    pub upper: Vec<u32>,
    pub states: usize,
    /// Longest `gamma_x`, counted in states.
    pub lbar: usize,
    /// Largest number of paths `gamma_z` through one directed edge.
    pub mbar: usize,
    /// `max_x pi(x) / min_{z in gamma_x} pi(z)`.
    pub ratio_bound: f64,
    pub cmin: f64,
    pub cmin_edge: (State, State),
    /// Directed edges checked for activity.
    pub edges_checked: usize,
}

struct EdgeMin {
    rate: f64,
    from: State,
    to: State,
}

impl EdgeMin {
    fn none() -> Self {
        Self {
            rate: f64::INFINITY,
            from: Vec::new(),
            to: Vec::new(),
        }
    }

    fn offer(&mut self, rate: f64, from: &[i64], to: &[i64]) {
        if rate < self.rate {
            self.rate = rate;
            self.from = from.to_vec();
            self.to = to.to_vec();
        }
    }

    fn merge(&mut self, other: EdgeMin) {
        if other.rate < self.rate {
            *self = other;
        }
    }
}

struct PathScan {
    path: Vec<State>,
    log_ratio: f64,
    min_edge: EdgeMin,
}

fn scan_path(
    family: &PathFamily,
    model: &TransitionModel,
    rule: &dyn StationaryRule,
    x: &[i64],
) -> Result<PathScan, PathError> {
    let path = family.path_to_terminal_unchecked(x);
    let mut min_edge = EdgeMin::none();
    for w in path.windows(2) {
        let rate = model.rate_between(&w[0], &w[1]);
        if !(rate > 0.0) {
            return Err(PathError::InactiveEdge {
                from: w[0].clone(),
                to: w[1].clone(),
            });
        }
        min_edge.offer(rate, &w[0], &w[1]);
    }
    let low = path
        .iter()
        .map(|z| rule.log_prob(z))
        .fold(f64::INFINITY, f64::min);
    Ok(PathScan {
        log_ratio: rule.log_prob(x) - low,
        path,
        min_edge,
    })
}

/// Componentwise bounds of a set of states.
#[derive(Debug, Clone)]
struct Hull {
    lower: Vec<i64>,
    upper: Vec<i64>,
    strides: Vec<usize>,
    len: usize,
}

impl Hull {
    fn of<'a>(states: impl Iterator<Item = &'a State>, dim: usize) -> Self {
        let mut lower = vec![i64::MAX; dim];
        let mut upper = vec![i64::MIN; dim];
        for s in states {
            for i in 0..dim {
                lower[i] = lower[i].min(s[i]);
                upper[i] = upper[i].max(s[i]);
            }
        }
        let mut strides = vec![1usize; dim];
        let mut len = 1usize;
        for i in (0..dim).rev() {
            strides[i] = len;
            len *= (upper[i] - lower[i] + 1) as usize;
        }
        Self {
            lower,
            upper,
            strides,
            len,
        }
    }

    fn index(&self, x: &[i64]) -> usize {
        x.iter()
            .zip(&self.lower)
            .zip(&self.strides)
            .map(|((v, lo), s)| (v - lo) as usize * s)
            .sum()
    }

    fn state(&self, mut index: usize) -> State {
        let mut x = vec![0; self.lower.len()];
        for i in 0..x.len() {
            x[i] = self.lower[i] + (index / self.strides[i]) as i64;
            index %= self.strides[i];
        }
        x
    }
}

/// Minimum rate over all unit edges inside the terminal hull. Every
/// terminal-pair path uses only such edges; when every hull state is a
/// terminal, every such edge lies on some terminal-pair path.
fn hull_edge_min(hull: &Hull, model: &TransitionModel) -> Result<(EdgeMin, usize), PathError> {
    let d = hull.lower.len();
    let partial: Vec<Result<(EdgeMin, usize), PathError>> = (0..hull.len)
        .into_par_iter()
        .map(|k| {
            let y = hull.state(k);
            let mut best = EdgeMin::none();
            let mut count = 0;
            for i in 0..d {
                if y[i] >= hull.upper[i] {
                    continue;
                }
                let mut z = y.clone();
                z[i] += 1;
                for (from, to) in [(&y, &z), (&z, &y)] {
                    let rate = model.rate_between(from, to);
                    if !(rate > 0.0) {
                        return Err(PathError::InactiveEdge {
                            from: from.clone(),
                            to: to.clone(),
                        });
                    }
                    best.offer(rate, from, to);
                    count += 1;
                }
            }
            Ok((best, count))
        })
        .collect();
    let mut best = EdgeMin::none();
    let mut count = 0;
    for p in partial {
        let (b, c) = p?;
        best.merge(b);
        count += c;
    }
    Ok((best, count))
}

fn check_family_dims(
    family: &PathFamily,
    net: Option<&ReactionNetwork>,
    rule: &dyn StationaryRule,
    bx: &StateBox,
) -> Result<(), PathError> {
    for found in [net.map_or(family.dim(), |n| n.dim()), rule.dim(), bx.dim()] {
        if found != family.dim() {
            return Err(PathError::DimensionMismatch {
                expected: family.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// Audits `family` on every state of `bx`. Rates and `pi` are evaluated on
/// the untruncated lattice; the box only selects the starting states.
pub fn audit_path_family(
    family: &PathFamily,
    net: &ReactionNetwork,
    rule: &dyn StationaryRule,
    bx: &StateBox,
) -> Result<PathAudit, PathError> {
    check_family_dims(family, Some(net), rule, bx)?;
    let model = TransitionModel::new(net);
    let scans: Vec<Result<PathScan, PathError>> = (0..bx.len())
        .into_par_iter()
        .map(|k| scan_path(family, &model, rule, &bx.state(k)))
        .collect();

    let mut lbar = 0;
    let mut log_ratio = f64::NEG_INFINITY;
    let mut min_edge = EdgeMin::none();
    let mut multiplicity: HashMap<(State, State), usize> = HashMap::new();
    let mut edges_checked = 0;
    let mut terminals = Vec::with_capacity(bx.len());
    for scan in scans {
        let scan = scan?;
        lbar = lbar.max(scan.path.len());
        log_ratio = log_ratio.max(scan.log_ratio);
        min_edge.merge(scan.min_edge);
        edges_checked += scan.path.len() - 1;
        for w in scan.path.windows(2) {
            *multiplicity.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
        }
        terminals.push(scan.path.last().cloned().expect("paths are non-empty"));
    }
    let hull = Hull::of(terminals.iter(), family.dim());
    let (hull_min, hull_edges) = hull_edge_min(&hull, &model)?;
    min_edge.merge(hull_min);
    edges_checked += hull_edges;
    Ok(PathAudit {
        upper: bx.upper().to_vec(),
        states: bx.len(),
        lbar,
        mbar: multiplicity.values().copied().max().unwrap_or(0),
        ratio_bound: log_ratio.exp(),
        cmin: min_edge.rate,
        cmin_edge: (min_edge.from, min_edge.to),
        edges_checked,
    })
}

/// Terminal-pair sums over a sequence of growing boxes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSum {
    pub history: Vec<(Vec<u32>, f64)>,
    /// `|S_k - S_{k-1}| / S_k` for consecutive boxes.
    pub increments: Vec<f64>,
    pub converged: bool,
}

impl PairSum {
    pub fn value(&self) -> f64 {
        self.history.last().map_or(0.0, |h| h.1)
    }
}

/// Sparse tables of `ln pi` minima along each axis of a hull: level `k`
/// holds the minimum over `2^k` consecutive states starting at an index.
struct AxisMinima {
    tables: Vec<Vec<Vec<f64>>>,
}

impl AxisMinima {
    fn new(hull: &Hull, log_pi: &[f64]) -> Self {
        let tables = (0..hull.lower.len())
            .map(|i| {
                let side = (hull.upper[i] - hull.lower[i] + 1) as usize;
                let mut levels = vec![log_pi.to_vec()];
                let mut span = 1;
                while 2 * span <= side {
                    let prev = levels.last().expect("level 0 exists");
                    let offset = span * hull.strides[i];
                    let next = (0..hull.len)
                        .map(|k| {
                            if k + offset < hull.len {
                                prev[k].min(prev[k + offset])
                            } else {
                                prev[k]
                            }
                        })
                        .collect();
                    levels.push(next);
                    span *= 2;
                }
                levels
            })
            .collect();
        Self { tables }
    }

    /// Minimum over `len` states along axis `i` starting at hull index `base`.
    fn segment(&self, hull: &Hull, i: usize, base: usize, len: usize) -> f64 {
        let k = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let t = &self.tables[i][k];
        t[base].min(t[base + (len - (1 << k)) * hull.strides[i]])
    }

    /// Smallest `ln pi` on the monotone path from `a` to `b`.
    fn path_min(&self, hull: &Hull, a: &[i64], b: &[i64]) -> f64 {
        let mut index = hull.index(a);
        let mut low = f64::INFINITY;
        for i in 0..a.len() {
            let drop = (a[i] - a[i].min(b[i])) as usize;
            index -= drop * hull.strides[i];
            low = low.min(self.segment(hull, i, index, drop + 1));
        }
        for i in 0..a.len() {
            let rise = (b[i] - a[i].min(b[i])) as usize;
            low = low.min(self.segment(hull, i, index, rise + 1));
            index += rise * hull.strides[i];
        }
        low
    }
}

/// `sum over ordered pairs (x, x') with t(x) != t(x')` of
/// `|gamma(t(x), t(x'))| pi(x) pi(x') / min_{gamma(t(x), t(x'))} pi` on one box.
fn pair_sum_on_box(family: &PathFamily, rule: &dyn StationaryRule, bx: &StateBox) -> f64 {
    let terminals: Vec<State> = (0..bx.len())
        .into_par_iter()
        .map(|k| family.terminal_unchecked(&bx.state(k)))
        .collect();
    let hull = Hull::of(terminals.iter(), family.dim());
    // Terminal weights in log space: deep states underflow in linear scale.
    let log_px: Vec<f64> = (0..bx.len())
        .into_par_iter()
        .map(|k| rule.log_prob(&bx.state(k)))
        .collect();
    let mut peak = vec![f64::NEG_INFINITY; hull.len];
    for (t, &lp) in terminals.iter().zip(&log_px) {
        let h = hull.index(t);
        peak[h] = peak[h].max(lp);
    }
    let mut scaled = vec![0.0; hull.len];
    for (t, &lp) in terminals.iter().zip(&log_px) {
        let h = hull.index(t);
        scaled[h] += (lp - peak[h]).exp();
    }
    let log_pi: Vec<f64> = (0..hull.len)
        .into_par_iter()
        .map(|k| rule.log_prob(&hull.state(k)))
        .collect();
    let minima = AxisMinima::new(&hull, &log_pi);
    let occupied: Vec<(State, f64)> = (0..hull.len)
        .filter(|&k| peak[k] > f64::NEG_INFINITY)
        .map(|k| (hull.state(k), peak[k] + scaled[k].ln()))
        .collect();
    let rows: Vec<f64> = (0..occupied.len())
        .into_par_iter()
        .map(|p| {
            let (a, log_wa) = &occupied[p];
            let mut row = 0.0;
            for (q, (b, log_wb)) in occupied.iter().enumerate() {
                if p == q {
                    continue;
                }
                let length = 1 + a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<i64>();
                let low = minima.path_min(&hull, a, b);
                row += ((length as f64).ln() + log_wa + log_wb - low).exp();
            }
            row
        })
        .collect();
    rows.iter().sum()
}

/// Computes the terminal-pair sum on each box and judges convergence: the
/// last relative increment must be at most [`SUM_TOLERANCE`] and no larger
/// than the one before it.
pub fn terminal_pair_sum(
    family: &PathFamily,
    rule: &dyn StationaryRule,
    boxes: &[StateBox],
) -> Result<PairSum, PathError> {
    if boxes.is_empty() {
        return Err(PathError::InvalidParameter("at least one box is required".into()));
    }
    for bx in boxes {
        check_family_dims(family, None, rule, bx)?;
    }
    for w in boxes.windows(2) {
        if w[0].upper().iter().zip(w[1].upper()).any(|(a, b)| a > b) {
            return Err(PathError::InvalidParameter("boxes must be nested and growing".into()));
        }
    }
    let history: Vec<(Vec<u32>, f64)> = boxes
        .iter()
        .map(|bx| (bx.upper().to_vec(), pair_sum_on_box(family, rule, bx)))
        .collect();
    let increments: Vec<f64> = history
        .windows(2)
        .map(|w| {
            let (prev, last) = (w[0].1, w[1].1);
            if last == 0.0 {
                0.0
            } else {
                (last - prev).abs() / last
            }
        })
        .collect();
    let shrinking = match increments.as_slice() {
        [.., a, b] => b <= a || *b <= 1e-12,
        _ => true,
    };
    let converged = increments
        .last()
        .is_some_and(|&inc| inc <= SUM_TOLERANCE && shrinking);
    Ok(PairSum {
        history,
        increments,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Consistency {
    pub numeric_gap: f64,
    #[serde(rename = "box")]
    pub upper: Vec<u32>,
    /// `C <= numeric_gap + 1e-6`.
    pub holds: bool,
}

/// Explicit lower bound on the spectral gap and its constituents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapCertificate {
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: u64,
    #[serde(rename = "k0_or_partition")]
    pub construction: Construction,
    #[serde(rename = "Lbar")]
    pub lbar: usize,
    #[serde(rename = "Mbar")]
    pub mbar: usize,
    #[serde(rename = "R")]
    pub ratio_bound: f64,
    pub cmin: f64,
    #[serde(rename = "S_history")]
    pub s_history: Vec<(Vec<u32>, f64)>,
    #[serde(rename = "S_increments")]
    pub s_increments: Vec<f64>,
    #[serde(rename = "C")]
    pub constant: f64,
    pub consistency: Option<Consistency>,
}

impl GapCertificate {
    /// Records the comparison with a numeric gap on a truncation.
    pub fn check_against(&mut self, gap: &GapEstimate) -> bool {
        let holds = self.constant <= gap.value + CONSISTENCY_SLACK;
        self.consistency = Some(Consistency {
            numeric_gap: gap.value,
            upper: gap.upper.clone(),
            holds,
        });
        holds
    }
}

/// `cmin / (16 Lbar Mbar R + 4 S)`.
pub fn certificate_constant(audit: &PathAudit, sum: f64) -> f64 {
    let ends = 16.0 * audit.lbar as f64 * audit.mbar as f64 * audit.ratio_bound;
    audit.cmin / (ends + 4.0 * sum)
}

/// Audits on the last box, sums over all boxes, and assembles the bound.
pub fn certify_gap(
    family: &PathFamily,
    net: &ReactionNetwork,
    rule: &dyn StationaryRule,
    boxes: &[StateBox],
) -> Result<GapCertificate, PathError> {
    let last = boxes
        .last()
        .ok_or_else(|| PathError::InvalidParameter("at least one box is required".into()))?;
    let audit = audit_path_family(family, net, rule, last)?;
    let sum = terminal_pair_sum(family, rule, boxes)?;
    if !sum.converged {
        return Err(PathError::SumNotConverged {
            increments: sum.increments,
        });
    }
    Ok(GapCertificate {
        alpha: family.alpha(),
        k: family.k(),
        construction: family.construction().clone(),
        lbar: audit.lbar,
        mbar: audit.mbar,
        ratio_bound: audit.ratio_bound,
        cmin: audit.cmin,
        constant: certificate_constant(&audit, sum.value()),
        s_history: sum.history,
        s_increments: sum.increments,
        consistency: None,
    })
}

/// Certifies with the first tail-decay candidate whose terminal-pair sum
/// converges. Smaller exponents lengthen paths but make the sum converge
/// faster, since `t` then moves each coordinate further down.
pub fn certify_network(
    net: &ReactionNetwork,
    rule: &dyn StationaryRule,
    candidates: &[TailDecay],
    boxes: &[StateBox],
) -> Result<GapCertificate, PathError> {
    let mut last_error = PathError::InvalidParameter("no tail-decay candidate".into());
    for decay in candidates {
        let family = PathFamily::for_network(net, decay.alpha, decay.k)?;
        match certify_gap(&family, net, rule, boxes) {
            Ok(cert) => return Ok(cert),
            Err(e @ PathError::SumNotConverged { .. }) => last_error = e,
            Err(e) => return Err(e),
        }
    }
    Err(last_error)
}

/// Upper bound `(|ln(eps/2)| + |ln pi(x)|) / C` on the mixing time from `x`,
/// using total-variation decay `(2 / pi(x)) e^{-C t}`.
pub fn mixing_bound(constant: f64, log_pi_x: f64, eps: f64) -> Result<f64, PathError> {
    if !(constant > 0.0 && constant.is_finite()) {
        return Err(PathError::InvalidParameter(format!("gap bound must be positive, got {constant}")));
    }
    if !(eps > 0.0 && eps < 0.5) {
        return Err(PathError::InvalidParameter(format!("epsilon must lie in (0, 1/2), got {eps}")));
    }
    if !(log_pi_x <= 0.0 && log_pi_x.is_finite()) {
        return Err(PathError::InvalidParameter(format!("ln pi(x) must be finite and <= 0, got {log_pi_x}")));
    }
    Ok(((eps / 2.0).ln().abs() + log_pi_x.abs()) / constant)
}
