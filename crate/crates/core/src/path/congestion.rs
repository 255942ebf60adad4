//! Congestion ratio of an all-pairs path system on a truncated chain:
//! `max over edges (z, w) of (1 / (q(z, w) pi(z))) * sum over pairs routed
//! through (z, w) of |gamma(x, x')| pi(x) pi(x')`.
//!
//! One path is routed per unordered pair, from the lexicographically smaller
//! state. Edge loads are accumulated in fixed chunks and reduced in chunk
//! order, so the result does not depend on the thread count.

use rayon::prelude::*;
use serde::Serialize;

use super::{PathError, PathFamily};
use crate::ctmc::{Distribution, State, TruncatedChain};

const CHUNKS: usize = 256;
const ABSENT: u32 = u32::MAX;

/// Which path joins each pair of states.
#[derive(Debug, Clone, Copy)]
pub enum CongestionPaths<'a> {
    /// `gamma_x`, the terminal path, then `gamma_x'` reversed, loops erased.
    Composed(&'a PathFamily),
    /// The monotone path through the componentwise minimum.
    Monotone,
}

#[derive(Debug, Clone, Serialize)]
pub struct CongestionReport {
    pub ratio: f64,
    pub edge: (State, State),
    #[serde(rename = "box")]
    pub upper: Vec<u32>,
    pub pairs: usize,
    /// Longest routed path, counted in states.
    pub longest_path: usize,
    #[serde(skip)]
    pub edge_ratios: Vec<(State, State, f64)>,
}

impl CongestionReport {
    pub fn edge_ratio(&self, from: &[i64], to: &[i64]) -> Option<f64> {
        self.edge_ratios
            .iter()
            .find(|(a, b, _)| a == from && b == to)
            .map(|e| e.2)
    }
}

struct Router<'a> {
    chain: &'a TruncatedChain,
    /// Box index to space index.
    lookup: Vec<u32>,
    strides: Vec<usize>,
    /// Per state: `gamma_x` in space indices, and the box coordinates of `t(x)`.
    prefix: Vec<Vec<u32>>,
    terminal: Vec<State>,
}

impl<'a> Router<'a> {
    fn new(chain: &'a TruncatedChain, paths: CongestionPaths<'_>) -> Result<Self, PathError> {
        let space = chain.space();
        let bx = space.bx();
        let mut lookup = vec![ABSENT; bx.len()];
        for i in 0..space.len() {
            lookup[space.box_index(i)] = i as u32;
        }
        let d = bx.dim();
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (bx.upper()[i + 1] as usize + 1);
        }
        let mut router = Self {
            chain,
            lookup,
            strides,
            prefix: Vec::new(),
            terminal: Vec::new(),
        };
        match paths {
            CongestionPaths::Composed(family) => {
                if family.dim() != d {
                    return Err(PathError::DimensionMismatch {
                        expected: family.dim(),
                        found: d,
                    });
                }
                let built: Result<Vec<(Vec<u32>, State)>, PathError> = (0..space.len())
                    .into_par_iter()
                    .map(|i| {
                        let path = family.path_to_terminal_unchecked(&space.state(i));
                        let indices = path
                            .iter()
                            .map(|z| router.space_index(z))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok((indices, path.last().cloned().expect("paths are non-empty")))
                    })
                    .collect();
                let (prefix, terminal) = built?.into_iter().unzip();
                router.prefix = prefix;
                router.terminal = terminal;
            }
            CongestionPaths::Monotone => {
                router.prefix = (0..space.len()).map(|i| vec![i as u32]).collect();
                router.terminal = space.states().collect();
            }
        }
        Ok(router)
    }

    fn space_index(&self, z: &[i64]) -> Result<u32, PathError> {
        self.chain
            .space()
            .bx()
            .index_of(z)
            .map(|k| self.lookup[k])
            .filter(|&k| k != ABSENT)
            .ok_or_else(|| PathError::StateOutside(z.to_vec()))
    }

    fn box_index(&self, z: &[i64]) -> usize {
        z.iter().zip(&self.strides).map(|(v, s)| *v as usize * s).sum()
    }

    fn lookup_box(&self, k: usize, state: &[i64]) -> Result<u32, PathError> {
        let j = self.lookup[k];
        if j == ABSENT {
            return Err(PathError::StateOutside(state.to_vec()));
        }
        Ok(j)
    }

    /// Writes the raw (not yet loop-erased) route from `x` to `y` into `out`.
    fn route(&self, x: usize, y: usize, out: &mut Vec<u32>) -> Result<(), PathError> {
        out.clear();
        out.extend_from_slice(&self.prefix[x]);
        let a = &self.terminal[x];
        let b = &self.terminal[y];
        let mut cur = a.clone();
        let mut k = self.box_index(a);
        for i in 0..a.len() {
            while cur[i] > b[i].min(a[i]) {
                cur[i] -= 1;
                k -= self.strides[i];
                out.push(self.lookup_box(k, &cur)?);
            }
        }
        for i in 0..a.len() {
            while cur[i] < b[i] {
                cur[i] += 1;
                k += self.strides[i];
                out.push(self.lookup_box(k, &cur)?);
            }
        }
        let tail = &self.prefix[y];
        out.extend(tail[..tail.len() - 1].iter().rev());
        Ok(())
    }
}

/// Loop erasure over space indices with a reusable position table.
struct Eraser {
    position: Vec<u32>,
    out: Vec<u32>,
}

impl Eraser {
    fn new(n: usize) -> Self {
        Self {
            position: vec![ABSENT; n],
            out: Vec::new(),
        }
    }

    fn erase(&mut self, path: &[u32]) -> &[u32] {
        for &v in &self.out {
            self.position[v as usize] = ABSENT;
        }
        self.out.clear();
        for &v in path {
            let p = self.position[v as usize];
            if p == ABSENT {
                self.position[v as usize] = self.out.len() as u32;
                self.out.push(v);
            } else {
                for w in self.out.drain(p as usize + 1..) {
                    self.position[w as usize] = ABSENT;
                }
            }
        }
        &self.out
    }
}

struct ChunkLoad {
    loads: Vec<f64>,
    longest: usize,
}

/// Congestion ratio of the chosen path system over every pair of states
/// of `chain`, with `pi` indexed like the chain's space.
pub fn congestion_ratio(
    paths: CongestionPaths<'_>,
    pi: &Distribution,
    chain: &TruncatedChain,
) -> Result<CongestionReport, PathError> {
    let n = chain.len();
    if pi.space() != chain.space() {
        return Err(PathError::InvalidParameter(
            "distribution and chain live on different state spaces".into(),
        ));
    }
    let router = Router::new(chain, paths)?;
    let p = pi.values();
    let chunks = CHUNKS.min(n.max(1));
    let partial: Vec<Result<ChunkLoad, PathError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut loads = vec![0.0; chain.nnz()];
            let mut raw = Vec::new();
            let mut eraser = Eraser::new(n);
            let mut longest = 0;
            for x in (c..n).step_by(chunks) {
                for y in x + 1..n {
                    router.route(x, y, &mut raw)?;
                    let path = eraser.erase(&raw);
                    longest = longest.max(path.len());
                    let weight = path.len() as f64 * p[x] * p[y];
                    for w in path.windows(2) {
                        let (from, to) = (w[0] as usize, w[1] as usize);
                        let k = chain.entry_position(from, to).ok_or_else(|| {
                            PathError::InactiveEdge {
                                from: chain.space().state(from),
                                to: chain.space().state(to),
                            }
                        })?;
                        loads[k] += weight;
                    }
                }
            }
            Ok(ChunkLoad { loads, longest })
        })
        .collect();

    let mut loads = vec![0.0; chain.nnz()];
    let mut longest = 1;
    for chunk in partial {
        let chunk = chunk?;
        for (total, v) in loads.iter_mut().zip(&chunk.loads) {
            *total += v;
        }
        longest = longest.max(chunk.longest);
    }

    let mut ratio = 0.0;
    let mut edge = (0, 0);
    let mut edge_ratios = Vec::new();
    for i in 0..n {
        for (j, rate) in chain.row(i) {
            let k = chain.entry_position(i, j).expect("row entry");
            if loads[k] == 0.0 {
                continue;
            }
            let r = loads[k] / (rate * p[i]);
            edge_ratios.push((chain.space().state(i), chain.space().state(j), r));
            if r > ratio {
                ratio = r;
                edge = (i, j);
            }
        }
    }
    Ok(CongestionReport {
        ratio,
        edge: (chain.space().state(edge.0), chain.space().state(edge.1)),
        upper: chain.space().bx().upper().to_vec(),
        pairs: n * n.saturating_sub(1) / 2,
        longest_path: longest,
        edge_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{solve_stationary_truncated, StateBox};
    use crate::network::parse_network;

    #[test]
    fn two_state_chain_has_unit_ratio() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        let chain = TruncatedChain::from_network(&net, &StateBox::new(vec![1]).unwrap()).unwrap();
        let pi = solve_stationary_truncated(&chain).unwrap();
        let pf = PathFamily::basic(1, 1.0, 2).unwrap();
        for paths in [CongestionPaths::Monotone, CongestionPaths::Composed(&pf)] {
            let report = congestion_ratio(paths, &pi, &chain).unwrap();
            assert!((report.ratio - 1.0).abs() < 1e-12, "{report:?}");
            assert_eq!(report.longest_path, 2);
        }
    }

    #[test]
    fn eraser_matches_generic_loop_erasure() {
        let mut eraser = Eraser::new(10);
        let raw = [1u32, 2, 3, 2, 4, 1, 5];
        assert_eq!(eraser.erase(&raw), &[1, 5]);
        assert_eq!(eraser.erase(&[3, 4, 3, 6]), &[3, 6]);
        assert_eq!(super::super::loop_erase(raw.to_vec()), vec![1, 5]);
    }

    #[test]
    fn path_leaving_the_box_is_reported() {
        let net = parse_network("0 <-> X1 : 1, 1\n").unwrap();
        let chain = TruncatedChain::from_network(&net, &StateBox::new(vec![3]).unwrap()).unwrap();
        let pi = solve_stationary_truncated(&chain).unwrap();
        let partition = crate::network::derive_catalytic_partition(&net).unwrap();
        let pf = PathFamily::layered(1.0, 2, &partition).unwrap();
        assert!(matches!(
            congestion_ratio(CongestionPaths::Composed(&pf), &pi, &chain),
            Err(PathError::StateOutside(_))
        ));
    }
}
