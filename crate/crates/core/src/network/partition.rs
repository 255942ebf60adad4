//! Layered catalytic partition of the species.
//!
//! Layer 0 holds species with both a plain inflow `0 -> X_i` and a plain
//! outflow `X_i -> 0`. A later layer holds species whose birth
//! `N e_j -> N e_j + e_i` and death `N e_j + e_i -> N e_j` are catalysed by a
//! species `j` from an earlier layer. The threshold `N` is the largest
//! catalyst multiplicity used (at least 1).

use serde::Serialize;

use super::{Complex, ReactionNetwork};

/// How a birth or death move of one species is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Catalysis {
    /// `None` for an uncatalysed inflow or outflow.
    pub catalyst: Option<usize>,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalyticLink {
    pub species: usize,
    pub layer: usize,
    pub birth: Catalysis,
    pub death: Catalysis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CatalyticPartition {
    pub layers: Vec<Vec<usize>>,
    /// Catalyst count needed for every catalysed move to fire.
    pub threshold: u32,
    /// One entry per species, in species order.
    pub links: Vec<CatalyticLink>,
}

impl CatalyticPartition {
    /// Species in layer order, ascending index within a layer.
    pub fn layer_order(&self) -> Vec<usize> {
        self.layers.iter().flatten().copied().collect()
    }

    pub fn layer_of(&self, species: usize) -> usize {
        self.links[species].layer
    }
}

/// Why no partition exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionFailure {
    pub placed: Vec<Vec<usize>>,
    pub stranded: Vec<usize>,
}

impl PartitionFailure {
    pub fn reason(&self, net: &ReactionNetwork) -> String {
        if self.placed.is_empty() {
            return "no single-species inflow/outflow".into();
        }
        let names: Vec<&str> = self
            .stranded
            .iter()
            .map(|&i| net.names()[i].as_str())
            .collect();
        format!(
            "no catalysed birth and death for species {}",
            names.join(", ")
        )
    }
}

fn find_move(
    net: &ReactionNetwork,
    species: usize,
    catalysts: &[usize],
    birth: bool,
) -> Option<Catalysis> {
    let d = net.dim();
    let plain = Complex::unit(d, species, 1);
    let empty = Complex::zero(d);
    let uncatalysed = net.reactions().iter().any(|r| {
        if birth {
            r.source == empty && r.product == plain
        } else {
            r.source == plain && r.product == empty
        }
    });
    if uncatalysed {
        return Some(Catalysis {
            catalyst: None,
            multiplicity: 0,
        });
    }
    let mut sorted = catalysts.to_vec();
    sorted.sort_unstable();
    for &j in &sorted {
        let mut best: Option<u32> = None;
        for r in net.reactions() {
            let (lo, hi) = if birth {
                (&r.source, &r.product)
            } else {
                (&r.product, &r.source)
            };
            let n = lo.coefficients()[j];
            if n == 0 || j == species {
                continue;
            }
            let mut with_species = Complex::unit(d, j, n).coefficients().to_vec();
            with_species[species] += 1;
            if *lo == Complex::unit(d, j, n) && hi.coefficients() == with_species.as_slice() {
                best = Some(best.map_or(n, |b| b.min(n)));
            }
        }
        if let Some(n) = best {
            return Some(Catalysis {
                catalyst: Some(j),
                multiplicity: n,
            });
        }
    }
    None
}

/// Breadth-first layering: each round places every unplaced species whose
/// birth and death are catalysed by already placed species. Among several
/// catalysts the lowest index wins.
pub fn derive_catalytic_partition(
    net: &ReactionNetwork,
) -> Result<CatalyticPartition, PartitionFailure> {
    let d = net.dim();
    let mut links: Vec<Option<CatalyticLink>> = vec![None; d];
    let mut layers: Vec<Vec<usize>> = Vec::new();

    let first: Vec<usize> = (0..d)
        .filter(|&i| {
            let b = find_move(net, i, &[], true);
            let k = find_move(net, i, &[], false);
            if let (Some(birth), Some(death)) = (b, k) {
                links[i] = Some(CatalyticLink {
                    species: i,
                    layer: 0,
                    birth,
                    death,
                });
                true
            } else {
                false
            }
        })
        .collect();
    if first.is_empty() {
        return Err(PartitionFailure {
            placed: Vec::new(),
            stranded: (0..d).collect(),
        });
    }
    layers.push(first);

    loop {
        let placed: Vec<usize> = layers.iter().flatten().copied().collect();
        let layer = layers.len();
        let mut next = Vec::new();
        let unplaced: Vec<usize> = (0..d).filter(|i| links[*i].is_none()).collect();
        for i in unplaced {
            let birth = find_move(net, i, &placed, true);
            let death = find_move(net, i, &placed, false);
            if let (Some(birth), Some(death)) = (birth, death) {
                links[i] = Some(CatalyticLink {
                    species: i,
                    layer,
                    birth,
                    death,
                });
                next.push(i);
            }
        }
        if next.is_empty() {
            break;
        }
        layers.push(next);
    }

    let stranded: Vec<usize> = (0..d).filter(|i| links[*i].is_none()).collect();
    if !stranded.is_empty() {
        return Err(PartitionFailure {
            placed: layers,
            stranded,
        });
    }
    let links: Vec<CatalyticLink> = links.into_iter().map(|l| l.expect("placed")).collect();
    let threshold = links
        .iter()
        .flat_map(|l| [l.birth.multiplicity, l.death.multiplicity])
        .max()
        .unwrap_or(0)
        .max(1);
    Ok(CatalyticPartition {
        layers,
        threshold,
        links,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    #[test]
    fn key_example_has_two_layers() {
        let net =
            parse_network("X1 + X2 -> X2 : 1\nX2 -> X1 + X2 : 1\n0 <-> X2 : 1, 1\n").unwrap();
        let p = derive_catalytic_partition(&net).unwrap();
        assert_eq!(p.layers, vec![vec![1], vec![0]]);
        assert_eq!(p.threshold, 1);
        assert_eq!(p.links[0].birth.catalyst, Some(1));
    }

    #[test]
    fn open_network_is_a_single_layer() {
        let net = parse_network("0 <-> X1 : 1, 1\n0 <-> X2 : 1, 1\n2 X1 + X2 -> 3 X1 + 2 X2 : 1\n")
            .unwrap();
        let p = derive_catalytic_partition(&net).unwrap();
        assert_eq!(p.layers, vec![vec![0, 1]]);
    }

    #[test]
    fn counterexample_has_no_first_layer() {
        let net = parse_network("0 <-> X1 + X2 : 1, 1\nX2 <-> 2 X2 : 1, 1\n").unwrap();
        let failure = derive_catalytic_partition(&net).unwrap_err();
        assert_eq!(failure.reason(&net), "no single-species inflow/outflow");
    }

    #[test]
    fn deep_catalysis_and_multiplicity() {
        let text = "0 <-> A : 1, 1\n2 A -> 2 A + B : 1\n2 A + B -> 2 A : 1\nB -> B + C : 1\nB + C -> B : 1\n";
        let p = derive_catalytic_partition(&parse_network(text).unwrap()).unwrap();
        assert_eq!(p.layers, vec![vec![0], vec![1], vec![2]]);
        assert_eq!(p.threshold, 2);
    }
}
