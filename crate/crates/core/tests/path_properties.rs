use std::collections::HashSet;

use proptest::prelude::*;

use ergograph::ctmc::{ProductFormRule, TransitionModel};
use ergograph::network::{derive_catalytic_partition, tail_decay_parameters};
use ergograph::path::{audit_path_family, Construction, PathFamily};
use ergograph::samples;
use ergograph::{ReactionNetwork, State, StateBox};

/// X3 is an immigration-death process, X3 catalyses X2 and two copies of
/// X2 catalyse X1: three layers with threshold 2.
const THREE_LAYERS: &str = "0 <-> X3 : 1, 1\nX3 -> X2 + X3 : 1\nX2 + X3 -> X3 : 1\n\
2 X2 -> 2 X2 + X1 : 1\n2 X2 + X1 -> 2 X2 : 1\n";

const INDEPENDENT_3D: &str = "0 <-> X1 : 1, 1\n0 <-> X2 : 1, 1\n0 <-> X3 : 1, 1\n";

struct Case {
    net: ReactionNetwork,
    family: PathFamily,
    c: Vec<f64>,
    side: u32,
}

fn case(text: &str, alpha: Option<f64>, side: u32) -> Case {
    let net = ReactionNetwork::parse(text).unwrap();
    let c = vec![1.0; net.dim()];
    let decay = tail_decay_parameters(&net, &c).unwrap();
    let family = PathFamily::for_network(&net, alpha.unwrap_or(decay.alpha), decay.k).unwrap();
    Case { net, family, c, side }
}

fn cases() -> Vec<Case> {
    vec![
        case(samples::BIRTH_DEATH, None, 40),
        case(samples::BIRTH_DEATH, Some(0.5), 40),
        case(samples::OPEN_CXB, None, 40),
        case(samples::OPEN_CXB, Some(0.5), 40),
        case(INDEPENDENT_3D, None, 40),
        case(samples::KEY_EXAMPLE, None, 40),
        case(samples::KEY_EXAMPLE, Some(0.5), 40),
        case(THREE_LAYERS, None, 30),
    ]
}

fn unit_step(a: &[i64], b: &[i64]) -> bool {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<i64>() == 1
}

fn length_bound(family: &PathFamily) -> usize {
    let d = family.dim() as i64;
    let s = family.shift();
    let bound = match family.construction() {
        Construction::Basic { .. } => s * d + 1,
        Construction::Layered { level, .. } => level * d + s * d + 1,
    };
    bound as usize
}

#[test]
fn paths_to_terminals_are_valid_and_match_the_audit() {
    for Case { net, family, c, side } in cases() {
        let model = TransitionModel::new(&net);
        let bx = StateBox::cube(net.dim(), side).unwrap();
        let mut longest = 0;
        for x in bx.states() {
            let path = family.path_to_terminal(&x).unwrap();
            assert_eq!(path.first(), Some(&x));
            assert_eq!(path.last(), Some(&family.terminal(&x).unwrap()));
            let distinct: HashSet<&State> = path.iter().collect();
            assert_eq!(distinct.len(), path.len(), "{net}: repeated state from {x:?}");
            for w in path.windows(2) {
                assert!(unit_step(&w[0], &w[1]), "{net}: {:?} -> {:?}", w[0], w[1]);
                assert!(model.rate_between(&w[0], &w[1]) > 0.0, "{net}: inactive {:?} -> {:?}", w[0], w[1]);
            }
            longest = longest.max(path.len());
        }
        assert!(longest <= length_bound(&family), "{net}: {longest}");
        let rule = ProductFormRule::for_network(&net, &c).unwrap();
        let audit = audit_path_family(&family, &net, &rule, &bx).unwrap();
        assert_eq!(audit.lbar, longest, "{net}");
        if matches!(family.construction(), Construction::Basic { .. }) {
            assert!(audit.ratio_bound <= 1.0 + 1e-12, "{net}: R = {}", audit.ratio_bound);
        }
    }
}

#[test]
fn layered_families_come_from_the_partition() {
    let net = ReactionNetwork::parse(THREE_LAYERS).unwrap();
    let partition = derive_catalytic_partition(&net).unwrap();
    assert_eq!(partition.layers.len(), 3);
    assert_eq!(partition.threshold, 2);
    let family = PathFamily::for_network(&net, 1.0, 2).unwrap();
    assert!(matches!(family.construction(), Construction::Layered { threshold: 2, .. }));
}

/// Arbitrary deterministic function on the lattice.
fn f(x: &[i64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &v)| ((v * 7919 + i as i64 * 104_729) % 1000) as f64 / 37.0 + (v as f64).sin())
        .sum()
}

fn point(d: usize, side: i64) -> impl Strategy<Value = State> {
    prop::collection::vec(0..=side, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn increments_telescope_along_composed_paths(
        which in 0usize..8,
        seed in (point(3, 25), point(3, 25)),
    ) {
        let case = &cases()[which];
        let d = case.net.dim();
        let (x, y) = (&seed.0[..d], &seed.1[..d]);
        let path = case.family.composed_path(x, y).unwrap();
        prop_assert_eq!(path.first().map(|v| &v[..]), Some(x));
        prop_assert_eq!(path.last().map(|v| &v[..]), Some(y));
        let sum: f64 = path.windows(2).map(|w| f(&w[1]) - f(&w[0])).sum();
        let scale: f64 = path.iter().map(|z| f(z).abs()).sum::<f64>().max(1.0);
        prop_assert!((sum - (f(y) - f(x))).abs() <= 1e-12 * scale);
        for w in path.windows(2) {
            prop_assert!(unit_step(&w[0], &w[1]));
        }
    }

    #[test]
    fn terminal_paths_are_monotone_and_short(
        which in 0usize..8,
        seed in (point(3, 60), point(3, 60)),
    ) {
        let case = &cases()[which];
        let d = case.net.dim();
        let (x, y) = (&seed.0[..d], &seed.1[..d]);
        let (a, b) = (case.family.terminal(x).unwrap(), case.family.terminal(y).unwrap());
        let path = case.family.terminal_path(&a, &b).unwrap();
        let l1: i64 = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum();
        prop_assert_eq!(path.len() as i64 - 1, l1);
        let norm = |z: &[i64]| z.iter().sum::<i64>();
        prop_assert!(l1 <= norm(x) + norm(y));
    }
}
