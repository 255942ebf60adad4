use proptest::prelude::*;

use ergograph::ctmc::{
    product_form_stationary, solve_stationary_truncated, Distribution, ProductFormRule,
    StationaryRule, TransitionModel,
};
use ergograph::mixing::l2_decay_check;
use ergograph::samples;
use ergograph::spectral::{
    dirichlet_forms, estimate_gap, variance, witness_upper_bound, SymmetrizedOperator,
};
use ergograph::{ReactionNetwork, StateBox, StateSpace, TruncatedChain};

fn bundled(which: usize) -> ReactionNetwork {
    samples::load(samples::ALL[which % samples::ALL.len()].1)
}

/// Side lengths keeping every bundled model small.
fn small_box(net: &ReactionNetwork, side: u32) -> StateBox {
    let side = match net.dim() {
        1 => side * 3,
        2 => side,
        3 => side.min(6),
        _ => 1,
    };
    StateBox::cube(net.dim(), side).unwrap()
}

fn core(net: &ReactionNetwork, bx: &StateBox) -> TruncatedChain {
    let chain = TruncatedChain::from_network(net, bx).unwrap();
    if chain.is_irreducible() {
        chain
    } else {
        chain.closed_core().0
    }
}

fn values(seed: u64, n: usize) -> Vec<f64> {
    // SplitMix64 keeps the functions reproducible from the proptest seed.
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rows_are_conservative_and_never_exceed_lattice_exit_rates(which in 0usize..7, side in 2u32..8) {
        let net = bundled(which);
        let chain = TruncatedChain::from_network(&net, &small_box(&net, side)).unwrap();
        let model = TransitionModel::new(&net);
        for i in 0..chain.len() {
            let off: f64 = chain.row(i).filter(|(j, _)| *j != i).map(|(_, r)| r).sum();
            prop_assert_eq!(off, chain.exit_rate(i));
            prop_assert!(chain.exit_rate(i) <= model.exit_rate(&chain.space().state(i)) * (1.0 + 1e-15));
        }
    }

    #[test]
    fn energy_equals_symmetric_form(which in 0usize..7, side in 2u32..8, seed in any::<u64>()) {
        let net = bundled(which);
        let chain = core(&net, &small_box(&net, side));
        let pi = solve_stationary_truncated(&chain).unwrap();
        let f = values(seed, chain.len());
        let forms = dirichlet_forms(&pi, &chain, &f).unwrap();
        prop_assert!((forms.energy - forms.symmetric).abs() <= 1e-9 * forms.symmetric.abs().max(1e-300));
    }

    #[test]
    fn symmetrized_operator_is_symmetric(which in 0usize..7, side in 2u32..8) {
        let net = bundled(which);
        let chain = core(&net, &small_box(&net, side));
        let pi = solve_stationary_truncated(&chain).unwrap();
        let op = SymmetrizedOperator::new(&pi, &chain).unwrap();
        for i in 0..op.dim() {
            for (j, v) in op.row(i) {
                prop_assert!((v - op.entry(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gap_lies_below_witnesses_and_random_quotients(which in 0usize..7, side in 2u32..7, seed in any::<u64>()) {
        let net = bundled(which);
        let chain = core(&net, &small_box(&net, side));
        prop_assume!(chain.len() >= 3);
        let pi = solve_stationary_truncated(&chain).unwrap();
        let gap = estimate_gap(&pi, &chain).unwrap();
        let f = values(seed, chain.len());
        let set: Vec<_> = (0..chain.len()).filter(|&i| f[i] > 0.0).map(|i| chain.space().state(i)).collect();
        if !set.is_empty() && set.len() < chain.len() {
            let w = witness_upper_bound(&pi, &chain, &set).unwrap();
            prop_assert!(gap.value <= w + 1e-8);
        }
        let var = variance(&pi, &f).unwrap();
        let quotient = dirichlet_forms(&pi, &chain, &f).unwrap().symmetric / var;
        prop_assert!(gap.value <= quotient * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn variance_decays_at_the_numeric_gap(which in 0usize..4, seed in any::<u64>()) {
        let (text, upper) = [
            (samples::BIRTH_DEATH, vec![30]),
            (samples::KEY_EXAMPLE, vec![12, 12]),
            (samples::OPEN_CXB, vec![8, 8]),
            (samples::AUTOCATALYTIC, vec![10, 10]),
        ][which].clone();
        let net = samples::load(text);
        let chain = TruncatedChain::from_network(&net, &StateBox::new(upper).unwrap()).unwrap();
        let pi = solve_stationary_truncated(&chain).unwrap();
        let gap = estimate_gap(&pi, &chain).unwrap().value;
        let f = values(seed, chain.len());
        let report = l2_decay_check(&chain, &pi, &f, gap, &[0.1, 0.5, 1.0, 2.0]).unwrap();
        for p in &report.points {
            prop_assert!(p.variance <= p.bound + 1e-6, "{:?}", p);
        }
    }
}

#[test]
fn log_space_matches_direct_poisson_evaluation() {
    let rule = ProductFormRule::for_network(&samples::load(samples::TANDEM_QUEUE), &[2.0, 1.0, 2.0]).unwrap();
    let poisson = |c: f64, n: i64| (1..=n).fold((-c).exp(), |p, k| p * c / k as f64);
    for a in 0..12 {
        for b in 0..12 {
            let x = [a, b, (a + b) % 7];
            let direct = poisson(2.0, x[0]) * poisson(1.0, x[1]) * poisson(2.0, x[2]);
            let logged = rule.log_prob(&x).exp();
            assert!((logged - direct).abs() <= 1e-12 * direct, "{x:?}");
        }
    }
}

#[test]
fn product_form_matches_solved_law_on_balanced_examples() {
    for (text, c, upper) in [
        (samples::BIRTH_DEATH, vec![1.0], vec![40]),
        (samples::KEY_EXAMPLE, vec![1.0, 1.0], vec![25, 25]),
        (samples::OPEN_CXB, vec![1.0, 1.0], vec![20, 20]),
        (samples::TANDEM_QUEUE, vec![2.0, 1.0, 2.0], vec![14, 14, 14]),
    ] {
        let net = samples::load(text);
        let bx = StateBox::new(upper).unwrap();
        let product = product_form_stationary(&net, &c, &bx).unwrap();
        let chain = TruncatedChain::from_network(&net, &bx).unwrap();
        let solved = solve_stationary_truncated(&chain).unwrap();
        let tv = solved.tv_distance(&product.distribution).unwrap();
        assert!(tv <= 1e-8f64.max(3.0 * product.boundary_mass), "{net}: tv {tv:e}");
    }
}

/// `sup pi(x) prod (x_i + 1)^3` over a box; also whether the maximiser is
/// away from the upper corner.
fn weighted_moment(rule: &dyn StationaryRule, bx: &StateBox) -> (f64, bool) {
    let space = StateSpace::full(bx.clone());
    let pi = Distribution::from_rule(rule, space).unwrap();
    let (arg, sup) = pi
        .entries()
        .map(|(x, p)| {
            let w: f64 = x.iter().map(|&v| (v as f64 + 1.0).powi(3)).product();
            (x, p * w)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let corner = arg.iter().zip(bx.upper()).any(|(&v, &u)| v == i64::from(u));
    (sup, !corner)
}

#[test]
fn third_moment_weighted_supremum_stabilizes() {
    for (text, c) in [
        (samples::BIRTH_DEATH, vec![1.0]),
        (samples::KEY_EXAMPLE, vec![1.0, 1.0]),
        (samples::OPEN_CXB, vec![1.0, 1.0]),
    ] {
        let net = samples::load(text);
        let rule = ProductFormRule::for_network(&net, &c).unwrap();
        let (at40, inside40) = weighted_moment(&rule, &StateBox::cube(net.dim(), 40).unwrap());
        let (at50, inside50) = weighted_moment(&rule, &StateBox::cube(net.dim(), 50).unwrap());
        assert!(inside40 && inside50);
        assert!((at50 - at40).abs() <= 0.01 * at40, "{net}: {at40} vs {at50}");
    }
}

#[test]
fn eigenfunction_attains_the_gap() {
    for (text, upper) in [(samples::BIRTH_DEATH, vec![1]), (samples::BIRTH_DEATH, vec![40])] {
        let net = samples::load(text);
        let chain = TruncatedChain::from_network(&net, &StateBox::new(upper).unwrap()).unwrap();
        let pi = solve_stationary_truncated(&chain).unwrap();
        let gap = estimate_gap(&pi, &chain).unwrap();
        let forms = dirichlet_forms(&pi, &chain, &gap.eigenfunction).unwrap();
        let quotient = forms.symmetric / variance(&pi, &gap.eigenfunction).unwrap();
        assert!((quotient - gap.value).abs() <= 1e-9 + gap.residual);
        for seed in 0..10_000u64 {
            let f = values(seed, chain.len());
            let q = dirichlet_forms(&pi, &chain, &f).unwrap().symmetric / variance(&pi, &f).unwrap();
            assert!(gap.value <= q * (1.0 + 1e-9));
        }
    }
}
