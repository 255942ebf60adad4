use proptest::prelude::*;

use ergograph::ctmc::{solve_stationary_truncated, Distribution, ProductFormRule};
use ergograph::mixing::{
    empirical_vs_stationary, ssa_replicas, transient_distribution, tv_curve,
};
use ergograph::samples;
use ergograph::spectral::estimate_gap;
use ergograph::{ReactionNetwork, StateBox, StateSpace, TruncatedChain};

fn certified(which: usize) -> (ReactionNetwork, StateBox) {
    let (text, upper) = [
        (samples::BIRTH_DEATH, vec![30]),
        (samples::KEY_EXAMPLE, vec![15, 15]),
        (samples::OPEN_CXB, vec![10, 10]),
    ][which % 3]
        .clone();
    (samples::load(text), StateBox::new(upper).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transient_laws_conserve_mass(which in 0usize..3, t in 0.0f64..8.0, start in 0i64..10) {
        let (net, bx) = certified(which);
        let chain = TruncatedChain::from_network(&net, &bx).unwrap();
        let x0 = vec![start; net.dim()];
        let solution = transient_distribution(&chain, &x0, t).unwrap();
        let mass: f64 = solution.distribution.values().iter().sum();
        prop_assert!((mass - 1.0).abs() <= solution.error_bound, "mass {} bound {}", mass, solution.error_bound);
    }

    #[test]
    fn total_variation_respects_the_gap_bound(which in 0usize..3, start in 0i64..10) {
        let (net, bx) = certified(which);
        let chain = TruncatedChain::from_network(&net, &bx).unwrap();
        let pi = solve_stationary_truncated(&chain).unwrap();
        let gap = estimate_gap(&pi, &chain).unwrap().value;
        let times = [0.0, 0.2, 0.5, 1.0, 2.0, 4.0];
        let x0 = vec![start; net.dim()];
        for p in tv_curve(&chain, &pi, &x0, &times, gap).unwrap() {
            prop_assert!(p.tv <= p.bound + 1e-12, "{:?}", p);
        }
    }
}

#[test]
fn longer_simulations_do_not_drift_from_the_stationary_law() {
    let net = samples::load(samples::KEY_EXAMPLE);
    let rule = ProductFormRule::for_network(&net, &[1.0, 1.0]).unwrap();
    let pi = Distribution::from_rule(&rule, StateSpace::full(StateBox::cube(2, 30).unwrap())).unwrap();
    let seeds = [21, 22, 23];
    let tv = |horizon: f64| -> Vec<f64> {
        ssa_replicas(&net, &[0, 0], horizon, &seeds)
            .unwrap()
            .iter()
            .map(|t| empirical_vs_stationary(t, &pi, 0.0).unwrap().tv)
            .collect()
    };
    let short = tv(2e4);
    let long = tv(4e4);
    // Occupancy error shrinks like horizon^-1/2, so 0.01 covers seed noise.
    for (a, b) in short.iter().zip(&long) {
        assert!(*b <= a + 0.01, "{short:?} -> {long:?}");
    }
}
