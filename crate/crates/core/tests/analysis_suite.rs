use delaylab::analysis::{
    action_lipschitz_discrete, expectation_gap, gaussian_gap_closed_form, gaussian_mc_value,
    gaussian_value_closed_form, perf_bound_from, perf_diff_from, q_bound_from, verify_optimal_q_bound, w1_discrete,
    DelayPair, GaussianMdpSpec, BOUND_SLACK,
};
use delaylab::augmentation::AugSpace;
use delaylab::envs::{build_corridor, build_random_mdp, CorridorSpec, RandomMdpSpec};
use delaylab::mdp::{TabularMdp, TabularPolicy};
use delaylab::QTable;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_policy(n: usize, na: usize, rng: &mut ChaCha8Rng) -> TabularPolicy {
    let mut probs: Vec<f64> = (0..n * na).map(|_| rng.random::<f64>()).collect();
    for row in probs.chunks_mut(na) {
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= t);
    }
    TabularPolicy::new(n, na, probs).unwrap()
}

struct Triple {
    mdp: TabularMdp,
    delta: usize,
    delta_tau: usize,
    pi: TabularPolicy,
    pi_aux: TabularPolicy,
}

fn triple(k: u64) -> Triple {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    let ns = 3 + (k % 3) as usize;
    let na = 2 + (k % 2) as usize;
    let delta = 1 + (k % 2) as usize;
    let delta_tau = (k / 2 % delta as u64) as usize;
    let mdp = build_random_mdp(&RandomMdpSpec {
        num_states: ns,
        num_actions: na,
        branching: 2,
        reward_scale: 1.0,
        gamma: 0.9,
        seed: k,
    })
    .unwrap();
    let full = AugSpace::new(ns, na, delta).unwrap().size();
    let aux = AugSpace::new(ns, na, delta_tau).unwrap().size();
    let pi = random_policy(full, na, &mut rng);
    let pi_aux = random_policy(aux, na, &mut rng);
    Triple {
        mdp,
        delta,
        delta_tau,
        pi,
        pi_aux,
    }
}

#[test]
fn performance_difference_identity_on_twenty_triples() {
    for k in 0..20 {
        let t = triple(k);
        let pair = DelayPair::new(&t.mdp, t.delta, t.delta_tau, &t.pi, &t.pi_aux).unwrap();
        let rep = perf_diff_from(&pair, &t.pi).unwrap();
        assert!(rep.max_deviation <= 1e-7, "triple {k}: {}", rep.max_deviation);
    }
}

#[test]
fn identity_detects_perturbed_values() {
    let t = triple(3);
    let mut pair = DelayPair::new(&t.mdp, t.delta, t.delta_tau, &t.pi, &t.pi_aux).unwrap();
    let clean = perf_diff_from(&pair, &t.pi).unwrap();
    pair.values.v[2] += 0.1;
    let broken = perf_diff_from(&pair, &t.pi).unwrap();
    assert!((broken.lhs[2] - broken.rhs[2]).abs() >= 0.1 - 1e-7 - clean.max_deviation);
}

#[test]
fn matched_policies_have_zero_difference() {
    let t = triple(0);
    let pair = DelayPair::new(&t.mdp, t.delta, t.delta, &t.pi, &t.pi).unwrap();
    let rep = perf_diff_from(&pair, &t.pi).unwrap();
    assert!(rep.lhs.iter().chain(&rep.rhs).all(|v| v.abs() < 1e-9));
    for r in perf_bound_from(&pair, &t.pi, &t.pi, "matched") {
        assert!(r.lhs.abs() < 1e-9 && r.holds);
    }
}

#[test]
fn policy_gap_bounds_hold_on_twenty_triples() {
    for k in 0..20 {
        let t = triple(k);
        let pair = DelayPair::new(&t.mdp, t.delta, t.delta_tau, &t.pi, &t.pi_aux).unwrap();
        let id = format!("triple{k}");
        for r in perf_bound_from(&pair, &t.pi, &t.pi_aux, &id)
            .into_iter()
            .chain(q_bound_from(&pair, &t.pi, &t.pi_aux, &id).unwrap())
        {
            assert!(r.holds, "{} {}: {} > {}", r.check, r.instance_id, r.lhs, r.rhs);
        }
    }
}

#[test]
fn optimal_policy_bound_holds_on_small_instances() {
    let corridor = build_corridor(&CorridorSpec::new(5, -0.1, 1.0, 0.9)).unwrap();
    for r in verify_optimal_q_bound(&corridor, 2, 0, 1e-12).unwrap() {
        assert!(r.holds);
    }
    for k in 0..5 {
        let t = triple(k);
        for r in verify_optimal_q_bound(&t.mdp, t.delta, t.delta_tau, 1e-12).unwrap() {
            assert!(r.holds, "{}: {} > {}", r.instance_id, r.lhs, r.rhs);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn expectation_gap_is_bounded_by_lipschitz_times_w1(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let na = 2 + (seed % 4) as usize;
        let values: Vec<f64> = (0..6 * na).map(|_| rng.random_range(-5.0..5.0)).collect();
        let q = QTable::from_values(values, 6, na, 0, 0.0).unwrap();
        let l_q = action_lipschitz_discrete(&q).l_q_discrete;
        let dists = random_policy(2, na, &mut rng);
        let (mu, nu) = (dists.row(0), dists.row(1));
        let w1 = w1_discrete(mu, nu).unwrap();
        for x in 0..6 {
            prop_assert!(expectation_gap(q.row(x), mu, nu) <= l_q * w1 + BOUND_SLACK);
        }
    }
}

#[test]
fn gaussian_walk_matches_closed_forms() {
    let one = GaussianMdpSpec::new(1.0, 1.0, 1.0, 0.9, 1, 1);
    let four = GaussianMdpSpec::new(1.0, 1.0, 1.0, 0.9, 4, 1);
    let mc1 = gaussian_mc_value(&one, 100_000, 17).unwrap();
    let mc4 = gaussian_mc_value(&four, 100_000, 18).unwrap();
    let v1 = gaussian_value_closed_form(&one);
    assert!((v1 + 7.978845608).abs() < 1e-8);
    assert!((mc1.estimate - v1).abs() <= 3.0 * mc1.std_err);
    let gap = gaussian_gap_closed_form(&four);
    let se = (mc1.std_err.powi(2) + mc4.std_err.powi(2)).sqrt();
    assert!(((mc4.estimate - mc1.estimate) + gap).abs() <= 3.0 * se);
    assert!((gaussian_value_closed_form(&four) - 2.0 * v1).abs() < 1e-9);
}

#[test]
fn gaussian_estimate_is_reproducible() {
    let spec = GaussianMdpSpec::new(1.0, 2.0, 0.5, 0.8, 2, 0);
    let a = gaussian_mc_value(&spec, 5_000, 3).unwrap();
    let b = gaussian_mc_value(&spec, 5_000, 3).unwrap();
    assert_eq!(a, b);
}
