use delaylab::envs::{apply_action_noise, build_corridor, build_random_mdp, CorridorSpec, RandomMdpSpec};
use delaylab::exact_solvers::solve_delay;
use delaylab::learners::{
    evaluate_policy_rollout, read_records_csv, train, write_records_csv, Actor, Algo, LearnerConfig, Transition,
};
use delaylab::mdp::{row_max, FiniteMdp};
use delaylab::QTable;

fn logged(seed: u64, total_steps: usize) -> LearnerConfig {
    LearnerConfig {
        total_steps,
        epsilon_decay_steps: total_steps / 2,
        eval_every: total_steps,
        max_episode_steps: 30,
        seed,
        log_transitions: true,
        ..LearnerConfig::default()
    }
}

fn noisy_corridor() -> delaylab::TabularMdp {
    let base = build_corridor(&CorridorSpec::new(5, -0.1, 1.0, 0.9)).unwrap();
    apply_action_noise(&base, 0.2).unwrap()
}

#[test]
fn record_returns_sum_episode_rewards() {
    let mdp = noisy_corridor();
    for algo in [Algo::AQl, Algo::AdQl { delta_tau: 1 }, Algo::Bpql] {
        let out = train(&mdp, algo, 3, &logged(4, 3_000)).unwrap();
        let mut sums = Vec::new();
        let mut acc = 0.0;
        for t in &out.transitions {
            acc += t.reward;
            if t.episode_end {
                sums.push(acc);
                acc = 0.0;
            }
        }
        assert_eq!(sums.len(), out.records.len());
        for (r, s) in out.records.iter().zip(&sums) {
            assert!((r.ret - s).abs() < 1e-12);
            assert_eq!(r.algo, algo.tag());
        }
        assert!(out.records.windows(2).all(|w| w[0].step < w[1].step));
    }
}

/// Re-applies the logged updates in order to fresh tables.
fn replay(ts: &[Transition], q: &mut QTable, q_aux: &mut QTable, gamma: f64, lr: f64) {
    for t in ts {
        if t.aux_updated {
            let target = if t.terminal { t.reward } else { t.reward + gamma * row_max(q_aux.row(t.x_aux_next)) };
            let v = q_aux.get(t.x_aux, t.action);
            q_aux.set(t.x_aux, t.action, v + lr * (target - v));
        }
        if t.main_updated {
            let target = if t.terminal {
                t.reward
            } else {
                t.reward + gamma * q_aux.get(t.x_aux_next, q.greedy(t.x_next))
            };
            let v = q.get(t.x, t.action);
            q.set(t.x, t.action, v + lr * (target - v));
        }
    }
}

#[test]
fn auxiliary_and_main_tables_follow_from_the_transition_log() {
    let mdp = noisy_corridor();
    for dt in [0, 2] {
        let cfg = logged(9, 4_000);
        let out = train(&mdp, Algo::AdQl { delta_tau: dt }, 3, &cfg).unwrap();
        let q_aux_online = out.q_aux.clone().unwrap();
        let mut q = QTable::zeros(out.q.num_states, 2, 3);
        let mut q_aux = QTable::zeros(q_aux_online.num_states, 2, dt);
        replay(&out.transitions, &mut q, &mut q_aux, mdp.gamma(), cfg.learning_rate);
        assert_eq!(q_aux.values, q_aux_online.values);
        assert_eq!(q.values, out.q.values);
        let heads = out.transitions.iter().filter(|t| t.aux_updated).count() as f64;
        let frac = heads / out.transitions.len() as f64;
        assert!((frac - 0.5).abs() < 0.05);
        assert!(out.transitions.iter().all(|t| t.aux_updated != t.main_updated));
    }
}

#[test]
fn ad_ql_on_long_delay_corridor_reaches_optimal_return() {
    let spec = CorridorSpec::new(7, 0.0, 1.0, 0.95);
    let mdp = build_corridor(&spec).unwrap();
    let cfg = LearnerConfig {
        total_steps: 60_000,
        seed: 1,
        ..LearnerConfig::default()
    };
    let out = train(&mdp, Algo::AdQl { delta_tau: 0 }, 10, &cfg).unwrap();
    let got = evaluate_policy_rollout(&mdp, 10, Actor::Greedy(&out.q), 1, 0, 100).unwrap();
    assert!((got - spec.direct_path_value()).abs() < 1e-12);
}

#[test]
fn optimal_table_rollout_returns_optimal_value() {
    let spec = CorridorSpec::new(5, -0.1, 1.0, 0.9);
    let mdp = build_corridor(&spec).unwrap();
    let q = solve_delay(&mdp, 2, 1e-12).unwrap();
    let got = evaluate_policy_rollout(&mdp, 2, Actor::Greedy(&q), 3, 5, 100).unwrap();
    assert!((got - spec.direct_path_value()).abs() < 1e-12);
    let again = evaluate_policy_rollout(&mdp, 2, Actor::Greedy(&q), 3, 5, 100).unwrap();
    assert_eq!(got, again);
}

#[test]
fn records_csv_round_trips_for_every_algorithm() {
    let mdp = build_random_mdp(&RandomMdpSpec {
        num_states: 4,
        num_actions: 2,
        branching: 2,
        reward_scale: 1.0,
        gamma: 0.9,
        seed: 3,
    })
    .unwrap();
    for algo in [Algo::AQl, Algo::AdQl { delta_tau: 1 }] {
        let out = train(&mdp, algo, 2, &logged(2, 2_000)).unwrap();
        let mut buf = b"# delaylab run v1\n".to_vec();
        write_records_csv(&out.records, &mut buf).unwrap();
        assert_eq!(read_records_csv(buf.as_slice()).unwrap(), out.records);
    }
}
