//! Benchmark instances: a deterministic corridor, uniform action noise on
//! top of any MDP, and a seeded random-MDP generator.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, TabularMdp};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A line of `length` cells; the agent starts in cell 0 and the last cell is
/// an absorbing goal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorridorSpec {
    pub length: usize,
    /// Reward of every move that does not enter the goal.
    pub step_cost: f64,
    /// Reward for entering the goal.
    pub goal_reward: f64,
    pub gamma: f64,
}

impl CorridorSpec {
    pub fn new(length: usize, step_cost: f64, goal_reward: f64, gamma: f64) -> Self {
        CorridorSpec {
            length,
            step_cost,
            goal_reward,
            gamma,
        }
    }

    /// Delay-free optimal value of cell 0 when moving right is optimal.
    pub fn direct_path_value(&self) -> f64 {
        let steps = self.length as i32 - 2;
        (0..steps).map(|k| self.gamma.powi(k) * self.step_cost).sum::<f64>()
            + self.gamma.powi(steps) * self.goal_reward
    }
}

/// Corridor with actions `LEFT` (blocked by the wall at 0) and `RIGHT`.
pub fn build_corridor(spec: &CorridorSpec) -> Result<TabularMdp> {
    let n = spec.length;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("corridor length {n} must be at least 2")));
    }
    let goal = n - 1;
    let mut transition = vec![0.0; n * 2 * n];
    let mut reward = vec![0.0; n * 2];
    for s in 0..n {
        for a in [LEFT, RIGHT] {
            let next = match (s, a) {
                (s, _) if s == goal => goal,
                (s, LEFT) => s.saturating_sub(1),
                (s, _) => s + 1,
            };
            transition[(s * 2 + a) * n + next] = 1.0;
            reward[s * 2 + a] = if s == goal {
                0.0
            } else if next == goal {
                spec.goal_reward
            } else {
                spec.step_cost
            };
        }
    }
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    TabularMdp::new(n, 2, spec.gamma, transition, reward, initial)?.with_terminal(&[goal])
}

/// With probability `noise_prob` the executed action is replaced by a
/// uniformly drawn one: `P̃(·|s,a) = (1−p)·P(·|s,a) + p·mean_{a'} P(·|s,a')`,
/// and rewards are mixed the same way. Terminal states are kept.
pub fn apply_action_noise(mdp: &TabularMdp, noise_prob: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&noise_prob) {
        return Err(Error::InvalidParameter(format!(
            "noise_prob {noise_prob} outside [0, 1]"
        )));
    }
    if noise_prob == 0.0 {
        return Ok(mdp.clone());
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let p = noise_prob;
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        let mut mean_row = vec![0.0; ns];
        let mut mean_reward = 0.0;
        for b in 0..na {
            for (m, v) in mean_row.iter_mut().zip(mdp.transition_row(s, b)) {
                *m += v / na as f64;
            }
            mean_reward += mdp.reward(s, b) / na as f64;
        }
        for a in 0..na {
            let out = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            for ((o, v), m) in out.iter_mut().zip(mdp.transition_row(s, a)).zip(&mean_row) {
                *o = (1.0 - p) * v + p * m;
            }
            reward[s * na + a] = (1.0 - p) * mdp.reward(s, a) + p * mean_reward;
        }
    }
    TabularMdp::new(ns, na, mdp.gamma(), transition, reward, mdp.initial_dist().to_vec())?
        .with_terminal(&mdp.terminal_states())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    /// Distinct successors per `(s, a)`.
    pub branching: usize,
    pub reward_scale: f64,
    pub gamma: f64,
    pub seed: u64,
}

/// Each `(s, a)` gets `branching` distinct successors with Dirichlet(1)
/// weights; rewards are uniform on `[0, reward_scale]`; the start state is
/// uniform.
pub fn build_random_mdp(spec: &RandomMdpSpec) -> Result<TabularMdp> {
    let (ns, na, k) = (spec.num_states, spec.num_actions, spec.branching);
    if ns == 0 || na == 0 || k == 0 || k > ns {
        return Err(Error::InvalidParameter(format!(
            "random MDP needs 1 <= branching <= num_states (got {k} of {ns})"
        )));
    }
    if !(spec.reward_scale >= 0.0) {
        return Err(Error::InvalidParameter("reward_scale must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut transition = vec![0.0; ns * na * ns];
    let mut reward = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let succ = sample(&mut rng, ns, k);
            let weights: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1) + 1e-12).collect();
            let total: f64 = weights.iter().sum();
            let row = &mut transition[(s * na + a) * ns..(s * na + a + 1) * ns];
            for (n, w) in succ.iter().zip(&weights) {
                row[n] = w / total;
            }
            reward[s * na + a] = rng.random::<f64>() * spec.reward_scale;
        }
    }
    TabularMdp::new(ns, na, spec.gamma, transition, reward, vec![1.0 / ns as f64; ns])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;

    #[test]
    fn corridor_shape() {
        let mdp = build_corridor(&CorridorSpec::new(5, 0.0, 1.0, 0.9)).unwrap();
        assert_eq!(mdp.num_states(), 5);
        assert!(mdp.is_terminal(4));
        assert!(mdp.is_deterministic());
        assert_eq!(mdp.transition_prob(0, LEFT, 0), 1.0);
        assert_eq!(mdp.reward(3, RIGHT), 1.0);
    }

    #[test]
    fn corridor_optimal_value() {
        let spec = CorridorSpec::new(6, -0.2, 2.0, 0.9);
        let mdp = build_corridor(&spec).unwrap();
        let q = value_iteration(&mdp, 1e-12).unwrap();
        let v0 = q[0].max(q[1]);
        let hand = -0.2 * (1.0 + 0.9 + 0.81 + 0.729) + 0.9f64.powi(4) * 2.0;
        assert!((v0 - hand).abs() < 1e-9);
        assert!((spec.direct_path_value() - hand).abs() < 1e-12);
    }

    #[test]
    fn noise_mixture() {
        let mdp = build_corridor(&CorridorSpec::new(5, 0.0, 1.0, 0.9)).unwrap();
        assert_eq!(apply_action_noise(&mdp, 0.0).unwrap(), mdp);
        let noisy = apply_action_noise(&mdp, 0.1).unwrap();
        assert!((noisy.transition_prob(2, RIGHT, 3) - 0.95).abs() < 1e-15);
        assert!(noisy.is_terminal(4));
        let full = apply_action_noise(&mdp, 1.0).unwrap();
        for s in 0..5 {
            assert_eq!(full.transition_row(s, LEFT), full.transition_row(s, RIGHT));
        }
        assert!(apply_action_noise(&mdp, 1.5).is_err());
    }

    #[test]
    fn random_mdp_properties() {
        let spec = RandomMdpSpec {
            num_states: 5,
            num_actions: 3,
            branching: 3,
            reward_scale: 1.0,
            gamma: 0.9,
            seed: 42,
        };
        let a = build_random_mdp(&spec).unwrap();
        assert_eq!(a, build_random_mdp(&spec).unwrap());
        for s in 0..5 {
            for act in 0..3 {
                let row = a.transition_row(s, act);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 3);
            }
        }
        let det = build_random_mdp(&RandomMdpSpec { branching: 1, ..spec }).unwrap();
        assert!(det.is_deterministic());
        assert!(build_random_mdp(&RandomMdpSpec { branching: 6, ..spec }).is_err());
    }
}
