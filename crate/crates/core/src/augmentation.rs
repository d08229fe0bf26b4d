//! Delay augmentation: augmented-state indexing, exact beliefs over the
//! current state, delayed beliefs between two delays, the materialized
//! constant-delay MDP, and the online delayed environment.
//!
//! An augmented state `(s, [a_0, …, a_{Δ−1}])` stores its window oldest
//! first. Its index is `s·|A|^Δ + Σ_i a_i·|A|^{Δ−1−i}`, so the oldest
//! action is the most significant digit and the shorter-delay suffix of a
//! window is the index modulo `|A|^{Δτ}`.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{check_index, sample_index, FiniteMdp, SparseRows, TabularMdp, ROW_TOL};

/// Default cap on the number of augmented states a build may materialize.
pub const DEFAULT_BUDGET: u64 = 5_000_000;

/// Environment variable overriding [`DEFAULT_BUDGET`].
pub const BUDGET_ENV: &str = "DELAYLAB_BUDGET";

/// The augmented-state budget, honoring `DELAYLAB_BUDGET` when it parses.
pub fn budget_from_env() -> u64 {
    std::env::var(BUDGET_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_BUDGET)
}

/// `(s_{t−Δ}, a_{t−Δ}, …, a_{t−1})`, oldest action first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AugState {
    pub base_state: usize,
    pub window: Vec<usize>,
}

impl AugState {
    pub fn new(base_state: usize, window: Vec<usize>) -> Self {
        AugState { base_state, window }
    }

    pub fn delta(&self) -> usize {
        self.window.len()
    }

    /// The augmented state seen with a shorter delay once the base state
    /// has moved to `base_state`: the window keeps its last `delta_tau`
    /// actions.
    pub fn suffix_view(&self, base_state: usize, delta_tau: usize) -> AugState {
        let k = self.window.len() - delta_tau;
        AugState::new(base_state, self.window[k..].to_vec())
    }
}

/// Index arithmetic for the space `S × A^Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugSpace {
    num_states: usize,
    num_actions: usize,
    delta: usize,
    window_count: usize,
}

impl AugSpace {
    /// Fails only if the index range does not fit in `usize`.
    pub fn new(num_states: usize, num_actions: usize, delta: usize) -> Result<Self> {
        let size = aug_size(num_states, num_actions, delta);
        if size > usize::MAX as u128 {
            return Err(Error::BudgetExceeded {
                size,
                budget: usize::MAX as u64,
            });
        }
        Ok(AugSpace {
            num_states,
            num_actions,
            delta,
            window_count: num_actions.pow(delta as u32),
        })
    }

    pub fn with_budget(num_states: usize, num_actions: usize, delta: usize, budget: u64) -> Result<Self> {
        let size = aug_size(num_states, num_actions, delta);
        if size > budget as u128 {
            return Err(Error::BudgetExceeded { size, budget });
        }
        Self::new(num_states, num_actions, delta)
    }

    pub fn size(&self) -> usize {
        self.num_states * self.window_count
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// `|A|^Δ`.
    pub fn window_count(&self) -> usize {
        self.window_count
    }

    pub fn encode(&self, x: &AugState) -> Result<usize> {
        if x.window.len() != self.delta {
            return Err(Error::WindowLength {
                expected: self.delta,
                got: x.window.len(),
            });
        }
        check_index("state", x.base_state, self.num_states)?;
        for &a in &x.window {
            check_index("action", a, self.num_actions)?;
        }
        Ok(self.encode_unchecked(x.base_state, &x.window))
    }

    #[inline]
    pub fn encode_unchecked(&self, s: usize, window: &[usize]) -> usize {
        window
            .iter()
            .fold(s, |acc, &a| acc * self.num_actions + a)
    }

    pub fn decode(&self, index: usize) -> AugState {
        let mut window = vec![0; self.delta];
        let mut rest = index;
        for slot in window.iter_mut().rev() {
            *slot = rest % self.num_actions;
            rest /= self.num_actions;
        }
        AugState::new(rest, window)
    }

    #[inline]
    pub fn base_of(&self, index: usize) -> usize {
        index / self.window_count
    }

    /// Window part of the index, in `0..|A|^Δ`.
    #[inline]
    pub fn window_of(&self, index: usize) -> usize {
        index % self.window_count
    }

    /// Oldest action of the window. Only meaningful for `Δ > 0`.
    #[inline]
    pub fn oldest_action(&self, index: usize) -> usize {
        self.window_of(index) / (self.window_count / self.num_actions)
    }

    /// Index of the successor with base state `next_base` after appending
    /// `action` and dropping the oldest action.
    #[inline]
    pub fn shift(&self, index: usize, next_base: usize, action: usize) -> usize {
        if self.delta == 0 {
            return next_base;
        }
        let tail = self.window_of(index) % (self.window_count / self.num_actions);
        next_base * self.window_count + tail * self.num_actions + action
    }
}

fn aug_size(num_states: usize, num_actions: usize, delta: usize) -> u128 {
    let mut size = num_states as u128;
    for _ in 0..delta {
        size = size.saturating_mul(num_actions as u128);
    }
    size
}

/// Augmented index of `aug` for an action count and delay.
pub fn encode(aug: &AugState, num_states: usize, num_actions: usize, delta: usize) -> Result<usize> {
    AugSpace::new(num_states, num_actions, delta)?.encode(aug)
}

pub fn decode(index: usize, num_states: usize, num_actions: usize, delta: usize) -> Result<AugState> {
    let space = AugSpace::new(num_states, num_actions, delta)?;
    check_index("augmented index", index, space.size())?;
    Ok(space.decode(index))
}

/// Probability vector over base states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefDist {
    pub probs: Vec<f64>,
}

impl BeliefDist {
    pub fn dirac(num_states: usize, s: usize) -> Self {
        let mut probs = vec![0.0; num_states];
        probs[s] = 1.0;
        BeliefDist { probs }
    }

    pub fn is_normalized(&self) -> bool {
        self.probs.iter().all(|p| *p >= 0.0) && (self.probs.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
    }

    /// One application of the transition kernel under `action`.
    pub fn push(&self, mdp: &TabularMdp, action: usize) -> BeliefDist {
        let mut out = vec![0.0; self.probs.len()];
        push_into(mdp, &self.probs, action, &mut out);
        BeliefDist { probs: out }
    }
}

#[inline]
fn push_into(mdp: &TabularMdp, dist: &[f64], action: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (s, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for &(n, q) in mdp.successors(s, action) {
            out[n] += p * q;
        }
    }
}

fn check_aug(mdp: &TabularMdp, x: &AugState) -> Result<()> {
    check_index("state", x.base_state, mdp.num_states())?;
    for &a in &x.window {
        check_index("action", a, mdp.num_actions())?;
    }
    Ok(())
}

/// Distribution of the current state given the augmented state: a Dirac at
/// the base state pushed through every action of the window in order.
pub fn belief(mdp: &TabularMdp, x: &AugState) -> Result<BeliefDist> {
    check_aug(mdp, x)?;
    Ok(x
        .window
        .iter()
        .fold(BeliefDist::dirac(mdp.num_states(), x.base_state), |b, &a| b.push(mdp, a)))
}

/// Distribution over `Δτ`-augmented states consistent with `x`. Every
/// support element shares the last `Δτ` actions of `x.window`; its base
/// state is distributed as the belief of the window prefix.
pub fn delayed_belief(mdp: &TabularMdp, x: &AugState, delta_tau: usize) -> Result<Vec<(AugState, f64)>> {
    check_aug(mdp, x)?;
    let delta = x.window.len();
    if delta_tau > delta {
        return Err(Error::DelayOrder { delta, delta_tau });
    }
    let k = delta - delta_tau;
    let prefix = AugState::new(x.base_state, x.window[..k].to_vec());
    let b = belief(mdp, &prefix)?;
    Ok(b.probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(s, &p)| (x.suffix_view(s, delta_tau), p))
        .collect())
}

/// `b_Δ(·|x)` for every `x` of the `Δ` space, as sparse rows of
/// `(Δτ-index, probability)`.
#[derive(Debug, Clone)]
pub struct DelayedBeliefTable {
    full: AugSpace,
    aux: AugSpace,
    rows: SparseRows,
}

impl DelayedBeliefTable {
    pub fn build(mdp: &TabularMdp, delta: usize, delta_tau: usize, budget: u64) -> Result<Self> {
        if delta_tau > delta {
            return Err(Error::DelayOrder { delta, delta_tau });
        }
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let full = AugSpace::with_budget(ns, na, delta, budget)?;
        let aux = AugSpace::with_budget(ns, na, delta_tau, budget)?;
        let prefix_len = delta - delta_tau;
        let prefix_space = AugSpace::new(ns, na, prefix_len)?;
        let suffix_count = aux.window_count();

        // beliefs of every (s, prefix) in prefix-index order
        let mut prefix_beliefs: Vec<Vec<(usize, f64)>> = Vec::with_capacity(prefix_space.size());
        for_each_belief(mdp, prefix_len, |_, dist| {
            prefix_beliefs.push(
                dist.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(s, &p)| (s, p))
                    .collect(),
            );
        });

        let mut rows = SparseRows::with_capacity(full.size(), full.size());
        for support in &prefix_beliefs {
            for suffix in 0..suffix_count {
                for &(s, p) in support {
                    rows.push(s * suffix_count + suffix, p);
                }
                rows.finish_row();
            }
        }
        debug_assert_eq!(rows.num_rows(), full.size());
        Ok(DelayedBeliefTable { full, aux, rows })
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        self.rows.row(x)
    }

    pub fn full_space(&self) -> AugSpace {
        self.full
    }

    pub fn aux_space(&self) -> AugSpace {
        self.aux
    }

    /// `Σ_{x^τ} b_Δ(x^τ|x)·f(x^τ)`.
    #[inline]
    pub fn expect<F: Fn(usize) -> f64>(&self, x: usize, f: F) -> f64 {
        self.row(x).iter().map(|&(xt, p)| p * f(xt)).sum()
    }

    /// `m(x,a) = Σ_{x^τ} b_Δ(x^τ|x)·q_aux(x^τ,a)` for all `(x, a)`, flat.
    pub fn project(&self, q_aux: &[f64], num_actions: usize) -> Vec<f64> {
        let n = self.full.size();
        let mut out = vec![0.0; n * num_actions];
        for x in 0..n {
            for &(xt, p) in self.row(x) {
                let src = &q_aux[xt * num_actions..(xt + 1) * num_actions];
                for (o, v) in out[x * num_actions..(x + 1) * num_actions].iter_mut().zip(src) {
                    *o += p * v;
                }
            }
        }
        out
    }
}

/// Depth-first walk over every `(s, window)` of length `depth`, in index
/// order, handing each index and its belief to `visit`.
fn for_each_belief<F: FnMut(usize, &[f64])>(mdp: &TabularMdp, depth: usize, mut visit: F) {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut stack: Vec<Vec<f64>> = vec![vec![0.0; ns]; depth + 1];
    fn walk<F: FnMut(usize, &[f64])>(
        mdp: &TabularMdp,
        level: usize,
        depth: usize,
        index: usize,
        na: usize,
        stack: &mut [Vec<f64>],
        visit: &mut F,
    ) {
        if level == depth {
            visit(index, &stack[level]);
            return;
        }
        for a in 0..na {
            let (head, tail) = stack.split_at_mut(level + 1);
            push_into(mdp, &head[level], a, &mut tail[0]);
            walk(mdp, level + 1, depth, index * na + a, na, stack, visit);
        }
    }
    for s in 0..ns {
        stack[0].iter_mut().for_each(|v| *v = 0.0);
        stack[0][s] = 1.0;
        walk(mdp, 0, depth, s, na, &mut stack, &mut visit);
    }
}

/// The constant-delay MDP over `S × A^Δ`, fully materialized.
///
/// `P_Δ` advances the base state with the oldest action of the window and
/// appends the chosen action; `R_Δ(x,a) = Σ_s b(s|x)·R(s,a)` uses the exact
/// belief. The initial distribution pads `ρ` with the null action `0`.
#[derive(Debug, Clone)]
pub struct Cdmdp {
    space: AugSpace,
    gamma: f64,
    rows: SparseRows,
    reward: Vec<f64>,
    initial: Vec<(usize, f64)>,
}

/// Builds the CDMDP under the budget read from the environment.
pub fn build_cdmdp(mdp: &TabularMdp, delta: usize) -> Result<Cdmdp> {
    build_cdmdp_with_budget(mdp, delta, budget_from_env())
}

pub fn build_cdmdp_with_budget(mdp: &TabularMdp, delta: usize, budget: u64) -> Result<Cdmdp> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let space = AugSpace::with_budget(ns, na, delta, budget)?;
    let n = space.size();
    let mut reward = vec![0.0; n * na];
    for_each_belief(mdp, delta, |x, dist| {
        for a in 0..na {
            reward[x * na + a] = dist
                .iter()
                .enumerate()
                .filter(|(_, p)| **p != 0.0)
                .map(|(s, &p)| p * mdp.reward(s, a))
                .sum();
        }
    });

    let mut rows = SparseRows::with_capacity(n * na, n * na);
    for x in 0..n {
        let s = space.base_of(x);
        for a in 0..na {
            let mover = if delta == 0 { a } else { space.oldest_action(x) };
            for &(next, p) in mdp.successors(s, mover) {
                rows.push(space.shift(x, next, a), p);
            }
            rows.finish_row();
        }
    }

    let initial = mdp
        .initial_dist()
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(s, &p)| (s * space.window_count(), p))
        .collect();

    Ok(Cdmdp {
        space,
        gamma: mdp.gamma(),
        rows,
        reward,
        initial,
    })
}

impl Cdmdp {
    pub fn space(&self) -> AugSpace {
        self.space
    }

    pub fn delta(&self) -> usize {
        self.space.delta()
    }

    pub fn aug_size(&self) -> usize {
        self.space.size()
    }

    /// Sparse `(aug-index, probability)` pairs of `ρ_Δ`.
    pub fn initial_aug_dist(&self) -> &[(usize, f64)] {
        &self.initial
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Dense copy as an ordinary [`TabularMdp`]; refuses tables with more
    /// than `5·10^7` transition entries.
    pub fn to_tabular(&self) -> Result<TabularMdp> {
        let (n, na) = (self.aug_size(), self.space.num_actions());
        let entries = (n as u128) * (n as u128) * (na as u128);
        if entries > 50_000_000 {
            return Err(Error::BudgetExceeded {
                size: entries,
                budget: 50_000_000,
            });
        }
        let mut transition = vec![0.0; n * na * n];
        for x in 0..n {
            for a in 0..na {
                for &(next, p) in self.successors(x, a) {
                    transition[(x * na + a) * n + next] += p;
                }
            }
        }
        let mut initial = vec![0.0; n];
        for &(x, p) in &self.initial {
            initial[x] += p;
        }
        TabularMdp::new(n, na, self.gamma, transition, self.reward.clone(), initial)
    }

    pub fn to_json(&self) -> Result<String> {
        self.to_tabular()?.to_json()
    }
}

impl FiniteMdp for Cdmdp {
    fn num_states(&self) -> usize {
        self.space.size()
    }
    fn num_actions(&self) -> usize {
        self.space.num_actions()
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    #[inline]
    fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.space.num_actions() + a]
    }
    #[inline]
    fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        self.rows.row(s * self.space.num_actions() + a)
    }
}

/// Result of one [`DelayedEnv::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs_full: AugState,
    pub obs_aux: AugState,
    pub reward: f64,
    /// Episode over: a terminal state was entered or the step cap was hit.
    pub done: bool,
    /// The episode ended only because of the step cap.
    pub truncated: bool,
}

/// Online environment that hides the last `Δ` states from the agent and
/// serves both the `Δ`- and the `Δτ`-augmented observation every step.
#[derive(Debug, Clone)]
pub struct DelayedEnv<'a> {
    mdp: &'a TabularMdp,
    full: AugSpace,
    aux: AugSpace,
    /// `[s_{t−Δ}, …, s_t]`
    states: VecDeque<usize>,
    /// `[a_{t−Δ}, …, a_{t−1}]`
    actions: VecDeque<usize>,
    rng: ChaCha8Rng,
    max_episode_steps: Option<usize>,
    t: usize,
    done: bool,
}

impl<'a> DelayedEnv<'a> {
    pub fn new(mdp: &'a TabularMdp, delta: usize, delta_tau: usize, seed: u64) -> Result<Self> {
        Self::with_rng(mdp, delta, delta_tau, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(mdp: &'a TabularMdp, delta: usize, delta_tau: usize, rng: ChaCha8Rng) -> Result<Self> {
        if delta_tau > delta {
            return Err(Error::DelayOrder { delta, delta_tau });
        }
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        Ok(DelayedEnv {
            mdp,
            full: AugSpace::new(ns, na, delta)?,
            aux: AugSpace::new(ns, na, delta_tau)?,
            states: VecDeque::with_capacity(delta + 1),
            actions: VecDeque::with_capacity(delta),
            rng,
            max_episode_steps: None,
            t: 0,
            done: true,
        })
    }

    pub fn with_max_episode_steps(mut self, steps: usize) -> Self {
        self.max_episode_steps = Some(steps);
        self
    }

    pub fn delta(&self) -> usize {
        self.full.delta()
    }

    pub fn delta_tau(&self) -> usize {
        self.aux.delta()
    }

    pub fn full_space(&self) -> AugSpace {
        self.full
    }

    pub fn aux_space(&self) -> AugSpace {
        self.aux
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }

    /// The hidden current state `s_t`.
    pub fn true_state(&self) -> usize {
        *self.states.back().expect("env not reset")
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts an episode: `Δ+1` copies of a state drawn from `ρ` and `Δ`
    /// copies of the null action `0`.
    pub fn reset(&mut self) -> (AugState, AugState) {
        let s0 = sample_index(self.mdp.initial_dist(), &mut self.rng);
        self.states.clear();
        self.states.extend(std::iter::repeat_n(s0, self.full.delta() + 1));
        self.actions.clear();
        self.actions.extend(std::iter::repeat_n(0, self.full.delta()));
        self.t = 0;
        self.done = false;
        self.observations()
    }

    pub fn observations(&self) -> (AugState, AugState) {
        let delta = self.full.delta();
        let k = delta - self.aux.delta();
        let window: Vec<usize> = self.actions.iter().copied().collect();
        let full = AugState::new(self.states[0], window.clone());
        let aux = AugState::new(self.states[k], window[k..].to_vec());
        (full, aux)
    }

    /// `(Δ-index, Δτ-index)` of the current observations.
    pub fn observation_indices(&self) -> (usize, usize) {
        let delta = self.full.delta();
        let k = delta - self.aux.delta();
        let mut full = self.states[0];
        let mut aux = self.states[k];
        let na = self.full.num_actions();
        for (i, &a) in self.actions.iter().enumerate() {
            full = full * na + a;
            if i >= k {
                aux = aux * na + a;
            }
        }
        (full, aux)
    }

    /// Advances the hidden state with `action` and shifts both buffers.
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let (reward, done, truncated) = self.step_raw(action)?;
        let (obs_full, obs_aux) = self.observations();
        Ok(StepOutcome {
            obs_full,
            obs_aux,
            reward,
            done,
            truncated,
        })
    }

    /// [`step`](Self::step) without building observation structs; returns
    /// `(reward, done, truncated)`.
    pub fn step_raw(&mut self, action: usize) -> Result<(f64, bool, bool)> {
        if self.done {
            return Err(Error::Terminated);
        }
        check_index("action", action, self.full.num_actions())?;
        let s = self.true_state();
        let next = sample_index(self.mdp.transition_row(s, action), &mut self.rng);
        let reward = self.mdp.reward(s, action);
        self.states.push_back(next);
        self.states.pop_front();
        if self.full.delta() > 0 {
            self.actions.push_back(action);
            self.actions.pop_front();
        }
        self.t += 1;
        let terminal = self.mdp.is_terminal(next);
        let truncated = !terminal && self.max_episode_steps.is_some_and(|m| self.t >= m);
        self.done = terminal || truncated;
        Ok((reward, self.done, truncated))
    }
}
