//! Finite delay-free MDPs, tabular policies and the standard exact solvers
//! (policy evaluation, value iteration) that every other module uses as an
//! oracle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance applied to every probability-row normalization check.
pub const ROW_TOL: f64 = 1e-9;

/// Compressed sparse rows of successor distributions, one row per
/// `(state, action)` pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseRows {
    pub fn with_capacity(rows: usize, entries: usize) -> Self {
        let mut offsets = Vec::with_capacity(rows + 1);
        offsets.push(0);
        SparseRows {
            offsets,
            entries: Vec::with_capacity(entries),
        }
    }

    pub fn push(&mut self, next: usize, prob: f64) {
        self.entries.push((next, prob));
    }

    pub fn finish_row(&mut self) {
        self.offsets.push(self.entries.len());
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }
}

/// Read-only view of a finite MDP with sparse successor rows. Implemented by
/// the base [`TabularMdp`] and by the delay-augmented
/// [`Cdmdp`](crate::augmentation::Cdmdp), so solvers work on either.
pub trait FiniteMdp: Sync {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reward(&self, s: usize, a: usize) -> f64;
    fn successors(&self, s: usize, a: usize) -> &[(usize, f64)];

    fn max_abs_reward(&self) -> f64 {
        let mut m = 0.0f64;
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                m = m.max(self.reward(s, a).abs());
            }
        }
        m
    }

    /// `Σ_{s'} P(s'|s,a) f(s')`.
    #[inline]
    fn expect<F: Fn(usize) -> f64>(&self, s: usize, a: usize, f: F) -> f64 {
        self.successors(s, a).iter().map(|&(n, p)| p * f(n)).sum()
    }
}

/// A finite, delay-free MDP `<S, A, P, R, γ, ρ>`.
///
/// Terminal states are absorbing with zero reward; they are listed so that
/// online environments can stop episodes when one is entered.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    /// Dense, indexed `[(s * A + a) * S + s']`.
    transition: Vec<f64>,
    /// Indexed `[s * A + a]`.
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
    terminal: Vec<bool>,
    sparse: SparseRows,
}

/// On-disk JSON layout of an MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
    /// Indices of absorbing terminal states, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminal: Vec<usize>,
}

impl TabularMdp {
    /// Builds and validates an MDP from flat row-major tables.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Dimension(
                "num_states and num_actions must be positive".into(),
            ));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                num_states * num_actions
            )));
        }
        if initial_dist.len() != num_states {
            return Err(Error::Dimension(format!(
                "initial_dist has {} entries, expected {}",
                initial_dist.len(),
                num_states
            )));
        }
        let mut mdp = TabularMdp {
            num_states,
            num_actions,
            gamma,
            transition,
            reward,
            initial_dist,
            terminal: vec![false; num_states],
            sparse: SparseRows::default(),
        };
        validate(&mdp)?;
        mdp.rebuild_sparse();
        Ok(mdp)
    }

    /// Marks the given states as terminal. They must already be absorbing.
    pub fn with_terminal(mut self, states: &[usize]) -> Result<Self> {
        for &s in states {
            if s >= self.num_states {
                return Err(Error::IndexOutOfRange {
                    what: "terminal state",
                    index: s,
                    size: self.num_states,
                });
            }
            for a in 0..self.num_actions {
                if self.transition_prob(s, a, s) != 1.0 || self.reward(s, a) != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "terminal state {s} must be absorbing with zero reward"
                    )));
                }
            }
            self.terminal[s] = true;
        }
        Ok(self)
    }

    fn rebuild_sparse(&mut self) {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut rows = SparseRows::with_capacity(ns * na, ns * na);
        for s in 0..ns {
            for a in 0..na {
                for (n, &p) in self.transition_row(s, a).iter().enumerate() {
                    if p > 0.0 {
                        rows.push(n, p);
                    }
                }
                rows.finish_row();
            }
        }
        self.sparse = rows;
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition_row(s, a)[next]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.terminal[s]).collect()
    }

    /// True when every transition row is a Dirac.
    pub fn is_deterministic(&self) -> bool {
        (0..self.num_states * self.num_actions).all(|r| self.sparse.row(r).len() == 1)
    }

    pub fn to_document(&self) -> MdpDocument {
        let (ns, na) = (self.num_states, self.num_actions);
        MdpDocument {
            num_states: ns,
            num_actions: na,
            gamma: self.gamma,
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward: (0..ns)
                .map(|s| self.reward[s * na..(s + 1) * na].to_vec())
                .collect(),
            initial_dist: self.initial_dist.clone(),
            terminal: self.terminal_states(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let (ns, na) = (doc.num_states, doc.num_actions);
        if doc.transition.len() != ns || doc.reward.len() != ns {
            return Err(Error::Dimension("outer length must equal num_states".into()));
        }
        let mut transition = Vec::with_capacity(ns * na * ns);
        for (s, per_action) in doc.transition.iter().enumerate() {
            if per_action.len() != na {
                return Err(Error::Dimension(format!(
                    "transition[{s}] has {} actions, expected {na}",
                    per_action.len()
                )));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != ns {
                    return Err(Error::Dimension(format!(
                        "transition[{s}][{a}] has {} entries, expected {ns}",
                        row.len()
                    )));
                }
                transition.extend_from_slice(row);
            }
        }
        let mut reward = Vec::with_capacity(ns * na);
        for (s, row) in doc.reward.iter().enumerate() {
            if row.len() != na {
                return Err(Error::Dimension(format!(
                    "reward[{s}] has {} entries, expected {na}",
                    row.len()
                )));
            }
            reward.extend_from_slice(row);
        }
        TabularMdp::new(ns, na, doc.gamma, transition, reward, doc.initial_dist.clone())?
            .with_terminal(&doc.terminal)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}

impl FiniteMdp for TabularMdp {
    fn num_states(&self) -> usize {
        self.num_states
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn gamma(&self) -> f64 {
        self.gamma
    }
    #[inline]
    fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }
    #[inline]
    fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        self.sparse.row(s * self.num_actions + a)
    }
}

/// Checks every [`TabularMdp`] invariant and reports the first violation.
pub fn validate(mdp: &TabularMdp) -> Result<()> {
    if !(mdp.gamma > 0.0 && mdp.gamma < 1.0) {
        return Err(Error::GammaOutOfRange(mdp.gamma));
    }
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let row = mdp.transition_row(s, a);
            if let Some((next, &value)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                return Err(Error::NegativeTransition {
                    state: s,
                    action: a,
                    next,
                    value,
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::RowSum {
                    state: s,
                    action: a,
                    sum,
                });
            }
            if !mdp.reward(s, a).is_finite() {
                return Err(Error::NonFiniteReward {
                    state: s,
                    action: a,
                });
            }
        }
    }
    if let Some((state, &value)) = mdp
        .initial_dist
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p >= 0.0))
    {
        return Err(Error::InitialNegative { state, value });
    }
    let sum: f64 = mdp.initial_dist.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(Error::InitialSum { sum });
    }
    Ok(())
}

/// A stochastic policy over a (base or augmented) index space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    space_size: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(space_size: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space_size * num_actions {
            return Err(Error::Dimension(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                space_size * num_actions
            )));
        }
        let pi = TabularPolicy {
            space_size,
            num_actions,
            probs,
        };
        for x in 0..space_size {
            let row = pi.row(x);
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::PolicyRow { state: x, sum });
            }
        }
        Ok(pi)
    }

    pub fn uniform(space_size: usize, num_actions: usize) -> Self {
        TabularPolicy {
            space_size,
            num_actions,
            probs: vec![1.0 / num_actions as f64; space_size * num_actions],
        }
    }

    /// One-hot policy picking `actions[x]` in state `x`.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (x, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    index: a,
                    size: num_actions,
                });
            }
            probs[x * num_actions + a] = 1.0;
        }
        Ok(TabularPolicy {
            space_size: actions.len(),
            num_actions,
            probs,
        })
    }

    pub fn space_size(&self) -> usize {
        self.space_size
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.num_actions..(x + 1) * self.num_actions]
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.num_actions + a]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        sample_index(self.row(x), rng)
    }

    /// Writes `aug_index,action,prob` rows.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["aug_index", "action", "prob"])?;
        for x in 0..self.space_size {
            for a in 0..self.num_actions {
                w.serialize((x, a, self.prob(x, a)))?;
            }
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }
}

/// Horizon and seeding for truncated rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub seed: u64,
    pub discount_truncation_epsilon: f64,
}

impl RolloutConfig {
    pub fn new(horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        Ok(RolloutConfig {
            horizon,
            seed,
            discount_truncation_epsilon: 1e-8,
        })
    }

    /// Horizon at which `γ^H` drops below the truncation epsilon.
    pub fn truncated(gamma: f64, epsilon: f64, seed: u64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(
                "discount_truncation_epsilon must be positive".into(),
            ));
        }
        let horizon = truncation_horizon(gamma, epsilon);
        Ok(RolloutConfig {
            horizon,
            seed,
            discount_truncation_epsilon: epsilon,
        })
    }
}

/// `⌈log ε / log γ⌉`, at least 1.
pub fn truncation_horizon(gamma: f64, epsilon: f64) -> usize {
    ((epsilon.ln() / gamma.ln()).ceil() as usize).max(1)
}

/// Independent generator for consumer `stream` of a run seeded with `seed`.
/// Streams share the key but never overlap, so adding draws in one consumer
/// leaves the others untouched.
pub fn substream(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws an index from a probability vector by inversion.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Samples one base-MDP transition.
pub fn step_sample<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<(usize, f64)> {
    check_index("state", s, mdp.num_states)?;
    check_index("action", a, mdp.num_actions)?;
    let next = sample_index(mdp.transition_row(s, a), rng);
    Ok((next, mdp.reward(s, a)))
}

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        Err(Error::IndexOutOfRange { what, index, size })
    } else {
        Ok(())
    }
}

/// Exact state and action values of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValues {
    pub v: Vec<f64>,
    /// Indexed `[s * A + a]`.
    pub q: Vec<f64>,
    pub num_actions: usize,
}

impl PolicyValues {
    #[inline]
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }
}

/// Default iteration cap for a γ-contraction started at zero:
/// `10·⌈log(tol·(1−γ)/R_max)/log γ⌉`, never below 1000.
pub fn default_max_iters(gamma: f64, tol: f64, r_max: f64) -> usize {
    const FLOOR: usize = 1000;
    if r_max <= 0.0 || tol <= 0.0 {
        return FLOOR;
    }
    let ratio = tol * (1.0 - gamma) / r_max;
    if ratio >= 1.0 {
        return FLOOR;
    }
    let k = (ratio.ln() / gamma.ln()).ceil();
    ((10.0 * k) as usize).max(FLOOR)
}

/// Iterative policy evaluation until the Bellman-expectation residual on Q
/// is at most `tol`.
pub fn evaluate_policy<M: FiniteMdp + ?Sized>(
    model: &M,
    pi: &TabularPolicy,
    tol: f64,
) -> Result<PolicyValues> {
    let (ns, na, gamma) = (model.num_states(), model.num_actions(), model.gamma());
    if pi.space_size() != ns || pi.num_actions() != na {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, model is {}x{}",
            pi.space_size(),
            pi.num_actions(),
            ns,
            na
        )));
    }
    let max_iters = default_max_iters(gamma, tol, model.max_abs_reward());
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        residual = 0.0;
        for s in 0..ns {
            let row = pi.row(s);
            let mut acc = 0.0;
            for (a, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p * (model.reward(s, a) + gamma * model.expect(s, a, |n| v[n]));
                }
            }
            residual = residual.max((acc - v[s]).abs());
            next[s] = acc;
        }
        std::mem::swap(&mut v, &mut next);
        // residual of Q built from v is bounded by γ·‖v_{k+1} − v_k‖
        if gamma * residual <= tol {
            let q = q_from_v(model, &v);
            return Ok(PolicyValues {
                v,
                q,
                num_actions: na,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual,
    })
}

fn q_from_v<M: FiniteMdp + ?Sized>(model: &M, v: &[f64]) -> Vec<f64> {
    let (ns, na, gamma) = (model.num_states(), model.num_actions(), model.gamma());
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = model.reward(s, a) + gamma * model.expect(s, a, |n| v[n]);
        }
    }
    q
}

/// `V^π` and `Q^π` of a base MDP, converged to a `1e-12` residual.
pub fn exact_policy_values(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<PolicyValues> {
    evaluate_policy(mdp, pi, 1e-12)
}

/// Rows above this count are swept in parallel.
const PAR_ROWS: usize = 4096;

/// Fills `out` (flat `[s * A + a]`) with `f(s, a)`. Every entry is computed
/// independently, so the parallel path gives bit-identical results.
pub fn fill_table<F>(out: &mut [f64], num_actions: usize, f: F)
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    let fill = |(s, row): (usize, &mut [f64])| {
        for (a, v) in row.iter_mut().enumerate() {
            *v = f(s, a);
        }
    };
    if out.len() / num_actions.max(1) >= PAR_ROWS {
        out.par_chunks_mut(num_actions).enumerate().for_each(fill);
    } else {
        out.chunks_mut(num_actions).enumerate().for_each(fill);
    }
}

/// One application of the Bellman optimality operator.
pub fn bellman_optimality_backup<M: FiniteMdp + ?Sized>(model: &M, q: &[f64], out: &mut [f64]) {
    let (na, gamma) = (model.num_actions(), model.gamma());
    fill_table(out, na, |s, a| {
        model.reward(s, a) + gamma * model.expect(s, a, |n| row_max(&q[n * na..(n + 1) * na]))
    });
}

/// `max |TQ − Q|` for the optimality operator.
pub fn optimality_residual<M: FiniteMdp + ?Sized>(model: &M, q: &[f64]) -> f64 {
    let mut out = vec![0.0; q.len()];
    bellman_optimality_backup(model, q, &mut out);
    sup_dist(q, &out)
}

/// Value iteration from zero; returns Q* (flat `[s * A + a]`) whose
/// optimality residual is at most `tol`.
pub fn value_iteration<M: FiniteMdp + ?Sized>(model: &M, tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let size = model.num_states() * model.num_actions();
    let max_iters = default_max_iters(model.gamma(), tol, model.max_abs_reward());
    let mut q = vec![0.0; size];
    let mut next = vec![0.0; size];
    let mut change = f64::INFINITY;
    for _ in 0..max_iters {
        bellman_optimality_backup(model, &q, &mut next);
        change = sup_dist(&q, &next);
        std::mem::swap(&mut q, &mut next);
        if model.gamma() * change <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: change,
    })
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Greedy action per state of a flat Q table.
pub fn greedy_actions(q: &[f64], num_actions: usize) -> Vec<usize> {
    q.chunks(num_actions).map(argmax).collect()
}
