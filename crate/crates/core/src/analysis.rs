//! Exact numeric checks relating a long-delay policy to a short-delay one
//! (performance-difference identity, policy-gap bounds under the 0/1 action
//! metric), the Gaussian random-walk example, and benchmark score metrics.

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::{build_cdmdp_with_budget, budget_from_env, Cdmdp, DelayedBeliefTable};
use crate::error::{Error, Result};
use crate::exact_solvers::{greedy_policy, solve_augmented_vi, QTable};
use crate::mdp::{evaluate_policy, substream, truncation_horizon, FiniteMdp, PolicyValues, TabularMdp, TabularPolicy};

/// Tolerance for every exact policy evaluation in this module.
const EVAL_TOL: f64 = 1e-13;

/// Slack granted to every inequality check.
pub const BOUND_SLACK: f64 = 1e-9;

/// Normalized discounted occupancy `(1−γ)·Σ_k γ^k Pr(x_k = ·)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitationDist {
    pub probs: Vec<f64>,
}

/// Occupancy from `x0` under `pi`, summing the flow until `γ^k < 1e-13`.
pub fn discounted_visitation<M: FiniteMdp + ?Sized>(
    model: &M,
    pi: &TabularPolicy,
    x0: usize,
) -> Result<VisitationDist> {
    let n = model.num_states();
    if pi.space_size() != n || pi.num_actions() != model.num_actions() {
        return Err(Error::Dimension("policy does not match the model".into()));
    }
    crate::mdp::check_index("state", x0, n)?;
    let gamma = model.gamma();
    let mut cur = vec![0.0; n];
    cur[x0] = 1.0;
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut weight = 1.0 - gamma;
    let mut tail = 1.0;
    while tail >= 1e-13 {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (x, &p) in cur.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            acc[x] += weight * p;
            for (a, &pa) in pi.row(x).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for &(y, q) in model.successors(x, a) {
                    next[y] += p * pa * q;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        weight *= gamma;
        tail *= gamma;
    }
    Ok(VisitationDist { probs: acc })
}

fn visitation_rows<M: FiniteMdp + ?Sized>(model: &M, pi: &TabularPolicy) -> Result<Vec<Vec<f64>>> {
    (0..model.num_states())
        .into_par_iter()
        .map(|x| discounted_visitation(model, pi, x).map(|d| d.probs))
        .collect()
}

/// `(1/2)·Σ|p_i − q_i|`: the 1-Wasserstein distance under the 0/1 metric.
pub fn w1_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", p.len(), q.len())));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Action-Lipschitz constant of a table under the 0/1 action metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub l_q_discrete: f64,
    pub per_state_max_gap: Vec<f64>,
}

/// Largest within-row spread `max_a q − min_a q`, per row and overall.
pub fn action_lipschitz_discrete(q: &QTable) -> LipschitzReport {
    let per_state_max_gap: Vec<f64> = q
        .values
        .chunks(q.num_actions)
        .map(|row| {
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .collect();
    LipschitzReport {
        l_q_discrete: per_state_max_gap.iter().copied().fold(0.0, f64::max),
        per_state_max_gap,
    }
}

/// `|E_{a∼μ} row(a) − E_{a∼ν} row(a)|`.
pub fn expectation_gap(row: &[f64], mu: &[f64], nu: &[f64]) -> f64 {
    row.iter()
        .zip(mu.iter().zip(nu))
        .map(|(v, (m, n))| v * (m - n))
        .sum::<f64>()
        .abs()
}

/// One checked inequality or identity, as written to reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub instance_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub deviation: f64,
    pub holds: bool,
}

impl VerificationReport {
    /// `lhs == rhs` up to `tol`.
    pub fn identity(check: &str, instance_id: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        let deviation = (lhs - rhs).abs();
        VerificationReport {
            check: check.into(),
            instance_id: instance_id.into(),
            lhs,
            rhs,
            deviation,
            holds: deviation <= tol,
        }
    }

    /// `lhs ≤ rhs + BOUND_SLACK`; the deviation is the excess `lhs − rhs`.
    pub fn upper_bound(check: &str, instance_id: &str, lhs: f64, rhs: f64) -> Self {
        VerificationReport {
            check: check.into(),
            instance_id: instance_id.into(),
            lhs,
            rhs,
            deviation: lhs - rhs,
            holds: lhs <= rhs + BOUND_SLACK,
        }
    }
}

/// Exact values of a `Δ` policy and a `Δτ` policy on their CDMDPs.
pub struct DelayPair {
    pub full: Cdmdp,
    pub aux: Cdmdp,
    pub beliefs: DelayedBeliefTable,
    pub values: PolicyValues,
    pub aux_values: PolicyValues,
}

impl DelayPair {
    pub fn new(
        mdp: &TabularMdp,
        delta: usize,
        delta_tau: usize,
        pi: &TabularPolicy,
        pi_aux: &TabularPolicy,
    ) -> Result<Self> {
        if delta_tau > delta {
            return Err(Error::DelayOrder { delta, delta_tau });
        }
        let budget = budget_from_env();
        let full = build_cdmdp_with_budget(mdp, delta, budget)?;
        let aux = build_cdmdp_with_budget(mdp, delta_tau, budget)?;
        let beliefs = DelayedBeliefTable::build(mdp, delta, delta_tau, budget)?;
        let values = evaluate_policy(&full, pi, EVAL_TOL)?;
        let aux_values = evaluate_policy(&aux, pi_aux, EVAL_TOL)?;
        Ok(DelayPair {
            full,
            aux,
            beliefs,
            values,
            aux_values,
        })
    }

    fn aux_q_table(&self) -> QTable {
        QTable::from_values(
            self.aux_values.q.clone(),
            self.aux.aug_size(),
            self.aux.num_actions(),
            self.aux.delta(),
            EVAL_TOL,
        )
        .expect("sizes match")
    }

    /// `E_{x^τ∼b_Δ(·|x)} W1(π^τ(·|x^τ), π(·|x))`.
    fn belief_w1(&self, x: usize, pi: &TabularPolicy, pi_aux: &TabularPolicy) -> f64 {
        self.beliefs
            .expect(x, |xt| w1_discrete(pi_aux.row(xt), pi.row(x)).expect("same action count"))
    }
}

/// Per-`x` sides of the performance-difference identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfDiffReport {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub max_deviation: f64,
}

/// LHS `= Σ b_Δ(x^τ|x)·V^τ(x^τ) − V(x)` from exact evaluation; RHS
/// `= 1/(1−γ)·E_{x̂∼d^π_x, a∼π(·|x̂), x̂^τ∼b_Δ(·|x̂)}[V^τ(x̂^τ) − Q^τ(x̂^τ,a)]`
/// from explicit occupancy measures.
pub fn performance_difference_exact(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    pi: &TabularPolicy,
    pi_aux: &TabularPolicy,
) -> Result<PerfDiffReport> {
    let pair = DelayPair::new(mdp, delta, delta_tau, pi, pi_aux)?;
    Ok(perf_diff_from(&pair, pi)?)
}

pub fn perf_diff_from(pair: &DelayPair, pi: &TabularPolicy) -> Result<PerfDiffReport> {
    let n = pair.full.aug_size();
    let na = pair.full.num_actions();
    let gamma = pair.full.gamma();
    let (v, vt, qt) = (&pair.values.v, &pair.aux_values.v, &pair.aux_values.q);
    let lhs: Vec<f64> = (0..n).map(|x| pair.beliefs.expect(x, |xt| vt[xt]) - v[x]).collect();
    let advantage: Vec<f64> = (0..n)
        .map(|x| {
            pi.row(x)
                .iter()
                .enumerate()
                .map(|(a, &p)| p * pair.beliefs.expect(x, |xt| vt[xt] - qt[xt * na + a]))
                .sum()
        })
        .collect();
    let occupancy = visitation_rows(&pair.full, pi)?;
    let rhs: Vec<f64> = occupancy
        .iter()
        .map(|d| d.iter().zip(&advantage).map(|(p, f)| p * f).sum::<f64>() / (1.0 - gamma))
        .collect();
    let max_deviation = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(PerfDiffReport {
        lhs,
        rhs,
        max_deviation,
    })
}

/// Per-`x` check of the one-step policy-gap bound
/// `E_{x^τ, a∼π}[V^τ(x^τ) − Q^τ(x^τ,a)] ≤ L_Q·E_{x^τ}[W1(π^τ(·|x^τ), π(·|x))]`.
pub fn verify_perf_bound(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    pi: &TabularPolicy,
    pi_aux: &TabularPolicy,
) -> Result<Vec<VerificationReport>> {
    let pair = DelayPair::new(mdp, delta, delta_tau, pi, pi_aux)?;
    Ok(perf_bound_from(&pair, pi, pi_aux, "perf_bound"))
}

pub fn perf_bound_from(
    pair: &DelayPair,
    pi: &TabularPolicy,
    pi_aux: &TabularPolicy,
    instance_id: &str,
) -> Vec<VerificationReport> {
    let na = pair.full.num_actions();
    let l_q = action_lipschitz_discrete(&pair.aux_q_table()).l_q_discrete;
    let (vt, qt) = (&pair.aux_values.v, &pair.aux_values.q);
    (0..pair.full.aug_size())
        .map(|x| {
            let lhs = pair.beliefs.expect(x, |xt| {
                pi.row(x).iter().enumerate().map(|(a, &p)| p * (vt[xt] - qt[xt * na + a])).sum()
            });
            let rhs = l_q * pair.belief_w1(x, pi, pi_aux);
            VerificationReport::upper_bound("perf_bound", &format!("{instance_id}/x{x}"), lhs, rhs)
        })
        .collect()
}

/// Per-`x` check of the Q-gap bound
/// `E_{a∼π, x^τ}[Q^τ(x^τ,a) − Q(x,a)] ≤ γL_Q/(1−γ)·E[W1]`, with the
/// expectation over `a∼π(·|x)`, `x'∼P_Δ`, `x̂∼d^π_{x'}`, `x̂^τ∼b_Δ(·|x̂)`.
pub fn verify_q_bound(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    pi: &TabularPolicy,
    pi_aux: &TabularPolicy,
) -> Result<Vec<VerificationReport>> {
    let pair = DelayPair::new(mdp, delta, delta_tau, pi, pi_aux)?;
    q_bound_from(&pair, pi, pi_aux, "q_bound")
}

pub fn q_bound_from(
    pair: &DelayPair,
    pi: &TabularPolicy,
    pi_aux: &TabularPolicy,
    instance_id: &str,
) -> Result<Vec<VerificationReport>> {
    let n = pair.full.aug_size();
    let na = pair.full.num_actions();
    let gamma = pair.full.gamma();
    let l_q = action_lipschitz_discrete(&pair.aux_q_table()).l_q_discrete;
    let (q, qt) = (&pair.values.q, &pair.aux_values.q);
    let gap: Vec<f64> = (0..n).map(|x| pair.belief_w1(x, pi, pi_aux)).collect();
    let occupancy = visitation_rows(&pair.full, pi)?;
    let occ_gap: Vec<f64> = occupancy
        .iter()
        .map(|d| d.iter().zip(&gap).map(|(p, g)| p * g).sum())
        .collect();
    Ok((0..n)
        .map(|x| {
            let mut lhs = 0.0;
            let mut flow = 0.0;
            for (a, &p) in pi.row(x).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                lhs += p * (pair.beliefs.expect(x, |xt| qt[xt * na + a]) - q[x * na + a]);
                flow += p * pair.full.expect(x, a, |y| occ_gap[y]);
            }
            let rhs = gamma * l_q / (1.0 - gamma) * flow;
            VerificationReport::upper_bound("q_bound", &format!("{instance_id}/x{x}"), lhs, rhs)
        })
        .collect())
}

/// Largest augmented space on which the optimal-policy bound is checked.
pub const OPTIMAL_BOUND_MAX_STATES: usize = 200;

/// Per-`(x, a)` check of the optimal-policy bound
/// `|E_{x^τ}Q^τ_*(x^τ,a) − Q_*(x,a)| ≤ γ²L_Q/(1−γ)²·E_{x'∼P_Δ(·|x,a), x̂∼d^{π_*}_{x'}, x̂^τ}[W1(π^τ_*, π_*)]`
/// with both optimal policies greedy in their exact optimal tables.
pub fn verify_optimal_q_bound(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    tol: f64,
) -> Result<Vec<VerificationReport>> {
    let budget = budget_from_env();
    let full = build_cdmdp_with_budget(mdp, delta, budget)?;
    if full.aug_size() > OPTIMAL_BOUND_MAX_STATES {
        return Err(Error::BudgetExceeded {
            size: full.aug_size() as u128,
            budget: OPTIMAL_BOUND_MAX_STATES as u64,
        });
    }
    let aux = build_cdmdp_with_budget(mdp, delta_tau, budget)?;
    let beliefs = DelayedBeliefTable::build(mdp, delta, delta_tau, budget)?;
    let q_star = solve_augmented_vi(&full, tol)?;
    let qt_star = solve_augmented_vi(&aux, tol)?;
    let pi = greedy_policy(&q_star);
    let pi_aux = greedy_policy(&qt_star);
    let l_q = action_lipschitz_discrete(&qt_star).l_q_discrete;
    let (n, na, gamma) = (full.aug_size(), full.num_actions(), full.gamma());
    let gap: Vec<f64> = (0..n)
        .map(|x| beliefs.expect(x, |xt| w1_discrete(pi_aux.row(xt), pi.row(x)).expect("same length")))
        .collect();
    let occupancy = visitation_rows(&full, &pi)?;
    let occ_gap: Vec<f64> = occupancy
        .iter()
        .map(|d| d.iter().zip(&gap).map(|(p, g)| p * g).sum())
        .collect();
    let scale = gamma * gamma * l_q / ((1.0 - gamma) * (1.0 - gamma));
    let mut out = Vec::with_capacity(n * na);
    for x in 0..n {
        for a in 0..na {
            let lhs = (beliefs.expect(x, |xt| qt_star.get(xt, a)) - q_star.get(x, a)).abs();
            let rhs = scale * full.expect(x, a, |y| occ_gap[y]);
            out.push(VerificationReport::upper_bound(
                "optimal_q_bound",
                &format!("x{x}/a{a}"),
                lhs,
                rhs,
            ));
        }
    }
    Ok(out)
}

/// Random walk `s' = s + a/L_π + ε`, `ε ∼ N(0, σ²)`, reward
/// `−L_Q·L_π·|s + a/L_π|`, observed with delay `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMdpSpec {
    pub l_pi: f64,
    pub l_q: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub delta: usize,
    pub delta_tau: usize,
    #[serde(default = "default_truncation")]
    pub discount_truncation_epsilon: f64,
}

fn default_truncation() -> f64 {
    1e-8
}

impl GaussianMdpSpec {
    pub fn new(l_pi: f64, l_q: f64, sigma: f64, gamma: f64, delta: usize, delta_tau: usize) -> Self {
        GaussianMdpSpec {
            l_pi,
            l_q,
            sigma,
            gamma,
            delta,
            delta_tau,
            discount_truncation_epsilon: default_truncation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_pi > 0.0 && self.l_q > 0.0 && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter("l_pi, l_q must be positive and sigma nonnegative".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::GammaOutOfRange(self.gamma));
        }
        if self.delta_tau > self.delta {
            return Err(Error::DelayOrder {
                delta: self.delta,
                delta_tau: self.delta_tau,
            });
        }
        if !(self.discount_truncation_epsilon > 0.0 && self.discount_truncation_epsilon < 1.0) {
            return Err(Error::InvalidParameter("discount_truncation_epsilon must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.l_q * self.l_pi / (1.0 - self.gamma) * self.sigma
    }
}

/// Optimal delayed value `−(L_Q·L_π/(1−γ))·σ·√(2Δ/π)`.
pub fn gaussian_value_closed_form(spec: &GaussianMdpSpec) -> f64 {
    -spec.scale() * (2.0 * spec.delta as f64 / std::f64::consts::PI).sqrt()
}

/// `(L_Q·L_π/(1−γ))·σ·√(2/π)·(√Δ − √Δτ)`.
pub fn gaussian_gap_closed_form(spec: &GaussianMdpSpec) -> f64 {
    spec.scale()
        * (2.0 / std::f64::consts::PI).sqrt()
        * ((spec.delta as f64).sqrt() - (spec.delta_tau as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub horizon: usize,
    pub rollouts: usize,
}

const ROLLOUT_CHUNK: usize = 1024;

/// Monte-Carlo discounted return of the optimal `Δ`-delayed policy
/// `a_t = −L_π·(s_{t−Δ} + Σ_i a_i/L_π)`. Each episode starts with
/// `s_{−Δ} = 0` and a window of zero actions, so the first true state
/// already carries `Δ` noise terms. Chunks of rollouts run in parallel on
/// their own sub-streams; the result does not depend on the thread count.
pub fn gaussian_mc_value(spec: &GaussianMdpSpec, rollouts: usize, seed: u64) -> Result<McEstimate> {
    spec.validate()?;
    if rollouts == 0 {
        return Err(Error::InvalidParameter("rollouts must be at least 1".into()));
    }
    let horizon = truncation_horizon(spec.gamma, spec.discount_truncation_epsilon);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let chunks = rollouts.div_ceil(ROLLOUT_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            let count = ROLLOUT_CHUNK.min(rollouts - k * ROLLOUT_CHUNK);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut pending = std::collections::VecDeque::with_capacity(spec.delta);
            let mut observed = std::collections::VecDeque::with_capacity(spec.delta + 1);
            for _ in 0..count {
                // observed holds s_{t−Δ}..s_t, pending the window a_{t−Δ}..a_{t−1}
                observed.clear();
                pending.clear();
                let mut s = 0.0;
                observed.push_back(s);
                for _ in 0..spec.delta {
                    s += noise.sample(&mut rng);
                    observed.push_back(s);
                    pending.push_back(0.0);
                }
                let mut ret = 0.0;
                let mut discount = 1.0;
                for _ in 0..horizon {
                    let mean = observed[0] + pending.iter().sum::<f64>() / spec.l_pi;
                    let a = -spec.l_pi * mean;
                    let s_now = *observed.back().expect("non-empty");
                    let moved = s_now + a / spec.l_pi;
                    ret += discount * (-spec.l_q * spec.l_pi * moved.abs());
                    discount *= spec.gamma;
                    let next = moved + noise.sample(&mut rng);
                    observed.push_back(next);
                    observed.pop_front();
                    if spec.delta > 0 {
                        pending.push_back(a);
                        pending.pop_front();
                    }
                }
                s1 += ret;
                s2 += ret * ret;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let n = rollouts as f64;
    let mean = s1 / n;
    let var = if rollouts > 1 {
        ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        std_err: (var / n).sqrt(),
        horizon,
        rollouts,
    })
}

/// `(ret_alg − ret_rand)/(ret_df − ret_rand)`.
pub fn normalized_return(ret_alg: f64, ret_rand: f64, ret_df: f64) -> Result<f64> {
    let den = ret_df - ret_rand;
    if den == 0.0 {
        return Err(Error::ZeroDenominator("normalized_return"));
    }
    Ok((ret_alg - ret_rand) / den)
}

/// `(ret_best − ret_zero)/(ret_zero − ret_rand)`.
pub fn relative_return(ret_best: f64, ret_zero: f64, ret_rand: f64) -> Result<f64> {
    let den = ret_zero - ret_rand;
    if den == 0.0 {
        return Err(Error::ZeroDenominator("relative_return"));
    }
    Ok((ret_best - ret_zero) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visitation_cycle() {
        // 0 -> 1 -> 0 deterministically
        let mdp = TabularMdp::new(2, 1, 0.5, vec![0.0, 1.0, 1.0, 0.0], vec![0.0; 2], vec![1.0, 0.0]).unwrap();
        let d = discounted_visitation(&mdp, &TabularPolicy::uniform(2, 1), 0).unwrap();
        assert!((d.probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.probs[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn visitation_absorbing() {
        let mdp = TabularMdp::new(2, 1, 0.9, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], vec![1.0, 0.0]).unwrap();
        let d = discounted_visitation(&mdp, &TabularPolicy::uniform(2, 1), 1).unwrap();
        assert!((d.probs[1] - 1.0).abs() < 1e-12 && d.probs[0] == 0.0);
    }

    #[test]
    fn w1_cases() {
        assert_eq!(w1_discrete(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(w1_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!((w1_discrete(&[0.7, 0.3], &[0.4, 0.6]).unwrap() - 0.3).abs() < 1e-15);
        assert!(w1_discrete(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn lipschitz_cases() {
        let flat = QTable::from_values(vec![2.0; 6], 3, 2, 0, 0.0).unwrap();
        assert_eq!(action_lipschitz_discrete(&flat).l_q_discrete, 0.0);
        let one = QTable::from_values(vec![0.0, 3.0], 1, 2, 0, 0.0).unwrap();
        let rep = action_lipschitz_discrete(&one);
        assert_eq!(rep.l_q_discrete, 3.0);
        assert_eq!(rep.per_state_max_gap, vec![3.0]);
    }

    #[test]
    fn gaussian_closed_forms() {
        let spec = GaussianMdpSpec::new(1.0, 1.0, 1.0, 0.9, 4, 1);
        assert!((gaussian_gap_closed_form(&spec) - 7.978845608).abs() < 1e-8);
        let same = GaussianMdpSpec { delta_tau: 4, ..spec };
        assert_eq!(gaussian_gap_closed_form(&same), 0.0);
        let wide = GaussianMdpSpec { sigma: 2.0, ..spec };
        assert!((gaussian_gap_closed_form(&wide) - 2.0 * gaussian_gap_closed_form(&spec)).abs() < 1e-12);
        let one = GaussianMdpSpec::new(1.0, 1.0, 1.0, 0.9, 1, 0);
        assert!((gaussian_value_closed_form(&one) + 7.978845608).abs() < 1e-8);
    }

    #[test]
    fn gaussian_noise_free_is_zero() {
        let spec = GaussianMdpSpec::new(1.0, 1.0, 0.0, 0.9, 3, 0);
        let est = gaussian_mc_value(&spec, 100, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn metrics() {
        assert_eq!(normalized_return(50.0, 0.0, 100.0).unwrap(), 0.5);
        assert_eq!(normalized_return(5.0, 5.0, 7.0).unwrap(), 0.0);
        assert!(normalized_return(1.0, 2.0, 2.0).is_err());
        assert!((relative_return(110.0, 100.0, 0.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(relative_return(100.0, 100.0, 0.0).unwrap(), 0.0);
        assert!(relative_return(1.0, 3.0, 3.0).is_err());
    }
}
