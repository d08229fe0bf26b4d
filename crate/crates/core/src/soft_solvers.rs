//! Tabular AD-SPI: soft policy evaluation whose target reads the frozen
//! soft auxiliary table through the delayed belief, followed by the
//! closed-form KL projection onto softmax policies.

use serde::{Deserialize, Serialize};

use crate::augmentation::{build_cdmdp_with_budget, budget_from_env, Cdmdp, DelayedBeliefTable};
use crate::error::{Error, Result};
use crate::exact_solvers::QTable;
use crate::mdp::{argmax, default_max_iters, fill_table, FiniteMdp, TabularMdp, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftConfig {
    /// Entropy weight α.
    pub temperature: f64,
    pub eval_tol: f64,
    pub max_rounds: usize,
    /// Zero-temperature limit: greedy improvement and no entropy term.
    pub hard_limit: bool,
}

impl Default for SoftConfig {
    fn default() -> Self {
        SoftConfig {
            temperature: 1.0,
            eval_tol: 1e-10,
            max_rounds: 200,
            hard_limit: false,
        }
    }
}

impl SoftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter("temperature must be positive".into()));
        }
        if !(self.eval_tol > 0.0) {
            return Err(Error::InvalidParameter("eval_tol must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidParameter("max_rounds must be at least 1".into()));
        }
        Ok(())
    }

    fn entropy_weight(&self) -> f64 {
        if self.hard_limit {
            0.0
        } else {
            self.temperature
        }
    }
}

/// `Σ_a π(a)·(v(a) − α·log π(a))`, with `0·log 0 = 0`.
#[inline]
fn soft_value(pi: &[f64], v: &[f64], alpha: f64) -> f64 {
    pi.iter()
        .zip(v)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (q - alpha * p.ln()))
        .sum()
}

/// Softmax of `row / temperature`, or the one-hot argmax in the hard limit.
pub fn improve_row(row: &[f64], cfg: &SoftConfig, out: &mut [f64]) {
    if cfg.hard_limit {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[argmax(row)] = 1.0;
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = ((v - max) / cfg.temperature).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn improve_all(values: &[f64], space_size: usize, num_actions: usize, cfg: &SoftConfig) -> TabularPolicy {
    let mut probs = vec![0.0; values.len()];
    for (row, out) in values.chunks(num_actions).zip(probs.chunks_mut(num_actions)) {
        improve_row(row, cfg, out);
    }
    TabularPolicy::new(space_size, num_actions, probs).expect("softmax rows are normalized")
}

/// Max over states of the total variation between two policies.
pub fn max_tv(a: &TabularPolicy, b: &TabularPolicy) -> f64 {
    (0..a.space_size())
        .map(|x| 0.5 * a.row(x).iter().zip(b.row(x)).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Soft `Q^π` of a policy on any finite MDP, by iteration.
fn soft_evaluate<M: FiniteMdp + ?Sized>(model: &M, pi: &TabularPolicy, cfg: &SoftConfig) -> Result<Vec<f64>> {
    let (ns, na, gamma) = (model.num_states(), model.num_actions(), model.gamma());
    let alpha = cfg.entropy_weight();
    let tol = cfg.eval_tol * 1e-2;
    let bonus = alpha * (na as f64).ln();
    let max_iters = default_max_iters(gamma, tol, model.max_abs_reward() + bonus);
    let mut q = vec![0.0; ns * na];
    let mut next = vec![0.0; ns * na];
    for _ in 0..max_iters {
        let v: Vec<f64> = (0..ns)
            .map(|x| soft_value(pi.row(x), &q[x * na..(x + 1) * na], alpha))
            .collect();
        fill_table(&mut next, na, |x, a| model.reward(x, a) + gamma * model.expect(x, a, |n| v[n]));
        let change = crate::mdp::sup_dist(&q, &next);
        std::mem::swap(&mut q, &mut next);
        if gamma * change <= tol {
            return Ok(q);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// Converged soft auxiliary solution.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAux {
    pub q: QTable,
    pub pi: TabularPolicy,
    pub rounds: usize,
}

/// Plain soft policy iteration on the `Δτ` CDMDP. The returned policy is
/// the softmax of the returned table.
pub fn solve_soft_aux(mdp: &TabularMdp, delta_tau: usize, cfg: &SoftConfig) -> Result<SoftAux> {
    cfg.validate()?;
    let aux = build_cdmdp_with_budget(mdp, delta_tau, budget_from_env())?;
    soft_policy_iteration(&aux, cfg).map(|(q, pi, rounds)| SoftAux {
        q: QTable::from_values(q, aux.aug_size(), aux.num_actions(), delta_tau, cfg.eval_tol)
            .expect("sizes match"),
        pi,
        rounds,
    })
}

fn soft_policy_iteration(model: &Cdmdp, cfg: &SoftConfig) -> Result<(Vec<f64>, TabularPolicy, usize)> {
    let (n, na) = (model.aug_size(), model.num_actions());
    let mut pi = TabularPolicy::uniform(n, na);
    for round in 1..=cfg.max_rounds {
        let q = soft_evaluate(model, &pi, cfg)?;
        let next = improve_all(&q, n, na, cfg);
        let tv = max_tv(&pi, &next);
        if tv <= cfg.eval_tol {
            return Ok((q, next, round));
        }
        pi = next;
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_rounds,
        residual: f64::NAN,
    })
}

/// The `Δ` CDMDP together with `m(x,a) = Σ b_Δ(x^τ|x)·Q^τ(x^τ,a)`.
struct SoftModel {
    cdmdp: Cdmdp,
    m: Vec<f64>,
}

impl SoftModel {
    fn new(mdp: &TabularMdp, delta: usize, delta_tau: usize, q_aux: &QTable) -> Result<Self> {
        if delta_tau > delta {
            return Err(Error::DelayOrder { delta, delta_tau });
        }
        let budget = budget_from_env();
        let beliefs = DelayedBeliefTable::build(mdp, delta, delta_tau, budget)?;
        if q_aux.num_states != beliefs.aux_space().size() || q_aux.num_actions != mdp.num_actions() {
            return Err(Error::Dimension(format!(
                "auxiliary table is {}x{}, expected {}x{}",
                q_aux.num_states,
                q_aux.num_actions,
                beliefs.aux_space().size(),
                mdp.num_actions()
            )));
        }
        Ok(SoftModel {
            cdmdp: build_cdmdp_with_budget(mdp, delta, budget)?,
            m: beliefs.project(&q_aux.values, mdp.num_actions()),
        })
    }

    /// `T^π Q(x,a) = R_Δ(x,a) + γ Σ_{x'} P_Δ(x'|x,a) Σ_{a'} π(a'|x')·(m(x',a') − α log π(a'|x'))`.
    /// The right side never reads `Q`, so one sweep lands on the fixed point.
    fn evaluate(&self, pi: &TabularPolicy, cfg: &SoftConfig) -> Result<Vec<f64>> {
        let c = &self.cdmdp;
        let (n, na, gamma) = (c.aug_size(), c.num_actions(), c.gamma());
        if pi.space_size() != n || pi.num_actions() != na {
            return Err(Error::Dimension(format!(
                "policy is {}x{}, expected {n}x{na}",
                pi.space_size(),
                pi.num_actions()
            )));
        }
        let alpha = cfg.entropy_weight();
        let v: Vec<f64> = (0..n)
            .map(|x| soft_value(pi.row(x), &self.m[x * na..(x + 1) * na], alpha))
            .collect();
        let mut q = vec![0.0; n * na];
        fill_table(&mut q, na, |x, a| c.reward(x, a) + gamma * c.expect(x, a, |y| v[y]));
        Ok(q)
    }

    fn improve(&self, cfg: &SoftConfig) -> TabularPolicy {
        improve_all(&self.m, self.cdmdp.aug_size(), self.cdmdp.num_actions(), cfg)
    }
}

/// Soft evaluation of `pi` on the `Δ` space under the auxiliary-delayed
/// soft operator.
pub fn soft_policy_evaluation(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    pi: &TabularPolicy,
    q_aux_soft: &QTable,
    cfg: &SoftConfig,
) -> Result<QTable> {
    cfg.validate()?;
    let model = SoftModel::new(mdp, delta, delta_tau, q_aux_soft)?;
    let q = model.evaluate(pi, cfg)?;
    QTable::from_values(q, model.cdmdp.aug_size(), mdp.num_actions(), delta, cfg.eval_tol)
}

/// `π_new(·|x) = softmax(m(x,·)/α)`, the minimizer of the KL projection.
pub fn soft_policy_improvement(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    q_aux_soft: &QTable,
    cfg: &SoftConfig,
) -> Result<TabularPolicy> {
    cfg.validate()?;
    Ok(SoftModel::new(mdp, delta, delta_tau, q_aux_soft)?.improve(cfg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdSpiResult {
    pub pi: TabularPolicy,
    pub q: QTable,
    pub aux: SoftAux,
    /// `min_{x,a} (Q_new − Q_old)` per round.
    pub improvement_trace: Vec<f64>,
    pub rounds: usize,
    /// False when `max_rounds` ran out; the last iterate is returned.
    pub converged: bool,
}

/// Solves the soft auxiliary task, then alternates auxiliary-delayed soft
/// evaluation and improvement from the uniform policy until the max-state
/// total variation between consecutive policies is at most `eval_tol`.
pub fn ad_spi(mdp: &TabularMdp, delta: usize, delta_tau: usize, cfg: &SoftConfig) -> Result<AdSpiResult> {
    cfg.validate()?;
    let aux = solve_soft_aux(mdp, delta_tau, cfg)?;
    let model = SoftModel::new(mdp, delta, delta_tau, &aux.q)?;
    let (n, na) = (model.cdmdp.aug_size(), mdp.num_actions());

    let mut pi = TabularPolicy::uniform(n, na);
    let mut q = model.evaluate(&pi, cfg)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut rounds = 0;
    while rounds < cfg.max_rounds {
        rounds += 1;
        let next_pi = model.improve(cfg);
        let next_q = model.evaluate(&next_pi, cfg)?;
        trace.push(
            next_q
                .iter()
                .zip(&q)
                .map(|(a, b)| a - b)
                .fold(f64::INFINITY, f64::min),
        );
        let tv = max_tv(&pi, &next_pi);
        pi = next_pi;
        q = next_q;
        if tv <= cfg.eval_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("ad_spi: policy still moving after {rounds} rounds");
    }
    Ok(AdSpiResult {
        pi,
        q: QTable::from_values(q, n, na, delta, cfg.eval_tol)?,
        aux,
        improvement_trace: trace,
        rounds,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_corridor, CorridorSpec};

    fn bandit(r0: f64, r1: f64) -> TabularMdp {
        TabularMdp::new(1, 2, 0.9, vec![1.0, 1.0], vec![r0, r1], vec![1.0]).unwrap()
    }

    #[test]
    fn symmetric_bandit_uniform() {
        let aux = solve_soft_aux(&bandit(0.0, 0.0), 0, &SoftConfig::default()).unwrap();
        assert!((aux.pi.prob(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ln2_gap_gives_one_third() {
        // Q differs by the reward gap, so a reward gap of ln 2 yields (1/3, 2/3)
        let aux = solve_soft_aux(&bandit(0.0, 2f64.ln()), 0, &SoftConfig::default()).unwrap();
        assert!((aux.q.get(0, 1) - aux.q.get(0, 0) - 2f64.ln()).abs() < 1e-9);
        assert!((aux.pi.prob(0, 0) - 1.0 / 3.0).abs() < 1e-9);
        assert!((aux.pi.prob(0, 1) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn improve_row_cases() {
        let cfg = SoftConfig::default();
        let mut out = [0.0; 2];
        improve_row(&[0.0, 2f64.ln()], &cfg, &mut out);
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-15 && (out[1] - 2.0 / 3.0).abs() < 1e-15);
        improve_row(&[4.0, 4.0], &cfg, &mut out);
        assert_eq!(out, [0.5, 0.5]);
        let hot = SoftConfig { temperature: 0.01, ..cfg };
        improve_row(&[0.3, 0.1], &hot, &mut out);
        assert!(out[0] > out[1]);
    }

    #[test]
    fn uniform_entropy_fixed_point() {
        // one state, two actions of reward 0: Q = γ·(0 + ln 2)/(1 − γ)
        let mdp = bandit(0.0, 0.0);
        let cfg = SoftConfig::default();
        let aux = solve_soft_aux(&mdp, 0, &cfg).unwrap();
        let q = soft_policy_evaluation(&mdp, 0, 0, &TabularPolicy::uniform(1, 2), &aux.q, &cfg).unwrap();
        let expect = 0.9 * 2f64.ln() / 0.1;
        assert!((q.get(0, 0) - expect).abs() < 1e-8);
    }

    #[test]
    fn hard_limit_matches_value_iteration() {
        let mdp = build_corridor(&CorridorSpec::new(4, -0.1, 1.0, 0.9)).unwrap();
        let cfg = SoftConfig {
            hard_limit: true,
            ..SoftConfig::default()
        };
        let aux = solve_soft_aux(&mdp, 0, &cfg).unwrap();
        let vi = crate::mdp::value_iteration(&mdp, 1e-12).unwrap();
        for s in 0..4 {
            assert_eq!(argmax(aux.pi.row(s)), argmax(&vi[s * 2..s * 2 + 2]));
        }
    }

    #[test]
    fn ad_spi_trace_nonnegative() {
        let mdp = build_corridor(&CorridorSpec::new(4, -0.1, 1.0, 0.9)).unwrap();
        let mdp = crate::envs::apply_action_noise(&mdp, 0.2).unwrap();
        let out = ad_spi(&mdp, 2, 1, &SoftConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.improvement_trace.iter().all(|d| *d >= -1e-9));
    }

    #[test]
    fn rejects_bad_temperature() {
        let cfg = SoftConfig {
            temperature: 0.0,
            ..SoftConfig::default()
        };
        assert!(solve_soft_aux(&bandit(0.0, 1.0), 0, &cfg).is_err());
    }
}
