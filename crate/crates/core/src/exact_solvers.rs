//! Exact dynamic programming on delay-augmented spaces: value iteration on
//! the full CDMDP, and AD-VI, which bootstraps the long-delay table from a
//! frozen short-delay table through the delayed belief.

use serde::{Deserialize, Serialize};

use crate::augmentation::{build_cdmdp_with_budget, budget_from_env, Cdmdp, DelayedBeliefTable};
use crate::error::{Error, Result};
use crate::mdp::{
    argmax, default_max_iters, fill_table, greedy_actions, sup_dist, value_iteration, FiniteMdp,
    TabularMdp, TabularPolicy,
};

/// Action values over an augmented index space, flat `[x * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub values: Vec<f64>,
    pub num_states: usize,
    pub num_actions: usize,
    pub delta: usize,
    pub tol_used: f64,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize, delta: usize) -> Self {
        QTable {
            values: vec![0.0; num_states * num_actions],
            num_states,
            num_actions,
            delta,
            tol_used: 0.0,
        }
    }

    pub fn from_values(
        values: Vec<f64>,
        num_states: usize,
        num_actions: usize,
        delta: usize,
        tol_used: f64,
    ) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Dimension(format!(
                "q table has {} entries, expected {}",
                values.len(),
                num_states * num_actions
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("q table has non-finite entries".into()));
        }
        Ok(QTable {
            values,
            num_states,
            num_actions,
            delta,
            tol_used,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, x: usize, a: usize, v: f64) {
        self.values[x * self.num_actions + a] = v;
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.num_actions..(x + 1) * self.num_actions]
    }

    #[inline]
    pub fn greedy(&self, x: usize) -> usize {
        argmax(self.row(x))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["aug_index", "action", "value"])?;
        for x in 0..self.num_states {
            for a in 0..self.num_actions {
                w.serialize((x, a, self.get(x, a)))?;
            }
        }
        w.flush().map_err(|e| Error::Serde(e.to_string()))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let q: QTable = serde_json::from_str(text)?;
        Self::from_values(q.values, q.num_states, q.num_actions, q.delta, q.tol_used)
    }
}

/// Value iteration on the materialized CDMDP.
pub fn solve_augmented_vi(cdmdp: &Cdmdp, tol: f64) -> Result<QTable> {
    let q = value_iteration(cdmdp, tol)?;
    QTable::from_values(q, cdmdp.aug_size(), cdmdp.num_actions(), cdmdp.delta(), tol)
}

/// Builds the `delta` CDMDP and runs [`solve_augmented_vi`] on it.
pub fn solve_delay(mdp: &TabularMdp, delta: usize, tol: f64) -> Result<QTable> {
    solve_augmented_vi(&build_cdmdp_with_budget(mdp, delta, budget_from_env())?, tol)
}

/// Output of [`ad_vi`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdViSolution {
    pub q: QTable,
    /// Sup-norm change of every sweep, first sweep first.
    pub residual_trace: Vec<f64>,
}

fn check_aux(q_aux: &QTable, mdp: &TabularMdp, delta_tau: usize, aux_size: usize) -> Result<()> {
    if q_aux.delta != delta_tau || q_aux.num_states != aux_size || q_aux.num_actions != mdp.num_actions() {
        return Err(Error::Dimension(format!(
            "auxiliary table is {}x{} with delay {}, expected {}x{} with delay {}",
            q_aux.num_states,
            q_aux.num_actions,
            q_aux.delta,
            aux_size,
            mdp.num_actions(),
            delta_tau
        )));
    }
    Ok(())
}

/// Shared state of an AD-VI run: the `Δ` CDMDP and the `Δτ` correction.
struct AdViModel {
    cdmdp: Cdmdp,
    beliefs: DelayedBeliefTable,
}

impl AdViModel {
    fn new(mdp: &TabularMdp, delta: usize, delta_tau: usize) -> Result<Self> {
        if delta_tau > delta {
            return Err(Error::DelayOrder { delta, delta_tau });
        }
        let budget = budget_from_env();
        Ok(AdViModel {
            cdmdp: build_cdmdp_with_budget(mdp, delta, budget)?,
            beliefs: DelayedBeliefTable::build(mdp, delta, delta_tau, budget)?,
        })
    }

    /// `T Q(x,a) = R_Δ(x,a) + γ Σ_{x'} P_Δ(x'|x,a)·m(x', argmax Q(x'))`
    /// with `m` the belief projection of the frozen auxiliary table.
    fn sweep(&self, m: &[f64], q: &[f64], out: &mut [f64]) {
        let c = &self.cdmdp;
        let (na, gamma) = (c.num_actions(), c.gamma());
        let greedy = greedy_actions(q, na);
        fill_table(out, na, |x, a| {
            c.reward(x, a) + gamma * c.expect(x, a, |n| m[n * na + greedy[n]])
        });
    }
}

/// AD-VI with the auxiliary table frozen: sweeps the auxiliary-delayed
/// operator from a zero table until the sup-norm change is at most `tol`.
///
/// The operator reads `Q` only through its greedy policy, so the iterates
/// either settle after finitely many sweeps or cycle; a cycle surfaces as
/// [`Error::NoConvergence`].
pub fn ad_vi(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    q_aux: &QTable,
    tol: f64,
    max_iters: Option<usize>,
) -> Result<AdViSolution> {
    let run = ad_vi_run(mdp, delta, delta_tau, q_aux, tol, max_iters)?;
    if run.converged {
        Ok(run.solution)
    } else {
        Err(Error::NoConvergence {
            iterations: run.solution.residual_trace.len(),
            residual: run.solution.residual_trace.last().copied().unwrap_or(f64::INFINITY),
        })
    }
}

/// [`ad_vi`] that hands back the last iterate even without convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct AdViRun {
    pub solution: AdViSolution,
    pub converged: bool,
}

pub fn ad_vi_run(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    q_aux: &QTable,
    tol: f64,
    max_iters: Option<usize>,
) -> Result<AdViRun> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let model = AdViModel::new(mdp, delta, delta_tau)?;
    check_aux(q_aux, mdp, delta_tau, model.beliefs.aux_space().size())?;
    let na = mdp.num_actions();
    let m = model.beliefs.project(&q_aux.values, na);
    let max_iters = max_iters.unwrap_or_else(|| {
        default_max_iters(mdp.gamma(), tol, model.cdmdp.max_abs_reward())
    });

    let size = model.cdmdp.aug_size() * na;
    let mut q = vec![0.0; size];
    let mut next = vec![0.0; size];
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters {
        model.sweep(&m, &q, &mut next);
        let change = sup_dist(&q, &next);
        std::mem::swap(&mut q, &mut next);
        trace.push(change);
        if change <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "ad_vi: no convergence after {} sweeps (delta {delta}, delta_tau {delta_tau})",
            trace.len()
        );
    }
    Ok(AdViRun {
        solution: AdViSolution {
            q: QTable::from_values(q, model.cdmdp.aug_size(), na, delta, tol)?,
            residual_trace: trace,
        },
        converged,
    })
}

/// Output of [`ad_vi_interleaved`].
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSolution {
    pub q: QTable,
    pub q_aux: QTable,
    pub residual_trace: Vec<f64>,
}

/// Alternates one auxiliary value-iteration sweep with one AD-VI sweep that
/// reads the current auxiliary table, as the practical algorithm does.
pub fn ad_vi_interleaved(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    tol: f64,
    max_iters: Option<usize>,
) -> Result<InterleavedSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let model = AdViModel::new(mdp, delta, delta_tau)?;
    let aux = build_cdmdp_with_budget(mdp, delta_tau, budget_from_env())?;
    let na = mdp.num_actions();
    let max_iters = max_iters.unwrap_or_else(|| {
        default_max_iters(mdp.gamma(), tol, model.cdmdp.max_abs_reward())
    });

    let mut qa = vec![0.0; aux.aug_size() * na];
    let mut qa_next = qa.clone();
    let mut q = vec![0.0; model.cdmdp.aug_size() * na];
    let mut q_next = q.clone();
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        crate::mdp::bellman_optimality_backup(&aux, &qa, &mut qa_next);
        let aux_change = sup_dist(&qa, &qa_next);
        std::mem::swap(&mut qa, &mut qa_next);
        let m = model.beliefs.project(&qa, na);
        model.sweep(&m, &q, &mut q_next);
        let change = sup_dist(&q, &q_next).max(aux_change);
        std::mem::swap(&mut q, &mut q_next);
        trace.push(change);
        if change <= tol {
            return Ok(InterleavedSolution {
                q: QTable::from_values(q, model.cdmdp.aug_size(), na, delta, tol)?,
                q_aux: QTable::from_values(qa, aux.aug_size(), na, delta_tau, tol)?,
                residual_trace: trace,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual: trace.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// `max_{x,a} |q(x,a) − Σ_{x^τ} b_Δ(x^τ|x)·q_aux(x^τ,a)|`.
pub fn verify_fixed_point(
    mdp: &TabularMdp,
    delta: usize,
    delta_tau: usize,
    q: &QTable,
    q_aux: &QTable,
) -> Result<f64> {
    let beliefs = DelayedBeliefTable::build(mdp, delta, delta_tau, budget_from_env())?;
    check_aux(q_aux, mdp, delta_tau, beliefs.aux_space().size())?;
    let full = beliefs.full_space().size();
    if q.num_states != full || q.num_actions != mdp.num_actions() || q.delta != delta {
        return Err(Error::Dimension(format!(
            "table is {}x{} with delay {}, expected {}x{} with delay {}",
            q.num_states,
            q.num_actions,
            q.delta,
            full,
            mdp.num_actions(),
            delta
        )));
    }
    let m = beliefs.project(&q_aux.values, mdp.num_actions());
    Ok(sup_dist(&q.values, &m))
}

/// Deterministic greedy policy; ties go to the lowest action.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    TabularPolicy::deterministic(q.num_actions, &greedy_actions(&q.values, q.num_actions))
        .expect("greedy actions are in range")
}
