use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use delaylab::analysis::normalized_return;
use delaylab::exact_solvers::solve_delay;
use delaylab::learners::{
    evaluate_policy_rollout, ninety_percent, steps_to_threshold, train, write_records_csv, Actor, EvalPoint,
    LearnerConfig,
};
use delaylab::mdp::FiniteMdp;
use delaylab::{TabularMdp, TabularPolicy};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, ExperimentConfig};
use crate::output::{csv_file, write_json, write_serialized};
use crate::Outcome;

/// Episodes used for the uniform-random reference return.
const RANDOM_EPISODES: usize = 100;

/// One row of `summary.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub algo: String,
    pub delta: usize,
    pub delta_tau: Option<usize>,
    pub seed: u64,
    pub final_return: f64,
    pub optimal_return: f64,
    pub steps_to_threshold: Option<usize>,
    pub normalized_score: Option<f64>,
}

/// Reference returns for one seed, measured on the same evaluation streams
/// the learners use.
struct Baselines {
    optimal: f64,
    delay_free: f64,
    random: f64,
}

fn baselines(mdp: &TabularMdp, delta: usize, lc: &LearnerConfig, seed: u64) -> Result<Baselines> {
    let q_star = solve_delay(mdp, delta, 1e-10)?;
    let q_free = solve_delay(mdp, 0, 1e-10)?;
    let uniform = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let steps = lc.max_episode_steps;
    Ok(Baselines {
        optimal: evaluate_policy_rollout(mdp, delta, Actor::Greedy(&q_star), lc.eval_episodes, seed, steps)?,
        delay_free: evaluate_policy_rollout(mdp, 0, Actor::Greedy(&q_free), lc.eval_episodes, seed, steps)?,
        random: evaluate_policy_rollout(
            mdp,
            0,
            Actor::Policy {
                pi: &uniform,
                delay: 0,
            },
            RANDOM_EPISODES,
            seed,
            steps,
        )?,
    })
}

struct RunResult {
    row: SweepRow,
    records: Vec<delaylab::learners::RunRecord>,
    curve: Vec<EvalPoint>,
}

fn run_one(mdp: &TabularMdp, cfg: &ExperimentConfig, cell: Cell, seed: u64) -> Result<RunResult> {
    let lc = LearnerConfig {
        seed,
        log_transitions: false,
        ..cfg.learner.clone()
    };
    let out = train(mdp, cell.learner_algo(), cfg.delta, &lc)?;
    let base = baselines(mdp, cfg.delta, &lc, seed)?;
    let final_return = out.curve.last().map(|p| p.mean_return).unwrap_or(f64::NAN);
    let row = SweepRow {
        algo: cell.label(),
        delta: cfg.delta,
        delta_tau: cell.delta_tau,
        seed,
        final_return,
        optimal_return: base.optimal,
        steps_to_threshold: steps_to_threshold(&out.curve, ninety_percent(base.optimal)),
        normalized_score: normalized_return(final_return, base.random, base.delay_free).ok(),
    };
    Ok(RunResult {
        row,
        records: out.records,
        curve: out.curve,
    })
}

/// Trains every `(cell, seed)` pair and writes per-run CSVs plus
/// `summary.csv`. Rows come back in config order.
pub fn sweep(cfg: &ExperimentConfig, base_dir: &Path, out: &Path) -> Result<Vec<(Cell, Vec<SweepRow>)>> {
    cfg.check_common()?;
    cfg.learner.validate()?;
    let cells = cfg.cells()?;
    if let Some(c) = cells.iter().find(|c| !c.algo.is_learner()) {
        bail!("train and bench run a-ql, ad-ql or bpql, not {}", c.algo.tag());
    }
    let mdp = cfg.env()?.build(base_dir)?;
    let jobs: Vec<(Cell, u64)> = cells
        .iter()
        .flat_map(|&c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(cell, seed)| run_one(&mdp, cfg, cell, seed))
        .collect::<Result<_>>()?;

    let mut grouped: Vec<(Cell, Vec<SweepRow>)> = cells.iter().map(|&c| (c, Vec::new())).collect();
    let mut summary = Vec::with_capacity(results.len());
    for ((cell, seed), res) in jobs.iter().zip(results) {
        let stem = format!("{}_s{seed}", cell.stem(cfg.delta));
        write_records_csv(&res.records, csv_file(&out.join("runs").join(format!("{stem}.csv")), "run")?)?;
        write_serialized(&out.join("curves").join(format!("{stem}.csv")), "curve", &res.curve)?;
        let slot = grouped.iter_mut().find(|(c, _)| c == cell).expect("cell listed");
        slot.1.push(res.row.clone());
        summary.push(res.row);
    }
    write_serialized(&out.join("summary.csv"), "summary", &summary)?;
    Ok(grouped)
}

pub fn run_train(cfg: &ExperimentConfig, base_dir: &Path, out: &Path) -> Result<Outcome> {
    sweep(cfg, base_dir, out)?;
    Ok(Outcome { verified: true })
}

/// Median with unreached runs counted as infinitely late; `None` when the
/// middle of the sorted list is unreached.
pub fn median_steps(steps: &[Option<usize>]) -> Option<f64> {
    let mut v: Vec<f64> = steps.iter().map(|s| s.map_or(f64::INFINITY, |x| x as f64)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

#[derive(Debug, Serialize)]
struct CellVerdict {
    median_steps_to_threshold: Option<f64>,
    reached: usize,
    runs: usize,
    mean_final_return: f64,
}

#[derive(Debug, Serialize)]
struct Verdict {
    command: &'static str,
    delta: usize,
    threshold_rule: &'static str,
    total_steps: usize,
    cells: BTreeMap<String, CellVerdict>,
    /// Present when both a-ql and an ad-ql cell ran.
    comparisons: BTreeMap<String, bool>,
}

pub fn run_bench(cfg: &ExperimentConfig, base_dir: &Path, out: &Path) -> Result<Outcome> {
    if cfg.cells()?.len() < 2 {
        bail!("bench needs at least 2 algos to compare");
    }
    let grouped = sweep(cfg, base_dir, out)?;
    let mut cells = BTreeMap::new();
    for (cell, rows) in &grouped {
        let steps: Vec<Option<usize>> = rows.iter().map(|r| r.steps_to_threshold).collect();
        cells.insert(
            cell.label(),
            CellVerdict {
                median_steps_to_threshold: median_steps(&steps),
                reached: steps.iter().filter(|s| s.is_some()).count(),
                runs: rows.len(),
                mean_final_return: rows.iter().map(|r| r.final_return).sum::<f64>() / rows.len() as f64,
            },
        );
    }
    let mut comparisons = BTreeMap::new();
    if let Some(base) = cells.get("a-ql") {
        let base_m = base.median_steps_to_threshold.unwrap_or(f64::INFINITY);
        for (label, v) in &cells {
            if label.starts_with("ad-ql") || label == "bpql" {
                let m = v.median_steps_to_threshold.unwrap_or(f64::INFINITY);
                comparisons.insert(format!("{label} median steps < a-ql median steps"), m < base_m);
            }
        }
    }
    for (k, v) in &comparisons {
        log::info!("{k}: {v}");
    }
    write_json(
        &out.join("verdict.json"),
        &Verdict {
            command: "bench",
            delta: cfg.delta,
            threshold_rule: "optimal - 0.1*|optimal|",
            total_steps: cfg.learner.total_steps,
            cells,
            comparisons,
        },
    )?;
    Ok(Outcome { verified: true })
}
