use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use delaylab::analysis::{
    gaussian_gap_closed_form, gaussian_mc_value, gaussian_value_closed_form, normalized_return, perf_bound_from,
    perf_diff_from, q_bound_from, relative_return, verify_optimal_q_bound, DelayPair, GaussianMdpSpec,
    VerificationReport, OPTIMAL_BOUND_MAX_STATES,
};
use delaylab::augmentation::AugSpace;
use delaylab::exact_solvers::{ad_vi_run, solve_delay, verify_fixed_point};
use delaylab::mdp::{substream, FiniteMdp};
use delaylab::{TabularMdp, TabularPolicy};
use rand::Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, Suite};
use crate::output::write_json;
use crate::Outcome;

const IDENTITY_TOL: f64 = 1e-7;
/// Sub-stream that draws the random policies of a check.
const POLICY_STREAM: u64 = 7;

#[derive(Debug, Serialize)]
struct AnalyzeReport {
    suite: String,
    checks: Vec<VerificationReport>,
    all_hold: bool,
    max_deviation: f64,
    values: BTreeMap<String, f64>,
}

pub fn random_policy<R: Rng>(space: usize, na: usize, rng: &mut R) -> TabularPolicy {
    let mut probs: Vec<f64> = (0..space * na).map(|_| rng.random::<f64>() + 1e-3).collect();
    for row in probs.chunks_mut(na) {
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= t);
    }
    TabularPolicy::new(space, na, probs).expect("normalized rows")
}

fn delays(cfg: &ExperimentConfig) -> Vec<usize> {
    match &cfg.delta_tau {
        Some(d) => d.to_vec(),
        None => (0..=cfg.delta).collect(),
    }
}

/// Instances the env-based suites run on: random envs are redrawn per seed.
fn instances(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<(String, u64, TabularMdp)>> {
    let env = cfg.env()?;
    cfg.seeds
        .iter()
        .map(|&s| Ok((format!("seed{s}"), s, env.reseeded(s).build(base_dir)?)))
        .collect()
}

fn policy_pair(mdp: &TabularMdp, delta: usize, dt: usize, seed: u64) -> Result<(TabularPolicy, TabularPolicy)> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut rng = substream(seed, POLICY_STREAM);
    let pi = random_policy(AugSpace::new(ns, na, delta)?.size(), na, &mut rng);
    let pi_aux = random_policy(AugSpace::new(ns, na, dt)?.size(), na, &mut rng);
    Ok((pi, pi_aux))
}

pub fn run(cfg: &ExperimentConfig, base_dir: &Path, out: &Path) -> Result<Outcome> {
    cfg.check_common()?;
    let suite = cfg.suite.context("analyze needs a suite (lemma51, bounds, fixedpoint, gaussian or metrics)")?;
    for &dt in &delays(cfg) {
        if dt > cfg.delta && !matches!(suite, Suite::Gaussian | Suite::Metrics) {
            anyhow::bail!("delta_tau {dt} exceeds delta {}", cfg.delta);
        }
    }
    let mut values = BTreeMap::new();
    let checks = match suite {
        Suite::Lemma51 => lemma51(cfg, base_dir)?,
        Suite::Bounds => bounds(cfg, base_dir)?,
        Suite::Fixedpoint => fixedpoint(cfg, base_dir)?,
        Suite::Gaussian => gaussian(cfg, &mut values)?,
        Suite::Metrics => metrics()?,
    };
    let all_hold = checks.iter().all(|c| c.holds);
    let max_deviation = checks.iter().map(|c| c.deviation).fold(f64::NEG_INFINITY, f64::max);
    log::info!("{suite}: {} checks, all hold: {all_hold}", checks.len());
    write_json(
        &out.join(format!("report_{suite}.json")),
        &AnalyzeReport {
            suite: suite.to_string(),
            checks,
            all_hold,
            max_deviation,
            values,
        },
    )?;
    Ok(Outcome { verified: all_hold })
}

fn lemma51(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    for (id, seed, mdp) in instances(cfg, base_dir)? {
        for dt in delays(cfg) {
            let (pi, pi_aux) = policy_pair(&mdp, cfg.delta, dt, seed)?;
            let pair = DelayPair::new(&mdp, cfg.delta, dt, &pi, &pi_aux)?;
            let rep = perf_diff_from(&pair, &pi)?;
            let worst = (0..rep.lhs.len())
                .max_by(|&a, &b| (rep.lhs[a] - rep.rhs[a]).abs().total_cmp(&(rep.lhs[b] - rep.rhs[b]).abs()))
                .unwrap_or(0);
            out.push(VerificationReport::identity(
                "performance_difference",
                &format!("{id}/dt{dt}/x{worst}"),
                rep.lhs[worst],
                rep.rhs[worst],
                IDENTITY_TOL,
            ));
        }
    }
    Ok(out)
}

fn bounds(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    for (id, seed, mdp) in instances(cfg, base_dir)? {
        for dt in delays(cfg) {
            let (pi, pi_aux) = policy_pair(&mdp, cfg.delta, dt, seed)?;
            let pair = DelayPair::new(&mdp, cfg.delta, dt, &pi, &pi_aux)?;
            let tag = format!("{id}/dt{dt}");
            out.extend(perf_bound_from(&pair, &pi, &pi_aux, &tag));
            out.extend(q_bound_from(&pair, &pi, &pi_aux, &tag)?);
            if pair.full.aug_size() <= OPTIMAL_BOUND_MAX_STATES {
                for mut r in verify_optimal_q_bound(&mdp, cfg.delta, dt, cfg.tol)? {
                    r.instance_id = format!("{tag}/{}", r.instance_id);
                    out.push(r);
                }
            }
        }
    }
    Ok(out)
}

fn fixedpoint(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::new();
    for (id, _, mdp) in instances(cfg, base_dir)? {
        for dt in delays(cfg) {
            let q_aux = solve_delay(&mdp, dt, cfg.tol)?;
            let run = ad_vi_run(&mdp, cfg.delta, dt, &q_aux, cfg.tol, None)?;
            let dev = verify_fixed_point(&mdp, cfg.delta, dt, &run.solution.q, &q_aux)?;
            let mut r = VerificationReport::identity("fixed_point", &format!("{id}/dt{dt}"), dev, 0.0, cfg.verify_tol);
            r.holds &= run.converged;
            out.push(r);
        }
    }
    Ok(out)
}

fn gaussian(cfg: &ExperimentConfig, values: &mut BTreeMap<String, f64>) -> Result<Vec<VerificationReport>> {
    let g = cfg.gaussian.context("gaussian suite needs a gaussian block")?;
    g.spec.validate()?;
    let seed = cfg.seeds[0];
    let long = g.spec;
    let short = GaussianMdpSpec {
        delta: g.spec.delta_tau,
        ..g.spec
    };
    let mc_long = gaussian_mc_value(&long, g.rollouts, seed)?;
    let mc_short = gaussian_mc_value(&short, g.rollouts, seed.wrapping_add(1))?;
    let value = gaussian_value_closed_form(&long);
    let gap = gaussian_gap_closed_form(&long);
    let mc_gap = mc_short.estimate - mc_long.estimate;
    let gap_se = (mc_long.std_err.powi(2) + mc_short.std_err.powi(2)).sqrt();
    values.insert("closed_form".into(), gap);
    values.insert("closed_form_value".into(), value);
    values.insert("mc_value".into(), mc_long.estimate);
    values.insert("mc_value_std_err".into(), mc_long.std_err);
    values.insert("mc_value_short".into(), mc_short.estimate);
    values.insert("mc_gap".into(), mc_gap);
    values.insert("mc_gap_std_err".into(), gap_se);
    values.insert("horizon".into(), mc_long.horizon as f64);
    Ok(vec![
        VerificationReport::identity(
            "gaussian_value",
            &format!("delta{}", long.delta),
            mc_long.estimate,
            value,
            3.0 * mc_long.std_err,
        ),
        VerificationReport::identity(
            "gaussian_gap",
            &format!("delta{}/dt{}", long.delta, long.delta_tau),
            mc_gap,
            gap,
            3.0 * gap_se,
        ),
    ])
}

/// Worked examples of the two score formulas.
fn metrics() -> Result<Vec<VerificationReport>> {
    let id = |name: &str, got: f64, want: f64| VerificationReport::identity(name, "", got, want, 1e-12);
    Ok(vec![
        id("normalized_return", normalized_return(50.0, 0.0, 100.0)?, 0.5),
        id("normalized_return", normalized_return(5322.74, -304.29, 5322.74)?, 1.0),
        id("normalized_return", normalized_return(-304.29, -304.29, 5322.74)?, 0.0),
        id("relative_return", relative_return(110.0, 100.0, 0.0)?, 0.1),
        id("relative_return", relative_return(100.0, 100.0, 0.0)?, 0.0),
        id("relative_return", relative_return(90.0, 100.0, 0.0)?, -relative_return(110.0, 100.0, 0.0)?),
    ])
    .map(|mut v: Vec<VerificationReport>| {
        for (i, r) in v.iter_mut().enumerate() {
            r.instance_id = format!("example{i}");
        }
        v
    })
}
