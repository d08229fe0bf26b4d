use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use delaylab::analysis::GaussianMdpSpec;
use delaylab::envs::{apply_action_noise, build_corridor, build_random_mdp, CorridorSpec, RandomMdpSpec};
use delaylab::learners::{Algo, LearnerConfig};
use delaylab::soft_solvers::SoftConfig;
use delaylab::TabularMdp;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub delta: usize,
    #[serde(default)]
    pub delta_tau: Option<OneOrMany<usize>>,
    #[serde(default)]
    pub algo: Option<OneOrMany<String>>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub soft: SoftConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Largest accepted fixed-point deviation in `solve` and `analyze`.
    #[serde(default = "default_verify_tol")]
    pub verify_tol: f64,
    #[serde(default)]
    pub suite: Option<Suite>,
    #[serde(default)]
    pub gaussian: Option<GaussianConfig>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_tol() -> f64 {
    1e-10
}

fn default_verify_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    Corridor(CorridorSpec),
    NoisyCorridor(NoisyCorridorParams),
    Random(RandomMdpSpec),
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyCorridorParams {
    pub length: usize,
    pub step_cost: f64,
    pub goal_reward: f64,
    pub gamma: f64,
    pub noise_prob: f64,
}

impl EnvConfig {
    /// `base_dir` resolves relative file paths against the config's folder.
    pub fn build(&self, base_dir: &Path) -> Result<TabularMdp> {
        Ok(match self {
            EnvConfig::Corridor(spec) => build_corridor(spec)?,
            EnvConfig::NoisyCorridor(p) => {
                let base = build_corridor(&CorridorSpec::new(p.length, p.step_cost, p.goal_reward, p.gamma))?;
                apply_action_noise(&base, p.noise_prob)?
            }
            EnvConfig::Random(spec) => build_random_mdp(spec)?,
            EnvConfig::File { path } => {
                let path = base_dir.join(path);
                let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                TabularMdp::from_json(&text)?
            }
        })
    }

    /// The same instance family with a different generator seed; only
    /// random MDPs change.
    pub fn reseeded(&self, seed: u64) -> EnvConfig {
        match self {
            EnvConfig::Random(spec) => EnvConfig::Random(RandomMdpSpec { seed, ..*spec }),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Lemma51,
    Bounds,
    Fixedpoint,
    Gaussian,
    Metrics,
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Suite::Lemma51 => "lemma51",
            Suite::Bounds => "bounds",
            Suite::Fixedpoint => "fixedpoint",
            Suite::Gaussian => "gaussian",
            Suite::Metrics => "metrics",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct GaussianConfig {
    #[serde(flatten)]
    pub spec: GaussianMdpSpec,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
}

fn default_rollouts() -> usize {
    100_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoName {
    AVi,
    AdVi,
    AdSpi,
    AQl,
    AdQl,
    Bpql,
}

impl AlgoName {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "a-vi" => AlgoName::AVi,
            "ad-vi" => AlgoName::AdVi,
            "ad-spi" => AlgoName::AdSpi,
            "a-ql" => AlgoName::AQl,
            "ad-ql" => AlgoName::AdQl,
            "bpql" => AlgoName::Bpql,
            other => bail!("unknown algo {other:?} (expected a-vi, ad-vi, ad-spi, a-ql, ad-ql or bpql)"),
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            AlgoName::AVi => "a-vi",
            AlgoName::AdVi => "ad-vi",
            AlgoName::AdSpi => "ad-spi",
            AlgoName::AQl => "a-ql",
            AlgoName::AdQl => "ad-ql",
            AlgoName::Bpql => "bpql",
        }
    }

    pub fn is_learner(self) -> bool {
        matches!(self, AlgoName::AQl | AlgoName::AdQl | AlgoName::Bpql)
    }

    fn takes_delta_tau(self) -> bool {
        matches!(self, AlgoName::AdVi | AlgoName::AdSpi | AlgoName::AdQl)
    }
}

/// One `(algorithm, Δτ)` combination of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub algo: AlgoName,
    pub delta_tau: Option<usize>,
}

impl Cell {
    pub fn label(&self) -> String {
        match (self.algo, self.delta_tau) {
            (AlgoName::Bpql, _) | (_, None) => self.algo.tag().to_string(),
            (a, Some(dt)) => format!("{}({dt})", a.tag()),
        }
    }

    pub fn learner_algo(&self) -> Algo {
        match self.algo {
            AlgoName::AQl => Algo::AQl,
            AlgoName::Bpql => Algo::Bpql,
            _ => Algo::AdQl {
                delta_tau: self.delta_tau.expect("ad-ql cells carry delta_tau"),
            },
        }
    }

    /// File-name stem without parentheses.
    pub fn stem(&self, delta: usize) -> String {
        match self.delta_tau {
            Some(dt) => format!("{}_d{delta}_dt{dt}", self.algo.tag()),
            None => format!("{}_d{delta}", self.algo.tag()),
        }
    }
}

/// Splits `"ad-ql(5)"` into the name and the inline delay.
fn parse_algo_entry(entry: &str) -> Result<(AlgoName, Option<usize>)> {
    let entry = entry.trim();
    if let Some(open) = entry.find('(') {
        let Some(inner) = entry[open + 1..].strip_suffix(')') else {
            bail!("malformed algo entry {entry:?}");
        };
        let dt: usize = inner
            .trim()
            .parse()
            .with_context(|| format!("malformed delta_tau in algo entry {entry:?}"))?;
        Ok((AlgoName::parse(&entry[..open])?, Some(dt)))
    } else {
        Ok((AlgoName::parse(entry)?, None))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn env(&self) -> Result<&EnvConfig> {
        self.env.as_ref().context("config needs an env")
    }

    /// Expands `algo` and `delta_tau` into sweep cells and checks the delay
    /// rules.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let entries = self.algo.as_ref().context("config needs an algo")?.to_vec();
        if entries.is_empty() {
            bail!("algo list is empty");
        }
        let taus = self.delta_tau.as_ref().map(|d| d.to_vec()).unwrap_or_default();
        let mut cells = Vec::new();
        let mut uses_list = false;
        for entry in &entries {
            let (algo, inline) = parse_algo_entry(entry)?;
            match algo {
                AlgoName::Bpql => {
                    if inline.is_some_and(|d| d != 0) || taus.iter().any(|&d| d != 0) {
                        bail!("bpql fixes delta_tau=0");
                    }
                    cells.push(Cell {
                        algo,
                        delta_tau: Some(0),
                    });
                }
                a if a.takes_delta_tau() => {
                    let list = match inline {
                        Some(d) => vec![d],
                        None => {
                            uses_list = true;
                            taus.clone()
                        }
                    };
                    if list.is_empty() {
                        bail!("{} requires delta_tau", a.tag());
                    }
                    cells.extend(list.into_iter().map(|d| Cell {
                        algo: a,
                        delta_tau: Some(d),
                    }));
                }
                a => {
                    if inline.is_some() {
                        bail!("{} does not take a delta_tau", a.tag());
                    }
                    cells.push(Cell { algo: a, delta_tau: None });
                }
            }
        }
        if !taus.is_empty() && !uses_list && !entries.iter().any(|e| e.trim() == "bpql") {
            bail!("delta_tau is set but no listed algo uses it");
        }
        for c in &cells {
            if let Some(dt) = c.delta_tau {
                if dt > self.delta {
                    bail!("delta_tau {dt} exceeds delta {}", self.delta);
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &cells {
            if !seen.insert(c.label()) {
                bail!("algo {} listed twice", c.label());
            }
        }
        Ok(cells)
    }

    pub fn check_common(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        if !(self.tol > 0.0) || !(self.verify_tol > 0.0) {
            bail!("tol and verify_tol must be positive");
        }
        Ok(())
    }
}
