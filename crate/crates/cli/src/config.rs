//! TOML run configuration. Relative paths resolve against the directory of
//! the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use maxent_irl::envs::EnvSpec;
use maxent_irl::experiments::{Algorithm, ComparisonConfig, RecoveryConfig, ScalingConfig};
use maxent_irl::OptimizerConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Output path; `--out` overrides it. Standard output when absent.
    pub out: Option<PathBuf>,
    pub learn: Option<LearnConfig>,
    pub eval: Option<EvalConfig>,
    pub bench: Option<ScalingConfig>,
}

/// Where the MDP and features come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSource {
    pub env: Option<EnvSpec>,
    pub mdp: Option<PathBuf>,
    /// State indicators when absent.
    pub features: Option<PathBuf>,
}

/// Expert rollouts drawn from a built-in environment.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoConfig {
    pub n_paths: usize,
    pub max_len: usize,
    #[serde(default)]
    pub success_only: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub source: ProblemSource,
    pub trajectories: Option<PathBuf>,
    pub demos: Option<DemoConfig>,
    /// Inference horizon for the exact learners. Longest demonstration by default.
    pub horizon: Option<usize>,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_num_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EvalConfig {
    /// Reward recovery against the number of demonstrations.
    Sweep(RecoveryConfig),
    /// Learners side by side on shared data.
    Compare(ComparisonConfig),
    /// Scores saved parameter files against a ground-truth reward.
    Score(ScoreConfig),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(flatten)]
    pub source: ProblemSource,
    /// Ground-truth parameters. Defaults to the environment's own.
    pub ground_truth: Option<PathBuf>,
    /// Learned parameters, one CSV row each.
    pub params: Vec<PathBuf>,
    /// Optional data for the log-likelihood column.
    pub trajectories: Option<PathBuf>,
    /// Horizon for the log-likelihood. Longest trajectory by default.
    pub horizon: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = &mut self.out {
            fix(out);
        }
        if let Some(learn) = &mut self.learn {
            learn.source.resolve(base);
            learn.trajectories.as_mut().map(fix);
        }
        if let Some(EvalConfig::Score(score)) = &mut self.eval {
            score.source.resolve(base);
            score.ground_truth.as_mut().map(fix);
            score.trajectories.as_mut().map(fix);
            score.params.iter_mut().for_each(fix);
        }
    }
}

impl ProblemSource {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.mdp, &mut self.features].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        match (&self.env, &self.mdp) {
            (Some(_), Some(_)) => bail!("give either `env` or `mdp`, not both"),
            (None, None) => bail!("one of `env` or `mdp` is required"),
            (Some(_), None) if self.features.is_some() => bail!("`features` needs `mdp`, not `env`"),
            _ => Ok(()),
        }
    }
}

/// Fails with a message naming the first missing file.
pub fn require_files<'a>(paths: impl IntoIterator<Item = (&'a str, &'a Path)>) -> Result<()> {
    for (what, p) in paths {
        if !p.is_file() {
            bail!("{what} file not found: {}", p.display());
        }
    }
    Ok(())
}
