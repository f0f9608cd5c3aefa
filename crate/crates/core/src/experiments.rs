//! Experiment drivers: reward recovery against the number of demonstrations,
//! exact versus approximate learners, and inference runtime against horizon.
//!
//! Every repeat draws from its own seed substream, so results do not depend
//! on how rayon schedules the work.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{approx_irl_learn, ZiebartVariant};
use crate::envs::{random_params, EnvSpec};
use crate::error::{Error, Result};
use crate::exact::{log_likelihood, ExactModel, Variant};
use crate::learning::{learn_exact, learn_importance, LearnResult, OptimizerConfig};
use crate::mdp::{Dataset, Mdp, Trajectory};
use crate::policy::{ile, sample_rollouts, value_iteration};
use crate::reward::{FeatureSet, RewardParams, RewardTables};

/// Learners selectable from configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    ExactPadded,
    ExactPoly,
    Ziebart2008,
    Ziebart2010,
    ImportanceSampling,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ExactPadded => "exact-padded",
            Algorithm::ExactPoly => "exact-poly",
            Algorithm::Ziebart2008 => "ziebart2008",
            Algorithm::Ziebart2010 => "ziebart2010",
            Algorithm::ImportanceSampling => "importance-sampling",
        }
    }

    pub fn requires_state_only(self) -> bool {
        matches!(self, Algorithm::Ziebart2008 | Algorithm::Ziebart2010)
    }

    /// Rejects combinations the learner cannot handle.
    pub fn check_features(self, feats: &FeatureSet) -> Result<()> {
        if self.requires_state_only() && !feats.is_state_only() {
            return Err(Error::InvalidConfig(format!(
                "{} requires state-only features",
                self.name()
            )));
        }
        Ok(())
    }

    /// Runs the learner. `horizon` applies to the exact learners only;
    /// `num_samples` to the importance-sampling one.
    pub fn learn(
        self,
        mdp: &Mdp,
        feats: &FeatureSet,
        data: &Dataset,
        horizon: Option<usize>,
        num_samples: usize,
        config: &OptimizerConfig,
    ) -> Result<LearnResult> {
        self.check_features(feats)?;
        match self {
            Algorithm::ExactPadded => learn_exact(mdp, feats, data, Variant::Padded, horizon, config),
            Algorithm::ExactPoly => learn_exact(mdp, feats, data, Variant::Poly, horizon, config),
            Algorithm::Ziebart2008 => approx_irl_learn(mdp, feats, data, ZiebartVariant::Z2008, config),
            Algorithm::Ziebart2010 => approx_irl_learn(mdp, feats, data, ZiebartVariant::Z2010, config),
            Algorithm::ImportanceSampling => learn_importance(mdp, feats, data, num_samples, config),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Seed for substream `(tag, index)` of `root`.
pub fn substream_seed(root: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Substream tags: demonstrations, held-out sets, learner seeds.
pub const DEMO_TAG: u64 = 1;
pub const HELD_OUT_TAG: u64 = 2;
pub const LEARN_TAG: u64 = 3;

/// A trajectory counts as a success when it ends in a terminal state with
/// positive ground-truth state reward.
pub fn is_success(mdp: &Mdp, gt: &RewardTables, traj: &Trajectory) -> bool {
    let s = traj.last();
    mdp.is_terminal(s) && gt.state(s) > 0.0
}

/// `n` rollouts of the ground-truth optimal policy. With `success_only`,
/// rollouts are drawn in batches until `n` successes are collected.
pub fn expert_demos(
    mdp: &Mdp,
    gt: &RewardTables,
    n: usize,
    max_len: usize,
    success_only: bool,
    seed: u64,
) -> Result<Dataset> {
    let (_, policy) = value_iteration(mdp, gt)?;
    if !success_only {
        return sample_rollouts(mdp, &policy, n, max_len, seed);
    }
    let mut kept = Vec::with_capacity(n);
    let batch = n.max(16);
    for b in 0..1000 {
        let data = sample_rollouts(mdp, &policy, batch, max_len, substream_seed(seed, 0, b))?;
        kept.extend(
            data.trajectories()
                .iter()
                .filter(|t| is_success(mdp, gt, t))
                .take(n - kept.len())
                .cloned(),
        );
        if kept.len() == n {
            return Dataset::new(kept);
        }
    }
    Err(Error::InvalidConfig(
        "expert policy almost never reaches a rewarding terminal state".into(),
    ))
}

/// Exact log-likelihood of `data` under `params` with horizon `len`.
pub fn held_out_log_likelihood(
    mdp: &Mdp,
    feats: &FeatureSet,
    params: &RewardParams,
    data: &Dataset,
    len: usize,
) -> Result<f64> {
    let model = ExactModel::new(mdp, feats, len, Variant::Padded)?;
    let log_z = model.log_partition(params)?;
    log_likelihood(data, mdp, feats, params, log_z)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    pub env: EnvSpec,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_n_paths")]
    pub n_paths: Vec<usize>,
    #[serde(default = "default_recovery_repeats")]
    pub repeats: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub success_only: bool,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::ExactPadded
}

fn default_n_paths() -> Vec<usize> {
    vec![1, 10, 100]
}

fn default_recovery_repeats() -> usize {
    20
}

fn default_max_len() -> usize {
    30
}

fn default_num_samples() -> usize {
    10_000
}

/// One learned reward in the recovery sweep. `loglik` is the training
/// log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub repeat: usize,
    pub n_paths: usize,
    pub ile: f64,
    pub loglik: f64,
    pub converged: bool,
}

/// Reward recovery against dataset size. Within a repeat the datasets are
/// nested prefixes of one draw of expert demonstrations.
pub fn recovery_sweep(cfg: &RecoveryConfig, seed: u64) -> Result<Vec<RecoveryRow>> {
    let (mdp, feats, gt_params) = cfg.env.build()?;
    cfg.algorithm.check_features(&feats)?;
    cfg.optimizer.validate()?;
    if cfg.n_paths.contains(&0) {
        return Err(Error::InvalidConfig("n_paths entries must be positive".into()));
    }
    let gt = RewardTables::from_params(&feats, &gt_params)?;
    let most = cfg.n_paths.iter().copied().max().unwrap_or(0);
    let jobs: Vec<(usize, usize)> = (0..cfg.repeats)
        .flat_map(|r| cfg.n_paths.iter().map(move |&n| (r, n)))
        .collect();
    let pools: Vec<Dataset> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let s = substream_seed(seed, DEMO_TAG, r as u64);
            expert_demos(&mdp, &gt, most, cfg.max_len, cfg.success_only, s)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<RecoveryRow> = jobs
        .into_par_iter()
        .map(|(r, n)| {
            let data = Dataset::new(pools[r].trajectories()[..n].to_vec())?;
            let opt = OptimizerConfig {
                seed: substream_seed(seed, LEARN_TAG, r as u64),
                ..cfg.optimizer.clone()
            };
            let res = cfg
                .algorithm
                .learn(&mdp, &feats, &data, Some(cfg.max_len), cfg.num_samples, &opt)?;
            let learned = RewardTables::from_params(&feats, &res.params)?;
            Ok(RecoveryRow {
                repeat: r,
                n_paths: n,
                ile: ile(&mdp, &gt, &learned)?,
                loglik: res.log_likelihood,
                converged: res.converged,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|row| (row.n_paths, row.repeat));
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub env: EnvSpec,
    #[serde(default = "default_comparison_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_comparison_paths")]
    pub n_paths: usize,
    #[serde(default = "default_comparison_paths")]
    pub held_out: usize,
    #[serde(default = "default_comparison_repeats")]
    pub repeats: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub success_only: bool,
    #[serde(default = "default_num_samples")]
    pub num_samples: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

fn default_comparison_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::ExactPadded, Algorithm::Ziebart2008, Algorithm::Ziebart2010]
}

fn default_comparison_paths() -> usize {
    50
}

fn default_comparison_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub repeat: usize,
    pub algorithm: Algorithm,
    pub ile: f64,
    pub heldout_loglik: f64,
    pub converged: bool,
}

/// Trains each algorithm on the same demonstrations and scores it by ILE
/// and by the exact log-likelihood of an independent held-out set.
pub fn compare_algorithms(cfg: &ComparisonConfig, seed: u64) -> Result<Vec<ComparisonRow>> {
    let (mdp, feats, gt_params) = cfg.env.build()?;
    for alg in &cfg.algorithms {
        alg.check_features(&feats)?;
    }
    cfg.optimizer.validate()?;
    if cfg.n_paths == 0 || cfg.held_out == 0 {
        return Err(Error::InvalidConfig("dataset sizes must be positive".into()));
    }
    let gt = RewardTables::from_params(&feats, &gt_params)?;
    let data: Vec<(Dataset, Dataset)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let train_seed = substream_seed(seed, DEMO_TAG, r as u64);
            let test_seed = substream_seed(seed, HELD_OUT_TAG, r as u64);
            Ok((
                expert_demos(&mdp, &gt, cfg.n_paths, cfg.max_len, cfg.success_only, train_seed)?,
                expert_demos(&mdp, &gt, cfg.held_out, cfg.max_len, cfg.success_only, test_seed)?,
            ))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, Algorithm)> = (0..cfg.repeats)
        .flat_map(|r| cfg.algorithms.iter().map(move |&a| (r, a)))
        .collect();
    let mut rows: Vec<ComparisonRow> = jobs
        .into_par_iter()
        .map(|(r, alg)| {
            let (train, test) = &data[r];
            let opt = OptimizerConfig {
                seed: substream_seed(seed, LEARN_TAG, r as u64),
                ..cfg.optimizer.clone()
            };
            let res = alg.learn(&mdp, &feats, train, Some(cfg.max_len), cfg.num_samples, &opt)?;
            let learned = RewardTables::from_params(&feats, &res.params)?;
            Ok(ComparisonRow {
                repeat: r,
                algorithm: alg,
                ile: ile(&mdp, &gt, &learned)?,
                heldout_loglik: held_out_log_likelihood(&mdp, &feats, &res.params, test, cfg.max_len)?,
                converged: res.converged,
            })
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|row| (row.algorithm, row.repeat));
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub env: EnvSpec,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_scaling_repeats")]
    pub repeats: usize,
    /// Objective evaluations timed per repeat.
    #[serde(default = "default_evals")]
    pub evals: usize,
}

fn default_lengths() -> Vec<usize> {
    vec![10, 20, 40, 80]
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Padded, Variant::Poly]
}

fn default_scaling_repeats() -> usize {
    5
}

fn default_evals() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    /// `|S|^2 |A|`
    pub size: usize,
    pub horizon: usize,
    pub algorithm: Variant,
    pub repeat: usize,
    /// Mean seconds per evaluation in this repeat.
    pub seconds: f64,
}

/// Times marginal inference plus the gradient at random parameters.
/// Repeats run sequentially so they do not compete for cores.
pub fn runtime_scaling(cfg: &ScalingConfig, seed: u64) -> Result<Vec<ScalingRow>> {
    let (mdp, feats, _) = cfg.env.build()?;
    if cfg.lengths.contains(&0) || cfg.evals == 0 {
        return Err(Error::InvalidConfig("lengths and evals must be positive".into()));
    }
    let size = mdp.num_states() * mdp.num_states() * mdp.num_actions();
    let mut rows = Vec::new();
    for &len in &cfg.lengths {
        for &variant in &cfg.variants {
            let model = ExactModel::new(&mdp, &feats, len, variant)?;
            for r in 0..cfg.repeats {
                let params = random_params(&feats, 1.0, substream_seed(seed, LEARN_TAG, r as u64));
                std::hint::black_box(model.marginals(&params)?);
                let start = Instant::now();
                for _ in 0..cfg.evals {
                    let m = model.marginals(&params)?;
                    std::hint::black_box(m.feature_expectations(&feats, mdp.discount()));
                }
                rows.push(ScalingRow {
                    size,
                    horizon: len,
                    algorithm: variant,
                    repeat: r,
                    seconds: start.elapsed().as_secs_f64() / cfg.evals as f64,
                });
            }
        }
    }
    Ok(rows)
}

/// Median of a non-empty sample.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and 95% normal-approximation half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Per-variant slope of median runtime against horizon.
pub fn scaling_slopes(rows: &[ScalingRow]) -> Vec<(Variant, f64)> {
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.algorithm).collect();
    variants.sort_by_key(|v| *v as u8);
    variants.dedup();
    variants
        .into_iter()
        .map(|v| {
            let mut lens: Vec<usize> = rows.iter().filter(|r| r.algorithm == v).map(|r| r.horizon).collect();
            lens.sort_unstable();
            lens.dedup();
            let points: Vec<(f64, f64)> = lens
                .iter()
                .map(|&l| {
                    let times: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.algorithm == v && r.horizon == l)
                        .map(|r| r.seconds)
                        .collect();
                    (l as f64, median(&times))
                })
                .collect();
            (v, log_log_slope(&points))
        })
        .collect()
}
