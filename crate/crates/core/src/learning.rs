//! Reward learning drivers: the exact learners on top of the polynomial and
//! padded inference pipelines, and a model-free importance-sampling learner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{ExactModel, Variant};
use crate::logspace::LogSumExp;
use crate::mdp::{Dataset, Mdp, Trajectory};
use crate::optim::maximize;
pub use crate::optim::{Method, OptimizerConfig, StopReason, TraceEntry};
use crate::reward::{empirical_expectations, traj_features, FeatureSet, FeatureVectors, RewardParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnResult {
    pub params: RewardParams,
    pub log_z: f64,
    pub log_likelihood: f64,
    /// Objective and gradient infinity norm, one entry per iteration.
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Runs the configured optimizer from `Theta = 0`. The closure returns the
/// objective, its ascent direction and `log Z` at the given parameters.
pub fn optimize_objective<F>(feats: &FeatureSet, config: &OptimizerConfig, mut f: F) -> Result<LearnResult>
where
    F: FnMut(&RewardParams) -> Result<(f64, FeatureVectors, f64)>,
{
    let x0 = vec![0.0; feats.total_dim()];
    let outcome = maximize(
        x0,
        |x| {
            let params = RewardParams::unflatten(x, feats);
            let (ll, grad, _) = f(&params)?;
            Ok((ll, grad.flatten()))
        },
        config,
    )?;
    let params = RewardParams::unflatten(&outcome.x, feats);
    let (log_likelihood, _, log_z) = f(&params)?;
    Ok(LearnResult {
        params,
        log_z,
        log_likelihood,
        trace: outcome.trace,
        converged: outcome.converged,
        iterations: outcome.iterations,
        stop: outcome.stop,
    })
}

/// Exact maximum-likelihood learner. `horizon` defaults to the longest
/// demonstration.
pub fn learn_exact(
    mdp: &Mdp,
    feats: &FeatureSet,
    data: &Dataset,
    variant: Variant,
    horizon: Option<usize>,
    config: &OptimizerConfig,
) -> Result<LearnResult> {
    data.check_feasible(mdp)?;
    let len = horizon.unwrap_or_else(|| data.max_len());
    if data.max_len() > len {
        return Err(Error::TrajectoryTooLong {
            len: data.max_len(),
            max: len,
        });
    }
    let model = ExactModel::new(mdp, feats, len, variant)?;
    let empirical = empirical_expectations(data, feats, mdp.discount())?;
    optimize_objective(feats, config, |params| {
        let (ll, grad, m) = model.objective(data, &empirical, params)?;
        Ok((ll, grad, m.log_z))
    })
}

pub fn learn_exact_poly(
    mdp: &Mdp,
    feats: &FeatureSet,
    data: &Dataset,
    config: &OptimizerConfig,
) -> Result<LearnResult> {
    learn_exact(mdp, feats, data, Variant::Poly, None, config)
}

pub fn learn_exact_padded(
    mdp: &Mdp,
    feats: &FeatureSet,
    data: &Dataset,
    config: &OptimizerConfig,
) -> Result<LearnResult> {
    learn_exact(mdp, feats, data, Variant::Padded, None, config)
}

/// A sampled trajectory and the log probability of having sampled it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub traj: Trajectory,
    pub log_prob: f64,
}

/// Probability that [`sample_uniform_paths`] produces `traj`.
///
/// A target length is drawn uniformly from `1..=L`, then the walk picks valid
/// actions uniformly until it reaches that length or a state where it has to
/// stop. A path that stops early at length `m` collects every target length
/// from `m` to `L`.
pub fn uniform_path_log_prob(mdp: &Mdp, traj: &Trajectory, len: usize) -> Result<f64> {
    mdp.check_trajectory(traj)?;
    let m = traj.len();
    if m > len {
        return Err(Error::TrajectoryTooLong { len: m, max: len });
    }
    let states = traj.states();
    let mut lp = mdp.log_q_unchecked(traj);
    for &s in &states[..m - 1] {
        lp -= (mdp.valid_actions(s).count() as f64).ln();
    }
    let targets = if mdp.is_dead_end(traj.last()) { len - m + 1 } else { 1 };
    Ok(lp + (targets as f64 / len as f64).ln())
}

/// Draws `n` paths with the uniform-length, uniform-action sampler. Path `i`
/// uses its own ChaCha stream so the output does not depend on threading.
pub fn sample_uniform_paths(mdp: &Mdp, len: usize, n: usize, seed: u64) -> Result<Vec<PathSample>> {
    if len == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let target = rng.random_range(1..=len);
            let mut states = vec![mdp.sample_start(&mut rng)];
            let mut actions = Vec::new();
            loop {
                let s = *states.last().expect("non-empty");
                if states.len() == target || mdp.is_dead_end(s) {
                    break;
                }
                let valid: Vec<usize> = mdp.valid_actions(s).collect();
                let a = valid[rng.random_range(0..valid.len())];
                actions.push(a);
                states.push(mdp.sample_next(s, a, &mut rng));
            }
            let traj = Trajectory::new(states, actions)?;
            let log_prob = uniform_path_log_prob(mdp, &traj, len)?;
            Ok(PathSample { traj, log_prob })
        })
        .collect()
}

/// Self-normalized importance-sampling estimate of the likelihood gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEstimate {
    pub gradient: FeatureVectors,
    /// Delta-method standard error of each gradient coordinate.
    pub std_error: FeatureVectors,
    /// `log` of the mean raw weight, an estimate of `log Z`.
    pub log_z: f64,
    pub effective_sample_size: f64,
    /// Normalized weight mass by path length, index `m - 1` for length `m`.
    pub mass_by_length: Vec<f64>,
}

/// Per-sample discounted features and `log q - log p_sample`.
struct SampleCache {
    features: Vec<Vec<f64>>,
    log_ratio: Vec<f64>,
    lengths: Vec<usize>,
}

impl SampleCache {
    fn new(mdp: &Mdp, feats: &FeatureSet, samples: &[PathSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::ZeroWeights);
        }
        let mut features = Vec::with_capacity(samples.len());
        let mut log_ratio = Vec::with_capacity(samples.len());
        for s in samples {
            let lq = mdp.log_q(&s.traj)?;
            features.push(traj_features(&s.traj, feats, mdp.discount()).flatten());
            log_ratio.push(lq - s.log_prob);
        }
        let lengths = samples.iter().map(|s| s.traj.len()).collect();
        Ok(Self {
            features,
            log_ratio,
            lengths,
        })
    }

    /// Normalized weights and `log sum w`.
    fn weights(&self, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
        let logw: Vec<f64> = self
            .features
            .iter()
            .zip(&self.log_ratio)
            .map(|(f, r)| crate::reward::dot(f, theta) + r)
            .collect();
        let mut acc = LogSumExp::new();
        for &w in &logw {
            acc.add(w);
        }
        let total = acc.value();
        if !total.is_finite() {
            return Err(Error::ZeroWeights);
        }
        Ok((logw.iter().map(|w| (w - total).exp()).collect(), total))
    }

    fn model_expectation(&self, w: &[f64]) -> Vec<f64> {
        let mut mean = vec![0.0; self.features.first().map_or(0, Vec::len)];
        for (wi, f) in w.iter().zip(&self.features) {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += wi * v;
            }
        }
        mean
    }
}

pub fn importance_estimate(
    mdp: &Mdp,
    feats: &FeatureSet,
    params: &RewardParams,
    samples: &[PathSample],
    data: &Dataset,
) -> Result<ImportanceEstimate> {
    params.check_dims(feats)?;
    let cache = SampleCache::new(mdp, feats, samples)?;
    let theta = params.flatten();
    let (w, log_total) = cache.weights(&theta)?;
    let mean = cache.model_expectation(&w);
    let mut var = vec![0.0; mean.len()];
    for (wi, f) in w.iter().zip(&cache.features) {
        for ((v, x), m) in var.iter_mut().zip(f).zip(&mean) {
            *v += wi * wi * (x - m) * (x - m);
        }
    }
    let empirical = empirical_expectations(data, feats, mdp.discount())?.flatten();
    let grad: Vec<f64> = empirical.iter().zip(&mean).map(|(e, m)| e - m).collect();
    let se: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    let max_len = cache.lengths.iter().copied().max().unwrap_or(0);
    let mut mass_by_length = vec![0.0; max_len];
    for (wi, &m) in w.iter().zip(&cache.lengths) {
        mass_by_length[m - 1] += wi;
    }
    Ok(ImportanceEstimate {
        gradient: FeatureVectors::unflatten(&grad, feats),
        std_error: FeatureVectors::unflatten(&se, feats),
        log_z: log_total - (samples.len() as f64).ln(),
        effective_sample_size: 1.0 / w.iter().map(|x| x * x).sum::<f64>(),
        mass_by_length,
    })
}

/// `E_D[phi]` minus the self-normalized weighted sample mean of `phi`, with
/// raw weights `R(tau) + log q(tau) - log p_sample(tau)`.
pub fn importance_gradient(
    mdp: &Mdp,
    feats: &FeatureSet,
    params: &RewardParams,
    samples: &[PathSample],
    data: &Dataset,
) -> Result<FeatureVectors> {
    Ok(importance_estimate(mdp, feats, params, samples, data)?.gradient)
}

/// Model-free learner. With the sample set held fixed, the surrogate
/// `Theta . E_D[phi] + mean log q - log Z_hat(Theta)` is concave and its
/// gradient is exactly [`importance_gradient`].
pub fn learn_importance(
    mdp: &Mdp,
    feats: &FeatureSet,
    data: &Dataset,
    num_samples: usize,
    config: &OptimizerConfig,
) -> Result<LearnResult> {
    data.check_feasible(mdp)?;
    let len = data.max_len();
    let samples = sample_uniform_paths(mdp, len, num_samples, config.seed)?;
    let cache = SampleCache::new(mdp, feats, &samples)?;
    let empirical = empirical_expectations(data, feats, mdp.discount())?.flatten();
    let mean_log_q = data
        .trajectories()
        .iter()
        .map(|t| mdp.log_q_unchecked(t))
        .sum::<f64>()
        / data.len() as f64;
    let log_n = (num_samples as f64).ln();
    optimize_objective(feats, config, |params| {
        let theta = params.flatten();
        let (w, log_total) = cache.weights(&theta)?;
        let log_z = log_total - log_n;
        let ll = crate::reward::dot(&theta, &empirical) + mean_log_q - log_z;
        let grad: Vec<f64> = empirical
            .iter()
            .zip(cache.model_expectation(&w))
            .map(|(e, m)| e - m)
            .collect();
        Ok((ll, FeatureVectors::unflatten(&grad, feats), log_z))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::enumerate_paths;
    use crate::envs::{make_linear_chain, make_random_mdp, random_features};
    use crate::exact::ExactModel;

    fn fig1_data() -> Dataset {
        Dataset::new(
            (1..=4)
                .map(|n| Trajectory::new((0..n).collect(), vec![0; n - 1]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fig1_feature_matching() {
        let (mdp, feats, _) = make_linear_chain(4).unwrap();
        let data = fig1_data();
        for variant in [Variant::Poly, Variant::Padded] {
            let res = learn_exact(&mdp, &feats, &data, variant, None, &OptimizerConfig::default()).unwrap();
            assert!(res.converged, "{variant:?}");
            let m = ExactModel::new(&mdp, &feats, 4, variant).unwrap().marginals(&res.params).unwrap();
            let model = m.feature_expectations(&feats, 1.0);
            for (got, want) in model.s.iter().zip([1.0, 0.75, 0.5, 0.25]) {
                assert!((got - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn empty_features_return_immediately() {
        let (mdp, _, _) = make_linear_chain(4).unwrap();
        let feats = FeatureSet::empty(4, 1);
        let res = learn_exact_padded(&mdp, &feats, &fig1_data(), &OptimizerConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!((res.log_likelihood + 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn poly_and_padded_learn_the_same() {
        for seed in 0..5 {
            let mdp = make_random_mdp(4, 2, 2, seed).unwrap().with_discount(0.9).unwrap();
            let feats = random_features(4, 2, (2, 1, 0), seed);
            let paths = enumerate_paths(&mdp, 3).unwrap();
            let data = Dataset::new(paths.into_iter().step_by(3).collect()).unwrap();
            let cfg = OptimizerConfig::default();
            let a = learn_exact_poly(&mdp, &feats, &data, &cfg).unwrap();
            let b = learn_exact_padded(&mdp, &feats, &data, &cfg).unwrap();
            for (x, y) in a.params.flatten().iter().zip(b.params.flatten()) {
                assert!((x - y).abs() < 1e-6, "seed {seed}");
            }
            for (x, y) in a.trace.iter().zip(&b.trace) {
                assert!((x.objective - y.objective).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn infeasible_data_rejected() {
        let (mdp, feats, _) = make_linear_chain(4).unwrap();
        let data = Dataset::new(vec![Trajectory::new(vec![1, 2], vec![0]).unwrap()]).unwrap();
        assert!(matches!(
            learn_exact_poly(&mdp, &feats, &data, &OptimizerConfig::default()),
            Err(Error::InfeasibleTrajectory { .. })
        ));
    }

    #[test]
    fn sampler_probabilities_sum_to_one() {
        for seed in 0..5 {
            let mdp = make_random_mdp(3, 2, 2, seed).unwrap().with_terminals(&[2]).unwrap();
            let len = 4;
            let total: f64 = enumerate_paths(&mdp, len)
                .unwrap()
                .iter()
                .map(|p| uniform_path_log_prob(&mdp, p, len).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "seed {seed}: {total}");
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let mdp = make_random_mdp(4, 2, 2, 1).unwrap();
        let a = sample_uniform_paths(&mdp, 5, 50, 9).unwrap();
        let b = sample_uniform_paths(&mdp, 5, 50, 9).unwrap();
        assert_eq!(a, b);
        for s in &a {
            assert!((s.log_prob - uniform_path_log_prob(&mdp, &s.traj, 5).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_sampling_distribution_gives_uniform_weights() {
        // Samples whose recorded probability is the MaxEnt probability itself.
        let (mdp, feats, _) = make_linear_chain(4).unwrap();
        let params = RewardParams::new(vec![0.5, -0.2, 0.1, 1.0], vec![], vec![]).unwrap();
        let e = crate::baselines::enumerate_ensemble(&mdp, &feats, &params, 4).unwrap();
        let samples: Vec<PathSample> = (0..e.len())
            .map(|i| PathSample {
                traj: e.paths[i].0.clone(),
                log_prob: e.paths[i].1 - e.log_z,
            })
            .collect();
        let est = importance_estimate(&mdp, &feats, &params, &samples, &fig1_data()).unwrap();
        assert!((est.effective_sample_size - 4.0).abs() < 1e-9);
        assert!((est.log_z - e.log_z).abs() < 1e-12);
    }

    #[test]
    fn importance_learner_recovers_fig1() {
        let (mdp, feats, _) = make_linear_chain(4).unwrap();
        let cfg = OptimizerConfig::default();
        let res = learn_importance(&mdp, &feats, &fig1_data(), 2000, &cfg).unwrap();
        assert!(res.converged);
        let exact = learn_exact_padded(&mdp, &feats, &fig1_data(), &cfg).unwrap();
        // Every path of the chain is sampled, so the surrogate is exact up to
        // the sample frequencies.
        assert!((res.log_likelihood - exact.log_likelihood).abs() < 0.05);
    }
}
