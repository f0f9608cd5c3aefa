//! Subcommand bodies. Each returns whether every learner converged.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use maxent_irl::experiments::{
    compare_algorithms, expert_demos, held_out_log_likelihood, mean_ci, recovery_sweep, runtime_scaling,
    scaling_slopes, substream_seed, ScalingConfig, DEMO_TAG, LEARN_TAG,
};
use maxent_irl::io::{read_features, read_json, read_mdp, read_trajectories};
use maxent_irl::policy::ile;
use maxent_irl::{Dataset, FeatureSet, LearnResult, Mdp, OptimizerConfig, RewardParams, RewardTables};
use serde::Deserialize;

use crate::config::{require_files, EvalConfig, LearnConfig, ProblemSource, ScoreConfig};

/// Problem loaded from files or built from an environment.
struct Problem {
    mdp: Mdp,
    feats: FeatureSet,
    gt: Option<RewardParams>,
}

fn load_problem(src: &ProblemSource) -> Result<Problem> {
    src.check()?;
    if let Some(env) = &src.env {
        let (mdp, feats, gt) = env.build()?;
        return Ok(Problem { mdp, feats, gt: Some(gt) });
    }
    let mdp_path = src.mdp.as_deref().expect("checked");
    require_files([("MDP", mdp_path)])?;
    let mdp = read_mdp(mdp_path)?;
    let feats = match &src.features {
        Some(p) => {
            require_files([("features", p.as_path())])?;
            read_features(p, &mdp)?
        }
        None => FeatureSet::state_indicators(mdp.num_states(), mdp.num_actions()),
    };
    Ok(Problem { mdp, feats, gt: None })
}

fn load_trajectories(path: &Path) -> Result<Dataset> {
    require_files([("trajectory", path)])?;
    Ok(read_trajectories(path)?)
}

/// Accepts either bare parameters or a full learn result.
#[derive(Deserialize)]
#[serde(untagged)]
enum ParamsFile {
    Result(Box<LearnResult>),
    Bare(RewardParams),
}

fn load_params(path: &Path) -> Result<RewardParams> {
    require_files([("parameter", path)])?;
    Ok(match read_json::<ParamsFile>(path)? {
        ParamsFile::Result(r) => r.params,
        ParamsFile::Bare(p) => p,
    })
}

fn open_out(out: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("cannot create output {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn csv_writer(out: Option<&PathBuf>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(open_out(out)?))
}

pub fn learn(cfg: &LearnConfig, seed: u64, out: Option<&PathBuf>) -> Result<bool> {
    let problem = load_problem(&cfg.source)?;
    cfg.algorithm.check_features(&problem.feats)?;
    cfg.optimizer.validate()?;
    let data = match (&cfg.trajectories, &cfg.demos) {
        (Some(_), Some(_)) => bail!("give either `trajectories` or `demos`, not both"),
        (Some(p), None) => load_trajectories(p)?,
        (None, Some(d)) => {
            let Some(gt) = &problem.gt else {
                bail!("`demos` needs a built-in `env` with a ground-truth reward");
            };
            let gt = RewardTables::from_params(&problem.feats, gt)?;
            let demo_seed = substream_seed(seed, DEMO_TAG, 0);
            expert_demos(&problem.mdp, &gt, d.n_paths, d.max_len, d.success_only, demo_seed)?
        }
        (None, None) => bail!("one of `trajectories` or `demos` is required"),
    };
    let opt = OptimizerConfig {
        seed: substream_seed(seed, LEARN_TAG, 0),
        ..cfg.optimizer.clone()
    };
    info!("learning with {} on {} trajectories", cfg.algorithm, data.len());
    let res = cfg.algorithm.learn(&problem.mdp, &problem.feats, &data, cfg.horizon, cfg.num_samples, &opt)?;
    let mut w = open_out(out)?;
    serde_json::to_writer_pretty(&mut w, &res)?;
    writeln!(w)?;
    w.flush()?;
    if !res.converged {
        warn!("stopped after {} iterations: {:?}", res.iterations, res.stop);
    }
    Ok(res.converged)
}

pub fn eval(cfg: &EvalConfig, seed: u64, out: Option<&PathBuf>) -> Result<bool> {
    match cfg {
        EvalConfig::Sweep(c) => {
            let rows = recovery_sweep(c, seed)?;
            let mut w = csv_writer(out)?;
            w.write_record(["repeat", "n_paths", "ile", "loglik"])?;
            for r in &rows {
                w.write_record([r.repeat.to_string(), r.n_paths.to_string(), r.ile.to_string(), r.loglik.to_string()])?;
            }
            w.flush()?;
            Ok(report_unconverged(rows.iter().filter(|r| !r.converged).count()))
        }
        EvalConfig::Compare(c) => {
            let rows = compare_algorithms(c, seed)?;
            let mut w = csv_writer(out)?;
            w.write_record(["repeat", "algorithm", "ile", "heldout_loglik", "converged"])?;
            for r in &rows {
                w.write_record([
                    r.repeat.to_string(),
                    r.algorithm.to_string(),
                    r.ile.to_string(),
                    r.heldout_loglik.to_string(),
                    r.converged.to_string(),
                ])?;
            }
            w.flush()?;
            Ok(report_unconverged(rows.iter().filter(|r| !r.converged).count()))
        }
        EvalConfig::Score(c) => score(c, out).map(|_| true),
    }
}

fn report_unconverged(n: usize) -> bool {
    if n > 0 {
        warn!("{n} learner runs hit the iteration limit");
    }
    n == 0
}

fn score(cfg: &ScoreConfig, out: Option<&PathBuf>) -> Result<()> {
    let problem = load_problem(&cfg.source)?;
    let gt = match (&cfg.ground_truth, problem.gt) {
        (Some(p), _) => load_params(p)?,
        (None, Some(gt)) => gt,
        (None, None) => bail!("`ground_truth` is required without a built-in `env`"),
    };
    let gt = RewardTables::from_params(&problem.feats, &gt)?;
    let data = cfg.trajectories.as_deref().map(load_trajectories).transpose()?;
    let mut w = csv_writer(out)?;
    w.write_record(["repeat", "n_paths", "ile", "loglik"])?;
    for (i, path) in cfg.params.iter().enumerate() {
        let params = load_params(path)?;
        let learned = RewardTables::from_params(&problem.feats, &params)
            .with_context(|| format!("parameters in {} do not fit the features", path.display()))?;
        let ile = ile(&problem.mdp, &gt, &learned)?;
        let (n, ll) = match &data {
            Some(d) => {
                let len = cfg.horizon.unwrap_or_else(|| d.max_len());
                (d.len(), held_out_log_likelihood(&problem.mdp, &problem.feats, &params, d, len)?)
            }
            None => (0, f64::NAN),
        };
        w.write_record([i.to_string(), n.to_string(), ile.to_string(), ll.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn bench(cfg: &ScalingConfig, seed: u64, out: Option<&PathBuf>) -> Result<bool> {
    let rows = runtime_scaling(cfg, seed)?;
    let mut w = csv_writer(out)?;
    w.write_record(["size", "L", "algorithm", "repeat", "wall_time", "mean", "ci"])?;
    for r in &rows {
        let group: Vec<f64> = rows
            .iter()
            .filter(|o| o.horizon == r.horizon && o.algorithm == r.algorithm)
            .map(|o| o.seconds)
            .collect();
        let (mean, ci) = mean_ci(&group);
        let alg = serde_json::to_value(r.algorithm)?;
        w.write_record([
            r.size.to_string(),
            r.horizon.to_string(),
            alg.as_str().unwrap_or_default().to_string(),
            r.repeat.to_string(),
            r.seconds.to_string(),
            mean.to_string(),
            ci.to_string(),
        ])?;
    }
    w.flush()?;
    if cfg.lengths.len() > 1 {
        for (variant, slope) in scaling_slopes(&rows) {
            info!("{variant:?}: log-log slope {slope:.2}");
        }
    }
    Ok(true)
}
