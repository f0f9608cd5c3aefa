//! File formats: JSON MDPs, features and parameters, JSONL trajectories and
//! marginal exports.
//!
//! Transitions and `phi_sas` accept either nested dense arrays or sparse
//! lists of `[s, a, s', value]` entries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::MarginalSet;
use crate::mdp::{Dataset, Mdp, Trajectory};
use crate::reward::{FeatureSet, RewardParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionSpec {
    Dense(Vec<Vec<Vec<f64>>>),
    Sparse(Vec<(usize, usize, usize, f64)>),
}

/// On-disk MDP description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub start_dist: Vec<f64>,
    pub transitions: TransitionSpec,
    pub discount: f64,
    #[serde(default)]
    pub terminal_states: Vec<usize>,
}

impl MdpFile {
    pub fn from_mdp(mdp: &Mdp) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let dense = (0..ns)
            .map(|s| (0..na).map(|a| mdp.row(s, a).to_vec()).collect())
            .collect();
        Self {
            num_states: ns,
            num_actions: na,
            start_dist: mdp.start_dist().to_vec(),
            transitions: TransitionSpec::Dense(dense),
            discount: mdp.discount(),
            terminal_states: mdp.terminal_states(),
        }
    }

    pub fn to_mdp(&self) -> Result<Mdp> {
        let (ns, na) = (self.num_states, self.num_actions);
        let mut t = vec![0.0; ns * na * ns];
        match &self.transitions {
            TransitionSpec::Dense(rows) => {
                check_len("transitions", ns, rows.len())?;
                for (s, per_action) in rows.iter().enumerate() {
                    check_len("transitions[s]", na, per_action.len())?;
                    for (a, row) in per_action.iter().enumerate() {
                        check_len("transitions[s][a]", ns, row.len())?;
                        let off = (s * na + a) * ns;
                        t[off..off + ns].copy_from_slice(row);
                    }
                }
            }
            TransitionSpec::Sparse(entries) => {
                for &(s, a, next, p) in entries {
                    if s >= ns || a >= na || next >= ns {
                        return Err(Error::InvalidMdp(format!(
                            "sparse transition ({s}, {a}, {next}) out of range"
                        )));
                    }
                    t[(s * na + a) * ns + next] += p;
                }
            }
        }
        Mdp::new(ns, na, self.start_dist.clone(), t, self.discount, &self.terminal_states)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionFeatures {
    Dense(Vec<Vec<Vec<Vec<f64>>>>),
    Sparse(Vec<(usize, usize, usize, Vec<f64>)>),
}

/// On-disk feature tables. Missing tables have dimension zero.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_s: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_sa: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_sas: Option<TransitionFeatures>,
    /// Needed only for an empty sparse `phi_sas`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_sas: Option<usize>,
}

fn common_dim<'a>(what: &'static str, mut rows: impl Iterator<Item = &'a Vec<f64>>) -> Result<usize> {
    let Some(first) = rows.next() else {
        return Ok(0);
    };
    let d = first.len();
    for r in rows {
        check_len(what, d, r.len())?;
    }
    Ok(d)
}

impl FeatureFile {
    pub fn from_features(feats: &FeatureSet) -> Self {
        let (ns, na) = (feats.num_states(), feats.num_actions());
        let (ds, dsa, dsas) = feats.dims();
        let mut out = Self::default();
        if ds > 0 {
            out.phi_s = Some((0..ns).map(|s| feats.state(s).to_vec()).collect());
        }
        if dsa > 0 {
            out.phi_sa = Some(
                (0..ns)
                    .map(|s| (0..na).map(|a| feats.state_action(s, a).to_vec()).collect())
                    .collect(),
            );
        }
        if dsas > 0 {
            let mut sparse = Vec::new();
            for s in 0..ns {
                for a in 0..na {
                    for next in 0..ns {
                        let phi = feats.transition(s, a, next);
                        if phi.iter().any(|&v| v != 0.0) {
                            sparse.push((s, a, next, phi.to_vec()));
                        }
                    }
                }
            }
            out.phi_sas = Some(TransitionFeatures::Sparse(sparse));
            out.dim_sas = Some(dsas);
        }
        out
    }

    pub fn to_features(&self, num_states: usize, num_actions: usize) -> Result<FeatureSet> {
        let (ns, na) = (num_states, num_actions);
        let (mut ds, mut phi_s) = (0, Vec::new());
        if let Some(rows) = &self.phi_s {
            check_len("phi_s", ns, rows.len())?;
            ds = common_dim("phi_s row", rows.iter())?;
            phi_s = rows.concat();
        }
        let (mut dsa, mut phi_sa) = (0, Vec::new());
        if let Some(rows) = &self.phi_sa {
            check_len("phi_sa", ns, rows.len())?;
            for r in rows {
                check_len("phi_sa[s]", na, r.len())?;
            }
            dsa = common_dim("phi_sa row", rows.iter().flatten())?;
            phi_sa = rows.iter().flatten().flatten().copied().collect();
        }
        let (mut dsas, mut phi_sas) = (0, Vec::new());
        match &self.phi_sas {
            None => {}
            Some(TransitionFeatures::Dense(rows)) => {
                check_len("phi_sas", ns, rows.len())?;
                for r in rows {
                    check_len("phi_sas[s]", na, r.len())?;
                    for ra in r {
                        check_len("phi_sas[s][a]", ns, ra.len())?;
                    }
                }
                dsas = common_dim("phi_sas row", rows.iter().flatten().flatten())?;
                phi_sas = rows.iter().flatten().flatten().flatten().copied().collect();
            }
            Some(TransitionFeatures::Sparse(entries)) => {
                dsas = match (self.dim_sas, entries.first()) {
                    (Some(d), _) => d,
                    (None, Some(e)) => e.3.len(),
                    (None, None) => 0,
                };
                phi_sas = vec![0.0; ns * na * ns * dsas];
                for (s, a, next, phi) in entries {
                    if *s >= ns || *a >= na || *next >= ns {
                        return Err(Error::InvalidFeatures(format!(
                            "sparse phi_sas entry ({s}, {a}, {next}) out of range"
                        )));
                    }
                    check_len("phi_sas entry", dsas, phi.len())?;
                    let off = ((s * na + a) * ns + next) * dsas;
                    phi_sas[off..off + dsas].copy_from_slice(phi);
                }
            }
        }
        FeatureSet::new(ns, na, ds, phi_s, dsa, phi_sa, dsas, phi_sas)
    }
}

/// JSON export of a marginal set. Transition marginals are listed sparsely.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalsFile {
    pub log_z: f64,
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    /// `[t][s]`
    pub p_s: Vec<Vec<f64>>,
    /// `[t][s][a]`
    pub p_sa: Vec<Vec<Vec<f64>>>,
    /// `[t, s, a, s', p]` for every non-zero entry.
    pub p_sas: Vec<(usize, usize, usize, usize, f64)>,
}

impl MarginalsFile {
    pub fn from_marginals(m: &MarginalSet) -> Self {
        let (ns, na, len) = (m.num_states(), m.num_actions(), m.len());
        let steps = len.saturating_sub(1);
        let p_s = (0..len).map(|t| (0..ns).map(|s| m.state(t, s)).collect()).collect();
        let p_sa = (0..steps)
            .map(|t| {
                (0..ns)
                    .map(|s| (0..na).map(|a| m.state_action(t, s, a)).collect())
                    .collect()
            })
            .collect();
        let mut p_sas = Vec::new();
        for t in 0..steps {
            for s in 0..ns {
                for a in 0..na {
                    for next in 0..ns {
                        let p = m.transition(t, s, a, next);
                        if p != 0.0 {
                            p_sas.push((t, s, a, next, p));
                        }
                    }
                }
            }
        }
        Self {
            log_z: m.log_z,
            num_states: ns,
            num_actions: na,
            horizon: len,
            p_s,
            p_sa,
            p_sas,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| {
        Error::InvalidConfig(format!("{}: {e}", path.display()))
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_mdp(path: &Path) -> Result<Mdp> {
    read_json::<MdpFile>(path)?.to_mdp()
}

pub fn write_mdp(path: &Path, mdp: &Mdp) -> Result<()> {
    write_json(path, &MdpFile::from_mdp(mdp))
}

pub fn read_features(path: &Path, mdp: &Mdp) -> Result<FeatureSet> {
    read_json::<FeatureFile>(path)?.to_features(mdp.num_states(), mdp.num_actions())
}

pub fn write_features(path: &Path, feats: &FeatureSet) -> Result<()> {
    write_json(path, &FeatureFile::from_features(feats))
}

pub fn read_params(path: &Path) -> Result<RewardParams> {
    let p: RewardParams = read_json(path)?;
    RewardParams::new(p.theta_s, p.theta_sa, p.theta_sas)
}

/// Parses one trajectory line: `[[s, a], ..., [s, -1]]`.
pub fn parse_trajectory(line: &str) -> Result<Trajectory> {
    let pairs: Vec<(usize, i64)> = serde_json::from_str(line)
        .map_err(|e| Error::InvalidTrajectory(e.to_string()))?;
    let steps: Vec<(usize, Option<usize>)> = pairs
        .into_iter()
        .map(|(s, a)| match a {
            -1 => Ok((s, None)),
            a if a >= 0 => Ok((s, Some(a as usize))),
            a => Err(Error::InvalidTrajectory(format!("negative action {a}"))),
        })
        .collect::<Result<_>>()?;
    Trajectory::from_steps(&steps)
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let pairs: Vec<(usize, i64)> = traj
        .steps()
        .into_iter()
        .map(|(s, a)| (s, a.map_or(-1, |a| a as i64)))
        .collect();
    serde_json::to_string(&pairs).expect("integers serialize")
}

/// Reads a JSONL dataset; blank lines are skipped.
pub fn read_trajectories(path: &Path) -> Result<Dataset> {
    let mut trajs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let traj = parse_trajectory(&line).map_err(|e| {
            Error::InvalidTrajectory(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        trajs.push(traj);
    }
    Dataset::new(trajs)
}

pub fn write_trajectories(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    for traj in data.trajectories() {
        writeln!(w, "{}", format_trajectory(traj))?;
    }
    w.flush()?;
    Ok(())
}
