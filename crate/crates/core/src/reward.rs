//! Linear reward features, parameters and evaluated reward tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::{discounted, LOG_ZERO};
use crate::mdp::{Dataset, Mdp, PaddedMdp, Trajectory};

/// Dense feature tables for state, state-action and state-action-state
/// rewards. Any of the three may have dimension zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    num_states: usize,
    num_actions: usize,
    dim_s: usize,
    dim_sa: usize,
    dim_sas: usize,
    phi_s: Vec<f64>,
    phi_sa: Vec<f64>,
    phi_sas: Vec<f64>,
}

impl FeatureSet {
    /// `phi_s` is `[s][d_s]`, `phi_sa` is `[s][a][d_sa]` and `phi_sas` is
    /// `[s][a][s'][d_sas]`, all flattened row-major.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        dim_s: usize,
        phi_s: Vec<f64>,
        dim_sa: usize,
        phi_sa: Vec<f64>,
        dim_sas: usize,
        phi_sas: Vec<f64>,
    ) -> Result<Self> {
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("phi_s", num_states * dim_s, phi_s.len())?;
        check("phi_sa", num_states * num_actions * dim_sa, phi_sa.len())?;
        check(
            "phi_sas",
            num_states * num_actions * num_states * dim_sas,
            phi_sas.len(),
        )?;
        if phi_s
            .iter()
            .chain(&phi_sa)
            .chain(&phi_sas)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidFeatures("non-finite feature value".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            dim_s,
            dim_sa,
            dim_sas,
            phi_s,
            phi_sa,
            phi_sas,
        })
    }

    /// One-hot state features.
    pub fn state_indicators(num_states: usize, num_actions: usize) -> Self {
        let mut phi_s = vec![0.0; num_states * num_states];
        for s in 0..num_states {
            phi_s[s * num_states + s] = 1.0;
        }
        Self::new(num_states, num_actions, num_states, phi_s, 0, vec![], 0, vec![])
            .expect("consistent dimensions")
    }

    /// One-hot state-action features.
    pub fn state_action_indicators(num_states: usize, num_actions: usize) -> Self {
        let d = num_states * num_actions;
        let mut phi_sa = vec![0.0; d * d];
        for i in 0..d {
            phi_sa[i * d + i] = 1.0;
        }
        Self::new(num_states, num_actions, 0, vec![], d, phi_sa, 0, vec![])
            .expect("consistent dimensions")
    }

    pub fn empty(num_states: usize, num_actions: usize) -> Self {
        Self::new(num_states, num_actions, 0, vec![], 0, vec![], 0, vec![])
            .expect("consistent dimensions")
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dim_s, self.dim_sa, self.dim_sas)
    }

    pub fn total_dim(&self) -> usize {
        self.dim_s + self.dim_sa + self.dim_sas
    }

    pub fn is_state_only(&self) -> bool {
        self.dim_sa == 0 && self.dim_sas == 0
    }

    #[inline]
    pub fn state(&self, s: usize) -> &[f64] {
        &self.phi_s[s * self.dim_s..(s + 1) * self.dim_s]
    }

    #[inline]
    pub fn state_action(&self, s: usize, a: usize) -> &[f64] {
        let i = s * self.num_actions + a;
        &self.phi_sa[i * self.dim_sa..(i + 1) * self.dim_sa]
    }

    #[inline]
    pub fn transition(&self, s: usize, a: usize, next: usize) -> &[f64] {
        let i = (s * self.num_actions + a) * self.num_states + next;
        &self.phi_sas[i * self.dim_sas..(i + 1) * self.dim_sas]
    }

    fn check_mdp(&self, mdp: &Mdp) -> Result<()> {
        if self.num_states != mdp.num_states() {
            return Err(Error::DimensionMismatch {
                what: "feature states",
                expected: mdp.num_states(),
                got: self.num_states,
            });
        }
        if self.num_actions != mdp.num_actions() {
            return Err(Error::DimensionMismatch {
                what: "feature actions",
                expected: mdp.num_actions(),
                got: self.num_actions,
            });
        }
        Ok(())
    }
}

/// Reward parameters `Theta = {theta_s, theta_sa, theta_sas'}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RewardParams {
    pub theta_s: Vec<f64>,
    pub theta_sa: Vec<f64>,
    pub theta_sas: Vec<f64>,
}

impl RewardParams {
    pub fn zeros(feats: &FeatureSet) -> Self {
        let (ds, dsa, dsas) = feats.dims();
        Self {
            theta_s: vec![0.0; ds],
            theta_sa: vec![0.0; dsa],
            theta_sas: vec![0.0; dsas],
        }
    }

    pub fn new(theta_s: Vec<f64>, theta_sa: Vec<f64>, theta_sas: Vec<f64>) -> Result<Self> {
        let p = Self {
            theta_s,
            theta_sa,
            theta_sas,
        };
        if !p.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidFeatures("non-finite reward parameter".into()));
        }
        Ok(p)
    }

    pub fn check_dims(&self, feats: &FeatureSet) -> Result<()> {
        let (ds, dsa, dsas) = feats.dims();
        for (what, expected, got) in [
            ("theta_s", ds, self.theta_s.len()),
            ("theta_sa", dsa, self.theta_sa.len()),
            ("theta_sas", dsas, self.theta_sas.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Concatenation `[theta_s, theta_sa, theta_sas]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.theta_s.len() + self.theta_sa.len() + self.theta_sas.len());
        v.extend_from_slice(&self.theta_s);
        v.extend_from_slice(&self.theta_sa);
        v.extend_from_slice(&self.theta_sas);
        v
    }

    pub fn unflatten(flat: &[f64], feats: &FeatureSet) -> Self {
        let (ds, dsa, _) = feats.dims();
        Self {
            theta_s: flat[..ds].to_vec(),
            theta_sa: flat[ds..ds + dsa].to_vec(),
            theta_sas: flat[ds + dsa..].to_vec(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let f = |v: &[f64]| v.iter().map(|x| x * factor).collect();
        Self {
            theta_s: f(&self.theta_s),
            theta_sa: f(&self.theta_sa),
            theta_sas: f(&self.theta_sas),
        }
    }
}

/// Discounted feature sums (or expectations / gradients) split by reward type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVectors {
    pub s: Vec<f64>,
    pub sa: Vec<f64>,
    pub sas: Vec<f64>,
}

impl FeatureVectors {
    pub fn zeros(feats: &FeatureSet) -> Self {
        let (ds, dsa, dsas) = feats.dims();
        Self {
            s: vec![0.0; ds],
            sa: vec![0.0; dsa],
            sas: vec![0.0; dsas],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.s.len() + self.sa.len() + self.sas.len());
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.sa);
        v.extend_from_slice(&self.sas);
        v
    }

    /// Inverse of [`FeatureVectors::flatten`]; panics if `flat` is shorter
    /// than the total feature dimension.
    pub fn unflatten(flat: &[f64], feats: &FeatureSet) -> Self {
        let (ds, dsa, dsas) = feats.dims();
        Self {
            s: flat[..ds].to_vec(),
            sa: flat[ds..ds + dsa].to_vec(),
            sas: flat[ds + dsa..ds + dsa + dsas].to_vec(),
        }
    }

    pub fn dot(&self, params: &RewardParams) -> f64 {
        dot(&self.s, &params.theta_s) + dot(&self.sa, &params.theta_sa) + dot(&self.sas, &params.theta_sas)
    }

    pub fn max_abs(&self) -> f64 {
        self.s
            .iter()
            .chain(&self.sa)
            .chain(&self.sas)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Element-wise `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        let f = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self {
            s: f(&self.s, &other.s),
            sa: f(&self.sa, &other.sa),
            sas: f(&self.sas, &other.sas),
        }
    }

    fn axpy(&mut self, w: f64, other: &Self) {
        for (x, y) in self.s.iter_mut().zip(&other.s) {
            *x += w * y;
        }
        for (x, y) in self.sa.iter_mut().zip(&other.sa) {
            *x += w * y;
        }
        for (x, y) in self.sas.iter_mut().zip(&other.sas) {
            *x += w * y;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn add_scaled(acc: &mut [f64], w: f64, v: &[f64]) {
    for (x, y) in acc.iter_mut().zip(v) {
        *x += w * y;
    }
}

/// Discounted feature sums of a single trajectory. State features run over
/// all `|tau|` steps, the action features over the `|tau| - 1` transitions.
pub fn traj_features(traj: &Trajectory, feats: &FeatureSet, discount: f64) -> FeatureVectors {
    let mut out = FeatureVectors::zeros(feats);
    let states = traj.states();
    let mut w = 1.0;
    for (t, &s) in states.iter().enumerate() {
        add_scaled(&mut out.s, w, feats.state(s));
        if let Some(&a) = traj.actions().get(t) {
            add_scaled(&mut out.sa, w, feats.state_action(s, a));
            add_scaled(&mut out.sas, w, feats.transition(s, a, states[t + 1]));
        }
        w *= discount;
    }
    out
}

/// `R(tau) = Theta . phi(tau)`.
pub fn traj_reward(
    traj: &Trajectory,
    params: &RewardParams,
    feats: &FeatureSet,
    discount: f64,
) -> f64 {
    traj_features(traj, feats, discount).dot(params)
}

/// Mean discounted feature counts over the demonstrations.
pub fn empirical_expectations(
    data: &Dataset,
    feats: &FeatureSet,
    discount: f64,
) -> Result<FeatureVectors> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut mean = FeatureVectors::zeros(feats);
    let w = 1.0 / data.len() as f64;
    for traj in data.trajectories() {
        mean.axpy(w, &traj_features(traj, feats, discount));
    }
    Ok(mean)
}

/// Rewards evaluated on every state, state-action pair and transition.
///
/// Entries may be `-inf` to forbid an event in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTables {
    num_states: usize,
    num_actions: usize,
    state: Vec<f64>,
    state_action: Vec<f64>,
    transition: Vec<f64>,
}

impl RewardTables {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            state: vec![0.0; num_states],
            state_action: vec![0.0; num_states * num_actions],
            transition: vec![0.0; num_states * num_actions * num_states],
        }
    }

    /// Evaluates `R_s = theta_s . phi_s` and friends on the full tables.
    pub fn from_params(feats: &FeatureSet, params: &RewardParams) -> Result<Self> {
        params.check_dims(feats)?;
        let (ns, na) = (feats.num_states(), feats.num_actions());
        let mut out = Self::zeros(ns, na);
        let (ds, dsa, dsas) = feats.dims();
        if ds > 0 {
            for s in 0..ns {
                out.state[s] = dot(feats.state(s), &params.theta_s);
            }
        }
        if dsa > 0 {
            for s in 0..ns {
                for a in 0..na {
                    out.state_action[s * na + a] = dot(feats.state_action(s, a), &params.theta_sa);
                }
            }
        }
        if dsas > 0 {
            for s in 0..ns {
                for a in 0..na {
                    for next in 0..ns {
                        out.transition[(s * na + a) * ns + next] =
                            dot(feats.transition(s, a, next), &params.theta_sas);
                    }
                }
            }
        }
        Ok(out)
    }

    /// State-only rewards.
    pub fn from_state_rewards(rewards: &[f64], num_actions: usize) -> Self {
        let mut out = Self::zeros(rewards.len(), num_actions);
        out.state.copy_from_slice(rewards);
        out
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn state(&self, s: usize) -> f64 {
        self.state[s]
    }

    #[inline]
    pub fn state_action(&self, s: usize, a: usize) -> f64 {
        self.state_action[s * self.num_actions + a]
    }

    #[inline]
    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn state_rewards(&self) -> &[f64] {
        &self.state
    }

    pub fn set_state(&mut self, s: usize, r: f64) {
        self.state[s] = r;
    }

    pub fn set_state_action(&mut self, s: usize, a: usize, r: f64) {
        self.state_action[s * self.num_actions + a] = r;
    }

    pub fn set_transition(&mut self, s: usize, a: usize, next: usize, r: f64) {
        self.transition[(s * self.num_actions + a) * self.num_states + next] = r;
    }

    /// Whether only the state table carries non-zero entries.
    pub fn is_state_only(&self) -> bool {
        self.state_action.iter().all(|&r| r == 0.0) && self.transition.iter().all(|&r| r == 0.0)
    }

    /// Discounted trajectory reward read from the tables. Returns `-inf` when
    /// the trajectory touches a forbidden entry.
    pub fn trajectory_reward(&self, traj: &Trajectory, discount: f64) -> f64 {
        let states = traj.states();
        let mut total = 0.0;
        let mut w = 1.0;
        for (t, &s) in states.iter().enumerate() {
            total += discounted(w, self.state(s));
            if let Some(&a) = traj.actions().get(t) {
                total += discounted(w, self.state_action(s, a));
                total += discounted(w, self.transition(s, a, states[t + 1]));
            }
            if total == LOG_ZERO {
                return LOG_ZERO;
            }
            w *= discount;
        }
        total
    }

    /// Sum of the per-step rewards in one transition `(s, a, s')`, excluding
    /// the state reward of `s'`.
    #[inline]
    pub fn step(&self, s: usize, a: usize, next: usize) -> f64 {
        let sa = self.state_action(s, a);
        let sas = self.transition(s, a, next);
        if sa == LOG_ZERO || sas == LOG_ZERO {
            LOG_ZERO
        } else {
            sa + sas
        }
    }
}

/// Reward tables extended over the padded state and action sets.
#[derive(Debug, Clone)]
pub struct PaddedRewardModel {
    pub tables: RewardTables,
    pub aux_state: usize,
    pub aux_action: usize,
}

/// Builds the padded reward over `S+ x A+ x S+`.
///
/// Auxiliary moves cost nothing, actions that were impossible in the original
/// MDP (acting after a terminal state, or any non-auxiliary action in `s_a`)
/// are forbidden with `-inf`, and every original entry is kept. Terminal
/// states keep their own state reward: it is collected once, at the step the
/// terminal state is visited, and the padded tail behind it contributes zero.
pub fn build_padded_reward(
    feats: &FeatureSet,
    params: &RewardParams,
    mdp: &Mdp,
) -> Result<PaddedRewardModel> {
    feats.check_mdp(mdp)?;
    let base = RewardTables::from_params(feats, params)?;
    Ok(pad_reward_tables(&base, mdp))
}

pub(crate) fn pad_reward_tables(base: &RewardTables, mdp: &Mdp) -> PaddedRewardModel {
    let (ns, na) = (base.num_states(), base.num_actions());
    let (aux_s, aux_a) = (ns, na);
    let mut t = RewardTables::zeros(ns + 1, na + 1);
    for s in 0..=ns {
        let original = s < ns && !mdp.is_terminal(s);
        t.set_state(s, if s < ns { base.state(s) } else { 0.0 });
        for a in 0..=na {
            let r_sa = if a == aux_a {
                0.0
            } else if original {
                base.state_action(s, a)
            } else {
                LOG_ZERO
            };
            t.set_state_action(s, a, r_sa);
            for next in 0..=ns {
                let r = if a == aux_a {
                    if next == aux_s {
                        0.0
                    } else {
                        LOG_ZERO
                    }
                } else if original && next < ns {
                    base.transition(s, a, next)
                } else {
                    LOG_ZERO
                };
                t.set_transition(s, a, next, r);
            }
        }
    }
    PaddedRewardModel {
        tables: t,
        aux_state: aux_s,
        aux_action: aux_a,
    }
}

impl PaddedRewardModel {
    /// Convenience for padding already-evaluated tables.
    pub fn from_tables(base: &RewardTables, padded: &PaddedMdp) -> Self {
        pad_reward_tables(base, padded.base())
    }
}
