//! Reference implementations: brute-force path enumeration and the
//! approximate state-visitation recursions of Ziebart et al. (2008, 2010).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::MarginalSet;
use crate::learning::{optimize_objective, LearnResult, OptimizerConfig};
use crate::logspace::{LogSumExp, LOG_ZERO};
use crate::mdp::{Dataset, Mdp, Trajectory, SUPPORT_EPS};
use crate::reward::{
    empirical_expectations, traj_reward, FeatureSet, FeatureVectors, RewardParams, RewardTables,
};

/// Hard cap on the number of enumerated paths.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Every feasible trajectory with `1 <= |tau| <= L`, found by scanning `T`
/// directly rather than through the adjacency lists.
pub fn enumerate_paths(mdp: &Mdp, len: usize) -> Result<Vec<Trajectory>> {
    fn dfs(
        mdp: &Mdp,
        len: usize,
        states: &mut Vec<usize>,
        actions: &mut Vec<usize>,
        out: &mut Vec<Trajectory>,
    ) -> Result<()> {
        if out.len() >= ENUMERATION_LIMIT {
            return Err(Error::EnumerationLimit {
                limit: ENUMERATION_LIMIT,
            });
        }
        out.push(Trajectory::new(states.clone(), actions.clone())?);
        let s = *states.last().expect("non-empty prefix");
        if states.len() == len || mdp.is_terminal(s) {
            return Ok(());
        }
        for a in 0..mdp.num_actions() {
            for (next, &p) in mdp.row(s, a).iter().enumerate() {
                if p > SUPPORT_EPS {
                    states.push(next);
                    actions.push(a);
                    dfs(mdp, len, states, actions, out)?;
                    states.pop();
                    actions.pop();
                }
            }
        }
        Ok(())
    }

    let mut out = Vec::new();
    for (s, &p) in mdp.start_dist().iter().enumerate() {
        if p > 0.0 && len > 0 {
            dfs(mdp, len, &mut vec![s], &mut Vec::new(), &mut out)?;
        }
    }
    Ok(out)
}

/// All feasible paths together with their unnormalized log weights
/// `log q(tau) + R(tau)`.
#[derive(Debug, Clone)]
pub struct EnumeratedEnsemble {
    pub paths: Vec<(Trajectory, f64)>,
    pub log_z: f64,
    num_states: usize,
    num_actions: usize,
    len: usize,
}

impl EnumeratedEnsemble {
    pub fn from_paths(
        mdp: &Mdp,
        paths: &[Trajectory],
        len: usize,
        mut log_reward: impl FnMut(&Trajectory) -> f64,
    ) -> Self {
        let paths: Vec<(Trajectory, f64)> = paths
            .iter()
            .map(|p| {
                let w = mdp.log_q_unchecked(p) + log_reward(p);
                (p.clone(), w)
            })
            .collect();
        let mut acc = LogSumExp::new();
        for (_, w) in &paths {
            acc.add(*w);
        }
        Self {
            paths,
            log_z: acc.value(),
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            len,
        }
    }

    /// Keeps only the paths accepted by `keep` and renormalizes.
    pub fn restricted(&self, mut keep: impl FnMut(&Trajectory) -> bool) -> Self {
        let paths: Vec<(Trajectory, f64)> =
            self.paths.iter().filter(|(p, _)| keep(p)).cloned().collect();
        let mut acc = LogSumExp::new();
        for (_, w) in &paths {
            acc.add(*w);
        }
        Self {
            paths,
            log_z: acc.value(),
            ..*self
        }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.len
    }

    pub fn probability(&self, i: usize) -> f64 {
        (self.paths[i].1 - self.log_z).exp()
    }
}

pub fn enumerate_ensemble(
    mdp: &Mdp,
    feats: &FeatureSet,
    params: &RewardParams,
    len: usize,
) -> Result<EnumeratedEnsemble> {
    params.check_dims(feats)?;
    let paths = enumerate_paths(mdp, len)?;
    let gamma = mdp.discount();
    Ok(EnumeratedEnsemble::from_paths(mdp, &paths, len, |p| {
        traj_reward(p, params, feats, gamma)
    }))
}

/// Same as [`enumerate_ensemble`] but with rewards given as tables.
pub fn enumerate_ensemble_tables(
    mdp: &Mdp,
    reward: &RewardTables,
    len: usize,
) -> Result<EnumeratedEnsemble> {
    let paths = enumerate_paths(mdp, len)?;
    let gamma = mdp.discount();
    Ok(EnumeratedEnsemble::from_paths(mdp, &paths, len, |p| {
        reward.trajectory_reward(p, gamma)
    }))
}

pub fn oracle_marginals(ensemble: &EnumeratedEnsemble) -> MarginalSet {
    let mut out = MarginalSet::zeros(
        ensemble.num_states,
        ensemble.num_actions,
        ensemble.len,
        ensemble.log_z,
    );
    for (i, (path, _)) in ensemble.paths.iter().enumerate() {
        let p = ensemble.probability(i);
        let states = path.states();
        for (t, &s) in states.iter().enumerate() {
            out.add_state(t, s, p);
            if let Some(&a) = path.actions().get(t) {
                out.add_state_action(t, s, a, p);
                out.add_transition(t, s, a, states[t + 1], p);
            }
        }
    }
    out
}

/// The two published forms of the approximate forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZiebartVariant {
    #[serde(rename = "ziebart2008")]
    Z2008,
    #[serde(rename = "ziebart2010")]
    Z2010,
}

/// Visitation values `D_{s,t}` and the stationary local policy behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxMarginals {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    d: Vec<f64>,
    local_policy: Vec<f64>,
}

impl ApproxMarginals {
    /// `D_{s,t}` with 0-based `t`.
    pub fn d(&self, s: usize, t: usize) -> f64 {
        self.d[t * self.num_states + s]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn policy(&self, s: usize, a: usize) -> f64 {
        self.local_policy[s * self.num_actions + a]
    }

    /// `sum_t D_{s,t}`.
    pub fn visitation(&self) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| (0..self.horizon).map(|t| self.d(s, t)).sum())
            .collect()
    }

    /// `sum_t sum_s D_{s,t} phi_s(s)`; the action parts stay zero.
    pub fn expected_features(&self, feats: &FeatureSet) -> FeatureVectors {
        let mut out = FeatureVectors::zeros(feats);
        for (s, v) in self.visitation().into_iter().enumerate() {
            for (o, f) in out.s.iter_mut().zip(feats.state(s)) {
                *o += v * f;
            }
        }
        out
    }
}

/// Soft-value backward pass repeated `horizon` times, giving the local policy
/// `p(a|s) = Z_a / Z_s`.
///
/// `Z_a = sum_s' T(s'|s,a) e^{R(s)} Z_s'` and `Z_s = sum_a Z_a`, with `Z_s`
/// started at 1 on terminal states (on every state when there are none).
/// States without valid actions keep their starting value. The 2010 form
/// adds 1 to `Z_s` at terminal states on every pass. Terminal states get an
/// empty policy row.
fn local_policy(mdp: &Mdp, reward: &[f64], horizon: usize, variant: ZiebartVariant) -> Vec<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let episodic = mdp.is_episodic();
    let mut z_s: Vec<f64> = (0..ns)
        .map(|s| if !episodic || mdp.is_terminal(s) { 0.0 } else { LOG_ZERO })
        .collect();
    let mut z_a = vec![LOG_ZERO; ns * na];
    for _ in 0..horizon {
        for s in 0..ns {
            for a in 0..na {
                let mut acc = LogSumExp::new();
                for (next, &p) in mdp.row(s, a).iter().enumerate() {
                    if p > SUPPORT_EPS {
                        acc.add(p.ln() + reward[s] + z_s[next]);
                    }
                }
                z_a[s * na + a] = acc.value();
            }
        }
        let prev = z_s.clone();
        for s in 0..ns {
            if mdp.valid_actions(s).next().is_none() {
                z_s[s] = prev[s];
                continue;
            }
            let mut acc = LogSumExp::new();
            for a in 0..na {
                acc.add(z_a[s * na + a]);
            }
            if variant == ZiebartVariant::Z2010 && mdp.is_terminal(s) {
                acc.add(0.0);
            }
            z_s[s] = acc.value();
        }
    }
    let mut policy = vec![0.0; ns * na];
    for s in 0..ns {
        let valid: Vec<usize> = mdp.valid_actions(s).collect();
        // Trajectories end at terminal states, so no mass leaves them.
        if valid.is_empty() || mdp.is_terminal(s) {
            continue;
        }
        if z_s[s] == LOG_ZERO {
            for &a in &valid {
                policy[s * na + a] = 1.0 / valid.len() as f64;
            }
        } else {
            // Ratios are formed after shifting by the largest term so that
            // equal action values give exactly equal probabilities.
            let m = valid.iter().map(|&a| z_a[s * na + a]).fold(LOG_ZERO, f64::max);
            let w: Vec<f64> = valid.iter().map(|&a| (z_a[s * na + a] - m).exp()).collect();
            let denom: f64 = w.iter().sum();
            for (&a, wa) in valid.iter().zip(w) {
                policy[s * na + a] = wa / denom;
            }
        }
    }
    policy
}

fn approx_marginals(
    mdp: &Mdp,
    state_reward: &[f64],
    horizon: usize,
    variant: ZiebartVariant,
) -> Result<ApproxMarginals> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if state_reward.len() != ns {
        return Err(Error::DimensionMismatch {
            what: "state reward",
            expected: ns,
            got: state_reward.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let policy = local_policy(mdp, state_reward, horizon, variant);
    let mut d = vec![0.0; horizon * ns];
    d[..ns].copy_from_slice(mdp.start_dist());
    for t in 0..horizon - 1 {
        let (prev, cur) = d.split_at_mut((t + 1) * ns);
        let prev = &prev[t * ns..];
        let cur = &mut cur[..ns];
        match variant {
            // D_{s,t+1} = sum_a sum_s' D_{s',t} p(a|s) T(s'|s,a), as printed.
            ZiebartVariant::Z2008 => {
                for (s, slot) in cur.iter_mut().enumerate() {
                    let mut v = 0.0;
                    for a in 0..na {
                        let pa = policy[s * na + a];
                        if pa == 0.0 {
                            continue;
                        }
                        let row = mdp.row(s, a);
                        v += pa * row.iter().zip(prev.iter()).map(|(t, d)| t * d).sum::<f64>();
                    }
                    *slot = v;
                }
            }
            // D_{s',t+1} = sum_s sum_a D_{s,t} p(a|s) T(s'|s,a).
            ZiebartVariant::Z2010 => {
                for s in 0..ns {
                    if prev[s] == 0.0 {
                        continue;
                    }
                    for a in 0..na {
                        let w = prev[s] * policy[s * na + a];
                        if w == 0.0 {
                            continue;
                        }
                        for (slot, &p) in cur.iter_mut().zip(mdp.row(s, a)) {
                            *slot += w * p;
                        }
                    }
                }
            }
        }
    }
    Ok(ApproxMarginals {
        num_states: ns,
        num_actions: na,
        horizon,
        d,
        local_policy: policy,
    })
}

pub fn ziebart2008_marginals(mdp: &Mdp, state_reward: &[f64], horizon: usize) -> Result<ApproxMarginals> {
    approx_marginals(mdp, state_reward, horizon, ZiebartVariant::Z2008)
}

pub fn ziebart2010_marginals(mdp: &Mdp, state_reward: &[f64], horizon: usize) -> Result<ApproxMarginals> {
    approx_marginals(mdp, state_reward, horizon, ZiebartVariant::Z2010)
}

pub fn ziebart_marginals(
    mdp: &Mdp,
    state_reward: &[f64],
    horizon: usize,
    variant: ZiebartVariant,
) -> Result<ApproxMarginals> {
    approx_marginals(mdp, state_reward, horizon, variant)
}

/// Approximate ascent direction `E_D[phi] - sum_t sum_s D_{s,t} phi_s(s)`.
pub fn approx_gradient(
    mdp: &Mdp,
    feats: &FeatureSet,
    params: &RewardParams,
    empirical: &FeatureVectors,
    horizon: usize,
    variant: ZiebartVariant,
) -> Result<FeatureVectors> {
    if !feats.is_state_only() {
        return Err(Error::NotStateOnly);
    }
    let tables = RewardTables::from_params(feats, params)?;
    let d = approx_marginals(mdp, tables.state_rewards(), horizon, variant)?;
    Ok(empirical.sub(&d.expected_features(feats)))
}

/// Learns state-only reward parameters with the approximate expected
/// feature counts in place of the exact ones.
///
/// Both sides of the gradient are undiscounted. The exact log-likelihood of
/// the undiscounted model serves as the line-search merit, so the optimizer
/// stops once the approximate direction stops improving it.
pub fn approx_irl_learn(
    mdp: &Mdp,
    feats: &FeatureSet,
    data: &Dataset,
    variant: ZiebartVariant,
    config: &OptimizerConfig,
) -> Result<LearnResult> {
    if !feats.is_state_only() {
        return Err(Error::NotStateOnly);
    }
    data.check_feasible(mdp)?;
    let mdp = mdp.clone().with_discount(1.0)?;
    let horizon = data.max_len();
    let empirical = empirical_expectations(data, feats, 1.0)?;
    let model = crate::exact::ExactModel::new(&mdp, feats, horizon, crate::exact::Variant::Padded)?;
    optimize_objective(feats, config, |params| {
        let (ll, _, marginals) = model.objective(data, &empirical, params)?;
        let grad = approx_gradient(&mdp, feats, params, &empirical, horizon, variant)?;
        Ok((ll, grad, marginals.log_z))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_linear_chain, make_random_mdp, random_features, random_params};
    use crate::exact::{ExactModel, Variant};

    fn uniform_mdp(ns: usize, na: usize) -> Mdp {
        let t = vec![1.0 / ns as f64; ns * na * ns];
        Mdp::new(ns, na, vec![1.0 / ns as f64; ns], t, 1.0, &[]).unwrap()
    }

    #[test]
    fn chain_has_four_paths() {
        let (mdp, _, _) = make_linear_chain(4).unwrap();
        let paths = enumerate_paths(&mdp, 4).unwrap();
        assert_eq!(paths.len(), 4);
        for (i, p) in paths.iter().enumerate() {
            assert_eq!(p.states(), (0..=i).collect::<Vec<_>>().as_slice());
        }
        let (mdp2, _, _) = make_linear_chain(2).unwrap();
        assert_eq!(enumerate_paths(&mdp2, 5).unwrap().len(), 2);
    }

    #[test]
    fn single_absorbing_state() {
        let mdp = Mdp::new(1, 1, vec![1.0], vec![1.0], 1.0, &[]).unwrap();
        let paths = enumerate_paths(&mdp, 3).unwrap();
        let lens: Vec<usize> = paths.iter().map(Trajectory::len).collect();
        assert_eq!(lens, vec![1, 2, 3]);
    }

    #[test]
    fn enumeration_guard() {
        let mdp = uniform_mdp(6, 3);
        assert!(matches!(
            enumerate_paths(&mdp, 8),
            Err(Error::EnumerationLimit { .. })
        ));
    }

    #[test]
    fn ensemble_normalizes() {
        let mdp = make_random_mdp(4, 2, 2, 3).unwrap();
        let feats = random_features(4, 2, (2, 1, 1), 3);
        let params = random_params(&feats, 1.0, 4);
        let e = enumerate_ensemble(&mdp, &feats, &params, 4).unwrap();
        let total: f64 = (0..e.len()).map(|i| e.probability(i)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_chain_marginals() {
        let (mdp, feats, _) = make_linear_chain(4).unwrap();
        let e = enumerate_ensemble(&mdp, &feats, &RewardParams::zeros(&feats), 4).unwrap();
        let m = oracle_marginals(&e);
        assert!((m.state(1, 1) - 0.75).abs() < 1e-15);
        assert!((m.log_z - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn oracle_matches_exact_random() {
        for seed in 0..20 {
            let mdp = make_random_mdp(5, 2, 2, seed).unwrap().with_discount(0.8).unwrap();
            let feats = random_features(5, 2, (2, 2, 1), seed);
            let params = random_params(&feats, 1.5, seed + 7);
            let m = oracle_marginals(&enumerate_ensemble(&mdp, &feats, &params, 4).unwrap());
            let exact = ExactModel::new(&mdp, &feats, 4, Variant::Poly).unwrap().marginals(&params).unwrap();
            assert!(m.max_rel_diff(&exact) < 1e-9, "seed {seed}");
            for t in 0..3 {
                for s in 0..5 {
                    for a in 0..2 {
                        let sum: f64 = (0..5).map(|n| m.transition(t, s, a, n)).sum();
                        assert!((sum - m.state_action(t, s, a)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_mdp_visitation_is_uniform() {
        let mdp = uniform_mdp(3, 2);
        for reward in [[0.0, 1.0, 5.0], [-3.0, 0.0, 2.0]] {
            for variant in [ZiebartVariant::Z2008, ZiebartVariant::Z2010] {
                let d = ziebart_marginals(&mdp, &reward, 5, variant).unwrap();
                for t in 0..5 {
                    for s in 0..3 {
                        assert!((d.d(s, t) - 1.0 / 3.0).abs() < 1e-15, "{variant:?} D[{s}][{t}] = {}", d.d(s, t));
                    }
                }
            }
        }
    }

    #[test]
    fn z2010_follows_deterministic_chain() {
        let (mdp, _, _) = make_linear_chain(4).unwrap();
        let d = ziebart2010_marginals(&mdp, &[0.0; 4], 4).unwrap();
        for t in 0..4 {
            for s in 0..4 {
                assert_eq!(d.d(s, t), if s == t { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn approx_gradient_is_wrong_on_uniform_dynamics() {
        let mdp = uniform_mdp(3, 2);
        let feats = FeatureSet::state_indicators(3, 2);
        let params = RewardParams::new(vec![0.0, 1.0, 5.0], vec![], vec![]).unwrap();
        let data = Dataset::new(vec![Trajectory::new(vec![0, 1, 2], vec![0, 1]).unwrap()]).unwrap();
        let emp = empirical_expectations(&data, &feats, 1.0).unwrap();
        let model = ExactModel::new(&mdp, &feats, 3, Variant::Padded).unwrap();
        let (_, exact, _) = model.objective(&data, &emp, &params).unwrap();
        for variant in [ZiebartVariant::Z2008, ZiebartVariant::Z2010] {
            let approx = approx_gradient(&mdp, &feats, &params, &emp, 3, variant).unwrap();
            assert!(approx.sub(&exact).max_abs() > 0.1);
        }
    }

    #[test]
    fn approx_requires_state_only() {
        let mdp = uniform_mdp(3, 2);
        let feats = FeatureSet::state_action_indicators(3, 2);
        let params = RewardParams::zeros(&feats);
        let emp = FeatureVectors::zeros(&feats);
        assert!(matches!(
            approx_gradient(&mdp, &feats, &params, &emp, 3, ZiebartVariant::Z2008),
            Err(Error::NotStateOnly)
        ));
    }

    /// Complete deterministic graph (action `a` moves to state `a`) with a
    /// fixed start: the stationary local policy is exact, so the 2010
    /// visitation equals the fixed-length MaxEnt marginals.
    #[test]
    fn z2010_exact_on_complete_deterministic_fixed_length() {
        let n = 3;
        let mut t = vec![0.0; n * n * n];
        for s in 0..n {
            for a in 0..n {
                t[(s * n + a) * n + a] = 1.0;
            }
        }
        let mdp = Mdp::new(n, n, vec![1.0, 0.0, 0.0], t, 1.0, &[]).unwrap();
        let reward = RewardTables::from_state_rewards(&[0.3, -1.0, 2.0], n);
        let horizon = 4;
        let e = enumerate_ensemble_tables(&mdp, &reward, horizon).unwrap();
        let fixed = oracle_marginals(&e.restricted(|p| p.len() == horizon));
        let d = ziebart2010_marginals(&mdp, reward.state_rewards(), horizon).unwrap();
        for t in 0..horizon {
            for s in 0..n {
                assert!((d.d(s, t) - fixed.state(t, s)).abs() < 1e-12, "D[{s}][{t}]");
            }
        }
    }
}
