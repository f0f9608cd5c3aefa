//! Policies, value iteration, exact policy evaluation, the inverse learning
//! error and rollout sampling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{Dataset, Mdp, Trajectory};
use crate::reward::RewardTables;

/// Sweep tolerance of value iteration.
pub const VALUE_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 200_000;

/// Stochastic or deterministic policy as a dense `[s][a]` table. Rows of
/// terminal states and states without valid actions are all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    num_actions: usize,
    probs: Vec<f64>,
    deterministic: bool,
}

impl Policy {
    pub fn new(mdp: &Mdp, probs: Vec<f64>) -> Result<Self> {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        if probs.len() != ns * na {
            return Err(Error::DimensionMismatch {
                what: "policy table",
                expected: ns * na,
                got: probs.len(),
            });
        }
        let mut deterministic = true;
        for s in 0..ns {
            let row = &probs[s * na..(s + 1) * na];
            if mdp.is_dead_end(s) {
                if row.iter().any(|&p| p != 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "policy acts in state {s}, which has no successors"
                    )));
                }
                continue;
            }
            let mut sum = 0.0;
            for (a, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidDistribution(format!("pi({a}|{s}) = {p}")));
                }
                if p > 0.0 && !mdp.is_valid(s, a) {
                    return Err(Error::InvalidDistribution(format!(
                        "policy uses invalid action {a} in state {s}"
                    )));
                }
                if p != 0.0 && p != 1.0 {
                    deterministic = false;
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidDistribution(format!(
                    "policy row {s} sums to {sum}"
                )));
            }
        }
        Ok(Self {
            num_actions: na,
            probs,
            deterministic,
        })
    }

    /// One action per state, `None` where the state has no valid action.
    pub fn from_actions(mdp: &Mdp, actions: &[Option<usize>]) -> Result<Self> {
        let na = mdp.num_actions();
        let mut probs = vec![0.0; mdp.num_states() * na];
        for (s, a) in actions.iter().enumerate() {
            if let Some(a) = a {
                probs[s * na + a] = 1.0;
            }
        }
        Self::new(mdp, probs)
    }

    pub fn uniform(mdp: &Mdp) -> Self {
        let na = mdp.num_actions();
        let mut probs = vec![0.0; mdp.num_states() * na];
        for s in 0..mdp.num_states() {
            if mdp.is_dead_end(s) {
                continue;
            }
            let valid: Vec<usize> = mdp.valid_actions(s).collect();
            for &a in &valid {
                probs[s * na + a] = 1.0 / valid.len() as f64;
            }
        }
        Self {
            num_actions: na,
            probs,
            deterministic: false,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    /// The most likely action, lowest index first.
    pub fn action(&self, s: usize) -> Option<usize> {
        let row = self.row(s);
        let mut best: Option<usize> = None;
        for (a, &p) in row.iter().enumerate() {
            if p > 0.0 && best.is_none_or(|b| p > row[b]) {
                best = Some(a);
            }
        }
        best
    }

    pub fn actions(&self) -> Vec<Option<usize>> {
        (0..self.probs.len() / self.num_actions.max(1)).map(|s| self.action(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub v: Vec<f64>,
}

/// `R(s, a) + sum_s' T(s'|s,a) (R(s,a,s') + gamma V(s'))`.
fn action_value(mdp: &Mdp, reward: &RewardTables, v: &[f64], s: usize, a: usize) -> f64 {
    let gamma = mdp.discount();
    let mut q = reward.state_action(s, a);
    for (next, &p) in mdp.row(s, a).iter().enumerate() {
        if p > 0.0 {
            q += p * (reward.transition(s, a, next) + gamma * v[next]);
        }
    }
    q
}

fn check_reward(mdp: &Mdp, reward: &RewardTables) -> Result<()> {
    if reward.num_states() != mdp.num_states() || reward.num_actions() != mdp.num_actions() {
        return Err(Error::DimensionMismatch {
            what: "reward tables",
            expected: mdp.num_states(),
            got: reward.num_states(),
        });
    }
    Ok(())
}

/// Greedy action with ties (relative `1e-9`) going to the lowest index.
fn greedy(mdp: &Mdp, reward: &RewardTables, v: &[f64], s: usize) -> Option<(usize, f64)> {
    let qs: Vec<(usize, f64)> = mdp
        .valid_actions(s)
        .map(|a| (a, action_value(mdp, reward, v, s, a)))
        .collect();
    let max = qs.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-9 * max.abs().max(1.0);
    qs.into_iter().find(|q| q.1 >= max - tol).map(|(a, _)| (a, max))
}

/// Bellman-optimal values and the greedy deterministic policy.
pub fn value_iteration(mdp: &Mdp, reward: &RewardTables) -> Result<(ValueFunction, Policy)> {
    check_reward(mdp, reward)?;
    let ns = mdp.num_states();
    let mut v: Vec<f64> = (0..ns).map(|s| reward.state(s)).collect();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0.0f64;
        for s in 0..ns {
            if mdp.is_dead_end(s) {
                continue;
            }
            let best = greedy(mdp, reward, &v, s).map_or(0.0, |(_, q)| q);
            let new = reward.state(s) + best;
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if !delta.is_finite() {
            break;
        }
        if delta < VALUE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Divergence { sweeps: MAX_SWEEPS });
    }
    let actions: Vec<Option<usize>> = (0..ns)
        .map(|s| {
            if mdp.is_dead_end(s) {
                None
            } else {
                greedy(mdp, reward, &v, s).map(|(a, _)| a)
            }
        })
        .collect();
    Ok((ValueFunction { v }, Policy::from_actions(mdp, &actions)?))
}

/// Solves `(I - gamma P_pi) V = r_pi` directly.
pub fn policy_value(mdp: &Mdp, reward: &RewardTables, policy: &Policy) -> Result<ValueFunction> {
    check_reward(mdp, reward)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if policy.num_actions != na || policy.probs.len() != ns * na {
        return Err(Error::DimensionMismatch {
            what: "policy table",
            expected: ns * na,
            got: policy.probs.len(),
        });
    }
    let gamma = mdp.discount();
    let mut a_mat = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        b[s] = reward.state(s);
        if mdp.is_dead_end(s) {
            continue;
        }
        for a in 0..na {
            let pa = policy.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            b[s] += pa * reward.state_action(s, a);
            for (next, &p) in mdp.row(s, a).iter().enumerate() {
                if p > 0.0 {
                    b[s] += pa * p * reward.transition(s, a, next);
                    a_mat[(s, next)] -= gamma * pa * p;
                }
            }
        }
    }
    let lu = a_mat.clone().lu();
    let mut x = lu.solve(&b).ok_or(Error::SingularPolicy)?;
    // One step of iterative refinement.
    let r = &b - &a_mat * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let residual = (&b - &a_mat * &x).amax();
    let scale = b.amax().max(1.0) * x.amax().max(1.0);
    if !x.iter().all(|v| v.is_finite()) || residual > 1e-10 * scale {
        return Err(Error::SingularPolicy);
    }
    Ok(ValueFunction { v: x.iter().copied().collect() })
}

/// Inverse learning error `|| v(pi*_GT) - v(pi*_L) ||_1`, both policies
/// evaluated under the ground-truth reward.
pub fn ile(mdp: &Mdp, reward_gt: &RewardTables, reward_learned: &RewardTables) -> Result<f64> {
    let (_, pi_gt) = value_iteration(mdp, reward_gt)?;
    let (_, pi_l) = value_iteration(mdp, reward_learned)?;
    let v_gt = policy_value(mdp, reward_gt, &pi_gt)?;
    let v_l = policy_value(mdp, reward_gt, &pi_l)?;
    Ok(v_gt.v.iter().zip(&v_l.v).map(|(a, b)| (a - b).abs()).sum())
}

/// `n` rollouts of `policy`; each stops at a state without successors or at
/// `max_len` states. Rollout `i` draws from its own ChaCha stream.
pub fn sample_rollouts(
    mdp: &Mdp,
    policy: &Policy,
    n: usize,
    max_len: usize,
    seed: u64,
) -> Result<Dataset> {
    if max_len == 0 {
        return Err(Error::InvalidConfig("max_len must be at least 1".into()));
    }
    let trajs: Result<Vec<Trajectory>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut states = vec![mdp.sample_start(&mut rng)];
            let mut actions = Vec::new();
            while states.len() < max_len {
                let s = *states.last().expect("non-empty");
                if mdp.is_dead_end(s) {
                    break;
                }
                let a = Mdp::sample_index(policy.row(s), &mut rng);
                actions.push(a);
                states.push(mdp.sample_next(s, a, &mut rng));
            }
            Trajectory::new(states, actions)
        })
        .collect();
    Dataset::new(trajs?)
}

/// Expected number of visits to each state within `max_len` steps under
/// `policy`, by propagating the state distribution.
pub fn occupancy(mdp: &Mdp, policy: &Policy, max_len: usize) -> Vec<f64> {
    let ns = mdp.num_states();
    let mut d = mdp.start_dist().to_vec();
    let mut total = d.clone();
    for _ in 1..max_len {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if d[s] == 0.0 || mdp.is_dead_end(s) {
                continue;
            }
            for a in 0..mdp.num_actions() {
                let w = d[s] * policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for (n, &p) in next.iter_mut().zip(mdp.row(s, a)) {
                    *n += w * p;
                }
            }
        }
        for (t, n) in total.iter_mut().zip(&next) {
            *t += n;
        }
        d = next;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_linear_chain, make_nchain, make_random_mdp, GridSpec, make_gridworld};

    #[test]
    fn single_state_geometric_series() {
        let mdp = Mdp::new(1, 1, vec![1.0], vec![1.0], 0.9, &[]).unwrap();
        let r = RewardTables::from_state_rewards(&[1.0], 1);
        let (v, _) = value_iteration(&mdp, &r).unwrap();
        assert!((v.v[0] - 10.0).abs() < 1e-8);
    }

    #[test]
    fn chain_value_and_policy() {
        let (mdp, _, _) = make_linear_chain(4).unwrap();
        let r = RewardTables::from_state_rewards(&[0.0, 0.0, 0.0, 1.0], 1);
        let (v, pi) = value_iteration(&mdp, &r).unwrap();
        assert_eq!(v.v, vec![1.0; 4]);
        assert_eq!(pi.actions(), vec![Some(0), Some(0), Some(0), None]);
        let u = policy_value(&mdp, &r, &Policy::uniform(&mdp)).unwrap();
        for x in u.v {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bellman_residual_and_policy_consistency() {
        for seed in 0..5 {
            let mdp = make_random_mdp(6, 3, 3, seed).unwrap().with_discount(0.9).unwrap();
            let r = RewardTables::from_state_rewards(&[0.3, -1.0, 2.0, 0.0, 0.5, -0.2], 3);
            let (v, pi) = value_iteration(&mdp, &r).unwrap();
            for s in 0..6 {
                let best = (0..3)
                    .map(|a| action_value(&mdp, &r, &v.v, s, a))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((r.state(s) + best - v.v[s]).abs() < 1e-9);
            }
            let pv = policy_value(&mdp, &r, &pi).unwrap();
            for (a, b) in pv.v.iter().zip(&v.v) {
                assert!((a - b).abs() < 1e-8);
            }
            let u = policy_value(&mdp, &r, &Policy::uniform(&mdp)).unwrap();
            for (a, b) in u.v.iter().zip(&v.v) {
                assert!(*a <= b + 1e-9);
            }
        }
    }

    #[test]
    fn ile_zero_for_same_and_affine_rewards() {
        let spec = GridSpec::frozen_lake_4x4(0.2);
        let (mdp, feats, gt) = make_gridworld(&spec).unwrap();
        let r = RewardTables::from_params(&feats, &gt).unwrap();
        assert_eq!(ile(&mdp, &r, &r).unwrap(), 0.0);
        let scaled: Vec<f64> = r.state_rewards().iter().map(|x| 2.0 * x).collect();
        let scaled = RewardTables::from_state_rewards(&scaled, 4);
        assert_eq!(ile(&mdp, &r, &scaled).unwrap(), 0.0);
        // A constant shift is policy-invariant on a continuing MDP.
        let (mdp, feats, gt) = make_nchain(10, 0.2).unwrap();
        let r = RewardTables::from_params(&feats, &gt).unwrap();
        let mut shifted = r.clone();
        for s in 0..10 {
            for a in 0..2 {
                shifted.set_state_action(s, a, 2.0 * r.state_action(s, a) + 3.0);
            }
        }
        assert_eq!(ile(&mdp, &r, &shifted).unwrap(), 0.0);
    }

    #[test]
    fn ile_positive_for_negated_reward() {
        // A rewarding free cell on the left and the goal on the right.
        let spec = GridSpec::from_map(&["FSFG"], 0.0).unwrap();
        let (mdp, _, _) = make_gridworld(&spec).unwrap();
        let mut gt = vec![0.0; 4];
        gt[0] = 0.5;
        gt[3] = 1.0;
        let gt = RewardTables::from_state_rewards(&gt, 4);
        let neg = RewardTables::from_state_rewards(
            &gt.state_rewards().iter().map(|x| -x).collect::<Vec<_>>(),
            4,
        );
        assert!(ile(&mdp, &gt, &neg).unwrap() > 0.0);
    }

    #[test]
    fn nchain_optimal_policy() {
        // Without slip the far reward dominates everywhere.
        let (mdp, feats, params) = make_nchain(10, 0.0).unwrap();
        let r = RewardTables::from_params(&feats, &params).unwrap();
        let (_, pi) = value_iteration(&mdp, &r).unwrap();
        assert!(pi.actions().iter().all(|a| *a == Some(0)), "{:?}", pi.actions());
        // With slip 0.2 the first three states prefer the small reward. Frozen
        // from an independent value iteration; Q(0) = (30.9790, 32.1556).
        let (mdp, feats, params) = make_nchain(10, 0.2).unwrap();
        let r = RewardTables::from_params(&feats, &params).unwrap();
        let (v, pi) = value_iteration(&mdp, &r).unwrap();
        let expected: Vec<Option<usize>> = (0..10).map(|s| Some(if s < 3 { 1 } else { 0 })).collect();
        assert_eq!(pi.actions(), expected);
        assert!((v.v[0] - 32.1556195).abs() < 1e-6);
        assert!((v.v[9] - 60.4565321).abs() < 1e-6);
    }

    #[test]
    fn deterministic_rollouts_identical() {
        let (mdp, _, _) = make_linear_chain(5).unwrap();
        let pi = Policy::uniform(&mdp);
        let data = sample_rollouts(&mdp, &pi, 10, 20, 1).unwrap();
        for t in data.trajectories() {
            assert_eq!(t, &data[0]);
            assert_eq!(t.len(), 5);
        }
    }

    #[test]
    fn continuing_rollouts_truncate() {
        let (mdp, _, _) = make_nchain(5, 0.2).unwrap();
        let data = sample_rollouts(&mdp, &Policy::uniform(&mdp), 20, 7, 3).unwrap();
        assert!(data.trajectories().iter().all(|t| t.len() == 7));
    }

    #[test]
    fn rollout_visits_match_occupancy() {
        let mdp = make_random_mdp(4, 2, 2, 11).unwrap().with_discount(0.9).unwrap();
        let pi = Policy::uniform(&mdp);
        let n = 100_000;
        let data = sample_rollouts(&mdp, &pi, n, 6, 5).unwrap();
        let mut counts = vec![0.0; 4];
        for t in data.trajectories() {
            for &s in t.states() {
                counts[s] += 1.0;
            }
        }
        let occ = occupancy(&mdp, &pi, 6);
        for s in 0..4 {
            let mean = counts[s] / n as f64;
            // Visits per rollout are bounded by 6, so the variance is at most 36/4.
            let se = (9.0 / n as f64).sqrt();
            assert!((mean - occ[s]).abs() < 3.0 * se, "state {s}: {mean} vs {}", occ[s]);
        }
    }

    #[test]
    fn policy_validation() {
        let (mdp, _, _) = make_linear_chain(3).unwrap();
        assert!(Policy::new(&mdp, vec![1.0, 1.0, 1.0]).is_err());
        assert!(Policy::new(&mdp, vec![0.5, 1.0, 0.0]).is_err());
        assert!(Policy::new(&mdp, vec![1.0, 1.0, 0.0]).unwrap().is_deterministic());
    }

    #[test]
    fn undiscounted_improper_diverges() {
        let mdp = Mdp::new(1, 1, vec![1.0], vec![1.0], 1.0, &[]).unwrap();
        let r = RewardTables::from_state_rewards(&[1.0], 1);
        assert!(matches!(value_iteration(&mdp, &r), Err(Error::Divergence { .. })));
        assert!(matches!(
            policy_value(&mdp, &r, &Policy::uniform(&mdp)),
            Err(Error::SingularPolicy)
        ));
    }
}
