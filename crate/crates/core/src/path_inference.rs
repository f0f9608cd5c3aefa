//! Inference with a learned reward: most likely constrained paths and
//! posteriors over destinations given a partial path.

use crate::error::{Error, Result};
use crate::logspace::{discounted, safe_ln, LogSumExp, LOG_ZERO};
use crate::mdp::{build_adjacency, Adjacency, Mdp, Trajectory};
use crate::reward::RewardTables;

fn check_distribution(what: &str, p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidDistribution(format!(
            "{what} has {} entries, expected {n}",
            p.len()
        )));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidDistribution(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("{what} sums to {sum}")));
    }
    Ok(())
}

/// Highest-weight path and its log weight
/// `log f(s_1) + log q'(tau) + R(tau) + log g(s_end)`, where `q'` is the
/// product of transition probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MlPath {
    pub traj: Trajectory,
    pub log_weight: f64,
}

fn tie_tol(v: f64) -> f64 {
    1e-12 * v.abs().max(1.0)
}

/// Max-product dynamic program over all paths of length `1..=L` whose start
/// is weighted by `f` and end by `g`.
///
/// Ties go to the shorter path, then to the lexicographically smaller state
/// sequence, then action sequence.
pub fn viterbi_ml_path(
    mdp: &Mdp,
    reward: &RewardTables,
    start: &[f64],
    end: &[f64],
    len: usize,
) -> Result<MlPath> {
    let ns = mdp.num_states();
    check_distribution("start constraint", start, ns)?;
    check_distribution("end constraint", end, ns)?;
    if len == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let adj = build_adjacency(mdp);
    let gamma = mdp.discount();
    let mut delta = vec![vec![LOG_ZERO; ns]; len];
    let mut back: Vec<Vec<Option<(usize, usize)>>> = vec![vec![None; ns]; len];
    for s in 0..ns {
        let lf = safe_ln(start[s]);
        if lf != LOG_ZERO {
            delta[0][s] = lf + reward.state(s);
        }
    }
    let prefix = |back: &Vec<Vec<Option<(usize, usize)>>>, t: usize, s: usize| -> (Vec<usize>, Vec<usize>) {
        let (mut states, mut actions) = (vec![s], Vec::new());
        let mut cur = s;
        for k in (1..=t).rev() {
            let (p, a) = back[k][cur].expect("back-pointer on a reachable node");
            states.push(p);
            actions.push(a);
            cur = p;
        }
        states.reverse();
        actions.reverse();
        (states, actions)
    };
    let mut w = 1.0;
    for t in 0..len - 1 {
        let w_next = w * gamma;
        for next in 0..ns {
            let r_next = discounted(w_next, reward.state(next));
            let mut best = LOG_ZERO;
            let mut arg: Option<(usize, usize)> = None;
            for e in &adj.parents[next] {
                let d = delta[t][e.state];
                if d == LOG_ZERO {
                    continue;
                }
                let v = d + e.log_prob + discounted(w, reward.step(e.state, e.action, next)) + r_next;
                if v == LOG_ZERO {
                    continue;
                }
                let better = match arg {
                    None => true,
                    Some(_) if v > best + tie_tol(best) => true,
                    Some((ps, pa)) if (v - best).abs() <= tie_tol(best) => {
                        let (s1, a1) = prefix(&back, t, e.state);
                        let (s0, a0) = prefix(&back, t, ps);
                        (s1, a1, e.action) < (s0, a0, pa)
                    }
                    _ => false,
                };
                if better {
                    best = v;
                    arg = Some((e.state, e.action));
                }
            }
            delta[t + 1][next] = best;
            back[t + 1][next] = arg;
        }
        w = w_next;
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for t in 0..len {
        for s in 0..ns {
            let lg = safe_ln(end[s]);
            if lg == LOG_ZERO || delta[t][s] == LOG_ZERO {
                continue;
            }
            let v = delta[t][s] + lg;
            let replace = match best {
                None => true,
                Some((b, bt, bs)) => {
                    if v > b + tie_tol(b) {
                        true
                    } else if (v - b).abs() <= tie_tol(b) && t == bt {
                        prefix(&back, t, s) < prefix(&back, bt, bs)
                    } else {
                        false
                    }
                }
            };
            if replace {
                best = Some((v, t, s));
            }
        }
    }
    let (log_weight, t, s) = best.ok_or(Error::NoFeasiblePath)?;
    let (states, actions) = prefix(&back, t, s);
    Ok(MlPath {
        traj: Trajectory::new(states, actions)?,
        log_weight,
    })
}

/// Forward messages from a single state at 1-based position `offset + 1`:
/// `out[k][s]` is the log weight of all paths with `k + 1` states that start
/// at `from` and end at `s`, rewards discounted as if the path started at
/// that position.
fn forward_from(
    mdp: &Mdp,
    adj: &Adjacency,
    reward: &RewardTables,
    from: usize,
    offset: usize,
    steps: usize,
) -> Vec<Vec<f64>> {
    let ns = mdp.num_states();
    let gamma = mdp.discount();
    let mut out = vec![vec![LOG_ZERO; ns]; steps];
    if steps == 0 {
        return out;
    }
    let mut w = gamma.powi(offset as i32);
    out[0][from] = discounted(w, reward.state(from));
    for k in 0..steps - 1 {
        let w_next = w * gamma;
        for next in 0..ns {
            let r_next = discounted(w_next, reward.state(next));
            let mut acc = LogSumExp::new();
            for e in &adj.parents[next] {
                let a = out[k][e.state];
                if a == LOG_ZERO {
                    continue;
                }
                acc.add(a + e.log_prob + discounted(w, reward.step(e.state, e.action, next)) + r_next);
            }
            out[k + 1][next] = acc.value();
        }
        w = w_next;
    }
    out
}

/// Posterior over the final state of a trajectory that began with
/// `observed_prefix`, with total length at most `L`:
///
/// `p(G | prefix) ~ p(G) * [sum over B -> G suffixes] / [sum over A -> G paths]`
///
/// where `A` and `B` are the first and last prefix states.
pub fn destination_posterior(
    mdp: &Mdp,
    reward: &RewardTables,
    observed_prefix: &Trajectory,
    prior: &[f64],
    len: usize,
) -> Result<Vec<f64>> {
    let ns = mdp.num_states();
    check_distribution("destination prior", prior, ns)?;
    let k = observed_prefix.len();
    if k > len {
        return Err(Error::TrajectoryTooLong { len: k, max: len });
    }
    let (a, b) = (observed_prefix.first(), observed_prefix.last());
    if a >= ns {
        return Err(Error::InvalidTrajectory(format!("state {a} out of range")));
    }
    let mut start = vec![0.0; ns];
    start[a] = 1.0;
    mdp.clone().with_start_dist(start)?.check_trajectory(observed_prefix)?;
    let adj = build_adjacency(mdp);
    let num = forward_from(mdp, &adj, reward, b, k - 1, len - k + 1);
    let den = forward_from(mdp, &adj, reward, a, 0, len);
    let sum_over = |m: &Vec<Vec<f64>>, s: usize| {
        let mut acc = LogSumExp::new();
        for row in m {
            acc.add(row[s]);
        }
        acc.value()
    };
    let mut log_post = vec![LOG_ZERO; ns];
    for g in 0..ns {
        let n = sum_over(&num, g);
        let lp = safe_ln(prior[g]);
        if n == LOG_ZERO || lp == LOG_ZERO {
            continue;
        }
        log_post[g] = lp + n - sum_over(&den, g);
    }
    let mut acc = LogSumExp::new();
    for &v in &log_post {
        acc.add(v);
    }
    let total = acc.value();
    if total == LOG_ZERO {
        return Err(Error::NoFeasiblePath);
    }
    Ok(log_post.iter().map(|v| (v - total).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::enumerate_ensemble_tables;
    use crate::envs::{make_linear_chain, make_random_mdp};

    fn delta(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn chain_ml_path() {
        let (mdp, _, _) = make_linear_chain(4).unwrap();
        let r = RewardTables::zeros(4, 1);
        let p = viterbi_ml_path(&mdp, &r, &delta(4, 0), &delta(4, 3), 4).unwrap();
        assert_eq!(p.traj.states(), &[0, 1, 2, 3]);
        assert_eq!(p.log_weight, 0.0);
        assert!(matches!(
            viterbi_ml_path(&mdp, &r, &delta(4, 0), &delta(4, 3), 3),
            Err(Error::NoFeasiblePath)
        ));
    }

    #[test]
    fn ml_path_matches_oracle() {
        for seed in 0..15 {
            let mdp = make_random_mdp(5, 2, 2, seed).unwrap().with_discount(0.9).unwrap();
            let rewards: Vec<f64> = (0..5).map(|s| ((s * 7 + seed as usize) % 5) as f64 * 0.3 - 0.6).collect();
            let r = RewardTables::from_state_rewards(&rewards, 2);
            let f = vec![0.2; 5];
            let g = vec![0.1, 0.4, 0.0, 0.3, 0.2];
            let ml = viterbi_ml_path(&mdp, &r, &f, &g, 4).unwrap();
            let constrained = mdp.clone().with_start_dist(f.clone()).unwrap();
            let e = enumerate_ensemble_tables(&constrained, &r, 4).unwrap();
            let best = e
                .paths
                .iter()
                .map(|(p, w)| w + safe_ln(g[p.last()]))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((ml.log_weight - best).abs() < 1e-10, "seed {seed}");
            let own = constrained.log_q(&ml.traj).unwrap() + r.trajectory_reward(&ml.traj, 0.9) + g[ml.traj.last()].ln();
            assert!((own - ml.log_weight).abs() < 1e-10);
        }
    }

    #[test]
    fn ties_prefer_short_then_lexicographic() {
        // Single absorbing-free loop: every state reaches every state with
        // zero reward, so the best path to state 0 from state 0 is length 1.
        let n = 3;
        let mut t = vec![0.0; n * n * n];
        for s in 0..n {
            for a in 0..n {
                t[(s * n + a) * n + a] = 1.0;
            }
        }
        let mdp = Mdp::new(n, n, delta(n, 0), t, 1.0, &[]).unwrap();
        let r = RewardTables::zeros(n, n);
        let p = viterbi_ml_path(&mdp, &r, &delta(n, 0), &delta(n, 0), 4).unwrap();
        assert_eq!(p.traj.states(), &[0]);
        let p = viterbi_ml_path(&mdp, &r, &delta(n, 0), &delta(n, 2), 4).unwrap();
        assert_eq!(p.traj.states(), &[0, 2]);
        let uniform_end = vec![1.0 / 3.0; 3];
        let p = viterbi_ml_path(&mdp, &r, &uniform_end, &uniform_end, 4).unwrap();
        assert_eq!(p.traj.states(), &[0]);
    }

    #[test]
    fn chain_posterior_support() {
        let (mdp, _, _) = make_linear_chain(4).unwrap();
        let r = RewardTables::zeros(4, 1);
        let prefix = Trajectory::new(vec![0, 1], vec![0]).unwrap();
        let post = destination_posterior(&mdp, &r, &prefix, &[0.25; 4], 4).unwrap();
        assert_eq!(post[0], 0.0);
        for p in &post[1..] {
            assert!((p - 1.0 / 3.0).abs() < 1e-14);
        }
        let skewed = [0.1, 0.2, 0.3, 0.4];
        let post = destination_posterior(&mdp, &r, &prefix, &skewed, 4).unwrap();
        for s in 1..4 {
            assert!((post[s] - skewed[s] / 0.9).abs() < 1e-14);
        }
        let bad = Trajectory::new(vec![0, 2], vec![0]).unwrap();
        assert!(destination_posterior(&mdp, &r, &bad, &[0.25; 4], 4).is_err());
    }

    #[test]
    fn posterior_matches_oracle() {
        for seed in 0..10 {
            let mdp = make_random_mdp(4, 2, 2, seed).unwrap().with_discount(0.8).unwrap();
            let r = RewardTables::from_state_rewards(&[0.5, -0.3, 1.0, 0.0], 2);
            let len = 5;
            let a = 0;
            let start = delta(4, a);
            let from_a = mdp.clone().with_start_dist(start).unwrap();
            let e = enumerate_ensemble_tables(&from_a, &r, len).unwrap();
            // Use the first enumerated two-state path as the observed prefix.
            let Some((prefix, _)) = e.paths.iter().find(|(p, _)| p.len() == 2) else {
                continue;
            };
            let prior = [0.1, 0.2, 0.3, 0.4];
            let mut num = [0.0; 4];
            let mut den = [0.0; 4];
            for (p, w) in &e.paths {
                den[p.last()] += w.exp();
                if p.states().starts_with(prefix.states()) && p.actions().starts_with(prefix.actions()) {
                    num[p.last()] += w.exp();
                }
            }
            let raw: Vec<f64> = (0..4)
                .map(|g| if num[g] > 0.0 { prior[g] * num[g] / den[g] } else { 0.0 })
                .collect();
            let total: f64 = raw.iter().sum();
            let post = destination_posterior(&mdp, &r, prefix, &prior, len).unwrap();
            for g in 0..4 {
                assert!((post[g] - raw[g] / total).abs() < 1e-9, "seed {seed} g {g}");
            }
            assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
