//! Exact forward-backward inference for the maximum-entropy trajectory
//! distribution `p(tau) = q(tau) exp(R(tau)) / Z`.
//!
//! Two equivalent pipelines are provided. The polynomial one keeps a backward
//! message per total path length (`O(|S|^2 |A| L^2)`); the padded one runs on
//! the MDP augmented with an absorbing auxiliary state so that every path has
//! length exactly `L`, which needs a single backward sweep (`O(|S|^2 |A| L)`).
//!
//! Time steps are 0-based in code: step `t` is the `(t+1)`-th state of a
//! trajectory and carries discount weight `gamma^t`. All values are natural
//! logs.

use crate::error::{Error, Result};
use crate::logspace::{discounted, safe_ln, LogSumExp, LOG_ZERO};
use crate::mdp::{build_adjacency, pad_mdp, Adjacency, Dataset, Mdp, PaddedMdp};
use crate::reward::{
    traj_reward, FeatureSet, FeatureVectors, PaddedRewardModel, RewardParams, RewardTables,
};

/// Powers `gamma^0 .. gamma^n`.
fn discount_powers(discount: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut w = 1.0;
    for _ in 0..=n {
        out.push(w);
        w *= discount;
    }
    out
}

/// Forward messages `log alpha_t(s)`: total weight of length-`t+1` prefixes
/// ending in `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogAlpha {
    num_states: usize,
    len: usize,
    values: Vec<f64>,
}

impl LogAlpha {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.num_states + s]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.num_states..(t + 1) * self.num_states]
    }

    /// Drops trailing states (the auxiliary state of a padded MDP).
    fn truncate_states(&self, num_states: usize) -> Self {
        let values = (0..self.len)
            .flat_map(|t| self.row(t)[..num_states].iter().copied())
            .collect();
        Self {
            num_states,
            len: self.len,
            values,
        }
    }
}

/// Backward messages `log beta_{l,k}(s)` for every total length `l` and
/// suffix length `k <= l`, both 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBetaPoly {
    num_states: usize,
    len: usize,
    values: Vec<f64>,
}

impl LogBetaPoly {
    #[inline]
    fn offset(l: usize, k: usize) -> usize {
        (l - 1) * l / 2 + (k - 1)
    }

    /// `log beta_{l,k}(s)` with `1 <= k <= l <= L`.
    #[inline]
    pub fn get(&self, l: usize, k: usize, s: usize) -> f64 {
        debug_assert!(k >= 1 && k <= l && l <= self.len);
        self.values[Self::offset(l, k) * self.num_states + s]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Padded backward messages `log beta_k(s)` over `S+`, `k` 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LogBetaPadded {
    num_states: usize,
    len: usize,
    values: Vec<f64>,
}

impl LogBetaPadded {
    #[inline]
    pub fn get(&self, k: usize, s: usize) -> f64 {
        self.values[(k - 1) * self.num_states + s]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

pub fn forward_messages(
    mdp: &Mdp,
    adjacency: &Adjacency,
    reward: &RewardTables,
    len: usize,
) -> LogAlpha {
    let ns = mdp.num_states();
    let gamma = discount_powers(mdp.discount(), len);
    let mut values = vec![LOG_ZERO; len * ns];
    for s in 0..ns {
        let p0 = safe_ln(mdp.start_dist()[s]);
        values[s] = if p0 == LOG_ZERO {
            LOG_ZERO
        } else {
            p0 + reward.state(s)
        };
    }
    for t in 0..len.saturating_sub(1) {
        let (prev, cur) = values.split_at_mut((t + 1) * ns);
        let prev = &prev[t * ns..];
        for (next, slot) in cur[..ns].iter_mut().enumerate() {
            let r_next = discounted(gamma[t + 1], reward.state(next));
            let mut acc = LogSumExp::new();
            for e in &adjacency.parents[next] {
                let a = prev[e.state];
                if a == LOG_ZERO {
                    continue;
                }
                acc.add(a + e.log_prob + discounted(gamma[t], reward.step(e.state, e.action, next)) + r_next);
            }
            *slot = acc.value();
        }
    }
    LogAlpha {
        num_states: ns,
        len,
        values,
    }
}

pub fn backward_messages_poly(
    mdp: &Mdp,
    adjacency: &Adjacency,
    reward: &RewardTables,
    len: usize,
) -> LogBetaPoly {
    let ns = mdp.num_states();
    let gamma = discount_powers(mdp.discount(), len);
    let mut values = vec![LOG_ZERO; len * (len + 1) / 2 * ns];
    for l in 1..=len {
        let base = LogBetaPoly::offset(l, 1) * ns;
        for s in 0..ns {
            values[base + s] = discounted(gamma[l - 1], reward.state(s));
        }
        for k in 1..l {
            let w = gamma[l - k - 1];
            let prev = LogBetaPoly::offset(l, k) * ns;
            let cur = LogBetaPoly::offset(l, k + 1) * ns;
            for s in 0..ns {
                let r_s = reward.state(s);
                let mut acc = LogSumExp::new();
                for e in &adjacency.children[s] {
                    let b = values[prev + e.next];
                    if b == LOG_ZERO {
                        continue;
                    }
                    let step = reward.step(s, e.action, e.next);
                    let r = if step == LOG_ZERO { LOG_ZERO } else { r_s + step };
                    acc.add(e.log_prob + discounted(w, r) + b);
                }
                values[cur + s] = acc.value();
            }
        }
    }
    LogBetaPoly {
        num_states: ns,
        len,
        values,
    }
}

pub fn backward_messages_padded(
    padded: &PaddedMdp,
    reward: &PaddedRewardModel,
    len: usize,
) -> LogBetaPadded {
    let mdp = padded.mdp();
    let adjacency = padded.adjacency();
    let tables = &reward.tables;
    let ns = mdp.num_states();
    let gamma = discount_powers(mdp.discount(), len);
    let mut values = vec![LOG_ZERO; len * ns];
    for s in 0..ns {
        values[s] = discounted(gamma[len - 1], tables.state(s));
    }
    for k in 1..len {
        let w = gamma[len - k - 1];
        let (prev, cur) = values.split_at_mut(k * ns);
        let prev = &prev[(k - 1) * ns..];
        for (s, slot) in cur[..ns].iter_mut().enumerate() {
            let r_s = tables.state(s);
            let mut acc = LogSumExp::new();
            for e in &adjacency.children[s] {
                let b = prev[e.next];
                if b == LOG_ZERO {
                    continue;
                }
                let step = tables.step(s, e.action, e.next);
                let r = if step == LOG_ZERO { LOG_ZERO } else { r_s + step };
                acc.add(e.log_prob + discounted(w, r) + b);
            }
            *slot = acc.value();
        }
    }
    LogBetaPadded {
        num_states: ns,
        len,
        values,
    }
}

/// `log Z = logsumexp_{t, s} log alpha_t(s)` over the states held by `alpha`.
pub fn partition(alpha: &LogAlpha) -> f64 {
    let mut acc = LogSumExp::new();
    for &v in &alpha.values {
        acc.add(v);
    }
    acc.value()
}

/// Per-step marginals of the trajectory distribution plus `log Z`.
///
/// `p_s` has `L` steps; `p_sa` and `p_sas` have `L - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    pub log_z: f64,
    num_states: usize,
    num_actions: usize,
    len: usize,
    p_s: Vec<f64>,
    p_sa: Vec<f64>,
    p_sas: Vec<f64>,
}

impl MarginalSet {
    pub(crate) fn zeros(num_states: usize, num_actions: usize, len: usize, log_z: f64) -> Self {
        let steps = len.saturating_sub(1);
        Self {
            log_z,
            num_states,
            num_actions,
            len,
            p_s: vec![0.0; len * num_states],
            p_sa: vec![0.0; steps * num_states * num_actions],
            p_sas: vec![0.0; steps * num_states * num_actions * num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Horizon `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn i_sa(&self, t: usize, s: usize, a: usize) -> usize {
        (t * self.num_states + s) * self.num_actions + a
    }

    #[inline]
    fn i_sas(&self, t: usize, s: usize, a: usize, next: usize) -> usize {
        self.i_sa(t, s, a) * self.num_states + next
    }

    /// Probability that the `(t+1)`-th state is `s`.
    #[inline]
    pub fn state(&self, t: usize, s: usize) -> f64 {
        self.p_s[t * self.num_states + s]
    }

    #[inline]
    pub fn state_action(&self, t: usize, s: usize, a: usize) -> f64 {
        self.p_sa[self.i_sa(t, s, a)]
    }

    #[inline]
    pub fn transition(&self, t: usize, s: usize, a: usize, next: usize) -> f64 {
        self.p_sas[self.i_sas(t, s, a, next)]
    }

    pub(crate) fn add_state(&mut self, t: usize, s: usize, p: f64) {
        self.p_s[t * self.num_states + s] += p;
    }

    pub(crate) fn add_state_action(&mut self, t: usize, s: usize, a: usize, p: f64) {
        let i = self.i_sa(t, s, a);
        self.p_sa[i] += p;
    }

    pub(crate) fn add_transition(&mut self, t: usize, s: usize, a: usize, next: usize, p: f64) {
        let i = self.i_sas(t, s, a, next);
        self.p_sas[i] += p;
    }

    pub fn state_slice(&self) -> &[f64] {
        &self.p_s
    }

    pub fn state_action_slice(&self) -> &[f64] {
        &self.p_sa
    }

    pub fn transition_slice(&self) -> &[f64] {
        &self.p_sas
    }

    /// Largest absolute difference over `log Z` and every marginal entry.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(
            (self.num_states, self.num_actions, self.len),
            (other.num_states, other.num_actions, other.len),
            "marginal shapes differ"
        );
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        (self.log_z - other.log_z)
            .abs()
            .max(d(&self.p_s, &other.p_s))
            .max(d(&self.p_sa, &other.p_sa))
            .max(d(&self.p_sas, &other.p_sas))
    }

    /// Largest relative difference, with an absolute floor of one for
    /// entries smaller than one.
    pub fn max_rel_diff(&self, other: &Self) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / x.abs().max(y.abs()).max(1.0)))
        };
        ((self.log_z - other.log_z).abs() / self.log_z.abs().max(1.0))
            .max(d(&self.p_s, &other.p_s))
            .max(d(&self.p_sa, &other.p_sa))
            .max(d(&self.p_sas, &other.p_sas))
    }

    /// Discounted model feature expectations
    /// `sum_t gamma^t sum_x p_t(x) phi(x)` for each reward type.
    pub fn feature_expectations(&self, feats: &FeatureSet, discount: f64) -> FeatureVectors {
        let (ns, na) = (self.num_states, self.num_actions);
        let gamma = discount_powers(discount, self.len);
        let (ds, dsa, dsas) = feats.dims();
        let mut out = FeatureVectors::zeros(feats);
        if ds > 0 {
            for s in 0..ns {
                let w: f64 = (0..self.len).map(|t| gamma[t] * self.state(t, s)).sum();
                if w != 0.0 {
                    for (o, f) in out.s.iter_mut().zip(feats.state(s)) {
                        *o += w * f;
                    }
                }
            }
        }
        let steps = self.len.saturating_sub(1);
        if dsa > 0 {
            for s in 0..ns {
                for a in 0..na {
                    let w: f64 = (0..steps).map(|t| gamma[t] * self.state_action(t, s, a)).sum();
                    if w != 0.0 {
                        for (o, f) in out.sa.iter_mut().zip(feats.state_action(s, a)) {
                            *o += w * f;
                        }
                    }
                }
            }
        }
        if dsas > 0 {
            for s in 0..ns {
                for a in 0..na {
                    for next in 0..ns {
                        let w: f64 = (0..steps)
                            .map(|t| gamma[t] * self.transition(t, s, a, next))
                            .sum();
                        if w != 0.0 {
                            for (o, f) in out.sas.iter_mut().zip(feats.transition(s, a, next)) {
                                *o += w * f;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// `logsumexp_{l=t+1..L} log beta_{l, l-t}(s)` for 1-based `t = 1..L-1`,
/// i.e. the weight of all suffixes that start at step `t+1`.
fn suffix_sums(beta: &LogBetaPoly) -> Vec<f64> {
    let (ns, len) = (beta.num_states, beta.len);
    let mut out = vec![LOG_ZERO; len.saturating_sub(1) * ns];
    for t in 1..len {
        for s in 0..ns {
            let mut acc = LogSumExp::new();
            for l in t + 1..=len {
                acc.add(beta.get(l, l - t, s));
            }
            out[(t - 1) * ns + s] = acc.value();
        }
    }
    out
}

pub fn marginals_poly(
    alpha: &LogAlpha,
    beta: &LogBetaPoly,
    mdp: &Mdp,
    adjacency: &Adjacency,
    reward: &RewardTables,
    log_z: f64,
) -> MarginalSet {
    let (ns, na, len) = (mdp.num_states(), mdp.num_actions(), alpha.len);
    let gamma = discount_powers(mdp.discount(), len);
    let suffix = suffix_sums(beta);
    let mut out = MarginalSet::zeros(ns, na, len, log_z);
    for t in 0..len {
        for s in 0..ns {
            let a_ts = alpha.get(t, s);
            if a_ts == LOG_ZERO {
                continue;
            }
            // The trajectory may end here.
            let mut state_acc = LogSumExp::new();
            state_acc.add(a_ts);
            if t + 1 < len {
                let mut sa_acc = vec![LogSumExp::new(); na];
                for e in &adjacency.children[s] {
                    let sfx = suffix[t * ns + e.next];
                    if sfx == LOG_ZERO {
                        continue;
                    }
                    let v = a_ts
                        + e.log_prob
                        + discounted(gamma[t], reward.step(s, e.action, e.next))
                        + sfx;
                    if v == LOG_ZERO {
                        continue;
                    }
                    state_acc.add(v);
                    sa_acc[e.action].add(v);
                    out.add_transition(t, s, e.action, e.next, (v - log_z).exp());
                }
                for (a, acc) in sa_acc.iter().enumerate() {
                    let v = acc.value();
                    if v != LOG_ZERO {
                        out.add_state_action(t, s, a, (v - log_z).exp());
                    }
                }
            }
            out.add_state(t, s, (state_acc.value() - log_z).exp());
        }
    }
    out
}

pub fn marginals_padded(
    alpha: &LogAlpha,
    beta: &LogBetaPadded,
    padded: &PaddedMdp,
    reward: &PaddedRewardModel,
    log_z: f64,
) -> MarginalSet {
    let base = padded.base();
    let (ns, na, len) = (base.num_states(), base.num_actions(), alpha.len);
    let adjacency = padded.adjacency();
    let tables = &reward.tables;
    let gamma = discount_powers(base.discount(), len);
    let mut out = MarginalSet::zeros(ns, na, len, log_z);
    for t in 0..len {
        for s in 0..ns {
            let a_ts = alpha.get(t, s);
            if a_ts == LOG_ZERO {
                continue;
            }
            if t + 1 == len {
                out.add_state(t, s, (a_ts - log_z).exp());
                continue;
            }
            let k = len - t - 1;
            let mut state_acc = LogSumExp::new();
            let mut sa_acc = vec![LogSumExp::new(); na];
            for e in &adjacency.children[s] {
                let b = beta.get(k, e.next);
                if b == LOG_ZERO {
                    continue;
                }
                let v = a_ts + e.log_prob + discounted(gamma[t], tables.step(s, e.action, e.next)) + b;
                if v == LOG_ZERO {
                    continue;
                }
                // Auxiliary moves count toward "the state is visited" only.
                state_acc.add(v);
                if e.action < na && e.next < ns {
                    sa_acc[e.action].add(v);
                    out.add_transition(t, s, e.action, e.next, (v - log_z).exp());
                }
            }
            for (a, acc) in sa_acc.iter().enumerate() {
                let v = acc.value();
                if v != LOG_ZERO {
                    out.add_state_action(t, s, a, (v - log_z).exp());
                }
            }
            let v = state_acc.value();
            if v != LOG_ZERO {
                out.add_state(t, s, (v - log_z).exp());
            }
        }
    }
    out
}

/// `l(Theta) = Theta . E_D[phi] + mean log q(tau) - log Z`.
pub fn log_likelihood(
    data: &Dataset,
    mdp: &Mdp,
    feats: &FeatureSet,
    params: &RewardParams,
    log_z: f64,
) -> Result<f64> {
    data.check_feasible(mdp)?;
    let n = data.len() as f64;
    let mut total = 0.0;
    for traj in data.trajectories() {
        total += traj_reward(traj, params, feats, mdp.discount()) + mdp.log_q_unchecked(traj);
    }
    let ll = total / n - log_z;
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::NonFinite)
    }
}

/// Ascent gradient `E_D[phi] - E_p[phi]`, with model-side counts weighted by
/// `gamma^t` to match the discounting inside `R(tau)`.
pub fn nll_gradient(
    empirical: &FeatureVectors,
    marginals: &MarginalSet,
    feats: &FeatureSet,
    discount: f64,
) -> Result<FeatureVectors> {
    let (ds, dsa, dsas) = feats.dims();
    for (what, expected, got) in [
        ("gradient theta_s", ds, empirical.s.len()),
        ("gradient theta_sa", dsa, empirical.sa.len()),
        ("gradient theta_sas", dsas, empirical.sas.len()),
    ] {
        if expected != got {
            return Err(Error::DimensionMismatch { what, expected, got });
        }
    }
    if feats.num_states() != marginals.num_states() || feats.num_actions() != marginals.num_actions() {
        return Err(Error::DimensionMismatch {
            what: "marginal states",
            expected: feats.num_states(),
            got: marginals.num_states(),
        });
    }
    Ok(empirical.sub(&marginals.feature_expectations(feats, discount)))
}

/// Which exact pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Poly,
    Padded,
}

/// Precomputed structure for repeated exact inference on one MDP and horizon.
#[derive(Debug, Clone)]
pub struct ExactModel {
    mdp: Mdp,
    feats: FeatureSet,
    len: usize,
    kind: ModelKind,
}

#[derive(Debug, Clone)]
enum ModelKind {
    Poly(Adjacency),
    Padded(PaddedMdp),
}

impl ExactModel {
    pub fn new(mdp: &Mdp, feats: &FeatureSet, len: usize, variant: Variant) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if feats.num_states() != mdp.num_states() || feats.num_actions() != mdp.num_actions() {
            return Err(Error::DimensionMismatch {
                what: "feature table states",
                expected: mdp.num_states(),
                got: feats.num_states(),
            });
        }
        let kind = match variant {
            Variant::Poly => ModelKind::Poly(build_adjacency(mdp)),
            Variant::Padded => ModelKind::Padded(pad_mdp(mdp)),
        };
        Ok(Self {
            mdp: mdp.clone(),
            feats: feats.clone(),
            len,
            kind,
        })
    }

    pub fn variant(&self) -> Variant {
        match self.kind {
            ModelKind::Poly(_) => Variant::Poly,
            ModelKind::Padded(_) => Variant::Padded,
        }
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn features(&self) -> &FeatureSet {
        &self.feats
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn marginals(&self, params: &RewardParams) -> Result<MarginalSet> {
        let tables = RewardTables::from_params(&self.feats, params)?;
        Ok(self.marginals_from_tables(&tables))
    }

    pub fn log_partition(&self, params: &RewardParams) -> Result<f64> {
        let tables = RewardTables::from_params(&self.feats, params)?;
        let adjacency = match &self.kind {
            ModelKind::Poly(adj) => adj,
            ModelKind::Padded(p) => &build_adjacency(p.base()),
        };
        Ok(partition(&forward_messages(&self.mdp, adjacency, &tables, self.len)))
    }

    /// Runs the full pipeline on already-evaluated rewards.
    pub fn marginals_from_tables(&self, tables: &RewardTables) -> MarginalSet {
        match &self.kind {
            ModelKind::Poly(adj) => {
                let alpha = forward_messages(&self.mdp, adj, tables, self.len);
                let beta = backward_messages_poly(&self.mdp, adj, tables, self.len);
                let log_z = partition(&alpha);
                marginals_poly(&alpha, &beta, &self.mdp, adj, tables, log_z)
            }
            ModelKind::Padded(padded) => {
                let reward = PaddedRewardModel::from_tables(tables, padded);
                let ns = self.mdp.num_states();
                let alpha = forward_messages(padded.mdp(), padded.adjacency(), &reward.tables, self.len)
                    .truncate_states(ns);
                let beta = backward_messages_padded(padded, &reward, self.len);
                let log_z = partition(&alpha);
                marginals_padded(&alpha, &beta, padded, &reward, log_z)
            }
        }
    }

    /// Log-likelihood and its ascent gradient at `params`.
    pub fn objective(
        &self,
        data: &Dataset,
        empirical: &FeatureVectors,
        params: &RewardParams,
    ) -> Result<(f64, FeatureVectors, MarginalSet)> {
        let marginals = self.marginals(params)?;
        let ll = log_likelihood(data, &self.mdp, &self.feats, params, marginals.log_z)?;
        let grad = nll_gradient(empirical, &marginals, &self.feats, self.mdp.discount())?;
        Ok((ll, grad, marginals))
    }
}
