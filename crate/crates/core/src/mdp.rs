//! Tabular MDPs, demonstration trajectories and the padding transformation.
//!
//! States and actions are dense indices. A `(state, action)` row whose
//! transition probabilities are all zero is an invalid action for that state,
//! which is how state-dependent action sets are expressed.

use crate::error::{Error, Result};
use crate::logspace::safe_ln;

/// Probabilities at or below this are treated as structural zeros.
pub const SUPPORT_EPS: f64 = 1e-15;

const STOCHASTIC_TOL: f64 = 1e-12;

/// A tabular MDP without its reward function.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    start_dist: Vec<f64>,
    /// Dense `T[s][a][s']`, row-major.
    transitions: Vec<f64>,
    discount: f64,
    terminal: Vec<bool>,
}

impl Mdp {
    /// Builds and validates an MDP.
    ///
    /// `transitions` is the dense `[s][a][s']` tensor flattened row-major.
    /// Every row must either sum to one or be all zeros (invalid action).
    pub fn new(
        num_states: usize,
        num_actions: usize,
        start_dist: Vec<f64>,
        transitions: Vec<f64>,
        discount: f64,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp(
                "need at least one state and one action".into(),
            ));
        }
        if start_dist.len() != num_states {
            return Err(Error::DimensionMismatch {
                what: "start_dist",
                expected: num_states,
                got: start_dist.len(),
            });
        }
        let expected = num_states * num_actions * num_states;
        if transitions.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "transitions",
                expected,
                got: transitions.len(),
            });
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidMdp(format!(
                "discount must lie in (0, 1], got {discount}"
            )));
        }
        if start_dist.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidMdp("start_dist entries must be in [0, 1]".into()));
        }
        let total: f64 = start_dist.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMdp(format!(
                "start_dist sums to {total}, expected 1"
            )));
        }
        for (row_idx, row) in transitions.chunks(num_states).enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan()) {
                return Err(Error::InvalidMdp(format!(
                    "transition row (s={}, a={}) has entries outside [0, 1]",
                    row_idx / num_actions,
                    row_idx % num_actions
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum != 0.0 && (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidMdp(format!(
                    "transition row (s={}, a={}) sums to {sum}",
                    row_idx / num_actions,
                    row_idx % num_actions
                )));
            }
        }
        let mut terminal = vec![false; num_states];
        for &s in terminal_states {
            if s >= num_states {
                return Err(Error::InvalidMdp(format!(
                    "terminal state {s} out of range"
                )));
            }
            terminal[s] = true;
        }
        Ok(Self {
            num_states,
            num_actions,
            start_dist,
            transitions,
            discount,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn start_dist(&self) -> &[f64] {
        &self.start_dist
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Returns a copy with a different discount factor.
    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidMdp(format!(
                "discount must lie in (0, 1], got {discount}"
            )));
        }
        self.discount = discount;
        Ok(self)
    }

    /// Returns a copy with a different terminal set.
    pub fn with_terminals(mut self, terminal_states: &[usize]) -> Result<Self> {
        let mut terminal = vec![false; self.num_states];
        for &s in terminal_states {
            if s >= self.num_states {
                return Err(Error::InvalidMdp(format!("terminal state {s} out of range")));
            }
            terminal[s] = true;
        }
        self.terminal = terminal;
        Ok(self)
    }

    /// Returns a copy with a different start distribution.
    pub fn with_start_dist(self, start_dist: Vec<f64>) -> Result<Self> {
        let terminals = self.terminal_states();
        Mdp::new(
            self.num_states,
            self.num_actions,
            start_dist,
            self.transitions,
            self.discount,
            &terminals,
        )
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.terminal[s]).collect()
    }

    pub fn is_episodic(&self) -> bool {
        self.terminal.iter().any(|&t| t)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + next]
    }

    /// The distribution over successors of `(s, a)`.
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transitions[start..start + self.num_states]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Whether action `a` is available in state `s`.
    pub fn is_valid(&self, s: usize, a: usize) -> bool {
        self.row(s, a).iter().any(|&p| p > SUPPORT_EPS)
    }

    pub fn valid_actions(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_actions).filter(move |&a| self.is_valid(s, a))
    }

    /// A trajectory must stop at `s` when it is terminal or has no valid action.
    pub fn is_dead_end(&self, s: usize) -> bool {
        self.terminal[s] || self.valid_actions(s).next().is_none()
    }

    /// Draws from a distribution over states given as a probability slice,
    /// never returning an index outside the support.
    pub(crate) fn sample_index<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p <= SUPPORT_EPS {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    pub fn sample_start<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        Self::sample_index(&self.start_dist, rng)
    }

    pub fn sample_next<R: rand::Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        Self::sample_index(self.row(s, a), rng)
    }

    /// `log q(tau)`: start probability times every transition probability.
    ///
    /// Fails if the trajectory leaves a terminal state or uses a transition
    /// outside the support of `T`.
    pub fn log_q(&self, traj: &Trajectory) -> Result<f64> {
        self.check_trajectory(traj)?;
        Ok(self.log_q_unchecked(traj))
    }

    pub(crate) fn log_q_unchecked(&self, traj: &Trajectory) -> f64 {
        let states = traj.states();
        let mut lq = safe_ln(self.start_dist[states[0]]);
        for (t, &a) in traj.actions().iter().enumerate() {
            lq += safe_ln(self.prob(states[t], a, states[t + 1]));
        }
        lq
    }

    /// Verifies that `traj` belongs to the trajectory set of this MDP.
    pub fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        let states = traj.states();
        for &s in states {
            if s >= self.num_states {
                return Err(Error::InvalidTrajectory(format!("state {s} out of range")));
            }
        }
        if self.start_dist[states[0]] <= 0.0 {
            return Err(Error::InvalidTrajectory(format!(
                "start state {} has zero start probability",
                states[0]
            )));
        }
        for (t, &a) in traj.actions().iter().enumerate() {
            let (s, next) = (states[t], states[t + 1]);
            if a >= self.num_actions {
                return Err(Error::InvalidTrajectory(format!("action {a} out of range")));
            }
            if self.terminal[s] {
                return Err(Error::InvalidTrajectory(format!(
                    "trajectory continues past terminal state {s} at step {}",
                    t + 1
                )));
            }
            if self.prob(s, a, next) <= SUPPORT_EPS {
                return Err(Error::InvalidTrajectory(format!(
                    "transition ({s}, {a}) -> {next} has zero probability"
                )));
            }
        }
        Ok(())
    }
}

/// One supported transition `s --a--> next` with its log probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub state: usize,
    pub action: usize,
    pub next: usize,
    pub log_prob: f64,
}

/// Parent and child sets of every state.
///
/// `parents[s']` holds every `(s, a)` with `T(s' | s, a) > 0`, and
/// `children[s]` every `(a, s')` with the same support. Terminal states end
/// the episode, so their outgoing rows never appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    pub parents: Vec<Vec<Edge>>,
    pub children: Vec<Vec<Edge>>,
}

impl Adjacency {
    pub fn num_edges(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }
}

pub fn build_adjacency(mdp: &Mdp) -> Adjacency {
    let n = mdp.num_states();
    let mut parents = vec![Vec::new(); n];
    let mut children = vec![Vec::new(); n];
    for s in 0..n {
        if mdp.is_terminal(s) {
            continue;
        }
        for a in 0..mdp.num_actions() {
            for (next, &p) in mdp.row(s, a).iter().enumerate() {
                if p > SUPPORT_EPS {
                    let edge = Edge {
                        state: s,
                        action: a,
                        next,
                        log_prob: p.ln(),
                    };
                    children[s].push(edge);
                    parents[next].push(edge);
                }
            }
        }
    }
    Adjacency { parents, children }
}

/// A state-action sequence ending in a state: `((s1,a1), ..., (sm, None))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    states: Vec<usize>,
    actions: Vec<usize>,
}

impl Trajectory {
    pub fn new(states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidTrajectory("empty trajectory".into()));
        }
        if actions.len() + 1 != states.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} states need {} actions, got {}",
                states.len(),
                states.len() - 1,
                actions.len()
            )));
        }
        Ok(Self { states, actions })
    }

    /// Builds a trajectory from `(state, action)` pairs where only the last
    /// pair has no action.
    pub fn from_steps(steps: &[(usize, Option<usize>)]) -> Result<Self> {
        let Some((last, rest)) = steps.split_last() else {
            return Err(Error::InvalidTrajectory("empty trajectory".into()));
        };
        if last.1.is_some() {
            return Err(Error::InvalidTrajectory(
                "final entry must have no action".into(),
            ));
        }
        let mut states = Vec::with_capacity(steps.len());
        let mut actions = Vec::with_capacity(rest.len());
        for &(s, a) in rest {
            let a = a.ok_or_else(|| {
                Error::InvalidTrajectory("only the final entry may omit its action".into())
            })?;
            states.push(s);
            actions.push(a);
        }
        states.push(last.0);
        Ok(Self { states, actions })
    }

    pub fn single(state: usize) -> Self {
        Self {
            states: vec![state],
            actions: Vec::new(),
        }
    }

    /// Number of states, `|tau|`.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn first(&self) -> usize {
        self.states[0]
    }

    pub fn last(&self) -> usize {
        *self.states.last().expect("non-empty")
    }

    pub fn steps(&self) -> Vec<(usize, Option<usize>)> {
        self.states
            .iter()
            .enumerate()
            .map(|(t, &s)| (s, self.actions.get(t).copied()))
            .collect()
    }
}

/// A non-empty set of demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { trajectories })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Longest demonstration, `L`.
    pub fn max_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).max().unwrap_or(0)
    }

    /// Checks every trajectory against `mdp`, reporting the first failure.
    pub fn check_feasible(&self, mdp: &Mdp) -> Result<()> {
        for (index, traj) in self.trajectories.iter().enumerate() {
            mdp.check_trajectory(traj)
                .map_err(|e| Error::InfeasibleTrajectory {
                    index,
                    reason: e.to_string(),
                })?;
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Dataset {
    type Output = Trajectory;

    fn index(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }
}

/// An MDP augmented with an absorbing auxiliary state and action.
///
/// The auxiliary state `s_a = num_states` can only be left through itself via
/// the auxiliary action `a_a = num_actions`; the other actions are invalid
/// there. Every state reaches `s_a` through `a_a`, and former terminal states
/// reach it under every action. The padded MDP has no terminal states.
#[derive(Debug, Clone)]
pub struct PaddedMdp {
    base: Mdp,
    padded: Mdp,
    adjacency: Adjacency,
}

impl PaddedMdp {
    pub fn base(&self) -> &Mdp {
        &self.base
    }

    /// The augmented MDP over `S+` and `A+`.
    pub fn mdp(&self) -> &Mdp {
        &self.padded
    }

    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    pub fn aux_state(&self) -> usize {
        self.base.num_states()
    }

    pub fn aux_action(&self) -> usize {
        self.base.num_actions()
    }
}

pub fn pad_mdp(mdp: &Mdp) -> PaddedMdp {
    let ns = mdp.num_states() + 1;
    let na = mdp.num_actions() + 1;
    let aux_s = mdp.num_states();
    let aux_a = mdp.num_actions();
    let mut transitions = vec![0.0; ns * na * ns];
    let idx = |s: usize, a: usize, next: usize| (s * na + a) * ns + next;
    for s in 0..mdp.num_states() {
        if mdp.is_terminal(s) {
            // Terminal states move to the auxiliary state under every action.
            for a in 0..na {
                transitions[idx(s, a, aux_s)] = 1.0;
            }
            continue;
        }
        for a in 0..mdp.num_actions() {
            for (next, &p) in mdp.row(s, a).iter().enumerate() {
                transitions[idx(s, a, next)] = p;
            }
        }
        transitions[idx(s, aux_a, aux_s)] = 1.0;
    }
    transitions[idx(aux_s, aux_a, aux_s)] = 1.0;

    let mut start = mdp.start_dist().to_vec();
    start.push(0.0);
    let padded = Mdp::new(ns, na, start, transitions, mdp.discount(), &[])
        .expect("padding preserves MDP invariants");
    let adjacency = build_adjacency(&padded);
    PaddedMdp {
        base: mdp.clone(),
        padded,
        adjacency,
    }
}

/// Extends every trajectory with `((., a_a), (s_a, .))` steps up to `len`.
pub fn pad_dataset(data: &Dataset, len: usize, padded: &PaddedMdp) -> Result<Dataset> {
    let (aux_s, aux_a) = (padded.aux_state(), padded.aux_action());
    let trajectories = data
        .trajectories()
        .iter()
        .map(|traj| {
            if traj.len() > len {
                return Err(Error::TrajectoryTooLong {
                    len: traj.len(),
                    max: len,
                });
            }
            let mut states = traj.states().to_vec();
            let mut actions = traj.actions().to_vec();
            while states.len() < len {
                actions.push(aux_a);
                states.push(aux_s);
            }
            Trajectory::new(states, actions)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(trajectories)
}
