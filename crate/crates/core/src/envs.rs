//! Built-in environments: the four-state chain, slippery gridworlds, the
//! N-chain and seeded random MDPs.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::reward::{FeatureSet, RewardParams};

/// Description of a built-in environment, as used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    LinearChain {
        n: usize,
    },
    Gridworld {
        #[serde(flatten)]
        grid: GridSpec,
    },
    /// The pinned frozen-lake layouts, 4x4 or 8x8.
    FrozenLake {
        #[serde(default = "default_lake_size")]
        size: usize,
        #[serde(default = "default_slip")]
        slip: f64,
    },
    Nchain {
        n: usize,
        #[serde(default = "default_nchain_slip")]
        slip: f64,
    },
    Random {
        num_states: usize,
        num_actions: usize,
        branching: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_slip() -> f64 {
    FROZEN_LAKE_SLIP
}

fn default_lake_size() -> usize {
    4
}

fn default_nchain_slip() -> f64 {
    0.2
}

impl EnvSpec {
    /// Builds the MDP, its features and the ground-truth reward parameters.
    pub fn build(&self) -> Result<(Mdp, FeatureSet, RewardParams)> {
        match self {
            EnvSpec::LinearChain { n } => make_linear_chain(*n),
            EnvSpec::Gridworld { grid } => make_gridworld(grid),
            EnvSpec::FrozenLake { size: 4, slip } => make_gridworld(&GridSpec::frozen_lake_4x4(*slip)),
            EnvSpec::FrozenLake { size: 8, slip } => make_gridworld(&GridSpec::frozen_lake_8x8(*slip)),
            EnvSpec::FrozenLake { size, .. } => Err(Error::InvalidConfig(format!(
                "frozen lake comes in sizes 4 and 8, not {size}"
            ))),
            EnvSpec::Nchain { n, slip } => make_nchain(*n, *slip),
            EnvSpec::Random {
                num_states,
                num_actions,
                branching,
                seed,
            } => {
                let mdp = make_random_mdp(*num_states, *num_actions, *branching, *seed)?;
                let feats = FeatureSet::state_indicators(*num_states, *num_actions);
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                let theta = (0..*num_states).map(|_| rng.sample(StandardNormal)).collect();
                Ok((mdp, feats, RewardParams::new(theta, vec![], vec![])?))
            }
        }
    }
}

/// Deterministic single-action chain `s_1 -> ... -> s_n`, starting in `s_1`
/// with `s_n` terminal. Ground truth rewards only the final state.
pub fn make_linear_chain(n: usize) -> Result<(Mdp, FeatureSet, RewardParams)> {
    if n < 2 {
        return Err(Error::InvalidConfig("linear chain needs n >= 2".into()));
    }
    let mut t = vec![0.0; n * n];
    for s in 0..n - 1 {
        t[s * n + s + 1] = 1.0;
    }
    let mut start = vec![0.0; n];
    start[0] = 1.0;
    let mdp = Mdp::new(n, 1, start, t, 1.0, &[n - 1])?;
    let feats = FeatureSet::state_indicators(n, 1);
    let mut theta = vec![0.0; n];
    theta[n - 1] = 1.0;
    Ok((mdp, feats, RewardParams::new(theta, vec![], vec![])?))
}

/// Slip probability of the pinned frozen-lake layout: the intended move
/// happens a third of the time, each perpendicular move a third.
pub const FROZEN_LAKE_SLIP: f64 = 2.0 / 3.0;

/// Discount used for gridworld experiments.
pub const GRID_DISCOUNT: f64 = 0.99;

/// Rollout cap for frozen-lake experiments. Long enough that truncation
/// rarely cuts an optimal episode short.
pub const FROZEN_LAKE_HORIZON: usize = 200;

/// Grid layout for [`make_gridworld`].
///
/// Actions are `0 = left, 1 = down, 2 = right, 3 = up`. Moves into a wall
/// leave the agent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Row-major hole mask.
    pub holes: Vec<bool>,
    pub start: usize,
    pub goal: usize,
    pub slip: f64,
    #[serde(default = "default_grid_discount")]
    pub discount: f64,
}

fn default_grid_discount() -> f64 {
    GRID_DISCOUNT
}

impl GridSpec {
    /// Parses a map such as `["SFFF", "FHFH", "FFFH", "HFFG"]`.
    pub fn from_map(rows: &[&str], slip: f64) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut holes = Vec::new();
        let (mut start, mut goal) = (None, None);
        for (r, line) in rows.iter().enumerate() {
            if line.len() != cols {
                return Err(Error::InvalidConfig("ragged grid map".into()));
            }
            for (c, ch) in line.chars().enumerate() {
                let i = r * cols + c;
                match ch {
                    'S' => start = Some(i),
                    'G' => goal = Some(i),
                    'H' | 'F' => {}
                    other => {
                        return Err(Error::InvalidConfig(format!("unknown grid cell {other:?}")))
                    }
                }
                holes.push(ch == 'H');
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            holes,
            start: start.ok_or_else(|| Error::InvalidConfig("map has no start".into()))?,
            goal: goal.ok_or_else(|| Error::InvalidConfig("map has no goal".into()))?,
            slip,
            discount: GRID_DISCOUNT,
        })
    }

    /// The standard 4x4 frozen-lake layout.
    pub fn frozen_lake_4x4(slip: f64) -> Self {
        Self::from_map(&["SFFF", "FHFH", "FFFH", "HFFG"], slip).expect("valid map")
    }

    /// The standard 8x8 frozen-lake layout.
    pub fn frozen_lake_8x8(slip: f64) -> Self {
        Self::from_map(
            &[
                "SFFFFFFF", "FFFFFFFF", "FFFHFFFF", "FFFFFHFF", "FFFHFFFF", "FHHFFFHF", "FHFFHFHF",
                "FFFHFFFG",
            ],
            slip,
        )
        .expect("valid map")
    }

    /// A random `rows x cols` layout with start in the top-left corner, goal in
    /// the bottom-right one, and holes placed with probability `hole_prob`
    /// while keeping the goal reachable.
    pub fn random(rows: usize, cols: usize, hole_prob: f64, slip: f64, seed: u64) -> Result<Self> {
        if rows * cols < 2 {
            return Err(Error::InvalidConfig("grid needs at least two cells".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (start, goal) = (0, rows * cols - 1);
        for _ in 0..1000 {
            let holes: Vec<bool> = (0..rows * cols)
                .map(|i| i != start && i != goal && rng.random::<f64>() < hole_prob)
                .collect();
            let spec = Self {
                rows,
                cols,
                holes,
                start,
                goal,
                slip,
                discount: GRID_DISCOUNT,
            };
            if spec.goal_reachable() {
                return Ok(spec);
            }
        }
        Err(Error::InvalidConfig("could not place holes with a reachable goal".into()))
    }

    fn goal_reachable(&self) -> bool {
        let mut seen = vec![false; self.rows * self.cols];
        let mut stack = vec![self.start];
        seen[self.start] = true;
        while let Some(i) = stack.pop() {
            if i == self.goal {
                return true;
            }
            for dir in 0..4 {
                let j = self.step(i, dir);
                if !seen[j] && !self.holes[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        false
    }

    fn step(&self, i: usize, dir: usize) -> usize {
        let (r, c) = (i / self.cols, i % self.cols);
        match dir {
            0 if c > 0 => i - 1,
            1 if r + 1 < self.rows => i + self.cols,
            2 if c + 1 < self.cols => i + 1,
            3 if r > 0 => i - self.cols,
            _ => i,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Slippery gridworld with holes and a single goal, all terminal.
///
/// The intended move succeeds with probability `1 - slip`; each of the two
/// perpendicular moves happens with `slip / 2`. Ground truth is `R(s) = 1` at
/// the goal, with one-hot state features.
pub fn make_gridworld(spec: &GridSpec) -> Result<(Mdp, FeatureSet, RewardParams)> {
    let n = spec.num_cells();
    if spec.holes.len() != n {
        return Err(Error::DimensionMismatch {
            what: "hole mask",
            expected: n,
            got: spec.holes.len(),
        });
    }
    if spec.start >= n || spec.goal >= n || spec.holes[spec.goal] || spec.holes[spec.start] {
        return Err(Error::InvalidConfig("start and goal must be free cells".into()));
    }
    if !(0.0..1.0).contains(&spec.slip) {
        return Err(Error::InvalidConfig(format!("slip must be in [0, 1), got {}", spec.slip)));
    }
    let na = 4;
    let terminal: Vec<usize> = (0..n).filter(|&i| spec.holes[i] || i == spec.goal).collect();
    let mut t = vec![0.0; n * na * n];
    for s in 0..n {
        if terminal.contains(&s) {
            continue;
        }
        for a in 0..na {
            let row = &mut t[(s * na + a) * n..(s * na + a + 1) * n];
            row[spec.step(s, a)] += 1.0 - spec.slip;
            row[spec.step(s, (a + 1) % 4)] += spec.slip / 2.0;
            row[spec.step(s, (a + 3) % 4)] += spec.slip / 2.0;
        }
    }
    let mut start = vec![0.0; n];
    start[spec.start] = 1.0;
    let mdp = Mdp::new(n, na, start, t, spec.discount, &terminal)?;
    let feats = FeatureSet::state_indicators(n, na);
    let mut theta = vec![0.0; n];
    theta[spec.goal] = 1.0;
    Ok((mdp, feats, RewardParams::new(theta, vec![], vec![])?))
}

/// Discount used by the N-chain environment.
pub const NCHAIN_DISCOUNT: f64 = 0.95;
pub const NCHAIN_SMALL_REWARD: f64 = 2.0;
pub const NCHAIN_LARGE_REWARD: f64 = 10.0;

/// Continuing N-chain with actions `0 = forward`, `1 = reset`.
///
/// With probability `slip` the opposite action is executed. Forward moves one
/// state along the chain (staying put at the end); reset returns to the first
/// state. Executed resets pay `NCHAIN_SMALL_REWARD` and executed forwards at
/// the chain end pay `NCHAIN_LARGE_REWARD`; the ground-truth `R(s, a)` is the
/// expected payment. Features are one-hot over state-action pairs.
pub fn make_nchain(n: usize, slip: f64) -> Result<(Mdp, FeatureSet, RewardParams)> {
    if n < 2 {
        return Err(Error::InvalidConfig("nchain needs n >= 2".into()));
    }
    if !(0.0..1.0).contains(&slip) {
        return Err(Error::InvalidConfig(format!("slip must be in [0, 1), got {slip}")));
    }
    let na = 2;
    let mut t = vec![0.0; n * na * n];
    let mut theta = vec![0.0; n * na];
    for s in 0..n {
        let forward = (s + 1).min(n - 1);
        let end_bonus = if s == n - 1 { NCHAIN_LARGE_REWARD } else { 0.0 };
        let fwd = &mut t[(s * na) * n..(s * na + 1) * n];
        fwd[forward] += 1.0 - slip;
        fwd[0] += slip;
        let reset = &mut t[(s * na + 1) * n..(s * na + 2) * n];
        reset[0] += 1.0 - slip;
        reset[forward] += slip;
        theta[s * na] = (1.0 - slip) * end_bonus + slip * NCHAIN_SMALL_REWARD;
        theta[s * na + 1] = (1.0 - slip) * NCHAIN_SMALL_REWARD + slip * end_bonus;
    }
    let mut start = vec![0.0; n];
    start[0] = 1.0;
    let mdp = Mdp::new(n, na, start, t, NCHAIN_DISCOUNT, &[])?;
    let feats = FeatureSet::state_action_indicators(n, na);
    Ok((mdp, feats, RewardParams::new(vec![], theta, vec![])?))
}

fn dirichlet_uniform(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid shape");
    let mut v: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(1e-12)).collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Random MDP where every `(s, a)` has `branching` distinct successors with
/// Dirichlet(1, ..., 1) probabilities. The start distribution is also
/// Dirichlet-uniform over all states; there are no terminal states and the
/// discount is 1.
pub fn make_random_mdp(
    num_states: usize,
    num_actions: usize,
    branching: usize,
    seed: u64,
) -> Result<Mdp> {
    if branching == 0 || branching > num_states {
        return Err(Error::InvalidConfig(format!(
            "branching must be in 1..={num_states}, got {branching}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![0.0; num_states * num_actions * num_states];
    for row in t.chunks_mut(num_states) {
        let succ = sample(&mut rng, num_states, branching);
        let probs = dirichlet_uniform(&mut rng, branching);
        for (next, p) in succ.iter().zip(probs) {
            row[next] = p;
        }
    }
    let start = dirichlet_uniform(&mut rng, num_states);
    Mdp::new(num_states, num_actions, start, t, 1.0, &[])
}

/// Dense Gaussian features of the requested dimensions, for property tests
/// and benchmarks.
pub fn random_features(
    num_states: usize,
    num_actions: usize,
    dims: (usize, usize, usize),
    seed: u64,
) -> FeatureSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let phi_s = draw(num_states * dims.0);
    let phi_sa = draw(num_states * num_actions * dims.1);
    let phi_sas = draw(num_states * num_actions * num_states * dims.2);
    FeatureSet::new(
        num_states,
        num_actions,
        dims.0,
        phi_s,
        dims.1,
        phi_sa,
        dims.2,
        phi_sas,
    )
    .expect("consistent dimensions")
}

/// Parameters drawn uniformly from `[-scale, scale]`.
pub fn random_params(feats: &FeatureSet, scale: f64, seed: u64) -> RewardParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..feats.total_dim())
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    RewardParams::unflatten(&flat, feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_adjacency, SUPPORT_EPS};

    fn assert_stochastic(mdp: &Mdp) {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let sum: f64 = mdp.row(s, a).iter().sum();
                assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12, "row ({s},{a}) sums to {sum}");
            }
        }
    }

    #[test]
    fn random_mdp_is_reproducible() {
        let a = make_random_mdp(6, 3, 2, 42).unwrap();
        let b = make_random_mdp(6, 3, 2, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_random_mdp(6, 3, 2, 43).unwrap());
    }

    #[test]
    fn random_mdp_support_equals_branching() {
        let mdp = make_random_mdp(7, 2, 3, 5).unwrap();
        assert_stochastic(&mdp);
        let adj = build_adjacency(&mdp);
        for s in 0..7 {
            for a in 0..2 {
                let n = adj.children[s].iter().filter(|e| e.action == a).count();
                assert_eq!(n, 3);
                let support = mdp.row(s, a).iter().filter(|&&p| p > SUPPORT_EPS).count();
                assert_eq!(support, 3);
            }
        }
    }

    #[test]
    fn gridworld_rows_are_stochastic() {
        let (mdp, feats, params) = make_gridworld(&GridSpec::frozen_lake_4x4(FROZEN_LAKE_SLIP)).unwrap();
        assert_stochastic(&mdp);
        assert_eq!(mdp.num_states(), 16);
        assert_eq!(mdp.terminal_states(), vec![5, 7, 11, 12, 15]);
        assert_eq!(feats.dims(), (16, 0, 0));
        assert_eq!(params.theta_s[15], 1.0);
    }

    #[test]
    fn gridworld_without_slip_is_deterministic() {
        let (mdp, _, _) = make_gridworld(&GridSpec::frozen_lake_4x4(0.0)).unwrap();
        for s in 0..16 {
            for a in 0..4 {
                let row = mdp.row(s, a);
                assert!(row.iter().all(|&p| p == 0.0 || p == 1.0));
            }
        }
        // Moving left from the start corner stays put.
        assert_eq!(mdp.prob(0, 0, 0), 1.0);
        assert_eq!(mdp.prob(0, 2, 1), 1.0);
    }

    #[test]
    fn random_grids_keep_goal_reachable() {
        for seed in 0..20 {
            let spec = GridSpec::random(5, 5, 0.3, 0.2, seed).unwrap();
            assert!(spec.goal_reachable());
            make_gridworld(&spec).unwrap();
        }
    }

    #[test]
    fn nchain_structure() {
        let (mdp, feats, params) = make_nchain(10, 0.0).unwrap();
        assert!(!mdp.is_episodic());
        assert_stochastic(&mdp);
        for s in 0..9 {
            assert_eq!(mdp.prob(s, 0, s + 1), 1.0);
        }
        assert_eq!(feats.dims(), (0, 20, 0));
        assert_eq!(params.theta_sa[9 * 2], NCHAIN_LARGE_REWARD);
        assert_eq!(params.theta_sa[1], NCHAIN_SMALL_REWARD);
        let (slippery, _, _) = make_nchain(10, 0.2).unwrap();
        assert_stochastic(&slippery);
    }

    #[test]
    fn chain_rejects_tiny() {
        assert!(make_linear_chain(1).is_err());
        assert!(make_nchain(1, 0.0).is_err());
    }

    #[test]
    fn env_spec_roundtrip() {
        let spec: EnvSpec = serde_json::from_str(r#"{"kind":"nchain","n":10}"#).unwrap();
        assert_eq!(spec, EnvSpec::Nchain { n: 10, slip: 0.2 });
        let (mdp, _, _) = spec.build().unwrap();
        assert_eq!(mdp.num_states(), 10);
    }
}
