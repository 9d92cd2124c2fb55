//! Dual-observation MDPs: one latent tabular state space viewed through two
//! bijective observation encoders, plus tabular value iteration and the
//! expert/auxiliary policy constructors.
//!
//! Grid actions are indexed up=0, down=1, left=2, right=3; ties in greedy
//! policies break toward the lowest action index.

use crate::approx::Approximator;
use crate::error::{HoilError, Result};
use crate::rng::{self, Rng};
use rand::Rng as _;
use std::collections::HashMap;

pub const VALUE_ITERATION_MAX_SWEEPS: usize = 10_000;
pub const VALUE_ITERATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpaceTag {
    /// Expert-side observation space.
    E,
    /// Learner-side observation space.
    L,
}

impl std::fmt::Display for SpaceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpaceTag::E => write!(f, "E"),
            SpaceTag::L => write!(f, "L"),
        }
    }
}

/// A tabular MDP with two per-state observation tables. Immutable after
/// construction; rollout state lives in caller-owned values.
#[derive(Debug, Clone)]
pub struct DualObsEnv {
    id: String,
    state_count: usize,
    action_count: usize,
    /// Sparse kernel, indexed `s * action_count + a`.
    transition: Vec<Vec<(usize, f64)>>,
    gamma: f64,
    obs_e: Vec<Vec<f64>>,
    obs_l: Vec<Vec<f64>>,
    /// Expected immediate reward per state-action. Used only by the RL
    /// oracle baseline and evaluation, never by the imitation learners.
    true_reward: Vec<f64>,
    terminal: Vec<bool>,
    start_state: usize,
    max_episode_steps: usize,
    blocked: Vec<bool>,
}

impl DualObsEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        id: impl Into<String>,
        action_count: usize,
        transition: Vec<Vec<(usize, f64)>>,
        gamma: f64,
        obs_e: Vec<Vec<f64>>,
        obs_l: Vec<Vec<f64>>,
        true_reward: Vec<f64>,
        terminal: Vec<bool>,
        start_state: usize,
        max_episode_steps: usize,
        blocked: Vec<bool>,
    ) -> Result<Self> {
        let env = DualObsEnv {
            id: id.into(),
            state_count: obs_e.len(),
            action_count,
            transition,
            gamma,
            obs_e,
            obs_l,
            true_reward,
            terminal,
            start_state,
            max_episode_steps,
            blocked,
        };
        env.validate()?;
        Ok(env)
    }

    fn validate(&self) -> Result<()> {
        let s = self.state_count;
        let a = self.action_count;
        let bad = |m: String| HoilError::InvalidConfig(m);
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(bad(format!("gamma {} outside (0,1)", self.gamma)));
        }
        if self.max_episode_steps < 1 {
            return Err(bad("max_episode_steps must be >= 1".into()));
        }
        if self.transition.len() != s * a
            || self.true_reward.len() != s * a
            || self.obs_l.len() != s
            || self.terminal.len() != s
            || self.blocked.len() != s
            || self.start_state >= s
        {
            return Err(bad("inconsistent table sizes".into()));
        }
        for (i, kernel) in self.transition.iter().enumerate() {
            let mass: f64 = kernel.iter().map(|(_, p)| p).sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(bad(format!(
                    "transition mass {mass} for state {} action {}",
                    i / a,
                    i % a
                )));
            }
            if kernel.iter().any(|(next, p)| *next >= s || *p < 0.0) {
                return Err(bad(format!("bad transition entry at {i}")));
            }
        }
        // Encoders must be injective over the reachable state set.
        let reachable = self.reachable_states();
        for space in [SpaceTag::E, SpaceTag::L] {
            for (i, &si) in reachable.iter().enumerate() {
                for &sj in reachable.iter().skip(i + 1) {
                    let (oi, oj) = (self.observe(space, si), self.observe(space, sj));
                    let dist: f64 = oi
                        .iter()
                        .zip(oj.iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    if dist <= 0.0 {
                        return Err(bad(format!(
                            "encoder {space} collides on states {si} and {sj}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// States reachable from the start under any action sequence, ignoring
    /// the episode cap.
    fn reachable_states(&self) -> Vec<usize> {
        let mut seen = vec![false; self.state_count];
        let mut stack = vec![self.start_state];
        seen[self.start_state] = true;
        while let Some(s) = stack.pop() {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.action_count {
                for &(next, p) in &self.transition[s * self.action_count + a] {
                    if p > 0.0 && !seen[next] {
                        seen[next] = true;
                        stack.push(next);
                    }
                }
            }
        }
        (0..self.state_count).filter(|&s| seen[s]).collect()
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn state_count(&self) -> usize {
        self.state_count
    }
    pub fn action_count(&self) -> usize {
        self.action_count
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn start_state(&self) -> usize {
        self.start_state
    }
    pub fn max_episode_steps(&self) -> usize {
        self.max_episode_steps
    }
    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }
    pub fn is_blocked(&self, s: usize) -> bool {
        self.blocked[s]
    }
    pub fn has_blocked_region(&self) -> bool {
        self.blocked.iter().any(|b| *b)
    }
    pub fn obs_dim(&self, space: SpaceTag) -> usize {
        self.observe(space, 0).len()
    }

    pub fn observe(&self, space: SpaceTag, state: usize) -> &[f64] {
        match space {
            SpaceTag::E => &self.obs_e[state],
            SpaceTag::L => &self.obs_l[state],
        }
    }

    pub fn kernel(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transition[state * self.action_count + action]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.true_reward[state * self.action_count + action]
    }

    /// Exact inverse of an encoder; oracle and test use only. Matching is on
    /// raw bit patterns, which is sound because observations are produced by
    /// table lookup.
    pub fn decode_obs(&self, space: SpaceTag, obs: &[f64]) -> Option<usize> {
        let key = obs_key(obs);
        (0..self.state_count).find(|&s| obs_key(self.observe(space, s)) == key)
    }

    /// Actions from `state` that cannot land in the blocked region.
    pub fn allowed_actions(&self, state: usize) -> Vec<usize> {
        (0..self.action_count)
            .filter(|&a| {
                self.kernel(state, a)
                    .iter()
                    .all(|&(next, p)| p == 0.0 || !self.blocked[next])
            })
            .collect()
    }

    /// Variant where every transition into a blocked state stays put instead.
    /// Only the kernel is rewired; rewards are untouched, and the auxiliary
    /// policy never selects the rewired actions anyway (they are masked).
    /// The real environment is unchanged.
    pub fn blocked_variant(&self) -> DualObsEnv {
        let mut env = self.clone();
        env.id = format!("{}-detour", self.id);
        for (idx, kernel) in env.transition.iter_mut().enumerate() {
            let s = idx / self.action_count;
            let mut stay = 0.0;
            kernel.retain(|&(next, p)| {
                if self.blocked[next] {
                    stay += p;
                    false
                } else {
                    true
                }
            });
            if stay > 0.0 {
                if let Some(entry) = kernel.iter_mut().find(|(n, _)| *n == s) {
                    entry.1 += stay;
                } else {
                    kernel.push((s, stay));
                }
            }
        }
        env
    }

    pub fn with_start(mut self, start: usize) -> Self {
        assert!(start < self.state_count);
        self.start_state = start;
        self
    }

    pub fn with_max_episode_steps(mut self, cap: usize) -> Self {
        assert!(cap >= 1);
        self.max_episode_steps = cap;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        assert!(gamma > 0.0 && gamma < 1.0);
        self.gamma = gamma;
        self
    }
}

pub fn obs_key(obs: &[f64]) -> Vec<u64> {
    obs.iter().map(|v| v.to_bits()).collect()
}

/// One environment transition. `done` reports entry into a terminal state;
/// the episode step cap is the caller's concern.
pub fn step(env: &DualObsEnv, state: usize, action: usize, rng: &mut Rng) -> (usize, bool, f64) {
    assert!(state < env.state_count, "state {state} out of range");
    assert!(action < env.action_count, "action {action} out of range");
    assert!(!env.terminal[state], "stepped a terminal state");
    let kernel = env.kernel(state, action);
    let next = if kernel.len() == 1 {
        kernel[0].0
    } else {
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = kernel.last().unwrap().0;
        for &(n, p) in kernel {
            acc += p;
            if draw < acc {
                chosen = n;
                break;
            }
        }
        chosen
    };
    (next, env.terminal[next], env.reward(state, action))
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// A mapping from an observation vector to a categorical action distribution.
/// Tabular policies resolve the observation back to a state through an exact
/// lookup table; network policies run a softmax MLP.
#[derive(Debug, Clone)]
pub struct Policy {
    repr: PolicyRepr,
    space_tag: SpaceTag,
}

#[derive(Debug, Clone)]
enum PolicyRepr {
    Tabular {
        probs: Vec<Vec<f64>>,
        obs_index: HashMap<Vec<u64>, usize>,
    },
    Net(Approximator),
}

impl Policy {
    pub fn from_table(env: &DualObsEnv, space_tag: SpaceTag, probs: Vec<Vec<f64>>) -> Self {
        assert_eq!(probs.len(), env.state_count());
        for row in &probs {
            let mass: f64 = row.iter().sum();
            assert!(
                (mass - 1.0).abs() <= 1e-9 && row.iter().all(|p| *p >= 0.0),
                "action probabilities must be a distribution"
            );
        }
        let obs_index = (0..env.state_count())
            .map(|s| (obs_key(env.observe(space_tag, s)), s))
            .collect();
        Policy {
            repr: PolicyRepr::Tabular { probs, obs_index },
            space_tag,
        }
    }

    pub fn from_net(net: Approximator, space_tag: SpaceTag) -> Self {
        Policy {
            repr: PolicyRepr::Net(net),
            space_tag,
        }
    }

    pub fn space_tag(&self) -> SpaceTag {
        self.space_tag
    }

    pub fn net(&self) -> Option<&Approximator> {
        match &self.repr {
            PolicyRepr::Net(n) => Some(n),
            PolicyRepr::Tabular { .. } => None,
        }
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        match &self.repr {
            PolicyRepr::Tabular { probs, obs_index } => {
                let state = obs_index
                    .get(&obs_key(obs))
                    .expect("observation not in the tabular policy's table");
                probs[*state].clone()
            }
            PolicyRepr::Net(net) => net.forward(obs),
        }
    }

    pub fn sample(&self, obs: &[f64], rng: &mut Rng) -> usize {
        let probs = self.action_probs(obs);
        let draw: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                return a;
            }
        }
        probs.len() - 1
    }

    /// Argmax action, ties broken toward the lowest index.
    pub fn greedy(&self, obs: &[f64]) -> usize {
        let probs = self.action_probs(obs);
        let mut best = 0;
        for (a, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = a;
            }
        }
        best
    }
}

// ---------------------------------------------------------------------------
// Value iteration and policy constructors
// ---------------------------------------------------------------------------

/// Optimal state values under the true reward. Terminal states hold value 0.
pub fn value_iteration(env: &DualObsEnv) -> Result<Vec<f64>> {
    let mut values = vec![0.0; env.state_count()];
    for _ in 0..VALUE_ITERATION_MAX_SWEEPS {
        let residual = sweep(env, &mut values);
        if residual < VALUE_ITERATION_TOL {
            return Ok(values);
        }
    }
    let residual = sweep(env, &mut values);
    Err(HoilError::ValueIterationDiverged {
        sweeps: VALUE_ITERATION_MAX_SWEEPS,
        residual,
    })
}

fn sweep(env: &DualObsEnv, values: &mut [f64]) -> f64 {
    let mut residual = 0.0f64;
    for s in 0..env.state_count() {
        if env.is_terminal(s) {
            continue;
        }
        let best = (0..env.action_count())
            .map(|a| q_value(env, values, s, a))
            .fold(f64::NEG_INFINITY, f64::max);
        residual = residual.max((best - values[s]).abs());
        values[s] = best;
    }
    residual
}

pub fn q_value(env: &DualObsEnv, values: &[f64], s: usize, a: usize) -> f64 {
    let mut q = env.reward(s, a);
    for &(next, p) in env.kernel(s, a) {
        if !env.is_terminal(next) {
            q += env.gamma() * p * values[next];
        }
    }
    q
}

/// Bellman residual of `values` under one extra sweep; used by invariants.
pub fn bellman_residual(env: &DualObsEnv, values: &[f64]) -> f64 {
    let mut scratch = values.to_vec();
    sweep(env, &mut scratch)
}

fn greedy_action(env: &DualObsEnv, values: &[f64], s: usize, actions: &[usize]) -> usize {
    let mut best = actions[0];
    let mut best_q = q_value(env, values, s, best);
    for &a in &actions[1..] {
        let q = q_value(env, values, s, a);
        if q > best_q {
            best = a;
            best_q = q;
        }
    }
    best
}

/// Greedy policy of tabular value iteration on the true reward, reading
/// expert-side observations. Deterministic.
pub fn expert_policy(env: &DualObsEnv) -> Result<Policy> {
    let values = value_iteration(env)?;
    let all: Vec<usize> = (0..env.action_count()).collect();
    let probs = (0..env.state_count())
        .map(|s| {
            let mut row = vec![0.0; env.action_count()];
            if env.is_terminal(s) {
                row[0] = 1.0;
            } else {
                row[greedy_action(env, &values, s, &all)] = 1.0;
            }
            row
        })
        .collect();
    Ok(Policy::from_table(env, SpaceTag::E, probs))
}

/// The detour policy: expert of the blocked variant, mixed with a uniform
/// draw over actions that stay out of the blocked region. The mask applies to
/// both the greedy and the random component, so the policy never traverses
/// the blocked region at any epsilon.
pub fn auxiliary_policy(env: &DualObsEnv, epsilon: f64) -> Result<Policy> {
    assert!((0.0..=1.0).contains(&epsilon));
    if !env.has_blocked_region() {
        return Err(HoilError::NoBlockedRegion);
    }
    let detour_env = env.blocked_variant();
    if env.terminal.iter().any(|t| *t) && !goal_reachable(&detour_env) {
        return Err(HoilError::GoalUnreachable);
    }
    let values = value_iteration(&detour_env)?;
    let probs = (0..env.state_count())
        .map(|s| {
            let mut row = vec![0.0; env.action_count()];
            if env.is_terminal(s) || env.is_blocked(s) {
                row[0] = 1.0;
                return row;
            }
            let allowed = env.allowed_actions(s);
            assert!(
                !allowed.is_empty(),
                "state {s} has no action avoiding the blocked region"
            );
            let greedy = greedy_action(&detour_env, &values, s, &allowed);
            for &a in &allowed {
                row[a] = epsilon / allowed.len() as f64;
            }
            row[greedy] += 1.0 - epsilon;
            row
        })
        .collect();
    Ok(Policy::from_table(env, SpaceTag::E, probs))
}

fn goal_reachable(env: &DualObsEnv) -> bool {
    let mut seen = vec![false; env.state_count()];
    let mut stack = vec![env.start_state()];
    seen[env.start_state()] = true;
    while let Some(s) = stack.pop() {
        if env.is_terminal(s) {
            return true;
        }
        for a in 0..env.action_count() {
            for &(next, p) in env.kernel(s, a) {
                if p > 0.0 && !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Built-in environment families
// ---------------------------------------------------------------------------

pub const GRID_ACTIONS: usize = 4; // up, down, left, right

/// Gridworld with a one-hot-permutation expert encoder and a random affine
/// learner encoder over (row, col). Reward 1 on entering the goal; episodes
/// end at the goal or after `width + height` steps. The blocked region stays
/// passable in the real dynamics; only the auxiliary policy avoids it.
pub fn make_dual_grid(
    width: usize,
    height: usize,
    goal: (usize, usize),
    blocked_region: &[(usize, usize)],
    seed: u64,
) -> Result<DualObsEnv> {
    assert!(width * height >= 4, "grid too small");
    assert!(goal.0 < height && goal.1 < width, "goal outside the grid");
    assert!(
        !blocked_region.contains(&goal),
        "goal may not be inside the blocked region"
    );
    let states = width * height;
    let cell = |r: usize, c: usize| r * width + c;
    let goal_state = cell(goal.0, goal.1);

    let mut transition = Vec::with_capacity(states * GRID_ACTIONS);
    let mut reward = Vec::with_capacity(states * GRID_ACTIONS);
    for r in 0..height {
        for c in 0..width {
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let nr = r as i64 + dr;
                let nc = c as i64 + dc;
                let next = if nr < 0 || nc < 0 || nr >= height as i64 || nc >= width as i64 {
                    cell(r, c) // wall bump
                } else {
                    cell(nr as usize, nc as usize)
                };
                transition.push(vec![(next, 1.0)]);
                reward.push(if next == goal_state && cell(r, c) != goal_state {
                    1.0
                } else {
                    0.0
                });
            }
        }
    }

    let mut perm: Vec<usize> = (0..states).collect();
    let mut perm_rng = rng::derived(seed, "grid-perm");
    for i in (1..states).rev() {
        let j = perm_rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let obs_e: Vec<Vec<f64>> = (0..states)
        .map(|s| {
            let mut v = vec![0.0; states];
            v[perm[s]] = 1.0;
            v
        })
        .collect();

    let mut affine_rng = rng::derived(seed, "grid-affine");
    let matrix = loop {
        let m: [f64; 4] = std::array::from_fn(|_| affine_rng.random_range(-1.0..1.0));
        if (m[0] * m[3] - m[1] * m[2]).abs() >= 1e-6 {
            break m;
        }
    };
    let bias: [f64; 2] = std::array::from_fn(|_| affine_rng.random_range(-1.0..1.0));
    let obs_l: Vec<Vec<f64>> = (0..states)
        .map(|s| {
            let (r, c) = ((s / width) as f64, (s % width) as f64);
            vec![
                matrix[0] * r + matrix[1] * c + bias[0],
                matrix[2] * r + matrix[3] * c + bias[1],
            ]
        })
        .collect();

    let mut terminal = vec![false; states];
    terminal[goal_state] = true;
    let mut blocked = vec![false; states];
    for &(r, c) in blocked_region {
        assert!(r < height && c < width, "blocked cell outside the grid");
        blocked[cell(r, c)] = true;
    }

    DualObsEnv::from_parts(
        format!("grid-{width}x{height}-seed{seed}"),
        GRID_ACTIONS,
        transition,
        0.95,
        obs_e,
        obs_l,
        reward,
        terminal,
        0,
        width + height,
        blocked,
    )
}

/// Lattice resolution of the point-mass arena.
pub const POINTMASS_LATTICE: usize = 11;

/// Point mass on a square lattice; both encoders are a rotation followed by a
/// diagonal scaling of the continuous position. Scalings are drawn from the
/// seed stream in [0.5, 2.0].
pub fn make_dual_pointmass(
    arena_half_width: f64,
    rotation_e: f64,
    rotation_l: f64,
    action_grid: usize,
    seed: u64,
) -> Result<DualObsEnv> {
    let mut scale_rng = rng::derived(seed, "pointmass-scale");
    let mut draw = || {
        [
            scale_rng.random_range(0.5..2.0),
            scale_rng.random_range(0.5..2.0),
        ]
    };
    let scale_e = draw();
    let scale_l = draw();
    make_dual_pointmass_with_scales(
        arena_half_width,
        rotation_e,
        rotation_l,
        action_grid,
        seed,
        scale_e,
        scale_l,
    )
}

/// Point mass with explicit diagonal scalings, for tests that pin the
/// encoders (for example identity scaling with zero rotation).
pub fn make_dual_pointmass_with_scales(
    arena_half_width: f64,
    rotation_e: f64,
    rotation_l: f64,
    action_grid: usize,
    seed: u64,
    scale_e: [f64; 2],
    scale_l: [f64; 2],
) -> Result<DualObsEnv> {
    assert!(rotation_e != rotation_l, "rotations must differ");
    assert!(action_grid >= 3, "need at least a 3x3 action grid");
    assert!(arena_half_width > 0.0);
    let k = POINTMASS_LATTICE;
    let states = k * k;
    let h = 2.0 * arena_half_width / (k - 1) as f64;
    let pos = |s: usize| {
        let (row, col) = (s / k, s % k);
        (
            -arena_half_width + col as f64 * h,
            -arena_half_width + row as f64 * h,
        )
    };
    let offsets: Vec<i64> = (0..action_grid)
        .map(|i| i as i64 - (action_grid / 2) as i64)
        .collect();
    let action_count = action_grid * action_grid;

    let mut transition = Vec::with_capacity(states * action_count);
    let mut reward = Vec::with_capacity(states * action_count);
    for s in 0..states {
        let (row, col) = ((s / k) as i64, (s % k) as i64);
        for &dr in &offsets {
            for &dc in &offsets {
                let nr = (row + dr).clamp(0, k as i64 - 1) as usize;
                let nc = (col + dc).clamp(0, k as i64 - 1) as usize;
                let next = nr * k + nc;
                transition.push(vec![(next, 1.0)]);
                let (x, y) = pos(next);
                reward.push(-(x * x + y * y).sqrt());
            }
        }
    }

    let encode = |theta: f64, scale: [f64; 2]| -> Vec<Vec<f64>> {
        let (sin, cos) = theta.sin_cos();
        (0..states)
            .map(|s| {
                let (x, y) = pos(s);
                vec![
                    scale[0] * (cos * x - sin * y),
                    scale[1] * (sin * x + cos * y),
                ]
            })
            .collect()
    };

    DualObsEnv::from_parts(
        format!("pointmass-{arena_half_width}-seed{seed}"),
        action_count,
        transition,
        0.95,
        encode(rotation_e, scale_e),
        encode(rotation_l, scale_l),
        reward,
        vec![false; states],
        0, // corner start
        2 * k,
        vec![false; states],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn plain_grid() -> DualObsEnv {
        make_dual_grid(5, 5, (4, 4), &[], 7).unwrap()
    }

    #[test]
    fn one_hot_encoder_by_construction() {
        let env = plain_grid();
        let obs = env.observe(SpaceTag::E, 7);
        assert_eq!(obs.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(obs.iter().filter(|v| **v == 0.0).count(), 24);
    }

    #[test]
    fn encoders_are_injective_on_both_spaces() {
        let env = plain_grid();
        for s1 in 0..env.state_count() {
            for s2 in (s1 + 1)..env.state_count() {
                for space in [SpaceTag::E, SpaceTag::L] {
                    let d: f64 = env
                        .observe(space, s1)
                        .iter()
                        .zip(env.observe(space, s2))
                        .map(|(a, b)| (a - b).abs())
                        .sum();
                    assert!(d > 0.0, "collision in {space} between {s1} and {s2}");
                }
            }
        }
    }

    #[test]
    fn wall_bump_keeps_state() {
        let env = plain_grid();
        let mut r = rng::seeded(0);
        // Top-left corner, moving up.
        let (next, done, reward) = step(&env, 0, 0, &mut r);
        assert_eq!(next, 0);
        assert!(!done);
        assert_eq!(reward, 0.0);
    }

    #[test]
    fn deterministic_grid_move() {
        let env = plain_grid();
        let mut r = rng::seeded(0);
        // Cell (2,2) = 12, moving up lands in (1,2) = 7.
        let (next, done, _) = step(&env, 12, 0, &mut r);
        assert_eq!(next, 7);
        assert!(!done);
    }

    #[test]
    fn entering_goal_pays_one_and_terminates() {
        let env = plain_grid();
        let mut r = rng::seeded(0);
        // Cell (4,3) = 23, moving right enters the goal (4,4) = 24.
        let (next, done, reward) = step(&env, 23, 3, &mut r);
        assert_eq!(next, 24);
        assert!(done);
        assert_eq!(reward, 1.0);
    }

    #[test]
    fn stochastic_kernel_frequencies_match() {
        let env = DualObsEnv::from_parts(
            "two-state",
            1,
            vec![vec![(0, 0.7), (1, 0.3)], vec![(1, 1.0)]],
            0.9,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0], vec![1.0]],
            vec![0.0, 0.0],
            vec![false, false],
            0,
            10,
            vec![false, false],
        )
        .unwrap();
        let mut r = rng::seeded(123);
        let mut stayed = 0usize;
        for _ in 0..10_000 {
            let (next, _, _) = step(&env, 0, 0, &mut r);
            if next == 0 {
                stayed += 1;
            }
        }
        let freq = stayed as f64 / 10_000.0;
        assert!((freq - 0.7).abs() < 0.02, "empirical frequency {freq}");
    }

    #[test]
    fn transition_mass_must_sum_to_one() {
        let err = DualObsEnv::from_parts(
            "bad",
            1,
            vec![vec![(0, 0.5), (1, 0.4)], vec![(1, 1.0)]],
            0.9,
            vec![vec![1.0], vec![2.0]],
            vec![vec![1.0], vec![2.0]],
            vec![0.0, 0.0],
            vec![false, false],
            0,
            10,
            vec![false, false],
        );
        assert!(err.is_err());
    }

    /// Breadth-first distances to the goal over the deterministic grid,
    /// independent of value iteration.
    fn bfs_distances(env: &DualObsEnv, goal: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; env.state_count()];
        dist[goal] = 0;
        let mut queue = std::collections::VecDeque::from([goal]);
        while let Some(s) = queue.pop_front() {
            for from in 0..env.state_count() {
                if env.is_terminal(from) {
                    continue;
                }
                for a in 0..env.action_count() {
                    let (next, p) = env.kernel(from, a)[0];
                    assert_eq!(p, 1.0);
                    if next == s && dist[from] == usize::MAX {
                        dist[from] = dist[s] + 1;
                        queue.push_back(from);
                    }
                }
            }
        }
        dist
    }

    #[test]
    fn expert_matches_bfs_shortest_paths_everywhere() {
        let env = plain_grid();
        let expert = expert_policy(&env).unwrap();
        let dist = bfs_distances(&env, 24);
        for s in 0..env.state_count() {
            if env.is_terminal(s) {
                continue;
            }
            // BFS-greedy action with the same lowest-index tie break.
            let mut best = 0;
            let mut best_d = usize::MAX;
            for a in 0..env.action_count() {
                let (next, _) = env.kernel(s, a)[0];
                if dist[next] < best_d {
                    best_d = dist[next];
                    best = a;
                }
            }
            let chosen = expert.greedy(env.observe(SpaceTag::E, s));
            assert_eq!(chosen, best, "state {s}");
        }
    }

    #[test]
    fn expert_adjacent_to_goal_moves_into_it() {
        let env = plain_grid();
        let expert = expert_policy(&env).unwrap();
        // Cell (3,4) = 19 is directly above the goal.
        let probs = expert.action_probs(env.observe(SpaceTag::E, 19));
        assert_eq!(probs[1], 1.0, "must move down with probability 1");
    }

    #[test]
    fn equal_value_ties_break_to_lowest_action_index() {
        let env = plain_grid();
        let expert = expert_policy(&env).unwrap();
        // From (0,0) both down (1) and right (3) start shortest paths.
        assert_eq!(expert.greedy(env.observe(SpaceTag::E, 0)), 1);
    }

    #[test]
    fn values_are_a_bellman_fixed_point() {
        let env = plain_grid();
        let values = value_iteration(&env).unwrap();
        assert!(bellman_residual(&env, &values) < 1e-8);
    }

    #[test]
    fn expert_reaches_goal_from_origin() {
        let env = plain_grid();
        let expert = expert_policy(&env).unwrap();
        let mut r = rng::seeded(1);
        let mut s = 0;
        let mut total = 0.0;
        for _ in 0..env.max_episode_steps() {
            let a = expert.sample(env.observe(SpaceTag::E, s), &mut r);
            let (next, done, reward) = step(&env, s, a, &mut r);
            total += reward;
            s = next;
            if done {
                break;
            }
        }
        assert_eq!(total, 1.0);
    }

    fn corridor() -> DualObsEnv {
        make_dual_grid(
            5,
            5,
            (4, 0),
            &[
                (2, 0),
                (2, 1),
                (2, 2),
                (2, 3),
                (3, 0),
                (3, 1),
                (3, 2),
                (3, 3),
            ],
            7,
        )
        .unwrap()
    }

    #[test]
    fn auxiliary_policy_requires_a_blocked_region() {
        let env = plain_grid();
        assert!(matches!(
            auxiliary_policy(&env, 0.1),
            Err(HoilError::NoBlockedRegion)
        ));
    }

    #[test]
    fn auxiliary_never_selects_blocked_entering_actions() {
        let env = corridor();
        for epsilon in [0.0, 0.3, 1.0] {
            let pi1 = auxiliary_policy(&env, epsilon).unwrap();
            for s in 0..env.state_count() {
                if env.is_terminal(s) || env.is_blocked(s) {
                    continue;
                }
                let probs = pi1.action_probs(env.observe(SpaceTag::E, s));
                for a in 0..env.action_count() {
                    let enters_blocked =
                        env.kernel(s, a).iter().any(|&(n, p)| p > 0.0 && env.is_blocked(n));
                    if enters_blocked {
                        assert_eq!(probs[a], 0.0, "state {s} action {a} eps {epsilon}");
                    }
                }
            }
        }
    }

    #[test]
    fn auxiliary_epsilon_one_is_uniform_over_allowed_actions() {
        let env = corridor();
        let pi1 = auxiliary_policy(&env, 1.0).unwrap();
        // Cell (0,2) = 2 is far from the blocked region: all four allowed.
        let probs = pi1.action_probs(env.observe(SpaceTag::E, 2));
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn auxiliary_epsilon_zero_is_deterministic() {
        let env = corridor();
        let pi1 = auxiliary_policy(&env, 0.0).unwrap();
        for s in 0..env.state_count() {
            let probs = pi1.action_probs(env.observe(SpaceTag::E, s));
            assert!(probs.iter().any(|p| *p == 1.0), "state {s}: {probs:?}");
        }
    }

    #[test]
    fn auxiliary_return_never_exceeds_expert_and_loses_on_corridor() {
        let env = corridor();
        let expert_values = value_iteration(&env).unwrap();
        let pi1 = auxiliary_policy(&env, 0.0).unwrap();
        // Discounted evaluation of the deterministic detour policy.
        let eval = policy_evaluation(&env, &pi1);
        for s in 0..env.state_count() {
            if env.is_terminal(s) || env.is_blocked(s) {
                continue;
            }
            assert!(
                eval[s] <= expert_values[s] + 1e-9,
                "state {s}: {} vs {}",
                eval[s],
                expert_values[s]
            );
        }
        // Start state's shortest path crosses the corridor: strict loss.
        assert!(eval[0] < expert_values[0] - 1e-9);
    }

    fn policy_evaluation(env: &DualObsEnv, policy: &Policy) -> Vec<f64> {
        let mut values = vec![0.0; env.state_count()];
        for _ in 0..4_000 {
            let mut delta = 0.0f64;
            for s in 0..env.state_count() {
                if env.is_terminal(s) {
                    continue;
                }
                let probs = policy.action_probs(env.observe(SpaceTag::E, s));
                let mut v = 0.0;
                for (a, pa) in probs.iter().enumerate() {
                    if *pa == 0.0 {
                        continue;
                    }
                    v += pa * q_value(env, &values, s, a);
                }
                delta = delta.max((v - values[s]).abs());
                values[s] = v;
            }
            if delta < 1e-12 {
                break;
            }
        }
        values
    }

    #[test]
    fn goal_must_be_reachable_around_the_blocked_region() {
        // Goal in a corner fully fenced off by blocked cells.
        let env = make_dual_grid(5, 5, (4, 4), &[(3, 4), (4, 3)], 7).unwrap();
        assert!(matches!(
            auxiliary_policy(&env, 0.0),
            Err(HoilError::GoalUnreachable)
        ));
    }

    #[test]
    fn pointmass_identity_encoder_is_the_position() {
        let env =
            make_dual_pointmass_with_scales(1.0, 0.0, 0.5, 3, 3, [1.0, 1.0], [1.3, 0.7]).unwrap();
        let k = POINTMASS_LATTICE;
        let h = 2.0 / (k - 1) as f64;
        for s in [0, 17, k * k - 1] {
            let obs = env.observe(SpaceTag::E, s);
            let expect_x = -1.0 + (s % k) as f64 * h;
            let expect_y = -1.0 + (s / k) as f64 * h;
            assert!((obs[0] - expect_x).abs() < 1e-12);
            assert!((obs[1] - expect_y).abs() < 1e-12);
        }
    }

    #[test]
    fn pointmass_learner_encoder_inverts_exactly() {
        let env = make_dual_pointmass(1.5, 0.3, 1.1, 3, 11).unwrap();
        for s in 0..env.state_count() {
            let obs = env.observe(SpaceTag::L, s).to_vec();
            assert_eq!(env.decode_obs(SpaceTag::L, &obs), Some(s));
        }
    }

    #[test]
    fn pointmass_expert_return_matches_finite_horizon_dp() {
        let env = make_dual_pointmass(1.0, 0.2, 0.9, 3, 5).unwrap();
        let expert = expert_policy(&env).unwrap();
        // Finite-horizon policy evaluation over exactly the episode cap.
        let horizon = env.max_episode_steps();
        let mut v = vec![0.0; env.state_count()];
        for _ in 0..horizon {
            let mut next_v = vec![0.0; env.state_count()];
            for s in 0..env.state_count() {
                let a = expert.greedy(env.observe(SpaceTag::E, s));
                let (ns, _) = env.kernel(s, a)[0];
                next_v[s] = env.reward(s, a) + env.gamma() * v[ns];
            }
            v = next_v;
        }
        // Roll the expert from the corner and accumulate the discounted return.
        let mut r = rng::seeded(2);
        let mut s = env.start_state();
        let mut ret = 0.0;
        for t in 0..horizon {
            let a = expert.greedy(env.observe(SpaceTag::E, s));
            let (next, _, reward) = step(&env, s, a, &mut r);
            ret += env.gamma().powi(t as i32) * reward;
            s = next;
        }
        assert!(
            (ret - v[env.start_state()]).abs() < 1e-9,
            "rollout {ret} vs dp {}",
            v[env.start_state()]
        );
    }

    #[test]
    fn step_never_leaves_the_state_space() {
        let env = make_dual_pointmass(1.0, 0.0, 1.0, 4, 9).unwrap();
        let mut r = rng::seeded(4);
        let mut s = env.start_state();
        for _ in 0..200 {
            let a = r.random_range(0..env.action_count());
            let (next, done, _) = step(&env, s, a, &mut r);
            assert!(next < env.state_count());
            s = if done { env.start_state() } else { next };
        }
    }
}
