//! Canonical benchmark tasks. The corridor grid is the headline
//! support-mismatch task: the expert's unique shortest path crosses a blocked
//! row that the auxiliary policy refuses to enter, and the detour around the
//! gap is longer than the episode cap, so the auxiliary policy never reaches
//! the goal. The mixture chain gives exactly enumerable occupancies for
//! density-ratio oracles.

use crate::data::{analytic_occupancy, OccupancySample};
use crate::density::{sample_mixture_occupancy, MixtureSpec};
use crate::env::{make_dual_grid, DualObsEnv, Policy, SpaceTag};
use crate::rng::Rng;

pub const CORRIDOR_GOAL: (usize, usize) = (4, 0);
pub const CORRIDOR_BLOCKED: [(usize, usize); 8] = [
    (2, 0),
    (2, 1),
    (2, 2),
    (2, 3),
    (3, 0),
    (3, 1),
    (3, 2),
    (3, 3),
];
pub const CORRIDOR_EPSILON: f64 = 0.3;

/// 5x5 corridor grid. Start (0,0), goal (4,0) in the corner; rows 2 and 3
/// are blocked except the far gap in column 4. The expert's unique shortest
/// path runs straight down the blocked column; the only route around the
/// wall runs 12 steps against a 10-step cap, so the detour policy never
/// arrives, and the two-cell depth keeps the unvisited span wide.
pub fn corridor_env(seed: u64) -> DualObsEnv {
    make_dual_grid(5, 5, CORRIDOR_GOAL, &CORRIDOR_BLOCKED, seed)
        .expect("corridor fixture must construct")
}

/// 5-state chain with left/right actions for the delta-mixture fixture.
/// Start in the middle; walls absorb at both ends; no terminal state.
pub fn mixture_chain() -> DualObsEnv {
    let states = 5usize;
    let mut transition = Vec::new();
    for s in 0..states {
        transition.push(vec![(s.saturating_sub(1), 1.0)]); // left
        transition.push(vec![((s + 1).min(states - 1), 1.0)]); // right
    }
    let obs_e: Vec<Vec<f64>> = (0..states)
        .map(|s| (0..states).map(|i| f64::from(i == s)).collect())
        .collect();
    let obs_l: Vec<Vec<f64>> = (0..states)
        .map(|s| vec![0.5 * s as f64 - 1.0, 1.0 - 0.3 * s as f64])
        .collect();
    DualObsEnv::from_parts(
        "mixture-chain",
        2,
        transition,
        0.9,
        obs_e,
        obs_l,
        vec![0.0; states * 2],
        vec![false; states],
        2,
        6,
        vec![false; states],
    )
    .expect("mixture chain must construct")
}

/// Expert walks right, the non-expert walks left; the mixture takes the
/// expert branch with probability delta = 0.5.
pub fn mixture_spec(env: &DualObsEnv) -> MixtureSpec {
    let right = Policy::from_table(env, SpaceTag::E, vec![vec![0.0, 1.0]; env.state_count()]);
    let left = Policy::from_table(env, SpaceTag::E, vec![vec![1.0, 0.0]; env.state_count()]);
    MixtureSpec::new(0.5, right, left)
}

/// Exact mixture occupancy per state-action: the delta-blend of the two
/// component occupancies (occupancies are linear in the episode law).
pub fn mixture_analytic_occupancy(env: &DualObsEnv, spec: &MixtureSpec) -> Vec<f64> {
    let expert = analytic_occupancy(env, &spec.expert);
    let non_expert = analytic_occupancy(env, &spec.non_expert);
    expert
        .iter()
        .zip(non_expert.iter())
        .map(|(e, n)| spec.delta * e + (1.0 - spec.delta) * n)
        .collect()
}

/// Sampled pools for the density fixtures: (mixture samples, expert samples).
pub fn mixture_pools(
    env: &DualObsEnv,
    spec: &MixtureSpec,
    n: usize,
    rng: &mut Rng,
) -> (Vec<OccupancySample>, Vec<OccupancySample>) {
    let mixture = sample_mixture_occupancy(env, spec, n, rng);
    let expert = crate::data::sample_occupancy(env, &spec.expert, n, rng);
    (mixture, expert)
}

/// 3-state stochastic-drift MDP with enumerable occupancy, for the estimator
/// consistency checks.
pub fn drift_env() -> DualObsEnv {
    DualObsEnv::from_parts(
        "drift3",
        2,
        vec![
            vec![(0, 0.2), (1, 0.8)],
            vec![(2, 1.0)],
            vec![(0, 0.5), (2, 0.5)],
            vec![(1, 0.6), (2, 0.4)],
            vec![(0, 1.0)],
            vec![(1, 0.3), (2, 0.7)],
        ],
        0.9,
        vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ],
        vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, -1.0]],
        vec![0.0; 6],
        vec![false; 3],
        0,
        200,
        vec![false; 3],
    )
    .expect("drift fixture must construct")
}

pub fn drift_policy(env: &DualObsEnv) -> Policy {
    Policy::from_table(
        env,
        SpaceTag::E,
        vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5]],
    )
}
