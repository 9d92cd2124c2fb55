//! Trajectories, occupancy-measure sampling, evolving-data collection, exact
//! support-set computation, and dataset persistence.
//!
//! `latent_state` fields exist for oracle tests and reports only; learner
//! code consumes instances through `learner_view`, which strips them.

use crate::container::{Container, Reader, Writer};
use crate::env::{DualObsEnv, Policy, SpaceTag};
use crate::error::{HoilError, Result};
use crate::rng::Rng;
use rand::Rng as _;
use std::collections::BTreeSet;
use std::path::Path;

/// One observation-action pair in a single observation space.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub obs: Vec<f64>,
    pub action: usize,
    pub space_tag: SpaceTag,
    /// Oracle-only; never fed to learners.
    pub latent_state: usize,
    pub time_index: usize,
}

impl Instance {
    /// What a learner is allowed to see.
    pub fn learner_view(&self) -> (&[f64], usize) {
        (&self.obs, self.action)
    }
}

/// Both observations of the same latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct DualInstance {
    pub obs_e: Vec<f64>,
    pub obs_l: Vec<f64>,
    pub action: usize,
    pub latent_state: usize,
    pub time_index: usize,
}

impl DualInstance {
    pub fn side(&self, space: SpaceTag) -> Instance {
        Instance {
            obs: match space {
                SpaceTag::E => self.obs_e.clone(),
                SpaceTag::L => self.obs_l.clone(),
            },
            action: self.action,
            space_tag: space,
            latent_state: self.latent_state,
            time_index: self.time_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub steps: Vec<T>,
    /// Undiscounted sum of true rewards.
    pub episode_return: f64,
    /// True when the episode ended in a terminal state rather than the cap.
    pub terminated: bool,
}

/// An instance drawn from a policy's occupancy measure, weighted gamma^t.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySample {
    pub instance: Instance,
    pub weight: f64,
}

/// One episode under `policy`, recording the policy's own observation space.
pub fn rollout(env: &DualObsEnv, policy: &Policy, rng: &mut Rng) -> Trajectory<Instance> {
    let space = policy.space_tag();
    let mut steps = Vec::new();
    let mut state = env.start_state();
    let mut episode_return = 0.0;
    let mut terminated = false;
    for t in 0..env.max_episode_steps() {
        if env.is_terminal(state) {
            terminated = true;
            break;
        }
        let obs = env.observe(space, state);
        let action = policy.sample(obs, rng);
        let (next, done, reward) = crate::env::step(env, state, action, rng);
        steps.push(Instance {
            obs: obs.to_vec(),
            action,
            space_tag: space,
            latent_state: state,
            time_index: t,
        });
        episode_return += reward;
        state = next;
        if done {
            terminated = true;
            break;
        }
    }
    Trajectory {
        steps,
        episode_return,
        terminated,
    }
}

/// One episode under the policy's greedy (argmax) actions; the evaluation
/// protocol. The generator only feeds environment stochasticity.
pub fn rollout_greedy(env: &DualObsEnv, policy: &Policy, rng: &mut Rng) -> Trajectory<Instance> {
    let space = policy.space_tag();
    let mut steps = Vec::new();
    let mut state = env.start_state();
    let mut episode_return = 0.0;
    let mut terminated = false;
    for t in 0..env.max_episode_steps() {
        if env.is_terminal(state) {
            terminated = true;
            break;
        }
        let obs = env.observe(space, state);
        let action = policy.greedy(obs);
        let (next, done, reward) = crate::env::step(env, state, action, rng);
        steps.push(Instance {
            obs: obs.to_vec(),
            action,
            space_tag: space,
            latent_state: state,
            time_index: t,
        });
        episode_return += reward;
        state = next;
        if done {
            terminated = true;
            break;
        }
    }
    Trajectory {
        steps,
        episode_return,
        terminated,
    }
}

/// One episode recording both observations of every visited state.
pub fn rollout_dual(env: &DualObsEnv, policy: &Policy, rng: &mut Rng) -> Trajectory<DualInstance> {
    let space = policy.space_tag();
    let mut steps = Vec::new();
    let mut state = env.start_state();
    let mut episode_return = 0.0;
    let mut terminated = false;
    for t in 0..env.max_episode_steps() {
        if env.is_terminal(state) {
            terminated = true;
            break;
        }
        let action = policy.sample(env.observe(space, state), rng);
        let (next, done, reward) = crate::env::step(env, state, action, rng);
        steps.push(DualInstance {
            obs_e: env.observe(SpaceTag::E, state).to_vec(),
            obs_l: env.observe(SpaceTag::L, state).to_vec(),
            action,
            latent_state: state,
            time_index: t,
        });
        episode_return += reward;
        state = next;
        if done {
            terminated = true;
            break;
        }
    }
    Trajectory {
        steps,
        episode_return,
        terminated,
    }
}

/// Roll episodes until `n_samples` weighted instances are collected. The
/// weighted empirical measure estimates the occupancy measure up to its
/// normalization constant; the final episode is truncated to land exactly on
/// `n_samples`.
pub fn sample_occupancy(
    env: &DualObsEnv,
    policy: &Policy,
    n_samples: usize,
    rng: &mut Rng,
) -> Vec<OccupancySample> {
    assert!(n_samples >= 1);
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let traj = rollout(env, policy, rng);
        for instance in traj.steps {
            let weight = env.gamma().powi(instance.time_index as i32);
            out.push(OccupancySample { instance, weight });
            if out.len() == n_samples {
                break;
            }
        }
    }
    out
}

/// Default number of auxiliary-policy trajectories in the evolving data.
pub const DEFAULT_EVOLVING_TRAJECTORIES: usize = 20;

/// Dual-recorded rollouts of the auxiliary policy, flattened.
pub fn collect_evolving_data(
    env: &DualObsEnv,
    pi_1: &Policy,
    n_trajectories: usize,
    rng: &mut Rng,
) -> Vec<DualInstance> {
    assert!(n_trajectories >= 1);
    let mut out = Vec::new();
    for _ in 0..n_trajectories {
        out.extend(rollout_dual(env, pi_1, rng).steps);
    }
    out
}

// ---------------------------------------------------------------------------
// Exact support computation
// ---------------------------------------------------------------------------

/// Ground-truth class of a state-action pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportClass {
    /// In the expert support but not the auxiliary policy's.
    Latent,
    /// In both supports.
    Observed,
    /// Outside the expert support.
    NonExpert,
}

/// Disjoint partition of state-action space into latent demonstration (H),
/// observed demonstration (O), and non-expert (N) sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportPartition {
    pub h: BTreeSet<(usize, usize)>,
    pub o: BTreeSet<(usize, usize)>,
    pub n: BTreeSet<(usize, usize)>,
}

impl SupportPartition {
    pub fn classify(&self, state: usize, action: usize) -> SupportClass {
        let key = (state, action);
        if self.h.contains(&key) {
            SupportClass::Latent
        } else if self.o.contains(&key) {
            SupportClass::Observed
        } else {
            SupportClass::NonExpert
        }
    }

    pub fn total(&self) -> usize {
        self.h.len() + self.o.len() + self.n.len()
    }
}

/// Earliest arrival time of each state when following positive-probability
/// actions of `policy` from the start state, within the episode cap.
fn earliest_arrival(env: &DualObsEnv, policy: &Policy) -> Vec<Option<usize>> {
    let mut arrival = vec![None; env.state_count()];
    arrival[env.start_state()] = Some(0);
    let mut frontier = vec![env.start_state()];
    let mut t = 0;
    while !frontier.is_empty() && t < env.max_episode_steps() {
        let mut next_frontier = Vec::new();
        for &s in &frontier {
            if env.is_terminal(s) {
                continue;
            }
            let probs = policy.action_probs(env.observe(policy.space_tag(), s));
            for (a, pa) in probs.iter().enumerate() {
                if *pa <= 0.0 {
                    continue;
                }
                for &(next, p) in env.kernel(s, a) {
                    if p > 0.0 && arrival[next].is_none() {
                        arrival[next] = Some(t + 1);
                        next_frontier.push(next);
                    }
                }
            }
        }
        frontier = next_frontier;
        t += 1;
    }
    arrival
}

/// Exact occupancy support of a policy: pairs (s, a) where s is reachable in
/// time to act and the policy gives a positive probability.
pub fn occupancy_support(env: &DualObsEnv, policy: &Policy) -> BTreeSet<(usize, usize)> {
    let arrival = earliest_arrival(env, policy);
    let mut support = BTreeSet::new();
    for s in 0..env.state_count() {
        match arrival[s] {
            Some(t) if t < env.max_episode_steps() && !env.is_terminal(s) => {
                let probs = policy.action_probs(env.observe(policy.space_tag(), s));
                for (a, pa) in probs.iter().enumerate() {
                    if *pa > 0.0 {
                        support.insert((s, a));
                    }
                }
            }
            _ => {}
        }
    }
    support
}

/// Exact H/O/N partition from reachability analysis. A combinatorial object:
/// independent of any random seed.
pub fn support_sets(env: &DualObsEnv, pi_e: &Policy, pi_1: &Policy) -> SupportPartition {
    let supp_e = occupancy_support(env, pi_e);
    let supp_1 = occupancy_support(env, pi_1);
    let mut h = BTreeSet::new();
    let mut o = BTreeSet::new();
    let mut n = BTreeSet::new();
    for s in 0..env.state_count() {
        for a in 0..env.action_count() {
            let key = (s, a);
            if supp_e.contains(&key) {
                if supp_1.contains(&key) {
                    o.insert(key);
                } else {
                    h.insert(key);
                }
            } else {
                n.insert(key);
            }
        }
    }
    SupportPartition { h, o, n }
}

/// Exact discounted occupancy per state-action pair, truncated at the episode
/// cap exactly as the sampler truncates. Unnormalized: total mass is the
/// expected discounted episode length.
pub fn analytic_occupancy(env: &DualObsEnv, policy: &Policy) -> Vec<f64> {
    let states = env.state_count();
    let actions = env.action_count();
    let mut occ = vec![0.0; states * actions];
    let mut dist = vec![0.0; states];
    dist[env.start_state()] = 1.0;
    for t in 0..env.max_episode_steps() {
        let discount = env.gamma().powi(t as i32);
        let mut next_dist = vec![0.0; states];
        for s in 0..states {
            if dist[s] == 0.0 || env.is_terminal(s) {
                continue;
            }
            let probs = policy.action_probs(env.observe(policy.space_tag(), s));
            for (a, pa) in probs.iter().enumerate() {
                if *pa == 0.0 {
                    continue;
                }
                occ[s * actions + a] += discount * dist[s] * pa;
                for &(next, p) in env.kernel(s, a) {
                    next_dist[next] += dist[s] * pa * p;
                }
            }
        }
        dist = next_dist;
    }
    occ
}

/// Weighted empirical state-action measure of a sample set, on the same
/// layout as `analytic_occupancy`.
pub fn empirical_occupancy(env: &DualObsEnv, samples: &[OccupancySample]) -> Vec<f64> {
    let mut occ = vec![0.0; env.state_count() * env.action_count()];
    for s in samples {
        occ[s.instance.latent_state * env.action_count() + s.instance.action] += s.weight;
    }
    occ
}

/// Total-variation distance between two measures after normalizing each.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    assert!(sa > 0.0 && sb > 0.0);
    0.5 * a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x / sa - y / sb).abs())
        .sum::<f64>()
}

/// Draw `k` indices proportional to `weights`, with replacement.
pub fn weighted_indices(weights: &[f64], k: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(!weights.is_empty());
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        assert!(*w >= 0.0);
        acc += w;
        cumulative.push(acc);
    }
    assert!(acc > 0.0, "all weights are zero");
    (0..k)
        .map(|_| {
            let draw: f64 = rng.random_range(0.0..acc);
            cumulative.partition_point(|c| *c <= draw).min(weights.len() - 1)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub env_id: String,
    pub obs_dim_e: usize,
    pub obs_dim_l: usize,
    pub gamma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Dual(Vec<DualInstance>),
    Single(Vec<Instance>),
}

pub fn save_dataset(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
    dataset: &Dataset,
) -> Result<()> {
    dataset_container(header, dataset).save(path)
}

/// The serialized form of a dataset; also used for content hashing.
pub fn dataset_container(header: &DatasetHeader, dataset: &Dataset) -> Container {
    let mut c = Container::new("dataset");
    c.put("env_id", &header.env_id);
    c.put("obs_dim_e", header.obs_dim_e);
    c.put("obs_dim_l", header.obs_dim_l);
    c.put("gamma_bits", format!("{:016x}", header.gamma.to_bits()));
    c.put("seed", header.seed);
    match dataset {
        Dataset::Dual(rows) => {
            c.put("layout", "dual");
            for row in rows {
                let mut w = Writer::new();
                w.u32(row.latent_state as u32);
                w.u32(row.time_index as u32);
                w.u32(row.action as u32);
                w.f64s(&row.obs_e);
                w.f64s(&row.obs_l);
                c.records.push(w.0);
            }
        }
        Dataset::Single(rows) => {
            let tag = rows.first().map(|r| r.space_tag).unwrap_or(SpaceTag::E);
            assert!(
                rows.iter().all(|r| r.space_tag == tag),
                "a single-space dataset must be homogeneous"
            );
            c.put("layout", format!("single-{tag}"));
            for row in rows {
                let mut w = Writer::new();
                w.u32(row.latent_state as u32);
                w.u32(row.time_index as u32);
                w.u32(row.action as u32);
                w.f64s(&row.obs);
                c.records.push(w.0);
            }
        }
    }
    c
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Dataset)> {
    let c = Container::load(path)?;
    if c.kind != "dataset" {
        return Err(HoilError::Parse {
            location: "line 1".to_string(),
            message: format!("expected a dataset container, got `{}`", c.kind),
        });
    }
    let gamma_bits = u64::from_str_radix(c.require("gamma_bits")?, 16).map_err(|e| {
        HoilError::Parse {
            location: "header key `gamma_bits`".to_string(),
            message: e.to_string(),
        }
    })?;
    let parse_usize = |key: &str| -> Result<usize> {
        c.require(key)?.parse().map_err(|_| HoilError::Parse {
            location: format!("header key `{key}`"),
            message: "expected an integer".to_string(),
        })
    };
    let header = DatasetHeader {
        env_id: c.require("env_id")?.to_string(),
        obs_dim_e: parse_usize("obs_dim_e")?,
        obs_dim_l: parse_usize("obs_dim_l")?,
        gamma: f64::from_bits(gamma_bits),
        seed: c.require("seed")?.parse().map_err(|_| HoilError::Parse {
            location: "header key `seed`".to_string(),
            message: "expected an integer".to_string(),
        })?,
    };
    let layout = c.require("layout")?.to_string();
    let dataset = match layout.as_str() {
        "dual" => {
            let mut rows = Vec::with_capacity(c.records.len());
            for rec in &c.records {
                let mut r = Reader::new(rec);
                let latent_state = r.u32()? as usize;
                let time_index = r.u32()? as usize;
                let action = r.u32()? as usize;
                let obs_e = r.f64s()?;
                let obs_l = r.f64s()?;
                r.finish()?;
                rows.push(DualInstance {
                    obs_e,
                    obs_l,
                    action,
                    latent_state,
                    time_index,
                });
            }
            Dataset::Dual(rows)
        }
        "single-E" | "single-L" => {
            let space_tag = if layout.ends_with('E') {
                SpaceTag::E
            } else {
                SpaceTag::L
            };
            let mut rows = Vec::with_capacity(c.records.len());
            for rec in &c.records {
                let mut r = Reader::new(rec);
                let latent_state = r.u32()? as usize;
                let time_index = r.u32()? as usize;
                let action = r.u32()? as usize;
                let obs = r.f64s()?;
                r.finish()?;
                rows.push(Instance {
                    obs,
                    action,
                    space_tag,
                    latent_state,
                    time_index,
                });
            }
            Dataset::Single(rows)
        }
        other => {
            return Err(HoilError::Parse {
                location: "header key `layout`".to_string(),
                message: format!("unknown layout `{other}`"),
            })
        }
    };
    Ok((header, dataset))
}
