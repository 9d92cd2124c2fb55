//! Reference methods for the comparison suite: behavior cloning, the plain
//! adversarial learner, the importance-weighted learner, the
//! dataset-aggregation learner with unlimited expert-observation access, and
//! an RL upper reference trained on true rewards.

use crate::approx::{Approximator, Head, Optimizer, DEFAULT_HIDDEN};
use crate::data::DualInstance;
use crate::density::{clamp_prob, minmax_normalize};
use crate::env::{DualObsEnv, Policy, SpaceTag};
use crate::error::Result;
use crate::iwre::{
    behavior_clone, collect_batch, policy_update, returns_to_go, train, train_loop, value_update,
    CheckpointCtx, IwreConfig, PolicyBatch, PretrainOutput, TrainOptions, TrainResult,
};
use crate::rng::{self, Rng};
use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Bc,
    Gail,
    Iw,
    Lbc,
    RlOracle,
}

impl BaselineKind {
    pub fn parse(name: &str) -> Option<BaselineKind> {
        match name {
            "bc" => Some(BaselineKind::Bc),
            "gail" => Some(BaselineKind::Gail),
            "iw" => Some(BaselineKind::Iw),
            "lbc" => Some(BaselineKind::Lbc),
            "rl_oracle" | "rl-oracle" => Some(BaselineKind::RlOracle),
            _ => None,
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BaselineKind::Bc => "bc",
            BaselineKind::Gail => "gail",
            BaselineKind::Iw => "iw",
            BaselineKind::Lbc => "lbc",
            BaselineKind::RlOracle => "rl_oracle",
        };
        write!(f, "{name}")
    }
}

/// Maximum-likelihood softmax fit on the learner-space half of the evolving
/// data, the only learner-space data a non-interactive imitator has.
pub fn bc_train(
    evolving: &[DualInstance],
    action_count: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Policy> {
    assert!(!evolving.is_empty());
    let data: Vec<(Vec<f64>, usize)> = evolving
        .iter()
        .map(|d| (d.obs_l.clone(), d.action))
        .collect();
    let net = behavior_clone(&data, action_count, epochs, batch_size, lr, rng)?;
    Ok(Policy::from_net(net, SpaceTag::L))
}

/// Plain adversarial imitation on the learner-space evolving data: no
/// importance weights, no queries.
pub fn gail_train(
    env: &DualObsEnv,
    evolving: &[DualInstance],
    cfg: &IwreConfig,
    rng: &mut Rng,
    checkpoint: Option<&mut dyn FnMut(&CheckpointCtx)>,
) -> Result<TrainResult> {
    train_loop(
        env,
        evolving,
        None,
        cfg,
        TrainOptions::plain_adversarial(),
        rng,
        checkpoint,
    )
}

/// Importance weighting without the rejection/query path: the shared loop
/// with a zero budget, bit-identical to the full pipeline at budget zero.
pub fn iw_train(
    env: &DualObsEnv,
    pretrained: &PretrainOutput,
    cfg: &IwreConfig,
    rng: &mut Rng,
    checkpoint: Option<&mut dyn FnMut(&CheckpointCtx)>,
) -> Result<TrainResult> {
    train(
        env,
        pretrained,
        cfg,
        TrainOptions::importance_only(),
        rng,
        checkpoint,
    )
}

/// Dataset aggregation against the auxiliary policy as teacher, with
/// unmetered access to the expert-side observations: roll the learner,
/// query the teacher's action at every visited state, aggregate, and retrain
/// for `lbc_epochs` per round.
pub struct LbcReport {
    pub policy: Policy,
    /// Aggregate dataset size after each round.
    pub aggregate_sizes: Vec<usize>,
}

pub const LBC_EPOCHS_PER_ROUND: usize = 100;

pub fn lbc_train(
    env: &DualObsEnv,
    pi_1: &Policy,
    cfg: &IwreConfig,
    rng: &mut Rng,
    mut checkpoint: Option<&mut dyn FnMut(&CheckpointCtx)>,
) -> Result<LbcReport> {
    assert_eq!(pi_1.space_tag(), SpaceTag::E);
    let master_seed: u64 = rng.random();
    let mut rollout_rng = rng::derived(master_seed, "lbc-rollouts");
    let mut batch_rng = rng::derived(master_seed, "lbc-batches");
    let init_rng = &mut rng::derived(master_seed, "lbc-init");
    let obs_dim = env.obs_dim(SpaceTag::L);
    let sizes = [&[obs_dim][..], &DEFAULT_HIDDEN[..], &[env.action_count()][..]].concat();
    let mut net = Approximator::new(&sizes, Head::Softmax, init_rng);
    let mut opt = Optimizer::adam_constant(cfg.lr, net.params().len());

    let mut aggregate: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut aggregate_sizes = Vec::new();
    let mut env_steps = 0usize;
    let mut next_checkpoint = cfg.eval_interval;
    // One aggregation round per ~tenth of the step budget.
    let chunk = (cfg.total_steps / 10).max(cfg.batch_size);
    while env_steps < cfg.total_steps {
        // Collect one chunk of learner rollouts and label every visited
        // state with the teacher's action read through the expert encoder.
        let policy_view = Policy::from_net(net.clone(), SpaceTag::L);
        let mut fresh = 0usize;
        while fresh < chunk {
            let traj = crate::data::rollout(env, &policy_view, &mut rollout_rng);
            for step in &traj.steps {
                let teacher_obs = env.observe(SpaceTag::E, step.latent_state);
                let teacher_action = pi_1.greedy(teacher_obs);
                aggregate.push((step.obs.clone(), teacher_action));
            }
            fresh += traj.steps.len();
        }
        env_steps += fresh;
        aggregate_sizes.push(aggregate.len());

        // Retrain over the full aggregate for an update budget of
        // LBC_EPOCHS_PER_ROUND epochs of the fresh chunk.
        let rounds = LBC_EPOCHS_PER_ROUND * chunk.div_ceil(cfg.batch_size);
        for _ in 0..rounds {
            let idx: Vec<usize> = (0..cfg.batch_size.min(aggregate.len()))
                .map(|_| batch_rng.random_range(0..aggregate.len()))
                .collect();
            let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| aggregate[i].0.clone()).collect();
            let (_, grad) = crate::approx::batch_gradient(&net, &inputs, |k, probs| {
                let a = aggregate[idx[k]].1;
                let pa = clamp_prob(probs[a]);
                let mut d = vec![0.0; probs.len()];
                d[a] = -1.0 / pa;
                (-pa.ln(), d)
            })?;
            opt.step(&mut net, &grad);
        }

        if env_steps >= next_checkpoint || env_steps >= cfg.total_steps {
            if let Some(hook) = checkpoint.as_mut() {
                let policy = Policy::from_net(net.clone(), SpaceTag::L);
                hook(&CheckpointCtx {
                    env_steps,
                    policy: &policy,
                    queries_used: 0,
                    coverage: f64::NAN,
                });
            }
            while next_checkpoint <= env_steps {
                next_checkpoint += cfg.eval_interval;
            }
        }
    }
    Ok(LbcReport {
        policy: Policy::from_net(net, SpaceTag::L),
        aggregate_sizes,
    })
}

/// The policy-optimization loop driven by the environment's true rewards
/// under the learner observation space; the upper reference for the
/// comparison suite.
pub fn rl_oracle_train(
    env: &DualObsEnv,
    cfg: &IwreConfig,
    rng: &mut Rng,
    mut checkpoint: Option<&mut dyn FnMut(&CheckpointCtx)>,
) -> Result<Policy> {
    let master_seed: u64 = rng.random();
    let mut rollout_rng = rng::derived(master_seed, "oracle-rollouts");
    let init_rng = &mut rng::derived(master_seed, "oracle-init");
    let obs_dim = env.obs_dim(SpaceTag::L);
    let pi_sizes = [&[obs_dim][..], &DEFAULT_HIDDEN[..], &[env.action_count()][..]].concat();
    let value_sizes = [&[obs_dim][..], &DEFAULT_HIDDEN[..], &[1][..]].concat();
    let mut net = Approximator::new(&pi_sizes, Head::Softmax, init_rng);
    let mut value = Approximator::new(&value_sizes, Head::Linear, init_rng);
    let n_iterations = cfg.total_steps.div_ceil(cfg.batch_size);
    let mut opt_pi = Optimizer::adam(cfg.lr, n_iterations * cfg.update_ratio, net.params().len());
    let mut opt_value = Optimizer::adam(
        cfg.lr,
        n_iterations * cfg.update_ratio,
        value.params().len(),
    );

    let mut env_steps = 0usize;
    let mut next_checkpoint = cfg.eval_interval;
    while env_steps < cfg.total_steps {
        let collected =
            collect_batch(env, &net, cfg.batch_size, cfg.exploration_mix, &mut rollout_rng);
        let fresh = collected.instances;
        env_steps += fresh.len();
        let raw: Vec<f64> = fresh
            .iter()
            .map(|x| env.reward(x.latent_state, x.action))
            .collect();
        let rewards = minmax_normalize(&raw);
        let rtg = returns_to_go(&rewards, &collected.episodes
            .iter()
            .map(|&(s, l, _)| (s, l))
            .collect::<Vec<_>>(), env.gamma());
        let observations: Vec<Vec<f64>> = fresh.iter().map(|x| x.obs.clone()).collect();
        let advantages: Vec<f64> = observations
            .iter()
            .zip(rtg.iter())
            .map(|(obs, r)| r - value.forward(obs)[0])
            .collect();
        let batch = PolicyBatch {
            observations: observations.clone(),
            actions: fresh.iter().map(|x| x.action).collect(),
            advantages,
            old_log_probs: collected.behavior_log_probs,
        };
        for _ in 0..cfg.update_ratio {
            policy_update(&mut net, &batch, &mut opt_pi, cfg.clip_ratio, cfg.entropy_coef)?;
            value_update(&mut value, &observations, &rtg, &mut opt_value)?;
        }
        if env_steps >= next_checkpoint || env_steps >= cfg.total_steps {
            if let Some(hook) = checkpoint.as_mut() {
                let policy = Policy::from_net(net.clone(), SpaceTag::L);
                hook(&CheckpointCtx {
                    env_steps,
                    policy: &policy,
                    queries_used: 0,
                    coverage: f64::NAN,
                });
            }
            while next_checkpoint <= env_steps {
                next_checkpoint += cfg.eval_interval;
            }
        }
    }
    Ok(Policy::from_net(net, SpaceTag::L))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::collect_evolving_data;
    use crate::env::auxiliary_policy;
    use crate::fixtures;
    use crate::rng;

    #[test]
    fn bc_single_pair_argmaxes_that_action() {
        let env = fixtures::corridor_env(7);
        let pair = DualInstance {
            obs_e: env.observe(SpaceTag::E, 3).to_vec(),
            obs_l: env.observe(SpaceTag::L, 3).to_vec(),
            action: 2,
            latent_state: 3,
            time_index: 0,
        };
        let data = vec![pair; 8];
        let policy =
            bc_train(&data, env.action_count(), 200, 8, 1e-2, &mut rng::seeded(1)).unwrap();
        assert_eq!(policy.greedy(env.observe(SpaceTag::L, 3)), 2);
    }

    #[test]
    fn bc_matches_a_deterministic_teacher_where_it_goes() {
        let env = fixtures::corridor_env(7);
        let pi1 = auxiliary_policy(&env, 0.0).unwrap();
        let evolving = collect_evolving_data(&env, &pi1, 20, &mut rng::seeded(2));
        let policy =
            bc_train(&evolving, env.action_count(), 400, 64, 1e-3, &mut rng::seeded(3)).unwrap();
        for inst in &evolving {
            let teacher = pi1.greedy(env.observe(SpaceTag::E, inst.latent_state));
            let learner = policy.greedy(&inst.obs_l);
            assert_eq!(learner, teacher, "state {}", inst.latent_state);
        }
    }

    #[test]
    fn lbc_aggregate_grows_monotonically() {
        let env = fixtures::corridor_env(7);
        let pi1 = auxiliary_policy(&env, 0.0).unwrap();
        let cfg = IwreConfig {
            total_steps: 600,
            batch_size: 128,
            eval_interval: 600,
            ..IwreConfig::default()
        };
        let report = lbc_train(&env, &pi1, &cfg, &mut rng::seeded(4), None).unwrap();
        for pair in report.aggregate_sizes.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!(report.aggregate_sizes.len() >= 2);
    }

    #[test]
    fn rl_oracle_stays_near_uniform_without_reward_signal() {
        // A reward-free variant: every reward is zero, so min-max
        // normalization yields a constant 0.5 stream and only entropy acts.
        let env = fixtures::corridor_env(7);
        let zero_reward_env = crate::env::DualObsEnv::from_parts(
            "zero-reward",
            env.action_count(),
            (0..env.state_count() * env.action_count())
                .map(|i| env.kernel(i / env.action_count(), i % env.action_count()).to_vec())
                .collect(),
            env.gamma(),
            (0..env.state_count())
                .map(|s| env.observe(SpaceTag::E, s).to_vec())
                .collect(),
            (0..env.state_count())
                .map(|s| env.observe(SpaceTag::L, s).to_vec())
                .collect(),
            vec![0.0; env.state_count() * env.action_count()],
            (0..env.state_count()).map(|s| env.is_terminal(s)).collect(),
            env.start_state(),
            env.max_episode_steps(),
            vec![false; env.state_count()],
        )
        .unwrap();
        let cfg = IwreConfig {
            total_steps: 2000,
            batch_size: 128,
            eval_interval: 2000,
            entropy_coef: 0.05,
            ..IwreConfig::default()
        };
        let policy = rl_oracle_train(&zero_reward_env, &cfg, &mut rng::seeded(5), None).unwrap();
        // Probabilities at the start state stay spread out.
        let probs = policy.action_probs(zero_reward_env.observe(SpaceTag::L, 0));
        let max = probs.iter().cloned().fold(0.0, f64::max);
        assert!(max < 0.6, "policy should stay near uniform: {probs:?}");
    }
}
