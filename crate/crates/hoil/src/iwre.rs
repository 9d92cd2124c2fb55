//! The training pipeline: pretraining of the expert-side calibrator pair,
//! the main loop with budgeted observation-coexistence queries and teacher
//! calibration, and the clipped-surrogate policy update.
//!
//! Query/teacher orientation (see the convention note in `density`): the
//! query trigger fires on the student's raw indicator (+1 means "novel, not
//! yet matched by the weighted demonstrations"), while the teacher label
//! feeds the demonstration-side probability of the pretrained pair. The
//! teacher-label-to-target mapping during calibration is
//!
//!   H -> D2 toward the demonstration side (raw 0), g2 toward 1
//!   O -> D2 toward the demonstration side (raw 0), g2 toward 0
//!   N -> D2 toward the non-expert side  (raw 1), g2 toward 1
//!
//! which is the unique mapping under which the student pair converges to the
//! teacher pair's ternary output.

use crate::approx::{batch_gradient, Approximator, Head, Optimizer, DEFAULT_HIDDEN};
use crate::data::{collect_evolving_data, DualInstance, Instance};
use crate::density::{
    clamp_prob, importance_weight, minmax_normalize, pseudo_reward, weighted_adversarial_loss,
    Discriminator,
};
use crate::env::{DualObsEnv, Policy, SpaceTag};
use crate::error::{HoilError, Result};
use crate::rejection::{
    rejection_loss, LabeledPool, RejectionConfig, RejectionHead, RoleExample, TernaryLabel,
};
use crate::rng::{self, Rng};
use rand::Rng as _;
use std::collections::VecDeque;

/// Hard cap on observation-coexistence queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryBudget {
    max_queries: Option<u64>,
    used: u64,
}

impl QueryBudget {
    pub fn capped(max_queries: u64) -> Self {
        QueryBudget {
            max_queries: Some(max_queries),
            used: 0,
        }
    }

    pub fn unlimited() -> Self {
        QueryBudget {
            max_queries: None,
            used: 0,
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn max_queries(&self) -> Option<u64> {
        self.max_queries
    }

    pub fn remaining(&self) -> Option<u64> {
        self.max_queries.map(|m| m - self.used)
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining() == Some(0)
    }

    fn try_spend(&mut self) -> Result<()> {
        if let Some(max) = self.max_queries {
            if self.used >= max {
                return Err(HoilError::BudgetOverflow {
                    used: self.used + 1,
                    max,
                });
            }
        }
        self.used += 1;
        Ok(())
    }
}

/// Everything pretraining hands to the main loop.
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub evolving: Vec<DualInstance>,
    pub d1: Discriminator,
    pub g1: RejectionHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    pub instance: Instance,
    pub label: TernaryLabel,
}

/// FIFO store of teacher-labeled instances awaiting a calibration update.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<CalibrationRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer {
            capacity,
            records: VecDeque::new(),
        }
    }

    pub fn push(&mut self, record: CalibrationRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() == self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn oldest(&self) -> Option<&CalibrationRecord> {
        self.records.front()
    }

    fn drain(&mut self) -> Vec<CalibrationRecord> {
        self.records.drain(..).collect()
    }
}

/// Pipeline hyperparameters. Defaults follow the shared experiment protocol.
#[derive(Debug, Clone)]
pub struct IwreConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    /// Policy updates per discriminator update.
    pub update_ratio: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub clip_ratio: f64,
    pub n_evolving_trajectories: usize,
    pub pretrain_epochs: usize,
    pub bc_init_epochs: usize,
    pub buffer_capacity: usize,
    pub calibration_epochs: usize,
    pub rejection: RejectionConfig,
    /// Checkpoint cadence in environment steps.
    pub eval_interval: usize,
    /// Feed teacher-confirmed latent-demonstration queries back into the
    /// weighted demonstration pool (off by default).
    pub queried_into_weighted_set: bool,
    /// Uniform mixing weight of the behavior policy during collection. The
    /// surrogate ratio is importance-corrected against the mixed sampler, so
    /// the learned policy itself may go deterministic while every action
    /// keeps a sampling floor (a collapsed softmax is otherwise absorbing:
    /// both the surrogate and entropy gradients vanish with the probability).
    pub exploration_mix: f64,
}

impl Default for IwreConfig {
    fn default() -> Self {
        IwreConfig {
            total_steps: 60_000,
            batch_size: 256,
            update_ratio: 3,
            lr: 3e-4,
            entropy_coef: 0.01,
            clip_ratio: 0.2,
            n_evolving_trajectories: 20,
            pretrain_epochs: 100,
            bc_init_epochs: 100,
            buffer_capacity: 5000,
            calibration_epochs: 4,
            rejection: RejectionConfig::default(),
            eval_interval: 5000,
            queried_into_weighted_set: false,
            exploration_mix: 0.0,
        }
    }
}

/// One batch of rollouts under the epsilon-mixed behavior policy, with the
/// behavior log-probabilities of the taken actions recorded for the
/// importance-corrected surrogate.
pub struct CollectedBatch {
    pub instances: Vec<Instance>,
    /// (start, len, terminated) per episode.
    pub episodes: Vec<(usize, usize, bool)>,
    pub behavior_log_probs: Vec<f64>,
}

pub fn collect_batch(
    env: &DualObsEnv,
    net: &Approximator,
    batch_size: usize,
    mix: f64,
    rng: &mut Rng,
) -> CollectedBatch {
    assert!((0.0..1.0).contains(&mix));
    let actions = env.action_count();
    let mut instances = Vec::with_capacity(batch_size + 16);
    let mut episodes = Vec::new();
    let mut behavior_log_probs = Vec::new();
    assert!(
        !env.is_terminal(env.start_state()),
        "start state must not be terminal"
    );
    while instances.len() < batch_size {
        let start = instances.len();
        let mut state = env.start_state();
        let mut terminated = false;
        for t in 0..env.max_episode_steps() {
            if env.is_terminal(state) {
                terminated = true;
                break;
            }
            let obs = env.observe(SpaceTag::L, state);
            let probs = net.forward(obs);
            let behavior: Vec<f64> = probs
                .iter()
                .map(|p| (1.0 - mix) * p + mix / actions as f64)
                .collect();
            let draw: f64 = rng.random();
            let mut acc = 0.0;
            let mut action = actions - 1;
            for (a, p) in behavior.iter().enumerate() {
                acc += p;
                if draw < acc {
                    action = a;
                    break;
                }
            }
            let (next, done, _) = crate::env::step(env, state, action, rng);
            instances.push(Instance {
                obs: obs.to_vec(),
                action,
                space_tag: SpaceTag::L,
                latent_state: state,
                time_index: t,
            });
            behavior_log_probs.push(clamp_prob(behavior[action]).ln());
            state = next;
            if done {
                terminated = true;
                break;
            }
        }
        episodes.push((start, instances.len() - start, terminated));
    }
    CollectedBatch {
        instances,
        episodes,
        behavior_log_probs,
    }
}

/// Collect evolving data and train the expert-side pair: the discriminator
/// on the adversarial objective, the rejection head on the rejection loss,
/// over the union of the demonstrations and the evolving data.
pub fn pretrain(
    env: &DualObsEnv,
    pi_1: &Policy,
    demos_e: &[Instance],
    cfg: &IwreConfig,
    rng: &mut Rng,
) -> Result<PretrainOutput> {
    let evolving = collect_evolving_data(env, pi_1, cfg.n_evolving_trajectories, rng);
    pretrain_with_evolving(env, evolving, demos_e, cfg, rng)
}

/// Pretraining over evolving data that was collected elsewhere, so the
/// harness can share one fixture across every method of a comparison batch.
pub fn pretrain_with_evolving(
    env: &DualObsEnv,
    evolving: Vec<DualInstance>,
    demos_e: &[Instance],
    cfg: &IwreConfig,
    rng: &mut Rng,
) -> Result<PretrainOutput> {
    assert!(!demos_e.is_empty(), "need at least one demonstration");
    assert!(demos_e.iter().all(|x| x.space_tag == SpaceTag::E));
    assert!(!evolving.is_empty(), "evolving data must be nonempty");
    let (d1, g1) = train_calibrator_pair(env, &evolving, demos_e, cfg, rng)?;
    Ok(PretrainOutput { evolving, d1, g1 })
}

/// Output-bias prior for the pretrained discriminator: state-action pairs
/// carrying no evidence from either pool default to the policy side (raw
/// near sigmoid(PRIOR)), so the teacher reads them as non-expert instead of
/// extrapolating demonstration-side onto never-demonstrated actions.
const CALIBRATOR_OUTPUT_PRIOR: f64 = 2.0;

fn train_calibrator_pair(
    env: &DualObsEnv,
    evolving: &[DualInstance],
    demos_e: &[Instance],
    cfg: &IwreConfig,
    rng: &mut Rng,
) -> Result<(Discriminator, RejectionHead)> {
    let obs_dim = env.obs_dim(SpaceTag::E);
    let actions = env.action_count();
    let mut d1 = Discriminator::new(obs_dim, actions, SpaceTag::E, rng);
    let last = d1.net().params().len() - 1;
    d1.net_mut().params_mut()[last] = CALIBRATOR_OUTPUT_PRIOR;
    let mut g1 = RejectionHead::new(obs_dim, actions, SpaceTag::E, rng);
    let policy_instances: Vec<Instance> = evolving.iter().map(|d| d.side(SpaceTag::E)).collect();
    let policy_weights: Vec<f64> = policy_instances
        .iter()
        .map(|x| env.gamma().powi(x.time_index as i32))
        .collect();
    let demo_weights: Vec<f64> = demos_e
        .iter()
        .map(|x| env.gamma().powi(x.time_index as i32))
        .collect();
    let n = policy_instances.len() + demos_e.len();
    let rounds = cfg.pretrain_epochs * n.div_ceil(cfg.batch_size);
    crate::rejection::train_joint(
        &mut d1,
        &mut g1,
        &LabeledPool {
            instances: &policy_instances,
            weights: &policy_weights,
            role: 1.0,
        },
        &LabeledPool {
            instances: demos_e,
            weights: &demo_weights,
            role: 0.0,
        },
        &cfg.rejection,
        rounds,
        cfg.batch_size,
        cfg.lr,
        rng,
    )?;
    Ok((d1, g1))
}

/// The student's query signal: +1 exactly when the raw discriminator output
/// and the relaxed rejection output both clear 0.5 (a novel, not-rejected
/// instance).
pub fn query_candidate(d2: &Discriminator, g2: &RejectionHead, x_l: &Instance) -> bool {
    crate::rejection::combined_label(d2.output(x_l), g2.relaxed(x_l)) == TernaryLabel::H
}

/// True iff the combined student label is +1 and budget remains.
pub fn should_query(
    d2: &Discriminator,
    g2: &RejectionHead,
    x_l: &Instance,
    budget: &QueryBudget,
) -> bool {
    query_candidate(d2, g2, x_l) && !budget.is_exhausted()
}

/// Rank query candidates in `batch` by the rejection head's relaxed output,
/// descending, and keep at most `allowance`. Returns indices into `batch`.
pub fn select_queries(
    d2: &Discriminator,
    g2: &RejectionHead,
    batch: &[Instance],
    allowance: usize,
) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = batch
        .iter()
        .enumerate()
        .filter(|(_, x)| query_candidate(d2, g2, x))
        .map(|(i, x)| (i, g2.relaxed(x)))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(allowance);
    scored.into_iter().map(|(i, _)| i).collect()
}

/// The observation-coexistence operation: the environment reveals the
/// expert-space observation of the latent state behind a learner-space
/// instance, spending one unit of budget.
pub fn oc_query(env: &DualObsEnv, x_l: &Instance, budget: &mut QueryBudget) -> Result<Instance> {
    assert_eq!(x_l.space_tag, SpaceTag::L);
    budget.try_spend()?;
    Ok(Instance {
        obs: env.observe(SpaceTag::E, x_l.latent_state).to_vec(),
        action: x_l.action,
        space_tag: SpaceTag::E,
        latent_state: x_l.latent_state,
        time_index: x_l.time_index,
    })
}

/// Calibration state: the replay buffer plus persistent constant-rate Adam
/// moments for the burst updates (burst counts are not known in advance, so
/// no decay schedule applies).
pub struct Calibrator {
    pub buffer: ReplayBuffer,
    opt_d2: Optimizer,
    opt_g2: Optimizer,
    batch_size: usize,
    epochs: usize,
    rng: Rng,
}

impl Calibrator {
    pub fn new(
        cfg: &IwreConfig,
        d2_param_count: usize,
        g2_param_count: usize,
        rng: Rng,
    ) -> Self {
        Calibrator {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            opt_d2: Optimizer::adam_constant(cfg.lr, d2_param_count),
            opt_g2: Optimizer::adam_constant(cfg.lr, g2_param_count),
            batch_size: cfg.batch_size,
            epochs: cfg.calibration_epochs,
            rng,
        }
    }

    /// Push one teacher-labeled instance; when the buffer fills, run the
    /// burst update and clear it.
    pub fn observe(
        &mut self,
        d2: &mut Discriminator,
        g2: &mut RejectionHead,
        instance: Instance,
        label: TernaryLabel,
    ) -> Result<()> {
        self.buffer.push(CalibrationRecord { instance, label });
        if self.buffer.is_full() {
            self.update_now(d2, g2)?;
        }
        Ok(())
    }

    /// Train both student models for the configured epochs over the buffered
    /// records, then clear the buffer. No-op when the buffer is empty.
    pub fn update_now(&mut self, d2: &mut Discriminator, g2: &mut RejectionHead) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let records = self.buffer.drain();
        let mut order: Vec<usize> = (0..records.len()).collect();
        for _ in 0..self.epochs {
            for i in (1..order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(self.batch_size) {
                let inputs: Vec<Vec<f64>> = chunk
                    .iter()
                    .map(|&i| {
                        let x = &records[i].instance;
                        d2.features(&x.obs, x.action)
                    })
                    .collect();
                // H and O calibrate D2 toward the demonstration side (raw 0);
                // N toward the non-expert side (raw 1).
                let d_targets: Vec<f64> = chunk
                    .iter()
                    .map(|&i| match records[i].label {
                        TernaryLabel::H | TernaryLabel::O => 0.0,
                        TernaryLabel::N => 1.0,
                    })
                    .collect();
                // g2 targets: 1 off the observed demonstration, 0 on it.
                let g_targets: Vec<f64> = chunk
                    .iter()
                    .map(|&i| match records[i].label {
                        TernaryLabel::H | TernaryLabel::N => 1.0,
                        TernaryLabel::O => 0.0,
                    })
                    .collect();
                let (_, d_grad) = batch_gradient(d2.net(), &inputs, |k, out| {
                    bce_with_grad(out[0], d_targets[k])
                })?;
                self.opt_d2.step(d2.net_mut(), &d_grad);
                let (_, g_grad) = batch_gradient(g2.net(), &inputs, |k, out| {
                    bce_with_grad(out[0], g_targets[k])
                })?;
                self.opt_g2.step(g2.net_mut(), &g_grad);
            }
        }
        Ok(())
    }
}

fn bce_with_grad(p: f64, target: f64) -> (f64, Vec<f64>) {
    let pc = clamp_prob(p);
    let clamped = p != pc;
    let loss = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
    let d = if clamped {
        0.0
    } else {
        -(target / pc) + (1.0 - target) / (1.0 - pc)
    };
    (loss, vec![d])
}

// ---------------------------------------------------------------------------
// Policy optimization
// ---------------------------------------------------------------------------

/// A batch for the clipped-surrogate update. Rewards have already been
/// normalized and folded into advantages.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub advantages: Vec<f64>,
    pub old_log_probs: Vec<f64>,
}

/// One clipped-surrogate gradient step with an entropy bonus. Returns the
/// surrogate loss value.
pub fn policy_update(
    net: &mut Approximator,
    batch: &PolicyBatch,
    opt: &mut Optimizer,
    clip_ratio: f64,
    entropy_coef: f64,
) -> Result<f64> {
    let (loss, grad) = clipped_surrogate_loss(net, batch, clip_ratio, entropy_coef)?;
    opt.step(net, &grad);
    Ok(loss)
}

/// Loss and gradient of the clipped surrogate plus entropy regularization.
pub fn clipped_surrogate_loss(
    net: &Approximator,
    batch: &PolicyBatch,
    clip_ratio: f64,
    entropy_coef: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = batch.observations.len();
    assert!(n > 0 && batch.actions.len() == n && batch.advantages.len() == n);
    for adv in &batch.advantages {
        if !adv.is_finite() {
            return Err(HoilError::NonFiniteLoss { index: 0 });
        }
    }
    batch_gradient(net, &batch.observations, |i, probs| {
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let p_old = batch.old_log_probs[i].exp();
        let pa = clamp_prob(probs[a]);
        let ratio = pa / p_old;
        let lo = 1.0 - clip_ratio;
        let hi = 1.0 + clip_ratio;
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        // Derivative of min(unclipped, clipped) in the ratio: the clipped
        // branch only flattens outside the band.
        let d_surr_d_ratio = if unclipped <= clipped || (ratio > lo && ratio < hi) {
            adv
        } else {
            0.0
        };
        let entropy: f64 = -probs.iter().map(|p| clamp_prob(*p).ln() * p).sum::<f64>();
        let loss = -unclipped.min(clipped) - entropy_coef * entropy;
        let mut d = vec![0.0; probs.len()];
        for (j, p) in probs.iter().enumerate() {
            d[j] = entropy_coef * (clamp_prob(*p).ln() + 1.0);
            if j == a {
                d[j] += -d_surr_d_ratio / p_old;
            }
        }
        (loss, d)
    })
}

/// Mean squared error regression step for the value baseline.
pub fn value_update(
    net: &mut Approximator,
    observations: &[Vec<f64>],
    targets: &[f64],
    opt: &mut Optimizer,
) -> Result<f64> {
    let (loss, grad) = batch_gradient(net, observations, |i, out| {
        let diff = out[0] - targets[i];
        (diff * diff, vec![2.0 * diff])
    })?;
    opt.step(net, &grad);
    Ok(loss)
}

/// Maximum-likelihood softmax policy fit on (observation, action) pairs.
pub fn behavior_clone(
    data: &[(Vec<f64>, usize)],
    action_count: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Approximator> {
    assert!(!data.is_empty());
    let obs_dim = data[0].0.len();
    let sizes = [&[obs_dim][..], &DEFAULT_HIDDEN[..], &[action_count][..]].concat();
    let mut net = Approximator::new(&sizes, Head::Softmax, rng);
    let rounds = (epochs * data.len().div_ceil(batch_size)).max(1);
    let mut opt = Optimizer::adam(lr, rounds, net.params().len());
    for _ in 0..rounds {
        let idx: Vec<usize> = (0..batch_size.min(data.len()))
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let inputs: Vec<Vec<f64>> = idx.iter().map(|&i| data[i].0.clone()).collect();
        let (_, grad) = batch_gradient(&net, &inputs, |k, probs| {
            let a = data[idx[k]].1;
            let pa = clamp_prob(probs[a]);
            let mut d = vec![0.0; probs.len()];
            d[a] = -1.0 / pa;
            (-pa.ln(), d)
        })?;
        opt.step(&mut net, &grad);
    }
    Ok(net)
}

/// Discounted return-to-go within each trajectory of the batch; trajectory
/// boundaries are given as (start, len) ranges.
pub fn returns_to_go(rewards: &[f64], episodes: &[(usize, usize)], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for &(start, len) in episodes {
        let mut acc = 0.0;
        for i in (start..start + len).rev() {
            acc = rewards[i] + gamma * acc;
            out[i] = acc;
        }
    }
    out
}

/// Return-to-go with absorbing terminals: an episode that ended in a
/// terminal state virtually repeats its final reward out to the horizon.
/// Without this, a pseudo-reward stream that pays per step makes reaching
/// the goal strictly worse than loitering next to it.
pub fn returns_to_go_absorbing(
    rewards: &[f64],
    episodes: &[(usize, usize, bool)],
    gamma: f64,
    horizon: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    for &(start, len, terminated) in episodes {
        // Value of the virtual absorbing stream, as seen one step before it.
        let mut acc = 0.0;
        if terminated && len < horizon {
            let last = rewards[start + len - 1];
            for _ in 0..horizon - len {
                acc = last + gamma * acc;
            }
        }
        for i in (start..start + len).rev() {
            acc = rewards[i] + gamma * acc;
            out[i] = acc;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// The main loop
// ---------------------------------------------------------------------------

/// Variant switches for the shared adversarial training loop.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Weight the evolving-data negatives by the calibrated density ratio.
    /// Off reproduces the plain adversarial baseline.
    pub alpha_weighted: bool,
    pub budget: QueryBudget,
}

impl TrainOptions {
    pub fn iwre(budget: QueryBudget) -> Self {
        TrainOptions {
            alpha_weighted: true,
            budget,
        }
    }

    pub fn importance_only() -> Self {
        TrainOptions {
            alpha_weighted: true,
            budget: QueryBudget::capped(0),
        }
    }

    pub fn plain_adversarial() -> Self {
        TrainOptions {
            alpha_weighted: false,
            budget: QueryBudget::capped(0),
        }
    }
}

/// Checkpoint snapshot handed to the harness.
pub struct CheckpointCtx<'a> {
    pub env_steps: usize,
    pub policy: &'a Policy,
    pub queries_used: u64,
    /// Coverage of the rejection head on the latest update batch.
    pub coverage: f64,
}

pub struct TrainResult {
    pub policy: Policy,
    pub d2: Discriminator,
    pub g2: RejectionHead,
    pub queries_used: u64,
    /// Unique state-action pairs queried, in query order (oracle data for
    /// reports; the learner itself never reads latent states).
    pub queried_pairs: Vec<(usize, usize)>,
    /// Visit counts per state-action pair over the iterations in which at
    /// least one query fired, for query-precision reporting.
    pub query_window_visits: std::collections::BTreeMap<(usize, usize), u64>,
}

/// The full training loop from a pretraining output: collect learner
/// rollouts, compute normalized pseudo-rewards, run `update_ratio` policy
/// updates per discriminator update, update the rejection head, and run the
/// query/calibration pass on the fresh instances.
pub fn train(
    env: &DualObsEnv,
    pretrained: &PretrainOutput,
    cfg: &IwreConfig,
    options: TrainOptions,
    rng: &mut Rng,
    checkpoint: Option<&mut dyn FnMut(&CheckpointCtx)>,
) -> Result<TrainResult> {
    train_loop(
        env,
        &pretrained.evolving,
        Some((&pretrained.d1, &pretrained.g1)),
        cfg,
        options,
        rng,
        checkpoint,
    )
}

/// Loop shared with the plain adversarial baseline, which carries no
/// calibrator pair. Importance weighting and queries both require `teacher`.
pub fn train_loop(
    env: &DualObsEnv,
    evolving_data: &[DualInstance],
    teacher: Option<(&Discriminator, &RejectionHead)>,
    cfg: &IwreConfig,
    options: TrainOptions,
    rng: &mut Rng,
    mut checkpoint: Option<&mut dyn FnMut(&CheckpointCtx)>,
) -> Result<TrainResult> {
    cfg.rejection.validate()?;
    assert!(cfg.total_steps >= cfg.batch_size);
    assert!(!evolving_data.is_empty(), "evolving data must be nonempty");
    if teacher.is_none() {
        assert!(
            !options.alpha_weighted && options.budget.max_queries() == Some(0),
            "importance weighting and queries both need the pretrained pair"
        );
    }
    let master_seed: u64 = rng.random();
    let mut bc_rng = rng::derived(master_seed, "bc-init");
    let mut rollout_rng = rng::derived(master_seed, "rollouts");
    let mut batch_rng = rng::derived(master_seed, "batches");
    let init_rng = &mut rng::derived(master_seed, "model-init");

    let obs_dim = env.obs_dim(SpaceTag::L);
    let actions = env.action_count();

    // Learner policy initialized by behavior cloning the learner-space half
    // of the evolving data.
    let bc_data: Vec<(Vec<f64>, usize)> = evolving_data
        .iter()
        .map(|d| (d.obs_l.clone(), d.action))
        .collect();
    let mut pi2 = behavior_clone(
        &bc_data,
        actions,
        cfg.bc_init_epochs,
        cfg.batch_size,
        cfg.lr,
        &mut bc_rng,
    )?;
    let value_sizes = [&[obs_dim][..], &DEFAULT_HIDDEN[..], &[1][..]].concat();
    let mut value = Approximator::new(&value_sizes, Head::Linear, init_rng);
    let mut d2 = Discriminator::new(obs_dim, actions, SpaceTag::L, init_rng);
    let mut g2 = RejectionHead::new(obs_dim, actions, SpaceTag::L, init_rng);

    let n_iterations = cfg.total_steps.div_ceil(cfg.batch_size);
    let mut opt_pi = Optimizer::adam(cfg.lr, n_iterations * cfg.update_ratio, pi2.params().len());
    let mut opt_value = Optimizer::adam(
        cfg.lr,
        n_iterations * cfg.update_ratio,
        value.params().len(),
    );
    let mut opt_d2 = Optimizer::adam(cfg.lr, n_iterations, d2.net().params().len());
    let mut opt_g2 = Optimizer::adam(cfg.lr, n_iterations, g2.net().params().len());
    let mut calibrator = Calibrator::new(
        cfg,
        d2.net().params().len(),
        g2.net().params().len(),
        rng::derived(master_seed, "calibration"),
    );

    // Evolving-data pool, sampled by occupancy weight. Teacher-confirmed
    // latent-demonstration queries go to a separate set that joins every
    // negative batch whole: their importance weights are large and a
    // sampled-in pin would be too high-variance to hold.
    let evolving: Vec<DualInstance> = evolving_data.to_vec();
    let evolving_weights: Vec<f64> = evolving
        .iter()
        .map(|d| env.gamma().powi(d.time_index as i32))
        .collect();
    let mut confirmed_latent: Vec<DualInstance> = Vec::new();
    let mut confirmed_keys: std::collections::BTreeSet<(usize, usize)> =
        std::collections::BTreeSet::new();

    let mut budget = options.budget;
    let mut env_steps: usize = 0;
    let mut next_checkpoint = cfg.eval_interval;
    let mut last_coverage;

    let mut queried_pairs: std::collections::BTreeSet<(usize, usize)> =
        std::collections::BTreeSet::new();
    let mut query_order: Vec<(usize, usize)> = Vec::new();
    let mut query_window_visits: std::collections::BTreeMap<(usize, usize), u64> =
        std::collections::BTreeMap::new();

    while env_steps < cfg.total_steps {
        // --- collect fresh learner rollouts -------------------------------
        let batch = collect_batch(env, &pi2, cfg.batch_size, cfg.exploration_mix, &mut rollout_rng);
        let CollectedBatch {
            instances: fresh,
            episodes,
            behavior_log_probs,
        } = batch;
        env_steps += fresh.len();

        // --- pseudo-rewards, normalized per batch -------------------------
        let raw: Vec<f64> = fresh.iter().map(|x| pseudo_reward(&d2, x)).collect();
        let rewards = minmax_normalize(&raw);
        let rtg =
            returns_to_go_absorbing(&rewards, &episodes, env.gamma(), env.max_episode_steps());
        let observations: Vec<Vec<f64>> = fresh.iter().map(|x| x.obs.clone()).collect();
        let advantages: Vec<f64> = observations
            .iter()
            .zip(rtg.iter())
            .map(|(obs, r)| r - value.forward(obs)[0])
            .collect();
        let policy_batch = PolicyBatch {
            observations: observations.clone(),
            actions: fresh.iter().map(|x| x.action).collect(),
            advantages,
            old_log_probs: behavior_log_probs,
        };

        // --- policy and value updates at the configured ratio -------------
        for _ in 0..cfg.update_ratio {
            policy_update(
                &mut pi2,
                &policy_batch,
                &mut opt_pi,
                cfg.clip_ratio,
                cfg.entropy_coef,
            )?;
            value_update(&mut value, &observations, &rtg, &mut opt_value)?;
        }

        // --- one discriminator update --------------------------------------
        let half = (cfg.batch_size / 2).max(1);
        let fresh_weights: Vec<f64> = fresh
            .iter()
            .map(|x| env.gamma().powi(x.time_index as i32))
            .collect();
        let pi2_idx = crate::data::weighted_indices(&fresh_weights, half, &mut batch_rng);
        let pi1_idx = crate::data::weighted_indices(&evolving_weights, half, &mut batch_rng);
        let pi2_batch: Vec<&Instance> = pi2_idx.iter().map(|&i| &fresh[i]).collect();
        let negatives: Vec<&DualInstance> = pi1_idx
            .iter()
            .map(|&i| &evolving[i])
            .chain(confirmed_latent.iter())
            .collect();
        let pi1_l: Vec<Instance> = negatives.iter().map(|d| d.side(SpaceTag::L)).collect();
        let alphas: Option<Vec<f64>> = options.alpha_weighted.then(|| {
            let (d1, _) = teacher.expect("alpha weighting needs the pretrained pair");
            negatives
                .iter()
                .map(|d| importance_weight(d1, &d.side(SpaceTag::E)))
                .collect()
        });
        let pi1_refs: Vec<&Instance> = pi1_l.iter().collect();
        let adv_loss =
            weighted_adversarial_loss(&d2, &pi2_batch, &pi1_refs, alphas.as_deref())?;
        opt_d2.step(d2.net_mut(), &adv_loss.grad);

        // --- rejection-head update over the same combined batch ------------
        let mixed: Vec<RoleExample> = pi2_batch
            .iter()
            .map(|x| (*x, 1.0))
            .chain(pi1_refs.iter().map(|x| (*x, 0.0)))
            .collect();
        let rej = rejection_loss(&d2, &g2, &mixed, &cfg.rejection)?;
        opt_g2.step(g2.net_mut(), &rej.g_grad);
        last_coverage = rej.coverage;

        // --- budgeted query / calibration pass on the fresh instances ------
        let allowance = match budget.max_queries() {
            None => fresh.len(),
            Some(max) => {
                let accrued =
                    ((max as u128 * env_steps.min(cfg.total_steps) as u128)
                        / cfg.total_steps as u128) as u64;
                accrued.saturating_sub(budget.used()) as usize
            }
        };
        if allowance > 0 {
            let (d1, g1) = teacher.expect("queries need the pretrained pair");
            // The teacher's answer for a state-action pair is deterministic,
            // so each pair is queried at most once per run.
            let mut in_batch = std::collections::BTreeSet::new();
            let unseen: Vec<Instance> = fresh
                .iter()
                .filter(|x| {
                    let key = (x.latent_state, x.action);
                    !queried_pairs.contains(&key) && in_batch.insert(key)
                })
                .cloned()
                .collect();
            let selected = select_queries(&d2, &g2, &unseen, allowance);
            if !selected.is_empty() {
                for x in &fresh {
                    *query_window_visits
                        .entry((x.latent_state, x.action))
                        .or_insert(0) += 1;
                }
            }
            for idx in selected {
                let x_l = &unseen[idx];
                let key = (x_l.latent_state, x_l.action);
                let x_e = oc_query(env, x_l, &mut budget)?;
                let label = crate::rejection::label_instance(d1, g1, &x_e);
                query_order.push(key);
                if label == TernaryLabel::H {
                    if cfg.queried_into_weighted_set && confirmed_keys.insert(key) {
                        confirmed_latent.push(DualInstance {
                            obs_e: x_e.obs.clone(),
                            obs_l: x_l.obs.clone(),
                            action: x_l.action,
                            latent_state: x_l.latent_state,
                            time_index: x_l.time_index,
                        });
                    }
                } else {
                    queried_pairs.insert(key);
                }
                calibrator.observe(&mut d2, &mut g2, x_l.clone(), label)?;
            }
        }
        if let Some(max) = budget.max_queries() {
            assert!(budget.used() <= max, "budget invariant violated");
        }

        // --- checkpoint -----------------------------------------------------
        if env_steps >= next_checkpoint || env_steps >= cfg.total_steps {
            if let Some(hook) = checkpoint.as_mut() {
                let policy = Policy::from_net(pi2.clone(), SpaceTag::L);
                hook(&CheckpointCtx {
                    env_steps,
                    policy: &policy,
                    queries_used: budget.used(),
                    coverage: last_coverage,
                });
            }
            while next_checkpoint <= env_steps {
                next_checkpoint += cfg.eval_interval;
            }
        }
    }

    Ok(TrainResult {
        policy: Policy::from_net(pi2.clone(), SpaceTag::L),
        d2,
        g2,
        queries_used: budget.used(),
        queried_pairs: query_order,
        query_window_visits,
    })
}
