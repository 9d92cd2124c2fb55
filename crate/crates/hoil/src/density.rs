//! Adversarial discriminators over (observation, one-hot action) inputs: the
//! plain adversarial loss, its closed-form optimum, the importance-weight
//! estimator, and the weighted objective for the learner-side discriminator.
//!
//! Sign conventions, fixed once for the whole crate. Both discriminators put
//! the policy-side data in the first (label 1) term and the demonstration
//! side in the second (label 0) term:
//!
//!   pretraining D1:  positives = evolving data,  negatives = demonstrations
//!   training    D2:  positives = learner rollouts, negatives = weighted evolving data
//!
//! Consequences used everywhere else:
//!
//!   raw output          -> rho_policy / (rho_policy + rho_demo); high means
//!                          "policy-only / not matched by demonstrations"
//!   demo_prob = 1 - raw -> high means "demonstration-like"
//!   alpha = (1-raw)/raw -> estimates rho_demo / rho_policy
//!   pseudo-reward -log(raw_clamped) is high on demonstration-like inputs
//!   the H/O/N labeler feeds demo_prob to the indicator (+1 = demo side)
//!   the query trigger feeds raw to the indicator (+1 = novel side)

use crate::approx::{batch_gradient, Approximator, Head, DEFAULT_HIDDEN};
use crate::data::{Instance, OccupancySample};
use crate::env::{DualObsEnv, Policy, SpaceTag};
use crate::error::{HoilError, Result};
use crate::rng::Rng;
use rand::Rng as _;

/// Discriminator outputs are clamped into [CLAMP, 1-CLAMP] before logs and
/// ratios; the losses are undefined at saturation.
pub const OUTPUT_CLAMP: f64 = 1e-6;
pub const WEIGHT_CLIP_MIN: f64 = 1e-2;
pub const WEIGHT_CLIP_MAX: f64 = 1e2;

/// Sigmoid-head network over a concatenated (observation, one-hot action).
#[derive(Debug, Clone)]
pub struct Discriminator {
    net: Approximator,
    space_tag: SpaceTag,
    action_count: usize,
}

impl Discriminator {
    pub fn new(obs_dim: usize, action_count: usize, space_tag: SpaceTag, rng: &mut Rng) -> Self {
        let sizes = [
            &[obs_dim + action_count][..],
            &DEFAULT_HIDDEN[..],
            &[1][..],
        ]
        .concat();
        Discriminator {
            net: Approximator::new(&sizes, Head::SigmoidScalar, rng),
            space_tag,
            action_count,
        }
    }

    /// Constant-output discriminator (zero weights give exactly 0.5).
    pub fn constant_half(obs_dim: usize, action_count: usize, space_tag: SpaceTag) -> Self {
        let sizes = [
            &[obs_dim + action_count][..],
            &DEFAULT_HIDDEN[..],
            &[1][..],
        ]
        .concat();
        Discriminator {
            net: Approximator::zeros(&sizes, Head::SigmoidScalar),
            space_tag,
            action_count,
        }
    }

    pub fn space_tag(&self) -> SpaceTag {
        self.space_tag
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn net(&self) -> &Approximator {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Approximator {
        &mut self.net
    }

    pub fn features(&self, obs: &[f64], action: usize) -> Vec<f64> {
        feature_vector(obs, action, self.action_count)
    }

    /// Raw sigmoid output; strictly inside (0,1). High means policy-side.
    pub fn output(&self, x: &Instance) -> f64 {
        assert_eq!(x.space_tag, self.space_tag, "instance space mismatch");
        self.net.forward(&self.features(&x.obs, x.action))[0]
    }

    /// Demonstration-side probability.
    pub fn demo_prob(&self, x: &Instance) -> f64 {
        1.0 - self.output(x)
    }

    /// FNV-1a over the parameter bits; used to assert that a training step
    /// did not touch this model.
    pub fn param_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for p in self.net.params() {
            for b in p.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

pub fn feature_vector(obs: &[f64], action: usize, action_count: usize) -> Vec<f64> {
    assert!(action < action_count);
    let mut v = Vec::with_capacity(obs.len() + action_count);
    v.extend_from_slice(obs);
    for a in 0..action_count {
        v.push(if a == action { 1.0 } else { 0.0 });
    }
    v
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP)
}

/// ln(clamp(p)) and its derivative in p (zero in the clamped region).
fn log_clamped(p: f64) -> (f64, f64) {
    if p <= OUTPUT_CLAMP {
        (OUTPUT_CLAMP.ln(), 0.0)
    } else if p >= 1.0 - OUTPUT_CLAMP {
        ((1.0 - OUTPUT_CLAMP).ln(), 0.0)
    } else {
        (p.ln(), 1.0 / p)
    }
}

/// ln(clamp(1-p)) and its derivative in p.
fn log_one_minus_clamped(p: f64) -> (f64, f64) {
    let q = 1.0 - p;
    if q <= OUTPUT_CLAMP {
        (OUTPUT_CLAMP.ln(), 0.0)
    } else if q >= 1.0 - OUTPUT_CLAMP {
        ((1.0 - OUTPUT_CLAMP).ln(), 0.0)
    } else {
        (q.ln(), -1.0 / q)
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Adversarial loss for a discriminator, as a descent objective:
/// -[mean log D(positives) + mean log(1 - D(negatives))].
pub fn gail_loss(
    d: &Discriminator,
    positives: &[&Instance],
    negatives: &[&Instance],
) -> Result<LossGrad> {
    weighted_adversarial_loss(d, positives, negatives, None)
}

/// Same negative-side structure with constant per-sample weights. Weights do
/// not receive gradients. `weights = None` means all ones and reproduces
/// `gail_loss` bit for bit.
pub fn weighted_adversarial_loss(
    d: &Discriminator,
    positives: &[&Instance],
    negatives: &[&Instance],
    weights: Option<&[f64]>,
) -> Result<LossGrad> {
    assert!(!positives.is_empty() && !negatives.is_empty(), "empty batch");
    if let Some(w) = weights {
        assert_eq!(w.len(), negatives.len());
    }
    for x in positives.iter().chain(negatives.iter()) {
        assert_eq!(x.space_tag, d.space_tag(), "instance space mismatch");
    }
    let pos_inputs: Vec<Vec<f64>> = positives
        .iter()
        .map(|x| d.features(&x.obs, x.action))
        .collect();
    let (pos_loss, pos_grad) = batch_gradient(d.net(), &pos_inputs, |_, out| {
        let (lp, dlp) = log_clamped(out[0]);
        (-lp, vec![-dlp])
    })?;
    let neg_inputs: Vec<Vec<f64>> = negatives
        .iter()
        .map(|x| d.features(&x.obs, x.action))
        .collect();
    let (neg_loss, neg_grad) = batch_gradient(d.net(), &neg_inputs, |i, out| {
        let w = weights.map_or(1.0, |w| w[i]);
        let (lq, dlq) = log_one_minus_clamped(out[0]);
        (-w * lq, vec![-w * dlq])
    })?;
    let grad = pos_grad
        .into_iter()
        .zip(neg_grad)
        .map(|(a, b)| a + b)
        .collect();
    Ok(LossGrad {
        loss: pos_loss + neg_loss,
        grad,
    })
}

/// Closed-form optimum of the pretraining objective at a point with known
/// occupancies: rho_1 / (rho_1 + rho_E).
pub fn optimal_discriminator(rho_1: f64, rho_e: f64) -> Result<f64> {
    assert!(rho_1 >= 0.0 && rho_e >= 0.0);
    if rho_1 + rho_e <= 0.0 {
        return Err(HoilError::EmptyDensityRatio);
    }
    Ok(rho_1 / (rho_1 + rho_e))
}

/// Importance weight (1 - D1)/D1 with the output clamped and the ratio
/// clipped into [WEIGHT_CLIP_MIN, WEIGHT_CLIP_MAX].
pub fn importance_weight(d1: &Discriminator, x_e: &Instance) -> f64 {
    assert_eq!(x_e.space_tag, SpaceTag::E);
    let p = clamp_prob(d1.output(x_e));
    ((1.0 - p) / p).clamp(WEIGHT_CLIP_MIN, WEIGHT_CLIP_MAX)
}

/// The learner-side objective: positives are fresh learner rollouts, the
/// weighted negatives are the learner-space half of the evolving data with
/// alpha computed from the expert-space half through the frozen pretraining
/// discriminator. No gradient flows into `d1`.
pub fn weighted_d2_loss(
    d2: &Discriminator,
    batch_pi2: &[&Instance],
    batch_pi1: &[&crate::data::DualInstance],
    d1: &Discriminator,
) -> Result<LossGrad> {
    assert_eq!(d2.space_tag(), SpaceTag::L);
    assert_eq!(d1.space_tag(), SpaceTag::E);
    let alphas: Vec<f64> = batch_pi1
        .iter()
        .map(|dual| importance_weight(d1, &dual.side(SpaceTag::E)))
        .collect();
    let negatives: Vec<Instance> = batch_pi1.iter().map(|d| d.side(SpaceTag::L)).collect();
    let negative_refs: Vec<&Instance> = negatives.iter().collect();
    weighted_adversarial_loss(d2, batch_pi2, &negative_refs, Some(&alphas))
}

/// Raw pseudo-reward -log D2; callers normalize batches into [0,1].
pub fn pseudo_reward(d2: &Discriminator, x_l: &Instance) -> f64 {
    assert_eq!(x_l.space_tag, SpaceTag::L);
    -clamp_prob(d2.output(x_l)).ln()
}

/// Min-max normalization of one finite batch onto [0,1]; a constant batch
/// maps to 0.5.
pub fn minmax_normalize(rewards: &[f64]) -> Vec<f64> {
    assert!(!rewards.is_empty());
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return vec![0.5; rewards.len()];
    }
    rewards.iter().map(|r| (r - min) / (max - min)).collect()
}

/// Mixture description used by oracle fixtures: episodes follow the expert
/// component with probability `delta`, otherwise the non-expert component.
/// The resulting occupancy is exactly the delta-mixture of the components.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub delta: f64,
    pub expert: Policy,
    pub non_expert: Policy,
}

impl MixtureSpec {
    pub fn new(delta: f64, expert: Policy, non_expert: Policy) -> Self {
        assert!(delta > 0.0 && delta < 1.0);
        MixtureSpec {
            delta,
            expert,
            non_expert,
        }
    }
}

/// Occupancy samples of the mixture process (one coin flip per episode).
pub fn sample_mixture_occupancy(
    env: &DualObsEnv,
    spec: &MixtureSpec,
    n_samples: usize,
    rng: &mut Rng,
) -> Vec<OccupancySample> {
    assert!(n_samples >= 1);
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let coin: f64 = rng.random();
        let policy = if coin < spec.delta {
            &spec.expert
        } else {
            &spec.non_expert
        };
        let traj = crate::data::rollout(env, policy, rng);
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

/// Train a discriminator by drawing gamma^t-weighted minibatches from two
/// occupancy-sample pools. Adam with the learning rate decayed linearly to
/// zero over `updates`.
pub fn train_discriminator(
    d: &mut Discriminator,
    positives: &[OccupancySample],
    negatives: &[OccupancySample],
    updates: usize,
    batch_size: usize,
    base_lr: f64,
    rng: &mut Rng,
) -> Result<()> {
    let pos_weights: Vec<f64> = positives.iter().map(|s| s.weight).collect();
    let neg_weights: Vec<f64> = negatives.iter().map(|s| s.weight).collect();
    let mut opt = crate::approx::Optimizer::adam(base_lr, updates, d.net().params().len());
    let half = (batch_size / 2).max(1);
    for _ in 0..updates {
        let pos_idx = crate::data::weighted_indices(&pos_weights, half, rng);
        let neg_idx = crate::data::weighted_indices(&neg_weights, half, rng);
        let pos: Vec<&Instance> = pos_idx.iter().map(|&i| &positives[i].instance).collect();
        let neg: Vec<&Instance> = neg_idx.iter().map(|&i| &negatives[i].instance).collect();
        let lg = gail_loss(d, &pos, &neg)?;
        opt.step(d.net_mut(), &lg.grad);
    }
    Ok(())
}
