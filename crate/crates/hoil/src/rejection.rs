//! Learning with rejection: the selective head g, empirical coverage, the
//! selective risk, the coverage-hinged rejection loss, the 0.5 indicator, and
//! the ternary H/O/N labeler.
//!
//! g's sign convention: binarized output 1 marks "not observed demonstration"
//! (the H or N side), 0 marks O. Training uses the relaxed sigmoid outputs;
//! labeling binarizes at 0.5.

use crate::approx::{Approximator, Head, Optimizer, DEFAULT_HIDDEN};
use crate::data::Instance;
use crate::density::{clamp_prob, gail_loss, Discriminator};
use crate::env::SpaceTag;
use crate::error::{HoilError, Result};
use crate::rng::Rng;

pub const REJECTION_THRESHOLD: f64 = 0.5;
const MIN_COVERAGE: f64 = 1e-8;

/// Target coverage and the weight of the coverage penalty.
#[derive(Debug, Clone, Copy)]
pub struct RejectionConfig {
    pub target_coverage: f64,
    pub penalty_weight: f64,
}

impl Default for RejectionConfig {
    fn default() -> Self {
        RejectionConfig {
            target_coverage: 0.8,
            penalty_weight: 1.0,
        }
    }
}

impl RejectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return Err(HoilError::InvalidConfig(format!(
                "target coverage {} outside (0,1]",
                self.target_coverage
            )));
        }
        if self.penalty_weight < 0.0 {
            return Err(HoilError::InvalidConfig(
                "penalty weight must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Sigmoid selective head over (observation, one-hot action).
#[derive(Debug, Clone)]
pub struct RejectionHead {
    net: Approximator,
    space_tag: SpaceTag,
    action_count: usize,
}

impl RejectionHead {
    pub fn new(obs_dim: usize, action_count: usize, space_tag: SpaceTag, rng: &mut Rng) -> Self {
        let sizes = [
            &[obs_dim + action_count][..],
            &DEFAULT_HIDDEN[..],
            &[1][..],
        ]
        .concat();
        RejectionHead {
            net: Approximator::new(&sizes, Head::SigmoidScalar, rng),
            space_tag,
            action_count,
        }
    }

    pub fn space_tag(&self) -> SpaceTag {
        self.space_tag
    }

    pub fn net(&self) -> &Approximator {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Approximator {
        &mut self.net
    }

    /// Relaxed output in (0,1).
    pub fn relaxed(&self, x: &Instance) -> f64 {
        assert_eq!(x.space_tag, self.space_tag, "instance space mismatch");
        let features = crate::density::feature_vector(&x.obs, x.action, self.action_count);
        self.net.forward(&features)[0]
    }

    /// Thresholded output: 1 above REJECTION_THRESHOLD, else 0.
    pub fn binary(&self, x: &Instance) -> u8 {
        u8::from(self.relaxed(x) > REJECTION_THRESHOLD)
    }
}

/// Ternary label over state-action space: latent demonstration, observed
/// demonstration, or non-expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TernaryLabel {
    H,
    O,
    N,
}

impl TernaryLabel {
    /// The dot-product value the label encodes.
    pub fn value(self) -> i8 {
        match self {
            TernaryLabel::H => 1,
            TernaryLabel::O => 0,
            TernaryLabel::N => -1,
        }
    }
}

impl std::fmt::Display for TernaryLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TernaryLabel::H => write!(f, "H"),
            TernaryLabel::O => write!(f, "O"),
            TernaryLabel::N => write!(f, "N"),
        }
    }
}

/// +1 iff v > 0.5, else -1 (0.5 itself maps to -1).
pub fn indicator(v: f64) -> i8 {
    assert!((0.0..=1.0).contains(&v), "indicator input {v} outside [0,1]");
    if v > 0.5 {
        1
    } else {
        -1
    }
}

/// Ternary label from a demonstration-side probability and a relaxed g
/// output. The product +1 reads H, 0 with a positive indicator reads O, -1
/// reads N; the residual case (indicator -1 with g at 0) also maps to N since
/// the indicator already asserts the non-expert side.
pub fn combined_label(d_demo_prob: f64, g_relaxed: f64) -> TernaryLabel {
    let ind = indicator(d_demo_prob);
    let g_bin = g_relaxed > REJECTION_THRESHOLD;
    match (ind, g_bin) {
        (1, true) => TernaryLabel::H,
        (1, false) => TernaryLabel::O,
        (-1, true) => TernaryLabel::N,
        (-1, false) => TernaryLabel::N,
        _ => unreachable!(),
    }
}

/// Semantic H/O/N label of an instance under a trained pair, feeding the
/// demonstration-side probability to the indicator. This is the teacher
/// labeler; the query trigger in the training loop feeds the raw output
/// instead (see the convention note in `density`).
pub fn label_instance(d: &Discriminator, g: &RejectionHead, x: &Instance) -> TernaryLabel {
    combined_label(d.demo_prob(x), g.relaxed(x))
}

/// An instance with the role label its side of the adversarial objective
/// carries: 1.0 for policy-side data, 0.0 for demonstration-side data.
pub type RoleExample<'a> = (&'a Instance, f64);

/// Mean relaxed output of g over a batch.
pub fn empirical_coverage(g: &RejectionHead, batch: &[&Instance]) -> f64 {
    assert!(!batch.is_empty(), "empty batch");
    batch.iter().map(|x| g.relaxed(x)).sum::<f64>() / batch.len() as f64
}

#[derive(Debug, Clone)]
pub struct RiskGrad {
    pub value: f64,
    pub coverage: f64,
    pub d_grad: Vec<f64>,
    pub g_grad: Vec<f64>,
}

/// Selective risk: covered discriminator cross-entropy divided by coverage.
/// The per-sample loss is the binary cross-entropy of D's raw output against
/// the example's role label. Gradients are returned for both models.
pub fn selective_risk(
    d: &Discriminator,
    g: &RejectionHead,
    batch: &[RoleExample],
) -> Result<RiskGrad> {
    assert!(!batch.is_empty(), "empty batch");
    let m = batch.len() as f64;
    let mut d_caches = Vec::with_capacity(batch.len());
    let mut g_caches = Vec::with_capacity(batch.len());
    let mut losses = Vec::with_capacity(batch.len());
    let mut dloss_dp = Vec::with_capacity(batch.len());
    let mut g_outs = Vec::with_capacity(batch.len());
    for (i, (x, role)) in batch.iter().enumerate() {
        assert_eq!(x.space_tag, d.space_tag());
        assert_eq!(x.space_tag, g.space_tag());
        let features = crate::density::feature_vector(&x.obs, x.action, d.action_count());
        let d_cache = d.net().forward_cached(&features);
        let g_cache = g.net().forward_cached(&features);
        let p = d_cache.output()[0];
        let pc = clamp_prob(p);
        let clamped = p != pc;
        let loss = -(role * pc.ln() + (1.0 - role) * (1.0 - pc).ln());
        if !loss.is_finite() {
            return Err(HoilError::NonFiniteLoss { index: i });
        }
        let dldp = if clamped {
            0.0
        } else {
            -(role / pc) + (1.0 - role) / (1.0 - pc)
        };
        losses.push(loss);
        dloss_dp.push(dldp);
        g_outs.push(g_cache.output()[0]);
        d_caches.push(d_cache);
        g_caches.push(g_cache);
    }
    let covered: f64 = losses.iter().zip(g_outs.iter()).map(|(l, g)| l * g).sum::<f64>() / m;
    let coverage: f64 = g_outs.iter().sum::<f64>() / m;
    if coverage <= MIN_COVERAGE {
        return Err(HoilError::CoverageCollapsed { coverage });
    }
    let value = covered / coverage;
    let mut d_grad = vec![0.0; d.net().params().len()];
    let mut g_grad = vec![0.0; g.net().params().len()];
    for i in 0..batch.len() {
        // d value / d loss_i = g_i / (m * coverage)
        let d_out = vec![dloss_dp[i] * g_outs[i] / (m * coverage)];
        d.net().backward(&d_caches[i], &d_out, &mut d_grad);
        // d value / d g_i = (loss_i - value) / (m * coverage)
        let g_out = vec![(losses[i] - value) / (m * coverage)];
        g.net().backward(&g_caches[i], &g_out, &mut g_grad);
    }
    Ok(RiskGrad {
        value,
        coverage,
        d_grad,
        g_grad,
    })
}

#[derive(Debug, Clone)]
pub struct RejectionGrad {
    pub loss: f64,
    pub risk: f64,
    pub penalty: f64,
    pub coverage: f64,
    pub d_grad: Vec<f64>,
    pub g_grad: Vec<f64>,
}

/// Squared coverage hinge; exactly zero whenever coverage >= target.
pub fn coverage_penalty(cfg: &RejectionConfig, coverage: f64) -> f64 {
    let gap = cfg.target_coverage - coverage;
    if gap > 0.0 {
        cfg.penalty_weight * gap * gap
    } else {
        0.0
    }
}

/// Rejection loss: selective risk plus the coverage hinge.
pub fn rejection_loss(
    d: &Discriminator,
    g: &RejectionHead,
    batch: &[RoleExample],
    cfg: &RejectionConfig,
) -> Result<RejectionGrad> {
    let RiskGrad {
        value: risk,
        coverage,
        d_grad,
        mut g_grad,
    } = selective_risk(d, g, batch)?;
    let penalty = coverage_penalty(cfg, coverage);
    let gap = cfg.target_coverage - coverage;
    if gap > 0.0 {
        // d penalty / d g_i = -2 lambda gap / m, through each relaxed output.
        let m = batch.len() as f64;
        let coef = -2.0 * cfg.penalty_weight * gap / m;
        let mut hinge_grad = vec![0.0; g.net().params().len()];
        for (x, _) in batch {
            let features = crate::density::feature_vector(&x.obs, x.action, g.action_count);
            let cache = g.net().forward_cached(&features);
            g.net().backward(&cache, &[coef], &mut hinge_grad);
        }
        for (a, b) in g_grad.iter_mut().zip(hinge_grad) {
            *a += b;
        }
    }
    Ok(RejectionGrad {
        loss: risk + penalty,
        risk,
        penalty,
        coverage,
        d_grad,
        g_grad,
    })
}

/// A pool of same-role instances with sampling weights (gamma^t occupancy
/// weights in practice).
pub struct LabeledPool<'a> {
    pub instances: &'a [Instance],
    pub weights: &'a [f64],
    pub role: f64,
}

/// Joint pretraining of a (discriminator, rejection head) pair: each round
/// steps D on the adversarial loss and g on the rejection loss over a
/// stratified batch from the two pools. Learning rates decay linearly to
/// zero over the configured rounds.
#[allow(clippy::too_many_arguments)]
pub fn train_joint(
    d: &mut Discriminator,
    g: &mut RejectionHead,
    policy_pool: &LabeledPool,
    demo_pool: &LabeledPool,
    cfg: &RejectionConfig,
    rounds: usize,
    batch_size: usize,
    base_lr: f64,
    rng: &mut Rng,
) -> Result<()> {
    cfg.validate()?;
    assert!(rounds >= 1 && batch_size >= 2);
    let mut opt_d = Optimizer::adam(base_lr, rounds, d.net().params().len());
    let mut opt_g = Optimizer::adam(base_lr, rounds, g.net().params().len());
    let half = batch_size / 2;
    for _ in 0..rounds {
        let pos_idx = crate::data::weighted_indices(policy_pool.weights, half, rng);
        let neg_idx = crate::data::weighted_indices(demo_pool.weights, half, rng);
        let pos: Vec<&Instance> = pos_idx.iter().map(|&i| &policy_pool.instances[i]).collect();
        let neg: Vec<&Instance> = neg_idx.iter().map(|&i| &demo_pool.instances[i]).collect();
        let adv = gail_loss(d, &pos, &neg)?;
        opt_d.step(d.net_mut(), &adv.grad);

        let mixed: Vec<RoleExample> = pos
            .iter()
            .map(|x| (*x, policy_pool.role))
            .chain(neg.iter().map(|x| (*x, demo_pool.role)))
            .collect();
        let rej = rejection_loss(d, g, &mixed, cfg)?;
        opt_g.step(g.net_mut(), &rej.g_grad);
    }
    Ok(())
}
