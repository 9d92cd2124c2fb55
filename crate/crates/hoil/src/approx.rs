//! Small differentiable function approximators: tanh MLPs with an explicit
//! forward/backward pass over a flat parameter vector, an Adam optimizer with
//! a linearly decayed learning rate, and central finite-difference checking.

use crate::container::{Container, Reader, Writer};
use crate::error::{HoilError, Result};
use crate::rng::Rng;
use rand::Rng as _;
use std::path::Path;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LR: f64 = 3e-4;
/// Hidden architecture shared by discriminators, rejection heads, and policies.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Single sigmoid output in (0,1).
    SigmoidScalar,
    /// Probability vector over the output dimension.
    Softmax,
    /// Raw affine output.
    Linear,
}

impl Head {
    fn tag(self) -> &'static str {
        match self {
            Head::SigmoidScalar => "sigmoid",
            Head::Softmax => "softmax",
            Head::Linear => "linear",
        }
    }

    fn from_tag(tag: &str) -> Result<Head> {
        match tag {
            "sigmoid" => Ok(Head::SigmoidScalar),
            "softmax" => Ok(Head::Softmax),
            "linear" => Ok(Head::Linear),
            other => Err(HoilError::Parse {
                location: "header key `head`".to_string(),
                message: format!("unknown head `{other}`"),
            }),
        }
    }
}

/// A fully connected network with tanh hidden units. Parameters live in one
/// flat vector, laid out per layer as a row-major weight matrix followed by
/// the bias, which keeps the optimizer and finite differencing trivial.
#[derive(Debug, Clone, PartialEq)]
pub struct Approximator {
    layer_sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by `backward`.
pub struct Cache {
    /// `acts[0]` is the input; `acts[l]` for 1..L is the post-tanh activation
    /// of hidden layer l; `acts[L]` is the head output.
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("cache has at least the input")
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| (w[0] + 1) * w[1])
        .sum::<usize>()
}

impl Approximator {
    /// Orthogonal weight initialization with gain 1.0 and zero biases.
    pub fn new(layer_sizes: &[usize], head: Head, rng: &mut Rng) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
        if head == Head::SigmoidScalar {
            assert_eq!(
                *layer_sizes.last().unwrap(),
                1,
                "sigmoid head requires a single output"
            );
        }
        let mut params = vec![0.0; param_count(layer_sizes)];
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = orthogonal(n_out, n_in, rng);
            params[offset..offset + n_out * n_in].copy_from_slice(&weights);
            offset += (n_in + 1) * n_out; // biases stay zero
        }
        Approximator {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params,
        }
    }

    /// All-zero parameters; sigmoid heads output 0.5 and softmax heads are uniform.
    pub fn zeros(layer_sizes: &[usize], head: Head) -> Self {
        Approximator {
            layer_sizes: layer_sizes.to_vec(),
            head,
            params: vec![0.0; param_count(layer_sizes)],
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).acts.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f64]) -> Cache {
        assert_eq!(
            x.len(),
            self.layer_sizes[0],
            "input dimension mismatch: got {}, model expects {}",
            x.len(),
            self.layer_sizes[0]
        );
        let layers = self.layer_sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for (l, w) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let input = acts.last().unwrap();
            let mut z = vec![0.0; n_out];
            for i in 0..n_out {
                let row = &self.params[offset + i * n_in..offset + (i + 1) * n_in];
                let mut acc = self.params[offset + n_out * n_in + i]; // bias
                for (wij, xj) in row.iter().zip(input.iter()) {
                    acc += wij * xj;
                }
                z[i] = acc;
            }
            offset += (n_in + 1) * n_out;
            let out = if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.tanh());
                z
            } else {
                match self.head {
                    Head::Linear => z,
                    Head::SigmoidScalar => vec![sigmoid(z[0])],
                    Head::Softmax => softmax(&z),
                }
            };
            acts.push(out);
        }
        Cache { acts }
    }

    /// Backpropagate `d_output` (the gradient of some scalar with respect to
    /// the head output) through the cached pass, accumulating parameter
    /// gradients into `grad`. Returns the gradient with respect to the input.
    pub fn backward(&self, cache: &Cache, d_output: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.layer_sizes.len() - 1;
        let out = cache.output();
        // Head-output gradient to pre-activation gradient.
        let mut dz: Vec<f64> = match self.head {
            Head::Linear => d_output.to_vec(),
            Head::SigmoidScalar => {
                let p = out[0];
                vec![d_output[0] * p * (1.0 - p)]
            }
            Head::Softmax => {
                let dot: f64 = d_output.iter().zip(out.iter()).map(|(d, p)| d * p).sum();
                out.iter()
                    .zip(d_output.iter())
                    .map(|(p, d)| p * (d - dot))
                    .collect()
            }
        };
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.layer_sizes.windows(2) {
            offsets.push(offset);
            offset += (w[0] + 1) * w[1];
        }
        for l in (0..layers).rev() {
            let n_in = self.layer_sizes[l];
            let n_out = self.layer_sizes[l + 1];
            let base = offsets[l];
            let input = &cache.acts[l];
            let mut dx = vec![0.0; n_in];
            for i in 0..n_out {
                let gi = dz[i];
                let row = base + i * n_in;
                for j in 0..n_in {
                    grad[row + j] += gi * input[j];
                    dx[j] += self.params[row + j] * gi;
                }
                grad[base + n_out * n_in + i] += gi;
            }
            if l > 0 {
                // Through the tanh of the layer below.
                for (d, a) in dx.iter_mut().zip(cache.acts[l].iter()) {
                    *d *= 1.0 - a * a;
                }
            }
            dz = dx;
        }
        dz
    }

    pub fn save(&self, path: impl AsRef<Path>, model_kind: &str) -> Result<()> {
        let mut c = Container::new("model");
        c.put("model_kind", model_kind);
        c.put(
            "layer_sizes",
            self.layer_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        c.put("head", self.head.tag());
        let mut w = Writer::new();
        w.f64s(&self.params);
        c.records.push(w.0);
        c.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let c = Container::load(path)?;
        if c.kind != "model" {
            return Err(HoilError::Parse {
                location: "line 1".to_string(),
                message: format!("expected a model container, got `{}`", c.kind),
            });
        }
        let kind = c.require("model_kind")?.to_string();
        let layer_sizes: Vec<usize> = c
            .require("layer_sizes")?
            .split(',')
            .map(|s| {
                s.parse().map_err(|_| HoilError::Parse {
                    location: "header key `layer_sizes`".to_string(),
                    message: format!("bad layer size `{s}`"),
                })
            })
            .collect::<Result<_>>()?;
        let head = Head::from_tag(c.require("head")?)?;
        let rec = c.records.first().ok_or_else(|| HoilError::Parse {
            location: "records".to_string(),
            message: "model container has no parameter record".to_string(),
        })?;
        let mut r = Reader::new(rec);
        let params = r.f64s()?;
        r.finish()?;
        if params.len() != param_count(&layer_sizes) {
            return Err(HoilError::Parse {
                location: "records".to_string(),
                message: format!(
                    "parameter count {} does not match layer sizes (expected {})",
                    params.len(),
                    param_count(&layer_sizes)
                ),
            });
        }
        Ok((
            Approximator {
                layer_sizes,
                head,
                params,
            },
            kind,
        ))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

fn gaussian(rng: &mut Rng) -> f64 {
    // Box-Muller on open-interval uniforms; stable across platforms.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Row-major `n_out x n_in` orthogonal matrix (Gram-Schmidt on the shorter
/// side of a Gaussian draw), gain 1.0.
fn orthogonal(n_out: usize, n_in: usize, rng: &mut Rng) -> Vec<f64> {
    let (rows, cols, transpose) = if n_out <= n_in {
        (n_out, n_in, false)
    } else {
        (n_in, n_out, true)
    };
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|_| (0..cols).map(|_| gaussian(rng)).collect())
        .collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = (0..cols).map(|k| m[i][k] * m[j][k]).sum();
            for k in 0..cols {
                m[i][k] -= dot * m[j][k];
            }
        }
        let norm: f64 = (0..cols).map(|k| m[i][k] * m[i][k]).sum::<f64>().sqrt();
        let norm = norm.max(1e-12);
        for k in 0..cols {
            m[i][k] /= norm;
        }
    }
    let mut out = vec![0.0; n_out * n_in];
    for i in 0..n_out {
        for j in 0..n_in {
            out[i * n_in + j] = if transpose { m[j][i] } else { m[i][j] };
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Linear decay reaching exactly zero on the final configured step.
    LinearToZero { total_steps: usize },
}

/// Adam state for one model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    base_lr: f64,
    schedule: LrSchedule,
    step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub fn adam(base_lr: f64, total_steps: usize, param_count: usize) -> Self {
        assert!(total_steps >= 1);
        Optimizer {
            base_lr,
            schedule: LrSchedule::LinearToZero { total_steps },
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn adam_constant(base_lr: f64, param_count: usize) -> Self {
        Optimizer {
            base_lr,
            schedule: LrSchedule::Constant,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate that will be applied on step `t` (1-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.base_lr,
            LrSchedule::LinearToZero { total_steps } => {
                self.base_lr * (1.0 - t as f64 / total_steps as f64).max(0.0)
            }
        }
    }

    /// One Adam update. Panics if stepped past the configured total or if any
    /// parameter turns non-finite.
    pub fn step(&mut self, f: &mut Approximator, grad: &[f64]) {
        if let LrSchedule::LinearToZero { total_steps } = self.schedule {
            assert!(
                self.step < total_steps,
                "optimizer stepped past its configured total of {total_steps}"
            );
        }
        assert_eq!(grad.len(), f.params.len());
        self.step += 1;
        let lr = self.lr_at(self.step);
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (i, g) in grad.iter().enumerate() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            f.params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        assert!(
            f.params.iter().all(|p| p.is_finite()),
            "parameters became non-finite on optimizer step {}",
            self.step
        );
    }
}

/// Mean loss and its gradient over a batch, where `per_sample` supplies the
/// sample loss and the gradient of that loss with respect to the model
/// output. Fails on a non-finite sample loss, naming the batch index.
pub fn batch_gradient(
    f: &Approximator,
    inputs: &[Vec<f64>],
    mut per_sample: impl FnMut(usize, &[f64]) -> (f64, Vec<f64>),
) -> Result<(f64, Vec<f64>)> {
    assert!(!inputs.is_empty(), "empty batch");
    let mut grad = vec![0.0; f.params.len()];
    let mut total = 0.0;
    let scale = 1.0 / inputs.len() as f64;
    for (i, x) in inputs.iter().enumerate() {
        let cache = f.forward_cached(x);
        let (loss, mut d_out) = per_sample(i, cache.output());
        if !loss.is_finite() {
            return Err(HoilError::NonFiniteLoss { index: i });
        }
        for d in d_out.iter_mut() {
            *d *= scale;
        }
        f.backward(&cache, &d_out, &mut grad);
        total += loss * scale;
    }
    Ok((total, grad))
}

/// Max relative error between `analytic` and central finite differences of
/// `loss` with step `eps`, over every parameter.
pub fn finite_diff_check(
    f: &Approximator,
    analytic: &[f64],
    mut loss: impl FnMut(&Approximator) -> f64,
    eps: f64,
) -> f64 {
    let mut probe = f.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + eps;
        let hi = loss(&probe);
        probe.params[i] = orig - eps;
        let lo = loss(&probe);
        probe.params[i] = orig;
        let numeric = (hi - lo) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}
