//! DP-SGD: Poisson minibatches, per-example L2 clipping, Gaussian noise.
//!
//! One noisy step computes
//!
//! ```text
//! g̃ = (Σ_k g_k / max(1, ‖g_k‖₂ / C) + N(0, σ²C² I)) / B
//! θ ← θ − η g̃
//! ```
//!
//! where `B` is the configured expected batch size, not the realized Poisson
//! draw. An empty draw skips the update but still counts as a step.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{cross_entropy_dp, l2_norm, GradBatch, Mlp, ParamVector, Workspace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub batch_size: usize,
    pub sample_rate: f64,
    pub lr: f64,
}

impl DpConfig {
    /// Config with `q = batch_size / shard_len`.
    pub fn for_shard(
        clip_norm: f64,
        noise_multiplier: f64,
        batch_size: usize,
        shard_len: usize,
        lr: f64,
    ) -> Result<Self> {
        if shard_len == 0 {
            return Err(Error::InvalidConfig("empty shard".into()));
        }
        let cfg = Self {
            clip_norm,
            noise_multiplier,
            batch_size,
            sample_rate: (batch_size as f64 / shard_len as f64).min(1.0),
            lr,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig(format!("clip norm must be > 0, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise multiplier must be finite and >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must lie in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        Ok(())
    }

    /// Noisy steps needed to cover one epoch in expectation: `ceil(1 / q)`.
    pub fn steps_per_epoch(&self) -> u64 {
        (1.0 / self.sample_rate).ceil() as u64
    }
}

/// Divisor applied to a gradient of norm `norm`.
fn clip_factor(norm: f64, clip_norm: f64) -> f64 {
    (norm / clip_norm).max(1.0)
}

/// Scales `g` down to L2 norm at most `clip_norm`; leaves it untouched if already inside.
pub fn clip(g: &ParamVector, clip_norm: f64) -> Result<ParamVector> {
    if !(clip_norm > 0.0) {
        return Err(Error::InvalidConfig(format!("clip norm must be > 0, got {clip_norm}")));
    }
    let norm = g.l2_norm();
    if !norm.is_finite() {
        return Err(Error::Numerical {
            layer: 0,
            detail: format!("gradient norm is {norm}"),
        });
    }
    let f = clip_factor(norm, clip_norm);
    Ok(ParamVector(g.0.iter().map(|v| v / f).collect()))
}

/// Running sum of clipped gradients. Shared by the batch and streaming paths
/// so both perform the same floating-point operations in the same order.
#[derive(Debug, Clone)]
pub struct ClippedSum {
    sum: Vec<f64>,
    clip_norm: f64,
    count: usize,
}

impl ClippedSum {
    pub fn new(len: usize, clip_norm: f64) -> Self {
        Self {
            sum: vec![0.0; len],
            clip_norm,
            count: 0,
        }
    }

    pub fn add(&mut self, g: &[f64]) -> Result<()> {
        let norm = l2_norm(g);
        if !norm.is_finite() {
            return Err(Error::Numerical {
                layer: 0,
                detail: format!("per-example gradient norm is {norm}"),
            });
        }
        let f = clip_factor(norm, self.clip_norm);
        for (s, v) in self.sum.iter_mut().zip(g) {
            *s += v / f;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// The pre-noise sum.
    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// `(sum + N(0, σ²C²)) / B`, one independent draw per coordinate.
    pub fn finish<R: Rng + ?Sized>(mut self, cfg: &DpConfig, rng: &mut R) -> ParamVector {
        let std = cfg.noise_multiplier * cfg.clip_norm;
        let b = cfg.batch_size as f64;
        if std > 0.0 {
            for s in &mut self.sum {
                let z: f64 = rng.sample(StandardNormal);
                *s = (*s + std * z) / b;
            }
        } else {
            for s in &mut self.sum {
                *s /= b;
            }
        }
        ParamVector(self.sum)
    }
}

/// Clip each gradient, sum, add Gaussian noise and divide by the configured batch size.
pub fn noisy_aggregate<R: Rng + ?Sized>(grads: &GradBatch, cfg: &DpConfig, rng: &mut R) -> Result<ParamVector> {
    let first = grads
        .0
        .first()
        .ok_or_else(|| Error::EmptyBatch("noisy aggregate of an empty gradient batch".into()))?;
    let mut acc = ClippedSum::new(first.len(), cfg.clip_norm);
    for g in grads.iter() {
        if g.len() != first.len() {
            return Err(Error::Structural("ragged gradient batch".into()));
        }
        acc.add(&g.0)?;
    }
    Ok(acc.finish(cfg, rng))
}

/// Includes each of `n` indices independently with probability `q`.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

/// Student model plus the bookkeeping a private training loop needs.
#[derive(Debug, Clone)]
pub struct DpTrainState {
    pub model: Mlp,
    pub step_count: u64,
    pub sampler: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

/// What happened in one noisy step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub realized: usize,
    /// Mean distillation loss over the realized batch (NaN for an empty draw).
    pub loss: f64,
}

impl DpTrainState {
    pub fn new(model: Mlp, sampler: ChaCha8Rng, noise: ChaCha8Rng) -> Self {
        Self {
            model,
            step_count: 0,
            sampler,
            noise,
        }
    }

    /// One DP-SGD update on an already-drawn batch of `(input, soft target)` pairs.
    pub fn dp_step(&mut self, inputs: &[&[f64]], targets: &[f64], cfg: &DpConfig) -> Result<StepInfo> {
        if inputs.len() != targets.len() {
            return Err(Error::Structural(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        self.step_count += 1;
        if inputs.is_empty() {
            return Ok(StepInfo {
                realized: 0,
                loss: f64::NAN,
            });
        }
        let len = self.model.num_params();
        let mut acc = ClippedSum::new(len, cfg.clip_norm);
        let mut scratch = vec![0.0; len];
        let mut ws = Workspace::for_model(&self.model);
        let mut loss = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            scratch.iter_mut().for_each(|v| *v = 0.0);
            let p = self
                .model
                .accumulate_grad(x, |p| cross_entropy_dp(p, t), &mut scratch, &mut ws)?;
            loss += crate::nn::cross_entropy(p, t);
            acc.add(&scratch)?;
        }
        let noisy = acc.finish(cfg, &mut self.noise);
        let params = self.model.params_mut();
        for (p, g) in params.0.iter_mut().zip(&noisy.0) {
            *p -= cfg.lr * g;
        }
        Ok(StepInfo {
            realized: inputs.len(),
            loss: loss / inputs.len() as f64,
        })
    }

    /// Draws a Poisson batch from `shard` with the sampler stream and applies one step.
    pub fn sample_and_step(&mut self, shard: &[&[f64]], targets: &[f64], cfg: &DpConfig) -> Result<StepInfo> {
        let idx = poisson_sample(shard.len(), cfg.sample_rate, &mut self.sampler);
        let xs: Vec<&[f64]> = idx.iter().map(|&i| shard[i]).collect();
        let ts: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        self.dp_step(&xs, &ts, cfg)
    }
}
