//! Feedforward binary classifier with exact per-example gradients.
//!
//! An [`Mlp`] is a chain of dense layers with ReLU hidden activations and a
//! single logistic-sigmoid output. All parameters live in one flat
//! [`ParamVector`] with the canonical layout
//!
//! ```text
//! [W_0 (out_0 x in_0, row-major), b_0, W_1, b_1, ..., W_L, b_L]
//! ```
//!
//! so aggregation, clipping and optimizer updates operate on plain slices.
//!
//! The output probability is clamped to `[PROB_CLIP, 1 - PROB_CLIP]` so every
//! cross-entropy term stays finite. Inside the clamped region the output is
//! constant and its gradient is zero.

mod optim;

pub use optim::{sgd_step, Adam, Optimizer, OptimizerKind};

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clamp applied to the sigmoid output before any logarithm.
pub const PROB_CLIP: f64 = 1e-7;

/// Flat view of every model parameter in canonical layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Little-endian IEEE-754 encoding, 8 bytes per entry.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) {
            return Err(Error::Structural(format!(
                "parameter blob length {} is not a multiple of 8",
                bytes.len()
            )));
        }
        Ok(Self(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-example gradients, one entry per sample of a minibatch, in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBatch(pub Vec<ParamVector>);

impl GradBatch {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamVector> {
        self.0.iter()
    }
}

/// Binary cross-entropy `-t ln p - (1 - t) ln(1 - p)` against a hard label or a soft target.
pub(crate) fn cross_entropy(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -target * p.ln() - (1.0 - target) * (1.0 - p).ln()
}

/// Derivative of [`cross_entropy`] with respect to `p`.
pub(crate) fn cross_entropy_dp(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -target / p + (1.0 - target) / (1.0 - p)
}

/// Which per-example loss a gradient is taken of. Both are the binary
/// cross-entropy; they differ only in where the target comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleLoss {
    /// Hard label `y ∈ {0, 1}`.
    Bce,
    /// Soft teacher probability.
    Distill,
}

/// Scratch buffers for one forward/backward pass. Reusing a workspace keeps the
/// per-sample path allocation-free.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    /// `acts[k]` is the input to layer `k`; `acts[L]` holds the output logit's sigmoid.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
    prob: f64,
    clamped: bool,
}

impl Workspace {
    pub fn for_model(model: &Mlp) -> Self {
        let n = model.num_layers();
        let mut acts = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        acts.push(vec![0.0; model.dims[0]]);
        for k in 0..n {
            pre.push(vec![0.0; model.dims[k + 1]]);
            acts.push(vec![0.0; model.dims[k + 1]]);
        }
        let widest = model.dims.iter().copied().max().unwrap_or(1);
        Self {
            acts,
            pre,
            delta: Vec::with_capacity(widest),
            delta_prev: Vec::with_capacity(widest),
            prob: 0.5,
            clamped: false,
        }
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }
}

/// Dense ReLU network with a scalar sigmoid head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    params: ParamVector,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::Structural(
            "a model needs an input width and at least one layer".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::Structural(format!("zero-width layer in {dims:?}")));
    }
    if *dims.last().expect("len >= 2") != 1 {
        return Err(Error::Structural(format!(
            "final layer must have width 1, got {dims:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Builds a model with Glorot-uniform weights and zero biases.
    ///
    /// `dims` is `[input, hidden..., 1]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        validate_dims(dims)?;
        let mut model = Self::zeros(dims)?;
        for k in 0..model.num_layers() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let (w_off, _) = model.layer_offsets(k);
            for w in &mut model.params.0[w_off..w_off + fan_in * fan_out] {
                *w = dist.sample(rng);
            }
        }
        Ok(model)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        validate_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            params: ParamVector::zeros(param_count(dims)),
        })
    }

    /// Rebuilds a model from a flat parameter vector (inverse of [`Mlp::flatten`]).
    pub fn unflatten(dims: &[usize], params: ParamVector) -> Result<Self> {
        validate_dims(dims)?;
        let expected = param_count(dims);
        if params.len() != expected {
            return Err(Error::Structural(format!(
                "parameter vector has {} entries, layout {dims:?} needs {expected}",
                params.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Structural(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Offsets of `(weights, biases)` for layer `k` inside the flat vector.
    pub fn layer_offsets(&self, k: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(k) {
            off += w[1] * w[0] + w[1];
        }
        (off, off + self.dims[k] * self.dims[k + 1])
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Structural(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Clamped output probability for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let mut ws = Workspace::for_model(self);
        self.forward_ws(x, &mut ws)
    }

    /// Forward pass that records every intermediate in `ws` for a later backward pass.
    pub fn forward_ws(&self, x: &[f64], ws: &mut Workspace) -> Result<f64> {
        self.check_input(x)?;
        let n = self.num_layers();
        ws.acts[0].copy_from_slice(x);
        let p = &self.params.0;
        for k in 0..n {
            let (fan_in, fan_out) = (self.dims[k], self.dims[k + 1]);
            let (w_off, b_off) = self.layer_offsets(k);
            let (before, after) = ws.acts.split_at_mut(k + 1);
            let input = &before[k];
            let out = &mut after[0];
            let z = &mut ws.pre[k];
            for j in 0..fan_out {
                let row = &p[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                let mut s = p[b_off + j];
                for (w, a) in row.iter().zip(input.iter()) {
                    s += w * a;
                }
                if !s.is_finite() {
                    return Err(Error::Numerical {
                        layer: k,
                        detail: format!("pre-activation {j} is {s}"),
                    });
                }
                z[j] = s;
                out[j] = if k + 1 < n { s.max(0.0) } else { sigmoid(s) };
            }
        }
        let raw = ws.acts[n][0];
        let clamped = raw.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        ws.clamped = clamped != raw;
        ws.prob = clamped;
        Ok(clamped)
    }

    /// Adds `upstream * ∂p/∂params` into `out`, using the trace left in `ws` by
    /// [`Mlp::forward_ws`]. `upstream` is the derivative of the loss with respect
    /// to the clamped output probability.
    pub fn backward_ws(&self, ws: &mut Workspace, upstream: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.num_params() {
            return Err(Error::Structural(format!(
                "gradient buffer has {} entries, model has {}",
                out.len(),
                self.num_params()
            )));
        }
        let n = self.num_layers();
        let p = ws.prob;
        let dz = if ws.clamped { 0.0 } else { upstream * p * (1.0 - p) };
        if !dz.is_finite() {
            return Err(Error::Numerical {
                layer: n - 1,
                detail: format!("output gradient is {dz}"),
            });
        }
        ws.delta.clear();
        ws.delta.push(dz);
        let params = &self.params.0;
        for k in (0..n).rev() {
            let (fan_in, fan_out) = (self.dims[k], self.dims[k + 1]);
            let (w_off, b_off) = self.layer_offsets(k);
            let input = &ws.acts[k];
            for j in 0..fan_out {
                let d = ws.delta[j];
                out[b_off + j] += d;
                if d != 0.0 {
                    let row = &mut out[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                    for (g, a) in row.iter_mut().zip(input.iter()) {
                        *g += d * a;
                    }
                }
            }
            if k == 0 {
                break;
            }
            ws.delta_prev.clear();
            ws.delta_prev.resize(fan_in, 0.0);
            for j in 0..fan_out {
                let d = ws.delta[j];
                if d == 0.0 {
                    continue;
                }
                let row = &params[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                for (acc, w) in ws.delta_prev.iter_mut().zip(row.iter()) {
                    *acc += w * d;
                }
            }
            let z_prev = &ws.pre[k - 1];
            for (acc, z) in ws.delta_prev.iter_mut().zip(z_prev.iter()) {
                if *z <= 0.0 {
                    *acc = 0.0;
                }
                if !acc.is_finite() {
                    return Err(Error::Numerical {
                        layer: k - 1,
                        detail: format!("backpropagated gradient is {acc}"),
                    });
                }
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
        Ok(())
    }

    /// Forward then backward for one sample; returns the sample's probability.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        dloss_dp: impl FnOnce(f64) -> f64,
        out: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        let p = self.forward_ws(x, ws)?;
        self.backward_ws(ws, dloss_dp(p), out)?;
        Ok(p)
    }

    /// Exact gradient of `loss(h(x_k), target_k)` for every sample `k`, one backprop per sample.
    pub fn per_example_grads(
        &self,
        inputs: &[&[f64]],
        targets: &[f64],
        _loss: SampleLoss,
    ) -> Result<GradBatch> {
        if inputs.is_empty() {
            return Err(Error::EmptyBatch("per-example gradients of an empty batch".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Structural(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let mut ws = Workspace::for_model(self);
        inputs
            .iter()
            .zip(targets)
            .map(|(x, &t)| {
                let mut g = vec![0.0; self.num_params()];
                self.accumulate_grad(x, |p| cross_entropy_dp(p, t), &mut g, &mut ws)?;
                Ok(ParamVector(g))
            })
            .collect::<Result<Vec<_>>>()
            .map(GradBatch)
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
