//! Soft-label distillation from a frozen fair teacher.

use serde::Serialize;

use crate::fairness::bce_loss;
use crate::nn::{cross_entropy, cross_entropy_dp, Mlp, Workspace, PROB_CLIP};
use crate::Result;

/// Cross-entropy of the student's probability against the teacher's soft label.
pub fn distill_loss(p_student: f64, p_teacher: f64) -> f64 {
    cross_entropy(p_student, p_teacher.clamp(PROB_CLIP, 1.0 - PROB_CLIP))
}

pub fn binary_entropy(p: f64) -> f64 {
    distill_loss(p, p)
}

/// Outcome of checking `BCE(student, y) ≤ distill(student, teacher) · exp(BCE(teacher, y))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Absolute slack allowed when comparing the two sides.
pub const TRANSFER_SLACK: f64 = 1e-12;

/// Bounds the student's label loss by its distillation loss scaled by the
/// exponentiated teacher label loss.
pub fn transfer_bound_check(p_student: f64, p_teacher: f64, y: u8) -> TransferBound {
    let lhs = bce_loss(p_student, y);
    let rhs = distill_loss(p_student, p_teacher) * bce_loss(p_teacher, y).exp();
    TransferBound {
        lhs,
        rhs,
        holds: lhs <= rhs + TRANSFER_SLACK,
    }
}

/// A frozen teacher with its outputs precomputed over one shard.
#[derive(Debug, Clone)]
pub struct TeacherSnapshot {
    model: Mlp,
    outputs: Vec<f64>,
}

impl TeacherSnapshot {
    pub fn new(model: Mlp, shard: &[&[f64]]) -> Result<Self> {
        let mut ws = Workspace::for_model(&model);
        let outputs = shard
            .iter()
            .map(|x| model.forward_ws(x, &mut ws))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, outputs })
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    /// Soft labels, aligned with the shard the snapshot was built from.
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

/// Mean distillation loss of `student` against soft targets.
pub fn mean_distill_loss(student: &Mlp, inputs: &[&[f64]], targets: &[f64]) -> Result<f64> {
    let mut ws = Workspace::for_model(student);
    let mut total = 0.0;
    for (x, &t) in inputs.iter().zip(targets) {
        total += distill_loss(student.forward_ws(x, &mut ws)?, t);
    }
    Ok(total / inputs.len() as f64)
}

/// Plain (non-private) minibatch SGD step on the distillation loss:
/// `θ ← θ − η · (Σ_k ∇ℓ_k) / n`.
pub fn distill_sgd_step(student: &mut Mlp, inputs: &[&[f64]], targets: &[f64], lr: f64) -> Result<()> {
    let mut grad = vec![0.0; student.num_params()];
    let mut ws = Workspace::for_model(student);
    for (x, &t) in inputs.iter().zip(targets) {
        student.accumulate_grad(x, |p| cross_entropy_dp(p, t), &mut grad, &mut ws)?;
    }
    let n = inputs.len() as f64;
    for g in &mut grad {
        *g /= n;
    }
    let stepped = crate::nn::sgd_step(student.params(), &grad.into(), lr)?;
    student.set_params(stepped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distill_examples() {
        assert!((distill_loss(0.5, 0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        let expected = -0.6 * 0.9f64.ln() - 0.4 * 0.1f64.ln();
        assert!((distill_loss(0.9, 0.6) - expected).abs() < 1e-15);
        assert!((distill_loss(0.9, 0.6) - 0.9842).abs() < 1e-4);
    }

    #[test]
    fn minimum_at_teacher() {
        for &t in &[0.1, 0.35, 0.5, 0.8] {
            let h = binary_entropy(t);
            for k in 1..100 {
                let s = k as f64 / 100.0;
                assert!(distill_loss(s, t) >= h - 1e-15);
            }
        }
    }

    #[test]
    fn transfer_examples() {
        let r = transfer_bound_check(0.5, 0.5, 1);
        assert!((r.lhs - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((r.rhs - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(r.holds);
        // Teacher saturated at the label: near-equality.
        for &(s, y) in &[(0.3, 1u8), (0.7, 0u8)] {
            let t = if y == 1 { 1.0 } else { 0.0 };
            let r = transfer_bound_check(s, t, y);
            assert!(r.holds);
            assert!((r.rhs - r.lhs).abs() < 1e-5 * r.lhs);
        }
    }

    proptest! {
        #[test]
        fn kl_nonnegative(p in 1e-6f64..(1.0 - 1e-6), t in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert!(distill_loss(p, t) - distill_loss(t, t) >= -1e-12);
        }

        #[test]
        fn transfer_bound_holds(p in 1e-7f64..(1.0 - 1e-7), t in 1e-7f64..(1.0 - 1e-7), y in 0u8..2) {
            prop_assert!(transfer_bound_check(p, t, y).holds);
        }
    }
}
