//! Fairness gaps, the Lagrangian fair-training objective and its dual update.
//!
//! Gaps are computed on predicted probabilities so they stay differentiable.
//! Both gaps take the maximum absolute deviation over the groups (or
//! `(group, label)` cells) present in a batch; absent groups are skipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::nn::{cross_entropy, cross_entropy_dp, Mlp, Workspace};
use crate::{Error, Result};

/// Default cap on the Lagrange multiplier.
pub const DEFAULT_LAMBDA_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMetricKind {
    /// Demographic parity.
    DemP,
    /// Equalized odds.
    Eo,
}

impl std::fmt::Display for FairnessMetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FairnessMetricKind::DemP => "demp",
            FairnessMetricKind::Eo => "eo",
        })
    }
}

impl std::str::FromStr for FairnessMetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "demp" => Ok(Self::DemP),
            "eo" => Ok(Self::Eo),
            other => Err(Error::InvalidConfig(format!("unknown fairness metric '{other}'"))),
        }
    }
}

/// Lagrange multiplier with its cap and dual learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangeState {
    pub lambda: f64,
    pub lambda_max: f64,
    pub dual_lr: f64,
}

impl LagrangeState {
    pub fn new(lambda: f64, lambda_max: f64, dual_lr: f64) -> Result<Self> {
        if !(lambda_max > 0.0) || !(0.0..=lambda_max).contains(&lambda) || !(dual_lr >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= lambda ({lambda}) <= lambda_max ({lambda_max}), dual_lr >= 0 ({dual_lr})"
            )));
        }
        Ok(Self {
            lambda,
            lambda_max,
            dual_lr,
        })
    }

    /// Gradient ascent on λ: the derivative of the objective with respect to λ is the gap.
    pub fn dual_ascent_step(self, gap: f64) -> Self {
        let lambda = (self.lambda + self.dual_lr * gap).clamp(0.0, self.lambda_max);
        Self { lambda, ..self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanAcc {
    pub sum: f64,
    pub count: usize,
}

impl MeanAcc {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Group-conditional prediction means for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub overall: MeanAcc,
    pub by_group: BTreeMap<u8, MeanAcc>,
    pub by_label: BTreeMap<u8, MeanAcc>,
    pub by_cell: BTreeMap<(u8, u8), MeanAcc>,
}

impl GroupStats {
    pub fn from_predictions(probs: &[f64], groups: &[u8], labels: &[u8]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyBatch("group statistics of an empty batch".into()));
        }
        if probs.len() != groups.len() || probs.len() != labels.len() {
            return Err(Error::Structural(format!(
                "{} predictions, {} groups, {} labels",
                probs.len(),
                groups.len(),
                labels.len()
            )));
        }
        let mut stats = GroupStats {
            overall: MeanAcc::default(),
            by_group: BTreeMap::new(),
            by_label: BTreeMap::new(),
            by_cell: BTreeMap::new(),
        };
        for ((&p, &a), &y) in probs.iter().zip(groups).zip(labels) {
            stats.overall.push(p);
            stats.by_group.entry(a).or_default().push(p);
            stats.by_label.entry(y).or_default().push(p);
            stats.by_cell.entry((a, y)).or_default().push(p);
        }
        Ok(stats)
    }

    pub fn len(&self) -> usize {
        self.overall.count
    }

    pub fn is_empty(&self) -> bool {
        self.overall.count == 0
    }
}

/// The group (or cell) attaining the maximum gap, with the sign of its deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSelection {
    pub gap: f64,
    pub group: u8,
    /// Label stratum for equalized odds; `None` for demographic parity.
    pub label: Option<u8>,
    /// Sign of `E[h | cell] - E[h | stratum]`; 0 when the gap is exactly 0.
    pub sign: f64,
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Demographic-parity gap and the group attaining it. Ties go to the smallest group id.
pub fn select_demp(stats: &GroupStats) -> Result<GapSelection> {
    if stats.is_empty() {
        return Err(Error::EmptyBatch("demographic parity of an empty batch".into()));
    }
    let marginal = stats.overall.mean();
    let mut best: Option<GapSelection> = None;
    for (&a, acc) in &stats.by_group {
        let diff = acc.mean() - marginal;
        if best.is_none_or(|b| diff.abs() > b.gap) {
            best = Some(GapSelection {
                gap: diff.abs(),
                group: a,
                label: None,
                sign: signum0(diff),
            });
        }
    }
    Ok(best.expect("nonempty stats have a group"))
}

/// Equalized-odds gap over `(group, label)` cells and the cell attaining it.
pub fn select_eo(stats: &GroupStats) -> Result<GapSelection> {
    if stats.is_empty() {
        return Err(Error::EmptyBatch("equalized odds of an empty batch".into()));
    }
    let mut best: Option<GapSelection> = None;
    for (&(a, y), acc) in &stats.by_cell {
        let diff = acc.mean() - stats.by_label[&y].mean();
        if best.is_none_or(|b| diff.abs() > b.gap) {
            best = Some(GapSelection {
                gap: diff.abs(),
                group: a,
                label: Some(y),
                sign: signum0(diff),
            });
        }
    }
    Ok(best.expect("nonempty stats have a cell"))
}

pub fn demp_gap(stats: &GroupStats) -> Result<f64> {
    select_demp(stats).map(|s| s.gap)
}

pub fn eo_gap(stats: &GroupStats) -> Result<f64> {
    select_eo(stats).map(|s| s.gap)
}

pub fn gap(stats: &GroupStats, kind: FairnessMetricKind) -> Result<f64> {
    select(stats, kind).map(|s| s.gap)
}

fn select(stats: &GroupStats, kind: FairnessMetricKind) -> Result<GapSelection> {
    match kind {
        FairnessMetricKind::DemP => select_demp(stats),
        FairnessMetricKind::Eo => select_eo(stats),
    }
}

/// Binary cross-entropy of a (clamped) probability against a hard label.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    cross_entropy(p, f64::from(y))
}

/// Components of the fair-training objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Loss {
    pub total: f64,
    pub ce: f64,
    pub gap: f64,
}

/// `mean BCE + λ · gap` on a batch.
pub fn phase1_loss(model: &Mlp, batch: &Batch<'_>, kind: FairnessMetricKind, lambda: f64) -> Result<Phase1Loss> {
    check_lambda(lambda)?;
    let probs = batch
        .x
        .iter()
        .map(|x| model.forward(x))
        .collect::<Result<Vec<_>>>()?;
    loss_from_probs(&probs, batch, kind, lambda).map(|(l, _)| l)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

fn loss_from_probs(
    probs: &[f64],
    batch: &Batch<'_>,
    kind: FairnessMetricKind,
    lambda: f64,
) -> Result<(Phase1Loss, GapSelection)> {
    let stats = GroupStats::from_predictions(probs, &batch.a, &batch.y)?;
    let sel = select(&stats, kind)?;
    let n = probs.len() as f64;
    let ce = probs.iter().zip(&batch.y).map(|(&p, &y)| bce_loss(p, y)).sum::<f64>() / n;
    Ok((
        Phase1Loss {
            total: ce + lambda * sel.gap,
            ce,
            gap: sel.gap,
        },
        sel,
    ))
}

/// Evaluates the fair objective and writes its gradient with respect to the
/// model parameters into `grad` (overwritten).
///
/// The gap term's gradient uses the selected group/cell only: a valid
/// subgradient of the max, exact away from ties.
pub fn phase1_loss_and_grad(
    model: &Mlp,
    batch: &Batch<'_>,
    kind: FairnessMetricKind,
    lambda: f64,
    grad: &mut [f64],
) -> Result<Phase1Loss> {
    check_lambda(lambda)?;
    let mut ws = Workspace::for_model(model);
    let probs = batch
        .x
        .iter()
        .map(|x| model.forward_ws(x, &mut ws))
        .collect::<Result<Vec<_>>>()?;
    let (loss, sel) = loss_from_probs(&probs, batch, kind, lambda)?;

    let n = probs.len() as f64;
    let (sel_count, stratum_count) = match sel.label {
        None => (
            batch.a.iter().filter(|&&a| a == sel.group).count(),
            probs.len(),
        ),
        Some(y) => (
            batch
                .a
                .iter()
                .zip(&batch.y)
                .filter(|&(&a, &yy)| a == sel.group && yy == y)
                .count(),
            batch.y.iter().filter(|&&yy| yy == y).count(),
        ),
    };

    grad.iter_mut().for_each(|g| *g = 0.0);
    for (i, x) in batch.x.iter().enumerate() {
        let (a, y) = (batch.a[i], batch.y[i]);
        let in_stratum = sel.label.is_none_or(|l| l == y);
        let mut w = 0.0;
        if in_stratum {
            if a == sel.group {
                w += 1.0 / sel_count as f64;
            }
            w -= 1.0 / stratum_count as f64;
        }
        let fair_weight = lambda * sel.sign * w;
        let y = f64::from(y);
        model.accumulate_grad(
            x,
            |p| cross_entropy_dp(p, y) / n + fair_weight,
            grad,
            &mut ws,
        )?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(probs: &[f64], groups: &[u8], labels: &[u8]) -> GroupStats {
        GroupStats::from_predictions(probs, groups, labels).unwrap()
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_loss(1.0, 1) < 1e-6);
        assert!(bce_loss(0.0, 0) < 1e-6);
        // Hand-summed mean over a toy set.
        let probs = [0.9, 0.2, 0.6, 0.3];
        let ys = [1u8, 0, 0, 1];
        let hand = (-(0.9f64.ln()) - (0.8f64.ln()) - (0.4f64.ln()) - (0.3f64.ln())) / 4.0;
        let mean = probs.iter().zip(ys).map(|(&p, y)| bce_loss(p, y)).sum::<f64>() / 4.0;
        assert!((mean - hand).abs() < 1e-15);
        assert!((hand - 0.6121919).abs() < 1e-6);
    }

    #[test]
    fn demp_examples() {
        assert!(demp_gap(&stats(&[0.4; 6], &[0, 0, 1, 1, 1, 0], &[0; 6])).unwrap() < 1e-15);
        let s = stats(&[0.8, 0.8, 0.2, 0.2], &[0, 0, 1, 1], &[1, 0, 1, 0]);
        assert!((demp_gap(&s).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(demp_gap(&stats(&[0.1, 0.9, 0.5], &[1, 1, 1], &[0, 1, 0])).unwrap(), 0.0);
    }

    #[test]
    fn demp_tie_picks_smallest_group() {
        let s = stats(&[0.8, 0.2], &[0, 1], &[0, 0]);
        let sel = select_demp(&s).unwrap();
        assert_eq!(sel.group, 0);
        assert_eq!(sel.sign, 1.0);
    }

    #[test]
    fn eo_examples() {
        let c = stats(&[0.3; 8], &[0, 1, 0, 1, 0, 1, 0, 1], &[0, 0, 1, 1, 0, 0, 1, 1]);
        assert_eq!(eo_gap(&c).unwrap(), 0.0);
        // y=1: group means 0.9 / 0.5 (marginal 0.7); y=0: all 0.4.
        let s = stats(
            &[0.9, 0.9, 0.5, 0.5, 0.4, 0.4, 0.4],
            &[0, 0, 1, 1, 0, 1, 1],
            &[1, 1, 1, 1, 0, 0, 0],
        );
        assert!((eo_gap(&s).unwrap() - 0.2).abs() < 1e-12);
        // Only one label present: stratum-restricted gap.
        let s = stats(&[0.6, 0.2, 0.4], &[0, 1, 1], &[1, 1, 1]);
        assert!((eo_gap(&s).unwrap() - (0.6 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_errors() {
        assert!(matches!(
            GroupStats::from_predictions(&[], &[], &[]),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn dual_ascent_examples() {
        let s = LagrangeState::new(5.0, 1000.0, 1.0).unwrap();
        assert_eq!(s.dual_ascent_step(0.0).lambda, 5.0);
        assert!((s.dual_ascent_step(0.1).lambda - 5.1).abs() < 1e-12);
        let mut s = LagrangeState::new(0.0, 1.0, 0.5).unwrap();
        let mut prev = s.lambda;
        for _ in 0..10 {
            s = s.dual_ascent_step(0.3);
            assert!(s.lambda >= prev && s.lambda <= 1.0);
            prev = s.lambda;
        }
        assert_eq!(s.lambda, 1.0);
        assert!(LagrangeState::new(-1.0, 10.0, 0.1).is_err());
    }

    fn toy_batch(xs: &[Vec<f64>], y: Vec<u8>, a: Vec<u8>) -> Batch<'_> {
        Batch {
            x: xs.iter().map(|v| v.as_slice()).collect(),
            y,
            a,
        }
    }

    #[test]
    fn phase1_loss_examples() {
        let model = Mlp::new(&[2, 3, 1], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let xs = vec![vec![0.1, 0.2], vec![1.0, -1.0], vec![0.5, 0.5], vec![-0.3, 0.9]];
        let batch = toy_batch(&xs, vec![1, 0, 1, 0], vec![0, 0, 1, 1]);
        let l0 = phase1_loss(&model, &batch, FairnessMetricKind::DemP, 0.0).unwrap();
        assert_eq!(l0.total, l0.ce);

        // Constant predictor is perfectly fair: total = ce for any λ.
        let zero = Mlp::zeros(&[2, 3, 1]).unwrap();
        for kind in [FairnessMetricKind::DemP, FairnessMetricKind::Eo] {
            let l = phase1_loss(&zero, &batch, kind, 37.0).unwrap();
            assert_eq!(l.gap, 0.0);
            assert_eq!(l.total, l.ce);
        }
        assert!(phase1_loss(&model, &batch, FairnessMetricKind::DemP, -1.0).is_err());
    }

    #[test]
    fn gradient_matches_loss_evaluation_route() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let model = Mlp::new(&[3, 4, 1], &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = toy_batch(&xs, (0..10).map(|i| (i % 2) as u8).collect(), (0..10).map(|i| (i / 3 % 2) as u8).collect());
        for kind in [FairnessMetricKind::DemP, FairnessMetricKind::Eo] {
            let mut g = vec![0.0; model.num_params()];
            let l = phase1_loss_and_grad(&model, &batch, kind, 3.0, &mut g).unwrap();
            assert_eq!(l, phase1_loss(&model, &batch, kind, 3.0).unwrap());
            let h = 1e-5;
            for (i, &gi) in g.iter().enumerate() {
                let mut p = model.params().clone();
                p.0[i] += h;
                let up = phase1_loss(&Mlp::unflatten(model.dims(), p.clone()).unwrap(), &batch, kind, 3.0).unwrap();
                p.0[i] -= 2.0 * h;
                let dn = phase1_loss(&Mlp::unflatten(model.dims(), p).unwrap(), &batch, kind, 3.0).unwrap();
                let fd = (up.total - dn.total) / (2.0 * h);
                let denom = gi.abs().max(fd.abs()).max(1e-6);
                assert!((gi - fd).abs() / denom < 1e-4, "{kind} param {i}: {gi} vs {fd}");
            }
        }
    }

    proptest! {
        #[test]
        fn gaps_invariant_under_group_relabeling(
            rows in proptest::collection::vec((0.0f64..1.0, 0u8..3, 0u8..2), 1..40)
        ) {
            let probs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let groups: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let labels: Vec<u8> = rows.iter().map(|r| r.2).collect();
            let relabeled: Vec<u8> = groups.iter().map(|&g| [7u8, 2, 5][g as usize]).collect();
            let a = stats(&probs, &groups, &labels);
            let b = stats(&probs, &relabeled, &labels);
            prop_assert!((demp_gap(&a).unwrap() - demp_gap(&b).unwrap()).abs() < 1e-12);
            prop_assert!((eo_gap(&a).unwrap() - eo_gap(&b).unwrap()).abs() < 1e-12);
            prop_assert!(demp_gap(&a).unwrap() >= 0.0 && eo_gap(&a).unwrap() >= 0.0);
        }

        #[test]
        fn constant_predictor_has_zero_gaps(
            c in 0.0f64..1.0,
            rows in proptest::collection::vec((0u8..2, 0u8..2), 1..40)
        ) {
            let probs = vec![c; rows.len()];
            let groups: Vec<u8> = rows.iter().map(|r| r.0).collect();
            let labels: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let s = stats(&probs, &groups, &labels);
            prop_assert!(demp_gap(&s).unwrap() < 1e-15);
            prop_assert!(eo_gap(&s).unwrap() < 1e-15);
        }

        #[test]
        fn dual_ascent_stays_in_bounds(
            start in 0.0f64..50.0,
            lr in 0.0f64..10.0,
            gaps in proptest::collection::vec(0.0f64..1.0, 0..50)
        ) {
            let mut s = LagrangeState::new(start, 50.0, lr).unwrap();
            for g in gaps {
                s = s.dual_ascent_step(g);
                prop_assert!(s.lambda >= 0.0 && s.lambda <= 50.0);
            }
        }
    }
}
