use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::fairness::{demp_gap, eo_gap, GroupStats};
use crate::nn::{Mlp, Workspace};
use crate::{Error, Result};

/// Mean prediction of one group, or of one `(group, label)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub group: u8,
    pub label: Option<u8>,
    pub count: usize,
    pub mean: f64,
}

/// Test-set metrics of one model.
///
/// `demp`/`eo` are computed on probabilities; the `_thresholded` variants on
/// hard 0/1 predictions. `None` means unavailable (a group missing from the
/// test set), never zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub demp: Option<f64>,
    pub eo: Option<f64>,
    pub demp_thresholded: Option<f64>,
    pub eo_thresholded: Option<f64>,
    pub group_means: Vec<GroupMean>,
    /// Per-agent ε; `None` means unbounded (no noise).
    pub epsilon: Vec<Option<f64>>,
}

/// Predicted class is 1 when `p >= 0.5`.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn evaluate(model: &Mlp, test: &TabularDataset) -> Result<MetricsReport> {
    let mut ws = Workspace::for_model(model);
    let probs = test
        .rows()
        .into_iter()
        .map(|x| model.forward_ws(x, &mut ws))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&probs, &test.labels, &test.groups)
}

pub fn evaluate_predictions(probs: &[f64], labels: &[u8], groups: &[u8]) -> Result<MetricsReport> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch("evaluation on an empty test set".into()));
    }
    let hard: Vec<f64> = probs
        .iter()
        .map(|&p| if p >= DECISION_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    let correct = hard.iter().zip(labels).filter(|(h, &y)| **h == f64::from(y)).count();
    let soft = GroupStats::from_predictions(probs, groups, labels)?;
    let thresholded = GroupStats::from_predictions(&hard, groups, labels)?;

    let demp_available = soft.by_group.len() >= 2;
    let eo_available = soft
        .by_label
        .keys()
        .all(|&y| soft.by_cell.keys().filter(|(_, yy)| *yy == y).count() >= 2);
    let when = |ok: bool, v: Result<f64>| -> Result<Option<f64>> { if ok { v.map(Some) } else { Ok(None) } };

    let mut group_means: Vec<GroupMean> = soft
        .by_group
        .iter()
        .map(|(&g, acc)| GroupMean {
            group: g,
            label: None,
            count: acc.count,
            mean: acc.mean(),
        })
        .collect();
    group_means.extend(soft.by_cell.iter().map(|(&(g, y), acc)| GroupMean {
        group: g,
        label: Some(y),
        count: acc.count,
        mean: acc.mean(),
    }));

    Ok(MetricsReport {
        accuracy: correct as f64 / probs.len() as f64,
        demp: when(demp_available, demp_gap(&soft))?,
        eo: when(eo_available, eo_gap(&soft))?,
        demp_thresholded: when(demp_available, demp_gap(&thresholded))?,
        eo_thresholded: when(eo_available, eo_gap(&thresholded))?,
        group_means,
        epsilon: Vec::new(),
    })
}
