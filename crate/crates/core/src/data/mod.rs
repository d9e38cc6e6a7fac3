//! Tabular datasets: loading, train/test splitting, standardization and
//! agent sharding with minority-first duplication.

mod schema;
mod shard;
mod synthetic;

pub use schema::{load_csv, ColumnKind, ColumnSpec, LoadedCsv, Schema, SensitiveRule};
pub use shard::{shard_with_duplication, ShardPlan};
pub use synthetic::{synthetic_adult, SyntheticConfig};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense feature matrix with binary labels and a binary sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    /// Row-major, `len() * n_features` entries.
    pub features: Vec<f64>,
    pub n_features: usize,
    pub labels: Vec<u8>,
    pub groups: Vec<u8>,
    /// One name per feature column (`"age"`, `"workclass=Private"`, ...).
    pub feature_names: Vec<String>,
    /// Which feature columns are numeric and therefore standardized.
    pub numeric: Vec<bool>,
}

/// Borrowed minibatch view.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub x: Vec<&'a [f64]>,
    pub y: Vec<u8>,
    pub a: Vec<u8>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

impl TabularDataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<u8>,
        groups: Vec<u8>,
        feature_names: Vec<String>,
        numeric: Vec<bool>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            n_features,
            labels,
            groups,
            feature_names,
            numeric,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.groups.len() != n || self.features.len() != n * self.n_features {
            return Err(Error::Structural(format!(
                "dataset shape mismatch: {} labels, {} groups, {} feature values for width {}",
                n,
                self.groups.len(),
                self.features.len(),
                self.n_features
            )));
        }
        if self.feature_names.len() != self.n_features || self.numeric.len() != self.n_features {
            return Err(Error::Structural("feature metadata width mismatch".into()));
        }
        if self.labels.iter().chain(&self.groups).any(|&v| v > 1) {
            return Err(Error::Structural("labels and attribute must be binary".into()));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Structural("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.features.chunks_exact(self.n_features.max(1)).take(self.len()).collect()
    }

    /// Copies the given rows (duplicates allowed) into a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            n_features: self.n_features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            feature_names: self.feature_names.clone(),
            numeric: self.numeric.clone(),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch<'_> {
        Batch {
            x: idx.iter().map(|&i| self.row(i)).collect(),
            y: idx.iter().map(|&i| self.labels[i]).collect(),
            a: idx.iter().map(|&i| self.groups[i]).collect(),
        }
    }

    pub fn full_batch(&self) -> Batch<'_> {
        Batch {
            x: self.rows(),
            y: self.labels.clone(),
            a: self.groups.clone(),
        }
    }

    /// Row indices per `(group, label)` cell.
    pub fn cells(&self) -> BTreeMap<(u8, u8), Vec<usize>> {
        let mut cells: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            cells.entry((self.groups[i], self.labels[i])).or_default().push(i);
        }
        cells
    }
}

/// Per-column affine standardization of the numeric features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Mean and population standard deviation of each numeric column. Constant
    /// columns get a unit scale; one-hot columns are left as identity.
    pub fn fit(ds: &TabularDataset) -> Self {
        let d = ds.n_features;
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        for j in (0..d).filter(|&j| ds.numeric[j]) {
            let m = (0..ds.len()).map(|i| ds.row(i)[j]).sum::<f64>() / n;
            let var = (0..ds.len()).map(|i| (ds.row(i)[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, ds: &mut TabularDataset) {
        let d = ds.n_features;
        for row in ds.features.chunks_exact_mut(d.max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Standardized train/test pair.
#[derive(Debug, Clone)]
pub struct TrainTest {
    pub train: TabularDataset,
    pub test: TabularDataset,
    /// Indices into the source dataset.
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub standardizer: Standardizer,
    pub stratified: bool,
    pub warnings: Vec<String>,
}

/// Largest-remainder allocation of `total` units proportional to `weights`.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = total - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (exact[i] - exact[i].floor(), exact[j] - exact[j].floor());
        rj.partial_cmp(&ri).expect("finite").then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Holds out `fraction` of the rows, stratified by `(group, label)` cell,
/// then standardizes both parts with statistics from the training rows only.
///
/// Falls back to an unstratified split (with a warning) when some cell has
/// fewer than two rows.
pub fn split_train_test<R: Rng + ?Sized>(ds: &TabularDataset, fraction: f64, rng: &mut R) -> Result<TrainTest> {
    if ds.is_empty() {
        return Err(Error::EmptyBatch("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("test fraction must be in (0, 1), got {fraction}")));
    }
    let n_test = ((ds.len() as f64) * fraction).round() as usize;
    let cells = ds.cells();
    let mut warnings = Vec::new();
    let stratified = cells.values().all(|c| c.len() >= 2);
    let mut test_idx = Vec::with_capacity(n_test);
    let mut train_idx = Vec::with_capacity(ds.len() - n_test);
    if stratified {
        let weights: Vec<f64> = cells.values().map(|c| c.len() as f64).collect();
        let quota = apportion(n_test, &weights);
        for (rows, q) in cells.values().zip(quota) {
            let mut rows = rows.clone();
            rows.shuffle(rng);
            test_idx.extend_from_slice(&rows[..q]);
            train_idx.extend_from_slice(&rows[q..]);
        }
    } else {
        warnings.push("a (group, label) cell has fewer than 2 rows; using an unstratified split".into());
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(rng);
        test_idx.extend_from_slice(&all[..n_test]);
        train_idx.extend_from_slice(&all[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let mut train = ds.subset(&train_idx);
    let mut test = ds.subset(&test_idx);
    let standardizer = Standardizer::fit(&train);
    standardizer.apply(&mut train);
    standardizer.apply(&mut test);
    Ok(TrainTest {
        train,
        test,
        train_idx,
        test_idx,
        standardizer,
        stratified,
        warnings,
    })
}
