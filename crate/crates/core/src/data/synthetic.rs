//! Adult-shaped synthetic data for runs without an external CSV.
//!
//! The attribute `a` (1 = majority, 67%) shifts several features (proxies) and
//! the categorical mix, and also enters the label logit directly, so an
//! accuracy-only model picks up a demographic-parity gap comparable to the
//! census data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TabularDataset;
use crate::nn::sigmoid;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub rows: usize,
    /// Direct effect of the attribute on the label logit.
    pub bias: f64,
    /// How strongly the attribute shifts the proxy features.
    pub proxy: f64,
    /// Share of rows in the majority group.
    pub majority: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 8000,
            bias: 1.2,
            proxy: 0.8,
            majority: 0.67,
        }
    }
}

const WEIGHTS: [f64; 6] = [1.3, 0.9, 1.1, -0.7, 0.5, 0.3];
const PROXY_LOADING: [f64; 6] = [1.0, 0.6, 0.0, 0.0, 0.4, 0.0];
const CAT_EFFECT: [f64; 4] = [0.9, 0.3, -0.3, -0.9];
const CAT_PROBS: [[f64; 4]; 2] = [[0.15, 0.2, 0.3, 0.35], [0.4, 0.3, 0.2, 0.1]];
const INTERCEPT: f64 = -2.3;

pub fn synthetic_adult<R: Rng + ?Sized>(cfg: &SyntheticConfig, rng: &mut R) -> Result<TabularDataset> {
    let width = WEIGHTS.len() + CAT_EFFECT.len();
    let mut features = Vec::with_capacity(cfg.rows * width);
    let mut labels = Vec::with_capacity(cfg.rows);
    let mut groups = Vec::with_capacity(cfg.rows);
    for _ in 0..cfg.rows {
        let a = u8::from(rng.random::<f64>() < cfg.majority);
        let centered = f64::from(a) - cfg.majority;
        let mut logit = INTERCEPT + cfg.bias * centered;
        for (w, load) in WEIGHTS.iter().zip(PROXY_LOADING) {
            let z: f64 = StandardNormal.sample(rng);
            let x = z + cfg.proxy * load * centered * 2.0;
            logit += w * x;
            features.push(x);
        }
        let u: f64 = rng.random();
        let probs = &CAT_PROBS[a as usize];
        let mut cum = 0.0;
        let mut level = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                level = k;
                break;
            }
        }
        logit += CAT_EFFECT[level];
        features.extend((0..CAT_EFFECT.len()).map(|k| if k == level { 1.0 } else { 0.0 }));
        labels.push(u8::from(rng.random::<f64>() < sigmoid(logit)));
        groups.push(a);
    }
    let mut names: Vec<String> = (0..WEIGHTS.len()).map(|j| format!("x{j}")).collect();
    names.extend((0..CAT_EFFECT.len()).map(|k| format!("cat={k}")));
    let mut numeric = vec![true; WEIGHTS.len()];
    numeric.extend(vec![false; CAT_EFFECT.len()]);
    TabularDataset::new(features, width, labels, groups, names, numeric)
}
