//! Rényi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//!
//! Per step and order α the bound is `ln(A_α) / (α − 1)` with
//!
//! ```text
//! A_α = E_{z ~ N(0, σ²)} [ ((1 − q) + q · N(z; 1, σ²) / N(z; 0, σ²))^α ]
//! ```
//!
//! evaluated in closed form (binomial expansion) for integer α and with the
//! erfc series expansion for fractional α. Steps compose additively; the
//! conversion to `(ε, δ)` is `min_α [T·rdp(α) + ln(1/δ) / (α − 1)]`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::{Error, Result};

/// Lower edge of the noise-multiplier search range.
pub const SIGMA_MIN: f64 = 0.3;
/// Upper edge of the noise-multiplier search range.
pub const SIGMA_MAX: f64 = 100.0;

/// Rényi orders used for every ε computation.
pub fn alpha_grid() -> Vec<f64> {
    let mut g = vec![1.25, 1.5, 1.75];
    g.extend((2..=64).map(f64::from));
    g.extend([128.0, 256.0]);
    g
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a − e^b)` for `a ≥ b`.
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a <= b {
        // Cancellation below representable precision.
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

fn log_erfc(x: f64) -> f64 {
    if x < 20.0 {
        erfc(x).ln()
    } else {
        let x2 = x * x;
        let series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2)
            + 105.0 / (16.0 * x2 * x2 * x2 * x2);
        -x2 - (x * std::f64::consts::PI.sqrt()).ln() + series.ln()
    }
}

fn log_a_int(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let a = alpha as f64;
    let mut log_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=alpha {
        if k > 0 {
            log_binom += ((a - k as f64 + 1.0) / k as f64).ln();
        }
        let kf = k as f64;
        let term = log_binom + kf * lq + (a - kf) * l1q + (kf * kf - kf) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let s2 = 2.0 * sigma * sigma;
    let sqrt2s = std::f64::consts::SQRT_2 * sigma;
    let (mut log_a0, mut log_a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    // Generalized binomial coefficient C(alpha, i) tracked as (ln|c|, sign).
    let (mut log_coef, mut sign) = (0.0f64, 1.0f64);
    for i in 0..10_000u32 {
        let fi = f64::from(i);
        if i > 0 {
            let ratio = (alpha - fi + 1.0) / fi;
            if ratio == 0.0 {
                break;
            }
            log_coef += ratio.abs().ln();
            if ratio < 0.0 {
                sign = -sign;
            }
        }
        let j = alpha - fi;
        let log_t0 = log_coef + fi * lq + j * l1q;
        let log_t1 = log_coef + j * lq + fi * l1q;
        let log_e0 = 0.5f64.ln() + log_erfc((fi - z0) / sqrt2s);
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / sqrt2s);
        let log_s0 = log_t0 + (fi * fi - fi) / s2 + log_e0;
        let log_s1 = log_t1 + (j * j - j) / s2 + log_e1;
        if sign > 0.0 {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if log_s0.max(log_s1) < -30.0 {
            break;
        }
    }
    log_add(log_a0, log_a1)
}

fn check_mechanism(q: f64, sigma: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidConfig(format!("sampling probability must be in (0, 1], got {q}")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise multiplier must be >= 0, got {sigma}")));
    }
    Ok(())
}

/// Rényi divergence bound of order `alpha` for one subsampled-Gaussian step.
///
/// Returns `+∞` when `sigma == 0` (no noise, unbounded privacy loss).
pub fn rdp_per_step(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    check_mechanism(q, sigma)?;
    if !(alpha > 1.0) {
        return Err(Error::InvalidConfig(format!("Rényi order must be > 1, got {alpha}")));
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    if q == 1.0 {
        return Ok(alpha / (2.0 * sigma * sigma));
    }
    let log_a = if alpha.fract() == 0.0 && alpha <= 1e6 {
        log_a_int(q, sigma, alpha as u64)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    Ok((log_a / (alpha - 1.0)).max(0.0))
}

/// Accumulated RDP bound over the order grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub values: Vec<f64>,
}

impl RdpCurve {
    pub fn zero() -> Self {
        let orders = alpha_grid();
        let values = vec![0.0; orders.len()];
        Self { orders, values }
    }

    /// Adds `steps` compositions of the `(q, σ)` mechanism.
    pub fn compose(&mut self, q: f64, sigma: f64, steps: u64) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        for (v, &a) in self.values.iter_mut().zip(&self.orders) {
            *v += steps as f64 * rdp_per_step(q, sigma, a)?;
        }
        Ok(())
    }

    /// `(ε, α*)` minimizing `rdp(α) + ln(1/δ)/(α − 1)` over the grid.
    pub fn to_epsilon(&self, delta: f64) -> (f64, f64) {
        let log_inv_delta = (1.0 / delta).ln();
        self.orders
            .iter()
            .zip(&self.values)
            .map(|(&a, &v)| (v + log_inv_delta / (a - 1.0), a))
            .fold((f64::INFINITY, f64::NAN), |best, cur| if cur.0 < best.0 { cur } else { best })
    }
}

/// Privacy parameters of one agent's private phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
    pub delta: f64,
}

impl PrivacyLedger {
    pub fn new(q: f64, sigma: f64, delta: f64) -> Result<Self> {
        check_mechanism(q, sigma)?;
        check_delta(delta)?;
        Ok(Self {
            q,
            sigma,
            steps: 0,
            delta,
        })
    }

    pub fn record_steps(&mut self, n: u64) {
        self.steps += n;
    }

    pub fn epsilon(&self) -> Result<f64> {
        epsilon(self.q, self.sigma, self.steps, self.delta)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `(ε, δ)` guarantee after `steps` subsampled-Gaussian steps.
pub fn epsilon(q: f64, sigma: f64, steps: u64, delta: f64) -> Result<f64> {
    check_mechanism(q, sigma)?;
    check_delta(delta)?;
    if steps == 0 {
        return Ok(0.0);
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut curve = RdpCurve::zero();
    curve.compose(q, sigma, steps)?;
    Ok(curve.to_epsilon(delta).0)
}

/// Smallest σ in `[SIGMA_MIN, SIGMA_MAX]` (to bisection precision) with `ε(σ) ≤ target`.
pub fn calibrate_sigma(q: f64, steps: u64, delta: f64, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidConfig(format!("target epsilon must be > 0, got {target}")));
    }
    let eps = |s: f64| epsilon(q, s, steps, delta);
    if eps(SIGMA_MIN)? <= target {
        return Ok(SIGMA_MIN);
    }
    if eps(SIGMA_MAX)? > target {
        return Err(Error::SigmaOutOfRange {
            target,
            lo: SIGMA_MIN,
            hi: SIGMA_MAX,
        });
    }
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    while hi - lo > 1e-7 * hi {
        let mid = 0.5 * (lo + hi);
        if eps(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_is_plain_gaussian() {
        assert_eq!(rdp_per_step(1.0, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(rdp_per_step(1.0, 2.0, 8.0).unwrap(), 1.0);
        assert_eq!(rdp_per_step(0.5, 0.0, 2.0).unwrap(), f64::INFINITY);
        assert!(rdp_per_step(0.5, 1.0, 1.0).is_err());
        assert!(rdp_per_step(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn integer_and_fractional_routes_agree_near_integers() {
        // The series route evaluated at α = k ± tiny must straddle the closed form.
        for &(q, s) in &[(0.01, 1.1), (0.05, 2.0), (0.2, 0.8)] {
            for k in [2u64, 3, 5, 10] {
                let exact = log_a_int(q, s, k);
                let near = log_a_frac(q, s, k as f64 + 1e-9);
                assert!((exact - near).abs() < 1e-6 * exact.abs().max(1.0), "q={q} s={s} k={k}");
            }
        }
    }

    #[test]
    fn zero_steps_zero_epsilon() {
        assert_eq!(epsilon(0.01, 1.0, 0, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn doubling_steps_never_decreases_epsilon() {
        let mut prev = 0.0;
        for t in [1u64, 2, 4, 8, 16, 32, 64, 128] {
            let e = epsilon(0.02, 1.0, t, 1e-5).unwrap();
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn grid_minimum_close_to_dense_refinement() {
        // q = 1, σ = 4: rdp(α) = α / 32.
        let delta: f64 = 1e-5;
        let grid = epsilon(1.0, 4.0, 1, delta).unwrap();
        let dense = (0..200_000)
            .map(|i| 1.0 + 1e-3 * (i as f64 + 1.0))
            .map(|a| a / 32.0 + (1.0 / delta).ln() / (a - 1.0))
            .fold(f64::INFINITY, f64::min);
        assert!(grid >= dense - 1e-12);
        assert!((grid - dense) / dense < 0.01, "grid {grid} dense {dense}");
    }

    #[test]
    fn calibration_limits() {
        assert_eq!(calibrate_sigma(0.05, 400, 1e-4, 1e6).unwrap(), SIGMA_MIN);
        assert!(matches!(
            calibrate_sigma(1.0, 1_000_000, 1e-10, 0.01),
            Err(Error::SigmaOutOfRange { .. })
        ));
        assert!(calibrate_sigma(0.05, 400, 1e-4, 0.0).is_err());
    }

    #[test]
    fn ledger_validation() {
        assert!(PrivacyLedger::new(0.05, 1.0, 1.5).is_err());
        let mut l = PrivacyLedger::new(0.05, 1.0, 1e-4).unwrap();
        l.record_steps(20);
        assert!(l.epsilon().unwrap() > 0.0);
    }
}
