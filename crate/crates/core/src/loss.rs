//! Per-sample losses and their exact `(mu, sigma)` gradients.
//!
//! Three losses are supported:
//!
//! - Gaussian negative log-likelihood (the baseline for distributional
//!   models): `0.5*ln(2*pi) + ln(sigma) + (y - mu)^2 / (2*sigma^2)`.
//! - The abstention loss `q * nll - alpha * ln(q)` with prediction weight
//!   `q = min(1, (kappa/sigma)^2)`. For `sigma <= kappa` it reduces to the
//!   baseline exactly (`q = 1`, `ln q = 0`); the same code path is reused so
//!   the identity holds to the last bit.
//! - Mean absolute error for the single-output point model.
//!
//! The `min` in `q` has a kink at `sigma = kappa`; gradients use the clamped
//! (zero-derivative) branch at equality.

use core::fmt;

use crate::math;
use crate::net::PredictionPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    GaussianNll,
    Abstention,
    Mae,
}

impl LossKind {
    /// Output width of the network this loss trains.
    pub fn output_width(self) -> usize {
        match self {
            LossKind::Mae => 1,
            _ => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::GaussianNll => "gaussian_nll",
            LossKind::Abstention => "abstention",
            LossKind::Mae => "mae",
        }
    }
}

/// Abstention-loss parameters: the penalty weight `alpha` and the sigma
/// scale `kappa` (same units as sigma).
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AbstentionParams {
    pub alpha: f64,
    pub kappa: f64,
}

impl AbstentionParams {
    pub fn new(alpha: f64, kappa: f64) -> Result<Self, LossError> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(LossError::InvalidAlpha { alpha });
        }
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(LossError::InvalidKappa { kappa });
        }
        Ok(Self { alpha, kappa })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossError {
    InvalidAlpha { alpha: f64 },
    InvalidKappa { kappa: f64 },
    /// The abstention loss was requested without its parameters.
    MissingAbstentionParams,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::InvalidAlpha { alpha } => write!(f, "alpha must be >= 0, got {alpha}"),
            LossError::InvalidKappa { kappa } => write!(f, "kappa must be > 0, got {kappa}"),
            LossError::MissingAbstentionParams => {
                write!(f, "abstention loss needs alpha and kappa")
            }
        }
    }
}

impl core::error::Error for LossError {}

/// Negative log-density of `y` under `N(mu, sigma^2)`.
///
/// Panics if `sigma <= 0`; the network's sigma transform makes that
/// unreachable in normal use.
#[inline]
pub fn gaussian_nll(y: f64, pred: PredictionPair) -> f64 {
    assert!(pred.sigma > 0.0, "sigma must be positive, got {}", pred.sigma);
    let r = y - pred.mu;
    math::HALF_LN_TAU + math::ln(pred.sigma) + r * r / (2.0 * pred.sigma * pred.sigma)
}

/// Prediction weight `q = min(1, (kappa/sigma)^2)`; equals 1 exactly when
/// `sigma <= kappa`.
#[inline]
pub fn prediction_weight(sigma: f64, kappa: f64) -> f64 {
    assert!(sigma > 0.0 && kappa > 0.0, "sigma and kappa must be positive");
    if sigma <= kappa {
        1.0
    } else {
        let ratio = kappa / sigma;
        ratio * ratio
    }
}

/// Abstention loss `q * nll - alpha * ln(q)`.
#[inline]
pub fn abstention_loss(y: f64, pred: PredictionPair, params: AbstentionParams) -> f64 {
    if pred.sigma <= params.kappa {
        // q = 1 and ln q = 0: identical to the baseline, bit for bit.
        gaussian_nll(y, pred)
    } else {
        let q = prediction_weight(pred.sigma, params.kappa);
        q * gaussian_nll(y, pred) - params.alpha * math::ln(q)
    }
}

/// Absolute error `|y - mu|`.
#[inline]
pub fn mae_loss(y: f64, mu: f64) -> f64 {
    math::abs(y - mu)
}

/// `(dL/dmu, dL/dsigma)` of the Gaussian NLL.
#[inline]
pub fn gaussian_nll_gradients(y: f64, pred: PredictionPair) -> (f64, f64) {
    let r = y - pred.mu;
    let s = pred.sigma;
    let d_mu = -r / (s * s);
    let d_sigma = 1.0 / s - r * r / (s * s * s);
    (d_mu, d_sigma)
}

/// `(dL/dmu, dL/dsigma)` of the abstention loss, treating `q` as a function
/// of `sigma` (clamped branch at `sigma = kappa`).
#[inline]
pub fn abstention_gradients(y: f64, pred: PredictionPair, params: AbstentionParams) -> (f64, f64) {
    if pred.sigma <= params.kappa {
        return gaussian_nll_gradients(y, pred);
    }
    let s = pred.sigma;
    let q = prediction_weight(s, params.kappa);
    let q_prime = -2.0 * q / s; // d/ds (kappa/s)^2 = -2 kappa^2 / s^3
    let nll = gaussian_nll(y, pred);
    let (nll_mu, nll_sigma) = gaussian_nll_gradients(y, pred);
    let d_mu = q * nll_mu;
    // -alpha * d/ds ln q = -alpha * q'/q = 2 alpha / s
    let d_sigma = q_prime * nll + q * nll_sigma + 2.0 * params.alpha / s;
    (d_mu, d_sigma)
}

/// `dL/dmu` of the MAE loss: the sign of the residual, zero at the tie.
#[inline]
pub fn mae_gradient(y: f64, mu: f64) -> f64 {
    if mu > y {
        1.0
    } else if mu < y {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample loss value for any kind. The point model reports its
/// prediction through `pred.mu`; `pred.sigma` is ignored for MAE.
pub fn loss_value(
    kind: LossKind,
    y: f64,
    pred: PredictionPair,
    params: Option<AbstentionParams>,
) -> Result<f64, LossError> {
    match kind {
        LossKind::GaussianNll => Ok(gaussian_nll(y, pred)),
        LossKind::Abstention => {
            let params = params.ok_or(LossError::MissingAbstentionParams)?;
            Ok(abstention_loss(y, pred, params))
        }
        LossKind::Mae => Ok(mae_loss(y, pred.mu)),
    }
}

/// Exact `(dL/dmu, dL/dsigma)` for any kind; MAE yields a zero sigma slot.
pub fn loss_gradients(
    kind: LossKind,
    y: f64,
    pred: PredictionPair,
    params: Option<AbstentionParams>,
) -> Result<(f64, f64), LossError> {
    match kind {
        LossKind::GaussianNll => Ok(gaussian_nll_gradients(y, pred)),
        LossKind::Abstention => {
            let params = params.ok_or(LossError::MissingAbstentionParams)?;
            Ok(abstention_gradients(y, pred, params))
        }
        LossKind::Mae => Ok((mae_gradient(y, pred.mu), 0.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn pred(mu: f64, sigma: f64) -> PredictionPair {
        PredictionPair { mu, sigma }
    }

    #[test]
    fn nll_at_the_mean_is_half_ln_tau() {
        let v = gaussian_nll(1.5, pred(1.5, 1.0));
        assert!((v - 0.918_938_533_204_672_7).abs() < 1e-15);
    }

    #[test]
    fn nll_one_sigma_away() {
        for &sigma in &[0.2, 1.0, 3.7] {
            let v = gaussian_nll(2.0 + sigma, pred(2.0, sigma));
            let expected = math::HALF_LN_TAU + math::ln(sigma) + 0.5;
            assert!((v - expected).abs() < 1e-12);
        }
    }

    /// Golden-section search over sigma; independent of the gradient code.
    fn argmin_sigma(r: f64) -> f64 {
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (1e-3 * r.abs().max(1e-3), 1e3 * r.abs().max(1e-3));
        let f = |s: f64| gaussian_nll(r, pred(0.0, s));
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..200 {
            if f1 < f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = f(x2);
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn nll_sigma_minimum_is_the_residual_magnitude() {
        for &r in &[0.3, 1.0, 2.5] {
            let s_star = argmin_sigma(r);
            assert!(
                (s_star - r).abs() / r < 1e-3,
                "residual {r}: argmin {s_star}"
            );
        }
    }

    #[test]
    fn prediction_weight_boundary_and_clamp() {
        assert_eq!(prediction_weight(1.0, 1.0), 1.0);
        assert_eq!(prediction_weight(2.0, 1.0), 0.25);
        assert_eq!(prediction_weight(0.1, 1.0), 1.0);
    }

    #[test]
    fn abstention_equals_baseline_below_kappa() {
        let params = AbstentionParams::new(3.0, 1.0).unwrap();
        for &sigma in &[0.05, 0.5, 1.0] {
            let p = pred(0.3, sigma);
            assert_eq!(abstention_loss(1.1, p, params), gaussian_nll(1.1, p));
        }
    }

    #[test]
    fn abstention_alpha_zero_scales_by_q() {
        let params = AbstentionParams::new(0.0, 1.0).unwrap();
        let p = pred(0.0, 2.0);
        assert_eq!(abstention_loss(0.7, p, params), 0.25 * gaussian_nll(0.7, p));
    }

    #[test]
    fn abstention_hand_evaluated_case() {
        // y = 0, mu = 0, sigma = 2, kappa = 1, alpha = 0.1:
        // q = 0.25, loss = 0.25*(0.5 ln 2pi + ln 2) - 0.1 ln 0.25.
        let params = AbstentionParams::new(0.1, 1.0).unwrap();
        let v = abstention_loss(0.0, pred(0.0, 2.0), params);
        assert!((v - 0.541_650_864_553_143_6).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn mae_basics() {
        assert_eq!(mae_loss(2.0, 2.0), 0.0);
        assert_eq!(mae_loss(3.0, 1.0), 2.0);
        let batch = [(0.0, 1.0), (2.0, 2.0), (5.0, 3.0)];
        let mean: f64 =
            batch.iter().map(|&(y, mu)| mae_loss(y, mu)).sum::<f64>() / batch.len() as f64;
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn nll_gradients_at_the_mean() {
        for &sigma in &[0.3, 1.0, 4.0] {
            let (d_mu, d_sigma) = gaussian_nll_gradients(0.7, pred(0.7, sigma));
            assert_eq!(d_mu, 0.0);
            assert!((d_sigma - 1.0 / sigma).abs() < 1e-15);
        }
    }

    #[test]
    fn abstention_gradients_match_baseline_below_kappa() {
        let params = AbstentionParams::new(0.4, 2.0).unwrap();
        let p = pred(0.1, 1.5);
        assert_eq!(
            abstention_gradients(0.9, p, params),
            gaussian_nll_gradients(0.9, p)
        );
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Deterministic sweep over 1000 tuples, skipping the sigma = kappa
        // kink band and the MAE tie.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut checked = 0usize;
        while checked < 1000 {
            let y: f64 = rng.random_range(-3.0..3.0);
            let mu: f64 = rng.random_range(-3.0..3.0);
            let sigma: f64 = rng.random_range(0.05..4.0);
            let kappa: f64 = rng.random_range(0.05..4.0);
            let alpha: f64 = rng.random_range(0.0..2.0);
            if (sigma - kappa).abs() < 1e-4 || (y - mu).abs() < 1e-4 {
                continue;
            }
            checked += 1;
            let params = AbstentionParams::new(alpha, kappa).unwrap();
            let h = 1e-5;
            for kind in [LossKind::GaussianNll, LossKind::Abstention, LossKind::Mae] {
                let (d_mu, d_sigma) =
                    loss_gradients(kind, y, pred(mu, sigma), Some(params)).unwrap();
                let num_mu = central_diff(
                    |m| loss_value(kind, y, pred(m, sigma), Some(params)).unwrap(),
                    mu,
                    h,
                );
                let num_sigma = central_diff(
                    |s| loss_value(kind, y, pred(mu, s), Some(params)).unwrap(),
                    sigma,
                    h,
                );
                for (analytic, numeric) in [(d_mu, num_mu), (d_sigma, num_sigma)] {
                    let scale = analytic.abs().max(numeric.abs()).max(1.0);
                    assert!(
                        (analytic - numeric).abs() / scale < 1e-6,
                        "{kind:?} y={y} mu={mu} sigma={sigma} kappa={kappa} alpha={alpha}: \
                         analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn dispatcher_requires_abstention_params() {
        let err = loss_gradients(LossKind::Abstention, 0.0, pred(0.0, 1.0), None).unwrap_err();
        assert_eq!(err, LossError::MissingAbstentionParams);
    }

    #[test]
    fn alpha_penalty_is_strictly_monotone_above_kappa() {
        let p = pred(0.2, 2.5);
        let alphas: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
        let mut last = f64::NEG_INFINITY;
        for &alpha in &alphas {
            let params = AbstentionParams::new(alpha, 1.0).unwrap();
            let v = abstention_loss(1.0, p, params);
            assert!(v > last);
            last = v;
        }
    }
}
