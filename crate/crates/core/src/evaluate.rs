//! Post-training analysis: sigma-thresholded coverage, MAE-versus-coverage
//! curves, z-score calibration, and ensemble envelopes.

use alloc::vec::Vec;
use core::fmt;

use crate::math;
use crate::net::PredictionPair;

/// Which loss family produced a run (for table/plot tags).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ModelTag {
    Baseline,
    Can,
    Mae,
}

impl ModelTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Baseline => "baseline",
            ModelTag::Can => "can",
            ModelTag::Mae => "mae",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalError {
    EmptyPredictions,
    BadCoverage { coverage: f64 },
    EmptyLevels,
    LengthMismatch { preds: usize, targets: usize },
    /// Envelope curves must share identical coverage levels.
    MismatchedLevels,
    EmptyCurves,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::EmptyPredictions => write!(f, "no predictions to evaluate"),
            EvalError::BadCoverage { coverage } => {
                write!(f, "coverage must be in (0, 1], got {coverage}")
            }
            EvalError::EmptyLevels => write!(f, "no coverage levels given"),
            EvalError::LengthMismatch { preds, targets } => {
                write!(f, "{preds} predictions vs {targets} targets")
            }
            EvalError::MismatchedLevels => write!(f, "curves do not share coverage levels"),
            EvalError::EmptyCurves => write!(f, "no curves to aggregate"),
        }
    }
}

impl core::error::Error for EvalError {}

/// Indices of the `ceil(coverage * n)` smallest sigmas (ties broken by
/// index), i.e. the most confident fraction of the predictions.
pub fn threshold_coverage(
    preds: &[PredictionPair],
    coverage: f64,
) -> Result<Vec<usize>, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(EvalError::BadCoverage { coverage });
    }
    let n = preds.len();
    let k = ceil_count(coverage, n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        preds[a]
            .sigma
            .partial_cmp(&preds[b].sigma)
            .expect("finite sigmas")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// The abstention rule's own covered set: `{i : sigma_i <= tau}`.
pub fn tau_covered(preds: &[PredictionPair], tau: f64) -> Vec<usize> {
    (0..preds.len()).filter(|&i| preds[i].sigma <= tau).collect()
}

fn ceil_count(coverage: f64, n: usize) -> usize {
    let x = coverage * n as f64;
    let t = x as usize;
    if (t as f64) < x {
        t + 1
    } else {
        t
    }
}

/// MAE over covered samples at each coverage level.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoverageCurve {
    pub levels: Vec<f64>,
    /// `None` marks a level that covered zero samples (absent, not zero).
    pub mae: Vec<Option<f64>>,
    pub n_covered: Vec<usize>,
    pub tag: ModelTag,
    pub seed: u64,
}

impl CoverageCurve {
    /// Computes the curve by sigma-percentile thresholding at each level.
    pub fn compute(
        preds: &[PredictionPair],
        y: &[f64],
        levels: &[f64],
        tag: ModelTag,
        seed: u64,
    ) -> Result<Self, EvalError> {
        if levels.is_empty() {
            return Err(EvalError::EmptyLevels);
        }
        if preds.len() != y.len() {
            return Err(EvalError::LengthMismatch {
                preds: preds.len(),
                targets: y.len(),
            });
        }
        let mut mae = Vec::with_capacity(levels.len());
        let mut n_covered = Vec::with_capacity(levels.len());
        for &level in levels {
            let covered = threshold_coverage(preds, level)?;
            if covered.is_empty() {
                mae.push(None);
                n_covered.push(0);
            } else {
                let sum: f64 = covered.iter().map(|&i| math::abs(y[i] - preds[i].mu)).sum();
                mae.push(Some(sum / covered.len() as f64));
                n_covered.push(covered.len());
            }
        }
        Ok(Self {
            levels: levels.to_vec(),
            mae,
            n_covered,
            tag,
            seed,
        })
    }

    /// Constant curve for models with no sigma to rank by (the MAE model
    /// reports only its overall error).
    pub fn flat(levels: &[f64], overall_mae: f64, n: usize, tag: ModelTag, seed: u64) -> Self {
        Self {
            levels: levels.to_vec(),
            mae: levels.iter().map(|_| Some(overall_mae)).collect(),
            n_covered: levels.iter().map(|_| n).collect(),
            tag,
            seed,
        }
    }
}

/// MAE over the covered set at each level (bare-function form).
pub fn mae_at_coverage(
    preds: &[PredictionPair],
    y: &[f64],
    levels: &[f64],
) -> Result<Vec<Option<f64>>, EvalError> {
    CoverageCurve::compute(preds, y, levels, ModelTag::Baseline, 0).map(|c| c.mae)
}

/// Standardized errors `z = (y - mu) / sigma` with a fixed histogram.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibrationStats {
    pub mean: f64,
    pub std: f64,
    /// 52 bins: underflow, 50 equal bins spanning [-5, 5], overflow.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub const HIST_RANGE: (f64, f64) = (-5.0, 5.0);
pub const HIST_BINS: usize = 50;

/// Per-sample z-scores.
pub fn z_values(preds: &[PredictionPair], y: &[f64]) -> Result<Vec<f64>, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyPredictions);
    }
    if preds.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            targets: y.len(),
        });
    }
    Ok(preds
        .iter()
        .zip(y)
        .map(|(p, &yv)| (yv - p.mu) / p.sigma)
        .collect())
}

/// Mean, standard deviation, and histogram of the z-scores.
pub fn zscores(preds: &[PredictionPair], y: &[f64]) -> Result<CalibrationStats, EvalError> {
    let z = z_values(preds, y)?;
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = if z.len() > 1 {
        z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let std = math::sqrt(var);

    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut bin_edges = Vec::with_capacity(HIST_BINS + 1);
    for i in 0..=HIST_BINS {
        bin_edges.push(lo + i as f64 * width);
    }
    let mut counts = alloc::vec![0u64; HIST_BINS + 2];
    for &v in &z {
        let idx = if v < lo {
            0
        } else if v >= hi {
            HIST_BINS + 1
        } else {
            1 + ((v - lo) / width) as usize
        };
        counts[idx.min(HIST_BINS + 1)] += 1;
    }
    Ok(CalibrationStats {
        mean,
        std,
        bin_edges,
        counts,
    })
}

/// Pointwise min / median / max over an ensemble of coverage curves.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Envelope {
    pub levels: Vec<f64>,
    pub min: Vec<Option<f64>>,
    pub median: Vec<Option<f64>>,
    pub max: Vec<Option<f64>>,
}

pub fn ensemble_envelope(curves: &[CoverageCurve]) -> Result<Envelope, EvalError> {
    let first = curves.first().ok_or(EvalError::EmptyCurves)?;
    for c in curves {
        if c.levels != first.levels {
            return Err(EvalError::MismatchedLevels);
        }
    }
    let mut min = Vec::with_capacity(first.levels.len());
    let mut median = Vec::with_capacity(first.levels.len());
    let mut max = Vec::with_capacity(first.levels.len());
    for i in 0..first.levels.len() {
        let mut present: Vec<f64> = curves.iter().filter_map(|c| c.mae[i]).collect();
        if present.is_empty() {
            min.push(None);
            median.push(None);
            max.push(None);
            continue;
        }
        present.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite mae"));
        min.push(Some(present[0]));
        max.push(Some(present[present.len() - 1]));
        let mid = present.len() / 2;
        let med = if present.len() % 2 == 1 {
            present[mid]
        } else {
            0.5 * (present[mid - 1] + present[mid])
        };
        median.push(Some(med));
    }
    Ok(Envelope {
        levels: first.levels.clone(),
        min,
        median,
        max,
    })
}
