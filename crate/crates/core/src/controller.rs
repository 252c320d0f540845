//! Velocity-form discrete PID control of the abstention penalty `alpha`.
//!
//! During abstention training the trainer feeds every batch's predicted
//! sigmas to the controller. Abstention is measured as the fraction of
//! sigmas above the threshold `tau`, accumulated over a fixed window of
//! consecutive batches (windows carry over epoch boundaries). At each window
//! boundary the velocity update
//!
//! ```text
//! e      = measured_abstention - setpoint
//! dalpha = kp*(e - e_prev) + ki*e + kd*(e - 2*e_prev + e_prev2)
//! alpha  = clamp(alpha + dalpha, alpha_min, alpha_max)
//! ```
//!
//! is applied. Sign convention: abstention above the setpoint raises
//! `alpha`, and since the `-alpha*ln(q)` loss term penalizes abstaining,
//! a larger `alpha` pushes the abstention fraction back down.

use core::fmt;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Batches per control window.
    pub window_batches: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Target abstention fraction in `[0, 1]`.
    pub setpoint: f64,
}

impl PidConfig {
    /// Default gains with the given abstention setpoint.
    pub fn new(setpoint: f64) -> Self {
        Self {
            kp: 1.0,
            ki: 0.5,
            kd: 0.0,
            window_batches: 6,
            alpha_min: 0.0,
            alpha_max: 10.0,
            setpoint,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(0.0..=1.0).contains(&self.setpoint) {
            return Err(ControllerError::InvalidSetpoint {
                setpoint: self.setpoint,
            });
        }
        if self.window_batches == 0 {
            return Err(ControllerError::EmptyWindow);
        }
        let bounds_ok = self.alpha_min >= 0.0 && self.alpha_max >= self.alpha_min;
        if !bounds_ok || self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err(ControllerError::InvalidGains);
        }
        Ok(())
    }
}

/// Mutable controller state: current `alpha`, the last two error samples,
/// and the open window's counters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PidState {
    pub alpha: f64,
    pub e_prev: f64,
    pub e_prev2: f64,
    pub window_abstained: u64,
    pub window_total: u64,
    batches_in_window: u32,
    window_index: u64,
}

impl PidState {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

/// One completed control step, suitable for the run's metrics stream.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlStep {
    pub window_index: u64,
    pub measured_abstention: f64,
    pub error: f64,
    pub delta_alpha: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControllerError {
    EmptySigmas,
    EmptyWindow,
    InvalidSetpoint { setpoint: f64 },
    InvalidGains,
}

impl fmt::Display for ControllerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerError::EmptySigmas => write!(f, "cannot measure abstention of zero sigmas"),
            ControllerError::EmptyWindow => write!(f, "window_batches must be >= 1"),
            ControllerError::InvalidSetpoint { setpoint } => {
                write!(f, "setpoint must be in [0, 1], got {setpoint}")
            }
            ControllerError::InvalidGains => write!(f, "gains and alpha bounds must be valid"),
        }
    }
}

impl core::error::Error for ControllerError {}

/// Fraction of sigmas strictly above `tau`.
pub fn measure_abstention(sigmas: &[f64], tau: f64) -> Result<f64, ControllerError> {
    if sigmas.is_empty() {
        return Err(ControllerError::EmptySigmas);
    }
    let abstained = sigmas.iter().filter(|&&s| s > tau).count();
    Ok(abstained as f64 / sigmas.len() as f64)
}

/// One velocity-form update from a completed window's measured abstention.
/// Returns the applied `delta_alpha` (after clamping).
pub fn pid_update(state: &mut PidState, cfg: &PidConfig, measured: f64) -> f64 {
    let e = measured - cfg.setpoint;
    let delta = cfg.kp * (e - state.e_prev)
        + cfg.ki * e
        + cfg.kd * (e - 2.0 * state.e_prev + state.e_prev2);
    let old = state.alpha;
    state.alpha = (state.alpha + delta).clamp(cfg.alpha_min, cfg.alpha_max);
    state.e_prev2 = state.e_prev;
    state.e_prev = e;
    state.alpha - old
}

/// The abstention-stage alpha policy: a fixed constant or a PID loop.
#[derive(Clone, Debug, PartialEq)]
pub enum AlphaController {
    Constant { alpha: f64 },
    Pid { cfg: PidConfig, state: PidState },
}

/// Controller whose update is the identity on `alpha` (the constant-alpha
/// training regime).
pub fn constant_alpha_controller(alpha: f64) -> AlphaController {
    AlphaController::Constant { alpha }
}

impl AlphaController {
    pub fn pid(cfg: PidConfig) -> Result<Self, ControllerError> {
        cfg.validate()?;
        Ok(AlphaController::Pid {
            cfg,
            state: PidState::with_alpha(cfg.alpha_min),
        })
    }

    pub fn alpha(&self) -> f64 {
        match self {
            AlphaController::Constant { alpha } => *alpha,
            AlphaController::Pid { state, .. } => state.alpha,
        }
    }

    pub fn setpoint(&self) -> Option<f64> {
        match self {
            AlphaController::Constant { .. } => None,
            AlphaController::Pid { cfg, .. } => Some(cfg.setpoint),
        }
    }

    /// Feeds one training batch's sigmas into the open window. Returns a
    /// [`ControlStep`] when the window completes (PID mode only).
    pub fn observe_batch(
        &mut self,
        sigmas: &[f64],
        tau: f64,
    ) -> Result<Option<ControlStep>, ControllerError> {
        match self {
            AlphaController::Constant { .. } => Ok(None),
            AlphaController::Pid { cfg, state } => {
                if sigmas.is_empty() {
                    return Err(ControllerError::EmptySigmas);
                }
                state.window_abstained += sigmas.iter().filter(|&&s| s > tau).count() as u64;
                state.window_total += sigmas.len() as u64;
                state.batches_in_window += 1;
                if (state.batches_in_window as usize) < cfg.window_batches {
                    return Ok(None);
                }
                let measured = state.window_abstained as f64 / state.window_total as f64;
                let delta = pid_update(state, cfg, measured);
                let step = ControlStep {
                    window_index: state.window_index,
                    measured_abstention: measured,
                    error: measured - cfg.setpoint,
                    delta_alpha: delta,
                    alpha: state.alpha,
                };
                state.window_index += 1;
                state.batches_in_window = 0;
                state.window_abstained = 0;
                state.window_total = 0;
                Ok(Some(step))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn measure_abstention_counts_strictly_above_tau() {
        assert_eq!(measure_abstention(&[0.5; 4], 1.0).unwrap(), 0.0);
        assert_eq!(measure_abstention(&[2.0; 4], 1.0).unwrap(), 1.0);
        assert_eq!(
            measure_abstention(&[0.5, 1.5, 2.5, 0.9], 1.0).unwrap(),
            0.5
        );
        assert_eq!(measure_abstention(&[1.0, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(measure_abstention(&[], 1.0), Err(ControllerError::EmptySigmas));
    }

    #[test]
    fn zero_error_leaves_alpha_unchanged() {
        let cfg = PidConfig::new(0.4);
        let mut state = PidState::with_alpha(1.0);
        pid_update(&mut state, &cfg, 0.4);
        assert_eq!(state.alpha, 1.0);
    }

    #[test]
    fn velocity_formula_hand_case() {
        let cfg = PidConfig {
            kp: 1.0,
            ki: 0.5,
            kd: 0.0,
            ..PidConfig::new(0.3)
        };
        let mut state = PidState::with_alpha(2.0);
        let delta = pid_update(&mut state, &cfg, 0.5);
        assert!((delta - 0.3).abs() < 1e-15);
        assert!((state.alpha - 2.3).abs() < 1e-15);
    }

    #[test]
    fn error_history_shifts() {
        let cfg = PidConfig::new(0.0);
        let mut state = PidState::default();
        pid_update(&mut state, &cfg, 0.1);
        pid_update(&mut state, &cfg, 0.2);
        assert_eq!(state.e_prev, 0.2);
        assert_eq!(state.e_prev2, 0.1);
    }

    #[test]
    fn alpha_stays_clamped_for_arbitrary_errors() {
        let cfg = PidConfig::new(0.5);
        let mut state = PidState::default();
        let measurements = [1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        for &m in measurements.iter().cycle().take(200) {
            pid_update(&mut state, &cfg, m);
            assert!(state.alpha >= cfg.alpha_min && state.alpha <= cfg.alpha_max);
        }
    }

    #[test]
    fn on_setpoint_for_three_windows_freezes_alpha() {
        let cfg = PidConfig::new(0.3);
        let mut state = PidState::with_alpha(1.0);
        pid_update(&mut state, &cfg, 0.55);
        pid_update(&mut state, &cfg, 0.3);
        pid_update(&mut state, &cfg, 0.3);
        pid_update(&mut state, &cfg, 0.3);
        let frozen = state.alpha;
        for _ in 0..10 {
            pid_update(&mut state, &cfg, 0.3);
            assert_eq!(state.alpha, frozen);
        }
    }

    #[test]
    fn constant_controller_is_identity_on_alpha() {
        let mut ctl = constant_alpha_controller(0.1);
        for _ in 0..50 {
            let step = ctl.observe_batch(&[5.0; 32], 0.5).unwrap();
            assert!(step.is_none());
            assert_eq!(ctl.alpha(), 0.1);
        }
    }

    #[test]
    fn window_fires_after_exactly_window_batches() {
        let cfg = PidConfig {
            window_batches: 6,
            ..PidConfig::new(0.5)
        };
        let mut ctl = AlphaController::pid(cfg).unwrap();
        let sigmas = vec![2.0; 32];
        for batch in 0..24 {
            let step = ctl.observe_batch(&sigmas, 1.0).unwrap();
            if (batch + 1) % 6 == 0 {
                let step = step.expect("window boundary");
                assert_eq!(step.measured_abstention, 1.0);
                assert_eq!(step.window_index, batch as u64 / 6);
            } else {
                assert!(step.is_none());
            }
        }
    }

    #[test]
    fn window_counts_exactly_window_samples() {
        let cfg = PidConfig {
            window_batches: 3,
            ..PidConfig::new(0.5)
        };
        let mut ctl = AlphaController::pid(cfg).unwrap();
        // 2 abstained of 6 per batch; over 3 batches: 6/18.
        let sigmas = [2.0, 2.0, 0.1, 0.1, 0.1, 0.1];
        ctl.observe_batch(&sigmas, 1.0).unwrap();
        ctl.observe_batch(&sigmas, 1.0).unwrap();
        let step = ctl.observe_batch(&sigmas, 1.0).unwrap().unwrap();
        assert!((step.measured_abstention - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pid_controller_rejects_bad_setpoint() {
        assert!(AlphaController::pid(PidConfig::new(1.5)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn clamp_invariance(measured in proptest::collection::vec(0.0f64..=1.0, 1..60)) {
            let cfg = PidConfig { kp: 2.0, ki: 1.5, kd: 0.7, ..PidConfig::new(0.35) };
            let mut state = PidState::default();
            for m in measured {
                pid_update(&mut state, &cfg, m);
                proptest::prop_assert!(state.alpha >= cfg.alpha_min);
                proptest::prop_assert!(state.alpha <= cfg.alpha_max);
            }
        }
    }

    #[test]
    fn alpha_zero_degenerates_to_weighted_nll() {
        use crate::loss::{abstention_loss, gaussian_nll, prediction_weight, AbstentionParams};
        use crate::net::PredictionPair;
        let params = AbstentionParams::new(0.0, 1.0).unwrap();
        let preds: Vec<PredictionPair> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&sigma| PredictionPair { mu: 0.3, sigma })
            .collect();
        for p in preds {
            let expected = prediction_weight(p.sigma, 1.0) * gaussian_nll(0.0, p);
            assert_eq!(abstention_loss(0.0, p, params), expected);
        }
    }
}
