//! Langmuir 1:1 binding kinetics for affinity nano-sensors.
//!
//! A sensor with receptor capacity `R_max` binds analyte at concentration
//! `[A]` with association rate `k_a` and releases it with dissociation rate
//! `k_d`. The association phase follows
//!
//! ```text
//! R_a(t) = k_a [A] R_max / (k_a [A] + k_d) * (1 - exp(-(k_a [A] + k_d) t))
//! ```
//!
//! and the dissociation phase decays as `R_d(t) = R_d0 exp(-k_d t)`. The
//! response factor (RF) is the settled response relative to `R_max`; at
//! equilibrium it reduces to `[A] / ([A] + k_D)` with `k_D = k_d / k_a`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Step cap for the unit-time iteration of the response-factor loop.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

/// Default RF margin used to bound the active region of the fitted curve.
pub const ACTIVE_REGION_DELTA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("invalid sensor parameter {name}: {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("response did not settle within {max_steps} steps at [A] = {conc}")]
    IterationCap { conc: f64, max_steps: u64 },
    #[error("response factor {0} outside [0, 1]")]
    RfOutOfRange(f64),
    #[error("need at least 3 samples to fit, got {0}")]
    InsufficientSamples(usize),
    #[error("all sample concentrations are equal")]
    DegenerateSamples,
    #[error("sample {index} is not finite or has a negative concentration")]
    InvalidSample { index: usize },
    #[error("RF model fit did not converge after {0} iterations")]
    NonConvergence(usize),
}

/// Kinetic constants and receptor capacity of one affinity nano-sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    /// Association rate, per molar per second.
    pub k_a: f64,
    /// Dissociation rate, per second.
    pub k_d: f64,
    /// Receptor capacity in response units.
    pub r_max: f64,
    /// Convergence threshold on the per-step response change, in RU.
    pub epsilon_r: f64,
}

impl SensorParams {
    pub fn new(k_a: f64, k_d: f64, r_max: f64, epsilon_r: f64) -> Result<Self, KineticsError> {
        let params = Self {
            k_a,
            k_d,
            r_max,
            epsilon_r,
        };
        params.validate()?;
        Ok(params)
    }

    /// Rates as tabulated: `k_a = 1e-2`, `k_d = 1e-3`, giving `k_D = 0.1 M`.
    pub fn tabulated_rates() -> Self {
        Self {
            k_a: 1e-2,
            k_d: 1e-3,
            r_max: 100.0,
            epsilon_r: 1e-5,
        }
    }

    /// Parameterization with half saturation at `[A] = 10 M`
    /// (`k_a = 1e-4`, `k_d = 1e-3`). This is what the experiment presets use.
    pub fn half_saturation_at_10() -> Self {
        Self::with_affinity(10.0)
    }

    /// Sensor with `k_d = 1e-3` and `k_a` chosen so that `k_d / k_a = k_D`.
    pub fn with_affinity(k_dissociation: f64) -> Self {
        let k_d = 1e-3;
        Self {
            k_a: k_d / k_dissociation,
            k_d,
            r_max: 100.0,
            epsilon_r: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<(), KineticsError> {
        let checks = [
            ("k_a", self.k_a),
            ("k_d", self.k_d),
            ("r_max", self.r_max),
            ("epsilon_r", self.epsilon_r),
        ];
        for (name, value) in checks {
            if !(value.is_finite() && value > 0.0) {
                return Err(KineticsError::InvalidParam { name, value });
            }
        }
        let kd = self.affinity_constant();
        if !(kd.is_finite() && kd > 0.0) {
            return Err(KineticsError::InvalidParam {
                name: "k_D",
                value: kd,
            });
        }
        Ok(())
    }

    /// Affinity constant `k_D = k_d / k_a` in molar.
    pub fn affinity_constant(&self) -> f64 {
        self.k_d / self.k_a
    }

    fn observed_rate(&self, conc: f64) -> f64 {
        self.k_a * conc + self.k_d
    }

    /// Plateau of the association phase, `R_max [A] / ([A] + k_D)`.
    pub fn plateau(&self, conc: f64) -> f64 {
        self.k_a * conc * self.r_max / self.observed_rate(conc)
    }
}

/// Association-phase response at time `t` for concentration `conc`.
pub fn association_response(params: &SensorParams, conc: f64, t: f64) -> f64 {
    let rate = params.observed_rate(conc);
    // -expm1 keeps small-t values accurate.
    params.plateau(conc) * -(-rate * t).exp_m1()
}

/// Dissociation-phase response `t` seconds after the analyte is removed.
pub fn disassociation_response(r_d0: f64, k_d: f64, t: f64) -> f64 {
    r_d0 * (-k_d * t).exp()
}

/// Equilibrium response factor `[A] / ([A] + k_D)`.
pub fn equilibrium_rf(conc: f64, k_dissociation: f64) -> f64 {
    if conc <= 0.0 {
        return 0.0;
    }
    conc / (conc + k_dissociation)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Association,
    Disassociation,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Association => f.write_str("association"),
            Phase::Disassociation => f.write_str("disassociation"),
        }
    }
}

/// Sampled response of one sensor in one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub phase: Phase,
}

impl ResponseTrace {
    /// Association phase sampled every `dt` seconds over `[0, duration]`.
    pub fn association(params: &SensorParams, conc: f64, duration: f64, dt: f64) -> Self {
        let times = sample_times(duration, dt);
        let values = times
            .iter()
            .map(|&t| association_response(params, conc, t))
            .collect();
        Self {
            times,
            values,
            phase: Phase::Association,
        }
    }

    /// Dissociation phase starting from `r_d0`; times are offset by `t0` so
    /// the trace can be appended to an association trace.
    pub fn disassociation(params: &SensorParams, r_d0: f64, t0: f64, duration: f64, dt: f64) -> Self {
        let offsets = sample_times(duration, dt);
        let values = offsets
            .iter()
            .map(|&t| disassociation_response(r_d0, params.k_d, t))
            .collect();
        Self {
            times: offsets.iter().map(|t| t + t0).collect(),
            values,
            phase: Phase::Disassociation,
        }
    }

    pub fn write_csv<W: Write>(traces: &[ResponseTrace], mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_s,response_ru,phase")?;
        for trace in traces {
            for (t, v) in trace.times.iter().zip(&trace.values) {
                writeln!(out, "{t},{v},{}", trace.phase)?;
            }
        }
        Ok(())
    }
}

fn sample_times(duration: f64, dt: f64) -> Vec<f64> {
    let n = (duration / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

/// Response factor by unit-time iteration.
///
/// The association response is stepped one second at a time until the
/// change between successive steps drops below `epsilon_r`, then the
/// dissociation response is stepped the same way from the reached level.
/// The result is the larger of the two settled responses over `R_max`.
pub fn response_factor(params: &SensorParams, conc: f64) -> Result<f64, KineticsError> {
    response_factor_capped(params, conc, DEFAULT_MAX_STEPS)
}

pub fn response_factor_capped(
    params: &SensorParams,
    conc: f64,
    max_steps: u64,
) -> Result<f64, KineticsError> {
    let cap = KineticsError::IterationCap { conc, max_steps };

    let mut prev = association_response(params, conc, 0.0);
    let mut t = 0u64;
    let r_a = loop {
        t += 1;
        if t > max_steps {
            return Err(cap);
        }
        let r = association_response(params, conc, t as f64);
        let change = (r - prev).abs();
        prev = r;
        if change < params.epsilon_r {
            break r;
        }
    };

    let r_d0 = r_a;
    let mut prev = r_d0;
    let mut t = 0u64;
    let r_d = loop {
        t += 1;
        if t > max_steps {
            return Err(cap);
        }
        let r = disassociation_response(r_d0, params.k_d, t as f64);
        let change = (r - prev).abs();
        prev = r;
        if change < params.epsilon_r {
            break r;
        }
    };

    Ok(r_a.max(r_d) / params.r_max)
}

/// Same value as [`response_factor`] with the stopping step solved in closed
/// form instead of iterated.
///
/// The per-step change of the association response is
/// `P exp(-r t) (exp(r) - 1)`, strictly decreasing in `t`, so the first step
/// with change below `epsilon_r` can be computed directly. The dissociation
/// phase never exceeds its starting level, so it does not affect the max.
pub fn settled_response_factor(params: &SensorParams, conc: f64) -> Result<f64, KineticsError> {
    settled_response_factor_capped(params, conc, DEFAULT_MAX_STEPS)
}

pub fn settled_response_factor_capped(
    params: &SensorParams,
    conc: f64,
    max_steps: u64,
) -> Result<f64, KineticsError> {
    let step_change = |t: u64| {
        association_response(params, conc, t as f64)
            - association_response(params, conc, (t - 1) as f64)
    };
    let plateau = params.plateau(conc);
    let rate = params.observed_rate(conc);
    let scale = plateau * rate.exp_m1();

    let mut t = if scale <= params.epsilon_r {
        1
    } else {
        let x = (scale / params.epsilon_r).ln() / rate;
        (x.floor() as u64).saturating_add(1).max(1)
    };
    // Correct for rounding in the logarithm: t is the first step whose
    // change falls below the threshold.
    while t > 1 && step_change(t - 1).abs() < params.epsilon_r {
        t -= 1;
    }
    while step_change(t).abs() >= params.epsilon_r {
        t += 1;
    }

    // The dissociation loop runs for about ln(R k_d / eps) / k_d steps.
    let r_a = association_response(params, conc, t as f64);
    let decay_steps = if r_a * params.k_d > params.epsilon_r {
        ((r_a * params.k_d / params.epsilon_r).ln() / params.k_d).ceil() as u64
    } else {
        1
    };
    if t > max_steps || decay_steps > max_steps {
        return Err(KineticsError::IterationCap { conc, max_steps });
    }
    Ok(r_a / params.r_max)
}

/// One of the five response classes, A (lowest RF) through E (highest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResponseClass {
    A,
    B,
    C,
    D,
    E,
}

impl ResponseClass {
    pub const ALL: [ResponseClass; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];

    /// Zero-based row index.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Integer code 1..=5 used for scoring and token amounts.
    pub fn code(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> char {
        (b'A' + self as u8) as char
    }

    /// Half-open RF interval `[lo, hi)`; E is closed at 1.
    pub fn rf_range(self) -> (f64, f64) {
        let lo = self.index() as f64 * 0.2;
        (lo, lo + 0.2)
    }
}

impl fmt::Display for ResponseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Maps an RF in `[0, 1]` to its class. Boundaries belong to the upper class.
pub fn classify(rf: f64) -> Result<ResponseClass, KineticsError> {
    if !(0.0..=1.0).contains(&rf) {
        return Err(KineticsError::RfOutOfRange(rf));
    }
    // Compare in percent so 0.6 lands in D despite 3 * 0.2 > 0.6 in binary.
    let pct = rf * 100.0;
    Ok(if pct < 20.0 {
        ResponseClass::A
    } else if pct < 40.0 {
        ResponseClass::B
    } else if pct < 60.0 {
        ResponseClass::C
    } else if pct < 80.0 {
        ResponseClass::D
    } else {
        ResponseClass::E
    })
}

/// Concentration at which the equilibrium RF equals `rf`.
pub fn concentration_for_rf(rf: f64, k_dissociation: f64) -> f64 {
    k_dissociation * rf / (1.0 - rf)
}

/// Least-squares fit of the equilibrium RF curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfModelFit {
    pub k_d_hat: f64,
    pub residual_sse: f64,
    pub active_region: (f64, f64),
    pub iterations: usize,
}

/// Concentrations where the fitted RF lies within `[delta, 1 - delta]`.
pub fn active_region(k_dissociation: f64, delta: f64) -> (f64, f64) {
    (
        concentration_for_rf(delta, k_dissociation),
        concentration_for_rf(1.0 - delta, k_dissociation),
    )
}

fn rf_sse(samples: &[(f64, f64)], k: f64) -> f64 {
    samples
        .iter()
        .map(|&(a, y)| {
            let r = y - equilibrium_rf(a, k);
            r * r
        })
        .sum()
}

/// Fits `k_D` in `RF = [A] / ([A] + k_D)` by damped Gauss-Newton.
pub fn fit_rf_model(samples: &[(f64, f64)]) -> Result<RfModelFit, KineticsError> {
    const MAX_ITER: usize = 500;

    if samples.len() < 3 {
        return Err(KineticsError::InsufficientSamples(samples.len()));
    }
    for (index, &(a, y)) in samples.iter().enumerate() {
        if !(a.is_finite() && y.is_finite()) || a < 0.0 {
            return Err(KineticsError::InvalidSample { index });
        }
    }
    let first = samples[0].0;
    if samples.iter().all(|&(a, _)| a == first) {
        return Err(KineticsError::DegenerateSamples);
    }

    let mut k = samples
        .iter()
        .filter(|&&(a, _)| a > 0.0)
        .min_by(|x, y| (x.1 - 0.5).abs().total_cmp(&(y.1 - 0.5).abs()))
        .map(|&(a, _)| a)
        .ok_or(KineticsError::DegenerateSamples)?;
    let mut sse = rf_sse(samples, k);
    let mut lambda = 1e-3;

    for iteration in 1..=MAX_ITER {
        let (mut jtr, mut jtj) = (0.0, 0.0);
        for &(a, y) in samples {
            let denom = a + k;
            let jac = -a / (denom * denom);
            let r = y - equilibrium_rf(a, k);
            jtr += jac * r;
            jtj += jac * jac;
        }
        if jtj == 0.0 {
            return Err(KineticsError::DegenerateSamples);
        }

        loop {
            let step = jtr / (jtj * (1.0 + lambda));
            let candidate = k + step;
            if candidate > 0.0 && candidate.is_finite() {
                let candidate_sse = rf_sse(samples, candidate);
                if candidate_sse <= sse {
                    let done = (step / k).abs() < 1e-12 || sse - candidate_sse <= 1e-30;
                    k = candidate;
                    sse = candidate_sse;
                    lambda = (lambda * 0.1).max(1e-12);
                    if done {
                        return Ok(RfModelFit {
                            k_d_hat: k,
                            residual_sse: sse,
                            active_region: active_region(k, ACTIVE_REGION_DELTA),
                            iterations: iteration,
                        });
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                // No downhill step left: k is at a stationary point.
                return Ok(RfModelFit {
                    k_d_hat: k,
                    residual_sse: sse,
                    active_region: active_region(k, ACTIVE_REGION_DELTA),
                    iterations: iteration,
                });
            }
        }
    }
    Err(KineticsError::NonConvergence(MAX_ITER))
}
