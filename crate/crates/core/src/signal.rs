//! Deterministic signal-domain primitives: μ-law companding, emphasis
//! filtering, and LP prediction / residual / synthesis filtering.
//!
//! μ-law values use the signed convention: a real number in [-128, 128]
//! with `U(0) = 0`. Quantized values live in the signed byte range
//! [-128, 127].

use crate::error::{domain, Error, Result};
use crate::lp::LpcFilter;

/// μ-law compression constant.
pub const MU: f64 = 255.0;
/// Magnitude of the signed μ-law range.
pub const U_MAX: f64 = 128.0;
/// Default pre-emphasis coefficient.
pub const DEFAULT_ALPHA: f64 = 0.85;
/// Sample rate every component of the vocoder is locked to.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// A mono signal with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(domain("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(domain(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Wraps samples at the default 16 kHz rate.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE_HZ)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Real-valued (unquantized) μ-law value in [-128, 128].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MuLawValue(f64);

impl MuLawValue {
    pub fn new(value: f64) -> Result<Self> {
        if !(value.abs() <= U_MAX) {
            return Err(domain(format!("μ-law value {value} outside [-128, 128]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Pre-emphasis / de-emphasis coefficient in [0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmphasisCoeff(f64);

impl EmphasisCoeff {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(domain(format!("emphasis coefficient {alpha} outside [0, 1)")));
        }
        Ok(Self(alpha))
    }

    pub fn alpha(self) -> f64 {
        self.0
    }
}

impl Default for EmphasisCoeff {
    fn default() -> Self {
        Self(DEFAULT_ALPHA)
    }
}

#[inline]
fn log1p_mu() -> f64 {
    MU.ln_1p()
}

/// Unchecked μ-law compression of `x` in [-1, 1].
#[inline]
pub fn compand(x: f64) -> f64 {
    let mag = U_MAX * (MU * x.abs()).ln_1p() / log1p_mu();
    if x < 0.0 {
        -mag
    } else {
        mag
    }
}

/// Unchecked μ-law expansion of `u` in [-128, 128].
#[inline]
pub fn expand(u: f64) -> f64 {
    let mag = ((u.abs() / U_MAX) * log1p_mu()).exp_m1() / MU;
    if u < 0.0 {
        -mag
    } else {
        mag
    }
}

/// dU/dx. Continuous at zero, where it equals `U_MAX·μ / log(1+μ)`.
#[inline]
pub fn compand_derivative(x: f64) -> f64 {
    U_MAX * MU / (log1p_mu() * (1.0 + MU * x.abs()))
}

/// d U⁻¹/du, the linear step size per unit of μ-law value.
#[inline]
pub fn expand_derivative(u: f64) -> f64 {
    log1p_mu() / (MU * U_MAX) * ((u.abs() / U_MAX) * log1p_mu()).exp()
}

/// Real-valued μ-law compression. Errors when `|x| > 1`.
pub fn mu_compand(x: f64) -> Result<MuLawValue> {
    if !(x.abs() <= 1.0) {
        return Err(domain(format!("linear sample {x} outside [-1, 1]")));
    }
    Ok(MuLawValue(compand(x)))
}

/// Inverse of [`mu_compand`].
pub fn mu_expand(u: MuLawValue) -> f64 {
    expand(u.0)
}

/// Round half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Nearest signed byte, ties away from zero, with 128 clamped to 127.
pub fn mu_quantize(u: MuLawValue) -> i32 {
    quantize(u.0)
}

#[inline]
pub(crate) fn quantize(u: f64) -> i32 {
    (round_half_away(u) as i32).clamp(-128, 127)
}

/// `y_t = x_t − α·x_{t−1}`. `state` is the previous input sample; the
/// returned state continues the stream.
pub fn pre_emphasis(sig: &Signal, c: EmphasisCoeff, state: f64) -> (Signal, f64) {
    let mut prev = state;
    let samples = sig
        .samples
        .iter()
        .map(|&x| {
            let y = x - c.0 * prev;
            prev = x;
            y
        })
        .collect();
    (
        Signal {
            samples,
            sample_rate_hz: sig.sample_rate_hz,
        },
        prev,
    )
}

/// `y_t = x_t + α·y_{t−1}`. `state` is the previous output sample.
pub fn de_emphasis(sig: &Signal, c: EmphasisCoeff, state: f64) -> (Signal, f64) {
    let mut prev = state;
    let samples = sig
        .samples
        .iter()
        .map(|&x| {
            prev = x + c.0 * prev;
            prev
        })
        .collect();
    (
        Signal {
            samples,
            sample_rate_hz: sig.sample_rate_hz,
        },
        prev,
    )
}

/// `p_t = Σ a_i s_{t−i}`. `history` is ordered oldest first, so
/// `history[M-1]` is `s_{t−1}`.
pub fn lp_predict(history: &[f64], filt: &LpcFilter) -> Result<f64> {
    let m = filt.order();
    if history.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            actual: history.len(),
        });
    }
    Ok(predict_unchecked(history, filt.coeffs()))
}

#[inline]
pub(crate) fn predict_unchecked(history: &[f64], a: &[f64]) -> f64 {
    let m = a.len();
    a.iter()
        .enumerate()
        .map(|(i, ai)| ai * history[m - 1 - i])
        .sum()
}

fn check_framing(len: usize, n_filters: usize, frame_size: usize) -> Result<()> {
    if frame_size == 0 {
        return Err(domain("frame size must be positive"));
    }
    if len % frame_size != 0 {
        return Err(domain(format!(
            "signal length {len} is not a multiple of frame size {frame_size}"
        )));
    }
    if len / frame_size != n_filters {
        return Err(Error::LengthMismatch {
            expected: len / frame_size,
            actual: n_filters,
        });
    }
    Ok(())
}

/// Excitation `e_t = s_t − p_t`, one filter per frame, zero history
/// before the first sample.
pub fn lp_residual(sig: &Signal, filters: &[LpcFilter], frame_size: usize) -> Result<Signal> {
    check_framing(sig.len(), filters.len(), frame_size)?;
    let s = &sig.samples;
    let mut out = Vec::with_capacity(s.len());
    for (t, &st) in s.iter().enumerate() {
        let a = filters[t / frame_size].coeffs();
        let p: f64 = a
            .iter()
            .enumerate()
            .filter(|(i, _)| t > *i)
            .map(|(i, ai)| ai * s[t - 1 - i])
            .sum();
        out.push(st - p);
    }
    Ok(Signal {
        samples: out,
        sample_rate_hz: sig.sample_rate_hz,
    })
}

/// All-pole synthesis `s_t = e_t + p_t`; inverse of [`lp_residual`].
pub fn lp_synthesize(
    excitation: &Signal,
    filters: &[LpcFilter],
    frame_size: usize,
) -> Result<Signal> {
    check_framing(excitation.len(), filters.len(), frame_size)?;
    let mut s: Vec<f64> = Vec::with_capacity(excitation.len());
    for (t, &et) in excitation.samples.iter().enumerate() {
        let a = filters[t / frame_size].coeffs();
        let p: f64 = a
            .iter()
            .enumerate()
            .filter(|(i, _)| t > *i)
            .map(|(i, ai)| ai * s[t - 1 - i])
            .sum();
        s.push(et + p);
    }
    Ok(Signal {
        samples: s,
        sample_rate_hz: excitation.sample_rate_hz,
    })
}
