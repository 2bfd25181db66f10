//! Linear-prediction algebra: reflection coefficients, direct-form
//! coefficients, log-area ratios, Levinson-Durbin, and spectral
//! comparisons between LP filters.
//!
//! Sign convention: the predictor is `p_t = Σ a_i s_{t−i}`, so the
//! inverse filter is `A(z) = 1 − Σ a_i z^{−i}` and the step-up recursion
//! is `a_j^{(i)} = a_j^{(i−1)} − k_i a_{i−j}^{(i−1)}`, `a_i^{(i)} = k_i`.
//! With this pairing `|k_i| < 1` for all `i` is equivalent to `1/A(z)`
//! being stable, and Levinson-Durbin returns the same `k` that
//! [`rc_to_lpc`] consumes.

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};

/// Prediction order used throughout at 16 kHz.
pub const DEFAULT_ORDER: usize = 16;
/// Bin count used for LPC responses and spectral distances.
pub const DEFAULT_NFFT: usize = 512;
/// Largest |k| accepted by the step-down recursion.
pub const STEP_DOWN_LIMIT: f64 = 0.9999;
/// White-noise correction applied to `r₀` before Levinson-Durbin.
pub const NOISE_FLOOR_CORRECTION: f64 = 1e-4;
/// Gaussian lag-window bandwidth, in cycles per sample.
pub const LAG_WINDOW_BANDWIDTH: f64 = 0.005;

/// Direct-form prediction coefficients `a₁..a_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpcFilter {
    coeffs: Vec<f64>,
}

impl LpcFilter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(domain("LPC order must be at least 1"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(domain("LPC coefficients must be finite"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order.max(1)],
        }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }
}

/// Reflection coefficients `k₁..k_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionCoeffs(pub Vec<f64>);

impl ReflectionCoeffs {
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_stable(&self) -> bool {
        is_stable(self)
    }
}

/// Log-area ratios `g_i = log((1−k_i)/(1+k_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LarVector(pub Vec<f64>);

/// True iff every `|k_i| < 1`.
pub fn is_stable(k: &ReflectionCoeffs) -> bool {
    k.0.iter().all(|ki| ki.abs() < 1.0)
}

/// Step-up (Levinson) recursion from reflection to direct-form
/// coefficients. Stability is not required.
pub fn rc_to_lpc(k: &ReflectionCoeffs) -> Result<LpcFilter> {
    LpcFilter::new(step_up(&k.0))
}

pub(crate) fn step_up(k: &[f64]) -> Vec<f64> {
    let m = k.len();
    let mut a = vec![Dd::ZERO; m];
    for i in 0..m {
        let prev = a[..i].to_vec();
        let ki = Dd::from(k[i]);
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
        a[i] = ki;
    }
    a.into_iter().map(Dd::to_f64).collect()
}

/// Step-down recursion, the inverse of [`rc_to_lpc`].
pub fn lpc_to_rc(filt: &LpcFilter) -> Result<ReflectionCoeffs> {
    let m = filt.order();
    let mut a: Vec<Dd> = filt.coeffs().iter().map(|&x| Dd::from(x)).collect();
    let mut k = vec![0.0; m];
    for i in (0..m).rev() {
        let ki = a[i];
        if ki.hi.abs() >= STEP_DOWN_LIMIT {
            return Err(Error::UnstableFilter {
                index: i,
                magnitude: ki.hi.abs(),
            });
        }
        k[i] = ki.to_f64();
        let denom = Dd::from(1.0) - ki * ki;
        let cur = a[..i].to_vec();
        for j in 0..i {
            a[j] = (cur[j] + ki * cur[i - 1 - j]) / denom;
        }
    }
    Ok(ReflectionCoeffs(k))
}

/// Minimal double-double arithmetic. The step-down recursion divides by
/// `1 − k²` at every order, so plain f64 loses several digits on filters
/// with poles near the unit circle.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: err }
    }

    fn quick_two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        Dd {
            hi: s,
            lo: b - (s - a),
        }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl std::ops::Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        let t = Dd::two_sum(self.lo, o.lo);
        let s = Dd::quick_two_sum(s.hi, s.lo + t.hi);
        Dd::quick_two_sum(s.hi, s.lo + t.lo)
    }
}

impl std::ops::Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl std::ops::Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl std::ops::Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let err = self.hi.mul_add(o.hi, -p);
        let err = err + (self.hi * o.lo + self.lo * o.hi);
        Dd::quick_two_sum(p, err)
    }
}

impl std::ops::Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        Dd::quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

/// Output of [`levinson_durbin`].
#[derive(Debug, Clone, PartialEq)]
pub struct LevinsonSolution {
    pub filter: LpcFilter,
    pub reflection: ReflectionCoeffs,
    /// Prediction error energy after the final order.
    pub residual_energy: f64,
    /// Error energy after each order, starting with `r₀`.
    pub energies: Vec<f64>,
}

/// Solves the Toeplitz normal equations for `r₀..r_M`.
pub fn levinson_durbin(r: &[f64]) -> Result<LevinsonSolution> {
    if r.len() < 2 {
        return Err(domain("need at least r₀ and r₁"));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(domain("autocorrelation must be finite"));
    }
    if !(r[0] > 0.0) {
        return Err(domain(format!("r₀ = {} must be positive", r[0])));
    }
    let m = r.len() - 1;
    let mut a = vec![0.0; m];
    let mut k = vec![0.0; m];
    let mut err = r[0];
    let mut energies = Vec::with_capacity(m + 1);
    energies.push(err);
    for i in 0..m {
        let acc: f64 = r[i + 1] - (0..i).map(|j| a[j] * r[i - j]).sum::<f64>();
        let ki = acc / err;
        if !(ki.abs() < 1.0) {
            return Err(Error::DegenerateAutocorrelation { order: i + 1 });
        }
        let prev = a[..i].to_vec();
        for j in 0..i {
            a[j] = prev[j] - ki * prev[i - 1 - j];
        }
        a[i] = ki;
        k[i] = ki;
        err *= 1.0 - ki * ki;
        energies.push(err);
    }
    Ok(LevinsonSolution {
        filter: LpcFilter { coeffs: a },
        reflection: ReflectionCoeffs(k),
        residual_energy: err,
        energies,
    })
}

/// Gaussian lag window `w_j = exp(−½ (2π·b·j)²)`.
pub fn lag_window(order: usize) -> Vec<f64> {
    (0..=order)
        .map(|j| {
            let x = 2.0 * PI * LAG_WINDOW_BANDWIDTH * j as f64;
            (-0.5 * x * x).exp()
        })
        .collect()
}

/// Applies white-noise correction and the lag window in place.
pub fn condition_autocorr(r: &mut [f64]) {
    if r.is_empty() {
        return;
    }
    let w = lag_window(r.len() - 1);
    r[0] *= 1.0 + NOISE_FLOOR_CORRECTION;
    for (rj, wj) in r.iter_mut().zip(&w).skip(1) {
        *rj *= wj;
    }
}

pub fn rc_to_lar(k: &ReflectionCoeffs) -> Result<LarVector> {
    k.0.iter()
        .enumerate()
        .map(|(i, &ki)| {
            if !(ki.abs() < 1.0) {
                Err(Error::UnstableFilter {
                    index: i,
                    magnitude: ki.abs(),
                })
            } else {
                Ok(((1.0 - ki) / (1.0 + ki)).ln())
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(LarVector)
}

pub fn lar_to_rc(g: &LarVector) -> ReflectionCoeffs {
    ReflectionCoeffs(
        g.0.iter()
            .map(|&gi| {
                // (1 − e^g)/(1 + e^g) = −tanh(g/2), stable for large |g|.
                -(0.5 * gi).tanh()
            })
            .collect(),
    )
}

/// Squared Euclidean distance between LAR vectors.
pub fn lar_distance(k: &ReflectionCoeffs, k_ref: &ReflectionCoeffs) -> Result<f64> {
    if k.order() != k_ref.order() {
        return Err(Error::LengthMismatch {
            expected: k_ref.order(),
            actual: k.order(),
        });
    }
    let g = rc_to_lar(k)?;
    let g_ref = rc_to_lar(k_ref)?;
    Ok(g.0
        .iter()
        .zip(&g_ref.0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Log magnitude of `1/A(e^{jω})` in dB at `n_fft/2 + 1` points on `[0, π]`.
pub fn lpc_log_response(filt: &LpcFilter, n_fft: usize) -> Result<Vec<f64>> {
    if n_fft < 2 * filt.order() || n_fft < 2 {
        return Err(domain(format!(
            "n_fft {n_fft} must be at least twice the order {}",
            filt.order()
        )));
    }
    let bins = n_fft / 2 + 1;
    (0..bins)
        .map(|b| {
            let w = 2.0 * PI * b as f64 / n_fft as f64;
            let (mut re, mut im) = (1.0, 0.0);
            for (i, ai) in filt.coeffs().iter().enumerate() {
                let ph = w * (i + 1) as f64;
                re -= ai * ph.cos();
                im += ai * ph.sin();
            }
            let mag2 = re * re + im * im;
            if mag2 == 0.0 || !mag2.is_finite() {
                Err(Error::PoleOnUnitCircle { bin: b })
            } else {
                Ok(-10.0 * mag2.log10())
            }
        })
        .collect()
}

/// RMS over bins of the dB difference between two LPC responses.
pub fn log_spectral_distance(f1: &LpcFilter, f2: &LpcFilter, n_fft: usize) -> Result<f64> {
    let r1 = lpc_log_response(f1, n_fft)?;
    let r2 = lpc_log_response(f2, n_fft)?;
    let ms = r1
        .iter()
        .zip(&r2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / r1.len() as f64;
    Ok(ms.sqrt())
}

/// Impulse response of the all-pole filter `1/A(z)`.
pub fn impulse_response(filt: &LpcFilter, len: usize) -> Vec<f64> {
    let a = filt.coeffs();
    let mut h = vec![0.0; len];
    for t in 0..len {
        let mut v = if t == 0 { 1.0 } else { 0.0 };
        for (i, ai) in a.iter().enumerate() {
            if t > i {
                v += ai * h[t - 1 - i];
            }
        }
        h[t] = v;
    }
    h
}

/// Exact autocorrelation `r₀..r_lags` of the AR process driven by unit
/// variance white noise through `1/A(z)`, obtained by inverting the
/// step-down recursion.
pub fn ar_autocorrelation(k: &ReflectionCoeffs, lags: usize) -> Result<Vec<f64>> {
    if !is_stable(k) {
        return Err(domain("AR autocorrelation requires a stable filter"));
    }
    let m = k.order();
    // r_i for i ≤ M follows from the order-i predictors: r_i = Σ a_j^{(i−1)} r_{i−j} + k_i E_{i−1}.
    let mut r = vec![0.0; lags.max(m) + 1];
    let mut energy = 1.0;
    r[0] = 1.0;
    let mut a: Vec<f64> = Vec::new();
    for i in 0..m {
        let s: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        r[i + 1] = s + k.0[i] * energy;
        a = step_up(&k.0[..=i]);
        energy *= 1.0 - k.0[i] * k.0[i];
    }
    for i in m + 1..r.len() {
        r[i] = (0..m).map(|j| a[j] * r[i - 1 - j]).sum();
    }
    // Scale so the driving noise has unit variance.
    let scale = 1.0 / energy;
    r.truncate(lags + 1);
    Ok(r.into_iter().map(|x| x * scale).collect())
}
