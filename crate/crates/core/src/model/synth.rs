//! Autoregressive synthesis from feature frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{self, EmphasisCoeff, Signal, U_MAX};

use super::{mu_of, EmbedMode, ModelParams, SampleInputs, SampleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Sampling temperature; 0 picks the most likely class.
    pub temperature: f64,
    pub seed: u64,
    pub frame_size: usize,
    pub pre_emphasis: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            seed: 0,
            frame_size: 160,
            pre_emphasis: signal::DEFAULT_ALPHA,
        }
    }
}

fn draw(probs: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    if temperature <= 0.0 {
        // First maximum, so ties resolve deterministically.
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        return best;
    }
    // Dividing the logits by T is raising the probabilities to 1/T.
    let w: Vec<f64> = if temperature == 1.0 {
        probs.to_vec()
    } else {
        let lmax = probs.iter().cloned().fold(f64::MIN_POSITIVE, f64::max).ln();
        probs
            .iter()
            .map(|&p| if p > 0.0 { ((p.ln() - lmax) / temperature).exp() } else { 0.0 })
            .collect()
    };
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &v) in w.iter().enumerate() {
        if u < v {
            return i;
        }
        u -= v;
    }
    w.iter().rposition(|&v| v > 0.0).unwrap_or(0)
}

/// Generates `frames × frame_size` samples.
///
/// Each step predicts `p_t` from the generated history, samples a μ-law
/// excitation class, and outputs `s_t = p_t + U⁻¹(e)` clamped to [-1, 1].
/// The result is de-emphasized.
pub fn synthesize(params: &ModelParams, cepstra: &[Vec<f64>], cfg: &SynthConfig) -> Result<Signal> {
    if !(cfg.temperature >= 0.0) || !cfg.temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be >= 0, got {}", cfg.temperature)));
    }
    if cfg.frame_size == 0 {
        return Err(Error::Config("frame size must be positive".into()));
    }
    let dims = *params.dims();
    let m = dims.lpc_order;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SampleState::new(&dims);
    let mut out = Vec::with_capacity(cepstra.len() * cfg.frame_size);
    // Most recent sample last.
    let mut hist = vec![0.0; m];
    let mut e_prev = 0.0;
    for cep in cepstra {
        let frame = params.frame_forward(cep)?;
        let a = frame.a.coeffs();
        for _ in 0..cfg.frame_size {
            let p: f64 = (0..m).map(|j| a[j] * hist[m - 1 - j]).sum();
            let inputs = SampleInputs {
                s_prev: mu_of(hist[m - 1]),
                p: mu_of(p),
                e_prev,
            };
            let probs = params.sample_forward(&mut state, inputs, &frame.f, EmbedMode::Round)?;
            let e_mu = draw(&probs, cfg.temperature, &mut rng) as f64 - U_MAX;
            let s = (p + signal::expand(e_mu)).clamp(-1.0, 1.0);
            hist.rotate_left(1);
            hist[m - 1] = s;
            e_prev = e_mu;
            out.push(s);
        }
    }
    let sig = Signal::from_samples(out)?;
    let (sig, _) = signal::de_emphasis(&sig, EmphasisCoeff::new(cfg.pre_emphasis)?, 0.0);
    Ok(sig)
}
