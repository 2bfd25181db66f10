//! Deterministic speech-like test material: syllables of glottal pulses
//! through moving formant resonators, fricative noise bursts and pauses.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Signal, SAMPLE_RATE_HZ};

const FS: f64 = SAMPLE_RATE_HZ as f64;

/// (F1, F2, F3) in Hz.
const VOWELS: [[f64; 3]; 7] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
];
const F4_HZ: f64 = 3500.0;
const BANDWIDTHS_HZ: [f64; 4] = [70.0, 100.0, 130.0, 180.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub utterances: usize,
    pub seconds_per_utterance: f64,
    pub seed: u64,
    /// Peak amplitude after normalization.
    pub peak: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            utterances: 20,
            seconds_per_utterance: 3.0,
            seed: 0,
            peak: 0.7,
        }
    }
}

/// Two-pole resonator with unit gain at its centre frequency.
#[derive(Default, Clone, Copy)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tick(&mut self, x: f64, freq: f64, bw: f64) -> f64 {
        let r = (-PI * bw / FS).exp();
        let theta = 2.0 * PI * freq / FS;
        let (c1, c2) = (2.0 * r * theta.cos(), -r * r);
        let gain = (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt();
        let y = gain * x + c1 * self.y1 + c2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

struct Voice {
    rng: ChaCha8Rng,
    white: Normal<f64>,
    formants: [Resonator; 4],
    frication: Resonator,
    glottal: [f64; 2],
    radiation: f64,
    phase: f64,
}

impl Voice {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            white: Normal::new(0.0, 1.0).expect("unit normal"),
            formants: [Resonator::default(); 4],
            frication: Resonator::default(),
            glottal: [0.0; 2],
            radiation: 0.0,
            phase: 0.0,
        }
    }

    fn noise(&mut self) -> f64 {
        self.white.sample(&mut self.rng)
    }

    /// One voiced sample at pitch `f0` through formants `f`.
    fn voiced(&mut self, f0: f64, f: [f64; 4], amp: f64) -> f64 {
        self.phase += f0 / FS;
        let mut src = 0.0;
        if self.phase >= 1.0 {
            self.phase -= 1.0;
            src = 1.0 + 0.05 * self.noise();
        }
        // Glottal low-pass (two real poles) then lip radiation.
        self.glottal[0] = src + 0.95 * self.glottal[0];
        self.glottal[1] = self.glottal[0] + 0.95 * self.glottal[1];
        let g = self.glottal[1] - self.radiation;
        self.radiation = self.glottal[1];
        let mut y = g + 0.02 * self.noise();
        for (i, r) in self.formants.iter_mut().enumerate() {
            y = r.tick(y, f[i], BANDWIDTHS_HZ[i]);
        }
        amp * y
    }

    fn fricative(&mut self, centre: f64, amp: f64) -> f64 {
        let n = self.noise();
        amp * self.frication.tick(n, centre, 0.35 * centre)
    }
}

fn formants(v: &[f64; 3]) -> [f64; 4] {
    [v[0], v[1], v[2], F4_HZ]
}

fn lerp4(a: [f64; 4], b: [f64; 4], t: f64) -> [f64; 4] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
}

/// Half-cosine fade over the first and last `ramp` samples of `len`.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = i.min(len - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge as f64 / ramp as f64).cos()
    }
}

/// One utterance of `seconds` length.
pub fn synth_utterance(seed: u64, seconds: f64, peak: f64) -> Result<Signal> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::Config(format!("utterance length must be positive, got {seconds}")));
    }
    if !(peak > 0.0 && peak <= 1.0) {
        return Err(Error::Config(format!("peak must be in (0, 1], got {peak}")));
    }
    let n = (seconds * FS).round() as usize;
    let mut v = Voice::new(seed);
    let mut out = Vec::with_capacity(n);
    let base_f0: f64 = v.rng.gen_range(95.0..220.0);
    let mut prev = formants(&VOWELS[v.rng.gen_range(0..VOWELS.len())]);
    // Leading silence.
    let lead = v.rng.gen_range(800..2400);
    out.extend((0..lead).map(|_| 0.0));
    while out.len() < n {
        if v.rng.gen_bool(0.45) {
            let len = (v.rng.gen_range(0.04..0.1) * FS) as usize;
            let centre = v.rng.gen_range(2500.0..6000.0);
            let amp = v.rng.gen_range(0.02..0.06);
            for i in 0..len {
                let e = envelope(i, len, len / 4);
                let s = v.fricative(centre, amp * e);
                out.push(s);
            }
        }
        let len = (v.rng.gen_range(0.12..0.3) * FS) as usize;
        let target = formants(&VOWELS[v.rng.gen_range(0..VOWELS.len())]);
        let amp = v.rng.gen_range(0.4..1.0);
        let glide: f64 = v.rng.gen_range(-0.25..0.2);
        for i in 0..len {
            let t = i as f64 / len as f64;
            // Formant transition over the first 40% of the vowel.
            let f = lerp4(prev, target, (t / 0.4).min(1.0));
            let f0 = base_f0 * (1.0 + glide * t) * (1.0 + 0.01 * (2.0 * PI * 5.0 * i as f64 / FS).sin());
            let s = v.voiced(f0, f, amp * envelope(i, len, len / 5));
            out.push(s);
        }
        prev = target;
        let gap = if v.rng.gen_bool(0.2) {
            v.rng.gen_range(0.15..0.35)
        } else {
            v.rng.gen_range(0.02..0.08)
        };
        let gap = (gap * FS) as usize;
        for _ in 0..gap {
            let s = 1e-4 * v.noise();
            out.push(s);
        }
    }
    out.truncate(n);
    let max = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if max > 0.0 {
        let g = peak / max;
        out.iter_mut().for_each(|x| *x *= g);
    }
    Signal::from_samples(out)
}

/// `cfg.utterances` signals with consecutive seeds derived from `cfg.seed`.
pub fn generate(cfg: &CorpusConfig) -> Result<Vec<Signal>> {
    (0..cfg.utterances)
        .map(|i| synth_utterance(cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64), cfg.seconds_per_utterance, cfg.peak))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{analyze, AnalysisConfig};

    #[test]
    fn deterministic_bounded_and_sized() {
        let a = synth_utterance(3, 1.0, 0.7).unwrap();
        let b = synth_utterance(3, 1.0, 0.7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        let max = a.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!((max - 0.7).abs() < 1e-12);
        assert_ne!(a, synth_utterance(4, 1.0, 0.7).unwrap());
    }

    #[test]
    fn has_silence_and_activity() {
        let s = synth_utterance(5, 3.0, 0.7).unwrap();
        let frames = analyze(&s, &AnalysisConfig::default()).unwrap();
        let active = frames.iter().filter(|f| f.active).count();
        assert!(active > frames.len() / 3, "{active}/{}", frames.len());
        assert!(active < frames.len(), "no inactive frames");
    }

    #[test]
    fn resonator_has_unit_gain_at_centre() {
        let mut r = Resonator::default();
        let (f, n) = (1000.0, 32000);
        let mut peak = 0.0f64;
        for i in 0..n {
            let y = r.tick((2.0 * PI * f * i as f64 / FS).sin(), f, 100.0);
            if i > n / 2 {
                peak = peak.max(y.abs());
            }
        }
        assert!((peak - 1.0).abs() < 0.01, "{peak}");
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(synth_utterance(0, 0.0, 0.5).is_err());
        assert!(synth_utterance(0, 1.0, 1.5).is_err());
    }
}
