//! Band-cepstrum analysis and the ground-truth LPC path
//! (cepstrum → spectrum → autocorrelation → Levinson-Durbin).
//!
//! Band layout (centers of 18 triangular bands, Hz):
//!
//! | band | 0 | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 | 11 | 12 | 13 | 14 | 15 | 16 | 17 |
//! |------|---|---|---|---|---|---|---|---|---|---|----|----|----|----|----|----|----|----|
//! | Hz   | 0 | 200 | 400 | 600 | 800 | 1000 | 1200 | 1400 | 1600 | 2000 | 2400 | 2800 | 3200 | 4000 | 4800 | 5600 | 6800 | 8000 |
//!
//! Neighbouring bands overlap as complementary triangles, so every FFT bin
//! between 0 and 8 kHz contributes to exactly two bands with weights that
//! sum to one. Band energies are stored as mean power density (weighted
//! bin power divided by total weight), so interpolating them back onto the
//! bins gives a power spectrum with the frame's overall scale.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LpcFilter, ReflectionCoeffs};
use crate::signal::{Signal, SAMPLE_RATE_HZ};

/// Band centers in Hz.
pub const BAND_CENTERS_HZ: [f64; 18] = [
    0.0, 200.0, 400.0, 600.0, 800.0, 1000.0, 1200.0, 1400.0, 1600.0, 2000.0, 2400.0, 2800.0,
    3200.0, 4000.0, 4800.0, 5600.0, 6800.0, 8000.0,
];
pub const NB_BANDS: usize = 18;
/// Added to band power densities before the log.
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Feature file format version.
pub const FEATURE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub frame_size: usize,
    pub window_size: usize,
    pub n_bands: usize,
    pub fft_size: usize,
    pub lpc_order: usize,
    pub pre_emphasis: f64,
    /// Frames quieter than the signal median by more than this are inactive.
    pub activity_offset_db: f64,
    /// Frames below this absolute level are always inactive.
    pub activity_floor_db: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frame_size: 160,
            window_size: 320,
            n_bands: NB_BANDS,
            fft_size: 320,
            lpc_order: lp::DEFAULT_ORDER,
            pre_emphasis: crate::signal::DEFAULT_ALPHA,
            activity_offset_db: 10.0,
            activity_floor_db: -70.0,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame_size == 0 || self.window_size < self.frame_size {
            return bad(format!(
                "window_size {} must be at least frame_size {} > 0",
                self.window_size, self.frame_size
            ));
        }
        if self.fft_size < self.window_size {
            return bad(format!(
                "fft_size {} must be at least window_size {}",
                self.fft_size, self.window_size
            ));
        }
        if self.n_bands != NB_BANDS {
            return bad(format!("only the {NB_BANDS}-band layout is supported"));
        }
        if self.lpc_order == 0 || self.lpc_order >= self.frame_size {
            return bad(format!(
                "lpc_order {} must be in 1..frame_size",
                self.lpc_order
            ));
        }
        if self.fft_size % 2 != 0 {
            return bad("fft_size must be even".into());
        }
        Ok(())
    }

    /// Frames produced by [`analyze`] for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.frame_size + 1
        }
    }

    fn band_bins(&self) -> Vec<usize> {
        let hz_per_bin = SAMPLE_RATE_HZ as f64 / self.fft_size as f64;
        BAND_CENTERS_HZ
            .iter()
            .map(|&hz| (hz / hz_per_bin).round() as usize)
            .collect()
    }

    fn window_power(&self) -> f64 {
        hann(self.window_size).iter().map(|w| w * w).sum()
    }
}

/// One frame of conditioning features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub cepstrum: Vec<f64>,
    pub frame_index: usize,
    pub active: bool,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * scale
        })
        .collect()
}

/// Inverse of [`dct`] (orthonormal DCT-III).
pub fn idct(c: &[f64]) -> Vec<f64> {
    let n = c.len() as f64;
    (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
                    scale * v * (PI * k as f64 * (i as f64 + 0.5) / n).cos()
                })
                .sum()
        })
        .collect()
}

/// Reusable analysis state (FFT plan and window).
pub struct Analyzer {
    cfg: AnalysisConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    band_bins: Vec<usize>,
}

impl Analyzer {
    pub fn new(cfg: AnalysisConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self {
            window: hann(cfg.window_size),
            band_bins: cfg.band_bins(),
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.cfg
    }

    /// Triangular band power densities of one window of samples.
    pub fn band_energies(&self, frame: &[f64]) -> Vec<f64> {
        let n = self.cfg.fft_size;
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
        for (i, (x, w)) in frame.iter().zip(&self.window).enumerate() {
            buf[i].re = x * w;
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..=n / 2].iter().map(|c| c.norm_sqr()).collect();
        bands_from_power(&power, &self.band_bins)
    }

    fn frame_at(&self, samples: &[f64], index: usize) -> FeatureFrame {
        let start = index * self.cfg.frame_size;
        let e = self.band_energies(&samples[start..start + self.cfg.window_size]);
        let logs: Vec<f64> = e.iter().map(|x| (x + ENERGY_FLOOR).log10()).collect();
        FeatureFrame {
            cepstrum: dct(&logs),
            frame_index: index,
            active: false,
        }
    }

    /// Per-hop band cepstra with the activity gate applied relative to
    /// this signal's median frame energy.
    pub fn analyze(&self, sig: &Signal) -> Result<Vec<FeatureFrame>> {
        if sig.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Config(format!(
                "analysis is locked to {SAMPLE_RATE_HZ} Hz, got {}",
                sig.sample_rate_hz
            )));
        }
        let count = self.cfg.frame_count(sig.len());
        let mut frames: Vec<FeatureFrame> =
            (0..count).map(|i| self.frame_at(&sig.samples, i)).collect();
        apply_activity_gate(&mut frames, &self.cfg);
        Ok(frames)
    }
}

fn bands_from_power(power: &[f64], band_bins: &[usize]) -> Vec<f64> {
    let nb = band_bins.len();
    let mut sum = vec![0.0; nb];
    let mut weight = vec![0.0; nb];
    for b in 0..nb - 1 {
        let (lo, hi) = (band_bins[b], band_bins[b + 1]);
        let width = (hi - lo) as f64;
        for (j, &p) in power.iter().enumerate().take(hi).skip(lo) {
            let frac = (j - lo) as f64 / width;
            sum[b] += (1.0 - frac) * p;
            weight[b] += 1.0 - frac;
            sum[b + 1] += frac * p;
            weight[b + 1] += frac;
        }
    }
    let last = band_bins[nb - 1].min(power.len() - 1);
    sum[nb - 1] += power[last];
    weight[nb - 1] += 1.0;
    sum.iter().zip(&weight).map(|(s, w)| s / w).collect()
}

/// Interpolates band densities onto bins `0..=fft_size/2`, linearly in
/// frequency between band centers.
fn bins_from_bands(bands: &[f64], band_bins: &[usize], n_bins: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_bins];
    for b in 0..bands.len() - 1 {
        let (lo, hi) = (band_bins[b], band_bins[b + 1]);
        let width = (hi - lo) as f64;
        for (j, o) in out.iter_mut().enumerate().take(hi.min(n_bins)).skip(lo) {
            let frac = (j - lo) as f64 / width;
            *o = (1.0 - frac) * bands[b] + frac * bands[b + 1];
        }
    }
    let last = *band_bins.last().unwrap();
    for o in out.iter_mut().skip(last) {
        *o = *bands.last().unwrap();
    }
    out
}

/// Analyze with a one-off [`Analyzer`].
pub fn analyze(sig: &Signal, cfg: &AnalysisConfig) -> Result<Vec<FeatureFrame>> {
    Analyzer::new(cfg.clone())?.analyze(sig)
}

/// Reconstructed per-bin power spectrum of a frame.
pub fn cepstrum_to_spectrum(frame: &FeatureFrame, cfg: &AnalysisConfig) -> Vec<f64> {
    let bands: Vec<f64> = idct(&frame.cepstrum)
        .iter()
        .map(|l| 10f64.powf(*l))
        .collect();
    bins_from_bands(&bands, &cfg.band_bins(), cfg.fft_size / 2 + 1)
}

/// Autocorrelation lags `r₀..r_M` of the reconstructed spectrum, before
/// conditioning.
pub fn cepstrum_to_autocorr_raw(frame: &FeatureFrame, cfg: &AnalysisConfig) -> Vec<f64> {
    let half = cepstrum_to_spectrum(frame, cfg);
    let n = cfg.fft_size;
    (0..=cfg.lpc_order)
        .map(|m| {
            // Real, even spectrum: fold the negative-frequency half in.
            let mut acc = half[0] + half[n / 2] * if m % 2 == 0 { 1.0 } else { -1.0 };
            for (j, p) in half.iter().enumerate().take(n / 2).skip(1) {
                acc += 2.0 * p * (2.0 * PI * (j * m) as f64 / n as f64).cos();
            }
            acc / n as f64
        })
        .collect()
}

/// Conditioned autocorrelation ready for Levinson-Durbin.
pub fn cepstrum_to_autocorr(frame: &FeatureFrame, cfg: &AnalysisConfig) -> Vec<f64> {
    let mut r = cepstrum_to_autocorr_raw(frame, cfg);
    lp::condition_autocorr(&mut r);
    r
}

/// Ground-truth LP filter of a frame, computed from its cepstrum alone.
pub fn ground_truth_lpc(
    frame: &FeatureFrame,
    cfg: &AnalysisConfig,
) -> Result<(LpcFilter, ReflectionCoeffs)> {
    let sol = lp::levinson_durbin(&cepstrum_to_autocorr(frame, cfg))?;
    Ok((sol.filter, sol.reflection))
}

/// Mean-square level (dB) implied by a frame's cepstrum.
pub fn frame_energy_db(frame: &FeatureFrame, cfg: &AnalysisConfig) -> f64 {
    let r0 = cepstrum_to_autocorr_raw(frame, cfg)[0];
    10.0 * (r0 / cfg.window_power()).log10()
}

/// Marks frames active when their level exceeds both the median minus
/// `activity_offset_db` and the absolute floor.
pub fn apply_activity_gate(frames: &mut [FeatureFrame], cfg: &AnalysisConfig) {
    let levels: Vec<f64> = frames.iter().map(|f| frame_energy_db(f, cfg)).collect();
    let threshold = median(&levels).map_or(f64::INFINITY, |m| {
        (m - cfg.activity_offset_db).max(cfg.activity_floor_db)
    });
    for (f, l) in frames.iter_mut().zip(&levels) {
        f.active = *l > threshold;
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    })
}

/// JSON header line of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub version: u32,
    pub n_bands: usize,
    pub frame_size: usize,
    pub sample_rate: u32,
}

impl FeatureHeader {
    pub fn for_config(cfg: &AnalysisConfig) -> Self {
        Self {
            version: FEATURE_FORMAT_VERSION,
            n_bands: cfg.n_bands,
            frame_size: cfg.frame_size,
            sample_rate: SAMPLE_RATE_HZ,
        }
    }
}

/// Writes the header line followed by little-endian f32 cepstra.
pub fn write_features<W: Write>(
    mut w: W,
    header: &FeatureHeader,
    frames: &[FeatureFrame],
) -> Result<()> {
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for f in frames {
        if f.cepstrum.len() != header.n_bands {
            return Err(Error::LengthMismatch {
                expected: header.n_bands,
                actual: f.cepstrum.len(),
            });
        }
        for c in &f.cepstrum {
            w.write_all(&(*c as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a feature file. Activity flags are recomputed from the cepstra.
pub fn read_features<R: BufRead>(
    mut r: R,
    cfg: &AnalysisConfig,
) -> Result<(FeatureHeader, Vec<FeatureFrame>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: FeatureHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("bad feature header: {e}")))?;
    if header.version != FEATURE_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature format version {}",
            header.version
        )));
    }
    if header.n_bands != cfg.n_bands || header.frame_size != cfg.frame_size {
        return Err(Error::Format(format!(
            "feature file has {} bands / frame {}, configuration expects {} / {}",
            header.n_bands, header.frame_size, cfg.n_bands, cfg.frame_size
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let stride = 4 * header.n_bands;
    if header.n_bands == 0 || bytes.len() % stride != 0 {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a whole number of {}-band frames",
            bytes.len(),
            header.n_bands
        )));
    }
    let mut frames: Vec<FeatureFrame> = bytes
        .chunks_exact(stride)
        .enumerate()
        .map(|(i, chunk)| FeatureFrame {
            cepstrum: chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
            frame_index: i,
            active: false,
        })
        .collect();
    apply_activity_gate(&mut frames, cfg);
    Ok((header, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AnalysisConfig {
        AnalysisConfig::default()
    }

    fn ar_signal(a: &[f64], len: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = vec![0.0; len];
        for t in 0..len {
            let mut v = rng.gen_range(-0.01..0.01);
            for (i, ai) in a.iter().enumerate() {
                if t > i {
                    v += ai * s[t - 1 - i];
                }
            }
            s[t] = v;
        }
        Signal::from_samples(s).unwrap()
    }

    #[test]
    fn dct_roundtrip() {
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.7).sin()).collect();
        let back = idct(&dct(&x));
        for (a, b) in x.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn band_bins_cover_spectrum() {
        let bins = cfg().band_bins();
        assert_eq!(bins[0], 0);
        assert_eq!(*bins.last().unwrap(), 160);
        assert!(bins.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn frame_count_formula() {
        let c = cfg();
        assert_eq!(c.frame_count(16_000), 99);
        assert_eq!(c.frame_count(319), 0);
        assert_eq!(c.frame_count(320), 1);
        let frames = analyze(&Signal::from_samples(vec![0.0; 1000]).unwrap(), &c).unwrap();
        assert_eq!(frames.len(), (1000 - 320) / 160 + 1);
        let none = analyze(&Signal::from_samples(vec![0.0; 100]).unwrap(), &c).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn silence_has_only_c0() {
        let frames = analyze(&Signal::from_samples(vec![0.0; 3200]).unwrap(), &cfg()).unwrap();
        let floor_c0 = (NB_BANDS as f64).sqrt() * ENERGY_FLOOR.log10();
        for f in &frames {
            assert!(!f.active);
            assert_abs_diff_eq!(f.cepstrum[0], floor_c0, epsilon = 1e-9);
            assert!(f.cepstrum[1..].iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn analyze_is_deterministic() {
        let s = ar_signal(&[0.5], 8000, 1);
        assert_eq!(analyze(&s, &cfg()).unwrap(), analyze(&s, &cfg()).unwrap());
    }

    #[test]
    fn tone_energy_lands_in_its_band() {
        let s: Vec<f64> = (0..4800)
            .map(|t| 0.3 * (2.0 * PI * 1000.0 * t as f64 / 16_000.0).sin())
            .collect();
        let frames = analyze(&Signal::from_samples(s).unwrap(), &cfg()).unwrap();
        // 1 kHz is the center of band 5 in the frozen table.
        let expected = BAND_CENTERS_HZ.iter().position(|&f| f == 1000.0).unwrap();
        for f in &frames {
            let logs = idct(&f.cepstrum);
            let argmax = (0..NB_BANDS)
                .max_by(|&a, &b| logs[a].total_cmp(&logs[b]))
                .unwrap();
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn flat_cepstrum_is_white() {
        let f = FeatureFrame {
            cepstrum: vec![0.0; NB_BANDS],
            frame_index: 0,
            active: true,
        };
        let r = cepstrum_to_autocorr_raw(&f, &cfg());
        assert!(r[0] > 0.0);
        for rj in &r[1..] {
            assert!(rj.abs() / r[0] < 1e-3);
        }
    }

    #[test]
    fn ar2_pole_angle_is_recovered() {
        let (rad, th) = (0.9f64, PI / 4.0);
        let a = [2.0 * rad * th.cos(), -rad * rad];
        let s = ar_signal(&a, 16_000, 2);
        let c = cfg();
        let frames = analyze(&s, &c).unwrap();
        let mut sum = vec![0.0; lp::DEFAULT_NFFT / 2 + 1];
        for f in &frames {
            let (filt, _) = ground_truth_lpc(f, &c).unwrap();
            for (acc, v) in sum
                .iter_mut()
                .zip(lp::lpc_log_response(&filt, lp::DEFAULT_NFFT).unwrap())
            {
                *acc += v;
            }
        }
        let peak = (0..sum.len()).max_by(|&x, &y| sum[x].total_cmp(&sum[y])).unwrap();
        let angle = PI * peak as f64 / (sum.len() - 1) as f64;
        // Band smoothing skews the peak toward the louder low-frequency
        // side: even the exact AR(2) spectrum pushed through the band
        // layout peaks 4.7% low, so 5% is the resolution limit here.
        assert!((angle - th).abs() / th < 0.05, "peak at {angle}");
    }

    #[test]
    fn white_noise_gives_near_zero_lpc() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..32_000).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let c = cfg();
        let frames = analyze(&Signal::from_samples(s).unwrap(), &c).unwrap();
        let mut mean = vec![0.0; c.lpc_order];
        for f in &frames {
            let (filt, k) = ground_truth_lpc(f, &c).unwrap();
            assert!(k.is_stable());
            for (m, a) in mean.iter_mut().zip(filt.coeffs()) {
                *m += a / frames.len() as f64;
            }
        }
        let worst = mean.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(worst < 0.1, "max |a_i| = {worst}");
    }

    #[test]
    fn ar_process_filter_is_recovered() {
        let k = ReflectionCoeffs(vec![
            0.7, -0.4, 0.3, -0.2, 0.15, -0.1, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ]);
        let gen = lp::rc_to_lpc(&k).unwrap();
        let s = ar_signal(gen.coeffs(), 32_000, 4);
        let c = cfg();
        let frames = analyze(&s, &c).unwrap();
        let lsd: f64 = frames
            .iter()
            .map(|f| {
                let (filt, _) = ground_truth_lpc(f, &c).unwrap();
                lp::log_spectral_distance(&filt, &gen, lp::DEFAULT_NFFT).unwrap()
            })
            .sum::<f64>()
            / frames.len() as f64;
        assert!(lsd < 1.5, "mean LSD {lsd} dB");
    }

    #[test]
    fn r0_tracks_windowed_power() {
        let s = ar_signal(&[0.9, -0.3], 16_000, 5);
        let c = cfg();
        let an = Analyzer::new(c.clone()).unwrap();
        let frames = an.analyze(&s).unwrap();
        let w = hann(c.window_size);
        for f in &frames {
            let start = f.frame_index * c.frame_size;
            let power: f64 = s.samples[start..start + c.window_size]
                .iter()
                .zip(&w)
                .map(|(x, w)| (x * w).powi(2))
                .sum();
            let r0 = cepstrum_to_autocorr_raw(f, &c)[0];
            assert!(r0 / power < 4.0 && power / r0 < 4.0, "r0 {r0} power {power}");
        }
    }

    #[test]
    fn feature_file_roundtrip() {
        let c = cfg();
        let s = ar_signal(&[0.8], 8000, 6);
        let frames = analyze(&s, &c).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, &FeatureHeader::for_config(&c), &frames).unwrap();
        let (h, back) = read_features(&buf[..], &c).unwrap();
        assert_eq!(h.n_bands, 18);
        assert_eq!(back.len(), frames.len());
        for (a, b) in frames.iter().zip(&back) {
            for (x, y) in a.cepstrum.iter().zip(&b.cepstrum) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
        let mut again = Vec::new();
        write_features(&mut again, &h, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn feature_file_rejects_garbage() {
        let c = cfg();
        assert!(read_features(&b"not json\n"[..], &c).is_err());
        let mut buf = Vec::new();
        write_features(&mut buf, &FeatureHeader::for_config(&c), &[]).unwrap();
        buf.extend_from_slice(&[0u8; 5]);
        assert!(matches!(read_features(&buf[..], &c), Err(Error::Format(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.fft_size = 256;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.lpc_order = 160;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_bands = 20;
        assert!(c.validate().is_err());
    }
}
