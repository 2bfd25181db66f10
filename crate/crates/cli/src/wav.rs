//! 16-bit mono 16 kHz WAV input and output.

use std::path::Path;

use e2e_lpcnet::signal::{Signal, SAMPLE_RATE_HZ};

use crate::{write_atomic, CliError};

pub fn read_wav(path: &Path) -> Result<Signal, CliError> {
    let reader = hound::WavReader::open(path).map_err(|e| CliError::file(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(CliError::Input(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s), {} bits {:?}",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(CliError::Input(format!(
            "{}: expected {SAMPLE_RATE_HZ} Hz, got {}",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Signal::new(samples, SAMPLE_RATE_HZ).map_err(|e| CliError::Input(e.to_string()))
}

/// Rounds to 16-bit PCM, saturating at full scale.
pub fn to_pcm(x: f64) -> i16 {
    (x * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(path: &Path, sig: &Signal) -> Result<(), CliError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sig.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    write_atomic(path, |f| {
        let mut w = hound::WavWriter::new(std::io::BufWriter::new(f), spec)
            .map_err(std::io::Error::other)?;
        for &x in &sig.samples {
            w.write_sample(to_pcm(x)).map_err(std::io::Error::other)?;
        }
        w.finalize().map_err(std::io::Error::other)
    })
}
