//! Runs before `acceptance`, whose nonzero exit on a failed criterion stops `cargo test`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use e2e_lpcnet::features::{self, AnalysisConfig};
use e2e_lpcnet::signal::{self, EmphasisCoeff, Signal};
use e2e_lpcnet::training::TrainConfig;
use e2e_lpcnet::model::ModelDims;
use lpcnet_cli::wav::{read_wav, write_wav};
use lpcnet_cli::TrainSummary;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lpcnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpcnet"))
        .args(args)
        .output()
        .expect("spawn lpcnet")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noise_wav(dir: &Path, name: &str, secs: f64, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * 16_000.0) as usize;
    let mut x = vec![0.0; n];
    for t in 2..n {
        x[t] = 1.1 * x[t - 1] - 0.5 * x[t - 2] + rng.gen_range(-0.1..0.1);
    }
    let p = dir.join(name);
    write_wav(&p, &Signal::from_samples(x).unwrap()).unwrap();
    p
}

fn micro_config(dir: &Path) -> PathBuf {
    let cfg = TrainConfig {
        dims: ModelDims::micro(),
        sequence_ms: 50,
        batch_size: 4,
        epochs: 2,
        ..TrainConfig::default()
    };
    let p = dir.join("micro.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn features_frame_count_and_bit_exact_reread() {
    let dir = tempfile::tempdir().unwrap();
    let wav = noise_wav(dir.path(), "a.wav", 1.0, 1);
    let feat = dir.path().join("a.feat");
    let o = lpcnet(&["features", s(&wav), s(&feat)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = AnalysisConfig::default();
    let (_, frames) = features::read_features(fs::File::open(&feat).map(std::io::BufReader::new).unwrap(), &cfg).unwrap();
    assert_eq!(frames.len(), cfg.frame_count(16_000));
    assert_eq!(frames.len(), 99);

    // The file holds the analysis of the pre-emphasized input, stored as f32.
    let sig = read_wav(&wav).unwrap();
    let (emph, _) = signal::pre_emphasis(&sig, EmphasisCoeff::default(), 0.0);
    let want = features::analyze(&emph, &cfg).unwrap();
    for (a, b) in frames.iter().zip(&want) {
        let b32: Vec<f64> = b.cepstrum.iter().map(|&v| v as f32 as f64).collect();
        assert_eq!(a.cepstrum, b32);
    }
    let again = features::read_features(fs::File::open(&feat).map(std::io::BufReader::new).unwrap(), &cfg).unwrap().1;
    assert_eq!(again, frames);
}

#[test]
fn missing_and_malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.feat");
    let o = lpcnet(&["features", "/definitely/not/here.wav", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let garbage = dir.path().join("garbage.wav");
    fs::write(&garbage, b"RIFF but not really").unwrap();
    let o = lpcnet(&["features", s(&garbage), s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let stereo = dir.path().join("stereo.wav");
    write_raw(&stereo, (2, 16_000));
    let o = lpcnet(&["features", s(&stereo), s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mono"));

    let slow = dir.path().join("8k.wav");
    write_raw(&slow, (1, 8_000));
    let o = lpcnet(&["features", s(&slow), s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("16000"));

    let o = lpcnet(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

/// A tiny WAV written without the validating writer.
fn write_raw(path: &Path, (channels, rate): (u16, u32)) {
    let n = 1600u32;
    let data_len = n * 2 * channels as u32;
    let mut b = Vec::new();
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&channels.to_le_bytes());
    b.extend_from_slice(&rate.to_le_bytes());
    b.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
    b.extend_from_slice(&(2 * channels).to_le_bytes());
    b.extend_from_slice(&16u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    b.resize(b.len() + data_len as usize, 0);
    fs::write(path, b).unwrap();
}

#[test]
fn train_synth_lsd_response_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("corpus");
    let o = lpcnet(&["make-corpus", s(&corpus), "--utterances", "2", "--seconds", "0.6", "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(corpus.join("utt_001.wav").exists());

    let cfg = micro_config(d);
    let ckpt = d.join("m.ckpt");
    let log = d.join("train.ndjson");
    let stats = d.join("stats.json");
    let o = lpcnet(&[
        "train", s(&corpus), s(&ckpt), "--config", s(&cfg), "--variant", "LAR",
        "--log", s(&log), "--stats", s(&stats), "--valid-dir", s(&corpus), "--quiet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(ckpt.exists());

    let lines: Vec<serde_json::Value> = fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(!lines.is_empty());
    for l in &lines {
        for key in ["epoch", "batch", "loss", "grad_norm", "clipped"] {
            assert!(l.get(key).is_some(), "{key} missing in {l}");
        }
        for key in ["ice", "l1", "lar"] {
            assert!(l["terms"].get(key).is_some());
        }
    }
    let summary: TrainSummary = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(summary.config.loss.variant.name(), "LAR");
    assert_eq!(summary.epochs.len(), 3);
    assert_eq!(summary.epochs[1].frame_net_digest, summary.epochs[2].frame_net_digest);
    assert_ne!(summary.epochs[0].frame_net_digest, summary.epochs[1].frame_net_digest);

    // Same flags, same bytes.
    let ckpt2 = d.join("m2.ckpt");
    let o = lpcnet(&["train", s(&corpus), s(&ckpt2), "--config", s(&cfg), "--variant", "LAR", "--quiet"]);
    assert!(o.status.success());
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(&ckpt2).unwrap());

    // Synthesis length and determinism at zero temperature.
    let feat = d.join("u.feat");
    assert!(lpcnet(&["features", s(&corpus.join("utt_000.wav")), s(&feat)]).status.success());
    let n_frames = features::read_features(
        std::io::BufReader::new(fs::File::open(&feat).unwrap()),
        &AnalysisConfig::default(),
    )
    .unwrap()
    .1
    .len();
    let (w1, w2) = (d.join("a.wav"), d.join("b.wav"));
    for w in [&w1, &w2] {
        let o = lpcnet(&["synth", s(&feat), s(&ckpt), s(w), "--temperature", "0", "--seed", "7"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&w1).unwrap(), fs::read(&w2).unwrap());
    let out = read_wav(&w1).unwrap();
    assert_eq!(out.len(), n_frames * 160);
    assert!((out.duration_secs() - n_frames as f64 * 0.010).abs() < 1e-12);

    // LSD: ground truth against itself is zero; the model gives a number.
    let o = lpcnet(&["lsd", "--ground-truth", "--eval-dir", s(&corpus)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean LSD 0.00 dB"));
    let o = lpcnet(&["lsd", s(&ckpt), "--eval-dir", s(&corpus), "--json"]);
    assert!(o.status.success());
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["mean_db"].as_f64().unwrap() > 0.0);

    // Response CSV: fft_size/2 + 1 rows per source.
    let csv = d.join("resp.csv");
    let o = lpcnet(&["response", "--checkpoint", s(&ckpt), s(&feat), "10", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("frequency_hz,response_db,source_label"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 257);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",predicted")).count(), 257);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",ground_truth")).count(), 257);
    assert!(rows[256].starts_with("8000,"));
    let o = lpcnet(&["response", "--ground-truth", s(&feat), "10", s(&csv), "--fft-size", "256"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 129);
    let o = lpcnet(&["response", "--ground-truth", s(&feat), "100000", s(&csv)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_training_leaves_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    noise_wav(d, "a.wav", 0.5, 2);
    let bad = d.join("bad.json");
    fs::write(&bad, r#"{"sequence_ms": 155}"#).unwrap();
    let ckpt = d.join("out.ckpt");
    let o = lpcnet(&["train", s(d), s(&ckpt), "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!ckpt.exists());
    fs::write(&bad, "{ not json").unwrap();
    let o = lpcnet(&["train", s(d), s(&ckpt), "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    // Only the inputs remain: no temporary files either.
    let mut names: Vec<String> = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["a.wav", "bad.json"]);
}

#[test]
fn gradcheck_primitives_pass() {
    let o = lpcnet(&["gradcheck", "--points", "5", "--skip-full-model"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 8);
    assert!(!text.contains("FAIL"));
}
