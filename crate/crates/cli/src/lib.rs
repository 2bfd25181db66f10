//! Command implementations behind the `lpcnet` binary.

pub mod wav;

use std::fs::{self, File};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use e2e_lpcnet::corpus::{self, CorpusConfig};
use e2e_lpcnet::features::{self, AnalysisConfig, FeatureHeader};
use e2e_lpcnet::losses::LossVariant;
use e2e_lpcnet::lp::{self, LpcFilter};
use e2e_lpcnet::model::{self, ModelParams, ParamId, SynthConfig};
use e2e_lpcnet::signal::{self, EmphasisCoeff, SAMPLE_RATE_HZ};
use e2e_lpcnet::training::{self, BatchRecord, EpochStats, EvalSets, TrainConfig, Trainer, Utterance};
use e2e_lpcnet::verify::{self, SuiteConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] e2e_lpcnet::Error),

    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    pub fn file(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// 2 for usage, file and input problems, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::File { .. } | CliError::Input(_) => 2,
            CliError::Core(e2e_lpcnet::Error::Config(_)) => 2,
            CliError::Core(_) | CliError::GradCheck(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic<F>(path: &Path, write: F) -> CliResult<()>
where
    F: FnOnce(&mut File) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::file(path, e))?;
    write(tmp.as_file_mut()).map_err(|e| CliError::file(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::file(path, e))?;
    tmp.persist(path).map_err(|e| CliError::file(path, e.error))?;
    Ok(())
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::file(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "lpcnet", version, about = "End-to-end LPCNet: features, training, synthesis and metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-emphasize a WAV file and write its cepstral features.
    Features(FeaturesArgs),
    /// Write a directory of synthetic speech-like WAV files.
    MakeCorpus(MakeCorpusArgs),
    /// Train a model on a directory of WAV files.
    Train(TrainArgs),
    /// Synthesize a WAV file from features and a checkpoint.
    Synth(SynthArgs),
    /// Mean log-spectral distance to ground truth over active frames.
    Lsd(LsdArgs),
    /// Export LPC frequency responses of one frame as CSV.
    Response(ResponseArgs),
    /// Run the gradient-verification suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = signal::DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct MakeCorpusArgs {
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub utterances: usize,
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    pub corpus_dir: PathBuf,
    pub out_checkpoint: PathBuf,
    /// JSON file with `TrainConfig` fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<LossVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gru_a: Option<usize>,
    #[arg(long)]
    pub no_freeze: bool,
    /// Held-out WAV directory scored after every epoch.
    #[arg(long)]
    pub valid_dir: Option<PathBuf>,
    /// Newline-delimited JSON, one record per batch.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// JSON summary with per-epoch statistics.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub features: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LsdArgs {
    /// Checkpoint whose frame-rate network predicts the filters.
    #[arg(required_unless_present = "ground_truth")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub eval_dir: PathBuf,
    /// Score the ground truth against itself.
    #[arg(long, conflicts_with = "checkpoint")]
    pub ground_truth: bool,
    #[arg(long, default_value_t = lp::DEFAULT_NFFT)]
    pub fft_size: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ResponseArgs {
    #[arg(long, required_unless_present = "ground_truth")]
    pub checkpoint: Option<PathBuf>,
    /// Export only the ground-truth filter.
    #[arg(long, conflicts_with = "checkpoint")]
    pub ground_truth: bool,
    pub features: PathBuf,
    pub frame: usize,
    pub output: PathBuf,
    #[arg(long, default_value_t = lp::DEFAULT_NFFT)]
    pub fft_size: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub skip_full_model: bool,
}

pub fn run(cmd: &Command, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Features(a) => cmd_features(a, out),
        Command::MakeCorpus(a) => cmd_make_corpus(a, out),
        Command::Train(a) => cmd_train(a, out).map(|_| ()),
        Command::Synth(a) => cmd_synth(a, out),
        Command::Lsd(a) => cmd_lsd(a, out).map(|_| ()),
        Command::Response(a) => cmd_response(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

fn say(out: &mut dyn Write, msg: std::fmt::Arguments<'_>) {
    // Progress output is best effort.
    let _ = writeln!(out, "{msg}");
}

pub fn cmd_features(a: &FeaturesArgs, out: &mut dyn Write) -> CliResult<()> {
    let sig = wav::read_wav(&a.input)?;
    let cfg = AnalysisConfig {
        pre_emphasis: a.alpha,
        ..AnalysisConfig::default()
    };
    let coeff = EmphasisCoeff::new(a.alpha).map_err(|e| CliError::Input(e.to_string()))?;
    let (emph, _) = signal::pre_emphasis(&sig, coeff, 0.0);
    let frames = features::analyze(&emph, &cfg)?;
    let header = FeatureHeader::for_config(&cfg);
    write_atomic(&a.output, |f| {
        features::write_features(BufWriter::new(f), &header, &frames).map_err(io::Error::other)
    })?;
    say(out, format_args!("{} frames -> {}", frames.len(), a.output.display()));
    Ok(())
}

pub fn cmd_make_corpus(a: &MakeCorpusArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = CorpusConfig {
        utterances: a.utterances,
        seconds_per_utterance: a.seconds,
        seed: a.seed,
        ..CorpusConfig::default()
    };
    let sigs = corpus::generate(&cfg).map_err(|e| CliError::Input(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::file(&a.out_dir, e))?;
    for (i, s) in sigs.iter().enumerate() {
        wav::write_wav(&a.out_dir.join(format!("utt_{i:03}.wav")), s)?;
    }
    say(out, format_args!("{} utterances -> {}", sigs.len(), a.out_dir.display()));
    Ok(())
}

/// WAV files of a directory in name order.
pub fn wav_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::file(dir, "no .wav files"));
    }
    Ok(files)
}

pub fn load_utterances(dir: &Path, cfg: &AnalysisConfig) -> CliResult<Vec<Utterance>> {
    wav_files(dir)?
        .iter()
        .map(|p| Ok(training::prepare_utterance(&wav::read_wav(p)?, cfg)?))
        .collect()
}

pub fn read_checkpoint(path: &Path) -> CliResult<ModelParams> {
    model::read_checkpoint(open(path)?).map_err(|e| CliError::file(path, e))
}

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> CliResult<()> {
    write_atomic(path, |f| {
        model::write_checkpoint(BufWriter::new(f), params).map_err(io::Error::other)
    })
}

/// Bit-level digest of the frame-rate network tensors.
pub fn frame_net_digest(params: &ModelParams) -> String {
    let mut h = DefaultHasher::new();
    for id in ParamId::ALL.into_iter().filter(|p| p.is_frame_net()) {
        for v in params.get(id).data() {
            v.to_bits().hash(&mut h);
        }
    }
    format!("{:016x}", h.finish())
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct EpochRecord {
    #[serde(flatten)]
    pub stats: EpochStats,
    pub frame_net_digest: String,
}

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub train_utterances: usize,
    pub train_seconds: f64,
    pub sequences: usize,
    pub skipped_utterances: usize,
    /// LSD of the flat (k = 0) filter against ground truth.
    pub baseline_lsd_db: f64,
    pub active_frames: usize,
    pub epochs: Vec<EpochRecord>,
}

pub fn resolve_train_config(a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => serde_json::from_reader(open(p)?).map_err(|e| CliError::file(p, e))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.variant {
        cfg.loss.variant = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.gru_a {
        cfg.dims.gru_a = v;
    }
    if a.no_freeze {
        cfg.freeze_final_epoch = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult<TrainSummary> {
    let cfg = resolve_train_config(a)?;
    let utts = load_utterances(&a.corpus_dir, &cfg.analysis)?;
    let valid = match &a.valid_dir {
        Some(d) => Some(training::make_sequences(&load_utterances(d, &cfg.analysis)?, &cfg)?),
        None => None,
    };
    let data = training::make_sequences(&utts, &cfg)?;
    if data.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no utterance is longer than one {} ms sequence",
            a.corpus_dir.display(),
            cfg.sequence_ms
        )));
    }
    let baseline = training::lsd_over_active(&utts, cfg.lsd_fft_size, |_, _| Ok(LpcFilter::zeros(cfg.dims.lpc_order)))?;
    let mut params = ModelParams::init(cfg.dims, cfg.seed)?;
    let (mean, scale) = training::feature_statistics(&utts, cfg.dims.n_features)?;
    params.set_normalization(mean, scale)?;

    let train_seconds = utts.iter().map(|u| u.samples.len()).sum::<usize>() as f64 / SAMPLE_RATE_HZ as f64;
    if !a.quiet {
        say(
            out,
            format_args!(
                "{} utterances ({train_seconds:.1} s), {} sequences, {} skipped; variant {}; baseline LSD {:.3} dB",
                utts.len(),
                data.len(),
                data.skipped,
                cfg.loss.variant.name(),
                baseline.mean_db
            ),
        );
    }

    let mut log_file = match &a.log {
        Some(p) => {
            let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            Some(tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::file(p, e))?)
        }
        None => None,
    };
    let mut log_err: Option<io::Error> = None;
    let mut log = |r: &BatchRecord| {
        if let (Some(f), None) = (log_file.as_mut(), log_err.as_ref()) {
            let line = serde_json::to_string(r).expect("log record serializes");
            if let Err(e) = writeln!(f, "{line}") {
                log_err = Some(e);
            }
        }
    };
    let mut epochs = Vec::new();
    let quiet = a.quiet;
    let started = Instant::now();
    let mut on_epoch = |s: &EpochStats, p: &ModelParams| {
        if !quiet {
            say(
                out,
                format_args!(
                    "epoch {:2}{} loss {:.4} compensated {:.4} lar {:.4} lsd {} valid {} clipped {} ({:.0} s)",
                    s.epoch,
                    if s.frame_net_frozen { " [frozen]" } else { "" },
                    s.loss,
                    s.compensated(),
                    s.lar,
                    s.lsd_db.map_or("-".into(), |v| format!("{v:.3}")),
                    s.valid_loss.map_or("-".into(), |v| format!("{v:.4}")),
                    s.clipped,
                    started.elapsed().as_secs_f64()
                ),
            );
        }
        epochs.push(EpochRecord {
            stats: s.clone(),
            frame_net_digest: frame_net_digest(p),
        });
        true
    };
    let mut trainer = Trainer::new(cfg.clone(), params)?;
    let eval = EvalSets {
        lsd: Some(&utts),
        valid: valid.as_ref().map(|d| &d.sequences[..]),
    };
    let result = trainer.run(&data, eval, &mut log, &mut on_epoch);
    if let (Some(f), Some(p)) = (log_file, &a.log) {
        if let Some(e) = log_err {
            return Err(CliError::file(p, e));
        }
        f.persist(p).map_err(|e| CliError::file(p, e.error))?;
    }
    result?;
    write_checkpoint(&a.out_checkpoint, trainer.params())?;
    let summary = TrainSummary {
        config: cfg,
        train_utterances: utts.len(),
        train_seconds,
        sequences: data.len(),
        skipped_utterances: data.skipped,
        baseline_lsd_db: baseline.mean_db,
        active_frames: baseline.active_frames,
        epochs,
    };
    if let Some(p) = &a.stats {
        write_atomic(p, |f| {
            serde_json::to_writer_pretty(BufWriter::new(f), &summary).map_err(io::Error::other)
        })?;
    }
    Ok(summary)
}

fn read_feature_file(path: &Path, cfg: &AnalysisConfig) -> CliResult<Vec<features::FeatureFrame>> {
    let (_, frames) = features::read_features(open(path)?, cfg).map_err(|e| CliError::file(path, e))?;
    Ok(frames)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let analysis = AnalysisConfig::default();
    let frames = read_feature_file(&a.features, &analysis)?;
    let cepstra: Vec<Vec<f64>> = frames.into_iter().map(|f| f.cepstrum).collect();
    let cfg = SynthConfig {
        temperature: a.temperature,
        seed: a.seed,
        frame_size: analysis.frame_size,
        pre_emphasis: analysis.pre_emphasis,
    };
    let sig = model::synthesize(&params, &cepstra, &cfg).map_err(|e| match e {
        e2e_lpcnet::Error::Config(m) => CliError::Input(m),
        e => CliError::Core(e),
    })?;
    wav::write_wav(&a.output, &sig)?;
    say(
        out,
        format_args!("{} frames -> {:.2} s -> {}", cepstra.len(), sig.duration_secs(), a.output.display()),
    );
    Ok(())
}

pub fn cmd_lsd(a: &LsdArgs, out: &mut dyn Write) -> CliResult<training::LsdReport> {
    let analysis = AnalysisConfig::default();
    let utts = load_utterances(&a.eval_dir, &analysis)?;
    let report = match &a.checkpoint {
        Some(p) if !a.ground_truth => training::evaluate_lsd(&read_checkpoint(p)?, &utts, a.fft_size)?,
        _ => training::lsd_over_active(&utts, a.fft_size, |u, i| Ok(u.a_ground[i].clone()))?,
    };
    if a.json {
        say(out, format_args!("{}", serde_json::to_string(&report).expect("report serializes")));
    } else {
        say(
            out,
            format_args!("mean LSD {:.2} dB over {} active frames", report.mean_db, report.active_frames),
        );
    }
    Ok(report)
}

pub fn cmd_response(a: &ResponseArgs, out: &mut dyn Write) -> CliResult<()> {
    let analysis = AnalysisConfig::default();
    let frames = read_feature_file(&a.features, &analysis)?;
    let frame = frames.get(a.frame).ok_or_else(|| {
        CliError::Input(format!("frame {} out of range: file has {} frames", a.frame, frames.len()))
    })?;
    let (truth, _) = features::ground_truth_lpc(frame, &analysis)?;
    let mut sources = Vec::new();
    if let Some(p) = a.checkpoint.as_ref().filter(|_| !a.ground_truth) {
        let params = read_checkpoint(p)?;
        sources.push(("predicted", params.frame_forward(&frame.cepstrum)?.a));
    }
    sources.push(("ground_truth", truth));
    let mut rows = Vec::new();
    for (label, filt) in &sources {
        let resp = lp::lpc_log_response(filt, a.fft_size)?;
        for (bin, db) in resp.iter().enumerate() {
            let hz = bin as f64 * SAMPLE_RATE_HZ as f64 / a.fft_size as f64;
            rows.push(format!("{hz},{db},{label}"));
        }
    }
    write_atomic(&a.output, |f| {
        let mut w = BufWriter::new(f);
        writeln!(w, "frequency_hz,response_db,source_label")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
    })?;
    say(out, format_args!("{} rows -> {}", rows.len(), a.output.display()));
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = SuiteConfig {
        points: a.points,
        seed: a.seed,
        full_model: !a.skip_full_model,
    };
    let started = Instant::now();
    let entries = verify::gradient_suite(cfg, &mut |e| {
        say(
            out,
            format_args!(
                "{} {:<60} max rel {:.2e} (tol {:.0e}) checked {} skipped {}",
                if e.passed() { "PASS" } else { "FAIL" },
                e.name,
                e.max_rel_error,
                e.tolerance,
                e.checked,
                e.skipped
            ),
        )
    })?;
    say(out, format_args!("{:.1} s", started.elapsed().as_secs_f64()));
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(failed.join(", ")))
    }
}
