//! Sequence batching, the optimization loop and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, AnalysisConfig, FeatureFrame};
use crate::losses::{LossConfig, LossTerms};
use crate::lp::{self, LpcFilter};
use crate::model::{batch_loss_and_gradients, InputNoise, ModelDims, ModelParams, ParamId, Sequence};
use crate::signal::{self, EmphasisCoeff, Signal, SAMPLE_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sequence_ms: u32,
    pub frame_ms: u32,
    pub batch_size: usize,
    /// Regular epochs, not counting the freeze epoch.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Global gradient norm limit; 0 disables clipping.
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Probability of ±1 μ-law noise on each teacher-forced input.
    pub noise_prob: f64,
    pub seed: u64,
    pub loss: LossConfig,
    /// Adds one epoch with the frame-rate network frozen.
    pub freeze_final_epoch: bool,
    pub dims: ModelDims,
    pub analysis: AnalysisConfig,
    /// FFT size for LSD evaluation.
    pub lsd_fft_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sequence_ms: 150,
            frame_ms: 10,
            batch_size: 32,
            epochs: 20,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 5,
            clip_norm: 10.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            noise_prob: 0.3,
            seed: 0,
            loss: LossConfig::default(),
            freeze_final_epoch: true,
            dims: ModelDims::default(),
            analysis: AnalysisConfig::default(),
            lsd_fft_size: lp::DEFAULT_NFFT,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frame_ms == 0 || self.sequence_ms == 0 || self.sequence_ms % self.frame_ms != 0 {
            return bad(format!(
                "sequence_ms {} must be a positive multiple of frame_ms {}",
                self.sequence_ms, self.frame_ms
            ));
        }
        if self.analysis.frame_size != self.frame_size() {
            return bad(format!(
                "analysis frame_size {} does not match {} ms",
                self.analysis.frame_size, self.frame_ms
            ));
        }
        if self.analysis.lpc_order != self.dims.lpc_order {
            return bad(format!(
                "analysis lpc_order {} differs from model order {}",
                self.analysis.lpc_order, self.dims.lpc_order
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.clip_norm >= 0.0) {
            return bad(format!("clip_norm must be >= 0, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return bad(format!("noise_prob must be in [0, 1], got {}", self.noise_prob));
        }
        if self.lsd_fft_size < 2 || self.lsd_fft_size % 2 != 0 {
            return bad("lsd_fft_size must be even".into());
        }
        self.loss.validate()?;
        self.dims.validate()?;
        self.analysis.validate()
    }

    pub fn frame_size(&self) -> usize {
        (self.frame_ms * SAMPLE_RATE_HZ / 1000) as usize
    }

    pub fn sequence_frames(&self) -> usize {
        (self.sequence_ms / self.frame_ms) as usize
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = if self.lr_decay_every == 0 { 0 } else { epoch / self.lr_decay_every };
        self.learning_rate * self.lr_decay.powi(steps as i32)
    }
}

/// One utterance ready for training: pre-emphasized samples aligned with
/// its feature frames and their ground-truth filters.
#[derive(Debug, Clone)]
pub struct Utterance {
    /// Pre-emphasized, trimmed to `frames × frame_size`.
    pub samples: Vec<f64>,
    pub frames: Vec<FeatureFrame>,
    pub k_ground: Vec<Vec<f64>>,
    pub a_ground: Vec<LpcFilter>,
}

/// Pre-emphasizes and analyzes a signal. The analysis input is padded by
/// half the window overhang on each side, so frame `i` is centred on
/// samples `[i·frame, (i+1)·frame)`.
pub fn prepare_utterance(sig: &Signal, cfg: &AnalysisConfig) -> Result<Utterance> {
    cfg.validate()?;
    let (emph, _) = signal::pre_emphasis(sig, EmphasisCoeff::new(cfg.pre_emphasis)?, 0.0);
    let pad = (cfg.window_size - cfg.frame_size) / 2;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(&emph.samples);
    padded.resize(padded.len() + pad, 0.0);
    let frames = features::analyze(&Signal::new(padded, sig.sample_rate_hz)?, cfg)?;
    let mut samples = emph.samples;
    samples.truncate(frames.len() * cfg.frame_size);
    let mut k_ground = Vec::with_capacity(frames.len());
    let mut a_ground = Vec::with_capacity(frames.len());
    for fr in &frames {
        let (a, k) = features::ground_truth_lpc(fr, cfg)?;
        k_ground.push(k.0);
        a_ground.push(a);
    }
    Ok(Utterance {
        samples,
        frames,
        k_ground,
        a_ground,
    })
}

/// Where a sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SequenceOrigin {
    pub utterance: usize,
    pub start_frame: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub origins: Vec<SequenceOrigin>,
    /// Utterances shorter than one sequence.
    pub skipped: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Cuts utterances into non-overlapping sequences and shuffles them with
/// `cfg.seed`.
pub fn make_sequences(utts: &[Utterance], cfg: &TrainConfig) -> Result<Dataset> {
    cfg.validate()?;
    let nf = cfg.sequence_frames();
    let fs = cfg.frame_size();
    let m = cfg.dims.lpc_order;
    let mut items = Vec::new();
    let mut skipped = 0;
    for (u, utt) in utts.iter().enumerate() {
        if utt.samples.len() != utt.frames.len() * fs {
            return Err(Error::LengthMismatch {
                expected: utt.frames.len() * fs,
                actual: utt.samples.len(),
            });
        }
        let count = utt.frames.len() / nf;
        if count == 0 {
            skipped += 1;
            continue;
        }
        for s in 0..count {
            let f0 = s * nf;
            let t0 = f0 * fs;
            let history = (0..m)
                .map(|j| {
                    let t = t0 as isize - m as isize + j as isize;
                    if t >= 0 { utt.samples[t as usize] } else { 0.0 }
                })
                .collect();
            let seq = Sequence {
                features: utt.frames[f0..f0 + nf].iter().map(|f| f.cepstrum.clone()).collect(),
                k_ground: utt.k_ground[f0..f0 + nf].to_vec(),
                history,
                samples: utt.samples[t0..t0 + nf * fs].to_vec(),
            };
            seq.validate(&cfg.dims)?;
            items.push((seq, SequenceOrigin { utterance: u, start_frame: f0 }));
        }
    }
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let (sequences, origins) = items.into_iter().unzip();
    Ok(Dataset {
        sequences,
        origins,
        skipped,
    })
}

/// Per-coefficient mean and inverse standard deviation over every frame.
pub fn feature_statistics(utts: &[Utterance], n_features: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut n = 0usize;
    let mut sum = vec![0.0; n_features];
    let mut sq = vec![0.0; n_features];
    for fr in utts.iter().flat_map(|u| &u.frames) {
        if fr.cepstrum.len() != n_features {
            return Err(Error::LengthMismatch {
                expected: n_features,
                actual: fr.cepstrum.len(),
            });
        }
        n += 1;
        for (i, &c) in fr.cepstrum.iter().enumerate() {
            sum[i] += c;
            sq[i] += c * c;
        }
    }
    if n == 0 {
        return Err(Error::Domain("no feature frames".into()));
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let scale = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| 1.0 / (q / nf - m * m).max(0.0).sqrt().max(1e-3))
        .collect();
    Ok((mean, scale))
}

/// Adaptive-moment optimizer with a step count per tensor, so tensors
/// frozen for a while resume with correct bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<i32>,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            m: zeros.clone(),
            v: zeros,
            steps: vec![0; ParamId::ALL.len()],
        }
    }

    /// Updates every tensor that is not frozen.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[crate::autodiff::Tensor], lr: f64) {
        for id in ParamId::ALL {
            if params.is_frozen(id) {
                continue;
            }
            let i = id.index();
            self.steps[i] += 1;
            let c1 = 1.0 - self.beta1.powi(self.steps[i]);
            let c2 = 1.0 - self.beta2.powi(self.steps[i]);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.get_mut(id).data_mut();
            for (j, &g) in grads[i].data().iter().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

/// Loss components logged per batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedTerms {
    pub ice: f64,
    pub l1: f64,
    pub lar: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub terms: LoggedTerms,
    /// Global norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub frame_net_frozen: bool,
    pub batches: usize,
    /// Sample-weighted means over the epoch's batches.
    pub loss: f64,
    pub ice: f64,
    pub ce: f64,
    pub compensation: f64,
    pub l1: f64,
    pub lar: f64,
    /// Mean pre-clip gradient norm.
    pub grad_norm: f64,
    pub clipped: usize,
    /// Mean LSD to ground truth over active frames, when an LSD set is given.
    pub lsd_db: Option<f64>,
    /// Noise-free loss on the validation set, when one is given.
    pub valid_loss: Option<f64>,
}

impl EpochStats {
    /// ICE plus the compensation term.
    pub fn compensated(&self) -> f64 {
        self.ice + self.compensation
    }
}

/// Optional held-out data scored after every epoch.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalSets<'a> {
    pub lsd: Option<&'a [Utterance]>,
    pub valid: Option<&'a [Sequence]>,
}

pub struct Trainer {
    cfg: TrainConfig,
    params: ModelParams,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

fn global_norm(params: &ModelParams, grads: &[crate::autodiff::Tensor]) -> f64 {
    ParamId::ALL
        .iter()
        .filter(|&&id| !params.is_frozen(id))
        .flat_map(|&id| grads[id.index()].data())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

impl Trainer {
    pub fn new(cfg: TrainConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        if *params.dims() != cfg.dims {
            return Err(Error::Config("parameter dims differ from the training config".into()));
        }
        let adam = Adam::new(&params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
        // Separate stream from the dataset shuffle and the initialization.
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
        Ok(Self {
            cfg,
            params,
            adam,
            rng,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `data` in a fresh seeded order.
    pub fn train_epoch(
        &mut self,
        data: &Dataset,
        eval: EvalSets<'_>,
        log: &mut dyn FnMut(&BatchRecord),
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Domain("training set has no sequences".into()));
        }
        let epoch = self.epoch;
        let lr = self.cfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);

        let mut acc = TermsAccumulator::default();
        let mut norm_sum = 0.0;
        let mut clipped = 0;
        let mut batches = 0;
        for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let seqs: Vec<Sequence> = chunk.iter().map(|&i| data.sequences[i].clone()).collect();
            let noise: Vec<InputNoise> = seqs
                .iter()
                .map(|s| InputNoise::random(s.samples.len(), self.cfg.noise_prob, &mut self.rng))
                .collect();
            let noise = (self.cfg.noise_prob > 0.0).then_some(&noise[..]);
            let mut res = batch_loss_and_gradients(&self.params, &seqs, noise, &self.cfg.loss)?;
            let norm = global_norm(&self.params, &res.grads);
            if !res.terms.total.is_finite() || !norm.is_finite() {
                return Err(self.non_finite(epoch, bi, chunk, data, &res.terms, norm, res.floored));
            }
            let clip = self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm;
            if clip {
                let s = self.cfg.clip_norm / norm;
                for g in &mut res.grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
                clipped += 1;
            }
            self.adam.step(&mut self.params, &res.grads, lr);
            log(&BatchRecord {
                epoch,
                batch: bi,
                loss: res.terms.total,
                terms: LoggedTerms {
                    ice: res.terms.ice,
                    l1: res.terms.l1,
                    lar: res.terms.lar,
                },
                grad_norm: norm,
                clipped: clip,
            });
            acc.add(&res.terms, res.n_samples);
            norm_sum += norm;
            batches += 1;
        }
        self.epoch += 1;

        let m = acc.mean();
        let lsd_db = match eval.lsd {
            Some(u) => Some(evaluate_lsd(&self.params, u, self.cfg.lsd_fft_size)?.mean_db),
            None => None,
        };
        let valid_loss = match eval.valid {
            Some(v) => Some(validation_loss(&self.params, v, &self.cfg.loss, self.cfg.batch_size)?.total),
            None => None,
        };
        Ok(EpochStats {
            epoch,
            learning_rate: lr,
            frame_net_frozen: ParamId::ALL
                .iter()
                .filter(|p| p.is_frame_net())
                .all(|&p| self.params.is_frozen(p)),
            batches,
            loss: m.total,
            ice: m.ice,
            ce: m.ce,
            compensation: m.compensation,
            l1: m.l1,
            lar: m.lar,
            grad_norm: norm_sum / batches as f64,
            clipped,
            lsd_db,
            valid_loss,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn non_finite(
        &self,
        epoch: usize,
        batch: usize,
        chunk: &[usize],
        data: &Dataset,
        terms: &LossTerms,
        norm: f64,
        floored: usize,
    ) -> Error {
        let origins: Vec<_> = chunk.iter().map(|&i| data.origins[i]).collect();
        let extremes: Vec<(&str, f64)> = ParamId::ALL
            .iter()
            .map(|&id| {
                let t = self.params.get(id);
                let worst = t.data().iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
                (id.name(), worst)
            })
            .collect();
        Error::NonFiniteLoss {
            epoch,
            batch,
            diagnostics: serde_json::json!({
                "terms": terms,
                "grad_norm": format!("{norm}"),
                "floored_samples": floored,
                "sequences": origins,
                "max_abs_param": extremes,
            })
            .to_string(),
        }
    }

    /// Regular epochs, then the optional freeze epoch. `on_epoch` sees each
    /// epoch's stats and may stop training early by returning false.
    pub fn run(
        &mut self,
        data: &Dataset,
        eval: EvalSets<'_>,
        log: &mut dyn FnMut(&BatchRecord),
        on_epoch: &mut dyn FnMut(&EpochStats, &ModelParams) -> bool,
    ) -> Result<Vec<EpochStats>> {
        let mut out = Vec::new();
        for _ in 0..self.cfg.epochs {
            let s = self.train_epoch(data, eval, log)?;
            let go = on_epoch(&s, &self.params);
            out.push(s);
            if !go {
                return Ok(out);
            }
        }
        if self.cfg.freeze_final_epoch {
            let saved: Vec<bool> = ParamId::ALL.iter().map(|&p| self.params.is_frozen(p)).collect();
            self.params.freeze_frame_net(true);
            let s = self.train_epoch(data, eval, log);
            for (id, f) in ParamId::ALL.iter().zip(saved) {
                self.params.set_frozen(*id, f);
            }
            let s = s?;
            on_epoch(&s, &self.params);
            out.push(s);
        }
        Ok(out)
    }
}

#[derive(Default)]
struct TermsAccumulator {
    n: f64,
    sum: LossTerms,
}

impl TermsAccumulator {
    fn add(&mut self, t: &LossTerms, n: usize) {
        let w = n as f64;
        self.n += w;
        self.sum.ce += w * t.ce;
        self.sum.ice += w * t.ice;
        self.sum.compensation += w * t.compensation;
        self.sum.l1 += w * t.l1;
        self.sum.lar += w * t.lar;
        self.sum.total += w * t.total;
    }

    fn mean(&self) -> LossTerms {
        let n = self.n.max(1.0);
        LossTerms {
            ce: self.sum.ce / n,
            ice: self.sum.ice / n,
            compensation: self.sum.compensation / n,
            l1: self.sum.l1 / n,
            lar: self.sum.lar / n,
            total: self.sum.total / n,
        }
    }
}

/// Noise-free loss terms over `seqs`, averaged by sample count.
pub fn validation_loss(params: &ModelParams, seqs: &[Sequence], cfg: &LossConfig, batch_size: usize) -> Result<LossTerms> {
    if seqs.is_empty() {
        return Err(Error::Domain("validation set has no sequences".into()));
    }
    let mut acc = TermsAccumulator::default();
    for chunk in seqs.chunks(batch_size.max(1)) {
        let r = batch_loss_and_gradients(params, chunk, None, cfg)?;
        acc.add(&r.terms, r.n_samples);
    }
    Ok(acc.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsdReport {
    pub mean_db: f64,
    pub active_frames: usize,
}

/// Mean LSD between `predict(utterance, frame)` and the ground-truth
/// filter over active frames.
pub fn lsd_over_active<F>(utts: &[Utterance], n_fft: usize, mut predict: F) -> Result<LsdReport>
where
    F: FnMut(&Utterance, usize) -> Result<LpcFilter>,
{
    let mut sum = 0.0;
    let mut n = 0;
    for u in utts {
        for (i, fr) in u.frames.iter().enumerate() {
            if !fr.active {
                continue;
            }
            sum += lp::log_spectral_distance(&predict(u, i)?, &u.a_ground[i], n_fft)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Domain("no active frames".into()));
    }
    Ok(LsdReport {
        mean_db: sum / n as f64,
        active_frames: n,
    })
}

/// Mean LSD of the frame-rate network's filters against ground truth.
pub fn evaluate_lsd(params: &ModelParams, utts: &[Utterance], n_fft: usize) -> Result<LsdReport> {
    lsd_over_active(utts, n_fft, |u, i| Ok(params.frame_forward(&u.frames[i].cepstrum)?.a))
}
