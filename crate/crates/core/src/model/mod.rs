//! Frame-rate and sample-rate networks.
//!
//! The frame-rate network maps a cepstral feature frame to a conditioning
//! vector `f`. Its first `M` entries, scaled by 0.999, are the reflection
//! coefficients of the frame's LP filter. The sample-rate network sees the
//! μ-law embeddings of the previous signal sample, the current prediction
//! and the previous excitation, together with `f`, and outputs a 256-way
//! distribution over the μ-law excitation.
//!
//! ```text
//! cepstrum ─ fc1/tanh ─ fc2/tanh ─ f ──┬─ k = 0.999·f[..M] ─ step-up ─ a
//!                                      │
//! [e(s), e(p), e(e), f] ─ GRU_A ─ [h_A, f] ─ GRU_B ─ affine ─ softmax
//! ```

mod checkpoint;
mod fused;
mod reference;
mod synth;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use fused::{batch_loss_and_gradients, BatchGradients, BatchOutput, BatchResult, FrameCond, FusedKernel, SampleSums};
pub use reference::{build_frame, param_vars, teacher_forced_pass, FrameVars, ParamVars, TeacherForced};
pub use synth::{synthesize, SynthConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, EmbeddingTable, Tensor, EMBED_ROWS, N_CLASSES};
use crate::error::{Error, Result};
use crate::lp;
use crate::signal::{self, U_MAX};

/// Reflection coefficients are the conditioning outputs times this.
pub const RC_SCALE: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Cepstral inputs per frame.
    pub n_features: usize,
    pub frame_hidden: usize,
    /// Conditioning vector size `F`.
    pub cond_dim: usize,
    pub lpc_order: usize,
    pub embed_dim: usize,
    pub gru_a: usize,
    pub gru_b: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            n_features: crate::features::NB_BANDS,
            frame_hidden: 128,
            cond_dim: 128,
            lpc_order: lp::DEFAULT_ORDER,
            embed_dim: 64,
            gru_a: 192,
            gru_b: 32,
        }
    }
}

impl ModelDims {
    /// A tiny configuration for gradient checks and unit tests.
    pub fn micro() -> Self {
        Self {
            n_features: crate::features::NB_BANDS,
            frame_hidden: 6,
            cond_dim: lp::DEFAULT_ORDER + 2,
            lpc_order: lp::DEFAULT_ORDER,
            embed_dim: 3,
            gru_a: 5,
            gru_b: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self;
        if [d.n_features, d.frame_hidden, d.cond_dim, d.lpc_order, d.embed_dim, d.gru_a, d.gru_b]
            .contains(&0)
        {
            return Err(Error::Config(format!("zero dimension in {d:?}")));
        }
        if d.lpc_order > d.cond_dim {
            return Err(Error::Config(format!(
                "LPC order {} exceeds conditioning size {}",
                d.lpc_order, d.cond_dim
            )));
        }
        Ok(())
    }

    /// Input width of GRU_A: three embeddings and `f`.
    pub fn gru_a_input(&self) -> usize {
        3 * self.embed_dim + self.cond_dim
    }

    /// Input width of GRU_B: GRU_A state and `f`.
    pub fn gru_b_input(&self) -> usize {
        self.gru_a + self.cond_dim
    }

    pub fn shape(&self, id: ParamId) -> Vec<usize> {
        let d = self;
        match id {
            ParamId::Fc1W => vec![d.frame_hidden, d.n_features],
            ParamId::Fc1B => vec![d.frame_hidden],
            ParamId::Fc2W => vec![d.cond_dim, d.frame_hidden],
            ParamId::Fc2B => vec![d.cond_dim],
            ParamId::Embed => vec![EMBED_ROWS, d.embed_dim],
            ParamId::GruAW => vec![3 * d.gru_a, d.gru_a_input()],
            ParamId::GruAU => vec![3 * d.gru_a, d.gru_a],
            ParamId::GruABx | ParamId::GruABh => vec![3 * d.gru_a],
            ParamId::GruBW => vec![3 * d.gru_b, d.gru_b_input()],
            ParamId::GruBU => vec![3 * d.gru_b, d.gru_b],
            ParamId::GruBBx | ParamId::GruBBh => vec![3 * d.gru_b],
            ParamId::OutW => vec![N_CLASSES, d.gru_b],
            ParamId::OutB => vec![N_CLASSES],
        }
    }
}

/// Trainable tensors. The first four make up the frame-rate network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    Fc1W,
    Fc1B,
    Fc2W,
    Fc2B,
    Embed,
    GruAW,
    GruAU,
    GruABx,
    GruABh,
    GruBW,
    GruBU,
    GruBBx,
    GruBBh,
    OutW,
    OutB,
}

impl ParamId {
    pub const ALL: [ParamId; 15] = [
        ParamId::Fc1W,
        ParamId::Fc1B,
        ParamId::Fc2W,
        ParamId::Fc2B,
        ParamId::Embed,
        ParamId::GruAW,
        ParamId::GruAU,
        ParamId::GruABx,
        ParamId::GruABh,
        ParamId::GruBW,
        ParamId::GruBU,
        ParamId::GruBBx,
        ParamId::GruBBh,
        ParamId::OutW,
        ParamId::OutB,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamId::Fc1W => "fc1_w",
            ParamId::Fc1B => "fc1_b",
            ParamId::Fc2W => "fc2_w",
            ParamId::Fc2B => "fc2_b",
            ParamId::Embed => "embed",
            ParamId::GruAW => "gru_a_w",
            ParamId::GruAU => "gru_a_u",
            ParamId::GruABx => "gru_a_bx",
            ParamId::GruABh => "gru_a_bh",
            ParamId::GruBW => "gru_b_w",
            ParamId::GruBU => "gru_b_u",
            ParamId::GruBBx => "gru_b_bx",
            ParamId::GruBBh => "gru_b_bh",
            ParamId::OutW => "out_w",
            ParamId::OutB => "out_b",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        ParamId::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn is_frame_net(self) -> bool {
        matches!(self, ParamId::Fc1W | ParamId::Fc1B | ParamId::Fc2W | ParamId::Fc2B)
    }
}

/// All trainable tensors, the per-tensor freeze mask and the fixed input
/// normalization of the frame-rate network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
    /// Subtracted from each cepstral input.
    pub feature_mean: Vec<f64>,
    /// Multiplies each centred cepstral input.
    pub feature_scale: Vec<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let lim = (6.0 / (rows + cols) as f64).sqrt();
    (0..rows * cols).map(|_| rng.gen_range(-lim..lim)).collect()
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let tensors = ParamId::ALL.iter().map(|&p| Tensor::zeros(&dims.shape(p))).collect();
        Ok(Self {
            dims,
            tensors,
            frozen: vec![false; ParamId::ALL.len()],
            feature_mean: vec![0.0; dims.n_features],
            feature_scale: vec![1.0; dims.n_features],
        })
    }

    /// Seeded random initialization: Glorot-uniform weights, zero biases,
    /// and an embedding made of small noise on top of a linear ramp over
    /// the μ-law range.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in ParamId::ALL {
            let shape = dims.shape(id);
            if shape.len() != 2 {
                continue;
            }
            let data = if id == ParamId::Embed {
                let (rows, cols) = (shape[0], shape[1]);
                (0..rows * cols)
                    .map(|i| {
                        let r = (i / cols) as f64;
                        let ramp = 12f64.sqrt() * (r - 0.5 * (rows - 1) as f64) / rows as f64;
                        ramp + rng.gen_range(-0.1..0.1)
                    })
                    .collect()
            } else {
                glorot(&mut rng, shape[0], shape[1])
            };
            p.tensors[id.index()] = Tensor::new(shape, data)?;
        }
        Ok(p)
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.index()]
    }

    pub fn set(&mut self, id: ParamId, t: Tensor) -> Result<()> {
        if t.shape() != self.dims.shape(id) {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                detail: format!("{}: {:?} vs {:?}", id.name(), t.shape(), self.dims.shape(id)),
            });
        }
        self.tensors[id.index()] = t;
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.index()]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.index()] = frozen;
    }

    /// Freezes or unfreezes every frame-rate network tensor.
    pub fn freeze_frame_net(&mut self, frozen: bool) {
        for id in ParamId::ALL.into_iter().filter(|p| p.is_frame_net()) {
            self.set_frozen(id, frozen);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn embedding(&self) -> EmbeddingTable {
        EmbeddingTable::new(self.get(ParamId::Embed).clone()).expect("embedding shape")
    }

    pub fn set_normalization(&mut self, mean: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let n = self.dims.n_features;
        if mean.len() != n || scale.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: mean.len().min(scale.len()),
            });
        }
        self.feature_mean = mean;
        self.feature_scale = scale;
        Ok(())
    }

    /// Frame-net input after normalization.
    pub fn normalize(&self, cepstrum: &[f64]) -> Result<Vec<f64>> {
        if cepstrum.len() != self.dims.n_features {
            return Err(Error::LengthMismatch {
                expected: self.dims.n_features,
                actual: cepstrum.len(),
            });
        }
        Ok(cepstrum
            .iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((x, m), s)| (x - m) * s)
            .collect())
    }

    /// Conditioning vector, reflection coefficients and LP filter of one
    /// feature frame.
    pub fn frame_forward(&self, cepstrum: &[f64]) -> Result<FrameOutput> {
        let x = self.normalize(cepstrum)?;
        let h = affine_tanh(self.get(ParamId::Fc1W), self.get(ParamId::Fc1B), &x);
        let f = affine_tanh(self.get(ParamId::Fc2W), self.get(ParamId::Fc2B), &h);
        let k: Vec<f64> = f[..self.dims.lpc_order].iter().map(|v| RC_SCALE * v).collect();
        let a = lp::step_up(&k);
        Ok(FrameOutput {
            f,
            k: lp::ReflectionCoeffs(k),
            a: lp::LpcFilter::new(a)?,
        })
    }

    /// One sample-rate network step.
    ///
    /// Inputs are real μ-law values; `mode` selects interpolated (training)
    /// or rounded (inference) embedding lookups. Updates `state` in place
    /// and returns the 256-way distribution.
    pub fn sample_forward(
        &self,
        state: &mut SampleState,
        inputs: SampleInputs,
        f: &[f64],
        mode: EmbedMode,
    ) -> Result<Vec<f64>> {
        let d = &self.dims;
        if f.len() != d.cond_dim {
            return Err(Error::LengthMismatch {
                expected: d.cond_dim,
                actual: f.len(),
            });
        }
        let table = self.get(ParamId::Embed);
        let e = d.embed_dim;
        let row = |r: usize| &table.data()[r * e..(r + 1) * e];
        let mut x = Vec::with_capacity(d.gru_a_input());
        for v in [inputs.s_prev, inputs.p, inputs.e_prev] {
            if !(v.abs() <= U_MAX) {
                return Err(Error::Domain(format!("μ-law input {v} outside [-128, 128]")));
            }
            match mode {
                EmbedMode::Interpolate => {
                    let (r, f) = autodiff::interp_cell(v);
                    x.extend(row(r).iter().zip(row(r + 1)).map(|(a, b)| (1.0 - f) * a + f * b));
                }
                EmbedMode::Round => {
                    x.extend_from_slice(row((signal::round_half_away(v) + U_MAX) as usize))
                }
            }
        }
        x.extend_from_slice(f);
        state.h_a = gru_step(
            self.get(ParamId::GruAW),
            self.get(ParamId::GruAU),
            self.get(ParamId::GruABx),
            self.get(ParamId::GruABh),
            &x,
            &state.h_a,
        );
        let mut xb = state.h_a.clone();
        xb.extend_from_slice(f);
        state.h_b = gru_step(
            self.get(ParamId::GruBW),
            self.get(ParamId::GruBU),
            self.get(ParamId::GruBBx),
            self.get(ParamId::GruBBh),
            &xb,
            &state.h_b,
        );
        let logits = affine(self.get(ParamId::OutW), self.get(ParamId::OutB), &state.h_b);
        Ok(autodiff::softmax(&logits))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub f: Vec<f64>,
    pub k: lp::ReflectionCoeffs,
    pub a: lp::LpcFilter,
}

/// Recurrent state of the sample-rate network.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleState {
    pub h_a: Vec<f64>,
    pub h_b: Vec<f64>,
}

impl SampleState {
    pub fn new(dims: &ModelDims) -> Self {
        Self {
            h_a: vec![0.0; dims.gru_a],
            h_b: vec![0.0; dims.gru_b],
        }
    }
}

/// μ-law network inputs of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleInputs {
    pub s_prev: f64,
    pub p: f64,
    pub e_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    Interpolate,
    Round,
}

pub(crate) fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let cols = w.shape()[1];
    w.data()
        .chunks_exact(cols)
        .zip(b.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn affine_tanh(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    affine(w, b, x).into_iter().map(f64::tanh).collect()
}

/// Reset-after GRU step, gates stacked `[z, r, n]`.
pub(crate) fn gru_step(w: &Tensor, u: &Tensor, bx: &Tensor, bh: &Tensor, x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = h.len();
    let xg = affine(w, bx, x);
    let hg = affine(u, bh, h);
    (0..n)
        .map(|i| {
            let z = autodiff::sigmoid(xg[i] + hg[i]);
            let r = autodiff::sigmoid(xg[n + i] + hg[n + i]);
            let c = (xg[2 * n + i] + r * hg[2 * n + i]).tanh();
            h[i] + z * (c - h[i])
        })
        .collect()
}

/// One training sequence: aligned feature frames, samples and the
/// `M` ground-truth samples that precede it (zeros at an utterance start).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// Raw cepstral frames.
    pub features: Vec<Vec<f64>>,
    /// Ground-truth reflection coefficients per frame.
    pub k_ground: Vec<Vec<f64>>,
    /// Pre-emphasized samples preceding the sequence, oldest first.
    pub history: Vec<f64>,
    /// Pre-emphasized samples, `frames × frame_size`.
    pub samples: Vec<f64>,
}

impl Sequence {
    pub fn frames(&self) -> usize {
        self.features.len()
    }

    pub fn frame_size(&self) -> usize {
        self.samples.len() / self.features.len().max(1)
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        let nf = self.features.len();
        if nf == 0 || self.samples.is_empty() || self.samples.len() % nf != 0 {
            return Err(Error::Domain(format!(
                "{} samples do not split into {nf} frames",
                self.samples.len()
            )));
        }
        if self.k_ground.len() != nf {
            return Err(Error::LengthMismatch {
                expected: nf,
                actual: self.k_ground.len(),
            });
        }
        if self.history.len() != dims.lpc_order {
            return Err(Error::LengthMismatch {
                expected: dims.lpc_order,
                actual: self.history.len(),
            });
        }
        for fr in &self.features {
            if fr.len() != dims.n_features {
                return Err(Error::LengthMismatch {
                    expected: dims.n_features,
                    actual: fr.len(),
                });
            }
        }
        Ok(())
    }

    /// Sample `t` of the sequence, with negative `t` reaching into the history.
    #[inline]
    pub(crate) fn at(&self, t: isize) -> f64 {
        if t >= 0 {
            self.samples[t as usize]
        } else {
            self.history[(self.history.len() as isize + t) as usize]
        }
    }
}

/// Per-step μ-law noise added to the `s_{t−1}` and `e_{t−1}` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNoise {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
}

impl InputNoise {
    pub fn zeros(len: usize) -> Self {
        Self {
            s: vec![0.0; len],
            e: vec![0.0; len],
        }
    }

    /// Values in {−1, 0, +1}, nonzero with probability `prob`.
    pub fn random(len: usize, prob: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < prob {
                        if rng.gen::<bool>() {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let s = draw();
        let e = draw();
        Self { s, e }
    }
}

/// μ-law value of a linear sample, after clamping to [-1, 1].
#[inline]
pub(crate) fn mu_of(x: f64) -> f64 {
    signal::compand(x.clamp(-1.0, 1.0))
}

/// Clamp of a noisy μ-law input to the embedding range.
#[inline]
pub(crate) fn clamp_mu(u: f64) -> f64 {
    u.clamp(-U_MAX, U_MAX)
}
