//! Teacher-forced forward pass built entirely from tape primitives.
//!
//! This is the straightforward formulation of the training graph. It is
//! slow and kept for gradient checking and as the reference the fused
//! training kernel is tested against.

use crate::autodiff::{gru_cell, GruVars, Tape, Tensor, Var};
use crate::error::Result;
use crate::losses::{self, LossConfig, LossTerms};

use super::{clamp_mu, mu_of, InputNoise, ModelDims, ModelParams, ParamId, Sequence, RC_SCALE};

/// Tape variables for every [`ParamId`], in order.
pub type ParamVars = Vec<Var>;

/// Records the parameters as tape leaves.
pub fn param_vars(tape: &mut Tape, params: &ModelParams) -> ParamVars {
    params.tensors().iter().map(|t| tape.leaf(t.clone())).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct FrameVars {
    pub f: Var,
    pub k: Var,
    pub a: Var,
}

/// Frame-rate network on the tape for one normalized feature vector.
pub fn build_frame(tape: &mut Tape, pv: &[Var], dims: &ModelDims, x: &[f64]) -> Result<FrameVars> {
    let x = tape.leaf(Tensor::vector(x.to_vec()));
    let h = tape.affine(x, pv[ParamId::Fc1W.index()], pv[ParamId::Fc1B.index()])?;
    let h = tape.tanh(h);
    let f = tape.affine(h, pv[ParamId::Fc2W.index()], pv[ParamId::Fc2B.index()])?;
    let f = tape.tanh(f);
    let k = tape.slice(f, 0, dims.lpc_order)?;
    let k = tape.scale(k, RC_SCALE);
    let a = tape.levinson(k);
    Ok(FrameVars { f, k, a })
}

/// Result of [`teacher_forced_pass`].
#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// The optimized objective averaged over samples, plus the LAR term.
    pub loss: Var,
    pub terms: LossTerms,
    /// Per sequence, per sample predictions `p_t`.
    pub predictions: Vec<Vec<f64>>,
    /// Per sequence, per sample μ-law excitation targets.
    pub targets: Vec<Vec<f64>>,
    pub frames: Vec<Vec<FrameVars>>,
}

fn gru_vars(pv: &[Var], w: ParamId, u: ParamId, bx: ParamId, bh: ParamId) -> GruVars {
    GruVars {
        w: pv[w.index()],
        u: pv[u.index()],
        bx: pv[bx.index()],
        bh: pv[bh.index()],
    }
}

/// Builds the full teacher-forced training graph for a batch of sequences.
///
/// For each sample: `p_t = Σ a_i s_{t−i}` over ground-truth history,
/// `e_t = s_t − p_t`, target `U(clamp(e_t))`. The network sees the
/// ground-truth `s_{t−1}`, the prediction and the computed `e_{t−1}`, so
/// the loss reaches the reflection coefficients both through the target
/// and through the inputs.
pub fn teacher_forced_pass(
    tape: &mut Tape,
    params: &ModelParams,
    pv: &[Var],
    seqs: &[Sequence],
    noise: Option<&[InputNoise]>,
    cfg: &LossConfig,
) -> Result<TeacherForced> {
    let dims = *params.dims();
    let m = dims.lpc_order;
    let gru_a = gru_vars(pv, ParamId::GruAW, ParamId::GruAU, ParamId::GruABx, ParamId::GruABh);
    let gru_b = gru_vars(pv, ParamId::GruBW, ParamId::GruBU, ParamId::GruBBx, ParamId::GruBBh);
    let embed = pv[ParamId::Embed.index()];

    let mut objectives = Vec::new();
    let mut lars = Vec::new();
    let mut sums = [0.0f64; 3];
    let mut predictions = Vec::new();
    let mut targets = Vec::new();
    let mut all_frames = Vec::new();
    for (si, seq) in seqs.iter().enumerate() {
        seq.validate(&dims)?;
        let frame_size = seq.frame_size();
        let mut frames = Vec::with_capacity(seq.frames());
        for (fi, cep) in seq.features.iter().enumerate() {
            let fv = build_frame(tape, pv, &dims, &params.normalize(cep)?)?;
            if cfg.variant.uses_lar() {
                lars.push(losses::tape_lar(tape, fv.k, &seq.k_ground[fi], 1.0)?);
            }
            frames.push(fv);
        }
        let mut h_a = tape.leaf(Tensor::zeros(&[dims.gru_a]));
        let mut h_b = tape.leaf(Tensor::zeros(&[dims.gru_b]));
        let mut e_prev: Option<Var> = None;
        let mut seq_p = Vec::with_capacity(seq.samples.len());
        let mut seq_e = Vec::with_capacity(seq.samples.len());
        for t in 0..seq.samples.len() {
            let fv = frames[t / frame_size];
            let ti = t as isize;
            let hist: Vec<f64> = (0..m).map(|j| seq.at(ti - m as isize + j as isize)).collect();
            let hist = tape.leaf(Tensor::vector(hist));
            let p = tape.predict(hist, fv.a)?;
            let s_t = tape.scalar(seq.samples[t]);
            let e = tape.sub(s_t, p)?;
            let ec = tape.clamp(e, -1.0, 1.0);
            let e_mu = tape.mu_compand(ec)?;
            let pc = tape.clamp(p, -1.0, 1.0);
            let p_mu = tape.mu_compand(pc)?;

            let (ns, ne) = match noise {
                Some(n) => (n[si].s[t], n[si].e[t]),
                None => (0.0, 0.0),
            };
            let s_in = tape.scalar(clamp_mu(mu_of(seq.at(ti - 1)) + ns));
            let e_raw = match e_prev {
                Some(prev) => {
                    let nz = tape.scalar(ne);
                    tape.add(prev, nz)?
                }
                None => tape.scalar(ne),
            };
            let e_in = tape.clamp(e_raw, -crate::signal::U_MAX, crate::signal::U_MAX);

            let es = tape.embed_interp(embed, s_in)?;
            let ep = tape.embed_interp(embed, p_mu)?;
            let ee = tape.embed_interp(embed, e_in)?;
            let x = tape.concat(&[es, ep, ee, fv.f]);
            h_a = gru_cell(tape, x, h_a, &gru_a)?;
            let xb = tape.concat(&[h_a, fv.f]);
            h_b = gru_cell(tape, xb, h_b, &gru_b)?;
            let logits = tape.affine(h_b, pv[ParamId::OutW.index()], pv[ParamId::OutB.index()])?;
            let probs = tape.softmax(logits);
            let terms = losses::tape_sample(tape, cfg, probs, e_mu)?;
            objectives.push(terms.objective);
            sums[0] += tape.value(terms.ce).item();
            sums[1] += tape.value(terms.ice).item();
            sums[2] += tape.value(terms.compensation).item();
            seq_p.push(tape.value(p).item());
            seq_e.push(tape.value(e_mu).item());
            e_prev = Some(e_mu);
        }
        predictions.push(seq_p);
        targets.push(seq_e);
        all_frames.push(frames);
    }

    let n = objectives.len() as f64;
    let obj = tape.concat(&objectives);
    let obj = tape.sum(obj);
    let mut loss = tape.scale(obj, 1.0 / n);
    let mut lar_value = 0.0;
    if !lars.is_empty() {
        let nl = lars.len() as f64;
        let l = tape.concat(&lars);
        let l = tape.sum(l);
        let l = tape.scale(l, cfg.lar_weight / nl);
        lar_value = tape.value(l).item();
        loss = tape.add(loss, l)?;
    }
    let compensation = sums[2] / n;
    let terms = LossTerms {
        ce: sums[0] / n,
        ice: sums[1] / n,
        compensation,
        l1: if cfg.variant.uses_l1() {
            cfg.gamma * compensation
        } else {
            0.0
        },
        lar: lar_value,
        total: tape.value(loss).item(),
    };
    Ok(TeacherForced {
        loss,
        terms,
        predictions,
        targets,
        frames: all_frames,
    })
}
