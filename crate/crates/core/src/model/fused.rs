//! Batched teacher-forced forward and backward pass of the sample-rate
//! network, written directly in matrix form.
//!
//! Computes the same function and gradients as the tape reference, but
//! runs a whole batch of equal-length sequences in lock-step so every
//! recurrent product is a GEMM. Two rewrites keep the per-step work small:
//!
//! * Embedding inputs enter GRU_A only through `W_slot · v`, so each slot's
//!   table is pre-multiplied (`T_slot = V W_slotᵀ`, 257 × 3H). The
//!   interpolated lookup then mixes two rows of `T_slot`, and its gradient
//!   is scattered into `∂T_slot`, folded back into `W` and `V` at the end.
//! * The conditioning vector is constant within a frame, so `W_f f + b` is
//!   computed once per frame.
//!
//! The LP path needs no recurrence in the backward pass: with teacher
//! forcing, `p_t` depends only on the frame's `a` and ground-truth history,
//! so `∂a_j += ∂p_t · s_{t−1−j}` is accumulated per step. The returned
//! `∂f` and `∂a` are meant to seed the frame-rate network on a tape.

use ndarray::{concatenate, linalg::general_mat_mul, Array1, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::autodiff::{interp_cell, sigmoid, Tensor, N_CLASSES};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, PROB_FLOOR};
use crate::signal;

use super::{clamp_mu, mu_of, InputNoise, ModelDims, ModelParams, ParamId, Sequence};

/// Conditioning vector and LP coefficients of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCond {
    pub f: Vec<f64>,
    pub a: Vec<f64>,
}

/// Unscaled sums of the per-sample loss terms over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleSums {
    pub ce: f64,
    pub ice: f64,
    pub compensation: f64,
    pub objective: f64,
    /// Samples whose probability hit the log floor.
    pub floored: usize,
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Sample-rate network gradients by [`ParamId`]; frame-net slots are `None`.
    pub params: Vec<Option<Tensor>>,
    /// `∂L/∂f` per sequence and frame.
    pub df: Vec<Vec<Vec<f64>>>,
    /// `∂L/∂a` per sequence and frame.
    pub da: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub sums: SampleSums,
    pub n_samples: usize,
    pub grads: BatchGradients,
}

/// Sample-net weights laid out for the batched pass.
pub struct FusedKernel {
    dims: ModelDims,
    embed: Array2<f64>,
    w_slots: [Array2<f64>; 3],
    tproj: [Array2<f64>; 3],
    w_af: Array2<f64>,
    ua: Array2<f64>,
    bxa: Array1<f64>,
    bha: Array1<f64>,
    wbh: Array2<f64>,
    wbf: Array2<f64>,
    ub: Array2<f64>,
    bxb: Array1<f64>,
    bhb: Array1<f64>,
    wo: Array2<f64>,
    bo: Array1<f64>,
}

fn arr2(t: &Tensor) -> Array2<f64> {
    let s = t.shape();
    Array2::from_shape_vec((s[0], s[1]), t.data().to_vec()).expect("matrix shape")
}

fn arr1(t: &Tensor) -> Array1<f64> {
    Array1::from_vec(t.data().to_vec())
}

fn to_tensor(a: Array2<f64>) -> Tensor {
    let (r, c) = a.dim();
    let data = if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    };
    Tensor::new(vec![r, c], data).expect("matrix shape")
}

fn broadcast_rows(b: &Array1<f64>, rows: usize) -> Array2<f64> {
    b.broadcast((rows, b.len())).expect("bias broadcast").to_owned()
}

/// Per-sample quantities the backward pass needs.
#[derive(Debug, Clone, Copy, Default)]
struct StepInfo {
    rows: [usize; 3],
    frac: [f64; 3],
    p: f64,
    e: f64,
    e_in_passes: bool,
}

/// Stored activations of one GRU layer over all steps.
struct GruTrace {
    /// States, index 0 is the initial state.
    h: Array3<f64>,
    z: Array3<f64>,
    r: Array3<f64>,
    n: Array3<f64>,
    /// Recurrent candidate pre-activation `U_n h + c_n`.
    hn: Array3<f64>,
}

impl GruTrace {
    fn new(steps: usize, batch: usize, hidden: usize) -> Self {
        Self {
            h: Array3::zeros((steps + 1, batch, hidden)),
            z: Array3::zeros((steps, batch, hidden)),
            r: Array3::zeros((steps, batch, hidden)),
            n: Array3::zeros((steps, batch, hidden)),
            hn: Array3::zeros((steps, batch, hidden)),
        }
    }

    /// Gating for step `t` given input and recurrent gate pre-activations.
    fn step(&mut self, t: usize, xg: &Array2<f64>, hg: &Array2<f64>) {
        let hidden = self.z.dim().2;
        let (prev, mut next) = self.h.multi_slice_mut((
            ndarray::s![t, .., ..],
            ndarray::s![t + 1, .., ..],
        ));
        let mut z = self.z.index_axis_mut(Axis(0), t);
        let mut r = self.r.index_axis_mut(Axis(0), t);
        let mut n = self.n.index_axis_mut(Axis(0), t);
        let mut hn = self.hn.index_axis_mut(Axis(0), t);
        for b in 0..xg.nrows() {
            let xr = xg.row(b);
            let hr = hg.row(b);
            for k in 0..hidden {
                let zk = sigmoid(xr[k] + hr[k]);
                let rk = sigmoid(xr[hidden + k] + hr[hidden + k]);
                let hnk = hr[2 * hidden + k];
                let nk = (xr[2 * hidden + k] + rk * hnk).tanh();
                let hp = prev[[b, k]];
                z[[b, k]] = zk;
                r[[b, k]] = rk;
                n[[b, k]] = nk;
                hn[[b, k]] = hnk;
                next[[b, k]] = hp + zk * (nk - hp);
            }
        }
    }

    /// Backward through step `t`. Returns gradients of the input and
    /// recurrent gate pre-activations and the direct `∂h_{t−1}` part.
    fn back(&self, t: usize, dh: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (batch, hidden) = dh.dim();
        let mut gx = Array2::zeros((batch, 3 * hidden));
        let mut gh = Array2::zeros((batch, 3 * hidden));
        let mut dprev = Array2::zeros((batch, hidden));
        let prev = self.h.index_axis(Axis(0), t);
        let z = self.z.index_axis(Axis(0), t);
        let r = self.r.index_axis(Axis(0), t);
        let n = self.n.index_axis(Axis(0), t);
        let hn = self.hn.index_axis(Axis(0), t);
        for b in 0..batch {
            for k in 0..hidden {
                let g = dh[[b, k]];
                let (zk, rk, nk, hp) = (z[[b, k]], r[[b, k]], n[[b, k]], prev[[b, k]]);
                let dz = g * (nk - hp) * zk * (1.0 - zk);
                let dn = g * zk * (1.0 - nk * nk);
                let dr = dn * hn[[b, k]] * rk * (1.0 - rk);
                gx[[b, k]] = dz;
                gx[[b, hidden + k]] = dr;
                gx[[b, 2 * hidden + k]] = dn;
                gh[[b, k]] = dz;
                gh[[b, hidden + k]] = dr;
                gh[[b, 2 * hidden + k]] = dn * rk;
                dprev[[b, k]] = g * (1.0 - zk);
            }
        }
        (gx, gh, dprev)
    }
}

/// `C += Aᵀ B`.
fn add_atb(c: &mut Array2<f64>, a: ArrayView2<f64>, b: ArrayView2<f64>) {
    general_mat_mul(1.0, &a.t(), &b, 1.0, c);
}

/// `C += A B`.
fn add_ab(c: &mut ArrayViewMut2<f64>, a: ArrayView2<f64>, b: ArrayView2<f64>) {
    general_mat_mul(1.0, &a, &b, 1.0, c);
}

/// Loss of one output row. Converts `row` from logits to the gradient of
/// `scale · objective` with respect to the logits and returns the terms
/// plus `∂(scale · objective)/∂e_μ`.
fn row_loss(row: &mut [f64], target: f64, cfg: &LossConfig, scale: f64) -> (SampleSums, f64) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    let probs = row;
    let ct = losses::class_index(signal::round_half_away(target) as i32);
    let pt = probs[ct];
    let j = target.floor();
    let fr = target - j;
    let c0 = losses::class_index(j as i32);
    let c1 = losses::class_index(j as i32 + 1);
    let pi = (1.0 - fr) * probs[c0] + fr * probs[c1];
    let comp_scale = losses::compensation_scale();
    let out = SampleSums {
        ce: -pt.max(PROB_FLOOR).ln(),
        ice: -pi.max(PROB_FLOOR).ln(),
        compensation: target.abs() * comp_scale,
        objective: 0.0,
        floored: 0,
    };
    let v = cfg.variant;
    let comp_coef = if v.uses_ce() { 0.0 } else { 1.0 } + if v.uses_l1() { cfg.gamma } else { 0.0 };
    let likelihood = if v.uses_ce() { out.ce } else { out.ice };
    let mut sums = SampleSums {
        objective: likelihood + comp_coef * out.compensation,
        ..out
    };
    let mut de = 0.0;
    if target != 0.0 {
        de += scale * comp_coef * comp_scale * target.signum();
    }
    if v.uses_ce() {
        if pt > PROB_FLOOR {
            for p in probs.iter_mut() {
                *p *= scale;
            }
            probs[ct] -= scale;
        } else {
            probs.fill(0.0);
            sums.floored = 1;
        }
    } else if pi > PROB_FLOOR {
        de -= scale * (probs[c1] - probs[c0]) / pi;
        let (p0, p1) = (probs[c0], probs[c1]);
        for p in probs.iter_mut() {
            *p *= scale;
        }
        probs[c0] -= scale * (1.0 - fr) * p0 / pi;
        probs[c1] -= scale * fr * p1 / pi;
    } else {
        probs.fill(0.0);
        sums.floored = 1;
    }
    (sums, de)
}

impl FusedKernel {
    pub fn new(params: &ModelParams) -> Self {
        let d = *params.dims();
        let e = d.embed_dim;
        let embed = arr2(params.get(ParamId::Embed));
        let wa = arr2(params.get(ParamId::GruAW));
        let w_slots: [Array2<f64>; 3] =
            std::array::from_fn(|s| wa.slice(ndarray::s![.., s * e..(s + 1) * e]).to_owned());
        let tproj = std::array::from_fn(|s| embed.dot(&w_slots[s].t()));
        let w_af = wa.slice(ndarray::s![.., 3 * e..]).to_owned();
        let wb = arr2(params.get(ParamId::GruBW));
        Self {
            dims: d,
            embed,
            w_slots,
            tproj,
            w_af,
            ua: arr2(params.get(ParamId::GruAU)),
            bxa: arr1(params.get(ParamId::GruABx)),
            bha: arr1(params.get(ParamId::GruABh)),
            wbh: wb.slice(ndarray::s![.., ..d.gru_a]).to_owned(),
            wbf: wb.slice(ndarray::s![.., d.gru_a..]).to_owned(),
            ub: arr2(params.get(ParamId::GruBU)),
            bxb: arr1(params.get(ParamId::GruBBx)),
            bhb: arr1(params.get(ParamId::GruBBh)),
            wo: arr2(params.get(ParamId::OutW)),
            bo: arr1(params.get(ParamId::OutB)),
        }
    }

    /// Forward and backward pass over a batch. Gradients are of
    /// `scale · Σ objective` over every sample in the batch.
    pub fn run(
        &self,
        seqs: &[Sequence],
        conds: &[Vec<FrameCond>],
        noise: Option<&[InputNoise]>,
        cfg: &LossConfig,
        scale: f64,
    ) -> Result<BatchOutput> {
        let d = &self.dims;
        let bsz = seqs.len();
        if bsz == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        let steps = seqs[0].samples.len();
        let nf = seqs[0].frames();
        let fsize = seqs[0].frame_size();
        for (b, seq) in seqs.iter().enumerate() {
            seq.validate(d)?;
            if seq.samples.len() != steps || seq.frames() != nf {
                return Err(Error::Domain("sequences in a batch must have equal length".into()));
            }
            if conds[b].len() != nf {
                return Err(Error::LengthMismatch {
                    expected: nf,
                    actual: conds[b].len(),
                });
            }
            if let Some(n) = noise {
                if n[b].s.len() != steps || n[b].e.len() != steps {
                    return Err(Error::LengthMismatch {
                        expected: steps,
                        actual: n[b].s.len().min(n[b].e.len()),
                    });
                }
            }
        }
        let (ha, hb, m) = (d.gru_a, d.gru_b, d.lpc_order);

        // Per-frame conditioning projections.
        let fm: Vec<Array2<f64>> = (0..nf)
            .map(|i| {
                Array2::from_shape_fn((bsz, d.cond_dim), |(b, c)| conds[b][i].f[c])
            })
            .collect();
        let cond_a: Vec<Array2<f64>> = fm
            .iter()
            .map(|f| f.dot(&self.w_af.t()) + &self.bxa)
            .collect();
        let cond_b: Vec<Array2<f64>> = fm
            .iter()
            .map(|f| f.dot(&self.wbf.t()) + &self.bxb)
            .collect();

        let mut trace_a = GruTrace::new(steps, bsz, ha);
        let mut trace_b = GruTrace::new(steps, bsz, hb);
        let mut dlogits = Array3::<f64>::zeros((steps, bsz, N_CLASSES));
        let mut info = vec![StepInfo::default(); steps * bsz];
        let mut de_mu = vec![0.0; steps * bsz];
        let mut e_mu_prev = vec![0.0; bsz];
        let mut sums = SampleSums::default();
        let bha = broadcast_rows(&self.bha, bsz);
        let bhb = broadcast_rows(&self.bhb, bsz);
        let bo = broadcast_rows(&self.bo, bsz);

        for t in 0..steps {
            let i = t / fsize;
            let ti = t as isize;
            let mut xg = cond_a[i].clone();
            let mut targets = vec![0.0; bsz];
            for (b, seq) in seqs.iter().enumerate() {
                let a = &conds[b][i].a;
                let p: f64 = (0..m).map(|j| a[j] * seq.at(ti - 1 - j as isize)).sum();
                let e = seq.samples[t] - p;
                let e_mu = signal::compand(e.clamp(-1.0, 1.0));
                let p_mu = signal::compand(p.clamp(-1.0, 1.0));
                let (ns, ne) = noise.map_or((0.0, 0.0), |n| (n[b].s[t], n[b].e[t]));
                let s_in = clamp_mu(mu_of(seq.at(ti - 1)) + ns);
                let e_raw = if t > 0 { e_mu_prev[b] } else { 0.0 } + ne;
                let e_in = clamp_mu(e_raw);
                let mut st = StepInfo {
                    p,
                    e,
                    e_in_passes: e_raw.abs() <= signal::U_MAX,
                    ..StepInfo::default()
                };
                let mut row = xg.row_mut(b);
                for (s, v) in [s_in, p_mu, e_in].into_iter().enumerate() {
                    let (r, f) = interp_cell(v);
                    st.rows[s] = r;
                    st.frac[s] = f;
                    let t0 = self.tproj[s].row(r);
                    let t1 = self.tproj[s].row(r + 1);
                    for k in 0..row.len() {
                        row[k] += (1.0 - f) * t0[k] + f * t1[k];
                    }
                }
                info[t * bsz + b] = st;
                targets[b] = e_mu;
                e_mu_prev[b] = e_mu;
            }
            let mut hg = bha.clone();
            general_mat_mul(1.0, &trace_a.h.index_axis(Axis(0), t), &self.ua.t(), 1.0, &mut hg);
            trace_a.step(t, &xg, &hg);

            let h_a = trace_a.h.index_axis(Axis(0), t + 1);
            let mut xgb = cond_b[i].clone();
            general_mat_mul(1.0, &h_a, &self.wbh.t(), 1.0, &mut xgb);
            let mut hgb = bhb.clone();
            general_mat_mul(1.0, &trace_b.h.index_axis(Axis(0), t), &self.ub.t(), 1.0, &mut hgb);
            trace_b.step(t, &xgb, &hgb);

            let mut logits = dlogits.index_axis_mut(Axis(0), t);
            logits.assign(&bo);
            general_mat_mul(1.0, &trace_b.h.index_axis(Axis(0), t + 1), &self.wo.t(), 1.0, &mut logits);
            for b in 0..bsz {
                let mut row = logits.row_mut(b);
                let row = row.as_slice_mut().expect("contiguous logits");
                let (s, de) = row_loss(row, targets[b], cfg, scale);
                sums.ce += s.ce;
                sums.ice += s.ice;
                sums.compensation += s.compensation;
                sums.objective += s.objective;
                sums.floored += s.floored;
                de_mu[t * bsz + b] = de;
            }
        }

        // Backward.
        let mut d_ua = Array2::<f64>::zeros(self.ua.dim());
        let mut d_bha = Array1::<f64>::zeros(3 * ha);
        let mut d_wbh = Array2::<f64>::zeros(self.wbh.dim());
        let mut d_ub = Array2::<f64>::zeros(self.ub.dim());
        let mut d_bhb = Array1::<f64>::zeros(3 * hb);
        let mut d_wo = Array2::<f64>::zeros(self.wo.dim());
        let mut d_bo = Array1::<f64>::zeros(N_CLASSES);
        let mut d_cond_a: Vec<Array2<f64>> = (0..nf).map(|_| Array2::zeros((bsz, 3 * ha))).collect();
        let mut d_cond_b: Vec<Array2<f64>> = (0..nf).map(|_| Array2::zeros((bsz, 3 * hb))).collect();
        let mut d_tproj: [Array2<f64>; 3] = std::array::from_fn(|s| Array2::zeros(self.tproj[s].dim()));
        let mut da = vec![vec![vec![0.0; m]; nf]; bsz];
        let mut dh_a = Array2::<f64>::zeros((bsz, ha));
        let mut dh_b = Array2::<f64>::zeros((bsz, hb));

        for t in (0..steps).rev() {
            let i = t / fsize;
            let ti = t as isize;
            let dl = dlogits.index_axis(Axis(0), t);
            add_atb(&mut d_wo, dl, trace_b.h.index_axis(Axis(0), t + 1));
            d_bo += &dl.sum_axis(Axis(0));
            add_ab(&mut dh_b.view_mut(), dl, self.wo.view());

            let (gx, gh, mut dprev) = trace_b.back(t, &dh_b);
            add_atb(&mut d_ub, gh.view(), trace_b.h.index_axis(Axis(0), t));
            d_bhb += &gh.sum_axis(Axis(0));
            add_ab(&mut dprev.view_mut(), gh.view(), self.ub.view());
            dh_b = dprev;
            add_atb(&mut d_wbh, gx.view(), trace_a.h.index_axis(Axis(0), t + 1));
            d_cond_b[i] += &gx;
            add_ab(&mut dh_a.view_mut(), gx.view(), self.wbh.view());

            let (gx, gh, mut dprev) = trace_a.back(t, &dh_a);
            add_atb(&mut d_ua, gh.view(), trace_a.h.index_axis(Axis(0), t));
            d_bha += &gh.sum_axis(Axis(0));
            add_ab(&mut dprev.view_mut(), gh.view(), self.ua.view());
            dh_a = dprev;
            d_cond_a[i] += &gx;

            for (b, seq) in seqs.iter().enumerate() {
                let st = info[t * bsz + b];
                let g = gx.row(b);
                let mut gin = [0.0; 3];
                for s in 0..3 {
                    let (r, f) = (st.rows[s], st.frac[s]);
                    let t0 = self.tproj[s].row(r);
                    let t1 = self.tproj[s].row(r + 1);
                    let mut acc = 0.0;
                    for k in 0..g.len() {
                        acc += g[k] * (t1[k] - t0[k]);
                    }
                    gin[s] = acc;
                    {
                        let mut d0 = d_tproj[s].row_mut(r);
                        for k in 0..g.len() {
                            d0[k] += (1.0 - f) * g[k];
                        }
                    }
                    let mut d1 = d_tproj[s].row_mut(r + 1);
                    for k in 0..g.len() {
                        d1[k] += f * g[k];
                    }
                }
                let mut dp = 0.0;
                if st.p.abs() <= 1.0 {
                    dp += gin[1] * signal::compand_derivative(st.p);
                }
                if t > 0 && st.e_in_passes {
                    de_mu[(t - 1) * bsz + b] += gin[2];
                }
                if st.e.abs() <= 1.0 {
                    dp -= de_mu[t * bsz + b] * signal::compand_derivative(st.e);
                }
                let dab = &mut da[b][i];
                for (j, v) in dab.iter_mut().enumerate() {
                    *v += dp * seq.at(ti - 1 - j as isize);
                }
            }
        }

        let mut d_waf = Array2::<f64>::zeros(self.w_af.dim());
        let mut d_wbf = Array2::<f64>::zeros(self.wbf.dim());
        let mut d_bxa = Array1::<f64>::zeros(3 * ha);
        let mut d_bxb = Array1::<f64>::zeros(3 * hb);
        let mut df = vec![vec![Vec::new(); nf]; bsz];
        for i in 0..nf {
            add_atb(&mut d_waf, d_cond_a[i].view(), fm[i].view());
            add_atb(&mut d_wbf, d_cond_b[i].view(), fm[i].view());
            d_bxa += &d_cond_a[i].sum_axis(Axis(0));
            d_bxb += &d_cond_b[i].sum_axis(Axis(0));
            let dfi = d_cond_a[i].dot(&self.w_af) + d_cond_b[i].dot(&self.wbf);
            for b in 0..bsz {
                df[b][i] = dfi.row(b).to_vec();
            }
        }
        let mut d_embed = Array2::<f64>::zeros(self.embed.dim());
        let mut d_slots = Vec::with_capacity(4);
        for s in 0..3 {
            d_slots.push(d_tproj[s].t().dot(&self.embed));
            add_ab(&mut d_embed.view_mut(), d_tproj[s].view(), self.w_slots[s].view());
        }
        d_slots.push(d_waf);
        let views: Vec<ArrayView2<f64>> = d_slots.iter().map(|a| a.view()).collect();
        let d_wa = concatenate(Axis(1), &views).expect("gru_a_w blocks");
        let d_wb = concatenate(Axis(1), &[d_wbh.view(), d_wbf.view()]).expect("gru_b_w blocks");

        let mut params: Vec<Option<Tensor>> = vec![None; ParamId::ALL.len()];
        let mut put = |id: ParamId, t: Tensor| params[id.index()] = Some(t);
        put(ParamId::Embed, to_tensor(d_embed));
        put(ParamId::GruAW, to_tensor(d_wa));
        put(ParamId::GruAU, to_tensor(d_ua));
        put(ParamId::GruABx, Tensor::vector(d_bxa.to_vec()));
        put(ParamId::GruABh, Tensor::vector(d_bha.to_vec()));
        put(ParamId::GruBW, to_tensor(d_wb));
        put(ParamId::GruBU, to_tensor(d_ub));
        put(ParamId::GruBBx, Tensor::vector(d_bxb.to_vec()));
        put(ParamId::GruBBh, Tensor::vector(d_bhb.to_vec()));
        put(ParamId::OutW, to_tensor(d_wo));
        put(ParamId::OutB, Tensor::vector(d_bo.to_vec()));

        Ok(BatchOutput {
            sums,
            n_samples: steps * bsz,
            grads: BatchGradients { params, df, da },
        })
    }
}

/// Loss terms and full parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub terms: crate::losses::LossTerms,
    /// Gradients by [`ParamId`].
    pub grads: Vec<Tensor>,
    /// Samples whose probability hit the log floor.
    pub floored: usize,
    pub n_samples: usize,
}

/// Batch objective and its gradient. The frame-rate network, LP step-up
/// and LAR regularizer run on a tape; the sample-rate network runs in the
/// fused kernel, whose `∂f` and `∂a` seed the tape's backward pass.
pub fn batch_loss_and_gradients(
    params: &ModelParams,
    seqs: &[Sequence],
    noise: Option<&[InputNoise]>,
    cfg: &LossConfig,
) -> Result<BatchResult> {
    use crate::autodiff::Tape;
    use super::reference::{build_frame, param_vars};

    cfg.validate()?;
    let dims = *params.dims();
    let mut tape = Tape::new();
    let pv = param_vars(&mut tape, params);
    let mut frame_vars = Vec::with_capacity(seqs.len());
    let mut conds = Vec::with_capacity(seqs.len());
    let mut lars = Vec::new();
    for seq in seqs {
        seq.validate(&dims)?;
        let mut fv_seq = Vec::with_capacity(seq.frames());
        let mut c_seq = Vec::with_capacity(seq.frames());
        for (fi, cep) in seq.features.iter().enumerate() {
            let fv = build_frame(&mut tape, &pv, &dims, &params.normalize(cep)?)?;
            if cfg.variant.uses_lar() {
                lars.push(losses::tape_lar(&mut tape, fv.k, &seq.k_ground[fi], 1.0)?);
            }
            c_seq.push(FrameCond {
                f: tape.value(fv.f).data().to_vec(),
                a: tape.value(fv.a).data().to_vec(),
            });
            fv_seq.push(fv);
        }
        frame_vars.push(fv_seq);
        conds.push(c_seq);
    }
    let n: usize = seqs.iter().map(|s| s.samples.len()).sum();
    let kernel = FusedKernel::new(params);
    let mut out = kernel.run(seqs, &conds, noise, cfg, 1.0 / n as f64)?;

    let mut seeds = Vec::new();
    for (b, fvs) in frame_vars.iter().enumerate() {
        for (i, fv) in fvs.iter().enumerate() {
            seeds.push((fv.f, Tensor::vector(std::mem::take(&mut out.grads.df[b][i]))));
            seeds.push((fv.a, Tensor::vector(std::mem::take(&mut out.grads.da[b][i]))));
        }
    }
    let mut lar = 0.0;
    if !lars.is_empty() {
        let nl = lars.len() as f64;
        let l = tape.concat(&lars);
        let l = tape.sum(l);
        let l = tape.scale(l, cfg.lar_weight / nl);
        lar = tape.value(l).item();
        seeds.push((l, Tensor::scalar(1.0)));
    }
    let g = tape.backward_seeded(&seeds);
    let grads = ParamId::ALL
        .iter()
        .map(|&id| {
            if id.is_frame_net() {
                g.wrt(pv[id.index()], params.get(id))
            } else {
                out.grads.params[id.index()]
                    .take()
                    .expect("sample-net gradient")
            }
        })
        .collect();

    let nf = n as f64;
    let s = out.sums;
    let compensation = s.compensation / nf;
    let terms = crate::losses::LossTerms {
        ce: s.ce / nf,
        ice: s.ice / nf,
        compensation,
        l1: if cfg.variant.uses_l1() {
            cfg.gamma * compensation
        } else {
            0.0
        },
        lar,
        total: s.objective / nf + lar,
    };
    Ok(BatchResult {
        terms,
        grads,
        floored: s.floored,
        n_samples: n,
    })
}
