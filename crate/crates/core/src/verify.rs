//! Gradient-verification suite over every tape primitive and the composed
//! per-variant training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, grad_check_extrapolated, gru_cell, softmax, GradCheckReport, GruVars, Tape, Tensor, Var,
    EMBED_ROWS, N_CLASSES,
};
use crate::error::Result;
use crate::losses::{LossConfig, LossVariant, PROB_FLOOR};
use crate::model::{teacher_forced_pass, ModelDims, ModelParams, Sequence};

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    /// Random points per primitive check.
    pub points: usize,
    pub seed: u64,
    /// Include the composed-loss checks on the micro model.
    pub full_model: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            points: 100,
            seed: 0,
            full_model: true,
        }
    }
}

/// Aggregated result of one named check over all its points.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub points: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub failures: usize,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            points: 0,
            tolerance,
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
            failures: 0,
        }
    }

    fn absorb(&mut self, r: &GradCheckReport) {
        self.points += 1;
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error);
        self.checked += r.checked;
        self.skipped += r.skipped;
        self.failures += r.failing_indices.len();
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-s..s)).collect()
}

/// Uniform draw at least `guard` away from every integer.
fn guarded(rng: &mut ChaCha8Rng, lo: f64, hi: f64, guard: f64) -> f64 {
    loop {
        let x: f64 = rng.gen_range(lo..hi);
        let fr = x - x.floor();
        if fr > guard && fr < 1.0 - guard {
            return x;
        }
    }
}

/// Weighted sum with fixed random weights.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let n = tape.value(v).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.leaf(Tensor::vector(rand_vec(&mut rng, n, 1.0)));
    let m = tape.mul(v, w)?;
    Ok(tape.sum(m))
}

/// An AR(2)-like toy sequence with random features and target RCs.
pub fn toy_sequence(rng: &mut impl Rng, dims: &ModelDims, frames: usize, frame_size: usize) -> Sequence {
    let m = dims.lpc_order;
    let total = m + frames * frame_size;
    let mut x = vec![0.0f64; total];
    for t in 0..total {
        let p1 = if t >= 1 { x[t - 1] } else { 0.0 };
        let p2 = if t >= 2 { x[t - 2] } else { 0.0 };
        x[t] = 1.3 * p1 - 0.6 * p2 + rng.gen_range(-0.05..0.05);
    }
    Sequence {
        features: (0..frames)
            .map(|_| (0..dims.n_features).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        k_ground: (0..frames)
            .map(|_| (0..m).map(|_| rng.gen_range(-0.6..0.6)).collect())
            .collect(),
        history: x[..m].to_vec(),
        samples: x[m..].to_vec(),
    }
}

/// Runs every check; `progress` sees each entry as it completes.
pub fn gradient_suite(cfg: SuiteConfig, progress: &mut dyn FnMut(&SuiteEntry)) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    let mut finish = |e: SuiteEntry, out: &mut Vec<SuiteEntry>| {
        progress(&e);
        out.push(e);
    };

    let mut e = SuiteEntry::new("affine/tanh/sigmoid/mul/sub/concat/softmax/slice/scale/sum", 1e-6);
    for i in 0..cfg.points {
        let pt = vec![
            Tensor::vector(rand_vec(&mut rng, 5, 1.0)),
            Tensor::vector(rand_vec(&mut rng, 5, 2.0)),
            Tensor::matrix(4, 5, rand_vec(&mut rng, 20, 0.5))?,
            Tensor::vector(rand_vec(&mut rng, 4, 1.0)),
        ];
        let seed = i as u64;
        let r = grad_check(
            |t, v| {
                let a = t.affine(v[0], v[2], v[3])?;
                let th = t.tanh(a);
                let sg = t.sigmoid(v[1]);
                let m = t.mul(sg, v[0])?;
                let d = t.sub(m, v[1])?;
                let c = t.concat(&[th, d]);
                let sm = t.softmax(c);
                let sl = t.slice(sm, 2, 5)?;
                let sc = t.scale(sl, 3.0);
                let all = t.concat(&[th, sg, m, d, sm, sc]);
                project(t, all, seed)
            },
            &pt,
            1e-5,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    let mut e = SuiteEntry::new("abs/clamp/log_floor", 1e-4);
    for i in 0..cfg.points {
        let mut x = rand_vec(&mut rng, 6, 1.5);
        // Guard band around the kinks at 0 and ±1.
        for v in &mut x {
            if v.abs() < 1e-3 || (v.abs() - 1.0).abs() < 1e-3 {
                *v = 0.5;
            }
        }
        let seed = i as u64;
        let r = grad_check(
            |t, v| {
                let a = t.abs(v[0]);
                let c = t.clamp(v[0], -1.0, 1.0);
                let l = t.log_floor(a, PROB_FLOOR);
                let s = t.add(l, c)?;
                project(t, s, seed)
            },
            &[Tensor::vector(x)],
            1e-5,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    let mut e = SuiteEntry::new("levinson/lar", 1e-6);
    for i in 0..cfg.points {
        let k = Tensor::vector(rand_vec(&mut rng, 16, 0.9));
        let seed = i as u64;
        let r = grad_check(
            |t, v| {
                let a = t.levinson(v[0]);
                let g = t.lar(v[0]);
                let c = t.concat(&[a, g]);
                project(t, c, seed)
            },
            &[k],
            1e-5,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    // Bilinear: central differences are exact, a large step only cuts rounding.
    let mut e = SuiteEntry::new("predict", 1e-8);
    for _ in 0..cfg.points {
        let pt = [
            Tensor::vector(rand_vec(&mut rng, 16, 1.0)),
            Tensor::vector(rand_vec(&mut rng, 16, 1.0)),
        ];
        let r = grad_check(|t, v| t.predict(v[0], v[1]), &pt, 1e-2, e.tolerance)?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    // Curvature near |x| = 1e-3 is about 255², so the step stays small.
    let mut e = SuiteEntry::new("mu_compand", 1e-6);
    for _ in 0..cfg.points {
        let x = guarded_from_zero(&mut rng);
        let r = grad_check(
            |t, v| {
                let u = t.mu_compand(v[0])?;
                Ok(t.sum(u))
            },
            &[Tensor::vector(vec![x])],
            1e-6,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    let mut e = SuiteEntry::new("embed_interp", 1e-6);
    for i in 0..cfg.points {
        let table = Tensor::matrix(EMBED_ROWS, 3, rand_vec(&mut rng, EMBED_ROWS * 3, 1.0))?;
        let x = guarded(&mut rng, -127.9, 127.9, 1e-3);
        let seed = i as u64;
        let r = grad_check(
            |t, v| {
                let y = t.embed_interp(v[0], v[1])?;
                project(t, y, seed)
            },
            &[table, Tensor::scalar(x)],
            1e-5,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    // log P has third derivative 2/P³; the step is sized for small P.
    let mut e = SuiteEntry::new("interp_pick/pick", 1e-6);
    for _ in 0..cfg.points {
        let probs = Tensor::vector(softmax(&rand_vec(&mut rng, N_CLASSES, 2.0)));
        let x = guarded(&mut rng, -127.9, 126.9, 1e-3);
        let idx = rng.gen_range(0..N_CLASSES);
        let r = grad_check(
            |t, v| {
                let p = t.interp_pick(v[0], v[1])?;
                let q = t.pick(v[0], idx)?;
                let s = t.concat(&[p, q]);
                let l = t.log_floor(s, PROB_FLOOR);
                Ok(t.sum(l))
            },
            &[probs, Tensor::scalar(x)],
            1e-7,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    let mut e = SuiteEntry::new("gru_cell", 1e-4);
    for i in 0..cfg.points {
        let (ni, nh) = (5, 4);
        let pt = vec![
            Tensor::vector(rand_vec(&mut rng, ni, 1.0)),
            Tensor::vector(rand_vec(&mut rng, nh, 1.0)),
            Tensor::matrix(3 * nh, ni, rand_vec(&mut rng, 3 * nh * ni, 0.5))?,
            Tensor::matrix(3 * nh, nh, rand_vec(&mut rng, 3 * nh * nh, 0.5))?,
            Tensor::vector(rand_vec(&mut rng, 3 * nh, 0.5)),
            Tensor::vector(rand_vec(&mut rng, 3 * nh, 0.5)),
        ];
        let seed = i as u64;
        let r = grad_check(
            |t, v| {
                let p = GruVars {
                    w: v[2],
                    u: v[3],
                    bx: v[4],
                    bh: v[5],
                };
                let h = gru_cell(t, v[0], v[1], &p)?;
                project(t, h, seed)
            },
            &pt,
            1e-5,
            e.tolerance,
        )?;
        e.absorb(&r);
    }
    finish(e, &mut out);

    if cfg.full_model {
        let dims = ModelDims::micro();
        let params = ModelParams::init(dims, cfg.seed.wrapping_add(4))?;
        let seqs = vec![toy_sequence(&mut rng, &dims, 3, 12)];
        let point = params.tensors().to_vec();
        for variant in LossVariant::ALL {
            let loss = LossConfig::new(variant);
            let mut e = SuiteEntry::new(&format!("full model loss {}", variant.name()), 1e-4);
            let r = grad_check_extrapolated(
                |t, v| Ok(teacher_forced_pass(t, &params, v, &seqs, None, &loss)?.loss),
                &point,
                1e-2,
                e.tolerance,
            )?;
            e.absorb(&r);
            finish(e, &mut out);
        }
    }
    Ok(out)
}

fn guarded_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.gen_range(-0.999..0.999);
        if x.abs() >= 1e-3 {
            return x;
        }
    }
}
