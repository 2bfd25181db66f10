//! Training objectives over 256-way μ-law excitation distributions.
//!
//! Each objective exists twice: as plain functions over slices, used for
//! evaluation and as test oracles, and as tape builders used in training.
//! The tape builders return per-sample or per-frame terms; callers average.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, N_CLASSES};
use crate::error::{Error, Result};
use crate::lp;
use crate::signal::{self, MU, U_MAX};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// `log(1+μ)/U_max`, the per-unit weight of the compensation term.
pub fn compensation_scale() -> f64 {
    (1.0 + MU).ln() / U_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossVariant {
    L1,
    #[serde(rename = "LAR")]
    Lar,
    #[serde(rename = "LAR_CE")]
    LarCe,
    #[serde(rename = "L1_plus_LAR")]
    L1PlusLar,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::L1,
        LossVariant::Lar,
        LossVariant::LarCe,
        LossVariant::L1PlusLar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::L1 => "L1",
            LossVariant::Lar => "LAR",
            LossVariant::LarCe => "LAR_CE",
            LossVariant::L1PlusLar => "L1_plus_LAR",
        }
    }

    pub fn uses_lar(self) -> bool {
        matches!(self, LossVariant::Lar | LossVariant::LarCe | LossVariant::L1PlusLar)
    }

    pub fn uses_l1(self) -> bool {
        matches!(self, LossVariant::L1 | LossVariant::L1PlusLar)
    }

    /// Whether the likelihood term is the plain cross-entropy on rounded
    /// targets rather than the compensated interpolated loss.
    pub fn uses_ce(self) -> bool {
        self == LossVariant::LarCe
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown loss variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub gamma: f64,
    pub lar_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::L1PlusLar,
            gamma: 1.0,
            lar_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lar_weight >= 0.0) || !self.lar_weight.is_finite() {
            return Err(Error::Config(format!(
                "lar_weight must be >= 0, got {}",
                self.lar_weight
            )));
        }
        Ok(())
    }
}

/// Class index of an integer μ-law excitation; 128 shares the top class.
pub fn class_index(target: i32) -> usize {
    (target + U_MAX as i32).clamp(0, N_CLASSES as i32 - 1) as usize
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.len() != N_CLASSES {
        return Err(Error::ShapeMismatch {
            op: "loss",
            detail: format!("{} classes, expected {N_CLASSES}", probs.len()),
        });
    }
    Ok(())
}

fn check_batch(n_probs: usize, n_targets: usize) -> Result<()> {
    if n_probs != n_targets {
        return Err(Error::LengthMismatch {
            expected: n_probs,
            actual: n_targets,
        });
    }
    if n_probs == 0 {
        return Err(Error::Domain("empty batch".into()));
    }
    Ok(())
}

fn check_target(e: f64) -> Result<()> {
    if !(e.abs() <= U_MAX) {
        return Err(Error::Domain(format!("target {e} outside [-128, 128]")));
    }
    Ok(())
}

/// Interpolated probability `(1−f)·P(⌊e⌋) + f·P(⌊e⌋+1)`.
pub fn interp_prob(probs: &[f64], e: f64) -> f64 {
    let j = e.floor();
    let f = e - j;
    (1.0 - f) * probs[class_index(j as i32)] + f * probs[class_index(j as i32 + 1)]
}

/// Mean `−log P(target)` over samples.
pub fn ce_loss<P: AsRef<[f64]>>(probs: &[P], targets: &[i32]) -> Result<f64> {
    check_batch(probs.len(), targets.len())?;
    let mut sum = 0.0;
    for (p, &t) in probs.iter().zip(targets) {
        let p = p.as_ref();
        check_probs(p)?;
        if !(-128..=128).contains(&t) {
            return Err(Error::Domain(format!("target {t} outside [-128, 128]")));
        }
        sum -= p[class_index(t)].max(PROB_FLOOR).ln();
    }
    Ok(sum / probs.len() as f64)
}

/// Mean `−log P⁽ⁱ⁾(e)` with the interpolated probability.
pub fn ice_loss<P: AsRef<[f64]>>(probs: &[P], targets: &[f64]) -> Result<f64> {
    check_batch(probs.len(), targets.len())?;
    let mut sum = 0.0;
    for (p, &e) in probs.iter().zip(targets) {
        let p = p.as_ref();
        check_probs(p)?;
        check_target(e)?;
        sum -= interp_prob(p, e).max(PROB_FLOOR).ln();
    }
    Ok(sum / probs.len() as f64)
}

/// Mean `|e|·log(1+μ)/U_max`.
pub fn compensation_term(targets: &[f64]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    compensation_scale() * targets.iter().map(|e| e.abs()).sum::<f64>() / targets.len() as f64
}

/// Interpolated cross-entropy plus the μ-law compensation term.
pub fn compensated_loss<P: AsRef<[f64]>>(probs: &[P], targets: &[f64]) -> Result<f64> {
    Ok(ice_loss(probs, targets)? + compensation_term(targets))
}

/// `γ` times the compensation term.
pub fn l1_reg(targets: &[f64], gamma: f64) -> f64 {
    gamma * compensation_term(targets)
}

/// `weight` × mean over frames of the squared LAR distance.
pub fn lar_reg<K: AsRef<[f64]>>(k: &[K], k_ground: &[K], weight: f64) -> Result<f64> {
    if k.len() != k_ground.len() {
        return Err(Error::LengthMismatch {
            expected: k.len(),
            actual: k_ground.len(),
        });
    }
    if k.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (a, b) in k.iter().zip(k_ground) {
        sum += lp::lar_distance(
            &lp::ReflectionCoeffs(a.as_ref().to_vec()),
            &lp::ReflectionCoeffs(b.as_ref().to_vec()),
        )?;
    }
    Ok(weight * sum / k.len() as f64)
}

/// Loss components of one batch. `total` is the optimized objective; the
/// other fields are reported whether or not the variant uses them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    pub ice: f64,
    /// Mean `|e|·log(1+μ)/U_max`.
    pub compensation: f64,
    /// `γ`·compensation, counted only for L1 variants.
    pub l1: f64,
    /// Weighted LAR regularizer, counted only for LAR variants.
    pub lar: f64,
    pub total: f64,
}

impl LossTerms {
    /// ICE plus the compensation term, tracked for every variant.
    pub fn compensated(&self) -> f64 {
        self.ice + self.compensation
    }
}

/// Every term of the configured objective.
///
/// `targets` are the real-valued μ-law excitations; the cross-entropy term
/// uses them rounded half away from zero.
pub fn total_loss<P: AsRef<[f64]>, K: AsRef<[f64]>>(
    cfg: &LossConfig,
    probs: &[P],
    targets: &[f64],
    k: &[K],
    k_ground: &[K],
) -> Result<LossTerms> {
    cfg.validate()?;
    let rounded: Vec<i32> = targets
        .iter()
        .map(|&e| signal::round_half_away(e) as i32)
        .collect();
    let ce = ce_loss(probs, &rounded)?;
    let ice = ice_loss(probs, targets)?;
    let compensation = compensation_term(targets);
    let l1 = if cfg.variant.uses_l1() {
        cfg.gamma * compensation
    } else {
        0.0
    };
    let lar = if cfg.variant.uses_lar() {
        lar_reg(k, k_ground, cfg.lar_weight)?
    } else {
        0.0
    };
    let likelihood = if cfg.variant.uses_ce() {
        ce
    } else {
        ice + compensation
    };
    Ok(LossTerms {
        ce,
        ice,
        compensation,
        l1,
        lar,
        total: likelihood + l1 + lar,
    })
}

/// Per-sample loss terms as tape variables.
#[derive(Debug, Clone, Copy)]
pub struct SampleTerms {
    /// Objective contribution of this sample (likelihood plus L1).
    pub objective: Var,
    pub ce: Var,
    pub ice: Var,
    pub compensation: Var,
}

/// `−log P(⌊e⌉)`. The rounding is recorded as a branch and carries no
/// gradient into `target`.
pub fn tape_ce(tape: &mut Tape, probs: Var, target: Var) -> Result<Var> {
    let e = tape.value(target).item();
    check_target(e)?;
    let t = signal::round_half_away(e) as i32;
    tape.note_branch(t as i64);
    let p = tape.pick(probs, class_index(t))?;
    let l = tape.log_floor(p, PROB_FLOOR);
    Ok(tape.scale(l, -1.0))
}

/// `−log P⁽ⁱ⁾(e)`, differentiable in `probs` and `target`.
pub fn tape_ice(tape: &mut Tape, probs: Var, target: Var) -> Result<Var> {
    let p = tape.interp_pick(probs, target)?;
    let l = tape.log_floor(p, PROB_FLOOR);
    Ok(tape.scale(l, -1.0))
}

/// `|e|·log(1+μ)/U_max`.
pub fn tape_compensation(tape: &mut Tape, target: Var) -> Var {
    let a = tape.abs(target);
    let s = tape.sum(a);
    tape.scale(s, compensation_scale())
}

/// Squared LAR distance between predicted and ground-truth RCs of a frame,
/// scaled by `weight`.
pub fn tape_lar(tape: &mut Tape, k: Var, k_ground: &[f64], weight: f64) -> Result<Var> {
    if tape.value(k).len() != k_ground.len() {
        return Err(Error::LengthMismatch {
            expected: tape.value(k).len(),
            actual: k_ground.len(),
        });
    }
    let g = tape.lar(k);
    let gt = lp::rc_to_lar(&lp::ReflectionCoeffs(k_ground.to_vec()))?;
    let gt = tape.leaf(crate::autodiff::Tensor::vector(gt.0));
    let d = tape.sub(g, gt)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, weight))
}

/// Builds the per-sample terms for one excitation target.
pub fn tape_sample(tape: &mut Tape, cfg: &LossConfig, probs: Var, target: Var) -> Result<SampleTerms> {
    let ce = tape_ce(tape, probs, target)?;
    let ice = tape_ice(tape, probs, target)?;
    let compensation = tape_compensation(tape, target);
    let likelihood = if cfg.variant.uses_ce() {
        ce
    } else {
        tape.add(ice, compensation)?
    };
    let objective = if cfg.variant.uses_l1() {
        let l1 = tape.scale(compensation, cfg.gamma);
        tape.add(likelihood, l1)?
    } else {
        likelihood
    };
    Ok(SampleTerms {
        objective,
        ce,
        ice,
        compensation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, softmax, Tensor};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform() -> Vec<f64> {
        vec![1.0 / 256.0; N_CLASSES]
    }

    fn random_probs(rng: &mut ChaCha8Rng) -> Vec<f64> {
        let logits: Vec<f64> = (0..N_CLASSES).map(|_| rng.gen_range(-3.0..3.0)).collect();
        softmax(&logits)
    }

    #[test]
    fn ce_examples() {
        let ln256 = 256f64.ln();
        assert_abs_diff_eq!(ce_loss(&[uniform()], &[5]).unwrap(), ln256, epsilon = 1e-12);
        assert_abs_diff_eq!(ln256, 5.5452, epsilon = 1e-4);
        let mut one_hot = vec![0.0; N_CLASSES];
        one_hot[class_index(-7)] = 1.0;
        assert_eq!(ce_loss(&[one_hot], &[-7]).unwrap(), 0.0);
        let mut p = vec![0.75 / 255.0; N_CLASSES];
        p[class_index(3)] = 0.25;
        assert_abs_diff_eq!(ce_loss(&[p], &[3]).unwrap(), 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn ce_floor_on_zero_probability() {
        let mut p = vec![0.0; N_CLASSES];
        p[0] = 1.0;
        assert_abs_diff_eq!(ce_loss(&[p], &[10]).unwrap(), -(1e-12f64.ln()), epsilon = 1e-9);
    }

    #[test]
    fn ice_equals_ce_on_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let probs: Vec<Vec<f64>> = (0..8).map(|_| random_probs(&mut rng)).collect();
            let t: Vec<i32> = (0..8).map(|_| rng.gen_range(-128..=128)).collect();
            let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
            assert_eq!(ice_loss(&probs, &tf).unwrap(), ce_loss(&probs, &t).unwrap());
        }
    }

    #[test]
    fn ice_uniform_any_target() {
        for e in [-127.3, 0.5, 12.25, 127.9, 128.0] {
            assert_abs_diff_eq!(ice_loss(&[uniform()], &[e]).unwrap(), 256f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn ice_target_derivative_on_small_example() {
        // Mass on four neighbouring bins around the target.
        let mut p = vec![0.0; N_CLASSES];
        for (i, v) in [0.1, 0.4, 0.3, 0.2].iter().enumerate() {
            p[class_index(i as i32)] = *v;
        }
        let e = 1.3;
        let pi = 0.7 * 0.4 + 0.3 * 0.3;
        let want = -(0.3 - 0.4) / pi;
        let mut t = Tape::new();
        let pv = t.leaf(Tensor::vector(p.clone()));
        let ev = t.leaf(Tensor::scalar(e));
        let l = tape_ice(&mut t, pv, ev).unwrap();
        let g = t.backward(l).get(ev).unwrap().item();
        assert_abs_diff_eq!(g, want, epsilon = 1e-14);
        let r = grad_check(
            |t, v| tape_ice(t, v[0], v[1]),
            &[Tensor::vector(p), Tensor::scalar(e)],
            1e-6,
            1e-8,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn compensated_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_probs(&mut rng);
        assert_eq!(
            compensated_loss(&[p.clone()], &[0.0]).unwrap(),
            ice_loss(&[p], &[0.0]).unwrap()
        );
        let ln256 = 256f64.ln();
        let v = compensated_loss(&[uniform()], &[64.0]).unwrap();
        assert_abs_diff_eq!(v, 1.5 * ln256, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 8.3178, epsilon = 1e-4);
    }

    /// Direct form: `−log(P⁽ⁱ⁾(e) / (dU⁻¹/du)(e))` with the closed-form
    /// derivative of μ-law expansion.
    fn direct_compensated(probs: &[Vec<f64>], targets: &[f64]) -> f64 {
        let mut s = 0.0;
        for (p, &e) in probs.iter().zip(targets) {
            let du = (256f64).ln() / (255.0 * 128.0) * 256f64.powf(e.abs() / 128.0);
            s -= (interp_prob(p, e) / du).ln();
        }
        s / probs.len() as f64
    }

    #[test]
    fn compensated_differs_from_direct_form_by_a_constant() {
        let c = -((256f64).ln() / (255.0 * 128.0)).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let probs: Vec<Vec<f64>> = (0..n).map(|_| random_probs(&mut rng)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.gen_range(-128.0..128.0)).collect();
            let diff = compensated_loss(&probs, &t).unwrap() - direct_compensated(&probs, &t);
            assert_abs_diff_eq!(diff, c, epsilon = 1e-10);
        }
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1_reg(&[0.0, 0.0], 1.0), 0.0);
        assert_eq!(l1_reg(&[5.0, -7.0], 0.0), 0.0);
        assert_abs_diff_eq!(l1_reg(&[64.0, -64.0], 1.0), 2.7726, epsilon = 1e-4);
    }

    #[test]
    fn lar_examples() {
        let k = vec![vec![0.3, -0.2]];
        assert_eq!(lar_reg(&k, &k, 1.0).unwrap(), 0.0);
        let v = lar_reg(&[vec![0.5]], &[vec![0.0]], 1.0).unwrap();
        assert_abs_diff_eq!(v, (1f64 / 3.0).ln().powi(2), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.2069, epsilon = 1e-4);
    }

    #[test]
    fn lar_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let k: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let kg: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let r = grad_check(
                |t, v| tape_lar(t, v[0], &kg, 1.0),
                &[Tensor::vector(k.clone())],
                1e-5,
                1e-6,
            )
            .unwrap();
            assert!(r.passed(), "{r:?}");
            let mut t = Tape::new();
            let kv = t.leaf(Tensor::vector(k.clone()));
            let l = tape_lar(&mut t, kv, &kg, 1.0).unwrap();
            assert_abs_diff_eq!(
                t.value(l).item(),
                lar_reg(&[k.clone()], &[kg.clone()], 1.0).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    fn totals(variant: LossVariant, probs: &[Vec<f64>], t: &[f64], k: &[Vec<f64>], kg: &[Vec<f64>]) -> LossTerms {
        total_loss(&LossConfig::new(variant), probs, t, k, kg).unwrap()
    }

    #[test]
    fn variant_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let probs: Vec<Vec<f64>> = (0..4).map(|_| random_probs(&mut rng)).collect();
        let t = vec![3.2, -17.8, 0.4, 100.0];
        let k = vec![vec![0.2, 0.1], vec![-0.4, 0.3]];
        let kg = vec![vec![0.1, 0.1], vec![-0.5, 0.2]];
        let comp = compensated_loss(&probs, &t).unwrap();
        let same = totals(LossVariant::Lar, &probs, &t, &k, &k);
        assert_eq!(same.total, comp);
        let l1 = totals(LossVariant::L1, &probs, &t, &k, &kg);
        assert_abs_diff_eq!(
            l1.total,
            ice_loss(&probs, &t).unwrap() + 2.0 * compensation_term(&t),
            epsilon = 1e-12
        );
        let lar = lar_reg(&k, &kg, 1.0).unwrap();
        let lce = totals(LossVariant::LarCe, &probs, &t, &k, &kg);
        let rounded = [3, -18, 0, 100];
        assert_abs_diff_eq!(lce.total, ce_loss(&probs, &rounded).unwrap() + lar, epsilon = 1e-12);
        let both = totals(LossVariant::L1PlusLar, &probs, &t, &k, &kg);
        assert_abs_diff_eq!(both.total, l1.total + lar, epsilon = 1e-12);
        for v in LossVariant::ALL {
            assert!(totals(v, &probs, &t, &k, &kg).total >= 0.0);
        }
    }

    #[test]
    fn tape_sample_matches_plain_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for v in LossVariant::ALL {
            let cfg = LossConfig::new(v);
            let p = random_probs(&mut rng);
            let e = rng.gen_range(-128.0..128.0);
            let mut t = Tape::new();
            let pv = t.leaf(Tensor::vector(p.clone()));
            let ev = t.leaf(Tensor::scalar(e));
            let terms = tape_sample(&mut t, &cfg, pv, ev).unwrap();
            let plain = total_loss::<_, Vec<f64>>(&cfg, &[p], &[e], &[], &[]).unwrap();
            assert_abs_diff_eq!(t.value(terms.objective).item(), plain.total, epsilon = 1e-12);
            assert_abs_diff_eq!(t.value(terms.ice).item(), plain.ice, epsilon = 1e-12);
            assert_abs_diff_eq!(t.value(terms.ce).item(), plain.ce, epsilon = 1e-12);
        }
    }

    #[test]
    fn ce_variant_blocks_target_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = random_probs(&mut rng);
        let mut t = Tape::new();
        let pv = t.leaf(Tensor::vector(p));
        let ev = t.leaf(Tensor::scalar(10.3));
        let terms = tape_sample(&mut t, &LossConfig::new(LossVariant::LarCe), pv, ev).unwrap();
        assert!(t.backward(terms.objective).get(ev).is_none());
    }

    #[test]
    fn smoothing_continuity_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let eps = 1e-6;
        for _ in 0..100 {
            let p = random_probs(&mut rng);
            let t = rng.gen_range(-128..128);
            let s: Vec<f64> = p.iter().map(|v| (v + eps) / (1.0 + 256.0 * eps)).collect();
            // Smoothing can only raise the loss by the renormalization
            // factor; it lowers it without bound on near-zero targets.
            let d = ce_loss(&[s], &[t]).unwrap() - ce_loss(&[p], &[t]).unwrap();
            assert!(d <= (1.0 + 256.0 * eps).ln() + 1e-15);
        }
    }

    #[test]
    fn config_validation_and_names() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            gamma: -1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
        for v in LossVariant::ALL {
            assert_eq!(v.name().parse::<LossVariant>().unwrap(), v);
            let js = serde_json::to_string(&v).unwrap();
            assert_eq!(js, format!("\"{}\"", v.name()));
        }
        assert!("nope".parse::<LossVariant>().is_err());
    }

    #[test]
    fn batch_errors() {
        assert!(ce_loss(&[uniform()], &[1, 2]).is_err());
        assert!(ice_loss(&[uniform()], &[200.0]).is_err());
        assert!(ice_loss(&[vec![0.5, 0.5]], &[0.0]).is_err());
        assert!(ice_loss::<Vec<f64>>(&[], &[]).is_err());
    }
}
