//! Soft-Dice and masked cross-entropy with analytic gradients.
//!
//! Both losses operate on logits shaped `(C, V)` — class-major over a flat
//! voxel axis — and return the loss value together with its gradient w.r.t.
//! the logits. The soft-Dice term averages over the foreground classes;
//! `DICE_EPSILON` smooths numerator and denominator so empty classes
//! contribute a perfect score. The masked mean over zero selected voxels is
//! defined as 0. The functions are generic so the f64 gradient check
//! exercises the same code the f32 training path runs.

use ndarray::{Array2, ArrayView2, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DICE_EPSILON: f64 = 1e-5;

pub struct LossGrad<F> {
    pub value: F,
    /// d loss / d logits, shape (C, V).
    pub grad: Array2<F>,
}

/// Column-wise stable softmax of logits (C, V).
fn softmax_columns<F: NdFloat>(logits: &ArrayView2<F>) -> Array2<F> {
    let (c, v) = logits.dim();
    let mut probs = Array2::zeros((c, v));
    for i in 0..v {
        let mut max = logits[[0, i]];
        for k in 1..c {
            if logits[[k, i]] > max {
                max = logits[[k, i]];
            }
        }
        let mut sum = F::zero();
        for k in 0..c {
            let e = (logits[[k, i]] - max).exp();
            probs[[k, i]] = e;
            sum = sum + e;
        }
        for k in 0..c {
            probs[[k, i]] = probs[[k, i]] / sum;
        }
    }
    probs
}

fn selected(mask: Option<&[bool]>, i: usize) -> bool {
    mask.map_or(true, |m| m[i])
}

/// Cross-entropy averaged over selected voxels; 0 when nothing is selected.
pub fn masked_cross_entropy<F: NdFloat>(
    logits: ArrayView2<F>,
    labels: &[u8],
    mask: Option<&[bool]>,
) -> LossGrad<F> {
    let (c, v) = logits.dim();
    assert_eq!(labels.len(), v);
    if let Some(m) = mask {
        assert_eq!(m.len(), v);
    }
    let m_count = (0..v).filter(|&i| selected(mask, i)).count();
    let mut grad = Array2::zeros((c, v));
    if m_count == 0 {
        return LossGrad {
            value: F::zero(),
            grad,
        };
    }
    let probs = softmax_columns(&logits);
    let inv_m = F::one() / F::from(m_count).unwrap();
    let mut value = F::zero();
    for i in 0..v {
        if !selected(mask, i) {
            continue;
        }
        let y = labels[i] as usize;
        // stable log p_y = z_y - logsumexp(z)
        let mut max = logits[[0, i]];
        for k in 1..c {
            if logits[[k, i]] > max {
                max = logits[[k, i]];
            }
        }
        let mut lse = F::zero();
        for k in 0..c {
            lse = lse + (logits[[k, i]] - max).exp();
        }
        let logp = logits[[y, i]] - max - lse.ln();
        value = value - logp * inv_m;
        for k in 0..c {
            let delta = if k == y { F::one() } else { F::zero() };
            grad[[k, i]] = (probs[[k, i]] - delta) * inv_m;
        }
    }
    LossGrad { value, grad }
}

/// Soft-Dice loss over foreground classes, computed jointly over the voxel
/// axis (batch dice). 0 when nothing is selected.
pub fn masked_soft_dice<F: NdFloat>(
    logits: ArrayView2<F>,
    labels: &[u8],
    mask: Option<&[bool]>,
) -> LossGrad<F> {
    let (c, v) = logits.dim();
    assert_eq!(labels.len(), v);
    if let Some(m) = mask {
        assert_eq!(m.len(), v);
    }
    let probs = softmax_columns(&logits);
    let eps = F::from(DICE_EPSILON).unwrap();
    let two = F::from(2.0).unwrap();
    let n_fg = F::from(c - 1).unwrap();

    let mut num = vec![F::zero(); c];
    let mut den = vec![F::zero(); c];
    for i in 0..v {
        if !selected(mask, i) {
            continue;
        }
        let y = labels[i] as usize;
        for cc in 1..c {
            let p = probs[[cc, i]];
            let t = if y == cc { F::one() } else { F::zero() };
            num[cc] = num[cc] + p * t;
            den[cc] = den[cc] + p + t;
        }
    }
    let mut dice_sum = F::zero();
    for cc in 1..c {
        dice_sum = dice_sum + (two * num[cc] + eps) / (den[cc] + eps);
    }
    let value = F::one() - dice_sum / n_fg;

    // d loss / d p, then chain through the softmax jacobian
    let mut gp = Array2::zeros((c, v));
    for i in 0..v {
        if !selected(mask, i) {
            continue;
        }
        let y = labels[i] as usize;
        for cc in 1..c {
            let t = if y == cc { F::one() } else { F::zero() };
            let d = den[cc] + eps;
            let ddice_dp = (two * t * d - (two * num[cc] + eps)) / (d * d);
            gp[[cc, i]] = -ddice_dp / n_fg;
        }
    }
    let mut grad = Array2::zeros((c, v));
    for i in 0..v {
        let mut dot = F::zero();
        for cc in 0..c {
            dot = dot + gp[[cc, i]] * probs[[cc, i]];
        }
        for k in 0..c {
            grad[[k, i]] = probs[[k, i]] * (gp[[k, i]] - dot);
        }
    }
    LossGrad { value, grad }
}

/// Weighted Dice + cross-entropy combination used for training.
pub fn dice_ce_loss<F: NdFloat>(
    logits: ArrayView2<F>,
    labels: &[u8],
    mask: Option<&[bool]>,
    w_dice: F,
    w_ce: F,
) -> LossGrad<F> {
    let d = masked_soft_dice(logits, labels, mask);
    let c = masked_cross_entropy(logits, labels, mask);
    LossGrad {
        value: w_dice * d.value + w_ce * c.value,
        grad: d.grad.mapv(|g| g * w_dice) + &c.grad.mapv(|g| g * w_ce),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradcheckEntry {
    pub loss: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "gradient check (seed {})", self.seed)?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<24} max rel err {:.3e} (tol {:.1e}) {}",
                e.loss,
                e.max_rel_err,
                e.tolerance,
                if e.pass { "pass" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

const GRADCHECK_TOL: f64 = 1e-3;
const FD_STEP: f64 = 1e-4;

fn max_rel_err_fd(
    loss_fn: &dyn Fn(ArrayView2<f64>) -> LossGrad<f64>,
    logits: &Array2<f64>,
) -> f64 {
    let analytic = loss_fn(logits.view()).grad;
    let mut worst = 0.0f64;
    let mut probe = logits.clone();
    for idx in 0..logits.len() {
        let base = probe.as_slice_mut().unwrap()[idx];
        probe.as_slice_mut().unwrap()[idx] = base + FD_STEP;
        let lp = loss_fn(probe.view()).value;
        probe.as_slice_mut().unwrap()[idx] = base - FD_STEP;
        let lm = loss_fn(probe.view()).value;
        probe.as_slice_mut().unwrap()[idx] = base;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = analytic.as_slice().unwrap()[idx];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    worst
}

/// Verify the analytic loss gradients against central finite differences on
/// tiny random tensors (3 classes, 4x4x2 voxels).
pub fn gradcheck_losses(rng_seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (c, v) = (3usize, 4 * 4 * 2);
    let logits = Array2::from_shape_fn((c, v), |_| {
        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    let labels: Vec<u8> = (0..v).map(|_| rng.gen_range(0..3) as u8).collect();
    let mut mask: Vec<bool> = (0..v).map(|_| rng.gen::<f64>() < 0.7).collect();
    // keep both populations non-empty so masking is actually exercised
    mask[0] = true;
    mask[1] = false;

    let dice_masked = {
        let labels = labels.clone();
        let mask = mask.clone();
        move |l: ArrayView2<f64>| masked_soft_dice(l, &labels, Some(&mask))
    };
    let ce_masked = {
        let labels = labels.clone();
        let mask = mask.clone();
        move |l: ArrayView2<f64>| masked_cross_entropy(l, &labels, Some(&mask))
    };
    let combined = {
        let labels = labels.clone();
        let mask = mask.clone();
        move |l: ArrayView2<f64>| dice_ce_loss(l, &labels, Some(&mask), 1.0, 1.0)
    };

    let mut entries = Vec::new();
    for (name, f) in [
        (
            "soft_dice",
            &dice_masked as &dyn Fn(ArrayView2<f64>) -> LossGrad<f64>,
        ),
        ("masked_cross_entropy", &ce_masked),
        ("dice_ce_combined", &combined),
    ] {
        let err = max_rel_err_fd(f, &logits);
        entries.push(GradcheckEntry {
            loss: name.to_string(),
            max_rel_err: err,
            tolerance: GRADCHECK_TOL,
            pass: err <= GRADCHECK_TOL,
        });
    }
    GradcheckReport {
        seed: rng_seed,
        entries,
    }
}
