//! Supervised volumetric segmentation: 3-level 3D U-Net and residual-encoder
//! variant, Dice+CE training with optional ignore masking, and patch-wise
//! inference with overlap averaging.

pub mod losses;

pub use losses::{gradcheck_losses, GradcheckEntry, GradcheckReport};

use crate::data::{LabelMap, Volume, N_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{he_normal, uniform_small, zeros, NamedTensor, NodeId, SgdMomentum, Tape};
use crate::selftrain::PseudoLabel;
use ndarray::{Array2, Array3, Array4, Array5, ArrayD, Ix5};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegArch {
    Unet,
    Resunet,
}

impl std::fmt::Display for SegArch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SegArch::Unet => write!(f, "unet"),
            SegArch::Resunet => write!(f, "resunet"),
        }
    }
}

/// Architecture descriptor; round-trips through checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegArchDescriptor {
    pub kind: SegArch,
    pub base_width: usize,
    pub n_classes: usize,
    pub patch_size: (usize, usize, usize),
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f32,
    pub lr: f32,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    pub arch: SegArchDescriptor,
    pub params: Vec<NamedTensor>,
    pub train_log: Vec<EpochRecord>,
}

/// Training labels: ground truth or pseudo-labels with an ignore mask.
#[derive(Debug, Clone)]
pub enum SegTarget {
    Truth(LabelMap),
    Pseudo(PseudoLabel),
}

impl SegTarget {
    pub fn labels(&self) -> &Array3<u8> {
        match self {
            SegTarget::Truth(l) => &l.labels,
            SegTarget::Pseudo(p) => &p.labels,
        }
    }

    pub fn ignore(&self) -> Option<&Array3<bool>> {
        match self {
            SegTarget::Truth(_) => None,
            SegTarget::Pseudo(p) => Some(&p.ignore),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegTrainConfig {
    pub arch: SegArch,
    pub base_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: (usize, usize, usize),
    /// Random patches drawn per case per epoch (half are centered on
    /// foreground when any exists).
    pub patches_per_case: usize,
    pub lr: f32,
    pub w_dice: f32,
    pub w_ce: f32,
    pub rng_seed: u64,
    pub ignore_masking: bool,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            arch: SegArch::Unet,
            base_width: 8,
            epochs: 30,
            batch_size: 2,
            patch_size: (16, 16, 8),
            patches_per_case: 2,
            lr: 0.08,
            w_dice: 1.0,
            w_ce: 1.0,
            rng_seed: 0,
            ignore_masking: false,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::validation(format!("lr {} must be > 0", self.lr)));
        }
        if self.batch_size < 1 || self.patches_per_case < 1 {
            return Err(Error::validation(
                "batch_size and patches_per_case must be >= 1",
            ));
        }
        let (pw, ph, pd) = self.patch_size;
        for d in [pw, ph, pd] {
            if d < 4 || d % 4 != 0 {
                return Err(Error::validation(format!(
                    "patch size {:?} must have every dim a positive multiple of 4",
                    self.patch_size
                )));
            }
        }
        if self.base_width < 2 {
            return Err(Error::validation("base_width must be >= 2"));
        }
        Ok(())
    }
}

/// Per-voxel class probabilities, shape (n_classes, W, H, D).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub probs: Array4<f32>,
}

impl ProbMap {
    pub fn new(probs: Array4<f32>) -> Result<Self> {
        let (c, w, h, d) = probs.dim();
        if c != N_CLASSES {
            return Err(Error::validation(format!(
                "prob map has {c} classes, expected {N_CLASSES}"
            )));
        }
        for x in 0..w {
            for y in 0..h {
                for z in 0..d {
                    let mut sum = 0.0f32;
                    for k in 0..c {
                        let p = probs[[k, x, y, z]];
                        if !(0.0..=1.0).contains(&p) {
                            return Err(Error::validation(format!(
                                "probability {p} at ({x},{y},{z}) outside [0,1]"
                            )));
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > 1e-5 {
                        return Err(Error::validation(format!(
                            "probabilities at ({x},{y},{z}) sum to {sum}"
                        )));
                    }
                }
            }
        }
        Ok(ProbMap { probs })
    }

    pub fn spatial_shape(&self) -> (usize, usize, usize) {
        let (_, w, h, d) = self.probs.dim();
        (w, h, d)
    }
}

/// Hard per-voxel argmax; ties resolve to the lower class index.
pub fn argmax_labels(p: &ProbMap) -> LabelMap {
    let (c, w, h, d) = p.probs.dim();
    let mut labels = Array3::zeros((w, h, d));
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let mut best = 0usize;
                for k in 1..c {
                    if p.probs[[k, x, y, z]] > p.probs[[best, x, y, z]] {
                        best = k;
                    }
                }
                labels[[x, y, z]] = best as u8;
            }
        }
    }
    LabelMap { labels }
}

// ---------------------------------------------------------------------------
// architecture
// ---------------------------------------------------------------------------

/// Conv parameter shapes in declaration order: (name, weight shape).
fn param_specs(arch: &SegArchDescriptor) -> Vec<(String, Vec<usize>)> {
    let w1 = arch.base_width;
    let w2 = 2 * w1;
    let w3 = 4 * w1;
    let k3 = |o: usize, i: usize| vec![o, i, 3, 3, 3];
    let k2 = |o: usize, i: usize| vec![o, i, 2, 2, 2];
    let k1 = |o: usize, i: usize| vec![o, i, 1, 1, 1];
    let mut specs = vec![
        ("enc1a".to_string(), k3(w1, 1)),
        ("enc1b".to_string(), k3(w1, w1)),
        ("down1".to_string(), k2(w2, w1)),
        ("enc2a".to_string(), k3(w2, w2)),
        ("enc2b".to_string(), k3(w2, w2)),
        ("down2".to_string(), k2(w3, w2)),
        ("bota".to_string(), k3(w3, w3)),
        ("botb".to_string(), k3(w3, w3)),
        ("up2".to_string(), k3(w2, w3)),
        ("dec2".to_string(), k3(w2, 2 * w2)),
        ("up1".to_string(), k3(w1, w2)),
        ("dec1".to_string(), k3(w1, 2 * w1)),
        ("head".to_string(), k1(arch.n_classes, w1)),
    ];
    if arch.kind == SegArch::Resunet {
        // 1x1 projection for the only encoder block whose width changes
        specs.push(("enc1p".to_string(), k1(w1, 1)));
    }
    specs
}

fn init_params(arch: &SegArchDescriptor, seed: u64) -> Vec<NamedTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for (name, shape) in param_specs(arch) {
        let w = if name == "head" {
            uniform_small(&mut rng, &shape, 0.05)
        } else {
            he_normal(&mut rng, &shape)
        };
        params.push(NamedTensor {
            name: format!("{name}.w"),
            value: w,
        });
        params.push(NamedTensor {
            name: format!("{name}.b"),
            value: zeros(&[shape[0]]),
        });
    }
    params
}

struct Bound {
    ids: BTreeMap<String, (NodeId, NodeId)>,
    order: Vec<(NodeId, NodeId)>,
}

fn bind_params(tape: &mut Tape, params: &[NamedTensor], trainable: bool) -> Bound {
    let mut ids = BTreeMap::new();
    let mut order = Vec::new();
    for pair in params.chunks(2) {
        let w = tape.leaf(pair[0].value.clone(), trainable);
        let b = tape.leaf(pair[1].value.clone(), trainable);
        let name = pair[0].name.trim_end_matches(".w").to_string();
        ids.insert(name, (w, b));
        order.push((w, b));
    }
    Bound { ids, order }
}

fn forward_logits(tape: &mut Tape, bound: &Bound, arch: &SegArchDescriptor, x: NodeId) -> NodeId {
    let conv = |t: &mut Tape, name: &str, x: NodeId, stride: usize, pad: usize| {
        let (w, b) = bound.ids[name];
        t.conv3d(x, w, b, stride, pad)
    };
    let x = tape.affine(x, 1.0 / 255.0, 0.0);

    let enc_block = |t: &mut Tape, a: &str, b: &str, proj: Option<&str>, x: NodeId| -> NodeId {
        match arch.kind {
            SegArch::Unet => {
                let h = conv(t, a, x, 1, 1);
                let h = t.relu(h);
                let h = conv(t, b, h, 1, 1);
                t.relu(h)
            }
            SegArch::Resunet => {
                let h = conv(t, a, x, 1, 1);
                let h = t.relu(h);
                let h = conv(t, b, h, 1, 1);
                let s = match proj {
                    Some(pr) => conv(t, pr, x, 1, 0),
                    None => x,
                };
                let sum = t.add(h, s);
                t.relu(sum)
            }
        }
    };

    let e1 = enc_block(tape, "enc1a", "enc1b", Some("enc1p"), x);
    let d1 = conv(tape, "down1", e1, 2, 0);
    let d1 = tape.relu(d1);
    let e2 = enc_block(tape, "enc2a", "enc2b", None, d1);
    let d2 = conv(tape, "down2", e2, 2, 0);
    let d2 = tape.relu(d2);
    let b = enc_block(tape, "bota", "botb", None, d2);

    let u2 = tape.upsample2x(b);
    let u2 = conv(tape, "up2", u2, 1, 1);
    let u2 = tape.relu(u2);
    let c2 = tape.concat_channels(u2, e2);
    let m2 = conv(tape, "dec2", c2, 1, 1);
    let m2 = tape.relu(m2);

    let u1 = tape.upsample2x(m2);
    let u1 = conv(tape, "up1", u1, 1, 1);
    let u1 = tape.relu(u1);
    let c1 = tape.concat_channels(u1, e1);
    let m1 = conv(tape, "dec1", c1, 1, 1);
    let m1 = tape.relu(m1);

    conv(tape, "head", m1, 1, 0)
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Flatten (N, C, W, H, D) logits into (C, N*S) columns.
fn flatten_logits(logits: &ArrayD<f32>) -> Array2<f32> {
    let v = logits.view().into_dimensionality::<Ix5>().unwrap();
    let (n, c, w, h, d) = v.dim();
    let s = w * h * d;
    let mut out = Array2::zeros((c, n * s));
    for ni in 0..n {
        for ci in 0..c {
            let mut col = ni * s;
            for x in 0..w {
                for y in 0..h {
                    for z in 0..d {
                        out[[ci, col]] = v[[ni, ci, x, y, z]];
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

fn unflatten_grad(
    grad: &Array2<f32>,
    n: usize,
    c: usize,
    dims: (usize, usize, usize),
) -> ArrayD<f32> {
    let (w, h, d) = dims;
    let s = w * h * d;
    let mut out = Array5::<f32>::zeros((n, c, w, h, d));
    for ni in 0..n {
        for ci in 0..c {
            let mut col = ni * s;
            for x in 0..w {
                for y in 0..h {
                    for z in 0..d {
                        out[[ni, ci, x, y, z]] = grad[[ci, col]];
                        col += 1;
                    }
                }
            }
        }
    }
    out.into_dyn()
}

struct PatchRef {
    case: usize,
    start: (usize, usize, usize),
}

fn draw_patch(
    rng: &mut ChaCha8Rng,
    vol_shape: (usize, usize, usize),
    patch: (usize, usize, usize),
    fg: &[(usize, usize, usize)],
) -> (usize, usize, usize) {
    let range = (
        vol_shape.0 - patch.0,
        vol_shape.1 - patch.1,
        vol_shape.2 - patch.2,
    );
    if !fg.is_empty() && rng.gen_bool(0.5) {
        let &(cx, cy, cz) = &fg[rng.gen_range(0..fg.len())];
        let center = |c: usize, p: usize, max: usize| c.saturating_sub(p / 2).min(max);
        (
            center(cx, patch.0, range.0),
            center(cy, patch.1, range.1),
            center(cz, patch.2, range.2),
        )
    } else {
        (
            rng.gen_range(0..=range.0),
            rng.gen_range(0..=range.1),
            rng.gen_range(0..=range.2),
        )
    }
}

/// Train a segmentation model, optionally warm-starting from `init`.
pub fn train_segmentation(
    cases: &[(Volume, SegTarget)],
    cfg: &SegTrainConfig,
    init: Option<&SegModel>,
) -> Result<SegModel> {
    cfg.validate()?;
    if cases.is_empty() {
        return Err(Error::validation("no training cases"));
    }
    for (v, t) in cases {
        let label_dim = t.labels().dim();
        if v.shape() != (label_dim.0, label_dim.1, label_dim.2) {
            return Err(Error::validation(format!(
                "case `{}`: volume and labels disagree on shape",
                v.case_id
            )));
        }
        let (w, h, d) = v.shape();
        let (pw, ph, pd) = cfg.patch_size;
        if w < pw || h < ph || d < pd {
            return Err(Error::validation(format!(
                "case `{}` shape ({w},{h},{d}) smaller than patch {:?}",
                v.case_id, cfg.patch_size
            )));
        }
        if matches!(t, SegTarget::Pseudo(_)) && !cfg.ignore_masking {
            return Err(Error::validation(
                "pseudo-labeled cases require ignore_masking = true",
            ));
        }
        if let Some(m) = t.ignore() {
            if m.dim() != t.labels().dim() {
                return Err(Error::validation(format!(
                    "case `{}`: ignore mask and labels disagree on shape",
                    v.case_id
                )));
            }
        }
    }

    let arch = match init {
        Some(m) => {
            if m.arch.kind != cfg.arch
                || m.arch.base_width != cfg.base_width
                || m.arch.patch_size != cfg.patch_size
            {
                return Err(Error::validation(format!(
                    "init model arch {:?} incompatible with config ({}, width {}, patch {:?})",
                    m.arch, cfg.arch, cfg.base_width, cfg.patch_size
                )));
            }
            m.arch
        }
        None => SegArchDescriptor {
            kind: cfg.arch,
            base_width: cfg.base_width,
            n_classes: N_CLASSES,
            patch_size: cfg.patch_size,
        },
    };
    let mut params = match init {
        Some(m) => m.params.clone(),
        None => init_params(&arch, cfg.rng_seed),
    };

    if cfg.epochs == 0 {
        return Ok(SegModel {
            arch,
            params,
            train_log: Vec::new(),
        });
    }

    // foreground voxels per case (excluding ignored ones) for oversampling
    let fg_lists: Vec<Vec<(usize, usize, usize)>> = cases
        .iter()
        .map(|(_, t)| {
            let labels = t.labels();
            let ignore = t.ignore();
            labels
                .indexed_iter()
                .filter(|&(idx, &l)| l != 0 && ignore.map_or(true, |m| !m[[idx.0, idx.1, idx.2]]))
                .map(|(idx, _)| idx)
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut values: Vec<ArrayD<f32>> = params.iter().map(|t| t.value.clone()).collect();
    let mut opt = SgdMomentum::new(&values, 0.9);
    let mut train_log = Vec::with_capacity(cfg.epochs);
    let (pw, ph, pd) = cfg.patch_size;
    let s = pw * ph * pd;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * (1.0 - epoch as f32 / cfg.epochs as f32).powf(0.9);
        let mut order: Vec<usize> = (0..cases.len()).collect();
        order.shuffle(&mut rng);
        let mut patches = Vec::new();
        for &ci in &order {
            let (v, _) = &cases[ci];
            for _ in 0..cfg.patches_per_case {
                let start = draw_patch(&mut rng, v.shape(), cfg.patch_size, &fg_lists[ci]);
                patches.push(PatchRef { case: ci, start });
            }
        }

        let mut epoch_loss = 0.0f64;
        let mut executed = 0usize;
        for batch in patches.chunks(cfg.batch_size) {
            let n = batch.len();
            let mut input = Array5::<f32>::zeros((n, 1, pw, ph, pd));
            let mut labels = vec![0u8; n * s];
            let mut mask = vec![true; n * s];
            let mut any_selected = false;
            for (bi, pref) in batch.iter().enumerate() {
                let (v, t) = &cases[pref.case];
                let (sx, sy, sz) = pref.start;
                let lab = t.labels();
                let ign = t.ignore();
                let mut col = bi * s;
                for x in 0..pw {
                    for y in 0..ph {
                        for z in 0..pd {
                            input[[bi, 0, x, y, z]] = v.voxels[[sx + x, sy + y, sz + z]];
                            labels[col] = lab[[sx + x, sy + y, sz + z]];
                            let sel = ign.map_or(true, |m| !m[[sx + x, sy + y, sz + z]]);
                            mask[col] = sel;
                            any_selected |= sel;
                            col += 1;
                        }
                    }
                }
            }
            if cfg.ignore_masking && !any_selected {
                log::warn!("skipping batch with all voxels ignored (epoch {epoch})");
                continue;
            }

            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &params, true);
            let x = tape.leaf(input.into_dyn(), false);
            let logits = forward_logits(&mut tape, &bound, &arch, x);
            let flat = flatten_logits(tape.value(logits));
            let mask_opt = if cfg.ignore_masking {
                Some(&mask[..])
            } else {
                None
            };
            let loss = losses::dice_ce_loss(flat.view(), &labels, mask_opt, cfg.w_dice, cfg.w_ce);
            if !loss.value.is_finite() {
                return Err(Error::Divergence {
                    context: "segmentation training".into(),
                    step: epoch,
                });
            }
            let dlogits = unflatten_grad(&loss.grad, n, arch.n_classes, cfg.patch_size);
            tape.seed_grad(logits, dlogits);
            tape.run_backward();

            let grads: Vec<ArrayD<f32>> = bound
                .order
                .iter()
                .flat_map(|&(w, b)| [w, b])
                .zip(params.iter())
                .map(|(id, p)| {
                    tape.grad(id)
                        .cloned()
                        .unwrap_or_else(|| ArrayD::zeros(p.value.raw_dim()))
                })
                .collect();
            for (v, p) in values.iter_mut().zip(params.iter()) {
                v.clone_from(&p.value);
            }
            opt.step(&mut values, &grads, lr);
            for (p, v) in params.iter_mut().zip(values.iter()) {
                p.value.clone_from(v);
            }

            epoch_loss += loss.value as f64;
            executed += 1;
        }

        if executed == 0 {
            return Err(Error::validation(format!(
                "epoch {epoch}: every batch was fully ignored; no voxels to train on"
            )));
        }
        train_log.push(EpochRecord {
            epoch,
            loss: (epoch_loss / executed as f64) as f32,
            lr,
        });
    }

    Ok(SegModel {
        arch,
        params,
        train_log,
    })
}

// ---------------------------------------------------------------------------
// inference
// ---------------------------------------------------------------------------

fn window_starts(dim: usize, patch: usize) -> Vec<usize> {
    let step = (patch / 2).max(1);
    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        if s + patch >= dim {
            starts.push(dim - patch);
            break;
        }
        starts.push(s);
        s += step;
    }
    starts.dedup();
    starts
}

fn softmax_volume(logits: &Array5<f32>) -> Array4<f32> {
    let (_, c, w, h, d) = logits.dim();
    let mut out = Array4::zeros((c, w, h, d));
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let mut max = f32::NEG_INFINITY;
                for k in 0..c {
                    max = max.max(logits[[0, k, x, y, z]]);
                }
                let mut sum = 0.0f32;
                for k in 0..c {
                    let e = (logits[[0, k, x, y, z]] - max).exp();
                    out[[k, x, y, z]] = e;
                    sum += e;
                }
                for k in 0..c {
                    out[[k, x, y, z]] /= sum;
                }
            }
        }
    }
    out
}

fn forward_window(m: &SegModel, window: Array5<f32>) -> Array4<f32> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, &m.params, false);
    let x = tape.leaf(window.into_dyn(), false);
    let logits = forward_logits(&mut tape, &bound, &m.arch, x);
    let v = tape
        .value(logits)
        .view()
        .into_dimensionality::<Ix5>()
        .unwrap()
        .to_owned();
    softmax_volume(&v)
}

fn predict_sliding(m: &SegModel, v: &Volume) -> Result<ProbMap> {
    let (w, h, d) = v.shape();
    let (pw, ph, pd) = m.arch.patch_size;
    let c = m.arch.n_classes;
    let mut acc = Array4::<f32>::zeros((c, w, h, d));
    let mut count = Array3::<f32>::zeros((w, h, d));
    for &sx in &window_starts(w, pw) {
        for &sy in &window_starts(h, ph) {
            for &sz in &window_starts(d, pd) {
                let mut window = Array5::<f32>::zeros((1, 1, pw, ph, pd));
                for x in 0..pw {
                    for y in 0..ph {
                        for z in 0..pd {
                            window[[0, 0, x, y, z]] = v.voxels[[sx + x, sy + y, sz + z]];
                        }
                    }
                }
                let probs = forward_window(m, window);
                for x in 0..pw {
                    for y in 0..ph {
                        for z in 0..pd {
                            for k in 0..c {
                                acc[[k, sx + x, sy + y, sz + z]] += probs[[k, x, y, z]];
                            }
                            count[[sx + x, sy + y, sz + z]] += 1.0;
                        }
                    }
                }
            }
        }
    }
    for x in 0..w {
        for y in 0..h {
            for z in 0..d {
                let n = count[[x, y, z]];
                for k in 0..c {
                    acc[[k, x, y, z]] /= n;
                }
            }
        }
    }
    ProbMap::new(acc)
}

/// Patch-wise inference with overlap averaging. The volume must be at least
/// patch-sized in every dimension.
pub fn predict(m: &SegModel, v: &Volume) -> Result<ProbMap> {
    let (w, h, d) = v.shape();
    let (pw, ph, pd) = m.arch.patch_size;
    if w < pw || h < ph || d < pd {
        return Err(Error::validation(format!(
            "volume `{}` shape ({w},{h},{d}) smaller than the model patch {:?}",
            v.case_id, m.arch.patch_size
        )));
    }
    if (w, h, d) == (pw, ph, pd) {
        // single-window fast path
        let mut window = Array5::<f32>::zeros((1, 1, pw, ph, pd));
        for x in 0..pw {
            for y in 0..ph {
                for z in 0..pd {
                    window[[0, 0, x, y, z]] = v.voxels[[x, y, z]];
                }
            }
        }
        return ProbMap::new(forward_window(m, window));
    }
    predict_sliding(m, v)
}

impl SegModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::nn::save_checkpoint(path, "segmentation", &self.arch, &self.params)
    }

    pub fn load(path: &Path) -> Result<SegModel> {
        let (kind, arch, params) = crate::nn::load_checkpoint(path)?;
        if kind != "segmentation" {
            return Err(Error::validation(format!(
                "checkpoint kind `{kind}` is not a segmentation model"
            )));
        }
        let arch: SegArchDescriptor =
            serde_json::from_value(arch).map_err(|e| Error::validation(e.to_string()))?;
        Ok(SegModel {
            arch,
            params,
            train_log: Vec::new(),
        })
    }

    /// Training log as CSV: epoch, loss, lr.
    pub fn train_log_csv(&self) -> String {
        let mut out = String::from("epoch,loss,lr\n");
        for r in &self.train_log {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.lr));
        }
        out
    }
}
