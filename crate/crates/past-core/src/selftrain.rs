//! Iterative self-training: top-q confidence pseudo-label selection on the
//! concatenated synthesized + real-target set, and warm-started retraining
//! for K rounds.

use crate::data::{Domain, LabelMap, Volume, N_CLASSES};
use crate::error::{Error, Result};
use crate::segmentation::{
    argmax_labels, predict, train_segmentation, EpochRecord, ProbMap, SegModel, SegTarget,
    SegTrainConfig,
};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// Pseudo-labels with an ignore mask; ignored voxels are excluded from the
/// loss and their label values are contractually meaningless.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub labels: Array3<u8>,
    pub ignore: Array3<bool>,
}

impl PseudoLabel {
    /// Kept (un-ignored) voxel count per class.
    pub fn kept_per_class(&self) -> [usize; N_CLASSES] {
        let mut counts = [0usize; N_CLASSES];
        for (idx, &l) in self.labels.indexed_iter() {
            if !self.ignore[[idx.0, idx.1, idx.2]] {
                counts[l as usize] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    /// Keep the top floor(q*N_c) voxels independently per hard class.
    PerClass,
    /// Keep the top floor(q*N) voxels regardless of class.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelfTrainConfig {
    /// Number of self-training rounds K.
    pub rounds: usize,
    /// Initial confidence portion q.
    pub q0: f64,
    /// Per-round increment of q, capped at 1.
    pub q_step: f64,
    pub selection_scope: SelectionScope,
    /// When true, synthesized cases keep their true labels instead of
    /// pseudo-labels.
    pub keep_source_truth: bool,
    pub seg_cfg: SegTrainConfig,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            rounds: 2,
            q0: 0.6,
            q_step: 0.2,
            selection_scope: SelectionScope::PerClass,
            keep_source_truth: false,
            seg_cfg: SegTrainConfig {
                ignore_masking: true,
                ..Default::default()
            },
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q0 > 0.0 && self.q0 <= 1.0) {
            return Err(Error::validation(format!("q0 {} outside (0, 1]", self.q0)));
        }
        if self.q_step < 0.0 {
            return Err(Error::validation("q_step must be >= 0"));
        }
        self.seg_cfg.validate()
    }

    /// Portion used by round `k` (0-based): min(q0 + k*q_step, 1).
    pub fn q_for_round(&self, k: usize) -> f64 {
        (self.q0 + k as f64 * self.q_step).min(1.0)
    }
}

/// Select the top-q confidence portion of a probability map as pseudo-labels.
///
/// Hard class = argmax, confidence = max probability. Confidence ties break
/// toward the lexicographically lowest voxel index, so selection is
/// deterministic.
pub fn generate_pseudo_labels(p: &ProbMap, q: f64, scope: SelectionScope) -> Result<PseudoLabel> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::validation(format!("portion q {q} outside (0, 1]")));
    }
    let hard = argmax_labels(p);
    let (w, h, d) = p.spatial_shape();
    let mut conf = Vec::with_capacity(w * h * d);
    for (idx, &l) in hard.labels.indexed_iter() {
        conf.push(p.probs[[l as usize, idx.0, idx.1, idx.2]]);
    }

    let mut ignore = Array3::from_elem((w, h, d), true);
    let keep = |ignore: &mut Array3<bool>, picked: &mut Vec<(f32, usize)>, quota: usize| {
        picked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, lin) in picked.iter().take(quota) {
            let z = lin % d;
            let y = (lin / d) % h;
            let x = lin / (d * h);
            ignore[[x, y, z]] = false;
        }
    };

    match scope {
        SelectionScope::PerClass => {
            for c in 0..N_CLASSES as u8 {
                let mut picked: Vec<(f32, usize)> = hard
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, &l)| l == c)
                    .map(|(lin, _)| (conf[lin], lin))
                    .collect();
                let quota = (q * picked.len() as f64).floor() as usize;
                keep(&mut ignore, &mut picked, quota);
            }
        }
        SelectionScope::Global => {
            let mut picked: Vec<(f32, usize)> =
                conf.iter().copied().zip(0..w * h * d).collect();
            let quota = (q * picked.len() as f64).floor() as usize;
            keep(&mut ignore, &mut picked, quota);
        }
    }

    Ok(PseudoLabel {
        labels: hard.labels,
        ignore,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthesized,
    RealTarget,
}

/// One case of the concatenated self-training set X_c.
#[derive(Debug, Clone)]
pub struct ConcatCase {
    pub volume: Volume,
    pub provenance: Provenance,
    /// Original labels of synthesized cases, used only when
    /// `keep_source_truth` is set.
    pub source_truth: Option<LabelMap>,
}

/// Concatenate synthesized source cases (first) with real target cases.
pub fn build_concat_set(
    synth_source: Vec<(Volume, LabelMap)>,
    target: Vec<Volume>,
) -> Result<Vec<ConcatCase>> {
    if target.is_empty() {
        return Err(Error::validation(
            "self-training needs at least one target case",
        ));
    }
    for (v, _) in &synth_source {
        if v.domain == Domain::Source {
            return Err(Error::validation(format!(
                "case `{}` still carries the source domain tag; translate it first",
                v.case_id
            )));
        }
    }
    let mut out = Vec::with_capacity(synth_source.len() + target.len());
    for (v, l) in synth_source {
        out.push(ConcatCase {
            volume: v,
            provenance: Provenance::Synthesized,
            source_truth: Some(l),
        });
    }
    for v in target {
        out.push(ConcatCase {
            volume: v,
            provenance: Provenance::RealTarget,
            source_truth: None,
        });
    }
    Ok(out)
}

/// Per-round bookkeeping, serialized as JSON next to the round's model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    /// Portion q used when selecting this round's pseudo-labels.
    pub q: f64,
    /// Un-ignored voxel count per class over all cases.
    pub kept_per_class: [usize; N_CLASSES],
    /// Hard-prediction voxel count per class over all cases.
    pub total_per_class: [usize; N_CLASSES],
    pub losses: Vec<EpochRecord>,
}

fn attach_round(e: Error, round: usize) -> Error {
    match e {
        Error::Divergence { context, step } => Error::Divergence {
            context: format!("self-train round {round}: {context}"),
            step,
        },
        Error::Validation(msg) => Error::Validation(format!("self-train round {round}: {msg}")),
        other => other,
    }
}

/// Run K self-training rounds starting from `s0`.
///
/// Each round predicts with the previous model on every case of `x_c`,
/// selects the top-q_k portion as pseudo-labels, warm-starts the next model
/// from the previous one and retrains.
pub fn self_train(
    s0: &SegModel,
    x_c: &[ConcatCase],
    cfg: &SelfTrainConfig,
) -> Result<(SegModel, Vec<RoundReport>)> {
    cfg.validate()?;
    if x_c.is_empty() {
        return Err(Error::validation("empty concatenated set"));
    }
    if !cfg.seg_cfg.ignore_masking {
        return Err(Error::validation(
            "self-training requires seg_cfg.ignore_masking = true",
        ));
    }
    let mut current = s0.clone();
    let mut reports = Vec::with_capacity(cfg.rounds);

    for k in 0..cfg.rounds {
        let round = k + 1;
        let q = cfg.q_for_round(k);
        let mut round_cases = Vec::with_capacity(x_c.len());
        let mut kept = [0usize; N_CLASSES];
        let mut total = [0usize; N_CLASSES];
        for case in x_c {
            let probs = predict(&current, &case.volume).map_err(|e| attach_round(e, round))?;
            let pseudo = generate_pseudo_labels(&probs, q, cfg.selection_scope)
                .map_err(|e| attach_round(e, round))?;
            for (i, c) in pseudo.kept_per_class().iter().enumerate() {
                kept[i] += c;
            }
            for &l in pseudo.labels.iter() {
                total[l as usize] += 1;
            }
            let target = if cfg.keep_source_truth && case.provenance == Provenance::Synthesized {
                let truth = case.source_truth.clone().ok_or_else(|| {
                    Error::validation(format!(
                        "synthesized case `{}` is missing its source truth",
                        case.volume.case_id
                    ))
                })?;
                SegTarget::Truth(truth)
            } else {
                SegTarget::Pseudo(pseudo)
            };
            round_cases.push((case.volume.clone(), target));
        }

        // per-round seed so rounds do not replay the same patch stream
        let mut round_cfg = cfg.seg_cfg.clone();
        round_cfg.rng_seed = cfg
            .seg_cfg
            .rng_seed
            .wrapping_add((round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let next = train_segmentation(&round_cases, &round_cfg, Some(&current))
            .map_err(|e| attach_round(e, round))?;
        reports.push(RoundReport {
            round,
            q,
            kept_per_class: kept,
            total_per_class: total,
            losses: next.train_log.clone(),
        });
        current = next;
    }

    Ok((current, reports))
}
