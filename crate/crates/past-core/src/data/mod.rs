//! Core volumetric data types, deterministic file IO, and the synthetic
//! two-domain phantom generator.

mod io;
mod nifti;
mod phantom;

pub use io::{
    load_labels, load_volume, read_manifest, save_labels, save_volume, write_manifest,
    CaseEntry, DatasetManifest, LABEL_HEADER_EXT, LABEL_RAW_EXT, VOLUME_HEADER_EXT, VOLUME_RAW_EXT,
};
pub use nifti::ingest_nifti;
pub use phantom::generate_phantom;

use crate::error::{Error, Result};
use crate::preprocess::RoiBox;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// Acquisition domain of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Acquisition protocol tag. Real scans come in two in-plane resolutions;
/// phantom cases carry one of the two tags round-robin (see `generate_phantom`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    P448,
    P384,
    Synthetic,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Protocol::P448 => write!(f, "p448"),
            Protocol::P384 => write!(f, "p384"),
            Protocol::Synthetic => write!(f, "synthetic"),
        }
    }
}

/// Number of segmentation classes: background, VS, cochlea.
pub const N_CLASSES: usize = 3;
/// Foreground class id of the vestibular schwannoma.
pub const CLASS_VS: u8 = 1;
/// Foreground class id of the cochlea.
pub const CLASS_COCHLEA: u8 = 2;

/// A 3D scalar image with spacing and provenance tags.
///
/// Voxels are indexed `[x, y, z]` with shape `(W, H, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub voxels: Array3<f32>,
    /// Physical voxel size in mm along x, y, z.
    pub spacing: [f64; 3],
    pub domain: Domain,
    pub protocol: Protocol,
    pub case_id: String,
    /// ROI this volume was cropped with, if any (provenance for invertible
    /// bookkeeping; serialized in the native header).
    pub roi: Option<RoiBox>,
}

impl Volume {
    pub fn new(
        voxels: Array3<f32>,
        spacing: [f64; 3],
        domain: Domain,
        protocol: Protocol,
        case_id: impl Into<String>,
    ) -> Result<Self> {
        let v = Volume {
            voxels,
            spacing,
            domain,
            protocol,
            case_id: case_id.into(),
            roi: None,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.voxels.dim();
        (d.0, d.1, d.2)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h, d) = self.shape();
        if w < 8 || h < 8 || d < 1 {
            return Err(Error::validation(format!(
                "volume `{}` shape ({w},{h},{d}) violates W >= 8, H >= 8, D >= 1",
                self.case_id
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::validation(format!(
                "volume `{}` has non-positive spacing {:?}",
                self.case_id, self.spacing
            )));
        }
        if !self.voxels.iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!(
                "volume `{}` contains non-finite voxels",
                self.case_id
            )));
        }
        Ok(())
    }
}

/// Integer class map paired with a volume. Values are in {0, 1, 2}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub labels: Array3<u8>,
}

impl LabelMap {
    pub fn new(labels: Array3<u8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&v| v as usize >= N_CLASSES) {
            return Err(Error::validation(format!(
                "label map contains class {bad}, expected values in 0..{N_CLASSES}"
            )));
        }
        Ok(LabelMap { labels })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        let d = self.labels.dim();
        (d.0, d.1, d.2)
    }

    /// Voxel count per class.
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0usize; N_CLASSES];
        for &v in self.labels.iter() {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// A two-domain dataset: labeled source cases, unlabeled target cases, and
/// (phantom only) held-out target ground truth.
///
/// `target_truth` is private by design: training code receives a
/// [`TrainingView`], which cannot reach it. Only evaluation code goes through
/// [`Dataset::held_out_truth`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub source_cases: Vec<(Volume, LabelMap)>,
    pub target_cases: Vec<Volume>,
    target_truth: Option<Vec<LabelMap>>,
}

/// Truth-free view of a dataset handed to training operations.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub source_cases: &'a [(Volume, LabelMap)],
    pub target_cases: &'a [Volume],
}

impl Dataset {
    pub fn new(
        source_cases: Vec<(Volume, LabelMap)>,
        target_cases: Vec<Volume>,
        target_truth: Option<Vec<LabelMap>>,
    ) -> Result<Self> {
        if let Some(truth) = &target_truth {
            if truth.len() != target_cases.len() {
                return Err(Error::validation(format!(
                    "target_truth has {} entries for {} target cases",
                    truth.len(),
                    target_cases.len()
                )));
            }
            for (v, l) in target_cases.iter().zip(truth.iter()) {
                if v.shape() != l.shape() {
                    return Err(Error::validation(format!(
                        "target case `{}` shape {:?} does not match its truth labels {:?}",
                        v.case_id,
                        v.shape(),
                        l.shape()
                    )));
                }
            }
        }
        for (v, l) in &source_cases {
            if v.shape() != l.shape() {
                return Err(Error::validation(format!(
                    "source case `{}` shape {:?} does not match its labels {:?}",
                    v.case_id,
                    v.shape(),
                    l.shape()
                )));
            }
        }
        Ok(Dataset {
            source_cases,
            target_cases,
            target_truth,
        })
    }

    /// View for training operations: no target truth reachable.
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            source_cases: &self.source_cases,
            target_cases: &self.target_cases,
        }
    }

    /// Held-out target labels, for evaluation only.
    pub fn held_out_truth(&self) -> Option<&[LabelMap]> {
        self.target_truth.as_deref()
    }
}

/// Parameters of the synthetic two-domain phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_source: usize,
    pub n_target: usize,
    /// Volume shape (W, H, D).
    pub shape: (usize, usize, usize),
    pub rng_seed: u64,
    /// Strength of the synthetic source-to-target appearance gap in [0, 1].
    pub shift_strength: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_source < 1 || self.n_target < 1 {
            return Err(Error::validation(
                "phantom spec requires n_source >= 1 and n_target >= 1",
            ));
        }
        let (w, h, d) = self.shape;
        if w < 16 || h < 16 || d < 4 {
            return Err(Error::validation(format!(
                "phantom shape ({w},{h},{d}) too small; need W,H >= 16 and D >= 4"
            )));
        }
        if !(0.0..=1.0).contains(&self.shift_strength) {
            return Err(Error::validation(format!(
                "shift_strength {} outside [0, 1]",
                self.shift_strength
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn volume_rejects_tiny_shapes() {
        let v = Volume::new(
            Array3::zeros((4, 8, 1)),
            [1.0; 3],
            Domain::Source,
            Protocol::Synthetic,
            "t",
        );
        assert!(matches!(v, Err(Error::Validation(_))));
    }

    #[test]
    fn volume_rejects_nonfinite() {
        let mut vox = Array3::zeros((8, 8, 1));
        vox[[0, 0, 0]] = f32::NAN;
        let v = Volume::new(vox, [1.0; 3], Domain::Source, Protocol::Synthetic, "t");
        assert!(matches!(v, Err(Error::Validation(_))));
    }

    #[test]
    fn volume_rejects_bad_spacing() {
        let v = Volume::new(
            Array3::zeros((8, 8, 1)),
            [1.0, 0.0, 1.0],
            Domain::Source,
            Protocol::Synthetic,
            "t",
        );
        assert!(matches!(v, Err(Error::Validation(_))));
    }

    #[test]
    fn labelmap_rejects_out_of_range_class() {
        let mut l = Array3::zeros((8, 8, 1));
        l[[1, 1, 0]] = 3u8;
        assert!(LabelMap::new(l).is_err());
    }

    #[test]
    fn dataset_enforces_truth_alignment() {
        let v = Volume::new(
            Array3::zeros((8, 8, 2)),
            [1.0; 3],
            Domain::Target,
            Protocol::Synthetic,
            "t0",
        )
        .unwrap();
        let truth = LabelMap::new(Array3::zeros((8, 8, 2))).unwrap();
        // one target case, two truth entries
        let ds = Dataset::new(vec![], vec![v], Some(vec![truth.clone(), truth]));
        assert!(ds.is_err());
    }

    #[test]
    fn training_view_carries_no_truth() {
        let v = Volume::new(
            Array3::zeros((8, 8, 2)),
            [1.0; 3],
            Domain::Target,
            Protocol::Synthetic,
            "t0",
        )
        .unwrap();
        let truth = LabelMap::new(Array3::zeros((8, 8, 2))).unwrap();
        let ds = Dataset::new(vec![], vec![v], Some(vec![truth])).unwrap();
        let view = ds.training_view();
        assert_eq!(view.target_cases.len(), 1);
        // The view type has no truth field; the dataset still serves it to eval.
        assert!(ds.held_out_truth().is_some());
    }
}
