//! Deterministic native file IO.
//!
//! A volume is a two-file pair: a JSON text header (`.pvol.json`) and a raw
//! little-endian f32 payload (`.pvol.raw`) in x-fastest order. Label maps use
//! the same scheme (`.plab.json` + `.plab.raw`, u8 payload) with an optional
//! ignore-mask channel appended after the labels. Round-trips are bit-exact.

use crate::data::{Dataset, Domain, LabelMap, Protocol, Volume};
use crate::error::{Error, Result};
use crate::preprocess::RoiBox;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const VOLUME_HEADER_EXT: &str = ".pvol.json";
pub const VOLUME_RAW_EXT: &str = ".pvol.raw";
pub const LABEL_HEADER_EXT: &str = ".plab.json";
pub const LABEL_RAW_EXT: &str = ".plab.raw";

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    case_id: String,
    /// (W, H, D)
    shape: [usize; 3],
    spacing: [f64; 3],
    domain: Domain,
    protocol: Protocol,
    dtype: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    roi: Option<RoiBox>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelHeader {
    shape: [usize; 3],
    dtype: String,
    /// `["labels"]` or `["labels", "ignore"]`
    channels: Vec<String>,
}

fn header_path(path: &Path, header_ext: &str) -> PathBuf {
    let s = path.to_string_lossy();
    if s.ends_with(header_ext) {
        path.to_path_buf()
    } else {
        PathBuf::from(format!("{s}{header_ext}"))
    }
}

fn raw_path(header: &Path, header_ext: &str, raw_ext: &str) -> PathBuf {
    let s = header.to_string_lossy();
    PathBuf::from(format!("{}{raw_ext}", s.trim_end_matches(header_ext)))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.to_string_lossy(), e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.to_string_lossy(), e))
}

/// Serialize voxels in x-fastest order as little-endian f32.
fn voxels_to_bytes(voxels: &Array3<f32>) -> Vec<u8> {
    let (w, h, d) = voxels.dim();
    let mut out = Vec::with_capacity(w * h * d * 4);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                out.extend_from_slice(&voxels[[x, y, z]].to_le_bytes());
            }
        }
    }
    out
}

fn voxels_from_bytes(bytes: &[u8], shape: [usize; 3]) -> Array3<f32> {
    let [w, h, d] = shape;
    let mut voxels = Array3::zeros((w, h, d));
    let mut i = 0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                voxels[[x, y, z]] = f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
                i += 4;
            }
        }
    }
    voxels
}

/// Save a volume as a header/payload pair. `path` may be the header path or a
/// base path without extension.
pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    v.validate()?;
    let (w, h, d) = v.shape();
    let header = VolumeHeader {
        case_id: v.case_id.clone(),
        shape: [w, h, d],
        spacing: v.spacing,
        domain: v.domain,
        protocol: v.protocol,
        dtype: "f32le".to_string(),
        roi: v.roi,
    };
    let hp = header_path(path, VOLUME_HEADER_EXT);
    let rp = raw_path(&hp, VOLUME_HEADER_EXT, VOLUME_RAW_EXT);
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_file(&hp, &json)?;
    write_file(&rp, &voxels_to_bytes(&v.voxels))
}

/// Load a volume saved by [`save_volume`]. Bit-exact inverse.
pub fn load_volume(path: &Path) -> Result<Volume> {
    let hp = header_path(path, VOLUME_HEADER_EXT);
    let rp = raw_path(&hp, VOLUME_HEADER_EXT, VOLUME_RAW_EXT);
    let header_bytes = read_file(&hp)?;
    let header: VolumeHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::MalformedHeader {
            path: hp.to_string_lossy().into_owned(),
            reason: e.to_string(),
        })?;
    if header.dtype != "f32le" {
        return Err(Error::MalformedHeader {
            path: hp.to_string_lossy().into_owned(),
            reason: format!("unsupported dtype `{}`", header.dtype),
        });
    }
    let payload = read_file(&rp)?;
    let expected = header.shape.iter().product::<usize>() * 4;
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            path: rp.to_string_lossy().into_owned(),
            expected,
            actual: payload.len(),
        });
    }
    let v = Volume {
        voxels: voxels_from_bytes(&payload, header.shape),
        spacing: header.spacing,
        domain: header.domain,
        protocol: header.protocol,
        case_id: header.case_id,
        roi: header.roi,
    };
    v.validate()?;
    Ok(v)
}

/// Save a label map, optionally with an ignore-mask channel.
pub fn save_labels(l: &LabelMap, ignore: Option<&Array3<bool>>, path: &Path) -> Result<()> {
    let (w, h, d) = l.shape();
    if let Some(m) = ignore {
        if m.dim() != l.labels.dim() {
            return Err(Error::validation(
                "ignore mask shape does not match labels",
            ));
        }
    }
    let mut channels = vec!["labels".to_string()];
    if ignore.is_some() {
        channels.push("ignore".to_string());
    }
    let header = LabelHeader {
        shape: [w, h, d],
        dtype: "u8".to_string(),
        channels,
    };
    let hp = header_path(path, LABEL_HEADER_EXT);
    let rp = raw_path(&hp, LABEL_HEADER_EXT, LABEL_RAW_EXT);
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_file(&hp, &json)?;

    let mut payload = Vec::with_capacity(w * h * d * (1 + ignore.is_some() as usize));
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                payload.push(l.labels[[x, y, z]]);
            }
        }
    }
    if let Some(m) = ignore {
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    payload.push(m[[x, y, z]] as u8);
                }
            }
        }
    }
    write_file(&rp, &payload)
}

/// Load a label map and its ignore channel if present.
pub fn load_labels(path: &Path) -> Result<(LabelMap, Option<Array3<bool>>)> {
    let hp = header_path(path, LABEL_HEADER_EXT);
    let rp = raw_path(&hp, LABEL_HEADER_EXT, LABEL_RAW_EXT);
    let header_bytes = read_file(&hp)?;
    let header: LabelHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::MalformedHeader {
            path: hp.to_string_lossy().into_owned(),
            reason: e.to_string(),
        })?;
    if header.dtype != "u8" || header.channels.first().map(String::as_str) != Some("labels") {
        return Err(Error::MalformedHeader {
            path: hp.to_string_lossy().into_owned(),
            reason: "expected u8 dtype with a leading `labels` channel".into(),
        });
    }
    let has_ignore = header.channels.iter().any(|c| c == "ignore");
    let [w, h, d] = header.shape;
    let n = w * h * d;
    let payload = read_file(&rp)?;
    let expected = n * (1 + has_ignore as usize);
    if payload.len() != expected {
        return Err(Error::PayloadMismatch {
            path: rp.to_string_lossy().into_owned(),
            expected,
            actual: payload.len(),
        });
    }
    let mut labels = Array3::zeros((w, h, d));
    let mut i = 0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                labels[[x, y, z]] = payload[i];
                i += 1;
            }
        }
    }
    let ignore = if has_ignore {
        let mut m = Array3::from_elem((w, h, d), false);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    m[[x, y, z]] = payload[i] != 0;
                    i += 1;
                }
            }
        }
        Some(m)
    } else {
        None
    };
    Ok((LabelMap::new(labels)?, ignore))
}

/// One dataset case in the manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub volume_path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_path: Option<String>,
    pub domain: Domain,
    pub protocol: Protocol,
}

/// JSON list of case entries describing a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub cases: Vec<CaseEntry>,
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    let json = serde_json::to_vec_pretty(m).expect("manifest serializes");
    write_file(path, &json)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::MalformedHeader {
        path: path.to_string_lossy().into_owned(),
        reason: e.to_string(),
    })
}

impl Dataset {
    /// Write all cases and a manifest under `dir`. Target truth labels, when
    /// present, are written as `label_path` on target entries; loaders route
    /// them to the held-out side, never into the training view.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.to_string_lossy(), e))?;
        let mut cases = Vec::new();
        for (v, l) in &self.source_cases {
            let vp = format!("{}{VOLUME_HEADER_EXT}", v.case_id);
            let lp = format!("{}{LABEL_HEADER_EXT}", v.case_id);
            save_volume(v, &dir.join(&vp))?;
            save_labels(l, None, &dir.join(&lp))?;
            cases.push(CaseEntry {
                case_id: v.case_id.clone(),
                volume_path: vp,
                label_path: Some(lp),
                domain: v.domain,
                protocol: v.protocol,
            });
        }
        for (i, v) in self.target_cases.iter().enumerate() {
            let vp = format!("{}{VOLUME_HEADER_EXT}", v.case_id);
            save_volume(v, &dir.join(&vp))?;
            let label_path = match self.held_out_truth() {
                Some(truth) => {
                    let lp = format!("{}{LABEL_HEADER_EXT}", v.case_id);
                    save_labels(&truth[i], None, &dir.join(&lp))?;
                    Some(lp)
                }
                None => None,
            };
            cases.push(CaseEntry {
                case_id: v.case_id.clone(),
                volume_path: vp,
                label_path,
                domain: v.domain,
                protocol: v.protocol,
            });
        }
        let manifest_path = dir.join("dataset.json");
        write_manifest(&DatasetManifest { cases }, &manifest_path)?;
        Ok(manifest_path)
    }

    /// Load a dataset written by [`Dataset::save`].
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let dir = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let manifest = read_manifest(manifest_path)?;
        let mut source_cases = Vec::new();
        let mut target_cases = Vec::new();
        let mut target_truth = Vec::new();
        for entry in &manifest.cases {
            let v = load_volume(&dir.join(&entry.volume_path))?;
            match entry.domain {
                Domain::Source => {
                    let lp = entry.label_path.as_ref().ok_or_else(|| {
                        Error::validation(format!(
                            "source case `{}` has no label_path",
                            entry.case_id
                        ))
                    })?;
                    let (l, _) = load_labels(&dir.join(lp))?;
                    source_cases.push((v, l));
                }
                Domain::Target => {
                    if let Some(lp) = &entry.label_path {
                        let (l, _) = load_labels(&dir.join(lp))?;
                        target_truth.push(l);
                    }
                    target_cases.push(v);
                }
            }
        }
        let truth = if target_truth.is_empty() {
            None
        } else {
            Some(target_truth)
        };
        Dataset::new(source_cases, target_cases, truth)
    }
}
