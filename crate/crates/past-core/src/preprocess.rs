//! ROI cropping and intensity rescaling.
//!
//! The 2D crop (used before slice-wise translation) keeps
//! `[W/4 : 3W/4, H/4 : 3H/4]`; the 3D crop (used before segmentation) keeps
//! `[W/4 : 3W/4, 3H/8 : 3H/4, 0 : D]`. Note the y-ranges intentionally
//! differ. All fractional indices floor.

use crate::data::{LabelMap, Volume};
use crate::error::{Error, Result};
use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Half-open crop box in voxel indices.
///
/// 2D crops record `z = [0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub z0: usize,
    pub z1: usize,
}

impl RoiBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
    pub fn depth(&self) -> usize {
        self.z1 - self.z0
    }

    /// Check the box is non-degenerate and within `(w, h, d)`.
    pub fn validate_within(&self, w: usize, h: usize, d: usize) -> Result<()> {
        let ok = self.x0 < self.x1
            && self.x1 <= w
            && self.y0 < self.y1
            && self.y1 <= h
            && self.z0 < self.z1
            && self.z1 <= d;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(format!(
                "roi box {self:?} degenerate or out of bounds for shape ({w},{h},{d})"
            )))
        }
    }
}

/// The 2D ROI box for an in-plane shape `(w, h)`.
pub fn roi_2d_box(w: usize, h: usize) -> RoiBox {
    RoiBox {
        x0: w / 4,
        x1: 3 * w / 4,
        y0: h / 4,
        y1: 3 * h / 4,
        z0: 0,
        z1: 1,
    }
}

/// The 3D ROI box for a volume shape `(w, h, d)`.
pub fn roi_3d_box(w: usize, h: usize, d: usize) -> RoiBox {
    RoiBox {
        x0: w / 4,
        x1: 3 * w / 4,
        y0: 3 * h / 8,
        y1: 3 * h / 4,
        z0: 0,
        z1: d,
    }
}

/// Crop a 2D transverse slice to its central ROI.
pub fn crop_roi_2d(slice: ArrayView2<f32>) -> Result<(Array2<f32>, RoiBox)> {
    let (w, h) = slice.dim();
    if w < 8 || h < 8 {
        return Err(Error::validation(format!(
            "slice shape ({w},{h}) violates W >= 8, H >= 8"
        )));
    }
    let b = roi_2d_box(w, h);
    b.validate_within(w, h, 1)?;
    let out = slice.slice(s![b.x0..b.x1, b.y0..b.y1]).to_owned();
    Ok((out, b))
}

/// Crop a volume with an arbitrary box, recording the box on the output.
pub fn crop_volume(v: &Volume, b: &RoiBox) -> Result<Volume> {
    let (w, h, d) = v.shape();
    b.validate_within(w, h, d)?;
    let voxels = v
        .voxels
        .slice(s![b.x0..b.x1, b.y0..b.y1, b.z0..b.z1])
        .to_owned();
    Ok(Volume {
        voxels,
        spacing: v.spacing,
        domain: v.domain,
        protocol: v.protocol,
        case_id: v.case_id.clone(),
        roi: Some(*b),
    })
}

/// Crop a volume to its 3D ROI.
pub fn crop_roi_3d(v: &Volume) -> Result<(Volume, RoiBox)> {
    let (w, h, d) = v.shape();
    if w < 8 || h < 8 || d < 1 {
        return Err(Error::validation(format!(
            "volume shape ({w},{h},{d}) violates W >= 8, H >= 8, D >= 1"
        )));
    }
    let b = roi_3d_box(w, h, d);
    b.validate_within(w, h, d)?;
    let out = crop_volume(v, &b)?;
    Ok((out, b))
}

/// Crop a label map with the box recorded for its paired volume.
pub fn crop_labels(l: &LabelMap, b: &RoiBox) -> Result<LabelMap> {
    let (w, h, d) = l.shape();
    b.validate_within(w, h, d)?;
    let labels = l
        .labels
        .slice(s![b.x0..b.x1, b.y0..b.y1, b.z0..b.z1])
        .to_owned();
    Ok(LabelMap { labels })
}

/// Affine min-max rescale of a volume to [0, 255].
///
/// A constant volume maps to all zeros.
pub fn normalize_intensity(v: &Volume) -> Volume {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &x in v.voxels.iter() {
        min = min.min(x);
        max = max.max(x);
    }
    let mut out = v.clone();
    if max > min {
        let scale = 255.0 / (max - min);
        out.voxels.mapv_inplace(|x| (x - min) * scale);
    } else {
        out.voxels.fill(0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Domain, Protocol};
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume_from(voxels: Array3<f32>) -> Volume {
        Volume::new(voxels, [1.0; 3], Domain::Source, Protocol::Synthetic, "t").unwrap()
    }

    #[test]
    fn crop_2d_448() {
        // plug W = H = 448 into the index formulas
        let slice = Array2::<f32>::zeros((448, 448));
        let (out, b) = crop_roi_2d(slice.view()).unwrap();
        assert_eq!((b.x0, b.x1, b.y0, b.y1), (112, 336, 112, 336));
        assert_eq!(out.dim(), (224, 224));
    }

    #[test]
    fn crop_2d_384() {
        let slice = Array2::<f32>::zeros((384, 384));
        let (out, b) = crop_roi_2d(slice.view()).unwrap();
        assert_eq!((b.x0, b.x1, b.y0, b.y1), (96, 288, 96, 288));
        assert_eq!(out.dim(), (192, 192));
    }

    #[test]
    fn crop_2d_smallest_legal() {
        let slice = Array2::<f32>::zeros((8, 8));
        let (out, b) = crop_roi_2d(slice.view()).unwrap();
        assert_eq!((b.x0, b.x1, b.y0, b.y1), (2, 6, 2, 6));
        assert_eq!(out.dim(), (4, 4));
    }

    #[test]
    fn crop_2d_rejects_tiny() {
        let slice = Array2::<f32>::zeros((4, 4));
        assert!(crop_roi_2d(slice.view()).is_err());
    }

    #[test]
    fn crop_3d_448() {
        let v = volume_from(Array3::zeros((448, 448, 80)));
        let (_, b) = crop_roi_3d(&v).unwrap();
        assert_eq!(
            (b.x0, b.x1, b.y0, b.y1, b.z0, b.z1),
            (112, 336, 168, 336, 0, 80)
        );
    }

    #[test]
    fn crop_3d_384() {
        let v = volume_from(Array3::zeros((384, 384, 40)));
        let (_, b) = crop_roi_3d(&v).unwrap();
        assert_eq!(
            (b.x0, b.x1, b.y0, b.y1, b.z0, b.z1),
            (96, 288, 144, 288, 0, 40)
        );
    }

    #[test]
    fn crop_3d_depth_one_preserved() {
        let v = volume_from(Array3::zeros((16, 16, 1)));
        let (out, b) = crop_roi_3d(&v).unwrap();
        assert_eq!((b.z0, b.z1), (0, 1));
        assert_eq!(out.shape().2, 1);
    }

    #[test]
    fn recorded_box_reproduces_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = rng.gen_range(8..40);
            let h = rng.gen_range(8..40);
            let slice = Array2::from_shape_fn((w, h), |_| rng.gen::<f32>());
            let (out, b) = crop_roi_2d(slice.view()).unwrap();
            let resliced = slice.slice(s![b.x0..b.x1, b.y0..b.y1]);
            assert_eq!(out, resliced.to_owned());
        }
    }

    #[test]
    fn even_dims_crop_to_half() {
        for (w, h) in [(16usize, 24usize), (32, 32), (448, 384)] {
            let slice = Array2::<f32>::zeros((w, h));
            let (out, _) = crop_roi_2d(slice.view()).unwrap();
            assert_eq!(out.dim(), (w / 2, h / 2));
        }
    }

    #[test]
    fn crop_labels_matches_volume_crop_and_preserves_counts() {
        // foreground strictly inside the 3D ROI
        let mut labels = Array3::<u8>::zeros((32, 32, 4));
        labels[[10, 14, 1]] = 1;
        labels[[12, 18, 2]] = 2;
        let l = LabelMap::new(labels).unwrap();
        let v = volume_from(Array3::zeros((32, 32, 4)));
        let (cv, b) = crop_roi_3d(&v).unwrap();
        let cl = crop_labels(&l, &b).unwrap();
        assert_eq!(cl.shape(), cv.shape());
        let before = l.class_counts();
        let after = cl.class_counts();
        assert_eq!(before[1], after[1]);
        assert_eq!(before[2], after[2]);
    }

    #[test]
    fn crop_labels_full_extent_is_identity() {
        let mut labels = Array3::<u8>::zeros((8, 8, 2));
        labels[[3, 3, 0]] = 1;
        let l = LabelMap::new(labels).unwrap();
        let b = RoiBox {
            x0: 0,
            x1: 8,
            y0: 0,
            y1: 8,
            z0: 0,
            z1: 2,
        };
        let cl = crop_labels(&l, &b).unwrap();
        assert_eq!(cl, l);
    }

    #[test]
    fn crop_labels_out_of_bounds_errors() {
        let l = LabelMap::new(Array3::zeros((8, 8, 2))).unwrap();
        let b = RoiBox {
            x0: 0,
            x1: 9,
            y0: 0,
            y1: 8,
            z0: 0,
            z1: 2,
        };
        assert!(crop_labels(&l, &b).is_err());
    }

    #[test]
    fn normalize_affine_example() {
        // voxels {0.0, 0.5, 1.0} must map to {0.0, 127.5, 255.0}
        let mut voxels = Array3::<f32>::zeros((8, 8, 1));
        voxels[[0, 0, 0]] = 0.0;
        voxels[[1, 0, 0]] = 0.5;
        voxels[[2, 0, 0]] = 1.0;
        let v = volume_from(voxels);
        let n = normalize_intensity(&v);
        assert_eq!(n.voxels[[0, 0, 0]], 0.0);
        assert_eq!(n.voxels[[1, 0, 0]], 127.5);
        assert_eq!(n.voxels[[2, 0, 0]], 255.0);
    }

    #[test]
    fn normalize_full_range_is_fixed_point() {
        let vals: Vec<f32> = (0..=255).map(|i| i as f32).collect();
        let v = Volume {
            voxels: Array3::from_shape_vec((16, 16, 1), vals).unwrap(),
            spacing: [1.0; 3],
            domain: Domain::Source,
            protocol: Protocol::Synthetic,
            case_id: "t".into(),
            roi: None,
        };
        let n = normalize_intensity(&v);
        assert_eq!(n.voxels, v.voxels);
    }

    #[test]
    fn normalize_constant_maps_to_zero() {
        let v = volume_from(Array3::from_elem((8, 8, 2), 3.7));
        let n = normalize_intensity(&v);
        assert!(n.voxels.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_idempotent_and_preserves_extrema_locations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let v = volume_from(Array3::from_shape_fn((10, 9, 3), |_| {
                rng.gen::<f32>() * 40.0 - 7.0
            }));
            let n1 = normalize_intensity(&v);
            let n2 = normalize_intensity(&n1);
            for (a, b) in n1.voxels.iter().zip(n2.voxels.iter()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
            let argmax = |vol: &Volume| {
                vol.voxels
                    .indexed_iter()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            };
            let argmin = |vol: &Volume| {
                vol.voxels
                    .indexed_iter()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            };
            assert_eq!(argmax(&v), argmax(&n1));
            assert_eq!(argmin(&v), argmin(&n1));
            // output spans [0, 255]
            let max = n1.voxels.iter().cloned().fold(f32::MIN, f32::max);
            let min = n1.voxels.iter().cloned().fold(f32::MAX, f32::min);
            assert!((max - 255.0).abs() < 1e-4 && min.abs() < 1e-4);
        }
    }
}
