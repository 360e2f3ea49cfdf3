//! Read-only NIfTI-1 ingestion.
//!
//! Supports single-channel 3D images in the common scalar datatypes, little
//! or big endian. Writing NIfTI is out of scope; the native format handles
//! persistence.

use crate::data::{Domain, Protocol, Volume};
use crate::error::{Error, Result};
use ndarray::Array3;
use std::path::Path;

const HEADER_SIZE: usize = 348;

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl<'a> Reader<'a> {
    fn i16_at(&self, off: usize) -> i16 {
        let b: [u8; 2] = self.bytes[off..off + 2].try_into().unwrap();
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }
    fn i32_at(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }
    fn f32_at(&self, off: usize) -> f32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    }
    fn f64_at(&self, off: usize) -> f64 {
        let b: [u8; 8] = self.bytes[off..off + 8].try_into().unwrap();
        if self.little {
            f64::from_le_bytes(b)
        } else {
            f64::from_be_bytes(b)
        }
    }
}

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_string_lossy().into_owned(),
        reason: reason.into(),
    }
}

/// Ingest a NIfTI-1 file as a volume.
///
/// The domain tag is caller-supplied; the protocol is inferred from the
/// in-plane dimension (448 or 384), falling back to `synthetic`.
pub fn ingest_nifti(path: &Path, domain: Domain) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.to_string_lossy(), e))?;
    if bytes.len() < HEADER_SIZE {
        return Err(ingest_err(path, "file shorter than the 348-byte header"));
    }

    let sizeof_le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let sizeof_be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let little = if sizeof_le == HEADER_SIZE as i32 {
        true
    } else if sizeof_be == HEADER_SIZE as i32 {
        false
    } else {
        return Err(ingest_err(path, "sizeof_hdr is not 348; not NIfTI-1"));
    };
    let magic = &bytes[344..348];
    if magic != b"n+1\0" && magic != b"ni1\0" {
        return Err(ingest_err(path, "bad magic; not NIfTI-1"));
    }

    let r = Reader {
        bytes: &bytes,
        little,
    };
    let ndim = r.i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(ingest_err(path, format!("ndim {ndim} outside 1..=7")));
    }
    let mut dim = [1usize; 7];
    for (i, d) in dim.iter_mut().enumerate() {
        let raw = r.i16_at(42 + 2 * i);
        if (i as i16) < ndim && raw < 1 {
            return Err(ingest_err(path, format!("dim[{}] = {raw} invalid", i + 1)));
        }
        *d = raw.max(1) as usize;
    }
    if ndim > 3 && dim[3..].iter().any(|&d| d > 1) {
        return Err(ingest_err(
            path,
            "multi-channel / time-series images are unsupported; expected a single-channel 3D image",
        ));
    }
    let (w, h, d) = (dim[0], dim[1], dim[2]);

    let datatype = r.i16_at(70);
    let elem_size = match datatype {
        2 => 1,  // u8
        4 => 2,  // i16
        8 => 4,  // i32
        16 => 4, // f32
        64 => 8, // f64
        other => {
            return Err(ingest_err(
                path,
                format!("unsupported NIfTI datatype code {other}"),
            ))
        }
    };

    let mut spacing = [0.0f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        *s = r.f32_at(76 + 4 * (i + 1)) as f64;
        if !(*s > 0.0) {
            // tolerate sloppy writers that leave pixdim zeroed
            *s = 1.0;
        }
    }

    let vox_offset = r.f32_at(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_SIZE as f32 {
        return Err(ingest_err(path, format!("bad vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let n = w * h * d;
    if bytes.len() < offset + n * elem_size {
        return Err(ingest_err(
            path,
            format!(
                "payload truncated: need {} bytes at offset {offset}, file has {}",
                n * elem_size,
                bytes.len()
            ),
        ));
    }

    let slope = r.f32_at(112);
    let inter = r.f32_at(116);
    let (slope, inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (slope, inter)
    };

    let read_elem = |i: usize| -> f32 {
        let off = offset + i * elem_size;
        match datatype {
            2 => bytes[off] as f32,
            4 => r.i16_at(off) as f32,
            8 => r.i32_at(off) as f32,
            16 => r.f32_at(off),
            64 => r.f64_at(off) as f32,
            _ => unreachable!(),
        }
    };

    // NIfTI stores x fastest
    let mut voxels = Array3::zeros((w, h, d));
    let mut i = 0;
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                voxels[[x, y, z]] = read_elem(i) * slope + inter;
                i += 1;
            }
        }
    }

    let protocol = match (w, h) {
        (448, _) | (_, 448) => Protocol::P448,
        (384, _) | (_, 384) => Protocol::P384,
        _ => Protocol::Synthetic,
    };

    let case_id = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "nifti".to_string())
        .trim_end_matches(".nii")
        .to_string();

    Volume::new(voxels, spacing, domain, protocol, case_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Minimal NIfTI-1 writer used only to exercise the reader.
    fn build_nifti(
        dim: &[i16],
        datatype: i16,
        little: bool,
        data: &[f32],
        pixdim: [f32; 3],
    ) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        let w16 = |buf: &mut [u8], off: usize, v: i16| {
            let b = if little {
                v.to_le_bytes()
            } else {
                v.to_be_bytes()
            };
            buf[off..off + 2].copy_from_slice(&b);
        };
        let w32f = |buf: &mut [u8], off: usize, v: f32| {
            let b = if little {
                v.to_le_bytes()
            } else {
                v.to_be_bytes()
            };
            buf[off..off + 4].copy_from_slice(&b);
        };
        let sz = if little {
            348i32.to_le_bytes()
        } else {
            348i32.to_be_bytes()
        };
        h[0..4].copy_from_slice(&sz);
        w16(&mut h, 40, dim.len() as i16);
        for (i, &d) in dim.iter().enumerate() {
            w16(&mut h, 42 + 2 * i, d);
        }
        w16(&mut h, 70, datatype);
        let bitpix = match datatype {
            2 => 8,
            4 => 16,
            8 => 32,
            16 => 32,
            64 => 64,
            _ => 0,
        };
        w16(&mut h, 72, bitpix);
        for (i, p) in pixdim.iter().enumerate() {
            w32f(&mut h, 76 + 4 * (i + 1), *p);
        }
        w32f(&mut h, 108, 352.0);
        w32f(&mut h, 112, 1.0); // scl_slope
        h[344..348].copy_from_slice(b"n+1\0");

        for &v in data {
            match datatype {
                16 => {
                    let b = if little {
                        v.to_le_bytes()
                    } else {
                        v.to_be_bytes()
                    };
                    h.extend_from_slice(&b);
                }
                4 => {
                    let i = v as i16;
                    let b = if little {
                        i.to_le_bytes()
                    } else {
                        i.to_be_bytes()
                    };
                    h.extend_from_slice(&b);
                }
                2 => h.push(v as u8),
                _ => panic!("test writer supports f32/i16/u8"),
            }
        }
        h
    }

    #[test]
    fn ingests_448_as_p448() {
        let dir = tempdir().unwrap();
        let data: Vec<f32> = (0..448 * 448).map(|i| (i % 100) as f32).collect();
        let bytes = build_nifti(&[448, 448, 1], 16, true, &data, [0.5, 0.5, 1.5]);
        let p = dir.path().join("case448.nii");
        std::fs::write(&p, bytes).unwrap();
        let v = ingest_nifti(&p, Domain::Source).unwrap();
        assert_eq!(v.protocol, Protocol::P448);
        assert_eq!(v.shape(), (448, 448, 1));
        assert_eq!(v.spacing, [0.5, 0.5, 1.5]);
        assert_eq!(v.case_id, "case448");
        // x-fastest: voxel [1,0,0] is the second element
        assert_eq!(v.voxels[[1, 0, 0]], 1.0);
    }

    #[test]
    fn ingests_384_big_endian_i16_as_p384() {
        let dir = tempdir().unwrap();
        let data: Vec<f32> = (0..384 * 384 * 2).map(|i| (i % 32) as f32).collect();
        let bytes = build_nifti(&[384, 384, 2], 4, false, &data, [1.0, 1.0, 1.0]);
        let p = dir.path().join("case384.nii");
        std::fs::write(&p, bytes).unwrap();
        let v = ingest_nifti(&p, Domain::Target).unwrap();
        assert_eq!(v.protocol, Protocol::P384);
        assert_eq!(v.domain, Domain::Target);
        assert_eq!(v.shape(), (384, 384, 2));
        assert_eq!(v.voxels[[5, 0, 0]], 5.0);
    }

    #[test]
    fn rejects_multichannel_4d() {
        let dir = tempdir().unwrap();
        let data: Vec<f32> = vec![0.0; 8 * 8 * 1 * 3];
        let bytes = build_nifti(&[8, 8, 1, 3], 16, true, &data, [1.0; 3]);
        let p = dir.path().join("4d.nii");
        std::fs::write(&p, bytes).unwrap();
        match ingest_nifti(&p, Domain::Source) {
            Err(Error::Ingest { .. }) => {}
            other => panic!("expected Ingest error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unsupported_datatype() {
        let dir = tempdir().unwrap();
        let data: Vec<f32> = vec![0.0; 64];
        let mut bytes = build_nifti(&[8, 8, 1], 16, true, &data, [1.0; 3]);
        // overwrite datatype with RGB24 (128)
        bytes[70..72].copy_from_slice(&128i16.to_le_bytes());
        let p = dir.path().join("rgb.nii");
        std::fs::write(&p, bytes).unwrap();
        match ingest_nifti(&p, Domain::Source) {
            Err(Error::Ingest { .. }) => {}
            other => panic!("expected Ingest error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_unit_dims_are_tolerated() {
        let dir = tempdir().unwrap();
        let data: Vec<f32> = vec![1.0; 64];
        let bytes = build_nifti(&[8, 8, 1, 1], 16, true, &data, [1.0; 3]);
        let p = dir.path().join("4d1.nii");
        std::fs::write(&p, bytes).unwrap();
        let v = ingest_nifti(&p, Domain::Source).unwrap();
        assert_eq!(v.shape(), (8, 8, 1));
    }
}
