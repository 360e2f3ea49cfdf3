//! Synthetic two-domain phantom generator.
//!
//! Every case renders two ellipsoidal structures on a textured background: a
//! larger "VS" blob (class 1) and a small thin "cochlea" (class 2), both
//! placed strictly inside the 3D ROI used by preprocessing so cropping never
//! removes foreground. Source cases render one intensity profile; target
//! cases apply a fixed invertible appearance shift (intensity inversion,
//! gamma 1.8, additive band-limited texture) scaled by `shift_strength`.
//! Geometry is drawn from the same distribution in both domains.

use crate::data::{Dataset, Domain, LabelMap, PhantomSpec, Protocol, Volume};
use crate::error::Result;
use crate::preprocess::roi_3d_box;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPACING: [f64; 3] = [0.5, 0.5, 1.0];
const GAMMA: f64 = 1.8;
const TEXTURE_AMPLITUDE: f64 = 0.08;

struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    fn radius_at(&self, x: f64, y: f64, z: f64) -> f64 {
        let dx = (x - self.center[0]) / self.axes[0];
        let dy = (y - self.center[1]) / self.axes[1];
        let dz = (z - self.center[2]) / self.axes[2];
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

struct CaseGeometry {
    vs: Ellipsoid,
    cochlea: Ellipsoid,
    vs_level: f64,
    cochlea_level: f64,
    bg_level: f64,
    grad: [f64; 3],
    tissue_waves: Vec<([f64; 3], [f64; 3], f64)>,
    noise_seed: u64,
}

/// Clamp an axis length and pick a center so the full ellipsoid extent stays
/// inside `[lo, hi)` with margin.
fn place_axis(rng: &mut ChaCha8Rng, lo: f64, hi: f64, want: f64) -> (f64, f64) {
    let margin = 0.6;
    let span = hi - lo;
    let mut a = want;
    if span < 2.0 * (a + margin) {
        a = (span / 2.0 - margin).max(0.7);
    }
    let clo = lo + a + margin;
    let chi = hi - a - margin;
    let c = if chi > clo {
        rng.gen_range(clo..chi)
    } else {
        (lo + hi) / 2.0
    };
    (c, a)
}

fn sample_geometry(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> CaseGeometry {
    let (w, h, d) = shape;
    let roi = roi_3d_box(w, h, d);
    let (rx0, rx1) = (roi.x0 as f64, roi.x1 as f64);
    let (ry0, ry1) = (roi.y0 as f64, roi.y1 as f64);
    let (rz0, rz1) = (roi.z0 as f64, roi.z1 as f64);
    let (rw, rh, rd) = (rx1 - rx0, ry1 - ry0, rz1 - rz0);

    let want_vs = [
        rng.gen_range(0.10..0.16) * rw,
        rng.gen_range(0.12..0.18) * rh,
        rng.gen_range(0.14..0.22) * rd,
    ]
    .map(|a| a.max(1.6));
    let (cx, ax) = place_axis(rng, rx0, rx1, want_vs[0]);
    let (cy, ay) = place_axis(rng, ry0, ry1, want_vs[1]);
    let (cz, az) = place_axis(rng, rz0, rz1, want_vs[2]);
    let vs = Ellipsoid {
        center: [cx, cy, cz],
        axes: [ax, ay, az],
    };

    let want_co = [
        (rng.gen_range(0.08..0.12) * rw).max(2.0),
        (rng.gen_range(0.035..0.055) * rh).max(0.9),
        (rng.gen_range(0.05..0.09) * rd).max(0.9),
    ];
    let min_sep = vs.axes.iter().cloned().fold(0.0, f64::max)
        + want_co.iter().cloned().fold(0.0, f64::max)
        + 1.5;
    let mut cochlea = None;
    for _ in 0..40 {
        let (ccx, cax) = place_axis(rng, rx0, rx1, want_co[0]);
        let (ccy, cay) = place_axis(rng, ry0, ry1, want_co[1]);
        let (ccz, caz) = place_axis(rng, rz0, rz1, want_co[2]);
        let dist = ((ccx - vs.center[0]).powi(2)
            + (ccy - vs.center[1]).powi(2)
            + (ccz - vs.center[2]).powi(2))
        .sqrt();
        if dist >= min_sep {
            cochlea = Some(Ellipsoid {
                center: [ccx, ccy, ccz],
                axes: [cax, cay, caz],
            });
            break;
        }
    }
    let cochlea = cochlea.unwrap_or_else(|| {
        // deterministic fallback: mirror the VS center across the ROI center
        let mirror = |c: f64, lo: f64, hi: f64, a: f64| {
            let m = lo + hi - c;
            m.clamp(lo + a + 0.6, hi - a - 0.6)
        };
        Ellipsoid {
            center: [
                mirror(vs.center[0], rx0, rx1, want_co[0]),
                mirror(vs.center[1], ry0, ry1, want_co[1]),
                mirror(vs.center[2], rz0, rz1, want_co[2]),
            ],
            axes: want_co,
        }
    });

    let vs_level = rng.gen_range(0.78..0.86);
    let cochlea_level = rng.gen_range(0.55..0.62);
    let bg_level = rng.gen_range(0.20..0.25);
    let grad = [
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.02..0.02),
    ];
    let tissue_waves = (0..3)
        .map(|_| {
            let freq = [
                rng.gen_range(1.5..3.5),
                rng.gen_range(1.5..3.5),
                rng.gen_range(0.8..2.0),
            ];
            let phase = [
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ];
            (freq, phase, rng.gen_range(0.015..0.035))
        })
        .collect();
    let noise_seed = rng.gen();

    CaseGeometry {
        vs,
        cochlea,
        vs_level,
        cochlea_level,
        bg_level,
        grad,
        tissue_waves,
        noise_seed,
    }
}

/// Band-limited texture waves for the target-domain shift. The frequency band
/// depends on the protocol tag, standing in for the two real acquisition
/// protocols' appearance difference.
fn texture_waves(
    rng: &mut ChaCha8Rng,
    protocol: Protocol,
) -> Vec<([f64; 3], [f64; 3])> {
    let band = match protocol {
        Protocol::P384 => 5.0..8.0,
        _ => 2.0..4.0,
    };
    (0..3)
        .map(|_| {
            let freq = [
                rng.gen_range(band.clone()),
                rng.gen_range(band.clone()),
                rng.gen_range(0.5..1.5),
            ];
            let phase = [
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
            ];
            (freq, phase)
        })
        .collect()
}

/// Soft-edge membership in [0, 1]: 1 well inside the surface, 0 outside.
fn soft_edge(r: f64) -> f64 {
    ((1.05 - r) / 0.22).clamp(0.0, 1.0)
}

fn render_case(
    case_seed: u64,
    shape: (usize, usize, usize),
    domain: Domain,
    protocol: Protocol,
    shift_strength: f64,
    case_id: &str,
) -> Result<(Volume, LabelMap)> {
    let (w, h, d) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let geo = sample_geometry(&mut rng, shape);
    let waves = texture_waves(&mut rng, protocol);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(geo.noise_seed);

    let mut voxels = Array3::zeros((w, h, d));
    let mut labels = Array3::zeros((w, h, d));
    let s = if domain == Domain::Target {
        shift_strength
    } else {
        0.0
    };

    // noise is drawn in x-fastest order so the stream is layout-independent
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (fx, fy, fz) = (x as f64, y as f64, z as f64);
                let mut tissue = 0.0;
                for (freq, phase, amp) in &geo.tissue_waves {
                    tissue += amp
                        * (std::f64::consts::TAU * (freq[0] * fx / w as f64) + phase[0]).sin()
                        * (std::f64::consts::TAU * (freq[1] * fy / h as f64) + phase[1]).sin()
                        * (std::f64::consts::TAU * (freq[2] * fz / d as f64) + phase[2]).sin();
                }
                let bg = geo.bg_level
                    + geo.grad[0] * fx / w as f64
                    + geo.grad[1] * fy / h as f64
                    + geo.grad[2] * fz / d as f64
                    + tissue
                    + noise_rng.gen_range(-0.015..0.015);

                let r_vs = geo.vs.radius_at(fx, fy, fz);
                let r_co = geo.cochlea.radius_at(fx, fy, fz);
                let w_vs = soft_edge(r_vs);
                let w_co = soft_edge(r_co);
                let mut raw = bg;
                raw = raw * (1.0 - w_vs) + geo.vs_level * w_vs;
                raw = raw * (1.0 - w_co) + geo.cochlea_level * w_co;

                let value = if s > 0.0 {
                    let inverted = (1.0 - raw).clamp(0.0, 1.0).powf(GAMMA);
                    let mut texture = 0.0;
                    for (freq, phase) in &waves {
                        texture += (std::f64::consts::TAU * (freq[0] * fx / w as f64) + phase[0])
                            .sin()
                            * (std::f64::consts::TAU * (freq[1] * fy / h as f64) + phase[1]).sin()
                            * (std::f64::consts::TAU * (freq[2] * fz / d as f64) + phase[2]).sin();
                    }
                    (1.0 - s) * raw + s * inverted + s * TEXTURE_AMPLITUDE * texture
                } else {
                    raw
                };
                voxels[[x, y, z]] = value as f32;

                if r_vs <= 1.0 {
                    labels[[x, y, z]] = 1;
                } else if r_co <= 1.0 {
                    labels[[x, y, z]] = 2;
                }
            }
        }
    }

    let volume = Volume::new(voxels, SPACING, domain, protocol, case_id)?;
    let labelmap = LabelMap::new(labels)?;
    Ok((volume, labelmap))
}

/// Generate a deterministic two-domain phantom dataset.
///
/// Protocol tags alternate p448/p384 round-robin within each domain. Target
/// ground truth is returned only in the dataset's held-out side.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let source_seeds: Vec<u64> = (0..spec.n_source).map(|_| master.gen()).collect();
    let target_seeds: Vec<u64> = (0..spec.n_target).map(|_| master.gen()).collect();
    let protocol_for = |i: usize| {
        if i % 2 == 0 {
            Protocol::P448
        } else {
            Protocol::P384
        }
    };

    let mut source_cases = Vec::with_capacity(spec.n_source);
    for (i, &seed) in source_seeds.iter().enumerate() {
        let case = render_case(
            seed,
            spec.shape,
            Domain::Source,
            protocol_for(i),
            spec.shift_strength,
            &format!("src-{i:03}"),
        )?;
        source_cases.push(case);
    }

    let mut target_cases = Vec::with_capacity(spec.n_target);
    let mut target_truth = Vec::with_capacity(spec.n_target);
    for (j, &seed) in target_seeds.iter().enumerate() {
        let (v, l) = render_case(
            seed,
            spec.shape,
            Domain::Target,
            protocol_for(j),
            spec.shift_strength,
            &format!("tgt-{j:03}"),
        )?;
        target_cases.push(v);
        target_truth.push(l);
    }

    Dataset::new(source_cases, target_cases, Some(target_truth))
}
