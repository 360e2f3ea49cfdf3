//! im2col-based convolution kernels, 2D and 3D, with hand-derived backward
//! passes. Single-threaded and deterministic.

use ndarray::{Array1, Array2, Array4, Array5, ArrayView4, ArrayView5, Axis};

pub fn conv2d_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold one sample `(Cin, W, H)` into `(Cin*K*K, Wo*Ho)` with zero padding.
fn im2col2d(
    x: &ArrayView4<f32>,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    ho: usize,
) -> Array2<f32> {
    let (_, cin, w, h) = x.dim();
    let mut col = Array2::zeros((cin * k * k, wo * ho));
    for ci in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for ow in 0..wo {
                    let xi = (ow * stride + ki) as isize - pad as isize;
                    if xi < 0 || xi >= w as isize {
                        continue;
                    }
                    for oh in 0..ho {
                        let xj = (oh * stride + kj) as isize - pad as isize;
                        if xj < 0 || xj >= h as isize {
                            continue;
                        }
                        col[[row, ow * ho + oh]] = x[[n, ci, xi as usize, xj as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the column gradient back onto the input gradient.
fn col2im2d(
    dcol: &Array2<f32>,
    dx: &mut Array4<f32>,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    ho: usize,
) {
    let (_, cin, w, h) = dx.dim();
    for ci in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for ow in 0..wo {
                    let xi = (ow * stride + ki) as isize - pad as isize;
                    if xi < 0 || xi >= w as isize {
                        continue;
                    }
                    for oh in 0..ho {
                        let xj = (oh * stride + kj) as isize - pad as isize;
                        if xj < 0 || xj >= h as isize {
                            continue;
                        }
                        dx[[n, ci, xi as usize, xj as usize]] += dcol[[row, ow * ho + oh]];
                    }
                }
            }
        }
    }
}

/// x: (N, Cin, W, H), w: (Cout, Cin, K, K), b: (Cout) -> (N, Cout, Wo, Ho)
pub fn conv2d_forward(
    x: &ArrayView4<f32>,
    w: &ArrayView4<f32>,
    b: &Array1<f32>,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let (n, _cin, iw, ih) = x.dim();
    let (cout, cin_w, k, _) = w.dim();
    debug_assert_eq!(_cin, cin_w);
    let wo = conv2d_out_dim(iw, k, stride, pad);
    let ho = conv2d_out_dim(ih, k, stride, pad);
    let w2 = w
        .to_shape((cout, cin_w * k * k))
        .expect("conv weight reshape");
    let mut y = Array4::zeros((n, cout, wo, ho));
    for ni in 0..n {
        let col = im2col2d(x, ni, k, stride, pad, wo, ho);
        let out = w2.dot(&col); // (Cout, Wo*Ho)
        for co in 0..cout {
            for ow in 0..wo {
                for oh in 0..ho {
                    y[[ni, co, ow, oh]] = out[[co, ow * ho + oh]] + b[co];
                }
            }
        }
    }
    y
}

/// Returns (dx, dw, db).
pub fn conv2d_backward(
    x: &ArrayView4<f32>,
    w: &ArrayView4<f32>,
    dy: &ArrayView4<f32>,
    stride: usize,
    pad: usize,
) -> (Array4<f32>, Array4<f32>, Array1<f32>) {
    let (n, cin, _, _) = x.dim();
    let (cout, _, k, _) = w.dim();
    let (_, _, wo, ho) = dy.dim();
    let w2 = w
        .to_shape((cout, cin * k * k))
        .expect("conv weight reshape");
    let mut dx = Array4::zeros(x.raw_dim());
    let mut dw2 = Array2::<f32>::zeros((cout, cin * k * k));
    let mut db = Array1::zeros(cout);
    for ni in 0..n {
        let mut dy_n = Array2::zeros((cout, wo * ho));
        for co in 0..cout {
            for ow in 0..wo {
                for oh in 0..ho {
                    let g = dy[[ni, co, ow, oh]];
                    dy_n[[co, ow * ho + oh]] = g;
                    db[co] += g;
                }
            }
        }
        let col = im2col2d(x, ni, k, stride, pad, wo, ho);
        dw2 = dw2 + dy_n.dot(&col.t());
        let dcol = w2.t().dot(&dy_n); // (Cin*K*K, Wo*Ho)
        col2im2d(&dcol, &mut dx, ni, k, stride, pad, wo, ho);
    }
    let dw = dw2
        .into_shape((cout, cin, k, k))
        .expect("conv grad reshape");
    (dx, dw, db)
}

fn im2col3d(
    x: &ArrayView5<f32>,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    ho: usize,
    do_: usize,
) -> Array2<f32> {
    let (_, cin, w, h, d) = x.dim();
    let mut col = Array2::zeros((cin * k * k * k, wo * ho * do_));
    for ci in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                for kl in 0..k {
                    let row = ((ci * k + ki) * k + kj) * k + kl;
                    for ow in 0..wo {
                        let xi = (ow * stride + ki) as isize - pad as isize;
                        if xi < 0 || xi >= w as isize {
                            continue;
                        }
                        for oh in 0..ho {
                            let xj = (oh * stride + kj) as isize - pad as isize;
                            if xj < 0 || xj >= h as isize {
                                continue;
                            }
                            for od in 0..do_ {
                                let xl = (od * stride + kl) as isize - pad as isize;
                                if xl < 0 || xl >= d as isize {
                                    continue;
                                }
                                col[[row, (ow * ho + oh) * do_ + od]] =
                                    x[[n, ci, xi as usize, xj as usize, xl as usize]];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im3d(
    dcol: &Array2<f32>,
    dx: &mut Array5<f32>,
    n: usize,
    k: usize,
    stride: usize,
    pad: usize,
    wo: usize,
    ho: usize,
    do_: usize,
) {
    let (_, cin, w, h, d) = dx.dim();
    for ci in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                for kl in 0..k {
                    let row = ((ci * k + ki) * k + kj) * k + kl;
                    for ow in 0..wo {
                        let xi = (ow * stride + ki) as isize - pad as isize;
                        if xi < 0 || xi >= w as isize {
                            continue;
                        }
                        for oh in 0..ho {
                            let xj = (oh * stride + kj) as isize - pad as isize;
                            if xj < 0 || xj >= h as isize {
                                continue;
                            }
                            for od in 0..do_ {
                                let xl = (od * stride + kl) as isize - pad as isize;
                                if xl < 0 || xl >= d as isize {
                                    continue;
                                }
                                dx[[n, ci, xi as usize, xj as usize, xl as usize]] +=
                                    dcol[[row, (ow * ho + oh) * do_ + od]];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// x: (N, Cin, W, H, D), w: (Cout, Cin, K, K, K), b: (Cout).
pub fn conv3d_forward(
    x: &ArrayView5<f32>,
    w: &ArrayView5<f32>,
    b: &Array1<f32>,
    stride: usize,
    pad: usize,
) -> Array5<f32> {
    let (n, _cin, iw, ih, id) = x.dim();
    let (cout, cin_w, k, _, _) = w.dim();
    let wo = conv2d_out_dim(iw, k, stride, pad);
    let ho = conv2d_out_dim(ih, k, stride, pad);
    let do_ = conv2d_out_dim(id, k, stride, pad);
    let w2 = w
        .to_shape((cout, cin_w * k * k * k))
        .expect("conv weight reshape");
    let mut y = Array5::zeros((n, cout, wo, ho, do_));
    for ni in 0..n {
        let col = im2col3d(x, ni, k, stride, pad, wo, ho, do_);
        let out = w2.dot(&col);
        for co in 0..cout {
            for ow in 0..wo {
                for oh in 0..ho {
                    for od in 0..do_ {
                        y[[ni, co, ow, oh, od]] = out[[co, (ow * ho + oh) * do_ + od]] + b[co];
                    }
                }
            }
        }
    }
    y
}

pub fn conv3d_backward(
    x: &ArrayView5<f32>,
    w: &ArrayView5<f32>,
    dy: &ArrayView5<f32>,
    stride: usize,
    pad: usize,
) -> (Array5<f32>, Array5<f32>, Array1<f32>) {
    let (n, cin, _, _, _) = x.dim();
    let (cout, _, k, _, _) = w.dim();
    let (_, _, wo, ho, do_) = dy.dim();
    let w2 = w
        .to_shape((cout, cin * k * k * k))
        .expect("conv weight reshape");
    let mut dx = Array5::zeros(x.raw_dim());
    let mut dw2 = Array2::<f32>::zeros((cout, cin * k * k * k));
    let mut db = Array1::zeros(cout);
    for ni in 0..n {
        let mut dy_n = Array2::zeros((cout, wo * ho * do_));
        for co in 0..cout {
            for ow in 0..wo {
                for oh in 0..ho {
                    for od in 0..do_ {
                        let g = dy[[ni, co, ow, oh, od]];
                        dy_n[[co, (ow * ho + oh) * do_ + od]] = g;
                        db[co] += g;
                    }
                }
            }
        }
        let col = im2col3d(x, ni, k, stride, pad, wo, ho, do_);
        dw2 = dw2 + dy_n.dot(&col.t());
        let dcol = w2.t().dot(&dy_n);
        col2im3d(&dcol, &mut dx, ni, k, stride, pad, wo, ho, do_);
    }
    let dw = dw2
        .into_shape((cout, cin, k, k, k))
        .expect("conv grad reshape");
    (dx, dw, db)
}

/// Reference direct convolution used by tests as an independent oracle.
#[cfg(test)]
pub fn conv2d_naive(
    x: &ArrayView4<f32>,
    w: &ArrayView4<f32>,
    b: &Array1<f32>,
    stride: usize,
    pad: usize,
) -> Array4<f32> {
    let (n, cin, iw, ih) = x.dim();
    let (cout, _, k, _) = w.dim();
    let wo = conv2d_out_dim(iw, k, stride, pad);
    let ho = conv2d_out_dim(ih, k, stride, pad);
    let mut y = Array4::zeros((n, cout, wo, ho));
    for ni in 0..n {
        for co in 0..cout {
            for ow in 0..wo {
                for oh in 0..ho {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ki in 0..k {
                            for kj in 0..k {
                                let xi = (ow * stride + ki) as isize - pad as isize;
                                let xj = (oh * stride + kj) as isize - pad as isize;
                                if xi >= 0 && xi < iw as isize && xj >= 0 && xj < ih as isize {
                                    acc += w[[co, ci, ki, kj]]
                                        * x[[ni, ci, xi as usize, xj as usize]];
                                }
                            }
                        }
                    }
                    y[[ni, co, ow, oh]] = acc;
                }
            }
        }
    }
    y
}

#[allow(dead_code)]
pub fn sum_batch(x: &Array4<f32>) -> f32 {
    x.sum_axis(Axis(0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array4, Array5};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand4(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f32> {
        Array4::from_shape_fn(shape, |_| rng.gen::<f32>() * 2.0 - 1.0)
    }

    #[test]
    fn conv2d_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (1, 0, 1)] {
            let x = rand4(&mut rng, (2, 3, 8, 6));
            let w = rand4(&mut rng, (4, 3, k, k));
            let b = Array1::from_shape_fn(4, |_| rng.gen::<f32>());
            let fast = conv2d_forward(&x.view(), &w.view(), &b, stride, pad);
            let slow = conv2d_naive(&x.view(), &w.view(), &b, stride, pad);
            assert_eq!(fast.dim(), slow.dim());
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    /// Finite-difference check of conv2d gradients through a sum-of-squares
    /// head: L = 0.5 * sum(y^2), so dy = y.
    #[test]
    fn conv2d_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand4(&mut rng, (1, 2, 5, 5));
        let w = rand4(&mut rng, (3, 2, 3, 3));
        let b = Array1::from_shape_fn(3, |_| rng.gen::<f32>());
        let (stride, pad) = (2, 1);

        let loss = |x: &Array4<f32>, w: &Array4<f32>, b: &Array1<f32>| -> f32 {
            let y = conv2d_forward(&x.view(), &w.view(), b, stride, pad);
            0.5 * y.iter().map(|v| v * v).sum::<f32>()
        };
        let y = conv2d_forward(&x.view(), &w.view(), &b, stride, pad);
        let (dx, dw, db) = conv2d_backward(&x.view(), &w.view(), &y.view(), stride, pad);

        let h = 1e-2f32;
        let mut xp = x.clone();
        for idx in [[0usize, 0, 0, 0], [0, 1, 2, 3], [0, 0, 4, 4]] {
            xp[idx] += h;
            let lp = loss(&xp, &w, &b);
            xp[idx] -= 2.0 * h;
            let lm = loss(&xp, &w, &b);
            xp[idx] += h;
            let fd = (lp - lm) / (2.0 * h);
            let an = dx[idx];
            assert!((fd - an).abs() < 2e-2 * fd.abs().max(an.abs()).max(1.0));
        }
        let mut wp = w.clone();
        for idx in [[0usize, 0, 0, 0], [2, 1, 2, 2], [1, 0, 1, 2]] {
            wp[idx] += h;
            let lp = loss(&x, &wp, &b);
            wp[idx] -= 2.0 * h;
            let lm = loss(&x, &wp, &b);
            wp[idx] += h;
            let fd = (lp - lm) / (2.0 * h);
            let an = dw[idx];
            assert!((fd - an).abs() < 2e-2 * fd.abs().max(an.abs()).max(1.0));
        }
        let mut bp = b.clone();
        bp[1] += h;
        let lp = loss(&x, &w, &bp);
        bp[1] -= 2.0 * h;
        let lm = loss(&x, &w, &bp);
        let fd = (lp - lm) / (2.0 * h);
        assert!((fd - db[1]).abs() < 2e-2 * fd.abs().max(db[1].abs()).max(1.0));
    }

    #[test]
    fn conv3d_backward_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array5::from_shape_fn((1, 2, 4, 4, 3), |_| rng.gen::<f32>() * 2.0 - 1.0);
        let w = Array5::from_shape_fn((2, 2, 3, 3, 3), |_| rng.gen::<f32>() * 0.5 - 0.25);
        let b = Array1::from_shape_fn(2, |_| rng.gen::<f32>());
        let (stride, pad) = (1, 1);

        let loss = |x: &Array5<f32>, w: &Array5<f32>, b: &Array1<f32>| -> f32 {
            let y = conv3d_forward(&x.view(), &w.view(), b, stride, pad);
            0.5 * y.iter().map(|v| v * v).sum::<f32>()
        };
        let y = conv3d_forward(&x.view(), &w.view(), &b, stride, pad);
        let (dx, dw, db) = conv3d_backward(&x.view(), &w.view(), &y.view(), stride, pad);

        let h = 1e-2f32;
        let mut xp = x.clone();
        for idx in [[0usize, 0, 0, 0, 0], [0, 1, 2, 3, 1], [0, 0, 3, 3, 2]] {
            xp[idx] += h;
            let lp = loss(&xp, &w, &b);
            xp[idx] -= 2.0 * h;
            let lm = loss(&xp, &w, &b);
            xp[idx] += h;
            let fd = (lp - lm) / (2.0 * h);
            let an = dx[idx];
            assert!(
                (fd - an).abs() < 2e-2 * fd.abs().max(an.abs()).max(1.0),
                "dx {fd} vs {an}"
            );
        }
        let mut wp = w.clone();
        for idx in [[0usize, 0, 0, 0, 0], [1, 1, 2, 2, 2]] {
            wp[idx] += h;
            let lp = loss(&x, &wp, &b);
            wp[idx] -= 2.0 * h;
            let lm = loss(&x, &wp, &b);
            wp[idx] += h;
            let fd = (lp - lm) / (2.0 * h);
            let an = dw[idx];
            assert!(
                (fd - an).abs() < 2e-2 * fd.abs().max(an.abs()).max(1.0),
                "dw {fd} vs {an}"
            );
        }
        let fdb = {
            let mut bp = b.clone();
            bp[0] += h;
            let lp = loss(&x, &w, &bp);
            bp[0] -= 2.0 * h;
            let lm = loss(&x, &w, &bp);
            (lp - lm) / (2.0 * h)
        };
        assert!((fdb - db[0]).abs() < 2e-2 * fdb.abs().max(db[0].abs()).max(1.0));
    }

    #[test]
    fn conv3d_stride2_output_shape() {
        let x = Array5::<f32>::zeros((1, 4, 8, 6, 4));
        let w = Array5::<f32>::zeros((8, 4, 2, 2, 2));
        let b = Array1::zeros(8);
        let y = conv3d_forward(&x.view(), &w.view(), &b, 2, 0);
        assert_eq!(y.dim(), (1, 8, 4, 3, 2));
    }
}
