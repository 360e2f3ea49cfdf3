//! Minimal reverse-mode autodiff tape over `ArrayD<f32>`.
//!
//! Each training step builds a fresh tape: parameters enter as leaves (with
//! `requires_grad` reflecting whether the current phase trains them), the
//! forward pass records ops, and `run_backward` sweeps the nodes in reverse
//! creation order. Gradients may be seeded at any node before the sweep, so
//! losses can be computed outside the tape (e.g. the fused segmentation
//! loss) and fed back through their logits.

use ndarray::{ArrayD, Axis, Dimension, Ix4, Ix5, IxDyn, Slice};

use super::conv;

pub type NodeId = usize;

enum Op {
    Leaf,
    Affine { x: NodeId, scale: f32 },
    LeakyRelu { x: NodeId, slope: f32 },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Add { a: NodeId, b: NodeId },
    ConcatChannels { a: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Conv3d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Upsample2x { x: NodeId },
    GlobalMean { x: NodeId },
    MseConst { x: NodeId, target: f32 },
    L1Diff { a: NodeId, b: NodeId },
    WeightedSum { terms: Vec<(NodeId, f32)> },
}

struct Node {
    value: ArrayD<f32>,
    grad: Option<ArrayD<f32>>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<f32>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        self.nodes.len() - 1
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn leaf(&mut self, value: ArrayD<f32>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f32> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f32 {
        *self.nodes[id]
            .value
            .iter()
            .next()
            .expect("scalar node has a value")
    }

    pub fn grad(&self, id: NodeId) -> Option<&ArrayD<f32>> {
        self.nodes[id].grad.as_ref()
    }

    pub fn affine(&mut self, x: NodeId, scale: f32, shift: f32) -> NodeId {
        let value = self.nodes[x].value.mapv(|v| v * scale + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f32) -> NodeId {
        let value = self.nodes[x]
            .value
            .mapv(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x].value.mapv(f32::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh { x }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add { a, b }, rg)
    }

    /// Concatenate along the channel axis (axis 1).
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = self.nodes[a].value.view();
        let vb = self.nodes[b].value.view();
        let value = ndarray::concatenate(Axis(1), &[va, vb]).expect("channel concat shapes");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::ConcatChannels { a, b }, rg)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let xv = self.nodes[x]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d input is 4d");
        let wv = self.nodes[w]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d weight is 4d");
        let bv = self.nodes[b]
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("conv bias is 1d")
            .to_owned();
        let y = conv::conv2d_forward(&xv, &wv, &bv, stride, pad);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(y.into_dyn(), Op::Conv2d { x, w, b, stride, pad }, rg)
    }

    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        let xv = self.nodes[x]
            .value
            .view()
            .into_dimensionality::<Ix5>()
            .expect("conv3d input is 5d");
        let wv = self.nodes[w]
            .value
            .view()
            .into_dimensionality::<Ix5>()
            .expect("conv3d weight is 5d");
        let bv = self.nodes[b]
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("conv bias is 1d")
            .to_owned();
        let y = conv::conv3d_forward(&xv, &wv, &bv, stride, pad);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        self.push(y.into_dyn(), Op::Conv3d { x, w, b, stride, pad }, rg)
    }

    /// Nearest-neighbor upsampling by 2 along every spatial axis (axes 2..).
    pub fn upsample2x(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut shape: Vec<usize> = xv.shape().to_vec();
        for s in shape.iter_mut().skip(2) {
            *s *= 2;
        }
        let mut y = ArrayD::<f32>::zeros(IxDyn(&shape));
        for (idx, v) in y.indexed_iter_mut() {
            let mut src: Vec<usize> = idx.slice().to_vec();
            for s in src.iter_mut().skip(2) {
                *s /= 2;
            }
            *v = xv[IxDyn(&src)];
        }
        let rg = self.rg(x);
        self.push(y, Op::Upsample2x { x }, rg)
    }

    /// Mean over all axes except the batch axis: (N, ...) -> (N,).
    pub fn global_mean(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let n = xv.shape()[0];
        let count = xv.len() / n;
        let mut y = ArrayD::<f32>::zeros(IxDyn(&[n]));
        for i in 0..n {
            let sample = xv.index_axis(Axis(0), i);
            y[[i]] = sample.sum() / count as f32;
        }
        let rg = self.rg(x);
        self.push(y, Op::GlobalMean { x }, rg)
    }

    /// Scalar mean squared deviation from a constant target.
    pub fn mse_const(&mut self, x: NodeId, target: f32) -> NodeId {
        let xv = &self.nodes[x].value;
        let n = xv.len() as f32;
        let loss = xv.iter().map(|v| (v - target) * (v - target)).sum::<f32>() / n;
        let value = ArrayD::from_elem(IxDyn(&[]), loss);
        let rg = self.rg(x);
        self.push(value, Op::MseConst { x, target }, rg)
    }

    /// Scalar mean absolute difference.
    pub fn l1_diff(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        let n = va.len() as f32;
        let loss = va
            .iter()
            .zip(vb.iter())
            .map(|(x, y)| (x - y).abs())
            .sum::<f32>()
            / n;
        let value = ArrayD::from_elem(IxDyn(&[]), loss);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::L1Diff { a, b }, rg)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f32)]) -> NodeId {
        let total: f32 = terms.iter().map(|&(id, w)| self.scalar(id) * w).sum();
        let value = ArrayD::from_elem(IxDyn(&[]), total);
        let rg = terms.iter().any(|&(id, _)| self.rg(id));
        self.push(
            value,
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            rg,
        )
    }

    fn accumulate(&mut self, id: NodeId, delta: ArrayD<f32>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut self.nodes[id].grad {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Seed (accumulate) a gradient at a node before the backward sweep.
    pub fn seed_grad(&mut self, id: NodeId, grad: ArrayD<f32>) {
        assert_eq!(self.nodes[id].value.shape(), grad.shape());
        match &mut self.nodes[id].grad {
            Some(g) => *g += &grad,
            slot @ None => *slot = Some(grad),
        }
    }

    /// Seed a scalar node with gradient 1 and sweep.
    pub fn backward_scalar(&mut self, loss: NodeId) {
        self.seed_grad(loss, ArrayD::from_elem(IxDyn(&[]), 1.0));
        self.run_backward();
    }

    pub fn run_backward(&mut self) {
        for id in (0..self.nodes.len()).rev() {
            if self.nodes[id].grad.is_none() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            let grad = self.nodes[id].grad.clone().expect("grad present");
            match op {
                Op::Leaf => {}
                Op::Affine { x, scale } => {
                    self.accumulate(x, grad.mapv(|g| g * scale));
                }
                Op::LeakyRelu { x, slope } => {
                    let dx = ndarray::Zip::from(&grad)
                        .and(&self.nodes[x].value)
                        .map_collect(|&g, &v| if v > 0.0 { g } else { slope * g });
                    self.accumulate(x, dx);
                }
                Op::Relu { x } => {
                    let dx = ndarray::Zip::from(&grad)
                        .and(&self.nodes[x].value)
                        .map_collect(|&g, &v| if v > 0.0 { g } else { 0.0 });
                    self.accumulate(x, dx);
                }
                Op::Tanh { x } => {
                    let dx = ndarray::Zip::from(&grad)
                        .and(&self.nodes[id].value)
                        .map_collect(|&g, &y| g * (1.0 - y * y));
                    self.accumulate(x, dx);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, grad.clone());
                    self.accumulate(b, grad);
                }
                Op::ConcatChannels { a, b } => {
                    let ca = self.nodes[a].value.shape()[1];
                    let da = grad
                        .slice_axis(Axis(1), Slice::from(0..ca))
                        .to_owned();
                    let db = grad
                        .slice_axis(Axis(1), Slice::from(ca..))
                        .to_owned();
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::Conv2d { x, w, b, stride, pad } => {
                    let xv = self.nodes[x].value.view().into_dimensionality::<Ix4>().unwrap();
                    let wv = self.nodes[w].value.view().into_dimensionality::<Ix4>().unwrap();
                    let dyv = grad.view().into_dimensionality::<Ix4>().unwrap();
                    let (dx, dw, db) = conv::conv2d_backward(&xv, &wv, &dyv, stride, pad);
                    self.accumulate(x, dx.into_dyn());
                    self.accumulate(w, dw.into_dyn());
                    self.accumulate(b, db.into_dyn());
                }
                Op::Conv3d { x, w, b, stride, pad } => {
                    let xv = self.nodes[x].value.view().into_dimensionality::<Ix5>().unwrap();
                    let wv = self.nodes[w].value.view().into_dimensionality::<Ix5>().unwrap();
                    let dyv = grad.view().into_dimensionality::<Ix5>().unwrap();
                    let (dx, dw, db) = conv::conv3d_backward(&xv, &wv, &dyv, stride, pad);
                    self.accumulate(x, dx.into_dyn());
                    self.accumulate(w, dw.into_dyn());
                    self.accumulate(b, db.into_dyn());
                }
                Op::Upsample2x { x } => {
                    let mut dx = ArrayD::<f32>::zeros(self.nodes[x].value.raw_dim());
                    for (idx, &g) in grad.indexed_iter() {
                        let mut src: Vec<usize> = idx.slice().to_vec();
                        for s in src.iter_mut().skip(2) {
                            *s /= 2;
                        }
                        dx[IxDyn(&src)] += g;
                    }
                    self.accumulate(x, dx);
                }
                Op::GlobalMean { x } => {
                    let xv = &self.nodes[x].value;
                    let n = xv.shape()[0];
                    let count = (xv.len() / n) as f32;
                    let mut dx = ArrayD::<f32>::zeros(xv.raw_dim());
                    for i in 0..n {
                        let g = grad[[i]] / count;
                        dx.index_axis_mut(Axis(0), i).fill(g);
                    }
                    self.accumulate(x, dx);
                }
                Op::MseConst { x, target } => {
                    let g = *grad.iter().next().unwrap();
                    let n = self.nodes[x].value.len() as f32;
                    let dx = self.nodes[x].value.mapv(|v| g * 2.0 * (v - target) / n);
                    self.accumulate(x, dx);
                }
                Op::L1Diff { a, b } => {
                    let g = *grad.iter().next().unwrap();
                    let n = self.nodes[a].value.len() as f32;
                    let da = ndarray::Zip::from(&self.nodes[a].value)
                        .and(&self.nodes[b].value)
                        .map_collect(|&x, &y| {
                            let s = (x - y).signum();
                            let s = if x == y { 0.0 } else { s };
                            g * s / n
                        });
                    let db = da.mapv(|v| -v);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
                Op::WeightedSum { terms } => {
                    let g = *grad.iter().next().unwrap();
                    for (id_t, w) in terms {
                        self.accumulate(id_t, ArrayD::from_elem(IxDyn(&[]), g * w));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// End-to-end finite-difference check through a small conv net:
    /// conv2d -> leaky_relu -> upsample -> conv2d -> tanh -> mse(0.5).
    #[test]
    fn tape_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = Array4::from_shape_fn((2, 1, 6, 6), |_| rng.gen::<f32>() - 0.5).into_dyn();
        let w1 = Array4::from_shape_fn((3, 1, 4, 4), |_| rng.gen::<f32>() * 0.4 - 0.2).into_dyn();
        let b1 = Array1::from_shape_fn(3, |_| rng.gen::<f32>() * 0.1).into_dyn();
        let w2 = Array4::from_shape_fn((1, 3, 3, 3), |_| rng.gen::<f32>() * 0.4 - 0.2).into_dyn();
        let b2 = Array1::from_shape_fn(1, |_| rng.gen::<f32>() * 0.1).into_dyn();

        let run = |w1: &ArrayD<f32>, b1: &ArrayD<f32>, w2: &ArrayD<f32>, b2: &ArrayD<f32>| -> f32 {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone(), false);
            let w1 = t.leaf(w1.clone(), true);
            let b1 = t.leaf(b1.clone(), true);
            let w2 = t.leaf(w2.clone(), true);
            let b2 = t.leaf(b2.clone(), true);
            let h = t.conv2d(x, w1, b1, 2, 1);
            let h = t.leaky_relu(h, 0.2);
            let h = t.upsample2x(h);
            let h = t.conv2d(h, w2, b2, 1, 1);
            let h = t.tanh(h);
            let l = t.mse_const(h, 0.5);
            t.scalar(l)
        };

        // analytic grads
        let mut t = Tape::new();
        let x = t.leaf(x0.clone(), false);
        let n_w1 = t.leaf(w1.clone(), true);
        let n_b1 = t.leaf(b1.clone(), true);
        let n_w2 = t.leaf(w2.clone(), true);
        let n_b2 = t.leaf(b2.clone(), true);
        let h = t.conv2d(x, n_w1, n_b1, 2, 1);
        let h = t.leaky_relu(h, 0.2);
        let h = t.upsample2x(h);
        let h = t.conv2d(h, n_w2, n_b2, 1, 1);
        let h = t.tanh(h);
        let l = t.mse_const(h, 0.5);
        t.backward_scalar(l);
        assert!(t.grad(x).is_none(), "grad must not flow into frozen input");

        let eps = 3e-3f32;
        let check = |analytic: &ArrayD<f32>,
                     param: &ArrayD<f32>,
                     probe: &dyn Fn(&ArrayD<f32>) -> f32| {
            for flat in [0usize, param.len() / 2, param.len() - 1] {
                let mut p = param.clone();
                let base = p.as_slice_mut().unwrap()[flat];
                p.as_slice_mut().unwrap()[flat] = base + eps;
                let lp = probe(&p);
                p.as_slice_mut().unwrap()[flat] = base - eps;
                let lm = probe(&p);
                let fd = (lp - lm) / (2.0 * eps);
                let an = analytic.as_slice().unwrap()[flat];
                assert!(
                    (fd - an).abs() <= 3e-2 * fd.abs().max(an.abs()).max(0.05),
                    "fd {fd} vs analytic {an} at {flat}"
                );
            }
        };
        check(t.grad(n_w1).unwrap(), &w1, &|p| run(p, &b1, &w2, &b2));
        check(t.grad(n_b1).unwrap(), &b1, &|p| run(&w1, p, &w2, &b2));
        check(t.grad(n_w2).unwrap(), &w2, &|p| run(&w1, &b1, p, &b2));
        check(t.grad(n_b2).unwrap(), &b2, &|p| run(&w1, &b1, &w2, p));
    }

    #[test]
    fn concat_add_global_mean_backward() {
        let a0 = Array4::from_elem((1, 2, 2, 2), 1.0f32).into_dyn();
        let b0 = Array4::from_elem((1, 1, 2, 2), 2.0f32).into_dyn();
        let mut t = Tape::new();
        let a = t.leaf(a0, true);
        let b = t.leaf(b0, true);
        let c = t.concat_channels(a, b); // (1,3,2,2)
        let m = t.global_mean(c); // (1,)
        let l = t.mse_const(m, 0.0);
        t.backward_scalar(l);
        // m = mean = (2*4*1 + 1*4*2)/12 = 4/3; dl/dm = 2*m; dm/dc = 1/12
        let expect = 2.0 * (4.0 / 3.0) / 12.0;
        for &g in t.grad(a).unwrap().iter() {
            assert!((g - expect).abs() < 1e-6);
        }
        for &g in t.grad(b).unwrap().iter() {
            assert!((g - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn l1_and_weighted_sum_values() {
        let a0 = Array4::from_elem((1, 1, 2, 2), 3.0f32).into_dyn();
        let b0 = Array4::from_elem((1, 1, 2, 2), 1.0f32).into_dyn();
        let mut t = Tape::new();
        let a = t.leaf(a0, true);
        let b = t.leaf(b0, false);
        let l1 = t.l1_diff(a, b);
        let l2 = t.mse_const(a, 0.0);
        let total = t.weighted_sum(&[(l1, 2.0), (l2, 0.5)]);
        assert!((t.scalar(l1) - 2.0).abs() < 1e-6);
        assert!((t.scalar(l2) - 9.0).abs() < 1e-6);
        assert!((t.scalar(total) - (4.0 + 4.5)).abs() < 1e-6);
        t.backward_scalar(total);
        // d total / d a = 2 * sign/4 + 0.5 * 2a/4 = 0.5 + 0.75
        for &g in t.grad(a).unwrap().iter() {
            assert!((g - 1.25).abs() < 1e-6);
        }
        assert!(t.grad(b).is_none());
    }

    #[test]
    fn seeded_backward_from_interior_node() {
        // seed dL/dy directly (as the segmentation loss does)
        let x0 = Array4::from_elem((1, 1, 2, 2), 2.0f32).into_dyn();
        let mut t = Tape::new();
        let x = t.leaf(x0, true);
        let y = t.affine(x, 3.0, 1.0);
        let seed = ArrayD::from_elem(IxDyn(&[1, 1, 2, 2]), 0.5f32);
        t.seed_grad(y, seed);
        t.run_backward();
        for &g in t.grad(x).unwrap().iter() {
            assert!((g - 1.5).abs() < 1e-6);
        }
    }
}
