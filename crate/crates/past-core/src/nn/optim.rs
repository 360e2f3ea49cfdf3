//! SGD with momentum and Adam, operating on flat parameter lists.

use ndarray::ArrayD;

pub struct SgdMomentum {
    momentum: f32,
    velocity: Vec<ArrayD<f32>>,
}

impl SgdMomentum {
    pub fn new(params: &[ArrayD<f32>], momentum: f32) -> Self {
        SgdMomentum {
            momentum,
            velocity: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [ArrayD<f32>], grads: &[ArrayD<f32>], lr: f32) {
        assert_eq!(params.len(), self.velocity.len());
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            *v = v.mapv(|x| x * self.momentum) + g;
            *p -= &v.mapv(|x| x * lr);
        }
    }
}

pub struct Adam {
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(params: &[ArrayD<f32>], beta1: f32, beta2: f32) -> Self {
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [ArrayD<f32>], grads: &[ArrayD<f32>], lr: f32) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1c = 1.0 - self.beta1.powi(self.t);
        let b2c = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            });
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let mh = m / b1c;
                let vh = v / b2c;
                *p -= lr * mh / (vh.sqrt() + self.eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    /// Both optimizers descend on a quadratic bowl f(p) = 0.5 p^2.
    #[test]
    fn optimizers_descend_quadratic() {
        let init = ArrayD::from_elem(IxDyn(&[3]), 5.0f32);

        let mut p = vec![init.clone()];
        let mut sgd = SgdMomentum::new(&p, 0.9);
        for _ in 0..100 {
            let g = vec![p[0].clone()];
            sgd.step(&mut p, &g, 0.05);
        }
        assert!(p[0].iter().all(|v| v.abs() < 0.5), "sgd stalled: {:?}", p[0]);

        let mut p = vec![init];
        let mut adam = Adam::new(&p, 0.9, 0.999);
        for _ in 0..300 {
            let g = vec![p[0].clone()];
            adam.step(&mut p, &g, 0.1);
        }
        assert!(p[0].iter().all(|v| v.abs() < 0.5), "adam stalled: {:?}", p[0]);
    }

    #[test]
    fn sgd_step_formula() {
        // one step from rest: p' = p - lr * g
        let mut p = vec![ArrayD::from_elem(IxDyn(&[1]), 1.0f32)];
        let g = vec![ArrayD::from_elem(IxDyn(&[1]), 2.0f32)];
        let mut sgd = SgdMomentum::new(&p, 0.9);
        sgd.step(&mut p, &g, 0.1);
        assert!((p[0][[0]] - 0.8).abs() < 1e-6);
        // second step accumulates momentum: v = 0.9*2 + 2 = 3.8; p = 0.8 - 0.38
        sgd.step(&mut p, &g, 0.1);
        assert!((p[0][[0]] - 0.42).abs() < 1e-6);
    }
}
