//! Adam with the CycleGAN-conventional defaults (lr 2e-4, betas 0.5/0.999).

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::ArrayD;

pub struct Adam<T: Scalar> {
    params: Vec<Tensor<T>>,
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: Vec<Tensor<T>>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let m = params.iter().map(|p| ArrayD::zeros(p.value().raw_dim())).collect();
        let v = params.iter().map(|p| ArrayD::zeros(p.value().raw_dim())).collect();
        Adam {
            params,
            lr: T::c(lr),
            beta1: T::c(beta1),
            beta2: T::c(beta2),
            eps: T::c(1e-8),
            t: 0,
            m,
            v,
        }
    }

    pub fn step(&mut self) {
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = T::one() - b1.powi(self.t);
        let bc2 = T::one() - b2.powi(self.t);
        for (i, p) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(&g, |m, &g| *m = b1 * *m + (T::one() - b1) * g);
            v.zip_mut_with(&g, |v, &g| *v = b2 * *v + (T::one() - b2) * g * g);
            let lr = self.lr;
            let eps = self.eps;
            p.update_value(|val| {
                ndarray::Zip::from(val).and(&*m).and(&*v).for_each(|x, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *x = *x - lr * mhat / (vhat.sqrt() + eps);
                });
            });
        }
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let x = Tensor::param(arr1(&[5.0_f64, -3.0]).into_dyn());
        let mut opt = Adam::new(vec![x.clone()], 0.1, 0.9, 0.999);
        for _ in 0..200 {
            opt.zero_grad();
            let loss = x.square().sum_all();
            loss.backward();
            opt.step();
        }
        let v = x.to_array();
        assert!(v.iter().all(|&c| c.abs() < 1e-2), "did not converge: {v:?}");
    }
}
