//! Finite-difference gradient verification. `central_difference_gradient`
//! never touches the backward pass, so it serves as an independent oracle
//! for every differentiable operation in the crate.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::ArrayD;

/// Gradient of `f` at `input` by central differences with the given step.
pub fn central_difference_gradient<T: Scalar>(
    f: &impl Fn(&Tensor<T>) -> Tensor<T>,
    input: &ArrayD<T>,
    step: T,
) -> ArrayD<T> {
    let mut grad = ArrayD::zeros(input.raw_dim());
    let two = T::c(2.0);
    for idx in 0..input.len() {
        let mut plus = input.clone();
        let mut minus = input.clone();
        plus.as_slice_mut().unwrap()[idx] = plus.as_slice().unwrap()[idx] + step;
        minus.as_slice_mut().unwrap()[idx] = minus.as_slice().unwrap()[idx] - step;
        let fp = f(&Tensor::constant(plus)).item();
        let fm = f(&Tensor::constant(minus)).item();
        grad.as_slice_mut().unwrap()[idx] = (fp - fm) / (two * step);
    }
    grad
}

/// Relative L2 error between the analytic gradient of the scalar-valued `f`
/// and its central-difference estimate.
pub fn grad_check<T: Scalar>(
    f: &impl Fn(&Tensor<T>) -> Tensor<T>,
    input: &ArrayD<T>,
    step: T,
) -> f64 {
    let x = Tensor::param(input.clone());
    let out = f(&x);
    assert_eq!(out.len(), 1, "grad_check requires a scalar-valued function");
    out.backward();
    let analytic = x
        .grad()
        .unwrap_or_else(|| ArrayD::zeros(input.raw_dim()));
    let numeric = central_difference_gradient(f, input, step);

    let mut diff = 0.0_f64;
    let mut norm = 0.0_f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let a = a.into_f64();
        let n = n.into_f64();
        diff += (a - n) * (a - n);
        norm += a * a + n * n;
    }
    diff.sqrt() / norm.sqrt().max(1e-8)
}
