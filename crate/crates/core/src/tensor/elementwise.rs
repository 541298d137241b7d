//! Elementwise tensor operations. Binary ops require identical shapes;
//! broadcasting is explicit via [`Tensor::broadcast_as`].

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::ArrayD;

fn assert_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "add");
        let value = &*self.value() + &*other.value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "sub");
        let value = &*self.value() - &*other.value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.mapv(|x| -x))]),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "mul");
        let value = &*self.value() * &*other.value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, parents| {
                let a = parents[0].value();
                let b = parents[1].value();
                vec![Some(g * &*b), Some(g * &*a)]
            }),
        )
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_same_shape(self, other, "div");
        let value = &*self.value() / &*other.value();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, parents| {
                let a = parents[0].value();
                let b = parents[1].value();
                let ga = g / &*b;
                let gb = ndarray::Zip::from(g)
                    .and(&*a)
                    .and(&*b)
                    .map_collect(|&g, &a, &b| -g * a / (b * b));
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| -x);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.mapv(|x| -x))]),
        )
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let value = self.value().mapv(|x| x + c);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.clone())]),
        )
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        let value = self.value().mapv(|x| x * c);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.mapv(|x| x * c))]),
        )
    }

    /// `c - self`.
    pub fn rsub_scalar(&self, c: T) -> Tensor<T> {
        let value = self.value().mapv(|x| c - x);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.mapv(|x| -x))]),
        )
    }

    pub fn abs(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| x.abs());
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let x = parents[0].value();
                let gx = ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                vec![Some(gx)]
            }),
        )
    }

    pub fn square(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| x * x);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let x = parents[0].value();
                let two = T::c(2.0);
                vec![Some(
                    ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| g * two * x),
                )]
            }),
        )
    }

    pub fn sqrt(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| x.sqrt());
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, out, _| {
                let half = T::c(0.5);
                vec![Some(
                    ndarray::Zip::from(g).and(out).map_collect(|&g, &o| g * half / o),
                )]
            }),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| x.exp());
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, out, _| vec![Some(g * out)]),
        )
    }

    pub fn ln(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| x.ln());
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let x = parents[0].value();
                vec![Some(g / &*x)]
            }),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| x.tanh());
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, out, _| {
                vec![Some(
                    ndarray::Zip::from(g)
                        .and(out)
                        .map_collect(|&g, &o| g * (T::one() - o * o)),
                )]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let value = self.value().mapv(sigmoid_scalar);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, out, _| {
                vec![Some(
                    ndarray::Zip::from(g)
                        .and(out)
                        .map_collect(|&g, &o| g * o * (T::one() - o)),
                )]
            }),
        )
    }

    /// `ln(1 + exp(x))`, evaluated in the overflow-safe form.
    pub fn softplus(&self) -> Tensor<T> {
        let value = self.value().mapv(softplus_scalar);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let x = parents[0].value();
                vec![Some(
                    ndarray::Zip::from(g)
                        .and(&*x)
                        .map_collect(|&g, &x| g * sigmoid_scalar(x)),
                )]
            }),
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        let value = self.value().mapv(|x| if x > T::zero() { x } else { T::zero() });
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let x = parents[0].value();
                vec![Some(ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        let value = self
            .value()
            .mapv(|x| if x > T::zero() { x } else { x * slope });
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                let x = parents[0].value();
                vec![Some(ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| {
                    if x > T::zero() {
                        g
                    } else {
                        g * slope
                    }
                }))]
            }),
        )
    }

    /// Clamp values to `[lo, hi]`; gradient is passed through strictly
    /// inside the interval and zero outside.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let value = self.value().mapv(|x| x.max(lo).min(hi));
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                let x = parents[0].value();
                vec![Some(ndarray::Zip::from(g).and(&*x).map_collect(|&g, &x| {
                    if x > lo && x < hi {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    /// Gradient reversal: identity forward, `-scale * g` backward.
    pub fn gradient_reversal(&self, scale: T) -> Tensor<T> {
        assert!(scale >= T::zero(), "gradient_reversal: scale must be >= 0");
        let value = self.to_array();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.mapv(|x| -x * scale))]),
        )
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus_scalar<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + exp(-|x|))
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[allow(dead_code)]
pub(crate) fn ones_like<T: Scalar>(a: &ArrayD<T>) -> ArrayD<T> {
    ArrayD::from_elem(a.raw_dim(), T::one())
}
