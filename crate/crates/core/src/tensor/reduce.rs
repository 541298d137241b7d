//! Reductions and broadcasting.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, IxDyn};

impl<T: Scalar> Tensor<T> {
    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.value().iter().copied().sum();
        let value = ArrayD::from_elem(IxDyn(&[]), s);
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let shape = parents[0].value().raw_dim();
                let gs = *g.iter().next().unwrap();
                vec![Some(ArrayD::from_elem(shape, gs))]
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::cu(self.len().max(1));
        self.sum_all().mul_scalar(T::one() / n)
    }

    /// Sum over the given axes, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Tensor<T> {
        let mut value = self.to_array();
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &ax in sorted.iter().rev() {
            value = value.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let shape = parents[0].value().raw_dim();
                let gb = g.broadcast(shape).expect("sum_axes backward broadcast");
                vec![Some(gb.to_owned())]
            }),
        )
    }

    /// Mean over the given axes, keeping them as size-1 dimensions.
    pub fn mean_axes(&self, axes: &[usize]) -> Tensor<T> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes)
            .mul_scalar(T::one() / T::cu(count.max(1)))
    }

    /// Broadcast to a larger shape (ndarray broadcasting rules). The
    /// gradient sums over every expanded axis.
    pub fn broadcast_as(&self, shape: &[usize]) -> Tensor<T> {
        let value = self
            .value()
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| {
                panic!(
                    "broadcast_as: cannot broadcast {:?} to {:?}",
                    self.shape(),
                    shape
                )
            })
            .to_owned();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let src_shape = parents[0].shape();
                let mut g = g.clone();
                // Collapse leading axes that were added by broadcasting.
                while g.ndim() > src_shape.len() {
                    g = g.sum_axis(Axis(0));
                }
                // Sum over axes that were expanded from size 1.
                for (ax, (&s, &d)) in src_shape.iter().zip(g.shape().to_vec().iter()).enumerate() {
                    if s == 1 && d > 1 {
                        g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::grad_check;
    use super::*;
    use ndarray::{arr1, Array4};

    #[test]
    fn sum_axes_keeps_dims_and_backprops() {
        let x = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, h, w)| {
            (n + c + h + w) as f64 * 0.1
        })
        .into_dyn();
        let rel = grad_check(
            &|t: &Tensor<f64>| t.sum_axes(&[2, 3]).square().sum_all(),
            &x,
            1e-5,
        );
        assert!(rel < 1e-6, "rel {rel}");
        let t = Tensor::constant(x);
        assert_eq!(t.sum_axes(&[2, 3]).shape(), vec![2, 3, 1, 1]);
    }

    #[test]
    fn mean_axes_matches_manual() {
        let x = arr1(&[1.0, 2.0, 3.0, 4.0]).into_dyn();
        let t = Tensor::constant(x);
        assert_eq!(t.mean_axes(&[0]).item(), 2.5);
    }

    #[test]
    fn broadcast_backward_sums_expanded_axes() {
        let x = ndarray::Array::from_shape_vec(IxDyn(&[1, 3, 1, 1]), vec![1.0, 2.0, 3.0]).unwrap();
        let rel = grad_check(
            &|t: &Tensor<f64>| t.broadcast_as(&[2, 3, 4, 4]).square().sum_all(),
            &x,
            1e-5,
        );
        assert!(rel < 1e-6, "rel {rel}");
    }

    #[test]
    fn mean_all_gradient() {
        let x = arr1(&[1.0, -2.0, 3.0]).into_dyn();
        let rel = grad_check(&|t: &Tensor<f64>| t.mean_all(), &x, 1e-5);
        assert!(rel < 1e-6, "rel {rel}");
    }
}
