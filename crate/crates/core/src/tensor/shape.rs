//! Shape manipulation and matrix multiplication.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{ArrayD, Axis, Ix2, IxDyn, Slice};

impl<T: Scalar> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        let value = self
            .to_array()
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: incompatible element count");
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let orig = parents[0].value().raw_dim();
                vec![Some(
                    g.as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(orig)
                        .expect("reshape backward"),
                )]
            }),
        )
    }

    /// Flatten `[N, ...]` to `[N, prod]`.
    pub fn flatten_batch(&self) -> Tensor<T> {
        let shape = self.shape();
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(&[n, rest])
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        let a = self.to_array().into_dimensionality::<Ix2>().expect("matmul lhs 2-D");
        let b = other
            .to_array()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs 2-D");
        let value = a.dot(&b).into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, parents| {
                let a = parents[0].to_array().into_dimensionality::<Ix2>().unwrap();
                let b = parents[1].to_array().into_dimensionality::<Ix2>().unwrap();
                let g2 = g.clone().into_dimensionality::<Ix2>().unwrap();
                let ga = g2.dot(&b.t()).into_dyn();
                let gb = a.t().dot(&g2).into_dyn();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Concatenate along `axis`; the gradient splits back by parent extents.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat: empty input");
        let arrays: Vec<ArrayD<T>> = parts.iter().map(|p| p.to_array()).collect();
        let views: Vec<_> = arrays.iter().map(|a| a.view()).collect();
        let value = ndarray::concatenate(Axis(axis), &views).expect("concat: shape mismatch");
        Tensor::from_op(
            value,
            parts.to_vec(),
            Box::new(move |g, _, parents| {
                let mut out = Vec::with_capacity(parents.len());
                let mut offset = 0isize;
                for p in parents {
                    let extent = p.shape()[axis] as isize;
                    let piece = g
                        .slice_axis(Axis(axis), Slice::new(offset, Some(offset + extent), 1))
                        .to_owned();
                    out.push(Some(piece));
                    offset += extent;
                }
                out
            }),
        )
    }
}
