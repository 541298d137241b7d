//! Spatial operations on `[N, C, H, W]` tensors: convolution (im2col +
//! matrix product), pooling, nearest upsampling, and replicate padding.

use super::Tensor;
use crate::scalar::Scalar;
use ndarray::{Array2, Array4, ArrayView3, ArrayViewMut3, Ix1, Ix4};

fn out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

fn im2col<T: Scalar>(
    x: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ho = out_extent(h, kh, stride, pad);
    let wo = out_extent(w, kw, stride, pad);
    let mut col = Array2::zeros((c * kh * kw, ho * wo));
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            col[[row, oy * wo + ox]] = x[[ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(
    col: &Array2<T>,
    mut out: ArrayViewMut3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) {
    let (c, h, w) = (out.shape()[0], out.shape()[1], out.shape()[2]);
    let ho = out_extent(h, kh, stride, pad);
    let wo = out_extent(w, kw, stride, pad);
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            out[[ci, iy as usize, ix as usize]] =
                                out[[ci, iy as usize, ix as usize]] + col[[row, oy * wo + ox]];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tensor<T> {
    /// 2-D convolution with zero padding. `self` is `[N, C, H, W]`, weight
    /// is `[O, C, kh, kw]`, bias (optional) `[O]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Tensor<T> {
        let x = self.to_array().into_dimensionality::<Ix4>().expect("conv2d input 4-D");
        let w = weight
            .to_array()
            .into_dimensionality::<Ix4>()
            .expect("conv2d weight 4-D");
        let (n, c, h, wd) = x.dim();
        let (o, wc, kh, kw) = w.dim();
        assert_eq!(c, wc, "conv2d: input has {c} channels, weight expects {wc}");
        let ho = out_extent(h, kh, stride, pad);
        let wo = out_extent(wd, kw, stride, pad);
        let wmat = w
            .to_shape((o, c * kh * kw))
            .expect("weight reshape")
            .to_owned();

        let mut out = Array4::<T>::zeros((n, o, ho, wo));
        for ni in 0..n {
            let col = im2col(&x.index_axis(ndarray::Axis(0), ni), kh, kw, stride, pad);
            let res = wmat.dot(&col);
            let res4 = res.to_shape((o, ho, wo)).expect("conv output reshape");
            out.index_axis_mut(ndarray::Axis(0), ni).assign(&res4);
        }
        if let Some(b) = bias {
            let bv = b.to_array().into_dimensionality::<Ix1>().expect("bias 1-D");
            assert_eq!(bv.len(), o, "conv2d: bias length");
            for ni in 0..n {
                for oi in 0..o {
                    out.slice_mut(ndarray::s![ni, oi, .., ..])
                        .mapv_inplace(|v| v + bv[oi]);
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Tensor::from_op(
            out.into_dyn(),
            parents,
            Box::new(move |g, _, parents| {
                let x = parents[0].to_array().into_dimensionality::<Ix4>().unwrap();
                let w = parents[1].to_array().into_dimensionality::<Ix4>().unwrap();
                let g4 = g.clone().into_dimensionality::<Ix4>().unwrap();
                let (n, c, h, wd) = x.dim();
                let (o, _, kh, kw) = w.dim();
                let (ho, wo) = (g4.shape()[2], g4.shape()[3]);
                let wmat = w.to_shape((o, c * kh * kw)).unwrap().to_owned();

                let mut gx = Array4::<T>::zeros((n, c, h, wd));
                let mut gw = Array2::<T>::zeros((o, c * kh * kw));
                for ni in 0..n {
                    let gmat = g4
                        .index_axis(ndarray::Axis(0), ni)
                        .to_shape((o, ho * wo))
                        .unwrap()
                        .to_owned();
                    let col = im2col(&x.index_axis(ndarray::Axis(0), ni), kh, kw, stride, pad);
                    gw = gw + gmat.dot(&col.t());
                    let colgrad = wmat.t().dot(&gmat);
                    col2im(
                        &colgrad,
                        gx.index_axis_mut(ndarray::Axis(0), ni),
                        kh,
                        kw,
                        stride,
                        pad,
                    );
                }
                let gw4 = gw.into_shape_with_order((o, c, kh, kw)).unwrap();
                let mut grads = vec![Some(gx.into_dyn()), Some(gw4.into_dyn())];
                if has_bias {
                    let gb = g4
                        .sum_axis(ndarray::Axis(3))
                        .sum_axis(ndarray::Axis(2))
                        .sum_axis(ndarray::Axis(0));
                    grads.push(Some(gb.into_dyn()));
                }
                grads
            }),
        )
    }

    /// 2×2 average pooling with stride 2. Spatial dims must be even.
    pub fn avg_pool2(&self) -> Tensor<T> {
        let x = self.to_array().into_dimensionality::<Ix4>().expect("avg_pool2 input 4-D");
        let (n, c, h, w) = x.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2: odd spatial dims {h}x{w}");
        let quarter = T::c(0.25);
        let mut out = Array4::<T>::zeros((n, c, h / 2, w / 2));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h / 2 {
                    for xx in 0..w / 2 {
                        let s = x[[ni, ci, 2 * y, 2 * xx]]
                            + x[[ni, ci, 2 * y, 2 * xx + 1]]
                            + x[[ni, ci, 2 * y + 1, 2 * xx]]
                            + x[[ni, ci, 2 * y + 1, 2 * xx + 1]];
                        out[[ni, ci, y, xx]] = s * quarter;
                    }
                }
            }
        }
        Tensor::from_op(
            out.into_dyn(),
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let shape = parents[0].shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let g4 = g.clone().into_dimensionality::<Ix4>().unwrap();
                let quarter = T::c(0.25);
                let mut gx = Array4::<T>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h / 2 {
                            for xx in 0..w / 2 {
                                let v = g4[[ni, ci, y, xx]] * quarter;
                                gx[[ni, ci, 2 * y, 2 * xx]] = v;
                                gx[[ni, ci, 2 * y, 2 * xx + 1]] = v;
                                gx[[ni, ci, 2 * y + 1, 2 * xx]] = v;
                                gx[[ni, ci, 2 * y + 1, 2 * xx + 1]] = v;
                            }
                        }
                    }
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample_nearest2(&self) -> Tensor<T> {
        let x = self.to_array().into_dimensionality::<Ix4>().expect("upsample input 4-D");
        let (n, c, h, w) = x.dim();
        let mut out = Array4::<T>::zeros((n, c, 2 * h, 2 * w));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x[[ni, ci, y, xx]];
                        out[[ni, ci, 2 * y, 2 * xx]] = v;
                        out[[ni, ci, 2 * y, 2 * xx + 1]] = v;
                        out[[ni, ci, 2 * y + 1, 2 * xx]] = v;
                        out[[ni, ci, 2 * y + 1, 2 * xx + 1]] = v;
                    }
                }
            }
        }
        Tensor::from_op(
            out.into_dyn(),
            vec![self.clone()],
            Box::new(|g, _, parents| {
                let shape = parents[0].shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let g4 = g.clone().into_dimensionality::<Ix4>().unwrap();
                let mut gx = Array4::<T>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[[ni, ci, y, xx]] = g4[[ni, ci, 2 * y, 2 * xx]]
                                    + g4[[ni, ci, 2 * y, 2 * xx + 1]]
                                    + g4[[ni, ci, 2 * y + 1, 2 * xx]]
                                    + g4[[ni, ci, 2 * y + 1, 2 * xx + 1]];
                            }
                        }
                    }
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }

    /// Replicate (edge-clamp) padding of the two spatial dims by `p`.
    pub fn replicate_pad(&self, p: usize) -> Tensor<T> {
        let x = self.to_array().into_dimensionality::<Ix4>().expect("pad input 4-D");
        let (n, c, h, w) = x.dim();
        let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
        let mut out = Array4::<T>::zeros((n, c, h + 2 * p, w + 2 * p));
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h + 2 * p {
                    for xx in 0..w + 2 * p {
                        let sy = clamp(y as isize - p as isize, h);
                        let sx = clamp(xx as isize - p as isize, w);
                        out[[ni, ci, y, xx]] = x[[ni, ci, sy, sx]];
                    }
                }
            }
        }
        Tensor::from_op(
            out.into_dyn(),
            vec![self.clone()],
            Box::new(move |g, _, parents| {
                let shape = parents[0].shape();
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let g4 = g.clone().into_dimensionality::<Ix4>().unwrap();
                let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
                let mut gx = Array4::<T>::zeros((n, c, h, w));
                for ni in 0..n {
                    for ci in 0..c {
                        for y in 0..h + 2 * p {
                            for xx in 0..w + 2 * p {
                                let sy = clamp(y as isize - p as isize, h);
                                let sx = clamp(xx as isize - p as isize, w);
                                gx[[ni, ci, sy, sx]] =
                                    gx[[ni, ci, sy, sx]] + g4[[ni, ci, y, xx]];
                            }
                        }
                    }
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }
}
