//! Layer kernels with explicit backward passes.
//!
//! Activations are `(batch, channels, height, width)`. Each forward function returns its
//! output together with whatever the matching backward function needs.

use ndarray::{s, Array1, Array2, Array4, ArrayView1, ArrayView2, ArrayView3, ArrayView4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, matmul, Scalar};

/// Square-kernel convolution geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    /// Output extent of a convolution over `n` input pixels, if at least one window fits.
    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution over `n` input pixels.
    pub fn transpose_out(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

/// Unfolds one image `(c, h, w)` into `(c·k·k, ho·wo)` patch columns.
pub fn im2col<F: Scalar>(x: ArrayView3<F>, g: ConvGeom, ho: usize, wo: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let k = g.kernel;
    let mut cols = Array2::<F>::zeros((c * k * k, ho * wo));
    let row_len = ho * wo;
    let buf = cols.as_slice_mut().expect("fresh array is contiguous");
    crate::par::for_each_chunk_mut(buf, row_len, |row, out| {
        let ch = row / (k * k);
        let ky = (row / k) % k;
        let kx = row % k;
        for oy in 0..ho {
            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for ox in 0..wo {
                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                if ix >= 0 && ix < w as isize {
                    out[oy * wo + ox] = x[[ch, iy as usize, ix as usize]];
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatters patch columns back onto a `(c, h, w)` image, summing overlaps.
pub fn col2im<F: Scalar>(cols: ArrayView2<F>, (c, h, w): (usize, usize, usize), g: ConvGeom, ho: usize, wo: usize) -> ndarray::Array3<F> {
    let k = g.kernel;
    let mut img = ndarray::Array3::<F>::zeros((c, h, w));
    let buf = img.as_slice_mut().expect("fresh array is contiguous");
    crate::par::for_each_chunk_mut(buf, h * w, |ch, plane| {
        for ky in 0..k {
            for kx in 0..k {
                let row = cols.row(ch * k * k + ky * k + kx);
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    });
    img
}

fn flat_weight<F: Scalar>(w: ArrayView4<F>) -> ArrayView2<F> {
    let (a, b, kh, kw) = w.dim();
    w.into_shape_with_order((a, b * kh * kw))
        .expect("parameter tensors are stored contiguously")
}

pub struct ConvCache<F> {
    cols: Vec<Array2<F>>,
    in_dim: (usize, usize, usize, usize),
    geom: ConvGeom,
}

/// Convolution with weight `(out, in, k, k)` and bias `(out)`.
pub fn conv2d_forward<F: Scalar>(
    x: &Array4<F>,
    weight: ArrayView4<F>,
    bias: ArrayView1<F>,
    g: ConvGeom,
) -> Result<(Array4<F>, ConvCache<F>)> {
    let (n, c, h, w) = x.dim();
    let (o, wc, _, _) = weight.dim();
    if wc != c {
        return Err(Error::Shape(format!("convolution expects {wc} input channels, got {c}")));
    }
    let (ho, wo) = match (g.conv_out(h), g.conv_out(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Shape(format!("{h}x{w} input is smaller than a {0}x{0} kernel", g.kernel))),
    };
    let wf = flat_weight(weight);
    let mut y = Array4::<F>::zeros((n, o, ho, wo));
    let mut cols = Vec::with_capacity(n);
    for i in 0..n {
        let col = im2col(x.index_axis(Axis(0), i), g, ho, wo);
        let mut yi = y.index_axis_mut(Axis(0), i);
        let mut y2 = yi.view_mut().into_shape_with_order((o, ho * wo)).expect("contiguous");
        gemm(wf, col.view(), y2.view_mut(), false);
        for (mut row, &b) in y2.outer_iter_mut().zip(bias.iter()) {
            row += b;
        }
        cols.push(col);
    }
    Ok((
        y,
        ConvCache {
            cols,
            in_dim: (n, c, h, w),
            geom: g,
        },
    ))
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward<F: Scalar>(cache: &ConvCache<F>, weight: ArrayView4<F>, dy: &Array4<F>) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, c, h, w) = cache.in_dim;
    let (_, o, ho, wo) = dy.dim();
    let wf = flat_weight(weight);
    let mut dw = Array2::<F>::zeros(wf.dim());
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for i in 0..n {
        let dyi = dy.index_axis(Axis(0), i).as_standard_layout().into_owned();
        let dy2 = dyi.view().into_shape_with_order((o, ho * wo)).expect("contiguous");
        gemm(dy2, cache.cols[i].t(), dw.view_mut(), true);
        let dcols = matmul(wf.t(), dy2);
        let img = col2im(dcols.view(), (c, h, w), cache.geom, ho, wo);
        dx.index_axis_mut(Axis(0), i).assign(&img);
    }
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    let dw = dw.into_shape_with_order(weight.dim()).expect("contiguous");
    (dx, dw, db)
}

pub struct ConvTransposeCache<F> {
    x: Array4<F>,
    geom: ConvGeom,
}

/// Transposed convolution with weight `(in, out, k, k)` and bias `(out)`.
pub fn conv_transpose2d_forward<F: Scalar>(
    x: &Array4<F>,
    weight: ArrayView4<F>,
    bias: ArrayView1<F>,
    g: ConvGeom,
) -> Result<(Array4<F>, ConvTransposeCache<F>)> {
    let (n, c, h, w) = x.dim();
    let (wc, o, _, _) = weight.dim();
    if wc != c {
        return Err(Error::Shape(format!("transposed convolution expects {wc} input channels, got {c}")));
    }
    let (ho, wo) = (g.transpose_out(h), g.transpose_out(w));
    let wf = flat_weight(weight);
    let mut y = Array4::<F>::zeros((n, o, ho, wo));
    for i in 0..n {
        let xi = x.index_axis(Axis(0), i).as_standard_layout().into_owned();
        let x2 = xi.view().into_shape_with_order((c, h * w)).expect("contiguous");
        let cols = matmul(wf.t(), x2);
        let mut img = col2im(cols.view(), (o, ho, wo), g, h, w);
        for (mut plane, &b) in img.outer_iter_mut().zip(bias.iter()) {
            plane += b;
        }
        y.index_axis_mut(Axis(0), i).assign(&img);
    }
    Ok((y, ConvTransposeCache { x: x.clone(), geom: g }))
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv_transpose2d_backward<F: Scalar>(
    cache: &ConvTransposeCache<F>,
    weight: ArrayView4<F>,
    dy: &Array4<F>,
) -> (Array4<F>, Array4<F>, Array1<F>) {
    let (n, c, h, w) = cache.x.dim();
    let wf = flat_weight(weight);
    let mut dw = Array2::<F>::zeros(wf.dim());
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    for i in 0..n {
        let dcols = im2col(dy.index_axis(Axis(0), i), cache.geom, h, w);
        let xi = cache.x.index_axis(Axis(0), i).as_standard_layout().into_owned();
        let x2 = xi.view().into_shape_with_order((c, h * w)).expect("contiguous");
        gemm(x2, dcols.t(), dw.view_mut(), true);
        let mut dxi = dx.index_axis_mut(Axis(0), i);
        let dx2 = dxi.view_mut().into_shape_with_order((c, h * w)).expect("contiguous");
        gemm(wf, dcols.view(), dx2, false);
    }
    let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
    let dw = dw.into_shape_with_order(weight.dim()).expect("contiguous");
    (dx, dw, db)
}

/// Feature normalization applied after a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    /// Per-sample, per-channel statistics over the spatial plane. No learned affine.
    #[default]
    Instance,
    /// Per-channel statistics over batch and plane, with learned scale and shift.
    Batch,
    None,
}

pub const NORM_EPS: f64 = 1e-5;

pub struct InstanceNormCache<F> {
    xhat: Array4<F>,
    inv_std: Array2<F>,
}

pub fn instance_norm_forward<F: Scalar>(x: &Array4<F>) -> (Array4<F>, InstanceNormCache<F>) {
    let (n, c, h, w) = x.dim();
    let m = F::of((h * w) as f64);
    let mut xhat = Array4::<F>::zeros(x.dim());
    let mut inv_std = Array2::<F>::zeros((n, c));
    for i in 0..n {
        for ch in 0..c {
            let plane = x.slice(s![i, ch, .., ..]);
            let mean = plane.sum() / m;
            let var = plane.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
            let is = F::one() / (var + F::of(NORM_EPS)).sqrt();
            inv_std[[i, ch]] = is;
            Zip::from(xhat.slice_mut(s![i, ch, .., ..]))
                .and(&plane)
                .for_each(|o, &v| *o = (v - mean) * is);
        }
    }
    (xhat.clone(), InstanceNormCache { xhat, inv_std })
}

pub fn instance_norm_backward<F: Scalar>(cache: &InstanceNormCache<F>, dy: &Array4<F>) -> Array4<F> {
    let (n, c, h, w) = dy.dim();
    let m = F::of((h * w) as f64);
    let mut dx = Array4::<F>::zeros(dy.dim());
    for i in 0..n {
        for ch in 0..c {
            let g = dy.slice(s![i, ch, .., ..]);
            let xh = cache.xhat.slice(s![i, ch, .., ..]);
            let mean_g = g.sum() / m;
            let mean_gx = Zip::from(&g).and(&xh).fold(F::zero(), |a, &gv, &xv| a + gv * xv) / m;
            let is = cache.inv_std[[i, ch]];
            Zip::from(dx.slice_mut(s![i, ch, .., ..]))
                .and(&g)
                .and(&xh)
                .for_each(|o, &gv, &xv| *o = is * (gv - mean_g - xv * mean_gx));
        }
    }
    dx
}

pub struct BatchNormCache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
}

/// Batch normalization using the statistics of the batch at hand, in every mode.
pub fn batch_norm_forward<F: Scalar>(x: &Array4<F>, gamma: ArrayView1<F>, beta: ArrayView1<F>) -> (Array4<F>, BatchNormCache<F>) {
    let (n, c, h, w) = x.dim();
    let m = F::of((n * h * w) as f64);
    let mut xhat = Array4::<F>::zeros(x.dim());
    let mut inv_std = Array1::<F>::zeros(c);
    let mut y = Array4::<F>::zeros(x.dim());
    for ch in 0..c {
        let vals = x.slice(s![.., ch, .., ..]);
        let mean = vals.sum() / m;
        let var = vals.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
        let is = F::one() / (var + F::of(NORM_EPS)).sqrt();
        inv_std[ch] = is;
        Zip::from(xhat.slice_mut(s![.., ch, .., ..]))
            .and(y.slice_mut(s![.., ch, .., ..]))
            .and(&vals)
            .for_each(|xh, o, &v| {
                *xh = (v - mean) * is;
                *o = *xh * gamma[ch] + beta[ch];
            });
    }
    (y, BatchNormCache { xhat, inv_std })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<F: Scalar>(
    cache: &BatchNormCache<F>,
    gamma: ArrayView1<F>,
    dy: &Array4<F>,
) -> (Array4<F>, Array1<F>, Array1<F>) {
    let (n, c, h, w) = dy.dim();
    let m = F::of((n * h * w) as f64);
    let mut dx = Array4::<F>::zeros(dy.dim());
    let mut dgamma = Array1::<F>::zeros(c);
    let mut dbeta = Array1::<F>::zeros(c);
    for ch in 0..c {
        let g = dy.slice(s![.., ch, .., ..]);
        let xh = cache.xhat.slice(s![.., ch, .., ..]);
        let sum_g = g.sum();
        let sum_gx = Zip::from(&g).and(&xh).fold(F::zero(), |a, &gv, &xv| a + gv * xv);
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let scale = gamma[ch] * cache.inv_std[ch];
        let (mean_g, mean_gx) = (sum_g / m, sum_gx / m);
        Zip::from(dx.slice_mut(s![.., ch, .., ..]))
            .and(&g)
            .and(&xh)
            .for_each(|o, &gv, &xv| *o = scale * (gv - mean_g - xv * mean_gx));
    }
    (dx, dgamma, dbeta)
}

pub fn leaky_relu<F: Scalar>(x: &Array4<F>, slope: f64) -> Array4<F> {
    let a = F::of(slope);
    x.mapv(|v| if v > F::zero() { v } else { v * a })
}

/// Gradient through a leaky ReLU given the layer's input.
pub fn leaky_relu_backward<F: Scalar>(x: &Array4<F>, dy: &Array4<F>, slope: f64) -> Array4<F> {
    let a = F::of(slope);
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        if v <= F::zero() {
            *d *= a;
        }
    });
    dx
}

pub fn tanh_forward<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| v.tanh())
}

/// Gradient through `tanh` given its output.
pub fn tanh_backward<F: Scalar>(y: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &t| *d *= F::one() - t * t);
    dx
}

/// Inverted-dropout mask: each element is `0` with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<F: Scalar, R: rand::Rng>(dim: (usize, usize, usize, usize), rate: f64, rng: &mut R) -> Array4<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    Array4::from_shape_simple_fn(dim, || if rng.gen::<f64>() < rate { F::zero() } else { keep })
}

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_dim: (usize, usize, usize, usize),
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
pub fn max_pool2_forward<F: Scalar>(x: &Array4<F>) -> (Array4<F>, MaxPoolCache) {
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array4::<F>::zeros((n, c, ho, wo));
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (2 * oy, 2 * ox);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = (2 * oy + dy, 2 * ox + dx);
                        if x[[i, ch, cand.0, cand.1]] > x[[i, ch, best.0, best.1]] {
                            best = cand;
                        }
                    }
                    y[[i, ch, oy, ox]] = x[[i, ch, best.0, best.1]];
                    argmax.push(best.0 * w + best.1);
                }
            }
        }
    }
    (
        y,
        MaxPoolCache {
            argmax,
            in_dim: (n, c, h, w),
        },
    )
}

pub fn max_pool2_backward<F: Scalar>(cache: &MaxPoolCache, dy: &Array4<F>) -> Array4<F> {
    let (_, _, h, w) = cache.in_dim;
    let mut dx = Array4::<F>::zeros(cache.in_dim);
    let (n, c, ho, wo) = dy.dim();
    let mut k = 0;
    for i in 0..n {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let idx = cache.argmax[k];
                    k += 1;
                    dx[[i, ch, idx / w, idx % w]] += dy[[i, ch, oy, ox]];
                }
            }
        }
    }
    debug_assert!(h > 0);
    dx
}

/// Fully connected layer: `x (n, in)`, weight `(out, in)`, bias `(out)`.
pub fn linear_forward<F: Scalar>(x: ArrayView2<F>, weight: ArrayView2<F>, bias: ArrayView1<F>) -> Array2<F> {
    let mut y = matmul(x, weight.t());
    for mut row in y.outer_iter_mut() {
        row += &bias;
    }
    y
}

/// Returns `(dx, dweight, dbias)`.
pub fn linear_backward<F: Scalar>(x: ArrayView2<F>, weight: ArrayView2<F>, dy: ArrayView2<F>) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = matmul(dy, weight);
    let dw = matmul(dy.t(), x);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

/// Concatenates two activations along the channel axis.
pub fn concat_channels<F: Scalar>(a: &Array4<F>, b: &Array4<F>) -> Result<Array4<F>> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()])
        .map_err(|e| Error::Shape(format!("cannot concatenate {:?} and {:?}: {e}", a.dim(), b.dim())))
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<F: Scalar>(d: &Array4<F>, first: usize) -> (Array4<F>, Array4<F>) {
    (
        d.slice(s![.., ..first, .., ..]).to_owned(),
        d.slice(s![.., first.., .., ..]).to_owned(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random4(dim: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_simple_fn(dim, || rng.gen_range(-1.0..1.0))
    }

    /// Direct convolution by definition, independent of the im2col path.
    fn direct_conv(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>, g: ConvGeom) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (o, _, k, _) = w.dim();
        let ho = g.conv_out(h).unwrap();
        let wo = g.conv_out(wd).unwrap();
        let mut y = Array4::zeros((n, o, ho, wo));
        for i in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w[[oc, ic, ky, kx]] * x[[i, ic, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        y[[i, oc, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_definition() {
        for g in [ConvGeom::new(4, 2, 1), ConvGeom::new(4, 1, 1), ConvGeom::new(3, 1, 1)] {
            let x = random4((2, 3, 8, 8), 1);
            let w = random4((5, 3, g.kernel, g.kernel), 2);
            let b = Array1::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.5]);
            let (y, _) = conv2d_forward(&x, w.view(), b.view(), g).unwrap();
            let r = direct_conv(&x, &w, &b, g);
            assert_eq!(y.dim(), r.dim());
            assert!(y.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with shared weights (viewed as (out,in) vs (in,out)).
        let g = ConvGeom::new(4, 2, 1);
        let x = random4((1, 3, 8, 8), 3);
        let w = random4((4, 3, 4, 4), 4);
        let zero4 = Array1::zeros(4);
        let zero3 = Array1::zeros(3);
        let (cx, _) = conv2d_forward(&x, w.view(), zero4.view(), g).unwrap();
        let y = random4(cx.dim(), 5);
        let (ty, _) = conv_transpose2d_forward(&y, w.view(), zero3.view(), g).unwrap();
        assert_eq!(ty.dim(), x.dim());
        let lhs: f64 = (&cx * &y).sum();
        let rhs: f64 = (&x * &ty).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_tiny_input() {
        let x = random4((1, 2, 8, 8), 1);
        let w = random4((1, 3, 4, 4), 1);
        let b = Array1::zeros(1);
        assert!(matches!(
            conv2d_forward(&x, w.view(), b.view(), ConvGeom::new(4, 2, 1)),
            Err(Error::Shape(_))
        ));
        let x = random4((1, 3, 1, 1), 1);
        assert!(conv2d_forward(&x, w.view(), b.view(), ConvGeom::new(4, 1, 0)).is_err());
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let x = random4((2, 3, 5, 5), 9) * 4.0 + 2.0;
        let (y, _) = instance_norm_forward(&x);
        for i in 0..2 {
            for c in 0..3 {
                let p = y.slice(s![i, c, .., ..]);
                assert!(p.mean().unwrap().abs() < 1e-12);
                let var = p.mapv(|v| v * v).mean().unwrap();
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Array4::from_shape_vec((1, 1, 2, 2), vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let (y, cache) = max_pool2_forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        let dx = max_pool2_backward(&cache, &Array4::from_elem((1, 1, 1, 1), 2.0));
        assert_eq!(dx.into_raw_vec_and_offset().0, vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn dropout_mask_values_are_zero_or_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Array4<f32> = dropout_mask((1, 4, 8, 8), 0.5, &mut rng);
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(m.iter().any(|&v| v == 0.0) && m.iter().any(|&v| v == 2.0));
    }
}
