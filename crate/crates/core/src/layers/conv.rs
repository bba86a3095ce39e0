//! 2D and 3D cross-correlation.
//!
//! Both layer kinds share one kernel over `(t, h, w)`: a 2D convolution is the
//! `kt = 1` case on a clip of length 1. Each batch item is lowered with im2col
//! and multiplied with 64-bit accumulation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{gemm_row, Scalar, Tensor};

/// Geometry of a (possibly degenerate) 3D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    /// Spatial stride (temporal stride is always 1).
    pub stride: usize,
    pub pad_t: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation_t: usize,
}

impl ConvGeometry {
    pub fn k(&self) -> usize {
        self.in_ch * self.kt * self.kh * self.kw
    }

    /// Output extents for an input of extents `(t, h, w)`.
    pub fn output_extent(&self, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        let span_t = self.dilation_t * (self.kt - 1) + 1;
        let padded_t = t + 2 * self.pad_t;
        if padded_t < span_t {
            return Err(Error::dim(format!(
                "temporal extent {t} (padded {padded_t}) below the required minimum {span_t} \
                 for kt={} dilation={}",
                self.kt, self.dilation_t
            )));
        }
        let (ph, pw) = (h + 2 * self.pad_h, w + 2 * self.pad_w);
        if ph < self.kh || pw < self.kw {
            return Err(Error::dim(format!(
                "spatial extent {h}x{w} (padded {ph}x{pw}) smaller than kernel {}x{}",
                self.kh, self.kw
            )));
        }
        Ok((
            padded_t - span_t + 1,
            (ph - self.kh) / self.stride + 1,
            (pw - self.kw) / self.stride + 1,
        ))
    }
}

fn check_input<T: Scalar>(x: &Tensor<T>, g: &ConvGeometry) -> Result<(usize, usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 5 || s[1] != g.in_ch {
        return Err(Error::dim(format!(
            "conv expects [batch, {}, t, h, w], got {:?}",
            g.in_ch, s
        )));
    }
    Ok((s[0], s[2], s[3], s[4]))
}

fn check_params<T: Scalar>(w: &Tensor<T>, b: &Tensor<T>, g: &ConvGeometry) -> Result<()> {
    let expect = [g.out_ch, g.in_ch, g.kt, g.kh, g.kw];
    if w.shape() != expect || b.shape() != [g.out_ch] {
        return Err(Error::dim(format!(
            "conv parameters {:?}/{:?} do not match geometry {:?}",
            w.shape(),
            b.shape(),
            expect
        )));
    }
    Ok(())
}

/// Lower one batch item `[c, t, h, w]` to `[k, p]` columns.
fn im2col<T: Scalar>(
    item: &[T],
    g: &ConvGeometry,
    (t, h, w): (usize, usize, usize),
    (to, ho, wo): (usize, usize, usize),
) -> Vec<T> {
    let p = to * ho * wo;
    let mut col = vec![T::zero(); g.k() * p];
    let mut row = 0;
    for c in 0..g.in_ch {
        for dt in 0..g.kt {
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for ot in 0..to {
                        let it = (ot + dt * g.dilation_t) as isize - g.pad_t as isize;
                        if it < 0 || it >= t as isize {
                            q += ho * wo;
                            continue;
                        }
                        let base = (c * t + it as usize) * h * w;
                        for oy in 0..ho {
                            let iy = (oy * g.stride + dy) as isize - g.pad_h as isize;
                            if iy < 0 || iy >= h as isize {
                                q += wo;
                                continue;
                            }
                            let rbase = base + iy as usize * w;
                            for ox in 0..wo {
                                let ix = (ox * g.stride + dx) as isize - g.pad_w as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[q] = item[rbase + ix as usize];
                                }
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    col
}

/// Scatter-add `[k, p]` column gradients back onto a `[c, t, h, w]` item.
fn col2im<T: Scalar>(
    col: &[f64],
    g: &ConvGeometry,
    (t, h, w): (usize, usize, usize),
    (to, ho, wo): (usize, usize, usize),
) -> Vec<f64> {
    let p = to * ho * wo;
    let mut item = vec![0.0f64; g.in_ch * t * h * w];
    let mut row = 0;
    for c in 0..g.in_ch {
        for dt in 0..g.kt {
            for dy in 0..g.kh {
                for dx in 0..g.kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for ot in 0..to {
                        let it = (ot + dt * g.dilation_t) as isize - g.pad_t as isize;
                        if it < 0 || it >= t as isize {
                            q += ho * wo;
                            continue;
                        }
                        let base = (c * t + it as usize) * h * w;
                        for oy in 0..ho {
                            let iy = (oy * g.stride + dy) as isize - g.pad_h as isize;
                            if iy < 0 || iy >= h as isize {
                                q += wo;
                                continue;
                            }
                            let rbase = base + iy as usize * w;
                            for ox in 0..wo {
                                let ix = (ox * g.stride + dx) as isize - g.pad_w as isize;
                                if ix >= 0 && ix < w as isize {
                                    item[rbase + ix as usize] += src[q];
                                }
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    item
}

/// Forward pass on `x: [batch, in_ch, t, h, w]`.
pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<Tensor<T>> {
    check_params(weight, bias, g)?;
    let (n, t, h, w) = check_input(x, g)?;
    let (to, ho, wo) = g.output_extent(t, h, w)?;
    let p = to * ho * wo;
    let k = g.k();
    let item_len = g.in_ch * t * h * w;
    let wd = weight.data();
    let bd = bias.data();

    let outs: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col = im2col(&x.data()[i * item_len..(i + 1) * item_len], g, (t, h, w), (to, ho, wo));
            let mut out = Vec::with_capacity(g.out_ch * p);
            let mut acc = vec![0.0f64; p];
            for o in 0..g.out_ch {
                let b = bd[o].as_f64();
                acc.iter_mut().for_each(|a| *a = b);
                gemm_row(&wd[o * k..(o + 1) * k], &col, p, &mut acc);
                out.extend(acc.iter().map(|&a| T::from_f64(a)));
            }
            out
        })
        .collect();

    Tensor::new(vec![n, g.out_ch, to, ho, wo], outs.concat())
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Exact gradients of [`conv_forward`] given the forward input.
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeometry,
) -> Result<ConvGrads<T>> {
    let (n, t, h, w) = check_input(x, g)?;
    let (to, ho, wo) = g.output_extent(t, h, w)?;
    if grad_out.shape() != [n, g.out_ch, to, ho, wo] {
        return Err(Error::dim(format!(
            "conv grad_out {:?} does not match output [{n}, {}, {to}, {ho}, {wo}]",
            grad_out.shape(),
            g.out_ch
        )));
    }
    let p = to * ho * wo;
    let k = g.k();
    let item_len = g.in_ch * t * h * w;
    let wt = weight.reshape(&[g.out_ch, k])?.transpose2()?;
    let wt = wt.data();

    struct ItemGrads {
        input: Vec<f64>,
        weight: Vec<f64>,
        bias: Vec<f64>,
    }

    let items: Vec<ItemGrads> = (0..n)
        .into_par_iter()
        .map(|i| {
            let col = im2col(&x.data()[i * item_len..(i + 1) * item_len], g, (t, h, w), (to, ho, wo));
            let gout = &grad_out.data()[i * g.out_ch * p..(i + 1) * g.out_ch * p];

            // weight: gout [o, p] x colᵀ [p, k]
            let col_t = Tensor::new(vec![k, p], col)
                .and_then(|c| c.transpose2())
                .expect("im2col shape");
            let mut gw = vec![0.0f64; g.out_ch * k];
            let mut gb = vec![0.0f64; g.out_ch];
            for o in 0..g.out_ch {
                let row = &gout[o * p..(o + 1) * p];
                gemm_row(row, col_t.data(), k, &mut gw[o * k..(o + 1) * k]);
                gb[o] = row.iter().map(|v| v.as_f64()).sum();
            }

            // input: Wᵀ [k, o] x gout [o, p], then col2im
            let mut gcol = vec![0.0f64; k * p];
            for kk in 0..k {
                gemm_row(&wt[kk * g.out_ch..(kk + 1) * g.out_ch], gout, p, &mut gcol[kk * p..(kk + 1) * p]);
            }
            let gx = col2im::<T>(&gcol, g, (t, h, w), (to, ho, wo));
            ItemGrads {
                input: gx,
                weight: gw,
                bias: gb,
            }
        })
        .collect();

    // fixed-order reduction over batch items
    let mut gw = vec![0.0f64; g.out_ch * k];
    let mut gb = vec![0.0f64; g.out_ch];
    let mut gx = Vec::with_capacity(n * item_len);
    for it in &items {
        gw.iter_mut().zip(&it.weight).for_each(|(a, b)| *a += b);
        gb.iter_mut().zip(&it.bias).for_each(|(a, b)| *a += b);
        gx.extend(it.input.iter().map(|&v| T::from_f64(v)));
    }
    Ok(ConvGrads {
        input: Tensor::new(x.shape().to_vec(), gx)?,
        weight: Tensor::new(weight.shape().to_vec(), gw.into_iter().map(T::from_f64).collect())?,
        bias: Tensor::new(vec![g.out_ch], gb.into_iter().map(T::from_f64).collect())?,
    })
}

/// Insert a unit temporal axis: `[n, c, h, w] -> [n, c, 1, h, w]`.
pub(crate) fn as_clip<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("conv2d expects [batch, ch, h, w], got {s:?}")));
    }
    x.reshape(&[s[0], s[1], 1, s[2], s[3]])
}

pub(crate) fn drop_time<T: Scalar>(x: Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    x.into_reshape(&[s[0], s[1], s[3], s[4]])
}

/// A 2D convolution layer with weights `[out, in, kh, kw]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2DLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2DLayer<T> {
    pub fn geometry(&self) -> ConvGeometry {
        let s = self.weight.shape();
        ConvGeometry {
            in_ch: s[1],
            out_ch: s[0],
            kt: 1,
            kh: s[2],
            kw: s[3],
            stride: self.stride,
            pad_t: 0,
            pad_h: self.padding,
            pad_w: self.padding,
            dilation_t: 1,
        }
    }

    fn weight5(&self) -> Result<Tensor<T>> {
        let s = self.weight.shape();
        self.weight.reshape(&[s[0], s[1], 1, s[2], s[3]])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = conv_forward(&as_clip(x)?, &self.weight5()?, &self.bias, &self.geometry())?;
        drop_time(y)
    }

    /// Returns `(grad_input, [grad_weight, grad_bias])`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let gy = as_clip(grad_out)?;
        let g = conv_backward(&as_clip(x)?, &self.weight5()?, &gy, &self.geometry())?;
        Ok((
            drop_time(g.input)?,
            vec![g.weight.into_reshape(self.weight.shape())?, g.bias],
        ))
    }
}

/// A 3D convolution layer with weights `[out, in, kt, kh, kw]` and taps spaced
/// `temporal_dilation` frames apart.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3DLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
    pub temporal_padding: usize,
    pub temporal_dilation: usize,
}

impl<T: Scalar> Conv3DLayer<T> {
    pub fn geometry(&self) -> ConvGeometry {
        let s = self.weight.shape();
        ConvGeometry {
            in_ch: s[1],
            out_ch: s[0],
            kt: s[2],
            kh: s[3],
            kw: s[4],
            stride: self.stride,
            pad_t: self.temporal_padding,
            pad_h: self.padding,
            pad_w: self.padding,
            dilation_t: self.temporal_dilation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv_forward(x, &self.weight, &self.bias, &self.geometry())
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = conv_backward(x, &self.weight, grad_out, &self.geometry())?;
        Ok((g.input, vec![g.weight, g.bias]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn uniform(seed: u64, shape: &[usize]) -> Tensor<f64> {
        Tensor::seeded_uniform(&mut RngStream::new(seed), shape, -1.0, 1.0).unwrap()
    }

    /// Direct nested-loop cross-correlation, 2D.
    fn direct_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let (ho, wo) = (h + 2 * pad - k + 1, wd + 2 * pad - k + 1);
        Tensor::from_fn(&[n, o, ho, wo], |i| {
            let mut s = b.get(&[i[1]]);
            for ci in 0..c {
                for dy in 0..k {
                    for dx in 0..k {
                        let y = (i[2] + dy) as isize - pad as isize;
                        let xx = (i[3] + dx) as isize - pad as isize;
                        if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                            s += w.get(&[i[1], ci, dy, dx]) * x.get(&[i[0], ci, y as usize, xx as usize]);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn identity_kernel() {
        let x = uniform(1, &[2, 1, 4, 5]);
        let layer = Conv2DLayer {
            weight: Tensor::ones(&[1, 1, 1, 1]),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 0,
        };
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn all_ones_kernel_on_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 0.7);
        let layer = Conv2DLayer {
            weight: Tensor::ones(&[1, 1, 3, 3]),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 1,
        };
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        for r in 1..4 {
            for c in 1..4 {
                assert!((y.get(&[0, 0, r, c]) - 6.3).abs() < 1e-12);
            }
        }
        // corner sees 4 taps under zero padding
        assert!((y.get(&[0, 0, 0, 0]) - 2.8).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_oracle() {
        let x = uniform(2, &[1, 2, 6, 6]);
        let w = uniform(3, &[3, 2, 3, 3]);
        let b = uniform(4, &[3]);
        let layer = Conv2DLayer { weight: w.clone(), bias: b.clone(), stride: 1, padding: 1 };
        let y = layer.forward(&x).unwrap();
        assert!(y.max_abs_diff(&direct_conv2d(&x, &w, &b, 1)) <= 1e-5);
    }

    #[test]
    fn strided_output_shape() {
        let layer = Conv2DLayer::<f32> {
            weight: Tensor::ones(&[2, 1, 3, 3]),
            bias: Tensor::zeros(&[2]),
            stride: 2,
            padding: 1,
        };
        let y = layer.forward(&Tensor::ones(&[1, 1, 7, 6])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 3]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let layer = Conv2DLayer::<f32> {
            weight: Tensor::ones(&[2, 3, 3, 3]),
            bias: Tensor::zeros(&[2]),
            stride: 1,
            padding: 1,
        };
        assert!(matches!(layer.forward(&Tensor::ones(&[1, 2, 4, 4])), Err(Error::Dimension(_))));
    }

    #[test]
    fn center_slice_kernel_is_per_frame_conv2d() {
        let x = uniform(5, &[1, 2, 5, 4, 4]);
        let w2 = uniform(6, &[3, 2, 3, 3]);
        let b = uniform(7, &[3]);
        let w3 = Tensor::from_fn(&[3, 2, 3, 3, 3], |i| {
            if i[2] == 1 { w2.get(&[i[0], i[1], i[3], i[4]]) } else { 0.0 }
        });
        let c3 = Conv3DLayer { weight: w3, bias: b.clone(), stride: 1, padding: 1, temporal_padding: 0, temporal_dilation: 1 };
        let c2 = Conv2DLayer { weight: w2, bias: b, stride: 1, padding: 1 };
        let y3 = c3.forward(&x).unwrap();
        assert_eq!(y3.shape(), &[1, 3, 3, 4, 4]);
        for t in 0..3 {
            let frame = Tensor::from_fn(&[1, 2, 4, 4], |i| x.get(&[0, i[1], t + 1, i[2], i[3]]));
            let y2 = c2.forward(&frame).unwrap();
            let slice = Tensor::from_fn(&[1, 3, 4, 4], |i| y3.get(&[0, i[1], t, i[2], i[3]]));
            assert!(slice.max_abs_diff(&y2) <= 1e-12);
        }
    }

    #[test]
    fn constant_clip_collapses_temporal_sum() {
        let frame = uniform(8, &[1, 2, 4, 4]);
        let x = Tensor::from_fn(&[1, 2, 4, 4, 4], |i| frame.get(&[0, i[1], i[3], i[4]]));
        let w3 = uniform(9, &[2, 2, 3, 3, 3]);
        let k = Tensor::from_fn(&[2, 2, 3, 3], |i| (0..3).map(|t| w3.get(&[i[0], i[1], t, i[2], i[3]])).sum());
        let b = uniform(10, &[2]);
        let c3 = Conv3DLayer { weight: w3, bias: b.clone(), stride: 1, padding: 1, temporal_padding: 0, temporal_dilation: 1 };
        let y3 = c3.forward(&x).unwrap();
        let y2 = Conv2DLayer { weight: k, bias: b, stride: 1, padding: 1 }.forward(&frame).unwrap();
        for t in 0..2 {
            let slice = Tensor::from_fn(&[1, 2, 4, 4], |i| y3.get(&[0, i[1], t, i[2], i[3]]));
            assert!(slice.max_abs_diff(&y2) <= 1e-12);
        }
    }

    #[test]
    fn dilation_equals_zero_stuffed_kernel() {
        for d in [2usize, 4, 8] {
            let x = uniform(11 + d as u64, &[1, 2, 2 * d + 4, 4, 3]);
            let w = uniform(20 + d as u64, &[2, 2, 3, 3, 3]);
            let b = uniform(30, &[2]);
            let kt = 2 * d + 1;
            let stuffed = Tensor::from_fn(&[2, 2, kt, 3, 3], |i| {
                if i[2] % d == 0 { w.get(&[i[0], i[1], i[2] / d, i[3], i[4]]) } else { 0.0 }
            });
            let dil = Conv3DLayer { weight: w, bias: b.clone(), stride: 1, padding: 1, temporal_padding: d, temporal_dilation: d };
            let plain = Conv3DLayer { weight: stuffed, bias: b, stride: 1, padding: 1, temporal_padding: d, temporal_dilation: 1 };
            let a = dil.forward(&x).unwrap();
            let r = plain.forward(&x).unwrap();
            assert_eq!(a.shape(), r.shape());
            assert!(a.max_abs_diff(&r) <= 1e-6);
        }
    }

    #[test]
    fn insufficient_temporal_extent_names_minimum() {
        let c3 = Conv3DLayer::<f32> {
            weight: Tensor::ones(&[1, 1, 3, 1, 1]),
            bias: Tensor::zeros(&[1]),
            stride: 1,
            padding: 0,
            temporal_padding: 0,
            temporal_dilation: 4,
        };
        let err = c3.forward(&Tensor::ones(&[1, 1, 8, 2, 2])).unwrap_err();
        assert!(err.to_string().contains("minimum 9"), "{err}");
    }

    #[test]
    fn linearity_without_bias() {
        let x = uniform(40, &[1, 2, 5, 5]);
        let y = uniform(41, &[1, 2, 5, 5]);
        let layer = Conv2DLayer { weight: uniform(42, &[3, 2, 3, 3]), bias: Tensor::zeros(&[3]), stride: 1, padding: 1 };
        let (a, b) = (0.3, -1.7);
        let mix = x.zip_map(&y, |p, q| a * p + b * q).unwrap();
        let lhs = layer.forward(&mix).unwrap();
        let rhs = layer
            .forward(&x)
            .unwrap()
            .zip_map(&layer.forward(&y).unwrap(), |p, q| a * p + b * q)
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-5);
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let x = uniform(50, &[2, 2, 4, 4]);
        let layer = Conv2DLayer { weight: uniform(51, &[3, 2, 3, 3]), bias: uniform(52, &[3]), stride: 1, padding: 1 };
        let (gx, gp) = layer.backward(&x, &Tensor::zeros(&[2, 3, 4, 4])).unwrap();
        assert_eq!(gx.max_abs(), 0.0);
        assert!(gp.iter().all(|g| g.max_abs() == 0.0));
    }
}
