//! Max pooling and global average pooling over channel-first tensors.
//!
//! Max pooling uses non-overlapping windows (stride = window). A trailing
//! partial window at a border is clipped, so each output extent is
//! `ceil(input / window)`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Split `[n, c, d0, d1, ...]` into outer `n*c` and the spatial extents.
fn spatial<T: Scalar>(x: &Tensor<T>, window: &[usize]) -> Result<(usize, Vec<usize>)> {
    let s = x.shape();
    if s.len() != window.len() + 2 {
        return Err(Error::dim(format!(
            "pool window {window:?} does not fit input {s:?}"
        )));
    }
    let dims = s[2..].to_vec();
    for (d, w) in dims.iter().zip(window) {
        if *w == 0 || w > d {
            return Err(Error::dim(format!(
                "pool window {window:?} larger than input extents {dims:?}"
            )));
        }
    }
    Ok((s[0] * s[1], dims))
}

pub fn pooled_extents(dims: &[usize], window: &[usize]) -> Vec<usize> {
    dims.iter().zip(window).map(|(d, w)| d.div_ceil(*w)).collect()
}

/// Returns the pooled tensor and, per output element, the flat input offset
/// of the winning element (first maximum in scan order).
pub fn max_pool_forward<T: Scalar>(x: &Tensor<T>, window: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
    let (outer, dims) = spatial(x, window)?;
    // promote to 3 spatial dims
    let pad = 3 - dims.len();
    let mut d3 = vec![1usize; pad];
    d3.extend(&dims);
    let mut w3 = vec![1usize; pad];
    w3.extend(window);
    let o3 = pooled_extents(&d3, &w3);
    let in_len: usize = d3.iter().product();
    let out_len: usize = o3.iter().product();

    let mut out = Vec::with_capacity(outer * out_len);
    let mut arg = Vec::with_capacity(outer * out_len);
    let xd = x.data();
    for m in 0..outer {
        let base = m * in_len;
        for ot in 0..o3[0] {
            for oy in 0..o3[1] {
                for ox in 0..o3[2] {
                    let mut best = T::neg_infinity();
                    let mut best_at = usize::MAX;
                    for t in ot * w3[0]..((ot + 1) * w3[0]).min(d3[0]) {
                        for y in oy * w3[1]..((oy + 1) * w3[1]).min(d3[1]) {
                            for xx in ox * w3[2]..((ox + 1) * w3[2]).min(d3[2]) {
                                let at = base + (t * d3[1] + y) * d3[2] + xx;
                                if best_at == usize::MAX || xd[at] > best {
                                    best = xd[at];
                                    best_at = at;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_at);
                }
            }
        }
    }
    let mut shape = x.shape()[..2].to_vec();
    shape.extend(pooled_extents(&dims, window));
    Ok((Tensor::new(shape, out)?, arg))
}

pub fn max_pool_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.len() {
        return Err(Error::State(format!(
            "max-pool cache holds {} positions, grad has {}",
            argmax.len(),
            grad_out.len()
        )));
    }
    let mut gx = Tensor::zeros(input_shape);
    let gd = gx.data_mut();
    for (&at, &g) in argmax.iter().zip(grad_out.data()) {
        gd[at] = gd[at] + g;
    }
    Ok(gx)
}

/// `[n, c, ...] -> [n, c]`, averaging every remaining position.
pub fn global_avg_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 3 {
        return Err(Error::dim(format!("global average pool needs [n, c, ...], got {s:?}")));
    }
    let inner: usize = s[2..].iter().product();
    let data = x
        .data()
        .chunks(inner)
        .map(|c| T::from_f64(c.iter().map(|v| v.as_f64()).sum::<f64>() / inner as f64))
        .collect();
    Tensor::new(vec![s[0], s[1]], data)
}

pub fn global_avg_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let inner: usize = input_shape[2..].iter().product();
    if grad_out.shape() != &input_shape[..2] {
        return Err(Error::dim(format!(
            "global average grad {:?} vs input {:?}",
            grad_out.shape(),
            input_shape
        )));
    }
    let scale = 1.0 / inner as f64;
    let mut data = Vec::with_capacity(grad_out.len() * inner);
    for g in grad_out.data() {
        let v = T::from_f64(g.as_f64() * scale);
        data.extend(std::iter::repeat(v).take(inner));
    }
    Tensor::new(input_shape.to_vec(), data)
}
