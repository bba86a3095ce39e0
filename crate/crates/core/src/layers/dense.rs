use crate::error::{Error, Result};
use crate::tensor::{gemm_row, Scalar, Tensor};

/// Affine map `y = W x + b` with `W: [out, in]`. No activation.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Scalar>(weight: &Tensor<T>, bias: &Tensor<T>, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    let xs = x.shape();
    if ws.len() != 2 || bias.shape() != [ws[0]] || xs.len() != 2 || xs[1] != ws[1] {
        return Err(Error::dim(format!(
            "dense weights {:?} / bias {:?} cannot take input {:?}",
            ws,
            bias.shape(),
            xs
        )));
    }
    Ok((xs[0], ws[1], ws[0]))
}

/// `x: [batch, in] -> [batch, out]`.
pub fn dense_forward<T: Scalar>(weight: &Tensor<T>, bias: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, fin, fout) = check(weight, bias, x)?;
    let wt = weight.transpose2()?;
    let mut out = Vec::with_capacity(n * fout);
    let mut acc = vec![0.0f64; fout];
    for i in 0..n {
        for (a, b) in acc.iter_mut().zip(bias.data()) {
            *a = b.as_f64();
        }
        gemm_row(&x.data()[i * fin..(i + 1) * fin], wt.data(), fout, &mut acc);
        out.extend(acc.iter().map(|&a| T::from_f64(a)));
    }
    Tensor::new(vec![n, fout], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    weight: &Tensor<T>,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, fin, fout) = (x.shape()[0], weight.shape()[1], weight.shape()[0]);
    if grad_out.shape() != [n, fout] || x.shape() != [n, fin] {
        return Err(Error::dim(format!(
            "dense backward: input {:?}, grad {:?}, weight {:?}",
            x.shape(),
            grad_out.shape(),
            weight.shape()
        )));
    }
    let gy_t = grad_out.transpose2()?;
    let mut gw = vec![0.0f64; fout * fin];
    let mut gb = vec![0.0f64; fout];
    for o in 0..fout {
        let row = &gy_t.data()[o * n..(o + 1) * n];
        gemm_row(row, x.data(), fin, &mut gw[o * fin..(o + 1) * fin]);
        gb[o] = row.iter().map(|v| v.as_f64()).sum();
    }
    let mut gx = Vec::with_capacity(n * fin);
    let mut acc = vec![0.0f64; fin];
    for i in 0..n {
        acc.iter_mut().for_each(|a| *a = 0.0);
        gemm_row(&grad_out.data()[i * fout..(i + 1) * fout], weight.data(), fin, &mut acc);
        gx.extend(acc.iter().map(|&a| T::from_f64(a)));
    }
    Ok((
        Tensor::new(vec![n, fin], gx)?,
        Tensor::new(vec![fout, fin], gw.into_iter().map(T::from_f64).collect())?,
        Tensor::new(vec![fout], gb.into_iter().map(T::from_f64).collect())?,
    ))
}

impl<T: Scalar> DenseLayer<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(&self.weight, &self.bias, x)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let (gx, gw, gb) = dense_backward(&self.weight, x, grad_out)?;
        Ok((gx, vec![gw, gb]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::new(vec![2, 3], vec![1.0f32, -2.0, 3.0, 0.5, 0.25, -1.0]).unwrap();
        assert_eq!(dense_forward(&Tensor::eye(3), &Tensor::zeros(&[3]), &x).unwrap(), x);
        let b = Tensor::from_vec(vec![0.1f32, 0.2]);
        let y = dense_forward(&Tensor::zeros(&[2, 3]), &b, &x).unwrap();
        assert_eq!(y.data(), &[0.1, 0.2, 0.1, 0.2]);
    }

    #[test]
    fn matches_matmul_oracle() {
        let mut rng = RngStream::new(12);
        let w: Tensor = Tensor::seeded_uniform(&mut rng, &[2, 3], -1.0, 1.0).unwrap();
        let x: Tensor = Tensor::seeded_uniform(&mut rng, &[3, 1], -1.0, 1.0).unwrap();
        let expect = w.matmul(&x).unwrap();
        let y = dense_forward(&w, &Tensor::zeros(&[2]), &x.reshape(&[1, 3]).unwrap()).unwrap();
        assert!(y.reshape(&[2, 1]).unwrap().max_abs_diff(&expect) <= 1e-7);
    }

    #[test]
    fn weight_grad_is_outer_product() {
        let x = Tensor::new(vec![1, 3], vec![1.0f64, 2.0, -1.0]).unwrap();
        let gy = Tensor::new(vec![1, 2], vec![0.5f64, -3.0]).unwrap();
        let (_, gw, gb) = dense_backward(&Tensor::zeros(&[2, 3]), &x, &gy).unwrap();
        assert_eq!(gw.data(), &[0.5, 1.0, -0.5, -3.0, -6.0, 3.0]);
        assert_eq!(gb.data(), gy.data());
    }

    #[test]
    fn mismatch_is_dimension_error() {
        let r = dense_forward(&Tensor::<f32>::zeros(&[2, 3]), &Tensor::zeros(&[2]), &Tensor::zeros(&[1, 4]));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
