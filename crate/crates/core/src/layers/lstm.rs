//! Single-layer LSTM with input and recurrent dropout.
//!
//! Gate blocks are stacked `[input, forget, candidate, output]` along the
//! leading axis of `w_ih: [4h, f]`, `w_hh: [4h, h]` and `bias: [4h]`. Both
//! dropout masks are sampled once per sequence and reused at every step.

use crate::error::{Error, Result};
use crate::layers::activation::dropout_mask;
use crate::rng::RngStream;
use crate::tensor::{gemm_row, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LSTMLayer<T = f32> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
    pub dropout: f64,
    pub recurrent_dropout: f64,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    steps: usize,
    /// Dropped inputs `[s, f]`.
    x: Vec<T>,
    /// Dropped previous hidden states `[s, h]`.
    h_prev: Vec<T>,
    /// Cell states `[s + 1, h]`, row 0 is the initial state.
    c: Vec<T>,
    /// Activated gates `[s, 4h]`.
    gates: Vec<T>,
    input_mask: Option<Tensor<T>>,
    recurrent_mask: Option<Tensor<T>>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Weight transposes shared by every sequence of one batch.
pub struct LstmKernel<'a, T> {
    layer: &'a LSTMLayer<T>,
    w_ih_t: Tensor<T>,
    w_hh_t: Tensor<T>,
}

impl<T: Scalar> LSTMLayer<T> {
    pub fn hidden(&self) -> usize {
        self.w_hh.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w_hh.shape().get(1).copied().unwrap_or(0);
        let ok = self.w_ih.rank() == 2
            && self.w_ih.shape()[0] == 4 * h
            && self.w_hh.shape() == [4 * h, h]
            && self.bias.shape() == [4 * h];
        if !ok {
            return Err(Error::dim(format!(
                "inconsistent LSTM parameters: w_ih {:?}, w_hh {:?}, bias {:?}",
                self.w_ih.shape(),
                self.w_hh.shape(),
                self.bias.shape()
            )));
        }
        for r in [self.dropout, self.recurrent_dropout] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::config(format!("LSTM dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<LstmKernel<'_, T>> {
        self.validate()?;
        Ok(LstmKernel {
            layer: self,
            w_ih_t: self.w_ih.transpose2()?,
            w_hh_t: self.w_hh.transpose2()?,
        })
    }

    /// `seq: [steps, features] -> [steps, hidden]` from a zero initial state.
    pub fn forward(&self, seq: &Tensor<T>, train: bool, rng: &mut RngStream) -> Result<(Tensor<T>, LstmCache<T>)> {
        self.kernel()?.forward(seq, train, rng)
    }

    /// Returns `(grad_seq, [grad_w_ih, grad_w_hh, grad_bias])`.
    pub fn backward(&self, cache: &LstmCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut acc = LstmGradAccumulator::new(self);
        let gx = acc.add_sequence(cache, grad_out)?;
        Ok((gx, acc.finish()))
    }
}

impl<T: Scalar> LstmKernel<'_, T> {
    pub fn forward(&self, seq: &Tensor<T>, train: bool, rng: &mut RngStream) -> Result<(Tensor<T>, LstmCache<T>)> {
        let layer = self.layer;
        let (h, f) = (layer.hidden(), layer.features());
        if seq.rank() != 2 || seq.shape()[1] != f {
            return Err(Error::dim(format!(
                "LSTM expects [steps, {f}], got {:?}",
                seq.shape()
            )));
        }
        let steps = seq.shape()[0];
        let input_mask = (train && layer.dropout > 0.0)
            .then(|| dropout_mask::<T>(&[f], layer.dropout, rng))
            .transpose()?;
        let recurrent_mask = (train && layer.recurrent_dropout > 0.0)
            .then(|| dropout_mask::<T>(&[h], layer.recurrent_dropout, rng))
            .transpose()?;

        let g4 = 4 * h;
        let mut x = Vec::with_capacity(steps * f);
        let mut h_prev = Vec::with_capacity(steps * h);
        let mut c = vec![T::zero(); h];
        let mut gates = Vec::with_capacity(steps * g4);
        let mut out = Vec::with_capacity(steps * h);
        let mut h_cur = vec![T::zero(); h];
        let mut z = vec![0.0f64; g4];

        for t in 0..steps {
            let xt: Vec<T> = match &input_mask {
                Some(m) => seq.data()[t * f..(t + 1) * f].iter().zip(m.data()).map(|(&a, &b)| a * b).collect(),
                None => seq.data()[t * f..(t + 1) * f].to_vec(),
            };
            let hp: Vec<T> = match &recurrent_mask {
                Some(m) => h_cur.iter().zip(m.data()).map(|(&a, &b)| a * b).collect(),
                None => h_cur.clone(),
            };
            for (zi, b) in z.iter_mut().zip(layer.bias.data()) {
                *zi = b.as_f64();
            }
            gemm_row(&xt, self.w_ih_t.data(), g4, &mut z);
            gemm_row(&hp, self.w_hh_t.data(), g4, &mut z);

            let c_prev = &c[t * h..(t + 1) * h];
            let mut c_next = Vec::with_capacity(h);
            for j in 0..h {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[h + j]);
                let gg = z[2 * h + j].tanh();
                let og = sigmoid(z[3 * h + j]);
                let cv = fg * c_prev[j].as_f64() + ig * gg;
                c_next.push(T::from_f64(cv));
                h_cur[j] = T::from_f64(og * cv.tanh());
                z[j] = ig;
                z[h + j] = fg;
                z[2 * h + j] = gg;
                z[3 * h + j] = og;
            }
            gates.extend(z.iter().map(|&v| T::from_f64(v)));
            c.extend(c_next);
            out.extend_from_slice(&h_cur);
            x.extend(xt);
            h_prev.extend(hp);
        }

        Ok((
            Tensor::new(vec![steps, h], out)?,
            LstmCache {
                steps,
                x,
                h_prev,
                c,
                gates,
                input_mask,
                recurrent_mask,
            },
        ))
    }
}

/// Sums parameter gradients over several sequences in call order.
pub struct LstmGradAccumulator<'a, T> {
    layer: &'a LSTMLayer<T>,
    w_ih: Vec<f64>,
    w_hh: Vec<f64>,
    bias: Vec<f64>,
}

impl<'a, T: Scalar> LstmGradAccumulator<'a, T> {
    pub fn new(layer: &'a LSTMLayer<T>) -> Self {
        let (h, f) = (layer.hidden(), layer.features());
        LstmGradAccumulator {
            layer,
            w_ih: vec![0.0; 4 * h * f],
            w_hh: vec![0.0; 4 * h * h],
            bias: vec![0.0; 4 * h],
        }
    }

    /// Back-propagates one sequence; `grad_out: [steps, hidden]`.
    pub fn add_sequence(&mut self, cache: &LstmCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let layer = self.layer;
        let (h, f) = (layer.hidden(), layer.features());
        let steps = cache.steps;
        if grad_out.shape() != [steps, h] || cache.x.len() != steps * f {
            return Err(Error::State(format!(
                "LSTM cache for {steps} steps does not match grad {:?}",
                grad_out.shape()
            )));
        }
        let g4 = 4 * h;
        let mut gx = vec![T::zero(); steps * f];
        let mut dh_next = vec![0.0f64; h];
        let mut dc_next = vec![0.0f64; h];
        let mut dz = vec![0.0f64; g4];
        let mut acc_f = vec![0.0f64; f];
        let mut acc_h = vec![0.0f64; h];

        for t in (0..steps).rev() {
            let gates = &cache.gates[t * g4..(t + 1) * g4];
            let c_prev = &cache.c[t * h..(t + 1) * h];
            let c_cur = &cache.c[(t + 1) * h..(t + 2) * h];
            for j in 0..h {
                let (ig, fg, gg, og) = (
                    gates[j].as_f64(),
                    gates[h + j].as_f64(),
                    gates[2 * h + j].as_f64(),
                    gates[3 * h + j].as_f64(),
                );
                let dh = grad_out.data()[t * h + j].as_f64() + dh_next[j];
                let tc = c_cur[j].as_f64().tanh();
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * og * (1.0 - tc * tc);
                let d_i = dc * gg;
                let d_g = dc * ig;
                let d_f = dc * c_prev[j].as_f64();
                dc_next[j] = dc * fg;
                dz[j] = d_i * ig * (1.0 - ig);
                dz[h + j] = d_f * fg * (1.0 - fg);
                dz[2 * h + j] = d_g * (1.0 - gg * gg);
                dz[3 * h + j] = d_o * og * (1.0 - og);
            }

            let xt = &cache.x[t * f..(t + 1) * f];
            let hp = &cache.h_prev[t * h..(t + 1) * h];
            for (gi, &d) in dz.iter().enumerate() {
                self.bias[gi] += d;
                if d == 0.0 {
                    continue;
                }
                for (w, &xv) in self.w_ih[gi * f..(gi + 1) * f].iter_mut().zip(xt) {
                    *w += d * xv.as_f64();
                }
                for (w, &hv) in self.w_hh[gi * h..(gi + 1) * h].iter_mut().zip(hp) {
                    *w += d * hv.as_f64();
                }
            }

            let dz_t: Vec<T> = dz.iter().map(|&v| T::from_f64(v)).collect();
            acc_f.iter_mut().for_each(|a| *a = 0.0);
            gemm_row(&dz_t, layer.w_ih.data(), f, &mut acc_f);
            for (j, a) in acc_f.iter().enumerate() {
                let m = cache.input_mask.as_ref().map_or(1.0, |m| m.data()[j].as_f64());
                gx[t * f + j] = T::from_f64(a * m);
            }
            acc_h.iter_mut().for_each(|a| *a = 0.0);
            gemm_row(&dz_t, layer.w_hh.data(), h, &mut acc_h);
            for (j, a) in acc_h.iter().enumerate() {
                let m = cache.recurrent_mask.as_ref().map_or(1.0, |m| m.data()[j].as_f64());
                dh_next[j] = a * m;
            }
        }
        Tensor::new(vec![steps, f], gx)
    }

    pub fn finish(self) -> Vec<Tensor<T>> {
        let (h, f) = (self.layer.hidden(), self.layer.features());
        let conv = |v: Vec<f64>| v.into_iter().map(T::from_f64).collect::<Vec<T>>();
        vec![
            Tensor::new(vec![4 * h, f], conv(self.w_ih)).expect("w_ih shape"),
            Tensor::new(vec![4 * h, h], conv(self.w_hh)).expect("w_hh shape"),
            Tensor::new(vec![4 * h], conv(self.bias)).expect("bias shape"),
        ]
    }
}
