//! Batch normalization over axis 1 of `[n, c, ...]` tensors.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormLayer<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<f64>,
    pub train: bool,
}

/// Running statistics after a training-mode step.
#[derive(Clone, Debug)]
pub struct RunningUpdate<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

fn layout<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || s[1] != channels {
        return Err(Error::dim(format!(
            "batchnorm over {channels} channels cannot take {s:?}"
        )));
    }
    Ok((s[0], s[2..].iter().product()))
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        train: bool,
    ) -> Result<(Tensor<T>, BatchNormCache<T>, Option<RunningUpdate<T>>)> {
        let c = self.channels();
        let (n, inner) = layout(x, c)?;
        let xd = x.data();
        let (mean, var): (Vec<f64>, Vec<f64>) = if train {
            let m = (n * inner) as f64;
            (0..c)
                .map(|ch| {
                    let vals = (0..n).flat_map(|i| {
                        let off = (i * c + ch) * inner;
                        xd[off..off + inner].iter().map(|v| v.as_f64())
                    });
                    let mean = vals.clone().sum::<f64>() / m;
                    let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                    (mean, var)
                })
                .unzip()
        } else {
            (
                self.running_mean.data().iter().map(|v| v.as_f64()).collect(),
                self.running_var.data().iter().map(|v| v.as_f64()).collect(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();

        let mut xhat = Vec::with_capacity(xd.len());
        let mut out = Vec::with_capacity(xd.len());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                let (g, b) = (self.gamma.data()[ch].as_f64(), self.beta.data()[ch].as_f64());
                for v in &xd[off..off + inner] {
                    let h = (v.as_f64() - mean[ch]) * inv_std[ch];
                    xhat.push(T::from_f64(h));
                    out.push(T::from_f64(g * h + b));
                }
            }
        }

        let update = train.then(|| {
            let mom = self.momentum;
            RunningUpdate {
                mean: Tensor::from_vec(
                    (0..c)
                        .map(|ch| T::from_f64((1.0 - mom) * self.running_mean.data()[ch].as_f64() + mom * mean[ch]))
                        .collect(),
                ),
                var: Tensor::from_vec(
                    (0..c)
                        .map(|ch| T::from_f64((1.0 - mom) * self.running_var.data()[ch].as_f64() + mom * var[ch]))
                        .collect(),
                ),
            }
        });

        Ok((
            Tensor::new(x.shape().to_vec(), out)?,
            BatchNormCache {
                xhat: Tensor::new(x.shape().to_vec(), xhat)?,
                inv_std,
                train,
            },
            update,
        ))
    }

    /// Returns `(grad_input, [grad_gamma, grad_beta])`.
    pub fn backward(&self, cache: &BatchNormCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let c = self.channels();
        cache.xhat.expect_same_shape(grad_out)?;
        let (n, inner) = layout(grad_out, c)?;
        let m = (n * inner) as f64;
        let gd = grad_out.data();
        let hd = cache.xhat.data();

        let mut sum_g = vec![0.0f64; c];
        let mut sum_gh = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                for k in off..off + inner {
                    let g = gd[k].as_f64();
                    sum_g[ch] += g;
                    sum_gh[ch] += g * hd[k].as_f64();
                }
            }
        }

        let mut gx = Vec::with_capacity(gd.len());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * inner;
                let scale = self.gamma.data()[ch].as_f64() * cache.inv_std[ch];
                for k in off..off + inner {
                    let g = gd[k].as_f64();
                    let v = if cache.train {
                        scale * (g - sum_g[ch] / m - hd[k].as_f64() * sum_gh[ch] / m)
                    } else {
                        scale * g
                    };
                    gx.push(T::from_f64(v));
                }
            }
        }
        Ok((
            Tensor::new(grad_out.shape().to_vec(), gx)?,
            vec![
                Tensor::from_vec(sum_gh.into_iter().map(T::from_f64).collect()),
                Tensor::from_vec(sum_g.into_iter().map(T::from_f64).collect()),
            ],
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x: Tensor<f32> = Tensor::seeded_uniform(&mut RngStream::new(3), &[4, 3, 5, 5], -2.0, 7.0).unwrap();
        let mut bn = BatchNormLayer::new(3);
        bn.eps = 1e-9;
        let (_, cache, upd) = bn.forward(&x, true).unwrap();
        let inner = 25;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| {
                    let off = (i * 3 + ch) * inner;
                    cache.xhat.data()[off..off + inner].iter().map(|&v| v as f64).collect::<Vec<_>>()
                })
                .collect();
            let (m, v) = crate::tensor::moments(&vals).unwrap();
            assert!(m.abs() <= 1e-5, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-4, "var {v}");
        }
        assert!(upd.unwrap().var.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNormLayer::<f64>::new(1);
        bn.running_mean = Tensor::from_vec(vec![2.0]);
        bn.running_var = Tensor::from_vec(vec![4.0]);
        bn.eps = 0.0;
        let x = Tensor::full(&[1, 1, 2], 6.0);
        let (y, _, upd) = bn.forward(&x, false).unwrap();
        assert!(upd.is_none());
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn wrong_channels_rejected() {
        let bn = BatchNormLayer::<f32>::new(2);
        assert!(bn.forward(&Tensor::ones(&[1, 3, 2, 2]), true).is_err());
    }
}
