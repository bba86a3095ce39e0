//! Central finite-difference verification of analytic gradients.
//!
//! The scalar probed is `L = sum(out * R)` for a fixed random projection `R`,
//! so every output element contributes. Each evaluation re-seeds the forward
//! RNG, which keeps dropout masks identical between the two probes.

use crate::error::Result;
use crate::model::{model_backward, model_forward, Mode, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Cap on probed entries per tensor; `None` probes all of them.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-3, floor: 1e-3, max_entries: Some(64), seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub probed: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_indices(len: usize, cap: Option<usize>, rng: &mut RngStream) -> Vec<usize> {
    match cap {
        Some(c) if c < len => {
            let mut idx: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut idx);
            idx.truncate(c);
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

fn objective(model: &ModelSpec<f64>, x: &Tensor<f64>, r: &Tensor<f64>, seed: u64) -> Result<f64> {
    let out = model_forward(model, x, Mode::Train, &mut RngStream::new(seed))?.output;
    Ok(out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Compares analytic gradients of the input and every trainable tensor with
/// central differences, in training mode.
pub fn check_model(model: &ModelSpec<f64>, input: &Tensor<f64>, cfg: &GradCheckConfig) -> Result<GradReport> {
    let fwd_seed = cfg.seed ^ 0x5eed;
    let mut rng = RngStream::new(cfg.seed);
    let pass = model_forward(model, input, Mode::Train, &mut RngStream::new(fwd_seed))?;
    let r = Tensor::<f64>::seeded_uniform(&mut rng, pass.output.shape(), -1.0, 1.0)?;
    let back = model_backward(model, &pass, &r)?;

    let mut tensors = vec![];
    let h = cfg.step;

    let mut record = |name: String, probed: Vec<(usize, f64, f64)>| {
        let mut tc = TensorCheck { name, probed: probed.len(), max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
        for (i, a, n) in probed {
            let e = relative_error(a, n, cfg.floor);
            if e >= tc.max_rel_error {
                tc = TensorCheck { max_rel_error: e, worst_index: i, analytic: a, numeric: n, ..tc };
            }
        }
        tensors.push(tc);
    };

    let mut x = input.clone();
    let mut probed = vec![];
    for i in probe_indices(x.len(), cfg.max_entries, &mut rng) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = objective(model, &x, &r, fwd_seed)?;
        x.data_mut()[i] = orig - h;
        let down = objective(model, &x, &r, fwd_seed)?;
        x.data_mut()[i] = orig;
        probed.push((i, back.input.data()[i], (up - down) / (2.0 * h)));
    }
    record("input".into(), probed);

    let mut m = model.clone();
    for name in model.trainable_names() {
        let grad = &back.params[&name];
        let mut probed = vec![];
        for i in probe_indices(grad.len(), cfg.max_entries, &mut rng) {
            let orig = m.weights[&name].data()[i];
            m.weights.get_mut(&name).expect("weight").data_mut()[i] = orig + h;
            let up = objective(&m, input, &r, fwd_seed)?;
            m.weights.get_mut(&name).expect("weight").data_mut()[i] = orig - h;
            let down = objective(&m, input, &r, fwd_seed)?;
            m.weights.get_mut(&name).expect("weight").data_mut()[i] = orig;
            probed.push((i, grad.data()[i], (up - down) / (2.0 * h)));
        }
        record(name, probed);
    }
    Ok(GradReport { tensors })
}

/// Uniform values in `±[lo, hi]`, never closer than `lo` to zero; keeps
/// ReLU inputs away from the kink.
pub fn away_from_zero(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.uniform(lo, hi);
        if rng.bernoulli(0.5) {
            v
        } else {
            -v
        }
    })
}

/// A random permutation of evenly spaced values, so every pooling window
/// has a clear winner.
pub fn distinct_values(rng: &mut RngStream, shape: &[usize], spacing: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * spacing).collect();
    rng.shuffle(&mut vals);
    Tensor::new(shape.to_vec(), vals).expect("matching length")
}
