//! Prediction repair: scale normalization, mean filtering and time-delay
//! alignment, applied per target in that order.

use crate::error::{Error, Result};
use crate::metrics::compute_ccc;

/// Statistics of one target, taken from the training split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStats {
    pub label_mean: f64,
    pub label_std: f64,
    pub pred_mean: f64,
}

pub fn fit_train_stats(labels: &[f64], preds: &[f64]) -> Result<TrainStats> {
    if labels.is_empty() || preds.is_empty() {
        return Err(Error::DegenerateStats("empty training split".into()));
    }
    let n = labels.len() as f64;
    let label_mean = labels.iter().sum::<f64>() / n;
    let var = labels.iter().map(|v| (v - label_mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateStats("training labels have zero spread".into()));
    }
    Ok(TrainStats {
        label_mean,
        label_std: var.sqrt(),
        pred_mean: preds.iter().sum::<f64>() / preds.len() as f64,
    })
}

impl TrainStats {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_std > 0.0) || !self.label_mean.is_finite() || !self.pred_mean.is_finite() {
            return Err(Error::DegenerateStats(format!("{self:?}")));
        }
        Ok(())
    }
}

/// `(y' - label_mean) / label_std`.
pub fn scale_normalize(preds: &[f64], stats: &TrainStats) -> Result<Vec<f64>> {
    stats.validate()?;
    Ok(preds.iter().map(|p| (p - stats.label_mean) / stats.label_std).collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MeanFilter {
    /// `y' - label_mean + pred_mean`
    #[default]
    Printed,
    /// `y' - pred_mean + label_mean`
    Swapped,
}

pub fn mean_filter(preds: &[f64], stats: &TrainStats, variant: MeanFilter) -> Result<Vec<f64>> {
    stats.validate()?;
    let shift = match variant {
        MeanFilter::Printed => stats.pred_mean - stats.label_mean,
        MeanFilter::Swapped => stats.label_mean - stats.pred_mean,
    };
    Ok(preds.iter().map(|p| p + shift).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayResult {
    pub best_t: i32,
    pub aligned_len: usize,
    pub ccc: f64,
    /// `labels[start..start + aligned_len]` pairs with the shifted predictions.
    pub label_start: usize,
    pub aligned_preds: Vec<f64>,
}

pub const MAX_DELAY: i32 = 10;

/// Picks `t` in `[-max_t, max_t]` maximising CCC between the labels and
/// `y_td(f) = y'(f + t)` on their overlap. Ties go to the smaller `|t|`, then
/// to the negative shift. Shifts where CCC is undefined are skipped.
pub fn time_delay_align(labels: &[f64], preds: &[f64], max_t: i32) -> Result<DelayResult> {
    if labels.len() != preds.len() {
        return Err(Error::Length(format!("{} labels vs {} predictions", labels.len(), preds.len())));
    }
    let n = labels.len();
    if max_t < 0 || n <= 2 * max_t as usize {
        return Err(Error::domain(format!("series of length {n} too short for shifts up to {max_t}")));
    }
    let mut order: Vec<i32> = (-max_t..=max_t).collect();
    order.sort_by_key(|t| (t.abs(), *t > 0));
    let mut best: Option<(i32, f64)> = None;
    for t in order {
        let (ls, ps, len) = overlap(n, t);
        let Ok(c) = compute_ccc(&labels[ls..ls + len], &preds[ps..ps + len]) else {
            continue;
        };
        if best.map_or(true, |(_, b)| c > b) {
            best = Some((t, c));
        }
    }
    let (t, c) = best.ok_or_else(|| Error::UndefinedMetric("CCC undefined for every shift".into()))?;
    let (ls, ps, len) = overlap(n, t);
    Ok(DelayResult {
        best_t: t,
        aligned_len: len,
        ccc: c,
        label_start: ls,
        aligned_preds: preds[ps..ps + len].to_vec(),
    })
}

/// `(label_start, pred_start, len)` for shift `t`.
fn overlap(n: usize, t: i32) -> (usize, usize, usize) {
    let a = t.unsigned_abs() as usize;
    if t >= 0 {
        (0, a, n - a)
    } else {
        (a, 0, n - a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Steps {
    pub scale_normalize: bool,
    pub mean_filter: bool,
    pub time_delay: bool,
}

impl std::str::FromStr for Steps {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut steps = Steps { scale_normalize: false, mean_filter: false, time_delay: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "sn" => steps.scale_normalize = true,
                "mf" => steps.mean_filter = true,
                "td" => steps.time_delay = true,
                other => return Err(Error::config(format!("unknown post-processing step `{other}` (sn|mf|td)"))),
            }
        }
        Ok(steps)
    }
}

/// Applies the enabled steps in fixed order. Returns the repaired predictions
/// and, when alignment ran, its result; the aligned output is shorter than
/// the input by `|best_t|`.
pub fn apply_chain(
    labels: &[f64],
    preds: &[f64],
    stats: &TrainStats,
    steps: Steps,
    variant: MeanFilter,
) -> Result<(Vec<f64>, Option<DelayResult>)> {
    let mut p = preds.to_vec();
    if steps.scale_normalize {
        p = scale_normalize(&p, stats)?;
    }
    if steps.mean_filter {
        p = mean_filter(&p, stats, variant)?;
    }
    if steps.time_delay {
        let d = time_delay_align(labels, &p, MAX_DELAY)?;
        return Ok((d.aligned_preds.clone(), Some(d)));
    }
    Ok((p, None))
}
