use serde::Serialize;

use super::{activation_inputs, Dataset, Model, TrainError};
use crate::polyapprox::Interval;

/// Input range of one activation layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RangeEstimate {
    /// Node id of the activation.
    pub layer: usize,
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    pub margin: f64,
}

impl RangeEstimate {
    /// `[lo - margin, hi + margin]`, widened to a minimal width when the
    /// layer saw a single value.
    pub fn inflated(&self) -> Interval {
        let (mut lo, mut hi) = (self.lo - self.margin, self.hi + self.margin);
        if hi - lo < 1e-6 {
            let pad = 1e-3 * (1.0 + lo.abs().max(hi.abs()));
            lo -= pad;
            hi += pad;
        }
        Interval::new(lo, hi).expect("finite widened interval")
    }

    pub fn with_margin(self, margin: f64) -> Self {
        RangeEstimate { margin, ..self }
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let (k, frac) = (h.floor() as usize, h - h.floor());
    if k + 1 < v.len() {
        v[k] + frac * (v[k + 1] - v[k])
    } else {
        v[k]
    }
}

/// Per-sample minima and maxima of each activation's input, in topological
/// activation order.
pub fn per_sample_extremes(model: &Model, data: &Dataset, batch: usize) -> Result<Vec<(usize, Vec<f64>, Vec<f64>)>, TrainError> {
    let mut out: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for b in data.batches(batch) {
        let acts = activation_inputs(model, &b.images)?;
        if out.is_empty() {
            out = acts.iter().map(|(id, _)| (*id, Vec::new(), Vec::new())).collect();
        }
        for ((_, mins, maxs), (_, x)) in out.iter_mut().zip(&acts) {
            let n = x.dims()[0];
            let inner = x.len() / n;
            for s in 0..n {
                let row = &x.data()[s * inner..(s + 1) * inner];
                mins.push(row.iter().cloned().fold(f64::INFINITY, f64::min));
                maxs.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    Ok(out)
}

/// Range per activation layer: the `1 - alpha` quantile of per-sample
/// minima and the `alpha` quantile of per-sample maxima over `data`, with
/// `margins[i]` recorded for inflation (missing margins are 0).
pub fn estimate_ranges(model: &Model, data: &Dataset, alpha: f64, margins: &[f64]) -> Result<Vec<RangeEstimate>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Data("range estimation set is empty".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TrainError::Config(format!("confidence {alpha} outside (0, 1]")));
    }
    if let Some(m) = margins.iter().find(|m| !(**m >= 0.0)) {
        return Err(TrainError::Config(format!("negative error margin {m}")));
    }
    let extremes = per_sample_extremes(model, data, 256)?;
    Ok(extremes
        .into_iter()
        .enumerate()
        .map(|(i, (layer, mins, maxs))| RangeEstimate {
            layer,
            lo: quantile(&mins, 1.0 - alpha),
            hi: quantile(&maxs, alpha),
            alpha,
            margin: margins.get(i).copied().unwrap_or(0.0),
        })
        .collect())
}
