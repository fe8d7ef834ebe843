use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::run::TrackRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub variant: Variant,
    /// Root-mean-square error per pair over all frames, samples.
    pub rmse: Vec<f64>,
    pub median_rmse: f64,
    /// Fraction of frames whose largest per-pair error is at most `delta`.
    pub within_delta: f64,
    pub mean_resamples: f64,
    /// Machine-dependent; never part of a pass/fail decision.
    pub seconds_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub delta: f64,
    pub frames: usize,
    pub variants: Vec<VariantMetrics>,
}

impl MetricsReport {
    pub fn get(&self, variant: &Variant) -> Option<&VariantMetrics> {
        self.variants.iter().find(|v| &v.variant == variant)
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn evaluate(records: &TrackRecord, delta: f64) -> Result<MetricsReport> {
    if records.frames.is_empty() {
        return Err(Error::InsufficientData { got: 0, need: 1 });
    }
    let truths = records
        .frames
        .iter()
        .map(|f| {
            f.truth
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("frame {} has no ground truth", f.frame)))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = truths[0].dim();
    if dim == 0 {
        return Err(Error::InvalidInput("ground truth has no pairs".into()));
    }
    let n = records.frames.len() as f64;

    let mut variants = Vec::with_capacity(records.variants.len());
    for (k, &variant) in records.variants.iter().enumerate() {
        let mut sq = vec![0.0; dim];
        let mut within = 0usize;
        let mut resamples = 0usize;
        for (f, truth) in records.frames.iter().zip(&truths) {
            let out = f.outputs.get(k).ok_or_else(|| {
                Error::InvalidInput(format!("frame {} lacks output for {variant}", f.frame))
            })?;
            if out.prediction.dim() != dim || truth.dim() != dim {
                return Err(Error::InvalidInput(format!("frame {} has mismatched dimensions", f.frame)));
            }
            let mut worst = 0.0f64;
            for (s, (p, t)) in sq.iter_mut().zip(out.prediction.iter().zip(truth.iter())) {
                let e = p - t;
                *s += e * e;
                worst = worst.max(e.abs());
            }
            if worst <= delta {
                within += 1;
            }
            resamples += out.resampled;
        }
        let rmse: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();
        variants.push(VariantMetrics {
            variant,
            median_rmse: median(&rmse),
            rmse,
            within_delta: within as f64 / n,
            mean_resamples: resamples as f64 / n,
            seconds_per_frame: records.seconds_per_frame.get(k).copied().unwrap_or(0.0),
        });
    }
    Ok(MetricsReport {
        delta,
        frames: records.frames.len(),
        variants,
    })
}
