//! Fitted preprocessing + feature-extraction front end shared by the
//! detectors. Normalization ranges are fitted once on benign training
//! traces and reused (with clamping) at detection time.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::{extract_features, FeatureConfig, SegmentFeatureSet};
use crate::preprocess::{
    apply_normalize, clip_outliers, smooth, ChannelRanges, PreprocessConfig,
};
use crate::trace::CounterTrace;

/// Everything needed to turn a raw trace into feature vectors the same way
/// the training data was processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineFit {
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    /// Per-channel (min, max) fitted on training traces; empty when
    /// normalization is disabled.
    pub ranges: ChannelRanges,
}

impl PipelineFit {
    /// Clip, smooth, and (when enabled) normalize with the fitted ranges.
    pub fn condition(&self, trace: &CounterTrace) -> Result<CounterTrace> {
        let clipped = clip_outliers(trace, self.preprocess.clip_percentile);
        let smoothed = smooth(&clipped, self.preprocess.smooth_window_ms)?;
        if self.preprocess.normalize {
            apply_normalize(&smoothed, &self.ranges)
        } else {
            Ok(smoothed)
        }
    }

    /// Conditioned trace to ordered feature vectors.
    pub fn apply(&self, trace: &CounterTrace) -> Result<SegmentFeatureSet> {
        extract_features(&self.condition(trace)?, &self.features)
    }
}

/// Fits the preprocessing on benign training traces and returns the fit
/// plus the training feature sets.
///
/// Ranges are pooled per channel across all training traces after clipping
/// and smoothing, so every trace is scaled identically.
pub fn fit_pipeline(
    traces: &[CounterTrace],
    preprocess: PreprocessConfig,
    features: FeatureConfig,
) -> Result<(PipelineFit, Vec<SegmentFeatureSet>)> {
    assert!(!traces.is_empty(), "fit_pipeline needs at least one trace");
    preprocess.validate(traces[0].sample_period_ms)?;
    features.validate(traces[0].sample_period_ms)?;

    let conditioned: Vec<CounterTrace> = traces
        .iter()
        .map(|t| smooth(&clip_outliers(t, preprocess.clip_percentile), preprocess.smooth_window_ms))
        .collect::<Result<_>>()?;

    let ranges: ChannelRanges = if preprocess.normalize {
        let n_ch = conditioned[0].n_channels();
        (0..n_ch)
            .map(|c| {
                let mut min = f64::INFINITY;
                let mut max = f64::NEG_INFINITY;
                for t in &conditioned {
                    for &v in t.channel(c) {
                        min = min.min(v);
                        max = max.max(v);
                    }
                }
                (min, max)
            })
            .collect()
    } else {
        Vec::new()
    };

    let fit = PipelineFit {
        preprocess,
        features,
        ranges,
    };
    let sets = conditioned
        .iter()
        .map(|t| {
            let normed = if fit.preprocess.normalize {
                apply_normalize(t, &fit.ranges)?
            } else {
                t.clone()
            };
            extract_features(&normed, &fit.features)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((fit, sets))
}

/// One-trace convenience used by tests: fit and apply on the same trace.
pub fn fit_single(
    trace: &CounterTrace,
    preprocess: PreprocessConfig,
    features: FeatureConfig,
) -> Result<(PipelineFit, SegmentFeatureSet)> {
    let (fit, mut sets) = fit_pipeline(std::slice::from_ref(trace), preprocess, features)?;
    Ok((fit, sets.pop().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::DEFAULT_CHANNELS;
    use rand::Rng;

    fn noisy_trace(n: usize, seed: u64) -> CounterTrace {
        let mut rng = crate::rng::rng_from(seed, "pipe-test", 0);
        let channels: Vec<String> = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
        let samples: Vec<Vec<f64>> = (0..6)
            .map(|c| {
                (0..n)
                    .map(|_| rng.gen_range(0.0..(100.0 * (c + 1) as f64)))
                    .collect()
            })
            .collect();
        CounterTrace::new(1.0, channels, samples, "n".into(), vec![]).unwrap()
    }

    #[test]
    fn training_trace_reprocesses_identically() {
        let t = noisy_trace(2000, 1);
        let (fit, sets) =
            fit_pipeline(&[t.clone()], PreprocessConfig::default(), FeatureConfig::default())
                .unwrap();
        let again = fit.apply(&t).unwrap();
        assert_eq!(sets[0].vectors, again.vectors);
    }

    #[test]
    fn normalized_training_output_is_in_unit_interval() {
        let a = noisy_trace(1500, 2);
        let b = noisy_trace(1500, 3);
        let (fit, _) =
            fit_pipeline(&[a, b.clone()], PreprocessConfig::default(), FeatureConfig::default())
                .unwrap();
        let conditioned = fit.condition(&b).unwrap();
        assert!(conditioned
            .samples
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }
}
