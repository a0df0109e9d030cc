//! Trace conditioning: outlier clipping, moving-average smoothing, [0,1]
//! normalization, and the Box-Cox power transform used by the per-sample
//! baseline detector.
//!
//! The pipeline order is clip, then smooth, then normalize. Normalization
//! ranges are fitted on training data and reused (with clamping) on test
//! traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::CounterTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Percentile (nearest-rank) above which values are clipped.
    pub clip_percentile: f64,
    /// Centered moving-average window, in milliseconds.
    pub smooth_window_ms: f64,
    pub normalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            clip_percentile: 99.99,
            smooth_window_ms: 100.0,
            normalize: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, sample_period_ms: f64) -> Result<()> {
        if !(self.clip_percentile > 0.0 && self.clip_percentile <= 100.0) {
            return Err(Error::InvalidConfig(format!(
                "clip_percentile must be in (0, 100], got {}",
                self.clip_percentile
            )));
        }
        if self.smooth_window_ms < sample_period_ms {
            return Err(Error::InvalidConfig(format!(
                "smooth_window_ms {} is below the sample period {}",
                self.smooth_window_ms, sample_period_ms
            )));
        }
        Ok(())
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th order statistic.
///
/// Uses selection rather than a full sort; `values` must be non-empty.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    let idx = rank.clamp(1, n) - 1;
    let mut buf = values.to_vec();
    let (_, v, _) = buf.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *v
}

/// Replaces, per channel, every value above the nearest-rank `p`-th
/// percentile with that percentile value.
pub fn clip_outliers(trace: &CounterTrace, p: f64) -> CounterTrace {
    trace.map_channels(|_, ch| {
        let cutoff = nearest_rank_percentile(ch, p);
        ch.iter().map(|&v| if v > cutoff { cutoff } else { v }).collect()
    })
}

fn smooth_channel(ch: &[f64], win: usize) -> Vec<f64> {
    let n = ch.len();
    let half = win / 2;
    // Prefix sums make each truncated centered average O(1).
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in ch {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Centered moving average with the window truncated at the trace edges.
/// The window is `floor(window_ms / period)` samples, rounded up to odd.
pub fn smooth(trace: &CounterTrace, window_ms: f64) -> Result<CounterTrace> {
    let period = trace.sample_period_ms;
    if window_ms < period {
        return Err(Error::InvalidArgument(format!(
            "smoothing window {window_ms} ms is below the sample period {period} ms"
        )));
    }
    let mut win = (window_ms / period + 1e-9).floor() as usize;
    if win % 2 == 0 {
        win += 1;
    }
    Ok(trace.map_channels(|_, ch| smooth_channel(ch, win)))
}

/// Per-channel min/max fitted on training data.
pub type ChannelRanges = Vec<(f64, f64)>;

/// Scales each channel to [0, 1] and returns the fitted (min, max) pairs.
/// A constant channel maps to all zeros.
pub fn normalize01(trace: &CounterTrace) -> Result<(CounterTrace, ChannelRanges)> {
    if trace.is_empty() {
        return Err(Error::EmptyInput("normalize01 on empty trace".into()));
    }
    let ranges: ChannelRanges = trace
        .samples
        .iter()
        .map(|ch| {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for &v in ch {
                min = min.min(v);
                max = max.max(v);
            }
            (min, max)
        })
        .collect();
    let out = apply_normalize(trace, &ranges)?;
    Ok((out, ranges))
}

/// Applies previously fitted ranges, clamping to [0, 1] so test traces that
/// exceed the training range stay in bounds.
pub fn apply_normalize(trace: &CounterTrace, ranges: &ChannelRanges) -> Result<CounterTrace> {
    if ranges.len() != trace.n_channels() {
        return Err(Error::DimensionMismatch {
            expected: trace.n_channels(),
            got: ranges.len(),
        });
    }
    Ok(trace.map_channels(|c, ch| {
        let (min, max) = ranges[c];
        let span = max - min;
        if span <= 0.0 {
            return vec![0.0; ch.len()];
        }
        ch.iter()
            .map(|&v| ((v - min) / span).clamp(0.0, 1.0))
            .collect()
    }))
}

/// Box-Cox power transform parameters for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTransform {
    pub lambda: f64,
    /// Added before the transform so all inputs are strictly positive.
    pub shift: f64,
}

impl PowerTransform {
    /// y = ((x + shift)^lambda - 1) / lambda, or ln(x + shift) when lambda = 0.
    pub fn apply(&self, x: f64) -> Result<f64> {
        let v = x + self.shift;
        if v <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "Box-Cox input {x} + shift {} is not positive",
                self.shift
            )));
        }
        Ok(if self.lambda == 0.0 {
            v.ln()
        } else {
            (v.powf(self.lambda) - 1.0) / self.lambda
        })
    }
}

const BOXCOX_GRID_MIN: f64 = -2.0;
const BOXCOX_GRID_STEP: f64 = 0.01;
const BOXCOX_GRID_STEPS: usize = 401;

fn boxcox_loglik(values: &[f64], log_sum: f64, lambda: f64) -> f64 {
    let n = values.len() as f64;
    let mut mean = 0.0;
    let mut transformed = Vec::with_capacity(values.len());
    for &v in values {
        let y = if lambda == 0.0 {
            v.ln()
        } else {
            (v.powf(lambda) - 1.0) / lambda
        };
        transformed.push(y);
        mean += y;
    }
    mean /= n;
    let var = transformed.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    // Profile log-likelihood of the Box-Cox model with Gaussian errors.
    -0.5 * n * var.max(f64::MIN_POSITIVE).ln() + (lambda - 1.0) * log_sum
}

/// Fits lambda by maximizing the Box-Cox log-likelihood over the grid
/// [-2, 2] in steps of 0.01. Shift is 1 when any input is zero.
pub fn fit_boxcox(values: &[f64]) -> Result<PowerTransform> {
    if values.is_empty() {
        return Err(Error::EmptyInput("fit_boxcox on empty input".into()));
    }
    if values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "fit_boxcox requires non-negative inputs".into(),
        ));
    }
    let shift = if values.iter().any(|&v| v == 0.0) { 1.0 } else { 0.0 };
    let shifted: Vec<f64> = values.iter().map(|&v| v + shift).collect();
    let log_sum: f64 = shifted.iter().map(|v| v.ln()).sum();

    let mut best = (f64::NEG_INFINITY, BOXCOX_GRID_MIN);
    for i in 0..BOXCOX_GRID_STEPS {
        let lambda = BOXCOX_GRID_MIN + i as f64 * BOXCOX_GRID_STEP;
        // Snap the midpoint to exactly zero so the log branch is exercised.
        let lambda = if lambda.abs() < 1e-12 { 0.0 } else { lambda };
        let ll = boxcox_loglik(&shifted, log_sum, lambda);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    Ok(PowerTransform {
        lambda: best.1,
        shift,
    })
}

/// Applies one fitted transform per channel.
pub fn apply_boxcox(transforms: &[PowerTransform], trace: &CounterTrace) -> Result<CounterTrace> {
    if transforms.len() != trace.n_channels() {
        return Err(Error::DimensionMismatch {
            expected: trace.n_channels(),
            got: transforms.len(),
        });
    }
    let mut samples = Vec::with_capacity(trace.n_channels());
    for (c, ch) in trace.samples.iter().enumerate() {
        let pt = transforms[c];
        let mut out = Vec::with_capacity(ch.len());
        for &v in ch {
            out.push(pt.apply(v)?);
        }
        samples.push(out);
    }
    Ok(CounterTrace {
        sample_period_ms: trace.sample_period_ms,
        channels: trace.channels.clone(),
        samples,
        app_id: trace.app_id.clone(),
        label_intervals: trace.label_intervals.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::DEFAULT_CHANNELS;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn trace_from_channels(samples: Vec<Vec<f64>>) -> CounterTrace {
        let channels = (0..samples.len()).map(|i| format!("c{i}")).collect();
        CounterTrace::new(1.0, channels, samples, "t".into(), vec![]).unwrap()
    }

    #[test]
    fn clip_matches_rule_example() {
        // p = 60 gives nearest-rank index ceil(0.6 * 3) = 2, cutoff = 2.
        let t = trace_from_channels(vec![vec![1.0, 2.0, 100.0]]);
        let clipped = clip_outliers(&t, 60.0);
        assert_eq!(clipped.samples[0], vec![1.0, 2.0, 2.0]);
    }

    #[test]
    fn clip_constant_channel_unchanged() {
        let t = trace_from_channels(vec![vec![7.0; 50]]);
        assert_eq!(clip_outliers(&t, 99.99).samples[0], vec![7.0; 50]);
    }

    #[test]
    fn clip_is_idempotent_and_matches_sort_oracle() {
        let mut rng = crate::rng::rng_from(3, "clip", 0);
        for _ in 0..20 {
            let n = rng.gen_range(5..400);
            let p = rng.gen_range(50.0..100.0);
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1000.0)).collect();
            let t = trace_from_channels(vec![data.clone()]);

            // Sort-based oracle for the cutoff.
            let mut sorted = data.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let rank = ((p / 100.0) * n as f64).ceil() as usize;
            let cutoff = sorted[rank.clamp(1, n) - 1];

            let clipped = clip_outliers(&t, p);
            let out = &clipped.samples[0];
            assert!(out.iter().all(|&v| v <= cutoff));
            let changed = out.iter().zip(&data).filter(|(a, b)| a != b).count();
            let above = data.iter().filter(|&&v| v > cutoff).count();
            assert_eq!(changed, above);

            let twice = clip_outliers(&clipped, p);
            assert_eq!(twice.samples[0], *out);
        }
    }

    #[test]
    fn smooth_matches_rule_example() {
        let t = trace_from_channels(vec![vec![0.0, 3.0, 0.0, 3.0]]);
        let s = smooth(&t, 3.0).unwrap();
        assert_eq!(s.samples[0], vec![1.5, 1.0, 2.0, 1.5]);
    }

    #[test]
    fn smooth_window_one_is_identity() {
        let t = trace_from_channels(vec![vec![5.0, 1.0, 9.0, 2.0]]);
        let s = smooth(&t, 1.0).unwrap();
        assert_eq!(s.samples[0], t.samples[0]);
    }

    #[test]
    fn smooth_matches_direct_sum_oracle() {
        let mut rng = crate::rng::rng_from(4, "smooth", 0);
        let n = 5000usize;
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let t = trace_from_channels(vec![data.clone()]);
        let s = smooth(&t, 101.0).unwrap();
        let half = 50usize;
        for i in (0..n).step_by(37) {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let expect = data[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            assert_abs_diff_eq!(s.samples[0][i], expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn normalize_examples() {
        let t = trace_from_channels(vec![vec![2.0, 4.0, 6.0]]);
        let (n, ranges) = normalize01(&t).unwrap();
        assert_eq!(n.samples[0], vec![0.0, 0.5, 1.0]);
        assert_eq!(ranges, vec![(2.0, 6.0)]);

        let constant = trace_from_channels(vec![vec![5.0, 5.0]]);
        let (n, _) = normalize01(&constant).unwrap();
        assert_eq!(n.samples[0], vec![0.0, 0.0]);
    }

    #[test]
    fn refitting_with_stored_ranges_is_idempotent() {
        let t = trace_from_channels(vec![vec![1.0, 3.0, 2.0], vec![0.0, 10.0, 5.0]]);
        let (n1, ranges) = normalize01(&t).unwrap();
        let n2 = apply_normalize(&t, &ranges).unwrap();
        assert_eq!(n1.samples, n2.samples);
        // Out-of-range test values clamp.
        let wider = trace_from_channels(vec![vec![-5.0, 9.0, 2.0], vec![1.0, 99.0, 5.0]]);
        let clamped = apply_normalize(&wider, &ranges).unwrap();
        assert!(clamped
            .samples
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn boxcox_lambda_one_and_zero_definitions() {
        let pt1 = PowerTransform { lambda: 1.0, shift: 0.0 };
        assert_abs_diff_eq!(pt1.apply(4.5).unwrap(), 3.5, epsilon = 1e-12);
        let pt0 = PowerTransform { lambda: 0.0, shift: 0.0 };
        assert_abs_diff_eq!(pt0.apply(4.5).unwrap(), 4.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn boxcox_recovers_lognormal_lambda_near_zero() {
        let mut rng = crate::rng::rng_from(5, "boxcox", 0);
        let values: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        let pt = fit_boxcox(&values).unwrap();
        assert!(pt.lambda.abs() <= 0.1, "lambda = {}", pt.lambda);
        assert_eq!(pt.shift, 0.0);
    }

    #[test]
    fn boxcox_shift_applied_when_zero_present() {
        let pt = fit_boxcox(&[0.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(pt.shift, 1.0);
    }

    #[test]
    fn apply_boxcox_matches_closed_form_and_is_monotone() {
        let mut rng = crate::rng::rng_from(6, "boxcox-apply", 0);
        for _ in 0..5 {
            let lambda = rng.gen_range(-2.0..2.0);
            let pt = PowerTransform { lambda, shift: 0.0 };
            let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(1e-3..50.0)).collect();
            let t = trace_from_channels(vec![values.clone()]);
            let out = apply_boxcox(&[pt], &t).unwrap();
            for (x, y) in values.iter().zip(&out.samples[0]) {
                let expect = (x.powf(lambda) - 1.0) / lambda;
                assert_abs_diff_eq!(*y, expect, epsilon = 1e-12);
            }
            // Strict monotonicity.
            let mut pairs: Vec<(f64, f64)> =
                values.iter().copied().zip(out.samples[0].iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                if w[0].0 < w[1].0 {
                    assert!(w[0].1 < w[1].1);
                }
            }
        }
    }

    #[test]
    fn pipeline_output_stays_in_unit_interval() {
        let mut rng = crate::rng::rng_from(7, "pipeline", 0);
        let channels: Vec<String> = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
        let samples: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2000).map(|_| rng.gen_range(0.0..500.0)).collect())
            .collect();
        let t = CounterTrace::new(1.0, channels, samples, "p".into(), vec![]).unwrap();
        let cfg = PreprocessConfig::default();
        let clipped = clip_outliers(&t, cfg.clip_percentile);
        let smoothed = smooth(&clipped, cfg.smooth_window_ms).unwrap();
        let (normed, _) = normalize01(&smoothed).unwrap();
        assert!(normed
            .samples
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }
}
