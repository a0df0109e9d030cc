//! Bag-of-words anomaly detector: per-TTD-window codeword histograms
//! classified by a Gaussian-kernel nu-one-class SVM trained on benign
//! histograms. Temporal order inside a window is deliberately ignored.

use serde::{Deserialize, Serialize};

use crate::codebook::{assign_states, Codebook};
use crate::error::{Error, Result};
use crate::eval::DetectionReport;
use crate::ocsvm::OcSvmModel;
use crate::pipeline::PipelineFit;
use crate::trace::CounterTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BowConfig {
    /// Codebook size; 1000 words balances discrimination against sparsity.
    pub m: usize,
    /// Time-to-detection window over which one histogram is built.
    pub ttd_ms: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            m: 1000,
            ttd_ms: 1500.0,
            nu: 0.2,
            gamma: 2.0,
        }
    }
}

/// Trained bag-of-words model.
#[derive(Debug, Clone, PartialEq)]
pub struct BowModel {
    pub codebook: Codebook,
    pub ttd_ms: f64,
    pub ocsvm: OcSvmModel,
    /// Decision threshold on f(x); the natural boundary is 0, calibration
    /// against a false-positive target may move it.
    pub decision_threshold: f64,
}

/// Builds one L1-normalized histogram per consecutive TTD window.
///
/// A segment belongs to the window containing its start time; histograms
/// have `n_symbols` bins (the last is the unobserved state) and empty
/// windows are dropped.
pub fn histogram(
    states: &[usize],
    starts_ms: &[f64],
    ttd_ms: f64,
    n_symbols: usize,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if states.len() != starts_ms.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            got: starts_ms.len(),
        });
    }
    if starts_ms.len() >= 2 {
        let step = starts_ms[1] - starts_ms[0];
        if ttd_ms < step {
            return Err(Error::InvalidArgument(format!(
                "ttd_ms {ttd_ms} is shorter than the segment step {step}"
            )));
        }
    }
    let mut out: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut current: Option<(usize, Vec<f64>, f64)> = None; // (window idx, counts, total)
    for (&s, &t) in states.iter().zip(starts_ms) {
        if s >= n_symbols {
            return Err(Error::InvalidArgument(format!(
                "state {s} out of range 0..{n_symbols}"
            )));
        }
        let w = (t / ttd_ms).floor() as usize;
        match current.as_mut() {
            Some((idx, counts, total)) if *idx == w => {
                counts[s] += 1.0;
                *total += 1.0;
            }
            _ => {
                if let Some((idx, mut counts, total)) = current.take() {
                    counts.iter_mut().for_each(|c| *c /= total);
                    out.push((idx as f64 * ttd_ms, counts));
                }
                let mut counts = vec![0.0; n_symbols];
                counts[s] = 1.0;
                current = Some((w, counts, 1.0));
            }
        }
    }
    if let Some((idx, mut counts, total)) = current.take() {
        counts.iter_mut().for_each(|c| *c /= total);
        out.push((idx as f64 * ttd_ms, counts));
    }
    Ok(out)
}

/// End-to-end detection: preprocess, extract features, assign states, build
/// histograms, score each TTD window. Windows with f(x) below the decision
/// threshold are flagged.
pub fn detect_bow(
    model: &BowModel,
    trace: &CounterTrace,
    pipeline: &PipelineFit,
    trace_id: &str,
) -> Result<DetectionReport> {
    let features = pipeline.apply(trace)?;
    if features.dim() != 0 && features.dim() != model.codebook.dim {
        return Err(Error::DimensionMismatch {
            expected: model.codebook.dim,
            got: features.dim(),
        });
    }
    let states = assign_states(&model.codebook, &features)?;
    let hists = histogram(
        &states,
        &features.starts_ms,
        model.ttd_ms,
        model.codebook.n_symbols(),
    )?;
    let mut report = DetectionReport {
        trace_id: trace_id.to_string(),
        model_id: "bow".to_string(),
        window_starts_ms: Vec::with_capacity(hists.len()),
        window_len_ms: model.ttd_ms,
        scores: Vec::with_capacity(hists.len()),
        flagged: Vec::with_capacity(hists.len()),
        higher_is_anomalous: false,
        evidence_windows: 1,
        insufficient_data: hists.is_empty(),
    };
    for (start, hist) in &hists {
        let f = model.ocsvm.decision(hist);
        report.window_starts_ms.push(*start);
        report.scores.push(f);
        report.flagged.push(f < model.decision_threshold);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    #[test]
    fn single_codeword_gives_one_hot_histogram() {
        let states = vec![7usize; 10];
        let starts: Vec<f64> = (0..10).map(|i| i as f64 * 50.0).collect();
        let h = histogram(&states, &starts, 1500.0, 11).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].0, 0.0);
        assert_abs_diff_eq!(h[0].1[7], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h[0].1.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_counts_split_mass() {
        let states = vec![3, 9, 3, 9];
        let starts = vec![0.0, 50.0, 100.0, 150.0];
        let h = histogram(&states, &starts, 1500.0, 10).unwrap();
        assert_eq!(h.len(), 1);
        assert_abs_diff_eq!(h[0].1[3], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(h[0].1[9], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn histograms_sum_to_one_on_random_input() {
        let mut rng = crate::rng::rng_from(51, "bow-hist", 0);
        for _ in 0..20 {
            let n = rng.gen_range(1..500);
            let states: Vec<usize> = (0..n).map(|_| rng.gen_range(0..20)).collect();
            let starts: Vec<f64> = (0..n).map(|i| i as f64 * 50.0).collect();
            let h = histogram(&states, &starts, 1500.0, 20).unwrap();
            assert!(!h.is_empty());
            for (_, hist) in &h {
                assert_abs_diff_eq!(hist.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn histogram_is_order_invariant_within_window() {
        let states = vec![1, 4, 2, 4, 1, 2];
        let permuted = vec![4, 4, 2, 2, 1, 1];
        let starts: Vec<f64> = (0..6).map(|i| i as f64 * 50.0).collect();
        let a = histogram(&states, &starts, 1500.0, 6).unwrap();
        let b = histogram(&permuted, &starts, 1500.0, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ttd_shorter_than_step_errors() {
        let states = vec![0, 1];
        let starts = vec![0.0, 50.0];
        assert!(histogram(&states, &starts, 10.0, 2).is_err());
    }

    #[test]
    fn windows_tile_without_overlap() {
        let mut rng = crate::rng::rng_from(52, "bow-tile", 0);
        let n = 400;
        let states: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let starts: Vec<f64> = (0..n).map(|i| i as f64 * 50.0).collect();
        let h = histogram(&states, &starts, 1500.0, 5).unwrap();
        for pair in h.windows(2) {
            assert!(pair[1].0 >= pair[0].0 + 1500.0 - 1e-9);
        }
    }
}
