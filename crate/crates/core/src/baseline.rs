//! Prior-work exploit-oriented baseline: per-sample power-transformed
//! features (optionally 4 consecutive samples as a temporal variant) fed to
//! the shared one-class SVM, with decisions aggregated onto the same TTD
//! windows as the bag-of-words detector so ROC curves are comparable.
//!
//! Cycle-driven sampling from the original design is approximated by the
//! trace's native time-based sampling; the synthetic traces carry no cycle
//! counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::DetectionReport;
use crate::ocsvm::OcSvmModel;
use crate::preprocess::{
    apply_boxcox, apply_normalize, clip_outliers, ChannelRanges, PowerTransform,
};
use crate::trace::CounterTrace;

/// Number of consecutive samples concatenated in temporal mode.
pub const TEMPORAL_SPAN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub temporal: bool,
    pub nu: f64,
    pub gamma: f64,
    pub clip_percentile: f64,
    /// Detection windows; kept equal to the bag-of-words TTD for comparable
    /// false-positive accounting.
    pub ttd_ms: f64,
    /// Training rows are subsampled to this cap so the dense-kernel solver
    /// stays tractable on millisecond traces.
    pub max_train_rows: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            temporal: false,
            nu: 0.2,
            gamma: 2.0,
            clip_percentile: 99.99,
            ttd_ms: 1500.0,
            max_train_rows: 2000,
        }
    }
}

/// Trained baseline detector.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    pub transforms: Vec<PowerTransform>,
    pub ranges: ChannelRanges,
    pub config: BaselineConfig,
    pub ocsvm: OcSvmModel,
    pub decision_threshold: f64,
}

/// Conditions a trace the baseline way: clip, per-channel Box-Cox, then
/// scale with the fitted ranges.
pub fn condition_baseline(
    trace: &CounterTrace,
    transforms: &[PowerTransform],
    ranges: &ChannelRanges,
    clip_percentile: f64,
) -> Result<CounterTrace> {
    let clipped = clip_outliers(trace, clip_percentile);
    let transformed = apply_boxcox(transforms, &clipped)?;
    apply_normalize(&transformed, ranges)
}

/// Per-sample feature rows from a conditioned trace.
///
/// Non-temporal: one row per sample (d = channels). Temporal: 4 consecutive
/// samples concatenated, stride 1 (d = 4 x channels).
pub fn baseline_features(trace: &CounterTrace, temporal: bool) -> Result<Vec<Vec<f64>>> {
    let n = trace.len();
    let ch = trace.n_channels();
    if temporal && n < TEMPORAL_SPAN {
        return Err(Error::InvalidArgument(format!(
            "temporal features need at least {TEMPORAL_SPAN} samples, got {n}"
        )));
    }
    let span = if temporal { TEMPORAL_SPAN } else { 1 };
    let rows = n + 1 - span;
    let mut out = Vec::with_capacity(rows);
    for t in 0..rows {
        let mut row = Vec::with_capacity(span * ch);
        for dt in 0..span {
            for c in 0..ch {
                row.push(trace.samples[c][t + dt]);
            }
        }
        out.push(row);
    }
    Ok(out)
}

/// Fits the baseline on benign traces: per-channel Box-Cox on pooled
/// clipped samples, unit-range scaling, then a one-class SVM on a seeded
/// subsample of the per-sample rows.
pub fn train_baseline(
    traces: &[CounterTrace],
    config: BaselineConfig,
    seed: u64,
) -> Result<BaselineModel> {
    use rand::seq::SliceRandom;
    if traces.is_empty() {
        return Err(Error::EmptyInput("no baseline training traces".into()));
    }
    let n_ch = traces[0].n_channels();

    // Box-Cox lambda fitted per channel on pooled clipped values, capped so
    // the 401-point likelihood grid stays cheap on long traces.
    const LAMBDA_FIT_CAP: usize = 50_000;
    let clipped: Vec<CounterTrace> = traces
        .iter()
        .map(|t| clip_outliers(t, config.clip_percentile))
        .collect();
    let mut transforms = Vec::with_capacity(n_ch);
    for c in 0..n_ch {
        let mut pooled: Vec<f64> = clipped.iter().flat_map(|t| t.channel(c).iter().copied()).collect();
        if pooled.len() > LAMBDA_FIT_CAP {
            let stride = pooled.len() / LAMBDA_FIT_CAP;
            pooled = pooled.into_iter().step_by(stride.max(1)).collect();
        }
        // Counters are zero-inclusive, and a test trace may hit zero even
        // when the training pool did not; fit on shifted values so the
        // stored transform is total over the whole domain.
        for v in pooled.iter_mut() {
            *v += 1.0;
        }
        let fitted = crate::preprocess::fit_boxcox(&pooled)?;
        transforms.push(PowerTransform {
            lambda: fitted.lambda,
            shift: fitted.shift + 1.0,
        });
    }

    let transformed: Vec<CounterTrace> = clipped
        .iter()
        .map(|t| apply_boxcox(&transforms, t))
        .collect::<Result<_>>()?;
    let ranges: ChannelRanges = (0..n_ch)
        .map(|c| {
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for t in &transformed {
                for &v in t.channel(c) {
                    min = min.min(v);
                    max = max.max(v);
                }
            }
            (min, max)
        })
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for t in &transformed {
        let scaled = apply_normalize(t, &ranges)?;
        rows.extend(baseline_features(&scaled, config.temporal)?);
    }
    if rows.len() > config.max_train_rows {
        let mut rng = crate::rng::rng_from(seed, "baseline-subsample", 0);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(config.max_train_rows);
        idx.sort_unstable();
        rows = idx.into_iter().map(|i| std::mem::take(&mut rows[i])).collect();
    }

    let ocsvm = crate::ocsvm::train_ocsvm(&rows, config.nu, config.gamma, seed)?;
    Ok(BaselineModel {
        transforms,
        ranges,
        config,
        ocsvm,
        decision_threshold: 0.0,
    })
}

/// Scores every per-sample vector and aggregates onto TTD windows: a window
/// score is the minimum decision value of the vectors starting inside it,
/// and a window is flagged when that minimum falls below the threshold
/// (equivalently, at least one vector is anomalous).
pub fn detect_baseline(
    model: &BaselineModel,
    trace: &CounterTrace,
    trace_id: &str,
) -> Result<DetectionReport> {
    let conditioned = condition_baseline(
        trace,
        &model.transforms,
        &model.ranges,
        model.config.clip_percentile,
    )?;
    let rows = baseline_features(&conditioned, model.config.temporal)?;
    if rows.first().map_or(0, |r| r.len()) != model.ocsvm.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.ocsvm.dim(),
            got: rows.first().map_or(0, |r| r.len()),
        });
    }
    let period = trace.sample_period_ms;
    let ttd = model.config.ttd_ms;
    let mut report = DetectionReport {
        trace_id: trace_id.to_string(),
        model_id: "baseline".to_string(),
        window_starts_ms: Vec::new(),
        window_len_ms: ttd,
        scores: Vec::new(),
        flagged: Vec::new(),
        higher_is_anomalous: false,
        evidence_windows: 1,
        insufficient_data: rows.is_empty(),
    };
    let mut current: Option<(usize, f64)> = None; // (window idx, min decision)
    for (t, row) in rows.iter().enumerate() {
        let w = ((t as f64 * period) / ttd).floor() as usize;
        let f = model.ocsvm.decision(row);
        match current.as_mut() {
            Some((idx, min)) if *idx == w => *min = min.min(f),
            _ => {
                if let Some((idx, min)) = current.take() {
                    report.window_starts_ms.push(idx as f64 * ttd);
                    report.scores.push(min);
                    report.flagged.push(min < model.decision_threshold);
                }
                current = Some((w, f));
            }
        }
    }
    if let Some((idx, min)) = current.take() {
        report.window_starts_ms.push(idx as f64 * ttd);
        report.scores.push(min);
        report.flagged.push(min < model.decision_threshold);
    }
    Ok(report)
}

/// Minimum decision value per TTD window, computed only for the requested
/// windows. Used where scoring the full trace would be wasteful.
pub fn window_min_scores(
    model: &BaselineModel,
    trace: &CounterTrace,
    window_starts_ms: &[f64],
) -> Result<Vec<f64>> {
    let conditioned = condition_baseline(
        trace,
        &model.transforms,
        &model.ranges,
        model.config.clip_percentile,
    )?;
    let rows = baseline_features(&conditioned, model.config.temporal)?;
    let period = trace.sample_period_ms;
    let ttd = model.config.ttd_ms;
    let mut out = Vec::with_capacity(window_starts_ms.len());
    for &start in window_starts_ms {
        let lo = (start / period).ceil() as usize;
        let hi = (((start + ttd) / period).ceil() as usize).min(rows.len());
        let mut min = f64::INFINITY;
        for row in rows.iter().take(hi).skip(lo.min(rows.len())) {
            min = min.min(model.ocsvm.decision(row));
        }
        out.push(min);
    }
    Ok(out)
}
