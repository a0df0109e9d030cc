//! First-order Markov anomaly detector over codebook state sequences.
//!
//! The transition matrix and initial distribution are estimated by MLE over
//! pooled benign sequences, floored and renormalized so novel states keep a
//! finite probability, and optionally overridden with a small uniform
//! self-transition. Detection tracks a rolling joint log-probability and
//! raises an alarm after a run of consecutive sub-threshold windows.

use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::eval::DetectionReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovConfig {
    /// When set, every diagonal entry is replaced by this value and the rest
    /// of the row is rescaled; captures bursty idle-or-active app usage.
    pub self_transition: Option<f64>,
    /// Lower bound applied to every probability so unobserved transitions
    /// stay finite in log space.
    pub prob_floor: f64,
    /// Consecutive sub-threshold windows required to raise an alarm.
    pub consecutive_required: usize,
    /// Trailing moving-average window over the log-probability curve.
    pub prob_smooth_window: usize,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            self_transition: Some(0.2),
            prob_floor: 1e-4,
            consecutive_required: 5,
            prob_smooth_window: 5,
        }
    }
}

impl MarkovConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(st) = self.self_transition {
            if !(st > 0.0 && st < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "self_transition must be in (0, 1), got {st}"
                )));
            }
        }
        if !(self.prob_floor >= 0.0 && self.prob_floor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "prob_floor must be in [0, 1), got {}",
                self.prob_floor
            )));
        }
        if self.consecutive_required == 0 {
            return Err(Error::InvalidConfig(
                "consecutive_required must be >= 1".into(),
            ));
        }
        if self.prob_smooth_window == 0 {
            return Err(Error::InvalidConfig(
                "prob_smooth_window must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Trained Markov model over `codebook.n_symbols()` states (the last symbol
/// is the unobserved state).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub codebook: Codebook,
    /// Row-stochastic transition matrix, (m+1) x (m+1).
    pub transition: Vec<Vec<f64>>,
    /// Initial distribution over m+1 states.
    pub initial: Vec<f64>,
    pub config: MarkovConfig,
    /// Log-probability alarm level; NaN until calibrated.
    pub threshold: f64,
}

impl MarkovModel {
    pub fn n_states(&self) -> usize {
        self.initial.len()
    }
}

/// Floors every entry at `floor`, rescaling the remaining mass; iterates so
/// the result is a distribution with every entry >= floor.
fn floor_and_renormalize(row: &mut [f64], floor: f64) {
    let n = row.len();
    if floor <= 0.0 || n == 0 {
        return;
    }
    assert!(
        floor * n as f64 <= 1.0,
        "prob_floor {floor} is infeasible for {n} states"
    );
    for _ in 0..n {
        let mut floored_mass = 0.0;
        let mut free_mass = 0.0;
        for &v in row.iter() {
            if v <= floor {
                floored_mass += floor;
            } else {
                free_mass += v;
            }
        }
        if free_mass <= 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0 / n as f64);
            return;
        }
        let scale = (1.0 - floored_mass) / free_mass;
        let mut changed = false;
        for v in row.iter_mut() {
            if *v <= floor {
                *v = floor;
            } else {
                let next = *v * scale;
                if next < floor {
                    changed = true;
                }
                *v = next;
            }
        }
        if !changed {
            break;
        }
    }
}

/// MLE training over pooled state sequences.
///
/// Estimation order: pair counts (rows without observations become uniform),
/// probability floor plus renormalization, then the optional self-transition
/// override with off-diagonal rescaling.
pub fn train_markov(
    sequences: &[Vec<usize>],
    codebook: Codebook,
    config: MarkovConfig,
) -> Result<MarkovModel> {
    config.validate()?;
    let n = codebook.n_symbols();
    if sequences.is_empty() || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("no training sequences".into()));
    }
    for seq in sequences {
        if let Some(&bad) = seq.iter().find(|&&s| s >= n) {
            return Err(Error::InvalidArgument(format!(
                "state {bad} out of range 0..{n}"
            )));
        }
    }
    if !sequences.iter().any(|s| s.len() >= 2) {
        return Err(Error::EmptyInput("no observed transitions".into()));
    }

    let mut counts = vec![vec![0.0f64; n]; n];
    let mut initial = vec![0.0f64; n];
    for seq in sequences {
        if let Some(&first) = seq.first() {
            initial[first] += 1.0;
        }
        for pair in seq.windows(2) {
            counts[pair[0]][pair[1]] += 1.0;
        }
    }

    let mut transition = counts;
    for row in transition.iter_mut() {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / n as f64);
        }
        floor_and_renormalize(row, config.prob_floor);
    }
    let q_total: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|v| *v /= q_total);
    floor_and_renormalize(&mut initial, config.prob_floor);

    if let Some(st) = config.self_transition {
        for (i, row) in transition.iter_mut().enumerate() {
            let off: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v)
                .sum();
            if off > 0.0 {
                let scale = (1.0 - st) / off;
                for (j, v) in row.iter_mut().enumerate() {
                    if j == i {
                        *v = st;
                    } else {
                        *v *= scale;
                    }
                }
            } else {
                row[i] = 1.0;
            }
        }
    }

    #[cfg(debug_assertions)]
    for row in transition.iter().chain(std::iter::once(&initial)) {
        let s: f64 = row.iter().sum();
        debug_assert!((s - 1.0).abs() <= 1e-9, "row sums to {s}");
    }

    Ok(MarkovModel {
        codebook,
        transition,
        initial,
        config,
        threshold: f64::NAN,
    })
}

/// Joint log-probability of a state sequence:
/// ln q(s1) + sum over t of ln p(s_{t-1} -> s_t).
pub fn sequence_logprob(model: &MarkovModel, states: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::EmptyInput("empty state sequence".into()));
    }
    let n = model.n_states();
    if let Some(&bad) = states.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidArgument(format!(
            "state {bad} out of range 0..{n}"
        )));
    }
    let mut lp = model.initial[states[0]].ln();
    for pair in states.windows(2) {
        lp += model.transition[pair[0]][pair[1]].ln();
    }
    Ok(lp)
}

/// Per-window anomaly scores: the log-probability of the trailing
/// `consecutive_required` states, restarted at every window, then smoothed
/// with a trailing moving average. Windows earlier than one full run carry
/// the first defined score.
pub fn window_scores(model: &MarkovModel, states: &[usize]) -> Result<Vec<f64>> {
    let c = model.config.consecutive_required;
    if states.len() < c {
        return Ok(Vec::new());
    }
    let mut raw = Vec::with_capacity(states.len());
    for t in 0..states.len() {
        if t + 1 < c {
            raw.push(f64::NAN);
            continue;
        }
        raw.push(sequence_logprob(model, &states[t + 1 - c..=t])?);
    }
    let first_defined = raw
        .iter()
        .copied()
        .find(|v| !v.is_nan())
        .unwrap_or(f64::NAN);
    for v in raw.iter_mut() {
        if v.is_nan() {
            *v = first_defined;
        }
    }
    // Trailing (causal) moving average: a window's smoothed score never
    // depends on later data, preserving the structural detection latency.
    let w = model.config.prob_smooth_window;
    let mut smoothed = Vec::with_capacity(raw.len());
    let mut acc = 0.0;
    for i in 0..raw.len() {
        acc += raw[i];
        if i >= w {
            acc -= raw[i - w];
        }
        smoothed.push(acc / w.min(i + 1) as f64);
    }
    Ok(smoothed)
}

/// Runs detection over an assigned state sequence.
///
/// Window `t` is flagged when the last `consecutive_required` smoothed
/// scores, ending at `t`, are all below the threshold. Report windows are
/// the step-aligned slices owned by each feature window, so they tile the
/// trace without overlap.
pub fn detect_markov(
    model: &MarkovModel,
    states: &[usize],
    starts_ms: &[f64],
    trace_id: &str,
) -> Result<DetectionReport> {
    if !model.threshold.is_finite() {
        return Err(Error::InvalidArgument(
            "markov threshold not calibrated".into(),
        ));
    }
    if states.len() != starts_ms.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            got: starts_ms.len(),
        });
    }
    let c = model.config.consecutive_required;
    let step = if starts_ms.len() >= 2 {
        starts_ms[1] - starts_ms[0]
    } else {
        1.0
    };
    let mut report = DetectionReport {
        trace_id: trace_id.to_string(),
        model_id: "markov".to_string(),
        window_starts_ms: starts_ms.to_vec(),
        window_len_ms: step,
        scores: Vec::new(),
        flagged: Vec::new(),
        higher_is_anomalous: false,
        evidence_windows: c,
        insufficient_data: false,
    };
    if states.len() < c {
        report.window_starts_ms = Vec::new();
        report.insufficient_data = true;
        return Ok(report);
    }
    let smoothed = window_scores(model, states)?;
    let mut below_run = 0usize;
    let mut flagged = Vec::with_capacity(smoothed.len());
    for &s in &smoothed {
        if s < model.threshold {
            below_run += 1;
        } else {
            below_run = 0;
        }
        flagged.push(below_run >= c);
    }
    report.scores = smoothed;
    report.flagged = flagged;
    Ok(report)
}

/// Picks the largest threshold whose sub-threshold window fraction over
/// benign validation sequences stays at or below `target_fp_rate`. Since an
/// alarm window is in particular sub-threshold, the alarm-window fraction
/// at the returned level is bounded by the target as well. Binary search
/// over the distinct smoothed score values.
pub fn calibrate_threshold(
    model: &MarkovModel,
    validation: &[Vec<usize>],
    target_fp_rate: f64,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::EmptyInput("no validation sequences".into()));
    }
    let mut scores: Vec<f64> = Vec::new();
    for seq in validation {
        scores.extend(window_scores(model, seq)?);
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput(
            "validation sequences shorter than one detection run".into(),
        ));
    }
    let total = scores.len() as f64;
    scores.sort_by(|a, b| a.total_cmp(b));

    let below_fraction = |threshold: f64| -> f64 {
        // Strict comparison, matching the alarm rule.
        scores.partition_point(|&s| s < threshold) as f64 / total
    };

    let mut candidates = scores.clone();
    candidates.dedup();
    // The minimum score flags nothing (strict comparison); one candidate
    // above the maximum serves target rates of 1.
    candidates.push(candidates.last().unwrap() + 1.0);

    let (mut lo, mut hi) = (0usize, candidates.len() - 1);
    if below_fraction(candidates[hi]) <= target_fp_rate {
        return Ok(candidates[hi]);
    }
    // Invariant: fraction(candidates[lo]) <= target < fraction(candidates[hi]).
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if below_fraction(candidates[mid]) <= target_fp_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(candidates[lo])
}
