//! Evaluation harness primitives: payload-window true-positive accounting,
//! ROC/AUC, k-fold splits at trace granularity, time-to-detection, PCA
//! diversity analysis, and operating-range report emission.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::PayloadInterval;

/// Per-window detector output for one trace. Windows never overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub trace_id: String,
    pub model_id: String,
    pub window_starts_ms: Vec<f64>,
    pub window_len_ms: f64,
    pub scores: Vec<f64>,
    pub flagged: Vec<bool>,
    /// Score direction: true when larger scores mean more anomalous.
    pub higher_is_anomalous: bool,
    /// Number of consecutive windows of evidence behind one flag (1 for
    /// window-local detectors, `consecutive_required` for the Markov HMD).
    pub evidence_windows: usize,
    /// Set when the trace was too short to score.
    pub insufficient_data: bool,
}

impl DetectionReport {
    pub fn n_windows(&self) -> usize {
        self.window_starts_ms.len()
    }

    /// Does window `i` overlap any labeled interval by at least one point?
    pub fn window_overlaps(&self, i: usize, intervals: &[PayloadInterval]) -> bool {
        let start = self.window_starts_ms[i];
        let end = start + self.window_len_ms;
        intervals
            .iter()
            .any(|iv| iv.start_ms < end && start < iv.end_ms)
    }
}

/// TP/FP rates under the payload-window accounting rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TpFp {
    /// Flagged payload-overlapping windows / payload-overlapping windows;
    /// None on benign traces (or when no window overlaps a payload).
    pub tp_rate: Option<f64>,
    /// Flagged windows / total windows, counted only on benign traces.
    pub fp_rate: Option<f64>,
    pub payload_windows: usize,
    pub flagged_payload_windows: usize,
    pub total_windows: usize,
    pub flagged_windows: usize,
}

/// Scores a report against its labels.
///
/// On malicious traces only payload-overlapping windows count (flagged or
/// not); windows before and after payloads are excluded from both
/// tallies, since an alarm there may in reality be a false positive. On
/// benign traces the whole duration counts toward the FP rate.
pub fn score_tp_fp(report: &DetectionReport, labels: &[PayloadInterval]) -> TpFp {
    let mut out = TpFp {
        total_windows: report.n_windows(),
        flagged_windows: report.flagged.iter().filter(|&&f| f).count(),
        ..TpFp::default()
    };
    if labels.is_empty() {
        if out.total_windows > 0 {
            out.fp_rate = Some(out.flagged_windows as f64 / out.total_windows as f64);
        }
        return out;
    }
    for i in 0..report.n_windows() {
        if report.window_overlaps(i, labels) {
            out.payload_windows += 1;
            if report.flagged[i] {
                out.flagged_payload_windows += 1;
            }
        }
    }
    if out.payload_windows > 0 {
        out.tp_rate = Some(out.flagged_payload_windows as f64 / out.payload_windows as f64);
    }
    out
}

/// One ROC point: (false-positive rate, true-positive rate, threshold).
pub type RocPoint = (f64, f64, f64);

/// ROC by sweeping every distinct score threshold, and AUC by the trapezoid
/// rule. Ties contribute half steps, making the AUC exactly the
/// Mann-Whitney statistic.
pub fn roc_auc(
    scores_benign: &[f64],
    scores_malicious: &[f64],
    higher_is_anomalous: bool,
) -> Result<(Vec<RocPoint>, f64)> {
    if scores_benign.is_empty() || scores_malicious.is_empty() {
        return Err(Error::EmptyInput("roc_auc needs both score sets".into()));
    }
    let flip = |v: f64| if higher_is_anomalous { v } else { -v };
    let mut all: Vec<(f64, bool)> = scores_benign
        .iter()
        .map(|&s| (flip(s), false))
        .chain(scores_malicious.iter().map(|&s| (flip(s), true)))
        .collect();
    // Descending score: most anomalous first.
    all.sort_by(|a, b| b.0.total_cmp(&a.0));

    let np = scores_malicious.len() as f64;
    let nn = scores_benign.len() as f64;
    let mut points: Vec<RocPoint> = vec![(0.0, 0.0, f64::INFINITY)];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut auc = 0.0;
    let mut i = 0;
    while i < all.len() {
        // Consume the whole tie group at once.
        let score = all[i].0;
        let mut tie_tp = 0.0;
        let mut tie_fp = 0.0;
        while i < all.len() && all[i].0 == score {
            if all[i].1 {
                tie_tp += 1.0;
            } else {
                tie_fp += 1.0;
            }
            i += 1;
        }
        // Trapezoid over the tie block.
        auc += tie_fp / nn * (tp + tie_tp / 2.0) / np;
        tp += tie_tp;
        fp += tie_fp;
        points.push((fp / nn, tp / np, if higher_is_anomalous { score } else { -score }));
    }
    Ok((points, auc))
}

/// Disjoint near-equal folds of `n` items, split at item granularity (the
/// caller passes one item per trace so no trace straddles folds).
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} items into {k} folds"
        )));
    }
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::rng::rng_from(seed, "kfold", 0));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut cursor = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(idx[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(folds)
}

/// First-alarm latency per labeled interval, or None when undetected.
///
/// An alarm is attributed to an interval when its full evidence run starts
/// at or after the interval start and before the next interval; the alarm
/// time is the end of the flagged window (the moment its data is complete),
/// so the latency has the structural floor of
/// (evidence_windows - 1) x step + window length.
pub fn time_to_detection(
    report: &DetectionReport,
    labels: &[PayloadInterval],
) -> Vec<(PayloadInterval, Option<f64>)> {
    let c = report.evidence_windows.max(1);
    labels
        .iter()
        .enumerate()
        .map(|(li, iv)| {
            let horizon = labels
                .get(li + 1)
                .map(|next| next.start_ms)
                .unwrap_or(f64::INFINITY);
            let hit = (0..report.n_windows()).find(|&t| {
                report.flagged[t]
                    && t + 1 >= c
                    && report.window_starts_ms[t + 1 - c] >= iv.start_ms
                    && report.window_starts_ms[t] < horizon
            });
            let latency = hit.map(|t| {
                report.window_starts_ms[t] + report.window_len_ms - iv.start_ms
            });
            (iv.clone(), latency)
        })
        .collect()
}

/// PCA projection outcome.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Row-major projections onto the top `dims` principal directions.
    pub projections: Vec<Vec<f64>>,
    /// Fraction of total variance captured by those directions.
    pub explained_fraction: f64,
    /// Set when the input had (numerically) zero variance.
    pub zero_variance: bool,
}

/// Mean-centered PCA via eigendecomposition of the covariance matrix.
/// The sign convention makes the largest-magnitude component of each
/// direction positive.
pub fn pca_project(vectors: &[Vec<f64>], dims: usize) -> Result<PcaResult> {
    let n = vectors.len();
    if n <= dims {
        return Err(Error::InvalidArgument(format!(
            "PCA needs more rows ({n}) than output dims ({dims})"
        )));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidArgument("ragged PCA input".into()));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let total: f64 = eig.eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    if total <= 1e-12 {
        return Ok(PcaResult {
            projections: vec![vec![0.0; dims]; n],
            explained_fraction: 0.0,
            zero_variance: true,
        });
    }
    let top: f64 = order
        .iter()
        .take(dims)
        .map(|&j| eig.eigenvalues[j].max(0.0))
        .sum();

    let mut directions = Vec::with_capacity(dims);
    for &j in order.iter().take(dims) {
        let col = eig.eigenvectors.column(j);
        let mut dir: Vec<f64> = col.iter().copied().collect();
        // Sign convention: flip so the largest-magnitude entry is positive.
        let lead = dir
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if dir[lead] < 0.0 {
            dir.iter_mut().for_each(|v| *v = -*v);
        }
        directions.push(dir);
    }

    let projections = (0..n)
        .map(|i| {
            directions
                .iter()
                .map(|dir| (0..d).map(|j| centered[(i, j)] * dir[j]).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        projections,
        explained_fraction: top / total,
        zero_variance: false,
    })
}

/// Byte size of a serialized model file.
pub fn model_size(path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    std::fs::metadata(path)
        .map(|m| m.len())
        .map_err(|e| Error::io(path, e))
}

/// Spearman rank correlation with average ranks for ties; None when either
/// side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rank = |vals: &[f64]| -> Vec<f64> {
        let n = vals.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && vals[order[j + 1]] == vals[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &o in &order[i..=j] {
                ranks[o] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let rx = rank(xs);
    let ry = rank(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 1e-12 || vy <= 1e-12 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Detection rate of one (payload config, app archetype) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingRangeCell {
    pub config_id: String,
    pub archetype: String,
    pub detection_rate: f64,
    pub fp_rate_at_threshold: f64,
}

/// Writes `operating_range.csv` rows, pre-sorted by the caller.
pub fn write_operating_range_csv(
    cells: &[OperatingRangeCell],
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = String::from("config_id,archetype,detection_rate,fp_rate_at_threshold\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.config_id, c.archetype, c.detection_rate, c.fp_rate_at_threshold
        ));
    }
    crate::trace::write_atomic(path.as_ref(), out.as_bytes())
}

fn ramp_color(rate: f64) -> String {
    // Green (undetected) to red (fully detected) through yellow.
    let t = rate.clamp(0.0, 1.0);
    let (r, g) = if t < 0.5 {
        ((2.0 * t * 255.0) as u8, 200u8)
    } else {
        (255u8, ((2.0 - 2.0 * t) * 200.0) as u8)
    };
    format!("#{r:02x}{g:02x}40")
}

/// Renders the operating-range matrix as a self-contained SVG heatmap:
/// one row per payload config, one column per archetype, green-to-red ramp.
pub fn write_heatmap_svg(
    cells: &[OperatingRangeCell],
    row_order: &[String],
    col_order: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    const CELL_W: usize = 90;
    const CELL_H: usize = 14;
    const LEFT: usize = 170;
    const TOP: usize = 40;
    let width = LEFT + CELL_W * col_order.len() + 20;
    let height = TOP + CELL_H * row_order.len() + 20;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"10\">\n"
    );
    svg.push_str(&format!(
        "<text x=\"{LEFT}\" y=\"14\">detection rate: green = 0, red = 1</text>\n"
    ));
    for (j, col) in col_order.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            LEFT + j * CELL_W,
            TOP - 6,
            col
        ));
    }
    for (i, row) in row_order.iter().enumerate() {
        let y = TOP + i * CELL_H;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{}\">{}</text>\n",
            y + CELL_H - 3,
            row
        ));
        for (j, col) in col_order.iter().enumerate() {
            let cell = cells
                .iter()
                .find(|c| &c.config_id == row && &c.archetype == col);
            let (color, title) = match cell {
                Some(c) => (ramp_color(c.detection_rate), format!("{:.3}", c.detection_rate)),
                None => ("#dddddd".to_string(), "n/a".to_string()),
            };
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>{}</title></rect>\n",
                LEFT + j * CELL_W,
                y,
                CELL_W - 2,
                CELL_H - 2,
                color,
                title
            ));
        }
    }
    svg.push_str("</svg>\n");
    crate::trace::write_atomic(path.as_ref(), svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::PayloadKind;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn report(starts: Vec<f64>, len: f64, flagged: Vec<bool>) -> DetectionReport {
        let scores = flagged.iter().map(|&f| if f { -1.0 } else { 1.0 }).collect();
        DetectionReport {
            trace_id: "t".into(),
            model_id: "m".into(),
            window_starts_ms: starts,
            window_len_ms: len,
            scores,
            flagged,
            higher_is_anomalous: false,
            evidence_windows: 1,
            insufficient_data: false,
        }
    }

    fn interval(start: f64, end: f64) -> PayloadInterval {
        PayloadInterval {
            start_ms: start,
            end_ms: end,
            payload_kind: PayloadKind::FileSteal,
            config_id: "c".into(),
        }
    }

    #[test]
    fn benign_trace_nothing_flagged_zero_fp() {
        let r = report(vec![0.0, 100.0, 200.0], 100.0, vec![false, false, false]);
        let s = score_tp_fp(&r, &[]);
        assert_eq!(s.fp_rate, Some(0.0));
        assert_eq!(s.tp_rate, None);
    }

    #[test]
    fn all_payload_windows_flagged_gives_tp_one() {
        // Windows outside the payload are flagged too; the exclusion rule
        // ignores them entirely.
        let r = report(
            (0..10).map(|i| i as f64 * 100.0).collect(),
            100.0,
            vec![true; 10],
        );
        let s = score_tp_fp(&r, &[interval(350.0, 520.0)]);
        assert_eq!(s.tp_rate, Some(1.0));
        assert_eq!(s.fp_rate, None);
        assert_eq!(s.payload_windows, 3); // windows starting at 300, 400, 500
    }

    #[test]
    fn tp_fp_matches_interval_overlap_oracle() {
        let mut rng = crate::rng::rng_from(71, "tpfp", 0);
        for _ in 0..50 {
            let n = rng.gen_range(5..60);
            let len = 100.0;
            let starts: Vec<f64> = (0..n).map(|i| i as f64 * len).collect();
            let flagged: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let r = report(starts.clone(), len, flagged.clone());
            let mut labels = Vec::new();
            let mut cursor = 0.0;
            while cursor < n as f64 * len && labels.len() < 4 {
                let s = cursor + rng.gen_range(0.0..500.0);
                let e = s + rng.gen_range(10.0..400.0);
                if e >= n as f64 * len {
                    break;
                }
                labels.push(interval(s, e));
                cursor = e + rng.gen_range(10.0..300.0);
            }
            if labels.is_empty() {
                continue;
            }
            let s = score_tp_fp(&r, &labels);
            // O(n*m) oracle.
            let mut pw = 0;
            let mut fpw = 0;
            for i in 0..n {
                let ws = starts[i];
                let we = ws + len;
                let overlap = labels.iter().any(|iv| iv.start_ms < we && ws < iv.end_ms);
                if overlap {
                    pw += 1;
                    if flagged[i] {
                        fpw += 1;
                    }
                }
            }
            assert_eq!(s.payload_windows, pw);
            assert_eq!(s.flagged_payload_windows, fpw);
        }
    }

    #[test]
    fn auc_perfect_and_identical() {
        let (_, auc) = roc_auc(&[0.1, 0.2, 0.3], &[0.9, 0.8, 0.7], true).unwrap();
        assert_abs_diff_eq!(auc, 1.0, epsilon = 1e-12);
        let (_, auc) = roc_auc(&[0.5, 0.2, 0.9], &[0.5, 0.2, 0.9], true).unwrap();
        assert_abs_diff_eq!(auc, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn auc_matches_mann_whitney_oracle() {
        let mut rng = crate::rng::rng_from(72, "auc", 0);
        for case in 0..50 {
            let nb = rng.gen_range(2..40);
            let nm = rng.gen_range(2..40);
            // Coarse grid to force plenty of ties.
            let benign: Vec<f64> = (0..nb).map(|_| rng.gen_range(0..10) as f64 / 10.0).collect();
            let malicious: Vec<f64> = (0..nm)
                .map(|_| rng.gen_range(2..12) as f64 / 10.0)
                .collect();
            let higher = case % 2 == 0;
            let (points, auc) = roc_auc(&benign, &malicious, higher).unwrap();

            let dir = |v: f64| if higher { v } else { -v };
            let mut pairs = 0.0;
            for &m in &malicious {
                for &b in &benign {
                    if dir(m) > dir(b) {
                        pairs += 1.0;
                    } else if dir(m) == dir(b) {
                        pairs += 0.5;
                    }
                }
            }
            let expect = pairs / (nb as f64 * nm as f64);
            assert_abs_diff_eq!(auc, expect, epsilon = 1e-12);

            // ROC is monotone non-decreasing in both coordinates.
            for w in points.windows(2) {
                assert!(w[1].0 >= w[0].0 - 1e-12);
                assert!(w[1].1 >= w[0].1 - 1e-12);
            }
            assert_eq!(points.last().unwrap().0, 1.0);
            assert_eq!(points.last().unwrap().1, 1.0);
        }
    }

    #[test]
    fn kfold_properties() {
        let folds = kfold(10, 10, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));

        for (n, k) in [(23, 4), (100, 10), (7, 7)] {
            let folds = kfold(n, k, 3).unwrap();
            let sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
            let min = sizes.iter().min().unwrap();
            let max = sizes.iter().max().unwrap();
            assert!(max - min <= 1);
            let mut all: Vec<usize> = folds.into_iter().flatten().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        // Determinism.
        assert_eq!(kfold(40, 10, 9).unwrap(), kfold(40, 10, 9).unwrap());
        assert!(kfold(3, 5, 0).is_err());
    }

    #[test]
    fn ttd_alarm_in_start_window_is_within_window_length() {
        let r = report(
            (0..20).map(|i| i as f64 * 100.0).collect(),
            100.0,
            (0..20).map(|i| i >= 5).collect(),
        );
        let labels = vec![interval(510.0, 900.0)];
        let out = time_to_detection(&r, &labels);
        let latency = out[0].1.unwrap();
        assert!(latency >= 0.0 && latency <= 100.0 + 100.0, "latency {latency}");
    }

    #[test]
    fn ttd_matches_hand_enumerated_three_interval_report() {
        // Windows of 100 ms; flags at windows 4..6, 12, and 17..19.
        let flagged: Vec<bool> = (0..20)
            .map(|i| (4..=6).contains(&i) || i == 12 || (17..=19).contains(&i))
            .collect();
        let r = report((0..20).map(|i| i as f64 * 100.0).collect(), 100.0, flagged);
        let labels = vec![
            interval(380.0, 700.0),   // first flagged window at/after 380 is w4 -> 400+100-380
            interval(1000.0, 1100.0), // w12 starts at 1200 < next horizon 1650 -> 1200+100-1000
            interval(1650.0, 1800.0), // w17 at 1700 -> 1700+100-1650
        ];
        let out = time_to_detection(&r, &labels);
        assert_abs_diff_eq!(out[0].1.unwrap(), 120.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out[1].1.unwrap(), 300.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out[2].1.unwrap(), 150.0, epsilon = 1e-9);
    }

    #[test]
    fn ttd_undetected_interval_reported_as_none() {
        let r = report((0..10).map(|i| i as f64 * 100.0).collect(), 100.0, vec![false; 10]);
        let out = time_to_detection(&r, &[interval(100.0, 300.0)]);
        assert!(out[0].1.is_none());
    }

    #[test]
    fn ttd_respects_markov_evidence_floor() {
        // Evidence of 5 windows: a flag whose run starts before the payload
        // is not attributed to it.
        let mut r = report(
            (0..30).map(|i| i as f64 * 50.0).collect(),
            50.0,
            (0..30).map(|i| i >= 8).collect(),
        );
        r.evidence_windows = 5;
        let labels = vec![interval(500.0, 1200.0)];
        let out = time_to_detection(&r, &labels);
        let latency = out[0].1.unwrap();
        assert!(latency >= 4.0 * 50.0, "latency {latency}");
    }

    #[test]
    fn pca_line_in_3d_explains_everything() {
        let vectors: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.1;
                vec![2.0 * t, -t, 0.5 * t]
            })
            .collect();
        let res = pca_project(&vectors, 1).unwrap();
        assert_abs_diff_eq!(res.explained_fraction, 1.0, epsilon = 1e-9);
        assert!(!res.zero_variance);
    }

    #[test]
    fn pca_full_rank_2d_explains_everything_with_two_dims() {
        let mut rng = crate::rng::rng_from(73, "pca", 0);
        let vectors: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let res = pca_project(&vectors, 2).unwrap();
        assert_abs_diff_eq!(res.explained_fraction, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn pca_matches_svd_oracle_up_to_sign() {
        let mut rng = crate::rng::rng_from(74, "pca-svd", 0);
        let n = 60;
        let d = 5;
        let vectors: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let res = pca_project(&vectors, 2).unwrap();

        // SVD oracle on the centered matrix.
        let mean: Vec<f64> = (0..d)
            .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
        let svd = centered.clone().svd(true, true);
        let v_t = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        for (k, &comp) in order.iter().take(2).enumerate() {
            let dir: Vec<f64> = v_t.row(comp).iter().copied().collect();
            let proj: Vec<f64> = (0..n)
                .map(|i| (0..d).map(|j| centered[(i, j)] * dir[j]).sum())
                .collect();
            // Compare up to a global sign.
            let same: f64 = proj
                .iter()
                .zip(res.projections.iter().map(|p| p[k]))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let flipped: f64 = proj
                .iter()
                .zip(res.projections.iter().map(|p| p[k]))
                .map(|(a, b)| (a + b).abs())
                .fold(0.0, f64::max);
            assert!(same <= 1e-9 || flipped <= 1e-9, "component {k}: {same} / {flipped}");
        }
    }

    #[test]
    fn pca_zero_variance_flagged() {
        let vectors = vec![vec![3.0, 1.0]; 10];
        let res = pca_project(&vectors, 1).unwrap();
        assert!(res.zero_variance);
        assert_eq!(res.explained_fraction, 0.0);
    }

    #[test]
    fn spearman_basics() {
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.2, 0.5, 0.9]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            spearman(&[1.0, 2.0, 3.0], &[5.0, 3.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert!(spearman(&[1.0, 2.0], &[4.0, 4.0]).is_none());
    }
}
