//! Labeled multi-channel performance-counter traces and their file formats.
//!
//! A trace is a uniformly sampled matrix of per-period counter deltas, one
//! column per hardware signal, with optional labeled payload intervals kept
//! in a JSON sidecar next to the CSV.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default counter channels, in file-format column order.
pub const DEFAULT_CHANNELS: [&str; 6] = [
    "branch_mispred",
    "load_store",
    "integer_ops",
    "indirect_branch",
    "imm_branch",
    "inst_retired",
];

/// High-level payload behavior of an injected malware action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    SmsSteal,
    ContactSteal,
    FileSteal,
    IdGpsSteal,
    ClickFraud,
    Ddos,
    PasswordCracker,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 7] = [
        PayloadKind::SmsSteal,
        PayloadKind::ContactSteal,
        PayloadKind::FileSteal,
        PayloadKind::IdGpsSteal,
        PayloadKind::ClickFraud,
        PayloadKind::Ddos,
        PayloadKind::PasswordCracker,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PayloadKind::SmsSteal => "sms_steal",
            PayloadKind::ContactSteal => "contact_steal",
            PayloadKind::FileSteal => "file_steal",
            PayloadKind::IdGpsSteal => "id_gps_steal",
            PayloadKind::ClickFraud => "click_fraud",
            PayloadKind::Ddos => "ddos",
            PayloadKind::PasswordCracker => "password_cracker",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PayloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PayloadKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown payload kind `{s}`")))
    }
}

/// One labeled span of payload activity inside a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadInterval {
    pub start_ms: f64,
    pub end_ms: f64,
    pub payload_kind: PayloadKind,
    pub config_id: String,
}

/// Multi-channel counter trace, stored column-major (one `Vec<f64>` per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct CounterTrace {
    pub sample_period_ms: f64,
    pub channels: Vec<String>,
    /// Per-channel sample vectors; all the same length.
    pub samples: Vec<Vec<f64>>,
    pub app_id: String,
    pub label_intervals: Vec<PayloadInterval>,
}

impl CounterTrace {
    /// Builds a trace and checks the structural invariants: equal channel
    /// lengths, positive sample period, and sorted non-overlapping intervals
    /// within the trace duration.
    pub fn new(
        sample_period_ms: f64,
        channels: Vec<String>,
        samples: Vec<Vec<f64>>,
        app_id: String,
        label_intervals: Vec<PayloadInterval>,
    ) -> Result<Self> {
        if !(sample_period_ms > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample_period_ms must be positive, got {sample_period_ms}"
            )));
        }
        if channels.is_empty() || channels.len() != samples.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} sample columns for {} channels",
                channels.len(),
                samples.len()
            )));
        }
        let rows = samples[0].len();
        if let Some(c) = samples.iter().position(|s| s.len() != rows) {
            return Err(Error::InvalidArgument(format!(
                "channel `{}` has {} samples, expected {rows}",
                channels[c],
                samples[c].len()
            )));
        }
        let trace = CounterTrace {
            sample_period_ms,
            channels,
            samples,
            app_id,
            label_intervals,
        };
        trace.validate_intervals()?;
        Ok(trace)
    }

    fn validate_intervals(&self) -> Result<()> {
        let duration = self.duration_ms();
        let mut prev_end = f64::NEG_INFINITY;
        for (i, iv) in self.label_intervals.iter().enumerate() {
            if !(iv.end_ms > iv.start_ms) {
                return Err(Error::InvalidArgument(format!(
                    "interval {i} has end_ms {} <= start_ms {}",
                    iv.end_ms, iv.start_ms
                )));
            }
            if iv.start_ms < 0.0 || iv.end_ms > duration {
                return Err(Error::InvalidArgument(format!(
                    "interval {i} [{}, {}) outside trace duration {duration} ms",
                    iv.start_ms, iv.end_ms
                )));
            }
            if iv.start_ms < prev_end {
                return Err(Error::InvalidArgument(format!(
                    "interval {i} overlaps or precedes the previous interval"
                )));
            }
            prev_end = iv.end_ms;
        }
        Ok(())
    }

    /// Number of samples (rows).
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_ms(&self) -> f64 {
        self.len() as f64 * self.sample_period_ms
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.samples[c]
    }

    /// Applies `f` to every channel, keeping metadata and labels.
    pub fn map_channels(&self, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> CounterTrace {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(c, s)| f(c, s))
            .collect();
        CounterTrace {
            sample_period_ms: self.sample_period_ms,
            channels: self.channels.clone(),
            samples,
            app_id: self.app_id.clone(),
            label_intervals: self.label_intervals.clone(),
        }
    }
}

/// One sliding window over a trace: start time and the covered row range.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_ms: f64,
    pub rows: Range<usize>,
}

/// Slides a fixed-length window along the trace; the trailing partial window
/// is dropped. Returns an empty list when the trace is shorter than one window.
pub fn slice_windows(trace: &CounterTrace, window_ms: f64, step_ms: f64) -> Result<Vec<Window>> {
    let period = trace.sample_period_ms;
    if window_ms < period || step_ms < period {
        return Err(Error::InvalidArgument(format!(
            "window_ms ({window_ms}) and step_ms ({step_ms}) must be >= sample period ({period})"
        )));
    }
    // Work in sample counts; the small epsilon absorbs division round-off for
    // periods that do not divide the window exactly.
    let w = (window_ms / period + 1e-9).floor() as usize;
    let s = (step_ms / period + 1e-9).floor() as usize;
    let n = trace.len();
    if n < w {
        return Ok(Vec::new());
    }
    let count = (n - w) / s + 1;
    Ok((0..count)
        .map(|i| Window {
            start_ms: (i * s) as f64 * period,
            rows: i * s..i * s + w,
        })
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelSidecar {
    app_id: String,
    intervals: Vec<PayloadInterval>,
}

fn label_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.labels.json"))
}

fn trace_header(channels: &[String]) -> String {
    let mut h = String::from("t_ms");
    for c in channels {
        h.push(',');
        h.push_str(c);
    }
    h
}

/// Reads a trace CSV plus its optional `<name>.labels.json` sidecar.
///
/// Every malformed condition is reported with the offending row number.
pub fn read_trace(path: impl AsRef<Path>) -> Result<CounterTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();

    let header = lines.next().ok_or_else(|| Error::TraceFormat {
        path: path.into(),
        row: 0,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "t_ms" {
        return Err(Error::TraceFormat {
            path: path.into(),
            row: 0,
            msg: format!("malformed header `{header}`"),
        });
    }
    let channels: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
    let mut times: Vec<f64> = Vec::new();
    for (row, line) in lines.enumerate() {
        let row = row + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != channels.len() + 1 {
            return Err(Error::TraceFormat {
                path: path.into(),
                row,
                msg: format!("expected {} fields, got {}", channels.len() + 1, fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::TraceFormat {
                path: path.into(),
                row,
                msg: format!("unparseable {what} `{s}`"),
            })
        };
        let t = parse(fields[0], "timestamp")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::TraceFormat {
                    path: path.into(),
                    row,
                    msg: format!("non-monotone timestamp {t} after {prev}"),
                });
            }
        }
        times.push(t);
        for (c, field) in fields[1..].iter().enumerate() {
            let v = parse(field, "counter value")?;
            if v < 0.0 {
                return Err(Error::TraceFormat {
                    path: path.into(),
                    row,
                    msg: format!("negative counter value {v} in channel `{}`", channels[c]),
                });
            }
            samples[c].push(v);
        }
    }
    if times.is_empty() {
        return Err(Error::TraceFormat {
            path: path.into(),
            row: 1,
            msg: "trace has no rows".into(),
        });
    }

    let period = if times.len() >= 2 {
        times[1] - times[0]
    } else {
        // Single-row traces cannot encode the period; assume the 1 ms default.
        1.0
    };
    for (i, &t) in times.iter().enumerate() {
        let expected = i as f64 * period;
        if (t - expected).abs() > 1e-6 * expected.abs().max(1.0) {
            return Err(Error::TraceFormat {
                path: path.into(),
                row: i + 1,
                msg: format!("timestamp {t} off the uniform grid (expected {expected})"),
            });
        }
    }

    let mut app_id = String::new();
    let mut intervals = Vec::new();
    let lp = label_path(path);
    if lp.exists() {
        let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
        let sidecar: LabelSidecar = serde_json::from_str(&text)?;
        app_id = sidecar.app_id;
        intervals = sidecar.intervals;
    }

    CounterTrace::new(period, channels, samples, app_id, intervals)
}

/// Writes a trace CSV (and a labels sidecar when intervals are present).
///
/// Output is byte-deterministic for identical input, and floats use the
/// shortest round-trip representation so a re-read reproduces the trace
/// bit-exactly.
pub fn write_trace(trace: &CounterTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (c, samples) in trace.samples.iter().enumerate() {
        if let Some(v) = samples.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot write negative counter value {v} in channel `{}`",
                trace.channels[c]
            )));
        }
    }

    let mut out = String::with_capacity(trace.len() * trace.n_channels() * 8);
    out.push_str(&trace_header(&trace.channels));
    out.push('\n');
    for i in 0..trace.len() {
        let t = i as f64 * trace.sample_period_ms;
        out.push_str(&format!("{t}"));
        for samples in &trace.samples {
            out.push(',');
            out.push_str(&format!("{}", samples[i]));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;

    let lp = label_path(path);
    if trace.label_intervals.is_empty() {
        // No sidecar for unlabeled traces; remove a stale one if present.
        if lp.exists() {
            fs::remove_file(&lp).map_err(|e| Error::io(&lp, e))?;
        }
    } else {
        let sidecar = LabelSidecar {
            app_id: trace.app_id.clone(),
            intervals: trace.label_intervals.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        write_atomic(&lp, json.as_bytes())?;
    }
    Ok(())
}

/// Writes via a temp file and rename so readers never observe partial output.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_trace(rows: usize, value: f64) -> CounterTrace {
        let channels: Vec<String> = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
        let samples = vec![vec![value; rows]; channels.len()];
        CounterTrace::new(1.0, channels, samples, "toy".into(), vec![]).unwrap()
    }

    #[test]
    fn constant_trace_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let trace = toy_trace(3, 1.0);
        write_trace(&trace, &p).unwrap();
        let back = read_trace(&p).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.samples.iter().all(|ch| ch.iter().all(|&v| v == 1.0)));
        assert!(back.label_intervals.is_empty());
    }

    #[test]
    fn negative_value_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("neg.csv");
        let mut body = trace_header(
            &DEFAULT_CHANNELS
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>(),
        );
        body.push_str("\n0,1,1,1,1,1,1\n1,1,-2,1,1,1,1\n");
        std::fs::write(&p, body).unwrap();
        let err = read_trace(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("negative"), "{msg}");
    }

    #[test]
    fn non_monotone_timestamp_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mono.csv");
        let header = trace_header(
            &DEFAULT_CHANNELS
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>(),
        );
        std::fs::write(&p, format!("{header}\n0,1,1,1,1,1,1\n0,1,1,1,1,1,1\n")).unwrap();
        let err = read_trace(&p).unwrap_err();
        assert!(err.to_string().contains("non-monotone"), "{err}");
    }

    #[test]
    fn sidecar_written_only_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lab.csv");
        let mut trace = toy_trace(100, 2.0);
        write_trace(&trace, &p).unwrap();
        assert!(!dir.path().join("lab.labels.json").exists());

        trace.label_intervals = vec![PayloadInterval {
            start_ms: 10.0,
            end_ms: 22.0,
            payload_kind: PayloadKind::SmsSteal,
            config_id: "sms_steal-s0-z".into(),
        }];
        write_trace(&trace, &p).unwrap();
        let back = read_trace(&p).unwrap();
        assert_eq!(back.label_intervals.len(), 1);
        assert_eq!(back.label_intervals[0], trace.label_intervals[0]);
    }

    #[test]
    fn windows_match_arithmetic_example() {
        let trace = toy_trace(10, 1.0);
        let ws = slice_windows(&trace, 4.0, 2.0).unwrap();
        let starts: Vec<f64> = ws.iter().map(|w| w.start_ms).collect();
        assert_eq!(starts, vec![0.0, 2.0, 4.0, 6.0]);
        assert!(ws.iter().all(|w| w.rows.len() == 4));
    }

    #[test]
    fn window_equal_to_trace_yields_one() {
        let trace = toy_trace(10, 1.0);
        let ws = slice_windows(&trace, 10.0, 2.0).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0].rows, 0..10);
    }

    #[test]
    fn window_longer_than_trace_is_empty() {
        let trace = toy_trace(5, 1.0);
        assert!(slice_windows(&trace, 10.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn interval_outside_duration_rejected() {
        let channels: Vec<String> = DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect();
        let samples = vec![vec![0.0; 10]; 6];
        let out_of_range = PayloadInterval {
            start_ms: 5.0,
            end_ms: 50.0,
            payload_kind: PayloadKind::Ddos,
            config_id: "x".into(),
        };
        let err = CounterTrace::new(1.0, channels, samples, "a".into(), vec![out_of_range]);
        assert!(err.is_err());
    }
}
