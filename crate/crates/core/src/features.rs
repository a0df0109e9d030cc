//! Sliding-window segmentation and Discrete Wavelet Transform feature
//! extraction.
//!
//! Each window is decomposed per channel with an analysis-only pyramid DWT
//! and the final-level approximation coefficients are concatenated across
//! channels into one fixed-length feature vector per window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{slice_windows, CounterTrace};

/// Analysis filter bank. `Db3` is the default; `Haar` is kept for parity
/// checks since detection results barely differ between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavelet {
    Db3,
    Haar,
}

// Orthonormal db3 decomposition low-pass taps (time-reversed scaling
// coefficients, the usual analysis convention).
const DB3_DEC_LO: [f64; 6] = [
    0.035226291882100656,
    -0.08544127388224149,
    -0.13501102001039084,
    0.4598775021193313,
    0.8068915093133388,
    0.3326705529509569,
];

const HAAR_DEC_LO: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

impl Wavelet {
    pub fn dec_lo(&self) -> &'static [f64] {
        match self {
            Wavelet::Db3 => &DB3_DEC_LO,
            Wavelet::Haar => &HAAR_DEC_LO,
        }
    }

    /// Quadrature mirror of the low-pass: g[k] = (-1)^k h[L-1-k].
    pub fn dec_hi(&self) -> Vec<f64> {
        let lo = self.dec_lo();
        let l = lo.len();
        (0..l)
            .map(|k| {
                let v = lo[l - 1 - k];
                if k % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect()
    }

    pub fn filter_len(&self) -> usize {
        self.dec_lo().len()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Wavelet::Db3 => "db3",
            Wavelet::Haar => "haar",
        }
    }
}

/// Boundary extension used by the analysis filter bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Half-sample symmetric extension (the edge sample is repeated).
    Symmetric,
    /// Circular wrap-around; output has exactly n/2 coefficients and the
    /// transform is orthonormal on even-length inputs.
    Periodic,
}

/// Output of one multi-level analysis decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DwtOutput {
    /// Final-level approximation coefficients.
    pub approx: Vec<f64>,
    /// Detail coefficients, level 1 first.
    pub details: Vec<Vec<f64>>,
}

fn analysis_step(signal: &[f64], filt: &[f64], boundary: Boundary) -> Vec<f64> {
    let n = signal.len();
    let f = filt.len();
    match boundary {
        Boundary::Symmetric => {
            let pad = f - 1;
            // Half-sample symmetric index: ... x1 x0 | x0 x1 ... xn-1 | xn-1 ...
            let at = |k: isize| -> f64 {
                let idx = if k < 0 {
                    (-k - 1) as usize
                } else if (k as usize) < n {
                    k as usize
                } else {
                    2 * n - 1 - k as usize
                };
                signal[idx]
            };
            let out_len = (n + f - 1) / 2;
            (0..out_len)
                .map(|i| {
                    let base = 2 * i as isize + 1 - pad as isize;
                    filt.iter()
                        .enumerate()
                        .map(|(j, &h)| h * at(base + j as isize))
                        .sum()
                })
                .collect()
        }
        Boundary::Periodic => {
            debug_assert!(n % 2 == 0 && n >= f);
            (0..n / 2)
                .map(|i| {
                    filt.iter()
                        .enumerate()
                        .map(|(j, &h)| h * signal[(2 * i + 1 + j) % n])
                        .sum()
                })
                .collect()
        }
    }
}

/// Multi-level analysis pyramid with a configurable boundary rule.
pub fn dwt_1d_with_boundary(
    signal: &[f64],
    wavelet: Wavelet,
    levels: usize,
    boundary: Boundary,
) -> Result<DwtOutput> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    let lo = wavelet.dec_lo();
    let hi = wavelet.dec_hi();
    let f = lo.len();

    let mut approx = signal.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let too_short = match boundary {
            Boundary::Symmetric => approx.len() < f,
            Boundary::Periodic => approx.len() < f || approx.len() % 2 != 0,
        };
        if too_short {
            return Err(Error::SignalTooShort {
                len: signal.len(),
                wavelet: wavelet.name().into(),
                levels,
            });
        }
        details.push(analysis_step(&approx, &hi, boundary));
        approx = analysis_step(&approx, lo, boundary);
    }
    Ok(DwtOutput { approx, details })
}

/// Multi-level analysis pyramid with symmetric (half-sample) extension.
pub fn dwt_1d(signal: &[f64], wavelet: Wavelet, levels: usize) -> Result<DwtOutput> {
    dwt_1d_with_boundary(signal, wavelet, levels, Boundary::Symmetric)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Sliding window length, typically 50-150 ms.
    pub state_window_ms: f64,
    pub shift_step_ms: f64,
    pub wavelet: Wavelet,
    pub levels: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            state_window_ms: 100.0,
            shift_step_ms: 50.0,
            wavelet: Wavelet::Db3,
            levels: 3,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self, sample_period_ms: f64) -> Result<()> {
        if !(self.state_window_ms >= 50.0 && self.state_window_ms <= 150.0) {
            return Err(Error::InvalidConfig(format!(
                "state_window_ms must be in [50, 150], got {}",
                self.state_window_ms
            )));
        }
        if !(self.shift_step_ms > 0.0 && self.shift_step_ms <= self.state_window_ms) {
            return Err(Error::InvalidConfig(format!(
                "shift_step_ms must be in (0, state_window_ms], got {}",
                self.shift_step_ms
            )));
        }
        let window_samples = (self.state_window_ms / sample_period_ms + 1e-9).floor() as usize;
        let needed = self.wavelet.filter_len() << self.levels;
        if window_samples < needed {
            return Err(Error::InvalidConfig(format!(
                "window of {window_samples} samples cannot support {} levels of {} (needs {needed})",
                self.levels,
                self.wavelet.name()
            )));
        }
        Ok(())
    }

    /// Feature vector length for a given trace layout; constant per config.
    pub fn feature_dim(&self, sample_period_ms: f64, n_channels: usize) -> Result<usize> {
        self.validate(sample_period_ms)?;
        let window_samples = (self.state_window_ms / sample_period_ms + 1e-9).floor() as usize;
        let probe = vec![0.0; window_samples];
        let out = dwt_1d(&probe, self.wavelet, self.levels)?;
        Ok(out.approx.len() * n_channels)
    }
}

/// Ordered DWT feature vectors, one per sliding window.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatureSet {
    pub config: FeatureConfig,
    pub starts_ms: Vec<f64>,
    /// Row-major: one concatenated coefficient vector per window.
    pub vectors: Vec<Vec<f64>>,
}

impl SegmentFeatureSet {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Extracts one feature vector per sliding window: per-channel DWT to
/// `cfg.levels`, approximation coefficients concatenated in channel order.
/// A trace shorter than one window yields an empty set.
pub fn extract_features(trace: &CounterTrace, cfg: &FeatureConfig) -> Result<SegmentFeatureSet> {
    cfg.validate(trace.sample_period_ms)?;
    let windows = slice_windows(trace, cfg.state_window_ms, cfg.shift_step_ms)?;
    let mut starts_ms = Vec::with_capacity(windows.len());
    let mut vectors = Vec::with_capacity(windows.len());
    for w in windows {
        let mut vec = Vec::new();
        for ch in &trace.samples {
            let out = dwt_1d(&ch[w.rows.clone()], cfg.wavelet, cfg.levels)?;
            vec.extend_from_slice(&out.approx);
        }
        starts_ms.push(w.start_ms);
        vectors.push(vec);
    }
    Ok(SegmentFeatureSet {
        config: cfg.clone(),
        starts_ms,
        vectors,
    })
}

/// Writes a feature set as `start_ms,f0,f1,...` rows for external inspection.
pub fn write_features_csv(set: &SegmentFeatureSet, path: impl AsRef<std::path::Path>) -> Result<()> {
    let mut out = String::from("start_ms");
    for i in 0..set.dim() {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (start, vec) in set.starts_ms.iter().zip(&set.vectors) {
        out.push_str(&format!("{start}"));
        for v in vec {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    crate::trace::write_atomic(path.as_ref(), out.as_bytes())
}
