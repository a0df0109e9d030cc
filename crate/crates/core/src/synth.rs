//! Deterministic generator of benign-app counter traces and injected
//! malware payload activity over the 66-configuration intensity grid.
//!
//! Everything is a pure function of (spec, seed): per-trace randomness is
//! derived from labeled seed streams, so generation order and concurrency
//! cannot change the output.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::trace::{CounterTrace, PayloadInterval, PayloadKind, DEFAULT_CHANNELS};

pub const N_CHANNELS: usize = 6;

/// High-level benign app behavior class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeKind {
    /// Steady periodic activity (streaming radio style).
    RegularNetwork,
    /// Quiet with short sharp user-event spikes (forms, questionnaires).
    BurstyUserDriven,
    /// Sustained heavy computation (games).
    ComputeIntensive,
}

impl ArchetypeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ArchetypeKind::RegularNetwork => "regular_network",
            ArchetypeKind::BurstyUserDriven => "bursty_user_driven",
            ArchetypeKind::ComputeIntensive => "compute_intensive",
        }
    }
}

/// Benign trace generator parameters for one app class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppArchetype {
    pub kind: ArchetypeKind,
    pub app_id: String,
    /// Mean activity per channel, counts per millisecond.
    pub base_rate: [f64; N_CHANNELS],
    /// Additive noise sigma per channel; also scales the multiplicative
    /// jitter, so zero sigma means fully deterministic output.
    pub noise_sigma: [f64; N_CHANNELS],
    /// Square-wave envelope period and duty cycle (RegularNetwork).
    pub burst_period_ms: f64,
    pub burst_duty: f64,
    /// User-event spikes (BurstyUserDriven).
    pub spike_rate_hz: f64,
    pub spike_len_ms: f64,
}

/// Envelope multiplier during the on-phase of a burst.
const BURST_HI: f64 = 1.4;
const BURST_LO: f64 = 0.6;
/// Extra activity multiplier during a user-event spike.
const SPIKE_GAIN: f64 = 3.0;

/// The three stock archetypes used throughout the suite.
pub fn standard_archetypes() -> Vec<AppArchetype> {
    vec![
        AppArchetype {
            kind: ArchetypeKind::ComputeIntensive,
            app_id: "compute_intensive".into(),
            base_rate: [12.0, 320.0, 380.0, 25.0, 110.0, 1400.0],
            noise_sigma: [4.0, 60.0, 70.0, 6.0, 25.0, 260.0],
            burst_period_ms: 0.0,
            burst_duty: 1.0,
            spike_rate_hz: 0.0,
            spike_len_ms: 0.0,
        },
        AppArchetype {
            kind: ArchetypeKind::RegularNetwork,
            app_id: "regular_network".into(),
            base_rate: [8.0, 180.0, 160.0, 18.0, 70.0, 800.0],
            noise_sigma: [2.5, 35.0, 30.0, 5.0, 15.0, 150.0],
            burst_period_ms: 2000.0,
            burst_duty: 0.5,
            spike_rate_hz: 0.0,
            spike_len_ms: 0.0,
        },
        AppArchetype {
            kind: ArchetypeKind::BurstyUserDriven,
            app_id: "bursty_user_driven".into(),
            base_rate: [5.0, 120.0, 100.0, 12.0, 45.0, 520.0],
            noise_sigma: [2.0, 25.0, 20.0, 3.5, 10.0, 100.0],
            burst_period_ms: 0.0,
            burst_duty: 1.0,
            spike_rate_hz: 0.8,
            spike_len_ms: 300.0,
        },
    ]
}

pub fn archetype_by_id(id: &str) -> Result<AppArchetype> {
    standard_archetypes()
        .into_iter()
        .find(|a| a.app_id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown archetype `{id}`")))
}

/// Generates one benign trace; deterministic for a fixed seed.
///
/// Noise model per sample: base_rate x envelope x lognormal jitter plus
/// additive Gaussian, clipped at zero. The jitter sigma is noise_sigma
/// relative to base_rate, so noise_sigma = 0 yields base x envelope exactly.
pub fn gen_benign(archetype: &AppArchetype, len_ms: f64, seed: u64) -> Result<CounterTrace> {
    if len_ms < 1000.0 {
        return Err(Error::InvalidArgument(format!(
            "trace length must be >= 1000 ms, got {len_ms}"
        )));
    }
    let n = len_ms.floor() as usize;
    let mut envelope = vec![1.0f64; n];
    match archetype.kind {
        ArchetypeKind::RegularNetwork => {
            let period = archetype.burst_period_ms.max(1.0);
            let on = period * archetype.burst_duty;
            for (t, e) in envelope.iter_mut().enumerate() {
                let phase = (t as f64) % period;
                *e = if phase < on { BURST_HI } else { BURST_LO };
            }
        }
        ArchetypeKind::BurstyUserDriven => {
            let mut rng = rng_from(seed, "spikes", 0);
            if archetype.spike_rate_hz > 0.0 && archetype.spike_len_ms > 0.0 {
                let mut t = 0.0f64;
                loop {
                    // Exponential inter-arrival times.
                    let u: f64 = rng.gen_range(1e-12..1.0);
                    t += -u.ln() / archetype.spike_rate_hz * 1000.0;
                    if t >= len_ms {
                        break;
                    }
                    let lo = t as usize;
                    let hi = ((t + archetype.spike_len_ms) as usize).min(n);
                    for e in envelope.iter_mut().take(hi).skip(lo) {
                        *e = 1.0 + SPIKE_GAIN;
                    }
                }
            }
        }
        ArchetypeKind::ComputeIntensive => {}
    }

    let mut samples = Vec::with_capacity(N_CHANNELS);
    for c in 0..N_CHANNELS {
        let base = archetype.base_rate[c];
        let sigma = archetype.noise_sigma[c];
        let mut rng = rng_from(seed, "channel", c as u64);
        // Relative jitter; mu = -s^2/2 keeps the lognormal mean at 1.
        let s = if base > 0.0 { (sigma / base).min(1.0) * 0.5 } else { 0.0 };
        let mu = -0.5 * s * s;
        let mut ch = Vec::with_capacity(n);
        for &e in &envelope {
            let v = if sigma > 0.0 {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                base * e * (mu + s * z1).exp() + sigma * z2
            } else {
                base * e
            };
            ch.push(v.max(0.0));
        }
        samples.push(ch);
    }

    CounterTrace::new(
        1.0,
        DEFAULT_CHANNELS.iter().map(|s| s.to_string()).collect(),
        samples,
        archetype.app_id.clone(),
        vec![],
    )
}

/// Inter-action delay class; the gap is a multiple of the action duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayClass {
    Zero,
    Medium,
    High,
}

impl DelayClass {
    /// Gap between actions, as a multiple of action duration. The class
    /// names come with no published values; 2x and 10x are generator
    /// defaults.
    pub fn gap_factor(&self) -> f64 {
        match self {
            DelayClass::Zero => 0.0,
            DelayClass::Medium => 2.0,
            DelayClass::High => 10.0,
        }
    }

    pub fn letter(&self) -> &'static str {
        match self {
            DelayClass::Zero => "z",
            DelayClass::Medium => "m",
            DelayClass::High => "h",
        }
    }
}

/// One malware intensity configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadConfig {
    pub payload_kind: PayloadKind,
    pub action_duration_ms: f64,
    pub actions_per_trace: usize,
    pub delay_class: DelayClass,
    /// Total counter deltas added by one atomic action, per channel.
    pub footprint: [f64; N_CHANNELS],
    /// Obfuscation overhead knob; reflection/encryption style obfuscation
    /// adds computation, modeled as a footprint multiplier >= 1.
    pub overhead_multiplier: f64,
    pub config_id: String,
    /// Size-ladder index within the kind (ascending intensity).
    pub size_level: usize,
}

/// Per-kind generator defaults. Durations for SMS, contact, and file
/// stealing follow the measured atomic-action times (0.12 s, 0.36 s,
/// 2.86 s); the remaining durations, the channel mixes, and the intensity
/// scales are documented generator constants, not published values.
struct KindDefaults {
    kind: PayloadKind,
    duration_ms: f64,
    actions: usize,
    /// Per-channel mix of the footprint, relative to REF_SIGMA.
    mix: [f64; N_CHANNELS],
    /// Base intensity in units of REF_SIGMA per millisecond.
    intensity: f64,
    sizes: &'static [f64],
    delays: &'static [DelayClass],
}

/// Reference per-ms noise scale (the compute-intensive archetype sigma);
/// footprints are expressed relative to it so every channel contributes
/// comparably after normalization.
const REF_SIGMA: [f64; N_CHANNELS] = [4.0, 60.0, 70.0, 6.0, 25.0, 260.0];

const SIZES_4: [f64; 4] = [1.0, 2.2, 5.0, 11.0];
const SIZES_2: [f64; 2] = [1.0, 5.0];
const SIZES_3: [f64; 3] = [1.0, 2.2, 5.0];
const DELAYS_ZMH: [DelayClass; 3] = [DelayClass::Zero, DelayClass::Medium, DelayClass::High];
/// The ID/GPS stealer is tested with zero and medium delay only; its
/// computational overhead is negligible, so the high-delay variant would
/// add nothing but grid cells.
const DELAYS_ZM: [DelayClass; 2] = [DelayClass::Zero, DelayClass::Medium];

const KIND_DEFAULTS: [KindDefaults; 7] = [
    KindDefaults {
        kind: PayloadKind::SmsSteal,
        duration_ms: 120.0,
        actions: 30,
        mix: [0.5, 0.8, 0.5, 0.7, 0.6, 0.7],
        intensity: 0.05,
        sizes: &SIZES_4,
        delays: &DELAYS_ZMH,
    },
    KindDefaults {
        kind: PayloadKind::ContactSteal,
        duration_ms: 360.0,
        actions: 14,
        mix: [0.4, 0.9, 0.5, 0.5, 0.5, 0.8],
        intensity: 0.04,
        sizes: &SIZES_4,
        delays: &DELAYS_ZMH,
    },
    KindDefaults {
        kind: PayloadKind::FileSteal,
        duration_ms: 2860.0,
        actions: 6,
        mix: [0.2, 1.0, 0.3, 0.2, 0.5, 0.8],
        intensity: 0.055,
        sizes: &SIZES_4,
        delays: &DELAYS_ZMH,
    },
    KindDefaults {
        kind: PayloadKind::IdGpsSteal,
        duration_ms: 150.0,
        actions: 20,
        mix: [0.3, 0.5, 0.4, 0.4, 0.4, 0.5],
        intensity: 0.012,
        sizes: &SIZES_3,
        delays: &DELAYS_ZM,
    },
    KindDefaults {
        kind: PayloadKind::ClickFraud,
        duration_ms: 400.0,
        actions: 35,
        mix: [1.0, 0.6, 0.5, 1.0, 0.8, 0.8],
        intensity: 0.055,
        sizes: &SIZES_4,
        delays: &DELAYS_ZMH,
    },
    KindDefaults {
        kind: PayloadKind::Ddos,
        duration_ms: 200.0,
        actions: 20,
        mix: [0.5, 0.6, 0.3, 0.6, 0.9, 0.6],
        intensity: 0.04,
        sizes: &SIZES_2,
        delays: &DELAYS_ZMH,
    },
    KindDefaults {
        kind: PayloadKind::PasswordCracker,
        duration_ms: 500.0,
        actions: 12,
        mix: [0.6, 0.4, 1.0, 0.3, 0.5, 0.9],
        intensity: 0.065,
        sizes: &SIZES_2,
        delays: &DELAYS_ZMH,
    },
];

/// The default 66-configuration grid: 7 payload kinds crossed with per-kind
/// size ladders and delay classes. Size levels scale the per-action
/// footprint, modeling larger data chunks per atomic action.
pub fn default_grid() -> Vec<PayloadConfig> {
    default_grid_with_overhead(1.0)
}

/// Same grid with an obfuscation overhead multiplier applied to every
/// footprint; config ids are unchanged so runs can be compared cell-wise.
pub fn default_grid_with_overhead(overhead_multiplier: f64) -> Vec<PayloadConfig> {
    let mut grid = Vec::with_capacity(66);
    for kd in &KIND_DEFAULTS {
        for (si, &size) in kd.sizes.iter().enumerate() {
            for &delay in kd.delays {
                let mut footprint = [0.0; N_CHANNELS];
                for c in 0..N_CHANNELS {
                    footprint[c] = kd.mix[c] * REF_SIGMA[c] * kd.intensity * size * kd.duration_ms;
                }
                grid.push(PayloadConfig {
                    payload_kind: kd.kind,
                    action_duration_ms: kd.duration_ms,
                    actions_per_trace: kd.actions,
                    delay_class: delay,
                    footprint,
                    overhead_multiplier,
                    config_id: format!("{}-s{}-{}", kd.kind.as_str(), si, delay.letter()),
                    size_level: si,
                });
            }
        }
    }
    debug_assert_eq!(grid.len(), 66);
    grid
}

/// Result of injecting a payload into a benign trace.
#[derive(Debug, Clone)]
pub struct Injected {
    pub trace: CounterTrace,
    /// Actions dropped or cut short because they did not fit in the trace.
    pub truncated_actions: usize,
}

/// Adds payload activity to a benign trace.
///
/// Each atomic action spreads footprint x overhead_multiplier uniformly
/// over its duration; actions are evenly spaced by the delay-class gap from
/// a seeded random start. Every action is recorded as a label interval.
pub fn inject_payload(trace: &CounterTrace, cfg: &PayloadConfig, seed: u64) -> Result<Injected> {
    if trace.is_empty() {
        return Err(Error::EmptyInput("cannot inject into an empty trace".into()));
    }
    if !trace.label_intervals.is_empty() {
        return Err(Error::InvalidArgument(
            "inject_payload expects a benign (unlabeled) trace".into(),
        ));
    }
    let mut out = trace.clone();
    if cfg.actions_per_trace == 0 {
        return Ok(Injected {
            trace: out,
            truncated_actions: 0,
        });
    }
    let period = trace.sample_period_ms;
    let len_ms = trace.duration_ms();
    let dur = cfg.action_duration_ms;
    let gap = dur * cfg.delay_class.gap_factor();
    let span = cfg.actions_per_trace as f64 * dur + (cfg.actions_per_trace - 1) as f64 * gap;

    let margin = 0.02 * len_ms;
    let mut rng = rng_from(seed, "inject-start", 0);
    let max_start = (len_ms - margin - span).max(margin);
    let start = if max_start > margin {
        rng.gen_range(margin..max_start)
    } else {
        margin
    };

    let samples_per_action = (dur / period).round().max(1.0) as usize;
    let mut truncated = 0usize;
    let mut intervals = Vec::with_capacity(cfg.actions_per_trace);
    for a in 0..cfg.actions_per_trace {
        let a_start = start + a as f64 * (dur + gap);
        let first = (a_start / period).floor() as usize;
        if first >= trace.len() {
            truncated += 1;
            continue;
        }
        let last = (first + samples_per_action).min(trace.len());
        if last - first < samples_per_action {
            truncated += 1;
        }
        for c in 0..N_CHANNELS {
            let add = cfg.footprint[c] * cfg.overhead_multiplier / samples_per_action as f64;
            for v in out.samples[c][first..last].iter_mut() {
                *v += add;
            }
        }
        intervals.push(PayloadInterval {
            start_ms: first as f64 * period,
            end_ms: (last as f64) * period,
            payload_kind: cfg.payload_kind,
            config_id: cfg.config_id.clone(),
        });
    }
    out.label_intervals = intervals;
    // Revalidate ordering and bounds after injection.
    let out = CounterTrace::new(
        out.sample_period_ms,
        out.channels,
        out.samples,
        out.app_id,
        out.label_intervals,
    )?;
    Ok(Injected {
        trace: out,
        truncated_actions: truncated,
    })
}

/// Full suite description: archetypes x payload grid, plus benign traces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub archetypes: Vec<String>,
    /// None means the default 66-config grid.
    pub payload_grid: Option<Vec<PayloadConfig>>,
    pub traces_per_cell: usize,
    pub trace_len_ms: f64,
    pub seed: u64,
    pub overhead_multiplier: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            archetypes: standard_archetypes()
                .iter()
                .map(|a| a.app_id.clone())
                .collect(),
            payload_grid: None,
            traces_per_cell: 3,
            trace_len_ms: 300_000.0,
            seed: 42,
            overhead_multiplier: 1.0,
        }
    }
}

impl SuiteSpec {
    pub fn grid(&self) -> Vec<PayloadConfig> {
        self.payload_grid
            .clone()
            .unwrap_or_else(|| default_grid_with_overhead(self.overhead_multiplier))
    }
}

/// One planned trace of a suite.
#[derive(Debug, Clone)]
pub struct PlannedTrace {
    pub archetype: AppArchetype,
    pub benign: bool,
    pub payload: Option<PayloadConfig>,
    pub seed: u64,
    pub len_ms: f64,
    pub file_name: String,
}

impl PlannedTrace {
    /// Generates the trace (and injects the payload for malicious plans).
    pub fn materialize(&self) -> Result<Injected> {
        let benign = gen_benign(&self.archetype, self.len_ms, self.seed)?;
        match &self.payload {
            None => Ok(Injected {
                trace: benign,
                truncated_actions: 0,
            }),
            Some(cfg) => inject_payload(&benign, cfg, derive_seed(self.seed, "payload", 0)),
        }
    }
}

/// Deterministic plan of every trace in the suite: per archetype,
/// `traces_per_cell` benign traces plus one injected trace per grid cell.
pub fn plan_suite(spec: &SuiteSpec) -> Result<Vec<PlannedTrace>> {
    let grid = spec.grid();
    let mut plans = Vec::new();
    for arch_id in &spec.archetypes {
        let archetype = archetype_by_id(arch_id)?;
        for b in 0..spec.traces_per_cell {
            let seed = derive_seed(spec.seed, &format!("{arch_id}/benign"), b as u64);
            plans.push(PlannedTrace {
                archetype: archetype.clone(),
                benign: true,
                payload: None,
                seed,
                len_ms: spec.trace_len_ms,
                file_name: format!("{arch_id}_benign_{b}.csv"),
            });
        }
        for (ci, cfg) in grid.iter().enumerate() {
            let seed = derive_seed(spec.seed, &format!("{arch_id}/carrier"), ci as u64);
            plans.push(PlannedTrace {
                archetype: archetype.clone(),
                benign: false,
                payload: Some(cfg.clone()),
                seed,
                len_ms: spec.trace_len_ms,
                file_name: format!("{arch_id}_{}.csv", cfg.config_id),
            });
        }
    }
    Ok(plans)
}

/// Manifest entry describing one written trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub app_id: String,
    pub benign: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_id: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SuiteManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<SuiteManifest> {
        let text =
            fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Generates and writes the whole suite plus `manifest.json`.
pub fn gen_suite(spec: &SuiteSpec, out_dir: impl AsRef<Path>) -> Result<SuiteManifest> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plans = plan_suite(spec)?;
    let mut entries = Vec::with_capacity(plans.len());
    for plan in &plans {
        let injected = plan.materialize()?;
        crate::trace::write_trace(&injected.trace, out_dir.join(&plan.file_name))?;
        entries.push(ManifestEntry {
            path: plan.file_name.clone(),
            app_id: plan.archetype.app_id.clone(),
            benign: plan.benign,
            config_id: plan.payload.as_ref().map(|c| c.config_id.clone()),
            seed: plan.seed,
        });
    }
    let manifest = SuiteManifest { entries };
    let json = serde_json::to_string_pretty(&manifest)?;
    crate::trace::write_atomic(&out_dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn compute_archetype() -> AppArchetype {
        standard_archetypes()
            .into_iter()
            .find(|a| a.kind == ArchetypeKind::ComputeIntensive)
            .unwrap()
    }

    #[test]
    fn zero_noise_compute_trace_is_exactly_base_rate() {
        let mut arch = compute_archetype();
        arch.noise_sigma = [0.0; N_CHANNELS];
        let t = gen_benign(&arch, 2000.0, 1).unwrap();
        for (c, ch) in t.samples.iter().enumerate() {
            assert!(ch.iter().all(|&v| v == arch.base_rate[c]));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let arch = compute_archetype();
        let a = gen_benign(&arch, 3000.0, 7).unwrap();
        let b = gen_benign(&arch, 3000.0, 7).unwrap();
        assert_eq!(a, b);
        let c = gen_benign(&arch, 3000.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channel_means_track_the_profile() {
        for arch in standard_archetypes() {
            let t = gen_benign(&arch, 60_000.0, 3).unwrap();
            let envelope_mean = match arch.kind {
                ArchetypeKind::RegularNetwork => {
                    BURST_HI * arch.burst_duty + BURST_LO * (1.0 - arch.burst_duty)
                }
                // Poisson spike coverage: 1 - exp(-rate * length).
                ArchetypeKind::BurstyUserDriven => {
                    let coverage =
                        1.0 - (-arch.spike_rate_hz * arch.spike_len_ms / 1000.0).exp();
                    1.0 + SPIKE_GAIN * coverage
                }
                ArchetypeKind::ComputeIntensive => 1.0,
            };
            for c in 0..N_CHANNELS {
                let mean: f64 =
                    t.samples[c].iter().sum::<f64>() / t.samples[c].len() as f64;
                let expect = arch.base_rate[c] * envelope_mean;
                let tol = 3.0 * arch.noise_sigma[c] / (t.len() as f64).sqrt()
                    + 0.15 * expect;
                assert!(
                    (mean - expect).abs() <= tol,
                    "{} ch{c}: mean {mean} vs {expect}",
                    arch.app_id
                );
            }
        }
    }

    #[test]
    fn regular_network_autocorrelation_peaks_at_burst_period() {
        let arch = standard_archetypes()
            .into_iter()
            .find(|a| a.kind == ArchetypeKind::RegularNetwork)
            .unwrap();
        let t = gen_benign(&arch, 60_000.0, 5).unwrap();
        let ch = &t.samples[1];
        let n = ch.len();
        let mean = ch.iter().sum::<f64>() / n as f64;
        let auto = |lag: usize| -> f64 {
            (0..n - lag)
                .map(|i| (ch[i] - mean) * (ch[i + lag] - mean))
                .sum::<f64>()
                / (n - lag) as f64
        };
        // Autocorrelation oracle at 100 ms resolution over [1s, 3s].
        let mut best = (0usize, f64::NEG_INFINITY);
        for lag in (1000..=3000).step_by(100) {
            let v = auto(lag);
            if v > best.1 {
                best = (lag, v);
            }
        }
        assert_eq!(best.0, 2000, "autocorrelation peak at {} ms", best.0);
    }

    #[test]
    fn zero_actions_is_identity_with_no_labels() {
        let arch = compute_archetype();
        let benign = gen_benign(&arch, 5000.0, 2).unwrap();
        let mut cfg = default_grid()[0].clone();
        cfg.actions_per_trace = 0;
        let injected = inject_payload(&benign, &cfg, 3).unwrap();
        assert_eq!(injected.trace, benign);
        assert_eq!(injected.truncated_actions, 0);
    }

    #[test]
    fn single_sms_action_labels_120ms() {
        let arch = compute_archetype();
        let benign = gen_benign(&arch, 10_000.0, 4).unwrap();
        let mut cfg = default_grid()
            .into_iter()
            .find(|c| c.payload_kind == PayloadKind::SmsSteal)
            .unwrap();
        cfg.actions_per_trace = 1;
        let injected = inject_payload(&benign, &cfg, 5).unwrap();
        assert_eq!(injected.trace.label_intervals.len(), 1);
        let iv = &injected.trace.label_intervals[0];
        assert_abs_diff_eq!(iv.end_ms - iv.start_ms, 120.0, epsilon = 1e-9);
    }

    #[test]
    fn injection_conserves_total_added_counts() {
        let arch = compute_archetype();
        let benign = gen_benign(&arch, 200_000.0, 6).unwrap();
        let mut rng = crate::rng::rng_from(60, "conserve", 0);
        use rand::Rng;
        for _ in 0..5 {
            let grid = default_grid();
            let cfg = &grid[rng.gen_range(0..grid.len())];
            let injected = inject_payload(&benign, cfg, rng.gen()).unwrap();
            assert_eq!(injected.truncated_actions, 0, "{}", cfg.config_id);
            for c in 0..N_CHANNELS {
                let diff: f64 = injected.trace.samples[c]
                    .iter()
                    .zip(&benign.samples[c])
                    .map(|(a, b)| a - b)
                    .sum();
                let expect = cfg.actions_per_trace as f64
                    * cfg.footprint[c]
                    * cfg.overhead_multiplier;
                let rel = (diff - expect).abs() / expect.max(1.0);
                assert!(rel <= 1e-6, "{} ch{c}: {diff} vs {expect}", cfg.config_id);
            }
        }
    }

    #[test]
    fn more_actions_strictly_increase_injected_counts() {
        let arch = compute_archetype();
        let benign = gen_benign(&arch, 200_000.0, 8).unwrap();
        let grid = default_grid();
        let base = grid
            .iter()
            .find(|c| c.payload_kind == PayloadKind::ContactSteal)
            .unwrap();
        let mut prev = 0.0;
        for actions in [1usize, 4, 8, 16] {
            let mut cfg = base.clone();
            cfg.actions_per_trace = actions;
            let injected = inject_payload(&benign, &cfg, 9).unwrap();
            let total: f64 = (0..N_CHANNELS)
                .map(|c| {
                    injected.trace.samples[c]
                        .iter()
                        .zip(&benign.samples[c])
                        .map(|(a, b)| a - b)
                        .sum::<f64>()
                })
                .sum();
            assert!(total > prev, "actions {actions}: {total} <= {prev}");
            prev = total;
        }
    }

    #[test]
    fn grid_has_66_unique_configs_all_kinds() {
        let grid = default_grid();
        assert_eq!(grid.len(), 66);
        let mut ids: Vec<&str> = grid.iter().map(|c| c.config_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 66, "config ids must be unique");
        for kind in PayloadKind::ALL {
            assert!(grid.iter().any(|c| c.payload_kind == kind), "{kind} missing");
        }
        // ID/GPS stealing never uses the high-delay class.
        assert!(grid
            .iter()
            .filter(|c| c.payload_kind == PayloadKind::IdGpsSteal)
            .all(|c| c.delay_class != DelayClass::High));
        // Durations follow the measured atomic actions.
        for (kind, dur) in [
            (PayloadKind::SmsSteal, 120.0),
            (PayloadKind::ContactSteal, 360.0),
            (PayloadKind::FileSteal, 2860.0),
        ] {
            assert!(grid
                .iter()
                .filter(|c| c.payload_kind == kind)
                .all(|c| c.action_duration_ms == dur));
        }
    }

    #[test]
    fn default_grid_payloads_fit_inside_default_traces() {
        let spec = SuiteSpec::default();
        for cfg in spec.grid() {
            let dur = cfg.action_duration_ms;
            let span = cfg.actions_per_trace as f64 * dur
                + (cfg.actions_per_trace - 1) as f64 * dur * cfg.delay_class.gap_factor();
            assert!(
                span <= 0.9 * spec.trace_len_ms,
                "{} spans {span} ms",
                cfg.config_id
            );
        }
    }

    #[test]
    fn suite_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let grid: Vec<PayloadConfig> = default_grid().into_iter().take(2).collect();
        let spec = SuiteSpec {
            archetypes: vec!["compute_intensive".into()],
            payload_grid: Some(grid),
            traces_per_cell: 3,
            trace_len_ms: 2000.0,
            seed: 11,
            overhead_multiplier: 1.0,
        };
        let manifest = gen_suite(&spec, dir.path().join("a")).unwrap();
        assert_eq!(manifest.entries.len(), 5); // 3 benign + 2 malicious
        assert_eq!(manifest.entries.iter().filter(|e| e.benign).count(), 3);

        let manifest2 = gen_suite(&spec, dir.path().join("b")).unwrap();
        assert_eq!(manifest, manifest2);
        let a = std::fs::read(dir.path().join("a/manifest.json")).unwrap();
        let b = std::fs::read(dir.path().join("b/manifest.json")).unwrap();
        assert_eq!(a, b);

        // Every malicious trace carries at least one label interval.
        for e in manifest.entries.iter().filter(|e| !e.benign) {
            let t = crate::trace::read_trace(dir.path().join("a").join(&e.path)).unwrap();
            assert!(!t.label_intervals.is_empty(), "{}", e.path);
        }
    }
}
