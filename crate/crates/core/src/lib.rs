//! Desk-scale workbench for hardware-based malware detectors (HMDs).
//!
//! The crate synthesizes labeled performance-counter traces of benign app
//! archetypes with injected malware payloads, trains anomaly and supervised
//! detectors on them (Markov chain over DWT-derived states, bag-of-words
//! one-class SVM, a per-sample power-transform baseline, and a random
//! forest), and measures operating ranges: ROC/AUC, detection heatmaps,
//! and time to detection.

pub mod baseline;
pub mod bow;
pub mod codebook;
pub mod error;
pub mod eval;
pub mod features;
pub mod harness;
pub mod markov;
pub mod model_io;
pub mod ocsvm;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod supervised;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
pub use eval::DetectionReport;
pub use trace::{CounterTrace, PayloadInterval, PayloadKind};
