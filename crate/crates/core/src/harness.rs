//! Suite-level orchestration: trains the detectors per app archetype,
//! evaluates them over a generated suite, and emits the report bundle
//! (roc.csv, operating_range.csv, ttd.csv, auc_summary.csv, heatmap.svg).

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{detect_baseline, train_baseline, BaselineConfig};
use crate::bow::{detect_bow, histogram, BowConfig, BowModel};
use crate::codebook::{
    assign_states, build_codebook_with, select_m_bic, CodebookOptions, KmeansOptions,
};
use crate::error::{Error, Result};
use crate::eval::{
    kfold, roc_auc, score_tp_fp, time_to_detection, write_heatmap_svg,
    write_operating_range_csv, DetectionReport, OperatingRangeCell,
};
use crate::features::FeatureConfig;
use crate::markov::{calibrate_threshold, detect_markov, train_markov, MarkovConfig};
use crate::model_io::{BaselineBundle, BowBundle, MarkovBundle};
use crate::pipeline::{fit_pipeline, PipelineFit};
use crate::preprocess::PreprocessConfig;
use crate::rng::derive_seed;
use crate::supervised::{
    build_balanced_set, score_rf, train_rf, LabeledWindowSet, RandomForestConfig,
};
use crate::synth::{DelayClass, PayloadConfig, PlannedTrace, SuiteManifest};
use crate::trace::{read_trace, CounterTrace, PayloadInterval, PayloadKind};

/// Markov codebook sizing: fixed, or BIC-selected over a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSelection {
    Fixed(usize),
    /// Search band; defaults to the 10-20 range that BIC favors on this
    /// kind of data.
    Bic { lo: usize, hi: usize },
}

impl Default for StateSelection {
    fn default() -> Self {
        StateSelection::Bic { lo: 10, hi: 20 }
    }
}

/// All detector and evaluation knobs for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    pub markov: MarkovConfig,
    pub markov_states: StateSelection,
    pub bow: BowConfig,
    /// k-means++ restarts for the large bag-of-words codebook; 1 keeps the
    /// thousand-centroid clustering tractable (the Markov codebook keeps
    /// the full 10-restart policy).
    pub bow_codebook_restarts: u64,
    pub bow_kmeans_max_iter: usize,
    pub bow_kmeans_tol: f64,
    pub baseline: BaselineConfig,
    pub rf: RandomForestConfig,
    pub fp_target: f64,
    pub kfold: usize,
    /// Benign state sequences are split into chunks of this many windows
    /// before Markov MLE so the initial distribution is estimated from many
    /// sequence starts; detection restarts Eq-style products per window, so
    /// chunk-scale starts match the deployment statistics.
    pub markov_train_chunk: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            preprocess: PreprocessConfig::default(),
            features: FeatureConfig::default(),
            markov: MarkovConfig::default(),
            markov_states: StateSelection::default(),
            bow: BowConfig::default(),
            bow_codebook_restarts: 1,
            bow_kmeans_max_iter: 120,
            bow_kmeans_tol: 1e-5,
            baseline: BaselineConfig::default(),
            rf: RandomForestConfig::default(),
            fp_target: 0.2,
            kfold: 10,
            markov_train_chunk: 64,
        }
    }
}

/// Trained per-archetype detector set.
#[derive(Debug, Clone)]
pub struct ArchetypeModels {
    pub archetype: String,
    pub markov: MarkovBundle,
    pub bow: BowBundle,
    pub baseline: BaselineBundle,
}

fn quantile_threshold(scores: &mut Vec<f64>, fp_target: f64) -> f64 {
    // Largest threshold with P(score < t) <= target under strict comparison:
    // the nearest-rank quantile of the scores themselves.
    if scores.is_empty() {
        return f64::NEG_INFINITY;
    }
    scores.sort_by(|a, b| a.total_cmp(b));
    let n = scores.len();
    let rank = ((fp_target * n as f64).floor() as usize).min(n - 1);
    scores[rank]
}

/// Trains Markov, bag-of-words, and baseline detectors for one archetype.
///
/// `train` are the benign training traces; `validation` are held-out benign
/// traces used for threshold calibration at `fp_target`.
pub fn train_archetype(
    archetype: &str,
    train: &[CounterTrace],
    validation: &[CounterTrace],
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<ArchetypeModels> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyInput(format!(
            "archetype {archetype}: need training and validation traces"
        )));
    }
    let (pipeline, train_sets) =
        fit_pipeline(train, cfg.preprocess.clone(), cfg.features.clone())?;
    let pooled: Vec<Vec<f64>> = train_sets
        .iter()
        .flat_map(|s| s.vectors.iter().cloned())
        .collect();
    let pooled_set = crate::features::SegmentFeatureSet {
        config: cfg.features.clone(),
        starts_ms: (0..pooled.len()).map(|i| i as f64).collect(),
        vectors: pooled,
    };
    let valid_sets: Vec<crate::features::SegmentFeatureSet> = validation
        .iter()
        .map(|t| pipeline.apply(t))
        .collect::<Result<_>>()?;

    // Markov detector.
    let m = match cfg.markov_states {
        StateSelection::Fixed(m) => m,
        StateSelection::Bic { lo, hi } => select_m_bic(
            &pooled_set.vectors,
            lo..=hi.min(pooled_set.len()).max(lo),
            derive_seed(seed, "bic", 0),
        )?,
    };
    let markov_cb = build_codebook_with(
        &pooled_set,
        m,
        derive_seed(seed, "markov-codebook", 0),
        CodebookOptions::default(),
    )?;
    let chunk = cfg.markov_train_chunk.max(cfg.markov.consecutive_required);
    let mut train_seqs: Vec<Vec<usize>> = Vec::new();
    for set in &train_sets {
        let states = assign_states(&markov_cb, set)?;
        for piece in states.chunks(chunk) {
            if piece.len() >= 2 {
                train_seqs.push(piece.to_vec());
            }
        }
    }
    let mut markov_model = train_markov(&train_seqs, markov_cb, cfg.markov.clone())?;
    let valid_seqs: Vec<Vec<usize>> = valid_sets
        .iter()
        .map(|s| assign_states(&markov_model.codebook, s))
        .collect::<Result<_>>()?;
    markov_model.threshold = calibrate_threshold(&markov_model, &valid_seqs, cfg.fp_target)?;

    // Bag-of-words detector.
    let bow_cb = build_codebook_with(
        &pooled_set,
        cfg.bow.m.min(pooled_set.len()),
        derive_seed(seed, "bow-codebook", 0),
        CodebookOptions {
            restarts: cfg.bow_codebook_restarts,
            kmeans: KmeansOptions {
                max_iter: cfg.bow_kmeans_max_iter,
                movement_tol: cfg.bow_kmeans_tol,
            },
        },
    )?;
    let mut train_hists = Vec::new();
    for set in &train_sets {
        let states = assign_states(&bow_cb, set)?;
        for (_, h) in histogram(&states, &set.starts_ms, cfg.bow.ttd_ms, bow_cb.n_symbols())? {
            train_hists.push(h);
        }
    }
    let ocsvm = crate::ocsvm::train_ocsvm(
        &train_hists,
        cfg.bow.nu,
        cfg.bow.gamma,
        derive_seed(seed, "bow-ocsvm", 0),
    )?;
    let mut bow_model = BowModel {
        codebook: bow_cb,
        ttd_ms: cfg.bow.ttd_ms,
        ocsvm,
        decision_threshold: 0.0,
    };
    let mut valid_scores = Vec::new();
    for set in valid_sets.iter() {
        let states = assign_states(&bow_model.codebook, set)?;
        for (_, h) in histogram(
            &states,
            &set.starts_ms,
            bow_model.ttd_ms,
            bow_model.codebook.n_symbols(),
        )? {
            valid_scores.push(bow_model.ocsvm.decision(&h));
        }
    }
    // Keep the natural f < 0 rule unless it over-shoots the FP target.
    let q = quantile_threshold(&mut valid_scores, cfg.fp_target);
    bow_model.decision_threshold = q.min(0.0);

    // Baseline detector.
    let mut baseline_model = train_baseline(
        train,
        cfg.baseline.clone(),
        derive_seed(seed, "baseline", 0),
    )?;
    let mut base_scores = Vec::new();
    for t in validation {
        let report = detect_baseline(&baseline_model, t, "valid")?;
        base_scores.extend(report.scores);
    }
    let q = quantile_threshold(&mut base_scores, cfg.fp_target);
    baseline_model.decision_threshold = q.min(0.0);

    Ok(ArchetypeModels {
        archetype: archetype.to_string(),
        markov: MarkovBundle {
            pipeline: pipeline.clone(),
            model: markov_model,
        },
        bow: BowBundle {
            pipeline,
            model: bow_model,
        },
        baseline: BaselineBundle {
            model: baseline_model,
        },
    })
}

/// Runs the Markov detector over one trace through a fitted pipeline.
pub fn run_markov(bundle: &MarkovBundle, trace: &CounterTrace, id: &str) -> Result<DetectionReport> {
    let set = bundle.pipeline.apply(trace)?;
    let states = assign_states(&bundle.model.codebook, &set)?;
    detect_markov(&bundle.model, &states, &set.starts_ms, id)
}

/// Detector reports for one evaluated trace.
#[derive(Debug, Clone)]
pub struct TraceEval {
    pub trace_id: String,
    pub archetype: String,
    pub benign: bool,
    pub config_id: Option<String>,
    pub labels: Vec<PayloadInterval>,
    /// detector name -> report
    pub reports: BTreeMap<String, DetectionReport>,
}

/// Evaluates one trace with every detector of its archetype.
pub fn evaluate_trace(
    models: &ArchetypeModels,
    trace: &CounterTrace,
    trace_id: &str,
    config_id: Option<&str>,
    with_baseline: bool,
) -> Result<TraceEval> {
    let mut reports = BTreeMap::new();
    reports.insert(
        "markov".to_string(),
        run_markov(&models.markov, trace, trace_id)?,
    );
    reports.insert(
        "bow".to_string(),
        detect_bow(&models.bow.model, trace, &models.bow.pipeline, trace_id)?,
    );
    if with_baseline {
        reports.insert(
            "baseline".to_string(),
            detect_baseline(&models.baseline.model, trace, trace_id)?,
        );
    }
    Ok(TraceEval {
        trace_id: trace_id.to_string(),
        archetype: models.archetype.clone(),
        benign: trace.label_intervals.is_empty(),
        config_id: config_id.map(|s| s.to_string()),
        labels: trace.label_intervals.clone(),
        reports,
    })
}

/// Pool of labeled bag-of-words histograms with trace provenance, the input
/// to the random-forest experiments.
#[derive(Debug, Clone, Default)]
pub struct WindowPool {
    pub set: LabeledWindowSet,
    /// Trace index (into the caller's trace list) per row; folds split on
    /// this so no trace straddles a fold.
    pub trace_of_row: Vec<usize>,
    pub archetype_of_trace: Vec<String>,
}

impl WindowPool {
    /// Adds one trace's histograms. Malicious traces contribute only their
    /// payload-overlapping TTD windows; benign traces contribute everything.
    pub fn add_trace(
        &mut self,
        bow: &BowModel,
        pipeline: &PipelineFit,
        trace: &CounterTrace,
        archetype: &str,
    ) -> Result<()> {
        let set = pipeline.apply(trace)?;
        let states = assign_states(&bow.codebook, &set)?;
        let hists = histogram(&states, &set.starts_ms, bow.ttd_ms, bow.codebook.n_symbols())?;
        let trace_idx = self.archetype_of_trace.len();
        self.archetype_of_trace.push(archetype.to_string());
        for (start, h) in hists {
            let end = start + bow.ttd_ms;
            if trace.label_intervals.is_empty() {
                self.set.push(h, None);
                self.trace_of_row.push(trace_idx);
            } else if let Some(iv) = trace
                .label_intervals
                .iter()
                .find(|iv| iv.start_ms < end && start < iv.end_ms)
            {
                self.set.push(h, Some(iv.payload_kind));
                self.trace_of_row.push(trace_idx);
            }
            // Non-payload windows of malicious traces are dropped entirely.
        }
        Ok(())
    }

    pub fn n_traces(&self) -> usize {
        self.archetype_of_trace.len()
    }
}

/// Out-of-fold random-forest evaluation at trace granularity.
#[derive(Debug, Clone)]
pub struct RfCvOutcome {
    /// (benign scores, malicious scores) pooled over held-out folds.
    pub benign_scores: Vec<f64>,
    pub malicious_scores: Vec<f64>,
    pub auc: f64,
    /// Out-of-fold score per pool row; None when the row's fold could not
    /// be trained (degenerate class balance).
    pub oof_scores: Vec<Option<f64>>,
}

/// 10-fold (configurable) cross-validation of the random forest on a window
/// pool: folds split whole traces, each fold's model is trained on a
/// balanced set drawn from the remaining traces.
pub fn rf_cross_validate(
    pool: &WindowPool,
    cfg: &RandomForestConfig,
    k: usize,
    seed: u64,
) -> Result<RfCvOutcome> {
    let n_traces = pool.n_traces();
    let folds = kfold(n_traces, k.min(n_traces), seed)?;
    let mut benign_scores = Vec::new();
    let mut malicious_scores = Vec::new();
    let mut oof_scores: Vec<Option<f64>> = vec![None; pool.set.len()];

    for (fi, fold) in folds.iter().enumerate() {
        let in_fold: Vec<bool> = {
            let mut v = vec![false; n_traces];
            for &t in fold {
                v[t] = true;
            }
            v
        };
        let mut train_rows = LabeledWindowSet::default();
        let mut test_rows: Vec<usize> = Vec::new();
        for row in 0..pool.set.len() {
            if in_fold[pool.trace_of_row[row]] {
                test_rows.push(row);
            } else {
                train_rows.push(
                    pool.set.vectors[row].clone(),
                    pool.set.behavior[row],
                );
            }
        }
        if test_rows.is_empty() {
            continue;
        }
        // Balanced training set sized to what the sparsest side supports.
        let benign_avail = train_rows.labels.iter().filter(|&&l| !l).count();
        let behaviors: Vec<PayloadKind> = PayloadKind::ALL
            .iter()
            .copied()
            .filter(|k| train_rows.behavior.iter().any(|b| b == &Some(*k)))
            .collect();
        if behaviors.is_empty() || benign_avail == 0 {
            continue;
        }
        let min_behavior = behaviors
            .iter()
            .map(|k| {
                train_rows
                    .behavior
                    .iter()
                    .filter(|b| **b == Some(*k))
                    .count()
            })
            .min()
            .unwrap();
        let half = benign_avail
            .min(min_behavior * behaviors.len())
            .min(400);
        if half < behaviors.len() {
            continue;
        }
        let balanced = build_balanced_set(
            &train_rows,
            &behaviors,
            2 * half,
            derive_seed(seed, "rf-fold", fi as u64),
        )?;
        let model = train_rf(&balanced, cfg, derive_seed(seed, "rf-train", fi as u64))?;
        let vectors: Vec<Vec<f64>> = test_rows
            .iter()
            .map(|&r| pool.set.vectors[r].clone())
            .collect();
        let scores = score_rf(&model, &vectors)?;
        for (&row, score) in test_rows.iter().zip(scores) {
            oof_scores[row] = Some(score);
            if pool.set.labels[row] {
                malicious_scores.push(score);
            } else {
                benign_scores.push(score);
            }
        }
    }
    if benign_scores.is_empty() || malicious_scores.is_empty() {
        return Err(Error::EmptyInput(
            "cross-validation produced an empty score set".into(),
        ));
    }
    let (_, auc) = roc_auc(&benign_scores, &malicious_scores, true)?;
    Ok(RfCvOutcome {
        benign_scores,
        malicious_scores,
        auc,
        oof_scores,
    })
}

/// Full evaluation bundle, ready for CSV emission.
#[derive(Debug, Clone, Default)]
pub struct SuiteEvaluation {
    pub evals: Vec<TraceEval>,
    /// (detector, archetype) -> AUC over payload windows vs benign windows.
    pub auc_rows: Vec<(String, String, f64)>,
    /// (detector, archetype) -> ROC points.
    pub roc_rows: Vec<(String, String, Vec<(f64, f64, f64)>)>,
    pub operating_cells: BTreeMap<String, Vec<OperatingRangeCell>>,
    /// detector, archetype, config, interval start, latency (None = missed).
    pub ttd_rows: Vec<(String, String, String, f64, Option<f64>)>,
}

/// Sort key following the heatmap convention: payload kind, size ascending,
/// delay high-to-zero.
pub fn config_sort_key(grid: &[PayloadConfig], config_id: &str) -> (usize, usize, usize) {
    let delay_rank = |d: DelayClass| match d {
        DelayClass::High => 0,
        DelayClass::Medium => 1,
        DelayClass::Zero => 2,
    };
    grid.iter()
        .find(|c| c.config_id == config_id)
        .map(|c| {
            let kind_rank = PayloadKind::ALL
                .iter()
                .position(|k| *k == c.payload_kind)
                .unwrap_or(usize::MAX);
            (kind_rank, c.size_level, delay_rank(c.delay_class))
        })
        .unwrap_or((usize::MAX, usize::MAX, usize::MAX))
}

/// Aggregates per-trace reports into AUC, ROC, operating-range, and TTD
/// tables. `grid` supplies the row ordering for the heatmap.
pub fn aggregate(evals: Vec<TraceEval>, grid: &[PayloadConfig]) -> SuiteEvaluation {
    let mut detectors: Vec<String> = evals
        .iter()
        .flat_map(|e| e.reports.keys().cloned())
        .collect();
    detectors.sort();
    detectors.dedup();
    let mut archetypes: Vec<String> = evals.iter().map(|e| e.archetype.clone()).collect();
    archetypes.sort();
    archetypes.dedup();

    let mut out = SuiteEvaluation::default();
    for det in &detectors {
        for arch in &archetypes {
            let mut benign_scores = Vec::new();
            let mut malicious_scores = Vec::new();
            let mut higher = true;
            for e in evals.iter().filter(|e| &e.archetype == arch) {
                let Some(report) = e.reports.get(det) else {
                    continue;
                };
                higher = report.higher_is_anomalous;
                if e.benign {
                    benign_scores.extend(report.scores.iter().copied());
                } else {
                    for i in 0..report.n_windows() {
                        if report.window_overlaps(i, &e.labels) {
                            malicious_scores.push(report.scores[i]);
                        }
                    }
                    for (iv, latency) in time_to_detection(report, &e.labels) {
                        out.ttd_rows.push((
                            det.clone(),
                            arch.clone(),
                            e.config_id.clone().unwrap_or_default(),
                            iv.start_ms,
                            latency,
                        ));
                    }
                }
            }
            if !benign_scores.is_empty() && !malicious_scores.is_empty() {
                if let Ok((points, auc)) = roc_auc(&benign_scores, &malicious_scores, higher) {
                    out.auc_rows.push((det.clone(), arch.clone(), auc));
                    out.roc_rows.push((det.clone(), arch.clone(), points));
                }
            }
        }

        // Operating-range cells: detection rate per (config, archetype) at
        // the calibrated thresholds; FP from the archetype's benign traces.
        let mut cells = Vec::new();
        let mut fp_by_arch: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for e in evals.iter().filter(|e| e.benign) {
            if let Some(report) = e.reports.get(det) {
                let s = score_tp_fp(report, &[]);
                let entry = fp_by_arch.entry(e.archetype.clone()).or_default();
                entry.0 += s.flagged_windows;
                entry.1 += s.total_windows;
            }
        }
        for e in evals.iter().filter(|e| !e.benign) {
            let Some(report) = e.reports.get(det) else {
                continue;
            };
            let s = score_tp_fp(report, &e.labels);
            let fp = fp_by_arch
                .get(&e.archetype)
                .map(|(f, t)| if *t > 0 { *f as f64 / *t as f64 } else { 0.0 })
                .unwrap_or(0.0);
            cells.push(OperatingRangeCell {
                config_id: e.config_id.clone().unwrap_or_default(),
                archetype: e.archetype.clone(),
                detection_rate: s.tp_rate.unwrap_or(0.0),
                fp_rate_at_threshold: fp,
            });
        }
        cells.sort_by(|a, b| {
            config_sort_key(grid, &a.config_id)
                .cmp(&config_sort_key(grid, &b.config_id))
                .then_with(|| a.config_id.cmp(&b.config_id))
                .then_with(|| a.archetype.cmp(&b.archetype))
        });
        out.operating_cells.insert(det.clone(), cells);
    }
    out.evals = evals;
    out
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes the report bundle into `out_dir`; byte-deterministic for
/// identical inputs.
pub fn write_reports(
    eval: &SuiteEvaluation,
    grid: &[PayloadConfig],
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut roc = String::from("detector,archetype,fpr,tpr,threshold\n");
    for (det, arch, points) in &eval.roc_rows {
        for (fpr, tpr, thr) in points {
            roc.push_str(&format!(
                "{det},{arch},{},{},{}\n",
                fmt_f64(*fpr),
                fmt_f64(*tpr),
                fmt_f64(*thr)
            ));
        }
    }
    crate::trace::write_atomic(&out_dir.join("roc.csv"), roc.as_bytes())?;

    let mut auc = String::from("detector,archetype,auc\n");
    for (det, arch, v) in &eval.auc_rows {
        auc.push_str(&format!("{det},{arch},{}\n", fmt_f64(*v)));
    }
    crate::trace::write_atomic(&out_dir.join("auc_summary.csv"), auc.as_bytes())?;

    let mut ttd = String::from("detector,archetype,config_id,payload_start_ms,latency_ms\n");
    for (det, arch, cfg, start, latency) in &eval.ttd_rows {
        let lat = latency.map(fmt_f64).unwrap_or_else(|| "undetected".into());
        ttd.push_str(&format!("{det},{arch},{cfg},{},{lat}\n", fmt_f64(*start)));
    }
    crate::trace::write_atomic(&out_dir.join("ttd.csv"), ttd.as_bytes())?;

    // Single operating_range.csv with a detector column; per-detector
    // blocks each have one row per (config, archetype).
    let mut or_csv = String::from("detector,config_id,archetype,detection_rate,fp_rate_at_threshold\n");
    for (det, cells) in &eval.operating_cells {
        for c in cells {
            or_csv.push_str(&format!(
                "{det},{},{},{},{}\n",
                c.config_id,
                c.archetype,
                fmt_f64(c.detection_rate),
                fmt_f64(c.fp_rate_at_threshold)
            ));
        }
    }
    crate::trace::write_atomic(&out_dir.join("operating_range.csv"), or_csv.as_bytes())?;
    if let Some(cells) = eval.operating_cells.values().next() {
        write_operating_range_csv(cells, out_dir.join("operating_range_first_detector.csv"))?;
    }

    // One heatmap per detector, stacked into a single SVG document is not
    // valid SVG; emit heatmap.svg for the bag-of-words detector (the
    // paper-style figure) and heatmap_<detector>.svg for the rest.
    let mut row_order: Vec<String> = grid.iter().map(|c| c.config_id.clone()).collect();
    row_order.sort_by(|a, b| {
        config_sort_key(grid, a)
            .cmp(&config_sort_key(grid, b))
            .then_with(|| a.cmp(b))
    });
    let mut col_order: Vec<String> = eval
        .evals
        .iter()
        .map(|e| e.archetype.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    col_order.sort();
    for (det, cells) in &eval.operating_cells {
        let name = if det == "bow" {
            "heatmap.svg".to_string()
        } else {
            format!("heatmap_{det}.svg")
        };
        write_heatmap_svg(cells, &row_order, &col_order, out_dir.join(name))?;
    }
    Ok(())
}

/// Groups a manifest by archetype: (benign paths, malicious (path, config)).
type GroupedManifest = BTreeMap<String, (Vec<String>, Vec<(String, String)>)>;

pub fn group_manifest(manifest: &SuiteManifest) -> GroupedManifest {
    let mut grouped: GroupedManifest = BTreeMap::new();
    for e in &manifest.entries {
        let slot = grouped.entry(e.app_id.clone()).or_default();
        if e.benign {
            slot.0.push(e.path.clone());
        } else {
            slot.1
                .push((e.path.clone(), e.config_id.clone().unwrap_or_default()));
        }
    }
    grouped
}

/// Trains every archetype of a manifest from its benign traces. The last
/// benign trace per archetype is held out for calibration; with a single
/// benign trace it is reused (degenerate but explicit).
pub fn train_from_manifest(
    suite_dir: &Path,
    manifest: &SuiteManifest,
    cfg: &HarnessConfig,
    seed: u64,
) -> Result<Vec<ArchetypeModels>> {
    let grouped = group_manifest(manifest);
    let mut out = Vec::new();
    for (arch, (benign, _)) in &grouped {
        let traces: Vec<CounterTrace> = benign
            .iter()
            .map(|p| read_trace(suite_dir.join(p)))
            .collect::<Result<_>>()?;
        let (train, valid) = split_train_validation(&traces);
        out.push(train_archetype(
            arch,
            &train,
            &valid,
            cfg,
            derive_seed(seed, "archetype", arch_index(arch)),
        )?);
    }
    Ok(out)
}

fn arch_index(arch: &str) -> u64 {
    crate::rng::derive_seed(0, arch, 0)
}

/// Last benign trace is validation, the rest train; a single trace serves
/// as both.
pub fn split_train_validation(traces: &[CounterTrace]) -> (Vec<CounterTrace>, Vec<CounterTrace>) {
    if traces.len() < 2 {
        return (traces.to_vec(), traces.to_vec());
    }
    let (train, valid) = traces.split_at(traces.len() - 1);
    (train.to_vec(), valid.to_vec())
}

/// Evaluates every trace of a manifest with pre-trained models, in
/// parallel, in manifest order.
pub fn evaluate_manifest(
    suite_dir: &Path,
    manifest: &SuiteManifest,
    models: &[ArchetypeModels],
    with_baseline: bool,
) -> Result<Vec<TraceEval>> {
    let by_arch: BTreeMap<&str, &ArchetypeModels> = models
        .iter()
        .map(|m| (m.archetype.as_str(), m))
        .collect();
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let models = by_arch.get(e.app_id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!("missing model for archetype `{}`", e.app_id))
            })?;
            let trace = read_trace(suite_dir.join(&e.path))?;
            evaluate_trace(
                models,
                &trace,
                &e.path,
                e.config_id.as_deref(),
                with_baseline,
            )
        })
        .collect()
}

/// In-memory variant of [`evaluate_manifest`] for planned (not yet written)
/// suites; used by the acceptance experiments to avoid disk churn.
pub fn evaluate_plans(
    plans: &[PlannedTrace],
    models: &[ArchetypeModels],
    with_baseline: bool,
) -> Result<Vec<TraceEval>> {
    let by_arch: BTreeMap<&str, &ArchetypeModels> = models
        .iter()
        .map(|m| (m.archetype.as_str(), m))
        .collect();
    plans
        .par_iter()
        .map(|p| {
            let models = by_arch.get(p.archetype.app_id.as_str()).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "missing model for archetype `{}`",
                    p.archetype.app_id
                ))
            })?;
            let injected = p.materialize()?;
            evaluate_trace(
                models,
                &injected.trace,
                &p.file_name,
                p.payload.as_ref().map(|c| c.config_id.as_str()),
                with_baseline,
            )
        })
        .collect()
}
