//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Args;

use hmdbench_core::codebook::assign_states;
use hmdbench_core::eval::OperatingRangeCell;
use hmdbench_core::harness::{
    self, aggregate, config_sort_key, evaluate_manifest, group_manifest, rf_cross_validate,
    split_train_validation, train_archetype, ArchetypeModels, WindowPool,
};
use hmdbench_core::model_io::{read_model, write_model, ModelFile, RfBundle};
use hmdbench_core::pipeline::fit_pipeline;
use hmdbench_core::synth::{gen_suite, SuiteManifest, SuiteSpec};
use hmdbench_core::trace::read_trace;

use crate::config::ExperimentConfig;

#[derive(Args)]
pub struct SynthArgs {
    /// Experiment config JSON (suite section).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the trace files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the suite trace length in milliseconds.
    #[arg(long)]
    pub trace_len_ms: Option<f64>,
    /// Override the number of benign traces per archetype.
    #[arg(long)]
    pub traces_per_cell: Option<usize>,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let mut spec: SuiteSpec = cfg.suite.clone();
    spec.seed = cfg.resolve_seed(args.seed);
    if let Some(len) = args.trace_len_ms {
        spec.trace_len_ms = len;
    }
    if let Some(t) = args.traces_per_cell {
        spec.traces_per_cell = t;
    }
    let manifest = gen_suite(&spec, &args.out)?;
    let benign = manifest.entries.iter().filter(|e| e.benign).count();
    let malicious = manifest.entries.len() - benign;
    println!(
        "wrote {} traces ({benign} benign, {malicious} malicious) and manifest.json to {}",
        manifest.entries.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Detector to train: markov, bow, baseline, or rf.
    #[arg(long)]
    pub detector: String,
    /// Path to a suite manifest.json.
    #[arg(long)]
    pub manifest: PathBuf,
    /// App archetype to train on (e.g. compute_intensive).
    #[arg(long)]
    pub archetype: String,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn load_archetype_traces(
    manifest: &SuiteManifest,
    suite_dir: &Path,
    archetype: &str,
) -> Result<(Vec<hmdbench_core::CounterTrace>, Vec<(hmdbench_core::CounterTrace, String)>)> {
    let grouped = group_manifest(manifest);
    let Some((benign, malicious)) = grouped.get(archetype) else {
        bail!("archetype `{archetype}` absent from the manifest");
    };
    let benign_traces = benign
        .iter()
        .map(|p| read_trace(suite_dir.join(p)))
        .collect::<hmdbench_core::Result<Vec<_>>>()?;
    let malicious_traces = malicious
        .iter()
        .map(|(p, cfg)| Ok((read_trace(suite_dir.join(p))?, cfg.clone())))
        .collect::<hmdbench_core::Result<Vec<_>>>()?;
    Ok((benign_traces, malicious_traces))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let seed = cfg.resolve_seed(args.seed);
    let manifest = SuiteManifest::read(&args.manifest)?;
    let suite_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let (benign, malicious) = load_archetype_traces(&manifest, &suite_dir, &args.archetype)?;
    if benign.is_empty() {
        bail!("archetype `{}` has no benign traces", args.archetype);
    }
    let (train_traces, valid_traces) = split_train_validation(&benign);
    let models = train_archetype(
        &args.archetype,
        &train_traces,
        &valid_traces,
        &cfg.detectors,
        seed,
    )?;

    let model = match args.detector.as_str() {
        "markov" => {
            println!(
                "markov: {} states, threshold {:.3}",
                models.markov.model.codebook.m, models.markov.model.threshold
            );
            ModelFile::Markov(models.markov)
        }
        "bow" => {
            println!(
                "bow: {} codewords, {} support vectors",
                models.bow.model.codebook.m,
                models.bow.model.ocsvm.support_vectors.len()
            );
            ModelFile::Bow(models.bow)
        }
        "baseline" => ModelFile::Baseline(models.baseline),
        "rf" => {
            // The forest consumes bag-of-words histograms, so it rides on
            // the bow codebook; malicious traces supply the positive class.
            if malicious.is_empty() {
                bail!("rf training needs malicious traces in the manifest");
            }
            let mut pool = WindowPool::default();
            for t in &benign {
                pool.add_trace(&models.bow.model, &models.bow.pipeline, t, &args.archetype)?;
            }
            for (t, _) in &malicious {
                pool.add_trace(&models.bow.model, &models.bow.pipeline, t, &args.archetype)?;
            }
            let behaviors: Vec<_> = hmdbench_core::PayloadKind::ALL
                .iter()
                .copied()
                .filter(|k| pool.set.behavior.iter().any(|b| b == &Some(*k)))
                .collect();
            let benign_rows = pool.set.labels.iter().filter(|&&l| !l).count();
            let min_behavior = behaviors
                .iter()
                .map(|k| pool.set.behavior.iter().filter(|b| **b == Some(*k)).count())
                .min()
                .unwrap_or(0);
            let half = benign_rows.min(min_behavior * behaviors.len()).min(400);
            if half < behaviors.len() {
                bail!("not enough labeled windows to balance the training set");
            }
            let balanced = hmdbench_core::supervised::build_balanced_set(
                &pool.set, &behaviors, 2 * half, seed,
            )?;
            let rf = hmdbench_core::supervised::train_rf(&balanced, &cfg.detectors.rf, seed)?;
            // Flag threshold: benign-score quantile at the FP target.
            let mut benign_scores: Vec<f64> = Vec::new();
            let scores = hmdbench_core::supervised::score_rf(&rf, &pool.set.vectors)?;
            for (s, &l) in scores.iter().zip(&pool.set.labels) {
                if !l {
                    benign_scores.push(*s);
                }
            }
            benign_scores.sort_by(|a, b| a.total_cmp(b));
            let idx = (((1.0 - cfg.detectors.fp_target) * benign_scores.len() as f64) as usize)
                .min(benign_scores.len() - 1);
            let threshold = benign_scores[idx];
            ModelFile::Rf(RfBundle {
                pipeline: models.bow.pipeline,
                codebook: models.bow.model.codebook,
                ttd_ms: models.bow.model.ttd_ms,
                model: rf,
                threshold,
            })
        }
        other => bail!("unknown detector `{other}` (markov|bow|baseline|rf)"),
    };
    write_model(&model, &args.out)?;
    println!(
        "wrote {} model ({} bytes) to {}",
        model.kind(),
        hmdbench_core::eval::model_size(&args.out)?,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
    /// Detection report JSON output path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn detect_exit(args: DetectArgs) -> ExitCode {
    match detect(args) {
        Ok(true) => ExitCode::from(2),
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn detect(args: DetectArgs) -> Result<bool> {
    let model = read_model(&args.model)?;
    let trace = read_trace(&args.trace)?;
    let id = args.trace.display().to_string();
    let report = match &model {
        ModelFile::Markov(b) => harness::run_markov(b, &trace, &id)?,
        ModelFile::Bow(b) => hmdbench_core::bow::detect_bow(&b.model, &trace, &b.pipeline, &id)?,
        ModelFile::Baseline(b) => {
            hmdbench_core::baseline::detect_baseline(&b.model, &trace, &id)?
        }
        ModelFile::Rf(b) => {
            let set = b.pipeline.apply(&trace)?;
            let states = assign_states(&b.codebook, &set)?;
            let hists = hmdbench_core::bow::histogram(
                &states,
                &set.starts_ms,
                b.ttd_ms,
                b.codebook.n_symbols(),
            )?;
            let vectors: Vec<Vec<f64>> = hists.iter().map(|(_, h)| h.clone()).collect();
            let scores = hmdbench_core::supervised::score_rf(&b.model, &vectors)?;
            hmdbench_core::DetectionReport {
                trace_id: id.clone(),
                model_id: "rf".into(),
                window_starts_ms: hists.iter().map(|(s, _)| *s).collect(),
                window_len_ms: b.ttd_ms,
                flagged: scores.iter().map(|&s| s > b.threshold).collect(),
                scores,
                higher_is_anomalous: true,
                evidence_windows: 1,
                insufficient_data: false,
            }
        }
    };
    let alarms = report.flagged.iter().filter(|&&f| f).count();
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&args.out, json)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "{}: {} windows, {alarms} alarms ({})",
        args.trace.display(),
        report.n_windows(),
        model.kind()
    );
    Ok(alarms > 0)
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<detector>.<archetype>.model` files.
    #[arg(long)]
    pub models_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// False-positive target used to recalibrate all thresholds.
    #[arg(long)]
    pub fp_target: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(args.config.as_deref())?;
    let seed = cfg.resolve_seed(args.seed);
    let fp_target = args.fp_target.unwrap_or(cfg.detectors.fp_target);
    let manifest = SuiteManifest::read(&args.manifest)?;
    let suite_dir = args
        .manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let grouped = group_manifest(&manifest);

    // Load the per-archetype models and recalibrate their thresholds on the
    // held-out benign trace at the requested FP target.
    let mut models: Vec<ArchetypeModels> = Vec::new();
    for arch in grouped.keys() {
        let load = |det: &str| -> Result<ModelFile> {
            let path = args.models_dir.join(format!("{det}.{arch}.model"));
            read_model(&path).with_context(|| format!("missing model {}", path.display()))
        };
        let ModelFile::Markov(mut markov) = load("markov")? else {
            bail!("markov.{arch}.model is not a markov model");
        };
        let ModelFile::Bow(mut bow) = load("bow")? else {
            bail!("bow.{arch}.model is not a bow model");
        };
        let ModelFile::Baseline(mut baseline) = load("baseline")? else {
            bail!("baseline.{arch}.model is not a baseline model");
        };

        let (benign, _) = &grouped[arch];
        let traces = benign
            .iter()
            .map(|p| read_trace(suite_dir.join(p)))
            .collect::<hmdbench_core::Result<Vec<_>>>()?;
        let (_, valid) = split_train_validation(&traces);
        let valid_seqs = valid
            .iter()
            .map(|t| {
                let set = markov.pipeline.apply(t)?;
                assign_states(&markov.model.codebook, &set)
            })
            .collect::<hmdbench_core::Result<Vec<_>>>()?;
        markov.model.threshold =
            hmdbench_core::markov::calibrate_threshold(&markov.model, &valid_seqs, fp_target)?;

        let mut bow_scores = Vec::new();
        for t in &valid {
            let r = hmdbench_core::bow::detect_bow(&bow.model, t, &bow.pipeline, "valid")?;
            bow_scores.extend(r.scores);
        }
        bow_scores.sort_by(|a, b| a.total_cmp(b));
        if !bow_scores.is_empty() {
            let idx = ((fp_target * bow_scores.len() as f64).floor() as usize)
                .min(bow_scores.len() - 1);
            bow.model.decision_threshold = bow_scores[idx].min(0.0);
        }

        let mut base_scores = Vec::new();
        for t in &valid {
            let r = hmdbench_core::baseline::detect_baseline(&baseline.model, t, "valid")?;
            base_scores.extend(r.scores);
        }
        base_scores.sort_by(|a, b| a.total_cmp(b));
        if !base_scores.is_empty() {
            let idx = ((fp_target * base_scores.len() as f64).floor() as usize)
                .min(base_scores.len() - 1);
            baseline.model.decision_threshold = base_scores[idx].min(0.0);
        }

        models.push(ArchetypeModels {
            archetype: arch.clone(),
            markov,
            bow,
            baseline,
        });
    }

    let evals = evaluate_manifest(&suite_dir, &manifest, &models, true)?;
    let grid = cfg.suite.grid();
    let mut evaluation = aggregate(evals, &grid);

    // Random forest: 10-fold cross-validation at trace granularity, one
    // pool per archetype, scored out of fold.
    for m in &models {
        let (benign, malicious) = &grouped[&m.archetype];
        let mut pool = WindowPool::default();
        let mut trace_config: Vec<Option<String>> = Vec::new();
        for p in benign {
            let t = read_trace(suite_dir.join(p))?;
            pool.add_trace(&m.bow.model, &m.bow.pipeline, &t, &m.archetype)?;
            trace_config.push(None);
        }
        for (p, cid) in malicious {
            let t = read_trace(suite_dir.join(p))?;
            pool.add_trace(&m.bow.model, &m.bow.pipeline, &t, &m.archetype)?;
            trace_config.push(Some(cid.clone()));
        }
        let folds = cfg.detectors.kfold;
        match rf_cross_validate(&pool, &cfg.detectors.rf, folds, seed) {
            Ok(outcome) => {
                evaluation
                    .auc_rows
                    .push(("rf".into(), m.archetype.clone(), outcome.auc));
                // Operating-range cells from out-of-fold scores at the
                // benign-quantile threshold.
                let mut benign_oof: Vec<f64> = Vec::new();
                for (row, s) in outcome.oof_scores.iter().enumerate() {
                    if let Some(s) = s {
                        if !pool.set.labels[row] {
                            benign_oof.push(*s);
                        }
                    }
                }
                benign_oof.sort_by(|a, b| a.total_cmp(b));
                if benign_oof.is_empty() {
                    continue;
                }
                let idx = (((1.0 - fp_target) * benign_oof.len() as f64) as usize)
                    .min(benign_oof.len() - 1);
                let threshold = benign_oof[idx];
                let fp = benign_oof.iter().filter(|&&s| s > threshold).count() as f64
                    / benign_oof.len() as f64;
                let mut by_config: BTreeMap<String, (usize, usize)> = BTreeMap::new();
                for (row, s) in outcome.oof_scores.iter().enumerate() {
                    let Some(s) = s else { continue };
                    if !pool.set.labels[row] {
                        continue;
                    }
                    let Some(cid) = &trace_config[pool.trace_of_row[row]] else {
                        continue;
                    };
                    let e = by_config.entry(cid.clone()).or_default();
                    e.1 += 1;
                    if *s > threshold {
                        e.0 += 1;
                    }
                }
                let mut cells: Vec<OperatingRangeCell> = by_config
                    .into_iter()
                    .map(|(cid, (hit, total))| OperatingRangeCell {
                        config_id: cid,
                        archetype: m.archetype.clone(),
                        detection_rate: hit as f64 / total.max(1) as f64,
                        fp_rate_at_threshold: fp,
                    })
                    .collect();
                cells.sort_by(|a, b| {
                    config_sort_key(&grid, &a.config_id)
                        .cmp(&config_sort_key(&grid, &b.config_id))
                        .then_with(|| a.config_id.cmp(&b.config_id))
                });
                evaluation
                    .operating_cells
                    .entry("rf".into())
                    .or_default()
                    .extend(cells);
            }
            Err(e) => eprintln!("rf cross-validation skipped for {}: {e}", m.archetype),
        }
    }
    evaluation.auc_rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    harness::write_reports(&evaluation, &grid, &args.out_dir)?;
    println!("reports written to {}", args.out_dir.display());
    for (det, arch, auc) in &evaluation.auc_rows {
        println!("auc {det:9} {arch:22} {auc:.4}");
    }
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory produced by `evaluate`.
    #[arg(long)]
    pub eval_dir: PathBuf,
    /// Optionally recompute the PCA diversity projection of benign feature
    /// vectors from a suite manifest into pca.csv.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn report(args: ReportArgs) -> Result<()> {
    let summary = args.eval_dir.join("auc_summary.csv");
    if summary.exists() {
        print!("{}", std::fs::read_to_string(&summary)?);
    }
    let or_csv = args.eval_dir.join("operating_range.csv");
    if or_csv.exists() {
        let text = std::fs::read_to_string(&or_csv)?;
        let mut per_detector: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() >= 4 {
                if let Ok(rate) = f[3].parse::<f64>() {
                    let e = per_detector.entry(f[0].to_string()).or_default();
                    e.0 += rate;
                    e.1 += 1;
                }
            }
        }
        for (det, (sum, n)) in per_detector {
            println!("mean detection rate {det}: {:.3}", sum / n.max(1) as f64);
        }
    }

    if let Some(manifest_path) = &args.manifest {
        let cfg = ExperimentConfig::load(args.config.as_deref())?;
        let manifest = SuiteManifest::read(manifest_path)?;
        let suite_dir = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let grouped = group_manifest(&manifest);
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        let mut tags: Vec<String> = Vec::new();
        for (arch, (benign, _)) in &grouped {
            let Some(first) = benign.first() else { continue };
            let trace = read_trace(suite_dir.join(first))?;
            let (_, sets) = fit_pipeline(
                std::slice::from_ref(&trace),
                cfg.detectors.preprocess.clone(),
                cfg.detectors.features.clone(),
            )?;
            for (i, v) in sets[0].vectors.iter().enumerate() {
                if i % 10 == 0 {
                    vectors.push(v.clone());
                    tags.push(arch.clone());
                }
            }
        }
        if vectors.len() > 2 {
            let pca = hmdbench_core::eval::pca_project(&vectors, 2)?;
            let mut out = String::from("archetype,pc1,pc2\n");
            for (tag, p) in tags.iter().zip(&pca.projections) {
                out.push_str(&format!("{tag},{},{}\n", p[0], p[1]));
            }
            std::fs::write(args.eval_dir.join("pca.csv"), out)?;
            println!(
                "pca.csv written; top-2 components explain {:.2}% of variance",
                100.0 * pca.explained_fraction
            );
        }
    }
    Ok(())
}
