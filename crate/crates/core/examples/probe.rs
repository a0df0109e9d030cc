//! Dev probe: per-config detection rates and stage timings on a reduced
//! suite. Run with --release.

use std::time::Instant;

use hmdbench_core::eval::{score_tp_fp, spearman};
use hmdbench_core::harness::*;
use hmdbench_core::synth::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let len_ms: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(120_000.0);
    let bow_m: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(256);
    let n_arch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1);

    let cfg = HarnessConfig {
        markov_states: StateSelection::Fixed(16),
        bow: hmdbench_core::bow::BowConfig {
            m: bow_m,
            ..Default::default()
        },
        ..HarnessConfig::default()
    };
    let spec = SuiteSpec {
        archetypes: standard_archetypes()
            .iter()
            .take(n_arch)
            .map(|a| a.app_id.clone())
            .collect(),
        trace_len_ms: len_ms,
        traces_per_cell: 3,
        seed,
        ..SuiteSpec::default()
    };

    let t0 = Instant::now();
    let plans = plan_suite(&spec).unwrap();
    let mut models = Vec::new();
    for arch_id in &spec.archetypes {
        let benign: Vec<_> = plans
            .iter()
            .filter(|p| p.benign && &p.archetype.app_id == arch_id)
            .map(|p| p.materialize().unwrap().trace)
            .collect();
        let (train, valid) = split_train_validation(&benign);
        let t = Instant::now();
        models.push(train_archetype(arch_id, &train, &valid, &cfg, seed).unwrap());
        eprintln!("train {arch_id}: {:.1}s", t.elapsed().as_secs_f64());
    }
    eprintln!("total train: {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let mal_plans: Vec<_> = plans.iter().filter(|p| !p.benign).cloned().collect();
    let evals = evaluate_plans(&mal_plans, &models, true).unwrap();
    eprintln!(
        "evaluate {} traces: {:.1}s",
        mal_plans.len(),
        t1.elapsed().as_secs_f64()
    );

    // Detection rate per config pooled over archetypes.
    let grid = spec.grid();
    println!("config_id,markov_rate,bow_rate,baseline_rate,payload_windows");
    let mut per_kind: std::collections::BTreeMap<String, Vec<(usize, f64, f64)>> =
        Default::default();
    for gc in &grid {
        let mut rates = vec![];
        for det in ["markov", "bow", "baseline"] {
            let mut hit = 0usize;
            let mut total = 0usize;
            for e in evals.iter().filter(|e| e.config_id.as_deref() == Some(&gc.config_id)) {
                let s = score_tp_fp(&e.reports[det], &e.labels);
                hit += s.flagged_payload_windows;
                total += s.payload_windows;
            }
            rates.push((hit, total));
        }
        let pw = rates[0].1;
        let r: Vec<f64> = rates
            .iter()
            .map(|(h, t)| if *t > 0 { *h as f64 / *t as f64 } else { f64::NAN })
            .collect();
        println!("{},{:.3},{:.3},{:.3},{}", gc.config_id, r[0], r[1], r[2], pw);
        per_kind
            .entry(format!("{}-{}", gc.payload_kind, gc.delay_class.letter()))
            .or_default()
            .push((gc.size_level, r[0], r[1]));
    }
    println!("\nkind-delay,spearman_markov,spearman_bow");
    for (kd, mut rows) in per_kind {
        rows.sort_by_key(|r| r.0);
        if rows.len() < 3 {
            continue;
        }
        let sizes: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
        let mk: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let bw: Vec<f64> = rows.iter().map(|r| r.2).collect();
        println!(
            "{kd},{:?},{:?}",
            spearman(&sizes, &mk),
            spearman(&sizes, &bw)
        );
    }

    // Benign FP rates on validation.
    for m in &models {
        let arch = &m.archetype;
        let valid_plan = plans
            .iter()
            .filter(|p| p.benign && &p.archetype.app_id == arch)
            .next_back()
            .unwrap();
        let trace = valid_plan.materialize().unwrap().trace;
        let e = evaluate_trace(m, &trace, "v", None, true).unwrap();
        for det in ["markov", "bow", "baseline"] {
            let s = score_tp_fp(&e.reports[det], &[]);
            eprintln!("{arch} {det} benign fp = {:?}", s.fp_rate);
        }
    }
    eprintln!("grand total: {:.1}s", t0.elapsed().as_secs_f64());
}
