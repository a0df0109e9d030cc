//! k-means state codebooks: clustering, BIC-guided size selection, and
//! nearest-centroid assignment with a reserved unobserved-state symbol.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SegmentFeatureSet;
use crate::preprocess::nearest_rank_percentile;
use crate::rng::rng_from;

/// Centroid codebook mapping feature vectors to discrete states `0..m`;
/// state `m` is reserved for segments too far from every centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub m: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub novelty_threshold: f64,
}

impl Codebook {
    /// Reserved symbol for segments beyond the novelty threshold.
    pub fn unobserved_symbol(&self) -> usize {
        self.m
    }

    /// Number of symbols including the unobserved state.
    pub fn n_symbols(&self) -> usize {
        self.m + 1
    }
}

/// Squared Euclidean distance with early exit once `cutoff` is exceeded.
/// Partial sums are monotone, so pruning never changes the argmin.
#[inline]
fn sq_dist_pruned(a: &[f64], b: &[f64], cutoff: f64) -> f64 {
    let mut acc = 0.0;
    let mut i = 0;
    let n = a.len();
    while i + 8 <= n {
        for j in i..i + 8 {
            let d = a[j] - b[j];
            acc += d * d;
        }
        if acc > cutoff {
            return acc;
        }
        i += 8;
    }
    for j in i..n {
        let d = a[j] - b[j];
        acc += d * d;
    }
    acc
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist_pruned(a, b, f64::INFINITY)
}

/// Nearest centroid by squared distance; ties break to the lowest index.
/// `warm` seeds the pruning bound (it does not bias tie-breaking).
fn nearest_centroid(v: &[f64], centroids: &[Vec<f64>], warm: Option<usize>) -> (usize, f64) {
    let bound = match warm {
        Some(w) if w < centroids.len() => sq_dist(v, &centroids[w]),
        _ => f64::INFINITY,
    };
    let mut best = (usize::MAX, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let cut = bound.min(best.1);
        let d = sq_dist_pruned(v, c, cut);
        // A value above the cutoff may be a pruned partial sum; a value at or
        // below it is the exact distance.
        if d <= cut && d < best.1 {
            best = (j, d);
        }
    }
    // The warm centroid itself is scanned, so `best` is always set.
    best
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct KmeansOptions {
    pub max_iter: usize,
    pub movement_tol: f64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        KmeansOptions {
            max_iter: 300,
            movement_tol: 1e-6,
        }
    }
}

fn kmeans_pp_init(vectors: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(seed, "kmeans++", 0);
    let n = vectors.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(vectors[rng.gen_range(0..n)].clone());
    let mut dist: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total <= 0.0 {
            // All mass on existing centroids; fall back to uniform choice.
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(vectors[next].clone());
        let c = centroids.last().unwrap();
        for (i, v) in vectors.iter().enumerate() {
            let d = sq_dist_pruned(v, c, dist[i]);
            if d < dist[i] {
                dist[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd's algorithm from a seeded k-means++ initialization.
///
/// Stops when the largest centroid movement drops below `movement_tol` or
/// after `max_iter` iterations. Inertia is asserted non-increasing across
/// plain Lloyd iterations (empty-cluster reseeding resets the assertion).
pub fn kmeans_with_options(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    opts: KmeansOptions,
) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if vectors.len() < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} available vectors",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument("ragged feature vectors".into()));
    }

    let mut centroids = kmeans_pp_init(vectors, k, seed);
    let mut assignments = vec![0usize; vectors.len()];
    let mut prev_inertia = f64::INFINITY;
    let mut monotone_valid = false;

    for _ in 0..opts.max_iter {
        // Assignment step; warm-start the pruning bound with the previous label.
        let mut inertia = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let warm = if monotone_valid { Some(assignments[i]) } else { None };
            let (j, d) = nearest_centroid(v, &centroids, warm);
            assignments[i] = j;
            inertia += d;
        }
        if monotone_valid {
            assert!(
                inertia <= prev_inertia + 1e-9 * prev_inertia.abs().max(1.0),
                "k-means inertia increased: {prev_inertia} -> {inertia}"
            );
        }
        prev_inertia = inertia;
        monotone_valid = true;

        // Update step.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (v, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(v) {
                *s += x;
            }
        }
        // Reseed empty clusters to the point farthest from its centroid.
        let mut reseeded = false;
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..vectors.len())
                    .max_by(|&a, &b| {
                        sq_dist(&vectors[a], &centroids[assignments[a]])
                            .total_cmp(&sq_dist(&vectors[b], &centroids[assignments[b]]))
                    })
                    .unwrap();
                sums[j] = vectors[far].clone();
                counts[j] = 1;
                reseeded = true;
            }
        }
        let mut movement: f64 = 0.0;
        for j in 0..k {
            let inv = 1.0 / counts[j] as f64;
            let mut delta = 0.0;
            for (c, s) in centroids[j].iter_mut().zip(&sums[j]) {
                let next = s * inv;
                delta += (next - *c) * (next - *c);
                *c = next;
            }
            movement = movement.max(delta.sqrt());
        }
        if reseeded {
            monotone_valid = false;
        }
        if movement < opts.movement_tol {
            break;
        }
    }

    // Final assignment against the last centroid update.
    let mut inertia = 0.0;
    for (i, v) in vectors.iter().enumerate() {
        let (j, d) = nearest_centroid(v, &centroids, Some(assignments[i]));
        assignments[i] = j;
        inertia += d;
    }

    Ok(KmeansResult {
        centroids,
        assignments,
        inertia,
    })
}

/// k-means with the contract defaults: k-means++ init, movement tolerance
/// 1e-6, 300 iterations max.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KmeansResult> {
    kmeans_with_options(vectors, k, seed, KmeansOptions::default())
}

/// x-means style spherical-Gaussian BIC of a clustering.
///
/// Identical spherical variance across clusters; the free-parameter count is
/// p = m (d + 1), penalized by (p / 2) ln n.
pub fn bic_score(vectors: &[Vec<f64>], result: &KmeansResult) -> f64 {
    let n = vectors.len() as f64;
    let m = result.centroids.len() as f64;
    let d = vectors[0].len() as f64;
    let mut counts = vec![0usize; result.centroids.len()];
    for &a in &result.assignments {
        counts[a] += 1;
    }
    let variance = if n > m {
        (result.inertia / (d * (n - m))).max(1e-12)
    } else {
        1e-12
    };
    let mut ll = 0.0;
    for &c in &counts {
        if c > 0 {
            let cf = c as f64;
            ll += cf * (cf.ln() - n.ln());
        }
    }
    ll += -0.5 * n * d * (2.0 * std::f64::consts::PI * variance).ln() - 0.5 * d * (n - m);
    let params = m * (d + 1.0);
    ll - 0.5 * params * n.ln()
}

const BIC_RESTARTS: u64 = 2;

/// BIC score for every candidate size in `m_range`, in ascending m order.
pub fn bic_scores(
    vectors: &[Vec<f64>],
    m_range: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let (lo, hi) = (*m_range.start(), *m_range.end());
    if lo < 2 || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "invalid BIC range {lo}..={hi}"
        )));
    }
    if vectors.len() < hi {
        return Err(Error::InvalidArgument(format!(
            "BIC range end {hi} exceeds the {} available vectors",
            vectors.len()
        )));
    }
    let mut scores = Vec::with_capacity(hi - lo + 1);
    for m in lo..=hi {
        let mut best: Option<(f64, f64)> = None; // (inertia, bic)
        for r in 0..BIC_RESTARTS {
            let run_seed = crate::rng::derive_seed(seed, "bic-restart", (m as u64) << 8 | r);
            let res = kmeans(vectors, m, run_seed)?;
            let bic = bic_score(vectors, &res);
            if best.map_or(true, |(inertia, _)| res.inertia < inertia) {
                best = Some((res.inertia, bic));
            }
        }
        scores.push((m, best.unwrap().1));
    }
    Ok(scores)
}

/// Returns the codebook size maximizing the BIC score; ties break to the
/// smaller size.
pub fn select_m_bic(
    vectors: &[Vec<f64>],
    m_range: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<usize> {
    let scores = bic_scores(vectors, m_range, seed)?;
    Ok(scores
        .iter()
        .fold((0usize, f64::NEG_INFINITY), |acc, &(m, s)| {
            if s > acc.1 {
                (m, s)
            } else {
                acc
            }
        })
        .0)
}

/// Novelty threshold = this percentile of training nearest-centroid
/// distances, times the margin factor below.
const NOVELTY_PERCENTILE: f64 = 99.0;
const NOVELTY_MARGIN: f64 = 1.5;
const NOVELTY_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct CodebookOptions {
    /// k-means++ restarts, best inertia kept.
    pub restarts: u64,
    pub kmeans: KmeansOptions,
}

impl Default for CodebookOptions {
    fn default() -> Self {
        CodebookOptions {
            restarts: 10,
            kmeans: KmeansOptions::default(),
        }
    }
}

/// Builds a codebook from benign training features with explicit options.
pub fn build_codebook_with(
    features: &SegmentFeatureSet,
    m: usize,
    seed: u64,
    opts: CodebookOptions,
) -> Result<Codebook> {
    if features.len() < m {
        return Err(Error::InvalidArgument(format!(
            "{} feature vectors cannot support a codebook of {m}",
            features.len()
        )));
    }
    let mut best: Option<KmeansResult> = None;
    for r in 0..opts.restarts.max(1) {
        let run_seed = crate::rng::derive_seed(seed, "codebook-restart", r);
        let res = kmeans_with_options(&features.vectors, m, run_seed, opts.kmeans)?;
        if best.as_ref().map_or(true, |b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    let mut centroids = best.unwrap().centroids;
    // Canonical order so equal models serialize identically.
    centroids.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .find_map(|(x, y)| {
                let c = x.total_cmp(y);
                (c != std::cmp::Ordering::Equal).then_some(c)
            })
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let dists: Vec<f64> = features
        .vectors
        .iter()
        .map(|v| nearest_centroid(v, &centroids, None).1.sqrt())
        .collect();
    let threshold =
        (nearest_rank_percentile(&dists, NOVELTY_PERCENTILE) * NOVELTY_MARGIN).max(NOVELTY_FLOOR);

    Ok(Codebook {
        m,
        dim: features.dim(),
        centroids,
        novelty_threshold: threshold,
    })
}

/// Builds a codebook with the default 10-restart policy.
pub fn build_codebook(features: &SegmentFeatureSet, m: usize, seed: u64) -> Result<Codebook> {
    build_codebook_with(features, m, seed, CodebookOptions::default())
}

/// Maps each feature vector to its nearest centroid, or to the reserved
/// unobserved symbol when the distance exceeds the novelty threshold.
pub fn assign_states(cb: &Codebook, features: &SegmentFeatureSet) -> Result<Vec<usize>> {
    assign_vectors(cb, &features.vectors)
}

/// Same as [`assign_states`] for a bare vector slice.
pub fn assign_vectors(cb: &Codebook, vectors: &[Vec<f64>]) -> Result<Vec<usize>> {
    let threshold_sq = cb.novelty_threshold * cb.novelty_threshold;
    let mut out = Vec::with_capacity(vectors.len());
    let mut warm = None;
    for v in vectors {
        if v.len() != cb.dim {
            return Err(Error::DimensionMismatch {
                expected: cb.dim,
                got: v.len(),
            });
        }
        let (j, d) = nearest_centroid(v, &cb.centroids, warm);
        warm = Some(j);
        out.push(if d > threshold_sq { cb.m } else { j });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn feature_set(vectors: Vec<Vec<f64>>) -> SegmentFeatureSet {
        let starts = (0..vectors.len()).map(|i| i as f64 * 50.0).collect();
        SegmentFeatureSet {
            config: FeatureConfig::default(),
            starts_ms: starts,
            vectors,
        }
    }

    #[test]
    fn k_points_k_clusters_zero_inertia() {
        let vectors = vec![vec![0.0, 0.0], vec![5.0, 1.0], vec![-3.0, 2.0]];
        let res = kmeans(&vectors, 3, 1).unwrap();
        assert!(res.inertia <= 1e-12, "inertia = {}", res.inertia);
        let mut sorted = res.centroids.clone();
        sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(sorted, vec![vec![-3.0, 2.0], vec![0.0, 0.0], vec![5.0, 1.0]]);
    }

    #[test]
    fn symmetric_split_finds_both_modes() {
        let vectors = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        let res = kmeans(&vectors, 2, 7).unwrap();
        let mut cs: Vec<f64> = res.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(cs, vec![0.0, 10.0]);
        assert!(res.inertia <= 1e-12);
    }

    #[test]
    fn matches_exhaustive_contiguous_partition_oracle_in_1d() {
        let mut rng = crate::rng::rng_from(21, "kmeans-1d", 0);
        for case in 0..10u64 {
            let mut points: Vec<f64> = (0..8).map(|_| rng.gen_range(-10.0..10.0)).collect();
            points.sort_by(|a, b| a.total_cmp(b));
            // Optimal 2-means in 1D is a contiguous split of the sorted data.
            let mut best = f64::INFINITY;
            for split in 1..points.len() {
                let (l, r) = points.split_at(split);
                let cost = |xs: &[f64]| {
                    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                };
                best = best.min(cost(l) + cost(r));
            }
            let vectors: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
            let mut matched = false;
            for restart in 0..20u64 {
                let res = kmeans(&vectors, 2, case * 100 + restart).unwrap();
                if res.inertia <= best + 1e-9 {
                    matched = true;
                    break;
                }
            }
            assert!(matched, "no restart reached the optimum {best}");
        }
    }

    fn blobs(centers: &[(f64, f64)], per: usize, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::rng_from(seed, "blobs", 0);
        let mut out = Vec::new();
        for &(cx, cy) in centers {
            for _ in 0..per {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                out.push(vec![cx + sigma * dx, cy + sigma * dy]);
            }
        }
        out
    }

    #[test]
    fn bic_selects_three_well_separated_blobs() {
        let vectors = blobs(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)], 50, 0.3, 9);
        let m = select_m_bic(&vectors, 2..=8, 3).unwrap();
        assert_eq!(m, 3);
        // Exhaustive oracle: the reported winner is the argmax of the scores.
        let scores = bic_scores(&vectors, 2..=8, 3).unwrap();
        let argmax = scores
            .iter()
            .fold((0usize, f64::NEG_INFINITY), |acc, &(m, s)| {
                if s > acc.1 {
                    (m, s)
                } else {
                    acc
                }
            })
            .0;
        assert_eq!(m, argmax);
    }

    #[test]
    fn bic_on_single_blob_returns_argmax_and_stays_in_range() {
        let vectors = blobs(&[(1.0, 1.0)], 120, 0.2, 10);
        let range = 2..=6;
        let m = select_m_bic(&vectors, range.clone(), 4).unwrap();
        assert!(range.contains(&m));
        let scores = bic_scores(&vectors, range, 4).unwrap();
        let argmax = scores
            .iter()
            .fold((0usize, f64::NEG_INFINITY), |acc, &(m, s)| {
                if s > acc.1 {
                    (m, s)
                } else {
                    acc
                }
            })
            .0;
        assert_eq!(m, argmax);
    }

    #[test]
    fn single_centroid_constant_features() {
        let set = feature_set(vec![vec![2.0, 3.0]; 40]);
        let cb = build_codebook(&set, 1, 5).unwrap();
        assert_eq!(cb.centroids, vec![vec![2.0, 3.0]]);
        assert!(cb.novelty_threshold > 0.0);
        let states = assign_states(&cb, &set).unwrap();
        assert!(states.iter().all(|&s| s == 0));
    }

    #[test]
    fn training_vectors_never_map_to_unobserved() {
        let vectors = blobs(&[(0.0, 0.0), (6.0, 6.0)], 80, 0.5, 11);
        let set = feature_set(vectors);
        let cb = build_codebook(&set, 4, 6).unwrap();
        let states = assign_states(&cb, &set).unwrap();
        assert!(states.iter().all(|&s| s < cb.unobserved_symbol()));
    }

    #[test]
    fn distant_vector_maps_to_unobserved_symbol() {
        let set = feature_set(blobs(&[(0.0, 0.0)], 60, 0.3, 12));
        let cb = build_codebook(&set, 2, 6).unwrap();
        let far = vec![vec![1e6, -1e6]];
        let states = assign_vectors(&cb, &far).unwrap();
        assert_eq!(states[0], cb.unobserved_symbol());
    }

    #[test]
    fn vector_equal_to_centroid_gets_its_index() {
        let set = feature_set(blobs(&[(0.0, 0.0), (4.0, 0.0), (8.0, 0.0), (12.0, 0.0)], 30, 0.2, 13));
        let cb = build_codebook(&set, 4, 7).unwrap();
        let probes: Vec<Vec<f64>> = cb.centroids.clone();
        let states = assign_vectors(&cb, &probes).unwrap();
        assert_eq!(states, vec![0, 1, 2, 3]);
    }

    #[test]
    fn assignment_matches_linear_scan_oracle() {
        let mut rng = crate::rng::rng_from(22, "assign", 0);
        let set = feature_set(blobs(&[(0.0, 0.0), (5.0, 2.0), (-4.0, 7.0)], 40, 1.0, 14));
        let cb = build_codebook(&set, 5, 8).unwrap();
        let probes: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)])
            .collect();
        let states = assign_vectors(&cb, &probes).unwrap();
        for (v, &s) in probes.iter().zip(&states) {
            let mut best = (usize::MAX, f64::INFINITY);
            for (j, c) in cb.centroids.iter().enumerate() {
                let d: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            let expect = if best.1.sqrt() > cb.novelty_threshold {
                cb.unobserved_symbol()
            } else {
                best.0
            };
            assert_eq!(s, expect);
        }
    }

    #[test]
    fn assignment_is_idempotent_and_order_independent() {
        let set = feature_set(blobs(&[(0.0, 0.0), (9.0, 9.0)], 50, 0.8, 15));
        let cb = build_codebook(&set, 3, 9).unwrap();
        let a = assign_states(&cb, &set).unwrap();
        let b = assign_states(&cb, &set).unwrap();
        assert_eq!(a, b);
        // Reversed order assigns each vector identically.
        let reversed: Vec<Vec<f64>> = set.vectors.iter().rev().cloned().collect();
        let r = assign_vectors(&cb, &reversed).unwrap();
        let mut r_back: Vec<usize> = r;
        r_back.reverse();
        assert_eq!(a, r_back);
    }

    #[test]
    fn build_is_deterministic_for_fixed_seed() {
        let set = feature_set(blobs(&[(0.0, 0.0), (5.0, 5.0)], 60, 0.6, 16));
        let a = build_codebook(&set, 4, 10).unwrap();
        let b = build_codebook(&set, 4, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let vectors = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&vectors, 0, 1).is_err());
        assert!(kmeans(&vectors, 3, 1).is_err());
    }
}
