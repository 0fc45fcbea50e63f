//! Benchmark plumbing: synthetic data, exact ground truth, recall, timed
//! sweeps and Monte Carlo checks of the routing statistics.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::{BuildParams, PagIndex};
use crate::error::{Error, Result};
use crate::projection::{ReferenceSet, DEFAULT_REFS_PER_SUBSPACE};
use crate::routing::{
    pes_margin, pes_threshold, prt_test, Candidate, Neighbor, SearchParams, SearchScratch,
};
use crate::vecstore::{dot, sq_dist, VectorSet};

/// Number of centers in the clustered distribution.
pub const CLUSTERS: usize = 50;
/// Within-cluster spread relative to the spread of the centers.
pub const CLUSTER_SPREAD: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Gaussian,
    Clustered,
}

impl std::str::FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Distribution::Gaussian),
            "clustered" => Ok(Distribution::Clustered),
            other => Err(Error::param(format!("unknown distribution {other:?}"))),
        }
    }
}

/// `n` row-major vectors of dimension `d`.
pub fn gen_synthetic(dist: Distribution, n: usize, d: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f32 { StandardNormal.sample(&mut rng) };
    match dist {
        Distribution::Gaussian => (0..n * d).map(|_| normal()).collect(),
        Distribution::Clustered => {
            let centers: Vec<f32> = (0..CLUSTERS * d).map(|_| normal()).collect();
            let mut out = Vec::with_capacity(n * d);
            for i in 0..n {
                let c = &centers[(i % CLUSTERS) * d..(i % CLUSTERS + 1) * d];
                out.extend(c.iter().map(|x| x + CLUSTER_SPREAD * normal()));
            }
            out
        }
    }
}

/// Cluster label of row `i` produced by [`gen_synthetic`] with the clustered distribution.
pub fn cluster_of(i: usize) -> usize {
    i % CLUSTERS
}

/// Exact nearest neighbors of every query, rows sorted by (distance, id).
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub ids: Vec<Vec<u32>>,
    /// Euclidean distances matching `ids`.
    pub distances: Vec<Vec<f32>>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Entries per row.
    pub fn depth(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }
}

fn truth_row(base: &VectorSet, query: &[f32], k: usize) -> Vec<Candidate> {
    let mut all: Vec<Candidate> = base
        .iter()
        .enumerate()
        .map(|(i, row)| Candidate {
            dist: sq_dist(query, &row[..query.len().min(row.len())]),
            id: i as u32,
        })
        .collect();
    if k < all.len() {
        all.select_nth_unstable(k);
        all.truncate(k);
    }
    all.sort();
    all
}

/// Exhaustive top-`k_star` for each query; `k_star` is clamped to `n`.
///
/// `queries` must share the base set's dimension and metric. The scan uses
/// all rayon threads; results do not depend on the thread count.
pub fn ground_truth(base: &VectorSet, queries: &VectorSet, k_star: usize) -> Result<GroundTruth> {
    if base.dim() != queries.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            got: queries.dim(),
        });
    }
    let k = k_star.min(base.len());
    let rows: Vec<Vec<Candidate>> = (0..queries.len() as u32)
        .into_par_iter()
        .map(|q| {
            let query = base.prepare(&queries.row(q)[..queries.dim()]).expect("valid query");
            truth_row(base, &query, k)
        })
        .collect();
    Ok(GroundTruth {
        ids: rows.iter().map(|r| r.iter().map(|c| c.id).collect()).collect(),
        distances: rows
            .iter()
            .map(|r| r.iter().map(|c| c.dist.sqrt()).collect())
            .collect(),
    })
}

/// `|result[..k] ∩ truth[..k]| / k`.
pub fn recall_at_k(result: &[u32], truth: &[u32], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let truth: HashSet<u32> = truth.iter().take(k).copied().collect();
    let mut seen = HashSet::new();
    let hits = result
        .iter()
        .take(k)
        .filter(|id| truth.contains(id) && seen.insert(**id))
        .count();
    hits as f64 / k as f64
}

/// Like [`recall_at_k`], but a result whose distance ties the `k`-th true
/// distance also counts as correct.
pub fn recall_with_ties(result: &[Neighbor], truth_ids: &[u32], truth_dists: &[f32], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let k_truth = k.min(truth_ids.len());
    if k_truth == 0 {
        return 0.0;
    }
    let kth = truth_dists[k_truth - 1];
    let truth: HashSet<u32> = truth_ids[..k_truth].iter().copied().collect();
    let mut seen = HashSet::new();
    let hits = result
        .iter()
        .take(k)
        .filter(|r| (truth.contains(&r.id) || r.distance <= kth) && seen.insert(r.id))
        .count();
    hits as f64 / k_truth.min(k) as f64
}

/// One measured operating point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub ef_search: usize,
    pub k: usize,
    pub recall: f64,
    pub qps: f64,
    pub mean_exact_dist: f64,
    pub mean_gamma: f64,
    pub build_secs: f64,
    pub adjacency_bytes: usize,
    pub prt: bool,
    pub tfb: bool,
    pub pes: bool,
    pub tie_policy: &'static str,
}

/// Search-side settings of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub ef_search: Vec<usize>,
    pub ks: Vec<usize>,
    pub prt: bool,
    pub tfb: bool,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ef_search.is_empty() || self.ks.is_empty() {
            return Err(Error::param("efS and K lists must be nonempty"));
        }
        for &k in &self.ks {
            if k == 0 {
                return Err(Error::param("K must be positive"));
            }
            for &ef in &self.ef_search {
                if k > ef {
                    return Err(Error::param(format!("K={k} exceeds efS={ef}")));
                }
            }
        }
        Ok(())
    }

    pub fn params(&self, k: usize, ef: usize) -> SearchParams {
        let mut p = SearchParams::new(k, ef);
        p.prt = self.prt;
        if !self.tfb {
            p = p.without_tfb();
        }
        p
    }
}

/// Aggregate of one pass over a query set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueryPass {
    pub recall: f64,
    pub mean_exact_dist: f64,
    pub mean_gamma: f64,
    pub seconds: f64,
    pub results: Vec<Vec<Neighbor>>,
}

/// Runs every query once on the current thread.
pub fn run_queries(
    index: &PagIndex,
    queries: &VectorSet,
    truth: &GroundTruth,
    params: &SearchParams,
) -> Result<QueryPass> {
    if truth.len() < queries.len() {
        return Err(Error::param("ground truth has fewer rows than queries"));
    }
    let mut scratch = SearchScratch::new();
    let mut pass = QueryPass::default();
    let start = Instant::now();
    for q in 0..queries.len() as u32 {
        let (res, stats) = index.search_with(&queries.row(q)[..queries.dim()], params, &mut scratch)?;
        pass.mean_exact_dist += stats.exact_dist_count as f64;
        pass.mean_gamma += stats.gamma();
        pass.results.push(res);
    }
    pass.seconds = start.elapsed().as_secs_f64();
    let nq = queries.len().max(1) as f64;
    for (q, res) in pass.results.iter().enumerate() {
        pass.recall += recall_with_ties(res, &truth.ids[q], &truth.distances[q], params.k);
    }
    pass.recall /= nq;
    pass.mean_exact_dist /= nq;
    pass.mean_gamma /= nq;
    Ok(pass)
}

/// Timed sweep over `efS x K`, one untimed warm-up pass per point.
pub fn run_sweep(
    index: &PagIndex,
    build_secs: f64,
    queries: &VectorSet,
    truth: &GroundTruth,
    sweep: &SweepConfig,
) -> Result<Vec<BenchRow>> {
    sweep.validate()?;
    if let Some(&kmax) = sweep.ks.iter().max() {
        if truth.depth() < kmax.min(index.len()) {
            return Err(Error::param(format!(
                "ground truth depth {} is below K={kmax}",
                truth.depth()
            )));
        }
    }
    let adjacency_bytes = index.adjacency_bytes();
    let mut rows = Vec::new();
    for &k in &sweep.ks {
        for &ef in &sweep.ef_search {
            let params = sweep.params(k, ef);
            run_queries(index, queries, truth, &params)?;
            let pass = run_queries(index, queries, truth, &params)?;
            rows.push(BenchRow {
                ef_search: ef,
                k,
                recall: pass.recall,
                qps: queries.len() as f64 / pass.seconds.max(1e-12),
                mean_exact_dist: pass.mean_exact_dist,
                mean_gamma: pass.mean_gamma,
                build_secs,
                adjacency_bytes,
                prt: sweep.prt,
                tfb: sweep.tfb,
                pes: index.params().pes,
                tie_policy: "distance-ties-count",
            });
        }
    }
    Ok(rows)
}

/// Builds an index and runs a sweep.
pub fn run_benchmark(
    base: VectorSet,
    queries: &VectorSet,
    truth: &GroundTruth,
    build: BuildParams,
    sweep: &SweepConfig,
) -> Result<Vec<BenchRow>> {
    sweep.validate()?;
    let start = Instant::now();
    let index = PagIndex::build(base, build)?;
    let build_secs = start.elapsed().as_secs_f64();
    run_sweep(&index, build_secs, queries, truth, sweep)
}

/// Linear interpolation of `y` at `x = target` along a curve sorted by
/// increasing `x`; `None` when the target lies outside the sampled range.
pub fn interpolate_at(points: &[(f64, f64)], target: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if (x0..=x1).contains(&target) {
            if x1 == x0 {
                Some(y0)
            } else {
                Some(y0 + (y1 - y0) * (target - x0) / (x1 - x0))
            }
        } else {
            None
        }
    })
}

/// One batch of an interleaved insert/search workload.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InsertRow {
    pub batch: usize,
    pub inserted: usize,
    pub total: usize,
    pub insert_secs: f64,
    pub inserts_per_sec: f64,
    pub recall: f64,
    pub qps: f64,
    pub mean_exact_dist: f64,
    pub pending: usize,
    pub flushes: usize,
    pub invariants_ok: bool,
}

/// Inserts `extra` (row-major, `dim` wide) in `batches` equal batches; after
/// each batch every query is searched and recall is measured against the
/// current contents of the index.
pub fn run_insert_workload(
    index: &mut PagIndex,
    extra: &[f32],
    queries: &VectorSet,
    params: &SearchParams,
    batches: usize,
    check_invariants: bool,
) -> Result<Vec<InsertRow>> {
    let dim = index.vectors().dim();
    if dim == 0 || !extra.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: extra.len() % dim.max(1),
        });
    }
    let rows: Vec<&[f32]> = extra.chunks_exact(dim).collect();
    let batches = batches.clamp(1, rows.len().max(1));
    let mut out = Vec::with_capacity(batches);
    for b in 0..batches {
        let lo = b * rows.len() / batches;
        let hi = (b + 1) * rows.len() / batches;
        let start = Instant::now();
        for row in &rows[lo..hi] {
            index.insert(row)?;
        }
        let insert_secs = start.elapsed().as_secs_f64();
        let truth = ground_truth(index.vectors(), queries, params.k)?;
        let pass = run_queries(index, queries, &truth, params)?;
        out.push(InsertRow {
            batch: b,
            inserted: hi - lo,
            total: index.len(),
            insert_secs,
            inserts_per_sec: (hi - lo) as f64 / insert_secs.max(1e-12),
            recall: pass.recall,
            qps: queries.len() as f64 / pass.seconds.max(1e-12),
            mean_exact_dist: pass.mean_exact_dist,
            pending: index.pending().len(),
            flushes: index.flush_history().len(),
            invariants_ok: !check_invariants || index.check_invariants().is_ok(),
        });
    }
    Ok(out)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A unit vector orthogonal to unit `a`.
fn random_orthogonal_unit(rng: &mut ChaCha8Rng, a: &[f32]) -> Vec<f32> {
    loop {
        let mut v = random_unit(rng, a.len());
        let p = dot(&v, a);
        v.iter_mut().zip(a).for_each(|(x, y)| *x -= p * y);
        let n = dot(&v, &v).sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Two unit vectors in `R^d` at angle `alpha` whose restrictions to each of
/// the `l` equal subspaces have norm `1/sqrt(l)` and inner product `cos(alpha)/l`.
pub fn balanced_pair(rng: &mut ChaCha8Rng, d: usize, l: usize, alpha: f64) -> (Vec<f32>, Vec<f32>) {
    let s = d / l;
    let scale = 1.0 / (l as f32).sqrt();
    let (ca, sa) = (alpha.cos() as f32, alpha.sin() as f32);
    let mut e1 = Vec::with_capacity(d);
    let mut e2 = Vec::with_capacity(d);
    for _ in 0..l {
        let a = random_unit(rng, s);
        let b = random_orthogonal_unit(rng, &a);
        e1.extend(a.iter().map(|x| x * scale));
        e2.extend(a.iter().zip(&b).map(|(x, y)| (ca * x + sa * y) * scale));
    }
    (e1, e2)
}

/// Mean and variance of one bucket of `cos theta / cos beta`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoremRow {
    pub num_subspaces: usize,
    pub alpha_deg: f64,
    pub bucket: usize,
    pub cos_beta_lo: f64,
    pub cos_beta_hi: f64,
    pub count: usize,
    pub mean_ratio: f64,
    pub std_error: f64,
    pub expected: f64,
    pub variance: f64,
    pub within_3se: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremReport {
    pub rows: Vec<TheoremRow>,
    /// `(alpha_deg, larger L, smaller L, mean over buckets of the variance ratio)`.
    pub variance_ratios: Vec<(f64, usize, usize, f64)>,
    pub warnings: Vec<String>,
}

impl TheoremReport {
    pub fn means_ok(&self) -> bool {
        self.rows.iter().all(|r| r.within_3se)
    }
}

pub const MIN_BUCKET: usize = 100;

/// Monte Carlo check of the conditional behavior of `cos theta / cos beta`.
///
/// For each `L` and angle, `trials` balanced pairs `(e1, e2)` at angle
/// `alpha` are drawn. `e1` plays the edge and is encoded against a fixed
/// reference family; `cos theta` is `<r*, e2>`. Samples are split into
/// `buckets` quantile buckets of `cos beta`. Each bucket's mean ratio is
/// compared with `cos(alpha)`, and for every consecutive pair of `L`
/// values the per-bucket variance ratio is averaged (angles other than 0 only).
pub fn validate_theorem(
    d: usize,
    l_list: &[usize],
    alphas_deg: &[f64],
    trials: usize,
    buckets: usize,
    seed: u64,
) -> Result<TheoremReport> {
    if trials < 10 * buckets.max(1) {
        return Err(Error::param("too few trials for the requested buckets"));
    }
    let mut report = TheoremReport {
        rows: Vec::new(),
        variance_ratios: Vec::new(),
        warnings: Vec::new(),
    };
    let mut variances: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for (li, &l) in l_list.iter().enumerate() {
        if l == 0 || !d.is_multiple_of(l) {
            return Err(Error::param(format!("L={l} does not divide d={d}")));
        }
        let refs = ReferenceSet::generate(d, l, DEFAULT_REFS_PER_SUBSPACE, seed ^ ((l as u64) << 32))?;
        for (ai, &alpha_deg) in alphas_deg.iter().enumerate() {
            let alpha = alpha_deg.to_radians();
            let expected = alpha.cos();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((li * 1000 + ai) as u64));
            let mut codes = vec![0u8; refs.code_bytes()];
            let zero = vec![0.0f32; d];
            let mut samples: Vec<(f64, f64)> = (0..trials)
                .map(|_| {
                    let (e1, e2) = balanced_pair(&mut rng, d, l, alpha);
                    let geom = refs.encode_into(&zero, &e1, &mut codes).expect("unit edge");
                    let r = refs.concatenated(&codes);
                    let cos_theta = dot(&r, &e2) as f64;
                    let cos_beta = geom.cos_beta as f64;
                    (cos_beta, cos_theta / cos_beta)
                })
                .collect();
            samples.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut vars = Vec::new();
            for b in 0..buckets {
                let lo = b * samples.len() / buckets;
                let hi = (b + 1) * samples.len() / buckets;
                let chunk = &samples[lo..hi];
                if chunk.len() < MIN_BUCKET {
                    report.warnings.push(format!(
                        "L={l} alpha={alpha_deg} bucket {b}: {} samples, skipped",
                        chunk.len()
                    ));
                    continue;
                }
                let n = chunk.len() as f64;
                let mean = chunk.iter().map(|s| s.1).sum::<f64>() / n;
                let var = chunk.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / (n - 1.0);
                let se = (var / n).sqrt();
                vars.push(var);
                report.rows.push(TheoremRow {
                    num_subspaces: l,
                    alpha_deg,
                    bucket: b,
                    cos_beta_lo: chunk[0].0,
                    cos_beta_hi: chunk[chunk.len() - 1].0,
                    count: chunk.len(),
                    mean_ratio: mean,
                    std_error: se,
                    expected,
                    variance: var,
                    within_3se: (mean - expected).abs() <= 3.0 * se + 1e-6,
                });
            }
            variances.push((alpha_deg, l, vars));
        }
    }
    for w in l_list.windows(2) {
        let (small, large) = (w[0].min(w[1]), w[0].max(w[1]));
        for &alpha_deg in alphas_deg {
            if alpha_deg == 0.0 {
                continue;
            }
            let find = |l: usize| {
                variances
                    .iter()
                    .find(|(a, ll, _)| *a == alpha_deg && *ll == l)
                    .map(|v| v.2.clone())
            };
            let (Some(vs), Some(vl)) = (find(small), find(large)) else {
                continue;
            };
            let pairs: Vec<f64> = vs
                .iter()
                .zip(&vl)
                .filter(|(s, _)| **s > 0.0)
                .map(|(s, l)| l / s)
                .collect();
            if !pairs.is_empty() {
                let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
                report.variance_ratios.push((alpha_deg, large, small, mean));
            }
        }
    }
    Ok(report)
}

/// Pass count over a Bernoulli Monte Carlo run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    pub trials: usize,
    pub successes: usize,
}

impl RateEstimate {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }

    pub fn std_error(&self) -> f64 {
        let p = self.rate();
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }

    /// `rate - 3 * std_error >= floor`.
    pub fn at_least(&self, floor: f64) -> bool {
        self.rate() - 3.0 * self.std_error() >= floor
    }
}

/// `u + r * dir`.
fn offset(u: &[f32], dir: &[f32], r: f32) -> Vec<f32> {
    u.iter().zip(dir).map(|(a, b)| a + r * b).collect()
}

/// Pass rate of the routing test on configurations whose true cosine
/// between `q - u` and `w - u` is at least the threshold.
///
/// Each trial draws a random node `u`, an angle `alpha` uniformly in
/// `[0, pi]`, a neighbor `w` and a query `q` with `angle(w-u, q-u) = alpha`,
/// and a threshold `tau` uniform in `[-1, 1]`. Trials with `cos(alpha) < tau`
/// are redrawn.
pub fn prt_pass_rate(d: usize, l: usize, trials: usize, seed: u64) -> Result<RateEstimate> {
    let refs = ReferenceSet::generate(d, l, DEFAULT_REFS_PER_SUBSPACE, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut codes = vec![0u8; refs.code_bytes()];
    let mut successes = 0;
    let mut done = 0;
    while done < trials {
        let alpha: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let tau: f32 = rng.gen_range(-1.0..1.0);
        if (alpha.cos() as f32) < tau {
            continue;
        }
        let u: Vec<f32> = random_unit(&mut rng, d);
        let e = random_unit(&mut rng, d);
        let o = random_orthogonal_unit(&mut rng, &e);
        let dir: Vec<f32> = e
            .iter()
            .zip(&o)
            .map(|(a, b)| alpha.cos() as f32 * a + alpha.sin() as f32 * b)
            .collect();
        let w = offset(&u, &e, rng.gen_range(0.2..2.0));
        let dist_uq = rng.gen_range(0.2..2.0);
        let q = offset(&u, &dir, dist_uq);
        let geom = refs.encode_into(&u, &w, &mut codes)?;
        let table = refs.projection_table(&q);
        let cos_theta = table.estimate_cos_theta(&codes, geom.base_offset, sq_dist(&q, &u).sqrt());
        if prt_test(cos_theta, geom.cos_beta, tau) {
            successes += 1;
        }
        done += 1;
    }
    Ok(RateEstimate { trials, successes })
}

/// Edge-selection accept rate on configurations where some out-neighbor of
/// `u` is a relay toward `v` (`|w - v| <= |v - u|`), checked by brute force.
///
/// Each trial draws `u`, `v` at distance 1 from `u`, and `degree` out-neighbors
/// `w = u + r * dir` with uniformly random unit `dir` and `r` uniform in
/// `[0.05, 1.5]`; trials without a relay are redrawn. Acceptance means the
/// maximum edge margin is nonnegative.
pub fn pes_accept_rate(d: usize, l: usize, degree: usize, trials: usize, seed: u64) -> Result<RateEstimate> {
    let refs = ReferenceSet::generate(d, l, DEFAULT_REFS_PER_SUBSPACE, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut codes = vec![0u8; refs.code_bytes()];
    let mut successes = 0;
    let mut done = 0;
    while done < trials {
        let u = random_unit(&mut rng, d);
        let v_dir = random_unit(&mut rng, d);
        let v = offset(&u, &v_dir, 1.0);
        let d_uv = sq_dist(&u, &v).sqrt();
        let ws: Vec<Vec<f32>> = (0..degree)
            .map(|_| {
                let dir = random_unit(&mut rng, d);
                offset(&u, &dir, rng.gen_range(0.05..1.5))
            })
            .collect();
        let relay = ws.iter().any(|w| sq_dist(w, &v).sqrt() <= d_uv);
        if !relay {
            continue;
        }
        let table = refs.projection_table(&v);
        let best = ws
            .iter()
            .map(|w| {
                let geom = refs.encode_into(&u, w, &mut codes).expect("nonzero edge");
                let cos_theta = table.estimate_cos_theta(&codes, geom.base_offset, d_uv);
                pes_margin(cos_theta, geom.cos_beta, pes_threshold(geom.edge_norm, d_uv))
            })
            .fold(f32::NEG_INFINITY, f32::max);
        if best >= 0.0 {
            successes += 1;
        }
        done += 1;
    }
    Ok(RateEstimate { trials, successes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecstore::Metric;

    fn set(flat: &[f32], d: usize) -> VectorSet {
        VectorSet::from_flat(flat, d, 1, Metric::Euclidean).unwrap()
    }

    #[test]
    fn synthetic_is_deterministic() {
        for dist in [Distribution::Gaussian, Distribution::Clustered] {
            assert_eq!(gen_synthetic(dist, 50, 8, 3), gen_synthetic(dist, 50, 8, 3));
            assert_ne!(gen_synthetic(dist, 50, 8, 3), gen_synthetic(dist, 50, 8, 4));
        }
    }

    #[test]
    fn gaussian_mean_is_near_zero() {
        let x = gen_synthetic(Distribution::Gaussian, 10_000, 128, 1);
        let n = x.len() as f64;
        let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
        // Standard error of the mean of n unit-variance samples.
        assert!(mean.abs() < 3.0 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn clustered_intra_is_tighter_than_inter() {
        let d = 16;
        let x = gen_synthetic(Distribution::Clustered, 500, d, 2);
        let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..200 {
            for j in (i + 1)..200 {
                let dist = sq_dist(&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]).sqrt() as f64;
                if cluster_of(i) == cluster_of(j) {
                    intra += dist;
                    ni += 1;
                } else {
                    inter += dist;
                    nx += 1;
                }
            }
        }
        assert!(intra / ni as f64 * 3.0 < inter / nx as f64);
    }

    #[test]
    fn stored_query_ranks_first() {
        let flat = gen_synthetic(Distribution::Gaussian, 100, 4, 5);
        let base = set(&flat, 4);
        let queries = set(&flat[12..16], 4);
        let gt = ground_truth(&base, &queries, 5).unwrap();
        assert_eq!(gt.ids[0][0], 3);
        assert_eq!(gt.distances[0][0], 0.0);
    }

    #[test]
    fn full_ranking_is_a_sorted_permutation() {
        let base = set(&gen_synthetic(Distribution::Gaussian, 100, 4, 6), 4);
        let queries = set(&gen_synthetic(Distribution::Gaussian, 5, 4, 7), 4);
        let gt = ground_truth(&base, &queries, 500).unwrap();
        for (ids, ds) in gt.ids.iter().zip(&gt.distances) {
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(sorted, (0..100).collect::<Vec<u32>>());
            assert!(ds.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn ground_truth_ties_break_by_id() {
        let base = set(&[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0], 2);
        let queries = set(&[0.0, 0.0], 2);
        let gt = ground_truth(&base, &queries, 4).unwrap();
        assert_eq!(gt.ids[0], vec![0, 1, 2, 3]);
    }

    #[test]
    fn parallel_truth_matches_single_thread() {
        let base = set(&gen_synthetic(Distribution::Gaussian, 2000, 24, 8), 24);
        let queries = set(&gen_synthetic(Distribution::Gaussian, 40, 24, 9), 24);
        let par = ground_truth(&base, &queries, 20).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let seq = pool.install(|| ground_truth(&base, &queries, 20).unwrap());
        assert_eq!(par, seq);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[1, 2, 3], &[1, 2, 3, 4], 3), 1.0);
        assert_eq!(recall_at_k(&[5, 6], &[1, 2], 2), 0.0);
        assert_eq!(recall_at_k(&[1, 1, 9], &[1, 2, 3], 3), 1.0 / 3.0);
    }

    #[test]
    fn tied_result_counts() {
        let truth_ids = [4, 7];
        let truth_d = [1.0, 2.0];
        let res = [
            Neighbor { id: 4, distance: 1.0 },
            Neighbor { id: 9, distance: 2.0 },
        ];
        assert_eq!(recall_with_ties(&res, &truth_ids, &truth_d, 2), 1.0);
        let res = [
            Neighbor { id: 4, distance: 1.0 },
            Neighbor { id: 9, distance: 2.5 },
        ];
        assert_eq!(recall_with_ties(&res, &truth_ids, &truth_d, 2), 0.5);
    }

    #[test]
    fn k_above_ef_is_rejected() {
        let sweep = SweepConfig {
            ef_search: vec![50],
            ks: vec![100],
            prt: true,
            tfb: true,
        };
        assert!(sweep.validate().is_err());
    }

    #[test]
    fn interpolation() {
        let pts = [(0.8, 100.0), (0.9, 200.0), (0.95, 400.0)];
        assert!((interpolate_at(&pts, 0.85).unwrap() - 150.0).abs() < 1e-9);
        assert_eq!(interpolate_at(&pts, 0.99), None);
    }

    #[test]
    fn balanced_pair_has_exact_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (e1, e2) = balanced_pair(&mut rng, 64, 8, 1.0);
        for l in 0..8 {
            let a = &e1[l * 8..(l + 1) * 8];
            let b = &e2[l * 8..(l + 1) * 8];
            assert!((dot(a, a) - 0.125).abs() < 1e-5);
            assert!((dot(b, b) - 0.125).abs() < 1e-5);
            assert!((dot(a, b) - 1f32.cos() / 8.0).abs() < 1e-5);
        }
    }
}
