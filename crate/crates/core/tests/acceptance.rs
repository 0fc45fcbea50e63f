//! Acceptance checks, one line per criterion.
//!
//! Run a subset with `cargo test -p pag --test acceptance -- 1 4 11`.

use std::collections::HashSet;
use std::time::Instant;

use pag::bench::{
    gen_synthetic, ground_truth, interpolate_at, pes_accept_rate, prt_pass_rate, run_insert_workload,
    run_queries, run_sweep, validate_theorem, Distribution, GroundTruth, SweepConfig,
};
use pag::{persist, robust_prune, BuildParams, Candidate, Metric, PagIndex, SearchParams, VectorSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 128;
const N_SMALL: usize = 10_000;
const N_LARGE: usize = 100_000;
const HELD_OUT: usize = 1_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// `n` base vectors followed by `HELD_OUT` queries from one Gaussian stream.
fn gaussian(n: usize, seed: u64) -> (VectorSet, VectorSet) {
    let flat = gen_synthetic(Distribution::Gaussian, n + HELD_OUT, D, seed);
    let (base, queries) = flat.split_at(n * D);
    (
        VectorSet::from_flat(base, D, 1, Metric::Euclidean).unwrap(),
        VectorSet::from_flat(queries, D, 1, Metric::Euclidean).unwrap(),
    )
}

fn first_queries(queries: &VectorSet, count: usize) -> VectorSet {
    VectorSet::from_flat(&queries.to_flat()[..count * D], D, 1, Metric::Euclidean).unwrap()
}

/// Shared fixture of criteria 1, 5, 9 and 11.
struct Small {
    flat: Vec<f32>,
    index: PagIndex,
    queries: VectorSet,
    truth: GroundTruth,
    build_secs: f64,
    setup_secs: f64,
}

fn small() -> Small {
    let start = Instant::now();
    let (base, all_queries) = gaussian(N_SMALL, 1);
    let queries = first_queries(&all_queries, 100);
    let flat = base.to_flat();
    let truth = ground_truth(&base, &queries, 100).unwrap();
    let t = Instant::now();
    let index = PagIndex::build(base, BuildParams::default()).unwrap();
    let build_secs = t.elapsed().as_secs_f64();
    Small {
        flat,
        index,
        queries,
        truth,
        build_secs,
        setup_secs: start.elapsed().as_secs_f64(),
    }
}

fn c1_recall(s: &Small) -> Outcome {
    let start = Instant::now();
    let r10 = run_queries(&s.index, &s.queries, &s.truth, &SearchParams::new(10, 200)).unwrap();
    let r100 = run_queries(&s.index, &s.queries, &s.truth, &SearchParams::new(100, 500)).unwrap();
    let total = s.setup_secs + start.elapsed().as_secs_f64();
    outcome(
        r10.recall >= 0.90 && r100.recall >= 0.90 && total < 120.0,
        format!(
            "recall@10(efS=200)={:.4} recall@100(efS=500)={:.4} build={:.1}s total={:.1}s",
            r10.recall, r100.recall, s.build_secs, total
        ),
    )
}

fn c2_prt_rate() -> Outcome {
    let r = prt_pass_rate(D, 16, 10_000, 11).unwrap();
    outcome(
        r.at_least(0.5),
        format!("pass rate {:.4} +- {:.4} over {} trials", r.rate(), r.std_error(), r.trials),
    )
}

fn c3_pes_rate() -> Outcome {
    let r = pes_accept_rate(D, 16, 16, 10_000, 12).unwrap();
    outcome(
        r.at_least(0.5),
        format!("accept rate {:.4} +- {:.4} over {} trials", r.rate(), r.std_error(), r.trials),
    )
}

fn c4_theorem() -> Outcome {
    let report = validate_theorem(256, &[16, 32], &[0.0, 60.0, 90.0], 20_000, 5, 13).unwrap();
    let bad: Vec<String> = report
        .rows
        .iter()
        .filter(|r| !r.within_3se)
        .map(|r| format!("L={} a={} b{}", r.num_subspaces, r.alpha_deg, r.bucket))
        .collect();
    let ratios_ok = !report.variance_ratios.is_empty() && report.variance_ratios.iter().all(|r| r.3 < 0.8);
    let ratios: Vec<String> = report
        .variance_ratios
        .iter()
        .map(|(a, _, _, r)| format!("a={a}:{r:.3}"))
        .collect();
    outcome(
        report.means_ok() && ratios_ok && report.warnings.is_empty(),
        format!(
            "{} buckets, off={:?}, var(L=32)/var(L=16) {}",
            report.rows.len(),
            bad,
            ratios.join(" ")
        ),
    )
}

fn c5_gamma(s: &Small) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let mut pass = true;
    for (k, efs) in [(10, vec![50, 100, 200, 400]), (100, vec![200, 500, 800])] {
        let sweep = SweepConfig {
            ef_search: efs,
            ks: vec![k],
            prt: true,
            tfb: true,
        };
        for row in run_sweep(&s.index, s.build_secs, &s.queries, &s.truth, &sweep).unwrap() {
            if row.recall >= 0.9 {
                points += 1;
                worst = worst.max(row.mean_gamma);
                pass &= row.mean_gamma < 0.5;
            }
        }
    }
    outcome(
        pass && points > 0,
        format!("{points} points with recall >= 0.9, max gamma {worst:.4}"),
    )
}

/// Exact-distance count at recall 0.90 along an efS sweep.
fn dist_at_recall(index: &PagIndex, queries: &VectorSet, truth: &GroundTruth, prt: bool) -> Option<f64> {
    let mut curve: Vec<(f64, f64)> = [10, 15, 20, 30, 40, 60, 80, 120, 160, 240, 320, 480]
        .iter()
        .map(|&ef| {
            let mut p = SearchParams::new(10, ef);
            p.prt = prt;
            let pass = run_queries(index, queries, truth, &p).unwrap();
            (pass.recall, pass.mean_exact_dist)
        })
        .collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    interpolate_at(&curve, 0.90)
}

fn c6_reduction() -> Outcome {
    let mut ratios = Vec::new();
    let mut detail = Vec::new();
    for seed in [21, 22, 23] {
        let (base, queries) = gaussian(N_SMALL, seed);
        let truth = ground_truth(&base, &queries, 10).unwrap();
        let index = PagIndex::build(base, BuildParams { seed, ..Default::default() }).unwrap();
        let on = dist_at_recall(&index, &queries, &truth, true);
        let off = dist_at_recall(&index, &queries, &truth, false);
        match (on, off) {
            (Some(on), Some(off)) => {
                ratios.push(on / off);
                detail.push(format!("seed {seed}: {on:.0}/{off:.0}={:.3}", on / off));
            }
            _ => detail.push(format!("seed {seed}: recall 0.90 not bracketed")),
        }
    }
    let pass = ratios.len() == 3 && ratios.iter().all(|&r| r <= 0.67);
    outcome(pass, detail.join(", "))
}

fn c7_fuzz() -> Outcome {
    let n = 2_000;
    let d = 16;
    let flat = gen_synthetic(Distribution::Clustered, n, d, 31);
    let base = VectorSet::from_flat(&flat, d, 1, Metric::Euclidean).unwrap();
    let params = BuildParams {
        m: 8,
        ef_construction: 64,
        beam: 16,
        ..Default::default()
    };
    let index = PagIndex::build(base, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut violations = 0;
    let mut first = None;
    for _ in 0..10_000 {
        let q: Vec<f32> = if rng.gen_bool(0.2) {
            flat[rng.gen_range(0..n) * d..][..d].to_vec()
        } else {
            (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()
        };
        let k = rng.gen_range(1..=40);
        let mut p = SearchParams::new(k, rng.gen_range(k..=k + 150)).checked();
        p.beam = rng.gen_range(1..=48);
        p.prt = rng.gen_bool(0.8);
        let (_, stats) = index.search(&q, &p).unwrap();
        violations += stats.invariant_violations;
        if first.is_none() {
            first = stats.first_violation;
        }
    }
    let graph_ok = index.check_invariants();
    outcome(
        violations == 0 && graph_ok.is_ok(),
        format!("10000 queries, {violations} violations, first={first:?}, graph={graph_ok:?}"),
    )
}

/// Quadratic reference: scan by `(distance, id)`, keep `c` unless a kept
/// `k` is at least as close to `c` as `v` is.
fn prune_oracle(points: &[Vec<i32>], v: usize, ids: &[usize], cap: usize) -> Vec<usize> {
    let dist = |a: &[i32], b: &[i32]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut order: Vec<(f64, usize)> = ids
        .iter()
        .filter(|&&c| c != v)
        .map(|&c| (dist(&points[v], &points[c]), c))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = Vec::new();
    for (dvc, c) in order {
        if kept.len() == cap {
            break;
        }
        if kept.iter().all(|&k| dist(&points[k], &points[c]) > dvc) {
            kept.push(c);
        }
    }
    kept
}

fn c8_prune_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mismatches = 0;
    let mut example = None;
    for trial in 0..1_000 {
        let d = rng.gen_range(1..=8);
        let n = rng.gen_range(1..=64);
        let mut points: Vec<Vec<i32>> = Vec::with_capacity(n + 1);
        for i in 0..=n {
            if i > 1 && rng.gen_bool(0.15) {
                let j = rng.gen_range(0..i);
                points.push(points[j].clone());
            } else {
                points.push((0..d).map(|_| rng.gen_range(-4..=4)).collect());
            }
        }
        let flat: Vec<f32> = points.iter().flatten().map(|&x| x as f32).collect();
        let set = VectorSet::from_flat(&flat, d, 1, Metric::Euclidean).unwrap();
        let cap = rng.gen_range(1..=2 * 16);
        let ids: Vec<usize> = (1..=n).collect();
        let mut cands: Vec<Candidate> = ids
            .iter()
            .map(|&c| Candidate {
                dist: set.sq_dist(0, c as u32),
                id: c as u32,
            })
            .collect();
        cands.sort();
        let got: Vec<usize> = robust_prune(&set, 0, &cands, cap)
            .iter()
            .map(|c| c.id as usize)
            .collect();
        let want = prune_oracle(&points, 0, &ids, cap);
        if got != want {
            mismatches += 1;
            example.get_or_insert((trial, got, want));
        }
    }
    outcome(
        mismatches == 0,
        format!("1000 lists, {mismatches} mismatches, first={example:?}"),
    )
}

fn c9_online(s: &Small) -> Outcome {
    let n0 = N_SMALL - 1_000;
    let base = VectorSet::from_flat(&s.flat[..n0 * D], D, 1, Metric::Euclidean).unwrap();
    let mut index = PagIndex::build(base, BuildParams::default()).unwrap();
    let params = SearchParams::new(10, 200);
    let rows = run_insert_workload(&mut index, &s.flat[n0 * D..], &s.queries, &params, 10, true).unwrap();
    let online = rows.last().map(|r| r.recall).unwrap_or(0.0);
    let all_ok = rows.iter().all(|r| r.invariants_ok) && index.check_invariants().is_ok();
    let offline = run_queries(&s.index, &s.queries, &s.truth, &params).unwrap().recall;
    outcome(
        (online - offline).abs() <= 0.03 && all_ok && index.len() == N_SMALL,
        format!(
            "online recall@10 {online:.4}, offline {offline:.4}, {} batches, invariants {}",
            rows.len(),
            if all_ok { "held" } else { "broken" }
        ),
    )
}

fn c10_large() -> Outcome {
    let (base, all_queries) = gaussian(N_LARGE, 2);
    let queries = first_queries(&all_queries, 100);
    let truth = ground_truth(&base, &queries, 1_000).unwrap();
    let params = BuildParams {
        m: 64,
        num_subspaces: Some(64),
        ef_construction: 300,
        ..Default::default()
    };
    let t = Instant::now();
    let index = PagIndex::build(base, params).unwrap();
    let build_secs = t.elapsed().as_secs_f64();
    let mut pass = true;
    let mut detail = vec![format!("build {build_secs:.0}s (M=64, L=64, efC=300)")];
    for k in [10, 100, 1_000] {
        let ef = (2 * k).max(200);
        let r = run_queries(&index, &queries, &truth, &SearchParams::new(k, ef)).unwrap();
        pass &= r.recall >= 0.85;
        detail.push(format!("recall@{k}(efS={ef})={:.4}", r.recall));
    }
    outcome(pass, detail.join(" "))
}

fn c11_persist(s: &Small) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.pag");
    persist::save(&s.index, &path).unwrap();
    let loaded = persist::load(&path).unwrap();
    let params = SearchParams::new(10, 200);
    let mut differing = 0;
    for q in 0..s.queries.len() as u32 {
        let q = &s.queries.row(q)[..D];
        let (a, _) = s.index.search(q, &params).unwrap();
        let (b, _) = loaded.search(q, &params).unwrap();
        let same = a.len() == b.len()
            && a
                .iter()
                .zip(&b)
                .all(|(x, y)| x.id == y.id && x.distance.to_bits() == y.distance.to_bits());
        differing += usize::from(!same);
    }
    outcome(
        differing == 0,
        format!("{} queries, {differing} differ", s.queries.len()),
    )
}

fn main() {
    let selected: HashSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: usize| selected.is_empty() || selected.contains(&c);
    let needs_small = [1, 5, 9, 11].iter().any(|&c| want(c));
    let fixture = needs_small.then(small);
    let s = || fixture.as_ref().unwrap();

    let mut failed = Vec::new();
    let mut report = |c: usize, run: &dyn Fn() -> Outcome| {
        if !want(c) {
            return;
        }
        let t = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {c:>2}: {verdict} [{:.1}s] {}", t.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(c);
        }
    };
    report(1, &|| c1_recall(s()));
    report(2, &c2_prt_rate);
    report(3, &c3_pes_rate);
    report(4, &c4_theorem);
    report(5, &|| c5_gamma(s()));
    report(6, &c6_reduction);
    report(7, &c7_fuzz);
    report(8, &c8_prune_oracle);
    report(9, &|| c9_online(s()));
    report(10, &c10_large);
    report(11, &|| c11_persist(s()));

    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
