use pag::bench::{gen_synthetic, ground_truth, recall_at_k, run_queries, run_sweep, Distribution, SweepConfig};
use pag::{BuildParams, Metric, PagIndex, SearchParams, VectorSet};

fn set(flat: &[f32], d: usize) -> VectorSet {
    VectorSet::from_flat(flat, d, 1, Metric::Euclidean).unwrap()
}

fn in_degree_zero(index: &PagIndex) -> usize {
    let mut indeg = vec![0usize; index.len()];
    for u in 0..index.len() as u32 {
        for t in index.neighbors(u) {
            indeg[t as usize] += 1;
        }
    }
    (0..index.len())
        .filter(|&v| indeg[v] == 0 && !index.entry().contains(&(v as u32)))
        .count()
}

#[test]
fn stored_edge_geometry_matches_vectors() {
    let d = 64;
    let flat = gen_synthetic(Distribution::Gaussian, 2_000, d, 1);
    let index = PagIndex::build(set(&flat, d), BuildParams::default()).unwrap();
    let cb = index.references().code_bytes();
    let mut edges = 0;
    for u in 0..index.len() as u32 {
        let links = index.links(u);
        let view = links.view(cb);
        for (i, &w) in view.targets.iter().enumerate() {
            let exact: f64 = flat[u as usize * d..][..d]
                .iter()
                .zip(&flat[w as usize * d..][..d])
                .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                .sum::<f64>()
                .sqrt();
            let stored = f64::from(view.geometry[i].edge_norm);
            assert!((stored - exact).abs() <= 1e-5 * exact, "{u}->{w}: {stored} vs {exact}");
            edges += 1;
        }
    }
    assert!(edges > 10_000);
    assert_eq!(index.check_invariants(), Ok(()));
}

#[test]
fn edge_selection_does_not_strand_more_nodes() {
    let d = 32;
    for seed in [1, 2, 3] {
        let flat = gen_synthetic(Distribution::Clustered, 4_000, d, seed);
        let count = |pes| {
            let params = BuildParams {
                pes,
                seed,
                ..Default::default()
            };
            in_degree_zero(&PagIndex::build(set(&flat, d), params).unwrap())
        };
        let (with, without) = (count(true), count(false));
        assert!(with <= without, "seed {seed}: {with} > {without}");
    }
}

#[test]
fn edge_selection_does_not_cost_recall_on_clusters() {
    let d = 64;
    let n = 5_000;
    for seed in [4, 5, 6] {
        let flat = gen_synthetic(Distribution::Clustered, n + 100, d, seed);
        let queries = set(&flat[n * d..], d);
        let base = set(&flat[..n * d], d);
        let truth = ground_truth(&base, &queries, 10).unwrap();
        let recall = |pes| {
            let params = BuildParams {
                pes,
                seed,
                ..Default::default()
            };
            let index = PagIndex::build(base.clone(), params).unwrap();
            run_queries(&index, &queries, &truth, &SearchParams::new(10, 40)).unwrap().recall
        };
        let (with, without) = (recall(true), recall(false));
        assert!(with >= without - 0.01, "seed {seed}: {with:.4} vs {without:.4}");
    }
}

#[test]
fn sweep_recall_matches_offline_recount() {
    let d = 32;
    let n = 3_000;
    let flat = gen_synthetic(Distribution::Gaussian, n + 50, d, 7);
    let base = set(&flat[..n * d], d);
    let queries = set(&flat[n * d..], d);
    let truth = ground_truth(&base, &queries, 20).unwrap();
    let index = PagIndex::build(base, BuildParams::default()).unwrap();
    let sweep = SweepConfig {
        ef_search: vec![20, 80],
        ks: vec![5, 20],
        prt: true,
        tfb: true,
    };
    let rows = run_sweep(&index, 0.0, &queries, &truth, &sweep).unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let pass = run_queries(&index, &queries, &truth, &sweep.params(row.k, row.ef_search)).unwrap();
        let offline: f64 = pass
            .results
            .iter()
            .enumerate()
            .map(|(q, res)| {
                let ids: Vec<u32> = res.iter().map(|r| r.id).collect();
                recall_at_k(&ids, &truth.ids[q], row.k)
            })
            .sum::<f64>()
            / queries.len() as f64;
        assert!((row.recall - offline).abs() < 1e-12, "{} vs {offline}", row.recall);
        assert!(row.qps > 0.0);
    }
}

#[test]
fn online_duplicate_is_found_at_distance_zero() {
    let d = 16;
    let flat = gen_synthetic(Distribution::Gaussian, 500, d, 9);
    let mut index = PagIndex::build(set(&flat, d), BuildParams::default()).unwrap();
    let row = flat[123 * d..124 * d].to_vec();
    let id = index.insert(&row).unwrap();
    assert_eq!(id, 500);
    let (res, _) = index.search(&row, &SearchParams::new(2, 50)).unwrap();
    assert!(res.iter().all(|r| r.distance == 0.0));
    assert!(index.insert(&row[..d - 1]).is_err());
    assert_eq!(index.check_invariants(), Ok(()));
}
