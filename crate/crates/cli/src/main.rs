use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pag::bench::{
    gen_synthetic, ground_truth, prt_pass_rate, pes_accept_rate, run_insert_workload,
    run_sweep, validate_theorem, Distribution, GroundTruth, SweepConfig,
};
use pag::persist;
use pag::vecstore::{load_id_lists, load_vectors, write_fvecs};
use pag::{BuildParams, Metric, PagIndex, SearchParams, VecFormat, VectorSet};

#[derive(Parser)]
#[command(name = "pag", version, about = "Projection-augmented graph index tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index and save it
    Build {
        #[command(flatten)]
        run: RunArgs,
        /// Index file to write
        #[arg(long)]
        index: PathBuf,
    },
    /// Search a saved index; one CSV row per query
    Search {
        #[arg(long)]
        index: PathBuf,
        /// Query vectors (.fvecs / .bvecs)
        #[arg(long)]
        queries: PathBuf,
        /// Ground truth (CSV from `ground-truth` or .ivecs) for recall
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        ef: usize,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        prt: bool,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        tfb: bool,
        /// Also write the result ids and distances as CSV
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Build (or load) an index and sweep efS x K
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Use a saved index instead of building
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Exhaustive nearest neighbors; CSV of (query, rank, id, distance)
    GroundTruth {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(short, long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value = "euclidean")]
        metric: Metric,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset as .fvecs
    Gen {
        #[arg(long, default_value = "gaussian")]
        distribution: Distribution,
        #[arg(short, long)]
        n: usize,
        #[arg(short, long)]
        d: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output .fvecs file
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo checks of the routing statistics
    ValidateTheorem {
        #[arg(short, long, default_value_t = 256)]
        d: usize,
        /// Comma-separated subspace counts
        #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
        l: Vec<usize>,
        /// Comma-separated angles in degrees
        #[arg(long, value_delimiter = ',', default_value = "0,60,90")]
        alpha: Vec<f64>,
        #[arg(long, default_value_t = 20_000)]
        trials: usize,
        #[arg(long, default_value_t = 5)]
        buckets: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also estimate routing-test and edge-selection rates
        #[arg(long)]
        rates: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Interleaved online insertion and search batches
    InsertBench {
        #[command(flatten)]
        run: RunArgs,
        /// Fraction of the base set inserted online after the initial build
        #[arg(long, default_value_t = 0.1)]
        online_fraction: f64,
        #[arg(long, default_value_t = 20)]
        batches: usize,
        /// Check index invariants after every batch
        #[arg(long)]
        check: bool,
    },
}

/// Settings shared by `build`, `bench` and `insert-bench`. Flags override
/// values read from `--config`.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunArgs {
    /// Key-value config file (`key = value` per line)
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Base vectors (.fvecs / .bvecs); omit to synthesize
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    distribution: Option<Distribution>,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(short, long)]
    d: Option<usize>,
    /// Number of synthetic queries
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(short = 'm', long)]
    m: Option<usize>,
    #[arg(long)]
    ef_construction: Option<usize>,
    #[arg(long)]
    num_subspaces: Option<usize>,
    /// Construction working-set size (also the entry-node count)
    #[arg(long)]
    build_beam: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ef_search: Option<Vec<usize>>,
    #[arg(short, long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, action = clap::ArgAction::Set)]
    prt: Option<bool>,
    #[arg(long, action = clap::ArgAction::Set)]
    tfb: Option<bool>,
    #[arg(long, action = clap::ArgAction::Set)]
    pes: Option<bool>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunArgs {
    /// Config-file values with command-line flags layered on top.
    fn resolve(&self) -> Result<RunArgs> {
        let mut merged = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                toml::from_str::<RunArgs>(&text)
                    .with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunArgs::default(),
        };
        overlay!(
            merged, self, base, queries, truth, distribution, n, d, nq, metric, m,
            ef_construction, num_subspaces, build_beam, ef_search, k, prt, tfb, pes, threads,
            output, seed
        );
        Ok(merged)
    }

    fn metric(&self) -> Metric {
        self.metric.unwrap_or(Metric::Euclidean)
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    fn build_params(&self) -> BuildParams {
        let d = BuildParams::default();
        BuildParams {
            m: self.m.unwrap_or(d.m),
            ef_construction: self.ef_construction.unwrap_or(d.ef_construction),
            num_subspaces: self.num_subspaces,
            beam: self.build_beam.unwrap_or(d.beam),
            seed: self.seed(),
            prt: self.prt.unwrap_or(true),
            tfb: self.tfb.unwrap_or(true),
            pes: self.pes.unwrap_or(true),
            threads: self.threads.unwrap_or(1),
            ..d
        }
    }

    fn sweep(&self) -> SweepConfig {
        SweepConfig {
            ef_search: self.ef_search.clone().unwrap_or_else(|| vec![50, 100, 200, 400]),
            ks: self.k.clone().unwrap_or_else(|| vec![10]),
            prt: self.prt.unwrap_or(true),
            tfb: self.tfb.unwrap_or(true),
        }
    }

    /// Base rows and query set: read from files, or synthesized with
    /// held-out queries drawn from the same distribution.
    fn data(&self) -> Result<(Vec<f32>, usize, VectorSet)> {
        let metric = self.metric();
        match &self.base {
            Some(base) => {
                let (flat, dim) = read_flat(base)?;
                let queries = match &self.queries {
                    Some(q) => load_vectors(q, format_of(q)?, metric, 1)?,
                    None => bail!("--queries is required with --base"),
                };
                Ok((flat, dim, queries))
            }
            None => {
                let dist = self.distribution.unwrap_or(Distribution::Gaussian);
                let n = self.n.unwrap_or(10_000);
                let d = self.d.unwrap_or(128);
                let nq = self.nq.unwrap_or(100);
                let all = gen_synthetic(dist, n + nq, d, self.seed());
                let queries = VectorSet::from_flat(&all[n * d..], d, 1, metric)?;
                Ok((all[..n * d].to_vec(), d, queries))
            }
        }
    }

    fn truth(&self, base: &VectorSet, queries: &VectorSet, k: usize) -> Result<GroundTruth> {
        match &self.truth {
            Some(path) => read_truth(path),
            None => Ok(ground_truth(base, queries, k)?),
        }
    }
}

fn format_of(path: &Path) -> Result<VecFormat> {
    VecFormat::from_path(path)
        .with_context(|| format!("unknown vector file extension: {}", path.display()))
}

fn read_flat(path: &Path) -> Result<(Vec<f32>, usize)> {
    Ok(pag::vecstore::read_vectors(path, format_of(path)?)?)
}

fn output(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    Ok(csv::Writer::from_writer(sink))
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    query: usize,
    rank: usize,
    id: u32,
    distance: f32,
}

fn read_truth(path: &Path) -> Result<GroundTruth> {
    if path.extension().is_some_and(|e| e == "ivecs") {
        let ids = load_id_lists(path)?;
        // Without distances no tie can be detected.
        let distances = ids.iter().map(|r| vec![f32::NEG_INFINITY; r.len()]).collect();
        return Ok(GroundTruth { ids, distances });
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut gt = GroundTruth {
        ids: Vec::new(),
        distances: Vec::new(),
    };
    for rec in reader.deserialize::<TruthRecord>() {
        let rec = rec?;
        while gt.ids.len() <= rec.query {
            gt.ids.push(Vec::new());
            gt.distances.push(Vec::new());
        }
        if rec.rank != gt.ids[rec.query].len() {
            bail!("truth rows must be listed in rank order (query {})", rec.query);
        }
        gt.ids[rec.query].push(rec.id);
        gt.distances[rec.query].push(rec.distance);
    }
    Ok(gt)
}

#[derive(Serialize)]
struct BuildRecord {
    n: usize,
    d: usize,
    num_subspaces: usize,
    m: usize,
    ef_construction: usize,
    build_secs: f64,
    edges: usize,
    adjacency_bytes: usize,
    zero_in_degree: usize,
    pes_examined: usize,
    pes_added: usize,
}

#[derive(Serialize)]
struct QueryRecord {
    query_id: usize,
    k: usize,
    ef_search: usize,
    recall: Option<f64>,
    exact_dist_count: u64,
    test_count: u64,
    gamma: f64,
    latency_ns: u128,
}

#[derive(Serialize)]
struct ResultRecord {
    query_id: usize,
    rank: usize,
    id: u32,
    distance: f32,
}

#[derive(Serialize)]
struct RateRecord {
    test: &'static str,
    trials: usize,
    successes: usize,
    rate: f64,
    std_error: f64,
    at_least_half_3se: bool,
}

#[derive(Serialize)]
struct VarianceRecord {
    alpha_deg: f64,
    larger_l: usize,
    smaller_l: usize,
    mean_variance_ratio: f64,
}

fn build_index(run: &RunArgs, flat: &[f32], dim: usize) -> Result<(PagIndex, f64)> {
    let base = VectorSet::from_flat(flat, dim, 1, run.metric())?;
    let start = Instant::now();
    let index = PagIndex::build(base, run.build_params())?;
    Ok((index, start.elapsed().as_secs_f64()))
}

fn cmd_build(run: RunArgs, path: PathBuf) -> Result<()> {
    let run = run.resolve()?;
    let (flat, dim, _) = run.data()?;
    let (index, secs) = build_index(&run, &flat, dim)?;
    persist::save(&index, &path)?;
    let flush = index.flush_history().iter().fold((0, 0), |a, f| (a.0 + f.examined, a.1 + f.added));
    let mut w = output(run.output.as_deref())?;
    w.serialize(BuildRecord {
        n: index.len(),
        d: dim,
        num_subspaces: index.references().num_subspaces(),
        m: index.params().m,
        ef_construction: index.params().ef_construction,
        build_secs: secs,
        edges: index.edge_count(),
        adjacency_bytes: index.adjacency_bytes(),
        zero_in_degree: index.orphan_count(),
        pes_examined: flush.0,
        pes_added: flush.1,
    })?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    index: PathBuf,
    queries: PathBuf,
    truth: Option<PathBuf>,
    k: usize,
    ef: usize,
    prt: bool,
    tfb: bool,
    results: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let index = persist::load(&index)?;
    let metric = index.vectors().metric();
    let queries = load_vectors(&queries, format_of(&queries)?, metric, 1)?;
    let truth = truth.as_deref().map(read_truth).transpose()?;
    let mut params = SearchParams::new(k, ef);
    params.prt = prt;
    if !tfb {
        params = params.without_tfb();
    }
    params.validate()?;
    let mut w = output(out.as_deref())?;
    let mut rw = results.as_deref().map(|p| output(Some(p))).transpose()?;
    for q in 0..queries.len() {
        let row = &queries.row(q as u32)[..queries.dim()];
        let start = Instant::now();
        let (res, stats) = index.search(row, &params)?;
        let latency_ns = start.elapsed().as_nanos();
        let recall = truth.as_ref().and_then(|t| {
            t.ids.get(q).map(|ids| pag::bench::recall_with_ties(&res, ids, &t.distances[q], k))
        });
        w.serialize(QueryRecord {
            query_id: q,
            k,
            ef_search: ef,
            recall,
            exact_dist_count: stats.exact_dist_count,
            test_count: stats.test_count,
            gamma: stats.gamma(),
            latency_ns,
        })?;
        if let Some(rw) = rw.as_mut() {
            for (rank, r) in res.iter().enumerate() {
                rw.serialize(ResultRecord {
                    query_id: q,
                    rank,
                    id: r.id,
                    distance: r.distance,
                })?;
            }
        }
    }
    w.flush()?;
    if let Some(mut rw) = rw {
        rw.flush()?;
    }
    Ok(())
}

fn cmd_bench(run: RunArgs, saved: Option<PathBuf>) -> Result<()> {
    let run = run.resolve()?;
    let sweep = run.sweep();
    sweep.validate()?;
    let (index, build_secs, queries) = match saved {
        Some(path) => {
            let index = persist::load(&path)?;
            let queries = match &run.queries {
                Some(q) => load_vectors(q, format_of(q)?, index.vectors().metric(), 1)?,
                None => bail!("--queries is required with --index"),
            };
            (index, 0.0, queries)
        }
        None => {
            let (flat, dim, queries) = run.data()?;
            let (index, secs) = build_index(&run, &flat, dim)?;
            (index, secs, queries)
        }
    };
    let kmax = sweep.ks.iter().copied().max().unwrap_or(10);
    let truth = run.truth(index.vectors(), &queries, kmax)?;
    let rows = run_sweep(&index, build_secs, &queries, &truth, &sweep)?;
    let mut w = output(run.output.as_deref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ground_truth(base: PathBuf, queries: PathBuf, k: usize, metric: Metric, out: Option<PathBuf>) -> Result<()> {
    let base = load_vectors(&base, format_of(&base)?, metric, 1)?;
    let queries = load_vectors(&queries, format_of(&queries)?, metric, 1)?;
    let gt = ground_truth(&base, &queries, k)?;
    let mut w = output(out.as_deref())?;
    for (q, (ids, ds)) in gt.ids.iter().zip(&gt.distances).enumerate() {
        for (rank, (&id, &distance)) in ids.iter().zip(ds).enumerate() {
            w.serialize(TruthRecord {
                query: q,
                rank,
                id,
                distance,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GenRecord<'a> {
    path: &'a str,
    distribution: Distribution,
    n: usize,
    d: usize,
    seed: u64,
}

fn cmd_gen(distribution: Distribution, n: usize, d: usize, seed: u64, out: PathBuf) -> Result<()> {
    if n == 0 || d == 0 {
        bail!("n and d must be positive");
    }
    let flat = gen_synthetic(distribution, n, d, seed);
    write_fvecs(&out, &flat, d)?;
    let mut w = output(None)?;
    w.serialize(GenRecord {
        path: &out.to_string_lossy(),
        distribution,
        n,
        d,
        seed,
    })?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_validate(
    d: usize,
    l: Vec<usize>,
    alpha: Vec<f64>,
    trials: usize,
    buckets: usize,
    seed: u64,
    rates: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let report = validate_theorem(d, &l, &alpha, trials, buckets, seed)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    let mut w = output(out.as_deref())?;
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let ratio_path = out.as_ref().map(|p| p.with_extension("variance.csv"));
    let mut w = output(ratio_path.as_deref())?;
    for &(alpha_deg, larger_l, smaller_l, mean_variance_ratio) in &report.variance_ratios {
        w.serialize(VarianceRecord {
            alpha_deg,
            larger_l,
            smaller_l,
            mean_variance_ratio,
        })?;
    }
    w.flush()?;
    if rates {
        let l0 = *l.first().unwrap_or(&16);
        let prt = prt_pass_rate(d, l0, trials, seed)?;
        let pes = pes_accept_rate(d, l0, 16, trials, seed)?;
        let rate_path = out.as_ref().map(|p| p.with_extension("rates.csv"));
        let mut w = output(rate_path.as_deref())?;
        for (test, r) in [("prt", prt), ("pes", pes)] {
            w.serialize(RateRecord {
                test,
                trials: r.trials,
                successes: r.successes,
                rate: r.rate(),
                std_error: r.std_error(),
                at_least_half_3se: r.at_least(0.5),
            })?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_insert_bench(run: RunArgs, online_fraction: f64, batches: usize, check: bool) -> Result<()> {
    let run = run.resolve()?;
    if !(0.0..1.0).contains(&online_fraction) {
        bail!("--online-fraction must be in [0, 1)");
    }
    let (flat, dim, queries) = run.data()?;
    let n = flat.len() / dim;
    let n0 = n - (n as f64 * online_fraction).round() as usize;
    let (mut index, _) = build_index(&run, &flat[..n0 * dim], dim)?;
    let k = run.k.as_ref().and_then(|v| v.first().copied()).unwrap_or(10);
    let ef = run.ef_search.as_ref().and_then(|v| v.first().copied()).unwrap_or(200);
    let mut params = SearchParams::new(k, ef);
    params.prt = run.prt.unwrap_or(true);
    if !run.tfb.unwrap_or(true) {
        params = params.without_tfb();
    }
    let rows = run_insert_workload(&mut index, &flat[n0 * dim..], &queries, &params, batches, check)?;
    let mut w = output(run.output.as_deref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Build { run, index } => cmd_build(run, index),
        Command::Search {
            index,
            queries,
            truth,
            k,
            ef,
            prt,
            tfb,
            results,
            output,
        } => cmd_search(index, queries, truth, k, ef, prt, tfb, results, output),
        Command::Bench { run, index } => cmd_bench(run, index),
        Command::GroundTruth {
            base,
            queries,
            k,
            metric,
            output,
        } => cmd_ground_truth(base, queries, k, metric, output),
        Command::Gen {
            distribution,
            n,
            d,
            seed,
            out,
        } => cmd_gen(distribution, n, d, seed, out),
        Command::ValidateTheorem {
            d,
            l,
            alpha,
            trials,
            buckets,
            seed,
            rates,
            output,
        } => cmd_validate(d, l, alpha, trials, buckets, seed, rates, output),
        Command::InsertBench {
            run,
            online_fraction,
            batches,
            check,
        } => cmd_insert_bench(run, online_fraction, batches, check),
    }
}
