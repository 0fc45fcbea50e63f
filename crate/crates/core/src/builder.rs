//! Index construction: pruning, insertion and deferred edge selection.
//!
//! Every node is inserted by searching for it with the buffered engine,
//! pruning the result list into its out-neighbors, and offering the reverse
//! edge to each chosen neighbor. While searching, each expanded node `u`
//! also runs the edge-selection test: when none of `u`'s out-neighbors looks
//! like a relay toward the new node `v`, the edge `u -> v` is recorded in the
//! pending edge set. The pending set is verified with exact distances and
//! merged into the graph at the end of a build, or periodically during
//! online insertion.

use std::collections::HashSet;

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Graph, LinkView, Links};
use crate::projection::{default_num_subspaces, ReferenceSet, DEFAULT_REFS_PER_SUBSPACE};
use crate::routing::{
    search_graph, to_neighbors, with_thread_scratch, Candidate, Neighbor, SearchParams,
    SearchScratch, SearchStats,
};
use crate::vecstore::{sq_dist, VectorSet};

pub const DEFAULT_M: usize = 16;
pub const DEFAULT_EF_CONSTRUCTION: usize = 200;
pub const DEFAULT_BUILD_BEAM: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct BuildParams {
    /// Half the maximum out-degree.
    pub m: usize,
    /// Result-list capacity of construction searches.
    pub ef_construction: usize,
    /// Subspace count; `None` picks [`default_num_subspaces`].
    pub num_subspaces: Option<usize>,
    /// Working-set size of construction searches; also the number of entry nodes.
    pub beam: usize,
    pub seed: u64,
    /// Online insertions between pending-edge flushes; `None` uses
    /// `max(1000, n / 100)` with `n` the size at build time.
    pub pes_flush_interval: Option<usize>,
    /// Use the routing test during construction searches.
    pub prt: bool,
    /// Use buffered rounds during construction searches.
    pub tfb: bool,
    /// Collect and flush edge-selection candidates.
    pub pes: bool,
    /// Worker threads for `build`; `1` is sequential and deterministic.
    pub threads: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            ef_construction: DEFAULT_EF_CONSTRUCTION,
            num_subspaces: None,
            beam: DEFAULT_BUILD_BEAM,
            seed: 0x5eed,
            pes_flush_interval: None,
            prt: true,
            tfb: true,
            pes: true,
            threads: 1,
        }
    }
}

impl BuildParams {
    pub fn max_degree(&self) -> usize {
        2 * self.m
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("M must be positive"));
        }
        if self.beam < 10 {
            return Err(Error::param(format!(
                "construction working-set size {} is below 10",
                self.beam
            )));
        }
        if self.ef_construction < self.beam {
            return Err(Error::param(format!(
                "efC ({}) must be >= the construction working-set size ({})",
                self.ef_construction, self.beam
            )));
        }
        if let Some(l) = self.num_subspaces {
            if l == 0 || l > dim {
                return Err(Error::param(format!("invalid subspace count {l} for d={dim}")));
            }
        }
        Ok(())
    }

    fn search_params(&self) -> SearchParams {
        let mut p = SearchParams::new(self.ef_construction, self.ef_construction);
        p.beam = self.beam;
        p.prt = self.prt;
        if !self.tfb {
            p = p.without_tfb();
        }
        p
    }
}

/// Deduplicated directed candidate edges `(u, v)` awaiting verification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PesSet {
    entries: HashSet<(u32, u32)>,
}

impl PesSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `u -> v`; self-edges and repeats are ignored.
    pub fn insert(&mut self, u: u32, v: u32) -> bool {
        u != v && self.entries.insert((u, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, u: u32, v: u32) -> bool {
        self.entries.contains(&(u, v))
    }

    /// Entries in a deterministic order, emptying the set.
    fn drain_sorted(&mut self) -> Vec<(u32, u32)> {
        let mut out: Vec<_> = self.entries.drain().collect();
        out.sort_unstable();
        out
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = &(u32, u32)> {
        self.entries.iter()
    }
}

/// Outcome counts of one pending-edge flush.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlushStats {
    pub examined: usize,
    pub added: usize,
    pub already_linked: usize,
    /// Discarded because some out-neighbor of `u` relays to `v`.
    pub witnessed: usize,
    /// Verified but dropped because `u` is at the degree cap.
    pub at_cap: usize,
}

/// Keeps a candidate unless an already-kept one relays to it.
///
/// `candidates` must be sorted by ascending distance to the pruned node,
/// with `dist` the squared distance. Candidate `c` is dropped when some kept
/// `k` satisfies `|k - c| <= |v - c|`; the scan stops after `cap` keeps.
pub fn robust_prune_by<F>(candidates: &[Candidate], cap: usize, mut sq_dist_between: F) -> Vec<Candidate>
where
    F: FnMut(u32, u32) -> f32,
{
    let mut kept: Vec<Candidate> = Vec::with_capacity(cap);
    for &c in candidates {
        if kept.len() >= cap {
            break;
        }
        if kept.iter().all(|k| sq_dist_between(k.id, c.id) > c.dist) {
            kept.push(c);
        }
    }
    kept
}

/// [`robust_prune_by`] over stored vectors, skipping `v` itself.
pub fn robust_prune(vectors: &VectorSet, v: u32, candidates: &[Candidate], cap: usize) -> Vec<Candidate> {
    let filtered: Vec<Candidate> = candidates.iter().copied().filter(|c| c.id != v).collect();
    robust_prune_by(&filtered, cap, |a, b| vectors.sq_dist(a, b))
}

/// A projection-augmented similarity graph.
#[derive(Debug)]
pub struct PagIndex {
    vectors: VectorSet,
    refs: ReferenceSet,
    links: Vec<RwLock<Links>>,
    entry: Vec<u32>,
    params: BuildParams,
    pending: PesSet,
    flush_interval: usize,
    inserts_since_flush: usize,
    flushes: Vec<FlushStats>,
}

impl Graph for PagIndex {
    fn vectors(&self) -> &VectorSet {
        &self.vectors
    }

    fn references(&self) -> &ReferenceSet {
        &self.refs
    }

    fn entry_nodes(&self) -> &[u32] {
        &self.entry
    }

    #[inline]
    fn with_links<R>(&self, node: u32, f: impl FnOnce(LinkView<'_>) -> R) -> R {
        let links = self.links[node as usize].read();
        f(links.view(self.refs.code_bytes()))
    }
}

impl PagIndex {
    /// Builds an index over `vectors`.
    pub fn build(vectors: VectorSet, params: BuildParams) -> Result<Self> {
        params.validate(vectors.dim())?;
        let n = vectors.len();
        if n < params.beam {
            return Err(Error::param(format!(
                "need at least {} vectors to seed the graph, got {n}",
                params.beam
            )));
        }
        let num_subspaces = params
            .num_subspaces
            .unwrap_or_else(|| default_num_subspaces(vectors.dim()));
        let vectors = vectors.repadded(num_subspaces);
        let refs = ReferenceSet::generate(
            vectors.padded_dim(),
            num_subspaces,
            DEFAULT_REFS_PER_SUBSPACE,
            params.seed,
        )?;
        let entry = nearest_to_centroid(&vectors, params.beam);
        let flush_interval = params.pes_flush_interval.unwrap_or((n / 100).max(1000));
        let mut index = PagIndex {
            links: (0..n).map(|_| RwLock::new(Links::default())).collect(),
            vectors,
            refs,
            entry,
            params,
            pending: PesSet::new(),
            flush_interval,
            inserts_since_flush: 0,
            flushes: Vec::new(),
        };
        index.connect_entries()?;

        let is_entry: HashSet<u32> = index.entry.iter().copied().collect();
        let order: Vec<u32> = (0..n as u32).filter(|v| !is_entry.contains(v)).collect();
        let pending = Mutex::new(PesSet::new());
        if index.params.threads <= 1 {
            let mut scratch = SearchScratch::new();
            let mut rejected = Vec::new();
            for &v in &order {
                index.insert_node(v, &mut scratch, &mut rejected);
                let mut p = pending.lock();
                rejected.drain(..).for_each(|u| {
                    p.insert(u, v);
                });
            }
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(index.params.threads)
                .build()
                .map_err(|e| Error::param(format!("thread pool: {e}")))?;
            let shared = &index;
            pool.install(|| {
                order.par_iter().for_each_init(
                    || (SearchScratch::new(), Vec::new()),
                    |(scratch, rejected), &v| {
                        shared.insert_node(v, scratch, rejected);
                        if !rejected.is_empty() {
                            let mut p = pending.lock();
                            rejected.drain(..).for_each(|u| {
                                p.insert(u, v);
                            });
                        }
                    },
                )
            });
        }
        index.pending = pending.into_inner();
        if index.params.pes {
            index.flush_pes_set();
        } else {
            index.pending = PesSet::new();
        }
        Ok(index)
    }

    /// Links the entry nodes completely (pruned to the degree cap if needed).
    fn connect_entries(&mut self) -> Result<()> {
        let cap = self.params.max_degree();
        for &u in &self.entry {
            let mut cands: Vec<Candidate> = self
                .entry
                .iter()
                .filter(|&&w| w != u)
                .map(|&w| Candidate {
                    dist: self.vectors.sq_dist(u, w),
                    id: w,
                })
                .filter(|c| c.dist > 0.0)
                .collect();
            cands.sort();
            let chosen = if cands.len() > cap {
                robust_prune(&self.vectors, u, &cands, cap)
            } else {
                cands
            };
            let links = self.encode_links(u, chosen.iter().map(|c| c.id))?;
            *self.links[u as usize].get_mut() = links;
        }
        Ok(())
    }

    fn encode_links(&self, u: u32, targets: impl Iterator<Item = u32>) -> Result<Links> {
        let cb = self.refs.code_bytes();
        let mut links = Links::with_capacity(self.params.max_degree(), cb);
        let mut codes = vec![0u8; cb];
        for w in targets {
            let geom = self
                .refs
                .encode_into(self.vectors.row(u), self.vectors.row(w), &mut codes)
                .map_err(|_| Error::DuplicateEdge(u, w))?;
            links.push(w, &codes, geom);
        }
        Ok(links)
    }

    /// Inserts node `v` (already stored) into the graph.
    ///
    /// Ids of nodes rejected by the edge test are appended to `rejected`.
    fn insert_node(&self, v: u32, scratch: &mut SearchScratch, rejected: &mut Vec<u32>) -> SearchStats {
        let query = self.vectors.row(v);
        let collect = self.params.pes.then_some(&mut *rejected);
        let (found, stats) = search_graph(self, query, &self.params.search_params(), scratch, collect);
        rejected.retain(|&u| u != v);

        // Duplicates of v are never linked directly.
        let cands: Vec<Candidate> = found
            .into_iter()
            .filter(|c| c.id != v && c.dist > 0.0)
            .collect();
        let chosen = robust_prune(&self.vectors, v, &cands, self.params.max_degree());
        let out = self
            .encode_links(v, chosen.iter().map(|c| c.id))
            .expect("zero-length edges were filtered");
        *self.links[v as usize].write() = out;
        for c in &chosen {
            self.add_reverse_edge(c.id, v, c.dist);
        }
        stats
    }

    /// Offers `u -> v` where `dist` is `|u - v|^2`. Below the degree cap the
    /// edge is appended; at the cap `u`'s list plus `v` is re-pruned.
    fn add_reverse_edge(&self, u: u32, v: u32, dist: f32) -> bool {
        let cap = self.params.max_degree();
        let cb = self.refs.code_bytes();
        let mut guard = self.links[u as usize].write();
        if guard.contains(v) || u == v || dist == 0.0 {
            return false;
        }
        let mut codes = vec![0u8; cb];
        if guard.len() < cap {
            let geom = self
                .refs
                .encode_into(self.vectors.row(u), self.vectors.row(v), &mut codes)
                .expect("nonzero edge");
            guard.push(v, &codes, geom);
            return true;
        }
        let mut cands: Vec<Candidate> = guard
            .targets()
            .iter()
            .map(|&w| Candidate {
                dist: self.vectors.sq_dist(u, w),
                id: w,
            })
            .collect();
        cands.push(Candidate { dist, id: v });
        cands.sort();
        let kept = robust_prune(&self.vectors, u, &cands, cap);
        let old = std::mem::take(&mut *guard);
        let mut next = Links::with_capacity(cap, cb);
        let mut linked = false;
        for c in &kept {
            if c.id == v {
                let geom = self
                    .refs
                    .encode_into(self.vectors.row(u), self.vectors.row(v), &mut codes)
                    .expect("nonzero edge");
                next.push(v, &codes, geom);
                linked = true;
            } else {
                let i = old.targets().iter().position(|&t| t == c.id).unwrap();
                next.push(c.id, &old.codes[i * cb..(i + 1) * cb], old.geometry[i]);
            }
        }
        *guard = next;
        linked
    }

    /// Verifies pending candidate edges with exact distances and adds the
    /// survivors.
    ///
    /// `u -> v` survives when no out-neighbor `w` of `u` satisfies both
    /// `|w - v| <= |v - u|` and `|w - u| <= |v - u|`. Existing edges are never
    /// removed, so a survivor is only added while `u` is below the degree cap.
    pub fn flush_pes_set(&mut self) -> FlushStats {
        let cap = self.params.max_degree();
        let cb = self.refs.code_bytes();
        let mut stats = FlushStats::default();
        let mut codes = vec![0u8; cb];
        for (u, v) in self.pending.drain_sorted() {
            stats.examined += 1;
            let links = self.links[u as usize].get_mut();
            if links.contains(v) {
                stats.already_linked += 1;
                continue;
            }
            let d_uv = sq_dist(self.vectors.row(u), self.vectors.row(v));
            if d_uv == 0.0 {
                stats.witnessed += 1;
                continue;
            }
            let vectors = &self.vectors;
            let witnessed = links.targets().iter().any(|&w| {
                vectors.sq_dist(w, v) <= d_uv && vectors.sq_dist(w, u) <= d_uv
            });
            if witnessed {
                stats.witnessed += 1;
                continue;
            }
            if links.len() >= cap {
                stats.at_cap += 1;
                continue;
            }
            let geom = self
                .refs
                .encode_into(vectors.row(u), vectors.row(v), &mut codes)
                .expect("nonzero edge");
            links.push(v, &codes, geom);
            stats.added += 1;
        }
        self.inserts_since_flush = 0;
        self.flushes.push(stats);
        stats
    }

    /// Outcomes of every flush so far, oldest first.
    pub fn flush_history(&self) -> &[FlushStats] {
        &self.flushes
    }

    /// Appends `x` to the index and links it. Every `pes_flush_interval`
    /// insertions the pending edge set is flushed.
    pub fn insert(&mut self, x: &[f32]) -> Result<u32> {
        let v = self.vectors.push(x)?;
        self.links.push(RwLock::new(Links::default()));
        let mut rejected = Vec::new();
        with_thread_scratch(|scratch| {
            self.insert_node(v, scratch, &mut rejected);
        });
        if self.params.pes {
            for u in rejected {
                self.pending.insert(u, v);
            }
        }
        self.inserts_since_flush += 1;
        if self.params.pes && self.inserts_since_flush >= self.flush_interval {
            self.flush_pes_set();
        }
        Ok(v)
    }

    /// Searches for the `params.k` nearest stored vectors to `query`.
    pub fn search(&self, query: &[f32], params: &SearchParams) -> Result<(Vec<Neighbor>, SearchStats)> {
        with_thread_scratch(|scratch| self.search_with(query, params, scratch))
    }

    /// [`PagIndex::search`] with caller-owned scratch space.
    pub fn search_with(
        &self,
        query: &[f32],
        params: &SearchParams,
        scratch: &mut SearchScratch,
    ) -> Result<(Vec<Neighbor>, SearchStats)> {
        params.validate()?;
        if self.vectors.is_empty() {
            return Err(Error::Empty("index has no vectors".into()));
        }
        let q = self.vectors.prepare(query)?;
        let (found, stats) = search_graph(self, &q, params, scratch, None);
        Ok((to_neighbors(&found), stats))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &VectorSet {
        &self.vectors
    }

    pub fn references(&self) -> &ReferenceSet {
        &self.refs
    }

    pub fn params(&self) -> &BuildParams {
        &self.params
    }

    pub fn entry(&self) -> &[u32] {
        &self.entry
    }

    pub fn pending(&self) -> &PesSet {
        &self.pending
    }

    pub fn flush_interval(&self) -> usize {
        self.flush_interval
    }

    /// Out-neighbor ids of `u`.
    pub fn neighbors(&self, u: u32) -> Vec<u32> {
        self.links[u as usize].read().targets().to_vec()
    }

    /// A copy of `u`'s out-edges with their inference records.
    pub fn links(&self, u: u32) -> Links {
        self.links[u as usize].read().clone()
    }

    pub fn edge_count(&self) -> usize {
        self.links.iter().map(|l| l.read().len()).sum()
    }

    /// Bytes held by adjacency lists and their inference records.
    pub fn adjacency_bytes(&self) -> usize {
        self.links.iter().map(|l| l.read().heap_bytes()).sum()
    }

    /// Nodes (other than entry nodes) without any in-edge.
    pub fn orphan_count(&self) -> usize {
        let mut has_in = vec![false; self.len()];
        for l in &self.links {
            for &t in l.read().targets() {
                has_in[t as usize] = true;
            }
        }
        for &e in &self.entry {
            has_in[e as usize] = true;
        }
        has_in.iter().filter(|&&b| !b).count()
    }

    /// Checks the structural invariants; returns the first violation found.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let cap = self.params.max_degree();
        let cb = self.refs.code_bytes();
        for (u, l) in self.links.iter().enumerate() {
            let l = l.read();
            let u = u as u32;
            if l.len() > cap {
                return Err(format!("node {u} has out-degree {} > {cap}", l.len()));
            }
            if l.codes.len() != l.len() * cb || l.geometry.len() != l.len() {
                return Err(format!("node {u} has inconsistent edge columns"));
            }
            let mut seen = HashSet::new();
            for (i, &w) in l.targets().iter().enumerate() {
                if w == u {
                    return Err(format!("self-loop at {u}"));
                }
                if w as usize >= self.len() {
                    return Err(format!("edge {u} -> {w} points past the end"));
                }
                if !seen.insert(w) {
                    return Err(format!("duplicate edge {u} -> {w}"));
                }
                let expected = self
                    .refs
                    .encode_edge(self.vectors.row(u), self.vectors.row(w))
                    .map_err(|_| format!("zero-length edge {u} -> {w}"))?;
                let got = l.geometry[i];
                let close = |a: f32, b: f32| (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0);
                if !close(got.edge_norm, expected.geometry.edge_norm)
                    || !close(got.cos_beta, expected.geometry.cos_beta)
                    || !close(got.base_offset, expected.geometry.base_offset)
                    || l.codes[i * cb..(i + 1) * cb] != expected.codes[..]
                {
                    return Err(format!("stale inference record on edge {u} -> {w}"));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn parts(&self) -> (&VectorSet, &ReferenceSet, &[RwLock<Links>], &[u32], &PesSet) {
        (&self.vectors, &self.refs, &self.links, &self.entry, &self.pending)
    }

    pub(crate) fn from_parts(
        vectors: VectorSet,
        refs: ReferenceSet,
        links: Vec<Links>,
        entry: Vec<u32>,
        params: BuildParams,
        pending: PesSet,
        flush_interval: usize,
    ) -> Self {
        PagIndex {
            vectors,
            refs,
            links: links.into_iter().map(RwLock::new).collect(),
            entry,
            params,
            pending,
            flush_interval,
            inserts_since_flush: 0,
            flushes: Vec::new(),
        }
    }

    /// Direct access to the pending edge set.
    pub fn pending_mut(&mut self) -> &mut PesSet {
        &mut self.pending
    }
}

/// The `count` vectors nearest to the centroid, ties by id.
fn nearest_to_centroid(vectors: &VectorSet, count: usize) -> Vec<u32> {
    let dim = vectors.padded_dim();
    let mut centroid = vec![0.0f64; dim];
    for row in vectors.iter() {
        centroid.iter_mut().zip(row).for_each(|(c, x)| *c += *x as f64);
    }
    let centroid: Vec<f32> = centroid
        .iter()
        .map(|c| (c / vectors.len() as f64) as f32)
        .collect();
    let mut cands: Vec<Candidate> = vectors
        .iter()
        .enumerate()
        .map(|(i, row)| Candidate {
            dist: sq_dist(row, &centroid),
            id: i as u32,
        })
        .collect();
    let count = count.min(cands.len());
    cands.select_nth_unstable(count.saturating_sub(1));
    let mut chosen: Vec<Candidate> = cands[..count].to_vec();
    chosen.sort();
    chosen.into_iter().map(|c| c.id).collect()
}
