//! Projection-based routing tests and the round-based buffered search.
//!
//! A search keeps four containers: the bounded result list, a working set
//! of `b` candidates that is explored best-first, and two buffers of
//! capacity `b` holding nodes whose exact distances were computed but which
//! are not in the working set: `ring_t` for nodes ejected from the working
//! set and `ring_f` for false positives (they passed the routing test but
//! were farther than the current worst working entry `z_max`).
//!
//! Each round expands every unexpanded working entry. When the working set
//! is exhausted it is flushed into the result list, both buffers are merged
//! and sorted, the nearest `b` refill the working set and the remainder
//! refills `ring_t`. Nodes whose exact distance is known are never tested
//! again within the same query.
//!
//! Before computing the exact distance to an out-neighbor `w` of `u`, the
//! engine estimates the cosine between `w - u` and `q - u` from the projection
//! table and admits `w` only when the estimate clears the threshold `tau`
//! at which `w` would be closer to `q` than `z_max`.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::graph::{Graph, LinkView};
use crate::projection::ProjectionTable;
use crate::vecstore::sq_dist;

/// Thresholds at or above this value cannot be met by any cosine.
const TAU_CEILING: f32 = 1.0 + 1e-6;

/// Smallest working-set size used for searches.
pub const MIN_BEAM: usize = 10;

/// Admission threshold on `cos(w - u, q - u)` for `w` to beat `z_max`.
///
/// All arguments are true (non-squared) distances: `edge_norm = |w - u|`,
/// `dist_uq = |q - u|` and `dist_zmax = |z_max - q|`. Follows from the law of
/// cosines: `|w - q|^2 = |w - u|^2 + |q - u|^2 - 2 |w - u| |q - u| cos`.
#[inline]
pub fn prt_threshold(edge_norm: f32, dist_uq: f32, dist_zmax: f32) -> f32 {
    (edge_norm * edge_norm + dist_uq * dist_uq - dist_zmax * dist_zmax)
        / (2.0 * dist_uq * edge_norm)
}

/// Threshold on `cos(w - u, q - u)` for `|w - q| < |q - u|`.
///
/// Identical arithmetic to [`prt_threshold`] with `dist_zmax = dist_uq`.
#[inline]
pub fn pes_threshold(edge_norm: f32, dist_uq: f32) -> f32 {
    prt_threshold(edge_norm, dist_uq, dist_uq)
}

/// The routing test: passes when `cos_theta / cos_beta >= tau`.
///
/// `tau >= 1 + 1e-6` fails without looking at the estimate and `tau <= -1`
/// always passes.
#[inline]
pub fn prt_test(cos_theta: f32, cos_beta: f32, tau: f32) -> bool {
    if tau >= TAU_CEILING {
        return false;
    }
    if tau <= -1.0 {
        return true;
    }
    cos_theta / cos_beta - tau >= 0.0
}

/// Edge-selection margin of one out-edge; the edge test takes the maximum
/// over all out-edges of `u`.
#[inline]
pub fn pes_margin(cos_theta: f32, cos_beta: f32, delta: f32) -> f32 {
    cos_theta / cos_beta - delta
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    /// Euclidean distance to the query.
    pub distance: f32,
}

/// Node id with its squared distance to the query, ordered by `(dist, id)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub dist: f32,
    pub id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchParams {
    /// Number of results returned.
    pub k: usize,
    /// Result-list capacity; also sets the round budget `ceil(ef / beam)`.
    pub ef: usize,
    /// Working-set and buffer capacity `b`.
    pub beam: usize,
    /// With `false` every unvisited neighbor has its exact distance computed.
    pub prt: bool,
    /// Validate the buffer invariants after every step (slow).
    pub check_invariants: bool,
}

impl SearchParams {
    pub fn new(k: usize, ef: usize) -> Self {
        Self {
            k,
            ef,
            beam: k.max(MIN_BEAM),
            prt: true,
            check_invariants: false,
        }
    }

    /// Single round over a working set as large as the result list.
    pub fn without_tfb(mut self) -> Self {
        self.beam = self.ef.max(self.k);
        self
    }

    pub fn without_prt(mut self) -> Self {
        self.prt = false;
        self
    }

    pub fn checked(mut self) -> Self {
        self.check_invariants = true;
        self
    }

    pub fn max_rounds(&self) -> usize {
        self.ef.div_ceil(self.beam).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k must be positive"));
        }
        if self.ef < self.k {
            return Err(Error::param(format!("ef ({}) must be >= k ({})", self.ef, self.k)));
        }
        if self.beam == 0 {
            return Err(Error::param("working-set size must be positive"));
        }
        Ok(())
    }
}

/// Work counters of one search or insertion.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchStats {
    /// Full-dimensional distance computations.
    pub exact_dist_count: u64,
    /// Neighbors considered for an exact distance (routing test evaluations).
    pub test_count: u64,
    /// Neighbors whose exact distance was computed after being considered.
    pub pass_count: u64,
    /// Nodes expanded.
    pub visited_count: u64,
    /// Exact distances computed for the seed entries.
    pub seed_count: u64,
    pub rounds: u64,
    /// Nodes dropped because a full buffer held nearer entries.
    pub buffer_drops: u64,
    pub invariant_violations: u64,
    pub first_violation: Option<String>,
}

impl SearchStats {
    /// Fraction of considered neighbors whose exact distance was computed.
    pub fn gamma(&self) -> f64 {
        if self.test_count == 0 {
            0.0
        } else {
            self.pass_count as f64 / self.test_count as f64
        }
    }
}

/// Outcome of one routing decision, recorded when tracing is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeDecision {
    pub from: u32,
    pub to: u32,
    /// `None` when the test was bypassed (working set not full, routing test
    /// disabled, or the query coincides with `from`).
    pub tau: Option<f32>,
    /// `cos_theta / cos_beta`, when it was evaluated.
    pub ratio: Option<f32>,
    pub passed: bool,
    pub admission: Option<Admission>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Working,
    FalsePositive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct WorkEntry {
    cand: Candidate,
    expanded: bool,
}

/// Epoch-stamped marks over node ids; clearing is O(1) per query.
#[derive(Clone, Debug, Default)]
struct VisitMarks {
    stamps: Vec<u32>,
    epoch: u32,
}

impl VisitMarks {
    fn reset(&mut self, n: usize) {
        if self.stamps.len() < n {
            self.stamps.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn is_marked(&self, id: u32) -> bool {
        self.stamps[id as usize] == self.epoch
    }

    #[inline]
    fn mark(&mut self, id: u32) {
        self.stamps[id as usize] = self.epoch;
    }
}

/// Bounded buffer keeping the nearest `cap` candidates offered to it.
#[derive(Clone, Debug, Default)]
struct BoundedBuffer {
    heap: BinaryHeap<Candidate>,
    cap: usize,
}

impl BoundedBuffer {
    /// Returns the candidate that did not fit, if any.
    fn offer(&mut self, c: Candidate) -> Option<Candidate> {
        if self.heap.len() < self.cap {
            self.heap.push(c);
            return None;
        }
        match self.heap.peek() {
            Some(top) if c < *top => {
                let evicted = self.heap.pop();
                self.heap.push(c);
                evicted
            }
            _ => Some(c),
        }
    }

    fn len(&self) -> usize {
        self.heap.len()
    }

    #[cfg(test)]
    fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.heap.iter()
    }

    fn drain_into(&mut self, out: &mut Vec<Candidate>) {
        out.extend(self.heap.drain());
    }
}

/// Per-query search state.
#[derive(Debug, Default)]
pub struct TfbState {
    beam: usize,
    result_cap: usize,
    result: Vec<Candidate>,
    working: Vec<WorkEntry>,
    /// Every working entry before this index is expanded.
    cursor: usize,
    ring_f: BoundedBuffer,
    ring_t: BoundedBuffer,
    round: usize,
    marks: VisitMarks,
    stats: SearchStats,
    check: bool,
    computed_this_round: Vec<u32>,
    dropped_this_round: Vec<u32>,
    trace: Option<Vec<EdgeDecision>>,
    merge_buf: Vec<Candidate>,
}

/// What expanding one node produced.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExpandOutcome {
    /// `Some(max margin)` when edge selection was evaluated for the node;
    /// `-inf` for a node without out-edges.
    pub pes_max: Option<f32>,
}

impl ExpandOutcome {
    /// The node has no out-neighbor that plausibly relays to the query.
    pub fn pes_rejected(&self) -> bool {
        matches!(self.pes_max, Some(m) if m < 0.0)
    }
}

impl TfbState {
    /// Clears the state for a new query over `n` nodes.
    pub fn reset(&mut self, n: usize, beam: usize, result_cap: usize, check: bool) {
        self.beam = beam;
        self.result_cap = result_cap.max(1);
        self.result.clear();
        self.working.clear();
        self.cursor = 0;
        self.ring_f = BoundedBuffer {
            heap: std::mem::take(&mut self.ring_f.heap),
            cap: beam,
        };
        self.ring_f.heap.clear();
        self.ring_t = BoundedBuffer {
            heap: std::mem::take(&mut self.ring_t.heap),
            cap: beam,
        };
        self.ring_t.heap.clear();
        self.round = 0;
        self.marks.reset(n);
        self.stats = SearchStats::default();
        self.check = check;
        self.computed_this_round.clear();
        self.dropped_this_round.clear();
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[EdgeDecision] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn stats(&self) -> &SearchStats {
        &self.stats
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn beam(&self) -> usize {
        self.beam
    }

    pub fn working(&self) -> impl Iterator<Item = Candidate> + '_ {
        self.working.iter().map(|e| e.cand)
    }

    pub fn ring_f(&self) -> Vec<Candidate> {
        let mut v: Vec<_> = self.ring_f.iter().copied().collect();
        v.sort();
        v
    }

    pub fn ring_t(&self) -> Vec<Candidate> {
        let mut v: Vec<_> = self.ring_t.iter().copied().collect();
        v.sort();
        v
    }

    pub fn result_list(&self) -> &[Candidate] {
        &self.result
    }

    /// Squared distance of the farthest working entry; infinite while the
    /// working set has free slots.
    #[inline]
    pub fn z_max(&self) -> f32 {
        if self.working.len() < self.beam {
            f32::INFINITY
        } else {
            self.working.last().map_or(f32::INFINITY, |e| e.cand.dist)
        }
    }

    pub fn is_marked(&self, id: u32) -> bool {
        self.marks.is_marked(id)
    }

    /// Seeds the working set with `seeds` (exact distances already known).
    ///
    /// The nearest `b` enter the working set; the rest go to `ring_t`.
    pub fn seed(&mut self, seeds: &[Candidate]) {
        let mut sorted: Vec<Candidate> = seeds
            .iter()
            .copied()
            .filter(|c| !self.marks.is_marked(c.id))
            .collect();
        sorted.sort();
        sorted.dedup_by_key(|c| c.id);
        for c in sorted {
            self.marks.mark(c.id);
            self.stats.exact_dist_count += 1;
            self.stats.seed_count += 1;
            if self.check {
                self.computed_this_round.push(c.id);
            }
            if self.working.len() < self.beam {
                self.working.push(WorkEntry {
                    cand: c,
                    expanded: false,
                });
            } else if let Some(dropped) = self.ring_t.offer(c) {
                self.drop_node(dropped.id);
            }
        }
        self.validate("seed");
    }

    /// Nearest working entry not yet expanded.
    pub fn next_unexpanded(&mut self) -> Option<Candidate> {
        while self.cursor < self.working.len() {
            if !self.working[self.cursor].expanded {
                return Some(self.working[self.cursor].cand);
            }
            self.cursor += 1;
        }
        None
    }

    /// Expands working entry `u`, testing and admitting its out-neighbors.
    ///
    /// With `collect_pes` the edge-selection margin is evaluated over all of
    /// `u`'s out-edges, reusing the same cosine estimates.
    pub fn expand_node<G: Graph>(
        &mut self,
        graph: &G,
        query: &[f32],
        table: &ProjectionTable,
        u: u32,
        prt: bool,
        collect_pes: bool,
    ) -> ExpandOutcome {
        let at_cursor = self.working.get(self.cursor).is_some_and(|e| e.cand.id == u);
        let found = if at_cursor {
            Some(self.cursor)
        } else {
            self.working.iter().position(|e| e.cand.id == u)
        };
        let Some(pos) = found else {
            return ExpandOutcome::default();
        };
        if self.working[pos].expanded {
            return ExpandOutcome::default();
        }
        self.working[pos].expanded = true;
        self.stats.visited_count += 1;
        let dist_uq = self.working[pos].cand.dist.sqrt();
        let outcome = graph.with_links(u, |links| {
            self.expand_links(graph, query, table, u, dist_uq, links, prt, collect_pes)
        });
        self.validate("expand_node");
        outcome
    }

    #[allow(clippy::too_many_arguments)]
    fn expand_links<G: Graph>(
        &mut self,
        graph: &G,
        query: &[f32],
        table: &ProjectionTable,
        u: u32,
        dist_uq: f32,
        links: LinkView<'_>,
        prt: bool,
        collect_pes: bool,
    ) -> ExpandOutcome {
        let vectors = graph.vectors();
        // A query sitting on `u` leaves every angle undefined: exact fallback.
        let coincident = dist_uq == 0.0;
        let mut pes_max = f32::NEG_INFINITY;
        for i in 0..links.len() {
            let w = links.targets[i];
            let geom = links.geometry[i];
            let mut ratio = None;
            if collect_pes && !coincident {
                let cos_theta =
                    table.estimate_cos_theta(links.codes_of(i), geom.base_offset, dist_uq);
                let delta = pes_threshold(geom.edge_norm, dist_uq);
                pes_max = pes_max.max(pes_margin(cos_theta, geom.cos_beta, delta));
                ratio = Some(cos_theta / geom.cos_beta);
            }
            if self.marks.is_marked(w) {
                continue;
            }
            self.stats.test_count += 1;
            let z_max = self.z_max();
            let (tau, passed) = if !prt || coincident || z_max.is_infinite() {
                (None, true)
            } else {
                let tau = prt_threshold(geom.edge_norm, dist_uq, z_max.sqrt());
                let passed = if tau >= TAU_CEILING {
                    false
                } else {
                    let cos_theta =
                        table.estimate_cos_theta(links.codes_of(i), geom.base_offset, dist_uq);
                    ratio = Some(cos_theta / geom.cos_beta);
                    prt_test(cos_theta, geom.cos_beta, tau)
                };
                (Some(tau), passed)
            };
            let admission = if passed {
                self.marks.mark(w);
                self.stats.pass_count += 1;
                self.stats.exact_dist_count += 1;
                if self.check {
                    self.computed_this_round.push(w);
                }
                let cand = Candidate {
                    dist: sq_dist(query, vectors.row(w)),
                    id: w,
                };
                Some(self.admit(cand))
            } else {
                None
            };
            if let Some(trace) = self.trace.as_mut() {
                trace.push(EdgeDecision {
                    from: u,
                    to: w,
                    tau,
                    ratio,
                    passed,
                    admission,
                });
            }
        }
        ExpandOutcome {
            pes_max: (collect_pes && !coincident).then_some(pes_max),
        }
    }

    /// Places a freshly computed candidate: into the working set if it beats
    /// `z_max` (ejecting `z_max` to `ring_t`), otherwise into `ring_f`.
    fn admit(&mut self, cand: Candidate) -> Admission {
        let full = self.working.len() >= self.beam;
        if full && cand >= self.working.last().unwrap().cand {
            if let Some(dropped) = self.ring_f.offer(cand) {
                self.drop_node(dropped.id);
            }
            return Admission::FalsePositive;
        }
        if full {
            let ejected = self.working.pop().unwrap();
            if let Some(dropped) = self.ring_t.offer(ejected.cand) {
                self.drop_node(dropped.id);
            }
        }
        let pos = self
            .working
            .partition_point(|e| e.cand < cand);
        self.working.insert(
            pos,
            WorkEntry {
                cand,
                expanded: false,
            },
        );
        self.cursor = self.cursor.min(pos);
        Admission::Working
    }

    fn drop_node(&mut self, id: u32) {
        self.stats.buffer_drops += 1;
        if self.check {
            self.dropped_this_round.push(id);
        }
    }

    /// Closes a round. Returns `false` when both buffers were empty, i.e.
    /// there is nothing left to explore.
    pub fn end_round(&mut self) -> bool {
        self.flush_working();
        self.merge_buf.clear();
        self.ring_f.drain_into(&mut self.merge_buf);
        self.ring_t.drain_into(&mut self.merge_buf);
        self.merge_buf.sort();
        let refill = self.merge_buf.len().min(self.beam);
        for c in &self.merge_buf[..refill] {
            self.working.push(WorkEntry {
                cand: *c,
                expanded: false,
            });
        }
        // At most 2b entries were merged, so the remainder always fits.
        for c in &self.merge_buf[refill..] {
            let overflow = self.ring_t.offer(*c);
            debug_assert!(overflow.is_none());
        }
        self.cursor = 0;
        self.round += 1;
        self.stats.rounds += 1;
        self.computed_this_round.clear();
        self.dropped_this_round.clear();
        if self.check {
            self.computed_this_round.extend(self.working.iter().map(|e| e.cand.id));
            self.computed_this_round.extend(self.ring_t.iter().map(|c| c.id));
        }
        self.validate("end_round");
        refill > 0
    }

    /// Moves every working entry into the bounded result list.
    pub fn flush_working(&mut self) {
        for e in self.working.drain(..) {
            let c = e.cand;
            if self.result.len() >= self.result_cap {
                if c >= *self.result.last().unwrap() {
                    continue;
                }
                self.result.pop();
            }
            let pos = self.result.partition_point(|x| *x < c);
            self.result.insert(pos, c);
        }
        self.cursor = 0;
    }

    fn validate(&mut self, step: &str) {
        if !self.check {
            return;
        }
        if let Err(msg) = self.check_invariants() {
            self.stats.invariant_violations += 1;
            if self.stats.first_violation.is_none() {
                self.stats.first_violation = Some(format!("{step}: {msg}"));
            }
        }
    }

    /// Checks the buffer invariants; used by the validator and by tests.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let b = self.beam;
        if self.ring_f.cap != b || self.ring_t.cap != b {
            return Err(format!(
                "capacities differ: W={b} R_F={} R_T={}",
                self.ring_f.cap, self.ring_t.cap
            ));
        }
        if self.working.len() > b || self.ring_f.len() > b || self.ring_t.len() > b {
            return Err(format!(
                "over capacity: W={} R_F={} R_T={} (b={b})",
                self.working.len(),
                self.ring_f.len(),
                self.ring_t.len()
            ));
        }
        if self.result.len() > self.result_cap {
            return Err("result list over capacity".into());
        }
        if self.working.windows(2).any(|p| p[0].cand > p[1].cand) {
            return Err("working set out of order".into());
        }
        let max = self
            .working
            .iter()
            .map(|e| e.cand.dist)
            .fold(f32::NEG_INFINITY, f32::max);
        if let Some(last) = self.working.last() {
            if last.cand.dist != max {
                return Err("z_max is not the farthest working entry".into());
            }
        }
        let mut seen = HashSet::new();
        let residents = self
            .working
            .iter()
            .map(|e| e.cand.id)
            .chain(self.ring_f.iter().map(|c| c.id))
            .chain(self.ring_t.iter().map(|c| c.id))
            .chain(self.result.iter().map(|c| c.id));
        for id in residents {
            if !seen.insert(id) {
                return Err(format!("node {id} resides in two containers"));
            }
            if !self.marks.is_marked(id) {
                return Err(format!("node {id} resides without a visit mark"));
            }
        }
        if self.stats.exact_dist_count != self.stats.seed_count + self.stats.pass_count {
            return Err(format!(
                "exact distances {} != seeds {} + passes {}",
                self.stats.exact_dist_count, self.stats.seed_count, self.stats.pass_count
            ));
        }
        let in_w: HashSet<u32> = self.working.iter().map(|e| e.cand.id).collect();
        let in_f: HashSet<u32> = self.ring_f.iter().map(|c| c.id).collect();
        let in_t: HashSet<u32> = self.ring_t.iter().map(|c| c.id).collect();
        let dropped: HashSet<u32> = self.dropped_this_round.iter().copied().collect();
        for &id in &self.computed_this_round {
            let homes = in_w.contains(&id) as u32
                + in_f.contains(&id) as u32
                + in_t.contains(&id) as u32
                + dropped.contains(&id) as u32;
            if homes != 1 {
                return Err(format!(
                    "node {id} computed this round lives in {homes} places"
                ));
            }
        }
        Ok(())
    }

    /// The `k` nearest entries of the result list.
    pub fn top(&self, k: usize) -> Vec<Candidate> {
        self.result.iter().take(k).copied().collect()
    }

    #[cfg(test)]
    pub(crate) fn ring_f_is_empty(&self) -> bool {
        self.ring_f.is_empty()
    }
}

/// Reusable per-thread search buffers.
#[derive(Debug, Default)]
pub struct SearchScratch {
    pub(crate) state: TfbState,
}

impl SearchScratch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &TfbState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TfbState {
        &mut self.state
    }
}

thread_local! {
    static SCRATCH: RefCell<SearchScratch> = RefCell::new(SearchScratch::new());
}

/// Runs `f` with this thread's shared scratch space.
pub fn with_thread_scratch<R>(f: impl FnOnce(&mut SearchScratch) -> R) -> R {
    SCRATCH.with(|s| f(&mut s.borrow_mut()))
}

/// Full search: seeds, rounds of expansion, and the final flush.
///
/// `query` must already be prepared (normalized and padded). When
/// `pes_rejected` is given, edge selection runs on every expanded node and
/// rejected node ids are appended to it.
pub fn search_graph<G: Graph>(
    graph: &G,
    query: &[f32],
    params: &SearchParams,
    scratch: &mut SearchScratch,
    mut pes_rejected: Option<&mut Vec<u32>>,
) -> (Vec<Candidate>, SearchStats) {
    let vectors = graph.vectors();
    let table = graph.references().projection_table(query);
    let state = &mut scratch.state;
    state.reset(vectors.len(), params.beam, params.ef, params.check_invariants);

    let seeds: Vec<Candidate> = graph
        .entry_nodes()
        .iter()
        .map(|&id| Candidate {
            dist: sq_dist(query, vectors.row(id)),
            id,
        })
        .collect();
    state.seed(&seeds);

    let collect_pes = pes_rejected.is_some();
    for _ in 0..params.max_rounds() {
        while let Some(u) = state.next_unexpanded() {
            let outcome = state.expand_node(graph, query, &table, u.id, params.prt, collect_pes);
            if outcome.pes_rejected() {
                if let Some(out) = pes_rejected.as_deref_mut() {
                    out.push(u.id);
                }
            }
        }
        if !state.end_round() {
            break;
        }
    }
    // The last round's refill holds the nearest buffered entries.
    state.flush_working();
    (state.top(params.k), state.stats.clone())
}

/// Converts internal candidates (squared distances) to public results.
pub fn to_neighbors(cands: &[Candidate]) -> Vec<Neighbor> {
    cands
        .iter()
        .map(|c| Neighbor {
            id: c.id,
            distance: c.dist.sqrt(),
        })
        .collect()
}
