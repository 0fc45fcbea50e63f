//! Adjacency storage shared by the search engine and the builder.

use crate::projection::{EdgeGeometry, ReferenceSet};
use crate::vecstore::VectorSet;

/// Out-edges of one node with their inference records, stored column-wise.
///
/// Edge `i` owns `codes[i * code_bytes..(i + 1) * code_bytes]`, so one edge's
/// codes are contiguous and a node's edges are adjacent in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Links {
    pub(crate) targets: Vec<u32>,
    pub(crate) codes: Vec<u8>,
    pub(crate) geometry: Vec<EdgeGeometry>,
}

impl Links {
    pub fn with_capacity(degree: usize, code_bytes: usize) -> Self {
        Self {
            targets: Vec::with_capacity(degree),
            codes: Vec::with_capacity(degree * code_bytes),
            geometry: Vec::with_capacity(degree),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn contains(&self, target: u32) -> bool {
        self.targets.contains(&target)
    }

    pub fn push(&mut self, target: u32, codes: &[u8], geometry: EdgeGeometry) {
        self.targets.push(target);
        self.codes.extend_from_slice(codes);
        self.geometry.push(geometry);
    }

    pub fn clear(&mut self) {
        self.targets.clear();
        self.codes.clear();
        self.geometry.clear();
    }

    #[inline]
    pub fn view(&self, code_bytes: usize) -> LinkView<'_> {
        LinkView {
            targets: &self.targets,
            codes: &self.codes,
            geometry: &self.geometry,
            code_bytes,
        }
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        self.targets.capacity() * 4
            + self.codes.capacity()
            + self.geometry.capacity() * std::mem::size_of::<EdgeGeometry>()
    }
}

/// Borrowed view of a node's out-edges.
#[derive(Clone, Copy, Debug)]
pub struct LinkView<'a> {
    pub targets: &'a [u32],
    pub codes: &'a [u8],
    pub geometry: &'a [EdgeGeometry],
    pub code_bytes: usize,
}

impl<'a> LinkView<'a> {
    #[inline]
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn codes_of(&self, i: usize) -> &'a [u8] {
        &self.codes[i * self.code_bytes..(i + 1) * self.code_bytes]
    }
}

/// Read access the search engine needs from a graph.
pub trait Graph: Sync {
    fn vectors(&self) -> &VectorSet;
    fn references(&self) -> &ReferenceSet;
    fn entry_nodes(&self) -> &[u32];
    /// Runs `f` over the current out-edges of `node`.
    fn with_links<R>(&self, node: u32, f: impl FnOnce(LinkView<'_>) -> R) -> R;
}
