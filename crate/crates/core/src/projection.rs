//! Random reference family, 4-bit edge codes and per-query projection tables.
//!
//! The padded space is split into `L` equal subspaces. Each subspace gets `m`
//! unit references taken from independently rotated cross-polytopes, and
//! every reference is stored pre-scaled by `1/sqrt(L)`, so concatenating one
//! reference per subspace yields a unit vector of the full space.
//!
//! An edge `u -> w` is summarized by the concatenated reference `r*` closest
//! in angle to `w - u` (one 4-bit code per subspace), the cosine `cos_beta`
//! of that angle, `|w - u|` and the offset `<r*, u>`. Given a table of
//! `<q_l, r_jl>` for a query `q`, the cosine between `r*` and `q - u` then
//! costs `L` lookups:
//!
//! ```text
//! cos_theta = (sum_l table[l][code_l] - <r*, u>) / |q - u|
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::vecstore::dot;

/// References per subspace. Codes are 4 bits wide.
pub const DEFAULT_REFS_PER_SUBSPACE: usize = 16;

/// Floor applied to `cos_beta` so the routing tests never divide by zero.
const MIN_COS_BETA: f32 = 1e-6;

/// Default subspace count for a `dim`-dimensional space.
///
/// `sqrt(dim)` rounded to the nearest power of two (in log scale, ties up),
/// clamped to `[8, dim / 8]`. Very small spaces fall back to the largest
/// count that keeps at least two coordinates per subspace.
pub fn default_num_subspaces(dim: usize) -> usize {
    let dim = dim.max(2);
    let exponent = ((dim as f64).log2() / 2.0).round() as u32;
    let mut l = 1usize << exponent;
    let upper = dim / 8;
    if upper >= 8 {
        l = l.clamp(8, upper);
    } else {
        l = (dim / 2).clamp(1, l.max(1)).min(upper.max(1));
    }
    l
}

/// The reference family shared by the index and its queries.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSet {
    padded_dim: usize,
    num_subspaces: usize,
    sub_dim: usize,
    refs_per_subspace: usize,
    seed: u64,
    /// `[subspace][reference][coordinate]`, each reference scaled by `1/sqrt(L)`.
    refs: Vec<f32>,
}

impl ReferenceSet {
    /// Generates references deterministically from `(padded_dim, L, m, seed)`.
    ///
    /// Each subspace draws `ceil(m / (2 * sub_dim))` uniformly random
    /// rotations. Rotation `p` contributes `+q_1..+q_k, -q_1..-q_k` where
    /// `q_i` are its columns and `k = min(sub_dim, remaining / 2)`, so the
    /// references of a subspace always come in antipodal pairs.
    pub fn generate(padded_dim: usize, num_subspaces: usize, m: usize, seed: u64) -> Result<Self> {
        if num_subspaces == 0 || !padded_dim.is_multiple_of(num_subspaces) {
            return Err(Error::param(format!(
                "padded dimension {padded_dim} is not divisible by {num_subspaces} subspaces"
            )));
        }
        let sub_dim = padded_dim / num_subspaces;
        if sub_dim < 2 {
            return Err(Error::param(format!(
                "subspace dimension {sub_dim} is too small for a cross-polytope"
            )));
        }
        if !(2..=16).contains(&m) || !m.is_multiple_of(2) {
            return Err(Error::param(format!(
                "references per subspace must be even and in [2, 16], got {m}"
            )));
        }
        let scale = 1.0 / (num_subspaces as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut refs = Vec::with_capacity(num_subspaces * m * sub_dim);
        for _ in 0..num_subspaces {
            let mut produced = 0;
            while produced < m {
                let q = random_orthogonal(sub_dim, &mut rng);
                let k = sub_dim.min((m - produced) / 2);
                for sign in [1.0, -1.0] {
                    for col in 0..k {
                        refs.extend(
                            (0..sub_dim).map(|row| (sign * q[row * sub_dim + col] * scale) as f32),
                        );
                    }
                }
                produced += 2 * k;
            }
        }
        Ok(Self {
            padded_dim,
            num_subspaces,
            sub_dim,
            refs_per_subspace: m,
            seed,
            refs,
        })
    }

    #[inline]
    pub fn num_subspaces(&self) -> usize {
        self.num_subspaces
    }

    #[inline]
    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    #[inline]
    pub fn refs_per_subspace(&self) -> usize {
        self.refs_per_subspace
    }

    #[inline]
    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bytes of packed codes per edge.
    #[inline]
    pub fn code_bytes(&self) -> usize {
        self.num_subspaces.div_ceil(2)
    }

    /// Reference `j` of subspace `l`, scaled by `1/sqrt(L)`.
    #[inline]
    pub fn reference(&self, l: usize, j: usize) -> &[f32] {
        let start = (l * self.refs_per_subspace + j) * self.sub_dim;
        &self.refs[start..start + self.sub_dim]
    }

    /// The concatenated reference selected by packed `codes`, as a full vector.
    pub fn concatenated(&self, codes: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.padded_dim);
        for l in 0..self.num_subspaces {
            out.extend_from_slice(self.reference(l, code_at(codes, l) as usize));
        }
        out
    }

    /// Encodes the edge `u -> w`, writing packed codes into `codes`.
    pub fn encode_into(&self, u: &[f32], w: &[f32], codes: &mut [u8]) -> Result<EdgeGeometry> {
        debug_assert_eq!(codes.len(), self.code_bytes());
        codes.fill(0);
        let mut diff = vec![0.0f32; self.sub_dim];
        let mut aligned = 0.0f32;
        let mut base_offset = 0.0f32;
        let mut sq_norm = 0.0f32;
        for l in 0..self.num_subspaces {
            let span = l * self.sub_dim..(l + 1) * self.sub_dim;
            for ((d, a), b) in diff.iter_mut().zip(&w[span.clone()]).zip(&u[span.clone()]) {
                *d = a - b;
            }
            sq_norm += dot(&diff, &diff);
            let mut best = 0usize;
            let mut best_val = f32::NEG_INFINITY;
            for j in 0..self.refs_per_subspace {
                let v = dot(&diff, self.reference(l, j));
                if v > best_val {
                    best_val = v;
                    best = j;
                }
            }
            aligned += best_val;
            base_offset += dot(&u[span], self.reference(l, best));
            codes[l / 2] |= (best as u8) << ((l % 2) * 4);
        }
        let edge_norm = sq_norm.sqrt();
        if edge_norm == 0.0 {
            return Err(Error::DuplicateEdge(0, 0));
        }
        Ok(EdgeGeometry {
            cos_beta: (aligned / edge_norm).clamp(MIN_COS_BETA, 1.0),
            edge_norm,
            base_offset,
        })
    }

    /// Encodes the edge `u -> w` into a standalone [`EdgeMeta`].
    pub fn encode_edge(&self, u: &[f32], w: &[f32]) -> Result<EdgeMeta> {
        let mut codes = vec![0u8; self.code_bytes()];
        let geometry = self.encode_into(u, w, &mut codes)?;
        Ok(EdgeMeta { codes, geometry })
    }

    /// Tables `<x_l, r_jl>` for every subspace `l` and reference `j`.
    pub fn projection_table(&self, x: &[f32]) -> ProjectionTable {
        debug_assert_eq!(x.len(), self.padded_dim);
        let m = self.refs_per_subspace;
        // An odd L leaves one padding nibble per edge; give it a zero row.
        let rows = self.code_bytes() * 2;
        let mut entries = vec![0.0f32; rows * 16];
        for l in 0..self.num_subspaces {
            let xl = &x[l * self.sub_dim..(l + 1) * self.sub_dim];
            for j in 0..m {
                entries[l * 16 + j] = dot(xl, self.reference(l, j));
            }
        }
        ProjectionTable { entries }
    }
}

/// Uniform random orthogonal matrix (row-major), via Gram-Schmidt QR of a
/// Gaussian matrix. Orthonormalizing the columns in order yields the `Q`
/// factor whose `R` has a positive diagonal.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for i in 0..n {
        for k in 0..i {
            let (done, rest) = cols.split_at_mut(i);
            let proj: f64 = done[k].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            rest[0].iter_mut().zip(&done[k]).for_each(|(x, q)| *x -= proj * q);
        }
        let n2 = cols[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        cols[i].iter_mut().for_each(|x| *x /= n2);
    }
    let mut out = vec![0.0; n * n];
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            out[r * n + c] = *v;
        }
    }
    out
}

#[inline]
pub fn code_at(codes: &[u8], l: usize) -> u8 {
    (codes[l / 2] >> ((l % 2) * 4)) & 0x0f
}

/// Per-edge scalars cached alongside the codes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeGeometry {
    /// Cosine between `w - u` and its concatenated reference `r*`.
    pub cos_beta: f32,
    /// `|w - u|`.
    pub edge_norm: f32,
    /// `<r*, u>`.
    pub base_offset: f32,
}

/// Inference record of one edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMeta {
    /// Packed 4-bit reference indices, two subspaces per byte (low nibble first).
    pub codes: Vec<u8>,
    pub geometry: EdgeGeometry,
}

impl EdgeMeta {
    pub fn code(&self, l: usize) -> u8 {
        code_at(&self.codes, l)
    }
}

/// `<x_l, r_jl>` for one tabled vector, stored as `[subspace][16]`.
#[derive(Clone, Debug)]
pub struct ProjectionTable {
    entries: Vec<f32>,
}

impl ProjectionTable {
    #[inline]
    pub fn entry(&self, l: usize, j: usize) -> f32 {
        self.entries[l * 16 + j]
    }

    /// `<r*, x>` for the concatenated reference selected by `codes`.
    #[inline]
    pub fn lookup(&self, codes: &[u8]) -> f32 {
        let mut acc = [0.0f32; 2];
        for (pair, &byte) in self.entries.chunks_exact(32).zip(codes) {
            acc[0] += pair[(byte & 0x0f) as usize];
            acc[1] += pair[16 + (byte >> 4) as usize];
        }
        acc[0] + acc[1]
    }

    /// Cosine between `r*` and `x - u`, where `dist_ux = |x - u| > 0`.
    #[inline]
    pub fn estimate_cos_theta(&self, codes: &[u8], base_offset: f32, dist_ux: f32) -> f32 {
        (self.lookup(codes) - base_offset) / dist_ux
    }
}

/// Free-function form of [`ProjectionTable::estimate_cos_theta`].
pub fn estimate_cos_theta(table: &ProjectionTable, meta: &EdgeMeta, dist_uq: f32) -> f32 {
    table.estimate_cos_theta(&meta.codes, meta.geometry.base_offset, dist_uq)
}
