//! Contiguous vector storage, exact distance kernels and `.fvecs`-family I/O.
//!
//! Vectors are stored row-major and zero-padded so that the padded dimension
//! is a multiple of the number of projection subspaces. Zero padding leaves
//! every inner product, norm and distance unchanged, so callers may reason
//! about the logical vectors while the kernels see padded rows.
//!
//! Distances are squared Euclidean throughout. Under [`Metric::Cosine`] every
//! vector (data and query) is normalized to unit length at ingestion, after
//! which squared Euclidean distance orders neighbors exactly like cosine
//! distance.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Number of independent accumulators in the distance kernels.
///
/// Element `k` always lands in lane `k % LANES` and lanes are reduced in a
/// fixed order, so results are reproducible and symmetric.
const LANES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[serde(alias = "l2")]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }

    pub(crate) fn to_code(self) -> u32 {
        match self {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::Cosine),
            _ => None,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" | "angular" => Ok(Metric::Cosine),
            other => Err(Error::param(format!("unknown metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Squared Euclidean distance with a fixed, blocked accumulation order.
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let split = a.len() - a.len() % LANES;
    let (a_body, a_tail) = a.split_at(split);
    let (b_body, b_tail) = b.split_at(split);
    for (ca, cb) in a_body.chunks_exact(LANES).zip(b_body.chunks_exact(LANES)) {
        for k in 0..LANES {
            let d = ca[k] - cb[k];
            acc[k] += d * d;
        }
    }
    for (k, (x, y)) in a_tail.iter().zip(b_tail).enumerate() {
        let d = x - y;
        acc[k] += d * d;
    }
    reduce(acc)
}

/// Inner product with the same accumulation order as [`sq_dist`].
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let split = a.len() - a.len() % LANES;
    let (a_body, a_tail) = a.split_at(split);
    let (b_body, b_tail) = b.split_at(split);
    for (ca, cb) in a_body.chunks_exact(LANES).zip(b_body.chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += ca[k] * cb[k];
        }
    }
    for (k, (x, y)) in a_tail.iter().zip(b_tail).enumerate() {
        acc[k] += x * y;
    }
    reduce(acc)
}

#[inline]
pub fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

#[inline]
fn reduce(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

/// Smallest multiple of `multiple` that is at least `dim`.
pub fn padded_dim(dim: usize, multiple: usize) -> usize {
    let multiple = multiple.max(1);
    dim.div_ceil(multiple) * multiple
}

/// Row-major store of finite `f32` vectors with cached norms.
#[derive(Clone, Debug)]
pub struct VectorSet {
    dim: usize,
    padded_dim: usize,
    metric: Metric,
    data: Vec<f32>,
    norms: Vec<f32>,
}

impl VectorSet {
    /// An empty set whose rows will be padded to a multiple of `pad_multiple`.
    pub fn new(dim: usize, pad_multiple: usize, metric: Metric) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("vector dimension must be positive"));
        }
        Ok(Self {
            dim,
            padded_dim: padded_dim(dim, pad_multiple),
            metric,
            data: Vec::new(),
            norms: Vec::new(),
        })
    }

    /// Builds a set from a flat buffer of `dim`-wide logical rows.
    pub fn from_flat(flat: &[f32], dim: usize, pad_multiple: usize, metric: Metric) -> Result<Self> {
        if dim == 0 || !flat.len().is_multiple_of(dim) {
            return Err(Error::param(format!(
                "buffer of {} floats is not a whole number of {dim}-dimensional rows",
                flat.len()
            )));
        }
        let mut set = Self::new(dim, pad_multiple, metric)?;
        set.reserve(flat.len() / dim);
        for row in flat.chunks_exact(dim) {
            set.push(row)?;
        }
        Ok(set)
    }

    pub fn reserve(&mut self, additional: usize) {
        self.data.reserve(additional * self.padded_dim);
        self.norms.reserve(additional);
    }

    /// Appends one logical vector and returns its row id.
    pub fn push(&mut self, v: &[f32]) -> Result<u32> {
        let row = self.len();
        let padded = self.prepare(v).map_err(|e| match e {
            Error::NonFinite { col, .. } => Error::NonFinite { row, col },
            Error::ZeroVector(_) => Error::ZeroVector(row),
            other => other,
        })?;
        self.norms.push(norm(&padded));
        self.data.extend_from_slice(&padded);
        u32::try_from(row).map_err(|_| Error::param("vector count exceeds u32 range"))
    }

    /// Validates, normalizes (cosine) and pads a vector the way stored rows are.
    pub fn prepare(&self, v: &[f32]) -> Result<Vec<f32>> {
        if v.len() != self.dim && v.len() != self.padded_dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if let Some(col) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { row: 0, col });
        }
        let mut out = vec![0.0f32; self.padded_dim];
        out[..self.dim].copy_from_slice(&v[..self.dim]);
        if self.metric == Metric::Cosine {
            let n = norm(&out);
            if n == 0.0 {
                return Err(Error::ZeroVector(0));
            }
            out.iter_mut().for_each(|x| *x /= n);
        }
        Ok(out)
    }

    /// Copy of this set with rows re-padded to a multiple of `pad_multiple`.
    pub fn repadded(&self, pad_multiple: usize) -> VectorSet {
        let padded_dim = padded_dim(self.dim, pad_multiple);
        if padded_dim == self.padded_dim {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.len() * padded_dim);
        for i in 0..self.len() {
            let row = self.row(i as u32);
            data.extend_from_slice(&row[..self.dim]);
            data.resize(data.len() + padded_dim - self.dim, 0.0);
        }
        VectorSet {
            dim: self.dim,
            padded_dim,
            metric: self.metric,
            data,
            norms: self.norms.clone(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.norms.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    #[inline]
    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Padded row `i`.
    #[inline]
    pub fn row(&self, i: u32) -> &[f32] {
        let start = i as usize * self.padded_dim;
        &self.data[start..start + self.padded_dim]
    }

    /// Cached Euclidean norm of row `i`.
    #[inline]
    pub fn norm(&self, i: u32) -> f32 {
        self.norms[i as usize]
    }

    #[inline]
    pub fn sq_dist(&self, i: u32, j: u32) -> f32 {
        sq_dist(self.row(i), self.row(j))
    }

    /// Logical (unpadded) rows as a flat buffer.
    pub fn to_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for i in 0..self.len() {
            out.extend_from_slice(&self.row(i as u32)[..self.dim]);
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.padded_dim)
    }

    pub(crate) fn raw(&self) -> &[f32] {
        &self.data
    }

    /// Rebuilds a set from already prepared rows (as returned by `raw`).
    pub(crate) fn from_raw(dim: usize, padded_dim: usize, metric: Metric, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || padded_dim < dim || !data.len().is_multiple_of(padded_dim) {
            return Err(Error::Corrupt(format!(
                "{} floats do not form rows of width {padded_dim} (d={dim})",
                data.len()
            )));
        }
        let norms = data.chunks_exact(padded_dim).map(norm).collect();
        Ok(Self {
            dim,
            padded_dim,
            metric,
            data,
            norms,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VecFormat {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl VecFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(VecFormat::Fvecs),
            "bvecs" => Some(VecFormat::Bvecs),
            "ivecs" | "ibvecs" => Some(VecFormat::Ivecs),
            _ => None,
        }
    }

    fn elem_size(self) -> usize {
        match self {
            VecFormat::Bvecs => 1,
            VecFormat::Fvecs | VecFormat::Ivecs => 4,
        }
    }
}

impl std::str::FromStr for VecFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvecs" => Ok(VecFormat::Fvecs),
            "bvecs" => Ok(VecFormat::Bvecs),
            "ivecs" | "ibvecs" => Ok(VecFormat::Ivecs),
            other => Err(Error::param(format!("unknown vector format `{other}`"))),
        }
    }
}

/// Records of a `.fvecs`/`.bvecs`/`.ivecs` file, decoded but not yet typed.
struct RawRecords {
    dim: usize,
    count: usize,
    payload: Vec<u8>,
}

fn read_records(path: &Path, format: VecFormat) -> Result<RawRecords> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    parse_records(&bytes, format)
}

fn parse_records(bytes: &[u8], format: VecFormat) -> Result<RawRecords> {
    if bytes.is_empty() {
        return Err(Error::Empty("vector file has no records".into()));
    }
    let elem = format.elem_size();
    let mut pos = 0usize;
    let mut dim = None;
    let mut count = 0usize;
    let mut payload = Vec::new();
    while pos < bytes.len() {
        let header = bytes.get(pos..pos + 4).ok_or_else(|| Error::Format {
            record: count,
            reason: "truncated dimension header".into(),
        })?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(Error::Format {
                record: count,
                reason: format!("non-positive dimension {d}"),
            });
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Format {
                    record: count,
                    reason: format!("dimension {d} differs from first record's {expected}"),
                })
            }
            Some(_) => {}
        }
        pos += 4;
        let body = bytes.get(pos..pos + d * elem).ok_or_else(|| Error::Format {
            record: count,
            reason: format!(
                "declares {d} components but only {} bytes remain",
                bytes.len() - pos
            ),
        })?;
        payload.extend_from_slice(body);
        pos += d * elem;
        count += 1;
    }
    Ok(RawRecords {
        dim: dim.unwrap_or(0),
        count,
        payload,
    })
}

/// Reads a whole vector file into logical rows: `(flat, dim)`.
///
/// `.bvecs` bytes are widened to floats and `.ivecs` integers are cast.
pub fn read_vectors(path: &Path, format: VecFormat) -> Result<(Vec<f32>, usize)> {
    let raw = read_records(path, format)?;
    let flat: Vec<f32> = match format {
        VecFormat::Fvecs => raw
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        VecFormat::Bvecs => raw.payload.iter().map(|&b| b as f32).collect(),
        VecFormat::Ivecs => raw
            .payload
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f32)
            .collect(),
    };
    debug_assert_eq!(flat.len(), raw.count * raw.dim);
    Ok((flat, raw.dim))
}

/// Loads a vector file into a [`VectorSet`] padded to `pad_multiple`.
pub fn load_vectors(
    path: &Path,
    format: VecFormat,
    metric: Metric,
    pad_multiple: usize,
) -> Result<VectorSet> {
    if format == VecFormat::Ivecs {
        return Err(Error::param(
            "ivecs files hold id lists; use load_id_lists for ground truth",
        ));
    }
    let (flat, dim) = read_vectors(path, format)?;
    VectorSet::from_flat(&flat, dim, pad_multiple, metric)
}

/// Loads an `.ivecs` ground-truth file as one id list per record.
pub fn load_id_lists(path: &Path) -> Result<Vec<Vec<u32>>> {
    let raw = read_records(path, VecFormat::Ivecs)?;
    let mut rows = Vec::with_capacity(raw.count);
    for (record, chunk) in raw.payload.chunks_exact(raw.dim * 4).enumerate() {
        let row = chunk
            .chunks_exact(4)
            .map(|c| {
                let v = i32::from_le_bytes(c.try_into().unwrap());
                u32::try_from(v).map_err(|_| Error::Format {
                    record,
                    reason: format!("negative id {v}"),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes logical rows as `.fvecs`.
pub fn write_fvecs(path: &Path, flat: &[f32], dim: usize) -> Result<()> {
    write_records(path, dim, flat.chunks_exact(dim), |w, row| {
        row.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))
    })
}

/// Writes id lists as `.ivecs`; every row must have the same length.
pub fn write_ivecs(path: &Path, rows: &[Vec<u32>]) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::param("ivecs rows must all have the same length"));
    }
    write_records(path, dim, rows.iter(), |w, row| {
        row.iter()
            .try_for_each(|&x| w.write_all(&(x as i32).to_le_bytes()))
    })
}

fn write_records<I, T, F>(path: &Path, dim: usize, rows: I, mut write_row: F) -> Result<()>
where
    I: Iterator<Item = T>,
    F: FnMut(&mut BufWriter<File>, T) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = (dim as i32).to_le_bytes();
    for row in rows {
        w.write_all(&header).map_err(|e| Error::io(path, e))?;
        write_row(&mut w, row).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_sq_dist(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let d = *x as f64 - *y as f64;
                d * d
            })
            .sum()
    }

    #[test]
    fn distance_basics() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(sq_dist(&a, &a), 0.0);
        assert_eq!(sq_dist(&a, &b), 2.0);
        assert_eq!(norm(&[3.0, 4.0]), 5.0);
        assert_eq!(norm(&[0.0; 7]), 0.0);
    }

    #[test]
    fn kernel_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a: Vec<f32> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = sq_dist(&a, &b) as f64;
            let slow = naive_sq_dist(&a, &b);
            assert!((fast - slow).abs() <= 1e-5 * slow, "{fast} vs {slow}");
        }
    }

    #[test]
    fn norm_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<f32> = (0..96).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let slow = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm(&a) as f64 - slow).abs() <= 1e-6 * slow);
    }

    #[test]
    fn cosine_ingestion_normalizes_and_rejects_zero() {
        let mut set = VectorSet::new(3, 1, Metric::Cosine).unwrap();
        set.push(&[3.0, 0.0, 4.0]).unwrap();
        assert!((set.norm(0) - 1.0).abs() <= 1e-5);
        assert!(matches!(set.push(&[0.0; 3]), Err(Error::ZeroVector(1))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut set = VectorSet::new(2, 1, Metric::Euclidean).unwrap();
        let err = set.push(&[1.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn padding_is_zero() {
        let set = VectorSet::from_flat(&[1.0, 2.0, 3.0], 3, 4, Metric::Euclidean).unwrap();
        assert_eq!(set.padded_dim(), 4);
        assert_eq!(set.row(0), &[1.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn parse_minimal_file() {
        let mut bytes = Vec::new();
        for row in [[0.0f32; 4], [1.0, 0.0, 0.0, 0.0]] {
            bytes.extend_from_slice(&4i32.to_le_bytes());
            row.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes()));
        }
        let raw = parse_records(&bytes, VecFormat::Fvecs).unwrap();
        assert_eq!((raw.count, raw.dim), (2, 4));
    }

    #[test]
    fn truncated_record_is_format_error() {
        let mut bytes = 4i32.to_le_bytes().to_vec();
        for x in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        match parse_records(&bytes, VecFormat::Fvecs) {
            Err(Error::Format { record: 0, .. }) => {}
            other => panic!("expected format error at record 0, got {:?}", other.err()),
        }
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(
            parse_records(&[], VecFormat::Fvecs),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn bvecs_widen_to_float() {
        let mut bytes = 3i32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&[0u8, 7, 255]);
        let raw = parse_records(&bytes, VecFormat::Bvecs).unwrap();
        assert_eq!(raw.payload, vec![0, 7, 255]);
    }

    proptest! {
        #[test]
        fn sq_dist_symmetric_and_padding_invisible(
            a in prop::collection::vec(-100.0f32..100.0, 1..70),
            seed in any::<u64>(),
            pad in 1usize..17,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f32> = a.iter().map(|_| rng.gen_range(-100.0..100.0)).collect();
            prop_assert_eq!(sq_dist(&a, &b), sq_dist(&b, &a));
            prop_assert_eq!(sq_dist(&a, &a), 0.0);

            let mut flat = a.clone();
            flat.extend_from_slice(&b);
            let set = VectorSet::from_flat(&flat, a.len(), pad, Metric::Euclidean).unwrap();
            prop_assert_eq!(set.sq_dist(0, 1), sq_dist(&a, &b));
        }
    }
}
