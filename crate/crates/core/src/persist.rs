//! Versioned little-endian index files.
//!
//! Layout: an 8-byte magic and a `u32` version, then a header with the
//! counts, build parameters and entry ids, then the padded vectors, then per
//! node its degree followed by `(target, codes, cos_beta, edge_norm,
//! base_offset)` per edge, and finally the pending edge pairs. The reference
//! family is regenerated from its seed on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::builder::{BuildParams, PagIndex, PesSet};
use crate::error::{Error, Result};
use crate::graph::Links;
use crate::projection::{EdgeGeometry, ReferenceSet};
use crate::vecstore::{Metric, VectorSet};

pub const MAGIC: &[u8; 8] = b"PAGINDEX";
pub const VERSION: u32 = 1;

const FLAG_PRT: u32 = 1;
const FLAG_TFB: u32 = 2;
const FLAG_PES: u32 = 4;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::Corrupt(format!("truncated file: {e}")))
    }
    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_bits(self.u32()?))
    }
    fn usize(&mut self, what: &str, limit: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > limit {
            return Err(Error::Corrupt(format!("{what} = {v} exceeds {limit}")));
        }
        Ok(v as usize)
    }
}

/// Writes `index` to `path`.
pub fn save(index: &PagIndex, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    write_index(index, &mut w).map_err(|e| Error::io(path, e))?;
    w.inner.flush().map_err(|e| Error::io(path, e))
}

fn write_index<W: Write>(index: &PagIndex, w: &mut Writer<W>) -> std::io::Result<()> {
    let (vectors, refs, links, entry, pending) = index.parts();
    let p = index.params();
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u64(vectors.len() as u64)?;
    w.u64(vectors.dim() as u64)?;
    w.u64(vectors.padded_dim() as u64)?;
    w.u64(refs.num_subspaces() as u64)?;
    w.u64(refs.refs_per_subspace() as u64)?;
    w.u64(p.m as u64)?;
    w.u64(refs.seed())?;
    w.u32(vectors.metric().to_code())?;
    w.u64(p.ef_construction as u64)?;
    w.u64(p.beam as u64)?;
    w.u64(p.seed)?;
    let flags = (p.prt as u32 * FLAG_PRT) | (p.tfb as u32 * FLAG_TFB) | (p.pes as u32 * FLAG_PES);
    w.u32(flags)?;
    w.u64(index.flush_interval() as u64)?;
    w.u64(entry.len() as u64)?;
    for &e in entry {
        w.u32(e)?;
    }
    for &x in vectors.raw() {
        w.f32(x)?;
    }
    let cb = refs.code_bytes();
    for l in links {
        let l = l.read();
        w.u32(l.len() as u32)?;
        for (i, &t) in l.targets().iter().enumerate() {
            w.u32(t)?;
            w.bytes(&l.codes[i * cb..(i + 1) * cb])?;
            let g = l.geometry[i];
            w.f32(g.cos_beta)?;
            w.f32(g.edge_norm)?;
            w.f32(g.base_offset)?;
        }
    }
    let mut pairs: Vec<(u32, u32)> = pending.iter().copied().collect();
    pairs.sort_unstable();
    w.u64(pairs.len() as u64)?;
    for (u, v) in pairs {
        w.u32(u)?;
        w.u32(v)?;
    }
    Ok(())
}

/// Reads an index written by [`save`].
pub fn load(path: &Path) -> Result<PagIndex> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    let index = read_index(&mut r)?;
    let mut rest = [0u8; 1];
    match r.inner.read(&mut rest) {
        Ok(0) => Ok(index),
        Ok(_) => Err(Error::Corrupt("trailing bytes after index".into())),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_index<R: Read>(r: &mut Reader<R>) -> Result<PagIndex> {
    let mut magic = [0u8; 8];
    r.bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let n = r.usize("n", u32::MAX as u64)?;
    let dim = r.usize("d", 1 << 20)?;
    let padded_dim = r.usize("padded d", 1 << 20)?;
    let num_subspaces = r.usize("L", padded_dim as u64)?;
    let refs_per = r.usize("m", 16)?;
    let m = r.usize("M", 1 << 16)?;
    let ref_seed = r.u64()?;
    let metric = Metric::from_code(r.u32()?).ok_or_else(|| Error::Corrupt("unknown metric".into()))?;
    let ef_construction = r.usize("efC", 1 << 24)?;
    let beam = r.usize("b", 1 << 24)?;
    let seed = r.u64()?;
    let flags = r.u32()?;
    let flush_interval = r.usize("flush interval", u64::MAX)?;
    let n_entry = r.usize("entry count", n as u64)?;
    let mut entry = Vec::with_capacity(n_entry);
    for _ in 0..n_entry {
        let e = r.u32()?;
        if e as usize >= n {
            return Err(Error::Corrupt(format!("entry node {e} out of range")));
        }
        entry.push(e);
    }
    let mut data = vec![0.0f32; n * padded_dim];
    let mut buf = vec![0u8; padded_dim * 4];
    for row in data.chunks_exact_mut(padded_dim.max(1)) {
        r.bytes(&mut buf)?;
        for (x, b) in row.iter_mut().zip(buf.chunks_exact(4)) {
            *x = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    let vectors = VectorSet::from_raw(dim, padded_dim, metric, data)?;
    let refs = ReferenceSet::generate(padded_dim, num_subspaces, refs_per, ref_seed)?;
    let cb = refs.code_bytes();
    let cap = 2 * m;
    let mut links = Vec::with_capacity(n);
    let mut codes = vec![0u8; cb];
    for u in 0..n {
        let degree = r.u32()? as usize;
        if degree > cap {
            return Err(Error::Corrupt(format!("node {u} has degree {degree} > {cap}")));
        }
        let mut l = Links::with_capacity(degree, cb);
        for _ in 0..degree {
            let t = r.u32()?;
            if t as usize >= n || t as usize == u {
                return Err(Error::Corrupt(format!("invalid edge {u} -> {t}")));
            }
            r.bytes(&mut codes)?;
            let geometry = EdgeGeometry {
                cos_beta: r.f32()?,
                edge_norm: r.f32()?,
                base_offset: r.f32()?,
            };
            l.push(t, &codes, geometry);
        }
        links.push(l);
    }
    let n_pending = r.usize("pending count", (n as u64).saturating_mul(n as u64))?;
    let mut pending = PesSet::new();
    for _ in 0..n_pending {
        let (u, v) = (r.u32()?, r.u32()?);
        if u as usize >= n || v as usize >= n {
            return Err(Error::Corrupt(format!("pending edge {u} -> {v} out of range")));
        }
        pending.insert(u, v);
    }
    let params = BuildParams {
        m,
        ef_construction,
        num_subspaces: Some(num_subspaces),
        beam,
        seed,
        pes_flush_interval: Some(flush_interval),
        prt: flags & FLAG_PRT != 0,
        tfb: flags & FLAG_TFB != 0,
        pes: flags & FLAG_PES != 0,
        threads: 1,
    };
    Ok(PagIndex::from_parts(
        vectors,
        refs,
        links,
        entry,
        params,
        pending,
        flush_interval,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::SearchParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn index() -> PagIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let flat: Vec<f32> = (0..400 * 20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let vs = VectorSet::from_flat(&flat, 20, 1, Metric::Euclidean).unwrap();
        let params = BuildParams {
            m: 6,
            ef_construction: 30,
            beam: 10,
            num_subspaces: Some(4),
            ..Default::default()
        };
        PagIndex::build(vs, params).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut idx = index();
        idx.pending_mut().insert(3, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pag");
        save(&idx, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.len(), idx.len());
        assert_eq!(back.entry(), idx.entry());
        assert_eq!(back.pending(), idx.pending());
        assert_eq!(back.params(), &BuildParams {
            num_subspaces: Some(4),
            pes_flush_interval: Some(idx.flush_interval()),
            ..idx.params().clone()
        });
        for u in 0..idx.len() as u32 {
            assert_eq!(back.links(u), idx.links(u));
        }
        let q = vec![0.1f32; 20];
        let p = SearchParams::new(5, 20);
        assert_eq!(back.search(&q, &p).unwrap(), idx.search(&q, &p).unwrap());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let idx = index();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pag");
        save(&idx, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(Error::Corrupt(_))));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Corrupt(_))));

        let mut bad = bytes.clone();
        bad[8] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Version(99))));

        let mut bad = bytes;
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(Error::Corrupt(_))));

        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
