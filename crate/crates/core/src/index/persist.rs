//! `RHN1` index files.
//!
//! All integers little-endian:
//!
//! ```text
//! magic            b"RHN1"
//! version          u32
//! dim              u32
//! count            u64
//! params           max_degree u32, ef_construction u32, ef_search u32,
//!                  level_lambda f64, rng_seed u64
//! entry_point      u64 (node index, u64::MAX when empty)
//! max_level        u32
//! per node         record id u64, top level u32,
//!                  then for each level 0..=top: count u32, count * u64 node indices
//! vectors          RVE1 block (magic, dim, count, row-major f32)
//! crc32            u32 over every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::hnsw::MAX_LEVEL;
use super::{HnswIndex, HnswParams, VectorStore};
use crate::embedding::{dot, write_f32_row, EMBEDDING_MAGIC};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"RHN1";
pub const INDEX_VERSION: u32 = 1;

const NO_ENTRY: u64 = u64::MAX;

/// Serializes a frozen index.
pub fn encode_index(index: &HnswIndex) -> Result<Vec<u8>> {
    if !index.is_frozen() {
        return Err(Error::NotFrozen);
    }
    let p = &index.params;
    let dim = index.dim();
    let count = index.len();
    let mut out = Vec::with_capacity(64 + count * (dim * 4 + 8 * (p.max_degree * 2 + 2)));
    out.extend_from_slice(&INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    out.extend_from_slice(&(p.max_degree as u32).to_le_bytes());
    out.extend_from_slice(&(p.ef_construction as u32).to_le_bytes());
    out.extend_from_slice(&(p.ef_search as u32).to_le_bytes());
    out.extend_from_slice(&p.level_lambda.to_le_bytes());
    out.extend_from_slice(&p.rng_seed.to_le_bytes());
    let entry = index.entry_point.map_or(NO_ENTRY, u64::from);
    out.extend_from_slice(&entry.to_le_bytes());
    out.extend_from_slice(&(index.max_level as u32).to_le_bytes());
    for (node, lists) in index.links.iter().enumerate() {
        out.extend_from_slice(&index.vectors.ids()[node].to_le_bytes());
        out.extend_from_slice(&((lists.len() - 1) as u32).to_le_bytes());
        for list in lists {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &nb in list {
                out.extend_from_slice(&u64::from(nb).to_le_bytes());
            }
        }
    }
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for row in index.vectors.rows() {
        write_f32_row(&mut out, row)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptFile(msg.into())
}

/// Parses and validates an `RHN1` buffer. The result is frozen.
pub fn decode_index(bytes: &[u8]) -> Result<HnswIndex> {
    if bytes.len() < 8 {
        if bytes.len() >= 4 && bytes[..4] != INDEX_MAGIC {
            return Err(Error::Format("bad magic, expected RHN1".into()));
        }
        return Err(corrupt("index header truncated"));
    }
    if bytes[..4] != INDEX_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected RHN1",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(Error::Format(format!(
            "unsupported index version {version}, expected {INDEX_VERSION}"
        )));
    }
    if bytes.len() < 12 {
        return Err(corrupt("index file too short for checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(corrupt(format!(
            "checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"
        )));
    }

    let mut c = Cursor { buf: body, pos: 8 };
    let dim = c.u32("dim")? as usize;
    let count = c.u64("count")?;
    let params = HnswParams {
        max_degree: c.u32("max_degree")? as usize,
        ef_construction: c.u32("ef_construction")? as usize,
        ef_search: c.u32("ef_search")? as usize,
        level_lambda: c.f64("level_lambda")?,
        rng_seed: c.u64("rng_seed")?,
    };
    params
        .validate()
        .map_err(|e| corrupt(format!("invalid parameters: {e}")))?;
    if dim == 0 {
        return Err(corrupt("dimension 0"));
    }
    // Each node needs at least 16 bytes of adjacency plus its vector row.
    let min_node_bytes = 16u64 + dim as u64 * 4;
    if count.saturating_mul(min_node_bytes) > body.len() as u64 {
        return Err(corrupt(format!("count {count} exceeds file size")));
    }
    let count = count as usize;
    let entry = c.u64("entry point")?;
    let max_level = c.u32("max level")? as usize;
    if max_level > MAX_LEVEL {
        return Err(corrupt(format!("max level {max_level} out of range")));
    }
    let entry_point = match (entry, count) {
        (NO_ENTRY, 0) => None,
        (NO_ENTRY, _) => return Err(corrupt("missing entry point")),
        (e, n) if e >= n as u64 => return Err(corrupt(format!("entry point {e} out of range"))),
        (e, _) => Some(e as u32),
    };

    let mut ids = Vec::with_capacity(count);
    let mut links: Vec<Vec<Vec<u32>>> = Vec::with_capacity(count);
    for node in 0..count {
        ids.push(c.u64("record id")?);
        let top = c.u32("node level")? as usize;
        if top > max_level {
            return Err(corrupt(format!(
                "node {node} level {top} above max {max_level}"
            )));
        }
        let mut lists = Vec::with_capacity(top + 1);
        for level in 0..=top {
            let n = c.u32("neighbor count")? as usize;
            if n > params.degree_cap(level) {
                return Err(corrupt(format!("node {node} level {level} degree {n}")));
            }
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let nb = c.u64("neighbor")?;
                if nb >= count as u64 {
                    return Err(corrupt(format!("node {node} links to missing node {nb}")));
                }
                list.push(nb as u32);
            }
            lists.push(list);
        }
        links.push(lists);
    }
    if let Some(ep) = entry_point {
        if links[ep as usize].len() != max_level + 1 {
            return Err(corrupt("entry point is not on the top level"));
        }
    }
    for (node, lists) in links.iter().enumerate() {
        for (level, list) in lists.iter().enumerate() {
            if list.iter().any(|&nb| links[nb as usize].len() <= level) {
                return Err(corrupt(format!(
                    "node {node} has an edge above its target's level"
                )));
            }
        }
    }

    if c.take(4, "vector magic")? != EMBEDDING_MAGIC {
        return Err(corrupt("vector block lacks RVE1 magic"));
    }
    if c.u32("vector dim")? as usize != dim || c.u64("vector count")? != count as u64 {
        return Err(corrupt("vector block header disagrees with index header"));
    }
    let mut vectors = VectorStore::new(dim)?;
    for (node, &id) in ids.iter().enumerate() {
        let raw = c.take(dim * 4, "vector row")?;
        let row: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if row.iter().any(|v| !v.is_finite()) || (dot(&row, &row) - 1.0).abs() > 1e-4 {
            return Err(corrupt(format!(
                "vector row {node} is not a finite unit vector"
            )));
        }
        vectors.push_raw(id, &row);
    }
    if c.pos != body.len() {
        return Err(corrupt(format!(
            "{} unexpected trailing bytes",
            body.len() - c.pos
        )));
    }
    HnswIndex::from_parts(params, vectors, links, entry_point).map_err(|e| corrupt(e.to_string()))
}

impl HnswIndex {
    /// Writes the index to `path`. The index must be frozen.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = encode_index(self)?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        decode_index(&fs::read(path)?)
    }
}
