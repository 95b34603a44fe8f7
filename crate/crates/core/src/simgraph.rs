//! Thresholded cosine-similarity neighbour sets over a binary matrix.
//!
//! User-user sets come from the training matrix, item-item sets from its
//! transpose. Only co-occurring pairs are examined (inverted index).
//!
//! Cache layout (`PMLAM-NBR v1`, little endian):
//!
//! ```text
//! 12 bytes   magic "PMLAM-NBR v1"
//! u32 + n    key string (dataset hash, fold, side, threshold)
//! u64        entity count n
//! u64        stored neighbour count nnz
//! (n+1)×u64  row offsets
//! nnz×u32    neighbour indices
//! ```

use std::fs;
use std::path::Path;

use crate::data::{write_atomic, Csr};
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::Side;

const NBR_MAGIC: &[u8; 12] = b"PMLAM-NBR v1";

/// |A ∩ B| / √(|A|·|B|) for sorted index sets.
pub fn cosine_binary(a: &[u32], b: &[u32]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "cosine of an empty row");
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    similarity(common, a.len(), b.len())
}

fn similarity(common: usize, na: usize, nb: usize) -> f64 {
    common as f64 / ((na as f64) * (nb as f64)).sqrt()
}

/// Per-entity sorted neighbour lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSets {
    pub side: Side,
    pub threshold: f64,
    pub lists: Csr,
}

impl NeighborSets {
    pub fn len(&self) -> usize {
        self.lists.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn neighbors(&self, e: usize) -> &[u32] {
        self.lists.row(e)
    }

    /// Every stored (anchor, neighbour) pair, both directions.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        (0..self.len())
            .flat_map(|a| self.neighbors(a).iter().map(move |&b| (a as u32, b)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.lists.nnz()
    }

    pub fn save(&self, path: &Path, key: &str) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + key.len() + 8 * self.lists.indptr.len() + 4 * self.lists.nnz());
        buf.extend_from_slice(NBR_MAGIC);
        buf.extend_from_slice(&(key.len() as u32).to_le_bytes());
        buf.extend_from_slice(key.as_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.lists.nnz() as u64).to_le_bytes());
        for &p in &self.lists.indptr {
            buf.extend_from_slice(&(p as u64).to_le_bytes());
        }
        for &i in &self.lists.indices {
            buf.extend_from_slice(&i.to_le_bytes());
        }
        write_atomic(path, &buf)
    }

    /// Load a cache file; `Ok(None)` when its key differs from `key`.
    pub fn load(path: &Path, key: &str, side: Side, threshold: f64) -> Result<Option<Self>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: &str| Error::format(path, "neighbour cache", msg.to_string());
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(12).ok_or_else(|| bad("truncated"))? != NBR_MAGIC {
            return Err(bad("missing PMLAM-NBR v1 header"));
        }
        let klen = r.u32().ok_or_else(|| bad("truncated"))? as usize;
        let stored = r.take(klen).ok_or_else(|| bad("truncated"))?;
        if stored != key.as_bytes() {
            return Ok(None);
        }
        let n = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let nnz = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let mut indptr = Vec::with_capacity(n + 1);
        for _ in 0..=n {
            indptr.push(r.u64().ok_or_else(|| bad("truncated"))? as usize);
        }
        let mut indices = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            indices.push(r.u32().ok_or_else(|| bad("truncated"))?);
        }
        if indptr.last() != Some(&nnz) || indices.iter().any(|&i| i as usize >= n) {
            return Err(bad("inconsistent offsets"));
        }
        Ok(Some(NeighborSets {
            side,
            threshold,
            lists: Csr { indptr, indices, n_cols: n },
        }))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Neighbours of every row of `matrix` with cosine ≥ `threshold`.
/// Empty rows get no neighbours.
pub fn build(matrix: &Csr, threshold: f64, side: Side) -> NeighborSets {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must lie in (0, 1]");
    let n = matrix.n_rows();
    let inverted = matrix.transpose();
    let chunks = exec::map_chunks(n, 64, |range| {
        let mut counts = vec![0u32; n];
        let mut touched = Vec::new();
        let mut rows = Vec::with_capacity(range.len());
        for a in range {
            for &c in matrix.row(a) {
                for &b in inverted.row(c as usize) {
                    if b as usize != a {
                        if counts[b as usize] == 0 {
                            touched.push(b);
                        }
                        counts[b as usize] += 1;
                    }
                }
            }
            touched.sort_unstable();
            let na = matrix.row(a).len();
            let mut row = Vec::new();
            for &b in &touched {
                let nb = matrix.row(b as usize).len();
                if similarity(counts[b as usize] as usize, na, nb) >= threshold {
                    row.push(b);
                }
                counts[b as usize] = 0;
            }
            touched.clear();
            rows.push(row);
        }
        rows
    });
    let rows: Vec<Vec<u32>> = chunks.into_iter().flatten().collect();
    NeighborSets {
        side,
        threshold,
        lists: Csr::from_rows(&rows, n),
    }
}

/// Cache key for a neighbour file.
pub fn cache_key(dataset_hash: &str, fold: usize, side: Side, threshold: f64) -> String {
    let side = match side {
        Side::Users => "users",
        Side::Items => "items",
    };
    format!("{dataset_hash}/fold{fold}/{side}/tau={threshold:?}")
}

/// Load neighbour sets from `path` if its key matches, otherwise build and
/// write them.
pub fn load_or_build(path: &Path, key: &str, matrix: &Csr, threshold: f64, side: Side) -> Result<NeighborSets> {
    if path.exists() {
        if let Some(sets) = NeighborSets::load(path, key, side, threshold)? {
            return Ok(sets);
        }
    }
    let sets = build(matrix, threshold, side);
    sets.save(path, key)?;
    Ok(sets)
}
