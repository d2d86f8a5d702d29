//! Memory needed to hold per-edge aggregation weights.

use crate::error::{Error, Result};

/// Bytes for one layer's per-edge weights, assuming 4-byte floats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryReport {
    pub edges: u64,
    /// Explicit `Fout × Fin` matrix per edge.
    pub full_rank_bytes: u64,
    /// `r(Fin + Fout + 1)` low-rank factors per edge.
    pub low_rank_bytes: u64,
}

impl MemoryReport {
    pub fn ratio(&self) -> f64 {
        self.full_rank_bytes as f64 / self.low_rank_bytes as f64
    }
}

/// Storage for a batch of `batch` images with `pixels` nodes each and `k`
/// neighbours per node.
pub fn memory_report(batch: u64, pixels: u64, k: u64, fin: u64, fout: u64, rank: u64) -> Result<MemoryReport> {
    let overflow = || Error::invalid("memory estimate overflows 64 bits");
    let edges = batch
        .checked_mul(pixels)
        .and_then(|v| v.checked_mul(k))
        .ok_or_else(overflow)?;
    let full = edges
        .checked_mul(fin)
        .and_then(|v| v.checked_mul(fout))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(overflow)?;
    let per_edge = fin
        .checked_add(fout)
        .and_then(|v| v.checked_add(1))
        .and_then(|v| v.checked_mul(rank))
        .ok_or_else(overflow)?;
    let low = edges
        .checked_mul(per_edge)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(overflow)?;
    Ok(MemoryReport {
        edges,
        full_rank_bytes: full,
        low_rank_bytes: low,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_case() {
        let m = memory_report(1, 1, 1, 1, 1, 1).unwrap();
        assert_eq!((m.full_rank_bytes, m.low_rank_bytes), (4, 12));
    }

    #[test]
    fn overflow_is_an_error() {
        assert!(memory_report(u64::MAX, 2, 1, 1, 1, 1).is_err());
    }
}
