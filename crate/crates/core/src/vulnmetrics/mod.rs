//! Memory vulnerability metrics computed from the main-memory request stream.
//!
//! Every word's ROI timeline is partitioned by the memory accesses touching
//! it. MVF is the fraction of time that ends in a fill (the value in DRAM was
//! about to be consumed), FEA additionally forgives fills whose data was
//! overwritten before being read. DVF and the LD/ST ratio are reported for
//! comparison.

mod ledger;
mod report;

use serde::{Deserialize, Serialize};

pub use ledger::{accumulate, Accumulator, StructureLedgers, WordLedger};
pub use report::{write_csv, write_histogram, write_json, REPORT_SCHEMA_VERSION};

use crate::layout::StructureId;

/// Default soft error rate: one fault per 10⁹ device-hours, expressed per
/// byte per cycle at 2.6 GHz.
pub const DEFAULT_FIT_PER_CYCLE: f64 = 1.0 / (1e9 * 3600.0 * 2.6e9);

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("ROI duration is zero")]
    ZeroDuration,
    #[error("word granularity must be 8 or 16 bytes, got {0}")]
    Granularity(u64),
    #[error("structure {0} does not start on a word boundary")]
    Unaligned(StructureId),
    #[error("request at time {time} precedes earlier access at {last}")]
    OutOfOrder { time: u64, last: u64 },
    #[error("access at time {time} lies beyond ROI end {roi_end}")]
    OutsideRoi { time: u64, roi_end: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// DVF = FIT · T · S · N.
pub fn dvf(fit_per_cycle: f64, roi_cycles: u64, size_bytes: u64, mem_accesses: u64) -> f64 {
    fit_per_cycle * roi_cycles as f64 * size_bytes as f64 * mem_accesses as f64
}

/// Raw loads/stores; infinite with no stores, 0 with no accesses at all.
pub fn ld_st(loads: u64, stores: u64) -> f64 {
    match (loads, stores) {
        (0, 0) => 0.0,
        (_, 0) => f64::INFINITY,
        _ => loads as f64 / stores as f64,
    }
}

/// loads / (loads + stores), in [0, 1]; 0 when there are no accesses.
pub fn ld_st_normalized(loads: u64, stores: u64) -> f64 {
    match loads + stores {
        0 => 0.0,
        n => loads as f64 / n as f64,
    }
}

/// Per-structure summary. MVF and FEA are unweighted means over words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub structure: StructureId,
    pub words: u64,
    pub size_bytes: u64,
    pub roi_cycles: u64,
    pub mvf: f64,
    pub fea: f64,
    pub safe_ratio: f64,
    pub dvf: f64,
    /// DVF divided by the largest DVF among the reported structures.
    pub dvf_relative: f64,
    pub ld_st: f64,
    pub ld_st_normalized: f64,
    pub mem_loads: u64,
    pub mem_stores: u64,
    pub untouched_words: u64,
}

/// Reduce per-word ledgers to per-structure reports.
pub fn aggregate(ledgers: &[StructureLedgers], fit_per_cycle: f64) -> Result<Vec<StructureReport>, MetricsError> {
    let mut out = Vec::with_capacity(ledgers.len());
    for s in ledgers {
        let n = s.words.len();
        let (mut mvf, mut fea, mut loads, mut stores, mut untouched) = (0.0, 0.0, 0, 0, 0);
        let mut roi = 0;
        for w in &s.words {
            mvf += w.mvf()?;
            fea += w.fea()?;
            loads += w.mem_loads;
            stores += w.mem_stores;
            untouched += u64::from(!w.touched());
            roi = w.total_time();
        }
        let (mvf, fea) = if n == 0 {
            (0.0, 0.0)
        } else {
            (mvf / n as f64, fea / n as f64)
        };
        out.push(StructureReport {
            structure: s.id,
            words: n as u64,
            size_bytes: s.size_bytes,
            roi_cycles: roi,
            mvf,
            fea,
            safe_ratio: 1.0 - mvf,
            dvf: dvf(fit_per_cycle, roi, s.size_bytes, loads + stores),
            dvf_relative: 0.0,
            ld_st: ld_st(loads, stores),
            ld_st_normalized: ld_st_normalized(loads, stores),
            mem_loads: loads,
            mem_stores: stores,
            untouched_words: untouched,
        });
    }
    let max = out.iter().map(|r| r.dvf).fold(0.0, f64::max);
    if max > 0.0 {
        for r in &mut out {
            r.dvf_relative = r.dvf / max;
        }
    }
    Ok(out)
}
