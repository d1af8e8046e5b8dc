use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::cachesim::{FillResolution, MemoryEvent, MemoryRequest, MemorySink, RequestKind};
use crate::layout::{Region, StructureId, StructureMap};

/// Time accounting for one memory word over the ROI.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordLedger {
    /// Time spent before consuming accesses (fills), in cycles. Includes
    /// `fea_reclassified_time`.
    pub vulnerable_time: u64,
    /// Time spent before write-backs, plus the trailing time to ROI end.
    pub safe_time: u64,
    /// Part of `vulnerable_time` that ended in a fill whose fetched contents
    /// were overwritten before being read.
    pub fea_reclassified_time: u64,
    /// Fills touching this word.
    pub mem_loads: u64,
    /// Write-backs touching this word.
    pub mem_stores: u64,
}

impl WordLedger {
    pub fn total_time(&self) -> u64 {
        self.vulnerable_time + self.safe_time
    }

    pub fn mvf(&self) -> Result<f64, MetricsError> {
        Ok(self.vulnerable_time as f64 / self.nonzero_total()? as f64)
    }

    pub fn fea(&self) -> Result<f64, MetricsError> {
        Ok((self.vulnerable_time - self.fea_reclassified_time) as f64 / self.nonzero_total()? as f64)
    }

    /// `1 - mvf`.
    pub fn safe_ratio(&self) -> Result<f64, MetricsError> {
        Ok(1.0 - self.mvf()?)
    }

    pub fn touched(&self) -> bool {
        self.mem_loads + self.mem_stores > 0
    }

    fn nonzero_total(&self) -> Result<u64, MetricsError> {
        match self.total_time() {
            0 => Err(MetricsError::ZeroDuration),
            t => Ok(t),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct WordState {
    ledger: WordLedger,
    /// Time of the last memory access to this word (ROI start = 0).
    last: u64,
    /// Length of the period ended by a fill whose verdict is not known yet.
    pending: Option<u64>,
}

/// Ledgers of every word of one structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureLedgers {
    pub id: StructureId,
    pub size_bytes: u64,
    pub word_bytes: u64,
    pub words: Vec<WordLedger>,
}

/// Streaming fold of the memory event stream into per-word ledgers.
///
/// Each word's ROI timeline is cut at every fill and write-back touching it.
/// The period before a write-back is safe; the period before a fill is
/// vulnerable, and counts as FEA-safe as well when the fill's verdict for the
/// word is "overwritten". The period after the last access is safe.
pub struct Accumulator {
    word_bytes: u64,
    line_bytes: u64,
    regions: Vec<Region>,
    states: Vec<Vec<WordState>>,
    ignored: u64,
    window_end: Option<u64>,
    error: Option<MetricsError>,
}

impl Accumulator {
    /// `word_bytes` is 8 (SECDED-sized words) or 16 (ChipKill-sized words).
    /// Regions must start on a word boundary; a region whose length is not a
    /// multiple of the word ends in a short word.
    pub fn new(map: &StructureMap, word_bytes: u64) -> Result<Self, MetricsError> {
        if word_bytes != 8 && word_bytes != 16 {
            return Err(MetricsError::Granularity(word_bytes));
        }
        let regions: Vec<Region> = map.regions().to_vec();
        for r in &regions {
            if r.base % word_bytes != 0 {
                return Err(MetricsError::Unaligned(r.id));
            }
        }
        let states = regions
            .iter()
            .map(|r| vec![WordState::default(); r.len.div_ceil(word_bytes) as usize])
            .collect();
        Ok(Self {
            word_bytes,
            line_bytes: crate::cachesim::LINE_BYTES,
            regions,
            states,
            ignored: 0,
            window_end: None,
            error: None,
        })
    }

    /// Ignore (and count) requests later than `roi_end`.
    pub fn with_window(mut self, roi_end: u64) -> Self {
        self.window_end = Some(roi_end);
        self
    }

    /// Requests dropped because they fell outside the ROI window.
    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// Apply `f` to every tracked word of the line at `line_addr`, passing
    /// the word's overwritten flag computed from `mask` (bit per 8 bytes).
    fn for_words(&mut self, line_addr: u64, mut f: impl FnMut(&mut WordState, u8)) {
        let wb = self.word_bytes;
        let mut addr = line_addr;
        let end = line_addr + self.line_bytes;
        while addr < end {
            let idx = self.regions.partition_point(|r| r.base <= addr);
            let Some(ri) = idx.checked_sub(1) else {
                addr = self.regions.first().map_or(end, |r| r.base.min(end));
                continue;
            };
            let r = self.regions[ri];
            if addr >= r.end() {
                addr = self.regions.get(ri + 1).map_or(end, |n| n.base.min(end));
                continue;
            }
            let stop = end.min(r.end());
            while addr < stop {
                let w = ((addr - r.base) / wb) as usize;
                let sub = ((addr - line_addr) / 8) as u32;
                let subwords = ((stop.min(addr + wb) - addr) / 8) as u32;
                let bits = ((1u16 << subwords) - 1) << sub;
                f(&mut self.states[ri][w], bits as u8);
                addr += wb;
            }
        }
    }

    pub fn request(&mut self, r: &MemoryRequest) {
        if let Some(end) = self.window_end {
            if r.time > end {
                self.ignored += 1;
                return;
            }
        }
        let t = r.time;
        let mut err = None;
        match r.kind {
            RequestKind::Fill => self.for_words(r.line_addr, |s, _| {
                if t < s.last {
                    err = Some(MetricsError::OutOfOrder { time: t, last: s.last });
                    return;
                }
                if let Some(p) = s.pending.take() {
                    s.ledger.vulnerable_time += p;
                }
                s.pending = Some(t - s.last);
                s.last = t;
                s.ledger.mem_loads += 1;
            }),
            RequestKind::Writeback => self.for_words(r.line_addr, |s, _| {
                if t < s.last {
                    err = Some(MetricsError::OutOfOrder { time: t, last: s.last });
                    return;
                }
                if let Some(p) = s.pending.take() {
                    s.ledger.vulnerable_time += p;
                }
                s.ledger.safe_time += t - s.last;
                s.last = t;
                s.ledger.mem_stores += 1;
            }),
        }
        if let Some(e) = err {
            self.error.get_or_insert(e);
        }
    }

    pub fn resolution(&mut self, r: &FillResolution) {
        let overwritten = r.overwritten;
        self.for_words(r.line_addr, |s, bits| {
            if let Some(p) = s.pending.take() {
                s.ledger.vulnerable_time += p;
                if overwritten & bits == bits {
                    s.ledger.fea_reclassified_time += p;
                }
            }
        });
    }

    /// Close every timeline at `roi_end` (the ROI duration T).
    pub fn finish(mut self, roi_end: u64) -> Result<Vec<StructureLedgers>, MetricsError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        if roi_end == 0 {
            return Err(MetricsError::ZeroDuration);
        }
        let mut out = Vec::with_capacity(self.regions.len());
        for (r, states) in self.regions.iter().zip(self.states) {
            let mut words = Vec::with_capacity(states.len());
            for mut s in states {
                if s.last > roi_end {
                    return Err(MetricsError::OutsideRoi { time: s.last, roi_end });
                }
                if let Some(p) = s.pending.take() {
                    s.ledger.vulnerable_time += p;
                }
                s.ledger.safe_time += roi_end - s.last;
                debug_assert_eq!(s.ledger.total_time(), roi_end);
                words.push(s.ledger);
            }
            out.push(StructureLedgers {
                id: r.id,
                size_bytes: r.len,
                word_bytes: self.word_bytes,
                words,
            });
        }
        Ok(out)
    }
}

impl MemorySink for Accumulator {
    fn memory_event(&mut self, ev: &MemoryEvent) {
        match ev {
            MemoryEvent::Request(r) => self.request(r),
            MemoryEvent::Resolution(r) => self.resolution(r),
        }
    }
}

/// Fold a complete memory event stream. Requests later than `roi_end` are
/// ignored.
pub fn accumulate<'a, I>(
    events: I,
    map: &StructureMap,
    word_bytes: u64,
    roi_end: u64,
) -> Result<(Vec<StructureLedgers>, u64), MetricsError>
where
    I: IntoIterator<Item = &'a MemoryEvent>,
{
    let mut acc = Accumulator::new(map, word_bytes)?.with_window(roi_end);
    for ev in events {
        acc.memory_event(ev);
    }
    let ignored = acc.ignored();
    Ok((acc.finish(roi_end)?, ignored))
}
