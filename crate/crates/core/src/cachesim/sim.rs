use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::config::CacheConfig;
use super::level::{Level, Victim};
use super::{FillCause, FillResolution, MemoryEvent, MemoryRequest, MemorySink, RequestKind, SimError};
use crate::trace::{AccessEvent, AccessKind, EventSink, RoiMarkers};

const WORDS_PER_LINE: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub accesses: u64,
    pub skipped_outside_roi: u64,
    /// Hits per level, L1D first.
    pub hits: [u64; 3],
    pub fills: u64,
    pub writebacks: u64,
    pub flush_writebacks: u64,
    pub mshr_merges: u64,
    pub mshr_stall_cycles: u64,
    pub words_overwritten: u64,
    pub words_consumed: u64,
}

/// Result of a finished simulation.
#[derive(Debug)]
pub struct SimOutcome<S> {
    pub sink: S,
    /// ROI duration T in cycles: issue cycle of the last access minus that
    /// of the first.
    pub total_cycles: u64,
    pub stats: SimStats,
}

/// Byte coverage of a fetched line, tracked until every word has a verdict.
struct PendingFill {
    fill_id: u64,
    line: u64,
    covered: [u8; WORDS_PER_LINE],
    decided: u8,
    overwritten: u8,
}

impl PendingFill {
    fn is_complete(&self) -> bool {
        self.decided == 0xFF
    }

    /// Apply one access to bytes `lo..hi` of the line.
    fn observe(&mut self, kind: AccessKind, lo: usize, hi: usize) {
        for w in lo / 8..=(hi - 1) / 8 {
            let bit = 1u8 << w;
            if self.decided & bit != 0 {
                continue;
            }
            match kind {
                AccessKind::Load => self.decided |= bit,
                AccessKind::Store => {
                    let (wlo, whi) = (lo.max(w * 8) - w * 8, hi.min(w * 8 + 8) - w * 8);
                    let mask = (((1u16 << whi) - 1) & !((1u16 << wlo) - 1)) as u8;
                    self.covered[w] |= mask;
                    if self.covered[w] == 0xFF {
                        self.decided |= bit;
                        self.overwritten |= bit;
                    }
                }
            }
        }
    }
}

/// Three-level write-back, write-allocate, non-inclusive cache hierarchy fed
/// one program access at a time.
///
/// Every main-memory access (fill or write-back) is stamped with the issue
/// cycle of the program access that caused it and forwarded to the sink. For
/// each fill the sink later receives exactly one [`FillResolution`], always
/// before any further memory request for the same line.
pub struct Simulator<S: MemorySink> {
    cfg: CacheConfig,
    levels: Vec<Level>,
    sink: S,
    pending: HashMap<u64, PendingFill>,
    next_fill_id: u64,
    now: u64,
    first_issue: Option<u64>,
    last_tick: Option<u64>,
    stats: SimStats,
    error: Option<SimError>,
}

impl<S: MemorySink> Simulator<S> {
    pub fn new(cfg: &CacheConfig, sink: S) -> Result<Self, SimError> {
        cfg.validate()?;
        let levels = cfg
            .levels
            .iter()
            .map(|l| Level::new(l, cfg.line_size, cfg.replacement))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            levels,
            sink,
            pending: HashMap::new(),
            next_fill_id: 0,
            now: 0,
            first_issue: None,
            last_tick: None,
            stats: SimStats::default(),
            error: None,
        })
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    /// Current cycle.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn access(&mut self, ev: &AccessEvent) -> Result<(), SimError> {
        if ev.width == 0 || ev.end() > self.cfg.memory_size_bytes {
            return Err(SimError::AddressOutOfRange {
                addr: ev.addr,
                capacity: self.cfg.memory_size_bytes,
            });
        }
        match self.last_tick {
            Some(prev) if ev.time < prev => {
                return Err(SimError::OutOfOrder {
                    previous: prev,
                    time: ev.time,
                })
            }
            Some(prev) => self.now += ev.time - prev,
            None => {}
        }
        self.last_tick = Some(ev.time);
        self.stats.accesses += 1;
        self.first_issue.get_or_insert(self.now);

        let line_bytes = self.cfg.line_size;
        let first = ev.addr / line_bytes;
        let last = (ev.end() - 1) / line_bytes;
        for line in first..=last {
            let base = line * line_bytes;
            let lo = ev.addr.max(base) - base;
            let hi = ev.end().min(base + line_bytes) - base;
            self.access_line(line, ev.kind, lo as usize, hi as usize);
        }
        Ok(())
    }

    fn access_line(&mut self, line: u64, kind: AccessKind, lo: usize, hi: usize) {
        let is_store = kind == AccessKind::Store;
        let hit = (0..self.levels.len()).find(|&i| self.levels[i].contains(line));
        let service = hit.unwrap_or(self.levels.len());

        if service == 0 {
            if self.levels[0].pending(line, self.now).is_some() {
                self.stats.mshr_merges += 1;
            }
        } else {
            for i in 0..service {
                let free = self.levels[i].reserve_mshr(self.now);
                if free > self.now {
                    self.stats.mshr_stall_cycles += free - self.now;
                    self.now = free;
                }
            }
            let done = self.now + self.cfg.latency_to(service);
            for i in 0..service {
                self.levels[i].track_miss(line, done);
            }
        }

        match hit {
            Some(0) => {
                let slot = self.levels[0].find(line).expect("hit");
                self.levels[0].touch(slot, is_store);
                self.stats.hits[0] += 1;
            }
            Some(k) => {
                let slot = self.levels[k].find(line).expect("hit");
                self.levels[k].touch(slot, false);
                self.stats.hits[k] += 1;
                self.install_above(line, k, is_store);
            }
            None => {
                let fill_id = self.next_fill_id;
                self.next_fill_id += 1;
                self.stats.fills += 1;
                self.emit(MemoryEvent::Request(MemoryRequest {
                    time: self.now,
                    kind: RequestKind::Fill,
                    line_addr: line * self.cfg.line_size,
                    fill_cause: if is_store {
                        FillCause::StoreMiss
                    } else {
                        FillCause::LoadMiss
                    },
                    fill_id: Some(fill_id),
                }));
                self.pending.insert(
                    line,
                    PendingFill {
                        fill_id,
                        line,
                        covered: [0; WORDS_PER_LINE],
                        decided: 0,
                        overwritten: 0,
                    },
                );
                self.install_above(line, self.levels.len(), is_store);
            }
        }

        if let Some(p) = self.pending.get_mut(&line) {
            p.observe(kind, lo, hi);
            if p.is_complete() {
                let p = self.pending.remove(&line).expect("present");
                self.emit_resolution(p);
            }
        }
    }

    /// Install `line` in every level above `from` (exclusive), deepest first.
    fn install_above(&mut self, line: u64, from: usize, is_store: bool) {
        for i in (0..from).rev() {
            if self.levels[i].contains(line) {
                continue;
            }
            let dirty = i == 0 && is_store;
            if let Some(v) = self.levels[i].insert(line, dirty) {
                self.evicted(i, v);
            }
        }
    }

    fn evicted(&mut self, level: usize, v: Victim) {
        if v.dirty {
            if level + 1 < self.levels.len() {
                if let Some(v2) = self.levels[level + 1].absorb_writeback(v.line) {
                    self.evicted(level + 1, v2);
                }
            } else {
                self.resolve(v.line);
                self.writeback(v.line);
            }
        } else if !self.levels.iter().any(|l| l.contains(v.line)) {
            self.resolve(v.line);
        }
    }

    fn writeback(&mut self, line: u64) {
        self.stats.writebacks += 1;
        self.emit(MemoryEvent::Request(MemoryRequest {
            time: self.now,
            kind: RequestKind::Writeback,
            line_addr: line * self.cfg.line_size,
            fill_cause: FillCause::None,
            fill_id: None,
        }));
    }

    /// Close the fill of `line`, if still open: undecided words are consumed.
    fn resolve(&mut self, line: u64) {
        if let Some(p) = self.pending.remove(&line) {
            self.emit_resolution(p);
        }
    }

    fn emit_resolution(&mut self, p: PendingFill) {
        let overwritten = p.overwritten;
        self.stats.words_overwritten += overwritten.count_ones() as u64;
        self.stats.words_consumed += (WORDS_PER_LINE as u32 - overwritten.count_ones()) as u64;
        self.emit(MemoryEvent::Resolution(FillResolution {
            fill_id: p.fill_id,
            line_addr: p.line * self.cfg.line_size,
            overwritten,
            resolution_time: self.now,
        }));
    }

    fn emit(&mut self, ev: MemoryEvent) {
        self.sink.memory_event(&ev);
    }

    /// End of ROI: close every open fill and write back every dirty line
    /// once, all at the final cycle.
    pub fn finish(mut self) -> Result<SimOutcome<S>, SimError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let mut open: Vec<_> = self.pending.drain().map(|(_, p)| p).collect();
        open.sort_by_key(|p| p.fill_id);
        for p in open {
            self.emit_resolution(p);
        }
        let dirty: BTreeSet<u64> = self.levels.iter().flat_map(|l| l.dirty_lines()).collect();
        for line in dirty {
            self.stats.flush_writebacks += 1;
            self.writeback(line);
        }
        let total_cycles = self.first_issue.map_or(0, |f| self.now - f);
        Ok(SimOutcome {
            sink: self.sink,
            total_cycles,
            stats: self.stats,
        })
    }
}

impl<S: MemorySink> EventSink for Simulator<S> {
    fn event(&mut self, ev: &AccessEvent) {
        if self.error.is_none() {
            if let Err(e) = self.access(ev) {
                self.error = Some(e);
            }
        }
    }
}

/// Run the hierarchy over every ROI event of a trace.
pub fn simulate<I, E, S>(events: I, roi: RoiMarkers, cfg: &CacheConfig, sink: S) -> Result<SimOutcome<S>, SimError>
where
    I: IntoIterator<Item = Result<AccessEvent, E>>,
    E: Into<SimError>,
    S: MemorySink,
{
    let mut sim = Simulator::new(cfg, sink)?;
    let mut skipped = 0;
    for ev in events {
        let ev = ev.map_err(Into::into)?;
        if !roi.contains(ev.time) {
            skipped += 1;
            continue;
        }
        sim.access(&ev)?;
    }
    sim.stats.skipped_outside_roi = skipped;
    sim.finish()
}

/// Total ROI cycles of a trace under `cfg`.
pub fn simulated_time<I, E>(events: I, roi: RoiMarkers, cfg: &CacheConfig) -> Result<u64, SimError>
where
    I: IntoIterator<Item = Result<AccessEvent, E>>,
    E: Into<SimError>,
{
    Ok(simulate(events, roi, cfg, super::Discard)?.total_cycles)
}
