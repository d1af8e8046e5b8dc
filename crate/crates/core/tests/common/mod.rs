//! Independent reference models shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, VecDeque};

use memvuln::cachesim::{
    CacheConfig, FillCause, FillResolution, LevelConfig, MemoryEvent, MemoryRequest, Replacement, RequestKind,
};
use memvuln::faultmodel::{AccessTag, AccessTimeline};
use memvuln::layout::{Region, StructureId, StructureMap};
use memvuln::trace::{AccessEvent, AccessKind};
use memvuln::vulnmetrics::WordLedger;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LINE: u64 = 64;

/// Regions with partial lines, an unmapped gap (bytes 136..192) and one
/// region whose length is an odd number of 8-byte words.
pub fn synthetic_map() -> StructureMap {
    StructureMap::new(vec![
        Region {
            id: StructureId::X,
            base: 0,
            len: 48,
        },
        Region {
            id: StructureId::G,
            base: 48,
            len: 88,
        },
        Region {
            id: StructureId::B,
            base: 192,
            len: 128,
        },
        Region {
            id: StructureId::Q,
            base: 320,
            len: 16,
        },
    ])
    .unwrap()
}

/// A well-formed memory event stream over `lines` lines: every fill gets
/// exactly one resolution, emitted before any later request to its line.
/// Returns the events and a ROI end at or after the last request.
pub fn random_stream(rng: &mut ChaCha8Rng, lines: u64, max_events: usize) -> (Vec<MemoryEvent>, u64) {
    let mut out = Vec::new();
    let mut open: BTreeMap<u64, u64> = BTreeMap::new();
    let mut now = rng.gen_range(0..4u64);
    let mut next_id = 0;
    let n = rng.gen_range(0..=max_events);
    let resolve = |out: &mut Vec<MemoryEvent>, rng: &mut ChaCha8Rng, line: u64, id: u64, now: u64| {
        let overwritten = if rng.gen_bool(0.4) { rng.gen::<u8>() } else { 0 };
        out.push(MemoryEvent::Resolution(FillResolution {
            fill_id: id,
            line_addr: line * LINE,
            overwritten,
            resolution_time: now,
        }));
    };
    for _ in 0..n {
        now += rng.gen_range(0..6u64);
        let line = rng.gen_range(0..lines);
        match rng.gen_range(0..10) {
            0..=5 => {
                if let Some(id) = open.remove(&line) {
                    resolve(&mut out, rng, line, id, now);
                }
                out.push(MemoryEvent::Request(MemoryRequest {
                    time: now,
                    kind: RequestKind::Fill,
                    line_addr: line * LINE,
                    fill_cause: if rng.gen() {
                        FillCause::LoadMiss
                    } else {
                        FillCause::StoreMiss
                    },
                    fill_id: Some(next_id),
                }));
                open.insert(line, next_id);
                next_id += 1;
            }
            6..=8 => {
                if let Some(id) = open.remove(&line) {
                    resolve(&mut out, rng, line, id, now);
                }
                out.push(MemoryEvent::Request(MemoryRequest {
                    time: now,
                    kind: RequestKind::Writeback,
                    line_addr: line * LINE,
                    fill_cause: FillCause::None,
                    fill_id: None,
                }));
            }
            _ => {
                // resolve some open fill early
                if let Some((&l, &id)) = open.iter().nth(rng.gen_range(0..open.len().max(1))) {
                    open.remove(&l);
                    resolve(&mut out, rng, l, id, now);
                }
            }
        }
    }
    for (l, id) in std::mem::take(&mut open) {
        resolve(&mut out, rng, l, id, now);
    }
    let roi_end = now + rng.gen_range(1..50u64);
    (out, roi_end)
}

/// Brute-force interval accounting: for every word, list the requests that
/// touch it, then sum the gaps between consecutive ones.
pub fn oracle_ledgers(
    events: &[MemoryEvent],
    map: &StructureMap,
    word_bytes: u64,
    roi_end: u64,
) -> Vec<(StructureId, Vec<WordLedger>)> {
    let mut masks: HashMap<u64, u8> = HashMap::new();
    for ev in events {
        if let MemoryEvent::Resolution(r) = ev {
            masks.insert(r.fill_id, r.overwritten);
        }
    }
    map.regions()
        .iter()
        .map(|r| {
            let words = (0..r.len.div_ceil(word_bytes))
                .map(|w| {
                    let lo = r.base + w * word_bytes;
                    let hi = (lo + word_bytes).min(r.end());
                    let mut ledger = WordLedger::default();
                    let mut prev = 0;
                    for ev in events {
                        let MemoryEvent::Request(q) = ev else { continue };
                        if q.time > roi_end || q.line_addr >= hi || q.line_addr + LINE <= lo {
                            continue;
                        }
                        let gap = q.time - prev;
                        prev = q.time;
                        match q.kind {
                            RequestKind::Fill => {
                                ledger.mem_loads += 1;
                                ledger.vulnerable_time += gap;
                                let mask = masks[&q.fill_id.unwrap()];
                                let all = (lo..hi).step_by(8).all(|a| mask & (1 << ((a - q.line_addr) / 8)) != 0);
                                if all {
                                    ledger.fea_reclassified_time += gap;
                                }
                            }
                            RequestKind::Writeback => {
                                ledger.mem_stores += 1;
                                ledger.safe_time += gap;
                            }
                        }
                    }
                    ledger.safe_time += roi_end - prev;
                    ledger
                })
                .collect();
            (r.id, words)
        })
        .collect()
}

/// Functional non-inclusive write-back, write-allocate hierarchy with LRU
/// sets kept as recency-ordered lists (most recent at the back).
pub struct FunctionalCache {
    levels: Vec<FLevel>,
    pub fills: Vec<u64>,
    pub writebacks: Vec<u64>,
}

struct FLevel {
    sets: Vec<VecDeque<(u64, bool)>>,
    ways: usize,
}

impl FLevel {
    fn set(&mut self, line: u64) -> &mut VecDeque<(u64, bool)> {
        let n = self.sets.len() as u64;
        &mut self.sets[(line % n) as usize]
    }

    fn has(&self, line: u64) -> bool {
        let n = self.sets.len() as u64;
        self.sets[(line % n) as usize].iter().any(|e| e.0 == line)
    }

    /// Move to most-recent position, OR-ing in `dirty`.
    fn refresh(&mut self, line: u64, dirty: bool) -> bool {
        let set = self.set(line);
        match set.iter().position(|e| e.0 == line) {
            Some(i) => {
                let (l, d) = set.remove(i).unwrap();
                set.push_back((l, d || dirty));
                true
            }
            None => false,
        }
    }

    fn put(&mut self, line: u64, dirty: bool) -> Option<(u64, bool)> {
        let ways = self.ways;
        let set = self.set(line);
        let victim = if set.len() == ways { set.pop_front() } else { None };
        set.push_back((line, dirty));
        victim
    }
}

impl FunctionalCache {
    pub fn new(cfg: &CacheConfig) -> Self {
        assert_eq!(cfg.replacement, Replacement::Lru);
        let levels = cfg
            .levels
            .iter()
            .map(|l| {
                let n = (l.size_bytes / (l.assoc as u64 * LINE)) as usize;
                FLevel {
                    sets: vec![VecDeque::new(); n],
                    ways: l.assoc,
                }
            })
            .collect();
        Self {
            levels,
            fills: Vec::new(),
            writebacks: Vec::new(),
        }
    }

    pub fn access(&mut self, ev: &AccessEvent) {
        let store = ev.kind == AccessKind::Store;
        let first = ev.addr / LINE;
        let last = (ev.addr + ev.width as u64 - 1) / LINE;
        for line in first..=last {
            self.access_line(line, store);
        }
    }

    fn access_line(&mut self, line: u64, store: bool) {
        let depth = self.levels.len();
        let found = (0..depth).find(|&i| self.levels[i].has(line));
        let top = match found {
            Some(0) => {
                self.levels[0].refresh(line, store);
                return;
            }
            Some(k) => {
                self.levels[k].refresh(line, false);
                k
            }
            None => {
                self.fills.push(line);
                depth
            }
        };
        for i in (0..top).rev() {
            if self.levels[i].has(line) {
                continue;
            }
            if let Some(v) = self.levels[i].put(line, i == 0 && store) {
                self.spill(i, v);
            }
        }
    }

    fn spill(&mut self, level: usize, (line, dirty): (u64, bool)) {
        if !dirty {
            return;
        }
        if level + 1 == self.levels.len() {
            self.writebacks.push(line);
            return;
        }
        let next = &mut self.levels[level + 1];
        if !next.refresh(line, true) {
            if let Some(v) = next.put(line, true) {
                self.spill(level + 1, v);
            }
        }
    }

    /// Write back every line dirty anywhere, once.
    pub fn flush(&mut self) {
        let mut dirty: Vec<u64> = self
            .levels
            .iter()
            .flat_map(|l| l.sets.iter().flatten().filter(|e| e.1).map(|e| e.0))
            .collect();
        dirty.sort_unstable();
        dirty.dedup();
        self.writebacks.extend(dirty);
    }
}

/// Small hierarchy that evicts constantly on short traces.
pub fn tiny_cache(rng: &mut ChaCha8Rng) -> CacheConfig {
    let mut cfg = CacheConfig::table1();
    let mut sizes = [(1usize, 2usize), (2, 2), (4, 4)];
    for s in &mut sizes {
        s.0 *= rng.gen_range(1..=2);
        s.1 = rng.gen_range(1..=s.1 + 1);
    }
    for (l, (sets, ways)) in cfg.levels.iter_mut().zip(sizes) {
        *l = LevelConfig {
            shared: l.shared,
            assoc: ways,
            size_bytes: (sets * ways) as u64 * LINE,
            latency: l.latency,
            mshrs: l.mshrs,
        };
    }
    cfg
}

/// Random accesses over `lines` lines, some straddling a line boundary.
pub fn random_trace(rng: &mut ChaCha8Rng, lines: u64, n: usize) -> Vec<AccessEvent> {
    (0..n as u64)
        .map(|t| {
            let width = [1u8, 2, 4, 8, 8, 8][rng.gen_range(0..6)];
            let addr = rng.gen_range(0..lines * LINE - width as u64);
            AccessEvent {
                time: t,
                kind: if rng.gen_bool(0.35) {
                    AccessKind::Store
                } else {
                    AccessKind::Load
                },
                addr,
                width,
                structure: None,
            }
        })
        .collect()
}

/// Sorted (fills, write-backs) line lists of a simulator event stream.
pub fn request_multisets(events: &[MemoryEvent]) -> (Vec<u64>, Vec<u64>) {
    let (mut fills, mut wbs) = (Vec::new(), Vec::new());
    for ev in events {
        if let MemoryEvent::Request(r) = ev {
            match r.kind {
                RequestKind::Fill => fills.push(r.line_addr / LINE),
                RequestKind::Writeback => wbs.push(r.line_addr / LINE),
            }
        }
    }
    fills.sort_unstable();
    wbs.sort_unstable();
    (fills, wbs)
}

/// Random timeline with strictly increasing access times inside [1, T].
pub fn random_timeline(rng: &mut ChaCha8Rng, roi: u64, max_accesses: usize) -> AccessTimeline {
    let k = rng.gen_range(0..=max_accesses.min(roi as usize));
    let mut times: Vec<u64> = (0..k).map(|_| rng.gen_range(1..=roi)).collect();
    times.sort_unstable();
    times.dedup();
    let accesses = times
        .into_iter()
        .map(|t| {
            (
                t,
                if rng.gen_bool(0.5) {
                    AccessTag::Unsafe
                } else {
                    AccessTag::Safe
                },
            )
        })
        .collect();
    AccessTimeline::new(roi, accesses).unwrap()
}
