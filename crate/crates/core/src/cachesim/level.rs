use super::config::{LevelConfig, Replacement};

const EMPTY: u64 = u64::MAX;

/// One set-associative cache level holding line numbers (address / 64).
pub(crate) struct Level {
    sets: usize,
    ways: usize,
    tags: Vec<u64>,
    dirty: Vec<bool>,
    /// LRU: last use. FIFO: insertion.
    stamp: Vec<u64>,
    clock: u64,
    policy: Replacement,
    /// Completion cycles of outstanding misses.
    mshr: Vec<(u64, u64)>,
    mshr_capacity: usize,
}

pub(crate) struct Victim {
    pub line: u64,
    pub dirty: bool,
}

impl Level {
    pub fn new(cfg: &LevelConfig, line_size: u64, policy: Replacement) -> Self {
        let sets = cfg.sets(line_size);
        let slots = sets * cfg.assoc;
        Self {
            sets,
            ways: cfg.assoc,
            tags: vec![EMPTY; slots],
            dirty: vec![false; slots],
            stamp: vec![0; slots],
            clock: 0,
            policy,
            mshr: Vec::with_capacity(cfg.mshrs),
            mshr_capacity: cfg.mshrs,
        }
    }

    #[inline]
    fn set_range(&self, line: u64) -> std::ops::Range<usize> {
        let set = (line % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    #[inline]
    pub fn find(&self, line: u64) -> Option<usize> {
        self.set_range(line).find(|&s| self.tags[s] == line)
    }

    pub fn contains(&self, line: u64) -> bool {
        self.find(line).is_some()
    }

    pub fn touch(&mut self, slot: usize, make_dirty: bool) {
        self.clock += 1;
        if self.policy == Replacement::Lru {
            self.stamp[slot] = self.clock;
        }
        self.dirty[slot] |= make_dirty;
    }

    /// Insert a line known to be absent. Returns the displaced line, if any.
    pub fn insert(&mut self, line: u64, dirty: bool) -> Option<Victim> {
        debug_assert!(self.find(line).is_none());
        let range = self.set_range(line);
        let slot = range
            .clone()
            .find(|&s| self.tags[s] == EMPTY)
            .unwrap_or_else(|| range.min_by_key(|&s| self.stamp[s]).expect("non-empty set"));
        let victim = (self.tags[slot] != EMPTY).then(|| Victim {
            line: self.tags[slot],
            dirty: self.dirty[slot],
        });
        self.clock += 1;
        self.tags[slot] = line;
        self.dirty[slot] = dirty;
        self.stamp[slot] = self.clock;
        victim
    }

    /// Mark a resident line dirty or insert it dirty.
    pub fn absorb_writeback(&mut self, line: u64) -> Option<Victim> {
        match self.find(line) {
            Some(slot) => {
                self.touch(slot, true);
                None
            }
            None => self.insert(line, true),
        }
    }

    pub fn dirty_lines(&self) -> impl Iterator<Item = u64> + '_ {
        self.tags
            .iter()
            .zip(&self.dirty)
            .filter(|(t, d)| **t != EMPTY && **d)
            .map(|(t, _)| *t)
    }

    /// Outstanding miss to `line` still in flight at `now`.
    pub fn pending(&self, line: u64, now: u64) -> Option<u64> {
        self.mshr
            .iter()
            .find(|(l, done)| *l == line && *done > now)
            .map(|(_, done)| *done)
    }

    /// Reserve an MSHR at `now`. Returns the cycle at which one is free,
    /// which is `now` unless all are busy.
    pub fn reserve_mshr(&mut self, now: u64) -> u64 {
        self.mshr.retain(|(_, done)| *done > now);
        if self.mshr.len() < self.mshr_capacity {
            return now;
        }
        let free_at = self.mshr.iter().map(|(_, d)| *d).min().expect("full MSHR file");
        self.mshr.retain(|(_, done)| *done > free_at);
        free_at
    }

    pub fn track_miss(&mut self, line: u64, done: u64) {
        if done > 0 {
            self.mshr.push((line, done));
        }
    }
}
