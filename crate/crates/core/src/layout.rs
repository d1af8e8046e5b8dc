//! Flat simulated address space shared by the solver, the tracer and the
//! fault injector.
//!
//! Every tracked data structure of the CG benchmark lives in one contiguous
//! array of 64-bit words. Addresses are byte offsets into that array, starting
//! at 0, so the same numbers show up in traces, in the cache simulator and in
//! injection plans.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Bytes per storage word. Index arrays are stored as 64-bit words as well.
pub const WORD_BYTES: u64 = 8;

/// Alignment of every region base. Page-sized so that no cache line straddles
/// two structures.
pub const REGION_ALIGN: u64 = 4096;

/// Identity of a tracked data structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StructureId {
    /// CSR row pointers.
    Ar,
    /// CSR column indices.
    Ac,
    /// CSR values.
    Av,
    X,
    G,
    /// Storage region that starts out as `d`.
    D,
    /// Storage region that starts out as `d'`.
    DPrime,
    Q,
    B,
    /// Allocated but never touched by the solver. Dead-region control target.
    Pad,
}

impl StructureId {
    pub const ALL: [StructureId; 10] = [
        StructureId::Ar,
        StructureId::Ac,
        StructureId::Av,
        StructureId::X,
        StructureId::G,
        StructureId::D,
        StructureId::DPrime,
        StructureId::Q,
        StructureId::B,
        StructureId::Pad,
    ];

    /// The nine structures the solver actually uses.
    pub const TRACKED: [StructureId; 9] = [
        StructureId::Ar,
        StructureId::Ac,
        StructureId::Av,
        StructureId::X,
        StructureId::G,
        StructureId::D,
        StructureId::DPrime,
        StructureId::Q,
        StructureId::B,
    ];

    pub fn ordinal(self) -> u16 {
        self as u16
    }

    pub fn from_ordinal(ordinal: u16) -> Option<Self> {
        Self::ALL.get(ordinal as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            StructureId::Ar => "Ar",
            StructureId::Ac => "Ac",
            StructureId::Av => "Av",
            StructureId::X => "x",
            StructureId::G => "g",
            StructureId::D => "d",
            StructureId::DPrime => "d'",
            StructureId::Q => "q",
            StructureId::B => "b",
            StructureId::Pad => "pad",
        }
    }

    /// Floating point payload (as opposed to integer indices).
    pub fn is_float(self) -> bool {
        !matches!(self, StructureId::Ar | StructureId::Ac)
    }
}

impl fmt::Display for StructureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown data structure `{0}` (expected one of Ar, Ac, Av, x, g, d, d', q, b, pad)")]
pub struct UnknownStructure(pub String);

impl FromStr for StructureId {
    type Err = UnknownStructure;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let id = match s {
            "Ar" | "ar" => StructureId::Ar,
            "Ac" | "ac" => StructureId::Ac,
            "Av" | "av" => StructureId::Av,
            "x" | "X" => StructureId::X,
            "g" | "G" => StructureId::G,
            "d" | "D" => StructureId::D,
            "d'" | "dp" | "dprime" | "d_prime" | "DPrime" => StructureId::DPrime,
            "q" | "Q" => StructureId::Q,
            "b" | "B" => StructureId::B,
            "pad" | "Pad" => StructureId::Pad,
            other => return Err(UnknownStructure(other.to_string())),
        };
        Ok(id)
    }
}

/// One registered region: `[base, base + len)` in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: StructureId,
    pub base: u64,
    pub len: u64,
}

impl Region {
    pub fn end(&self) -> u64 {
        self.base + self.len
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }

    pub fn words(&self) -> u64 {
        self.len / WORD_BYTES
    }

    pub fn base_word(&self) -> usize {
        (self.base / WORD_BYTES) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("region {0} is not 8-byte aligned")]
    Misaligned(StructureId),
    #[error("regions {0} and {1} overlap")]
    Overlap(StructureId, StructureId),
    #[error("structure {0} registered twice")]
    Duplicate(StructureId),
}

/// Disjoint, word-aligned regions sorted by base address.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructureMap {
    regions: Vec<Region>,
}

impl StructureMap {
    pub fn new(mut regions: Vec<Region>) -> Result<Self, LayoutError> {
        regions.sort_by_key(|r| r.base);
        for r in &regions {
            if r.base % WORD_BYTES != 0 || r.len % WORD_BYTES != 0 {
                return Err(LayoutError::Misaligned(r.id));
            }
        }
        for pair in regions.windows(2) {
            if pair[0].end() > pair[1].base {
                return Err(LayoutError::Overlap(pair[0].id, pair[1].id));
            }
        }
        for (i, r) in regions.iter().enumerate() {
            if regions[..i].iter().any(|o| o.id == r.id) {
                return Err(LayoutError::Duplicate(r.id));
            }
        }
        Ok(Self { regions })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn get(&self, id: StructureId) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Region owning `addr`, if any.
    pub fn lookup(&self, addr: u64) -> Option<&Region> {
        let idx = self.regions.partition_point(|r| r.base <= addr);
        let r = self.regions.get(idx.checked_sub(1)?)?;
        r.contains(addr).then_some(r)
    }

    /// Region fully containing `[addr, addr + width)`, if any.
    pub fn lookup_span(&self, addr: u64, width: u64) -> Option<&Region> {
        let r = self.lookup(addr)?;
        (addr + width <= r.end()).then_some(r)
    }

    /// One past the highest mapped byte.
    pub fn extent(&self) -> u64 {
        self.regions.iter().map(Region::end).max().unwrap_or(0)
    }
}

/// Sizes needed to lay out a CG problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CgShape {
    pub n_rows: usize,
    pub nnz: usize,
}

impl CgShape {
    /// Standard layout: Ar, Ac, Av, x, g, d, d', q, b, pad, each page aligned.
    /// The pad region is as large as one vector.
    pub fn structure_map(&self) -> StructureMap {
        let n = self.n_rows as u64;
        let sizes = [
            (StructureId::Ar, n + 1),
            (StructureId::Ac, self.nnz as u64),
            (StructureId::Av, self.nnz as u64),
            (StructureId::X, n),
            (StructureId::G, n),
            (StructureId::D, n),
            (StructureId::DPrime, n),
            (StructureId::Q, n),
            (StructureId::B, n),
            (StructureId::Pad, n),
        ];
        let mut base = 0u64;
        let mut regions = Vec::with_capacity(sizes.len());
        for (id, words) in sizes {
            let len = words * WORD_BYTES;
            regions.push(Region { id, base, len });
            base = (base + len).div_ceil(REGION_ALIGN) * REGION_ALIGN;
        }
        StructureMap::new(regions).expect("generated layout is valid")
    }
}

/// Word-addressed memory image. Words are atomics so that an injector thread
/// can flip a bit while the solver is running without undefined behaviour.
pub struct FlatMemory {
    words: Box<[AtomicU64]>,
}

impl FlatMemory {
    pub fn zeroed(map: &StructureMap) -> Self {
        let n = (map.extent() / WORD_BYTES) as usize;
        let words = (0..n).map(|_| AtomicU64::new(0)).collect();
        Self { words }
    }

    pub fn len_words(&self) -> usize {
        self.words.len()
    }

    pub fn region(&self, r: &Region) -> &[AtomicU64] {
        &self.words[r.base_word()..r.base_word() + r.words() as usize]
    }

    #[inline]
    pub fn word(&self, index: usize) -> &AtomicU64 {
        &self.words[index]
    }

    /// Copy of the words of `r`.
    pub fn snapshot(&self, r: &Region) -> Vec<u64> {
        self.region(r).iter().map(|w| w.load(Ordering::Relaxed)).collect()
    }

    /// Flip one bit of the word holding bit `bit` of `r`, as a single atomic
    /// read-modify-write. Returns the word value before and after.
    pub fn flip_bit(&self, r: &Region, bit: u64) -> (u64, u64) {
        let word = (bit / 64) as usize;
        let mask = 1u64 << (bit % 64);
        let before = self.region(r)[word].fetch_xor(mask, Ordering::Relaxed);
        (before, before ^ mask)
    }
}
