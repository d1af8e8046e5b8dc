//! Trace-driven cache hierarchy simulation producing the main-memory request
//! stream, plus the per-word verdicts that decide which fills only fetched
//! data that was about to be overwritten.

mod config;
pub mod dump;
mod level;
mod sim;

use serde::{Deserialize, Serialize};

pub use config::{CacheConfig, LevelConfig, Replacement, LEVEL_NAMES, LINE_BYTES};
pub use sim::{simulate, simulated_time, SimOutcome, SimStats, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    Fill,
    Writeback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FillCause {
    LoadMiss,
    StoreMiss,
    /// Write-backs have no cause.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryRequest {
    /// Cycle at which the triggering program access issued.
    pub time: u64,
    pub kind: RequestKind,
    /// 64-byte aligned.
    pub line_addr: u64,
    pub fill_cause: FillCause,
    /// Sequence number among fills; `None` for write-backs.
    pub fill_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    /// Some byte of the word was read before the word was fully rewritten,
    /// or the line left the hierarchy first.
    Consumed,
    /// The word was completely rewritten before any read touched it.
    Overwritten,
}

/// Per-64-bit-word verdicts for one fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FillResolution {
    pub fill_id: u64,
    pub line_addr: u64,
    /// Bit `w` set: word `w` of the line was overwritten.
    pub overwritten: u8,
    pub resolution_time: u64,
}

impl FillResolution {
    pub fn verdict(&self, word: usize) -> Verdict {
        if self.overwritten & (1 << word) != 0 {
            Verdict::Overwritten
        } else {
            Verdict::Consumed
        }
    }

    pub fn verdicts(&self) -> [Verdict; 8] {
        std::array::from_fn(|w| self.verdict(w))
    }
}

/// One item of the simulator's output stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemoryEvent {
    Request(MemoryRequest),
    Resolution(FillResolution),
}

pub trait MemorySink {
    fn memory_event(&mut self, ev: &MemoryEvent);
}

impl MemorySink for Vec<MemoryEvent> {
    fn memory_event(&mut self, ev: &MemoryEvent) {
        self.push(*ev);
    }
}

impl<S: MemorySink + ?Sized> MemorySink for &mut S {
    fn memory_event(&mut self, ev: &MemoryEvent) {
        (**self).memory_event(ev)
    }
}

/// Feeds both sinks, in order.
impl<A: MemorySink, B: MemorySink> MemorySink for (A, B) {
    fn memory_event(&mut self, ev: &MemoryEvent) {
        self.0.memory_event(ev);
        self.1.memory_event(ev);
    }
}

/// Drops everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct Discard;

impl MemorySink for Discard {
    fn memory_event(&mut self, _ev: &MemoryEvent) {}
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("cache configuration: {0}")]
    Config(String),
    #[error("address {addr:#x} outside configured memory capacity of {capacity} bytes")]
    AddressOutOfRange { addr: u64, capacity: u64 },
    #[error("access at time {time} follows time {previous}: trace out of order")]
    OutOfOrder { previous: u64, time: u64 },
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<std::convert::Infallible> for SimError {
    fn from(e: std::convert::Infallible) -> Self {
        match e {}
    }
}
