//! Program-level memory access traces.
//!
//! A trace is the totally ordered sequence of loads and stores the solver
//! performs inside its Region Of Interest, labelled with the owning data
//! structure. Logical time advances by one tick per access.

mod format;
mod record;

use serde::{Deserialize, Serialize};

pub use format::{
    create_trace, load_trace, TraceReader, TraceWriter, EVENT_RECORD_BYTES, OTHER_ORDINAL, TRACE_MAGIC, TRACE_VERSION,
};
pub use record::{record_solve, Recorder};

use crate::layout::StructureId;
pub use crate::layout::StructureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessEvent {
    pub time: u64,
    pub kind: AccessKind,
    pub addr: u64,
    pub width: u8,
    /// `None` for accesses outside every registered structure.
    pub structure: Option<StructureId>,
}

impl AccessEvent {
    pub fn end(&self) -> u64 {
        self.addr + self.width as u64
    }
}

/// ROI delimiters in logical ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RoiMarkers {
    pub roi_start: u64,
    pub roi_end: u64,
}

impl RoiMarkers {
    pub fn contains(&self, time: u64) -> bool {
        self.roi_start < self.roi_end && time >= self.roi_start && time <= self.roi_end
    }

    pub fn is_empty(&self) -> bool {
        self.roi_start >= self.roi_end
    }
}

/// Receives access events in time order.
pub trait EventSink {
    fn event(&mut self, ev: &AccessEvent);
}

impl EventSink for Vec<AccessEvent> {
    fn event(&mut self, ev: &AccessEvent) {
        self.push(*ev);
    }
}

impl<S: EventSink + ?Sized> EventSink for &mut S {
    fn event(&mut self, ev: &AccessEvent) {
        (**self).event(ev)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a trace file (bad magic)")]
    BadMagic,
    #[error("unsupported trace version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("trace truncated at byte offset {offset}")]
    Truncated { offset: u64 },
    #[error("event at time {time} follows time {previous}: out of order")]
    OutOfOrder { previous: u64, time: u64 },
    #[error("corrupt trace at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error(transparent)]
    Solve(#[from] crate::cg::CgError),
}

/// Summary of a trace: counts per structure and kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceInfo {
    pub roi: RoiMarkers,
    pub events: u64,
    pub events_in_roi: u64,
    /// `(structure name, loads, stores)`, with `other` last.
    pub per_structure: Vec<(String, u64, u64)>,
}

impl TraceInfo {
    pub fn collect<I>(map: &StructureMap, roi: RoiMarkers, events: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = Result<AccessEvent, TraceError>>,
    {
        let mut counts = vec![(0u64, 0u64); StructureId::ALL.len() + 1];
        let mut info = TraceInfo {
            roi,
            ..Default::default()
        };
        for ev in events {
            let ev = ev?;
            info.events += 1;
            if !roi.contains(ev.time) {
                continue;
            }
            info.events_in_roi += 1;
            let slot = ev.structure.map_or(StructureId::ALL.len(), |s| s as usize);
            match ev.kind {
                AccessKind::Load => counts[slot].0 += 1,
                AccessKind::Store => counts[slot].1 += 1,
            }
        }
        for r in map.regions() {
            let (l, s) = counts[r.id as usize];
            info.per_structure.push((r.id.name().to_string(), l, s));
        }
        let (l, s) = counts[StructureId::ALL.len()];
        info.per_structure.push(("other".to_string(), l, s));
        Ok(info)
    }
}
