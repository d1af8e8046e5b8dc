//! Binary trace file, little-endian throughout.
//!
//! ```text
//! header
//!   0   8   magic "MVLNTRC\0"
//!   8   4   version (u32)
//!   12  4   region count R (u32)
//!   16  8   roi_start (u64)
//!   24  8   roi_end (u64)
//!   32  8   event count N (u64)
//!   40  18*R regions: ordinal (u16), base (u64), length (u64)
//! events, N records of 20 bytes
//!   0   8   time (u64)
//!   8   1   kind (0 = load, 1 = store)
//!   9   8   addr (u64)
//!   17  1   width in bytes
//!   18  2   structure ordinal (u16, 0xFFFF = other)
//! ```
//!
//! The writer patches `roi_*` and `N` when the trace is finished, so a file
//! whose writer did not finish reads back as truncated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{AccessEvent, AccessKind, EventSink, RoiMarkers, TraceError};
use crate::layout::{Region, StructureId, StructureMap};

pub const TRACE_MAGIC: [u8; 8] = *b"MVLNTRC\0";
pub const TRACE_VERSION: u32 = 1;
pub const EVENT_RECORD_BYTES: usize = 20;
pub const OTHER_ORDINAL: u16 = 0xFFFF;
const FIXED_HEADER_BYTES: u64 = 40;
const REGION_RECORD_BYTES: u64 = 18;
/// Event count written until the trace is finished.
const UNFINISHED: u64 = u64::MAX;

pub struct TraceWriter<W: Write + Seek> {
    out: BufWriter<W>,
    events: u64,
    last_time: Option<u64>,
    error: Option<TraceError>,
}

impl<W: Write + Seek> TraceWriter<W> {
    pub fn new(inner: W, map: &StructureMap) -> Result<Self, TraceError> {
        let mut out = BufWriter::with_capacity(1 << 20, inner);
        out.write_all(&TRACE_MAGIC)?;
        out.write_all(&TRACE_VERSION.to_le_bytes())?;
        out.write_all(&(map.regions().len() as u32).to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        out.write_all(&0u64.to_le_bytes())?;
        out.write_all(&UNFINISHED.to_le_bytes())?;
        for r in map.regions() {
            out.write_all(&r.id.ordinal().to_le_bytes())?;
            out.write_all(&r.base.to_le_bytes())?;
            out.write_all(&r.len.to_le_bytes())?;
        }
        Ok(Self {
            out,
            events: 0,
            last_time: None,
            error: None,
        })
    }

    pub fn push(&mut self, ev: &AccessEvent) -> Result<(), TraceError> {
        if let Some(prev) = self.last_time {
            if ev.time < prev {
                return Err(TraceError::OutOfOrder {
                    previous: prev,
                    time: ev.time,
                });
            }
        }
        let mut rec = [0u8; EVENT_RECORD_BYTES];
        rec[0..8].copy_from_slice(&ev.time.to_le_bytes());
        rec[8] = match ev.kind {
            AccessKind::Load => 0,
            AccessKind::Store => 1,
        };
        rec[9..17].copy_from_slice(&ev.addr.to_le_bytes());
        rec[17] = ev.width;
        let ord = ev.structure.map_or(OTHER_ORDINAL, StructureId::ordinal);
        rec[18..20].copy_from_slice(&ord.to_le_bytes());
        self.out.write_all(&rec)?;
        self.last_time = Some(ev.time);
        self.events += 1;
        Ok(())
    }

    /// Write the ROI markers and event count, flush, and hand back the sink.
    pub fn finish(mut self, roi: RoiMarkers) -> Result<W, TraceError> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.seek(SeekFrom::Start(16))?;
        self.out.write_all(&roi.roi_start.to_le_bytes())?;
        self.out.write_all(&roi.roi_end.to_le_bytes())?;
        self.out.write_all(&self.events.to_le_bytes())?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        self.out.into_inner().map_err(|e| TraceError::Io(e.into_error()))
    }

    pub fn events_written(&self) -> u64 {
        self.events
    }
}

impl<W: Write + Seek> EventSink for TraceWriter<W> {
    fn event(&mut self, ev: &AccessEvent) {
        if self.error.is_none() {
            if let Err(e) = self.push(ev) {
                self.error = Some(e);
            }
        }
    }
}

/// Streaming reader; yields events one at a time.
pub struct TraceReader<R: Read> {
    input: R,
    map: StructureMap,
    roi: RoiMarkers,
    count: u64,
    read: u64,
    offset: u64,
    last_time: Option<u64>,
    failed: bool,
}

fn read_array<R: Read, const N: usize>(input: &mut R, offset: &mut u64) -> Result<[u8; N], TraceError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TraceError::Truncated { offset: *offset },
        _ => TraceError::Io(e),
    })?;
    *offset += N as u64;
    Ok(buf)
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut input: R) -> Result<Self, TraceError> {
        let mut offset = 0u64;
        if read_array::<_, 8>(&mut input, &mut offset)? != TRACE_MAGIC {
            return Err(TraceError::BadMagic);
        }
        let version = u32::from_le_bytes(read_array(&mut input, &mut offset)?);
        if version != TRACE_VERSION {
            return Err(TraceError::Version {
                found: version,
                expected: TRACE_VERSION,
            });
        }
        let n_regions = u32::from_le_bytes(read_array(&mut input, &mut offset)?);
        let roi_start = u64::from_le_bytes(read_array(&mut input, &mut offset)?);
        let roi_end = u64::from_le_bytes(read_array(&mut input, &mut offset)?);
        let count = u64::from_le_bytes(read_array(&mut input, &mut offset)?);
        if count == UNFINISHED {
            return Err(TraceError::Truncated { offset: 32 });
        }
        let mut regions = Vec::with_capacity(n_regions as usize);
        for _ in 0..n_regions {
            let at = offset;
            let ord = u16::from_le_bytes(read_array(&mut input, &mut offset)?);
            let id = StructureId::from_ordinal(ord).ok_or_else(|| TraceError::Corrupt {
                offset: at,
                reason: format!("unknown structure ordinal {ord}"),
            })?;
            let base = u64::from_le_bytes(read_array(&mut input, &mut offset)?);
            let len = u64::from_le_bytes(read_array(&mut input, &mut offset)?);
            regions.push(Region { id, base, len });
        }
        debug_assert_eq!(offset, FIXED_HEADER_BYTES + REGION_RECORD_BYTES * n_regions as u64);
        let map = StructureMap::new(regions).map_err(|e| TraceError::Corrupt {
            offset: FIXED_HEADER_BYTES,
            reason: e.to_string(),
        })?;
        Ok(Self {
            input,
            map,
            roi: RoiMarkers { roi_start, roi_end },
            count,
            read: 0,
            offset,
            last_time: None,
            failed: false,
        })
    }

    pub fn structure_map(&self) -> &StructureMap {
        &self.map
    }

    pub fn roi(&self) -> RoiMarkers {
        self.roi
    }

    pub fn event_count(&self) -> u64 {
        self.count
    }

    fn next_event(&mut self) -> Result<AccessEvent, TraceError> {
        let at = self.offset;
        let rec: [u8; EVENT_RECORD_BYTES] = read_array(&mut self.input, &mut self.offset)?;
        let corrupt = |reason: String| TraceError::Corrupt { offset: at, reason };
        let time = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let kind = match rec[8] {
            0 => AccessKind::Load,
            1 => AccessKind::Store,
            k => return Err(corrupt(format!("unknown access kind {k}"))),
        };
        let addr = u64::from_le_bytes(rec[9..17].try_into().unwrap());
        let width = rec[17];
        if width == 0 || width > 64 {
            return Err(corrupt(format!("access width {width} outside 1..=64")));
        }
        let ord = u16::from_le_bytes(rec[18..20].try_into().unwrap());
        let structure = match ord {
            OTHER_ORDINAL => None,
            o => Some(StructureId::from_ordinal(o).ok_or_else(|| corrupt(format!("unknown structure ordinal {o}")))?),
        };
        let owner = self.map.lookup_span(addr, width as u64).map(|r| r.id);
        if owner != structure {
            return Err(corrupt(format!(
                "access [{addr:#x}, +{width}) labelled {structure:?} but maps to {owner:?}"
            )));
        }
        if let Some(prev) = self.last_time {
            if time < prev {
                return Err(TraceError::OutOfOrder { previous: prev, time });
            }
        }
        self.last_time = Some(time);
        Ok(AccessEvent {
            time,
            kind,
            addr,
            width,
            structure,
        })
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<AccessEvent, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.read == self.count {
            return None;
        }
        let ev = self.next_event();
        match ev {
            Ok(_) => self.read += 1,
            Err(_) => self.failed = true,
        }
        Some(ev)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.read) as usize;
        (0, Some(left))
    }
}

/// Open a trace file for streaming.
pub fn load_trace(path: &Path) -> Result<TraceReader<BufReader<File>>, TraceError> {
    let f = File::open(path)?;
    TraceReader::new(BufReader::with_capacity(1 << 20, f))
}

/// Create a trace file for writing.
pub fn create_trace(path: &Path, map: &StructureMap) -> Result<TraceWriter<File>, TraceError> {
    TraceWriter::new(File::create(path)?, map)
}
