//! Debug dump of the memory request stream.
//!
//! Header: magic `"MVLNMEM\0"`, version (u32). Then 26-byte little-endian
//! records: tag (u8: 0 fill, 1 write-back, 2 resolution), time (u64),
//! line address (u64), aux (u8: fill cause 0 load / 1 store, or the
//! overwritten-word mask of a resolution), fill id (u64, `u64::MAX` for
//! write-backs).

use std::io::{Read, Write};

use super::{FillCause, FillResolution, MemoryEvent, MemoryRequest, MemorySink, RequestKind};

pub const DUMP_MAGIC: [u8; 8] = *b"MVLNMEM\0";
pub const DUMP_VERSION: u32 = 1;
const RECORD: usize = 26;

pub struct DumpWriter<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> DumpWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        out.write_all(&DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        Ok(Self { out, error: None })
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }

    fn encode(ev: &MemoryEvent) -> [u8; RECORD] {
        let (tag, time, line, aux, id) = match ev {
            MemoryEvent::Request(r) => (
                match r.kind {
                    RequestKind::Fill => 0u8,
                    RequestKind::Writeback => 1,
                },
                r.time,
                r.line_addr,
                u8::from(r.fill_cause == FillCause::StoreMiss),
                r.fill_id.unwrap_or(u64::MAX),
            ),
            MemoryEvent::Resolution(r) => (2, r.resolution_time, r.line_addr, r.overwritten, r.fill_id),
        };
        let mut rec = [0u8; RECORD];
        rec[0] = tag;
        rec[1..9].copy_from_slice(&time.to_le_bytes());
        rec[9..17].copy_from_slice(&line.to_le_bytes());
        rec[17] = aux;
        rec[18..26].copy_from_slice(&id.to_le_bytes());
        rec
    }
}

impl<W: Write> MemorySink for DumpWriter<W> {
    fn memory_event(&mut self, ev: &MemoryEvent) {
        if self.error.is_none() {
            if let Err(e) = self.out.write_all(&Self::encode(ev)) {
                self.error = Some(e);
            }
        }
    }
}

/// Read a whole dump back.
pub fn read_dump<R: Read>(mut r: R) -> std::io::Result<Vec<MemoryEvent>> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if head[..8] != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    if u32::from_le_bytes(head[8..12].try_into().unwrap()) != DUMP_VERSION {
        return Err(bad("unsupported dump version"));
    }
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() % RECORD != 0 {
        return Err(bad("truncated record"));
    }
    body.chunks_exact(RECORD)
        .map(|rec| {
            let time = u64::from_le_bytes(rec[1..9].try_into().unwrap());
            let line_addr = u64::from_le_bytes(rec[9..17].try_into().unwrap());
            let id = u64::from_le_bytes(rec[18..26].try_into().unwrap());
            Ok(match rec[0] {
                0 => MemoryEvent::Request(MemoryRequest {
                    time,
                    kind: RequestKind::Fill,
                    line_addr,
                    fill_cause: if rec[17] == 1 {
                        FillCause::StoreMiss
                    } else {
                        FillCause::LoadMiss
                    },
                    fill_id: Some(id),
                }),
                1 => MemoryEvent::Request(MemoryRequest {
                    time,
                    kind: RequestKind::Writeback,
                    line_addr,
                    fill_cause: FillCause::None,
                    fill_id: None,
                }),
                2 => MemoryEvent::Resolution(FillResolution {
                    fill_id: id,
                    line_addr,
                    overwritten: rec[17],
                    resolution_time: time,
                }),
                _ => return Err(bad("unknown record tag")),
            })
        })
        .collect()
}
