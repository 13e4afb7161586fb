use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};

use crate::event::{Event, EventRecord};
use crate::state::ProjectState;
use crate::store::{io_err, StoreError};

pub const MAGIC: &[u8; 5] = b"SKGF1";
const FRAME_HEADER: usize = 8;

pub fn encode_frame(record: &EventRecord) -> Vec<u8> {
    let body = serde_json::to_vec(record).expect("event records serialize");
    let mut frame = Vec::with_capacity(FRAME_HEADER + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
    frame.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    frame.extend_from_slice(&body);
    frame
}

/// Decodes a whole log file. On failure returns the last seq that decoded
/// cleanly (if any) and a reason.
pub fn decode_log(bytes: &[u8]) -> Result<Vec<EventRecord>, (Option<u64>, String)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err((None, "missing SKGF1 header".into()));
    }
    let mut records: Vec<EventRecord> = Vec::new();
    let mut pos = MAGIC.len();
    while pos < bytes.len() {
        let last = records.last().map(|r| r.seq);
        let fail = |reason: String| Err((last, format!("{reason} at byte {pos}")));
        if bytes.len() - pos < FRAME_HEADER {
            return fail("truncated frame header".into());
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        let start = pos + FRAME_HEADER;
        if bytes.len() - start < len {
            return fail(format!("truncated record body ({len} bytes declared)"));
        }
        let body = &bytes[start..start + len];
        if crc32fast::hash(body) != crc {
            return fail("checksum mismatch".into());
        }
        let record: EventRecord = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return fail(format!("undecodable record: {e}")),
        };
        let expected = records.len() as u64;
        if record.seq != expected {
            return fail(format!("seq {} where {expected} expected", record.seq));
        }
        records.push(record);
        pos = start + len;
    }
    Ok(records)
}

/// Append handle for one project's log. Refuses further writes after an I/O
/// error, since the file tail is then unknown.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
    path: PathBuf,
    sync: bool,
    next_seq: u64,
    broken: bool,
}

impl LogWriter {
    pub fn create(path: &Path, sync: bool) -> Result<Self, StoreError> {
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        file.write_all(MAGIC).map_err(io_err(path))?;
        if sync {
            file.sync_all().map_err(io_err(path))?;
        }
        Ok(LogWriter {
            file,
            path: path.to_path_buf(),
            sync,
            next_seq: 0,
            broken: false,
        })
    }

    /// Opens an existing log for appending; the log must decode cleanly.
    pub fn open(path: &Path, sync: bool) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let records = decode_log(&bytes).map_err(|(last_valid_seq, reason)| StoreError::CorruptLog {
            path: path.to_path_buf(),
            last_valid_seq,
            reason,
        })?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(LogWriter {
            file,
            path: path.to_path_buf(),
            sync,
            next_seq: records.len() as u64,
            broken: false,
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, event: Event, at: DateTime<Utc>) -> Result<EventRecord, StoreError> {
        if self.broken {
            return Err(StoreError::Io {
                path: self.path.clone(),
                source: std::io::Error::other("log writer disabled after an earlier failure"),
            });
        }
        let record = EventRecord {
            seq: self.next_seq,
            event,
            at,
        };
        let frame = encode_frame(&record);
        let written = self.file.write_all(&frame).and_then(|_| {
            if self.sync {
                self.file.sync_data()
            } else {
                Ok(())
            }
        });
        if let Err(e) = written {
            self.broken = true;
            return Err(io_err(&self.path)(e));
        }
        self.next_seq += 1;
        Ok(record)
    }
}

pub(super) fn write_snapshot(path: &Path, state: &ProjectState, sync: bool) -> Result<(), StoreError> {
    let body = serde_json::to_vec(state).expect("state serializes");
    let mut bytes = Vec::with_capacity(body.len() + 21);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(state.next_seq - 1).to_le_bytes());
    bytes.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    bytes.extend_from_slice(&(body.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&body);

    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(&bytes).map_err(io_err(&tmp))?;
    if sync {
        file.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// `None` for a missing, damaged or inconsistent snapshot; the caller then
/// replays the full log.
pub(super) fn read_snapshot(path: &Path) -> Option<ProjectState> {
    let bytes = fs::read(path).ok()?;
    if bytes.len() < 21 || &bytes[..5] != MAGIC {
        return None;
    }
    let seq = u64::from_le_bytes(bytes[5..13].try_into().ok()?);
    let crc = u32::from_le_bytes(bytes[13..17].try_into().ok()?);
    let len = u32::from_le_bytes(bytes[17..21].try_into().ok()?) as usize;
    let body = bytes.get(21..21 + len)?;
    if crc32fast::hash(body) != crc {
        return None;
    }
    let state: ProjectState = serde_json::from_slice(body).ok()?;
    (state.next_seq == seq + 1).then_some(state)
}
