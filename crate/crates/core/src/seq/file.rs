//! Sequence store file.
//!
//! ```text
//! magic "ISQSEQS\0" | version u32 | schema_hash u64 | n_dense u32 | n_cat u32
//! record_count u64 | offsets u64 × record_count (absolute, to each frame)
//! frames: len u32 | record bytes
//! ```
//! A record is `entity_id (u32 len + utf8) | n_events u32` followed by each
//! event as `event_id u64 | ts i64 | label u8 | scorable u8 | dense f64… | cat u32…`.
//! All integers little-endian.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;

use super::{SeqError, SeqEvent, SequenceRecord, SequenceStore};
use crate::prep::FeatureVector;
use crate::schema::Label;

const MAGIC: &[u8; 8] = b"ISQSEQS\0";
pub const SEQ_FILE_VERSION: u32 = 1;
const FIXED_HEADER: usize = 8 + 4 + 8 + 4 + 4 + 8;

fn corrupt(m: impl Into<String>) -> SeqError {
    SeqError::Corrupt(m.into())
}

fn encode_record(r: &SequenceRecord, out: &mut Vec<u8>) {
    out.extend_from_slice(&(r.entity_id.len() as u32).to_le_bytes());
    out.extend_from_slice(r.entity_id.as_bytes());
    out.extend_from_slice(&(r.events.len() as u32).to_le_bytes());
    for e in &r.events {
        out.extend_from_slice(&e.event_id.to_le_bytes());
        out.extend_from_slice(&e.event_ts.to_le_bytes());
        out.push(e.label.to_byte());
        out.push(e.scorable as u8);
        for v in &e.fv.dense {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &e.fv.cat {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SeqError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| corrupt("record truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, SeqError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SeqError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8, SeqError> {
        Ok(self.take(1)?[0])
    }
}

fn decode_record(buf: &[u8], n_dense: usize, n_cat: usize) -> Result<SequenceRecord, SeqError> {
    let mut c = Cursor { buf, pos: 0 };
    let id_len = c.u32()? as usize;
    let entity_id = std::str::from_utf8(c.take(id_len)?).map_err(|_| corrupt("entity id is not utf-8"))?.to_string();
    let n = c.u32()? as usize;
    let mut events = Vec::with_capacity(n.min(buf.len()));
    for _ in 0..n {
        let event_id = c.u64()?;
        let event_ts = c.u64()? as i64;
        let label = Label::from_byte(c.u8()?).ok_or_else(|| corrupt("bad label byte"))?;
        let scorable = match c.u8()? {
            0 => false,
            1 => true,
            _ => return Err(corrupt("bad scorable byte")),
        };
        let dense = (0..n_dense).map(|_| c.u64().map(f64::from_bits)).collect::<Result<_, _>>()?;
        let cat = (0..n_cat).map(|_| c.u32()).collect::<Result<_, _>>()?;
        events.push(SeqEvent { event_id, event_ts, label, scorable, fv: FeatureVector { dense, cat } });
    }
    if c.pos != buf.len() {
        return Err(corrupt("trailing bytes in record"));
    }
    Ok(SequenceRecord::new(entity_id, events))
}

fn widths(store: &SequenceStore) -> (usize, usize) {
    store.records.iter().flat_map(|r| r.events.first()).map(|e| (e.fv.dense.len(), e.fv.cat.len())).next().unwrap_or((0, 0))
}

impl SequenceStore {
    /// Serializes the store. Output bytes depend only on the store contents.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n_dense, n_cat) = widths(self);
        let mut frames = Vec::new();
        let mut offsets = Vec::with_capacity(self.records.len());
        let base = FIXED_HEADER + 8 * self.records.len();
        let mut body = Vec::new();
        for r in &self.records {
            debug_assert!(r.events.iter().all(|e| e.fv.dense.len() == n_dense && e.fv.cat.len() == n_cat));
            offsets.push((base + frames.len()) as u64);
            body.clear();
            encode_record(r, &mut body);
            frames.extend_from_slice(&(body.len() as u32).to_le_bytes());
            frames.extend_from_slice(&body);
        }
        let mut out = Vec::with_capacity(base + frames.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SEQ_FILE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.schema_hash.to_le_bytes());
        out.extend_from_slice(&(n_dense as u32).to_le_bytes());
        out.extend_from_slice(&(n_cat as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for o in offsets {
            out.extend_from_slice(&o.to_le_bytes());
        }
        out.extend_from_slice(&frames);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SeqError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Loads every record. With `expected_hash`, the stored schema hash must match.
    pub fn load(path: impl AsRef<Path>, expected_hash: Option<u64>) -> Result<Self, SeqError> {
        let reader = SequenceFileReader::open(path, expected_hash)?;
        let records = reader.scan_from(0).collect::<Result<Vec<_>, _>>()?;
        Ok(SequenceStore::new(reader.schema_hash(), records))
    }
}

/// Random-access reader over a sequence file; `get` reads one frame with a
/// positioned read, so readers may be shared across threads.
pub struct SequenceFileReader {
    file: File,
    schema_hash: u64,
    n_dense: usize,
    n_cat: usize,
    offsets: Vec<u64>,
    file_len: u64,
}

impl SequenceFileReader {
    pub fn open(path: impl AsRef<Path>, expected_hash: Option<u64>) -> Result<Self, SeqError> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut head = [0u8; FIXED_HEADER];
        file.read_exact_at(&mut head, 0).map_err(|_| corrupt("header truncated"))?;
        if &head[..8] != MAGIC {
            return Err(corrupt("missing magic header"));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != SEQ_FILE_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let schema_hash = u64::from_le_bytes(head[12..20].try_into().unwrap());
        if let Some(expected) = expected_hash {
            if expected != schema_hash {
                return Err(SeqError::SchemaMismatch { expected, found: schema_hash });
            }
        }
        let n_dense = u32::from_le_bytes(head[20..24].try_into().unwrap()) as usize;
        let n_cat = u32::from_le_bytes(head[24..28].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(head[28..36].try_into().unwrap());
        let table_len = count.checked_mul(8).filter(|l| FIXED_HEADER as u64 + l <= file_len).ok_or_else(|| corrupt("offset table truncated"))?;
        let mut table = vec![0u8; table_len as usize];
        file.read_exact_at(&mut table, FIXED_HEADER as u64)?;
        let offsets: Vec<u64> = table.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
        if offsets.iter().any(|o| *o + 4 > file_len) {
            return Err(corrupt("offset past end of file"));
        }
        Ok(SequenceFileReader { file, schema_hash, n_dense, n_cat, offsets, file_len })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn schema_hash(&self) -> u64 {
        self.schema_hash
    }

    pub fn get(&self, i: usize) -> Result<SequenceRecord, SeqError> {
        let off = *self.offsets.get(i).ok_or(SeqError::OutOfRange { index: i, len: self.len() })?;
        let mut len = [0u8; 4];
        self.file.read_exact_at(&mut len, off)?;
        let len = u32::from_le_bytes(len) as u64;
        if off + 4 + len > self.file_len {
            return Err(corrupt("frame past end of file"));
        }
        let mut buf = vec![0u8; len as usize];
        self.file.read_exact_at(&mut buf, off + 4)?;
        decode_record(&buf, self.n_dense, self.n_cat)
    }

    /// Records `i, i+1, ...` in order.
    pub fn scan_from(&self, i: usize) -> impl Iterator<Item = Result<SequenceRecord, SeqError>> + '_ {
        (i..self.len()).map(move |k| self.get(k))
    }
}
