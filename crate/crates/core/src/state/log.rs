//! Append-log format.
//!
//! File: `b"ISQSTATE"`, `u32` format version, then records
//! `[key_len u32][key][val_len u32][val][version u64][crc32 u32]`,
//! little-endian. The checksum covers every preceding byte of the record.
//! `val_len == u32::MAX` marks a tombstone and carries no value bytes. An
//! empty key holds the flush watermark as an 8-byte value; entity ids are
//! never empty.

use std::io::{self, Read};

use super::StoreError;

pub const MAGIC: &[u8; 8] = b"ISQSTATE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 12;
pub const TOMBSTONE: u32 = u32::MAX;
/// Upper bounds used to tell a corrupt length field from a real record.
pub const MAX_KEY_LEN: usize = 1 << 16;
pub const MAX_VALUE_LEN: usize = 1 << 24;

pub fn header() -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[..8].copy_from_slice(MAGIC);
    h[8..].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h
}

/// Encoded size of a record.
pub fn record_len(key_len: usize, value_len: Option<usize>) -> usize {
    4 + key_len + 4 + value_len.unwrap_or(0) + 8 + 4
}

/// Appends one record to `out`; `value == None` writes a tombstone.
pub fn encode_record(out: &mut Vec<u8>, key: &[u8], value: Option<&[u8]>, version: u64) {
    let start = out.len();
    out.extend_from_slice(&(key.len() as u32).to_le_bytes());
    out.extend_from_slice(key);
    match value {
        Some(v) => {
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v);
        }
        None => out.extend_from_slice(&TOMBSTONE.to_le_bytes()),
    }
    out.extend_from_slice(&version.to_le_bytes());
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub key: Vec<u8>,
    /// `None` for a tombstone.
    pub value: Option<Vec<u8>>,
    pub version: u64,
}

/// Parses one complete record held in `bytes`.
pub fn decode_record(bytes: &[u8]) -> Result<Record, StoreError> {
    let corrupt = || StoreError::CorruptRecord(format!("record of {} bytes fails to parse", bytes.len()));
    let u32_at = |at: usize| bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()));
    let key_len = u32_at(0).ok_or_else(corrupt)? as usize;
    let vl_at = 4 + key_len;
    let raw_vl = u32_at(vl_at).ok_or_else(corrupt)?;
    let value_len = (raw_vl != TOMBSTONE).then_some(raw_vl as usize);
    if bytes.len() != record_len(key_len, value_len) {
        return Err(corrupt());
    }
    let body = bytes.len() - 4;
    let crc = u32::from_le_bytes(bytes[body..].try_into().unwrap());
    if crc32fast::hash(&bytes[..body]) != crc {
        return Err(StoreError::CorruptRecord("checksum mismatch".into()));
    }
    let v_at = vl_at + 4;
    let v_end = v_at + value_len.unwrap_or(0);
    Ok(Record {
        key: bytes[4..vl_at].to_vec(),
        value: value_len.map(|_| bytes[v_at..v_end].to_vec()),
        version: u64::from_le_bytes(bytes[v_end..v_end + 8].try_into().unwrap()),
    })
}

/// One entry produced by a forward scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Scanned {
    pub offset: u64,
    pub len: u32,
    /// `Err` when the record is complete but its checksum fails.
    pub record: Result<Record, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanOutcome {
    pub entries: Vec<Scanned>,
    /// Offset just past the last complete record.
    pub valid_end: u64,
    /// Bytes after `valid_end`: a torn final record or unparseable lengths.
    pub discarded_bytes: u64,
}

/// Reads up to `buf.len()` bytes; returns how many were available.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Forward scan over a log stream that starts with the file header.
pub fn scan(mut r: impl Read, file_len: u64) -> Result<ScanOutcome, StoreError> {
    let mut head = [0u8; HEADER_LEN as usize];
    let got = read_full(&mut r, &mut head)?;
    if got == 0 && file_len == 0 {
        return Ok(ScanOutcome { valid_end: 0, ..Default::default() });
    }
    if got < head.len() || &head[..8] != MAGIC {
        return Err(StoreError::UnreadableLog("missing or damaged file header".into()));
    }
    let version = u32::from_le_bytes(head[8..].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(StoreError::UnreadableLog(format!("unsupported log format version {version}")));
    }
    let mut out = ScanOutcome { valid_end: HEADER_LEN, ..Default::default() };
    let mut buf = Vec::new();
    loop {
        let offset = out.valid_end;
        buf.clear();
        buf.resize(4, 0);
        if read_full(&mut r, &mut buf[..4])? < 4 {
            break;
        }
        let key_len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        if key_len > MAX_KEY_LEN {
            break;
        }
        buf.resize(4 + key_len + 4, 0);
        if read_full(&mut r, &mut buf[4..])? < key_len + 4 {
            break;
        }
        let raw_vl = u32::from_le_bytes(buf[4 + key_len..].try_into().unwrap());
        let value_len = (raw_vl != TOMBSTONE).then_some(raw_vl as usize);
        if value_len.is_some_and(|v| v > MAX_VALUE_LEN) {
            break;
        }
        let len = record_len(key_len, value_len);
        let have = buf.len();
        buf.resize(len, 0);
        if read_full(&mut r, &mut buf[have..])? < len - have {
            break;
        }
        out.entries.push(Scanned {
            offset,
            len: len as u32,
            record: decode_record(&buf).map_err(|e| e.to_string()),
        });
        out.valid_end = offset + len as u64;
    }
    out.discarded_bytes = file_len.saturating_sub(out.valid_end);
    Ok(out)
}

/// Offsets of every record boundary in a log file, for auditing and crash
/// simulation. The header end comes first, then the end of each record.
pub fn record_boundaries(path: impl AsRef<std::path::Path>) -> Result<Vec<u64>, StoreError> {
    let f = std::fs::File::open(path)?;
    let len = f.metadata()?.len();
    let s = scan(io::BufReader::new(f), len)?;
    let mut b = vec![HEADER_LEN];
    b.extend(s.entries.iter().map(|e| e.offset + e.len as u64));
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_of(records: &[(&[u8], Option<&[u8]>, u64)]) -> Vec<u8> {
        let mut out = header().to_vec();
        for (k, v, ver) in records {
            encode_record(&mut out, k, *v, *ver);
        }
        out
    }

    #[test]
    fn records_round_trip() {
        let mut b = Vec::new();
        encode_record(&mut b, b"card", Some(b"xyz"), 9);
        assert_eq!(b.len(), record_len(4, Some(3)));
        let r = decode_record(&b).unwrap();
        assert_eq!(r, Record { key: b"card".to_vec(), value: Some(b"xyz".to_vec()), version: 9 });
        let mut t = Vec::new();
        encode_record(&mut t, b"card", None, 10);
        assert_eq!(decode_record(&t).unwrap().value, None);
    }

    #[test]
    fn torn_tail_is_discarded() {
        let full = log_of(&[(b"a", Some(b"1"), 1), (b"b", Some(b"22"), 1)]);
        for cut in HEADER_LEN as usize..full.len() {
            let s = scan(&full[..cut], cut as u64).unwrap();
            let expect = if cut >= full.len() - record_len(1, Some(2)) { 1 } else { 0 };
            assert_eq!(s.entries.len(), expect, "cut {cut}");
            assert_eq!(s.valid_end + s.discarded_bytes, cut as u64);
        }
    }

    #[test]
    fn flipped_byte_fails_checksum_but_scan_continues() {
        let mut full = log_of(&[(b"a", Some(b"1"), 1), (b"b", Some(b"2"), 1)]);
        full[HEADER_LEN as usize + 9] ^= 0xff;
        let s = scan(&full[..], full.len() as u64).unwrap();
        assert_eq!(s.entries.len(), 2);
        assert!(s.entries[0].record.is_err());
        assert!(s.entries[1].record.is_ok());
    }

    #[test]
    fn empty_and_bad_headers() {
        assert!(scan(&[][..], 0).unwrap().entries.is_empty());
        assert!(matches!(scan(&b"NOTALOG!\x01\0\0\0"[..], 12), Err(StoreError::UnreadableLog(_))));
    }
}
