//! Embedded persistent store for per-entity recurrent state.
//!
//! A single append log plus an in-memory index. One writer thread owns the
//! log tail and applies group commit; readers go through the index and a
//! table of queued-but-unflushed values, so reads never wait for disk
//! writes. Compaction and expiry requests are handed to the writer and run
//! between group commits.

mod log;
mod value;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use log::{decode_record, encode_record, record_boundaries, record_len, scan, Record, ScanOutcome, Scanned, HEADER_LEN};
pub use value::{decode_state, encode_state, encoded_len, peek_last_ts};

pub const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("no space left on device")]
    DiskFull,
    #[error("store is closed")]
    Closed,
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error("unreadable log: {0}")]
    UnreadableLog(String),
    #[error("invalid state value: {0}")]
    InvalidValue(String),
    #[error("state written under schema {found:#x}, serving schema is {expected:#x}")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        // ENOSPC
        if e.raw_os_error() == Some(28) || e.kind() == io::ErrorKind::StorageFull {
            StoreError::DiskFull
        } else {
            StoreError::Io(e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    /// Group commit: flush at most this long after the first unflushed record.
    pub flush_interval_ms: u64,
    /// Group commit: flush once this many records are staged.
    pub flush_records: usize,
    /// `fdatasync` after each group commit.
    pub sync: bool,
    pub ttl_ms: i64,
    pub max_bytes: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { flush_interval_ms: 50, flush_records: 256, sync: true, ttl_ms: 90 * MS_PER_DAY, max_bytes: 1 << 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct IndexEntry {
    offset: u64,
    len: u32,
    version: u64,
    last_ts: Option<i64>,
}

struct Segment {
    file: Arc<File>,
    index: HashMap<Vec<u8>, IndexEntry>,
    live_bytes: u64,
    file_len: u64,
}

#[derive(Default)]
struct FlushState {
    seq: u64,
    watermark: Option<u64>,
}

struct Shared {
    segment: RwLock<Segment>,
    /// Values acknowledged but not yet flushed, tagged with their put sequence number.
    pending: Mutex<PendingTable>,
    flushed: Mutex<FlushState>,
    flushed_cv: Condvar,
    failure: Mutex<Option<StoreError>>,
    closed: AtomicBool,
}

#[derive(Default)]
struct PendingTable {
    next_seq: u64,
    values: HashMap<Vec<u8>, (u64, Arc<Vec<u8>>)>,
}

enum Msg {
    Put { key: Vec<u8>, value: Arc<Vec<u8>>, last_ts: Option<i64>, seq: u64 },
    Watermark(u64),
    Flush(Sender<Result<usize, StoreError>>),
    Compact(Sender<Result<CompactStats, StoreError>>),
    Expire { now: i64, ttl_ms: i64, max_bytes: u64, reply: Sender<Result<Vec<Vec<u8>>, StoreError>> },
    Close(Sender<()>),
}

/// What recovery found in the log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveryReport {
    pub records: usize,
    pub corrupt_skipped: usize,
    pub discarded_bytes: u64,
    pub live_keys: usize,
    pub watermark: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompactStats {
    pub records_before: usize,
    pub records_after: usize,
    pub bytes_before: u64,
    pub bytes_after: u64,
    pub corrupt_dropped: usize,
}

pub struct StateStore {
    shared: Arc<Shared>,
    tx: Sender<Msg>,
    writer: Mutex<Option<JoinHandle<()>>>,
    recovery: RecoveryReport,
    path: PathBuf,
    config: StoreConfig,
}

impl std::fmt::Debug for StateStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StateStore").field("path", &self.path).field("live_keys", &self.len()).finish()
    }
}

impl StateStore {
    /// Opens `path`, creating it if absent, and rebuilds the index by a
    /// forward scan. A torn final record is cut off the file.
    pub fn open(path: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if !path.exists() {
            let mut f = File::create(&path)?;
            f.write_all(&log::header())?;
            f.sync_all()?;
        }
        let f = File::open(&path).map_err(|e| StoreError::UnreadableLog(e.to_string()))?;
        let len = f.metadata()?.len();
        let outcome = log::scan(BufReader::new(f), len)?;
        let mut report = RecoveryReport { discarded_bytes: outcome.discarded_bytes, ..Default::default() };
        let mut index = HashMap::new();
        let mut versions: HashMap<Vec<u8>, u64> = HashMap::new();
        let mut records = 0usize;
        for e in outcome.entries {
            records += 1;
            let Ok(rec) = e.record else {
                report.corrupt_skipped += 1;
                continue;
            };
            if rec.key.is_empty() {
                if let Some(w) = rec.value.as_deref().and_then(|v| v.try_into().ok()) {
                    report.watermark = Some(u64::from_le_bytes(w));
                }
                continue;
            }
            let v = versions.entry(rec.key.clone()).or_default();
            *v = (*v).max(rec.version);
            match rec.value {
                None => {
                    index.remove(&rec.key);
                }
                Some(val) => {
                    let last_ts = peek_last_ts(&val).ok().flatten();
                    index.insert(rec.key, IndexEntry { offset: e.offset, len: e.len, version: rec.version, last_ts });
                }
            }
        }
        report.records = records;
        report.live_keys = index.len();
        let append = OpenOptions::new().read(true).write(true).open(&path)?;
        if outcome.discarded_bytes > 0 || outcome.valid_end == 0 {
            if outcome.valid_end == 0 {
                append.set_len(0)?;
                append.write_all_at(&log::header(), 0)?;
            } else {
                append.set_len(outcome.valid_end)?;
            }
            append.sync_all()?;
        }
        let file_len = outcome.valid_end.max(HEADER_LEN);
        let live_bytes = index.values().map(|e| e.len as u64).sum();
        let shared = Arc::new(Shared {
            segment: RwLock::new(Segment { file: Arc::new(File::open(&path)?), index, live_bytes, file_len }),
            pending: Mutex::new(PendingTable::default()),
            flushed: Mutex::new(FlushState { seq: 0, watermark: report.watermark }),
            flushed_cv: Condvar::new(),
            failure: Mutex::new(None),
            closed: AtomicBool::new(false),
        });
        let (tx, rx) = unbounded();
        let writer = Writer {
            shared: Arc::clone(&shared),
            path: path.clone(),
            file: append,
            file_len,
            records,
            versions,
            buf: Vec::new(),
            staged: Vec::new(),
            staged_watermark: None,
            first_staged: None,
            config: config.clone(),
        };
        let handle = std::thread::Builder::new().name("state-writer".into()).spawn(move || writer.run(rx))?;
        Ok(StateStore { shared, tx, writer: Mutex::new(Some(handle)), recovery: report, path, config })
    }

    /// Opens an existing log with default settings.
    pub fn recover(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        if !path.as_ref().exists() {
            return Err(StoreError::UnreadableLog(format!("{} does not exist", path.as_ref().display())));
        }
        Self::open(path, StoreConfig::default())
    }

    pub fn recovery_report(&self) -> &RecoveryReport {
        &self.recovery
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn check_open(&self) -> Result<(), StoreError> {
        if self.shared.closed.load(Ordering::Acquire) {
            return Err(StoreError::Closed);
        }
        match &*self.shared.failure.lock() {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    /// Queues `value` for `key`. The return value is the put's sequence
    /// number; it is durable once `flushed_seq()` reaches it.
    pub fn put(&self, key: &[u8], value: Vec<u8>) -> Result<u64, StoreError> {
        self.check_open()?;
        if key.is_empty() {
            return Err(StoreError::InvalidValue("empty keys are reserved".into()));
        }
        let last_ts = peek_last_ts(&value)?;
        let value = Arc::new(value);
        let mut p = self.shared.pending.lock();
        p.next_seq += 1;
        let seq = p.next_seq;
        p.values.insert(key.to_vec(), (seq, Arc::clone(&value)));
        // Sent under the lock so channel order matches sequence order.
        self.tx.send(Msg::Put { key: key.to_vec(), value, last_ts, seq }).map_err(|_| StoreError::Closed)?;
        Ok(seq)
    }

    /// Latest value for `key`, including acknowledged but unflushed puts.
    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>, StoreError> {
        if self.shared.closed.load(Ordering::Acquire) {
            return Err(StoreError::Closed);
        }
        if let Some((_, v)) = self.shared.pending.lock().values.get(key) {
            return Ok(Some(v.to_vec()));
        }
        let (file, entry) = {
            let seg = self.shared.segment.read();
            match seg.index.get(key) {
                Some(e) => (Arc::clone(&seg.file), *e),
                None => return Ok(None),
            }
        };
        let mut buf = vec![0u8; entry.len as usize];
        file.read_exact_at(&mut buf, entry.offset)?;
        let rec = decode_record(&buf)?;
        if rec.key != key {
            return Err(StoreError::CorruptRecord(format!("index points at a record for another key at {}", entry.offset)));
        }
        Ok(rec.value)
    }

    /// Records the replay position up to which all earlier puts are covered.
    /// Becomes visible through `watermark()` once flushed.
    pub fn set_watermark(&self, position: u64) -> Result<(), StoreError> {
        self.check_open()?;
        self.tx.send(Msg::Watermark(position)).map_err(|_| StoreError::Closed)
    }

    /// Last durable watermark.
    pub fn watermark(&self) -> Option<u64> {
        self.shared.flushed.lock().watermark
    }

    fn request<T>(&self, make: impl FnOnce(Sender<Result<T, StoreError>>) -> Msg) -> Result<T, StoreError> {
        self.check_open()?;
        let (reply, rx) = bounded(1);
        self.tx.send(make(reply)).map_err(|_| StoreError::Closed)?;
        rx.recv().map_err(|_| StoreError::Closed)?
    }

    /// Forces a group commit now; returns the number of records it wrote.
    pub fn flush(&self) -> Result<usize, StoreError> {
        self.request(Msg::Flush)
    }

    /// Rewrites the log with only the latest record of each live key.
    pub fn compact(&self) -> Result<CompactStats, StoreError> {
        self.request(Msg::Compact)
    }

    /// Removes keys idle for longer than `ttl_ms`, then the least recently
    /// active keys until live bytes fit in `max_bytes`. Returns evicted keys.
    pub fn expire(&self, now: i64, ttl_ms: i64, max_bytes: u64) -> Result<Vec<Vec<u8>>, StoreError> {
        self.request(|reply| Msg::Expire { now, ttl_ms, max_bytes, reply })
    }

    /// Highest put sequence number known durable.
    pub fn flushed_seq(&self) -> u64 {
        self.shared.flushed.lock().seq
    }

    /// Blocks until `seq` is durable or `timeout` passes.
    pub fn wait_flushed(&self, seq: u64, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut f = self.shared.flushed.lock();
        while f.seq < seq {
            if self.shared.flushed_cv.wait_until(&mut f, deadline).timed_out() {
                return f.seq >= seq;
            }
        }
        true
    }

    /// Live keys in the persisted index.
    pub fn len(&self) -> usize {
        self.shared.segment.read().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn live_bytes(&self) -> u64 {
        self.shared.segment.read().live_bytes
    }

    pub fn file_len(&self) -> u64 {
        self.shared.segment.read().file_len
    }

    /// Persisted live keys, sorted.
    pub fn keys(&self) -> Vec<Vec<u8>> {
        let mut k: Vec<_> = self.shared.segment.read().index.keys().cloned().collect();
        k.sort();
        k
    }

    /// Flushes and stops the writer. Later calls fail with `Closed`.
    pub fn close(&self) -> Result<(), StoreError> {
        let Some(handle) = self.writer.lock().take() else {
            return Ok(());
        };
        let (reply, rx) = bounded(1);
        if self.tx.send(Msg::Close(reply)).is_ok() {
            let _ = rx.recv();
        }
        self.shared.closed.store(true, Ordering::Release);
        let _ = handle.join();
        match self.shared.failure.lock().clone() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl Drop for StateStore {
    fn drop(&mut self) {
        let _ = self.close();
    }
}

struct Staged {
    key: Vec<u8>,
    entry: IndexEntry,
    tombstone: bool,
    seq: Option<u64>,
}

struct Writer {
    shared: Arc<Shared>,
    path: PathBuf,
    file: File,
    file_len: u64,
    records: usize,
    versions: HashMap<Vec<u8>, u64>,
    buf: Vec<u8>,
    staged: Vec<Staged>,
    staged_watermark: Option<u64>,
    first_staged: Option<Instant>,
    config: StoreConfig,
}

impl Writer {
    fn run(mut self, rx: Receiver<Msg>) {
        let interval = Duration::from_millis(self.config.flush_interval_ms);
        loop {
            let msg = match self.first_staged {
                Some(t0) => match rx.recv_timeout((t0 + interval).saturating_duration_since(Instant::now())) {
                    Ok(m) => m,
                    Err(RecvTimeoutError::Timeout) => {
                        self.flush_or_fail();
                        continue;
                    }
                    Err(RecvTimeoutError::Disconnected) => break,
                },
                None => match rx.recv() {
                    Ok(m) => m,
                    Err(_) => break,
                },
            };
            match msg {
                Msg::Put { key, value, last_ts, seq } => {
                    self.stage(key, Some(&value), last_ts, Some(seq));
                    if self.staged.len() >= self.config.flush_records.max(1) {
                        self.flush_or_fail();
                    }
                }
                Msg::Watermark(w) => {
                    self.staged_watermark = Some(w);
                    self.first_staged.get_or_insert_with(Instant::now);
                }
                Msg::Flush(reply) => {
                    let _ = reply.send(self.flush());
                }
                Msg::Compact(reply) => {
                    let _ = reply.send(self.flush().and_then(|_| self.compact()));
                }
                Msg::Expire { now, ttl_ms, max_bytes, reply } => {
                    let _ = reply.send(self.flush().and_then(|_| self.expire(now, ttl_ms, max_bytes)));
                }
                Msg::Close(reply) => {
                    self.flush_or_fail();
                    let _ = reply.send(());
                    return;
                }
            }
        }
        self.flush_or_fail();
    }

    fn stage(&mut self, key: Vec<u8>, value: Option<&[u8]>, last_ts: Option<i64>, seq: Option<u64>) {
        let v = self.versions.entry(key.clone()).or_default();
        *v += 1;
        let offset = self.file_len + self.buf.len() as u64;
        log::encode_record(&mut self.buf, &key, value, *v);
        let len = (self.file_len + self.buf.len() as u64 - offset) as u32;
        self.staged.push(Staged { key, entry: IndexEntry { offset, len, version: *v, last_ts }, tombstone: value.is_none(), seq });
        self.first_staged.get_or_insert_with(Instant::now);
    }

    fn flush_or_fail(&mut self) {
        if let Err(e) = self.flush() {
            *self.shared.failure.lock() = Some(e);
        }
    }

    fn flush(&mut self) -> Result<usize, StoreError> {
        if let Some(w) = self.staged_watermark {
            log::encode_record(&mut self.buf, &[], Some(&w.to_le_bytes()), 0);
        }
        if self.buf.is_empty() {
            self.first_staged = None;
            return Ok(0);
        }
        if let Some(e) = self.shared.failure.lock().clone() {
            return Err(e);
        }
        self.file.write_all_at(&self.buf, self.file_len)?;
        if self.config.sync {
            self.file.sync_data()?;
        }
        self.file_len += self.buf.len() as u64;
        self.buf.clear();
        self.first_staged = None;
        let n = self.staged.len();
        self.records += n + self.staged_watermark.is_some() as usize;
        let mut last_seq = None;
        {
            let mut seg = self.shared.segment.write();
            for s in &self.staged {
                let old = if s.tombstone { seg.index.remove(&s.key) } else { seg.index.insert(s.key.clone(), s.entry) };
                seg.live_bytes -= old.map_or(0, |o| o.len as u64);
                if !s.tombstone {
                    seg.live_bytes += s.entry.len as u64;
                }
            }
            seg.file_len = self.file_len;
        }
        {
            let mut p = self.shared.pending.lock();
            for s in &self.staged {
                if let Some(seq) = s.seq {
                    last_seq = Some(seq);
                    if p.values.get(&s.key).is_some_and(|(q, _)| *q == seq) {
                        p.values.remove(&s.key);
                    }
                }
            }
        }
        self.staged.clear();
        {
            let mut f = self.shared.flushed.lock();
            if let Some(q) = last_seq {
                f.seq = q;
            }
            if let Some(w) = self.staged_watermark.take() {
                f.watermark = Some(w);
            }
        }
        self.shared.flushed_cv.notify_all();
        Ok(n)
    }

    fn compact(&mut self) -> Result<CompactStats, StoreError> {
        let (file, mut entries) = {
            let seg = self.shared.segment.read();
            (Arc::clone(&seg.file), seg.index.iter().map(|(k, e)| (k.clone(), *e)).collect::<Vec<_>>())
        };
        entries.sort_by_key(|(_, e)| e.offset);
        let mut stats = CompactStats { records_before: self.records, bytes_before: self.file_len, ..Default::default() };
        let tmp = self.path.with_extension("compacting");
        let mut out = log::header().to_vec();
        let mut index = HashMap::with_capacity(entries.len());
        let mut buf = Vec::new();
        for (key, e) in entries {
            buf.resize(e.len as usize, 0);
            file.read_exact_at(&mut buf, e.offset)?;
            if decode_record(&buf).map(|r| r.key != key).unwrap_or(true) {
                stats.corrupt_dropped += 1;
                continue;
            }
            index.insert(key, IndexEntry { offset: out.len() as u64, ..e });
            out.extend_from_slice(&buf);
        }
        stats.records_after = index.len();
        if let Some(w) = self.shared.flushed.lock().watermark {
            log::encode_record(&mut out, &[], Some(&w.to_le_bytes()), 0);
            stats.records_after += 1;
        }
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&out)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            File::open(dir)?.sync_all()?;
        }
        self.file = OpenOptions::new().read(true).write(true).open(&self.path)?;
        self.file_len = out.len() as u64;
        self.records = stats.records_after;
        self.versions.retain(|k, _| index.contains_key(k));
        stats.bytes_after = self.file_len;
        let live_bytes = index.values().map(|e| e.len as u64).sum();
        *self.shared.segment.write() =
            Segment { file: Arc::new(File::open(&self.path)?), index, live_bytes, file_len: self.file_len };
        Ok(stats)
    }

    fn expire(&mut self, now: i64, ttl_ms: i64, max_bytes: u64) -> Result<Vec<Vec<u8>>, StoreError> {
        let cutoff = now.saturating_sub(ttl_ms);
        let (mut live, live_bytes) = {
            let seg = self.shared.segment.read();
            (seg.index.iter().map(|(k, e)| (e.last_ts.unwrap_or(i64::MIN), k.clone(), e.len as u64)).collect::<Vec<_>>(), seg.live_bytes)
        };
        live.sort();
        let idle = live.partition_point(|(ts, _, _)| *ts < cutoff);
        let mut remaining = live_bytes - live[..idle].iter().map(|(_, _, b)| b).sum::<u64>();
        let mut n = idle;
        while remaining > max_bytes && n < live.len() {
            remaining -= live[n].2;
            n += 1;
        }
        let victims: Vec<Vec<u8>> = live.into_iter().take(n).map(|(_, k, _)| k).collect();
        for k in &victims {
            self.stage(k.clone(), None, None, None);
        }
        self.flush()?;
        Ok(victims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EntityState;

    fn state(ts: i64, x: f32) -> Vec<u8> {
        encode_state(&EntityState { layers: vec![vec![x, -x]], last_event_ts: Some(ts) }, 7)
    }

    fn open(dir: &tempfile::TempDir) -> StateStore {
        StateStore::open(dir.path().join("s.log"), StoreConfig { sync: false, ..Default::default() }).unwrap()
    }

    #[test]
    fn put_get_and_last_writer_wins() {
        let d = tempfile::tempdir().unwrap();
        let s = open(&d);
        assert_eq!(s.get(b"a").unwrap(), None);
        s.put(b"a", state(1, 1.0)).unwrap();
        assert_eq!(s.get(b"a").unwrap(), Some(state(1, 1.0)));
        s.put(b"a", state(2, 2.0)).unwrap();
        assert_eq!(s.get(b"a").unwrap(), Some(state(2, 2.0)));
        s.flush().unwrap();
        assert_eq!(s.get(b"a").unwrap(), Some(state(2, 2.0)));
        s.close().unwrap();
        assert_eq!(s.put(b"a", state(3, 3.0)), Err(StoreError::Closed));
        assert_eq!(s.get(b"a"), Err(StoreError::Closed));
    }

    #[test]
    fn reopen_recovers_everything_after_clean_close() {
        let d = tempfile::tempdir().unwrap();
        {
            let s = open(&d);
            for i in 0..50 {
                s.put(format!("k{}", i % 7).as_bytes(), state(i, i as f32)).unwrap();
            }
            s.set_watermark(50).unwrap();
        }
        let s = open(&d);
        assert_eq!(s.len(), 7);
        assert_eq!(s.get(b"k0").unwrap(), Some(state(49, 49.0)));
        assert_eq!(s.watermark(), Some(50));
        assert_eq!(s.recovery_report().records, 51);
    }

    #[test]
    fn group_commit_by_count_and_by_time() {
        let d = tempfile::tempdir().unwrap();
        let s = StateStore::open(
            d.path().join("s.log"),
            StoreConfig { sync: false, flush_records: 4, flush_interval_ms: 20, ..Default::default() },
        )
        .unwrap();
        let mut last = 0;
        for i in 0..4 {
            last = s.put(format!("k{i}").as_bytes(), state(i, 0.0)).unwrap();
        }
        assert!(s.wait_flushed(last, Duration::from_secs(5)));
        let t = Instant::now();
        let seq = s.put(b"z", state(9, 0.0)).unwrap();
        assert!(s.wait_flushed(seq, Duration::from_secs(5)));
        assert!(t.elapsed() >= Duration::from_millis(15));
        assert_eq!(s.flush().unwrap(), 0);
    }

    #[test]
    fn empty_log_recovers_empty() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("s.log"), b"").unwrap();
        let s = open(&d);
        assert!(s.is_empty());
        s.put(b"a", state(1, 1.0)).unwrap();
        s.close().unwrap();
        assert_eq!(open(&d).get(b"a").unwrap(), Some(state(1, 1.0)));
    }

    #[test]
    fn corrupt_latest_record_falls_back_to_previous_version() {
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("s.log");
        {
            let s = open(&d);
            s.put(b"a", state(1, 1.0)).unwrap();
            s.flush().unwrap();
            s.put(b"a", state(2, 2.0)).unwrap();
        }
        let b = record_boundaries(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[b[1] as usize + 12] ^= 0x55;
        std::fs::write(&path, bytes).unwrap();
        let s = open(&d);
        assert_eq!(s.recovery_report().corrupt_skipped, 1);
        assert_eq!(s.get(b"a").unwrap(), Some(state(1, 1.0)));
    }

    #[test]
    fn torn_final_record_is_dropped_and_cut() {
        let d = tempfile::tempdir().unwrap();
        let path = d.path().join("s.log");
        {
            let s = open(&d);
            s.put(b"a", state(1, 1.0)).unwrap();
            s.put(b"b", state(1, 2.0)).unwrap();
        }
        let len = std::fs::metadata(&path).unwrap().len();
        OpenOptions::new().write(true).open(&path).unwrap().set_len(len - 3).unwrap();
        let s = open(&d);
        assert_eq!(s.get(b"a").unwrap(), Some(state(1, 1.0)));
        assert_eq!(s.get(b"b").unwrap(), None);
        assert_eq!(s.recovery_report().discarded_bytes, len - 3 - s.file_len());
        s.put(b"c", state(2, 3.0)).unwrap();
        s.close().unwrap();
        let s = open(&d);
        assert_eq!(s.keys(), vec![b"a".to_vec(), b"c".to_vec()]);
    }

    #[test]
    fn compaction_keeps_latest_versions_only() {
        let d = tempfile::tempdir().unwrap();
        let s = open(&d);
        for v in 0..3 {
            s.put(b"a", state(v, v as f32)).unwrap();
        }
        s.put(b"b", state(5, 5.0)).unwrap();
        let st = s.compact().unwrap();
        assert_eq!(st.records_before, 4);
        assert_eq!(st.records_after, 2);
        assert!(st.bytes_after < st.bytes_before);
        assert_eq!(s.get(b"a").unwrap(), Some(state(2, 2.0)));
        s.put(b"a", state(3, 3.0)).unwrap();
        s.close().unwrap();
        assert_eq!(open(&d).get(b"a").unwrap(), Some(state(3, 3.0)));
    }

    #[test]
    fn expiry_by_ttl_then_by_budget() {
        let d = tempfile::tempdir().unwrap();
        let s = open(&d);
        s.put(b"old", state(0, 0.0)).unwrap();
        s.put(b"mid", state(500, 0.0)).unwrap();
        s.put(b"new", state(900, 0.0)).unwrap();
        assert!(s.expire(1000, 2000, u64::MAX).unwrap().is_empty());
        assert_eq!(s.expire(1000, 600, u64::MAX).unwrap(), vec![b"old".to_vec()]);
        assert_eq!(s.get(b"old").unwrap(), None);
        let one = s.live_bytes() / 2;
        assert_eq!(s.expire(1000, 2000, one).unwrap(), vec![b"mid".to_vec()]);
        assert_eq!(s.keys(), vec![b"new".to_vec()]);
        s.close().unwrap();
        let s = open(&d);
        assert_eq!(s.keys(), vec![b"new".to_vec()]);
        let st = s.compact().unwrap();
        assert_eq!(st.records_after, 1);
    }

    #[test]
    fn disk_full_maps_from_enospc() {
        assert_eq!(StoreError::from(io::Error::from_raw_os_error(28)), StoreError::DiskFull);
    }
}
