//! Real-time scoring: fetch state, transform, one model step, cache the new
//! state and persist it asynchronously.

mod bench;
mod cache;
mod engine;
mod probe;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, SendTimeoutError, Sender};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EntityState, Model, ModelError, Real, StepTrace};
use crate::prep::{FittedPipeline, PrepError};
use crate::schema::RawEvent;
use crate::state::{decode_state, encode_state, StateStore, StoreError};

pub use bench::{repeat_shifted, run_bench, BenchConfig, BenchReport};
pub use cache::{AllPinned, LruCache};
pub use engine::{StreamEngine, StreamOutput};
pub use probe::{LatencyProbe, Probes, READ_LABEL, TOTAL_LABEL, WRITE_LABEL};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("write-behind queue stayed full for {0:?}")]
    QueueSaturated(Duration),
    #[error("injection fell {lag_ms} ms behind schedule at event {at_event}")]
    RateUnsustainable { lag_ms: u64, at_event: u64 },
    #[error("pipeline schema {pipeline:#x} does not match model schema {model:#x}")]
    SchemaMismatch { pipeline: u64, model: u64 },
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error("streaming context is shut down")]
    Closed,
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Flag iff score >= threshold.
    pub threshold: f64,
    /// Serial lanes; each entity always maps to the same lane.
    pub lanes: usize,
    pub cache_capacity: usize,
    pub queue_capacity: usize,
    /// How long a full write-behind queue may block a lane.
    pub enqueue_timeout_ms: u64,
    /// Artificial delay before each persisted write, for fault testing.
    pub persist_delay_ms: u64,
    pub probe_capacity: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            threshold: 0.5,
            lanes: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cache_capacity: Self::cache_for_rate(500.0),
            queue_capacity: 4096,
            enqueue_timeout_ms: 30_000,
            persist_delay_ms: 0,
            probe_capacity: 1 << 20,
        }
    }
}

impl StreamConfig {
    /// Roughly 30 s of traffic at `rate` events per second.
    pub fn cache_for_rate(rate: f64) -> usize {
        ((rate * 30.0).ceil() as usize).max(1)
    }

    fn check(&self) -> Result<(), StreamError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(StreamError::InvalidConfig(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.lanes == 0 || self.cache_capacity == 0 || self.queue_capacity == 0 {
            return Err(StreamError::InvalidConfig("lanes, cache_capacity and queue_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// Result of scoring one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub score: f64,
    /// `None` for non-scorable events, which only advance the state.
    pub block: Option<bool>,
}

enum WriteMsg<F> {
    Write { key: Vec<u8>, state: EntityState<F>, enqueued: Instant },
    Flush { watermark: Option<u64>, reply: Sender<Result<usize, StoreError>> },
    Stop,
}

struct Cache<F> {
    lru: Mutex<LruCache<F>>,
    unpinned: Condvar,
}

/// Writes waiting for their group commit, for the write probe.
struct Tickets {
    queue: Mutex<VecDeque<(u64, Instant)>>,
    stop: AtomicBool,
}

pub struct StreamingContext<F: Real> {
    pipeline: FittedPipeline,
    model: Model<F>,
    store: Arc<StateStore>,
    cache: Arc<Cache<F>>,
    probes: Arc<Probes>,
    writes: Sender<WriteMsg<F>>,
    depth: Arc<AtomicUsize>,
    max_depth: AtomicUsize,
    failure: Arc<Mutex<Option<StoreError>>>,
    scored: AtomicU64,
    config: StreamConfig,
    threads: Mutex<Vec<JoinHandle<()>>>,
    tickets: Arc<Tickets>,
}

impl<F: Real> std::fmt::Debug for StreamingContext<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StreamingContext").field("config", &self.config).finish_non_exhaustive()
    }
}

impl<F: Real> StreamingContext<F> {
    pub fn new(
        pipeline: FittedPipeline,
        model: Model<F>,
        store: Arc<StateStore>,
        config: StreamConfig,
    ) -> Result<Self, StreamError> {
        config.check()?;
        if pipeline.schema_hash != model.config.schema_hash {
            return Err(StreamError::SchemaMismatch { pipeline: pipeline.schema_hash, model: model.config.schema_hash });
        }
        let cache = Arc::new(Cache { lru: Mutex::new(LruCache::new(config.cache_capacity)), unpinned: Condvar::new() });
        let probes = Arc::new(Probes::new(config.probe_capacity));
        let depth = Arc::new(AtomicUsize::new(0));
        let failure = Arc::new(Mutex::new(None));
        let tickets = Arc::new(Tickets { queue: Mutex::new(VecDeque::new()), stop: AtomicBool::new(false) });
        let (tx, rx) = bounded(config.queue_capacity);
        let persister = Persister {
            store: Arc::clone(&store),
            cache: Arc::clone(&cache),
            depth: Arc::clone(&depth),
            failure: Arc::clone(&failure),
            tickets: Arc::clone(&tickets),
            schema_hash: model.config.schema_hash,
            delay: Duration::from_millis(config.persist_delay_ms),
            since_flush: 0,
        };
        let mut threads = vec![std::thread::Builder::new()
            .name("write-behind".into())
            .spawn(move || persister.run(rx))
            .map_err(StoreError::from)?];
        let (st, tk, pr) = (Arc::clone(&store), Arc::clone(&tickets), Arc::clone(&probes));
        threads.push(
            std::thread::Builder::new()
                .name("write-probe".into())
                .spawn(move || watch_commits(&st, &tk, &pr))
                .map_err(StoreError::from)?,
        );
        Ok(StreamingContext {
            pipeline,
            model,
            store,
            cache,
            probes,
            writes: tx,
            depth,
            max_depth: AtomicUsize::new(0),
            failure,
            scored: AtomicU64::new(0),
            config,
            threads: Mutex::new(threads),
            tickets,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<F> {
        &self.model
    }

    pub fn pipeline(&self) -> &FittedPipeline {
        &self.pipeline
    }

    pub fn store(&self) -> &Arc<StateStore> {
        &self.store
    }

    pub fn probes(&self) -> &Probes {
        &self.probes
    }

    /// Current write-behind queue depth.
    pub fn queue_depth(&self) -> usize {
        self.depth.load(Ordering::Acquire)
    }

    /// Largest write-behind depth observed.
    pub fn max_queue_depth(&self) -> usize {
        self.max_depth.load(Ordering::Acquire)
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lru.lock().len()
    }

    pub fn cache_evictions(&self) -> u64 {
        self.cache.lru.lock().evictions()
    }

    pub fn events_scored(&self) -> u64 {
        self.scored.load(Ordering::Acquire)
    }

    pub fn new_scratch(&self) -> StepTrace<F> {
        self.model.new_trace()
    }

    fn check_failure(&self) -> Result<(), StreamError> {
        match &*self.failure.lock() {
            Some(e) => Err(StreamError::Store(e.clone())),
            None => Ok(()),
        }
    }

    /// Current state of `key`: cache, else store, else zeros.
    pub fn fetch_state(&self, key: &[u8]) -> Result<EntityState<F>, StreamError> {
        if let Some(s) = self.cache.lru.lock().get(key) {
            return Ok(s.clone());
        }
        match self.store.get(key)? {
            Some(bytes) => Ok(decode_state(&bytes, self.model.config.schema_hash, &self.model.config.gru_widths)?),
            None => Ok(self.model.zero_state()),
        }
    }

    /// Scores one validated event. Events of one entity must arrive in
    /// time order and from one thread at a time.
    pub fn score_event(&self, scratch: &mut StepTrace<F>, e: &RawEvent) -> Result<Scored, StreamError> {
        let t0 = Instant::now();
        self.check_failure()?;
        let key = e.entity_id.as_bytes();
        let mut state = self.fetch_state(key)?;
        self.probes.read_cache_or_disk.record(t0.elapsed());
        let gap = self.pipeline.gap_secs(state.last_event_ts, e.event_ts)?;
        let fv = self.pipeline.apply_event(e, gap)?;
        let y = self.model.step(&fv, &mut state, scratch)?;
        state.last_event_ts = Some(e.event_ts);
        self.cache_pinned(key, state.clone())?;
        self.enqueue(key.to_vec(), state)?;
        let score = y.to_f64().unwrap_or(f64::NAN);
        let block = e.scorable.then_some(score >= self.config.threshold);
        self.scored.fetch_add(1, Ordering::AcqRel);
        self.probes.total_prediction.record(t0.elapsed());
        Ok(Scored { score, block })
    }

    /// Blocks while every cache slot holds an unpersisted state.
    fn cache_pinned(&self, key: &[u8], state: EntityState<F>) -> Result<(), StreamError> {
        let deadline = Instant::now() + Duration::from_millis(self.config.enqueue_timeout_ms);
        let mut lru = self.cache.lru.lock();
        loop {
            match lru.put_pinned(key, state.clone()) {
                Ok(()) => return Ok(()),
                Err(AllPinned) => {
                    if self.cache.unpinned.wait_until(&mut lru, deadline).timed_out() {
                        return Err(StreamError::QueueSaturated(Duration::from_millis(self.config.enqueue_timeout_ms)));
                    }
                }
            }
        }
    }

    fn enqueue(&self, key: Vec<u8>, state: EntityState<F>) -> Result<(), StreamError> {
        let d = self.depth.fetch_add(1, Ordering::AcqRel) + 1;
        self.max_depth.fetch_max(d, Ordering::AcqRel);
        let timeout = Duration::from_millis(self.config.enqueue_timeout_ms);
        match self.writes.send_timeout(WriteMsg::Write { key: key.clone(), state, enqueued: Instant::now() }, timeout) {
            Ok(()) => Ok(()),
            Err(err) => {
                self.depth.fetch_sub(1, Ordering::AcqRel);
                self.cache.lru.lock().unpin(&key);
                self.cache.unpinned.notify_all();
                Err(match err {
                    SendTimeoutError::Timeout(_) => StreamError::QueueSaturated(timeout),
                    SendTimeoutError::Disconnected(_) => StreamError::Closed,
                })
            }
        }
    }

    /// Drains the write-behind queue into the store, then group-commits.
    /// `watermark`, if given, is recorded durably with this commit. Returns
    /// the number of states persisted since the previous flush.
    pub fn flush_writer(&self, watermark: Option<u64>) -> Result<usize, StreamError> {
        let (reply, rx) = bounded(1);
        self.writes.send(WriteMsg::Flush { watermark, reply }).map_err(|_| StreamError::Closed)?;
        let n = rx.recv().map_err(|_| StreamError::Closed)??;
        self.check_failure()?;
        Ok(n)
    }

    /// Expires idle or over-budget entities in the store and drops them
    /// from the cache. Queued writes complete before expiry is evaluated.
    pub fn expiry_tick(&self, now: i64) -> Result<usize, StreamError> {
        self.flush_writer(None)?;
        let cfg = self.store.config();
        let evicted = self.store.expire(now, cfg.ttl_ms, cfg.max_bytes)?;
        let cutoff = now.saturating_sub(cfg.ttl_ms);
        let mut lru = self.cache.lru.lock();
        for k in &evicted {
            lru.remove_unpinned(k);
        }
        for k in lru.unpinned_where(|s| s.last_event_ts.unwrap_or(i64::MIN) < cutoff) {
            lru.remove_unpinned(&k);
        }
        Ok(evicted.len())
    }

    /// Waits until every persisted state has its write sample recorded.
    pub fn wait_probes_settled(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while !self.tickets.queue.lock().is_empty() {
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        true
    }

    /// Stops background threads after persisting queued states.
    pub fn shutdown(&self) -> Result<(), StreamError> {
        let mut threads = self.threads.lock();
        if threads.is_empty() {
            return Ok(());
        }
        let flushed = self.flush_writer(None);
        let _ = self.writes.send(WriteMsg::Stop);
        self.tickets.stop.store(true, Ordering::Release);
        for t in threads.drain(..) {
            let _ = t.join();
        }
        flushed.map(|_| ())
    }
}

impl<F: Real> Drop for StreamingContext<F> {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

struct Persister<F> {
    store: Arc<StateStore>,
    cache: Arc<Cache<F>>,
    depth: Arc<AtomicUsize>,
    failure: Arc<Mutex<Option<StoreError>>>,
    tickets: Arc<Tickets>,
    schema_hash: u64,
    delay: Duration,
    since_flush: usize,
}

impl<F: Real> Persister<F> {
    fn run(mut self, rx: Receiver<WriteMsg<F>>) {
        while let Ok(msg) = rx.recv() {
            match msg {
                WriteMsg::Write { key, state, enqueued } => {
                    if !self.delay.is_zero() {
                        std::thread::sleep(self.delay);
                    }
                    match self.store.put(&key, encode_state(&state, self.schema_hash)) {
                        Ok(seq) => {
                            self.since_flush += 1;
                            self.tickets.queue.lock().push_back((seq, enqueued));
                        }
                        Err(e) => {
                            self.failure.lock().get_or_insert(e);
                        }
                    }
                    // Unpinned only once the store holds the state.
                    self.cache.lru.lock().unpin(&key);
                    self.cache.unpinned.notify_all();
                    self.depth.fetch_sub(1, Ordering::AcqRel);
                }
                WriteMsg::Flush { watermark, reply } => {
                    let r = watermark
                        .map_or(Ok(()), |w| self.store.set_watermark(w))
                        .and_then(|_| self.store.flush())
                        .map(|_| std::mem::take(&mut self.since_flush));
                    let _ = reply.send(r);
                }
                WriteMsg::Stop => return,
            }
        }
    }
}

/// Records, for each persisted state, the time from enqueue until its
/// group commit is durable.
fn watch_commits(store: &StateStore, tickets: &Tickets, probes: &Probes) {
    loop {
        let front = tickets.queue.lock().front().copied();
        match front {
            Some((seq, _)) => {
                if store.wait_flushed(seq, Duration::from_millis(20)) {
                    let done = store.flushed_seq();
                    let now = Instant::now();
                    let mut q = tickets.queue.lock();
                    while q.front().is_some_and(|(s, _)| *s <= done) {
                        let (_, t) = q.pop_front().unwrap();
                        probes.write_disk_async.record(now - t);
                    }
                } else if tickets.stop.load(Ordering::Acquire) {
                    return;
                }
            }
            None if tickets.stop.load(Ordering::Acquire) => return,
            None => std::thread::sleep(Duration::from_millis(1)),
        }
    }
}
