use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use crossbeam_channel::{bounded, Sender};

use super::{Scored, StreamError, StreamingContext};
use crate::model::Real;
use crate::schema::RawEvent;

const LANE_CAPACITY: usize = 1024;

/// Outcome of one submitted event.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    /// Submission order.
    pub position: u64,
    pub event_id: u64,
    pub entity_id: String,
    pub result: Result<Scored, String>,
    /// From submission to score, including time queued in the lane.
    pub latency_us: f64,
}

enum LaneMsg {
    Event { position: u64, event: RawEvent, at: Instant },
    Barrier(Sender<()>),
}

/// Serial lanes over disjoint entity partitions.
pub struct StreamEngine<F: Real> {
    ctx: Arc<StreamingContext<F>>,
    lanes: Vec<Sender<LaneMsg>>,
    handles: Vec<JoinHandle<()>>,
    submitted: u64,
}

impl<F: Real> StreamEngine<F> {
    /// Starts `ctx.config().lanes` lanes. Outcomes go to `output` when given.
    pub fn new(ctx: Arc<StreamingContext<F>>, output: Option<Sender<StreamOutput>>) -> Result<Self, StreamError> {
        let mut lanes = Vec::new();
        let mut handles = Vec::new();
        for i in 0..ctx.config().lanes {
            let (tx, rx) = bounded::<LaneMsg>(LANE_CAPACITY);
            let ctx = Arc::clone(&ctx);
            let out = output.clone();
            let h = std::thread::Builder::new()
                .name(format!("lane-{i}"))
                .spawn(move || {
                    let mut scratch = ctx.new_scratch();
                    while let Ok(msg) = rx.recv() {
                        match msg {
                            LaneMsg::Event { position, event, at } => {
                                let result = ctx.score_event(&mut scratch, &event).map_err(|e| e.to_string());
                                if let Some(out) = &out {
                                    let _ = out.send(StreamOutput {
                                        position,
                                        event_id: event.event_id,
                                        entity_id: event.entity_id,
                                        result,
                                        latency_us: at.elapsed().as_secs_f64() * 1e6,
                                    });
                                }
                            }
                            LaneMsg::Barrier(done) => {
                                let _ = done.send(());
                            }
                        }
                    }
                })
                .map_err(|e| StreamError::Store(e.into()))?;
            lanes.push(tx);
            handles.push(h);
        }
        Ok(StreamEngine { ctx, lanes, handles, submitted: 0 })
    }

    pub fn context(&self) -> &Arc<StreamingContext<F>> {
        &self.ctx
    }

    /// Lane owning `entity_id`; stable across runs.
    pub fn lane_of(&self, entity_id: &str) -> usize {
        crc32fast::hash(entity_id.as_bytes()) as usize % self.lanes.len()
    }

    /// Queues an event on its entity's lane, blocking while that lane is full.
    pub fn submit(&mut self, event: RawEvent) -> Result<u64, StreamError> {
        let lane = self.lane_of(&event.entity_id);
        let position = self.submitted;
        self.lanes[lane]
            .send(LaneMsg::Event { position, event, at: Instant::now() })
            .map_err(|_| StreamError::Closed)?;
        self.submitted += 1;
        Ok(position)
    }

    pub fn submitted(&self) -> u64 {
        self.submitted
    }

    /// Events waiting in lane queues.
    pub fn backlog(&self) -> usize {
        self.lanes.iter().map(|l| l.len()).sum()
    }

    /// Returns once every lane has processed everything submitted before.
    pub fn barrier(&self) -> Result<(), StreamError> {
        let waits: Vec<_> = self
            .lanes
            .iter()
            .map(|l| {
                let (tx, rx) = bounded(1);
                l.send(LaneMsg::Barrier(tx)).map(|_| rx).map_err(|_| StreamError::Closed)
            })
            .collect::<Result<_, _>>()?;
        for rx in waits {
            rx.recv().map_err(|_| StreamError::Closed)?;
        }
        Ok(())
    }

    /// Barrier, then a durable flush recording the number of submitted
    /// events as the replay watermark.
    pub fn checkpoint(&self) -> Result<usize, StreamError> {
        self.barrier()?;
        self.ctx.flush_writer(Some(self.submitted))
    }

    /// Processes what was submitted, persists it and stops the lanes.
    pub fn finish(mut self) -> Result<usize, StreamError> {
        let n = self.checkpoint();
        self.stop();
        n
    }

    fn stop(&mut self) {
        self.lanes.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

impl<F: Real> Drop for StreamEngine<F> {
    fn drop(&mut self) {
        self.stop();
    }
}
