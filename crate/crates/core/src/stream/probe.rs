use std::collections::VecDeque;
use std::time::Duration;

use parking_lot::Mutex;

use crate::metrics::latency::LatencySummary;

/// Fixed-capacity ring of durations in microseconds; the oldest sample is
/// overwritten once full.
#[derive(Debug)]
pub struct LatencyProbe {
    capacity: usize,
    samples: Mutex<VecDeque<f64>>,
}

impl LatencyProbe {
    pub fn new(capacity: usize) -> Self {
        LatencyProbe { capacity: capacity.max(1), samples: Mutex::new(VecDeque::new()) }
    }

    pub fn record(&self, d: Duration) {
        let mut s = self.samples.lock();
        if s.len() == self.capacity {
            s.pop_front();
        }
        s.push_back(d.as_secs_f64() * 1e6);
    }

    pub fn len(&self) -> usize {
        self.samples.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples_us(&self) -> Vec<f64> {
        self.samples.lock().iter().copied().collect()
    }

    pub fn summary(&self) -> Option<LatencySummary> {
        LatencySummary::from_samples(&self.samples_us())
    }

    pub fn clear(&self) {
        self.samples.lock().clear();
    }
}

pub const WRITE_LABEL: &str = "Write disk (async)";
pub const READ_LABEL: &str = "Read (cache or disk)";
pub const TOTAL_LABEL: &str = "Total prediction";

/// The three probes of the streaming path.
#[derive(Debug)]
pub struct Probes {
    /// From enqueueing a state update to its group commit being durable.
    pub write_disk_async: LatencyProbe,
    /// Fetching the entity state from the cache, else the store.
    pub read_cache_or_disk: LatencyProbe,
    /// From receiving the event to returning its score.
    pub total_prediction: LatencyProbe,
}

impl Probes {
    pub fn new(capacity: usize) -> Self {
        Probes {
            write_disk_async: LatencyProbe::new(capacity),
            read_cache_or_disk: LatencyProbe::new(capacity),
            total_prediction: LatencyProbe::new(capacity),
        }
    }

    pub fn labelled(&self) -> [(&'static str, &LatencyProbe); 3] {
        [(WRITE_LABEL, &self.write_disk_async), (READ_LABEL, &self.read_cache_or_disk), (TOTAL_LABEL, &self.total_prediction)]
    }

    pub fn clear(&self) {
        for (_, p) in self.labelled() {
            p.clear();
        }
    }
}
