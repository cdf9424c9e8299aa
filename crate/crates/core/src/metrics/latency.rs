use crate::prep::nearest_rank_index;

/// Percentiles reported for every latency probe.
pub const REPORT_PERCENTILES: [f64; 4] = [99.0, 99.9, 99.99, 99.999];

/// Mean and nearest-rank percentiles of a latency sample, in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean: f64,
    /// Values at [`REPORT_PERCENTILES`].
    pub percentiles: [f64; 4],
    pub max: f64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let percentiles = REPORT_PERCENTILES.map(|p| sorted[nearest_rank_index(p, n)]);
        Some(LatencySummary {
            count: n,
            mean: sorted.iter().sum::<f64>() / n as f64,
            percentiles,
            max: sorted[n - 1],
        })
    }

    pub fn p99(&self) -> f64 {
        self.percentiles[0]
    }

    /// One fixed-width report row, values in milliseconds.
    pub fn row(&self, label: &str) -> String {
        let ms = |us: f64| us / 1000.0;
        format!(
            "{label:<24}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
            ms(self.mean),
            ms(self.percentiles[0]),
            ms(self.percentiles[1]),
            ms(self.percentiles[2]),
            ms(self.percentiles[3])
        )
    }

    pub fn header() -> String {
        format!("{:<24}{:>10}{:>10}{:>10}{:>10}{:>10}", "Probe (ms)", "mean", "99", "99.9", "99.99", "99.999")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_on_a_thousand() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        let s = LatencySummary::from_samples(&v).unwrap();
        assert_eq!(s.percentiles, [990.0, 999.0, 1000.0, 1000.0]);
        assert_eq!(s.mean, 500.5);
        assert!(LatencySummary::from_samples(&[]).is_none());
    }
}
