//! Numerical transforms: z-scoring with outlier clipping and percentile
//! bucketing.

use serde::{Deserialize, Serialize};

use super::PrepError;

/// Number of percentile boundaries (P^1 .. P^99).
pub const N_PERCENTILES: usize = 99;
/// Bucket reserved for missing, NaN and infinite inputs.
pub const MISSING_BUCKET: u32 = 100;
/// Buckets 0..=99 for values plus the missing bucket.
pub const PERCENTILE_CARDINALITY: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZScoreTransform {
    pub mean: f64,
    pub std: f64,
    /// Clip bound in standard deviations.
    pub clip: f64,
}

/// Fits mean and population standard deviation over the finite values.
pub fn fit_zscore(values: &[f64], clip: f64) -> Result<ZScoreTransform, PrepError> {
    if !(clip > 0.0) {
        return Err(PrepError::InvalidConfig(format!("clip must be > 0, got {clip}")));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return Err(PrepError::TooFewValues { field: String::new(), got: finite.len() });
    }
    if finite.iter().all(|v| *v == finite[0]) {
        return Err(PrepError::DegenerateDistribution { field: String::new() });
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(PrepError::DegenerateDistribution { field: String::new() });
    }
    Ok(ZScoreTransform { mean, std, clip })
}

impl ZScoreTransform {
    /// `(x - mean) / std` clipped to `±clip`; missing and non-finite inputs
    /// map to 0.0 (the mean).
    pub fn apply(&self, x: Option<f64>) -> f64 {
        match x {
            Some(v) if v.is_finite() => ((v - self.mean) / self.std).clamp(-self.clip, self.clip),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileBucketer {
    /// P^1..P^99, non-decreasing.
    pub boundaries: Vec<f64>,
}

/// Nearest-rank percentiles: P^k is the value at 1-based ordinal
/// `ceil(k * n / 100)` of the sorted finite training values.
pub fn fit_percentile(values: &[f64]) -> Result<PercentileBucketer, PrepError> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 2 {
        return Err(PrepError::TooFewValues { field: String::new(), got: sorted.len() });
    }
    sorted.sort_by(f64::total_cmp);
    let boundaries = (1..=N_PERCENTILES)
        .map(|k| sorted[nearest_rank_index(k as f64, sorted.len())])
        .collect();
    Ok(PercentileBucketer { boundaries })
}

/// Zero-based index of the nearest-rank `pct`-th percentile in a sorted
/// sample of length `n` (`n > 0`). The rank `ceil(pct * n / 100)` is computed
/// exactly for percentiles given to three decimals (e.g. 99.999).
pub fn nearest_rank_index(pct: f64, n: usize) -> usize {
    let thousandths = (pct * 1000.0).round().max(0.0) as u128;
    let rank = (thousandths * n as u128).div_ceil(100_000) as usize;
    rank.clamp(1, n) - 1
}

impl PercentileBucketer {
    /// 0 below P^1, k on [P^k, P^{k+1}), 99 from P^99 up, 100 when missing or
    /// not finite.
    pub fn apply(&self, x: Option<f64>) -> u32 {
        match x {
            Some(v) if v.is_finite() => self.boundaries.partition_point(|b| *b <= v) as u32,
            _ => MISSING_BUCKET,
        }
    }
}
