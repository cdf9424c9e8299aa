//! Timestamp-derived features: cyclical projections, auxiliary timestamp
//! differences and the per-entity inter-event gap.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Timelike};

use super::PrepError;
use crate::schema::RawEvent;

pub const MS_PER_DAY: f64 = 86_400_000.0;
/// Gap imputed for the first event of an entity: 30 days, in seconds.
pub const DEFAULT_DELTA_T_IMPUTE_SECS: f64 = 2_592_000.0;

/// `(sin h, cos h, sin dw, cos dw, sin dm, cos dm)` for hour-of-day,
/// day-of-week (Monday = 0) and day-of-month, all in UTC. The month circle
/// uses a fixed period of 30 days.
pub fn time_cyclical(ts_ms: i64) -> [f64; 6] {
    let dt = DateTime::from_timestamp_millis(ts_ms).unwrap_or_default();
    let h = dt.hour() as f64 * 2.0 * PI / 24.0;
    let dw = dt.weekday().num_days_from_monday() as f64 * 2.0 * PI / 7.0;
    let dm = (dt.day() as f64 - 1.0) * 2.0 * PI / 30.0;
    [h.sin(), h.cos(), dw.sin(), dw.cos(), dm.sin(), dm.cos()]
}

/// `event_ts - aux_ts` in days for every auxiliary timestamp, in schema order.
pub fn timestamp_deltas(e: &RawEvent) -> Vec<Option<f64>> {
    e.timestamps
        .iter()
        .map(|(_, aux)| aux.map(|a| (e.event_ts - a) as f64 / MS_PER_DAY))
        .collect()
}

/// Gap in seconds between a timestamp and the entity's previous one; the
/// first gap is `impute_secs`.
pub fn delta_t_secs(prev_ts: Option<i64>, ts: i64, impute_secs: f64) -> Result<f64, PrepError> {
    match prev_ts {
        None => Ok(impute_secs),
        Some(p) if ts < p => Err(PrepError::UnsortedSequence { prev_ts: p, ts }),
        Some(p) => Ok((ts - p) as f64 / 1000.0),
    }
}

/// First differences of a chronologically sorted entity's timestamps, in
/// seconds, with the first element replaced by `impute_secs`.
pub fn entity_delta_t(timestamps: &[i64], impute_secs: f64) -> Result<Vec<f64>, PrepError> {
    let mut out = Vec::with_capacity(timestamps.len());
    let mut prev = None;
    for &ts in timestamps {
        out.push(delta_t_secs(prev, ts, impute_secs)?);
        prev = Some(ts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Label;
    use proptest::prelude::*;

    const MONDAY_1970_01_05: i64 = 4 * 86_400_000;

    fn event(ts: i64, aux: Vec<Option<i64>>) -> RawEvent {
        RawEvent {
            event_id: 0,
            entity_id: "e".into(),
            event_ts: ts,
            numericals: vec![],
            categoricals: vec![],
            timestamps: aux.into_iter().enumerate().map(|(i, v)| (format!("t{i}"), v)).collect(),
            label: Label::Unknown,
            scorable: true,
        }
    }

    #[test]
    fn monday_midnight_is_zero_angle() {
        let f = time_cyclical(MONDAY_1970_01_05);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 1.0);
        assert_eq!(f[2], 0.0);
        assert_eq!(f[3], 1.0);
    }

    #[test]
    fn six_am_is_quarter_turn() {
        let f = time_cyclical(MONDAY_1970_01_05 + 6 * 3_600_000 + 17 * 60_000);
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!(f[1].abs() < 1e-12);
    }

    #[test]
    fn sixteenth_is_half_month() {
        // 1970-01-16
        let f = time_cyclical(15 * 86_400_000);
        assert!(f[4].abs() < 1e-12);
        assert!((f[5] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn aux_deltas_in_days() {
        let ts = 100 * 86_400_000;
        let d = timestamp_deltas(&event(ts, vec![Some(ts), None, Some(ts + 30 * 86_400_000)]));
        assert_eq!(d, vec![Some(0.0), None, Some(-30.0)]);
    }

    #[test]
    fn entity_gaps() {
        assert_eq!(
            entity_delta_t(&[100_000, 160_000], DEFAULT_DELTA_T_IMPUTE_SECS).unwrap(),
            vec![2_592_000.0, 60.0]
        );
        assert_eq!(entity_delta_t(&[5], DEFAULT_DELTA_T_IMPUTE_SECS).unwrap(), vec![2_592_000.0]);
        assert!(matches!(
            entity_delta_t(&[10, 5], DEFAULT_DELTA_T_IMPUTE_SECS),
            Err(PrepError::UnsortedSequence { .. })
        ));
    }

    proptest! {
        #[test]
        fn cyclical_pairs_on_unit_circle(ts in -4_000_000_000_000i64..8_000_000_000_000) {
            let f = time_cyclical(ts);
            for pair in f.chunks(2) {
                prop_assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn gaps_are_first_differences(mut ts in prop::collection::vec(0i64..1_000_000_000, 1..50)) {
            ts.sort();
            let gaps = entity_delta_t(&ts, 7.0).unwrap();
            prop_assert_eq!(gaps[0], 7.0);
            for i in 1..ts.len() {
                prop_assert_eq!(gaps[i], (ts[i] - ts[i - 1]) as f64 / 1000.0);
            }
        }
    }
}
