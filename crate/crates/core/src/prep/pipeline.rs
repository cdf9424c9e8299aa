use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::categorical::{fit_categorical, CategoricalIndexer};
use super::numeric::{fit_percentile, fit_zscore, PercentileBucketer, ZScoreTransform, PERCENTILE_CARDINALITY};
use super::time::{delta_t_secs, entity_delta_t, time_cyclical, timestamp_deltas};
use super::{FeatureVector, PrepError, DEFAULT_DELTA_T_IMPUTE_SECS, DEFAULT_EMBEDDING_CAP, DEFAULT_MIN_OCCURRENCES};
use crate::schema::{DatasetSchema, NumericTransform, RawEvent};

pub const PIPELINE_FORMAT: &str = "interseq-pipeline";
pub const PIPELINE_VERSION: u32 = 1;

const N_CYCLICAL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Outlier clip, in standard deviations.
    pub clip: f64,
    pub min_occurrences: usize,
    pub embedding_cap: usize,
    pub delta_t_impute_secs: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            clip: 3.0,
            min_occurrences: DEFAULT_MIN_OCCURRENCES,
            embedding_cap: DEFAULT_EMBEDDING_CAP,
            delta_t_impute_secs: DEFAULT_DELTA_T_IMPUTE_SECS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NumericFit {
    Zscore(ZScoreTransform),
    Percentile(PercentileBucketer),
}

/// Shape of the vectors a pipeline emits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub dense_names: Vec<String>,
    pub cat_names: Vec<String>,
    pub cat_cardinalities: Vec<usize>,
}

impl FeatureLayout {
    pub fn n_dense(&self) -> usize {
        self.dense_names.len()
    }

    pub fn n_cat(&self) -> usize {
        self.cat_names.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub format: String,
    pub version: u32,
    pub schema: DatasetSchema,
    pub schema_hash: u64,
    pub config: PipelineConfig,
    /// One per schema numerical, in schema order.
    pub numericals: Vec<NumericFit>,
    pub categoricals: Vec<CategoricalIndexer>,
    /// One per auxiliary timestamp field.
    pub timestamp_deltas: Vec<ZScoreTransform>,
    pub delta_t: ZScoreTransform,
    /// Latest event timestamp seen while fitting.
    pub fitted_until_ts: i64,
}

/// Fits every transform on `train`, which must hold only training-period
/// events that passed schema validation.
pub fn fit_pipeline(
    train: &[RawEvent],
    schema: &DatasetSchema,
    cfg: PipelineConfig,
) -> Result<FittedPipeline, PrepError> {
    schema.check().map_err(|e| PrepError::SchemaMismatch(e.to_string()))?;
    for e in train {
        check_aligned(e, schema)?;
    }

    let mut numericals = Vec::with_capacity(schema.numericals.len());
    for (i, field) in schema.numericals.iter().enumerate() {
        let values: Vec<f64> = train.iter().filter_map(|e| e.numericals[i].1).collect();
        let fit = match field.transform {
            NumericTransform::Zscore => fit_zscore(&values, cfg.clip).map(NumericFit::Zscore),
            NumericTransform::Percentile => fit_percentile(&values).map(NumericFit::Percentile),
        };
        numericals.push(fit.map_err(|e| e.for_field(&field.name))?);
    }

    let categoricals = (0..schema.categoricals.len())
        .map(|j| {
            fit_categorical(
                train.iter().filter_map(|e| e.categoricals[j].1.as_deref()),
                cfg.min_occurrences,
                cfg.embedding_cap,
            )
        })
        .collect();

    let mut ts_deltas = Vec::with_capacity(schema.timestamps.len());
    for (k, name) in schema.timestamps.iter().enumerate() {
        let values: Vec<f64> = train.iter().filter_map(|e| timestamp_deltas(e)[k]).collect();
        ts_deltas.push(fit_zscore(&values, cfg.clip).map_err(|e| e.for_field(name))?);
    }

    // Gaps need each entity's events in time order; ingestion order breaks ties.
    let mut by_entity: HashMap<&str, Vec<i64>> = HashMap::new();
    for e in train {
        by_entity.entry(e.entity_id.as_str()).or_default().push(e.event_ts);
    }
    let mut gaps = Vec::with_capacity(train.len());
    for ts in by_entity.values_mut() {
        ts.sort();
        gaps.extend(entity_delta_t(ts, cfg.delta_t_impute_secs)?);
    }
    let delta_t = fit_zscore(&gaps, cfg.clip).map_err(|e| e.for_field("delta_t"))?;

    Ok(FittedPipeline {
        format: PIPELINE_FORMAT.to_string(),
        version: PIPELINE_VERSION,
        schema: schema.clone(),
        schema_hash: schema.hash64(),
        config: cfg,
        numericals,
        categoricals,
        timestamp_deltas: ts_deltas,
        delta_t,
        fitted_until_ts: train.iter().map(|e| e.event_ts).max().unwrap_or(i64::MIN),
    })
}

fn check_aligned(e: &RawEvent, s: &DatasetSchema) -> Result<(), PrepError> {
    let ok = e.numericals.len() == s.numericals.len()
        && e.categoricals.len() == s.categoricals.len()
        && e.timestamps.len() == s.timestamps.len()
        && e.numericals.iter().zip(&s.numericals).all(|((n, _), f)| *n == f.name)
        && e.categoricals.iter().zip(&s.categoricals).all(|((n, _), c)| n == c)
        && e.timestamps.iter().zip(&s.timestamps).all(|((n, _), t)| n == t);
    if ok {
        Ok(())
    } else {
        Err(PrepError::SchemaMismatch(format!(
            "event {} is not aligned to the schema (validate it first)",
            e.event_id
        )))
    }
}

impl FittedPipeline {
    pub fn layout(&self) -> FeatureLayout {
        let mut dense_names = Vec::new();
        let mut cat_names: Vec<String> = self.schema.categoricals.clone();
        let mut cat_cardinalities: Vec<usize> =
            self.categoricals.iter().map(CategoricalIndexer::cardinality).collect();
        for (field, fit) in self.schema.numericals.iter().zip(&self.numericals) {
            match fit {
                NumericFit::Zscore(_) => dense_names.push(field.name.clone()),
                NumericFit::Percentile(_) => {
                    cat_names.push(field.name.clone());
                    cat_cardinalities.push(PERCENTILE_CARDINALITY);
                }
            }
        }
        for name in ["hour_sin", "hour_cos", "weekday_sin", "weekday_cos", "monthday_sin", "monthday_cos"] {
            dense_names.push(name.to_string());
        }
        debug_assert_eq!(N_CYCLICAL, 6);
        for name in &self.schema.timestamps {
            dense_names.push(format!("{name}_age_days"));
        }
        dense_names.push("delta_t".to_string());
        FeatureLayout { dense_names, cat_names, cat_cardinalities }
    }

    /// Transforms one event given its gap (seconds) to the entity's previous
    /// event.
    pub fn apply_event(&self, e: &RawEvent, delta_t_secs: f64) -> Result<FeatureVector, PrepError> {
        check_aligned(e, &self.schema)?;
        let mut dense = Vec::with_capacity(self.numericals.len() + N_CYCLICAL + self.timestamp_deltas.len() + 1);
        let mut cat = Vec::with_capacity(self.categoricals.len() + self.numericals.len());
        for (indexer, (_, v)) in self.categoricals.iter().zip(&e.categoricals) {
            cat.push(indexer.apply(v.as_deref()));
        }
        for (fit, (_, v)) in self.numericals.iter().zip(&e.numericals) {
            match fit {
                NumericFit::Zscore(z) => dense.push(z.apply(*v)),
                NumericFit::Percentile(p) => cat.push(p.apply(*v)),
            }
        }
        dense.extend_from_slice(&time_cyclical(e.event_ts));
        for (z, d) in self.timestamp_deltas.iter().zip(timestamp_deltas(e)) {
            dense.push(z.apply(d));
        }
        dense.push(self.delta_t.apply(Some(delta_t_secs)));
        Ok(FeatureVector { dense, cat })
    }

    /// Gap for an event following `prev_ts` (or the imputed gap when there
    /// is no previous event).
    pub fn gap_secs(&self, prev_ts: Option<i64>, ts: i64) -> Result<f64, PrepError> {
        delta_t_secs(prev_ts, ts, self.config.delta_t_impute_secs)
    }

    /// Transforms one entity's chronologically sorted events.
    pub fn apply_sequence(&self, events: &[RawEvent]) -> Result<Vec<FeatureVector>, PrepError> {
        let mut prev = None;
        let mut out = Vec::with_capacity(events.len());
        for e in events {
            let gap = self.gap_secs(prev, e.event_ts)?;
            out.push(self.apply_event(e, gap)?);
            prev = Some(e.event_ts);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PrepError> {
        let p: FittedPipeline = serde_json::from_str(s).map_err(|e| PrepError::Format(e.to_string()))?;
        if p.format != PIPELINE_FORMAT {
            return Err(PrepError::Format(format!("unexpected format tag `{}`", p.format)));
        }
        if p.version != PIPELINE_VERSION {
            return Err(PrepError::Format(format!("unsupported version {}", p.version)));
        }
        if p.schema_hash != p.schema.hash64() {
            return Err(PrepError::Format("schema hash does not match embedded schema".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_json(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Label, NumericField};

    fn schema() -> DatasetSchema {
        DatasetSchema {
            entity_field: "card".into(),
            timestamp_field: "ts".into(),
            numericals: vec![
                NumericField { name: "amount".into(), transform: NumericTransform::Zscore },
                NumericField { name: "lat".into(), transform: NumericTransform::Percentile },
            ],
            categoricals: vec!["mcc".into()],
            timestamps: vec!["issue_ts".into()],
        }
    }

    fn ev(id: u64, card: &str, ts: i64, amount: f64, mcc: &str) -> RawEvent {
        RawEvent {
            event_id: id,
            entity_id: card.into(),
            event_ts: ts,
            numericals: vec![("amount".into(), Some(amount)), ("lat".into(), Some(amount * 0.5))],
            categoricals: vec![("mcc".into(), Some(mcc.into()))],
            timestamps: vec![("issue_ts".into(), Some(ts - 1_000_000 * (id as i64 % 7 + 1)))],
            label: Label::Legit,
            scorable: true,
        }
    }

    fn train() -> Vec<RawEvent> {
        (0..200)
            .map(|i| {
                let mcc = ["a", "a", "b", "c"][i % 4];
                ev(i as u64, &format!("c{}", i % 9), 1_000 * i as i64 * 37, (i % 13) as f64, mcc)
            })
            .collect()
    }

    #[test]
    fn layout_matches_output() {
        let p = fit_pipeline(&train(), &schema(), PipelineConfig::default()).unwrap();
        let layout = p.layout();
        let fv = p.apply_event(&train()[3], 60.0).unwrap();
        assert_eq!(fv.dense.len(), layout.n_dense());
        assert_eq!(fv.cat.len(), layout.n_cat());
        assert_eq!(layout.cat_names, vec!["mcc".to_string(), "lat".to_string()]);
        assert_eq!(layout.n_dense(), 1 + 6 + 1 + 1);
        for (c, card) in fv.cat.iter().zip(&layout.cat_cardinalities) {
            assert!((*c as usize) < *card);
        }
    }

    #[test]
    fn apply_is_deterministic() {
        let p = fit_pipeline(&train(), &schema(), PipelineConfig::default()).unwrap();
        let e = &train()[10];
        assert_eq!(p.apply_event(e, 5.0).unwrap(), p.apply_event(e, 5.0).unwrap());
    }

    #[test]
    fn unseen_category_maps_to_overflow() {
        let p = fit_pipeline(&train(), &schema(), PipelineConfig::default()).unwrap();
        let e = ev(999, "new", 5, 1.0, "never-seen");
        let fv = p.apply_event(&e, 1.0).unwrap();
        assert_eq!(fv.cat[0], p.categoricals[0].overflow_index());
    }

    #[test]
    fn degenerate_field_fails_with_its_name() {
        let mut data = train();
        for e in &mut data {
            e.numericals[0].1 = Some(1.0);
        }
        assert_eq!(
            fit_pipeline(&data, &schema(), PipelineConfig::default()).unwrap_err(),
            PrepError::DegenerateDistribution { field: "amount".into() }
        );
    }

    #[test]
    fn unaligned_event_is_rejected() {
        let p = fit_pipeline(&train(), &schema(), PipelineConfig::default()).unwrap();
        let mut e = train()[0].clone();
        e.numericals.swap(0, 1);
        assert!(matches!(p.apply_event(&e, 1.0), Err(PrepError::SchemaMismatch(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = fit_pipeline(&train(), &schema(), PipelineConfig::default()).unwrap();
        let back = FittedPipeline::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn sequence_gaps_feed_delta_slot() {
        let p = fit_pipeline(&train(), &schema(), PipelineConfig::default()).unwrap();
        let seq = vec![ev(1, "x", 100_000, 1.0, "a"), ev(2, "x", 160_000, 1.0, "a")];
        let fvs = p.apply_sequence(&seq).unwrap();
        let last = |fv: &FeatureVector| *fv.dense.last().unwrap();
        assert_eq!(last(&fvs[0]), p.delta_t.apply(Some(2_592_000.0)));
        assert_eq!(last(&fvs[1]), p.delta_t.apply(Some(60.0)));
        let swapped = vec![seq[1].clone(), seq[0].clone()];
        assert!(p.apply_sequence(&swapped).is_err());
    }
}
