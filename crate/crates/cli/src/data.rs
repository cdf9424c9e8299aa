use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use interseq::prep::{fit_pipeline, PipelineConfig};
use interseq::schema::{read_events, write_events};
use interseq::seq::{build_sequences, truncate_before};
use interseq::synth::{generate, synthetic_schema, GenConfig};
use interseq::{DatasetSchema, Error, FittedPipeline};
use serde::Serialize;

use crate::{load_toml, ConfigArg};

#[derive(Args)]
pub struct GenArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    /// Output event file (newline-delimited JSON).
    #[arg(long)]
    out: PathBuf,
    /// Schema sidecar; defaults to `<out>.schema.toml`.
    #[arg(long)]
    schema_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    days: Option<f64>,
}

pub fn gen(a: GenArgs) -> Result<(), Error> {
    let mut cfg: GenConfig = load_toml(a.cfg.config.as_deref())?;
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.n_entities = a.entities.unwrap_or(cfg.n_entities);
    cfg.period_days = a.days.unwrap_or(cfg.period_days);
    let events = generate(&cfg)?;
    let schema = synthetic_schema();
    write_events(&a.out, &events, &schema)?;
    let sidecar = a.schema_out.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".schema.toml");
        p.into()
    });
    schema.save(&sidecar)?;
    let fraud = events.iter().filter(|e| e.label.is_fraud()).count();
    println!("events={}", events.len());
    println!("fraud_events={fraud}");
    println!("schema={}", sidecar.display());
    Ok(())
}

#[derive(Args)]
pub struct PrepFitArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fit only on events strictly before this epoch-ms timestamp.
    #[arg(long)]
    before: Option<i64>,
}

pub fn prep_fit(a: PrepFitArgs) -> Result<(), Error> {
    let cfg: PipelineConfig = load_toml(a.cfg.config.as_deref())?;
    let schema = DatasetSchema::load(&a.schema)?;
    let mut events = read_events(&a.events, &schema)?;
    if let Some(t) = a.before {
        events.retain(|e| e.event_ts < t);
    }
    let p = fit_pipeline(&events, &schema, cfg)?;
    p.save(&a.out)?;
    println!("fitted_events={}", events.len());
    println!("schema_hash={:#018x}", p.schema_hash);
    Ok(())
}

#[derive(Args)]
pub struct PrepApplyArgs {
    #[arg(long)]
    pipeline: PathBuf,
    #[arg(long)]
    events: PathBuf,
    /// Output feature file, one JSON object per event in input order.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    event_id: u64,
    entity_id: &'a str,
    ts: i64,
    dense: &'a [f64],
    cat: &'a [u32],
}

pub fn prep_apply(a: PrepApplyArgs) -> Result<(), Error> {
    let p = FittedPipeline::load(&a.pipeline)?;
    let events = read_events(&a.events, &p.schema)?;
    let mut prev: HashMap<&str, i64> = HashMap::new();
    let mut w = BufWriter::new(std::fs::File::create(&a.out)?);
    for e in &events {
        let gap = p.gap_secs(prev.get(e.entity_id.as_str()).copied(), e.event_ts)?;
        prev.insert(&e.entity_id, e.event_ts);
        let fv = p.apply_event(e, gap)?;
        let line = FeatureLine { event_id: e.event_id, entity_id: &e.entity_id, ts: e.event_ts, dense: &fv.dense, cat: &fv.cat };
        serde_json::to_writer(&mut w, &line).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("events={}", events.len());
    Ok(())
}

#[derive(Args)]
pub struct BuildSeqArgs {
    #[arg(long)]
    pipeline: PathBuf,
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop events at or after this epoch-ms timestamp.
    #[arg(long)]
    before: Option<i64>,
}

pub fn build_seq(a: BuildSeqArgs) -> Result<(), Error> {
    let p = FittedPipeline::load(&a.pipeline)?;
    let events = read_events(&a.events, &p.schema)?;
    let mut store = build_sequences(events, &p)?;
    if let Some(t) = a.before {
        store = truncate_before(store, t);
    }
    store.save(&a.out)?;
    println!("sequences={}", store.len());
    println!("events={}", store.n_events());
    println!("fraud_sequences={}", store.records.iter().filter(|r| r.has_fraud).count());
    Ok(())
}
