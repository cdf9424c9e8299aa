use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use crossbeam_channel::unbounded;
use interseq::batch_infer::sig9;
use interseq::model::{read_model_config, Precision, Real};
use interseq::schema::{parse_event_line, read_events};
use interseq::state::{StoreConfig, MS_PER_DAY};
use interseq::stream::{repeat_shifted, run_bench, BenchConfig, StreamConfig, StreamOutput};
use interseq::synth::{generate, GenConfig};
use interseq::{DatasetSchema, Error, FittedPipeline, Model, StateStore, StreamEngine, StreamingContext};
use serde::Deserialize;

use crate::{load_toml, ConfigArg};

/// `serve` and `bench` settings file.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct OnlineConfig {
    stream: StreamConfig,
    store: StoreConfig,
    /// Events between durable checkpoints (and expiry passes).
    checkpoint_every: u64,
    bench: BenchConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            stream: StreamConfig::default(),
            store: StoreConfig::default(),
            checkpoint_every: 10_000,
            bench: BenchConfig::default(),
        }
    }
}

fn context<F: Real>(model: &Path, pipeline: &Path, store: &Path, cfg: &OnlineConfig) -> Result<Arc<StreamingContext<F>>, Error> {
    let model = Model::<F>::load(model, None)?;
    let pipeline = FittedPipeline::load(pipeline)?;
    let store = Arc::new(StateStore::open(store, cfg.store.clone())?);
    let r = store.recovery_report();
    if r.corrupt_skipped > 0 || r.discarded_bytes > 0 {
        eprintln!("store recovery: {} corrupt records skipped, {} bytes discarded", r.corrupt_skipped, r.discarded_bytes);
    }
    Ok(Arc::new(StreamingContext::new(pipeline, model, store, cfg.stream.clone())?))
}

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pipeline: PathBuf,
    /// State store log; created when missing.
    #[arg(long)]
    store: PathBuf,
    /// Event lines to score; `-` reads stdin.
    #[arg(long, default_value = "-", conflicts_with = "listen")]
    input: String,
    /// Score lines to write; stdout when omitted.
    #[arg(long, conflicts_with = "listen")]
    out: Option<PathBuf>,
    /// Serve newline-delimited events over TCP instead, one connection at a time.
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Skip the events the store's watermark says were already applied.
    #[arg(long, conflicts_with = "listen")]
    resume: bool,
}

pub fn serve(a: ServeArgs) -> Result<(), Error> {
    let mut cfg: OnlineConfig = load_toml(a.cfg.config.as_deref())?;
    if let Some(t) = a.threshold {
        cfg.stream.threshold = t;
    }
    if cfg.checkpoint_every == 0 {
        return Err(Error::Config("checkpoint_every must be positive".into()));
    }
    match read_model_config(&a.model)?.precision {
        Precision::F32 => serve_with::<f32>(&a, &cfg),
        Precision::F64 => serve_with::<f64>(&a, &cfg),
    }
}

fn serve_with<F: Real>(a: &ServeArgs, cfg: &OnlineConfig) -> Result<(), Error> {
    let ctx = context::<F>(&a.model, &a.pipeline, &a.store, cfg)?;
    let schema = ctx.pipeline().schema.clone();
    let result = match &a.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            loop {
                let (conn, peer) = listener.accept()?;
                let reader = BufReader::new(conn.try_clone()?);
                match pump(&ctx, &schema, reader, conn, 0, cfg.checkpoint_every, false) {
                    Ok(s) => eprintln!("{peer}: {}", s.line()),
                    Err(e) => eprintln!("{peer}: {e}"),
                }
            }
        }
        None => {
            let skip = if a.resume { ctx.store().watermark().unwrap_or(0) } else { 0 };
            let input: Box<dyn BufRead> = if a.input == "-" {
                Box::new(std::io::stdin().lock())
            } else {
                Box::new(BufReader::new(std::fs::File::open(&a.input)?))
            };
            let output: Box<dyn Write + Send> = match &a.out {
                Some(p) => Box::new(std::fs::File::create(p)?),
                None => Box::new(std::io::stdout()),
            };
            pump(&ctx, &schema, input, output, skip, cfg.checkpoint_every, true)
        }
    };
    ctx.shutdown()?;
    eprintln!("{}", result?.line());
    Ok(())
}

#[derive(Default)]
struct ServeStats {
    skipped: u64,
    scored: u64,
    blocked: u64,
    rejected: u64,
}

impl ServeStats {
    fn line(&self) -> String {
        format!("skipped={} scored={} blocked={} rejected={}", self.skipped, self.scored, self.blocked, self.rejected)
    }
}

fn output_line(o: &StreamOutput) -> String {
    match &o.result {
        Ok(s) => {
            let decision = match s.block {
                Some(true) => "\"block\"",
                Some(false) => "\"allow\"",
                None => "null",
            };
            format!(
                "{{\"event_id\":{},\"score\":{},\"decision\":{decision},\"latency_us\":{:.1}}}",
                o.event_id,
                sig9(s.score),
                o.latency_us
            )
        }
        Err(e) => format!("{{\"event_id\":{},\"error\":{}}}", o.event_id, serde_json::Value::String(e.clone())),
    }
}

/// Scores every event line of `input`, writing results in input order.
/// The first `skip` valid events are taken as already applied. Every
/// `every` events the engine drains, the store commits (recording the
/// replay watermark when `watermark` is set) and idle entities expire
/// against the latest event time seen.
fn pump<F: Real>(
    ctx: &Arc<StreamingContext<F>>,
    schema: &DatasetSchema,
    input: impl BufRead,
    output: impl Write + Send,
    skip: u64,
    every: u64,
    watermark: bool,
) -> Result<ServeStats, Error> {
    let (tx, rx) = unbounded::<StreamOutput>();
    let mut engine = StreamEngine::new(Arc::clone(ctx), Some(tx))?;
    let mut stats = ServeStats { skipped: 0, ..Default::default() };
    let mut latest = i64::MIN;
    let (blocked, written) = std::thread::scope(|s| -> Result<(u64, u64), Error> {
        let writer = s.spawn(move || -> std::io::Result<(u64, u64)> {
            let mut w = BufWriter::new(output);
            let mut held = BTreeMap::new();
            let (mut next, mut blocked) = (0u64, 0u64);
            for o in rx.iter() {
                held.insert(o.position, o);
                while let Some(o) = held.remove(&next) {
                    blocked += matches!(o.result, Ok(r) if r.block == Some(true)) as u64;
                    writeln!(w, "{}", output_line(&o))?;
                    next += 1;
                }
                if rx.is_empty() {
                    w.flush()?;
                }
            }
            w.flush()?;
            Ok((blocked, next))
        });
        let fed = (|| -> Result<(), Error> {
            for (i, line) in input.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e = match parse_event_line(&line, schema, i as u64) {
                    Ok(e) => e,
                    Err(err) => {
                        eprintln!("line {}: {err}", i + 1);
                        stats.rejected += 1;
                        continue;
                    }
                };
                if stats.skipped < skip {
                    stats.skipped += 1;
                    continue;
                }
                latest = latest.max(e.event_ts);
                engine.submit(e)?;
                if engine.submitted() % every == 0 {
                    commit(&engine, skip, watermark, latest)?;
                }
            }
            commit(&engine, skip, watermark, latest)
        })();
        drop(engine);
        let out = writer.join().expect("writer thread panicked")?;
        fed.map(|_| out)
    })?;
    stats.scored = written;
    stats.blocked = blocked;
    Ok(stats)
}

fn commit<F: Real>(engine: &StreamEngine<F>, skip: u64, watermark: bool, latest: i64) -> Result<(), Error> {
    engine.barrier()?;
    let ctx = engine.context();
    ctx.flush_writer(watermark.then_some(skip + engine.submitted()))?;
    if latest > i64::MIN {
        ctx.expiry_tick(latest)?;
    }
    Ok(())
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    cfg: ConfigArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pipeline: PathBuf,
    /// Scratch state store log.
    #[arg(long)]
    store: PathBuf,
    /// Events to replay; synthetic events when omitted.
    #[arg(long)]
    events: Option<PathBuf>,
    /// Events per second.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Also write the latency table here.
    #[arg(long)]
    report: Option<PathBuf>,
}

pub fn bench(a: BenchArgs) -> Result<(), Error> {
    let mut cfg: OnlineConfig = load_toml(a.cfg.config.as_deref())?;
    cfg.bench.rate = a.rate.unwrap_or(cfg.bench.rate);
    cfg.bench.duration_secs = a.duration.unwrap_or(cfg.bench.duration_secs);
    match read_model_config(&a.model)?.precision {
        Precision::F32 => bench_with::<f32>(&a, &cfg),
        Precision::F64 => bench_with::<f64>(&a, &cfg),
    }
}

fn bench_with<F: Real>(a: &BenchArgs, cfg: &OnlineConfig) -> Result<(), Error> {
    let ctx = context::<F>(&a.model, &a.pipeline, &a.store, cfg)?;
    let base = match &a.events {
        Some(p) => read_events(p, &ctx.pipeline().schema)?,
        None => generate(&GenConfig { n_entities: 2000, period_days: 30.0, ..Default::default() })?,
    };
    let n = (cfg.bench.rate * cfg.bench.duration_secs).round() as usize;
    let mut engine = StreamEngine::new(Arc::clone(&ctx), None)?;
    let report = run_bench(&mut engine, repeat_shifted(&base, n), &cfg.bench);
    drop(engine);
    ctx.shutdown()?;
    let report = report?;
    let table = report.table();
    print!("{table}");
    println!("events={}", report.events);
    println!("elapsed_secs={:.3}", report.elapsed.as_secs_f64());
    println!("max_queue_depth={}", report.max_queue_depth);
    println!("max_lane_backlog={}", report.max_lane_backlog);
    println!("max_lag_ms={:.3}", report.max_lag.as_secs_f64() * 1e3);
    if let Some(p) = &a.report {
        std::fs::write(p, table)?;
    }
    Ok(())
}

fn open_existing(path: &Path, cfg: StoreConfig) -> Result<StateStore, Error> {
    if !path.exists() {
        return Err(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{}: no such store", path.display())).into());
    }
    Ok(StateStore::open(path, cfg)?)
}

#[derive(Args)]
pub struct ExpireArgs {
    #[arg(long)]
    store: PathBuf,
    /// Current time, epoch ms.
    #[arg(long)]
    now: i64,
    #[arg(long, default_value_t = 90)]
    ttl_days: i64,
    #[arg(long)]
    max_bytes: Option<u64>,
}

pub fn expire(a: ExpireArgs) -> Result<(), Error> {
    let store = open_existing(&a.store, StoreConfig::default())?;
    let max_bytes = a.max_bytes.unwrap_or(store.config().max_bytes);
    let gone = store.expire(a.now, a.ttl_days * MS_PER_DAY, max_bytes)?;
    store.close()?;
    println!("expired={}", gone.len());
    println!("live_keys={}", store.len());
    println!("live_bytes={}", store.live_bytes());
    Ok(())
}

#[derive(Args)]
pub struct CompactArgs {
    #[arg(long)]
    store: PathBuf,
}

pub fn compact(a: CompactArgs) -> Result<(), Error> {
    let store = open_existing(&a.store, StoreConfig::default())?;
    let s = store.compact()?;
    store.close()?;
    println!("records_before={}", s.records_before);
    println!("records_after={}", s.records_after);
    println!("bytes_before={}", s.bytes_before);
    println!("bytes_after={}", s.bytes_after);
    println!("corrupt_dropped={}", s.corrupt_dropped);
    Ok(())
}
