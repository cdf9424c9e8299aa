use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use interseq::batch_infer::{plan_store, score_all, DEFAULT_EVENT_BUDGET};
use interseq::metrics::{card_recall_at_alert_budget, fp_rate, money_recall, recall_at_precision, ScoredEvent};
use interseq::model::{read_model_config, ModelConfig, ModelHyper, Precision, Real};
use interseq::schema::read_events;
use interseq::seq::{filter_by_period, sort_by_length_desc, split_fraud, truncate_before};
use interseq::train::{train as fit, Checkpoint, EpochLog, TrainConfig, TrainOptions, ValidationSet};
use interseq::{DatasetSchema, Error, FittedPipeline, Model, SequenceStore};
use serde::Deserialize;

/// A training job; relative paths resolve against the job file's directory.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Job {
    sequences: PathBuf,
    pipeline: PathBuf,
    out_dir: PathBuf,
    /// Training uses events strictly before this epoch-ms timestamp.
    train_end: i64,
    /// Validation scores events in `[train_end, val_end)`.
    val_end: i64,
    #[serde(default)]
    model: ModelHyper,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Job file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Continue from `<out_dir>/checkpoint` when it exists.
    #[arg(long)]
    resume: bool,
}

pub fn train(a: TrainArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&a.config)?;
    let mut job: Job = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    for p in [&mut job.sequences, &mut job.pipeline, &mut job.out_dir] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    job.train.seed = a.seed.unwrap_or(job.train.seed);
    job.train.max_epochs = a.max_epochs.unwrap_or(job.train.max_epochs);
    if job.val_end <= job.train_end {
        return Err(Error::Config("val_end must be after train_end".into()));
    }
    match job.model.precision {
        Precision::F32 => run_job::<f32>(&job, a.resume),
        Precision::F64 => run_job::<f64>(&job, a.resume),
    }
}

fn run_job<F: Real>(job: &Job, resume: bool) -> Result<(), Error> {
    let pipeline = FittedPipeline::load(&job.pipeline)?;
    let all = SequenceStore::load(&job.sequences, Some(pipeline.schema_hash))?;
    let (fraud, clean) = split_fraud(truncate_before(all.clone(), job.train_end));
    let val_store = truncate_before(filter_by_period(all, job.train_end, job.val_end), job.val_end);
    let val = ValidationSet::new(val_store, Some((job.train_end, job.val_end)));

    std::fs::create_dir_all(&job.out_dir)?;
    let ck_dir = job.out_dir.join("checkpoint");
    let log_path = job.out_dir.join("metrics.log");
    let cfg = ModelConfig::from_layout(&pipeline.layout(), &job.model, pipeline.schema_hash);
    let start = if resume && ck_dir.join("optimizer.json").exists() {
        let ck = Checkpoint::<F>::load(&ck_dir)?;
        if ck.model.config != cfg {
            return Err(Error::Config("checkpoint was written for a different model config".into()));
        }
        eprintln!("resuming at epoch {}", ck.next_epoch);
        Some(ck)
    } else {
        if log_path.exists() {
            std::fs::remove_file(&log_path)?;
        }
        None
    };
    let model = Model::<F>::init(cfg, job.train.seed)?;
    let progress = |e: &EpochLog| eprintln!("{}", e.line());
    let opts = TrainOptions {
        metrics_log: Some(&log_path),
        checkpoint_dir: Some(&ck_dir),
        on_epoch: Some(&progress),
        ..Default::default()
    };
    let out = fit(model, &fraud, &clean, &val, &job.train, &opts, start)?;
    out.model.save(job.out_dir.join("model.bin"))?;
    println!("train_fraud_cards={}", fraud.len());
    println!("train_clean_cards={}", clean.len());
    println!("epochs={}", out.history.len());
    println!("best_epoch={}", out.best_epoch);
    println!("best_val_metric={:.6}", out.best_metric);
    println!("stopped_early={}", out.stopped_early);
    Ok(())
}

#[derive(Args)]
pub struct ScoreBatchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    sequences: PathBuf,
    /// Output score file, one JSON object per scorable event.
    #[arg(long)]
    out: PathBuf,
    /// Only emit events at or after this epoch-ms timestamp.
    #[arg(long)]
    from: Option<i64>,
    /// Only emit events before this epoch-ms timestamp.
    #[arg(long)]
    to: Option<i64>,
    /// Events per scoring group.
    #[arg(long, default_value_t = DEFAULT_EVENT_BUDGET)]
    budget: usize,
}

pub fn score_batch(a: ScoreBatchArgs) -> Result<(), Error> {
    if a.budget == 0 {
        return Err(Error::Config("budget must be positive".into()));
    }
    match read_model_config(&a.model)?.precision {
        Precision::F32 => score_with::<f32>(&a),
        Precision::F64 => score_with::<f64>(&a),
    }
}

fn score_with<F: Real>(a: &ScoreBatchArgs) -> Result<(), Error> {
    let model = Model::<F>::load(&a.model, None)?;
    let store = sort_by_length_desc(SequenceStore::load(&a.sequences, Some(model.config.schema_hash))?);
    let plan = plan_store(&store, a.budget);
    let window = match (a.from, a.to) {
        (None, None) => None,
        (f, t) => Some((f.unwrap_or(i64::MIN), t.unwrap_or(i64::MAX))),
    };
    let lines = score_all(&model, &store, &plan, window)?;
    let mut w = BufWriter::new(std::fs::File::create(&a.out)?);
    for l in &lines {
        writeln!(w, "{}", l.to_json_line())?;
    }
    w.flush()?;
    println!("scored={}", lines.len());
    println!("groups={}", plan.groups.len());
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Labelled event file.
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Score file from `score-batch` or `serve`.
    #[arg(long)]
    scores: PathBuf,
    /// Target precision for the recall metric.
    #[arg(long, default_value_t = 0.15)]
    precision: f64,
    /// Decision threshold for FP rate and money recall; defaults to the
    /// threshold that reaches the target precision.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 100)]
    alerts_per_day: usize,
    #[arg(long, default_value = "amount")]
    amount_field: String,
    #[arg(long)]
    from: Option<i64>,
    #[arg(long)]
    to: Option<i64>,
}

#[derive(Deserialize)]
struct ScoreRow {
    event_id: u64,
    score: Option<f64>,
}

fn read_scores(path: &Path) -> Result<HashMap<u64, f64>, Error> {
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: ScoreRow = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
        // Rows for failed events carry no score.
        if let Some(s) = row.score {
            out.insert(row.event_id, s);
        }
    }
    Ok(out)
}

pub fn eval(a: EvalArgs) -> Result<(), Error> {
    let schema = DatasetSchema::load(&a.schema)?;
    let events = read_events(&a.events, &schema)?;
    let scores = read_scores(&a.scores)?;
    let (from, to) = (a.from.unwrap_or(i64::MIN), a.to.unwrap_or(i64::MAX));
    let mut scored = Vec::new();
    let mut unscored = 0usize;
    for e in events.iter().filter(|e| e.scorable && e.label.is_known() && e.event_ts >= from && e.event_ts < to) {
        match scores.get(&e.event_id) {
            Some(&score) => scored.push(ScoredEvent {
                score,
                fraud: e.label.is_fraud(),
                amount: e.numerical(&a.amount_field).unwrap_or(0.0),
                entity_id: e.entity_id.clone(),
                ts: e.event_ts,
            }),
            None => unscored += 1,
        }
    }
    println!("events={}", scored.len());
    println!("unscored={unscored}");
    println!("fraud_events={}", scored.iter().filter(|e| e.fraud).count());
    let rap = recall_at_precision(&scored, a.precision);
    match &rap {
        Ok(r) => {
            println!("recall_at_precision={:.6}", r.recall);
            println!("precision={:.6}", r.precision);
            println!("precision_threshold={:.9}", r.threshold);
        }
        Err(_) => println!("recall_at_precision=0.000000"),
    }
    let threshold = a.threshold.or(rap.ok().map(|r| r.threshold));
    if let Some(t) = threshold {
        println!("threshold={t:.9}");
        // Undefined metrics (no negatives, no fraud) print as "nan".
        match fp_rate(&scored, t) {
            Ok(v) => println!("fp_rate={v:.6}"),
            Err(_) => println!("fp_rate=nan"),
        }
        match money_recall(&scored, t) {
            Ok(m) => {
                println!("money_recall={:.6}", m.recall);
                println!("money_caught={:.2}", m.caught);
                println!("money_total={:.2}", m.total);
            }
            Err(_) => println!("money_recall=nan"),
        }
    }
    println!("card_recall={:.6}", card_recall_at_alert_budget(&scored, a.alerts_per_day));
    Ok(())
}
