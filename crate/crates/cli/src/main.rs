use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use enroll_core::aligner::{heatmap_rows, write_heatmap_csv};
use enroll_core::datamodel::{jsonl_string, Dataset, LabeledExample, SplitName};
use enroll_core::matcher::MatchRecord;
use enroll_core::model::{hypothesis_row_ids, ModelConfig};
use enroll_core::nir::Nir;
use enroll_core::pipeline::{self, RunConfig, Trained, LOG_FILE};
use enroll_core::synthgen::{gen_dataset, GenConfig};
use enroll_core::trainer::{majority_baseline, write_log_csv, TrainConfig};
use enroll_core::{EnrollError, Result};

#[derive(Parser, Debug)]
#[command(name = "enroll", version, about = "Patient-trial matching with quantity-aware entailment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with oracle labels.
    GenData(GenArgs),
    /// Train a model and write its checkpoint directory.
    Train(TrainArgs),
    /// Score a split and print a metrics report as JSON.
    Eval(EvalArgs),
    /// Write per-example match decisions as JSONL.
    Match(EvalArgs),
    /// Export attention heatmaps for (trial, patient) pairs as CSV.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    /// Flat `key = value` generator config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    numeric_fraction: Option<f64>,
    #[arg(long)]
    units: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, model spec and training log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Global gradient-norm cap per batch.
    #[arg(long, conflicts_with = "no_clip")]
    clip_norm: Option<f64>,
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    code_dim: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Init std of weight matrices (default: scaled by fan-in).
    #[arg(long)]
    init_std: Option<f64>,
    /// Init std of token and code embedding tables.
    #[arg(long)]
    embedding_std: Option<f64>,
    #[arg(long)]
    units: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Use the neural label alone, without quantity reasoning.
    #[arg(long)]
    no_nir: bool,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    units: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `TRIAL_ID:PATIENT_ID`, repeatable.
    #[arg(long = "pair", required = true, value_parser = parse_pair)]
    pairs: Vec<(String, String)>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    units: Option<PathBuf>,
}

fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once(':') {
        Some((t, p)) if !t.is_empty() && !p.is_empty() => Ok((t.to_string(), p.to_string())),
        _ => Err(format!("expected TRIAL_ID:PATIENT_ID, got `{s}`")),
    }
}

fn nir(units: Option<&Path>) -> Result<Nir> {
    match units {
        Some(p) => Nir::with_unit_file(p),
        None => Ok(Nir::default()),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| EnrollError::io(p, e))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = output(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| EnrollError::io(path.unwrap_or(Path::new("<stdout>")), e))
}

fn announce<T: serde::Serialize>(what: &str, cfg: &T) -> Result<()> {
    eprintln!("{what} config: {}", serde_json::to_string(cfg)?);
    Ok(())
}

fn gen_data(a: &GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => GenConfig::load(p)?,
        None => GenConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.trials = a.trials.unwrap_or(cfg.trials);
    cfg.patients = a.patients.unwrap_or(cfg.patients);
    cfg.numeric_fraction = a.numeric_fraction.unwrap_or(cfg.numeric_fraction);
    announce("gen-data", &cfg)?;
    let nir = nir(a.units.as_deref())?;
    let g = gen_dataset(&cfg, &nir.units)?;
    g.dataset.save(&a.out)?;
    let cfg_path = a.out.join("gen_config.toml");
    std::fs::write(&cfg_path, cfg.to_kv_string()).map_err(|e| EnrollError::io(&cfg_path, e))?;
    let mut hist = [0usize; 3];
    for e in &g.dataset.examples {
        hist[e.label.index()] += 1;
    }
    eprintln!(
        "wrote {} trials, {} patients, {} examples (E/C/N = {}/{}/{}) to {}",
        g.dataset.trials.len(),
        g.dataset.patients.len(),
        g.dataset.examples.len(),
        hist[0],
        hist[1],
        hist[2],
        a.out.display()
    );
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut run = RunConfig::default();
    let t: &mut TrainConfig = &mut run.train;
    t.seed = a.seed.unwrap_or(t.seed);
    t.max_epochs = a.epochs.unwrap_or(t.max_epochs);
    t.lr0 = a.lr.unwrap_or(t.lr0);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.dropout = a.dropout.unwrap_or(t.dropout);
    t.clip_norm = if a.no_clip { None } else { a.clip_norm.or(t.clip_norm) };
    let m: &mut ModelConfig = &mut run.model;
    m.embed_dim = a.embed_dim.unwrap_or(m.embed_dim);
    m.code_dim = a.code_dim.unwrap_or(m.code_dim);
    m.hidden = a.hidden.unwrap_or(m.hidden);
    m.init_std = a.init_std.or(m.init_std);
    m.embedding_std = a.embedding_std.unwrap_or(m.embedding_std);
    announce("train", &run)?;

    let nir = nir(a.units.as_deref())?;
    let ds = Dataset::load(&a.data, &nir.units)?;
    let outcome = pipeline::train(&ds, &run, |e| {
        eprintln!(
            "epoch {:>2}  loss {:.4}  dev_acc {:.4}  lr {:e}",
            e.epoch, e.loss, e.dev_accuracy, e.lr
        )
    })?;
    outcome.trained.save(&a.out)?;
    let log_path = a.out.join(LOG_FILE);
    let f = File::create(&log_path).map_err(|e| EnrollError::io(&log_path, e))?;
    write_log_csv(&outcome.log, BufWriter::new(f))?;
    if let (Some(epoch), Some(acc)) = (outcome.best_epoch, outcome.best_dev_accuracy) {
        eprintln!("best epoch {epoch} (dev accuracy {acc:.4}); saved to {}", a.out.display());
    }
    Ok(())
}

fn select(trained: &Trained, ds: &Dataset, split: Split) -> Result<Vec<LabeledExample>> {
    let name = match split {
        Split::All => return Ok(ds.examples.clone()),
        Split::Train => SplitName::Train,
        Split::Validation => SplitName::Validation,
        Split::Test => SplitName::Test,
    };
    Ok(trained.splits(ds)?.get(name).to_vec())
}

fn load(a: &EvalArgs) -> Result<(Nir, Dataset, Trained)> {
    let nir = nir(a.units.as_deref())?;
    let ds = Dataset::load(&a.data, &nir.units)?;
    let trained = Trained::load(&a.checkpoint)?;
    announce("model", &trained.run)?;
    eprintln!("split {:?}, nir {}", a.split, if a.no_nir { "off" } else { "on" });
    Ok((nir, ds, trained))
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (nir, ds, trained) = load(a)?;
    let examples = select(&trained, &ds, a.split)?;
    let (_, report) = pipeline::score(&trained, &nir, &ds, &examples, !a.no_nir)?;
    let train_labels: Vec<_> = trained.splits(&ds)?.train.iter().map(|e| e.label).collect();
    let gold: Vec<_> = examples.iter().map(|e| e.label).collect();
    eprintln!(
        "micro-F1 {:.4}  majority baseline {:.4}",
        report.micro_f1,
        majority_baseline(&train_labels, &gold)?
    );
    write_text(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn match_cmd(a: &EvalArgs) -> Result<()> {
    let (nir, ds, trained) = load(a)?;
    let mut examples = select(&trained, &ds, a.split)?;
    examples.sort_by(|x, y| {
        (&x.trial_id, &x.patient_id, &x.statement_ids).cmp(&(&y.trial_id, &y.patient_id, &y.statement_ids))
    });
    let (results, _) = pipeline::score(&trained, &nir, &ds, &examples, !a.no_nir)?;
    let records: Vec<MatchRecord> = results.iter().map(MatchRecord::from).collect();
    write_text(a.out.as_deref(), &jsonl_string(&records)?)
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let nir = nir(a.units.as_deref())?;
    let ds = Dataset::load(&a.data, &nir.units)?;
    let trained = Trained::load(&a.checkpoint)?;
    announce("model", &trained.run)?;
    let mut rows = Vec::new();
    for (tid, pid) in &a.pairs {
        let trial = ds
            .trial(tid)
            .ok_or_else(|| EnrollError::Validation(format!("unknown trial `{tid}`")))?;
        let patient = ds
            .patient(pid)
            .ok_or_else(|| EnrollError::Validation(format!("unknown patient `{pid}`")))?;
        let statements: Vec<_> = trial.statements.iter().collect();
        let p = trained.model.predict(&trained.params, tid, &statements, patient)?;
        let ids: Vec<String> = trial.statements.iter().map(|s| s.id.clone()).collect();
        rows.extend(heatmap_rows(tid, &ids, pid, &hypothesis_row_ids(patient), &p.weights)?);
    }
    let w = output(a.out.as_deref())?;
    write_heatmap_csv(&rows, w)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ENROLL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| EnrollError::Config(format!("ENROLL_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| EnrollError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Match(a) => match_cmd(a),
        Command::Explain(a) => explain(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                EnrollError::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
