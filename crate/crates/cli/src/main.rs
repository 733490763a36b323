//! `negres`: corpus generation, preprocessing, training, evaluation and
//! threshold sweeps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration
//! error.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use negres::autodiff::Checkpoint;
use negres::dataset::{
    class_counts, format_corpus_csv, format_unlabeled_csv, generate_corpus, read_corpus, LabeledBeat,
};
use negres::evaluation::{confidence_sweep, format_sweep_csv, write_report, MetricsReport};
use negres::experiment::{build_model, make_splits, run_on_splits, ExperimentConfig};
use negres::label::{Label, Taxonomy};
use negres::model::Network;
use negres::signal::{extract_beats, io::read_trace};
use negres::training::{format_history_csv, predict_indices};
use negres::write_atomic;

#[derive(Parser)]
#[command(
    name = "negres",
    version,
    about = "Confidence-routed positive/negative learning on ECG beats"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic beat corpus.
    Synth(Overrides),
    /// Cut normalized, unlabeled beats out of raw trace files.
    Preprocess {
        /// Trace files: `.csv` text or raw little-endian binary.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a corpus with injected label noise and test on clean labels.
    Train(Overrides),
    /// Score a checkpoint against a corpus's clean labels.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One training run per confidence threshold.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated thresholds; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Global routing threshold.
    #[arg(long)]
    tau: Option<f64>,
    /// Symmetric label-noise rate.
    #[arg(long = "noise-rate")]
    noise_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Pure positive learning: warmup lasts the whole run.
    #[arg(long)]
    baseline: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Labeled corpus CSV; `train` and `sweep` generate one when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

const DEFAULT_OUT: &str = "negres-out";
const CONFIG_ECHO: &str = "config.json";

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<negres::Error> for Failure {
    fn from(e: negres::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(o) => synth(&o),
        Command::Preprocess { traces, out } => preprocess(&traces, out),
        Command::Train(o) => train(&o),
        Command::Eval { overrides, checkpoint } => eval(&overrides, &checkpoint),
        Command::Sweep { overrides, taus } => sweep(&overrides, taus),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("negres: {f}");
            ExitCode::from(match f {
                Failure::Usage(_) => 2,
                Failure::Runtime(_) => 1,
            })
        }
    }
}

fn effective_config(o: &Overrides) -> Outcome<ExperimentConfig> {
    let mut cfg = match &o.config {
        Some(p) if !p.is_file() => return Err(Failure::Usage(format!("config file {} not found", p.display()))),
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(t) = o.tau {
        cfg.train.routing.tau = t;
    }
    if let Some(r) = o.noise_rate {
        cfg.noise.rate = r;
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if o.baseline {
        cfg.train = cfg.train.baseline();
    }
    if let Some(d) = &o.out {
        cfg.paths.out = Some(d.clone());
    }
    if let Some(c) = &o.corpus {
        cfg.paths.corpus = Some(c.clone());
    }
    cfg.paths.out.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT));
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn write(path: &Path, text: &str) -> Outcome {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn echo_config(cfg: &ExperimentConfig) -> Outcome {
    write(&out_dir(cfg).join(CONFIG_ECHO), &cfg.to_json()?)
}

fn load_corpus(cfg: &ExperimentConfig) -> Outcome<Vec<LabeledBeat>> {
    match &cfg.paths.corpus {
        Some(p) if !p.is_file() => Err(Failure::Usage(format!("corpus {} not found", p.display()))),
        Some(p) => Ok(read_corpus(p)?),
        None => Ok(generate_corpus(&cfg.corpus)?),
    }
}

fn print_counts(beats: &[LabeledBeat]) {
    let counts = class_counts(beats, Taxonomy::Full);
    let parts: Vec<String> = counts
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(l, n)| format!("{l} {n}"))
        .collect();
    println!("{} beats: {}", beats.len(), parts.join(", "));
}

fn synth(o: &Overrides) -> Outcome {
    let cfg = effective_config(o)?;
    let beats = generate_corpus(&cfg.corpus)?;
    let path = out_dir(&cfg).join("corpus.csv");
    write(&path, &format_corpus_csv(&beats))?;
    echo_config(&cfg)?;
    print_counts(&beats);
    println!("wrote {}", path.display());
    Ok(())
}

fn preprocess(traces: &[PathBuf], out: Option<PathBuf>) -> Outcome {
    let mut rows = Vec::new();
    for path in traces {
        if !path.is_file() {
            return Err(Failure::Usage(format!("trace {} not found", path.display())));
        }
        let trace = read_trace(path).map_err(|e| match e {
            negres::Error::Parse { .. } => Failure::Usage(format!("{}: {e}", path.display())),
            e => e.into(),
        })?;
        if trace.is_empty() {
            eprintln!("negres: warning: {} holds no samples", path.display());
            continue;
        }
        let beats = extract_beats(&trace);
        if beats.is_empty() {
            eprintln!("negres: warning: no complete beats found in {}", path.display());
        }
        rows.extend(beats.into_iter().map(|b| (trace.patient_id.clone(), b)));
    }
    let path = out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)).join("corpus.csv");
    write(&path, &format_unlabeled_csv(&rows))?;
    println!(
        "{} beats from {} traces, wrote {}",
        rows.len(),
        traces.len(),
        path.display()
    );
    Ok(())
}

fn train(o: &Overrides) -> Outcome {
    let cfg = effective_config(o)?;
    let beats = load_corpus(&cfg)?;
    let splits = make_splits(&cfg, &beats, None)?;
    eprintln!(
        "train {} / validation {} / test {} beats, {:.1}% of eligible training labels flipped",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        100.0 * splits.noise.flip_fraction()
    );
    let run = run_on_splits(&cfg, &splits, &mut |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  pl {:.4}  nl {:.4}  noisy {:.3}  val {:.4}",
            r.epoch, r.train_loss, r.pl_loss, r.nl_loss, r.noisy_fraction, r.val_accuracy
        )
    })?;
    let dir = out_dir(&cfg);
    let ckpt_dir = cfg.paths.checkpoint.clone().unwrap_or_else(|| dir.join("checkpoint"));
    run.checkpoint.save(&ckpt_dir)?;
    write(&dir.join("history.csv"), &format_history_csv(run.history()))?;
    write_report(&dir, &run.test)?;
    echo_config(&cfg)?;
    println!(
        "best epoch {} (validation {:.4}); clean test accuracy {:.4}",
        run.outcome.best_epoch, run.outcome.best_val_accuracy, run.test.accuracy
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(o: &Overrides, checkpoint: &Path) -> Outcome {
    let mut cfg = effective_config(o)?;
    if !checkpoint.is_dir() {
        return Err(Failure::Usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    // With a config the checkpoint must match its network; without one the
    // architecture and class space come from the checkpoint itself.
    let (model, tax) = if o.config.is_some() {
        let mut m: Network<f64> = build_model(&cfg)?;
        m.load_checkpoint(&ckpt)?;
        (m, cfg.train.taxonomy)
    } else {
        let m: Network<f64> = Network::from_checkpoint(&ckpt)?;
        let tax = if m.n_classes() == Taxonomy::Merged.len() {
            Taxonomy::Merged
        } else {
            Taxonomy::Full
        };
        (m, tax)
    };
    if cfg.paths.corpus.is_none() {
        return Err(Failure::Usage("eval needs --corpus or paths.corpus".into()));
    }
    let beats = load_corpus(&cfg)?;
    let preds = predict_indices(&model, &beats)?
        .into_iter()
        .map(|i| tax.label(i))
        .collect::<negres::Result<Vec<Label>>>()?;
    let truths: Vec<Label> = beats.iter().map(|b| b.clean_label.unwrap_or(b.given_label)).collect();
    let report = MetricsReport::from_predictions(&preds, &truths)?;
    cfg.paths.checkpoint = Some(checkpoint.to_path_buf());
    let dir = out_dir(&cfg);
    write_report(&dir, &report)?;
    echo_config(&cfg)?;
    println!(
        "accuracy {:.4} on {} beats; wrote {}",
        report.accuracy,
        beats.len(),
        dir.display()
    );
    Ok(())
}

fn sweep(o: &Overrides, taus: Option<Vec<f64>>) -> Outcome {
    let mut cfg = effective_config(o)?;
    if let Some(t) = taus {
        cfg.eval.taus = t;
        cfg.validate()?;
    }
    let beats = load_corpus(&cfg)?;
    let rows = confidence_sweep(&cfg, &beats, &cfg.eval.taus)?;
    for (tau, acc) in &rows {
        eprintln!("tau {tau}: clean test accuracy {acc:.4}");
    }
    let dir = out_dir(&cfg);
    write(&dir.join("sweep.csv"), &format_sweep_csv(&rows))?;
    echo_config(&cfg)?;
    println!("wrote {}", dir.join("sweep.csv").display());
    Ok(())
}
