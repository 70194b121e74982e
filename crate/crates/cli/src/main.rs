mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sleep_ssl::contrastive::ContrastiveError;
use sleep_ssl::nn::{load_checkpoint, write_checkpoint, ModelConfig, NnError, Parameters};
use sleep_ssl::signal_io::{
    extract_epochs, parse_edf, parse_hypnogram, read_dataset, write_dataset, EpochDataset, HypnogramSource,
};
use sleep_ssl::synthetic::{generate, SynthSpec};
use sleep_ssl::training::{
    export_embeddings, finetune, limited_sample_experiment, linear_eval, pretrain, split_dataset, EpochLog, TrainError,
};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "sleep-ssl", version, about = "Contrastive self-supervised EEG sleep staging")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Cut EDF recordings into labeled epochs and write a dataset cache.
    Ingest {
        /// EDF signal files.
        #[arg(long = "edf", required = true)]
        edf: Vec<PathBuf>,
        /// Hypnograms (EDF+ annotation files or text), one per signal file.
        #[arg(long = "hypnogram", required = true)]
        hypnogram: Vec<PathBuf>,
        /// Overrides `data.channel`.
        #[arg(long)]
        channel: Option<String>,
        /// Cache path; defaults to `<out>/dataset.bin`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Generate a labeled synthetic dataset cache.
    Synth {
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 10)]
        records: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
        /// Cache path; defaults to `<out>/synth.bin`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Contrastive pretraining; writes `checkpoint.bin` and `train.log`.
    Pretrain,
    /// Frozen-backbone evaluation; writes `metrics_linear.json`.
    LinearEval,
    /// Full fine-tuning; writes `metrics_finetune.json`.
    Finetune,
    /// Limited-labeled-sample study; writes `limited_k<k>.json`.
    Limited {
        /// Overrides `split.k_per_class`.
        #[arg(long)]
        k: Option<usize>,
        /// Overrides `split.repetitions`.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Write eval-mode embeddings of the dataset as TSV.
    ExportEmbeddings {
        /// Output path; defaults to `<out>/embeddings.tsv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numeric(_) => 4,
        }
    }
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite
            | NnError::Contrastive(ContrastiveError::ZeroNormVector { .. } | ContrastiveError::NonFinite { .. }) => {
                Self::Numeric(e.to_string())
            }
            NnError::InvalidConfig(m) => Self::Config(m),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Nn(inner) => inner.into(),
            TrainError::NonFinite { .. } => Self::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::Transform(_) => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

/// Writes through a temporary sibling file and renames it into place.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut w = io::BufWriter::new(File::create(&tmp).map_err(|e| data_err(&tmp, e))?);
        fill(&mut w)?;
        w.flush().map_err(|e| data_err(&tmp, e))?;
        drop(w);
        fs::rename(&tmp, path).map_err(|e| data_err(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| data_err(path, e)))
}

fn load_dataset(path: &Path) -> Result<EpochDataset, CliError> {
    let f = File::open(path).map_err(|e| data_err(path, e))?;
    read_dataset(BufReader::new(f)).map_err(|e| data_err(path, e))
}

fn load_config(global: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_text(&text)
                .map_err(|errs| CliError::Config(format!("{}:\n  {}", path.display(), errs.join("\n  "))))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn labeled(&self) -> Result<(PathBuf, EpochDataset), CliError> {
        let path = self.cfg.dataset.clone().ok_or_else(|| CliError::Config("`data.cache` is not set".into()))?;
        let data = load_dataset(&path)?;
        Ok((path, data))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.cfg.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint.bin"))
    }

    fn checkpoint(&self) -> Result<(ModelConfig, Parameters<f32>), CliError> {
        let path = self.checkpoint_path();
        let (model, params) = load_checkpoint(&path).map_err(|e| data_err(&path, e))?;
        if model != self.cfg.model {
            return Err(data_err(
                &path,
                format!("checkpoint model differs from the configured one:\n{}", model.to_canonical_text()),
            ));
        }
        Ok((model, params))
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
        write_text(&path, &(text + "\n"))?;
        Ok(path)
    }
}

fn log_line(lines: &mut String) -> impl FnMut(&EpochLog) + '_ {
    move |entry| {
        eprintln!("{entry}");
        lines.push_str(&entry.to_string());
        lines.push('\n');
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli.global)?;
    let out = cli.global.out.clone();
    fs::create_dir_all(&out).map_err(|e| data_err(&out, e))?;
    write_text(&out.join("config.resolved"), &cfg.to_text())?;
    let run = Run { cfg, out };
    let cfg = &run.cfg;
    match cli.command {
        Command::Ingest { edf, hypnogram, channel, cache } => {
            if edf.len() != hypnogram.len() {
                return Err(CliError::Config(format!("{} EDF files but {} hypnograms", edf.len(), hypnogram.len())));
            }
            let channel = channel.unwrap_or_else(|| cfg.channel.clone());
            let mut parts = Vec::new();
            for (sig, hyp) in edf.iter().zip(&hypnogram) {
                let bytes = fs::read(sig).map_err(|e| data_err(sig, e))?;
                let record = parse_edf(&bytes).map_err(|e| data_err(sig, e))?;
                let hyp_bytes = fs::read(hyp).map_err(|e| data_err(hyp, e))?;
                let entries = if hyp_bytes.starts_with(b"0       ") {
                    let hyp_record = parse_edf(&hyp_bytes).map_err(|e| data_err(hyp, e))?;
                    parse_hypnogram(HypnogramSource::Tal(&hyp_record.annotation_bytes()))
                } else {
                    let text = String::from_utf8(hyp_bytes).map_err(|e| data_err(hyp, e))?;
                    parse_hypnogram(HypnogramSource::Text(&text))
                }
                .map_err(|e| data_err(hyp, e))?;
                let source = sig.file_stem().map_or_else(|| "record".into(), |s| s.to_string_lossy().into_owned());
                let part = extract_epochs(&record, &entries, &channel, cfg.epoch_seconds, &source)
                    .map_err(|e| data_err(sig, e))?;
                parts.push(part);
            }
            let data = EpochDataset::merge(parts);
            let path = cache.unwrap_or_else(|| run.out.join("dataset.bin"));
            write_atomic(&path, |w| write_dataset(&data, w).map_err(|e| data_err(&path, e)))?;
            println!("{} epochs -> {}", data.len(), path.display());
            println!("{}", data.histogram_line());
        }
        Command::Synth { classes, per_class, records, noise, cache } => {
            let spec = SynthSpec { classes, per_class, records, noise, seed: cfg.train.seed };
            let data = generate(&spec).map_err(|e| CliError::Config(e.to_string()))?;
            let path = cache.unwrap_or_else(|| run.out.join("synth.bin"));
            write_atomic(&path, |w| write_dataset(&data, w).map_err(|e| data_err(&path, e)))?;
            println!("{} epochs -> {}", data.len(), path.display());
            println!("{}", data.histogram_line());
        }
        Command::Pretrain => {
            let data = match &cfg.unlabeled {
                Some(path) => load_dataset(path)?,
                None => {
                    // Test-split epochs never take part in pretraining.
                    let (_, labeled) = run.labeled()?;
                    let split = split_dataset(&labeled, &cfg.split)?;
                    labeled.subset(&split.train)
                }
            };
            let mut lines = String::new();
            let result = pretrain(&cfg.train, &data, &cfg.model, &mut log_line(&mut lines));
            write_text(&run.out.join("train.log"), &lines)?;
            let trained = result?;
            let path = run.checkpoint_path();
            write_atomic(&path, |w| write_checkpoint(&cfg.model, &trained.params, w).map_err(|e| data_err(&path, e)))?;
            println!("checkpoint -> {}", path.display());
        }
        Command::LinearEval | Command::Finetune => {
            let (_, params) = run.checkpoint()?;
            let (_, data) = run.labeled()?;
            let linear = matches!(cli.command, Command::LinearEval);
            let mut lines = String::new();
            let protocol = if linear { linear_eval } else { finetune };
            let result = protocol(&params, &cfg.model, &data, &cfg.split, &cfg.train, &mut log_line(&mut lines));
            let log_name = if linear { "linear_eval.log" } else { "finetune.log" };
            write_text(&run.out.join(log_name), &lines)?;
            let name = if linear { "metrics_linear.json" } else { "metrics_finetune.json" };
            let path = run.write_json(name, &result?.metrics)?;
            println!("metrics -> {}", path.display());
        }
        Command::Limited { k, reps } => {
            let k = k
                .or(cfg.split.k_per_class)
                .ok_or_else(|| CliError::Config("no k given (--k or split.k_per_class)".into()))?;
            let reps = reps.unwrap_or(cfg.split.repetitions);
            let (_, params) = run.checkpoint()?;
            let (_, data) = run.labeled()?;
            let report = limited_sample_experiment(&params, &cfg.model, &data, &cfg.split, k, reps, &cfg.train)?;
            for (arm, s) in [("random_init", &report.random_init), ("ssl", &report.ssl)] {
                println!(
                    "k={k} arm={arm} accuracy={:.4}±{:.4} macro_f1={:.4}±{:.4}",
                    s.accuracy_mean, s.accuracy_std, s.macro_f1_mean, s.macro_f1_std
                );
            }
            run.write_json(&format!("limited_k{k}.json"), &report)?;
        }
        Command::ExportEmbeddings { output } => {
            let (_, params) = run.checkpoint()?;
            let (_, data) = run.labeled()?;
            let path = output.unwrap_or_else(|| run.out.join("embeddings.tsv"));
            write_atomic(&path, |w| {
                export_embeddings(&params, &cfg.model, &data, w).map(|_| ()).map_err(CliError::from)
            })?;
            println!("{} embeddings -> {}", data.len(), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
