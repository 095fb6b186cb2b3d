use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use mmd_core::detector::OptimizerKind;
use mmd_core::pipeline::{self, Backend, RunConfig, Services, Variant};
use mmd_core::refinement::CombineMode;
use mmd_core::synthetic::{self, SyntheticConfig};
use mmd_core::{Error, Perspective};

#[derive(Parser)]
#[command(name = "mmd", version, about = "Rationale-augmented multimodal misinformation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one rationale per (instance, perspective) into the cache.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Rationale cache file (appended to).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score and filter cached rationales.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Refined rationale file (overwritten).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Five-fold training and evaluation.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write the per-fold rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Score a saved checkpoint on one fold's held-out split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: usize,
    },
    /// Run ablation variants side by side.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: full, no-filter, single:<perspective>, no-rationale.
        #[arg(long, value_delimiter = ',', default_value = "full,no-filter,no-rationale")]
        variants: Vec<String>,
    },
    /// Write a synthetic dataset and evidence corpus.
    Synth {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        image_dim: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Flags shared by the pipeline commands; each overrides the config file.
#[derive(Args, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Refined rationale file read by train, evaluate and compare.
    #[arg(long)]
    rationales: Option<PathBuf>,
    /// Checkpoint directory for train, checkpoint file for evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated subset of perspectives.
    #[arg(long, value_delimiter = ',')]
    perspectives: Option<Vec<String>>,
    #[arg(long)]
    fact_keep: Option<f64>,
    #[arg(long)]
    rel_keep: Option<f64>,
    /// intersection | sequential
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    retrieval_p: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// adam | sgd
    #[arg(long)]
    optimizer: Option<String>,
}

impl Common {
    fn resolve(&self) -> mmd_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                if !path.is_file() {
                    return Err(Error::invalid(format!("config file not found: {}", path.display())));
                }
                RunConfig::from_json_file(path)?
            }
            None => RunConfig::default(),
        };
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if v.is_some() {
                *slot = v.clone();
            }
        };
        set(&mut cfg.dataset_path, &self.dataset);
        set(&mut cfg.corpus_path, &self.corpus);
        set(&mut cfg.cache_path, &self.cache);
        set(&mut cfg.refined_path, &self.rationales);
        set(&mut cfg.checkpoint_path, &self.checkpoint);
        set(&mut cfg.report_path, &self.report);
        if let Some(p) = &self.provider {
            cfg.provider = p.parse::<Backend>()?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(ps) = &self.perspectives {
            cfg.perspectives = ps.iter().map(|p| p.parse::<Perspective>()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = self.fact_keep {
            cfg.filter.factuality_keep_fraction = v;
        }
        if let Some(v) = self.rel_keep {
            cfg.filter.relevance_keep_fraction = v;
        }
        if let Some(m) = &self.mode {
            cfg.filter.combine_mode = m.parse::<CombineMode>()?;
        }
        if let Some(p) = self.retrieval_p {
            cfg.filter.retrieval_p = p;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.train.weight_decay = v;
        }
        if let Some(v) = self.hidden {
            cfg.train.d_h = v;
        }
        if let Some(o) = &self.optimizer {
            cfg.train.optimizer = match o.as_str() {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                other => return Err(Error::invalid(format!("unknown optimizer '{other}' (expected adam|sgd)"))),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ProviderUnavailable(_) | Error::EmptyResponse(_) => 3,
        Error::TrainingDiverged { .. } => 4,
        _ => 2,
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn run(command: Command) -> (&'static str, mmd_core::Result<()>) {
    match command {
        Command::Generate { common, out } => ("generate", (|| {
            let mut cfg = common.resolve()?;
            if out.is_some() {
                cfg.cache_path = out;
            }
            let services = Services::from_config(&cfg)?;
            let s = pipeline::cmd_generate(&cfg, &services)?;
            println!("{} new cache rows ({} already present)", s.new_rows, s.existing_rows);
            Ok(())
        })()),
        Command::Refine { common, out } => ("refine", (|| {
            let mut cfg = common.resolve()?;
            if out.is_some() {
                cfg.refined_path = out;
            }
            let services = Services::from_config(&cfg)?;
            let n = pipeline::cmd_refine(&cfg, &services)?;
            println!("{n} refined rationales written");
            Ok(())
        })()),
        Command::Train { common, csv } => ("train", (|| {
            let cfg = common.resolve()?;
            let services = Services::from_config(&cfg)?;
            let report = pipeline::cmd_train_eval(&cfg, &services)?;
            if let Some(path) = csv {
                std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
            }
            let a = &report.aggregate;
            println!(
                "micro_f1 {:.4}±{:.4}  macro_f1 {:.4}±{:.4}  ece {:.4}±{:.4}",
                a.micro_f1.mean, a.micro_f1.std, a.macro_f1.mean, a.macro_f1.std, a.ece.mean, a.ece.std
            );
            Ok(())
        })()),
        Command::Evaluate { mut common, fold } => ("evaluate", (|| {
            let checkpoint = common
                .checkpoint
                .take()
                .ok_or_else(|| Error::invalid("--checkpoint is required"))?;
            let cfg = common.resolve()?;
            let services = Services::from_config(&cfg)?;
            let report = pipeline::cmd_evaluate(&cfg, &services, &checkpoint, fold)?;
            print_json(&report);
            Ok(())
        })()),
        Command::Compare { common, variants } => ("compare", (|| {
            let cfg = common.resolve()?;
            let variants: Vec<Variant> = variants.iter().map(|v| v.parse()).collect::<Result<_, _>>()?;
            let services = Services::from_config(&cfg)?;
            let out = pipeline::cmd_compare(&cfg, &services, &variants)?;
            print!("{}", out.to_table());
            Ok(())
        })()),
        Command::Synth { dataset, corpus, n, image_dim, seed } => ("synth", (|| {
            let cfg = SyntheticConfig { n_instances: n, image_dim, seed, ..SyntheticConfig::default() };
            pipeline::write_jsonl(&dataset, &synthetic::dataset(&cfg)?)?;
            pipeline::write_jsonl(&corpus, &synthetic::corpus(&cfg))?;
            println!("wrote {n} instances to {}", dataset.display());
            Ok(())
        })()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let (stage, result) = run(cli.command);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{stage}: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
