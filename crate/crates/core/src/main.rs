use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use gcd_core::data::{self, DataError, SynthSpec};
use gcd_core::evaluation;
use gcd_core::oracle::backend::{ChatBackend, HttpBackend, ReplayBackend, TranscriptWriter};
use gcd_core::oracle::mock::KeywordMock;
use gcd_core::oracle::{OracleConfig, PatternOracle, PatternOracleError};
use gcd_core::pipeline::checkpoint::Checkpoint;
use gcd_core::pipeline::{self, Config, ConfigError, PipelineError};

#[derive(Parser)]
#[command(name = "gcd", version, about = "Pattern-guided generalized category discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    /// OpenAI-compatible endpoint from GCD_ORACLE_URL / GCD_ORACLE_TOKEN.
    Http,
    /// Offline keyword oracle.
    Mock,
    /// Replays a recorded transcript.
    Replay,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write history, checkpoints, patterns and metrics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        oracle: OracleKind,
        /// Transcript to replay (with `--oracle replay`).
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Config override, `key=value`; may be repeated.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the confusion matrix here.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// K-means on the raw embeddings, evaluated on the test split.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = gcd_core::data::DEFAULT_SYNTH_NOISE)]
        noise: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 6)]
        known: usize,
        /// Comma-separated class sizes.
        #[arg(long, value_delimiter = ',', default_value = "400,200,100,50,50,50,40,30,20")]
        sizes: Vec<usize>,
    },
    /// Print the pattern store of a checkpoint.
    Patterns {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return e.exit_code() as u8;
        }
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<DataError>() {
            return 3;
        }
        if cause.is::<PatternOracleError>() {
            return 4;
        }
    }
    1
}

fn build_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut config = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            oracle,
            transcript,
            seed,
            out,
            overrides,
        } => {
            let config = build_config(config.as_ref(), &overrides)?;
            let bundle = data::load_dataset(&data, None)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let oracle_kind = oracle;
            let backend: Box<dyn ChatBackend> = match oracle_kind {
                OracleKind::Http => Box::new(HttpBackend::from_env(config.model.clone())?),
                OracleKind::Mock => Box::new(KeywordMock::default()),
                OracleKind::Replay => {
                    let path = transcript.ok_or_else(|| {
                        PatternOracleError::Config("--oracle replay needs --transcript".into())
                    })?;
                    Box::new(ReplayBackend::from_file(&path)?)
                }
            };
            let oracle_config = OracleConfig {
                retries: config.oracle_retries,
                batch_size: config.oracle_batch,
                ..OracleConfig::default()
            };
            let mut oracle = PatternOracle::new(backend).with_config(oracle_config);
            if !matches!(oracle_kind, OracleKind::Replay) {
                oracle = oracle.with_transcript(TranscriptWriter::create(&out.join("transcript.jsonl"))?);
            }
            let outcome = pipeline::run_training(config, &bundle, &mut oracle, seed, &out)?;
            log::info!("{} oracle calls", oracle.calls());
            print_json(&outcome.evaluation.metrics)
        }
        Command::Eval { ckpt, data, confusion } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let bundle = data::load_dataset(&data, Some(ckpt.num_classes))?;
            let ev = pipeline::run_eval(&ckpt, &bundle)?;
            if let Some(path) = confusion {
                let f = std::fs::File::create(&path)?;
                evaluation::write_confusion_csv(&ev.predicted, &ev.truth, &ev.metrics.permutation, bundle.num_classes, f)?;
            }
            print_json(&ev.metrics)
        }
        Command::Baseline {
            data,
            seed,
            runs,
            max_iter,
        } => {
            let bundle = data::load_dataset(&data, None)?;
            let ev = pipeline::run_baseline(&bundle, seed, runs, max_iter)?;
            print_json(&ev.metrics)
        }
        Command::Synth {
            seed,
            out,
            noise,
            dim,
            known,
            sizes,
        } => {
            let spec = SynthSpec {
                seed,
                num_classes: sizes.len(),
                known,
                dim,
                sizes,
                noise,
            };
            let bundle = data::synth_gcd(&spec)?;
            data::save_dataset(&bundle, &out)?;
            Ok(())
        }
        Command::Patterns { ckpt } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            for p in ckpt.patterns.iter() {
                println!("[{}] class {}: {}", p.pattern_id, p.owner, p.text);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
