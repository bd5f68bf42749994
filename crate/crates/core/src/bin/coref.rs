use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coref::app::{self, AppError};
use coref::config::Config;
use coref::oracle;
use coref::trainer::{self, TrainOptions};

#[derive(Parser)]
#[command(name = "coref", version, about = "Span-ranking coreference resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value settings file; command-line overrides win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Word vectors in text format; hash-seeded vectors when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Worker threads for per-document parallelism.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Trailing key=value settings, e.g. gnn.layers=1 decode.gamma=0.8.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a corpus and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Epoch log as JSON lines; stderr when absent.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write one cluster JSONL line per document.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against gold; predicts from a checkpoint when no
    /// predictions file is given.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Compare two cluster JSONL files.
    Score {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        response: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Run the randomized decoder and gradient self-checks.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        decode_instances: usize,
        #[arg(long, default_value_t = 7)]
        max_spans: usize,
        #[arg(long, default_value_t = 30)]
        gradient_instances: usize,
        #[command(flatten)]
        common: Common,
    },
}

fn config_of(common: &Common) -> Result<Config, AppError> {
    let mut c = Config::default();
    if let Some(p) = &common.config {
        c.apply_text(&app::read_text(p)?)?;
    }
    c.apply_overrides(common.overrides.iter().map(String::as_str))?;
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn set_jobs(jobs: usize) -> Result<(), AppError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build_global()
        .map_err(|e| AppError::Internal(e.to_string()))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), AppError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| AppError::Input { path: p.display().to_string(), msg: e.to_string() }),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| AppError::Internal(e.to_string())),
    }
}

/// Checkpoint settings first, then the config file and flags on top.
fn load_with(checkpoint: &Path, common: &Common) -> Result<coref::model::Model, AppError> {
    let text = common.config.as_deref().map(app::read_text).transpose()?;
    let mut over = common.overrides.clone();
    if let Some(s) = common.seed {
        over.push(format!("seed={s}"));
    }
    app::load_model(checkpoint, text.as_deref(), over.iter().map(String::as_str))
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Train { corpus, dev, checkpoint, log, common } => {
            set_jobs(common.jobs)?;
            let config = config_of(&common)?;
            let docs = app::load_corpus(&corpus)?;
            let dev_docs = dev.as_deref().map(app::load_corpus).transpose()?;
            let emb = app::load_embeddings(common.embeddings.as_deref(), &config)?;
            let mut model = coref::model::Model::new(&config).map_err(|e| AppError::Internal(e.to_string()))?;
            let mut sink: Box<dyn Write> = match &log {
                Some(p) => Box::new(
                    fs::File::create(p).map_err(|e| AppError::Input { path: p.display().to_string(), msg: e.to_string() })?,
                ),
                None => Box::new(std::io::stderr()),
            };
            let mut io_err = None;
            trainer::train(&mut model, &docs, dev_docs.as_deref(), &emb, &TrainOptions::default(), |l| {
                if let Err(e) = writeln!(sink, "{}", l.to_json()) {
                    io_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = io_err {
                return Err(AppError::Internal(format!("writing epoch log: {e}")));
            }
            app::save_model(&model, &checkpoint)
        }
        Command::Predict { checkpoint, corpus, output, common } => {
            set_jobs(common.jobs)?;
            let model = load_with(&checkpoint, &common)?;
            let docs = app::load_corpus(&corpus)?;
            let emb = app::load_embeddings(common.embeddings.as_deref(), model.config())?;
            let records = app::predict_records(&model, &docs, &emb)?;
            write_out(output.as_deref(), &app::records_to_jsonl(&records))
        }
        Command::Evaluate { gold, predictions, checkpoint, output, json, common } => {
            set_jobs(common.jobs)?;
            let key = app::load_clusters(&gold)?;
            let response = match (predictions, checkpoint) {
                (Some(p), _) => app::load_clusters(&p)?,
                (None, Some(ck)) => {
                    let model = load_with(&ck, &common)?;
                    let emb = app::load_embeddings(common.embeddings.as_deref(), model.config())?;
                    app::predict_records(&model, &app::load_corpus(&gold)?, &emb)?
                }
                (None, None) => return Err(AppError::Usage("evaluate needs --predictions or --checkpoint".into())),
            };
            let (_, report) = app::score_records(&key, &response)?;
            if let Some(p) = &output {
                write_out(Some(p), &(report.to_json() + "\n"))?;
            }
            let text = if json { report.to_json() + "\n" } else { report.to_text() };
            write_out(None, &text)
        }
        Command::Score { key, response, json } => {
            let (_, report) = app::score_records(&app::load_clusters(&key)?, &app::load_clusters(&response)?)?;
            write_out(None, &if json { report.to_json() + "\n" } else { report.to_text() })
        }
        Command::OracleCheck { decode_instances, max_spans, gradient_instances, common } => {
            set_jobs(common.jobs)?;
            let config = config_of(&common)?;
            if !(1..=8).contains(&max_spans) {
                return Err(AppError::Usage("--max-spans must be between 1 and 8".into()));
            }
            let suites = [
                oracle::decoder_suite(config.seed, decode_instances, max_spans),
                oracle::gradient_suite(config.seed, gradient_instances),
            ];
            for s in &suites {
                println!("{}", s.line());
                for f in &s.failures {
                    println!("  {}", f.replace('\n', "\n  "));
                }
            }
            let failed: Vec<&str> = suites.iter().filter(|s| !s.passed()).map(|s| s.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(AppError::Oracle(failed.join(", ")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
