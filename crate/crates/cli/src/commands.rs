use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evicode_core::candidates::RankMode;
use evicode_core::config::Config;
use evicode_core::corpus::{load_corpus, read_corpus, EmrDocument};
use evicode_core::eval::{build_verifier_dataset, corpus_stats, evaluate};
use evicode_core::knowledge::LocationRegistry;
use evicode_core::pipeline::{CodingResult, Engine};
use evicode_core::toy::toy_bundle;
use evicode_core::verify::{train_verifier, TrainConfig};
use serde::Serialize;

pub const EXIT_OK: u8 = 0;
pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;

/// Name of the per-record error file written next to batch results.
pub const ERROR_FILE: &str = "errors.ndjson";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl ToString) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "evicode",
    version,
    about = "Evidence-grounded ICD coding for sectioned medical records"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Weighted,
    Tiered,
}

#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// Config file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Candidate ranking mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Evidence reliability threshold.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Keep retrieved evidence regardless of its score.
    #[arg(long, global = true)]
    pub no_evidence_filter: bool,
    /// Retrieve evidence from the discharge summary only.
    #[arg(long, global = true)]
    pub summary_only: bool,
    /// Show the verifier bare evidence sentences.
    #[arg(long, global = true)]
    pub plain_template: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Code every record of a corpus into one result file per record.
    Code {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score results against the corpus's gold codes.
    Eval {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory of a previous `code` run; codes the corpus when absent.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Corpus, candidate and evidence statistics.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Fit the built-in verifier on a gold-labelled corpus.
    TrainVerifier {
        #[arg(long = "in")]
        input: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
        /// Negative candidates per gold candidate.
        #[arg(long, default_value_t = 5)]
        neg_per_pos: usize,
    },
    /// Serve the `/v1` API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory for session logs; sessions stay in memory when absent.
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
    /// Write the toy corpus, its assets, a trained verifier and a config.
    Toy {
        #[arg(long)]
        out: PathBuf,
    },
}

impl GlobalArgs {
    /// Loads the config file and applies flag overrides, validating the result.
    pub fn config(&self) -> Result<Config, Failure> {
        let mut config = match &self.config {
            Some(path) => Config::load(path).map_err(Failure::input)?,
            None => Config::default(),
        };
        if let Some(mode) = self.mode {
            config.candidates.mode = match mode {
                ModeArg::Weighted => RankMode::Weighted,
                ModeArg::Tiered => RankMode::Tiered,
            };
        }
        if let Some(t) = self.threshold {
            config.evidence.threshold = t;
        }
        config.ablation.no_evidence_filter |= self.no_evidence_filter;
        config.ablation.summary_only |= self.summary_only;
        config.ablation.plain_template |= self.plain_template;
        config.validate().map_err(Failure::input)?;
        Ok(config)
    }
}

/// Runs one command, returning the exit code on success.
pub fn run(cli: Cli) -> Result<u8, Failure> {
    let config = cli.global.config()?;
    match cli.command {
        Command::Ingest { input } => ingest(&config, &input),
        Command::Code { input, out } => code(&config, &input, &out),
        Command::Eval { input, results, report } => eval(&config, &input, results.as_deref(), report.as_deref()),
        Command::Stats { input, results } => stats(&config, &input, results.as_deref()),
        Command::TrainVerifier {
            input,
            out,
            neg_per_pos,
        } => train(&config, &input, &out, neg_per_pos),
        Command::Serve { addr, sessions } => serve(config, addr, sessions),
        Command::Toy { out } => toy(&out),
    }
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::runtime(e)),
        _ => Ok(()),
    }
}

fn engine(config: &Config) -> Result<Engine, Failure> {
    Engine::from_config(config.clone()).map_err(Failure::input)
}

fn coding_engine(config: &Config) -> Result<Engine, Failure> {
    let engine = engine(config)?;
    if engine.verifier().is_none() {
        return Err(Failure::input(
            "no verifier: set `assets.verifier_model` or an external verifier in the config",
        ));
    }
    Ok(engine)
}

fn registry(config: &Config) -> Result<LocationRegistry, Failure> {
    match &config.assets.locations {
        Some(p) => LocationRegistry::load(p).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => Ok(LocationRegistry::default_registry()),
    }
}

fn documents(path: &Path, registry: &LocationRegistry) -> Result<Vec<EmrDocument>, Failure> {
    let docs = load_corpus(path, registry).map_err(Failure::input)?;
    Ok(docs.into_iter().map(|i| i.document).collect())
}

fn ingest(config: &Config, input: &Path) -> Result<u8, Failure> {
    let registry = registry(config)?;
    let entries = read_corpus(input, &registry).map_err(Failure::input)?;
    let mut bad = 0;
    for entry in &entries {
        match &entry.outcome {
            Ok(i) => emit(&format!(
                "ok\t{}\t{} sections\t{} diagnoses\t{} unknown locations\n",
                i.document.record_id,
                i.document.sections.len(),
                i.document.diagnoses.len(),
                i.unknown_locations
            ))?,
            Err(e) => {
                bad += 1;
                emit(&format!("invalid\t{}\t{e}\n", entry.source))?;
            }
        }
    }
    eprintln!("{} records, {bad} invalid", entries.len());
    if bad > 0 {
        return Err(Failure::input(format!("{bad} invalid records in {}", input.display())));
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct RecordError<'a> {
    source: &'a str,
    record_id: Option<&'a str>,
    error: String,
}

fn usable_file_stem(id: &str) -> bool {
    !id.starts_with('.') && !id.contains(['/', '\\', '\0'])
}

fn code(config: &Config, input: &Path, out: &Path) -> Result<u8, Failure> {
    let engine = coding_engine(config)?;
    let entries = read_corpus(input, &engine.assets().registry).map_err(Failure::input)?;
    fs::create_dir_all(out).map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
    let error_path = out.join(ERROR_FILE);
    if error_path.exists() {
        fs::remove_file(&error_path).map_err(|e| Failure::runtime(format!("{}: {e}", error_path.display())))?;
    }

    let mut seen = HashSet::new();
    let mut errors = String::new();
    let mut coded = 0;
    for entry in &entries {
        let mut fail = |record_id: Option<&str>, error: String| {
            let line = RecordError {
                source: &entry.source,
                record_id,
                error,
            };
            errors.push_str(&serde_json::to_string(&line).expect("error line serializes"));
            errors.push('\n');
        };
        let doc = match &entry.outcome {
            Ok(i) => &i.document,
            Err(e) => {
                fail(None, e.to_string());
                continue;
            }
        };
        let id = doc.record_id.as_str();
        if !usable_file_stem(id) {
            fail(Some(id), "record_id cannot be used as a file name".into());
            continue;
        }
        if !seen.insert(id) {
            fail(Some(id), "duplicate record_id".into());
            continue;
        }
        let result = match engine.code_document(doc) {
            Ok(r) => r,
            Err(e) => {
                fail(Some(id), e.to_string());
                continue;
            }
        };
        tracing::debug!(record = id, total_ms = result.timings.total_ms, "coded");
        let path = out.join(format!("{id}.json"));
        fs::write(&path, result.canonical_json() + "\n")
            .map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        coded += 1;
    }

    let failed = entries.len() - coded;
    eprintln!("coded {coded} of {} records into {}", entries.len(), out.display());
    if failed > 0 {
        fs::write(&error_path, errors).map_err(|e| Failure::runtime(format!("{}: {e}", error_path.display())))?;
        eprintln!("{failed} records failed, see {}", error_path.display());
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

/// Reads the result files written by `code`.
pub fn load_results(dir: &Path) -> Result<Vec<CodingResult>, Failure> {
    let read_err = |e: std::io::Error| Failure::input(format!("{}: {e}", dir.display()));
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(read_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn results_for(engine: &Engine, docs: &[EmrDocument], dir: Option<&Path>) -> Result<Vec<CodingResult>, Failure> {
    match dir {
        Some(dir) => load_results(dir),
        None => {
            if engine.verifier().is_none() {
                return Err(Failure::input("no verifier configured and no --results given"));
            }
            docs.iter()
                .map(|d| {
                    engine
                        .code_document(d)
                        .map_err(|e| Failure::runtime(format!("record `{}`: {e}", d.record_id)))
                })
                .collect()
        }
    }
}

fn eval(config: &Config, input: &Path, results: Option<&Path>, report: Option<&Path>) -> Result<u8, Failure> {
    let engine = engine(config)?;
    let docs = documents(input, &engine.assets().registry)?;
    let results = results_for(&engine, &docs, results)?;
    let metrics = evaluate(&results, &docs, &engine.assets().codes).map_err(Failure::input)?;
    emit(&metrics.render_table())?;
    if let Some(path) = report {
        let json = serde_json::to_string_pretty(&metrics).expect("report serializes");
        fs::write(path, json + "\n").map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(EXIT_OK)
}

fn stats(config: &Config, input: &Path, results: Option<&Path>) -> Result<u8, Failure> {
    let engine = engine(config)?;
    let docs = documents(input, &engine.assets().registry)?;
    let results = results_for(&engine, &docs, results)?;
    let stats = corpus_stats(&docs, &results, engine.assets().tokenizer.as_ref()).map_err(Failure::input)?;
    emit(&(serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n"))?;
    Ok(EXIT_OK)
}

fn train(config: &Config, input: &Path, out: &Path, neg_per_pos: usize) -> Result<u8, Failure> {
    let engine = engine(config)?;
    let docs = documents(input, &engine.assets().registry)?;
    let dataset = build_verifier_dataset(&engine, &docs, neg_per_pos).map_err(Failure::input)?;
    let train_config = TrainConfig {
        seed: config.runtime.seed,
        ..Default::default()
    };
    let (model, loss) = train_verifier(&dataset.examples, &train_config).map_err(Failure::input)?;
    fs::write(out, model.to_json()).map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
    eprintln!(
        "{} positives, {} negatives, {} gold codes outside the candidates; loss {loss:.4}; wrote {}",
        dataset.positives,
        dataset.negatives,
        dataset.misses,
        out.display()
    );
    Ok(EXIT_OK)
}

fn serve(config: Config, addr: SocketAddr, sessions: Option<PathBuf>) -> Result<u8, Failure> {
    let engine = Arc::new(engine(&config)?);
    if let Some(dir) = &sessions {
        fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    runtime
        .block_on(crate::service::serve(engine, sessions, addr))
        .map_err(Failure::runtime)?;
    Ok(EXIT_OK)
}

/// The toy verifier is always fitted with default settings so that ablation
/// runs share one model.
fn toy(out: &Path) -> Result<u8, Failure> {
    let bundle = toy_bundle();
    let (model, loss, dataset) = bundle.train_verifier(&Config::default()).map_err(Failure::runtime)?;
    let config_path = bundle.write(out, &model).map_err(Failure::runtime)?;
    eprintln!(
        "toy corpus: {} records, {} codes; verifier fitted on {} examples (loss {loss:.4})",
        bundle.records.len(),
        bundle.codes.len(),
        dataset.examples.len()
    );
    emit(&format!("{}\n", config_path.display()))?;
    Ok(EXIT_OK)
}
