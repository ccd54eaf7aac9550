//! `situgraph`: adapt datasets, build and expand influence graphs, and
//! evaluate them.
//!
//! Exit codes: 0 on success, 1 when a pipeline stage fails, 2 on usage
//! errors. Logs go to stderr as `level=... stage=... msg="..."` lines;
//! machine-readable outputs are only written below `--out`.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "situgraph", version, about = "Situational influence graph toolkit")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    /// Ignore SITUGRAPH_* environment overrides.
    #[arg(long, global = true, hide = true)]
    pub no_env: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a raw dataset split into question/answer examples.
    Adapt(AdaptArgs),
    /// Train an n-gram model on adapted examples.
    TrainNgram(TrainArgs),
    /// Build one graph per example group.
    Generate(GenerateArgs),
    /// Expand existing graphs breadth-first from their leaves.
    Expand(ExpandArgs),
    /// Score generated graphs against references with BLEU and ROUGE-L.
    Eval(EvalArgs),
    /// Check two-hop paths against direct eventual-effect answers.
    Consistency(ConsistencyArgs),
    /// Export graph-augmented QA training inputs.
    Augment(AugmentArgs),
    /// Two-option zero-shot evaluation by comparing option scores.
    Zeroshot(ZeroShotArgs),
    /// Write reference or generated graphs as JSON, DOT or flattened text.
    GraphExport(ExportArgs),
    /// Re-run a previous run from its manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct GenFlags {
    /// oracle:<table.json>, ngram:<model.json> or remote:<url>.
    #[arg(long)]
    pub backend: Option<String>,
    /// Remote request timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Remote retries after the first attempt.
    #[arg(long)]
    pub retries: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// question or concat.
    #[arg(long)]
    pub template: Option<String>,
}

impl GenFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.backend {
            c.backend.selector = Some(v.clone());
        }
        if let Some(v) = self.timeout {
            c.backend.timeout_secs = v;
        }
        if let Some(v) = self.retries {
            c.backend.retries = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.top_p {
            c.generation.top_p = v;
        }
        if let Some(v) = self.max_tokens {
            c.generation.max_tokens = v;
        }
        if let Some(v) = &self.template {
            c.generation.template = v.clone();
        }
    }
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Expected counts for bundled mini splits; without it the published
    /// full-data sizes are expected.
    #[arg(long)]
    pub fixture_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Adapted examples (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub backoff: Option<f64>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Adapted examples (JSONL); one graph per (context, situation) group.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// default (each group's own relations), fwd, rev, or relation:effect,...
    #[arg(long)]
    pub schedule: Option<String>,
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    /// Directory of graph JSON files.
    #[arg(long)]
    pub graphs: PathBuf,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Schedule applied to each expanded node.
    #[arg(long)]
    pub schedule: Option<String>,
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ConsistencyArgs {
    /// Adapted examples (JSONL); each distinct (context, situation) is a case.
    #[arg(long)]
    pub cases: PathBuf,
    /// exact or token_f1.
    #[arg(long)]
    pub criterion: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// QA items (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub separator: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub cause_schedule: Option<String>,
    #[arg(long)]
    pub ending_schedule: Option<String>,
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ZeroShotArgs {
    /// Zero-shot items (JSONL).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub length_normalize: Option<bool>,
    #[arg(long)]
    pub knowledge_first: Option<bool>,
    #[arg(long)]
    pub separator: Option<String>,
    #[command(flatten)]
    pub gen: GenFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Dot,
    Flat,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Build reference graphs from adapted examples.
    #[arg(long, conflicts_with = "graphs", required_unless_present = "graphs")]
    pub examples: Option<PathBuf>,
    /// Convert a directory of graph JSON files.
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ExportFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags that do not change what a run computes.
const UNRECORDED: &[&str] = &["--out", "--config", "--log-level", "--jobs"];

/// Arguments worth recording in the run manifest.
fn recorded_args(raw: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_next = false;
    for arg in raw {
        if skip_next {
            skip_next = false;
            continue;
        }
        if arg == "--no-env" {
            continue;
        }
        if UNRECORDED.contains(&arg.as_str()) {
            skip_next = true;
            continue;
        }
        if UNRECORDED.iter().any(|f| arg.starts_with(&format!("{f}="))) {
            continue;
        }
        out.push(arg.clone());
    }
    out
}

fn init_logging(level: &str) {
    let filter = level.parse().unwrap_or(log::LevelFilter::Info);
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format(|buf, record| {
            let stage = record.target().rsplit("::").next().unwrap_or("main");
            writeln!(
                buf,
                "level={} stage={} msg={:?}",
                record.level(),
                stage,
                record.args().to_string()
            )
        })
        .try_init();
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&raw) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(&cli.log_level);
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("level=ERROR stage=cli msg=\"--jobs must be at least 1\"");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match commands::run(&cli, recorded_args(&raw[1..])) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!(target: "cli", "{e:#}");
            ExitCode::from(1)
        }
    }
}
