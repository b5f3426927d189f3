//! `tmedit`: the translation-memory edit pipeline on JSONL streams.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tmedit::Vocab;

use crate::config::Config;
use crate::error::CliError;

/// Thread count for the worker pool; defaults to all cores.
const THREADS_ENV: &str = "TMEDIT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "tmedit", version, about = "Translation-memory edit pipeline over JSONL streams")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed vocabulary file (one token per line). Without it the
    /// vocabulary grows from the inputs.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    /// Output path, `-` for stdout.
    #[arg(long, short, global = true, default_value = "-")]
    out: String,
    /// Omit the header line echoing the effective config.
    #[arg(long, global = true)]
    no_header: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Index a TM and report its length buckets.
    BuildIndex(TmArgs),
    /// Fuzzy-match queries against a TM.
    Retrieve(RetrieveArgs),
    /// N-way alignment of matches against references.
    Align(AlignArgs),
    /// Expert edit scripts for matches and references.
    Edits(EditsArgs),
    /// Labeled roll-in states for training.
    Rollin(RollinArgs),
    /// Synthetic fuzzy matches cut from targets.
    Synth(SynthArgs),
    /// Realign placeholder counts from insertion log-probabilities.
    Realign(RealignArgs),
    /// Decode sources with a reference policy.
    Decode(DecodeArgs),
    /// Origin-split n-gram precision and cover/noise statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct TmArgs {
    /// TM file: one {"src", "tgt", "id"?} object per line.
    #[arg(long)]
    pub tm: String,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub tm: String,
    /// Queries: {"tokens"|"text"|"src", "id"?} per line.
    #[arg(long)]
    pub queries: String,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub nmax: Option<usize>,
    /// Skip the TM entry whose id equals the query id.
    #[arg(long)]
    pub exclude_self: bool,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// {"matches": [...], "ref"?: [...]} per line; retrieve output works too.
    #[arg(long)]
    pub matches: String,
    /// References, one per matches line; optional when lines carry "ref".
    #[arg(long)]
    pub refs: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Exact dynamic program instead of the k-best heuristic.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Args, Debug)]
pub struct EditsArgs {
    #[arg(long)]
    pub matches: String,
    #[arg(long)]
    pub refs: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct RollinArgs {
    /// Training pairs: {"src", "tgt", "id"?} per line.
    #[arg(long)]
    pub corpus: String,
    /// TM to draw matches from; defaults to the corpus itself, leave-one-out.
    #[arg(long)]
    pub tm: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Targets: {"tokens"|"text"|"tgt", "id"?} per line.
    #[arg(long)]
    pub corpus: String,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub f: Option<f64>,
    /// `uniform` or `copy`.
    #[arg(long)]
    pub filler: Option<String>,
}

#[derive(Args, Debug)]
pub struct RealignArgs {
    /// {"logits": [[[..]]]} per line, N × gaps × classes log-probabilities.
    #[arg(long)]
    pub logits: String,
    /// {"seqs": [...]} per line; optional when logits lines carry "seqs".
    #[arg(long)]
    pub seqs: Option<String>,
    /// Log-softmax every row first.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long)]
    pub tm: String,
    /// Sources: {"tokens"|"text"|"src", "tgt"?, "id"?} per line.
    #[arg(long)]
    pub src: String,
    /// `expert`, `noisy:<p>` or `stub`.
    #[arg(long, default_value = "stub")]
    pub policy: String,
    #[arg(long)]
    pub realign: bool,
    /// References for expert and noisy policies; defaults to "tgt" of --src.
    #[arg(long)]
    pub refs: Option<String>,
    #[arg(long)]
    pub exclude_self: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Decode output: {"output", "provenance"} per line.
    #[arg(long)]
    pub results: String,
    #[arg(long)]
    pub refs: String,
    #[arg(long, default_value_t = 2)]
    pub max_order: usize,
    /// Match sets ({"matches": [...]}) for cover/noise, one per reference.
    #[arg(long)]
    pub matches: Option<String>,
    /// Also write detokenized hypotheses, one per line, for external scorers.
    #[arg(long)]
    pub hyp: Option<String>,
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let vocab = match &cli.vocab {
        Some(p) => Some(Vocab::load(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let (name, values) = commands::dispatch(&cli.command, &mut config, vocab)?;
    let mut out = io::Output::open(&cli.out)?;
    if !cli.no_header {
        out.header(name, &config)?;
    }
    for v in &values {
        out.write(v)?;
    }
    out.finish()
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        eprintln!("{}", CliError::Internal(info.to_string()).to_json());
        std::process::exit(3);
    }));
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return fail(&CliError::usage(e.kind().to_string()));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
