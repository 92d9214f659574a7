use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbrag_core::harness::{self, RunConfig, RunPlan, SweepAxis, AGGREGATE_FILE, SWEEP_FILE};
use fbrag_core::llm::MockLatency;
use fbrag_core::planted::{self, PlantSpec};
use fbrag_core::{Error, Example, Mode};

const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_DATASET: u8 = 4;

/// Forward-backward retrieval over long contexts: dataset runs, sweeps and
/// reruns from manifests.
#[derive(Parser)]
#[command(name = "fbrag", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one pipeline mode over a dataset.
    Run {
        #[command(flatten)]
        common: RunArgs,
        /// Overrides the mode in the config.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Re-run a dataset once per value of a parameter.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long)]
        mode: Option<Mode>,
        /// chunks (stage-2 budget in chunks), samples (K) or budget (words).
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<usize>,
    },
    /// Repeat a run recorded in a manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic planted-needle dataset with mock fixtures and config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 25)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Simulated backend milliseconds per prompt word.
        #[arg(long, default_value_t = 0.02)]
        ms_per_word: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// JSONL dataset file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    backend_forward_url: Option<String>,
    #[arg(long)]
    backend_final_url: Option<String>,
}

struct Failure {
    code: u8,
    error: Error,
}

fn with_code(code: u8) -> impl Fn(Error) -> Failure {
    move |error| Failure { code, error }
}

/// Backend failures map to their own code wherever they surface.
fn classify(error: Error) -> Failure {
    let code = match error.root() {
        e if e.is_backend() => EXIT_BACKEND,
        Error::Schema { .. } | Error::Io { .. } => EXIT_DATASET,
        _ => EXIT_CONFIG,
    };
    Failure { code, error }
}

fn plan(args: &RunArgs, mode: Option<Mode>) -> Result<RunPlan, Failure> {
    let mut config = RunConfig::load(&args.config).map_err(with_code(EXIT_CONFIG))?;
    if let Some(mode) = mode {
        config.pipeline.mode = mode;
    }
    if let Some(url) = &args.backend_forward_url {
        config.backends.forward = config.backends.forward.with_url(url);
    }
    if let Some(url) = &args.backend_final_url {
        config.backends.final_backend = config.backends.final_backend.with_url(url);
    }
    Ok(RunPlan {
        config,
        dataset_path: args.dataset.clone(),
        workers: args.workers.max(1),
    })
}

fn examples(plan: &RunPlan) -> Result<Vec<Example>, Failure> {
    let examples = plan.load_examples().map_err(with_code(EXIT_DATASET))?;
    if examples.is_empty() {
        return Err(Failure {
            code: EXIT_DATASET,
            error: Error::invalid(format!("{} has no examples", plan.dataset_path.display())),
        });
    }
    Ok(examples)
}

fn execute(plan: &RunPlan, out: &Path) -> Result<(), Failure> {
    let examples = examples(plan)?;
    let summary = plan.run(&examples, out).map_err(classify)?;
    println!("{}", summary.line());
    eprintln!("wrote {}", out.join(AGGREGATE_FILE).display());
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, mode } => execute(&plan(&common, mode)?, &common.out),
        Command::Sweep {
            common,
            mode,
            axis,
            values,
        } => {
            if values.is_empty() {
                return Err(Failure {
                    code: EXIT_CONFIG,
                    error: Error::Config("--values needs at least one value".into()),
                });
            }
            let plan = plan(&common, mode)?;
            let examples = examples(&plan)?;
            let rows = harness::sweep(&plan, &examples, axis, &values, &common.out).map_err(classify)?;
            for r in rows {
                println!("{} {:.2} {:.6}", r.value, r.score, r.latency_s);
            }
            eprintln!("wrote {}", common.out.join(SWEEP_FILE).display());
            Ok(())
        }
        Command::Rerun { manifest, out } => {
            let plan = RunPlan::from_manifest(&manifest).map_err(with_code(EXIT_CONFIG))?;
            execute(&plan, &out)
        }
        Command::Synth {
            out,
            n,
            seed,
            ms_per_word,
        } => {
            let latency = MockLatency {
                base_ms: 50.0,
                per_prompt_word_ms: ms_per_word,
                per_output_word_ms: 5.0,
                sleep: false,
            };
            let files = planted::write_suite(&out, seed, n, &PlantSpec::default(), latency)
                .map_err(with_code(EXIT_CONFIG))?;
            println!("{}", files.config.display());
            println!("{}", files.dataset.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("fbrag: {error}");
            ExitCode::from(code)
        }
    }
}
