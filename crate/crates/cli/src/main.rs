use clap::{Args, Parser, Subcommand};
use mspa_core::config::RunConfig;
use mspa_core::pipeline::{self, ComposeTargets, PipelineError, RecommendMode};
use mspa_core::Execution;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mspa", version, about = "Preference-aligned author recommendation on synthetic tipping data")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a config value, e.g. `--set grpo.steps=100`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Disable data parallelism.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic catalog, sessions, candidate sets and triples.
    GenData,
    /// Compose preference profiles and author cards with the configured backend.
    Compose {
        #[arg(long)]
        users: bool,
        #[arg(long)]
        authors: bool,
    },
    /// Train the linear policy with GRPO.
    Train,
    /// Recommend one author for a session and print the result.
    Recommend {
        #[arg(long)]
        session: String,
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// Ask the completion backend instead of the trained policy.
        #[arg(long)]
        backend: bool,
    },
    /// Evaluate user-to-author accuracy, retrieval and AUC.
    EvalU2a,
    /// Evaluate author-to-author alignment on the triples.
    EvalA2a,
    /// List the nearest authors to a user or author id.
    Retrieve {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Merge evaluation outputs into eval_report.json and eval_report.md.
    Report,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "{} {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
}

fn load_config(g: &Global) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &g.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli.global)?;
    let exec = if cli.global.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::GenData => {
            pipeline::gen_data(&cfg)?;
        }
        Command::Compose { users, authors } => {
            let both = !users && !authors;
            pipeline::compose(&cfg, ComposeTargets { users: users || both, authors: authors || both }, exec)?;
        }
        Command::Train => {
            pipeline::train(&cfg, exec)?;
        }
        Command::Recommend { session, m, backend } => {
            let mode = if backend { RecommendMode::Backend } else { RecommendMode::Policy };
            let rec = pipeline::recommend(&cfg, &session, m, mode)?;
            println!("{}", serde_json::to_string_pretty(&rec).expect("recommendation serializes"));
        }
        Command::EvalU2a => {
            pipeline::eval_u2a(&cfg, exec)?;
        }
        Command::EvalA2a => {
            pipeline::eval_a2a(&cfg)?;
        }
        Command::Retrieve { query, k } => {
            for (rank, (id, score)) in pipeline::retrieve(&cfg, &query, k)?.into_iter().enumerate() {
                println!("{}\t{id}\t{score:.6}", rank + 1);
            }
        }
        Command::Report => {
            let report = pipeline::report(&cfg)?;
            print!("{}", report.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("event=failed error={:?}", e.to_string());
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { EXIT_USAGE } else { EXIT_DATA })
        }
    }
}
