use std::path::PathBuf;
use std::process::ExitCode;

use bcalign_cli::commands::{cmd_convert, cmd_ingest, cmd_report, cmd_run, cmd_synth, IngestArgs, RunOverrides};
use bcalign_cli::CliError;
use bcalign_core::evaluation::render_summary;
use bcalign_core::SyntheticSpec;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bcalign", version, about = "Backward-compatible embedding versioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read an edge list and item features into a graph file.
    Ingest {
        /// Edge list: user, item, timestamp, rating.
        #[arg(long)]
        edges: PathBuf,
        /// Item features: item, brand, sub1|sub2|...
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = ',')]
        delimiter: char,
        /// Skip the first line of each file.
        #[arg(long)]
        header: bool,
    },
    /// Generate a planted low-rank synthetic graph.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        items: usize,
        #[arg(long, default_value_t = 20_000)]
        interactions: usize,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
        #[arg(long, default_value_t = 8)]
        latent_dim: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train and evaluate the configured methods.
    Run {
        /// TOML run configuration.
        config: PathBuf,
        /// Run directory; relative paths go under $BCALIGN_RUN_ROOT when set.
        #[arg(long, short, value_name = "DIR")]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// Comma-separated λ values; one report each.
        #[arg(long, value_delimiter = ',')]
        lambda_sweep: Option<Vec<f64>>,
        /// Comma-separated method keys, overriding the config.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        /// Methods trained in parallel; 1 is fully sequential.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Map an embedding table to an earlier version's space.
    Convert {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        registry: PathBuf,
        /// Target version, smaller than the table's.
        #[arg(long)]
        to: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print the summary tables of a run directory.
    Report { dir: PathBuf },
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Ingest {
            edges,
            features,
            out,
            delimiter,
            header,
        } => cmd_ingest(&IngestArgs {
            edges: &edges,
            features: features.as_deref(),
            out: &out,
            delimiter,
            header,
        }),
        Command::Synth {
            seed,
            users,
            items,
            interactions,
            feature_dim,
            latent_dim,
            out,
        } => cmd_synth(
            &SyntheticSpec {
                seed,
                num_users: users,
                num_items: items,
                num_interactions: interactions,
                feature_dim,
                latent_dim,
            },
            &out,
        ),
        Command::Run {
            config,
            output,
            seed,
            epochs,
            lambda,
            lambda_sweep,
            methods,
            workers,
        } => {
            let outcome = cmd_run(
                &config,
                &RunOverrides {
                    output,
                    seed,
                    epochs,
                    lambda,
                    lambda_sweep,
                    methods,
                    workers,
                },
            )?;
            let mut text = format!("run directory: {}\n", outcome.dir.display());
            for (lambda, rows) in &outcome.reports {
                if let Some(l) = lambda {
                    text.push_str(&format!("\nlambda = {l}\n"));
                }
                text.push_str(&render_summary(rows));
            }
            Ok(text)
        }
        Command::Convert { table, registry, to, out } => {
            let t = cmd_convert(&table, &registry, to, &out)?;
            Ok(format!(
                "wrote version-{} table ({} users, {} items, dim {}) to {}\n",
                t.version,
                t.users().len(),
                t.items().len(),
                t.dim(),
                out.display()
            ))
        }
        Command::Report { dir } => cmd_report(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
