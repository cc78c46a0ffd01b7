use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loopynet::backprop::GradCheckSpec;
use loopynet::cli::{cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, cmd_tree};
use loopynet::config::RunConfig;

#[derive(Parser)]
#[command(name = "loopynet", version, about = "Loopy neural networks trained over extracted rooted spanning trees")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the configured graph and write the params JSON file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate metrics (JSON by default, a table with --table).
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Run the full k-fold protocol instead of a single split.
        #[arg(long)]
        cv: bool,
        /// Print an aligned MSE/MAE/LRS table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cases: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Relative-error failure threshold.
        #[arg(long)]
        tol: Option<f64>,
        /// Worker threads for independent cases.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Dump the spanning tree rooted at a node's output neuron as JSON.
    Tree {
        #[arg(long)]
        config: PathBuf,
        /// Node id whose output neuron roots the tree.
        #[arg(long)]
        root: String,
        /// Hop radius; overrides the config's model.g_hops.
        #[arg(long)]
        g: Option<usize>,
    },
    /// Write the configured synthetic graph as edge list + CSVs.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Cmd) -> loopynet::Result<i32> {
    match cmd {
        Cmd::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            let mut stdout = std::io::stdout();
            cmd_train(&cfg, &mut stdout)?;
            Ok(0)
        }
        Cmd::Eval { config, cv, table } => {
            let cfg = RunConfig::load(&config)?;
            let report = cmd_eval(&cfg, cv)?;
            if table {
                print!("{}", report.to_table("lnn"));
            } else {
                println!("{}", serde_json::to_string(&report).expect("metrics JSON"));
            }
            Ok(0)
        }
        Cmd::Gradcheck { config, cases, seed, tol, jobs } => {
            // The config is accepted for interface symmetry and validated
            // when present; the suite itself is self-contained.
            if let Some(path) = config {
                let _ = RunConfig::load(&path)?;
            }
            let defaults = GradCheckSpec::default();
            let spec = GradCheckSpec {
                cases: cases.unwrap_or(defaults.cases),
                seed: seed.unwrap_or(defaults.seed),
                tol: tol.unwrap_or(defaults.tol),
                ..defaults
            };
            let (report, ok) = cmd_gradcheck(&spec, jobs)?;
            println!("{}", serde_json::to_string(&report).expect("gradcheck JSON"));
            Ok(if ok { 0 } else { 4 })
        }
        Cmd::Tree { config, root, g } => {
            let cfg = RunConfig::load(&config)?;
            println!("{}", cmd_tree(&cfg, &root, g)?);
            Ok(0)
        }
        Cmd::Synth { config, out } => {
            let cfg = RunConfig::load(&config)?;
            cmd_synth(&cfg, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
