use std::path::PathBuf;

use clap::{Parser, Subcommand};

use segstress::orchestrator::protocol::{serve_builtin, Task};

/// The built-in pixel-linear segmenter behind the manifest protocol.
#[derive(Parser)]
#[command(name = "segstress-baseline", version)]
struct Cli {
    #[command(subcommand)]
    task: TaskCmd,
}

#[derive(Subcommand)]
enum TaskCmd {
    Train {
        #[arg(long)]
        manifest: PathBuf,
    },
    Predict {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (task, manifest) = match &cli.task {
        TaskCmd::Train { manifest } => (Task::Train, manifest),
        TaskCmd::Predict { manifest } => (Task::Predict, manifest),
    };
    if let Err(e) = serve_builtin(task, manifest) {
        eprintln!("segstress-baseline: {e}");
        std::process::exit(2);
    }
}
