//! `fids`: command-line driver for the federated intrusion detection pipeline.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "fids", version, about = "Federated intrusion detection over network-flow datasets")]
struct Cli {
    /// `key = value` config file; flags override its values.
    #[arg(long, global = true, env = "FIDS_CONFIG")]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Every config key as a flag. Values use the config file syntax.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Input flow table (CSV with a header row).
    #[arg(long, global = true, value_name = "PATH")]
    dataset_path: Option<String>,
    #[arg(long, global = true, value_name = "NAME")]
    label_column: Option<String>,
    /// Class order: comma-separated names, `cic-ids2017`, or `auto`.
    #[arg(long, global = true, value_name = "LIST")]
    labels: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Oversampling targets, e.g. `Bot:20000,Infiltration:20036`.
    #[arg(long, global = true, value_name = "LIST")]
    smote_targets: Option<String>,
    #[arg(long, global = true)]
    k_neighbors: Option<String>,
    /// Share of each class dropped as outliers.
    #[arg(long, global = true)]
    contamination: Option<String>,
    #[arg(long, global = true)]
    n_trees: Option<String>,
    #[arg(long, global = true)]
    subsample_size: Option<String>,
    /// Tree depths to search, comma-separated.
    #[arg(long, global = true, value_name = "LIST")]
    depths: Option<String>,
    /// Boosting iteration counts to search, comma-separated.
    #[arg(long, global = true, value_name = "LIST")]
    iterations: Option<String>,
    /// Learning rates to search, comma-separated.
    #[arg(long, global = true, value_name = "LIST")]
    learning_rates: Option<String>,
    #[arg(long, global = true)]
    max_rounds: Option<String>,
    /// Stop once server accuracy improves by less than this; 0 disables.
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long, global = true)]
    train_fraction: Option<String>,
    #[arg(long, global = true)]
    validation_fraction: Option<String>,
    #[arg(long, global = true)]
    l2_leaf_reg: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<String>,
    /// Directory holding part1.csv, part2.csv and part_server.csv.
    #[arg(long, global = true, value_name = "DIR")]
    parts_dir: Option<String>,
    /// `inproc` or `tcp`.
    #[arg(long, global = true)]
    transport: Option<String>,
    #[arg(long, global = true)]
    host: Option<String>,
    #[arg(long, global = true)]
    port: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 22] {
        [
            ("dataset_path", &self.dataset_path),
            ("label_column", &self.label_column),
            ("labels", &self.labels),
            ("seed", &self.seed),
            ("smote_targets", &self.smote_targets),
            ("k_neighbors", &self.k_neighbors),
            ("contamination", &self.contamination),
            ("n_trees", &self.n_trees),
            ("subsample_size", &self.subsample_size),
            ("depths", &self.depths),
            ("iterations", &self.iterations),
            ("learning_rates", &self.learning_rates),
            ("max_rounds", &self.max_rounds),
            ("epsilon", &self.epsilon),
            ("train_fraction", &self.train_fraction),
            ("validation_fraction", &self.validation_fraction),
            ("l2_leaf_reg", &self.l2_leaf_reg),
            ("output_dir", &self.output_dir),
            ("parts_dir", &self.parts_dir),
            ("transport", &self.transport),
            ("host", &self.host),
            ("port", &self.port),
        ]
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clean, oversample, remove outliers and split the dataset into three parts.
    Prepare,
    /// Run edges and server in one process and write rounds.csv and final_models/.
    Simulate {
        /// Also write every protocol frame to this file.
        #[arg(long, value_name = "PATH")]
        transcript: Option<PathBuf>,
    },
    /// Score a model or ensemble file on a labelled CSV.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "PATH")]
        test: PathBuf,
    },
    /// Draw rounds.csv as an SVG bar chart and print a summary table.
    Report {
        /// Defaults to <output-dir>/rounds.csv.
        #[arg(long, value_name = "PATH")]
        rounds: Option<PathBuf>,
        /// Defaults to <output-dir>/report.svg.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Standalone TCP server.
    Serve {
        /// Number of edges to wait for each round.
        #[arg(long, default_value_t = 2)]
        edges: usize,
    },
    /// Standalone edge client.
    SendModel {
        #[arg(long, default_value_t = 1)]
        device_id: u32,
    },
    /// Write a synthetic labelled flow table.
    Generate {
        #[arg(long, value_name = "PATH")]
        output: PathBuf,
        /// Number of classes; omit for the seven-class traffic-shaped set.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| CliError::config(format!("--{}: {e}", key.replace('_', "-"))))?;
        }
    }
    match cli.command {
        Command::Prepare => commands::prepare(&cfg),
        Command::Simulate { transcript } => commands::simulate_cmd(&cfg, transcript.as_deref()),
        Command::Evaluate { model, test } => commands::evaluate(&cfg, &model, &test),
        Command::Report { rounds, output } => {
            let rounds = rounds.unwrap_or_else(|| cfg.output_dir.join("rounds.csv"));
            let output = output.unwrap_or_else(|| cfg.output_dir.join("report.svg"));
            commands::report(&rounds, &output)
        }
        Command::Serve { edges } => commands::serve(&cfg, edges),
        Command::SendModel { device_id } => commands::send_model(&cfg, device_id),
        Command::Generate { output, classes, per_class } => commands::generate(&cfg, &output, classes, per_class),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
