//! `playlabel` — batch annotation of robot demonstration streams.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use playlabel::cli::{
    cmd_eval_grounding, cmd_eval_keystates, cmd_inspect, cmd_label, cmd_synth, CliError,
};
use playlabel::config::Config;
use playlabel::evaluator::GroundingMode;

#[derive(Parser)]
#[command(
    name = "playlabel",
    version,
    about = "Segments long-horizon robot demonstrations into labeled single-task windows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; omitted sections take built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the keystate acceptance threshold.
    #[arg(long)]
    keystate_threshold: Option<f64>,
    /// Override the keystate merge window (frames).
    #[arg(long)]
    merge_window: Option<u64>,
    /// Override the label confidence floor (0..=10).
    #[arg(long)]
    min_conf: Option<f64>,
    /// Use the deterministic file-backed mock client.
    #[arg(long)]
    mock: Option<bool>,
    /// Override the label endpoint URL (implies a live client).
    #[arg(long)]
    endpoint: Option<String>,
    /// Override the model name for the live client.
    #[arg(long)]
    model: Option<String>,
    /// Worker cap for episode-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Comma-separated heuristics to enable (default: all five).
    #[arg(long, value_delimiter = ',')]
    heuristics: Option<Vec<String>>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(v) = self.keystate_threshold {
            config.keystates.keystate_threshold = v;
        }
        if let Some(v) = self.merge_window {
            config.keystates.merge_window = v;
        }
        if let Some(v) = self.min_conf {
            config.labeler.min_conf = v;
        }
        if let Some(v) = self.mock {
            config.labeler.mock = v;
        }
        if let Some(v) = &self.endpoint {
            config.labeler.endpoint = v.clone();
            config.labeler.mock = false;
        }
        if let Some(v) = &self.model {
            config.labeler.model = v.clone();
        }
        if let Some(v) = self.jobs {
            config.run.jobs = v;
        }
        if let Some(hs) = &self.heuristics {
            let mut enabled = Vec::new();
            for h in hs {
                let parsed = playlabel::keystates::Heuristic::parse(h)
                    .ok_or_else(|| CliError::Invalid(format!("unknown heuristic {h:?}")))?;
                enabled.push(parsed);
            }
            config.keystates.enabled = enabled;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over a directory of episode files.
    Label {
        /// Directory of episode index files (*.jsonl with sidecars).
        episodes: PathBuf,
        /// Output directory for per-episode artifacts and the manifest.
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predicted keystates against ground truth.
    EvalKeystates {
        /// Directory holding *.keystates.tsv predictions.
        pred: PathBuf,
        /// Directory holding *.gt.tsv ground truth.
        gt: PathBuf,
        /// Frame tolerances.
        #[arg(long, value_delimiter = ',', default_value = "8,16")]
        eps: Vec<u64>,
        /// Also write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score generated labels against ground-truth tasks.
    EvalGrounding {
        /// Directory holding *.labels.tsv predictions.
        labels: PathBuf,
        /// Directory holding *.gt.tsv ground truth.
        gt: PathBuf,
        /// amb: any candidate may match; single: ambiguous counts as wrong.
        #[arg(long, default_value = "amb")]
        mode: String,
        /// Alignment tolerance between segment ends and keystates.
        #[arg(long, default_value_t = 8)]
        eps: u64,
        /// Also write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic episodes with ground truth from a script.
    Synth {
        /// Script file (line-delimited JSON).
        script: PathBuf,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
        /// Number of episodes (seeds increment from the script's).
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Pretty-print any artifact file.
    Inspect { path: PathBuf },
}

fn run() -> Result<u8, CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Label { episodes, out, config } => {
            let config = config.resolve()?;
            let summary = cmd_label(&episodes, &config, &out)?;
            eprintln!(
                "labeled {} episodes, {} failed; outputs in {}",
                summary.processed,
                summary.failed,
                out.display()
            );
            Ok(if summary.failed > 0 { 1 } else { 0 })
        }
        Command::EvalKeystates { pred, gt, eps, out } => {
            let report = cmd_eval_keystates(&pred, &gt, &eps)?;
            println!("{}", report.render());
            if let Some(out) = out {
                std::fs::write(&out, report.machine_lines())
                    .map_err(|source| CliError::Io { path: out, source })?;
            }
            Ok(0)
        }
        Command::EvalGrounding { labels, gt, mode, eps, out } => {
            let mode = GroundingMode::parse(&mode)
                .ok_or_else(|| CliError::Invalid(format!("unknown mode {mode:?}")))?;
            let report = cmd_eval_grounding(&labels, &gt, mode, eps)?;
            println!("{}", report.render());
            if let Some(out) = out {
                std::fs::write(&out, report.machine_lines())
                    .map_err(|source| CliError::Io { path: out, source })?;
            }
            Ok(0)
        }
        Command::Synth { script, out, count } => {
            let ids = cmd_synth(&script, &out, count)?;
            eprintln!("generated {} episodes in {}", ids.len(), out.display());
            Ok(0)
        }
        Command::Inspect { path } => {
            print!("{}", cmd_inspect(&path)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
