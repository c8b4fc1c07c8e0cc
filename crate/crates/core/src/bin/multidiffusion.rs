use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multidiffusion::cli::{self, RunConfig};

#[derive(Parser)]
#[command(
    version,
    about = "Fused diffusion sampling over overlapping or masked views"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wide or tall canvas from sliding windows that share one prompt.
    Panorama(Options),
    /// Per-region prompts from masks given in a config file.
    Region(Options),
    /// A single view covering the canvas (plain reference sampling).
    Sample(Options),
    /// Region IoU with and without bootstrapping over consecutive seeds.
    Ablate(Options),
}

#[derive(Args)]
struct Options {
    /// Flat key = value config; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// ancestral | deterministic
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step report: `t loss max_residual` per line.
    #[arg(long)]
    report: Option<PathBuf>,
    /// key=value metrics file.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Window side, or HxW.
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    prompt: Option<String>,
    /// Any other config key, as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn pairs(command: &str, o: &Options) -> Result<Vec<(String, String)>, String> {
    let mut pairs = match &o.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            cli::parse_pairs(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => Vec::new(),
    };
    pairs.push(("command".into(), command.into()));
    let flags = [
        ("seed", o.seed.map(|v| v.to_string())),
        ("steps", o.steps.map(|v| v.to_string())),
        ("mode", o.mode.clone()),
        ("threads", o.threads.map(|v| v.to_string())),
        ("out", o.out.as_ref().map(|p| p.display().to_string())),
        ("report", o.report.as_ref().map(|p| p.display().to_string())),
        (
            "metrics",
            o.metrics.as_ref().map(|p| p.display().to_string()),
        ),
        ("height", o.height.map(|v| v.to_string())),
        ("width", o.width.map(|v| v.to_string())),
        ("window", o.window.clone()),
        ("stride", o.stride.map(|v| v.to_string())),
        ("prompt", o.prompt.clone()),
    ];
    pairs.extend(
        flags
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v))),
    );
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        pairs.push((k.trim().into(), v.trim().into()));
    }
    Ok(pairs)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, options) = match &cli.command {
        Command::Panorama(o) => ("panorama", o),
        Command::Region(o) => ("region", o),
        Command::Sample(o) => ("sample", o),
        Command::Ablate(o) => ("ablate", o),
    };
    let result = pairs(name, options).and_then(|pairs| {
        let base = options
            .config
            .as_ref()
            .and_then(|p| p.parent().map(PathBuf::from));
        let config = RunConfig::from_pairs(&pairs, base.as_deref()).map_err(|e| e.to_string())?;
        cli::run(&config).map_err(|e| e.to_string())
    });
    match result {
        Ok(summary) => {
            if summary.latent.is_none() {
                for (k, v) in &summary.metrics {
                    println!("{k}={v}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
