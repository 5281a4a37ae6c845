use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shadowtutor::cli::{self, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(version, about = "Key-frame distillation experiments for video segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled stream.
    Generate(Common),
    /// Pre-train a student checkpoint on a scene corpus.
    Pretrain(Common),
    /// Run one experiment and write its report.
    Run(Common),
    /// Print the closed-form latency, traffic and throughput bounds.
    Bounds(Common),
    /// Run the bandwidth sweep.
    Sweep(Common),
    /// Serve one socket-mode client.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::File { path: p.clone(), source })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Generate(c) | Command::Pretrain(c) | Command::Run(c) | Command::Bounds(c) | Command::Sweep(c) => c,
        Command::Serve { common, .. } => common,
    };
    let cfg = load(common)?;
    if common.dump_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match &cli.command {
        Command::Generate(_) => print_paths(&cli::cmd_generate(&cfg)?),
        Command::Pretrain(_) => print_paths(&cli::cmd_pretrain(&cfg)?),
        Command::Run(_) => {
            let (r, paths) = cli::cmd_run(&cfg)?;
            println!(
                "{}: {:.3} FPS, key frames {:.2}%, {:.3} Mbps, mIoU {:.4}",
                r.scenario, r.fps, r.key_ratio_pct, r.traffic_mbps, r.miou_mean
            );
            print_paths(&paths);
        }
        Command::Bounds(_) => print!("{}", cli::cmd_bounds(&cfg)?),
        Command::Sweep(_) => {
            let (reports, paths) = cli::cmd_sweep(&cfg)?;
            for r in &reports {
                println!("{:<40} {:>8.3} FPS {:>8.3} Mbps", r.scenario, r.fps, r.traffic_mbps);
            }
            print_paths(&paths);
        }
        Command::Serve { addr, .. } => cli::cmd_serve(&cfg, addr)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
