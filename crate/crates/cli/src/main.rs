//! `ethd`: calibration, tapping and discrimination experiments on a
//! simulated haptic device.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Format, RunConfig};
use error::Result;

#[derive(Parser, Debug)]
#[command(
    name = "ethd",
    version,
    about = "Simulated haptic stiffness experiments"
)]
struct Cli {
    /// JSON config file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep commanded stiffness under a known weight and fit the compensator.
    Calibrate {
        /// Device preset: default or identity.
        #[arg(long)]
        device: Option<String>,
        /// Also write a 3 s trajectory at 1000 N/m.
        #[arg(long)]
        trajectory: bool,
    },
    /// Tap every plate at every stiffness and extract spectral features.
    Exp1 {
        /// Comma-separated plate labels (P1..P5 or designations like 60A).
        #[arg(long, value_delimiter = ',')]
        plates: Option<Vec<String>>,
        /// Comma-separated desired stiffness values, N/m.
        #[arg(long, value_delimiter = ',')]
        stiffness: Option<Vec<f64>>,
        /// Save the raw session for PLATE:K (repeatable).
        #[arg(long = "save-signal", value_parser = parse_cell)]
        save_signal: Vec<(String, f64)>,
    },
    /// Run the stiffness discrimination staircases.
    Exp2 {
        /// Staircase runs per plate/reference cell.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        plates: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        references: Option<Vec<f64>>,
    },
    /// Extract features from a recorded force signal (CSV `t_s,force_N`).
    Analyze {
        input: PathBuf,
        /// Analyse the whole record instead of the 3 to 10 s window.
        #[arg(long)]
        no_crop: bool,
        /// Sample rate, Hz, when the file has no usable time column.
        #[arg(long)]
        sample_rate: Option<f64>,
    },
    /// ANOVA on a long-format table: `factor,value` or `a,b,value`.
    Stats {
        input: PathBuf,
        #[arg(long)]
        interaction: bool,
        /// Permutations per pair for the one-way post-hoc tests.
        #[arg(long)]
        n_perm: Option<usize>,
    },
}

fn parse_cell(s: &str) -> std::result::Result<(String, f64), String> {
    let (p, k) = s
        .rsplit_once(':')
        .ok_or_else(|| format!("expected PLATE:K, got {s:?}"))?;
    let k: f64 = k.parse().map_err(|_| format!("bad stiffness {k:?}"))?;
    Ok((p.to_string(), k))
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    match &cli.command {
        Command::Calibrate { device, .. } => {
            if let Some(d) = device {
                cfg.device = commands::device_preset(d)?;
            }
        }
        Command::Exp1 {
            plates, stiffness, ..
        } => {
            if let Some(p) = plates {
                cfg.exp1.plates = Some(p.clone());
            }
            if let Some(k) = stiffness {
                cfg.exp1.stiffness = k.clone();
            }
        }
        Command::Exp2 {
            runs,
            plates,
            references,
        } => {
            if let Some(r) = runs {
                cfg.exp2.runs_per_cell = *r;
            }
            if let Some(p) = plates {
                cfg.exp2.plates = Some(p.clone());
            }
            if let Some(r) = references {
                cfg.exp2.references = r.clone();
            }
        }
        Command::Analyze { no_crop, .. } => {
            if *no_crop {
                cfg.analyze.crop = false;
            }
        }
        Command::Stats {
            interaction,
            n_perm,
            ..
        } => {
            if *interaction {
                cfg.stats.interaction = true;
            }
            if let Some(n) = n_perm {
                cfg.stats.n_perm = *n;
            }
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    let ctx = commands::Ctx {
        cfg,
        command: std::env::args().skip(1).collect(),
    };
    match &cli.command {
        Command::Calibrate { trajectory, .. } => commands::calibrate(&ctx, *trajectory),
        Command::Exp1 { save_signal, .. } => commands::exp1(&ctx, save_signal),
        Command::Exp2 { .. } => commands::exp2(&ctx),
        Command::Analyze {
            input, sample_rate, ..
        } => commands::analyze(&ctx, input, *sample_rate),
        Command::Stats { input, .. } => commands::stats(&ctx, input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ethd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
