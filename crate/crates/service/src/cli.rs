use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use maskforge::synth::SynthSpec;

use crate::api::{serve, AppState};
use crate::config::resolve_config;
use crate::error::{Result, ServiceError};
use crate::workspace::{self, Layout};

#[derive(Debug, Parser)]
#[command(name = "maskforge", version, about = "Collaborative annotation of object masks")]
pub struct Cli {
    /// Config file (TOML or JSON); overrides MASKFORGE_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more detail; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build PCA models and dictionaries for every unannotated set.
    Init { manifest: PathBuf, workspace: PathBuf },
    /// Serve the annotation API.
    Serve {
        workspace: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Annotate every prepared set with the simulated annotator.
    Simulate {
        workspace: PathBuf,
        /// Never learn from corrections.
        #[arg(long)]
        no_flip_dict: bool,
        /// Restrict to these sets.
        #[arg(long = "set")]
        sets: Vec<String>,
    },
    /// Score a directory of predicted masks against the reference masks.
    Eval { workspace: PathBuf, predictions: PathBuf },
    /// Compare verification results after zero, one and two click-collection splits.
    Evolve { workspace: PathBuf, set: String },
    /// Write a synthetic dataset.
    Generate {
        #[arg(value_enum)]
        preset: Preset,
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    EndToEnd,
    Evolvability,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let explicit = cli.config.as_deref();
    match cli.command {
        Command::Init { manifest, workspace } => {
            let cfg = resolve_config(explicit, None)?;
            print_json(&workspace::init(&manifest, &workspace, &cfg)?)
        }
        Command::Serve { workspace, port, host } => {
            let cfg = resolve_config(explicit, Some(&workspace))?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| ServiceError::Data(format!("bad address {host}:{port}: {e}")))?;
            let state = Arc::new(AppState::open(Layout::new(workspace), cfg)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime
                .block_on(serve(state, addr))
                .map_err(|e| ServiceError::Internal(e.to_string()))
        }
        Command::Simulate { workspace, no_flip_dict, sets } => {
            let cfg = resolve_config(explicit, Some(&workspace))?;
            print_json(&workspace::simulate(&Layout::new(workspace), &sets, !no_flip_dict, &cfg)?)
        }
        Command::Eval { workspace, predictions } => {
            let report = workspace::eval(&Layout::new(workspace), &predictions)?;
            println!(
                "{} images, mean P {:.4}, mean R {:.4}, mean F {:.4}, {} missing",
                report.images.len(),
                report.mean_precision,
                report.mean_recall,
                report.mean_f,
                report.missing.len()
            );
            Ok(())
        }
        Command::Evolve { workspace, set } => {
            let cfg = resolve_config(explicit, Some(&workspace))?;
            let report = workspace::evolve(&Layout::new(workspace), &set, &cfg)?;
            for c in &report.conditions {
                println!(
                    "{:>4}: init F {:.4}, final F {:.4}, {} clicks, {:.1} auto-flips per image",
                    c.condition.split_label,
                    c.aggregates.init_f,
                    c.aggregates.final_f,
                    c.aggregates.total_clicks,
                    c.aggregates.auto_flips
                );
            }
            Ok(())
        }
        Command::Generate { preset, out, seed } => {
            let seed = match seed {
                Some(s) => s,
                None => resolve_config(explicit, None)?.seed,
            };
            let spec = match preset {
                Preset::EndToEnd => SynthSpec::end_to_end(seed),
                Preset::Evolvability => SynthSpec::evolvability(seed),
            };
            let manifest = spec.generate(&out)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}
