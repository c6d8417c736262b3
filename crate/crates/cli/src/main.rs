use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hsnet::analyzer::{self, SweepWidthRule};
use hsnet::data::{load_cifar10_file, load_cifar10_split, Split, CIFAR_TEST_FILE};
use hsnet::gradcheck::audit_network;
use hsnet::hs::{channel_plan, HsBlockConfig, HsVariant};
use hsnet::net::{NetworkConfig, HS_PRESETS};
use hsnet::train::{self, RunFiles, TrainConfig};

#[derive(Parser)]
#[command(
    name = "hsnet",
    version,
    about = "Hierarchical-split networks on the CPU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the channel plan of one HS stage.
    Plan {
        #[arg(long)]
        s: usize,
        #[arg(long)]
        w: usize,
        #[arg(long, default_value = "b-preserve")]
        variant: HsVariant,
        #[arg(long)]
        json: bool,
    },
    /// Parameter and FLOP breakdown of a network.
    Analyze {
        #[command(flatten)]
        net: NetArgs,
        /// Input resolution; defaults to the config's.
        #[arg(long)]
        image_size: Option<usize>,
        /// Include one row per layer.
        #[arg(long)]
        layers: bool,
        #[arg(long)]
        json: bool,
    },
    /// Sweep the HS presets and compare against the published budgets.
    Reconcile {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 224)]
        image_size: usize,
        /// Width rules to sweep (comma separated).
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "double-per-stage,constant"
        )]
        width_rules: Vec<SweepWidthRule>,
    },
    /// Train from a JSON config, writing logs and checkpoints to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on CIFAR-10 binary data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A CIFAR-10 directory (test split) or a single batch file.
        #[arg(long)]
        data: PathBuf,
        /// Training config; defaults to config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference audit of backprop on a freshly built network.
    Gradcheck {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct NetArgs {
    /// Network config JSON (a training config is accepted too).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named network, e.g. resnet50, hs-28w-6s, tiny-hs.
    #[arg(long)]
    preset: Option<String>,
}

impl NetArgs {
    fn resolve(&self, default_preset: &str) -> Result<NetworkConfig> {
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => read_network_config(path)?,
            (None, Some(name)) => NetworkConfig::preset(name)?,
            (None, None) => NetworkConfig::preset(default_preset)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_network_config(path: &Path) -> Result<NetworkConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| hsnet::Error::Config(format!("{}: {e}", path.display())))?;
    if value.get("network").is_some() {
        return Ok(TrainConfig::from_json(&text)?.network.resolve()?);
    }
    serde_json::from_value(value)
        .map_err(|e| hsnet::Error::Config(format!("{}: {e}", path.display())).into())
}

fn plan(s: usize, w: usize, variant: HsVariant, json: bool) -> Result<()> {
    let plan = channel_plan(&HsBlockConfig::new(s, w).with_variant(variant))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&plan)?);
        return Ok(());
    }
    println!("hs stage s={s} w={w} ({variant})");
    println!(
        "{:>5} {:>8} {:>9} {:>8} {:>5}",
        "group", "conv_in", "conv_out", "forward", "out"
    );
    let dash = || "-".to_string();
    for i in 1..=s {
        let (cin, cout) = if i == 1 {
            (dash(), dash())
        } else {
            (
                plan.conv_in[i - 2].to_string(),
                plan.conv_out[i - 2].to_string(),
            )
        };
        let fwd = match i {
            1 if plan.head_fwd > 0 => plan.head_fwd.to_string(),
            i if i >= 2 && i < s => plan.fwd[i - 2].to_string(),
            _ => dash(),
        };
        println!("{i:>5} {cin:>8} {cout:>9} {fwd:>8} {:>5}", plan.out[i - 1]);
    }
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    println!(
        "conv_in [{}]  fwd [{}]",
        list(&plan.conv_in),
        list(&plan.fwd)
    );
    println!(
        "out [{}]  Σ = {}  (s·w = {})",
        list(&plan.out),
        plan.total_out(),
        s * w
    );
    Ok(())
}

fn eval_config_path(checkpoint: &Path, config: Option<PathBuf>) -> PathBuf {
    config.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(RunFiles::CONFIG)
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan {
            s,
            w,
            variant,
            json,
        } => plan(s, w, variant, json)?,
        Command::Analyze {
            net,
            image_size,
            layers,
            json,
        } => {
            let cfg = net.resolve("tiny-hs")?;
            let report = analyzer::assemble(&cfg, image_size.unwrap_or(cfg.image_size))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text(layers));
            }
        }
        Command::Reconcile {
            out,
            image_size,
            width_rules,
        } => {
            let presets: Vec<&str> = HS_PRESETS.iter().map(|(n, _, _)| *n).collect();
            let table = analyzer::reconcile(&presets, &HsVariant::ALL, &width_rules, image_size)?;
            let file =
                fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            table.write_csv(file)?;
            print!("{}", table.to_text());
            println!("wrote {}", out.display());
        }
        Command::Train { config, out, quiet } => {
            let cfg = TrainConfig::from_file(&config)?;
            let outcome = train::train(&cfg, Some(&out), |row| {
                if !quiet {
                    println!(
                        "epoch {:>3}  lr {:.5}  loss {:.4}  train {:.2}%  eval {:.2}% (top-5 {:.2}%)",
                        row.epoch,
                        row.lr,
                        row.train_loss,
                        100.0 * row.train_acc,
                        100.0 * row.eval_acc,
                        100.0 * row.eval_top5
                    );
                    let _ = std::io::stdout().flush();
                }
            })?;
            println!(
                "best eval {:.2}% at epoch {}; outputs in {}",
                100.0 * outcome.best_eval_acc,
                outcome.best_epoch,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            config,
            batch_size,
            json,
        } => {
            let cfg_path = eval_config_path(&checkpoint, config);
            let cfg = TrainConfig::from_file(&cfg_path)?;
            let mut net = train::load_network(&cfg.network.resolve()?, &checkpoint)?;
            let dataset = if data.is_dir() && data.join(CIFAR_TEST_FILE).exists() {
                load_cifar10_split(&data, Split::Test, None)?
            } else if data.is_dir() {
                bail!("{} has no {CIFAR_TEST_FILE}", data.display());
            } else {
                load_cifar10_file(&data, None)?
            };
            let r = train::evaluate(&mut net, &dataset, &cfg.normalization, batch_size)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!(
                    "{} images  top-1 {:.2}%  top-5 {:.2}%  loss {:.4}",
                    r.examples,
                    100.0 * r.top1,
                    100.0 * r.top5,
                    r.loss
                );
            }
        }
        Command::Gradcheck {
            net,
            samples,
            seed,
            tolerance,
        } => {
            let cfg = net.resolve("tiny-hs")?;
            let report = audit_network(&cfg, samples, seed, tolerance)?;
            for p in &report.probes {
                println!(
                    "{:<40} [{:>6}]  analytic {:+.6e}  numeric {:+.6e}  rel {:.2e}",
                    p.name, p.index, p.analytic, p.numeric, p.rel_error
                );
            }
            println!(
                "{} probes, max relative error {:.3e} (tolerance {:.1e})",
                report.probes.len(),
                report.max_rel_error,
                report.tolerance
            );
            if !report.passed {
                bail!("gradient check failed");
            }
            println!("PASS");
        }
    }
    Ok(())
}

/// Usage-class failures (bad configs or arguments) exit with 2, everything
/// else with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hsnet::Error>() {
        Some(hsnet::Error::Config(_) | hsnet::Error::Argument(_)) => 2,
        _ => 1,
    }
}

/// The error chain joined by `: `, skipping causes a message already
/// spells out.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
