use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semctx_cli::commands::{cmd_build_hierarchy, cmd_eval, cmd_gen_synth, cmd_infill, cmd_train, CHECKPOINT_FILE};
use semctx_cli::config::ExperimentConfig;
use semctx_cli::synth::SynthSpec;
use semctx_cli::CliError;

#[derive(Parser)]
#[command(name = "semctx", version, about = "Context-derived label hierarchies for patch-based scene labeling")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-subclass dataset to <out>/train and <out>/test.
    GenSynth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 2)]
        contexts: usize,
        #[arg(long, default_value_t = 200)]
        images: usize,
        #[arg(long, default_value_t = 40)]
        test_images: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0.58)]
        rare_fraction: f64,
    },
    /// Build the label hierarchy and subclass labels for the training set.
    BuildHierarchy,
    /// Train with the configured strategy.
    Train,
    /// Score a checkpoint on the test split.
    Eval {
        /// Defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference checkpoint for a per-class delta report.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Fill unlabelled pixels of sparsely labelled images.
    Infill {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenSynth {
            classes,
            contexts,
            images,
            test_images,
            size,
            noise,
            rare_fraction,
        } => {
            let (seed, out) = match (&cli.config, cli.seed, &cli.out) {
                (_, Some(seed), Some(out)) => (seed, out.clone()),
                (Some(_), _, _) => {
                    let cfg = load_config(&cli)?;
                    (cfg.seed, cfg.out)
                }
                _ => return Err(CliError::Usage("gen-synth needs --seed and --out, or --config".into())),
            };
            let spec = SynthSpec {
                classes: *classes,
                contexts: *contexts,
                images: *images,
                size: *size,
                noise: *noise,
                rare_fraction: *rare_fraction,
                seed,
                ..SynthSpec::default()
            };
            cmd_gen_synth(&spec, *test_images, &out)?;
            println!("wrote {} training and {} test images to {}", images, test_images, out.display());
        }
        Command::BuildHierarchy => {
            let cfg = load_config(&cli)?;
            let b = cmd_build_hierarchy(&cfg)?;
            println!(
                "{} classes, {} subclasses; wrote {}",
                b.hierarchy.num_classes(),
                b.hierarchy.num_subclasses(),
                cfg.out.display()
            );
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let t = cmd_train(&cfg)?;
            let last = t.report.rows.last().map_or(f64::NAN, |r| r.total);
            println!("{} iterations, final loss {last:.4}; wrote {}", t.model.steps(), cfg.out.display());
        }
        Command::Eval { checkpoint, compare } => {
            let cfg = load_config(&cli)?;
            let ckpt = checkpoint.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE));
            let e = cmd_eval(&cfg, &ckpt, compare.as_deref())?;
            println!("per-pixel {:.4}, per-class {:.4}", e.accuracy.per_pixel, e.accuracy.per_class);
            if let Some(r) = e.compared {
                println!("reference per-pixel {:.4}, per-class {:.4}", r.per_pixel, r.per_class);
            }
        }
        Command::Infill { checkpoint } => {
            let cfg = load_config(&cli)?;
            let filled = cmd_infill(&cfg, checkpoint)?;
            println!("filled {} images", filled.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
