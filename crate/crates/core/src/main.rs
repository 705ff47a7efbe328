use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dmba::harness::{
    gradient_suite, load_bank, operator_suite, run_experiment, run_grid, simulate_dataset, train_awgn_bank,
    train_deq_prior, ExperimentConfig,
};
use dmba::{DmbaError, Result};

#[derive(Parser)]
#[command(name = "dmba", version, about = "Model-based reconstruction with learned priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment configuration; defaults are used for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `experiment.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Choose the AWGN noise level and tau on the test images.
    #[arg(long, global = true)]
    oracle_sigma_select: bool,

    /// Reconstruct data simulated with `experiment.data_operator` using the
    /// inference operator.
    #[arg(long, global = true)]
    mismatched_inference: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write test images, back projections and the operator to the output directory.
    Simulate,
    /// Train the AWGN denoiser bank.
    TrainDenoiser,
    /// Train the deep-equilibrium prior from the bank named in the config.
    TrainDeq,
    /// Run one scored reconstruction experiment.
    Reconstruct,
    /// Run every inference operator against every configured prior.
    EvalGrid,
    /// Check operators and gradients against their oracles.
    Gradcheck,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.experiment.out_dir = out.clone();
    }
    cfg.experiment.oracle_sigma_select |= cli.oracle_sigma_select;
    cfg.experiment.mismatched_inference |= cli.mismatched_inference;
    cfg.resolve()
}

fn run(cli: &Cli) -> Result<bool> {
    if let Command::Gradcheck = cli.command {
        let seed = cli.seed.unwrap_or(0);
        let mut ok = true;
        for check in operator_suite(seed)?.into_iter().chain(gradient_suite(seed)?) {
            println!("{check}");
            ok &= check.passed();
        }
        return Ok(ok);
    }
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Simulate => {
            for (name, db) in simulate_dataset(&cfg)? {
                println!("{name}: back projection {db:.3} dB");
            }
        }
        Command::TrainDenoiser => {
            let (bank, manifest) = train_awgn_bank(&cfg)?;
            println!("trained {} denoisers; manifest {}", bank.len(), manifest.display());
        }
        Command::TrainDeq => {
            let manifest = cfg
                .experiment
                .bank_manifest
                .clone()
                .ok_or_else(|| DmbaError::Config("train-deq needs `bank_manifest` in [experiment]".into()))?;
            let bank = load_bank(&manifest, &cfg)?;
            let (_, path, log) = train_deq_prior(&cfg, &bank)?;
            println!(
                "saved {} (loss {:.4e} -> {:.4e}, {} samples skipped)",
                path.display(),
                log.first_loss().unwrap_or(f64::NAN),
                log.last_loss().unwrap_or(f64::NAN),
                log.total_skipped()
            );
        }
        Command::Reconstruct => {
            let s = run_experiment(&cfg)?.summary;
            println!(
                "{}: {} prior under {}, mean {:.3} dB, {}/{} converged",
                s.experiment_id, s.prior, s.infer_desc, s.mean_psnr_db, s.converged, s.images
            );
        }
        Command::EvalGrid => {
            for o in run_grid(&cfg)? {
                let s = o.summary;
                println!("{}: {:.3} dB", s.experiment_id, s.mean_psnr_db);
            }
        }
        Command::Gradcheck => unreachable!("handled above"),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
