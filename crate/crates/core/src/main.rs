use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use timeemb::cli::{self, Manifest};
use timeemb::model::ModelConfig;
use timeemb::{verify, Error, Result};

#[derive(Parser)]
#[command(name = "timeemb", version, about = "Time-invariant spectral embeddings for multivariate forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ManifestArgs {
    /// TOML run manifest.
    manifest: PathBuf,
    /// Override a manifest key, e.g. `--set train.learning_rate=0.002`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated seeds, replacing `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Dataset CSV, replacing `dataset.path`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ManifestArgs {
    fn load(&self) -> Result<Manifest> {
        let mut o = self.overrides.clone();
        if !self.seeds.is_empty() {
            let list: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
            o.push(format!("run.seeds=[{}]", list.join(",")));
        }
        if let Some(d) = &self.data {
            o.push(format!("dataset.path={}", toml_string(d)));
        }
        if let Some(d) = &self.out {
            o.push(format!("run.output_dir={}", toml_string(d)));
        }
        Manifest::load(&self.manifest, &o)
    }
}

fn toml_string(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

#[derive(Subcommand)]
enum Command {
    /// Train the manifest's variant for every seed and record test metrics.
    Train(ManifestArgs),
    /// Test metrics of a saved checkpoint.
    Evaluate {
        #[command(flatten)]
        args: ManifestArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and test a list of variants, e.g. `full random zero mean no_filter`.
    Ablate {
        #[command(flatten)]
        args: ManifestArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<String>,
    },
    /// Run the transform identities and gradient checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        perturb_filter_grad: bool,
    },
    /// Write spectra, invariant and residual components, banks and filter as CSV.
    ExportComponents {
        #[command(flatten)]
        args: ManifestArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        windows: Vec<usize>,
        #[arg(long = "to")]
        to: PathBuf,
    },
    /// Print the trainable parameter breakdown of a manifest's model.
    ParamCount {
        #[command(flatten)]
        args: ManifestArgs,
        #[arg(long)]
        variant: Option<String>,
    },
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train(a) => {
            let m = a.load()?;
            let variant = m.run.variant.clone();
            for r in cli::run_experiment(&m, &[variant], &cli::results_root())? {
                println!("{} {} seed {}: mse {:.4} mae {:.4}", r.dataset, r.variant, r.seed, r.mse, r.mae);
            }
        }
        Command::Ablate { args, variants } => {
            let m = args.load()?;
            for r in cli::run_experiment(&m, &variants, &cli::results_root())? {
                println!("{} {} seed {}: mse {:.4} mae {:.4}", r.dataset, r.variant, r.seed, r.mse, r.mae);
            }
        }
        Command::Evaluate { args, checkpoint } => {
            let m = args.load()?;
            let met = cli::evaluate_checkpoint(&m, &checkpoint, m.run.seeds[0])?;
            println!("mse {:.6} mae {:.6} windows {}", met.mse, met.mae, met.n_windows);
        }
        Command::Verify { seed, perturb_filter_grad } => {
            let report = verify::run_suite(seed, perturb_filter_grad)?;
            print!("{}", report.render());
            return Ok(report.passed());
        }
        Command::ExportComponents {
            args,
            checkpoint,
            split,
            windows,
            to,
        } => {
            let m = args.load()?;
            cli::export_components(&m, &checkpoint, &split, &windows, &to)?;
            println!("wrote components for {} windows to {}", windows.len(), to.display());
        }
        Command::ParamCount { args, variant } => {
            let m = args.load()?;
            let channels = m
                .model
                .channels
                .ok_or_else(|| Error::Config {
                    field: "model.channels".into(),
                    reason: "required to count parameters".into(),
                })?;
            let mut cfg: ModelConfig = m.model.to_config(channels)?;
            if let Some(v) = variant {
                cfg = cli::parse_variant(&v)?.apply(cfg);
            }
            cfg.validate()?;
            let (banks, filter, backbone, total) = cli::parameter_breakdown(&cfg);
            println!("banks    {banks}\nfilter   {filter}\nbackbone {backbone}\ntotal    {total}");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
