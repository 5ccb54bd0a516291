use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcd_cli::commands::{self, CRITIC_DCD_FILE, CRITIC_FILE, GENERATOR_FILE};
use dcd_cli::{CliError, Experiment, Overrides};

#[derive(Parser)]
#[command(name = "dcd", version, about = "Discriminator contrastive divergence on 2D mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Langevin preset for `finetune` and `sample`.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train a generator and critic.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a trained critic against Langevin samples.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Defaults to generator.json in the output directory.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Defaults to critic.json in the output directory.
        #[arg(long)]
        critic: Option<PathBuf>,
    },
    /// Draw samples with the configured chain.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Defaults to critic_dcd.json in the output directory.
        #[arg(long)]
        critic: Option<PathBuf>,
    },
    /// Mode coverage report for a sample file.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
    },
    /// Critic values on a grid, as CSV and PPM.
    Levelset {
        #[command(flatten)]
        common: Common,
        /// Defaults to critic_dcd.json in the output directory.
        #[arg(long)]
        critic: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<Experiment, CliError> {
    Experiment::load(
        &common.config,
        &Overrides {
            seed: common.seed,
            out_dir: common.out.clone(),
            preset: common.preset.clone(),
        },
    )
}

fn or_default(path: Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    path.unwrap_or_else(|| dir.join(name))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let print = |p: &Path| println!("{}", p.display());
    match cli.command {
        Command::Train { common } => {
            let out = commands::cmd_train(&load(&common)?)?;
            [&out.generator, &out.critic, &out.log]
                .into_iter()
                .for_each(|p| print(p));
        }
        Command::Finetune {
            common,
            generator,
            critic,
        } => {
            let exp = load(&common)?;
            let g = or_default(generator, &exp.out_dir, GENERATOR_FILE);
            let c = or_default(critic, &exp.out_dir, CRITIC_FILE);
            let out = commands::cmd_finetune(&exp, &g, &c)?;
            print(&out.critic);
            print(&out.log);
        }
        Command::Sample {
            common,
            generator,
            critic,
        } => {
            let exp = load(&common)?;
            let g = or_default(generator, &exp.out_dir, GENERATOR_FILE);
            let c = or_default(critic, &exp.out_dir, CRITIC_DCD_FILE);
            let out = commands::cmd_sample(&exp, &g, &c)?;
            print(&out.samples);
            if let Some(t) = &out.trajectory {
                print(t);
            }
        }
        Command::Evaluate { common, samples } => {
            let (path, _) = commands::cmd_evaluate(&load(&common)?, &samples)?;
            print(&path);
        }
        Command::Levelset { common, critic } => {
            let exp = load(&common)?;
            let c = or_default(critic, &exp.out_dir, CRITIC_DCD_FILE);
            let out = commands::cmd_levelset(&exp, &c)?;
            print(&out.csv);
            print(&out.pixmap);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
