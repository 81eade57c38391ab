use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mixlearn::experiments::{run_and_write, ExperimentConfig, ExperimentKind, Scale};
use mixlearn::Error;

#[derive(Parser)]
#[command(name = "mixlearn", version, about = "Seeded sample-complexity and convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Paper => Scale::Paper,
            ScaleArg::Desk => Scale::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    PhaseDiagram,
    MeanSweep,
    Convergence,
}

impl From<KindArg> for ExperimentKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::PhaseDiagram => ExperimentKind::PhaseDiagram,
            KindArg::MeanSweep => ExperimentKind::MeanSweep,
            KindArg::Convergence => ExperimentKind::Convergence,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        workers: Option<usize>,
        /// Grid preset for fields the config leaves out.
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
    },
    /// Print the built-in config for an experiment kind as TOML.
    Preset {
        #[arg(value_enum)]
        kind: KindArg,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_RUNTIME),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            scale,
        } => {
            let mut cfg = match ExperimentConfig::load(&config, scale.map(Scale::from)) {
                Ok(cfg) => cfg,
                Err(e) => return fail(&e),
            };
            if let Some(out) = out {
                cfg.output = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let workers = match workers {
                Some(0) => return fail(&Error::Config("--workers must be at least 1".into())),
                Some(w) => w,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
            match run_and_write(&cfg, workers) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Preset { kind, scale } => {
            let cfg = ExperimentConfig::preset(kind.into(), scale.into());
            match cfg.to_toml() {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
    }
}
