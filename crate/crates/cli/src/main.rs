use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bohmclock::{ErrorCategory, RunConfig};

mod commands;
mod emit;
mod plot;

#[derive(Parser, Debug)]
#[command(name = "bohmclock", version, about = "Arrival-time, transit-time and Larmor spin-clock distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, default_value = "configs/default.toml")]
    config: PathBuf,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides `run.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Also write SVG plots.
    #[arg(long, global = true, value_enum, default_value_t = Toggle::Off)]
    plots: Toggle,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Density, current and phase grids at the configured times.
    Packet,
    /// Sample paths and per-trajectory entry/exit times.
    Trajectories,
    /// Bohmian and current-density arrival distributions at x = d.
    Arrival,
    /// Transit-time distribution over the field region.
    Transit,
    /// Rotation-angle distributions and projection curves.
    Spin,
    /// Plane-wave scattering scans and the Larmor-limit table.
    Scatter,
    /// Run the invariant suite; nonzero exit on any failure.
    Validate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Packet => "packet",
            Command::Trajectories => "trajectories",
            Command::Arrival => "arrival",
            Command::Transit => "transit",
            Command::Spin => "spin",
            Command::Scatter => "scatter",
            Command::Validate => "validate",
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Regime => 3,
        ErrorCategory::Numeric => 4,
        ErrorCategory::Io => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let mut config = match RunConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(e.category()));
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let plots = cli.plots == Toggle::On;
    let result = match cli.command {
        Command::Validate => commands::validate(&config, &cli.out),
        cmd => commands::run(cmd.name(), &config, &cli.out, plots),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
