//! Serves a builtin simulator over the plugin protocol on stdin/stdout.

use std::io::{stdin, stdout, BufReader};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use asbi::simproto::{serve, serve_environment, EchoSimulator, Misbehavior, ServeEnd};
use asbi::simulators::{BoxCollision, Simulator, ToySimulator};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Choice {
    Toy,
    Box,
    Echo,
}

#[derive(Debug, Parser)]
#[command(name = "asbi-plugin", about = "Builtin simulator plugin for conformance testing")]
struct Args {
    simulator: Choice,
    /// Answer requests in a shuffled order.
    #[arg(long)]
    shuffle: bool,
    /// Exit with status 3 after this many responses.
    #[arg(long)]
    exit_after: Option<usize>,
    /// Announce a different protocol version.
    #[arg(long)]
    version_override: Option<u32>,
    /// Exit before sending hello.
    #[arg(long)]
    exit_immediately: bool,
    /// Append a spurious value to every observation.
    #[arg(long)]
    wrong_obs_dim: bool,
    /// Ignore request seeds.
    #[arg(long)]
    nondeterministic: bool,
    /// Act as an environment with these fixed parameters (comma-separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    hidden: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.exit_immediately {
        return ExitCode::from(1);
    }
    let sim: Box<dyn Simulator> = match args.simulator {
        Choice::Toy => Box::new(ToySimulator::new()),
        Choice::Box => Box::new(BoxCollision::default()),
        Choice::Echo => Box::new(EchoSimulator::default()),
    };
    let faults = Misbehavior {
        shuffle: args.shuffle,
        exit_after: args.exit_after,
        version: args.version_override,
        wrong_obs_dim: args.wrong_obs_dim,
        nondeterministic: args.nondeterministic,
    };
    let input = BufReader::new(stdin());
    let served = match &args.hidden {
        Some(h) => serve_environment(sim.as_ref(), h, input, stdout().lock(), &faults),
        None => serve(sim.as_ref(), input, stdout().lock(), &faults),
    };
    match served {
        Ok(ServeEnd::ExitAfter) => ExitCode::from(3),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("asbi-plugin: {e}");
            ExitCode::from(1)
        }
    }
}
