//! Command-line surface and cleanup service for `focuskit-core`.

pub mod artifact;
pub mod cli;
pub mod commands;
pub mod service;

use anyhow::Result;

use cli::{Cli, Command, SimulateCommand};
use commands::{evaluate, lidar, simulate, stack};

pub fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synthesize(a) => stack::synthesize(a, out).map(drop),
        Command::SampleFds(a) => stack::sample_fds_cmd(a, out).map(drop),
        Command::Dfo(a) => stack::dfo(a, out).map(drop),
        Command::Sweep(a) => stack::sweep(a, out).map(drop),
        Command::Evaluate(a) => evaluate::evaluate(a, out).map(drop),
        Command::Aggregate(a) => lidar::aggregate(a, out).map(drop),
        Command::Project(a) => lidar::project(a, out).map(drop),
        Command::Simulate(SimulateCommand::TwoPlane(a)) => simulate::two_plane(a, out),
        Command::Simulate(SimulateCommand::Sweep(a)) => simulate::sweep(a, out).map(drop),
        Command::ServeCleanup(a) => tokio::runtime::Runtime::new()?.block_on(service::serve(&a.cloud, out, &a.host, a.port)),
    }
}
