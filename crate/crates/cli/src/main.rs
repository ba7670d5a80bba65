use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Inertial dead-reckoning with an invariant EKF and a learned noise adapter.
#[derive(Debug, Parser)]
#[command(name = "aidr", version)]
struct Cli {
    /// More log output; repeat for debug level.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Filter one sequence and write its trajectory.
    Run(RunArgs),
    /// Train the adapter with one sequence held out for validation.
    Train(TrainArgs),
    /// Relative errors of estimated trajectories against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic drive in the KITTI raw layout.
    Synth(SynthArgs),
    /// Write the per-step measurement covariance predicted by the adapter.
    ExportCov(ExportCovArgs),
}

/// Filter parameters that override the config file.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with filter parameters; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Nominal lateral pseudo-measurement standard deviation, m/s.
    #[arg(long)]
    pub sigma_lat: Option<f64>,
    /// Nominal vertical pseudo-measurement standard deviation, m/s.
    #[arg(long)]
    pub sigma_up: Option<f64>,
    /// Adapter output range in decades.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Initial gyro bias standard deviation, rad/s.
    #[arg(long)]
    pub sigma0_bias_gyro: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// KITTI raw drive directory (the drive or its `oxts/`).
    #[arg(long)]
    pub seq: PathBuf,
    /// Adapter weights or training checkpoint.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Use the nominal measurement covariance even when weights are given.
    #[arg(long)]
    pub static_cov: bool,
    /// Freeze the car frame to the IMU frame.
    #[arg(long)]
    pub no_alignment: bool,
    /// Integrate the IMU without any update.
    #[arg(long, conflicts_with = "no_alignment")]
    pub pure_imu: bool,
    /// Run directory for the outputs.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub filter: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Drive directories; all but the held-out one are used for training.
    #[arg(long = "seq", required = true, num_args = 1..)]
    pub seqs: Vec<PathBuf>,
    /// Drive held out for validation, by directory name.
    #[arg(long)]
    pub holdout: Option<String>,
    /// Checkpoint to start from instead of fresh weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub steps_per_epoch: usize,
    #[arg(long, default_value_t = 9)]
    pub batch_size: usize,
    /// Subsequence duration, seconds.
    #[arg(long, default_value_t = 60.0)]
    pub subsequence: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub filter: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Estimated poses, KITTI (12 values per line) or CSV by extension.
    #[arg(long = "est", required = true, num_args = 1..)]
    pub est: Vec<PathBuf>,
    /// Ground-truth poses, one per estimate file.
    #[arg(long = "gt", required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    /// Write `metrics.csv` and `metrics.txt` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Trajectory {
    /// Rectangular block loop with braking before corners and one stop.
    Urban,
    /// Constant-speed circle.
    Circle,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Trajectory::Urban)]
    pub kind: Trajectory,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Block side (urban) or radius (circle), meters.
    #[arg(long, default_value_t = 100.0)]
    pub size: f64,
    /// Cruise speed, m/s.
    #[arg(long, default_value_t = 10.0)]
    pub speed: f64,
    /// Laps (urban) or duration in seconds (circle).
    #[arg(long, default_value_t = 2.0)]
    pub length: f64,
    /// Corner radius, meters.
    #[arg(long, default_value_t = 15.0)]
    pub corner_radius: f64,
    /// Noiseless readings.
    #[arg(long)]
    pub clean: bool,
    /// Constant gyro bias added to every axis, rad/s.
    #[arg(long, default_value_t = 0.0)]
    pub gyro_bias: f64,
    /// Car frame yaw relative to the IMU, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub mounting_yaw: f64,
    /// Latitude, longitude (deg) and altitude (m) of the start.
    #[arg(long, num_args = 3, default_values_t = [49.0, 8.4, 110.0])]
    pub origin: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportCovArgs {
    #[arg(long)]
    pub seq: PathBuf,
    /// Adapter weights or training checkpoint; nominal covariance without.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub filter: ConfigArgs,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Run(a) => commands::run(a, &argv),
        Command::Train(a) => commands::train(a, &argv),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::ExportCov(a) => commands::export_cov(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use commands::CliError;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let e = Cli::try_parse_from(["aidr", "run", "--bogus"]).unwrap_err();
        assert!(e.use_stderr());
        assert_eq!(CliError::Usage(e.to_string()).exit_code(), 1);
    }

    #[test]
    fn pure_imu_excludes_no_alignment() {
        let r = Cli::try_parse_from(["aidr", "run", "--seq", "s", "--out", "o", "--pure-imu", "--no-alignment"]);
        assert!(r.is_err());
    }
}
