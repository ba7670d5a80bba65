use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aidr_core::geom::rotation_from_rpy;
use aidr_core::train::load_learnables;
use aidr_core::{
    export_poses, generate_synthetic, import_poses, load_sequence, relative_errors, run_training, summarize,
    write_kitti_raw, ConfigError, DataError, EvalError, FilterConfig, FilterError, Iekf, LearnableSet, NoiseScale,
    NoiseSchedule, PoseFormat, Pose3, Sequence, SyntheticSpec, TrainConfig, TrainError, Vec3, WeightsError,
};

use crate::{ConfigArgs, EvalArgs, ExportCovArgs, RunArgs, SynthArgs, TrainArgs, Trajectory};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_error(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_error(path))
}

/// Defaults, then the config file, then explicit flags.
pub fn resolve_config(args: &ConfigArgs) -> Result<FilterConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => FilterConfig::load(path)?,
        None => FilterConfig::default(),
    };
    if let Some(v) = args.sigma_lat {
        cfg.sigma_lat = v;
    }
    if let Some(v) = args.sigma_up {
        cfg.sigma_up = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.sigma0_bias_gyro {
        cfg.sigma0_bias_gyro = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn toml_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Reproducibility record: the invocation and the resolved configuration.
fn manifest(command: &str, argv: &[String], cfg: &FilterConfig, extra: &[(&str, String)]) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "tool = \"aidr\"");
    let _ = writeln!(m, "version = {}", toml_string(env!("CARGO_PKG_VERSION")));
    let _ = writeln!(m, "command = {}", toml_string(command));
    let args: Vec<String> = argv.iter().skip(1).map(|a| toml_string(a)).collect();
    let _ = writeln!(m, "args = [{}]", args.join(", "));
    for (k, v) in extra {
        let _ = writeln!(m, "{k} = {v}");
    }
    let _ = writeln!(m, "\n[config]\n{}", cfg.to_text());
    m
}

fn load_params(weights: Option<&PathBuf>, base: &FilterConfig) -> Result<Option<LearnableSet>, CliError> {
    weights.map(|w| load_learnables(w, base)).transpose().map_err(Into::into)
}

pub fn run(args: &RunArgs, argv: &[String]) -> Result<(), CliError> {
    let base = resolve_config(&args.filter)?;
    let seq = load_sequence(&args.seq)?;
    let params = load_params(args.weights.as_ref(), &base)?;
    let cfg = params.as_ref().map_or(base, |p| p.filter_config(&base));

    let mut filter = Iekf::from_config(&cfg);
    if args.no_alignment {
        filter = filter.without_alignment();
    }
    if args.pure_imu {
        filter = filter.pure_integration();
    }
    let noise = match &params {
        Some(p) if !args.static_cov => {
            NoiseSchedule::PerStep(p.weights.noise_sequence(&seq.imu, &NoiseScale::from_config(&cfg), None))
        }
        _ => NoiseSchedule::Static(cfg.static_noise()),
    };
    let out = filter.run(&seq.imu, seq.initial_pose(0), &noise)?;
    log::info!(
        "{}: {} steps, {} skipped updates, {} time jumps",
        seq.name,
        out.states.len().saturating_sub(1),
        out.skipped_updates.len(),
        out.time_jumps.len()
    );

    create_dir(&args.out)?;
    let poses: Vec<Pose3> = out.states.iter().map(|s| Pose3::from(&s.pose)).collect();
    let times: Vec<f64> = seq.imu.iter().map(|s| s.t).collect();
    export_poses(&poses, &times, args.out.join("trajectory.csv"), PoseFormat::Csv)?;
    export_poses(&poses, &times, args.out.join("poses.txt"), PoseFormat::Kitti)?;
    export_poses(&seq.ground_truth, &times, args.out.join("ground_truth.txt"), PoseFormat::Kitti)?;

    let mut states = String::from("t,bg_x,bg_y,bg_z,ba_x,ba_y,ba_z,car_roll,car_pitch,car_yaw,lever_x,lever_y,lever_z\n");
    for (s, t) in out.states.iter().zip(&times) {
        let (r, p, y) = aidr_core::geom::rpy_from_rotation(&s.car_rotation);
        let _ = writeln!(
            states,
            "{t},{},{},{},{},{},{},{r},{p},{y},{},{},{}",
            s.bias_gyro.x,
            s.bias_gyro.y,
            s.bias_gyro.z,
            s.bias_accel.x,
            s.bias_accel.y,
            s.bias_accel.z,
            s.car_position.x,
            s.car_position.y,
            s.car_position.z
        );
    }
    write_file(&args.out.join("states.csv"), &states)?;

    match relative_errors(&poses, &seq.ground_truth) {
        Ok(mut rep) => {
            rep.sequence = seq.name.clone();
            rep.duration = seq.duration();
            let summary = summarize(std::slice::from_ref(&rep));
            write_file(&args.out.join("metrics.csv"), &summary.csv)?;
            print!("{}", summary.table);
        }
        Err(e) => log::warn!("no metrics: {e}"),
    }

    let mode = if args.pure_imu {
        "pure-imu"
    } else if params.is_some() && !args.static_cov {
        "adaptive"
    } else {
        "static"
    };
    let extra = [
        ("mode", toml_string(mode)),
        ("alignment", (!args.no_alignment && !args.pure_imu).to_string()),
        ("samples", seq.len().to_string()),
    ];
    write_file(&args.out.join("manifest.toml"), &manifest("run", argv, &cfg, &extra))
}

fn drive_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn train(args: &TrainArgs, argv: &[String]) -> Result<(), CliError> {
    let base = resolve_config(&args.filter)?;
    let mut training: Vec<Sequence> = Vec::new();
    let mut validation: Vec<Sequence> = Vec::new();
    for dir in &args.seqs {
        let seq = load_sequence(dir)?;
        if args.holdout.as_deref() == Some(drive_name(dir).as_str()) {
            validation.push(seq);
        } else {
            training.push(seq);
        }
    }
    if let Some(h) = &args.holdout {
        if validation.is_empty() {
            return Err(CliError::Usage(format!("held-out drive `{h}` is not among --seq")));
        }
    }
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        steps_per_epoch: args.steps_per_epoch,
        batch_size: args.batch_size,
        subsequence_seconds: args.subsequence,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let initial = match &args.init {
        Some(path) => load_learnables(path, &base)?,
        None => LearnableSet::initial(args.seed, &base, &training),
    };
    create_dir(&args.out)?;
    let outcome = run_training(&training, &validation, initial, &base, &cfg, Some(&args.out))?;
    outcome.final_params.save(args.out.join("final.ckpt"))?;
    println!(
        "validation loss {:.4}% -> best {:.4}% over {} epochs",
        outcome.initial_val_loss,
        outcome.best_val_loss,
        outcome.history.len()
    );
    let extra = [
        ("seed", args.seed.to_string()),
        ("epochs", args.epochs.to_string()),
        ("learning_rate", format!("{:e}", args.lr)),
        (
            "holdout",
            toml_string(args.holdout.as_deref().unwrap_or("")),
        ),
    ];
    write_file(&args.out.join("manifest.toml"), &manifest("train", argv, &base, &extra))
}

fn read_poses(path: &Path) -> Result<Vec<Pose3>, CliError> {
    Ok(import_poses(path, PoseFormat::from_path(path))?.0)
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.est.len() != args.gt.len() {
        return Err(CliError::Usage(format!(
            "{} estimate files but {} ground-truth files",
            args.est.len(),
            args.gt.len()
        )));
    }
    let mut reports = Vec::with_capacity(args.est.len());
    for (est, gt) in args.est.iter().zip(&args.gt) {
        let mut rep = relative_errors(&read_poses(est)?, &read_poses(gt)?)?;
        rep.sequence = drive_name(est);
        reports.push(rep);
    }
    let summary = summarize(&reports);
    print!("{}", summary.table);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("metrics.csv"), &summary.csv)?;
        write_file(&dir.join("metrics.txt"), &summary.table)?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let mut spec = match args.kind {
        Trajectory::Urban => {
            if args.length < 1.0 || args.length.fract() != 0.0 {
                return Err(CliError::Usage(format!("urban laps must be a positive integer, got {}", args.length)));
            }
            SyntheticSpec::urban_loop(args.size, args.speed, args.length as usize, args.corner_radius)
        }
        Trajectory::Circle => SyntheticSpec::circle(args.size, args.speed, args.length),
    };
    if !args.clean {
        spec = spec.with_realistic_noise();
    }
    spec.gyro_bias = Vec3::repeat(args.gyro_bias);
    spec.mounting = rotation_from_rpy(0.0, 0.0, args.mounting_yaw.to_radians());
    spec.validate()?;
    let seq = generate_synthetic(&spec, args.seed)?;
    write_kitti_raw(&seq, &args.out, (args.origin[0], args.origin[1], args.origin[2]))?;
    println!("{} samples, {:.1} s written to {}", seq.len(), seq.duration(), args.out.display());
    Ok(())
}

pub fn export_cov(args: &ExportCovArgs) -> Result<(), CliError> {
    let base = resolve_config(&args.filter)?;
    let seq = load_sequence(&args.seq)?;
    let params = load_params(args.weights.as_ref(), &base)?;
    let cfg = params.as_ref().map_or(base, |p| p.filter_config(&base));
    let scale = NoiseScale::from_config(&cfg);
    let steps = seq.len().saturating_sub(1);
    let logits = match &params {
        Some(p) => p.weights.logit_sequence(&seq.imu, None),
        None => vec![[0.0, 0.0]; steps],
    };
    let mut csv = String::from("t,z_lat,z_up,n_lat,n_up\n");
    for (k, z) in logits.iter().enumerate() {
        let n = scale.covariance(*z);
        if !(n.lat.is_finite() && n.up.is_finite()) {
            return Err(CliError::Numerical(format!("non-finite covariance at step {k}")));
        }
        let _ = writeln!(csv, "{},{},{},{},{}", seq.imu[k].t, z[0], z[1], n.lat, n.up);
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.out, &csv)
}
