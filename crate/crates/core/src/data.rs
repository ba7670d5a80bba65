//! Sequence ingestion and generation.
//!
//! Real data follows the KITTI raw layout: an `oxts/` directory with a
//! `timestamps.txt` file and one 30-field record per frame under `data/`.
//! Synthetic sequences come from piecewise-analytic planar motion and can be
//! written back in the same layout.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geom::{exp_so3, log_so3, rotation_from_rpy, rpy_from_rotation, ExtendedPose, Mat3, Pose3, Vec3};
use crate::model::{ImuSample, GRAVITY};

/// WGS84 equatorial radius used by the Mercator projection.
pub const EARTH_RADIUS: f64 = 6378137.0;
/// Sample gaps above this are flagged as time jumps.
pub const TIME_JUMP_THRESHOLD: f64 = 0.05;
pub const OXTS_FIELDS: usize = 30;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: expected {OXTS_FIELDS} fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: field {field} is not a number: `{text}`")]
    NotNumeric { line: usize, field: usize, text: String },
    #[error("latitude {0} deg is outside (-90, 90)")]
    Latitude(f64),
    #[error("missing file or directory: {0}")]
    Missing(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: bad timestamp `{text}`")]
    Timestamp { path: PathBuf, line: usize, text: String },
    #[error("inconsistent sequence: {0}")]
    Inconsistent(String),
    #[error("nothing to export")]
    Empty,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One OXTS frame as the 30 raw values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OxtsRecord {
    pub fields: [f64; OXTS_FIELDS],
}

impl OxtsRecord {
    pub fn lat(&self) -> f64 {
        self.fields[0]
    }
    pub fn lon(&self) -> f64 {
        self.fields[1]
    }
    pub fn alt(&self) -> f64 {
        self.fields[2]
    }
    pub fn roll(&self) -> f64 {
        self.fields[3]
    }
    pub fn pitch(&self) -> f64 {
        self.fields[4]
    }
    pub fn yaw(&self) -> f64 {
        self.fields[5]
    }
    /// East, north, up velocity.
    pub fn velocity_enu(&self) -> Vec3 {
        Vec3::new(self.fields[7], self.fields[6], self.fields[10])
    }
    /// Body-frame specific force (fields 11..13).
    pub fn accel(&self) -> Vec3 {
        Vec3::new(self.fields[11], self.fields[12], self.fields[13])
    }
    /// Body-frame angular rate (fields 17..19).
    pub fn omega(&self) -> Vec3 {
        Vec3::new(self.fields[17], self.fields[18], self.fields[19])
    }
    pub fn rotation(&self) -> Mat3 {
        rotation_from_rpy(self.roll(), self.pitch(), self.yaw())
    }
}

impl fmt::Display for OxtsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Parses one OXTS line; `line_no` is only used in error messages.
pub fn parse_oxts(line: &str, line_no: usize) -> Result<OxtsRecord, DataError> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != OXTS_FIELDS {
        return Err(DataError::FieldCount {
            line: line_no,
            found: toks.len(),
        });
    }
    let mut fields = [0.0; OXTS_FIELDS];
    for (i, tok) in toks.iter().enumerate() {
        fields[i] = tok.parse().map_err(|_| DataError::NotNumeric {
            line: line_no,
            field: i,
            text: tok.to_string(),
        })?;
    }
    Ok(OxtsRecord { fields })
}

/// Geodetic origin of a local Mercator frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MercatorOrigin {
    pub scale: f64,
    /// Unshifted Mercator coordinates of the origin.
    pub offset: Vec3,
}

impl MercatorOrigin {
    pub fn new(lat0: f64, lon0: f64, alt0: f64) -> Result<Self, DataError> {
        let scale = (lat0.to_radians()).cos();
        let offset = mercator(lat0, lon0, alt0, scale)?;
        Ok(Self { scale, offset })
    }

    /// Inverse projection back to `(lat, lon, alt)` in degrees and meters.
    pub fn to_geodetic(&self, local: &Vec3) -> (f64, f64, f64) {
        let m = local + self.offset;
        let lon = (m.x / (self.scale * EARTH_RADIUS)).to_degrees();
        let lat = 2.0 * (m.y / (self.scale * EARTH_RADIUS)).exp().atan().to_degrees() - 90.0;
        (lat, lon, m.z)
    }
}

fn mercator(lat: f64, lon: f64, alt: f64, scale: f64) -> Result<Vec3, DataError> {
    if !(lat.abs() < 90.0) {
        return Err(DataError::Latitude(lat));
    }
    let x = scale * EARTH_RADIUS * lon.to_radians();
    let y = scale * EARTH_RADIUS * (std::f64::consts::FRAC_PI_4 + lat.to_radians() * 0.5).tan().ln();
    Ok(Vec3::new(x, y, alt))
}

/// Local east/north/up position of a geodetic point relative to `origin`.
pub fn geodetic_to_local(lat: f64, lon: f64, alt: f64, origin: &MercatorOrigin) -> Result<Vec3, DataError> {
    Ok(mercator(lat, lon, alt, origin.scale)? - origin.offset)
}

/// IMU samples with aligned ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub imu: Vec<ImuSample>,
    /// World-frame IMU pose per sample; the first position is the origin.
    pub ground_truth: Vec<Pose3>,
    /// World-frame IMU velocity per sample.
    pub velocity: Vec<Vec3>,
    /// Indices `k` with `t[k+1] - t[k]` above the jump threshold.
    pub time_jumps: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.imu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.imu.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.imu.first(), self.imu.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Ground-truth extended pose at sample `k`, used to start the filter.
    pub fn initial_pose(&self, k: usize) -> ExtendedPose {
        let g = &self.ground_truth[k];
        ExtendedPose::new(g.rotation, self.velocity[k], g.translation)
    }

    /// Samples `[start, end)` as a new sequence, re-origined at `start`.
    pub fn slice(&self, start: usize, end: usize) -> Sequence {
        let origin = self.ground_truth[start].translation;
        Sequence {
            name: format!("{}[{start}..{end}]", self.name),
            imu: self.imu[start..end].to_vec(),
            ground_truth: self.ground_truth[start..end]
                .iter()
                .map(|p| Pose3::new(p.rotation, p.translation - origin))
                .collect(),
            velocity: self.velocity[start..end].to_vec(),
            time_jumps: self
                .time_jumps
                .iter()
                .filter(|&&k| k >= start && k + 1 < end)
                .map(|k| k - start)
                .collect(),
        }
    }

    pub fn check(&self) -> Result<(), DataError> {
        let n = self.imu.len();
        if self.ground_truth.len() != n || self.velocity.len() != n {
            return Err(DataError::Inconsistent(format!(
                "{} IMU samples, {} poses, {} velocities",
                n,
                self.ground_truth.len(),
                self.velocity.len()
            )));
        }
        Ok(())
    }
}

/// Indices where the sample gap exceeds `threshold`.
pub fn find_time_jumps(imu: &[ImuSample], threshold: f64) -> Vec<usize> {
    imu.windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].t - w[0].t > threshold)
        .map(|(k, _)| k)
        .collect()
}

fn oxts_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("oxts");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn parse_timestamp(text: &str) -> Option<f64> {
    let dt = NaiveDateTime::parse_from_str(text.trim(), "%Y-%m-%d %H:%M:%S%.f").ok()?;
    let utc = dt.and_utc();
    Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9)
}

/// Loads a KITTI raw drive (either the drive directory or its `oxts/`).
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Sequence, DataError> {
    let dir = dir.as_ref();
    let root = oxts_dir(dir);
    let ts_path = root.join("timestamps.txt");
    let data_dir = root.join("data");
    if !ts_path.is_file() {
        return Err(DataError::Missing(ts_path));
    }
    if !data_dir.is_dir() {
        return Err(DataError::Missing(data_dir));
    }

    let ts_text = fs::read_to_string(&ts_path).map_err(io_err(&ts_path))?;
    let mut times = Vec::new();
    for (i, line) in ts_text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let t = parse_timestamp(line).ok_or_else(|| DataError::Timestamp {
            path: ts_path.clone(),
            line: i + 1,
            text: line.to_string(),
        })?;
        times.push(t);
    }

    let mut files: Vec<PathBuf> = fs::read_dir(&data_dir)
        .map_err(io_err(&data_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(DataError::Missing(data_dir.join("0000000000.txt")));
    }
    if files.len() != times.len() {
        return Err(DataError::Inconsistent(format!(
            "{} timestamps but {} OXTS files",
            times.len(),
            files.len()
        )));
    }

    let mut records = Vec::with_capacity(files.len());
    for path in &files {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let line = text.lines().next().unwrap_or("");
        records.push(parse_oxts(line, 1).map_err(|e| match e {
            DataError::FieldCount { found, .. } => {
                DataError::Inconsistent(format!("{}: expected {OXTS_FIELDS} fields, found {found}", path.display()))
            }
            other => other,
        })?);
    }

    let t0 = times[0];
    let origin = MercatorOrigin::new(records[0].lat(), records[0].lon(), records[0].alt())?;
    let mut imu = Vec::with_capacity(records.len());
    let mut ground_truth = Vec::with_capacity(records.len());
    let mut velocity = Vec::with_capacity(records.len());
    for (rec, &t) in records.iter().zip(&times) {
        imu.push(ImuSample::new(t - t0, rec.omega(), rec.accel()));
        let p = geodetic_to_local(rec.lat(), rec.lon(), rec.alt(), &origin)?;
        ground_truth.push(Pose3::new(rec.rotation(), p));
        velocity.push(rec.velocity_enu());
    }
    for w in imu.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(DataError::Inconsistent(format!(
                "timestamps not increasing at t = {} s",
                w[0].t
            )));
        }
    }
    let time_jumps = find_time_jumps(&imu, TIME_JUMP_THRESHOLD);
    for &k in &time_jumps {
        log::warn!("time jump of {:.3} s after t = {:.3} s", imu[k + 1].t - imu[k].t, imu[k].t);
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".into());
    Ok(Sequence {
        name,
        imu,
        ground_truth,
        velocity,
        time_jumps,
    })
}

/// Central differences of positions (one-sided at the ends).
pub fn velocity_from_positions(times: &[f64], positions: &[Vec3]) -> Vec<Vec3> {
    let n = positions.len();
    (0..n)
        .map(|k| {
            if n < 2 {
                return Vec3::zeros();
            }
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (positions[b] - positions[a]) / (times[b] - times[a])
        })
        .collect()
}

/// Writes a sequence in the KITTI raw OXTS layout under `dir/oxts/`.
///
/// Positions are mapped through the inverse Mercator projection around
/// `origin`; only the fields read by [`load_sequence`] carry data.
pub fn write_kitti_raw(seq: &Sequence, dir: impl AsRef<Path>, origin: (f64, f64, f64)) -> Result<(), DataError> {
    seq.check()?;
    let root = dir.as_ref().join("oxts");
    let data_dir = root.join("data");
    fs::create_dir_all(&data_dir).map_err(io_err(&data_dir))?;
    let merc = MercatorOrigin::new(origin.0, origin.1, origin.2)?;

    let ts_path = root.join("timestamps.txt");
    let mut ts = String::new();
    let base = NaiveDateTime::parse_from_str("2011-09-30 12:00:00.0", "%Y-%m-%d %H:%M:%S%.f").expect("valid literal");
    for s in &seq.imu {
        let nanos = (s.t * 1e9).round() as i64;
        let stamp = base + chrono::Duration::nanoseconds(nanos);
        ts.push_str(&stamp.format("%Y-%m-%d %H:%M:%S%.9f").to_string());
        ts.push('\n');
    }
    fs::write(&ts_path, ts).map_err(io_err(&ts_path))?;

    for (k, ((s, g), v)) in seq.imu.iter().zip(&seq.ground_truth).zip(&seq.velocity).enumerate() {
        let (lat, lon, alt) = merc.to_geodetic(&g.translation);
        let (roll, pitch, yaw) = rpy_from_rotation(&g.rotation);
        let mut f = [0.0; OXTS_FIELDS];
        f[0] = lat;
        f[1] = lon;
        f[2] = alt;
        f[3] = roll;
        f[4] = pitch;
        f[5] = yaw;
        f[6] = v.y;
        f[7] = v.x;
        f[10] = v.z;
        let body_v = g.rotation.transpose() * v;
        f[8] = body_v.x;
        f[9] = body_v.y;
        f[11] = s.accel.x;
        f[12] = s.accel.y;
        f[13] = s.accel.z;
        f[17] = s.omega.x;
        f[18] = s.omega.y;
        f[19] = s.omega.z;
        let path = data_dir.join(format!("{k:010}.txt"));
        fs::write(&path, format!("{}\n", OxtsRecord { fields: f })).map_err(io_err(&path))?;
    }
    Ok(())
}

/// One piece of planar motion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Segment {
    /// Straight line with the speed ramping linearly to `speed` (m/s).
    Straight { duration: f64, speed: f64 },
    /// Constant-speed turn at `yaw_rate` (rad/s).
    Turn { duration: f64, yaw_rate: f64 },
    /// Standing still; the speed must already be zero.
    Stop { duration: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Straight { duration, .. } | Segment::Turn { duration, .. } | Segment::Stop { duration } => duration,
        }
    }
}

/// Description of a synthetic drive and its IMU error model.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub segments: Vec<Segment>,
    pub initial_speed: f64,
    pub initial_yaw: f64,
    pub rate_hz: f64,
    /// White noise standard deviations per sample.
    pub gyro_noise: f64,
    pub accel_noise: f64,
    /// Constant biases added to the readings.
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    /// Bias random-walk increments per sample.
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    /// Rotation of the car frame relative to the IMU frame.
    pub mounting: Mat3,
    /// Car frame origin in the IMU frame.
    pub lever_arm: Vec3,
    /// Lateral velocity of the car frame per unit of `speed * yaw_rate`
    /// (m/s per m/s^2); zero gives exact non-holonomic motion.
    pub sideslip: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            segments: Vec::new(),
            initial_speed: 0.0,
            initial_yaw: 0.0,
            rate_hz: 100.0,
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            mounting: Mat3::identity(),
            lever_arm: Vec3::zeros(),
            sideslip: 0.0,
        }
    }
}

impl SyntheticSpec {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.initial_speed < 0.0 || !(self.rate_hz > 0.0) {
            return Err(DataError::Inconsistent("speeds and rate must be nonnegative".into()));
        }
        let mut speed = self.initial_speed;
        for seg in &self.segments {
            match *seg {
                Segment::Straight { duration, speed: s } => {
                    if s < 0.0 || duration <= 0.0 {
                        return Err(DataError::Inconsistent(format!("bad segment {seg:?}")));
                    }
                    speed = s;
                }
                Segment::Turn { duration, .. } => {
                    if duration <= 0.0 {
                        return Err(DataError::Inconsistent(format!("bad segment {seg:?}")));
                    }
                }
                Segment::Stop { duration } => {
                    if duration <= 0.0 || speed != 0.0 {
                        return Err(DataError::Inconsistent(format!("stop segment at speed {speed} m/s")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Realistic noise and biases of a tactical-grade IMU at 100 Hz.
    pub fn with_realistic_noise(mut self) -> Self {
        self.gyro_noise = 1.4e-2;
        self.accel_noise = 3e-2;
        self
    }

    /// Rectangular city-block loop: each block is driven at `speed`, the car
    /// brakes to half speed for corners of radius `corner_radius` and
    /// accelerates out of them, and the first lap has a full stop.
    pub fn urban_loop(side: f64, speed: f64, laps: usize, corner_radius: f64) -> Self {
        const RAMP_ACCEL: f64 = 1.5;
        let corner_speed = 0.5 * speed;
        let yaw_rate = corner_speed / corner_radius;
        let turn = std::f64::consts::FRAC_PI_2 / yaw_rate;
        let ramp = (speed - corner_speed) / RAMP_ACCEL;
        let ramp_dist = 0.5 * (speed + corner_speed) * ramp;
        let cruise = ((side - 2.0 * ramp_dist) / speed).max(0.0);

        let mut segments = vec![Segment::Straight {
            duration: corner_speed / RAMP_ACCEL,
            speed: corner_speed,
        }];
        for lap in 0..laps {
            for corner in 0..4 {
                segments.push(Segment::Straight { duration: ramp, speed });
                if cruise > 0.0 {
                    segments.push(Segment::Straight { duration: cruise, speed });
                }
                if lap == 0 && corner == 1 {
                    segments.push(Segment::Straight {
                        duration: speed / RAMP_ACCEL,
                        speed: 0.0,
                    });
                    segments.push(Segment::Stop { duration: 5.0 });
                    segments.push(Segment::Straight {
                        duration: corner_speed / RAMP_ACCEL,
                        speed: corner_speed,
                    });
                } else {
                    segments.push(Segment::Straight {
                        duration: ramp,
                        speed: corner_speed,
                    });
                }
                segments.push(Segment::Turn { duration: turn, yaw_rate });
            }
        }
        segments.push(Segment::Straight {
            duration: corner_speed / RAMP_ACCEL,
            speed: 0.0,
        });
        Self {
            name: "urban-loop".into(),
            segments,
            ..Self::default()
        }
    }

    /// Constant-speed circle.
    pub fn circle(radius: f64, speed: f64, duration: f64) -> Self {
        Self {
            name: "circle".into(),
            initial_speed: speed,
            segments: vec![Segment::Turn {
                duration,
                yaw_rate: speed / radius,
            }],
            ..Self::default()
        }
    }
}

/// Planar car-frame kinematics at time `t` (relative to segment start).
#[derive(Clone, Copy, Debug)]
struct CarState {
    pos: Vec3,
    yaw: f64,
    speed: f64,
}

fn advance(seg: &Segment, start: &CarState, t: f64) -> (CarState, f64) {
    match *seg {
        Segment::Straight { duration, speed } => {
            let accel = (speed - start.speed) / duration;
            let dist = start.speed * t + 0.5 * accel * t * t;
            let dir = Vec3::new(start.yaw.cos(), start.yaw.sin(), 0.0);
            (
                CarState {
                    pos: start.pos + dir * dist,
                    yaw: start.yaw,
                    speed: start.speed + accel * t,
                },
                0.0,
            )
        }
        Segment::Turn { yaw_rate, .. } => {
            let yaw = start.yaw + yaw_rate * t;
            let pos = if yaw_rate.abs() < 1e-12 {
                start.pos + Vec3::new(start.yaw.cos(), start.yaw.sin(), 0.0) * start.speed * t
            } else {
                let r = start.speed / yaw_rate;
                start.pos + Vec3::new(r * (yaw.sin() - start.yaw.sin()), -r * (yaw.cos() - start.yaw.cos()), 0.0)
            };
            (
                CarState {
                    pos,
                    yaw,
                    speed: start.speed,
                },
                yaw_rate,
            )
        }
        Segment::Stop { .. } => (*start, 0.0),
    }
}

/// Samples of the analytic car trajectory: time, car position, yaw, speed and
/// yaw rate. One sample past the end is included so the final velocity is
/// defined by a forward difference like all others.
fn sample_car(spec: &SyntheticSpec) -> (Vec<f64>, Vec<CarState>, Vec<f64>) {
    let dt = 1.0 / spec.rate_hz;
    let total = spec.duration();
    let n = (total / dt).floor() as usize + 2;
    let mut times = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);

    let mut seg_start = CarState {
        pos: Vec3::zeros(),
        yaw: spec.initial_yaw,
        speed: spec.initial_speed,
    };
    let mut seg_t0 = 0.0;
    let mut seg_idx = 0;
    for k in 0..n {
        let t = k as f64 * dt;
        while seg_idx + 1 < spec.segments.len() && t > seg_t0 + spec.segments[seg_idx].duration() {
            let seg = &spec.segments[seg_idx];
            seg_start = advance(seg, &seg_start, seg.duration()).0;
            seg_t0 += seg.duration();
            seg_idx += 1;
        }
        let (st, rate) = match spec.segments.get(seg_idx) {
            Some(seg) => advance(seg, &seg_start, t - seg_t0),
            None => (seg_start, 0.0),
        };
        times.push(t);
        states.push(st);
        rates.push(rate);
    }
    (times, states, rates)
}

/// Generates a sequence with exact ground truth and IMU readings obtained
/// by inverting the discrete kinematics, then corrupted by biases and noise.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Sequence, DataError> {
    spec.validate()?;
    let g = Vec3::from(GRAVITY);
    let (times, car, rates) = sample_car(spec);
    let n = times.len() - 1;
    if n < 2 {
        return Err(DataError::Inconsistent("synthetic sequence shorter than two samples".into()));
    }

    // car-frame rotation in the world, and IMU rotation R_imu = R_car * R_c^T
    let mount_t = spec.mounting.transpose();
    let rot_imu: Vec<Mat3> = car
        .iter()
        .map(|c| exp_so3(&Vec3::new(0.0, 0.0, c.yaw)) * mount_t)
        .collect();
    // sideslip moves the car origin sideways: integrate it analytically per sample
    let mut car_pos: Vec<Vec3> = car.iter().map(|c| c.pos).collect();
    if spec.sideslip != 0.0 {
        let dt = 1.0 / spec.rate_hz;
        let mut offset = Vec3::zeros();
        for k in 0..car_pos.len() {
            car_pos[k] += offset;
            let left = Vec3::new(-car[k].yaw.sin(), car[k].yaw.cos(), 0.0);
            offset += left * (spec.sideslip * car[k].speed * rates[k]) * dt;
        }
    }
    // IMU position: p_imu = p_car - R_imu * lever_arm
    let pos_imu: Vec<Vec3> = car_pos
        .iter()
        .zip(&rot_imu)
        .map(|(p, r)| p - r * spec.lever_arm)
        .collect();

    // discrete velocities consistent with p[k+1] = p[k] + v[k] dt
    let vel: Vec<Vec3> = (0..n)
        .map(|k| (pos_imu[k + 1] - pos_imu[k]) / (times[k + 1] - times[k]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noise3 = |sigma: f64| -> Vec3 {
        if sigma == 0.0 {
            Vec3::zeros()
        } else {
            Vec3::new(unit.sample(&mut rng), unit.sample(&mut rng), unit.sample(&mut rng)) * sigma
        }
    };

    // clean readings; the last sample repeats the final step's kinematics
    let mut clean: Vec<(Vec3, Vec3)> = (0..n - 1)
        .map(|k| {
            let dt = times[k + 1] - times[k];
            let omega = log_so3(&(rot_imu[k].transpose() * rot_imu[k + 1])) / dt;
            let accel = rot_imu[k].transpose() * ((vel[k + 1] - vel[k]) / dt - g);
            (omega, accel)
        })
        .collect();
    clean.push(clean[n - 2]);

    let mut imu = Vec::with_capacity(n);
    let mut bg = spec.gyro_bias;
    let mut ba = spec.accel_bias;
    for (k, (omega, accel)) in clean.into_iter().enumerate() {
        let reading_omega = omega + bg + noise3(spec.gyro_noise);
        let reading_accel = accel + ba + noise3(spec.accel_noise);
        imu.push(ImuSample::new(times[k], reading_omega, reading_accel));
        bg += noise3(spec.gyro_bias_walk);
        ba += noise3(spec.accel_bias_walk);
    }

    Ok(Sequence {
        name: spec.name.clone(),
        time_jumps: find_time_jumps(&imu, TIME_JUMP_THRESHOLD),
        imu,
        ground_truth: rot_imu.iter().zip(&pos_imu).take(n).map(|(r, p)| Pose3::new(*r, *p)).collect(),
        velocity: vel,
    })
}

/// Pose file flavors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoseFormat {
    /// 12 numbers per line: the row-major 3x4 matrix `[R | p]`.
    Kitti,
    /// `t,x,y,z,roll,pitch,yaw` with a header line.
    Csv,
}

impl PoseFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => PoseFormat::Csv,
            _ => PoseFormat::Kitti,
        }
    }
}

pub fn format_kitti_pose(p: &Pose3) -> String {
    let r = &p.rotation;
    let t = &p.translation;
    let vals = [
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        t.x,
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        t.y,
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        t.z,
    ];
    // adding 0.0 turns -0.0 into 0.0
    vals.iter().map(|v| format!("{}", v + 0.0)).collect::<Vec<_>>().join(" ")
}

/// Writes poses; `times` is required for CSV and ignored for KITTI.
pub fn export_poses(poses: &[Pose3], times: &[f64], path: impl AsRef<Path>, format: PoseFormat) -> Result<(), DataError> {
    if poses.is_empty() {
        return Err(DataError::Empty);
    }
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        PoseFormat::Kitti => {
            for p in poses {
                writeln!(out, "{}", format_kitti_pose(p)).map_err(io_err(path))?;
            }
        }
        PoseFormat::Csv => {
            if times.len() != poses.len() {
                return Err(DataError::Inconsistent(format!(
                    "{} poses but {} timestamps",
                    poses.len(),
                    times.len()
                )));
            }
            writeln!(out, "t,x,y,z,roll,pitch,yaw").map_err(io_err(path))?;
            for (p, t) in poses.iter().zip(times) {
                let (roll, pitch, yaw) = rpy_from_rotation(&p.rotation);
                let q = &p.translation;
                writeln!(out, "{t},{},{},{},{roll},{pitch},{yaw}", q.x, q.y, q.z).map_err(io_err(path))?;
            }
        }
    }
    out.flush().map_err(io_err(path))
}

/// Reads poses written by [`export_poses`]; CSV files also return timestamps.
pub fn import_poses(path: impl AsRef<Path>, format: PoseFormat) -> Result<(Vec<Pose3>, Option<Vec<f64>>), DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut poses = Vec::new();
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (format == PoseFormat::Csv && i == 0 && line.starts_with('t')) {
            continue;
        }
        let toks: Vec<&str> = match format {
            PoseFormat::Kitti => line.split_whitespace().collect(),
            PoseFormat::Csv => line.split(',').map(str::trim).collect(),
        };
        let expected = if format == PoseFormat::Kitti { 12 } else { 7 };
        if toks.len() != expected {
            return Err(DataError::Inconsistent(format!(
                "{} line {}: expected {expected} values, found {}",
                path.display(),
                i + 1,
                toks.len()
            )));
        }
        let mut v = [0.0; 12];
        for (j, tok) in toks.iter().enumerate() {
            v[j] = tok.parse().map_err(|_| DataError::NotNumeric {
                line: i + 1,
                field: j,
                text: tok.to_string(),
            })?;
        }
        match format {
            PoseFormat::Kitti => poses.push(Pose3::new(
                Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
                Vec3::new(v[3], v[7], v[11]),
            )),
            PoseFormat::Csv => {
                times.push(v[0]);
                poses.push(Pose3::new(rotation_from_rpy(v[4], v[5], v[6]), Vec3::new(v[1], v[2], v[3])));
            }
        }
    }
    Ok((poses, (format == PoseFormat::Csv).then_some(times)))
}
