//! Right-invariant extended Kalman filter with lateral/vertical velocity
//! pseudo-measurements in the car frame.
//!
//! The IMU pose lives on SE_2(3) with a right-multiplied error
//! `chi = exp(xi) * chi_hat`; biases and lever arm use additive errors and the
//! car rotation uses `R_c = exp(xi_c) * R_c_hat`.

use log::{debug, warn};
use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::config::FilterConfig;
use crate::geom::{exp_se23_with, exp_so3_with, orthonormalize, skew, ExtendedPose, Mat3, TangentSE23, Vec3};
use crate::model::{
    idx, ErrorCovariance, FilterState, ImuSample, InitialBeliefs, Mat2, Mat21, MeasurementNoise, ProcessNoise, Vec2,
    Vec21,
};

pub type Mat21x18 = SMatrix<f64, 21, 18>;
pub type Mat2x21 = SMatrix<f64, 2, 21>;
pub type Mat21x2 = SMatrix<f64, 21, 2>;

/// Innovation covariances whose condition number exceeds this are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("non-positive time step {dt} s at t = {t} s")]
    NonPositiveDt { t: f64, dt: f64 },
    #[error("innovation covariance is singular (condition number {condition:e})")]
    SingularInnovation { condition: f64 },
    #[error("filter diverged to a non-finite value at step {step}")]
    NonFinite { step: usize },
    #[error("measurement noise schedule has {got} entries, expected {expected}")]
    NoiseLength { got: usize, expected: usize },
    #[error("empty IMU sequence")]
    Empty,
}

/// Kinematic constants shared by propagation and update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Model {
    pub gravity: Vec3,
    pub theta_small: f64,
}

impl Default for Model {
    fn default() -> Self {
        let cfg = FilterConfig::default();
        Self {
            gravity: cfg.gravity(),
            theta_small: cfg.theta_small,
        }
    }
}

impl Model {
    /// Noise-free discrete kinematics using the bias-corrected inputs.
    pub fn propagate_state(&self, x: &FilterState, u: &ImuSample, dt: f64) -> Result<FilterState, FilterError> {
        if !(dt > 0.0) {
            return Err(FilterError::NonPositiveDt { t: u.t, dt });
        }
        let omega = u.omega - x.bias_gyro;
        let accel = u.accel - x.bias_accel;
        let r = &x.pose.rotation;
        let mut out = *x;
        out.pose = ExtendedPose {
            rotation: r * exp_so3_with(&(omega * dt), self.theta_small),
            velocity: x.pose.velocity + (r * accel + self.gravity) * dt,
            position: x.pose.position + x.pose.velocity * dt,
        };
        Ok(out)
    }

    /// Error-propagation Jacobians `(F, G)` for one step of length `dt`.
    ///
    /// `G` maps the stacked noise `[w_gyro, w_accel, w_bias_gyro,
    /// w_bias_accel, w_car_rot, w_car_pos]`, where the first two perturb the
    /// IMU readings and the car rotation noise is right-multiplied.
    pub fn jacobians(&self, x: &FilterState, dt: f64) -> (Mat21, Mat21x18) {
        let r = &x.pose.rotation;
        let v_r = skew(&x.pose.velocity) * r;
        let p_r = skew(&x.pose.position) * r;

        let mut f = Mat21::identity();
        f.fixed_view_mut::<3, 3>(idx::ROT, idx::BIAS_GYRO).copy_from(&(-r * dt));
        f.fixed_view_mut::<3, 3>(idx::VEL, idx::ROT).copy_from(&(skew(&self.gravity) * dt));
        f.fixed_view_mut::<3, 3>(idx::VEL, idx::BIAS_GYRO).copy_from(&(-v_r * dt));
        f.fixed_view_mut::<3, 3>(idx::VEL, idx::BIAS_ACCEL).copy_from(&(-r * dt));
        f.fixed_view_mut::<3, 3>(idx::POS, idx::VEL).copy_from(&(Mat3::identity() * dt));
        f.fixed_view_mut::<3, 3>(idx::POS, idx::BIAS_GYRO).copy_from(&(-p_r * dt));

        let mut g = Mat21x18::zeros();
        g.fixed_view_mut::<3, 3>(idx::ROT, 0).copy_from(&(r * dt));
        g.fixed_view_mut::<3, 3>(idx::VEL, 0).copy_from(&(v_r * dt));
        g.fixed_view_mut::<3, 3>(idx::VEL, 3).copy_from(&(r * dt));
        g.fixed_view_mut::<3, 3>(idx::POS, 0).copy_from(&(p_r * dt));
        for i in 0..6 {
            g[(idx::BIAS_GYRO + i, 6 + i)] = dt;
        }
        g.fixed_view_mut::<3, 3>(idx::CAR_ROT, 12).copy_from(&(x.car_rotation * dt));
        for i in 0..3 {
            g[(idx::CAR_POS + i, 15 + i)] = dt;
        }
        (f, g)
    }
}

/// `F P F^T + G Q G^T`, symmetrized.
pub fn propagate_covariance(p: &ErrorCovariance, f: &Mat21, g: &Mat21x18, q: &ProcessNoise) -> ErrorCovariance {
    let mut out = propagate_covariance_raw(p, f, g, q);
    out.symmetrize();
    out
}

/// `F P F^T + G Q G^T` before symmetrization.
pub fn propagate_covariance_raw(p: &ErrorCovariance, f: &Mat21, g: &Mat21x18, q: &ProcessNoise) -> ErrorCovariance {
    let qd = q.diagonal();
    let mut gq = *g;
    for (j, mut col) in gq.column_iter_mut().enumerate() {
        col *= qd[j];
    }
    ErrorCovariance(f * p.0 * f.transpose() + gq * g.transpose())
}

/// Velocity of the car frame origin expressed in the car frame.
pub fn car_velocity(x: &FilterState, u: &ImuSample) -> Vec3 {
    let omega = u.omega - x.bias_gyro;
    x.car_rotation.transpose() * (x.pose.rotation.transpose() * x.pose.velocity) + omega.cross(&x.car_position)
}

/// Predicted `[v_lat, v_up]` of the car frame.
pub fn predict_measurement(x: &FilterState, u: &ImuSample) -> Vec2 {
    let v = car_velocity(x, u);
    Vec2::new(v.y, v.z)
}

/// Jacobian of [`predict_measurement`] with respect to the linearized error.
pub fn jacobian_h(x: &FilterState, u: &ImuSample) -> Mat2x21 {
    let omega = u.omega - x.bias_gyro;
    let rt = x.pose.rotation.transpose();
    let rct = x.car_rotation.transpose();
    let v_body = rt * x.pose.velocity;

    let mut full = SMatrix::<f64, 3, 21>::zeros();
    full.fixed_view_mut::<3, 3>(0, idx::VEL).copy_from(&(rct * rt));
    full.fixed_view_mut::<3, 3>(0, idx::BIAS_GYRO).copy_from(&skew(&x.car_position));
    full.fixed_view_mut::<3, 3>(0, idx::CAR_ROT).copy_from(&(rct * skew(&v_body)));
    full.fixed_view_mut::<3, 3>(0, idx::CAR_POS).copy_from(&skew(&omega));
    full.fixed_rows::<2>(1).into_owned()
}

/// Gain and innovation covariance of one pseudo-measurement update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Innovation {
    pub y_pred: Vec2,
    pub s: Mat2,
    pub gain: Mat21x2,
}

fn invert_2x2(s: &Mat2) -> Result<Mat2, FilterError> {
    let (a, b, c, d) = (s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]);
    let det = a * d - b * c;
    // eigenvalues of the symmetric part
    let mean = 0.5 * (a + d);
    let off = 0.5 * (b + c);
    let radius = (0.25 * (a - d) * (a - d) + off * off).sqrt();
    let (hi, lo) = (mean + radius, mean - radius);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(det > 0.0) || !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(FilterError::SingularInnovation { condition });
    }
    Ok(Mat2::new(d, -b, -c, a) / det)
}

/// Kalman gain for the zero pseudo-measurement.
pub fn innovation(p: &ErrorCovariance, y_pred: &Vec2, h: &Mat2x21, n: &MeasurementNoise) -> Result<Innovation, FilterError> {
    let pht = p.0 * h.transpose();
    let mut s = h * pht + n.matrix();
    s = (s + s.transpose()) * 0.5;
    let s_inv = invert_2x2(&s)?;
    Ok(Innovation {
        y_pred: *y_pred,
        s,
        gain: pht * s_inv,
    })
}

/// Retracts a 21-dimensional correction onto the state.
pub fn retract(x: &FilterState, e: &Vec21, theta_small: f64) -> FilterState {
    let xi = TangentSE23::new(
        e.fixed_rows::<3>(idx::ROT).into_owned(),
        e.fixed_rows::<3>(idx::VEL).into_owned(),
        e.fixed_rows::<3>(idx::POS).into_owned(),
    );
    FilterState {
        pose: exp_se23_with(&xi, theta_small).compose(&x.pose),
        bias_gyro: x.bias_gyro + e.fixed_rows::<3>(idx::BIAS_GYRO),
        bias_accel: x.bias_accel + e.fixed_rows::<3>(idx::BIAS_ACCEL),
        car_rotation: exp_so3_with(&e.fixed_rows::<3>(idx::CAR_ROT).into_owned(), theta_small) * x.car_rotation,
        car_position: x.car_position + e.fixed_rows::<3>(idx::CAR_POS),
    }
}

/// Kalman update with the pseudo-measurement `y = 0`.
pub fn update(
    x: &FilterState,
    p: &ErrorCovariance,
    y_pred: &Vec2,
    h: &Mat2x21,
    n: &MeasurementNoise,
    theta_small: f64,
) -> Result<(FilterState, ErrorCovariance), FilterError> {
    let (x_new, mut p_new) = update_raw(x, p, y_pred, h, n, theta_small)?;
    p_new.symmetrize();
    Ok((x_new, p_new))
}

fn update_raw(
    x: &FilterState,
    p: &ErrorCovariance,
    y_pred: &Vec2,
    h: &Mat2x21,
    n: &MeasurementNoise,
    theta_small: f64,
) -> Result<(FilterState, ErrorCovariance), FilterError> {
    let inn = innovation(p, y_pred, h, n)?;
    let e = inn.gain * (-y_pred);
    let x_new = retract(x, &e, theta_small);
    Ok((x_new, ErrorCovariance((Mat21::identity() - inn.gain * h) * p.0)))
}

/// Output of one filter step.
#[derive(Clone, Copy, Debug)]
pub struct StepOutput {
    pub state: FilterState,
    pub covariance: ErrorCovariance,
    /// False when the update was skipped because the innovation covariance
    /// was singular.
    pub updated: bool,
    /// Largest relative asymmetry of the covariance products before they
    /// were symmetrized.
    pub asymmetry: f64,
}

/// A configured filter: kinematic model, process noise and variants.
#[derive(Clone, Debug)]
pub struct Iekf {
    pub model: Model,
    pub process_noise: ProcessNoise,
    pub initial_beliefs: InitialBeliefs,
    /// When false the car frame is frozen at `R_c = I`, `p_c = 0`.
    pub estimate_alignment: bool,
    /// When false only propagation runs (pure inertial integration).
    pub pseudo_measurements: bool,
    pub max_dt: f64,
    pub reorthonormalize_every: usize,
    pub psd_clamp_every: usize,
}

impl Default for Iekf {
    fn default() -> Self {
        Self::from_config(&FilterConfig::default())
    }
}

/// Per-step measurement covariance fed to the update.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSchedule {
    Static(MeasurementNoise),
    /// One entry per propagation step, i.e. `samples.len() - 1` entries.
    PerStep(Vec<MeasurementNoise>),
}

impl NoiseSchedule {
    fn at(&self, step: usize) -> MeasurementNoise {
        match self {
            NoiseSchedule::Static(n) => *n,
            NoiseSchedule::PerStep(v) => v[step],
        }
    }
}

/// Result of filtering a whole sequence.
#[derive(Clone, Debug, Default)]
pub struct FilterRun {
    /// One state per input sample, the first being the initial state.
    pub states: Vec<FilterState>,
    /// Timestamps at which an update was skipped.
    pub skipped_updates: Vec<f64>,
    /// Timestamps at which the sample gap exceeded the configured `max_dt`.
    pub time_jumps: Vec<f64>,
    /// Largest relative covariance asymmetry seen before symmetrization.
    pub max_asymmetry: f64,
    pub final_covariance: Option<ErrorCovariance>,
}

impl Iekf {
    pub fn from_config(cfg: &FilterConfig) -> Self {
        Self {
            model: Model {
                gravity: cfg.gravity(),
                theta_small: cfg.theta_small,
            },
            process_noise: cfg.process_noise(),
            initial_beliefs: cfg.initial_beliefs(),
            estimate_alignment: true,
            pseudo_measurements: true,
            max_dt: cfg.max_dt,
            reorthonormalize_every: cfg.reorthonormalize_every,
            psd_clamp_every: cfg.psd_clamp_every,
        }
    }

    pub fn without_alignment(mut self) -> Self {
        self.estimate_alignment = false;
        self
    }

    pub fn pure_integration(mut self) -> Self {
        self.pseudo_measurements = false;
        self
    }

    pub fn initial_covariance(&self) -> ErrorCovariance {
        let mut p0 = self.initial_beliefs;
        if !self.estimate_alignment {
            p0.car_rot = 0.0;
            p0.car_pos = 0.0;
        }
        p0.covariance()
    }

    fn effective_process_noise(&self) -> ProcessNoise {
        let mut q = self.process_noise;
        if !self.estimate_alignment {
            q.car_rot = 0.0;
            q.car_pos = 0.0;
        }
        q
    }

    /// Propagation followed by the pseudo-measurement update.
    pub fn step(
        &self,
        x: &FilterState,
        p: &ErrorCovariance,
        u: &ImuSample,
        dt: f64,
        n: &MeasurementNoise,
    ) -> Result<StepOutput, FilterError> {
        let (f, g) = self.model.jacobians(x, dt);
        let x_pred = self.model.propagate_state(x, u, dt)?;
        let mut p_pred = propagate_covariance_raw(p, &f, &g, &self.effective_process_noise());
        let mut asymmetry = p_pred.asymmetry();
        p_pred.symmetrize();
        if !self.pseudo_measurements {
            return Ok(StepOutput {
                state: x_pred,
                covariance: p_pred,
                updated: false,
                asymmetry,
            });
        }
        let y_pred = predict_measurement(&x_pred, u);
        let mut h = jacobian_h(&x_pred, u);
        if !self.estimate_alignment {
            h.fixed_columns_mut::<6>(idx::CAR_ROT).fill(0.0);
        }
        match update_raw(&x_pred, &p_pred, &y_pred, &h, n, self.model.theta_small) {
            Ok((mut state, mut covariance)) => {
                if !self.estimate_alignment {
                    state.car_rotation = x.car_rotation;
                    state.car_position = x.car_position;
                }
                asymmetry = asymmetry.max(covariance.asymmetry());
                covariance.symmetrize();
                Ok(StepOutput {
                    state,
                    covariance,
                    updated: true,
                    asymmetry,
                })
            }
            Err(FilterError::SingularInnovation { condition }) => {
                warn!("skipping update at t = {} s (condition number {condition:e})", u.t);
                Ok(StepOutput {
                    state: x_pred,
                    covariance: p_pred,
                    updated: false,
                    asymmetry,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Filters a whole sequence starting from `pose0`.
    ///
    /// Step `k` consumes sample `k` and the gap `t[k+1] - t[k]`, producing the
    /// state at sample `k + 1`.
    pub fn run(&self, samples: &[ImuSample], pose0: ExtendedPose, noise: &NoiseSchedule) -> Result<FilterRun, FilterError> {
        if samples.is_empty() {
            return Err(FilterError::Empty);
        }
        let steps = samples.len() - 1;
        if let NoiseSchedule::PerStep(v) = noise {
            if v.len() != steps {
                return Err(FilterError::NoiseLength {
                    got: v.len(),
                    expected: steps,
                });
            }
        }
        let mut x = crate::model::initial_state(pose0);
        let mut p = self.initial_covariance();
        let mut run = FilterRun {
            states: Vec::with_capacity(samples.len()),
            ..FilterRun::default()
        };
        run.states.push(x);
        for k in 0..steps {
            let u = &samples[k];
            let dt = samples[k + 1].t - u.t;
            if dt > self.max_dt {
                warn!("time jump of {dt:.3} s at t = {} s", u.t);
                run.time_jumps.push(u.t);
            }
            let out = self.step(&x, &p, u, dt, &noise.at(k))?;
            x = out.state;
            p = out.covariance;
            run.max_asymmetry = run.max_asymmetry.max(out.asymmetry);
            if !out.updated && self.pseudo_measurements {
                run.skipped_updates.push(samples[k + 1].t);
            }
            let n = k + 1;
            if self.reorthonormalize_every > 0 && n % self.reorthonormalize_every == 0 {
                x.pose.rotation = orthonormalize(&x.pose.rotation);
                x.car_rotation = orthonormalize(&x.car_rotation);
            }
            if self.psd_clamp_every > 0 && n % self.psd_clamp_every == 0 {
                p.clamp_psd();
            }
            if !x.is_finite() || !p.is_finite() {
                return Err(FilterError::NonFinite { step: n });
            }
            run.states.push(x);
        }
        debug!(
            "filtered {} samples, {} skipped updates, {} time jumps",
            samples.len(),
            run.skipped_updates.len(),
            run.time_jumps.len()
        );
        run.final_covariance = Some(p);
        Ok(run)
    }
}

/// Stacks a 21-vector from its blocks; handy for building perturbations.
pub fn error_vector(blocks: [Vec3; 7]) -> Vec21 {
    let mut e = SVector::<f64, 21>::zeros();
    for (i, b) in blocks.iter().enumerate() {
        e.fixed_rows_mut::<3>(3 * i).copy_from(b);
    }
    e
}
