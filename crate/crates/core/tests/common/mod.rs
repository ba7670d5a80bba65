//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use aidr_core::geom::{ExtendedPose, Mat3, Vec3};
use aidr_core::model::{FilterState, ImuSample, Vec21};
use nalgebra::{DMatrix, SMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub type Mat5 = SMatrix<f64, 5, 5>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hat3(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Matrix exponential by scaling and squaring with a 30-term Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
    let mut s = 0;
    while norm / 2f64.powi(s) > 0.25 {
        s += 1;
    }
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

pub fn expm3(a: &Mat3) -> Mat3 {
    let d = expm(&DMatrix::from_column_slice(3, 3, a.as_slice()));
    Mat3::from_column_slice(d.as_slice())
}

pub fn expm5(a: &Mat5) -> Mat5 {
    let d = expm(&DMatrix::from_column_slice(5, 5, a.as_slice()));
    Mat5::from_column_slice(d.as_slice())
}

pub fn se23_hat(rot: &Vec3, vel: &Vec3, pos: &Vec3) -> Mat5 {
    let mut m = Mat5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat3(rot));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(vel);
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(pos);
    m
}

pub fn pose_matrix(x: &ExtendedPose) -> Mat5 {
    let mut m = Mat5::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&x.rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&x.velocity);
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(&x.position);
    m
}

pub fn pose_from_matrix(m: &Mat5) -> ExtendedPose {
    ExtendedPose::new(
        m.fixed_view::<3, 3>(0, 0).into_owned(),
        m.fixed_view::<3, 1>(0, 3).into_owned(),
        m.fixed_view::<3, 1>(0, 4).into_owned(),
    )
}

/// Rotation vector of `r` via the axis-angle formula (valid away from pi).
pub fn log3(r: &Mat3) -> Vec3 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = c.acos();
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-12 {
        return 0.5 * w;
    }
    w * (theta / (2.0 * theta.sin()))
}

/// Left Jacobian of SO(3) by its power series.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let k = hat3(phi);
    let mut term = Mat3::identity();
    let mut sum = Mat3::identity();
    for n in 1..30 {
        term = term * k / (n as f64 + 1.0);
        sum += term;
    }
    sum
}

/// Oracle retraction: `exp(xi) * pose` through the 5x5 matrix exponential.
pub fn perturb(x: &FilterState, e: &Vec21) -> FilterState {
    let b = |i: usize| Vec3::new(e[i], e[i + 1], e[i + 2]);
    let m = expm5(&se23_hat(&b(0), &b(3), &b(6))) * pose_matrix(&x.pose);
    FilterState {
        pose: pose_from_matrix(&m),
        bias_gyro: x.bias_gyro + b(9),
        bias_accel: x.bias_accel + b(12),
        car_rotation: expm3(&hat3(&b(15))) * x.car_rotation,
        car_position: x.car_position + b(18),
    }
}

/// Oracle error extraction: the 21-vector `e` with `truth = perturb(est, e)`.
pub fn error_between(truth: &FilterState, est: &FilterState) -> Vec21 {
    let dr = truth.pose.rotation * est.pose.rotation.transpose();
    let phi = log3(&dr);
    let jinv = left_jacobian(&phi).try_inverse().expect("invertible left Jacobian");
    let xi_v = jinv * (truth.pose.velocity - dr * est.pose.velocity);
    let xi_p = jinv * (truth.pose.position - dr * est.pose.position);
    let mut e = Vec21::zeros();
    let blocks = [
        phi,
        xi_v,
        xi_p,
        truth.bias_gyro - est.bias_gyro,
        truth.bias_accel - est.bias_accel,
        log3(&(truth.car_rotation * est.car_rotation.transpose())),
        truth.car_position - est.car_position,
    ];
    for (i, b) in blocks.iter().enumerate() {
        e.fixed_rows_mut::<3>(3 * i).copy_from(b);
    }
    e
}

pub fn unit_vec<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_vec<R: Rng>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> Mat3 {
    let axis = unit_vec(rng);
    expm3(&hat3(&(axis * rng.random_range(0.0..3.0))))
}

pub fn random_state<R: Rng>(rng: &mut R) -> FilterState {
    FilterState {
        pose: ExtendedPose::new(random_rotation(rng), random_vec(rng, 10.0), random_vec(rng, 20.0)),
        bias_gyro: random_vec(rng, 0.01),
        bias_accel: random_vec(rng, 0.1),
        car_rotation: expm3(&hat3(&random_vec(rng, 0.1))),
        car_position: random_vec(rng, 1.5),
    }
}

pub fn random_input<R: Rng>(rng: &mut R) -> ImuSample {
    ImuSample::new(0.0, random_vec(rng, 0.5), random_vec(rng, 3.0) + Vec3::new(0.0, 0.0, 9.8))
}

pub fn max_abs<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> f64 {
    m.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Worst-case errors of the closed-form exponentials against [`expm`].
#[derive(Debug)]
pub struct GeometryCheck {
    pub so3: f64,
    pub se23: f64,
    /// Largest jump of `exp_so3` / `exp_se23` across `theta_small`.
    pub continuity: f64,
}

pub fn geometry_check(samples: usize, seed: u64) -> GeometryCheck {
    use aidr_core::geom::{exp_se23, exp_so3, TangentSE23, THETA_SMALL};
    let mut r = rng(seed);
    let (mut so3, mut se23) = (0.0f64, 0.0f64);
    for i in 0..samples {
        // cover tiny, moderate and near-pi angles
        let theta = match i % 4 {
            0 => 10f64.powf(r.random_range(-12.0..-2.0)),
            3 => std::f64::consts::PI - 10f64.powf(r.random_range(-8.0..-1.0)),
            _ => r.random_range(0.0..std::f64::consts::PI),
        };
        let phi = unit_vec(&mut r) * theta;
        let v = random_vec(&mut r, 10.0);
        let p = random_vec(&mut r, 10.0);
        so3 = so3.max(max_abs(&(exp_so3(&phi) - expm3(&hat3(&phi)))));
        let got = pose_matrix(&exp_se23(&TangentSE23::new(phi, v, p)));
        se23 = se23.max(max_abs(&(got - expm5(&se23_hat(&phi, &v, &p)))));
    }
    let mut continuity = 0.0f64;
    for _ in 0..100 {
        let axis = unit_vec(&mut r);
        let v = random_vec(&mut r, 10.0);
        let p = random_vec(&mut r, 10.0);
        let below = axis * (THETA_SMALL * (1.0 - 1e-9));
        let above = axis * (THETA_SMALL * (1.0 + 1e-9));
        continuity = continuity.max(max_abs(&(exp_so3(&below) - exp_so3(&above))));
        let mb = pose_matrix(&exp_se23(&TangentSE23::new(below, v, p)));
        let ma = pose_matrix(&exp_se23(&TangentSE23::new(above, v, p)));
        continuity = continuity.max(max_abs(&(mb - ma)));
    }
    GeometryCheck { so3, se23, continuity }
}

/// Relative max-entry errors of the analytic Jacobians against finite
/// differences of the implemented propagation and measurement.
#[derive(Debug)]
pub struct JacobianCheck {
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

fn propagate_with_noise(
    model: &aidr_core::iekf::Model,
    x: &FilterState,
    u: &ImuSample,
    w: &SMatrix<f64, 18, 1>,
    h: f64,
) -> FilterState {
    let b = |i: usize| Vec3::new(w[i], w[i + 1], w[i + 2]);
    let noisy = ImuSample::new(u.t, u.omega + b(0), u.accel + b(3));
    let mut out = model.propagate_state(x, &noisy, h).expect("positive step");
    out.bias_gyro += b(6) * h;
    out.bias_accel += b(9) * h;
    out.car_rotation *= expm3(&hat3(&(b(12) * h)));
    out.car_position += b(15) * h;
    out
}

/// `d error(x_{k+1}) / d e_k`, minus identity, divided by the step `h`.
pub fn error_rate_f(model: &aidr_core::iekf::Model, x: &FilterState, u: &ImuSample, h: f64, eps: f64) -> SMatrix<f64, 21, 21> {
    let zero = SMatrix::<f64, 18, 1>::zeros();
    let nominal = propagate_with_noise(model, x, u, &zero, h);
    let mut out = SMatrix::<f64, 21, 21>::zeros();
    for j in 0..21 {
        let mut e = Vec21::zeros();
        e[j] = eps;
        let plus = propagate_with_noise(model, &perturb(x, &e), u, &zero, h);
        let minus = propagate_with_noise(model, &perturb(x, &(-e)), u, &zero, h);
        let col = (error_between(&plus, &nominal) - error_between(&minus, &nominal)) / (2.0 * eps);
        out.set_column(j, &col);
    }
    (out - SMatrix::<f64, 21, 21>::identity()) / h
}

/// `d error(x_{k+1}) / d w` divided by the step `h`.
fn error_rate_g(model: &aidr_core::iekf::Model, x: &FilterState, u: &ImuSample, h: f64, eps: f64) -> SMatrix<f64, 21, 18> {
    let zero = SMatrix::<f64, 18, 1>::zeros();
    let nominal = propagate_with_noise(model, x, u, &zero, h);
    let mut out = SMatrix::<f64, 21, 18>::zeros();
    for j in 0..18 {
        let mut w = zero;
        w[j] = eps;
        let plus = propagate_with_noise(model, x, u, &w, h);
        let minus = propagate_with_noise(model, x, u, &(-w), h);
        let col = (error_between(&plus, &nominal) - error_between(&minus, &nominal)) / (2.0 * eps);
        out.set_column(j, &col);
    }
    out / h
}

pub fn jacobian_check(samples: usize, seed: u64) -> JacobianCheck {
    use aidr_core::iekf::{jacobian_h, predict_measurement, Model};
    let model = Model::default();
    let mut r = rng(seed);
    let dt = 0.01;
    let (h_step, eps) = (1e-4, 1e-5);
    let (mut fe, mut ge, mut he) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..samples {
        let x = random_state(&mut r);
        let u = random_input(&mut r);
        let (f, g) = model.jacobians(&x, dt);

        // continuous-time rates by Richardson extrapolation in the step
        let a_fd = error_rate_f(&model, &x, &u, h_step / 2.0, eps) * 2.0 - error_rate_f(&model, &x, &u, h_step, eps);
        let a = (f - SMatrix::<f64, 21, 21>::identity()) / dt;
        fe = fe.max(max_abs(&(a - a_fd)) / max_abs(&a_fd));

        let b_fd = error_rate_g(&model, &x, &u, h_step / 2.0, eps) * 2.0 - error_rate_g(&model, &x, &u, h_step, eps);
        let b = g / dt;
        ge = ge.max(max_abs(&(b - b_fd)) / max_abs(&b_fd));

        let hm = jacobian_h(&x, &u);
        let mut h_fd = SMatrix::<f64, 2, 21>::zeros();
        let meps = 1e-6;
        for j in 0..21 {
            let mut e = Vec21::zeros();
            e[j] = meps;
            let col = (predict_measurement(&perturb(&x, &e), &u) - predict_measurement(&perturb(&x, &(-e)), &u)) / (2.0 * meps);
            h_fd.set_column(j, &col);
        }
        he = he.max(max_abs(&(hm - h_fd)) / max_abs(&h_fd));
    }
    JacobianCheck { f: fe, g: ge, h: he }
}

/// Seeded synthetic scenarios shared by the filter and acceptance suites.
pub mod scenario {
    use aidr_core::data::{generate_synthetic, Sequence, SyntheticSpec};
    use aidr_core::eval::{relative_errors, ErrorReport};
    use aidr_core::geom::{rotation_from_rpy, Pose3, Vec3};
    use aidr_core::iekf::{FilterRun, Iekf, NoiseSchedule};
    use aidr_core::FilterConfig;

    pub const GYRO_BIAS: [f64; 3] = [5e-3, -4e-3, 3e-3];
    pub const ACCEL_BIAS: [f64; 3] = [0.02, -0.02, 0.01];

    /// About 1 km around a 100 m block with a stop, realistic noise and
    /// constant biases.
    pub fn biased_loop(seed: u64) -> Sequence {
        let mut spec = SyntheticSpec::urban_loop(100.0, 10.0, 2, 15.0).with_realistic_noise();
        spec.gyro_bias = Vec3::from(GYRO_BIAS);
        spec.accel_bias = Vec3::from(ACCEL_BIAS);
        generate_synthetic(&spec, seed).unwrap()
    }

    /// Default configuration with a gyro-bias prior wide enough for
    /// [`GYRO_BIAS`].
    pub fn biased_config() -> FilterConfig {
        FilterConfig {
            sigma0_bias_gyro: 5e-3,
            ..FilterConfig::default()
        }
    }

    /// Small block with tight corners; the car frame is rotated relative
    /// to the IMU by the given roll, pitch and yaw in degrees.
    pub fn misaligned_loop(seed: u64, roll: f64, pitch: f64, yaw: f64, noisy: bool) -> Sequence {
        let mut spec = SyntheticSpec::urban_loop(60.0, 10.0, 3, 8.0);
        if noisy {
            spec = spec.with_realistic_noise();
        }
        spec.mounting = rotation_from_rpy(roll.to_radians(), pitch.to_radians(), yaw.to_radians());
        generate_synthetic(&spec, seed).unwrap()
    }

    pub fn run(filter: &Iekf, cfg: &FilterConfig, seq: &Sequence) -> FilterRun {
        filter
            .run(&seq.imu, seq.initial_pose(0), &NoiseSchedule::Static(cfg.static_noise()))
            .unwrap()
    }

    pub fn report(run: &FilterRun, seq: &Sequence) -> ErrorReport {
        let est: Vec<Pose3> = run.states.iter().map(|s| Pose3::from(&s.pose)).collect();
        relative_errors(&est, &seq.ground_truth).unwrap()
    }

    /// Index of the first sample at or after `t` seconds from the start.
    pub fn index_at(seq: &Sequence, t: f64) -> usize {
        let t0 = seq.imu[0].t;
        seq.imu.iter().position(|s| s.t - t0 >= t).unwrap()
    }
}
