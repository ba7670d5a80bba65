use aidr_core::adapter::ImuWindow;
use aidr_core::eval::relative_errors;
use aidr_core::geom::{exp_se23, exp_so3, log_so3, rotation_from_rpy, TangentSE23};
use aidr_core::{AdapterWeights, ExtendedPose, FilterConfig, ImuSample, Mat3, NoiseScale, Pose3, Vec3};
use proptest::prelude::*;

fn vec3(bound: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-bound..bound).prop_map(Vec3::from)
}

fn rotation() -> impl Strategy<Value = Mat3> {
    (-3.1..3.1f64, -1.5..1.5f64, -3.1..3.1f64).prop_map(|(r, p, y)| rotation_from_rpy(r, p, y))
}

fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
    (a - b).abs().max() < tol
}

fn line(n: usize, step: f64, rot: &Mat3, origin: &Vec3) -> Vec<Pose3> {
    (0..n)
        .map(|k| Pose3::new(*rot, origin + rot * Vec3::new(k as f64 * step, 0.0, 0.0)))
        .collect()
}

proptest! {
    #[test]
    fn log_inverts_exp(axis in vec3(1.0), angle in 0.0..3.0f64) {
        prop_assume!(axis.norm() > 1e-3);
        let phi = axis.normalize() * angle;
        prop_assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-9);
    }

    #[test]
    fn exp_of_negated_tangent_is_the_inverse(rot in vec3(1.8), vel in vec3(20.0), pos in vec3(100.0)) {
        let x = exp_se23(&TangentSE23::new(rot, vel, pos));
        let y = exp_se23(&TangentSE23::new(-rot, -vel, -pos));
        let id = x.compose(&y);
        prop_assert!(close(&id.rotation, &Mat3::identity(), 1e-12));
        prop_assert!(id.velocity.norm() < 1e-10 && id.position.norm() < 1e-9);
        let inv = x.inverse();
        prop_assert!(close(&inv.rotation, &y.rotation, 1e-12));
        prop_assert!((inv.velocity - y.velocity).norm() < 1e-10);
        prop_assert!((inv.position - y.position).norm() < 1e-9);
    }

    #[test]
    fn compose_with_inverse_is_identity(r in rotation(), v in vec3(30.0), p in vec3(500.0)) {
        let x = ExtendedPose::new(r, v, p);
        let id = x.inverse().compose(&x);
        prop_assert!(close(&id.rotation, &Mat3::identity(), 1e-12));
        prop_assert!(id.velocity.norm() < 1e-12 && id.position.norm() < 1e-10);
    }

    #[test]
    fn adapter_output_is_bounded(
        seed in 0u64..1000,
        fc_scale in 0.0..50.0f64,
        readings in prop::collection::vec((vec3(10.0), vec3(50.0)), 1..40),
    ) {
        let mut w = AdapterWeights::init(seed);
        for (i, v) in w.fc_weight.iter_mut().chain(w.fc_bias.iter_mut()).enumerate() {
            *v = fc_scale * (i as f64 * 0.731 + seed as f64).sin();
        }
        let samples: Vec<ImuSample> = readings
            .iter()
            .enumerate()
            .map(|(k, (g, a))| ImuSample::new(k as f64 * 0.01, *g, *a))
            .collect();
        let scale = NoiseScale::default();
        let n = w.forward(&ImuWindow::ending_at(&samples, samples.len() - 1), &scale, None);
        let (lat2, up2) = (scale.sigma_lat.powi(2), scale.sigma_up.powi(2));
        let slack = 1.0 + 1e-12;
        prop_assert!(n.lat >= 1e-3 * lat2 / slack && n.lat <= 1e3 * lat2 * slack);
        prop_assert!(n.up >= 1e-3 * up2 / slack && n.up <= 1e3 * up2 * slack);
    }

    #[test]
    fn config_text_round_trips(
        s0 in prop::array::uniform6(1e-6..1.0f64),
        q in prop::array::uniform6(1e-8..1.0f64),
        lat in 0.01..10.0f64,
        up in 0.01..10.0f64,
        beta in 0.5..5.0f64,
    ) {
        let cfg = FilterConfig {
            sigma0_rot: s0[0], sigma0_vel: s0[1], sigma0_bias_gyro: s0[2],
            sigma0_bias_accel: s0[3], sigma0_car_rot: s0[4], sigma0_car_pos: s0[5],
            sigma_gyro: q[0], sigma_accel: q[1], sigma_bias_gyro: q[2],
            sigma_bias_accel: q[3], sigma_car_rot: q[4], sigma_car_pos: q[5],
            sigma_lat: lat, sigma_up: up, beta,
            ..FilterConfig::default()
        };
        prop_assert_eq!(FilterConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn relative_errors_ignore_a_shared_rigid_motion(
        r in rotation(),
        t in vec3(1000.0),
        curvature in -0.01..0.01f64,
        scale in 0.95..1.05f64,
    ) {
        let gt: Vec<Pose3> = (0..1200)
            .map(|k| {
                let s = k as f64;
                let yaw = curvature * s;
                Pose3::new(rotation_from_rpy(0.0, 0.0, yaw), Vec3::new(s, 0.5 * curvature * s * s, 0.0))
            })
            .collect();
        let est: Vec<Pose3> = gt
            .iter()
            .map(|p| Pose3::new(p.rotation * rotation_from_rpy(0.0, 0.0, 1e-4), p.translation * scale))
            .collect();
        let moved = |v: &[Pose3]| -> Vec<Pose3> { v.iter().map(|p| Pose3::new(r, t).compose(p)).collect() };
        let a = relative_errors(&est, &gt).unwrap();
        let b = relative_errors(&moved(&est), &moved(&gt)).unwrap();
        prop_assert!((a.t_rel - b.t_rel).abs() < 1e-6 * (1.0 + a.t_rel));
        prop_assert!((a.r_rel - b.r_rel).abs() < 1e-6 * (1.0 + a.r_rel));
        prop_assert_eq!(a.segments, b.segments);
    }

    #[test]
    fn scaled_line_error_is_direction_independent(
        r in rotation(),
        origin in vec3(100.0),
        scale in 0.9..1.1f64,
    ) {
        let gt = line(1000, 1.0, &r, &origin);
        let est: Vec<Pose3> = line(1000, scale, &r, &(origin * scale));
        let fwd = relative_errors(&est, &gt).unwrap();
        let rev_gt: Vec<Pose3> = gt.iter().rev().cloned().collect();
        let rev_est: Vec<Pose3> = est.iter().rev().cloned().collect();
        let rev = relative_errors(&rev_est, &rev_gt).unwrap();
        let expected = (scale - 1.0).abs() * 100.0;
        prop_assert!((fwd.t_rel - expected).abs() < 1e-6, "{} vs {}", fwd.t_rel, expected);
        prop_assert!((rev.t_rel - expected).abs() < 1e-6, "{} vs {}", rev.t_rel, expected);
    }
}
