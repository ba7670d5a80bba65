mod common;

use std::time::Instant;

use aidr_core::geom::{compose, exp_so3, ExtendedPose, Mat3, Vec3};
use aidr_core::iekf::{innovation, jacobian_h, propagate_covariance, update, Model};
use aidr_core::model::{ErrorCovariance, Mat21, MeasurementNoise, ProcessNoise, Vec2};
use common::{geometry_check, jacobian_check};
use common::{hat3, max_abs, pose_matrix, random_input, random_rotation, random_state, random_vec, rng, unit_vec};
use nalgebra::SMatrix;
use rand::Rng;

#[test]
fn exponentials_match_matrix_exponential() {
    let start = Instant::now();
    let c = geometry_check(1000, 1);
    println!("{c:?} in {:?}", start.elapsed());
    assert!(c.so3 < 1e-9, "so3 error {}", c.so3);
    assert!(c.se23 < 1e-9, "se23 error {}", c.se23);
    assert!(c.continuity < 1e-12, "discontinuity {}", c.continuity);
}

#[test]
fn jacobians_match_finite_differences() {
    let start = Instant::now();
    let c = jacobian_check(100, 2);
    println!("{c:?} in {:?}", start.elapsed());
    assert!(c.f < 1e-5, "F relative error {}", c.f);
    assert!(c.g < 1e-5, "G relative error {}", c.g);
    assert!(c.h < 1e-5, "H relative error {}", c.h);
}

/// Plain power series truncated after 20 terms.
fn series_exp3(a: &Mat3) -> Mat3 {
    let mut term = Mat3::identity();
    let mut sum = Mat3::identity();
    for k in 1..=20 {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

#[test]
fn exp_so3_matches_truncated_series() {
    // the 20-term remainder stays below 1e-10 for angles up to 2 rad
    let mut r = rng(3);
    for _ in 0..1000 {
        let phi = unit_vec(&mut r) * r.random_range(0.0..2.0);
        let err = max_abs(&(exp_so3(&phi) - series_exp3(&hat3(&phi))));
        assert!(err < 1e-10, "{err}");
    }
}

#[test]
fn compose_matches_matrix_product() {
    let mut r = rng(4);
    for _ in 0..1000 {
        let a = ExtendedPose::new(random_rotation(&mut r), random_vec(&mut r, 20.0), random_vec(&mut r, 100.0));
        let b = ExtendedPose::new(random_rotation(&mut r), random_vec(&mut r, 20.0), random_vec(&mut r, 100.0));
        let err = max_abs(&(pose_matrix(&compose(&a, &b)) - pose_matrix(&a) * pose_matrix(&b)));
        assert!(err < 1e-12, "{err}");
    }
}

fn random_psd<R: Rng>(r: &mut R) -> ErrorCovariance {
    let a = SMatrix::<f64, 21, 21>::from_fn(|_, _| r.random_range(-0.1..0.1));
    ErrorCovariance(a * a.transpose())
}

#[test]
fn process_noise_only_adds_uncertainty() {
    let model = Model::default();
    let mut r = rng(5);
    for _ in 0..100 {
        let x = random_state(&mut r);
        let p = random_psd(&mut r);
        let (f, g) = model.jacobians(&x, 0.01);
        let with_q = propagate_covariance(&p, &f, &g, &ProcessNoise::default());
        let fpf = f * p.0 * f.transpose();
        assert!(with_q.0.trace() >= fpf.trace());
    }
}

#[test]
fn update_never_inflates_measured_directions() {
    let mut r = rng(6);
    for _ in 0..100 {
        let x = random_state(&mut r);
        let u = random_input(&mut r);
        let p = random_psd(&mut r);
        let h = jacobian_h(&x, &u);
        let y = Vec2::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let n = MeasurementNoise::from_std(r.random_range(0.01..2.0), r.random_range(0.01..3.0));
        let (_, post) = update(&x, &p, &y, &h, &n, 1e-7).unwrap();
        for row in 0..2 {
            let v = h.row(row).transpose();
            let before = (v.transpose() * p.0 * v)[0];
            let after = (v.transpose() * post.0 * v)[0];
            assert!(after <= before + 1e-12, "{after} > {before}");
        }
        // and the posterior is the textbook form with the same gain
        let inn = innovation(&p, &y, &h, &n).unwrap();
        let expected = (Mat21::identity() - inn.gain * h) * p.0;
        assert!(max_abs(&(post.0 - 0.5 * (expected + expected.transpose()))) < 1e-12);
    }
}

#[test]
fn propagation_follows_a_circle() {
    let model = Model::default();
    let (speed, rate, dt) = (5.0, 0.1, 0.01);
    let radius = speed / rate;
    let theta = rate * dt;
    let circle = |t: f64| Vec3::new(radius * (rate * t).sin(), radius * (1.0 - (rate * t).cos()), 0.0);
    // p' = p + v dt makes v the secant velocity of the closed-form path
    let v_body = circle(dt) / dt;
    let turn = Mat3::new(theta.cos(), -theta.sin(), 0.0, theta.sin(), theta.cos(), 0.0, 0.0, 0.0, 1.0);
    // specific force keeping the body-frame velocity fixed, plus the gravity reaction
    let accel = (turn - Mat3::identity()) * v_body / dt - model.gravity;
    let mut x = aidr_core::model::initial_state(ExtendedPose::new(Mat3::identity(), v_body, Vec3::zeros()));
    let u = aidr_core::ImuSample::new(0.0, Vec3::new(0.0, 0.0, rate), accel);
    let mut worst = 0.0f64;
    for k in 1..=1000 {
        x = model.propagate_state(&x, &u, dt).unwrap();
        worst = worst.max((x.pose.position - circle(k as f64 * dt)).norm());
    }
    assert!((v_body.norm() - speed).abs() < 1e-4);
    assert!(worst < 1e-3, "max deviation {worst} m");
}
