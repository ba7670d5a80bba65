//! IMU samples, filter state and noise parameter containers.

use nalgebra::{SMatrix, SVector};

use crate::geom::{ExtendedPose, Mat3, Vec3};

pub type Mat21 = SMatrix<f64, 21, 21>;
pub type Vec21 = SVector<f64, 21>;
pub type Mat2 = SMatrix<f64, 2, 2>;
pub type Vec2 = SVector<f64, 2>;

/// Dimension of the linearized error.
pub const STATE_DIM: usize = 21;
/// Dimension of the process noise.
pub const NOISE_DIM: usize = 18;

/// Offsets of each block inside the 21-dimensional error vector.
pub mod idx {
    pub const ROT: usize = 0;
    pub const VEL: usize = 3;
    pub const POS: usize = 6;
    pub const BIAS_GYRO: usize = 9;
    pub const BIAS_ACCEL: usize = 12;
    pub const CAR_ROT: usize = 15;
    pub const CAR_POS: usize = 18;
}

/// Standard gravity in a z-up world frame.
pub const GRAVITY: [f64; 3] = [0.0, 0.0, -9.80655];

/// One timestamped gyro and accelerometer reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Seconds.
    pub t: f64,
    /// Angular rate, rad/s.
    pub omega: Vec3,
    /// Specific force, m/s^2.
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, omega: Vec3, accel: Vec3) -> Self {
        Self { t, omega, accel }
    }

    /// `[omega; accel]` as six channels.
    pub fn channels(&self) -> [f64; 6] {
        [
            self.omega.x,
            self.omega.y,
            self.omega.z,
            self.accel.x,
            self.accel.y,
            self.accel.z,
        ]
    }
}

/// Full filter state: IMU extended pose, IMU biases and the car frame
/// expressed relative to the IMU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub pose: ExtendedPose,
    pub bias_gyro: Vec3,
    pub bias_accel: Vec3,
    pub car_rotation: Mat3,
    /// Lever arm between the IMU and the car frame origin, in the IMU frame.
    pub car_position: Vec3,
}

impl FilterState {
    pub fn is_finite(&self) -> bool {
        self.pose.is_finite()
            && self.bias_gyro.iter().all(|x| x.is_finite())
            && self.bias_accel.iter().all(|x| x.is_finite())
            && self.car_rotation.iter().all(|x| x.is_finite())
            && self.car_position.iter().all(|x| x.is_finite())
    }
}

/// Zero biases, aligned car frame, zero lever arm.
pub fn initial_state(pose0: ExtendedPose) -> FilterState {
    FilterState {
        pose: pose0,
        bias_gyro: Vec3::zeros(),
        bias_accel: Vec3::zeros(),
        car_rotation: Mat3::identity(),
        car_position: Vec3::zeros(),
    }
}

/// Covariance of the right-invariant linearized error.
///
/// Ordering: attitude, velocity, position, gyro bias, accel bias, car
/// rotation, car lever arm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorCovariance(pub Mat21);

impl ErrorCovariance {
    pub fn zeros() -> Self {
        Self(Mat21::zeros())
    }

    pub fn matrix(&self) -> &Mat21 {
        &self.0
    }

    pub fn symmetrize(&mut self) {
        let t = self.0.transpose();
        self.0 = (self.0 + t) * 0.5;
    }

    /// Largest `|P - P^T|` entry relative to the largest `|P|` entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.0.amax().max(f64::MIN_POSITIVE);
        (self.0 - self.0.transpose()).amax() / scale
    }

    /// Floors negative eigenvalues at zero.
    pub fn clamp_psd(&mut self) {
        self.symmetrize();
        let eig = self.0.symmetric_eigen();
        if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
            return;
        }
        let lambda = eig.eigenvalues.map(|l| l.max(0.0));
        let v = eig.eigenvectors;
        self.0 = v * Mat21::from_diagonal(&lambda) * v.transpose();
        self.symmetrize();
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Standard deviations of the initial error. Yaw, vertical velocity and
/// position carry an exact zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialBeliefs {
    pub rot: f64,
    pub vel: f64,
    pub bias_gyro: f64,
    pub bias_accel: f64,
    pub car_rot: f64,
    pub car_pos: f64,
}

impl Default for InitialBeliefs {
    fn default() -> Self {
        Self {
            rot: 1e-3,
            vel: 0.3,
            bias_gyro: 1e-4,
            bias_accel: 3e-2,
            car_rot: 3e-3,
            car_pos: 1e-1,
        }
    }
}

impl InitialBeliefs {
    pub fn std_devs(&self) -> [f64; 21] {
        let mut d = [0.0; 21];
        d[0] = self.rot;
        d[1] = self.rot;
        d[3] = self.vel;
        d[4] = self.vel;
        for i in 0..3 {
            d[idx::BIAS_GYRO + i] = self.bias_gyro;
            d[idx::BIAS_ACCEL + i] = self.bias_accel;
            d[idx::CAR_ROT + i] = self.car_rot;
            d[idx::CAR_POS + i] = self.car_pos;
        }
        d
    }

    pub fn covariance(&self) -> ErrorCovariance {
        let d = Vec21::from_iterator(self.std_devs().iter().map(|s| s * s));
        ErrorCovariance(Mat21::from_diagonal(&d))
    }
}

/// Diagonal process noise built from six scalar standard deviations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProcessNoise {
    pub gyro: f64,
    pub accel: f64,
    pub bias_gyro: f64,
    pub bias_accel: f64,
    pub car_rot: f64,
    pub car_pos: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            gyro: 1.4e-2,
            accel: 3e-2,
            bias_gyro: 1e-4,
            bias_accel: 1e-3,
            car_rot: 1e-4,
            car_pos: 1e-4,
        }
    }
}

impl ProcessNoise {
    pub fn std_devs(&self) -> [f64; 6] {
        [
            self.gyro,
            self.accel,
            self.bias_gyro,
            self.bias_accel,
            self.car_rot,
            self.car_pos,
        ]
    }

    /// Diagonal of the 18x18 covariance.
    pub fn diagonal(&self) -> SVector<f64, 18> {
        let s = self.std_devs();
        SVector::<f64, 18>::from_fn(|i, _| s[i / 3] * s[i / 3])
    }

    pub fn matrix(&self) -> SMatrix<f64, 18, 18> {
        SMatrix::<f64, 18, 18>::from_diagonal(&self.diagonal())
    }
}

/// Diagonal covariance of the lateral and vertical pseudo-measurements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementNoise {
    /// m^2/s^2
    pub lat: f64,
    /// m^2/s^2
    pub up: f64,
}

impl MeasurementNoise {
    pub fn from_std(sigma_lat: f64, sigma_up: f64) -> Self {
        Self {
            lat: sigma_lat * sigma_lat,
            up: sigma_up * sigma_up,
        }
    }

    pub fn matrix(&self) -> Mat2 {
        Mat2::new(self.lat, 0.0, 0.0, self.up)
    }
}

/// Nominal pseudo-measurement standard deviations, m/s.
pub const SIGMA_LAT: f64 = 1.0;
pub const SIGMA_UP: f64 = 3.0;

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self::from_std(SIGMA_LAT, SIGMA_UP)
    }
}

/// The pre-training parameter set.
pub fn default_parameters() -> (InitialBeliefs, ProcessNoise, MeasurementNoise) {
    (
        InitialBeliefs::default(),
        ProcessNoise::default(),
        MeasurementNoise::default(),
    )
}
