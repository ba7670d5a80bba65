//! SO(3) and SE_2(3) primitives.
//!
//! Rotations are kept as full 3x3 matrices. An element of SE_2(3) bundles a
//! rotation with a velocity and a position and is equivalent to the 5x5 matrix
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! Tangent vectors are ordered `[rotation, velocity, position]`.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat5 = SMatrix<f64, 5, 5>;
pub type Vec9 = SVector<f64, 9>;

/// Below this rotation angle the exponential coefficients are evaluated by
/// their Taylor expansions.
pub const THETA_SMALL: f64 = 1e-7;

/// Matrix `S` with `S * w == v.cross(&w)`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the antisymmetric part of `m`.
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Coefficients `(a, b)` of the closed-form exponentials, with
/// `a = (1 - cos t) / t^2` and `b = (t - sin t) / t^3`.
pub fn exp_coefficients(theta: f64, theta_small: f64) -> (f64, f64) {
    if theta < theta_small {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let half = 0.5 * theta;
        let sinc_half = half.sin() / half;
        let a = 0.5 * sinc_half * sinc_half;
        let b = (theta - theta.sin()) / (theta * theta * theta);
        (a, b)
    }
}

/// Exponential map of SO(3).
pub fn exp_so3(xi: &Vec3) -> Mat3 {
    exp_so3_with(xi, THETA_SMALL)
}

/// [`exp_so3`] with an explicit small-angle threshold.
pub fn exp_so3_with(xi: &Vec3, theta_small: f64) -> Mat3 {
    let theta = xi.norm();
    let (a, b) = exp_coefficients(theta, theta_small);
    let k = skew(xi);
    // (xi)^3 = -theta^2 (xi), so I + K + aK^2 + bK^3 = I + (1 - b theta^2) K + a K^2
    Mat3::identity() + k * (1.0 - b * theta * theta) + (k * k) * a
}

/// Logarithm of SO(3), returning the rotation vector.
///
/// Only meant for tests and diagnostics; accuracy degrades near an angle of pi.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = vee(r);
    if theta < 1e-8 {
        return w;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // near pi the antisymmetric part vanishes; recover the axis from R + I
        let m = (r + Mat3::identity()) * 0.5;
        let col = (0..3)
            .max_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]))
            .unwrap_or(0);
        let mut axis = m.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / theta.sin())
}

/// Nearest rotation matrix to `m` in the Frobenius sense.
pub fn orthonormalize(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return *m;
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_from_rpy(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Mat3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Mat3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Inverse of [`rotation_from_rpy`], returning `(roll, pitch, yaw)`.
pub fn rpy_from_rotation(r: &Mat3) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

/// Rotation angle of `r` in radians.
///
/// Uses both the trace and the antisymmetric part, so small angles keep full
/// precision and an exactly symmetric `r` (such as `q^T q`) gives zero.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let sin = vee(r).norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

/// Element of SE_2(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtendedPose {
    pub rotation: Mat3,
    pub velocity: Vec3,
    pub position: Vec3,
}

impl Default for ExtendedPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl ExtendedPose {
    pub fn new(rotation: Mat3, velocity: Vec3, position: Vec3) -> Self {
        Self { rotation, velocity, position }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            velocity: Vec3::zeros(),
            position: Vec3::zeros(),
        }
    }

    /// Group product `self * other`.
    pub fn compose(&self, other: &ExtendedPose) -> ExtendedPose {
        ExtendedPose {
            rotation: self.rotation * other.rotation,
            velocity: self.rotation * other.velocity + self.velocity,
            position: self.rotation * other.position + self.position,
        }
    }

    pub fn inverse(&self) -> ExtendedPose {
        let rt = self.rotation.transpose();
        ExtendedPose {
            rotation: rt,
            velocity: -(rt * self.velocity),
            position: -(rt * self.position),
        }
    }

    pub fn to_matrix(&self) -> Mat5 {
        let mut m = Mat5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.velocity);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.position);
        m
    }

    /// Reads the rotation, velocity and position blocks of a 5x5 matrix.
    pub fn from_matrix(m: &Mat5) -> ExtendedPose {
        ExtendedPose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            velocity: m.fixed_view::<3, 1>(0, 3).into_owned(),
            position: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|x| x.is_finite())
            && self.velocity.iter().all(|x| x.is_finite())
            && self.position.iter().all(|x| x.is_finite())
    }
}

/// Tangent vector of SE_2(3).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TangentSE23 {
    pub rot: Vec3,
    pub vel: Vec3,
    pub pos: Vec3,
}

impl TangentSE23 {
    pub fn new(rot: Vec3, vel: Vec3, pos: Vec3) -> Self {
        Self { rot, vel, pos }
    }

    pub fn from_vector(v: &Vec9) -> Self {
        Self {
            rot: v.fixed_rows::<3>(0).into_owned(),
            vel: v.fixed_rows::<3>(3).into_owned(),
            pos: v.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vec9 {
        let mut v = Vec9::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rot);
        v.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        v.fixed_rows_mut::<3>(6).copy_from(&self.pos);
        v
    }

    /// The 5x5 Lie algebra matrix.
    pub fn hat(&self) -> Mat5 {
        let mut m = Mat5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.rot));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m
    }
}

/// Exponential map of SE_2(3).
pub fn exp_se23(xi: &TangentSE23) -> ExtendedPose {
    exp_se23_with(xi, THETA_SMALL)
}

/// [`exp_se23`] with an explicit small-angle threshold.
pub fn exp_se23_with(xi: &TangentSE23, theta_small: f64) -> ExtendedPose {
    let theta = xi.rot.norm();
    let (a, b) = exp_coefficients(theta, theta_small);
    let k = skew(&xi.rot);
    let k2 = k * k;
    let rotation = Mat3::identity() + k * (1.0 - b * theta * theta) + k2 * a;
    // left Jacobian of SO(3): I + aK + bK^2
    let jac = Mat3::identity() + k * a + k2 * b;
    ExtendedPose {
        rotation,
        velocity: jac * xi.vel,
        position: jac * xi.pos,
    }
}

/// Group product `a * b`.
pub fn compose(a: &ExtendedPose, b: &ExtendedPose) -> ExtendedPose {
    a.compose(b)
}

/// Rigid pose used for trajectories: rotation and translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose3 {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose3 {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose3 {
        let rt = self.rotation.transpose();
        Pose3 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self^-1 * other`.
    pub fn between(&self, other: &Pose3) -> Pose3 {
        self.inverse().compose(other)
    }
}

impl From<&ExtendedPose> for Pose3 {
    fn from(p: &ExtendedPose) -> Self {
        Pose3::new(p.rotation, p.position)
    }
}
