//! Rigid motions of 3-space and their Lie-algebra coordinates.
//!
//! A [`Twist`] is a 6-vector `[phi, t]` where `phi` is an axis-angle rotation.
//! Two charts map twists to poses:
//!
//! * [`Chart::Se3Log`] is the true group logarithm, `t = V(phi)^-1 * translation`,
//!   so `log(p^-1) = -log(p)` holds exactly.
//! * [`Chart::So3PlusT`] keeps the raw translation, `[log R, translation]`. It is
//!   antisymmetric only to first order.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this angle the exp/log/Jacobian series replace the closed forms.
pub const SMALL_ANGLE: f64 = 1e-7;

/// `log_rot` refuses rotations with `trace <= -1 + PI_TRACE_MARGIN`.
pub const PI_TRACE_MARGIN: f64 = 1e-9;

const ROTATION_TOL: f64 = 1e-9;
const QUATERNION_TOL: f64 = 1e-6;

/// Skew-symmetric matrix with `hat(a) * x = a x x`.
pub fn hat(phi: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -phi.z, phi.y, //
        phi.z, 0.0, -phi.x, //
        -phi.y, phi.x, 0.0,
    )
}

/// Inverse of [`hat`]. Reads the lower-left entries; the input is assumed skew.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation matrix that has been checked to be orthonormal with determinant one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3(Matrix3<f64>);

impl Rotation3 {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `m * m^T = I` and `det m = 1` to within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho_err = (m * m.transpose() - Matrix3::identity()).amax();
        let det = m.determinant();
        if ortho_err > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotARotation { ortho_err, det });
        }
        Ok(Self(m))
    }

    /// Builds a rotation from a quaternion in `(x, y, z, w)` order. The
    /// quaternion must have unit norm within 1e-6; it is renormalized.
    pub fn from_quaternion(x: f64, y: f64, z: f64, w: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_TOL {
            return Err(Error::NonUnitQuaternion { norm });
        }
        let unit = UnitQuaternion::new_normalize(q);
        Ok(Self(*unit.to_rotation_matrix().matrix()))
    }

    /// Quaternion `(x, y, z, w)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        [q.i, q.j, q.k, q.w]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let sin = 0.5 * vee(&(self.0 - self.0.transpose())).norm();
        let cos = 0.5 * (self.0.trace() - 1.0);
        sin.atan2(cos)
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        Rotation3(self.0 * rhs.0)
    }
}

/// Rodrigues formula.
pub fn exp_rot(phi: &Vector3<f64>) -> Rotation3 {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    let m = if theta < SMALL_ANGLE {
        Matrix3::identity() + k + 0.5 * k2
    } else {
        let half = 0.5 * theta;
        let a = theta.sin() / theta;
        // 1 - cos(theta) written without cancellation
        let b = 2.0 * (half.sin() / theta).powi(2);
        Matrix3::identity() + a * k + b * k2
    };
    Rotation3(m)
}

/// Principal logarithm of a rotation.
///
/// Fails with [`Error::AngleAtPi`] when `trace(r) <= -1 + 1e-9`, i.e. when the
/// angle is close enough to pi that the rotation axis is ill-defined.
pub fn log_rot(r: &Rotation3) -> Result<Vector3<f64>> {
    let m = r.matrix();
    if m.trace() <= -1.0 + PI_TRACE_MARGIN {
        return Err(Error::AngleAtPi { angle: r.angle() });
    }
    let axis2 = vee(&(m - m.transpose()));
    let sin = 0.5 * axis2.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let theta = sin.atan2(cos);
    if theta < SMALL_ANGLE {
        Ok(0.5 * axis2)
    } else {
        Ok(axis2 * (0.5 * theta / sin))
    }
}

/// Left Jacobian of SO(3), the `V` in `t = V(phi) * rho` of the SE(3) exponential.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k2 / 6.0;
    }
    let half = 0.5 * theta;
    let b = 2.0 * (half.sin() / theta).powi(2);
    let c = (theta - theta.sin()) / (theta * theta * theta);
    Matrix3::identity() + b * k + c * k2
}

pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k2 / 12.0;
    }
    let half = 0.5 * theta;
    let c = (1.0 - half / half.tan()) / (theta * theta);
    Matrix3::identity() - 0.5 * k + c * k2
}

/// How a twist's translational part relates to the pose translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Chart {
    /// Exact SE(3) logarithm.
    #[default]
    Se3Log,
    /// `[log R, t]`, the Abelian approximation.
    So3PlusT,
}

impl Chart {
    pub const ALL: [Chart; 2] = [Chart::Se3Log, Chart::So3PlusT];

    pub fn as_str(&self) -> &'static str {
        match self {
            Chart::Se3Log => "se3_log",
            Chart::So3PlusT => "so3_plus_t",
        }
    }
}

impl fmt::Display for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Chart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se3_log" | "se3" => Ok(Chart::Se3Log),
            "so3_plus_t" | "so3+t" => Ok(Chart::So3PlusT),
            other => Err(Error::invalid(format!("unknown chart `{other}`"))),
        }
    }
}

/// Lie-algebra coordinate `[phi, t]` tagged with its chart.
///
/// Arithmetic between twists of different charts is a logic error and panics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub phi: Vector3<f64>,
    pub t: Vector3<f64>,
    pub chart: Chart,
}

impl Twist {
    pub fn new(phi: Vector3<f64>, t: Vector3<f64>, chart: Chart) -> Self {
        Self { phi, t, chart }
    }

    pub fn zero(chart: Chart) -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros(), chart)
    }

    pub fn from_vector(v: &Vector6<f64>, chart: Chart) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into(), chart)
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.phi.x, self.phi.y, self.phi.z, self.t.x, self.t.y, self.t.z)
    }

    pub fn norm_inf(&self) -> f64 {
        self.phi.amax().max(self.t.amax())
    }

    fn check_chart(&self, other: &Twist) {
        assert_eq!(
            self.chart, other.chart,
            "twists from different charts cannot be combined"
        );
    }
}

impl Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        self.check_chart(&rhs);
        Twist::new(self.phi + rhs.phi, self.t + rhs.t, self.chart)
    }
}

impl AddAssign for Twist {
    fn add_assign(&mut self, rhs: Twist) {
        *self = *self + rhs;
    }
}

impl Sub for Twist {
    type Output = Twist;

    fn sub(self, rhs: Twist) -> Twist {
        self.check_chart(&rhs);
        Twist::new(self.phi - rhs.phi, self.t - rhs.t, self.chart)
    }
}

impl Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        Twist::new(-self.phi, -self.t, self.chart)
    }
}

impl Mul<Twist> for f64 {
    type Output = Twist;

    fn mul(self, rhs: Twist) -> Twist {
        Twist::new(self * rhs.phi, self * rhs.t, rhs.chart)
    }
}

/// Rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Rotation3, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation3::identity(), t)
    }

    /// Parses a homogeneous matrix. The bottom row must be exactly `(0, 0, 0, 1)`.
    pub fn from_matrix4(m: &Matrix4<f64>) -> Result<Self> {
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::invalid("homogeneous matrix bottom row must be (0,0,0,1)"));
        }
        let rotation = Rotation3::from_matrix(m.fixed_view::<3, 3>(0, 0).into())?;
        Ok(Self::new(rotation, m.fixed_view::<3, 1>(0, 3).into()))
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation.matrix() * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.inverse();
        Pose::new(rt, -(rt.matrix() * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * v
    }

    /// `||P - I_4||_F` of the homogeneous form.
    pub fn frobenius_dev(&self) -> f64 {
        let r = self.rotation.matrix() - Matrix3::identity();
        (r.norm_squared() + self.translation.norm_squared()).sqrt()
    }

    pub fn log(&self, chart: Chart) -> Result<Twist> {
        pose_log(self, chart)
    }

    pub fn exp(x: &Twist) -> Pose {
        pose_exp(x)
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

pub fn frobenius_dev(p: &Pose) -> f64 {
    p.frobenius_dev()
}

pub fn pose_log(p: &Pose, chart: Chart) -> Result<Twist> {
    let phi = log_rot(&p.rotation)?;
    let t = match chart {
        Chart::So3PlusT => p.translation,
        Chart::Se3Log => left_jacobian_inv(&phi) * p.translation,
    };
    Ok(Twist::new(phi, t, chart))
}

pub fn pose_exp(x: &Twist) -> Pose {
    let rotation = exp_rot(&x.phi);
    let translation = match x.chart {
        Chart::So3PlusT => x.t,
        Chart::Se3Log => left_jacobian(&x.phi) * x.t,
    };
    Pose::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_mat_close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) {
        assert!((a - b).amax() <= tol, "{a} vs {b}");
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let expected = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(hat(&Vector3::new(1.0, 2.0, 3.0)), expected);
        let cross = hat(&Vector3::x()) * Vector3::y();
        assert_eq!(cross, Vector3::z());
        assert_eq!(vee(&expected), Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn exp_rot_quarter_turn() {
        assert_eq!(exp_rot(&Vector3::zeros()).matrix(), &Matrix3::identity());
        // cos(pi/2) = 0, sin(pi/2) = 1 in Rodrigues: I + K + K^2 with K = hat(z)
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_mat_close(exp_rot(&Vector3::new(0.0, 0.0, FRAC_PI_2)).matrix(), &expected, 1e-15);
    }

    #[test]
    fn log_rot_round_trips() {
        let phi = Vector3::new(PI / 3.0, 0.0, 0.0);
        assert!((log_rot(&exp_rot(&phi)).unwrap() - phi).amax() < 1e-12);
        let phi = Vector3::new(0.1, -0.2, 0.3);
        assert!((log_rot(&exp_rot(&phi)).unwrap() - phi).amax() < 1e-12);
        assert_eq!(log_rot(&Rotation3::identity()).unwrap(), Vector3::zeros());
    }

    #[test]
    fn log_rot_rejects_pi() {
        let r = exp_rot(&Vector3::new(0.0, 0.0, PI - 1e-12));
        assert!(matches!(log_rot(&r), Err(Error::AngleAtPi { .. })));
        let r = exp_rot(&Vector3::new(0.0, 0.0, PI));
        assert!(matches!(log_rot(&r), Err(Error::AngleAtPi { .. })));
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        for scale in [1e-9, 5e-8, 2e-7, 1e-6] {
            let phi = Vector3::new(0.3, -0.5, 0.8).normalize() * scale;
            let r = exp_rot(&phi);
            assert!((log_rot(&r).unwrap() - phi).amax() < 1e-15);
            let v = left_jacobian(&phi) * left_jacobian_inv(&phi);
            assert_mat_close(&v, &Matrix3::identity(), 1e-15);
        }
    }

    #[test]
    fn jacobian_inverse_matches() {
        let phi = Vector3::new(0.7, -1.1, 2.0);
        let v = left_jacobian(&phi);
        assert_mat_close(&(v * left_jacobian_inv(&phi)), &Matrix3::identity(), 1e-12);
    }

    #[test]
    fn pose_log_examples() {
        for chart in Chart::ALL {
            let z = pose_log(&Pose::identity(), chart).unwrap();
            assert_eq!(z.to_vector(), Vector6::zeros());
            let p = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
            let x = pose_log(&p, chart).unwrap();
            assert_eq!(x.phi, Vector3::zeros());
            assert_eq!(x.t, Vector3::new(1.0, 2.0, 3.0));
        }
    }

    #[test]
    fn negated_twist_in_each_chart() {
        let x = Twist::new(
            Vector3::new(0.2, 0.1, -0.4),
            Vector3::new(1.0, -2.0, 0.5),
            Chart::Se3Log,
        );
        let a = pose_exp(&-x);
        let b = pose_exp(&x).inverse();
        assert_mat_close(a.rotation.matrix(), b.rotation.matrix(), 1e-15);
        assert!((a.translation - b.translation).amax() < 1e-12);

        let y = Twist {
            chart: Chart::So3PlusT,
            ..x
        };
        let p = pose_exp(&y);
        let q = pose_exp(&-y);
        assert_mat_close(q.rotation.matrix(), &p.rotation.matrix().transpose(), 1e-15);
        assert_eq!(q.translation, -y.t);
        let inv = p.inverse();
        assert!((inv.translation - q.translation).norm() > 1e-3);
    }

    #[test]
    fn compose_and_deviation() {
        let p = pose_exp(&Twist::new(
            Vector3::new(0.3, 0.2, 0.1),
            Vector3::new(-1.0, 0.5, 2.0),
            Chart::Se3Log,
        ));
        assert!(p.compose(&p.inverse()).frobenius_dev() < 1e-12);
        assert_eq!(Pose::identity().frobenius_dev(), 0.0);
        let t = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(t.frobenius_dev(), 1.0);
    }

    #[test]
    fn matrix4_bottom_row_checked() {
        let p = pose_exp(&Twist::new(
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(1.0, 2.0, 3.0),
            Chart::Se3Log,
        ));
        let m = p.to_matrix4();
        assert_eq!(m.row(3), Matrix4::<f64>::identity().row(3));
        let back = Pose::from_matrix4(&m).unwrap();
        assert_eq!(back, p);
        let mut bad = m;
        bad[(3, 0)] = 1e-3;
        assert!(Pose::from_matrix4(&bad).is_err());
    }

    #[test]
    fn quaternion_conversion() {
        let r = exp_rot(&Vector3::new(0.3, -0.7, 1.9));
        let [x, y, z, w] = r.to_quaternion();
        let back = Rotation3::from_quaternion(x, y, z, w).unwrap();
        assert_mat_close(back.matrix(), r.matrix(), 1e-15);
        // 90 degrees about z is (0, 0, sin 45, cos 45) in (x, y, z, w) order
        let q = exp_rot(&Vector3::new(0.0, 0.0, FRAC_PI_2)).to_quaternion();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q[2] - s).abs() < 1e-15 && (q[3] - s).abs() < 1e-15);
        assert!(matches!(
            Rotation3::from_quaternion(0.0, 0.0, 0.0, 1.1),
            Err(Error::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    #[should_panic(expected = "different charts")]
    fn mixing_charts_panics() {
        let _ = Twist::zero(Chart::Se3Log) + Twist::zero(Chart::So3PlusT);
    }
}
