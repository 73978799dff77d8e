//! Rigid-body transforms, Euler-angle rotations, pinhole projection and the
//! Manhattan pixel metric.
//!
//! Rotation convention: `R(θ) = Rz(θz) · Ry(θy) · Rx(θx)`, i.e. a rotation
//! about the x axis first, then y, then z, all about fixed axes. A sensor
//! point maps into the camera frame as `p_cam = R(θ) · p + t`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points with depth at or below this value (meters) are behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Wraps an angle into `(-π, π]`.
pub fn canonical_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -π to π already; this catches rounding right at the edge.
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationAngles {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl RotationAngles {
    /// Builds canonicalized angles (radians).
    pub fn new(theta_x: f64, theta_y: f64, theta_z: f64) -> Self {
        Self {
            theta_x: canonical_angle(theta_x),
            theta_y: canonical_angle(theta_y),
            theta_z: canonical_angle(theta_z),
        }
    }

    pub fn from_degrees(x: f64, y: f64, z: f64) -> Self {
        Self::new(x.to_radians(), y.to_radians(), z.to_radians())
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn to_degrees(&self) -> [f64; 3] {
        [
            self.theta_x.to_degrees(),
            self.theta_y.to_degrees(),
            self.theta_z.to_degrees(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.theta_x.is_finite() && self.theta_y.is_finite() && self.theta_z.is_finite()
    }
}

/// Rotation matrix `Rz(θz) · Ry(θy) · Rx(θx)`.
pub fn rotation_matrix(angles: &RotationAngles) -> Mat3 {
    let (sx, cx) = angles.theta_x.sin_cos();
    let (sy, cy) = angles.theta_y.sin_cos();
    let (sz, cz) = angles.theta_z.sin_cos();
    Mat3::new(
        cz * cy,
        cz * sy * sx - sz * cx,
        cz * sy * cx + sz * sx,
        sz * cy,
        sz * sy * sx + cz * cx,
        sz * sy * cx - cz * sx,
        -sy,
        cy * sx,
        cy * cx,
    )
}

/// Inverse of [`rotation_matrix`] for a proper rotation matrix.
///
/// At gimbal lock (`|θy| = π/2`) the split between `θx` and `θz` is not
/// unique; `θz` is pinned to zero there.
pub fn angles_from_matrix(r: &Mat3) -> RotationAngles {
    let cos_y = (r[(0, 0)] * r[(0, 0)] + r[(1, 0)] * r[(1, 0)]).sqrt();
    let theta_y = (-r[(2, 0)]).atan2(cos_y);
    if cos_y > 1e-12 {
        RotationAngles::new(
            r[(2, 1)].atan2(r[(2, 2)]),
            theta_y,
            r[(1, 0)].atan2(r[(0, 0)]),
        )
    } else {
        RotationAngles::new((-r[(1, 2)]).atan2(r[(1, 1)]), theta_y, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Translation {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn to_vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Sensor-to-camera rigid transform, the optimization variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    pub rotation: RotationAngles,
    pub translation: Translation,
}

impl Extrinsics {
    pub fn new(rotation: RotationAngles, translation: Translation) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(RotationAngles::zero(), Translation::zero())
    }

    /// Parameter vector `(θx, θy, θz, tx, ty, tz)`; angles in radians.
    pub fn to_params(&self) -> [f64; 6] {
        [
            self.rotation.theta_x,
            self.rotation.theta_y,
            self.rotation.theta_z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_params(p: &[f64; 6]) -> Self {
        Self::new(
            RotationAngles::new(p[0], p[1], p[2]),
            Translation::new(p[3], p[4], p[5]),
        )
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_matrix(&self.rotation)
    }

    pub fn to_matrix(&self) -> (Mat3, Vec3) {
        (self.rotation_matrix(), self.translation.to_vector())
    }

    pub fn from_matrix(r: &Mat3, t: &Vec3) -> Self {
        Self::new(angles_from_matrix(r), Translation::from_vector(t))
    }

    /// Camera-to-sensor transform.
    pub fn inverse(&self) -> Self {
        let (r, t) = self.to_matrix();
        let rt = r.transpose();
        Self::from_matrix(&rt, &(-(rt * t)))
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.to_params()[3..].iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for Extrinsics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.rotation.to_degrees();
        write!(
            f,
            "theta = ({:.6}, {:.6}, {:.6}) deg, t = ({:.6}, {:.6}, {:.6}) m",
            d[0], d[1], d[2], self.translation.x, self.translation.y, self.translation.z
        )
    }
}

/// `R(θ)·p + t`.
pub fn transform_point(p: &Vec3, ext: &Extrinsics) -> Vec3 {
    ext.rotation_matrix() * p + ext.translation.to_vector()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeometryError::NonFinite("intrinsics"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Pixel to normalized camera coordinates (`z = 1` plane).
    pub fn normalize(&self, px: &PixelCoord) -> [f64; 2] {
        [(px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy]
    }

    pub fn denormalize(&self, xy: [f64; 2]) -> PixelCoord {
        PixelCoord::new(self.fx * xy[0] + self.cx, self.fy * xy[1] + self.cy)
    }

    /// Back-projects a pixel to the camera-frame point at the given depth.
    pub fn unproject(&self, px: &PixelCoord, depth: f64) -> Vec3 {
        let [x, y] = self.normalize(px);
        Vec3::new(x * depth, y * depth, depth)
    }

    /// `W + H`, an upper bound on any in-image L1 pixel distance.
    pub fn penalty_distance(&self) -> f64 {
        f64::from(self.width) + f64::from(self.height)
    }
}

/// Real-valued pixel coordinates; `u` runs along the width, `v` along the height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("point is not in front of the image plane")]
pub struct BehindCamera;

/// Ideal pinhole projection of a camera-frame point.
pub fn project(p_cam: &Vec3, k: &CameraIntrinsics) -> Result<PixelCoord, BehindCamera> {
    if p_cam.z <= DEPTH_EPSILON {
        return Err(BehindCamera);
    }
    Ok(PixelCoord::new(
        k.fx * p_cam.x / p_cam.z + k.cx,
        k.fy * p_cam.y / p_cam.z + k.cy,
    ))
}

/// L1 distance between two pixel positions.
pub fn manhattan(a: &PixelCoord, b: &PixelCoord) -> f64 {
    (a.u - b.u).abs() + (a.v - b.v).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn orthonormality_error(m: &Mat3) -> f64 {
        (m.transpose() * m - Mat3::identity()).abs().max()
    }

    #[test]
    fn identity_angles_give_identity() {
        assert_eq!(rotation_matrix(&RotationAngles::zero()), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let r = rotation_matrix(&RotationAngles::new(0.0, 0.0, FRAC_PI_2));
        let v = r * Vec3::x();
        assert_abs_diff_eq!(v, Vec3::y(), epsilon = 1e-15);
    }

    #[test]
    fn mixed_angles_are_orthonormal() {
        let r = rotation_matrix(&RotationAngles::new(PI / 6.0, PI / 4.0, PI / 3.0));
        assert!(orthonormality_error(&r) < 1e-12);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn composition_order_is_z_y_x() {
        let a = RotationAngles::new(0.3, -0.2, 0.7);
        let rx = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), a.theta_x);
        let ry = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), a.theta_y);
        let rz = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), a.theta_z);
        let expected = (rz * ry * rx).into_inner();
        assert_abs_diff_eq!(rotation_matrix(&a), expected, epsilon = 1e-15);
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&p, &Extrinsics::identity()), p);

        let shift = Extrinsics::new(RotationAngles::zero(), Translation::new(1.0, 2.0, 3.0));
        assert_eq!(
            transform_point(&Vec3::zeros(), &shift),
            Vec3::new(1.0, 2.0, 3.0)
        );

        let turn = Extrinsics::new(
            RotationAngles::new(0.0, 0.0, FRAC_PI_2),
            Translation::zero(),
        );
        assert_abs_diff_eq!(
            transform_point(&Vec3::x(), &turn),
            Vec3::y(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn project_examples() {
        let unit = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 10, 10).unwrap();
        assert_eq!(
            project(&Vec3::new(0.0, 0.0, 1.0), &unit),
            Ok(PixelCoord::new(0.0, 0.0))
        );

        let k = CameraIntrinsics::new(700.0, 700.0, 600.0, 180.0, 1242, 375).unwrap();
        let px = project(&Vec3::new(1.0, 0.0, 10.0), &k).unwrap();
        assert_abs_diff_eq!(px.u, 670.0, epsilon = 1e-12);
        assert_abs_diff_eq!(px.v, 180.0, epsilon = 1e-12);

        assert_eq!(project(&Vec3::new(0.0, 0.0, -1.0), &k), Err(BehindCamera));
        assert_eq!(
            project(&Vec3::new(0.0, 0.0, DEPTH_EPSILON), &k),
            Err(BehindCamera)
        );
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(
            manhattan(&PixelCoord::new(2.0, 3.0), &PixelCoord::new(5.0, 1.0)),
            5.0
        );
        assert_eq!(
            manhattan(&PixelCoord::new(7.0, 7.0), &PixelCoord::new(7.0, 7.0)),
            0.0
        );
        assert_eq!(
            manhattan(&PixelCoord::new(-3.0, 2.0), &PixelCoord::new(0.0, 2.0)),
            3.0
        );
    }

    #[test]
    fn bad_intrinsics_rejected() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0, 4, 4).is_err());
    }

    #[test]
    fn canonical_angle_range() {
        assert_eq!(canonical_angle(PI), PI);
        assert_abs_diff_eq!(canonical_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(canonical_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            canonical_angle(181f64.to_radians()),
            (-179f64).to_radians(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gimbal_lock_matrix_round_trip() {
        for y in [FRAC_PI_2, -FRAC_PI_2] {
            let r = rotation_matrix(&RotationAngles::new(0.4, y, -0.9));
            let back = rotation_matrix(&angles_from_matrix(&r));
            assert!((r - back).abs().max() < 1e-12);
        }
    }

    fn angle() -> impl Strategy<Value = f64> {
        -PI..PI
    }

    proptest! {
        #[test]
        fn rotation_is_special_orthogonal(x in angle(), y in angle(), z in angle()) {
            let r = rotation_matrix(&RotationAngles::new(x, y, z));
            prop_assert!(orthonormality_error(&r) < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matrix_round_trip(x in angle(), y in angle(), z in angle()) {
            let r = rotation_matrix(&RotationAngles::new(x, y, z));
            let back = rotation_matrix(&angles_from_matrix(&r));
            prop_assert!((r - back).abs().max() < 1e-12);
        }

        #[test]
        fn angle_round_trip_off_lock(x in angle(), y in -1.5f64..1.5, z in angle()) {
            let a = RotationAngles::new(x, y, z);
            let b = angles_from_matrix(&rotation_matrix(&a));
            for (p, q) in [(a.theta_x, b.theta_x), (a.theta_y, b.theta_y), (a.theta_z, b.theta_z)] {
                prop_assert!(canonical_angle(p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn inverse_round_trip(
            x in angle(), y in angle(), z in angle(),
            t in prop::array::uniform3(-10.0f64..10.0),
            p in prop::array::uniform3(-50.0f64..50.0),
        ) {
            let ext = Extrinsics::new(RotationAngles::new(x, y, z), Translation::new(t[0], t[1], t[2]));
            let p = Vec3::from(p);
            let back = transform_point(&transform_point(&p, &ext), &ext.inverse());
            prop_assert!((back - p).abs().max() < 1e-9);
        }

        #[test]
        fn unproject_then_project(u in 0.0f64..1242.0, v in 0.0f64..375.0, d in 0.1f64..100.0) {
            let k = CameraIntrinsics::new(721.5, 721.5, 609.6, 172.9, 1242, 375).unwrap();
            let px = PixelCoord::new(u, v);
            let back = project(&k.unproject(&px, d), &k).unwrap();
            prop_assert!((back.u - u).abs() < 1e-9 && (back.v - v).abs() < 1e-9);
        }

        #[test]
        fn manhattan_is_a_metric(
            a in prop::array::uniform2(-100.0f64..100.0),
            b in prop::array::uniform2(-100.0f64..100.0),
            c in prop::array::uniform2(-100.0f64..100.0),
        ) {
            let (a, b, c) = (
                PixelCoord::new(a[0], a[1]),
                PixelCoord::new(b[0], b[1]),
                PixelCoord::new(c[0], c[1]),
            );
            prop_assert_eq!(manhattan(&a, &b), manhattan(&b, &a));
            prop_assert!(manhattan(&a, &b) >= 0.0);
            prop_assert_eq!(manhattan(&a, &a), 0.0);
            if a != b {
                prop_assert!(manhattan(&a, &b) > 0.0);
            }
            prop_assert!(manhattan(&a, &c) <= manhattan(&a, &b) + manhattan(&b, &c) + 1e-12);
        }
    }
}
