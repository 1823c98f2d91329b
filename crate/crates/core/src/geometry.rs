//! Pinhole camera model, rigid transforms, ray generation and Euler angles.
//!
//! Frames follow the usual computer-vision layout: camera `+z` looks into the
//! scene, `+x` points right and `+y` points down, so pixel coordinates grow
//! with the camera axes. Angles are degrees at the API boundary and radians
//! everywhere inside.

use nalgebra::{Matrix3, Matrix4, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A 3D point or offset in millimetres.
pub type Point3 = Vector3<f64>;

/// A unit-length direction.
pub type UnitVec3 = Unit<Vector3<f64>>;

/// Depth (mm) below which a point is treated as behind the camera.
pub const MIN_DEPTH_MM: f64 = 1e-6;

const ROTATION_TOL: f64 = 1e-9;
const EULER_INPUT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} mm)")]
    PointBehindCamera { depth: f64 },
    #[error("matrix is not a rotation (orthonormality error {error:e})")]
    NotARotation { error: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
}

/// Continuous image-plane coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Proper rigid motion `p ↦ R·p + t` with `t` in millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1 within 1e-9.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        check_rotation(&rotation, ROTATION_TOL)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidTransform(
                "translation is not finite".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a transform from a rotation that is known to be valid up to
    /// rounding (e.g. the output of Rodrigues' formula).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_homogeneous();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    /// Parses a row-major 4×4 homogeneous matrix. The bottom row must be
    /// exactly `[0, 0, 0, 1]` and the rotation block must be orthonormal.
    pub fn from_row_major(values: &[f64]) -> Result<Self, GeometryError> {
        if values.len() != 16 {
            return Err(GeometryError::InvalidTransform(format!(
                "expected 16 values, got {}",
                values.len()
            )));
        }
        if values[12..16] != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidTransform(
                "bottom row must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        RigidTransform::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

/// Returns the orthonormality error `max |RᵀR − I|` and fails when it (or
/// `|det R − 1|`) exceeds `tol`.
fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<(), GeometryError> {
    if !r.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::NotARotation { error: f64::NAN });
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    let det = (r.determinant() - 1.0).abs();
    let error = ortho.max(det);
    if error > tol {
        return Err(GeometryError::NotARotation { error });
    }
    Ok(())
}

/// Pinhole intrinsics. The projective scale factor is implicit: it equals
/// `1 / Z` and disappears in the perspective division.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
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
        let bad = |m: &str| Err(GeometryError::InvalidIntrinsics(m.to_string()));
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return bad("cx must lie in [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("cy must lie in [0, height)");
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for CameraIntrinsics {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            fx: f64,
            fy: f64,
            cx: f64,
            cy: f64,
            width: u32,
            height: u32,
        }
        let r = Raw::deserialize(deserializer)?;
        CameraIntrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
            .map_err(serde::de::Error::custom)
    }
}

/// Head orientation in degrees, composed as `Rz(roll)·Ry(yaw)·Rx(pitch)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }

    pub fn in_canonical_range(&self) -> bool {
        let half_open = |a: f64| a > -180.0 && a <= 180.0;
        half_open(self.yaw) && half_open(self.roll) && (-90.0..=90.0).contains(&self.pitch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub direction: UnitVec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.direction.into_inner() * t
    }
}

pub fn transform_point(t: &RigidTransform, p: &Point3) -> Point3 {
    t.transform_point(p)
}

pub fn compose(t1: &RigidTransform, t2: &RigidTransform) -> RigidTransform {
    t1.compose(t2)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Projects a camera-frame point through the pinhole model.
pub fn project_camera_point(k: &CameraIntrinsics, p_cam: &Point3) -> Result<Pixel, GeometryError> {
    if !(p_cam.z > MIN_DEPTH_MM) {
        return Err(GeometryError::PointBehindCamera { depth: p_cam.z });
    }
    Ok(Pixel {
        u: k.fx * p_cam.x / p_cam.z + k.cx,
        v: k.fy * p_cam.y / p_cam.z + k.cy,
    })
}

pub fn project(
    k: &CameraIntrinsics,
    world_to_cam: &RigidTransform,
    p_world: &Point3,
) -> Result<Pixel, GeometryError> {
    project_camera_point(k, &world_to_cam.transform_point(p_world))
}

/// Back-projects a pixel into a world-frame ray starting at the camera centre.
pub fn generate_ray(k: &CameraIntrinsics, cam_to_world: &RigidTransform, px: Pixel) -> Ray {
    let dir_cam = Vector3::new((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy, 1.0);
    Ray {
        origin: *cam_to_world.translation(),
        direction: Unit::new_normalize(cam_to_world.transform_vector(&dir_cam)),
    }
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_rotation(e: &EulerAngles) -> Matrix3<f64> {
    rot_z(e.roll.to_radians()) * rot_y(e.yaw.to_radians()) * rot_x(e.pitch.to_radians())
}

/// Maps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let mut w = a % 360.0;
    if w <= -180.0 {
        w += 360.0;
    } else if w > 180.0 {
        w -= 360.0;
    }
    w
}

/// Decomposes `R = Rz(roll)·Ry(yaw)·Rx(pitch)`.
///
/// Of the two decompositions of a generic rotation, the one with
/// `pitch ∈ [-90, 90]` is returned. At gimbal lock (`|yaw| = 90`) only
/// `pitch − roll` is observable; roll is set to zero when the free angle fits
/// the pitch range, and otherwise pitch is saturated at ±90 and the remainder
/// goes into roll.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<EulerAngles, GeometryError> {
    check_rotation(r, EULER_INPUT_TOL)?;
    let sin_yaw = (-r[(2, 0)]).clamp(-1.0, 1.0);
    // cos(yaw) recovered from the first column, which stays accurate near lock.
    let cos_yaw_abs = r[(0, 0)].hypot(r[(1, 0)]);
    let (yaw, pitch, roll) = if cos_yaw_abs < 1e-12 {
        let yaw = if sin_yaw > 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        // R = Ry(±90)·Rx(pitch − roll)
        let free = (sin_yaw.signum() * r[(0, 1)]).atan2(r[(1, 1)]);
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pitch = free.clamp(-half_pi, half_pi);
        (yaw, pitch, pitch - free)
    } else {
        let pitch = r[(2, 1)].atan2(r[(2, 2)]);
        let roll = r[(1, 0)].atan2(r[(0, 0)]);
        let yaw = sin_yaw.atan2(cos_yaw_abs);
        if pitch.abs() <= std::f64::consts::FRAC_PI_2 {
            (yaw, pitch, roll)
        } else {
            // Equivalent branch: (π − yaw, pitch + π, roll + π).
            (
                std::f64::consts::PI - yaw,
                pitch - std::f64::consts::PI.copysign(pitch),
                roll + std::f64::consts::PI,
            )
        }
    };
    let out = EulerAngles {
        yaw: wrap_degrees(yaw.to_degrees()),
        pitch: pitch.to_degrees().clamp(-90.0, 90.0),
        roll: wrap_degrees(roll.to_degrees()),
    };
    Ok(out)
}

/// Angle in radians of the relative rotation `a·bᵀ`, accurate near zero.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    // ‖A − B‖_F = 2√2·sin(θ/2)
    let d = (a - b).norm() / (2.0 * std::f64::consts::SQRT_2);
    2.0 * d.clamp(0.0, 1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_transform(seed: [f64; 6]) -> RigidTransform {
        let r = euler_to_rotation(&EulerAngles::new(seed[0], seed[1], seed[2]));
        RigidTransform::new(r, Vector3::new(seed[3], seed[4], seed[5])).unwrap()
    }

    fn webcam() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn identity_transform_keeps_point() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&RigidTransform::identity(), &p), p);
    }

    #[test]
    fn quarter_turn_about_z_permutes_axes() {
        let t = RigidTransform::new(rot_z(90f64.to_radians()), Vector3::zeros()).unwrap();
        let q = transform_point(&t, &Point3::new(1.0, 0.0, 0.0));
        assert!((q - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn transform_matches_homogeneous_product() {
        let t = random_transform([12.0, -33.0, 71.0, 5.0, -7.5, 300.0]);
        let p = Point3::new(-4.0, 9.0, 2.5);
        // Standalone 4×4 product assembled from the row-major array.
        let m = t.to_row_major();
        let h = [p.x, p.y, p.z, 1.0];
        let mut out = [0.0; 4];
        for r in 0..4 {
            for c in 0..4 {
                out[r] += m[r * 4 + c] * h[c];
            }
        }
        assert_eq!(out[3], 1.0);
        let q = transform_point(&t, &p);
        for i in 0..3 {
            assert_abs_diff_eq!(q[i], out[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn project_optical_axis_hits_principal_point() {
        let k = webcam();
        for z in [1.0, 55.0, 600.0, 1e5] {
            let px = project(&k, &RigidTransform::identity(), &Point3::new(0.0, 0.0, z)).unwrap();
            assert_eq!(px, Pixel::new(320.0, 240.0));
        }
    }

    #[test]
    fn project_unit_intrinsics() {
        let k = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 1,
            height: 1,
        };
        let px = project(&k, &RigidTransform::identity(), &Point3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(px, Pixel::new(1.0, 1.0));
    }

    #[test]
    fn project_matches_two_step_matrix_oracle() {
        let k = webcam();
        let t = random_transform([-20.0, 15.0, 5.0, 10.0, -20.0, 600.0]);
        let p = Point3::new(30.0, -40.0, 25.0);
        // [R | t] · [U V W 1]ᵀ, then s·K·[X Y Z]ᵀ with s = 1/Z.
        let m = t.to_row_major();
        let mut cam = [0.0; 3];
        for r in 0..3 {
            cam[r] = m[r * 4] * p.x + m[r * 4 + 1] * p.y + m[r * 4 + 2] * p.z + m[r * 4 + 3];
        }
        let kmat = [[k.fx, 0.0, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]];
        let mut img = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                img[r] += kmat[r][c] * cam[c];
            }
        }
        let s = 1.0 / img[2];
        let px = project(&k, &t, &p).unwrap();
        assert_abs_diff_eq!(px.u, img[0] * s, epsilon = 1e-9);
        assert_abs_diff_eq!(px.v, img[1] * s, epsilon = 1e-9);
    }

    #[test]
    fn project_rejects_points_behind_camera() {
        let k = webcam();
        for z in [0.0, 1e-7, -5.0] {
            let err = project(&k, &RigidTransform::identity(), &Point3::new(0.0, 0.0, z));
            assert!(matches!(err, Err(GeometryError::PointBehindCamera { .. })));
        }
    }

    #[test]
    fn principal_point_ray_looks_down_z() {
        let k = webcam();
        let ray = generate_ray(&k, &RigidTransform::identity(), Pixel::new(320.0, 240.0));
        assert_eq!(ray.origin, Point3::zeros());
        assert!((ray.direction.into_inner() - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn horizontal_neighbours_differ_in_xz_plane_only() {
        let k = webcam();
        let a = generate_ray(&k, &RigidTransform::identity(), Pixel::new(100.0, 50.0));
        let b = generate_ray(&k, &RigidTransform::identity(), Pixel::new(101.0, 50.0));
        // Unnormalized back-projections share y/z; only x changes.
        let ua = a.direction.into_inner() / a.direction.z;
        let ub = b.direction.into_inner() / b.direction.z;
        assert_abs_diff_eq!(ua.y, ub.y, epsilon = 1e-15);
        assert_abs_diff_eq!(ub.x - ua.x, 1.0 / k.fx, epsilon = 1e-15);
    }

    #[test]
    fn euler_zero_is_identity() {
        assert_eq!(euler_to_rotation(&EulerAngles::default()), Matrix3::identity());
    }

    #[test]
    fn yaw_ninety_maps_forward_to_right() {
        let r = euler_to_rotation(&EulerAngles::new(90.0, 0.0, 0.0));
        assert!((r * Vector3::z() - Vector3::x()).norm() < 1e-15);
    }

    #[test]
    fn euler_roundtrip_reference_angles() {
        let e = rotation_to_euler(&euler_to_rotation(&EulerAngles::new(30.0, 10.0, -20.0))).unwrap();
        assert_abs_diff_eq!(e.yaw, 30.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.pitch, 10.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.roll, -20.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_rotation_gives_zero_angles() {
        let e = rotation_to_euler(&Matrix3::identity()).unwrap();
        assert_eq!((e.yaw, e.pitch, e.roll), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gimbal_lock_sets_roll_to_zero() {
        for yaw in [90.0, -90.0] {
            let e = rotation_to_euler(&euler_to_rotation(&EulerAngles::new(yaw, 0.0, 0.0))).unwrap();
            assert_eq!(e.roll, 0.0);
            assert_abs_diff_eq!(e.yaw, yaw, epsilon = 1e-12);
            let e = rotation_to_euler(&euler_to_rotation(&EulerAngles::new(yaw, 25.0, 10.0))).unwrap();
            assert_eq!(e.roll, 0.0);
            // Only pitch − roll is observable: 25 − 10 for +90; 25 + 10 for −90.
            let expected = if yaw > 0.0 { 15.0 } else { 35.0 };
            assert_abs_diff_eq!(e.pitch, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn rotation_to_euler_rejects_non_rotation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.01;
        assert!(matches!(
            rotation_to_euler(&r),
            Err(GeometryError::NotARotation { .. })
        ));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rotation_to_euler(&reflect).is_err());
    }

    #[test]
    fn compose_and_invert_basics() {
        let t = random_transform([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(compose(&RigidTransform::identity(), &t), t);
        assert_eq!(invert(&RigidTransform::identity()), RigidTransform::identity());
    }

    #[test]
    fn row_major_parsing_checks_bottom_row() {
        let t = random_transform([5.0, -5.0, 45.0, 1.0, 2.0, 3.0]);
        let mut m = t.to_row_major();
        assert_eq!(RigidTransform::from_row_major(&m).unwrap(), t);
        m[15] = 1.0 + 1e-15;
        assert!(RigidTransform::from_row_major(&m).is_err());
        assert!(RigidTransform::from_row_major(&m[..15]).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 0.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, -0.1, 10, 10).is_err());
        let k: CameraIntrinsics = serde_json::from_str(
            r#"{"fx":800,"fy":800,"cx":320,"cy":240,"width":640,"height":480}"#,
        )
        .unwrap();
        assert_eq!(k, webcam());
        assert!(serde_json::from_str::<CameraIntrinsics>(
            r#"{"fx":-1,"fy":800,"cx":320,"cy":240,"width":640,"height":480}"#
        )
        .is_err());
    }

    #[test]
    fn wrap_degrees_range() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(190.0), -170.0);
        assert_eq!(wrap_degrees(-540.0), 180.0);
    }

    fn angle() -> impl Strategy<Value = f64> {
        -180.0..180.0f64
    }

    proptest! {
        #[test]
        fn euler_rotation_is_orthonormal(y in angle(), p in angle(), r in angle()) {
            let m = euler_to_rotation(&EulerAngles::new(y, p, r));
            prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
        }

        #[test]
        fn euler_roundtrip_away_from_lock(y in -89.0..89.0f64, p in angle(), r in angle()) {
            let m = euler_to_rotation(&EulerAngles::new(y, p, r));
            let e = rotation_to_euler(&m).unwrap();
            prop_assert!(e.in_canonical_range(), "{:?}", e);
            let back = euler_to_rotation(&e);
            prop_assert!((back - m).amax() < 1e-9);
        }

        #[test]
        fn euler_output_always_in_range(y in angle(), p in angle(), r in angle()) {
            let e = rotation_to_euler(&euler_to_rotation(&EulerAngles::new(y, p, r))).unwrap();
            prop_assert!(e.in_canonical_range(), "{:?}", e);
        }

        #[test]
        fn ray_projection_roundtrip(
            u in 0.0..640.0f64, v in 0.0..480.0f64, s in 1.0..5000.0f64,
            y in angle(), p in angle(), r in angle(),
            tx in -500.0..500.0f64, ty in -500.0..500.0f64, tz in -500.0..500.0f64,
        ) {
            let k = webcam();
            let cam_to_world = random_transform([y, p, r, tx, ty, tz]);
            let ray = generate_ray(&k, &cam_to_world, Pixel::new(u, v));
            let px = project(&k, &cam_to_world.inverse(), &ray.at(s)).unwrap();
            prop_assert!((px.u - u).abs() < 1e-6 && (px.v - v).abs() < 1e-6);
        }

        #[test]
        fn transform_preserves_distances(
            y in angle(), p in angle(), r in angle(),
            a in prop::array::uniform3(-1000.0..1000.0f64),
            b in prop::array::uniform3(-1000.0..1000.0f64),
        ) {
            let t = random_transform([y, p, r, 10.0, -300.0, 42.0]);
            let (pa, pb) = (Point3::from(a), Point3::from(b));
            let d0 = (pa - pb).norm();
            let d1 = (t.transform_point(&pa) - t.transform_point(&pb)).norm();
            prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
        }

        #[test]
        fn compose_with_inverse_is_identity(
            y in angle(), p in angle(), r in angle(),
            t in prop::array::uniform3(-1000.0..1000.0f64),
        ) {
            let tr = random_transform([y, p, r, t[0], t[1], t[2]]);
            let id = tr.compose(&tr.inverse());
            prop_assert!((id.rotation() - Matrix3::identity()).amax() < 1e-12);
            prop_assert!(id.translation().amax() < 1e-12);
        }
    }
}
