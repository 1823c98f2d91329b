//! Head pose from 2D–3D landmark correspondences.
//!
//! The pose is parameterized by an axis-angle vector and a translation and
//! refined with Levenberg–Marquardt on the pixel reprojection error.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SVD, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    project_camera_point, rotation_to_euler, CameraIntrinsics, EulerAngles, GeometryError, Pixel,
    Point3, RigidTransform, MIN_DEPTH_MM,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("world points are collinear or coincident")]
    DegenerateConfiguration,
    #[error("correspondence {index} projects behind the camera")]
    PointBehindCamera { index: usize },
    #[error("Levenberg-Marquardt diverged (damping {lambda:e})")]
    Diverged { lambda: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A model landmark (head frame, mm) paired with its observed pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "world_mm", with = "point_array")]
    pub world_point: Point3,
    #[serde(rename = "pixel", with = "pixel_array")]
    pub observation: Pixel,
}

impl Correspondence {
    pub fn new(name: impl Into<String>, world_point: Point3, observation: Pixel) -> Self {
        Self {
            name: name.into(),
            world_point,
            observation,
        }
    }
}

pub(crate) mod point_array {
    use super::Point3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Point3, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Point3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Point3::from(a))
    }
}

mod pixel_array {
    use super::Pixel;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Pixel, s: S) -> Result<S::Ok, S::Error> {
        [p.u, p.v].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Pixel, D::Error> {
        let [u, v] = <[f64; 2]>::deserialize(d)?;
        Ok(Pixel { u, v })
    }
}

/// A complete pose problem as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseProblem {
    pub intrinsics: CameraIntrinsics,
    pub correspondences: Vec<Correspondence>,
}

/// Minimal 6-DOF pose: axis-angle rotation (radians) and translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParameters {
    pub axis_angle: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for PoseParameters {
    /// Identity rotation with the head 600 mm in front of the camera.
    fn default() -> Self {
        Self {
            axis_angle: Vector3::zeros(),
            translation: Vector3::new(0.0, 0.0, 600.0),
        }
    }
}

impl PoseParameters {
    pub fn new(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            axis_angle: normalize_axis_angle(axis_angle),
            translation,
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let (w, t) = (self.axis_angle, self.translation);
        Vector6::new(w.x, w.y, w.z, t.x, t.y, t.z)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rodrigues(&self.axis_angle)
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_parts(self.rotation(), self.translation)
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self {
            axis_angle: log_rotation(t.rotation()),
            translation: *t.translation(),
        }
    }
}

/// Wraps an axis-angle vector with `|θ| > π` to the equivalent rotation with
/// angle in `(-π, π]`.
fn normalize_axis_angle(w: Vector3<f64>) -> Vector3<f64> {
    let theta = w.norm();
    if theta <= std::f64::consts::PI {
        return w;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let wrapped = theta - two_pi * ((theta + std::f64::consts::PI) / two_pi).floor();
    w * (wrapped / theta)
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' rotation formula.
pub fn rodrigues(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor expansions of sinθ/θ and (1 − cosθ)/θ².
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`rodrigues`], returning an angle in `[0, π]`.
pub fn log_rotation(r: &Matrix3<f64>) -> Vector3<f64> {
    let axis_sin = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * 0.5;
    let s = axis_sin.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if theta < 1e-8 {
        return axis_sin;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return axis_sin * (theta / s);
    }
    // Near π the antisymmetric part vanishes; recover the axis from R + I.
    let m = (r + Matrix3::identity()) * 0.5;
    let col = (0..3)
        .max_by(|&a, &b| m[(a, a)].total_cmp(&m[(b, b)]))
        .unwrap_or(0);
    let mut axis = m.column(col).into_owned();
    axis /= axis.norm();
    if axis.dot(&axis_sin) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// `∂(R(ω)·p)/∂ω` as a 3×3 matrix whose column `i` is the derivative with
/// respect to `ω_i`.
fn rotated_point_jacobian(w: &Vector3<f64>, r: &Matrix3<f64>, p: &Point3) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    if theta2 < 1e-20 {
        // At ω = 0: ∂R/∂ω_i = [e_i]×, so ∂(Rp)/∂ω = −[p]×.
        return -skew(p);
    }
    // ∂R/∂ω_i = (ω_i[ω]× + [ω × (I − R)e_i]×)·R / θ²
    let rp = r * p;
    let i_minus_r = Matrix3::identity() - r;
    let wx = skew(w);
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        let v = w.cross(&i_minus_r.column(i).into_owned());
        let col = (wx * rp * w[i] + v.cross(&rp)) / theta2;
        out.set_column(i, &col);
    }
    out
}

fn check_inputs(corr: &[Correspondence]) -> Result<(), PnpError> {
    if corr.len() < 4 {
        return Err(PnpError::InsufficientPoints(corr.len()));
    }
    if points_are_degenerate(corr.iter().map(|c| c.world_point)) {
        return Err(PnpError::DegenerateConfiguration);
    }
    Ok(())
}

/// True when the points are collinear or coincident (second principal
/// spread negligible against the first).
pub(crate) fn points_are_degenerate(points: impl Iterator<Item = Point3> + Clone) -> bool {
    let n = points.clone().count();
    if n < 2 {
        return true;
    }
    let centroid = points.clone().fold(Point3::zeros(), |a, p| a + p) / n as f64;
    let cov = points.fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let mut sv = SVD::new(cov, false, false).singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    !(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0]
}

/// Reprojection residuals `(u_proj − u_obs, v_proj − v_obs)` per
/// correspondence, in input order.
pub fn residuals(
    k: &CameraIntrinsics,
    pose: &PoseParameters,
    corr: &[Correspondence],
) -> Result<DVector<f64>, PnpError> {
    let r = pose.rotation();
    let mut out = DVector::zeros(2 * corr.len());
    for (i, c) in corr.iter().enumerate() {
        let cam = r * c.world_point + pose.translation;
        let px = project_camera_point(k, &cam).map_err(|_| PnpError::PointBehindCamera { index: i })?;
        out[2 * i] = px.u - c.observation.u;
        out[2 * i + 1] = px.v - c.observation.v;
    }
    Ok(out)
}

/// Analytic `2N×6` Jacobian of [`residuals`]; columns are the axis-angle
/// components followed by the translation components.
pub fn jacobian(
    k: &CameraIntrinsics,
    pose: &PoseParameters,
    corr: &[Correspondence],
) -> Result<DMatrix<f64>, PnpError> {
    let r = pose.rotation();
    let mut jac = DMatrix::zeros(2 * corr.len(), 6);
    for (i, c) in corr.iter().enumerate() {
        let cam = r * c.world_point + pose.translation;
        if !(cam.z > MIN_DEPTH_MM) {
            return Err(PnpError::PointBehindCamera { index: i });
        }
        let inv_z = 1.0 / cam.z;
        // ∂(u, v)/∂(X, Y, Z)
        let du = Vector3::new(k.fx * inv_z, 0.0, -k.fx * cam.x * inv_z * inv_z);
        let dv = Vector3::new(0.0, k.fy * inv_z, -k.fy * cam.y * inv_z * inv_z);
        let d_rot = rotated_point_jacobian(&pose.axis_angle, &r, &c.world_point);
        for j in 0..3 {
            let col = d_rot.column(j);
            jac[(2 * i, j)] = du.dot(&col);
            jac[(2 * i + 1, j)] = dv.dot(&col);
            jac[(2 * i, 3 + j)] = du[j];
            jac[(2 * i + 1, 3 + j)] = dv[j];
        }
    }
    Ok(jac)
}

/// Levenberg–Marquardt schedule and stopping rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_lambda: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub relative_cost_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_lambda: 1e10,
            max_iterations: 100,
            step_tolerance: 1e-10,
            relative_cost_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnPSolution {
    pub pose: RigidTransform,
    pub parameters: PoseParameters,
    pub rms_reprojection_px: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost `‖r‖²` after initialization and after every accepted step.
    pub cost_history: Vec<f64>,
}

impl PnPSolution {
    /// Final sum of squared residuals (px²).
    pub fn cost(&self) -> f64 {
        *self.cost_history.last().unwrap_or(&0.0)
    }
}

pub fn solve_pnp(
    k: &CameraIntrinsics,
    corr: &[Correspondence],
    init: Option<PoseParameters>,
) -> Result<PnPSolution, PnpError> {
    solve_pnp_with(k, corr, init, &LmConfig::default())
}

pub fn solve_pnp_with(
    k: &CameraIntrinsics,
    corr: &[Correspondence],
    init: Option<PoseParameters>,
    cfg: &LmConfig,
) -> Result<PnPSolution, PnpError> {
    check_inputs(corr)?;
    let mut params = init.unwrap_or_default();
    let mut res = residuals(k, &params, corr)?;
    let mut cost = res.norm_squared();
    let mut history = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jac = jacobian(k, &params, corr)?;
        let jtj: Matrix6<f64> = (jac.transpose() * &jac).fixed_view::<6, 6>(0, 0).into_owned();
        let jtr: Vector6<f64> = (jac.transpose() * &res).fixed_view::<6, 1>(0, 0).into_owned();
        let diag = jtj.diagonal();

        // Inner loop: raise damping until a step lowers the cost.
        loop {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * diag[i].max(f64::MIN_POSITIVE);
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&jtr),
                None => {
                    lambda *= cfg.lambda_up;
                    if lambda > cfg.max_lambda {
                        return Err(PnpError::Diverged { lambda });
                    }
                    continue;
                }
            };
            if step.norm() < cfg.step_tolerance {
                converged = true;
                break;
            }
            let candidate = PoseParameters::from_vector(&(params.to_vector() + step));
            let trial = residuals(k, &candidate, corr)
                .ok()
                .map(|r| (r.norm_squared(), r))
                .filter(|(c, _)| c.is_finite());
            match trial {
                Some((new_cost, new_res)) if new_cost <= cost => {
                    let decrease = cost - new_cost;
                    params = candidate;
                    res = new_res;
                    cost = new_cost;
                    history.push(cost);
                    lambda = (lambda / cfg.lambda_down).max(1e-15);
                    if cost == 0.0 || decrease <= cfg.relative_cost_tolerance * (cost + decrease) {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= cfg.lambda_up;
                    if lambda > cfg.max_lambda {
                        return Err(PnpError::Diverged { lambda });
                    }
                }
            }
        }
    }

    Ok(PnPSolution {
        pose: params.to_transform(),
        parameters: params,
        rms_reprojection_px: (cost / corr.len() as f64).sqrt(),
        iterations,
        converged,
        cost_history: history,
    })
}

/// Head orientation in the camera frame: the inverse of the world-to-camera
/// rotation, decomposed into yaw/pitch/roll.
pub fn head_pose_angles(solution: &PnPSolution) -> EulerAngles {
    rotation_to_euler(&solution.pose.rotation().transpose())
        .expect("Rodrigues output is always a rotation")
}
