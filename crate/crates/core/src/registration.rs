//! Rigid landmark registration and tracked-tool tip composition.

use std::collections::HashSet;

use nalgebra::{Matrix3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform};
use crate::pnp::point_array;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("need at least 3 fiducials, got {0}")]
    TooFewPoints(usize),
    #[error("fiducial names differ between sets: {0}")]
    NameMismatch(String),
    #[error("duplicate fiducial name {0:?}")]
    DuplicateName(String),
    #[error("fiducial {0:?} has a non-finite coordinate")]
    NonFinite(String),
    #[error("moving fiducials are collinear")]
    CollinearPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fiducial {
    pub name: String,
    #[serde(rename = "mm", with = "point_array")]
    pub point: Point3,
}

impl Fiducial {
    pub fn new(name: impl Into<String>, point: Point3) -> Self {
        Self {
            name: name.into(),
            point,
        }
    }
}

/// Named points expressed in one frame. On disk only the point list is
/// stored; the frame label is supplied by the reader.
#[derive(Debug, Clone, PartialEq)]
pub struct FiducialSet {
    pub frame: String,
    points: Vec<Fiducial>,
}

impl FiducialSet {
    pub fn new(frame: impl Into<String>, points: Vec<Fiducial>) -> Result<Self, RegistrationError> {
        if points.len() < 3 {
            return Err(RegistrationError::TooFewPoints(points.len()));
        }
        let mut seen = HashSet::new();
        for f in &points {
            if !seen.insert(f.name.as_str()) {
                return Err(RegistrationError::DuplicateName(f.name.clone()));
            }
            if !f.point.iter().all(|c| c.is_finite()) {
                return Err(RegistrationError::NonFinite(f.name.clone()));
            }
        }
        Ok(Self {
            frame: frame.into(),
            points,
        })
    }

    pub fn points(&self) -> &[Fiducial] {
        &self.points
    }

    pub fn get(&self, name: &str) -> Option<&Point3> {
        self.points.iter().find(|f| f.name == name).map(|f| &f.point)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps moving-frame points into the fixed frame.
    #[serde(rename = "matrix")]
    pub transform: RigidTransform,
    pub fre_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolModel {
    /// Tip position in the marker frame.
    #[serde(with = "point_array")]
    pub tip_offset: Point3,
}

/// Least-squares rigid fit of `moving` onto `fixed`, pairing points by name.
pub fn rigid_register(moving: &FiducialSet, fixed: &FiducialSet) -> Result<RegistrationResult, RegistrationError> {
    if moving.len() != fixed.len() {
        return Err(RegistrationError::NameMismatch(format!(
            "{} moving vs {} fixed points",
            moving.len(),
            fixed.len()
        )));
    }
    let pairs: Vec<(Point3, Point3)> = moving
        .points()
        .iter()
        .map(|m| {
            fixed
                .get(&m.name)
                .map(|f| (m.point, *f))
                .ok_or_else(|| RegistrationError::NameMismatch(format!("{:?} missing from fixed set", m.name)))
        })
        .collect::<Result<_, _>>()?;
    let n = pairs.len() as f64;
    let m_bar = pairs.iter().map(|p| p.0).sum::<Point3>() / n;
    let f_bar = pairs.iter().map(|p| p.1).sum::<Point3>() / n;

    let mut scatter = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (m, f) in &pairs {
        let (mc, fc) = (m - m_bar, f - f_bar);
        scatter += mc * fc.transpose();
        spread += mc * mc.transpose();
    }
    let mut ev: Vec<f64> = spread.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if ev[2] <= 0.0 || ev[1] <= 1e-12 * ev[2] {
        return Err(RegistrationError::CollinearPoints);
    }

    let svd = SVD::new(scatter, true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Point3::new(1.0, 1.0, d)) * u.transpose();
    let translation = f_bar - rotation * m_bar;
    let transform = RigidTransform::from_parts(rotation, translation);
    let sse: f64 = pairs
        .iter()
        .map(|(m, f)| (transform.transform_point(m) - f).norm_squared())
        .sum();
    Ok(RegistrationResult {
        transform,
        fre_mm: (sse / n).sqrt(),
    })
}

pub fn tool_tip(marker_pose: &RigidTransform, tool: &ToolModel) -> Point3 {
    marker_pose.transform_point(&tool.tip_offset)
}

pub fn pointing_error(tip: &Point3, target: &Point3) -> f64 {
    (tip - target).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{euler_to_rotation, EulerAngles};
    use crate::pnp::rodrigues;
    use nalgebra::{Matrix4, SymmetricEigen, Vector3, Vector4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(frame: &str, pts: &[Point3]) -> FiducialSet {
        let points = pts
            .iter()
            .enumerate()
            .map(|(i, p)| Fiducial::new(format!("f{i}"), *p))
            .collect();
        FiducialSet::new(frame, points).unwrap()
    }

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0)))
            .collect()
    }

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let t = Vector3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0));
        RigidTransform::new(rodrigues(&w), t).unwrap()
    }

    /// Closed-form absolute orientation via the unit quaternion of maximal
    /// eigenvalue.
    fn horn(moving: &[Point3], fixed: &[Point3]) -> (Matrix3<f64>, Vector3<f64>) {
        let n = moving.len() as f64;
        let mc = moving.iter().sum::<Point3>() / n;
        let fc = fixed.iter().sum::<Point3>() / n;
        let mut s = Matrix3::zeros();
        for (m, f) in moving.iter().zip(fixed) {
            s += (m - mc) * (f - fc).transpose();
        }
        let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
        let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
        let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
        let nm = Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(nm);
        let best = eig.eigenvalues.imax();
        let q: Vector4<f64> = eig.eigenvectors.column(best).into();
        let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
        let r = Matrix3::new(
            w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
            2.0 * (x * y + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x),
            2.0 * (x * z - w * y), 2.0 * (y * z + w * x), w * w - x * x - y * y + z * z,
        );
        (r, fc - r * mc)
    }

    fn is_rotation(r: &Matrix3<f64>) -> bool {
        (r.transpose() * r - Matrix3::identity()).norm() < 1e-9 && (r.determinant() - 1.0).abs() < 1e-9
    }

    #[test]
    fn identical_sets_give_identity() {
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(60.0, 0.0, 0.0), Point3::new(0.0, 40.0, 10.0)];
        let r = rigid_register(&set("a", &pts), &set("b", &pts)).unwrap();
        assert!((r.transform.to_homogeneous() - Matrix4::identity()).norm() < 1e-12);
        assert!(r.fre_mm < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let truth = random_transform(&mut rng);
            let n = rng.random_range(3..9);
            let moving = random_points(&mut rng, n);
            let fixed: Vec<_> = moving.iter().map(|p| truth.transform_point(p)).collect();
            let r = rigid_register(&set("m", &moving), &set("f", &fixed)).unwrap();
            assert!((r.transform.rotation() - truth.rotation()).norm() < 1e-9);
            assert!((r.transform.translation() - truth.translation()).norm() < 1e-9);
            assert!(r.fre_mm < 1e-9);
        }
    }

    #[test]
    fn pairs_by_name_not_order() {
        let pts = [Point3::new(1.0, 2.0, 3.0), Point3::new(50.0, 0.0, 0.0), Point3::new(0.0, 30.0, 0.0), Point3::new(5.0, 5.0, 40.0)];
        let moving = set("m", &pts);
        let mut shuffled: Vec<Fiducial> = moving.points().to_vec();
        shuffled.reverse();
        let fixed = FiducialSet::new("f", shuffled).unwrap();
        assert!(rigid_register(&moving, &fixed).unwrap().fre_mm < 1e-12);
    }

    #[test]
    fn input_errors() {
        let pts = [Point3::zeros(), Point3::x() * 10.0, Point3::y() * 10.0];
        let a = set("a", &pts);
        let mut renamed = a.points().to_vec();
        renamed[2].name = "other".into();
        let b = FiducialSet::new("b", renamed).unwrap();
        assert!(matches!(rigid_register(&a, &b), Err(RegistrationError::NameMismatch(_))));

        let line = set("l", &[Point3::zeros(), Point3::x(), Point3::x() * 2.0]);
        assert_eq!(rigid_register(&line, &line), Err(RegistrationError::CollinearPoints));

        assert_eq!(FiducialSet::new("x", vec![Fiducial::new("a", Point3::zeros())]), Err(RegistrationError::TooFewPoints(1)));
        let dup = vec![Fiducial::new("a", Point3::zeros()), Fiducial::new("a", Point3::x()), Fiducial::new("c", Point3::y())];
        assert_eq!(FiducialSet::new("x", dup), Err(RegistrationError::DuplicateName("a".into())));
    }

    #[test]
    fn matches_quaternion_oracle_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let truth = random_transform(&mut rng);
            let moving = random_points(&mut rng, 5);
            let fixed: Vec<_> = moving
                .iter()
                .map(|p| truth.transform_point(p) + Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let r = rigid_register(&set("m", &moving), &set("f", &fixed)).unwrap();
            let (hr, ht) = horn(&moving, &fixed);
            assert!((r.transform.rotation() - hr).norm() < 1e-8);
            assert!((r.transform.translation() - ht).norm() < 1e-6);
        }
    }

    #[test]
    fn returned_transform_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_transform(&mut rng);
        let moving = random_points(&mut rng, 6);
        let fixed: Vec<_> = moving
            .iter()
            .map(|p| truth.transform_point(p) + Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
            .collect();
        let r = rigid_register(&set("m", &moving), &set("f", &fixed)).unwrap();
        let sse = |t: &RigidTransform| -> f64 {
            moving.iter().zip(&fixed).map(|(m, f)| (t.transform_point(m) - f).norm_squared()).sum()
        };
        let best = sse(&r.transform);
        for _ in 0..100 {
            let w = Vector3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
            let dt = Vector3::new(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
            let bump = RigidTransform::new(rodrigues(&w), dt).unwrap();
            assert!(sse(&bump.compose(&r.transform)) >= best);
        }
    }

    proptest! {
        #[test]
        fn output_is_a_rotation_even_for_mirrored_targets(seed in 0u64..10_000, mirror in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let moving = random_points(&mut rng, 4);
            let fixed: Vec<_> = moving
                .iter()
                .map(|p| if mirror { Point3::new(-p.x, p.y, p.z) } else { p + Vector3::new(rng.random_range(-20.0..20.0), 0.0, rng.random_range(-20.0..20.0)) })
                .collect();
            let r = rigid_register(&set("m", &moving), &set("f", &fixed)).unwrap();
            prop_assert!(is_rotation(r.transform.rotation()));
            prop_assert!(r.fre_mm >= 0.0);
        }

        #[test]
        fn fre_invariant_under_common_motion(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let moving = random_points(&mut rng, 5);
            let fixed = random_points(&mut rng, 5);
            let g = random_transform(&mut rng);
            let a = rigid_register(&set("m", &moving), &set("f", &fixed)).unwrap();
            let moved_m: Vec<_> = moving.iter().map(|p| g.transform_point(p)).collect();
            let moved_f: Vec<_> = fixed.iter().map(|p| g.transform_point(p)).collect();
            let b = rigid_register(&set("m", &moved_m), &set("f", &moved_f)).unwrap();
            prop_assert!((a.fre_mm - b.fre_mm).abs() < 1e-9);
        }
    }

    #[test]
    fn tool_tip_cases() {
        let tool = ToolModel { tip_offset: Point3::new(0.0, 0.0, 100.0) };
        assert_eq!(tool_tip(&RigidTransform::identity(), &tool), Point3::new(0.0, 0.0, 100.0));
        let roll = RigidTransform::new(euler_to_rotation(&EulerAngles::new(0.0, 0.0, 90.0)), Point3::zeros()).unwrap();
        assert!((tool_tip(&roll, &tool) - Point3::new(0.0, 0.0, 100.0)).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let pose = random_transform(&mut rng);
            let tool = ToolModel { tip_offset: random_points(&mut rng, 1)[0] };
            let h = pose.to_homogeneous() * Vector4::new(tool.tip_offset.x, tool.tip_offset.y, tool.tip_offset.z, 1.0);
            assert!((tool_tip(&pose, &tool) - h.xyz()).norm() < 1e-10);
        }
    }

    #[test]
    fn pointing_error_cases() {
        assert_eq!(pointing_error(&Point3::new(1.0, 2.0, 3.0), &Point3::new(1.0, 2.0, 3.0)), 0.0);
        assert_eq!(pointing_error(&Point3::zeros(), &Point3::new(3.0, 4.0, 0.0)), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = random_points(&mut rng, 2);
            let d = p[0] - p[1];
            let expect = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
            assert!((pointing_error(&p[0], &p[1]) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn json_layouts() {
        let f: Vec<Fiducial> = serde_json::from_str(r#"[{"name": "nose_tip", "mm": [1, 2, 3]}]"#).unwrap();
        assert_eq!(f[0], Fiducial::new("nose_tip", Point3::new(1.0, 2.0, 3.0)));
        let r = RegistrationResult { transform: RigidTransform::identity(), fre_mm: 0.5 };
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["matrix"].as_array().unwrap().len(), 16);
        assert_eq!(v["fre_mm"], 0.5);
    }
}
