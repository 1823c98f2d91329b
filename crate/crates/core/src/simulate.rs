//! Synthetic head scene, ground-truth data generation and the end-to-end
//! tracking and navigation harness.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    euler_to_rotation, project, wrap_degrees, CameraIntrinsics, EulerAngles,
    GeometryError, Pixel, Point3, RigidTransform, UnitVec3,
};
use crate::io::{write_json, write_ppm, write_training_set, IoError};
use crate::metrics::{psnr, ssim, MetricError};
use crate::pnp::{
    head_pose_angles, point_array, rodrigues, solve_pnp_with, Correspondence, LmConfig, PnpError,
    PoseProblem,
};
use crate::radiance::{
    render_image, ImageBuffer, RadianceError, RadianceField, RadianceSample, RenderConfig,
    SceneBounds, TrainingView,
};
use crate::registration::{
    pointing_error, rigid_register, tool_tip, Fiducial, FiducialSet, RegistrationError, ToolModel,
};

pub const NOSE_TIP: &str = "nose_tip";
pub const LEFT_EYE_CORNER: &str = "left_eye_left_corner";
pub const RIGHT_EYE_CORNER: &str = "right_eye_right_corner";

/// Landmarks used to register the tracking frame to the model.
pub const REGISTRATION_LANDMARKS: [&str; 3] = [NOSE_TIP, LEFT_EYE_CORNER, RIGHT_EYE_CORNER];

/// Landmark the tracked tool is aimed at.
pub const TOOL_TARGET: &str = LEFT_EYE_CORNER;

/// Reference registration error quoted alongside simulation reports.
pub const PAPER_FRE_MM: f64 = 3.56;

/// Head-frame rays from the origin along which each landmark is placed on
/// the outer surface. The face looks toward −z, +y points down and +x is
/// the subject's left.
const LANDMARK_DIRECTIONS: [(&str, [f64; 3]); 8] = [
    (NOSE_TIP, [0.0, 15.0, -125.0]),
    (LEFT_EYE_CORNER, [45.0, -25.0, -95.0]),
    (RIGHT_EYE_CORNER, [-45.0, -25.0, -95.0]),
    ("mouth_left", [25.0, 45.0, -95.0]),
    ("mouth_right", [-25.0, 45.0, -95.0]),
    ("chin", [0.0, 85.0, -70.0]),
    ("left_ear", [75.0, 0.0, 5.0]),
    ("right_ear", [-75.0, 0.0, 5.0]),
];

/// Marker orientation in the tracking frame while the tool points at its
/// target; the tool axis (marker +z) points away from the camera.
const MARKER_EULER: EulerAngles = EulerAngles {
    yaw: 20.0,
    pitch: -15.0,
    roll: 10.0,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("frame {frame}: landmark {name:?} is behind the camera")]
    LandmarkBehindCamera { frame: usize, name: String },
    #[error("frame {frame}: pose estimation failed: {source}")]
    Pnp {
        frame: usize,
        #[source]
        source: PnpError,
    },
    #[error("frame {frame}: registration failed: {source}")]
    Registration {
        frame: usize,
        #[source]
        source: RegistrationError,
    },
    #[error(transparent)]
    Radiance(#[from] RadianceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadSceneConfig {
    pub semi_axes_mm: [f64; 3],
    pub nose_center_mm: [f64; 3],
    pub nose_semi_axes_mm: [f64; 3],
    /// Width of the smooth occupancy transition.
    pub shell_mm: f64,
    /// Density deep inside the head, per mm.
    pub peak_density: f64,
    /// Scale of the displayed model relative to the physical head.
    pub model_scale: f64,
}

impl Default for HeadSceneConfig {
    fn default() -> Self {
        Self {
            semi_axes_mm: [75.0, 95.0, 110.0],
            nose_center_mm: [0.0, 15.0, -100.0],
            nose_semi_axes_mm: [12.0, 22.0, 25.0],
            shell_mm: 4.0,
            peak_density: 10.0,
            model_scale: 1.0,
        }
    }
}

/// Analytic head: an ellipsoid with an ellipsoidal nose, smooth occupancy
/// and position-dependent color.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticHeadScene {
    pub config: HeadSceneConfig,
    landmarks: Vec<Fiducial>,
}

fn radial_distance(p: &Point3, center: &Point3, axes: &[f64; 3]) -> f64 {
    let d = p - center;
    let q = Point3::new(d.x / axes[0], d.y / axes[1], d.z / axes[2]);
    let n = q.norm();
    if n == 0.0 {
        return -axes.iter().copied().fold(f64::INFINITY, f64::min);
    }
    d.norm() * (1.0 - 1.0 / n)
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

pub fn build_head_scene(config: &HeadSceneConfig) -> Result<SyntheticHeadScene, SimError> {
    let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
    if !positive(&config.semi_axes_mm) || !positive(&config.nose_semi_axes_mm) {
        return Err(SimError::BadConfig("semi-axes must be positive".into()));
    }
    if !positive(&[config.shell_mm, config.peak_density, config.model_scale]) {
        return Err(SimError::BadConfig(
            "shell, peak density and model scale must be positive".into(),
        ));
    }
    if !config.nose_center_mm.iter().all(|c| c.is_finite()) {
        return Err(SimError::BadConfig("nose center must be finite".into()));
    }
    let mut scene = SyntheticHeadScene {
        config: *config,
        landmarks: Vec::new(),
    };
    let reach = scene.bounding_radius() * 2.0;
    for (name, dir) in LANDMARK_DIRECTIONS {
        let d = Point3::from(dir).normalize();
        let s = |t: f64| scene.signed_distance(&(d * t));
        // Outermost crossing: walk in from outside, then bisect.
        let step = 0.5;
        let mut outer = reach;
        while s(outer - step) > 0.0 {
            outer -= step;
            if outer <= step {
                return Err(SimError::BadConfig(format!("landmark {name} misses the head")));
            }
        }
        let (mut lo, mut hi) = (outer - step, outer);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        scene.landmarks.push(Fiducial::new(name, d * (0.5 * (lo + hi))));
    }
    Ok(scene)
}

impl SyntheticHeadScene {
    /// Radial signed distance to the head surface; negative inside.
    pub fn signed_distance(&self, p: &Point3) -> f64 {
        let c = &self.config;
        let head = radial_distance(p, &Point3::zeros(), &c.semi_axes_mm);
        let nose = radial_distance(p, &Point3::from(c.nose_center_mm), &c.nose_semi_axes_mm);
        head.min(nose)
    }

    pub fn occupancy(&self, p: &Point3) -> f64 {
        let half = 0.5 * self.config.shell_mm;
        1.0 - smoothstep(-half, half, self.signed_distance(p))
    }

    pub fn color(&self, p: &Point3) -> [f64; 3] {
        [
            0.55 + 0.35 * (p.x / 60.0).tanh(),
            0.45 + 0.3 * (p.y / 60.0).tanh(),
            0.5 + 0.35 * (-p.z / 80.0).tanh(),
        ]
    }

    /// Radius of a sphere about the origin containing all nonzero density.
    pub fn bounding_radius(&self) -> f64 {
        let c = &self.config;
        let head = c.semi_axes_mm.iter().copied().fold(0.0, f64::max);
        let nose = Point3::from(c.nose_center_mm).norm()
            + c.nose_semi_axes_mm.iter().copied().fold(0.0, f64::max);
        head.max(nose) + c.shell_mm
    }

    /// Landmarks on the physical head, in mm.
    pub fn landmarks(&self) -> &[Fiducial] {
        &self.landmarks
    }

    pub fn landmark(&self, name: &str) -> Option<Point3> {
        self.landmarks.iter().find(|f| f.name == name).map(|f| f.point)
    }

    /// Registration landmarks as stored in the (scaled) model frame.
    pub fn model_fiducials(&self) -> FiducialSet {
        let points = REGISTRATION_LANDMARKS
            .iter()
            .map(|&n| Fiducial::new(n, self.landmark(n).expect("default landmark") * self.config.model_scale))
            .collect();
        FiducialSet::new("model", points).expect("three distinct landmarks")
    }
}

impl RadianceField for SyntheticHeadScene {
    fn sample(&self, x: &Point3, _d: &UnitVec3) -> RadianceSample {
        RadianceSample {
            color: self.color(x),
            density: self.config.peak_density * self.occupancy(x),
        }
    }

    fn density(&self, x: &Point3) -> f64 {
        self.config.peak_density * self.occupancy(x)
    }
}

/// Head pose in the camera (tracking) frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    pub angles: EulerAngles,
    #[serde(rename = "translation_mm", with = "point_array")]
    pub translation: Point3,
}

impl HeadPose {
    /// Head→camera transform whose recovered head pose angles equal
    /// `angles`.
    pub fn head_to_camera(&self) -> RigidTransform {
        RigidTransform::new(euler_to_rotation(&self.angles).transpose(), self.translation)
            .expect("Euler angles give a rotation")
    }
}

fn default_distance() -> [f64; 3] {
    [0.0, 0.0, 600.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySpec {
    YawSweep {
        start_deg: f64,
        stop_deg: f64,
        step_deg: f64,
        #[serde(default)]
        pitch_deg: f64,
        #[serde(default)]
        roll_deg: f64,
        #[serde(default = "default_distance")]
        translation_mm: [f64; 3],
    },
    Poses(Vec<HeadPose>),
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::YawSweep {
            start_deg: -40.0,
            stop_deg: 40.0,
            step_deg: 5.0,
            pitch_deg: 0.0,
            roll_deg: 0.0,
            translation_mm: default_distance(),
        }
    }
}

impl TrajectorySpec {
    pub fn poses(&self) -> Result<Vec<HeadPose>, SimError> {
        let poses = match self {
            TrajectorySpec::YawSweep {
                start_deg,
                stop_deg,
                step_deg,
                pitch_deg,
                roll_deg,
                translation_mm,
            } => {
                if !(*step_deg > 0.0 && step_deg.is_finite()) {
                    return Err(SimError::BadConfig("yaw step must be positive".into()));
                }
                if stop_deg < start_deg {
                    return Err(SimError::BadConfig("empty trajectory".into()));
                }
                let n = ((stop_deg - start_deg) / step_deg + 1e-9).floor() as usize + 1;
                (0..n)
                    .map(|i| HeadPose {
                        angles: EulerAngles::new(start_deg + i as f64 * step_deg, *pitch_deg, *roll_deg),
                        translation: Point3::from(*translation_mm),
                    })
                    .collect()
            }
            TrajectorySpec::Poses(p) => p.clone(),
        };
        if poses.is_empty() {
            return Err(SimError::BadConfig("empty trajectory".into()));
        }
        Ok(poses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    pub landmark_sigma_mm: f64,
    pub marker_rot_sigma: f64,
    pub marker_trans_sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let sigmas = [
            self.pixel_sigma,
            self.landmark_sigma_mm,
            self.marker_rot_sigma,
            self.marker_trans_sigma,
        ];
        if sigmas.iter().all(|s| s.is_finite() && *s >= 0.0) {
            Ok(())
        } else {
            Err(SimError::BadConfig("noise levels must be non-negative".into()))
        }
    }
}

pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0, 640, 480).expect("valid default camera")
}

fn default_tool() -> ToolModel {
    ToolModel {
        tip_offset: Point3::new(0.0, 0.0, 100.0),
    }
}

/// Turntable views for radiance-field training and held-out evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitSpec {
    pub views: usize,
    pub heldout: usize,
    pub size: u32,
    pub focal_px: f64,
    pub distance_mm: f64,
    /// Training views alternate between ± this elevation; held-out views
    /// sit at zero elevation between training azimuths.
    pub elevation_deg: f64,
    pub samples: usize,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            views: 30,
            heldout: 4,
            size: 64,
            focal_px: 130.0,
            distance_mm: 600.0,
            elevation_deg: 15.0,
            samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scene: HeadSceneConfig,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub camera: CameraIntrinsics,
    pub render: RenderConfig,
    pub tool: ToolModel,
    pub orbit: Option<OrbitSpec>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scene: HeadSceneConfig::default(),
            trajectory: TrajectorySpec::default(),
            noise: NoiseSpec::default(),
            camera: default_camera(),
            render: RenderConfig::default(),
            tool: default_tool(),
            orbit: None,
        }
    }
}

/// Everything observed or known about one trajectory frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub truth: HeadPose,
    pub correspondences: Vec<Correspondence>,
    /// Registration landmarks measured in the tracking frame.
    pub tracked_fiducials: FiducialSet,
    /// Reported marker pose (marker → tracking frame).
    pub marker_pose: RigidTransform,
    pub image: Option<ImageBuffer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    /// Physical landmarks in the head frame (mm), the 3D model for pose
    /// estimation and the ground truth for pointing.
    pub landmarks: Vec<Fiducial>,
    pub model_fiducials: FiducialSet,
    pub tool: ToolModel,
    pub frames: Vec<Frame>,
}

fn gaussian3(rng: &mut impl Rng, sigma: f64) -> Point3 {
    let mut draw = || sigma * rng.sample::<f64, _>(StandardNormal);
    Point3::new(draw(), draw(), draw())
}

/// Projects the scene landmarks for every pose and adds noise. Frame `i`
/// draws from a generator seeded with `noise.seed + i`. Images are rendered
/// from the analytic scene only when `render` is given.
pub fn generate_views(
    scene: &SyntheticHeadScene,
    k: &CameraIntrinsics,
    poses: &[HeadPose],
    noise: &NoiseSpec,
    render: Option<&RenderConfig>,
    tool: &ToolModel,
) -> Result<Dataset, SimError> {
    if poses.is_empty() {
        return Err(SimError::BadConfig("empty trajectory".into()));
    }
    noise.validate()?;
    k.validate().map_err(|e| SimError::BadConfig(e.to_string()))?;
    if let Some(r) = render {
        r.validate()?;
    }
    let marker_rotation = euler_to_rotation(&MARKER_EULER);
    let frames = poses
        .par_iter()
        .enumerate()
        .map(|(index, truth)| {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed.wrapping_add(index as u64));
            let head_to_cam = truth.head_to_camera();
            let mut correspondences = Vec::with_capacity(scene.landmarks.len());
            for lm in &scene.landmarks {
                let px = project(k, &head_to_cam, &lm.point).map_err(|e| match e {
                    GeometryError::PointBehindCamera { .. } => SimError::LandmarkBehindCamera {
                        frame: index,
                        name: lm.name.clone(),
                    },
                    other => SimError::BadConfig(other.to_string()),
                })?;
                let du = noise.pixel_sigma * rng.sample::<f64, _>(StandardNormal);
                let dv = noise.pixel_sigma * rng.sample::<f64, _>(StandardNormal);
                correspondences.push(Correspondence::new(
                    lm.name.clone(),
                    lm.point,
                    Pixel::new(px.u + du, px.v + dv),
                ));
            }
            let tracked = REGISTRATION_LANDMARKS
                .iter()
                .map(|&n| {
                    let p = head_to_cam.transform_point(&scene.landmark(n).expect("default landmark"));
                    Fiducial::new(n, p + gaussian3(&mut rng, noise.landmark_sigma_mm))
                })
                .collect();
            let tracked_fiducials = FiducialSet::new("tracking", tracked)
                .map_err(|e| SimError::Registration { frame: index, source: e })?;

            let target = head_to_cam.transform_point(&scene.landmark(TOOL_TARGET).expect("default landmark"));
            let marker_true = RigidTransform::new(marker_rotation, target - marker_rotation * tool.tip_offset)
                .expect("Euler angles give a rotation");
            let w = gaussian3(&mut rng, noise.marker_rot_sigma.to_radians());
            let dt = gaussian3(&mut rng, noise.marker_trans_sigma);
            let jitter = RigidTransform::new(rodrigues(&w), dt).expect("Rodrigues gives a rotation");
            let marker_pose = jitter.compose(&marker_true);

            let image = match render {
                Some(r) => Some(render_image(scene, k, &head_to_cam.inverse(), r)?),
                None => None,
            };
            Ok(Frame {
                index,
                truth: *truth,
                correspondences,
                tracked_fiducials,
                marker_pose,
                image,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(Dataset {
        intrinsics: *k,
        landmarks: scene.landmarks.clone(),
        model_fiducials: scene.model_fiducials(),
        tool: *tool,
        frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub true_angles: EulerAngles,
    pub recovered_angles: EulerAngles,
    /// Recovered minus true, wrapped to (−180, 180].
    pub angle_error_deg: EulerAngles,
    pub translation_error_mm: f64,
    pub rms_reprojection_px: f64,
    pub converged: bool,
    pub fre_mm: f64,
    /// Factor applied to the model landmarks before registration.
    pub model_scale_correction: f64,
    pub pointing_error_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngleRmse {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderMetrics {
    pub views: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub frames: Vec<FrameReport>,
    pub rmse_deg: AngleRmse,
    pub translation_rmse_mm: f64,
    pub mean_rms_reprojection_px: f64,
    pub mean_fre_mm: f64,
    pub mean_pointing_error_mm: f64,
    pub max_pointing_error_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub render: Option<RenderMetrics>,
    pub paper_fre_mm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<SimConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineOptions {
    pub lm: LmConfig,
}

fn process_frame(dataset: &Dataset, frame: &Frame, opts: &PipelineOptions) -> Result<FrameReport, SimError> {
    let i = frame.index;
    let solution = solve_pnp_with(&dataset.intrinsics, &frame.correspondences, None, &opts.lm)
        .map_err(|e| SimError::Pnp { frame: i, source: e })?;
    let recovered = head_pose_angles(&solution);
    let t = frame.truth.angles;
    let angle_error_deg = EulerAngles::new(
        wrap_degrees(recovered.yaw - t.yaw),
        wrap_degrees(recovered.pitch - t.pitch),
        wrap_degrees(recovered.roll - t.roll),
    );

    let eye_gap = |set: &FiducialSet| -> Option<f64> {
        Some((set.get(LEFT_EYE_CORNER)? - set.get(RIGHT_EYE_CORNER)?).norm())
    };
    let missing = || SimError::BadConfig("eye-corner fiducials missing".into());
    let model = &dataset.model_fiducials;
    let scale = eye_gap(&frame.tracked_fiducials).ok_or_else(missing)? / eye_gap(model).ok_or_else(missing)?;
    let scaled = model
        .points()
        .iter()
        .map(|f| Fiducial::new(f.name.clone(), f.point * scale))
        .collect();
    let scaled = FiducialSet::new(model.frame.clone(), scaled)
        .map_err(|e| SimError::Registration { frame: i, source: e })?;
    let reg = rigid_register(&frame.tracked_fiducials, &scaled)
        .map_err(|e| SimError::Registration { frame: i, source: e })?;

    let tip = reg.transform.transform_point(&tool_tip(&frame.marker_pose, &dataset.tool));
    let target = dataset
        .landmarks
        .iter()
        .find(|f| f.name == TOOL_TARGET)
        .ok_or_else(|| SimError::BadConfig(format!("landmark {TOOL_TARGET} missing")))?
        .point;

    Ok(FrameReport {
        index: i,
        true_angles: t,
        recovered_angles: recovered,
        angle_error_deg,
        translation_error_mm: (solution.pose.translation() - frame.truth.translation).norm(),
        rms_reprojection_px: solution.rms_reprojection_px,
        converged: solution.converged,
        fre_mm: reg.fre_mm,
        model_scale_correction: scale,
        pointing_error_mm: pointing_error(&tip, &target),
    })
}

/// Pose estimation, registration and tool pointing for every frame.
pub fn run_pipeline(dataset: &Dataset, opts: &PipelineOptions) -> Result<PipelineReport, SimError> {
    if dataset.frames.is_empty() {
        return Err(SimError::BadConfig("dataset has no frames".into()));
    }
    let frames = dataset
        .frames
        .par_iter()
        .map(|f| process_frame(dataset, f, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let n = frames.len() as f64;
    let rms = |f: &dyn Fn(&FrameReport) -> f64| (frames.iter().map(|r| f(r).powi(2)).sum::<f64>() / n).sqrt();
    let mean = |f: &dyn Fn(&FrameReport) -> f64| frames.iter().map(f).sum::<f64>() / n;
    Ok(PipelineReport {
        rmse_deg: AngleRmse {
            yaw: rms(&|r| r.angle_error_deg.yaw),
            pitch: rms(&|r| r.angle_error_deg.pitch),
            roll: rms(&|r| r.angle_error_deg.roll),
        },
        translation_rmse_mm: rms(&|r| r.translation_error_mm),
        mean_rms_reprojection_px: mean(&|r| r.rms_reprojection_px),
        mean_fre_mm: mean(&|r| r.fre_mm),
        mean_pointing_error_mm: mean(&|r| r.pointing_error_mm),
        max_pointing_error_mm: frames.iter().map(|r| r.pointing_error_mm).fold(0.0, f64::max),
        frames,
        render: None,
        paper_fre_mm: PAPER_FRE_MM,
        config: None,
    })
}

/// Builds the scene, generates the trajectory dataset and runs the pipeline.
pub fn simulate(cfg: &SimConfig, render_images: bool) -> Result<(SyntheticHeadScene, Dataset, PipelineReport), SimError> {
    let scene = build_head_scene(&cfg.scene)?;
    let poses = cfg.trajectory.poses()?;
    let render = render_images.then_some(&cfg.render);
    let dataset = generate_views(&scene, &cfg.camera, &poses, &cfg.noise, render, &cfg.tool)?;
    let mut report = run_pipeline(&dataset, &PipelineOptions::default())?;
    report.config = Some(cfg.clone());
    Ok((scene, dataset, report))
}

/// Camera→head transform for an orbit camera looking at the origin.
pub fn orbit_camera(azimuth_deg: f64, elevation_deg: f64, distance_mm: f64) -> RigidTransform {
    let r = euler_to_rotation(&EulerAngles::new(azimuth_deg, elevation_deg, 0.0));
    RigidTransform::new(r, r * Point3::new(0.0, 0.0, -distance_mm)).expect("Euler angles give a rotation")
}

/// Sampling interval and scene box that enclose the head for an orbit.
pub fn orbit_render_config(scene: &SyntheticHeadScene, spec: &OrbitSpec) -> (RenderConfig, SceneBounds) {
    let r = scene.bounding_radius() + 2.0;
    let render = RenderConfig {
        near: spec.distance_mm - r,
        far: spec.distance_mm + r,
        samples: spec.samples,
        ..RenderConfig::default()
    };
    let bounds = SceneBounds::new([-r; 3], [r; 3]).expect("positive radius");
    (render, bounds)
}

fn orbit_intrinsics(scene: &SyntheticHeadScene, spec: &OrbitSpec) -> Result<CameraIntrinsics, SimError> {
    if spec.views < 2 || spec.size < 11 || !(spec.focal_px > 0.0) {
        return Err(SimError::BadConfig(
            "orbit needs at least 2 views of at least 11 px and a positive focal length".into(),
        ));
    }
    if !(spec.distance_mm > scene.bounding_radius() + 2.0) {
        return Err(SimError::BadConfig("orbit camera is inside the head".into()));
    }
    let c = spec.size as f64 / 2.0;
    CameraIntrinsics::new(spec.focal_px, spec.focal_px, c, c, spec.size, spec.size)
        .map_err(|e| SimError::BadConfig(e.to_string()))
}

/// Training cameras alternate between ± elevation at evenly spaced
/// azimuths; held-out cameras sit at zero elevation halfway between
/// training azimuths.
pub fn orbit_cameras(spec: &OrbitSpec) -> (Vec<RigidTransform>, Vec<RigidTransform>) {
    let step = 360.0 / spec.views as f64;
    let train = (0..spec.views)
        .map(|i| {
            let el = if i % 2 == 0 { spec.elevation_deg } else { -spec.elevation_deg };
            orbit_camera(wrap_degrees(i as f64 * step), el, spec.distance_mm)
        })
        .collect();
    let heldout = (0..spec.heldout)
        .map(|j| {
            let slot = (j * spec.views / spec.heldout) as f64 + 0.5;
            orbit_camera(wrap_degrees(slot * step), 0.0, spec.distance_mm)
        })
        .collect();
    (train, heldout)
}

fn render_views(
    scene: &SyntheticHeadScene,
    k: &CameraIntrinsics,
    cams: &[RigidTransform],
    render: &RenderConfig,
) -> Result<Vec<TrainingView>, SimError> {
    cams.iter()
        .map(|cam| {
            Ok(TrainingView {
                image: render_image(scene, k, cam, render)?,
                intrinsics: *k,
                cam_to_world: *cam,
            })
        })
        .collect()
}

/// Renders the analytic scene from the training and held-out orbit cameras.
pub fn orbit_views(
    scene: &SyntheticHeadScene,
    spec: &OrbitSpec,
) -> Result<(Vec<TrainingView>, Vec<TrainingView>), SimError> {
    let k = orbit_intrinsics(scene, spec)?;
    let (render, _) = orbit_render_config(scene, spec);
    let (train, heldout) = orbit_cameras(spec);
    Ok((render_views(scene, &k, &train, &render)?, render_views(scene, &k, &heldout, &render)?))
}

/// Held-out orbit views with the sampling used to render them.
pub fn heldout_views(
    scene: &SyntheticHeadScene,
    spec: &OrbitSpec,
) -> Result<(Vec<TrainingView>, RenderConfig), SimError> {
    let k = orbit_intrinsics(scene, spec)?;
    let (render, _) = orbit_render_config(scene, spec);
    let (_, heldout) = orbit_cameras(spec);
    Ok((render_views(scene, &k, &heldout, &render)?, render))
}

/// Mean PSNR and SSIM of `field` renders against held-out views.
pub fn evaluate_field<F: RadianceField + ?Sized>(
    field: &F,
    heldout: &[TrainingView],
    render: &RenderConfig,
) -> Result<RenderMetrics, SimError> {
    if heldout.is_empty() {
        return Err(SimError::BadConfig("no held-out views".into()));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for v in heldout {
        let img = render_image(field, &v.intrinsics, &v.cam_to_world, render)?;
        p += psnr(&v.image, &img)?;
        s += ssim(&v.image, &img)?;
    }
    let n = heldout.len() as f64;
    Ok(RenderMetrics {
        views: heldout.len(),
        psnr_db: p / n,
        ssim: s / n,
    })
}

/// Writes the trajectory dataset: per-frame pose problems, tracked
/// fiducials and marker poses, the model fiducials, and when images were
/// rendered a radiance-training manifest. With an orbit spec the orbit
/// training and held-out sets are written as well.
pub fn write_dataset(
    dir: &Path,
    scene: &SyntheticHeadScene,
    dataset: &Dataset,
    render: &RenderConfig,
    orbit: Option<&OrbitSpec>,
) -> Result<(), SimError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        IoError::File {
            path: dir.display().to_string(),
            source: e,
        }
    })?;
    write_json(&dir.join("fiducials_model.json"), &dataset.model_fiducials.points())?;
    write_json(&dir.join("landmarks.json"), &dataset.landmarks)?;
    write_json(&dir.join("tool.json"), &dataset.tool)?;
    let mut views = Vec::new();
    for f in &dataset.frames {
        let i = f.index;
        let problem = PoseProblem {
            intrinsics: dataset.intrinsics,
            correspondences: f.correspondences.clone(),
        };
        write_json(&dir.join(format!("pose_{i:03}.json")), &problem)?;
        write_json(&dir.join(format!("fiducials_tracking_{i:03}.json")), &f.tracked_fiducials.points())?;
        write_json(&dir.join(format!("marker_{i:03}.json")), &f.marker_pose)?;
        write_json(&dir.join(format!("truth_{i:03}.json")), &f.truth)?;
        if let Some(img) = &f.image {
            write_ppm(&dir.join(format!("frame_{i:03}.ppm")), img)?;
            views.push(TrainingView {
                image: img.clone(),
                intrinsics: dataset.intrinsics,
                cam_to_world: f.truth.head_to_camera().inverse(),
            });
        }
    }
    let r = scene.bounding_radius() + 2.0;
    let bounds = SceneBounds::new([-r; 3], [r; 3]).expect("positive radius");
    if !views.is_empty() {
        write_training_set(dir, "frames", &views, Some(bounds), Some(*render))?;
    }
    if let Some(spec) = orbit {
        let (train, heldout) = orbit_views(scene, spec)?;
        let (orbit_render, orbit_bounds) = orbit_render_config(scene, spec);
        let orbit_dir = dir.join("orbit");
        write_training_set(&orbit_dir, "train", &train, Some(orbit_bounds), Some(orbit_render))?;
        if !heldout.is_empty() {
            write_training_set(&orbit_dir, "heldout", &heldout, Some(orbit_bounds), Some(orbit_render))?;
        }
    }
    Ok(())
}
