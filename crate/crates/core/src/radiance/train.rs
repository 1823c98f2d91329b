//! Fits field parameters to posed images with Adam on random ray batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::{Architecture, FieldParameters, SceneBounds};
use super::grad::{loss_and_gradient_samples, RaySamples};
use super::render::{row_rays, ImageBuffer, RenderConfig};
use super::{EncodingConfig, RadianceError};
use crate::geometry::{CameraIntrinsics, Ray, RigidTransform};

/// One posed training image.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub image: ImageBuffer,
    pub intrinsics: CameraIntrinsics,
    pub cam_to_world: RigidTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub encoding: EncodingConfig,
    pub architecture: Architecture,
    pub bounds: SceneBounds,
    /// Sampling used for training rays; `stratified` is normally on.
    pub render: RenderConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(bounds: SceneBounds, render: RenderConfig) -> Self {
        Self {
            steps: 1000,
            batch_size: 1024,
            adam: AdamConfig::default(),
            encoding: EncodingConfig::default(),
            architecture: Architecture::default(),
            bounds,
            render: RenderConfig {
                stratified: true,
                ..render
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FieldParameters,
    /// Batch loss at every step, before that step's update.
    pub loss_log: Vec<f64>,
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, parameter_count: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; parameter_count],
            v: vec![0.0; parameter_count],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut FieldParameters, grad: &FieldParameters) {
        self.step += 1;
        let c = self.cfg;
        let bias1 = 1.0 - c.beta1.powi(self.step);
        let bias2 = 1.0 - c.beta2.powi(self.step);
        let moments = self.m.iter_mut().zip(self.v.iter_mut());
        for ((p, g), (m, v)) in params.values_mut().zip(grad.values()).zip(moments) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
}

/// All pixel-centre rays of a view with their target colors.
pub fn view_rays(view: &TrainingView) -> Vec<(Ray, [f64; 3])> {
    let k = &view.intrinsics;
    (0..k.height as usize)
        .flat_map(|v| {
            row_rays(k, &view.cam_to_world, v)
                .into_iter()
                .enumerate()
                .map(move |(u, ray)| (ray, view.image.pixel(u, v)))
        })
        .collect()
}

pub fn train(dataset: &[TrainingView], cfg: &TrainConfig) -> Result<TrainOutcome, RadianceError> {
    let init = FieldParameters::init(cfg.encoding, cfg.bounds, cfg.architecture, cfg.seed);
    train_from(init, dataset, cfg, |_, _, _| {})
}

/// Continues training from `params`. `on_step(step, loss, params)` is
/// called after every update.
pub fn train_from(
    mut params: FieldParameters,
    dataset: &[TrainingView],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64, &FieldParameters),
) -> Result<TrainOutcome, RadianceError> {
    if dataset.len() < 2 {
        return Err(RadianceError::InsufficientViews(dataset.len()));
    }
    if cfg.batch_size == 0 {
        return Err(RadianceError::InvalidConfig("batch size must be positive".into()));
    }
    cfg.render.validate()?;
    params.validate()?;
    for view in dataset {
        view.intrinsics.validate()?;
        let k = &view.intrinsics;
        if view.image.width != k.width as usize || view.image.height != k.height as usize {
            return Err(RadianceError::DimensionMismatch(format!(
                "image is {}x{} but intrinsics describe {}x{}",
                view.image.width, view.image.height, k.width, k.height
            )));
        }
    }

    let rays: Vec<(Ray, [f64; 3])> = dataset.iter().flat_map(view_rays).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a11);
    let mut adam = Adam::new(cfg.adam, params.parameter_count());
    let mut loss_log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let items: Vec<RaySamples> = (0..cfg.batch_size)
            .map(|_| {
                let (ray, target) = &rays[rng.random_range(0..rays.len())];
                RaySamples {
                    ray,
                    target: *target,
                    ts: cfg.render.distances(Some(&mut rng)),
                }
            })
            .collect();
        let (loss, grad) =
            loss_and_gradient_samples(&params, &items, cfg.render.far, cfg.render.background);
        adam.update(&mut params, &grad);
        loss_log.push(loss);
        on_step(step, loss, &params);
    }
    Ok(TrainOutcome { params, loss_log })
}
