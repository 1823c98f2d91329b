//! Quadrature of the volume-rendering integral along camera rays.

use nalgebra::{Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{eval_unchecked, FieldParameters, RadianceSample};
use super::RadianceError;
use crate::geometry::{generate_ray, CameraIntrinsics, Pixel, Point3, Ray, RigidTransform, UnitVec3};

/// Anything that can be queried for color and density at a world point.
pub trait RadianceField: Sync {
    fn sample(&self, x: &Point3, d: &UnitVec3) -> RadianceSample;

    /// Evaluates many points; `ray_of[i]` indexes the direction of point `i`.
    fn sample_batch(&self, xs: &[Point3], ds: &[UnitVec3], ray_of: &[usize]) -> Vec<RadianceSample> {
        xs.iter()
            .zip(ray_of)
            .map(|(x, &r)| self.sample(x, &ds[r]))
            .collect()
    }

    fn density(&self, x: &Point3) -> f64 {
        self.sample(x, &Unit::new_unchecked(Vector3::z())).density
    }
}

impl RadianceField for FieldParameters {
    fn sample(&self, x: &Point3, d: &UnitVec3) -> RadianceSample {
        eval_unchecked(self, &self.bounds.normalize(x), d)
    }

    fn sample_batch(&self, xs: &[Point3], ds: &[UnitVec3], ray_of: &[usize]) -> Vec<RadianceSample> {
        let pass = self.forward_batch(xs, ds, ray_of);
        (0..xs.len())
            .map(|i| RadianceSample {
                color: [pass.color[(i, 0)], pass.color[(i, 1)], pass.color[(i, 2)]],
                density: pass.density[i],
            })
            .collect()
    }

    fn density(&self, x: &Point3) -> f64 {
        self.density_at(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Near plane distance along the ray (mm).
    pub near: f64,
    /// Far plane distance along the ray (mm).
    pub far: f64,
    pub samples: usize,
    pub stratified: bool,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            near: 450.0,
            far: 750.0,
            samples: 64,
            stratified: false,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RadianceError> {
        if !(self.near > 0.0 && self.far > self.near && self.far.is_finite()) {
            return Err(RadianceError::InvalidConfig("need 0 < near < far".into()));
        }
        if self.samples < 2 {
            return Err(RadianceError::InvalidConfig("need at least 2 samples per ray".into()));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(RadianceError::InvalidConfig("background must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Sample distances: bin midpoints, or one uniform draw per bin when
    /// stratified and a generator is supplied.
    pub fn distances<R: Rng>(&self, rng: Option<&mut R>) -> Vec<f64> {
        let bin = (self.far - self.near) / self.samples as f64;
        match rng {
            Some(rng) if self.stratified => (0..self.samples)
                .map(|i| self.near + (i as f64 + rng.random::<f64>()) * bin)
                .collect(),
            _ => (0..self.samples)
                .map(|i| self.near + (i as f64 + 0.5) * bin)
                .collect(),
        }
    }
}

/// Interval lengths `δᵢ = tᵢ₊₁ − tᵢ`, with the last interval closed at `far`.
pub fn deltas(ts: &[f64], far: f64) -> Vec<f64> {
    let mut out: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(last) = ts.last() {
        out.push(far - last);
    }
    out
}

/// Per-sample compositing weights along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeWeights {
    /// `Tᵢ = exp(−Σ_{j<i} σⱼδⱼ)`
    pub transmittance: Vec<f64>,
    /// `Tᵢ·(1 − exp(−σᵢδᵢ))`
    pub weights: Vec<f64>,
    /// Transmittance past the last sample.
    pub transmittance_out: f64,
}

pub fn composite_weights(densities: &[f64], deltas: &[f64]) -> CompositeWeights {
    let mut transmittance = Vec::with_capacity(densities.len());
    let mut weights = Vec::with_capacity(densities.len());
    let mut optical_depth = 0.0f64;
    for (sigma, delta) in densities.iter().zip(deltas) {
        let t_i = (-optical_depth).exp();
        let tau = sigma * delta;
        transmittance.push(t_i);
        weights.push(t_i * -(-tau).exp_m1());
        optical_depth += tau;
    }
    CompositeWeights {
        transmittance,
        weights,
        transmittance_out: (-optical_depth).exp(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderedRay {
    pub color: [f64; 3],
    pub transmittance_out: f64,
}

pub fn composite(samples: &[RadianceSample], deltas: &[f64], background: [f64; 3]) -> RenderedRay {
    let densities: Vec<f64> = samples.iter().map(|s| s.density).collect();
    let w = composite_weights(&densities, deltas);
    let mut color = [0.0; 3];
    for (s, wi) in samples.iter().zip(&w.weights) {
        for c in 0..3 {
            color[c] += wi * s.color[c];
        }
    }
    for c in 0..3 {
        color[c] += w.transmittance_out * background[c];
    }
    RenderedRay {
        color,
        transmittance_out: w.transmittance_out,
    }
}

/// Renders one ray with explicitly chosen sample distances.
pub fn render_ray_at<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    ts: &[f64],
    far: f64,
    background: [f64; 3],
) -> RenderedRay {
    let xs: Vec<Point3> = ts.iter().map(|&t| ray.at(t)).collect();
    let ray_of = vec![0; xs.len()];
    let samples = field.sample_batch(&xs, std::slice::from_ref(&ray.direction), &ray_of);
    composite(&samples, &deltas(ts, far), background)
}

/// Renders one ray. Stratified jitter, when enabled, is drawn from a
/// generator seeded with `cfg.seed`.
pub fn render_ray<F: RadianceField + ?Sized>(field: &F, ray: &Ray, cfg: &RenderConfig) -> RenderedRay {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ts = cfg.distances(Some(&mut rng));
    render_ray_at(field, ray, &ts, cfg.far, cfg.background)
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, RadianceError> {
        if pixels.len() != width * height * 3 {
            return Err(RadianceError::DimensionMismatch(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let pixels = (0..width * height).flat_map(|_| color).collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }
}

/// Pixel-centre rays `(u + 0.5, v + 0.5)` of one image row.
pub fn row_rays(k: &CameraIntrinsics, cam_to_world: &RigidTransform, row: usize) -> Vec<Ray> {
    (0..k.width as usize)
        .map(|u| generate_ray(k, cam_to_world, Pixel::new(u as f64 + 0.5, row as f64 + 0.5)))
        .collect()
}

/// Renders every pixel centre. Rows are rendered in parallel; stratified
/// jitter for pixel `i` is seeded with `cfg.seed + i`, so output does not
/// depend on the thread count.
pub fn render_image<F: RadianceField + ?Sized>(
    field: &F,
    k: &CameraIntrinsics,
    cam_to_world: &RigidTransform,
    cfg: &RenderConfig,
) -> Result<ImageBuffer, RadianceError> {
    cfg.validate()?;
    k.validate()?;
    let width = k.width as usize;
    let height = k.height as usize;
    let mut pixels = vec![0.0; width * height * 3];
    let d = cfg.samples;
    pixels
        .par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(row, out)| {
            let rays = row_rays(k, cam_to_world, row);
            let mut all_ts = Vec::with_capacity(width * d);
            for u in 0..width {
                if cfg.stratified {
                    let seed = cfg.seed.wrapping_add((row * width + u) as u64);
                    all_ts.extend(cfg.distances(Some(&mut ChaCha8Rng::seed_from_u64(seed))));
                } else {
                    all_ts.extend(cfg.distances::<ChaCha8Rng>(None));
                }
            }
            let xs: Vec<Point3> = all_ts
                .iter()
                .enumerate()
                .map(|(i, &t)| rays[i / d].at(t))
                .collect();
            let dirs: Vec<UnitVec3> = rays.iter().map(|r| r.direction).collect();
            let ray_of: Vec<usize> = (0..xs.len()).map(|i| i / d).collect();
            let samples = field.sample_batch(&xs, &dirs, &ray_of);
            for u in 0..width {
                let ts = &all_ts[u * d..(u + 1) * d];
                let r = composite(&samples[u * d..(u + 1) * d], &deltas(ts, cfg.far), cfg.background);
                out[3 * u..3 * u + 3].copy_from_slice(&r.color);
            }
        });
    ImageBuffer::new(width, height, pixels)
}
