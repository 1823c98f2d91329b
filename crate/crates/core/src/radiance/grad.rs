//! Photometric loss and its reverse-mode gradient through compositing and
//! the MLP.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::field::FieldParameters;
use super::render::{composite_weights, deltas, RenderConfig};
use crate::geometry::{Point3, Ray, UnitVec3};

/// Rays handled per work item. Fixed so the reduction order never depends on
/// the thread count.
const CHUNK_RAYS: usize = 128;

/// A training ray with its target color and explicit sample distances.
#[derive(Debug, Clone)]
pub(crate) struct RaySamples<'a> {
    pub ray: &'a Ray,
    pub target: [f64; 3],
    pub ts: Vec<f64>,
}

/// Mean over rays and channels of the squared color error, with the
/// parameter gradient.
pub fn loss_and_gradient(
    params: &FieldParameters,
    batch: &[(Ray, [f64; 3])],
    cfg: &RenderConfig,
) -> (f64, FieldParameters) {
    assert!(!batch.is_empty(), "batch must not be empty");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let items: Vec<RaySamples> = batch
        .iter()
        .map(|(ray, target)| RaySamples {
            ray,
            target: *target,
            ts: cfg.distances(Some(&mut rng)),
        })
        .collect();
    loss_and_gradient_samples(params, &items, cfg.far, cfg.background)
}

pub(crate) fn loss_and_gradient_samples(
    params: &FieldParameters,
    items: &[RaySamples],
    far: f64,
    background: [f64; 3],
) -> (f64, FieldParameters) {
    let scale = 1.0 / (3 * items.len()) as f64;
    let partials: Vec<(f64, FieldParameters)> = items
        .par_chunks(CHUNK_RAYS)
        .map(|chunk| chunk_gradient(params, chunk, far, background, scale))
        .collect();
    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    for (l, g) in &partials {
        loss += l;
        grad.add_scaled(g, 1.0);
    }
    (loss, grad)
}

fn chunk_gradient(
    params: &FieldParameters,
    chunk: &[RaySamples],
    far: f64,
    background: [f64; 3],
    scale: f64,
) -> (f64, FieldParameters) {
    let total: usize = chunk.iter().map(|r| r.ts.len()).sum();
    let mut xs: Vec<Point3> = Vec::with_capacity(total);
    let mut ray_of = Vec::with_capacity(total);
    let dirs: Vec<UnitVec3> = chunk.iter().map(|r| r.ray.direction).collect();
    for (i, item) in chunk.iter().enumerate() {
        for &t in &item.ts {
            xs.push(item.ray.at(t));
            ray_of.push(i);
        }
    }
    let pass = params.forward_batch(&xs, &dirs, &ray_of);

    let mut d_density = Array1::zeros(total);
    let mut d_color = Array2::zeros((total, 3));
    let mut loss = 0.0;
    let mut offset = 0;
    for item in chunk {
        let n = item.ts.len();
        let dl = deltas(&item.ts, far);
        let sigmas: Vec<f64> = (0..n).map(|i| pass.density[offset + i]).collect();
        let w = composite_weights(&sigmas, &dl);
        let mut color = [0.0; 3];
        for i in 0..n {
            for c in 0..3 {
                color[c] += w.weights[i] * pass.color[(offset + i, c)];
            }
        }
        let mut d_rendered = [0.0; 3];
        for c in 0..3 {
            color[c] += w.transmittance_out * background[c];
            let e = color[c] - item.target[c];
            loss += scale * e * e;
            d_rendered[c] = 2.0 * scale * e;
        }
        if d_rendered.iter().all(|g| *g == 0.0) {
            offset += n;
            continue;
        }
        // ∂C/∂σₖ = δₖ·(Tₖ₊₁·cₖ − Sₖ), Sₖ = Σ_{i>k} wᵢcᵢ + T_out·bg
        let mut suffix = [0.0; 3];
        for c in 0..3 {
            suffix[c] = w.transmittance_out * background[c];
        }
        for k in (0..n).rev() {
            let t_next = if k + 1 < n {
                w.transmittance[k + 1]
            } else {
                w.transmittance_out
            };
            let mut g = 0.0;
            for c in 0..3 {
                let ck = pass.color[(offset + k, c)];
                g += d_rendered[c] * (t_next * ck - suffix[c]);
                d_color[(offset + k, c)] = d_rendered[c] * w.weights[k];
                suffix[c] += w.weights[k] * ck;
            }
            d_density[offset + k] = g * dl[k];
        }
        offset += n;
    }
    (loss, params.backward_batch(&pass, &d_density, &d_color))
}
