//! Image-quality metrics for rendered views.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radiance::ImageBuffer;

/// Returned for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image is {0}x{1}; SSIM needs at least 11x11")]
    TooSmall(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

fn same_size(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// `10·log10(1/MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let sse: f64 = a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y) * (x - y)).sum();
    let mse = sse / a.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn luma(img: &ImageBuffer) -> Vec<f64> {
    img.pixels
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

fn gaussian_window() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Mean SSIM on luma over every fully contained 11×11 Gaussian window.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    same_size(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < WINDOW || h < WINDOW {
        return Err(MetricError::TooSmall(w, h));
    }
    let (la, lb) = (luma(a), luma(b));
    let g = gaussian_window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let row_sums: Vec<f64> = (0..=h - WINDOW)
        .into_par_iter()
        .map(|y0| {
            let mut acc = 0.0;
            for x0 in 0..=w - WINDOW {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, gy) in g.iter().enumerate() {
                    let row = (y0 + dy) * w + x0;
                    for (dx, gx) in g.iter().enumerate() {
                        let wt = gy * gx;
                        let (va, vb) = (la[row + dx], lb[row + dx]);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            }
            acc
        })
        .collect();
    let count = ((w - WINDOW + 1) * (h - WINDOW + 1)) as f64;
    Ok(row_sums.iter().sum::<f64>() / count)
}

pub fn evaluate(reference: &ImageBuffer, test: &ImageBuffer) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        psnr_db: psnr(reference, test)?,
        ssim: ssim(reference, test)?,
    })
}
