//! The radiance MLP: encoded position → trunk → density, and trunk feature
//! plus encoded direction → color.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encode_into, positional_encode, EncodingConfig};
use super::RadianceError;
use crate::geometry::{Point3, UnitVec3};

/// Emitted color (each channel in `[0, 1]`) and volume density (per mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadianceSample {
    pub color: [f64; 3],
    pub density: f64,
}

/// Axis-aligned box mapped onto `[-1, 1]³` before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, RadianceError> {
        if (0..3).any(|i| !(min[i].is_finite() && max[i].is_finite() && max[i] > min[i])) {
            return Err(RadianceError::InvalidConfig(
                "scene bounds must satisfy min < max".into(),
            ));
        }
        Ok(Self { min, max })
    }

    pub fn normalize(&self, p: &Point3) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = 2.0 * (p[i] - self.min[i]) / (self.max[i] - self.min[i]) - 1.0;
        }
        out
    }

    pub fn center(&self) -> Point3 {
        Point3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }
}

/// Hidden sizes of the network. The encoding fixes the input widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub color_width: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            trunk_width: 64,
            trunk_depth: 4,
            color_width: 64,
        }
    }
}

/// Fully connected layer computing `x·W + b` for row vectors `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `inputs × outputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Network weights Θ plus the encoding and normalization they were trained
/// with. Layers are stored trunk first, then the density head, then the
/// color hidden and output layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParameters {
    pub encoding: EncodingConfig,
    pub bounds: SceneBounds,
    pub layers: Vec<DenseLayer>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl FieldParameters {
    pub fn zeros(encoding: EncodingConfig, bounds: SceneBounds, arch: Architecture) -> Self {
        let mut layers = Vec::with_capacity(arch.trunk_depth + 3);
        let mut inputs = encoding.position_dim();
        for _ in 0..arch.trunk_depth {
            layers.push(DenseLayer::zeros(inputs, arch.trunk_width));
            inputs = arch.trunk_width;
        }
        layers.push(DenseLayer::zeros(inputs, 1));
        layers.push(DenseLayer::zeros(
            inputs + encoding.direction_dim(),
            arch.color_width,
        ));
        layers.push(DenseLayer::zeros(arch.color_width, 3));
        Self {
            encoding,
            bounds,
            layers,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(encoding: EncodingConfig, bounds: SceneBounds, arch: Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(encoding, bounds, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let limit = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            layer
                .weights
                .mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        params
    }

    /// Sets the density head bias, the pre-softplus density offset of the
    /// untrained field.
    pub fn with_density_bias(mut self, bias: f64) -> Self {
        let d = self.trunk_depth();
        self.layers[d].bias.fill(bias);
        self
    }

    pub fn trunk_depth(&self) -> usize {
        self.layers.len().saturating_sub(3)
    }

    pub fn trunk(&self) -> &[DenseLayer] {
        &self.layers[..self.trunk_depth()]
    }

    pub fn density_head(&self) -> &DenseLayer {
        &self.layers[self.trunk_depth()]
    }

    pub fn color_hidden(&self) -> &DenseLayer {
        &self.layers[self.trunk_depth() + 1]
    }

    pub fn color_output(&self) -> &DenseLayer {
        &self.layers[self.trunk_depth() + 2]
    }

    /// Checks that layer shapes chain and all values are finite.
    pub fn validate(&self) -> Result<(), RadianceError> {
        let mismatch = |what: String| Err(RadianceError::DimensionMismatch(what));
        if self.layers.len() < 4 {
            return mismatch(format!("expected at least 4 layers, got {}", self.layers.len()));
        }
        let mut width = self.encoding.position_dim();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return mismatch(format!("layer {i}: bias length {} != {}", layer.bias.len(), layer.outputs()));
            }
            if !layer.weights.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(RadianceError::InvalidConfig(format!("layer {i} has non-finite values")));
            }
        }
        for (i, layer) in self.trunk().iter().enumerate() {
            if layer.inputs() != width {
                return mismatch(format!("trunk layer {i}: {} inputs, expected {width}", layer.inputs()));
            }
            width = layer.outputs();
        }
        if self.density_head().inputs() != width || self.density_head().outputs() != 1 {
            return mismatch("density head must map trunk width to 1".into());
        }
        let color_in = width + self.encoding.direction_dim();
        if self.color_hidden().inputs() != color_in {
            return mismatch(format!(
                "color layer takes {} inputs, expected {color_in}",
                self.color_hidden().inputs()
            ));
        }
        if self.color_output().inputs() != self.color_hidden().outputs()
            || self.color_output().outputs() != 3
        {
            return mismatch("color output must map color width to 3".into());
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Every weight then bias, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoding: self.encoding,
            bounds: self.bounds,
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.bias.scaled_add(scale, &b.bias);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Density at a world-frame point (mm).
    pub fn density_at(&self, x: &Point3) -> f64 {
        let enc = positional_encode(&self.bounds.normalize(x), self.encoding.position_frequencies);
        let feature = self.trunk_feature(&enc);
        softplus(dense_row(self.density_head(), &feature)[0])
    }

    fn trunk_feature(&self, enc: &[f64]) -> Vec<f64> {
        let mut h = enc.to_vec();
        for layer in self.trunk() {
            h = dense_row(layer, &h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h
    }
}

fn dense_row(layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    let mut out = layer.bias.to_vec();
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        for (o, w) in out.iter_mut().zip(layer.weights.row(i)) {
            *o += xi * w;
        }
    }
    out
}

/// Evaluates the field at a normalized position `x ∈ [-1, 1]³` looking along
/// `d`. Density ignores `d`.
pub fn field_eval(
    params: &FieldParameters,
    x: &[f64; 3],
    d: &UnitVec3,
) -> Result<RadianceSample, RadianceError> {
    params.validate()?;
    Ok(eval_unchecked(params, x, d))
}

pub(crate) fn eval_unchecked(params: &FieldParameters, x: &[f64; 3], d: &UnitVec3) -> RadianceSample {
    let enc_x = positional_encode(x, params.encoding.position_frequencies);
    let feature = params.trunk_feature(&enc_x);
    let density = softplus(dense_row(params.density_head(), &feature)[0]);
    let mut color_in = feature;
    color_in.extend(positional_encode(
        &[d.x, d.y, d.z],
        params.encoding.direction_frequencies,
    ));
    let mut hidden = dense_row(params.color_hidden(), &color_in);
    hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    let raw = dense_row(params.color_output(), &hidden);
    RadianceSample {
        color: [sigmoid(raw[0]), sigmoid(raw[1]), sigmoid(raw[2])],
        density,
    }
}

/// Activations of a batched forward pass, kept for backpropagation.
///
/// Rows are samples; `ray_of[n]` names the ray a sample belongs to so the
/// direction encoding can be shared by every sample on a ray.
pub(crate) struct ForwardPass {
    enc_x: Array2<f64>,
    trunk_out: Vec<Array2<f64>>,
    density_raw: Array1<f64>,
    pub density: Array1<f64>,
    enc_d: Array2<f64>,
    ray_of: Vec<usize>,
    color_hidden: Array2<f64>,
    /// Post-sigmoid colors, `samples × 3`.
    pub color: Array2<f64>,
}

impl FieldParameters {
    /// Batched forward pass. `positions` are world-frame points, `directions`
    /// one per ray, and `ray_of` maps each position to its ray.
    pub(crate) fn forward_batch(
        &self,
        positions: &[Point3],
        directions: &[UnitVec3],
        ray_of: &[usize],
    ) -> ForwardPass {
        let n = positions.len();
        let px = self.encoding.position_dim();
        let mut enc_x = Array2::zeros((n, px));
        for (row, p) in enc_x.outer_iter_mut().zip(positions) {
            encode_into(
                &self.bounds.normalize(p),
                self.encoding.position_frequencies,
                row.into_slice().expect("standard layout"),
            );
        }
        let dd = self.encoding.direction_dim();
        let mut enc_d = Array2::zeros((directions.len(), dd));
        for (row, d) in enc_d.outer_iter_mut().zip(directions) {
            encode_into(
                &[d.x, d.y, d.z],
                self.encoding.direction_frequencies,
                row.into_slice().expect("standard layout"),
            );
        }

        let mut trunk_out: Vec<Array2<f64>> = Vec::with_capacity(self.trunk_depth());
        for layer in self.trunk() {
            let input = trunk_out.last().map_or(enc_x.view(), |a| a.view());
            let mut h = layer.forward(input);
            h.mapv_inplace(|v| v.max(0.0));
            trunk_out.push(h);
        }
        let feature = trunk_out.last().expect("trunk has layers");
        let density_raw = self.density_head().forward(feature.view()).column(0).to_owned();
        let density = density_raw.mapv(softplus);

        let width = feature.ncols();
        let ch = self.color_hidden();
        let mut color_hidden = feature.dot(&ch.weights.slice(s![..width, ..]));
        let per_ray = enc_d.dot(&ch.weights.slice(s![width.., ..])) + &ch.bias;
        for (mut row, &r) in color_hidden.outer_iter_mut().zip(ray_of) {
            row += &per_ray.row(r);
            row.mapv_inplace(|v| v.max(0.0));
        }
        let color = self.color_output().forward(color_hidden.view()).mapv(sigmoid);

        ForwardPass {
            enc_x,
            trunk_out,
            density_raw,
            density,
            enc_d,
            ray_of: ray_of.to_vec(),
            color_hidden,
            color,
        }
    }

    /// Backpropagates `∂L/∂σ` and `∂L/∂c` (post-activation) through the
    /// network, returning parameter gradients.
    pub(crate) fn backward_batch(
        &self,
        pass: &ForwardPass,
        d_density: &Array1<f64>,
        d_color: &Array2<f64>,
    ) -> FieldParameters {
        let mut grad = self.zeros_like();
        let depth = self.trunk_depth();

        // Color output layer (sigmoid).
        let d_color_raw = d_color * &pass.color.mapv(|c| c * (1.0 - c));
        grad.layers[depth + 2].weights = pass.color_hidden.t().dot(&d_color_raw);
        grad.layers[depth + 2].bias = d_color_raw.sum_axis(Axis(0));

        // Color hidden layer (ReLU). Inputs are [trunk feature | enc_d(ray)].
        let mut d_hidden = d_color_raw.dot(&self.color_output().weights.t());
        ndarray::Zip::from(&mut d_hidden)
            .and(&pass.color_hidden)
            .for_each(|g, &h| {
                if h <= 0.0 {
                    *g = 0.0
                }
            });
        let feature = pass.trunk_out.last().expect("trunk has layers");
        let width = feature.ncols();
        let mut d_per_ray = Array2::<f64>::zeros((pass.enc_d.nrows(), d_hidden.ncols()));
        for (row, &r) in d_hidden.outer_iter().zip(&pass.ray_of) {
            let mut acc = d_per_ray.row_mut(r);
            acc += &row;
        }
        {
            let g = &mut grad.layers[depth + 1];
            g.weights
                .slice_mut(s![..width, ..])
                .assign(&feature.t().dot(&d_hidden));
            g.weights
                .slice_mut(s![width.., ..])
                .assign(&pass.enc_d.t().dot(&d_per_ray));
            g.bias = d_hidden.sum_axis(Axis(0));
        }
        let mut d_feature = d_hidden.dot(&self.color_hidden().weights.slice(s![..width, ..]).t());

        // Density head (softplus' = sigmoid).
        let d_raw = d_density * &pass.density_raw.mapv(sigmoid);
        let d_raw_col = d_raw.view().insert_axis(Axis(1));
        grad.layers[depth].weights = feature.t().dot(&d_raw_col);
        grad.layers[depth].bias = Array1::from_elem(1, d_raw.sum());
        d_feature += &d_raw_col.dot(&self.density_head().weights.t());

        // Trunk (ReLU).
        let mut d_out = d_feature;
        for i in (0..depth).rev() {
            ndarray::Zip::from(&mut d_out)
                .and(&pass.trunk_out[i])
                .for_each(|g, &h| {
                    if h <= 0.0 {
                        *g = 0.0
                    }
                });
            let input = if i == 0 {
                pass.enc_x.view()
            } else {
                pass.trunk_out[i - 1].view()
            };
            grad.layers[i].weights = input.t().dot(&d_out);
            grad.layers[i].bias = d_out.sum_axis(Axis(0));
            if i > 0 {
                d_out = d_out.dot(&self.layers[i].weights.t());
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Unit, Vector3};

    pub(crate) fn unit_bounds() -> SceneBounds {
        SceneBounds::new([-1.0; 3], [1.0; 3]).unwrap()
    }

    fn dir(x: f64, y: f64, z: f64) -> UnitVec3 {
        Unit::new_normalize(Vector3::new(x, y, z))
    }

    #[test]
    fn zero_weights_give_activation_at_zero() {
        let params = FieldParameters::zeros(EncodingConfig::default(), unit_bounds(), Architecture::default());
        let s = field_eval(&params, &[0.3, -0.2, 0.9], &dir(0.0, 0.0, 1.0)).unwrap();
        assert!((s.density - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s.color, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn density_bias_shifts_the_zero_field() {
        let params = FieldParameters::zeros(EncodingConfig::default(), unit_bounds(), Architecture::default())
            .with_density_bias(-5.0);
        let s = field_eval(&params, &[0.3, -0.2, 0.9], &dir(0.0, 0.0, 1.0)).unwrap();
        assert!((s.density - softplus(-5.0)).abs() < 1e-15);
        assert_eq!(s.color, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn density_ignores_direction() {
        let params = FieldParameters::init(EncodingConfig::default(), unit_bounds(), Architecture::default(), 4);
        let x = [0.1, 0.5, -0.4];
        let d = dir(0.2, -0.3, 0.9);
        let a = field_eval(&params, &x, &d).unwrap();
        let b = field_eval(&params, &x, &(-d)).unwrap();
        assert_eq!(a.density, b.density);
        assert_ne!(a.color, b.color);
    }

    #[test]
    fn forward_matches_matrix_by_matrix_oracle() {
        let enc = EncodingConfig::default();
        let params = FieldParameters::init(enc, unit_bounds(), Architecture::default(), 9);
        let x = [0.25, -0.6, 0.05];
        let d = dir(-0.4, 0.1, 0.8);
        let got = field_eval(&params, &x, &d).unwrap();

        // Layer loop over explicit nalgebra matrices.
        let to_na = |l: &DenseLayer| {
            (
                nalgebra::DMatrix::from_fn(l.inputs(), l.outputs(), |r, c| l.weights[(r, c)]),
                nalgebra::DVector::from_iterator(l.outputs(), l.bias.iter().copied()),
            )
        };
        let relu = |v: nalgebra::DVector<f64>| v.map(|e| e.max(0.0));
        let mut h = nalgebra::DVector::from_vec(positional_encode(&x, 6));
        for layer in params.trunk() {
            let (w, b) = to_na(layer);
            h = relu(w.transpose() * h + b);
        }
        let (wd, bd) = to_na(params.density_head());
        let sigma_raw = (wd.transpose() * &h + bd)[0];
        let mut cin: Vec<f64> = h.iter().copied().collect();
        cin.extend(positional_encode(&[d.x, d.y, d.z], 4));
        let (w1, b1) = to_na(params.color_hidden());
        let c1 = relu(w1.transpose() * nalgebra::DVector::from_vec(cin) + b1);
        let (w2, b2) = to_na(params.color_output());
        let raw = w2.transpose() * c1 + b2;

        assert!((got.density - (1.0 + sigma_raw.exp()).ln()).abs() < 1e-12);
        for c in 0..3 {
            assert!((got.color[c] - 1.0 / (1.0 + (-raw[c]).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_forward_matches_scalar_path() {
        let bounds = SceneBounds::new([-100.0, -120.0, -140.0], [100.0, 120.0, 140.0]).unwrap();
        let params = FieldParameters::init(EncodingConfig::default(), bounds, Architecture::default(), 1);
        let positions = vec![
            Point3::new(10.0, -20.0, 30.0),
            Point3::new(-50.0, 60.0, 0.0),
            Point3::new(99.0, 0.0, -139.0),
        ];
        let dirs = vec![dir(0.0, 0.0, 1.0), dir(1.0, 1.0, 0.0)];
        let ray_of = vec![0, 1, 1];
        let pass = params.forward_batch(&positions, &dirs, &ray_of);
        for (i, p) in positions.iter().enumerate() {
            let s = field_eval(&params, &bounds.normalize(p), &dirs[ray_of[i]]).unwrap();
            assert!((s.density - pass.density[i]).abs() < 1e-12);
            for c in 0..3 {
                assert!((s.color[c] - pass.color[(i, c)]).abs() < 1e-12);
            }
            assert!((params.density_at(p) - s.density).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut params = FieldParameters::zeros(EncodingConfig::default(), unit_bounds(), Architecture::default());
        params.layers[1] = DenseLayer::zeros(63, 64);
        assert!(matches!(
            field_eval(&params, &[0.0; 3], &dir(0.0, 0.0, 1.0)),
            Err(RadianceError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert_eq!(softplus(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn glorot_limits_hold() {
        let params = FieldParameters::init(EncodingConfig::default(), unit_bounds(), Architecture::default(), 0);
        for l in &params.layers {
            let limit = (6.0 / (l.inputs() + l.outputs()) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= limit));
            assert!(l.bias.iter().all(|b| *b == 0.0));
        }
        assert_eq!(params, FieldParameters::init(EncodingConfig::default(), unit_bounds(), Architecture::default(), 0));
    }
}
