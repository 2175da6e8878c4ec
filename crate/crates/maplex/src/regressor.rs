//! Hardware-aware latency regression.
//!
//! A small fully-connected network maps (architecture one-hot (+) counter
//! descriptor) to latency and is trained with per-sample importance
//! weights by seeded mini-batch gradient descent. Targets are regressed
//! in log space by default, which lines the squared loss up with the
//! relative error-bound metric; inputs are standardized with frozen
//! training-set statistics stored inside the model file.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archspace::{CellArchitecture, ONE_HOT_LEN};
use crate::dataset::{CounterVector, NUM_COUNTERS};
use crate::error::{Error, Result};

/// Length of the production feature vector: 30 one-hot + 10 counters.
pub const FEATURE_LEN: usize = ONE_HOT_LEN + NUM_COUNTERS;

/// A regression input: architecture one-hot followed by the device's raw
/// counter descriptor. Standardization happens inside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn assemble(arch: &CellArchitecture, counters: &CounterVector) -> FeatureVector {
        let mut values = Vec::with_capacity(FEATURE_LEN);
        values.extend_from_slice(&arch.one_hot());
        values.extend_from_slice(counters.values());
        FeatureVector(values)
    }

    /// Validating constructor for externally assembled vectors.
    pub fn from_raw(values: Vec<f64>) -> Result<FeatureVector> {
        if values.len() != FEATURE_LEN {
            return Err(Error::Validation(format!(
                "feature vector must have {FEATURE_LEN} entries, got {}",
                values.len()
            )));
        }
        let mut one_hot_sum = 0.0;
        for &v in &values[..ONE_HOT_LEN] {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation(
                    "first 30 feature entries must be 0 or 1".into(),
                ));
            }
            one_hot_sum += v;
        }
        if one_hot_sum != 6.0 {
            return Err(Error::Validation(format!(
                "one-hot block must sum to 6, got {one_hot_sum}"
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Output-space transform the network is trained in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetTransform {
    Log,
    Identity,
}

impl TargetTransform {
    fn apply(&self, y: f64) -> f64 {
        match self {
            TargetTransform::Log => y.ln(),
            TargetTransform::Identity => y,
        }
    }

    fn invert(&self, z: f64) -> f64 {
        match self {
            TargetTransform::Log => z.exp(),
            TargetTransform::Identity => z,
        }
    }

    pub fn parse(s: &str) -> Result<TargetTransform> {
        match s {
            "log" => Ok(TargetTransform::Log),
            "identity" => Ok(TargetTransform::Identity),
            other => Err(Error::Validation(format!(
                "unknown target transform '{other}' (expected log or identity)"
            ))),
        }
    }
}

/// Frozen per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Indices of zero-variance features whose std was pinned to 1.
    pub flagged_zero_variance: Vec<usize>,
}

impl Standardization {
    /// No-op transform of the given width.
    pub fn identity(dim: usize) -> Standardization {
        Standardization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            flagged_zero_variance: Vec::new(),
        }
    }

    /// Fit per-feature mean/std (population) over a sample set.
    pub fn fit(features: &[&[f64]]) -> Result<Standardization> {
        let Some(first) = features.first() else {
            return Err(Error::Validation(
                "cannot fit standardization on an empty sample set".into(),
            ));
        };
        let dim = first.len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in features {
            for (m, v) in mean.iter_mut().zip(*x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for x in features {
            for k in 0..dim {
                var[k] += (x[k] - mean[k]) * (x[k] - mean[k]) / n;
            }
        }
        let mut flagged = Vec::new();
        let std: Vec<f64> = var
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let s = v.sqrt();
                if s > 0.0 {
                    s
                } else {
                    flagged.push(k);
                    1.0
                }
            })
            .collect();
        Ok(Standardization {
            mean,
            std,
            flagged_zero_variance: flagged,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Network parameters plus everything needed to reproduce predictions:
/// layer shapes, row-major weights, standardization stats, target
/// transform, training seed and final loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Layer widths, input first, e.g. `[40, 128, 128, 1]`.
    pub layer_dims: Vec<usize>,
    /// Per layer, row-major `(out x in)`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub standardization: Standardization,
    pub target_transform: TargetTransform,
    pub train_seed: Option<u64>,
    pub final_loss: Option<f64>,
}

impl ModelParams {
    /// Seeded He-normal initialization; biases start at zero.
    pub fn init(
        layer_dims: &[usize],
        standardization: Standardization,
        target_transform: TargetTransform,
        seed: u64,
    ) -> Result<ModelParams> {
        if layer_dims.len() < 2 {
            return Err(Error::Validation(
                "layer_dims needs at least input and output widths".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for l in 0..layer_dims.len() - 1 {
            let fan_in = layer_dims[l];
            let fan_out = layer_dims[l + 1];
            let gain = if l + 2 == layer_dims.len() { 1.0 } else { 2.0 };
            let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).unwrap();
            weights.push((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        let params = ModelParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            standardization,
            target_transform,
            train_seed: None,
            final_loss: None,
        };
        params.validate()?;
        Ok(params)
    }

    /// Check dimension chaining and standardization shape.
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Validation("layer_dims too short".into()));
        }
        let n_layers = self.layer_dims.len() - 1;
        if self.weights.len() != n_layers || self.biases.len() != n_layers {
            return Err(Error::Validation(format!(
                "expected {n_layers} weight/bias layers, got {}/{}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if self.weights[l].len() != fan_in * fan_out {
                return Err(Error::Validation(format!(
                    "layer {l}: expected {}x{} weights, got {}",
                    fan_out,
                    fan_in,
                    self.weights[l].len()
                )));
            }
            if self.biases[l].len() != fan_out {
                return Err(Error::Validation(format!(
                    "layer {l}: expected {fan_out} biases, got {}",
                    self.biases[l].len()
                )));
            }
        }
        let input_dim = self.layer_dims[0];
        if self.standardization.mean.len() != input_dim
            || self.standardization.std.len() != input_dim
        {
            return Err(Error::Validation(
                "standardization stats do not match the input width".into(),
            ));
        }
        if self.standardization.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation(
                "standardization stds must be positive".into(),
            ));
        }
        if *self.layer_dims.last().unwrap() != 1 {
            return Err(Error::Validation(
                "the output layer must have width 1".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

/// One weighted training sample.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub features: Vec<f64>,
    pub label_ms: f64,
    pub weight: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Decoupled weight decay on weight matrices (biases exempt).
    pub weight_decay: f64,
    pub hidden_dims: Vec<usize>,
    pub target_transform: TargetTransform,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 64,
            seed: 0,
            weight_decay: 0.0,
            hidden_dims: vec![128, 128],
            target_transform: TargetTransform::Log,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Validation("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Forward pass on raw (unstandardized) input, returning latency in ms.
///
/// Hidden layers use rectified-linear activations, the output is linear
/// in transformed space and inverse-transformed before returning.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<f64> {
    let z = forward_transformed(params, x)?;
    let y = params.target_transform.invert(z);
    if !y.is_finite() {
        return Err(Error::Numerical(format!(
            "prediction overflowed the target transform (pre-image {z})"
        )));
    }
    Ok(y)
}

/// Forward pass returning the transformed-space output.
pub fn forward_transformed(params: &ModelParams, x: &[f64]) -> Result<f64> {
    if x.len() != params.input_dim() {
        return Err(Error::Validation(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let standardized = params.standardization.apply(x);
    Ok(forward_standardized(params, &standardized).1)
}

/// Core chain on an already-standardized input. Returns all layer
/// activations (input included) and the scalar output.
fn forward_standardized(params: &ModelParams, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(params.layer_dims.len());
    activations.push(x.to_vec());
    for l in 0..params.n_layers() {
        let fan_in = params.layer_dims[l];
        let input = &activations[l];
        let w = &params.weights[l];
        let mut out = params.biases[l].clone();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(input.iter()) {
                acc += wi * xi;
            }
            *o += acc;
            if l + 1 < params.n_layers() {
                *o = o.max(0.0);
            }
        }
        activations.push(out);
    }
    let z = activations.last().unwrap()[0];
    (activations, z)
}

/// Weighted mean squared error in transformed target space:
/// `Σ w_i (z_i - t(y_i))^2 / Σ w_i`.
pub fn weighted_loss(params: &ModelParams, samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation("loss over an empty sample set".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let z = forward_transformed(params, &s.features)?;
        let t = params.target_transform.apply(s.label_ms);
        num += s.weight * (z - t) * (z - t);
        den += s.weight;
    }
    if den <= 0.0 {
        return Err(Error::Validation("total sample weight must be positive".into()));
    }
    Ok(num / den)
}

/// Gradient of [`weighted_loss`] with respect to every weight and bias,
/// laid out like `params.weights` / `params.biases`.
pub fn loss_gradient(
    params: &ModelParams,
    samples: &[TrainingSample],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut grad_w: Vec<Vec<f64>> = params.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = params.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let total_weight: f64 = samples.iter().map(|s| s.weight).sum();
    if total_weight <= 0.0 {
        return Err(Error::Validation("total sample weight must be positive".into()));
    }
    for s in samples {
        if s.features.len() != params.input_dim() {
            return Err(Error::Validation(format!(
                "input has {} features, model expects {}",
                s.features.len(),
                params.input_dim()
            )));
        }
        let x = params.standardization.apply(&s.features);
        let (activations, z) = forward_standardized(params, &x);
        let t = params.target_transform.apply(s.label_ms);
        // d(loss)/dz for this sample
        let mut delta = vec![2.0 * s.weight * (z - t) / total_weight];
        for l in (0..params.n_layers()).rev() {
            let fan_in = params.layer_dims[l];
            let fan_out = params.layer_dims[l + 1];
            let input = &activations[l];
            let w = &params.weights[l];
            for j in 0..fan_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                grad_b[l][j] += d;
                let row = &mut grad_w[l][j * fan_in..(j + 1) * fan_in];
                for (g, xi) in row.iter_mut().zip(input.iter()) {
                    *g += d * xi;
                }
            }
            if l > 0 {
                // propagate through the rectifier of layer l-1's output
                let mut prev = vec![0.0; fan_in];
                for j in 0..fan_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    for (p, wi) in prev.iter_mut().zip(row.iter()) {
                        *p += d * wi;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    Ok((grad_w, grad_b))
}

/// Train a regressor by seeded mini-batch gradient descent on the
/// weighted transformed-space squared error. Deterministic for a fixed
/// seed and sample order; integer weights are equivalent to sample
/// replication at the loss level.
pub fn train(samples: &[TrainingSample], cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation("cannot train on an empty sample set".into()));
    }
    let input_dim = samples[0].features.len();
    for s in samples {
        if s.features.len() != input_dim {
            return Err(Error::Validation("inconsistent feature lengths".into()));
        }
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(Error::Validation(format!(
                "sample weights must be strictly positive, got {}",
                s.weight
            )));
        }
        if !(s.label_ms.is_finite() && s.label_ms > 0.0) {
            return Err(Error::Validation(format!(
                "latency labels must be strictly positive, got {}",
                s.label_ms
            )));
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
    }

    let feature_views: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
    let standardization = Standardization::fit(&feature_views)?;

    let mut layer_dims = Vec::with_capacity(cfg.hidden_dims.len() + 2);
    layer_dims.push(input_dim);
    layer_dims.extend_from_slice(&cfg.hidden_dims);
    layer_dims.push(1);

    let mut params = ModelParams::init(&layer_dims, standardization, cfg.target_transform, cfg.seed)?;

    // Start the output bias at the weighted mean target so the first
    // epochs refine shape instead of hunting for the level.
    let total_weight: f64 = samples.iter().map(|s| s.weight).sum();
    let mean_target: f64 = samples
        .iter()
        .map(|s| s.weight * cfg.target_transform.apply(s.label_ms))
        .sum::<f64>()
        / total_weight;
    *params.biases.last_mut().unwrap().last_mut().unwrap() = mean_target;

    // Standardize once; training then runs with identity stats.
    let mut work = params.clone();
    work.standardization = Standardization::identity(input_dim);
    let standardized: Vec<TrainingSample> = samples
        .iter()
        .map(|s| TrainingSample {
            features: params.standardization.apply(&s.features),
            label_ms: s.label_ms,
            weight: s.weight,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..standardized.len()).collect();
    let mut batch: Vec<TrainingSample> = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| standardized[i].clone()));
            let (grad_w, grad_b) = loss_gradient(&work, &batch)?;
            let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
            let mut finite = true;
            for l in 0..work.weights.len() {
                for (w, g) in work.weights[l].iter_mut().zip(&grad_w[l]) {
                    *w = *w * decay - cfg.learning_rate * g;
                    finite &= w.is_finite();
                }
                for (b, g) in work.biases[l].iter_mut().zip(&grad_b[l]) {
                    *b -= cfg.learning_rate * g;
                    finite &= b.is_finite();
                }
            }
            if !finite {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {epoch}: non-finite parameters; try a smaller learning_rate"
                )));
            }
        }
    }

    let final_loss = weighted_loss(&work, &standardized)?;
    if !final_loss.is_finite() {
        return Err(Error::Numerical(
            "training diverged: non-finite loss; try a smaller learning_rate".into(),
        ));
    }

    params.weights = work.weights;
    params.biases = work.biases;
    params.train_seed = Some(cfg.seed);
    params.final_loss = Some(final_loss);
    Ok(params)
}

/// Compare analytic gradients against central finite differences of the
/// weighted loss on a seeded subsample of parameter coordinates; returns
/// the worst relative discrepancy.
pub fn gradient_check(
    params: &ModelParams,
    samples: &[TrainingSample],
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Validation("step must be positive".into()));
    }
    let (grad_w, grad_b) = loss_gradient(params, samples)?;

    // (layer, is_bias, flat index)
    let mut coords: Vec<(usize, bool, usize)> = Vec::new();
    for l in 0..params.weights.len() {
        coords.extend((0..params.weights[l].len()).map(|i| (l, false, i)));
        coords.extend((0..params.biases[l].len()).map(|i| (l, true, i)));
    }
    const MAX_COORDS: usize = 80;
    let picked: Vec<(usize, bool, usize)> = if coords.len() > MAX_COORDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, coords.len(), MAX_COORDS)
            .iter()
            .map(|i| coords[i])
            .collect()
    } else {
        coords
    };

    let mut worst = 0.0f64;
    let mut perturbed = params.clone();
    for (l, is_bias, i) in picked {
        let analytic = if is_bias { grad_b[l][i] } else { grad_w[l][i] };
        let original = if is_bias {
            perturbed.biases[l][i]
        } else {
            perturbed.weights[l][i]
        };
        let eval_at = |v: f64, model: &mut ModelParams| -> Result<f64> {
            if is_bias {
                model.biases[l][i] = v;
            } else {
                model.weights[l][i] = v;
            }
            weighted_loss(model, samples)
        };
        let plus = eval_at(original + step, &mut perturbed)?;
        let minus = eval_at(original - step, &mut perturbed)?;
        eval_at(original, &mut perturbed)?;
        let numeric = (plus - minus) / (2.0 * step);
        let denom = (analytic.abs() + numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Serialize a model to JSON.
pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    params.validate()?;
    let json = serde_json::to_string_pretty(params)
        .map_err(|e| Error::Validation(format!("cannot serialize model: {e}")))?;
    crate::dataset::write_atomic(path.as_ref(), format!("{json}\n").as_bytes())
}

/// Load a model saved by [`save_model`]. Predictions round-trip
/// bit-identically.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let params: ModelParams = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    params.validate()?;
    Ok(params)
}
