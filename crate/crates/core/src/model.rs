//! The sampling prior: a one-layer 1D convolutional classifier over padded
//! pair-vector sequences.
//!
//! Architecture: 9 filters of width 10 (pairs) x 6 (channels), bias and ReLU
//! per window position, global max-pool per filter, then a 9 -> 1 affine map
//! into a sigmoid.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{featurize, DEFAULT_MAX_PAIRS, PAIR_WIDTH};
use crate::ir::Program;
use crate::search::Prior;

pub const FILTERS: usize = 9;
pub const WINDOW: usize = 10;
/// Weights per filter.
pub const KERNEL: usize = WINDOW * PAIR_WIDTH;
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Prior returned for programs too large for the model's input.
pub const PRIOR_FLOOR: f64 = 0.01;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} values, model expects {want}")]
    Shape { got: usize, want: usize },
    #[error("max_pairs = {0} is smaller than the convolution window")]
    TooShort(usize),
    #[error("non-finite training loss at epoch {epoch} (last finite loss {last:?})")]
    NonFiniteLoss { epoch: usize, last: Option<f64> },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("malformed model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub max_pairs: usize,
    /// `FILTERS` rows of `KERNEL` weights; index `k * 6 + c` is window
    /// offset `k`, channel `c`.
    pub conv_weights: Vec<Vec<f64>>,
    pub conv_bias: Vec<f64>,
    pub out_weights: Vec<f64>,
    pub out_bias: f64,
}

impl ModelParams {
    pub fn zeros(max_pairs: usize) -> Self {
        ModelParams {
            max_pairs,
            conv_weights: vec![vec![0.0; KERNEL]; FILTERS],
            conv_bias: vec![0.0; FILTERS],
            out_weights: vec![0.0; FILTERS],
            out_bias: 0.0,
        }
    }

    /// Every parameter uniform in `[-0.1, 0.1]`.
    pub fn random(max_pairs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(max_pairs);
        let flat: Vec<f64> = (0..p.len()).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        p.set_flat(&flat);
        p
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        FILTERS * KERNEL + FILTERS + FILTERS + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_len(&self) -> usize {
        self.max_pairs * PAIR_WIDTH
    }

    pub fn positions(&self) -> usize {
        self.max_pairs + 1 - WINDOW
    }

    /// Conv weights row-major, conv biases, output weights, output bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for row in &self.conv_weights {
            v.extend_from_slice(row);
        }
        v.extend_from_slice(&self.conv_bias);
        v.extend_from_slice(&self.out_weights);
        v.push(self.out_bias);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut it = flat.iter().copied();
        for row in &mut self.conv_weights {
            for w in row.iter_mut() {
                *w = it.next().unwrap();
            }
        }
        for b in &mut self.conv_bias {
            *b = it.next().unwrap();
        }
        for w in &mut self.out_weights {
            *w = it.next().unwrap();
        }
        self.out_bias = it.next().unwrap();
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    fn check_shapes(&self) -> Result<(), ModelError> {
        let ok = self.conv_weights.len() == FILTERS
            && self.conv_weights.iter().all(|r| r.len() == KERNEL)
            && self.conv_bias.len() == FILTERS
            && self.out_weights.len() == FILTERS;
        if !ok {
            return Err(ModelError::Format("parameter shapes do not match 9 x (10 x 6) conv + 9 -> 1 output".into()));
        }
        if self.max_pairs < WINDOW {
            return Err(ModelError::TooShort(self.max_pairs));
        }
        Ok(())
    }

    /// Text model file (JSON) with shapes and a format version.
    pub fn to_model_file(&self) -> String {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            filters: FILTERS,
            window: WINDOW,
            channels: PAIR_WIDTH,
            params: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_model_file(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported format version {}",
                file.format_version
            )));
        }
        if (file.filters, file.window, file.channels) != (FILTERS, WINDOW, PAIR_WIDTH) {
            return Err(ModelError::Format("architecture mismatch".into()));
        }
        file.params.check_shapes()?;
        if !file.params.is_finite() {
            return Err(ModelError::Format("non-finite parameter".into()));
        }
        Ok(file.params)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    filters: usize,
    window: usize,
    channels: usize,
    #[serde(flatten)]
    params: ModelParams,
}

/// Intermediate values kept for back-propagation.
struct Trace {
    pooled: [f64; FILTERS],
    /// Window position achieving each filter's max (first on ties).
    argmax: [usize; FILTERS],
    /// Pre-activation at the argmax position.
    pre: [f64; FILTERS],
    logit: f64,
}

fn trace(params: &ModelParams, x: &[f64]) -> Result<Trace, ModelError> {
    params.check_shapes()?;
    if x.len() != params.input_len() {
        return Err(ModelError::Shape {
            got: x.len(),
            want: params.input_len(),
        });
    }
    let mut pooled = [f64::NEG_INFINITY; FILTERS];
    let mut argmax = [0; FILTERS];
    let mut pre = [0.0; FILTERS];
    // Rows are mostly zero padding; summing only the nonzero entries in
    // index order gives the same value as the dense dot product.
    let nonzero: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    let (mut lo, mut hi) = (0, 0);
    for p in 0..params.positions() {
        let start = p * PAIR_WIDTH;
        while lo < nonzero.len() && nonzero[lo] < start {
            lo += 1;
        }
        hi = hi.max(lo);
        while hi < nonzero.len() && nonzero[hi] < start + KERNEL {
            hi += 1;
        }
        let active = &nonzero[lo..hi];
        for f in 0..FILTERS {
            let w = &params.conv_weights[f];
            let dot: f64 = active.iter().map(|&i| w[i - start] * x[i]).sum();
            let z = params.conv_bias[f] + dot;
            let h = z.max(0.0);
            if h > pooled[f] {
                pooled[f] = h;
                argmax[f] = p;
                pre[f] = z;
            }
        }
    }
    let logit = params.out_bias
        + params
            .out_weights
            .iter()
            .zip(&pooled)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    Ok(Trace {
        pooled,
        argmax,
        pre,
        logit,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, computed from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Probability that `x` is an outsized-utility state.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<f64, ModelError> {
    Ok(sigmoid(trace(params, x)?.logit))
}

/// The max-pooled filter activations feeding the output neuron.
pub fn pooled(params: &ModelParams, x: &[f64]) -> Result<[f64; FILTERS], ModelError> {
    Ok(trace(params, x)?.pooled)
}

/// Cross-entropy loss of one example and its gradient, flat in
/// [`ModelParams::to_flat`] order.
pub fn loss_and_gradient(params: &ModelParams, x: &[f64], y: f64) -> Result<(f64, Vec<f64>), ModelError> {
    let t = trace(params, x)?;
    let loss = bce_from_logit(t.logit, y);
    let d_logit = sigmoid(t.logit) - y;

    let mut grad = vec![0.0; params.len()];
    let bias_off = FILTERS * KERNEL;
    let out_off = bias_off + FILTERS;
    for f in 0..FILTERS {
        grad[out_off + f] = d_logit * t.pooled[f];
        let d_pooled = d_logit * params.out_weights[f];
        // ReLU passes gradient only for strictly positive pre-activations.
        if t.pre[f] > 0.0 {
            let start = t.argmax[f] * PAIR_WIDTH;
            let window = &x[start..start + KERNEL];
            for (k, xv) in window.iter().enumerate() {
                grad[f * KERNEL + k] = d_pooled * xv;
            }
            grad[bias_off + f] = d_pooled;
        }
    }
    grad[out_off + FILTERS] = d_logit;
    Ok((loss, grad))
}

pub fn gradient(params: &ModelParams, x: &[f64], y: f64) -> Vec<f64> {
    loss_and_gradient(params, x, y)
        .expect("shape-checked input")
        .1
}

pub fn loss(params: &ModelParams, x: &[f64], y: f64) -> Result<f64, ModelError> {
    Ok(bce_from_logit(trace(params, x)?.logit, y))
}

/// Max relative discrepancy between the analytic gradient and central
/// finite differences (step `1e-5 * max(|theta|, 1)`).
pub fn grad_check(params: &ModelParams, x: &[f64], y: f64) -> f64 {
    grad_check_with(params, x, y, gradient)
}

/// [`grad_check`] against an arbitrary gradient routine.
pub fn grad_check_with<G>(params: &ModelParams, x: &[f64], y: f64, grad_fn: G) -> f64
where
    G: Fn(&ModelParams, &[f64], f64) -> Vec<f64>,
{
    let analytic = grad_fn(params, x, y);
    let base = params.to_flat();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let h = 1e-5 * base[i].abs().max(1.0);
        let mut theta = base.clone();
        theta[i] = base[i] + h;
        probe.set_flat(&theta);
        let up = loss(&probe, x, y).expect("shape-checked input");
        theta[i] = base[i] - h;
        probe.set_flat(&theta);
        let down = loss(&probe, x, y).expect("shape-checked input");
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-7);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(ModelError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ModelError::Config("batch_size must be >= 1".into()));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(ModelError::Config("l2_penalty must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    /// 0 or 1.
    pub y: f64,
}

impl Example {
    pub fn from_features(features: &[u8], label: bool) -> Self {
        Example {
            x: features.iter().map(|&v| v as f64).collect(),
            y: if label { 1.0 } else { 0.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean training loss (including the L2 term) after each epoch.
    pub loss_trace: Vec<f64>,
}

fn l2_term(params: &ModelParams, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let conv: f64 = params.conv_weights.iter().flatten().map(|w| w * w).sum();
    let out: f64 = params.out_weights.iter().map(|w| w * w).sum();
    0.5 * l2 * (conv + out)
}

pub fn dataset_loss(params: &ModelParams, data: &[Example], l2: f64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for ex in data {
        total += loss(params, &ex.x, ex.y)?;
    }
    Ok(total / data.len() as f64 + l2_term(params, l2))
}

/// Mini-batch gradient descent on mean binary cross-entropy. Input width
/// fixes `max_pairs`; parameters start uniform in `[-0.1, 0.1]` under the
/// config seed, which also drives the per-epoch shuffle.
pub fn train(data: &[Example], config: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    let first = data.first().ok_or(ModelError::EmptyDataset)?;
    if first.x.len() % PAIR_WIDTH != 0 {
        return Err(ModelError::Shape {
            got: first.x.len(),
            want: first.x.len().next_multiple_of(PAIR_WIDTH),
        });
    }
    let max_pairs = first.x.len() / PAIR_WIDTH;
    let positives = data.iter().filter(|e| e.y > 0.5).count();
    if positives == 0 || positives == data.len() {
        log::warn!(
            "training set has a single label value ({positives} positive of {})",
            data.len()
        );
    }

    let mut params = ModelParams::random(max_pairs, config.seed);
    params.check_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let weight_count = FILTERS * KERNEL;
    let out_off = weight_count + FILTERS;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut acc = vec![0.0; params.len()];
            for &i in batch {
                let (_, g) = loss_and_gradient(&params, &data[i].x, data[i].y)?;
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut theta = params.to_flat();
            for (j, t) in theta.iter_mut().enumerate() {
                let is_weight = j < weight_count || (out_off..out_off + FILTERS).contains(&j);
                let decay = if is_weight { config.l2_penalty * *t } else { 0.0 };
                *t -= config.learning_rate * (acc[j] * scale + decay);
            }
            params.set_flat(&theta);
        }
        let epoch_loss = dataset_loss(&params, data, config.l2_penalty)?;
        if !epoch_loss.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                last: loss_trace.last().copied(),
            });
        }
        loss_trace.push(epoch_loss);
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Fraction of examples whose thresholded prediction (0.5) matches the label.
pub fn accuracy(params: &ModelParams, data: &[Example]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut right = 0;
    for ex in data {
        let p = forward(params, &ex.x)?;
        if (p >= 0.5) == (ex.y > 0.5) {
            right += 1;
        }
    }
    Ok(right as f64 / data.len() as f64)
}

/// Learned prior over programs, memoized by program content hash.
#[derive(Debug)]
pub struct ModelPrior {
    params: ModelParams,
    cache: Mutex<HashMap<String, f64>>,
    hits: AtomicUsize,
}

impl ModelPrior {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }
}

impl Prior for ModelPrior {
    fn probability(&self, program: &Program) -> f64 {
        let key = program.content_hash();
        if let Some(v) = self.cache.lock().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return *v;
        }
        let v = match featurize(program, self.params.max_pairs) {
            Ok(row) => {
                let x: Vec<f64> = row.iter().map(|&b| b as f64).collect();
                forward(&self.params, &x).expect("featurized to model width")
            }
            Err(e) => {
                log::warn!("prior floor {PRIOR_FLOOR} used: {e}");
                PRIOR_FLOOR
            }
        };
        self.cache.lock().unwrap().insert(key, v);
        v
    }
}

/// Wrap trained parameters as a search prior with a fresh cache.
pub fn make_prior(params: ModelParams) -> ModelPrior {
    ModelPrior {
        params,
        cache: Mutex::new(HashMap::new()),
        hits: AtomicUsize::new(0),
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams::zeros(DEFAULT_MAX_PAIRS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_input(max_pairs: usize) -> Vec<f64> {
        vec![0.0; max_pairs * PAIR_WIDTH]
    }

    fn random_input(max_pairs: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_pairs * PAIR_WIDTH)
            .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
            .collect()
    }

    #[test]
    fn zero_params_give_one_half() {
        let p = ModelParams::zeros(64);
        assert_eq!(forward(&p, &zero_input(64)).unwrap(), 0.5);
        assert_eq!(forward(&p, &random_input(64, 3)).unwrap(), 0.5);
    }

    #[test]
    fn shape_mismatch() {
        let p = ModelParams::zeros(64);
        assert!(matches!(
            forward(&p, &zero_input(63)),
            Err(ModelError::Shape { .. })
        ));
        let short = ModelParams::zeros(5);
        assert!(matches!(
            forward(&short, &zero_input(5)),
            Err(ModelError::TooShort(5))
        ));
    }

    #[test]
    fn zero_point_gradients() {
        let p = ModelParams::zeros(16);
        for y in [0.0, 1.0] {
            let g = gradient(&p, &zero_input(16), y);
            assert!(g[..FILTERS * KERNEL + FILTERS].iter().all(|v| *v == 0.0));
            assert_eq!(*g.last().unwrap(), 0.5 - y);
        }
    }

    #[test]
    fn flat_round_trip() {
        let p = ModelParams::random(20, 9);
        let mut q = ModelParams::zeros(20);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }

    #[test]
    fn model_file_round_trip() {
        let p = ModelParams::random(64, 1);
        let text = p.to_model_file();
        assert_eq!(ModelParams::from_model_file(&text).unwrap(), p);
        let bad = text.replace("\"format_version\": 1", "\"format_version\": 7");
        assert!(ModelParams::from_model_file(&bad).is_err());
    }

    #[test]
    fn overfits_single_positive() {
        let x = random_input(16, 5);
        let data = vec![Example { x: x.clone(), y: 1.0 }];
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let out = train(&data, &cfg).unwrap();
        assert!(forward(&out.params, &x).unwrap() > 0.9);
    }

    #[test]
    fn training_is_reproducible() {
        let data: Vec<Example> = (0..20)
            .map(|i| Example {
                x: random_input(16, i),
                y: (i % 2) as f64,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_trace.len(), 5);
    }

    #[test]
    fn diverging_training_is_reported() {
        let data: Vec<Example> = (0..8)
            .map(|i| Example {
                x: random_input(16, i),
                y: (i % 2) as f64,
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&data, &cfg),
            Err(ModelError::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(train(&[], &TrainConfig::default()).is_err());
        let bad = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
