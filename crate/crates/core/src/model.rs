//! The confidence estimator: a small fully-connected network with a single
//! sigmoid output, trained with binary cross-entropy.
//!
//! Parameters live in one flat [`ParamVector`]. The forward and backward
//! passes are generic over [`Real`] so the same code computes plain gradients
//! (`f64`) and exact Hessian-vector products ([`Dual`]).

use std::fmt;
use std::ops::{Deref, DerefMut, Range};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{sigmoid, softplus, Dual, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
    /// Not twice differentiable; rejected by the second-order meta-gradient.
    Relu,
}

impl Activation {
    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }

    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
            Activation::Relu => {
                if x.value() > 0.0 {
                    x
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative<T: Real>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Identity => T::one(),
            Activation::Relu => {
                if a.value() > 0.0 {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

/// Where one dense layer's weights (row-major, `out × in`) and biases sit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlice {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_dims,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::config("at least one hidden layer is required"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// Hidden layers followed by the single-unit output layer.
    pub fn layout(&self) -> Vec<LayerSlice> {
        let mut offset = 0;
        let mut in_dim = self.input_dim;
        let mut layers = Vec::with_capacity(self.hidden_dims.len() + 1);
        for &out_dim in self.hidden_dims.iter().chain(std::iter::once(&1)) {
            let weights = offset..offset + in_dim * out_dim;
            let bias = weights.end..weights.end + out_dim;
            offset = bias.end;
            layers.push(LayerSlice {
                in_dim,
                out_dim,
                weights,
                bias,
            });
            in_dim = out_dim;
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map_or(0, |l| l.bias.end)
    }

    pub fn stats_len(&self) -> usize {
        2 * self.hidden_dims.len()
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init_params(&self, rng: &mut Rng) -> ParamVector {
        let mut values = vec![0.0; self.param_count()];
        for layer in self.layout() {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for v in &mut values[layer.weights.start..layer.bias.end] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        ParamVector(values)
    }

    pub fn zero_params(&self) -> ParamVector {
        ParamVector(vec![0.0; self.param_count()])
    }

    fn check_params(&self, params: &[impl Sized]) -> Result<()> {
        let expected = self.param_count();
        if params.len() != expected {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension {
                what: "input",
                expected: self.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden_dims.iter().map(|h| h.to_string()).collect();
        write!(
            f,
            "{}-[{}]-1 ({})",
            self.input_dim,
            hidden.join(","),
            self.activation
        )
    }
}

/// Flat parameter vector; slices are mapped to layers by [`Architecture::layout`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

/// One dense layer in unpacked form.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ParamVector {
    pub fn unpack(&self, arch: &Architecture) -> Result<Vec<LayerParams>> {
        arch.check_params(&self.0)?;
        Ok(arch
            .layout()
            .iter()
            .map(|l| LayerParams {
                weights: self.0[l.weights.clone()]
                    .chunks(l.in_dim)
                    .map(<[f64]>::to_vec)
                    .collect(),
                bias: self.0[l.bias.clone()].to_vec(),
            })
            .collect())
    }

    pub fn pack(arch: &Architecture, layers: &[LayerParams]) -> Result<Self> {
        let layout = arch.layout();
        if layers.len() != layout.len() {
            return Err(Error::Dimension {
                what: "layer count",
                expected: layout.len(),
                got: layers.len(),
            });
        }
        let mut values = Vec::with_capacity(arch.param_count());
        for (slice, layer) in layout.iter().zip(layers) {
            if layer.weights.len() != slice.out_dim
                || layer.weights.iter().any(|r| r.len() != slice.in_dim)
                || layer.bias.len() != slice.out_dim
            {
                return Err(Error::config("layer shape does not match architecture"));
            }
            values.extend(layer.weights.iter().flatten());
            values.extend(&layer.bias);
        }
        Ok(ParamVector(values))
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self + k * other`.
    pub fn axpy(&self, k: f64, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + k * b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Per hidden layer: mean then population standard deviation of the activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStatsVector(pub Vec<f64>);

impl Deref for FeatureStatsVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A batch of labelled inputs with optional per-sample loss weights.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub labels: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, labels: Vec<f64>) -> Self {
        Self {
            inputs,
            labels,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self, arch: &Architecture) -> Result<()> {
        if self.is_empty() {
            return Err(Error::config("empty batch"));
        }
        if self.labels.len() != self.len() {
            return Err(Error::Dimension {
                what: "labels",
                expected: self.len(),
                got: self.labels.len(),
            });
        }
        if let Some(w) = &self.weights {
            if w.len() != self.len() {
                return Err(Error::Dimension {
                    what: "weights",
                    expected: self.len(),
                    got: w.len(),
                });
            }
        }
        if self.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::config("labels must be 0 or 1"));
        }
        for x in &self.inputs {
            arch.check_input(x)?;
        }
        Ok(())
    }
}

struct Trace<T> {
    /// Activations per hidden layer.
    hidden: Vec<Vec<T>>,
    logit: T,
}

fn dense<T: Real>(params: &[T], layer: &LayerSlice, input: &[T], out: &mut Vec<T>) {
    out.clear();
    let w = &params[layer.weights.clone()];
    let b = &params[layer.bias.clone()];
    for (row, &bias) in w.chunks_exact(layer.in_dim).zip(b) {
        let mut acc = bias;
        for (&wi, &xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

fn trace<T: Real>(arch: &Architecture, layout: &[LayerSlice], params: &[T], input: &[f64]) -> Trace<T> {
    let (out_layer, hidden_layers) = layout.split_last().expect("layout has an output layer");
    let mut current: Vec<T> = input.iter().map(|&x| T::constant(x)).collect();
    let mut hidden = Vec::with_capacity(hidden_layers.len());
    let mut pre = Vec::new();
    for layer in hidden_layers {
        dense(params, layer, &current, &mut pre);
        let act: Vec<T> = pre.iter().map(|&z| arch.activation.apply(z)).collect();
        current = act.clone();
        hidden.push(act);
    }
    dense(params, out_layer, &current, &mut pre);
    Trace {
        hidden,
        logit: pre[0],
    }
}

/// Adds `coeff * d(loss_i)/d(params)` for one sample into `grad`; returns the sample loss.
fn accumulate<T: Real>(
    arch: &Architecture,
    layout: &[LayerSlice],
    params: &[T],
    input: &[f64],
    label: f64,
    coeff: f64,
    grad: &mut [T],
) -> T {
    let tr = trace(arch, layout, params, input);
    let y = T::constant(label);
    let loss = softplus(tr.logit) - y * tr.logit;

    let (out_layer, hidden_layers) = layout.split_last().expect("layout has an output layer");
    let dz = (sigmoid(tr.logit) - y).scale(coeff);

    let last = tr.hidden.last().expect("at least one hidden layer");
    let w_out = &params[out_layer.weights.clone()];
    let mut delta: Vec<T> = Vec::with_capacity(last.len());
    for (j, &a) in last.iter().enumerate() {
        grad[out_layer.weights.start + j] += dz * a;
        delta.push(dz * w_out[j]);
    }
    grad[out_layer.bias.start] += dz;

    for (l, layer) in hidden_layers.iter().enumerate().rev() {
        let acts = &tr.hidden[l];
        let dpre: Vec<T> = delta
            .iter()
            .zip(acts)
            .map(|(&d, &a)| d * arch.activation.derivative(a))
            .collect();
        let w = &params[layer.weights.clone()];
        let mut next = if l > 0 {
            vec![T::zero(); layer.in_dim]
        } else {
            Vec::new()
        };
        for (j, &dp) in dpre.iter().enumerate() {
            let row = layer.weights.start + j * layer.in_dim;
            if l > 0 {
                let prev = &tr.hidden[l - 1];
                for k in 0..layer.in_dim {
                    grad[row + k] += dp * prev[k];
                    next[k] += w[j * layer.in_dim + k] * dp;
                }
            } else {
                for (k, &x) in input.iter().enumerate() {
                    grad[row + k] += dp.scale(x);
                }
            }
            grad[layer.bias.start + j] += dp;
        }
        delta = next;
    }
    loss
}

fn batch_loss_grad<T: Real>(arch: &Architecture, params: &[T], batch: &Batch<'_>) -> (T, Vec<T>) {
    let layout = arch.layout();
    let n = batch.len() as f64;
    let mut grad = vec![T::zero(); params.len()];
    let mut loss = T::zero();
    for (i, (x, &y)) in batch.inputs.iter().zip(&batch.labels).enumerate() {
        let w = batch.weights.as_ref().map_or(1.0, |w| w[i]);
        let li = accumulate(arch, &layout, params, x, y, w / n, &mut grad);
        loss += li.scale(w / n);
    }
    (loss, grad)
}

/// Pre-sigmoid output of the estimator.
pub fn logit(params: &[f64], arch: &Architecture, input: &[f64]) -> Result<f64> {
    arch.check_params(params)?;
    arch.check_input(input)?;
    Ok(trace(arch, &arch.layout(), params, input).logit)
}

/// Confidence score, always strictly inside (0, 1).
pub fn forward(params: &[f64], arch: &Architecture, input: &[f64]) -> Result<f64> {
    let z = logit(params, arch, input)?;
    if z.is_nan() {
        return Err(Error::numerical("forward pass produced NaN"));
    }
    Ok(sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Mean binary cross-entropy of scores against 0/1 labels.
pub fn bce_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::config("empty batch"));
    }
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let mut total = 0.0;
    for (&s, &y) in scores.iter().zip(labels) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::config("labels must be 0 or 1"));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::numerical(format!("score {s} outside (0, 1)")));
        }
        total -= if y == 1.0 { s.ln() } else { (-s).ln_1p() };
    }
    Ok(total / scores.len() as f64)
}

/// Batch-mean (optionally weighted) BCE loss and its exact gradient.
pub fn loss_and_grad(params: &[f64], arch: &Architecture, batch: &Batch<'_>) -> Result<(f64, ParamVector)> {
    arch.check_params(params)?;
    batch.validate(arch)?;
    let (loss, grad) = batch_loss_grad(arch, params, batch);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite loss or gradient"));
    }
    Ok((loss, ParamVector(grad)))
}

pub fn loss(params: &[f64], arch: &Architecture, batch: &Batch<'_>) -> Result<f64> {
    arch.check_params(params)?;
    batch.validate(arch)?;
    let layout = arch.layout();
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (i, (x, &y)) in batch.inputs.iter().zip(&batch.labels).enumerate() {
        let z = trace(arch, &layout, params, x).logit;
        let w = batch.weights.as_ref().map_or(1.0, |w| w[i]);
        total += w * (softplus(z) - y * z);
    }
    let total = total / n;
    if !total.is_finite() {
        return Err(Error::numerical("non-finite loss"));
    }
    Ok(total)
}

/// Exact `H v`, where `H` is the Hessian of the batch loss at `params`.
pub fn hessian_vector_product(
    params: &[f64],
    arch: &Architecture,
    batch: &Batch<'_>,
    direction: &[f64],
) -> Result<ParamVector> {
    arch.check_params(params)?;
    arch.check_params(direction)?;
    batch.validate(arch)?;
    if !arch.activation.is_smooth() {
        return Err(Error::config(format!(
            "second-order derivatives need a smooth activation, got {}",
            arch.activation
        )));
    }
    let dual: Vec<Dual> = params
        .iter()
        .zip(direction)
        .map(|(&p, &v)| Dual::new(p, v))
        .collect();
    let (_, grad) = batch_loss_grad(arch, &dual, batch);
    let hv: Vec<f64> = grad.iter().map(|g| g.eps).collect();
    if hv.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite Hessian-vector product"));
    }
    Ok(ParamVector(hv))
}

pub fn feature_stats(params: &[f64], arch: &Architecture, input: &[f64]) -> Result<FeatureStatsVector> {
    arch.check_params(params)?;
    arch.check_input(input)?;
    let tr = trace(arch, &arch.layout(), params, input);
    let mut out = Vec::with_capacity(arch.stats_len());
    for acts in &tr.hidden {
        // shifted by the first unit, so a constant layer gives exactly zero spread
        let n = acts.len() as f64;
        let shift = acts[0];
        let d_mean = acts.iter().map(|a| a - shift).sum::<f64>() / n;
        let d_sq = acts.iter().map(|a| (a - shift) * (a - shift)).sum::<f64>() / n;
        let var = d_sq - d_mean * d_mean;
        out.push(shift + d_mean);
        out.push(var.max(0.0).sqrt());
    }
    Ok(FeatureStatsVector(out))
}
