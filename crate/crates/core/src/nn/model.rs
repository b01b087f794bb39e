//! Small differentiable models with exact parameter gradients.
//!
//! A model is a stack of dense or single-input-channel convolution layers over a flat
//! input vector. Parameters live in one flat row-major vector; each layer records the
//! offset of its block so that masks can address coordinates globally.

use std::fmt;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    /// `out = act(W a + b)`, `W` stored row-major as `(outputs, inputs)` followed by `b`.
    Dense {
        inputs: usize,
        outputs: usize,
        bias: bool,
        activation: Activation,
    },
    /// Valid, stride-1 convolution of a `side x side` single-channel image into
    /// `channels` feature maps. Weights `[channel][row][col]` then one bias per channel.
    /// Output is flattened channel-major.
    Conv2d {
        side: usize,
        kernel: usize,
        channels: usize,
        activation: Activation,
    },
}

impl Layer {
    pub fn input_len(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2d { side, .. } => side * side,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv2d {
                side,
                kernel,
                channels,
                ..
            } => {
                let q = side + 1 - kernel;
                channels * q * q
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Dense {
                inputs,
                outputs,
                bias,
                ..
            } => outputs * inputs + if bias { outputs } else { 0 },
            Layer::Conv2d {
                kernel, channels, ..
            } => channels * kernel * kernel + channels,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv2d { kernel, .. } => kernel * kernel,
        }
    }

    fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense {
                inputs, outputs, ..
            } => inputs * outputs,
            Layer::Conv2d {
                kernel, channels, ..
            } => channels * kernel * kernel,
        }
    }

    fn activation(&self) -> Activation {
        match *self {
            Layer::Dense { activation, .. } | Layer::Conv2d { activation, .. } => activation,
        }
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match *self {
            Layer::Dense {
                inputs,
                outputs,
                bias,
                activation,
            } => {
                let (w, b) = params.split_at(inputs * outputs);
                for o in 0..outputs {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let mut z: f64 = row.iter().zip(input).map(|(wi, ai)| wi * ai).sum();
                    if bias {
                        z += b[o];
                    }
                    out.push(activation.apply(z));
                }
            }
            Layer::Conv2d {
                side,
                kernel,
                channels,
                activation,
            } => {
                let q = side + 1 - kernel;
                let (w, b) = params.split_at(channels * kernel * kernel);
                for c in 0..channels {
                    let wc = &w[c * kernel * kernel..(c + 1) * kernel * kernel];
                    for p in 0..q {
                        for r in 0..q {
                            let mut z = b[c];
                            for u in 0..kernel {
                                let irow = &input[(p + u) * side + r..(p + u) * side + r + kernel];
                                let wrow = &wc[u * kernel..(u + 1) * kernel];
                                z += irow.iter().zip(wrow).map(|(a, k)| a * k).sum::<f64>();
                            }
                            out.push(activation.apply(z));
                        }
                    }
                }
            }
        }
    }

    /// Given the layer input, its activated output and `dL/d(output)`, accumulate the
    /// parameter gradient into `grad` and write `dL/d(input)` into `d_input`.
    fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        output: &[f64],
        d_output: &[f64],
        grad: &mut [f64],
        d_input: &mut Vec<f64>,
    ) {
        let act = self.activation();
        let dz: Vec<f64> = output
            .iter()
            .zip(d_output)
            .map(|(&o, &d)| d * act.derivative_from_output(o))
            .collect();
        d_input.clear();
        d_input.resize(input.len(), 0.0);
        match *self {
            Layer::Dense {
                inputs,
                outputs,
                bias,
                ..
            } => {
                let w = &params[..inputs * outputs];
                let (gw, gb) = grad.split_at_mut(inputs * outputs);
                for o in 0..outputs {
                    let d = dz[o];
                    let row = &w[o * inputs..(o + 1) * inputs];
                    let grow = &mut gw[o * inputs..(o + 1) * inputs];
                    for i in 0..inputs {
                        grow[i] += d * input[i];
                        d_input[i] += d * row[i];
                    }
                    if bias {
                        gb[o] += d;
                    }
                }
            }
            Layer::Conv2d {
                side,
                kernel,
                channels,
                ..
            } => {
                let q = side + 1 - kernel;
                let kk = kernel * kernel;
                let w = &params[..channels * kk];
                let (gw, gb) = grad.split_at_mut(channels * kk);
                for c in 0..channels {
                    for p in 0..q {
                        for r in 0..q {
                            let d = dz[c * q * q + p * q + r];
                            gb[c] += d;
                            for u in 0..kernel {
                                for v in 0..kernel {
                                    let idx = (p + u) * side + r + v;
                                    gw[c * kk + u * kernel + v] += d * input[idx];
                                    d_input[idx] += d * w[c * kk + u * kernel + v];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Linear,
    Mlp,
    TinyConv,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Linear => "linear",
            Architecture::Mlp => "mlp",
            Architecture::TinyConv => "tiny-conv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `L = 0.5 * sum_k (out_k - t_k)^2`
    SquaredError,
    /// `L = sum(p) * logsumexp(out) - <p, out>`
    CrossEntropy,
}

/// Supervision target for one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
    /// Soft target: a probability vector for cross-entropy, a target vector for
    /// squared error.
    Distribution(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub x: Vec<f64>,
    pub target: Target,
}

impl DataSample {
    pub fn new(x: Vec<f64>, target: Target) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::config("sample must have at least one feature"));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!("non-finite feature at index {i}")));
        }
        Ok(Self { x, target })
    }
}

/// Named model architectures used across experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZooModel {
    /// 16 -> 1 linear regression with bias, squared error (17 parameters).
    Linear,
    /// 16-5-3 tanh MLP, cross-entropy (103 parameters).
    Small,
    /// 4x4 image, 3x3 conv with 48 channels, dense to 3 classes (1059 parameters).
    Medium,
    /// 16-512-3 tanh MLP, cross-entropy (10243 parameters).
    Large,
}

impl ZooModel {
    pub const INPUT_DIM: usize = 16;
    pub const CLASSES: usize = 3;

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "linear" => Some(ZooModel::Linear),
            "small" => Some(ZooModel::Small),
            "medium" => Some(ZooModel::Medium),
            "large" => Some(ZooModel::Large),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ZooModel::Linear => "linear",
            ZooModel::Small => "small",
            ZooModel::Medium => "medium",
            ZooModel::Large => "large",
        }
    }

    pub fn spec(self) -> ModelSpec {
        let m = Self::INPUT_DIM;
        let c = Self::CLASSES;
        let spec = match self {
            ZooModel::Linear => ModelSpec::linear(m, 1, true, LossKind::SquaredError),
            ZooModel::Small => ModelSpec::mlp(&[m, 5, c], LossKind::CrossEntropy),
            ZooModel::Medium => ModelSpec::tiny_conv(4, 3, 48, c, LossKind::CrossEntropy),
            ZooModel::Large => ModelSpec::mlp(&[m, 512, c], LossKind::CrossEntropy),
        };
        spec.expect("zoo specs are valid").named(self.name())
    }

    /// Whether targets are class indices (as opposed to regression values).
    pub fn is_classifier(self) -> bool {
        !matches!(self, ZooModel::Linear)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    name: String,
    architecture: Architecture,
    layers: Vec<Layer>,
    loss: LossKind,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, layers: Vec<Layer>, loss: LossKind) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("model needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_len() == 0 || layer.output_len() == 0 {
                return Err(Error::config(format!("layer {i} has a zero dimension")));
            }
            if let Layer::Conv2d { side, kernel, .. } = *layer {
                if kernel == 0 || kernel > side {
                    return Err(Error::config(format!("layer {i}: kernel must be in 1..=side")));
                }
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::config(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].output_len(),
                    i + 1,
                    pair[1].input_len()
                )));
            }
        }
        let spec = Self {
            name: architecture.to_string(),
            architecture,
            layers,
            loss,
        };
        if spec.param_count() == 0 {
            return Err(Error::config("model has no parameters"));
        }
        Ok(spec)
    }

    pub fn linear(inputs: usize, outputs: usize, bias: bool, loss: LossKind) -> Result<Self> {
        Self::new(
            Architecture::Linear,
            vec![Layer::Dense {
                inputs,
                outputs,
                bias,
                activation: Activation::Identity,
            }],
            loss,
        )
    }

    /// `widths = [m, hidden.., outputs]`, tanh on hidden layers.
    pub fn mlp(widths: &[usize], loss: LossKind) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("mlp needs at least input and output widths"));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::Dense {
                inputs: w[0],
                outputs: w[1],
                bias: true,
                activation: if i == last {
                    Activation::Identity
                } else {
                    Activation::Tanh
                },
            })
            .collect();
        Self::new(Architecture::Mlp, layers, loss)
    }

    pub fn tiny_conv(
        side: usize,
        kernel: usize,
        channels: usize,
        outputs: usize,
        loss: LossKind,
    ) -> Result<Self> {
        if kernel == 0 || kernel > side {
            return Err(Error::config("kernel must be in 1..=side"));
        }
        let q = side + 1 - kernel;
        Self::new(
            Architecture::TinyConv,
            vec![
                Layer::Conv2d {
                    side,
                    kernel,
                    channels,
                    activation: Activation::Tanh,
                },
                Layer::Dense {
                    inputs: channels * q * q,
                    outputs,
                    bias: true,
                    activation: Activation::Identity,
                },
            ],
            loss,
        )
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_owned();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    /// `m`
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_len()
    }

    /// `D`
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Start offset of every layer block plus the total `D` as final entry.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for layer in &self.layers {
            acc += layer.param_count();
            offsets.push(acc);
        }
        offsets
    }

    fn target_vector(&self, target: &Target) -> Result<Vec<f64>> {
        let k = self.output_dim();
        match (target, self.loss) {
            (Target::Class(c), _) => {
                if *c >= k {
                    return Err(Error::config(format!("class {c} out of range for {k} outputs")));
                }
                let mut t = vec![0.0; k];
                t[*c] = 1.0;
                Ok(t)
            }
            (Target::Value(v), LossKind::SquaredError) => {
                if k != 1 {
                    return Err(Error::config("scalar regression target needs one output"));
                }
                Ok(vec![*v])
            }
            (Target::Value(_), LossKind::CrossEntropy) => {
                Err(Error::config("cross-entropy needs a class or distribution target"))
            }
            (Target::Distribution(p), _) => {
                if p.len() != k {
                    return Err(Error::config(format!(
                        "target distribution has {} entries, model has {k} outputs",
                        p.len()
                    )));
                }
                Ok(p.clone())
            }
        }
    }

    fn check_inputs(&self, params: &[f64], x: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::config(format!(
                "parameter vector has length {}, model has D = {}",
                params.len(),
                self.param_count()
            )));
        }
        if x.len() != self.input_dim() {
            return Err(Error::config(format!(
                "sample has {} features, model expects m = {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward and backward pass for one sample.
    pub fn evaluate(&self, params: &[f64], x: &[f64], target: &Target) -> Result<Evaluation> {
        self.check_inputs(params, x)?;
        let t = self.target_vector(target)?;
        let offsets = self.layer_offsets();

        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.output_len());
            layer.forward(&params[offsets[l]..offsets[l + 1]], &acts[l], &mut out);
            acts.push(out);
        }

        let out = &acts[self.layers.len()];
        let (loss, mut delta) = loss_and_delta(self.loss, out, &t);

        let mut grad = vec![0.0; self.param_count()];
        let mut d_input = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            layer.backward(
                &params[offsets[l]..offsets[l + 1]],
                &acts[l],
                &acts[l + 1],
                &delta,
                &mut grad[offsets[l]..offsets[l + 1]],
                &mut d_input,
            );
            std::mem::swap(&mut delta, &mut d_input);
        }
        Ok(Evaluation {
            loss,
            param_grad: grad,
            input_grad: delta,
        })
    }
}

fn loss_and_delta(kind: LossKind, out: &[f64], t: &[f64]) -> (f64, Vec<f64>) {
    match kind {
        LossKind::SquaredError => {
            let delta: Vec<f64> = out.iter().zip(t).map(|(o, t)| o - t).collect();
            let loss = 0.5 * delta.iter().map(|d| d * d).sum::<f64>();
            (loss, delta)
        }
        LossKind::CrossEntropy => {
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = out.iter().map(|o| (o - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let mass: f64 = t.iter().sum();
            let dot: f64 = out.iter().zip(t).map(|(o, p)| o * p).sum();
            // sum_k p_k (lse - o_k), each term >= 0 for p_k >= 0
            let loss = t
                .iter()
                .zip(out)
                .map(|(p, o)| p * (lse - o))
                .sum::<f64>()
                .max(0.0);
            debug_assert!((loss - (mass * lse - dot)).abs() <= 1e-9 * (1.0 + loss.abs()));
            let delta = out
                .iter()
                .zip(t)
                .map(|(o, p)| mass * (o - lse).exp() - p)
                .collect();
            (loss, delta)
        }
    }
}

/// Loss, `dL/dθ` and `dL/dx` for one sample.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub param_grad: Vec<f64>,
    pub input_grad: Vec<f64>,
}

/// Flat parameter vector with per-layer offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl ParameterVector {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            offsets: spec.layer_offsets(),
        }
    }

    /// Weights drawn from `N(0, 1/fan_in)`, biases zero.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = rng::stream(rng::derive(seed, "init", 0));
        let mut values = Vec::with_capacity(spec.param_count());
        for layer in spec.layers() {
            let normal = Normal::new(0.0, 1.0 / (layer.fan_in() as f64).sqrt())
                .expect("positive fan-in");
            values.extend((0..layer.weight_count()).map(|_| normal.sample(&mut rng)));
            values.extend(std::iter::repeat_n(0.0, layer.param_count() - layer.weight_count()));
        }
        Self {
            values,
            offsets: spec.layer_offsets(),
        }
    }

    pub fn from_values(spec: &ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                values.len()
            )));
        }
        Ok(Self {
            values,
            offsets: spec.layer_offsets(),
        })
    }

    /// Rebuild from per-layer blocks.
    pub fn from_layers(spec: &ModelSpec, blocks: &[Vec<f64>]) -> Result<Self> {
        let offsets = spec.layer_offsets();
        if blocks.len() != spec.layers().len() {
            return Err(Error::config("one block per layer required"));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.len() != offsets[i + 1] - offsets[i] {
                return Err(Error::config(format!("block {i} has wrong length {}", b.len())));
            }
        }
        Ok(Self {
            values: blocks.concat(),
            offsets,
        })
    }

    pub fn layers(&self) -> Vec<Vec<f64>> {
        self.offsets
            .windows(2)
            .map(|w| self.values[w[0]..w[1]].to_vec())
            .collect()
    }

    pub fn layer(&self, index: usize) -> &[f64] {
        &self.values[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `g(x) = ∇_θ L(x)` as a flat vector of length `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                location: format!("gradient coordinate {j}"),
                detail: "non-finite value".into(),
            });
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl std::ops::Deref for GradientVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// `D x m` matrix of `∂g_j/∂x_i`, row-major (`entries[j * m + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientInputJacobian {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
    pub step: f64,
}

impl GradientInputJacobian {
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.entries[j * self.cols + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.entries[j * self.cols..(j + 1) * self.cols]
    }
}

pub fn forward_loss(spec: &ModelSpec, params: &ParameterVector, sample: &DataSample) -> Result<f64> {
    Ok(spec.evaluate(params.values(), &sample.x, &sample.target)?.loss)
}

pub fn param_gradient(
    spec: &ModelSpec,
    params: &ParameterVector,
    sample: &DataSample,
) -> Result<GradientVector> {
    GradientVector::new(spec.evaluate(params.values(), &sample.x, &sample.target)?.param_grad)
}

/// Default central-difference step for [`input_jacobian_of_gradient`].
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-4;

/// Central-difference step for input coordinate `x_i`.
pub fn scaled_step(h: f64, x_i: f64) -> f64 {
    h * x_i.abs().max(1.0)
}

/// Central differences of the parameter gradient over every input coordinate:
/// column `i` is `(g(x + h_i e_i) - g(x - h_i e_i)) / (2 h_i)` with
/// `h_i = h * max(1, |x_i|)`.
pub fn input_jacobian_of_gradient(
    spec: &ModelSpec,
    params: &ParameterVector,
    sample: &DataSample,
    h: f64,
) -> Result<GradientInputJacobian> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let m = spec.input_dim();
    let d = spec.param_count();
    if sample.x.len() != m {
        return Err(Error::config(format!(
            "sample has {} features, model expects m = {m}",
            sample.x.len()
        )));
    }
    let mut entries = vec![0.0; d * m];
    let mut x = sample.x.clone();
    for i in 0..m {
        let hi = scaled_step(h, sample.x[i]);
        x[i] = sample.x[i] + hi;
        let plus = spec.evaluate(params.values(), &x, &sample.target)?.param_grad;
        x[i] = sample.x[i] - hi;
        let minus = spec.evaluate(params.values(), &x, &sample.target)?.param_grad;
        x[i] = sample.x[i];
        for j in 0..d {
            let v = (plus[j] - minus[j]) / (2.0 * hi);
            if !v.is_finite() {
                return Err(Error::Numeric {
                    location: format!("jacobian entry [{j}, {i}]"),
                    detail: "non-finite central difference".into(),
                });
            }
            entries[j * m + i] = v;
        }
    }
    Ok(GradientInputJacobian {
        rows: d,
        cols: m,
        entries,
        step: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_linear() -> ModelSpec {
        ModelSpec::linear(1, 1, false, LossKind::SquaredError).unwrap()
    }

    fn sample(x: Vec<f64>, target: Target) -> DataSample {
        DataSample::new(x, target).unwrap()
    }

    #[test]
    fn linear_loss_and_gradient_by_hand() {
        let spec = scalar_linear();
        let p = ParameterVector::from_values(&spec, vec![1.0]).unwrap();
        let s = sample(vec![2.0], Target::Value(0.0));
        assert_eq!(forward_loss(&spec, &p, &s).unwrap(), 2.0);
        assert_eq!(param_gradient(&spec, &p, &s).unwrap().values, vec![4.0]);
    }

    #[test]
    fn zero_params_zero_input_zero_loss() {
        for spec in [
            ModelSpec::linear(3, 1, true, LossKind::SquaredError).unwrap(),
            ModelSpec::mlp(&[3, 4, 1], LossKind::SquaredError).unwrap(),
            ModelSpec::tiny_conv(3, 2, 2, 1, LossKind::SquaredError).unwrap(),
        ] {
            let p = ParameterVector::zeros(&spec);
            let s = sample(vec![0.0; spec.input_dim()], Target::Value(0.0));
            assert_eq!(forward_loss(&spec, &p, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        // theta * x = t exactly
        let spec = scalar_linear();
        let p = ParameterVector::from_values(&spec, vec![1.5]).unwrap();
        let s = sample(vec![2.0], Target::Value(3.0));
        assert!(param_gradient(&spec, &p, &s).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = scalar_linear();
        let p = ParameterVector::zeros(&spec);
        let s = sample(vec![1.0, 2.0], Target::Value(0.0));
        assert!(matches!(forward_loss(&spec, &p, &s), Err(Error::Config(_))));
        let bad = ParameterVector::from_values(&spec, vec![1.0, 2.0]);
        assert!(bad.is_err());
    }

    #[test]
    fn cross_entropy_rejects_scalar_target() {
        let spec = ModelSpec::linear(2, 3, true, LossKind::CrossEntropy).unwrap();
        let p = ParameterVector::zeros(&spec);
        let s = sample(vec![1.0, 2.0], Target::Value(0.0));
        assert!(forward_loss(&spec, &p, &s).is_err());
    }

    #[test]
    fn cross_entropy_is_stable_near_saturation() {
        let spec = ModelSpec::linear(1, 2, false, LossKind::CrossEntropy).unwrap();
        let p = ParameterVector::from_values(&spec, vec![800.0, -800.0]).unwrap();
        let s = sample(vec![1.0], Target::Class(1));
        let eval = spec.evaluate(p.values(), &s.x, &s.target).unwrap();
        assert!((eval.loss - 1600.0).abs() < 1e-9);
        assert!(eval.param_grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn zoo_parameter_counts() {
        assert_eq!(ZooModel::Linear.spec().param_count(), 17);
        assert_eq!(ZooModel::Small.spec().param_count(), 103);
        assert_eq!(ZooModel::Medium.spec().param_count(), 1059);
        assert_eq!(ZooModel::Large.spec().param_count(), 10243);
        for z in [ZooModel::Linear, ZooModel::Small, ZooModel::Medium, ZooModel::Large] {
            let spec = z.spec();
            let offs = spec.layer_offsets();
            assert_eq!(*offs.last().unwrap(), spec.param_count());
            assert_eq!(spec.input_dim(), ZooModel::INPUT_DIM);
        }
    }

    #[test]
    fn layer_blocks_round_trip() {
        let spec = ZooModel::Medium.spec();
        let p = ParameterVector::init(&spec, 3);
        let rebuilt = ParameterVector::from_layers(&spec, &p.layers()).unwrap();
        assert_eq!(rebuilt, p);
        assert_eq!(p.layer(1).len(), 48 * 4 * 3 + 3);
    }

    #[test]
    fn jacobian_of_linear_model_matches_symbolic() {
        // g = theta x^2 - t x, dg/dx = 2 theta x - t
        let spec = scalar_linear();
        let p = ParameterVector::from_values(&spec, vec![1.0]).unwrap();
        let s = sample(vec![3.0], Target::Value(0.0));
        let jac = input_jacobian_of_gradient(&spec, &p, &s, 1e-4).unwrap();
        assert_eq!((jac.rows, jac.cols), (1, 1));
        assert!((jac.get(0, 0) - 6.0).abs() < 1e-6);

        // theta = 0: dg/dx = -t
        let p0 = ParameterVector::zeros(&spec);
        let s = sample(vec![0.7], Target::Value(2.0));
        let jac = input_jacobian_of_gradient(&spec, &p0, &s, 1e-4).unwrap();
        assert!((jac.get(0, 0) + 2.0).abs() < 1e-8);
        let s = sample(vec![0.7], Target::Value(0.0));
        let jac = input_jacobian_of_gradient(&spec, &p0, &s, 1e-4).unwrap();
        assert_eq!(jac.get(0, 0), 0.0);
    }

    #[test]
    fn jacobian_rejects_bad_step() {
        let spec = scalar_linear();
        let p = ParameterVector::zeros(&spec);
        let s = sample(vec![1.0], Target::Value(0.0));
        assert!(input_jacobian_of_gradient(&spec, &p, &s, 0.0).is_err());
        assert!(input_jacobian_of_gradient(&spec, &p, &s, -1e-3).is_err());
    }

    #[test]
    fn overflowing_jacobian_reports_index() {
        let spec = scalar_linear();
        let p = ParameterVector::from_values(&spec, vec![1e300]).unwrap();
        let s = sample(vec![1e10], Target::Value(0.0));
        match input_jacobian_of_gradient(&spec, &p, &s, 1e-4) {
            Err(Error::Numeric { location, .. }) => assert!(location.contains("[0, 0]")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
