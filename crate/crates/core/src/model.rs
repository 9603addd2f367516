//! Time-conditioned feedforward network with reverse-mode gradients and the
//! optimisers used to train it.
//!
//! Parameters live in one flat vector. Each dense layer stores its weight
//! matrix row-major (`out x in`) followed by its bias. The outputs are grouped
//! into head blocks: continuous blocks are squashed through `tanh` into
//! `[-1, 1]`, categorical blocks are raw scores.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, BfnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Silu => z / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let a = z.tanh();
                1.0 - a * a
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeEmbedding {
    ScalarConcat,
    Sinusoidal { frequencies: usize },
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        match *self {
            TimeEmbedding::ScalarConcat => 1,
            TimeEmbedding::Sinusoidal { frequencies } => 2 * frequencies,
        }
    }

    fn write(&self, t: f64, out: &mut Vec<f64>) {
        match *self {
            TimeEmbedding::ScalarConcat => out.push(t),
            TimeEmbedding::Sinusoidal { frequencies } => {
                for j in 0..frequencies {
                    let w = std::f64::consts::PI * (j + 1) as f64 * t;
                    out.push(w.sin());
                    out.push(w.cos());
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "classes", rename_all = "snake_case")]
pub enum HeadBlock {
    /// One output squashed into `[-1, 1]`.
    Continuous,
    /// `K` raw scores.
    Categorical(usize),
}

impl HeadBlock {
    pub fn width(&self) -> usize {
        match *self {
            HeadBlock::Continuous => 1,
            HeadBlock::Categorical(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Width of the data features; the time embedding is appended on top.
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub output_width: usize,
    pub activation: Activation,
    pub time_embedding: TimeEmbedding,
    pub heads: Vec<HeadBlock>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 {
            return Err(BfnError::Argument("network widths must be at least 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(BfnError::Argument("network needs at least one non-empty hidden layer".into()));
        }
        let head_width: usize = self.heads.iter().map(HeadBlock::width).sum();
        if head_width != self.output_width {
            return Err(BfnError::Argument(format!(
                "head blocks cover {head_width} outputs, output_width is {}",
                self.output_width
            )));
        }
        if let TimeEmbedding::Sinusoidal { frequencies: 0 } = self.time_embedding {
            return Err(BfnError::Argument("sinusoidal embedding needs at least one frequency".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_width + self.time_embedding.width();
        for &w in self.hidden_widths.iter().chain(std::iter::once(&self.output_width)) {
            shapes.push(LayerShape { inputs: fan_in, outputs: w });
            fan_in = w;
        }
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayerShape::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn len(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerShape>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayerShape::len).sum();
        if values.len() != expected {
            return Err(shape_err(format!("layout needs {expected} parameters, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BfnError::Numeric("non-finite parameter".into()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self { values: vec![0.0; spec.param_count()], layout: spec.layout() }
    }

    /// LeCun-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let layout = spec.layout();
        let mut values = Vec::with_capacity(spec.param_count());
        for shape in &layout {
            let scale = (1.0 / shape.inputs as f64).sqrt();
            for _ in 0..shape.outputs * shape.inputs {
                let z: f64 = rng.sample(StandardNormal);
                values.push(z * scale);
            }
            values.extend(std::iter::repeat_n(0.0, shape.outputs));
        }
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8], layout: Vec<LayerShape>) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(BfnError::Format("parameter block is not a multiple of 8 bytes".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(values, layout)
    }
}

/// Anything that maps `(features, t)` to head outputs. Implemented by the
/// trainable [`Mlp`] and by fixed-output stubs.
pub trait Network: Sync {
    fn output_width(&self) -> usize;

    fn forward(&self, xi: &[f64], t: f64) -> Result<Vec<f64>>;

    fn param_count(&self) -> usize {
        0
    }

    /// Forward pass, then backpropagates `upstream(output)` and adds the
    /// parameter gradient into `grad`. Returns the output.
    fn forward_backward(
        &self,
        xi: &[f64],
        t: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let _ = grad;
        let out = self.forward(xi, t)?;
        upstream(&out)?;
        Ok(out)
    }
}

/// Returns the same outputs for every input.
#[derive(Debug, Clone)]
pub struct ConstantNetwork {
    outputs: Vec<f64>,
}

impl ConstantNetwork {
    pub fn new(outputs: Vec<f64>) -> Self {
        Self { outputs }
    }
}

impl Network for ConstantNetwork {
    fn output_width(&self) -> usize {
        self.outputs.len()
    }

    fn forward(&self, _xi: &[f64], _t: f64) -> Result<Vec<f64>> {
        Ok(self.outputs.clone())
    }
}

struct Tape {
    /// Input to each layer, including the embedded input to the first.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn check_input(spec: &NetworkSpec, params: &ParameterVector, xi: &[f64]) -> Result<()> {
    if xi.len() != spec.input_width {
        return Err(shape_err(format!("network expects {} inputs, got {}", spec.input_width, xi.len())));
    }
    if params.layout != spec.layout() {
        return Err(shape_err("parameter layout does not match network spec"));
    }
    Ok(())
}

fn run_forward(spec: &NetworkSpec, params: &ParameterVector, xi: &[f64], t: f64) -> Result<Tape> {
    check_input(spec, params, xi)?;
    let mut h = Vec::with_capacity(xi.len() + spec.time_embedding.width());
    h.extend_from_slice(xi);
    spec.time_embedding.write(t, &mut h);

    let last = params.layout.len() - 1;
    let mut inputs = Vec::with_capacity(params.layout.len());
    let mut pre = Vec::with_capacity(params.layout.len());
    let mut offset = 0;
    for (l, shape) in params.layout.iter().enumerate() {
        let w = &params.values[offset..offset + shape.outputs * shape.inputs];
        let b = &params.values[offset + shape.outputs * shape.inputs..offset + shape.len()];
        offset += shape.len();
        let z: Vec<f64> = w
            .chunks_exact(shape.inputs)
            .zip(b)
            .map(|(row, bias)| row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>() + bias)
            .collect();
        let next = if l == last { z.clone() } else { z.iter().map(|&v| spec.activation.apply(v)).collect() };
        inputs.push(std::mem::replace(&mut h, next));
        pre.push(z);
    }

    let mut output = h;
    let mut o = 0;
    for head in &spec.heads {
        if let HeadBlock::Continuous = head {
            output[o] = output[o].tanh();
        }
        o += head.width();
    }
    if output.iter().any(|v| !v.is_finite()) {
        return Err(BfnError::Numeric("non-finite network output".into()));
    }
    Ok(Tape { inputs, pre, output })
}

fn run_backward(spec: &NetworkSpec, params: &ParameterVector, tape: &Tape, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
    if upstream.len() != spec.output_width {
        return Err(shape_err(format!(
            "upstream gradient has {} entries, network has {} outputs",
            upstream.len(),
            spec.output_width
        )));
    }
    if grad.len() != params.len() {
        return Err(shape_err("gradient buffer does not match parameter count"));
    }
    // through the head squashing
    let mut delta = upstream.to_vec();
    let mut o = 0;
    for head in &spec.heads {
        if let HeadBlock::Continuous = head {
            let y = tape.output[o];
            delta[o] *= 1.0 - y * y;
        }
        o += head.width();
    }

    let last = params.layout.len() - 1;
    let mut offsets: Vec<usize> = Vec::with_capacity(params.layout.len());
    let mut acc = 0;
    for shape in &params.layout {
        offsets.push(acc);
        acc += shape.len();
    }
    for l in (0..params.layout.len()).rev() {
        let shape = params.layout[l];
        if l != last {
            for (d, &z) in delta.iter_mut().zip(&tape.pre[l]) {
                *d *= spec.activation.derivative(z);
            }
        }
        let off = offsets[l];
        let input = &tape.inputs[l];
        let nw = shape.outputs * shape.inputs;
        {
            let (gw, gb) = grad[off..off + shape.len()].split_at_mut(nw);
            for ((grow, gbias), &d) in gw.chunks_exact_mut(shape.inputs).zip(gb.iter_mut()).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (g, &x) in grow.iter_mut().zip(input) {
                    *g += d * x;
                }
                *gbias += d;
            }
        }
        if l > 0 {
            let w = &params.values[off..off + nw];
            let mut prev = vec![0.0; shape.inputs];
            for (row, &d) in w.chunks_exact(shape.inputs).zip(&delta) {
                if d == 0.0 {
                    continue;
                }
                for (p, &a) in prev.iter_mut().zip(row) {
                    *p += d * a;
                }
            }
            delta = prev;
        }
    }
    Ok(())
}

pub fn forward(spec: &NetworkSpec, params: &ParameterVector, xi: &[f64], t: f64) -> Result<Vec<f64>> {
    Ok(run_forward(spec, params, xi, t)?.output)
}

/// Gradient of `upstream . forward(params)` with respect to `params`.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParameterVector,
    xi: &[f64],
    t: f64,
    upstream: &[f64],
) -> Result<ParameterVector> {
    let tape = run_forward(spec, params, xi, t)?;
    let mut grad = vec![0.0; params.len()];
    run_backward(spec, params, &tape, upstream, &mut grad)?;
    Ok(ParameterVector { values: grad, layout: params.layout.clone() })
}

/// A network spec together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: NetworkSpec,
    pub params: ParameterVector,
}

impl Mlp {
    pub fn new(spec: NetworkSpec, params: ParameterVector) -> Result<Self> {
        spec.validate()?;
        if params.layout != spec.layout() {
            return Err(shape_err("parameter layout does not match network spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = ParameterVector::init(&spec, rng);
        Ok(Self { spec, params })
    }
}

impl Network for Mlp {
    fn output_width(&self) -> usize {
        self.spec.output_width
    }

    fn forward(&self, xi: &[f64], t: f64) -> Result<Vec<f64>> {
        forward(&self.spec, &self.params, xi, t)
    }

    fn param_count(&self) -> usize {
        self.params.len()
    }

    fn forward_backward(
        &self,
        xi: &[f64],
        t: f64,
        upstream: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        let tape = run_forward(&self.spec, &self.params, xi, t)?;
        let up = upstream(&tape.output)?;
        run_backward(&self.spec, &self.params, &tape, &up, grad)?;
        Ok(tape.output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(BfnError::Argument(format!("learning rate must be positive, got {learning_rate}")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => param_count,
        };
        Ok(Self {
            kind,
            learning_rate,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. A non-finite gradient leaves both the
    /// state and the parameters untouched.
    pub fn step(&mut self, params: &mut ParameterVector, gradient: &[f64]) -> Result<()> {
        if gradient.len() != params.len() {
            return Err(shape_err(format!(
                "gradient has {} entries, parameters have {}",
                gradient.len(),
                params.len()
            )));
        }
        if gradient.iter().any(|g| !g.is_finite()) {
            return Err(BfnError::Numeric("non-finite gradient, step rejected".into()));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.values.iter_mut().zip(gradient) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    return Err(shape_err("optimizer moments do not match parameter count"));
                }
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for (((p, &g), m), v) in params
                    .values
                    .iter_mut()
                    .zip(gradient)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(activation: Activation, time_embedding: TimeEmbedding) -> NetworkSpec {
        NetworkSpec {
            input_width: 3,
            hidden_widths: vec![6, 5],
            output_width: 4,
            activation,
            time_embedding,
            heads: vec![HeadBlock::Continuous, HeadBlock::Categorical(3)],
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = small_spec(Activation::Silu, TimeEmbedding::Sinusoidal { frequencies: 2 });
        let params = ParameterVector::zeros(&spec);
        let out = forward(&spec, &params, &[0.3, -2.0, 5.0], 0.7).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let spec = small_spec(Activation::Tanh, TimeEmbedding::ScalarConcat);
        let params = ParameterVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        let a = forward(&spec, &params, &[0.1, 0.2, 0.3], 0.4).unwrap();
        let b = forward(&spec, &params, &[0.1, 0.2, 0.3], 0.4).unwrap();
        assert_eq!(a, b);
        let again = ParameterVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(again, params);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let spec = small_spec(Activation::Relu, TimeEmbedding::ScalarConcat);
        let params = ParameterVector::zeros(&spec);
        assert!(matches!(forward(&spec, &params, &[0.0; 2], 0.0), Err(BfnError::Shape(_))));
    }

    #[test]
    fn continuous_head_is_squashed() {
        let spec = small_spec(Activation::Relu, TimeEmbedding::ScalarConcat);
        let mut params = ParameterVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(9));
        for v in params.values_mut() {
            *v *= 40.0;
        }
        let out = forward(&spec, &params, &[1.0, 1.0, 1.0], 1.0).unwrap();
        assert!(out[0].abs() <= 1.0);
    }

    #[test]
    fn single_linear_layer_gradient() {
        // A hidden layer is mandatory; behind a unit-weight output layer the
        // first weight sees the plain linear-layer gradient.
        let spec = NetworkSpec {
            input_width: 1,
            hidden_widths: vec![1],
            output_width: 1,
            activation: Activation::Relu,
            time_embedding: TimeEmbedding::ScalarConcat,
            heads: vec![HeadBlock::Categorical(1)],
        };
        // layer0: w=[w_x, w_t], b ; layer1: w=[1], b=0
        let params = ParameterVector::new(vec![2.0, 0.0, 0.0, 1.0, 0.0], spec.layout()).unwrap();
        let g = backward(&spec, &params, &[3.0], 0.0, &[1.0]).unwrap();
        assert_eq!(g.values()[0], 3.0);
        assert_eq!(g.values()[3], 6.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let spec = small_spec(Activation::Silu, TimeEmbedding::ScalarConcat);
        let params = ParameterVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        let g = backward(&spec, &params, &[0.5, 0.1, -0.3], 0.2, &[0.0; 4]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    fn finite_difference_check(activation: Activation, time_embedding: TimeEmbedding) {
        let spec = small_spec(activation, time_embedding);
        assert!(spec.param_count() <= 200, "{}", spec.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = ParameterVector::init(&spec, &mut rng);
        let xi = [0.37, -0.81, 0.45];
        let t = 0.63;
        let upstream = [0.7, -1.3, 0.4, 0.9];
        let objective = |p: &ParameterVector| -> f64 {
            forward(&spec, p, &xi, t).unwrap().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let g = backward(&spec, &params, &xi, t, &upstream).unwrap();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let an = g.values()[i];
            let scale = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / scale < 1e-4, "{activation:?} param {i}: fd={fd} analytic={an}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Silu, Activation::Relu] {
            for emb in [TimeEmbedding::ScalarConcat, TimeEmbedding::Sinusoidal { frequencies: 2 }] {
                finite_difference_check(act, emb);
            }
        }
    }

    #[test]
    fn sgd_step() {
        let spec = NetworkSpec {
            input_width: 1,
            hidden_widths: vec![1],
            output_width: 1,
            activation: Activation::Tanh,
            time_embedding: TimeEmbedding::ScalarConcat,
            heads: vec![HeadBlock::Continuous],
        };
        let mut params = ParameterVector::new(vec![1.0; 5], spec.layout()).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1, params.len()).unwrap();
        opt.step(&mut params, &[2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((params.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(params.values()[1], 1.0);
    }

    #[test]
    fn adam_first_step_moves_against_gradient() {
        let layout = vec![LayerShape { inputs: 1, outputs: 2 }];
        let mut params = ParameterVector::new(vec![0.0; 4], layout).unwrap();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 4).unwrap();
        let g = [3.0, -0.5, 1e-3, 0.0];
        opt.step(&mut params, &g).unwrap();
        for (p, g) in params.values().iter().zip(&g) {
            if *g == 0.0 {
                assert_eq!(*p, 0.0);
            } else {
                assert_eq!(p.signum(), -g.signum());
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let layout = vec![LayerShape { inputs: 1, outputs: 1 }];
        let mut params = ParameterVector::new(vec![0.5, 0.5], layout).unwrap();
        let before = params.clone();
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 2).unwrap();
        assert!(matches!(opt.step(&mut params, &[f64::NAN, 0.0]), Err(BfnError::Numeric(_))));
        assert_eq!(params, before);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn parameter_bytes_round_trip() {
        let spec = small_spec(Activation::Silu, TimeEmbedding::Sinusoidal { frequencies: 3 });
        let params = ParameterVector::init(&spec, &mut ChaCha8Rng::seed_from_u64(77));
        let bytes = params.to_le_bytes();
        let back = ParameterVector::from_le_bytes(&bytes, spec.layout()).unwrap();
        assert_eq!(
            back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(ParameterVector::from_le_bytes(&bytes[..bytes.len() - 8], spec.layout()).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = small_spec(Activation::Silu, TimeEmbedding::ScalarConcat);
        spec.hidden_widths.clear();
        assert!(spec.validate().is_err());
        let mut spec = small_spec(Activation::Silu, TimeEmbedding::ScalarConcat);
        spec.heads.pop();
        assert!(spec.validate().is_err());
    }
}
