//! Sender and receiver construction, the training losses, and the ancestral
//! sampler.
//!
//! A data row is a slice of `f64` in schema order: continuous entries lie in
//! `[-1, 1]`, categorical entries hold the class index.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_unit_time, shape_err, BfnError, Result};
use crate::flow::{
    categorical_flow_at, categorical_sender_into, categorical_update, gaussian_flow_at, gaussian_update,
    CategoricalParams, GaussianParams, NoisySample,
};
use crate::model::{HeadBlock, Network};
use crate::schedule::{AccuracySchedule, ScheduleSet};

const PROB_FLOOR: f64 = 1e-30;
const GAMMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariableKind {
    Continuous,
    Categorical { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<VariableKind>", into = "Vec<VariableKind>")]
pub struct DataSchema {
    variables: Vec<VariableKind>,
}

impl TryFrom<Vec<VariableKind>> for DataSchema {
    type Error = BfnError;

    fn try_from(variables: Vec<VariableKind>) -> Result<Self> {
        Self::new(variables)
    }
}

impl From<DataSchema> for Vec<VariableKind> {
    fn from(s: DataSchema) -> Self {
        s.variables
    }
}

impl DataSchema {
    pub fn new(variables: Vec<VariableKind>) -> Result<Self> {
        if variables.is_empty() {
            return Err(BfnError::Argument("schema has no variables".into()));
        }
        if variables.iter().any(|v| matches!(v, VariableKind::Categorical { classes } if *classes < 2)) {
            return Err(BfnError::Argument("categorical variables need at least 2 classes".into()));
        }
        Ok(Self { variables })
    }

    pub fn continuous(dims: usize) -> Result<Self> {
        Self::new(vec![VariableKind::Continuous; dims])
    }

    pub fn categorical(vars: usize, classes: usize) -> Result<Self> {
        Self::new(vec![VariableKind::Categorical { classes }; vars])
    }

    pub fn variables(&self) -> &[VariableKind] {
        &self.variables
    }

    pub fn total_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn continuous_count(&self) -> usize {
        self.variables.iter().filter(|v| matches!(v, VariableKind::Continuous)).count()
    }

    pub fn categorical_classes(&self) -> Vec<usize> {
        self.variables
            .iter()
            .filter_map(|v| match v {
                VariableKind::Categorical { classes } => Some(*classes),
                VariableKind::Continuous => None,
            })
            .collect()
    }

    pub fn is_continuous_only(&self) -> bool {
        self.continuous_count() == self.total_vars()
    }

    /// Width of the network's data features (and of its outputs).
    pub fn feature_width(&self) -> usize {
        self.heads().iter().map(HeadBlock::width).sum()
    }

    pub fn heads(&self) -> Vec<HeadBlock> {
        self.variables
            .iter()
            .map(|v| match v {
                VariableKind::Continuous => HeadBlock::Continuous,
                VariableKind::Categorical { classes } => HeadBlock::Categorical(*classes),
            })
            .collect()
    }

    pub fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.variables.len() {
            return Err(shape_err(format!("row has {} values, schema has {}", row.len(), self.variables.len())));
        }
        for (d, (v, &x)) in self.variables.iter().zip(row).enumerate() {
            match v {
                VariableKind::Continuous if !(-1.0..=1.0).contains(&x) => {
                    return Err(shape_err(format!("variable {d}: continuous value {x} outside [-1, 1]")));
                }
                VariableKind::Categorical { classes }
                    if !(x >= 0.0 && x.fract() == 0.0 && (x as usize) < *classes) =>
                {
                    return Err(shape_err(format!("variable {d}: {x} is not a class index below {classes}")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Splits a row into its continuous values and categorical class indices.
    pub fn split_row(&self, row: &[f64]) -> (Vec<f64>, Vec<usize>) {
        let mut cont = Vec::with_capacity(self.continuous_count());
        let mut cat = Vec::new();
        for (v, &x) in self.variables.iter().zip(row) {
            match v {
                VariableKind::Continuous => cont.push(x),
                VariableKind::Categorical { .. } => cat.push(x as usize),
            }
        }
        (cont, cat)
    }
}

/// Input-distribution parameters for every variable of a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub gaussian: Option<GaussianParams>,
    pub categorical: Option<CategoricalParams>,
}

impl BeliefState {
    /// Zero-mean unit-precision Gaussians and uniform categoricals.
    pub fn prior(schema: &DataSchema) -> Self {
        let nc = schema.continuous_count();
        let classes = schema.categorical_classes();
        Self {
            gaussian: (nc > 0).then(|| GaussianParams::standard_prior(nc)),
            categorical: (!classes.is_empty()).then(|| CategoricalParams::uniform(&classes)),
        }
    }
}

/// The network's per-variable output: point estimates for continuous
/// variables and class probabilities for categorical ones.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputDistribution {
    pub xhat: Vec<f64>,
    pub probs: Option<CategoricalParams>,
}

struct Schedules {
    cont: AccuracySchedule,
    cat: AccuracySchedule,
}

impl Schedules {
    fn new(set: &ScheduleSet) -> Result<Self> {
        Ok(Self { cont: set.continuous()?, cat: set.categorical()? })
    }
}

fn flow_draw<R: Rng + ?Sized>(
    schema: &DataSchema,
    cont_x: &[f64],
    cat_x: &[usize],
    beta_cont: f64,
    beta_cat: f64,
    rng: &mut R,
) -> Result<BeliefState> {
    let prior = BeliefState::prior(schema);
    Ok(BeliefState {
        gaussian: prior.gaussian.map(|g| gaussian_flow_at(&g, cont_x, beta_cont, rng)).transpose()?,
        categorical: prior.categorical.map(|c| categorical_flow_at(&c, cat_x, beta_cat, rng)).transpose()?,
    })
}

/// Flattened network features: continuous means rescaled by
/// `1 / max(gamma(t), 1e-3)`, categorical probabilities recentred as
/// `2 theta - 1`, in schema order.
pub fn network_input(schema: &DataSchema, belief: &BeliefState, schedules: &ScheduleSet, t: f64) -> Result<Vec<f64>> {
    check_unit_time(t)?;
    let gamma = schedules.continuous()?.gamma(t)?.max(GAMMA_FLOOR);
    let mut out = Vec::with_capacity(schema.feature_width());
    let (mut ci, mut ki) = (0, 0);
    for v in schema.variables() {
        match v {
            VariableKind::Continuous => {
                let g = belief.gaussian.as_ref().ok_or_else(|| shape_err("belief lacks Gaussian part"))?;
                out.push(g.mean()[ci] / gamma);
                ci += 1;
            }
            VariableKind::Categorical { .. } => {
                let c = belief.categorical.as_ref().ok_or_else(|| shape_err("belief lacks categorical part"))?;
                out.extend(c.row(ki).iter().map(|p| 2.0 * p - 1.0));
                ki += 1;
            }
        }
    }
    Ok(out)
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    log_softmax(scores).into_iter().map(f64::exp).collect()
}

fn check_outputs(schema: &DataSchema, raw: &[f64]) -> Result<()> {
    if raw.len() != schema.feature_width() {
        return Err(shape_err(format!("network returned {} outputs, schema needs {}", raw.len(), schema.feature_width())));
    }
    Ok(())
}

/// Interprets raw head outputs under the schema.
pub fn interpret_outputs(schema: &DataSchema, raw: &[f64]) -> Result<OutputDistribution> {
    check_outputs(schema, raw)?;
    let mut xhat = Vec::with_capacity(schema.continuous_count());
    let mut probs = Vec::new();
    let mut classes = Vec::new();
    let mut o = 0;
    for v in schema.variables() {
        match v {
            VariableKind::Continuous => {
                xhat.push(raw[o].clamp(-1.0, 1.0));
                o += 1;
            }
            VariableKind::Categorical { classes: k } => {
                probs.extend(softmax(&raw[o..o + k]));
                classes.push(*k);
                o += k;
            }
        }
    }
    let probs = if classes.is_empty() { None } else { Some(CategoricalParams::new(probs, classes)?) };
    Ok(OutputDistribution { xhat, probs })
}

pub fn output_distribution(
    schema: &DataSchema,
    belief: &BeliefState,
    t: f64,
    net: &dyn Network,
    schedules: &ScheduleSet,
) -> Result<OutputDistribution> {
    let input = network_input(schema, belief, schedules, t)?;
    interpret_outputs(schema, &net.forward(&input, t)?)
}

/// Noisy observation of `x` at accuracy `alpha`, laid out like the network
/// outputs (one value per continuous variable, `K` per categorical one).
pub fn sender_sample<R: Rng + ?Sized>(x: &[f64], alpha: f64, schema: &DataSchema, rng: &mut R) -> Result<NoisySample> {
    schema.check_row(x)?;
    if !(alpha > 0.0) {
        return Err(BfnError::Argument(format!("accuracy must be positive, got {alpha}")));
    }
    let std = alpha.sqrt().recip();
    let mut values = Vec::with_capacity(schema.feature_width());
    for (v, &xd) in schema.variables().iter().zip(x) {
        match v {
            VariableKind::Continuous => {
                let z: f64 = rng.sample(StandardNormal);
                values.push(xd + std * z);
            }
            VariableKind::Categorical { classes } => {
                categorical_sender_into(&[xd as usize], &[*classes], alpha, rng, &mut values);
            }
        }
    }
    NoisySample::new(values, alpha)
}

/// Monte-Carlo estimate of `KL(sender || receiver)` for one categorical
/// variable with true class `class`, output log-probabilities `log_p`, and
/// accuracy `alpha`. Adds the gradient with respect to the output scores into
/// `score_grad` (scaled by `weight`).
///
/// With Gaussian components sharing covariance `alpha K I`, the log-density
/// ratio of a draw `y` collapses to `y_class - logsumexp(log_p + y)`. The
/// estimate subtracts the zero-mean first- and second-order Taylor terms of
/// that ratio around the sender mean, which keeps it unbiased.
fn categorical_kl<R: Rng + ?Sized>(
    class: usize,
    log_p: &[f64],
    alpha: f64,
    mc_samples: usize,
    rng: &mut R,
    weight: f64,
    score_grad: Option<&mut [f64]>,
) -> f64 {
    let k = log_p.len();
    let kf = k as f64;
    let var = alpha * kf;
    let std = var.sqrt();
    let mean: Vec<f64> = (0..k).map(|c| alpha * (if c == class { kf } else { 0.0 } - 1.0)).collect();
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    // responsibilities at the sender mean
    let at_mean: Vec<f64> = log_p.iter().zip(&mean).map(|(l, m)| l + m).collect();
    let rbar = softmax(&at_mean);
    let rbar_sq: f64 = rbar.iter().map(|r| r * r).sum();
    let trace_h = 1.0 - rbar_sq;

    let mut total = 0.0;
    let mut grad = vec![0.0; k];
    let mut delta = vec![0.0; k];
    let mut shifted = vec![0.0; k];
    for _ in 0..mc_samples {
        for d in delta.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *d = std * z;
        }
        for c in 0..k {
            shifted[c] = log_p[c] + mean[c] + delta[c];
        }
        let r = softmax(&shifted);
        let lmax = shifted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = lmax + shifted.iter().map(|s| (s - lmax).exp()).sum::<f64>().ln();
        let ratio = mean[class] + delta[class] - lse;

        let dot: f64 = delta.iter().zip(&rbar).map(|(d, r)| d * r).sum();
        let weighted_sq: f64 = delta.iter().zip(&rbar).map(|(d, r)| r * d * d).sum();
        let quad = weighted_sq - dot * dot;
        let linear_cv = delta[class] - dot;
        let quad_cv = 0.5 * (quad - var * trace_h);
        total += ratio - linear_cv + quad_cv;

        for j in 0..k {
            // d ratio / d s_j = p_j - r_j
            let mut g = p[j] - r[j];
            // d dot / d s_j = rbar_j (delta_j - dot)
            let ddot = rbar[j] * (delta[j] - dot);
            g += ddot;
            let dweighted = rbar[j] * (delta[j] * delta[j] - weighted_sq);
            let drbar_sq = 2.0 * rbar[j] * (rbar[j] - rbar_sq);
            g += 0.5 * (dweighted - 2.0 * dot * ddot + var * drbar_sq);
            grad[j] += g;
        }
    }
    let n = mc_samples as f64;
    if let Some(sg) = score_grad {
        for (s, g) in sg.iter_mut().zip(&grad) {
            *s += weight * g / n;
        }
    }
    total / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// Every one of the `n` steps, each with its own flow draw.
    DiscreteTime { mc_samples: usize },
    /// One uniformly chosen step per row, scaled by `n`; same expectation as
    /// `DiscreteTime` at a fraction of the cost.
    DiscreteTimeSampled { mc_samples: usize },
    /// The `n -> infinity` limit with `t_samples` stratified times per row.
    ContinuousTime { t_samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total_nats: f64,
    pub per_step: Vec<f64>,
    pub bits_per_dim: f64,
    pub continuous_nats: f64,
    pub categorical_nats: f64,
}

impl LossReport {
    fn from_parts(schema: &DataSchema, continuous_nats: f64, categorical_nats: f64, per_step: Vec<f64>) -> Self {
        let total_nats = continuous_nats + categorical_nats;
        Self {
            total_nats,
            per_step,
            bits_per_dim: nats_to_bits_per_dim(total_nats, schema.total_vars()),
            continuous_nats,
            categorical_nats,
        }
    }
}

pub fn nats_to_bits_per_dim(nats: f64, dims: usize) -> f64 {
    nats / (dims as f64 * LN_2)
}

/// Per-step KL between sender and receiver at one flow draw. Continuous
/// variables use the point-mass receiver, giving `alpha/2 |x - xhat|^2`.
struct StepTerms {
    cont: f64,
    cat: f64,
}

#[allow(clippy::too_many_arguments)]
fn step_loss<R: Rng + ?Sized>(
    schema: &DataSchema,
    schedules: &ScheduleSet,
    net: &dyn Network,
    cont_x: &[f64],
    cat_x: &[usize],
    belief: &BeliefState,
    t: f64,
    alpha_cont: f64,
    alpha_cat: f64,
    weight: f64,
    mc_samples: usize,
    rng: &mut R,
    grad: Option<&mut [f64]>,
) -> Result<StepTerms> {
    let input = network_input(schema, belief, schedules, t)?;
    let mut terms = StepTerms { cont: 0.0, cat: 0.0 };
    let mut upstream = |raw: &[f64]| -> Result<Vec<f64>> {
        check_outputs(schema, raw)?;
        let mut g = vec![0.0; raw.len()];
        let (mut o, mut ci, mut ki) = (0, 0, 0);
        for v in schema.variables() {
            match v {
                VariableKind::Continuous => {
                    let diff = cont_x[ci] - raw[o];
                    terms.cont += 0.5 * alpha_cont * diff * diff;
                    g[o] = -weight * alpha_cont * diff;
                    o += 1;
                    ci += 1;
                }
                VariableKind::Categorical { classes } => {
                    let lp = log_softmax(&raw[o..o + classes]);
                    terms.cat += categorical_kl(
                        cat_x[ki],
                        &lp,
                        alpha_cat,
                        mc_samples,
                        &mut *rng,
                        weight,
                        Some(&mut g[o..o + classes]),
                    );
                    o += classes;
                    ki += 1;
                }
            }
        }
        Ok(g)
    };
    match grad {
        Some(buf) => {
            net.forward_backward(&input, t, &mut upstream, buf)?;
        }
        None => {
            let raw = net.forward(&input, t)?;
            upstream(&raw)?;
        }
    }
    Ok(terms)
}

fn row_loss<R: Rng + ?Sized>(
    x: &[f64],
    net: &dyn Network,
    schema: &DataSchema,
    schedules: &ScheduleSet,
    kind: LossKind,
    rng: &mut R,
    mut grad: Option<&mut [f64]>,
) -> Result<LossReport> {
    schema.check_row(x)?;
    let sch = Schedules::new(schedules)?;
    let (cont_x, cat_x) = schema.split_row(x);
    let n = schedules.n_steps;
    let nf = n as f64;
    match kind {
        LossKind::DiscreteTime { mc_samples } | LossKind::DiscreteTimeSampled { mc_samples } => {
            if mc_samples < 1 {
                return Err(BfnError::Argument("mc_samples must be at least 1".into()));
            }
            let alphas_c = sch.cont.step_alphas();
            let alphas_k = sch.cat.step_alphas();
            let (steps, weight): (Vec<usize>, f64) = match kind {
                LossKind::DiscreteTime { .. } => ((1..=n).collect(), 1.0),
                _ => (vec![rng.random_range(1..=n)], nf),
            };
            let (mut cont, mut cat) = (0.0, 0.0);
            let mut per_step = Vec::with_capacity(steps.len());
            for i in steps {
                let t = (i - 1) as f64 / nf;
                let belief = flow_draw(
                    schema,
                    &cont_x,
                    &cat_x,
                    sch.cont.beta_unchecked(t),
                    sch.cat.beta_unchecked(t),
                    rng,
                )?;
                let terms = step_loss(
                    schema,
                    schedules,
                    net,
                    &cont_x,
                    &cat_x,
                    &belief,
                    t,
                    alphas_c[i - 1],
                    alphas_k[i - 1],
                    weight,
                    mc_samples,
                    rng,
                    grad.as_deref_mut(),
                )?;
                cont += weight * terms.cont;
                cat += weight * terms.cat;
                per_step.push(weight * (terms.cont + terms.cat));
            }
            Ok(LossReport::from_parts(schema, cont, cat, per_step))
        }
        LossKind::ContinuousTime { t_samples } => {
            if !schema.is_continuous_only() {
                return Err(BfnError::UnsupportedSchema(
                    "continuous-time loss needs an all-continuous schema".into(),
                ));
            }
            if t_samples < 1 {
                return Err(BfnError::Argument("t_samples must be at least 1".into()));
            }
            let weight = 1.0 / t_samples as f64;
            let mut cont = 0.0;
            for j in 0..t_samples {
                let u: f64 = rng.random();
                let t = (j as f64 + u) / t_samples as f64;
                let belief = flow_draw(schema, &cont_x, &cat_x, sch.cont.beta_unchecked(t), 0.0, rng)?;
                let rate = sch.cont.alpha_rate(t)?;
                let terms = step_loss(
                    schema, schedules, net, &cont_x, &cat_x, &belief, t, rate, 0.0, weight, 1, rng,
                    grad.as_deref_mut(),
                )?;
                cont += weight * terms.cont;
            }
            Ok(LossReport::from_parts(schema, cont, 0.0, Vec::new()))
        }
    }
}

/// Monte-Carlo estimate of the `n`-step loss for one row, with `n` taken from
/// the schedule.
pub fn discrete_time_loss<R: Rng + ?Sized>(
    x: &[f64],
    net: &dyn Network,
    schema: &DataSchema,
    schedules: &ScheduleSet,
    rng: &mut R,
    mc_samples: usize,
) -> Result<LossReport> {
    row_loss(x, net, schema, schedules, LossKind::DiscreteTime { mc_samples }, rng, None)
}

pub fn continuous_time_loss<R: Rng + ?Sized>(
    x: &[f64],
    net: &dyn Network,
    schema: &DataSchema,
    schedules: &ScheduleSet,
    rng: &mut R,
    t_samples: usize,
) -> Result<LossReport> {
    row_loss(x, net, schema, schedules, LossKind::ContinuousTime { t_samples }, rng, None)
}

/// `-ln p_O(x | theta(1))` for a single flow draw at `t = 1`. Continuous
/// variables are scored under `Normal(xhat, sigma1^2)`.
pub fn reconstruction_loss<R: Rng + ?Sized>(
    x: &[f64],
    net: &dyn Network,
    schema: &DataSchema,
    schedules: &ScheduleSet,
    rng: &mut R,
) -> Result<f64> {
    schema.check_row(x)?;
    let sch = Schedules::new(schedules)?;
    let (cont_x, cat_x) = schema.split_row(x);
    let belief = flow_draw(schema, &cont_x, &cat_x, sch.cont.beta_unchecked(1.0), sch.cat.beta_unchecked(1.0), rng)?;
    let out = output_distribution(schema, &belief, 1.0, net, schedules)?;
    let s2 = schedules.sigma1 * schedules.sigma1;
    let mut nats = 0.0;
    for (xd, xh) in cont_x.iter().zip(&out.xhat) {
        nats += 0.5 * (2.0 * std::f64::consts::PI * s2).ln() + (xd - xh).powi(2) / (2.0 * s2);
    }
    if let Some(probs) = &out.probs {
        for (d, &c) in cat_x.iter().enumerate() {
            nats -= probs.row(d)[c].max(PROB_FLOOR).ln();
        }
    }
    Ok(nats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalReadout {
    #[default]
    Argmax,
    Sample,
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Ancestral sampling with `n_steps` sender/update rounds starting from the
/// prior.
pub fn sample<R: Rng + ?Sized>(
    net: &dyn Network,
    schedules: &ScheduleSet,
    schema: &DataSchema,
    rng: &mut R,
    n_steps: usize,
    readout: CategoricalReadout,
) -> Result<Vec<f64>> {
    if n_steps < 1 {
        return Err(BfnError::Argument("n_steps must be at least 1".into()));
    }
    let schedules = schedules.with_steps(n_steps);
    let sch = Schedules::new(&schedules)?;
    let alphas_c = sch.cont.step_alphas();
    let alphas_k = sch.cat.step_alphas();
    let mut belief = BeliefState::prior(schema);
    let classes = schema.categorical_classes();
    let nf = n_steps as f64;
    for i in 1..=n_steps {
        let t = (i - 1) as f64 / nf;
        let out = output_distribution(schema, &belief, t, net, &schedules)?;
        if let Some(g) = &belief.gaussian {
            let std = alphas_c[i - 1].sqrt().recip();
            let y = out
                .xhat
                .iter()
                .map(|&xh| {
                    let z: f64 = rng.sample(StandardNormal);
                    xh + std * z
                })
                .collect();
            belief.gaussian = Some(gaussian_update(g, &NoisySample::new(y, alphas_c[i - 1])?)?);
        }
        if let (Some(c), Some(probs)) = (&belief.categorical, &out.probs) {
            let drawn: Vec<usize> = (0..probs.vars()).map(|d| sample_index(probs.row(d), rng)).collect();
            let mut y = Vec::with_capacity(c.width());
            categorical_sender_into(&drawn, &classes, alphas_k[i - 1], rng, &mut y);
            belief.categorical = Some(categorical_update(c, &NoisySample::new(y, alphas_k[i - 1])?)?);
        }
    }
    let out = output_distribution(schema, &belief, 1.0, net, &schedules)?;
    let mut row = Vec::with_capacity(schema.total_vars());
    let (mut ci, mut ki) = (0, 0);
    for v in schema.variables() {
        match v {
            VariableKind::Continuous => {
                row.push(out.xhat[ci]);
                ci += 1;
            }
            VariableKind::Categorical { .. } => {
                let probs = out.probs.as_ref().expect("categorical output present").row(ki);
                let c = match readout {
                    CategoricalReadout::Argmax => argmax(probs),
                    CategoricalReadout::Sample => sample_index(probs, rng),
                };
                row.push(c as f64);
                ki += 1;
            }
        }
    }
    Ok(row)
}

/// Independent RNG stream for one row of a batch.
pub fn row_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `count` samples in parallel, one RNG stream per sample.
pub fn sample_many<R: Rng + ?Sized>(
    net: &dyn Network,
    schedules: &ScheduleSet,
    schema: &DataSchema,
    rng: &mut R,
    n_steps: usize,
    readout: CategoricalReadout,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let seed = rng.next_u64();
    (0..count)
        .into_par_iter()
        .map(|i| sample(net, schedules, schema, &mut row_rng(seed, i), n_steps, readout))
        .collect()
}

/// Mean loss over the batch and its exact gradient with respect to the
/// network parameters. Flow and sender draws are constants of the gradient;
/// each row draws from its own stream derived from one `u64` taken from `rng`.
pub fn batch_loss<R: Rng + ?Sized>(
    rows: &[&[f64]],
    net: &dyn Network,
    schema: &DataSchema,
    schedules: &ScheduleSet,
    rng: &mut R,
    kind: LossKind,
) -> Result<(LossReport, Vec<f64>)> {
    batch_loss_seeded(rows, net, schema, schedules, rng.next_u64(), kind)
}

pub fn batch_loss_seeded(
    rows: &[&[f64]],
    net: &dyn Network,
    schema: &DataSchema,
    schedules: &ScheduleSet,
    seed: u64,
    kind: LossKind,
) -> Result<(LossReport, Vec<f64>)> {
    if rows.is_empty() {
        return Err(BfnError::Argument("empty batch".into()));
    }
    let pc = net.param_count();
    let per_row: Vec<(LossReport, Vec<f64>)> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut grad = vec![0.0; pc];
            let mut rng = row_rng(seed, i);
            let report = row_loss(row, net, schema, schedules, kind, &mut rng, Some(&mut grad))?;
            Ok((report, grad))
        })
        .collect::<Result<_>>()?;

    let b = rows.len() as f64;
    let mut grad = vec![0.0; pc];
    let (mut cont, mut cat) = (0.0, 0.0);
    let mut per_step: Vec<f64> = Vec::new();
    for (report, g) in &per_row {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v / b;
        }
        cont += report.continuous_nats / b;
        cat += report.categorical_nats / b;
        if per_step.len() < report.per_step.len() {
            per_step.resize(report.per_step.len(), 0.0);
        }
        for (acc, v) in per_step.iter_mut().zip(&report.per_step) {
            *acc += v / b;
        }
    }
    Ok((LossReport::from_parts(schema, cont, cat, per_step), grad))
}
