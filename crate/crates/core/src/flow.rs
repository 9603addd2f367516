//! Bayesian updates of the input distribution and their closed-form flows.
//!
//! Every variable is updated independently. Continuous variables carry a
//! Gaussian belief `(mean, precision)`; categorical variables carry a
//! probability vector over their `K` classes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_unit_time, shape_err, BfnError, Result};
use crate::schedule::{AccuracySchedule, ScheduleKind};

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    precision: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, precision: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != precision.len() {
            return Err(shape_err(format!(
                "mean has {} entries, precision has {}",
                mean.len(),
                precision.len()
            )));
        }
        if let Some(p) = precision.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(BfnError::Numeric(format!("precision must be positive and finite, got {p}")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(BfnError::Numeric("non-finite mean".into()));
        }
        Ok(Self { mean, precision })
    }

    /// Zero mean, unit precision.
    pub fn standard_prior(dims: usize) -> Self {
        Self { mean: vec![0.0; dims], precision: vec![1.0; dims] }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Probability vectors for `D` categorical variables, stored row after row.
/// Variables may have different class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalParams {
    probs: Vec<f64>,
    classes: Vec<usize>,
    offsets: Vec<usize>,
}

fn offsets_for(classes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    classes
        .iter()
        .map(|k| {
            let o = acc;
            acc += k;
            o
        })
        .collect()
}

impl CategoricalParams {
    pub fn new(probs: Vec<f64>, classes: Vec<usize>) -> Result<Self> {
        if classes.is_empty() {
            return Err(shape_err("no categorical variables"));
        }
        if let Some(k) = classes.iter().find(|k| **k < 2) {
            return Err(shape_err(format!("categorical variable needs K >= 2, got {k}")));
        }
        let total: usize = classes.iter().sum();
        if probs.len() != total {
            return Err(shape_err(format!("expected {total} probabilities, got {}", probs.len())));
        }
        let offsets = offsets_for(&classes);
        let params = Self { probs, classes, offsets };
        for d in 0..params.classes.len() {
            let row = params.row(d);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(BfnError::Numeric(format!("row {d} has entries outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(BfnError::Numeric(format!("row {d} sums to {s}")));
            }
        }
        Ok(params)
    }

    /// Equal `K x K` matrix layout: `rows` variables with `k` classes each.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.iter().map(Vec::len).collect();
        Self::new(rows.iter().flatten().copied().collect(), classes)
    }

    pub fn uniform(classes: &[usize]) -> Self {
        let probs = classes.iter().flat_map(|&k| std::iter::repeat_n(1.0 / k as f64, k)).collect();
        Self { probs, classes: classes.to_vec(), offsets: offsets_for(classes) }
    }

    pub fn row(&self, d: usize) -> &[f64] {
        let o = self.offsets[d];
        &self.probs[o..o + self.classes[d]]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn vars(&self) -> usize {
        self.classes.len()
    }

    pub fn width(&self) -> usize {
        self.probs.len()
    }
}

/// A noisy observation `y` of the data drawn with precision `accuracy`.
/// Categorical samples hold one block of `K` values per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    values: Vec<f64>,
    accuracy: f64,
}

impl NoisySample {
    pub fn new(values: Vec<f64>, accuracy: f64) -> Result<Self> {
        if !(accuracy > 0.0) || accuracy.is_nan() {
            return Err(BfnError::Argument(format!("accuracy must be positive, got {accuracy}")));
        }
        Ok(Self { values, accuracy })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }
}

pub fn gaussian_update(prior: &GaussianParams, y: &NoisySample) -> Result<GaussianParams> {
    if y.values.len() != prior.dims() {
        return Err(shape_err(format!(
            "sample has {} dims, prior has {}",
            y.values.len(),
            prior.dims()
        )));
    }
    let alpha = y.accuracy;
    let mut mean = Vec::with_capacity(prior.dims());
    let mut precision = Vec::with_capacity(prior.dims());
    for ((&mu, &rho), &obs) in prior.mean.iter().zip(&prior.precision).zip(&y.values) {
        let rho_next = rho + alpha;
        mean.push((rho * mu + alpha * obs) / rho_next);
        precision.push(rho_next);
    }
    GaussianParams::new(mean, precision)
}

/// Log-space `theta * exp(y)` renormalisation of one row. Zero-mass classes
/// stay at zero.
fn reweight_row(prior: &[f64], y: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for ((o, &p), &v) in out.iter_mut().zip(prior).zip(y) {
        *o = if p > 0.0 { p.ln() + v } else { f64::NEG_INFINITY };
        max = max.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn categorical_update(prior: &CategoricalParams, y: &NoisySample) -> Result<CategoricalParams> {
    if y.values.len() != prior.width() {
        return Err(shape_err(format!(
            "sample has {} values, prior has {}",
            y.values.len(),
            prior.width()
        )));
    }
    if y.values.iter().any(|v| !v.is_finite()) {
        return Err(BfnError::Numeric("non-finite categorical observation".into()));
    }
    let mut probs = vec![0.0; prior.width()];
    for d in 0..prior.vars() {
        let o = prior.offsets[d];
        let k = prior.classes[d];
        reweight_row(prior.row(d), &y.values[o..o + k], &mut probs[o..o + k]);
    }
    Ok(CategoricalParams { probs, classes: prior.classes.clone(), offsets: prior.offsets.clone() })
}

fn continuous_only(schedule: &AccuracySchedule) -> Result<()> {
    match schedule.kind() {
        ScheduleKind::Continuous { .. } => Ok(()),
        _ => Err(BfnError::Argument("gaussian flow needs a continuous schedule".into())),
    }
}

fn categorical_only(schedule: &AccuracySchedule) -> Result<()> {
    match schedule.kind() {
        ScheduleKind::Categorical { .. } => Ok(()),
        _ => Err(BfnError::Argument("categorical flow needs a categorical schedule".into())),
    }
}

/// One draw of the Gaussian input parameters after absorbing `beta(t)` worth
/// of evidence about `x`.
pub fn gaussian_flow<R: Rng + ?Sized>(
    prior: &GaussianParams,
    x: &[f64],
    schedule: &AccuracySchedule,
    t: f64,
    rng: &mut R,
) -> Result<GaussianParams> {
    check_unit_time(t)?;
    continuous_only(schedule)?;
    let beta = schedule.beta(t)?;
    gaussian_flow_at(prior, x, beta, rng)
}

pub(crate) fn gaussian_flow_at<R: Rng + ?Sized>(
    prior: &GaussianParams,
    x: &[f64],
    beta: f64,
    rng: &mut R,
) -> Result<GaussianParams> {
    if x.len() != prior.dims() {
        return Err(shape_err(format!("data has {} dims, prior has {}", x.len(), prior.dims())));
    }
    if beta == 0.0 {
        return Ok(prior.clone());
    }
    let moments = gaussian_flow_moments(prior, x, beta)?;
    let mut mean = Vec::with_capacity(x.len());
    for (centre, var) in moments.mean.iter().zip(&moments.variance) {
        let z: f64 = rng.sample(StandardNormal);
        mean.push(centre + var.sqrt() * z);
    }
    GaussianParams::new(mean, moments.precision)
}

/// Distribution of the Gaussian input parameters after `beta` worth of
/// evidence: the mean is normal with these moments, the precision is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFlowMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub precision: Vec<f64>,
}

pub fn gaussian_flow_moments(prior: &GaussianParams, x: &[f64], beta: f64) -> Result<GaussianFlowMoments> {
    if x.len() != prior.dims() {
        return Err(shape_err(format!("data has {} dims, prior has {}", x.len(), prior.dims())));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(BfnError::Domain(format!("accumulated accuracy {beta} must be finite and non-negative")));
    }
    let n = x.len();
    let mut m = GaussianFlowMoments { mean: Vec::with_capacity(n), variance: Vec::with_capacity(n), precision: Vec::with_capacity(n) };
    for ((&mu0, &rho0), &xd) in prior.mean.iter().zip(&prior.precision).zip(x) {
        let rho = rho0 + beta;
        m.mean.push((rho0 * mu0 + beta * xd) / rho);
        m.variance.push(beta / (rho * rho));
        m.precision.push(rho);
    }
    Ok(m)
}

fn check_classes(x: &[usize], classes: &[usize]) -> Result<()> {
    if x.len() != classes.len() {
        return Err(shape_err(format!("data has {} variables, prior has {}", x.len(), classes.len())));
    }
    for (d, (&xd, &k)) in x.iter().zip(classes).enumerate() {
        if xd >= k {
            return Err(shape_err(format!("variable {d}: class {xd} out of range for K={k}")));
        }
    }
    Ok(())
}

/// Adds a draw from `Normal(alpha * (K * onehot(class) - 1), alpha * K * I)`
/// to `out` block by block.
pub(crate) fn categorical_sender_into<R: Rng + ?Sized>(
    x: &[usize],
    classes: &[usize],
    alpha: f64,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    for (&xd, &k) in x.iter().zip(classes) {
        let kf = k as f64;
        let std = (alpha * kf).sqrt();
        for c in 0..k {
            let onehot = if c == xd { 1.0 } else { 0.0 };
            let z: f64 = rng.sample(StandardNormal);
            out.push(alpha * (kf * onehot - 1.0) + std * z);
        }
    }
}

/// One draw of the categorical input parameters at time `t`.
pub fn categorical_flow<R: Rng + ?Sized>(
    prior: &CategoricalParams,
    x: &[usize],
    schedule: &AccuracySchedule,
    t: f64,
    rng: &mut R,
) -> Result<CategoricalParams> {
    check_unit_time(t)?;
    categorical_only(schedule)?;
    let beta = schedule.beta(t)?;
    categorical_flow_at(prior, x, beta, rng)
}

pub(crate) fn categorical_flow_at<R: Rng + ?Sized>(
    prior: &CategoricalParams,
    x: &[usize],
    beta: f64,
    rng: &mut R,
) -> Result<CategoricalParams> {
    check_classes(x, &prior.classes)?;
    if beta == 0.0 {
        return Ok(prior.clone());
    }
    let mut y = Vec::with_capacity(prior.width());
    categorical_sender_into(x, &prior.classes, beta, rng, &mut y);
    categorical_update(prior, &NoisySample { values: y, accuracy: beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(values: Vec<f64>, alpha: f64) -> NoisySample {
        NoisySample::new(values, alpha).unwrap()
    }

    #[test]
    fn gaussian_update_examples() {
        let p = GaussianParams::new(vec![0.0], vec![1.0]).unwrap();
        let q = gaussian_update(&p, &sample(vec![2.0], 1.0)).unwrap();
        assert_relative_eq!(q.mean()[0], 1.0);
        assert_relative_eq!(q.precision()[0], 2.0);

        let p = GaussianParams::new(vec![1.0], vec![3.0]).unwrap();
        let q = gaussian_update(&p, &sample(vec![-1.0], 1.0)).unwrap();
        assert_relative_eq!(q.mean()[0], 0.5);
        assert_relative_eq!(q.precision()[0], 4.0);

        let p = GaussianParams::new(vec![0.3, -0.7], vec![2.0, 5.0]).unwrap();
        let q = gaussian_update(&p, &sample(vec![10.0, -10.0], 1e-12)).unwrap();
        for d in 0..2 {
            assert!((q.mean()[d] - p.mean()[d]).abs() < 1e-9);
            assert!((q.precision()[d] - p.precision()[d]).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_update_rejects_dimension_mismatch() {
        let p = GaussianParams::standard_prior(2);
        assert!(matches!(gaussian_update(&p, &sample(vec![1.0], 1.0)), Err(BfnError::Shape(_))));
    }

    #[test]
    fn gaussian_params_invariants() {
        assert!(GaussianParams::new(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianParams::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(GaussianParams::new(vec![], vec![]).is_err());
        assert!(NoisySample::new(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn merged_update_equals_sequential_updates() {
        let p = GaussianParams::new(vec![0.2, -0.4], vec![1.5, 3.0]).unwrap();
        let (a1, a2) = (0.7, 2.3);
        let y1 = [0.9, -1.2];
        let y2 = [-0.3, 0.5];
        let seq = gaussian_update(&gaussian_update(&p, &sample(y1.to_vec(), a1)).unwrap(), &sample(y2.to_vec(), a2))
            .unwrap();
        let a = a1 + a2;
        let merged_y = y1.iter().zip(&y2).map(|(u, v)| (a1 * u + a2 * v) / a).collect();
        let merged = gaussian_update(&p, &sample(merged_y, a)).unwrap();
        for d in 0..2 {
            assert!((seq.mean()[d] - merged.mean()[d]).abs() < 1e-12);
            assert!((seq.precision()[d] - merged.precision()[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn categorical_update_examples() {
        let p = CategoricalParams::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let q = categorical_update(&p, &sample(vec![2f64.ln(), 0.0], 1.0)).unwrap();
        assert_relative_eq!(q.row(0)[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(q.row(0)[1], 1.0 / 3.0, epsilon = 1e-12);

        let q = categorical_update(&p, &sample(vec![123.4, 123.4], 1.0)).unwrap();
        assert_relative_eq!(q.row(0)[0], 0.5, epsilon = 1e-12);

        let p = CategoricalParams::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let q = categorical_update(&p, &sample(vec![-50.0, 800.0], 1.0)).unwrap();
        assert_eq!(q.row(0), &[1.0, 0.0]);
    }

    #[test]
    fn categorical_update_rejects_non_finite() {
        let p = CategoricalParams::uniform(&[2]);
        assert!(matches!(
            categorical_update(&p, &sample(vec![f64::INFINITY, 0.0], 1.0)),
            Err(BfnError::Numeric(_))
        ));
    }

    #[test]
    fn categorical_update_preserves_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let k = rng.random_range(2..6);
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let p = CategoricalParams::from_rows(&[row]).unwrap();
            let y: Vec<f64> = (0..k).map(|_| rng.random_range(-300.0..300.0)).collect();
            let q = categorical_update(&p, &sample(y, 1.0)).unwrap();
            // revalidate through the checked constructor
            CategoricalParams::new(q.probs().to_vec(), q.classes().to_vec()).unwrap();
        }
    }

    #[test]
    fn flow_at_time_zero_is_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = AccuracySchedule::continuous(0.5, 1).unwrap();
        let p = GaussianParams::new(vec![0.1, 0.2], vec![1.0, 2.0]).unwrap();
        assert_eq!(gaussian_flow(&p, &[1.0, -1.0], &s, 0.0, &mut rng).unwrap(), p);
        let c = AccuracySchedule::categorical(4.0, 1).unwrap();
        let q = CategoricalParams::from_rows(&[vec![0.3, 0.7]]).unwrap();
        assert_eq!(categorical_flow(&q, &[0], &c, 0.0, &mut rng).unwrap(), q);
    }

    #[test]
    fn flow_rejects_bad_time_and_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = AccuracySchedule::continuous(0.5, 1).unwrap();
        let c = AccuracySchedule::categorical(4.0, 1).unwrap();
        let p = GaussianParams::standard_prior(1);
        assert!(matches!(gaussian_flow(&p, &[0.0], &s, 1.01, &mut rng), Err(BfnError::Domain(_))));
        assert!(gaussian_flow(&p, &[0.0], &c, 0.5, &mut rng).is_err());
        let q = CategoricalParams::uniform(&[2]);
        assert!(categorical_flow(&q, &[2], &c, 0.5, &mut rng).is_err());
    }

    #[test]
    fn symmetric_gaussian_flow_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = AccuracySchedule::continuous(0.5, 1).unwrap();
        let p = GaussianParams::standard_prior(1);
        for &t in &[0.1, 0.5, 1.0] {
            let n = 50_000;
            let m: f64 = (0..n).map(|_| gaussian_flow(&p, &[0.0], &s, t, &mut rng).unwrap().mean()[0]).sum::<f64>()
                / n as f64;
            assert!(m.abs() < 0.01, "t={t} mean={m}");
        }
    }

    #[test]
    fn one_hot_prior_is_fixed_point_of_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = AccuracySchedule::categorical(4.0, 1).unwrap();
        let q = CategoricalParams::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        for _ in 0..100 {
            let r = categorical_flow(&q, &[0], &c, 1.0, &mut rng).unwrap();
            assert_eq!(r.row(0), &[0.0, 1.0, 0.0]);
        }
    }

    proptest! {
        #[test]
        fn gaussian_update_is_per_dimension(
            mu in proptest::collection::vec(-1.0f64..1.0, 3),
            rho in proptest::collection::vec(0.1f64..10.0, 3),
            y in proptest::collection::vec(-2.0f64..2.0, 3),
            alpha in 0.01f64..50.0,
        ) {
            let p = GaussianParams::new(mu.clone(), rho.clone()).unwrap();
            let q = gaussian_update(&p, &NoisySample::new(y.clone(), alpha).unwrap()).unwrap();
            let perm = [2usize, 0, 1];
            let pp = GaussianParams::new(perm.iter().map(|&i| mu[i]).collect(), perm.iter().map(|&i| rho[i]).collect()).unwrap();
            let qp = gaussian_update(&pp, &NoisySample::new(perm.iter().map(|&i| y[i]).collect(), alpha).unwrap()).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(qp.mean()[j], q.mean()[i]);
                prop_assert_eq!(qp.precision()[j], q.precision()[i]);
            }
        }

        #[test]
        fn categorical_update_is_per_variable(
            a in 0.05f64..0.95, b in 0.05f64..0.95,
            y in proptest::collection::vec(-20.0f64..20.0, 4),
        ) {
            let p = CategoricalParams::from_rows(&[vec![a, 1.0 - a], vec![b, 1.0 - b]]).unwrap();
            let q = categorical_update(&p, &NoisySample::new(y.clone(), 1.0).unwrap()).unwrap();
            let ps = CategoricalParams::from_rows(&[vec![b, 1.0 - b], vec![a, 1.0 - a]]).unwrap();
            let ys = vec![y[2], y[3], y[0], y[1]];
            let qs = categorical_update(&ps, &NoisySample::new(ys, 1.0).unwrap()).unwrap();
            prop_assert_eq!(qs.row(0), q.row(1));
            prop_assert_eq!(qs.row(1), q.row(0));
        }
    }
}
