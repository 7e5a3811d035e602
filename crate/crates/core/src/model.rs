//! Mixture families, densities and posterior responsibilities.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma, normal_quantile, LN_SQRT_2PI};

/// Where a family's observations live. Decides how expectations are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Real,
    Positive,
    Counting,
}

/// A one-parameter exponential family
/// `p(y | theta) = exp(theta * t(y) + h(y) - alpha(theta))`.
///
/// `mean` is the derivative of the log-partition (it maps a natural parameter
/// to the expected sufficient statistic) and `variance` its second
/// derivative, the Fisher information. Both are supplied analytically.
#[derive(Clone, Copy)]
pub struct ExpFamilySpec {
    pub name: &'static str,
    pub statistic: fn(f64) -> f64,
    pub log_carrier: fn(f64) -> f64,
    pub log_partition: fn(f64) -> f64,
    pub mean: fn(f64) -> f64,
    pub variance: fn(f64) -> f64,
    /// Open interval of valid natural parameters.
    pub natural_domain: (f64, f64),
    /// Open image of `natural_domain` under `mean`.
    pub mean_range: (f64, f64),
    pub support: Support,
    /// Component inverse CDF `(theta, u) -> y`, used for sampling.
    pub quantile: Option<fn(f64, f64) -> f64>,
}

impl fmt::Debug for ExpFamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpFamilySpec")
            .field("name", &self.name)
            .field("natural_domain", &self.natural_domain)
            .field("support", &self.support)
            .finish()
    }
}

impl PartialEq for ExpFamilySpec {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

const MAX_INVERSION_ITERS: usize = 200;

impl ExpFamilySpec {
    /// Unit-variance Gaussian with the mean as natural parameter.
    pub fn gaussian() -> Self {
        Self {
            name: "gaussian",
            statistic: |y| y,
            log_carrier: |y| -0.5 * y * y - LN_SQRT_2PI,
            log_partition: |t| 0.5 * t * t,
            mean: |t| t,
            variance: |_| 1.0,
            natural_domain: (f64::NEG_INFINITY, f64::INFINITY),
            mean_range: (f64::NEG_INFINITY, f64::INFINITY),
            support: Support::Real,
            quantile: Some(|t, u| t + normal_quantile(u)),
        }
    }

    /// Poisson with log-rate as natural parameter.
    pub fn poisson() -> Self {
        Self {
            name: "poisson",
            statistic: |y| y,
            log_carrier: |y| -ln_gamma(y + 1.0),
            log_partition: f64::exp,
            mean: f64::exp,
            variance: f64::exp,
            natural_domain: (f64::NEG_INFINITY, f64::INFINITY),
            mean_range: (0.0, f64::INFINITY),
            support: Support::Counting,
            quantile: Some(poisson_quantile),
        }
    }

    /// Exponential distribution with natural parameter `-rate`.
    pub fn exponential() -> Self {
        Self {
            name: "exponential",
            statistic: |y| y,
            log_carrier: |_| 0.0,
            log_partition: |t| -(-t).ln(),
            mean: |t| -1.0 / t,
            variance: |t| 1.0 / (t * t),
            natural_domain: (f64::NEG_INFINITY, 0.0),
            mean_range: (0.0, f64::INFINITY),
            support: Support::Positive,
            quantile: Some(|t, u| -(-u).ln_1p() / (-t)),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "gaussian" => Some(Self::gaussian()),
            "poisson" => Some(Self::poisson()),
            "exponential" => Some(Self::exponential()),
            _ => None,
        }
    }

    pub fn in_domain(&self, theta: f64) -> bool {
        let (lo, hi) = self.natural_domain;
        theta.is_finite() && theta > lo && theta < hi
    }

    /// Solves `mean(theta) = target` by Newton's method safeguarded with
    /// bisection. Converges when the residual is below `1e-12 * max(1, |target|)`
    /// or the bracket shrinks to adjacent floats.
    pub fn inverse_mean(&self, target: f64, component: usize) -> Result<f64> {
        let (mlo, mhi) = self.mean_range;
        if !target.is_finite() || target <= mlo || target >= mhi {
            return Err(Error::MeanOutOfRange {
                component,
                mean: target,
            });
        }
        let (dlo, dhi) = self.natural_domain;
        let tol = 1e-12 * target.abs().max(1.0);
        let mean = self.mean;
        let start = if self.in_domain(0.0) {
            0.0
        } else if dhi.is_finite() {
            dhi - 1.0
        } else {
            dlo + 1.0
        };

        let mut iterations = 0;
        // Grow a bracket [lo, hi] with mean(lo) < target < mean(hi).
        let (mut lo, mut hi) = (f64::NAN, f64::NAN);
        let mut x = start;
        let mut step = 1.0;
        if mean(x) < target {
            lo = x;
            while iterations < MAX_INVERSION_ITERS {
                iterations += 1;
                x = if dhi.is_finite() {
                    (x + step).min(0.5 * (x + dhi))
                } else {
                    x + step
                };
                step *= 2.0;
                if mean(x) >= target {
                    hi = x;
                    break;
                }
                lo = x;
            }
        } else {
            hi = x;
            while iterations < MAX_INVERSION_ITERS {
                iterations += 1;
                x = if dlo.is_finite() {
                    (x - step).max(0.5 * (x + dlo))
                } else {
                    x - step
                };
                step *= 2.0;
                if mean(x) <= target {
                    lo = x;
                    break;
                }
                hi = x;
            }
        }
        if lo.is_nan() || hi.is_nan() {
            return Err(Error::NoConvergence { iterations });
        }

        let mut x = 0.5 * (lo + hi);
        while iterations < MAX_INVERSION_ITERS {
            iterations += 1;
            let r = mean(x) - target;
            if r.abs() <= tol {
                return Ok(x);
            }
            if r < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                return Ok(x);
            }
            let newton = x - r / (self.variance)(x);
            x = if newton > lo && newton < hi {
                newton
            } else {
                mid
            };
        }
        Err(Error::NoConvergence { iterations })
    }
}

fn poisson_quantile(theta: f64, u: f64) -> f64 {
    let lambda = theta.exp();
    let ln_lambda = theta;
    let cap = (lambda + 40.0 * lambda.sqrt() + 100.0) as u64;
    let mut k = 0u64;
    let mut log_p = -lambda;
    let mut cdf = log_p.exp();
    while cdf < u && k < cap {
        k += 1;
        log_p += ln_lambda - (k as f64).ln();
        cdf += log_p.exp();
    }
    k as f64
}

/// Mixture weights and component natural parameters (Gaussian means).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    theta: Vec<f64>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParams(
                "at least one component is required".into(),
            ));
        }
        if weights.len() != theta.len() {
            return Err(Error::InvalidParams(format!(
                "{} weights but {} component parameters",
                weights.len(),
                theta.len()
            )));
        }
        if let Some((k, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidParams(format!(
                "weight {k} = {w} is not positive"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParams(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if let Some((k, t)) = theta.iter().enumerate().find(|(_, t)| !t.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "theta {k} = {t} is not finite"
            )));
        }
        Ok(Self { weights, theta })
    }

    /// Equal weights.
    pub fn uniform(theta: Vec<f64>) -> Result<Self> {
        let k = theta.len().max(1);
        Self::new(vec![1.0 / k as f64; theta.len()], theta)
    }

    /// Symmetric two-component mixture with means `(-theta, +theta)`.
    pub fn sym2(theta: f64) -> Self {
        Self {
            weights: vec![0.5, 0.5],
            theta: vec![-theta, theta],
        }
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// The scalar of a symmetric two-component parameterisation.
    pub fn sym2_scalar(&self) -> f64 {
        self.theta[1]
    }

    /// Same weights, new component parameters.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.weights.clone(), theta)
    }

    /// Largest per-component distance.
    pub fn sup_distance(&self, other: &MixtureParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// Unit-variance Gaussian mixture with free means.
    Gmm,
    ExpFam(ExpFamilySpec),
    /// Two equally weighted unit-variance Gaussians at `-theta` and `+theta`.
    Sym2,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gmm => "gmm",
            ModelKind::ExpFam(_) => "expfam",
            ModelKind::Sym2 => "sym2",
        }
    }

    pub fn validate(&self, params: &MixtureParams) -> Result<()> {
        match self {
            ModelKind::Gmm => Ok(()),
            ModelKind::Sym2 => {
                let w = params.weights();
                let t = params.theta();
                if params.k() != 2 || w[0] != 0.5 || w[1] != 0.5 || t[0] != -t[1] {
                    return Err(Error::InvalidParams(
                        "sym2 requires weights (1/2, 1/2) and means (-theta, theta)".into(),
                    ));
                }
                Ok(())
            }
            ModelKind::ExpFam(spec) => {
                for (component, &value) in params.theta().iter().enumerate() {
                    if !spec.in_domain(value) {
                        let (lo, hi) = spec.natural_domain;
                        return Err(Error::Domain {
                            component,
                            value,
                            lo,
                            hi,
                        });
                    }
                }
                Ok(())
            }
        }
    }

    fn check_component(params: &MixtureParams, k: usize) -> Result<()> {
        if k >= params.k() {
            return Err(Error::InvalidArgument(format!(
                "component {k} out of range for K = {}",
                params.k()
            )));
        }
        Ok(())
    }

    /// Sufficient statistic of an observation.
    pub fn statistic(&self, y: f64) -> f64 {
        match self {
            ModelKind::ExpFam(spec) => (spec.statistic)(y),
            _ => y,
        }
    }

    /// Expected sufficient statistic under component parameter `theta`.
    pub fn mean_statistic(&self, theta: f64) -> f64 {
        match self {
            ModelKind::ExpFam(spec) => (spec.mean)(theta),
            _ => theta,
        }
    }

    /// Inverse of [`ModelKind::mean_statistic`].
    pub fn invert_mean_statistic(&self, mean: f64, component: usize) -> Result<f64> {
        match self {
            ModelKind::ExpFam(spec) => spec.inverse_mean(mean, component),
            _ => Ok(mean),
        }
    }

    pub(crate) fn component_log_density_unchecked(&self, theta: f64, y: f64) -> f64 {
        match self {
            ModelKind::Gmm | ModelKind::Sym2 => {
                let d = y - theta;
                -0.5 * d * d - LN_SQRT_2PI
            }
            ModelKind::ExpFam(spec) => {
                theta * (spec.statistic)(y) + (spec.log_carrier)(y) - (spec.log_partition)(theta)
            }
        }
    }

    /// log p(y | component k).
    pub fn component_log_density(&self, params: &MixtureParams, k: usize, y: f64) -> Result<f64> {
        Self::check_component(params, k)?;
        self.validate(params)?;
        if !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "observation {y} is not finite"
            )));
        }
        Ok(self.component_log_density_unchecked(params.theta()[k], y))
    }

    pub(crate) fn marginal_log_density_unchecked(&self, params: &MixtureParams, y: f64) -> f64 {
        let logs = params
            .weights()
            .iter()
            .zip(params.theta())
            .map(|(w, &t)| w.ln() + self.component_log_density_unchecked(t, y));
        log_sum_exp(logs)
    }

    /// log of the weighted sum of component densities.
    pub fn marginal_log_density(&self, params: &MixtureParams, y: f64) -> Result<f64> {
        self.validate(params)?;
        if !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "observation {y} is not finite"
            )));
        }
        Ok(self.marginal_log_density_unchecked(params, y))
    }

    /// Writes the posterior component probabilities for `y` into `out`.
    pub(crate) fn responsibilities_into(&self, params: &MixtureParams, y: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), params.k());
        match self {
            ModelKind::Sym2 => {
                let t = params.sym2_scalar();
                out[0] = sym2_q(y, t);
                out[1] = sym2_q(-y, t);
            }
            ModelKind::Gmm => {
                for ((o, w), &t) in out.iter_mut().zip(params.weights()).zip(params.theta()) {
                    let d = y - t;
                    *o = w.ln() - 0.5 * d * d;
                }
                softmax_in_place(out);
            }
            ModelKind::ExpFam(spec) => {
                let s = (spec.statistic)(y);
                for ((o, w), &t) in out.iter_mut().zip(params.weights()).zip(params.theta()) {
                    *o = w.ln() + t * s - (spec.log_partition)(t);
                }
                softmax_in_place(out);
            }
        }
    }

    /// Posterior probability of component `k` given `y`.
    ///
    /// For `Sym2`, component 0 is the `-theta` component, so `k = 0` yields
    /// `1 / (1 + exp(2 y theta))`.
    pub fn responsibility(&self, params: &MixtureParams, y: f64, k: usize) -> Result<f64> {
        Self::check_component(params, k)?;
        Ok(self.responsibilities(params, y)?[k])
    }

    pub fn responsibilities(&self, params: &MixtureParams, y: f64) -> Result<Vec<f64>> {
        self.validate(params)?;
        if !y.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "observation {y} is not finite"
            )));
        }
        let mut out = vec![0.0; params.k()];
        self.responsibilities_into(params, y, &mut out);
        Ok(out)
    }
}

/// Probability of the `-theta` component of the symmetric mixture:
/// `1 / (1 + exp(2 y theta))`, without exponentiating a positive argument.
pub fn sym2_q(y: f64, theta: f64) -> f64 {
    let z = 2.0 * y * theta;
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}
