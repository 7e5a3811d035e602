//! Population (infinite-sample) EM operators, evaluated by quadrature under
//! the ground-truth marginal.
//!
//! With labeled fraction `gamma`, the population update for component k is
//!
//! ```text
//! mean(M_gamma(theta)_k) = [(1-gamma) E[q_k(Y;theta) t(Y)] + gamma pi_k mean(theta*_k)]
//!                        / [(1-gamma) E[q_k(Y;theta)]      + gamma pi_k]
//! ```
//!
//! where `mean` is the identity for Gaussians and the mean function for an
//! exponential family. Labeled moments are taken analytically from the truth.
//! The symmetric two-component model uses its tied form
//! `M_gamma(theta) = (1-gamma) M_0(theta) + gamma theta*` with
//! `M_0(theta) = -2 E[q(Y;theta) Y]`.

use serde::{Deserialize, Serialize};

use crate::em::Trajectory;
use crate::error::{Error, Result};
use crate::model::{sym2_q, MixtureParams, ModelKind, Support};
use crate::quadrature::{integrate, pairwise_sum};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureScheme {
    pub abs_tol: f64,
    /// Half-width of the integration window around the outermost means, in
    /// component standard deviations.
    pub range_sigma: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureScheme {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            range_sigma: 12.0,
            max_subdivisions: 1 << 16,
        }
    }
}

impl QuadratureScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("abs_tol must be positive".into()));
        }
        if !(self.range_sigma >= 8.0) {
            return Err(Error::InvalidArgument(
                "range_sigma must be at least 8".into(),
            ));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::InvalidArgument(
                "max_subdivisions must be positive".into(),
            ));
        }
        Ok(())
    }
}

const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    pub kind: ModelKind,
    pub theta_star: MixtureParams,
    /// Labeled fraction, in [0, 1).
    pub gamma: f64,
    pub scheme: QuadratureScheme,
}

impl PopulationModel {
    pub fn new(
        kind: ModelKind,
        theta_star: MixtureParams,
        gamma: f64,
        scheme: QuadratureScheme,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "labeled fraction {gamma} must lie in [0, 1)"
            )));
        }
        kind.validate(&theta_star)?;
        scheme.validate()?;
        Ok(Self {
            kind,
            theta_star,
            gamma,
            scheme,
        })
    }

    /// Same truth and scheme, different labeled fraction.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.kind.clone(),
            self.theta_star.clone(),
            gamma,
            self.scheme,
        )
    }

    fn support(&self) -> Support {
        match &self.kind {
            ModelKind::ExpFam(spec) => spec.support,
            _ => Support::Real,
        }
    }

    fn density(&self, y: f64) -> f64 {
        self.kind
            .marginal_log_density_unchecked(&self.theta_star, y)
            .exp()
    }

    fn component_spread(&self) -> (f64, f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sd = 0.0f64;
        for &t in self.theta_star.theta() {
            let m = self.kind.mean_statistic(t);
            lo = lo.min(m);
            hi = hi.max(m);
            let v = match &self.kind {
                ModelKind::ExpFam(spec) => (spec.variance)(t),
                _ => 1.0,
            };
            sd = sd.max(v.sqrt());
        }
        (lo, hi, sd)
    }

    /// Expectation of `f(Y)` under the true marginal.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let s = &self.scheme;
        let (lo_mean, hi_mean, sd) = self.component_spread();
        match self.support() {
            Support::Counting => {
                // mass below the tolerance beyond this point, checked termwise
                let cutoff = s.abs_tol * 1e-6;
                let mut terms = Vec::new();
                let mut y = 0usize;
                loop {
                    let yf = y as f64;
                    let p = self.density(yf);
                    terms.push(f(yf) * p);
                    if yf > hi_mean && p * (1.0 + yf * yf) < cutoff {
                        break;
                    }
                    y += 1;
                    if y > s.max_subdivisions {
                        return Err(Error::QuadratureFailure {
                            error: p,
                            tolerance: s.abs_tol,
                            subdivisions: y,
                        });
                    }
                }
                Ok(pairwise_sum(&terms))
            }
            support => {
                let mut lo = lo_mean - s.range_sigma * sd;
                let mut hi = hi_mean + s.range_sigma * sd;
                if support == Support::Positive {
                    lo = 0.0;
                    let cutoff = s.abs_tol * 1e-3;
                    let mut doublings = 0;
                    while self.density(hi) * (1.0 + hi) * (1.0 + hi) * hi > cutoff {
                        hi *= 2.0;
                        doublings += 1;
                        if doublings > 60 {
                            return Err(Error::QuadratureFailure {
                                error: f64::INFINITY,
                                tolerance: s.abs_tol,
                                subdivisions: 0,
                            });
                        }
                    }
                }
                let mut breaks: Vec<f64> = vec![lo, hi, 0.0];
                breaks.extend(
                    self.theta_star
                        .theta()
                        .iter()
                        .map(|&t| self.kind.mean_statistic(t)),
                );
                breaks.retain(|b| *b >= lo && *b <= hi);
                breaks.sort_by(f64::total_cmp);
                breaks.dedup();
                let integral = integrate(
                    |y| {
                        let v = f(y);
                        if v == 0.0 {
                            0.0
                        } else {
                            v * self.density(y)
                        }
                    },
                    &breaks,
                    s.abs_tol,
                    s.max_subdivisions,
                )?;
                Ok(integral.value)
            }
        }
    }

    fn check_probe(&self, theta: &MixtureParams, k: usize) -> Result<()> {
        if theta.k() != self.theta_star.k() {
            return Err(Error::InvalidParams("probe and truth differ in K".into()));
        }
        if k >= theta.k() {
            return Err(Error::InvalidArgument(format!(
                "component {k} out of range"
            )));
        }
        self.kind.validate(theta)
    }

    fn responsibility_fn<'a>(
        &'a self,
        theta: &'a MixtureParams,
        k: usize,
    ) -> impl Fn(f64) -> f64 + 'a {
        let width = theta.k();
        move |y| {
            let mut r = [0.0; 16];
            if width <= r.len() {
                self.kind.responsibilities_into(theta, y, &mut r[..width]);
                r[k]
            } else {
                let mut v = vec![0.0; width];
                self.kind.responsibilities_into(theta, y, &mut v);
                v[k]
            }
        }
    }

    /// Expected responsibility E[q_k(Y; theta)].
    pub fn c_theta(&self, theta: &MixtureParams, k: usize) -> Result<f64> {
        self.check_probe(theta, k)?;
        self.expect(self.responsibility_fn(theta, k))
    }

    /// E[q_k(Y; theta) t(Y)].
    pub fn weighted_statistic(&self, theta: &MixtureParams, k: usize) -> Result<f64> {
        self.check_probe(theta, k)?;
        let q = self.responsibility_fn(theta, k);
        self.expect(|y| q(y) * self.kind.statistic(y))
    }

    /// Labeled moment E[1{X=k} t(Y)] = pi_k mean(theta*_k).
    pub fn labeled_moment(&self, k: usize) -> f64 {
        self.theta_star.weights()[k] * self.kind.mean_statistic(self.theta_star.theta()[k])
    }

    fn m_operator(&self, theta: &MixtureParams, k: usize, gamma: f64) -> Result<f64> {
        self.check_probe(theta, k)?;
        if self.kind == ModelKind::Sym2 {
            let m0 = self.sym2_m0(theta.sym2_scalar())?;
            let star = self.theta_star.sym2_scalar();
            let m = (1.0 - gamma) * m0 + gamma * star;
            return Ok(if k == 0 { -m } else { m });
        }
        let c = self.c_theta(theta, k)?;
        let s = self.weighted_statistic(theta, k)?;
        let pi = self.theta_star.weights()[k];
        let den = (1.0 - gamma) * c + gamma * pi;
        if !(den > DENOMINATOR_FLOOR) {
            return Err(Error::DegenerateDenominator {
                component: k,
                value: den,
            });
        }
        let num = (1.0 - gamma) * s + gamma * self.labeled_moment(k);
        self.kind.invert_mean_statistic(num / den, k)
    }

    fn sym2_m0(&self, theta: f64) -> Result<f64> {
        Ok(-2.0 * self.expect(|y| sym2_q(y, theta) * y)?)
    }

    /// Population update with the model's labeled fraction.
    pub fn pop_m_gamma(&self, theta: &MixtureParams, k: usize) -> Result<f64> {
        self.m_operator(theta, k, self.gamma)
    }

    /// Population update from unlabeled data only.
    pub fn pop_m0(&self, theta: &MixtureParams, k: usize) -> Result<f64> {
        self.m_operator(theta, k, 0.0)
    }

    /// All components of the population update.
    pub fn pop_m_gamma_params(&self, theta: &MixtureParams) -> Result<MixtureParams> {
        self.update_all(theta, self.gamma)
    }

    pub fn pop_m0_params(&self, theta: &MixtureParams) -> Result<MixtureParams> {
        self.update_all(theta, 0.0)
    }

    fn update_all(&self, theta: &MixtureParams, gamma: f64) -> Result<MixtureParams> {
        if self.kind == ModelKind::Sym2 {
            return Ok(MixtureParams::sym2(self.m_operator(theta, 1, gamma)?));
        }
        let next = (0..theta.k())
            .map(|k| self.m_operator(theta, k, gamma))
            .collect::<Result<Vec<_>>>()?;
        theta.with_theta(next)
    }

    /// The fully-labeled limit: the conditional mean of component k, mapped
    /// back through the mean function. Analytic, no quadrature.
    pub fn theta_star_from_labels(&self, k: usize) -> Result<f64> {
        if k >= self.theta_star.k() {
            return Err(Error::InvalidArgument(format!(
                "component {k} out of range"
            )));
        }
        let conditional = self.labeled_moment(k) / self.theta_star.weights()[k];
        self.kind.invert_mean_statistic(conditional, k)
    }

    /// Derivative of the symmetric unlabeled update,
    /// `4 E[Y^2 / (e^{-Y theta} + e^{Y theta})^2]`.
    pub fn dm0_dtheta_sym2(&self, theta: f64) -> Result<f64> {
        if self.kind != ModelKind::Sym2 {
            return Err(Error::UnsupportedKind(self.kind.name()));
        }
        if !(theta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "theta = {theta} must be >= 0"
            )));
        }
        self.expect(|y| {
            let e = (-2.0 * y.abs() * theta).exp();
            let d = 1.0 + e;
            4.0 * y * y * e / (d * d)
        })
    }

    /// `f(theta) = -E[q(Y; theta) Y]` for the symmetric model, so that
    /// `M_0(theta) = 2 f(theta)`.
    pub fn sym2_f(&self, theta: f64) -> Result<f64> {
        if self.kind != ModelKind::Sym2 {
            return Err(Error::UnsupportedKind(self.kind.name()));
        }
        self.expect(|y| -sym2_q(y, theta) * y)
    }

    /// Iterates the population update from `theta0` until successive iterates
    /// move less than `tol`. Same bookkeeping as [`crate::em::run_em`], without
    /// surrogate values.
    pub fn population_em(
        &self,
        theta0: &MixtureParams,
        max_iters: usize,
        tol: f64,
    ) -> Result<Trajectory> {
        if max_iters == 0 || !(tol > 0.0) {
            return Err(Error::InvalidArgument(
                "need max_iters >= 1 and tol > 0".into(),
            ));
        }
        self.kind.validate(theta0)?;
        let mut traj = Trajectory {
            iterates: vec![theta0.clone()],
            q_values: Vec::new(),
            q_start: Vec::new(),
            errors: vec![theta0.sup_distance(&self.theta_star)],
            converged: false,
        };
        let mut current = theta0.clone();
        for iteration in 0..max_iters {
            let next = self
                .pop_m_gamma_params(&current)
                .map_err(|e| e.at_iteration(iteration))?;
            if next.sup_distance(&current) < tol {
                traj.converged = true;
                break;
            }
            traj.errors.push(next.sup_distance(&self.theta_star));
            traj.iterates.push(next.clone());
            current = next;
        }
        Ok(traj)
    }
}
