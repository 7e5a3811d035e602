//! Finite-sample semi-supervised EM.
//!
//! Labeled pairs enter the surrogate with indicator weights, unlabeled
//! observations with responsibilities under the current iterate. Mixture
//! weights are never re-estimated.
//!
//! Per-sample sums are accumulated in fixed blocks of [`BLOCK`] samples, the
//! blocks in parallel, and the block totals are then combined by pairwise
//! reduction in block order. Results are bitwise identical for any number of
//! worker threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sym2_q, ExpFamilySpec, MixtureParams, ModelKind};
use crate::sampling::{format_f64, Dataset};
use crate::special::LN_SQRT_2PI;

pub const BLOCK: usize = 4096;

/// Denominators below this are treated as an empty component.
pub const EMPTY_COMPONENT_MASS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once `max_k |theta_k^{t+1} - theta_k^t| < tol`.
    pub tol: f64,
    pub record_trajectory: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-10,
            record_trajectory: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "max_iters must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        Ok(())
    }
}

/// Iterates of an EM run.
///
/// `iterates[t]` is theta^t with `iterates[0]` the initialization. The run
/// stops at the first t whose update moves less than the tolerance; that
/// final update is not appended. `q_values[t]` is Q(theta^{t+1}; theta^t) and
/// `q_start[t]` is Q(theta^t; theta^t). `errors[t]` is the largest
/// per-component distance of theta^t to the truth, when the truth is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub iterates: Vec<MixtureParams>,
    pub q_values: Vec<f64>,
    pub q_start: Vec<f64>,
    pub errors: Vec<f64>,
    pub converged: bool,
}

impl Trajectory {
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn final_params(&self) -> &MixtureParams {
        self.iterates
            .last()
            .expect("trajectory holds the initialization")
    }

    /// CSV with header `iter,theta_1,...,theta_K,q_value,err`.
    ///
    /// Row `t` holds theta^t; its `q_value` is Q(theta^t; theta^{t-1}) and is
    /// empty on row 0 or when Q was not recorded.
    pub fn to_csv(&self) -> String {
        let k = self.iterates[0].k();
        let mut out = String::from("iter");
        for j in 1..=k {
            let _ = write!(out, ",theta_{j}");
        }
        out.push_str(",q_value,err\n");
        for (t, params) in self.iterates.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in params.theta() {
                let _ = write!(out, ",{}", format_f64(*v));
            }
            out.push(',');
            if t > 0 {
                if let Some(q) = self.q_values.get(t - 1) {
                    out.push_str(&format_f64(*q));
                }
            }
            out.push(',');
            if let Some(e) = self.errors.get(t) {
                out.push_str(&format_f64(*e));
            }
            out.push('\n');
        }
        out
    }
}

/// Sums `width` per-sample contributions over `items` in blocks of [`BLOCK`].
pub(crate) fn blocked_sums<T, F>(items: &[T], width: usize, add: F) -> Vec<f64>
where
    T: Sync,
    F: Fn(&T, &mut [f64]) + Sync,
{
    let blocks: Vec<Vec<f64>> = items
        .par_chunks(BLOCK)
        .map(|chunk| {
            let mut acc = vec![0.0; width];
            for item in chunk {
                add(item, &mut acc);
            }
            acc
        })
        .collect();
    reduce_blocks(&blocks, width)
}

fn reduce_blocks(blocks: &[Vec<f64>], width: usize) -> Vec<f64> {
    match blocks.len() {
        0 => vec![0.0; width],
        1 => blocks[0].clone(),
        len => {
            let (left, right) = blocks.split_at(len / 2);
            let mut l = reduce_blocks(left, width);
            let r = reduce_blocks(right, width);
            for (a, b) in l.iter_mut().zip(r) {
                *a += b;
            }
            l
        }
    }
}

fn check_inputs(kind: &ModelKind, data: &Dataset, params: &[&MixtureParams]) -> Result<()> {
    let k = params[0].k();
    for p in params {
        if p.k() != k {
            return Err(Error::InvalidParams("component counts differ".into()));
        }
        kind.validate(p)?;
    }
    data.check_labels(k)
}

/// Surrogate objective Q_{n,m}(theta; theta_t), normalised by n + m.
///
/// Gaussian kinds keep the `log(sqrt(2 pi) / pi_k)` terms; the
/// exponential-family form carries no weight terms.
pub fn q_value(
    kind: &ModelKind,
    data: &Dataset,
    theta: &MixtureParams,
    theta_t: &MixtureParams,
) -> Result<f64> {
    check_inputs(kind, data, &[theta, theta_t])?;

    // log p(x = j, y) up to the form used by each family
    let term = |j: usize, y: f64| -> f64 {
        let t = theta.theta()[j];
        match kind {
            ModelKind::Gmm | ModelKind::Sym2 => {
                let d = y - t;
                -(0.5 * d * d + LN_SQRT_2PI - theta.weights()[j].ln())
            }
            ModelKind::ExpFam(spec) => {
                t * (spec.statistic)(y) + (spec.log_carrier)(y) - (spec.log_partition)(t)
            }
        }
    };

    let labeled = blocked_sums(&data.labeled, 1, |&(x, y), acc| acc[0] += term(x, y));
    let unlabeled = blocked_sums(&data.unlabeled, 1, |&y, acc| {
        with_responsibilities(kind, theta_t, y, |r| {
            for (j, rj) in r.iter().enumerate() {
                if *rj > 0.0 {
                    acc[0] += rj * term(j, y);
                }
            }
        })
    });
    Ok((labeled[0] + unlabeled[0]) / data.len() as f64)
}

/// Runs `f` on the responsibilities of `y`, on the stack for small K.
fn with_responsibilities<F: FnOnce(&[f64])>(kind: &ModelKind, theta: &MixtureParams, y: f64, f: F) {
    let k = theta.k();
    let mut buf = [0.0; 16];
    if k <= buf.len() {
        kind.responsibilities_into(theta, y, &mut buf[..k]);
        f(&buf[..k]);
    } else {
        let mut r = vec![0.0; k];
        kind.responsibilities_into(theta, y, &mut r);
        f(&r);
    }
}

/// Per-component weighted averages of the sufficient statistic:
/// labeled samples weigh 1 in their own component, unlabeled samples weigh
/// their responsibility.
fn weighted_statistic_means(
    kind: &ModelKind,
    data: &Dataset,
    theta_t: &MixtureParams,
) -> Result<Vec<f64>> {
    check_inputs(kind, data, &[theta_t])?;
    let k = theta_t.k();
    // layout: [den_0..den_{K-1}, num_0..num_{K-1}]
    let labeled = blocked_sums(&data.labeled, 2 * k, |&(x, y), acc| {
        acc[x] += 1.0;
        acc[k + x] += kind.statistic(y);
    });
    let unlabeled = blocked_sums(&data.unlabeled, 2 * k, |&y, acc| {
        let s = kind.statistic(y);
        with_responsibilities(kind, theta_t, y, |r| {
            for (j, rj) in r.iter().enumerate() {
                acc[j] += rj;
                acc[k + j] += rj * s;
            }
        })
    });
    (0..k)
        .map(|j| {
            let den = labeled[j] + unlabeled[j];
            if !(den >= EMPTY_COMPONENT_MASS) {
                return Err(Error::EmptyComponent {
                    component: j,
                    mass: den,
                });
            }
            Ok((labeled[k + j] + unlabeled[k + j]) / den)
        })
        .collect()
}

/// Gaussian M-step: responsibility- and label-weighted means.
pub fn m_step_gmm(data: &Dataset, theta_t: &MixtureParams) -> Result<MixtureParams> {
    let means = weighted_statistic_means(&ModelKind::Gmm, data, theta_t)?;
    theta_t.with_theta(means)
}

/// Exponential-family M-step: invert the mean function at the weighted
/// average of sufficient statistics.
pub fn m_step_expfam(
    spec: &ExpFamilySpec,
    data: &Dataset,
    theta_t: &MixtureParams,
) -> Result<MixtureParams> {
    let kind = ModelKind::ExpFam(*spec);
    let means = weighted_statistic_means(&kind, data, theta_t)?;
    let theta = means
        .iter()
        .enumerate()
        .map(|(k, &m)| spec.inverse_mean(m, k))
        .collect::<Result<Vec<_>>>()?;
    theta_t.with_theta(theta)
}

/// Tied-mean M-step for the symmetric two-component model. Label 0 is the
/// `-theta` component.
pub fn m_step_sym2(data: &Dataset, theta_t: f64) -> Result<f64> {
    data.check_labels(2)?;
    let labeled = blocked_sums(&data.labeled, 1, |&(x, y), acc| {
        acc[0] += if x == 0 { -y } else { y };
    });
    let unlabeled = blocked_sums(&data.unlabeled, 1, |&y, acc| {
        acc[0] += (1.0 - 2.0 * sym2_q(y, theta_t)) * y;
    });
    Ok((labeled[0] + unlabeled[0]) / data.len() as f64)
}

/// One M-step for any model kind.
pub fn m_step(kind: &ModelKind, data: &Dataset, theta_t: &MixtureParams) -> Result<MixtureParams> {
    match kind {
        ModelKind::Gmm => m_step_gmm(data, theta_t),
        ModelKind::ExpFam(spec) => m_step_expfam(spec, data, theta_t),
        ModelKind::Sym2 => {
            ModelKind::Sym2.validate(theta_t)?;
            Ok(MixtureParams::sym2(m_step_sym2(
                data,
                theta_t.sym2_scalar(),
            )?))
        }
    }
}

pub fn run_em(
    kind: &ModelKind,
    data: &Dataset,
    theta0: &MixtureParams,
    cfg: &EmConfig,
    theta_star: Option<&MixtureParams>,
) -> Result<Trajectory> {
    cfg.validate()?;
    check_inputs(kind, data, &[theta0])?;
    if let Some(truth) = theta_star {
        if truth.k() != theta0.k() {
            return Err(Error::InvalidParams(
                "truth and initialization differ in K".into(),
            ));
        }
    }

    let error_of = |p: &MixtureParams| theta_star.map(|truth| p.sup_distance(truth));
    let mut traj = Trajectory {
        iterates: vec![theta0.clone()],
        q_values: Vec::new(),
        q_start: Vec::new(),
        errors: error_of(theta0).into_iter().collect(),
        converged: false,
    };
    let mut current = theta0.clone();

    for iteration in 0..cfg.max_iters {
        let next = m_step(kind, data, &current).map_err(|e| e.at_iteration(iteration))?;
        if next.sup_distance(&current) < cfg.tol {
            traj.converged = true;
            break;
        }
        if cfg.record_trajectory {
            let q_next =
                q_value(kind, data, &next, &current).map_err(|e| e.at_iteration(iteration))?;
            let q_now =
                q_value(kind, data, &current, &current).map_err(|e| e.at_iteration(iteration))?;
            traj.q_values.push(q_next);
            traj.q_start.push(q_now);
            traj.iterates.push(next.clone());
            traj.errors.extend(error_of(&next));
        }
        current = next;
    }

    if !cfg.record_trajectory && current != traj.iterates[0] {
        traj.errors.extend(error_of(&current));
        traj.iterates.push(current);
    }
    Ok(traj)
}
