//! Seeded labeled/unlabeled datasets drawn from a ground-truth mixture.
//!
//! Stream layout (see [`crate::rng`]): stream 0 draws labels (multinomial
//! allocation only), stream 1 draws labeled observations, stream 2 draws
//! unlabeled observations as (component uniform, value uniform) pairs.
//! Observations come from the component inverse CDF.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MixtureParams, ModelKind};
use crate::rng::UniformStream;
use crate::special::normal_quantile;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `(component, observation)` pairs; components are zero-based.
    pub labeled: Vec<(usize, f64)>,
    pub unlabeled: Vec<f64>,
}

impl Dataset {
    pub fn new(labeled: Vec<(usize, f64)>, unlabeled: Vec<f64>) -> Result<Self> {
        if labeled.is_empty() && unlabeled.is_empty() {
            return Err(Error::InvalidDataset("dataset has no samples".into()));
        }
        if labeled
            .iter()
            .map(|&(_, y)| y)
            .chain(unlabeled.iter().copied())
            .any(|y| !y.is_finite())
        {
            return Err(Error::InvalidDataset("observations must be finite".into()));
        }
        Ok(Self { labeled, unlabeled })
    }

    pub fn m(&self) -> usize {
        self.labeled.len()
    }

    pub fn n(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn len(&self) -> usize {
        self.m() + self.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Labeled fraction m / (m + n).
    pub fn gamma(&self) -> f64 {
        self.m() as f64 / self.len() as f64
    }

    /// Errors if any label is not a component of a `k`-component model.
    pub fn check_labels(&self, k: usize) -> Result<()> {
        match self.labeled.iter().find(|(x, _)| *x >= k) {
            Some((x, _)) => Err(Error::InvalidDataset(format!(
                "label {} exceeds component count {k}",
                x + 1
            ))),
            None => Ok(()),
        }
    }

    /// CSV with header `kind,x,y`. Labels are written one-based, unlabeled
    /// rows leave `x` empty, and `y` carries 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,x,y\n");
        for &(x, y) in &self.labeled {
            let _ = writeln!(out, "L,{},{}", x + 1, format_f64(y));
        }
        for &y in &self.unlabeled {
            let _ = writeln!(out, "U,,{}", format_f64(y));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("kind,x,y") {
            return Err(Error::InvalidDataset("expected header `kind,x,y`".into()));
        }
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidDataset(format!(
                    "row {row}: expected 3 fields"
                )));
            }
            let y: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidDataset(format!("row {row}: bad y `{}`", fields[2])))?;
            match fields[0].trim() {
                "L" => {
                    let x: usize = fields[1].trim().parse().map_err(|_| {
                        Error::InvalidDataset(format!("row {row}: bad label `{}`", fields[1]))
                    })?;
                    if x == 0 {
                        return Err(Error::InvalidDataset(format!(
                            "row {row}: labels are one-based"
                        )));
                    }
                    labeled.push((x - 1, y));
                }
                "U" => unlabeled.push(y),
                other => {
                    return Err(Error::InvalidDataset(format!(
                        "row {row}: unknown kind `{other}`"
                    )))
                }
            }
        }
        Dataset::new(labeled, unlabeled)
    }
}

/// Scientific notation with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allocation {
    /// Labels drawn i.i.d. from the mixture weights.
    Multinomial,
    /// Exactly `round(pi_k * m)` labels per component; the rounding residual
    /// goes to the largest-weight component.
    #[default]
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub allocation: Allocation,
}

const LABEL_STREAM: u32 = 0;
const LABELED_STREAM: u32 = 1;
const UNLABELED_STREAM: u32 = 2;

/// Per-component label counts for the proportional scheme.
pub fn proportional_counts(weights: &[f64], m: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (w * m as f64).round() as usize)
        .collect();
    let largest = weights
        .iter()
        .enumerate()
        .fold(0, |best, (k, w)| if *w > weights[best] { k } else { best });
    let assigned: usize = counts.iter().sum();
    if assigned > m {
        let mut excess = assigned - m;
        // take from the largest component first, then from the rest
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
        for k in order {
            let take = excess.min(counts[k]);
            counts[k] -= take;
            excess -= take;
            if excess == 0 {
                break;
            }
        }
    } else {
        counts[largest] += m - assigned;
    }
    counts
}

fn draw_component(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

fn component_sample(kind: &ModelKind, theta: f64, u: f64) -> Result<f64> {
    match kind {
        ModelKind::Gmm | ModelKind::Sym2 => Ok(theta + normal_quantile(u)),
        ModelKind::ExpFam(spec) => match spec.quantile {
            Some(q) => Ok(q(theta, u)),
            None => Err(Error::InvalidArgument(format!(
                "family `{}` has no sampler",
                spec.name
            ))),
        },
    }
}

pub fn sample_dataset(
    kind: &ModelKind,
    theta_star: &MixtureParams,
    cfg: &SampleConfig,
) -> Result<Dataset> {
    if cfg.m + cfg.n == 0 {
        return Err(Error::InvalidDataset("m + n must be at least 1".into()));
    }
    kind.validate(theta_star)?;
    let weights = theta_star.weights();
    let theta = theta_star.theta();

    let labels: Vec<usize> = match cfg.allocation {
        Allocation::Proportional => proportional_counts(weights, cfg.m)
            .into_iter()
            .enumerate()
            .flat_map(|(k, c)| std::iter::repeat_n(k, c))
            .collect(),
        Allocation::Multinomial => {
            let mut s = UniformStream::new(cfg.seed, LABEL_STREAM);
            (0..cfg.m)
                .map(|_| draw_component(weights, s.next_open01()))
                .collect()
        }
    };

    let mut s = UniformStream::new(cfg.seed, LABELED_STREAM);
    let labeled = labels
        .into_iter()
        .map(|k| Ok((k, component_sample(kind, theta[k], s.next_open01())?)))
        .collect::<Result<Vec<_>>>()?;

    let mut s = UniformStream::new(cfg.seed, UNLABELED_STREAM);
    let unlabeled = (0..cfg.n)
        .map(|_| {
            let k = draw_component(weights, s.next_open01());
            component_sample(kind, theta[k], s.next_open01())
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(labeled, unlabeled)
}
