//! Flat `key = value` run configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Vectors are
//! comma-separated, probe lists separate vectors with `;`. A summary JSON
//! written by a previous run is also accepted: its embedded `config` object
//! is used verbatim.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ssem_core::em::EmConfig;
use ssem_core::{Allocation, ExpFamilySpec, MixtureParams, ModelKind, QuadratureScheme};

use crate::error::{CliError, CliResult};

const KEYS: &[&str] = &[
    "model.kind",
    "model.family",
    "model.weights",
    "model.theta_star",
    "data.gamma",
    "data.total_samples",
    "data.seed",
    "data.allocation",
    "em.theta0",
    "em.max_iters",
    "em.tol",
    "quadrature.abs_tol",
    "quadrature.range_sigma",
    "quadrature.max_subdivisions",
    "verify.gammas",
    "verify.probes",
    "verify.epsilons",
    "verify.theta_stars",
    "verify.offsets",
    "verify.t_grid",
    "output.directory",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("data.gamma", "0"),
    ("data.total_samples", "100000"),
    ("data.seed", "0"),
    ("data.allocation", "proportional"),
    ("em.max_iters", "500"),
    ("em.tol", "1e-10"),
    ("quadrature.abs_tol", "1e-10"),
    ("quadrature.range_sigma", "12"),
    ("quadrature.max_subdivisions", "65536"),
    ("verify.gammas", "0.1, 0.25, 0.5, 0.75, 0.9"),
    ("verify.epsilons", "0.2, 0.1, 0.05, 0.025"),
    ("verify.offsets", "1.01, 2, 4"),
    ("verify.t_grid", "1, 1.5, 2, 3, 4, 5"),
    ("output.directory", "."),
];

/// Key-value pairs as written, before interpretation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        if text.trim_start().starts_with('{') {
            return Self::from_summary(text);
        }
        let mut cfg = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(
                    format!("line {}", i + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn from_summary(text: &str) -> CliResult<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::config("config", format!("invalid JSON: {e}")))?;
        let obj = doc
            .get("config")
            .and_then(|c| c.as_object())
            .ok_or_else(|| CliError::config("config", "JSON has no embedded `config` object"))?;
        let mut cfg = RawConfig::default();
        for (k, v) in obj {
            let v = v.as_str().ok_or_else(|| {
                CliError::config(k.clone(), "embedded config values must be strings")
            })?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        if !KEYS.contains(&key) {
            return Err(CliError::config(key, format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            CliError::config("--set", format!("expected key=value, got `{pair}`"))
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// All entries with defaults filled in.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let mut out = self.entries.clone();
        for (k, v) in DEFAULTS {
            out.entry(k.to_string()).or_insert_with(|| v.to_string());
        }
        out
    }
}

fn parse_f64(key: &str, s: &str) -> CliResult<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::config(key, format!("`{s}` is not a finite number")))
}

fn parse_vec(key: &str, s: &str) -> CliResult<Vec<f64>> {
    let v = s
        .split(',')
        .map(|p| parse_f64(key, p))
        .collect::<CliResult<Vec<_>>>()?;
    if v.is_empty() {
        return Err(CliError::config(key, "empty list"));
    }
    Ok(v)
}

fn parse_usize(key: &str, s: &str) -> CliResult<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| CliError::config(key, format!("`{s}` is not a non-negative integer")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub gammas: Vec<f64>,
    /// Explicit probe parameters; generated from the truth when absent.
    pub probes: Option<Vec<Vec<f64>>>,
    pub epsilons: Vec<f64>,
    pub theta_stars: Option<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub t_grid: Vec<f64>,
}

/// Interpreted, cross-checked configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub truth: MixtureParams,
    pub gamma: f64,
    pub total_samples: usize,
    pub seed: u64,
    pub allocation: Allocation,
    pub theta0: Option<MixtureParams>,
    pub em: EmConfig,
    pub scheme: QuadratureScheme,
    pub verify: VerifyConfig,
    pub out_dir: PathBuf,
    /// The resolved key-value map, embedded in every output document.
    pub resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> CliResult<Self> {
        let r = raw.resolved();
        let req = |key: &str| -> CliResult<&str> {
            r.get(key)
                .map(String::as_str)
                .ok_or_else(|| CliError::config(key, "required key missing"))
        };

        let kind = match req("model.kind")? {
            "gmm" => ModelKind::Gmm,
            "sym2" => ModelKind::Sym2,
            "expfam" => {
                let name = req("model.family")?;
                ModelKind::ExpFam(ExpFamilySpec::by_name(name).ok_or_else(|| {
                    CliError::config("model.family", format!("unknown family `{name}`"))
                })?)
            }
            other => {
                return Err(CliError::config(
                    "model.kind",
                    format!("expected gmm, expfam or sym2, got `{other}`"),
                ))
            }
        };
        if !matches!(kind, ModelKind::ExpFam(_)) && r.contains_key("model.family") {
            return Err(CliError::config(
                "model.family",
                "only valid with model.kind = expfam",
            ));
        }

        let params = |key: &str, values: Vec<f64>| -> CliResult<MixtureParams> {
            if kind == ModelKind::Sym2 {
                if values.len() != 1 {
                    return Err(CliError::config(key, "sym2 takes a single scalar"));
                }
                return Ok(MixtureParams::sym2(values[0]));
            }
            let weights = match r.get("model.weights") {
                Some(w) => parse_vec("model.weights", w)?,
                None => vec![1.0 / values.len() as f64; values.len()],
            };
            if weights.len() != values.len() {
                return Err(CliError::config(
                    key,
                    format!("{} values but {} weights", values.len(), weights.len()),
                ));
            }
            let total: f64 = weights.iter().sum();
            if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(CliError::config(
                    "model.weights",
                    format!("weights must be positive and sum to 1 (sum = {total})"),
                ));
            }
            let p = MixtureParams::new(weights, values)
                .map_err(|e| CliError::config(key, e.to_string()))?;
            kind.validate(&p)
                .map_err(|e| CliError::config(key, e.to_string()))?;
            Ok(p)
        };

        if kind == ModelKind::Sym2 && r.contains_key("model.weights") {
            return Err(CliError::config(
                "model.weights",
                "sym2 has fixed equal weights",
            ));
        }
        let truth = params(
            "model.theta_star",
            parse_vec("model.theta_star", req("model.theta_star")?)?,
        )?;
        let theta0 = match r.get("em.theta0") {
            Some(s) => Some(params("em.theta0", parse_vec("em.theta0", s)?)?),
            None => None,
        };

        let gamma = parse_f64("data.gamma", req("data.gamma")?)?;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(CliError::config("data.gamma", "must lie in [0, 1]"));
        }
        let total_samples = parse_usize("data.total_samples", req("data.total_samples")?)?;
        if total_samples == 0 {
            return Err(CliError::config("data.total_samples", "must be positive"));
        }
        let seed = req("data.seed")?
            .parse::<u64>()
            .map_err(|_| CliError::config("data.seed", "expected an unsigned 64-bit integer"))?;
        let allocation = match req("data.allocation")? {
            "proportional" => Allocation::Proportional,
            "multinomial" => Allocation::Multinomial,
            other => {
                return Err(CliError::config(
                    "data.allocation",
                    format!("expected proportional or multinomial, got `{other}`"),
                ))
            }
        };

        let em = EmConfig {
            max_iters: parse_usize("em.max_iters", req("em.max_iters")?)?,
            tol: parse_f64("em.tol", req("em.tol")?)?,
            record_trajectory: true,
        };
        em.validate()
            .map_err(|e| CliError::config("em", e.to_string()))?;

        let scheme = QuadratureScheme {
            abs_tol: parse_f64("quadrature.abs_tol", req("quadrature.abs_tol")?)?,
            range_sigma: parse_f64("quadrature.range_sigma", req("quadrature.range_sigma")?)?,
            max_subdivisions: parse_usize(
                "quadrature.max_subdivisions",
                req("quadrature.max_subdivisions")?,
            )?,
        };
        scheme
            .validate()
            .map_err(|e| CliError::config("quadrature", e.to_string()))?;

        let probes = match r.get("verify.probes") {
            Some(s) => {
                let list = s
                    .split(';')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| parse_vec("verify.probes", p))
                    .collect::<CliResult<Vec<_>>>()?;
                for p in &list {
                    params("verify.probes", p.clone())?;
                }
                Some(list)
            }
            None => None,
        };
        let verify = VerifyConfig {
            gammas: parse_vec("verify.gammas", req("verify.gammas")?)?,
            probes,
            epsilons: parse_vec("verify.epsilons", req("verify.epsilons")?)?,
            theta_stars: r
                .get("verify.theta_stars")
                .map(|s| parse_vec("verify.theta_stars", s))
                .transpose()?,
            offsets: parse_vec("verify.offsets", req("verify.offsets")?)?,
            t_grid: parse_vec("verify.t_grid", req("verify.t_grid")?)?,
        };
        if verify.gammas.iter().any(|g| !(0.0..1.0).contains(g)) {
            return Err(CliError::config("verify.gammas", "each must lie in [0, 1)"));
        }

        Ok(Self {
            kind,
            truth,
            gamma,
            total_samples,
            seed,
            allocation,
            theta0,
            em,
            scheme,
            verify,
            out_dir: PathBuf::from(req("output.directory")?),
            resolved: r.clone(),
        })
    }

    /// Rebuilds a parameter vector of the configured kind.
    pub fn params(&self, values: Vec<f64>) -> CliResult<MixtureParams> {
        if self.kind == ModelKind::Sym2 {
            return Ok(MixtureParams::sym2(values[0]));
        }
        self.truth
            .with_theta(values)
            .map_err(|e| CliError::config("verify.probes", e.to_string()))
    }

    pub fn require_theta0(&self) -> CliResult<&MixtureParams> {
        self.theta0
            .as_ref()
            .ok_or_else(|| CliError::config("em.theta0", "required for this command"))
    }
}
