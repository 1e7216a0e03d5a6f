//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::covariance::Hyperparameters;
use crate::error::{Error, Result};
use crate::inference::PriorSpec;
use crate::numerics::{DenseMatrix, OptimizerOptions};

const KNOWN_KEYS: &[&str] = &[
    "stations",
    "grids",
    "threshold_u",
    "prior.b",
    "prior.B",
    "prior.a",
    "prior.d",
    "sigma_y",
    "basis_degree",
    "theta0",
    "optimizer.max_evals",
    "optimizer.tolerance",
    "optimizer.restarts",
    "optimizer.initial_step",
    "validation_holdout",
    "seed",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub station_paths: Vec<PathBuf>,
    pub grid_paths: Vec<PathBuf>,
    pub threshold_u: f64,
    pub prior: PriorSpec,
    pub theta0: Option<Hyperparameters>,
    pub optimizer: OptimizerOptions,
    pub validation_holdout: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// SHA-256 of the effective settings, hex encoded.
    pub hash: String,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
        map.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(map)
}

/// Parses `key=value` override flags.
pub fn parse_overrides(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))
        })
        .collect()
}

fn list(v: &str) -> Vec<&str> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

fn numbers(key: &str, v: &str) -> Result<Vec<f64>> {
    list(v)
        .into_iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Config(format!("{key}: '{s}' is not a finite number")))
        })
        .collect()
}

fn number(key: &str, v: &str) -> Result<f64> {
    match numbers(key, v)?.as_slice() {
        [x] => Ok(*x),
        _ => Err(Error::Config(format!("{key} takes a single number"))),
    }
}

fn integer<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a non-negative integer")))
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, overrides)
    }

    /// Builds a config; relative paths are resolved against `base`.
    pub fn from_text(text: &str, base: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = parse_pairs(text)?;
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        if let Some(k) = map.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown configuration key '{k}'")));
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let paths = |k: &str| -> Vec<PathBuf> { get(k).map(|v| list(v).into_iter().map(resolve).collect()).unwrap_or_default() };

        let station_paths = paths("stations");
        let grid_paths = paths("grids");
        if station_paths.is_empty() || grid_paths.is_empty() {
            return Err(Error::Config("both 'stations' and 'grids' must be set".into()));
        }

        let threshold_u = get("threshold_u").map_or(Ok(15.0), |v| number("threshold_u", v))?;
        if threshold_u < 0.0 {
            return Err(Error::Config("threshold_u must be non-negative".into()));
        }

        let mut prior = PriorSpec::default();
        if let Some(v) = get("basis_degree") {
            prior.basis_degree = integer("basis_degree", v)?;
            let q = prior.q().min(3);
            prior.b = PriorSpec::default().b[..q].to_vec();
            prior.b_cov = DenseMatrix::from_diagonal(&[0.1, 1.0, 1.0][..q]);
        }
        let q = prior.q();
        if let Some(v) = get("prior.b") {
            prior.b = numbers("prior.b", v)?;
        }
        if let Some(v) = get("prior.B") {
            let vals = numbers("prior.B", v)?;
            prior.b_cov = if vals.len() == q {
                DenseMatrix::from_diagonal(&vals)
            } else if vals.len() == q * q {
                DenseMatrix::from_row_major(q, q, vals)?
            } else {
                return Err(Error::Config(format!(
                    "prior.B needs {q} diagonal or {} full entries",
                    q * q
                )));
            };
        }
        if let Some(v) = get("prior.a") {
            prior.a = number("prior.a", v)?;
        }
        if let Some(v) = get("prior.d") {
            prior.d = number("prior.d", v)?;
        }
        if let Some(v) = get("sigma_y") {
            prior.sigma_y = number("sigma_y", v)?;
        }
        prior.validate().map_err(|e| Error::Config(format!("invalid prior: {e}")))?;

        let theta0 = match get("theta0") {
            None => None,
            Some(v) => {
                let t = numbers("theta0", v)?;
                let [omega, lambda2, phi1, phi2, nu1, nu2, phi_x] = t.as_slice() else {
                    return Err(Error::Config(
                        "theta0 needs 7 values: omega lambda2 phi1 phi2 nu1 nu2 phi_x".into(),
                    ));
                };
                let theta = Hyperparameters {
                    omega: *omega,
                    lambda2: *lambda2,
                    phi1: *phi1,
                    phi2: *phi2,
                    nu1: *nu1,
                    nu2: *nu2,
                    phi_x: *phi_x,
                };
                theta.validate()?;
                Some(theta)
            }
        };

        let mut optimizer = OptimizerOptions::default();
        if let Some(v) = get("optimizer.max_evals") {
            optimizer.max_evals = integer("optimizer.max_evals", v)?;
        }
        if let Some(v) = get("optimizer.tolerance") {
            optimizer.simplex_tolerance = number("optimizer.tolerance", v)?;
        }
        if let Some(v) = get("optimizer.restarts") {
            optimizer.restarts = integer("optimizer.restarts", v)?;
        }
        if let Some(v) = get("optimizer.initial_step") {
            optimizer.initial_step = number("optimizer.initial_step", v)?;
        }
        let seed = get("seed").map_or(Ok(0), |v| integer("seed", v))?;
        optimizer.seed = seed;

        let validation_holdout = get("validation_holdout").map_or(Ok(30), |v| integer("validation_holdout", v))?;
        let output_dir = resolve(get("output_dir").unwrap_or("."));

        // Hash the effective settings, not the file text, so that comments
        // and key order do not matter.
        let mut hasher = Sha256::new();
        for (k, v) in &map {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let hash = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>();

        Ok(Self {
            station_paths,
            grid_paths,
            threshold_u,
            prior,
            theta0,
            optimizer,
            validation_holdout,
            seed,
            output_dir,
            hash,
        })
    }
}
