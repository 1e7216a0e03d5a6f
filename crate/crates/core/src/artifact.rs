//! Plain-text serialization of a fitted model.
//!
//! The artifact stores the hyperparameters, the prior, every event's
//! training data and held-out stations, and the per-event summaries. On
//! reload the summaries are recomputed from the data and checked against the
//! stored values. Floats are written in Rust's shortest round-trip form, so
//! a reload reproduces the fit bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::covariance::Hyperparameters;
use crate::dataio::{write_atomic, EventDataset, EventId, Observation};
use crate::error::{Error, Result};
use crate::inference::{ModelFit, PriorSpec};
use crate::numerics::DenseMatrix;

const MAGIC: &str = "FIELDCAL-FIT v1";

/// Tolerance for the stored-versus-recomputed log-posterior check.
const RELOAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FitArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub fit: ModelFit,
    /// Validation stations held out of the fit, per event.
    pub holdout: BTreeMap<EventId, Vec<Observation>>,
}

impl FitArtifact {
    pub fn holdout(&self, event: &EventId) -> &[Observation] {
        self.holdout.get(event).map_or(&[], Vec::as_slice)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Artifact(format!("{kind} '{s}' must be non-empty and free of whitespace")));
    }
    Ok(())
}

fn write_obs(out: &mut String, tag: &str, o: &Observation) {
    let _ = writeln!(
        out,
        "{tag} {} {:?} {:?} {:?} {:?}",
        o.station, o.location.0, o.location.1, o.x, o.y
    );
}

pub fn format_artifact(a: &FitArtifact) -> Result<String> {
    let fit = &a.fit;
    let t = &fit.theta;
    let p = &fit.prior;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "config_hash {}", a.config_hash);
    let _ = writeln!(out, "seed {}", a.seed);
    let _ = writeln!(
        out,
        "theta {}",
        join(&[t.omega, t.lambda2, t.phi1, t.phi2, t.nu1, t.nu2, t.phi_x])
    );
    let _ = writeln!(out, "prior.b {}", join(&p.b));
    let _ = writeln!(out, "prior.B {}", join(p.b_cov.as_slice()));
    let _ = writeln!(out, "prior.a {:?}", p.a);
    let _ = writeln!(out, "prior.d {:?}", p.d);
    let _ = writeln!(out, "sigma_y {:?}", p.sigma_y);
    let _ = writeln!(out, "basis_degree {}", p.basis_degree);
    let _ = writeln!(out, "log_posterior {:?}", fit.log_posterior);
    let _ = writeln!(out, "evaluations {}", fit.evaluations);
    for ev in &fit.events {
        check_token("event id", ev.event.as_str())?;
        let _ = writeln!(out, "event {} {} {:?}", ev.event, ev.k, ev.threshold);
        let _ = writeln!(out, "beta_hat {}", join(&ev.beta_hat));
        let _ = writeln!(out, "sigma_hat2 {:?}", ev.sigma_hat2);
        for o in &ev.observations {
            check_token("station id", &o.station)?;
            write_obs(&mut out, "obs", o);
        }
        for o in a.holdout(&ev.event) {
            check_token("station id", &o.station)?;
            write_obs(&mut out, "holdout", o);
        }
        let _ = writeln!(out, "end");
    }
    Ok(out)
}

pub fn save_artifact(a: &FitArtifact, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &format_artifact(a)?)
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<FitArtifact> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_artifact(&text)
}

struct Cursor<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Cursor<'a> {
    fn next(&mut self) -> Result<(usize, &'a str, Vec<&'a str>)> {
        loop {
            let Some((n, line)) = self.lines.next() else {
                return Err(Error::Artifact("unexpected end of file".into()));
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            return Ok((n + 1, key, parts.collect()));
        }
    }

    fn expect(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, k, rest) = self.next()?;
        if k != key {
            return Err(Error::Artifact(format!("line {n}: expected '{key}', found '{k}'")));
        }
        Ok((n, rest))
    }

    fn floats(&mut self, key: &str, count: Option<usize>) -> Result<Vec<f64>> {
        let (n, rest) = self.expect(key)?;
        parse_floats(n, &rest, count)
    }

    fn float(&mut self, key: &str) -> Result<f64> {
        Ok(self.floats(key, Some(1))?[0])
    }

    fn integer(&mut self, key: &str) -> Result<u64> {
        let (n, rest) = self.expect(key)?;
        match rest.as_slice() {
            [v] => v
                .parse()
                .map_err(|_| Error::Artifact(format!("line {n}: '{v}' is not an integer"))),
            _ => Err(Error::Artifact(format!("line {n}: '{key}' takes one value"))),
        }
    }
}

fn parse_floats(line: usize, fields: &[&str], count: Option<usize>) -> Result<Vec<f64>> {
    if let Some(c) = count {
        if fields.len() != c {
            return Err(Error::Artifact(format!(
                "line {line}: expected {c} values, found {}",
                fields.len()
            )));
        }
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| Error::Artifact(format!("line {line}: '{f}' is not a number")))
        })
        .collect()
}

fn parse_obs(line: usize, rest: &[&str]) -> Result<Observation> {
    let [station, values @ ..] = rest else {
        return Err(Error::Artifact(format!("line {line}: empty observation")));
    };
    let v = parse_floats(line, values, Some(4))?;
    Ok(Observation {
        station: (*station).to_owned(),
        location: (v[0], v[1]),
        x: v[2],
        y: v[3],
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

pub fn parse_artifact(text: &str) -> Result<FitArtifact> {
    let mut cur = Cursor {
        lines: text.lines().enumerate().peekable(),
    };
    let (_, magic, rest) = cur.next()?;
    if format!("{magic} {}", rest.join(" ")) != MAGIC {
        return Err(Error::Artifact(format!("not a fit artifact (expected header '{MAGIC}')")));
    }
    let (n, hash) = cur.expect("config_hash")?;
    let config_hash = match hash.as_slice() {
        [h] => (*h).to_owned(),
        _ => return Err(Error::Artifact(format!("line {n}: malformed config hash"))),
    };
    let seed = cur.integer("seed")?;
    let t = cur.floats("theta", Some(7))?;
    let theta = Hyperparameters {
        omega: t[0],
        lambda2: t[1],
        phi1: t[2],
        phi2: t[3],
        nu1: t[4],
        nu2: t[5],
        phi_x: t[6],
    };
    let b = cur.floats("prior.b", None)?;
    let q = b.len();
    let b_cov = DenseMatrix::from_row_major(q, q, cur.floats("prior.B", Some(q * q))?)
        .map_err(|e| Error::Artifact(e.to_string()))?;
    let prior = PriorSpec {
        b,
        b_cov,
        a: cur.float("prior.a")?,
        d: cur.float("prior.d")?,
        sigma_y: cur.float("sigma_y")?,
        basis_degree: cur.integer("basis_degree")? as usize,
    };
    prior.validate()?;
    let stored_lp = cur.float("log_posterior")?;
    let evaluations = cur.integer("evaluations")? as usize;

    let mut datasets = Vec::new();
    let mut stored = Vec::new();
    let mut holdout = BTreeMap::new();
    while cur.lines.peek().is_some() {
        let (n, key, rest) = match cur.next() {
            Ok(v) => v,
            // Trailing blank or comment lines.
            Err(_) => break,
        };
        if key != "event" {
            return Err(Error::Artifact(format!("line {n}: expected 'event', found '{key}'")));
        }
        let [id, k, u] = rest.as_slice() else {
            return Err(Error::Artifact(format!("line {n}: malformed event line")));
        };
        let event = EventId::new(*id);
        let k: usize = k
            .parse()
            .map_err(|_| Error::Artifact(format!("line {n}: bad station count '{k}'")))?;
        let threshold = parse_floats(n, &[u], Some(1))?[0];
        let beta = cur.floats("beta_hat", Some(q))?;
        let sigma2 = cur.float("sigma_hat2")?;
        let (mut pairs, mut held) = (Vec::new(), Vec::new());
        loop {
            let (n, key, rest) = cur.next()?;
            match key {
                "obs" => pairs.push(parse_obs(n, &rest)?),
                "holdout" => held.push(parse_obs(n, &rest)?),
                "end" => break,
                other => return Err(Error::Artifact(format!("line {n}: unexpected '{other}'"))),
            }
        }
        if pairs.len() != k {
            return Err(Error::Artifact(format!(
                "event {event}: header says {k} stations, found {}",
                pairs.len()
            )));
        }
        if !held.is_empty() {
            holdout.insert(event.clone(), held);
        }
        stored.push((beta, sigma2));
        datasets.push(EventDataset {
            event,
            pairs,
            threshold,
        });
    }
    if datasets.is_empty() {
        return Err(Error::Artifact("artifact contains no events".into()));
    }

    let mut fit = ModelFit::at_theta(&datasets, theta, prior)?;
    fit.evaluations = evaluations;
    if relative_gap(fit.log_posterior, stored_lp) > RELOAD_TOL {
        return Err(Error::Artifact(format!(
            "recomputed log-posterior {} differs from stored {stored_lp}",
            fit.log_posterior
        )));
    }
    for (ev, (beta, sigma2)) in fit.events.iter().zip(&stored) {
        let beta_ok = ev.beta_hat.iter().zip(beta).all(|(a, b)| relative_gap(*a, *b) <= RELOAD_TOL);
        if !beta_ok || relative_gap(ev.sigma_hat2, *sigma2) > RELOAD_TOL {
            return Err(Error::Artifact(format!(
                "event {}: recomputed summaries differ from the stored ones",
                ev.event
            )));
        }
    }
    Ok(FitArtifact {
        config_hash,
        seed,
        fit,
        holdout,
    })
}
