//! Synthetic events drawn from the model itself, for testing and for
//! checking parameter recovery.
//!
//! Each event gets a smooth simulated footprint on a regular grid. Stations
//! are scattered uniformly over the grid and kept where the footprint
//! exceeds the threshold. The actual field is the regression mean plus a
//! smooth Gaussian process and a micro-scale nugget, and measurements add
//! independent error with standard deviation `sigma_y`, so that the total
//! measurement covariance is `sigma2 (Sigma + lambda2 I)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{correlation_matrix, Hyperparameters};
use crate::dataio::{interpolate_field, EventDataset, EventId, GridField, Observation};
use crate::error::{Error, Result};
use crate::inference::{basis, kernel_points};
use crate::parallel;
use crate::prediction::sample_gaussian;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n1: usize,
    pub n2: usize,
    pub spacing: f64,
    pub theta: Hyperparameters,
    pub beta: Vec<f64>,
    /// Process variance `sigma^2`.
    pub sigma2: f64,
    pub sigma_y: f64,
    pub threshold: f64,
    pub stations_per_event: usize,
    pub events: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n1: 40,
            n2: 40,
            spacing: 1.0,
            theta: Hyperparameters {
                omega: 0.3,
                lambda2: 0.25,
                phi1: 5.0,
                phi2: 3.0,
                nu1: 1.2,
                nu2: 0.8,
                phi_x: 8.0,
            },
            beta: vec![2.0, 0.9, 0.01],
            sigma2: 40.0,
            sigma_y: 3.0,
            threshold: 15.0,
            stations_per_event: 200,
            events: 10,
        }
    }
}

impl SyntheticSpec {
    /// Variance of the part of the nugget that belongs to the actual field.
    pub fn micro_variance(&self) -> f64 {
        self.sigma2 * self.theta.lambda2 - self.sigma_y * self.sigma_y
    }

    fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        if self.n1 < 2 || self.n2 < 2 || !(self.spacing > 0.0) {
            return Err(Error::Domain("synthetic grid needs at least 2x2 cells and positive spacing".into()));
        }
        if !(1..=3).contains(&self.beta.len()) {
            return Err(Error::Domain("beta must have 1 to 3 coefficients".into()));
        }
        if !(self.sigma2 > 0.0) || self.sigma_y < 0.0 {
            return Err(Error::Domain("variances must be positive".into()));
        }
        if self.micro_variance() < 0.0 {
            return Err(Error::Domain(format!(
                "sigma2 * lambda2 = {} is smaller than the measurement variance {}",
                self.sigma2 * self.theta.lambda2,
                self.sigma_y * self.sigma_y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEvent {
    pub grid: GridField,
    /// All stations above the threshold, ordered by station id.
    pub dataset: EventDataset,
    /// Actual-field values at the stations, in dataset order.
    pub truth: Vec<f64>,
}

/// An elongated, rotated Gaussian bump over a calm background.
pub fn footprint(spec: &SyntheticSpec, event: EventId, rng: &mut impl Rng) -> Result<GridField> {
    let ext1 = (spec.n1 - 1) as f64 * spec.spacing;
    let ext2 = (spec.n2 - 1) as f64 * spec.spacing;
    let c1 = ext1 * rng.random_range(0.35..0.65);
    let c2 = ext2 * rng.random_range(0.35..0.65);
    let w1 = ext1 * rng.random_range(0.25..0.35);
    let w2 = ext2 * rng.random_range(0.18..0.26);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let peak = rng.random_range(22.0..28.0);
    let (sin, cos) = angle.sin_cos();
    let mut values = Vec::with_capacity(spec.n1 * spec.n2);
    for i in 0..spec.n1 {
        for j in 0..spec.n2 {
            let (d1, d2) = (i as f64 * spec.spacing - c1, j as f64 * spec.spacing - c2);
            let (u, v) = (cos * d1 + sin * d2, -sin * d1 + cos * d2);
            values.push(10.0 + peak * (-0.5 * ((u / w1).powi(2) + (v / w2).powi(2))).exp());
        }
    }
    GridField::new(event, spec.n1, spec.n2, (0.0, 0.0), (spec.spacing, spec.spacing), values)
}

/// Draws actual-field values and measurements at `pairs` (whose `y` is
/// ignored) for one event.
pub fn sample_at(spec: &SyntheticSpec, pairs: &[Observation], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let points = kernel_points(pairs, spec.theta.omega, 0);
    let mut cov = correlation_matrix(&points, &spec.theta, false)?;
    cov.scale(spec.sigma2);
    cov.add_to_diagonal(spec.micro_variance());
    let mean = pairs
        .iter()
        .map(|p| Ok(crate::numerics::dot(&basis(p.x, spec.beta.len())?, &spec.beta)))
        .collect::<Result<Vec<f64>>>()?;
    let z = sample_gaussian(&mean, &cov, 1, seed)?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(parallel::derive_seed(seed, u64::MAX));
    let y = z
        .iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + spec.sigma_y * e
        })
        .collect();
    Ok((z, y))
}

/// Generates event `index`; the same `(spec, index, seed)` always gives the
/// same event.
pub fn generate_event(spec: &SyntheticSpec, index: usize, seed: u64) -> Result<SyntheticEvent> {
    spec.validate()?;
    let event_seed = parallel::derive_seed(seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(event_seed);
    let event = EventId(format!("ev{index:02}"));
    let grid = footprint(spec, event.clone(), &mut rng)?;
    if !grid.values.iter().any(|&v| v > spec.threshold) {
        return Err(Error::EmptyDataset(event.to_string()));
    }

    let ext1 = (spec.n1 - 1) as f64 * spec.spacing;
    let ext2 = (spec.n2 - 1) as f64 * spec.spacing;
    let mut pairs = Vec::with_capacity(spec.stations_per_event);
    while pairs.len() < spec.stations_per_event {
        let s1 = rng.random_range(0.0..=ext1);
        let s2 = rng.random_range(0.0..=ext2);
        let x = interpolate_field(&grid, s1, s2)?;
        if x > spec.threshold {
            pairs.push(Observation {
                station: format!("st{:04}", pairs.len()),
                location: (s1, s2),
                x,
                y: f64::NAN,
            });
        }
    }
    let (truth, y) = sample_at(spec, &pairs, parallel::derive_seed(event_seed, 1))?;
    for (p, v) in pairs.iter_mut().zip(y) {
        p.y = v;
    }
    Ok(SyntheticEvent {
        grid,
        dataset: EventDataset {
            event,
            pairs,
            threshold: spec.threshold,
        },
        truth,
    })
}

/// Generates `spec.events` independent events.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SyntheticEvent>> {
    parallel::map_range(spec.events, |j| generate_event(spec, j, seed))
        .into_iter()
        .collect()
}

/// Station file contents (`event,station,s1,s2,gust`) for the given events.
/// Values are written at full precision.
pub fn stations_csv(events: &[SyntheticEvent]) -> String {
    let mut out = String::from("event,station,s1,s2,gust\n");
    for ev in events {
        for p in &ev.dataset.pairs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                ev.dataset.event, p.station, p.location.0, p.location.1, p.y
            );
        }
    }
    out
}

/// Root mean squared error of the simulated field against the measurements.
pub fn raw_rmse(data: &EventDataset) -> f64 {
    let n = data.len() as f64;
    (data.pairs.iter().map(|p| (p.y - p.x).powi(2)).sum::<f64>() / n).sqrt()
}
