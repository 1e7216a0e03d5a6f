//! Posterior of the actual field, the measurement-space predictive
//! distribution and conditional simulation.
//!
//! For targets with smooth cross-correlations `t_i` to the training records,
//! basis rows `h_i` and `r_i = h_i - H^T A^{-1} t_i`:
//!
//! ```text
//! mean_i  = h_i^T beta + t_i^T A^{-1} (y - H beta)
//! cov_ij  = sigma2 [ c(i, j) + delta_ij n_Z - t_i^T A^{-1} t_j + r_i^T B* r_j ]
//! ```
//!
//! where `n_Z = max(lambda2 - sigma_y^2 / sigma2, 0)` is the part of the
//! nugget that belongs to the actual field. The measurement-space version
//! adds `sigma_y^2` to the diagonal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::{rotate_coords, CompositeKernel, KernelPoint};
use crate::dataio::{format_sig6, EventId, GridField};
use crate::error::{Error, Result};
use crate::inference::{basis, EventFit, ModelFit};
use crate::numerics::{dot, pivoted_cholesky, std_normal_quantile, student_t_quantile, DenseMatrix};
use crate::parallel;

/// A prediction location in rotated-grid coordinates with its simulated value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub location: (f64, f64),
    pub intensity: f64,
}

impl Target {
    pub fn new(s1: f64, s2: f64, intensity: f64) -> Self {
        Self {
            location: (s1, s2),
            intensity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSpace {
    ActualField,
    Measurement,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldCovariance {
    Full(DenseMatrix),
    Diagonal(Vec<f64>),
}

/// Which reference law to use for intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalLaw {
    Gaussian,
    StudentT,
    /// Student-t up to 30 degrees of freedom, Gaussian beyond.
    Auto,
}

#[derive(Debug, Clone)]
pub struct PosteriorField {
    pub event: EventId,
    pub targets: Vec<Target>,
    pub mean: Vec<f64>,
    pub covariance: FieldCovariance,
    /// `K - q`.
    pub df: usize,
    pub space: FieldSpace,
}

impl PosteriorField {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variances(&self) -> Vec<f64> {
        match &self.covariance {
            FieldCovariance::Full(m) => m.diagonal(),
            FieldCovariance::Diagonal(d) => d.clone(),
        }
    }

    pub fn sd(&self) -> Vec<f64> {
        self.variances().into_iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Two-sided quantile multiplier for a central interval of `level`.
    pub fn quantile_multiplier(&self, level: f64, law: IntervalLaw) -> Result<f64> {
        let p = 0.5 + 0.5 * level;
        let use_t = match law {
            IntervalLaw::Gaussian => false,
            IntervalLaw::StudentT => true,
            IntervalLaw::Auto => self.df <= 30,
        };
        if use_t && self.df >= 1 {
            student_t_quantile(p, self.df as f64)
        } else {
            std_normal_quantile(p)
        }
    }

    /// Pointwise central intervals `(lower, upper)`.
    pub fn intervals(&self, level: f64, law: IntervalLaw) -> Result<Vec<(f64, f64)>> {
        let z = self.quantile_multiplier(level, law)?;
        Ok(self
            .mean
            .iter()
            .zip(self.sd())
            .map(|(m, s)| (m - z * s, m + z * s))
            .collect())
    }

    /// CSV with columns `event,s1,s2,x_sim,post_mean,post_sd,lo95,hi95`.
    pub fn to_csv(&self, law: IntervalLaw) -> Result<String> {
        let mut out = String::from("event,s1,s2,x_sim,post_mean,post_sd,lo95,hi95\n");
        let sd = self.sd();
        for (i, (lo, hi)) in self.intervals(0.95, law)?.into_iter().enumerate() {
            let t = &self.targets[i];
            let row = [
                format_sig6(t.location.0),
                format_sig6(t.location.1),
                format_sig6(t.intensity),
                format_sig6(self.mean[i]),
                format_sig6(sd[i]),
                format_sig6(lo),
                format_sig6(hi),
            ];
            out.push_str(&format!("{},{}\n", self.event, row.join(",")));
        }
        Ok(out)
    }
}

/// One simulated field consistent with an event's measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRealization {
    pub event: EventId,
    pub values: Vec<f64>,
    pub seed: u64,
    pub index: usize,
}

/// Per-target quantities shared by the mean and the covariance.
struct TargetTerms {
    point: KernelPoint,
    mean: f64,
    /// `L^{-1} t`.
    whitened_t: Vec<f64>,
    /// `h - H^T A^{-1} t`.
    r: Vec<f64>,
}

fn target_terms(fit: &ModelFit, ev: &EventFit, kernel: &CompositeKernel, targets: &[Target]) -> Result<Vec<TargetTerms>> {
    let q = ev.q();
    for t in targets {
        if !(t.location.0.is_finite() && t.location.1.is_finite() && t.intensity.is_finite()) {
            return Err(Error::Domain("prediction targets must be finite".into()));
        }
    }
    parallel::map_range(targets.len(), |i| {
        let t = &targets[i];
        let point = KernelPoint {
            event: ev.index,
            // Targets never share a record with training data.
            record: u64::MAX - i as u64,
            location: rotate_coords(t.location, fit.theta.omega),
            intensity: t.intensity,
        };
        let tvec: Vec<f64> = ev.points.iter().map(|p| kernel.smooth_points(&point, p)).collect();
        let h = basis(t.intensity, q)?;
        let mean = dot(&h, &ev.beta_hat) + dot(&tvec, &ev.weights);
        let whitened_t = ev.a_factor.solve_lower(&tvec);
        let ht_ainv_t = ev.whitened_h.tr_matvec(&whitened_t)?;
        let r = h.iter().zip(&ht_ainv_t).map(|(a, b)| a - b).collect();
        Ok(TargetTerms {
            point,
            mean,
            whitened_t,
            r,
        })
    })
    .into_iter()
    .collect()
}

fn field_nugget(fit: &ModelFit, ev: &EventFit) -> f64 {
    let sy2 = fit.prior.sigma_y * fit.prior.sigma_y;
    (fit.theta.lambda2 - sy2 / ev.sigma_hat2).max(0.0)
}

fn predict(fit: &ModelFit, event: &EventId, targets: &[Target], full_cov: bool, space: FieldSpace) -> Result<PosteriorField> {
    let ev = fit.event(event)?;
    let kernel = CompositeKernel::new(&fit.theta)?;
    let terms = target_terms(fit, ev, &kernel, targets)?;
    let nugget = field_nugget(fit, ev);
    let noise = match space {
        FieldSpace::ActualField => 0.0,
        FieldSpace::Measurement => fit.prior.sigma_y * fit.prior.sigma_y,
    };
    let s2 = ev.sigma_hat2;
    let basis_term = |a: &TargetTerms, b: &TargetTerms| ev.b_star.bilinear(&a.r, &b.r).unwrap_or(f64::NAN);
    let diag_var = |a: &TargetTerms| {
        let v = s2 * (1.0 + nugget - dot(&a.whitened_t, &a.whitened_t) + basis_term(a, a));
        v.max(0.0) + noise
    };

    let covariance = if full_cov {
        let n = terms.len();
        let rows = parallel::map_range(n, |i| {
            (0..i)
                .map(|j| {
                    let (a, b) = (&terms[i], &terms[j]);
                    let c = kernel.smooth_points(&a.point, &b.point);
                    s2 * (c - dot(&a.whitened_t, &b.whitened_t) + basis_term(a, b))
                })
                .collect::<Vec<f64>>()
        });
        let mut m = DenseMatrix::zeros(n.max(1), n.max(1));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            m[(i, i)] = diag_var(&terms[i]);
        }
        FieldCovariance::Full(m)
    } else {
        FieldCovariance::Diagonal(terms.iter().map(diag_var).collect())
    };

    Ok(PosteriorField {
        event: event.clone(),
        targets: targets.to_vec(),
        mean: terms.iter().map(|t| t.mean).collect(),
        covariance,
        df: ev.k.saturating_sub(ev.q()),
        space,
    })
}

/// Posterior of the actual field at `targets`.
pub fn posterior_field(fit: &ModelFit, event: &EventId, targets: &[Target], full_cov: bool) -> Result<PosteriorField> {
    predict(fit, event, targets, full_cov, FieldSpace::ActualField)
}

/// Predictive distribution of new measurements at `targets` (full covariance).
pub fn predictive_measurements(fit: &ModelFit, event: &EventId, targets: &[Target]) -> Result<PosteriorField> {
    predict(fit, event, targets, true, FieldSpace::Measurement)
}

/// Draws `n` vectors from `N(mean, cov)` using one seeded stream.
///
/// The covariance is factorized by pivoted Cholesky, so singular (including
/// all-zero) covariances are accepted.
pub fn sample_gaussian(mean: &[f64], cov: &DenseMatrix, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if cov.rows() != mean.len() || cov.cols() != mean.len() {
        return Err(Error::DimensionMismatch("mean and covariance sizes differ".into()));
    }
    let factor = pivoted_cholesky(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = mean.len();
    Ok((0..n)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            factor
                .apply_g(&z)
                .into_iter()
                .zip(mean)
                .map(|(g, m)| m + g)
                .collect()
        })
        .collect())
}

/// Conditional simulation of `n` realizations of the posterior field.
pub fn sample_field(posterior: &PosteriorField, n: usize, seed: u64) -> Result<Vec<FieldRealization>> {
    if n == 0 {
        return Err(Error::Domain("number of realizations must be at least 1".into()));
    }
    let FieldCovariance::Full(cov) = &posterior.covariance else {
        return Err(Error::Domain("conditional simulation needs the full covariance".into()));
    };
    let draws = sample_gaussian(&posterior.mean, cov, n, seed)?;
    Ok(draws
        .into_iter()
        .enumerate()
        .map(|(index, values)| FieldRealization {
            event: posterior.event.clone(),
            values,
            seed,
            index,
        })
        .collect())
}

/// Posterior over every non-missing grid cell.
#[derive(Debug, Clone)]
pub struct GridPrediction {
    pub grid: GridField,
    pub posterior: PosteriorField,
    /// Row-major cell index of each posterior target.
    pub cells: Vec<usize>,
    /// Per target: simulated value at or below the fitting threshold.
    pub extrapolated: Vec<bool>,
    pub threshold: f64,
}

impl GridPrediction {
    fn scatter(&self, values: impl IntoIterator<Item = f64>) -> Result<GridField> {
        let mut out = vec![f64::NAN; self.grid.len()];
        for (&cell, v) in self.cells.iter().zip(values) {
            out[cell] = v;
        }
        self.grid.with_values(out)
    }

    pub fn mean_grid(&self) -> Result<GridField> {
        self.scatter(self.posterior.mean.clone())
    }

    pub fn sd_grid(&self) -> Result<GridField> {
        self.scatter(self.posterior.sd())
    }

    /// Posterior mean minus the simulated field.
    pub fn difference_grid(&self) -> Result<GridField> {
        let diff: Vec<f64> = self
            .cells
            .iter()
            .zip(&self.posterior.mean)
            .map(|(&c, m)| m - self.grid.values[c])
            .collect();
        self.scatter(diff)
    }

    /// Posterior mean divided by the simulated field.
    pub fn ratio_grid(&self) -> Result<GridField> {
        let ratio: Vec<f64> = self
            .cells
            .iter()
            .zip(&self.posterior.mean)
            .map(|(&c, m)| {
                let x = self.grid.values[c];
                if x == 0.0 {
                    f64::NAN
                } else {
                    m / x
                }
            })
            .collect();
        self.scatter(ratio)
    }

    /// 1 where the cell lies at or below the threshold, 0 otherwise.
    pub fn mask_grid(&self) -> Result<GridField> {
        self.scatter(self.extrapolated.iter().map(|&e| if e { 1.0 } else { 0.0 }))
    }
}

/// Predicts the actual field at every grid cell centre.
///
/// Cells at or below the event's threshold are predicted but flagged as
/// extrapolated; missing cells stay missing.
pub fn predict_grid(fit: &ModelFit, event: &EventId, grid: &GridField, full_cov: bool) -> Result<GridPrediction> {
    let ev = fit.event(event)?;
    let mut cells = Vec::new();
    let mut targets = Vec::new();
    for i in 0..grid.n1 {
        for j in 0..grid.n2 {
            let x = grid.value(i, j);
            if x.is_nan() {
                continue;
            }
            let (s1, s2) = grid.cell_center(i, j);
            cells.push(i * grid.n2 + j);
            targets.push(Target::new(s1, s2, x));
        }
    }
    if targets.is_empty() {
        return Err(Error::Domain("grid has no non-missing cells".into()));
    }
    let posterior = posterior_field(fit, event, &targets, full_cov)?;
    let extrapolated = targets.iter().map(|t| t.intensity <= ev.threshold).collect();
    Ok(GridPrediction {
        grid: grid.clone(),
        posterior,
        cells,
        extrapolated,
        threshold: ev.threshold,
    })
}
