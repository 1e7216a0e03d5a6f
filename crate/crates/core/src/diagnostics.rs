//! Model checking: binned semivariograms with Monte Carlo bounds, and
//! hold-out validation (standardized errors, pivoted-Cholesky errors and a
//! Mahalanobis test against an F reference).

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariance::CompositeKernel;
use crate::dataio::{format_sig6, EventDataset, EventId, Observation};
use crate::error::{Error, Result};
use crate::inference::{EventFit, ModelFit};
use crate::numerics::{cholesky, dot, f_sf, pivoted_cholesky, std_normal_quantile, DenseMatrix};
use crate::parallel;
use crate::prediction::{predictive_measurements, FieldCovariance, Target};

/// Default number of parametric replicates behind the variogram bounds.
pub const DEFAULT_VARIOGRAM_SIMULATIONS: usize = 200;
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariogramVariable {
    /// Separation along the first rotated axis.
    H1,
    /// Separation along the second rotated axis.
    H2,
    /// Absolute difference in simulated intensity.
    DeltaIntensity,
}

impl VariogramVariable {
    pub fn name(&self) -> &'static str {
        match self {
            Self::H1 => "h1",
            Self::H2 => "h2",
            Self::DeltaIntensity => "delta_intensity",
        }
    }
}

impl std::str::FromStr for VariogramVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h1" => Ok(Self::H1),
            "h2" => Ok(Self::H2),
            "intensity" | "delta_intensity" | "dx" => Ok(Self::DeltaIntensity),
            other => Err(Error::Config(format!(
                "unknown variogram variable '{other}' (expected h1, h2 or intensity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariogramTable {
    pub event: EventId,
    pub variable: VariogramVariable,
    /// `bins + 1` edges; bin `b` covers `[edges[b], edges[b + 1]]`.
    pub bin_edges: Vec<f64>,
    /// Mean separation of the pairs in each bin.
    pub bin_mid: Vec<f64>,
    pub empirical: Vec<f64>,
    pub model: Vec<f64>,
    pub lower95: Vec<f64>,
    pub upper95: Vec<f64>,
    pub counts: Vec<usize>,
}

impl VariogramTable {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Share of bins whose empirical value lies within the bounds.
    pub fn fraction_inside(&self) -> f64 {
        let inside = self
            .empirical
            .iter()
            .zip(self.lower95.iter().zip(&self.upper95))
            .filter(|(e, (lo, hi))| *lo <= *e && *e <= *hi)
            .count();
        inside as f64 / self.bins() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lower_edge,upper_edge,bin_mid,count,empirical,model,lower95,upper95\n");
        for b in 0..self.bins() {
            let _ = writeln!(
                out,
                "{b},{},{},{},{},{},{},{},{}",
                format_sig6(self.bin_edges[b]),
                format_sig6(self.bin_edges[b + 1]),
                format_sig6(self.bin_mid[b]),
                self.counts[b],
                format_sig6(self.empirical[b]),
                format_sig6(self.model[b]),
                format_sig6(self.lower95[b]),
                format_sig6(self.upper95[b]),
            );
        }
        out
    }

    /// Plot-ready long format: `variable,bin_mid,empirical,model,lo,hi`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("variable,bin_mid,empirical,model,lo,hi\n");
        for b in 0..self.bins() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.variable.name(),
                format_sig6(self.bin_mid[b]),
                format_sig6(self.empirical[b]),
                format_sig6(self.model[b]),
                format_sig6(self.lower95[b]),
                format_sig6(self.upper95[b]),
            );
        }
        out
    }
}

struct Pairs {
    /// `(i, j)` index pairs, sorted by separation.
    idx: Vec<(usize, usize)>,
    sep: Vec<f64>,
    /// Bin boundaries as offsets into `idx`.
    offsets: Vec<usize>,
}

fn separation(ev: &EventFit, variable: VariogramVariable, i: usize, j: usize) -> f64 {
    let (a, b) = (&ev.points[i], &ev.points[j]);
    match variable {
        VariogramVariable::H1 => (a.location.s1 - b.location.s1).abs(),
        VariogramVariable::H2 => (a.location.s2 - b.location.s2).abs(),
        VariogramVariable::DeltaIntensity => (a.intensity - b.intensity).abs(),
    }
}

/// All within-event pairs, split into equal-count bins by separation.
fn binned_pairs(ev: &EventFit, variable: VariogramVariable, bins: usize) -> Result<Pairs> {
    let k = ev.k;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            pairs.push((separation(ev, variable, i, j), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let n = pairs.len();
    let offsets: Vec<usize> = (0..=bins).map(|b| b * n / bins).collect();
    if let Some(b) = (0..bins).find(|&b| offsets[b + 1] == offsets[b]) {
        return Err(Error::EmptyBin(b));
    }
    Ok(Pairs {
        idx: pairs.iter().map(|p| (p.1, p.2)).collect(),
        sep: pairs.iter().map(|p| p.0).collect(),
        offsets,
    })
}

fn bin_means(pairs: &Pairs, value: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    pairs
        .offsets
        .windows(2)
        .map(|w| {
            let s: f64 = pairs.idx[w[0]..w[1]].iter().map(|&(i, j)| value(i, j)).sum();
            s / (w[1] - w[0]) as f64
        })
        .collect()
}

fn empirical_bins(pairs: &Pairs, resid: &[f64]) -> Vec<f64> {
    bin_means(pairs, |i, j| 0.5 * (resid[i] - resid[j]).powi(2))
}

/// Linear-interpolated sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior-mean regression coefficients for an arbitrary response vector
/// observed at the event's stations.
fn refit_beta(ev: &EventFit, prior_term: &[f64], y: &[f64]) -> Vec<f64> {
    let w = ev.a_factor.solve_lower(y);
    let mut rhs = prior_term.to_vec();
    for (r, wr) in w.iter().enumerate() {
        for (acc, z) in rhs.iter_mut().zip(ev.whitened_h.row(r)) {
            *acc += z * wr;
        }
    }
    ev.b_star.matvec(&rhs).expect("B* is q x q")
}

/// Binned semivariogram of the regression residuals for one event.
///
/// The model column averages `sigma2 (1 + lambda2 - c(p, p'))` over the pairs
/// in each bin. Bounds are the 2.5% and 97.5% quantiles of the empirical bin
/// values over `n_sim` residual fields simulated from the fitted model (with
/// coefficients re-estimated per replicate), widened if needed so they
/// always contain the model value.
pub fn semivariogram(
    fit: &ModelFit,
    event: &EventId,
    variable: VariogramVariable,
    bins: usize,
    n_sim: usize,
    seed: u64,
) -> Result<VariogramTable> {
    let ev = fit.event(event)?;
    if ev.k < 2 {
        return Err(Error::TooFewObservations {
            event: event.to_string(),
            count: ev.k,
            required: 2,
        });
    }
    if bins < 3 {
        return Err(Error::Domain(format!("need at least 3 bins, got {bins}")));
    }
    if n_sim < 2 {
        return Err(Error::Domain("need at least 2 simulations for bounds".into()));
    }
    let pairs = binned_pairs(ev, variable, bins)?;
    let kernel = CompositeKernel::new(&fit.theta)?;
    let s2 = ev.sigma_hat2;
    let lambda2 = fit.theta.lambda2;

    let empirical = empirical_bins(&pairs, &ev.residuals());
    let model = bin_means(&pairs, |i, j| {
        s2 * (1.0 + lambda2 - kernel.correlation(&ev.points[i], &ev.points[j]))
    });

    let prior_term = cholesky(&fit.prior.b_cov)?.solve(&fit.prior.b);
    let mean: Vec<f64> = (0..ev.k).map(|r| dot(ev.h.row(r), &ev.beta_hat)).collect();
    let sd = s2.sqrt();
    let replicates = parallel::map_range(n_sim, |rep| {
        let mut rng = ChaCha8Rng::seed_from_u64(parallel::derive_seed(seed, rep as u64));
        let z: Vec<f64> = (0..ev.k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = ev
            .a_factor
            .mul_lower(&z)
            .iter()
            .zip(&mean)
            .map(|(lz, m)| m + sd * lz)
            .collect();
        let beta = refit_beta(ev, &prior_term, &y);
        let resid: Vec<f64> = (0..ev.k).map(|r| y[r] - dot(ev.h.row(r), &beta)).collect();
        empirical_bins(&pairs, &resid)
    });

    let mut lower95 = Vec::with_capacity(bins);
    let mut upper95 = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut vals: Vec<f64> = replicates.iter().map(|r| r[b]).collect();
        vals.sort_by(f64::total_cmp);
        lower95.push(quantile_sorted(&vals, 0.025).min(model[b]));
        upper95.push(quantile_sorted(&vals, 0.975).max(model[b]));
    }

    let bin_edges = (0..=bins)
        .map(|b| {
            if b == bins {
                pairs.sep[pairs.sep.len() - 1]
            } else {
                pairs.sep[pairs.offsets[b]]
            }
        })
        .collect();
    let bin_mid = bin_means(&pairs, |i, j| separation(ev, variable, i, j));
    Ok(VariogramTable {
        event: event.clone(),
        variable,
        bin_edges,
        bin_mid,
        empirical,
        model,
        lower95,
        upper95,
        counts: pairs.offsets.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// Splits an event's pairs into training and validation sets.
///
/// The validation stations are a seeded uniform subsample of size `n`; both
/// halves keep the original station order. `n` must leave at least `q + 1`
/// training stations.
pub fn split_holdout(data: &EventDataset, n: usize, q: usize, seed: u64) -> Result<(EventDataset, EventDataset)> {
    let k = data.len();
    if n == 0 || n + q + 1 > k {
        return Err(Error::InsufficientStations(format!(
            "event {} has {k} stations; cannot hold out {n} and keep {} for fitting",
            data.event,
            q + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = vec![false; k];
    for i in sample(&mut rng, k, n) {
        held[i] = true;
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (p, h) in data.pairs.iter().zip(held) {
        if h {
            valid.push(p.clone());
        } else {
            train.push(p.clone());
        }
    }
    let make = |pairs| EventDataset {
        event: data.event.clone(),
        pairs,
        threshold: data.threshold,
    };
    Ok((make(train), make(valid)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub event: EventId,
    pub stations: Vec<String>,
    pub residuals: Vec<f64>,
    pub standardized_errors: Vec<f64>,
    /// `(original index, error)` in pivot order.
    pub pivoted_errors: Vec<(usize, f64)>,
    /// `(theoretical normal quantile, sorted pivoted error)`.
    pub qq_pairs: Vec<(f64, f64)>,
    pub mahalanobis: f64,
    pub mahalanobis_pvalue: f64,
    /// Sum of squared standardized errors, ignoring correlation.
    pub raw_sum_squares: f64,
    /// `(n_validation, K - q)`.
    pub df_pair: (usize, usize),
}

impl ValidationReport {
    pub fn errors_csv(&self) -> String {
        let mut out = String::from("event,station,residual,standardized,pivot_rank,pivoted\n");
        let mut rank = vec![0; self.stations.len()];
        let mut piv = vec![0.0; self.stations.len()];
        for (r, &(i, e)) in self.pivoted_errors.iter().enumerate() {
            rank[i] = r;
            piv[i] = e;
        }
        for i in 0..self.stations.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.event,
                self.stations[i],
                format_sig6(self.residuals[i]),
                format_sig6(self.standardized_errors[i]),
                rank[i],
                format_sig6(piv[i]),
            );
        }
        out
    }

    pub fn qq_csv(&self) -> String {
        let mut out = String::from("theoretical,observed\n");
        for (t, o) in &self.qq_pairs {
            let _ = writeln!(out, "{},{}", format_sig6(*t), format_sig6(*o));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "event,n_validation,df_denominator,mahalanobis,p_value,raw_sum_squares\n{},{},{},{},{},{}\n",
            self.event,
            self.df_pair.0,
            self.df_pair.1,
            format_sig6(self.mahalanobis),
            format_sig6(self.mahalanobis_pvalue),
            format_sig6(self.raw_sum_squares),
        )
    }
}

struct Predictive {
    residuals: Vec<f64>,
    cov: DenseMatrix,
    df: usize,
}

fn validation_predictive(fit: &ModelFit, event: &EventId, validation: &[Observation]) -> Result<Predictive> {
    if validation.is_empty() {
        return Err(Error::InsufficientStations("no validation stations".into()));
    }
    let targets: Vec<Target> = validation
        .iter()
        .map(|o| Target::new(o.location.0, o.location.1, o.x))
        .collect();
    let pred = predictive_measurements(fit, event, &targets)?;
    let FieldCovariance::Full(cov) = pred.covariance else {
        unreachable!("predictive measurements always carry the full covariance")
    };
    let residuals = validation.iter().zip(&pred.mean).map(|(o, m)| o.y - m).collect();
    Ok(Predictive {
        residuals,
        cov,
        df: pred.df,
    })
}

/// `(y - m) / sd` under the measurement-space predictive distribution.
pub fn standardized_errors(fit: &ModelFit, event: &EventId, validation: &[Observation]) -> Result<Vec<f64>> {
    let p = validation_predictive(fit, event, validation)?;
    Ok(standardize(&p))
}

fn standardize(p: &Predictive) -> Vec<f64> {
    p.residuals
        .iter()
        .zip(p.cov.diagonal())
        .map(|(r, v)| r / v.sqrt())
        .collect()
}

/// Decorrelated errors `G^{-1}(y - m)` with `G = P U^T` from a pivoted
/// Cholesky factorization of the predictive covariance, in pivot order and
/// tagged with their original validation index.
pub fn pivoted_errors(fit: &ModelFit, event: &EventId, validation: &[Observation]) -> Result<Vec<(usize, f64)>> {
    if validation.len() < 2 {
        return Err(Error::InsufficientStations("pivoted errors need at least 2 validation stations".into()));
    }
    let p = validation_predictive(fit, event, validation)?;
    pivoted(&p)
}

fn pivoted(p: &Predictive) -> Result<Vec<(usize, f64)>> {
    let factor = pivoted_cholesky(&p.cov)?;
    let e = factor.whiten(&p.residuals)?;
    Ok(factor.permutation().iter().copied().zip(e).collect())
}

/// Mahalanobis statistic `r^T V^{-1} r / n` and its upper-tail probability
/// under `F(n, K - q)`.
pub fn mahalanobis_test(fit: &ModelFit, event: &EventId, validation: &[Observation]) -> Result<(f64, f64)> {
    let p = validation_predictive(fit, event, validation)?;
    mahalanobis(&p)
}

fn mahalanobis(p: &Predictive) -> Result<(f64, f64)> {
    if p.df == 0 {
        return Err(Error::InsufficientStations("need more training stations than basis terms".into()));
    }
    let n = p.residuals.len();
    let d = cholesky(&p.cov)?.inv_quad_form(&p.residuals) / n as f64;
    let pval = f_sf(d, n as f64, p.df as f64)?;
    Ok((d, pval))
}

/// All hold-out diagnostics for one event.
pub fn validate(fit: &ModelFit, event: &EventId, validation: &[Observation]) -> Result<ValidationReport> {
    let p = validation_predictive(fit, event, validation)?;
    let standardized = standardize(&p);
    let pivoted_errors = if validation.len() >= 2 { pivoted(&p)? } else { Vec::new() };
    let mut sorted: Vec<f64> = pivoted_errors.iter().map(|&(_, e)| e).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let qq_pairs = sorted
        .iter()
        .enumerate()
        .map(|(i, &e)| Ok((std_normal_quantile((i as f64 + 0.5) / m)?, e)))
        .collect::<Result<Vec<_>>>()?;
    let (mahalanobis, pvalue) = mahalanobis(&p)?;
    Ok(ValidationReport {
        event: event.clone(),
        stations: validation.iter().map(|o| o.station.clone()).collect(),
        raw_sum_squares: standardized.iter().map(|e| e * e).sum(),
        residuals: p.residuals,
        standardized_errors: standardized,
        pivoted_errors,
        qq_pairs,
        mahalanobis,
        mahalanobis_pvalue: pvalue,
        df_pair: (validation.len(), p.df),
    })
}
