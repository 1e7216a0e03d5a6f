//! Reference distributions used by the validation diagnostics.

use std::f64::consts::{PI, SQRT_2};

use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

fn check_probability(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {p}")));
    }
    Ok(())
}

fn check_df(df: f64) -> Result<()> {
    if !(df >= 1.0 && df.is_finite()) {
        return Err(Error::Domain(format!("degrees of freedom must be >= 1, got {df}")));
    }
    Ok(())
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of the standard normal CDF, polished by Newton steps on the CDF.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    check_probability(p)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = -SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let dens = std_normal_pdf(x);
        if dens <= 0.0 {
            break;
        }
        // Work on the tail nearest to p to avoid cancellation.
        let step = if x < 0.0 {
            (std_normal_cdf(x) - p) / dens
        } else {
            ((1.0 - p) - std_normal_cdf(-x)) / dens
        };
        x -= step;
    }
    Ok(x)
}

pub fn student_t_pdf(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma(0.5 * (df + 1.0)) - ln_gamma(0.5 * df) - 0.5 * (df * PI).ln();
    (ln_c - 0.5 * (df + 1.0) * (1.0 + t * t / df).ln()).exp()
}

/// Lower-tail probability of Student's t.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + t * t));
    Ok(if t > 0.0 { 1.0 - tail } else { tail })
}

/// Beyond this many degrees of freedom the t quantile equals the normal one
/// to better than 1e-8 and the incomplete beta becomes expensive.
const T_NORMAL_LIMIT: f64 = 1e8;

/// Inverse CDF of Student's t with `df` degrees of freedom.
pub fn student_t_quantile(p: f64, df: f64) -> Result<f64> {
    check_probability(p)?;
    check_df(df)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    let z = std_normal_quantile(p)?;
    if df >= T_NORMAL_LIMIT {
        return Ok(z);
    }
    // Solve on the upper tail and mirror.
    let upper = p > 0.5;
    let tail = if upper { 1.0 - p } else { p };
    let tail_at = |t: f64| 0.5 * beta_reg(0.5 * df, 0.5, df / (df + t * t));
    // Cornish-Fisher start, then safeguarded Newton on the tail probability.
    let zz = z.abs();
    let mut t = zz + (zz.powi(3) + zz) / (4.0 * df);
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let f = tail_at(t) - tail;
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let dens = student_t_pdf(t, df);
        let mut next = t + f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * t.max(1.0) };
        }
        if (next - t).abs() <= 1e-14 * t.abs().max(1.0) {
            t = next;
            break;
        }
        t = next;
    }
    Ok(if upper { t } else { -t })
}

fn check_f_args(x: f64, d1: f64, d2: f64) -> Result<()> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("F argument must be non-negative, got {x}")));
    }
    check_df(d1)?;
    check_df(d2)
}

/// CDF of the F(d1, d2) distribution via the regularized incomplete beta.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_f_args(x, d1, d2)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(beta_reg(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2)))
}

/// Upper-tail probability `1 - F(x)`, computed without cancellation.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_f_args(x, d1, d2)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(beta_reg(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x)))
}
