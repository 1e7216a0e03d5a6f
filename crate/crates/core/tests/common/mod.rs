//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the library's numerical kernels: quadrature,
//! linear algebra and distribution functions are written from scratch so
//! that agreement is meaningful.

#![allow(dead_code)]

use fieldcal::covariance::{composite_correlation, Hyperparameters, KernelPoint, SpacePoint};
use fieldcal::dataio::{EventDataset, Observation};
use fieldcal::inference::PriorSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Quadrature

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GAUSS7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive Gauss-Kronrod on `[a, b]` to relative tolerance `rel`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let mut stack = vec![(a, b, 0usize)];
    let whole = gk15(f, a, b).0.abs().max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, err) = gk15(f, lo, hi);
        // Accept on the width-weighted budget, at roundoff level, or at depth.
        let budget = rel * whole * (hi - lo) / (b - a);
        if err <= budget || err <= 64.0 * f64::EPSILON * v.abs() || depth >= 40 {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    total
}

/// `K_nu(x)` from the integral `int_0^inf exp(-x cosh t) cosh(nu t) dt`,
/// computed as `exp(-x + m) * int exp(g(t) - m) dt` with `g` the log of the
/// integrand scaled by `exp(x)` and `m` its maximum, to avoid overflow.
pub fn bessel_k_quadrature(nu: f64, x: f64) -> f64 {
    let g = |t: f64| -x * (t.cosh() - 1.0) + ln_cosh(nu * t);
    // The log-integrand is concave with its peak where x sinh t = nu tanh(nu t).
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while g(hi) > g(hi * 0.5) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1) < g(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let peak = 0.5 * (lo + hi);
    let gmax = g(peak);
    let mut end = peak.max(1.0);
    while g(end) > gmax - 60.0 {
        end *= 1.25;
    }
    let f = |t: f64| (g(t) - gmax).exp();
    let mut total = 0.0;
    // Split at the peak so the adaptive rule sees the bulk on both sides.
    if peak > 0.0 {
        total += integrate(&f, 0.0, peak, 1e-14);
    }
    total += integrate(&f, peak, end, 1e-14);
    total * (gmax - x).exp()
}

fn ln_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

// ---------------------------------------------------------------------------
// Dense linear algebra by Gauss-Jordan elimination with partial pivoting.

pub type Mat = Vec<Vec<f64>>;

pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        assert!(d != 0.0, "singular matrix");
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[r][k] -= f * m[c][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..p).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn matvec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn sub(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect())
        .collect()
}

pub fn scale(a: &Mat, c: f64) -> Mat {
    a.iter().map(|r| r.iter().map(|x| x * c).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest absolute entry.
pub fn max_abs(a: &Mat) -> f64 {
    a.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// Norm-wise relative difference `max|a - b| / max|b|`.
pub fn rel_diff_mat(a: &Mat, b: &Mat) -> f64 {
    max_abs(&sub(a, b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

pub fn rel_diff_vec(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    num / den.max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// Distribution references

/// Standard normal CDF from the complementary error function computed by
/// its continued fraction / series (Numerical Recipes erfc via Chebyshev).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    // erfc via the incomplete gamma relation, evaluated by series or
    // Lentz continued fraction.
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    let x2 = x * x;
    if x < 2.0 {
        // erf(x) = 2x/sqrt(pi) * sum_k (-1)^k x^{2k} / (k! (2k+1))
        let mut term = x;
        let mut sum = x;
        let mut k = 0.0;
        loop {
            k += 1.0;
            term *= -x2 / k;
            let add = term / (2.0 * k + 1.0);
            sum += add;
            if add.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        1.0 - 2.0 / std::f64::consts::PI.sqrt() * sum
    } else {
        // Continued fraction: erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + 1/2/(x + 1/(x + 3/2/(x + ...))))
        let tiny = 1e-300;
        let mut f = x;
        let mut c = x;
        let mut d = 0.0;
        for n in 1..500 {
            let a = n as f64 * 0.5;
            d = x + a * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + a / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-x2).exp() / (std::f64::consts::PI.sqrt() * f)
    }
}

/// Quantile of a continuous increasing CDF by bisection.
pub fn bisect_quantile(cdf: &dyn Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ln_gamma_lanczos(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_lanczos(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Density of F(d1, d2).
pub fn f_pdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_b = ln_gamma_lanczos(0.5 * d1) + ln_gamma_lanczos(0.5 * d2) - ln_gamma_lanczos(0.5 * (d1 + d2));
    (0.5 * d1 * (d1 * x).ln() + 0.5 * d2 * d2.ln() - 0.5 * (d1 + d2) * (d1 * x + d2).ln() - x.ln() - ln_b).exp()
}

/// F CDF by integrating the density in the variable `u = x / (1 + x)`,
/// which maps `[0, inf)` onto `[0, 1)` and removes the heavy tail.
pub fn f_cdf_quadrature(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let g = |u: f64| {
        let t = u / (1.0 - u);
        f_pdf(t, d1, d2) / ((1.0 - u) * (1.0 - u))
    };
    let u = x / (1.0 + x);
    integrate(&g, 0.0, u, 1e-13)
}

/// Student-t density.
pub fn t_pdf(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma_lanczos(0.5 * (df + 1.0)) - ln_gamma_lanczos(0.5 * df) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - 0.5 * (df + 1.0) * (1.0 + t * t / df).ln()).exp()
}

/// Student-t CDF by symmetric integration of the density from 0.
pub fn t_cdf_quadrature(t: f64, df: f64) -> f64 {
    let half = integrate(&|s| t_pdf(s, df), 0.0, t.abs(), 1e-14);
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// One-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_test(sample: &[f64], cdf: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = 2.0 * (-1.0_f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Model oracles

pub fn theta_example() -> Hyperparameters {
    Hyperparameters {
        omega: 0.3,
        lambda2: 0.25,
        phi1: 5.0,
        phi2: 3.0,
        nu1: 1.2,
        nu2: 0.8,
        phi_x: 8.0,
    }
}

pub fn random_theta(r: &mut ChaCha8Rng) -> Hyperparameters {
    Hyperparameters {
        omega: r.random_range(-1.5..1.5),
        lambda2: r.random_range(0.05..0.8),
        phi1: r.random_range(1.0..8.0),
        phi2: r.random_range(1.0..8.0),
        nu1: r.random_range(0.3..3.0),
        nu2: r.random_range(0.3..3.0),
        phi_x: r.random_range(3.0..15.0),
    }
}

/// A random event with `k` stations in a 10 x 10 box.
pub fn random_event(r: &mut ChaCha8Rng, k: usize) -> EventDataset {
    let pairs = (0..k)
        .map(|i| {
            let x = r.random_range(16.0..35.0);
            Observation {
                station: format!("s{i:03}"),
                location: (r.random_range(0.0..10.0), r.random_range(0.0..10.0)),
                x,
                y: 0.9 * x + 2.0 + r.random_range(-4.0..4.0),
            }
        })
        .collect();
    EventDataset {
        event: "ev".into(),
        pairs,
        threshold: 15.0,
    }
}

/// Rotated kernel points for a dataset, record ids `0..k`.
pub fn points_for(data: &EventDataset, omega: f64) -> Vec<KernelPoint> {
    let (s, c) = omega.sin_cos();
    data.pairs
        .iter()
        .enumerate()
        .map(|(k, p)| KernelPoint {
            event: 0,
            record: k as u64,
            location: SpacePoint::new(c * p.location.0 - s * p.location.1, s * p.location.0 + c * p.location.1),
            intensity: p.x,
        })
        .collect()
}

pub fn basis_row(x: f64, q: usize) -> Vec<f64> {
    (0..q).map(|i| x.powi(i as i32)).collect()
}

pub fn to_mat(m: &fieldcal::numerics::DenseMatrix) -> Mat {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// Correlation matrix between two point sets from pairwise kernel calls.
pub fn kernel_block(a: &[KernelPoint], b: &[KernelPoint], theta: &Hyperparameters) -> Mat {
    a.iter()
        .map(|p| b.iter().map(|q| composite_correlation(p, q, theta).unwrap()).collect())
        .collect()
}

/// Prediction by explicit conditioning of the joint Gaussian of the
/// measurements and the targets, with the regression coefficients
/// integrated out under `beta ~ N(b, sigma2 B)` and `sigma2` fixed at the
/// marginal estimate `(a + r^T (A + H B H^T)^{-1} r) / (K + d)`,
/// `r = y - H b`.
pub struct ConditioningOracle {
    pub mean: Vec<f64>,
    pub field_cov: Mat,
    pub measurement_cov: Mat,
    pub sigma2: f64,
}

pub fn condition(
    data: &EventDataset,
    targets: &[(f64, f64, f64)],
    theta: &Hyperparameters,
    prior: &PriorSpec,
) -> ConditioningOracle {
    let q = prior.q();
    let k = data.len();
    let pts = points_for(data, theta.omega);
    let (s, c) = theta.omega.sin_cos();
    let tpts: Vec<KernelPoint> = targets
        .iter()
        .enumerate()
        .map(|(i, &(s1, s2, x))| KernelPoint {
            event: 0,
            record: 1_000_000 + i as u64,
            location: SpacePoint::new(c * s1 - s * s2, s * s1 + c * s2),
            intensity: x,
        })
        .collect();
    let a = kernel_block(&pts, &pts, theta);
    let h: Mat = data.pairs.iter().map(|p| basis_row(p.x, q)).collect();
    let ht: Mat = targets.iter().map(|t| basis_row(t.2, q)).collect();
    let b_cov = to_mat(&prior.b_cov);
    let y = data.y();

    let hb = matvec(&h, &prior.b);
    let r: Vec<f64> = y.iter().zip(&hb).map(|(a, b)| a - b).collect();
    let syy = add(&a, &matmul(&matmul(&h, &b_cov), &transpose(&h)));
    let syy_inv = inverse(&syy);
    let sigma2 = (prior.a + dot(&r, &matvec(&syy_inv, &r))) / (k as f64 + prior.d);

    let t_cross = kernel_block(&tpts, &pts, theta);
    let sty = add(&t_cross, &matmul(&matmul(&ht, &b_cov), &transpose(&h)));
    // Smooth correlation among targets is 1 at zero lag; the field's own
    // share of the nugget goes on the diagonal.
    let mut ctt = kernel_block(&tpts, &tpts, theta);
    let nugget_z = (theta.lambda2 - prior.sigma_y * prior.sigma_y / sigma2).max(0.0);
    for (i, row) in ctt.iter_mut().enumerate() {
        row[i] = 1.0 + nugget_z;
    }
    let stt = add(&ctt, &matmul(&matmul(&ht, &b_cov), &transpose(&ht)));
    let gain = matmul(&sty, &syy_inv);
    let mean: Vec<f64> = matvec(&ht, &prior.b)
        .iter()
        .zip(matvec(&gain, &r))
        .map(|(m, g)| m + g)
        .collect();
    let field_cov = scale(&sub(&stt, &matmul(&gain, &transpose(&sty))), sigma2);
    let mut measurement_cov = field_cov.clone();
    for (i, row) in measurement_cov.iter_mut().enumerate() {
        row[i] += prior.sigma_y * prior.sigma_y;
    }
    ConditioningOracle {
        mean,
        field_cov,
        measurement_cov,
        sigma2,
    }
}

/// Posterior summaries of a one-coefficient normal inverse-gamma model
/// obtained by brute-force integration over `(beta, ln sigma2)`.
pub struct NigQuadrature {
    /// Posterior mean of the coefficient.
    pub beta_mean: f64,
    /// `1 / E[1 / sigma2]`.
    pub sigma2_harmonic: f64,
    /// Log of the unnormalized evidence
    /// `int int |A|^{-1/2} sigma^{-K} exp(-Q / 2 sigma2) p(beta, sigma2) dbeta dsigma2`,
    /// with `p` the unnormalized prior density.
    pub ln_evidence: f64,
}

/// Integrates the joint density of `y ~ N(beta 1, sigma2 A)` with prior
/// `beta | sigma2 ~ N(b, sigma2 bb)` and `sigma2 ~ IG(d/2, a/2)`.
pub fn nig_quadrature(y: &[f64], a_mat: &Mat, b: f64, bb: f64, a: f64, d: f64) -> NigQuadrature {
    let k = y.len() as f64;
    let inv = inverse(a_mat);
    let ones = vec![1.0; y.len()];
    let ainv_y = matvec(&inv, y);
    let ainv_1 = matvec(&inv, &ones);
    // Q(beta) = c0 - 2 beta c1 + beta^2 c2.
    let (c0, c1, c2) = (dot(y, &ainv_y), dot(&ones, &ainv_y), dot(&ones, &ainv_1));
    let ln_det_a = ln_det(a_mat);

    // Centre the coefficient grid on the generalized least-squares estimate.
    let centre = c1 / c2;
    let resid = (c0 - c1 * c1 / c2).max(1e-12);
    let width = (resid / (k * c2)).sqrt().max(1e-6);
    let s_centre = (resid / k).ln();

    let log_density = |beta: f64, s: f64| {
        let sigma2 = s.exp();
        let q = c0 - 2.0 * beta * c1 + beta * beta * c2;
        let prior = -0.5 * s - (beta - b).powi(2) / (2.0 * sigma2 * bb) - (0.5 * d + 1.0) * s - a / (2.0 * sigma2);
        // The trailing `+ s` is the Jacobian of sigma2 = exp(s).
        -0.5 * ln_det_a - 0.5 * k * s - q / (2.0 * sigma2) + prior + s
    };

    let gl = gauss_legendre(12);
    let panels = |lo: f64, hi: f64, n: usize| -> Vec<(f64, f64)> {
        let h = (hi - lo) / n as f64;
        (0..n)
            .flat_map(|p| {
                let a0 = lo + p as f64 * h;
                gl.iter().map(move |&(x, w)| (a0 + 0.5 * h * (x + 1.0), 0.5 * h * w))
            })
            .collect()
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let u_nodes = panels(-half_pi, half_pi, 120);
    let s_nodes = panels(s_centre - 30.0, s_centre + 12.0, 120);

    let mut terms = Vec::with_capacity(u_nodes.len() * s_nodes.len());
    for &(u, wu) in &u_nodes {
        let beta = centre + width * u.tan();
        let jac = width / u.cos().powi(2);
        for &(s, ws) in &s_nodes {
            terms.push((beta, s, log_density(beta, s) + (wu * jac * ws).ln()));
        }
    }
    let m = terms.iter().fold(f64::NEG_INFINITY, |m, t| m.max(t.2));
    let (mut z, mut zb, mut zinv) = (0.0, 0.0, 0.0);
    for &(beta, s, l) in &terms {
        let w = (l - m).exp();
        z += w;
        zb += w * beta;
        zinv += w * (-s).exp();
    }
    NigQuadrature {
        beta_mean: zb / z,
        sigma2_harmonic: z / zinv,
        ln_evidence: m + z.ln(),
    }
}

/// Log-determinant by Gaussian elimination with partial pivoting.
pub fn ln_det(a: &Mat) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        total += d.abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / d;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    total
}

/// One event drawn from the marginal model `y ~ N(H beta, sigma2 A)` at
/// random locations in a 20 x 20 box, with simulated intensities in
/// `[16, 36)`.
pub fn simulate_event(
    r: &mut ChaCha8Rng,
    name: &str,
    k: usize,
    theta: &Hyperparameters,
    beta: &[f64],
    sigma2: f64,
) -> EventDataset {
    let mut data = random_event(r, k);
    data.event = name.into();
    for p in &mut data.pairs {
        p.location = (r.random_range(0.0..20.0), r.random_range(0.0..20.0));
    }
    let pts = points_for(&data, theta.omega);
    let mut cov = fieldcal::covariance::correlation_matrix(&pts, theta, true).unwrap();
    cov.scale(sigma2);
    let mean: Vec<f64> = data.pairs.iter().map(|p| dot(&basis_row(p.x, beta.len()), beta)).collect();
    let y = fieldcal::prediction::sample_gaussian(&mean, &cov, 1, r.random()).unwrap().remove(0);
    for (p, v) in data.pairs.iter_mut().zip(y) {
        p.y = v;
    }
    data
}

pub const TRUE_BETA: [f64; 3] = [2.0, 0.9, 0.01];
pub const TRUE_SIGMA2: f64 = 40.0;
