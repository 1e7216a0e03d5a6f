//! Coordinate rotation and the composite correlation function.
//!
//! Two data records are correlated only within an event. For distinct
//! records the correlation is a product of a Matérn kernel along each
//! rotated axis and a squared-exponential kernel on simulated intensity; a
//! record paired with itself gets `1 + lambda2`.

use std::f64::consts::{FRAC_PI_2, PI};

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::{BesselOrder, DenseMatrix};
use crate::parallel;

/// Smoothness bounds used during fitting.
pub const NU_MIN: f64 = 0.05;
pub const NU_MAX: f64 = 30.0;

/// Coordinate tolerance under which two locations count as coincident.
pub const SAME_LOCATION_TOL: f64 = 1e-9;

/// Correlation hyperparameters shared by all events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Rotation angle of the transformed axes, radians in `(-pi/2, pi/2]`.
    pub omega: f64,
    /// Nugget, relative to the process variance.
    pub lambda2: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub nu1: f64,
    pub nu2: f64,
    /// Intensity range, in the units of the simulated field.
    pub phi_x: f64,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phi1", self.phi1),
            ("phi2", self.phi2),
            ("nu1", self.nu1),
            ("nu2", self.nu2),
            ("phi_x", self.phi_x),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::Domain(format!(
                "lambda2 must be non-negative, got {}",
                self.lambda2
            )));
        }
        if !(self.omega > -FRAC_PI_2 && self.omega <= FRAC_PI_2) {
            return Err(Error::Domain(format!(
                "omega must lie in (-pi/2, pi/2], got {}",
                self.omega
            )));
        }
        Ok(())
    }

    /// Maps any angle onto `(-pi/2, pi/2]`. Rotating by `pi` negates both
    /// transformed coordinates, which leaves every axis lag unchanged.
    pub fn wrap_omega(omega: f64) -> f64 {
        let mut w = omega.rem_euclid(PI);
        if w > FRAC_PI_2 {
            w -= PI;
        }
        w
    }
}

/// A location in the transformed (rotated) space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpacePoint {
    pub s1: f64,
    pub s2: f64,
}

impl SpacePoint {
    pub fn new(s1: f64, s2: f64) -> Self {
        Self { s1, s2 }
    }

    pub fn norm(&self) -> f64 {
        self.s1.hypot(self.s2)
    }

    pub fn coincides(&self, other: &SpacePoint) -> bool {
        (self.s1 - other.s1).abs() <= SAME_LOCATION_TOL
            && (self.s2 - other.s2).abs() <= SAME_LOCATION_TOL
    }
}

/// Argument of the correlation function: an event, a data record within it,
/// a transformed location and the simulated intensity there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPoint {
    pub event: u32,
    pub record: u64,
    pub location: SpacePoint,
    pub intensity: f64,
}

/// Applies the rotation `s = T s*` with
/// `T = [[cos w, -sin w], [sin w, cos w]]`.
pub fn rotate_coords(s_star: (f64, f64), omega: f64) -> SpacePoint {
    let (sin, cos) = omega.sin_cos();
    SpacePoint {
        s1: cos * s_star.0 - sin * s_star.1,
        s2: sin * s_star.0 + cos * s_star.1,
    }
}

/// One-dimensional Matérn correlation with precomputed constants.
#[derive(Debug, Clone, Copy)]
pub struct Matern {
    nu: f64,
    scale: f64,
    ln_norm: f64,
    order: BesselOrder,
}

impl Matern {
    pub fn new(phi: f64, nu: f64) -> Result<Self> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Domain(format!("Matérn range must be positive, got {phi}")));
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Domain(format!(
                "Matérn smoothness must be positive, got {nu}"
            )));
        }
        Ok(Self {
            nu,
            scale: (2.0 * nu).sqrt() / phi,
            ln_norm: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
            order: BesselOrder::new(nu),
        })
    }

    /// Correlation at lag `h >= 0`; exactly 1 at `h = 0`.
    #[inline]
    pub fn eval(&self, h: f64) -> f64 {
        if h == 0.0 {
            return 1.0;
        }
        let z = self.scale * h;
        let v = if self.nu == 0.5 {
            (-z).exp()
        } else if self.nu == 1.5 {
            (1.0 + z) * (-z).exp()
        } else if self.nu == 2.5 {
            (1.0 + z + z * z / 3.0) * (-z).exp()
        } else {
            (self.ln_norm + self.nu * z.ln() + self.order.ln_k(z)).exp()
        };
        v.min(1.0)
    }
}

/// `(2^{1-nu} / Gamma(nu)) (sqrt(2 nu) h / phi)^nu K_nu(sqrt(2 nu) h / phi)`.
pub fn matern_1d(h: f64, phi: f64, nu: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::Domain(format!("lag must be non-negative, got {h}")));
    }
    Ok(Matern::new(phi, nu)?.eval(h))
}

/// `exp(-((x - x') / phi_x)^2)`.
pub fn intensity_kernel(x: f64, x_prime: f64, phi_x: f64) -> Result<f64> {
    if !(phi_x > 0.0 && phi_x.is_finite()) {
        return Err(Error::Domain(format!(
            "intensity range must be positive, got {phi_x}"
        )));
    }
    Ok(intensity_unchecked(x, x_prime, phi_x))
}

#[inline]
fn intensity_unchecked(x: f64, x_prime: f64, phi_x: f64) -> f64 {
    let u = (x - x_prime) / phi_x;
    (-u * u).exp()
}

/// The composite kernel for a fixed set of hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct CompositeKernel {
    axis1: Matern,
    axis2: Matern,
    phi_x: f64,
    lambda2: f64,
}

impl CompositeKernel {
    pub fn new(theta: &Hyperparameters) -> Result<Self> {
        theta.validate()?;
        Ok(Self {
            axis1: Matern::new(theta.phi1, theta.nu1)?,
            axis2: Matern::new(theta.phi2, theta.nu2)?,
            phi_x: theta.phi_x,
            lambda2: theta.lambda2,
        })
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Nugget-free correlation of two locations within one event.
    #[inline]
    pub fn smooth(&self, a: &SpacePoint, xa: f64, b: &SpacePoint, xb: f64) -> f64 {
        let ci = intensity_unchecked(xa, xb, self.phi_x);
        if ci == 0.0 {
            return 0.0;
        }
        let c1 = self.axis1.eval((a.s1 - b.s1).abs());
        if c1 == 0.0 {
            return 0.0;
        }
        c1 * self.axis2.eval((a.s2 - b.s2).abs()) * ci
    }

    pub fn smooth_points(&self, p: &KernelPoint, q: &KernelPoint) -> f64 {
        if p.event != q.event {
            return 0.0;
        }
        self.smooth(&p.location, p.intensity, &q.location, q.intensity)
    }

    pub fn correlation(&self, p: &KernelPoint, q: &KernelPoint) -> f64 {
        if p.event != q.event {
            return 0.0;
        }
        if p.record == q.record
            && p.location.coincides(&q.location)
            && (p.intensity - q.intensity).abs() <= SAME_LOCATION_TOL
        {
            return 1.0 + self.lambda2;
        }
        self.smooth(&p.location, p.intensity, &q.location, q.intensity)
    }
}

/// Full composite correlation `c(p, q)`.
///
/// Both points must already be expressed in coordinates rotated by
/// `theta.omega`.
pub fn composite_correlation(p: &KernelPoint, q: &KernelPoint, theta: &Hyperparameters) -> Result<f64> {
    Ok(CompositeKernel::new(theta)?.correlation(p, q))
}

/// Correlation matrix over `points`: `A = Sigma + lambda2 I` with
/// `include_nugget`, `Sigma` otherwise. Entries across events are zero.
pub fn correlation_matrix(
    points: &[KernelPoint],
    theta: &Hyperparameters,
    include_nugget: bool,
) -> Result<DenseMatrix> {
    let kernel = CompositeKernel::new(theta)?;
    Ok(kernel_matrix(&kernel, points, include_nugget))
}

pub(crate) fn kernel_matrix(kernel: &CompositeKernel, points: &[KernelPoint], include_nugget: bool) -> DenseMatrix {
    let n = points.len();
    let diag = if include_nugget { 1.0 + kernel.lambda2 } else { 1.0 };
    let lower_rows = parallel::map_range(n, |i| {
        (0..i)
            .map(|j| kernel.smooth_points(&points[i], &points[j]))
            .collect::<Vec<f64>>()
    });
    let mut m = DenseMatrix::zeros(n.max(1), n.max(1));
    for (i, row) in lower_rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(i, i)] = diag;
    }
    m
}

/// Nugget-free correlations between `target` and each of `points`.
pub fn cross_correlation_vector(
    target: &KernelPoint,
    points: &[KernelPoint],
    theta: &Hyperparameters,
) -> Result<Vec<f64>> {
    let kernel = CompositeKernel::new(theta)?;
    Ok(points.iter().map(|p| kernel.smooth_points(target, p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> Hyperparameters {
        Hyperparameters {
            omega: 0.3,
            lambda2: 0.36,
            phi1: 5.0,
            phi2: 3.0,
            nu1: 1.2,
            nu2: 0.8,
            phi_x: 8.0,
        }
    }

    fn point(event: u32, record: u64, s1: f64, s2: f64, x: f64) -> KernelPoint {
        KernelPoint {
            event,
            record,
            location: SpacePoint::new(s1, s2),
            intensity: x,
        }
    }

    #[test]
    fn rotation_examples() {
        let r = rotate_coords((3.2, -1.1), 0.0);
        assert_eq!((r.s1, r.s2), (3.2, -1.1));
        let r = rotate_coords((1.0, 0.0), FRAC_PI_2);
        assert!(r.s1.abs() < 1e-15 && (r.s2 - 1.0).abs() < 1e-15);
        let r = rotate_coords((2.0, 1.0), 0.3);
        assert!((r.s1 - (2.0 * 0.3f64.cos() - 0.3f64.sin())).abs() < 1e-15);
        assert!((r.s2 - (2.0 * 0.3f64.sin() + 0.3f64.cos())).abs() < 1e-15);
        assert!((r.norm() - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matern_closed_forms() {
        assert_eq!(matern_1d(0.0, 2.0, 0.7).unwrap(), 1.0);
        let h = 1.3;
        assert!((matern_1d(h, 2.0, 0.5).unwrap() - (-h / 2.0f64).exp()).abs() < 1e-15);
        let s3 = 3f64.sqrt();
        assert!((matern_1d(4.0, 4.0, 1.5).unwrap() - (1.0 + s3) * (-s3).exp()).abs() < 1e-15);
        assert!((matern_1d(4.0, 4.0, 1.5).unwrap() - 0.48335).abs() < 1e-5);
        // General-order path agrees with the closed form near nu = 1/2.
        let general = matern_1d(h, 2.0, 0.5 + 1e-12).unwrap();
        assert!((general - (-h / 2.0f64).exp()).abs() < 1e-10);
        assert!(matern_1d(1.0, 0.0, 1.0).is_err());
        assert!(matern_1d(1.0, 1.0, -1.0).is_err());
        assert!(matern_1d(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(intensity_kernel(12.0, 12.0, 3.0).unwrap(), 1.0);
        assert!((intensity_kernel(10.0, 13.0, 3.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!((intensity_kernel(20.0, 25.0, 10.0).unwrap() - 0.778_800_783_071_404_9).abs() < 1e-15);
        assert_eq!(
            intensity_kernel(20.0, 25.0, 10.0).unwrap(),
            intensity_kernel(25.0, 20.0, 10.0).unwrap()
        );
        assert!(intensity_kernel(1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn composite_branches() {
        let th = theta();
        let p = point(0, 1, 1.0, 2.0, 20.0);
        let other_event = point(1, 1, 1.0, 2.0, 20.0);
        assert_eq!(composite_correlation(&p, &other_event, &th).unwrap(), 0.0);
        assert!((composite_correlation(&p, &p, &th).unwrap() - 1.36).abs() < 1e-15);
        // A second record at the same spot shares smooth correlation 1, no nugget.
        let twin = point(0, 2, 1.0, 2.0, 20.0);
        assert_eq!(composite_correlation(&p, &twin, &th).unwrap(), 1.0);
        let q = point(0, 3, 3.5, 1.0, 24.0);
        let expected = matern_1d(2.5, 5.0, 1.2).unwrap()
            * matern_1d(1.0, 3.0, 0.8).unwrap()
            * intensity_kernel(20.0, 24.0, 8.0).unwrap();
        assert!((composite_correlation(&p, &q, &th).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn matrix_diagonals() {
        let th = theta();
        let one = [point(0, 0, 0.0, 0.0, 18.0)];
        let a = correlation_matrix(&one, &th, true).unwrap();
        assert!((a[(0, 0)] - 1.36).abs() < 1e-15);
        let two = [point(0, 0, 1.0, 1.0, 18.0), point(0, 1, 1.0, 1.0, 18.0)];
        let s = correlation_matrix(&two, &th, false).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn cross_vector_limits() {
        let th = theta();
        let pts = [point(0, 0, 0.0, 0.0, 18.0), point(0, 1, 2.0, 1.0, 22.0)];
        let target = point(0, 99, 2.0, 1.0, 22.0);
        let t = cross_correlation_vector(&target, &pts, &th).unwrap();
        assert_eq!(t[1], 1.0);
        let far = point(0, 99, 1e4, -1e4, 18.0);
        let t = cross_correlation_vector(&far, &pts, &th).unwrap();
        assert!(t.iter().all(|v| *v < 1e-100));
    }

    #[test]
    fn omega_wrapping() {
        for w in [-3.0, -1.0, 0.0, 1.0, 1.6, 2.0, 5.0, FRAC_PI_2, -FRAC_PI_2] {
            let wrapped = Hyperparameters::wrap_omega(w);
            assert!(wrapped > -FRAC_PI_2 - 1e-15 && wrapped <= FRAC_PI_2);
            let k = ((w - wrapped) / PI).round();
            assert!((w - wrapped - k * PI).abs() < 1e-12);
        }
        assert_eq!(Hyperparameters::wrap_omega(-FRAC_PI_2), FRAC_PI_2);
    }
}
