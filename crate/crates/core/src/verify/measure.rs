//! Comparing two spectral measures through their Stieltjes transforms on
//! scales above the resolution of either measure.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dos::DosCurve;
use crate::error::{Error, Result};

const OMEGA_PANELS: usize = 128;
const ETA_PANELS: usize = 64;

/// A finite measure on the real line exposing interval masses and the
/// Stieltjes transform `m(z) = int dnu(x) / (x - z)`.
pub trait SpectralMeasure {
    fn stieltjes(&self, z: Complex64) -> Result<Complex64>;
    /// Mass of the closed interval `[a, b]`.
    fn mass(&self, a: f64, b: f64) -> Result<f64>;
}

impl SpectralMeasure for DosCurve {
    fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        DosCurve::stieltjes(self, z)
    }

    fn mass(&self, a: f64, b: f64) -> Result<f64> {
        self.integral_between(a, b)
    }
}

/// Equal-weight atoms, e.g. an empirical eigenvalue distribution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomicMeasure {
    points: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("atomic measure needs points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("non-finite atom".into()));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

impl SpectralMeasure for AtomicMeasure {
    fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for &x in &self.points {
            acc += (Complex64::new(x, 0.0) - z).finv();
        }
        Ok(acc / self.points.len() as f64)
    }

    fn mass(&self, a: f64, b: f64) -> Result<f64> {
        let lo = self.points.partition_point(|&x| x < a);
        let hi = self.points.partition_point(|&x| x <= b);
        Ok((hi - lo) as f64 / self.points.len() as f64)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasureDistance {
    pub tau1: f64,
    pub tau2: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub epsilon: f64,
    /// `|nu1([tau1, tau2]) - nu2([tau1, tau2])|`.
    pub lhs: f64,
    /// `nu1([tau1 - eta1, tau1]) + nu1([tau2, tau2 + eta2])`.
    pub boundary_mass: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    /// `boundary_mass + j1 + j2 + j3`; the distance bound is an absolute
    /// constant times this.
    pub bracket: f64,
}

impl MeasureDistance {
    pub fn ratio(&self) -> f64 {
        self.lhs / self.bracket
    }
}

fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Simpson in log(eta), for integrands spread over decades of eta.
fn simpson_log<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    simpson(a.ln(), b.ln(), panels, |u| {
        let eta = u.exp();
        f(eta) * eta
    })
}

/// Bound the discrepancy of two measures on `[tau1, tau2]` by boundary
/// regularization masses plus Stieltjes-transform integrals on scales
/// `eta1`, `eta2` at the edges and `epsilon` in the interior. Reports the
/// left-hand side and every term of the bracket; callers compare with
/// their constant of choice.
pub fn stieltjes_measure_distance(
    nu1: &dyn SpectralMeasure,
    nu2: &dyn SpectralMeasure,
    window: (f64, f64),
    eta1: f64,
    eta2: f64,
    epsilon: f64,
) -> Result<MeasureDistance> {
    let (tau1, tau2) = window;
    if !(tau1 < tau2) {
        return Err(Error::Invalid("window must satisfy tau1 < tau2".into()));
    }
    for (name, eta) in [("eta1", eta1), ("eta2", eta2)] {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::Invalid(format!("{name} must lie in (0, 1]")));
        }
    }
    if epsilon < eta1.max(eta2) {
        return Err(Error::Invalid(
            "epsilon must be at least max(eta1, eta2)".into(),
        ));
    }

    // Errors inside the quadrature surface as NaN and are rejected below.
    let m1 = |z: Complex64| nu1.stieltjes(z).unwrap_or(Complex64::new(f64::NAN, f64::NAN));
    let m_diff = |z: Complex64| match (nu1.stieltjes(z), nu2.stieltjes(z)) {
        (Ok(a), Ok(b)) => (a - b).norm(),
        _ => f64::NAN,
    };

    let lhs = (nu1.mass(tau1, tau2)? - nu2.mass(tau1, tau2)?).abs();
    let boundary_mass = nu1.mass(tau1 - eta1, tau1)? + nu1.mass(tau2, tau2 + eta2)?;

    let edge_term = |omega_lo: f64, omega_hi: f64, eta: f64| -> f64 {
        simpson(omega_lo, omega_hi, OMEGA_PANELS, |omega| {
            let z = Complex64::new(omega, eta);
            let smoothing = if eta < 2.0 * epsilon {
                simpson_log(eta, 2.0 * epsilon, ETA_PANELS, |h| {
                    m_diff(Complex64::new(omega, h))
                }) / eta
            } else {
                0.0
            };
            m1(z).im + m_diff(z) + smoothing
        })
    };
    let j1 = edge_term(tau1 - eta1, tau1, eta1);
    let j2 = edge_term(tau2, tau2 + eta2, eta2);

    let j3 = simpson(tau1 - eta1, tau2 + eta2, OMEGA_PANELS, |omega| {
        simpson_log(epsilon, 2.0 * epsilon, ETA_PANELS, |h| {
            m_diff(Complex64::new(omega, h))
        })
    }) / epsilon;

    if !(j1.is_finite() && j2.is_finite() && j3.is_finite()) {
        return Err(Error::Domain(
            "measure evaluation failed inside quadrature".into(),
        ));
    }

    Ok(MeasureDistance {
        tau1,
        tau2,
        eta1,
        eta2,
        epsilon,
        lhs,
        boundary_mass,
        j1,
        j2,
        j3,
        bracket: boundary_mass + j1 + j2 + j3,
    })
}
