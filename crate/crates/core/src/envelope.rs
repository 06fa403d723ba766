//! Local error envelope around a support minimum: casewise size functions
//! for the density and the two polynomial coefficients, and the unique
//! positive root of the associated cubic, which bounds the deviation of the
//! averaged resolvent trace near edges, gaps, and cusps.

use serde::{Deserialize, Serialize};

use crate::dos::{self, DosCurve, MinimumKind, SupportStructure, DEFAULT_C_STAR};
use crate::error::{Error, Result};

/// Coefficients of the envelope cubic at one `(omega, eta)` offset.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TildeCoefficients {
    pub rho_tilde: f64,
    pub pi1: f64,
    pub pi2: f64,
}

/// Error envelope anchored at a support minimum `tau0`. Offsets are taken
/// along `z = tau0 + theta * omega + i eta`, with `theta` oriented so that
/// positive `omega` points out of the interval at an edge.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub tau0: f64,
    pub kind: MinimumKind,
    /// -1 at a left interval endpoint, +1 otherwise.
    pub theta: f64,
    /// Adjacent gap length at an edge (1 beyond the extreme edges).
    pub delta_gap: f64,
    /// Density value at the minimum (internal minima only, else 0).
    pub rho_at_min: f64,
    pub n_dim: usize,
    pub gamma: f64,
    pub eps_tilde: f64,
    pub delta_star: f64,
    pub c_star: f64,
}

/// Default exponent slack: `gamma / 20`, safely inside `(0, gamma/16)`.
pub fn default_eps_tilde(gamma: f64) -> f64 {
    gamma / 20.0
}

/// Build the envelope for the minimum of `support` closest to `tau0`
/// (must match one within half a grid spacing of the curve).
pub fn error_envelope(
    support: &SupportStructure,
    dos: &DosCurve,
    tau0: f64,
    n_dim: usize,
    gamma: f64,
    eps_tilde: f64,
) -> Result<ErrorEnvelope> {
    if n_dim < 2 {
        return Err(Error::Invalid("dimension must be at least 2".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Invalid(format!("gamma = {gamma} outside (0, 1)")));
    }
    if !(eps_tilde > 0.0 && eps_tilde < gamma / 16.0) {
        return Err(Error::Invalid(format!(
            "eps_tilde = {eps_tilde} outside (0, gamma/16 = {})",
            gamma / 16.0
        )));
    }
    let spacing = dos.max_spacing();
    let minimum = support
        .minima
        .iter()
        .min_by(|a, b| {
            (a.tau - tau0)
                .abs()
                .partial_cmp(&(b.tau - tau0).abs())
                .unwrap()
        })
        .ok_or_else(|| Error::Invalid("support has no minima".into()))?;
    if (minimum.tau - tau0).abs() > spacing / 2.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "tau0 = {tau0} is not a support minimum (closest is {:.6})",
            minimum.tau
        )));
    }
    let theta = match minimum.kind {
        MinimumKind::InternalMinimum => 1.0,
        _ => {
            // Left endpoints get -1 so positive omega points into the gap
            // (or beyond the extreme edge); right endpoints get +1.
            if support
                .intervals
                .iter()
                .any(|iv| (iv.left - minimum.tau).abs() <= spacing / 2.0 + 1e-12)
            {
                -1.0
            } else {
                1.0
            }
        }
    };
    let delta_gap = match minimum.kind {
        MinimumKind::InternalMinimum => 0.0,
        _ => dos::local_gap_size(support, minimum.tau, 0.0)?,
    };
    let rho_at_min = if minimum.kind == MinimumKind::InternalMinimum {
        dos.value_at(minimum.tau)
    } else {
        0.0
    };
    Ok(ErrorEnvelope {
        tau0: minimum.tau,
        kind: minimum.kind,
        theta,
        delta_gap,
        rho_at_min,
        n_dim,
        gamma,
        eps_tilde,
        delta_star: support.delta_star,
        c_star: DEFAULT_C_STAR,
    })
}

impl ErrorEnvelope {
    /// Casewise size functions at offset `(omega, eta)`. Negative `omega`
    /// points into the support at an edge; for internal minima the formulas
    /// are symmetric in `omega`.
    pub fn coefficients(&self, omega: f64, eta: f64) -> Result<TildeCoefficients> {
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("eta = {eta} must be positive")));
        }
        match self.kind {
            MinimumKind::InternalMinimum => {
                if omega.abs() > self.delta_star {
                    return Err(Error::Domain(format!(
                        "omega = {omega} outside [-delta*, delta*] = [±{}]",
                        self.delta_star
                    )));
                }
                let u = omega.abs() + eta;
                let rho0 = self.rho_at_min;
                Ok(TildeCoefficients {
                    rho_tilde: rho0 + u.cbrt(),
                    pi1: rho0 * rho0 + u.powf(2.0 / 3.0),
                    pi2: rho0 + u.cbrt(),
                })
            }
            _ => {
                let delta = self.delta_gap;
                if omega < -self.delta_star || omega > delta / 2.0 {
                    return Err(Error::Domain(format!(
                        "omega = {omega} outside [-delta* = -{}, Delta/2 = {}]",
                        self.delta_star,
                        delta / 2.0
                    )));
                }
                if omega <= 0.0 {
                    // Inside the interval.
                    let u = omega.abs() + eta;
                    Ok(TildeCoefficients {
                        rho_tilde: u.sqrt() / (delta + u).powf(1.0 / 6.0),
                        pi1: u.sqrt() * (u + delta).powf(1.0 / 6.0),
                        pi2: (u + delta).cbrt(),
                    })
                } else if omega <= self.c_star * delta {
                    // Near-edge part of the gap.
                    Ok(TildeCoefficients {
                        rho_tilde: eta / ((delta + eta).powf(1.0 / 6.0) * (omega + eta).sqrt()),
                        pi1: (omega + eta).sqrt() * (delta + eta).powf(1.0 / 6.0),
                        pi2: (delta + eta).cbrt(),
                    })
                } else {
                    // Deep gap.
                    Ok(TildeCoefficients {
                        rho_tilde: eta / (delta + eta).powf(2.0 / 3.0),
                        pi1: (delta + eta).powf(2.0 / 3.0),
                        pi2: (delta + eta).cbrt(),
                    })
                }
            }
        }
    }

    /// Envelope value: the unique positive root of
    /// `E^3 + pi2 E^2 + pi1 E = N^{8 eps} E/(N eta) + rho~/(N eta) + 1/(N eta)^2`.
    pub fn evaluate(&self, omega: f64, eta: f64) -> Result<f64> {
        let c = self.coefficients(omega, eta)?;
        let n = self.n_dim as f64;
        let n_eta = n * eta;
        let a = n.powf(8.0 * self.eps_tilde) / n_eta;
        let b = c.rho_tilde / n_eta + 1.0 / (n_eta * n_eta);
        unique_positive_root(c.pi2, c.pi1 - a, b)
    }
}

/// Unique positive root of `x^3 + c2 x^2 + c1 x - b = 0` with `c2 >= 0` and
/// `b > 0`. The sign pattern `(+, +, ±, -)` has exactly one change, so
/// exactly one positive root exists; it is bracketed by doubling and then
/// bisected to full precision.
pub fn unique_positive_root(c2: f64, c1: f64, b: f64) -> Result<f64> {
    if !(c2 >= 0.0) || !(b > 0.0) || !c1.is_finite() {
        return Err(Error::Invalid(format!(
            "cubic sign pattern broken: c2 = {c2}, c1 = {c1}, b = {b}"
        )));
    }
    let p = |x: f64| ((x + c2) * x + c1) * x - b;
    let mut hi = b.cbrt().max(1e-300);
    let mut guard = 0;
    while p(hi) <= 0.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2100 {
            return Err(Error::Invalid("cubic root bracketing failed".into()));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dos::{detect_support, detect_support_with, uniform_grid};

    fn semicircle_support() -> (DosCurve, SupportStructure) {
        let grid = uniform_grid(-3.0, 3.0, 1201).unwrap();
        let rho = grid
            .iter()
            .map(|&t| {
                let disc: f64 = 4.0 - t * t;
                if disc > 0.0 {
                    disc.sqrt() / (2.0 * std::f64::consts::PI)
                } else {
                    0.0
                }
            })
            .collect();
        let curve = DosCurve::from_values(grid, rho, 1e-6).unwrap();
        let support = detect_support(&curve, 1e-3).unwrap();
        (curve, support)
    }

    /// Independent root check: slow scan + bisection written against the
    /// polynomial itself, no shared code with `unique_positive_root`.
    fn oracle_root(c2: f64, c1: f64, b: f64) -> f64 {
        let f = |x: f64| x * x * x + c2 * x * x + c1 * x - b;
        let mut x = 0.0;
        let mut step = 1e-9;
        while f(x + step) < 0.0 {
            x += step;
            step *= 1.5;
        }
        let mut lo = x;
        let mut hi = x + step;
        for _ in 0..500 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn root_matches_oracle_across_scales() {
        for &(c2, c1, b) in &[
            (1.0, 1.0, 1.0),
            (0.5, -0.3, 1e-8),
            (2.0, -5.0, 1e-3),
            (1e-3, 1e-6, 1e-12),
            (10.0, 100.0, 1e2),
            (0.0, 0.0, 8.0),
        ] {
            let mine = unique_positive_root(c2, c1, b).unwrap();
            let oracle = oracle_root(c2, c1, b);
            assert!(
                (mine / oracle - 1.0).abs() < 1e-10,
                "root mismatch at ({c2}, {c1}, {b}): {mine} vs {oracle}"
            );
        }
    }

    #[test]
    fn root_with_linear_term_disabled() {
        // The x-coefficient can turn negative when the resolution term
        // dominates; uniqueness must survive.
        let mine = unique_positive_root(0.3, -2.0, 1e-4).unwrap();
        let oracle = oracle_root(0.3, -2.0, 1e-4);
        assert!((mine / oracle - 1.0).abs() < 1e-10);
        let p = mine * mine * mine + 0.3 * mine * mine - 2.0 * mine - 1e-4;
        assert!(p.abs() < 1e-10);
    }

    #[test]
    fn root_rejects_broken_signs() {
        assert!(unique_positive_root(-1.0, 0.0, 1.0).is_err());
        assert!(unique_positive_root(1.0, 0.0, 0.0).is_err());
        assert!(unique_positive_root(1.0, 0.0, -2.0).is_err());
    }

    #[test]
    fn envelope_at_extreme_edge() {
        let (curve, support) = semicircle_support();
        let edge = support.rightmost_edge();
        let env = error_envelope(&support, &curve, edge, 4000, 0.2, 0.01).unwrap();
        assert_eq!(env.kind, MinimumKind::ExtremeEdge);
        assert_eq!(env.theta, 1.0);
        assert_eq!(env.delta_gap, 1.0);

        // Inside-edge coefficients at omega = -0.01, eta = 1e-4.
        let c = env.coefficients(-0.01, 1e-4).unwrap();
        let u: f64 = 0.01 + 1e-4;
        assert!((c.rho_tilde - u.sqrt() / (1.0 + u).powf(1.0 / 6.0)).abs() < 1e-15);
        assert!((c.pi2 - (1.0 + u).cbrt()).abs() < 1e-15);

        // Envelope value agrees with the oracle root of the same cubic.
        let value = env.evaluate(-0.01, 1e-4).unwrap();
        let n_eta = 4000.0 * 1e-4;
        let a = 4000.0f64.powf(0.08) / n_eta;
        let b = c.rho_tilde / n_eta + 1.0 / (n_eta * n_eta);
        let oracle = oracle_root(c.pi2, c.pi1 - a, b);
        assert!((value / oracle - 1.0).abs() < 1e-10);
    }

    #[test]
    fn envelope_monotone_in_eta() {
        let (curve, support) = semicircle_support();
        let edge = support.rightmost_edge();
        let env = error_envelope(&support, &curve, edge, 10_000, 0.2, 0.01).unwrap();
        for &omega in &[-0.02, 0.0, 0.1] {
            let mut last = f64::INFINITY;
            for k in 0..30 {
                let eta = 1e-6 * 1.6f64.powi(k);
                let value = env.evaluate(omega, eta).unwrap();
                assert!(
                    value <= last * (1.0 + 1e-12),
                    "envelope grew in eta at omega = {omega}, eta = {eta}"
                );
                last = value;
            }
        }
    }

    #[test]
    fn envelope_domain_checks() {
        let (curve, support) = semicircle_support();
        let edge = support.rightmost_edge();
        let env = error_envelope(&support, &curve, edge, 1000, 0.2, 0.01).unwrap();
        assert!(env.evaluate(-0.1, 1e-4).is_err()); // past -delta*
        assert!(env.evaluate(0.51, 1e-4).is_err()); // past Delta/2
        assert!(env.evaluate(0.0, -1.0).is_err());
        // tau0 away from any minimum is rejected.
        assert!(error_envelope(&support, &curve, 0.37, 1000, 0.2, 0.01).is_err());
        // eps_tilde outside (0, gamma/16).
        assert!(error_envelope(&support, &curve, edge, 1000, 0.2, 0.02).is_err());
    }

    #[test]
    fn envelope_cusp_case() {
        let grid = uniform_grid(-1.0, 1.0, 2001).unwrap();
        let rho: Vec<f64> = grid.iter().map(|&t| 0.05 + t.abs().cbrt() * 0.3).collect();
        let curve = DosCurve::from_values(grid, rho, 1e-6).unwrap();
        let support = detect_support_with(&curve, 1e-3, 0.05).unwrap();
        let cusp_tau = support
            .minima
            .iter()
            .find(|m| m.kind == MinimumKind::InternalMinimum)
            .unwrap()
            .tau;
        let env = error_envelope(&support, &curve, cusp_tau, 4000, 0.2, 0.005).unwrap();
        assert_eq!(env.theta, 1.0);
        let c = env.coefficients(0.01, 1e-5).unwrap();
        let u: f64 = 0.01 + 1e-5;
        let rho0 = env.rho_at_min;
        assert!((c.rho_tilde - (rho0 + u.cbrt())).abs() < 1e-15);
        assert!((c.pi1 - (rho0 * rho0 + u.powf(2.0 / 3.0))).abs() < 1e-15);
        // Symmetric in omega.
        let left = env.evaluate(-0.01, 1e-5).unwrap();
        let right = env.evaluate(0.01, 1e-5).unwrap();
        assert!((left - right).abs() < 1e-15);
    }
}
