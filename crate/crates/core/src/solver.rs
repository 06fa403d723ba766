//! Damped fixed-point solver for the vector self-consistent equation
//! `-1/m_i(z) = z + (S m(z))_i` on the upper half-plane, with a Newton
//! fallback for spectral parameters close to the real axis, plus the
//! stability operator `B = Id - diag(m)^2 S` attached to a solution.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Inverse, Solve, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::profile::{BoundedSolutionCheck, VarianceProfile};

/// A point `z = tau + i eta` in the open upper half-plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub tau: f64,
    pub eta: f64,
}

impl SpectralPoint {
    pub fn new(tau: f64, eta: f64) -> Result<Self> {
        if !tau.is_finite() || !eta.is_finite() {
            return Err(Error::Invalid(format!("non-finite spectral point ({tau}, {eta})")));
        }
        if eta <= 0.0 {
            return Err(Error::Invalid(format!(
                "spectral parameter needs eta > 0, got {eta}"
            )));
        }
        Ok(SpectralPoint { tau, eta })
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.tau, self.eta)
    }
}

/// Solver knobs. The damping factor is the initial step size of the damped
/// iteration; it is adapted during the run (halved when an iterate leaves the
/// upper half-plane or the residual grows, eased back up after a stretch of
/// clean descent).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Convergence threshold on `max_i |1/m_i + z + (Sm)_i|`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Initial damping in (0, 1].
    pub damping: f64,
    /// Switch to Newton steps when the fixed-point iteration stalls.
    pub newton_fallback: bool,
    /// Number of iterations per stall check.
    pub stall_window: usize,
    /// Minimum residual reduction per window counted as progress.
    pub stall_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-10,
            max_iterations: 50_000,
            damping: 0.5,
            newton_fallback: true,
            stall_window: 50,
            stall_factor: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig {
            tol,
            ..SolverConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("solver tolerance must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Invalid(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        if self.max_iterations == 0 || self.stall_window == 0 {
            return Err(Error::Invalid("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Converged (or best-effort) solution at one spectral point.
#[derive(Clone, Debug)]
pub struct QveSolution {
    pub point: SpectralPoint,
    pub m: Vec<Complex64>,
    /// `max_i |1/m_i + z + (Sm)_i|` at the returned iterate.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl QveSolution {
    /// Entrywise average `<m> = (1/n) sum_i m_i`.
    pub fn average(&self) -> Complex64 {
        linalg::mean_c(&self.m)
    }

    /// Normalized spectral density at this point, `Im <m> / pi`.
    pub fn density(&self) -> f64 {
        self.average().im / std::f64::consts::PI
    }

    pub fn max_abs(&self) -> f64 {
        linalg::max_abs_c(&self.m)
    }

    pub fn min_abs(&self) -> f64 {
        self.m.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min)
    }

    pub fn export(&self) -> SolutionRecord {
        SolutionRecord {
            tau: self.point.tau,
            eta: self.point.eta,
            re_m: self.m.iter().map(|v| v.re).collect(),
            im_m: self.m.iter().map(|v| v.im).collect(),
            residual: self.residual,
            iterations: self.iterations,
        }
    }
}

/// Flat JSON form of a solution (`re_m`/`im_m` split keeps the file greppable
/// and locale-proof).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub tau: f64,
    pub eta: f64,
    pub re_m: Vec<f64>,
    pub im_m: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Residual `max_i |1/m_i + z + (Sm)_i|` of an arbitrary vector.
pub fn residual(profile: &VarianceProfile, z: Complex64, m: &[Complex64]) -> f64 {
    let sm = linalg::real_mat_complex_vec(&profile.s_view(), m);
    m.iter()
        .zip(&sm)
        .map(|(mi, smi)| (1.0 / mi + z + smi).norm())
        .fold(0.0, f64::max)
}

/// Solve the vector equation at one spectral point. `warm_start` seeds the
/// iteration when it already lies in the upper half-plane; otherwise the
/// default initial vector `m_i = i * min(1, 1/|z|)` is used.
///
/// Returns `Ok` with `converged = false` when the iteration budget runs out;
/// `Err` is reserved for invalid inputs.
pub fn solve_point(
    profile: &VarianceProfile,
    point: SpectralPoint,
    config: &SolverConfig,
    warm_start: Option<&[Complex64]>,
) -> Result<QveSolution> {
    config.validate()?;
    let n = profile.n();
    let z = point.z();

    let mut m: Vec<Complex64> = match warm_start {
        Some(seed) if seed.len() == n && seed.iter().all(|v| v.im > 0.0 && v.is_finite()) => {
            seed.to_vec()
        }
        Some(seed) if seed.len() != n => {
            return Err(Error::Dimension(format!(
                "warm start has {} entries for an n = {} profile",
                seed.len(),
                n
            )));
        }
        _ => default_start(n, z),
    };

    // With every variance entry equal and a constant start, all components
    // stay equal through every update: iterate the single shared component.
    if let Some(s0) = profile.uniform_entry() {
        if m.windows(2).all(|w| w[0] == w[1]) {
            return Ok(solve_scalar_collapsed(point, config, n, m[0], s0 * n as f64));
        }
    }

    let theta = config.damping;
    let mut window_anchor = f64::INFINITY;
    let mut iterations = 0usize;

    loop {
        let sm = linalg::real_mat_complex_vec(&profile.s_view(), &m);
        let res = residual_from_parts(&m, &sm, z);
        if res <= config.tol {
            return Ok(QveSolution {
                point,
                m,
                residual: res,
                iterations,
                converged: true,
            });
        }
        if iterations >= config.max_iterations {
            return Ok(QveSolution {
                point,
                m,
                residual: res,
                iterations,
                converged: false,
            });
        }

        // The damped map contracts at a rate that degrades near the support
        // edges as eta shrinks. A window with less than stall_factor of
        // residual decay hands the iterate to Newton steps, kept for as long
        // as each one strictly improves the residual.
        if config.newton_fallback && iterations % config.stall_window == 0 {
            if iterations > 0 && res * config.stall_factor > window_anchor {
                let polished = newton_polish(profile, z, &mut m, res, config, &mut iterations);
                window_anchor = polished;
                if polished < res {
                    continue;
                }
            } else {
                window_anchor = res;
            }
        }

        // Damped fixed-point update; a step that leaves the upper half-plane
        // is retried at half length, for this iteration only.
        let mut step = theta;
        'retry: loop {
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let target = -(z + sm[i]).finv();
                let value = m[i] * (1.0 - step) + target * step;
                if !(value.im > 0.0) || !value.is_finite() {
                    step *= 0.5;
                    if step < 1e-9 {
                        // Wedged against the half-plane boundary.
                        return Ok(QveSolution {
                            point,
                            m,
                            residual: res,
                            iterations,
                            converged: false,
                        });
                    }
                    continue 'retry;
                }
                next.push(value);
            }
            m = next;
            break;
        }
        iterations += 1;
    }
}

/// The one-component reduction of the collapsed system
/// `-1/m = z + row_sum * m`, run with the same damping and Newton rescue as
/// the vector loop. Converges to half the configured tolerance so that the
/// residual re-derived from the broadcast vector still clears the full one.
fn solve_scalar_collapsed(
    point: SpectralPoint,
    config: &SolverConfig,
    n: usize,
    start: Complex64,
    row_sum: f64,
) -> QveSolution {
    let z = point.z();
    let tol = 0.5 * config.tol;
    let scalar_res = |m: Complex64| (m.finv() + z + row_sum * m).norm();
    let mut m = start;
    let theta = config.damping;
    let mut window_anchor = f64::INFINITY;
    let mut iterations = 0usize;
    loop {
        let res = scalar_res(m);
        if res <= tol || iterations >= config.max_iterations {
            return QveSolution {
                point,
                m: vec![m; n],
                residual: res,
                iterations,
                converged: res <= config.tol,
            };
        }
        if config.newton_fallback && iterations % config.stall_window == 0 {
            if iterations > 0 && res * config.stall_factor > window_anchor {
                let mut cur = res;
                while cur > tol && iterations < config.max_iterations {
                    let w = (z + row_sum * m).finv();
                    let fprime = Complex64::new(1.0, 0.0) - row_sum * w * w;
                    let next = m - (m + w) / fprime;
                    let next_res = scalar_res(next);
                    iterations += 1;
                    if next_res < cur && next.im > 0.0 && next.is_finite() {
                        m = next;
                        cur = next_res;
                    } else {
                        break;
                    }
                }
                window_anchor = cur;
                if cur < res {
                    continue;
                }
            } else {
                window_anchor = res;
            }
        }
        let mut step = theta;
        loop {
            let target = -(z + row_sum * m).finv();
            let value = m * (1.0 - step) + target * step;
            if value.im > 0.0 && value.is_finite() {
                m = value;
                break;
            }
            step *= 0.5;
            if step < 1e-9 {
                return QveSolution {
                    point,
                    m: vec![m; n],
                    residual: res,
                    iterations,
                    converged: false,
                };
            }
        }
        iterations += 1;
    }
}

/// Greedy Newton refinement: step while each iterate stays in the upper
/// half-plane and strictly shrinks the residual. Returns the residual of the
/// final accepted iterate.
fn newton_polish(
    profile: &VarianceProfile,
    z: Complex64,
    m: &mut Vec<Complex64>,
    mut res: f64,
    config: &SolverConfig,
    iterations: &mut usize,
) -> f64 {
    while res > config.tol && *iterations < config.max_iterations {
        let sm = linalg::real_mat_complex_vec(&profile.s_view(), m);
        let Some(next) = newton_step(profile, z, m, &sm) else {
            break;
        };
        let next_res = residual(profile, z, &next);
        *iterations += 1;
        if next_res < res && next.iter().all(|v| v.im > 0.0 && v.is_finite()) {
            *m = next;
            res = next_res;
        } else {
            break;
        }
    }
    res
}

fn default_start(n: usize, z: Complex64) -> Vec<Complex64> {
    let height = 1.0f64.min(1.0 / z.norm().max(f64::MIN_POSITIVE));
    vec![Complex64::new(0.0, height); n]
}

fn residual_from_parts(m: &[Complex64], sm: &[Complex64], z: Complex64) -> f64 {
    m.iter()
        .zip(sm)
        .map(|(mi, smi)| (mi.finv() + z + smi).norm())
        .fold(0.0, f64::max)
}

/// One Newton step on `F(m) = m + 1/(z + Sm)`, whose Jacobian is
/// `Id - diag(w^2) S` with `w = 1/(z + Sm)`; at the solution this is the
/// stability operator.
fn newton_step(
    profile: &VarianceProfile,
    z: Complex64,
    m: &[Complex64],
    sm: &[Complex64],
) -> Option<Vec<Complex64>> {
    let n = profile.n();
    let s = profile.s();
    let mut jac = Array2::<Complex64>::zeros((n, n));
    let mut f = Array1::<Complex64>::zeros(n);
    for i in 0..n {
        let w = (z + sm[i]).finv();
        let w2 = w * w;
        for j in 0..n {
            jac[[i, j]] = -w2 * s[[i, j]];
        }
        jac[[i, i]] += 1.0;
        f[i] = m[i] + w;
    }
    let delta = jac.solve(&f).ok()?;
    Some((0..n).map(|i| m[i] - delta[i]).collect())
}

/// Marker for a sweep failure: index of the first non-converged point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFailure {
    pub index: usize,
    pub eta: f64,
    pub residual: f64,
}

/// Solutions along one descending-eta line at fixed tau.
#[derive(Clone, Debug)]
pub struct EtaSweep {
    pub tau: f64,
    /// Converged prefix (and, if the sweep failed, nothing past the failure).
    pub solutions: Vec<QveSolution>,
    pub failure: Option<SweepFailure>,
}

/// Solve along a strictly descending eta ladder at fixed tau, warm-starting
/// each point from the previous one. Stops at the first failure and returns
/// the partial results.
pub fn solve_sweep(
    profile: &VarianceProfile,
    tau: f64,
    etas: &[f64],
    config: &SolverConfig,
) -> Result<EtaSweep> {
    if etas.is_empty() {
        return Err(Error::Invalid("empty eta ladder".into()));
    }
    for pair in etas.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::Invalid(format!(
                "eta ladder must be strictly descending, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    let mut solutions: Vec<QveSolution> = Vec::with_capacity(etas.len());
    for (index, &eta) in etas.iter().enumerate() {
        let point = SpectralPoint::new(tau, eta)?;
        let warm = solutions.last().map(|s: &QveSolution| s.m.as_slice());
        let solution = solve_point(profile, point, config, warm)?;
        if !solution.converged {
            let failure = SweepFailure {
                index,
                eta,
                residual: solution.residual,
            };
            return Ok(EtaSweep {
                tau,
                solutions,
                failure: Some(failure),
            });
        }
        solutions.push(solution);
    }
    Ok(EtaSweep {
        tau,
        solutions,
        failure: None,
    })
}

/// Stability operator `B = Id - diag(m)^2 S` attached to a solution:
/// its smallest singular value and the sup-norm of its inverse.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityOperator {
    pub smallest_singular_value: f64,
    pub inverse_sup_norm: f64,
}

pub fn stability_operator(
    profile: &VarianceProfile,
    solution: &QveSolution,
) -> Result<StabilityOperator> {
    let n = profile.n();
    if solution.m.len() != n {
        return Err(Error::Dimension("solution does not match profile".into()));
    }
    let s = profile.s();
    let mut b = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        let m2 = solution.m[i] * solution.m[i];
        for j in 0..n {
            b[[i, j]] = -m2 * s[[i, j]];
        }
        b[[i, i]] += 1.0;
    }
    let (_, sigma, _) = b.svd(false, false)?;
    let smallest_singular_value = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    let inverse = b.inv()?;
    let inverse_sup_norm = (0..n)
        .map(|i| (0..n).map(|j| inverse[[i, j]].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(StabilityOperator {
        smallest_singular_value,
        inverse_sup_norm,
    })
}

/// Solve on a coarse spectral grid and compare the observed `max_i |m_i|`
/// against the profile's a priori bound.
pub fn check_bounded_solution(
    profile: &VarianceProfile,
    config: &SolverConfig,
) -> Result<BoundedSolutionCheck> {
    let bound = profile.params().solution_bound;
    let mut observed: f64 = 0.0;
    let etas = [1.0, 0.1, 0.01];
    let taus: Vec<f64> = (0..=24).map(|k| -3.0 + 0.25 * k as f64).collect();
    for &tau in &taus {
        let sweep = solve_sweep(profile, tau, &etas, config)?;
        if let Some(failure) = sweep.failure {
            return Err(Error::NonConvergence {
                tau,
                eta: failure.eta,
                residual: failure.residual,
                iterations: config.max_iterations,
            });
        }
        for solution in &sweep.solutions {
            observed = observed.max(solution.max_abs());
        }
    }
    Ok(BoundedSolutionCheck {
        ok: observed <= bound,
        observed_max_abs: observed,
        bound,
    })
}

/// Closed-form solution of the scalar equation for the constant profile:
/// `m(z) = (-z + sqrt(z^2 - 4)) / 2` with the branch mapping the upper
/// half-plane to itself.
pub fn scalar_semicircle(z: Complex64) -> Complex64 {
    let root = (z * z - 4.0).sqrt();
    // Pick the branch with positive imaginary part for the sum.
    let candidate = (-z + root) / 2.0;
    if candidate.im > 0.0 {
        candidate
    } else {
        (-z - root) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{ProfileParams, VarianceProfile};

    fn constant(n: usize) -> VarianceProfile {
        VarianceProfile::stochastic_constant(n).unwrap()
    }

    #[test]
    fn constant_profile_matches_scalar_solution() {
        let profile = constant(64);
        let config = SolverConfig::with_tol(1e-12);
        for (tau, eta) in [(0.0, 1.0), (0.0, 2.0), (1.5, 0.5), (-2.7, 0.05)] {
            let point = SpectralPoint::new(tau, eta).unwrap();
            let got = solve_point(&profile, point, &config, None).unwrap();
            assert!(got.converged, "no convergence at ({tau}, {eta})");
            let want = scalar_semicircle(point.z());
            for v in &got.m {
                assert!((v - want).norm() < 1e-10, "m mismatch at ({tau}, {eta})");
            }
        }
    }

    #[test]
    fn frozen_values_at_i_and_2i() {
        // m(i) = i (sqrt(5) - 1) / 2, m(2i) = i (sqrt(2) - 1).
        let profile = constant(32);
        let config = SolverConfig::with_tol(1e-13);
        let at_i = solve_point(
            &profile,
            SpectralPoint::new(0.0, 1.0).unwrap(),
            &config,
            None,
        )
        .unwrap();
        let expected = (5.0f64.sqrt() - 1.0) / 2.0;
        assert!((at_i.average().im - expected).abs() < 1e-12);
        assert!(at_i.average().re.abs() < 1e-12);

        let at_2i = solve_point(
            &profile,
            SpectralPoint::new(0.0, 2.0).unwrap(),
            &config,
            None,
        )
        .unwrap();
        assert!((at_2i.average().im - (2.0f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn sweep_warm_start_descends_to_small_eta() {
        let profile = constant(64);
        let config = SolverConfig::default();
        let sweep = solve_sweep(&profile, 0.0, &[1.0, 0.1, 0.01], &config).unwrap();
        assert!(sweep.failure.is_none());
        let last = sweep.solutions.last().unwrap();
        let want = scalar_semicircle(Complex64::new(0.0, 0.01));
        assert!((last.average() - want).norm() < 1e-8);
        assert!((last.average().im - 1.0).abs() < 2e-2);
    }

    #[test]
    fn sweep_rejects_unsorted_ladder() {
        let profile = constant(8);
        let config = SolverConfig::default();
        assert!(solve_sweep(&profile, 0.0, &[0.1, 1.0], &config).is_err());
    }

    #[test]
    fn solution_symmetry_under_tau_reflection() {
        let values = ndarray::array![[0.2, 1.0], [1.0, 0.6]];
        let profile = VarianceProfile::block_constant(&[20, 44], &values).unwrap();
        let config = SolverConfig::default();
        for (tau, eta) in [(0.8, 0.3), (1.7, 0.05), (2.4, 1.2)] {
            let plus = solve_point(
                &profile,
                SpectralPoint::new(tau, eta).unwrap(),
                &config,
                None,
            )
            .unwrap();
            let minus = solve_point(
                &profile,
                SpectralPoint::new(-tau, eta).unwrap(),
                &config,
                None,
            )
            .unwrap();
            assert!(plus.converged && minus.converged);
            for (a, b) in plus.m.iter().zip(&minus.m) {
                assert!((b + a.conj()).norm() < 10.0 * config.tol);
            }
        }
    }

    #[test]
    fn stieltjes_decay_on_imaginary_axis() {
        let profile = constant(16);
        let config = SolverConfig::default();
        for eta in [0.5, 1.0, 3.0, 10.0] {
            let solution = solve_point(
                &profile,
                SpectralPoint::new(0.0, eta).unwrap(),
                &config,
                None,
            )
            .unwrap();
            assert!(solution.max_abs() <= 1.0 / eta + 1e-9);
        }
    }

    #[test]
    fn stability_operator_closed_form_constant_profile() {
        // For the constant profile S has eigenvalues {1, 0}, so
        // B = Id - m^2 S has singular values {|1 - m^2|, 1}.
        let profile = constant(40);
        let config = SolverConfig::with_tol(1e-12);
        let solution = solve_point(
            &profile,
            SpectralPoint::new(0.0, 1.0).unwrap(),
            &config,
            None,
        )
        .unwrap();
        let op = stability_operator(&profile, &solution).unwrap();
        let m = scalar_semicircle(Complex64::new(0.0, 1.0));
        let m2 = m * m;
        let expected_min = (Complex64::new(1.0, 0.0) - m2).norm().min(1.0);
        assert!((op.smallest_singular_value - expected_min).abs() < 1e-8);

        // Rank-one structure gives B^{-1} = Id + m^2 S / (1 - m^2).
        let n = 40.0;
        let c = m2 / (Complex64::new(1.0, 0.0) - m2);
        let expected_norm = (1.0 + c / n).norm() + (n - 1.0) * c.norm() / n;
        assert!((op.inverse_sup_norm - expected_norm).abs() < 1e-8);
        assert!(op.inverse_sup_norm <= 2.0);
    }

    #[test]
    fn bounded_solution_check_on_constant_profile() {
        // |m| = 1 on the support for the constant profile, well under the
        // default bound 10, and <= 1/eta far away.
        let profile = constant(24);
        let check = check_bounded_solution(&profile, &SolverConfig::default()).unwrap();
        assert!(check.ok);
        assert!(check.observed_max_abs < 1.1);
        assert!(check.bound == 10.0);
    }

    #[test]
    fn far_point_bound_via_distance() {
        let values = ndarray::array![[0.05, 1.0], [1.0, 0.05]];
        let profile = VarianceProfile::block_constant_with(
            &[16, 48],
            &values,
            ProfileParams::default(),
        )
        .unwrap();
        let solution = solve_point(
            &profile,
            SpectralPoint::new(0.0, 10.0).unwrap(),
            &SolverConfig::default(),
            None,
        )
        .unwrap();
        assert!(solution.max_abs() <= 0.2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SpectralPoint::new(0.0, 0.0).is_err());
        assert!(SpectralPoint::new(0.0, -1.0).is_err());
        assert!(SpectralPoint::new(f64::NAN, 1.0).is_err());
        let profile = constant(8);
        let mut config = SolverConfig::default();
        config.damping = 1.5;
        assert!(solve_point(
            &profile,
            SpectralPoint::new(0.0, 1.0).unwrap(),
            &config,
            None
        )
        .is_err());
    }
}
