//! Density of states and support geometry: evaluation of the normalized
//! spectral density on a grid, Poisson (harmonic) extension to the upper
//! half-plane, support/gap detection with edge refinement, the local gap
//! function, the local-law weight kappa, and edge shape-exponent fits.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::profile::VarianceProfile;
use crate::solver::{self, SolverConfig, SpectralPoint};

/// Default margin constant delta*: support intervals are expected to be at
/// least twice this long, and shape windows extend this far from a minimum.
pub const DEFAULT_DELTA_STAR: f64 = 0.05;

/// Default crossover constant c* between the near-edge and deep-gap regimes.
pub const DEFAULT_C_STAR: f64 = 0.25;

/// Density of states sampled on a tau grid at fixed (small) eta.
/// `eta_used = 0` marks a Richardson-extrapolated curve. Grid points where
/// the solver failed carry NaN and are listed in `holes`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DosCurve {
    pub tau_grid: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta_used: f64,
    pub holes: Vec<usize>,
}

impl DosCurve {
    /// Wrap precomputed values (used by tests and file loading).
    pub fn from_values(tau_grid: Vec<f64>, rho: Vec<f64>, eta_used: f64) -> Result<Self> {
        if tau_grid.len() != rho.len() || tau_grid.len() < 2 {
            return Err(Error::Dimension(format!(
                "{} grid points vs {} density values",
                tau_grid.len(),
                rho.len()
            )));
        }
        if tau_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("tau grid must be strictly increasing".into()));
        }
        let holes = rho
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(k, _)| k)
            .collect();
        Ok(DosCurve {
            tau_grid,
            rho,
            eta_used,
            holes,
        })
    }

    pub fn len(&self) -> usize {
        self.tau_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_grid.is_empty()
    }

    pub fn max_spacing(&self) -> f64 {
        self.tau_grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Linear interpolation of the density; zero outside the grid.
    pub fn value_at(&self, tau: f64) -> f64 {
        let grid = &self.tau_grid;
        if tau <= grid[0] || tau >= grid[grid.len() - 1] {
            return 0.0;
        }
        let k = match grid.binary_search_by(|g| g.partial_cmp(&tau).unwrap()) {
            Ok(k) => return self.rho[k],
            Err(k) => k,
        };
        let (a, b) = (grid[k - 1], grid[k]);
        let t = (tau - a) / (b - a);
        self.rho[k - 1] * (1.0 - t) + self.rho[k] * t
    }

    /// Trapezoid integral over the whole grid.
    pub fn integral(&self) -> Result<f64> {
        self.ensure_no_holes()?;
        let mut sum = 0.0;
        for k in 1..self.len() {
            sum += 0.5 * (self.rho[k] + self.rho[k - 1]) * (self.tau_grid[k] - self.tau_grid[k - 1]);
        }
        Ok(sum)
    }

    /// Exact integral of the piecewise-linear density over `[a, b]`.
    pub fn integral_between(&self, a: f64, b: f64) -> Result<f64> {
        self.ensure_no_holes()?;
        if a >= b {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for k in 1..self.len() {
            let (lo, hi) = (self.tau_grid[k - 1], self.tau_grid[k]);
            let (l, r) = (lo.max(a), hi.min(b));
            if l >= r {
                continue;
            }
            sum += 0.5 * (self.value_at_segment(k, l) + self.value_at_segment(k, r)) * (r - l);
        }
        Ok(sum)
    }

    fn value_at_segment(&self, k: usize, tau: f64) -> f64 {
        let (a, b) = (self.tau_grid[k - 1], self.tau_grid[k]);
        let t = (tau - a) / (b - a);
        self.rho[k - 1] * (1.0 - t) + self.rho[k] * t
    }

    /// Cumulative distribution normalized so the full grid carries mass 1.
    pub fn normalized_cdf(&self, tau: f64) -> Result<f64> {
        let total = self.integral()?;
        if total <= 0.0 {
            return Err(Error::Invalid("density integrates to zero".into()));
        }
        if tau <= self.tau_grid[0] {
            return Ok(0.0);
        }
        let capped = tau.min(self.tau_grid[self.len() - 1]);
        Ok(self.integral_between(self.tau_grid[0], capped)? / total)
    }

    /// Stieltjes transform of the piecewise-linear density,
    /// `m(z) = ∫ rho(s)/(s − z) ds`, integrated in closed form per segment.
    pub fn stieltjes(&self, z: Complex64) -> Result<Complex64> {
        self.ensure_no_holes()?;
        if z.im <= 0.0 {
            return Err(Error::Domain("Stieltjes transform needs Im z > 0".into()));
        }
        let mut total = Complex64::new(0.0, 0.0);
        for k in 1..self.len() {
            let (a, b) = (self.tau_grid[k - 1], self.tau_grid[k]);
            let (ra, rb) = (self.rho[k - 1], self.rho[k]);
            let slope = (rb - ra) / (b - a);
            // rho(s) = ra + slope (s - a);
            // ∫ rho/(s-z) ds = slope (b-a) + (ra + slope (z - a)) [ln(b-z) - ln(a-z)]
            let log_term = ((b - z) / (a - z)).ln();
            total += slope * (b - a) + (ra + slope * (z - a)) * log_term;
        }
        Ok(total)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("tau,rho\n");
        for (t, r) in self.tau_grid.iter().zip(&self.rho) {
            out.push_str(&format!("{t},{r}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    fn ensure_no_holes(&self) -> Result<()> {
        if self.holes.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "density curve has {} unresolved grid points",
                self.holes.len()
            )))
        }
    }
}

/// Evaluate the density of states on a grid by solving the vector equation
/// at `tau + i eta` (warm-starting along the grid). With `extrapolate`, a
/// second pass at `eta/2` drives a two-point Richardson step toward the real
/// axis and `eta_used` is reported as 0.
pub fn density_of_states(
    profile: &VarianceProfile,
    tau_grid: &[f64],
    eta: f64,
    extrapolate: bool,
    config: &SolverConfig,
) -> Result<DosCurve> {
    if tau_grid.len() < 2 {
        return Err(Error::Invalid("tau grid needs at least two points".into()));
    }
    if tau_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Invalid("tau grid must be strictly increasing".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::Invalid(format!("eta must be positive, got {eta}")));
    }
    let mut rho = Vec::with_capacity(tau_grid.len());
    let mut holes = Vec::new();
    let mut warm: Option<Vec<Complex64>> = None;
    for (k, &tau) in tau_grid.iter().enumerate() {
        let point = SpectralPoint::new(tau, eta)?;
        let full = solver::solve_point(profile, point, config, warm.as_deref())?;
        if !full.converged {
            rho.push(f64::NAN);
            holes.push(k);
            warm = None;
            continue;
        }
        let mut value = full.density();
        if extrapolate {
            let half_point = SpectralPoint::new(tau, eta / 2.0)?;
            let half = solver::solve_point(profile, half_point, config, Some(&full.m))?;
            if half.converged {
                // First-order Poisson smoothing error cancels in 2 rho(eta/2) - rho(eta).
                value = (2.0 * half.density() - value).max(0.0);
            } else {
                rho.push(f64::NAN);
                holes.push(k);
                warm = Some(full.m);
                continue;
            }
        }
        rho.push(value);
        warm = Some(full.m);
    }
    Ok(DosCurve {
        tau_grid: tau_grid.to_vec(),
        rho,
        eta_used: if extrapolate { 0.0 } else { eta },
        holes,
    })
}

/// Uniform grid helper.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(lo < hi) {
        return Err(Error::Invalid(format!(
            "bad grid request [{lo}, {hi}] with {points} points"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points).map(|k| lo + step * k as f64).collect())
}

/// Poisson (harmonic) extension of the stored density to `z`:
/// `(1/pi) ∫ rho(s) eta / ((s-tau)^2 + eta^2) ds`, exact per linear segment.
///
/// Refuses when the grid spacing is coarser than `eta` (the stored curve
/// cannot resolve the kernel).
pub fn harmonic_extension(dos: &DosCurve, z: SpectralPoint) -> Result<f64> {
    let spacing = dos.max_spacing();
    if spacing > z.eta {
        return Err(Error::Resolution(format!(
            "grid spacing {spacing:.3e} exceeds eta {:.3e}; refine the grid or raise eta",
            z.eta
        )));
    }
    harmonic_extension_unchecked(dos, z)
}

/// Same Poisson integral without the resolution guard; exact for the stored
/// piecewise-linear curve at any eta > 0. Used internally where the curve is
/// itself the object of interest (kappa, envelope anchors).
pub fn harmonic_extension_unchecked(dos: &DosCurve, z: SpectralPoint) -> Result<f64> {
    dos.ensure_no_holes()?;
    let (tau, eta) = (z.tau, z.eta);
    let mut total = 0.0;
    for k in 1..dos.len() {
        let (a, b) = (dos.tau_grid[k - 1], dos.tau_grid[k]);
        let (ra, rb) = (dos.rho[k - 1], dos.rho[k]);
        let slope = (rb - ra) / (b - a);
        let c0 = ra - slope * a; // rho(s) = c0 + slope * s
        let (ta, tb) = (a - tau, b - tau);
        let atan_term = (tb / eta).atan() - (ta / eta).atan();
        let log_term = ((tb * tb + eta * eta) / (ta * ta + eta * eta)).ln();
        total += (c0 + slope * tau) * atan_term + slope * eta * 0.5 * log_term;
    }
    Ok(total / std::f64::consts::PI)
}

/// One support interval `[left, right]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub left: f64,
    pub right: f64,
}

impl SupportInterval {
    pub fn length(&self) -> f64 {
        self.right - self.left
    }
}

/// Classification of a point where the density has a local minimum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimumKind {
    /// Leftmost or rightmost support edge.
    ExtremeEdge,
    /// Edge adjacent to an internal gap.
    InternalEdge,
    /// Local minimum of the density inside an interval.
    InternalMinimum,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SupportMinimum {
    pub tau: f64,
    pub kind: MinimumKind,
    pub rho: f64,
}

/// Support intervals, gap list, classified minima, and the margin constant
/// used when the structure was derived.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupportStructure {
    pub intervals: Vec<SupportInterval>,
    pub minima: Vec<SupportMinimum>,
    pub delta_star: f64,
    pub threshold: f64,
    pub warnings: Vec<String>,
}

impl SupportStructure {
    pub fn gaps(&self) -> Vec<(f64, f64)> {
        self.intervals
            .windows(2)
            .map(|w| (w[0].right, w[1].left))
            .collect()
    }

    pub fn leftmost_edge(&self) -> f64 {
        self.intervals[0].left
    }

    pub fn rightmost_edge(&self) -> f64 {
        self.intervals[self.intervals.len() - 1].right
    }

    pub fn contains(&self, tau: f64) -> bool {
        self.intervals
            .iter()
            .any(|iv| iv.left <= tau && tau <= iv.right)
    }

    /// Euclidean distance from `z` to the support (a union of real segments).
    pub fn distance(&self, z: Complex64) -> f64 {
        let mut best = f64::INFINITY;
        for iv in &self.intervals {
            let horizontal = if z.re < iv.left {
                iv.left - z.re
            } else if z.re > iv.right {
                z.re - iv.right
            } else {
                0.0
            };
            best = best.min((horizontal * horizontal + z.im * z.im).sqrt());
        }
        best
    }
}

/// Default support-detection threshold for a curve evaluated at `eta_used`
/// (in-gap density values scale like eta).
pub fn default_gap_threshold(eta_used: f64) -> f64 {
    (10.0 * eta_used).max(1e-4)
}

pub fn detect_support(dos: &DosCurve, threshold: f64) -> Result<SupportStructure> {
    detect_support_with(dos, threshold, DEFAULT_DELTA_STAR)
}

/// Threshold the density into maximal runs, interpolate the crossings for
/// sub-grid edge estimates, merge runs separated by less than two grid
/// points (reported), and collect the classified minima set.
pub fn detect_support_with(
    dos: &DosCurve,
    threshold: f64,
    delta_star: f64,
) -> Result<SupportStructure> {
    if !(threshold > 0.0) {
        return Err(Error::Invalid("support threshold must be positive".into()));
    }
    if !(delta_star > 0.0) {
        return Err(Error::Invalid("delta_star must be positive".into()));
    }
    let n = dos.len();
    let mut warnings = Vec::new();
    if !dos.holes.is_empty() {
        warnings.push(format!(
            "{} unresolved grid points treated as below threshold",
            dos.holes.len()
        ));
    }
    let above: Vec<bool> = dos
        .rho
        .iter()
        .map(|r| r.is_finite() && *r >= threshold)
        .collect();

    // Maximal index runs with rho >= threshold.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = None;
    for k in 0..n {
        match (above[k], start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                runs.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, n - 1));
    }
    if runs.is_empty() {
        return Err(Error::Invalid(format!(
            "no density above threshold {threshold:.3e}; support empty at this resolution"
        )));
    }

    // Merge runs separated by fewer than two grid points.
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for run in runs {
        match merged.last_mut() {
            Some(last) if run.0 - last.1 <= 2 => {
                warnings.push(format!(
                    "intervals touching near tau = {:.4}; merged (unresolved gap?)",
                    dos.tau_grid[run.0]
                ));
                last.1 = run.1;
            }
            _ => merged.push(run),
        }
    }

    // Interval endpoints by linear interpolation of the threshold crossing.
    let crossing = |inside: usize, outside: usize| -> f64 {
        let (ti, to) = (dos.tau_grid[inside], dos.tau_grid[outside]);
        let (ri, ro) = (dos.rho[inside], dos.rho[outside]);
        if !ro.is_finite() || (ri - ro).abs() < f64::MIN_POSITIVE {
            return to;
        }
        let t = (ri - threshold) / (ri - ro);
        ti + t.clamp(0.0, 1.0) * (to - ti)
    };
    let mut intervals = Vec::with_capacity(merged.len());
    for &(s, e) in &merged {
        let left = if s == 0 {
            dos.tau_grid[0]
        } else {
            crossing(s, s - 1)
        };
        let right = if e == n - 1 {
            dos.tau_grid[n - 1]
        } else {
            crossing(e, e + 1)
        };
        intervals.push(SupportInterval { left, right });
        if right - left < 2.0 * delta_star {
            warnings.push(format!(
                "interval [{left:.4}, {right:.4}] is shorter than 2 delta* = {:.4}",
                2.0 * delta_star
            ));
        }
    }

    // Minima: all edges, plus interior local minima of the density found by
    // comparison over a small smoothing window.
    let mut minima = Vec::new();
    let last = intervals.len() - 1;
    for (idx, iv) in intervals.iter().enumerate() {
        minima.push(SupportMinimum {
            tau: iv.left,
            kind: if idx == 0 {
                MinimumKind::ExtremeEdge
            } else {
                MinimumKind::InternalEdge
            },
            rho: 0.0,
        });
        minima.push(SupportMinimum {
            tau: iv.right,
            kind: if idx == last {
                MinimumKind::ExtremeEdge
            } else {
                MinimumKind::InternalEdge
            },
            rho: 0.0,
        });
    }
    let window = 3usize;
    for &(s, e) in &merged {
        let lo = s + window;
        if e < window || e - s < 2 * window + 1 {
            continue;
        }
        let hi = e - window;
        for k in lo..=hi {
            let v = dos.rho[k];
            let neighborhood = &dos.rho[k - window..=k + window];
            let is_min = neighborhood.iter().all(|&u| v <= u)
                && (v < dos.rho[k - window] || v < dos.rho[k + window]);
            // Skip plateau repeats: only take the first index of a flat run.
            if is_min && (k == lo || dos.rho[k - 1] > v) {
                minima.push(SupportMinimum {
                    tau: dos.tau_grid[k],
                    kind: MinimumKind::InternalMinimum,
                    rho: v,
                });
            }
        }
    }
    minima.sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());

    Ok(SupportStructure {
        intervals,
        minima,
        delta_star,
        threshold,
        warnings,
    })
}

/// Configuration for solver-backed edge refinement.
#[derive(Clone, Debug)]
pub struct EdgeRefineConfig {
    /// Probe height for in/out decisions.
    pub eta_probe: f64,
    /// Density above this at the probe height counts as inside the support.
    pub density_floor: f64,
    /// Bisection stops when the bracket is narrower than this.
    pub target_width: f64,
    pub solver: SolverConfig,
}

impl Default for EdgeRefineConfig {
    fn default() -> Self {
        // The floor must sit well above the in-gap background density,
        // which decays like eta_probe / sqrt(distance); at 1e-9 / 1e-4 the
        // misclassification band around an edge is O(1e-9) wide.
        EdgeRefineConfig {
            eta_probe: 1e-9,
            density_floor: 1e-4,
            target_width: 1e-4,
            solver: SolverConfig::default(),
        }
    }
}

/// Refine every interval endpoint by bisecting the "inside the support"
/// predicate (density at a tiny probe height above the floor) with fresh
/// solves, giving grid-free edge positions.
pub fn refine_support(
    profile: &VarianceProfile,
    dos: &DosCurve,
    support: &SupportStructure,
    config: &EdgeRefineConfig,
) -> Result<SupportStructure> {
    let spacing = dos.max_spacing();
    let mut refined = support.clone();
    let lo_grid = dos.tau_grid[0];
    let hi_grid = dos.tau_grid[dos.len() - 1];
    for idx in 0..refined.intervals.len() {
        let left = refined.intervals[idx].left;
        if left > lo_grid + spacing / 2.0 {
            refined.intervals[idx].left =
                bisect_edge(profile, left, spacing, true, config)?;
        }
        let right = refined.intervals[idx].right;
        if right < hi_grid - spacing / 2.0 {
            refined.intervals[idx].right =
                bisect_edge(profile, right, spacing, false, config)?;
        }
    }
    // Re-align the edge entries of the minima list.
    let last = refined.intervals.len() - 1;
    let mut edge_minima: Vec<SupportMinimum> = Vec::new();
    for (idx, iv) in refined.intervals.iter().enumerate() {
        edge_minima.push(SupportMinimum {
            tau: iv.left,
            kind: if idx == 0 {
                MinimumKind::ExtremeEdge
            } else {
                MinimumKind::InternalEdge
            },
            rho: 0.0,
        });
        edge_minima.push(SupportMinimum {
            tau: iv.right,
            kind: if idx == last {
                MinimumKind::ExtremeEdge
            } else {
                MinimumKind::InternalEdge
            },
            rho: 0.0,
        });
    }
    refined
        .minima
        .retain(|m| m.kind == MinimumKind::InternalMinimum);
    refined.minima.extend(edge_minima);
    refined
        .minima
        .sort_by(|a, b| a.tau.partial_cmp(&b.tau).unwrap());
    Ok(refined)
}

fn probe_inside(
    profile: &VarianceProfile,
    tau: f64,
    config: &EdgeRefineConfig,
) -> Result<bool> {
    // Descend to the probe height with warm starts; a cold solve at
    // eta = 1e-7 would crawl.
    let mut etas = Vec::new();
    let mut eta = 1e-2;
    while eta > config.eta_probe * 1.5 {
        etas.push(eta);
        eta /= 10.0;
    }
    etas.push(config.eta_probe);
    let sweep = solver::solve_sweep(profile, tau, &etas, &config.solver)?;
    match sweep.failure {
        None => {
            let last = sweep.solutions.last().expect("non-empty sweep");
            Ok(last.density() > config.density_floor)
        }
        Some(f) => Err(Error::NonConvergence {
            tau,
            eta: f.eta,
            residual: f.residual,
            iterations: config.solver.max_iterations,
        }),
    }
}

fn bisect_edge(
    profile: &VarianceProfile,
    edge: f64,
    spacing: f64,
    is_left_edge: bool,
    config: &EdgeRefineConfig,
) -> Result<f64> {
    // Establish a bracket around the grid-level edge estimate.
    let mut width = spacing.max(config.target_width);
    let (mut inside, mut outside);
    if is_left_edge {
        inside = edge + width;
        outside = edge - width;
    } else {
        inside = edge - width;
        outside = edge + width;
    }
    for _ in 0..6 {
        let inside_ok = probe_inside(profile, inside, config)?;
        let outside_ok = probe_inside(profile, outside, config)?;
        if inside_ok && !outside_ok {
            break;
        }
        width *= 2.0;
        if is_left_edge {
            if !inside_ok {
                inside += width;
            }
            if outside_ok {
                outside -= width;
            }
        } else {
            if !inside_ok {
                inside -= width;
            }
            if outside_ok {
                outside += width;
            }
        }
    }
    let mut lo = outside;
    let mut hi = inside;
    while (hi - lo).abs() > config.target_width {
        let mid = 0.5 * (lo + hi);
        if probe_inside(profile, mid, config)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Local gap function: the adjacent gap length when `tau` sits within
/// `delta` of an internal gap, 1 beyond the extreme edges, 0 in the bulk.
pub fn local_gap_size(support: &SupportStructure, tau: f64, delta: f64) -> Result<f64> {
    if !(0.0..support.delta_star).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta = {delta} outside [0, delta* = {})",
            support.delta_star
        )));
    }
    for pair in support.intervals.windows(2) {
        let (beta, alpha_next) = (pair[0].right, pair[1].left);
        if beta - delta <= tau && tau <= alpha_next + delta {
            return Ok(alpha_next - beta);
        }
    }
    if tau <= support.leftmost_edge() + delta || tau >= support.rightmost_edge() - delta {
        return Ok(1.0);
    }
    Ok(0.0)
}

/// Which branch produced a kappa value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaBranch {
    Default,
    Improved,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KappaEvaluation {
    pub value: f64,
    pub branch: KappaBranch,
    /// Set when the improved branch exceeded the default value and was
    /// replaced by it.
    pub clipped: bool,
}

/// The local-law weight kappa at `z`: by default `1/(Delta^{1/3} + rho(z))`;
/// when `(Delta^{1/3} + rho(z)) * dist(z, support)` is at least
/// `N^gamma/(N eta)^2`, half of the improved bound
/// `eta/(dist (Delta^{1/3}+rho)) + 1/(N eta dist^{1/2} (Delta^{1/3}+rho)^{1/2})`.
/// The improved value is never allowed to exceed the default one.
pub fn kappa(
    support: &SupportStructure,
    dos: &DosCurve,
    z: SpectralPoint,
    n_dim: usize,
    gamma: f64,
) -> Result<KappaEvaluation> {
    let delta = local_gap_size(support, z.tau, support.delta_star / 2.0)?;
    let rho_z = harmonic_extension_unchecked(dos, z)?;
    let weight = delta.cbrt() + rho_z;
    let default_value = 1.0 / weight;
    let dist = support.distance(z.z());
    let n_eta = n_dim as f64 * z.eta;
    let condition = weight * dist >= (n_dim as f64).powf(gamma) / (n_eta * n_eta);
    if !condition {
        return Ok(KappaEvaluation {
            value: default_value,
            branch: KappaBranch::Default,
            clipped: false,
        });
    }
    let improved = 0.5 * (z.eta / (dist * weight) + 1.0 / (n_eta * dist.sqrt() * weight.sqrt()));
    if improved > default_value {
        Ok(KappaEvaluation {
            value: default_value,
            branch: KappaBranch::Improved,
            clipped: true,
        })
    } else {
        Ok(KappaEvaluation {
            value: improved,
            branch: KappaBranch::Improved,
            clipped: false,
        })
    }
}

/// Result of a log-log power-law fit of the density near a minimum.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ShapeFit {
    pub tau0: f64,
    pub kind: MinimumKind,
    pub exponent: f64,
    pub prefactor: f64,
    /// RMS residual of the fit in log space.
    pub residual: f64,
    pub points: usize,
    pub reliable: bool,
}

/// Fit `rho(tau0 ± omega) ≈ C omega^p` over `omega` in
/// `[10 * spacing, delta*]` for every minimum. Expected exponents: 1/2 at
/// extreme edges, 1/3 at cusp-like internal minima, and the internal-edge
/// interpolation in between; the caller compares. For internal minima the
/// density value at the minimum is subtracted before fitting.
pub fn fit_edge_shapes(dos: &DosCurve, support: &SupportStructure) -> Result<Vec<ShapeFit>> {
    dos.ensure_no_holes()?;
    let spacing = dos.max_spacing();
    let omega_min = 10.0 * spacing;
    let omega_max = support.delta_star;
    let eta_fine = dos.eta_used == 0.0 || dos.eta_used <= 1e-5;
    let mut fits = Vec::new();
    for minimum in &support.minima {
        let mut samples: Vec<(f64, f64)> = Vec::new();
        let baseline = if minimum.kind == MinimumKind::InternalMinimum {
            dos.value_at(minimum.tau)
        } else {
            0.0
        };
        let directions: &[f64] = match minimum.kind {
            MinimumKind::InternalMinimum => &[-1.0, 1.0],
            _ => {
                // Into the support: right of a left edge, left of a right edge.
                if support
                    .intervals
                    .iter()
                    .any(|iv| (iv.left - minimum.tau).abs() < spacing)
                {
                    &[1.0]
                } else {
                    &[-1.0]
                }
            }
        };
        for &dir in directions {
            for (k, &tau) in dos.tau_grid.iter().enumerate() {
                let omega = (tau - minimum.tau) * dir;
                if omega < omega_min || omega > omega_max {
                    continue;
                }
                let value = dos.rho[k] - baseline;
                if value > 0.0 {
                    samples.push((omega.ln(), value.ln()));
                }
            }
        }
        let points = samples.len();
        if points < 2 {
            fits.push(ShapeFit {
                tau0: minimum.tau,
                kind: minimum.kind,
                exponent: f64::NAN,
                prefactor: f64::NAN,
                residual: f64::NAN,
                points,
                reliable: false,
            });
            continue;
        }
        let (slope, intercept, rms) = least_squares_line(&samples);
        fits.push(ShapeFit {
            tau0: minimum.tau,
            kind: minimum.kind,
            exponent: slope,
            prefactor: intercept.exp(),
            residual: rms,
            points,
            reliable: points >= 6 && eta_fine,
        });
    }
    Ok(fits)
}

fn least_squares_line(samples: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in samples {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rms = (samples
        .iter()
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}
