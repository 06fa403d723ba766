//! Eigenvalue counting against the integrated density, location rigidity
//! inside the support, and emptiness of shrunken spectral gaps.

use serde::{Deserialize, Serialize};

use crate::dos::{self, DosCurve, SupportStructure};
use crate::error::{Error, Result};
use crate::linalg;
use crate::sampler::MatrixSample;

/// Index of the quantile position for `tau`: the smallest integer at least
/// `N * F(tau)` where `F` is the normalized integrated density. A guard of
/// `1e-9` absorbs floating-point noise in the integral so that symmetric
/// profiles give `i(0) = N/2` exactly. Clamped to `[1, N]`.
pub fn i_tau(dos: &DosCurve, n_dim: usize, tau: f64) -> Result<usize> {
    let mass = dos.normalized_cdf(tau)? * n_dim as f64;
    let raw = (mass - 1e-9).ceil() as i64;
    Ok(raw.clamp(1, n_dim as i64) as usize)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountingRow {
    pub tau: f64,
    pub expected: f64,
    pub bound: f64,
    pub mean_discrepancy: f64,
    pub max_discrepancy: f64,
    pub pass_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CountingReport {
    pub rows: Vec<CountingRow>,
    pub n_dim: usize,
    pub c: f64,
    pub samples: usize,
}

/// Compare `#{lambda_i <= tau}` with `N * F(tau)` per sample and grid
/// point; the tolerance curve is `c * min(1/(Delta^{1/3} + rho), N^{1/5})`.
pub fn counting_discrepancy(
    spectra: &[Vec<f64>],
    dos: &DosCurve,
    support: &SupportStructure,
    tau_grid: &[f64],
    c: f64,
) -> Result<CountingReport> {
    if spectra.is_empty() {
        return Err(Error::Invalid("no spectra supplied".into()));
    }
    let n_dim = spectra[0].len();
    if spectra.iter().any(|s| s.len() != n_dim) {
        return Err(Error::Dimension("spectra of unequal size".into()));
    }
    let delta = support.delta_star / 2.0;
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let expected = dos.normalized_cdf(tau)? * n_dim as f64;
        let gap = dos::local_gap_size(support, tau, delta)?;
        let rho = dos.value_at(tau);
        let bound = c * (1.0 / (gap.cbrt() + rho)).min((n_dim as f64).powf(0.2));
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        let mut pass = 0usize;
        for spectrum in spectra {
            let count = spectrum.partition_point(|l| *l <= tau) as f64;
            let disc = (count - expected).abs();
            sum += disc;
            max = max.max(disc);
            if disc <= bound {
                pass += 1;
            }
        }
        rows.push(CountingRow {
            tau,
            expected,
            bound,
            mean_discrepancy: sum / spectra.len() as f64,
            max_discrepancy: max,
            pass_fraction: pass as f64 / spectra.len() as f64,
        });
    }
    Ok(CountingReport {
        rows,
        n_dim,
        c,
        samples: spectra.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidityRow {
    pub tau: f64,
    pub sample_index: usize,
    pub i_tau: usize,
    pub lambda_observed: f64,
    pub deviation: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapCount {
    /// 0 is the region left of the support, `k` the k-th internal gap,
    /// `K` the region right of the support.
    pub gap_index: usize,
    pub left: f64,
    pub right: f64,
    pub sample_index: usize,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRow {
    /// `false` for the leftmost edge, `true` for the rightmost.
    pub upper: bool,
    pub sample_index: usize,
    pub deviation: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidityReport {
    pub rows: Vec<RigidityRow>,
    pub gap_rows: Vec<GapCount>,
    pub edge_rows: Vec<EdgeRow>,
    pub skipped: Vec<(f64, String)>,
    pub n_dim: usize,
    pub gamma: f64,
    pub c: f64,
}

/// Admissible margins per support interval: how far inside each interval a
/// location check is meaningful. The outer margins scale like
/// `N^{gamma - 2/3}`; margins next to an internal gap of length `L` scale
/// like `N^gamma * min(N^{-3/5}, 1/(L^{1/9} N^{2/3}))`.
pub fn admissible_margins(
    support: &SupportStructure,
    n_dim: usize,
    gamma: f64,
) -> Vec<(f64, f64)> {
    let nf = n_dim as f64;
    let outer = nf.powf(gamma - 2.0 / 3.0);
    let gap_margin = |len: f64| -> f64 {
        nf.powf(gamma) * (nf.powf(-0.6)).min(1.0 / (len.powf(1.0 / 9.0) * nf.powf(2.0 / 3.0)))
    };
    let gaps = support.gaps();
    (0..support.intervals.len())
        .map(|k| {
            let left = if k == 0 {
                outer
            } else {
                gap_margin(gaps[k - 1].1 - gaps[k - 1].0)
            };
            let right = if k == support.intervals.len() - 1 {
                outer
            } else {
                gap_margin(gaps[k].1 - gaps[k].0)
            };
            (left, right)
        })
        .collect()
}

/// Check `|lambda_{i(tau)} - tau|` against
/// `c * min(1/((Delta^{1/3} + rho) rho N), N^{-3/5})` for every admissible
/// `tau`, count eigenvalues inside shrunken gaps, and measure the extreme
/// edge fluctuations on the `N^{-2/3}` scale.
pub fn rigidity_check(
    spectra: &[Vec<f64>],
    dos: &DosCurve,
    support: &SupportStructure,
    tau_set: &[f64],
    gamma: f64,
    c: f64,
) -> Result<RigidityReport> {
    if spectra.is_empty() {
        return Err(Error::Invalid("no spectra supplied".into()));
    }
    let n_dim = spectra[0].len();
    if spectra.iter().any(|s| s.len() != n_dim) {
        return Err(Error::Dimension("spectra of unequal size".into()));
    }
    let nf = n_dim as f64;
    let margins = admissible_margins(support, n_dim, gamma);
    let delta = support.delta_star / 2.0;

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &tau in tau_set {
        let interval = support
            .intervals
            .iter()
            .position(|iv| iv.left <= tau && tau <= iv.right);
        let Some(k) = interval else {
            skipped.push((tau, "outside the support".into()));
            continue;
        };
        let (ml, mr) = margins[k];
        let iv = support.intervals[k];
        if tau < iv.left + ml || tau > iv.right - mr {
            skipped.push((tau, format!("inside the edge margin of interval {k}")));
            continue;
        }
        let index = i_tau(dos, n_dim, tau)?;
        let gap = dos::local_gap_size(support, tau, delta)?;
        let rho = dos.value_at(tau);
        let bound = (1.0 / ((gap.cbrt() + rho) * rho * nf)).min(nf.powf(-0.6));
        for (s, spectrum) in spectra.iter().enumerate() {
            let lambda = spectrum[index - 1];
            let deviation = (lambda - tau).abs();
            rows.push(RigidityRow {
                tau,
                sample_index: s,
                i_tau: index,
                lambda_observed: lambda,
                deviation,
                bound,
                pass: deviation <= c * bound,
            });
        }
    }

    let mut gap_rows = Vec::new();
    for (s, spectrum) in spectra.iter().enumerate() {
        for region in shrunken_gap_regions(support, n_dim, gamma) {
            let below_right = spectrum.partition_point(|l| *l < region.1);
            let below_left = spectrum.partition_point(|l| *l <= region.0);
            gap_rows.push(GapCount {
                gap_index: region.2,
                left: region.0,
                right: region.1,
                sample_index: s,
                count: below_right.saturating_sub(below_left),
            });
        }
    }

    let edge_bound = nf.powf(-2.0 / 3.0);
    let mut edge_rows = Vec::new();
    for (s, spectrum) in spectra.iter().enumerate() {
        let left_dev = (spectrum[0] - support.leftmost_edge()).abs();
        let right_dev = (spectrum[n_dim - 1] - support.rightmost_edge()).abs();
        edge_rows.push(EdgeRow {
            upper: false,
            sample_index: s,
            deviation: left_dev,
            bound: edge_bound,
            pass: left_dev <= c * edge_bound,
        });
        edge_rows.push(EdgeRow {
            upper: true,
            sample_index: s,
            deviation: right_dev,
            bound: edge_bound,
            pass: right_dev <= c * edge_bound,
        });
    }

    Ok(RigidityReport {
        rows,
        gap_rows,
        edge_rows,
        skipped,
        n_dim,
        gamma,
        c,
    })
}

/// Shrunken forbidden regions: `(left, right, gap_index)`. Internal gaps
/// shrink by `delta_k = N^gamma / (len^{1/3} N^{2/3})` on both sides; the
/// outer regions start `N^{gamma - 2/3}` beyond the extreme edges and stop
/// at +-10 (no spectrum survives out there under flatness).
pub fn shrunken_gap_regions(
    support: &SupportStructure,
    n_dim: usize,
    gamma: f64,
) -> Vec<(f64, f64, usize)> {
    let nf = n_dim as f64;
    let outer = nf.powf(gamma - 2.0 / 3.0);
    let mut regions = Vec::new();
    regions.push((-10.0, support.leftmost_edge() - outer, 0));
    for (k, (beta, alpha_next)) in support.gaps().into_iter().enumerate() {
        let len = alpha_next - beta;
        let shrink = nf.powf(gamma) / (len.cbrt() * nf.powf(2.0 / 3.0));
        if beta + shrink < alpha_next - shrink {
            regions.push((beta + shrink, alpha_next - shrink, k + 1));
        }
    }
    regions.push((
        support.rightmost_edge() + outer,
        10.0,
        support.intervals.len(),
    ));
    regions
}

/// Eigenvalue counts in the shrunken gaps of one sample, using cached
/// eigenvalues when present and symmetric-indefinite inertia counts
/// otherwise (no full eigendecomposition required).
pub fn gap_eigenvalue_counts(
    sample: &MatrixSample,
    support: &SupportStructure,
    gamma: f64,
) -> Result<Vec<GapCount>> {
    let regions = shrunken_gap_regions(support, sample.n(), gamma);
    let mut rows = Vec::with_capacity(regions.len());
    match sample.matrix_real() {
        Ok(h) => {
            for (left, right, gap_index) in regions {
                let count = linalg::count_eigenvalues_in(&h.view(), left, right)?;
                rows.push(GapCount {
                    gap_index,
                    left,
                    right,
                    sample_index: 0,
                    count,
                });
            }
        }
        Err(_) => {
            let spectrum = sample.eigenvalues()?;
            for (left, right, gap_index) in regions {
                let count = spectrum.iter().filter(|l| left < **l && **l < right).count();
                rows.push(GapCount {
                    gap_index,
                    left,
                    right,
                    sample_index: 0,
                    count,
                });
            }
        }
    }
    Ok(rows)
}
