//! Local spectral statistics: density-rescaled gap pools, two-sample
//! Kolmogorov-Smirnov distance, and smooth bump observables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GapStatistics {
    /// Pooled rescaled gaps `N * rho(lambda_i) * (lambda_{i+1} - lambda_i)`.
    pub gaps: Vec<f64>,
    pub window: (f64, f64),
    pub samples: usize,
    /// Gaps dropped because the local density fell below the floor.
    pub discarded_low_density: usize,
    pub mean: f64,
}

/// Pool rescaled nearest-neighbour gaps from many spectra. A gap is kept
/// when both eigenvalues lie in the window and the local density at the
/// left eigenvalue is at least `min_density`.
pub fn gap_statistics<F: Fn(f64) -> f64>(
    spectra: &[Vec<f64>],
    density: F,
    window: (f64, f64),
    min_density: f64,
) -> Result<GapStatistics> {
    if spectra.is_empty() {
        return Err(Error::Invalid("no spectra supplied".into()));
    }
    if !(window.0 < window.1) {
        return Err(Error::Invalid("empty window".into()));
    }
    if min_density < 0.0 {
        return Err(Error::Invalid("negative density floor".into()));
    }
    let mut gaps = Vec::new();
    let mut discarded = 0usize;
    for spectrum in spectra {
        let n = spectrum.len();
        if n < 2 {
            return Err(Error::Invalid("spectrum with fewer than 2 points".into()));
        }
        let mut sorted = spectrum.clone();
        sorted.sort_by(f64::total_cmp);
        for i in 0..n - 1 {
            let (a, b) = (sorted[i], sorted[i + 1]);
            if a < window.0 || b > window.1 {
                continue;
            }
            let rho = density(a);
            if !rho.is_finite() {
                return Err(Error::Domain(format!("density at {a} is not finite")));
            }
            if rho < min_density {
                discarded += 1;
                continue;
            }
            gaps.push(n as f64 * rho * (b - a));
        }
    }
    if gaps.is_empty() {
        return Err(Error::Resolution(
            "no gaps survived the window and density floor".into(),
        ));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok(GapStatistics {
        gaps,
        window,
        samples: spectra.len(),
        discarded_low_density: discarded,
        mean,
    })
}

/// Density of the semicircle law on [-2, 2], unit mass.
pub fn semicircle_density(x: f64) -> f64 {
    if x.abs() < 2.0 {
        (4.0 - x * x).sqrt() / (2.0 * std::f64::consts::PI)
    } else {
        0.0
    }
}

/// Two-sample Kolmogorov-Smirnov distance, the sup-norm gap between the
/// empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("empty sample in KS distance".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in KS sample".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup = 0.0f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Smooth compactly supported bump `exp(1 - 1/(1 - u^2))` with
/// `u = (x - center)/width`, used as a test observable on rescaled gaps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BumpObservable {
    pub center: f64,
    pub width: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BumpComparison {
    pub center: f64,
    pub width: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub se_pooled: f64,
}

impl BumpComparison {
    pub fn within(&self, k: f64) -> bool {
        (self.mean_a - self.mean_b).abs() <= k * self.se_pooled
    }
}

impl BumpObservable {
    pub fn new(center: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !center.is_finite() {
            return Err(Error::Invalid("bump needs positive width".into()));
        }
        Ok(Self { center, width })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.width;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    }

    /// Sample mean and standard error of the observable over a gap pool.
    pub fn mean_and_se(&self, gaps: &[f64]) -> Result<(f64, f64)> {
        if gaps.len() < 2 {
            return Err(Error::Invalid("need at least 2 gaps".into()));
        }
        let n = gaps.len() as f64;
        let vals: Vec<f64> = gaps.iter().map(|&g| self.eval(g)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Ok((mean, (var / n).sqrt()))
    }

    pub fn compare(&self, a: &[f64], b: &[f64]) -> Result<BumpComparison> {
        let (mean_a, se_a) = self.mean_and_se(a)?;
        let (mean_b, se_b) = self.mean_and_se(b)?;
        Ok(BumpComparison {
            center: self.center,
            width: self.width,
            mean_a,
            mean_b,
            se_pooled: (se_a * se_a + se_b * se_b).sqrt(),
        })
    }
}
