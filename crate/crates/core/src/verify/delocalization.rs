//! Eigenvector delocalization probes and the anisotropic (bilinear-form)
//! resolvent law.

use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{CellRng, MatrixData, MatrixSample};
use crate::solver::QveSolution;
use crate::verify::{domination, DominationCheck};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DelocalizationReport {
    /// `sqrt(N) * max_{i,b} |b . u^(i)|` per sample, over all standard
    /// basis probes and the supplied extra probes.
    pub per_sample_max: Vec<f64>,
    pub threshold: f64,
    /// Fraction of samples whose maximum exceeds the threshold.
    pub exceed_fraction: f64,
    pub n_dim: usize,
}

/// Scan all eigenvector overlaps with the standard basis (equivalently the
/// largest matrix entry of the eigenvector basis) plus any extra unit
/// probes, and compare `sqrt(N) max |b . u|` against `c log N`.
pub fn delocalization_check(
    samples: &[MatrixSample],
    extra_probes: &[Vec<f64>],
    c: f64,
) -> Result<DelocalizationReport> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples supplied".into()));
    }
    let n = samples[0].n();
    if samples.iter().any(|s| s.n() != n) {
        return Err(Error::Dimension("samples of unequal size".into()));
    }
    for p in extra_probes {
        if p.len() != n {
            return Err(Error::Dimension("probe length mismatch".into()));
        }
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("probe norm {norm} is not 1")));
        }
    }
    let sqrt_n = (n as f64).sqrt();
    let threshold = c * (n as f64).ln();
    let mut per_sample_max = Vec::with_capacity(samples.len());
    for sample in samples {
        let eigen = sample.eigen()?;
        let mut max_overlap: f64 = 0.0;
        match &eigen.vectors {
            MatrixData::Real(u) => {
                for v in u.iter() {
                    max_overlap = max_overlap.max(v.abs());
                }
                for p in extra_probes {
                    let probe = Array1::from_vec(p.clone());
                    let overlaps = probe.dot(u);
                    for v in overlaps.iter() {
                        max_overlap = max_overlap.max(v.abs());
                    }
                }
            }
            MatrixData::Complex(u) => {
                for v in u.iter() {
                    max_overlap = max_overlap.max(v.norm());
                }
                for p in extra_probes {
                    for k in 0..n {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for i in 0..n {
                            acc += p[i] * u[[i, k]];
                        }
                        max_overlap = max_overlap.max(acc.norm());
                    }
                }
            }
        }
        per_sample_max.push(sqrt_n * max_overlap);
    }
    let exceed = per_sample_max.iter().filter(|v| **v > threshold).count();
    Ok(DelocalizationReport {
        exceed_fraction: exceed as f64 / per_sample_max.len() as f64,
        per_sample_max,
        threshold,
        n_dim: n,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnisotropicTrial {
    pub sample_index: usize,
    pub pair_index: usize,
    /// `|w* G v - sum_i m_i w_i v_i|`.
    pub error: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnisotropicReport {
    pub trials: Vec<AnisotropicTrial>,
    pub bound: f64,
    pub check: DominationCheck,
}

/// Bilinear resolvent probes `w* G(z) v` against the diagonal prediction
/// `sum_i m_i w_i v_i`, with the combined pointwise bound
/// `sqrt(rho/(N eta)) + 1/(N eta) + min(1/sqrt(N eta), kappa/(N eta))`.
/// Probe pairs must be l2-normalized. `kappa_value` is the local-law weight
/// at the solution's spectral point.
pub fn anisotropic_check(
    samples: &[MatrixSample],
    m: &QveSolution,
    probe_pairs: &[(Vec<f64>, Vec<f64>)],
    kappa_value: f64,
    c: f64,
    alpha: f64,
) -> Result<AnisotropicReport> {
    if samples.is_empty() || probe_pairs.is_empty() {
        return Err(Error::Invalid("need samples and probe pairs".into()));
    }
    let n = samples[0].n();
    if m.m.len() != n {
        return Err(Error::Dimension("solution length mismatch".into()));
    }
    for (w, v) in probe_pairs {
        for p in [w, v] {
            if p.len() != n {
                return Err(Error::Dimension("probe length mismatch".into()));
            }
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("probe norm {norm} is not 1")));
            }
        }
    }
    let eta = m.point.eta;
    let n_eta = n as f64 * eta;
    let rho = m.density();
    let bound = (rho / n_eta).sqrt()
        + 1.0 / n_eta
        + (1.0 / n_eta.sqrt()).min(kappa_value / n_eta);

    let mut trials = Vec::with_capacity(samples.len() * probe_pairs.len());
    for (si, sample) in samples.iter().enumerate() {
        if sample.n() != n {
            return Err(Error::Dimension("samples of unequal size".into()));
        }
        let eigen = sample.eigen()?;
        let zc = m.point.z();
        let resolvent_weights: Vec<Complex64> = eigen
            .values
            .iter()
            .map(|&l| Complex64::new(1.0, 0.0) / (Complex64::new(l, 0.0) - zc))
            .collect();
        for (pi, (w, v)) in probe_pairs.iter().enumerate() {
            let form = match &eigen.vectors {
                MatrixData::Real(u) => {
                    let pw = Array1::from_vec(w.clone()).dot(u);
                    let pv = Array1::from_vec(v.clone()).dot(u);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        acc += pw[k] * pv[k] * resolvent_weights[k];
                    }
                    acc
                }
                MatrixData::Complex(u) => {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        let mut pw = Complex64::new(0.0, 0.0);
                        let mut pv = Complex64::new(0.0, 0.0);
                        for i in 0..n {
                            pw += w[i] * u[[i, k]];
                            pv += v[i] * u[[i, k]];
                        }
                        acc += pw.conj() * pv * resolvent_weights[k];
                    }
                    acc
                }
            };
            let mut target = Complex64::new(0.0, 0.0);
            for i in 0..n {
                target += m.m[i] * w[i] * v[i];
            }
            let error = (form - target).norm();
            trials.push(AnisotropicTrial {
                sample_index: si,
                pair_index: pi,
                error,
                ratio: error / bound,
            });
        }
    }
    let ratios: Vec<f64> = trials.iter().map(|t| t.ratio).collect();
    Ok(AnisotropicReport {
        trials,
        bound,
        check: domination(&ratios, c, alpha),
    })
}

/// Deterministic random unit vectors for probe panels.
pub fn random_unit_vectors(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            let mut rng = CellRng::new(seed, k as u64, 0x5eed);
            let mut v: Vec<f64> = (0..n)
                .map(|_| {
                    let x: f64 = rng.sample(rand_distr::StandardNormal);
                    x
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut v {
                *x /= norm;
            }
            v
        })
        .collect()
}

/// A deterministic orthonormal probe pair.
pub fn random_orthogonal_pair(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let vs = random_unit_vectors(n, 2, seed);
    let (w, mut v) = (vs[0].clone(), vs[1].clone());
    let overlap: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
    for i in 0..n {
        v[i] -= overlap * w[i];
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    (w, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::VarianceProfile;
    use crate::sampler::{self, EntryDistribution, SymmetryClass};
    use crate::solver::{self, SolverConfig, SpectralPoint};
    use crate::verify::resolvent::resolvent;

    #[test]
    fn gaussian_eigenvectors_are_delocalized() {
        let samples: Vec<_> = (0..5)
            .map(|t| sampler::sample_gaussian_reference(300, SymmetryClass::RealSymmetric, t).unwrap())
            .collect();
        let probes = random_unit_vectors(300, 3, 99);
        let report = delocalization_check(&samples, &probes, 3.0).unwrap();
        assert_eq!(report.exceed_fraction, 0.0, "max {:?}", report.per_sample_max);
        assert!(report.per_sample_max.iter().all(|v| *v < report.threshold));
    }

    #[test]
    fn localized_negative_control_fails() {
        let n = 500;
        let mut diag = ndarray::Array2::<f64>::zeros((n, n));
        for i in 0..n {
            diag[[i, i]] = i as f64 / n as f64;
        }
        let sample = MatrixSample::from_real(diag, EntryDistribution::Gaussian, 0).unwrap();
        let report = delocalization_check(&[sample], &[], 3.0).unwrap();
        assert_eq!(report.exceed_fraction, 1.0);
        assert!(report.per_sample_max[0] >= (n as f64).sqrt() * 0.999);
    }

    #[test]
    fn basis_probe_reduces_to_diagonal_law() {
        let profile = VarianceProfile::stochastic_constant(120).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            5,
        )
        .unwrap();
        let z = SpectralPoint::new(0.2, 0.3).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let data = resolvent(&sample, z, &m, &[]).unwrap();
        let mut e0 = vec![0.0; 120];
        e0[0] = 1.0;
        let report =
            anisotropic_check(&[sample], &m, &[(e0.clone(), e0)], 1.0, 10.0, 0.05).unwrap();
        let expected = (data.g[0] - m.m[0]).norm();
        assert!(
            (report.trials[0].error - expected).abs() < 1e-12,
            "basis probe error {} vs diagonal deviation {}",
            report.trials[0].error,
            expected
        );
    }

    #[test]
    fn uniform_probe_matches_full_matrix_sum() {
        let profile = VarianceProfile::stochastic_constant(100).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            6,
        )
        .unwrap();
        let z = SpectralPoint::new(0.0, 0.4).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let data = resolvent(&sample, z, &m, &[]).unwrap();
        let n: f64 = 100.0;
        let uniform = vec![1.0 / n.sqrt(); 100];
        let report =
            anisotropic_check(&[sample], &m, &[(uniform.clone(), uniform)], 1.0, 10.0, 0.05)
                .unwrap();
        // w = v = 1/sqrt(N) turns the bilinear form into the full matrix
        // sum of G over N, including off-diagonal entries.
        let mut total = num_complex::Complex64::new(0.0, 0.0);
        for v in data.full_g.iter() {
            total += v;
        }
        let mean_m = m.average();
        let expected = (total / n - mean_m).norm();
        assert!(
            (report.trials[0].error - expected).abs() < 1e-10,
            "uniform probe {} vs matrix sum {}",
            report.trials[0].error,
            expected
        );
    }

    #[test]
    fn orthogonal_pair_error_is_small_in_bulk() {
        let n = 400;
        let profile = VarianceProfile::stochastic_constant(n).unwrap();
        let samples: Vec<_> = (0..3)
            .map(|t| {
                sampler::sample(
                    &profile,
                    SymmetryClass::RealSymmetric,
                    EntryDistribution::Gaussian,
                    100 + t,
                )
                .unwrap()
            })
            .collect();
        let eta = (n as f64).powf(-0.8);
        let z = SpectralPoint::new(0.1, eta).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let pairs: Vec<_> = (0..4).map(|k| random_orthogonal_pair(n, 7 + k)).collect();
        let report = anisotropic_check(&samples, &m, &pairs, 2.0, 10.0, 0.05).unwrap();
        assert!(report.check.pass, "worst ratio {}", report.check.worst_ratio);
    }

    #[test]
    fn probe_validation() {
        let profile = VarianceProfile::stochastic_constant(10).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            1,
        )
        .unwrap();
        let z = SpectralPoint::new(0.0, 0.5).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let bad = vec![1.0; 10];
        assert!(anisotropic_check(&[sample.clone()], &m, &[(bad.clone(), bad)], 1.0, 10.0, 0.05)
            .is_err());
        assert!(delocalization_check(&[sample], &[vec![0.5; 10]], 3.0).is_err());
    }
}
