//! Resolvent computation and its error decomposition against the vector
//! solution, plus the self-consistent perturbation vector computed by two
//! independent routes (Schur identity on the diagonal vs the explicit
//! minor expansion).

use ndarray::{Array1, Array2};
use ndarray_linalg::Inverse;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::profile::VarianceProfile;
use crate::sampler::{MatrixData, MatrixSample};
use crate::solver::{QveSolution, SpectralPoint};

/// Resolvent diagnostics at one spectral point.
#[derive(Clone, Debug)]
pub struct ResolventData {
    pub z: SpectralPoint,
    /// Diagonal of `G(z)`.
    pub g: Vec<Complex64>,
    /// `max_i |G_ii - m_i|`.
    pub err_d: f64,
    /// `max_{i != j} |G_ij|`.
    pub err_o: f64,
    /// `|<w, g - m>|` per supplied weight vector (normalized average).
    pub avg_err: Vec<f64>,
    /// Worst relative defect of `sum_j |G_ij|^2 = Im G_ii / eta` over rows.
    pub ward_max_rel: f64,
    /// Full resolvent, kept for minor-based cross checks.
    pub full_g: Array2<Complex64>,
}

const MIN_ETA: f64 = 1e-14;

/// Compute `G(z)` from the cached eigendecomposition, together with the
/// entrywise and averaged deviations from the vector solution `m` and the
/// rowwise Ward defect. Weight vectors must satisfy `max_i |w_i| <= 1`.
pub fn resolvent(
    sample: &MatrixSample,
    z: SpectralPoint,
    m: &QveSolution,
    weights: &[Vec<f64>],
) -> Result<ResolventData> {
    let n = sample.n();
    if z.eta < MIN_ETA {
        return Err(Error::Domain(format!(
            "eta = {:.3e} below conditioning floor {MIN_ETA:.0e}",
            z.eta
        )));
    }
    if m.m.len() != n {
        return Err(Error::Dimension(format!(
            "solution length {} vs matrix size {n}",
            m.m.len()
        )));
    }
    if (m.point.tau - z.tau).abs() > 1e-12 || (m.point.eta - z.eta).abs() > 1e-12 {
        return Err(Error::Invalid(
            "solution was computed at a different spectral point".into(),
        ));
    }
    for w in weights {
        if w.len() != n {
            return Err(Error::Dimension("weight length mismatch".into()));
        }
        if w.iter().any(|v| v.abs() > 1.0 + 1e-12) {
            return Err(Error::Invalid("weight exceeds sup-norm 1".into()));
        }
    }

    let eigen = sample.eigen()?;
    let zc = z.z();
    let w: Vec<Complex64> = eigen
        .values
        .iter()
        .map(|&l| Complex64::new(1.0, 0.0) / (Complex64::new(l, 0.0) - zc))
        .collect();

    let full_g: Array2<Complex64> = match &eigen.vectors {
        MatrixData::Real(u) => {
            // G = U diag(w) U^T, assembled as two real products.
            let re_row = Array1::from_iter(w.iter().map(|c| c.re));
            let im_row = Array1::from_iter(w.iter().map(|c| c.im));
            let u_re = u * &re_row;
            let u_im = u * &im_row;
            let g_re = u_re.dot(&u.t());
            let g_im = u_im.dot(&u.t());
            let mut g = Array2::<Complex64>::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    g[[i, j]] = Complex64::new(g_re[[i, j]], g_im[[i, j]]);
                }
            }
            g
        }
        MatrixData::Complex(u) => {
            let w_row = Array1::from_vec(w.clone());
            let scaled = u * &w_row;
            let u_conj_t = u.mapv(|c| c.conj()).reversed_axes();
            scaled.dot(&u_conj_t)
        }
    };

    let g: Vec<Complex64> = (0..n).map(|i| full_g[[i, i]]).collect();
    let mut err_d: f64 = 0.0;
    for i in 0..n {
        err_d = err_d.max((g[i] - m.m[i]).norm());
    }
    let mut err_o: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                err_o = err_o.max(full_g[[i, j]].norm());
            }
        }
    }
    let avg_err = weights
        .iter()
        .map(|wv| {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += wv[i] * (g[i] - m.m[i]);
            }
            (acc / n as f64).norm()
        })
        .collect();

    let mut ward_max_rel: f64 = 0.0;
    for i in 0..n {
        let mut lhs = 0.0;
        for j in 0..n {
            lhs += full_g[[i, j]].norm_sqr();
        }
        let rhs = g[i].im / z.eta;
        let rel = (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE);
        ward_max_rel = ward_max_rel.max(rel);
    }

    Ok(ResolventData {
        z,
        g,
        err_d,
        err_o,
        avg_err,
        ward_max_rel,
        full_g,
    })
}

/// Reference resolvent by direct inversion of `H - z`; O(n^3) with no
/// eigendecomposition shared with [`resolvent`]. Spot-check sizes only.
pub fn resolvent_direct_solve(sample: &MatrixSample, z: SpectralPoint) -> Result<Array2<Complex64>> {
    let n = sample.n();
    if n > 512 {
        return Err(Error::Invalid(
            "direct-solve reference is restricted to n <= 512".into(),
        ));
    }
    let zc = z.z();
    let mut a = match sample.data() {
        MatrixData::Real(h) => h.mapv(|v| Complex64::new(v, 0.0)),
        MatrixData::Complex(h) => h.clone(),
    };
    for i in 0..n {
        a[[i, i]] -= zc;
    }
    a.inv().map_err(|e| Error::Linalg(format!("inversion failed: {e}")))
}

/// Diagonal of `G(z)` alone from the cached eigendecomposition:
/// `G_ii = sum_k |U_ik|^2 / (lambda_k - z)`. O(n^2) per point against the
/// O(n^3) full assembly, which is what long scans of diagonal observables
/// want.
pub fn resolvent_diagonal(sample: &MatrixSample, z: SpectralPoint) -> Result<Vec<Complex64>> {
    if z.eta < MIN_ETA {
        return Err(Error::Domain(format!(
            "eta = {:.3e} below conditioning floor {MIN_ETA:.0e}",
            z.eta
        )));
    }
    let n = sample.n();
    let eigen = sample.eigen()?;
    let zc = z.z();
    let w: Vec<Complex64> = eigen
        .values
        .iter()
        .map(|&l| Complex64::new(1.0, 0.0) / (Complex64::new(l, 0.0) - zc))
        .collect();
    let mut g = vec![Complex64::new(0.0, 0.0); n];
    match &eigen.vectors {
        MatrixData::Real(u) => {
            for (i, gi) in g.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    acc += u[[i, k]] * u[[i, k]] * wk;
                }
                *gi = acc;
            }
        }
        MatrixData::Complex(u) => {
            for (i, gi) in g.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    acc += u[[i, k]].norm_sqr() * wk;
                }
                *gi = acc;
            }
        }
    }
    Ok(g)
}

/// The perturbation vector at one point, with the minor-route cross check
/// when computed.
#[derive(Clone, Debug)]
pub struct PerturbationVector {
    pub d: Vec<Complex64>,
    pub max_abs: f64,
    /// `sqrt(Im<g>/(N eta)) + 1/sqrt(N)`: the scale the vector is compared
    /// against.
    pub lemma_bound: f64,
    /// Max-norm relative disagreement between the diagonal route and the
    /// minor expansion; `None` when minors were not computed.
    pub agreement_rel: Option<f64>,
}

/// `d_i = -1/g_i - z - (S g)_i` from a resolvent diagonal alone. The minor
/// cross-route needs the full resolvent and lives in [`perturbation_d`].
pub fn perturbation_from_diagonal(
    g: &[Complex64],
    z: SpectralPoint,
    profile: &VarianceProfile,
) -> Result<PerturbationVector> {
    let n = g.len();
    if profile.n() != n {
        return Err(Error::Dimension("profile size mismatch".into()));
    }
    if g.iter().any(|v| v.norm() == 0.0) {
        return Err(Error::Domain("resolvent diagonal has a zero entry".into()));
    }
    let zc = z.z();
    let g_arr: Vec<Complex64> = g.to_vec();
    let sg = linalg::real_mat_complex_vec(&profile.s_view(), &g_arr);
    let one = Complex64::new(1.0, 0.0);
    let d: Vec<Complex64> = (0..n).map(|i| -one / g[i] - zc - sg[i]).collect();
    let max_abs = d.iter().map(|v| v.norm()).fold(0.0, f64::max);

    let avg_im = g.iter().map(|v| v.im).sum::<f64>() / n as f64;
    let lemma_bound = (avg_im.max(0.0) / (n as f64 * z.eta)).sqrt() + 1.0 / (n as f64).sqrt();

    Ok(PerturbationVector {
        d,
        max_abs,
        lemma_bound,
        agreement_rel: None,
    })
}

/// Compute `d_i = -1/g_i - z - (S g)_i` from the resolvent diagonal, and,
/// when `minor_check` is set (n <= 256), recompute every `d_k` through the
/// explicit minor expansion
/// `sum_{i!=j} h_ki G^(k)_ij h_jk + sum_i (|h_ki|^2 - s_ki) G^(k)_ii
///  - sum_i s_ki G_ik G_ki / G_kk - h_kk - s_kk g_k`
/// with `G^(k)_ij = G_ij - G_ik G_kj / G_kk`.
pub fn perturbation_d(
    sample: &MatrixSample,
    resolvent: &ResolventData,
    profile: &VarianceProfile,
    minor_check: bool,
) -> Result<PerturbationVector> {
    let n = sample.n();
    let base = perturbation_from_diagonal(&resolvent.g, resolvent.z, profile)?;
    let g = &resolvent.g;
    let d = base.d;
    let max_abs = base.max_abs;
    let lemma_bound = base.lemma_bound;

    let agreement_rel = if minor_check {
        if n > 256 {
            return Err(Error::Invalid(
                "minor cross check is restricted to n <= 256".into(),
            ));
        }
        let h: Array2<Complex64> = match sample.data() {
            MatrixData::Real(h) => h.mapv(|v| Complex64::new(v, 0.0)),
            MatrixData::Complex(h) => h.clone(),
        };
        let s = profile.s();
        let gf = &resolvent.full_g;
        let mut worst_diff: f64 = 0.0;
        for k in 0..n {
            let gkk = gf[[k, k]];
            let mut quad = Complex64::new(0.0, 0.0);
            let mut diag_term = Complex64::new(0.0, 0.0);
            let mut third = Complex64::new(0.0, 0.0);
            for i in 0..n {
                if i == k {
                    continue;
                }
                let a_i = h[[k, i]];
                let minor_ii = gf[[i, i]] - gf[[i, k]] * gf[[k, i]] / gkk;
                diag_term += (a_i.norm_sqr() - s[[k, i]]) * minor_ii;
                third -= s[[k, i]] * gf[[i, k]] * gf[[k, i]] / gkk;
                for j in 0..n {
                    if j == k || j == i {
                        continue;
                    }
                    let minor_ij = gf[[i, j]] - gf[[i, k]] * gf[[k, j]] / gkk;
                    quad += a_i * minor_ij * h[[j, k]];
                }
            }
            let d_minor = quad + diag_term + third - h[[k, k]] - s[[k, k]] * g[k];
            worst_diff = worst_diff.max((d_minor - d[k]).norm());
        }
        Some(worst_diff / max_abs.max(f64::MIN_POSITIVE))
    } else {
        None
    };

    Ok(PerturbationVector {
        d,
        max_abs,
        lemma_bound,
        agreement_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::VarianceProfile;
    use crate::sampler::{self, EntryDistribution, SymmetryClass};
    use crate::solver::{self, SolverConfig};
    use ndarray::array;

    fn fake_solution(point: SpectralPoint, m: Vec<Complex64>) -> QveSolution {
        QveSolution {
            point,
            m,
            residual: 0.0,
            iterations: 0,
            converged: true,
        }
    }

    #[test]
    fn two_by_two_diagonal_hand_computation() {
        let h = array![[1.0, 0.0], [0.0, -1.0]];
        let sample = MatrixSample::from_real(h, EntryDistribution::Gaussian, 0).unwrap();
        let z = SpectralPoint::new(0.0, 1.0).unwrap();
        let expected_g = vec![
            Complex64::new(1.0, 0.0) / Complex64::new(1.0, -1.0),
            Complex64::new(1.0, 0.0) / Complex64::new(-1.0, -1.0),
        ];
        let m = fake_solution(z, expected_g.clone());
        let data = resolvent(&sample, z, &m, &[vec![1.0, 1.0]]).unwrap();
        assert!((data.g[0] - expected_g[0]).norm() < 1e-15);
        assert!((data.g[1] - expected_g[1]).norm() < 1e-15);
        assert!(data.err_d < 1e-15);
        assert!(data.err_o < 1e-15);
        assert!(data.avg_err[0] < 1e-15);
        assert!(data.ward_max_rel < 1e-14, "ward defect {}", data.ward_max_rel);
    }

    #[test]
    fn diagonal_route_matches_full_assembly() {
        let profile = VarianceProfile::stochastic_constant(40).unwrap();
        for (class, seed) in [
            (SymmetryClass::RealSymmetric, 7u64),
            (SymmetryClass::ComplexHermitian, 8u64),
        ] {
            let sample =
                sampler::sample(&profile, class, EntryDistribution::Gaussian, seed).unwrap();
            let z = SpectralPoint::new(0.3, 0.05).unwrap();
            let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
            let full = resolvent(&sample, z, &m, &[]).unwrap();
            let diag = resolvent_diagonal(&sample, z).unwrap();
            let worst = full
                .g
                .iter()
                .zip(&diag)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "diagonal mismatch {worst}");

            let via_full = perturbation_d(&sample, &full, &profile, false).unwrap();
            let via_diag = perturbation_from_diagonal(&diag, z, &profile).unwrap();
            let d_diff = via_full
                .d
                .iter()
                .zip(&via_diag.d)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            assert!(d_diff < 1e-10, "d mismatch {d_diff}");
            assert!((via_full.lemma_bound - via_diag.lemma_bound).abs() < 1e-12);
        }
    }

    #[test]
    fn eigen_route_matches_direct_inversion() {
        let profile = VarianceProfile::stochastic_constant(50).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            7,
        )
        .unwrap();
        let z = SpectralPoint::new(0.3, 0.2).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let data = resolvent(&sample, z, &m, &[]).unwrap();
        let direct = resolvent_direct_solve(&sample, z).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..50 {
            for j in 0..50 {
                worst = worst.max((data.full_g[[i, j]] - direct[[i, j]]).norm());
            }
        }
        assert!(worst < 1e-8, "eigen vs direct inversion differ by {worst}");
        assert!(data.ward_max_rel < 1e-10);
    }

    #[test]
    fn ward_identity_complex_class() {
        let profile = VarianceProfile::stochastic_constant(40).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::ComplexHermitian,
            EntryDistribution::Gaussian,
            11,
        )
        .unwrap();
        let z = SpectralPoint::new(-0.4, 0.05).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let data = resolvent(&sample, z, &m, &[]).unwrap();
        assert!(data.ward_max_rel < 1e-10, "ward defect {}", data.ward_max_rel);
    }

    #[test]
    fn zero_matrix_perturbation_closed_form() {
        let n = 6;
        let profile = VarianceProfile::stochastic_constant(n).unwrap();
        let h = ndarray::Array2::<f64>::zeros((n, n));
        let sample = MatrixSample::from_real(h, EntryDistribution::Gaussian, 0).unwrap();
        let z = SpectralPoint::new(0.0, 1.0).unwrap();
        let g = vec![Complex64::new(0.0, 1.0); n];
        let m = fake_solution(z, g);
        let data = resolvent(&sample, z, &m, &[]).unwrap();
        let pert = perturbation_d(&sample, &data, &profile, true).unwrap();
        // d_i = -1/i - i - i * rowsum = -i since rowsums are 1.
        for v in &pert.d {
            assert!((v - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        }
        assert!(pert.agreement_rel.unwrap() < 1e-14);
    }

    #[test]
    fn minor_route_agrees_on_random_matrix() {
        let profile = VarianceProfile::stochastic_constant(50).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            3,
        )
        .unwrap();
        let z = SpectralPoint::new(0.3, 0.1).unwrap();
        let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let data = resolvent(&sample, z, &m, &[]).unwrap();
        let pert = perturbation_d(&sample, &data, &profile, true).unwrap();
        let agreement = pert.agreement_rel.unwrap();
        assert!(agreement < 1e-9, "routes disagree at {agreement} relative");
        assert!(pert.max_abs > 0.0);
    }

    #[test]
    fn rejects_tiny_eta_and_mismatched_solution() {
        let profile = VarianceProfile::stochastic_constant(8).unwrap();
        let sample = sampler::sample(
            &profile,
            SymmetryClass::RealSymmetric,
            EntryDistribution::Gaussian,
            1,
        )
        .unwrap();
        let z = SpectralPoint::new(0.0, 1e-15).unwrap();
        let m = fake_solution(z, vec![Complex64::new(0.0, 1.0); 8]);
        assert!(resolvent(&sample, z, &m, &[]).is_err());
        let z_ok = SpectralPoint::new(0.0, 0.5).unwrap();
        let m_other = fake_solution(SpectralPoint::new(0.1, 0.5).unwrap(), m.m.clone());
        assert!(resolvent(&sample, z_ok, &m_other, &[]).is_err());
        let m_ok = fake_solution(z_ok, vec![Complex64::new(0.0, 1.0); 8]);
        assert!(resolvent(&sample, z_ok, &m_ok, &[vec![2.0; 8]]).is_err());
    }
}
