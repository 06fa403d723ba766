//! Property tests for the structural invariants of profiles, the solver,
//! density curves, samplers, and the statistics helpers.

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use qvelab::dos::{self, DosCurve};
use qvelab::envelope;
use qvelab::sampler::{self, EntryDistribution, SymmetryClass};
use qvelab::solver;
use qvelab::verify;
use qvelab::{ProfileParams, SolverConfig, SpectralPoint, VarianceProfile};

fn flat_symmetric_entries(n: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(0.2f64..1.0, n * (n + 1) / 2).prop_map(move |vals| {
        let mut s = Array2::zeros((n, n));
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                let v = vals[k] / n as f64;
                k += 1;
                s[[i, j]] = v;
                s[[j, i]] = v;
            }
        }
        s
    })
}

fn profile_strategy() -> impl Strategy<Value = VarianceProfile> {
    (4usize..16)
        .prop_flat_map(flat_symmetric_entries)
        .prop_map(|s| VarianceProfile::custom(s, ProfileParams::default()).unwrap())
}

fn semicircle_curve(points: usize) -> DosCurve {
    let grid = dos::uniform_grid(-3.0, 3.0, points).unwrap();
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
    DosCurve::from_values(grid, rho, 1e-6).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn built_profiles_are_exactly_symmetric(profile in profile_strategy()) {
        let s = profile.s_view();
        let n = profile.n();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s[[i, j]], s[[j, i]]);
            }
        }
    }

    #[test]
    fn primitivity_improves_with_the_power(profile in profile_strategy()) {
        // with all row sums >= p, the minimum entry of n * S^(L+1) is at
        // least p times the minimum entry of n * S^L
        let s = profile.s_view().to_owned();
        let n = profile.n() as f64;
        let row_min = s
            .rows()
            .into_iter()
            .map(|r| r.sum())
            .fold(f64::INFINITY, f64::min);
        let mut power = s.clone();
        for _ in 0..3 {
            let next = power.dot(&s);
            let lo = power.iter().cloned().fold(f64::INFINITY, f64::min) * n;
            let lo_next = next.iter().cloned().fold(f64::INFINITY, f64::min) * n;
            prop_assert!(lo_next >= row_min * lo - 1e-12);
            power = next;
        }
    }

    #[test]
    fn profile_json_roundtrip_preserves_hash(profile in profile_strategy()) {
        let text = profile.to_json(true).unwrap();
        let back = VarianceProfile::from_json(&text).unwrap();
        prop_assert_eq!(profile.content_hash(), back.content_hash());
    }

    #[test]
    fn ks_distance_is_a_symmetric_pseudometric(
        a in proptest::collection::vec(-5.0f64..5.0, 1..40),
        b in proptest::collection::vec(-5.0f64..5.0, 1..40),
        shift in 0usize..40,
    ) {
        let d_ab = verify::ks_distance(&a, &b).unwrap();
        let d_ba = verify::ks_distance(&b, &a).unwrap();
        prop_assert!((d_ab - d_ba).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&d_ab));
        // reshuffling one pool changes nothing
        let mut shuffled = a.clone();
        shuffled.rotate_left(shift % a.len());
        prop_assert_eq!(verify::ks_distance(&a, &shuffled).unwrap(), 0.0);
    }

    #[test]
    fn eigenvalue_counts_are_monotone_and_exact_far_out(
        mut spectrum in proptest::collection::vec(-2.2f64..2.2, 5..120),
    ) {
        spectrum.sort_by(f64::total_cmp);
        let curve = semicircle_curve(601);
        let support = dos::detect_support(&curve, 1e-3).unwrap();
        let grid: Vec<f64> = vec![-10.0, -1.0, 0.0, 1.0, 10.0];
        let report =
            verify::counting_discrepancy(&[spectrum.clone()], &curve, &support, &grid, 1.0)
                .unwrap();
        // all eigenvalues lie inside (-10, 10): at the extremes the
        // empirical count and N * integral of rho agree exactly
        prop_assert_eq!(report.rows[0].max_discrepancy, 0.0);
        prop_assert_eq!(report.rows[4].max_discrepancy, 0.0);
        let counts: Vec<usize> = grid
            .iter()
            .map(|&t| spectrum.partition_point(|l| *l <= t))
            .collect();
        for w in counts.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        let masses: Vec<f64> = report.rows.iter().map(|r| r.expected).collect();
        for w in masses.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solver_meets_residual_halfplane_symmetry_and_decay(
        profile in profile_strategy(),
        tau in 0.0f64..3.0,
        eta in 0.3f64..5.0,
    ) {
        let config = SolverConfig::default();
        let point = SpectralPoint::new(tau, eta).unwrap();
        let sol = solver::solve_point(&profile, point, &config, None).unwrap();
        prop_assert!(sol.converged);
        let res = solver::residual(&profile, point.z(), &sol.m);
        prop_assert!(res <= config.tol, "residual {res}");
        prop_assert!(sol.m.iter().all(|v| v.im > 0.0));

        // reflection: m(-tau + i eta) = -conj(m(tau + i eta))
        let mirror = SpectralPoint::new(-tau, eta).unwrap();
        let sol_m = solver::solve_point(&profile, mirror, &config, None).unwrap();
        let worst = sol
            .m
            .iter()
            .zip(&sol_m.m)
            .map(|(a, b)| (b + a.conj()).norm())
            .fold(0.0, f64::max);
        prop_assert!(worst <= 10.0 * config.tol, "reflection defect {worst}");

        // Stieltjes decay on the imaginary axis
        let axis = SpectralPoint::new(0.0, eta).unwrap();
        let sol_axis = solver::solve_point(&profile, axis, &config, None).unwrap();
        prop_assert!(sol_axis
            .m
            .iter()
            .all(|v| v.norm() <= (1.0 + 1e-12) / eta));

        // comparability of components for strictly positive profiles
        let ratio = sol.max_abs() / sol.min_abs();
        prop_assert!(ratio <= 50.0, "component ratio {ratio}");
    }

    #[test]
    fn sampled_matrices_are_exactly_selfadjoint_and_dbm_preserves_it(
        n in 8usize..24,
        seed in 0u64..1000,
        class_real in proptest::bool::ANY,
        dist_pick in 0u8..3,
        t in 0.0f64..3.0,
    ) {
        let class = if class_real {
            SymmetryClass::RealSymmetric
        } else {
            SymmetryClass::ComplexHermitian
        };
        let dist = match dist_pick {
            0 => EntryDistribution::Gaussian,
            1 => EntryDistribution::BoundedUniform,
            _ => EntryDistribution::RademacherScaled,
        };
        let profile = VarianceProfile::stochastic_constant(n).unwrap();
        let sample = sampler::sample(&profile, class, dist, seed).unwrap();
        prop_assert!(sample.is_hermitian_exact());
        let reference = sampler::sample_gaussian_reference(n, class, seed ^ 0xabcd).unwrap();
        let moved = sampler::dbm_interpolate(&sample, &reference, t).unwrap();
        prop_assert!(moved.is_hermitian_exact());
        let values = moved.eigenvalues().unwrap();
        prop_assert!(values.iter().zip(values.iter().skip(1)).all(|(a, b)| a <= b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dos_is_normalized_and_symmetric(profile in profile_strategy()) {
        let grid = dos::uniform_grid(-3.0, 3.0, 151).unwrap();
        let eta = 0.02;
        let curve =
            dos::density_of_states(&profile, &grid, eta, false, &SolverConfig::default())
                .unwrap();
        let spacing = curve.max_spacing();
        let total = curve.integral().unwrap();
        prop_assert!(
            (total - 1.0).abs() <= 3.0 * (spacing + eta),
            "integral {total}"
        );
        let k = curve.rho.len();
        for i in 0..k {
            let defect = (curve.rho[i] - curve.rho[k - 1 - i]).abs();
            prop_assert!(defect <= 1e-6, "asymmetry {defect}");
        }
    }

    #[test]
    fn harmonic_extension_matches_solver_density(
        tau in -2.5f64..2.5,
        eta in 0.1f64..1.0,
    ) {
        let profile = VarianceProfile::stochastic_constant(48).unwrap();
        let grid = dos::uniform_grid(-3.0, 3.0, 301).unwrap();
        let curve =
            dos::density_of_states(&profile, &grid, 5e-3, true, &SolverConfig::default())
                .unwrap();
        let z = SpectralPoint::new(tau, eta).unwrap();
        let extended = dos::harmonic_extension(&curve, z).unwrap();
        let sol = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        prop_assert!(
            (extended - sol.density()).abs() < 1e-3,
            "extension {extended} vs density {}",
            sol.density()
        );
    }

    #[test]
    fn kappa_never_exceeds_the_default_branch(
        tau in -3.5f64..3.5,
        eta in 1e-4f64..0.5,
        gamma in 0.05f64..0.3,
    ) {
        let curve = semicircle_curve(1201);
        let support = dos::detect_support(&curve, 1e-3).unwrap();
        let z = SpectralPoint::new(tau, eta).unwrap();
        let eval = dos::kappa(&support, &curve, z, 1000, gamma).unwrap();
        let delta = dos::local_gap_size(&support, tau, support.delta_star / 2.0).unwrap();
        let rho_z = dos::harmonic_extension_unchecked(&curve, z).unwrap();
        let default_value = 1.0 / (delta.cbrt() + rho_z);
        prop_assert!(eval.value <= default_value * (1.0 + 1e-12));
        if eval.clipped {
            prop_assert!((eval.value - default_value).abs() <= 1e-12 * default_value);
        }
    }

    #[test]
    fn envelope_root_is_positive_and_decreasing_in_eta(
        omega_pick in -1.0f64..1.0,
        eta_lo in 1e-5f64..1e-2,
        factor in 1.5f64..20.0,
    ) {
        let curve = semicircle_curve(1201);
        let support = dos::detect_support(&curve, 1e-3).unwrap();
        let edge = support.rightmost_edge();
        let env = envelope::error_envelope(&support, &curve, edge, 2000, 0.2, 0.01).unwrap();
        // map the pick onto the envelope's admissible omega range around
        // an extreme edge (gap length 1 on the outside)
        let omega = if omega_pick < 0.0 {
            omega_pick * support.delta_star
        } else {
            omega_pick * 0.5
        };
        let eta_hi = eta_lo * factor;
        let lo = env.evaluate(omega, eta_lo).unwrap();
        let hi = env.evaluate(omega, eta_hi).unwrap();
        prop_assert!(lo > 0.0 && hi > 0.0);
        prop_assert!(lo >= hi - 1e-13, "envelope grew with eta: {lo} -> {hi}");
    }
}

#[test]
fn stochastic_constant_profiles_pass_all_structural_checks() {
    for n in [2, 3, 16, 200] {
        let profile = VarianceProfile::stochastic_constant(n).unwrap();
        let report = profile.check_assumptions();
        assert!(report.flat_ok, "n = {n}");
        assert!(report.primitive_ok, "n = {n}");
        assert!((report.max_entry_times_n - 1.0).abs() < 1e-12);
        assert!((report.min_power_entry_times_n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn complex_resolvent_ward_identity_holds() {
    let profile = VarianceProfile::stochastic_constant(60).unwrap();
    let sample = sampler::sample(
        &profile,
        SymmetryClass::ComplexHermitian,
        EntryDistribution::Gaussian,
        77,
    )
    .unwrap();
    let z = SpectralPoint::new(0.4, 0.2).unwrap();
    let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
    let data = verify::resolvent(&sample, z, &m, &[]).unwrap();
    assert!(data.ward_max_rel < 1e-10, "ward {}", data.ward_max_rel);
    let direct = verify::resolvent_direct_solve(&sample, z).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in data.full_g.iter().zip(direct.iter()) {
        worst = worst.max((a - b).norm());
    }
    assert!(worst < 1e-8, "eigendecomposition vs direct solve {worst}");
}

#[test]
fn gap_pool_reshuffle_has_zero_ks() {
    let spectra: Vec<Vec<f64>> = (0..4)
        .map(|t| {
            sampler::gaussian_reference_eigenvalues(400, SymmetryClass::RealSymmetric, t).unwrap()
        })
        .collect();
    let stats =
        verify::gap_statistics(&spectra, verify::semicircle_density, (-1.0, 1.0), 1e-3).unwrap();
    let mut reshuffled = stats.gaps.clone();
    reshuffled.reverse();
    assert_eq!(verify::ks_distance(&stats.gaps, &reshuffled).unwrap(), 0.0);
}

#[test]
fn averaged_weight_panel_is_consistent() {
    // fixed deterministic weight panel: all ones, alternating signs, and a
    // pseudo-random sign vector; all must satisfy the max-norm precondition
    let n = 80;
    let profile = VarianceProfile::stochastic_constant(n).unwrap();
    let sample = sampler::sample(
        &profile,
        SymmetryClass::RealSymmetric,
        EntryDistribution::Gaussian,
        3,
    )
    .unwrap();
    let z = SpectralPoint::new(0.0, 0.5).unwrap();
    let m = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
    let ones = vec![1.0; n];
    let alternating: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let signs: Vec<f64> = (0..n)
        .map(|i| if (i * 2654435761) % 97 < 48 { 1.0 } else { -1.0 })
        .collect();
    let data = verify::resolvent(&sample, z, &m, &[ones, alternating, signs]).unwrap();
    assert_eq!(data.avg_err.len(), 3);
    // uniform averaging is the smallest of the three in the typical case,
    // but each must at least be dominated by the entrywise error scale
    for err in &data.avg_err {
        assert!(*err <= data.err_d + data.err_o + 1e-12);
    }
}

#[test]
fn solver_and_resolvent_agree_on_scalar_case() {
    // 1x1 profile sanity: the QVE solution is the scalar semicircle law
    let profile = VarianceProfile::stochastic_constant(2).unwrap();
    for (tau, eta) in [(0.0, 1.0), (1.5, 0.3), (-2.5, 0.05)] {
        let z = SpectralPoint::new(tau, eta).unwrap();
        let sol = solver::solve_point(&profile, z, &SolverConfig::default(), None).unwrap();
        let exact = solver::scalar_semicircle(z.z());
        for v in &sol.m {
            assert!((v - exact).norm() < 1e-8);
        }
    }
}

#[test]
fn sweep_warm_start_is_deterministic() {
    let profile = VarianceProfile::stochastic_constant(30).unwrap();
    let etas: Vec<f64> = (0..12).map(|k| 1.0 * 0.5f64.powi(k)).collect();
    let a = solver::solve_sweep(&profile, 0.7, &etas, &SolverConfig::default()).unwrap();
    let b = solver::solve_sweep(&profile, 0.7, &etas, &SolverConfig::default()).unwrap();
    for (x, y) in a.solutions.iter().zip(&b.solutions) {
        for (u, v) in x.m.iter().zip(&y.m) {
            assert_eq!(u, v);
        }
    }
}

#[test]
fn domination_rule_boundaries() {
    // exactly at the (1 - alpha) fraction the check passes; below it fails
    let ratios: Vec<f64> = (0..100)
        .map(|i| if i < 95 { 1.0 } else { 11.0 })
        .collect();
    let check = verify::domination(&ratios, 10.0, 0.05);
    assert!(check.pass);
    let ratios_worse: Vec<f64> = (0..100)
        .map(|i| if i < 94 { 1.0 } else { 11.0 })
        .collect();
    assert!(!verify::domination(&ratios_worse, 10.0, 0.05).pass);
}

#[test]
fn atomic_measure_mass_is_additive() {
    let atoms =
        verify::AtomicMeasure::new((0..100).map(|i| i as f64 * 0.01).collect()).unwrap();
    use qvelab::verify::SpectralMeasure;
    let whole = atoms.mass(0.0, 1.0).unwrap();
    let left = atoms.mass(0.0, 0.495).unwrap();
    let right = atoms.mass(0.4951, 1.0).unwrap();
    assert!((whole - left - right).abs() < 1e-15);
    let z = Complex64::new(0.3, 0.7);
    let m = atoms.stieltjes(z).unwrap();
    assert!(m.im > 0.0);
}
