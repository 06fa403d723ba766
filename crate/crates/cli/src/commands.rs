//! Subcommand implementations. Each handler builds its inputs from the
//! config, records stages in the run manifest, writes its artifacts into the
//! output directory, and reports pass / check-failed.

use std::path::Path;

use qvelab::dos::{self, DosCurve, EdgeRefineConfig, KappaEvaluation, MinimumKind, SupportStructure};
use qvelab::envelope;
use qvelab::sampler::{self, MatrixSample};
use qvelab::solver::{self, SolutionRecord};
use qvelab::verify::{self, DominationCheck, MeasureDistance, SpectralMeasure};
use qvelab::{SpectralPoint, VarianceProfile};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, RunSection};
use crate::manifest::RunManifest;
use crate::output::{emit_figure_data, write_json, FigureData, FigureKind};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    CheckFailed,
}

pub struct RunContext<'a> {
    pub out_dir: &'a Path,
    pub config_dir: &'a Path,
    pub seed: u64,
    pub strict: bool,
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
}

fn geometric_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, CliError> {
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err(CliError::Config(format!(
            "bad geometric grid [{lo}, {hi}] with {points} points"
        )));
    }
    let ratio = hi / lo;
    Ok((0..points)
        .map(|k| lo * ratio.powf(k as f64 / (points - 1) as f64))
        .collect())
}

/// Solve the density on the configured tau grid. Unconverged grid points are
/// a non-convergence error here: every consumer needs a hole-free curve.
fn build_curve(cfg: &ExperimentConfig, profile: &VarianceProfile) -> Result<DosCurve, CliError> {
    let d = require(&cfg.dos, "dos")?;
    let grid = dos::uniform_grid(d.tau_min, d.tau_max, d.points)?;
    let curve = dos::density_of_states(profile, &grid, d.eta, d.extrapolate, &cfg.solver.to_config())?;
    if !curve.holes.is_empty() {
        return Err(CliError::NonConvergence(format!(
            "density solve left {} unconverged grid points (first at tau = {:.6})",
            curve.holes.len(),
            curve.tau_grid[curve.holes[0]]
        )));
    }
    Ok(curve)
}

fn build_support(
    cfg: &ExperimentConfig,
    profile: &VarianceProfile,
    curve: &DosCurve,
) -> Result<SupportStructure, CliError> {
    let s = cfg.support.clone().unwrap_or_default();
    let threshold = s
        .threshold
        .unwrap_or_else(|| dos::default_gap_threshold(curve.eta_used));
    let delta_star = s.delta_star.unwrap_or(dos::DEFAULT_DELTA_STAR);
    let mut support = dos::detect_support_with(curve, threshold, delta_star)?;
    if s.refine {
        let refine_cfg = EdgeRefineConfig {
            solver: cfg.solver.to_config(),
            ..EdgeRefineConfig::default()
        };
        support = dos::refine_support(profile, curve, &support, &refine_cfg)?;
    }
    Ok(support)
}

/// Draw the sample ensemble. Per-sample seeds are `seed ^ index`, so the
/// result is independent of worker count and scheduling.
fn ensemble(
    profile: &VarianceProfile,
    run: &RunSection,
    seed: u64,
    count: usize,
) -> Result<Vec<MatrixSample>, CliError> {
    if count == 0 {
        return Err(CliError::Config("sample count must be positive".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|k| sampler::sample(profile, run.class, run.distribution, seed ^ k as u64))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

fn spectra_of(samples: &[MatrixSample]) -> Result<Vec<Vec<f64>>, CliError> {
    samples
        .par_iter()
        .map(|s| s.eigenvalues().map(|v| v.to_vec()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

/// Invert the normalized distribution function of the curve by bisection.
fn quantile_taus(curve: &DosCurve, count: usize) -> Result<Vec<f64>, CliError> {
    let lo0 = curve.tau_grid[0];
    let hi0 = curve.tau_grid[curve.tau_grid.len() - 1];
    let mut out = Vec::with_capacity(count);
    for j in 1..=count {
        let target = j as f64 / (count + 1) as f64;
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if curve.normalized_cdf(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    Ok(out)
}

// ---------------------------------------------------------------- qve-solve

#[derive(Serialize)]
struct SolutionReport {
    schema: &'static str,
    n: usize,
    converged: bool,
    average_re: f64,
    average_im: f64,
    density: f64,
    #[serde(flatten)]
    record: SolutionRecord,
}

pub fn qve_solve(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.qve_solve, "qve-solve")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let solver_cfg = cfg.solver.to_config();
    match (sec.eta, sec.eta_max, sec.eta_min, sec.levels) {
        (Some(eta), None, None, None) => {
            let point = SpectralPoint { tau: sec.tau, eta };
            let sol = solver::solve_point(&profile, point, &solver_cfg, None)?;
            let avg = sol.average();
            let report = SolutionReport {
                schema: "qve-solution/1",
                n: profile.n(),
                converged: sol.converged,
                average_re: avg.re,
                average_im: avg.im,
                density: sol.density(),
                record: sol.export(),
            };
            let name = write_json(ctx.out_dir, "solution.json", &report)?;
            man.output(name);
            man.stage(
                "solve",
                "pass",
                format!(
                    "residual {:.3e} after {} iterations",
                    sol.residual, sol.iterations
                ),
            );
            Ok(Verdict::Pass)
        }
        (None, Some(eta_max), Some(eta_min), Some(levels)) => {
            let etas: Vec<f64> = geometric_grid(eta_min, eta_max, levels)?
                .into_iter()
                .rev()
                .collect();
            let sweep = solver::solve_sweep(&profile, sec.tau, &etas, &solver_cfg)?;
            let mut lines = String::new();
            for sol in &sweep.solutions {
                lines.push_str(&serde_json::to_string(&sol.export()).map_err(|e| {
                    CliError::Internal(format!("serialize sweep record: {e}"))
                })?);
                lines.push('\n');
            }
            std::fs::write(ctx.out_dir.join("sweep.jsonl"), lines)
                .map_err(|e| CliError::Internal(format!("write sweep.jsonl: {e}")))?;
            man.output("sweep.jsonl");
            if let Some(fail) = &sweep.failure {
                man.stage(
                    "sweep",
                    "fail",
                    format!(
                        "stalled at eta = {:.3e} with residual {:.3e}",
                        fail.eta, fail.residual
                    ),
                );
                return Err(CliError::NonConvergence(format!(
                    "eta ladder stalled at level {} (eta = {:.3e}, residual {:.3e})",
                    fail.index, fail.eta, fail.residual
                )));
            }
            man.stage(
                "sweep",
                "pass",
                format!("{} levels down to eta = {:.3e}", sweep.solutions.len(), eta_min),
            );
            Ok(Verdict::Pass)
        }
        _ => Err(CliError::Config(
            "give eta for a single point, or eta-max / eta-min / levels for a ladder".into(),
        )),
    }
}

// ---------------------------------------------------------------------- dos

#[derive(Serialize)]
struct DosReport<'a> {
    schema: &'static str,
    n: usize,
    eta: f64,
    extrapolate: bool,
    integral: f64,
    max_spacing: f64,
    curve: &'a DosCurve,
}

pub fn run_dos(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let d = require(&cfg.dos, "dos")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let integral = curve.integral()?;
    let report = DosReport {
        schema: "dos-report/1",
        n: profile.n(),
        eta: d.eta,
        extrapolate: d.extrapolate,
        integral,
        max_spacing: curve.max_spacing(),
        curve: &curve,
    };
    man.output(write_json(ctx.out_dir, "dos.json", &report)?);
    let rows: Vec<(f64, f64)> = curve
        .tau_grid
        .iter()
        .zip(&curve.rho)
        .map(|(&t, &r)| (t, r))
        .collect();
    man.output(emit_figure_data(
        ctx.out_dir,
        FigureKind::DosCurve,
        &FigureData::DosCurve(rows),
    )?);
    man.stage(
        "density",
        "pass",
        format!("{} grid points, integral {integral:.6}", curve.len()),
    );

    // The mass check only means something when the grid covers the whole
    // spectrum, which the rescaled profiles confine to [-2, 2].
    let covering = d.tau_min <= -2.001 && d.tau_max >= 2.001;
    if covering {
        let slack = 3.0 * (curve.max_spacing() + curve.eta_used);
        let defect = (integral - 1.0).abs();
        let ok = defect <= slack;
        man.stage(
            "normalization",
            if ok { "pass" } else { "fail" },
            format!("|integral - 1| = {defect:.3e}, slack {slack:.3e}"),
        );
        if !ok && ctx.strict {
            return Ok(Verdict::CheckFailed);
        }
    } else {
        man.stage("normalization", "skip", "grid does not cover [-2.001, 2.001]");
    }
    Ok(Verdict::Pass)
}

// ------------------------------------------------------------------ support

#[derive(Serialize)]
struct SupportReport<'a> {
    schema: &'static str,
    n: usize,
    threshold: f64,
    refined: bool,
    support: &'a SupportStructure,
}

pub fn run_support(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let s = cfg.support.clone().unwrap_or_default();
    let threshold = s
        .threshold
        .unwrap_or_else(|| dos::default_gap_threshold(curve.eta_used));
    let support = build_support(cfg, &profile, &curve)?;
    let report = SupportReport {
        schema: "support-report/1",
        n: profile.n(),
        threshold,
        refined: s.refine,
        support: &support,
    };
    man.output(write_json(ctx.out_dir, "support.json", &report)?);
    man.stage(
        "support",
        "pass",
        format!(
            "{} interval(s), {} gap(s), {} minima",
            support.intervals.len(),
            support.gaps().len(),
            support.minima.len()
        ),
    );
    if !support.warnings.is_empty() {
        man.stage("warnings", "fail", support.warnings.join("; "));
        if ctx.strict {
            return Ok(Verdict::CheckFailed);
        }
    }
    Ok(Verdict::Pass)
}

// -------------------------------------------------------- verify-local-law

#[derive(Serialize)]
struct LocalLawTauRow {
    tau: f64,
    eta: f64,
    density: f64,
    bound_entry: f64,
    bound_average: f64,
    max_entry_err: f64,
    max_average_err: f64,
    entry_check: DominationCheck,
    average_check: DominationCheck,
}

#[derive(Serialize)]
struct LocalLawReport {
    schema: &'static str,
    n: usize,
    samples: usize,
    c: f64,
    alpha: f64,
    rows: Vec<LocalLawTauRow>,
    pooled_entry: DominationCheck,
    pooled_average: DominationCheck,
    pass: bool,
}

pub fn verify_local_law(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.local_law, "local-law")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let solver_cfg = cfg.solver.to_config();
    let n = profile.n();
    let nf = n as f64;
    let run = &cfg.run;
    let samples = ensemble(&profile, run, ctx.seed, run.samples)?;
    man.stage("sampling", "pass", format!("{} samples at n = {n}", samples.len()));

    let ones = vec![1.0; n];
    let mut rows = Vec::with_capacity(sec.taus.len());
    let mut all_entry = Vec::new();
    let mut all_average = Vec::new();
    for &tau in &sec.taus {
        let point = SpectralPoint { tau, eta: sec.eta };
        let m = solver::solve_point(&profile, point, &solver_cfg, None)?;
        let bound_entry = 1.0 / (nf * sec.eta).sqrt();
        let bound_average = 1.0 / (nf * sec.eta);
        let data: Vec<(f64, f64)> = samples
            .par_iter()
            .map(|s| {
                verify::resolvent(s, point, &m, std::slice::from_ref(&ones))
                    .map(|r| (r.err_d, r.avg_err[0]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let entry_ratios: Vec<f64> = data.iter().map(|(e, _)| e / bound_entry).collect();
        let avg_ratios: Vec<f64> = data.iter().map(|(_, a)| a / bound_average).collect();
        all_entry.extend_from_slice(&entry_ratios);
        all_average.extend_from_slice(&avg_ratios);
        rows.push(LocalLawTauRow {
            tau,
            eta: sec.eta,
            density: m.density(),
            bound_entry,
            bound_average,
            max_entry_err: data.iter().map(|(e, _)| *e).fold(0.0, f64::max),
            max_average_err: data.iter().map(|(_, a)| *a).fold(0.0, f64::max),
            entry_check: verify::domination(&entry_ratios, run.c, run.alpha),
            average_check: verify::domination(&avg_ratios, run.c, run.alpha),
        });
    }
    let pooled_entry = verify::domination(&all_entry, run.c, run.alpha);
    let pooled_average = verify::domination(&all_average, run.c, run.alpha);
    let pass = pooled_entry.pass && pooled_average.pass;
    let report = LocalLawReport {
        schema: "local-law-report/1",
        n,
        samples: samples.len(),
        c: run.c,
        alpha: run.alpha,
        rows,
        pooled_entry,
        pooled_average,
        pass,
    };
    man.output(write_json(ctx.out_dir, "local_law.json", &report)?);
    man.stage(
        "local-law",
        if pass { "pass" } else { "fail" },
        format!(
            "entry worst ratio {:.3}, average worst ratio {:.3}",
            report.pooled_entry.worst_ratio, report.pooled_average.worst_ratio
        ),
    );

    if let Some(scan) = &sec.scan {
        let etas: Vec<f64> = geometric_grid(scan.eta_min, scan.eta_max, scan.points)?
            .into_iter()
            .rev()
            .collect();
        let sweep = solver::solve_sweep(&profile, scan.tau, &etas, &solver_cfg)?;
        if let Some(fail) = &sweep.failure {
            return Err(CliError::NonConvergence(format!(
                "scan ladder stalled at eta = {:.3e} (residual {:.3e})",
                fail.eta, fail.residual
            )));
        }
        let mut scan_rows = Vec::with_capacity(sweep.solutions.len());
        for sol in &sweep.solutions {
            let point = sol.point;
            let mean_err: f64 = samples
                .par_iter()
                .map(|s| verify::resolvent(s, point, sol, &[]).map(|r| r.err_d))
                .collect::<Result<Vec<_>, _>>()?
                .iter()
                .sum::<f64>()
                / samples.len() as f64;
            scan_rows.push((point.eta, mean_err, run.c / (nf * point.eta).sqrt()));
        }
        scan_rows.reverse();
        man.output(emit_figure_data(
            ctx.out_dir,
            FigureKind::LocalLawScan,
            &FigureData::LocalLawScan(scan_rows),
        )?);
        man.stage("scan", "pass", format!("{} eta levels at tau = {}", etas.len(), scan.tau));
    }
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}

// ----------------------------------------------------------------- rigidity

#[derive(Serialize)]
struct RigidityCliReport<'a> {
    schema: &'static str,
    n: usize,
    samples: usize,
    gamma: f64,
    c: f64,
    min_pass_fraction: f64,
    location_pass_fraction: f64,
    edge_pass_fraction: f64,
    gap_regions_checked: usize,
    gap_regions_with_eigenvalues: usize,
    pass: bool,
    report: &'a verify::RigidityReport,
}

pub fn run_rigidity(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.rigidity, "rigidity")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let support = build_support(cfg, &profile, &curve)?;
    let run = &cfg.run;
    let samples = ensemble(&profile, run, ctx.seed, run.samples)?;
    let spectra = spectra_of(&samples)?;
    man.stage(
        "sampling",
        "pass",
        format!("{} spectra at n = {}", spectra.len(), profile.n()),
    );

    let taus = match (&sec.taus, sec.quantiles) {
        (Some(t), _) => t.clone(),
        (None, Some(k)) => quantile_taus(&curve, k)?,
        (None, None) => quantile_taus(&curve, 9)?,
    };
    let report = verify::rigidity_check(&spectra, &curve, &support, &taus, sec.gamma, run.c)?;
    for (tau, why) in &report.skipped {
        man.stage("skip", "skip", format!("tau = {tau:.4}: {why}"));
    }

    let frac = |pass_count: usize, total: usize| {
        if total == 0 {
            1.0
        } else {
            pass_count as f64 / total as f64
        }
    };
    let location_pass_fraction = frac(
        report.rows.iter().filter(|r| r.pass).count(),
        report.rows.len(),
    );
    let edge_pass_fraction = frac(
        report.edge_rows.iter().filter(|r| r.pass).count(),
        report.edge_rows.len(),
    );
    let occupied = report.gap_rows.iter().filter(|g| g.count > 0).count();
    let gaps_ok = !sec.gap_check || occupied == 0;
    let pass = location_pass_fraction >= sec.min_pass_fraction
        && edge_pass_fraction >= sec.min_pass_fraction
        && gaps_ok
        && !report.rows.is_empty();

    let cli_report = RigidityCliReport {
        schema: "rigidity-report/1",
        n: profile.n(),
        samples: spectra.len(),
        gamma: sec.gamma,
        c: run.c,
        min_pass_fraction: sec.min_pass_fraction,
        location_pass_fraction,
        edge_pass_fraction,
        gap_regions_checked: report.gap_rows.len(),
        gap_regions_with_eigenvalues: occupied,
        pass,
        report: &report,
    };
    man.output(write_json(ctx.out_dir, "rigidity.json", &cli_report)?);
    let scatter: Vec<(f64, f64, f64, f64)> = report
        .rows
        .iter()
        .map(|r| (r.tau, r.lambda_observed, r.deviation, r.bound))
        .collect();
    man.output(emit_figure_data(
        ctx.out_dir,
        FigureKind::RigidityScatter,
        &FigureData::RigidityScatter(scatter),
    )?);
    man.stage(
        "rigidity",
        if pass { "pass" } else { "fail" },
        format!(
            "locations {:.1}%, edges {:.1}%, occupied gap regions {occupied}",
            100.0 * location_pass_fraction,
            100.0 * edge_pass_fraction
        ),
    );
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}

// ----------------------------------------------------------- delocalization

#[derive(Serialize)]
struct DelocalizationCliReport<'a> {
    schema: &'static str,
    n: usize,
    samples: usize,
    probes: usize,
    c: f64,
    max_exceed_fraction: f64,
    pass: bool,
    report: &'a verify::DelocalizationReport,
}

pub fn run_delocalization(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.delocalization, "delocalization")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let run = &cfg.run;
    let samples = ensemble(&profile, run, ctx.seed, run.samples)?;
    let probes = verify::random_unit_vectors(profile.n(), sec.probes, ctx.seed ^ 0x70b5);
    let report = verify::delocalization_check(&samples, &probes, sec.c)?;
    let pass = report.exceed_fraction <= sec.max_exceed_fraction;
    let cli_report = DelocalizationCliReport {
        schema: "delocalization-report/1",
        n: profile.n(),
        samples: samples.len(),
        probes: sec.probes,
        c: sec.c,
        max_exceed_fraction: sec.max_exceed_fraction,
        pass,
        report: &report,
    };
    man.output(write_json(ctx.out_dir, "delocalization.json", &cli_report)?);
    man.stage(
        "delocalization",
        if pass { "pass" } else { "fail" },
        format!(
            "exceed fraction {:.4} against threshold {:.3}",
            report.exceed_fraction, report.threshold
        ),
    );
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}

// -------------------------------------------------------------- anisotropic

#[derive(Serialize)]
struct AnisotropicCliReport<'a> {
    schema: &'static str,
    n: usize,
    samples: usize,
    tau: f64,
    eta: f64,
    pairs: usize,
    kappa: KappaEvaluation,
    c: f64,
    alpha: f64,
    pass: bool,
    report: &'a verify::AnisotropicReport,
}

pub fn run_anisotropic(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.anisotropic, "anisotropic")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let support = build_support(cfg, &profile, &curve)?;
    let run = &cfg.run;
    let n = profile.n();
    let point = SpectralPoint { tau: sec.tau, eta: sec.eta };
    let m = solver::solve_point(&profile, point, &cfg.solver.to_config(), None)?;
    let kappa = dos::kappa(&support, &curve, point, n, sec.gamma)?;
    let samples = ensemble(&profile, run, ctx.seed, run.samples)?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..sec.pairs)
        .map(|k| verify::random_orthogonal_pair(n, ctx.seed ^ (0x7a19_0000 + k as u64)))
        .collect();
    let report = verify::anisotropic_check(&samples, &m, &pairs, kappa.value, run.c, run.alpha)?;
    let pass = report.check.pass;
    let cli_report = AnisotropicCliReport {
        schema: "anisotropic-report/1",
        n,
        samples: samples.len(),
        tau: sec.tau,
        eta: sec.eta,
        pairs: sec.pairs,
        kappa,
        c: run.c,
        alpha: run.alpha,
        pass,
        report: &report,
    };
    man.output(write_json(ctx.out_dir, "anisotropic.json", &cli_report)?);
    man.stage(
        "anisotropic",
        if pass { "pass" } else { "fail" },
        format!(
            "worst ratio {:.3} over {} trials, bound {:.3e}",
            report.check.worst_ratio,
            report.trials.len(),
            report.bound
        ),
    );
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}

// ------------------------------------------------------------- universality

#[derive(Serialize)]
struct BumpRow {
    center: f64,
    width: f64,
    mean_model: f64,
    mean_reference: f64,
    se_pooled: f64,
    deviations: f64,
    within: bool,
}

#[derive(Serialize)]
struct UniversalityReport {
    schema: &'static str,
    n: usize,
    model_samples: usize,
    reference_samples: usize,
    window: [f64; 2],
    min_density: f64,
    model_gaps: usize,
    reference_gaps: usize,
    model_mean: f64,
    reference_mean: f64,
    ks: f64,
    ks_max: f64,
    ks_pass: bool,
    bump_se_limit: f64,
    bumps: Vec<BumpRow>,
    bumps_pass: bool,
    pass: bool,
}

fn cdf_rows(model: &[f64], reference: &[f64], points: usize) -> Vec<(f64, f64, f64)> {
    let mut m = model.to_vec();
    let mut r = reference.to_vec();
    m.sort_by(f64::total_cmp);
    r.sort_by(f64::total_cmp);
    let q999 = |v: &[f64]| v[((v.len() - 1) as f64 * 0.999) as usize];
    let hi = q999(&m).max(q999(&r)).max(1e-12);
    (0..=points)
        .map(|k| {
            let g = hi * k as f64 / points as f64;
            let cm = m.partition_point(|x| *x <= g) as f64 / m.len() as f64;
            let cr = r.partition_point(|x| *x <= g) as f64 / r.len() as f64;
            (g, cm, cr)
        })
        .collect()
}

pub fn run_universality(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.universality, "universality")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let run = &cfg.run;
    let n = profile.n();
    let window = (sec.window[0], sec.window[1]);

    let samples = ensemble(&profile, run, ctx.seed, run.samples)?;
    let spectra = spectra_of(&samples)?;
    let model = verify::gap_statistics(&spectra, |t| curve.value_at(t), window, sec.min_density)?;
    man.stage(
        "model-pool",
        "pass",
        format!("{} gaps from {} spectra", model.gaps.len(), spectra.len()),
    );

    let ref_count = sec.reference_samples.unwrap_or(run.samples);
    let ref_spectra: Vec<Vec<f64>> = (0..ref_count)
        .into_par_iter()
        .map(|k| {
            sampler::gaussian_reference_eigenvalues(n, run.class, ctx.seed ^ 0xda7a_0000 ^ k as u64)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reference = verify::gap_statistics(
        &ref_spectra,
        verify::semicircle_density,
        window,
        sec.min_density,
    )?;
    man.stage(
        "reference-pool",
        "pass",
        format!("{} gaps from {} spectra", reference.gaps.len(), ref_spectra.len()),
    );

    let ks = verify::ks_distance(&model.gaps, &reference.gaps)?;
    let ks_pass = ks <= sec.ks_max;
    let mut bumps = Vec::with_capacity(sec.bumps.len());
    let mut bumps_pass = true;
    for bw in &sec.bumps {
        let bump = verify::BumpObservable::new(bw[0], bw[1])?;
        let cmp = bump.compare(&model.gaps, &reference.gaps)?;
        let within = cmp.within(sec.bump_se_limit);
        bumps_pass &= within;
        bumps.push(BumpRow {
            center: cmp.center,
            width: cmp.width,
            mean_model: cmp.mean_a,
            mean_reference: cmp.mean_b,
            se_pooled: cmp.se_pooled,
            deviations: (cmp.mean_a - cmp.mean_b).abs() / cmp.se_pooled,
            within,
        });
    }
    let pass = ks_pass && bumps_pass;
    let report = UniversalityReport {
        schema: "universality-report/1",
        n,
        model_samples: spectra.len(),
        reference_samples: ref_spectra.len(),
        window: sec.window,
        min_density: sec.min_density,
        model_gaps: model.gaps.len(),
        reference_gaps: reference.gaps.len(),
        model_mean: model.mean,
        reference_mean: reference.mean,
        ks,
        ks_max: sec.ks_max,
        ks_pass,
        bump_se_limit: sec.bump_se_limit,
        bumps,
        bumps_pass,
        pass,
    };
    man.output(write_json(ctx.out_dir, "universality.json", &report)?);
    man.output(emit_figure_data(
        ctx.out_dir,
        FigureKind::GapCdf,
        &FigureData::GapCdf(cdf_rows(&model.gaps, &reference.gaps, 256)),
    )?);
    man.stage(
        "universality",
        if pass { "pass" } else { "fail" },
        format!("KS = {ks:.4} (limit {}), {} bump observables", sec.ks_max, report.bumps.len()),
    );
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}

// ----------------------------------------------------------------- envelope

#[derive(Serialize)]
struct EnvelopeAnchorRow {
    tau0: f64,
    kind: MinimumKind,
    delta_gap: f64,
    positive: bool,
    monotone: bool,
    violations: usize,
    min_value: f64,
    max_value: f64,
}

#[derive(Serialize)]
struct EnvelopeReport {
    schema: &'static str,
    n: usize,
    gamma: f64,
    eps_tilde: f64,
    eta_min: f64,
    eta_max: f64,
    eta_points: usize,
    omega_points: usize,
    anchors: Vec<EnvelopeAnchorRow>,
    pass: bool,
}

pub fn run_envelope(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.envelope, "envelope")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let support = build_support(cfg, &profile, &curve)?;
    let eps_tilde = sec
        .eps_tilde
        .unwrap_or_else(|| envelope::default_eps_tilde(sec.gamma));
    let anchors: Vec<f64> = match &sec.anchors {
        Some(a) => a.clone(),
        None => support.minima.iter().map(|m| m.tau).collect(),
    };
    if anchors.is_empty() {
        return Err(CliError::Config("no envelope anchors available".into()));
    }
    let etas = geometric_grid(sec.eta_min, sec.eta_max, sec.eta_points)?;

    let mut csv = String::from("tau0,omega,eta,value\n");
    let mut rows = Vec::with_capacity(anchors.len());
    let mut pass = true;
    for &tau0 in &anchors {
        let env = envelope::error_envelope(&support, &curve, tau0, profile.n(), sec.gamma, eps_tilde)?;
        // Keep safely inside the validity region in omega.
        let (lo, hi) = match env.kind {
            MinimumKind::InternalMinimum => (-0.9 * env.delta_star, 0.9 * env.delta_star),
            _ => (-0.9 * env.delta_star, 0.45 * env.delta_gap),
        };
        let omegas: Vec<f64> = (0..sec.omega_points)
            .map(|k| lo + (hi - lo) * k as f64 / (sec.omega_points - 1).max(1) as f64)
            .collect();
        let mut violations = 0usize;
        let mut positive = true;
        let (mut min_v, mut max_v) = (f64::INFINITY, 0.0f64);
        for &omega in &omegas {
            let mut prev = f64::INFINITY;
            for &eta in &etas {
                let value = env.evaluate(omega, eta)?;
                positive &= value > 0.0;
                min_v = min_v.min(value);
                max_v = max_v.max(value);
                if value > prev * (1.0 + 1e-9) {
                    violations += 1;
                }
                prev = value;
                csv.push_str(&format!("{},{omega},{eta},{value}\n", env.tau0));
            }
        }
        let monotone = violations == 0;
        pass &= monotone && positive;
        rows.push(EnvelopeAnchorRow {
            tau0: env.tau0,
            kind: env.kind,
            delta_gap: env.delta_gap,
            positive,
            monotone,
            violations,
            min_value: min_v,
            max_value: max_v,
        });
    }
    std::fs::write(ctx.out_dir.join("envelope.csv"), csv)
        .map_err(|e| CliError::Internal(format!("write envelope.csv: {e}")))?;
    man.output("envelope.csv");
    let report = EnvelopeReport {
        schema: "envelope-report/1",
        n: profile.n(),
        gamma: sec.gamma,
        eps_tilde,
        eta_min: sec.eta_min,
        eta_max: sec.eta_max,
        eta_points: sec.eta_points,
        omega_points: sec.omega_points,
        anchors: rows,
        pass,
    };
    man.output(write_json(ctx.out_dir, "envelope.json", &report)?);
    man.stage(
        "envelope",
        if pass { "pass" } else { "fail" },
        format!("{} anchors, eta grid {} points", anchors.len(), sec.eta_points),
    );
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}

// --------------------------------------------------------- measure-distance

#[derive(Serialize)]
struct MeasureRow {
    sample_index: usize,
    ratio: f64,
    pass: bool,
    distance: MeasureDistance,
}

#[derive(Serialize)]
struct MeasureReport {
    schema: &'static str,
    n: usize,
    trials: usize,
    c: f64,
    window: [f64; 2],
    eta1: f64,
    eta2: f64,
    epsilon: f64,
    pass: bool,
    rows: Vec<MeasureRow>,
}

pub fn run_measure_distance(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    man: &mut RunManifest,
) -> Result<Verdict, CliError> {
    let sec = require(&cfg.measure_distance, "measure-distance")?;
    let profile = cfg.profile.build(ctx.config_dir)?;
    let curve = build_curve(cfg, &profile)?;
    let run = &cfg.run;
    let trials = sec.trials.unwrap_or(run.samples);
    let samples = ensemble(&profile, run, ctx.seed, trials)?;
    let spectra = spectra_of(&samples)?;
    man.stage("sampling", "pass", format!("{} spectra", spectra.len()));

    let window = (sec.window[0], sec.window[1]);
    let distances: Vec<MeasureDistance> = spectra
        .into_par_iter()
        .map(|spectrum| {
            let atoms = verify::AtomicMeasure::new(spectrum)?;
            verify::stieltjes_measure_distance(
                &curve as &dyn SpectralMeasure,
                &atoms,
                window,
                sec.eta1,
                sec.eta2,
                sec.epsilon,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::with_capacity(distances.len());
    let mut pass = true;
    for (k, d) in distances.into_iter().enumerate() {
        let trial_pass = d.lhs <= run.c * d.bracket;
        pass &= trial_pass;
        rows.push(MeasureRow {
            sample_index: k,
            ratio: d.ratio(),
            pass: trial_pass,
            distance: d,
        });
    }
    let report = MeasureReport {
        schema: "measure-distance-report/1",
        n: profile.n(),
        trials,
        c: run.c,
        window: sec.window,
        eta1: sec.eta1,
        eta2: sec.eta2,
        epsilon: sec.epsilon,
        pass,
        rows,
    };
    man.output(write_json(ctx.out_dir, "measure_distance.json", &report)?);
    let worst = report
        .rows
        .iter()
        .map(|r| r.ratio)
        .fold(0.0f64, f64::max);
    man.stage(
        "measure-distance",
        if pass { "pass" } else { "fail" },
        format!("worst lhs/bracket ratio {worst:.3} over {trials} trials"),
    );
    Ok(if pass { Verdict::Pass } else { Verdict::CheckFailed })
}
