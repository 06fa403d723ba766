//! Experiment config schema: a TOML file with a versioned `schema` key, a
//! `[profile]` section, optional `[solver]`/`[run]`/`[dos]`/`[support]`
//! sections shared across commands, and one section per subcommand.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use qvelab::sampler::{EntryDistribution, SymmetryClass};
use qvelab::{KernelSpec, ProfileParams, SolverConfig, VarianceProfile};

use crate::CliError;

pub const SCHEMA: &str = "experiment/1";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub schema: String,
    pub profile: ProfileSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub run: RunSection,
    pub dos: Option<DosSection>,
    pub support: Option<SupportSection>,
    pub qve_solve: Option<QveSolveSection>,
    pub local_law: Option<LocalLawSection>,
    pub rigidity: Option<RigiditySection>,
    pub delocalization: Option<DelocalizationSection>,
    pub anisotropic: Option<AnisotropicSection>,
    pub universality: Option<UniversalitySection>,
    pub envelope: Option<EnvelopeSection>,
    pub measure_distance: Option<MeasureDistanceSection>,
}

pub fn load(path: &Path) -> Result<(ExperimentConfig, String), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
    if cfg.schema != SCHEMA {
        return Err(CliError::Config(format!(
            "unknown schema '{}', expected '{SCHEMA}'",
            cfg.schema
        )));
    }
    Ok((cfg, text))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProfileSection {
    pub kind: String,
    pub n: Option<usize>,
    pub sizes: Option<Vec<usize>>,
    pub values: Option<Vec<Vec<f64>>>,
    pub kernel: Option<KernelSpec>,
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub params: ParamsSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub p: f64,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "P")]
    pub solution_bound: f64,
    pub q: f64,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let d = ProfileParams::default();
        ParamsSection {
            p: d.p,
            l: d.l,
            solution_bound: d.solution_bound,
            q: d.q,
        }
    }
}

impl ParamsSection {
    fn to_params(&self) -> ProfileParams {
        ProfileParams {
            p: self.p,
            l: self.l,
            solution_bound: self.solution_bound,
            q: self.q,
        }
    }
}

impl ProfileSection {
    /// Build the variance profile; relative `path` entries resolve against
    /// the config file's directory.
    pub fn build(&self, config_dir: &Path) -> Result<VarianceProfile, CliError> {
        let params = self.params.to_params();
        let need_n = || {
            self.n
                .ok_or_else(|| CliError::Config("profile needs `n`".into()))
        };
        let profile = match self.kind.as_str() {
            "stochastic-constant" => VarianceProfile::stochastic_constant_with(need_n()?, params),
            "block-constant" => {
                let sizes = self
                    .sizes
                    .clone()
                    .ok_or_else(|| CliError::Config("block-constant needs `sizes`".into()))?;
                let rows = self
                    .values
                    .clone()
                    .ok_or_else(|| CliError::Config("block-constant needs `values`".into()))?;
                let k = rows.len();
                let mut mat = ndarray::Array2::<f64>::zeros((k, k));
                for (a, row) in rows.iter().enumerate() {
                    if row.len() != k {
                        return Err(CliError::Config("`values` must be square".into()));
                    }
                    for (b, v) in row.iter().enumerate() {
                        mat[[a, b]] = *v;
                    }
                }
                VarianceProfile::block_constant_with(&sizes, &mat, params)
            }
            "kernel-discretized" => {
                let spec = self
                    .kernel
                    .clone()
                    .ok_or_else(|| CliError::Config("kernel-discretized needs `kernel`".into()))?;
                VarianceProfile::kernel_with(need_n()?, &spec, params)
            }
            "custom-file" => {
                let rel = self
                    .path
                    .clone()
                    .ok_or_else(|| CliError::Config("custom-file needs `path`".into()))?;
                let full = if rel.is_absolute() {
                    rel
                } else {
                    config_dir.join(rel)
                };
                let text = std::fs::read_to_string(&full).map_err(|e| {
                    CliError::Config(format!("cannot read profile {}: {e}", full.display()))
                })?;
                VarianceProfile::from_json(&text)
            }
            other => {
                return Err(CliError::Config(format!("unknown profile kind '{other}'")));
            }
        };
        profile.map_err(|e| CliError::Config(format!("profile: {e}")))
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub newton_fallback: bool,
    pub stall_window: usize,
    pub stall_factor: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            tol: d.tol,
            max_iterations: d.max_iterations,
            damping: d.damping,
            newton_fallback: d.newton_fallback,
            stall_window: d.stall_window,
            stall_factor: d.stall_factor,
        }
    }
}

impl SolverSection {
    pub fn to_config(self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iterations: self.max_iterations,
            damping: self.damping,
            newton_fallback: self.newton_fallback,
            stall_window: self.stall_window,
            stall_factor: self.stall_factor,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct RunSection {
    pub seed: u64,
    pub samples: usize,
    pub workers: usize,
    pub class: SymmetryClass,
    pub distribution: EntryDistribution,
    /// Domination constant for "observed <= c * bound" checks.
    pub c: f64,
    /// Allowed failing fraction in domination checks.
    pub alpha: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            samples: 10,
            workers: 0,
            class: SymmetryClass::RealSymmetric,
            distribution: EntryDistribution::Gaussian,
            c: qvelab::verify::DEFAULT_DOMINATION_C,
            alpha: qvelab::verify::DEFAULT_DOMINATION_ALPHA,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DosSection {
    pub tau_min: f64,
    pub tau_max: f64,
    pub points: usize,
    pub eta: f64,
    #[serde(default)]
    pub extrapolate: bool,
}

#[derive(Clone, Copy, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct SupportSection {
    pub threshold: Option<f64>,
    pub delta_star: Option<f64>,
    pub refine: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct QveSolveSection {
    pub tau: f64,
    pub eta: Option<f64>,
    pub eta_max: Option<f64>,
    pub eta_min: Option<f64>,
    pub levels: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LocalLawSection {
    pub taus: Vec<f64>,
    pub eta: f64,
    pub scan: Option<ScanSection>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ScanSection {
    pub tau: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RigiditySection {
    pub taus: Option<Vec<f64>>,
    pub quantiles: Option<usize>,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_fraction")]
    pub min_pass_fraction: f64,
    #[serde(default)]
    pub gap_check: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DelocalizationSection {
    #[serde(default = "d_probes")]
    pub probes: usize,
    #[serde(default = "d_deloc_c")]
    pub c: f64,
    #[serde(default = "d_exceed")]
    pub max_exceed_fraction: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnisotropicSection {
    pub tau: f64,
    pub eta: f64,
    #[serde(default = "d_probes")]
    pub pairs: usize,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct UniversalitySection {
    pub window: [f64; 2],
    #[serde(default = "d_min_density")]
    pub min_density: f64,
    pub reference_samples: Option<usize>,
    #[serde(default = "d_ks_max")]
    pub ks_max: f64,
    #[serde(default = "d_bumps")]
    pub bumps: Vec<[f64; 2]>,
    #[serde(default = "d_bump_se")]
    pub bump_se_limit: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnvelopeSection {
    #[serde(default = "d_env_gamma")]
    pub gamma: f64,
    pub eps_tilde: Option<f64>,
    pub anchors: Option<Vec<f64>>,
    #[serde(default = "d_omega_points")]
    pub omega_points: usize,
    #[serde(default = "d_eta_min")]
    pub eta_min: f64,
    #[serde(default = "d_eta_max")]
    pub eta_max: f64,
    #[serde(default = "d_eta_points")]
    pub eta_points: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MeasureDistanceSection {
    pub window: [f64; 2],
    pub eta1: f64,
    pub eta2: f64,
    pub epsilon: f64,
    pub trials: Option<usize>,
}

fn d_gamma() -> f64 {
    0.1
}
fn d_fraction() -> f64 {
    0.9
}
fn d_probes() -> usize {
    4
}
fn d_deloc_c() -> f64 {
    3.0
}
fn d_exceed() -> f64 {
    0.01
}
fn d_min_density() -> f64 {
    1e-3
}
fn d_ks_max() -> f64 {
    0.05
}
fn d_bumps() -> Vec<[f64; 2]> {
    vec![[0.5, 0.5], [1.0, 0.5], [2.0, 0.5]]
}
fn d_bump_se() -> f64 {
    3.0
}
fn d_env_gamma() -> f64 {
    0.2
}
fn d_omega_points() -> usize {
    25
}
fn d_eta_min() -> f64 {
    1e-5
}
fn d_eta_max() -> f64 {
    1e-1
}
fn d_eta_points() -> usize {
    100
}
