//! Variance profiles for Wigner-type random matrices: construction of the
//! matrix `S` of entry variances `s_ij = E|h_ij|^2`, structural validation,
//! and the assumption checks (flatness, primitivity, q-fullness) that the
//! solver and samplers rely on.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg;

/// Upper limit for the primitivity exponent; powers beyond this are a sign
/// of a mis-specified profile rather than a legitimate connectivity depth.
pub const MAX_PRIMITIVITY_EXPONENT: usize = 8;

/// Tolerance for the flatness check `n * max s_ij <= 1`; generated kinds are
/// exact by construction, custom matrices get this much slack.
pub const FLATNESS_SLACK: f64 = 1e-12;

/// Named symmetric kernels for discretized profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "kebab-case")]
pub enum KernelSpec {
    /// `f(x, y) = offset + slope * x * y`
    Bilinear { offset: f64, slope: f64 },
    /// `f(x, y) = exp(-((x - y) / width)^2)`
    GaussianBand { width: f64 },
    /// `f(x, y) = baseline + amplitude * x * y * (1 - x) * (1 - y)`
    BulkBump { baseline: f64, amplitude: f64 },
}

impl KernelSpec {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            KernelSpec::Bilinear { offset, slope } => offset + slope * x * y,
            KernelSpec::GaussianBand { width } => (-((x - y) / width).powi(2)).exp(),
            KernelSpec::BulkBump {
                baseline,
                amplitude,
            } => baseline + amplitude * x * y * (1.0 - x) * (1.0 - y),
        }
    }
}

/// How a profile was constructed; kept for serialization and reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum ProfileKind {
    StochasticConstant,
    BlockConstant {
        sizes: Vec<usize>,
        values: Vec<Vec<f64>>,
    },
    KernelDiscretized(KernelSpec),
    CustomMatrix,
}

/// Assumption parameters attached to a profile: the primitivity floor `p`
/// and exponent `L`, the solution bound `P`, and the fullness floor `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    /// Primitivity floor: every entry of `n * S^L` must reach this.
    pub p: f64,
    /// Power of `S` at which primitivity is required.
    #[serde(rename = "L")]
    pub l: usize,
    /// A priori bound on `max_i |m_i(z)|` for admissible spectral parameters.
    #[serde(rename = "P")]
    pub solution_bound: f64,
    /// Fullness floor: every entry of `n * S` must reach this (0 disables).
    pub q: f64,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            p: 0.1,
            l: 1,
            solution_bound: 10.0,
            q: 0.0,
        }
    }
}

/// A variance profile: symmetric nonnegative `n x n` matrix of entry
/// variances, at most `1/n` each for generated kinds, plus the assumption
/// parameters used by `check_assumptions`.
#[derive(Clone, Debug)]
pub struct VarianceProfile {
    n: usize,
    s: Array2<f64>,
    kind: ProfileKind,
    params: ProfileParams,
    /// Multiplier applied to the raw kernel/block values so the largest
    /// entry is exactly `1/n`; 1.0 when no rescaling happened.
    rescale_factor: f64,
}

impl VarianceProfile {
    /// Constant profile `s_ij = 1/n` (row sums exactly 1).
    pub fn stochastic_constant(n: usize) -> Result<Self> {
        Self::stochastic_constant_with(n, ProfileParams::default())
    }

    pub fn stochastic_constant_with(n: usize, params: ProfileParams) -> Result<Self> {
        ensure_size(n)?;
        validate_params(&params)?;
        let s = Array2::from_elem((n, n), 1.0 / n as f64);
        Ok(VarianceProfile {
            n,
            s,
            kind: ProfileKind::StochasticConstant,
            params,
            rescale_factor: 1.0,
        })
    }

    /// Block-constant profile: `values[a][b] / n` on the `(a, b)` block.
    /// `values` must be symmetric and nonnegative; if its largest entry
    /// exceeds 1 the whole matrix is scaled down so the profile stays flat,
    /// and the factor is recorded.
    pub fn block_constant(sizes: &[usize], values: &Array2<f64>) -> Result<Self> {
        Self::block_constant_with(sizes, values, ProfileParams::default())
    }

    pub fn block_constant_with(
        sizes: &[usize],
        values: &Array2<f64>,
        params: ProfileParams,
    ) -> Result<Self> {
        validate_params(&params)?;
        let k = sizes.len();
        if k == 0 || values.nrows() != k || values.ncols() != k {
            return Err(Error::Dimension(format!(
                "block structure: {} sizes vs {}x{} value matrix",
                k,
                values.nrows(),
                values.ncols()
            )));
        }
        if sizes.iter().any(|&b| b == 0) {
            return Err(Error::Invalid("empty block".into()));
        }
        let n: usize = sizes.iter().sum();
        ensure_size(n)?;
        validate_symmetric_nonnegative(&values.view())?;
        for a in 0..k {
            if (0..k).all(|b| values[[a, b]] == 0.0) {
                return Err(Error::Invalid(format!(
                    "block row {a} has zero variance against every block"
                )));
            }
        }
        let max_value = values.iter().cloned().fold(0.0, f64::max);
        let rescale_factor = if max_value > 1.0 { 1.0 / max_value } else { 1.0 };

        let mut block_of = Vec::with_capacity(n);
        for (a, &b) in sizes.iter().enumerate() {
            block_of.extend(std::iter::repeat(a).take(b));
        }
        let inv_n = 1.0 / n as f64;
        let s = Array2::from_shape_fn((n, n), |(i, j)| {
            values[[block_of[i], block_of[j]]] * rescale_factor * inv_n
        });
        Ok(VarianceProfile {
            n,
            s,
            kind: ProfileKind::BlockConstant {
                sizes: sizes.to_vec(),
                values: (0..k)
                    .map(|a| (0..k).map(|b| values[[a, b]]).collect())
                    .collect(),
            },
            params,
            rescale_factor,
        })
    }

    /// Discretization of a symmetric kernel on the grid `x_i = i/n`,
    /// `i = 1..n`, always rescaled so the largest entry is exactly `1/n`.
    pub fn kernel(n: usize, spec: &KernelSpec) -> Result<Self> {
        Self::kernel_with(n, spec, ProfileParams::default())
    }

    pub fn kernel_with(n: usize, spec: &KernelSpec, params: ProfileParams) -> Result<Self> {
        ensure_size(n)?;
        validate_params(&params)?;
        let mut raw = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let x = (i + 1) as f64 / n as f64;
            for j in 0..=i {
                let y = (j + 1) as f64 / n as f64;
                let forward = spec.eval(x, y);
                let backward = spec.eval(y, x);
                if (forward - backward).abs() > 1e-12 * (1.0 + forward.abs()) {
                    return Err(Error::Invalid(format!(
                        "kernel is not symmetric at ({x}, {y})"
                    )));
                }
                if forward < 0.0 {
                    return Err(Error::Invalid(format!(
                        "kernel is negative at ({x}, {y}): {forward}"
                    )));
                }
                raw[[i, j]] = forward;
                raw[[j, i]] = forward;
            }
        }
        let max_raw = raw.iter().cloned().fold(0.0, f64::max);
        if max_raw == 0.0 {
            return Err(Error::Invalid("kernel vanishes on the whole grid".into()));
        }
        let inv_n = 1.0 / n as f64;
        let s = raw.mapv(|v| (v / max_raw) * inv_n);
        for i in 0..n {
            if s.row(i).sum() == 0.0 {
                return Err(Error::Invalid(format!("kernel row {i} is identically zero")));
            }
        }
        Ok(VarianceProfile {
            n,
            s,
            kind: ProfileKind::KernelDiscretized(spec.clone()),
            params,
            rescale_factor: inv_n / max_raw,
        })
    }

    /// Wrap an explicit variance matrix. Symmetry and nonnegativity are
    /// enforced; flatness and zero rows are *reported* by
    /// [`check_assumptions`], not rejected, so that deliberately broken
    /// profiles can be inspected.
    pub fn custom(s: Array2<f64>, params: ProfileParams) -> Result<Self> {
        let n = s.nrows();
        ensure_size(n)?;
        if s.ncols() != n {
            return Err(Error::Dimension(format!(
                "variance matrix is {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        validate_params(&params)?;
        validate_symmetric_nonnegative(&s.view())?;
        Ok(VarianceProfile {
            n,
            s,
            kind: ProfileKind::CustomMatrix,
            params,
            rescale_factor: 1.0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> &Array2<f64> {
        &self.s
    }

    pub fn s_view(&self) -> ArrayView2<'_, f64> {
        self.s.view()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.s[[i, j]]
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn params(&self) -> ProfileParams {
        self.params
    }

    pub fn set_params(&mut self, params: ProfileParams) -> Result<()> {
        validate_params(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn rescale_factor(&self) -> f64 {
        self.rescale_factor
    }

    pub fn max_entry(&self) -> f64 {
        self.s.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.s.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// The common variance when every entry is bitwise identical, else None.
    /// Such a profile makes all components of the self-consistent equation
    /// coincide, which solvers exploit.
    pub fn uniform_entry(&self) -> Option<f64> {
        let first = *self.s.first()?;
        self.s
            .iter()
            .all(|&v| v == first)
            .then_some(first)
    }

    /// SHA-256 over the dimension, assumption parameters, and raw variance
    /// bytes; stable across runs and platforms with IEEE-754 doubles.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n as u64).to_le_bytes());
        hasher.update(self.params.p.to_le_bytes());
        hasher.update((self.params.l as u64).to_le_bytes());
        hasher.update(self.params.solution_bound.to_le_bytes());
        hasher.update(self.params.q.to_le_bytes());
        for v in self.s.iter() {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Structural assumption report: flatness (A), primitivity (B) at the
    /// profile's exponent, and q-fullness. The bounded-solution check needs
    /// the solver and is filled in by `solver::check_bounded_solution`.
    pub fn check_assumptions(&self) -> AssumptionReport {
        let n = self.n as f64;
        let mut notes = Vec::new();

        let max_entry_times_n = self.max_entry() * n;
        let flat_ok = max_entry_times_n <= 1.0 + FLATNESS_SLACK;
        if !flat_ok {
            notes.push(format!(
                "largest variance is {:.3e}, above the flat ceiling 1/n",
                self.max_entry()
            ));
        }

        let mut power = self.s.clone();
        for _ in 1..self.params.l {
            power = power.dot(&self.s);
        }
        let min_power_entry_times_n = power.iter().cloned().fold(f64::INFINITY, f64::min) * n;
        let primitive_ok = min_power_entry_times_n >= self.params.p;
        if !primitive_ok {
            notes.push(format!(
                "n * min entry of S^{} is {:.3e}, below the floor p = {}",
                self.params.l, min_power_entry_times_n, self.params.p
            ));
        }

        let min_entry_times_n = self.min_entry() * n;
        let q_full_ok = min_entry_times_n >= self.params.q;
        if !q_full_ok {
            notes.push(format!(
                "n * min variance is {:.3e}, below the fullness floor q = {}",
                min_entry_times_n, self.params.q
            ));
        }

        for i in 0..self.n {
            if self.s.row(i).sum() == 0.0 {
                notes.push(format!("row {i} of the variance matrix is identically zero"));
            }
        }

        AssumptionReport {
            flat_ok,
            max_entry_times_n,
            primitive_ok,
            min_power_entry_times_n,
            q_full_ok,
            min_entry_times_n,
            bounded_solution: None,
            notes,
        }
    }

    /// Serialize to the on-disk JSON schema. Entries are optional for
    /// generated kinds (they are reconstructed from `kind` + `params`);
    /// custom matrices always carry them.
    pub fn to_json(&self, include_entries: bool) -> Result<String> {
        let entries = if include_entries || matches!(self.kind, ProfileKind::CustomMatrix) {
            Some(self.s.iter().cloned().collect())
        } else {
            None
        };
        let file = ProfileFile {
            schema: PROFILE_SCHEMA.to_string(),
            n: self.n,
            kind: self.kind.clone(),
            entries,
            params: self.params,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProfileFile = serde_json::from_str(text)?;
        if file.schema != PROFILE_SCHEMA {
            return Err(Error::Invalid(format!(
                "unknown profile schema '{}', expected '{PROFILE_SCHEMA}'",
                file.schema
            )));
        }
        let mut profile = match &file.kind {
            ProfileKind::StochasticConstant => {
                Self::stochastic_constant_with(file.n, file.params)?
            }
            ProfileKind::BlockConstant { sizes, values } => {
                let k = values.len();
                let mut mat = Array2::<f64>::zeros((k, k));
                for (a, row) in values.iter().enumerate() {
                    if row.len() != k {
                        return Err(Error::Dimension("ragged block value matrix".into()));
                    }
                    for (b, v) in row.iter().enumerate() {
                        mat[[a, b]] = *v;
                    }
                }
                Self::block_constant_with(sizes, &mat, file.params)?
            }
            ProfileKind::KernelDiscretized(spec) => Self::kernel_with(file.n, spec, file.params)?,
            ProfileKind::CustomMatrix => {
                let entries = file.entries.clone().ok_or_else(|| {
                    Error::Invalid("custom-matrix profile without entries".into())
                })?;
                if entries.len() != file.n * file.n {
                    return Err(Error::Dimension(format!(
                        "{} entries for an {n}x{n} profile",
                        entries.len(),
                        n = file.n
                    )));
                }
                let s = Array2::from_shape_vec((file.n, file.n), entries)
                    .map_err(|e| Error::Dimension(e.to_string()))?;
                Self::custom(s, file.params)?
            }
        };
        // Explicit entries win over regeneration so that files edited by
        // hand keep their exact values.
        if let Some(entries) = file.entries {
            if !matches!(profile.kind, ProfileKind::CustomMatrix) {
                if entries.len() != file.n * file.n {
                    return Err(Error::Dimension(format!(
                        "{} entries for an {n}x{n} profile",
                        entries.len(),
                        n = file.n
                    )));
                }
                let s = Array2::from_shape_vec((file.n, file.n), entries)
                    .map_err(|e| Error::Dimension(e.to_string()))?;
                validate_symmetric_nonnegative(&s.view())?;
                profile.s = s;
            }
        }
        Ok(profile)
    }

    pub fn write_json(&self, path: &Path, include_entries: bool) -> Result<()> {
        std::fs::write(path, self.to_json(include_entries)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

const PROFILE_SCHEMA: &str = "variance-profile/1";

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    schema: String,
    n: usize,
    #[serde(flatten)]
    kind: ProfileKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    entries: Option<Vec<f64>>,
    #[serde(flatten)]
    params: ProfileParams,
}

/// Result of the structural assumption checks. `bounded_solution` stays
/// `None` until a solver pass fills it (it requires solving the vector
/// equation on a test grid).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub flat_ok: bool,
    /// `n * max_ij s_ij`; 1.0 means exactly flat.
    pub max_entry_times_n: f64,
    pub primitive_ok: bool,
    /// Worst entry of `n * S^L`, compared against the floor `p`.
    pub min_power_entry_times_n: f64,
    pub q_full_ok: bool,
    /// `n * min_ij s_ij`, compared against the fullness floor `q`.
    pub min_entry_times_n: f64,
    pub bounded_solution: Option<BoundedSolutionCheck>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn all_ok(&self) -> bool {
        self.flat_ok
            && self.primitive_ok
            && self.q_full_ok
            && self.bounded_solution.as_ref().map_or(true, |b| b.ok)
    }
}

/// Observed solution bound from a solver pass over a test grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundedSolutionCheck {
    pub ok: bool,
    pub observed_max_abs: f64,
    pub bound: f64,
}

fn ensure_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Invalid(format!("profile dimension {n} is too small")));
    }
    Ok(())
}

fn validate_params(params: &ProfileParams) -> Result<()> {
    if !(params.p > 0.0) {
        return Err(Error::Invalid(format!(
            "primitivity floor p = {} must be positive",
            params.p
        )));
    }
    if params.l == 0 || params.l > MAX_PRIMITIVITY_EXPONENT {
        return Err(Error::Invalid(format!(
            "primitivity exponent L = {} outside 1..={MAX_PRIMITIVITY_EXPONENT}",
            params.l
        )));
    }
    if !(params.solution_bound > 0.0) {
        return Err(Error::Invalid("solution bound P must be positive".into()));
    }
    if params.q < 0.0 {
        return Err(Error::Invalid("fullness floor q must be nonnegative".into()));
    }
    Ok(())
}

fn validate_symmetric_nonnegative(m: &ArrayView2<f64>) -> Result<()> {
    let defect = linalg::symmetry_defect(m);
    let scale = m.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    if defect > 1e-12 * (1.0 + scale) {
        return Err(Error::Invalid(format!(
            "matrix is not symmetric (defect {defect:.3e})"
        )));
    }
    if let Some(bad) = m.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::Invalid(format!(
            "matrix has a negative or non-finite entry: {bad}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stochastic_constant_is_flat_and_primitive() {
        let profile = VarianceProfile::stochastic_constant(50).unwrap();
        assert_eq!(profile.entry(3, 41), 1.0 / 50.0);
        let report = profile.check_assumptions();
        assert!(report.flat_ok && report.primitive_ok && report.q_full_ok);
        assert!((report.max_entry_times_n - 1.0).abs() < 1e-15);
        assert!((report.min_power_entry_times_n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_grid_and_rescaling() {
        let spec = KernelSpec::Bilinear {
            offset: 0.5,
            slope: 0.5,
        };
        let profile = VarianceProfile::kernel(100, &spec).unwrap();
        // f(x, y) = (1 + x y)/2 peaks at f(1, 1) = 1, so the raw grid is
        // already flat and the recorded factor is the bare 1/n.
        let expected = (1.0 + 0.01 * 1.0) / 2.0 / 100.0;
        assert!((profile.entry(0, 99) - expected).abs() < 1e-15);
        assert!((profile.max_entry() - 0.01).abs() < 1e-17);
        assert!((profile.rescale_factor() - 0.01).abs() < 1e-17);
    }

    #[test]
    fn kernel_rescales_to_exact_flatness() {
        let spec = KernelSpec::BulkBump {
            baseline: 0.3,
            amplitude: 12.0,
        };
        let profile = VarianceProfile::kernel(64, &spec).unwrap();
        assert_eq!(profile.max_entry(), 1.0 / 64.0);
    }

    #[test]
    fn three_block_chain_needs_two_steps() {
        let values = ndarray::array![[0.5, 1.0, 0.0], [1.0, 0.5, 1.0], [0.0, 1.0, 0.5]];
        let mut profile = VarianceProfile::block_constant(&[10, 20, 10], &values).unwrap();
        let report = profile.check_assumptions();
        assert!(!report.primitive_ok);
        assert_eq!(report.min_power_entry_times_n, 0.0);

        let mut params = profile.params();
        params.l = 2;
        params.p = 1e-3;
        profile.set_params(params).unwrap();
        let report = profile.check_assumptions();
        assert!(report.primitive_ok);
        // Explicit block power: (S^2)_{ab} = sum_c n_c v_ac v_cb / n^2; the
        // worst entry sits on the (1, 2) pair: 10*0.5 + 20*0.5 + 0 = 15.
        let n = 40.0;
        let expected = 15.0 / (n * n) * n;
        assert!((report.min_power_entry_times_n - expected).abs() < 1e-12);
    }

    #[test]
    fn fullness_floor_compares_min_entry() {
        let values = ndarray::array![[0.3, 1.0], [1.0, 0.3]];
        let mut profile = VarianceProfile::block_constant(&[8, 24], &values).unwrap();
        let mut params = profile.params();
        params.q = 0.25;
        profile.set_params(params).unwrap();
        assert!(profile.check_assumptions().q_full_ok);
        params.q = 0.31;
        profile.set_params(params).unwrap();
        assert!(!profile.check_assumptions().q_full_ok);
    }

    #[test]
    fn zero_block_row_is_rejected() {
        let values = ndarray::array![[0.0, 0.0], [0.0, 1.0]];
        assert!(VarianceProfile::block_constant(&[5, 5], &values).is_err());
    }

    #[test]
    fn custom_keeps_broken_profiles_but_reports_them() {
        let mut s = Array2::<f64>::zeros((4, 4));
        s[[2, 3]] = 0.5;
        s[[3, 2]] = 0.5;
        let profile = VarianceProfile::custom(s, ProfileParams::default()).unwrap();
        let report = profile.check_assumptions();
        assert!(!report.flat_ok);
        assert!(!report.primitive_ok);
        assert!(report.notes.iter().any(|n| n.contains("row 0")));
    }

    #[test]
    fn asymmetric_and_negative_matrices_are_rejected() {
        let mut s = Array2::<f64>::from_elem((3, 3), 0.1);
        s[[0, 1]] = 0.2;
        assert!(VarianceProfile::custom(s, ProfileParams::default()).is_err());
        let mut s = Array2::<f64>::from_elem((3, 3), 0.1);
        s[[1, 1]] = -0.1;
        assert!(VarianceProfile::custom(s, ProfileParams::default()).is_err());
    }

    #[test]
    fn json_round_trip_without_entries() {
        let profile = VarianceProfile::kernel(
            30,
            &KernelSpec::GaussianBand { width: 0.4 },
        )
        .unwrap();
        let text = profile.to_json(false).unwrap();
        assert!(!text.contains("entries"));
        let back = VarianceProfile::from_json(&text).unwrap();
        assert_eq!(back.n(), 30);
        let diff = (&back.s - profile.s())
            .iter()
            .cloned()
            .fold(0.0f64, |a, b| a.max(b.abs()));
        assert_eq!(diff, 0.0);
        assert_eq!(back.content_hash(), profile.content_hash());
    }

    #[test]
    fn json_round_trip_custom_requires_entries() {
        let s = Array2::<f64>::from_elem((3, 3), 0.05);
        let profile = VarianceProfile::custom(s, ProfileParams::default()).unwrap();
        let text = profile.to_json(false).unwrap();
        assert!(text.contains("entries"));
        let back = VarianceProfile::from_json(&text).unwrap();
        assert_eq!(back.entry(1, 2), 0.05);
    }
}
