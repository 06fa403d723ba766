//! Sampling of self-adjoint random matrices with a prescribed variance
//! profile: entry distributions, Gaussian reference ensembles (dense and
//! tridiagonal), the Ornstein-Uhlenbeck matrix interpolation used for
//! universality arguments, and moment/variance verification helpers.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg;
use crate::profile::VarianceProfile;

/// Symmetry class of the ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetryClass {
    RealSymmetric,
    ComplexHermitian,
}

/// Entry law, scaled per cell to the prescribed variance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryDistribution {
    Gaussian,
    /// Uniform on `[-sqrt(3s), sqrt(3s)]`; fourth moment `(9/5) s^2`.
    BoundedUniform,
    /// Two-point law `±sqrt(s)`; all even moments equal `s^{k/2}` exactly.
    RademacherScaled,
}

/// Counter-based per-cell random stream. Each `(seed, i, j)` triple keys an
/// independent stream; the `t`-th output is the SplitMix64 finalizer applied
/// to `key + (t+1) * GOLDEN`. Entries are therefore reproducible regardless
/// of traversal order or parallel scheduling.
#[derive(Clone, Debug)]
pub struct CellRng {
    key: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl CellRng {
    pub fn new(seed: u64, i: u64, j: u64) -> Self {
        let mut key = mix64(seed.wrapping_add(GOLDEN));
        key = mix64(key ^ i.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        key = mix64(key ^ j.wrapping_mul(0x94D0_49BB_1331_11EB));
        CellRng { key, counter: 0 }
    }
}

impl RngCore for CellRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Matrix storage for the two symmetry classes.
#[derive(Clone, Debug)]
pub enum MatrixData {
    Real(Array2<f64>),
    Complex(Array2<Complex64>),
}

/// Cached eigendecomposition of a sample.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Array1<f64>,
    pub vectors: MatrixData,
}

/// One self-adjoint sample: exact (bitwise) hermiticity, entries centered
/// with `E|h_ij|^2 = s_ij`, eigendecomposition computed lazily and cached.
#[derive(Clone, Debug)]
pub struct MatrixSample {
    n: usize,
    class: SymmetryClass,
    distribution: EntryDistribution,
    seed: u64,
    data: MatrixData,
    eigen: OnceLock<Eigen>,
}

impl MatrixSample {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn class(&self) -> SymmetryClass {
        self.class
    }

    pub fn distribution(&self) -> EntryDistribution {
        self.distribution
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &MatrixData {
        &self.data
    }

    pub fn matrix_real(&self) -> Result<&Array2<f64>> {
        match &self.data {
            MatrixData::Real(h) => Ok(h),
            MatrixData::Complex(_) => Err(Error::Invalid(
                "sample is complex-hermitian, not real-symmetric".into(),
            )),
        }
    }

    pub fn matrix_complex(&self) -> Result<&Array2<Complex64>> {
        match &self.data {
            MatrixData::Complex(h) => Ok(h),
            MatrixData::Real(_) => Err(Error::Invalid(
                "sample is real-symmetric, not complex-hermitian".into(),
            )),
        }
    }

    /// Bitwise check of `h = h*`.
    pub fn is_hermitian_exact(&self) -> bool {
        match &self.data {
            MatrixData::Real(h) => {
                for i in 0..self.n {
                    for j in (i + 1)..self.n {
                        if h[[i, j]].to_bits() != h[[j, i]].to_bits() {
                            return false;
                        }
                    }
                }
                true
            }
            MatrixData::Complex(h) => {
                for i in 0..self.n {
                    if h[[i, i]].im != 0.0 {
                        return false;
                    }
                    for j in (i + 1)..self.n {
                        let a = h[[i, j]];
                        let b = h[[j, i]];
                        if a.re.to_bits() != b.re.to_bits() || a.im.to_bits() != (-b.im).to_bits()
                        {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    /// Eigendecomposition, computed on first use and cached.
    pub fn eigen(&self) -> Result<&Eigen> {
        if let Some(e) = self.eigen.get() {
            return Ok(e);
        }
        let computed = match &self.data {
            MatrixData::Real(h) => {
                let (values, vectors) = linalg::eigh(&h.view())?;
                Eigen {
                    values,
                    vectors: MatrixData::Real(vectors),
                }
            }
            MatrixData::Complex(h) => {
                let (values, vectors) = linalg::eigh_hermitian(&h.view())?;
                Eigen {
                    values,
                    vectors: MatrixData::Complex(vectors),
                }
            }
        };
        let _ = self.eigen.set(computed);
        Ok(self.eigen.get().expect("just set"))
    }

    /// Sorted eigenvalues.
    pub fn eigenvalues(&self) -> Result<&Array1<f64>> {
        Ok(&self.eigen()?.values)
    }

    pub fn eigenvectors_real(&self) -> Result<&Array2<f64>> {
        match &self.eigen()?.vectors {
            MatrixData::Real(u) => Ok(u),
            MatrixData::Complex(_) => Err(Error::Invalid("eigenvectors are complex".into())),
        }
    }

    pub fn eigenvectors_complex(&self) -> Result<&Array2<Complex64>> {
        match &self.eigen()?.vectors {
            MatrixData::Complex(u) => Ok(u),
            MatrixData::Real(_) => Err(Error::Invalid("eigenvectors are real".into())),
        }
    }

    /// Binary dump. Layout (all little-endian): magic `WTMX0001` (8 bytes),
    /// u64 `n`, u8 class (0 real, 1 complex), u8 distribution (0 gaussian,
    /// 1 bounded-uniform, 2 rademacher-scaled), 6 zero bytes, u64 seed,
    /// then `n*n` values row-major as f64 (complex entries interleave
    /// re, im).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(b"WTMX0001")?;
        file.write_all(&(self.n as u64).to_le_bytes())?;
        let class = match self.class {
            SymmetryClass::RealSymmetric => 0u8,
            SymmetryClass::ComplexHermitian => 1u8,
        };
        let dist = match self.distribution {
            EntryDistribution::Gaussian => 0u8,
            EntryDistribution::BoundedUniform => 1u8,
            EntryDistribution::RademacherScaled => 2u8,
        };
        file.write_all(&[class, dist, 0, 0, 0, 0, 0, 0])?;
        file.write_all(&self.seed.to_le_bytes())?;
        match &self.data {
            MatrixData::Real(h) => {
                for v in h.iter() {
                    file.write_all(&v.to_le_bytes())?;
                }
            }
            MatrixData::Complex(h) => {
                for v in h.iter() {
                    file.write_all(&v.re.to_le_bytes())?;
                    file.write_all(&v.im.to_le_bytes())?;
                }
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Read a matrix written by [`write_binary`](Self::write_binary);
    /// validates the magic and exact hermiticity.
    pub fn read_binary(path: &Path) -> Result<MatrixSample> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != b"WTMX0001" {
            return Err(Error::Invalid("bad magic in binary sample file".into()));
        }
        let mut word = [0u8; 8];
        file.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        let mut flags = [0u8; 8];
        file.read_exact(&mut flags)?;
        let class = match flags[0] {
            0 => SymmetryClass::RealSymmetric,
            1 => SymmetryClass::ComplexHermitian,
            other => return Err(Error::Invalid(format!("unknown class tag {other}"))),
        };
        let distribution = match flags[1] {
            0 => EntryDistribution::Gaussian,
            1 => EntryDistribution::BoundedUniform,
            2 => EntryDistribution::RademacherScaled,
            other => return Err(Error::Invalid(format!("unknown distribution tag {other}"))),
        };
        file.read_exact(&mut word)?;
        let seed = u64::from_le_bytes(word);
        let read_f64 = |file: &mut std::io::BufReader<std::fs::File>| -> Result<f64> {
            let mut b = [0u8; 8];
            file.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let data = match class {
            SymmetryClass::RealSymmetric => {
                let mut h = Array2::<f64>::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        h[[i, j]] = read_f64(&mut file)?;
                    }
                }
                MatrixData::Real(h)
            }
            SymmetryClass::ComplexHermitian => {
                let mut h = Array2::<Complex64>::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        let re = read_f64(&mut file)?;
                        let im = read_f64(&mut file)?;
                        h[[i, j]] = Complex64::new(re, im);
                    }
                }
                MatrixData::Complex(h)
            }
        };
        let sample = MatrixSample {
            n,
            class,
            distribution,
            seed,
            data,
            eigen: OnceLock::new(),
        };
        if !sample.is_hermitian_exact() {
            return Err(Error::Invalid("file payload is not self-adjoint".into()));
        }
        Ok(sample)
    }
}

impl MatrixSample {
    /// Wrap an explicit real symmetric matrix (validated bitwise).
    pub fn from_real(h: Array2<f64>, distribution: EntryDistribution, seed: u64) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        let sample = MatrixSample {
            n: h.nrows(),
            class: SymmetryClass::RealSymmetric,
            distribution,
            seed,
            data: MatrixData::Real(h),
            eigen: OnceLock::new(),
        };
        if !sample.is_hermitian_exact() {
            return Err(Error::Invalid("matrix is not exactly symmetric".into()));
        }
        Ok(sample)
    }

    /// Wrap an explicit complex hermitian matrix (validated bitwise,
    /// including real diagonal).
    pub fn from_complex(
        h: Array2<Complex64>,
        distribution: EntryDistribution,
        seed: u64,
    ) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        let sample = MatrixSample {
            n: h.nrows(),
            class: SymmetryClass::ComplexHermitian,
            distribution,
            seed,
            data: MatrixData::Complex(h),
            eigen: OnceLock::new(),
        };
        if !sample.is_hermitian_exact() {
            return Err(Error::Invalid("matrix is not exactly hermitian".into()));
        }
        Ok(sample)
    }
}

/// One centered draw with the requested variance.
#[inline]
fn draw_centered(rng: &mut CellRng, dist: EntryDistribution, variance: f64) -> f64 {
    if variance <= 0.0 {
        return 0.0;
    }
    match dist {
        EntryDistribution::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            z * variance.sqrt()
        }
        EntryDistribution::BoundedUniform => {
            let u: f64 = rng.gen_range(-1.0..1.0);
            u * (3.0 * variance).sqrt()
        }
        EntryDistribution::RademacherScaled => {
            if rng.gen_bool(0.5) {
                variance.sqrt()
            } else {
                -variance.sqrt()
            }
        }
    }
}

/// Draw one matrix with the profile's entry variances. Entries for `i <= j`
/// are independent and centered; the lower triangle mirrors the upper one,
/// so self-adjointness is exact. Complex off-diagonals split the variance
/// isotropically (`s/2` per real part and imaginary part, independent); the
/// diagonal is always real with full variance.
pub fn sample(
    profile: &VarianceProfile,
    class: SymmetryClass,
    dist: EntryDistribution,
    seed: u64,
) -> Result<MatrixSample> {
    let n = profile.n();
    let flat_bound = (1.0 + 1e-9) / n as f64;
    if profile.max_entry() > flat_bound {
        return Err(Error::Invalid(format!(
            "profile is not flat: max variance {} exceeds 1/N = {}",
            profile.max_entry(),
            1.0 / n as f64
        )));
    }
    let s = profile.s();
    let data = match class {
        SymmetryClass::RealSymmetric => {
            let mut h = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let mut rng = CellRng::new(seed, i as u64, j as u64);
                    let v = draw_centered(&mut rng, dist, s[[i, j]]);
                    h[[i, j]] = v;
                    h[[j, i]] = v;
                }
            }
            MatrixData::Real(h)
        }
        SymmetryClass::ComplexHermitian => {
            let mut h = Array2::<Complex64>::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let mut rng = CellRng::new(seed, i as u64, j as u64);
                    if i == j {
                        let v = draw_centered(&mut rng, dist, s[[i, i]]);
                        h[[i, i]] = Complex64::new(v, 0.0);
                    } else {
                        let re = draw_centered(&mut rng, dist, s[[i, j]] / 2.0);
                        let im = draw_centered(&mut rng, dist, s[[i, j]] / 2.0);
                        h[[i, j]] = Complex64::new(re, im);
                        h[[j, i]] = Complex64::new(re, -im);
                    }
                }
            }
            MatrixData::Complex(h)
        }
    };
    Ok(MatrixSample {
        n,
        class,
        distribution: dist,
        seed,
        data,
        eigen: OnceLock::new(),
    })
}

/// Standard Gaussian reference ensemble with spectrum on `[-2, 2]`:
/// real case off-diagonal variance `1/N` and doubled diagonal `2/N`;
/// complex case off-diagonal re/im variance `1/(2N)` each and real diagonal
/// of variance `1/N`.
pub fn sample_gaussian_reference(
    n: usize,
    class: SymmetryClass,
    seed: u64,
) -> Result<MatrixSample> {
    if n < 2 {
        return Err(Error::Invalid("reference ensemble needs n >= 2".into()));
    }
    let nf = n as f64;
    let data = match class {
        SymmetryClass::RealSymmetric => {
            let mut h = Array2::<f64>::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let mut rng = CellRng::new(seed, i as u64, j as u64);
                    let var = if i == j { 2.0 / nf } else { 1.0 / nf };
                    let v = draw_centered(&mut rng, EntryDistribution::Gaussian, var);
                    h[[i, j]] = v;
                    h[[j, i]] = v;
                }
            }
            MatrixData::Real(h)
        }
        SymmetryClass::ComplexHermitian => {
            let mut h = Array2::<Complex64>::zeros((n, n));
            for i in 0..n {
                for j in i..n {
                    let mut rng = CellRng::new(seed, i as u64, j as u64);
                    if i == j {
                        let v = draw_centered(&mut rng, EntryDistribution::Gaussian, 1.0 / nf);
                        h[[i, i]] = Complex64::new(v, 0.0);
                    } else {
                        let re =
                            draw_centered(&mut rng, EntryDistribution::Gaussian, 0.5 / nf);
                        let im =
                            draw_centered(&mut rng, EntryDistribution::Gaussian, 0.5 / nf);
                        h[[i, j]] = Complex64::new(re, im);
                        h[[j, i]] = Complex64::new(re, -im);
                    }
                }
            }
            MatrixData::Complex(h)
        }
    };
    Ok(MatrixSample {
        n,
        class,
        distribution: EntryDistribution::Gaussian,
        seed,
        data,
        eigen: OnceLock::new(),
    })
}

/// Eigenvalues distributed exactly as those of [`sample_gaussian_reference`]
/// but computed from the equivalent random tridiagonal matrix (Householder
/// reduction preserves the law: the diagonal stays Gaussian and the
/// off-diagonal entries become scaled chi variables with decreasing degrees
/// of freedom). Cost is O(n^2) instead of a dense eigensolve.
pub fn gaussian_reference_eigenvalues(
    n: usize,
    class: SymmetryClass,
    seed: u64,
) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Invalid("reference ensemble needs n >= 2".into()));
    }
    let nf = n as f64;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for k in 0..n {
        let mut rng = CellRng::new(seed, k as u64, k as u64);
        let var = match class {
            SymmetryClass::RealSymmetric => 2.0 / nf,
            SymmetryClass::ComplexHermitian => 1.0 / nf,
        };
        diag[k] = draw_centered(&mut rng, EntryDistribution::Gaussian, var);
    }
    for k in 0..n - 1 {
        let mut rng = CellRng::new(seed, k as u64, (k + 1) as u64);
        let (dof, scale) = match class {
            SymmetryClass::RealSymmetric => ((n - 1 - k) as f64, 1.0 / nf.sqrt()),
            SymmetryClass::ComplexHermitian => ((2 * (n - 1 - k)) as f64, 1.0 / (2.0 * nf).sqrt()),
        };
        let chi_sq: f64 = ChiSquared::new(dof)
            .map_err(|e| Error::Invalid(format!("chi-squared dof {dof}: {e}")))?
            .sample(&mut rng);
        off[k] = chi_sq.sqrt() * scale;
    }
    linalg::tridiagonal_eigenvalues(&diag, &off)
}

/// Ornstein-Uhlenbeck interpolation between a sample and an independent
/// Gaussian matrix: `e^{-t/2} h0 + (1 - e^{-t})^{1/2} u`. The variance
/// profile interpolates accordingly: `e^{-t} S0 + (1 - e^{-t}) S_G`.
pub fn dbm_interpolate(h0: &MatrixSample, u: &MatrixSample, t: f64) -> Result<MatrixSample> {
    if h0.class != u.class {
        return Err(Error::Invalid("symmetry class mismatch".into()));
    }
    if h0.n != u.n {
        return Err(Error::Dimension(format!(
            "size mismatch: {} vs {}",
            h0.n, u.n
        )));
    }
    if u.distribution != EntryDistribution::Gaussian {
        return Err(Error::Invalid("interpolation target must be Gaussian".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::Invalid(format!("time t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(MatrixSample {
            n: h0.n,
            class: h0.class,
            distribution: h0.distribution,
            seed: h0.seed,
            data: h0.data.clone(),
            eigen: OnceLock::new(),
        });
    }
    let a = (-t / 2.0).exp();
    let b = (1.0 - (-t).exp()).sqrt();
    let data = match (&h0.data, &u.data) {
        (MatrixData::Real(x), MatrixData::Real(y)) => MatrixData::Real(x * a + y * b),
        (MatrixData::Complex(x), MatrixData::Complex(y)) => {
            MatrixData::Complex(x * Complex64::new(a, 0.0) + y * Complex64::new(b, 0.0))
        }
        _ => unreachable!("class checked above"),
    };
    Ok(MatrixSample {
        n: h0.n,
        class: h0.class,
        distribution: h0.distribution,
        seed: h0.seed,
        data,
        eigen: OnceLock::new(),
    })
}

/// Worst moment ratios for one power `k`: `E|h|^k / s^{k/2}` and the
/// centered (signed) version `|E h^k| / s^{k/2}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MomentEntry {
    pub k: u32,
    pub worst_abs_ratio: f64,
    pub worst_signed_ratio: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub entries: Vec<MomentEntry>,
    pub samples: usize,
}

/// Empirical entry moments over a batch of samples against the profile
/// scales `s^{k/2}`. The worst ratio over cells bounds the realized moment
/// constant for each `k`.
pub fn verify_moments(
    samples: &[MatrixSample],
    profile: &VarianceProfile,
    k_max: u32,
) -> Result<MomentReport> {
    if samples.len() < 1000 {
        return Err(Error::Invalid(format!(
            "need at least 1000 samples for stable moments, got {}",
            samples.len()
        )));
    }
    if k_max == 0 {
        return Err(Error::Invalid("k_max must be positive".into()));
    }
    let n = profile.n();
    if samples.iter().any(|s| s.n != n) {
        return Err(Error::Dimension("sample size does not match profile".into()));
    }
    let s = profile.s();
    let m = samples.len() as f64;
    let mut entries = Vec::new();
    for k in 1..=k_max {
        let mut worst_abs: f64 = 0.0;
        let mut worst_signed: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                let var = s[[i, j]];
                if var <= 0.0 {
                    continue;
                }
                let scale = var.powf(k as f64 / 2.0);
                let mut sum_abs = 0.0;
                let mut sum_signed = Complex64::new(0.0, 0.0);
                for sample in samples {
                    let value = match &sample.data {
                        MatrixData::Real(h) => Complex64::new(h[[i, j]], 0.0),
                        MatrixData::Complex(h) => h[[i, j]],
                    };
                    sum_abs += value.norm().powi(k as i32);
                    sum_signed += value.powu(k);
                }
                worst_abs = worst_abs.max(sum_abs / m / scale);
                worst_signed = worst_signed.max((sum_signed / m).norm() / scale);
            }
        }
        entries.push(MomentEntry {
            k,
            worst_abs_ratio: worst_abs,
            worst_signed_ratio: worst_signed,
        });
    }
    Ok(MomentReport {
        entries,
        samples: samples.len(),
    })
}

/// Max deviation of the empirical entry variance from the profile, scaled
/// by `N`, over `m` streamed samples (per-sample seeds `seed ^ index`).
pub fn empirical_variance_defect(
    profile: &VarianceProfile,
    class: SymmetryClass,
    dist: EntryDistribution,
    seed: u64,
    m: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let n = profile.n();
    let mut sums = Array2::<f64>::zeros((n, n));
    for index in 0..m {
        let sample = sample(profile, class, dist, seed ^ index as u64)?;
        match &sample.data {
            MatrixData::Real(h) => {
                for i in 0..n {
                    for j in i..n {
                        sums[[i, j]] += h[[i, j]] * h[[i, j]];
                    }
                }
            }
            MatrixData::Complex(h) => {
                for i in 0..n {
                    for j in i..n {
                        sums[[i, j]] += h[[i, j]].norm_sqr();
                    }
                }
            }
        }
    }
    let s = profile.s();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let defect = (sums[[i, j]] / m as f64 - s[[i, j]]).abs() * n as f64;
            worst = worst.max(defect);
        }
    }
    Ok(worst)
}

/// Fullness check of the sampler's design covariance against the profile's
/// `q` parameter. Real case: `s_ij >= q/N` everywhere. Complex case: the
/// off-diagonal re/im covariance is isotropic `s_ij/2`, so its smallest
/// eigenvalue must reach `q/N`; diagonal entries are forced real by
/// hermiticity and are held to the real condition instead.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QFullness {
    pub q: f64,
    pub ok: bool,
    /// Smallest covariance eigenvalue across cells, times `N`.
    pub worst_margin_times_n: f64,
    pub note: String,
}

pub fn q_fullness_check(profile: &VarianceProfile, class: SymmetryClass) -> QFullness {
    let q = profile.params().q;
    let n = profile.n() as f64;
    if q <= 0.0 {
        return QFullness {
            q,
            ok: true,
            worst_margin_times_n: f64::INFINITY,
            note: "q = 0: no fullness requested".into(),
        };
    }
    let s = profile.s();
    let mut worst = f64::INFINITY;
    for i in 0..profile.n() {
        for j in 0..profile.n() {
            let margin = match class {
                SymmetryClass::RealSymmetric => s[[i, j]] * n,
                SymmetryClass::ComplexHermitian => {
                    if i == j {
                        s[[i, j]] * n
                    } else {
                        s[[i, j]] / 2.0 * n
                    }
                }
            };
            worst = worst.min(margin);
        }
    }
    QFullness {
        q,
        ok: worst >= q,
        worst_margin_times_n: worst,
        note: match class {
            SymmetryClass::RealSymmetric => "real case: min s_ij N vs q".into(),
            SymmetryClass::ComplexHermitian => {
                "complex case: isotropic split, min off-diagonal covariance eigenvalue s_ij/2; \
                 real diagonal held to the real condition"
                    .into()
            }
        },
    }
}
