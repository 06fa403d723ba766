//! Shared fixtures for the benchmark suite.

use ndarray::arr2;
use qvelab::VarianceProfile;

/// Two-block profile with a spectral gap, the standard non-flat fixture.
pub fn gapped_profile(n: usize) -> VarianceProfile {
    let quarter = n / 4;
    VarianceProfile::block_constant(
        &[quarter, n - quarter],
        &arr2(&[[0.05, 1.0], [1.0, 0.05]]),
    )
    .expect("block profile")
}
