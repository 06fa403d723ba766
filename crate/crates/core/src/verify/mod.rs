//! Empirical verification of spectral laws on sampled matrices: resolvent
//! error decomposition, the self-consistent perturbation vector, eigenvalue
//! counting and rigidity, eigenvector delocalization, anisotropic resolvent
//! probes, gap-statistics universality, and the Stieltjes-transform bound
//! on measure distances.

pub mod delocalization;
pub mod measure;
pub mod resolvent;
pub mod rigidity;
pub mod universality;

pub use delocalization::{
    anisotropic_check, delocalization_check, random_orthogonal_pair, random_unit_vectors,
    AnisotropicReport, AnisotropicTrial, DelocalizationReport,
};
pub use measure::{stieltjes_measure_distance, AtomicMeasure, MeasureDistance, SpectralMeasure};
pub use resolvent::{
    perturbation_d, perturbation_from_diagonal, resolvent, resolvent_diagonal,
    resolvent_direct_solve, PerturbationVector, ResolventData,
};
pub use rigidity::{
    counting_discrepancy, gap_eigenvalue_counts, i_tau, rigidity_check, shrunken_gap_regions,
    CountingReport, CountingRow, GapCount, RigidityReport, RigidityRow,
};
pub use universality::{
    gap_statistics, ks_distance, semicircle_density, BumpComparison, BumpObservable,
    GapStatistics,
};

use serde::{Deserialize, Serialize};

/// Finite-size rendering of a stochastic-domination claim: the observed
/// value must stay below `c * bound` for at least a `1 - alpha` fraction of
/// trials.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominationCheck {
    pub c: f64,
    pub alpha: f64,
    pub total: usize,
    pub satisfied: usize,
    pub pass: bool,
    /// Largest observed/bound ratio seen.
    pub worst_ratio: f64,
}

pub const DEFAULT_DOMINATION_C: f64 = 10.0;
pub const DEFAULT_DOMINATION_ALPHA: f64 = 0.05;

/// Evaluate a batch of observed/bound ratios against the calibrated
/// acceptance rule.
pub fn domination(ratios: &[f64], c: f64, alpha: f64) -> DominationCheck {
    let total = ratios.len();
    let satisfied = ratios.iter().filter(|r| **r <= c).count();
    let worst_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    let required = ((1.0 - alpha) * total as f64).ceil() as usize;
    DominationCheck {
        c,
        alpha,
        total,
        satisfied,
        pass: satisfied >= required,
        worst_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domination_counts_fraction() {
        let ratios = vec![0.5, 1.0, 9.9, 10.0, 11.0];
        let check = domination(&ratios, 10.0, 0.2);
        assert_eq!(check.satisfied, 4);
        assert!(check.pass);
        assert!((check.worst_ratio - 11.0).abs() < 1e-15);
        let strict = domination(&ratios, 10.0, 0.05);
        assert!(!strict.pass);
    }
}
