//! Artifact writers: schema-versioned JSON reports and the fixed CSV
//! layouts consumed by plotting tools.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Figure-data kinds with fixed filenames and column layouts:
/// dos-curve -> `tau,rho`; local-law-scan -> `eta,err_d,bound`;
/// rigidity-scatter -> `tau,lambda,deviation,bound`;
/// gap-cdf -> `gap,cdf_model,cdf_reference`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureKind {
    DosCurve,
    LocalLawScan,
    RigidityScatter,
    GapCdf,
}

impl FigureKind {
    pub fn file_name(self) -> &'static str {
        match self {
            FigureKind::DosCurve => "dos_curve.csv",
            FigureKind::LocalLawScan => "local_law_scan.csv",
            FigureKind::RigidityScatter => "rigidity_scatter.csv",
            FigureKind::GapCdf => "gap_cdf.csv",
        }
    }

    fn header(self) -> &'static str {
        match self {
            FigureKind::DosCurve => "tau,rho",
            FigureKind::LocalLawScan => "eta,err_d,bound",
            FigureKind::RigidityScatter => "tau,lambda,deviation,bound",
            FigureKind::GapCdf => "gap,cdf_model,cdf_reference",
        }
    }
}

#[derive(Clone, Debug)]
pub enum FigureData {
    DosCurve(Vec<(f64, f64)>),
    LocalLawScan(Vec<(f64, f64, f64)>),
    RigidityScatter(Vec<(f64, f64, f64, f64)>),
    GapCdf(Vec<(f64, f64, f64)>),
}

impl FigureData {
    fn kind(&self) -> FigureKind {
        match self {
            FigureData::DosCurve(_) => FigureKind::DosCurve,
            FigureData::LocalLawScan(_) => FigureKind::LocalLawScan,
            FigureData::RigidityScatter(_) => FigureKind::RigidityScatter,
            FigureData::GapCdf(_) => FigureKind::GapCdf,
        }
    }
}

/// Write one figure-data CSV; the data payload must match the requested
/// kind.
pub fn emit_figure_data(
    out_dir: &Path,
    kind: FigureKind,
    data: &FigureData,
) -> Result<String, CliError> {
    if data.kind() != kind {
        return Err(CliError::Internal(format!(
            "figure data is {:?} but {:?} was requested",
            data.kind(),
            kind
        )));
    }
    let mut text = String::from(kind.header());
    text.push('\n');
    match data {
        FigureData::DosCurve(rows) => {
            for (a, b) in rows {
                text.push_str(&format!("{a},{b}\n"));
            }
        }
        FigureData::LocalLawScan(rows) | FigureData::GapCdf(rows) => {
            for (a, b, c) in rows {
                text.push_str(&format!("{a},{b},{c}\n"));
            }
        }
        FigureData::RigidityScatter(rows) => {
            for (a, b, c, d) in rows {
                text.push_str(&format!("{a},{b},{c},{d}\n"));
            }
        }
    }
    let name = kind.file_name();
    std::fs::write(out_dir.join(name), text)
        .map_err(|e| CliError::Internal(format!("write {name}: {e}")))?;
    Ok(name.to_string())
}

pub fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<String, CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("encode {name}: {e}")))?;
    std::fs::write(out_dir.join(name), text)
        .map_err(|e| CliError::Internal(format!("write {name}: {e}")))?;
    Ok(name.to_string())
}
