//! JSON sidecar tying a multi-b-value series of HVOL files together with
//! its meta-information and optional lesion annotation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::matching::LesionAnnotation;
use crate::hvol::{read_mask_file, read_volume_file, write_mask_file, write_volume_file};
use crate::signal::{DwiObservation, DwiSeries};

pub const SIDECAR_FILE: &str = "series.json";
pub const LESION_MASK_FILE: &str = "lesions.hvol";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarVolume {
    pub b_value: f64,
    /// File name, resolved relative to the sidecar's directory.
    pub file: String,
}

/// On-disk description of a series. `b_values`, `low_b` and `high_b` are
/// redundant with the volume list and are cross-checked on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSidecar {
    pub b_values: Vec<f64>,
    pub low_b: f64,
    pub high_b: f64,
    pub volumes: Vec<SidecarVolume>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lesion_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pirads: Option<BTreeMap<u8, u8>>,
    /// Free-form echo of whatever produced the series.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Canonical volume file name for a b-value: `b800.hvol`, `b802.5.hvol`.
pub fn b_file_name(b: f64) -> String {
    if b == b.trunc() {
        format!("b{}.hvol", b as i64)
    } else {
        format!("b{b}.hvol")
    }
}

/// Write the series volumes plus sidecar (and the lesion mask when an
/// annotation is given) into `dir`. Returns the sidecar path.
pub fn save_series(
    dir: impl AsRef<Path>,
    series: &DwiSeries,
    annotation: Option<&LesionAnnotation>,
    provenance: Option<serde_json::Value>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut volumes = Vec::new();
    for obs in series.observations() {
        let file = b_file_name(obs.b_value);
        write_volume_file(dir.join(&file), &obs.volume)?;
        volumes.push(SidecarVolume {
            b_value: obs.b_value,
            file,
        });
    }
    let (lesion_mask, pirads) = match annotation {
        Some(annot) => {
            write_mask_file(dir.join(LESION_MASK_FILE), annot.mask())?;
            (
                Some(LESION_MASK_FILE.to_string()),
                Some(annot.pirads().clone()),
            )
        }
        None => (None, None),
    };
    let meta = series.meta();
    let sidecar = SeriesSidecar {
        b_values: series.b_values(),
        low_b: meta.low_b,
        high_b: meta.high_b,
        volumes,
        lesion_mask,
        pirads,
        provenance,
    };
    let path = dir.join(SIDECAR_FILE);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(path)
}

/// Parse a sidecar and load its volumes. Cross-checks the redundant
/// fields, then leaves protocol-window and geometry validation to the
/// series constructor.
pub fn load_series(sidecar_path: impl AsRef<Path>) -> Result<(DwiSeries, SeriesSidecar)> {
    let sidecar_path = sidecar_path.as_ref();
    let sidecar: SeriesSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));

    let listed: Vec<f64> = sidecar.volumes.iter().map(|v| v.b_value).collect();
    if listed != sidecar.b_values {
        return Err(Error::Format(format!(
            "sidecar b_values {:?} disagree with volume entries {:?}",
            sidecar.b_values, listed
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &b in &listed {
        lo = lo.min(b);
        hi = hi.max(b);
    }
    if lo != sidecar.low_b || hi != sidecar.high_b {
        return Err(Error::Format(format!(
            "sidecar low/high ({}, {}) disagree with b-value extremes ({lo}, {hi})",
            sidecar.low_b, sidecar.high_b
        )));
    }

    let mut observations = Vec::with_capacity(sidecar.volumes.len());
    for entry in &sidecar.volumes {
        observations.push(DwiObservation {
            b_value: entry.b_value,
            volume: read_volume_file(dir.join(&entry.file))?,
        });
    }
    Ok((DwiSeries::new(observations)?, sidecar))
}

/// Load the annotation a sidecar points at, if any. A mask without a
/// PI-RADS map is only valid when it has no lesions.
pub fn load_annotation(
    sidecar_path: impl AsRef<Path>,
    sidecar: &SeriesSidecar,
) -> Result<Option<LesionAnnotation>> {
    let Some(mask_file) = &sidecar.lesion_mask else {
        return Ok(None);
    };
    let dir = sidecar_path
        .as_ref()
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let mask = read_mask_file(dir.join(mask_file))?;
    let pirads = sidecar.pirads.clone().unwrap_or_default();
    Ok(Some(LesionAnnotation::new(mask, pirads)?))
}
