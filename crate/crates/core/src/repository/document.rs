//! The per-model, per-printer/material metadata document and its compact
//! JSON encoding.
//!
//! Cells use one-letter keys and values are rounded to one decimal so that a
//! fully sliced 16×16 document stays around 12 KB:
//!
//! ```json
//! {"schema_version":1,"model_id":"…","printer_id":"…","material_id":"…",
//!  "axes":{"resolutions":[…],"scales":[…]},
//!  "cells":[{"r":0,"s":0,"t":1320.0,"m":4480.0,"st":"s"},
//!           {"r":0,"s":1,"t":1100.2,"m":3712.9,"st":"i","a":2.4}]}
//! ```

use std::collections::HashSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::grid::{CellIndex, GridAxes, SliceGrid};
use crate::slicer::{ResultStatus, SlicingResult};

use super::RepositoryError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataDocument {
    pub schema_version: u32,
    pub model_id: String,
    pub printer_id: String,
    pub material_id: String,
    pub axes: GridAxes,
    pub cells: Vec<CellRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    #[serde(rename = "r")]
    pub r_idx: usize,
    #[serde(rename = "s")]
    pub s_idx: usize,
    #[serde(rename = "t", serialize_with = "one_decimal")]
    pub time_s: f64,
    #[serde(rename = "m", serialize_with = "one_decimal")]
    pub material_mm3: f64,
    #[serde(rename = "st", with = "status_code")]
    pub status: ResultStatus,
    #[serde(rename = "a", default, skip_serializing_if = "Option::is_none", serialize_with = "opt_one_decimal")]
    pub accuracy_pct: Option<f64>,
}

impl CellRecord {
    pub fn cell(&self) -> CellIndex {
        CellIndex::new(self.r_idx, self.s_idx)
    }

    pub fn result(&self) -> SlicingResult {
        SlicingResult {
            print_time_s: self.time_s,
            material_mm3: self.material_mm3,
            status: self.status,
            accuracy_pct: self.accuracy_pct,
        }
    }

    pub fn from_result(cell: CellIndex, result: &SlicingResult) -> Self {
        Self {
            r_idx: cell.r,
            s_idx: cell.s,
            time_s: round1(result.print_time_s),
            material_mm3: round1(result.material_mm3),
            status: result.status,
            accuracy_pct: result.accuracy_pct.map(round1),
        }
    }
}

/// Rounds to one decimal; the stored value then prints with at most one decimal.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn one_decimal<S: Serializer>(x: &f64, ser: S) -> Result<S::Ok, S::Error> {
    ser.serialize_f64(round1(*x))
}

fn opt_one_decimal<S: Serializer>(x: &Option<f64>, ser: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser.serialize_some(&round1(*v)),
        None => ser.serialize_none(),
    }
}

mod status_code {
    use super::*;

    pub fn serialize<S: Serializer>(status: &ResultStatus, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(match status {
            ResultStatus::Sliced => "s",
            ResultStatus::Interpolated => "i",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<ResultStatus, D::Error> {
        let code = String::deserialize(de)?;
        match code.as_str() {
            "s" | "sliced" => Ok(ResultStatus::Sliced),
            "i" | "interpolated" => Ok(ResultStatus::Interpolated),
            other => Err(serde::de::Error::unknown_variant(other, &["s", "i"])),
        }
    }
}

impl MetadataDocument {
    /// A document without axes or cells, handed out for models that have not
    /// been sliced for a printer/material yet.
    pub fn empty(model_id: &str, printer_id: &str, material_id: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model_id: model_id.to_owned(),
            printer_id: printer_id.to_owned(),
            material_id: material_id.to_owned(),
            axes: GridAxes { resolutions: Vec::new(), scales: Vec::new() },
            cells: Vec::new(),
        }
    }

    pub fn from_grid(model_id: &str, printer_id: &str, material_id: &str, grid: &SliceGrid) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model_id: model_id.to_owned(),
            printer_id: printer_id.to_owned(),
            material_id: material_id.to_owned(),
            axes: grid.axes().clone(),
            cells: grid.populated().map(|(c, r)| CellRecord::from_result(c, r)).collect(),
        }
    }

    pub fn to_grid(&self) -> Result<SliceGrid, RepositoryError> {
        self.validate()?;
        let mut grid = SliceGrid::new(self.axes.clone());
        for record in &self.cells {
            grid.set(record.cell(), record.result())?;
        }
        Ok(grid)
    }

    /// Checks cell uniqueness, index ranges and the accuracy/status pairing.
    pub fn validate(&self) -> Result<(), RepositoryError> {
        let mut seen = HashSet::with_capacity(self.cells.len());
        for record in &self.cells {
            self.axes.check(record.cell())?;
            if !seen.insert(record.cell()) {
                return Err(RepositoryError::InvalidDocument(format!(
                    "cell ({}, {}) appears twice",
                    record.r_idx, record.s_idx
                )));
            }
            if record.accuracy_pct.is_some() != (record.status == ResultStatus::Interpolated) {
                return Err(RepositoryError::InvalidDocument(format!(
                    "cell ({}, {}): accuracy must be present exactly on interpolated cells",
                    record.r_idx, record.s_idx
                )));
            }
            if !(record.time_s >= 0.0 && record.material_mm3 >= 0.0) {
                return Err(RepositoryError::InvalidDocument(format!(
                    "cell ({}, {}): negative or missing values",
                    record.r_idx, record.s_idx
                )));
            }
        }
        Ok(())
    }

    pub fn has_axes(&self) -> bool {
        !self.axes.is_empty()
    }

    pub fn sliced_count(&self) -> usize {
        self.cells.iter().filter(|c| c.status == ResultStatus::Sliced).count()
    }

    pub fn interpolated_count(&self) -> usize {
        self.cells.iter().filter(|c| c.status == ResultStatus::Interpolated).count()
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("document serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, RepositoryError> {
        let doc: Self = serde_json::from_slice(bytes).map_err(|e| RepositoryError::InvalidDocument(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }
}
