use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EnrollError, Result};

pub const DIMENSIONLESS: &str = "dimensionless";

const DEFAULT_UNITS: &str = include_str!("data/units.json");

/// One row of `units.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEntry {
    pub surface: String,
    pub dimension: String,
    /// Multiplier into the base unit.
    pub scale: f64,
    pub base: String,
}

/// Surface form → (dimension, scale to base unit).
///
/// The canonical id of a unit is the first surface form in file order with
/// the same dimension and scale, so `milligrams` canonicalizes to `mg`.
#[derive(Debug, Clone)]
pub struct UnitTable {
    entries: Vec<UnitEntry>,
    by_surface: HashMap<String, usize>,
    canonical: Vec<usize>,
}

impl UnitTable {
    pub fn from_entries(entries: Vec<UnitEntry>) -> Result<Self> {
        let mut by_surface = HashMap::new();
        let mut canonical = Vec::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.surface.is_empty() || e.dimension.is_empty() {
                return Err(EnrollError::Validation(format!("unit entry {i} has empty fields")));
            }
            if !(e.scale.is_finite() && e.scale > 0.0) {
                return Err(EnrollError::Validation(format!(
                    "unit `{}` has non-positive scale {}",
                    e.surface, e.scale
                )));
            }
            if by_surface.insert(e.surface.to_lowercase(), i).is_some() {
                return Err(EnrollError::DuplicateId {
                    kind: "unit",
                    id: e.surface.clone(),
                });
            }
            let first = entries[..i]
                .iter()
                .position(|p| p.dimension == e.dimension && p.scale == e.scale)
                .unwrap_or(i);
            canonical.push(first);
        }
        Ok(Self {
            entries,
            by_surface,
            canonical,
        })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_entries(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path).map_err(|e| EnrollError::io(path, e))?;
        Self::from_json(&json)
    }

    pub fn entries(&self) -> &[UnitEntry] {
        &self.entries
    }

    pub fn lookup(&self, surface: &str) -> Option<&UnitEntry> {
        self.index(surface).map(|i| &self.entries[i])
    }

    fn index(&self, surface: &str) -> Option<usize> {
        self.by_surface
            .get(surface)
            .or_else(|| self.by_surface.get(&surface.to_lowercase()))
            .copied()
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.index(surface).is_some()
    }

    pub fn canonical(&self, surface: &str) -> Option<&str> {
        self.index(surface)
            .map(|i| self.entries[self.canonical[i]].surface.as_str())
    }

    /// Converts `value` in `surface` units to the base unit of its dimension.
    pub fn normalize(&self, value: f64, surface: &str) -> Result<(f64, &str)> {
        let e = self
            .lookup(surface)
            .ok_or_else(|| EnrollError::UnknownUnit(surface.to_string()))?;
        Ok((value * e.scale, e.dimension.as_str()))
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, base_value: f64, surface: &str) -> Result<f64> {
        let e = self
            .lookup(surface)
            .ok_or_else(|| EnrollError::UnknownUnit(surface.to_string()))?;
        Ok(base_value / e.scale)
    }
}

impl Default for UnitTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_UNITS).expect("bundled unit table is valid")
    }
}
