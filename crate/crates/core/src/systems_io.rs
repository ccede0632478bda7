//! JSON loading of system definitions.
//!
//! The document is an array of objects with keys `"A"`, `"C"`, `"Q"`, `"R"`
//! and `"Pi"`, each a row-major nested array of numbers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti_estimation::LinearSystem;

const BUNDLED: &str = include_str!("../fixtures/three_systems.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Pi")]
    pub pi: Vec<Vec<f64>>,
}

fn to_matrix(system: usize, field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(Error::Validation {
            system,
            field,
            reason: "matrix is empty".into(),
        });
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::Validation {
            system,
            field,
            reason: format!("row {bad} has {} entries, expected {ncols}", rows[bad].len()),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl SystemSpec {
    pub fn build(&self, index: usize) -> Result<LinearSystem> {
        LinearSystem::validated(
            index,
            to_matrix(index, "A", &self.a)?,
            to_matrix(index, "C", &self.c)?,
            to_matrix(index, "Q", &self.q)?,
            to_matrix(index, "R", &self.r)?,
            to_matrix(index, "Pi", &self.pi)?,
        )
    }
}

/// Parses and validates a system document.
pub fn parse_systems(json: &str) -> Result<Vec<LinearSystem>> {
    let specs: Vec<SystemSpec> = serde_json::from_str(json)?;
    if specs.is_empty() {
        return Err(Error::invalid("system document contains no systems"));
    }
    specs.iter().enumerate().map(|(i, s)| s.build(i)).collect()
}

/// The three unstable second-order processes used by the reference experiment.
pub fn bundled_systems() -> Vec<LinearSystem> {
    parse_systems(BUNDLED).expect("bundled fixture is valid")
}

pub fn bundled_systems_json() -> &'static str {
    BUNDLED
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixture_loads() {
        let systems = bundled_systems();
        assert_eq!(systems.len(), 3);
        assert!(systems.iter().all(|s| s.is_unstable()));
        assert_eq!(systems[2].a()[(0, 1)], 0.6);
    }

    #[test]
    fn errors_name_index_and_field() {
        let doc = r#"[
            {"A": [[2.0]], "C": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "Pi": [[0.0]]},
            {"A": [[2.0]], "C": [[1.0]], "Q": [[1.0]], "R": [[1.0, 0.0]], "Pi": [[0.0]]}
        ]"#;
        match parse_systems(doc) {
            Err(Error::Validation { system: 1, field: "R", .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let ragged = r#"[{"A": [[2.0, 1.0], [0.0]], "C": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "Pi": [[0.0]]}]"#;
        assert!(matches!(
            parse_systems(ragged),
            Err(Error::Validation { system: 0, field: "A", .. })
        ));
    }
}
