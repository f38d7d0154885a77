//! Decision-tree code selection driven by an editable mapping table.
//!
//! Mapping files are line oriented. `#` starts a comment. Rows under
//! `[office]` read `patient_type, mdm_level, code`; rows under `[preventive]`
//! read `patient_type, age_min, age_max, code` with inclusive bounds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{is_cpt_code, ComplexityLevel, EncounterType, PatientType};

/// Shipped default table. Office rows follow the standard 9920x/9921x
/// ladder; preventive bands are the standard 9938x/9939x age groups.
pub const DEFAULT_MAPPING: &str = include_str!("../../assets/mapping/default.cfg");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OfficeRow {
    pub patient_type: PatientType,
    pub mdm_level: ComplexityLevel,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreventiveRow {
    pub patient_type: PatientType,
    pub age_min: u32,
    pub age_max: u32,
    pub code: String,
}

impl PreventiveRow {
    pub fn contains(&self, age: u32) -> bool {
        (self.age_min..=self.age_max).contains(&age)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeMappingConfig {
    pub office_rows: Vec<OfficeRow>,
    pub preventive_rows: Vec<PreventiveRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid mapping: {0}")]
    Invalid(String),
    #[error("reading mapping file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodeSelectionError {
    #[error("encounter type `{0}` is not codeable by the mapping")]
    UncodeableEncounterType(String),
    #[error("no preventive age band covers age {0}")]
    NoAgeBand(u32),
    #[error("no office row for {patient_type} patient at {level} MDM")]
    NoOfficeRow {
        patient_type: PatientType,
        level: ComplexityLevel,
    },
}

#[derive(PartialEq)]
enum Section {
    None,
    Office,
    Preventive,
}

impl CodeMappingConfig {
    /// Parse and validate a mapping document.
    pub fn parse(text: &str) -> Result<Self, MappingError> {
        let config = Self::parse_unvalidated(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Parse without checking coverage or code invariants.
    pub fn parse_unvalidated(text: &str) -> Result<Self, MappingError> {
        let mut config = CodeMappingConfig {
            office_rows: Vec::new(),
            preventive_rows: Vec::new(),
        };
        let mut section = Section::None;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |reason: String| MappingError::Syntax { line: line_no, reason };
            if line.starts_with('[') {
                section = match line.to_ascii_lowercase().as_str() {
                    "[office]" => Section::Office,
                    "[preventive]" => Section::Preventive,
                    other => return Err(syntax(format!("unknown section {other}"))),
                };
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let patient = |s: &str| s.parse::<PatientType>().map_err(|e| syntax(e.to_string()));
            let age = |s: &str| s.parse::<u32>().map_err(|_| syntax(format!("invalid age `{s}`")));
            match section {
                Section::None => return Err(syntax("row outside of a section".into())),
                Section::Office => {
                    let [pt, level, code] = cells[..] else {
                        return Err(syntax(format!("office rows need 3 cells, got {}", cells.len())));
                    };
                    config.office_rows.push(OfficeRow {
                        patient_type: patient(pt)?,
                        mdm_level: level.parse().map_err(|e: crate::domain::LevelError| syntax(e.to_string()))?,
                        code: code.to_string(),
                    });
                }
                Section::Preventive => {
                    let [pt, min, max, code] = cells[..] else {
                        return Err(syntax(format!("preventive rows need 4 cells, got {}", cells.len())));
                    };
                    config.preventive_rows.push(PreventiveRow {
                        patient_type: patient(pt)?,
                        age_min: age(min)?,
                        age_max: age(max)?,
                        code: code.to_string(),
                    });
                }
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, MappingError> {
        let text = std::fs::read_to_string(path).map_err(|e| MappingError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Office rows cover every patient type and level exactly once,
    /// preventive bands are sorted and disjoint per patient type, and every
    /// code is a five-digit CPT code.
    pub fn validate(&self) -> Result<(), MappingError> {
        let invalid = |s: String| Err(MappingError::Invalid(s));
        for pt in [PatientType::New, PatientType::Established] {
            for level in ComplexityLevel::ALL {
                let n = self
                    .office_rows
                    .iter()
                    .filter(|r| r.patient_type == pt && r.mdm_level == level)
                    .count();
                if n != 1 {
                    return invalid(format!("{n} office rows for ({pt}, {level}), expected exactly 1"));
                }
            }
            let bands: Vec<&PreventiveRow> = self.preventive_rows.iter().filter(|r| r.patient_type == pt).collect();
            for b in &bands {
                if b.age_min > b.age_max {
                    return invalid(format!("preventive band {}..{} for {pt} is empty", b.age_min, b.age_max));
                }
            }
            for pair in bands.windows(2) {
                if pair[0].age_max >= pair[1].age_min {
                    return invalid(format!(
                        "preventive bands for {pt} overlap or are unsorted: {}-{} then {}-{}",
                        pair[0].age_min, pair[0].age_max, pair[1].age_min, pair[1].age_max
                    ));
                }
            }
        }
        let codes = self
            .office_rows
            .iter()
            .map(|r| &r.code)
            .chain(self.preventive_rows.iter().map(|r| &r.code));
        for code in codes {
            if !is_cpt_code(code) {
                return invalid(format!("`{code}` is not a five-digit CPT code"));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::from("[office]\n");
        for r in &self.office_rows {
            out.push_str(&format!("{}, {}, {}\n", r.patient_type, r.mdm_level, r.code));
        }
        out.push_str("\n[preventive]\n");
        for r in &self.preventive_rows {
            out.push_str(&format!("{}, {}, {}, {}\n", r.patient_type, r.age_min, r.age_max, r.code));
        }
        out
    }

    pub fn office_code(&self, patient_type: PatientType, level: ComplexityLevel) -> Option<&str> {
        self.office_rows
            .iter()
            .find(|r| r.patient_type == patient_type && r.mdm_level == level)
            .map(|r| r.code.as_str())
    }

    pub fn preventive_row(&self, patient_type: PatientType, age: u32) -> Option<&PreventiveRow> {
        self.preventive_rows
            .iter()
            .find(|r| r.patient_type == patient_type && r.contains(age))
    }
}

impl Default for CodeMappingConfig {
    fn default() -> Self {
        CodeMappingConfig::parse(DEFAULT_MAPPING).expect("bundled mapping is valid")
    }
}

/// Walk the decision tree: office visits are coded by patient type and MDM
/// level, preventive visits by patient type and age band (MDM is ignored).
pub fn select_cpt_code(
    encounter_type: &EncounterType,
    patient_type: PatientType,
    mdm_level: ComplexityLevel,
    age_years: u32,
    config: &CodeMappingConfig,
) -> Result<String, CodeSelectionError> {
    match encounter_type {
        EncounterType::OfficeOrOutpatient => config
            .office_code(patient_type, mdm_level)
            .map(str::to_string)
            .ok_or(CodeSelectionError::NoOfficeRow {
                patient_type,
                level: mdm_level,
            }),
        EncounterType::PreventiveMedicine => config
            .preventive_row(patient_type, age_years)
            .map(|r| r.code.clone())
            .ok_or(CodeSelectionError::NoAgeBand(age_years)),
        EncounterType::Other(label) => Err(CodeSelectionError::UncodeableEncounterType(label.clone())),
    }
}
