use std::collections::BTreeMap;
use std::fmt::Write;

use crate::audit::Stage;
use crate::domain::{CodingResult, ComplexityLevel, Element, EncounterType};

/// Canonical level name, with the data alias alongside for the data element.
pub(crate) fn level_label(element: Element, level: ComplexityLevel) -> String {
    match element {
        Element::Data if level.data_alias() != level.name() => format!("{} ({})", level.name(), level.data_alias()),
        _ => level.name().to_string(),
    }
}

fn tally(votes: &[ComplexityLevel]) -> String {
    let mut counts: BTreeMap<ComplexityLevel, usize> = BTreeMap::new();
    for v in votes {
        *counts.entry(*v).or_default() += 1;
    }
    counts
        .iter()
        .map(|(level, n)| format!("{level} x{n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Human-readable coding report. Pure: equal results give equal bytes.
pub fn justify_result(result: &CodingResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Encounter: {}", result.encounter_id);
    let _ = writeln!(
        out,
        "Encounter type: {}{}",
        result.encounter_type.label(),
        if result.encounter_type_explanation.is_empty() {
            String::new()
        } else {
            format!(" ({})", result.encounter_type_explanation)
        }
    );
    let _ = writeln!(out, "Patient: {}, age {}", result.patient_type.as_str(), result.age_years);
    out.push('\n');

    for element in Element::ALL {
        let assessment = result.final_elements.element(element);
        let votes = result.per_element_votes.get(element);
        let _ = writeln!(out, "{}: {}", element.title(), level_label(element, assessment.level));
        let _ = writeln!(out, "  votes ({}): {}", votes.len(), tally(votes));
        if !assessment.justification.is_empty() {
            let _ = writeln!(out, "  justification: {}", assessment.justification);
        }
        for finding in &assessment.findings {
            let _ = writeln!(out, "  finding: {finding}");
        }
    }
    if !result.final_elements.data_items.is_empty() {
        let _ = writeln!(out, "Data items:");
        for item in &result.final_elements.data_items {
            let _ = writeln!(out, "  - {}: {}", item.kind.as_str(), item.description);
        }
    }
    out.push('\n');

    let levels = result.final_elements.levels();
    let _ = writeln!(
        out,
        "MDM: {} (two of three over Problem {}, Data {}, Risk {})",
        result.mdm_level, levels.problem, levels.data, levels.risk
    );
    let path = match &result.encounter_type {
        EncounterType::PreventiveMedicine => format!(
            "{} -> {} -> age {}",
            result.encounter_type.label(),
            result.patient_type.as_str(),
            result.age_years
        ),
        other => format!("{} -> {} -> MDM {}", other.label(), result.patient_type.as_str(), result.mdm_level),
    };
    let _ = writeln!(out, "Decision tree: {path}");
    let _ = writeln!(out, "CPT: {}", result.cpt_code);

    let degraded: Vec<_> = result.audit.iter().filter(|a| a.is_degraded()).collect();
    if !degraded.is_empty() {
        out.push('\n');
        let _ = writeln!(out, "Degraded stages ({}):", degraded.len());
        for record in degraded {
            let pass = record.pass.map(|p| format!(" pass {p}")).unwrap_or_default();
            let round = record.round.map(|r| format!(" round {r}")).unwrap_or_default();
            let _ = writeln!(out, "  - degraded {}{pass}{round}: {}", record.stage, record.detail);
        }
    }
    let calls = result
        .audit
        .iter()
        .filter(|a| a.template.is_some() && a.stage != Stage::Pass)
        .count();
    let _ = writeln!(out, "\nProvider calls: {calls}");
    out
}
