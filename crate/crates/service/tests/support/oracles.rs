//! Independent reference implementations for the acceptance checks.

use std::collections::BTreeMap;

use emcoder_core::domain::ComplexityLevel;

pub const LEVELS: [ComplexityLevel; 4] = [
    ComplexityLevel::Straightforward,
    ComplexityLevel::Low,
    ComplexityLevel::Moderate,
    ComplexityLevel::High,
];

/// Highest level that at least two of the three elements meet or exceed.
pub fn two_of_three(levels: [ComplexityLevel; 3]) -> ComplexityLevel {
    let mut best = ComplexityLevel::Straightforward;
    for candidate in LEVELS {
        if levels.iter().filter(|l| **l >= candidate).count() >= 2 {
            best = candidate;
        }
    }
    best
}

/// Most frequent level; the lowest level wins a tie.
pub fn mode_lowest_tie(votes: &[ComplexityLevel]) -> ComplexityLevel {
    let mut best = None;
    let mut best_count = 0;
    for candidate in LEVELS {
        let count = votes.iter().filter(|v| **v == candidate).count();
        if count > best_count {
            best = Some(candidate);
            best_count = count;
        }
    }
    best.expect("non-empty votes")
}

/// Data complexity by cell, transcribed by hand. One row per count of
/// unique tests and documents (0..=5); the eight columns enumerate
/// (historian, interpretation, discussion) in binary order 000..111.
/// M = minimal or none, L = limited, O = moderate, E = extensive.
pub const DATA_TABLE: [&str; 6] = [
    "MOOELOOE", // 0 tests or documents
    "MOOELOOE", // 1
    "LOOEOEEE", // 2
    "OEEEOEEE", // 3
    "OEEEOEEE", // 4
    "OEEEOEEE", // 5
];

pub fn data_cell(count: usize, historian: bool, interpretation: bool, discussion: bool) -> ComplexityLevel {
    let column = (usize::from(historian) << 2) | (usize::from(interpretation) << 1) | usize::from(discussion);
    match DATA_TABLE[count].as_bytes()[column] {
        b'M' => ComplexityLevel::Straightforward,
        b'L' => ComplexityLevel::Low,
        b'O' => ComplexityLevel::Moderate,
        b'E' => ComplexityLevel::High,
        other => panic!("bad table cell {other}"),
    }
}

/// Cosine ranking by full scan: similarity descending, then id ascending.
pub fn brute_force_top(store: &BTreeMap<String, Vec<f32>>, query: &[f32], n: usize, exclude: Option<&str>) -> Vec<String> {
    let norm = |v: &[f32]| v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, String)> = store
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            let denom = norm(v) * norm(query);
            (if denom == 0.0 { 0.0 } else { dot / denom }, id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, id)| id).collect()
}

/// Mean and n - 1 standard deviation, two-pass.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
