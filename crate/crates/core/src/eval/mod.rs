//! Exact-match accuracy at five granularities and aggregation over runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CodingResult, Element, GoldAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "CPT")]
    Cpt,
    #[serde(rename = "MDM")]
    Mdm,
    #[serde(rename = "PC")]
    Pc,
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "RC")]
    Rc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Cpt, Metric::Mdm, Metric::Pc, Metric::Dc, Metric::Rc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cpt => "CPT",
            Metric::Mdm => "MDM",
            Metric::Pc => "PC",
            Metric::Dc => "DC",
            Metric::Rc => "RC",
        }
    }

    pub fn element(self) -> Option<Element> {
        match self {
            Metric::Pc => Some(Element::Problem),
            Metric::Dc => Some(Element::Data),
            Metric::Rc => Some(Element::Risk),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("results and golds do not join: missing predictions for [{}], missing golds for [{}]", missing_predictions.join(", "), missing_golds.join(", "))]
    JoinMismatch {
        missing_predictions: Vec<String>,
        missing_golds: Vec<String>,
    },
    #[error("duplicate encounter id `{0}`")]
    DuplicateId(String),
    #[error("a run needs at least one encounter")]
    EmptyRun,
    #[error("inconsistent runs: {0}")]
    InconsistentRuns(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run_id: String,
    pub n_encounters: usize,
    pub matches: BTreeMap<Metric, usize>,
    pub acc: BTreeMap<Metric, f64>,
}

fn index_unique<T>(items: &[T], id: impl Fn(&T) -> &str) -> Result<BTreeMap<&str, &T>, EvalError> {
    let mut map = BTreeMap::new();
    for item in items {
        if map.insert(id(item), item).is_some() {
            return Err(EvalError::DuplicateId(id(item).to_string()));
        }
    }
    Ok(map)
}

/// Score one run. Gold MDM is always recomputed from the gold element levels.
pub fn score_run(run_id: &str, results: &[CodingResult], golds: &[GoldAnnotation]) -> Result<RunMetrics, EvalError> {
    let predicted = index_unique(results, |r| r.encounter_id.as_str())?;
    let gold = index_unique(golds, |g| g.encounter_id.as_str())?;
    let pred_ids: BTreeSet<&str> = predicted.keys().copied().collect();
    let gold_ids: BTreeSet<&str> = gold.keys().copied().collect();
    if pred_ids != gold_ids {
        return Err(EvalError::JoinMismatch {
            missing_predictions: gold_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
            missing_golds: pred_ids.difference(&gold_ids).map(|s| s.to_string()).collect(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut matches: BTreeMap<Metric, usize> = Metric::ALL.iter().map(|m| (*m, 0)).collect();
    for (id, g) in &gold {
        let r = predicted[id];
        let hit = |m: Metric| match m {
            Metric::Cpt => r.cpt_code == g.cpt_code,
            Metric::Mdm => r.mdm_level == g.mdm_level(),
            element_metric => {
                let e = element_metric.element().expect("element metric");
                r.final_elements.level(e) == *g.levels().get(e)
            }
        };
        for m in Metric::ALL {
            if hit(m) {
                *matches.get_mut(&m).expect("all metrics present") += 1;
            }
        }
    }
    let n = gold.len();
    let acc = matches.iter().map(|(m, c)| (*m, *c as f64 / n as f64)).collect();
    Ok(RunMetrics {
        run_id: run_id.to_string(),
        n_encounters: n,
        matches,
        acc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
}

/// Improvement over a baseline, in percentage points. The spread reported
/// is the system's own std over runs, also in points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineDelta {
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub delta_points: f64,
    pub system_std_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub runs: usize,
    pub run_ids: Vec<String>,
    pub n_encounters: usize,
    pub metrics: BTreeMap<Metric, MetricSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BTreeMap<Metric, BaselineDelta>>,
}

pub fn mean_and_sample_std(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std }
}

fn summarize(runs: &[RunMetrics], what: &str) -> Result<(usize, BTreeMap<Metric, MetricSummary>), EvalError> {
    let first = runs
        .first()
        .ok_or_else(|| EvalError::InconsistentRuns(format!("no {what} runs")))?;
    let keys: BTreeSet<Metric> = first.acc.keys().copied().collect();
    for run in runs {
        if run.n_encounters != first.n_encounters {
            return Err(EvalError::InconsistentRuns(format!(
                "{what} run `{}` has {} encounters, `{}` has {}",
                run.run_id, run.n_encounters, first.run_id, first.n_encounters
            )));
        }
        if run.acc.keys().copied().collect::<BTreeSet<_>>() != keys {
            return Err(EvalError::InconsistentRuns(format!(
                "{what} run `{}` reports different metrics",
                run.run_id
            )));
        }
    }
    let metrics = keys
        .iter()
        .map(|m| {
            let values: Vec<f64> = runs.iter().map(|r| r.acc[m]).collect();
            (*m, mean_and_sample_std(&values))
        })
        .collect();
    Ok((first.n_encounters, metrics))
}

pub fn aggregate_runs(runs: &[RunMetrics], baseline: Option<&[RunMetrics]>) -> Result<EvaluationReport, EvalError> {
    let (n_encounters, metrics) = summarize(runs, "system")?;
    let baseline = match baseline {
        None => None,
        Some(base_runs) => {
            let (_, base) = summarize(base_runs, "baseline")?;
            let mut deltas = BTreeMap::new();
            for (m, s) in &metrics {
                let b = base.get(m).ok_or_else(|| {
                    EvalError::InconsistentRuns(format!("baseline does not report {m}"))
                })?;
                deltas.insert(
                    *m,
                    BaselineDelta {
                        baseline_mean: b.mean,
                        baseline_std: b.std,
                        delta_points: (s.mean - b.mean) * 100.0,
                        system_std_points: s.std * 100.0,
                    },
                );
            }
            Some(deltas)
        }
    };
    Ok(EvaluationReport {
        runs: runs.len(),
        run_ids: runs.iter().map(|r| r.run_id.clone()).collect(),
        n_encounters,
        metrics,
        baseline,
    })
}

impl EvaluationReport {
    /// Line-oriented table, accuracies in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "runs: {}  encounters: {}", self.runs, self.n_encounters);
        match &self.baseline {
            None => {
                let _ = writeln!(out, "{:<6} {:>8} {:>8}", "metric", "mean%", "std%");
            }
            Some(_) => {
                let _ = writeln!(
                    out,
                    "{:<6} {:>8} {:>8} {:>10} {:>10} {:>10}",
                    "metric", "mean%", "std%", "base%", "delta_pts", "sys_std"
                );
            }
        }
        for (m, s) in &self.metrics {
            let _ = write!(out, "{:<6} {:>8.2} {:>8.2}", m.as_str(), s.mean * 100.0, s.std * 100.0);
            if let Some(d) = self.baseline.as_ref().and_then(|b| b.get(m)) {
                let _ = write!(
                    out,
                    " {:>10.2} {:>+10.2} {:>10.2}",
                    d.baseline_mean * 100.0,
                    d.delta_points,
                    d.system_std_points
                );
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: &str, values: [f64; 5]) -> RunMetrics {
        RunMetrics {
            run_id: id.into(),
            n_encounters: 10,
            matches: Metric::ALL.iter().zip(values).map(|(m, v)| (*m, (v * 10.0).round() as usize)).collect(),
            acc: Metric::ALL.iter().zip(values).map(|(m, v)| (*m, v)).collect(),
        }
    }

    #[test]
    fn two_run_sample_std() {
        let report = aggregate_runs(&[run("a", [0.6; 5]), run("b", [0.8; 5])], None).unwrap();
        let cpt = report.metrics[&Metric::Cpt];
        assert!((cpt.mean - 0.7).abs() < 1e-12);
        assert!((cpt.std - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_run_has_zero_std() {
        let report = aggregate_runs(&[run("a", [0.8; 5])], None).unwrap();
        assert_eq!(report.metrics[&Metric::Mdm], MetricSummary { mean: 0.8, std: 0.0 });
    }

    #[test]
    fn baseline_delta_in_points() {
        let report = aggregate_runs(&[run("s", [0.837; 5])], Some(&[run("b", [0.5; 5])])).unwrap();
        let d = report.baseline.unwrap()[&Metric::Cpt];
        assert!((d.delta_points - 33.7).abs() < 1e-9);
    }

    #[test]
    fn inconsistent_runs_rejected() {
        let mut other = run("b", [0.5; 5]);
        other.n_encounters = 9;
        assert!(matches!(
            aggregate_runs(&[run("a", [0.5; 5]), other], None),
            Err(EvalError::InconsistentRuns(_))
        ));
        let mut fewer = run("c", [0.5; 5]);
        fewer.acc.remove(&Metric::Rc);
        assert!(matches!(
            aggregate_runs(&[run("a", [0.5; 5]), fewer], None),
            Err(EvalError::InconsistentRuns(_))
        ));
        assert!(matches!(aggregate_runs(&[], None), Err(EvalError::InconsistentRuns(_))));
    }

    #[test]
    fn report_round_trips_and_tabulates() {
        let report = aggregate_runs(
            &[run("a", [0.6, 0.7, 0.8, 0.9, 1.0]), run("b", [0.3, 0.1, 0.7, 0.2, 0.9])],
            Some(&[run("x", [0.1, 0.2, 0.3, 0.4, 0.5])]),
        )
        .unwrap();
        assert_eq!(EvaluationReport::from_json(&report.to_json()).unwrap(), report);
        let table = report.to_table();
        assert!(table.contains("CPT"));
        assert_eq!(table.lines().count(), 2 + 5);
    }
}
