//! End-to-end coding of one encounter: retrieval, K independent
//! classify-and-critique passes, per-element vote, two-of-three
//! combination, encounter type and decision tree.

mod report;

use futures::future::join_all;
use thiserror::Error;

use crate::audit::{AuditLog, AuditRecord, AuditStatus, Stage};
use crate::domain::{CodingResult, ComplexityLevel, Element, Encounter, MdmAssessment, PerElement};
use crate::llm::{CriticCall, GenerationParams, LlmClient, LlmError};
use crate::retrieval::{Exemplar, ExemplarStore};
use crate::rules::{combine_mdm, majority_vote, select_cpt_code, CodeMappingConfig, CodeSelectionError};

pub use report::justify_result;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k_votes: usize,
    pub rci_rounds: usize,
    /// Exemplars per prompt; 0 runs zero-shot.
    pub top_n: usize,
    pub params: GenerationParams,
    pub leave_one_out: bool,
    pub mapping: CodeMappingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_votes: 3,
            rci_rounds: 1,
            top_n: 3,
            params: GenerationParams::default(),
            leave_one_out: true,
            mapping: CodeMappingConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_votes == 0 {
            return Err("k_votes must be at least 1".into());
        }
        if !(self.params.temperature >= 0.0 && self.params.temperature.is_finite()) {
            return Err("temperature must be a finite non-negative number".into());
        }
        if self.params.max_output_tokens == 0 {
            return Err("max_output_tokens must be positive".into());
        }
        Ok(())
    }

    /// Passes that must succeed for a vote to go ahead.
    pub fn required_passes(&self) -> usize {
        self.k_votes.div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineErrorKind {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("exemplar retrieval failed: {0}")]
    Retrieval(String),
    #[error("only {succeeded} of {k} passes succeeded, {required} required: {first_error}")]
    PipelineFailure {
        succeeded: usize,
        required: usize,
        k: usize,
        first_error: LlmError,
    },
    #[error(transparent)]
    EncounterType(LlmError),
    #[error(transparent)]
    CodeSelection(#[from] CodeSelectionError),
}

/// A failed coding run with the audit trail recorded up to the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind}")]
pub struct PipelineError {
    pub kind: PipelineErrorKind,
    pub audit: Vec<crate::audit::AuditRecord>,
}

impl PipelineError {
    fn new(kind: PipelineErrorKind, audit: AuditLog) -> Self {
        Self {
            kind,
            audit: audit.into_records(),
        }
    }

    /// True when the failure came from the provider rather than the input.
    pub fn is_provider_failure(&self) -> bool {
        matches!(
            self.kind,
            PipelineErrorKind::PipelineFailure { .. } | PipelineErrorKind::EncounterType(_)
        )
    }
}

fn level_list(levels: &[ComplexityLevel]) -> String {
    levels.iter().map(|l| l.name()).collect::<Vec<_>>().join(", ")
}

/// Immutable after construction; one pipeline can code many encounters
/// concurrently.
#[derive(Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    client: LlmClient,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, client: LlmClient) -> Result<Self, PipelineError> {
        config
            .validate()
            .map_err(|e| PipelineError::new(PipelineErrorKind::InvalidConfig(e), AuditLog::new()))?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    /// Initial classification followed by `rci_rounds` critic rounds per
    /// element. A failed critic call keeps the element's pre-critique value
    /// and records a degraded stage; only a failed initial call fails the
    /// pass.
    pub async fn run_single_pass(
        &self,
        encounter: &Encounter,
        exemplars: &[Exemplar],
        pass: usize,
        audit: &mut AuditLog,
    ) -> Result<MdmAssessment, LlmError> {
        let params = &self.config.params;
        let mut current = match self.client.classify_mdm_initial(encounter, exemplars, params, pass, audit).await {
            Ok(a) => a,
            Err(e) => {
                audit.push(AuditRecord::new(Stage::Pass, AuditStatus::Failed, e.to_string()).with_pass(Some(pass)));
                return Err(e);
            }
        };
        let rounds = self.config.rci_rounds;
        for element in Element::ALL {
            for round in 0..rounds {
                let position = CriticCall { pass, round, rounds };
                match self
                    .client
                    .critique_element(element, &current, encounter, params, position, audit)
                    .await
                {
                    Ok(critique) => current = critique.apply(&current),
                    Err(e) => {
                        let detail = format!(
                            "kept pre-critique {} level {}: {e}",
                            element.as_str(),
                            current.level(element).display_name(element)
                        );
                        audit.push(
                            AuditRecord::new(Stage::critic(element), AuditStatus::Degraded, detail)
                                .with_pass(Some(pass))
                                .with_round(Some(round)),
                        );
                        break;
                    }
                }
            }
        }
        let levels = current.levels();
        audit.push(
            AuditRecord::new(
                Stage::Pass,
                AuditStatus::Ok,
                format!("problem={} data={} risk={}", levels.problem, levels.data, levels.risk),
            )
            .with_pass(Some(pass)),
        );
        Ok(current)
    }

    pub async fn retrieve(
        &self,
        encounter: &Encounter,
        store: &ExemplarStore,
        audit: &mut AuditLog,
    ) -> Result<Vec<Exemplar>, PipelineErrorKind> {
        if self.config.top_n == 0 {
            audit.push(AuditRecord::new(Stage::Retrieval, AuditStatus::Ok, "zero-shot: top_n = 0"));
            return Ok(Vec::new());
        }
        let exclude = self.config.leave_one_out.then_some(encounter.id.as_str());
        match store.query_top_n(encounter.soap.raw(), self.config.top_n, exclude).await {
            Ok(exemplars) => {
                let ids: Vec<&str> = exemplars.iter().map(|e| e.id.as_str()).collect();
                audit.push(AuditRecord::new(
                    Stage::Retrieval,
                    AuditStatus::Ok,
                    format!("{} exemplars: [{}]", ids.len(), ids.join(", ")),
                ));
                Ok(exemplars)
            }
            Err(e) => {
                audit.push(AuditRecord::new(Stage::Retrieval, AuditStatus::Failed, e.to_string()));
                Err(PipelineErrorKind::Retrieval(e.to_string()))
            }
        }
    }

    pub async fn code_encounter(&self, encounter: &Encounter, store: &ExemplarStore) -> Result<CodingResult, PipelineError> {
        let mut audit = AuditLog::new();
        let exemplars = match self.retrieve(encounter, store, &mut audit).await {
            Ok(e) => e,
            Err(kind) => return Err(PipelineError::new(kind, audit)),
        };

        // fan out: every pass gets its own log, merged back in pass order
        let passes = join_all((0..self.config.k_votes).map(|pass| {
            let exemplars = &exemplars;
            async move {
                let mut log = AuditLog::new();
                let outcome = self.run_single_pass(encounter, exemplars, pass, &mut log).await;
                (outcome, log)
            }
        }))
        .await;
        let mut succeeded: Vec<MdmAssessment> = Vec::new();
        let mut first_error = None;
        for (outcome, log) in passes {
            audit.append(log);
            match outcome {
                Ok(a) => succeeded.push(a),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        let k = self.config.k_votes;
        let required = self.config.required_passes();
        if succeeded.len() < required {
            let kind = PipelineErrorKind::PipelineFailure {
                succeeded: succeeded.len(),
                required,
                k,
                first_error: first_error.expect("a pass failed"),
            };
            audit.push(AuditRecord::new(Stage::Vote, AuditStatus::Failed, kind.to_string()));
            return Err(PipelineError::new(kind, audit));
        }
        if succeeded.len() < k {
            audit.push(AuditRecord::new(
                Stage::Vote,
                AuditStatus::Degraded,
                format!("voting over {} of {k} passes", succeeded.len()),
            ));
        }

        let votes: PerElement<Vec<ComplexityLevel>> =
            PerElement::from_fn(|e| succeeded.iter().map(|a| a.level(e)).collect());
        let voted = votes.map(|_, v| majority_vote(v).expect("at least one pass succeeded"));
        for (element, list) in votes.iter() {
            audit.push(AuditRecord::new(
                Stage::Vote,
                AuditStatus::Ok,
                format!("{}: [{}] -> {}", element.as_str(), level_list(list), voted.get(element)),
            ));
        }
        // each element is taken from the first pass agreeing with the vote
        let agreeing = |e: Element| {
            succeeded
                .iter()
                .find(|a| a.level(e) == *voted.get(e))
                .expect("the voted level came from some pass")
        };
        let final_elements = MdmAssessment {
            elements: PerElement::from_fn(|e| agreeing(e).element(e).clone()),
            data_items: agreeing(Element::Data).data_items.clone(),
        };
        let mdm_level = combine_mdm(voted.problem, voted.data, voted.risk);
        audit.push(AuditRecord::new(
            Stage::Combine,
            AuditStatus::Ok,
            format!("two of three over ({}, {}, {}) -> {mdm_level}", voted.problem, voted.data, voted.risk),
        ));

        let typed = match self
            .client
            .classify_encounter_type(encounter, &self.config.params, &mut audit)
            .await
        {
            Ok(t) => t,
            Err(e) => return Err(PipelineError::new(PipelineErrorKind::EncounterType(e), audit)),
        };
        let cpt_code = match select_cpt_code(
            &typed.encounter_type,
            encounter.patient_type,
            mdm_level,
            encounter.age_years,
            &self.config.mapping,
        ) {
            Ok(code) => {
                audit.push(AuditRecord::new(
                    Stage::DecisionTree,
                    AuditStatus::Ok,
                    decision_path(&typed.encounter_type, encounter, mdm_level, &code),
                ));
                code
            }
            Err(e) => {
                audit.push(AuditRecord::new(Stage::DecisionTree, AuditStatus::Failed, e.to_string()));
                return Err(PipelineError::new(e.into(), audit));
            }
        };

        let justification = compose_justification(&final_elements, mdm_level);
        Ok(CodingResult {
            encounter_id: encounter.id.clone(),
            encounter_type: typed.encounter_type,
            encounter_type_explanation: typed.explanation,
            patient_type: encounter.patient_type,
            age_years: encounter.age_years,
            mdm_level,
            per_element_votes: votes,
            final_elements,
            cpt_code,
            justification,
            exemplar_ids: exemplars.into_iter().map(|e| e.id).collect(),
            audit: audit.into_records(),
        })
    }
}

fn decision_path(
    encounter_type: &crate::domain::EncounterType,
    encounter: &Encounter,
    mdm_level: ComplexityLevel,
    code: &str,
) -> String {
    match encounter_type {
        crate::domain::EncounterType::PreventiveMedicine => format!(
            "{} / {} / age {} -> {code}",
            encounter_type.label(),
            encounter.patient_type.as_str(),
            encounter.age_years
        ),
        _ => format!(
            "{} / {} / MDM {mdm_level} -> {code}",
            encounter_type.label(),
            encounter.patient_type.as_str()
        ),
    }
}

fn compose_justification(assessment: &MdmAssessment, mdm_level: ComplexityLevel) -> String {
    let mut out = String::new();
    for element in Element::ALL {
        let e = assessment.element(element);
        out.push_str(&format!("{}: {}. {}\n", element.title(), report::level_label(element, e.level), e.justification));
    }
    out.push_str(&format!(
        "MDM: {mdm_level}, the highest level met by at least two of the three elements."
    ));
    out
}
