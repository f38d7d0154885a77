//! Built-in prompt templates and critic checklists, with an optional
//! on-disk override directory laid out like the bundled `assets/`.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use super::template::{PromptTemplate, TemplateError};
use crate::domain::{Element, PerElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateName {
    EncounterType,
    MdmInitial,
    CriticProblem,
    CriticData,
    CriticRisk,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::EncounterType,
        TemplateName::MdmInitial,
        TemplateName::CriticProblem,
        TemplateName::CriticData,
        TemplateName::CriticRisk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::EncounterType => "encounter_type",
            TemplateName::MdmInitial => "mdm_initial",
            TemplateName::CriticProblem => "critic_problem",
            TemplateName::CriticData => "critic_data",
            TemplateName::CriticRisk => "critic_risk",
        }
    }

    pub fn critic(element: Element) -> Self {
        match element {
            Element::Problem => TemplateName::CriticProblem,
            Element::Data => TemplateName::CriticData,
            Element::Risk => TemplateName::CriticRisk,
        }
    }

    fn builtin_source(self) -> &'static str {
        match self {
            TemplateName::EncounterType => include_str!("../../assets/templates/encounter_type.tmpl"),
            TemplateName::MdmInitial => include_str!("../../assets/templates/mdm_initial.tmpl"),
            TemplateName::CriticProblem => include_str!("../../assets/templates/critic_problem.tmpl"),
            TemplateName::CriticData => include_str!("../../assets/templates/critic_data.tmpl"),
            TemplateName::CriticRisk => include_str!("../../assets/templates/critic_risk.tmpl"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn builtin_checklist(element: Element) -> &'static str {
    match element {
        Element::Problem => include_str!("../../assets/checklists/problem.txt"),
        Element::Data => include_str!("../../assets/checklists/data.txt"),
        Element::Risk => include_str!("../../assets/checklists/risk.txt"),
    }
}

#[derive(Debug, Error)]
pub enum TemplateSetError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("template `{template}` must use placeholder `{placeholder}`")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Placeholders each template must reference somewhere.
fn expected_placeholders(name: TemplateName) -> &'static [&'static str] {
    match name {
        TemplateName::EncounterType => &["soap_note", "patient_type", "age_years", "format_instructions"],
        TemplateName::MdmInitial => &["text", "few_shot_examples", "additional_info", "format_instructions"],
        TemplateName::CriticData => &[
            "checklist",
            "soap_note",
            "additional_info",
            "prior_level",
            "prior_justification",
            "prior_data_items",
            "format_instructions",
        ],
        TemplateName::CriticProblem | TemplateName::CriticRisk => &[
            "checklist",
            "soap_note",
            "additional_info",
            "prior_level",
            "prior_justification",
            "format_instructions",
        ],
    }
}

/// The five templates plus the per-element critic checklists.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: Vec<(TemplateName, PromptTemplate)>,
    checklists: PerElement<String>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::build(|name| Ok(name.builtin_source().to_string()), |e| Ok(builtin_checklist(e).to_string()))
            .expect("bundled templates are valid")
    }

    /// Load `templates/<name>.tmpl` and `checklists/<element>.txt` from
    /// `dir`, falling back to the bundled copy for any missing file.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateSetError> {
        let read = |path: std::path::PathBuf, fallback: &str| -> Result<String, TemplateSetError> {
            match std::fs::read_to_string(&path) {
                Ok(text) => Ok(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fallback.to_string()),
                Err(source) => Err(TemplateSetError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        Self::build(
            |name| read(dir.join("templates").join(format!("{name}.tmpl")), name.builtin_source()),
            |e| read(dir.join("checklists").join(format!("{}.txt", e.as_str())), builtin_checklist(e)),
        )
    }

    fn build(
        mut template_source: impl FnMut(TemplateName) -> Result<String, TemplateSetError>,
        mut checklist_source: impl FnMut(Element) -> Result<String, TemplateSetError>,
    ) -> Result<Self, TemplateSetError> {
        let mut templates = Vec::new();
        for name in TemplateName::ALL {
            let template = PromptTemplate::parse_asset(name.as_str(), &template_source(name)?)?;
            let used = template.placeholders();
            if let Some(missing) = expected_placeholders(name).iter().find(|p| !used.contains(**p)) {
                return Err(TemplateSetError::MissingPlaceholder {
                    template: name.to_string(),
                    placeholder: missing.to_string(),
                });
            }
            templates.push((name, template));
        }
        let checklists = PerElement::new(
            checklist_source(Element::Problem)?.trim_end().to_string(),
            checklist_source(Element::Data)?.trim_end().to_string(),
            checklist_source(Element::Risk)?.trim_end().to_string(),
        );
        Ok(Self { templates, checklists })
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self
            .templates
            .iter()
            .find(|(n, _)| *n == name)
            .expect("every template name is loaded")
            .1
    }

    pub fn checklist(&self, element: Element) -> &str {
        self.checklists.get(element)
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}
