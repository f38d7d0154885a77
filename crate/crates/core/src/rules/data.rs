use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::ComplexityLevel;

/// What a data item documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DataEvidenceKind {
    ExternalNoteReviewed,
    TestResultReviewed,
    TestOrdered,
    IndependentHistorian,
    IndependentInterpretation,
    DiscussionOfManagement,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error("unknown data evidence kind `{0}`")]
    UnknownKind(String),
    #[error("data evidence description is empty")]
    EmptyDescription,
}

impl DataEvidenceKind {
    pub const ALL: [DataEvidenceKind; 6] = [
        DataEvidenceKind::ExternalNoteReviewed,
        DataEvidenceKind::TestResultReviewed,
        DataEvidenceKind::TestOrdered,
        DataEvidenceKind::IndependentHistorian,
        DataEvidenceKind::IndependentInterpretation,
        DataEvidenceKind::DiscussionOfManagement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DataEvidenceKind::ExternalNoteReviewed => "ExternalNoteReviewed",
            DataEvidenceKind::TestResultReviewed => "TestResultReviewed",
            DataEvidenceKind::TestOrdered => "TestOrdered",
            DataEvidenceKind::IndependentHistorian => "IndependentHistorian",
            DataEvidenceKind::IndependentInterpretation => "IndependentInterpretation",
            DataEvidenceKind::DiscussionOfManagement => "DiscussionOfManagement",
        }
    }

    /// Tests and documents: the items that combine within category 1.
    pub fn is_test_or_document(self) -> bool {
        matches!(
            self,
            DataEvidenceKind::ExternalNoteReviewed
                | DataEvidenceKind::TestResultReviewed
                | DataEvidenceKind::TestOrdered
        )
    }
}

impl fmt::Display for DataEvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataEvidenceKind {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let kind = match key.as_str() {
            "externalnotereviewed" | "externalnote" | "reviewofexternalnotes" | "reviewofpriorexternalnotes" => {
                DataEvidenceKind::ExternalNoteReviewed
            }
            "testresultreviewed" | "testresult" | "reviewoftestresults" | "reviewofresults" => {
                DataEvidenceKind::TestResultReviewed
            }
            "testordered" | "ordertest" | "orderingoftest" | "orderingofuniquetest" => DataEvidenceKind::TestOrdered,
            "independenthistorian" | "historian" => DataEvidenceKind::IndependentHistorian,
            "independentinterpretation" | "independentinterpretationoftests" => {
                DataEvidenceKind::IndependentInterpretation
            }
            "discussionofmanagement" | "discussion" | "discussionofmanagementortestinterpretation" => {
                DataEvidenceKind::DiscussionOfManagement
            }
            _ => return Err(EvidenceError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

impl Serialize for DataEvidenceKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DataEvidenceKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// One reviewed, ordered or discussed data item.
///
/// `unique_key` identifies the underlying test, order or document; two items
/// with the same key count once. When a key is not supplied it is derived
/// from the kind and the normalized description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataEvidenceItem {
    pub kind: DataEvidenceKind,
    pub description: String,
    pub unique_key: String,
}

impl DataEvidenceItem {
    pub fn new(kind: DataEvidenceKind, description: impl Into<String>) -> Result<Self, EvidenceError> {
        let description = description.into();
        let unique_key = derive_key(kind, &description);
        Self::with_key(kind, description, unique_key)
    }

    pub fn with_key(
        kind: DataEvidenceKind,
        description: impl Into<String>,
        unique_key: impl Into<String>,
    ) -> Result<Self, EvidenceError> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err(EvidenceError::EmptyDescription);
        }
        let mut unique_key = unique_key.into();
        if unique_key.trim().is_empty() {
            unique_key = derive_key(kind, &description);
        }
        Ok(Self {
            kind,
            description,
            unique_key,
        })
    }
}

fn derive_key(kind: DataEvidenceKind, description: &str) -> String {
    // case and punctuation are ignored, so "CBC" and "c.b.c" are one test
    let folded: String = description
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect();
    format!("{}:{}", kind.as_str(), folded)
}

impl<'de> Deserialize<'de> for DataEvidenceItem {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            #[serde(alias = "type")]
            kind: DataEvidenceKind,
            #[serde(alias = "item", alias = "name")]
            description: String,
            #[serde(default)]
            unique_key: String,
        }
        let r = Repr::deserialize(deserializer)?;
        DataEvidenceItem::with_key(r.kind, r.description, r.unique_key).map_err(serde::de::Error::custom)
    }
}

/// A deduplicated set of data items.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DataEvidence {
    items: BTreeMap<String, DataEvidenceItem>,
}

impl DataEvidence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an item; an item whose key is already present is ignored.
    /// Returns whether the item was new.
    pub fn insert(&mut self, item: DataEvidenceItem) -> bool {
        if self.items.contains_key(&item.unique_key) {
            return false;
        }
        self.items.insert(item.unique_key.clone(), item);
        true
    }

    pub fn items(&self) -> impl Iterator<Item = &DataEvidenceItem> {
        self.items.values()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, kind: DataEvidenceKind) -> usize {
        self.items.values().filter(|i| i.kind == kind).count()
    }

    pub fn has(&self, kind: DataEvidenceKind) -> bool {
        self.items.values().any(|i| i.kind == kind)
    }

    /// Unique tests and documents reviewed or ordered.
    pub fn tests_and_documents(&self) -> usize {
        self.items.values().filter(|i| i.kind.is_test_or_document()).count()
    }
}

impl FromIterator<DataEvidenceItem> for DataEvidence {
    fn from_iter<I: IntoIterator<Item = DataEvidenceItem>>(iter: I) -> Self {
        let mut evidence = DataEvidence::new();
        for item in iter {
            evidence.insert(item);
        }
        evidence
    }
}

/// Data complexity implied by the documented evidence.
///
/// At the moderate and extensive tiers category 1 needs three unique tests,
/// documents or an independent historian; category 2 is an independent
/// interpretation and category 3 a discussion of management. Two satisfied
/// categories give `Extensive`, one gives `Moderate`. Below that, two unique
/// tests or documents, or an independent historian alone, give `Limited`.
pub fn derive_data_level(evidence: &DataEvidence) -> ComplexityLevel {
    let tests_and_docs = evidence.tests_and_documents();
    let historian = evidence.has(DataEvidenceKind::IndependentHistorian);
    let category_1 = tests_and_docs + usize::from(historian) >= 3;
    let category_2 = evidence.has(DataEvidenceKind::IndependentInterpretation);
    let category_3 = evidence.has(DataEvidenceKind::DiscussionOfManagement);
    let satisfied = [category_1, category_2, category_3].iter().filter(|c| **c).count();

    if satisfied >= 2 {
        ComplexityLevel::High
    } else if satisfied == 1 {
        ComplexityLevel::Moderate
    } else if tests_and_docs >= 2 || historian {
        ComplexityLevel::Low
    } else {
        ComplexityLevel::Straightforward
    }
}
