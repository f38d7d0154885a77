use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// One of the three MDM elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    Problem,
    Data,
    Risk,
}

impl Element {
    pub const ALL: [Element; 3] = [Element::Problem, Element::Data, Element::Risk];

    pub fn as_str(self) -> &'static str {
        match self {
            Element::Problem => "problem",
            Element::Data => "data",
            Element::Risk => "risk",
        }
    }

    /// Capitalized label used in reports.
    pub fn title(self) -> &'static str {
        match self {
            Element::Problem => "Problem",
            Element::Data => "Data",
            Element::Risk => "Risk",
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Complexity on the shared four-point MDM scale.
///
/// All three elements use the same ordinals so that levels can be compared
/// across elements. The data element has its own display names
/// (`Minimal or none`, `Limited`, `Moderate`, `Extensive`) which are aliases
/// of the same ordinals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum ComplexityLevel {
    #[default]
    Straightforward = 0,
    Low = 1,
    Moderate = 2,
    High = 3,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LevelError {
    #[error("unknown complexity level name `{0}`")]
    UnknownLevelName(String),
    #[error("complexity ordinal {0} out of range 0..=3")]
    OrdinalOutOfRange(u8),
}

impl ComplexityLevel {
    pub const ALL: [ComplexityLevel; 4] = [
        ComplexityLevel::Straightforward,
        ComplexityLevel::Low,
        ComplexityLevel::Moderate,
        ComplexityLevel::High,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ordinal: u8) -> Result<Self, LevelError> {
        Self::ALL
            .get(ordinal as usize)
            .copied()
            .ok_or(LevelError::OrdinalOutOfRange(ordinal))
    }

    /// Canonical name, shared by all elements.
    pub fn name(self) -> &'static str {
        match self {
            ComplexityLevel::Straightforward => "Straightforward",
            ComplexityLevel::Low => "Low",
            ComplexityLevel::Moderate => "Moderate",
            ComplexityLevel::High => "High",
        }
    }

    /// Display alias for the data element.
    pub fn data_alias(self) -> &'static str {
        match self {
            ComplexityLevel::Straightforward => "MinimalOrNone",
            ComplexityLevel::Low => "Limited",
            ComplexityLevel::Moderate => "Moderate",
            ComplexityLevel::High => "Extensive",
        }
    }

    /// Name under the display rule of `element`: data aliases for the data
    /// element, canonical names otherwise.
    pub fn display_name(self, element: Element) -> &'static str {
        match element {
            Element::Data => self.data_alias(),
            _ => self.name(),
        }
    }
}

impl fmt::Display for ComplexityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

fn canonical(key: &str) -> Option<ComplexityLevel> {
    match key {
        "straightforward" => Some(ComplexityLevel::Straightforward),
        "low" => Some(ComplexityLevel::Low),
        "moderate" => Some(ComplexityLevel::Moderate),
        "high" => Some(ComplexityLevel::High),
        _ => None,
    }
}

fn data_alias(key: &str) -> Option<ComplexityLevel> {
    match key {
        "minimalornone" | "minimal" | "none" => Some(ComplexityLevel::Straightforward),
        "limited" => Some(ComplexityLevel::Low),
        "moderate" => Some(ComplexityLevel::Moderate),
        "extensive" => Some(ComplexityLevel::High),
        _ => None,
    }
}

/// Resolve a level name for `element`.
///
/// Matching ignores case, whitespace and punctuation. Canonical names are
/// accepted for every element; the data aliases only for [`Element::Data`].
/// `Minimal` is accepted for problem and risk as it labels their lowest row.
pub fn level_from_name(name: &str, element: Element) -> Result<ComplexityLevel, LevelError> {
    let key = normalize(name);
    let found = canonical(&key).or_else(|| match element {
        Element::Data => data_alias(&key),
        Element::Problem | Element::Risk => (key == "minimal").then_some(ComplexityLevel::Straightforward),
    });
    found.ok_or_else(|| LevelError::UnknownLevelName(name.to_string()))
}

/// Element-agnostic parse accepting every known name and alias.
impl FromStr for ComplexityLevel {
    type Err = LevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize(s);
        canonical(&key)
            .or_else(|| data_alias(&key))
            .ok_or_else(|| LevelError::UnknownLevelName(s.to_string()))
    }
}

impl Serialize for ComplexityLevel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ComplexityLevel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Name(String),
            Ordinal(u8),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Name(name) => name.parse().map_err(serde::de::Error::custom),
            Repr::Ordinal(o) => ComplexityLevel::from_ordinal(o).map_err(serde::de::Error::custom),
        }
    }
}

/// A value for each of the three MDM elements.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerElement<T> {
    pub problem: T,
    pub data: T,
    pub risk: T,
}

impl<T> PerElement<T> {
    pub fn new(problem: T, data: T, risk: T) -> Self {
        Self { problem, data, risk }
    }

    pub fn from_fn(mut f: impl FnMut(Element) -> T) -> Self {
        Self {
            problem: f(Element::Problem),
            data: f(Element::Data),
            risk: f(Element::Risk),
        }
    }

    pub fn get(&self, element: Element) -> &T {
        match element {
            Element::Problem => &self.problem,
            Element::Data => &self.data,
            Element::Risk => &self.risk,
        }
    }

    pub fn get_mut(&mut self, element: Element) -> &mut T {
        match element {
            Element::Problem => &mut self.problem,
            Element::Data => &mut self.data,
            Element::Risk => &mut self.risk,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(Element, &T) -> U) -> PerElement<U> {
        PerElement::from_fn(|e| f(e, self.get(e)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Element, &T)> {
        Element::ALL.into_iter().map(move |e| (e, self.get(e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_order_over_all_pairs() {
        for a in ComplexityLevel::ALL {
            for b in ComplexityLevel::ALL {
                assert_eq!(a < b, a.ordinal() < b.ordinal());
                assert_eq!(a == b, a.ordinal() == b.ordinal());
                if a <= b && b <= a {
                    assert_eq!(a, b);
                }
                for c in ComplexityLevel::ALL {
                    if a <= b && b <= c {
                        assert!(a <= c);
                    }
                }
            }
        }
    }

    #[test]
    fn names_from_examples() {
        assert_eq!(level_from_name("Straightforward", Element::Data).unwrap().ordinal(), 0);
        assert_eq!(level_from_name("High", Element::Problem).unwrap().ordinal(), 3);
        assert_eq!(level_from_name("extensive", Element::Data).unwrap().ordinal(), 3);
        assert_eq!(level_from_name("Minimal or none", Element::Data).unwrap().ordinal(), 0);
        assert_eq!(level_from_name("minimal", Element::Risk).unwrap().ordinal(), 0);
    }

    #[test]
    fn data_aliases_are_a_bijection() {
        let table = [
            ("MinimalOrNone", 0u8),
            ("Limited", 1),
            ("Moderate", 2),
            ("Extensive", 3),
        ];
        for (alias, ordinal) in table {
            let level = level_from_name(alias, Element::Data).unwrap();
            assert_eq!(level.ordinal(), ordinal);
            assert_eq!(level.data_alias(), alias);
            assert_eq!(level.display_name(Element::Data), alias);
        }
        for level in ComplexityLevel::ALL {
            assert_eq!(level_from_name(level.data_alias(), Element::Data).unwrap(), level);
        }
    }

    #[test]
    fn data_aliases_rejected_for_other_elements() {
        assert!(matches!(
            level_from_name("Extensive", Element::Problem),
            Err(LevelError::UnknownLevelName(n)) if n == "Extensive"
        ));
        assert!(level_from_name("limited", Element::Risk).is_err());
        assert!(level_from_name("severe", Element::Data).is_err());
    }

    #[test]
    fn serde_uses_canonical_names() {
        let json = serde_json::to_string(&ComplexityLevel::High).unwrap();
        assert_eq!(json, "\"High\"");
        let back: ComplexityLevel = serde_json::from_str("\"limited\"").unwrap();
        assert_eq!(back, ComplexityLevel::Low);
        let from_num: ComplexityLevel = serde_json::from_str("2").unwrap();
        assert_eq!(from_num, ComplexityLevel::Moderate);
        assert!(serde_json::from_str::<ComplexityLevel>("7").is_err());
    }
}
