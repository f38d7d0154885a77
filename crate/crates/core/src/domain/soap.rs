use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Canonical SOAP section headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoapSection {
    Subjective,
    Objective,
    AssessmentAndPlan,
}

impl SoapSection {
    pub const ALL: [SoapSection; 3] = [
        SoapSection::Subjective,
        SoapSection::Objective,
        SoapSection::AssessmentAndPlan,
    ];

    pub fn header(self) -> &'static str {
        match self {
            SoapSection::Subjective => "SUBJECTIVE",
            SoapSection::Objective => "OBJECTIVE",
            SoapSection::AssessmentAndPlan => "ASSESSMENT AND PLAN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SectionSpan {
    section: SoapSection,
    header: Range<usize>,
    body: Range<usize>,
}

/// A piece of the raw note, in document order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment<'a> {
    Preamble(&'a str),
    Header(SoapSection, &'a str),
    Body(SoapSection, &'a str),
}

impl Segment<'_> {
    pub fn text(&self) -> &str {
        match self {
            Segment::Preamble(t) | Segment::Header(_, t) | Segment::Body(_, t) => t,
        }
    }
}

/// A clinical note split into its SOAP sections.
///
/// The raw text is kept verbatim; sections are byte ranges into it. A header
/// is a line that, once trimmed and stripped of a trailing colon, equals one
/// of the canonical headers. Exact-case matches take precedence; a section
/// without one falls back to a case-insensitive match. Only the first header
/// of each section counts. Absent sections are empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoapNote {
    raw: String,
    spans: Vec<SectionSpan>,
}

fn header_candidate(line: &str) -> &str {
    let t = line.trim();
    t.strip_suffix(':').map(str::trim_end).unwrap_or(t)
}

impl SoapNote {
    pub fn parse(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        // (line start, line end incl. newline, candidate text)
        let mut lines = Vec::new();
        let mut offset = 0;
        for line in raw.split_inclusive('\n') {
            lines.push((offset, offset + line.len(), header_candidate(line)));
            offset += line.len();
        }

        let mut headers: Vec<(SoapSection, Range<usize>)> = Vec::new();
        for section in SoapSection::ALL {
            let name = section.header();
            let hit = lines
                .iter()
                .find(|(_, _, c)| *c == name)
                .or_else(|| lines.iter().find(|(_, _, c)| c.eq_ignore_ascii_case(name)));
            if let Some((start, end, _)) = hit {
                headers.push((section, *start..*end));
            }
        }
        headers.sort_by_key(|(_, r)| r.start);

        let spans = headers
            .iter()
            .enumerate()
            .map(|(i, (section, header))| {
                let body_end = headers.get(i + 1).map(|(_, r)| r.start).unwrap_or(raw.len());
                SectionSpan {
                    section: *section,
                    header: header.clone(),
                    body: header.end..body_end,
                }
            })
            .collect();

        Self { raw, spans }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn section(&self, section: SoapSection) -> &str {
        self.spans
            .iter()
            .find(|s| s.section == section)
            .map(|s| &self.raw[s.body.clone()])
            .unwrap_or("")
    }

    pub fn has_section(&self, section: SoapSection) -> bool {
        self.spans.iter().any(|s| s.section == section)
    }

    pub fn subjective(&self) -> &str {
        self.section(SoapSection::Subjective)
    }

    pub fn objective(&self) -> &str {
        self.section(SoapSection::Objective)
    }

    pub fn assessment_and_plan(&self) -> &str {
        self.section(SoapSection::AssessmentAndPlan)
    }

    /// Sections in the order they appear in the note.
    pub fn section_order(&self) -> Vec<SoapSection> {
        self.spans.iter().map(|s| s.section).collect()
    }

    pub fn segments(&self) -> Vec<Segment<'_>> {
        let first = self.spans.first().map(|s| s.header.start).unwrap_or(self.raw.len());
        let mut out = Vec::with_capacity(1 + self.spans.len() * 2);
        if first > 0 {
            out.push(Segment::Preamble(&self.raw[..first]));
        }
        for span in &self.spans {
            out.push(Segment::Header(span.section, &self.raw[span.header.clone()]));
            out.push(Segment::Body(span.section, &self.raw[span.body.clone()]));
        }
        out
    }

    /// Reassemble the note from its segments; always equals [`raw`](Self::raw).
    pub fn render(&self) -> String {
        self.segments().iter().map(Segment::text).collect()
    }
}

#[derive(Serialize)]
struct SoapView<'a> {
    subjective: &'a str,
    objective: &'a str,
    assessment_and_plan: &'a str,
    raw: &'a str,
}

impl Serialize for SoapNote {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        SoapView {
            subjective: self.subjective(),
            objective: self.objective(),
            assessment_and_plan: self.assessment_and_plan(),
            raw: &self.raw,
        }
        .serialize(serializer)
    }
}

/// Only `raw` is read back; sections are re-derived from it.
impl<'de> Deserialize<'de> for SoapNote {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct RawOnly {
            raw: String,
        }
        let r = RawOnly::deserialize(deserializer)?;
        if r.raw.is_empty() {
            return Err(serde::de::Error::custom("SOAP note raw text is empty"));
        }
        Ok(SoapNote::parse(r.raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_canonical_sections() {
        let note = SoapNote::parse("SUBJECTIVE\nears hurt\nOBJECTIVE\nred canal\nASSESSMENT AND PLAN\n- otitis\n");
        assert_eq!(note.subjective(), "ears hurt\n");
        assert_eq!(note.objective(), "red canal\n");
        assert_eq!(note.assessment_and_plan(), "- otitis\n");
        assert_eq!(note.render(), note.raw());
    }

    #[test]
    fn missing_sections_are_empty() {
        let note = SoapNote::parse("free text only");
        assert_eq!(note.subjective(), "");
        assert_eq!(note.assessment_and_plan(), "");
        assert_eq!(note.segments(), vec![Segment::Preamble("free text only")]);
        assert_eq!(note.render(), "free text only");
    }

    #[test]
    fn case_insensitive_fallback_and_colon() {
        let note = SoapNote::parse("Subjective:\nA\nassessment and plan\nB");
        assert_eq!(note.subjective(), "A\n");
        assert_eq!(note.assessment_and_plan(), "B");
        assert!(!note.has_section(SoapSection::Objective));
    }

    #[test]
    fn exact_case_wins_over_fallback() {
        let note = SoapNote::parse("Objective\nmention\nOBJECTIVE\nreal exam\n");
        assert_eq!(note.objective(), "real exam\n");
        // the earlier mixed-case line falls into the preamble
        assert_eq!(note.segments()[0], Segment::Preamble("Objective\nmention\n"));
    }

    #[test]
    fn nonstandard_order() {
        let note = SoapNote::parse("ASSESSMENT AND PLAN\nplan\nSUBJECTIVE\nsubj\nOBJECTIVE\nobj");
        assert_eq!(
            note.section_order(),
            vec![SoapSection::AssessmentAndPlan, SoapSection::Subjective, SoapSection::Objective]
        );
        assert_eq!(note.assessment_and_plan(), "plan\n");
        assert_eq!(note.objective(), "obj");
        assert_eq!(note.render(), note.raw());
    }

    fn body_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec("[a-z ]{0,6}", 0..4).prop_map(|lines| {
            lines.into_iter().map(|l| format!("{l}\n")).collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn generated_notes_round_trip(
            order in Just(SoapSection::ALL.to_vec()).prop_shuffle(),
            keep in proptest::collection::vec(any::<bool>(), 3),
            bodies in proptest::collection::vec(body_strategy(), 3),
            preamble in "[a-z]{0,8}",
            lowercase in any::<bool>(),
        ) {
            let mut raw = String::new();
            if !preamble.is_empty() {
                raw.push_str(&preamble);
                raw.push('\n');
            }
            let mut expected = Vec::new();
            for (i, section) in order.iter().enumerate() {
                if !keep[i] {
                    continue;
                }
                let header = if lowercase { section.header().to_lowercase() } else { section.header().to_string() };
                raw.push_str(&header);
                raw.push('\n');
                raw.push_str(&bodies[i]);
                expected.push((*section, bodies[i].clone()));
            }
            prop_assume!(!raw.is_empty());
            let note = SoapNote::parse(raw.clone());
            prop_assert_eq!(note.render(), raw.clone());
            for (section, body) in &expected {
                prop_assert_eq!(note.section(*section), body.as_str());
                prop_assert!(raw.contains(note.section(*section)));
            }
            prop_assert_eq!(note.section_order(), expected.iter().map(|(s, _)| *s).collect::<Vec<_>>());
        }
    }
}
