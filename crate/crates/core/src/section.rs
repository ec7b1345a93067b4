//! Chart-note segmentation: header recognition, alias normalization and
//! reassembly.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_ALIASES: &str = include_str!("../data/aliases.tsv");

/// Most words an unlisted all-caps line may have and still count as a header.
pub const MAX_HEADER_WORDS: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SectionError {
    #[error("section {0:?} has no division")]
    UnmappedSection(String),
    #[error("alias file line {line}: expected `RAW HEADER<TAB>CANONICAL_ID`")]
    MalformedAliasLine { line: usize },
    #[error("alias file line {line}: unknown canonical id {id:?}")]
    UnknownCanonicalId { line: usize, id: String },
    #[error("alias file line {line}: header {key:?} already maps to {existing}")]
    ConflictingAlias {
        line: usize,
        key: String,
        existing: SectionId,
    },
    #[error("unknown section id {0:?}")]
    ParseSectionId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SectionId {
    Cc,
    Hpi,
    Ros,
    Medications,
    Allergies,
    Pe,
    Results,
    Assessment,
    Plan,
    AssessmentAndPlan,
    /// Header line that matched no alias; carries the line verbatim.
    Unknown(String),
}

impl SectionId {
    /// Every recognized id, in canonical note order.
    pub const KNOWN: [SectionId; 10] = [
        SectionId::Cc,
        SectionId::Hpi,
        SectionId::Ros,
        SectionId::Medications,
        SectionId::Allergies,
        SectionId::Pe,
        SectionId::Results,
        SectionId::Assessment,
        SectionId::Plan,
        SectionId::AssessmentAndPlan,
    ];

    pub fn code(&self) -> &str {
        match self {
            SectionId::Cc => "CC",
            SectionId::Hpi => "HPI",
            SectionId::Ros => "ROS",
            SectionId::Medications => "MEDICATIONS",
            SectionId::Allergies => "ALLERGIES",
            SectionId::Pe => "PE",
            SectionId::Results => "RESULTS",
            SectionId::Assessment => "ASSESSMENT",
            SectionId::Plan => "PLAN",
            SectionId::AssessmentAndPlan => "ASSESSMENT_AND_PLAN",
            SectionId::Unknown(raw) => raw,
        }
    }

    /// Header line written by [`assemble_note`] in canonical style.
    pub fn display_header(&self) -> &str {
        match self {
            SectionId::Cc => "CHIEF COMPLAINT",
            SectionId::Hpi => "HISTORY OF PRESENT ILLNESS",
            SectionId::Ros => "REVIEW OF SYSTEMS",
            SectionId::Medications => "MEDICATIONS",
            SectionId::Allergies => "ALLERGIES",
            SectionId::Pe => "PHYSICAL EXAM",
            SectionId::Results => "RESULTS",
            SectionId::Assessment => "ASSESSMENT",
            SectionId::Plan => "PLAN",
            SectionId::AssessmentAndPlan => "ASSESSMENT AND PLAN",
            SectionId::Unknown(raw) => raw,
        }
    }

    /// Position in canonical order; unknown sections sort last.
    pub fn canonical_rank(&self) -> usize {
        Self::KNOWN.iter().position(|k| k == self).unwrap_or(Self::KNOWN.len())
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, SectionId::Unknown(_))
    }
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SectionId::Unknown(raw) => write!(f, "UNKNOWN({raw})"),
            known => f.write_str(known.code()),
        }
    }
}

impl FromStr for SectionId {
    type Err = SectionError;

    /// Parses a canonical code such as `HPI` (case-insensitive).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_uppercase();
        Self::KNOWN
            .iter()
            .find(|k| k.code() == upper)
            .cloned()
            .ok_or_else(|| SectionError::ParseSectionId(s.to_string()))
    }
}

impl Serialize for SectionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SectionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if let Some(raw) = s.strip_prefix("UNKNOWN(").and_then(|r| r.strip_suffix(')')) {
            return Ok(SectionId::Unknown(raw.to_string()));
        }
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four scoring groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Division {
    Subjective,
    Exam,
    Results,
    AssessmentAndPlan,
}

impl Division {
    pub const ALL: [Division; 4] = [
        Division::Subjective,
        Division::Exam,
        Division::Results,
        Division::AssessmentAndPlan,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Division::Subjective => "Subjective",
            Division::Exam => "Exam",
            Division::Results => "Results",
            Division::AssessmentAndPlan => "Assessment and Plan",
        }
    }
}

pub fn division_of(id: &SectionId) -> Result<Division, SectionError> {
    Ok(match id {
        SectionId::Cc | SectionId::Hpi | SectionId::Ros | SectionId::Medications | SectionId::Allergies => {
            Division::Subjective
        }
        SectionId::Pe => Division::Exam,
        SectionId::Results => Division::Results,
        SectionId::Assessment | SectionId::Plan | SectionId::AssessmentAndPlan => Division::AssessmentAndPlan,
        SectionId::Unknown(raw) => return Err(SectionError::UnmappedSection(raw.clone())),
    })
}

/// Uppercase, collapse inner whitespace, and strip surrounding punctuation
/// (which covers a trailing `:`).
pub fn canonicalize_header(raw: &str) -> String {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    trimmed.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase()
}

/// Map from canonicalized header text to section id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<String, SectionId>,
}

impl Default for AliasTable {
    fn default() -> Self {
        Self::parse(DEFAULT_ALIASES).expect("bundled alias table is well formed")
    }
}

impl AliasTable {
    pub fn empty() -> Self {
        AliasTable {
            entries: BTreeMap::new(),
        }
    }

    /// Parses `RAW HEADER<TAB>CANONICAL_ID` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, SectionError> {
        let mut table = Self::empty();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let content = line.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let (raw, id) = content
                .split_once('\t')
                .ok_or(SectionError::MalformedAliasLine { line: line_no })?;
            let id: SectionId = id.parse().map_err(|_| SectionError::UnknownCanonicalId {
                line: line_no,
                id: id.trim().to_string(),
            })?;
            table
                .insert(raw, id)
                .map_err(|(key, existing)| SectionError::ConflictingAlias {
                    line: line_no,
                    key,
                    existing,
                })?;
        }
        Ok(table)
    }

    /// Adds an alias. Re-adding the same mapping is a no-op; mapping a key
    /// to a different id is rejected.
    pub fn insert(&mut self, raw: &str, id: SectionId) -> Result<(), (String, SectionId)> {
        let key = canonicalize_header(raw);
        if key.is_empty() {
            return Err((key, id));
        }
        match self.entries.get(&key) {
            Some(existing) if *existing != id => Err((key, existing.clone())),
            _ => {
                self.entries.insert(key, id);
                Ok(())
            }
        }
    }

    pub fn get(&self, canonical: &str) -> Option<&SectionId> {
        self.entries.get(canonical)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SectionId)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn normalize_header(raw: &str, aliases: &AliasTable) -> SectionId {
    aliases
        .get(&canonicalize_header(raw))
        .cloned()
        .unwrap_or_else(|| SectionId::Unknown(raw.to_string()))
}

/// All-caps line of at most [`MAX_HEADER_WORDS`] words, optionally ending in `:`.
fn has_header_shape(line: &str) -> bool {
    let text = line.trim();
    let text = text.strip_suffix(':').unwrap_or(text);
    text.chars().any(char::is_alphabetic)
        && !text.chars().any(char::is_lowercase)
        && text.split_whitespace().count() <= MAX_HEADER_WORDS
}

/// Classifies one line. `None` means body text.
pub fn header_of_line(line: &str, aliases: &AliasTable) -> Option<SectionId> {
    let canonical = canonicalize_header(line);
    if canonical.is_empty() {
        return None;
    }
    if let Some(id) = aliases.get(&canonical) {
        return Some(id.clone());
    }
    has_header_shape(line).then(|| SectionId::Unknown(line.trim().to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub id: SectionId,
    /// Header line as it appeared in the source, trimmed.
    pub header: String,
    pub body: String,
}

impl Section {
    pub fn new(id: SectionId, body: impl Into<String>) -> Self {
        let header = id.display_header().to_string();
        Section {
            id,
            header,
            body: body.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartNote {
    pub preamble: String,
    pub sections: Vec<Section>,
}

impl ChartNote {
    /// Bodies of every section with `id`, joined by newlines.
    pub fn section_text(&self, id: &SectionId) -> Option<String> {
        join_bodies(self.sections.iter().filter(|s| &s.id == id))
    }

    /// Bodies of every section in `division`, joined by newlines.
    pub fn division_text(&self, division: Division) -> Option<String> {
        join_bodies(
            self.sections
                .iter()
                .filter(|s| division_of(&s.id).ok() == Some(division)),
        )
    }

    pub fn unknown_count(&self) -> usize {
        self.sections.iter().filter(|s| s.id.is_unknown()).count()
    }

    pub fn pairs(&self) -> Vec<(SectionId, &str)> {
        self.sections.iter().map(|s| (s.id.clone(), s.body.as_str())).collect()
    }
}

fn join_bodies<'a>(sections: impl Iterator<Item = &'a Section>) -> Option<String> {
    let bodies: Vec<&str> = sections.map(|s| s.body.as_str()).collect();
    (!bodies.is_empty()).then(|| bodies.join("\n"))
}

fn trim_blank_lines(lines: &[&str]) -> String {
    let is_blank = |l: &&str| l.trim().is_empty();
    let start = lines.iter().position(|l| !is_blank(l)).unwrap_or(lines.len());
    let end = lines.iter().rposition(|l| !is_blank(l)).map_or(start, |e| e + 1);
    lines[start..end].join("\n")
}

pub fn segment_note(text: &str, aliases: &AliasTable) -> ChartNote {
    let lines: Vec<&str> = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect();
    let mut note = ChartNote::default();
    let mut open: Option<(SectionId, String)> = None;
    let mut start = 0;
    for (i, line) in lines.iter().enumerate() {
        let Some(id) = header_of_line(line, aliases) else {
            continue;
        };
        let body = trim_blank_lines(&lines[start..i]);
        match open.take() {
            None => note.preamble = body,
            Some((id, header)) => note.sections.push(Section { id, header, body }),
        }
        open = Some((id, line.trim().to_string()));
        start = i + 1;
    }
    let body = trim_blank_lines(&lines[start..]);
    match open {
        None => note.preamble = body,
        Some((id, header)) => note.sections.push(Section { id, header, body }),
    }
    note
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HeaderStyle {
    #[default]
    Canonical,
    Verbatim,
}

/// Renders a note as `header\n\nbody\n\n` blocks. With `reorder`, sections
/// are stably sorted into canonical order first.
pub fn assemble_note(note: &ChartNote, style: HeaderStyle, reorder: bool) -> String {
    let mut sections: Vec<&Section> = note.sections.iter().collect();
    if reorder {
        sections.sort_by_key(|s| s.id.canonical_rank());
    }
    let mut out = String::new();
    if !note.preamble.is_empty() {
        out.push_str(&note.preamble);
        out.push_str("\n\n");
    }
    for s in sections {
        let header = match style {
            HeaderStyle::Canonical => s.id.display_header(),
            HeaderStyle::Verbatim => &s.header,
        };
        out.push_str(header);
        out.push_str("\n\n");
        out.push_str(&s.body);
        out.push_str("\n\n");
    }
    let keep = out.trim_end_matches('\n').len();
    out.truncate(keep);
    if !out.is_empty() {
        out.push('\n');
    }
    out
}
