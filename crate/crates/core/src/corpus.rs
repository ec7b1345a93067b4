//! Encounter corpora (CSV / JSONL), seeded splits, and prediction files.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: duplicate id {id:?}")]
    DuplicateId { id: String, row: usize },
    #[error("row {row}: empty dialogue")]
    EmptyDialogue { row: usize },
    #[error("row {row}: empty id")]
    EmptyId { row: usize },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("corpus needs at least 2 encounters to split, found {0}")]
    CorpusTooSmall(usize),
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("malformed prediction file {path}: {message}")]
    MalformedFile { path: PathBuf, message: String },
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encounter {
    pub id: String,
    pub dialogue: String,
    /// Reference chart note; `None` for unlabeled rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` / `.json` → JSONL, everything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

/// Source column names for the three canonical fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub id: String,
    pub dialogue: String,
    pub note: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            dialogue: "dialogue".into(),
            note: "note".into(),
        }
    }
}

impl FromStr for ColumnMap {
    type Err = String;

    /// `id=encounter_id,note=summary`; unnamed fields keep their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = ColumnMap::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let (field, column) = part
                .split_once('=')
                .ok_or_else(|| format!("expected field=column, got {part:?}"))?;
            let column = column.trim().to_string();
            match field.trim() {
                "id" => map.id = column,
                "dialogue" => map.dialogue = column,
                "note" => map.note = column,
                other => return Err(format!("unknown field {other:?}")),
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    encounters: Vec<Encounter>,
    pub provenance: Option<Provenance>,
}

impl Corpus {
    /// Validates ids and dialogues. Row numbers in errors are 1-based data rows.
    pub fn new(encounters: Vec<Encounter>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, e) in encounters.iter().enumerate() {
            let row = i + 1;
            if e.id.is_empty() {
                return Err(CorpusError::EmptyId { row });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(CorpusError::DuplicateId { id: e.id.clone(), row });
            }
            if e.dialogue.trim().is_empty() {
                return Err(CorpusError::EmptyDialogue { row });
            }
        }
        Ok(Corpus {
            encounters,
            provenance: None,
        })
    }

    pub fn encounters(&self) -> &[Encounter] {
        &self.encounters
    }

    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Encounter> {
        self.encounters.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.encounters.iter().map(|e| e.id.as_str())
    }

    /// Encounters that carry a reference note.
    pub fn labeled(&self) -> impl Iterator<Item = (&Encounter, &str)> {
        self.encounters.iter().filter_map(|e| e.note.as_deref().map(|n| (e, n)))
    }

    pub fn unlabeled_count(&self) -> usize {
        self.encounters.iter().filter(|e| e.note.is_none()).count()
    }
}

pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus, CorpusError> {
    load_corpus_with(path, format, &ColumnMap::default())
}

pub fn load_corpus_with(path: &Path, format: Format, columns: &ColumnMap) -> Result<Corpus, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let mut corpus = match format {
        Format::Csv => parse_csv(&text, columns)?,
        Format::Jsonl => parse_jsonl(&text, columns)?,
    };
    corpus.provenance = Some(Provenance {
        path: path.to_path_buf(),
        format,
    });
    Ok(corpus)
}

fn non_empty(s: Option<&str>) -> Option<String> {
    s.filter(|s| !s.is_empty()).map(str::to_string)
}

pub fn parse_csv(text: &str, columns: &ColumnMap) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = find(&columns.id).ok_or_else(|| CorpusError::MissingColumn(columns.id.clone()))?;
    let dialogue_col = find(&columns.dialogue).ok_or_else(|| CorpusError::MissingColumn(columns.dialogue.clone()))?;
    let note_col = find(&columns.note);

    let mut encounters = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CorpusError::Parse {
            row,
            message: e.to_string(),
        })?;
        encounters.push(Encounter {
            id: record.get(id_col).unwrap_or("").to_string(),
            dialogue: record.get(dialogue_col).unwrap_or("").to_string(),
            note: note_col.and_then(|c| non_empty(record.get(c))),
        });
    }
    Corpus::new(encounters)
}

pub fn parse_jsonl(text: &str, columns: &ColumnMap) -> Result<Corpus, CorpusError> {
    let mut encounters = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row = i + 1;
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |name: &str| value.get(name).and_then(|v| v.as_str());
        encounters.push(Encounter {
            id: field(&columns.id)
                .ok_or_else(|| CorpusError::MissingColumn(columns.id.clone()))?
                .to_string(),
            dialogue: field(&columns.dialogue)
                .ok_or_else(|| CorpusError::MissingColumn(columns.dialogue.clone()))?
                .to_string(),
            note: non_empty(field(&columns.note)),
        });
    }
    Corpus::new(encounters)
}

pub fn corpus_to_csv(corpus: &Corpus) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["id", "dialogue", "note"])
        .expect("writing to memory");
    for e in corpus.encounters() {
        writer
            .write_record([e.id.as_str(), e.dialogue.as_str(), e.note.as_deref().unwrap_or("")])
            .expect("writing to memory");
    }
    let bytes = writer.into_inner().expect("flushing to memory");
    String::from_utf8(bytes).expect("csv writer preserves utf-8")
}

pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for e in corpus.encounters() {
        out.push_str(&serde_json::to_string(e).expect("encounter serializes"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: Format) -> Result<(), CorpusError> {
    let text = match format {
        Format::Csv => corpus_to_csv(corpus),
        Format::Jsonl => corpus_to_jsonl(corpus),
    };
    fs::write(path, text).map_err(|e| CorpusError::io(path, e))
}

/// Number of training encounters for `fraction` of `n`. The small tolerance
/// keeps ratios like 67/87 from flooring one short.
pub fn train_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Seeded shuffle, first `floor(fraction·n)` to train. Both halves keep file order.
pub fn split_corpus(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if corpus.len() < 2 {
        return Err(CorpusError::CorpusTooSmall(corpus.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = train_size(corpus.len(), train_fraction);
    let mut in_train = vec![false; corpus.len()];
    for &i in &order[..cut] {
        in_train[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (e, &t) in corpus.encounters.iter().zip(&in_train) {
        if t {
            train.push(e.clone());
        } else {
            val.push(e.clone());
        }
    }
    let wrap = |encounters| Corpus {
        encounters,
        provenance: corpus.provenance.clone(),
    };
    Ok((wrap(train), wrap(val)))
}

/// Where a prediction set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionSource {
    Single,
    SectionWise,
    MultiLayer,
    Oracle,
    Extractive,
}

impl PredictionSource {
    pub fn label(self) -> &'static str {
        match self {
            PredictionSource::Single => "Single",
            PredictionSource::SectionWise => "Section Wise",
            PredictionSource::MultiLayer => "Multi-Layer",
            PredictionSource::Oracle => "Oracle",
            PredictionSource::Extractive => "Extractive",
        }
    }
}

impl fmt::Display for PredictionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub approach: PredictionSource,
    pub seed: u64,
    pub config_hash: String,
    /// Left unset by the pipeline so repeated runs stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub entries: BTreeMap<String, String>,
}

impl PredictionSet {
    pub fn new(approach: PredictionSource, seed: u64, config_hash: impl Into<String>) -> Self {
        PredictionSet {
            approach,
            seed,
            config_hash: config_hash.into(),
            timestamp: None,
            entries: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("prediction set serializes");
        s.push('\n');
        s
    }
}

pub fn save_predictions(p: &PredictionSet, path: &Path) -> Result<(), CorpusError> {
    fs::write(path, p.to_json()).map_err(|e| CorpusError::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<PredictionSet, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::MalformedFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
