use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::PipelineError;
use crate::corpus::{Corpus, PredictionSet, PredictionSource};
use crate::num::ScoreValue;
use crate::rouge::{rouge_n, tokenize_with, AggregateScores, DocumentScores, TokenizeOptions};
use crate::section::{segment_note, AliasTable, Division};

/// The single number reported per division.
pub const DIVISION_METRIC: &str = "rouge1-f1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionScore<T = f64> {
    pub division: Division,
    /// Mean over scored pairs; zero when there are none.
    pub f1: T,
    /// Documents where at least one side has the division.
    pub pairs: usize,
    pub missing_in_prediction: usize,
    pub missing_in_reference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport<T = f64> {
    /// Row label in rendered tables.
    pub label: String,
    pub approach: PredictionSource,
    pub full: AggregateScores<T>,
    /// One entry per division, in [`Division::ALL`] order.
    pub divisions: Vec<DivisionScore<T>>,
    /// Arithmetic mean of the four division scores.
    pub average: T,
    pub division_metric: String,
    pub config_hash: String,
    pub seed: u64,
    pub documents: usize,
    pub skipped_unlabeled: usize,
    pub empty_predictions: usize,
    pub unknown_prediction_sections: usize,
    pub unknown_reference_sections: usize,
}

impl<T: ScoreValue> RunReport<T> {
    pub fn division(&self, d: Division) -> &DivisionScore<T> {
        &self.divisions[Division::ALL
            .iter()
            .position(|x| *x == d)
            .expect("all divisions present")]
    }

    pub fn to_f64(&self) -> RunReport<f64> {
        RunReport {
            label: self.label.clone(),
            approach: self.approach,
            full: AggregateScores {
                rouge1: self.full.rouge1.to_f64(),
                rouge2: self.full.rouge2.to_f64(),
                rouge_l: self.full.rouge_l.to_f64(),
                per_document: self
                    .full
                    .per_document
                    .iter()
                    .map(|(k, d)| {
                        let d = DocumentScores {
                            rouge1: d.rouge1.to_f64(),
                            rouge2: d.rouge2.to_f64(),
                            rouge_l: d.rouge_l.to_f64(),
                        };
                        (k.clone(), d)
                    })
                    .collect(),
            },
            divisions: self
                .divisions
                .iter()
                .map(|d| DivisionScore {
                    division: d.division,
                    f1: d.f1.to_f64(),
                    pairs: d.pairs,
                    missing_in_prediction: d.missing_in_prediction,
                    missing_in_reference: d.missing_in_reference,
                })
                .collect(),
            average: self.average.to_f64(),
            division_metric: self.division_metric.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            documents: self.documents,
            skipped_unlabeled: self.skipped_unlabeled,
            empty_predictions: self.empty_predictions,
            unknown_prediction_sections: self.unknown_prediction_sections,
            unknown_reference_sections: self.unknown_reference_sections,
        }
    }
}

pub fn evaluate<T: ScoreValue>(p: &PredictionSet, eval: &Corpus) -> Result<RunReport<T>, PipelineError> {
    evaluate_with(p, eval, &AliasTable::default(), &TokenizeOptions::default())
}

struct DocEval<T> {
    full: DocumentScores<T>,
    /// Per division: `None` if neither side has it, else (f1, pred has it, ref has it).
    divisions: Vec<Option<(T, bool, bool)>>,
    unknown_pred: usize,
    unknown_ref: usize,
}

/// Full-note ROUGE over raw texts, plus ROUGE-1 F1 per division after
/// segmenting both sides. A division absent from both sides is skipped for
/// that document; absent from one side it scores zero.
pub fn evaluate_with<T: ScoreValue>(
    p: &PredictionSet,
    eval: &Corpus,
    aliases: &AliasTable,
    opts: &TokenizeOptions,
) -> Result<RunReport<T>, PipelineError> {
    let references: Vec<(&str, Option<&str>)> = eval
        .encounters()
        .iter()
        .map(|e| (e.id.as_str(), e.note.as_deref()))
        .collect();
    evaluate_references(p, &references, aliases, opts)
}

/// [`evaluate_with`] against bare `(id, reference)` rows; `None` marks an
/// unlabeled row, which is skipped and counted.
pub fn evaluate_references<T: ScoreValue>(
    p: &PredictionSet,
    references: &[(&str, Option<&str>)],
    aliases: &AliasTable,
    opts: &TokenizeOptions,
) -> Result<RunReport<T>, PipelineError> {
    let mut skipped = 0;
    let mut pairs: Vec<(&str, &str, &str)> = Vec::new();
    let known: BTreeSet<&str> = references.iter().map(|(id, _)| *id).collect();
    if let Some(id) = p.entries.keys().find(|id| !known.contains(id.as_str())) {
        return Err(PipelineError::MissingReference(id.clone()));
    }
    for &(id, note) in references {
        let Some(note) = note else {
            skipped += 1;
            continue;
        };
        let pred = p
            .entries
            .get(id)
            .ok_or_else(|| PipelineError::MissingPrediction(id.to_string()))?;
        pairs.push((id, pred.as_str(), note));
    }
    if pairs.is_empty() {
        return Err(PipelineError::EmptyEvaluation);
    }
    // Id order keeps floating-point sums independent of row order.
    pairs.sort_by_key(|p| p.0);

    let docs: Vec<DocEval<T>> = pairs
        .par_iter()
        .map(|&(_, pred, reference)| {
            let (ps, rs) = (segment_note(pred, aliases), segment_note(reference, aliases));
            let divisions = Division::ALL
                .iter()
                .map(|&d| match (ps.division_text(d), rs.division_text(d)) {
                    (None, None) => None,
                    (Some(a), Some(b)) => {
                        let f1 = rouge_n::<T>(&tokenize_with(&a, opts), &tokenize_with(&b, opts), 1).f1;
                        Some((f1, true, true))
                    }
                    (a, b) => Some((T::zero(), a.is_some(), b.is_some())),
                })
                .collect();
            DocEval {
                full: DocumentScores::score(pred, reference, opts),
                divisions,
                unknown_pred: ps.unknown_count(),
                unknown_ref: rs.unknown_count(),
            }
        })
        .collect();

    let mut per_document = BTreeMap::new();
    for (&(id, _, _), d) in pairs.iter().zip(&docs) {
        per_document.insert(id.to_string(), d.full.clone());
    }
    let full = AggregateScores::from_documents(per_document)?;

    let mut divisions = Vec::new();
    let mut total = T::zero();
    for (i, &division) in Division::ALL.iter().enumerate() {
        let mut sum = T::zero();
        let mut score = DivisionScore {
            division,
            f1: T::zero(),
            pairs: 0,
            missing_in_prediction: 0,
            missing_in_reference: 0,
        };
        for (f1, in_pred, in_ref) in docs.iter().filter_map(|d| d.divisions[i].clone()) {
            sum = sum.add(&f1);
            score.pairs += 1;
            score.missing_in_prediction += usize::from(!in_pred);
            score.missing_in_reference += usize::from(!in_ref);
        }
        if score.pairs > 0 {
            score.f1 = sum.div_count(score.pairs as u64);
        }
        total = total.add(&score.f1);
        divisions.push(score);
    }

    Ok(RunReport {
        label: p.approach.label().to_string(),
        approach: p.approach,
        full,
        divisions,
        average: total.div_count(Division::ALL.len() as u64),
        division_metric: DIVISION_METRIC.to_string(),
        config_hash: p.config_hash.clone(),
        seed: p.seed,
        documents: pairs.len(),
        skipped_unlabeled: skipped,
        empty_predictions: pairs.iter().filter(|(_, pred, _)| pred.trim().is_empty()).count(),
        unknown_prediction_sections: docs.iter().map(|d| d.unknown_pred).sum(),
        unknown_reference_sections: docs.iter().map(|d| d.unknown_ref).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (expected table, csv or json)")),
        }
    }
}

/// Rounds the shortest decimal representation of `x` half-up (away from
/// zero) to `places` digits, so 0.52675 gives "0.5268" even though the
/// nearest double lies slightly below it.
pub fn round_half_up(x: f64, places: usize) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{}", x.abs());
    let (int, frac) = s.split_once('.').unwrap_or((&s, ""));
    let mut digits: Vec<u8> = int
        .bytes()
        .chain(frac.bytes().chain(std::iter::repeat(b'0')).take(places))
        .collect();
    let round_up = frac.as_bytes().get(places).is_some_and(|&d| d >= b'5');
    if round_up {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits[i] == b'9' {
                digits[i] = b'0';
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let digits = String::from_utf8(digits).expect("ascii digits");
    let split = digits.len() - places;
    let negative = x < 0.0 && digits.bytes().any(|b| b != b'0');
    let sign = if negative { "-" } else { "" };
    if places == 0 {
        format!("{sign}{digits}")
    } else {
        format!("{sign}{}.{}", &digits[..split], &digits[split..])
    }
}

const PLACES: usize = 4;
const FULL_COLUMNS: [&str; 3] = ["Rouge1", "Rouge2", "RougeL"];
const DIVISION_COLUMNS: [&str; 5] = ["Subjective", "Exam", "Results", "Assessment and Plan", "Average"];

fn full_row(r: &RunReport<f64>) -> [String; 3] {
    [r.full.rouge1.f1, r.full.rouge2.f1, r.full.rouge_l.f1].map(|v| round_half_up(v, PLACES))
}

fn division_row(r: &RunReport<f64>) -> [String; 5] {
    let mut v = [0.0; 5];
    for (slot, d) in v.iter_mut().zip(&r.divisions) {
        *slot = d.f1;
    }
    v[4] = r.average;
    v.map(|x| round_half_up(x, PLACES))
}

fn text_table(out: &mut String, title: &str, columns: &[&str], rows: &[(String, Vec<String>)]) {
    let mut widths: Vec<usize> = std::iter::once("Approach".len())
        .chain(columns.iter().map(|c| c.len()))
        .collect();
    for (label, cells) in rows {
        widths[0] = widths[0].max(label.len());
        for (w, c) in widths[1..].iter_mut().zip(cells) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells[1..].iter().zip(&widths[1..]) {
            let _ = write!(s, "  {c:>w$}");
        }
        s
    };
    let _ = writeln!(out, "{title}");
    let header = line(std::iter::once("Approach").chain(columns.iter().copied()).collect());
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    for (label, cells) in rows {
        let _ = writeln!(
            out,
            "{}",
            line(
                std::iter::once(label.as_str())
                    .chain(cells.iter().map(String::as_str))
                    .collect()
            )
        );
    }
}

fn csv_table(title: &str, columns: &[&str], rows: &[(String, Vec<String>)]) -> Result<String, PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| PipelineError::InvalidConfig(format!("csv: {e}"));
    w.write_record(
        std::iter::once("table")
            .chain(std::iter::once("approach"))
            .chain(columns.iter().copied()),
    )
    .map_err(io)?;
    for (label, cells) in rows {
        w.write_record(
            std::iter::once(title)
                .chain(std::iter::once(label.as_str()))
                .chain(cells.iter().map(String::as_str)),
        )
        .map_err(io)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| PipelineError::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 input"))
}

fn rounded_number(s: &str) -> serde_json::Value {
    serde_json::Number::from_f64(s.parse().expect("rounded value parses"))
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Renders the full-note table (R1/R2/RL F1) and the division table, one
/// row per run in input order, values rounded half-up to four places.
/// CSV output is two blocks separated by a blank line.
pub fn render_report(runs: &[RunReport<f64>], format: ReportFormat) -> Result<String, PipelineError> {
    if runs.is_empty() {
        return Err(PipelineError::NoRuns);
    }
    let full: Vec<(String, Vec<String>)> = runs.iter().map(|r| (r.label.clone(), full_row(r).to_vec())).collect();
    let div: Vec<(String, Vec<String>)> = runs
        .iter()
        .map(|r| (r.label.clone(), division_row(r).to_vec()))
        .collect();
    Ok(match format {
        ReportFormat::Table => {
            let mut out = String::new();
            text_table(&mut out, "Full note (F1)", &FULL_COLUMNS, &full);
            out.push('\n');
            text_table(
                &mut out,
                &format!("Section-wise ({DIVISION_METRIC})"),
                &DIVISION_COLUMNS,
                &div,
            );
            out
        }
        ReportFormat::Csv => {
            let mut out = csv_table("full_note", &FULL_COLUMNS, &full)?;
            out.push('\n');
            out.push_str(&csv_table("section_wise", &DIVISION_COLUMNS, &div)?);
            out
        }
        ReportFormat::Json => {
            let row = |label: &str, columns: &[&str], cells: &[String], r: &RunReport<f64>| {
                let mut m = serde_json::Map::new();
                m.insert("approach".into(), json!(label));
                for (c, v) in columns.iter().zip(cells) {
                    m.insert(c.to_string(), rounded_number(v));
                }
                m.insert("config_hash".into(), json!(r.config_hash));
                m.insert("seed".into(), json!(r.seed));
                serde_json::Value::Object(m)
            };
            let doc = json!({
                "division_metric": DIVISION_METRIC,
                "full_note": runs.iter().zip(&full).map(|(r, (l, c))| row(l, &FULL_COLUMNS, c, r)).collect::<Vec<_>>(),
                "section_wise": runs.iter().zip(&div).map(|(r, (l, c))| {
                    let mut v = row(l, &DIVISION_COLUMNS, c, r);
                    v["documents"] = json!(r.documents);
                    v["skipped_unlabeled"] = json!(r.skipped_unlabeled);
                    v["unknown_prediction_sections"] = json!(r.unknown_prediction_sections);
                    v["unknown_reference_sections"] = json!(r.unknown_reference_sections);
                    v
                }).collect::<Vec<_>>(),
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_on_shortest_decimal() {
        assert_eq!(round_half_up(0.52675, 4), "0.5268");
        assert_eq!(round_half_up(0.26225, 4), "0.2623");
        assert_eq!(round_half_up(1.0, 4), "1.0000");
        assert_eq!(round_half_up(0.0, 4), "0.0000");
        assert_eq!(round_half_up(0.99995, 4), "1.0000");
        assert_eq!(round_half_up(0.12344999, 4), "0.1234");
        assert_eq!(round_half_up(5.0 / 6.0, 4), "0.8333");
        assert_eq!(round_half_up(-0.00004, 4), "0.0000");
        assert_eq!(round_half_up(-0.00005, 4), "-0.0001");
        assert_eq!(round_half_up(9.5, 0), "10");
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
