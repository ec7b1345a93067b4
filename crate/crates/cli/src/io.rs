use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use sectionsum::corpus::{load_corpus_with, load_predictions, Corpus, Format, PredictionSet, PredictionSource};
use sectionsum::section::AliasTable;

use crate::args::{AliasOpt, CorpusOpts, InputFormat};

pub fn format_of(path: &Path, f: InputFormat) -> Format {
    match f {
        InputFormat::Auto => Format::from_path(path),
        InputFormat::Csv => Format::Csv,
        InputFormat::Jsonl => Format::Jsonl,
    }
}

pub fn load_corpus(path: &Path, opts: &CorpusOpts) -> anyhow::Result<Corpus> {
    Ok(load_corpus_with(
        path,
        format_of(path, opts.input_format),
        &opts.columns,
    )?)
}

pub fn aliases(opts: &AliasOpt) -> anyhow::Result<AliasTable> {
    match &opts.aliases {
        None => Ok(AliasTable::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading alias table {}", p.display()))?;
            AliasTable::parse(&text).with_context(|| format!("alias table {}", p.display()))
        }
    }
}

pub fn read_input(path: &Path) -> anyhow::Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin()
            .read_to_string(&mut s)
            .context("reading standard input")?;
        Ok(s)
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }
}

/// `(id, note)` rows from a CSV/JSONL file; the dialogue column is optional
/// here and an empty note becomes `None`.
pub fn read_notes(path: &Path, opts: &CorpusOpts) -> anyhow::Result<Vec<(String, Option<String>)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (id_col, note_col) = (&opts.columns.id, &opts.columns.note);
    let mut rows = Vec::new();
    match format_of(path, opts.input_format) {
        Format::Csv => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let headers = reader
                .headers()
                .with_context(|| format!("{}: header row", path.display()))?
                .clone();
            let find = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| anyhow!("{}: missing column {name:?}", path.display()))
            };
            let (i, n) = (find(id_col)?, find(note_col)?);
            for (row, record) in reader.records().enumerate() {
                let record = record.with_context(|| format!("{}: row {}", path.display(), row + 1))?;
                let note = record.get(n).unwrap_or("");
                rows.push((
                    record.get(i).unwrap_or("").to_string(),
                    (!note.is_empty()).then(|| note.to_string()),
                ));
            }
        }
        Format::Jsonl => {
            for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let v: serde_json::Value =
                    serde_json::from_str(line).with_context(|| format!("{}: row {}", path.display(), row + 1))?;
                let id = v
                    .get(id_col)
                    .and_then(|x| x.as_str())
                    .ok_or_else(|| anyhow!("{}: row {}: missing {id_col:?}", path.display(), row + 1))?;
                let note = v.get(note_col).and_then(|x| x.as_str()).filter(|s| !s.is_empty());
                rows.push((id.to_string(), note.map(str::to_string)));
            }
        }
    }
    for (i, (id, _)) in rows.iter().enumerate() {
        if id.is_empty() {
            return Err(anyhow!("{}: row {}: empty id", path.display(), i + 1));
        }
        if rows[..i].iter().any(|(other, _)| other == id) {
            return Err(anyhow!("{}: duplicate id {id:?}", path.display()));
        }
    }
    Ok(rows)
}

/// A prediction file, or any id/note table wrapped as one.
pub fn read_candidates(path: &Path, opts: &CorpusOpts) -> anyhow::Result<PredictionSet> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(load_predictions(path)?);
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut p = PredictionSet::new(PredictionSource::Single, 0, sectionsum::pipeline::sha256_hex(&bytes));
    p.entries = read_notes(path, opts)?
        .into_iter()
        .map(|(id, note)| (id, note.unwrap_or_default()))
        .collect();
    Ok(p)
}

pub fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Writes `data` to `out`, or to standard output.
pub fn emit(out: Option<&PathBuf>, data: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, data).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(data.as_bytes()).context("writing standard output")?;
            stdout.flush().context("writing standard output")
        }
    }
}
