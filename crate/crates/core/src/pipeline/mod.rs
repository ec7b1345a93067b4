//! The three summarization approaches, evaluation and report rendering.
//!
//! * Single: one summarizer maps the dialogue to the whole note.
//! * Section-wise: one summarizer per configured section, each applied to
//!   the full dialogue; outputs are assembled in canonical order.
//! * Multi-layer: a second summarizer rewrites the section-wise output.

mod extractive;
mod report;
mod summarizer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extractive::{extract, sentence_scores, split_sentences, TokenWeights};
pub use report::{
    evaluate, evaluate_references, evaluate_with, render_report, round_half_up, DivisionScore, ReportFormat, RunReport,
    DIVISION_METRIC,
};
pub use summarizer::{
    Example, ExtractiveSummarizer, IdentitySummarizer, OracleSummarizer, Summarizer, TinyLsgSettings, TinyLsgSummarizer,
};

use crate::corpus::{split_corpus, Corpus, CorpusError, PredictionSet, PredictionSource};
use crate::rouge::RougeError;
use crate::section::{assemble_note, segment_note, AliasTable, ChartNote, HeaderStyle, Section, SectionId};
use crate::tinylsg::{LsgError, TrainHistory};
pub use summarizer::sha256_hex;

/// Offset added to the run seed for the stage-2 model. Section models use
/// `seed + canonical_rank`, which stays below this.
pub const STAGE2_SEED_OFFSET: u64 = SectionId::KNOWN.len() as u64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("section {0} never appears in the training notes")]
    SectionNeverObserved(SectionId),
    #[error("prediction {0:?} has no encounter in the evaluation corpus")]
    MissingReference(String),
    #[error("labeled encounter {0:?} has no prediction")]
    MissingPrediction(String),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no report to render")]
    NoRuns,
    #[error(transparent)]
    Model(#[from] LsgError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl From<RougeError> for PipelineError {
    fn from(e: RougeError) -> Self {
        match e {
            RougeError::EmptyEvaluation => PipelineError::EmptyEvaluation,
            RougeError::DuplicateId(id) => PipelineError::InvalidConfig(format!("duplicate id {id}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    Single,
    SectionWise,
    MultiLayer,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Single, Approach::SectionWise, Approach::MultiLayer];

    pub fn source(self) -> PredictionSource {
        match self {
            Approach::Single => PredictionSource::Single,
            Approach::SectionWise => PredictionSource::SectionWise,
            Approach::MultiLayer => PredictionSource::MultiLayer,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Approach::Single => "single",
            Approach::SectionWise => "section-wise",
            Approach::MultiLayer => "multi-layer",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown approach {s:?} (expected single, section-wise or multi-layer)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BackendConfig {
    /// Looks up the reference text by encounter id.
    Oracle,
    Identity,
    Extractive {
        k: usize,
    },
    TinyLsg(TinyLsgSettings),
}

impl BackendConfig {
    pub fn name(&self) -> &'static str {
        match self {
            BackendConfig::Oracle => "oracle",
            BackendConfig::Identity => "identity",
            BackendConfig::Extractive { .. } => "extractive",
            BackendConfig::TinyLsg(_) => "tiny-lsg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachConfig {
    pub approach: Approach,
    pub backend: BackendConfig,
    /// Sections that get their own model (section-wise and multi-layer).
    pub sections: Vec<SectionId>,
    /// Second-layer backend (multi-layer only).
    pub stage2: Option<BackendConfig>,
    pub seed: u64,
    /// Train stage 1 and stage 2 on disjoint halves of the training set.
    #[serde(default)]
    pub stage2_split: bool,
    /// Feed stage 2 the assembled note with headers rather than bare bodies.
    #[serde(default = "yes")]
    pub stage2_headers: bool,
}

fn yes() -> bool {
    true
}

impl ApproachConfig {
    pub fn new(approach: Approach, backend: BackendConfig, seed: u64) -> Self {
        ApproachConfig {
            approach,
            backend,
            sections: Vec::new(),
            stage2: None,
            seed,
            stage2_split: false,
            stage2_headers: true,
        }
    }

    pub fn with_sections(mut self, sections: impl IntoIterator<Item = SectionId>) -> Self {
        self.sections = sections.into_iter().collect();
        self
    }

    pub fn with_stage2(mut self, stage2: BackendConfig) -> Self {
        self.stage2 = Some(stage2);
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.approach != Approach::Single && self.sections.is_empty() {
            return bad(format!("{} needs at least one section", self.approach));
        }
        if let Some(s) = self.sections.iter().find(|s| s.is_unknown()) {
            return bad(format!("cannot train a model for unrecognized section {s}"));
        }
        for (i, s) in self.sections.iter().enumerate() {
            if self.sections[..i].contains(s) {
                return bad(format!("section {s} listed twice"));
            }
        }
        if self.approach == Approach::MultiLayer && self.stage2.is_none() {
            return bad("multi-layer needs a stage-2 backend".into());
        }
        for b in std::iter::once(&self.backend).chain(&self.stage2) {
            if let BackendConfig::Extractive { k: 0 } = b {
                return bad("extractive k must be at least 1".into());
            }
            if let BackendConfig::TinyLsg(s) = b {
                s.model.validate()?;
                s.train.validate()?;
                s.lsg.validate()?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the config's canonical JSON.
    pub fn config_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("approach config serializes"))
    }
}

/// One trained model slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    /// `single`, a section code, or `stage2`.
    pub slot: String,
    pub seed: u64,
    pub train_examples: usize,
    pub fingerprint: String,
    pub history: Option<TrainHistory>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub models: Vec<ModelRecord>,
    /// Fingerprints of the section models that produced the stage-2
    /// training inputs, and of those applied to the evaluation set.
    pub stage1_train_fingerprints: BTreeMap<String, String>,
    pub stage1_eval_fingerprints: BTreeMap<String, String>,
    /// Stage-1 outputs that were empty and passed on as "".
    pub empty_stage1_train: usize,
    pub empty_stage1_eval: usize,
    pub unlabeled_train_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproachOutput {
    pub predictions: PredictionSet,
    pub log: RunLog,
}

type Fitted = (Box<dyn Summarizer>, Option<TrainHistory>);

/// Trains `backend` on `train`. The oracle additionally memorizes
/// `reveal`, which is how it knows the evaluation references.
pub fn fit_backend(
    backend: &BackendConfig,
    train: &[Example<'_>],
    reveal: &[Example<'_>],
    seed: u64,
) -> Result<Fitted, PipelineError> {
    Ok(match backend {
        BackendConfig::Oracle => {
            let references = train
                .iter()
                .chain(reveal)
                .map(|e| (e.id.to_string(), e.target.to_string()))
                .collect();
            (Box::new(OracleSummarizer { references }), None)
        }
        BackendConfig::Identity => (Box::new(IdentitySummarizer), None),
        BackendConfig::Extractive { k } => {
            let targets: Vec<&str> = train.iter().map(|e| e.target).collect();
            (
                Box::new(ExtractiveSummarizer {
                    k: *k,
                    weights: TokenWeights::fit(&targets),
                }),
                None,
            )
        }
        BackendConfig::TinyLsg(settings) => {
            if train.is_empty() {
                return Err(LsgError::EmptyTrainingSet.into());
            }
            let (m, h) = TinyLsgSummarizer::fit(settings, train, seed)?;
            (Box::new(m), Some(h))
        }
    })
}

fn examples_of<'a>(corpus: &'a Corpus, target: impl Fn(&'a str) -> Option<&'a str>) -> Vec<Example<'a>> {
    corpus
        .labeled()
        .filter_map(|(e, note)| {
            target(note).map(|t| Example {
                id: &e.id,
                input: &e.dialogue,
                target: t,
            })
        })
        .collect()
}

/// Runs `model` over `(id, input)` pairs in parallel; results keep input order.
fn apply_all(model: &dyn Summarizer, inputs: &[(&str, &str)]) -> Result<Vec<String>, PipelineError> {
    inputs
        .par_iter()
        .map(|(id, input)| model.summarize(id, input))
        .collect()
}

fn dialogues(corpus: &Corpus) -> Vec<(&str, &str)> {
    corpus
        .encounters()
        .iter()
        .map(|e| (e.id.as_str(), e.dialogue.as_str()))
        .collect()
}

fn check_approach(cfg: &ApproachConfig, want: Approach) -> Result<(), PipelineError> {
    if cfg.approach != want {
        return Err(PipelineError::InvalidConfig(format!(
            "expected a {want} config, got {}",
            cfg.approach
        )));
    }
    cfg.validate()
}

fn prediction_set(cfg: &ApproachConfig, ids: &[(&str, &str)], outputs: Vec<String>) -> PredictionSet {
    let mut p = PredictionSet::new(cfg.approach.source(), cfg.seed, cfg.config_hash());
    p.entries = ids.iter().map(|(id, _)| id.to_string()).zip(outputs).collect();
    p
}

/// One model on dialogue → full note.
pub fn run_approach1(train: &Corpus, eval: &Corpus, cfg: &ApproachConfig) -> Result<ApproachOutput, PipelineError> {
    check_approach(cfg, Approach::Single)?;
    let examples = examples_of(train, Some);
    let reveal = examples_of(eval, Some);
    let (model, history) = fit_backend(&cfg.backend, &examples, &reveal, cfg.seed)?;
    let log = RunLog {
        models: vec![ModelRecord {
            slot: "single".into(),
            seed: cfg.seed,
            train_examples: examples.len(),
            fingerprint: model.fingerprint(),
            history,
        }],
        unlabeled_train_skipped: train.unlabeled_count(),
        ..RunLog::default()
    };
    let inputs = dialogues(eval);
    let outputs = apply_all(model.as_ref(), &inputs)?;
    Ok(ApproachOutput {
        predictions: prediction_set(cfg, &inputs, outputs),
        log,
    })
}

struct SectionModels {
    models: Vec<(SectionId, Box<dyn Summarizer>)>,
    records: Vec<ModelRecord>,
}

impl SectionModels {
    fn fit(train: &Corpus, reveal: &[&Corpus], cfg: &ApproachConfig) -> Result<Self, PipelineError> {
        let aliases = AliasTable::default();
        let segment = |c: &Corpus| -> BTreeMap<String, ChartNote> {
            c.labeled()
                .map(|(e, note)| (e.id.clone(), segment_note(note, &aliases)))
                .collect()
        };
        let train_notes = segment(train);
        let reveal_notes: Vec<_> = reveal.iter().map(|c| segment(c)).collect();
        let section_examples =
            |c: &Corpus, notes: &BTreeMap<String, ChartNote>, id: &SectionId| -> Vec<(String, String, String)> {
                c.labeled()
                    .filter_map(|(e, _)| {
                        let text = notes[&e.id].section_text(id)?;
                        (!text.trim().is_empty()).then(|| (e.id.clone(), e.dialogue.clone(), text))
                    })
                    .collect()
            };
        let fitted: Vec<(SectionId, Fitted, ModelRecord)> = cfg
            .sections
            .par_iter()
            .map(|id| {
                let owned = section_examples(train, &train_notes, id);
                if owned.is_empty() {
                    return Err(PipelineError::SectionNeverObserved(id.clone()));
                }
                let revealed: Vec<_> = reveal
                    .iter()
                    .zip(&reveal_notes)
                    .flat_map(|(c, notes)| section_examples(c, notes, id))
                    .collect();
                let seed = cfg.seed + id.canonical_rank() as u64;
                let (model, history) = fit_backend(&cfg.backend, &view(&owned), &view(&revealed), seed)?;
                let record = ModelRecord {
                    slot: id.code().to_string(),
                    seed,
                    train_examples: owned.len(),
                    fingerprint: model.fingerprint(),
                    history: history.clone(),
                };
                Ok((id.clone(), (model, history), record))
            })
            .collect::<Result<_, PipelineError>>()?;
        let mut models = Vec::new();
        let mut records = Vec::new();
        for (id, (model, _), record) in fitted {
            models.push((id, model));
            records.push(record);
        }
        Ok(SectionModels { models, records })
    }

    fn fingerprints(&self) -> BTreeMap<String, String> {
        self.models
            .iter()
            .map(|(id, m)| (id.code().to_string(), m.fingerprint()))
            .collect()
    }

    /// Per-section outputs for each input, assembled in canonical order.
    fn apply(&self, inputs: &[(&str, &str)]) -> Result<Vec<ChartNote>, PipelineError> {
        let per_section: Vec<Vec<String>> = self
            .models
            .par_iter()
            .map(|(_, m)| apply_all(m.as_ref(), inputs))
            .collect::<Result<_, _>>()?;
        let notes = (0..inputs.len())
            .map(|i| {
                let mut sections: Vec<Section> = self
                    .models
                    .iter()
                    .zip(&per_section)
                    .filter_map(|((id, _), outs)| {
                        let body = outs[i].trim_matches('\n').trim_end();
                        (!body.trim().is_empty()).then(|| Section::new(id.clone(), body))
                    })
                    .collect();
                sections.sort_by_key(|s| s.id.canonical_rank());
                ChartNote {
                    preamble: String::new(),
                    sections,
                }
            })
            .collect();
        Ok(notes)
    }
}

fn view(owned: &[(String, String, String)]) -> Vec<Example<'_>> {
    owned
        .iter()
        .map(|(id, input, target)| Example { id, input, target })
        .collect()
}

fn render_stage1(note: &ChartNote, headers: bool) -> String {
    if headers {
        return assemble_note(note, HeaderStyle::Canonical, true);
    }
    note.sections
        .iter()
        .map(|s| s.body.as_str())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// One model per configured section; outputs assembled with canonical
/// headers, empty outputs omitted.
pub fn run_approach2(train: &Corpus, eval: &Corpus, cfg: &ApproachConfig) -> Result<ApproachOutput, PipelineError> {
    check_approach(cfg, Approach::SectionWise)?;
    let models = SectionModels::fit(train, &[eval], cfg)?;
    let inputs = dialogues(eval);
    let notes = models.apply(&inputs)?;
    let outputs = notes.iter().map(|n| render_stage1(n, true)).collect();
    let log = RunLog {
        stage1_eval_fingerprints: models.fingerprints(),
        models: models.records,
        unlabeled_train_skipped: train.unlabeled_count(),
        ..RunLog::default()
    };
    Ok(ApproachOutput {
        predictions: prediction_set(cfg, &inputs, outputs),
        log,
    })
}

/// Section-wise stage 1 followed by a second model trained on
/// (stage-1 output → reference note).
pub fn run_approach3(train: &Corpus, eval: &Corpus, cfg: &ApproachConfig) -> Result<ApproachOutput, PipelineError> {
    check_approach(cfg, Approach::MultiLayer)?;
    let stage2 = cfg.stage2.as_ref().expect("validated");
    let (stage1_train, stage2_train) = if cfg.stage2_split {
        split_corpus(train, 0.5, cfg.seed + STAGE2_SEED_OFFSET)?
    } else {
        (train.clone(), train.clone())
    };
    let models = SectionModels::fit(&stage1_train, &[&stage2_train, eval], cfg)?;
    let render = |notes: &[ChartNote]| -> (Vec<String>, usize) {
        let texts: Vec<String> = notes.iter().map(|n| render_stage1(n, cfg.stage2_headers)).collect();
        let empty = texts.iter().filter(|t| t.is_empty()).count();
        (texts, empty)
    };
    let train_inputs = dialogues(&stage2_train);
    let (train_texts, empty_train) = render(&models.apply(&train_inputs)?);
    let train_fps = models.fingerprints();
    let eval_inputs = dialogues(eval);
    let (eval_texts, empty_eval) = render(&models.apply(&eval_inputs)?);
    let eval_fps = models.fingerprints();

    let stage1_by_id: BTreeMap<&str, &str> = train_inputs
        .iter()
        .map(|(id, _)| *id)
        .zip(train_texts.iter().map(String::as_str))
        .collect();
    let examples: Vec<Example<'_>> = stage2_train
        .labeled()
        .map(|(e, note)| Example {
            id: &e.id,
            input: stage1_by_id[e.id.as_str()],
            target: note,
        })
        .collect();
    let reveal: Vec<Example<'_>> = eval
        .labeled()
        .zip(&eval_texts)
        .map(|((e, note), input)| Example {
            id: &e.id,
            input,
            target: note,
        })
        .collect();
    let seed = cfg.seed + STAGE2_SEED_OFFSET;
    let (model, history) = fit_backend(stage2, &examples, &reveal, seed)?;

    let mut log = RunLog {
        models: models.records,
        stage1_train_fingerprints: train_fps,
        stage1_eval_fingerprints: eval_fps,
        empty_stage1_train: empty_train,
        empty_stage1_eval: empty_eval,
        unlabeled_train_skipped: train.unlabeled_count(),
    };
    log.models.push(ModelRecord {
        slot: "stage2".into(),
        seed,
        train_examples: examples.len(),
        fingerprint: model.fingerprint(),
        history,
    });
    let stage2_inputs: Vec<(&str, &str)> = eval_inputs
        .iter()
        .zip(&eval_texts)
        .map(|((id, _), t)| (*id, t.as_str()))
        .collect();
    let outputs = apply_all(model.as_ref(), &stage2_inputs)?;
    Ok(ApproachOutput {
        predictions: prediction_set(cfg, &eval_inputs, outputs),
        log,
    })
}

/// Dispatches on `cfg.approach`.
pub fn run_approach(train: &Corpus, eval: &Corpus, cfg: &ApproachConfig) -> Result<ApproachOutput, PipelineError> {
    match cfg.approach {
        Approach::Single => run_approach1(train, eval, cfg),
        Approach::SectionWise => run_approach2(train, eval, cfg),
        Approach::MultiLayer => run_approach3(train, eval, cfg),
    }
}

/// Recognized sections present in at least one training note, in
/// canonical order.
pub fn observed_sections(train: &Corpus, aliases: &AliasTable) -> Vec<SectionId> {
    let mut seen: Vec<SectionId> = Vec::new();
    for (_, note) in train.labeled() {
        for s in segment_note(note, aliases).sections {
            if !s.id.is_unknown() && !s.body.trim().is_empty() && !seen.contains(&s.id) {
                seen.push(s.id);
            }
        }
    }
    seen.sort_by_key(SectionId::canonical_rank);
    seen
}
