use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use sectionsum::corpus::{save_predictions, split_corpus, Corpus, PredictionSet, PredictionSource};
use sectionsum::pipeline::{
    evaluate_references, evaluate_with, observed_sections, render_report, round_half_up, run_approach, sha256_hex,
    Approach, ApproachConfig, BackendConfig, Example, ReportFormat, RunReport, Summarizer, TinyLsgSettings,
    TinyLsgSummarizer,
};
use sectionsum::section::{division_of, segment_note, AliasTable, ChartNote, SectionId};
use sectionsum::tinylsg::{
    build_vocab, grad_check, load_checkpoint, lsg_mask, save_checkpoint, LsgConfig, ModelConfig,
};
use sectionsum::TinyModel64;
use serde::Serialize;

use crate::args::*;
use crate::io::{aliases, emit, label_of, load_corpus, read_candidates, read_input, read_notes};
use crate::usage;

pub fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let jobs = match &cli.command {
        Command::Predict(a) => a.jobs.jobs,
        Command::Score(a) => a.jobs.jobs,
        Command::Run(a) => a.jobs.jobs,
        Command::Report(a) => a.jobs.jobs,
        _ => None,
    };
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .context("starting worker pool")?;
    }
    match cli.command {
        Command::SplitSections(a) => split_sections(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Score(a) => score(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::GradCheck(a) => grad_check_cmd(a),
        Command::MaskDump(a) => mask_dump(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn validation<E: std::fmt::Display>(e: E) -> anyhow::Error {
    usage(e.to_string())
}

// ---------------------------------------------------------------- split-sections

#[derive(Serialize)]
struct SectionRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    section: String,
    division: String,
    header: String,
    body: String,
}

fn section_rows(id: Option<&str>, note: &ChartNote) -> Vec<SectionRow> {
    let mut rows = Vec::new();
    if !note.preamble.is_empty() {
        rows.push(SectionRow {
            id: id.map(str::to_string),
            section: "PREAMBLE".into(),
            division: String::new(),
            header: String::new(),
            body: note.preamble.clone(),
        });
    }
    for s in &note.sections {
        rows.push(SectionRow {
            id: id.map(str::to_string),
            section: s.id.to_string(),
            division: division_of(&s.id).map(|d| d.label().to_string()).unwrap_or_default(),
            header: s.header.clone(),
            body: s.body.clone(),
        });
    }
    rows
}

fn split_sections(a: SplitArgs) -> anyhow::Result<()> {
    let table = aliases(&a.aliases)?;
    let rows = if a.corpus {
        if a.input == Path::new("-") {
            return Err(usage("--corpus needs a corpus file, not standard input"));
        }
        let corpus = load_corpus(&a.input, &a.corpus_opts)?;
        corpus
            .labeled()
            .flat_map(|(e, note)| section_rows(Some(&e.id), &segment_note(note, &table)))
            .collect()
    } else {
        section_rows(None, &segment_note(&read_input(&a.input)?, &table))
    };
    let text = match a.output.format {
        FormatArg::Table => {
            let mut out = String::new();
            for r in &rows {
                let id = r.id.as_deref().map(|i| format!("{i} ")).unwrap_or_default();
                let division = if r.division.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", r.division)
                };
                let _ = writeln!(out, "== {id}{}{division} ==", r.section);
                let _ = writeln!(out, "{}\n", r.body);
            }
            out
        }
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| anyhow!("csv: {e}"))?)?
        }
        FormatArg::Json => serde_json::to_string_pretty(&rows)? + "\n",
    };
    emit(a.output.out.as_ref(), &text)
}

// ---------------------------------------------------------------- train / predict

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let settings = TinyLsgSettings {
        model: a.model.config(),
        train: a.optim.config(a.seed),
        lsg: a.lsg.config(),
        max_len: 128,
        min_freq: a.optim.min_freq,
    };
    settings.model.validate().map_err(validation)?;
    settings.train.validate().map_err(validation)?;
    settings.lsg.validate().map_err(validation)?;
    let section: Option<SectionId> = a
        .section
        .as_deref()
        .map(|s| s.parse().map_err(|e| usage(format!("--section: {e}"))))
        .transpose()?;

    let corpus = load_corpus(&a.train, &a.corpus_opts)?;
    let table = AliasTable::default();
    let targets: Vec<(&str, &str, String)> = corpus
        .labeled()
        .filter_map(|(e, note)| {
            let target = match &section {
                None => Some(note.to_string()),
                Some(id) => segment_note(note, &table)
                    .section_text(id)
                    .filter(|t| !t.trim().is_empty()),
            };
            target.map(|t| (e.id.as_str(), e.dialogue.as_str(), t))
        })
        .collect();
    if targets.is_empty() {
        return Err(anyhow!(
            "{}: no labeled training examples{}",
            a.train.display(),
            match &section {
                Some(s) => format!(" with section {s}"),
                None => String::new(),
            }
        ));
    }
    let examples: Vec<Example<'_>> = targets
        .iter()
        .map(|(id, input, target)| Example { id, input, target })
        .collect();
    let epochs = settings.train.epochs;
    let (model, history) = TinyLsgSummarizer::fit_with(&settings, &examples, a.seed, |e, loss| {
        eprintln!("epoch {}/{epochs} loss {loss:.6}", e + 1);
    })?;
    save_checkpoint(&model.model, &model.lsg, &a.out)?;
    eprintln!(
        "trained on {} examples, {} parameters, vocab {}, final loss {:.6}; wrote {}",
        examples.len(),
        model.model.parameter_count(),
        model.model.vocab.len(),
        history.final_loss,
        a.out.display()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> anyhow::Result<()> {
    if a.max_len == 0 {
        return Err(usage("--max-len must be at least 1"));
    }
    let bytes = fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let (model, lsg) = load_checkpoint::<f64>(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let corpus = load_corpus(&a.input, &a.corpus_opts)?;
    let summarizer = TinyLsgSummarizer {
        model,
        lsg,
        max_len: a.max_len,
    };
    let outputs: Vec<(String, String)> = corpus
        .encounters()
        .par_iter()
        .map(|e| summarizer.summarize(&e.id, &e.dialogue).map(|s| (e.id.clone(), s)))
        .collect::<Result<_, _>>()?;
    let mut hashed = bytes;
    hashed.extend_from_slice(&(a.max_len as u64).to_le_bytes());
    let mut p = PredictionSet::new(PredictionSource::Single, a.seed, sha256_hex(&hashed));
    p.entries = outputs.into_iter().collect();
    match &a.out {
        Some(path) => save_predictions(&p, path)?,
        None => emit(None, &p.to_json())?,
    }
    Ok(())
}

// ---------------------------------------------------------------- score / report

fn per_document_rows(r: &RunReport<f64>) -> Vec<(String, [String; 3])> {
    r.full
        .per_document
        .iter()
        .map(|(id, d)| {
            (
                id.clone(),
                [d.rouge1.f1, d.rouge2.f1, d.rouge_l.f1].map(|v| round_half_up(v, 4)),
            )
        })
        .collect()
}

fn score(a: ScoreArgs) -> anyhow::Result<()> {
    let table = aliases(&a.aliases)?;
    let candidates = read_candidates(&a.candidates, &a.corpus_opts)?;
    let references = read_notes(&a.references, &a.corpus_opts)?;
    let refs: Vec<(&str, Option<&str>)> = references.iter().map(|(i, n)| (i.as_str(), n.as_deref())).collect();
    let mut report: RunReport<f64> = evaluate_references(&candidates, &refs, &table, &a.tokens.options())?;
    report.label = label_of(&a.candidates);
    let docs = per_document_rows(&report);
    let format: ReportFormat = a.output.format.into();
    let summary = render_report(std::slice::from_ref(&report), format)?;
    let text = match a.output.format {
        FormatArg::Table => {
            let width = docs.iter().map(|(id, _)| id.len()).max().unwrap_or(0).max(2);
            let mut out = format!(
                "Per document (F1)\n{:<width$}  {:>6}  {:>6}  {:>6}\n",
                "id", "Rouge1", "Rouge2", "RougeL"
            );
            for (id, [r1, r2, rl]) in &docs {
                let _ = writeln!(out, "{id:<width$}  {r1:>6}  {r2:>6}  {rl:>6}");
            }
            out.push('\n');
            out + &summary
        }
        FormatArg::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["id", "Rouge1", "Rouge2", "RougeL"])?;
            for (id, cells) in &docs {
                w.write_record(std::iter::once(id.as_str()).chain(cells.iter().map(String::as_str)))?;
            }
            let block = String::from_utf8(w.into_inner().map_err(|e| anyhow!("csv: {e}"))?)?;
            block + "\n" + &summary
        }
        FormatArg::Json => {
            let per_document: serde_json::Map<String, serde_json::Value> = docs
                .into_iter()
                .map(|(id, [r1, r2, rl])| {
                    let num = |s: String| serde_json::Value::from(s.parse::<f64>().expect("rounded number"));
                    (
                        id,
                        serde_json::json!({ "Rouge1": num(r1), "Rouge2": num(r2), "RougeL": num(rl) }),
                    )
                })
                .collect();
            let doc = serde_json::json!({
                "per_document": per_document,
                "report": serde_json::from_str::<serde_json::Value>(&summary)?,
            });
            serde_json::to_string_pretty(&doc)? + "\n"
        }
    };
    emit(a.output.out.as_ref(), &text)
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let runs: Vec<RunReport<f64>> = if !a.runs.is_empty() {
        a.runs
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("{}: not a run report", p.display()))
            })
            .collect::<anyhow::Result<_>>()?
    } else if let Some(refs) = &a.references {
        let table = aliases(&a.aliases)?;
        let corpus = load_corpus(refs, &a.corpus_opts)?;
        a.predictions
            .iter()
            .map(|p| {
                let set = sectionsum::corpus::load_predictions(p)?;
                Ok(evaluate_with(&set, &corpus, &table, &a.tokens.options())?)
            })
            .collect::<anyhow::Result<_>>()?
    } else {
        return Err(usage("give --runs, or --predictions with --references"));
    };
    emit(a.output.out.as_ref(), &render_report(&runs, a.output.format.into())?)
}

// ---------------------------------------------------------------- run

fn backend(kind: BackendArg, k: usize, settings: &TinyLsgSettings) -> BackendConfig {
    match kind {
        BackendArg::Oracle => BackendConfig::Oracle,
        BackendArg::Identity => BackendConfig::Identity,
        BackendArg::Extractive => BackendConfig::Extractive { k },
        BackendArg::TinyLsg => BackendConfig::TinyLsg(settings.clone()),
    }
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    if let Some(f) = a.train_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(usage(format!("--train-fraction {f} must lie strictly between 0 and 1")));
        }
    } else if a.eval.is_none() {
        return Err(usage("give --eval, or --train-fraction to hold out part of --train"));
    }
    let explicit: Option<Vec<SectionId>> = match a.sections.trim() {
        "auto" => None,
        list => Some(
            list.split(',')
                .map(|s| s.parse::<SectionId>().map_err(|e| usage(format!("--sections: {e}"))))
                .collect::<anyhow::Result<_>>()?,
        ),
    };
    let settings = TinyLsgSettings {
        model: a.model.config(),
        train: a.optim.config(a.seed),
        lsg: a.lsg.config(),
        max_len: a.max_len,
        min_freq: a.optim.min_freq,
    };
    if a.max_len == 0 {
        return Err(usage("--max-len must be at least 1"));
    }
    let stage1 = backend(a.backend, a.k, &settings);
    let stage2 = backend(a.stage2.unwrap_or(a.backend), a.stage2_k.unwrap_or(a.k), &settings);
    let approaches: Vec<Approach> = match a.approach {
        ApproachArg::Single => vec![Approach::Single],
        ApproachArg::SectionWise => vec![Approach::SectionWise],
        ApproachArg::MultiLayer => vec![Approach::MultiLayer],
        ApproachArg::All => Approach::ALL.to_vec(),
    };
    let make = |approach: Approach, sections: Vec<SectionId>| {
        let mut cfg = ApproachConfig::new(approach, stage1.clone(), a.seed);
        if approach != Approach::Single {
            cfg = cfg.with_sections(sections);
        }
        if approach == Approach::MultiLayer {
            cfg = cfg.with_stage2(stage2.clone());
            cfg.stage2_split = a.stage2_split;
            cfg.stage2_headers = !a.no_stage2_headers;
        }
        cfg
    };
    // Flag-level checks before touching any file.
    for &approach in &approaches {
        let probe = explicit.clone().unwrap_or_else(|| vec![SectionId::Hpi]);
        make(approach, probe).validate().map_err(validation)?;
    }

    let full = load_corpus(&a.train, &a.corpus_opts)?;
    let (train, eval): (Corpus, Corpus) = match (&a.eval, a.train_fraction) {
        (Some(path), _) => (full, load_corpus(path, &a.corpus_opts)?),
        (None, Some(f)) => split_corpus(&full, f, a.seed)?,
        (None, None) => unreachable!("checked above"),
    };
    let sections = match explicit {
        Some(s) => s,
        None => observed_sections(&train, &AliasTable::default()),
    };
    let configs: Vec<ApproachConfig> = approaches.iter().map(|&ap| make(ap, sections.clone())).collect();
    for cfg in &configs {
        cfg.validate().map_err(validation)?;
    }
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let mut reports = Vec::new();
    for cfg in &configs {
        let out = run_approach(&train, &eval, cfg).with_context(|| format!("approach {}", cfg.approach))?;
        for m in &out.log.models {
            if let Some(h) = &m.history {
                for (e, loss) in h.epoch_losses.iter().enumerate() {
                    eprintln!(
                        "{} {} epoch {}/{} loss {loss:.6}",
                        cfg.approach,
                        m.slot,
                        e + 1,
                        h.epoch_losses.len()
                    );
                }
            }
        }
        let report: RunReport<f64> =
            evaluate_with(&out.predictions, &eval, &AliasTable::default(), &a.tokens.options())?;
        if let Some(dir) = &a.out_dir {
            let name = cfg.approach.name();
            save_predictions(&out.predictions, &dir.join(format!("{name}.predictions.json")))?;
            write_json(&dir.join(format!("{name}.report.json")), &report)?;
            write_json(&dir.join(format!("{name}.log.json")), &out.log)?;
        }
        reports.push(report);
    }
    emit(a.output.out.as_ref(), &render_report(&reports, a.output.format.into())?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- diagnostics

fn grad_check_cmd(a: GradCheckArgs) -> anyhow::Result<()> {
    if [a.epsilon, a.tolerance].iter().any(|v| v.is_nan() || *v <= 0.0) || a.samples == 0 {
        return Err(usage(
            "--epsilon and --tolerance must be positive and --samples at least 1",
        ));
    }
    let mc = ModelConfig {
        d_model: a.d_model,
        n_heads: a.heads,
        n_layers_enc: a.enc_layers,
        n_layers_dec: a.dec_layers,
        d_ff: a.d_ff,
    };
    mc.validate().map_err(validation)?;
    let vocab = build_vocab(&[a.src.as_str(), a.tgt.as_str()], 1).map_err(validation)?;
    let model = TinyModel64::new(mc, vocab, a.seed)?;
    let (src, tgt) = (model.vocab.encode(&a.src), model.vocab.encode(&a.tgt));
    let lsg = LsgConfig {
        block_size: a.block,
        sparsity_stride: a.stride,
        num_global: a.global,
        max_input_tokens: src.len().max(a.block).max(1),
        local_radius: 1,
    };
    lsg.validate().map_err(validation)?;
    let report = grad_check(&model, (&src, &tgt), &lsg, a.epsilon, a.samples, a.seed)?;
    if a.verbose {
        println!("index\tanalytic\tnumeric\terror");
        for (i, an, nu, err) in &report.samples {
            println!("{i}\t{an:.6e}\t{nu:.6e}\t{err:.3e}");
        }
    }
    println!(
        "max relative error {:.3e} over {} parameters (epsilon {:e}, tolerance {:e})",
        report.max_relative_error,
        report.samples.len(),
        a.epsilon,
        a.tolerance
    );
    if report.max_relative_error >= a.tolerance {
        return Err(anyhow!(
            "gradient check failed: {:.3e} >= {:e}",
            report.max_relative_error,
            a.tolerance
        ));
    }
    Ok(())
}

fn mask_dump(a: MaskDumpArgs) -> anyhow::Result<()> {
    if a.seq_len == 0 || a.block == 0 {
        return Err(usage("--seq-len and --block must be at least 1"));
    }
    let cfg = LsgConfig {
        block_size: a.block,
        sparsity_stride: a.stride,
        num_global: a.global,
        max_input_tokens: a.seq_len.max(a.block),
        local_radius: a.radius,
    };
    let mask = lsg_mask(a.seq_len, &cfg);
    emit(None, &mask.to_grid())?;
    eprintln!(
        "density {:.4} ({} of {} pairs)",
        mask.density(),
        mask.allowed_count(),
        a.seq_len * a.seq_len
    );
    Ok(())
}
