mod common;

use num_rational::BigRational;
use num_traits::FromPrimitive;
use sectionsum::corpus::{Corpus, Encounter, PredictionSet, PredictionSource};
use sectionsum::pipeline::*;
use sectionsum::rouge::{rouge_n, tokenize};
use sectionsum::section::{segment_note, AliasTable, Division, SectionId};
use sectionsum::synthetic::{synthetic_corpus, SECTIONS};
use sectionsum::tinylsg::LsgConfig;

fn encounter(id: &str, dialogue: &str, note: Option<&str>) -> Encounter {
    Encounter {
        id: id.into(),
        dialogue: dialogue.into(),
        note: note.map(String::from),
    }
}

fn split(n_train: usize, n_eval: usize, seed: u64) -> (Corpus, Corpus) {
    let all = synthetic_corpus(n_train + n_eval, seed);
    let (a, b) = all.encounters().split_at(n_train);
    (Corpus::new(a.to_vec()).unwrap(), Corpus::new(b.to_vec()).unwrap())
}

fn oracle_configs(seed: u64) -> Vec<ApproachConfig> {
    vec![
        ApproachConfig::new(Approach::Single, BackendConfig::Oracle, seed),
        ApproachConfig::new(Approach::SectionWise, BackendConfig::Oracle, seed).with_sections(SECTIONS),
        ApproachConfig::new(Approach::MultiLayer, BackendConfig::Oracle, seed)
            .with_sections(SECTIONS)
            .with_stage2(BackendConfig::Identity),
        ApproachConfig::new(Approach::MultiLayer, BackendConfig::Oracle, seed)
            .with_sections(SECTIONS)
            .with_stage2(BackendConfig::Oracle),
    ]
}

#[test]
fn oracle_chain_scores_one_everywhere() {
    let (train, eval) = split(20, 10, 3);
    for cfg in oracle_configs(7) {
        let out = run_approach(&train, &eval, &cfg).unwrap();
        let report: RunReport<BigRational> = evaluate(&out.predictions, &eval).unwrap();
        let one = BigRational::from_integer(1.into());
        assert_eq!(report.full.rouge1.f1, one, "{:?}", cfg.approach);
        assert_eq!(report.full.rouge2.f1, one);
        assert_eq!(report.full.rouge_l.f1, one);
        for d in &report.divisions {
            assert_eq!(d.f1, one, "{:?}", d.division);
            assert_eq!(d.pairs, 10);
        }
        assert_eq!(report.average, one);
    }
}

#[test]
fn oracle_section_wise_reproduces_reference_sections() {
    let (train, eval) = split(10, 5, 4);
    let cfg = ApproachConfig::new(Approach::SectionWise, BackendConfig::Oracle, 1).with_sections(SECTIONS);
    let out = run_approach2(&train, &eval, &cfg).unwrap();
    let aliases = AliasTable::default();
    for (e, note) in eval.labeled() {
        let got = segment_note(&out.predictions.entries[&e.id], &aliases);
        assert_eq!(got.pairs(), segment_note(note, &aliases).pairs());
    }
}

#[test]
fn identity_stage_two_equals_section_wise() {
    let (train, eval) = split(15, 6, 5);
    for backend in [BackendConfig::Oracle, BackendConfig::Extractive { k: 2 }] {
        let a2 = ApproachConfig::new(Approach::SectionWise, backend.clone(), 9).with_sections(SECTIONS);
        let a3 = ApproachConfig {
            approach: Approach::MultiLayer,
            stage2: Some(BackendConfig::Identity),
            ..a2.clone()
        };
        let p2 = run_approach2(&train, &eval, &a2).unwrap();
        let p3 = run_approach3(&train, &eval, &a3).unwrap();
        assert_eq!(p2.predictions.entries, p3.predictions.entries);
        assert_eq!(p3.log.stage1_train_fingerprints, p3.log.stage1_eval_fingerprints);
        assert_eq!(p3.log.stage1_eval_fingerprints, p2.log.stage1_eval_fingerprints);
        assert_eq!(p3.predictions.approach, PredictionSource::MultiLayer);
    }
}

#[test]
fn extractive_single_picks_top_three_in_source_order() {
    let train = Corpus::new(vec![encounter("t", "irrelevant", Some("cough fever rash"))]).unwrap();
    let eval = Corpus::new(vec![encounter(
        "e",
        "hello there. cough and fever. rash. cough cough. goodbye fever.",
        Some("cough"),
    )])
    .unwrap();
    // Ten dialogue tokens; weights are 1 for cough/fever/rash and 0 otherwise.
    // Scores: 0, (3+2)/10/3, 1/10, 3/10, 2/10/2. The tie at 0.1 goes to "rash."
    let cfg = ApproachConfig::new(Approach::Single, BackendConfig::Extractive { k: 3 }, 0);
    let out = run_approach1(&train, &eval, &cfg).unwrap();
    assert_eq!(out.predictions.entries["e"], "cough and fever.\nrash.\ncough cough.");
}

#[test]
fn extractive_section_models_recover_verbatim_sections() {
    let (train, eval) = split(30, 10, 6);
    let cfg = ApproachConfig::new(Approach::SectionWise, BackendConfig::Extractive { k: 2 }, 2).with_sections(SECTIONS);
    let out = run_approach2(&train, &eval, &cfg).unwrap();
    let aliases = AliasTable::default();
    for (e, note) in eval.labeled() {
        let pred = segment_note(&out.predictions.entries[&e.id], &aliases);
        let reference = segment_note(note, &aliases);
        for d in Division::ALL {
            let (p, r) = (pred.division_text(d).unwrap(), reference.division_text(d).unwrap());
            let s = rouge_n::<f64>(&tokenize(&p), &tokenize(&r), 1);
            assert_eq!(s.recall, 1.0, "{} {:?}", e.id, d);
        }
    }
}

#[test]
fn unconfigured_sections_never_appear_and_unseen_ones_fail() {
    let (train, eval) = split(10, 4, 7);
    let cfg = ApproachConfig::new(Approach::SectionWise, BackendConfig::Oracle, 0).with_sections([SectionId::Hpi]);
    let out = run_approach2(&train, &eval, &cfg).unwrap();
    for text in out.predictions.entries.values() {
        let ids: Vec<SectionId> = segment_note(text, &AliasTable::default())
            .sections
            .into_iter()
            .map(|s| s.id)
            .collect();
        assert_eq!(ids, [SectionId::Hpi]);
    }
    let cfg = cfg.with_sections([SectionId::Hpi, SectionId::Ros]);
    assert!(matches!(
        run_approach2(&train, &eval, &cfg),
        Err(PipelineError::SectionNeverObserved(SectionId::Ros))
    ));
}

#[test]
fn adding_a_section_leaves_the_others_untouched() {
    let (train, eval) = split(20, 8, 8);
    let base = ApproachConfig::new(Approach::SectionWise, BackendConfig::Extractive { k: 2 }, 5)
        .with_sections([SectionId::Hpi, SectionId::Results]);
    let more = base
        .clone()
        .with_sections([SectionId::Hpi, SectionId::Pe, SectionId::Results]);
    let a = run_approach2(&train, &eval, &base).unwrap().predictions;
    let b = run_approach2(&train, &eval, &more).unwrap().predictions;
    let aliases = AliasTable::default();
    for id in a.entries.keys() {
        let (na, nb) = (
            segment_note(&a.entries[id], &aliases),
            segment_note(&b.entries[id], &aliases),
        );
        for s in [SectionId::Hpi, SectionId::Results] {
            assert_eq!(na.section_text(&s), nb.section_text(&s));
        }
        assert!(nb.section_text(&SectionId::Pe).is_some());
    }
}

#[test]
fn stage_two_split_and_bare_inputs() {
    let (train, eval) = split(16, 4, 9);
    let cfg = ApproachConfig {
        stage2_split: true,
        stage2_headers: false,
        ..ApproachConfig::new(Approach::MultiLayer, BackendConfig::Extractive { k: 2 }, 3)
            .with_sections(SECTIONS)
            .with_stage2(BackendConfig::Identity)
    };
    let out = run_approach3(&train, &eval, &cfg).unwrap();
    let section_models = out.log.models.iter().filter(|m| m.slot != "stage2");
    assert!(section_models.clone().all(|m| m.train_examples == 8));
    assert_eq!(out.log.models.last().unwrap().train_examples, 8);
    for text in out.predictions.entries.values() {
        assert!(segment_note(text, &AliasTable::default()).sections.is_empty());
    }
}

#[test]
fn tiny_lsg_single_model_memorizes() {
    let (mc, tc, lsg) = common::memo_config();
    let encounters = common::MEMO_PAIRS
        .iter()
        .enumerate()
        .map(|(i, (d, n))| encounter(&format!("m{i}"), d, Some(n)))
        .collect();
    let corpus = Corpus::new(encounters).unwrap();
    let settings = TinyLsgSettings {
        model: mc,
        train: tc,
        lsg,
        max_len: 16,
        min_freq: 1,
    };
    let cfg = ApproachConfig::new(Approach::Single, BackendConfig::TinyLsg(settings), 0);
    let out = run_approach1(&corpus, &corpus, &cfg).unwrap();
    for (e, note) in corpus.labeled() {
        assert_eq!(out.predictions.entries[&e.id], note);
    }
    let history = out.log.models[0].history.as_ref().unwrap();
    assert!(history.final_loss < 0.1);
}

#[test]
fn runs_are_deterministic() {
    let (train, eval) = split(12, 4, 10);
    let settings = TinyLsgSettings {
        model: sectionsum::tinylsg::ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 16,
        },
        train: sectionsum::tinylsg::TrainConfig {
            epochs: 2,
            initial_lr: 1e-3,
            ..Default::default()
        },
        lsg: LsgConfig {
            block_size: 8,
            ..LsgConfig::default()
        },
        max_len: 12,
        min_freq: 1,
    };
    let cfg = ApproachConfig::new(Approach::SectionWise, BackendConfig::TinyLsg(settings), 11)
        .with_sections([SectionId::Hpi, SectionId::Pe]);
    let a = run_approach(&train, &eval, &cfg).unwrap();
    let b = run_approach(&train, &eval, &cfg).unwrap();
    assert_eq!(a.predictions.to_json(), b.predictions.to_json());
    assert_eq!(a.log, b.log);
    let ra = render_report(&[evaluate(&a.predictions, &eval).unwrap()], ReportFormat::Json).unwrap();
    let rb = render_report(&[evaluate(&b.predictions, &eval).unwrap()], ReportFormat::Json).unwrap();
    assert_eq!(ra, rb);
}

fn predictions(entries: &[(&str, &str)]) -> PredictionSet {
    let mut p = PredictionSet::new(PredictionSource::SectionWise, 0, "h");
    p.entries = entries.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    p
}

const FULL_NOTE: &str = "HISTORY OF PRESENT ILLNESS\n\ncough two days\n\nPHYSICAL EXAM\n\nlungs clear\n\nRESULTS\n\nxray normal\n\nPLAN\n\nrest\n";

#[test]
fn missing_exam_division_scores_zero() {
    let eval = Corpus::new(vec![encounter("a", "d", Some(FULL_NOTE))]).unwrap();
    let pred = FULL_NOTE.replace("PHYSICAL EXAM\n\nlungs clear\n\n", "");
    let r: RunReport<f64> = evaluate(&predictions(&[("a", &pred)]), &eval).unwrap();
    assert_eq!(r.division(Division::Exam).f1, 0.0);
    assert_eq!(r.division(Division::Exam).missing_in_prediction, 1);
    for d in [Division::Subjective, Division::Results, Division::AssessmentAndPlan] {
        assert_eq!(r.division(d).f1, 1.0);
    }
    assert_eq!(r.average, 0.75);
}

#[test]
fn two_document_hand_computed_divisions() {
    let eval = Corpus::new(vec![
        encounter("d1", "x", Some("CHIEF COMPLAINT\n\nthe cat lay on the mat\n")),
        encounter("d2", "x", Some("CHIEF COMPLAINT\n\nx\n\nPLAN\n\na c\n")),
    ])
    .unwrap();
    let p = predictions(&[
        ("d1", "CHIEF COMPLAINT\n\nthe cat sat on the mat\n"),
        ("d2", "PLAN\n\na b\n"),
    ]);
    let r: RunReport<BigRational> = evaluate(&p, &eval).unwrap();
    let q = |n: i64, d: i64| BigRational::new(n.into(), d.into());
    // Subjective: d1 scores 5/6, d2 lacks it in the prediction and scores 0.
    assert_eq!(r.division(Division::Subjective).f1, q(5, 12));
    // Assessment and plan: only d2 has it, "a b" against "a c".
    assert_eq!(r.division(Division::AssessmentAndPlan).f1, q(1, 2));
    assert_eq!(r.division(Division::AssessmentAndPlan).pairs, 1);
    assert_eq!(r.division(Division::Exam).pairs, 0);
    assert_eq!(r.average, q(11, 48));
    let f = r.to_f64();
    assert_eq!(f.average, f64::from_i64(11).unwrap() / 48.0);
}

#[test]
fn evaluation_errors_and_unlabeled_rows() {
    let eval = Corpus::new(vec![encounter("a", "d", Some("x")), encounter("b", "d", None)]).unwrap();
    assert!(matches!(
        evaluate::<f64>(&predictions(&[("a", "x"), ("zz", "x")]), &eval),
        Err(PipelineError::MissingReference(id)) if id == "zz"
    ));
    assert!(
        matches!(evaluate::<f64>(&predictions(&[]), &eval), Err(PipelineError::MissingPrediction(id)) if id == "a")
    );
    let r: RunReport<f64> = evaluate(&predictions(&[("a", "x"), ("b", "y")]), &eval).unwrap();
    assert_eq!(r.skipped_unlabeled, 1);
    assert_eq!(r.documents, 1);
    let unlabeled = Corpus::new(vec![encounter("b", "d", None)]).unwrap();
    assert!(matches!(
        evaluate::<f64>(&predictions(&[]), &unlabeled),
        Err(PipelineError::EmptyEvaluation)
    ));
}

#[test]
fn report_rows_follow_input_order_and_csv_round_trips() {
    let (train, eval) = split(12, 6, 12);
    let mut runs = Vec::new();
    for (label, cfg) in [
        (
            "Single",
            ApproachConfig::new(Approach::Single, BackendConfig::Extractive { k: 3 }, 1),
        ),
        (
            "Section Wise",
            ApproachConfig::new(Approach::SectionWise, BackendConfig::Extractive { k: 2 }, 1).with_sections(SECTIONS),
        ),
        (
            "Multi-Layer",
            ApproachConfig::new(Approach::MultiLayer, BackendConfig::Extractive { k: 2 }, 1)
                .with_sections(SECTIONS)
                .with_stage2(BackendConfig::Extractive { k: 8 }),
        ),
    ] {
        let out = run_approach(&train, &eval, &cfg).unwrap();
        let r: RunReport<f64> = evaluate(&out.predictions, &eval).unwrap();
        assert_eq!(r.label, label);
        assert_eq!(r.config_hash, cfg.config_hash());
        runs.push(r);
    }
    let csv = render_report(&runs, ReportFormat::Csv).unwrap();
    let blocks: Vec<&str> = csv.split("\n\n").collect();
    assert_eq!(blocks.len(), 2);
    let mut full = csv::Reader::from_reader(blocks[0].as_bytes());
    let rows: Vec<csv::StringRecord> = full.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, r) in rows.iter().zip(&runs) {
        assert_eq!(&row[1], r.label);
        assert_eq!(row[2], round_half_up(r.full.rouge1.f1, 4));
        assert_eq!(row[4], round_half_up(r.full.rouge_l.f1, 4));
    }
    let mut div = csv::Reader::from_reader(blocks[1].as_bytes());
    let rows: Vec<csv::StringRecord> = div.records().map(Result::unwrap).collect();
    for (row, r) in rows.iter().zip(&runs) {
        assert_eq!(row[6], round_half_up(r.average, 4));
        assert_eq!(row[3], round_half_up(r.division(Division::Exam).f1, 4));
    }
    let table = render_report(&runs, ReportFormat::Table).unwrap();
    let order: Vec<usize> = ["Single", "Section Wise", "Multi-Layer"]
        .iter()
        .map(|l| table.find(l).unwrap())
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
    let json: serde_json::Value = serde_json::from_str(&render_report(&runs, ReportFormat::Json).unwrap()).unwrap();
    assert_eq!(json["section_wise"].as_array().unwrap().len(), 3);
    assert!(matches!(
        render_report(&[], ReportFormat::Table),
        Err(PipelineError::NoRuns)
    ));
}

#[test]
fn config_validation() {
    let bad = [
        ApproachConfig::new(Approach::SectionWise, BackendConfig::Oracle, 0),
        ApproachConfig::new(Approach::MultiLayer, BackendConfig::Oracle, 0).with_sections([SectionId::Hpi]),
        ApproachConfig::new(Approach::Single, BackendConfig::Extractive { k: 0 }, 0),
        ApproachConfig::new(Approach::SectionWise, BackendConfig::Oracle, 0)
            .with_sections([SectionId::Unknown("X".into())]),
    ];
    for cfg in bad {
        assert!(
            matches!(cfg.validate(), Err(PipelineError::InvalidConfig(_))),
            "{cfg:?}"
        );
    }
    let a = ApproachConfig::new(Approach::Single, BackendConfig::Oracle, 0);
    let b = ApproachConfig::new(Approach::Single, BackendConfig::Oracle, 1);
    assert_ne!(a.config_hash(), b.config_hash());
    assert_eq!(a.config_hash(), a.clone().config_hash());
    let wrong = run_approach2(&synthetic_corpus(3, 0), &synthetic_corpus(3, 0), &a);
    assert!(matches!(wrong, Err(PipelineError::InvalidConfig(_))));
}
