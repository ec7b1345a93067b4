//! Seeded toy encounters for demos and tests.
//!
//! Each note has four sections (HPI, PE, RESULTS, ASSESSMENT AND PLAN), one
//! per division, and each section draws its words from its own vocabulary.
//! Every note sentence also appears verbatim as a turn in the dialogue,
//! mixed with small talk that shares no words with any note.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Encounter};
use crate::section::{assemble_note, ChartNote, HeaderStyle, Section, SectionId};

const HPI_WORDS: &[&str] = &[
    "cough",
    "fever",
    "headache",
    "nausea",
    "fatigue",
    "dizziness",
    "chills",
    "wheezing",
    "since",
    "tuesday",
    "worsening",
    "nightly",
    "reports",
    "denies",
    "sore",
    "throat",
];
const PE_WORDS: &[&str] = &[
    "lungs",
    "clear",
    "auscultation",
    "abdomen",
    "soft",
    "nontender",
    "heart",
    "regular",
    "rhythm",
    "murmur",
    "pupils",
    "reactive",
    "edema",
    "bilateral",
    "tympanic",
    "membranes",
];
const RESULTS_WORDS: &[&str] = &[
    "hemoglobin",
    "glucose",
    "creatinine",
    "sodium",
    "potassium",
    "xray",
    "ecg",
    "within",
    "limits",
    "elevated",
    "decreased",
    "culture",
    "negative",
    "panel",
    "urinalysis",
    "troponin",
];
const PLAN_WORDS: &[&str] = &[
    "start",
    "amoxicillin",
    "ibuprofen",
    "follow",
    "return",
    "rest",
    "fluids",
    "refer",
    "cardiology",
    "order",
    "repeat",
    "labs",
    "prescribe",
    "inhaler",
    "schedule",
    "counsel",
];
const SMALL_TALK: &[&str] = &[
    "hello how are you doing today.",
    "thanks for coming in.",
    "okay let me take a look.",
    "is there anything else?",
    "alright.",
    "that sounds good to me.",
    "see you soon.",
    "any questions for me?",
];

pub const SECTIONS: [SectionId; 4] = [
    SectionId::Hpi,
    SectionId::Pe,
    SectionId::Results,
    SectionId::AssessmentAndPlan,
];

fn words_for(id: &SectionId) -> &'static [&'static str] {
    match id {
        SectionId::Hpi => HPI_WORDS,
        SectionId::Pe => PE_WORDS,
        SectionId::Results => RESULTS_WORDS,
        _ => PLAN_WORDS,
    }
}

fn sentence(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let n = rng.random_range(4..=7);
    let picked: Vec<&str> = (0..n).map(|_| *words.choose(rng).expect("nonempty list")).collect();
    format!("{}.", picked.join(" "))
}

/// `n` encounters with ids `S000`, `S001`, ... Each section body has one or
/// two sentences; the note is assembled with canonical headers.
pub fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encounters = (0..n)
        .map(|i| {
            let mut sections = Vec::new();
            let mut turns: Vec<String> = Vec::new();
            for id in &SECTIONS {
                let count = rng.random_range(1..=2);
                let body: Vec<String> = (0..count).map(|_| sentence(&mut rng, words_for(id))).collect();
                turns.extend(body.iter().cloned());
                sections.push(Section::new(id.clone(), body.join(" ")));
            }
            for _ in 0..rng.random_range(2..=4) {
                let at = rng.random_range(0..=turns.len());
                turns.insert(at, SMALL_TALK.choose(&mut rng).expect("nonempty list").to_string());
            }
            let dialogue = turns
                .iter()
                .enumerate()
                .map(|(t, s)| format!("{}: {s}", if t % 2 == 0 { "Doctor" } else { "Patient" }))
                .collect::<Vec<_>>()
                .join("\n");
            let note = assemble_note(
                &ChartNote {
                    preamble: String::new(),
                    sections,
                },
                HeaderStyle::Canonical,
                false,
            );
            Encounter {
                id: format!("S{i:03}"),
                dialogue,
                note: Some(note),
            }
        })
        .collect();
    Corpus::new(encounters).expect("generated ids are unique and dialogues nonempty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::section::{segment_note, AliasTable};

    #[test]
    fn notes_segment_into_four_sections() {
        let c = synthetic_corpus(5, 1);
        let aliases = AliasTable::default();
        for (e, note) in c.labeled() {
            let parsed = segment_note(note, &aliases);
            let ids: Vec<SectionId> = parsed.sections.iter().map(|s| s.id.clone()).collect();
            assert_eq!(ids, SECTIONS);
            for s in &parsed.sections {
                for sent in crate::pipeline::split_sentences(&s.body) {
                    assert!(e.dialogue.contains(sent));
                }
            }
        }
        assert_eq!(synthetic_corpus(5, 1), c);
        assert_ne!(synthetic_corpus(5, 2), c);
    }
}
