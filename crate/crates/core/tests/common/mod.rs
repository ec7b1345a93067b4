//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness. Everything here is written from the definitions, not by calling
//! into the code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sectionsum::section::{ChartNote, Section, SectionId};
use sectionsum::tinylsg::{LsgConfig, ModelConfig, TinyModel, TrainConfig, GLOBAL};

// ---------------------------------------------------------------- ROUGE

/// Clipped n-gram overlap by counting every n-gram on both sides.
pub fn brute_overlap(cand: &[String], reference: &[String], n: usize) -> u64 {
    let count = |s: &[String]| {
        let mut m: BTreeMap<Vec<String>, u64> = BTreeMap::new();
        if s.len() >= n {
            for i in 0..=s.len() - n {
                *m.entry(s[i..i + n].to_vec()).or_default() += 1;
            }
        }
        m
    };
    let (c, r) = (count(cand), count(reference));
    c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum()
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|h| h == *x))
}

/// Longest common subsequence by trying every subset of the shorter side.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let pick: Vec<&String> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| &short[i])
            .collect();
        if pick.len() > best && is_subsequence(&pick, long) {
            best = pick.len();
        }
    }
    best
}

pub fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize, alphabet: usize) -> Vec<String> {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| ((b'a' + rng.random_range(0..alphabet) as u8) as char).to_string())
        .collect()
}

// ---------------------------------------------------------------- masks

pub fn ref_local(q: usize, k: usize, cfg: &LsgConfig) -> bool {
    let g = cfg.num_global;
    if q < g || k < g {
        return false;
    }
    let (bq, bk) = (q / cfg.block_size, k / cfg.block_size);
    bq.max(bk) - bq.min(bk) <= cfg.local_radius
}

pub fn ref_sparse(_q: usize, k: usize, cfg: &LsgConfig) -> bool {
    cfg.sparsity_stride > 0 && k >= cfg.num_global && (k - cfg.num_global).is_multiple_of(cfg.sparsity_stride)
}

pub fn ref_global(q: usize, k: usize, cfg: &LsgConfig) -> bool {
    q < cfg.num_global || k < cfg.num_global
}

// ---------------------------------------------------------------- encoder

type Mat = Vec<Vec<f64>>;

fn to_mat(m: &sectionsum::Matrix64) -> Mat {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn linear(x: &Mat, l: &sectionsum::tinylsg::Linear<f64>) -> Mat {
    let b = l.b.row(0);
    matmul(x, &to_mat(&l.w))
        .into_iter()
        .map(|row| row.iter().zip(b).map(|(v, bb)| v + bb).collect())
        .collect()
}

fn layer_norm(x: &Mat, ln: &sectionsum::tinylsg::LayerNorm<f64>) -> Mat {
    let (g, b) = (ln.gamma.row(0), ln.beta.row(0));
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let sd = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(c, v)| (v - mean) / sd * g[c] + b[c])
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

/// Dense multi-head self-attention with no mask at all.
fn full_self_attention(x: &Mat, mha: &sectionsum::tinylsg::MultiHeadAttention<f64>, heads: usize) -> Mat {
    let (q, k, v) = (linear(x, &mha.q), linear(x, &mha.k), linear(x, &mha.v));
    let n = x.len();
    let d = q[0].len();
    let dh = d / heads;
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                ctx[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    linear(&ctx, &mha.o)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Encoder output computed with full attention, straight from the weights.
pub fn reference_encoder(model: &TinyModel<f64>, src: &[usize], num_global: usize) -> Mat {
    let d = model.config.d_model;
    let tokens: Vec<usize> = std::iter::repeat_n(GLOBAL, num_global)
        .chain(src.iter().copied())
        .collect();
    let mut x: Mat = tokens
        .iter()
        .enumerate()
        .map(|(pos, &t)| {
            (0..d)
                .map(|i| {
                    let angle = pos as f64 / 10000f64.powf(2.0 * (i / 2) as f64 / d as f64);
                    model.params.embed.get(t, i) + if i % 2 == 0 { angle.sin() } else { angle.cos() }
                })
                .collect()
        })
        .collect();
    for layer in &model.params.encoder {
        let a = layer_norm(&x, &layer.norm_attn);
        x = add(&x, &full_self_attention(&a, &layer.attn, model.config.n_heads));
        let b = layer_norm(&x, &layer.norm_ff);
        let up: Mat = linear(&b, &layer.ff.up)
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        x = add(&x, &linear(&up, &layer.ff.down));
    }
    layer_norm(&x, &model.params.enc_norm)
}

// ---------------------------------------------------------------- model fixtures

/// Configuration used for the gradient check.
pub fn gradcheck_config() -> (ModelConfig, LsgConfig) {
    (
        ModelConfig {
            d_model: 8,
            n_heads: 1,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 16,
        },
        LsgConfig {
            block_size: 4,
            sparsity_stride: 2,
            num_global: 1,
            max_input_tokens: 64,
            local_radius: 1,
        },
    )
}

pub const GRADCHECK_SRC: &str = "the patient reports headache and fever for two days denies chest pain";
pub const GRADCHECK_TGT: &str = "headache fever two days plan rest";
pub const GRADCHECK_SEED: u64 = 0;

pub const MEMO_PAIRS: [(&str, &str); 8] = [
    ("patient reports cough for three days", "cough three days"),
    ("doctor notes fever and chills overnight", "fever chills"),
    ("she has a headache behind the eyes", "headache"),
    ("knee pain after running yesterday", "knee pain running"),
    ("rash on both arms since monday", "rash arms monday"),
    ("blood pressure is high today", "high blood pressure"),
    ("sugar levels were low this morning", "low sugar morning"),
    ("plan to start antibiotics and rest", "start antibiotics rest"),
];

pub fn memo_config() -> (ModelConfig, TrainConfig, LsgConfig) {
    (
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 64,
        },
        TrainConfig {
            initial_lr: 5e-3,
            epochs: 150,
            batch_size: 4,
            seed: 0,
            ..TrainConfig::default()
        },
        LsgConfig {
            block_size: 4,
            sparsity_stride: 2,
            num_global: 1,
            max_input_tokens: 64,
            local_radius: 1,
        },
    )
}

// ---------------------------------------------------------------- notes

const BODY_WORDS: &[&str] = &[
    "pain",
    "Cough",
    "denies",
    "fever.",
    "2",
    "days",
    "mild",
    "x-ray",
    "normal,",
    "follow",
    "up",
    "BP",
    "120/80",
    "stable;",
    "plan",
    "noted",
    "chief",
    "complaint",
    "(left)",
    "ok",
];

/// A random note with known section ids only. Body lines always contain a
/// lowercase word so they can never look like a header.
pub fn random_note(rng: &mut ChaCha8Rng) -> ChartNote {
    let n = rng.random_range(0..=6);
    let sections = (0..n)
        .map(|_| {
            let id = SectionId::KNOWN.choose(rng).expect("nonempty").clone();
            let lines = rng.random_range(1..=3);
            let body = (0..lines)
                .map(|_| {
                    let words = rng.random_range(1..=8);
                    let mut w: Vec<&str> = (0..words).map(|_| *BODY_WORDS.choose(rng).expect("nonempty")).collect();
                    w.push("noted");
                    w.join(" ")
                })
                .collect::<Vec<_>>()
                .join("\n");
            Section::new(id, body)
        })
        .collect();
    ChartNote {
        preamble: String::new(),
        sections,
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
