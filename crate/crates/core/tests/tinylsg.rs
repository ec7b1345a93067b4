mod common;

use std::collections::VecDeque;

use common::*;
use sectionsum::tinylsg::*;
use sectionsum::TinyModel64;

fn memo_vocab() -> Vocab {
    let texts: Vec<&str> = MEMO_PAIRS.iter().flat_map(|(a, b)| [*a, *b]).collect();
    build_vocab(&texts, 1).unwrap()
}

#[test]
fn mask_is_union_of_components_exhaustively() {
    for seq_len in 1..=32 {
        for block_size in [2, 4, 8] {
            for stride in [0, 2, 4] {
                for g in [0, 1, 2] {
                    let cfg = LsgConfig {
                        block_size,
                        sparsity_stride: stride,
                        num_global: g,
                        ..LsgConfig::default()
                    };
                    let m = lsg_mask(seq_len, &cfg);
                    let parts = local_mask(seq_len, &cfg)
                        .or(&sparse_mask(seq_len, &cfg))
                        .or(&global_mask(seq_len, &cfg));
                    assert_eq!(m, parts);
                    for q in 0..seq_len {
                        for k in 0..seq_len {
                            let want = ref_local(q, k, &cfg) || ref_sparse(q, k, &cfg) || ref_global(q, k, &cfg);
                            assert_eq!(m.allowed(q, k), want, "len {seq_len} cfg {cfg:?} ({q},{k})");
                        }
                    }
                    if block_size >= seq_len {
                        assert!(m.is_all_true());
                    }
                }
            }
        }
    }
}

#[test]
fn every_position_reaches_every_other_within_two_hops() {
    for seq_len in [1, 5, 17, 40] {
        for g in [1, 2] {
            let cfg = LsgConfig {
                block_size: 2,
                sparsity_stride: 0,
                num_global: g,
                ..LsgConfig::default()
            };
            let m = lsg_mask(seq_len, &cfg);
            for start in 0..seq_len {
                let mut dist = vec![usize::MAX; seq_len];
                dist[start] = 0;
                let mut queue = VecDeque::from([start]);
                while let Some(q) = queue.pop_front() {
                    for k in m.allowed_keys(q) {
                        if dist[k] == usize::MAX {
                            dist[k] = dist[q] + 1;
                            queue.push_back(k);
                        }
                    }
                }
                assert!(dist.iter().all(|&d| d <= 2), "len {seq_len} from {start}: {dist:?}");
            }
        }
    }
}

#[test]
fn softmax_rows_sum_to_one_over_allowed_keys() {
    let cfg = LsgConfig {
        block_size: 3,
        sparsity_stride: 4,
        num_global: 1,
        ..LsgConfig::default()
    };
    let mask = lsg_mask(14, &cfg);
    let mut r = rng(5);
    let draw = |r: &mut rand_chacha::ChaCha8Rng| {
        use rand::Rng;
        Matrix::<f64>::from_fn(14, 4, |_, _| r.random_range(-2.0..2.0))
    };
    let (q, k) = (draw(&mut r), draw(&mut r));
    let p = attention_probs(&q, &k, &mask);
    for i in 0..14 {
        let s: f64 = p.row(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        for j in 0..14 {
            if !mask.allowed(i, j) {
                assert_eq!(p.get(i, j), 0.0);
            }
        }
    }
}

#[test]
fn full_attention_limit_on_twenty_draws() {
    let vocab = memo_vocab();
    let src = vocab.encode(MEMO_PAIRS[0].0);
    let cfg = ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers_enc: 2,
        n_layers_dec: 1,
        d_ff: 32,
    };
    for seed in 0..20 {
        let model = TinyModel64::new(cfg.clone(), vocab.clone(), seed).unwrap();
        let lsg = LsgConfig {
            block_size: 64,
            sparsity_stride: 4,
            num_global: 1,
            max_input_tokens: 64,
            local_radius: 1,
        };
        let got = model.encode(&src, &lsg).unwrap();
        let want = reference_encoder(&model, &src, 1);
        for (r, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((got.get(r, c) - v).abs() <= 1e-10, "seed {seed} ({r},{c})");
            }
        }
    }
}

#[test]
fn small_blocks_change_the_encoder_output() {
    let vocab = memo_vocab();
    let src = vocab.encode(MEMO_PAIRS[0].0);
    let model = TinyModel64::new(
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 32,
        },
        vocab,
        1,
    )
    .unwrap();
    let sparse = LsgConfig {
        block_size: 1,
        sparsity_stride: 0,
        num_global: 1,
        max_input_tokens: 64,
        local_radius: 0,
    };
    let got = model.encode(&src, &sparse).unwrap();
    let want = reference_encoder(&model, &src, 1);
    let diff = (0..want.len())
        .flat_map(|r| (0..16).map(move |c| (r, c)))
        .map(|(r, c)| (got.get(r, c) - want[r][c]).abs());
    assert!(diff.fold(0.0, f64::max) > 1e-6);
}

#[test]
fn gradient_check_reference_configuration() {
    let (mc, lsg) = gradcheck_config();
    let vocab = build_vocab(&[GRADCHECK_SRC, GRADCHECK_TGT], 1).unwrap();
    let model = TinyModel64::new(mc, vocab, GRADCHECK_SEED).unwrap();
    let (src, tgt) = (model.vocab.encode(GRADCHECK_SRC), model.vocab.encode(GRADCHECK_TGT));
    let report = grad_check(&model, (&src, &tgt), &lsg, 1e-5, 200, GRADCHECK_SEED).unwrap();
    assert_eq!(report.samples.len(), 200);
    assert!(report.max_relative_error < 1e-4, "{}", report.max_relative_error);
    let again = grad_check(&model, (&src, &tgt), &lsg, 1e-5, 200, GRADCHECK_SEED).unwrap();
    assert_eq!(report, again);
}

#[test]
fn gradient_check_with_zeroed_weights() {
    let (mc, lsg) = gradcheck_config();
    let vocab = build_vocab(&[GRADCHECK_SRC, GRADCHECK_TGT], 1).unwrap();
    let mut model = TinyModel64::new(mc, vocab, 3).unwrap();
    // Zero output projection: logits are uniform whatever the embeddings are,
    // so every embedding gradient is exactly zero.
    model.params.lm_head.w.fill(0.0);
    model.params.lm_head.b.fill(0.0);
    let (src, tgt) = (model.vocab.encode(GRADCHECK_SRC), model.vocab.encode(GRADCHECK_TGT));
    let embed = model.params.embed.data().len();
    let idx: Vec<usize> = (0..embed).step_by(3).collect();
    let report = grad_check_indices(&model, (&src, &tgt), &lsg, 1e-5, &idx).unwrap();
    for &(_, analytic, numeric, err) in &report.samples {
        assert_eq!(analytic, 0.0);
        assert!(numeric.abs() < 1e-8);
        assert!(err < 1e-8);
    }
}

#[test]
fn memorizes_eight_pairs() {
    let (mc, tc, lsg) = memo_config();
    let mut model = TinyModel64::new(mc, memo_vocab(), 0).unwrap();
    let history = train(&mut model, &MEMO_PAIRS, &tc, &lsg, |_, _| {}).unwrap();
    assert_eq!(history.epoch_losses.len(), tc.epochs);
    assert!(history.epoch_losses.iter().all(|l| l.is_finite()));
    let min = history.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min <= history.epoch_losses[0]);
    assert!(history.final_loss < 0.1, "final loss {}", history.final_loss);
    for (src, tgt) in MEMO_PAIRS {
        let out = generate(&model, &model.vocab.encode(src), 16, &lsg).unwrap();
        assert_eq!(model.vocab.decode(&out), tgt);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let (mc, tc, lsg) = memo_config();
    let tc = TrainConfig { epochs: 5, ..tc };
    let run = || {
        let mut m = TinyModel64::new(mc.clone(), memo_vocab(), 4).unwrap();
        let h = train(&mut m, &MEMO_PAIRS, &tc, &lsg, |_, _| {}).unwrap();
        (m, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    for ((_, x), (_, y)) in a.params.named().into_iter().zip(b.params.named()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn forward_shape_and_length_limit() {
    let words: Vec<String> = (0..27).map(|i| format!("w{i}")).collect();
    let vocab = build_vocab(&[words.join(" ")], 1).unwrap();
    assert_eq!(vocab.len(), 32);
    let model = TinyModel64::new(
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers_enc: 1,
            n_layers_dec: 1,
            d_ff: 8,
        },
        vocab,
        0,
    )
    .unwrap();
    let src: Vec<usize> = (5..21).collect();
    let lsg = LsgConfig::default();
    let logits = model.forward(&src, &[BOS, 5, 6, 7, 8], &lsg).unwrap();
    assert_eq!((logits.rows(), logits.cols()), (5, 32));
    assert_eq!(logits, model.forward(&src, &[BOS, 5, 6, 7, 8], &lsg).unwrap());
    let short = LsgConfig {
        max_input_tokens: 16,
        block_size: 4,
        ..lsg
    };
    let long: Vec<usize> = (5..22).collect();
    assert!(matches!(
        model.forward(&long, &[BOS], &short),
        Err(LsgError::SequenceTooLong { len: 17, max: 16 })
    ));
}

#[test]
fn checkpoint_round_trip_after_training() {
    let (mc, tc, lsg) = memo_config();
    let mut model = TinyModel64::new(mc, memo_vocab(), 2).unwrap();
    train(
        &mut model,
        &MEMO_PAIRS,
        &TrainConfig { epochs: 2, ..tc },
        &lsg,
        |_, _| {},
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&model, &lsg, &path).unwrap();
    let (back, lsg_back) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(lsg_back, lsg);
    assert_eq!(back, model);
}
