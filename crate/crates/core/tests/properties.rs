#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use protext::numerics::{adamw_step, lr_at, AdamWConfig, LrSchedule, OptimizerState, ParameterSet, ScheduleKind, Tensor};
use protext::prompt_data::{assemble_dataset, ClassRecord, GeneratedOutputs, PairSource, PromptDataset, DEFAULT_INPUT_TEMPLATE};
use protext::text_encoder::{
    encode, encode_prompted, tokenize, trace, EncoderConfig, EncoderWeights, PromptSet, TokenSequence, Vocabulary,
};
use protext::trainer::{batch_mapping_loss, LossKind};
use protext::zeroshot_eval::{classify, ClassifierHead, HeadProvenance, ImageFeatureSet};

const WORDS: [&str; 10] = ["a", "photo", "of", "dog", "cat", "red", "big", "tail", "fur", "sky"];

#[derive(Clone, Debug)]
struct Toy {
    cfg: EncoderConfig,
    seed: u64,
    length: usize,
    depth: usize,
    words: Vec<usize>,
}

fn toy() -> impl Strategy<Value = Toy> {
    (1usize..=3, prop::sample::select(vec![1usize, 2, 4]), 2usize..=3, 2usize..=6, any::<u64>())
        .prop_flat_map(|(layers, heads, hd, proj, seed)| {
            let cfg = EncoderConfig {
                num_layers: layers,
                d_model: heads * hd,
                num_heads: heads,
                mlp_ratio: 2.0,
                context_length: 12,
                projection_dim: proj,
                layer_norm_eps: 1e-5,
            };
            (Just(cfg), Just(seed), 1usize..=3, 1usize..=layers, prop::collection::vec(0usize..WORDS.len(), 1..=5))
        })
        .prop_map(|(cfg, seed, length, depth, words)| Toy { cfg, seed, length, depth, words })
}

fn build(t: &Toy) -> (Vocabulary, EncoderWeights, PromptSet, TokenSequence) {
    let vocab = Vocabulary::from_words("p", &WORDS).unwrap();
    let weights = EncoderWeights::random(&t.cfg, vocab.len(), t.seed).unwrap();
    let prompts = PromptSet::init(&weights, &vocab, t.length, t.depth, None, t.seed ^ 1).unwrap();
    let text: Vec<&str> = t.words.iter().map(|&i| WORDS[i]).collect();
    let tokens = tokenize(&text.join(" "), &vocab, &t.cfg).unwrap();
    (vocab, weights, prompts, tokens)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn later_tokens_never_affect_earlier_positions(t in toy(), pos in 1usize..6, replacement in 0usize..WORDS.len()) {
        let (vocab, weights, prompts, tokens) = build(&t);
        let pos = pos.min(tokens.eos_position - 1).max(1);
        let mut changed = tokens.clone();
        changed.ids[pos] = vocab.id(WORDS[replacement]).unwrap();
        for p in [None, Some(&prompts)] {
            let shift = p.map_or(0, |p| p.length);
            let a = trace(&tokens, p, &weights).unwrap();
            let b = trace(&changed, p, &weights).unwrap();
            for (x, y) in a.block_outputs.iter().zip(&b.block_outputs) {
                let d = x.cols();
                prop_assert_eq!(&x.data()[..(pos + shift) * d], &y.data()[..(pos + shift) * d]);
            }
        }
    }

    #[test]
    fn prompt_rows_are_replaced_at_every_prompted_block(t in toy()) {
        let (_, weights, prompts, tokens) = build(&t);
        let tr = trace(&tokens, Some(&prompts), &weights).unwrap();
        prop_assert_eq!(tr.eos_position, tokens.eos_position + t.length);
        let d = t.cfg.d_model;
        for j in 0..t.depth {
            let rows = &tr.block_inputs[j].data()[d..(1 + t.length) * d];
            if j == 0 {
                let pos = &weights.positional_embedding.data()[d..(1 + t.length) * d];
                for ((r, p), q) in rows.iter().zip(prompts.layers[0].data()).zip(pos) {
                    prop_assert!((r - (p + q)).abs() < 1e-12);
                }
            } else {
                prop_assert_eq!(rows, prompts.layers[j].data());
            }
        }
    }

    #[test]
    fn empty_prompts_encode_exactly_like_no_prompts(t in toy()) {
        let (_, weights, _, tokens) = build(&t);
        let empty = PromptSet::empty(t.cfg.d_model, t.depth);
        let a = encode(&tokens, &weights).unwrap();
        let b = encode_prompted(&tokens, &empty, &weights).unwrap();
        prop_assert_eq!(a.vector.data(), b.vector.data());
        let n = a.vector.norm();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tokenization_shape(words in prop::collection::vec(0usize..WORDS.len() + 1, 1..20), ctx in 4usize..16) {
        let vocab = Vocabulary::from_words("p", &WORDS).unwrap();
        let cfg = EncoderConfig { context_length: ctx, ..EncoderConfig::toy() };
        let text: Vec<&str> = words.iter().map(|&i| WORDS.get(i).copied().unwrap_or("zebra")).collect();
        let seq = tokenize(&text.join(" "), &vocab, &cfg).unwrap();
        prop_assert_eq!(seq.ids.len(), ctx);
        prop_assert_eq!(seq.ids[0], vocab.sos_id());
        prop_assert_eq!(seq.ids[seq.eos_position], vocab.eos_id());
        prop_assert_eq!(seq.eos_position, words.len().min(ctx - 2) + 1);
        prop_assert!(seq.ids[seq.eos_position + 1..].iter().all(|&id| id == vocab.pad_id()));
    }
}

fn unit_rows(rows: usize, d: usize, raw: &[f64]) -> Tensor {
    Tensor::new(vec![rows, d], raw[..rows * d].to_vec()).unwrap().l2_normalize_rows().unwrap()
}

fn instance() -> impl Strategy<Value = (usize, usize, usize, Vec<f64>, Vec<f64>, Vec<u32>)> {
    (1usize..=50, 2usize..=10, 2usize..=6).prop_flat_map(|(n, c, d)| {
        (
            Just(n),
            Just(c),
            Just(d),
            prop::collection::vec(prop_oneof![-1.0..-0.05f64, 0.05..1.0f64], n * d),
            prop::collection::vec(prop_oneof![-1.0..-0.05f64, 0.05..1.0f64], c * d),
            prop::collection::vec(0u32..c as u32, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classify_matches_brute_force((n, c, d, img, cls, labels) in instance(), tau in 1.0f64..200.0) {
        let names: Vec<String> = (0..c).map(|k| k.to_string()).collect();
        let images = ImageFeatureSet::new(unit_rows(n, d, &img), labels, names.clone(), true).unwrap();
        let head = ClassifierHead::new(unit_rows(c, d, &cls), names, HeadProvenance::Prompted, tau).unwrap();
        let out = classify(&images, &head).unwrap();
        for i in 0..n {
            let logits: Vec<f64> = (0..c)
                .map(|k| {
                    let f = images.features.row(i);
                    let g = head.class_features.row(k);
                    let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
                    let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let ng = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    tau * dot / (nf * ng)
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for k in 0..c {
                prop_assert!((out.probabilities.row(i)[k] - logits[k].exp() / z).abs() < 1e-9);
            }
            prop_assert!((out.probabilities.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_survives_temperature_and_row_scaling((n, c, d, img, cls, labels) in instance(), tau in 1.0f64..200.0, scales in prop::collection::vec(0.1f64..10.0, 10)) {
        let names: Vec<String> = (0..c).map(|k| k.to_string()).collect();
        let images = ImageFeatureSet::new(unit_rows(n, d, &img), labels, names.clone(), true).unwrap();
        let rows = unit_rows(c, d, &cls);
        let head = ClassifierHead::new(rows.clone(), names.clone(), HeadProvenance::Prompted, 100.0).unwrap();
        let base = classify(&images, &head).unwrap();
        let hot = classify(&images, &head.clone().with_temperature(tau).unwrap()).unwrap();
        prop_assert_eq!(&base.predictions, &hot.predictions);

        let mut scaled = rows.clone();
        for k in 0..c {
            for v in &mut scaled.data_mut()[k * d..(k + 1) * d] {
                *v *= scales[k];
            }
        }
        let rescaled = ClassifierHead::new(scaled, names, HeadProvenance::Prompted, 100.0).unwrap();
        let again = classify(&images, &rescaled).unwrap();
        prop_assert_eq!(&base.predictions, &again.predictions);
        for (a, b) in base.probabilities.data().iter().zip(again.probabilities.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_classes_permutes_columns((n, c, d, img, cls, labels) in instance(), rot in 1usize..10) {
        let names: Vec<String> = (0..c).map(|k| k.to_string()).collect();
        let images = ImageFeatureSet::new(unit_rows(n, d, &img), labels, names.clone(), true).unwrap();
        let rows = unit_rows(c, d, &cls);
        let perm: Vec<usize> = (0..c).map(|k| (k + rot) % c).collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&k| rows.row(k).to_vec()).collect();
        let head = ClassifierHead::new(rows, names.clone(), HeadProvenance::Prompted, 100.0).unwrap();
        let head_p = ClassifierHead::new(Tensor::from_rows(&permuted).unwrap(), names, HeadProvenance::Prompted, 100.0).unwrap();
        let a = classify(&images, &head).unwrap();
        let b = classify(&images, &head_p).unwrap();
        for i in 0..n {
            for (k, &src) in perm.iter().enumerate() {
                prop_assert!((b.probabilities.row(i)[k] - a.probabilities.row(i)[src]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn losses_are_non_negative_and_zero_only_at_equality(
        p in prop::collection::vec(-1.0f64..1.0, 6),
        g in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let pt = Tensor::vector(p.clone());
        let gt = Tensor::vector(g.clone());
        for kind in LossKind::ALL {
            let l = batch_mapping_loss(&[pt.clone(), gt.clone()], &[gt.clone(), pt.clone()], kind, 0.07).unwrap();
            prop_assert!(l >= 0.0);
        }
        for kind in [LossKind::Mse, LossKind::L1] {
            let l = batch_mapping_loss(std::slice::from_ref(&pt), std::slice::from_ref(&gt), kind, 0.07).unwrap();
            prop_assert_eq!(l == 0.0, p == g);
            prop_assert_eq!(batch_mapping_loss(std::slice::from_ref(&pt), std::slice::from_ref(&pt), kind, 0.07).unwrap(), 0.0);
        }
    }

    #[test]
    fn schedule_stays_within_bounds(base in 1e-4f64..1.0, warm in 0usize..5, total in 1usize..20, spe in 1usize..5, step in 0usize..200) {
        for kind in [ScheduleKind::ConstantAfterWarmup, ScheduleKind::CosineAfterWarmup] {
            let s = LrSchedule { base_lr: base, warmup_epochs: warm, total_epochs: total, steps_per_epoch: spe, kind };
            let lr = lr_at(step, &s);
            prop_assert!((0.0..=base * (1.0 + 1e-12)).contains(&lr));
        }
    }

    #[test]
    fn frozen_parameters_never_move(w in prop::collection::vec(-1.0f64..1.0, 4), g in prop::collection::vec(-1.0f64..1.0, 4)) {
        let mut params = ParameterSet::new();
        params.insert("live", Tensor::vector(w.clone()), true);
        params.insert("frozen", Tensor::vector(w.clone()), false);
        let grads = [("live".to_string(), Tensor::vector(g))].into_iter().collect();
        let mut state = OptimizerState::new(AdamWConfig::default());
        adamw_step(&mut params, &grads, &mut state, 0.1).unwrap();
        prop_assert_eq!(params.get("frozen").unwrap().data(), &w[..]);
    }

    #[test]
    fn datasets_round_trip_through_jsonl(
        names in prop::collection::btree_set("[a-z]{1,8}( [a-z]{1,6})?", 1..4),
        outputs in prop::collection::vec("[ -~]{1,30}", 2),
    ) {
        let outputs: Vec<String> = outputs.into_iter().filter(|o| !o.trim().is_empty()).collect();
        prop_assume!(!outputs.is_empty());
        let classes: Vec<ClassRecord> = names.iter().enumerate().map(|(i, n)| ClassRecord::new(i as u32, n.as_str())).collect();
        let gen = GeneratedOutputs {
            per_class: (0..classes.len() as u32).map(|i| (i, outputs.clone())).collect(),
            outputs_per_query: outputs.len(),
            query_count: 1,
            dropped: 0,
            source: PairSource::Llm,
        };
        let ds = assemble_dataset(&classes, DEFAULT_INPUT_TEMPLATE, gen, "prop").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.save(&path).unwrap();
        let back = PromptDataset::load(&path).unwrap();
        prop_assert_eq!(&back, &ds);
        let inputs: BTreeSet<&str> = back.pairs.iter().map(|p| p.input_text.as_str()).collect();
        prop_assert_eq!(inputs.len(), classes.len());
    }
}
