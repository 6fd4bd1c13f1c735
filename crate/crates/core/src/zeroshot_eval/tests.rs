use super::*;
use crate::numerics::Tensor;
use crate::prompt_data::{assemble_dataset, ClassRecord, GeneratedOutputs, PairSource, DEFAULT_INPUT_TEMPLATE};
use crate::text_encoder::{encode, encode_prompted, tokenize, EncoderConfig, EncoderWeights, PromptSet, Vocabulary};
use crate::trainer::{PromptCheckpoint, TrainConfig};
use crate::Error;

const WORDS: [&str; 12] = ["a", "photo", "of", "dog", "cat", "cow", "furry", "barks", "meows", "moos", "tail", "pet"];

fn world() -> (Vocabulary, EncoderWeights) {
    let vocab = Vocabulary::from_words("test", &WORDS).unwrap();
    let weights = EncoderWeights::random(&EncoderConfig::toy(), vocab.len(), 11).unwrap();
    (vocab, weights)
}

fn classes() -> Vec<ClassRecord> {
    ["dog", "cat", "cow"].iter().enumerate().map(|(i, n)| ClassRecord::new(i as u32, *n)).collect()
}

fn feature_set(rows: &[Vec<f64>], labels: Vec<u32>, c: usize) -> ImageFeatureSet {
    let names = (0..c).map(|k| format!("c{k}")).collect();
    ImageFeatureSet::new(Tensor::from_rows(rows).unwrap(), labels, names, false).unwrap()
}

fn basis_head(c: usize, d: usize) -> ClassifierHead {
    let rows: Vec<Vec<f64>> = (0..c).map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect()).collect();
    let names = (0..c).map(|k| format!("c{k}")).collect();
    ClassifierHead::new(Tensor::from_rows(&rows).unwrap(), names, HeadProvenance::PlainTemplate, DEFAULT_TEMPERATURE).unwrap()
}

#[test]
fn zero_length_checkpoint_head_equals_plain_template_head() {
    let (vocab, weights) = world();
    let ck = PromptCheckpoint::empty(&weights);
    let prompted = build_head(&classes(), &ck, &vocab, &weights, DEFAULT_INPUT_TEMPLATE).unwrap();
    let plain = plain_template_head(&classes(), &vocab, &weights, DEFAULT_INPUT_TEMPLATE).unwrap();
    assert_eq!(prompted.class_features, plain.class_features);
}

#[test]
fn prompted_head_rows_match_per_class_encoding() {
    let (vocab, weights) = world();
    let prompts = PromptSet::init(&weights, &vocab, 3, 2, Some("a photo of a"), 5).unwrap();
    let ck = PromptCheckpoint::new(prompts.clone(), &weights, TrainConfig::default());
    let head = build_head(&classes(), &ck, &vocab, &weights, DEFAULT_INPUT_TEMPLATE).unwrap();
    assert_eq!(head, build_head(&classes(), &ck, &vocab, &weights, DEFAULT_INPUT_TEMPLATE).unwrap());
    for (k, c) in classes().iter().enumerate() {
        let t = tokenize(&format!("a photo of a {}", c.name), &vocab, &weights.config).unwrap();
        let f = encode_prompted(&t, &prompts, &weights).unwrap();
        for (a, b) in head.class_features.row(k).iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
    let (_, other) = (0, EncoderWeights::random(&EncoderConfig::toy(), vocab.len(), 12).unwrap());
    assert!(matches!(
        build_head(&classes(), &ck, &vocab, &other, DEFAULT_INPUT_TEMPLATE),
        Err(Error::FingerprintMismatch { .. })
    ));
}

fn descriptions(outs: &[&[&str]]) -> crate::prompt_data::PromptDataset {
    let cs: Vec<ClassRecord> = classes().into_iter().take(outs.len()).collect();
    let gen = GeneratedOutputs {
        per_class: outs.iter().enumerate().map(|(i, o)| (i as u32, o.iter().map(|s| s.to_string()).collect())).collect(),
        outputs_per_query: outs[0].len(),
        query_count: 1,
        dropped: 0,
        source: PairSource::Fixture,
    };
    assemble_dataset(&cs, DEFAULT_INPUT_TEMPLATE, gen, "test").unwrap()
}

#[test]
fn ensemble_head_examples() {
    let (vocab, weights) = world();
    let one = descriptions(&[&["a furry dog"], &["a cat meows"]]);
    let head = build_head_ensemble(&one, &vocab, &weights).unwrap();
    let dog = encode(&tokenize("a furry dog", &vocab, &weights.config).unwrap(), &weights).unwrap();
    for (a, b) in head.class_features.row(0).iter().zip(dog.data()) {
        assert!((a - b).abs() < 1e-15);
    }

    let dup = descriptions(&[&["a furry dog", "a furry dog"], &["a cat meows", "a cat meows"]]);
    let head_dup = build_head_ensemble(&dup, &vocab, &weights).unwrap();
    for (a, b) in head_dup.class_features.data().iter().zip(head.class_features.data()) {
        assert!((a - b).abs() < 1e-15);
    }

    let texts = ["a furry dog", "dog barks", "a pet dog with tail", "dog of a photo"];
    let four = descriptions(&[&texts, &["cat", "cat meows", "a cat", "pet cat"]]);
    let head4 = build_head_ensemble(&four, &vocab, &weights).unwrap();
    let mut mean = [0.0; 8];
    for t in texts {
        let f = encode(&tokenize(t, &vocab, &weights.config).unwrap(), &weights).unwrap();
        for (m, v) in mean.iter_mut().zip(f.data()) {
            *m += v / 4.0;
        }
    }
    let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (a, m) in head4.class_features.row(0).iter().zip(mean) {
        assert!((a - m / n).abs() < 1e-12);
    }
    assert_eq!(head4.provenance, HeadProvenance::Ensembled);
}

#[test]
fn head_needs_two_classes() {
    let t = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    assert!(ClassifierHead::new(t, vec!["a".into()], HeadProvenance::Prompted, 100.0).is_err());
}

#[test]
fn classify_examples() {
    let head = basis_head(3, 4);
    let images = feature_set(&[vec![0.0, 0.0, 0.0, 2.0], vec![0.0, 1.0, 0.0, 0.0]], vec![0, 1], 3);
    let cls = classify(&images, &head).unwrap();
    for p in cls.probabilities.row(0) {
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }
    assert_eq!(cls.predictions[0], 0);
    assert_eq!(cls.predictions[1], 1);
    assert!(cls.probabilities.row(1)[1] > 0.99);
    for i in 0..2 {
        assert!((cls.probabilities.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let wrong_d = feature_set(&[vec![1.0, 0.0]], vec![0], 3);
    assert!(matches!(classify(&wrong_d, &head), Err(Error::Shape(_))));
}

#[test]
fn reported_score_arithmetic() {
    assert!((harmonic_mean(72.95, 76.98).unwrap() - 74.91).abs() < 0.01);
    let row = [94.81, 91.01, 66.00, 72.35, 86.66, 24.72, 67.34, 47.93, 51.86, 69.60];
    assert!((aggregate(&row).unwrap() - 67.23).abs() < 0.01);
    assert!((harmonic_mean(0.4, 0.4).unwrap() - 0.4).abs() < 1e-15);
    assert!(harmonic_mean(0.0, 0.0).is_err());
    assert!(harmonic_mean(-1.0, 0.5).is_err());
    assert!(aggregate(&[]).is_err());
    assert!(top1_accuracy(&[], &[]).is_err());
    assert_eq!(top1_accuracy(&[0, 1, 1, 2], &[0, 1, 2, 2]).unwrap(), 0.75);
}

#[test]
fn confidence_examples() {
    let onehot = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
    let c = confidence_report(&onehot, &[0, 2]).unwrap();
    assert_eq!((c.correct, c.incorrect), (1.0, 0.0));

    let uniform = Tensor::full(&[5, 4], 0.25);
    let c = confidence_report(&uniform, &[0, 1, 2, 3, 0]).unwrap();
    assert!((c.correct - 0.25).abs() < 1e-15 && (c.incorrect - 0.25).abs() < 1e-15);

    let mixed = Tensor::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.5, 0.3, 0.2], vec![0.1, 0.1, 0.8]]).unwrap();
    let c = confidence_report(&mixed, &[0, 1, 2]).unwrap();
    let correct = (0.7 + 0.3 + 0.8) / 3.0;
    let incorrect = ((0.2 + 0.1) / 2.0 + (0.5 + 0.2) / 2.0 + (0.1 + 0.1) / 2.0) / 3.0;
    assert!((c.correct - correct).abs() < 1e-15);
    assert!((c.incorrect - incorrect).abs() < 1e-15);
}

#[test]
fn report_matches_classification() {
    let head = basis_head(2, 2);
    let images = feature_set(&[vec![1.0, 0.1], vec![0.9, 0.2], vec![0.1, 1.0]], vec![0, 1, 1], 2);
    let (report, cls) = evaluate(&images, &head, "toy").unwrap();
    assert_eq!(cls.predictions, vec![0, 0, 1]);
    assert!((report.top1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(report.per_class[0].accuracy, Some(1.0));
    assert_eq!(report.per_class[1].accuracy, Some(0.5));
    let text = report.render_text();
    assert!(text.contains("66.67"), "{text}");
    let back: EvalReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn feature_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let centers = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let names = vec!["dog".to_string(), "cat".to_string()];
    let set = synthesize_images(&centers, &names, 3, 0.5, 1).unwrap();
    for file in ["f.json", "f.jsonl"] {
        let p = dir.path().join(file);
        set.save(&p).unwrap();
        assert_eq!(ImageFeatureSet::load(&p).unwrap(), set, "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("f.json")).unwrap()).unwrap();
    for key in ["d", "n", "class_names", "labels", "tensors"] {
        assert!(manifest.get(key).is_some(), "{key}");
    }
    std::fs::write(dir.path().join("bad.jsonl"), "{\"class_names\":[\"a\"],\"normalized\":false}\n{\"label\":0}\n").unwrap();
    assert!(matches!(ImageFeatureSet::load(&dir.path().join("bad.jsonl")), Err(Error::Record { line: 2, .. })));
}

#[test]
fn feature_set_invariants() {
    let t = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    assert!(ImageFeatureSet::new(t.clone(), vec![2], vec!["a".into(), "b".into()], false).is_err());
    assert!(ImageFeatureSet::new(t.scale(2.0), vec![0], vec!["a".into(), "b".into()], true).is_err());
    assert!(ImageFeatureSet::new(t, vec![0, 1], vec!["a".into(), "b".into()], false).is_err());
}

#[test]
fn noiseless_synthetic_images_sit_on_their_class() {
    let centers = Tensor::from_rows(&[vec![3.0, 4.0], vec![0.0, -2.0]]).unwrap();
    let names = vec!["a".to_string(), "b".to_string()];
    let set = synthesize_images(&centers, &names, 2, 0.0, 7).unwrap();
    assert_eq!(set.labels, vec![0, 0, 1, 1]);
    for (got, want) in [(set.features.row(0), [0.6, 0.8]), (set.features.row(3), [0.0, -1.0])] {
        assert!(got.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    }
    assert_eq!(synthesize_images(&centers, &names, 2, 0.3, 7).unwrap(), synthesize_images(&centers, &names, 2, 0.3, 7).unwrap());
}

#[test]
fn class_selection_relabels() {
    let set = feature_set(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], vec![0, 1, 2], 3);
    let sub = set.select_classes(&[2, 0]).unwrap();
    assert_eq!(sub.labels, vec![1, 0]);
    assert_eq!(sub.class_names, vec!["c2", "c0"]);
}

#[test]
fn table_aligns_columns() {
    let mut t = Table::new(vec!["method".into(), "base".into(), "novel".into()]);
    t.push(vec!["plain".into(), "72.43".into(), "68.14".into()]);
    t.push(vec!["prompted".into(), "100.00".into(), "9.5".into()]);
    let s = t.render();
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines[0], "method      base  novel");
    assert_eq!(lines[3], "prompted  100.00    9.5");
}
