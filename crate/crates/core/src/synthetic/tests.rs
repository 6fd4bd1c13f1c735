use super::*;
use crate::numerics::cosine;
use crate::text_encoder::{encode, tokenize};
use crate::trainer::{LossKind, TrainConfig};
use crate::zeroshot_eval::{build_head_ensemble, evaluate};
use crate::Error;

fn small() -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        classes: 4,
        base_classes: 2,
        novel_classes: 2,
        descriptions_per_class: 3,
        images_per_class: 5,
        ..SyntheticWorldConfig::default()
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() }
}

#[test]
fn worlds_are_seeded() {
    let a = SyntheticWorld::build(&small()).unwrap();
    let b = SyntheticWorld::build(&small()).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.images, b.images);
    assert_eq!(a.weights.fingerprint(), b.weights.fingerprint());
    let c = SyntheticWorld::build(&small().reseeded(1)).unwrap();
    assert_ne!(a.images, c.images);
    a.dataset.validate().unwrap();
    assert_eq!(a.dataset.len(), 12);
}

#[test]
fn degenerate_worlds_are_rejected() {
    let one = SyntheticWorldConfig { classes: 1, base_classes: 1, novel_classes: 0, ..small() };
    assert!(matches!(SyntheticWorld::build(&one), Err(Error::Invalid(_))));
    let bad_split = SyntheticWorldConfig { base_classes: 3, ..small() };
    assert!(SyntheticWorld::build(&bad_split).is_err());
    assert!(SyntheticWorld::build(&SyntheticWorldConfig { sigma: -0.1, ..small() }).is_err());
}

#[test]
fn descriptions_use_their_class_words() {
    let w = SyntheticWorld::build(&small()).unwrap();
    for p in &w.dataset.pairs {
        let name = class_name(p.class_id as usize);
        assert!(p.output_text.split(' ').any(|t| t == name), "{}", p.output_text);
        for other in 0..4 {
            if other != p.class_id as usize {
                assert!(!p.output_text.contains(&class_name(other)));
            }
        }
    }
}

#[test]
fn noiseless_images_are_perfectly_classified_by_the_ensemble() {
    let w = SyntheticWorld::build(&SyntheticWorldConfig { sigma: 0.0, ..small() }).unwrap();
    let head = build_head_ensemble(&w.dataset, &w.vocab, &w.weights).unwrap();
    assert_eq!(evaluate(&w.images, &head, "").unwrap().0.top1, 1.0);
}

#[test]
fn noiseless_plain_accuracy_matches_nearest_neighbour_oracle() {
    let w = SyntheticWorld::build(&SyntheticWorldConfig { sigma: 0.0, ..small() }).unwrap();
    let ids: Vec<u32> = (0..4).collect();
    let ck = crate::trainer::PromptCheckpoint::empty(&w.weights);
    let got = split_accuracies(&w, &ck, &ids).unwrap()[0];

    let templates: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let t = tokenize(&format!("a photo of a {}", class_name(k)), &w.vocab, &w.weights.config).unwrap();
            encode(&t, &w.weights).unwrap().vector.into_data()
        })
        .collect();
    let mut hits = 0;
    for (i, &label) in w.images.labels.iter().enumerate() {
        let sims: Vec<f64> = templates.iter().map(|t| cosine(w.images.features.row(i), t)).collect();
        let best = (0..4).fold(0, |b, k| if sims[k] > sims[b] { k } else { b });
        hits += usize::from(best == label as usize);
    }
    assert_eq!(got, hits as f64 / w.images.len() as f64);
}

#[test]
fn transfer_runs_are_reproducible() {
    let w = SyntheticWorld::build(&small()).unwrap();
    let a = run_transfer(&w, &quick_train()).unwrap();
    let b = run_transfer(&w, &quick_train()).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.checkpoint, b.checkpoint);
    assert!(a.report.render_text().contains("plain-template"));
}

#[test]
fn zero_length_cell_equals_the_baseline() {
    let w = SyntheticWorld::build(&small()).unwrap();
    let r = run_sweep(&w, &quick_train(), &[Axis::PromptLength(vec![0, 4])]).unwrap();
    assert_eq!(r.cells.len(), 2);
    assert_eq!(r.cells[0].settings, vec![("T".to_string(), "0".to_string())]);
    assert_eq!(r.cells[0].scores, r.baseline);
}

#[test]
fn loss_sweep_fills_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let w = SyntheticWorld::build(&small()).unwrap();
    let axes = [Axis::Loss(LossKind::ALL.to_vec()), Axis::DescriptionsPerClass(vec![1, 3])];
    let r = run_sweep(&w, &quick_train(), &axes).unwrap();
    assert_eq!(r.cells.len(), 6);
    assert_eq!(r.cells[1].settings[0].1, "mse");
    assert_eq!(r.cells[1].settings[1].1, "3");
    assert!(r.cells.iter().all(|c| c.final_loss.is_some_and(f64::is_finite)));
    let path = dir.path().join("sweep.csv");
    r.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("loss,descriptions,seed,base,novel,hm,final_loss"));
    assert_eq!(r.render_text().lines().count(), 9);
}

#[test]
fn sweep_axes_parse_and_validate() {
    assert_eq!(Axis::parse("T=0,4").unwrap(), Axis::PromptLength(vec![0, 4]));
    assert_eq!(Axis::parse("loss=mse, l1").unwrap(), Axis::Loss(vec![LossKind::Mse, LossKind::L1]));
    assert!(Axis::parse("T=").is_err());
    assert!(Axis::parse("depth=1").is_err());
    assert!(Axis::parse("loss=hinge").is_err());
    let w = SyntheticWorld::build(&small()).unwrap();
    assert!(run_sweep(&w, &quick_train(), &[]).is_err());
}
