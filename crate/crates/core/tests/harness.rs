use microcrack::harness::{
    evaluate, evaluate_predictions, load_dataset_for, split_indices, train_on, GridCell, GridReport, Split,
    TrainConfig, BUCKET_HEADERS,
};
use microcrack::metrics::ConfusionCounts;
use microcrack::wavegen::{write_dataset, CrackSpec, Dataset, WaveSample, MASK_LEN, SENSORS, STEPS};
use microcrack::{Error, KvMap, LossKind, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(rng: &mut ChaCha8Rng, index: u64, steps: usize) -> WaveSample {
    let mut mask = vec![0u8; MASK_LEN];
    let row = rng.gen_range(0..36);
    for c in 5..25 {
        mask[row * 36 + c] = 1;
    }
    WaveSample {
        index,
        input: (0..2 * steps * SENSORS).map(|_| rng.gen::<f32>() - 0.5).collect(),
        mask,
        cracks: vec![CrackSpec {
            start: (0.0, 0.0),
            end: (10.0, 0.0),
            width_um: rng.gen_range(0.5..5.0),
        }],
    }
}

fn dataset(n: usize, steps: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset {
        steps,
        samples: (0..n as u64).map(|i| sample(&mut rng, i, steps)).collect(),
    }
}

fn micro_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        model: ModelConfig::micro(),
        ..TrainConfig::default()
    }
}

#[test]
fn defaults_follow_the_training_recipe() {
    let c = TrainConfig::default();
    assert_eq!(c.lr, 0.001);
    assert_eq!(c.epochs, 50);
    assert_eq!(c.batch_size, 8);
    assert_eq!(c.train_fraction, 0.8);
    assert_eq!(c.threshold, 0.5);
    assert_eq!(c.loss.kind, LossKind::CombinedWeightedDice);
}

#[test]
fn config_text_round_trips() {
    let mut c = micro_cfg(3);
    c.loss.kind = LossKind::Focal;
    c.loss.focal_gamma = 1.5;
    c.seed = 42;
    c.data = Some("data/train.bin".into());
    c.checkpoint = Some("run.ckpt".into());
    c.eval_every = 2;
    let text = c.to_kv().to_text();
    assert_eq!(TrainConfig::from_kv(&KvMap::parse(&text).unwrap()).unwrap(), c);
}

#[test]
fn config_rejects_bad_values() {
    let bad = |t: &str| TrainConfig::from_kv(&KvMap::parse(t).unwrap()).unwrap_err();
    assert!(bad("epochs = 0").to_string().contains("epochs"));
    assert!(bad("lr = -1").to_string().contains("lr"));
    assert!(bad("lr = 0").to_string().contains("lr"));
    assert!(bad("batch_size = 0").to_string().contains("batch_size"));
    assert!(bad("train_fraction = 0").to_string().contains("train_fraction"));
    assert!(bad("colour = red").to_string().contains("colour"));
    assert!(bad("loss = mse").to_string().contains("mse"));
    assert!(matches!(bad("epochs = many"), Error::Config { .. }));
}

#[test]
fn epochs_zero_rejected_by_training() {
    let d = dataset(4, 80, 1);
    let mut c = micro_cfg(1);
    c.epochs = 0;
    assert!(train_on(&c, &d).is_err());
}

#[test]
fn split_is_seeded_disjoint_and_eighty_twenty() {
    let (a, b) = split_indices(32, 0.8, 5);
    assert_eq!((a.len(), b.len()), (26, 6));
    let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..32).collect::<Vec<_>>());
    assert_eq!(split_indices(32, 0.8, 5), (a.clone(), b));
    assert_ne!(split_indices(32, 0.8, 6).0, a);
    assert_eq!(split_indices(8, 1.0, 0).1, Vec::<usize>::new());
    assert_eq!(split_indices(1, 0.1, 0).0, vec![0]);
}

#[test]
fn perfect_predictions_score_one() {
    let d = dataset(6, 80, 2);
    let refs: Vec<&WaveSample> = d.samples.iter().collect();
    let preds: Vec<Vec<f64>> = refs.iter().map(|s| s.mask.iter().map(|&m| f64::from(m)).collect()).collect();
    let e = evaluate_predictions(&preds, &refs, 0.5).unwrap();
    assert_eq!(e.dsc, 1.0);
    assert_eq!(e.accuracy, 1.0);
    assert_eq!(e.buckets[0], Some(1.0));
    assert!(e.buckets.iter().all(|b| b.is_none_or(|v| v == 1.0)));
}

#[test]
fn all_zero_predictor_has_zero_dsc() {
    let d = dataset(6, 80, 3);
    let refs: Vec<&WaveSample> = d.samples.iter().collect();
    let preds = vec![vec![0.0; MASK_LEN]; 6];
    let e = evaluate_predictions(&preds, &refs, 0.5).unwrap();
    assert_eq!(e.dsc, 0.0);
    assert_eq!(e.buckets[0], Some(0.0));
}

#[test]
fn evaluation_matches_brute_force_counts() {
    let d = dataset(5, 80, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let refs: Vec<&WaveSample> = d.samples.iter().collect();
    let preds: Vec<Vec<f64>> = (0..5).map(|_| (0..MASK_LEN).map(|_| rng.gen::<f64>()).collect()).collect();
    let e = evaluate_predictions(&preds, &refs, 0.5).unwrap();
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (p, s) in preds.iter().zip(&refs) {
        for (&x, &y) in p.iter().zip(&s.mask) {
            match (x >= 0.5, y == 1) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    assert_eq!(e.counts, ConfusionCounts { tp, tn, fp, fn_ });
    assert_eq!(e.dsc, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
    assert_eq!(e.accuracy, (tp + tn) as f64 / (tp + tn + fp + fn_) as f64);
}

#[test]
fn evaluate_rejects_mismatched_dimensions() {
    let model = Model::new(ModelConfig::micro()).unwrap();
    let d = dataset(2, 40, 5);
    assert!(matches!(evaluate(&model, &d, &[0, 1], 0.5), Err(Error::Shape { .. })));
    let d = dataset(2, 80, 5);
    assert!(evaluate(&model, &d, &[2], 0.5).is_err());
}

#[test]
fn training_reduces_loss_and_reports_split() {
    let d = dataset(10, 80, 6);
    let r = train_on(&micro_cfg(4), &d).unwrap().result;
    assert_eq!(r.loss_curve.len(), 4);
    assert!(r.loss_curve[3] < r.loss_curve[0], "{:?}", r.loss_curve);
    assert_eq!(r.final_train_loss, r.loss_curve[3]);
    assert_eq!(r.split, Split::Validation);
    assert_eq!((r.train_indices.len(), r.eval_indices.len()), (8, 2));
    assert_eq!(r.evaluation.samples, 2);
    assert_eq!(r.activation, "GeLU");
    assert_eq!(r.loss, "CWDL");
    assert_eq!(r.param_count, Model::new(ModelConfig::micro()).unwrap().param_count());
}

#[test]
fn equal_seeds_give_identical_checkpoints() {
    let d = dataset(6, 80, 7);
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut c = micro_cfg(2);
        c.checkpoint = Some(dir.path().join(name));
        train_on(&c, &d).unwrap();
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(run("a.ckpt"), run("b.ckpt"));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let d = dataset(6, 80, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut c = micro_cfg(2);
    c.checkpoint = Some(path.clone());
    let out = train_on(&c, &d).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    let before = evaluate(&out.model, &d, &idx, 0.5).unwrap();
    let loaded = Model::load(&path).unwrap();
    let after = evaluate(&loaded, &d, &idx, 0.5).unwrap();
    assert_eq!(before, after);
    assert_eq!(loaded.to_bytes(), out.model.to_bytes());
}

#[test]
fn periodic_checkpoints_are_written() {
    let d = dataset(4, 80, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    let mut c = micro_cfg(1);
    c.eval_every = 1;
    c.checkpoint = Some(path.clone());
    train_on(&c, &d).unwrap();
    assert!(path.exists());
}

#[test]
fn non_finite_loss_names_the_batch() {
    let mut d = dataset(4, 80, 10);
    d.samples[3].input.iter_mut().for_each(|v| *v = f32::NAN);
    let mut c = micro_cfg(1);
    c.batch_size = 1;
    c.train_fraction = 1.0;
    match train_on(&c, &d) {
        Err(Error::NonFiniteLoss { epoch, batch, config }) => {
            assert_eq!(epoch, 0);
            assert!(batch < 4);
            assert!(config.contains("lr = 0.001"), "{config}");
        }
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.result)),
    }
}

#[test]
fn dataset_is_decimated_to_the_model_length() {
    let d = dataset(2, STEPS, 11);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.bin");
    write_dataset(&p, &d.samples).unwrap();
    let m = load_dataset_for(&ModelConfig::micro(), &p).unwrap();
    assert_eq!(m.steps, 80);
    assert_eq!(m.samples[0].input.len(), 2 * 80 * SENSORS);
    assert_eq!(m.samples[0].input[SENSORS + 3], d.samples[0].input[25 * SENSORS + 3]);
    assert!(load_dataset_for(&ModelConfig::with_temporal_len(64), &p).is_err());
    assert!(matches!(
        load_dataset_for(&ModelConfig::micro(), &dir.path().join("missing.bin")),
        Err(Error::Io { .. })
    ));
}

fn fake_report() -> GridReport {
    let d = dataset(4, 80, 12);
    let mut c = micro_cfg(1);
    c.train_fraction = 0.5;
    let base = train_on(&c, &d).unwrap().result;
    let mut cells = Vec::new();
    for (i, act) in ["GeLU", "ReLU"].iter().enumerate() {
        for (j, loss) in ["FL", "CWDL"].iter().enumerate() {
            let mut r = base.clone();
            r.evaluation.buckets = vec![Some(0.1 * (i + j) as f64), Some(0.5), None, Some(0.25 * j as f64), None];
            cells.push(GridCell {
                activation: act.to_string(),
                loss: loss.to_string(),
                outcome: if i == 1 && j == 0 { Err("boom".into()) } else { Ok(r) },
            });
        }
    }
    GridReport { cells }
}

#[test]
fn report_marks_best_and_failures() {
    let r = fake_report();
    let text = r.to_text();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].contains("validation"));
    for h in BUCKET_HEADERS {
        assert!(lines[1].contains(h), "{}", lines[1]);
    }
    assert!(lines[1].starts_with("Activation  Loss"));
    // title, header, rule, four rows, one failure note
    assert_eq!(lines.len(), 8);
    assert!(lines[6].contains("0.2000*"), "{text}");
    assert!(lines[5].contains("failed"));
    assert!(lines[7].contains("boom"));
    assert_eq!(text.matches("0.5000*").count(), 3);
    assert!(lines[4].contains("0.2500*"));
    assert!(lines[4].starts_with("    "));
    assert_eq!(r.completed(), 3);

    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().next().unwrap().starts_with("activation,loss,status"));
    assert!(csv.contains("ReLU,FL,failed"));
    let dir = tempfile::tempdir().unwrap();
    r.write(dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap(), text);
}
