use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Array, GradStore, Graph, ParamStore};
use crate::corpus::{Charset, Dataset, Displacements, LandmarkSet, NormalizedClip, ReferenceFrame, Split};
use crate::net::{forward_teacher_forced, init_params, ModelConfig, Pass};
use crate::{Error, FrameMatrix};

fn fake_clip(id: usize, tokens: usize, frames: usize, seed: u64) -> NormalizedClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * 60).map(|_| rng.gen_range(-0.5..0.5)).collect();
    NormalizedClip {
        clip_id: format!("clip_{id:04}"),
        speaker_id: "spk0".into(),
        tokens: (0..tokens).map(|_| rng.gen_range(0..30)).collect(),
        displacements: Displacements {
            landmarks: LandmarkSet::Lips,
            frames: FrameMatrix::new(60, data).unwrap(),
        },
        reference: ReferenceFrame::zeros("spk0"),
    }
}

fn fake_dataset(n: usize, n_val: usize) -> Dataset {
    let clips: Vec<_> = (0..n).map(|i| fake_clip(i, 3 + i % 4, 5 + i % 6, i as u64)).collect();
    let splits = (0..n)
        .map(|i| if i < n - n_val { Split::Train } else { Split::Validation })
        .collect();
    Dataset {
        charset: Charset::default(),
        split_seed: 0,
        landmarks: LandmarkSet::Lips,
        clips,
        splits,
    }
}

fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        scheduler_step: 10,
        validation_interval: 2,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn smooth_l1_examples() {
    let m = [true];
    assert_eq!(smooth_l1(&[1.5], &[1.5], 1.0, &m).unwrap(), 0.0);
    assert_eq!(smooth_l1(&[0.5], &[0.0], 1.0, &m).unwrap(), 0.125);
    assert_eq!(smooth_l1(&[2.0], &[0.0], 1.0, &m).unwrap(), 1.5);
    assert!(matches!(
        smooth_l1(&[1.0], &[0.0], 1.0, &[false]),
        Err(Error::Contract(_))
    ));
    assert!(matches!(smooth_l1(&[1.0], &[0.0], 0.0, &m), Err(Error::Contract(_))));
}

#[test]
fn smooth_l1_is_continuous_at_beta() {
    for beta in [0.25, 1.0, 3.0] {
        let below = smooth_l1_elem(beta - 1e-9, beta);
        let above = smooth_l1_elem(beta + 1e-9, beta);
        assert!((below - above).abs() < 1e-8);
        // Slopes on both sides approach 1.
        let h = 1e-6;
        let left = (smooth_l1_elem(beta - h, beta) - smooth_l1_elem(beta - 2.0 * h, beta)) / h;
        let right = (smooth_l1_elem(beta + 2.0 * h, beta) - smooth_l1_elem(beta + h, beta)) / h;
        assert!((left - right).abs() < 1e-5);
    }
}

#[test]
fn mse_examples() {
    let m = [true, true, false];
    assert_eq!(mse(&[1.0, 2.0, 9.0], &[1.0, 2.0, 0.0], &m).unwrap(), 0.0);
    assert_eq!(mse(&[2.0, 2.0, 2.0], &[0.0, 0.0, 0.0], &[true; 3]).unwrap(), 4.0);
    assert_eq!(
        mse(&[3.0, 1.0, 100.0], &[1.0, 1.0, 0.0], &m).unwrap(),
        mse(&[3.0, 1.0, -7.0], &[1.0, 1.0, 0.0], &m).unwrap()
    );
    assert!(matches!(mse(&[1.0], &[1.0], &[false]), Err(Error::Contract(_))));
}

fn frozen_gate() -> TrainConfig {
    TrainConfig {
        freeze: vec!["gate.".into()],
        ..Default::default()
    }
}

#[test]
fn loss_without_optional_terms_is_decoder_smooth_l1() {
    let model = ModelConfig::toy(30, 60);
    let p: ParamStore<f64> = init_params(&model, 1).unwrap();
    let clips = [fake_clip(0, 4, 6, 1), fake_clip(1, 2, 9, 2)];
    let batch = Batch::from_clips(&clips.iter().collect::<Vec<_>>()).unwrap();
    let cfg = frozen_gate();
    let mut g = Graph::inference(&p);
    let (_, br) = batch_loss(&mut g, &model, &cfg, &batch, &mut Pass::eval()).unwrap();
    assert_eq!(br.postnet, None);
    assert_eq!(br.gate, None);
    assert_eq!(br.total, br.decoder);

    // Independent recomputation from per-clip forwards.
    let (mut pred, mut target) = (Vec::new(), Vec::new());
    for c in &clips {
        let mut g = Graph::inference(&p);
        let t: Array<f64> = Array::new(vec![c.num_frames(), 60], c.displacements.frames.as_slice().to_vec()).unwrap();
        let out = forward_teacher_forced(&mut g, &model, &c.tokens, &t, &mut Pass::eval()).unwrap();
        pred.extend_from_slice(g.value(out.frames).data());
        target.extend_from_slice(t.data());
    }
    let oracle = smooth_l1(&pred, &target, 1.0, &vec![true; pred.len()]).unwrap();
    assert!((br.total - oracle).abs() < 1e-12, "{} vs {oracle}", br.total);
}

#[test]
fn zero_postnet_adds_mse_of_decoder_frames() {
    let mut model = ModelConfig::toy(30, 60);
    model.use_postnet = true;
    let mut p: ParamStore<f64> = init_params(&model, 1).unwrap();
    for (name, param) in p.iter_mut() {
        if name.starts_with("postnet.") && !name.ends_with("running_var") {
            param.value.data_mut().fill(0.0);
        }
    }
    let clips = [fake_clip(0, 4, 6, 1)];
    let batch = Batch::from_clips(&clips.iter().collect::<Vec<_>>()).unwrap();
    let mut g = Graph::inference(&p);
    let (_, br) = batch_loss(&mut g, &model, &frozen_gate(), &batch, &mut Pass::eval()).unwrap();

    let mut g = Graph::inference(&p);
    let t: Array<f64> = batch.clip_targets(0, 6);
    let out = forward_teacher_forced(&mut g, &model, &clips[0].tokens, &t, &mut Pass::eval()).unwrap();
    let pred = g.value(out.frames).data().to_vec();
    let expect_mse = mse(&pred, t.data(), &vec![true; pred.len()]).unwrap();
    assert!((br.postnet.unwrap() - expect_mse).abs() < 1e-12);
    assert!((br.total - (br.decoder + expect_mse)).abs() < 1e-12);
}

#[test]
fn perfect_gate_predictions_cost_nothing() {
    let mut t = crate::autodiff::Tape::<f64>::new();
    let target = [0.0, 0.0, 0.0, 1.0, 1.0];
    let logits = t.constant(
        Array::new(
            vec![5, 1],
            target.iter().map(|&y| if y > 0.5 { 40.0 } else { -40.0 }).collect(),
        )
        .unwrap(),
    );
    let l = t.bce_logits_sum(logits, &target, &[1.0; 5]).unwrap();
    assert!(t.value(l).item() < 1e-15);
}

#[test]
fn gate_term_present_only_when_gate_trained() {
    let model = ModelConfig::toy(30, 60);
    let p: ParamStore<f64> = init_params(&model, 1).unwrap();
    let clips = [fake_clip(0, 4, 6, 1), fake_clip(1, 3, 4, 2)];
    let batch = Batch::from_clips(&clips.iter().collect::<Vec<_>>()).unwrap();
    let mut g = Graph::inference(&p);
    let (_, br) = batch_loss(&mut g, &model, &TrainConfig::default(), &batch, &mut Pass::eval()).unwrap();
    let gate = br.gate.unwrap();
    assert!(gate > 0.0);
    assert!((br.total - br.decoder - gate).abs() < 1e-12);
}

#[test]
fn padding_contributes_nothing() {
    let model = ModelConfig::toy(30, 60);
    let p: ParamStore<f64> = init_params(&model, 3).unwrap();
    let clips = [fake_clip(0, 4, 6, 1), fake_clip(1, 2, 9, 2), fake_clip(2, 5, 3, 3)];
    let refs: Vec<_> = clips.iter().collect();
    let plain = Batch::from_clips(&refs).unwrap();
    let padded = Batch::padded(&refs, 3, 7).unwrap();
    let loss = |b: &Batch, cfg: &TrainConfig| {
        let mut g = Graph::inference(&p);
        batch_loss(&mut g, &model, cfg, b, &mut Pass::eval()).unwrap().1
    };
    let cfg = frozen_gate();
    assert!((loss(&plain, &cfg).total - loss(&padded, &cfg).total).abs() < 1e-6);
    // With the gate trained, padding adds stop-token terms but landmark terms are unchanged.
    let cfg = TrainConfig::default();
    assert!((loss(&plain, &cfg).decoder - loss(&padded, &cfg).decoder).abs() < 1e-6);
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    p.insert("w", Array::scalar(v)).unwrap();
    p
}

fn scalar_grad(p: &ParamStore<f64>, f: impl Fn(f64) -> f64) -> GradStore<f64> {
    let mut g = GradStore::new();
    g.accumulate("w", Array::scalar(f(p.value("w").unwrap().item())))
        .unwrap();
    g
}

#[test]
fn adam_first_step_matches_scalar_oracle() {
    let mut p = scalar_store(1.0);
    let mut st = AdamState::new();
    let g = scalar_grad(&p, |_| 1.0);
    adam_step(&mut p, &g, &mut st, 0.002, &AdamConfig::default()).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction.
    let oracle = 1.0 - 0.002 * 1.0 / (1.0 + 1e-8);
    assert!((p.value("w").unwrap().item() - oracle).abs() < 1e-15);
    assert!((p.value("w").unwrap().item() - 0.998).abs() < 1e-6);
}

#[test]
fn adam_zero_gradient_is_identity() {
    let mut p = scalar_store(0.3711);
    let before = p.clone();
    let mut st = AdamState::new();
    for _ in 0..3 {
        let g = scalar_grad(&p, |_| 0.0);
        adam_step(&mut p, &g, &mut st, 0.002, &AdamConfig::default()).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn adam_skips_frozen_and_checks_shapes() {
    let mut p = scalar_store(1.0);
    p.set_frozen_prefix("w", true);
    let before = p.clone();
    let mut st = AdamState::new();
    let g = scalar_grad(&p, |_| 5.0);
    adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()).unwrap();
    assert_eq!(
        p.value("w").unwrap().item().to_bits(),
        before.value("w").unwrap().item().to_bits()
    );

    let mut g = GradStore::new();
    g.accumulate("w", Array::zeros(&[2])).unwrap();
    assert!(matches!(
        adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()),
        Err(Error::Shape { kind: "adam", .. })
    ));
}

#[test]
fn adam_minimizes_half_square() {
    let mut p = scalar_store(1.0);
    let mut st = AdamState::new();
    let mut reached = None;
    for step in 1..=5000 {
        let g = scalar_grad(&p, |w| w);
        adam_step(&mut p, &g, &mut st, 0.002, &AdamConfig::default()).unwrap();
        if p.value("w").unwrap().item().abs() < 1e-3 {
            reached = Some(step);
            break;
        }
    }
    assert!(reached.is_some(), "w = {}", p.value("w").unwrap().item());
}

#[test]
fn one_cycle_schedule_endpoints_and_shape() {
    let peak = 0.002;
    assert_eq!(one_cycle_lr(0, peak, 4000), 0.00008);
    assert_eq!(one_cycle_lr(4000, peak, 4000), 0.002);
    assert_eq!(one_cycle_lr(8000, peak, 4000), 0.00008);
    assert_eq!(one_cycle_lr(20000, peak, 4000), 0.00008);
    let lrs: Vec<f64> = (0..=8000).map(|i| one_cycle_lr(i, peak, 4000)).collect();
    let argmax = lrs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(argmax, 4000);
    // Constant slope on each side.
    let slope = (peak - peak / 25.0) / 4000.0;
    for i in [1, 1000, 3999] {
        assert!(((lrs[i + 1] - lrs[i]) - slope).abs() < 1e-15);
        assert!(((lrs[8000 - i] - lrs[8000 - i - 1]) + slope).abs() < 1e-15);
    }
}

#[test]
fn batches_cover_split_in_chunks() {
    let clips: Vec<_> = (0..93).map(|i| fake_clip(i, 2, 3, i as u64)).collect();
    let refs: Vec<_> = clips.iter().collect();
    let batches = make_batches(&refs, 8, 1, 0).unwrap();
    assert_eq!(batches.len(), 12);
    assert!(batches[..11].iter().all(|b| b.len() == 8));
    assert_eq!(batches[11].len(), 5);
    let mut ids: Vec<_> = batches.iter().flat_map(|b| b.clip_ids.clone()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 93);

    assert_eq!(
        make_batches(&refs, 8, 1, 4).unwrap(),
        make_batches(&refs, 8, 1, 4).unwrap()
    );
    assert_ne!(
        make_batches(&refs, 8, 1, 4).unwrap()[0].clip_ids,
        make_batches(&refs, 8, 1, 5).unwrap()[0].clip_ids
    );
    let one = make_batches(&refs[..1], 8, 1, 0).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].len(), 1);
    assert!(matches!(make_batches(&[], 8, 1, 0), Err(Error::Contract(_))));
}

#[test]
fn batch_mask_and_gate_targets_follow_lengths() {
    let clips = [fake_clip(0, 2, 3, 1), fake_clip(1, 4, 5, 2)];
    let b = Batch::from_clips(&clips.iter().collect::<Vec<_>>()).unwrap();
    assert_eq!(b.max_frames, 5);
    assert_eq!(b.max_text, 4);
    assert_eq!(&b.mask[..5], &[true, true, true, false, false]);
    assert_eq!(&b.gate_targets[..5], &[0.0, 0.0, 1.0, 1.0, 1.0]);
    assert_eq!(&b.mask[5..], &[true; 5]);
    assert_eq!(&b.gate_targets[5..], &[0.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(&b.tokens[2..4], &[0, 0]);
    assert!(b.targets[3 * 60..5 * 60].iter().all(|&v| v == 0.0));
    assert_eq!(b.clip_tokens(0), clips[0].tokens.as_slice());
}

#[test]
fn training_is_deterministic_and_history_round_trips() {
    let ds = fake_dataset(6, 2);
    let model = ModelConfig::toy(30, 60);
    let cfg = tiny_train(3);
    let a = train(&ds, &model, &cfg, TrainOptions::default()).unwrap();
    let b = train(&ds, &model, &cfg, TrainOptions::default()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.last.params, b.last.params);

    let h = &a.history;
    assert_eq!(h.rows.len(), 3);
    assert_eq!(h.rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(h.rows[0].val_loss.is_none());
    assert!(h.rows[1].val_loss.is_some() && h.rows[2].val_loss.is_some());
    let min = h.val_losses().iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    assert_eq!(h.best.as_ref().unwrap().val_loss, min);
    assert_eq!(a.best.meta.val_loss, Some(min));

    let csv = h.to_csv();
    assert!(csv.starts_with("iteration,epoch,train_loss,val_loss,lr\n"));
    let back = TrainHistory::from_csv(&csv).unwrap();
    assert_eq!(back.rows, h.rows);
    assert_eq!(back.to_csv(), csv);
}

#[test]
fn frozen_prefixes_stay_bitwise_unchanged() {
    let ds = fake_dataset(6, 2);
    let model = ModelConfig::toy(30, 60);
    let mut cfg = tiny_train(2);
    cfg.freeze = vec!["encoder.".into(), "gate.".into()];
    let init: ParamStore<f32> = init_params(&model, 9).unwrap();
    let out = train(
        &ds,
        &model,
        &cfg,
        TrainOptions {
            init: Some(init.clone()),
            ..Default::default()
        },
    )
    .unwrap();
    let mut moved = false;
    for (name, p) in init.iter() {
        let after = out.last.params.value(name).unwrap();
        let same = p
            .value
            .data()
            .iter()
            .zip(after.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if name.starts_with("encoder.") || name.starts_with("gate.") {
            assert!(same, "{name} changed");
        } else if !same {
            moved = true;
        }
    }
    assert!(moved);
}

#[test]
fn exploding_learning_rate_aborts_with_diagnostics() {
    let ds = fake_dataset(6, 2);
    let model = ModelConfig::toy(30, 60);
    let mut cfg = tiny_train(20);
    cfg.peak_lr = 1e30;
    match train(&ds, &model, &cfg, TrainOptions::default()) {
        Err(Error::NonFinite { lr, .. }) => assert!(lr > 0.0),
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.history)),
    }
}

#[test]
fn train_rejects_width_mismatch() {
    let ds = fake_dataset(4, 1);
    let model = ModelConfig::toy(30, 204);
    assert!(train(&ds, &model, &tiny_train(1), TrainOptions::default()).is_err());
}

#[test]
fn ablation_csv_has_four_check_mark_rows() {
    let table = AblationTable {
        rows: ABLATION_CONFIGS
            .iter()
            .zip(ABLATION_REFERENCE_LOSSES)
            .map(|(&(postnet, prenet, pretrained), r)| AblationRow {
                postnet,
                prenet,
                pretrained,
                best_val_loss: r,
                best_epoch: 50,
                final_val_loss: r,
                epochs: 50,
                reference_val_loss: r,
            })
            .collect(),
    };
    let csv = table.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "val_loss,epoch,postnet,prenet,pretrained");
    assert_eq!(
        &lines[1..],
        &[
            "1.7127e-1,50,✓,✓,✓",
            "7.1896e-2,50,,✓,✓",
            "1.5066e-2,50,,,✓",
            "8.9430e-3,50,,,",
        ]
    );
}
