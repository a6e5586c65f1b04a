use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::layout;
use super::*;
use crate::autodiff::{grad_check, grad_check_sampled, Array, Graph, ParamStore, Var};
use crate::Error;

fn toy() -> ModelConfig {
    ModelConfig::toy(30, 60)
}

fn params(cfg: &ModelConfig) -> ParamStore<f64> {
    init_params(cfg, 7).unwrap()
}

fn zero_prefix(p: &mut ParamStore<f64>, prefix: &str) {
    for (name, param) in p.iter_mut() {
        if name.starts_with(prefix) {
            param.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn random_targets(rows: usize, width: usize, seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::new(
        vec![rows, width],
        (0..rows * width).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    )
    .unwrap()
}

#[test]
fn encoder_memory_has_one_row_per_token() {
    let cfg = toy();
    let p = params(&cfg);
    for tokens in [vec![7, 4, 11, 11, 14], vec![3]] {
        let mut g = Graph::inference(&p);
        let m = encoder_forward(&mut g, &cfg, &tokens, &mut Pass::eval()).unwrap();
        assert_eq!(g.tape.shape(m), [tokens.len(), cfg.memory_dim()]);
    }
}

#[test]
fn encoder_is_deterministic_in_eval_mode() {
    let cfg = toy();
    let p = params(&cfg);
    let run = || {
        let mut g = Graph::inference(&p);
        let m = encoder_forward(&mut g, &cfg, &[1, 2, 3], &mut Pass::eval()).unwrap();
        g.value(m).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn encoder_rejects_empty_input() {
    let cfg = toy();
    let p = params(&cfg);
    let mut g = Graph::inference(&p);
    let err = encoder_forward(&mut g, &cfg, &[], &mut Pass::eval()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

fn memory_from(g: &mut Graph<f64>, rows: &[[f64; 32]]) -> Memory {
    let data = rows.iter().flatten().copied().collect();
    let v = g.tape.constant(Array::new(vec![rows.len(), 32], data).unwrap());
    prepare_memory(g, v).unwrap()
}

fn random_rows(n: usize, seed: u64) -> Vec<[f64; 32]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect()
}

#[test]
fn attention_rows_sum_to_one() {
    let cfg = toy();
    let p = params(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 4, 9] {
        let mut g = Graph::inference(&p);
        let mem = memory_from(&mut g, &random_rows(n, n as u64));
        let q = g.tape.constant(random_targets(1, 64, rng.gen()));
        let prev = g.tape.constant(random_targets(1, n, rng.gen()));
        let cum = g.tape.constant(random_targets(1, n, rng.gen()));
        let (ctx, a) = attention_step(&mut g, q, &mem, prev, cum).unwrap();
        assert_eq!(g.tape.shape(ctx), [1, 32]);
        assert!((g.value(a).data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_projections_give_uniform_attention() {
    let cfg = toy();
    let mut p = params(&cfg);
    zero_prefix(&mut p, "attention.");
    let rows = random_rows(5, 2);
    let mut g = Graph::inference(&p);
    let mem = memory_from(&mut g, &rows);
    let q = g.tape.constant(random_targets(1, 64, 3));
    let prev = g.tape.constant(Array::zeros(&[1, 5]));
    let (ctx, a) = attention_step(&mut g, q, &mem, prev, prev).unwrap();
    assert!(g.value(a).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    for (c, got) in g.value(ctx).data().iter().enumerate() {
        let mean = rows.iter().map(|r| r[c]).sum::<f64>() / 5.0;
        assert!((got - mean).abs() < 1e-12);
    }
}

#[test]
fn concentrated_energy_selects_one_memory_row() {
    let cfg = toy();
    let mut p = params(&cfg);
    zero_prefix(&mut p, "attention.");
    p.value_mut("attention.memory.weight").unwrap().data_mut()[0] = 10.0;
    p.value_mut("attention.v.weight").unwrap().data_mut()[0] = 10.0;
    let mut rows = random_rows(4, 5);
    for r in rows.iter_mut() {
        r[0] = 0.0;
    }
    let j = 2;
    rows[j][0] = 1.0;

    // Energies are 10·tanh(10) on row j and 0 elsewhere.
    let hot = (10.0 * 10f64.tanh()).exp();
    let weights: Vec<f64> = (0..4).map(|i| if i == j { hot } else { 1.0 } / (hot + 3.0)).collect();
    let expect: Vec<f64> = (0..32).map(|c| (0..4).map(|i| weights[i] * rows[i][c]).sum()).collect();

    let mut g = Graph::inference(&p);
    let mem = memory_from(&mut g, &rows);
    let q = g.tape.constant(random_targets(1, 64, 6));
    let zero = g.tape.constant(Array::zeros(&[1, 4]));
    let (ctx, a) = attention_step(&mut g, q, &mem, zero, zero).unwrap();
    for (got, w) in g.value(a).data().iter().zip(&weights) {
        assert!((got - w).abs() < 1e-12);
    }
    for (c, (got, e)) in g.value(ctx).data().iter().zip(&expect).enumerate() {
        assert!((got - e).abs() < 1e-12);
        assert!((got - rows[j][c]).abs() < 1e-3);
    }
}

#[test]
fn attention_rejects_alignment_length_mismatch() {
    let cfg = toy();
    let p = params(&cfg);
    let mut g = Graph::inference(&p);
    let mem = memory_from(&mut g, &random_rows(3, 1));
    let q = g.tape.constant(Array::zeros(&[1, 64]));
    let bad = g.tape.constant(Array::zeros(&[1, 4]));
    assert!(matches!(
        attention_step(&mut g, q, &mem, bad, bad),
        Err(Error::Shape { kind: "attention", .. })
    ));
}

#[test]
fn decoder_step_emits_output_width_frames() {
    for width in [60, 204] {
        let cfg = ModelConfig::toy(30, width);
        let p = params(&cfg);
        let mut g = Graph::inference(&p);
        let mut pass = Pass::eval();
        let m = encoder_forward(&mut g, &cfg, &[1, 2], &mut pass).unwrap();
        let mem = prepare_memory(&mut g, m).unwrap();
        let state = initial_state(&mut g, &cfg, &mem);
        let out = decoder_step(&mut g, &cfg, &state, &mem, &mut pass).unwrap();
        assert_eq!(g.tape.shape(out.frame), [1, width]);
        assert_eq!(g.tape.shape(out.gate), [1, 1]);

        let mut wrong = out.state;
        wrong.prev_frame = g.tape.constant(Array::zeros(&[1, width + 1]));
        assert!(matches!(
            decoder_step(&mut g, &cfg, &wrong, &mem, &mut pass),
            Err(Error::Shape { kind: "decoder", .. })
        ));
    }
}

#[test]
fn prenet_is_two_relu_layers_of_256_in_the_full_preset() {
    let mut cfg = ModelConfig::full(30, 60);
    cfg.use_prenet = true;
    let slots = layout(&cfg);
    let shape = |n: &str| slots.iter().find(|s| s.name == n).map(|s| s.shape.clone());
    assert_eq!(shape("prenet.fc0.weight"), Some(vec![60, 256]));
    assert_eq!(shape("prenet.fc1.weight"), Some(vec![256, 256]));
    assert_eq!(shape("prenet.fc2.weight"), None);
    assert_eq!(shape("decoder.lstm0.weight"), Some(vec![256 + 512 + 1024, 4 * 1024]));

    // Negative pre-activations are clipped: with all prenet weights negative
    // and a positive frame, the LSTM sees zeros where the frame would be.
    let mut toy = toy();
    toy.use_prenet = true;
    let mut p = params(&toy);
    for name in ["prenet.fc0.weight", "prenet.fc1.weight"] {
        p.value_mut(name)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = -v.abs());
    }
    let mut q = p.clone();
    zero_prefix(&mut q, "prenet.");
    let run = |p: &ParamStore<f64>| {
        let mut g = Graph::inference(p);
        let mut pass = Pass::eval();
        let m = encoder_forward(&mut g, &toy, &[4, 5], &mut pass).unwrap();
        let mem = prepare_memory(&mut g, m).unwrap();
        let mut s = initial_state(&mut g, &toy, &mem);
        s.prev_frame = g.tape.constant(Array::filled(&[1, 60], 1.0));
        let out = decoder_step(&mut g, &toy, &s, &mem, &mut pass).unwrap();
        g.value(out.frame).clone()
    };
    assert_eq!(run(&p), run(&q));
}

#[test]
fn teacher_forcing_output_matches_target_length() {
    let cfg = toy();
    let p = params(&cfg);
    let mut g = Graph::inference(&p);
    let out = forward_teacher_forced(&mut g, &cfg, &[1, 2, 3], &random_targets(7, 60, 1), &mut Pass::eval()).unwrap();
    assert_eq!(g.tape.shape(out.frames), [7, 60]);
    assert_eq!(g.tape.shape(out.gate), [7, 1]);
    assert_eq!(g.tape.shape(out.alignments), [7, 3]);
    assert!(out.postnet_frames.is_none());

    let a = g.value(out.alignments).data();
    for row in a.chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!((a.iter().sum::<f64>() - 7.0).abs() < 1e-4);
}

#[test]
fn teacher_forcing_rejects_wrong_width() {
    let cfg = toy();
    let p = params(&cfg);
    let mut g = Graph::inference(&p);
    let err = forward_teacher_forced(&mut g, &cfg, &[1], &random_targets(3, 204, 1), &mut Pass::eval()).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
}

#[test]
fn zero_weights_predict_the_output_bias() {
    let cfg = toy();
    let mut p = params(&cfg);
    for (_, param) in p.iter_mut() {
        param.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let bias: Vec<f64> = (0..60).map(|i| i as f64 * 0.1 - 2.0).collect();
    p.value_mut("decoder.projection.bias")
        .unwrap()
        .data_mut()
        .copy_from_slice(&bias);
    // Running variance of zero would divide by sqrt(eps); keep it at one.
    p.value_mut("encoder.conv0.bn.running_var")
        .unwrap()
        .data_mut()
        .fill(1.0);
    let mut g = Graph::inference(&p);
    let out = forward_teacher_forced(&mut g, &cfg, &[1, 2], &random_targets(4, 60, 2), &mut Pass::eval()).unwrap();
    for row in g.value(out.frames).data().chunks(60) {
        assert_eq!(row, bias.as_slice());
    }
}

#[test]
fn postnet_output_is_frames_plus_residual() {
    let mut cfg = toy();
    cfg.use_postnet = true;
    let p = params(&cfg);
    let mut g = Graph::inference(&p);
    let mut pass = Pass::eval();
    let out = forward_teacher_forced(&mut g, &cfg, &[5, 6, 7], &random_targets(6, 60, 3), &mut pass).unwrap();
    let post = out.postnet_frames.unwrap();
    assert_eq!(g.tape.shape(post), g.tape.shape(out.frames));

    let frames = g.value(out.frames).clone();
    let mut g2 = Graph::inference(&p);
    let f = g2.tape.constant(frames.clone());
    let residual = postnet_forward(&mut g2, &cfg, f, &mut pass).unwrap();
    for ((o, f), r) in g
        .value(post)
        .data()
        .iter()
        .zip(frames.data())
        .zip(g2.value(residual).data())
    {
        assert_eq!(*o, f + r);
    }
}

#[test]
fn postnet_with_zero_weights_has_zero_residual() {
    let mut cfg = toy();
    cfg.use_postnet = true;
    let mut p = params(&cfg);
    for (name, param) in p.iter_mut() {
        if name.starts_with("postnet.") && !name.ends_with("running_var") {
            param.value.data_mut().fill(0.0);
        }
    }
    let mut g = Graph::inference(&p);
    let f = g.tape.constant(random_targets(5, 60, 4));
    let r = postnet_forward(&mut g, &cfg, f, &mut Pass::eval()).unwrap();
    assert_eq!(g.tape.shape(r), [5, 60]);
    assert!(g.value(r).data().iter().all(|&v| v == 0.0));
}

#[test]
fn postnet_disabled_is_a_contract_error() {
    let cfg = toy();
    let p = params(&cfg);
    let mut g = Graph::inference(&p);
    let f = g.tape.constant(random_targets(2, 60, 5));
    assert!(matches!(
        postnet_forward(&mut g, &cfg, f, &mut Pass::eval()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn grad_check_postnet() {
    let mut cfg = toy();
    cfg.use_postnet = true;
    cfg.postnet_filters = 6;
    let p = params(&cfg);
    let frames = random_targets(5, 60, 6);
    let target = random_targets(5, 60, 7);
    let mask = vec![1.0; 300];
    let report = grad_check(
        |g: &mut Graph<f64>| {
            let f = g.tape.constant(frames.clone());
            let r = postnet_forward(g, &cfg, f, &mut Pass::train(0))?;
            g.tape.squared_error_sum(r, target.data(), &mask)
        },
        &p.clone(),
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn one_step_loss(g: &mut Graph<f64>, cfg: &ModelConfig, targets: &Array<f64>) -> crate::Result<Var> {
    let out = forward_teacher_forced(g, cfg, &[3, 8, 1, 14], targets, &mut Pass::train(11))?;
    let n = targets.numel();
    let mask = vec![1.0; n];
    let frames = out.postnet_frames.unwrap_or(out.frames);
    let l1 = g.tape.smooth_l1_sum(frames, targets.data(), &mask, 1.0)?;
    let rows = targets.shape()[0];
    let mut gate_target = vec![0.0; rows];
    gate_target[rows - 1] = 1.0;
    let bce = g.tape.bce_logits_sum(out.gate, &gate_target, &vec![1.0; rows])?;
    g.tape.add(l1, bce)
}

#[test]
fn grad_check_full_teacher_forced_step() {
    let cfg = toy();
    let p = params(&cfg);
    let targets = random_targets(4, 60, 8);
    let report = grad_check_sampled(|g: &mut Graph<f64>| one_step_loss(g, &cfg, &targets), &p, 1e-5, 40, 3).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn grad_check_with_prenet_and_postnet() {
    // The postnet makes the loss large relative to some attention
    // derivatives, so single coordinates sit at the f64 noise floor for
    // ε = 1e-5; compare whole parameter arrays instead.
    let mut cfg = toy();
    cfg.use_prenet = true;
    cfg.use_postnet = true;
    let p = params(&cfg);
    let targets = random_targets(4, 60, 8);
    let report = grad_check_sampled(|g: &mut Graph<f64>| one_step_loss(g, &cfg, &targets), &p, 1e-5, 40, 3).unwrap();
    assert!(report.max_tensor_rel_error < 1e-4, "{report:?}");
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn infer_stops_on_gate() {
    let cfg = toy();
    let mut p = params(&cfg);
    zero_prefix(&mut p, "gate.");
    p.value_mut("gate.bias").unwrap().data_mut()[0] = 10.0;
    let out = infer(&p, &cfg, &[1, 2, 3], &InferOptions::default()).unwrap();
    assert_eq!(out.frames.rows(), 1);
    assert!(out.stopped_by_gate);

    p.value_mut("gate.bias").unwrap().data_mut()[0] = -10.0;
    let opts = InferOptions {
        max_frames: 40,
        ..Default::default()
    };
    let out = infer(&p, &cfg, &[1, 2, 3], &opts).unwrap();
    assert_eq!(out.frames.rows(), 40);
    assert_eq!(out.frames.width(), 60);
    assert!(!out.stopped_by_gate);
    assert_eq!(out.duration_seconds(), 0.5);
    assert_eq!(out.alignments.rows(), 40);
}

#[test]
fn frozen_batch_norm_keeps_eval_statistics() {
    let cfg = toy();
    let mut p = params(&cfg);
    let mut pass = Pass::train(0);
    {
        let mut g = Graph::new(&p);
        encoder_forward(&mut g, &cfg, &[1, 2, 3], &mut pass).unwrap();
    }
    let updates = pass.take_bn_updates();
    assert_eq!(updates.len(), 1);
    assert_eq!(updates[0].prefix, "encoder.conv0");
    let before = p.value("encoder.conv0.bn.running_mean").unwrap().clone();
    apply_bn_updates(&mut p, &updates).unwrap();
    let after = p.value("encoder.conv0.bn.running_mean").unwrap();
    for ((a, b), m) in after.data().iter().zip(before.data()).zip(&updates[0].mean) {
        assert!((a - (0.9 * b + 0.1 * m)).abs() < 1e-15);
    }

    p.set_frozen_prefix("encoder.", true);
    let mut g = Graph::new(&p);
    encoder_forward(&mut g, &cfg, &[1, 2, 3], &mut pass).unwrap();
    assert!(pass.take_bn_updates().is_empty());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut cfg = toy();
    cfg.use_postnet = true;
    let mut p: ParamStore<f32> = init_params(&cfg, 3).unwrap();
    p.set_frozen_prefix("encoder.", true);
    let meta = CheckpointMeta {
        epoch: 12,
        iteration: 96,
        val_loss: Some(0.125),
        frozen: vec!["encoder.".into()],
        charset: Some("ABC".into()),
        reference: None,
    };
    let bytes = save_checkpoint(&p, &cfg, &meta).unwrap();
    assert_eq!(&bytes[..5], b"LTCK1");
    let ck = load_checkpoint(&bytes).unwrap();
    assert_eq!(ck.params, p);
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.meta, meta);
    assert_eq!(save_checkpoint(&ck.params, &ck.config, &ck.meta).unwrap(), bytes);
}

#[test]
fn checkpoint_rejects_other_width_and_bad_magic() {
    let cfg = toy();
    let p: ParamStore<f32> = init_params(&cfg, 3).unwrap();
    let bytes = save_checkpoint(&p, &cfg, &CheckpointMeta::default()).unwrap();
    match load_checkpoint_for(&bytes, &ModelConfig::toy(30, 204)) {
        Err(Error::Compatibility { names, .. }) => assert_eq!(names, vec!["output_width"]),
        other => panic!("unexpected {other:?}"),
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
    let mut bad = bytes;
    bad[5] = 9;
    assert!(matches!(load_checkpoint(&bad), Err(Error::Format(_))));
}

#[test]
fn checkpoint_name_mismatch_lists_names() {
    let cfg = toy();
    let mut with_post = cfg.clone();
    with_post.use_postnet = true;
    let p: ParamStore<f32> = init_params(&with_post, 3).unwrap();
    // Arrays from a postnet model declared under a config without one.
    let bytes = save_checkpoint(&p, &cfg, &CheckpointMeta::default()).unwrap();
    match load_checkpoint(&bytes) {
        Err(Error::Compatibility { names, .. }) => {
            assert!(!names.is_empty());
            assert!(names.iter().all(|n| n.starts_with("postnet.")));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn partial_load_transfers_encoder_and_gate() {
    let cfg = toy();
    let trained: ParamStore<f32> = init_params(&cfg, 1).unwrap();
    let mut fresh: ParamStore<f32> = init_params(&cfg, 2).unwrap();
    let report = load_partial(&mut fresh, &trained, &TRANSFER_PREFIXES).unwrap();
    assert!(report
        .loaded
        .iter()
        .all(|n| n.starts_with("encoder.") || n.starts_with("gate.")));
    assert!(report
        .fresh
        .iter()
        .all(|n| n.starts_with("decoder.") || n.starts_with("attention.")));
    assert!(report.fresh.iter().any(|n| n.starts_with("decoder.")));
    assert!(report.fresh.iter().any(|n| n.starts_with("attention.")));
    for n in &report.loaded {
        assert_eq!(fresh.value(n).unwrap(), trained.value(n).unwrap());
    }
    let other: ParamStore<f32> = init_params(&ModelConfig::toy(40, 60), 1).unwrap();
    match load_partial(&mut fresh, &other, &TRANSFER_PREFIXES) {
        Err(Error::Compatibility { names, .. }) => assert_eq!(names, vec!["encoder.embedding"]),
        other => panic!("unexpected {other:?}"),
    }
}
