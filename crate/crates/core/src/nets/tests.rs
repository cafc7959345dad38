use super::*;

fn random_input(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn switchboard_shapes() {
    let g = build_acoustic(&AcousticModelSpec::switchboard(), (300, 60, 1), 0).unwrap();
    assert_eq!(
        g.stage_shapes(),
        vec![vec![64, 150, 30], vec![32, 75, 15], vec![30, 1, 7]]
    );
    assert_eq!(g.penultimate_dim(), 64);
    let flatten_width = g
        .layers()
        .iter()
        .find_map(|l| match l {
            Layer::Dense(d) => Some(d.inputs),
            _ => None,
        })
        .unwrap();
    assert_eq!(flatten_width, 210);
}

#[test]
fn iemocap_shapes() {
    let g = build_acoustic(&AcousticModelSpec::iemocap(), (300, 60, 1), 0).unwrap();
    assert_eq!(g.stage_shapes(), vec![vec![32, 1, 30]]);
    assert_eq!(g.penultimate_dim(), 32);
    let Layer::Dense(first) = g.layers().iter().find(|l| matches!(l, Layer::Dense(_))).unwrap() else {
        unreachable!()
    };
    assert_eq!(first.inputs, 960);
}

#[test]
fn text_shapes() {
    let g = build_text(&TextModelSpec::default(), (64, 300), 0).unwrap();
    assert_eq!(g.stage_shapes(), vec![vec![32, 32], vec![16, 64], vec![8, 128]]);
    assert_eq!(g.penultimate_dim(), 128);
    let g = build_text(&TextModelSpec::default(), (8, 300), 0).unwrap();
    assert_eq!(g.stage_shapes(), vec![vec![4, 32], vec![2, 64], vec![1, 128]]);
    assert!(build_text(&TextModelSpec::default(), (7, 300), 0).is_err());
    let bad = TextModelSpec {
        kernel_size: 2,
        ..TextModelSpec::default()
    };
    assert!(matches!(build_text(&bad, (64, 300), 0), Err(Error::InvalidSpec(_))));
}

#[test]
fn pooling_below_one_is_rejected() {
    let spec = AcousticModelSpec::custom(
        vec![ConvBlockSpec::new(4, [2, 2]), ConvBlockSpec::new(4, [0, 8])],
        vec![8],
    );
    assert!(build_acoustic(&spec, (300, 60, 1), 0).is_ok());
    assert!(matches!(
        build_acoustic(&spec, (300, 12, 1), 0),
        Err(Error::InvalidSpec(_))
    ));
    let spec = AcousticModelSpec::custom(
        vec![ConvBlockSpec::new(4, [400, 2]), ConvBlockSpec::new(4, [0, 2])],
        vec![],
    );
    assert!(build_acoustic(&spec, (300, 60, 1), 0).is_err());
}

#[test]
fn collapse_leaves_single_time_step() {
    for blocks in 1..=3 {
        for time in [12, 37, 300] {
            let spec = AcousticModelSpec::custom((0..blocks).map(|_| ConvBlockSpec::new(2, [2, 2])).collect(), vec![4]);
            let g = build_acoustic(&spec, (time, 16, 1), 1).unwrap();
            let last = g.stage_shapes().pop().unwrap();
            assert_eq!(last[1], 1, "blocks {blocks} time {time}");
        }
    }
}

#[test]
fn same_seed_same_parameters() {
    let a = build_acoustic(&AcousticModelSpec::iemocap(), (300, 60, 1), 5).unwrap();
    let b = build_acoustic(&AcousticModelSpec::iemocap(), (300, 60, 1), 5).unwrap();
    let c = build_acoustic(&AcousticModelSpec::iemocap(), (300, 60, 1), 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

fn tiny_acoustic() -> ModelGraph {
    let spec = AcousticModelSpec::custom(vec![ConvBlockSpec::new(4, [0, 2])], vec![8]);
    build_acoustic(&spec, (12, 6, 1), 3).unwrap()
}

#[test]
fn eval_is_deterministic_and_batch_independent() {
    let g = tiny_acoustic();
    let x = random_input(&[5, 1, 12, 6], 1);
    let a = g.evaluate(&x).unwrap();
    assert_eq!(a, g.evaluate(&x).unwrap());
    let single = Tensor::stack(&[1, 12, 6], [x.sample(3)]).unwrap();
    let b = g.evaluate(&single).unwrap();
    for (p, q) in a.logits.row(3).iter().zip(b.logits.row(0)) {
        assert!((p - q).abs() < 1e-5);
    }
    assert_eq!(a.penultimate.shape(), &[5, 8]);
}

#[test]
fn shape_mismatch_is_rejected() {
    let g = tiny_acoustic();
    assert!(g.evaluate(&random_input(&[2, 1, 11, 6], 0)).is_err());
    assert!(g.evaluate(&random_input(&[2, 12, 6], 0)).is_err());
}

#[test]
fn cross_entropy_examples() {
    let logits = Tensor::new(vec![1, 3], vec![1000.0, 0.0, 0.0]).unwrap();
    assert!(cross_entropy(&logits, &[0]).unwrap().0 < 1e-6);
    let zeros = Tensor::zeros(vec![1, 3]);
    for label in 0..3 {
        let (loss, _) = cross_entropy(&zeros, &[label]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }
    let (_, grad) = cross_entropy(&zeros, &[0]).unwrap();
    let want = [1.0 / 3.0 - 1.0, 1.0 / 3.0, 1.0 / 3.0];
    for (g, w) in grad.data().iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert!(cross_entropy(&zeros, &[3]).is_err());
}

/// Central differences over every entry of every trainable tensor.
#[test]
fn tiny_acoustic_gradients_match_finite_differences() {
    let mut g = tiny_acoustic();
    let x = random_input(&[3, 1, 12, 6], 9);
    let labels = [0usize, 2, 1];
    let loss_at = |g: &mut ModelGraph| {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = g.forward(&x, Mode::Train, &mut rng).unwrap();
        cross_entropy(&out.logits, &labels).unwrap()
    };
    g.zero_grads();
    let (_, dlogits) = loss_at(&mut g);
    g.backward(&dlogits);
    let analytic: Vec<Vec<f64>> = g.params().iter().map(|p| p.grad.clone()).collect();
    let h = 1e-4;
    let count = g.params().len();
    for pi in 0..count {
        if !g.params()[pi].trainable {
            continue;
        }
        for j in 0..g.params()[pi].value.len() {
            let orig = g.params()[pi].value[j];
            g.params_mut()[pi].value[j] = orig + h;
            let up = loss_at(&mut g).0;
            g.params_mut()[pi].value[j] = orig - h;
            let down = loss_at(&mut g).0;
            g.params_mut()[pi].value[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            assert!(
                rel <= 1e-3,
                "{} [{j}]: analytic {a} numeric {numeric}",
                g.params()[pi].name
            );
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut g = tiny_acoustic();
    g.set_input_normalization(&[0.5; 6], &[2.0; 6]).unwrap();
    let bytes = write_checkpoint(&g);
    let loaded = read_checkpoint(&bytes, Path::new("mem")).unwrap();
    assert_eq!(loaded.params(), g.params());
    assert_eq!(write_checkpoint(&loaded), bytes);

    let t = build_text(
        &TextModelSpec {
            conv_filters: vec![4, 4, 4],
            lstm_units: 5,
            ..Default::default()
        },
        (8, 300),
        2,
    )
    .unwrap();
    let bytes = write_checkpoint(&t);
    assert_eq!(
        write_checkpoint(&read_checkpoint(&bytes, Path::new("mem")).unwrap()),
        bytes
    );

    let mut corrupt = bytes.clone();
    corrupt.truncate(bytes.len() - 3);
    assert!(read_checkpoint(&corrupt, Path::new("mem")).is_err());
    assert!(read_checkpoint(b"nope", Path::new("mem")).is_err());
}

use std::path::Path;
