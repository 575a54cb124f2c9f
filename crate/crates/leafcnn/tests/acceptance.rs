//! Acceptance suite. Each test covers one release criterion and prints a
//! single pass line; a failing criterion fails its test. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::Path;
use std::process::Command;

use leafcnn::data::{scan_dataset, split, BatchStream, DatasetIndex, SplitSpec};
use leafcnn::layers::{
    build_network, build_network_with, DenseLayer, Gradients, Layer, LayerGrads, Mode, Network,
};
use leafcnn::model_io::{load_model, save_model};
use leafcnn::optim::{adam_step, cross_entropy, softmax_xent_gradient, AdamState};
use leafcnn::tensor::{Shape, Tensor};
use leafcnn::train::{train, TrainConfig};

fn pass(criterion: u32, detail: &str) {
    println!("criterion {criterion}: PASS - {detail}");
}

/// Solid-colour three-class image set, `per_class` JPEGs per class.
fn write_toy_dataset(root: &Path, per_class: usize, size: u32) -> DatasetIndex {
    let classes = [
        ("a_red", [210u8, 40u8, 40u8]),
        ("b_green", [40, 210, 40]),
        ("c_blue", [40, 40, 210]),
    ];
    for (name, rgb) in &classes {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            let jitter = (i * 5 % 16) as u8;
            let px = image::Rgb([
                rgb[0].saturating_add(jitter),
                rgb[1].saturating_add(jitter),
                rgb[2].saturating_add(jitter),
            ]);
            let img = image::RgbImage::from_pixel(size, size, px);
            img.save(dir.join(format!("img{i:03}.jpg"))).unwrap();
        }
    }
    scan_dataset(root).unwrap()
}

#[test]
fn criterion_1_parameter_table() {
    let net = build_network::<f32>(0);
    let expected = [896usize, 18_496, 36_928, 36_928, 36_928, 147_520, 195];
    let actual: Vec<usize> = net
        .summary()
        .into_iter()
        .filter(|(_, _, p)| *p > 0)
        .map(|(_, _, p)| p)
        .collect();
    assert_eq!(actual, expected, "per-layer trainable parameter counts");
    assert_eq!(net.parameter_count(), 277_891, "total parameter count");
    pass(1, "per-layer parameters 896/18496/36928/36928/36928/147520/195, total 277891");
}

#[test]
fn criterion_2_shape_trace() {
    let net = build_network::<f32>(1);
    let trace = net.shape_trace(1);
    // Spatial size after each conv and each pool, then the flattened width.
    let spatial: Vec<usize> = net
        .layers
        .iter()
        .zip(trace.iter().skip(1))
        .filter_map(|(layer, shape)| match layer {
            Layer::Conv(_) | Layer::MaxPool => Some(shape[1]),
            _ => None,
        })
        .collect();
    assert_eq!(spatial, vec![254, 127, 125, 62, 60, 30, 28, 14, 12, 6]);
    let flat = trace
        .iter()
        .find(|s| s.len() == 2 && s[1] > 64)
        .expect("flatten shape");
    assert_eq!(flat[1], 2304);
    // The real forward pass agrees with the arithmetic trace.
    let x = Tensor::<f32>::fill(Shape::new(&[1, 256, 256, 3]).unwrap(), 0.5);
    let (probs, _) = net.forward(x, Mode::Infer).unwrap();
    assert_eq!(probs.shape().dims(), &[1, 3]);
    assert!(probs.all_finite());
    pass(2, "spatial trace 254/127/125/62/60/30/28/14/12/6, flattened 2304");
}

#[test]
fn criterion_3_gradients_match_finite_differences() {
    // Shrunken full network: 8x8x3 input, widths 4, all layer kinds in the
    // canonical order. Every parameter is checked against a central
    // difference of the scalar loss.
    let net = build_network_with::<f64>(33, [8, 8, 3], &[4], 4, 3).unwrap();
    let mut rng = leafcnn::rng::Xoshiro256PlusPlus::new(99);
    let x_data: Vec<f64> = (0..6 * 8 * 8 * 3).map(|_| rng.next_f64()).collect();
    let x = Tensor::from_vec(Shape::new(&[6, 8, 8, 3]).unwrap(), x_data).unwrap();
    let labels = vec![0usize, 2, 1, 0, 2, 1];

    let loss_of = |net: &Network<f64>| -> f64 {
        let (probs, _) = net.forward(x.clone(), Mode::Infer).unwrap();
        cross_entropy(&probs, &labels).unwrap().mean_loss
    };
    let (probs, cache) = net.forward(x.clone(), Mode::Train).unwrap();
    let grad_logits = softmax_xent_gradient(&probs, &labels).unwrap();
    let grads = net.backward(cache.as_ref().unwrap(), grad_logits).unwrap();
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| (*b).clone()).collect();

    // Map each parameter block to its layer kind for the tolerance choice.
    let mut tolerances = Vec::new();
    for layer in &net.layers {
        match layer {
            Layer::Conv(_) => tolerances.extend([1e-4, 1e-4]),
            Layer::Dense(_) => tolerances.extend([1e-5, 1e-5]),
            _ => {}
        }
    }
    assert_eq!(tolerances.len(), analytic.len());

    let h = 1e-5;
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    for (block_idx, tol) in tolerances.iter().enumerate() {
        for i in 0..analytic[block_idx].len() {
            let mut plus = net.clone();
            plus.param_blocks_mut()[block_idx][i] += h;
            let mut minus = net.clone();
            minus.param_blocks_mut()[block_idx][i] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = analytic[block_idx][i];
            if a.abs() < 1e-8 && fd.abs() < 1e-8 {
                continue; // dead units / kink neighbourhood
            }
            let rel = (a - fd).abs() / f64::max(1e-6, a.abs().max(fd.abs()));
            assert!(
                rel <= *tol,
                "block {block_idx} index {i}: analytic {a}, fd {fd}, rel {rel}"
            );
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 150, "only {checked} parameters checked");
    pass(
        3,
        &format!("{checked} parameter gradients within tolerance, worst rel err {worst:.2e}"),
    );
}

/// Textbook Adam recurrence on one scalar, written against the published
/// formulas rather than the library code.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: u32,
}

impl ScalarAdam {
    fn new() -> Self {
        Self { m: 0.0, v: 0.0, t: 0 }
    }

    fn step(&mut self, p: f64, g: f64, lr: f64) -> f64 {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-7;
        self.t += 1;
        self.m = B1 * self.m + (1.0 - B1) * g;
        self.v = B2 * self.v + (1.0 - B2) * g * g;
        let m_hat = self.m / (1.0 - B1.powi(self.t as i32));
        let v_hat = self.v / (1.0 - B2.powi(self.t as i32));
        p - lr * m_hat / (v_hat.sqrt() + EPS)
    }
}

/// One dense layer with `weights` as the free parameters; bias gradients
/// stay zero so the bias never moves.
fn parameter_net(weights: Vec<f64>) -> Network<f64> {
    let n = weights.len();
    Network {
        layers: vec![Layer::Dense(DenseLayer {
            fan_in: 1,
            fan_out: n,
            weights,
            bias: vec![0.0; n],
        })],
        seed: 0,
        input_dims: [1, 1, 1],
    }
}

#[test]
fn criterion_4_adam_matches_scalar_reference() {
    let lr = 0.01;

    // f(p) = p^2, gradient 2p.
    let mut net = parameter_net(vec![1.0]);
    let mut state = AdamState::new(&net, lr);
    let mut reference = ScalarAdam::new();
    let mut p_ref = 1.0f64;
    for step in 0..100 {
        let p = net.param_blocks()[0][0];
        let grads = Gradients {
            layers: vec![LayerGrads::Dense {
                weights: vec![2.0 * p],
                bias: vec![0.0],
            }],
        };
        adam_step(&mut net, &grads, &mut state).unwrap();
        p_ref = reference.step(p_ref, 2.0 * p_ref, lr);
        let diff = (net.param_blocks()[0][0] - p_ref).abs();
        assert!(diff <= 1e-10, "step {step}: diff {diff}");
    }

    // Fixed 10-parameter quadratic f(p) = sum c_i p_i^2.
    let c: Vec<f64> = (1..=10).map(|i| 0.3 + 0.1 * i as f64).collect();
    let p0: Vec<f64> = (1..=10).map(|i| (-1.0f64).powi(i) * (0.5 + 0.2 * i as f64)).collect();
    let mut net = parameter_net(p0.clone());
    let mut state = AdamState::new(&net, lr);
    let mut refs: Vec<ScalarAdam> = (0..10).map(|_| ScalarAdam::new()).collect();
    let mut p_refs = p0;
    for step in 0..100 {
        let params: Vec<f64> = net.param_blocks()[0].clone();
        let grads = Gradients {
            layers: vec![LayerGrads::Dense {
                weights: params.iter().zip(&c).map(|(p, c)| 2.0 * c * p).collect(),
                bias: vec![0.0; 10],
            }],
        };
        adam_step(&mut net, &grads, &mut state).unwrap();
        for i in 0..10 {
            p_refs[i] = refs[i].step(p_refs[i], 2.0 * c[i] * p_refs[i], lr);
            let diff = (net.param_blocks()[0][i] - p_refs[i]).abs();
            assert!(diff <= 1e-10, "step {step}, param {i}: diff {diff}");
        }
    }
    pass(4, "100 steps on p^2 and a 10-parameter quadratic within 1e-10 of the scalar reference");
}

#[test]
fn criterion_5_overfits_toy_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let idx = write_toy_dataset(dir.path(), 8, 64);
    assert_eq!(idx.len(), 24);

    let run = |lr: f64, epochs: usize| -> leafcnn::Result<(bool, usize)> {
        let mut net = build_network::<f32>(7);
        let cfg = TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: lr,
            seed: 7,
            augment: true,
            cache: true,
            prefetch: true,
            deterministic: false,
            stop_at_train_accuracy: Some(1.0),
        };
        let history = train(&mut net, &idx, &idx, &cfg, &mut |_| {})?;
        let reached = history.last().map(|m| m.train_accuracy >= 1.0).unwrap_or(false);
        Ok((reached, history.len()))
    };

    let mut record = Vec::new();
    let first = run(0.01, 40);
    match &first {
        Ok((true, epochs)) => record.push(format!("lr 0.01 reached 1.0 in {epochs} epochs")),
        Ok((false, epochs)) => record.push(format!("lr 0.01 did not converge in {epochs} epochs")),
        Err(e) => record.push(format!("lr 0.01 diverged ({e})")),
    }
    if !matches!(first, Ok((true, _))) {
        let (reached, epochs) = run(0.001, 200).expect("fallback run");
        record.push(format!(
            "lr 0.001 {} in {epochs} epochs",
            if reached { "reached 1.0" } else { "did not converge" }
        ));
        assert!(reached, "{}", record.join("; "));
    }
    pass(5, &record.join("; "));
}

#[test]
fn criterion_6_pipeline_properties() {
    // Stratified split on synthetic class sizes 1000 / 152 / 1000.
    let mut entries = Vec::new();
    for (class, n) in [(0usize, 1000usize), (1, 152), (2, 1000)] {
        for i in 0..n {
            entries.push((format!("c{class}/img{i:05}.jpg").into(), class));
        }
    }
    let idx = DatasetIndex {
        root: ".".into(),
        class_names: vec!["c0".into(), "c1".into(), "c2".into()],
        entries,
    };
    let spec = SplitSpec::default_with_seed(3);
    let (tr, va, te) = split(&idx, &spec).unwrap();
    for (class, want) in [(0usize, (700, 150, 150)), (1, (106, 22, 24)), (2, (700, 150, 150))] {
        let got = (
            tr.class_count(class),
            va.class_count(class),
            te.class_count(class),
        );
        assert_eq!(got, want, "class {class}");
    }
    let train_paths: std::collections::HashSet<_> = tr.entries.iter().map(|(p, _)| p).collect();
    assert!(
        te.entries.iter().all(|(p, _)| !train_paths.contains(p)),
        "train/test overlap"
    );

    // Batch values and prefetch/sequential equivalence on real files.
    let dir = tempfile::tempdir().unwrap();
    let toy = write_toy_dataset(dir.path(), 4, 32);
    let collect = |prefetch: bool| -> Vec<(Vec<f32>, Vec<usize>)> {
        BatchStream::new(
            &toy,
            5,
            21,
            0,
            Some(leafcnn::data::AugmentConfig::default()),
            None,
            prefetch,
        )
        .unwrap()
        .map(|b| {
            let b = b.unwrap();
            (b.x.data().to_vec(), b.y.clone())
        })
        .collect()
    };
    let sequential = collect(false);
    let prefetched = collect(true);
    assert_eq!(sequential, prefetched, "prefetch changed the delivered batches");
    assert!(sequential
        .iter()
        .all(|(x, _)| x.iter().all(|&v| (0.0..=1.0).contains(&v))));
    pass(6, "splits 700/150/150 and 106/22/24, no leakage, values in [0,1], prefetch == sequential");
}

#[test]
fn criterion_7_serialization_roundtrip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.leaf");
    let net = build_network_with::<f32>(5, [16, 16, 3], &[4, 4], 8, 3).unwrap();
    save_model(&net, &path).unwrap();
    let loaded = load_model::<f32>(&path).unwrap();
    let x = Tensor::<f32>::fill(Shape::new(&[2, 16, 16, 3]).unwrap(), 0.25);
    let (a, _) = net.forward(x.clone(), Mode::Infer).unwrap();
    let (b, _) = loaded.forward(x, Mode::Infer).unwrap();
    assert_eq!(a.data(), b.data(), "round-trip changed forward output");

    let bytes = std::fs::read(&path).unwrap();
    let corrupt = dir.path().join("corrupt.leaf");
    // Truncations at every interesting boundary and structural byte edits:
    // all must come back as errors, never panics.
    for cut in [0, 3, 4, 6, 7, 15, 23, 25, bytes.len() - 1] {
        std::fs::write(&corrupt, &bytes[..cut]).unwrap();
        assert!(load_model::<f32>(&corrupt).is_err(), "truncation at {cut} accepted");
    }
    for (offset, value) in [(0usize, b'X'), (4, 9u8), (6, 7), (23, 0xEE), (26, 0xFF)] {
        let mut mutated = bytes.clone();
        mutated[offset] = value;
        std::fs::write(&corrupt, &mutated).unwrap();
        assert!(
            load_model::<f32>(&corrupt).is_err(),
            "structural corruption at {offset} accepted"
        );
    }
    // A payload bit flip may still load; it just must not crash.
    let mut mutated = bytes.clone();
    let mid = bytes.len() / 2;
    mutated[mid] ^= 0x10;
    std::fs::write(&corrupt, &mutated).unwrap();
    let _ = load_model::<f32>(&corrupt);
    pass(7, "round-trip bitwise stable; corrupted files rejected with format errors");
}

#[test]
fn criterion_8_deterministic_cli_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    // 7 per class: smallest count giving all three partitions members.
    write_toy_dataset(&data, 7, 32);

    let run = |out: &Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_leafcnn"))
            .args([
                "train",
                "--dataset",
                data.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--epochs",
                "1",
                "--batch",
                "6",
                "--seed",
                "11",
                "--deterministic",
            ])
            .status()
            .expect("spawn leafcnn");
        assert!(status.success(), "train run failed: {status}");
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    for artifact in ["metrics.csv", "model.leaf", "split_manifest.tsv"] {
        let a = std::fs::read(out_a.join(artifact)).unwrap();
        let b = std::fs::read(out_b.join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
    pass(8, "two --deterministic train runs produced byte-identical artifacts");
}

/// Optional paper-scale reproduction. Runs only when LEAFCNN_DATASET points
/// at the real potato leaf dataset; otherwise reports a skip.
#[test]
fn criterion_9_paper_scale_optional() {
    let Some(root) = std::env::var_os("LEAFCNN_DATASET") else {
        println!("criterion 9: SKIP - set LEAFCNN_DATASET to the dataset root to run");
        return;
    };
    let idx = scan_dataset(Path::new(&root)).unwrap();
    let spec = SplitSpec::default_with_seed(42);
    let (tr, va, te) = split(&idx, &spec).unwrap();
    let mut net = build_network::<f32>(42);
    let cfg = TrainConfig::default();
    let history = train(&mut net, &tr, &va, &cfg, &mut |m| {
        println!(
            "epoch {:>3}: train_acc {:.4} val_acc {:.4}",
            m.epoch + 1,
            m.train_accuracy,
            m.val_accuracy
        );
    })
    .unwrap();
    let report = leafcnn::train::evaluate(&net, &te).unwrap();
    println!(
        "criterion 9: test accuracy {:.4} (reference reports 0.9918; gap {:+.4})",
        report.accuracy,
        report.accuracy - 0.9918
    );
    assert!(history.last().is_some());
    assert!(report.accuracy >= 0.90, "test accuracy {:.4} below 0.90", report.accuracy);
    pass(9, "held-out accuracy at least 0.90 at paper scale");
}
