use mat_core::model::{load_checkpoint, param_specs, Checkpoint, DilationPolicy, MatModel, ModelConfig, TileOptions};
use mat_core::ops::{conv2d, pixel_shuffle};
use mat_core::verify::composition;
use mat_core::{Error, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(Shape::new(1, 3, h, w), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn output_shapes_for_all_presets_and_scales() {
    for s in 2..=4 {
        for cfg in [ModelConfig::light(s), ModelConfig::classical(s), ModelConfig::preset("tiny", s).unwrap()] {
            let model = MatModel::<f32>::new(cfg.clone(), 0).unwrap();
            let y = model.predict(&image(17, 19, 1)).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 3, 17 * s, 19 * s), "{:?} x{s}", cfg.variant);
        }
    }
}

#[test]
fn tiny_forward_shape_and_count_is_stable() {
    let a = MatModel::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let b = MatModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    assert_eq!(a.param_count(), b.param_count());
    let ledger: usize = param_specs(&ModelConfig::tiny()).iter().map(|p| p.shape.numel()).sum();
    assert_eq!(a.param_count(), ledger);
    assert_eq!(a.forward(&image(32, 32, 3)).unwrap().shape(), Shape::new(1, 3, 64, 64));
}

#[test]
fn predict_equals_forward_and_is_deterministic() {
    let m = MatModel::<f32>::new(ModelConfig::tiny(), 4).unwrap();
    let x = image(20, 24, 5);
    let a = m.forward(&x).unwrap();
    assert_eq!(a.data(), m.predict(&x).unwrap().data());
    assert_eq!(a.data(), m.forward(&x).unwrap().data());
}

#[test]
fn matches_straight_line_oracle_and_precisions_agree() {
    let m = MatModel::<f64>::new(ModelConfig::tiny(), 6).unwrap();
    let x = image(12, 12, 7).cast::<f64>();
    let y = m.forward(&x).unwrap();
    let o = composition::mat(m.params(), m.config(), &x);
    assert!(y.max_abs_diff(&o) <= 1e-10);

    let y32 = m.cast::<f32>().forward(&x.cast()).unwrap().cast::<f64>();
    assert!(y.max_abs_diff(&y32) <= 1e-3);
}

#[test]
fn every_parameter_gets_a_gradient() {
    let m = MatModel::<f32>::new(ModelConfig::tiny(), 8).unwrap();
    let (mut g, _, y, _) = m.trace(&image(16, 16, 9)).unwrap();
    let target = g.constant(image(32, 32, 10));
    let loss = g.l1_loss(y, target).unwrap();
    let grads = g.backward(loss).unwrap();
    for (name, gr) in grads.params() {
        let gr = gr.unwrap_or_else(|| panic!("{name} got no gradient"));
        assert!(gr.data().iter().any(|&v| v != 0.0), "{name} gradient is zero");
    }
}

#[test]
fn zeroed_trunk_leaves_only_the_shallow_path() {
    let mut m = MatModel::<f32>::new(ModelConfig::tiny(), 11).unwrap();
    m.params_mut().zero_prefix("trunk.");
    let x = image(16, 16, 12);
    let base = m.forward(&x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let names: Vec<String> = m.params().names().filter(|n| n.starts_with("rmag.")).map(String::from).collect();
    for n in names {
        let t = m.params_mut().get_mut(&n).unwrap();
        let noise = Tensor::randn(t.shape(), 0.5, &mut rng);
        *t = t.add(&noise).unwrap();
    }
    assert_eq!(base.data(), m.forward(&x).unwrap().data());
}

#[test]
fn explicit_dilation_on_small_input_is_geometry_error_with_hint() {
    let cfg = ModelConfig {
        dilation: DilationPolicy::Explicit(vec![9, 7, 5]),
        ..ModelConfig::light(2)
    };
    let m = MatModel::<f32>::new(cfg, 0).unwrap();
    let err = m.forward(&image(48, 48, 0)).unwrap_err();
    assert!(matches!(err, Error::Geometry { .. }));
    assert!(err.to_string().contains("\"max\""), "{err}");
}

#[test]
fn tiled_inference_matches_shape_and_is_close_inside() {
    let m = MatModel::<f32>::new(ModelConfig::tiny(), 14).unwrap();
    let x = image(40, 52, 15);
    let opts = TileOptions { tile: 24, overlap: 8 };
    let y = m.predict_tiled(&x, opts).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 3, 80, 104));
    assert!(y.is_finite());
    let small = image(20, 20, 16);
    assert_eq!(m.predict_tiled(&small, opts).unwrap().data(), m.predict(&small).unwrap().data());
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = MatModel::<f32>::new(ModelConfig::tiny(), 17).unwrap();
    m.save(&path, 42).unwrap();
    let ck = load_checkpoint::<f32>(&path, Some(m.config())).unwrap();
    assert_eq!(ck.step, 42);
    for ((na, a), (nb, b)) in m.params().iter().zip(ck.params.iter()) {
        assert_eq!(na, nb);
        let (ba, bb): (Vec<u32>, Vec<u32>) = (
            a.data().iter().map(|v| v.to_bits()).collect(),
            b.data().iter().map(|v| v.to_bits()).collect(),
        );
        assert_eq!(ba, bb, "{na}");
    }
}

#[test]
fn checkpoint_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = MatModel::<f32>::new(ModelConfig::light(2), 0).unwrap();
    m.save(&path, 0).unwrap();

    match load_checkpoint::<f32>(&path, Some(&ModelConfig::light(4))) {
        Err(Error::ShapeMismatch { name, .. }) => assert_eq!(name, "recon.weight"),
        other => panic!("expected shape mismatch, got {:?}", other.map(|c| c.step)),
    }

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 1]).unwrap();
    match load_checkpoint::<f32>(&cut, None) {
        Err(Error::Integrity { position, .. }) => assert_eq!(position, bytes.len() as u64 - 1),
        other => panic!("expected integrity error, got {:?}", other.map(|c| c.step)),
    }

    let bad = dir.path().join("bad.ckpt");
    let mut b = bytes.clone();
    b[0] = b'X';
    std::fs::write(&bad, &b).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&bad, None), Err(Error::BadMagic { .. })));
}

#[test]
fn checkpoint_carries_auxiliary_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let m = MatModel::<f64>::new(ModelConfig::tiny(), 1).unwrap();
    let mut ck = Checkpoint::from_model(&m, 7);
    ck.state.insert("adam.m.trunk.weight", m.params().get("trunk.weight").unwrap().scale(0.5));
    ck.meta = serde_json::json!({ "t": 7 });
    mat_core::model::save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint::<f64>(&path, None).unwrap();
    assert_eq!(back.meta["t"], 7);
    assert_eq!(back.state.len(), 1);
    assert_eq!(back.params.len(), m.params().len());
    back.into_model().unwrap();
}

#[test]
fn nearest_init_routes_the_input() {
    let cfg = ModelConfig {
        nearest_init: true,
        ..ModelConfig::tiny()
    };
    let m = MatModel::<f64>::new(cfg, 4).unwrap();
    let x = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 6, 5), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let p = m.params();
    let xs = conv2d(&x, p.get("shallow.weight").unwrap(), Some(p.get("shallow.bias").unwrap())).unwrap();
    assert_eq!(xs.narrow_channels(0, 3).unwrap(), x);
    // with the other feature channels silenced the head is pure replication
    let silent = Tensor::concat_channels(&[&x, &Tensor::zeros(Shape::new(1, 21, 6, 5))]).unwrap();
    let up = pixel_shuffle(&conv2d(&silent, p.get("recon.weight").unwrap(), None).unwrap(), 2).unwrap();
    for (c, y, xx) in [(0, 0, 0), (1, 3, 2), (2, 11, 9)] {
        assert_eq!(up.get(0, c, y, xx), x.get(0, c, y / 2, xx / 2));
    }
}
