use pptv::model::{
    ensemble_predict, read_checkpoint, saturation_report, write_checkpoint, Model, ModelConfig, TargetMonth,
    DEFAULT_Z_SAT,
};
use pptv::{Error, FormatError, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> ModelConfig {
    ModelConfig {
        conv_filters: [3, 2, 2],
        dense_neurons: 4,
        kernel: (3, 3),
        grid: (8, 12),
        seed,
        ..ModelConfig::default()
    }
}

fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn parameter_count_matches_hand_count() {
    let config = ModelConfig {
        conv_filters: [2, 2, 2],
        dense_neurons: 4,
        ..ModelConfig::default()
    };
    // kernel 4x8, grid 24x72 -> 12x36 -> 6x18
    let conv1 = 2 * 6 * 4 * 8 + 2;
    let conv23 = 2 * 2 * 4 * 8 + 2;
    let calib = 2 * 2 * (24 * 72 + 12 * 36 + 6 * 18);
    let dense = 4 * (2 * 6 * 18) + 4 + 4 + 1;
    let expected = conv1 + 2 * conv23 + calib + dense;
    assert_eq!(expected, 10591);
    assert_eq!(config.parameter_count(), expected);
    assert_eq!(Model::build(config).unwrap().parameter_count(), expected);
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::build(small(9)).unwrap();
    let b = Model::build(small(9)).unwrap();
    let c = Model::build(small(10)).unwrap();
    for (x, y) in a.params().iter().zip(b.params()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(x), bits(y));
    }
    assert_ne!(a.params(), c.params());
}

#[test]
fn identity_calibration_is_bitwise_neutral() {
    let plain = Model::build(ModelConfig {
        calibration_enabled: false,
        ..small(4)
    })
    .unwrap();
    let calibrated = plain.with_identity_calibration().unwrap();
    assert!(calibrated.config().calibration_enabled);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = random_input(&plain.config().input_shape(), &mut rng);
        assert_eq!(plain.predict(&x).unwrap().to_bits(), calibrated.predict(&x).unwrap().to_bits());
    }
}

#[test]
fn zero_bias_zero_input_predicts_zero() {
    let mut m = Model::build(small(2)).unwrap();
    for name in m.param_names().to_vec() {
        if name.ends_with(".bias") {
            m.param_mut(&name).unwrap().data_mut().fill(0.0);
        }
    }
    let x = Tensor::zeros(&m.config().input_shape());
    assert_eq!(m.predict(&x).unwrap(), 0.0);
}

#[test]
fn repeated_prediction_is_bit_identical() {
    let m = Model::build(small(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_input(&m.config().input_shape(), &mut rng);
    let first = m.predict(&x).unwrap().to_bits();
    assert!((0..1000).all(|_| m.predict(&x).unwrap().to_bits() == first));
}

#[test]
fn first_order_taylor_check() {
    let m = Model::build(small(5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_input(&m.config().input_shape(), &mut rng);
    let (y, g) = m.predict_with_grad(&x).unwrap();
    let delta = 1e-4;
    // cells with the largest gradients, where the linear term dominates
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
    for &k in &order[..20] {
        let mut xp = x.clone();
        xp.data_mut()[k] += delta;
        let change = m.predict(&xp).unwrap() - y;
        let predicted = g[k] * delta;
        assert!(((change - predicted) / predicted).abs() < 1e-2, "cell {k}: {change} vs {predicted}");
    }
}

#[test]
fn wrong_shape_rejected() {
    let m = Model::build(small(0)).unwrap();
    assert!(matches!(m.predict(&Tensor::zeros(&[6, 8, 11])), Err(Error::Shape(_))));
}

#[test]
fn ensemble_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let models: Vec<Model> = (0..4).map(|s| Model::build(small(s)).unwrap()).collect();
    let x = random_input(&models[0].config().input_shape(), &mut rng);
    assert_eq!(ensemble_predict(&models[..1], &x).unwrap(), models[0].predict(&x).unwrap());

    let external = models.iter().map(|m| m.predict(&x).unwrap()).sum::<f64>() / 4.0;
    assert!((ensemble_predict(&models, &x).unwrap() - external).abs() <= 1e-15);

    // negating the output layer negates the prediction
    let mut neg = models[1].clone();
    for name in ["out.weight", "out.bias"] {
        neg.param_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = -*v);
    }
    let pair = [models[1].clone(), neg];
    assert_eq!(ensemble_predict(&pair, &x).unwrap(), 0.0);
    assert!(matches!(ensemble_predict(&[], &x), Err(Error::Empty(_))));
}

#[test]
fn fresh_model_is_not_saturated() {
    let m = Model::build(small(6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xs: Vec<Tensor> = (0..32).map(|_| random_input(&m.config().input_shape(), &mut rng)).collect();
    let r = saturation_report(&m, &xs, DEFAULT_Z_SAT).unwrap();
    assert!(r.saturation_fraction < 0.05, "{r:?}");
    assert_eq!(r.layer_fractions.len(), 4);
    assert!(r.layer_fractions.iter().all(|f| (0.0..=1.0).contains(f)));
}

#[test]
fn huge_conv_biases_saturate_everything() {
    let mut m = Model::build(small(7)).unwrap();
    for i in 1..=3 {
        m.param_mut(&format!("conv{i}.bias")).unwrap().data_mut().fill(100.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<Tensor> = (0..8).map(|_| random_input(&m.config().input_shape(), &mut rng)).collect();
    let r = saturation_report(&m, &xs, DEFAULT_Z_SAT).unwrap();
    assert!(r.layer_fractions[..3].iter().all(|&f| f == 1.0), "{r:?}");
    assert!(r.saturation_fraction > 0.95);
    assert_eq!(r.dead_gradient_fraction, 1.0);
    let none: Vec<Tensor> = Vec::new();
    assert!(saturation_report(&m, &none, DEFAULT_Z_SAT).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let config = ModelConfig {
        target_month: TargetMonth::Month(12),
        lead_months: 7,
        ..small(11)
    };
    let m = Model::build(config).unwrap();
    let bytes = write_checkpoint(&m);
    assert_eq!(&bytes[..8], b"PPTVMDL1");
    let back = read_checkpoint(&bytes).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.param_names(), m.param_names());
    for (a, b) in back.params().iter().zip(m.params()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(write_checkpoint(&back), bytes);
}

#[test]
fn checkpoint_errors() {
    let bytes = write_checkpoint(&Model::build(small(1)).unwrap());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad), Err(Error::Format(FormatError::BadMagic { .. }))));
    assert!(matches!(
        read_checkpoint(&bytes[..bytes.len() - 3]),
        Err(Error::Format(FormatError::Truncated { .. }))
    ));
    let mut extra = bytes;
    extra.push(0);
    assert!(read_checkpoint(&extra).is_err());
}
