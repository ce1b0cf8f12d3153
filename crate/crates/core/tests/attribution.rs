use pptv::attribution::{
    aggregate_channels, attention_indicator, gradcam_saliency, meridional_mean, normalize, parse_saliency_csv,
    perturbation_saliency, pptv, pptv_quadrature_oracle, saliency_csv, threshold_mask, vbp_saliency,
    vbp_sample_maps, write_pgm, ChannelMode, Method, PerturbationConfig, SaliencyMap, SaliencyTable, Scope,
    zonal_mean,
};
use pptv::autodiff::{Tape, Var};
use pptv::data::{GridSpec, CHANNEL_NAMES};
use pptv::model::{LinearModel, Model, ModelConfig, Regressor, TapeFunction};
use pptv::{par, Error, Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = 2.0 * std::f64::consts::PI * u2;
    (r * t.cos(), r * t.sin())
}

fn quadratic(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = tape.constant(Tensor::from_vec(vec![1.0, 0.5]));
    let s = tape.square(x);
    let p = tape.mul(s, c)?;
    Ok(tape.sum(p))
}

fn small_model(seed: u64) -> Model {
    Model::build(ModelConfig {
        conv_filters: [3, 2, 2],
        dense_neurons: 4,
        kernel: (3, 3),
        grid: (8, 12),
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn constant_model() -> Model {
    let mut m = small_model(1);
    m.param_mut("out.weight").unwrap().data_mut().fill(0.0);
    m.param_mut("out.bias").unwrap().data_mut().fill(0.3);
    m
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn quadratic_matches_closed_form_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs: Vec<Tensor> = (0..1000)
        .map(|_| {
            let (a, b) = normal_pair(&mut rng);
            Tensor::from_vec(vec![a, b])
        })
        .collect();
    let f = TapeFunction::new(&[2], quadratic);
    let map = pptv(&f, &xs).unwrap();
    let ex = xs.iter().map(|x| (2.0 * x.data()[0]).abs()).sum::<f64>() / 1000.0;
    let ey = xs.iter().map(|x| x.data()[1].abs()).sum::<f64>() / 1000.0;
    assert!((map.raw.data()[0] - ex).abs() < 1e-12);
    assert!((map.raw.data()[1] - ey).abs() < 1e-12);
    assert_eq!(map.sample_count, 1000);
    assert_eq!(map.method, Method::Pptv);
    assert_eq!(map.normalized.max(), 1.0);
}

#[test]
fn linear_model_gives_absolute_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..10 {
        let a = uniform(&[6, 3, 4], &mut rng);
        let m = LinearModel::new(a.clone(), 0.7);
        let xs: Vec<Tensor> = (0..1 + trial * 3).map(|_| uniform(&[6, 3, 4], &mut rng)).collect();
        let map = pptv(&m, &xs).unwrap();
        for (r, w) in map.raw.data().iter().zip(a.data()) {
            assert!((r - w.abs()).abs() <= 1e-12);
        }
        for s in vbp_sample_maps(&m, &xs).unwrap() {
            assert_eq!(s.raw, a.map(f64::abs));
        }
    }
}

#[test]
fn constant_model_gives_zero_maps_for_every_method() {
    let m = constant_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<Tensor> = (0..3).map(|_| uniform(&m.input_shape(), &mut rng)).collect();
    let cfg = PerturbationConfig {
        patch: (2, 2),
        stride: 2,
        fill: 0.0,
    };
    let maps = [
        pptv(&m, &xs).unwrap(),
        vbp_saliency(&m, &xs).unwrap(),
        perturbation_saliency(&m, &xs, &cfg).unwrap(),
        gradcam_saliency(&m, &xs).unwrap(),
    ];
    for map in maps {
        assert!(map.is_zero(), "{}", map.method);
        assert!(map.normalized.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_sample_vbp_equals_pptv_bitwise() {
    let m = small_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs = vec![uniform(&m.input_shape(), &mut rng)];
    let p = pptv(&m, &xs).unwrap();
    let v = vbp_saliency(&m, &xs).unwrap();
    let s = &vbp_sample_maps(&m, &xs).unwrap()[0];
    assert_eq!(bits(&p.raw), bits(&v.raw));
    assert_eq!(bits(&p.raw), bits(&s.raw));
    assert_eq!(v.method, Method::Vbp);
}

#[test]
fn pptv_is_independent_of_worker_count() {
    let m = small_model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs: Vec<Tensor> = (0..150).map(|_| uniform(&m.input_shape(), &mut rng)).collect();
    let one = par::with_workers(1, || pptv(&m, &xs).unwrap());
    let four = par::with_workers(4, || pptv(&m, &xs).unwrap());
    assert_eq!(bits(&one.raw), bits(&four.raw));
}

#[test]
fn occlusion_of_linear_model_removes_each_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = uniform(&[2, 4, 5], &mut rng);
    let x = uniform(&[2, 4, 5], &mut rng);
    let m = LinearModel::new(a.clone(), -1.0);
    let cfg = PerturbationConfig {
        patch: (1, 1),
        stride: 1,
        fill: 0.0,
    };
    let map = perturbation_saliency(&m, std::slice::from_ref(&x), &cfg).unwrap();
    for k in 0..a.len() {
        let expected = (a.data()[k] * x.data()[k]).abs();
        assert!((map.raw.data()[k] - expected).abs() < 1e-15);
    }
}

/// Enumerates, for every cell, the patches covering it and re-evaluates the model.
fn occlusion_oracle(m: &Model, xs: &[Tensor], patch: (usize, usize), stride: usize) -> Vec<f64> {
    let [c, h, w] = m.config().input_shape();
    let mut out = vec![0.0; c * h * w];
    for x in xs {
        let base = m.predict(x).unwrap();
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let mut total = 0.0;
                    let mut count = 0;
                    for r in (0..=h - patch.0).step_by(stride) {
                        for q in (0..=w - patch.1).step_by(stride) {
                            if !(r <= i && i < r + patch.0 && q <= j && j < q + patch.1) {
                                continue;
                            }
                            let mut y = x.clone();
                            for a in r..r + patch.0 {
                                for b in q..q + patch.1 {
                                    let k = y.offset(&[ch, a, b]);
                                    y.data_mut()[k] = 0.0;
                                }
                            }
                            total += (base - m.predict(&y).unwrap()).abs();
                            count += 1;
                        }
                    }
                    if count > 0 {
                        out[(ch * h + i) * w + j] += total / count as f64 / xs.len() as f64;
                    }
                }
            }
        }
    }
    out
}

#[test]
fn occlusion_matches_direct_loop() {
    let m = small_model(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<Tensor> = (0..2).map(|_| uniform(&m.input_shape(), &mut rng)).collect();
    for stride in [1, 3] {
        let cfg = PerturbationConfig {
            patch: (2, 2),
            stride,
            fill: 0.0,
        };
        let map = perturbation_saliency(&m, &xs, &cfg).unwrap();
        let oracle = occlusion_oracle(&m, &xs, (2, 2), stride);
        for (a, b) in map.raw.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gradcam_of_uniform_features_is_uniform() {
    let mut m = small_model(8);
    m.param_mut("conv3.weight").unwrap().data_mut().fill(0.0);
    m.param_mut("conv3.bias").unwrap().data_mut().copy_from_slice(&[0.4, -0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs: Vec<Tensor> = (0..3).map(|_| uniform(&m.input_shape(), &mut rng)).collect();
    let map = gradcam_saliency(&m, &xs).unwrap();
    let first = map.raw.data()[0];
    assert!(first > 0.0);
    assert!(map.raw.data().iter().all(|&v| (v - first).abs() < 1e-15));
}

#[test]
fn gradcam_rejects_models_without_convolutions() {
    let m = LinearModel::new(Tensor::zeros(&[6, 2, 2]), 0.0);
    assert!(gradcam_saliency(&m, &[Tensor::zeros(&[6, 2, 2])]).is_err());
}

/// Step-by-step Grad-CAM: features from a forward pass, their gradient from
/// the closed form of the two dense layers, and a direct bilinear formula.
fn gradcam_reference(m: &Model, xs: &[Tensor]) -> Vec<f64> {
    let [_, h, w] = m.config().input_shape();
    let mut acc = vec![0.0; h * w];
    for x in xs {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let fwd = m.forward(&mut tape, input, false).unwrap();
        let a = tape.value(fwd.features).clone();
        let (fc, fh, fw) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let fcw = m.param("fc.weight").unwrap();
        let fcb = m.param("fc.bias").unwrap();
        let ow = m.param("out.weight").unwrap();
        let n = fcb.len();
        let flat = a.len();
        let mut da = vec![0.0; flat];
        for u in 0..n {
            let z: f64 = fcb.data()[u] + (0..flat).map(|k| fcw.data()[u * flat + k] * a.data()[k]).sum::<f64>();
            let back = ow.data()[u] * (1.0 - z.tanh().powi(2));
            for k in 0..flat {
                da[k] += back * fcw.data()[u * flat + k];
            }
        }
        let mut cam = vec![0.0; fh * fw];
        for c in 0..fc {
            let wc = da[c * fh * fw..(c + 1) * fh * fw].iter().sum::<f64>() / (fh * fw) as f64;
            for k in 0..fh * fw {
                cam[k] += wc * a.data()[c * fh * fw + k];
            }
        }
        for i in 0..h {
            let sy = ((i as f64 + 0.5) * fh as f64 / h as f64 - 0.5).max(0.0).min((fh - 1) as f64);
            for j in 0..w {
                let sx = ((j as f64 + 0.5) * fw as f64 / w as f64 - 0.5).max(0.0).min((fw - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(fh - 1), (x0 + 1).min(fw - 1));
                let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                let v = |y: usize, x: usize| cam[y * fw + x].abs();
                let val = v(y0, x0) * (1.0 - ty) * (1.0 - tx)
                    + v(y0, x1) * (1.0 - ty) * tx
                    + v(y1, x0) * ty * (1.0 - tx)
                    + v(y1, x1) * ty * tx;
                acc[i * w + j] += val / xs.len() as f64;
            }
        }
    }
    acc
}

#[test]
fn gradcam_matches_scripted_reference() {
    let m = small_model(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Tensor> = (0..10).map(|_| uniform(&m.input_shape(), &mut rng)).collect();
    let map = gradcam_saliency(&m, &xs).unwrap();
    let reference = gradcam_reference(&m, &xs);
    let plane = reference.len();
    for c in 0..6 {
        for (a, b) in map.raw.data()[c * plane..(c + 1) * plane].iter().zip(&reference) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

fn std_normal(x: &[f64]) -> f64 {
    x.iter().map(|v| (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt()).product()
}

#[test]
fn quadrature_examples() {
    let box2 = [(-5.0, 5.0); 2];
    let zero = pptv_quadrature_oracle(&|_: &[f64]| 3.0, &std_normal, &box2, 50).unwrap();
    assert_eq!(zero, vec![0.0, 0.0]);

    let lin = |x: &[f64]| 1.5 * x[0] - 0.25 * x[1] + 2.0 * x[2];
    let unit = |_: &[f64]| 1.0;
    let q = pptv_quadrature_oracle(&lin, &unit, &[(0.0, 1.0); 3], 20).unwrap();
    for (got, want) in q.iter().zip([1.5, 0.25, 2.0]) {
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    let q = pptv_quadrature_oracle(&|x: &[f64]| x[0] * x[0], &std_normal, &box2, 400).unwrap();
    let half_normal = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((q[0] - half_normal).abs() < 0.01, "{}", q[0]);
    assert!(q[1].abs() < 1e-12);
}

#[test]
fn monte_carlo_converges_to_quadrature() {
    let f = TapeFunction::new(&[2], quadratic);
    let oracle = pptv_quadrature_oracle(&|x: &[f64]| x[0] * x[0] + 0.5 * x[1] * x[1], &std_normal, &[(-6.0, 6.0); 2], 600)
        .unwrap();
    let rel = |m: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Tensor> = (0..m)
            .map(|_| {
                let (a, b) = normal_pair(&mut rng);
                Tensor::from_vec(vec![a, b])
            })
            .collect();
        let map = pptv(&f, &xs).unwrap();
        (0..2).map(|k| ((map.raw.data()[k] - oracle[k]) / oracle[k]).abs()).fold(0.0, f64::max)
    };
    let mean_err = |m: usize| (0..8).map(|s| rel(m, 100 + s)).sum::<f64>() / 8.0;
    let (e1, e2, e3) = (mean_err(100), mean_err(1_000), mean_err(10_000));
    assert!(e1 > e2 && e2 > e3, "{e1} {e2} {e3}");
    assert!(rel(100_000, 7) < 0.02);
}

#[test]
fn channel_aggregation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let plane: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
    let same = SaliencyMap::new(
        Tensor::new(&[6, 3, 4], plane.iter().cycle().take(72).copied().collect()).unwrap(),
        Method::Pptv,
        1,
    )
    .unwrap();
    let mean = &aggregate_channels(&same, ChannelMode::Mean).unwrap()[0];
    for (a, b) in mean.raw.data().iter().zip(&plane) {
        assert!((a - b).abs() < 1e-15);
    }

    let mut one = vec![0.0; 72];
    one[24..36].copy_from_slice(&plane);
    let one = SaliencyMap::new(Tensor::new(&[6, 3, 4], one).unwrap(), Method::Pptv, 1).unwrap();
    let mean = &aggregate_channels(&one, ChannelMode::Mean).unwrap()[0];
    let alone = normalize(&Tensor::new(&[3, 4], plane.clone()).unwrap()).unwrap();
    for (a, b) in mean.normalized.data().iter().zip(alone.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    for (a, b) in mean.raw.data().iter().zip(&plane) {
        assert!((a - b / 6.0).abs() < 1e-15);
    }

    let random = SaliencyMap::new(uniform(&[6, 3, 4], &mut rng).map(f64::abs), Method::Vbp, 2).unwrap();
    let mean = &aggregate_channels(&random, ChannelMode::Mean).unwrap()[0];
    for k in 0..12 {
        let external = (0..6).map(|c| random.raw.data()[c * 12 + k]).sum::<f64>() / 6.0;
        assert!((mean.raw.data()[k] - external).abs() <= 1e-15);
    }
    let per = aggregate_channels(&random, ChannelMode::PerChannel).unwrap();
    assert_eq!(per.len(), 6);
    for (c, m) in per.iter().enumerate() {
        assert_eq!(m.raw.data(), &random.raw.data()[c * 12..(c + 1) * 12]);
        assert_eq!(m.normalized.max(), 1.0);
    }
}

#[test]
fn reductions_match_direct_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = uniform(&[5, 7], &mut rng).map(|v| v.abs());
    let n = normalize(&m).unwrap();
    let mean: f64 = n.data().iter().sum::<f64>() / 35.0;
    assert!((attention_indicator(&n, Scope::default()).unwrap().value - mean).abs() <= 1e-15);
    let z = zonal_mean(&m).unwrap();
    let mer = meridional_mean(&m).unwrap();
    for i in 0..5 {
        let direct = (0..7).map(|j| m.at(&[i, j])).sum::<f64>() / 7.0;
        assert!((z[i] - direct).abs() <= 1e-15);
    }
    for j in 0..7 {
        let direct = (0..5).map(|i| m.at(&[i, j])).sum::<f64>() / 5.0;
        assert!((mer[j] - direct).abs() <= 1e-15);
    }
    let stacked = Tensor::new(&[2, 5, 7], n.data().iter().chain(n.data()).map(|v| v * 0.5).collect()).unwrap();
    let scoped = Scope {
        channel: Some(1),
        lead: Some(3),
        ..Scope::default()
    };
    let a = attention_indicator(&stacked, scoped).unwrap();
    assert!((a.value - mean * 0.5).abs() < 1e-15);
    assert_eq!(a.scope.lead, Some(3));
    assert!(matches!(
        attention_indicator(&stacked, Scope { channel: Some(2), ..Scope::default() }),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn csv_and_pgm_exports() {
    let grid = GridSpec {
        nlat: 3,
        nlon: 4,
        ..GridSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let map = SaliencyMap::new(uniform(&[6, 3, 4], &mut rng).map(|v| v.abs() / 3.0), Method::Pptv, 5).unwrap();
    let table = SaliencyTable::from_map(&map, &CHANNEL_NAMES).unwrap();
    let text = saliency_csv(&grid, &table).unwrap();
    assert_eq!(text.lines().count(), 1 + 72);
    assert!(text.starts_with("channel,lat,lon,raw,normalized\nsst_m3,-57.5,2.5,"));
    let (back_grid, back) = parse_saliency_csv(&text).unwrap();
    assert_eq!(back, table);
    assert_eq!(back_grid, grid);
    let mean = back.mean_map(Method::Pptv).unwrap();
    let direct = &aggregate_channels(&map, ChannelMode::Mean).unwrap()[0];
    for (a, b) in mean.raw.data().iter().zip(direct.raw.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(parse_saliency_csv("lat,lon\n").is_err());
    assert!(parse_saliency_csv(&text[..text.len() - 40]).is_err());

    let mean = &aggregate_channels(&map, ChannelMode::Mean).unwrap()[0];
    let pgm = write_pgm(&mean.normalized).unwrap();
    let header = b"P5\n4 3\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    let body = &pgm[header.len()..];
    assert_eq!(body.len(), 12);
    // first image row is the last (northernmost) latitude row
    for j in 0..4 {
        assert_eq!(body[j], (mean.normalized.at(&[2, j]) * 255.0).round() as u8);
        assert_eq!(body[8 + j], (mean.normalized.at(&[0, j]) * 255.0).round() as u8);
    }
    assert!(write_pgm(&map.normalized).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_is_idempotent_and_scale_invariant(
        values in prop::collection::vec(0.0f64..1e3, 1..40),
        scale in 1e-3f64..1e3,
    ) {
        let raw = Tensor::from_vec(values);
        let n = normalize(&raw).unwrap();
        prop_assert_eq!(normalize(&n).unwrap(), n.clone());
        let scaled = normalize(&raw.map(|v| v * scale)).unwrap();
        for (a, b) in scaled.data().iter().zip(n.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn threshold_is_monotone(values in prop::collection::vec(0.0f64..1.0, 12), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
        let n = normalize(&Tensor::new(&[3, 4], values).unwrap()).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = threshold_mask(&n, lo).unwrap();
        let b = threshold_mask(&n, hi).unwrap();
        prop_assert!(b.is_subset_of(&a));
    }

    #[test]
    fn pptv_is_non_negative(weights in prop::collection::vec(-5.0f64..5.0, 6), seed in 0u64..1000) {
        let w = Tensor::from_vec(weights);
        let f = TapeFunction::new(&[6], move |tape: &mut Tape, x: Var| {
            let c = tape.constant(w.clone());
            let t = tape.tanh(x);
            let p = tape.mul(t, c)?;
            let s = tape.sum(p);
            Ok(tape.square(s))
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Tensor> = (0..5).map(|_| uniform(&[6], &mut rng)).collect();
        let map = pptv(&f, &xs).unwrap();
        prop_assert!(map.raw.data().iter().all(|&v| v >= 0.0));
    }
}
