mod common;

use common::*;
use tempattn::attention::*;
use tempattn_autograd::{grad_check, sigmoid, Tape, Tensor, Var};

fn features(seed: u64, n: usize, d: usize) -> Tensor {
    random_tensor(&mut rng(seed), &[n, d])
}

fn scores(params: &AttentionParams, z: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let mut t = Tape::new();
    let v = params.bind(&mut t);
    let x = t.constant(z.clone());
    let a = attention_scores(&mut t, &v, x).unwrap();
    (t.value(a.alpha).data().to_vec(), t.value(a.lambda).data().to_vec())
}

fn seeded() -> AttentionParams {
    AttentionParams::init(0, &AttentionConfig::default()).unwrap()
}

#[test]
fn zero_network_gives_half_everywhere() {
    let params = AttentionParams::zeros(&AttentionConfig::default()).unwrap();
    for n in [1, 3, 16, 23] {
        let (alpha, lambda) = scores(&params, &features(n as u64, n, 128));
        assert!(alpha.iter().all(|&a| a == 0.0));
        assert!(lambda.iter().all(|&l| l == 0.5));
    }
}

#[test]
fn scores_are_sigmoids_in_open_interval() {
    for seed in 0..10 {
        let params = AttentionParams::init(seed, &AttentionConfig::default()).unwrap();
        let n = 4 + seed as usize * 3;
        let (alpha, lambda) = scores(&params, &features(seed + 100, n, 128));
        assert_eq!(lambda.len(), n);
        for (a, l) in alpha.iter().zip(&lambda) {
            assert!(*l > 0.0 && *l < 1.0);
            assert_eq!(*l, sigmoid(*a));
        }
    }
}

#[test]
fn constant_sequence_has_constant_interior() {
    let row = features(5, 1, 128);
    let n = 48;
    let z = Tensor::from_fn(&[n, 128], |i| row.data()[i % 128]);
    let (alpha, _) = scores(&seeded(), &z);
    // Zero padding in the two convolutions reaches 16 frames in from each end.
    let interior = &alpha[16..n - 16];
    for a in interior {
        assert!((a - interior[0]).abs() < 1e-9, "{a} vs {}", interior[0]);
    }
}

/// Features of length `n`: constant rows with a random burst starting at
/// `at`.
fn burst(n: usize, at: usize) -> Tensor {
    let base = features(6, 1, 128);
    let noise = features(7, 6, 128);
    Tensor::from_fn(&[n, 128], |i| {
        let (t, j) = (i / 128, i % 128);
        if (at..at + 6).contains(&t) {
            noise.data()[(t - at) * 128 + j]
        } else {
            base.data()[j]
        }
    })
}

#[test]
fn interior_shift_equivariance_at_pooling_stride() {
    let params = seeded();
    let n = 96;
    let (alpha, _) = scores(&params, &burst(n, 44));
    for s in [-4isize, 4] {
        let (shifted, _) = scores(&params, &burst(n, (44 + s) as usize));
        for i in 20..76 {
            let j = (i as isize + s) as usize;
            assert!((shifted[j] - alpha[i]).abs() < 1e-9, "s={s} i={i}");
        }
    }
}

#[test]
fn pool_cases_and_loop_oracle() {
    let z = features(8, 5, 6);
    let mut t = Tape::new();
    let zv = t.constant(z.clone());

    let onehot = t.constant(Tensor::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]));
    let g = attention_pool(&mut t, zv, onehot).unwrap();
    assert_eq!(t.value(g).data(), &z.data()[12..18]);

    let two = t.constant(features(9, 2, 6));
    let half = t.constant(Tensor::full(&[2], 0.5));
    let g = attention_pool(&mut t, two, half).unwrap();
    let zz = t.value(two).data().to_vec();
    let want: Vec<f64> = (0..6).map(|j| 0.5 * (zz[j] + zz[6 + j])).collect();
    assert!(max_abs_diff(t.value(g).data(), &want) < 1e-15);

    for seed in 0..10 {
        let n = 1 + seed as usize * 2;
        let z = features(seed, n, 128);
        let lambda: Vec<f64> = features(seed + 50, 1, n).data().iter().map(|v| 0.5 * (v + 1.0)).collect();
        let mut t = Tape::new();
        let zv = t.constant(z.clone());
        let lv = t.constant(Tensor::from_vec(lambda.clone()));
        let g = attention_pool(&mut t, zv, lv).unwrap();
        assert!(max_abs_diff(t.value(g).data(), &weighted_sum_direct(z.data(), &lambda, 128)) < 1e-12);
        let m = mean_pool(&mut t, zv).unwrap();
        assert!(max_abs_diff(t.value(m).data(), &mean_rows_direct(z.data(), n, 128)) < 1e-12);

        // Positive homogeneity with exactly representable factors.
        for c in [0.5, 2.0] {
            let scaled = t.constant(Tensor::from_vec(lambda.iter().map(|l| l * c).collect()));
            let gc = attention_pool(&mut t, zv, scaled).unwrap();
            let want: Vec<f64> = t.value(g).data().iter().map(|v| v * c).collect();
            assert_eq!(t.value(gc).data(), &want[..]);
        }
    }
}

#[test]
fn mean_pool_cases() {
    let mut t = Tape::new();
    let one = features(1, 1, 7);
    let v = t.constant(one.clone());
    let m = mean_pool(&mut t, v).unwrap();
    assert_eq!(t.value(m).data(), one.data());
    let opposite = Tensor::from_fn(&[2, 7], |i| if i < 7 { one.data()[i] } else { -one.data()[i - 7] });
    let v = t.constant(opposite);
    let m = mean_pool(&mut t, v).unwrap();
    assert!(t.value(m).data().iter().all(|&x| x == 0.0));
}

#[test]
fn descriptor_is_unit_and_single_frame_reduces_to_feature() {
    let params = seeded();
    for n in [1, 2, 5, 16] {
        let z = features(n as u64 + 20, n, 128);
        let mut t = Tape::new();
        let v = params.bind(&mut t);
        let zv = t.constant(z.clone());
        let enc = descriptor_from_features(&mut t, &v, zv).unwrap();
        let f = t.value(enc.descriptor).data().to_vec();
        let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        if n == 1 {
            let zn = z.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            let want: Vec<f64> = z.data().iter().map(|x| x / zn).collect();
            assert!(max_abs_diff(&f, &want) < 1e-12);
        }
    }
}

#[test]
fn zero_attention_descriptor_ignores_feature_scale() {
    let params = AttentionParams::zeros(&AttentionConfig::default()).unwrap();
    let describe = |z: &Tensor| {
        let mut t = Tape::new();
        let v = params.bind(&mut t);
        let zv = t.constant(z.clone());
        let enc = descriptor_from_features(&mut t, &v, zv).unwrap();
        t.value(enc.descriptor).data().to_vec()
    };
    let probes: Vec<Tensor> = (0..4).map(|s| features(30 + s, 6, 128)).collect();
    let gallery: Vec<Vec<f64>> = (0..4).map(|s| describe(&features(40 + s, 6, 128))).collect();
    let nearest = |f: &[f64]| {
        (0..gallery.len())
            .min_by(|&a, &b| {
                let d = |g: &[f64]| g.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                d(&gallery[a]).total_cmp(&d(&gallery[b]))
            })
            .unwrap()
    };
    for p in &probes {
        let base = describe(p);
        for c in [0.3, 7.0] {
            let scaled = Tensor::from_fn(p.shape(), |i| c * p.data()[i]);
            let f = describe(&scaled);
            assert!(max_abs_diff(&f, &base) < 1e-12);
            assert_eq!(nearest(&f), nearest(&base));
        }
    }
}

#[test]
fn descriptor_distance_gradient_wrt_first_attention_kernel() {
    let cfg = AttentionConfig {
        feature_dim: 8,
        hidden: (4, 3),
        ..AttentionConfig::default()
    };
    let params = AttentionParams::init(3, &cfg).unwrap();
    let (z1, z2) = (features(60, 8, 8), features(61, 8, 8));
    let err = grad_check(
        |t: &mut Tape, kernel: Var| {
            let mut v = params.bind(t);
            v.conv1.0 = kernel;
            let a = t.constant(z1.clone());
            let b = t.constant(z2.clone());
            let f1 = descriptor_from_features(t, &v, a).map_err(to_ag)?.descriptor;
            let f2 = descriptor_from_features(t, &v, b).map_err(to_ag)?.descriptor;
            t.euclidean_distance(f1, f2)
        },
        &params.conv1_kernel,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

fn to_ag(e: tempattn::ReidError) -> tempattn_autograd::AutogradError {
    tempattn_autograd::AutogradError::Invalid(e.to_string())
}
