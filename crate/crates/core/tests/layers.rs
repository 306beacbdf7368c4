use mbcnn::autodiff::{grad_check_many, Tape, Var};
use mbcnn::layers::{
    conv2d, global_avg_pool, pixel_shuffle, pixel_unshuffle, ConvParams, ConvSpec, Padding,
};
use mbcnn::{Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Direct cross-correlation, one output element at a time.
fn naive_conv(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], spec: ConvSpec) -> Tensor<f64> {
    let [n, h, w, cin] = x.shape();
    let [kh, kw, _, cout] = k.shape();
    let (sy, sx) = spec.stride;
    let (dy, dx) = spec.dilation;
    let (eh, ew) = ((kh - 1) * dy + 1, (kw - 1) * dx + 1);
    let (py, px, oh, ow) = match spec.padding {
        Padding::SameZero => ((eh - 1) / 2, (ew - 1) / 2, h.div_ceil(sy), w.div_ceil(sx)),
        Padding::None => (0, 0, (h - eh) / sy + 1, (w - ew) / sx + 1),
    };
    Tensor::from_fn([n, oh, ow, cout], |b, oy, ox, co| {
        let mut acc = bias[co];
        for ky in 0..kh {
            for kx in 0..kw {
                let iy = (oy * sy + ky * dy) as isize - py as isize;
                let ix = (ox * sx + kx * dx) as isize - px as isize;
                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                    continue;
                }
                for ci in 0..cin {
                    acc += x.get(b, iy as usize, ix as usize, ci) * k.get(ky, kx, ci, co);
                }
            }
        }
        acc
    })
}

fn run_conv(x: &Tensor<f64>, k: &Tensor<f64>, bias: &[f64], spec: ConvSpec) -> Result<Tensor<f64>> {
    let mut t = Tape::new();
    let xv = t.param(x.clone());
    let kv = t.param(k.clone());
    let bv = t.param(Tensor::vector(bias));
    let y = conv2d(
        &mut t,
        xv,
        &ConvParams {
            kernel: kv,
            bias: Some(bv),
            spec,
        },
    )?;
    Ok(t.value(y).clone())
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output element matters.
fn weighted_sum(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = t.constant(random(t.shape(y), seed));
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

#[test]
fn dilated_conv_matches_naive_oracle() {
    let x = random([1, 5, 5, 2], 1);
    let k = random([3, 3, 2, 3], 2);
    let bias = [0.1, -0.2, 0.3];
    let spec = ConvSpec::dilated(2);
    let got = run_conv(&x, &k, &bias, spec).unwrap();
    let want = naive_conv(&x, &k, &bias, spec);
    assert_eq!(got.shape(), want.shape());
    assert!(
        got.max_abs_diff(&want) < 1e-6 * want.data().iter().fold(1.0f64, |m, v| m.max(v.abs()))
    );
}

#[test]
fn conv_gradients_pass_grad_check() {
    for (i, spec) in [
        ConvSpec::default(),
        ConvSpec::strided(2),
        ConvSpec::dilated(2),
        ConvSpec {
            padding: Padding::None,
            ..ConvSpec::default()
        },
    ]
    .into_iter()
    .enumerate()
    {
        let seed = 10 * i as u64;
        let inputs = [
            random([2, 5, 4, 2], seed),
            random([3, 3, 2, 3], seed + 1),
            random([1, 1, 1, 3], seed + 2),
        ];
        let err = grad_check_many(
            |t, v| {
                let y = conv2d(
                    t,
                    v[0],
                    &ConvParams {
                        kernel: v[1],
                        bias: Some(v[2]),
                        spec,
                    },
                )?;
                weighted_sum(t, y, seed + 3)
            },
            &inputs,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "spec {spec:?}: {err}");
    }
}

#[test]
fn sum_of_conv_grad_check() {
    let inputs = [random([1, 4, 4, 1], 5), random([3, 3, 1, 2], 6)];
    let err = grad_check_many(
        |t, v| {
            let y = conv2d(
                t,
                v[0],
                &ConvParams {
                    kernel: v[1],
                    bias: None,
                    spec: ConvSpec::default(),
                },
            )?;
            Ok(t.sum(y))
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gap_backward_matches_finite_differences() {
    let err = grad_check_many(
        |t, v| {
            let g = global_avg_pool(t, v[0]);
            let g2 = t.mul(g, g)?;
            Ok(t.sum(g2))
        },
        &[random([2, 3, 4, 3], 9)],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn shuffle_gradients_pass_grad_check() {
    let err = grad_check_many(
        |t, v| {
            let s = pixel_shuffle(t, v[0], 2)?;
            let u = pixel_unshuffle(t, s, 2)?;
            let s2 = pixel_shuffle(t, u, 2)?;
            weighted_sum(t, s2, 3)
        },
        &[random([1, 2, 3, 8], 4)],
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn conv_equals_naive_loops(
        n in 1usize..=2, h in 1usize..=6, w in 1usize..=6, cin in 1usize..=3, cout in 1usize..=3,
        kh in prop::sample::select(vec![1usize, 3, 5]), kw in prop::sample::select(vec![1usize, 3, 5]),
        sy in 1usize..=2, sx in 1usize..=2, dy in 1usize..=3, dx in 1usize..=3,
        valid in any::<bool>(), seed in any::<u64>(),
    ) {
        let spec = ConvSpec {
            stride: (sy, sx),
            dilation: (dy, dx),
            padding: if valid { Padding::None } else { Padding::SameZero },
        };
        let fits = (kh - 1) * dy < h && (kw - 1) * dx < w;
        prop_assume!(!valid || fits);
        let x = random([n, h, w, cin], seed);
        let k = random([kh, kw, cin, cout], seed ^ 1);
        let bias: Vec<f64> = random([1, 1, 1, cout], seed ^ 2).into_data();
        let got = run_conv(&x, &k, &bias, spec).unwrap();
        let want = naive_conv(&x, &k, &bias, spec);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn same_padding_stride_one_preserves_shape(
        h in 1usize..=9, w in 1usize..=9, k in prop::sample::select(vec![1usize, 3, 5, 7]), d in 1usize..=3,
    ) {
        let x = Tensor::<f64>::ones([1, h, w, 2]);
        let kern = Tensor::<f64>::ones([k, k, 2, 1]);
        let y = run_conv(&x, &kern, &[0.0], ConvSpec::dilated(d)).unwrap();
        prop_assert_eq!(y.shape(), [1, h, w, 1]);
    }

    #[test]
    fn shuffle_pair_is_a_bijection(h in 1usize..=4, w in 1usize..=4, c in 1usize..=3, r in 1usize..=3, seed in any::<u64>()) {
        let x = random([1, h * r, w * r, c], seed);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x.clone());
        let u = pixel_unshuffle(&mut t, v, r).unwrap();
        prop_assert_eq!(t.shape(u), [1, h, w, c * r * r]);
        let s = pixel_shuffle(&mut t, u, r).unwrap();
        prop_assert_eq!(t.value(s), &x);
    }
}
