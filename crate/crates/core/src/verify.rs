//! Finite-difference checks of every differentiable op, layer, block, loss
//! and a small end-to-end network, all in double precision.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_many, Tape, Var};
use crate::blocks::{dense_dilations, Decoder, DenseBlock, Gtmb, Ltmb, Mtrb};
use crate::dct::{dct_matrix, fold_passband};
use crate::error::{invalid, Result};
use crate::layers::{
    conv2d, fully_connected, global_avg_pool, pixel_shuffle, pixel_unshuffle, ConvParams, ConvSpec,
    FcParams, Padding,
};
use crate::loss::{asl_loss, combined_loss, l1_loss, multiscale_loss, sobel_loss, LossConfig};
use crate::net::{ArchConfig, ForwardOptions, Mbcnn};
use crate::params::{is_passband, Init, Initializer, ParamSource, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-6;
/// Magnitude of the linear tilt added to piecewise-linear functions.
pub const TILT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub error: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.error < TOLERANCE
    }
}

/// Uniform in `[-1, 1]`.
pub fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Magnitudes in `[0.1, 1]` with random sign, away from the kinks of
/// ReLU and absolute value.
fn random_off_zero(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ y ⊙ r` for a fixed random `r`, turning any output into a scalar whose
/// gradient touches every element.
fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = tape.constant(random(tape.shape(y), seed));
    let p = tape.mul(y, r)?;
    Ok(tape.sum(p))
}

fn check(
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<Check> {
    let error = grad_check_many(f, inputs, STEP)?;
    Ok(Check {
        name: name.to_owned(),
        error,
    })
}

/// Checks `f + Σ r_i ⊙ v_i` with `|r| ∈ [TILT/10, TILT]` and the sign of
/// each `r` matching the analytic gradient of `f`.
///
/// Losses built from absolute values of integer-weighted filters, and
/// networks with dead ReLU units, have exactly zero gradient at some
/// coordinates. There the relative error compares finite-difference
/// roundoff against zero. The tilt moves every coordinate to a slope of
/// at least `TILT/10` without moving any kink.
fn tilted_check(
    name: &str,
    inputs: &[Tensor<f64>],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<Check> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let tilts: Vec<Tensor<f64>> = inputs
        .iter()
        .zip(&vars)
        .enumerate()
        .map(|(i, (x, &v))| {
            let g = grads.get_or_zeros(v, x.shape());
            let mut r = random_off_zero(x.shape(), 0x7117 + i as u64);
            for (r, g) in r.data_mut().iter_mut().zip(g.data()) {
                *r = r.abs().copysign(*g) * TILT;
            }
            r
        })
        .collect();
    check(name, inputs, |tape, vars| {
        let mut total = f(tape, vars)?;
        for (&v, r) in vars.iter().zip(&tilts) {
            let r = tape.constant(r.clone());
            let p = tape.mul(v, r)?;
            let s = tape.sum(p);
            total = tape.add(total, s)?;
        }
        Ok(total)
    })
}

/// Hands out tape variables for named parameters in store order.
struct Replay<'a> {
    tape: &'a mut Tape<f64>,
    vars: BTreeMap<String, Var>,
}

impl ParamSource<f64> for Replay<'_> {
    fn param(&mut self, name: &str, shape: Shape, _init: Init) -> Result<Var> {
        let v = *self
            .vars
            .get(name)
            .ok_or_else(|| invalid!("no input for parameter {name}"))?;
        if self.tape.shape(v) != shape {
            return Err(invalid!(
                "parameter {name}: expected {shape:?}, got {:?}",
                self.tape.shape(v)
            ));
        }
        Ok(v)
    }

    fn constant(&mut self, value: Tensor<f64>) -> Var {
        self.tape.constant(value)
    }
}

/// Checks a parametrized component with respect to its input and every
/// parameter. Biases and zero-initialized kernels are randomized so that
/// every path carries signal and no unit sits at a ReLU kink by
/// construction; passbands stay positive.
pub fn component_check<B>(
    name: &str,
    tilt: bool,
    seed: u64,
    input: Tensor<f64>,
    build: impl Fn(&mut dyn ParamSource<f64>) -> Result<B>,
    forward: impl Fn(&B, &mut Tape<f64>, Var) -> Result<Var>,
) -> Result<Check> {
    let mut scratch = Tape::<f64>::new();
    let mut init = Initializer::new(&mut scratch, seed);
    build(&mut init)?;
    let store: ParamStore<f64> = init.into_store();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut inputs = vec![input];
    for (n, t) in store.iter() {
        let t = if is_passband(n) {
            Tensor::from_fn(t.shape(), |_, _, _, _| rng.gen_range(0.5..1.5))
        } else if n.ends_with("/bias") {
            Tensor::from_fn(t.shape(), |_, _, _, _| rng.gen_range(-0.1..0.1))
        } else if t.data().iter().all(|&v| v == 0.0) {
            Tensor::from_fn(t.shape(), |_, _, _, _| rng.gen_range(-0.3..0.3))
        } else {
            t.clone()
        };
        inputs.push(t);
    }
    let f = |tape: &mut Tape<f64>, vars: &[Var]| {
        let map = names
            .iter()
            .cloned()
            .zip(vars[1..].iter().copied())
            .collect();
        let block = build(&mut Replay { tape, vars: map })?;
        let y = forward(&block, tape, vars[0])?;
        weighted_sum(tape, y, seed + 1)
    };
    if tilt {
        tilted_check(name, &inputs, f)
    } else {
        check(name, &inputs, f)
    }
}

fn conv_check(
    name: &str,
    seed: u64,
    x: Shape,
    k: usize,
    cout: usize,
    spec: ConvSpec,
) -> Result<Check> {
    let cin = x[3];
    let inputs = [
        random(x, seed),
        random([k, k, cin, cout], seed + 1),
        random([1, 1, 1, cout], seed + 2),
    ];
    check(name, &inputs, |tape, v| {
        let p = ConvParams {
            kernel: v[1],
            bias: Some(v[2]),
            spec,
        };
        let y = conv2d(tape, v[0], &p)?;
        weighted_sum(tape, y, seed + 3)
    })
}

fn elementwise(checks: &mut Vec<Check>) -> Result<()> {
    let s = [2, 3, 3, 2];
    let (a, b) = (random(s, 1), random(s, 2));
    checks.push(check("add", &[a.clone(), b.clone()], |t, v| {
        let y = t.add(v[0], v[1])?;
        weighted_sum(t, y, 3)
    })?);
    checks.push(check("sub", &[a.clone(), b.clone()], |t, v| {
        let y = t.sub(v[0], v[1])?;
        weighted_sum(t, y, 4)
    })?);
    checks.push(check("mul", &[a.clone(), b.clone()], |t, v| {
        let y = t.mul(v[0], v[1])?;
        weighted_sum(t, y, 5)
    })?);
    checks.push(check(
        "mul/broadcast",
        &[a.clone(), random([2, 1, 1, 2], 6)],
        |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y, 7)
        },
    )?);
    checks.push(check(
        "scale",
        &[a.clone(), random([1, 1, 1, 1], 8)],
        |t, v| {
            let y = t.scale(v[0], v[1])?;
            weighted_sum(t, y, 9)
        },
    )?);
    checks.push(check("scale_const", std::slice::from_ref(&a), |t, v| {
        let y = t.scale_const(v[0], 0.3);
        weighted_sum(t, y, 10)
    })?);
    checks.push(check("relu", &[random_off_zero(s, 11)], |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 12)
    })?);
    checks.push(check(
        "concat_channels",
        &[a.clone(), random([2, 3, 3, 3], 13)],
        |t, v| {
            let y = t.concat_channels(&[v[0], v[1]])?;
            weighted_sum(t, y, 14)
        },
    )?);
    checks.push(check("mean", std::slice::from_ref(&a), |t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.mean(y))
    })?);
    checks.push(check("mean_abs", &[random_off_zero(s, 15)], |t, v| {
        Ok(t.mean_abs(v[0]))
    })?);
    Ok(())
}

fn layers(checks: &mut Vec<Check>) -> Result<()> {
    checks.push(conv_check(
        "conv2d/3x3",
        20,
        [2, 5, 5, 2],
        3,
        3,
        ConvSpec::default(),
    )?);
    checks.push(conv_check(
        "conv2d/1x1",
        21,
        [1, 4, 4, 3],
        1,
        2,
        ConvSpec::default(),
    )?);
    checks.push(conv_check(
        "conv2d/stride2",
        22,
        [1, 5, 6, 2],
        3,
        2,
        ConvSpec::strided(2),
    )?);
    checks.push(conv_check(
        "conv2d/dilation2",
        23,
        [1, 6, 6, 2],
        3,
        2,
        ConvSpec::dilated(2),
    )?);
    let valid = ConvSpec {
        padding: Padding::None,
        ..ConvSpec::default()
    };
    checks.push(conv_check("conv2d/valid", 24, [1, 6, 5, 2], 3, 2, valid)?);

    let inputs = [
        random([2, 1, 1, 4], 30),
        random([1, 1, 4, 3], 31),
        random([1, 1, 1, 3], 32),
    ];
    checks.push(check("fully_connected", &inputs, |t, v| {
        let y = fully_connected(
            t,
            v[0],
            &FcParams {
                weight: v[1],
                bias: v[2],
            },
        )?;
        weighted_sum(t, y, 33)
    })?);
    checks.push(check(
        "global_avg_pool",
        &[random([2, 3, 4, 3], 34)],
        |t, v| {
            let y = global_avg_pool(t, v[0]);
            weighted_sum(t, y, 35)
        },
    )?);
    checks.push(check(
        "pixel_shuffle",
        &[random([1, 2, 3, 8], 36)],
        |t, v| {
            let y = pixel_shuffle(t, v[0], 2)?;
            weighted_sum(t, y, 37)
        },
    )?);
    checks.push(check(
        "pixel_unshuffle",
        &[random([1, 4, 6, 2], 38)],
        |t, v| {
            let y = pixel_unshuffle(t, v[0], 2)?;
            weighted_sum(t, y, 39)
        },
    )?);

    let basis = dct_matrix(2)?;
    let theta = random([1, 1, 1, 4], 40).map(|v| v.abs() + 0.1);
    checks.push(check(
        "fold_passband",
        &[random([1, 4, 4, 4], 41), theta],
        |t, v| {
            let k = fold_passband(t, v[1], &basis)?;
            let y = conv2d(t, v[0], &k)?;
            weighted_sum(t, y, 42)
        },
    )?);
    Ok(())
}

fn blocks(checks: &mut Vec<Check>) -> Result<()> {
    let dil = dense_dilations(2);
    checks.push(component_check(
        "dense_block",
        false,
        50,
        random([1, 5, 5, 2], 51),
        |src| DenseBlock::new(src, "d", 2, 2, &dil),
        |b, t, x| b.forward(t, x),
    )?);
    let basis = dct_matrix(2)?;
    checks.push(component_check(
        "mtrb",
        false,
        52,
        random([1, 4, 4, 3], 53),
        |src| Mtrb::new(src, "m", 3, 2, &dil, &basis),
        |b, t, x| b.forward(t, x),
    )?);
    checks.push(component_check(
        "gtmb",
        false,
        54,
        random([2, 4, 5, 3], 55),
        |src| Gtmb::new(src, "g", 3, 2),
        |b, t, x| b.forward(t, x),
    )?);
    checks.push(component_check(
        "ltmb",
        false,
        56,
        random([1, 5, 4, 3], 57),
        |src| Ltmb::new(src, "l", 3, 2, &dil),
        |b, t, x| b.forward(t, x),
    )?);
    checks.push(component_check(
        "decoder",
        false,
        58,
        random([1, 3, 3, 2], 59),
        |src| Decoder::new(src, "dec", 2, 3),
        |b, t, x| b.forward(t, x),
    )?);
    Ok(())
}

fn losses(checks: &mut Vec<Check>) -> Result<()> {
    let s = [2, 5, 6, 3];
    let pair = [random(s, 60), random(s, 61)];
    checks.push(check("l1_loss", &pair, |t, v| l1_loss(t, v[0], v[1]))?);
    checks.push(tilted_check("sobel_loss", &pair, |t, v| {
        sobel_loss(t, v[0], v[1])
    })?);
    checks.push(tilted_check("asl_loss", &pair, |t, v| {
        asl_loss(t, v[0], v[1])
    })?);
    checks.push(check("combined_loss", &pair, |t, v| {
        combined_loss(t, v[0], v[1], &LossConfig::asl())
    })?);

    let gt = random([1, 4, 4, 3], 62);
    let outs = [
        random([1, 4, 4, 3], 63),
        random([1, 2, 2, 3], 64),
        random([1, 1, 1, 3], 65),
    ];
    checks.push(check("multiscale_loss/l1", &outs, |t, v| {
        multiscale_loss(t, [v[0], v[1], v[2]], &gt, &LossConfig::l1())
    })?);
    let gt = random([1, 12, 12, 3], 66);
    let outs = [
        random([1, 12, 12, 3], 67),
        random([1, 6, 6, 3], 68),
        random([1, 3, 3, 3], 69),
    ];
    checks.push(check("multiscale_loss/asl", &outs, |t, v| {
        multiscale_loss(t, [v[0], v[1], v[2]], &gt, &LossConfig::asl())
    })?);
    Ok(())
}

/// Whole network at minimal widths on a 16×16 image.
fn network(checks: &mut Vec<Check>) -> Result<()> {
    let config = ArchConfig::custom(3, 2, 2, 1, 1);
    let gt = random([1, 16, 16, 3], 71);
    checks.push(component_check(
        "network",
        true,
        70,
        random([1, 16, 16, 3], 72).map(|v| 0.5 + 0.5 * v),
        |src| Mbcnn::new(src, &config),
        |net, t, x| {
            let outs = net.forward(t, x, ForwardOptions::default())?;
            multiscale_loss(t, outs, &gt, &LossConfig::asl())
        },
    )?);
    Ok(())
}

/// Runs every check. The returned list covers all differentiable
/// operations, the layers built from them, each network block, the losses
/// and one small network.
pub fn gradient_suite() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    elementwise(&mut checks)?;
    layers(&mut checks)?;
    blocks(&mut checks)?;
    losses(&mut checks)?;
    network(&mut checks)?;
    Ok(checks)
}
