//! Network building blocks: dense block, moire texture removal block (MTRB),
//! global and local tone mapping blocks (GTMB, LTMB) and the ×2 decoder.
//!
//! Every block is constructed through a [`ParamSource`] under a name prefix
//! and then applied to tape variables.

use crate::autodiff::{Tape, Var};
use crate::dct::{fold_passband, DctBasis};
use crate::error::{invalid, Result};
use crate::layers::{
    conv2d, fully_connected, global_avg_pool, pixel_shuffle, ConvParams, ConvSpec, FcParams,
};
use crate::params::{Init, ParamSource};
use crate::tensor::Scalar;

/// Symmetric dilation schedule `ρ_j = min(j, K+1−j)`: `(1,2,3,2,1)` for
/// `K = 5`, `(1,2,1)` for `K = 3`.
pub fn dense_dilations(k: usize) -> Vec<usize> {
    (1..=k).map(|j| j.min(k + 1 - j)).collect()
}

/// Receptive field of a chain of 3×3 convolutions with the given dilations.
pub fn receptive_field(dilations: &[usize]) -> usize {
    1 + 2 * dilations.iter().sum::<usize>()
}

fn check_width<T: Scalar>(tape: &Tape<T>, x: Var, width: usize, block: &str) -> Result<()> {
    let c = tape.shape(x)[3];
    if c != width {
        return Err(invalid!(
            "{block}: input has {c} channels, block width is {width}"
        ));
    }
    Ok(())
}

/// `K` densely connected 3×3 dilated ConvReLU layers of `n_D` channels each.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub layers: Vec<ConvParams>,
    pub width: usize,
    pub growth: usize,
}

impl DenseBlock {
    /// Layers are named `{name}/conv{j}`, `j` from 1.
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        width: usize,
        growth: usize,
        dilations: &[usize],
    ) -> Result<Self> {
        let layers = dilations
            .iter()
            .enumerate()
            .map(|(j, &d)| {
                ConvParams::new(
                    src,
                    &format!("{name}/conv{}", j + 1),
                    3,
                    width + j * growth,
                    growth,
                    ConvSpec::dilated(d),
                )
            })
            .collect::<Result<_>>()?;
        Ok(DenseBlock {
            layers,
            width,
            growth,
        })
    }

    pub fn out_width(&self) -> usize {
        self.width + self.layers.len() * self.growth
    }

    /// The output starts with the input channels verbatim.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        check_width(tape, x, self.width, "dense block")?;
        let mut f = x;
        for layer in &self.layers {
            let y = layer.forward_relu(tape, f)?;
            f = tape.concat_channels(&[f, y])?;
        }
        Ok(f)
    }
}

/// Moire texture removal block: `x + s · C_M2(IDCT(θ ⊙ C_M1(dense(x))))`.
#[derive(Debug, Clone)]
pub struct Mtrb {
    pub dense: DenseBlock,
    pub c_m1: ConvParams,
    pub theta: Var,
    pub basis: DctBasis,
    pub c_m2: ConvParams,
    pub fsl_scale: Var,
}

impl Mtrb {
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        width: usize,
        growth: usize,
        dilations: &[usize],
        basis: &DctBasis,
    ) -> Result<Self> {
        let n = basis.frequencies();
        let dense = DenseBlock::new(src, &format!("{name}/dense"), width, growth, dilations)?;
        let c_m1 = ConvParams::new(
            src,
            &format!("{name}/c_m1"),
            3,
            dense.out_width(),
            n,
            ConvSpec::default(),
        )?;
        let theta = src.param(&format!("{name}/theta"), [1, 1, 1, n], Init::Constant(1.0))?;
        let c_m2 = ConvParams::new(
            src,
            &format!("{name}/c_m2"),
            3,
            n,
            width,
            ConvSpec::default(),
        )?;
        let fsl_scale = src.param(
            &format!("{name}/fsl_scale"),
            [1, 1, 1, 1],
            Init::Constant(0.1),
        )?;
        Ok(Mtrb {
            dense,
            c_m1,
            theta,
            basis: basis.clone(),
            c_m2,
            fsl_scale,
        })
    }

    /// The implicit frequency spectrum `ξ`, `p²` channels per pixel.
    pub fn spectrum<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let deep = self.dense.forward(tape, x)?;
        conv2d(tape, deep, &self.c_m1)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let xi = self.spectrum(tape, x)?;
        let idct = fold_passband(tape, self.theta, &self.basis)?;
        let texture = conv2d(tape, xi, &idct)?;
        let y = conv2d(tape, texture, &self.c_m2)?;
        let y = tape.scale(y, self.fsl_scale)?;
        tape.add(x, y)
    }
}

/// Initial bias of the layer producing `γ`, so that a fresh block starts
/// close to unit channel weights.
pub const GAMMA_BIAS: f64 = 1.0;

/// Global tone mapping block: `CR_G3(γ ⊙ CR_G2(x))` with
/// `γ = FC(FR2(FR1(GAP(CR_G1(x)))))`.
#[derive(Debug, Clone, Copy)]
pub struct Gtmb {
    pub cr_g1: ConvParams,
    pub fr1: FcParams,
    pub fr2: FcParams,
    pub fc: FcParams,
    pub cr_g2: ConvParams,
    pub cr_g3: ConvParams,
}

impl Gtmb {
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        width: usize,
        n_g: usize,
    ) -> Result<Self> {
        Ok(Gtmb {
            cr_g1: ConvParams::new(
                src,
                &format!("{name}/cr_g1"),
                3,
                width,
                2 * n_g,
                ConvSpec::strided(2),
            )?,
            fr1: FcParams::new(src, &format!("{name}/fr1"), 2 * n_g, 8 * n_g)?,
            fr2: FcParams::new(src, &format!("{name}/fr2"), 8 * n_g, 4 * n_g)?,
            fc: FcParams::with_bias(src, &format!("{name}/fc"), 4 * n_g, 2 * n_g, GAMMA_BIAS)?,
            cr_g2: ConvParams::new(
                src,
                &format!("{name}/cr_g2"),
                1,
                width,
                2 * n_g,
                ConvSpec::default(),
            )?,
            cr_g3: ConvParams::new(
                src,
                &format!("{name}/cr_g3"),
                1,
                2 * n_g,
                n_g,
                ConvSpec::default(),
            )?,
        })
    }

    /// Per-image channel weights `γ`, shape `(b, 1, 1, 2n_G)`. Unbounded.
    pub fn gamma<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = self.cr_g1.forward_relu(tape, x)?;
        let g = global_avg_pool(tape, g);
        let g = fully_connected(tape, g, &self.fr1)?;
        let g = tape.relu(g);
        let g = fully_connected(tape, g, &self.fr2)?;
        let g = tape.relu(g);
        fully_connected(tape, g, &self.fc)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let gamma = self.gamma(tape, x)?;
        let local = self.cr_g2.forward_relu(tape, x)?;
        let y = tape.mul(local, gamma)?;
        self.cr_g3.forward_relu(tape, y)
    }
}

/// Local tone mapping block: a dense block followed by a 1×1 ConvReLU back
/// to the input width.
#[derive(Debug, Clone)]
pub struct Ltmb {
    pub dense: DenseBlock,
    pub cr_l: ConvParams,
}

impl Ltmb {
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        width: usize,
        growth: usize,
        dilations: &[usize],
    ) -> Result<Self> {
        let dense = DenseBlock::new(src, &format!("{name}/dense"), width, growth, dilations)?;
        let cr_l = ConvParams::new(
            src,
            &format!("{name}/cr_l"),
            1,
            dense.out_width(),
            width,
            ConvSpec::default(),
        )?;
        Ok(Ltmb { dense, cr_l })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let deep = self.dense.forward(tape, x)?;
        self.cr_l.forward_relu(tape, deep)
    }
}

/// Initial decoder bias, the middle of the `[0, 1]` intensity range.
pub const DECODER_BIAS: f64 = 0.5;

/// 3×3 convolution to `4c` channels followed by a ×2 pixel shuffle.
/// The output is not clamped. The bias starts at mid-gray.
#[derive(Debug, Clone, Copy)]
pub struct Decoder {
    pub conv: ConvParams,
}

impl Decoder {
    pub fn new<T: Scalar>(
        src: &mut (impl ParamSource<T> + ?Sized),
        name: &str,
        width: usize,
        channels: usize,
    ) -> Result<Self> {
        Ok(Decoder {
            conv: ConvParams::with_init(
                src,
                &format!("{name}/conv"),
                [3, 3, width, 4 * channels],
                ConvSpec::default(),
                Init::Constant(0.0),
                Init::Constant(DECODER_BIAS),
            )?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = conv2d(tape, x, &self.conv)?;
        pixel_shuffle(tape, y, 2)
    }
}
