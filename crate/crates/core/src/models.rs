//! Deterministic generator factories.
//!
//! Seeded generators follow the DCGAN-style layouts used for the CelebA and
//! CIFAR10 models: a fully connected layer reshaped to a small square map,
//! then 5x5 stride-2 transposed convolutions that double the spatial size,
//! with batch normalization and ReLU between them. Weights are drawn from
//! N(0, 0.02^2); batch-norm statistics are fixed at mean 0 and variance 1.
//!
//! Planted generators have a known modular structure: every block owns a
//! private set of latents, a group of channels in the analysed layer and a
//! rectangular image region.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{CgmGraph, GraphBuilder, LatentSpec, NodeSpec, Op, PlantedBlock, Region, LATENT};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{Activation, ConvTransposeParams, Tensor};

const INIT_STD: f64 = 0.02;
const KERNEL: usize = 5;
const BN_EPS: f64 = 1e-5;
const CALIBRATION_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    VaeCeleba,
    GanCeleba,
    VaeCifar,
    GanCifar,
    ToyLinear,
}

impl Arch {
    pub const ALL: [Arch; 5] = [Arch::VaeCeleba, Arch::GanCeleba, Arch::VaeCifar, Arch::GanCifar, Arch::ToyLinear];

    pub fn key(self) -> &'static str {
        match self {
            Arch::VaeCeleba => "vae_celeba",
            Arch::GanCeleba => "gan_celeba",
            Arch::VaeCifar => "vae_cifar",
            Arch::GanCifar => "gan_cifar",
            Arch::ToyLinear => "toy_linear",
        }
    }

    /// Layer plan, `None` for the toy model.
    pub fn plan(self) -> Option<ArchPlan> {
        let (latent, channels, image_side, vae): (usize, &'static [usize], usize, bool) = match self {
            Arch::VaeCeleba => (128, &[64, 64, 32, 16, 3], 64, true),
            Arch::GanCeleba => (150, &[128, 64, 32, 16, 3], 64, false),
            Arch::VaeCifar => (128, &[64, 32, 16, 3], 32, true),
            Arch::GanCifar => (150, &[64, 32, 16, 3], 32, false),
            Arch::ToyLinear => return None,
        };
        Some(ArchPlan { latent, channels, image_side, vae })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::UnknownArch(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchPlan {
    pub latent: usize,
    /// Channels of the fully connected map, then of each transposed convolution.
    pub channels: &'static [usize],
    pub image_side: usize,
    pub vae: bool,
}

impl ArchPlan {
    pub fn deconv_layers(&self) -> usize {
        self.channels.len() - 1
    }

    /// Spatial side of every map, fully connected output first.
    pub fn sides(&self) -> Vec<usize> {
        let n = self.deconv_layers();
        (0..=n).map(|i| self.image_side >> (n - i)).collect()
    }
}

fn normal_tensor<T: Scalar>(shape: Vec<usize>, std: f64, rng: &mut rng::StreamRng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng::normal(rng, std)))
}

/// `y = (v1, v2, v1 + v2)` with `v = (z1, z2)`, `z ~ U[-1, 1]^2`. Layer `v`.
pub fn toy_linear<T: Scalar>() -> CgmGraph<T> {
    let f = T::from_f64_lossy;
    let eye = Tensor::identity(2);
    let mix = Tensor::new(vec![2, 3], [1.0, 0.0, 1.0, 0.0, 1.0, 1.0].map(f).to_vec()).expect("static shape");
    GraphBuilder::new(LatentSpec::uniform(2, -1.0, 1.0))
        .arch(Arch::ToyLinear.key())
        .weight("v.weight", eye)
        .weight("y.weight", mix)
        .node(NodeSpec::new("v", Op::Dense { out_shape: [2, 1, 1] }, &[LATENT]).param("weight", "v.weight"))
        .node(NodeSpec::new("y", Op::Dense { out_shape: [3, 1, 1] }, &["v"]).param("weight", "y.weight"))
        .layer("v", "v")
        .output("y")
        .build()
        .expect("toy model is valid")
}

fn batch_norm<T: Scalar>(b: GraphBuilder<T>, id: &str, parent: &str, c: usize) -> GraphBuilder<T> {
    let mut node = NodeSpec::new(id, Op::BatchNorm { eps: BN_EPS }, &[parent]);
    let mut b = b;
    for (role, v) in [("mean", 0.0), ("var", 1.0), ("gamma", 1.0), ("beta", 0.0)] {
        let name = format!("{id}.{role}");
        b = b.weight(&name, Tensor::full(vec![c], T::from_f64_lossy(v)));
        node = node.param(role, name);
    }
    b.node(node)
}

fn relu(id: &str, parent: &str) -> NodeSpec {
    NodeSpec::new(id, Op::Activation { function: Activation::Relu }, &[parent])
}

/// Builds one of the shipped architectures with seeded weights.
pub fn make_seeded_generator<T: Scalar>(arch: Arch, seed: u64) -> Result<CgmGraph<T>> {
    let Some(plan) = arch.plan() else {
        return Ok(toy_linear());
    };
    let sides = plan.sides();
    let ch = plan.channels;
    let mut rng = rng::stream(seed, arch.key(), 0);
    let latent = if plan.vae {
        LatentSpec::truncated_normal(plan.latent)
    } else {
        LatentSpec::uniform(plan.latent, -1.0, 1.0)
    };

    let fc_len = ch[0] * sides[0] * sides[0];
    let mut b = GraphBuilder::new(latent)
        .arch(arch.key())
        .weight("fc.weight", normal_tensor(vec![plan.latent, fc_len], INIT_STD, &mut rng))
        .weight("fc.bias", Tensor::zeros(vec![fc_len]))
        .node(
            NodeSpec::new("fc", Op::Dense { out_shape: [ch[0], sides[0], sides[0]] }, &[LATENT])
                .param("weight", "fc.weight")
                .param("bias", "fc.bias"),
        );
    b = batch_norm(b, "fc_bn", "fc", ch[0]).node(relu("fc_relu", "fc_bn")).layer("fc", "fc_relu");

    let n = plan.deconv_layers();
    let mut prev = "fc_relu".to_string();
    for i in 1..=n {
        let id = format!("deconv{i}");
        let wname = format!("{id}.weight");
        let kernel = normal_tensor(vec![ch[i - 1], ch[i], KERNEL, KERNEL], INIT_STD, &mut rng);
        let mut node = NodeSpec::new(&id, Op::ConvTranspose2d { params: ConvTransposeParams::doubling(KERNEL) }, &[&prev])
            .param("weight", &wname);
        b = b.weight(&wname, kernel);
        if i == n {
            let bname = format!("{id}.bias");
            b = b.weight(&bname, Tensor::zeros(vec![ch[i]]));
            node = node.param("bias", bname);
            let function = if plan.vae { Activation::Sigmoid } else { Activation::Tanh };
            b = b.node(node).node(NodeSpec::new("out", Op::Activation { function }, &[&id]));
        } else {
            let bn = format!("{id}_bn");
            let act = format!("{id}_relu");
            b = batch_norm(b.node(node), &bn, &id, ch[i]).node(relu(&act, &bn)).layer(&id, &act);
            prev = act;
        }
    }
    b.output("out").build()
}

/// One planted module: private latents, channels in the analysed layer and
/// the image region its output is confined to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub latent_dims: usize,
    pub channels: usize,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedConfig {
    pub blocks: Vec<BlockSpec>,
    pub image_size: usize,
    /// Number of stride-2 transposed convolutions after the dense layer.
    pub depth: usize,
}

impl PlantedConfig {
    /// Blocks given as `(latent_dims, channels)` over vertical image stripes.
    pub fn striped(blocks: &[(usize, usize)], image_size: usize) -> Self {
        let regions = stripe_regions(blocks.len(), image_size);
        Self {
            blocks: blocks
                .iter()
                .zip(regions)
                .map(|(&(latent_dims, channels), region)| BlockSpec { latent_dims, channels, region })
                .collect(),
            image_size,
            depth: 3,
        }
    }
}

/// Splits a square image into `n` vertical stripes of near-equal width.
pub fn stripe_regions(n: usize, size: usize) -> Vec<Region> {
    let mut out = Vec::with_capacity(n);
    let mut x0 = 0;
    for i in 0..n {
        let w = size / n + usize::from(i < size % n);
        out.push(Region { y0: 0, x0, h: size, w });
        x0 += w;
    }
    out
}

/// Name of the analysed layer in planted generators.
pub const PLANTED_LAYER: &str = "fc";

/// Block-structured generator whose blocks share no latent ancestors.
///
/// Layout: a dense layer maps each block's latents onto that block's channels
/// only (the `fc` layer, after ReLU), then `depth` block-diagonal transposed
/// convolutions produce three colour channels per block. Those are squashed
/// with `tanh`, masked to the block's region and summed into the image.
/// Each block's last kernel is rescaled so its pre-`tanh` output has unit
/// standard deviation, which keeps blocks at comparable strength.
/// Returns the graph and the planted block of every layer channel.
pub fn make_planted_generator<T: Scalar>(config: &PlantedConfig, seed: u64) -> Result<(CgmGraph<T>, Vec<usize>)> {
    let PlantedConfig { blocks, image_size: size, depth } = config;
    let (size, depth) = (*size, *depth);
    if blocks.is_empty() || blocks.iter().any(|b| b.latent_dims == 0 || b.channels == 0) {
        return Err(Error::Config("every planted block needs latents and channels".into()));
    }
    if depth == 0 || size % (1 << depth) != 0 || size >> depth == 0 {
        return Err(Error::Config(format!("image size {size} is not divisible by 2^{depth}")));
    }
    for (i, a) in blocks.iter().enumerate() {
        if a.region.y0 + a.region.h > size || a.region.x0 + a.region.w > size || a.region.h == 0 || a.region.w == 0 {
            return Err(Error::Config(format!("region of block {i} is empty or leaves the image")));
        }
        for (j, b) in blocks.iter().enumerate().skip(i + 1) {
            if a.region.overlaps(&b.region) {
                return Err(Error::Config(format!("regions of blocks {i} and {j} overlap")));
            }
        }
    }
    let covered: usize = blocks.iter().map(|b| b.region.h * b.region.w).sum();
    if covered != size * size {
        return Err(Error::Config("block regions do not tile the image".into()));
    }

    let mut rng = rng::stream(seed, "planted", 0);
    let k: usize = blocks.iter().map(|b| b.latent_dims).sum();
    let c: usize = blocks.iter().map(|b| b.channels).sum();
    let s0 = size >> depth;
    let plane0 = s0 * s0;

    let mut latent_start = Vec::new();
    let mut chan_start = Vec::new();
    let (mut zl, mut cl) = (0, 0);
    for blk in blocks {
        latent_start.push(zl);
        chan_start.push(cl);
        zl += blk.latent_dims;
        cl += blk.channels;
    }

    let mut fc = Tensor::zeros(vec![k, c * plane0]);
    for (bi, blk) in blocks.iter().enumerate() {
        let std = 1.0 / (blk.latent_dims as f64).sqrt();
        for zi in latent_start[bi]..latent_start[bi] + blk.latent_dims {
            for col in chan_start[bi] * plane0..(chan_start[bi] + blk.channels) * plane0 {
                fc.data_mut()[zi * c * plane0 + col] = T::from_f64_lossy(rng::normal(&mut rng, std));
            }
        }
    }
    let fc_bias = Tensor::from_fn(vec![c * plane0], |_| T::from_f64_lossy(rng::normal(&mut rng, 0.1)));

    // Per-block channel counts after each transposed convolution.
    let widths = |stage: usize, blk: &BlockSpec| if stage == depth { 3 } else { blk.channels };
    let mut kernels = Vec::with_capacity(depth);
    for stage in 1..=depth {
        let cin: usize = blocks.iter().map(|blk| widths(stage - 1, blk)).sum();
        let cout: usize = blocks.iter().map(|blk| widths(stage, blk)).sum();
        let mut kern = Tensor::zeros(vec![cin, cout, KERNEL, KERNEL]);
        let (mut i0, mut o0) = (0, 0);
        for blk in blocks {
            let (bi, bo) = (widths(stage - 1, blk), widths(stage, blk));
            let std = (2.0 / (bi as f64 * (KERNEL * KERNEL) as f64 / 4.0)).sqrt();
            for ci in i0..i0 + bi {
                for co in o0..o0 + bo {
                    let s = (ci * cout + co) * KERNEL * KERNEL;
                    for v in &mut kern.data_mut()[s..s + KERNEL * KERNEL] {
                        *v = T::from_f64_lossy(rng::normal(&mut rng, std));
                    }
                }
            }
            i0 += bi;
            o0 += bo;
        }
        kernels.push(kern);
    }

    let nb = blocks.len();
    let mut mask = Tensor::zeros(vec![3 * nb, size, size]);
    for (bi, blk) in blocks.iter().enumerate() {
        for j in 0..3 {
            let plane = &mut mask.data_mut()[(3 * bi + j) * size * size..(3 * bi + j + 1) * size * size];
            for y in 0..size {
                for x in 0..size {
                    if blk.region.contains(y, x) {
                        plane[y * size + x] = T::one();
                    }
                }
            }
        }
    }

    let mut truth = Vec::with_capacity(c);
    let mut planted = Vec::with_capacity(nb);
    for (bi, blk) in blocks.iter().enumerate() {
        truth.extend(std::iter::repeat_n(bi, blk.channels));
        planted.push(PlantedBlock {
            layer: PLANTED_LAYER.to_string(),
            latents: (latent_start[bi]..latent_start[bi] + blk.latent_dims).collect(),
            channels: (chan_start[bi]..chan_start[bi] + blk.channels).collect(),
            region: blk.region,
        });
    }

    let assemble = |kernels: &[Tensor<T>]| -> Result<CgmGraph<T>> {
        let mut b = GraphBuilder::new(LatentSpec::uniform(k, -1.0, 1.0))
            .arch("planted")
            .weight("fc.weight", fc.clone())
            .weight("fc.bias", fc_bias.clone())
            .node(
                NodeSpec::new("fc", Op::Dense { out_shape: [c, s0, s0] }, &[LATENT])
                    .param("weight", "fc.weight")
                    .param("bias", "fc.bias"),
            )
            .node(relu("fc_relu", "fc"))
            .layer(PLANTED_LAYER, "fc_relu");
        let mut prev = "fc_relu".to_string();
        for (i, kern) in kernels.iter().enumerate() {
            let stage = i + 1;
            let id = format!("deconv{stage}");
            let wname = format!("{id}.weight");
            b = b.weight(&wname, kern.clone()).node(
                NodeSpec::new(&id, Op::ConvTranspose2d { params: ConvTransposeParams::doubling(KERNEL) }, &[&prev])
                    .param("weight", &wname),
            );
            if stage < depth {
                let act = format!("{id}_relu");
                b = b.node(relu(&act, &id));
                prev = act;
            } else {
                b = b.node(NodeSpec::new("out_tanh", Op::Activation { function: Activation::Tanh }, &[&id]));
            }
        }
        b = b
            .weight("mask", mask.clone())
            .node(NodeSpec::new("masked", Op::Mask, &["out_tanh"]).param("mask", "mask"))
            .node(NodeSpec::new("y", Op::FoldChannels { channels: 3 }, &["masked"]));
        for blk in &planted {
            b = b.planted(blk.clone());
        }
        b.output("y").build()
    };

    // Calibrate: rescale each block's last kernel so its pre-tanh output has
    // unit standard deviation inside its region. Blocks then act on the image
    // at comparable strength whatever their random draw.
    let draft = assemble(&kernels)?;
    let last = draft.node_index(&format!("deconv{depth}"))?;
    let mut cal = rng::stream(seed, "planted-calibrate", 0);
    let mut sums = vec![(0.0f64, 0.0f64, 0usize); nb];
    for _ in 0..CALIBRATION_SAMPLES {
        let z: Vec<T> = draft.latent().sample(&mut cal);
        let t = draft.trace(&z)?;
        let v = t.node_value(last).data();
        for (bi, blk) in blocks.iter().enumerate() {
            for ch in 3 * bi..3 * bi + 3 {
                for y in 0..size {
                    for x in 0..size {
                        if blk.region.contains(y, x) {
                            let a = v[(ch * size + y) * size + x].to_f64_lossy();
                            let e = &mut sums[bi];
                            e.0 += a;
                            e.1 += a * a;
                            e.2 += 1;
                        }
                    }
                }
            }
        }
    }
    let last_kernel = kernels.last_mut().expect("depth >= 1");
    let cout = 3 * nb;
    let cin = last_kernel.shape()[0];
    for (bi, &(s1, s2, n)) in sums.iter().enumerate() {
        let mean = s1 / n as f64;
        let std = (s2 / n as f64 - mean * mean).max(0.0).sqrt();
        if std == 0.0 {
            return Err(Error::Config(format!("planted block {bi} has a constant output; try another seed")));
        }
        let scale = T::from_f64_lossy(1.0 / std);
        for ci in 0..cin {
            for co in 3 * bi..3 * bi + 3 {
                let s = (ci * cout + co) * KERNEL * KERNEL;
                for v in &mut last_kernel.data_mut()[s..s + KERNEL * KERNEL] {
                    *v = *v * scale;
                }
            }
        }
    }
    Ok((assemble(&kernels)?, truth))
}

/// Ground-truth block of every channel, read back from a planted graph.
pub fn planted_partition<T: Scalar>(g: &CgmGraph<T>) -> Option<Vec<usize>> {
    let blocks = g.planted_blocks();
    if blocks.is_empty() {
        return None;
    }
    let mut by_channel = BTreeMap::new();
    for (bi, blk) in blocks.iter().enumerate() {
        for &c in &blk.channels {
            by_channel.insert(c, bi);
        }
    }
    Some(by_channel.into_values().collect())
}

/// Latent vector taking block coordinates from `donor` for the listed blocks
/// and from `base` elsewhere.
pub fn mix_latents<T: Scalar>(g: &CgmGraph<T>, base: &[T], donor: &[T], blocks: &[usize]) -> Vec<T> {
    let mut z = base.to_vec();
    for &bi in blocks {
        for &k in &g.planted_blocks()[bi].latents {
            z[k] = donor[k];
        }
    }
    z
}
