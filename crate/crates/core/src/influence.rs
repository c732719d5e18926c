//! Monte-Carlo influence maps.
//!
//! The influence map of a module is the pixelwise mean absolute difference
//! between the hybrid output (module values transplanted from a second,
//! independent sample) and the unintervened output. Pairs `(z1, z2)` are
//! drawn sequentially from one seeded stream, processed in fixed-size chunks
//! in parallel, and the chunk sums are added in chunk order, so results
//! depend on the seed only, not on the number of worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Assignments, CgmGraph, LayerSel};
use crate::interventions::ModuleSel;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_PAIRS: usize = 256;
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMap<T> {
    /// Mean absolute effect per output channel, `[C, H, W]`.
    pub per_channel: Tensor<T>,
    /// Channel mean of `per_channel`, `[H, W]`.
    pub gray: Tensor<T>,
    pub n_pairs: usize,
    pub seed: u64,
    pub workers: usize,
}

/// One gray influence map per channel of a layer, rows in channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct EimStack<T> {
    pub layer: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub n_pairs: usize,
    /// Row-major `[channels, height * width]`.
    pub data: Vec<T>,
}

impl<T: Scalar> EimStack<T> {
    pub fn new(layer: &str, channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{height}x{width} stack",
                data.len()
            )));
        }
        Ok(Self { layer: layer.to_string(), channels, height, width, seed: 0, n_pairs: 0, data })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.pixels()..(i + 1) * self.pixels()]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.pixels())
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let data = rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self { channels: rows.len(), data, layer: self.layer.clone(), ..*self }
    }

    pub fn cast<U: Scalar>(&self) -> EimStack<U> {
        EimStack {
            layer: self.layer.clone(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            seed: self.seed,
            n_pairs: self.n_pairs,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

fn draw_pairs<T: Scalar>(g: &CgmGraph<T>, n_pairs: usize, seed: u64) -> Vec<(Vec<T>, Vec<T>)> {
    let mut r = rng::stream(seed, "influence-pairs", 0);
    (0..n_pairs)
        .map(|_| {
            let z1 = g.latent().sample(&mut r);
            let z2 = g.latent().sample(&mut r);
            (z1, z2)
        })
        .collect()
}

/// Runs `per_pair` over chunks of pairs in parallel, accumulating into
/// `width`-long sums, and combines chunk results in order.
fn accumulate<T: Scalar>(
    pairs: &[(Vec<T>, Vec<T>)],
    width: usize,
    per_pair: impl Fn(&[T], &[T], &mut [T]) -> Result<()> + Sync,
) -> Result<Vec<T>> {
    let partials: Vec<Result<Vec<T>>> = pairs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![T::zero(); width];
            for (z1, z2) in chunk {
                per_pair(z1, z2, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![T::zero(); width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t = *t + v;
        }
    }
    Ok(total)
}

fn add_abs_diff<T: Scalar>(acc: &mut [T], a: &[T], b: &[T]) {
    for ((s, &x), &y) in acc.iter_mut().zip(a).zip(b) {
        *s = *s + (x - y).abs();
    }
}

fn finish<T: Scalar>(sums: Vec<T>, shape: [usize; 3], n_pairs: usize) -> (Tensor<T>, Tensor<T>) {
    let [c, h, w] = shape;
    let n = T::from_usize(n_pairs).expect("pair count fits the scalar");
    let per_channel = Tensor::new(vec![c, h, w], sums.into_iter().map(|s| s / n).collect())
        .expect("accumulator has the output shape");
    let cf = T::from_usize(c).expect("channel count fits the scalar");
    let gray = Tensor::from_fn(vec![h, w], |p| {
        let mut acc = T::zero();
        for ch in 0..c {
            acc = acc + per_channel.data()[ch * h * w + p];
        }
        acc / cf
    });
    (per_channel, gray)
}

/// Influence map of `module` from `n_pairs` i.i.d. latent pairs.
pub fn influence_map<T: Scalar>(g: &CgmGraph<T>, module: &ModuleSel, n_pairs: usize, seed: u64) -> Result<InfluenceMap<T>> {
    if n_pairs == 0 {
        return Err(Error::Validation("n_pairs must be at least 1".into()));
    }
    let vars = module.vars();
    g.check_vars(&vars)?;
    let shape = g.output_shape();
    let width: usize = shape.iter().product();
    let pairs = draw_pairs(g, n_pairs, seed);
    let sums = if vars.is_empty() {
        vec![T::zero(); width]
    } else {
        accumulate(&pairs, width, |z1, z2, acc| {
            let t1 = g.trace(z1)?;
            let t2 = g.trace(z2)?;
            let mut a = Assignments::new();
            for &v in &vars {
                a.set(v, t2.variable(v));
            }
            let hybrid = g.evaluate_from_trace(&t1, &a)?;
            add_abs_diff(acc, hybrid.data(), t1.node_value(g.output_node()).data());
            Ok(())
        })?
    };
    let (per_channel, gray) = finish(sums, shape, n_pairs);
    Ok(InfluenceMap { per_channel, gray, n_pairs, seed, workers: rayon::current_num_threads() })
}

/// Elementary influence maps: one single-channel module per layer variable.
///
/// Row `c` is identical to `influence_map` of `{c}` with the same seed.
pub fn elementary_influence_maps<T: Scalar>(g: &CgmGraph<T>, layer: &LayerSel, n_pairs: usize, seed: u64) -> Result<EimStack<T>> {
    if n_pairs == 0 {
        return Err(Error::Validation("n_pairs must be at least 1".into()));
    }
    g.check_vars(&layer.variables)?;
    let shape = g.output_shape();
    let out_len: usize = shape.iter().product();
    let nvars = layer.variables.len();
    let pairs = draw_pairs(g, n_pairs, seed);
    let sums = accumulate(&pairs, nvars * out_len, |z1, z2, acc| {
        let t1 = g.trace(z1)?;
        let t2 = g.trace(z2)?;
        let y1 = t1.node_value(g.output_node()).data();
        for (i, &v) in layer.variables.iter().enumerate() {
            let mut a = Assignments::new();
            a.set(v, t2.variable(v));
            let hybrid = g.evaluate_from_trace(&t1, &a)?;
            add_abs_diff(&mut acc[i * out_len..(i + 1) * out_len], hybrid.data(), y1);
        }
        Ok(())
    })?;
    let [_, h, w] = shape;
    let mut data = Vec::with_capacity(nvars * h * w);
    for row in sums.chunks(out_len) {
        let (_, gray) = finish(row.to_vec(), shape, n_pairs);
        data.extend_from_slice(gray.data());
    }
    let mut stack = EimStack::new(&layer.name, nvars, h, w, data)?;
    stack.seed = seed;
    stack.n_pairs = n_pairs;
    Ok(stack)
}

/// Pixel average of the gray map.
pub fn individual_influence<T: Scalar>(m: &InfluenceMap<T>) -> f64 {
    mean(m.gray.data())
}

pub(crate) fn mean<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of individual influence on module channel count.
pub fn influence_size_regression(points: &[(usize, f64)]) -> Result<Regression> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::Validation("regression needs at least two modules".into()));
    }
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Validation("degenerate design: all modules have the same size".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0 as f64).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(Regression { slope, intercept, r2 })
}
