//! Dense tensors and the deterministic kernels used as structural equations.
//!
//! Activation maps use the NCHW layout, row-major. Every kernel accumulates in
//! the tensor's own scalar type in a fixed loop order, so identical inputs give
//! bit-identical outputs regardless of threading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!("shape {shape:?} has a zero dimension")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![value; len] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self { shape, data: (0..len).map(&mut f).collect() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(vec![n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Number of channels and plane size for a `[N, C, H, W]` tensor.
    fn nchw(&self, what: &str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Dimension(format!(
                "{what}: expected a 4-d NCHW tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Spatial plane `(sample, channel)` of a 4-d tensor.
    pub fn plane(&self, sample: usize, channel: usize) -> &[T] {
        let (c, hw) = (self.shape[1], self.shape[2] * self.shape[3]);
        let start = (sample * c + channel) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, sample: usize, channel: usize) -> &mut [T] {
        let (c, hw) = (self.shape[1], self.shape[2] * self.shape[3]);
        let start = (sample * c + channel) * hw;
        &mut self.data[start..start + hw]
    }
}

/// Matrix product of `a: [m, k]` and `b: [k, n]`.
///
/// Each output entry is summed over `k` in ascending order starting from zero.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, k2, n) = match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) => (*m, *k, *k2, *n),
        (sa, sb) => {
            return Err(Error::Dimension(format!(
                "matmul needs two matrices, got {sa:?} and {sb:?}"
            )))
        }
    };
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &a.data[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        for (j, d) in dst.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (p, &x) in row.iter().enumerate() {
                acc = acc + x * b.data[p * n + j];
            }
            *d = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvTransposeParams {
    pub stride: usize,
    pub pad: usize,
    #[serde(default)]
    pub output_padding: usize,
}

impl ConvTransposeParams {
    /// Stride-2 upsampling with a `kernel`-sized filter that exactly doubles
    /// the spatial size (`pad = kernel / 2`, `output_padding = 1`).
    pub fn doubling(kernel: usize) -> Self {
        Self { stride: 2, pad: kernel / 2, output_padding: 1 }
    }

    pub fn output_side(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.output_padding >= self.stride {
            return Err(Error::Config(format!(
                "output_padding {} must be smaller than stride {}",
                self.output_padding, self.stride
            )));
        }
        let out = (input as i64 - 1) * self.stride as i64 - 2 * self.pad as i64
            + kernel as i64
            + self.output_padding as i64;
        if out < 1 {
            return Err(Error::Config(format!(
                "transposed convolution output size {out} is not positive \
                 (input {input}, kernel {kernel}, {self:?})"
            )));
        }
        Ok(out as usize)
    }
}

/// Transposed (fractionally strided) 2-d convolution by scatter-accumulate.
///
/// `input: [N, Cin, H, W]`, `kernel: [Cin, Cout, kh, kw]`, optional `bias: [Cout]`.
/// Kernel slices that are entirely zero are skipped; they contribute nothing.
pub fn conv_transpose2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    params: ConvTransposeParams,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.nchw("conv_transpose2d input")?;
    let (kcin, cout, kh, kw) = kernel.nchw("conv_transpose2d kernel")?;
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "conv_transpose2d: input {:?} has {cin} channels but kernel {:?} expects {kcin}",
            input.shape(),
            kernel.shape()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: bias shape {:?} does not match {cout} output channels",
                b.shape()
            )));
        }
    }
    let oh = params.output_side(h, kh)?;
    let ow = params.output_side(w, kw)?;
    let (stride, pad) = (params.stride as i64, params.pad as i64);
    let ksize = kh * kw;
    let live: Vec<bool> = (0..cin * cout)
        .map(|s| kernel.data[s * ksize..(s + 1) * ksize].iter().any(|v| !v.is_zero()))
        .collect();

    let mut out = Tensor::zeros(vec![n, cout, oh, ow]);
    for s in 0..n {
        for co in 0..cout {
            let start = bias.map_or(T::zero(), |b| b.data[co]);
            let dst_off = (s * cout + co) * oh * ow;
            let dst = &mut out.data[dst_off..dst_off + oh * ow];
            dst.iter_mut().for_each(|d| *d = start);
            for ci in 0..cin {
                if !live[ci * cout + co] {
                    continue;
                }
                let k = &kernel.data[(ci * cout + co) * ksize..(ci * cout + co + 1) * ksize];
                let src = input.plane(s, ci);
                for iy in 0..h {
                    for ix in 0..w {
                        let x = src[iy * w + ix];
                        // Zero inputs (common after ReLU) contribute nothing.
                        if x.is_zero() {
                            continue;
                        }
                        let base_y = iy as i64 * stride - pad;
                        let base_x = ix as i64 * stride - pad;
                        for ky in 0..kh {
                            let oy = base_y + ky as i64;
                            if oy < 0 || oy >= oh as i64 {
                                continue;
                            }
                            let row = oy as usize * ow;
                            for kx in 0..kw {
                                let ox = base_x + kx as i64;
                                if ox < 0 || ox >= ow as i64 {
                                    continue;
                                }
                                let d = &mut dst[row + ox as usize];
                                *d = *d + x * k[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply_scalar<T: Scalar>(self, x: T) -> T {
        match self {
            // `x > 0` keeps the result +0 for both signed zeros.
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Identity => x,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "sigmoid" => Ok(Self::Sigmoid),
            "identity" => Ok(Self::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

pub fn apply_activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply_scalar(v))
}

/// Inference-mode batch normalization with stored statistics.
pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (n, c, _, _) = x.nchw("batchnorm_infer")?;
    for (name, t) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(Error::Dimension(format!(
                "batchnorm_infer: {name} has shape {:?}, input {:?} has {c} channels",
                t.shape(),
                x.shape()
            )));
        }
    }
    if var.data.iter().any(|&v| v < T::zero()) {
        return Err(Error::Validation("batchnorm_infer: negative variance".into()));
    }
    let mut out = x.clone();
    for s in 0..n {
        for ch in 0..c {
            let denom = (var.data[ch] + eps).sqrt();
            let (m, g, b) = (mean.data[ch], gamma.data[ch], beta.data[ch]);
            for v in out.plane_mut(s, ch) {
                *v = (*v - m) / denom * g + b;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(vec![2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Tensor::new(vec![1, 2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0f32, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let a = random(vec![4, 5], 1);
        let b = random(vec![5, 3], 2);
        let got = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0f32;
                for p in 0..5 {
                    acc += a.data()[i * 5 + p] * b.data()[p * 3 + j];
                }
                assert_eq!(got.data()[i * 3 + j].to_bits(), acc.to_bits());
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&random(vec![2, 3], 0), &random(vec![2, 3], 1)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn conv_transpose_scalar_case() {
        let x = Tensor::new(vec![1, 1, 1, 1], vec![3.0f32]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![-2.0f32]).unwrap();
        let p = ConvTransposeParams { stride: 1, pad: 0, output_padding: 0 };
        assert_eq!(conv_transpose2d(&x, &k, None, p).unwrap().data(), &[-6.0]);
    }

    #[test]
    fn conv_transpose_doubling_5x5() {
        let x = random(vec![1, 1, 2, 2], 3);
        let k = random(vec![1, 1, 5, 5], 4);
        let out = conv_transpose2d(&x, &k, None, ConvTransposeParams::doubling(5)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
    }

    /// Gather form: each output pixel sums every input/kernel pair mapped onto it.
    fn direct_conv_transpose(
        x: &Tensor<f32>,
        k: &Tensor<f32>,
        p: ConvTransposeParams,
        oh: usize,
        ow: usize,
    ) -> Vec<f32> {
        let [_, cin, h, w] = x.shape()[..] else { unreachable!() };
        let [_, cout, kh, kw] = k.shape()[..] else { unreachable!() };
        let mut out = vec![0.0f32; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f64;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let ny = oy as i64 + p.pad as i64 - ky as i64;
                                let nx = ox as i64 + p.pad as i64 - kx as i64;
                                if ny < 0 || nx < 0 {
                                    continue;
                                }
                                if ny % p.stride as i64 != 0 || nx % p.stride as i64 != 0 {
                                    continue;
                                }
                                let (iy, ix) = ((ny / p.stride as i64) as usize, (nx / p.stride as i64) as usize);
                                if iy >= h || ix >= w {
                                    continue;
                                }
                                acc += x.data()[(ci * h + iy) * w + ix] as f64
                                    * k.data()[((ci * cout + co) * kh + ky) * kw + kx] as f64;
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
        out
    }

    #[test]
    fn conv_transpose_matches_direct_summation() {
        let x = random(vec![1, 2, 3, 3], 5);
        for (seed, p, ks) in [
            (6, ConvTransposeParams { stride: 1, pad: 0, output_padding: 0 }, 3),
            (7, ConvTransposeParams::doubling(5), 5),
            (8, ConvTransposeParams { stride: 2, pad: 1, output_padding: 0 }, 3),
        ] {
            let k = random(vec![2, 3, ks, ks], seed);
            let got = conv_transpose2d(&x, &k, None, p).unwrap();
            let [_, _, oh, ow] = got.shape()[..] else { unreachable!() };
            let want = direct_conv_transpose(&x, &k, p, oh, ow);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_transpose_rejects_empty_output() {
        let x = random(vec![1, 1, 1, 1], 0);
        let k = random(vec![1, 1, 1, 1], 1);
        let p = ConvTransposeParams { stride: 1, pad: 1, output_padding: 0 };
        assert!(matches!(conv_transpose2d(&x, &k, None, p), Err(Error::Config(_))));
    }

    #[test]
    fn activations() {
        let x = Tensor::new(vec![3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(apply_activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        let zero = Tensor::new(vec![1], vec![0.0f32]).unwrap();
        assert_eq!(apply_activation(&zero, Activation::Tanh).data(), &[0.0]);
        assert_eq!(apply_activation(&zero, Activation::Sigmoid).data(), &[0.5]);
        assert_eq!(apply_activation(&x, Activation::Identity), x);
    }

    #[test]
    fn batchnorm_hand_computed() {
        let t = |v: f32| Tensor::new(vec![1], vec![v]).unwrap();
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0f32]).unwrap();
        let y = batchnorm_infer(&x, &t(2.0), &t(4.0), &t(3.0), &t(1.0), 0.0).unwrap();
        assert_eq!(y.data(), &[1.0]);
        let id = batchnorm_infer(&x, &t(0.0), &t(1.0), &t(1.0), &t(0.0), 0.0).unwrap();
        assert_eq!(id, x);
    }

    #[test]
    fn batchnorm_matches_scalar_loop() {
        let x = random(vec![2, 3, 4, 4], 9);
        let mean = random(vec![3], 10);
        let var = random(vec![3], 11).map(|v| v.abs());
        let gamma = random(vec![3], 12);
        let beta = random(vec![3], 13);
        let eps = 1e-5f32;
        let y = batchnorm_infer(&x, &mean, &var, &gamma, &beta, eps).unwrap();
        for (i, &v) in y.data().iter().enumerate() {
            let c = (i / 16) % 3;
            let want = (x.data()[i] as f64 - mean.data()[c] as f64)
                / (var.data()[c] as f64 + eps as f64).sqrt()
                * gamma.data()[c] as f64
                + beta.data()[c] as f64;
            assert!((v as f64 - want).abs() < 1e-6);
        }
        let bad = random(vec![2], 1);
        assert!(matches!(
            batchnorm_infer(&x, &bad, &var, &gamma, &beta, eps),
            Err(Error::Dimension(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn relu_idempotent(v in proptest::collection::vec(-10.0f32..10.0, 1..64)) {
                let x = Tensor::new(vec![v.len()], v).unwrap();
                let once = apply_activation(&x, Activation::Relu);
                let twice = apply_activation(&once, Activation::Relu);
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn conv_transpose_is_linear(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
                let x = random(vec![1, 2, 3, 3], seed);
                let y = random(vec![1, 2, 3, 3], seed + 1);
                let k = random(vec![2, 2, 5, 5], seed + 2);
                let p = ConvTransposeParams::doubling(5);
                let mix = Tensor::from_fn(vec![1, 2, 3, 3], |i| a * x.data()[i] + b * y.data()[i]);
                let lhs = conv_transpose2d(&mix, &k, None, p).unwrap();
                let fx = conv_transpose2d(&x, &k, None, p).unwrap();
                let fy = conv_transpose2d(&y, &k, None, p).unwrap();
                for i in 0..lhs.len() {
                    let rhs = a * fx.data()[i] + b * fy.data()[i];
                    prop_assert!((lhs.data()[i] - rhs).abs() <= 1e-5);
                }
            }
        }
    }
}
