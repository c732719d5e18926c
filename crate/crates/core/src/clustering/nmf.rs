//! Non-negative matrix factorization with multiplicative updates.
//!
//! Minimizes `||S - W H||_F` over non-negative `W: [n, k]`, `H: [k, p]`
//! with the Lee-Seung updates
//!
//! ```text
//! H <- H * (W^T S) / (W^T W H + eps)
//! W <- W * (S H^T) / (W H H^T + eps)
//! ```
//!
//! Each update never increases the objective. Factors start from seeded
//! uniform `(0, 1]` entries.

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{matmul, Tensor};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfOptions {
    pub max_iters: usize,
    /// Stop once the relative error improvement drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit<T> {
    pub w: Tensor<T>,
    pub h: Tensor<T>,
    /// Frobenius error of the initial factors, then after every iteration.
    pub errors: Vec<f64>,
}

impl<T: Scalar> NmfFit<T> {
    pub fn iterations(&self) -> usize {
        self.errors.len() - 1
    }

    pub fn final_error(&self) -> f64 {
        *self.errors.last().expect("at least the initial error")
    }
}

pub(crate) fn transpose<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    Tensor::from_fn(vec![c, r], |i| m.data()[(i % r) * c + i / r])
}

pub fn frobenius_error<T: Scalar>(s: &Tensor<T>, w: &Tensor<T>, h: &Tensor<T>) -> Result<f64> {
    let wh = matmul(w, h)?;
    Ok(s.data()
        .iter()
        .zip(wh.data())
        .map(|(&a, &b)| (a.to_f64_lossy() - b.to_f64_lossy()).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn multiplicative_step<T: Scalar>(target: &mut Tensor<T>, numer: &Tensor<T>, denom: &Tensor<T>, eps: T) {
    for ((t, &n), &d) in target.data_mut().iter_mut().zip(numer.data()).zip(denom.data()) {
        *t = *t * n / (d + eps);
    }
}

pub fn nmf<T: Scalar>(s: &Tensor<T>, k: usize, opts: &NmfOptions) -> Result<NmfFit<T>> {
    let [n, p] = s.shape()[..] else {
        return Err(Error::Dimension(format!("nmf needs a matrix, got {:?}", s.shape())));
    };
    if k == 0 || k > n.min(p) {
        return Err(Error::Validation(format!("rank {k} outside 1..={}", n.min(p))));
    }
    if let Some(bad) = s.data().iter().find(|v| v.is_nan() || **v < T::zero() || !v.is_finite()) {
        return Err(Error::Validation(format!("nmf input has a negative or non-finite entry {bad}")));
    }
    let mut r = rng::stream(opts.seed, "nmf-init", 0);
    // 1 - [0, 1) lies in (0, 1]
    let mut draw = |shape: Vec<usize>| Tensor::from_fn(shape, |_| T::from_f64_lossy(1.0 - r.random::<f64>()));
    let mut w = draw(vec![n, k]);
    let mut h = draw(vec![k, p]);
    let eps = T::from_f64_lossy(1e-12);

    let mut errors = vec![frobenius_error(s, &w, &h)?];
    for _ in 0..opts.max_iters {
        let wt = transpose(&w);
        let numer = matmul(&wt, s)?;
        let denom = matmul(&matmul(&wt, &w)?, &h)?;
        multiplicative_step(&mut h, &numer, &denom, eps);

        let ht = transpose(&h);
        let numer = matmul(s, &ht)?;
        let denom = matmul(&w, &matmul(&h, &ht)?)?;
        multiplicative_step(&mut w, &numer, &denom, eps);

        let err = frobenius_error(s, &w, &h)?;
        let prev = *errors.last().expect("nonempty");
        errors.push(err);
        if prev == 0.0 || (prev - err) / prev < opts.tol {
            break;
        }
    }
    Ok(NmfFit { w, h, errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::cosine;

    fn random_nonneg(n: usize, p: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "test", 0);
        Tensor::from_fn(vec![n, p], |_| r.random::<f64>())
    }

    #[test]
    fn rank_one_recovery() {
        let w: Vec<f64> = (0..12).map(|i| 0.5 + (i % 4) as f64).collect();
        let h: Vec<f64> = (0..30).map(|j| ((j * 7) % 11) as f64 / 10.0).collect();
        let s = Tensor::from_fn(vec![12, 30], |i| w[i / 30] * h[i % 30]);
        let fit = nmf(&s, 1, &NmfOptions { tol: 1e-12, ..NmfOptions::default() }).unwrap();
        let norm = s.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(fit.final_error() / norm <= 1e-3);
        assert!(cosine(fit.h.data(), &h) >= 0.999);
    }

    #[test]
    fn error_is_nonincreasing() {
        for seed in 0..5 {
            let s = random_nonneg(20, 50, seed);
            let fit = nmf(&s, 3, &NmfOptions { seed, tol: 0.0, max_iters: 200 }).unwrap();
            for w in fit.errors.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
            assert!(fit.w.data().iter().chain(fit.h.data()).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn full_rank_fits_at_least_as_well() {
        let s = random_nonneg(6, 9, 3);
        let opts = NmfOptions { max_iters: 3000, tol: 0.0, seed: 1 };
        let full = nmf(&s, 6, &opts).unwrap().final_error();
        for k in 1..6 {
            assert!(full <= nmf(&s, k, &opts).unwrap().final_error() + 1e-9);
        }
    }

    #[test]
    fn rejects_negative_entries_and_bad_rank() {
        let mut s = random_nonneg(3, 3, 0);
        assert!(nmf(&s, 4, &NmfOptions::default()).is_err());
        s.data_mut()[4] = -1.0;
        assert!(matches!(nmf(&s, 2, &NmfOptions::default()), Err(Error::Validation(_))));
    }
}
