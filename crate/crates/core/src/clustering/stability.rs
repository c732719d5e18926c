//! Split-half stability of a clustering.
//!
//! Each repetition shuffles the rows into three near-equal parts A, B, C,
//! clusters A+C and B+C separately, matches the two labelings on C, and
//! records the matched label consistency together with the mean cosine
//! similarity of matched templates. Repetitions run in parallel with
//! per-repetition seeds and are aggregated in repetition order.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{cosine, fit_clusters, match_labelings, Method};
use crate::error::{Error, Result};
use crate::influence::EimStack;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityOptions {
    pub ks: Vec<usize>,
    pub reps: usize,
    pub method: Method,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub k: usize,
    pub method: Method,
    pub reps: usize,
    pub consistency_mean: f64,
    pub consistency_std: f64,
    pub cosine_mean: f64,
    pub cosine_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    pub fn row(&self, k: usize, method: Method) -> Option<&StabilityRow> {
        self.rows.iter().find(|r| r.k == k && r.method == method)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn rows_matrix<T: Scalar>(s: &EimStack<T>, rows: &[usize]) -> Result<Tensor<T>> {
    let sub = s.select(rows);
    Tensor::new(vec![rows.len(), s.pixels()], sub.data)
}

/// One repetition at one `k`: returns (consistency, mean matched cosine).
fn repetition<T: Scalar>(s: &EimStack<T>, k: usize, method: Method, seed: u64, rep: usize) -> Result<(f64, f64)> {
    let n = s.channels;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "stability-split", rep as u64));
    let third = n / 3;
    let (part_a, rest) = order.split_at(third);
    let (part_b, part_c) = rest.split_at(third);

    let run = |own: &[usize], which: u64| -> Result<(Vec<usize>, Tensor<T>)> {
        let rows: Vec<usize> = own.iter().chain(part_c).copied().collect();
        let fit = fit_clusters(&rows_matrix(s, &rows)?, k, method, rng::derive_seed(seed, "stability-fit", 2 * rep as u64 + which))?;
        let mut labels = vec![usize::MAX; n];
        for (&r, &l) in rows.iter().zip(&fit.assignments) {
            labels[r] = l;
        }
        Ok((labels, fit.h))
    };
    let (labels_1, h1) = run(part_a, 0)?;
    let (labels_2, h2) = run(part_b, 1)?;
    let m = match_labelings(&labels_1, &labels_2, k, k, part_c)?;
    let p = s.pixels();
    let cos: f64 = m
        .permutation
        .iter()
        .enumerate()
        .map(|(l2, &l1)| cosine(&h1.data()[l1 * p..(l1 + 1) * p], &h2.data()[l2 * p..(l2 + 1) * p]))
        .sum::<f64>()
        / k as f64;
    Ok((m.consistency, cos))
}

pub fn stability_analysis<T: Scalar>(s: &EimStack<T>, opts: &StabilityOptions) -> Result<StabilityReport> {
    let k_max = opts.ks.iter().copied().max().ok_or_else(|| Error::Validation("empty K range".into()))?;
    if opts.ks.contains(&0) {
        return Err(Error::Validation("K must be positive".into()));
    }
    if s.channels < 3 * k_max {
        return Err(Error::Validation(format!(
            "{} maps are too few for K = {k_max}; need at least {}",
            s.channels,
            3 * k_max
        )));
    }
    if opts.reps == 0 {
        return Err(Error::Validation("at least one repetition is required".into()));
    }
    let mut rows = Vec::with_capacity(opts.ks.len());
    for &k in &opts.ks {
        let results: Vec<Result<(f64, f64)>> =
            (0..opts.reps).into_par_iter().map(|rep| repetition(s, k, opts.method, opts.seed, rep)).collect();
        let (cons, coss): (Vec<f64>, Vec<f64>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
        let (consistency_mean, consistency_std) = mean_std(&cons);
        let (cosine_mean, cosine_std) = mean_std(&coss);
        rows.push(StabilityRow {
            k,
            method: opts.method,
            reps: opts.reps,
            consistency_mean,
            consistency_std,
            cosine_mean,
            cosine_std,
        });
    }
    Ok(StabilityReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `groups` blocks of rows, each a disjoint stripe of ones.
    fn separated(groups: usize, per: usize, p: usize) -> EimStack<f64> {
        let width = p / groups;
        let data = (0..groups * per)
            .flat_map(|r| {
                let g = r % groups;
                (0..p).map(move |j| if j / width == g { 1.0 } else { 0.0 })
            })
            .collect();
        EimStack::new("sep", groups * per, 1, p, data).unwrap()
    }

    #[test]
    fn perfectly_separated_groups_are_stable() {
        let s = separated(3, 10, 30);
        for method in [Method::Nmf, Method::KMeans] {
            let opts = StabilityOptions { ks: vec![3], reps: 10, method, seed: 2 };
            let row = &stability_analysis(&s, &opts).unwrap().rows[0];
            assert_eq!(row.consistency_mean, 1.0, "{method}");
            assert!(row.cosine_mean >= 0.99, "{method}: {}", row.cosine_mean);
        }
    }

    #[test]
    fn same_seed_same_report() {
        let s = separated(2, 6, 20);
        let opts = StabilityOptions { ks: vec![2], reps: 1, method: Method::Nmf, seed: 9 };
        assert_eq!(stability_analysis(&s, &opts).unwrap(), stability_analysis(&s, &opts).unwrap());
    }

    #[test]
    fn too_few_rows() {
        let s = separated(2, 2, 20);
        let opts = StabilityOptions { ks: vec![2], reps: 1, method: Method::Nmf, seed: 0 };
        assert!(stability_analysis(&s, &opts).is_err());
    }
}
