//! Lloyd's k-means with k-means++ seeding.
//!
//! Ties in the nearest-centroid search go to the lowest index. A cluster
//! left empty after an assignment step is re-seeded at the point farthest
//! from its current centroid, and that point moves into it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<T> {
    pub centroids: Tensor<T>,
    pub assignments: Vec<usize>,
    /// Inertia after seeding's first assignment, then after every iteration.
    pub inertia: Vec<f64>,
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + (x - y) * (x - y);
    }
    acc
}

fn nearest<T: Scalar>(point: &[T], centroids: &[T], p: usize) -> (usize, T) {
    let mut best = (0, sq_dist(point, &centroids[..p]));
    for (j, c) in centroids.chunks(p).enumerate().skip(1) {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn inertia<T: Scalar>(data: &[T], centroids: &[T], assignments: &[usize], p: usize) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(&data[i * p..(i + 1) * p], &centroids[a * p..(a + 1) * p]).to_f64_lossy())
        .sum()
}

fn plus_plus_seeds<T: Scalar>(data: &[T], n: usize, p: usize, k: usize, r: &mut rng::StreamRng) -> Vec<T> {
    let mut centroids = Vec::with_capacity(k * p);
    let first = r.random_range(0..n);
    centroids.extend_from_slice(&data[first * p..(first + 1) * p]);
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(&data[i * p..(i + 1) * p], &centroids[..p]).to_f64_lossy()).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = r.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            r.random_range(0..n)
        };
        let c = data[pick * p..(pick + 1) * p].to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(&data[i * p..(i + 1) * p], &c).to_f64_lossy());
        }
        centroids.extend(c);
    }
    centroids
}

pub fn kmeans<T: Scalar>(features: &Tensor<T>, k: usize, iters: usize, seed: u64) -> Result<KMeansFit<T>> {
    let [n, p] = features.shape()[..] else {
        return Err(Error::Dimension(format!("kmeans needs a matrix, got {:?}", features.shape())));
    };
    if k == 0 || k > n {
        return Err(Error::Validation(format!("k = {k} outside 1..={n}")));
    }
    let data = features.data();
    let mut r = rng::stream(seed, "kmeans-seed", 0);
    let mut centroids = plus_plus_seeds(data, n, p, k, &mut r);
    let mut assignments: Vec<usize> = (0..n).map(|i| nearest(&data[i * p..(i + 1) * p], &centroids, p).0).collect();
    let mut history = vec![inertia(data, &centroids, &assignments, p)];

    for it in 0..iters {
        if it > 0 {
            let next: Vec<usize> = (0..n).map(|i| nearest(&data[i * p..(i + 1) * p], &centroids, p).0).collect();
            if next == assignments {
                break;
            }
            assignments = next;
        }
        // re-seed empty clusters at the farthest point
        for j in 0..k {
            if assignments.contains(&j) {
                continue;
            }
            let mut counts = vec![0usize; k];
            assignments.iter().for_each(|&a| counts[a] += 1);
            let far = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .map(|i| {
                    let a = assignments[i];
                    (i, sq_dist(&data[i * p..(i + 1) * p], &centroids[a * p..(a + 1) * p]))
                })
                .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                assignments[i] = j;
                centroids[j * p..(j + 1) * p].copy_from_slice(&data[i * p..(i + 1) * p]);
            }
        }
        let mut sums = vec![T::zero(); k * p];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums[a * p..(a + 1) * p].iter_mut().zip(&data[i * p..(i + 1) * p]) {
                *s = *s + v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::from_usize(counts[j]).expect("count fits the scalar");
                for (dst, &s) in centroids[j * p..(j + 1) * p].iter_mut().zip(&sums[j * p..(j + 1) * p]) {
                    *dst = s / c;
                }
            }
        }
        history.push(inertia(data, &centroids, &assignments, p));
    }
    Ok(KMeansFit { centroids: Tensor::new(vec![k, p], centroids)?, assignments, inertia: history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clouds(seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, "clouds", 0);
        Tensor::from_fn(vec![40, 2], |i| {
            let centre = if i / 2 < 20 { -5.0 } else { 5.0 };
            centre + r.random::<f64>() - 0.5
        })
    }

    #[test]
    fn separates_two_clouds() {
        let fit = kmeans(&clouds(1), 2, 100, 3).unwrap();
        let first = fit.assignments[0];
        assert!(fit.assignments[..20].iter().all(|&a| a == first));
        assert!(fit.assignments[20..].iter().all(|&a| a != first));
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let x = Tensor::new(vec![4, 2], vec![0.0f64, 0.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0]).unwrap();
        let fit = kmeans(&x, 4, 50, 0).unwrap();
        assert_eq!(*fit.inertia.last().unwrap(), 0.0);
    }

    #[test]
    fn inertia_is_nonincreasing() {
        for seed in 0..10 {
            let mut r = rng::stream(seed, "km", 0);
            let x = Tensor::from_fn(vec![60, 5], |_| r.random::<f64>());
            let fit = kmeans(&x, 4, 100, seed).unwrap();
            for w in fit.inertia.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{w:?}");
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let x = clouds(2);
        assert_eq!(kmeans(&x, 3, 100, 7).unwrap(), kmeans(&x, 3, 100, 7).unwrap());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let x = Tensor::new(vec![5, 1], vec![0.0f64, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let fit = kmeans(&x, 3, 20, 1).unwrap();
        for j in 0..3 {
            assert!(fit.assignments.contains(&j), "{:?}", fit.assignments);
        }
    }
}
