//! Grouping channels into modules from their elementary influence maps.
//!
//! Maps are smoothed and binarized ([`preprocess`]), factorized with NMF or
//! clustered with k-means ([`nmf`], [`kmeans`]), and each channel is ascribed
//! the cluster whose template contributes most. [`stability`] measures how
//! reproducible the clustering is across random splits of the channels.

pub mod kmeans;
pub mod matching;
pub mod nmf;
pub mod preprocess;
pub mod stability;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::rng;

/// Independent NMF starts per fit; the lowest reconstruction error wins.
pub const NMF_RESTARTS: usize = 4;

pub use kmeans::{kmeans, KMeansFit};
pub use matching::{hungarian_max, match_labelings, Matching};
pub use nmf::{nmf, NmfFit, NmfOptions};
pub use preprocess::{nearest_rank_percentile, preprocess_maps, PreprocessOptions};
pub use stability::{stability_analysis, StabilityOptions, StabilityReport, StabilityRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Nmf,
    KMeans,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nmf => "nmf",
            Method::KMeans => "kmeans",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nmf" => Ok(Method::Nmf),
            "kmeans" | "k-means" => Ok(Method::KMeans),
            other => Err(Error::Config(format!("unknown clustering method `{other}`"))),
        }
    }
}

/// Fitted factorization and the channel assignments it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<T> {
    pub method: Method,
    pub k: usize,
    /// `[channels, k]`. NMF weights, or negated squared centroid distances
    /// for k-means, so the assignment is the row argmax in both cases.
    pub w: Tensor<T>,
    /// `[k, pixels]` templates: NMF components or k-means centroids.
    pub h: Tensor<T>,
    pub assignments: Vec<usize>,
}

/// Row argmax of `w`, ties going to the lowest cluster index.
pub fn assign_clusters<T: Scalar>(w: &Tensor<T>) -> Vec<usize> {
    let k = w.shape()[1];
    w.data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fits `k` clusters to the rows of `features: [n, p]`.
pub fn fit_clusters<T: Scalar>(features: &Tensor<T>, k: usize, method: Method, seed: u64) -> Result<ClusterModel<T>> {
    match method {
        Method::Nmf => {
            let mut best: Option<NmfFit<T>> = None;
            for r in 0..NMF_RESTARTS {
                let s = if r == 0 { seed } else { rng::derive_seed(seed, "nmf-restart", r as u64) };
                let fit = nmf(features, k, &NmfOptions { seed: s, ..NmfOptions::default() })?;
                if best.as_ref().is_none_or(|b| fit.final_error() < b.final_error()) {
                    best = Some(fit);
                }
            }
            let fit = best.expect("at least one start");
            let assignments = assign_clusters(&fit.w);
            Ok(ClusterModel { method, k, w: fit.w, h: fit.h, assignments })
        }
        Method::KMeans => {
            let fit = kmeans(features, k, kmeans::DEFAULT_ITERS, seed)?;
            let n = features.shape()[0];
            let p = features.shape()[1];
            let w = Tensor::from_fn(vec![n, k], |idx| {
                let (i, j) = (idx / k, idx % k);
                -kmeans::sq_dist(&features.data()[i * p..(i + 1) * p], &fit.centroids.data()[j * p..(j + 1) * p])
            });
            Ok(ClusterModel { method, k, w, h: fit.centroids, assignments: fit.assignments })
        }
    }
}

pub(crate) fn cosine<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to_f64_lossy(), y.to_f64_lossy());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}
