//! Sampling check for injectivity of the latent-to-output map.
//!
//! Hybridization assumes different latents give different outputs. This
//! cannot be proven by sampling, so the probe only reports near-collisions.

use crate::error::Result;
use crate::graph::CgmGraph;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct InjectivityReport {
    pub samples: usize,
    /// Smallest output L2 distance over all sampled pairs.
    pub min_output_distance: f64,
    /// Pairs with output distance at most `tol` but latent distance above it.
    pub collisions: Vec<(usize, usize)>,
}

pub fn injectivity_probe<T: Scalar>(g: &CgmGraph<T>, samples: usize, seed: u64, tol: f64) -> Result<InjectivityReport> {
    let mut r = rng::stream(seed, "injectivity", 0);
    let mut zs = Vec::with_capacity(samples);
    let mut ys = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z: Vec<T> = g.latent().sample(&mut r);
        ys.push(g.evaluate(&z)?.data().iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
        zs.push(z.iter().map(|v| v.to_f64_lossy()).collect::<Vec<_>>());
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut min_output_distance = f64::INFINITY;
    let mut collisions = Vec::new();
    for i in 0..samples {
        for j in i + 1..samples {
            let dy = dist(&ys[i], &ys[j]);
            min_output_distance = min_output_distance.min(dy);
            if dy <= tol && dist(&zs[i], &zs[j]) > tol {
                collisions.push((i, j));
            }
        }
    }
    if !collisions.is_empty() {
        log::warn!("{} near-collisions among {samples} samples", collisions.len());
    }
    Ok(InjectivityReport { samples, min_output_distance, collisions })
}
