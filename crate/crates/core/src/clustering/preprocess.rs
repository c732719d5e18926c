//! Smoothing and binarization of influence maps.
//!
//! Each map is averaged with a `window x window` box filter (borders
//! replicate the edge pixels), then thresholded at its own nearest-rank
//! percentile: a pixel becomes 1 only if it is strictly greater than the
//! percentile value, so constant maps binarize to all zeros.

use crate::error::{Error, Result};
use crate::influence::EimStack;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessOptions {
    pub window: usize,
    pub percentile: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { window: 3, percentile: 75.0 }
    }
}

/// Nearest-rank percentile: the `ceil(p/100 * n)`-th smallest value.
pub fn nearest_rank_percentile<T: Scalar>(values: &[T], percentile: f64) -> T {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite map values"));
    let rank = ((percentile / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn box_filter<T: Scalar>(map: &[T], h: usize, w: usize, window: usize) -> Vec<T> {
    let r = (window / 2) as i64;
    let norm = T::from_usize(window * window).expect("window fits the scalar");
    let at = |y: i64, x: i64| map[y.clamp(0, h as i64 - 1) as usize * w + x.clamp(0, w as i64 - 1) as usize];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = T::zero();
            for dy in -r..=r {
                for dx in -r..=r {
                    acc = acc + at(y + dy, x + dx);
                }
            }
            out.push(acc / norm);
        }
    }
    out
}

pub fn preprocess_maps<T: Scalar>(stack: &EimStack<T>, opts: &PreprocessOptions) -> Result<EimStack<T>> {
    let PreprocessOptions { window, percentile } = *opts;
    if window == 0 || window % 2 == 0 {
        return Err(Error::Validation(format!("window {window} must be odd and at least 1")));
    }
    if window > stack.height || window > stack.width {
        return Err(Error::Validation(format!(
            "window {window} larger than the {}x{} maps",
            stack.height, stack.width
        )));
    }
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::Validation(format!("percentile {percentile} outside (0, 100)")));
    }
    let mut data = Vec::with_capacity(stack.data.len());
    for row in stack.rows() {
        let smooth = box_filter(row, stack.height, stack.width, window);
        let cut = nearest_rank_percentile(&smooth, percentile);
        data.extend(smooth.iter().map(|&v| if v > cut { T::one() } else { T::zero() }));
    }
    Ok(EimStack { data, layer: stack.layer.clone(), ..*stack })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stack(h: usize, w: usize, data: Vec<f64>) -> EimStack<f64> {
        EimStack::new("t", data.len() / (h * w), h, w, data).unwrap()
    }

    #[test]
    fn constant_map_binarizes_to_zero() {
        let out = preprocess_maps(&stack(4, 4, vec![0.3; 16]), &PreprocessOptions::default()).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nearest_rank_example() {
        let opts = PreprocessOptions { window: 1, percentile: 75.0 };
        let out = preprocess_maps(&stack(1, 4, vec![1.0, 2.0, 3.0, 4.0]), &opts).unwrap();
        assert_eq!(out.data, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn bright_quadrant_is_recovered() {
        let n = 16;
        let data: Vec<f64> = (0..n * n)
            .map(|p| if p / n < n / 2 && p % n < n / 2 { 1.0 + (p % 3) as f64 * 0.01 } else { 0.01 * (p % 5) as f64 })
            .collect();
        let out = preprocess_maps(&stack(n, n, data), &PreprocessOptions::default()).unwrap();
        let (mut inter, mut union) = (0, 0);
        for p in 0..n * n {
            let truth = p / n < n / 2 && p % n < n / 2;
            let got = out.data[p] == 1.0;
            inter += usize::from(truth && got);
            union += usize::from(truth || got);
        }
        // the quadrant covers 25% of the image, exactly the kept fraction
        assert!(inter as f64 / union as f64 >= 0.8, "{inter}/{union}");
    }

    #[test]
    fn invalid_options() {
        let s = stack(2, 2, vec![0.0; 4]);
        for (window, percentile) in [(2, 75.0), (3, 75.0), (1, 0.0), (1, 100.0)] {
            assert!(preprocess_maps(&s, &PreprocessOptions { window, percentile }).is_err());
        }
    }

    proptest! {
        #[test]
        fn output_is_binary_and_sparse(data in proptest::collection::vec(0.0f64..1.0, 64), window in prop::sample::select(vec![1usize, 3, 5])) {
            let out = preprocess_maps(&stack(8, 8, data), &PreprocessOptions { window, percentile: 75.0 }).unwrap();
            prop_assert!(out.data.iter().all(|&v| v == 0.0 || v == 1.0));
            let ones = out.data.iter().filter(|&&v| v == 1.0).count();
            prop_assert!(ones <= 16);
        }
    }
}
