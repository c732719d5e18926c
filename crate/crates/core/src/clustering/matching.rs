//! Label matching between two clusterings.

use crate::error::{Error, Result};

/// Exhaustive search over permutations is used up to this many clusters.
pub const EXHAUSTIVE_MAX_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `permutation[label_b]` is the label of `a` matched to `label_b`.
    pub permutation: Vec<usize>,
    /// Fraction of overlap items with matching labels after relabeling `b`.
    pub consistency: f64,
}

/// Finds the relabeling of `b` that agrees with `a` on the most `overlap`
/// items. Labels are `0..k`.
pub fn match_labelings(a: &[usize], b: &[usize], k_a: usize, k_b: usize, overlap: &[usize]) -> Result<Matching> {
    if k_a != k_b {
        return Err(Error::Validation(format!("cluster counts differ: {k_a} vs {k_b}")));
    }
    let k = k_a;
    if k == 0 {
        return Err(Error::Validation("no clusters".into()));
    }
    // agree[lb][la]: overlap items labelled lb by b and la by a
    let mut agree = vec![vec![0i64; k]; k];
    for &i in overlap {
        let (la, lb) = (a.get(i).copied(), b.get(i).copied());
        match (la, lb) {
            (Some(la), Some(lb)) if la < k && lb < k => agree[lb][la] += 1,
            _ => return Err(Error::Validation(format!("item {i} lacks a label in 0..{k}"))),
        }
    }
    let permutation = if k <= EXHAUSTIVE_MAX_K { best_permutation(&agree) } else { hungarian_max(&agree) };
    let matched: i64 = permutation.iter().enumerate().map(|(lb, &la)| agree[lb][la]).sum();
    let consistency = if overlap.is_empty() { 1.0 } else { matched as f64 / overlap.len() as f64 };
    Ok(Matching { permutation, consistency })
}

/// Lexicographically first permutation with maximal total agreement.
fn best_permutation(agree: &[Vec<i64>]) -> Vec<usize> {
    let k = agree.len();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = i64::MIN;
    loop {
        let score: i64 = perm.iter().enumerate().map(|(i, &j)| agree[i][j]).sum();
        if score > best_score {
            best_score = score;
            best.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Maximum-weight perfect assignment on a square matrix (Hungarian method,
/// O(k^3)). Returns `assignment[row] = column`.
pub fn hungarian_max(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // minimise cost = max - weight; 1-indexed potentials as in the classic formulation
    let cost = |i: usize, j: usize| max - weights[i - 1][j - 1];
    let (mut u, mut v) = (vec![0i64; n + 1], vec![0i64; n + 1]);
    let mut way = vec![0usize; n + 1];
    let mut col_row = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if col_row[j] > 0 {
            assignment[col_row[j] - 1] = j - 1;
        }
    }
    assignment
}
