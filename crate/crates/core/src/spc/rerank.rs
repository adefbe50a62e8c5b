use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::{dot, Tensor2};

/// Neighborhood sizes for the k-reciprocal Jaccard distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReciprocalParams {
    /// Reciprocal neighborhood size.
    pub k1: usize,
    /// Query-expansion neighborhood size; 1 disables expansion.
    pub k2: usize,
}

/// Jaccard distance between k-reciprocal neighbor sets of unit vectors.
///
/// Every point gets a sparse weight vector over its (expanded) k-reciprocal
/// neighbors, `exp(-d²)` normalized to sum 1, optionally averaged over its
/// `k2` nearest neighbors; the distance between two points is
/// `1 − Σ min / Σ max` of their weight vectors. Values lie in `[0, 1]`;
/// points whose neighbor sets do not overlap are at distance 1.
pub fn jaccard_distances(units: &[Vec<f64>], params: ReciprocalParams) -> Result<Tensor2> {
    let n = units.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no points".into()));
    }
    if params.k1 == 0 || params.k2 == 0 {
        return Err(Error::InvalidArgument("k1 and k2 must be positive".into()));
    }
    let sq: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| (2.0 - 2.0 * dot(&units[i], &units[j])).max(0.0))
                .collect()
        })
        .collect();
    // each row sorted by distance, ties by index; position 0 is normally the point itself
    let ranks: Vec<Vec<usize>> = sq
        .par_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let reciprocal = |i: usize, k: usize| -> Vec<usize> {
        let k = (k + 1).min(n);
        ranks[i][..k]
            .iter()
            .copied()
            .filter(|&j| ranks[j][..k].contains(&i))
            .collect()
    };

    let half = ((params.k1 as f64) / 2.0).round() as usize;
    // sparse weight vectors as (index, weight), sorted by index
    let weights: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let base = reciprocal(i, params.k1);
            let mut expanded = base.clone();
            for &c in &base {
                let cand = reciprocal(c, half);
                let shared = cand.iter().filter(|j| base.contains(j)).count();
                if shared as f64 > 2.0 / 3.0 * cand.len() as f64 {
                    expanded.extend(cand);
                }
            }
            expanded.sort_unstable();
            expanded.dedup();
            let total: f64 = expanded.iter().map(|&j| (-sq[i][j]).exp()).sum();
            expanded.iter().map(|&j| (j, (-sq[i][j]).exp() / total)).collect()
        })
        .collect();
    let weights: Vec<Vec<(usize, f64)>> = if params.k2 > 1 {
        let k2 = params.k2.min(n);
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut avg: BTreeMap<usize, f64> = BTreeMap::new();
                for &j in &ranks[i][..k2] {
                    for &(k, w) in &weights[j] {
                        *avg.entry(k).or_default() += w / k2 as f64;
                    }
                }
                avg.into_iter().collect()
            })
            .collect()
    } else {
        weights
    };

    // points that carry weight on each index
    let mut holders: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (j, w) in weights.iter().enumerate() {
        for &(k, v) in w {
            holders[k].push((j, v));
        }
    }
    let totals: Vec<f64> = weights.iter().map(|w| w.iter().map(|(_, v)| v).sum()).collect();
    let (weights, holders, totals) = (&weights, &holders, &totals);
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut lo = vec![0.0; n];
            for &(k, a) in &weights[i] {
                for &(j, b) in &holders[k] {
                    lo[j] += a.min(b);
                }
            }
            (0..n).map(move |j| {
                if i == j {
                    return 0.0;
                }
                // Σ max = Σ a + Σ b − Σ min
                let hi = totals[i] + totals[j] - lo[j];
                if hi <= 0.0 {
                    1.0
                } else {
                    (1.0 - lo[j] / hi).clamp(0.0, 1.0)
                }
            })
        })
        .collect();
    Tensor2::from_vec(n, n, rows)
}
