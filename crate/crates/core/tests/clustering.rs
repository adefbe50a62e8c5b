#![allow(clippy::needless_range_loop)]

mod common;

use common::{euclid as dist, naive_dbscan, point_set, same_partition};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelreid::numkit::{normalized, Tensor2};
use skelreid::spc::{dbscan, dbscan_precomputed, jaccard_distances, ReciprocalParams};

#[test]
fn dbscan_matches_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut nontrivial = 0;
    for trial in 0..50 {
        let (points, eps, min_samples) = point_set(&mut rng, trial);
        let n = points.len();
        let reference = naive_dbscan(&|i, j| dist(&points[i], &points[j]), n, eps, min_samples);
        let got = dbscan(&points, eps, min_samples);
        assert!(same_partition(&got.assignment, &reference), "trial {trial}");
        let z = reference.iter().flatten().max().map_or(0, |m| m + 1);
        assert_eq!(got.z(), z);
        let sizes: usize = got.sizes.iter().sum();
        assert_eq!(sizes + got.outliers(), n);
        if z > 1 && got.outliers() > 0 {
            nontrivial += 1;
        }

        let mut d = Tensor2::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                d.set(i, j, dist(&points[i], &points[j]));
            }
        }
        let pre = dbscan_precomputed(&d, eps, min_samples);
        assert_eq!(pre.assignment, got.assignment, "trial {trial}");
    }
    assert!(
        nontrivial >= 5,
        "only {nontrivial} trials had several clusters and outliers"
    );
}

/// Dense evaluation of the k-reciprocal Jaccard distance.
fn dense_jaccard(units: &[Vec<f64>], k1: usize, k2: usize) -> Vec<Vec<f64>> {
    let n = units.len();
    let sq = |i: usize, j: usize| {
        let d: f64 = units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum();
        (2.0 - 2.0 * d).max(0.0)
    };
    let ranks: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| sq(i, a).total_cmp(&sq(i, b)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let recip = |i: usize, k: usize| -> Vec<usize> {
        let k = (k + 1).min(n);
        ranks[i][..k]
            .iter()
            .copied()
            .filter(|&j| ranks[j][..k].contains(&i))
            .collect()
    };
    let half = (k1 as f64 / 2.0).round() as usize;
    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        let base = recip(i, k1);
        let mut set = base.clone();
        for &c in &base {
            let cand = recip(c, half);
            let shared = cand.iter().filter(|j| base.contains(j)).count();
            if 3 * shared > 2 * cand.len() {
                set.extend(cand);
            }
        }
        set.sort_unstable();
        set.dedup();
        let total: f64 = set.iter().map(|&j| (-sq(i, j)).exp()).sum();
        for &j in &set {
            v[i][j] = (-sq(i, j)).exp() / total;
        }
    }
    if k2 > 1 {
        let k2 = k2.min(n);
        v = (0..n)
            .map(|i| {
                (0..n)
                    .map(|c| ranks[i][..k2].iter().map(|&j| v[j][c]).sum::<f64>() / k2 as f64)
                    .collect()
            })
            .collect();
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let lo: f64 = (0..n).map(|c| v[i][c].min(v[j][c])).sum();
                    let hi: f64 = (0..n).map(|c| v[i][c].max(v[j][c])).sum();
                    if hi == 0.0 {
                        1.0
                    } else {
                        1.0 - lo / hi
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn sparse_jaccard_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..10 {
        let n = rng.random_range(2..60);
        let units: Vec<Vec<f64>> = (0..n)
            .map(|_| normalized(&(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()).unwrap())
            .collect();
        let (k1, k2) = [(20, 6), (5, 1), (3, 3)][trial % 3];
        let got = jaccard_distances(&units, ReciprocalParams { k1, k2 }).unwrap();
        let want = dense_jaccard(&units, k1, k2);
        for i in 0..n {
            for j in 0..n {
                assert!((got.get(i, j) - want[i][j]).abs() < 1e-12, "trial {trial} ({i},{j})");
            }
        }
    }
}

proptest! {
    #[test]
    fn dbscan_partition_properties(
        points in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..60),
        eps in 0.05f64..2.0,
        min_samples in 1usize..5,
    ) {
        let state = dbscan(&points, eps, min_samples);
        let n = points.len();
        for i in 0..n {
            let ball: Vec<usize> = (0..n).filter(|&j| dist(&points[i], &points[j]) <= eps).collect();
            if ball.len() >= min_samples {
                // a core point shares its cluster with every point in its ball
                let c = state.assignment[i];
                prop_assert!(c.is_some());
                for j in ball {
                    if (0..n).filter(|&k| dist(&points[j], &points[k]) <= eps).count() >= min_samples {
                        prop_assert_eq!(state.assignment[j], c);
                    } else {
                        prop_assert!(state.assignment[j].is_some());
                    }
                }
            }
        }
        // min_samples = 1 makes every point a core point
        if min_samples == 1 {
            prop_assert_eq!(state.outliers(), 0);
        }
    }
}
