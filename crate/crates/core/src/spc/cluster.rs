use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::{euclidean, normalized, Tensor2};

/// Outcome of one clustering pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// Cluster of every instance; `None` marks an outlier.
    pub assignment: Vec<Option<usize>>,
    pub sizes: Vec<usize>,
    /// `z × dim` unit prototypes, filled in by [`make_prototypes`].
    pub prototypes: Option<Tensor2>,
}

impl ClusterState {
    pub fn z(&self) -> usize {
        self.sizes.len()
    }

    pub fn outliers(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_none()).count()
    }

    /// Indices of clustered instances, ascending.
    pub fn clustered(&self) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i].is_some())
            .collect()
    }
}

/// DBSCAN with Euclidean distance; neighborhoods are closed balls of radius `eps`.
///
/// Points are visited in ascending index order and every cluster is fully
/// expanded before the next one starts, so a border point within reach of
/// several clusters joins the one discovered first. Callers cluster
/// unit-normalized embeddings.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> ClusterState {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| euclidean(&points[i], &points[j]) <= eps).collect())
        .collect();
    expand_clusters(&neighbors, min_samples)
}

/// [`dbscan`] over a precomputed symmetric distance matrix.
pub fn dbscan_precomputed(distances: &Tensor2, eps: f64, min_samples: usize) -> ClusterState {
    let neighbors: Vec<Vec<usize>> = distances
        .iter_rows()
        .map(|row| (0..row.len()).filter(|&j| row[j] <= eps).collect())
        .collect();
    expand_clusters(&neighbors, min_samples)
}

fn expand_clusters(neighbors: &[Vec<usize>], min_samples: usize) -> ClusterState {
    let n = neighbors.len();
    let is_core = |i: usize| neighbors[i].len() >= min_samples;

    let mut assignment: Vec<Option<usize>> = vec![None; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if assignment[start].is_some() || !is_core(start) {
            continue;
        }
        let c = sizes.len();
        let mut size = 0;
        let mut stack = vec![start];
        assignment[start] = Some(c);
        while let Some(p) = stack.pop() {
            size += 1;
            if !is_core(p) {
                continue;
            }
            for &q in &neighbors[p] {
                if assignment[q].is_none() {
                    assignment[q] = Some(c);
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    ClusterState {
        assignment,
        sizes,
        prototypes: None,
    }
}

/// Unit-normalized mean of each cluster's unit-normalized members.
pub fn make_prototypes(mut state: ClusterState, instances: &[Vec<f64>]) -> Result<ClusterState> {
    if state.z() == 0 {
        return Err(Error::NoClusters);
    }
    if instances.len() != state.assignment.len() {
        return Err(Error::Shape(format!(
            "{} instances for {} assignments",
            instances.len(),
            state.assignment.len()
        )));
    }
    let dim = instances[0].len();
    let mut sums = Tensor2::zeros(state.z(), dim);
    for (x, a) in instances.iter().zip(&state.assignment) {
        if let Some(k) = *a {
            if x.len() != dim {
                return Err(Error::Shape(format!("instance width {} != {dim}", x.len())));
            }
            let unit = normalized(x)?;
            for (s, u) in sums.row_mut(k).iter_mut().zip(unit) {
                *s += u;
            }
        }
    }
    for k in 0..state.z() {
        let size = state.sizes[k] as f64;
        let mean: Vec<f64> = sums.row(k).iter().map(|s| s / size).collect();
        let unit = normalized(&mean).map_err(|_| Error::Numeric(format!("members of cluster {k} cancel out")))?;
        sums.row_mut(k).copy_from_slice(&unit);
    }
    state.prototypes = Some(sums);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_separated_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(vec![0.01 * i as f64, 0.0]);
            pts.push(vec![5.0, 0.01 * i as f64]);
        }
        let s = dbscan(&pts, 0.5, 2);
        assert_eq!(s.z(), 2);
        assert_eq!(s.outliers(), 0);
        assert_eq!(s.sizes, vec![10, 10]);
        assert!((0..20).all(|i| s.assignment[i] == Some(i % 2)));
    }

    #[test]
    fn identical_points_form_one_cluster_and_isolated_point_is_outlier() {
        let mut pts = vec![vec![1.0, 2.0]; 4];
        pts.push(vec![100.0, 0.0]);
        let s = dbscan(&pts, 0.1, 2);
        assert_eq!(s.z(), 1);
        assert_eq!(s.assignment[4], None);
        assert_eq!(s.clustered(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn border_point_joins_first_cluster() {
        // a chain of core points links every point into one cluster
        let pts: Vec<Vec<f64>> = [0.0, 0.5, 1.5, 2.5, 3.0].iter().map(|&x| vec![x]).collect();
        let s = dbscan(&pts, 1.0, 3);

        assert_eq!(s.z(), 1);
        let s = dbscan(&pts, 1.0, 4);
        assert_eq!(s.z(), 0);
        let pts: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 0.3, 1.0, 1.7, 1.8, 1.9, 2.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let s = dbscan(&pts, 0.75, 4);
        assert_eq!(s.z(), 2);
        assert_eq!(s.sizes, vec![5, 4]);
        assert_eq!(s.assignment[4], Some(0));
    }

    #[test]
    fn prototypes_are_normalized_means() {
        let pts = vec![vec![2.0, 0.0], vec![0.0, 3.0], vec![9.0, 9.0]];
        let s = ClusterState {
            assignment: vec![Some(0), Some(0), Some(1)],
            sizes: vec![2, 1],
            prototypes: None,
        };
        let s = make_prototypes(s, &pts).unwrap();
        let p = s.prototypes.unwrap();
        let h = 0.5f64.sqrt();
        assert!((p.get(0, 0) - h).abs() < 1e-15 && (p.get(0, 1) - h).abs() < 1e-15);
        assert!((p.get(1, 0) - h).abs() < 1e-15);
    }

    #[test]
    fn no_clusters_is_an_error() {
        let s = dbscan(&[vec![0.0], vec![5.0]], 1.0, 2);
        assert!(matches!(
            make_prototypes(s, &[vec![0.0], vec![5.0]]),
            Err(Error::NoClusters)
        ));
    }
}
