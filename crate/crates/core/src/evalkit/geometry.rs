use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numkit::{dot, l2_norm};

/// `1 − cos(a, b)`; zero vectors have no direction and are rejected.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine distance of a zero vector".into()));
    }
    Ok(1.0 - dot(a, b) / (na * nb))
}

/// Class centroids and the sample-to-centroid cosine distances behind the
/// tightness and looseness ratios. Classes are ordered by label.
#[derive(Debug, Clone)]
pub struct ClassGeometry {
    pub classes: Vec<String>,
    pub centroids: Vec<Vec<f64>>,
    /// `to_centroids[i][j][z]`: sample `j` of class `i` to centroid `z`.
    to_centroids: Vec<Vec<Vec<f64>>>,
}

impl ClassGeometry {
    pub fn new(vectors: &[Vec<f64>], labels: &[String]) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} vectors, {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let mut groups: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
        for (v, l) in vectors.iter().zip(labels) {
            groups.entry(l).or_default().push(v);
        }
        if groups.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class geometry needs at least 2 classes, got {}",
                groups.len()
            )));
        }
        let dim = vectors[0].len();
        let centroids: Vec<Vec<f64>> = groups
            .values()
            .map(|members| {
                let mut c = vec![0.0; dim];
                for m in members {
                    for (ci, x) in c.iter_mut().zip(m.iter()) {
                        *ci += x;
                    }
                }
                c.iter().map(|x| x / members.len() as f64).collect()
            })
            .collect();
        let to_centroids = groups
            .values()
            .map(|members| {
                members
                    .iter()
                    .map(|v| centroids.iter().map(|c| cosine_distance(v, c)).collect())
                    .collect::<Result<Vec<Vec<f64>>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            classes: groups.keys().map(|k| k.to_string()).collect(),
            centroids,
            to_centroids,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// `Σ_i (1/s_i) Σ_j Σ_z D(v_j^i, c_z)`.
    fn global_sum(&self) -> f64 {
        self.to_centroids
            .iter()
            .map(|class| class.iter().map(|d| d.iter().sum::<f64>()).sum::<f64>() / class.len() as f64)
            .sum()
    }

    /// Average distance of every sample to every centroid, class-balanced.
    pub fn global_average(&self) -> f64 {
        let c = self.num_classes() as f64;
        self.global_sum() / (c * c)
    }

    /// Mean distance of class `k`'s samples to their own centroid.
    pub fn intra_class(&self, k: usize) -> f64 {
        let class = &self.to_centroids[k];
        class.iter().map(|d| d[k]).sum::<f64>() / class.len() as f64
    }

    /// Sum of cosine distances over all ordered centroid pairs, `i = j` included.
    pub fn centroid_sum(&self) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.centroids {
            for b in &self.centroids {
                total += cosine_distance(a, b)?;
            }
        }
        Ok(total)
    }
}

/// Tightness of every class (label order): global average distance over the
/// class's own intra-class distance. A class whose samples all point along
/// their centroid gets `+∞`.
pub fn act(vectors: &[Vec<f64>], labels: &[String]) -> Result<Vec<(String, f64)>> {
    let geo = ClassGeometry::new(vectors, labels)?;
    let global = geo.global_average();
    Ok((0..geo.num_classes())
        .map(|k| {
            let intra = geo.intra_class(k);
            let value = if intra == 0.0 {
                log::warn!(
                    "class `{}` has zero intra-class distance; tightness is +inf",
                    geo.classes[k]
                );
                f64::INFINITY
            } else {
                global / intra
            };
            (geo.classes[k].clone(), value)
        })
        .collect())
}

/// Mean tightness over classes, leaving out `+∞` entries with a warning.
pub fn mact(per_class: &[(String, f64)]) -> f64 {
    let finite: Vec<f64> = per_class.iter().map(|(_, v)| *v).filter(|v| v.is_finite()).collect();
    if finite.len() < per_class.len() {
        log::warn!(
            "mean tightness leaves out {} class(es) with infinite tightness",
            per_class.len() - finite.len()
        );
    }
    if finite.is_empty() {
        return f64::INFINITY;
    }
    finite.iter().sum::<f64>() / finite.len() as f64
}

/// Inter-class looseness: centroid-to-centroid distance sum over the
/// class-balanced sample-to-centroid distance sum.
pub fn mrcl(vectors: &[Vec<f64>], labels: &[String]) -> Result<f64> {
    let geo = ClassGeometry::new(vectors, labels)?;
    let global = geo.global_sum();
    if global == 0.0 {
        return Err(Error::Numeric(
            "every sample coincides in direction with every centroid".into(),
        ));
    }
    Ok(geo.centroid_sum()? / global)
}
