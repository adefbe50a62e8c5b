//! Prototype contrastive training: density clustering of sequence embeddings,
//! per-cluster prototypes, the prototype contrastive loss and the alternating
//! cluster/optimize loop.

mod cluster;
mod rerank;
mod train;

pub use cluster::{dbscan, dbscan_precomputed, make_prototypes, ClusterState};
pub use rerank::{jaccard_distances, ReciprocalParams};
pub use train::{cluster_sequences, train, EpochLog, SpcObjective, TrainOutcome, MAX_EMPTY_EPOCHS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{dot, Graph, Tensor2, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpcConfig {
    /// DBSCAN neighborhood radius, in the units of `space`.
    pub eps: f64,
    /// DBSCAN core threshold, counting the point itself.
    pub min_samples: usize,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub space: ClusterSpace,
}

/// Distance DBSCAN runs on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ClusterSpace {
    /// Euclidean distance between unit-normalized embeddings.
    Unit,
    /// Euclidean distance between unit-normalized deviations from the mean embedding.
    Centered,
    /// k-reciprocal Jaccard distance over unit-normalized embeddings.
    Jaccard { k1: usize, k2: usize },
}

impl Default for SpcConfig {
    fn default() -> Self {
        Self {
            eps: 0.8,
            min_samples: 2,
            tau: 0.08,
            batch_size: 128,
            epochs: 30,
            lr: 0.00035,
            seed: 0,
            space: ClusterSpace::Jaccard { k1: 20, k2: 6 },
        }
    }
}

impl SpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.min_samples == 0 {
            return Err(Error::InvalidArgument("min_samples must be at least 1".into()));
        }
        check_tau(self.tau)?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

/// Loss value for unit-normalized `instances` against unit `prototypes`.
///
/// Per instance: `-log softmax(⟨x, P⟩ / τ)[target]`, averaged over the batch.
pub fn spc_loss(instances: &[Vec<f64>], targets: &[usize], prototypes: &Tensor2, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if instances.is_empty() || instances.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "loss needs a non-empty batch with one target each ({} instances, {} targets)",
            instances.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (x, &t) in instances.iter().zip(targets) {
        if x.len() != prototypes.cols() || t >= prototypes.rows() {
            return Err(Error::Shape(format!(
                "instance of width {} with target {t} against {}×{} prototypes",
                x.len(),
                prototypes.rows(),
                prototypes.cols()
            )));
        }
        let logits: Vec<f64> = prototypes.iter_rows().map(|p| dot(x, p) / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[t];
    }
    Ok(total / instances.len() as f64)
}

/// Records the loss of a `B × dim` embedding batch; prototypes enter as constants.
pub fn record_spc_loss(
    g: &mut Graph,
    embeddings: Var,
    targets: &[usize],
    prototypes: &Tensor2,
    tau: f64,
) -> Result<Var> {
    check_tau(tau)?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("loss needs a non-empty batch".into()));
    }
    let unit = g.normalize_rows(embeddings)?;
    let protos_t = g.constant(prototypes.transpose());
    let sims = g.matmul(unit, protos_t)?;
    let logits = g.scale(sims, 1.0 / tau);
    g.softmax_cross_entropy(logits, targets)
}
