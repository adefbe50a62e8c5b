use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    dbscan, dbscan_precomputed, jaccard_distances, make_prototypes, record_spc_loss, spc_loss, ClusterSpace,
    ClusterState, ReciprocalParams, SpcConfig,
};
use crate::error::{Error, Result};
use crate::numkit::{normalized, AdamState, Graph, Objective, ParamTape, Tensor2};
use crate::relnet::Model;
use crate::skeldata::SkeletonSequence;

/// Training aborts after this many consecutive epochs without a cluster.
pub const MAX_EMPTY_EPOCHS: usize = 5;

/// One row of the training log. `mean_loss` is empty for skipped epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub z: usize,
    pub n_outliers: usize,
    pub mean_loss: Option<f64>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub optimizer: AdamState,
}

/// Encodes every sequence and clusters the unit-normalized embeddings.
pub fn cluster_sequences(model: &Model, seqs: &[SkeletonSequence], cfg: &SpcConfig) -> Result<ClusterState> {
    let raw: Vec<Vec<f64>> = model.encode_all(seqs)?.into_iter().map(|e| e.values).collect();
    let units = raw.iter().map(|v| normalized(v)).collect::<Result<Vec<_>>>()?;
    let state = match cfg.space {
        ClusterSpace::Unit => dbscan(&units, cfg.eps, cfg.min_samples),
        ClusterSpace::Centered => dbscan(&centered_units(&raw)?, cfg.eps, cfg.min_samples),
        ClusterSpace::Jaccard { k1, k2 } => {
            let d = jaccard_distances(&units, ReciprocalParams { k1, k2 })?;
            dbscan_precomputed(&d, cfg.eps, cfg.min_samples)
        }
    };
    if state.z() == 0 {
        return Ok(state);
    }
    make_prototypes(state, &units)
}

/// Unit-normalized deviations from the mean embedding.
fn centered_units(raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = raw.len() as f64;
    let mut mean = vec![0.0; raw[0].len()];
    for v in raw {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n;
        }
    }
    raw.iter()
        .map(|v| {
            let d: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
            normalized(&d)
        })
        .collect()
}

/// Mean loss of a batch; its gradient is accumulated into `grads`.
///
/// Every instance is differentiated on its own graph (the prototypes are
/// constants, so instances do not interact) and the per-instance gradients
/// are summed in batch order.
fn batch_loss_and_grad(
    model: &Model,
    batch: &[&SkeletonSequence],
    targets: &[usize],
    prototypes: &Tensor2,
    tau: f64,
    grads: &mut ParamTape,
) -> Result<f64> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::InvalidArgument(
            "loss needs a non-empty batch with one target each".into(),
        ));
    }
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .zip(targets.par_iter())
        .map(|(seq, &t)| {
            let mut g = Graph::new();
            let emb = model.record_sequence(&mut g, seq)?;
            let loss = record_spc_loss(&mut g, emb, &[t], prototypes, tau)?;
            let loss = g.scale(loss, scale);
            let mut local = model.params().clone();
            local.zero_grads();
            g.backward(loss, &mut local)?;
            Ok((g.value(loss).data()[0], local))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (loss, local) in parts {
        total += loss;
        for id in grads.ids() {
            grads.grad_mut(id).add_assign(local.grad(id))?;
        }
    }
    Ok(total)
}

/// Alternates clustering and prototype contrastive updates for `cfg.epochs` epochs.
///
/// `on_epoch` runs after every epoch, skipped ones included, with the updated
/// model; it is the hook for logging and checkpointing.
pub fn train(
    seqs: &[SkeletonSequence],
    model: &mut Model,
    cfg: &SpcConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Model, &AdamState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut empty_run = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let state = cluster_sequences(model, seqs, cfg)?;
        let n_outliers = state.outliers();
        let mean_loss = match &state.prototypes {
            None => {
                empty_run += 1;
                log::warn!("epoch {epoch}: no clusters at eps {}, skipping update", cfg.eps);
                None
            }
            Some(prototypes) => {
                empty_run = 0;
                let mut order = state.clustered();
                order.shuffle(&mut rng);
                let mut weighted = 0.0;
                for chunk in order.chunks(cfg.batch_size) {
                    let batch: Vec<&SkeletonSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
                    let targets: Vec<usize> = chunk.iter().map(|&i| state.assignment[i].expect("clustered")).collect();
                    let mut grads = model.params().clone();
                    grads.zero_grads();
                    let loss = batch_loss_and_grad(model, &batch, &targets, prototypes, cfg.tau, &mut grads)?;
                    let params = model.params_mut();
                    for id in grads.ids() {
                        *params.grad_mut(id) = grads.grad(id).clone();
                    }
                    adam.step(params)?;
                    weighted += loss * chunk.len() as f64;
                }
                Some(weighted / order.len() as f64)
            }
        };
        let entry = EpochLog {
            epoch,
            z: state.z(),
            n_outliers,
            mean_loss,
            wall_time_ms: started.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: z={} outliers={} loss={}",
            entry.z,
            entry.n_outliers,
            mean_loss.map_or("-".to_owned(), |l| format!("{l:.6}"))
        );
        on_epoch(&entry, model, &adam)?;
        log.push(entry);
        if empty_run >= MAX_EMPTY_EPOCHS {
            return Err(Error::ClusteringCollapsed(empty_run));
        }
    }
    Ok(TrainOutcome { log, optimizer: adam })
}

/// The full loss on a fixed batch with fixed prototypes, as a function of
/// the encoder parameters.
pub struct SpcObjective {
    model: Model,
    seqs: Vec<SkeletonSequence>,
    targets: Vec<usize>,
    prototypes: Tensor2,
    tau: f64,
}

impl SpcObjective {
    pub fn new(
        model: Model,
        seqs: Vec<SkeletonSequence>,
        targets: Vec<usize>,
        prototypes: Tensor2,
        tau: f64,
    ) -> Result<Self> {
        if seqs.is_empty() || seqs.len() != targets.len() {
            return Err(Error::InvalidArgument("objective needs one target per sequence".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= prototypes.rows()) {
            return Err(Error::InvalidArgument(format!(
                "target {t} out of range for {} prototypes",
                prototypes.rows()
            )));
        }
        Ok(Self {
            model,
            seqs,
            targets,
            prototypes,
            tau,
        })
    }

    /// Clusters `seqs` with the current model and keeps the clustered ones.
    pub fn from_clustering(model: Model, seqs: &[SkeletonSequence], cfg: &SpcConfig) -> Result<Self> {
        let state = cluster_sequences(&model, seqs, cfg)?;
        let prototypes = state.prototypes.clone().ok_or(Error::NoClusters)?;
        let kept = state.clustered();
        let targets = kept.iter().map(|&i| state.assignment[i].expect("clustered")).collect();
        let batch = kept.iter().map(|&i| seqs[i].clone()).collect();
        Self::new(model, batch, targets, prototypes, cfg.tau)
    }

    pub fn params(&self) -> &ParamTape {
        self.model.params()
    }

    pub fn num_clusters(&self) -> usize {
        self.prototypes.rows()
    }

    fn with_params(&self, params: &ParamTape) -> Result<Model> {
        Model::from_parts(self.model.config().clone(), self.model.scheme().clone(), params.clone())
    }
}

impl Objective for SpcObjective {
    fn loss(&self, params: &ParamTape) -> Result<f64> {
        let model = self.with_params(params)?;
        let units = model
            .encode_all(&self.seqs)?
            .iter()
            .map(|e| normalized(&e.values))
            .collect::<Result<Vec<_>>>()?;
        spc_loss(&units, &self.targets, &self.prototypes, self.tau)
    }

    fn loss_with_branches(&self, params: &ParamTape) -> Result<(f64, Option<u64>)> {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let model = self.with_params(params)?;
        let traced = self
            .seqs
            .par_iter()
            .map(|s| model.encode_traced(s))
            .collect::<Result<Vec<_>>>()?;
        let mut h = DefaultHasher::new();
        let units = traced
            .iter()
            .map(|(e, branches)| {
                branches.hash(&mut h);
                normalized(&e.values)
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = spc_loss(&units, &self.targets, &self.prototypes, self.tau)?;
        Ok((loss, Some(h.finish())))
    }

    fn loss_and_grad(&self, params: &mut ParamTape) -> Result<f64> {
        let model = self.with_params(params)?;
        params.zero_grads();
        let batch: Vec<&SkeletonSequence> = self.seqs.iter().collect();
        batch_loss_and_grad(&model, &batch, &self.targets, &self.prototypes, self.tau, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, GradCheckOptions};
    use crate::relnet::ModelConfig;
    use crate::skeldata::PartitionScheme;
    use crate::synthgait::{generate, population, PopulationOptions};

    fn setup(ids: usize, per: usize) -> (Model, Vec<SkeletonSequence>) {
        let specs = population(ids, 4, &PopulationOptions::default());
        let seqs = generate(&specs, per, 4, 30.0, 11).unwrap();
        let model = Model::new(ModelConfig::default(), PartitionScheme::builtin20(), 7).unwrap();
        (model, seqs)
    }

    #[test]
    fn batched_gradient_matches_single_graph() {
        let (model, seqs) = setup(2, 2);
        let protos = Tensor2::from_vec(
            2,
            model.embedding_dim(),
            (0..2 * 144).map(|k| ((k * 7) % 11) as f64 - 5.0).collect(),
        )
        .unwrap()
        .normalize_rows()
        .unwrap();
        let targets = [0, 1, 1, 0];
        let refs: Vec<&SkeletonSequence> = seqs.iter().collect();

        let mut split = model.params().clone();
        split.zero_grads();
        let a = batch_loss_and_grad(&model, &refs, &targets, &protos, 0.08, &mut split).unwrap();

        let mut g = Graph::new();
        let emb = model.record_batch(&mut g, &refs).unwrap();
        let loss = record_spc_loss(&mut g, emb, &targets, &protos, 0.08).unwrap();
        let mut whole = model.params().clone();
        whole.zero_grads();
        g.backward(loss, &mut whole).unwrap();

        assert!((a - g.value(loss).data()[0]).abs() < 1e-12);
        for id in whole.ids() {
            for (x, y) in whole.grad(id).data().iter().zip(split.grad(id).data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn skipped_epochs_abort_training() {
        let (mut model, seqs) = setup(2, 2);
        let cfg = SpcConfig {
            eps: 1e-9,
            epochs: 8,
            space: ClusterSpace::Unit,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let before = model.params().clone();
        let err = train(&seqs, &mut model, &cfg, |e, _, _| {
            seen.push(e.clone());
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::ClusteringCollapsed(5)));
        assert_eq!(seen.len(), 5);
        assert!(seen
            .iter()
            .all(|e| e.z == 0 && e.mean_loss.is_none() && e.n_outliers == 4));
        assert_eq!(model.params(), &before);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let (mut model, seqs) = setup(3, 3);
            let cfg = SpcConfig {
                epochs: 2,
                batch_size: 4,
                seed: 5,
                ..Default::default()
            };
            let out = train(&seqs, &mut model, &cfg, |_, _, _| Ok(())).unwrap();
            let log: Vec<_> = out.log.iter().map(|e| (e.z, e.n_outliers, e.mean_loss)).collect();
            (log, model.params().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn objective_gradient_passes_finite_differences() {
        let (model, seqs) = setup(3, 1);
        let protos = Tensor2::from_vec(3, 144, (0..3 * 144).map(|k| ((k * 13) % 17) as f64 - 8.0).collect())
            .unwrap()
            .normalize_rows()
            .unwrap();
        let obj = SpcObjective::new(model, seqs, vec![0, 1, 2], protos, 0.08).unwrap();
        let opts = GradCheckOptions {
            coords_per_param: 4,
            ..Default::default()
        };
        let report = grad_check(&obj, obj.params(), &opts).unwrap();
        assert!(report.passed(), "max rel error {}", report.max_rel_error());
    }
}
