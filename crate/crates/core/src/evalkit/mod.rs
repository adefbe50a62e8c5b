//! Probe/gallery matching, CMC and mAP, class-geometry metrics (intra-class
//! tightness and inter-class looseness), and CSV exports.

mod export;
mod geometry;
mod report;

pub use export::{export_relations, mean_relations, write_embeddings_csv};
pub use geometry::{act, cosine_distance, mact, mrcl, ClassGeometry};
pub use report::{evaluate, resplit, EvalOptions, MetricReport};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numkit::{euclidean, normalized};
use crate::relnet::SequenceEmbedding;

/// Labeled embeddings, one row per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    pub views: Vec<Option<String>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        let views = vec![None; vectors.len()];
        Self::with_views(vectors, labels, views)
    }

    pub fn with_views(vectors: Vec<Vec<f64>>, labels: Vec<String>, views: Vec<Option<String>>) -> Result<Self> {
        if vectors.len() != labels.len() || vectors.len() != views.len() {
            return Err(Error::Shape(format!(
                "{} vectors, {} labels, {} views",
                vectors.len(),
                labels.len(),
                views.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != vectors[0].len()) {
            return Err(Error::Shape(format!(
                "embedding widths differ: {} vs {}",
                vectors[0].len(),
                v.len()
            )));
        }
        Ok(Self { vectors, labels, views })
    }

    /// Requires every embedding to carry an identity.
    pub fn from_embeddings(embeddings: &[SequenceEmbedding]) -> Result<Self> {
        let labels = embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.identity
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument(format!("sequence {i} has no identity label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_views(
            embeddings.iter().map(|e| e.values.clone()).collect(),
            labels,
            embeddings.iter().map(|e| e.view.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(Vec::len)
    }

    /// Concatenation of `self` and `other`.
    pub fn union(&self, other: &EmbeddingSet) -> Result<EmbeddingSet> {
        let mut out = self.clone();
        out.vectors.extend(other.vectors.iter().cloned());
        out.labels.extend(other.labels.iter().cloned());
        out.views.extend(other.views.iter().cloned());
        Self::with_views(out.vectors, out.labels, out.views)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankOptions {
    /// Match unit-normalized embeddings instead of raw ones.
    pub normalize: bool,
    /// Drop gallery entries whose view tag equals the probe's.
    pub exclude_same_view: bool,
}

/// Gallery order for every probe, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedGallery {
    pub order: Vec<Vec<usize>>,
    pub distances: Vec<Vec<f64>>,
    pub probe_labels: Vec<String>,
    pub gallery_labels: Vec<String>,
}

/// Ranks the gallery by ascending Euclidean distance to each probe; ties keep gallery order.
pub fn rank(probe: &EmbeddingSet, gallery: &EmbeddingSet, opts: RankOptions) -> Result<RankedGallery> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    if let (Some(p), Some(g)) = (probe.dim(), gallery.dim()) {
        if p != g {
            return Err(Error::Shape(format!("probe width {p} != gallery width {g}")));
        }
    }
    let prep = |set: &EmbeddingSet| -> Result<Vec<Vec<f64>>> {
        if opts.normalize {
            set.vectors.iter().map(|v| normalized(v)).collect()
        } else {
            Ok(set.vectors.clone())
        }
    };
    let (pv, gv) = (prep(probe)?, prep(gallery)?);
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..pv.len())
        .into_par_iter()
        .map(|p| {
            let mut scored: Vec<(usize, f64)> = (0..gv.len())
                .filter(|&g| {
                    !(opts.exclude_same_view && probe.views[p].is_some() && probe.views[p] == gallery.views[g])
                })
                .map(|g| (g, euclidean(&pv[p], &gv[g])))
                .collect();
            scored.sort_by(|a, b| a.1.total_cmp(&b.1));
            scored.into_iter().unzip()
        })
        .collect();
    let (order, distances) = rows.into_iter().unzip();
    Ok(RankedGallery {
        order,
        distances,
        probe_labels: probe.labels.clone(),
        gallery_labels: gallery.labels.clone(),
    })
}

impl RankedGallery {
    /// 0-based positions of the probe's same-identity entries; `None` if there are none.
    fn hit_positions(&self, p: usize) -> Option<Vec<usize>> {
        let hits: Vec<usize> = self.order[p]
            .iter()
            .enumerate()
            .filter(|(_, &g)| self.gallery_labels[g] == self.probe_labels[p])
            .map(|(pos, _)| pos)
            .collect();
        (!hits.is_empty()).then_some(hits)
    }

    /// Hit positions of scoreable probes; warns about the rest.
    fn scored_probes(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(self.order.len());
        for p in 0..self.order.len() {
            match self.hit_positions(p) {
                Some(h) => out.push(h),
                None => log::warn!(
                    "probe {p} (identity `{}`) has no match in the gallery; excluded",
                    self.probe_labels[p]
                ),
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument(
                "no probe identity appears in the gallery".into(),
            ));
        }
        Ok(out)
    }
}

/// Fraction of probes with a correct match among the first `k`, for every `k`.
pub fn cmc(ranked: &RankedGallery, ks: &[usize]) -> Result<Vec<f64>> {
    let probes = ranked.scored_probes()?;
    let n = probes.len() as f64;
    Ok(ks
        .iter()
        .map(|&k| probes.iter().filter(|h| h[0] < k).count() as f64 / n)
        .collect())
}

/// Mean over probes of the average precision at each correct match.
pub fn mean_ap(ranked: &RankedGallery) -> Result<f64> {
    let probes = ranked.scored_probes()?;
    let total: f64 = probes
        .iter()
        .map(|hits| {
            hits.iter()
                .enumerate()
                .map(|(i, &pos)| (i + 1) as f64 / (pos + 1) as f64)
                .sum::<f64>()
                / hits.len() as f64
        })
        .sum();
    Ok(total / probes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(vs: &[&[f64]], labels: &[&str]) -> EmbeddingSet {
        EmbeddingSet::new(
            vs.iter().map(|v| v.to_vec()).collect(),
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ranks_by_distance_with_stable_ties() {
        let g = set(&[&[2.0], &[1.0], &[3.0], &[-1.0]], &["a", "b", "c", "d"]);
        let p = set(&[&[0.0]], &["b"]);
        let r = rank(&p, &g, RankOptions::default()).unwrap();
        // distances 2, 1, 3, 1: the tie between entries 1 and 3 keeps gallery order
        assert_eq!(r.order[0], vec![1, 3, 0, 2]);
        assert_eq!(r.distances[0], vec![1.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn exact_match_ranks_first() {
        let g = set(&[&[1.0, 2.0], &[0.5, 0.5]], &["a", "b"]);
        let p = set(&[&[0.5, 0.5]], &["b"]);
        let r = rank(&p, &g, RankOptions::default()).unwrap();
        assert_eq!((r.order[0][0], r.distances[0][0]), (1, 0.0));
        let one = set(&[&[3.0, 3.0]], &["x"]);
        assert_eq!(rank(&p, &one, RankOptions::default()).unwrap().order[0].len(), 1);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = set(&[&[1.0, 2.0]], &["a"]);
        let p = set(&[&[1.0]], &["a"]);
        assert!(matches!(rank(&p, &g, RankOptions::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn cmc_and_map_worked_examples() {
        // first correct match at rank 2
        let g = set(
            &[&[1.0], &[2.0], &[3.0], &[4.0], &[5.0], &[6.0]],
            &["x", "a", "y", "z", "w", "v"],
        );
        let p = set(&[&[0.9]], &["a"]);
        let r = rank(&p, &g, RankOptions::default()).unwrap();
        assert_eq!(cmc(&r, &[1, 5]).unwrap(), vec![0.0, 1.0]);

        // one correct entry at rank 2 of 2
        let g = set(&[&[1.0], &[2.0]], &["x", "a"]);
        let r = rank(&set(&[&[0.0]], &["a"]), &g, RankOptions::default()).unwrap();
        assert!((mean_ap(&r).unwrap() - 0.5).abs() < 1e-15);

        // correct entries at ranks 1 and 3
        let g = set(&[&[1.0], &[2.0], &[3.0]], &["a", "x", "a"]);
        let r = rank(&set(&[&[0.0]], &["a"]), &g, RankOptions::default()).unwrap();
        assert!((mean_ap(&r).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn cmc_at_ten_counts_half() {
        let vs: Vec<Vec<f64>> = (0..12).map(|k| vec![k as f64]).collect();
        let mut labels: Vec<String> = (0..12).map(|k| format!("o{k}")).collect();
        labels[0] = "a".into();
        labels[10] = "b".into();
        let g = EmbeddingSet::new(vs, labels).unwrap();
        let p = set(&[&[0.0], &[-1.0]], &["a", "b"]);
        let r = rank(&p, &g, RankOptions::default()).unwrap();
        assert_eq!(cmc(&r, &[10]).unwrap(), vec![0.5]);
    }

    #[test]
    fn self_matching_is_perfect_and_absent_probes_are_excluded() {
        let g = set(&[&[0.0, 1.0], &[5.0, 0.0], &[2.0, 2.0]], &["a", "b", "c"]);
        let r = rank(&g, &g, RankOptions::default()).unwrap();
        assert_eq!(cmc(&r, &[1]).unwrap(), vec![1.0]);
        assert_eq!(mean_ap(&r).unwrap(), 1.0);

        let p = set(&[&[0.0, 1.0], &[9.0, 9.0]], &["a", "nobody"]);
        let r = rank(&p, &g, RankOptions::default()).unwrap();
        assert_eq!(cmc(&r, &[1]).unwrap(), vec![1.0]);
        let p = set(&[&[9.0, 9.0]], &["nobody"]);
        assert!(cmc(&rank(&p, &g, RankOptions::default()).unwrap(), &[1]).is_err());
    }

    #[test]
    fn same_view_entries_can_be_excluded() {
        let g = EmbeddingSet::with_views(
            vec![vec![0.0], vec![1.0]],
            vec!["a".into(), "a".into()],
            vec![Some("front".into()), Some("side".into())],
        )
        .unwrap();
        let p = EmbeddingSet::with_views(vec![vec![0.0]], vec!["a".into()], vec![Some("front".into())]).unwrap();
        let opts = RankOptions {
            exclude_same_view: true,
            ..Default::default()
        };
        assert_eq!(rank(&p, &g, opts).unwrap().order[0], vec![1]);
        assert_eq!(rank(&p, &g, RankOptions::default()).unwrap().order[0], vec![0, 1]);
    }
}
