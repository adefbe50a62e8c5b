use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{act, cmc, mact, mean_ap, mrcl, rank, EmbeddingSet, RankOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub rank: RankOptions,
    /// Number of probe/gallery splits to average; 1 keeps the given split.
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            rank: RankOptions::default(),
            repetitions: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    pub map: f64,
    pub mact: f64,
    pub mrcl: f64,
    /// Tightness per class, by label.
    pub per_class_act: BTreeMap<String, f64>,
    pub repetitions: usize,
    pub probes: usize,
    pub gallery: usize,
}

/// Pools `probe` and `gallery` and redraws, per identity, as many probes as
/// `probe` had of that identity.
pub fn resplit(
    probe: &EmbeddingSet,
    gallery: &EmbeddingSet,
    rng: &mut ChaCha8Rng,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let pool = probe.union(gallery)?;
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in pool.labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut probe_count: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &probe.labels {
        *probe_count.entry(l).or_default() += 1;
    }
    let (mut p_idx, mut g_idx) = (Vec::new(), Vec::new());
    for (label, mut members) in by_label {
        members.shuffle(rng);
        let k = probe_count.get(label).copied().unwrap_or(0);
        p_idx.extend_from_slice(&members[..k]);
        g_idx.extend_from_slice(&members[k..]);
    }
    p_idx.sort_unstable();
    g_idx.sort_unstable();
    let pick = |idx: &[usize]| {
        EmbeddingSet::with_views(
            idx.iter().map(|&i| pool.vectors[i].clone()).collect(),
            idx.iter().map(|&i| pool.labels[i].clone()).collect(),
            idx.iter().map(|&i| pool.views[i].clone()).collect(),
        )
    };
    Ok((pick(&p_idx)?, pick(&g_idx)?))
}

/// Matching metrics (averaged over splits) plus class-geometry metrics on
/// the union of probe and gallery.
pub fn evaluate(probe: &EmbeddingSet, gallery: &EmbeddingSet, opts: &EvalOptions) -> Result<MetricReport> {
    if opts.repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut cmc_sum, mut map_sum) = ([0.0; 3], 0.0);
    for _ in 0..opts.repetitions {
        let (p, g) = if opts.repetitions == 1 {
            (probe.clone(), gallery.clone())
        } else {
            resplit(probe, gallery, &mut rng)?
        };
        let ranked = rank(&p, &g, opts.rank)?;
        for (s, v) in cmc_sum.iter_mut().zip(cmc(&ranked, &[1, 5, 10])?) {
            *s += v;
        }
        map_sum += mean_ap(&ranked)?;
    }
    let reps = opts.repetitions as f64;
    let pooled = probe.union(gallery)?;
    let per_class = act(&pooled.vectors, &pooled.labels)?;
    Ok(MetricReport {
        top1: cmc_sum[0] / reps,
        top5: cmc_sum[1] / reps,
        top10: cmc_sum[2] / reps,
        map: map_sum / reps,
        mact: mact(&per_class),
        mrcl: mrcl(&pooled.vectors, &pooled.labels)?,
        per_class_act: per_class.into_iter().collect(),
        repetitions: opts.repetitions,
        probes: probe.len(),
        gallery: gallery.len(),
    })
}

impl MetricReport {
    /// `metric,value` rows; per-class tightness appears as `act:<label>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["metric", "value"])?;
        let rows = [
            ("top1", self.top1),
            ("top5", self.top5),
            ("top10", self.top10),
            ("mAP", self.map),
            ("mACT", self.mact),
            ("mRCL", self.mrcl),
        ];
        for (k, v) in rows {
            w.write_record([k.to_owned(), format!("{v:.17e}")])?;
        }
        for (k, v) in &self.per_class_act {
            w.write_record([format!("act:{k}"), format!("{v:.17e}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "probes {}  gallery {}  splits {}",
            self.probes, self.gallery, self.repetitions
        )?;
        writeln!(f, "{:<8}{:>10}", "metric", "value")?;
        for (k, v) in [
            ("top-1", self.top1),
            ("top-5", self.top5),
            ("top-10", self.top10),
            ("mAP", self.map),
            ("mACT", self.mact),
            ("mRCL", self.mrcl),
        ] {
            writeln!(f, "{k:<8}{v:>10.4}")?;
        }
        Ok(())
    }
}
