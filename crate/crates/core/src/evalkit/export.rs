use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numkit::Tensor2;
use crate::relnet::{Model, SequenceEmbedding, LEVEL_PAIRS};
use crate::skeldata::SkeletonSequence;

/// Elementwise mean of every collaborative relation matrix over all frames,
/// in level-pair order.
pub fn mean_relations(model: &Model, seqs: &[SkeletonSequence]) -> Result<Vec<Tensor2>> {
    let mut sums: Option<Vec<Tensor2>> = None;
    let mut frames = 0usize;
    for seq in seqs {
        for frame in seq.frames() {
            let rel = model.frame_relations(frame)?;
            match sums.as_mut() {
                None => sums = Some(rel.0),
                Some(acc) => {
                    for (a, r) in acc.iter_mut().zip(&rel.0) {
                        a.add_assign(r)?;
                    }
                }
            }
            frames += 1;
        }
    }
    let sums = sums.ok_or_else(|| Error::InvalidArgument("no frames to average".into()))?;
    Ok(sums.into_iter().map(|s| s.scale(1.0 / frames as f64)).collect())
}

/// Writes `relations_{a}{b}.csv` (levels counted from 1) into `dir`; returns the paths.
pub fn export_relations(model: &Model, seqs: &[SkeletonSequence], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mats = mean_relations(model, seqs)?;
    let mut paths = Vec::with_capacity(mats.len());
    for (&(a, b), m) in LEVEL_PAIRS.iter().zip(&mats) {
        let path = dir.join(format!("relations_{}{}.csv", a + 1, b + 1));
        let mut w = csv::Writer::from_path(&path)?;
        for row in m.iter_rows() {
            w.write_record(row.iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// One row per sequence: `seq_index,id,view,e0,e1,…`.
pub fn write_embeddings_csv(embeddings: &[SequenceEmbedding], path: &Path) -> Result<()> {
    let dim = embeddings.first().map_or(0, |e| e.values.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["seq_index".to_owned(), "id".to_owned(), "view".to_owned()];
    header.extend((0..dim).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for (i, e) in embeddings.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            e.identity.clone().unwrap_or_default(),
            e.view.clone().unwrap_or_default(),
        ];
        rec.extend(e.values.iter().map(|v| format!("{v:.17e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relnet::ModelConfig;
    use crate::skeldata::PartitionScheme;
    use crate::synthgait::WalkerSpec;

    fn model() -> Model {
        Model::new(ModelConfig::default(), PartitionScheme::builtin20(), 2).unwrap()
    }

    #[test]
    fn single_frame_export_equals_frame_relations() {
        let m = model();
        let seq = WalkerSpec::reference("a").render(1, 30.0, 0.1).unwrap();
        let mean = mean_relations(&m, std::slice::from_ref(&seq)).unwrap();
        assert_eq!(mean, m.frame_relations(&seq.frames()[0]).unwrap().0);
    }

    #[test]
    fn two_frames_average_and_rows_sum_to_one() {
        let m = model();
        let seq = WalkerSpec::reference("a").render(2, 5.0, 0.0).unwrap();
        let mean = mean_relations(&m, std::slice::from_ref(&seq)).unwrap();
        let r0 = m.frame_relations(&seq.frames()[0]).unwrap().0;
        let r1 = m.frame_relations(&seq.frames()[1]).unwrap().0;
        for k in 0..LEVEL_PAIRS.len() {
            let expected = r0[k].add(&r1[k]).unwrap().scale(0.5);
            for (x, y) in mean[k].data().iter().zip(expected.data()) {
                assert!((x - y).abs() < 1e-15);
            }
            for row in mean[k].iter_rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn relation_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let seq = WalkerSpec::reference("a").render(3, 30.0, 0.0).unwrap();
        let paths = export_relations(&m, std::slice::from_ref(&seq), dir.path()).unwrap();
        assert_eq!(paths.len(), 6);
        assert!(paths[1].ends_with("relations_12.csv"));
        let mean = mean_relations(&m, std::slice::from_ref(&seq)).unwrap();
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&paths[1])
            .unwrap();
        let rows: Vec<Vec<f64>> = r
            .records()
            .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), mean[1].rows());
        assert_eq!(rows[0], mean[1].row(0));
    }
}
