use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, ModelConfig, SequenceEmbedding};
use crate::error::{Error, Result};
use crate::numkit::{Graph, Mask, ParamId, ParamTape, Tensor2, Var};
use crate::skeldata::{
    build_graphs, center_frame, MultiLevelGraph, PartitionScheme, SkeletonFrame, SkeletonSequence, NUM_LEVELS,
};

/// Level pairs `(a, b)` with `a <= b` that carry collaborative relations.
pub const LEVEL_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Per-level node features, `n_l × D_h` each.
pub type NodeFeatures = [Tensor2; NUM_LEVELS];

/// Collaborative relation matrices in [`LEVEL_PAIRS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Relations(pub Vec<Tensor2>);

impl Relations {
    pub fn get(&self, a: usize, b: usize) -> &Tensor2 {
        let idx = LEVEL_PAIRS
            .iter()
            .position(|&p| p == (a, b))
            .unwrap_or_else(|| panic!("no relation for level pair ({a}, {b})"));
        &self.0[idx]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadTrace {
    pub attention: Var,
    pub output: Var,
}

/// Graph nodes produced while encoding one frame.
#[derive(Debug, Clone)]
pub struct FrameTrace {
    pub heads: [Vec<HeadTrace>; NUM_LEVELS],
    /// Head-averaged features before fusion.
    pub features: [Var; NUM_LEVELS],
    /// In [`LEVEL_PAIRS`] order.
    pub relations: Vec<Var>,
    pub fused: [Var; NUM_LEVELS],
    /// `(n_1 + n_2 + n_3) × D_h` stacked fused features.
    pub representation: Var,
}

#[derive(Debug, Clone)]
struct Ids {
    value: [Vec<ParamId>; NUM_LEVELS],
    relation: [Vec<ParamId>; NUM_LEVELS],
    fusion: Vec<ParamId>,
}

/// The encoder: configuration, partition scheme and learnable weights.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    scheme: PartitionScheme,
    params: ParamTape,
    ids: Ids,
    masks: [Arc<Mask>; NUM_LEVELS],
}

pub(crate) fn value_name(l: usize, s: usize) -> String {
    format!("level{}.head{}.w_v", l + 1, s + 1)
}

pub(crate) fn relation_name(l: usize, s: usize) -> String {
    format!("level{}.head{}.w_r", l + 1, s + 1)
}

pub(crate) fn fusion_name(a: usize, b: usize) -> String {
    format!("fusion.{}{}.w_c", a + 1, b + 1)
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor2 {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized above")
}

impl Model {
    /// Fresh model with uniform `±1/sqrt(fan_in)` weights drawn from `seed`.
    pub fn new(config: ModelConfig, scheme: PartitionScheme, seed: u64) -> Result<Self> {
        config.validate()?;
        scheme.validate()?;
        let h = config.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamTape::new();
        for l in 0..NUM_LEVELS {
            for s in 0..config.heads {
                params.register(value_name(l, s), uniform_init(&mut rng, 3, h, 3))?;
                params.register(relation_name(l, s), uniform_init(&mut rng, 2 * h, 1, 2 * h))?;
            }
        }
        for &(a, b) in &LEVEL_PAIRS {
            params.register(fusion_name(a, b), uniform_init(&mut rng, h, h, h))?;
        }
        Self::from_parts(config, scheme, params)
    }

    /// Assembles a model from existing weights, checking names and shapes.
    pub fn from_parts(config: ModelConfig, scheme: PartitionScheme, params: ParamTape) -> Result<Self> {
        config.validate()?;
        scheme.validate()?;
        let h = config.hidden;
        let lookup = |name: String, shape: (usize, usize)| -> Result<ParamId> {
            let id = params
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?} (hidden = {h})",
                    params.value(id).shape()
                )));
            }
            Ok(id)
        };
        let mut value: [Vec<ParamId>; NUM_LEVELS] = Default::default();
        let mut relation: [Vec<ParamId>; NUM_LEVELS] = Default::default();
        for l in 0..NUM_LEVELS {
            for s in 0..config.heads {
                value[l].push(lookup(value_name(l, s), (3, h))?);
                relation[l].push(lookup(relation_name(l, s), (2 * h, 1))?);
            }
        }
        let fusion = LEVEL_PAIRS
            .iter()
            .map(|&(a, b)| lookup(fusion_name(a, b), (h, h)))
            .collect::<Result<Vec<_>>>()?;
        let expected = NUM_LEVELS * config.heads * 2 + LEVEL_PAIRS.len();
        if params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameters, found {}",
                params.len()
            )));
        }
        let masks = [
            Arc::new(scheme.adjacency_mask(0)?),
            Arc::new(scheme.adjacency_mask(1)?),
            Arc::new(scheme.adjacency_mask(2)?),
        ];
        Ok(Self {
            config,
            scheme,
            params,
            ids: Ids {
                value,
                relation,
                fusion,
            },
            masks,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scheme(&self) -> &PartitionScheme {
        &self.scheme
    }

    pub fn params(&self) -> &ParamTape {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamTape {
        &mut self.params
    }

    /// Rows of a frame representation: `n_1 + n_2 + n_3`.
    pub fn rep_rows(&self) -> usize {
        self.scheme.total_nodes()
    }

    /// Length of a flattened sequence embedding.
    pub fn embedding_dim(&self) -> usize {
        self.rep_rows() * self.config.hidden
    }

    fn activate(&self, g: &mut Graph, x: Var) -> Var {
        match self.config.activation {
            Activation::Tanh => g.tanh(x),
            Activation::LeakyRelu => g.leaky_relu(x, self.config.leaky_slope),
            Activation::Identity => x,
        }
    }

    fn prepare<'s>(&'s self, frame: &SkeletonFrame) -> Result<MultiLevelGraph<'s>> {
        if self.config.center_frames {
            build_graphs(&center_frame(frame, &self.scheme)?, &self.scheme)
        } else {
            build_graphs(frame, &self.scheme)
        }
    }

    /// One structural relation head on level `l` with node positions `nodes`.
    pub fn record_head(&self, g: &mut Graph, nodes: Var, l: usize, s: usize) -> Result<HeadTrace> {
        let h = self.config.hidden;
        let w_v = g.param(&self.params, self.ids.value[l][s]);
        let w_r = g.param(&self.params, self.ids.relation[l][s]);
        let projected = g.matmul(nodes, w_v)?;
        let r_src = g.slice_rows(w_r, 0, h)?;
        let r_dst = g.slice_rows(w_r, h, 2 * h)?;
        let src = g.matmul(projected, r_src)?;
        let dst = g.matmul(projected, r_dst)?;
        let logits = g.outer_sum(src, dst)?;
        let logits = g.leaky_relu_on(logits, self.config.leaky_slope, &self.masks[l])?;
        let attention = g.softmax_rows(logits, Some(&self.masks[l]))?;
        let aggregated = g.matmul(attention, projected)?;
        let output = self.activate(g, aggregated);
        Ok(HeadTrace { attention, output })
    }

    /// Collaborative relations `softmax_j(<f_i^a, f_j^b>)` for every level pair.
    pub fn record_relations(g: &mut Graph, features: &[Var; NUM_LEVELS]) -> Result<Vec<Var>> {
        LEVEL_PAIRS
            .iter()
            .map(|&(a, b)| {
                let fb_t = g.transpose(features[b]);
                let scores = g.matmul(features[a], fb_t)?;
                g.softmax_rows(scores, None)
            })
            .collect()
    }

    /// Relation-weighted fusion. Every level reads the pre-fusion features.
    pub fn record_fusion(
        &self,
        g: &mut Graph,
        features: &[Var; NUM_LEVELS],
        relations: &[Var],
    ) -> Result<[Var; NUM_LEVELS]> {
        let mut fused = *features;
        for (k, &(a, b)) in LEVEL_PAIRS.iter().enumerate() {
            let w_c = g.param(&self.params, self.ids.fusion[k]);
            let gathered = g.matmul(relations[k], features[b])?;
            let mapped = g.matmul(gathered, w_c)?;
            let term = g.scale(mapped, self.config.fusion_weight);
            fused[a] = g.add(fused[a], term)?;
        }
        Ok(fused)
    }

    /// Records the full frame encoder.
    pub fn record_graph(&self, g: &mut Graph, graph: &MultiLevelGraph<'_>) -> Result<FrameTrace> {
        let mut heads: [Vec<HeadTrace>; NUM_LEVELS] = Default::default();
        let mut features = [None; NUM_LEVELS];
        for l in 0..NUM_LEVELS {
            let nodes = g.constant(graph.nodes(l).clone());
            for s in 0..self.config.heads {
                heads[l].push(self.record_head(g, nodes, l, s)?);
            }
            let outputs: Vec<Var> = heads[l].iter().map(|t| t.output).collect();
            features[l] = Some(g.mean(&outputs)?);
        }
        let features = features.map(|f| f.expect("every level recorded"));
        let relations = Self::record_relations(g, &features)?;
        let fused = self.record_fusion(g, &features, &relations)?;
        let representation = g.concat_rows(&fused)?;
        Ok(FrameTrace {
            heads,
            features,
            relations,
            fused,
            representation,
        })
    }

    pub fn record_frame(&self, g: &mut Graph, frame: &SkeletonFrame) -> Result<FrameTrace> {
        let graph = self.prepare(frame)?;
        self.record_graph(g, &graph)
    }

    /// Records the frame-averaged, flattened `1 × (rows·D_h)` sequence embedding.
    pub fn record_sequence(&self, g: &mut Graph, seq: &SkeletonSequence) -> Result<Var> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        let reps = seq
            .frames()
            .iter()
            .map(|f| self.record_frame(g, f).map(|t| t.representation))
            .collect::<Result<Vec<_>>>()?;
        let mean = g.mean(&reps)?;
        g.reshape(mean, 1, self.embedding_dim())
    }

    /// Records a `B × dim` matrix with one embedding row per sequence.
    pub fn record_batch(&self, g: &mut Graph, seqs: &[&SkeletonSequence]) -> Result<Var> {
        let rows = seqs
            .iter()
            .map(|s| self.record_sequence(g, s))
            .collect::<Result<Vec<_>>>()?;
        g.concat_rows(&rows)
    }

    /// Per-head attention matrices and outputs of one level.
    pub fn structural_heads(&self, graph: &MultiLevelGraph<'_>, l: usize) -> Result<Vec<(Tensor2, Tensor2)>> {
        let mut g = Graph::new();
        let nodes = g.constant(graph.nodes(l).clone());
        (0..self.config.heads)
            .map(|s| {
                let t = self.record_head(&mut g, nodes, l, s)?;
                Ok((g.value(t.attention).clone(), g.value(t.output).clone()))
            })
            .collect()
    }

    /// Head-averaged node features of every level.
    pub fn msrl(&self, graph: &MultiLevelGraph<'_>) -> Result<NodeFeatures> {
        let mut g = Graph::new();
        let trace = self.record_graph(&mut g, graph)?;
        Ok(trace.features.map(|v| g.value(v).clone()))
    }

    /// Collaborative relation matrices of the given features.
    pub fn fcrl(features: &NodeFeatures) -> Result<Relations> {
        let mut g = Graph::new();
        let vars = [
            g.constant(features[0].clone()),
            g.constant(features[1].clone()),
            g.constant(features[2].clone()),
        ];
        let rel = Self::record_relations(&mut g, &vars)?;
        Ok(Relations(rel.into_iter().map(|v| g.value(v).clone()).collect()))
    }

    /// Fused features from pre-fusion features and relations.
    pub fn fuse(&self, features: &NodeFeatures, relations: &Relations) -> Result<NodeFeatures> {
        if relations.0.len() != LEVEL_PAIRS.len() {
            return Err(Error::InvalidArgument(format!(
                "fusion needs {} relation matrices, got {}",
                LEVEL_PAIRS.len(),
                relations.0.len()
            )));
        }
        let mut g = Graph::new();
        let vars = [
            g.constant(features[0].clone()),
            g.constant(features[1].clone()),
            g.constant(features[2].clone()),
        ];
        let rel: Vec<Var> = relations.0.iter().map(|r| g.constant(r.clone())).collect();
        let fused = self.record_fusion(&mut g, &vars, &rel)?;
        Ok(fused.map(|v| g.value(v).clone()))
    }

    /// `(n_1 + n_2 + n_3) × D_h` representation of one frame.
    pub fn encode_frame(&self, frame: &SkeletonFrame) -> Result<Tensor2> {
        let mut g = Graph::new();
        let t = self.record_frame(&mut g, frame)?;
        Ok(g.value(t.representation).clone())
    }

    /// Collaborative relation matrices of one frame.
    pub fn frame_relations(&self, frame: &SkeletonFrame) -> Result<Relations> {
        let mut g = Graph::new();
        let t = self.record_frame(&mut g, frame)?;
        Ok(Relations(t.relations.iter().map(|&v| g.value(v).clone()).collect()))
    }

    pub fn encode_sequence(&self, seq: &SkeletonSequence) -> Result<SequenceEmbedding> {
        self.encode_traced(seq).map(|(e, _)| e)
    }

    /// Embedding plus the [`Graph::branch_fingerprint`] of its forward pass.
    pub fn encode_traced(&self, seq: &SkeletonSequence) -> Result<(SequenceEmbedding, u64)> {
        let mut g = Graph::new();
        let v = self.record_sequence(&mut g, seq)?;
        let emb = SequenceEmbedding {
            values: g.value(v).data().to_vec(),
            identity: seq.identity.clone(),
            view: seq.view.clone(),
        };
        Ok((emb, g.branch_fingerprint()))
    }

    /// Encodes sequences in parallel; output order follows the input.
    pub fn encode_all(&self, seqs: &[SkeletonSequence]) -> Result<Vec<SequenceEmbedding>> {
        use rayon::prelude::*;
        seqs.par_iter().map(|s| self.encode_sequence(s)).collect()
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::skeldata::{build_graphs, SkeletonFrame};

    fn model(heads: usize, seed: u64) -> Model {
        let cfg = ModelConfig {
            heads,
            ..ModelConfig::default()
        };
        Model::new(cfg, PartitionScheme::builtin20(), seed).unwrap()
    }

    fn frame(seed: u64) -> SkeletonFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SkeletonFrame::new(
            (0..20)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(model(8, 0).params().num_scalars(), 3 * 8 * (3 * 8 + 2 * 8) + 6 * 64);
        assert_eq!(model(8, 0).params().num_scalars(), 1344);
    }

    #[test]
    fn frame_rep_shape() {
        let m = model(8, 1);
        assert_eq!(m.encode_frame(&frame(0)).unwrap().shape(), (18, 8));
        assert_eq!(m.embedding_dim(), 144);
    }

    #[test]
    fn identical_positions_give_uniform_attention() {
        let m = model(3, 2);
        let s = m.scheme().clone();
        let f = SkeletonFrame::new(vec![[0.3, -0.1, 0.7]; 20]).unwrap();
        let graph = build_graphs(&f, &s).unwrap();
        for l in 0..NUM_LEVELS {
            let mask = s.adjacency_mask(l).unwrap();
            for (att, _) in m.structural_heads(&graph, l).unwrap() {
                for i in 0..att.rows() {
                    let deg = (0..att.cols()).filter(|&j| mask.get(i, j)).count() as f64;
                    for j in 0..att.cols() {
                        let expected = if mask.get(i, j) { 1.0 / deg } else { 0.0 };
                        assert!((att.get(i, j) - expected).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn lone_node_attends_to_itself() {
        let mut s = PartitionScheme::builtin20();
        s.levels[2].edges = vec![(0, 1)];
        let m = Model::new(ModelConfig::default(), s.clone(), 3).unwrap();
        let graph = build_graphs(&frame(4), &s).unwrap();
        for (att, _) in m.structural_heads(&graph, 2).unwrap() {
            assert_eq!(att.row(2), &[0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn identical_heads_match_single_head() {
        let one = model(1, 5);
        let mut params = ParamTape::new();
        for l in 0..NUM_LEVELS {
            for s in 0..4 {
                params
                    .register(
                        value_name(l, s),
                        one.params().by_name(&value_name(l, 0)).unwrap().clone(),
                    )
                    .unwrap();
                params
                    .register(
                        relation_name(l, s),
                        one.params().by_name(&relation_name(l, 0)).unwrap().clone(),
                    )
                    .unwrap();
            }
        }
        for &(a, b) in &LEVEL_PAIRS {
            params
                .register(
                    fusion_name(a, b),
                    one.params().by_name(&fusion_name(a, b)).unwrap().clone(),
                )
                .unwrap();
        }
        let cfg = ModelConfig {
            heads: 4,
            ..ModelConfig::default()
        };
        let four = Model::from_parts(cfg, one.scheme().clone(), params).unwrap();
        let s = one.scheme().clone();
        let graph = build_graphs(&frame(6), &s).unwrap();
        assert_eq!(one.msrl(&graph).unwrap(), four.msrl(&graph).unwrap());
    }

    #[test]
    fn msrl_is_mean_of_heads() {
        let m = model(8, 7);
        let s = m.scheme().clone();
        let graph = build_graphs(&frame(8), &s).unwrap();
        let feats = m.msrl(&graph).unwrap();
        for l in 0..NUM_LEVELS {
            let heads = m.structural_heads(&graph, l).unwrap();
            for k in 0..feats[l].len() {
                let mean = heads.iter().map(|(_, o)| o.data()[k]).sum::<f64>() / 8.0;
                assert!((feats[l].data()[k] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fcrl_uniform_and_single_column() {
        let feats = [
            Tensor2::filled(10, 4, 0.2),
            Tensor2::filled(5, 4, 0.2),
            Tensor2::filled(1, 4, -1.0),
        ];
        let rel = Model::fcrl(&feats).unwrap();
        for &(a, b) in &LEVEL_PAIRS {
            let r = rel.get(a, b);
            let nb = feats[b].rows() as f64;
            for &v in r.data() {
                assert!((v - 1.0 / nb).abs() < 1e-15, "({a},{b})");
            }
        }
        assert!(rel.get(0, 2).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_fusion_weight_is_identity() {
        let cfg = ModelConfig {
            fusion_weight: 0.0,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, PartitionScheme::builtin20(), 9).unwrap();
        let s = m.scheme().clone();
        let graph = build_graphs(&frame(10), &s).unwrap();
        let feats = m.msrl(&graph).unwrap();
        let rel = Model::fcrl(&feats).unwrap();
        assert_eq!(m.fuse(&feats, &rel).unwrap(), feats);
    }

    #[test]
    fn one_node_per_level_fusion() {
        let mut s = PartitionScheme::builtin20();
        for level in &mut s.levels {
            level.partitions = vec![(0..20).map(|j| crate::skeldata::Member(j, 0.05)).collect()];
            level.edges.clear();
        }
        s.center = None;
        let cfg = ModelConfig {
            hidden: 3,
            heads: 2,
            ..ModelConfig::default()
        };
        let m = Model::new(cfg, s, 11).unwrap();
        let feats = [
            Tensor2::from_rows(&[[0.1, -0.4, 0.3]]).unwrap(),
            Tensor2::from_rows(&[[0.5, 0.2, -0.6]]).unwrap(),
            Tensor2::from_rows(&[[-0.7, 0.8, 0.05]]).unwrap(),
        ];
        let rel = Model::fcrl(&feats).unwrap();
        let fused = m.fuse(&feats, &rel).unwrap();
        // level 3 only fuses with itself: v + v W_c
        let w = m.params().by_name(&fusion_name(2, 2)).unwrap();
        let v = feats[2].row(0);
        for c in 0..3 {
            let expected = v[c] + (0..3).map(|k| v[k] * w.get(k, c)).sum::<f64>();
            assert!((fused[2].get(0, c) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sequence_embedding_properties() {
        let m = model(2, 12);
        let frames: Vec<_> = (0..4).map(|k| frame(20 + k)).collect();
        let seq = SkeletonSequence::new(frames.clone(), Some("a".into()), Some("v".into())).unwrap();
        let emb = m.encode_sequence(&seq).unwrap();
        assert_eq!(emb.identity.as_deref(), Some("a"));
        assert_eq!(emb.values.len(), m.embedding_dim());

        let mut rev = frames.clone();
        rev.reverse();
        let rev = SkeletonSequence::new(rev, None, None).unwrap();
        assert_eq!(m.encode_sequence(&rev).unwrap().values, emb.values);

        let single = SkeletonSequence::new(vec![frames[0].clone()], None, None).unwrap();
        assert_eq!(
            m.encode_sequence(&single).unwrap().values,
            m.encode_frame(&frames[0]).unwrap().into_data()
        );

        let pair = SkeletonSequence::new(frames[..2].to_vec(), None, None).unwrap();
        let r0 = m.encode_frame(&frames[0]).unwrap();
        let r1 = m.encode_frame(&frames[1]).unwrap();
        for (k, v) in m.encode_sequence(&pair).unwrap().values.iter().enumerate() {
            assert!((v - (r0.data()[k] + r1.data()[k]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn from_parts_rejects_wrong_width() {
        let m = model(2, 13);
        let cfg = ModelConfig {
            hidden: 4,
            heads: 2,
            ..ModelConfig::default()
        };
        assert!(Model::from_parts(cfg, m.scheme().clone(), m.params().clone()).is_err());
    }
}
