//! Skeleton sequences, partition schemes and multi-level graph construction.

mod io;
mod scheme;

pub use io::{load_dataset, write_jsonl, DatasetLayout};
pub use scheme::{Level, Member, NodeRef, PartitionScheme, JOINTS_20, NUM_LEVELS, SCHEME_FORMAT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor2;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFrame {
    joints: Vec<Point3>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<Point3>) -> Result<Self> {
        if let Some(j) = joints.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("joint {j} has a non-finite coordinate")));
        }
        Ok(Self { joints })
    }

    pub fn joints(&self) -> &[Point3] {
        &self.joints
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn translated(&self, offset: Point3) -> Self {
        Self {
            joints: self
                .joints
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }
}

/// Consecutive frames of one person, with optional identity and view tags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    frames: Vec<SkeletonFrame>,
    pub identity: Option<String>,
    pub view: Option<String>,
}

impl SkeletonSequence {
    pub fn new(frames: Vec<SkeletonFrame>, identity: Option<String>, view: Option<String>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidArgument("a sequence needs at least one frame".into()));
        };
        let joints = first.num_joints();
        if let Some(t) = frames.iter().position(|f| f.num_joints() != joints) {
            return Err(Error::InvalidArgument(format!(
                "frame {t} has {} joints, frame 0 has {joints}",
                frames[t].num_joints()
            )));
        }
        Ok(Self { frames, identity, view })
    }

    pub fn frames(&self) -> &[SkeletonFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_joints(&self) -> usize {
        self.frames[0].num_joints()
    }

    pub fn with_frames(&self, frames: Vec<SkeletonFrame>) -> Result<Self> {
        Self::new(frames, self.identity.clone(), self.view.clone())
    }
}

/// Cuts every recording into windows of `window` frames taken every `stride` frames.
///
/// Recordings shorter than `window` yield nothing.
pub fn split_sequences(sequences: &[SkeletonSequence], window: usize, stride: usize) -> Result<Vec<SkeletonSequence>> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window ({window}) and stride ({stride}) must be positive"
        )));
    }
    let mut out = Vec::new();
    for seq in sequences {
        let mut start = 0;
        while start + window <= seq.len() {
            out.push(seq.with_frames(seq.frames[start..start + window].to_vec())?);
            start += stride;
        }
    }
    Ok(out)
}

/// Node positions of the three graph levels of one frame. Edges live in the scheme.
#[derive(Debug, Clone)]
pub struct MultiLevelGraph<'s> {
    nodes: [Tensor2; NUM_LEVELS],
    scheme: &'s PartitionScheme,
}

impl<'s> MultiLevelGraph<'s> {
    /// `n_l × 3` node positions of level `l`.
    pub fn nodes(&self, l: usize) -> &Tensor2 {
        &self.nodes[l]
    }

    pub fn edges(&self, l: usize) -> &'s [(usize, usize)] {
        &self.scheme.levels[l].edges
    }

    pub fn scheme(&self) -> &'s PartitionScheme {
        self.scheme
    }
}

/// Places every node at the weighted average of its partition's joints.
pub fn build_graphs<'s>(frame: &SkeletonFrame, scheme: &'s PartitionScheme) -> Result<MultiLevelGraph<'s>> {
    if frame.num_joints() != scheme.joints {
        return Err(Error::InvalidArgument(format!(
            "frame has {} joints, scheme `{}` expects {}",
            frame.num_joints(),
            scheme.name,
            scheme.joints
        )));
    }
    let mut nodes: [Tensor2; NUM_LEVELS] = Default::default();
    for (l, level) in scheme.levels.iter().enumerate() {
        let mut pos = Tensor2::zeros(level.num_nodes(), 3);
        for (i, part) in level.partitions.iter().enumerate() {
            let row = pos.row_mut(i);
            for &Member(j, w) in part {
                let p = frame.joints.get(j).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "level {l} node {i} references joint {j} of a {}-joint frame",
                        frame.num_joints()
                    ))
                })?;
                for d in 0..3 {
                    row[d] += w * p[d];
                }
            }
        }
        nodes[l] = pos;
    }
    Ok(MultiLevelGraph { nodes, scheme })
}

/// Subtracts the scheme's center-node position from every joint.
///
/// Frames are returned unchanged when the scheme declares no center node.
pub fn center_frame(frame: &SkeletonFrame, scheme: &PartitionScheme) -> Result<SkeletonFrame> {
    let Some(c) = scheme.center else {
        return Ok(frame.clone());
    };
    let mut center = [0.0; 3];
    for &Member(j, w) in &scheme.levels[c.level].partitions[c.node] {
        let p = frame
            .joints
            .get(j)
            .ok_or_else(|| Error::InvalidArgument(format!("center references missing joint {j}")))?;
        for d in 0..3 {
            center[d] += w * p[d];
        }
    }
    Ok(frame.translated([-center[0], -center[1], -center[2]]))
}
