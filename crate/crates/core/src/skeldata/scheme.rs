use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Mask;

pub const SCHEME_FORMAT: &str = "skelreid-partition-scheme/1";
pub const NUM_LEVELS: usize = 3;

/// Joint names of the canonical 20-joint layout, in index order.
pub const JOINTS_20: [&str; 20] = [
    "hip_center",
    "spine",
    "shoulder_center",
    "head",
    "shoulder_left",
    "elbow_left",
    "wrist_left",
    "hand_left",
    "shoulder_right",
    "elbow_right",
    "wrist_right",
    "hand_right",
    "hip_left",
    "knee_left",
    "ankle_left",
    "foot_left",
    "hip_right",
    "knee_right",
    "ankle_right",
    "foot_right",
];

/// One joint's contribution to a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member(pub usize, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub name: String,
    pub partitions: Vec<Vec<Member>>,
    pub edges: Vec<(usize, usize)>,
}

impl Level {
    pub fn num_nodes(&self) -> usize {
        self.partitions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRef {
    pub level: usize,
    pub node: usize,
}

/// Maps joints onto the nodes of three graph levels, ordered from finest
/// (part) to coarsest (hyper-body).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub format: String,
    pub name: String,
    pub joints: usize,
    /// Node whose position is subtracted from every joint when centering.
    #[serde(default)]
    pub center: Option<NodeRef>,
    pub levels: Vec<Level>,
}

fn uniform(joints: &[usize]) -> Vec<Member> {
    let w = 1.0 / joints.len() as f64;
    joints.iter().map(|&j| Member(j, w)).collect()
}

impl PartitionScheme {
    /// Built-in scheme for the 20-joint layout of [`JOINTS_20`].
    pub fn builtin20() -> Self {
        let part = Level {
            name: "part".into(),
            partitions: vec![
                uniform(&[2, 3]),   // head + neck
                uniform(&[0, 1]),   // torso
                uniform(&[4, 5]),   // left upper arm
                uniform(&[6, 7]),   // left forearm + hand
                uniform(&[8, 9]),   // right upper arm
                uniform(&[10, 11]), // right forearm + hand
                uniform(&[12, 13]), // left thigh
                uniform(&[14, 15]), // left shin + foot
                uniform(&[16, 17]), // right thigh
                uniform(&[18, 19]), // right shin + foot
            ],
            edges: vec![(0, 1), (1, 2), (2, 3), (1, 4), (4, 5), (1, 6), (6, 7), (1, 8), (8, 9)],
        };
        let body = Level {
            name: "body".into(),
            partitions: vec![
                uniform(&[0, 1, 2, 3]),
                uniform(&[4, 5, 6, 7]),
                uniform(&[8, 9, 10, 11]),
                uniform(&[12, 13, 14, 15]),
                uniform(&[16, 17, 18, 19]),
            ],
            edges: vec![(0, 1), (0, 2), (0, 3), (0, 4)],
        };
        let hyper = Level {
            name: "hyper-body".into(),
            partitions: vec![
                uniform(&[0, 1, 2, 3]),
                uniform(&(4..12).collect::<Vec<_>>()),
                uniform(&(12..20).collect::<Vec<_>>()),
            ],
            edges: vec![(1, 0), (0, 2)],
        };
        Self {
            format: SCHEME_FORMAT.into(),
            name: "builtin20".into(),
            joints: 20,
            center: Some(NodeRef { level: 0, node: 1 }),
            levels: vec![part, body, hyper],
        }
    }

    /// `"builtin20"` or a path to a scheme file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if spec == "builtin20" {
            Ok(Self::builtin20())
        } else {
            Self::load(Path::new(spec))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scheme: PartitionScheme =
            serde_json::from_str(&text).map_err(|e| Error::Scheme(format!("{}: {e}", path.display())))?;
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SCHEME_FORMAT {
            return Err(Error::Scheme(format!(
                "unsupported format tag `{}` (expected `{SCHEME_FORMAT}`)",
                self.format
            )));
        }
        if self.levels.len() != NUM_LEVELS {
            return Err(Error::Scheme(format!(
                "expected {NUM_LEVELS} levels, found {}",
                self.levels.len()
            )));
        }
        for (l, level) in self.levels.iter().enumerate() {
            if level.partitions.is_empty() {
                return Err(Error::Scheme(format!("level {l} has no partitions")));
            }
            for (i, part) in level.partitions.iter().enumerate() {
                if part.is_empty() {
                    return Err(Error::Scheme(format!("level {l} partition {i} is empty")));
                }
                let mut total = 0.0;
                for &Member(j, w) in part {
                    if j >= self.joints {
                        return Err(Error::Scheme(format!(
                            "level {l} partition {i} references joint {j} but the layout has {} joints",
                            self.joints
                        )));
                    }
                    if !(w >= 0.0 && w.is_finite()) {
                        return Err(Error::Scheme(format!("level {l} partition {i} has invalid weight {w}")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Scheme(format!(
                        "level {l} partition {i} weights sum to {total}, not 1"
                    )));
                }
            }
            let n = level.num_nodes();
            let mut seen = std::collections::BTreeSet::new();
            for &(a, b) in &level.edges {
                if a >= n || b >= n {
                    return Err(Error::Scheme(format!(
                        "level {l} edge ({a},{b}) references a missing node ({n} nodes)"
                    )));
                }
                if a == b {
                    return Err(Error::Scheme(format!("level {l} edge ({a},{b}) is a self-loop")));
                }
                if !seen.insert((a.min(b), a.max(b))) {
                    return Err(Error::Scheme(format!("level {l} edge ({a},{b}) is duplicated")));
                }
            }
        }
        if let Some(c) = self.center {
            if c.level >= NUM_LEVELS || c.node >= self.levels[c.level].num_nodes() {
                return Err(Error::Scheme(format!(
                    "center node {}:{} does not exist",
                    c.level, c.node
                )));
            }
        }
        Ok(())
    }

    pub fn level(&self, l: usize) -> &Level {
        &self.levels[l]
    }

    pub fn node_counts(&self) -> [usize; NUM_LEVELS] {
        [
            self.levels[0].num_nodes(),
            self.levels[1].num_nodes(),
            self.levels[2].num_nodes(),
        ]
    }

    pub fn total_nodes(&self) -> usize {
        self.node_counts().iter().sum()
    }

    /// Neighbor mask of level `l`, including self-connections.
    pub fn adjacency_mask(&self, l: usize) -> Result<Mask> {
        let level = &self.levels[l];
        Mask::adjacency(level.num_nodes(), &level.edges)
    }

    /// Whether the edge graph of level `l` is connected.
    pub fn is_connected(&self, l: usize) -> bool {
        let level = &self.levels[l];
        let n = level.num_nodes();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(a, b) in &level.edges {
                let other = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}
