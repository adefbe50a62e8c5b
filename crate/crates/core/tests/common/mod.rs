//! Straight-line reference implementations used as test oracles. Nothing
//! here calls into the library's numerics; only plain data (weights by name,
//! partition tables, point sets) is read from it.

#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use skelreid::numkit::ParamTape;
use skelreid::skeldata::PartitionScheme;

pub type Mat = Vec<Vec<f64>>;

pub fn weights(params: &ParamTape, name: &str) -> Mat {
    let t = params.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
    t.data().chunks(t.cols()).map(|r| r.to_vec()).collect()
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub struct OracleConfig {
    pub hidden: usize,
    pub heads: usize,
    pub fusion_weight: f64,
    pub slope: f64,
    pub center: bool,
}

/// Node positions: weighted joint averages, after optional centering.
pub fn oracle_nodes(scheme: &PartitionScheme, joints: &[[f64; 3]], center: bool) -> Vec<Mat> {
    let mut c = [0.0; 3];
    if center {
        if let Some(r) = scheme.center {
            for m in &scheme.levels[r.level].partitions[r.node] {
                for d in 0..3 {
                    c[d] += m.1 * joints[m.0][d];
                }
            }
        }
    }
    scheme
        .levels
        .iter()
        .map(|level| {
            level
                .partitions
                .iter()
                .map(|part| {
                    let mut p = vec![0.0; 3];
                    for m in part {
                        for d in 0..3 {
                            p[d] += m.1 * (joints[m.0][d] - c[d]);
                        }
                    }
                    p
                })
                .collect()
        })
        .collect()
}

/// Intermediate values of one frame.
pub struct OracleFrame {
    /// `[level][head]` attention matrices (zero outside the neighborhood).
    pub attention: Vec<Vec<Mat>>,
    /// Head-averaged features per level.
    pub features: Vec<Mat>,
    /// Relation matrices for (a, b), a ≤ b, in lexicographic order.
    pub relations: Vec<Mat>,
    /// Stacked fused features, all levels.
    pub representation: Mat,
}

pub fn oracle_frame(
    params: &ParamTape,
    scheme: &PartitionScheme,
    cfg: &OracleConfig,
    joints: &[[f64; 3]],
) -> OracleFrame {
    let h = cfg.hidden;
    let nodes = oracle_nodes(scheme, joints, cfg.center);
    let mut attention = Vec::new();
    let mut features = Vec::new();
    for (l, v) in nodes.iter().enumerate() {
        let n = v.len();
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            adj[i][i] = true;
        }
        for &(a, b) in &scheme.levels[l].edges {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        let mut level_att = Vec::new();
        let mut sum = vec![vec![0.0; h]; n];
        for s in 0..cfg.heads {
            let w_v = weights(params, &format!("level{}.head{}.w_v", l + 1, s + 1));
            let w_r = weights(params, &format!("level{}.head{}.w_r", l + 1, s + 1));
            let hv = mat_mul(v, &w_v);
            // e_ij = LeakyReLU(w_r · [h_i ‖ h_j])
            let mut alpha = vec![vec![0.0; n]; n];
            for i in 0..n {
                let support: Vec<usize> = (0..n).filter(|&j| adj[i][j]).collect();
                let e: Vec<f64> = support
                    .iter()
                    .map(|&j| {
                        let mut x = 0.0;
                        for d in 0..h {
                            x += w_r[d][0] * hv[i][d] + w_r[h + d][0] * hv[j][d];
                        }
                        if x >= 0.0 {
                            x
                        } else {
                            cfg.slope * x
                        }
                    })
                    .collect();
                for (&j, a) in support.iter().zip(softmax(&e)) {
                    alpha[i][j] = a;
                }
            }
            for i in 0..n {
                for d in 0..h {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += alpha[i][j] * hv[j][d];
                    }
                    sum[i][d] += acc.tanh();
                }
            }
            level_att.push(alpha);
        }
        attention.push(level_att);
        features.push(
            sum.iter()
                .map(|r| r.iter().map(|x| x / cfg.heads as f64).collect())
                .collect::<Mat>(),
        );
    }

    let mut relations = Vec::new();
    let mut fused = features.clone();
    for a in 0..3 {
        for b in a..3 {
            let fa = &features[a];
            let fb = &features[b];
            let rel: Mat = fa
                .iter()
                .map(|x| {
                    let scores: Vec<f64> = fb.iter().map(|y| x.iter().zip(y).map(|(p, q)| p * q).sum()).collect();
                    softmax(&scores)
                })
                .collect();
            let w_c = weights(params, &format!("fusion.{}{}.w_c", a + 1, b + 1));
            let mapped = mat_mul(&mat_mul(&rel, fb), &w_c);
            for i in 0..fa.len() {
                for d in 0..h {
                    fused[a][i][d] += cfg.fusion_weight * mapped[i][d];
                }
            }
            relations.push(rel);
        }
    }
    OracleFrame {
        attention,
        features,
        relations,
        representation: fused.concat(),
    }
}

/// Frame-averaged, row-major flattened sequence embedding.
pub fn oracle_sequence(
    params: &ParamTape,
    scheme: &PartitionScheme,
    cfg: &OracleConfig,
    frames: &[Vec<[f64; 3]>],
) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for f in frames {
        let rep = oracle_frame(params, scheme, cfg, f).representation.concat();
        if acc.is_empty() {
            acc = vec![0.0; rep.len()];
        }
        for (a, r) in acc.iter_mut().zip(rep) {
            *a += r;
        }
    }
    acc.iter().map(|a| a / frames.len() as f64).collect()
}

/// Textbook DBSCAN: closed ε-ball, core if the ball (self included) holds at
/// least `min_samples` points, clusters seeded from unvisited core points in
/// index order, border points kept by the first cluster that reaches them.
pub fn naive_dbscan(dist: &dyn Fn(usize, usize) -> f64, n: usize, eps: f64, min_samples: usize) -> Vec<Option<usize>> {
    let ball = |i: usize| -> Vec<usize> { (0..n).filter(|&j| dist(i, j) <= eps).collect() };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for i in 0..n {
        if label[i].is_some() || ball(i).len() < min_samples {
            continue;
        }
        label[i] = Some(next);
        let mut queue = std::collections::VecDeque::from(vec![i]);
        while let Some(p) = queue.pop_front() {
            let nb = ball(p);
            if nb.len() < min_samples {
                continue;
            }
            for q in nb {
                if label[q].is_none() {
                    label[q] = Some(next);
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    label
}

/// True when the two labelings induce the same partition (outliers must agree).
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut bwd: HashMap<usize, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *bwd.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Classes in sorted label order with their member vectors.
fn classes<'a>(vectors: &'a [Vec<f64>], labels: &[String]) -> Vec<(String, Vec<&'a Vec<f64>>)> {
    let mut names: Vec<String> = labels.to_vec();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|c| {
            let members = vectors
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == c)
                .map(|(v, _)| v)
                .collect();
            (c, members)
        })
        .collect()
}

fn centroid(members: &[&Vec<f64>]) -> Vec<f64> {
    let d = members[0].len();
    (0..d)
        .map(|k| members.iter().map(|m| m[k]).sum::<f64>() / members.len() as f64)
        .collect()
}

/// Per-class tightness and looseness, term by term:
/// `D_g = (1/C²) Σ_i (1/s_i) Σ_j Σ_z D(v_j^i, c_z)`, `ACT_k = D_g / ((1/s_k) Σ_j D(v_j^k, c_k))`,
/// `RCL = Σ_i Σ_j D(c_i, c_j) / (Σ_i (1/s_i) Σ_j Σ_z D(v_j^i, c_z))`.
pub fn brute_act_rcl(vectors: &[Vec<f64>], labels: &[String]) -> (Vec<f64>, f64) {
    let cls = classes(vectors, labels);
    let c = cls.len();
    let cents: Vec<Vec<f64>> = cls.iter().map(|(_, m)| centroid(m)).collect();
    let mut global_sum = 0.0;
    for (_, members) in &cls {
        let mut s = 0.0;
        for v in members {
            for cz in &cents {
                s += cos_dist(v, cz);
            }
        }
        global_sum += s / members.len() as f64;
    }
    let global = global_sum / (c * c) as f64;
    let act = cls
        .iter()
        .enumerate()
        .map(|(k, (_, members))| {
            let intra: f64 = members.iter().map(|v| cos_dist(v, &cents[k])).sum::<f64>() / members.len() as f64;
            global / intra
        })
        .collect();
    let mut between = 0.0;
    for a in &cents {
        for b in &cents {
            between += cos_dist(a, b);
        }
    }
    (act, between / global_sum)
}

/// Average precision of one ranked list of match flags.
pub fn average_precision(matches: &[bool]) -> f64 {
    let total = matches.iter().filter(|&&m| m).count();
    let mut hits = 0;
    let mut sum = 0.0;
    for (k, &m) in matches.iter().enumerate() {
        if m {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

/// 20 joints uniform in the cube `[-1, 1]^3`.
pub fn random_joints(rng: &mut impl Rng) -> Vec<[f64; 3]> {
    (0..20)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect()
}

/// At most 50 points in 2 to 6 dimensions with 2 to 5 classes of at least
/// two members each, so no class is a single point on its centroid.
pub fn random_labeled(rng: &mut impl Rng) -> (Vec<Vec<f64>>, Vec<String>) {
    let classes = rng.random_range(2..=5);
    let dim = rng.random_range(2..=6);
    let n = rng.random_range(2 * classes..=50);
    let mut l: Vec<String> = (0..2 * classes).map(|c| format!("c{}", c % classes)).collect();
    l.extend((2 * classes..n).map(|_| format!("c{}", rng.random_range(0..classes))));
    let v = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (v, l)
}

/// Point sets of varied size and shape for density clustering, with `eps`
/// and `min_samples`. Odd trials sit on an integer grid so that many
/// distances equal `eps` exactly.
pub fn point_set(rng: &mut impl Rng, trial: usize) -> (Vec<Vec<f64>>, f64, usize) {
    let n = rng.random_range(1..=200);
    let dim = rng.random_range(1..=4);
    let points: Vec<Vec<f64>> = if trial % 2 == 1 {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(0..6) as f64).collect())
            .collect()
    } else {
        let centers: Vec<Vec<f64>> = (0..rng.random_range(1..6))
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        (0..n)
            .map(|_| {
                let c = &centers[rng.random_range(0..centers.len())];
                c.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect()
            })
            .collect()
    };
    let eps = if trial % 2 == 1 {
        [1.0, 2f64.sqrt(), 2.0][rng.random_range(0..3)]
    } else {
        rng.random_range(0.1..1.5)
    };
    (points, eps, rng.random_range(1..=6))
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Random orthogonal matrix by Gram–Schmidt.
pub fn rotation(rng: &mut impl Rng, dim: usize) -> Mat {
    let mut q: Mat = Vec::new();
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= d * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.iter().map(|x| x / n).collect());
        }
    }
    q
}

/// Applies `q` to every row vector of `v`.
pub fn apply(q: &[Vec<f64>], v: &[Vec<f64>]) -> Mat {
    v.iter()
        .map(|x| {
            q.iter()
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}
