//! Deterministic stick-figure walkers on the 20-joint layout.
//!
//! Each limb is a two-segment chain (upper arm + forearm, thigh + shin) with a
//! short hand or foot segment at the end. The proximal joint swings as
//! `A·sin(2π·f·t + φ)` in the sagittal plane and the distal joint flexes in
//! phase with it. Axes: x forward, y up, z to the walker's left.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeldata::{Point3, SkeletonFrame, SkeletonSequence};

pub const NUM_BONES: usize = 19;

/// `(parent joint, child joint)` of every bone, in bone-length order.
pub const BONES: [(usize, usize); NUM_BONES] = [
    (0, 1),   // spine
    (1, 2),   // upper spine
    (2, 3),   // neck + head
    (2, 4),   // left clavicle
    (4, 5),   // left upper arm
    (5, 6),   // left forearm
    (6, 7),   // left hand
    (2, 8),   // right clavicle
    (8, 9),   // right upper arm
    (9, 10),  // right forearm
    (10, 11), // right hand
    (0, 12),  // left pelvis
    (12, 13), // left thigh
    (13, 14), // left shin
    (14, 15), // left foot
    (0, 16),  // right pelvis
    (16, 17), // right thigh
    (17, 18), // right shin
    (18, 19), // right foot
];

/// Bone lengths of an average adult, meters.
pub const REFERENCE_BONES: [f64; NUM_BONES] = [
    0.25, 0.25, 0.20, 0.18, 0.29, 0.26, 0.08, 0.18, 0.29, 0.26, 0.08, 0.10, 0.43, 0.41, 0.13, 0.10, 0.43, 0.41, 0.13,
];

pub const ARM_BONES: [usize; 6] = [4, 5, 6, 8, 9, 10];
pub const LEG_BONES: [usize; 6] = [12, 13, 14, 16, 17, 18];

/// Limb order for phases and amplitudes.
pub const LIMBS: [&str; 4] = ["left_arm", "right_arm", "left_leg", "right_leg"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerSpec {
    pub id: String,
    /// Meters, in [`BONES`] order.
    pub bone_lengths: Vec<f64>,
    /// Gait cycles per second.
    pub frequency: f64,
    /// Radians, in [`LIMBS`] order.
    pub phase_offsets: [f64; 4],
    /// Radians: `[proximal, distal]` swing per limb, in [`LIMBS`] order.
    pub swing_amplitudes: [[f64; 2]; 4],
    /// Standard deviation of per-coordinate Gaussian noise, meters.
    pub noise_sigma: f64,
}

impl WalkerSpec {
    pub fn reference(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            bone_lengths: REFERENCE_BONES.to_vec(),
            frequency: 1.0,
            phase_offsets: [PI, 0.0, 0.0, PI],
            swing_amplitudes: [[0.35, 0.5], [0.35, 0.5], [0.45, 0.7], [0.45, 0.7]],
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bone_lengths.len() != NUM_BONES {
            return Err(Error::InvalidArgument(format!(
                "walker `{}` needs {NUM_BONES} bone lengths, got {}",
                self.id,
                self.bone_lengths.len()
            )));
        }
        if let Some(b) = self.bone_lengths.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "walker `{}` bone {b} has non-positive length",
                self.id
            )));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "walker `{}` frequency must be positive",
                self.id
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "walker `{}` noise must be non-negative",
                self.id
            )));
        }
        Ok(())
    }

    /// Noise-free joint positions at time `t` seconds.
    pub fn pose(&self, t: f64) -> Vec<Point3> {
        let len = |b: usize| self.bone_lengths[b];
        let omega = 2.0 * PI * self.frequency;
        let stride = len(12) + len(13);
        let root = [
            0.8 * stride * self.frequency * t,
            len(12) + len(13) + 0.02 * (2.0 * omega * t).sin(),
            0.0,
        ];
        let mut joints = vec![[0.0; 3]; 20];
        joints[0] = root;
        let up = [0.0, 1.0, 0.0];
        joints[1] = offset(joints[0], up, len(0));
        joints[2] = offset(joints[1], up, len(1));
        joints[3] = offset(joints[2], up, len(2));
        joints[4] = offset(joints[2], [0.0, 0.0, 1.0], len(3));
        joints[8] = offset(joints[2], [0.0, 0.0, -1.0], len(7));
        joints[12] = offset(joints[0], [0.0, 0.0, 1.0], len(11));
        joints[16] = offset(joints[0], [0.0, 0.0, -1.0], len(15));

        // (limb, base joint, first bone, knee-like flexion sign)
        let chains = [(0, 4, 4, 1.0), (1, 8, 8, 1.0), (2, 12, 12, -1.0), (3, 16, 16, -1.0)];
        for (limb, base, bone, flex) in chains {
            let [amp_p, amp_d] = self.swing_amplitudes[limb];
            let phase = omega * t + self.phase_offsets[limb];
            let proximal = amp_p * phase.sin();
            let distal = proximal + flex * amp_d * 0.5 * (1.0 + (phase + FRAC_PI_2).sin());
            let mid = offset(joints[base], sagittal(proximal), len(bone));
            let end = offset(mid, sagittal(distal), len(bone + 1));
            // hands continue the forearm; feet point forward from the ankle
            let tip_angle = if flex > 0.0 { distal } else { distal + FRAC_PI_2 };
            let tip = offset(end, sagittal(tip_angle), len(bone + 2));
            joints[base + 1] = mid;
            joints[base + 2] = end;
            joints[base + 3] = tip;
        }
        joints
    }

    /// Noise-free sequence of `frames` frames starting at `start_time`.
    pub fn render(&self, frames: usize, frame_rate: f64, start_time: f64) -> Result<SkeletonSequence> {
        self.validate()?;
        let frames = (0..frames)
            .map(|k| SkeletonFrame::new(self.pose(start_time + k as f64 / frame_rate)))
            .collect::<Result<Vec<_>>>()?;
        SkeletonSequence::new(frames, Some(self.id.clone()), None)
    }
}

/// Unit vector at `angle` from straight down, rotating toward +x.
fn sagittal(angle: f64) -> Point3 {
    [angle.sin(), -angle.cos(), 0.0]
}

fn offset(p: Point3, dir: Point3, len: f64) -> Point3 {
    [p[0] + len * dir[0], p[1] + len * dir[1], p[2] + len * dir[2]]
}

/// How a population of walkers varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationOptions {
    /// Leg and arm bones are scaled by factors spread evenly over
    /// `1 ± length_spread`, legs in identity order and arms in shuffled order.
    /// Trunk bones only get a small per-bone jitter.
    pub length_spread: f64,
    /// Frequencies are spread evenly over `1 ± frequency_spread` Hz, in shuffled order.
    pub frequency_spread: f64,
    pub noise_sigma: f64,
}

impl Default for PopulationOptions {
    fn default() -> Self {
        Self {
            length_spread: 0.2,
            frequency_spread: 0.3,
            noise_sigma: 0.01,
        }
    }
}

/// `count` walkers with pairwise distinct limb scales and gait frequencies.
pub fn population(count: usize, seed: u64, opts: &PopulationOptions) -> Vec<WalkerSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = |k: usize, s: f64| {
        if count <= 1 {
            1.0
        } else {
            1.0 - s + 2.0 * s * k as f64 / (count - 1) as f64
        }
    };
    let mut freq_rank: Vec<usize> = (0..count).collect();
    freq_rank.shuffle(&mut rng);
    let mut arm_rank: Vec<usize> = (0..count).collect();
    arm_rank.shuffle(&mut rng);
    (0..count)
        .map(|k| {
            let mut spec = WalkerSpec::reference(format!("walker{k:02}"));
            let leg = spread(k, opts.length_spread);
            let arm = spread(arm_rank[k], opts.length_spread);
            for (b, len) in spec.bone_lengths.iter_mut().enumerate() {
                let scale = if LEG_BONES.contains(&b) {
                    leg
                } else if ARM_BONES.contains(&b) {
                    arm
                } else {
                    1.0
                };
                *len *= scale * rng.random_range(0.97..1.03);
            }
            spec.frequency = spread(freq_rank[k], opts.frequency_spread);
            for p in spec.phase_offsets.iter_mut() {
                *p += rng.random_range(-0.2..0.2);
            }
            for limb in spec.swing_amplitudes.iter_mut() {
                for a in limb.iter_mut() {
                    *a *= rng.random_range(0.85..1.15);
                }
            }
            spec.noise_sigma = opts.noise_sigma;
            spec
        })
        .collect()
}

/// `per_identity` noisy sequences of every walker, identity-major.
///
/// Sequence `j` of walker `i` starts at a random point of the gait cycle and
/// draws its noise from an RNG stream derived from `(seed, i, j)`.
pub fn generate(
    specs: &[WalkerSpec],
    per_identity: usize,
    frames: usize,
    frame_rate: f64,
    seed: u64,
) -> Result<Vec<SkeletonSequence>> {
    if specs.is_empty() || frames == 0 {
        return Err(Error::InvalidArgument("need at least one walker and one frame".into()));
    }
    if frame_rate.is_nan() || frame_rate <= 0.0 {
        return Err(Error::InvalidArgument("frame rate must be positive".into()));
    }
    let mut out = Vec::with_capacity(specs.len() * per_identity);
    for (i, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;
        for j in 0..per_identity {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((i as u64) << 32) | j as u64);
            let start = rng.random_range(0.0..1.0 / spec.frequency);
            let clean = spec.render(frames, frame_rate, start)?;
            let noisy = clean
                .frames()
                .iter()
                .map(|f| {
                    let joints = f
                        .joints()
                        .iter()
                        .map(|p| p.map(|v| v + noise.sample(&mut rng)))
                        .collect();
                    SkeletonFrame::new(joints)
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(clean.with_frames(noisy)?);
        }
    }
    Ok(out)
}
