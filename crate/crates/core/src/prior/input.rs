//! Per-window encoder inputs.
//!
//! Channel layout of one frame of the input block, for `J` joints:
//!
//! | channels            | content                                   |
//! |---------------------|-------------------------------------------|
//! | `0..3`              | normalized global orientation, axis-angle |
//! | `3..3J`             | local pose, axis-angle per non-root joint |
//! | `3J..6J`            | joint positions                           |
//! | `6J..9J`            | joint velocities                          |
//! | `9J..12J`           | joint accelerations                       |

use std::ops::Range;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frequency::{extract_freq_seg, extract_freq_seq, SpectrumSeg, SpectrumSeq};
use crate::kinematics::{motion_joints, root_relative, Motion, Skeleton};
use crate::prior::config::TrainConfig;

/// Channel ranges of the input block for a given joint count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub joints: usize,
}

impl InputLayout {
    pub fn new(joints: usize) -> Self {
        InputLayout { joints }
    }

    pub fn channels(&self) -> usize {
        3 + 3 * (self.joints - 1) + 9 * self.joints
    }

    pub fn orientation(&self) -> Range<usize> {
        0..3
    }

    pub fn local_pose(&self) -> Range<usize> {
        3..3 * self.joints
    }

    pub fn positions(&self) -> Range<usize> {
        let j = self.joints;
        3 * j..6 * j
    }

    pub fn velocities(&self) -> Range<usize> {
        let j = self.joints;
        6 * j..9 * j
    }

    pub fn accelerations(&self) -> Range<usize> {
        let j = self.joints;
        9 * j..12 * j
    }
}

/// `K × C_in` input block of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBlock(pub Array2<f64>);

/// Velocities enter the encoder in metres per 0.1 s and accelerations in
/// metres per (0.1 s)², which keeps all three position-like blocks on a
/// comparable scale for the shared first-layer initialization.
pub const VELOCITY_SCALE: f64 = 0.1;
pub const ACCELERATION_SCALE: f64 = 0.01;

/// Concatenates orientation, local pose, joints, velocities and
/// accelerations frame by frame. The motion must carry its dynamics caches.
pub fn assemble_input(skel: &Skeleton, motion: &Motion) -> Result<InputBlock> {
    let dynamics = motion
        .dynamics()
        .ok_or_else(|| Error::Data("motion has no dynamics caches; compute them first".into()))?;
    let j = skel.joint_count();
    let layout = InputLayout::new(j);
    let k = motion.len();
    if dynamics.joints.dim() != (k, j, 3) {
        return Err(Error::shape("assemble_input", &[k, j, 3], dynamics.joints.shape()));
    }
    let mut out = Array2::zeros((k, layout.channels()));
    for (f, pose) in motion.frames.iter().enumerate() {
        if pose.local.len() != j - 1 {
            return Err(Error::Data(format!("frame {f} has {} local rotations, expected {}", pose.local.len(), j - 1)));
        }
        let mut row = out.row_mut(f);
        let g = pose.global_orient.0;
        for c in 0..3 {
            row[c] = g[c];
        }
        for (i, aa) in pose.local.iter().enumerate() {
            for c in 0..3 {
                row[3 + 3 * i + c] = aa.0[c];
            }
        }
        let caches = [
            (&dynamics.joints, 1.0),
            (&dynamics.velocities, VELOCITY_SCALE),
            (&dynamics.accelerations, ACCELERATION_SCALE),
        ];
        for (block, (cache, scale)) in caches.iter().enumerate() {
            let base = layout.positions().start + block * 3 * j;
            for joint in 0..j {
                for c in 0..3 {
                    row[base + 3 * joint + c] = scale * cache[[f, joint, c]];
                }
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("input block contains non-finite values".into()));
    }
    Ok(InputBlock(out))
}

/// Sequence and segment spectra of the window's root-relative joints.
pub fn guidance_spectra(motion: &Motion, cfg: &TrainConfig) -> Result<(SpectrumSeq, SpectrumSeg)> {
    let dynamics = motion
        .dynamics()
        .ok_or_else(|| Error::Data("motion has no dynamics caches; compute them first".into()))?;
    let rel = root_relative(dynamics.joints.view());
    let seq = extract_freq_seq(rel.view(), cfg.c_m)?;
    let seg = extract_freq_seg(rel.view(), cfg.scheme()?, cfg.c_s)?;
    Ok((seq, seg))
}

/// Everything the encoder and the loss need for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSample {
    /// `K × C_in`, row-major.
    pub input: Vec<f64>,
    /// `C_m·J·3`.
    pub fseq: Vec<f64>,
    /// `S × C_s·J·3`.
    pub fseg: Vec<f64>,
}

impl EncoderSample {
    pub fn from_motion(skel: &Skeleton, motion: &Motion, cfg: &TrainConfig) -> Result<Self> {
        if motion.len() != cfg.k {
            return Err(Error::Data(format!("window has {} frames, expected {}", motion.len(), cfg.k)));
        }
        let input = assemble_input(skel, motion)?.0.into_raw_vec_and_offset().0;
        let (seq, seg) = guidance_spectra(motion, cfg)?;
        Ok(EncoderSample {
            input,
            fseq: seq.0.into_raw_vec_and_offset().0,
            fseg: seg.0.into_raw_vec_and_offset().0,
        })
    }
}

/// Pose-space joints (root at the origin, no translation) that decoded
/// motions are compared against, `K × J × 3` flattened.
pub fn target_joints(skel: &Skeleton, motion: &Motion) -> Result<Vec<f64>> {
    Ok(motion_joints(skel, motion, false)?.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kinematics::{normalize_orientation, yaw_rotate, AxisAngle, Pose, Vec3};

    fn random_motion(skel: &Skeleton, frames: usize, seed: u64) -> Motion {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut aa = |s: f64| AxisAngle::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        let poses = (0..frames)
            .map(|f| Pose {
                global_orient: aa(1.0),
                local: (1..skel.joint_count()).map(|_| aa(0.5)).collect(),
                root: Vec3::new(0.01 * f as f64, 0.0, 0.9),
            })
            .collect();
        Motion::new(poses, 30.0)
    }

    #[test]
    fn humanoid_channel_count() {
        // 3 + 69 + three blocks of 24 joints × 3 coordinates
        assert_eq!(InputLayout::new(24).channels(), 3 + 69 + 3 * 72);
        let l = InputLayout::new(24);
        assert_eq!(l.accelerations().end, l.channels());
        assert_eq!(l.local_pose().len(), 69);
    }

    #[test]
    fn slices_recover_each_channel() {
        let skel = Skeleton::humanoid24();
        let m = random_motion(&skel, 6, 3).with_dynamics(&skel).unwrap();
        let block = assemble_input(&skel, &m).unwrap().0;
        let l = InputLayout::new(24);
        let d = m.dynamics().unwrap();
        for f in 0..6 {
            let row = block.row(f);
            let g = m.frames[f].global_orient.0;
            assert_eq!(row.slice(ndarray::s![l.orientation()]).to_vec(), vec![g.x, g.y, g.z]);
            let local = row.slice(ndarray::s![l.local_pose()]);
            assert_eq!(local[3 * 4 + 1], m.frames[f].local[4].0.y);
            let pos = row.slice(ndarray::s![l.positions()]);
            let vel = row.slice(ndarray::s![l.velocities()]);
            let acc = row.slice(ndarray::s![l.accelerations()]);
            for j in 0..24 {
                for c in 0..3 {
                    assert_eq!(pos[3 * j + c], d.joints[[f, j, c]]);
                    assert_eq!(vel[3 * j + c], VELOCITY_SCALE * d.velocities[[f, j, c]]);
                    assert_eq!(acc[3 * j + c], ACCELERATION_SCALE * d.accelerations[[f, j, c]]);
                }
            }
        }
    }

    #[test]
    fn normalization_removes_heading_from_inputs() {
        let skel = Skeleton::humanoid24();
        let m = random_motion(&skel, 8, 5);
        let a = normalize_orientation(&m).0.with_dynamics(&skel).unwrap();
        let b = normalize_orientation(&yaw_rotate(&m, 1.1)).0.with_dynamics(&skel).unwrap();
        let (xa, xb) = (assemble_input(&skel, &a).unwrap().0, assemble_input(&skel, &b).unwrap().0);
        let diff = (&xa - &xb).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn missing_caches_rejected() {
        let skel = Skeleton::chain(3, 0.2).unwrap();
        let m = random_motion(&skel, 8, 1);
        assert!(assemble_input(&skel, &m).is_err());
        assert!(EncoderSample::from_motion(&skel, &m, &TrainConfig::tiny()).is_err());
    }
}
