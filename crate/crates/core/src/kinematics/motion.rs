use std::f64::consts::TAU;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::kinematics::rotation::{aa_to_matrix, yaw_decompose, AxisAngle, RotMat, Vec3};
use crate::kinematics::skeleton::Skeleton;

/// Body configuration for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub global_orient: AxisAngle,
    /// One rotation per non-root joint, relative to its parent.
    pub local: Vec<AxisAngle>,
    /// Root position in meters.
    pub root: Vec3,
}

impl Pose {
    pub fn rest(joints: usize) -> Self {
        Pose {
            global_orient: AxisAngle::IDENTITY,
            local: vec![AxisAngle::IDENTITY; joints.saturating_sub(1)],
            root: Vec3::zeros(),
        }
    }
}

/// Joint trajectories derived from a motion's poses, each `K × J × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub joints: Array3<f64>,
    pub velocities: Array3<f64>,
    pub accelerations: Array3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub frames: Vec<Pose>,
    /// Frame rate in Hz.
    pub rate: f64,
    dynamics: Option<Dynamics>,
}

impl Motion {
    pub fn new(frames: Vec<Pose>, rate: f64) -> Self {
        Motion {
            frames,
            rate,
            dynamics: None,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dynamics(&self) -> Option<&Dynamics> {
        self.dynamics.as_ref()
    }

    /// Fills the joint/velocity/acceleration caches from the poses.
    pub fn compute_dynamics(&mut self, skel: &Skeleton) -> Result<()> {
        let joints = motion_joints(skel, self, true)?;
        let velocities = finite_difference(joints.view(), self.rate, 1)?;
        let accelerations = finite_difference(joints.view(), self.rate, 2)?;
        self.dynamics = Some(Dynamics {
            joints,
            velocities,
            accelerations,
        });
        Ok(())
    }

    pub fn with_dynamics(mut self, skel: &Skeleton) -> Result<Self> {
        self.compute_dynamics(skel)?;
        Ok(self)
    }

    pub fn clear_dynamics(&mut self) {
        self.dynamics = None;
    }

    pub fn global_matrices(&self) -> Vec<RotMat> {
        self.frames.iter().map(|f| aa_to_matrix(&f.global_orient)).collect()
    }
}

/// Joint positions for one pose. The root sits at the pose's translation.
pub fn forward_kinematics(skel: &Skeleton, pose: &Pose) -> Result<Vec<Vec3>> {
    let mut out = vec![Vec3::zeros(); skel.joint_count()];
    forward_kinematics_into(skel, pose, pose.root, &mut out)?;
    Ok(out)
}

fn forward_kinematics_into(
    skel: &Skeleton,
    pose: &Pose,
    root: Vec3,
    out: &mut [Vec3],
) -> Result<()> {
    let joints = skel.joint_count();
    if pose.local.len() + 1 != joints {
        return Err(Error::Data(format!(
            "pose has {} local rotations but the skeleton has {joints} joints",
            pose.local.len()
        )));
    }
    let mut world = Vec::with_capacity(joints);
    world.push(aa_to_matrix(&pose.global_orient));
    out[0] = root;
    for j in 1..joints {
        let parent = skel.parent(j).expect("non-root joint has a parent");
        let parent_rot = world[parent];
        out[j] = out[parent] + parent_rot.rotate(skel.offset(j));
        world.push(parent_rot * aa_to_matrix(&pose.local[j - 1]));
    }
    Ok(())
}

/// `K × J × 3` joint positions for every frame. With `with_translation`
/// false the root is pinned at the origin (pose-space joints).
pub fn motion_joints(skel: &Skeleton, motion: &Motion, with_translation: bool) -> Result<Array3<f64>> {
    let joints = skel.joint_count();
    let mut out = Array3::zeros((motion.len(), joints, 3));
    let mut buf = vec![Vec3::zeros(); joints];
    for (k, pose) in motion.frames.iter().enumerate() {
        let root = if with_translation { pose.root } else { Vec3::zeros() };
        forward_kinematics_into(skel, pose, root, &mut buf)?;
        for (j, p) in buf.iter().enumerate() {
            for c in 0..3 {
                out[[k, j, c]] = p[c];
            }
        }
    }
    Ok(out)
}

/// Time derivative along axis 0 by finite differences, keeping all `K`
/// frames.
///
/// Order 1 uses central differences inside and second-order one-sided
/// stencils at the ends; order 2 uses the three-point stencil everywhere,
/// shifted inward at the ends. Both are exact for quadratics.
pub fn finite_difference(series: ArrayView3<f64>, rate: f64, order: u8) -> Result<Array3<f64>> {
    let k = series.len_of(Axis(0));
    if k < 3 {
        return Err(Error::Data(format!("finite differences need at least 3 frames, got {k}")));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Data(format!("invalid frame rate {rate}")));
    }
    let h = 1.0 / rate;
    let x = |i: usize| series.index_axis(Axis(0), i);
    let mut out = Array3::zeros(series.raw_dim());
    match order {
        1 => {
            for i in 1..k - 1 {
                let v = (&x(i + 1) - &x(i - 1)) / (2.0 * h);
                out.index_axis_mut(Axis(0), i).assign(&v);
            }
            let first = ((&x(1) - &x(0)) * 3.0 - (&x(2) - &x(1))) / (2.0 * h);
            out.index_axis_mut(Axis(0), 0).assign(&first);
            let last = ((&x(k - 1) - &x(k - 2)) * 3.0 - (&x(k - 2) - &x(k - 3))) / (2.0 * h);
            out.index_axis_mut(Axis(0), k - 1).assign(&last);
        }
        2 => {
            let h2 = h * h;
            for i in 0..k {
                let c = i.clamp(1, k - 2);
                let a = ((&x(c + 1) - &x(c)) - (&x(c) - &x(c - 1))) / h2;
                out.index_axis_mut(Axis(0), i).assign(&a);
            }
        }
        _ => return Err(Error::Data(format!("finite difference order must be 1 or 2, got {order}"))),
    }
    Ok(out)
}

/// Rotates every frame's global orientation and root translation by the
/// same world-frame rotation; caches are rotated alongside.
pub fn rotate_motion(m: &Motion, rot: &RotMat) -> Motion {
    let frames = m
        .frames
        .iter()
        .map(|f| Pose {
            global_orient: (rot * &aa_to_matrix(&f.global_orient)).to_aa(),
            local: f.local.clone(),
            root: rot.rotate(&f.root),
        })
        .collect();
    let dynamics = m.dynamics.as_ref().map(|d| Dynamics {
        joints: rotate_points(&d.joints, rot),
        velocities: rotate_points(&d.velocities, rot),
        accelerations: rotate_points(&d.accelerations, rot),
    });
    Motion {
        frames,
        rate: m.rate,
        dynamics,
    }
}

fn rotate_points(points: &Array3<f64>, rot: &RotMat) -> Array3<f64> {
    let (k, j, _) = points.dim();
    let flat: Array2<f64> = points.to_shape((k * j, 3)).expect("contiguous").to_owned();
    let rt = Array2::from_shape_fn((3, 3), |(r, c)| rot.matrix()[(c, r)]);
    flat.dot(&rt).into_shape_with_order((k, j, 3)).expect("same size")
}

/// Removes the first frame's heading.
///
/// The first global orientation is split into yaw and rest; the correction
/// `R_cor = rest₁ · R₁ᵀ` (a pure yaw) then left-multiplies every frame's
/// orientation and root translation. Local poses are untouched.
pub fn normalize_orientation(m: &Motion) -> (Motion, RotMat) {
    let Some(first) = m.frames.first() else {
        return (m.clone(), RotMat::identity());
    };
    let r1 = aa_to_matrix(&first.global_orient);
    let (_, rest) = yaw_decompose(&r1);
    let r_cor = RotMat::from_matrix_unchecked(rest.matrix() * r1.matrix().transpose());
    (rotate_motion(m, &r_cor), r_cor)
}

/// Rotates the whole motion about the up axis by `angle`.
pub fn yaw_rotate(m: &Motion, angle: f64) -> Motion {
    rotate_motion(m, &RotMat::yaw(angle))
}

/// Applies a heading change drawn uniformly from `[0, 2π)`.
pub fn random_yaw_corrupt(m: &Motion, rng: &mut impl Rng) -> Motion {
    let angle = rng.random_range(0.0..TAU);
    yaw_rotate(m, angle)
}

/// Joints with the root trajectory subtracted from every joint.
pub fn root_relative(joints: ArrayView3<f64>) -> Array3<f64> {
    let root = joints.slice(s![.., 0..1, ..]).to_owned();
    &joints - &root
}
