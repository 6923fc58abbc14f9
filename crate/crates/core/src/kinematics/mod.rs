//! Rotation algebra, heading normalization, forward kinematics and
//! finite-difference dynamics.

mod motion;
mod rotation;
mod skeleton;

pub use motion::{
    finite_difference, forward_kinematics, motion_joints, normalize_orientation, random_yaw_corrupt,
    root_relative, rotate_motion, yaw_rotate, Dynamics, Motion, Pose,
};
pub use rotation::{
    aa_to_matrix, matrix_to_aa, rot6d_to_matrix, yaw_angle, yaw_decompose, AxisAngle, Rot6D, RotMat,
    Vec3, ORTHONORMAL_TOL,
};
pub(crate) use rotation::{gram_schmidt, hat, rodrigues_coeffs};
pub use skeleton::{joint, Skeleton};
