//! Procedural humanoid motions on the bundled 24-joint skeleton.
//!
//! Angles follow the skeleton frame (+X left, +Y forward, +Z up): a positive
//! rotation about X swings a hanging limb forward, a positive rotation about
//! Y swings a right-side limb outward.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kinematics::joint::*;
use crate::kinematics::{yaw_angle, AxisAngle, Motion, Pose, RotMat, Vec3};

pub const HUMANOID_JOINTS: usize = 24;
/// Pelvis height of the rest pose with the feet on the ground.
pub const STANDING_HEIGHT: f64 = 0.93;
/// Crossfade length between the parts of a `mix` clip.
pub const CROSSFADE_SECONDS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Walk,
    Wave,
    Squat,
    Turn,
    Still,
    Mix,
}

impl Label {
    pub const ALL: [Label; 6] = [Label::Walk, Label::Wave, Label::Squat, Label::Turn, Label::Still, Label::Mix];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Walk => "walk",
            Label::Wave => "wave",
            Label::Squat => "squat",
            Label::Turn => "turn",
            Label::Still => "still",
            Label::Mix => "mix",
        }
    }

    fn stream(&self) -> u64 {
        Label::ALL.iter().position(|l| l == self).expect("closed set") as u64 + 1
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Label::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown motion label `{s}`")))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A generated clip at its source frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub motion: Motion,
    pub label: Label,
    pub seed: u64,
}

/// Heading and ground position a generated part starts from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Start {
    pub heading: f64,
    pub xy: (f64, f64),
}

/// Local rotations being assembled for one frame.
struct Rig {
    local: Vec<RotMat>,
}

impl Rig {
    fn new() -> Self {
        Rig { local: vec![RotMat::identity(); HUMANOID_JOINTS - 1] }
    }

    /// Post-multiplies joint `j`'s rotation by `Rz(z)·Ry(y)·Rx(x)`.
    fn turn(&mut self, j: usize, x: f64, y: f64, z: f64) {
        let r = RotMat::yaw(z) * RotMat::about_y(y) * RotMat::about_x(x);
        let slot = &mut self.local[j - 1];
        *slot = &*slot * &r;
    }

    fn pose(self, heading: f64, tilt: RotMat, root: Vec3) -> Pose {
        Pose {
            global_orient: (RotMat::yaw(heading) * tilt).to_aa(),
            local: self.local.iter().map(RotMat::to_aa).collect(),
            root,
        }
    }
}

fn ground(start: &Start, heading: f64, forward: f64, z: f64) -> Vec3 {
    // Forward is +Y in the body frame; yaw ψ maps it to (−sin ψ, cos ψ).
    Vec3::new(start.xy.0 - forward * heading.sin(), start.xy.1 + forward * heading.cos(), z)
}

/// Gait parameters of [`walk_motion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    /// Full gait cycles per second.
    pub stride_hz: f64,
    pub hip_amp: f64,
    pub knee_amp: f64,
    pub bob: f64,
    pub phase: f64,
    /// Metres per gait cycle.
    pub stride_len: f64,
}

impl WalkParams {
    pub fn random(rng: &mut impl Rng) -> Self {
        WalkParams {
            stride_hz: rng.random_range(0.8..1.1),
            hip_amp: rng.random_range(0.3..0.4),
            knee_amp: rng.random_range(0.08..0.15),
            bob: rng.random_range(0.045..0.06),
            phase: rng.random_range(0.0..TAU),
            stride_len: rng.random_range(1.1..1.5),
        }
    }
}

/// Legs swing at the stride frequency `f` while the knees flex and the
/// pelvis dips at `2f`, once per step; ankle heights are therefore
/// dominated by the `2f` band.
pub fn walk_motion(p: &WalkParams, frames: usize, rate: f64, start: Start) -> Motion {
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / rate;
            let x = TAU * p.stride_hz * t + p.phase;
            let (s, c) = x.sin_cos();
            let mut rig = Rig::new();
            rig.turn(L_HIP, p.hip_amp * s, 0.0, 0.0);
            rig.turn(R_HIP, -p.hip_amp * s, 0.0, 0.0);
            rig.turn(L_KNEE, -p.knee_amp * s * s, 0.0, 0.0);
            rig.turn(R_KNEE, -p.knee_amp * s * s, 0.0, 0.0);
            rig.turn(L_ANKLE, 0.1 * c, 0.0, 0.0);
            rig.turn(R_ANKLE, -0.1 * c, 0.0, 0.0);
            rig.turn(L_SHOULDER, -0.3 * s, -0.1, 0.0);
            rig.turn(R_SHOULDER, 0.3 * s, 0.1, 0.0);
            rig.turn(L_ELBOW, 0.2 + 0.1 * s, 0.0, 0.0);
            rig.turn(R_ELBOW, 0.2 - 0.1 * s, 0.0, 0.0);
            rig.turn(SPINE2, 0.0, 0.0, 0.08 * s);
            let z = STANDING_HEIGHT - p.bob * (2.0 * x).cos();
            let root = ground(&start, start.heading, p.stride_len * p.stride_hz * t, z);
            rig.pose(start.heading, RotMat::about_x(-0.05), root)
        })
        .collect();
    Motion::new(poses, rate)
}

fn wave_motion(rng: &mut impl Rng, frames: usize, rate: f64, start: Start) -> Motion {
    let raise = rng.random_range(2.0..2.5);
    let hz = rng.random_range(1.5..2.5);
    let amp = rng.random_range(0.3..0.5);
    let phase = rng.random_range(0.0..TAU);
    let sway = rng.random_range(0.02..0.06);
    let right = rng.random_bool(0.5);
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / rate;
            let ramp = (t / 0.6).min(1.0);
            let ramp = ramp * ramp * (3.0 - 2.0 * ramp);
            let w = amp * (TAU * hz * t + phase).sin() * ramp;
            let mut rig = Rig::new();
            let (shoulder, elbow, side) = if right { (R_SHOULDER, R_ELBOW, 1.0) } else { (L_SHOULDER, L_ELBOW, -1.0) };
            rig.turn(shoulder, 0.0, side * raise * ramp, 0.0);
            rig.turn(elbow, 0.0, side * (0.5 * ramp + w), 0.0);
            rig.turn(SPINE1, 0.0, 0.0, sway * (TAU * 0.3 * t).sin());
            rig.turn(NECK, 0.0, 0.0, -0.5 * sway * (TAU * 0.3 * t).sin());
            rig.pose(start.heading, RotMat::identity(), ground(&start, start.heading, 0.0, STANDING_HEIGHT))
        })
        .collect();
    Motion::new(poses, rate)
}

fn squat_motion(rng: &mut impl Rng, frames: usize, rate: f64, start: Start) -> Motion {
    let hz = rng.random_range(0.25..0.5);
    let depth = rng.random_range(0.9..1.3);
    let phase = rng.random_range(0.0..TAU);
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / rate;
            let th = depth * 0.5 * (1.0 - (TAU * hz * t + phase).cos());
            let mut rig = Rig::new();
            for (hip, knee, ankle) in [(L_HIP, L_KNEE, L_ANKLE), (R_HIP, R_KNEE, R_ANKLE)] {
                rig.turn(hip, th, 0.0, 0.0);
                rig.turn(knee, -2.0 * th, 0.0, 0.0);
                rig.turn(ankle, th, 0.0, 0.0);
            }
            rig.turn(SPINE1, -0.35 * th, 0.0, 0.0);
            rig.turn(L_SHOULDER, 0.8 * th, 0.0, 0.0);
            rig.turn(R_SHOULDER, 0.8 * th, 0.0, 0.0);
            // Thigh and shank lengths keep the ankles on the ground.
            let z = STANDING_HEIGHT - 0.8 * (1.0 - th.cos());
            rig.pose(start.heading, RotMat::identity(), ground(&start, start.heading, 0.0, z))
        })
        .collect();
    Motion::new(poses, rate)
}

fn turn_motion(rng: &mut impl Rng, frames: usize, rate: f64, start: Start) -> Motion {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let total = sign * rng.random_range(0.5 * PI..PI);
    let step_hz = rng.random_range(1.5..2.2);
    let lead = rng.random_range(0.1..0.3);
    let duration = frames as f64 / rate;
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / rate;
            let u = ((t / duration - lead) / (1.0 - 2.0 * lead)).clamp(0.0, 1.0);
            let heading = start.heading + total * u * u * (3.0 - 2.0 * u);
            let x = TAU * step_hz * t;
            let lift = if u > 0.0 && u < 1.0 { 1.0 } else { 0.3 };
            let mut rig = Rig::new();
            rig.turn(L_HIP, 0.15 * lift * x.sin().max(0.0), 0.0, 0.0);
            rig.turn(R_HIP, 0.15 * lift * (-x.sin()).max(0.0), 0.0, 0.0);
            rig.turn(L_KNEE, -0.3 * lift * x.sin().max(0.0), 0.0, 0.0);
            rig.turn(R_KNEE, -0.3 * lift * (-x.sin()).max(0.0), 0.0, 0.0);
            rig.turn(SPINE2, 0.0, 0.0, 0.1 * total.signum() * (PI * u).sin());
            rig.turn(NECK, 0.0, 0.0, 0.15 * total.signum() * (PI * u).sin());
            let z = STANDING_HEIGHT - 0.01 * lift * (2.0 * x).sin().abs();
            rig.pose(heading, RotMat::identity(), ground(&start, start.heading, 0.0, z))
        })
        .collect();
    Motion::new(poses, rate)
}

/// Rest pose with smooth noise of at most `STILL_AMPLITUDE` radians per axis
/// below 0.15 Hz.
pub const STILL_AMPLITUDE: f64 = 0.002;

fn still_motion(rng: &mut impl Rng, frames: usize, rate: f64, start: Start) -> Motion {
    let waves: Vec<[(f64, f64, f64); 2]> = (0..HUMANOID_JOINTS * 3)
        .map(|_| {
            let mut w = || (rng.random_range(0.0..STILL_AMPLITUDE / 2.0), rng.random_range(0.02..0.15), rng.random_range(0.0..TAU));
            [w(), w()]
        })
        .collect();
    let poses = (0..frames)
        .map(|i| {
            let t = i as f64 / rate;
            let noise = |j: usize, c: usize| -> f64 {
                waves[j * 3 + c].iter().map(|(a, f, ph)| a * (TAU * f * t + ph).sin()).sum()
            };
            let mut rig = Rig::new();
            for j in 1..HUMANOID_JOINTS {
                rig.turn(j, noise(j, 0), noise(j, 1), noise(j, 2));
            }
            let tilt = RotMat::about_y(noise(0, 1)) * RotMat::about_x(noise(0, 0));
            let root = ground(&start, start.heading, 0.0, STANDING_HEIGHT);
            rig.pose(start.heading + noise(0, 2), tilt, root)
        })
        .collect();
    Motion::new(poses, rate)
}

fn quat(aa: &AxisAngle) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(aa.0)
}

fn blend(a: &Pose, b: &Pose, w: f64) -> Pose {
    let mix = |x: &AxisAngle, y: &AxisAngle| {
        let q = quat(x).try_slerp(&quat(y), w, 1e-12).unwrap_or_else(|| quat(if w < 0.5 { x } else { y }));
        AxisAngle(q.scaled_axis()).canonical()
    };
    Pose {
        global_orient: mix(&a.global_orient, &b.global_orient),
        local: a.local.iter().zip(&b.local).map(|(x, y)| mix(x, y)).collect(),
        root: a.root * (1.0 - w) + b.root * w,
    }
}

fn part(label: Label, rng: &mut impl Rng, frames: usize, rate: f64, start: Start) -> Motion {
    match label {
        Label::Walk => walk_motion(&WalkParams::random(rng), frames, rate, start),
        Label::Wave => wave_motion(rng, frames, rate, start),
        Label::Squat => squat_motion(rng, frames, rate, start),
        Label::Turn => turn_motion(rng, frames, rate, start),
        Label::Still | Label::Mix => still_motion(rng, frames, rate, start),
    }
}

/// Two or three single-label parts joined with quaternion crossfades; each
/// part continues from the previous part's heading and position.
fn mix_motion(rng: &mut impl Rng, frames: usize, rate: f64, start: Start) -> Motion {
    let parts = rng.random_range(2..=3usize);
    let fade = (CROSSFADE_SECONDS * rate).round() as usize;
    let base = (frames + fade * (parts - 1)) / parts;
    let mut out: Vec<Pose> = Vec::with_capacity(frames);
    let mut state = start;
    for p in 0..parts {
        let label = Label::ALL[rng.random_range(0..5)];
        let len = if p + 1 == parts { frames + fade * p - base * p } else { base };
        let m = part(label, rng, len, rate, state);
        if out.is_empty() {
            out.extend(m.frames);
        } else {
            let offset = out.len() - fade;
            for (i, pose) in m.frames.into_iter().enumerate() {
                if i < fade {
                    let w = (i as f64 + 1.0) / (fade as f64 + 1.0);
                    let w = w * w * (3.0 - 2.0 * w);
                    out[offset + i] = blend(&out[offset + i], &pose, w);
                } else {
                    out.push(pose);
                }
            }
        }
        // The next part begins where its crossfade begins.
        let anchor = &out[out.len() - fade.min(out.len())];
        state = Start {
            heading: yaw_angle(&anchor.global_orient.to_matrix()),
            xy: (anchor.root.x, anchor.root.y),
        };
    }
    out.truncate(frames);
    Motion::new(out, rate)
}

/// Shortest clip that still yields one 128-frame window at 30 fps.
pub const MIN_SECONDS: f64 = 128.0 / 30.0;

/// Procedural clip of `duration_s` seconds at `rate` frames per second.
/// Deterministic in `(label, duration_s, rate, seed)`.
pub fn generate_clip_at(label: Label, duration_s: f64, rate: f64, seed: u64) -> Result<MotionClip> {
    if !(duration_s.is_finite() && duration_s + 1e-9 >= MIN_SECONDS) {
        return Err(Error::Config(format!("clip duration {duration_s} s is below {MIN_SECONDS:.3} s")));
    }
    if !(rate.is_finite() && rate >= 30.0) {
        return Err(Error::Config(format!("source rate must be at least 30 fps, got {rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label.stream());
    let frames = (duration_s * rate).round() as usize;
    let start = Start { heading: rng.random_range(-PI..PI), xy: (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)) };
    let motion = match label {
        Label::Mix => mix_motion(&mut rng, frames, rate, start),
        other => part(other, &mut rng, frames, rate, start),
    };
    for (f, pose) in motion.frames.iter().enumerate() {
        let angles = std::iter::once(&pose.global_orient).chain(&pose.local);
        if angles.into_iter().any(|a| !(a.angle() <= PI + 1e-12)) {
            return Err(Error::Numeric(format!("generated {label} frame {f} has an angle outside ±π")));
        }
    }
    Ok(MotionClip { motion, label, seed })
}

pub const SOURCE_RATE: f64 = 60.0;

/// [`generate_clip_at`] at the default 60 fps source rate.
pub fn generate_clip(label: Label, duration_s: f64, seed: u64) -> Result<MotionClip> {
    generate_clip_at(label, duration_s, SOURCE_RATE, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::dct;
    use crate::kinematics::{motion_joints, Skeleton};

    fn max_joint_speed(skel: &Skeleton, m: &Motion) -> f64 {
        let j = motion_joints(skel, m, true).unwrap();
        let mut best = 0.0f64;
        for f in 1..j.shape()[0] {
            for k in 0..j.shape()[1] {
                let d: f64 = (0..3).map(|c| (j[[f, k, c]] - j[[f - 1, k, c]]).powi(2)).sum::<f64>().sqrt();
                best = best.max(d * m.rate);
            }
        }
        best
    }

    #[test]
    fn still_clips_barely_move() {
        // Per-axis angular rate ≤ 2 · 0.001 · 2π · 0.15 ≈ 1.9e-3 rad/s; with at
        // most nine rotating ancestors within 1.6 m the bound stays < 0.05 m/s.
        let skel = Skeleton::humanoid24();
        for seed in 0..20 {
            let clip = generate_clip(Label::Still, 8.0, seed).unwrap();
            let v = max_joint_speed(&skel, &clip.motion);
            assert!(v < 0.05, "seed {seed}: {v} m/s");
        }
    }

    #[test]
    fn walk_ankle_height_peaks_at_twice_stride_frequency() {
        let skel = Skeleton::humanoid24();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let p = WalkParams::random(&mut rng);
            let (frames, rate) = (480, 60.0);
            let m = walk_motion(&p, frames, rate, Start { heading: 0.3, xy: (0.0, 0.0) });
            let joints = motion_joints(&skel, &m, true).unwrap();
            for ankle in [L_ANKLE, R_ANKLE] {
                let z: Vec<f64> = (0..frames).map(|f| joints[[f, ankle, 2]]).collect();
                let c = dct(&z);
                let peak = (1..frames).max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs())).unwrap();
                // DCT-II bin k sits at k · rate / (2N) Hz.
                let expected = (2.0 * p.stride_hz * 2.0 * frames as f64 / rate).round() as usize;
                assert!(peak.abs_diff(expected) <= 1, "case {case}: peak {peak}, expected {expected}");
            }
        }
    }

    #[test]
    fn clips_are_deterministic_per_seed() {
        for label in Label::ALL {
            let a = generate_clip(label, 5.0, 42).unwrap();
            let b = generate_clip(label, 5.0, 42).unwrap();
            assert_eq!(a, b);
            let c = generate_clip(label, 5.0, 43).unwrap();
            assert_ne!(a.motion, c.motion, "{label}");
        }
    }

    #[test]
    fn angles_stay_within_pi() {
        for label in Label::ALL {
            for seed in 0..5 {
                let clip = generate_clip(label, 8.0, seed).unwrap();
                assert_eq!(clip.motion.len(), 480);
                for p in &clip.motion.frames {
                    assert!(p.local.iter().chain([&p.global_orient]).all(|a| a.angle() <= PI + 1e-12));
                }
            }
        }
    }

    #[test]
    fn labels_parse_and_reject_unknown() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!(matches!("jog".parse::<Label>(), Err(Error::Config(_))));
    }

    #[test]
    fn short_or_slow_clips_rejected() {
        assert!(generate_clip(Label::Walk, 4.0, 0).is_err());
        assert!(generate_clip(Label::Walk, MIN_SECONDS, 0).is_ok());
        assert!(generate_clip_at(Label::Walk, 8.0, 24.0, 0).is_err());
    }
}
