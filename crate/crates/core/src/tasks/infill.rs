//! Motion infilling by optimizing a latent code under the frozen decoder.

use ndarray::{Array3, ArrayView3};

use crate::diffcore::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::kinematics::{motion_joints, Motion, Skeleton};
use crate::prior::{DecodedMotion, PriorModel};

pub const DEFAULT_ITERATIONS: usize = 30;
pub const DEFAULT_STEP: f64 = 0.2;
/// Consecutive loss increases that count as divergence.
pub const DIVERGENCE_RUN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InfillOptimizer {
    /// Plain gradient descent.
    #[default]
    Gd,
    Adam,
}

impl std::str::FromStr for InfillOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(InfillOptimizer::Gd),
            "adam" => Ok(InfillOptimizer::Adam),
            _ => Err(Error::Config(format!("unknown infill optimizer `{s}` (expected gd or adam)"))),
        }
    }
}

impl std::fmt::Display for InfillOptimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InfillOptimizer::Gd => "gd",
            InfillOptimizer::Adam => "adam",
        })
    }
}

/// Pose-space joint observations with a per-frame known flag.
#[derive(Debug, Clone, PartialEq)]
pub struct InfillProblem {
    /// `K × J × 3`; values on unknown frames are ignored.
    pub joints: Array3<f64>,
    pub known: Vec<bool>,
    pub iterations: usize,
    pub step: f64,
    pub optimizer: InfillOptimizer,
}

impl InfillProblem {
    pub fn new(joints: Array3<f64>, known: Vec<bool>) -> Result<Self> {
        let p = InfillProblem {
            joints,
            known,
            iterations: DEFAULT_ITERATIONS,
            step: DEFAULT_STEP,
            optimizer: InfillOptimizer::Gd,
        };
        p.validate()?;
        Ok(p)
    }

    /// Observations taken from a motion's pose-space joints.
    pub fn from_motion(skel: &Skeleton, motion: &Motion, known: Vec<bool>) -> Result<Self> {
        InfillProblem::new(motion_joints(skel, motion, false)?, known)
    }

    pub fn validate(&self) -> Result<()> {
        if self.known.len() != self.joints.shape()[0] {
            return Err(Error::shape("infill mask", &[self.known.len()], self.joints.shape()));
        }
        if !self.known.iter().any(|k| *k) {
            return Err(Error::Data("infill problem has no known frames".into()));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Config(format!("infill step must be positive, got {}", self.step)));
        }
        if self.joints.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("infill observations contain non-finite values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InfillResult {
    pub motion: DecodedMotion,
    pub z: Vec<f64>,
    /// Known-frame loss at `z = 0`.
    pub initial_loss: f64,
    /// Known-frame loss at the returned `z`.
    pub final_loss: f64,
    /// Loss at every visited iterate, starting with `z = 0`.
    pub losses: Vec<f64>,
    pub diverged: bool,
}

/// Mean squared joint distance over known frames and its gradient in `z`.
fn known_frame_loss(model: &PriorModel, store: &ParamStore, problem: &InfillProblem, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (k, j) = (problem.joints.shape()[0], problem.joints.shape()[1]);
    let mut g = Graph::new();
    let zv = g.input(Tensor::new(vec![1, z.len()], z.to_vec())?);
    let dec = model.decode(&mut g, store, zv)?;
    if g.shape(dec.joints) != [k, j, 3] {
        return Err(Error::shape("infill observations", problem.joints.shape(), g.shape(dec.joints)));
    }
    let target = g.input(Tensor::new(vec![k, j, 3], problem.joints.iter().copied().collect())?);
    let mask = Tensor::from_fn(&[k, j, 3], |i| if problem.known[i / (j * 3)] { 1.0 } else { 0.0 });
    let mask = g.input(mask);
    let known = problem.known.iter().filter(|v| **v).count();
    let diff = g.sub(dec.joints, target)?;
    let diff = g.mul(diff, mask)?;
    let sq = g.square(diff);
    let sum = g.sum(sq);
    let loss = g.scale(sum, 1.0 / (known * j) as f64);
    let grads = g.backward(loss)?;
    let grad = grads.get(zv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; z.len()]);
    Ok((g.value(loss).item(), grad))
}

/// Optimizes a zero-initialized latent so the decoded motion matches the
/// known frames, and returns the best iterate seen.
pub fn infill(model: &PriorModel, store: &ParamStore, problem: &InfillProblem) -> Result<InfillResult> {
    problem.validate()?;
    let d = model.config().latent_dim;
    let mut z = vec![0.0; d];
    let (mut m, mut v) = (vec![0.0; d], vec![0.0; d]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut losses = Vec::with_capacity(problem.iterations + 1);
    let mut best = (f64::INFINITY, z.clone());
    let mut rising = 0;
    let mut diverged = false;

    for it in 0..=problem.iterations {
        let (loss, grad) = known_frame_loss(model, store, problem, &z)?;
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if let Some(prev) = losses.last() {
            rising = if loss > *prev { rising + 1 } else { 0 };
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, z.clone());
        }
        if rising >= DIVERGENCE_RUN {
            diverged = true;
            break;
        }
        if it == problem.iterations {
            break;
        }
        match problem.optimizer {
            InfillOptimizer::Gd => {
                for (zi, gi) in z.iter_mut().zip(&grad) {
                    *zi -= problem.step * gi;
                }
            }
            InfillOptimizer::Adam => {
                let t = (it + 1) as i32;
                for i in 0..d {
                    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let mh = m[i] / (1.0 - b1.powi(t));
                    let vh = v[i] / (1.0 - b2.powi(t));
                    z[i] -= problem.step * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    let (final_loss, z) = best;
    let motion = model.decode_latents(store, std::slice::from_ref(&z))?.remove(0);
    Ok(InfillResult { motion, z, initial_loss: losses[0], final_loss, losses, diverged })
}

/// Fills unknown frames by linear interpolation between the nearest known
/// frames; frames outside the known range copy the nearest known frame.
pub fn linear_interpolation_baseline(joints: ArrayView3<f64>, known: &[bool]) -> Result<Array3<f64>> {
    let k = joints.shape()[0];
    if known.len() != k {
        return Err(Error::shape("interpolation mask", &[known.len()], joints.shape()));
    }
    let idx: Vec<usize> = (0..k).filter(|i| known[*i]).collect();
    if idx.is_empty() {
        return Err(Error::Data("interpolation needs at least one known frame".into()));
    }
    let mut out = joints.to_owned();
    for f in 0..k {
        if known[f] {
            continue;
        }
        let before = idx.iter().rev().find(|i| **i < f).copied();
        let after = idx.iter().find(|i| **i > f).copied();
        let frame = match (before, after) {
            (Some(a), Some(b)) => {
                let t = (f - a) as f64 / (b - a) as f64;
                &joints.index_axis(ndarray::Axis(0), a) * (1.0 - t) + &joints.index_axis(ndarray::Axis(0), b) * t
            }
            (Some(a), None) => joints.index_axis(ndarray::Axis(0), a).to_owned(),
            (None, Some(b)) => joints.index_axis(ndarray::Axis(0), b).to_owned(),
            (None, None) => unreachable!("at least one known frame"),
        };
        out.index_axis_mut(ndarray::Axis(0), f).assign(&frame);
    }
    Ok(out)
}

/// MPJPE in millimetres restricted to the unknown frames.
pub fn masked_mpjpe(pred: ArrayView3<f64>, gt: ArrayView3<f64>, known: &[bool]) -> Result<f64> {
    let per_frame = crate::tasks::metrics::mpjpe_per_frame(pred, gt)?;
    let missing: Vec<f64> = per_frame.iter().zip(known).filter(|(_, k)| !**k).map(|(e, _)| *e).collect();
    if missing.is_empty() {
        return Err(Error::Data("no missing frames to score".into()));
    }
    Ok(missing.iter().sum::<f64>() / missing.len() as f64)
}

/// Known flags with `missing` consecutive unknown frames centred in a
/// `frames`-long window.
pub fn centered_gap(frames: usize, missing: usize) -> Vec<bool> {
    let start = frames.saturating_sub(missing) / 2;
    (0..frames).map(|f| f < start || f >= start + missing).collect()
}
