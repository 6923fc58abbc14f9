//! End-to-end finite-difference check of the VAE loss with respect to every
//! parameter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::gradcheck::{check_params, GradCheckEntry, DEFAULT_STEP};
use crate::diffcore::{Graph, Tensor};
use crate::error::Result;
use crate::kinematics::{AxisAngle, Motion, Pose, Vec3};
use crate::prior::config::TrainConfig;
use crate::prior::input::{target_joints, EncoderSample};
use crate::prior::loss::{loss_graph, LossWeights};
use crate::prior::model::PriorModel;

/// Smooth random motion: each joint angle is a low-frequency sinusoid.
fn smooth_motion(model: &PriorModel, rng: &mut ChaCha8Rng) -> Result<Motion> {
    let cfg = model.config();
    let skel = model.skeleton();
    let mut wave = || {
        let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.8..0.8));
        let freq = rng.random_range(0.2..1.5);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        (amp, freq, phase)
    };
    let root = wave();
    let joints: Vec<_> = (1..skel.joint_count()).map(|_| wave()).collect();
    let at = |(amp, f, p): &([f64; 3], f64, f64), t: f64| {
        let s = (f * t + p).sin();
        AxisAngle::new(amp[0] * s, amp[1] * s, amp[2] * (f * t + p).cos())
    };
    let frames = (0..cfg.k)
        .map(|i| {
            let t = i as f64 / 30.0;
            Pose {
                global_orient: at(&root, t),
                local: joints.iter().map(|w| at(w, t)).collect(),
                root: Vec3::new(0.1 * t, 0.0, 0.9),
            }
        })
        .collect();
    Motion::new(frames, 30.0).with_dynamics(skel)
}

/// Gradient check of the full training loss (encoder, reparameterization,
/// decoder, forward kinematics, all three loss terms) on a batch of two
/// random windows.
///
/// Parameters are jittered away from their initial values first so that the
/// zero-initialized heads do not hide upstream gradients.
pub fn model_gradcheck(cfg: &TrainConfig, seed: u64) -> Result<Vec<GradCheckEntry>> {
    let model = PriorModel::new(cfg)?;
    let mut store = model.init_params()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in store.iter_mut() {
        for x in t.data_mut() {
            *x += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let motions = [smooth_motion(&model, &mut rng)?, smooth_motion(&model, &mut rng)?];
    let samples = motions.iter().map(|m| EncoderSample::from_motion(model.skeleton(), m, cfg)).collect::<Result<Vec<_>>>()?;
    let mut target = Vec::new();
    for m in &motions {
        target.extend(target_joints(model.skeleton(), m)?);
    }
    let j = model.skeleton().joint_count();
    let target = Tensor::new(vec![motions.len() * cfg.k, j, 3], target)?;
    let eps = Tensor::from_fn(&[motions.len(), cfg.latent_dim], |_| rng.sample(StandardNormal));
    // Weights of comparable size so no term is numerically invisible.
    let weights = LossWeights { rec: 1.0, kl: 0.1, vposer: 0.05 };

    let raw = check_params(&store, DEFAULT_STEP, |g: &mut Graph, s| {
        let refs: Vec<&EncoderSample> = samples.iter().collect();
        let enc = model.encode(g, s, &refs)?;
        let z = PriorModel::reparameterize(g, &enc, eps.clone())?;
        let dec = model.decode(g, s, z)?;
        let t = g.input(target.clone());
        Ok(loss_graph(g, &enc, &dec, t, weights)?.0)
    })?;
    Ok(raw.into_iter().map(|(name, rel_error)| GradCheckEntry { name, rel_error }).collect())
}
