//! Denoising training loop with metrics logging, checkpoints and resume.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{parse_value, render, KvFile, KvSection};
use crate::diffcore::{adam_step, AdamState, Checkpoint, Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::kinematics::{random_yaw_corrupt, Motion};
use crate::prior::config::TrainConfig;
use crate::prior::input::{target_joints, EncoderSample};
use crate::prior::loss::{loss_graph, LossBreakdown, LossWeights};
use crate::prior::model::{DecodedMotion, PriorModel};
use crate::tasks::metrics::mpjpe;

pub const METRICS_HEADER: &str = "epoch,rec,kl,pose_reg,total,val_mpjpe_mm";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Generator for epoch `epoch`: a fixed stream per (seed, epoch), so a
/// resumed run draws exactly what the uninterrupted run would have.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Encoder inputs for a batch, in parallel; order is preserved.
pub fn encoder_samples(model: &PriorModel, motions: &[&Motion]) -> Result<Vec<EncoderSample>> {
    motions
        .par_iter()
        .map(|m| EncoderSample::from_motion(model.skeleton(), m, model.config()))
        .collect()
}

fn ensure_dynamics(model: &PriorModel, m: &Motion) -> Result<Motion> {
    if m.dynamics().is_some() {
        Ok(m.clone())
    } else {
        m.clone().with_dynamics(model.skeleton())
    }
}

/// One optimization step on `batch`.
///
/// With denoising on, every window is first rotated by a random heading and
/// the encoder sees the rotated copy while the loss compares against the
/// original normalized window.
pub fn train_step(
    model: &PriorModel,
    store: &mut ParamStore,
    adam: &mut AdamState,
    batch: &[&Motion],
    rng: &mut impl Rng,
    kl_weight: f64,
) -> Result<LossBreakdown> {
    let cfg = model.config();
    let mut inputs = Vec::with_capacity(batch.len());
    for m in batch {
        let m = ensure_dynamics(model, m)?;
        inputs.push(if cfg.denoise { random_yaw_corrupt(&m, rng) } else { m });
    }
    let refs: Vec<&Motion> = inputs.iter().collect();
    let samples = encoder_samples(model, &refs)?;
    let mut target = Vec::new();
    for m in batch {
        target.extend(target_joints(model.skeleton(), m)?);
    }
    let eps: Vec<f64> = (0..batch.len() * cfg.latent_dim).map(|_| rng.sample(StandardNormal)).collect();

    let mut g = Graph::new();
    let sample_refs: Vec<&EncoderSample> = samples.iter().collect();
    let enc = model.encode(&mut g, store, &sample_refs)?;
    let z = PriorModel::reparameterize(&mut g, &enc, Tensor::new(vec![batch.len(), cfg.latent_dim], eps)?)?;
    let dec = model.decode(&mut g, store, z)?;
    let j = model.skeleton().joint_count();
    let target = g.input(Tensor::new(vec![batch.len() * cfg.k, j, 3], target)?);
    let weights = LossWeights { rec: cfg.lambda_rec, kl: kl_weight, vposer: cfg.lambda_vposer };
    let (loss, breakdown) = loss_graph(&mut g, &enc, &dec, target, weights)?;
    store.zero_grad();
    g.backward_into(loss, store)?;
    adam_step(store, adam)?;
    Ok(breakdown)
}

/// Eval-mode reconstruction: posterior mean in, decoded windows out.
pub fn reconstruct(model: &PriorModel, store: &ParamStore, motions: &[Motion]) -> Result<Vec<DecodedMotion>> {
    let mut out = Vec::with_capacity(motions.len());
    for chunk in motions.chunks(64) {
        let prepared = chunk.iter().map(|m| ensure_dynamics(model, m)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Motion> = prepared.iter().collect();
        let samples = encoder_samples(model, &refs)?;
        let mu = model.encode_mean(store, &samples)?;
        out.extend(model.decode_latents(store, &mu)?);
    }
    Ok(out)
}

/// Mean reconstruction MPJPE in millimetres over all frames of `motions`.
pub fn reconstruction_mpjpe(model: &PriorModel, store: &ParamStore, motions: &[Motion]) -> Result<f64> {
    if motions.is_empty() {
        return Err(Error::Data("no windows to evaluate".into()));
    }
    let decoded = reconstruct(model, store, motions)?;
    let mut total = 0.0;
    for (m, d) in motions.iter().zip(&decoded) {
        let gt = crate::kinematics::motion_joints(model.skeleton(), m, false)?;
        total += mpjpe(d.joints.view(), gt.view())?;
    }
    Ok(total / motions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based epoch number.
    pub epoch: usize,
    pub rec: f64,
    pub kl: f64,
    pub pose_reg: f64,
    pub total: f64,
    /// NaN when there is no validation split.
    pub val_mpjpe_mm: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            self.epoch, self.rec, self.kl, self.pose_reg, self.total, self.val_mpjpe_mm
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub train: Vec<Motion>,
    pub val: Vec<Motion>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Metrics of the epochs run by this call.
    pub metrics: Vec<EpochMetrics>,
}

struct MetaSection {
    epochs_completed: usize,
}

impl KvSection for MetaSection {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if key == "epochs_completed" {
            self.epochs_completed = parse_value(key, value)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![("epochs_completed", self.epochs_completed.to_string())]
    }
}

pub fn checkpoint_meta(cfg: &TrainConfig, epochs_completed: usize) -> String {
    render(cfg) + &render(&MetaSection { epochs_completed })
}

/// Configuration and progress stored in a checkpoint.
pub fn parse_checkpoint_meta(meta: &str) -> Result<(TrainConfig, usize)> {
    let mut cfg = TrainConfig::default();
    let mut progress = MetaSection { epochs_completed: 0 };
    KvFile::parse(meta)?.apply(&mut [&mut cfg, &mut progress])?;
    Ok((cfg, progress.epochs_completed))
}

/// Model and parameters stored in a checkpoint.
pub fn load_model(ck: &Checkpoint) -> Result<(PriorModel, usize)> {
    let (cfg, epochs) = parse_checkpoint_meta(&ck.meta)?;
    let model = PriorModel::new(&cfg)?;
    let fresh = model.init_params()?;
    let compatible = fresh.len() == ck.params.len()
        && fresh.iter().zip(ck.params.iter()).all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
    if !compatible {
        return Err(Error::Data("checkpoint parameters do not match its configuration".into()));
    }
    Ok((model, epochs))
}

fn open_metrics(dir: &Path, keep_epochs: usize) -> Result<fs::File> {
    let path = dir.join(METRICS_FILE);
    let mut text = format!("{METRICS_HEADER}\n");
    if keep_epochs > 0 {
        if let Ok(existing) = fs::read_to_string(&path) {
            for line in existing.lines().skip(1) {
                let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e <= keep_epochs) {
                    text.push_str(line);
                    text.push('\n');
                }
            }
        }
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    fs::OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))
}

/// Runs the remaining epochs of `model`'s schedule.
///
/// With `out_dir`, metrics are appended to `metrics.csv` after every epoch
/// and `checkpoint.bin` is refreshed every `checkpoint_every` epochs and at
/// the end. A failed step leaves the last saved checkpoint in place.
pub fn train_loop(
    model: &PriorModel,
    data: &TrainData,
    resume: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let cfg = model.config();
    let (mut store, mut adam, start) = match resume {
        Some(ck) => {
            let (mut saved, done) = parse_checkpoint_meta(&ck.meta)?;
            // The schedule length may grow; everything else must match.
            saved.epochs = cfg.epochs;
            if saved != *cfg {
                return Err(Error::Config("checkpoint was trained with a different configuration".into()));
            }
            if done > cfg.epochs {
                return Err(Error::Config(format!("checkpoint has {done} epochs, more than the configured {}", cfg.epochs)));
            }
            (ck.params, ck.adam, done)
        }
        None => {
            let store = model.init_params()?;
            let adam = AdamState::new(&store, cfg.lr, cfg.weight_decay);
            (store, adam, 0)
        }
    };
    if data.train.is_empty() && start < cfg.epochs {
        return Err(Error::Data("training split is empty".into()));
    }
    let mut csv = out_dir.map(|d| open_metrics(d, start)).transpose()?;
    let save = |store: &ParamStore, adam: &AdamState, done: usize| -> Result<Checkpoint> {
        let ck = Checkpoint { params: store.clone(), adam: adam.clone(), meta: checkpoint_meta(cfg, done) };
        if let Some(dir) = out_dir {
            ck.save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(ck)
    };

    let mut metrics = Vec::new();
    let mut last = None;
    for epoch in start..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let kl_weight = cfg.kl_weight(epoch);
        let mut sums = [0.0; 4];
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Motion> = chunk.iter().map(|i| &data.train[*i]).collect();
            let l = train_step(model, &mut store, &mut adam, &batch, &mut rng, kl_weight)?;
            for (s, v) in sums.iter_mut().zip([l.rec, l.kl, l.pose_reg, l.total]) {
                *s += v;
            }
            steps += 1;
        }
        let val = if data.val.is_empty() { f64::NAN } else { reconstruction_mpjpe(model, &store, &data.val)? };
        let m = EpochMetrics {
            epoch: epoch + 1,
            rec: sums[0] / steps as f64,
            kl: sums[1] / steps as f64,
            pose_reg: sums[2] / steps as f64,
            total: sums[3] / steps as f64,
            val_mpjpe_mm: val,
        };
        log::info!(
            "epoch {}/{}: total {:.5} rec {:.5} kl {:.4} pose_reg {:.4} val MPJPE {:.2} mm",
            m.epoch,
            cfg.epochs,
            m.total,
            m.rec,
            m.kl,
            m.pose_reg,
            m.val_mpjpe_mm
        );
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", m.csv_row()).map_err(|e| Error::io(METRICS_FILE, e))?;
        }
        metrics.push(m);
        let done = epoch + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
            save(&store, &adam, done)?;
        }
        last = Some(done);
    }
    let checkpoint = save(&store, &adam, last.unwrap_or(start))?;
    Ok(TrainOutcome { checkpoint, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{AxisAngle, Pose, Vec3};

    fn windows(model: &PriorModel, count: usize, seed: u64) -> Vec<Motion> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = model.skeleton().joint_count();
        (0..count)
            .map(|_| {
                let amp: Vec<f64> = (0..3 * j).map(|_| rng.random_range(-0.7..0.7)).collect();
                let hz = rng.random_range(0.5..2.0);
                let frames = (0..model.config().k)
                    .map(|f| {
                        let s = (hz * f as f64 / 30.0 * std::f64::consts::TAU).sin();
                        let aa = |i: usize| AxisAngle::new(amp[3 * i] * s, amp[3 * i + 1] * s, amp[3 * i + 2]);
                        Pose { global_orient: aa(0), local: (1..j).map(aa).collect(), root: Vec3::new(0.0, 0.0, 0.9) }
                    })
                    .collect();
                Motion::new(frames, 30.0).with_dynamics(model.skeleton()).unwrap()
            })
            .collect()
    }

    fn setup(epochs: usize) -> (PriorModel, TrainData) {
        let cfg = TrainConfig { epochs, batch_size: 3, lr: 1e-2, checkpoint_every: 1, ..TrainConfig::tiny() };
        let model = PriorModel::new(&cfg).unwrap();
        let data = TrainData { train: windows(&model, 7, 1), val: windows(&model, 2, 2) };
        (model, data)
    }

    fn bits(store: &ParamStore) -> Vec<u64> {
        store.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (model, data) = setup(0);
        let out = train_loop(&model, &data, None, None).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(bits(&out.checkpoint.params), bits(&model.init_params().unwrap()));
        assert_eq!(parse_checkpoint_meta(&out.checkpoint.meta).unwrap(), (model.config().clone(), 0));
    }

    #[test]
    fn identical_steps_give_identical_losses() {
        let (model, data) = setup(1);
        let run = || {
            let mut store = model.init_params().unwrap();
            let mut adam = AdamState::new(&store, 1e-2, 1e-4);
            let batch: Vec<&Motion> = data.train.iter().take(3).collect();
            let mut rng = epoch_rng(5, 0);
            let a = train_step(&model, &mut store, &mut adam, &batch, &mut rng, 0.01).unwrap();
            let b = train_step(&model, &mut store, &mut adam, &batch, &mut rng, 0.01).unwrap();
            (a, b, bits(&store))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (model4, data) = setup(4);
        let full = train_loop(&model4, &data, None, None).unwrap();

        let (model2, _) = setup(2);
        let half = train_loop(&model2, &data, None, None).unwrap();
        assert_eq!(half.metrics, full.metrics[..2]);
        let rest = train_loop(&model4, &data, Some(half.checkpoint.clone()), None).unwrap();
        assert_eq!(rest.metrics, full.metrics[2..]);
        assert_eq!(bits(&rest.checkpoint.params), bits(&full.checkpoint.params));
        assert_eq!(rest.checkpoint.to_bytes(), full.checkpoint.to_bytes());

        let other = TrainConfig { lr: 0.5, ..model4.config().clone() };
        let other = PriorModel::new(&other).unwrap();
        assert!(matches!(train_loop(&other, &data, Some(half.checkpoint), None), Err(Error::Config(_))));
    }

    #[test]
    fn metrics_file_and_checkpoint_are_written() {
        let dir = std::env::temp_dir().join(format!("mpkit-train-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let (model, data) = setup(3);
        let out = train_loop(&model, &data, None, Some(&dir)).unwrap();
        let csv = fs::read_to_string(dir.join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], out.metrics[2].csv_row());
        let saved = Checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(saved.to_bytes(), out.checkpoint.to_bytes());
        let (loaded, epochs) = load_model(&saved).unwrap();
        assert_eq!((loaded.config(), epochs), (model.config(), 3));
        let a = reconstruction_mpjpe(&loaded, &saved.params, &data.val).unwrap();
        assert_eq!(a, out.metrics[2].val_mpjpe_mm);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn empty_training_split_rejected() {
        let (model, data) = setup(1);
        let empty = TrainData { train: Vec::new(), val: data.val };
        assert!(matches!(train_loop(&model, &empty, None, None), Err(Error::Data(_))));
    }
}
