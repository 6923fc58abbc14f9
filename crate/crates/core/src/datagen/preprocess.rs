//! Resampling, windowing, per-window normalization and the clip-level split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datagen::generators::MotionClip;
use crate::error::{Error, Result};
use crate::kinematics::{normalize_orientation, Motion, Skeleton, Vec3};

pub const TARGET_RATE: f64 = 30.0;
/// Frames shared by consecutive windows.
pub const WINDOW_OVERLAP: usize = 30;

/// Nearest-frame resampling to `target_rate`: `⌊N·target/rate⌋` frames,
/// frame `i` taken from source time `i / target_rate`.
pub fn resample(m: &Motion, target_rate: f64) -> Result<Motion> {
    if !(m.rate.is_finite() && m.rate >= target_rate) {
        return Err(Error::Data(format!("cannot resample {} fps to {target_rate} fps", m.rate)));
    }
    let count = (m.len() as f64 * target_rate / m.rate + 1e-9).floor() as usize;
    let ratio = m.rate / target_rate;
    let frames = (0..count)
        .map(|i| {
            let src = ((i as f64 * ratio).round() as usize).min(m.len() - 1);
            m.frames[src].clone()
        })
        .collect();
    Ok(Motion::new(frames, target_rate))
}

/// `max(0, ⌊(F − K)/(K − overlap)⌋ + 1)`.
pub fn window_count(frames: usize, k: usize) -> usize {
    if frames < k {
        0
    } else {
        (frames - k) / (k - WINDOW_OVERLAP) + 1
    }
}

pub fn window_starts(frames: usize, k: usize) -> Vec<usize> {
    (0..window_count(frames, k)).map(|i| i * (k - WINDOW_OVERLAP)).collect()
}

/// Moves the first frame's root onto the vertical axis, removes the first
/// frame's heading and fills the dynamics caches.
pub fn prepare_window(skel: &Skeleton, m: &Motion) -> Result<Motion> {
    let first = m.frames.first().ok_or_else(|| Error::Data("empty window".into()))?;
    let shift = Vec3::new(first.root.x, first.root.y, 0.0);
    let mut centred = m.clone();
    centred.clear_dynamics();
    for pose in &mut centred.frames {
        pose.root -= shift;
    }
    normalize_orientation(&centred).0.with_dynamics(skel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub motion: Motion,
    /// Index of the source clip.
    pub clip: usize,
    /// First frame in the resampled clip.
    pub start: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Preprocessed {
    pub windows: Vec<Window>,
    /// Clips too short for a single window.
    pub skipped: usize,
}

/// Resamples every clip to 30 fps and cuts normalized `k`-frame windows with
/// a 30-frame overlap.
pub fn preprocess(skel: &Skeleton, clips: &[MotionClip], k: usize) -> Result<Preprocessed> {
    if k <= WINDOW_OVERLAP {
        return Err(Error::Config(format!("window length {k} must exceed the {WINDOW_OVERLAP}-frame overlap")));
    }
    let per_clip: Vec<Vec<Window>> = clips
        .par_iter()
        .enumerate()
        .map(|(ci, clip)| {
            let m = resample(&clip.motion, TARGET_RATE)?;
            window_starts(m.len(), k)
                .into_iter()
                .map(|s| {
                    let part = Motion::new(m.frames[s..s + k].to_vec(), m.rate);
                    Ok(Window { motion: prepare_window(skel, &part)?, clip: ci, start: s })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let skipped = per_clip.iter().filter(|w| w.is_empty()).count();
    if skipped > 0 {
        log::warn!("{skipped} clip(s) shorter than {k} frames after resampling were skipped");
    }
    Ok(Preprocessed { windows: per_clip.into_iter().flatten().collect(), skipped })
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    /// Sorted indices of the clips assigned to validation.
    pub val_clips: Vec<usize>,
    pub seed: u64,
    pub fraction: f64,
}

/// `round(fraction · clip_count)` clips drawn without replacement.
pub fn val_clip_ids(clip_count: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} is outside [0, 1]")));
    }
    let n_val = (fraction * clip_count as f64).round() as usize;
    let mut ids: Vec<usize> = (0..clip_count).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = ids[..n_val].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Assigns whole clips to validation so no source clip straddles the split.
pub fn split(windows: Vec<Window>, clip_count: usize, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if let Some(w) = windows.iter().find(|w| w.clip >= clip_count) {
        return Err(Error::Data(format!("window refers to clip {} of {clip_count}", w.clip)));
    }
    let val_clips = val_clip_ids(clip_count, fraction, seed)?;
    let (val, train) = windows.into_iter().partition(|w| val_clips.binary_search(&w.clip).is_ok());
    Ok(DatasetSplit { train, val, val_clips, seed, fraction })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::datagen::generators::{generate_clip, generate_clip_at, Label};
    use crate::kinematics::yaw_angle;

    fn clip_with_frames(frames: usize, rate: f64) -> MotionClip {
        let mut clip = generate_clip_at(Label::Walk, 8.0, rate, 1).unwrap();
        clip.motion.frames.truncate(frames);
        clip
    }

    #[test]
    fn window_count_examples() {
        assert_eq!(window_count(127, 128), 0);
        assert_eq!(window_count(128, 128), 1);
        assert_eq!(window_starts(226, 128), vec![0, 98]);
        assert_eq!(window_count(225, 128), 1);
    }

    #[test]
    fn exact_windows_from_clips() {
        let skel = Skeleton::humanoid24();
        let clips = [clip_with_frames(128, 30.0), clip_with_frames(226, 30.0), clip_with_frames(100, 30.0)];
        let out = preprocess(&skel, &clips, 128).unwrap();
        let per: Vec<(usize, usize)> = out.windows.iter().map(|w| (w.clip, w.start)).collect();
        assert_eq!(per, vec![(0, 0), (1, 0), (1, 98)]);
        assert_eq!(out.skipped, 1);
    }

    #[test]
    fn sixty_fps_halves_frame_count() {
        for n in [255, 256, 257, 480] {
            let clip = clip_with_frames(n, 60.0);
            let r = resample(&clip.motion, TARGET_RATE).unwrap();
            assert_eq!(r.len(), n / 2);
            // Exact decimation: every other source frame.
            for (i, f) in r.frames.iter().enumerate() {
                assert_eq!(f, &clip.motion.frames[2 * i]);
            }
        }
        let slow = Motion::new(clip_with_frames(100, 30.0).motion.frames, 24.0);
        assert!(resample(&slow, TARGET_RATE).is_err());
    }

    #[test]
    fn windows_are_normalized_and_idempotent() {
        let skel = Skeleton::humanoid24();
        let clip = generate_clip(Label::Turn, 8.0, 3).unwrap();
        let out = preprocess(&skel, &[clip], 128).unwrap();
        assert!(!out.windows.is_empty());
        for w in &out.windows {
            let first = &w.motion.frames[0];
            assert!(yaw_angle(&first.global_orient.to_matrix()).abs() < 1e-9);
            assert!(first.root.x.abs() < 1e-12 && first.root.y.abs() < 1e-12);
            assert!(w.motion.dynamics().is_some());
            let again = prepare_window(&skel, &w.motion).unwrap();
            for (a, b) in again.frames.iter().zip(&w.motion.frames) {
                assert!((a.global_orient.to_matrix().matrix() - b.global_orient.to_matrix().matrix()).norm() < 1e-9);
                assert!((a.root - b.root).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn split_examples() {
        assert!(val_clip_ids(40, 0.0, 3).unwrap().is_empty());
        assert_eq!(val_clip_ids(100, 0.15, 3).unwrap().len(), 15);
        assert!(val_clip_ids(10, 1.5, 3).is_err());
        assert_eq!(val_clip_ids(100, 0.15, 3).unwrap(), val_clip_ids(100, 0.15, 3).unwrap());
    }

    proptest! {
        #[test]
        fn window_count_matches_starts(frames in 0usize..2000, k in 31usize..300) {
            let starts = window_starts(frames, k);
            prop_assert_eq!(starts.len(), window_count(frames, k));
            for s in &starts {
                prop_assert!(s + k <= frames);
            }
            if let Some(&last) = starts.last() {
                // One more stride would overrun the clip.
                prop_assert!(last + (k - WINDOW_OVERLAP) + k > frames);
            }
        }

        #[test]
        fn split_keeps_clips_whole(clips in 1usize..60, fraction in 0.0f64..1.0, seed in any::<u64>()) {
            let windows: Vec<Window> = (0..clips)
                .flat_map(|c| (0..(c % 3)).map(move |s| Window { motion: Motion::new(Vec::new(), 30.0), clip: c, start: s }))
                .collect();
            let total = windows.len();
            let sp = split(windows, clips, fraction, seed).unwrap();
            prop_assert_eq!(sp.train.len() + sp.val.len(), total);
            let target = fraction * clips as f64;
            prop_assert!((sp.val_clips.len() as f64 - target).abs() <= 1.0);
            for v in &sp.val {
                prop_assert!(sp.train.iter().all(|t| t.clip != v.clip));
            }
        }
    }
}
