//! Synthetic motion corpus: procedural clips, 30 fps windowing, the
//! clip-level train/validation split and the on-disk corpus format.

mod generators;
mod io;
mod preprocess;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{parse_value, KvSection};
use crate::error::{Error, Result};
use crate::kinematics::{Motion, Skeleton};

pub use generators::{
    generate_clip, generate_clip_at, walk_motion, Label, MotionClip, Start, WalkParams, CROSSFADE_SECONDS,
    HUMANOID_JOINTS, MIN_SECONDS, SOURCE_RATE, STANDING_HEIGHT, STILL_AMPLITUDE,
};
pub use io::{
    clip_to_string, motion_to_string, read_clip, read_infill_problem, read_manifest, read_motion, write_clip,
    write_infill_problem, write_manifest, write_motion, ManifestEntry, MotionFile, SplitTag, DECODED_TAG,
    MANIFEST_FILE,
};
pub use preprocess::{
    prepare_window, preprocess, resample, split, val_clip_ids, window_count, window_starts, DatasetSplit,
    Preprocessed, Window, TARGET_RATE, WINDOW_OVERLAP,
};

/// Corpus size, clip length and split.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub clips: usize,
    pub clip_seconds: f64,
    pub val_fraction: f64,
    pub source_rate: f64,
    pub corpus_seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { clips: 300, clip_seconds: 8.0, val_fraction: 0.15, source_rate: SOURCE_RATE, corpus_seed: 0 }
    }
}

impl KvSection for GenConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "clips" => self.clips = parse_value(key, value)?,
            "clip_seconds" => self.clip_seconds = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "source_rate" => self.source_rate = parse_value(key, value)?,
            "corpus_seed" => self.corpus_seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("clips", self.clips.to_string()),
            ("clip_seconds", format!("{:?}", self.clip_seconds)),
            ("val_fraction", format!("{:?}", self.val_fraction)),
            ("source_rate", format!("{:?}", self.source_rate)),
            ("corpus_seed", self.corpus_seed.to_string()),
        ]
    }
}

/// Label and seed of clip `i`: labels cycle through the closed set.
pub fn clip_plan(cfg: &GenConfig) -> Vec<(Label, u64)> {
    (0..cfg.clips)
        .map(|i| {
            let seed = cfg.corpus_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            (Label::ALL[i % Label::ALL.len()], seed)
        })
        .collect()
}

pub fn generate_corpus(cfg: &GenConfig) -> Result<Vec<MotionClip>> {
    clip_plan(cfg)
        .into_par_iter()
        .map(|(label, seed)| generate_clip_at(label, cfg.clip_seconds, cfg.source_rate, seed))
        .collect()
}

/// Clips with their split assignment.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub clips: Vec<MotionClip>,
    pub val_clips: Vec<usize>,
}

impl Corpus {
    pub fn generate(cfg: &GenConfig) -> Result<Self> {
        Ok(Corpus {
            clips: generate_corpus(cfg)?,
            val_clips: val_clip_ids(cfg.clips, cfg.val_fraction, cfg.corpus_seed)?,
        })
    }

    /// Windows of every clip, divided by the clip assignment.
    pub fn windows(&self, skel: &Skeleton, k: usize) -> Result<(Vec<Motion>, Vec<Motion>)> {
        let pre = preprocess(skel, &self.clips, k)?;
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for w in pre.windows {
            if self.val_clips.binary_search(&w.clip).is_ok() {
                val.push(w.motion);
            } else {
                train.push(w.motion);
            }
        }
        Ok((train, val))
    }

    /// Writes `clips/NNNN.clip` files and the manifest under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<ManifestEntry>> {
        let clip_dir = dir.join("clips");
        fs::create_dir_all(&clip_dir).map_err(|e| Error::io(&clip_dir, e))?;
        let entries: Vec<ManifestEntry> = self
            .clips
            .iter()
            .enumerate()
            .map(|(i, c)| ManifestEntry {
                file: PathBuf::from("clips").join(format!("{i:04}.clip")),
                label: c.label,
                seed: c.seed,
                frames: c.motion.len(),
                rate: c.motion.rate,
                split: if self.val_clips.binary_search(&i).is_ok() { SplitTag::Val } else { SplitTag::Train },
            })
            .collect();
        self.clips
            .par_iter()
            .zip(&entries)
            .try_for_each(|(c, e)| write_clip(&dir.join(&e.file), c))?;
        write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
        Ok(entries)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let entries = read_manifest(&dir.join(MANIFEST_FILE))?;
        let clips = entries
            .par_iter()
            .map(|e| read_clip(&dir.join(&e.file)))
            .collect::<Result<Vec<_>>>()?;
        let val_clips = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == SplitTag::Val)
            .map(|(i, _)| i)
            .collect();
        Ok(Corpus { clips, val_clips })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenConfig {
        GenConfig { clips: 12, clip_seconds: 5.0, corpus_seed: 4, ..GenConfig::default() }
    }

    #[test]
    fn corpus_regeneration_is_bit_stable() {
        let a = Corpus::generate(&small()).unwrap();
        let b = Corpus::generate(&small()).unwrap();
        assert_eq!(a.clips, b.clips);
        assert_eq!(a.val_clips, b.val_clips);
        assert_eq!(a.val_clips.len(), 2);
        let labels: Vec<Label> = a.clips.iter().take(6).map(|c| c.label).collect();
        assert_eq!(labels, Label::ALL.to_vec());
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let dir = std::env::temp_dir().join(format!("mpkit-corpus-{}", std::process::id()));
        let corpus = Corpus::generate(&small()).unwrap();
        let entries = corpus.write(&dir).unwrap();
        assert_eq!(entries.len(), 12);
        let back = Corpus::load(&dir).unwrap();
        assert_eq!(back.val_clips, corpus.val_clips);
        for (a, b) in back.clips.iter().zip(&corpus.clips) {
            assert_eq!((a.label, a.seed, a.motion.len()), (b.label, b.seed, b.motion.len()));
            for (p, q) in a.motion.frames.iter().zip(&b.motion.frames) {
                assert!((p.root - q.root).norm() <= 1e-8 * q.root.norm().max(1.0));
            }
        }
        let skel = Skeleton::humanoid24();
        let (train, val) = back.windows(&skel, 128).unwrap();
        // 5 s at 30 fps is 150 frames: one window per clip.
        assert_eq!(train.len() + val.len(), 12);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_gen_key_rejected() {
        let mut cfg = GenConfig::default();
        assert!(!cfg.set("clip_secs", "3").unwrap());
        assert!(cfg.set("clips", "x").is_err());
    }
}
