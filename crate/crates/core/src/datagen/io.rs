//! Plain-text clip files and the corpus manifest.
//!
//! A clip file starts with the header `J K_frames rate label seed` and holds
//! one row per frame: root translation (3), global orientation (3) and the
//! `J − 1` local rotations (3 each), all axis-angle, space-separated with
//! nine significant digits. An infill problem file appends a line
//! `mask b₀ b₁ …` of per-frame known flags.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::datagen::generators::{Label, MotionClip};
use crate::error::{Error, Result};
use crate::kinematics::{AxisAngle, Motion, Pose, Vec3};

fn fmt_row(out: &mut String, pose: &Pose) {
    let vals = [pose.root, pose.global_orient.0].into_iter().chain(pose.local.iter().map(|a| a.0));
    let mut first = true;
    for v in vals {
        for c in v.iter() {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{c:.8e}");
        }
    }
    out.push('\n');
}

/// Clip text for any motion. `tag` takes the label slot; generated clips use
/// their [`Label`], decoded motions use [`DECODED_TAG`].
pub fn motion_to_string(m: &Motion, tag: &str, seed: u64) -> String {
    let joints = m.frames.first().map_or(1, |p| p.local.len() + 1);
    let mut out = format!("{joints} {} {} {tag} {seed}\n", m.len(), m.rate);
    for pose in &m.frames {
        fmt_row(&mut out, pose);
    }
    out
}

/// Label slot of motions produced by the model rather than a generator.
pub const DECODED_TAG: &str = "decoded";

pub fn clip_to_string(clip: &MotionClip) -> String {
    motion_to_string(&clip.motion, clip.label.as_str(), clip.seed)
}

/// A motion file whose label slot may hold any tag.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFile {
    pub motion: Motion,
    pub tag: String,
    pub seed: u64,
}

impl MotionFile {
    pub fn into_clip(self) -> Result<MotionClip> {
        Ok(MotionClip { label: self.tag.parse()?, motion: self.motion, seed: self.seed })
    }
}

fn bad(path: &Path, line: usize, what: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}:{line}: {what}", path.display()))
}

/// Parses clip text; returns the motion and any trailing non-frame lines.
fn parse_motion<'a>(path: &Path, text: &'a str) -> Result<(MotionFile, Vec<(usize, &'a str)>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| bad(path, 1, "empty clip file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 {
        return Err(bad(path, hl + 1, "header must be `J K_frames rate label seed`"));
    }
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|_| bad(path, hl + 1, format!("invalid integer `{s}`")));
    let joints = parse_usize(h[0])?;
    let frames = parse_usize(h[1])?;
    let rate: f64 = h[2].parse().map_err(|_| bad(path, hl + 1, "invalid rate"))?;
    let tag = h[3].to_owned();
    let seed: u64 = h[4].parse().map_err(|_| bad(path, hl + 1, "invalid seed"))?;
    if joints == 0 {
        return Err(bad(path, hl + 1, "joint count must be positive"));
    }
    let width = 3 + 3 * joints;
    let mut poses = Vec::with_capacity(frames);
    for _ in 0..frames {
        let (ln, line) = lines.next().ok_or_else(|| bad(path, hl + 1, format!("expected {frames} frames")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad(path, ln + 1, format!("invalid number `{v}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != width {
            return Err(bad(path, ln + 1, format!("expected {width} values, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(bad(path, ln + 1, "non-finite value"));
        }
        let v3 = |i: usize| Vec3::new(vals[i], vals[i + 1], vals[i + 2]);
        poses.push(Pose {
            root: v3(0),
            global_orient: AxisAngle(v3(3)),
            local: (0..joints - 1).map(|j| AxisAngle(v3(6 + 3 * j))).collect(),
        });
    }
    let rest = lines.collect();
    Ok((MotionFile { motion: Motion::new(poses, rate), tag, seed }, rest))
}

pub fn write_clip(path: &Path, clip: &MotionClip) -> Result<()> {
    fs::write(path, clip_to_string(clip)).map_err(|e| Error::io(path, e))
}

pub fn write_motion(path: &Path, m: &Motion, tag: &str, seed: u64) -> Result<()> {
    fs::write(path, motion_to_string(m, tag, seed)).map_err(|e| Error::io(path, e))
}

/// Reads a clip or decoded-motion file without interpreting its tag.
pub fn read_motion(path: &Path) -> Result<MotionFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (file, rest) = parse_motion(path, &text)?;
    if let Some((ln, _)) = rest.first() {
        return Err(bad(path, ln + 1, "unexpected trailing content"));
    }
    Ok(file)
}

/// Reads a generated clip; the tag must be a generator label.
pub fn read_clip(path: &Path) -> Result<MotionClip> {
    read_motion(path)?.into_clip()
}

pub fn write_infill_problem(path: &Path, file: &MotionFile, known: &[bool]) -> Result<()> {
    if known.len() != file.motion.len() {
        return Err(Error::shape("infill mask", &[known.len()], &[file.motion.len()]));
    }
    let mut text = motion_to_string(&file.motion, &file.tag, file.seed);
    text.push_str("mask");
    for k in known {
        text.push_str(if *k { " 1" } else { " 0" });
    }
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_infill_problem(path: &Path) -> Result<(MotionFile, Vec<bool>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (clip, rest) = parse_motion(path, &text)?;
    let [(ln, line)] = rest.as_slice() else {
        return Err(bad(path, clip.motion.len() + 2, "expected a single `mask` line after the frames"));
    };
    let mut parts = line.split_whitespace();
    if parts.next() != Some("mask") {
        return Err(bad(path, ln + 1, "expected `mask`"));
    }
    let known = parts
        .map(|p| match p {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad(path, ln + 1, format!("mask flags must be 0 or 1, found `{p}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if known.len() != clip.motion.len() {
        return Err(bad(path, ln + 1, format!("mask has {} flags for {} frames", known.len(), clip.motion.len())));
    }
    Ok((clip, known))
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub file: PathBuf,
    pub label: Label,
    pub seed: u64,
    pub frames: usize,
    pub rate: f64,
    pub split: SplitTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
}

impl SplitTag {
    fn as_str(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
        }
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# file label seed frames rate split";

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            e.file.display(),
            e.label,
            e.seed,
            e.frames,
            e.rate,
            e.split.as_str()
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(path, ln + 1, "expected `file label seed frames rate split`"));
        }
        let split = match f[5] {
            "train" => SplitTag::Train,
            "val" => SplitTag::Val,
            other => return Err(bad(path, ln + 1, format!("unknown split `{other}`"))),
        };
        out.push(ManifestEntry {
            file: PathBuf::from(f[0]),
            label: f[1].parse()?,
            seed: f[2].parse().map_err(|_| bad(path, ln + 1, "invalid seed"))?,
            frames: f[3].parse().map_err(|_| bad(path, ln + 1, "invalid frame count"))?,
            rate: f[4].parse().map_err(|_| bad(path, ln + 1, "invalid rate"))?,
            split,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::generators::generate_clip;

    fn tmp(name: &str) -> PathBuf {
        std::env::temp_dir().join(format!("mpkit-io-{}-{name}", std::process::id()))
    }

    #[test]
    fn clip_round_trip_keeps_nine_digits() {
        let clip = generate_clip(Label::Mix, 5.0, 9).unwrap();
        let path = tmp("a.clip");
        write_clip(&path, &clip).unwrap();
        let back = read_clip(&path).unwrap();
        assert_eq!((back.label, back.seed, back.motion.rate), (clip.label, clip.seed, clip.motion.rate));
        for (p, q) in back.motion.frames.iter().zip(&clip.motion.frames) {
            for (a, b) in p.local.iter().zip(&q.local) {
                assert!((a.0 - b.0).amax() <= 5e-9 * b.0.amax().max(1e-30));
            }
        }
        // Text is a fixed point after one round trip.
        assert_eq!(clip_to_string(&back), std::fs::read_to_string(&path).unwrap());
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn decoded_tag_needs_lenient_reader() {
        let clip = generate_clip(Label::Still, 5.0, 1).unwrap();
        let path = tmp("b.clip");
        write_motion(&path, &clip.motion, DECODED_TAG, 3).unwrap();
        assert!(matches!(read_clip(&path), Err(Error::Config(_))));
        assert_eq!(read_motion(&path).unwrap().tag, DECODED_TAG);
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn infill_problem_round_trip_and_errors() {
        let clip = generate_clip(Label::Walk, 5.0, 2).unwrap();
        let file = MotionFile { motion: clip.motion.clone(), tag: "walk".into(), seed: 2 };
        let known: Vec<bool> = (0..clip.motion.len()).map(|i| i % 3 != 0).collect();
        let path = tmp("c.problem");
        write_infill_problem(&path, &file, &known).unwrap();
        let (back, mask) = read_infill_problem(&path).unwrap();
        assert_eq!(mask, known);
        assert_eq!(back.motion.len(), clip.motion.len());
        assert!(write_infill_problem(&path, &file, &known[1..]).is_err());

        let text = std::fs::read_to_string(&path).unwrap().replace("mask 0", "mask 2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(read_infill_problem(&path), Err(Error::Data(_))));
        std::fs::remove_file(path).unwrap();
    }

    #[test]
    fn malformed_files_are_data_errors() {
        let path = tmp("d.clip");
        std::fs::write(&path, "2 1 30 walk 0\n0 0 0 0 0 0\n").unwrap();
        assert!(matches!(read_clip(&path), Err(Error::Data(_))));
        std::fs::write(&path, "2 1 30 walk\n").unwrap();
        assert!(matches!(read_clip(&path), Err(Error::Data(_))));
        std::fs::write(&path, "2 1 30 walk 0\n0 0 0 0 0 0 0 0 NaN\n").unwrap();
        assert!(matches!(read_clip(&path), Err(Error::Data(_))));
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(read_clip(&path), Err(Error::Io { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry { file: "clips/0000.clip".into(), label: Label::Walk, seed: 5, frames: 480, rate: 60.0, split: SplitTag::Train },
            ManifestEntry { file: "clips/0001.clip".into(), label: Label::Turn, seed: 6, frames: 300, rate: 60.0, split: SplitTag::Val },
        ];
        let path = tmp("manifest.txt");
        write_manifest(&path, &entries).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
        std::fs::remove_file(path).unwrap();
    }
}
