use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::config::{parse_bool, parse_list, parse_value, KvSection};
use crate::error::{Error, Result};
use crate::frequency::SegmentationScheme;
use crate::kinematics::Skeleton;

/// Where the skeleton comes from: the bundled humanoid, a straight chain of
/// `J` joints, or a skeleton file.
#[derive(Debug, Clone, PartialEq)]
pub enum SkeletonSpec {
    Humanoid24,
    Chain(usize),
    File(PathBuf),
}

impl SkeletonSpec {
    pub fn build(&self) -> Result<Skeleton> {
        match self {
            SkeletonSpec::Humanoid24 => Ok(Skeleton::humanoid24()),
            SkeletonSpec::Chain(j) => Skeleton::chain(*j, 0.25),
            SkeletonSpec::File(path) => Skeleton::load(path),
        }
    }
}

impl FromStr for SkeletonSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "humanoid24" {
            return Ok(SkeletonSpec::Humanoid24);
        }
        if let Some(j) = s.strip_prefix("chain:") {
            return parse_value::<usize>("skeleton", j).map(SkeletonSpec::Chain);
        }
        if s.is_empty() {
            return Err(Error::Config("empty skeleton".into()));
        }
        Ok(SkeletonSpec::File(PathBuf::from(s)))
    }
}

impl fmt::Display for SkeletonSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkeletonSpec::Humanoid24 => f.write_str("humanoid24"),
            SkeletonSpec::Chain(j) => write!(f, "chain:{j}"),
            SkeletonSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// Model shape, loss weights and optimization schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Window length in frames.
    pub k: usize,
    pub skeleton: SkeletonSpec,
    pub latent_dim: usize,
    /// Sequence-level DCT coefficients kept.
    pub c_m: usize,
    /// Segment-level DCT coefficients kept.
    pub c_s: usize,
    pub segments: usize,
    pub segment_len: usize,
    pub enc_widths: [usize; 3],
    pub dec_hidden: usize,
    pub attn_hidden: usize,
    pub fseq_embed: usize,
    pub pose_code_dim: usize,
    pub lambda_rec: f64,
    pub lambda_kl: f64,
    pub lambda_vposer: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Feed the sequence spectrum to the encoder.
    pub seq_guidance: bool,
    /// Re-weight segment features with attention from the segment spectra.
    pub seg_guidance: bool,
    /// Train on yaw-corrupted inputs against normalized targets.
    pub denoise: bool,
    /// Linear KL warm-up length in epochs; 0 disables it.
    pub kl_anneal_epochs: usize,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 128,
            skeleton: SkeletonSpec::Humanoid24,
            latent_dim: 256,
            c_m: 32,
            c_s: 8,
            segments: 8,
            segment_len: 16,
            enc_widths: [128, 256, 256],
            dec_hidden: 512,
            attn_hidden: 64,
            fseq_embed: 128,
            pose_code_dim: 32,
            lambda_rec: 1.0,
            lambda_kl: 0.01,
            lambda_vposer: 0.001,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 250,
            batch_size: 60,
            seed: 0,
            seq_guidance: true,
            seg_guidance: true,
            denoise: true,
            kl_anneal_epochs: 0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    /// The smallest useful model: `K = 8`, three-joint chain, `D = 4`.
    pub fn tiny() -> Self {
        TrainConfig {
            k: 8,
            skeleton: SkeletonSpec::Chain(3),
            latent_dim: 4,
            c_m: 4,
            c_s: 2,
            segments: 2,
            segment_len: 4,
            enc_widths: [4, 5, 6],
            dec_hidden: 8,
            attn_hidden: 3,
            fseq_embed: 5,
            pose_code_dim: 3,
            batch_size: 2,
            epochs: 1,
            ..TrainConfig::default()
        }
    }

    pub fn scheme(&self) -> Result<SegmentationScheme> {
        SegmentationScheme::new(self.segments, self.segment_len, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme()?;
        let positive = [
            ("k", self.k),
            ("latent_dim", self.latent_dim),
            ("c_m", self.c_m),
            ("c_s", self.c_s),
            ("dec_hidden", self.dec_hidden),
            ("attn_hidden", self.attn_hidden),
            ("fseq_embed", self.fseq_embed),
            ("pose_code_dim", self.pose_code_dim),
            ("batch_size", self.batch_size),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
        }
        if self.enc_widths.contains(&0) {
            return Err(Error::Config("`enc_widths` must be positive".into()));
        }
        if self.k < 3 {
            return Err(Error::Config("`k` must be at least 3 frames".into()));
        }
        if self.c_m > self.k {
            return Err(Error::Config(format!("c_m = {} exceeds k = {}", self.c_m, self.k)));
        }
        if self.c_s > self.segment_len {
            return Err(Error::Config(format!(
                "c_s = {} exceeds segment_len = {}",
                self.c_s, self.segment_len
            )));
        }
        for (key, v) in [
            ("lambda_rec", self.lambda_rec),
            ("lambda_kl", self.lambda_kl),
            ("lambda_vposer", self.lambda_vposer),
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("`{key}` must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Effective KL weight in `epoch` (0-based).
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if self.kl_anneal_epochs == 0 {
            self.lambda_kl
        } else {
            self.lambda_kl * ((epoch + 1) as f64 / self.kl_anneal_epochs as f64).min(1.0)
        }
    }
}

impl KvSection for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "k" => self.k = parse_value(key, value)?,
            "skeleton" => self.skeleton = value.parse()?,
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "c_m" => self.c_m = parse_value(key, value)?,
            "c_s" => self.c_s = parse_value(key, value)?,
            "segments" => self.segments = parse_value(key, value)?,
            "segment_len" => self.segment_len = parse_value(key, value)?,
            "enc_widths" => {
                let widths: Vec<usize> = parse_list(key, value)?;
                self.enc_widths = widths
                    .try_into()
                    .map_err(|_| Error::Config("`enc_widths` needs exactly three values".into()))?;
            }
            "dec_hidden" => self.dec_hidden = parse_value(key, value)?,
            "attn_hidden" => self.attn_hidden = parse_value(key, value)?,
            "fseq_embed" => self.fseq_embed = parse_value(key, value)?,
            "pose_code_dim" => self.pose_code_dim = parse_value(key, value)?,
            "lambda_rec" => self.lambda_rec = parse_value(key, value)?,
            "lambda_kl" => self.lambda_kl = parse_value(key, value)?,
            "lambda_vposer" => self.lambda_vposer = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "seq_guidance" => self.seq_guidance = parse_bool(key, value)?,
            "seg_guidance" => self.seg_guidance = parse_bool(key, value)?,
            "denoise" => self.denoise = parse_bool(key, value)?,
            "kl_anneal_epochs" => self.kl_anneal_epochs = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let w = self.enc_widths;
        vec![
            ("k", self.k.to_string()),
            ("skeleton", self.skeleton.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("c_m", self.c_m.to_string()),
            ("c_s", self.c_s.to_string()),
            ("segments", self.segments.to_string()),
            ("segment_len", self.segment_len.to_string()),
            ("enc_widths", format!("{},{},{}", w[0], w[1], w[2])),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("attn_hidden", self.attn_hidden.to_string()),
            ("fseq_embed", self.fseq_embed.to_string()),
            ("pose_code_dim", self.pose_code_dim.to_string()),
            ("lambda_rec", format!("{:?}", self.lambda_rec)),
            ("lambda_kl", format!("{:?}", self.lambda_kl)),
            ("lambda_vposer", format!("{:?}", self.lambda_vposer)),
            ("lr", format!("{:?}", self.lr)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("seq_guidance", self.seq_guidance.to_string()),
            ("seg_guidance", self.seg_guidance.to_string()),
            ("denoise", self.denoise.to_string()),
            ("kl_anneal_epochs", self.kl_anneal_epochs.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }
}
