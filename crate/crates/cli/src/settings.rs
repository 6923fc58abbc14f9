//! Everything a config file can set, in one place.

use std::path::Path;

use mpkit::config::{parse_value, render, KvFile, KvSection};
use mpkit::datagen::GenConfig;
use mpkit::prior::TrainConfig;
use mpkit::tasks::{InfillOptimizer, DEFAULT_ITERATIONS, DEFAULT_STEP};
use mpkit::{Error, Result};

/// Defaults for the infilling command.
#[derive(Debug, Clone, PartialEq)]
pub struct InfillSettings {
    pub iterations: usize,
    pub step: f64,
    pub optimizer: InfillOptimizer,
    /// Frames masked out when a problem is built from a plain clip.
    pub missing: usize,
}

impl Default for InfillSettings {
    fn default() -> Self {
        InfillSettings { iterations: DEFAULT_ITERATIONS, step: DEFAULT_STEP, optimizer: InfillOptimizer::Gd, missing: 60 }
    }
}

impl KvSection for InfillSettings {
    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "infill_iterations" => self.iterations = parse_value(key, value)?,
            "infill_step" => self.step = parse_value(key, value)?,
            "infill_optimizer" => self.optimizer = value.parse()?,
            "infill_missing" => self.missing = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("infill_iterations", self.iterations.to_string()),
            ("infill_step", format!("{:?}", self.step)),
            ("infill_optimizer", self.optimizer.to_string()),
            ("infill_missing", self.missing.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub gen: GenConfig,
    pub infill: InfillSettings,
}

impl Settings {
    /// Defaults overlaid with `path`, if given. `base` supplies the model
    /// defaults so commands such as `gradcheck` can start from a small model.
    pub fn load(path: Option<&Path>, base: TrainConfig) -> Result<Self> {
        let mut s = Settings { train: base, gen: GenConfig::default(), infill: InfillSettings::default() };
        if let Some(path) = path {
            KvFile::read(path)?.apply(&mut [&mut s.train, &mut s.gen, &mut s.infill])?;
        }
        s.train.validate()?;
        if s.gen.clips == 0 {
            return Err(Error::Config("`clips` must be positive".into()));
        }
        Ok(s)
    }

    /// The effective configuration, in a form `load` accepts.
    pub fn render(&self) -> String {
        format!(
            "# model and training\n{}\n# corpus\n{}\n# infilling\n{}",
            render(&self.train),
            render(&self.gen),
            render(&self.infill)
        )
    }
}
