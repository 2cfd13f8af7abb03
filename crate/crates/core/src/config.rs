//! Run configuration as flat `key = value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are the field
//! names listed in [`RunConfig::KEYS`]; command-line flags override file
//! values through [`RunConfig::set`].

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::curriculum::CurriculumConfig;
use crate::error::{Error, Result};
use crate::evaluation::ApVariant;
use crate::synthdata::GenConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub ap_variant: ApVariant,
    pub curriculum: CurriculumConfig,
    pub generate: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out: PathBuf::from("out"),
            seed: 0,
            workers: None,
            ap_variant: ApVariant::Voc07,
            curriculum: CurriculumConfig::default(),
            generate: GenConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_pair<T: FromStr>(key: &str, value: &str) -> Result<(T, T)>
where
    T::Err: Display,
{
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected two comma-separated values")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "dataset",
        "out",
        "seed",
        "workers",
        "ap_variant",
        "threshold_t",
        "object_threshold",
        "background_threshold",
        "min_background_fraction",
        "max_rounds",
        "pooled_size",
        "epochs",
        "lr",
        "initial_epochs",
        "initial_lr",
        "n_images",
        "n_categories",
        "height",
        "width",
        "channels",
        "objects_per_image",
        "body_size",
        "part_ratio",
        "noise_sigma",
    ];

    /// Sets one key. Values are validated only by [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let cur = &mut self.curriculum;
        let gen = &mut self.generate;
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = Some(parse(key, value)?),
            "ap_variant" => {
                self.ap_variant = match value {
                    "voc07" => ApVariant::Voc07,
                    "area" => ApVariant::Area,
                    _ => {
                        return Err(Error::Config(format!(
                            "ap_variant: unknown variant {value:?}"
                        )))
                    }
                }
            }
            "threshold_t" => cur.threshold = parse(key, value)?,
            "object_threshold" => cur.pipeline.object_threshold = parse(key, value)?,
            "background_threshold" => cur.pipeline.background_threshold = parse(key, value)?,
            "min_background_fraction" => cur.pipeline.min_background_fraction = parse(key, value)?,
            "max_rounds" => cur.max_rounds = parse(key, value)?,
            "pooled_size" => cur.pipeline.pooled_size = parse(key, value)?,
            "epochs" => cur.retraining.epochs = parse(key, value)?,
            "lr" => cur.retraining.learning_rate = parse(key, value)?,
            "initial_epochs" => cur.initial_training.epochs = parse(key, value)?,
            "initial_lr" => cur.initial_training.learning_rate = parse(key, value)?,
            "n_images" => gen.n_images = parse(key, value)?,
            "n_categories" => gen.n_categories = parse(key, value)?,
            "height" => gen.height = parse(key, value)?,
            "width" => gen.width = parse(key, value)?,
            "channels" => gen.channels = parse(key, value)?,
            "objects_per_image" => gen.objects_per_image = parse_pair(key, value)?,
            "body_size" => gen.body_size = parse_pair(key, value)?,
            "part_ratio" => gen.part_ratio = parse_pair(key, value)?,
            "noise_sigma" => gen.noise_sigma = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Curriculum settings with the run seed applied.
    pub fn curriculum(&self) -> CurriculumConfig {
        CurriculumConfig {
            seed: self.seed,
            ..self.curriculum.clone()
        }
    }

    /// Generator settings with the run seed applied.
    pub fn generator(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            ..self.generate.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.curriculum().validate()?;
        self.generator().validate()?;
        let lr = [
            self.curriculum.retraining.learning_rate,
            self.curriculum.initial_training.learning_rate,
        ];
        if lr.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::Config("empty output directory".into()));
        }
        Ok(())
    }
}
