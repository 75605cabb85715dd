use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use multiaug_core::data::{parse_coco_keypoints, split_labeled_unlabeled, DatasetIndex, LoadedSample, Profile, SplitMode};
use multiaug_core::ssltrain::{EvalConfig, EvalSample, MetricKind, TrainConfig, TrainData};
use serde::{Deserialize, Serialize};

use crate::Usage;

/// A complete experiment description. Relative paths are resolved against the directory of
/// the file they were read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides `train.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// COCO-style keypoint annotation file of the training pool.
    pub annotations: PathBuf,
    /// Inferred from the joint count when absent.
    #[serde(default)]
    pub profile: Option<Profile>,
    pub labeled_count: usize,
    /// Caps the unlabeled pool; everything left after the labeled split when absent.
    #[serde(default)]
    pub unlabeled_count: Option<usize>,
    /// Held out from the end of `annotations` unless `validation_annotations` is given.
    #[serde(default)]
    pub validation_count: usize,
    #[serde(default)]
    pub validation_annotations: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitKind,
    /// Network input `[height, width]`.
    #[serde(default = "default_input")]
    pub input: [usize; 2],
}

fn default_input() -> [usize; 2] {
    [64, 48]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// The first `labeled_count` samples are labeled.
    #[default]
    Prefix,
    /// A seeded random subset is labeled.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// `oks`, `pck` or `pckh`.
    pub metric: String,
    pub pck_alpha: f64,
    pub pckh_alpha: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metric: "pck".into(),
            pck_alpha: 0.2,
            pckh_alpha: 0.5,
        }
    }
}

impl EvalSection {
    pub fn kind(&self) -> Result<MetricKind> {
        self.metric.parse::<MetricKind>().map_err(|e| Usage::wrap(e.into()))
    }

    pub fn config(&self, joints: usize) -> EvalConfig {
        EvalConfig {
            pck_alpha: self.pck_alpha,
            pckh_alpha: self.pckh_alpha,
            ..EvalConfig::for_joints(joints)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub top_k: usize,
    pub centered: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            top_k: multiaug_core::analysis::DEFAULT_TOP_K,
            centered: false,
        }
    }
}

/// Everything a training or ranking run consumes.
pub struct LoadedData {
    pub profile: Profile,
    pub train: TrainData,
    pub validation: Vec<EvalSample>,
}

impl RunConfig {
    /// Reads, resolves and validates a config file. Every failure is a usage error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Usage::wrap)?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Usage::wrap)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.annotations = absolute(base, &cfg.data.annotations);
        if let Some(v) = &cfg.data.validation_annotations {
            cfg.data.validation_annotations = Some(absolute(base, v));
        }
        cfg.resolve();
        Ok(cfg)
    }

    /// Folds the top-level seed into the training section.
    pub fn resolve(&mut self) {
        match self.seed {
            Some(s) => self.train.seed = s,
            None => self.seed = Some(self.train.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Usage::wrap(e.into()))?;
        self.eval.kind()?;
        let [h, w] = self.data.input;
        if h < 8 || w < 8 || h % 4 != 0 || w % 4 != 0 {
            bail!(Usage(format!("input {h}x{w} must be at least 8x8 and divisible by 4")));
        }
        if self.data.labeled_count == 0 {
            bail!(Usage("data.labeled_count must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn input(&self) -> (usize, usize) {
        (self.data.input[0], self.data.input[1])
    }

    /// Parses the annotation files, splits and decodes every sample. A fisheye profile turns
    /// on the fisheye rotation range.
    pub fn load_data(&mut self) -> Result<LoadedData> {
        let d = &self.data;
        let mut pool = parse_coco_keypoints(&d.annotations, d.profile)?;
        let profile = pool.profile;
        let validation_index = match &d.validation_annotations {
            Some(p) => parse_coco_keypoints(p, Some(profile))?,
            None => {
                if d.validation_count >= pool.len() {
                    bail!(Usage(format!(
                        "validation_count {} leaves no training samples out of {}",
                        d.validation_count,
                        pool.len()
                    )));
                }
                let cut = pool.len() - d.validation_count;
                DatasetIndex {
                    root: pool.root.clone(),
                    profile,
                    samples: pool.samples.split_off(cut),
                    report: Default::default(),
                }
            }
        };
        let mode = match d.split {
            SplitKind::Prefix => SplitMode::Prefix,
            SplitKind::Shuffled => SplitMode::Shuffled { seed: self.train.seed },
        };
        let (labeled, mut unlabeled) =
            split_labeled_unlabeled(&pool, d.labeled_count, mode).map_err(|e| Usage::wrap(e.into()))?;
        if let Some(n) = d.unlabeled_count {
            if n > unlabeled.len() {
                bail!(Usage(format!(
                    "unlabeled_count {n} exceeds the {} samples left after the labeled split",
                    unlabeled.len()
                )));
            }
            unlabeled.samples.truncate(n);
        }
        let input = self.input();
        let labeled = labeled
            .load_all(input)?
            .into_iter()
            .map(|s| Ok((s.image, s.keypoints.context("labeled sample without keypoints")?)))
            .collect::<Result<Vec<_>>>()?;
        let unlabeled = unlabeled.load_all(input)?.into_iter().map(|s| s.image).collect();
        let validation = eval_samples(validation_index.load_all(input)?);
        self.data.profile = Some(profile);
        if profile.is_fisheye() {
            self.train.fisheye = true;
        }
        Ok(LoadedData {
            profile,
            train: TrainData { labeled, unlabeled },
            validation,
        })
    }
}

/// Labeled samples as evaluation instances; unlabeled ones are dropped.
pub fn eval_samples(loaded: Vec<LoadedSample>) -> Vec<EvalSample> {
    loaded
        .into_iter()
        .filter_map(|s| {
            Some(EvalSample {
                image: s.image,
                keypoints: s.keypoints?,
                area: s.area.unwrap_or(0.0),
                head_size: s.head_size,
            })
        })
        .collect()
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}
