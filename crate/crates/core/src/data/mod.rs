//! Datasets: COCO keypoint annotations, synthetic stick figures, labeled/unlabeled splits.
//!
//! Every dataset on disk is a directory of images plus one COCO-schema annotation file,
//! so real and synthetic data go through the same loader.

mod coco;
mod split;
mod synth;

pub use coco::{parse_coco_keypoints, parse_coco_str, to_coco_json, write_coco};
pub use split::{split_labeled_unlabeled, SplitMode};
pub use synth::{generate_synthetic, render_synthetic_sample, SynthConfig, SynthSample, SYNTH_LIMBS};

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{warp_image, warp_points, AffineMap, Image, KeypointSet};

/// Relative padding added around a person box before cropping.
pub const CROP_PADDING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Body17,
    Hand21,
    Synth13,
    FisheyeBody,
}

const BODY17: [&str; 17] = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
];

const SYNTH13: [&str; 13] = [
    "head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
    "right_wrist", "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle",
    "right_ankle",
];

const HAND21: [&str; 21] = [
    "wrist", "thumb1", "thumb2", "thumb3", "thumb4", "index1", "index2", "index3", "index4",
    "middle1", "middle2", "middle3", "middle4", "ring1", "ring2", "ring3", "ring4", "pinky1",
    "pinky2", "pinky3", "pinky4",
];

impl Profile {
    pub const ALL: [Profile; 4] = [Profile::Body17, Profile::Hand21, Profile::Synth13, Profile::FisheyeBody];

    pub fn joints(self) -> usize {
        self.joint_names().len()
    }

    pub fn joint_names(self) -> &'static [&'static str] {
        match self {
            Profile::Body17 | Profile::FisheyeBody => &BODY17,
            Profile::Hand21 => &HAND21,
            Profile::Synth13 => &SYNTH13,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Body17 => "body17",
            Profile::Hand21 => "hand21",
            Profile::Synth13 => "synth13",
            Profile::FisheyeBody => "fisheye-body",
        }
    }

    /// Fisheye imagery gets the wider outer rotation range.
    pub fn is_fisheye(self) -> bool {
        self == Profile::FisheyeBody
    }

    /// The non-fisheye profile with `k` joints.
    pub fn for_joint_count(k: usize) -> Option<Profile> {
        match k {
            17 => Some(Profile::Body17),
            21 => Some(Profile::Hand21),
            13 => Some(Profile::Synth13),
            _ => None,
        }
    }
}

impl std::fmt::Display for Profile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Profile::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown profile {s:?}; expected one of body17, hand21, synth13, fisheye-body"
                ))
            })
    }
}

/// One person instance (labeled) or one raw image (unlabeled).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    pub annotation_id: Option<u64>,
    /// Relative to the dataset root.
    pub file_name: String,
    /// `(height, width)` as declared by the annotation file.
    pub image_size: Option<(usize, usize)>,
    pub keypoints: Option<KeypointSet>,
    /// COCO `[x, y, width, height]`.
    pub bbox: Option<[f64; 4]>,
    pub area: Option<f64>,
    pub head_size: Option<f64>,
    /// The image file was not found when the index was built.
    pub missing_image: bool,
}

impl Sample {
    pub fn is_labeled(&self) -> bool {
        self.keypoints.is_some()
    }

    /// Copy with every annotation removed.
    pub fn unlabeled(&self) -> Self {
        Self {
            keypoints: None,
            area: None,
            head_size: None,
            ..self.clone()
        }
    }
}

/// What the parser dropped or flagged.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexReport {
    pub skipped_crowd: usize,
    pub skipped_unlabeled: usize,
    pub missing_images: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub profile: Profile,
    pub samples: Vec<Sample>,
    pub report: IndexReport,
}

/// A sample decoded, cropped and resized to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSample {
    pub image: Image,
    pub keypoints: Option<KeypointSet>,
    pub area: Option<f64>,
    pub head_size: Option<f64>,
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.samples[i].file_name)
    }

    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_labeled()).count()
    }

    /// Decodes sample `i` and maps its padded person box onto an `input = (height, width)` raster.
    pub fn load_sample(&self, i: usize, input: (usize, usize)) -> Result<LoadedSample> {
        let s = &self.samples[i];
        let path = self.image_path(i);
        if s.missing_image {
            return Err(Error::InvalidInput(format!("image {} is missing", path.display())));
        }
        let img = Image::load_png(&path)?;
        let bbox = s.bbox;
        let a = crop_affine(bbox, img.dims(), input)?;
        let image = if img.dims() == input && is_identity(&a) {
            img
        } else {
            warp_image(&img, &a, input)?
        };
        let scale = a.det().abs();
        Ok(LoadedSample {
            image,
            keypoints: s.keypoints.as_ref().map(|k| warp_points(k, &a, input)),
            area: s.area.map(|v| v * scale),
            head_size: s.head_size.map(|v| v * scale.sqrt()),
        })
    }

    /// Loads every sample in parallel, in index order.
    pub fn load_all(&self, input: (usize, usize)) -> Result<Vec<LoadedSample>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| self.load_sample(i, input))
            .collect()
    }
}

fn is_identity(a: &AffineMap) -> bool {
    let id = AffineMap::identity();
    a.matrix
        .iter()
        .flatten()
        .zip(id.matrix.iter().flatten())
        .all(|(x, y)| (x - y).abs() < 1e-9)
}

/// Affine map from source pixels to an `input` raster showing the box padded by
/// [`CROP_PADDING`] and widened to the input aspect ratio. Without a box the whole image
/// is fitted.
pub fn crop_affine(bbox: Option<[f64; 4]>, image: (usize, usize), input: (usize, usize)) -> Result<AffineMap> {
    let (oh, ow) = (input.0 as f64, input.1 as f64);
    let (cx, cy, mut bw, mut bh) = match bbox {
        Some([x, y, w, h]) => {
            if !(w > 0.0 && h > 0.0) {
                return Err(Error::InvalidInput(format!("degenerate bbox {bbox:?}")));
            }
            (x + w / 2.0, y + h / 2.0, w * (1.0 + CROP_PADDING), h * (1.0 + CROP_PADDING))
        }
        None => {
            let (h, w) = (image.0 as f64, image.1 as f64);
            (w / 2.0, h / 2.0, w, h)
        }
    };
    if bw / bh > ow / oh {
        bh = bw * oh / ow;
    } else {
        bw = bh * ow / oh;
    }
    // continuous box edges sit half a pixel outside the pixel centres
    let (sx, sy) = (ow / bw, oh / bh);
    let tx = (0.5 - (cx - bw / 2.0)) * sx - 0.5;
    let ty = (0.5 - (cy - bh / 2.0)) * sy - 0.5;
    AffineMap::from_matrix([[sx, 0.0, tx], [0.0, sy, ty]])
}

pub(crate) fn check_exists(root: &Path, file_name: &str) -> bool {
    root.join(file_name).is_file()
}
