use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{check_exists, DatasetIndex, IndexReport, Profile, Sample};
use crate::error::{Error, Result};
use crate::geometry::{Joint, KeypointSet};

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    keypoints: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_keypoints: Option<usize>,
    area: f64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: u8,
    /// Not part of COCO; carried for PCKh-style evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    head_size: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
    #[serde(default)]
    keypoints: Vec<String>,
}

fn person() -> u64 {
    1
}

/// Reads a COCO keypoint annotation file. Image paths resolve relative to the file's
/// directory; the profile is inferred from the keypoint count unless given.
pub fn parse_coco_keypoints(path: impl AsRef<Path>, profile: Option<Profile>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut index = parse_coco_str(&text, path, profile)?;
    for s in &mut index.samples {
        s.missing_image = !check_exists(&root, &s.file_name);
    }
    index.report.missing_images = index.samples.iter().filter(|s| s.missing_image).count();
    index.root = root;
    Ok(index)
}

/// Parses annotation text; `origin` only labels errors. Images are not checked for existence.
pub fn parse_coco_str(text: &str, origin: &Path, profile: Option<Profile>) -> Result<DatasetIndex> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: CocoFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            path: origin.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            message: if field == "." {
                inner.to_string()
            } else {
                format!("field `{field}`: {inner}")
            },
        }
    })?;
    let bad = |message: String| Error::Format {
        what: "COCO annotations",
        message,
    };

    let images: HashMap<u64, &CocoImage> = file.images.iter().map(|i| (i.id, i)).collect();
    let profile = match profile {
        Some(p) => p,
        None => {
            let Some(first) = file.annotations.first() else {
                return Err(bad("no annotations to infer the keypoint profile from".into()));
            };
            let k = first.keypoints.len() / 3;
            Profile::for_joint_count(k)
                .ok_or_else(|| bad(format!("no profile has {k} keypoints")))?
        }
    };
    let k = profile.joints();
    let mut report = IndexReport::default();
    let mut samples = Vec::new();
    for (i, ann) in file.annotations.iter().enumerate() {
        let img = images.get(&ann.image_id).ok_or_else(|| {
            bad(format!(
                "annotations[{i}] (id {}): image_id {} is not listed in `images`",
                ann.id, ann.image_id
            ))
        })?;
        if ann.keypoints.len() != 3 * k {
            return Err(bad(format!(
                "annotations[{i}] (id {}): field `keypoints` has {} values, profile {profile} needs {}",
                ann.id,
                ann.keypoints.len(),
                3 * k
            )));
        }
        if ann.iscrowd != 0 {
            report.skipped_crowd += 1;
            continue;
        }
        let joints: Vec<Joint> = ann
            .keypoints
            .chunks_exact(3)
            .map(|t| match t[2] as i64 {
                1 | 2 => Ok(Joint::visible(t[0], t[1])),
                0 => Ok(Joint::invisible()),
                v => Err(v),
            })
            .collect::<std::result::Result<_, _>>()
            .map_err(|v| {
                bad(format!(
                    "annotations[{i}] (id {}): field `keypoints` has visibility flag {v}",
                    ann.id
                ))
            })?;
        if !joints.iter().any(Joint::is_labeled) {
            report.skipped_unlabeled += 1;
            continue;
        }
        samples.push(Sample {
            image_id: img.id,
            annotation_id: Some(ann.id),
            file_name: img.file_name.clone(),
            image_size: img.height.zip(img.width),
            keypoints: Some(KeypointSet::new(joints)),
            bbox: Some(ann.bbox),
            area: Some(ann.area),
            head_size: ann.head_size,
            missing_image: false,
        });
    }
    Ok(DatasetIndex {
        root: origin.parent().unwrap_or(Path::new(".")).to_path_buf(),
        profile,
        samples,
        report,
    })
}

/// Serializes labeled samples in COCO keypoint form (visible joints get flag 2).
pub fn to_coco_json(index: &DatasetIndex) -> String {
    let mut images: Vec<CocoImage> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut annotations = Vec::new();
    for (n, s) in index.samples.iter().enumerate() {
        if seen.insert(s.image_id) {
            images.push(CocoImage {
                id: s.image_id,
                file_name: s.file_name.clone(),
                width: s.image_size.map(|v| v.1),
                height: s.image_size.map(|v| v.0),
            });
        }
        let Some(kps) = &s.keypoints else { continue };
        let keypoints = kps
            .joints
            .iter()
            .flat_map(|j| {
                if j.is_labeled() {
                    [j.x, j.y, 2.0]
                } else {
                    [0.0, 0.0, 0.0]
                }
            })
            .collect();
        annotations.push(CocoAnnotation {
            id: s.annotation_id.unwrap_or(n as u64 + 1),
            image_id: s.image_id,
            category_id: 1,
            keypoints,
            num_keypoints: Some(kps.joints.iter().filter(|j| j.is_labeled()).count()),
            area: s.area.unwrap_or(0.0),
            bbox: s.bbox.unwrap_or([0.0; 4]),
            iscrowd: 0,
            head_size: s.head_size,
        });
    }
    let file = CocoFile {
        images,
        annotations,
        categories: vec![CocoCategory {
            id: 1,
            name: "person".into(),
            keypoints: index.profile.joint_names().iter().map(|s| s.to_string()).collect(),
        }],
    };
    serde_json::to_string_pretty(&file).expect("COCO structures serialize")
}

pub fn write_coco(index: &DatasetIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_coco_json(index)).map_err(|e| Error::io(path, e))
}
