//! Hard augmentations for consistency training.
//!
//! Basic operations are Cutout (`CO`), CutMix (`CM`), MixUp (`MU`), Joint
//! Cutout (`JC`), Joint Cut-Occlude (`JO`) and random affines (`A30`, `A60`,
//! `A90`). Pipelines apply their non-geometric operations in order and then a
//! single outer affine; see [`build_hard_view`].

mod ops;
mod validate;
mod view;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::{
    apply_cutmix, apply_cutout, apply_joint_cutocclude, apply_joint_cutocclude_with_jitter,
    apply_joint_cutout, apply_joint_cutout_with_jitter, apply_mixup, sample_affine, sample_affine_range, PatchEntry,
    PatchLog, PatchSource, Rect,
};
pub use validate::{validate_combination, ComboReport, Principle, Verdict, Violation};
pub use view::{build_hard_view, build_hard_view_fixed, AugmentedView, Donor};

/// Rotation range of the easy view; hard views add an outer affine on top of it.
pub const EASY_ROTATION_DEG: f64 = 30.0;
pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);
pub const DEFAULT_MIX_LAMBDA: (f64, f64) = (0.3, 0.7);
/// Patch side used by the reference hyper-parameters at a 256-pixel input height.
pub const REFERENCE_PATCH_SIZE: usize = 20;
pub const REFERENCE_INPUT_HEIGHT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugKind {
    A30,
    A60,
    A90,
    #[serde(rename = "CO")]
    Cutout,
    #[serde(rename = "CM")]
    CutMix,
    #[serde(rename = "MU")]
    MixUp,
    #[serde(rename = "JC")]
    JointCutout,
    #[serde(rename = "JO")]
    JointCutOcclude,
}

impl AugKind {
    pub fn tag(self) -> &'static str {
        match self {
            AugKind::A30 => "A30",
            AugKind::A60 => "A60",
            AugKind::A90 => "A90",
            AugKind::Cutout => "CO",
            AugKind::CutMix => "CM",
            AugKind::MixUp => "MU",
            AugKind::JointCutout => "JC",
            AugKind::JointCutOcclude => "JO",
        }
    }

    pub fn is_affine(self) -> bool {
        matches!(self, AugKind::A30 | AugKind::A60 | AugKind::A90)
    }

    pub fn needs_donor(self) -> bool {
        matches!(self, AugKind::CutMix | AugKind::MixUp | AugKind::JointCutOcclude)
    }

    pub fn needs_joints(self) -> bool {
        matches!(self, AugKind::JointCutout | AugKind::JointCutOcclude)
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One basic augmentation with its hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugOp {
    pub kind: AugKind,
    pub n_patches: usize,
    pub patch_size: usize,
    pub rotation_range_deg: f64,
    pub scale_range: (f64, f64),
    pub mix_lambda_range: (f64, f64),
}

impl AugOp {
    pub fn new(kind: AugKind) -> Self {
        let (n_patches, rotation_range_deg) = match kind {
            AugKind::A30 => (0, 30.0),
            AugKind::A60 => (0, 60.0),
            AugKind::A90 => (0, 90.0),
            AugKind::Cutout | AugKind::JointCutout => (5, 0.0),
            AugKind::CutMix | AugKind::JointCutOcclude => (2, 0.0),
            AugKind::MixUp => (0, 0.0),
        };
        let patch_size = if n_patches > 0 { REFERENCE_PATCH_SIZE } else { 0 };
        Self {
            kind,
            n_patches,
            patch_size,
            rotation_range_deg,
            scale_range: if kind.is_affine() { SCALE_RANGE } else { (1.0, 1.0) },
            mix_lambda_range: if kind == AugKind::MixUp { DEFAULT_MIX_LAMBDA } else { (1.0, 1.0) },
        }
    }
}

/// Ordered sequence of basic augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct AugPipeline {
    pub name: String,
    pub ops: Vec<AugOp>,
}

pub const PRESET_NAMES: [&str; 10] = [
    "A30", "A60", "A90", "CO", "CM", "MU", "JC", "JO", "JOCO", "JCCM",
];

impl AugPipeline {
    pub fn new(name: impl Into<String>, kinds: &[AugKind]) -> Result<Self> {
        let ops: Vec<AugOp> = kinds.iter().map(|&k| AugOp::new(k)).collect();
        let affine_at: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].kind.is_affine()).collect();
        let interior = affine_at.iter().any(|&i| i != 0 && i + 1 != ops.len());
        if affine_at.len() > 2 || interior {
            return Err(Error::InvalidParameter(
                "affine operations may only lead or trail a pipeline".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            ops,
        })
    }

    /// Named presets; `JOCO` is JO followed by CO and `JCCM` is JC followed by CM.
    pub fn preset(name: &str) -> Result<Self> {
        use AugKind::*;
        let kinds: &[AugKind] = match name {
            "A30" => &[A30],
            "A60" => &[A60],
            "A90" => &[A90],
            "CO" => &[Cutout],
            "CM" => &[CutMix],
            "MU" => &[MixUp],
            "JC" => &[JointCutout],
            "JO" => &[JointCutOcclude],
            "JOCO" => &[JointCutOcclude, Cutout],
            "JCCM" => &[JointCutout, CutMix],
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown pipeline {name:?}; valid presets: {}",
                    PRESET_NAMES.join(", ")
                )))
            }
        };
        Self::new(name, kinds)
    }

    /// Builds an ad-hoc pipeline from a comma- or plus-separated tag list, e.g. `JC,JO,CO`.
    pub fn from_tags(spec: &str) -> Result<Self> {
        let kinds = spec
            .split([',', '+'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(AugKind::from_str)
            .collect::<Result<Vec<_>>>()?;
        let name = kinds.iter().map(|k| k.tag()).collect::<Vec<_>>().join("");
        Self::new(name, &kinds)
    }

    pub fn kinds(&self) -> impl Iterator<Item = AugKind> + '_ {
        self.ops.iter().map(|o| o.kind)
    }

    pub fn non_affine(&self) -> impl Iterator<Item = &AugOp> + '_ {
        self.ops.iter().filter(|o| !o.kind.is_affine())
    }

    /// Rotation range of the outer affine applied after the non-geometric ops.
    ///
    /// An explicit affine op names the total hard-view range (so `A30` alone adds
    /// nothing on top of the easy view and `A60` adds another ±30°). Otherwise the
    /// outer affine brings the total to ±60°, or ±90° for fisheye data.
    pub fn outer_rotation_range(&self, fisheye: bool) -> f64 {
        let explicit = self
            .ops
            .iter()
            .filter(|o| o.kind.is_affine())
            .map(|o| o.rotation_range_deg)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
        let total = explicit.unwrap_or(if fisheye { 90.0 } else { 60.0 });
        (total - EASY_ROTATION_DEG).max(0.0)
    }

    /// Rescales every patch size relative to the reference 256-pixel input height.
    pub fn scaled_to_input(mut self, input_height: usize) -> Self {
        let size = patch_size_for(input_height);
        for op in &mut self.ops {
            if op.n_patches > 0 {
                op.patch_size = size;
            }
        }
        self
    }

    pub fn with_patch_size(mut self, size: usize) -> Self {
        for op in &mut self.ops {
            if op.n_patches > 0 {
                op.patch_size = size;
            }
        }
        self
    }
}

pub fn patch_size_for(input_height: usize) -> usize {
    ((REFERENCE_PATCH_SIZE * input_height) as f64 / REFERENCE_INPUT_HEIGHT as f64)
        .round()
        .max(1.0) as usize
}

impl FromStr for AugKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "A30" => AugKind::A30,
            "A60" => AugKind::A60,
            "A90" => AugKind::A90,
            "CO" => AugKind::Cutout,
            "CM" => AugKind::CutMix,
            "MU" => AugKind::MixUp,
            "JC" => AugKind::JointCutout,
            "JO" => AugKind::JointCutOcclude,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown augmentation tag {s:?}; expected one of A30, A60, A90, CO, CM, MU, JC, JO"
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_reference_parameters() {
        let co = AugOp::new(AugKind::Cutout);
        assert_eq!((co.n_patches, co.patch_size), (5, 20));
        let cm = AugOp::new(AugKind::CutMix);
        assert_eq!((cm.n_patches, cm.patch_size), (2, 20));
        let jc = AugOp::new(AugKind::JointCutout);
        assert_eq!((jc.n_patches, jc.patch_size), (5, 20));
        let jo = AugOp::new(AugKind::JointCutOcclude);
        assert_eq!((jo.n_patches, jo.patch_size), (2, 20));
        let a30 = AugOp::new(AugKind::A30);
        assert_eq!((a30.rotation_range_deg, a30.scale_range), (30.0, (0.75, 1.25)));
        assert_eq!(AugOp::new(AugKind::A60).rotation_range_deg, 60.0);
        assert_eq!(AugOp::new(AugKind::A90).rotation_range_deg, 90.0);
    }

    #[test]
    fn composed_presets() {
        let joco = AugPipeline::preset("JOCO").unwrap();
        assert_eq!(joco.kinds().collect::<Vec<_>>(), [AugKind::JointCutOcclude, AugKind::Cutout]);
        let jccm = AugPipeline::preset("JCCM").unwrap();
        assert_eq!(jccm.kinds().collect::<Vec<_>>(), [AugKind::JointCutout, AugKind::CutMix]);
        for name in PRESET_NAMES {
            assert_eq!(AugPipeline::preset(name).unwrap().name, name);
        }
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let err = AugPipeline::preset("XYZ").unwrap_err().to_string();
        assert!(err.contains("JOCO") && err.contains("JCCM"));
    }

    #[test]
    fn affine_ops_only_at_ends() {
        use AugKind::*;
        assert!(AugPipeline::new("x", &[A30, Cutout, A30]).is_ok());
        assert!(AugPipeline::new("x", &[Cutout, A30, CutMix]).is_err());
    }

    #[test]
    fn outer_range_rules() {
        assert_eq!(AugPipeline::preset("A30").unwrap().outer_rotation_range(false), 0.0);
        assert_eq!(AugPipeline::preset("A60").unwrap().outer_rotation_range(false), 30.0);
        assert_eq!(AugPipeline::preset("JOCO").unwrap().outer_rotation_range(false), 30.0);
        assert_eq!(AugPipeline::preset("JOCO").unwrap().outer_rotation_range(true), 60.0);
    }

    #[test]
    fn patch_size_scaling() {
        assert_eq!(patch_size_for(256), 20);
        assert_eq!(patch_size_for(64), 5);
        let p = AugPipeline::preset("JOCO").unwrap().scaled_to_input(64);
        assert!(p.ops.iter().all(|o| o.patch_size == 5));
    }

    #[test]
    fn tag_lists() {
        let p = AugPipeline::from_tags("JC, JO ,CO").unwrap();
        assert_eq!(p.name, "JCJOCO");
        assert_eq!(p.ops.len(), 3);
        assert!(AugPipeline::from_tags("JC,ZZ").is_err());
    }
}
