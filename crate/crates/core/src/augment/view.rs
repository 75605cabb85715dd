use crate::augment::ops::{
    apply_cutmix, apply_cutout, apply_joint_cutocclude, apply_joint_cutout, apply_mixup,
    sample_affine_range, PatchEntry,
};
use crate::augment::{AugKind, AugPipeline};
use crate::error::{Error, Result};
use crate::geometry::{raster_center, warp_image, AffineMap, Image, KeypointSet};
use crate::rng::RandomStream;

/// Another sample of the batch lending pixels to CutMix, MixUp and Joint Cut-Occlude.
#[derive(Debug, Clone, Copy)]
pub struct Donor<'a> {
    pub id: usize,
    pub image: &'a Image,
    pub joints: &'a KeypointSet,
}

/// A hard view derived from an easy view.
#[derive(Debug, Clone)]
pub struct AugmentedView {
    pub image: Image,
    /// Easy-view frame → this view's frame.
    pub relative_affine: AffineMap,
    pub patch_log: Vec<PatchEntry>,
    /// `(donor sample id, mix weight of the original image)` when MixUp ran.
    pub mix_partner: Option<(usize, f64)>,
    /// Number of joint-aware ops that fell back to their joint-free counterpart.
    pub fallbacks: usize,
}

/// Applies the pipeline's non-geometric ops in order to `easy_img`, then one outer affine
/// whose rotation is uniform in `(-outer_range_deg, outer_range_deg)` (identity when the
/// range is zero) about the raster centre.
pub fn build_hard_view(
    easy_img: &Image,
    easy_joints: &KeypointSet,
    donor: Option<Donor<'_>>,
    pipeline: &AugPipeline,
    outer_range_deg: f64,
    rng: &mut RandomStream,
) -> Result<AugmentedView> {
    let mut view = apply_pipeline_ops(easy_img, easy_joints, donor, pipeline, rng)?;
    if outer_range_deg > 0.0 {
        let a = sample_affine_range(outer_range_deg, rng, raster_center(view.image.dims()))?;
        view.image = warp_image(&view.image, &a, view.image.dims())?;
        view.relative_affine = a;
    }
    Ok(view)
}

/// Like [`build_hard_view`] but with a given outer affine, e.g. one shared by several paths.
pub fn build_hard_view_fixed(
    easy_img: &Image,
    easy_joints: &KeypointSet,
    donor: Option<Donor<'_>>,
    pipeline: &AugPipeline,
    outer: &AffineMap,
    rng: &mut RandomStream,
) -> Result<AugmentedView> {
    let mut view = apply_pipeline_ops(easy_img, easy_joints, donor, pipeline, rng)?;
    view.image = warp_image(&view.image, outer, view.image.dims())?;
    view.relative_affine = *outer;
    Ok(view)
}

fn apply_pipeline_ops(
    easy_img: &Image,
    easy_joints: &KeypointSet,
    donor: Option<Donor<'_>>,
    pipeline: &AugPipeline,
    rng: &mut RandomStream,
) -> Result<AugmentedView> {
    let mut image = easy_img.clone();
    let mut patch_log = Vec::new();
    let mut mix_partner = None;
    let mut fallbacks = 0;
    for op in pipeline.non_affine() {
        let needs_donor = || {
            donor.ok_or_else(|| {
                Error::InvalidInput(format!("{} requires a donor image", op.kind))
            })
        };
        let log = match op.kind {
            AugKind::Cutout => {
                let (img, log) = apply_cutout(&image, rng, op.n_patches, op.patch_size);
                image = img;
                log
            }
            AugKind::CutMix => {
                let d = needs_donor()?;
                let (img, log) = apply_cutmix(&image, d.image, rng, op.n_patches, op.patch_size)?;
                image = img;
                log
            }
            AugKind::JointCutout => {
                let (img, log) =
                    apply_joint_cutout(&image, easy_joints, rng, op.n_patches, op.patch_size);
                image = img;
                log
            }
            AugKind::JointCutOcclude => {
                let d = needs_donor()?;
                let (img, log) = apply_joint_cutocclude(
                    &image,
                    easy_joints,
                    d.image,
                    d.joints,
                    rng,
                    op.n_patches,
                    op.patch_size,
                )?;
                image = img;
                log
            }
            AugKind::MixUp => {
                let d = needs_donor()?;
                let (lo, hi) = op.mix_lambda_range;
                let lambda = rng.uniform(lo, hi);
                image = apply_mixup(&image, d.image, lambda)?;
                mix_partner = Some((d.id, lambda));
                continue;
            }
            AugKind::A30 | AugKind::A60 | AugKind::A90 => unreachable!("filtered above"),
        };
        fallbacks += usize::from(log.fallback);
        patch_log.extend(log.entries);
    }
    Ok(AugmentedView {
        image,
        relative_affine: AffineMap::identity(),
        patch_log,
        mix_partner,
        fallbacks,
    })
}
