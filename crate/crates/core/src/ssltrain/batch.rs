use rayon::prelude::*;

use crate::augment::{
    build_hard_view, build_hard_view_fixed, sample_affine, sample_affine_range, AugKind, AugPipeline, AugmentedView, Donor,
};
use crate::error::{Error, Result};
use crate::geometry::{
    decode_heatmaps, raster_center, render_heatmaps, warp_heatmap, warp_image, warp_points, AffineMap,
    Heatmap, Image, KeypointSet,
};
use crate::model::PoseEstimator;
use crate::rng::RandomStream;
use crate::ssltrain::loss::Teacher;

/// Easy-augmented labeled images with their target heatmaps.
#[derive(Debug, Clone)]
pub struct SupervisedBatch {
    pub images: Vec<Image>,
    pub targets: Vec<Heatmap>,
}

/// Applies the easy affine to each labeled sample and renders its targets.
pub fn prepare_supervised(
    samples: &[(&Image, &KeypointSet)],
    stride: usize,
    sigma: f64,
    rng: &RandomStream,
) -> Result<SupervisedBatch> {
    let parts = samples
        .par_iter()
        .enumerate()
        .map(|(j, (img, kps))| {
            let mut r = rng.split(j as u64);
            let a = sample_affine(AugKind::A30, &mut r, raster_center(img.dims()))?;
            let image = warp_image(img, &a, img.dims())?;
            let target = render_heatmaps(&warp_points(kps, &a, img.dims()), img.dims(), stride, sigma)?;
            Ok((image, target))
        })
        .collect::<Result<Vec<_>>>()?;
    let (images, targets) = parts.into_iter().unzip();
    Ok(SupervisedBatch { images, targets })
}

/// Unlabeled images under their inner (easy) affine.
#[derive(Debug, Clone)]
pub struct EasyViews {
    pub images: Vec<Image>,
    pub inner_affines: Vec<AffineMap>,
}

pub fn easy_views(unlabeled: &[&Image], rng: &RandomStream) -> Result<EasyViews> {
    let parts = unlabeled
        .par_iter()
        .enumerate()
        .map(|(j, img)| {
            let mut r = rng.split(j as u64);
            let a = sample_affine(AugKind::A30, &mut r, raster_center(img.dims()))?;
            Ok((warp_image(img, &a, img.dims())?, a))
        })
        .collect::<Result<Vec<_>>>()?;
    let (images, inner_affines) = parts.into_iter().unzip();
    Ok(EasyViews { images, inner_affines })
}

/// One augmentation path: a hard view per sample and the teacher warped into its frame.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub pipeline: AugPipeline,
    pub views: Vec<AugmentedView>,
    pub teachers: Vec<Teacher>,
}

impl PathBatch {
    pub fn images(&self) -> Vec<&Image> {
        self.views.iter().map(|v| &v.image).collect()
    }

    pub fn fallbacks(&self) -> usize {
        self.views.iter().map(|v| v.fallbacks).sum()
    }
}

/// How hard views are derived from the easy views.
#[derive(Debug, Clone)]
pub struct ViewOptions {
    pub paths: Vec<AugPipeline>,
    pub fisheye: bool,
    /// Predicted joints below this confidence are not used to place joint-centred patches.
    pub joint_threshold: f64,
    /// One outer affine per sample shared by every path (needed for heatmap fusion).
    pub shared_outer: bool,
}

/// Builds every path's hard views from `easy` using joints decoded from `teacher_preds`
/// (gradient-free predictions on the easy views) and warps those predictions into each
/// hard view's frame. Streams depend only on `(rng, sample, path)`.
pub fn build_paths(
    easy: &EasyViews,
    teacher_preds: &[Heatmap],
    opts: &ViewOptions,
    rng: &RandomStream,
) -> Result<(Vec<KeypointSet>, Vec<PathBatch>)> {
    let b = easy.images.len();
    if teacher_preds.len() != b {
        return Err(Error::Shape(format!(
            "{} teacher predictions for {b} easy views",
            teacher_preds.len()
        )));
    }
    if opts.paths.is_empty() {
        return Err(Error::InvalidInput("at least one augmentation path is required".into()));
    }
    let joints: Vec<KeypointSet> = teacher_preds
        .iter()
        .map(|h| decode_heatmaps(h).with_min_confidence(opts.joint_threshold))
        .collect();
    let shared: Option<Vec<AffineMap>> = if opts.shared_outer {
        let range = opts.paths[0].outer_rotation_range(opts.fisheye);
        Some(
            (0..b)
                .map(|j| {
                    let mut r = rng.split_named("shared_outer").split(j as u64);
                    let img = &easy.images[j];
                    if range > 0.0 {
                        sample_affine_range(range, &mut r, raster_center(img.dims()))
                    } else {
                        Ok(AffineMap::identity())
                    }
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let paths = opts
        .paths
        .iter()
        .enumerate()
        .map(|(i, pipeline)| {
            let range = pipeline.outer_rotation_range(opts.fisheye);
            let built = (0..b)
                .into_par_iter()
                .map(|j| {
                    let mut r = rng.split((j as u64) << 8 | i as u64);
                    let d = if b > 1 { (j + 1 + r.below(b - 1)) % b } else { j };
                    let donor = Donor {
                        id: d,
                        image: &easy.images[d],
                        joints: &joints[d],
                    };
                    let view = match &shared {
                        Some(a) => build_hard_view_fixed(&easy.images[j], &joints[j], Some(donor), pipeline, &a[j], &mut r)?,
                        None => build_hard_view(&easy.images[j], &joints[j], Some(donor), pipeline, range, &mut r)?,
                    };
                    let teacher = Teacher::detach(warp_heatmap(&teacher_preds[j], &view.relative_affine)?);
                    Ok((view, teacher))
                })
                .collect::<Result<Vec<_>>>()?;
            let (views, teachers) = built.into_iter().unzip();
            Ok(PathBatch {
                pipeline: pipeline.clone(),
                views,
                teachers,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((joints, paths))
}

/// Everything the unsupervised loss of one step needs, with teachers already detached.
#[derive(Debug, Clone)]
pub struct ConsistencyBatch {
    pub easy: EasyViews,
    /// Confident teacher joints per sample, used for joint-centred patches.
    pub easy_joints: Vec<KeypointSet>,
    pub paths: Vec<PathBatch>,
    /// Number of gradient-free teacher forward passes spent on this batch.
    pub teacher_forwards: usize,
}

impl ConsistencyBatch {
    pub fn fallbacks(&self) -> usize {
        self.paths.iter().map(PathBatch::fallbacks).sum()
    }
}

/// Two-phase construction: (1) inner easy affine and one gradient-free teacher forward,
/// (2) per path, hard views plus the teacher warped by that view's outer affine.
pub fn build_consistency_batch<N: PoseEstimator>(
    unlabeled: &[&Image],
    teacher: &N,
    opts: &ViewOptions,
    rng: &RandomStream,
) -> Result<ConsistencyBatch> {
    let easy = easy_views(unlabeled, &rng.split_named("easy"))?;
    let refs: Vec<&Image> = easy.images.iter().collect();
    let (preds, _) = teacher.predict(&refs)?;
    let (easy_joints, paths) = build_paths(&easy, &preds, opts, &rng.split_named("hard"))?;
    Ok(ConsistencyBatch {
        easy,
        easy_joints,
        paths,
        teacher_forwards: 1,
    })
}
