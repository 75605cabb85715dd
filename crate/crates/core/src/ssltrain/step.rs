use crate::error::{Error, Result};
use crate::geometry::{Heatmap, Image};
use crate::model::{adam_step, OptimizerState, ParamSet, PoseEstimator};
use crate::rng::RandomStream;
use crate::ssltrain::batch::{
    build_consistency_batch, build_paths, easy_views, ConsistencyBatch, SupervisedBatch, ViewOptions,
};
use crate::ssltrain::loss::{multipath_unsup_loss, supervised_loss, PathSignals, UnsupMode};

/// Loss values of one step for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub supervised: f64,
    /// Per-path unsupervised losses; empty when the unsupervised term was skipped.
    pub per_path: Vec<f64>,
    pub unsup: f64,
    pub lambda: f64,
    /// `supervised + lambda * unsup`.
    pub total: f64,
}

fn all_images<'a>(sup: &'a SupervisedBatch, cons: Option<&'a ConsistencyBatch>) -> Vec<&'a Image> {
    let mut images: Vec<&Image> = sup.images.iter().collect();
    if let Some(c) = cons {
        for p in &c.paths {
            images.extend(p.views.iter().map(|v| &v.image));
        }
    }
    images
}

/// Splits concatenated predictions back into `(supervised, per-path)` parts and evaluates
/// `L_s + lambda * L_u`, returning the output gradients in the same concatenated order.
fn losses_from_preds(
    preds: &[Heatmap],
    sup: &SupervisedBatch,
    cons: Option<&ConsistencyBatch>,
    lambda: f64,
    mode: UnsupMode,
) -> Result<(StepLosses, Vec<Heatmap>)> {
    let ns = sup.images.len();
    let s = supervised_loss(&preds[..ns], &sup.targets)?;
    let mut grads = s.grads;
    let Some(c) = cons else {
        return Ok((
            StepLosses {
                supervised: s.loss,
                per_path: vec![],
                unsup: 0.0,
                lambda,
                total: s.loss,
            },
            grads,
        ));
    };
    let mut offset = ns;
    let signals: Vec<PathSignals<'_>> = c
        .paths
        .iter()
        .map(|p| {
            let students = &preds[offset..offset + p.views.len()];
            offset += p.views.len();
            PathSignals {
                teachers: &p.teachers,
                students,
            }
        })
        .collect();
    let u = multipath_unsup_loss(&signals, mode)?;
    for path in u.grads {
        grads.extend(path.into_iter().map(|mut g| {
            g.values_mut().iter_mut().for_each(|v| *v *= lambda);
            g
        }));
    }
    Ok((
        StepLosses {
            supervised: s.loss,
            per_path: u.per_path,
            unsup: u.total,
            lambda,
            total: s.loss + lambda * u.total,
        },
        grads,
    ))
}

/// Losses and parameter gradients of `L_s + lambda * L_u` with every teacher held fixed.
/// With `lambda == 0` or no consistency batch only the supervised term is evaluated, so
/// the result is bit-identical to a purely supervised step.
pub fn step_gradients<N: PoseEstimator>(
    net: &N,
    sup: &SupervisedBatch,
    cons: Option<&ConsistencyBatch>,
    lambda: f64,
    mode: UnsupMode,
) -> Result<(StepLosses, ParamSet)> {
    let cons = cons.filter(|_| lambda != 0.0);
    let images = all_images(sup, cons);
    let (preds, _, cache) = net.forward(&images)?;
    let (losses, grads) = losses_from_preds(&preds, sup, cons, lambda, mode)?;
    let g = net.backward(&cache, &grads)?;
    Ok((losses, g))
}

/// Forward-only counterpart of [`step_gradients`] (for finite-difference checks).
pub fn step_loss<N: PoseEstimator>(
    net: &N,
    sup: &SupervisedBatch,
    cons: Option<&ConsistencyBatch>,
    lambda: f64,
    mode: UnsupMode,
) -> Result<StepLosses> {
    let cons = cons.filter(|_| lambda != 0.0);
    let images = all_images(sup, cons);
    let (preds, _) = net.predict(&images)?;
    Ok(losses_from_preds(&preds, sup, cons, lambda, mode)?.0)
}

/// Everything a step needs besides the networks and the data.
#[derive(Debug, Clone)]
pub struct StepConfig {
    pub views: ViewOptions,
    pub lambda: f64,
    pub mode: UnsupMode,
    /// Epoch index, used for the learning-rate schedule.
    pub epoch: usize,
}

fn check_counts(sup: &SupervisedBatch, unlabeled: &[&Image], lambda: f64) -> Result<()> {
    if lambda != 0.0 && unlabeled.len() != sup.images.len() {
        return Err(Error::Contract(format!(
            "a step needs equal labeled and unlabeled counts, got {} and {}",
            sup.images.len(),
            unlabeled.len()
        )));
    }
    Ok(())
}

/// One Single-Network step: the network is its own (gradient-free) teacher.
pub fn train_step_single<N: PoseEstimator>(
    net: &mut N,
    opt: &mut OptimizerState,
    sup: &SupervisedBatch,
    unlabeled: &[&Image],
    cfg: &StepConfig,
    rng: &RandomStream,
) -> Result<(StepLosses, Option<ConsistencyBatch>)> {
    check_counts(sup, unlabeled, cfg.lambda)?;
    let cons = if cfg.lambda != 0.0 {
        Some(build_consistency_batch(unlabeled, &*net, &cfg.views, rng)?)
    } else {
        None
    };
    let (losses, g) = step_gradients(&*net, sup, cons.as_ref(), cfg.lambda, cfg.mode)?;
    adam_step(opt, net.params_mut(), &g, cfg.epoch)?;
    Ok((losses, cons))
}

/// Consistency batches for a Dual-Network step: both networks predict the shared easy
/// views; A's students are paired with B's teacher and vice versa. Both batches use the
/// same random stream, so swapping the networks swaps the batches.
pub fn dual_consistency_batches<N: PoseEstimator>(
    net_a: &N,
    net_b: &N,
    unlabeled: &[&Image],
    views: &ViewOptions,
    rng: &RandomStream,
) -> Result<(ConsistencyBatch, ConsistencyBatch)> {
    let easy = easy_views(unlabeled, &rng.split_named("easy"))?;
    let refs: Vec<&Image> = easy.images.iter().collect();
    let (pred_a, _) = net_a.predict(&refs)?;
    let (pred_b, _) = net_b.predict(&refs)?;
    let hard = rng.split_named("hard");
    let (joints_b, paths_for_a) = build_paths(&easy, &pred_b, views, &hard)?;
    let (joints_a, paths_for_b) = build_paths(&easy, &pred_a, views, &hard)?;
    Ok((
        ConsistencyBatch {
            easy: easy.clone(),
            easy_joints: joints_b,
            paths: paths_for_a,
            teacher_forwards: 1,
        },
        ConsistencyBatch {
            easy,
            easy_joints: joints_a,
            paths: paths_for_b,
            teacher_forwards: 1,
        },
    ))
}

/// One Dual-Network step; both networks are updated.
#[allow(clippy::too_many_arguments)]
pub fn train_step_dual<N: PoseEstimator>(
    net_a: &mut N,
    opt_a: &mut OptimizerState,
    net_b: &mut N,
    opt_b: &mut OptimizerState,
    sup: &SupervisedBatch,
    unlabeled: &[&Image],
    cfg: &StepConfig,
    rng: &RandomStream,
) -> Result<(StepLosses, StepLosses)> {
    check_counts(sup, unlabeled, cfg.lambda)?;
    let (cons_a, cons_b) = if cfg.lambda != 0.0 {
        let (a, b) = dual_consistency_batches(&*net_a, &*net_b, unlabeled, &cfg.views, rng)?;
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    let (la, ga) = step_gradients(&*net_a, sup, cons_a.as_ref(), cfg.lambda, cfg.mode)?;
    let (lb, gb) = step_gradients(&*net_b, sup, cons_b.as_ref(), cfg.lambda, cfg.mode)?;
    adam_step(opt_a, net_a.params_mut(), &ga, cfg.epoch)?;
    adam_step(opt_b, net_b.params_mut(), &gb, cfg.epoch)?;
    Ok((la, lb))
}
