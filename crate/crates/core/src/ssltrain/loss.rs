use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Heatmap;

/// A heatmap used as a regression target for another prediction. Gradients never flow
/// into it: losses only ever differentiate with respect to the student side, and the only
/// way to obtain a `Teacher` is to detach an already computed heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher(Heatmap);

impl Teacher {
    pub fn detach(heatmap: Heatmap) -> Self {
        Self(heatmap)
    }

    pub fn heatmap(&self) -> &Heatmap {
        &self.0
    }

    /// Largest value of channel `c`.
    pub fn channel_max(&self, c: usize) -> f64 {
        self.0.channel(c).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A scalar loss and its gradient with respect to each predicted heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Heatmap>,
}

fn check_pairs<'a>(
    preds: &'a [Heatmap],
    targets: impl ExactSizeIterator<Item = &'a Heatmap>,
) -> Result<Vec<&'a Heatmap>> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("loss over an empty batch".into()));
    }
    if targets.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let targets: Vec<&Heatmap> = targets.collect();
    if let Some((p, t)) = preds.iter().zip(&targets).find(|(p, t)| !p.same_shape(t)) {
        return Err(Error::Shape(format!(
            "prediction {:?} and target {:?} differ in shape",
            p.shape(),
            t.shape()
        )));
    }
    Ok(targets)
}

fn mse<'a>(preds: &'a [Heatmap], targets: impl ExactSizeIterator<Item = &'a Heatmap>) -> Result<LossGrad> {
    let targets = check_pairs(preds, targets)?;
    let count: usize = preds.iter().map(|p| p.values().len()).sum();
    let scale = 2.0 / count as f64;
    let mut loss = 0.0;
    let grads = preds
        .iter()
        .zip(&targets)
        .map(|(p, t)| {
            let mut g = p.clone();
            for (gv, tv) in g.values_mut().iter_mut().zip(t.values()) {
                let d = *gv - tv;
                loss += d * d;
                *gv = scale * d;
            }
            g
        })
        .collect();
    Ok(LossGrad {
        loss: loss / count as f64,
        grads,
    })
}

/// Mean squared error over every element of the batch; gradient `2(pred - target)/count`.
pub fn supervised_loss(preds: &[Heatmap], targets: &[Heatmap]) -> Result<LossGrad> {
    mse(preds, targets.iter())
}

/// Mean squared error between students and fixed teachers, differentiated for the students only.
pub fn consistency_loss(teachers: &[Teacher], students: &[Heatmap]) -> Result<LossGrad> {
    mse(students, teachers.iter().map(Teacher::heatmap))
}

/// How the per-path consistency terms are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnsupMode {
    /// Sum of the per-path losses.
    MultiLoss,
    /// Per-path loss over the (sample, channel) pairs whose teacher peak exceeds `tau`,
    /// averaged over the surviving pairs; summed over paths.
    ConfidenceMask { tau: f64 },
    /// One loss between the mean student and the mean teacher heatmap.
    HeatmapFusion,
}

pub const DEFAULT_TAU: f64 = 0.5;

impl UnsupMode {
    pub fn confidence_mask(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParameter(format!("tau must lie in (0, 1), got {tau}")));
        }
        Ok(Self::ConfidenceMask { tau })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            UnsupMode::MultiLoss => "ml",
            UnsupMode::ConfidenceMask { .. } => "cm",
            UnsupMode::HeatmapFusion => "hf",
        }
    }
}

impl FromStr for UnsupMode {
    type Err = Error;

    /// `ml`/`multi-loss`, `cm`/`confidence-mask` (τ = 0.5) or `hf`/`heatmap-fusion`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ml" | "multi-loss" => Ok(Self::MultiLoss),
            "cm" | "confidence-mask" => Self::confidence_mask(DEFAULT_TAU),
            "hf" | "heatmap-fusion" => Ok(Self::HeatmapFusion),
            _ => Err(Error::InvalidParameter(format!(
                "unknown unsupervised mode {s:?}; expected ml, cm or hf"
            ))),
        }
    }
}

/// Teacher targets and student predictions of one augmentation path, per batch sample.
#[derive(Debug, Clone, Copy)]
pub struct PathSignals<'a> {
    pub teachers: &'a [Teacher],
    pub students: &'a [Heatmap],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiPathLoss {
    pub total: f64,
    /// Sums to `total`; in fusion mode each path reports `total / n`.
    pub per_path: Vec<f64>,
    /// Gradient for every student heatmap, indexed `[path][sample]`.
    pub grads: Vec<Vec<Heatmap>>,
}

pub fn multipath_unsup_loss(paths: &[PathSignals<'_>], mode: UnsupMode) -> Result<MultiPathLoss> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("multi-path loss needs at least one path".into()));
    }
    match mode {
        UnsupMode::MultiLoss => {
            let parts = paths
                .iter()
                .map(|p| consistency_loss(p.teachers, p.students))
                .collect::<Result<Vec<_>>>()?;
            Ok(MultiPathLoss {
                total: parts.iter().map(|p| p.loss).sum(),
                per_path: parts.iter().map(|p| p.loss).collect(),
                grads: parts.into_iter().map(|p| p.grads).collect(),
            })
        }
        UnsupMode::ConfidenceMask { tau } => {
            let parts = paths
                .iter()
                .map(|p| masked_loss(p, tau))
                .collect::<Result<Vec<_>>>()?;
            Ok(MultiPathLoss {
                total: parts.iter().map(|p| p.loss).sum(),
                per_path: parts.iter().map(|p| p.loss).collect(),
                grads: parts.into_iter().map(|p| p.grads).collect(),
            })
        }
        UnsupMode::HeatmapFusion => fused_loss(paths),
    }
}

fn masked_loss(p: &PathSignals<'_>, tau: f64) -> Result<LossGrad> {
    check_pairs(p.students, p.teachers.iter().map(Teacher::heatmap))?;
    let mut included = 0usize;
    let mut sse = 0.0;
    let mut grads: Vec<Heatmap> = Vec::with_capacity(p.students.len());
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(p.students.len());
    for (s, t) in p.students.iter().zip(p.teachers) {
        let mask: Vec<bool> = (0..s.channels()).map(|c| t.channel_max(c) > tau).collect();
        included += mask.iter().filter(|m| **m).count();
        let mut g = s.clone();
        let n = s.height() * s.width();
        for (c, &keep) in mask.iter().enumerate() {
            let gs = &mut g.values_mut()[c * n..(c + 1) * n];
            if !keep {
                gs.fill(0.0);
                continue;
            }
            for (gv, tv) in gs.iter_mut().zip(t.heatmap().channel(c)) {
                let d = *gv - tv;
                sse += d * d;
                *gv = d;
            }
        }
        grads.push(g);
        masks.push(mask);
    }
    if included == 0 {
        for g in &mut grads {
            g.values_mut().fill(0.0);
        }
        return Ok(LossGrad { loss: 0.0, grads });
    }
    let plane = p.students[0].height() * p.students[0].width();
    let denom = (included * plane) as f64;
    for g in &mut grads {
        for v in g.values_mut() {
            *v *= 2.0 / denom;
        }
    }
    Ok(LossGrad {
        loss: sse / denom,
        grads,
    })
}

fn average<'a>(mut maps: impl Iterator<Item = &'a Heatmap>) -> Heatmap {
    let mut acc = maps.next().expect("at least one map").clone();
    let mut n = 1.0;
    for m in maps {
        for (a, v) in acc.values_mut().iter_mut().zip(m.values()) {
            *a += v;
        }
        n += 1.0;
    }
    acc.values_mut().iter_mut().for_each(|a| *a /= n);
    acc
}

fn fused_loss(paths: &[PathSignals<'_>]) -> Result<MultiPathLoss> {
    let n = paths.len();
    let batch = paths[0].students.len();
    for p in paths {
        check_pairs(p.students, p.teachers.iter().map(Teacher::heatmap))?;
        if p.students.len() != batch || !p.students[0].same_shape(&paths[0].students[0]) {
            return Err(Error::Shape("fused paths differ in batch size or shape".into()));
        }
    }
    let fused_students: Vec<Heatmap> = (0..batch)
        .map(|b| average(paths.iter().map(|p| &p.students[b])))
        .collect();
    let fused_teachers: Vec<Heatmap> = (0..batch)
        .map(|b| average(paths.iter().map(|p| p.teachers[b].heatmap())))
        .collect();
    let lg = supervised_loss(&fused_students, &fused_teachers)?;
    let share: Vec<Heatmap> = lg
        .grads
        .into_iter()
        .map(|mut g| {
            for v in g.values_mut() {
                *v /= n as f64;
            }
            g
        })
        .collect();
    Ok(MultiPathLoss {
        total: lg.loss,
        per_path: vec![lg.loss / n as f64; n],
        grads: vec![share; n],
    })
}
