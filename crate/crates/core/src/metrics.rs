//! Keypoint evaluation: OKS, COCO-style average precision, PCK / PCKh.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::KeypointSet;

/// COCO's per-keypoint standard deviations (nose, eyes, ears, shoulders, elbows,
/// wrists, hips, knees, ankles). The falloff constant used in OKS is twice these.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// OKS thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Per-keypoint falloff constants κ_j.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OksConfig {
    pub kappas: Vec<f64>,
}

impl OksConfig {
    pub fn new(kappas: Vec<f64>) -> Result<Self> {
        if kappas.is_empty() || kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidParameter(
                "OKS falloff constants must be positive and finite".into(),
            ));
        }
        Ok(Self { kappas })
    }

    pub fn coco17() -> Self {
        Self {
            kappas: COCO_SIGMAS.iter().map(|s| 2.0 * s).collect(),
        }
    }

    pub fn uniform(joints: usize, kappa: f64) -> Result<Self> {
        Self::new(vec![kappa; joints])
    }

    /// COCO constants for 17 joints, otherwise uniform κ = 0.1.
    pub fn default_for(joints: usize) -> Self {
        if joints == COCO_SIGMAS.len() {
            Self::coco17()
        } else {
            Self {
                kappas: vec![0.1; joints],
            }
        }
    }
}

/// One predicted instance against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub prediction: KeypointSet,
    pub ground_truth: KeypointSet,
    /// Instance area in px².
    pub area: f64,
    /// Head segment length in px, for PCKh.
    pub head_size: Option<f64>,
    /// Instance score used to rank detections for AP.
    pub score: f64,
}

/// Object keypoint similarity: mean over labeled ground-truth joints of
/// `exp(-d² / (2·area·κ²))`. Unpredicted joints contribute zero.
pub fn oks(pair: &EvalPair, cfg: &OksConfig) -> Result<f64> {
    oks_raw(&pair.prediction, &pair.ground_truth, pair.area, cfg)
}

fn oks_raw(pred: &KeypointSet, gt: &KeypointSet, area: f64, cfg: &OksConfig) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != cfg.kappas.len() {
        return Err(Error::Shape(format!(
            "OKS needs matching joint counts (prediction {}, ground truth {}, constants {})",
            pred.len(),
            gt.len(),
            cfg.kappas.len()
        )));
    }
    if !(area > 0.0) {
        return Err(Error::InvalidParameter(format!("instance area must be positive, got {area}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, g), k) in pred.joints.iter().zip(&gt.joints).zip(&cfg.kappas) {
        if !g.is_labeled() {
            continue;
        }
        n += 1;
        if p.is_visible() {
            let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
            sum += (-d2 / (2.0 * area * k * k)).exp();
        }
    }
    if n == 0 {
        return Err(Error::UndefinedInstance(
            "ground truth has no labeled joints".into(),
        ));
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PckNormalizer {
    /// The pair's head size (PCKh).
    Head,
    /// Diagonal of the labeled ground-truth joints' bounding box.
    BboxDiagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PckResult {
    /// `None` for joints without a ground-truth label.
    pub hits: Vec<Option<bool>>,
    pub rate: f64,
}

impl PckResult {
    pub fn labeled(&self) -> usize {
        self.hits.iter().flatten().count()
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().flatten().filter(|h| **h).count()
    }
}

/// Joint `j` is a hit iff its error is at most `alpha · normalizer` (boundary inclusive).
pub fn pck(pair: &EvalPair, alpha: f64, normalizer: PckNormalizer) -> Result<PckResult> {
    let gt = &pair.ground_truth;
    if pair.prediction.len() != gt.len() {
        return Err(Error::Shape("prediction and ground truth differ in joint count".into()));
    }
    let norm = match normalizer {
        PckNormalizer::Head => pair
            .head_size
            .ok_or_else(|| Error::InvalidInput("PCKh needs a head size".into()))?,
        PckNormalizer::BboxDiagonal => {
            let (x0, y0, x1, y1) = gt
                .labeled_bounds()
                .ok_or_else(|| Error::UndefinedInstance("ground truth has no labeled joints".into()))?;
            (x1 - x0).hypot(y1 - y0)
        }
    };
    if !(norm > 0.0) {
        return Err(Error::InvalidInput(format!("PCK normalizer must be positive, got {norm}")));
    }
    let radius = alpha * norm;
    let hits: Vec<Option<bool>> = pair
        .prediction
        .joints
        .iter()
        .zip(&gt.joints)
        .map(|(p, g)| {
            g.is_labeled()
                .then(|| p.is_visible() && (p.x - g.x).hypot(p.y - g.y) <= radius)
        })
        .collect();
    let labeled = hits.iter().flatten().count();
    if labeled == 0 {
        return Err(Error::UndefinedInstance("ground truth has no labeled joints".into()));
    }
    let rate = hits.iter().flatten().filter(|h| **h).count() as f64 / labeled as f64;
    Ok(PckResult { hits, rate })
}

/// Pooled PCK rate over many pairs: total hits / total labeled joints.
pub fn pck_rate(pairs: &[EvalPair], alpha: f64, normalizer: PckNormalizer) -> Result<f64> {
    let (mut hits, mut labeled) = (0usize, 0usize);
    for p in pairs {
        let r = pck(p, alpha, normalizer)?;
        hits += r.hit_count();
        labeled += r.labeled();
    }
    if labeled == 0 {
        return Err(Error::UndefinedInstance("no labeled joints in evaluation set".into()));
    }
    Ok(hits as f64 / labeled as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub keypoints: KeypointSet,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub keypoints: KeypointSet,
    pub score: f64,
}

/// Everything detected and annotated in one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageEval {
    pub ground_truths: Vec<GroundTruth>,
    pub detections: Vec<Detection>,
}

impl ImageEval {
    /// Top-down setting: one ground truth and its single prediction.
    pub fn from_pair(pair: &EvalPair) -> Self {
        Self {
            ground_truths: vec![GroundTruth {
                keypoints: pair.ground_truth.clone(),
                area: pair.area,
            }],
            detections: vec![Detection {
                keypoints: pair.prediction.clone(),
                score: pair.score,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub thresholds: Vec<f64>,
    pub per_threshold: Vec<f64>,
    pub map: f64,
}

/// COCO-style AP. Within each image, detections are taken in descending score order and
/// each is matched to the still-unmatched ground truth of highest OKS, provided that OKS
/// reaches the threshold. AP is the 101-point interpolated area under the pooled
/// precision/recall curve; ground truths without labeled joints are ignored.
pub fn average_precision(images: &[ImageEval], thresholds: &[f64], cfg: &OksConfig) -> Result<ApResult> {
    // (score, global order, per-threshold tp flags)
    let mut scored: Vec<(f64, usize, Vec<bool>)> = Vec::new();
    let mut n_gt = 0usize;
    for img in images {
        let gts: Vec<&GroundTruth> = img
            .ground_truths
            .iter()
            .filter(|g| g.keypoints.joints.iter().any(|j| j.is_labeled()))
            .collect();
        n_gt += gts.len();
        let mut order: Vec<usize> = (0..img.detections.len()).collect();
        order.sort_by(|&a, &b| img.detections[b].score.total_cmp(&img.detections[a].score));
        let sims: Vec<Vec<f64>> = order
            .iter()
            .map(|&d| {
                gts.iter()
                    .map(|g| oks_raw(&img.detections[d].keypoints, &g.keypoints, g.area, cfg))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut flags = vec![vec![false; thresholds.len()]; order.len()];
        for (ti, &thr) in thresholds.iter().enumerate() {
            let mut taken = vec![false; gts.len()];
            for (di, row) in sims.iter().enumerate() {
                let mut best: Option<usize> = None;
                for (gi, &s) in row.iter().enumerate() {
                    if !taken[gi] && s >= thr && best.map_or(true, |b| s > row[b]) {
                        best = Some(gi);
                    }
                }
                if let Some(gi) = best {
                    taken[gi] = true;
                    flags[di][ti] = true;
                }
            }
        }
        for (di, f) in order.iter().zip(flags) {
            scored.push((img.detections[*di].score, scored.len(), f));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            let tp_flags: Vec<bool> = scored.iter().map(|s| s.2[ti]).collect();
            interpolated_ap(&tp_flags, n_gt)
        })
        .collect();
    let map = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().sum::<f64>() / per_threshold.len() as f64
    };
    Ok(ApResult {
        thresholds: thresholds.to_vec(),
        per_threshold,
        map,
    })
}

/// 101-point interpolated AP of a ranked list of true/false positives.
fn interpolated_ap(tp_flags: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 || tp_flags.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &t) in tp_flags.iter().enumerate() {
        tp += usize::from(t);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < target - 1e-12);
        if idx < precision.len() {
            total += precision[idx];
        }
    }
    total / 101.0
}

/// One line of a metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub threshold: Option<f64>,
    pub value: f64,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, threshold: Option<f64>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            threshold,
            value,
        }
    }
}

/// Rows for an AP result: one per threshold plus the mean (`mAP`, empty threshold).
pub fn ap_rows(prefix: &str, ap: &ApResult) -> Vec<MetricRow> {
    let mut rows: Vec<MetricRow> = ap
        .thresholds
        .iter()
        .zip(&ap.per_threshold)
        .map(|(&t, &v)| MetricRow::new(format!("{prefix}AP"), Some(t), v))
        .collect();
    rows.push(MetricRow::new(format!("{prefix}mAP"), None, ap.map));
    rows
}

pub fn write_metrics_csv(rows: &[MetricRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "metric,threshold,value")?;
    for r in rows {
        let t = r.threshold.map(|t| format!("{t:.2}")).unwrap_or_default();
        writeln!(w, "{},{t},{}", r.metric, r.value)?;
    }
    Ok(())
}

pub fn save_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_metrics_csv(rows, &mut buf).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Joint;

    fn kps(points: &[(f64, f64)]) -> KeypointSet {
        KeypointSet::new(points.iter().map(|&(x, y)| Joint::visible(x, y)).collect())
    }

    fn pair(pred: &[(f64, f64)], gt: &[(f64, f64)], area: f64) -> EvalPair {
        EvalPair {
            prediction: kps(pred),
            ground_truth: kps(gt),
            area,
            head_size: Some(10.0),
            score: 1.0,
        }
    }

    #[test]
    fn oks_closed_form_single_joint() {
        let cfg = OksConfig::uniform(1, 0.1).unwrap();
        for d in [0.0, 0.5, 1.0, 2.3] {
            let p = pair(&[(5.0 + d, 5.0)], &[(5.0, 5.0)], 100.0);
            assert!((oks(&p, &cfg).unwrap() - (-d * d / 2.0f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn oks_ignores_unlabeled_and_errors_without_labels() {
        let cfg = OksConfig::uniform(2, 0.1).unwrap();
        let mut p = pair(&[(0.0, 0.0), (100.0, 0.0)], &[(0.0, 0.0), (0.0, 0.0)], 50.0);
        p.ground_truth.joints[1] = Joint::invisible();
        assert_eq!(oks(&p, &cfg).unwrap(), 1.0);
        p.ground_truth.joints[0] = Joint::invisible();
        assert!(matches!(oks(&p, &cfg), Err(Error::UndefinedInstance(_))));
    }

    #[test]
    fn coco_kappas_are_twice_the_sigmas() {
        let c = OksConfig::coco17();
        assert_eq!(c.kappas.len(), 17);
        assert!((c.kappas[0] - 0.052).abs() < 1e-15);
        assert_eq!(OksConfig::default_for(13).kappas, vec![0.1; 13]);
    }

    #[test]
    fn pck_boundary_is_inclusive() {
        // 3-4-5 triangle keeps the distance exact in floating point
        let p = pair(&[(3.0, 4.0), (0.0, 5.0)], &[(0.0, 0.0), (0.0, 0.0)], 1.0);
        let r = pck(&p, 0.5, PckNormalizer::Head).unwrap();
        assert_eq!(r.hits, vec![Some(true), Some(true)]);
        let r = pck(&p, 0.49, PckNormalizer::Head).unwrap();
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn pck_missing_normalizer() {
        let mut p = pair(&[(0.0, 0.0)], &[(0.0, 0.0)], 1.0);
        p.head_size = None;
        assert!(pck(&p, 0.5, PckNormalizer::Head).is_err());
        // a single joint has a zero-length bbox diagonal
        assert!(pck(&p, 0.2, PckNormalizer::BboxDiagonal).is_err());
    }

    #[test]
    fn ap_perfect_and_empty() {
        let cfg = OksConfig::uniform(2, 0.1).unwrap();
        let imgs: Vec<ImageEval> = (0..5)
            .map(|i| {
                let g = [(i as f64, 1.0), (i as f64 + 3.0, 7.0)];
                ImageEval::from_pair(&pair(&g, &g, 40.0))
            })
            .collect();
        let r = average_precision(&imgs, &coco_thresholds(), &cfg).unwrap();
        assert_eq!(r.map, 1.0);
        let empty: Vec<ImageEval> = imgs
            .iter()
            .map(|i| ImageEval {
                detections: vec![],
                ..i.clone()
            })
            .collect();
        assert_eq!(average_precision(&empty, &coco_thresholds(), &cfg).unwrap().map, 0.0);
    }

    #[test]
    fn interpolation_of_known_curve() {
        // TP, FP, TP over 2 GT: recall .5 @ p 1, recall 1 @ p 2/3
        let ap = interpolated_ap(&[true, false, true], 2);
        let expect = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap - expect).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_metrics_csv(
            &[MetricRow::new("AP", Some(0.5), 0.25), MetricRow::new("mAP", None, 0.125)],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,threshold,value\nAP,0.50,0.25\nmAP,,0.125\n");
    }
}
