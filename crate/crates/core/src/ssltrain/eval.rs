use crate::analysis::FeatureMatrix;
use crate::error::{Error, Result};
use crate::geometry::{decode_heatmaps, Image, KeypointSet};
use crate::metrics::{
    ap_rows, average_precision, coco_thresholds, ApResult, pck_rate, EvalPair, ImageEval, MetricRow, OksConfig, PckNormalizer,
};
use crate::model::PoseEstimator;

/// A held-out instance: input image, ground-truth joints in image pixels, object area and
/// optional head size.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub image: Image,
    pub keypoints: KeypointSet,
    pub area: f64,
    pub head_size: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub oks: OksConfig,
    /// PCK threshold as a fraction of the bounding-box diagonal.
    pub pck_alpha: f64,
    /// PCKh threshold as a fraction of the head size.
    pub pckh_alpha: f64,
}

impl EvalConfig {
    pub fn for_joints(joints: usize) -> Self {
        Self {
            oks: OksConfig::default_for(joints),
            pck_alpha: 0.2,
            pckh_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMetrics {
    pub ap: ApResult,
    pub map: f64,
    pub pck: f64,
    /// `None` when no sample carries a head size.
    pub pckh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_model: Vec<ModelMetrics>,
    /// Arithmetic mean over models.
    pub mean: ModelMetrics,
}

/// Which metric family an evaluation reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// mAP over OKS thresholds, plus the AP at each threshold.
    Oks,
    Pck,
    Pckh,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oks" => Ok(Self::Oks),
            "pck" => Ok(Self::Pck),
            "pckh" => Ok(Self::Pckh),
            _ => Err(Error::InvalidParameter(format!("unknown metric {s:?}; expected oks, pck or pckh"))),
        }
    }
}

impl EvalReport {
    /// Rows for `kind`: one block per model (`A`, `B`, ...) followed by the `mean` block.
    /// PCKh rows are omitted for models without head sizes.
    pub fn rows(&self, kind: MetricKind, cfg: &EvalConfig) -> Vec<MetricRow> {
        let block = |tag: &str, m: &ModelMetrics| match kind {
            MetricKind::Oks => ap_rows(&format!("{tag}/"), &m.ap),
            MetricKind::Pck => vec![MetricRow::new(format!("{tag}/PCK"), Some(cfg.pck_alpha), m.pck)],
            MetricKind::Pckh => m
                .pckh
                .map(|h| MetricRow::new(format!("{tag}/PCKh"), Some(cfg.pckh_alpha), h))
                .into_iter()
                .collect(),
        };
        let mut rows = Vec::new();
        for (i, m) in self.per_model.iter().enumerate() {
            rows.extend(block(&model_tag(i), m));
        }
        rows.extend(block("mean", &self.mean));
        rows
    }
}

fn model_tag(i: usize) -> String {
    char::from(b'A' + (i % 26) as u8).to_string()
}

const CHUNK: usize = 64;

/// Decoded predictions for every sample (joints in image pixels, confidences attached).
pub fn predict_keypoints<N: PoseEstimator>(net: &N, images: &[&Image]) -> Result<Vec<KeypointSet>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let (hms, _) = net.predict(chunk)?;
        out.extend(hms.iter().map(decode_heatmaps));
    }
    Ok(out)
}

fn instance_score(k: &KeypointSet) -> f64 {
    let c: Vec<f64> = k.joints.iter().filter_map(|j| j.confidence()).collect();
    if c.is_empty() {
        0.0
    } else {
        c.iter().sum::<f64>() / c.len() as f64
    }
}

/// Metrics of predicted joints against `samples`.
pub fn score_predictions(preds: &[KeypointSet], samples: &[EvalSample], cfg: &EvalConfig) -> Result<ModelMetrics> {
    if preds.len() != samples.len() {
        return Err(Error::Shape(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let pairs: Vec<EvalPair> = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| EvalPair {
            prediction: p.clone(),
            ground_truth: s.keypoints.clone(),
            area: s.area,
            head_size: s.head_size,
            score: instance_score(p),
        })
        .collect();
    let images: Vec<ImageEval> = pairs.iter().map(ImageEval::from_pair).collect();
    let ap = average_precision(&images, &coco_thresholds(), &cfg.oks)?;
    let pck = pck_rate(&pairs, cfg.pck_alpha, PckNormalizer::BboxDiagonal)?;
    let with_head: Vec<EvalPair> = pairs.into_iter().filter(|p| p.head_size.is_some()).collect();
    let pckh = if with_head.is_empty() {
        None
    } else {
        Some(pck_rate(&with_head, cfg.pckh_alpha, PckNormalizer::Head)?)
    };
    Ok(ModelMetrics {
        map: ap.map,
        ap,
        pck,
        pckh,
    })
}

/// Per-model metrics plus their mean (the reported number in Dual-Network mode).
pub fn evaluate<N: PoseEstimator>(nets: &[&N], samples: &[EvalSample], cfg: &EvalConfig) -> Result<EvalReport> {
    if nets.is_empty() || samples.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one model and one sample".into()));
    }
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let per_model = nets
        .iter()
        .map(|n| score_predictions(&predict_keypoints(*n, &images)?, samples, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = per_model.len() as f64;
    let first = &per_model[0].ap;
    let ap = ApResult {
        thresholds: first.thresholds.clone(),
        per_threshold: (0..first.thresholds.len())
            .map(|i| per_model.iter().map(|m| m.ap.per_threshold[i]).sum::<f64>() / n)
            .collect(),
        map: per_model.iter().map(|m| m.map).sum::<f64>() / n,
    };
    let mean = ModelMetrics {
        map: ap.map,
        ap,
        pck: per_model.iter().map(|m| m.pck).sum::<f64>() / n,
        pckh: per_model
            .iter()
            .map(|m| m.pckh)
            .sum::<Option<f64>>()
            .map(|s| s / n),
    };
    Ok(EvalReport { per_model, mean })
}

/// Pooled features of every image as an `N × D` matrix.
pub fn extract_features<N: PoseEstimator>(net: &N, images: &[&Image]) -> Result<FeatureMatrix> {
    let mut rows = Vec::with_capacity(images.len());
    for chunk in images.chunks(CHUNK) {
        let (_, feats) = net.predict(chunk)?;
        rows.extend(feats.into_iter().map(|f| f.0));
    }
    FeatureMatrix::from_rows(&rows)
}
