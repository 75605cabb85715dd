use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugPipeline;
use crate::error::{Error, Result};
use crate::geometry::{Image, KeypointSet};
use crate::model::{LrSchedule, OptimizerState, PoseEstimator, TensorFile, TinyPoseNet};
use crate::rng::RandomStream;
use crate::ssltrain::batch::{prepare_supervised, ViewOptions};
use crate::ssltrain::loss::{UnsupMode, DEFAULT_TAU};
use crate::ssltrain::step::{train_step_dual, train_step_single, StepConfig, StepLosses};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkMode {
    #[default]
    Single,
    Dual,
}

impl FromStr for NetworkMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "dual" => Ok(Self::Dual),
            _ => Err(Error::InvalidParameter(format!("unknown network mode {s:?}; expected single or dual"))),
        }
    }
}

/// Training hyper-parameters. An empty `paths` list (or `lambda_u = 0`) trains supervised only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_u: f64,
    /// Pipeline preset names or tag lists, one per consistency path.
    pub paths: Vec<String>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `(epoch, lr)` pairs; each takes over from its epoch onwards.
    pub lr_drops: Vec<(usize, f64)>,
    pub network_mode: NetworkMode,
    /// `ml`, `cm` or `hf`.
    pub unsup_mode: String,
    pub tau: f64,
    /// Leading fraction of epochs trained with `lambda = 0`.
    pub warmup_fraction: f64,
    pub joint_threshold: f64,
    /// Target Gaussian width in heatmap cells.
    pub sigma: f64,
    pub fisheye: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_u: 1.0,
            paths: ["JOCO", "JC", "JCCM", "JO"].map(String::from).to_vec(),
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            lr_drops: vec![],
            network_mode: NetworkMode::Single,
            unsup_mode: "ml".into(),
            tau: DEFAULT_TAU,
            warmup_fraction: 0.1,
            joint_threshold: 0.3,
            sigma: 1.0,
            fisheye: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn supervised_only() -> Self {
        Self {
            paths: vec![],
            lambda_u: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || self.lr_drops.iter().any(|(_, lr)| !(*lr > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if !(self.lambda_u >= 0.0) {
            return bad(format!("lambda_u must be non-negative, got {}", self.lambda_u));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction must lie in [0, 1], got {}", self.warmup_fraction));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        self.unsup()?;
        for p in &self.paths {
            parse_pipeline(p)?;
        }
        Ok(())
    }

    pub fn unsup(&self) -> Result<UnsupMode> {
        match UnsupMode::from_str(&self.unsup_mode)? {
            UnsupMode::ConfidenceMask { .. } => UnsupMode::confidence_mask(self.tau),
            m => Ok(m),
        }
    }

    /// Path pipelines with patch sizes scaled to the input height.
    pub fn pipelines(&self, input_height: usize) -> Result<Vec<AugPipeline>> {
        self.paths
            .iter()
            .map(|p| Ok(parse_pipeline(p)?.scaled_to_input(input_height)))
            .collect()
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            drops: self.lr_drops.clone(),
        }
    }

    pub fn warmup_epochs(&self) -> usize {
        (self.warmup_fraction * self.epochs as f64).round() as usize
    }

    fn lambda_at(&self, epoch: usize) -> f64 {
        if self.paths.is_empty() || epoch < self.warmup_epochs() {
            0.0
        } else {
            self.lambda_u
        }
    }
}

/// A preset name (`JOCO`) or an ad-hoc tag list (`JC,CO`).
pub fn parse_pipeline(spec: &str) -> Result<AugPipeline> {
    if spec.contains([',', '+']) {
        AugPipeline::from_tags(spec)
    } else {
        AugPipeline::preset(spec)
    }
}

/// In-memory training data: labeled images with joints in image pixels, and unlabeled images.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub labeled: Vec<(Image, KeypointSet)>,
    pub unlabeled: Vec<Image>,
}

impl TrainData {
    fn input_dims(&self) -> Result<(usize, usize)> {
        let d = self
            .labeled
            .first()
            .map(|(i, _)| i.dims())
            .ok_or_else(|| Error::InvalidInput("training needs at least one labeled image".into()))?;
        let mismatch = self.labeled.iter().map(|(i, _)| i.dims()).chain(self.unlabeled.iter().map(Image::dims));
        if let Some(other) = mismatch.into_iter().find(|x| *x != d) {
            return Err(Error::Shape(format!("training images differ in size: {d:?} vs {other:?}")));
        }
        Ok(d)
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    /// `A` or `B`.
    pub net: &'static str,
    pub losses: StepLosses,
}

pub fn loss_csv_header(path_names: &[String]) -> String {
    let mut cols = vec!["step".to_string(), "epoch".into(), "net".into(), "lambda".into(), "sup".into()];
    cols.extend(path_names.iter().map(|p| format!("unsup_{p}")));
    cols.extend(["unsup".into(), "total".into()]);
    cols.join(",")
}

/// Formats a record; per-path columns are left empty when the unsupervised term was skipped.
pub fn loss_csv_row(r: &LossRecord, paths: usize) -> String {
    let l = &r.losses;
    let mut cols = vec![
        r.step.to_string(),
        r.epoch.to_string(),
        r.net.to_string(),
        l.lambda.to_string(),
        l.supervised.to_string(),
    ];
    for i in 0..paths {
        cols.push(l.per_path.get(i).map(f64::to_string).unwrap_or_default());
    }
    cols.extend([l.unsup.to_string(), l.total.to_string()]);
    cols.join(",")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TrainerState {
    epoch: usize,
    step: u64,
    config: TrainConfig,
}

/// Single- or Dual-Network trainer. Every random draw is a function of
/// `(seed, epoch, batch, sample, path)`, so resuming from an epoch checkpoint continues
/// bit-identically.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub nets: Vec<TinyPoseNet>,
    pub optimizers: Vec<OptimizerState>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps (per network).
    pub step: u64,
}

/// Names of the networks in logs and checkpoint files.
pub const NET_NAMES: [&str; 2] = ["A", "B"];

impl Trainer {
    pub fn new(cfg: TrainConfig, joints: usize) -> Result<Self> {
        cfg.validate()?;
        let count = match cfg.network_mode {
            NetworkMode::Single => 1,
            NetworkMode::Dual => 2,
        };
        let init = RandomStream::new(cfg.seed).split_named("init");
        let nets: Vec<TinyPoseNet> = (0..count)
            .map(|i| TinyPoseNet::init(joints, init.split(i as u64).next_u64()))
            .collect();
        let optimizers = nets
            .iter()
            .map(|n| OptimizerState::new(n.params(), cfg.schedule()))
            .collect();
        Ok(Self {
            cfg,
            nets,
            optimizers,
            epoch: 0,
            step: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    /// Unlabeled pool index used at global position `g`: the pool is reshuffled on each pass.
    fn unlabeled_index(&self, g: usize, pool: usize, perms: &mut HashMap<usize, Vec<usize>>) -> usize {
        let pass = g / pool;
        let perm = perms.entry(pass).or_insert_with(|| {
            let mut p: Vec<usize> = (0..pool).collect();
            RandomStream::new(self.cfg.seed)
                .split_named("unlabeled")
                .split(pass as u64)
                .shuffle(&mut p);
            p
        });
        perm[g % pool]
    }

    /// Trains one epoch (one pass over the shuffled labeled set) and reports every step.
    pub fn run_epoch(&mut self, data: &TrainData, mut on_step: impl FnMut(&LossRecord)) -> Result<()> {
        if self.is_done() {
            return Err(Error::Contract(format!("all {} epochs already trained", self.cfg.epochs)));
        }
        let dims = data.input_dims()?;
        let stride = self.nets[0].stride();
        let epoch = self.epoch;
        let lambda = if data.unlabeled.is_empty() { 0.0 } else { self.cfg.lambda_at(epoch) };
        let mode = self.cfg.unsup()?;
        let step_cfg = StepConfig {
            views: ViewOptions {
                paths: self.cfg.pipelines(dims.0)?,
                fisheye: self.cfg.fisheye,
                joint_threshold: self.cfg.joint_threshold,
                shared_outer: mode == UnsupMode::HeatmapFusion,
            },
            lambda,
            mode,
            epoch,
        };
        let epoch_rng = RandomStream::new(self.cfg.seed).split_named("epoch").split(epoch as u64);
        let mut order: Vec<usize> = (0..data.labeled.len()).collect();
        epoch_rng.split_named("order").shuffle(&mut order);
        let mut perms = HashMap::new();
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let rng = epoch_rng.split(b as u64);
            let labeled: Vec<(&Image, &KeypointSet)> =
                chunk.iter().map(|&i| (&data.labeled[i].0, &data.labeled[i].1)).collect();
            let sup = prepare_supervised(&labeled, stride, self.cfg.sigma, &rng.split_named("sup"))?;
            let unlabeled: Vec<&Image> = if lambda != 0.0 {
                let start = epoch * data.labeled.len() + b * self.cfg.batch_size;
                (start..start + chunk.len())
                    .map(|g| &data.unlabeled[self.unlabeled_index(g, data.unlabeled.len(), &mut perms)])
                    .collect()
            } else {
                vec![]
            };
            let cons_rng = rng.split_named("cons");
            let losses = match self.nets.as_mut_slice() {
                [net] => vec![
                    train_step_single(net, &mut self.optimizers[0], &sup, &unlabeled, &step_cfg, &cons_rng)?.0,
                ],
                [a, b] => {
                    let (oa, ob) = self.optimizers.split_at_mut(1);
                    let (la, lb) =
                        train_step_dual(a, &mut oa[0], b, &mut ob[0], &sup, &unlabeled, &step_cfg, &cons_rng)?;
                    vec![la, lb]
                }
                _ => unreachable!("one or two networks"),
            };
            self.step += 1;
            for (i, losses) in losses.into_iter().enumerate() {
                if !losses.total.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite loss at epoch {epoch}, step {}",
                        self.step
                    )));
                }
                on_step(&LossRecord {
                    step: self.step,
                    epoch,
                    net: NET_NAMES[i],
                    losses,
                });
            }
        }
        self.epoch += 1;
        Ok(())
    }

    /// Trains the remaining epochs, appending loss rows to `log` (header written when starting
    /// from epoch 0) and calling `after_epoch` with each finished epoch index.
    pub fn fit(
        &mut self,
        data: &TrainData,
        mut log: Option<&mut dyn Write>,
        mut after_epoch: impl FnMut(&Trainer, usize) -> Result<()>,
    ) -> Result<()> {
        let paths = self.cfg.paths.len();
        if self.epoch == 0 {
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", loss_csv_header(&self.cfg.paths)).map_err(|e| Error::io("loss log", e))?;
            }
        }
        while !self.is_done() {
            let mut io_err = None;
            self.run_epoch(data, |r| {
                if let Some(w) = log.as_deref_mut() {
                    if let Err(e) = writeln!(w, "{}", loss_csv_row(r, paths)) {
                        io_err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = io_err {
                return Err(Error::io("loss log", e));
            }
            after_epoch(self, self.epoch - 1)?;
        }
        Ok(())
    }

    /// Writes `net_{A,B}.tensors`, `optim_{A,B}.tensors` and `state.json` into `dir`.
    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, (net, opt)) in self.nets.iter().zip(&self.optimizers).enumerate() {
            net.to_tensor_file().save(dir.join(format!("net_{}.tensors", NET_NAMES[i])))?;
            opt.to_tensor_file().save(dir.join(format!("optim_{}.tensors", NET_NAMES[i])))?;
        }
        let state = TrainerState {
            epoch: self.epoch,
            step: self.step,
            config: self.cfg.clone(),
        };
        let path = dir.join("state.json");
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("state.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainerState = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let count = match state.config.network_mode {
            NetworkMode::Single => 1,
            NetworkMode::Dual => 2,
        };
        let mut nets = Vec::new();
        let mut optimizers = Vec::new();
        for name in &NET_NAMES[..count] {
            let net = TinyPoseNet::from_tensor_file(&TensorFile::load(dir.join(format!("net_{name}.tensors")))?)?;
            let opt = OptimizerState::from_tensor_file(
                &TensorFile::load(dir.join(format!("optim_{name}.tensors")))?,
                net.params(),
                state.config.schedule(),
            )?;
            nets.push(net);
            optimizers.push(opt);
        }
        Ok(Self {
            cfg: state.config,
            nets,
            optimizers,
            epoch: state.epoch,
            step: state.step,
        })
    }
}
