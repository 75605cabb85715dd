use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ssltrain::eval::{evaluate, EvalConfig, EvalSample};
use crate::ssltrain::train::{parse_pipeline, NetworkMode, TrainConfig, TrainData, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub candidate: String,
    pub epoch: usize,
    pub pck: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub candidate: String,
    /// Position in the input list.
    pub input_position: usize,
    /// Best validation PCK over epochs.
    pub best: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    /// Best first; ties keep input order.
    pub entries: Vec<RankEntry>,
    /// One point per (candidate, epoch), candidates in input order.
    pub curves: Vec<CurvePoint>,
}

impl Ranking {
    pub fn write_curves_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "candidate,epoch,pck,map")?;
        for p in &self.curves {
            writeln!(w, "{},{},{},{}", p.candidate, p.epoch, p.pck, p.map)?;
        }
        Ok(())
    }

    pub fn write_ranking_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "rank,candidate,best_pck,best_epoch")?;
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(w, "{},{},{},{}", i + 1, e.candidate, e.best, e.best_epoch)?;
        }
        Ok(())
    }

    pub fn save(&self, curves: impl AsRef<Path>, ranking: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_curves_csv(&mut buf).expect("writing to memory");
        std::fs::write(curves.as_ref(), &buf).map_err(|e| Error::io(curves.as_ref(), e))?;
        buf.clear();
        self.write_ranking_csv(&mut buf).expect("writing to memory");
        std::fs::write(ranking.as_ref(), &buf).map_err(|e| Error::io(ranking.as_ref(), e))
    }
}

/// Trains every candidate as the single consistency path of an otherwise identical
/// Single-Network run (same seed, data and config) and ranks them by best validation PCK.
pub fn rank_augmentations(
    candidates: &[String],
    base: &TrainConfig,
    data: &TrainData,
    validation: &[EvalSample],
    eval_cfg: &EvalConfig,
    joints: usize,
) -> Result<Ranking> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates to rank".into()));
    }
    for c in candidates {
        parse_pipeline(c)?;
    }
    let mut curves = Vec::new();
    let mut entries = Vec::new();
    for (pos, c) in candidates.iter().enumerate() {
        let cfg = TrainConfig {
            paths: vec![c.clone()],
            network_mode: NetworkMode::Single,
            ..base.clone()
        };
        let mut trainer = Trainer::new(cfg, joints)?;
        let mut curve = Vec::new();
        trainer.fit(data, None, |t, epoch| {
            let r = evaluate(&[&t.nets[0]], validation, eval_cfg)?;
            curve.push(CurvePoint {
                candidate: c.clone(),
                epoch,
                pck: r.mean.pck,
                map: r.mean.map,
            });
            Ok(())
        })?;
        // First epoch reaching the maximum.
        let (best_epoch, best) = curve
            .iter()
            .fold((0, f64::NEG_INFINITY), |acc, p| if p.pck > acc.1 { (p.epoch, p.pck) } else { acc });
        entries.push(RankEntry {
            candidate: c.clone(),
            input_position: pos,
            best,
            best_epoch,
        });
        curves.extend(curve);
    }
    entries.sort_by(|a, b| b.best.total_cmp(&a.best));
    Ok(Ranking { entries, curves })
}
