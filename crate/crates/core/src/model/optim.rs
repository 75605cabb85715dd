use crate::error::{Error, Result};
use crate::model::tensor::{Tensor, TensorFile};
use crate::model::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Piecewise-constant learning rate: `base` until the first boundary, then each
/// `(epoch, lr)` pair takes over from its epoch onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub drops: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            base: lr,
            drops: vec![],
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.drops
            .iter()
            .filter(|(e, _)| epoch >= *e)
            .max_by_key(|(e, _)| *e)
            .map_or(self.base, |&(_, lr)| lr)
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::constant(1e-3)
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
    pub step: u64,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, schedule: LrSchedule) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            schedule,
        }
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.meta.insert("optimizer".into(), "adam".into());
        f.meta.insert("step".into(), self.step.to_string());
        for (prefix, set) in [("m", &self.first_moment), ("v", &self.second_moment)] {
            for t in &set.tensors {
                f.tensors.push(Tensor {
                    name: format!("{prefix}.{}", t.name),
                    ..t.clone()
                });
            }
        }
        f
    }

    pub fn from_tensor_file(file: &TensorFile, params: &ParamSet, schedule: LrSchedule) -> Result<Self> {
        let step = file
            .meta
            .get("step")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format {
                what: "optimizer state",
                message: "missing `step` metadata".into(),
            })?;
        let mut state = Self::new(params, schedule);
        state.step = step;
        for (prefix, set) in [("m", &mut state.first_moment), ("v", &mut state.second_moment)] {
            for t in &mut set.tensors {
                let src = file.require(&format!("{prefix}.{}", t.name))?;
                if src.shape != t.shape {
                    return Err(Error::Shape(format!("optimizer tensor {} has wrong shape", src.name)));
                }
                t.data.clone_from(&src.data);
            }
        }
        Ok(state)
    }
}

/// One Adam update with bias correction; the learning rate comes from the schedule at `epoch`.
pub fn adam_step(state: &mut OptimizerState, params: &mut ParamSet, grads: &ParamSet, epoch: usize) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.first_moment) {
        return Err(Error::Shape("gradient/optimizer layout does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let lr = state.schedule.lr_at(epoch);
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut state.first_moment.tensors)
        .zip(&mut state.second_moment.tensors)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = BETA1 * m.data[i] + (1.0 - BETA1) * gi;
            v.data[i] = BETA2 * v.data[i] + (1.0 - BETA2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
