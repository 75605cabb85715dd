//! Pose-estimator interface, the built-in [`TinyPoseNet`], Adam, and the tensor container.

mod net;
mod optim;
mod tensor;

pub use net::{FeatureVector, ForwardCache, TinyPoseNet, FEATURE_DIM, NET_STRIDE};
pub use optim::{adam_step, LrSchedule, OptimizerState, BETA1, BETA2, EPSILON};
pub use tensor::{Tensor, TensorFile};

use crate::error::Result;
use crate::geometry::{Heatmap, Image};

/// A heatmap regressor with analytic gradients.
///
/// `forward` keeps whatever `backward` needs in `Cache`; `predict` is the
/// gradient-free path used for teacher signals and evaluation.
pub trait PoseEstimator: Sync {
    type Cache: Send + Sync;

    fn joints(&self) -> usize;
    fn stride(&self) -> usize;
    fn forward(&self, images: &[&Image]) -> Result<(Vec<Heatmap>, Vec<FeatureVector>, Self::Cache)>;
    fn predict(&self, images: &[&Image]) -> Result<(Vec<Heatmap>, Vec<FeatureVector>)>;
    /// Parameter gradients of the scalar whose gradient w.r.t. each output heatmap is given.
    fn backward(&self, cache: &Self::Cache, output_grads: &[Heatmap]) -> Result<ParamSet>;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

/// Ordered named tensors; used for parameters, gradients and optimizer moments alike.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), &t.shape))
                .collect(),
        }
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
