use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Heatmap, Image, CHANNELS};
use crate::model::tensor::{Tensor, TensorFile};
use crate::model::{ParamSet, PoseEstimator};
use crate::rng::RandomStream;

pub const CONV1_OUT: usize = 16;
pub const CONV2_OUT: usize = 32;
pub const FEATURE_DIM: usize = CONV2_OUT;
pub const NET_STRIDE: usize = 4;
const KERNEL: usize = 3;

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const HEAD_W: usize = 4;
const HEAD_B: usize = 5;

/// Global-average-pooled activations of the last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

/// `conv3x3/2 (3→16) → ReLU → conv3x3/2 (16→32) → ReLU → conv1x1 (32→k)`, zero padding 1.
#[derive(Debug, Clone)]
pub struct TinyPoseNet {
    joints: usize,
    params: ParamSet,
    /// Bumped on every mutable parameter access; stale caches are rejected.
    version: u64,
}

/// Equal weights compare equal regardless of how often they were touched.
impl PartialEq for TinyPoseNet {
    fn eq(&self, other: &Self) -> bool {
        self.joints == other.joints && self.params == other.params
    }
}

/// Activations retained by [`TinyPoseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    height: usize,
    width: usize,
    samples: Vec<SampleCache>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone)]
struct SampleCache {
    col1: Vec<f64>,
    a1: Vec<f64>,
    col2: Vec<f64>,
    a2: Vec<f64>,
}

struct Dims {
    h0: usize,
    w0: usize,
    h1: usize,
    w1: usize,
    h2: usize,
    w2: usize,
}

impl Dims {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h0: h,
            w0: w,
            h1: h / 2,
            w1: w / 2,
            h2: h / 4,
            w2: w / 4,
        }
    }
}

impl TinyPoseNet {
    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(joints: usize, seed: u64) -> Self {
        let mut rng = RandomStream::new(seed).split_named("init_params");
        let mut uniform = |name: &str, shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            Tensor::new(name, shape, data).expect("shape matches")
        };
        let tensors = vec![
            uniform("conv1.weight", &[CONV1_OUT, CHANNELS, KERNEL, KERNEL], CHANNELS * 9),
            Tensor::zeros("conv1.bias", &[CONV1_OUT]),
            uniform("conv2.weight", &[CONV2_OUT, CONV1_OUT, KERNEL, KERNEL], CONV1_OUT * 9),
            Tensor::zeros("conv2.bias", &[CONV2_OUT]),
            uniform("head.weight", &[joints, CONV2_OUT], CONV2_OUT),
            Tensor::zeros("head.bias", &[joints]),
        ];
        Self {
            joints,
            params: ParamSet::new(tensors),
            version: 0,
        }
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.version += 1;
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        f.meta.insert("model".into(), "tiny_pose_net".into());
        f.meta.insert("joints".into(), self.joints.to_string());
        f.tensors = self.params.tensors.clone();
        f
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let joints: usize = file
            .meta
            .get("joints")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format {
                what: "checkpoint",
                message: "missing or invalid `joints` metadata".into(),
            })?;
        let mut net = Self::init(joints, 0);
        for t in &mut net.params.tensors {
            let src = file.require(&t.name)?;
            if src.shape != t.shape {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {} has shape {:?}, expected {:?}",
                    t.name, src.shape, t.shape
                )));
            }
            t.data.clone_from(&src.data);
        }
        Ok(net)
    }

    fn check_input(&self, images: &[&Image]) -> Result<(usize, usize)> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let (h, w) = first.dims();
        if h % NET_STRIDE != 0 || w % NET_STRIDE != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by {NET_STRIDE}"
            )));
        }
        if images.iter().any(|i| i.dims() != (h, w)) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        Ok((h, w))
    }

    fn forward_sample(&self, img: &Image, d: &Dims) -> (Vec<f64>, Vec<f64>, SampleCache) {
        let p = &self.params.tensors;
        let planar = to_planar(img);
        let p1 = d.h1 * d.w1;
        let p2 = d.h2 * d.w2;

        let col1 = im2col(&planar, CHANNELS, d.h0, d.w0, d.h1, d.w1);
        let mut a1 = vec![0.0; CONV1_OUT * p1];
        matmul_bias(&p[CONV1_W].data, &p[CONV1_B].data, &col1, CHANNELS * 9, p1, &mut a1);
        relu(&mut a1);

        let col2 = im2col(&a1, CONV1_OUT, d.h1, d.w1, d.h2, d.w2);
        let mut a2 = vec![0.0; CONV2_OUT * p2];
        matmul_bias(&p[CONV2_W].data, &p[CONV2_B].data, &col2, CONV1_OUT * 9, p2, &mut a2);
        relu(&mut a2);

        let mut out = vec![0.0; self.joints * p2];
        matmul_bias(&p[HEAD_W].data, &p[HEAD_B].data, &a2, CONV2_OUT, p2, &mut out);

        let features = a2.chunks_exact(p2).map(|c| c.iter().sum::<f64>() / p2 as f64).collect();
        (out, features, SampleCache { col1, a1, col2, a2 })
    }

    fn backward_sample(&self, c: &SampleCache, dout: &[f64], d: &Dims) -> ParamSet {
        let p = &self.params.tensors;
        let mut g = self.params.zeros_like();
        let p1 = d.h1 * d.w1;
        let p2 = d.h2 * d.w2;
        let k = self.joints;

        // head
        weight_grad(dout, &c.a2, k, CONV2_OUT, p2, &mut g.tensors[HEAD_W].data);
        bias_grad(dout, p2, &mut g.tensors[HEAD_B].data);
        let mut dz2 = vec![0.0; CONV2_OUT * p2];
        input_grad(&p[HEAD_W].data, dout, k, CONV2_OUT, p2, &mut dz2);
        relu_mask(&mut dz2, &c.a2);

        // conv2
        weight_grad(&dz2, &c.col2, CONV2_OUT, CONV1_OUT * 9, p2, &mut g.tensors[CONV2_W].data);
        bias_grad(&dz2, p2, &mut g.tensors[CONV2_B].data);
        let mut dcol2 = vec![0.0; CONV1_OUT * 9 * p2];
        input_grad(&p[CONV2_W].data, &dz2, CONV2_OUT, CONV1_OUT * 9, p2, &mut dcol2);
        let mut dz1 = col2im(&dcol2, CONV1_OUT, d.h1, d.w1, d.h2, d.w2);
        relu_mask(&mut dz1, &c.a1);

        // conv1
        weight_grad(&dz1, &c.col1, CONV1_OUT, CHANNELS * 9, p1, &mut g.tensors[CONV1_W].data);
        bias_grad(&dz1, p1, &mut g.tensors[CONV1_B].data);
        g
    }
}

impl PoseEstimator for TinyPoseNet {
    type Cache = ForwardCache;

    fn joints(&self) -> usize {
        self.joints
    }

    fn stride(&self) -> usize {
        NET_STRIDE
    }

    fn forward(&self, images: &[&Image]) -> Result<(Vec<Heatmap>, Vec<FeatureVector>, ForwardCache)> {
        let (h, w) = self.check_input(images)?;
        let d = Dims::new(h, w);
        let results: Vec<_> = images.par_iter().map(|img| self.forward_sample(img, &d)).collect();
        let mut heatmaps = Vec::with_capacity(results.len());
        let mut features = Vec::with_capacity(results.len());
        let mut samples = Vec::with_capacity(results.len());
        for (out, feat, cache) in results {
            heatmaps.push(
                Heatmap::from_values(self.joints, d.h2, d.w2, NET_STRIDE, out).expect("head shape"),
            );
            features.push(FeatureVector(feat));
            samples.push(cache);
        }
        Ok((
            heatmaps,
            features,
            ForwardCache {
                version: self.version,
                height: h,
                width: w,
                samples,
            },
        ))
    }

    fn predict(&self, images: &[&Image]) -> Result<(Vec<Heatmap>, Vec<FeatureVector>)> {
        let (h, w) = self.check_input(images)?;
        let d = Dims::new(h, w);
        Ok(images
            .par_iter()
            .map(|img| {
                let (out, feat, _) = self.forward_sample(img, &d);
                (
                    Heatmap::from_values(self.joints, d.h2, d.w2, NET_STRIDE, out).expect("head shape"),
                    FeatureVector(feat),
                )
            })
            .unzip())
    }

    fn backward(&self, cache: &ForwardCache, output_grads: &[Heatmap]) -> Result<ParamSet> {
        if cache.version != self.version {
            return Err(Error::Contract(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        if output_grads.len() != cache.samples.len() {
            return Err(Error::Contract(format!(
                "{} output gradients for a cached batch of {}",
                output_grads.len(),
                cache.samples.len()
            )));
        }
        let d = Dims::new(cache.height, cache.width);
        let expect = (self.joints, d.h2, d.w2);
        if let Some(bad) = output_grads.iter().find(|g| g.shape() != expect) {
            return Err(Error::Shape(format!(
                "output gradient shape {:?}, expected {expect:?}",
                bad.shape()
            )));
        }
        let per_sample: Vec<ParamSet> = cache
            .samples
            .par_iter()
            .zip(output_grads.par_iter())
            .map(|(c, g)| self.backward_sample(c, g.values(), &d))
            .collect();
        let mut total = self.params.zeros_like();
        for g in &per_sample {
            total.add_assign(g);
        }
        Ok(total)
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        TinyPoseNet::params_mut(self)
    }
}

fn to_planar(img: &Image) -> Vec<f64> {
    let (h, w) = img.dims();
    let n = h * w;
    let mut out = vec![0.0; CHANNELS * n];
    for (i, px) in img.pixels().chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            out[c * n + i] = px[c];
        }
    }
    out
}

/// Rows indexed by `(channel, ky, kx)`, columns by output position; stride 2, padding 1.
fn im2col(input: &[f64], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let p = oh * ow;
    let mut col = vec![0.0; channels * 9 * p];
    for c in 0..channels {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((c * KERNEL + ky) * KERNEL + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *v = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
fn col2im(col: &[f64], channels: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let p = oh * ow;
    let mut out = vec![0.0; channels * h * w];
    for c in 0..channels {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[((c * KERNEL + ky) * KERNEL + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// `out[o, :] = bias[o] + Σ_r weight[o, r] · input[r, :]`.
fn matmul_bias(weight: &[f64], bias: &[f64], input: &[f64], rows: usize, p: usize, out: &mut [f64]) {
    for (o, out_row) in out.chunks_exact_mut(p).enumerate() {
        out_row.fill(bias[o]);
        let w = &weight[o * rows..(o + 1) * rows];
        for (r, &wr) in w.iter().enumerate() {
            if wr == 0.0 {
                continue;
            }
            axpy(out_row, wr, &input[r * p..(r + 1) * p]);
        }
    }
}

/// `grad[o, r] += Σ_p dout[o, p] · input[r, p]`.
fn weight_grad(dout: &[f64], input: &[f64], outs: usize, rows: usize, p: usize, grad: &mut [f64]) {
    for o in 0..outs {
        let d = &dout[o * p..(o + 1) * p];
        for r in 0..rows {
            grad[o * rows + r] += dot(d, &input[r * p..(r + 1) * p]);
        }
    }
}

fn bias_grad(dout: &[f64], p: usize, grad: &mut [f64]) {
    for (g, row) in grad.iter_mut().zip(dout.chunks_exact(p)) {
        *g += row.iter().sum::<f64>();
    }
}

/// `din[r, :] = Σ_o weight[o, r] · dout[o, :]`.
fn input_grad(weight: &[f64], dout: &[f64], outs: usize, rows: usize, p: usize, din: &mut [f64]) {
    for o in 0..outs {
        let d = &dout[o * p..(o + 1) * p];
        for r in 0..rows {
            let wr = weight[o * rows + r];
            if wr != 0.0 {
                axpy(&mut din[r * p..(r + 1) * p], wr, d);
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
