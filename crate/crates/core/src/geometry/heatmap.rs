use crate::error::{Error, Result};
use crate::geometry::image::bilinear_accumulate;
use crate::geometry::{AffineMap, Joint, KeypointSet};

/// `k` response maps of `height × width` at `stride` image pixels per cell, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    channels: usize,
    height: usize,
    width: usize,
    stride: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        Self {
            channels,
            height,
            width,
            stride,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn from_values(
        channels: usize,
        height: usize,
        width: usize,
        stride: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "expected {} heatmap values for {channels}x{height}x{width}, got {}",
                channels * height * width,
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            stride,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.shape() == other.shape()
    }
}

/// Renders one truncated Gaussian per joint on an `(image_height / stride, image_width / stride)` grid.
///
/// The centre is the joint position divided by `stride`, rounded to the nearest cell, so every
/// visible in-range joint peaks at exactly 1.0. Values farther than `3σ` from the centre along
/// either axis are zero. Invisible or out-of-range joints give an all-zero channel.
pub fn render_heatmaps(
    kps: &KeypointSet,
    image_size: (usize, usize),
    stride: usize,
    sigma: f64,
) -> Result<Heatmap> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if stride == 0 || image_size.0 % stride != 0 || image_size.1 % stride != 0 {
        return Err(Error::Shape(format!(
            "image size {image_size:?} is not divisible by stride {stride}"
        )));
    }
    let (h, w) = (image_size.0 / stride, image_size.1 / stride);
    let mut hm = Heatmap::zeros(kps.len(), h, w, stride);
    let radius = (3.0 * sigma).ceil() as i64;
    let denom = 2.0 * sigma * sigma;
    for (c, joint) in kps.joints.iter().enumerate() {
        let Some((mx, my)) = quantized_center(joint, stride, h, w) else {
            continue;
        };
        let plane = &mut hm.values[c * h * w..(c + 1) * h * w];
        for y in (my - radius).max(0)..=(my + radius).min(h as i64 - 1) {
            for x in (mx - radius).max(0)..=(mx + radius).min(w as i64 - 1) {
                let d2 = ((x - mx) * (x - mx) + (y - my) * (y - my)) as f64;
                plane[y as usize * w + x as usize] = (-d2 / denom).exp();
            }
        }
    }
    Ok(hm)
}

fn quantized_center(joint: &Joint, stride: usize, h: usize, w: usize) -> Option<(i64, i64)> {
    if !joint.is_visible() {
        return None;
    }
    let mx = (joint.x / stride as f64 + 0.5).floor() as i64;
    let my = (joint.y / stride as f64 + 0.5).floor() as i64;
    (mx >= 0 && my >= 0 && mx < w as i64 && my < h as i64).then_some((mx, my))
}

/// Per-channel argmax decode. The winning cell is scaled back by the stride, its value is the
/// confidence, and ties go to the smallest row-major index.
pub fn decode_heatmaps(hm: &Heatmap) -> KeypointSet {
    let n = hm.height * hm.width;
    let s = hm.stride as f64;
    let joints = (0..hm.channels)
        .map(|c| {
            let plane = &hm.values[c * n..(c + 1) * n];
            let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
            for (i, &v) in plane.iter().enumerate() {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            let (y, x) = (best / hm.width, best % hm.width);
            Joint::predicted(x as f64 * s, y as f64 * s, best_v)
        })
        .collect();
    KeypointSet { joints }
}

/// Warps every channel by an affine map given in image-pixel coordinates.
///
/// The translation is divided by the stride before application; channels are bilinearly
/// resampled independently with zero fill.
pub fn warp_heatmap(hm: &Heatmap, a: &AffineMap) -> Result<Heatmap> {
    let inv = a.at_stride(hm.stride).invert()?;
    let (h, w) = (hm.height, hm.width);
    let n = h * w;
    let mut out = Heatmap::zeros(hm.channels, h, w, hm.stride);
    // Transposed copy so that one bilinear lookup serves every channel.
    let k = hm.channels;
    let mut interleaved = vec![0.0; n * k];
    for c in 0..k {
        for i in 0..n {
            interleaved[i * k + c] = hm.values[c * n + i];
        }
    }
    let mut px = vec![0.0; k];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            bilinear_accumulate(&interleaved, h, w, k, sx, sy, &mut px);
            for c in 0..k {
                out.values[c * n + y * w + x] = px[c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::warp_points;
    use crate::rng::RandomStream;

    #[test]
    fn invisible_joint_gives_zero_channel() {
        let k = KeypointSet::new(vec![Joint::invisible(), Joint::visible(8.0, 8.0)]);
        let hm = render_heatmaps(&k, (64, 48), 4, 2.0).unwrap();
        assert!(hm.channel(0).iter().all(|&v| v == 0.0));
        assert_eq!(hm.channel(1).iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn closed_form_gaussian_values() {
        // heatmap pixel (x=8, y=6) at stride 4
        let k = KeypointSet::new(vec![Joint::visible(32.0, 24.0)]);
        let hm = render_heatmaps(&k, (64, 48), 4, 2.0).unwrap();
        assert_eq!(hm.get(0, 6, 8), 1.0);
        assert!((hm.get(0, 6, 10) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((hm.get(0, 6, 10) - 0.606_530_659_712_633).abs() < 1e-12);
        // outside the 3σ window
        assert_eq!(hm.get(0, 6, 1), 0.0);
    }

    #[test]
    fn channels_are_independent() {
        let a = KeypointSet::new(vec![Joint::visible(8.0, 8.0)]);
        let b = KeypointSet::new(vec![Joint::visible(40.0, 56.0)]);
        let ab = KeypointSet::new(vec![a.joints[0], b.joints[0]]);
        let ha = render_heatmaps(&a, (64, 48), 4, 2.0).unwrap();
        let hb = render_heatmaps(&b, (64, 48), 4, 2.0).unwrap();
        let hab = render_heatmaps(&ab, (64, 48), 4, 2.0).unwrap();
        assert_eq!(hab.channel(0), ha.channel(0));
        assert_eq!(hab.channel(1), hb.channel(0));
    }

    #[test]
    fn rejects_bad_sigma_and_stride() {
        let k = KeypointSet::new(vec![Joint::visible(8.0, 8.0)]);
        assert!(render_heatmaps(&k, (64, 48), 4, 0.0).is_err());
        assert!(render_heatmaps(&k, (63, 48), 4, 2.0).is_err());
    }

    #[test]
    fn decode_tie_break_and_zero_channel() {
        let hm = Heatmap::from_values(2, 3, 4, 4, [vec![0.0; 12], vec![0.25; 12]].concat()).unwrap();
        let k = decode_heatmaps(&hm);
        assert_eq!(k.joints[0].confidence(), Some(0.0));
        assert_eq!((k.joints[1].x, k.joints[1].y), (0.0, 0.0));
        assert_eq!(k.joints[1].confidence(), Some(0.25));
    }

    #[test]
    fn render_decode_round_trip() {
        let mut rng = RandomStream::new(3);
        for _ in 0..50 {
            let joints = (0..13)
                .map(|_| Joint::visible(rng.uniform(0.0, 46.0), rng.uniform(0.0, 62.0)))
                .collect();
            let k = KeypointSet::new(joints);
            let back = decode_heatmaps(&render_heatmaps(&k, (64, 48), 4, 2.0).unwrap());
            for (a, b) in k.joints.iter().zip(&back.joints) {
                assert!((a.x - b.x).abs() <= 3.0 && (a.y - b.y).abs() <= 3.0);
                assert_eq!(b.confidence(), Some(1.0));
            }
        }
    }

    #[test]
    fn identity_warp_is_bit_identical() {
        let k = KeypointSet::new(vec![Joint::visible(20.0, 30.0), Joint::visible(5.0, 9.0)]);
        let hm = render_heatmaps(&k, (64, 48), 4, 2.0).unwrap();
        assert_eq!(warp_heatmap(&hm, &AffineMap::identity()).unwrap(), hm);
    }

    #[test]
    fn half_turn_about_center_reverses_indices() {
        let mut rng = RandomStream::new(8);
        let (k, h, w, s) = (3, 16, 12, 4);
        let vals = (0..k * h * w).map(|_| rng.next_f64()).collect();
        let hm = Heatmap::from_values(k, h, w, s, vals).unwrap();
        let center = (s as f64 * (w - 1) as f64 / 2.0, s as f64 * (h - 1) as f64 / 2.0);
        let a = AffineMap::new(180.0, 1.0, center).unwrap();
        let out = warp_heatmap(&hm, &a).unwrap();
        for c in 0..k {
            for y in 0..h {
                for x in 0..w {
                    let expect = hm.get(c, h - 1 - y, w - 1 - x);
                    assert!((out.get(c, y, x) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn argmax_transport_matches_point_transport() {
        let mut rng = RandomStream::new(21);
        let (ih, iw, s) = (64usize, 48usize, 4usize);
        for _ in 0..50 {
            let joints = (0..5)
                .map(|_| Joint::visible(rng.uniform(12.0, 36.0), rng.uniform(16.0, 48.0)))
                .collect();
            let hm = render_heatmaps(&KeypointSet::new(joints), (ih, iw), s, 2.0).unwrap();
            let a = AffineMap::new(
                rng.uniform(-30.0, 30.0),
                rng.uniform(0.75, 1.25),
                ((iw - 1) as f64 / 2.0, (ih - 1) as f64 / 2.0),
            )
            .unwrap();
            let decoded = decode_heatmaps(&hm);
            let moved = warp_points(&decoded, &a, (ih, iw));
            let warped = decode_heatmaps(&warp_heatmap(&hm, &a).unwrap());
            for (p, q) in moved.joints.iter().zip(&warped.joints) {
                if !p.is_visible() {
                    continue;
                }
                assert!((p.x / s as f64 - q.x / s as f64).abs() <= 1.0);
                assert!((p.y / s as f64 - q.y / s as f64).abs() <= 1.0);
            }
        }
    }
}
