use crate::augment::{AugKind, SCALE_RANGE};
use crate::error::{Error, Result};
use crate::geometry::{AffineMap, Image, KeypointSet, CHANNELS};
use crate::rng::RandomStream;

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn square(x0: i64, y0: i64, size: usize) -> Self {
        Self {
            x0,
            y0,
            x1: x0 + size as i64,
            y1: y0 + size as i64,
        }
    }

    /// The `size × size` square whose pixel-centre midpoint is nearest to `center`.
    pub fn centered(center: (f64, f64), size: usize) -> Self {
        let half = (size as f64 - 1.0) / 2.0;
        Self::square(
            (center.0 - half).round() as i64,
            (center.1 - half).round() as i64,
            size,
        )
    }

    pub fn clip(&self, height: usize, width: usize) -> Self {
        Self {
            x0: self.x0.clamp(0, width as i64),
            y0: self.y0.clamp(0, height as i64),
            x1: self.x1.clamp(0, width as i64),
            y1: self.y1.clamp(0, height as i64),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn area(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            ((self.x1 - self.x0) * (self.y1 - self.y0)) as usize
        }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1 - 1) as f64 / 2.0,
            (self.y0 + self.y1 - 1) as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatchSource {
    Zero,
    /// Donor pixels whose top-left corner aligns with the destination's top-left corner.
    Donor { x0: i64, y0: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchEntry {
    pub kind: AugKind,
    /// Destination rectangle after clipping.
    pub dest: Rect,
    pub source: PatchSource,
    /// Placement centre before clipping, for joint-centred patches.
    pub center: Option<(f64, f64)>,
    /// Joint the placement centre was jittered from.
    pub anchor: Option<(f64, f64)>,
}

/// Rectangles written by one operation, in write order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatchLog {
    pub entries: Vec<PatchEntry>,
    /// Set when a joint-aware op had no joints and used its joint-free counterpart.
    pub fallback: bool,
}

fn fill_zero(img: &mut Image, r: &Rect) {
    let w = img.width();
    let px = img.pixels_mut();
    for y in r.y0..r.y1 {
        let row = y as usize * w;
        px[(row + r.x0 as usize) * CHANNELS..(row + r.x1 as usize) * CHANNELS].fill(0.0);
    }
}

fn copy_patch(img: &mut Image, donor: &Image, dest: &Rect, src_x0: i64, src_y0: i64) {
    let w = img.width();
    let span = (dest.x1 - dest.x0) as usize * CHANNELS;
    let dpx = donor.pixels();
    let out = img.pixels_mut();
    for (dy, sy) in (dest.y0..dest.y1).zip(src_y0..) {
        let d = (dy as usize * w + dest.x0 as usize) * CHANNELS;
        let s = (sy as usize * w + src_x0 as usize) * CHANNELS;
        out[d..d + span].copy_from_slice(&dpx[s..s + span]);
    }
}

fn uniform_corner(rng: &mut RandomStream, extent: usize, size: usize) -> i64 {
    rng.below(extent.saturating_sub(size) + 1) as i64
}

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidInput(format!(
            "donor dimensions {:?} differ from image dimensions {:?}",
            b.dims(),
            a.dims()
        )));
    }
    Ok(())
}

/// Zeroes `n` random `size × size` squares (clipped to the raster).
pub fn apply_cutout(img: &Image, rng: &mut RandomStream, n: usize, size: usize) -> (Image, PatchLog) {
    cutout_as(img, rng, n, size, AugKind::Cutout)
}

fn cutout_as(
    img: &Image,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
    kind: AugKind,
) -> (Image, PatchLog) {
    let (h, w) = img.dims();
    let mut out = img.clone();
    let mut log = PatchLog::default();
    for _ in 0..n {
        let x0 = uniform_corner(rng, w, size);
        let y0 = uniform_corner(rng, h, size);
        let dest = Rect::square(x0, y0, size).clip(h, w);
        fill_zero(&mut out, &dest);
        log.entries.push(PatchEntry {
            kind,
            dest,
            source: PatchSource::Zero,
            center: None,
            anchor: None,
        });
    }
    (out, log)
}

/// Pastes `n` random donor squares at random destinations.
pub fn apply_cutmix(
    img: &Image,
    donor: &Image,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
) -> Result<(Image, PatchLog)> {
    check_same_dims(img, donor)?;
    Ok(cutmix_as(img, donor, rng, n, size, AugKind::CutMix))
}

fn cutmix_as(
    img: &Image,
    donor: &Image,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
    kind: AugKind,
) -> (Image, PatchLog) {
    let (h, w) = img.dims();
    let mut out = img.clone();
    let mut log = PatchLog::default();
    for _ in 0..n {
        let sx = uniform_corner(rng, w, size);
        let sy = uniform_corner(rng, h, size);
        let dx = uniform_corner(rng, w, size);
        let dy = uniform_corner(rng, h, size);
        let (dest, src) = clip_pair(Rect::square(sx, sy, size), Rect::square(dx, dy, size), h, w);
        if !dest.is_empty() {
            copy_patch(&mut out, donor, &dest, src.0, src.1);
        }
        log.entries.push(PatchEntry {
            kind,
            dest,
            source: PatchSource::Donor { x0: src.0, y0: src.1 },
            center: None,
            anchor: None,
        });
    }
    (out, log)
}

/// Clips a source/destination pair of equal-size squares so both stay inside the raster.
/// Returns the clipped destination and the matching source top-left corner.
fn clip_pair(src: Rect, dst: Rect, h: usize, w: usize) -> (Rect, (i64, i64)) {
    let size_x = src.x1 - src.x0;
    let size_y = src.y1 - src.y0;
    let c0 = 0.max(-src.x0).max(-dst.x0);
    let c1 = size_x.min(w as i64 - src.x0).min(w as i64 - dst.x0);
    let r0 = 0.max(-src.y0).max(-dst.y0);
    let r1 = size_y.min(h as i64 - src.y0).min(h as i64 - dst.y0);
    if c1 <= c0 || r1 <= r0 {
        let empty = Rect {
            x0: dst.x0.clamp(0, w as i64),
            y0: dst.y0.clamp(0, h as i64),
            x1: dst.x0.clamp(0, w as i64),
            y1: dst.y0.clamp(0, h as i64),
        };
        return (empty, (src.x0, src.y0));
    }
    (
        Rect {
            x0: dst.x0 + c0,
            y0: dst.y0 + r0,
            x1: dst.x0 + c1,
            y1: dst.y0 + r1,
        },
        (src.x0 + c0, src.y0 + r0),
    )
}

/// Pixel-wise `lambda * img + (1 - lambda) * donor`.
pub fn apply_mixup(img: &Image, donor: &Image, lambda: f64) -> Result<Image> {
    check_same_dims(img, donor)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "mix weight must lie in [0, 1], got {lambda}"
        )));
    }
    let mut out = img.clone();
    for (o, &d) in out.pixels_mut().iter_mut().zip(donor.pixels()) {
        *o = (lambda * *o + (1.0 - lambda) * d).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Picks `n` anchors: without replacement when enough are available, with replacement otherwise.
fn pick_anchors(points: &[(f64, f64)], n: usize, rng: &mut RandomStream) -> Vec<(f64, f64)> {
    if points.len() >= n {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        // partial Fisher–Yates
        for i in 0..n {
            let j = i + rng.below(idx.len() - i);
            idx.swap(i, j);
        }
        idx[..n].iter().map(|&i| points[i]).collect()
    } else {
        (0..n).map(|_| points[rng.below(points.len())]).collect()
    }
}

fn jittered(anchor: (f64, f64), jitter: f64, rng: &mut RandomStream) -> (f64, f64) {
    if jitter > 0.0 {
        (
            anchor.0 + rng.uniform(-jitter, jitter),
            anchor.1 + rng.uniform(-jitter, jitter),
        )
    } else {
        anchor
    }
}

/// Zeroes `n` squares centred near visible or predicted joints (jitter `size / 4`).
pub fn apply_joint_cutout(
    img: &Image,
    joints: &KeypointSet,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
) -> (Image, PatchLog) {
    apply_joint_cutout_with_jitter(img, joints, rng, n, size, size as f64 / 4.0)
}

pub fn apply_joint_cutout_with_jitter(
    img: &Image,
    joints: &KeypointSet,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
    jitter: f64,
) -> (Image, PatchLog) {
    let points = joints.usable_points();
    if n > 0 && points.is_empty() {
        let (out, mut log) = cutout_as(img, rng, n, size, AugKind::JointCutout);
        log.fallback = true;
        return (out, log);
    }
    let (h, w) = img.dims();
    let mut out = img.clone();
    let mut log = PatchLog::default();
    for anchor in pick_anchors(&points, n, rng) {
        let center = jittered(anchor, jitter, rng);
        let dest = Rect::centered(center, size).clip(h, w);
        if !dest.is_empty() {
            fill_zero(&mut out, &dest);
        }
        log.entries.push(PatchEntry {
            kind: AugKind::JointCutout,
            dest,
            source: PatchSource::Zero,
            center: Some(center),
            anchor: Some(anchor),
        });
    }
    (out, log)
}

/// Pastes `n` donor squares centred near donor joints onto squares centred near target joints.
pub fn apply_joint_cutocclude(
    img: &Image,
    joints: &KeypointSet,
    donor: &Image,
    donor_joints: &KeypointSet,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
) -> Result<(Image, PatchLog)> {
    apply_joint_cutocclude_with_jitter(img, joints, donor, donor_joints, rng, n, size, size as f64 / 4.0)
}

#[allow(clippy::too_many_arguments)]
pub fn apply_joint_cutocclude_with_jitter(
    img: &Image,
    joints: &KeypointSet,
    donor: &Image,
    donor_joints: &KeypointSet,
    rng: &mut RandomStream,
    n: usize,
    size: usize,
    jitter: f64,
) -> Result<(Image, PatchLog)> {
    check_same_dims(img, donor)?;
    let sources = donor_joints.usable_points();
    if n > 0 && sources.is_empty() {
        let (out, mut log) = cutmix_as(img, donor, rng, n, size, AugKind::JointCutOcclude);
        log.fallback = true;
        return Ok((out, log));
    }
    let (h, w) = img.dims();
    let targets = joints.usable_points();
    let mut out = img.clone();
    let mut log = PatchLog::default();
    let src_anchors = pick_anchors(&sources, n, rng);
    let dst_anchors = if targets.is_empty() {
        None
    } else {
        Some(pick_anchors(&targets, n, rng))
    };
    for i in 0..n {
        let src_center = jittered(src_anchors[i], jitter, rng);
        let src = Rect::centered(src_center, size);
        let (dst, center, anchor) = match &dst_anchors {
            Some(anchors) => {
                let c = jittered(anchors[i], jitter, rng);
                (Rect::centered(c, size), Some(c), Some(anchors[i]))
            }
            None => {
                log.fallback = true;
                let x0 = uniform_corner(rng, w, size);
                let y0 = uniform_corner(rng, h, size);
                (Rect::square(x0, y0, size), None, None)
            }
        };
        let (dest, s) = clip_pair(src, dst, h, w);
        if !dest.is_empty() {
            copy_patch(&mut out, donor, &dest, s.0, s.1);
        }
        log.entries.push(PatchEntry {
            kind: AugKind::JointCutOcclude,
            dest,
            source: PatchSource::Donor { x0: s.0, y0: s.1 },
            center,
            anchor,
        });
    }
    Ok((out, log))
}

/// Draws rotation uniformly in `(-range, range)` and scale in `[0.75, 1.25]`, pivoting on `center`.
pub fn sample_affine(kind: AugKind, rng: &mut RandomStream, center: (f64, f64)) -> Result<AffineMap> {
    let range = match kind {
        AugKind::A30 => 30.0,
        AugKind::A60 => 60.0,
        AugKind::A90 => 90.0,
        other => {
            return Err(Error::InvalidParameter(format!(
                "{other} is not an affine augmentation"
            )))
        }
    };
    sample_affine_range(range, rng, center)
}

pub fn sample_affine_range(
    range_deg: f64,
    rng: &mut RandomStream,
    center: (f64, f64),
) -> Result<AffineMap> {
    let rotation = rng.uniform(-range_deg, range_deg);
    let scale = rng.uniform(SCALE_RANGE.0, SCALE_RANGE.1);
    AffineMap::new(rotation, scale, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Joint;

    fn positive_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = RandomStream::new(seed);
        let px = (0..h * w * 3).map(|_| rng.uniform(0.05, 1.0)).collect();
        Image::from_pixels(h, w, px).unwrap()
    }

    fn changed(a: &Image, b: &Image) -> Vec<(i64, i64)> {
        let mut out = vec![];
        for y in 0..a.height() {
            for x in 0..a.width() {
                if a.pixel(y, x) != b.pixel(y, x) {
                    out.push((x as i64, y as i64));
                }
            }
        }
        out
    }

    #[test]
    fn cutout_logs_and_zeroes() {
        let img = positive_image(256, 192, 1);
        let mut rng = RandomStream::new(2);
        let (out, log) = apply_cutout(&img, &mut rng, 5, 20);
        assert_eq!(log.entries.len(), 5);
        assert!(!log.fallback);
        let diff = changed(&img, &out);
        assert!(diff.len() <= 5 * 400);
        for (x, y) in diff {
            assert!(log.entries.iter().any(|e| e.dest.contains(x, y)));
        }
        for e in &log.entries {
            assert_eq!(e.dest.area(), 400);
            assert_eq!(out.get(e.dest.y0 as usize, e.dest.x0 as usize, 1), 0.0);
        }
    }

    #[test]
    fn zero_patches_leave_image_unchanged() {
        let img = positive_image(32, 24, 3);
        let mut rng = RandomStream::new(4);
        assert_eq!(apply_cutout(&img, &mut rng, 0, 20).0, img);
        let k = KeypointSet::new(vec![Joint::visible(5.0, 5.0)]);
        assert_eq!(apply_joint_cutout(&img, &k, &mut rng, 0, 20).0, img);
    }

    #[test]
    fn oversize_patch_is_clipped() {
        let img = positive_image(8, 6, 5);
        let mut rng = RandomStream::new(6);
        let (out, log) = apply_cutout(&img, &mut rng, 1, 20);
        assert_eq!(log.entries[0].dest, Rect { x0: 0, y0: 0, x1: 6, y1: 8 });
        assert!(out.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cutmix_pastes_donor_crops() {
        let img = positive_image(64, 48, 7);
        let donor = positive_image(64, 48, 8);
        let mut rng = RandomStream::new(9);
        let (out, log) = apply_cutmix(&img, &donor, &mut rng, 2, 20).unwrap();
        assert_eq!(log.entries.len(), 2);
        let last = log.entries.last().unwrap();
        let PatchSource::Donor { x0, y0 } = last.source else { panic!() };
        for y in last.dest.y0..last.dest.y1 {
            for x in last.dest.x0..last.dest.x1 {
                let (sx, sy) = (x0 + x - last.dest.x0, y0 + y - last.dest.y0);
                assert_eq!(out.pixel(y as usize, x as usize), donor.pixel(sy as usize, sx as usize));
            }
        }
    }

    #[test]
    fn cutmix_rejects_dimension_mismatch() {
        let mut rng = RandomStream::new(0);
        let r = apply_cutmix(&positive_image(8, 8, 0), &positive_image(8, 9, 0), &mut rng, 1, 2);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mixup_closed_forms() {
        let a = Image::filled(4, 5, 0.2);
        let b = Image::filled(4, 5, 0.6);
        assert_eq!(apply_mixup(&a, &b, 1.0).unwrap(), a);
        assert_eq!(apply_mixup(&a, &b, 0.0).unwrap(), b);
        let m = apply_mixup(&a, &b, 0.5).unwrap();
        assert!(m.pixels().iter().all(|&v| (v - 0.4).abs() < 1e-12));
        assert!(apply_mixup(&a, &b, 1.5).is_err());
    }

    #[test]
    fn joint_cutout_centres_near_joints() {
        let img = positive_image(256, 192, 10);
        let k = KeypointSet::new(
            (0..17)
                .map(|i| Joint::visible(20.0 + 8.0 * i as f64, 30.0 + 11.0 * i as f64))
                .collect(),
        );
        let mut rng = RandomStream::new(11);
        let (_, log) = apply_joint_cutout(&img, &k, &mut rng, 5, 20);
        assert_eq!(log.entries.len(), 5);
        let bound = 20.0 / 4.0 * 2f64.sqrt() + 0.5;
        for e in &log.entries {
            let c = Rect::centered(e.center.unwrap(), 20).center();
            let near = k.joints.iter().any(|j| ((c.0 - j.x).powi(2) + (c.1 - j.y).powi(2)).sqrt() <= bound);
            assert!(near);
        }
    }

    #[test]
    fn joint_cutout_without_joints_falls_back() {
        let img = positive_image(32, 24, 12);
        let mut rng = RandomStream::new(13);
        let (_, log) = apply_joint_cutout(&img, &KeypointSet::default(), &mut rng, 3, 5);
        assert!(log.fallback);
        assert_eq!(log.entries.len(), 3);
    }

    #[test]
    fn few_joints_are_reused() {
        let img = positive_image(32, 24, 14);
        let k = KeypointSet::new(vec![Joint::visible(10.0, 10.0), Joint::invisible()]);
        let mut rng = RandomStream::new(15);
        let (_, log) = apply_joint_cutout(&img, &k, &mut rng, 4, 5);
        assert!(log.entries.iter().all(|e| e.anchor == Some((10.0, 10.0))));
    }

    #[test]
    fn self_paste_with_matching_joint_is_identity() {
        let img = positive_image(40, 30, 16);
        let k = KeypointSet::new(vec![Joint::visible(12.0, 17.0)]);
        let mut rng = RandomStream::new(17);
        let (out, log) =
            apply_joint_cutocclude_with_jitter(&img, &k, &img, &k, &mut rng, 2, 8, 0.0).unwrap();
        assert_eq!(out, img);
        assert_eq!(log.entries.len(), 2);
    }

    #[test]
    fn joint_cutocclude_without_donor_joints_falls_back() {
        let img = positive_image(40, 30, 18);
        let k = KeypointSet::new(vec![Joint::visible(12.0, 17.0)]);
        let mut rng = RandomStream::new(19);
        let (_, log) =
            apply_joint_cutocclude(&img, &k, &img, &KeypointSet::default(), &mut rng, 2, 8).unwrap();
        assert!(log.fallback);
    }

    #[test]
    fn clip_pair_keeps_both_sides_in_bounds() {
        let (dest, src) = clip_pair(Rect::square(-3, 5, 6), Rect::square(6, -2, 6), 10, 10);
        assert_eq!(dest, Rect { x0: 9, y0: 0, x1: 10, y1: 3 });
        assert_eq!(src, (0, 7));
    }

    #[test]
    fn affine_draws_respect_ranges() {
        let mut rng = RandomStream::new(20);
        for _ in 0..10_000 {
            let a = sample_affine(AugKind::A30, &mut rng, (23.5, 31.5)).unwrap();
            assert!(a.rotation_deg > -30.0 - 1e-12 && a.rotation_deg < 30.0);
            assert!((0.75..=1.25).contains(&a.scale));
        }
        for _ in 0..1000 {
            let a = sample_affine(AugKind::A90, &mut rng, (0.0, 0.0)).unwrap();
            assert!(a.rotation_deg.abs() < 90.0 + 1e-12);
        }
        let mut r1 = RandomStream::new(5);
        let mut r2 = RandomStream::new(5);
        assert_eq!(
            sample_affine(AugKind::A60, &mut r1, (1.0, 2.0)).unwrap(),
            sample_affine(AugKind::A60, &mut r2, (1.0, 2.0)).unwrap()
        );
        assert!(sample_affine(AugKind::Cutout, &mut r1, (0.0, 0.0)).is_err());
    }
}
