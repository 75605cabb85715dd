use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::AffineMap;

pub const CHANNELS: usize = 3;

/// Dense RGB raster with values in `[0, 1]`, stored row-major as `(y, x, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            pixels: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        let mut img = Self::zeros(height, width);
        img.pixels.fill(value.clamp(0.0, 1.0));
        img
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "expected {} values for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Mutable access for in-crate writers that maintain the `[0, 1]` range.
    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Writes a pixel, clamping each channel into `[0, 1]`.
    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * CHANNELS;
        for c in 0..CHANNELS {
            self.pixels[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Loads an 8-bit PNG (any colour type is converted to RGB).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rgb = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self::from_pixels(h as usize, w as usize, pixels)
    }

    /// Quantises to 8 bits per channel (round half up) and writes a PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let raw = self.to_rgb8();
        image::save_buffer(
            path,
            &raw,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize_u8(v)).collect()
    }

    /// Rounds every value to the nearest multiple of 1/255, so a PNG round trip is lossless.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.pixels {
            *v = f64::from(quantize_u8(*v)) / 255.0;
        }
        self
    }
}

#[inline]
fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Bilinear sample of one interleaved plane set; neighbours outside the raster read as 0.
#[inline]
pub(crate) fn bilinear_accumulate(
    src: &[f64],
    height: usize,
    width: usize,
    planes: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
        return;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (tx, ty, w) in taps {
        if tx < 0 || ty < 0 || tx >= width as i64 || ty >= height as i64 || w == 0.0 {
            continue;
        }
        let base = (ty as usize * width + tx as usize) * planes;
        for (c, o) in out.iter_mut().enumerate() {
            *o += w * src[base + c];
        }
    }
}

/// Warps `img` by `a` into a raster of `out_size = (height, width)`.
///
/// Each destination pixel samples the source at `a⁻¹(dst)` bilinearly; samples
/// that fall outside the source read zero.
pub fn warp_image(img: &Image, a: &AffineMap, out_size: (usize, usize)) -> Result<Image> {
    let (oh, ow) = out_size;
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidParameter("output size must be positive".into()));
    }
    let inv = a.invert()?;
    let mut out = Image::zeros(oh, ow);
    let mut px = [0.0; CHANNELS];
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            bilinear_accumulate(&img.pixels, img.height, img.width, CHANNELS, sx, sy, &mut px);
            let i = (y * ow + x) * CHANNELS;
            for c in 0..CHANNELS {
                out.pixels[i + c] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
