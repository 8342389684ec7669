//! ROI geometry and the image operations applied to second-view crops.

use std::path::Path;

use crate::domain::{BBox, ImageBuf};
use crate::error::{Error, Result};

/// The ROI plus its δ- and 2δ-grown variants, clamped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpandedBoxes {
    pub boxes: [BBox; 3],
    pub delta: u32,
}

pub fn expand_roi(roi: BBox, delta: u32, image_dims: (u32, u32)) -> Result<ExpandedBoxes> {
    let (width, height) = image_dims;
    let roi = roi.validate_within(width, height)?;
    let d = delta as i64;
    Ok(ExpandedBoxes {
        boxes: [
            roi,
            roi.grow(d).clamp(width, height),
            roi.grow(2 * d).clamp(width, height),
        ],
        delta,
    })
}

/// Crops `bbox` out of `image` and resamples it to `target` with bilinear
/// interpolation on pixel centers. Samples never leave the box.
pub fn crop_resize(image: &ImageBuf, bbox: BBox, target: (u32, u32)) -> Result<ImageBuf> {
    let bbox = bbox.validate_within(image.width(), image.height())?;
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize target must be at least 1x1, got {tw}x{th}"
        )));
    }
    let xs = axis_samples(bbox.x1, bbox.width(), tw);
    let ys = axis_samples(bbox.y1, bbox.height(), th);
    let mut out = ImageBuf::filled(tw, th, [0, 0, 0])?;
    for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = image.pixel(x0, y0);
            let p10 = image.pixel(x1, y0);
            let p01 = image.pixel(x0, y1);
            let p11 = image.pixel(x1, y1);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                rgb[c] = to_u8(top * (1.0 - fy) + bottom * fy);
            }
            out.put_pixel(dx as u32, dy as u32, rgb);
        }
    }
    Ok(out)
}

/// Source neighbours and weight for every destination index along one axis.
fn axis_samples(start: i64, len: i64, target: u32) -> Vec<(u32, u32, f64)> {
    let scale = len as f64 / target as f64;
    let last = (len - 1) as f64;
    (0..target)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor();
            let hi = (lo + 1.0).min(last);
            let frac = src - lo;
            ((start + lo as i64) as u32, (start + hi as i64) as u32, frac)
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Discrete Gaussian truncated at `ceil(3σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub sigma: f64,
    pub radius: usize,
    /// Normalized 1-D taps, index 0 is offset `-radius`.
    pub taps: Vec<f64>,
}

impl BlurKernel {
    pub fn new(sigma: f64) -> Self {
        if sigma <= 0.0 {
            return Self {
                sigma: 0.0,
                radius: 0,
                taps: vec![1.0],
            };
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let r = radius as i64;
        let raw: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Self {
            sigma,
            radius,
            taps: raw.into_iter().map(|w| w / total).collect(),
        }
    }

    /// The separable kernel as a full 2-D weight grid.
    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.taps
            .iter()
            .map(|wy| self.taps.iter().map(|wx| wy * wx).collect())
            .collect()
    }
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma == 0` returns
/// the input unchanged.
pub fn gaussian_blur(image: &ImageBuf, sigma: f64) -> ImageBuf {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = BlurKernel::new(sigma);
    let (w, h) = (image.width() as usize, image.height() as usize);
    let r = kernel.radius as i64;
    let src = image.pixels();

    let mut horizontal = vec![0.0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, weight) in kernel.taps.iter().enumerate() {
                    let sx = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += weight * src[(y * w + sx) * 3 + c] as f64;
                }
                horizontal[(y * w + x) * 3 + c] = acc;
            }
        }
    }

    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (t, weight) in kernel.taps.iter().enumerate() {
                    let sy = (y as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += weight * horizontal[(sy * w + x) * 3 + c];
                }
                out[(y * w + x) * 3 + c] = to_u8(acc);
            }
        }
    }
    ImageBuf::new(image.width(), image.height(), out).expect("dimensions unchanged")
}

/// Crop, resize and (optionally) blur one expanded box of a ROI.
pub fn second_view(image: &ImageBuf, bbox: BBox, target: (u32, u32), sigma: f64) -> Result<ImageBuf> {
    let resized = crop_resize(image, bbox, target)?;
    Ok(gaussian_blur(&resized, sigma))
}

pub fn read_png(path: &Path) -> Result<ImageBuf> {
    let unsupported = |reason: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(image::ImageFormat::Png) {
        return Err(unsupported("not a PNG file".into()));
    }
    let decoded = reader.decode().map_err(|e| unsupported(e.to_string()))?;
    match decoded {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            ImageBuf::new(w, h, buf.into_raw())
        }
        other => Err(unsupported(format!("expected 8-bit RGB, found {:?}", other.color()))),
    }
}

pub fn write_png(image: &ImageBuf, path: &Path) -> Result<()> {
    image::save_buffer_with_format(
        path,
        image.pixels(),
        image.width(),
        image.height(),
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}
