//! Images as channel-first real-valued grids in [0, 1], plus PNG I/O.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};

/// A single RGB image, shape `(3, height, width)`, all values finite and
/// inside `[0, 1]`. Bit depth is normalized away at load time so losses are
/// scale-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
}

impl ImageTensor {
    /// Wraps a raw grid, enforcing the channel-count, finiteness and range
    /// invariants.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(Error::Image(format!(
                "expected 3 channels, got {}",
                data.shape()[0]
            )));
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::Image(
                "pixel values must be finite and within [0, 1]".into(),
            ));
        }
        Ok(ImageTensor { data })
    }

    /// Wraps a grid whose values may stray outside [0, 1], clamping them.
    pub fn from_unclamped(mut data: Array3<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Image("pixel values must be finite".into()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2])
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// Extracts the `size`×`size` square whose top-left corner is
    /// `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> Result<ImageTensor> {
        let (_, h, w) = self.shape();
        if row + size > h || col + size > w {
            return Err(Error::Shape(format!(
                "crop {size}x{size} at ({row}, {col}) exceeds image {h}x{w}"
            )));
        }
        let view = self
            .data
            .slice(ndarray::s![.., row..row + size, col..col + size]);
        Ok(ImageTensor {
            data: view.to_owned(),
        })
    }

    /// Reflect-pads the bottom/right edges so both spatial dims become
    /// multiples of `m`. Returns the padded image with the original size,
    /// for a later [`ImageTensor::crop_to`].
    pub fn pad_to_multiple(&self, m: usize) -> Result<(ImageTensor, usize, usize)> {
        let (c, h, w) = self.shape();
        let ph = h.div_ceil(m) * m;
        let pw = w.div_ceil(m) * m;
        if ph == h && pw == w {
            return Ok((self.clone(), h, w));
        }
        if ph - h >= h || pw - w >= w {
            return Err(Error::Shape(format!(
                "image {h}x{w} too small to reflect-pad to a multiple of {m}"
            )));
        }
        let mut out = Array3::<f64>::zeros((c, ph, pw));
        for ch in 0..c {
            for y in 0..ph {
                // reflect index without repeating the edge sample
                let sy = if y < h { y } else { 2 * h - 2 - y };
                for x in 0..pw {
                    let sx = if x < w { x } else { 2 * w - 2 - x };
                    out[[ch, y, x]] = self.data[[ch, sy, sx]];
                }
            }
        }
        Ok((ImageTensor { data: out }, h, w))
    }

    /// Top-left crop to `h`×`w` (undoes [`ImageTensor::pad_to_multiple`]).
    pub fn crop_to(&self, h: usize, w: usize) -> Result<ImageTensor> {
        let (_, ih, iw) = self.shape();
        if h > ih || w > iw {
            return Err(Error::Shape(format!(
                "cannot crop {ih}x{iw} image to {h}x{w}"
            )));
        }
        Ok(ImageTensor {
            data: self.data.slice(ndarray::s![.., ..h, ..w]).to_owned(),
        })
    }
}

/// Decodes an 8- or 16-bit RGB PNG into `[0, 1]` reals.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("cannot read {}: {e}", path.display())))?;
    let (data, h, w): (Vec<f64>, usize, usize) = match img {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (
                buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
                h,
                w,
            )
        }
        image::DynamicImage::ImageRgb16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            (
                buf.into_raw()
                    .into_iter()
                    .map(|v| v as f64 / 65535.0)
                    .collect(),
                h,
                w,
            )
        }
        other => {
            return Err(Error::Image(format!(
                "{}: unsupported layout {:?}; need 3-channel RGB at 8 or 16 bits",
                path.display(),
                other.color()
            )))
        }
    };
    // interleaved HWC -> planar CHW
    let mut planar = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                planar[[c, y, x]] = data[(y * w + x) * 3 + c];
            }
        }
    }
    ImageTensor::new(planar)
}

/// Writes an 8-bit RGB PNG; values are quantized with rounding, so a
/// save/load round trip moves each pixel by at most 1/255.
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let (_, h, w) = img.shape();
    let mut raw = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                raw.push((img.data[[c, y, x]] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(w as u32, h as u32, raw).expect("sized above");
    buf.save(path)
        .map_err(|e| Error::Image(format!("cannot write {}: {e}", path.display())))
}
