use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image with planar channel layout and values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    /// `3 x height x width`, channel-major.
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "frame {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; 3 * height * width] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 3, self.height, self.width], self.data.clone()).expect("frame invariant")
    }

    /// First image of a `[N, 3, H, W]` tensor (or the `index`-th).
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if c != 3 || index >= n {
            return Err(Error::Shape(format!("cannot take frame {index} of {:?}", t.shape())));
        }
        let plane = 3 * h * w;
        Frame::new(h, w, t.data()[index * plane..(index + 1) * plane].to_vec())
    }

    /// Window of this frame.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Frame::new(height, width, data)
    }

    /// Pixel-wise mean of two frames.
    pub fn average(&self, other: &Frame) -> Result<Frame> {
        if self.dims() != other.dims() {
            return Err(Error::Shape("cannot average frames of different size".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| 0.5 * (a + b)).collect();
        Frame::new(self.height, self.width, data)
    }

    pub fn mse(&self, other: &Frame) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "frames differ in size: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let n = self.data.len() as f64;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }

    /// Clamp to `[0, 1]` and quantize with round-half-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                out.push(quantize(self.data[c * plane + p]));
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * height * width {
            return Err(Error::Shape("RGB buffer does not match dimensions".into()));
        }
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (p, px) in bytes.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = px[c] as f64 / 255.0;
            }
        }
        Frame::new(height, width, data)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), message: e.to_string() }
}

fn check_format(path: &Path) -> Result<ImageFormat> {
    match ImageFormat::from_path(path) {
        Ok(ImageFormat::Png) => Ok(ImageFormat::Png),
        Ok(f) => Err(image_error(path, format!("unsupported format {f:?}; use lossless PNG"))),
        Err(e) => Err(image_error(path, e)),
    }
}

/// Decodes an 8-bit RGB image and normalizes it to `[0, 1]`.
pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let format = check_format(path)?;
    let bytes = std::fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| image_error(path, e))?;
    let rgb = img.to_rgb8();
    Frame::from_rgb8(rgb.height() as usize, rgb.width() as usize, rgb.as_raw())
}

/// Clamps, quantizes (round-half-up) and encodes as PNG.
pub fn write_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = check_format(path)?;
    let img = RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.to_bytes())
        .ok_or_else(|| image_error(path, "buffer size mismatch"))?;
    img.save_with_format(path, format).map_err(|e| image_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(7.0), 255);
    }

    #[test]
    fn png_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..5 * 7 * 3).map(|i| ((i * 97 + 13) % 256) as u8).collect();
        let f = Frame::from_rgb8(5, 7, &bytes).unwrap();
        let p = dir.path().join("x.png");
        write_frame(&f, &p).unwrap();
        let g = read_frame(&p).unwrap();
        assert_eq!(g.to_bytes(), bytes);
        assert_eq!(g, f);
        let p2 = dir.path().join("y.png");
        write_frame(&g, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn unsupported_format_rejected() {
        let f = Frame::filled(2, 2, 0.5);
        assert!(matches!(write_frame(&f, "/tmp/x.jpg"), Err(Error::Image { .. })));
        assert!(read_frame("/nonexistent/a.png").is_err());
    }

    #[test]
    fn crop_and_tensor() {
        let f = Frame::new(2, 3, (0..18).map(f64::from).collect()).unwrap();
        let c = f.crop(1, 1, 1, 2).unwrap();
        assert_eq!(c.data, vec![4.0, 5.0, 10.0, 11.0, 16.0, 17.0]);
        let back = Frame::from_tensor(&f.to_tensor(), 0).unwrap();
        assert_eq!(back, f);
    }
}
