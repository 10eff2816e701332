use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which value range an [`ImageBuffer`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    /// Intensities in `[-1, 1]`; what networks consume and produce.
    Model,
    /// Intensities in `[0, 255]`; what files hold.
    Stored,
}

impl Convention {
    fn range(self) -> (f32, f32) {
        match self {
            Convention::Model => (-1.0, 1.0),
            Convention::Stored => (0.0, 255.0),
        }
    }
}

/// Channel-major pixel buffer (`values[(c * height + y) * width + x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    convention: Convention,
    values: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        convention: Convention,
        values: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("image size {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Invalid(format!("{channels} channels (expected 1 or 3)")));
        }
        if values.len() != width * height * channels {
            return Err(Error::SizeMismatch(format!(
                "{} values for a {width}x{height}x{channels} image",
                values.len()
            )));
        }
        let (lo, hi) = convention.range();
        if let Some(bad) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::Invalid(format!(
                "pixel value {bad} outside {convention:?} range [{lo}, {hi}]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            convention,
            values,
        })
    }

    /// Image filled with the lowest value of the convention (black).
    pub fn black(width: usize, height: usize, channels: usize, convention: Convention) -> Self {
        let lo = convention.range().0;
        Self::new(width, height, channels, convention, vec![lo; width * height * channels])
            .expect("black image is valid")
    }

    pub fn filled(width: usize, height: usize, channels: usize, convention: Convention, v: f32) -> Result<Self> {
        Self::new(width, height, channels, convention, vec![v; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn convention(&self) -> Convention {
        self.convention
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// Sets a pixel, clamping into the convention's range.
    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let (lo, hi) = self.convention.range();
        self.values[(c * self.height + y) * self.width + x] = v.clamp(lo, hi);
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_model(&self) -> ImageBuffer {
        match self.convention {
            Convention::Model => self.clone(),
            Convention::Stored => ImageBuffer {
                convention: Convention::Model,
                values: self.values.iter().map(|&v| (v / 127.5 - 1.0).clamp(-1.0, 1.0)).collect(),
                ..*self
            },
        }
    }

    /// Converts to `[0, 255]`, quantizing to integer levels.
    pub fn to_stored(&self) -> ImageBuffer {
        match self.convention {
            Convention::Stored => self.clone(),
            Convention::Model => ImageBuffer {
                convention: Convention::Stored,
                values: self
                    .values
                    .iter()
                    .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0))
                    .collect(),
                ..*self
            },
        }
    }

    /// Model-convention tensor of shape `[channels, height, width]`.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let model = self.to_model();
        Tensor::from_vec(
            &[self.channels, self.height, self.width],
            model.values.iter().map(|&v| S::of(v as f64)).collect(),
        )
    }

    /// Model-convention image from a `[c, h, w]` tensor, clamping into `[-1, 1]`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        let (c, h, w) = t.chw();
        let values = t
            .data()
            .iter()
            .map(|v| (v.to_f64_lossy() as f32).clamp(-1.0, 1.0))
            .collect();
        Self::new(w, h, c, Convention::Model, values)
    }

    /// Single-channel luminance (channel mean), same convention.
    pub fn luminance(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let plane = self.width * self.height;
        let values = (0..plane)
            .map(|i| (self.values[i] + self.values[plane + i] + self.values[2 * plane + i]) / 3.0)
            .collect();
        ImageBuffer {
            channels: 1,
            values,
            ..*self
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let stored = self.to_stored();
        let (w, h) = (self.width as u32, self.height as u32);
        let plane = self.width * self.height;
        let mut out = Vec::new();
        let dynamic = if self.channels == 1 {
            let bytes: Vec<u8> = stored.values.iter().map(|&v| v as u8).collect();
            image::DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, bytes).expect("buffer size checked"),
            )
        } else {
            let mut bytes = Vec::with_capacity(plane * 3);
            for i in 0..plane {
                for c in 0..3 {
                    bytes.push(stored.values[c * plane + i] as u8);
                }
            }
            image::DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, bytes).expect("buffer size checked"),
            )
        };
        dynamic
            .write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out)
    }

    /// Decodes PNG bytes into a stored-convention buffer. Gray images stay
    /// single-channel; everything else becomes RGB.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(g) => Self::new(
                w,
                h,
                1,
                Convention::Stored,
                g.into_raw().into_iter().map(f32::from).collect(),
            ),
            other => {
                let rgb = other.to_rgb8().into_raw();
                let plane = w * h;
                let mut values = vec![0.0; plane * 3];
                for i in 0..plane {
                    for c in 0..3 {
                        values[c * plane + i] = rgb[i * 3 + c] as f32;
                    }
                }
                Self::new(w, h, 3, Convention::Stored, values)
            }
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.encode_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_png(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(ImageBuffer::new(0, 1, 1, Convention::Model, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, Convention::Model, vec![1.5]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, Convention::Stored, vec![-1.0]).is_err());
        assert!(ImageBuffer::new(1, 1, 2, Convention::Stored, vec![0.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn stored_model_roundtrip_is_exact_on_integer_levels(levels in prop::collection::vec(0u8..=255, 12)) {
            let img = ImageBuffer::new(2, 2, 3, Convention::Stored, levels.iter().map(|&v| v as f32).collect()).unwrap();
            prop_assert_eq!(img.to_model().to_stored(), img.clone());
            let decoded = ImageBuffer::decode_png(&img.encode_png().unwrap()).unwrap();
            prop_assert_eq!(decoded, img);
        }

        #[test]
        fn model_roundtrip_error_is_within_half_a_level(vals in prop::collection::vec(-1.0f32..=1.0, 4)) {
            let img = ImageBuffer::new(2, 2, 1, Convention::Model, vals.clone()).unwrap();
            let back = img.to_stored().to_model();
            for (a, b) in back.values().iter().zip(&vals) {
                prop_assert!((a - b).abs() <= 0.5 / 127.5 + 1e-6);
            }
        }
    }
}
