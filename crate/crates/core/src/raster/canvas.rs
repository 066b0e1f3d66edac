use std::io::Cursor;
use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb, Rgba};
use serde::{Deserialize, Serialize};

use super::RasterError;

/// Row-major `H×W×C` float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl Canvas {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self, RasterError> {
        Self::filled(width, height, &vec![0.0; channels])
    }

    /// Canvas with every pixel set to `color` (its length sets the channel count).
    pub fn filled(width: usize, height: usize, color: &[f64]) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyCanvas { width, height });
        }
        if !matches!(color.len(), 1 | 3 | 4) {
            return Err(RasterError::Channels(color.len()));
        }
        let mut data = Vec::with_capacity(width * height * color.len());
        for _ in 0..width * height {
            data.extend_from_slice(color);
        }
        Ok(Self {
            width,
            height,
            channels: color.len(),
            data,
        })
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyCanvas { width, height });
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(RasterError::Channels(channels));
        }
        if data.len() != width * height * channels {
            return Err(RasterError::ShapeMismatch {
                expected: (height, width, channels),
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn same_shape(&self, other: &Canvas) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn zeros_like(&self) -> Canvas {
        Canvas {
            data: vec![0.0; self.data.len()],
            ..*self
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Per-pixel mean over channels.
    pub fn to_gray(&self) -> Canvas {
        let data = self
            .data
            .chunks(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect();
        Canvas {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Converts to `channels` channels: gray is replicated, alpha is dropped or
    /// set to 1.
    pub fn with_channels(&self, channels: usize) -> Result<Canvas, RasterError> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(self.width * self.height * channels);
        for px in self.data.chunks(self.channels) {
            let rgb = match self.channels {
                1 => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            match channels {
                1 => data.push((rgb[0] + rgb[1] + rgb[2]) / 3.0),
                3 => data.extend_from_slice(&rgb),
                4 => {
                    data.extend_from_slice(&rgb);
                    data.push(if self.channels == 4 { px[3] } else { 1.0 });
                }
                c => return Err(RasterError::Channels(c)),
            }
        }
        Canvas::from_data(self.width, self.height, channels, data)
    }

    pub fn mean_abs_diff(&self, other: &Canvas) -> f64 {
        assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Canvas, RasterError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Self::from_image(&img))
    }

    /// Loads a PNG keeping its channel layout (gray, RGB or RGBA).
    pub fn load_png(path: impl AsRef<Path>) -> Result<Canvas, RasterError> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_image(&img))
    }

    /// Loads a PNG resampled to `width × height`.
    pub fn load_png_resized(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Canvas, RasterError> {
        let img = image::open(path.as_ref())?;
        if img.width() as usize == width && img.height() as usize == height {
            return Ok(Self::from_image(&img));
        }
        let resized = img.resize_exact(width as u32, height as u32, FilterType::Triangle);
        Ok(Self::from_image(&resized))
    }

    fn from_image(img: &DynamicImage) -> Canvas {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let color = img.color();
        let (channels, data): (usize, Vec<f64>) = if !color.has_color() && !color.has_alpha() {
            (1, img.to_luma32f().into_raw().into_iter().map(f64::from).collect())
        } else if color.has_alpha() {
            (4, img.to_rgba32f().into_raw().into_iter().map(f64::from).collect())
        } else {
            (3, img.to_rgb32f().into_raw().into_iter().map(f64::from).collect())
        };
        Canvas {
            width: w,
            height: h,
            channels,
            data,
        }
    }

    fn quantized<T: Copy>(&self, max: f64, cast: impl Fn(f64) -> T) -> Vec<T> {
        self.data.iter().map(|v| cast((v.clamp(0.0, 1.0) * max).round())).collect()
    }

    fn to_image(&self, depth: BitDepth) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        match depth {
            BitDepth::Eight => {
                let raw = self.quantized(255.0, |v| v as u8);
                match self.channels {
                    1 => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).unwrap()),
                    3 => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).unwrap()),
                    _ => DynamicImage::ImageRgba8(ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, raw).unwrap()),
                }
            }
            BitDepth::Sixteen => {
                let raw = self.quantized(65535.0, |v| v as u16);
                match self.channels {
                    1 => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).unwrap()),
                    3 => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).unwrap()),
                    _ => DynamicImage::ImageRgba16(ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, raw).unwrap()),
                }
            }
        }
    }

    /// PNG encoding; values are clamped to `[0, 1]` and rounded.
    pub fn to_png_bytes(&self, depth: BitDepth) -> Result<Vec<u8>, RasterError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_image(depth).write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<(), RasterError> {
        std::fs::write(path, self.to_png_bytes(depth)?).map_err(|e| RasterError::Io(e.to_string()))
    }
}
