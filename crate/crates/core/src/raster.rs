use std::path::Path;

use crate::error::{Error, Result};

/// Linear RGB image, row-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn mean_color(&self) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for p in &self.pixels {
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
        }
        acc.map(|v| v / self.pixels.len().max(1) as f64)
    }

    /// 8-bit encoding used for PNG output: `round(clamp(c) · 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Decode a PNG to linear `[0, 1]` by `/255`; alpha is composited onto
    /// `background`.
    pub fn load_png(path: &Path, background: [f32; 3]) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_rgba8();
        let (width, height) = (img.width() as usize, img.height() as usize);
        let pixels = img
            .pixels()
            .map(|p| {
                let a = p[3] as f32 / 255.0;
                [0, 1, 2].map(|c| (p[c] as f32 / 255.0) * a + background[c] * (1.0 - a))
            })
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f32;
        let mut pixels = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.get(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                pixels.push(acc.map(|v| v * norm));
            }
        }
        Self {
            width: w,
            height: h,
            pixels,
        }
    }
}
