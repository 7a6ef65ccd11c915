//! RGB rasters and the pixel-center convention.

use crate::error::{Error, Result};

/// An `H×W×3` row-major RGB raster with nominal range `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self { width, height, data: vec![0.0; width * height * 3] })
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::InvalidParameter(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite pixel value {bad}")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for h in 0..height {
            for w in 0..width {
                data.extend_from_slice(&f(h, w));
            }
        }
        Self::from_data(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel by flat index `row * width + col`.
    #[inline]
    pub fn pixel_at(&self, index: usize) -> [f64; 3] {
        let i = index * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Continuous coordinate of the center of the pixel with flat index `index`.
    #[inline]
    pub fn coord_of(&self, index: usize) -> PixelCoord {
        PixelCoord::center(index / self.width, index % self.width, self.width, self.height)
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> Result<()> {
        if self.width == other.width && self.height == other.height {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    /// Copy with every value clamped to `[0, 1]`.
    pub fn clamped(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        Err(Error::InvalidParameter(format!("image dimensions must be positive, got {width}x{height}")))
    } else {
        Ok(())
    }
}

/// A location in the normalized image domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
}

impl PixelCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of pixel `(row, col)` in a `width × height` raster:
    /// `((col + ½)/W, (row + ½)/H)`.
    #[inline]
    pub fn center(row: usize, col: usize, width: usize, height: usize) -> Self {
        Self { u: (col as f64 + 0.5) / width as f64, v: (row as f64 + 0.5) / height as f64 }
    }

    #[inline]
    pub fn as_array(&self) -> [f64; 2] {
        [self.u, self.v]
    }
}

impl From<[f64; 2]> for PixelCoord {
    fn from(p: [f64; 2]) -> Self {
        Self { u: p[0], v: p[1] }
    }
}
