//! PNG input and output.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

/// Bit depth used by [`save_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

/// Reads an 8- or 16-bit PNG into `[0, 1]` RGB. Alpha is dropped and
/// grayscale is expanded.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    let img = reader.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        _ => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    };
    ImageBuffer::from_data(w, h, data)
}

/// Writes `img` as a PNG, rounding each channel to the nearest level.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let quantize = |v: f64, max: f64| (v.clamp(0.0, 1.0) * max).round();
    let out = match depth {
        BitDepth::Eight => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, img.data().iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .expect("buffer length matches dimensions"),
        ),
        BitDepth::Sixteen => DynamicImage::ImageRgb16(
            image::ImageBuffer::from_raw(w, h, img.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .expect("buffer length matches dimensions"),
        ),
    };
    out.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}
