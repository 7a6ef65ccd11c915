//! PSNR and SSIM on `[0, 1]` RGB rasters.

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean squared error over all pixels and channels.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable Gaussian blur with replicated borders.
fn blur(src: &[f64], width: usize, height: usize, window: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; src.len()];
    for r in 0..height {
        let row = &src[r * width..(r + 1) * width];
        for c in 0..width {
            tmp[r * width + c] =
                window.iter().enumerate().map(|(k, w)| w * row[clamp(c as isize + k as isize - half, width)]).sum();
        }
    }
    let mut out = vec![0.0; src.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = window
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(r as isize + k as isize - half, height) * width + c])
                .sum();
        }
    }
    out
}

/// Mean structural similarity, computed per channel with an 11×11 Gaussian
/// window (σ = 1.5) and averaged over RGB.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    let (w, h) = (a.width(), a.height());
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h, min: SSIM_WINDOW });
    }
    let window = gaussian_window();
    let n = w * h;
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data().iter().skip(ch).step_by(3).copied().collect();
        let y: Vec<f64> = b.data().iter().skip(ch).step_by(3).copied().collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h, &window), blur(&y, w, h, &window));
        let (exx, eyy, exy) = (blur(&xx, w, h, &window), blur(&yy, w, h, &window), blur(&xy, w, h, &window));
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}
