#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use gaussimg::{Gaussian2D, GaussianSet, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaussimg"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Uniform means, log-uniform scales in `[smin, smax]`, random angles and
/// colors.
pub fn random_set(seed: u64, n: usize, smin: f64, smax: f64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (smin.ln(), smax.ln());
    (0..n)
        .map(|_| {
            Gaussian2D::new(
                [rng.gen(), rng.gen()],
                rng.gen_range(0.0..PI),
                [rng.gen_range(lo..hi).exp(), rng.gen_range(lo..hi).exp()],
                [rng.gen(), rng.gen(), rng.gen()],
            )
        })
        .collect()
}

/// 64 Gaussians on a jittered 8×8 lattice; every one visible somewhere.
pub fn lattice_truth(seed: u64) -> GaussianSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(64);
    for i in 0..8 {
        for j in 0..8 {
            let mu = [
                (j as f64 + 0.5) / 8.0 + rng.gen_range(-0.03..0.03),
                (i as f64 + 0.5) / 8.0 + rng.gen_range(-0.03..0.03),
            ];
            let scale = [rng.gen_range(0.04..0.09), rng.gen_range(0.04..0.09)];
            out.push(Gaussian2D::new(mu, rng.gen_range(0.0..PI), scale, [rng.gen(), rng.gen(), rng.gen()]));
        }
    }
    GaussianSet::new(out)
}

fn hash_noise(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ seed;
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(u: f64, v: f64, freq: f64, seed: u64) -> f64 {
    let (x, y) = (u * freq, v * freq);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(fx), s(fy));
    let n = |dx: i64, dy: i64| hash_noise(x0 as i64 + dx, y0 as i64 + dy, seed);
    let top = n(0, 0) * (1.0 - sx) + n(1, 0) * sx;
    let bottom = n(0, 1) * (1.0 - sx) + n(1, 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Smooth illumination, soft blobs and fine grain, loosely like a photo.
pub fn photo_like(size: usize) -> ImageBuffer {
    ImageBuffer::from_fn(size, size, |r, c| {
        let (u, v) = ((c as f64 + 0.5) / size as f64, (r as f64 + 0.5) / size as f64);
        let sky = [0.35 + 0.4 * v, 0.5 + 0.3 * v, 0.85 - 0.3 * v];
        let blob = (-((u - 0.35).powi(2) + (v - 0.6).powi(2)) / 0.02).exp();
        let blob2 = (-((u - 0.75).powi(2) * 4.0 + (v - 0.3).powi(2)) / 0.01).exp();
        let detail = value_noise(u, v, 24.0, 1) - 0.5;
        let grain = 0.04 * (value_noise(u, v, 160.0, 2) - 0.5);
        let mut px = [0.0; 3];
        for ch in 0..3 {
            let tint = [0.9, 0.6, 0.3][ch];
            px[ch] = (sky[ch] * (1.0 - blob) + tint * blob + 0.3 * blob2 * (1.0 - tint) + 0.15 * detail + grain)
                .clamp(0.0, 1.0);
        }
        px
    })
    .unwrap()
}

/// Flat-colored disks, bars and a triangle with hard edges.
pub fn vector_like(size: usize) -> ImageBuffer {
    ImageBuffer::from_fn(size, size, |r, c| {
        let (u, v) = ((c as f64 + 0.5) / size as f64, (r as f64 + 0.5) / size as f64);
        let mut px = [0.95, 0.93, 0.88];
        if (u - 0.3).powi(2) + (v - 0.3).powi(2) < 0.04 {
            px = [0.85, 0.2, 0.15];
        }
        if (0.55..0.9).contains(&u) && (0.15..0.3).contains(&v) {
            px = [0.1, 0.3, 0.7];
        }
        if v > 0.55 && v < 0.95 && (u - 0.65).abs() < (v - 0.55) * 0.6 {
            px = [0.2, 0.6, 0.25];
        }
        if (u - 0.25).powi(2) + (v - 0.75).powi(2) < 0.015 && (u - 0.25).powi(2) + (v - 0.75).powi(2) > 0.006 {
            px = [0.1, 0.1, 0.1];
        }
        px
    })
    .unwrap()
}

/// Oriented stripes modulated by noise, like fabric or wood.
pub fn texture_like(size: usize) -> ImageBuffer {
    ImageBuffer::from_fn(size, size, |r, c| {
        let (u, v) = ((c as f64 + 0.5) / size as f64, (r as f64 + 0.5) / size as f64);
        let warp = 0.6 * value_noise(u, v, 6.0, 3);
        let stripes = 0.5 + 0.5 * (2.0 * PI * (14.0 * (u + 0.5 * v) + warp * 3.0)).sin();
        let speckle = value_noise(u, v, 48.0, 4);
        let t = 0.7 * stripes + 0.3 * speckle;
        [0.25 + 0.55 * t, 0.15 + 0.4 * t, 0.08 + 0.2 * t]
    })
    .unwrap()
}
