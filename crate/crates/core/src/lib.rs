//! Images represented as sets of anisotropic, colored 2D Gaussians.
//!
//! The crate covers the whole pipeline: fitting a Gaussian set to a target
//! image ([`fit`]), rendering it at any resolution with a normalized top-K
//! blend ([`render`]), partitioning it for fast random-access decoding
//! ([`bsp`]), and storing it in a compact float16 file ([`codec`]).
//!
//! ```
//! use gaussimg::{Gaussian2D, GaussianSet, render_image};
//!
//! let set = GaussianSet::new(vec![
//!     Gaussian2D::isotropic([0.3, 0.5], 0.2, [1.0, 0.0, 0.0]),
//!     Gaussian2D::isotropic([0.7, 0.5], 0.2, [0.0, 0.0, 1.0]),
//! ]);
//! let img = render_image(&set, 64, 32, 10).unwrap();
//! assert_eq!((img.width(), img.height()), (64, 32));
//! // left half is dominated by the red Gaussian
//! assert!(img.pixel(16, 4)[0] > 0.9);
//! ```

#![allow(clippy::needless_range_loop)]

pub mod adam;
pub mod bsp;
pub mod codec;
pub mod error;
pub mod fit;
pub mod gaussian;
pub mod io;
pub mod metrics;
pub mod raster;
pub mod render;
pub mod sampling;

pub use bsp::{build_partition, locate_block, render_topk_blocked, BspPartition, Rect};
pub use codec::{decode, encode, quantize_set, Decoded, SizeReport};
pub use error::{Error, ErrorKind, Result};
pub use gaussian::{
    constrain, covariance, density, density_gradient, DensityGradient, Gaussian2D, GaussianGrad, GaussianSet,
    SCALE_MAX, SCALE_MIN,
};
pub use io::{load_image, save_image, BitDepth};
pub use metrics::{psnr, ssim};
pub use raster::{ImageBuffer, PixelCoord};
pub use render::{
    backward, render_image, render_naive, render_topk, select_top_k, Renderer, TopKSelection, DEFAULT_K, EPS_NORM,
};
