//! Compiles the guide's chapters as doc comments so `cargo test` runs every
//! snippet in the book against the current library.

#[doc = include_str!("../../../README.md")]
pub mod readme {}
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/gaussians.md")]
pub mod gaussians {}
#[doc = include_str!("../../../book/src/rendering.md")]
pub mod rendering {}
#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}
#[doc = include_str!("../../../book/src/partitioning.md")]
pub mod partitioning {}
#[doc = include_str!("../../../book/src/format.md")]
pub mod format {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
