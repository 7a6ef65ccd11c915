//! The IGS2 container: a 20-byte header followed by float16 records.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "IGS2"
//!      4     1  version (1)
//!      5     1  flags (0)
//!      6     2  k          u16
//!      8     2  width      u16
//!     10     2  height     u16
//!     12     4  n_g        u32
//!     16     4  n_b        u32
//!     20  16·n_g  gaussians: μu μv θ s1 s2 r g b
//!         8·n_b   blocks:    x1 y1 x2 y2
//! ```
//!
//! All integers are little-endian and every record value is an IEEE 754
//! binary16, rounded to nearest even.

use std::fmt;

use half::f16;

use crate::bsp::{BspPartition, Rect};
use crate::error::{Error, Result};
use crate::gaussian::{constrain_finite, Gaussian2D, GaussianSet, PARAMS_PER_GAUSSIAN};

pub const MAGIC: [u8; 4] = *b"IGS2";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 20;
pub const GAUSSIAN_BYTES: usize = 2 * PARAMS_PER_GAUSSIAN;
pub const BLOCK_BYTES: usize = 8;

/// Size of a complete file with `n_g` Gaussians and `n_b` blocks.
pub fn file_len(n_g: usize, n_b: usize) -> usize {
    HEADER_BYTES + GAUSSIAN_BYTES * n_g + BLOCK_BYTES * n_b
}

/// Contents of a decoded file.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub set: GaussianSet,
    pub partition: Option<BspPartition>,
    pub width: usize,
    pub height: usize,
    pub k: usize,
}

/// Byte accounting for one encoding.
///
/// `payload_bytes` counts only the Gaussian records, which is the figure
/// used when comparing against other representations; `bpp` is derived from
/// it. Header and block table are reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeReport {
    pub payload_bytes: usize,
    pub block_bytes: usize,
    pub header_bytes: usize,
    pub width: usize,
    pub height: usize,
}

impl SizeReport {
    pub fn new(n_g: usize, n_b: usize, width: usize, height: usize) -> Self {
        Self {
            payload_bytes: GAUSSIAN_BYTES * n_g,
            block_bytes: BLOCK_BYTES * n_b,
            header_bytes: HEADER_BYTES,
            width,
            height,
        }
    }

    pub fn total_bytes(&self) -> usize {
        self.payload_bytes + self.block_bytes + self.header_bytes
    }

    /// Payload bits per pixel.
    pub fn bpp(&self) -> f64 {
        (self.payload_bytes * 8) as f64 / (self.width * self.height) as f64
    }

    /// Payload in decimal kilobytes (1 KB = 1000 bytes).
    pub fn payload_kb(&self) -> f64 {
        self.payload_bytes as f64 / 1000.0
    }
}

impl fmt::Display for SizeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "payload_bytes {} ({:.3} KB)", self.payload_bytes, self.payload_kb())?;
        writeln!(f, "block_bytes {}", self.block_bytes)?;
        writeln!(f, "header_bytes {}", self.header_bytes)?;
        writeln!(f, "total_bytes {}", self.total_bytes())?;
        write!(f, "bpp {:.3} at {}x{}", self.bpp(), self.width, self.height)
    }
}

fn to_f16(value: f64) -> Result<f16> {
    let h = f16::from_f64(value);
    if h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Unrepresentable { value })
    }
}

fn quantize_gaussian(g: &Gaussian2D) -> Result<[f16; PARAMS_PER_GAUSSIAN]> {
    let p = g.to_params();
    let mut out = [f16::ZERO; PARAMS_PER_GAUSSIAN];
    for (o, v) in out.iter_mut().zip(p) {
        *o = to_f16(v)?;
    }
    Ok(out)
}

fn dequantize_gaussian(h: &[f16; PARAMS_PER_GAUSSIAN]) -> Gaussian2D {
    constrain_finite(&Gaussian2D::from_params(&h.map(f16::to_f64)))
}

/// The set a decoder will see: every parameter rounded to float16, then
/// constrained.
pub fn quantize_set(set: &GaussianSet) -> Result<GaussianSet> {
    set.iter()
        .enumerate()
        .map(|(i, g)| {
            g.check_finite(i)?;
            Ok(dequantize_gaussian(&quantize_gaussian(g)?))
        })
        .collect()
}

fn header_u16(name: &str, value: usize) -> Result<[u8; 2]> {
    u16::try_from(value)
        .map(u16::to_le_bytes)
        .map_err(|_| Error::InvalidParameter(format!("{name} {value} does not fit the header (max 65535)")))
}

/// Serializes `set` and, if given, the block table of `partition`.
pub fn encode(
    set: &GaussianSet,
    partition: Option<&BspPartition>,
    width: usize,
    height: usize,
    k: usize,
) -> Result<Vec<u8>> {
    set.ensure_non_empty()?;
    if k == 0 || width == 0 || height == 0 {
        return Err(Error::InvalidParameter("k, width and height must be positive".into()));
    }
    if let Some(p) = partition {
        if p.gaussian_count() != set.len() {
            return Err(Error::StalePartition(format!(
                "partition covers {} gaussians, set has {}",
                p.gaussian_count(),
                set.len()
            )));
        }
    }
    let blocks = partition.map_or(&[][..], BspPartition::blocks);
    let n_g = u32::try_from(set.len()).map_err(|_| Error::InvalidParameter("too many gaussians".into()))?;
    let n_b = u32::try_from(blocks.len()).map_err(|_| Error::InvalidParameter("too many blocks".into()))?;

    let mut out = Vec::with_capacity(file_len(set.len(), blocks.len()));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(0);
    out.extend_from_slice(&header_u16("k", k)?);
    out.extend_from_slice(&header_u16("width", width)?);
    out.extend_from_slice(&header_u16("height", height)?);
    out.extend_from_slice(&n_g.to_le_bytes());
    out.extend_from_slice(&n_b.to_le_bytes());
    for (i, g) in set.iter().enumerate() {
        g.check_finite(i)?;
        for h in quantize_gaussian(g)? {
            out.extend_from_slice(&h.to_le_bytes());
        }
    }
    for b in blocks {
        for v in [b.x1, b.y1, b.x2, b.y2] {
            out.extend_from_slice(&to_f16(v)?.to_le_bytes());
        }
    }
    Ok(out)
}

fn read_f16(bytes: &[u8], at: usize) -> f16 {
    f16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u16(bytes: &[u8], at: usize) -> usize {
    u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
}

/// Header fields only, without touching the records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub n_g: usize,
    pub n_b: usize,
}

impl Header {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Truncated { expected: HEADER_BYTES, actual: bytes.len() });
        }
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != 0 {
            return Err(Error::InvalidParameter(format!("unknown flags {:#04x}", bytes[5])));
        }
        Ok(Self {
            k: read_u16(bytes, 6),
            width: read_u16(bytes, 8),
            height: read_u16(bytes, 10),
            n_g: read_u32(bytes, 12),
            n_b: read_u32(bytes, 16),
        })
    }

    pub fn size_report(&self) -> SizeReport {
        SizeReport::new(self.n_g, self.n_b, self.width, self.height)
    }
}

/// Parses an IGS2 file, constraining every decoded Gaussian and rebuilding
/// the partition from the stored block table.
pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    let header = Header::parse(bytes)?;
    if header.n_g == 0 {
        return Err(Error::NoGaussians);
    }
    let expected = file_len(header.n_g, header.n_b);
    match bytes.len().cmp(&expected) {
        std::cmp::Ordering::Less => return Err(Error::Truncated { expected, actual: bytes.len() }),
        std::cmp::Ordering::Greater => return Err(Error::TrailingBytes(bytes.len() - expected)),
        std::cmp::Ordering::Equal => {}
    }
    if header.k == 0 || header.width == 0 || header.height == 0 {
        return Err(Error::InvalidParameter("k, width and height must be positive".into()));
    }

    let mut at = HEADER_BYTES;
    let mut gaussians = Vec::with_capacity(header.n_g);
    for _ in 0..header.n_g {
        let mut h = [f16::ZERO; PARAMS_PER_GAUSSIAN];
        for v in &mut h {
            *v = read_f16(bytes, at);
            at += 2;
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: gaussians.len(), param: "record" });
        }
        gaussians.push(dequantize_gaussian(&h));
    }
    let set = GaussianSet::new(gaussians);

    let partition = if header.n_b == 0 {
        None
    } else {
        let mut blocks = Vec::with_capacity(header.n_b);
        for _ in 0..header.n_b {
            let v: [f64; 4] = std::array::from_fn(|i| read_f16(bytes, at + 2 * i).to_f64());
            at += BLOCK_BYTES;
            blocks.push(Rect::new(v[0], v[1], v[2], v[3]));
        }
        Some(BspPartition::from_blocks(&set, blocks)?)
    };

    Ok(Decoded { set, partition, width: header.width, height: header.height, k: header.k })
}
