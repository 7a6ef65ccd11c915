//! Binary space partitioning of a fitted set for fast decoding.
//!
//! The unit square is split recursively, alternating vertical and horizontal
//! lines, each line placed at the median Gaussian so both halves receive an
//! equal share, until no leaf holds more than `n_max` Gaussians. Each leaf
//! block is then grown by a quarter of its own extent on every side
//! (clipped to the domain) to form its *shell*; a pixel in a block is
//! rendered from the Gaussians whose means fall inside that block's shell.
//!
//! Blocks are half-open `[x₁, x₂) × [y₁, y₂)`, closed on the domain's far
//! edges, so every point of `[0,1]²` belongs to exactly one block.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::raster::PixelCoord;
use crate::render::{blend, Renderer, TopK};

/// Sub-cells per block side, each with its own candidate order.
const SCAN_SUBDIV: usize = 2;

/// Axis-aligned rectangle `(x1, y1, x2, y2)` in the normalized domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 };

    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn lo(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.x1
        } else {
            self.y1
        }
    }

    fn hi(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.x2
        } else {
            self.y2
        }
    }

    fn split(&self, axis: usize, at: f64) -> (Rect, Rect) {
        let mut lower = *self;
        let mut upper = *self;
        if axis == 0 {
            lower.x2 = at;
            upper.x1 = at;
        } else {
            lower.y2 = at;
            upper.y1 = at;
        }
        (lower, upper)
    }

    /// Closed containment test.
    pub fn contains_closed(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x1 && p[0] <= self.x2 && p[1] >= self.y1 && p[1] <= self.y2
    }

    /// Half-open containment, closed where the rectangle touches the far
    /// edges of the unit square.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let inside = |v: f64, lo: f64, hi: f64| v >= lo && (v < hi || (hi >= 1.0 && v <= hi));
        inside(p[0], self.x1, self.x2) && inside(p[1], self.y1, self.y2)
    }

    /// Grows each side by a quarter of the extent along its axis, clipped to
    /// the unit square.
    pub fn shell(&self) -> Rect {
        let (du, dv) = ((self.x2 - self.x1) / 4.0, (self.y2 - self.y1) / 4.0);
        Rect {
            x1: (self.x1 - du).max(0.0),
            y1: (self.y1 - dv).max(0.0),
            x2: (self.x2 + du).min(1.0),
            y2: (self.y2 + dv).min(1.0),
        }
    }

    /// True when interiors overlap.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x1 < other.x2 && other.x1 < self.x2 && self.y1 < other.y2 && other.y1 < self.y2
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split { axis: usize, at: f64, lower: usize, upper: usize },
    Leaf { block: usize },
}

/// Leaf blocks, their member lists and shells, plus the tree used to locate
/// the block under a point.
#[derive(Debug, Clone, PartialEq)]
pub struct BspPartition {
    blocks: Vec<Rect>,
    members: Vec<Vec<usize>>,
    shells: Vec<Rect>,
    shell_members: Vec<Vec<u32>>,
    /// Shell members per sub-cell of each block, ordered by Mahalanobis
    /// distance to the sub-cell center so the top-K search tightens its
    /// pruning bound early.
    scan_order: Vec<Vec<u32>>,
    nodes: Vec<Node>,
    n_max: usize,
    n_gaussians: usize,
}

impl BspPartition {
    /// Partitions `set` until every block holds at most `n_max` Gaussians.
    pub fn build(set: &GaussianSet, n_max: usize) -> Result<Self> {
        set.ensure_non_empty()?;
        if n_max == 0 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        let mut builder = Builder { set, n_max, nodes: Vec::new(), blocks: Vec::new(), members: Vec::new() };
        builder.split(Rect::UNIT, (0..set.len()).collect(), 0);
        let Builder { nodes, blocks, members, .. } = builder;
        let mut p = Self {
            shells: blocks.iter().map(Rect::shell).collect(),
            blocks,
            members,
            shell_members: Vec::new(),
            scan_order: Vec::new(),
            nodes,
            n_max,
            n_gaussians: set.len(),
        };
        p.fill_shells(set);
        Ok(p)
    }

    /// Rebuilds a partition from stored leaf rectangles, e.g. after decoding.
    ///
    /// Only the rectangles are needed: a guillotine tree is recovered from
    /// them, block members are reassigned by locating each mean, and shells
    /// are recomputed. Zero-area rectangles are kept but never located.
    pub fn from_blocks(set: &GaussianSet, blocks: Vec<Rect>) -> Result<Self> {
        set.ensure_non_empty()?;
        if blocks.is_empty() {
            return Err(Error::CorruptBlocks("no blocks".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            let ok = [b.x1, b.y1, b.x2, b.y2].iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
                && b.x1 <= b.x2
                && b.y1 <= b.y2;
            if !ok {
                return Err(Error::CorruptBlocks(format!("block {i} is malformed: {b:?}")));
            }
        }
        let live: Vec<usize> = (0..blocks.len()).filter(|&i| blocks[i].area() > 0.0).collect();
        let mut nodes = Vec::new();
        recover_tree(&blocks, Rect::UNIT, live, &mut nodes)?;
        let mut p = Self {
            shells: blocks.iter().map(Rect::shell).collect(),
            members: vec![Vec::new(); blocks.len()],
            blocks,
            shell_members: Vec::new(),
            scan_order: Vec::new(),
            nodes,
            n_max: 0,
            n_gaussians: set.len(),
        };
        for (i, g) in set.iter().enumerate() {
            let b = p.locate_block(PixelCoord::new(g.mu[0], g.mu[1]));
            p.members[b].push(i);
        }
        p.n_max = p.members.iter().map(Vec::len).max().unwrap_or(0);
        p.fill_shells(set);
        Ok(p)
    }

    fn fill_shells(&mut self, set: &GaussianSet) {
        let mut by_u: Vec<(f64, u32)> = set.iter().enumerate().map(|(i, g)| (g.mu[0], i as u32)).collect();
        by_u.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.shell_members = self
            .shells
            .iter()
            .zip(&self.members)
            .map(|(shell, own)| {
                let start = by_u.partition_point(|&(u, _)| u < shell.x1);
                let end = by_u.partition_point(|&(u, _)| u <= shell.x2);
                let mut m: Vec<u32> = by_u[start..end]
                    .iter()
                    .filter(|&&(_, i)| shell.contains_closed(set[i as usize].mu))
                    .map(|&(_, i)| i)
                    .collect();
                m.sort_unstable();
                // members of a forced split may sit outside the block's shell
                for &i in own {
                    if let Err(pos) = m.binary_search(&(i as u32)) {
                        m.insert(pos, i as u32);
                    }
                }
                m
            })
            .collect();
        let inverses: Vec<_> = set.iter().map(|g| g.inverse_covariance()).collect();
        self.scan_order = self
            .blocks
            .iter()
            .zip(&self.shell_members)
            .flat_map(|(b, m)| {
                let inverses = &inverses;
                (0..SCAN_SUBDIV * SCAN_SUBDIV).map(move |sub| {
                    let (sr, sc) = ((sub / SCAN_SUBDIV) as f64, (sub % SCAN_SUBDIV) as f64);
                    let n = SCAN_SUBDIV as f64;
                    let c = [b.x1 + (sc + 0.5) / n * (b.x2 - b.x1), b.y1 + (sr + 0.5) / n * (b.y2 - b.y1)];
                    let key = |i: u32| {
                        let mu = set[i as usize].mu;
                        inverses[i as usize].quad_form(c[0] - mu[0], c[1] - mu[1])
                    };
                    let mut order = m.clone();
                    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
                    order
                })
            })
            .collect();
    }

    /// Candidate list for a pixel: its block's shell, in scan order.
    fn candidates(&self, x: PixelCoord) -> &[u32] {
        let k = self.locate_block(x);
        let b = &self.blocks[k];
        let n = SCAN_SUBDIV as f64;
        let cell = |t: f64, lo: f64, hi: f64| (((t - lo) / (hi - lo) * n) as usize).min(SCAN_SUBDIV - 1);
        let sub = cell(x.v, b.y1, b.y2) * SCAN_SUBDIV + cell(x.u, b.x1, b.x2);
        &self.scan_order[k * SCAN_SUBDIV * SCAN_SUBDIV + sub]
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Rect] {
        &self.blocks
    }

    pub fn shells(&self) -> &[Rect] {
        &self.shells
    }

    /// Gaussian indices assigned to block `k`.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    /// Gaussian indices whose means fall inside shell `k`, ascending.
    pub fn shell_members(&self, k: usize) -> &[u32] {
        &self.shell_members[k]
    }

    /// The construction threshold (for decoded partitions: the largest block).
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn gaussian_count(&self) -> usize {
        self.n_gaussians
    }

    /// Serialized size of the block table: four float16 values per block.
    pub fn storage_bytes(&self) -> usize {
        8 * self.blocks.len()
    }

    /// Index of the block containing `x`, by tree descent.
    pub fn locate_block(&self, x: PixelCoord) -> usize {
        let p = [x.u, x.v];
        let mut node = 0;
        loop {
            match self.nodes[node] {
                Node::Leaf { block } => return block,
                Node::Split { axis, at, lower, upper } => {
                    node = if p[axis] < at { lower } else { upper };
                }
            }
        }
    }

    /// Mean shell size a uniformly random pixel would see.
    pub fn mean_candidates(&self) -> f64 {
        self.blocks.iter().zip(&self.shell_members).map(|(b, m)| b.area() * m.len() as f64).sum()
    }

    fn check(&self, set: &GaussianSet) -> Result<()> {
        if set.len() != self.n_gaussians {
            return Err(Error::StalePartition(format!(
                "partition covers {} gaussians, set has {}",
                self.n_gaussians,
                set.len()
            )));
        }
        Ok(())
    }
}

struct Builder<'a> {
    set: &'a GaussianSet,
    n_max: usize,
    nodes: Vec<Node>,
    blocks: Vec<Rect>,
    members: Vec<Vec<usize>>,
}

impl Builder<'_> {
    fn split(&mut self, rect: Rect, members: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        if members.len() <= self.n_max {
            self.nodes.push(Node::Leaf { block: self.blocks.len() });
            self.blocks.push(rect);
            self.members.push(members);
            return id;
        }
        self.nodes.push(Node::Leaf { block: usize::MAX });

        let preferred = depth % 2;
        let coord = |i: usize, axis: usize| self.set[i].mu[axis];
        let sorted_on = |axis: usize| {
            let mut m = members.clone();
            m.sort_by(|&a, &b| coord(a, axis).total_cmp(&coord(b, axis)).then(a.cmp(&b)));
            m
        };
        let half = members.len() / 2;
        // median line, unless it lands on the block edge (coincident means);
        // then try the other axis, and as a last resort cut the block in half
        // geometrically while still splitting the members evenly by rank
        let (axis, at, sorted) = [preferred, 1 - preferred]
            .into_iter()
            .find_map(|axis| {
                let sorted = sorted_on(axis);
                let at = coord(sorted[half], axis);
                (at > rect.lo(axis) && at < rect.hi(axis)).then_some((axis, at, sorted))
            })
            .unwrap_or_else(|| {
                let at = 0.5 * (rect.lo(preferred) + rect.hi(preferred));
                (preferred, at, sorted_on(preferred))
            });

        let (lower_rect, upper_rect) = rect.split(axis, at);
        let upper_members = sorted[half..].to_vec();
        let mut lower_members = sorted;
        lower_members.truncate(half);
        let lower = self.split(lower_rect, lower_members, depth + 1);
        let upper = self.split(upper_rect, upper_members, depth + 1);
        self.nodes[id] = Node::Split { axis, at, lower, upper };
        id
    }
}

/// Recovers a guillotine tree whose leaves are exactly `live` (all with
/// positive area) tiling `rect`.
fn recover_tree(blocks: &[Rect], rect: Rect, live: Vec<usize>, nodes: &mut Vec<Node>) -> Result<usize> {
    let id = nodes.len();
    match live.as_slice() {
        [] => return Err(Error::CorruptBlocks(format!("region {rect:?} is not covered"))),
        [only] => {
            let b = blocks[*only];
            if b != rect {
                return Err(Error::CorruptBlocks(format!("block {only} {b:?} does not tile {rect:?}")));
            }
            nodes.push(Node::Leaf { block: *only });
            return Ok(id);
        }
        _ => {}
    }
    for axis in [0, 1] {
        let mut by_lo = live.clone();
        by_lo.sort_by(|&a, &b| blocks[a].lo(axis).total_cmp(&blocks[b].lo(axis)).then(a.cmp(&b)));
        let mut reach = rect.lo(axis);
        for cut in 1..by_lo.len() {
            reach = reach.max(blocks[by_lo[cut - 1]].hi(axis));
            let next = blocks[by_lo[cut]].lo(axis);
            if next >= reach && next > rect.lo(axis) && next < rect.hi(axis) {
                let (lower_rect, upper_rect) = rect.split(axis, next);
                nodes.push(Node::Leaf { block: usize::MAX });
                let lower = recover_tree(blocks, lower_rect, by_lo[..cut].to_vec(), nodes)?;
                let upper = recover_tree(blocks, upper_rect, by_lo[cut..].to_vec(), nodes)?;
                nodes[id] = Node::Split { axis, at: next, lower, upper };
                return Ok(id);
            }
        }
    }
    Err(Error::CorruptBlocks(format!("no guillotine cut separates the blocks in {rect:?}")))
}

/// Partitions `set` until every block holds at most `n_max` Gaussians.
pub fn build_partition(set: &GaussianSet, n_max: usize) -> Result<BspPartition> {
    BspPartition::build(set, n_max)
}

/// Index of the block containing `x`.
pub fn locate_block(partition: &BspPartition, x: PixelCoord) -> usize {
    partition.locate_block(x)
}

/// Top-K blend at `x` restricted to the shell of the block containing `x`.
///
/// An empty shell yields black.
pub fn render_topk_blocked(renderer: &Renderer, partition: &BspPartition, x: PixelCoord, k: usize) -> Result<[f64; 3]> {
    if partition.gaussian_count() != renderer.len() {
        return Err(Error::StalePartition(format!(
            "partition covers {} gaussians, renderer has {}",
            partition.gaussian_count(),
            renderer.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut topk = TopK::new(k);
    Ok(blocked_color(renderer, partition, x, &mut topk))
}

#[inline]
fn blocked_color(renderer: &Renderer, partition: &BspPartition, x: PixelCoord, topk: &mut TopK) -> [f64; 3] {
    topk.reset();
    let splats = renderer.splats();
    for &i in partition.candidates(x) {
        topk.offer(i, splats[i as usize].quad_form(x));
    }
    topk.finish();
    blend(splats, topk.items())
}

/// Renders a full raster through the partition, clamped to `[0, 1]`.
pub fn render_image_blocked(
    set: &GaussianSet,
    partition: &BspPartition,
    width: usize,
    height: usize,
    k: usize,
) -> Result<crate::raster::ImageBuffer> {
    use rayon::prelude::*;
    partition.check(set)?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let renderer = Renderer::exhaustive(set)?;
    let mut img = crate::raster::ImageBuffer::new(width, height)?;
    img.data_mut().par_chunks_mut(width * 3).enumerate().for_each_init(
        || TopK::new(k),
        |topk, (row, out)| {
            for col in 0..width {
                let c = blocked_color(&renderer, partition, PixelCoord::center(row, col, width, height), topk);
                for ch in 0..3 {
                    out[col * 3 + ch] = c[ch].clamp(0.0, 1.0);
                }
            }
        },
    );
    Ok(img)
}

/// One row of the benchmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    /// `None` for the unpartitioned baseline.
    pub n_max: Option<usize>,
    pub blocks: usize,
    /// Milliseconds per 10 000 pixels.
    pub mean_ms: f64,
    pub std_ms: f64,
    pub mean_candidates: f64,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub pixels: usize,
    pub trials: usize,
    pub warmup_trials: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { pixels: 10_000, trials: 20, warmup_trials: 3, k: crate::render::DEFAULT_K, seed: 0 }
    }
}

fn time_trials(cfg: &BenchConfig, mut run: impl FnMut() -> f64) -> (f64, f64) {
    let mut sink = 0.0;
    for _ in 0..cfg.warmup_trials {
        sink += run();
    }
    let per_10k = 10_000.0 / cfg.pixels as f64;
    let times: Vec<f64> = (0..cfg.trials.max(1))
        .map(|_| {
            let start = Instant::now();
            sink += run();
            start.elapsed().as_secs_f64() * 1e3 * per_10k
        })
        .collect();
    std::hint::black_box(sink);
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    (mean, var.sqrt())
}

/// Times single-threaded pixel queries through partitions built with each
/// `n_max`, preceded by the unpartitioned baseline.
pub fn bench_render(set: &GaussianSet, n_max_values: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let renderer = Renderer::exhaustive(set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pixels: Vec<PixelCoord> = (0..cfg.pixels.max(1)).map(|_| PixelCoord::new(rng.gen(), rng.gen())).collect();
    let mut topk = TopK::new(cfg.k.max(1));
    let mut rows = Vec::new();

    let (mean_ms, std_ms) = time_trials(cfg, || {
        pixels
            .iter()
            .map(|&x| {
                renderer.scan_into(x, &mut topk);
                blend(renderer.splats(), topk.items())[0]
            })
            .sum()
    });
    rows.push(BenchRow { n_max: None, blocks: 1, mean_ms, std_ms, mean_candidates: set.len() as f64 });

    for &n_max in n_max_values {
        let partition = BspPartition::build(set, n_max)?;
        let candidates = pixels.iter().map(|&x| partition.shell_members(partition.locate_block(x)).len()).sum::<usize>()
            as f64
            / pixels.len() as f64;
        let (mean_ms, std_ms) =
            time_trials(cfg, || pixels.iter().map(|&x| blocked_color(&renderer, &partition, x, &mut topk)[0]).sum());
        rows.push(BenchRow {
            n_max: Some(n_max),
            blocks: partition.block_count(),
            mean_ms,
            std_ms,
            mean_candidates: candidates,
        });
    }
    Ok(rows)
}

/// Plain-text table: `n_max`, block count, mean and std milliseconds per
/// 10k pixels, mean candidates per pixel and speedup over the baseline.
pub fn format_bench_table(rows: &[BenchRow]) -> String {
    let base = rows.first().map_or(f64::NAN, |r| r.mean_ms);
    let mut out = format!(
        "{:>8} {:>6} {:>10} {:>10} {:>12} {:>8}\n",
        "n_max", "N_b", "mean_ms", "std_ms", "candidates", "speedup"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>8} {:>6} {:>10.3} {:>10.3} {:>12.1} {:>8.2}\n",
            r.n_max.map_or("global".to_string(), |n| n.to_string()),
            r.blocks,
            r.mean_ms,
            r.std_ms,
            r.mean_candidates,
            base / r.mean_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Gaussian2D;
    use crate::render::render_topk;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn at(points: &[[f64; 2]]) -> GaussianSet {
        points.iter().map(|&p| Gaussian2D::isotropic(p, 0.01, [0.5; 3])).collect()
    }

    #[test]
    fn four_corner_clusters() {
        let set = at(&[[0.2, 0.3], [0.3, 0.2], [0.8, 0.7], [0.7, 0.8]]);
        let p = BspPartition::build(&set, 1).unwrap();
        assert_eq!(p.block_count(), 4);
        assert!(p.blocks.iter().zip(&p.members).all(|(_, m)| m.len() == 1));
        // vertical split at the median u, then horizontal splits
        assert_eq!(p.nodes[0], Node::Split { axis: 0, at: 0.7, lower: 1, upper: 4 });
        for (b, m) in p.blocks.iter().zip(&p.members) {
            assert!(b.contains(set[m[0]].mu));
        }
    }

    #[test]
    fn small_set_is_one_block() {
        let set = at(&[[0.1, 0.1], [0.5, 0.9]]);
        let p = BspPartition::build(&set, 2).unwrap();
        assert_eq!(p.blocks(), &[Rect::UNIT]);
        assert_eq!(p.shells(), &[Rect::UNIT]);
        assert_eq!(p.locate_block(PixelCoord::new(0.99, 0.0)), 0);
    }

    #[test]
    fn shell_extension_and_clip() {
        let s = Rect::new(0.5, 0.5, 0.75, 1.0).shell();
        assert_eq!(s, Rect::new(0.4375, 0.375, 0.8125, 1.0));
    }

    #[test]
    fn split_line_belongs_to_upper_block() {
        let set = at(&[[0.2, 0.5], [0.6, 0.5]]);
        let p = BspPartition::build(&set, 1).unwrap();
        assert_eq!(p.blocks[0], Rect::new(0.0, 0.0, 0.6, 1.0));
        assert_eq!(p.locate_block(PixelCoord::new(0.6, 0.3)), 1);
        assert_eq!(p.locate_block(PixelCoord::new(0.5999, 0.3)), 0);
        assert_eq!(p.locate_block(PixelCoord::new(1.0, 1.0)), 1);
    }

    #[test]
    fn coincident_means_terminate() {
        let set = at(&vec![[0.3, 0.3]; 100]);
        let p = BspPartition::build(&set, 8).unwrap();
        assert!(p.members.iter().all(|m| m.len() <= 8));
        let total: usize = p.members.iter().map(Vec::len).sum();
        assert_eq!(total, 100);
        for k in 0..p.block_count() {
            for &i in p.members(k) {
                assert!(p.shell_members(k).contains(&(i as u32)));
            }
        }
    }

    #[test]
    fn stale_partition_rejected() {
        let set = at(&[[0.1, 0.1], [0.5, 0.9], [0.7, 0.2]]);
        let p = BspPartition::build(&set, 1).unwrap();
        let smaller = at(&[[0.1, 0.1]]);
        let r = Renderer::new(&smaller).unwrap();
        assert!(matches!(render_topk_blocked(&r, &p, PixelCoord::new(0.5, 0.5), 10), Err(Error::StalePartition(_))));
    }

    #[test]
    fn single_block_matches_global_bitwise() {
        let set: GaussianSet = (0..40)
            .map(|i| {
                let t = i as f64 / 40.0;
                Gaussian2D::new([t, (t * 7.0).fract()], t * 3.0, [0.05 + 0.1 * t, 0.08], [t, 1.0 - t, 0.5])
            })
            .collect();
        let p = BspPartition::build(&set, 40).unwrap();
        let r = Renderer::new(&set).unwrap();
        for i in 0..200 {
            let x = PixelCoord::new((i as f64 * 0.618).fract(), (i as f64 * 0.377).fract());
            assert_eq!(render_topk_blocked(&r, &p, x, 10).unwrap(), render_topk(&set, x, 10).unwrap());
        }
    }

    #[test]
    fn empty_shell_is_black() {
        let set = at(&[[0.05, 0.05]]);
        let blocks = vec![Rect::new(0.0, 0.0, 0.5, 1.0), Rect::new(0.5, 0.0, 1.0, 1.0)];
        let p = BspPartition::from_blocks(&set, blocks).unwrap();
        assert!(p.shell_members(1).is_empty());
        let r = Renderer::new(&set).unwrap();
        assert_eq!(render_topk_blocked(&r, &p, PixelCoord::new(0.9, 0.5), 10).unwrap(), [0.0; 3]);
    }

    #[test]
    fn recovered_tree_locates_identically() {
        let set: GaussianSet = (0..500)
            .map(|i| {
                let t = i as f64;
                Gaussian2D::isotropic([(t * 0.618034).fract(), (t * 0.7548776).fract()], 0.01, [0.5; 3])
            })
            .collect();
        let p = BspPartition::build(&set, 16).unwrap();
        let q = BspPartition::from_blocks(&set, p.blocks().to_vec()).unwrap();
        assert_eq!(q.block_count(), p.block_count());
        for i in 0..2000 {
            let x = PixelCoord::new((i as f64 * 0.1234567).fract(), (i as f64 * 0.7654321).fract());
            assert_eq!(p.locate_block(x), q.locate_block(x));
        }
        for k in 0..p.block_count() {
            assert_eq!(p.shell_members(k), q.shell_members(k));
        }
    }

    #[test]
    fn from_blocks_rejects_gaps_and_overlaps() {
        let set = at(&[[0.5, 0.5]]);
        let gap = vec![Rect::new(0.0, 0.0, 0.4, 1.0), Rect::new(0.5, 0.0, 1.0, 1.0)];
        assert!(matches!(BspPartition::from_blocks(&set, gap), Err(Error::CorruptBlocks(_))));
        let overlap = vec![Rect::new(0.0, 0.0, 0.6, 1.0), Rect::new(0.5, 0.0, 1.0, 1.0)];
        assert!(matches!(BspPartition::from_blocks(&set, overlap), Err(Error::CorruptBlocks(_))));
        let pinwheel = vec![
            Rect::new(0.0, 0.0, 0.6, 0.4),
            Rect::new(0.6, 0.0, 1.0, 0.6),
            Rect::new(0.4, 0.6, 1.0, 1.0),
            Rect::new(0.0, 0.4, 0.4, 1.0),
            Rect::new(0.4, 0.4, 0.6, 0.6),
        ];
        assert!(matches!(BspPartition::from_blocks(&set, pinwheel), Err(Error::CorruptBlocks(_))));
    }

    #[test]
    fn storage_is_eight_bytes_per_block() {
        let set: GaussianSet =
            (0..100).map(|i| Gaussian2D::isotropic([i as f64 / 100.0, 0.5], 0.01, [0.0; 3])).collect();
        let p = BspPartition::build(&set, 10).unwrap();
        assert_eq!(p.storage_bytes(), 8 * p.block_count());
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, scale: (f64, f64)) -> GaussianSet {
        (0..n)
            .map(|_| {
                let s1 = rng.gen_range(scale.0.ln()..scale.1.ln()).exp();
                let s2 = rng.gen_range(scale.0.ln()..scale.1.ln()).exp();
                Gaussian2D::new(
                    [rng.gen(), rng.gen()],
                    rng.gen_range(0.0..std::f64::consts::PI),
                    [s1, s2],
                    [rng.gen(), rng.gen(), rng.gen()],
                )
            })
            .collect()
    }

    #[test]
    fn locate_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set = random_set(&mut rng, 700, (0.01, 0.05));
        let p = BspPartition::build(&set, 20).unwrap();
        let mut xs: Vec<PixelCoord> = (0..1000).map(|_| PixelCoord::new(rng.gen(), rng.gen())).collect();
        // exercise split lines and the far edges too
        for b in p.blocks() {
            xs.push(PixelCoord::new(b.x1, b.y1));
            xs.push(PixelCoord::new(b.x2, b.y2));
        }
        for x in xs {
            let scan: Vec<usize> = (0..p.block_count()).filter(|&k| p.blocks()[k].contains([x.u, x.v])).collect();
            assert_eq!(scan, vec![p.locate_block(x)], "{x:?}");
        }
    }

    #[test]
    fn separated_clusters_render_identically() {
        // four tight clusters, far enough apart that no pixel's global top-K
        // leaves its shell
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let centers = [[0.125, 0.125], [0.875, 0.125], [0.125, 0.875], [0.875, 0.875]];
        let set: GaussianSet = centers
            .iter()
            .flat_map(|c| {
                (0..8)
                    .map(|_| {
                        let mu = [c[0] + rng.gen_range(-0.02..0.02), c[1] + rng.gen_range(-0.02..0.02)];
                        Gaussian2D::new(mu, rng.gen_range(0.0..3.0), [0.01, 0.015], [rng.gen(), rng.gen(), rng.gen()])
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let p = BspPartition::build(&set, 8).unwrap();
        assert_eq!(p.block_count(), 4);
        let r = Renderer::new(&set).unwrap();
        for _ in 0..2000 {
            let x = PixelCoord::new(rng.gen(), rng.gen());
            let global = render_topk(&set, x, 8).unwrap();
            let sel = crate::render::select_top_k(&set, x, 8).unwrap();
            let shell = p.shell_members(p.locate_block(x));
            if sel.indices.iter().all(|i| shell.contains(&(*i as u32))) {
                assert_eq!(render_topk_blocked(&r, &p, x, 8).unwrap(), global);
            }
        }
        // every pixel near a cluster keeps its full top-K inside the shell
        for c in centers {
            let x = PixelCoord::new(c[0] + 0.01, c[1] - 0.01);
            assert_eq!(render_topk_blocked(&r, &p, x, 8).unwrap(), render_topk(&set, x, 8).unwrap());
        }
    }

    #[test]
    fn blocked_render_stays_close_on_dense_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let set = random_set(&mut rng, 8000, (0.003, 0.015));
        let p = BspPartition::build(&set, 64).unwrap();
        let r = Renderer::new(&set).unwrap();
        let mut diff = 0.0;
        for _ in 0..10_000 {
            let x = PixelCoord::new(rng.gen(), rng.gen());
            let a = render_topk_blocked(&r, &p, x, 10).unwrap();
            let b = r.render(x, 10);
            diff += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() / 3.0;
        }
        assert!(diff / 10_000.0 < 0.01, "{}", diff / 10_000.0);
    }

    pub(crate) fn check_invariants(set: &GaussianSet, p: &BspPartition, n_max: usize) {
        let area: f64 = p.blocks().iter().map(Rect::area).sum();
        assert!((area - 1.0).abs() < 1e-9);
        for i in 0..p.block_count() {
            for j in i + 1..p.block_count() {
                assert!(!p.blocks()[i].overlaps(&p.blocks()[j]));
            }
        }
        let mut seen = vec![false; set.len()];
        for k in 0..p.block_count() {
            assert!(p.members(k).len() <= n_max);
            let (b, s) = (p.blocks()[k], p.shells()[k]);
            assert!(s.x1 <= b.x1 && s.y1 <= b.y1 && s.x2 >= b.x2 && s.y2 >= b.y2);
            for &i in p.members(k) {
                assert!(!seen[i]);
                seen[i] = true;
                assert!(p.shell_members(k).contains(&(i as u32)));
            }
            for (i, g) in set.iter().enumerate() {
                if s.contains_closed(g.mu) {
                    assert!(p.shell_members(k).contains(&(i as u32)));
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn partition_invariants(seed in any::<u64>(), n in 1usize..600, n_max in 1usize..80, clusters in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gs = random_set(&mut rng, n, (0.001, 0.1)).into_vec();
            for _ in 0..clusters {
                let at = [rng.gen(), rng.gen()];
                gs.extend((0..rng.gen_range(1..3 * n_max + 2)).map(|_| Gaussian2D::isotropic(at, 0.01, [0.5; 3])));
            }
            let set = GaussianSet::new(gs);
            let p = BspPartition::build(&set, n_max).unwrap();
            check_invariants(&set, &p, n_max);
        }
    }
}
