//! Dyadic staircase partition of the off-diagonal region.
//!
//! At level `l` the block `B(l,k)` has side `w = 2^-l` and p-interval
//! `[k w, (k+1) w]`. For even `k` the q-interval is `[(k+1) w, (k+2) w]`
//! (above the diagonal), for odd `k` it is `[(k-1) w, k w]` (below). Each block
//! touches the diagonal at one corner. The diagonal strip left over at the
//! finest level is kept as dense cells.
//!
//! Two domains are supported: the unit square (levels `1..=l_max`) and a
//! truncated quarter plane `[0, A]^2` with `A = 2^a` (levels `1-a..=l_max`).
//! Both are the same binary tree over `[0, extent]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finest-level cells are capped at `2^MAX_DEPTH`.
const MAX_DEPTH: i32 = 26;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Domain {
    UnitSquare { level_max: i32 },
    QuarterPlane { extent: f64, level_max: i32 },
}

impl Domain {
    pub fn extent(&self) -> f64 {
        match *self {
            Domain::UnitSquare { .. } => 1.0,
            Domain::QuarterPlane { extent, .. } => extent,
        }
    }

    pub fn level_max(&self) -> i32 {
        match *self {
            Domain::UnitSquare { level_max } | Domain::QuarterPlane { level_max, .. } => level_max,
        }
    }

    /// Coarsest level.
    pub fn level_min(&self) -> i32 {
        match *self {
            Domain::UnitSquare { .. } => 1,
            Domain::QuarterPlane { extent, .. } => 1 - extent.log2().round() as i32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains_closed(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_open(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    /// Above the diagonal (`p < q`).
    Even,
    /// Below the diagonal (`p > q`).
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub level: i32,
    pub index: u64,
    pub parity: Parity,
    pub p_interval: Interval,
    pub q_interval: Interval,
}

impl Block {
    pub fn new(level: i32, index: u64) -> Self {
        let w = (-level as f64).exp2();
        let k = index as f64;
        let p_interval = Interval::new(k * w, (k + 1.0) * w);
        let (parity, q_interval) = if index.is_multiple_of(2) {
            (Parity::Even, Interval::new((k + 1.0) * w, (k + 2.0) * w))
        } else {
            (Parity::Odd, Interval::new((k - 1.0) * w, k * w))
        };
        Block {
            level,
            index,
            parity,
            p_interval,
            q_interval,
        }
    }

    pub fn side(&self) -> f64 {
        self.p_interval.width()
    }

    /// Coordinate `c` of the corner `(c, c)` where the block touches the diagonal.
    pub fn corner(&self) -> f64 {
        match self.parity {
            Parity::Even => self.p_interval.hi,
            Parity::Odd => self.p_interval.lo,
        }
    }

    pub fn contains_closed(&self, p: f64, q: f64) -> bool {
        self.p_interval.contains_closed(p) && self.q_interval.contains_closed(q)
    }

    pub fn contains_open(&self, p: f64, q: f64) -> bool {
        self.p_interval.contains_open(p) && self.q_interval.contains_open(q)
    }

    /// Range of finest-level cells covered by the p-interval and q-interval.
    pub fn cell_ranges(&self, level_max: i32) -> (std::ops::Range<u64>, std::ops::Range<u64>) {
        let s = 1u64 << (level_max - self.level);
        let k = self.index;
        let rows = k * s..(k + 1) * s;
        let cols = match self.parity {
            Parity::Even => (k + 1) * s..(k + 2) * s,
            Parity::Odd => (k - 1) * s..k * s,
        };
        (rows, cols)
    }
}

/// Finest-level diagonal square `[i h, (i+1) h]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseCell {
    pub index: u64,
    pub interval: Interval,
}

impl DenseCell {
    pub fn contains_closed(&self, p: f64, q: f64) -> bool {
        self.interval.contains_closed(p) && self.interval.contains_closed(q)
    }

    pub fn contains_open(&self, p: f64, q: f64) -> bool {
        self.interval.contains_open(p) && self.interval.contains_open(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Block(Block),
    Dense(DenseCell),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub domain: Domain,
    /// Sorted by `(level, index)`.
    pub blocks: Vec<Block>,
    pub dense_remainder: Vec<DenseCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilingReport {
    pub samples: usize,
    pub covered: f64,
    pub overlaps: usize,
}

fn power_of_two_exponent(x: f64) -> Option<i32> {
    if !(x.is_finite() && x > 0.0) {
        return None;
    }
    let a = x.log2().round();
    (a.exp2() == x).then_some(a as i32)
}

impl PartitionScheme {
    pub fn build(domain: Domain) -> Result<Self> {
        let (level_min, level_max) = match domain {
            Domain::UnitSquare { level_max } => {
                if level_max < 1 {
                    return Err(Error::InvalidArgument(format!(
                        "finest level must be >= 1, got {level_max}"
                    )));
                }
                (1, level_max)
            }
            Domain::QuarterPlane { extent, level_max } => {
                let a = power_of_two_exponent(extent).ok_or(Error::ExtentNotPowerOfTwo(extent))?;
                if a < 0 {
                    return Err(Error::ExtentNotPowerOfTwo(extent));
                }
                if level_max < 1 - a {
                    return Err(Error::InvalidArgument(format!(
                        "finest level {level_max} is coarser than the top level {}",
                        1 - a
                    )));
                }
                (1 - a, level_max)
            }
        };
        let extent = domain.extent();
        let depth = level_max - level_min + 1;
        if depth > MAX_DEPTH {
            return Err(Error::InvalidArgument(format!("partition depth {depth} too large")));
        }

        let mut blocks = Vec::new();
        for level in level_min..=level_max {
            let count = (extent * (level as f64).exp2()) as u64;
            blocks.extend((0..count).map(|k| Block::new(level, k)));
        }
        let h = (-level_max as f64).exp2();
        let cells = (extent / h) as u64;
        let dense_remainder = (0..cells)
            .map(|i| DenseCell {
                index: i,
                interval: Interval::new(i as f64 * h, (i + 1) as f64 * h),
            })
            .collect();
        Ok(PartitionScheme {
            domain,
            blocks,
            dense_remainder,
        })
    }

    pub fn extent(&self) -> f64 {
        self.domain.extent()
    }

    pub fn level_min(&self) -> i32 {
        self.domain.level_min()
    }

    pub fn level_max(&self) -> i32 {
        self.domain.level_max()
    }

    /// Width of a finest-level cell.
    pub fn cell_width(&self) -> f64 {
        (-self.level_max() as f64).exp2()
    }

    pub fn cell_count(&self) -> u64 {
        self.dense_remainder.len() as u64
    }

    /// Finest-level cell containing coordinate `x` (half-open, clamped into range).
    pub fn cell_of(&self, x: f64) -> u64 {
        let n = self.cell_count();
        let c = (x / self.cell_width()).floor();
        if c <= 0.0 {
            0
        } else {
            (c as u64).min(n - 1)
        }
    }

    pub fn block(&self, level: i32, index: u64) -> Option<&Block> {
        let first = self.blocks.partition_point(|b| b.level < level);
        let pos = first + index as usize;
        self.blocks
            .get(pos)
            .filter(|b| b.level == level && b.index == index)
    }

    /// Block owning the pair of finest-level cells `(row_cell, col_cell)`, or
    /// `None` for a diagonal cell.
    pub fn block_of_cells(&self, row_cell: u64, col_cell: u64) -> Option<&Block> {
        if row_cell == col_cell {
            return None;
        }
        // the two cells first separate at the level of the highest differing bit
        let split = 63 - (row_cell ^ col_cell).leading_zeros() as i32;
        let level = self.level_max() - split;
        let index = row_cell >> split;
        self.block(level, index)
    }

    /// Region containing `(p, q)`. Points on shared boundaries go to the block
    /// with the smallest `(level, index)`; dense cells are used only when no
    /// block contains the point.
    pub fn locate(&self, p: f64, q: f64) -> Result<Region> {
        let extent = self.extent();
        if !(p.is_finite() && q.is_finite()) || p < 0.0 || q < 0.0 || p > extent || q > extent {
            return Err(Error::OutOfDomain { p, q });
        }
        for level in self.level_min()..=self.level_max() {
            let w = (-level as f64).exp2();
            let scaled = p / w;
            let base = scaled.floor();
            let mut candidates = [None, None];
            if scaled == base && base >= 1.0 {
                candidates[0] = Some(base as u64 - 1);
            }
            candidates[1] = Some(base as u64);
            for k in candidates.into_iter().flatten() {
                if let Some(b) = self.block(level, k) {
                    if b.contains_closed(p, q) {
                        return Ok(Region::Block(*b));
                    }
                }
            }
        }
        let h = self.cell_width();
        let scaled = p / h;
        let base = scaled.floor();
        let mut candidates = [None, None];
        if scaled == base && base >= 1.0 {
            candidates[0] = Some(base as u64 - 1);
        }
        candidates[1] = Some(base as u64);
        for i in candidates.into_iter().flatten() {
            if let Some(cell) = self.dense_remainder.get(i as usize) {
                if cell.contains_closed(p, q) {
                    return Ok(Region::Dense(*cell));
                }
            }
        }
        Err(Error::OutOfDomain { p, q })
    }

    /// Number of regions whose interior contains `(p, q)`.
    ///
    /// Blocks at one level have disjoint p-interiors, so only one candidate per
    /// level (and one dense cell) needs checking.
    pub fn count_containing(&self, p: f64, q: f64) -> usize {
        let mut count = 0;
        for level in self.level_min()..=self.level_max() {
            let w = (-level as f64).exp2();
            let k = (p / w).floor();
            if k < 0.0 {
                continue;
            }
            if let Some(b) = self.block(level, k as u64) {
                if b.contains_open(p, q) {
                    count += 1;
                }
            }
        }
        let i = (p / self.cell_width()).floor();
        if i >= 0.0 {
            if let Some(cell) = self.dense_remainder.get(i as usize) {
                if cell.contains_open(p, q) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Sample uniform interior points and count coverage and overlaps.
    pub fn verify_tiling(&self, samples: usize, seed: u64) -> TilingReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let extent = self.extent();
        let mut covered = 0usize;
        let mut overlaps = 0usize;
        for _ in 0..samples {
            let p = rng.random::<f64>() * extent;
            let q = rng.random::<f64>() * extent;
            match self.count_containing(p, q) {
                0 => {}
                1 => covered += 1,
                _ => {
                    covered += 1;
                    overlaps += 1;
                }
            }
        }
        TilingReport {
            samples,
            covered: if samples == 0 {
                0.0
            } else {
                covered as f64 / samples as f64
            },
            overlaps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(s: &PartitionScheme) -> Vec<(i32, u64)> {
        s.blocks.iter().map(|b| (b.level, b.index)).collect()
    }

    #[test]
    fn unit_square_level_two() {
        let s = PartitionScheme::build(Domain::UnitSquare { level_max: 2 }).unwrap();
        assert_eq!(keys(&s), vec![(1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (2, 3)]);
        assert_eq!(s.dense_remainder.len(), 4);
    }

    #[test]
    fn unit_square_level_one() {
        let s = PartitionScheme::build(Domain::UnitSquare { level_max: 1 }).unwrap();
        assert_eq!(s.blocks.len(), 2);
        assert_eq!(s.blocks[0].p_interval, Interval::new(0.0, 0.5));
        assert_eq!(s.blocks[0].q_interval, Interval::new(0.5, 1.0));
        assert_eq!(s.blocks[1].p_interval, Interval::new(0.5, 1.0));
        assert_eq!(s.blocks[1].q_interval, Interval::new(0.0, 0.5));
        for (p, q) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
            assert_eq!(s.count_containing(p, q), 1);
        }
    }

    #[test]
    fn block_counts() {
        for l in 1..=8 {
            let s = PartitionScheme::build(Domain::UnitSquare { level_max: l }).unwrap();
            assert_eq!(s.blocks.len(), (1usize << (l + 1)) - 2);
            assert_eq!(s.dense_remainder.len(), 1usize << l);
        }
    }

    #[test]
    fn quarter_plane_top_block() {
        let s = PartitionScheme::build(Domain::QuarterPlane {
            extent: 16.0,
            level_max: 0,
        })
        .unwrap();
        let b = s.block(-3, 1).unwrap();
        assert_eq!(b.p_interval, Interval::new(8.0, 16.0));
        assert_eq!(b.q_interval, Interval::new(0.0, 8.0));
        assert_eq!(s.level_min(), -3);
        match s.locate(10.0, 0.2).unwrap() {
            Region::Block(b) => assert_eq!((b.level, b.index), (-3, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn locate_examples() {
        let s = PartitionScheme::build(Domain::UnitSquare { level_max: 3 }).unwrap();
        match s.locate(0.3, 0.8).unwrap() {
            Region::Block(b) => assert_eq!((b.level, b.index, b.parity), (1, 0, Parity::Even)),
            other => panic!("{other:?}"),
        }
        match s.locate(0.1, 0.1).unwrap() {
            Region::Dense(c) => assert!(c.contains_closed(0.1, 0.1)),
            other => panic!("{other:?}"),
        }
        // shared corner of (1,0) and (1,1)
        match s.locate(0.5, 0.5).unwrap() {
            Region::Block(b) => assert_eq!((b.level, b.index), (1, 0)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(s.locate(1.5, 0.2), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn rejects_bad_domains() {
        assert!(matches!(
            PartitionScheme::build(Domain::QuarterPlane {
                extent: 12.0,
                level_max: 2
            }),
            Err(Error::ExtentNotPowerOfTwo(_))
        ));
        assert!(PartitionScheme::build(Domain::UnitSquare { level_max: 0 }).is_err());
        assert!(PartitionScheme::build(Domain::QuarterPlane {
            extent: 8.0,
            level_max: -3
        })
        .is_err());
    }

    #[test]
    fn cells_resolve_to_blocks() {
        let s = PartitionScheme::build(Domain::UnitSquare { level_max: 4 }).unwrap();
        let n = s.cell_count();
        for a in 0..n {
            for b in 0..n {
                match s.block_of_cells(a, b) {
                    None => assert_eq!(a, b),
                    Some(block) => {
                        let (rows, cols) = block.cell_ranges(4);
                        assert!(rows.contains(&a) && cols.contains(&b));
                    }
                }
            }
        }
    }

    #[test]
    fn tiling_small() {
        let s = PartitionScheme::build(Domain::UnitSquare { level_max: 6 }).unwrap();
        let r = s.verify_tiling(10_000, 7);
        assert_eq!(r.covered, 1.0);
        assert_eq!(r.overlaps, 0);
    }
}
