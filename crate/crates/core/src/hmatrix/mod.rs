//! Hierarchical (HODLR-style) compression of a family matrix.
//!
//! Rows and columns are placed in the dyadic partition by their kernel
//! coordinates `p` and `q`. Off-diagonal blocks are stored as low-rank factors,
//! the finest diagonal cells and the rows/columns where the Stirling form is
//! singular are stored entrywise.

mod container;

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::FamilySpec;
use crate::partition::{Block, Domain, PartitionScheme};
use crate::separated::{
    aca_factors, build_constructive_on_grid, build_kl, AcaTolerance, LowRank, Truncation,
};
use crate::divergence::DivergenceKind;

pub use container::{read_container, write_container, MAGIC};

/// Target number of indices per finest cell.
pub const LEAF_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builder {
    Constructive,
    Aca,
}

impl Builder {
    pub fn as_str(self) -> &'static str {
        match self {
            Builder::Constructive => "constructive",
            Builder::Aca => "aca",
        }
    }
}

/// Placement of matrix indices in the partition.
#[derive(Debug, Clone)]
pub struct Layout {
    pub spec: FamilySpec,
    pub scheme: PartitionScheme,
    /// Row indices (regular rows only) of each finest cell.
    pub row_cells: Vec<Range<usize>>,
    pub col_cells: Vec<Range<usize>>,
    pub regular_rows: Range<usize>,
    pub regular_cols: Range<usize>,
}

/// An off-diagonal block with its index ranges.
#[derive(Debug, Clone)]
pub struct BlockSlot {
    pub block: Block,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

fn intersect(a: &Range<usize>, b: &Range<usize>) -> Range<usize> {
    let lo = a.start.max(b.start);
    let hi = a.end.min(b.end).max(lo);
    lo..hi
}

/// Index ranges of each cell, given a monotone coordinate per index.
fn cell_ranges(scheme: &PartitionScheme, coords: impl Fn(usize) -> f64, len: usize) -> Vec<Range<usize>> {
    let cells = scheme.cell_count() as usize;
    let cell: Vec<usize> = (0..len).map(|i| scheme.cell_of(coords(i)) as usize).collect();
    (0..cells)
        .map(|c| cell.partition_point(|&x| x < c)..cell.partition_point(|&x| x <= c))
        .collect()
}

impl Layout {
    /// Default layout: the unit square for binomial, otherwise the quarter plane
    /// `[0, A]^2` with `A` the smallest power of two covering all coordinates;
    /// depth chosen so that finest cells hold about [`LEAF_SIZE`] indices.
    pub fn new(spec: FamilySpec) -> Result<Self> {
        spec.validate()?;
        let size = spec.rows().max(spec.cols());
        let depth = ((size as f64 / LEAF_SIZE as f64).log2().ceil() as i32).max(1);
        Self::with_domain(spec, Self::default_domain(spec, depth))
    }

    fn default_domain(spec: FamilySpec, depth: i32) -> Domain {
        match spec {
            FamilySpec::Binomial { .. } => Domain::UnitSquare { level_max: depth },
            _ => {
                let map = spec.kernel_map();
                let top = map
                    .p_of_row
                    .apply(spec.rows() - 1)
                    .max(map.q_of_col.apply(spec.cols() - 1))
                    .max(1.0);
                let a = top.log2().ceil() as i32;
                Domain::QuarterPlane {
                    extent: (a as f64).exp2(),
                    level_max: depth - a,
                }
            }
        }
    }

    pub fn with_domain(spec: FamilySpec, domain: Domain) -> Result<Self> {
        spec.validate()?;
        let scheme = PartitionScheme::build(domain)?;
        let map = spec.kernel_map();
        let regular_rows = spec.regular_rows();
        let regular_cols = spec.regular_cols();
        let row_cells = cell_ranges(&scheme, |i| map.p_of_row.apply(i), spec.rows())
            .into_iter()
            .map(|r| intersect(&r, &regular_rows))
            .collect();
        let col_cells = cell_ranges(&scheme, |j| map.q_of_col.apply(j), spec.cols())
            .into_iter()
            .map(|r| intersect(&r, &regular_cols))
            .collect();
        Ok(Layout {
            spec,
            scheme,
            row_cells,
            col_cells,
            regular_rows,
            regular_cols,
        })
    }

    pub fn domain(&self) -> Domain {
        self.scheme.domain
    }

    fn span(cells: &[Range<usize>], range: Range<u64>) -> Range<usize> {
        let first = &cells[range.start as usize];
        let last = &cells[range.end as usize - 1];
        first.start..last.end.max(first.start)
    }

    /// Non-empty off-diagonal blocks, ordered by `(level, index)`.
    pub fn block_slots(&self) -> Vec<BlockSlot> {
        let level_max = self.scheme.level_max();
        self.scheme
            .blocks
            .iter()
            .filter_map(|b| {
                let (rc, cc) = b.cell_ranges(level_max);
                let rows = Self::span(&self.row_cells, rc);
                let cols = Self::span(&self.col_cells, cc);
                (!rows.is_empty() && !cols.is_empty()).then_some(BlockSlot {
                    block: *b,
                    rows,
                    cols,
                })
            })
            .collect()
    }

    /// Dense pieces: diagonal cells, singular rows, singular columns.
    pub fn dense_slots(&self) -> Vec<DenseSlot> {
        let mut out = Vec::new();
        for (c, (rows, cols)) in self.row_cells.iter().zip(&self.col_cells).enumerate() {
            if !rows.is_empty() && !cols.is_empty() {
                out.push(DenseSlot {
                    kind: DenseKind::Diagonal,
                    index: c as u64,
                    rows: rows.clone(),
                    cols: cols.clone(),
                });
            }
        }
        let all_cols = 0..self.spec.cols();
        for i in (0..self.spec.rows()).filter(|&i| self.spec.is_singular_row(i)) {
            out.push(DenseSlot {
                kind: DenseKind::SingularRow,
                index: i as u64,
                rows: i..i + 1,
                cols: all_cols.clone(),
            });
        }
        if !self.regular_rows.is_empty() {
            for j in (0..self.spec.cols()).filter(|&j| self.spec.is_singular_col(j)) {
                out.push(DenseSlot {
                    kind: DenseKind::SingularCol,
                    index: j as u64,
                    rows: self.regular_rows.clone(),
                    cols: j..j + 1,
                });
            }
        }
        out
    }

    /// Cell holding a regular row / column.
    fn row_cell(&self, i: usize) -> usize {
        self.row_cells.partition_point(|r| r.end <= i)
    }

    fn col_cell(&self, j: usize) -> usize {
        self.col_cells.partition_point(|r| r.end <= j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenseKind {
    Diagonal,
    SingularRow,
    SingularCol,
}

impl DenseKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            DenseKind::Diagonal => 0,
            DenseKind::SingularRow => 1,
            DenseKind::SingularCol => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DenseKind::Diagonal),
            1 => Some(DenseKind::SingularRow),
            2 => Some(DenseKind::SingularCol),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSlot {
    pub kind: DenseKind,
    /// Cell, row or column number depending on `kind`.
    pub index: u64,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankBlock {
    pub level: i32,
    pub index: u64,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// `rows x r`
    pub u: DMatrix<f64>,
    /// `cols x r`
    pub v: DMatrix<f64>,
}

impl LowRankBlock {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub slot: DenseSlot,
    pub data: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub stored_entries: usize,
    pub dense_equivalent: usize,
    pub ratio: f64,
    /// `(level, max rank)` for every level that has blocks.
    pub per_level_ranks: Vec<(i32, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub samples: usize,
    pub max_abs_error: f64,
    pub rms_error: f64,
}

#[derive(Debug, Clone)]
pub struct HMatrix {
    pub spec: FamilySpec,
    pub eps: f64,
    pub builder: Builder,
    pub layout: Layout,
    pub lowrank: Vec<LowRankBlock>,
    pub dense: Vec<DenseBlock>,
}

/// Low-rank factors of one block of the family matrix.
pub fn compress_block(spec: &FamilySpec, slot: &BlockSlot, eps: f64, builder: Builder) -> Result<LowRank> {
    let factors = match builder {
        Builder::Aca => {
            let rows = slot.rows.clone();
            let cols = slot.cols.clone();
            let oracle = |a: usize, b: usize| spec.entry_unchecked(rows.start + a, cols.start + b);
            aca_factors(oracle, rows.len(), cols.len(), AcaTolerance::Absolute(eps))?.factors
        }
        Builder::Constructive => {
            let map = spec.kernel_map();
            let p: Vec<f64> = slot.rows.clone().map(|i| map.p_of_row.apply(i)).collect();
            let q: Vec<f64> = slot.cols.clone().map(|j| map.q_of_col.apply(j)).collect();
            let b = &slot.block;
            let approx = match map.kind {
                DivergenceKind::KL => build_kl(b.p_interval, b.q_interval, map.n_eff, eps, &p, &q)?.0,
                kind => build_constructive_on_grid(b.p_interval, b.q_interval, kind, map.n_eff, eps, &p, &q)?.0,
            };
            let mut f = approx.factors();
            let rs: Vec<f64> = slot.rows.clone().map(|i| spec.row_factor(i)).collect();
            let cs: Vec<f64> = slot.cols.clone().map(|j| spec.col_factor(j)).collect();
            f.scale_rows(&rs);
            f.scale_cols(&cs);
            f
        }
    };
    Ok(factors.recompress(Truncation::absolute(eps)))
}

impl HMatrix {
    /// Compress with the default layout.
    pub fn compress(spec: FamilySpec, eps: f64, builder: Builder) -> Result<Self> {
        if spec.rows() < 4 || spec.cols() < 4 {
            return Err(Error::InvalidArgument(format!(
                "matrix must be at least 4x4, got {}x{}",
                spec.rows(),
                spec.cols()
            )));
        }
        Self::compress_with_layout(Layout::new(spec)?, eps, builder)
    }

    pub fn compress_with_layout(layout: Layout, eps: f64, builder: Builder) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps must lie in (0,1), got {eps}")));
        }
        let spec = layout.spec;
        let slots = layout.block_slots();
        let lowrank = slots
            .par_iter()
            .map(|slot| {
                let f = compress_block(&spec, slot, eps, builder).map_err(|e| Error::BlockFailure {
                    level: slot.block.level,
                    index: slot.block.index,
                    source: Box::new(e),
                })?;
                Ok(LowRankBlock {
                    level: slot.block.level,
                    index: slot.block.index,
                    rows: slot.rows.clone(),
                    cols: slot.cols.clone(),
                    u: f.u,
                    v: f.v,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dense = layout
            .dense_slots()
            .into_par_iter()
            .map(|slot| DenseBlock {
                data: spec.exact_block(slot.rows.clone(), slot.cols.clone()),
                slot,
            })
            .collect();
        Ok(HMatrix {
            spec,
            eps,
            builder,
            layout,
            lowrank,
            dense,
        })
    }

    /// Every entry stored exactly in one dense block.
    pub fn dense_only(spec: FamilySpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(spec)?;
        let data = spec.exact_block(0..spec.rows(), 0..spec.cols());
        Ok(HMatrix {
            spec,
            eps: 0.0,
            builder: Builder::Aca,
            lowrank: Vec::new(),
            dense: vec![DenseBlock {
                slot: DenseSlot {
                    kind: DenseKind::Diagonal,
                    index: 0,
                    rows: 0..spec.rows(),
                    cols: 0..spec.cols(),
                },
                data,
            }],
            layout,
        })
    }

    pub fn rows(&self) -> usize {
        self.spec.rows()
    }

    pub fn cols(&self) -> usize {
        self.spec.cols()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows()];
        for b in &self.lowrank {
            let xs = DVector::from_column_slice(&x[b.cols.clone()]);
            let t = b.v.tr_mul(&xs);
            let ys = &b.u * t;
            y[b.rows.clone()].iter_mut().zip(ys.iter()).for_each(|(a, v)| *a += v);
        }
        for d in &self.dense {
            let xs = DVector::from_column_slice(&x[d.slot.cols.clone()]);
            let ys = &d.data * xs;
            y[d.slot.rows.clone()].iter_mut().zip(ys.iter()).for_each(|(a, v)| *a += v);
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        for b in &self.lowrank {
            let block = &b.u * b.v.transpose();
            out.view_mut((b.rows.start, b.cols.start), (b.rows.len(), b.cols.len()))
                .copy_from(&block);
        }
        for d in &self.dense {
            out.view_mut((d.slot.rows.start, d.slot.cols.start), (d.slot.rows.len(), d.slot.cols.len()))
                .copy_from(&d.data);
        }
        out
    }

    /// Reconstructed entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> Result<f64> {
        let (rows, cols) = (self.rows(), self.cols());
        if i >= rows || j >= cols {
            return Err(Error::IndexOutOfRange { row: i, col: j, rows, cols });
        }
        let owner = |d: &&DenseBlock| d.slot.rows.contains(&i) && d.slot.cols.contains(&j);
        if let Some(d) = self.dense.iter().find(owner) {
            return Ok(d.data[(i - d.slot.rows.start, j - d.slot.cols.start)]);
        }
        let (ci, cj) = (self.layout.row_cell(i), self.layout.col_cell(j));
        let block = self
            .layout
            .scheme
            .block_of_cells(ci as u64, cj as u64)
            .ok_or(Error::IndexOutOfRange { row: i, col: j, rows, cols })?;
        let pos = self
            .lowrank
            .binary_search_by(|b| (b.level, b.index).cmp(&(block.level, block.index)))
            .map_err(|_| Error::IndexOutOfRange { row: i, col: j, rows, cols })?;
        let b = &self.lowrank[pos];
        let (a, c) = (i - b.rows.start, j - b.cols.start);
        Ok(b.u.row(a).dot(&b.v.row(c)))
    }

    /// Compare reconstructed entries against exact ones at random index pairs.
    pub fn verify(&self, samples: usize, seed: u64) -> Result<VerifyReport> {
        if samples == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst, mut sq) = (0.0f64, 0.0f64);
        for _ in 0..samples {
            let i = rng.random_range(0..self.rows());
            let j = rng.random_range(0..self.cols());
            let err = (self.entry(i, j)? - self.spec.entry_unchecked(i, j)).abs();
            worst = worst.max(err);
            sq += err * err;
        }
        Ok(VerifyReport {
            samples,
            max_abs_error: worst,
            rms_error: (sq / samples as f64).sqrt(),
        })
    }

    pub fn stored_entries(&self) -> usize {
        let lr: usize = self.lowrank.iter().map(|b| b.rank() * (b.rows.len() + b.cols.len())).sum();
        let dense: usize = self.dense.iter().map(|d| d.data.len()).sum();
        lr + dense
    }

    pub fn storage_report(&self) -> StorageReport {
        let stored_entries = self.stored_entries();
        let dense_equivalent = self.rows() * self.cols();
        let mut per_level_ranks: Vec<(i32, usize)> = Vec::new();
        for b in &self.lowrank {
            match per_level_ranks.last_mut() {
                Some((level, r)) if *level == b.level => *r = (*r).max(b.rank()),
                _ => per_level_ranks.push((b.level, b.rank())),
            }
        }
        StorageReport {
            stored_entries,
            dense_equivalent,
            ratio: stored_entries as f64 / dense_equivalent as f64,
            per_level_ranks,
        }
    }

    pub fn max_rank(&self) -> usize {
        self.lowrank.iter().map(LowRankBlock::rank).max().unwrap_or(0)
    }

    /// Number of stored pieces owning each entry; all ones for a valid matrix.
    pub fn ownership_counts(&self) -> DMatrix<u32> {
        let mut counts = DMatrix::zeros(self.rows(), self.cols());
        let ranges = self
            .lowrank
            .iter()
            .map(|b| (b.rows.clone(), b.cols.clone()))
            .chain(self.dense.iter().map(|d| (d.slot.rows.clone(), d.slot.cols.clone())));
        for (rows, cols) in ranges {
            for i in rows {
                for j in cols.clone() {
                    counts[(i, j)] += 1;
                }
            }
        }
        counts
    }
}

/// Wall time of `reps` compressed and dense matvecs, and the relative error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatvecTiming {
    pub compressed_seconds: f64,
    pub dense_seconds: f64,
    pub relative_error: f64,
}

pub fn time_matvec(h: &HMatrix, dense: &DMatrix<f64>, x: &[f64], reps: usize) -> Result<MatvecTiming> {
    let reps = reps.max(1);
    let xs = DVector::from_column_slice(x);
    let start = Instant::now();
    let mut y = h.matvec(x)?;
    for _ in 1..reps {
        y = h.matvec(x)?;
    }
    let compressed_seconds = start.elapsed().as_secs_f64() / reps as f64;
    let start = Instant::now();
    let mut yd = dense * &xs;
    for _ in 1..reps {
        yd = dense * &xs;
    }
    let dense_seconds = start.elapsed().as_secs_f64() / reps as f64;
    let diff: f64 = y.iter().zip(yd.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(MatvecTiming {
        compressed_seconds,
        dense_seconds,
        relative_error: diff / yd.norm(),
    })
}
