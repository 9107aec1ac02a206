//! `HLRD1` binary container. All integers and floats are little-endian.
//!
//! ```text
//! magic        5 bytes  "HLRD1"
//! family       u8       0 binomial, 1 poisson, 2 chi-squared
//! params       3 x 8    binomial: n u64, q_grid u64, 0u64
//!                       poisson:  k_max u64, lambda_max f64, lambda_grid u64
//!                       chisq:    x_max f64, x_grid u64, k_max u64
//! eps          f64
//! rows, cols   u64, u64
//! builder      u8       0 constructive, 1 aca
//! domain       u8       0 unit square, 1 quarter plane
//! extent       f64
//! level_max    i32
//! n_lowrank    u64
//! n_dense      u64
//! lowrank table, n_lowrank records:
//!     level i32, index u64, rank u64, row_lo u64, row_hi u64, col_lo u64, col_hi u64
//! dense table, n_dense records:
//!     kind u8 (0 diagonal, 1 singular row, 2 singular column), index u64,
//!     row_lo u64, row_hi u64, col_lo u64, col_hi u64
//! payload      f64s: for each low-rank block U then V (column-major,
//!              (row_hi-row_lo) x rank and (col_hi-col_lo) x rank), then each
//!              dense block row-major
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{Builder, DenseBlock, DenseKind, DenseSlot, HMatrix, Layout, LowRankBlock};
use crate::error::{Error, Result};
use crate::families::FamilySpec;
use crate::partition::Domain;

pub const MAGIC: &[u8; 5] = b"HLRD1";

fn io(e: std::io::Error) -> Error {
    Error::Container(e.to_string())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b).map_err(io)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn i32(&mut self, v: i32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(io)?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Container("size overflows usize".into()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn write_container<W: Write>(h: &HMatrix, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.bytes(MAGIC)?;
    match h.spec {
        FamilySpec::Binomial { n, q_grid } => {
            w.u8(0)?;
            w.u64(n as u64)?;
            w.u64(q_grid as u64)?;
            w.u64(0)?;
        }
        FamilySpec::Poisson {
            k_max,
            lambda_max,
            lambda_grid,
        } => {
            w.u8(1)?;
            w.u64(k_max as u64)?;
            w.f64(lambda_max)?;
            w.u64(lambda_grid as u64)?;
        }
        FamilySpec::ChiSquared { x_max, x_grid, k_max } => {
            w.u8(2)?;
            w.f64(x_max)?;
            w.u64(x_grid as u64)?;
            w.u64(k_max as u64)?;
        }
    }
    w.f64(h.eps)?;
    w.u64(h.rows() as u64)?;
    w.u64(h.cols() as u64)?;
    w.u8(match h.builder {
        Builder::Constructive => 0,
        Builder::Aca => 1,
    })?;
    let domain = h.layout.domain();
    w.u8(match domain {
        Domain::UnitSquare { .. } => 0,
        Domain::QuarterPlane { .. } => 1,
    })?;
    w.f64(domain.extent())?;
    w.i32(domain.level_max())?;
    w.u64(h.lowrank.len() as u64)?;
    w.u64(h.dense.len() as u64)?;
    for b in &h.lowrank {
        w.i32(b.level)?;
        w.u64(b.index)?;
        w.u64(b.rank() as u64)?;
        for v in [b.rows.start, b.rows.end, b.cols.start, b.cols.end] {
            w.u64(v as u64)?;
        }
    }
    for d in &h.dense {
        w.u8(d.slot.kind.tag())?;
        w.u64(d.slot.index)?;
        for v in [d.slot.rows.start, d.slot.rows.end, d.slot.cols.start, d.slot.cols.end] {
            w.u64(v as u64)?;
        }
    }
    for b in &h.lowrank {
        for v in b.u.iter().chain(b.v.iter()) {
            w.f64(*v)?;
        }
    }
    for d in &h.dense {
        for i in 0..d.data.nrows() {
            for j in 0..d.data.ncols() {
                w.f64(d.data[(i, j)])?;
            }
        }
    }
    w.0.flush().map_err(io)
}

fn read_matrix<R: Read>(r: &mut Reader<R>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f64()?);
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn read_container<R: Read>(input: R) -> Result<HMatrix> {
    let mut r = Reader(input);
    if &r.array::<5>()? != MAGIC {
        return Err(Error::Container("bad magic, not an HLRD1 file".into()));
    }
    let spec = match r.u8()? {
        0 => {
            let n = r.usize()?;
            let q_grid = r.usize()?;
            r.u64()?;
            FamilySpec::Binomial { n, q_grid }
        }
        1 => FamilySpec::Poisson {
            k_max: r.usize()?,
            lambda_max: r.f64()?,
            lambda_grid: r.usize()?,
        },
        2 => FamilySpec::ChiSquared {
            x_max: r.f64()?,
            x_grid: r.usize()?,
            k_max: r.usize()?,
        },
        t => return Err(Error::Container(format!("unknown family tag {t}"))),
    };
    let eps = r.f64()?;
    let (rows, cols) = (r.usize()?, r.usize()?);
    if rows != spec.rows() || cols != spec.cols() {
        return Err(Error::Container(format!(
            "dimensions {rows}x{cols} disagree with the family ({}x{})",
            spec.rows(),
            spec.cols()
        )));
    }
    let builder = match r.u8()? {
        0 => Builder::Constructive,
        1 => Builder::Aca,
        t => return Err(Error::Container(format!("unknown builder tag {t}"))),
    };
    let kind = r.u8()?;
    let extent = r.f64()?;
    let level_max = r.i32()?;
    let domain = match kind {
        0 => Domain::UnitSquare { level_max },
        1 => Domain::QuarterPlane { extent, level_max },
        t => return Err(Error::Container(format!("unknown domain tag {t}"))),
    };
    let layout = Layout::with_domain(spec, domain)?;
    let (n_lowrank, n_dense) = (r.usize()?, r.usize()?);
    let check = |lo: usize, hi: usize, len: usize| {
        if lo > hi || hi > len {
            Err(Error::Container(format!("range {lo}..{hi} outside 0..{len}")))
        } else {
            Ok(lo..hi)
        }
    };
    let mut table = Vec::with_capacity(n_lowrank.min(1 << 20));
    for _ in 0..n_lowrank {
        let level = r.i32()?;
        let index = r.u64()?;
        let rank = r.usize()?;
        let rr = check(r.usize()?, r.usize()?, rows)?;
        let cr = check(r.usize()?, r.usize()?, cols)?;
        table.push((level, index, rank, rr, cr));
    }
    let mut slots = Vec::with_capacity(n_dense.min(1 << 20));
    for _ in 0..n_dense {
        let tag = r.u8()?;
        let kind = DenseKind::from_tag(tag).ok_or_else(|| Error::Container(format!("unknown dense tag {tag}")))?;
        let index = r.u64()?;
        let rr = check(r.usize()?, r.usize()?, rows)?;
        let cr = check(r.usize()?, r.usize()?, cols)?;
        slots.push(DenseSlot {
            kind,
            index,
            rows: rr,
            cols: cr,
        });
    }
    let mut lowrank = Vec::with_capacity(table.len());
    for (level, index, rank, rows, cols) in table {
        let u = read_matrix(&mut r, rows.len(), rank)?;
        let v = read_matrix(&mut r, cols.len(), rank)?;
        lowrank.push(LowRankBlock {
            level,
            index,
            rows,
            cols,
            u,
            v,
        });
    }
    let mut dense = Vec::with_capacity(slots.len());
    for slot in slots {
        let (nr, nc) = (slot.rows.len(), slot.cols.len());
        let t = read_matrix(&mut r, nc, nr)?;
        dense.push(DenseBlock {
            slot,
            data: t.transpose(),
        });
    }
    Ok(HMatrix {
        spec,
        eps,
        builder,
        layout,
        lowrank,
        dense,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let h = HMatrix::compress(FamilySpec::chi_squared(80.0, 70), 1e-7, Builder::Aca).unwrap();
        let mut buf = Vec::new();
        write_container(&h, &mut buf).unwrap();
        assert_eq!(&buf[..5], MAGIC);
        let back = read_container(buf.as_slice()).unwrap();
        assert_eq!(back.lowrank, h.lowrank);
        assert_eq!(back.dense, h.dense);
        assert_eq!(back.spec, h.spec);
        assert_eq!(back.stored_entries(), h.stored_entries());
        let mut again = Vec::new();
        write_container(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_container(&b"HLRD2xxxx"[..]), Err(Error::Container(_))));
        let h = HMatrix::compress(FamilySpec::binomial(40), 1e-6, Builder::Aca).unwrap();
        let mut buf = Vec::new();
        write_container(&h, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_container(buf.as_slice()), Err(Error::Container(_))));
    }
}
