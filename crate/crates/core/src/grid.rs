//! Siddon-style ray tracing of straight link paths through a regular grid.
//!
//! Cell `(r, c)` covers `x ∈ [x_ref + c·dx, x_ref + (c+1)·dx]` and
//! `y ∈ [y_ref + r·dy, y_ref + (r+1)·dy]`. With `origin = (-0.5, -0.5)` and
//! unit spacing, cell centres sit on integer coordinates `(c, r)`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{par, Error, Result};

/// Tolerance under which two crossing parameters are considered the same
/// crossing (grid-corner hits).
pub const CROSSING_DEDUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub origin: [f64; 2],
    pub spacing: [f64; 2],
}

impl GridSpec {
    pub fn new(height: usize, width: usize, origin: [f64; 2], spacing: [f64; 2]) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("grid must be non-empty, got {height}x{width}")));
        }
        if !(spacing[0] > 0.0 && spacing[1] > 0.0) || !spacing.iter().all(|s| s.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing:?}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteCoordinate("grid origin"));
        }
        Ok(Self {
            height,
            width,
            origin,
            spacing,
        })
    }

    /// Unit-spaced grid with cell centres at integer coordinates.
    pub fn unit(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            origin: [-0.5, -0.5],
            spacing: [1.0, 1.0],
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Row-major flat index of cell `(r, c)`.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.spacing[0],
            self.origin[1] + (row as f64 + 0.5) * self.spacing[1],
        ]
    }

    /// Cell centres in row-major order.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .map(|(r, c)| self.cell_center(r, c))
            .collect()
    }

    /// Half the length of the grid diagonal.
    pub fn half_diagonal(&self) -> f64 {
        let w = self.width as f64 * self.spacing[0];
        let h = self.height as f64 * self.spacing[1];
        0.5 * (w * w + h * h).sqrt()
    }

    fn to_unit(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
        ]
    }

    /// Cell containing `p`, if inside the grid.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let u = self.to_unit(p);
        let (c, r) = (u[0].floor(), u[1].floor());
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSegment {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl LinkSegment {
    pub fn new(start: [f64; 2], end: [f64; 2]) -> Self {
        Self { start, end }
    }

    pub fn length(&self) -> f64 {
        let dx = self.end[0] - self.start[0];
        let dy = self.end[1] - self.start[1];
        dx.hypot(dy)
    }

    pub fn midpoint(&self) -> [f64; 2] {
        self.point_at(0.5)
    }

    pub fn point_at(&self, t: f64) -> [f64; 2] {
        [
            self.start[0] + t * (self.end[0] - self.start[0]),
            self.start[1] + t * (self.end[1] - self.start[1]),
        ]
    }

    pub fn reversed(&self) -> Self {
        Self {
            start: self.end,
            end: self.start,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.start.iter().chain(self.end.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteCoordinate("link segment"));
        }
        if self.length() == 0.0 {
            return Err(Error::DegenerateSegment);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellWeight {
    pub row: usize,
    pub col: usize,
    pub length: f64,
}

/// Sparse per-cell intersection lengths of one link, in traversal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkWeights {
    pub entries: Vec<CellWeight>,
    pub total_inside: f64,
}

impl LinkWeights {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Weighted sum `Σ δ_k f(k)` over stored cells, `k` being the row-major
    /// index on a grid of the given width.
    pub fn weighted_sum(&self, width: usize, f: impl Fn(usize) -> f64) -> f64 {
        self.entries
            .iter()
            .map(|e| e.length * f(e.row * width + e.col))
            .sum()
    }

    /// Dense row-major `height x width` matrix of lengths.
    pub fn to_dense(&self, grid: &GridSpec) -> Vec<f64> {
        let mut out = vec![0.0; grid.cells()];
        for e in &self.entries {
            out[grid.index(e.row, e.col)] += e.length;
        }
        out
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.row == row && e.col == col)
            .map(|e| e.length)
            .sum()
    }
}

/// Intersection lengths of `seg` with the cells of `grid`. Sub-segments whose
/// midpoint falls outside the grid are dropped.
pub fn trace_segment(grid: &GridSpec, seg: &LinkSegment) -> Result<LinkWeights> {
    seg.validate()?;
    let s0 = grid.to_unit(seg.start);
    let s1 = grid.to_unit(seg.end);
    let d = [s1[0] - s0[0], s1[1] - s0[1]];
    let length = seg.length();

    let mut ts = vec![0.0, 1.0];
    push_crossings(&mut ts, s0[0], d[0], grid.width);
    push_crossings(&mut ts, s0[1], d[1], grid.height);
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|b, a| (*b - *a).abs() <= CROSSING_DEDUP_TOL);
    // dedup may keep a value within tolerance of 1.0 next to 1.0 itself
    if let Some(last) = ts.last_mut() {
        *last = 1.0;
    }

    let mut entries: Vec<CellWeight> = Vec::with_capacity(ts.len());
    for w in ts.windows(2) {
        let (ta, tb) = (w[0], w[1]);
        let dt = tb - ta;
        if dt <= 0.0 {
            continue;
        }
        let tm = 0.5 * (ta + tb);
        let (u, v) = (s0[0] + tm * d[0], s0[1] + tm * d[1]);
        let (c, r) = (u.floor(), v.floor());
        if c < 0.0 || r < 0.0 || c as usize >= grid.width || r as usize >= grid.height {
            continue;
        }
        let (row, col) = (r as usize, c as usize);
        let delta = length * dt;
        match entries.last_mut() {
            Some(last) if last.row == row && last.col == col => last.length += delta,
            _ => entries.push(CellWeight {
                row,
                col,
                length: delta,
            }),
        }
    }
    entries.retain(|e| e.length > 0.0);
    let total_inside = entries.iter().map(|e| e.length).sum();
    Ok(LinkWeights {
        entries,
        total_inside,
    })
}

/// Crossing parameters `t ∈ (0, 1)` with the integer lines `0..=n` of one
/// normalized axis.
fn push_crossings(ts: &mut Vec<f64>, start: f64, delta: f64, n: usize) {
    if delta == 0.0 {
        return;
    }
    let end = start + delta;
    let lo = start.min(end).ceil().max(0.0);
    let hi = start.max(end).floor().min(n as f64);
    if lo > hi {
        return;
    }
    let mut k = lo;
    while k <= hi {
        let t = (k - start) / delta;
        if t > 0.0 && t < 1.0 {
            ts.push(t);
        }
        k += 1.0;
    }
}

/// Traces every segment of a topology, preserving order.
pub fn build_network_weights(grid: &GridSpec, segments: &[LinkSegment]) -> Result<Vec<LinkWeights>> {
    par::try_map_indexed(segments.len(), |i| {
        trace_segment(grid, &segments[i]).map_err(|e| Error::Segment {
            index: i,
            source: Box::new(e),
        })
    })
}

/// One row of a topology file: `link_id,x0,y0,x1,y1,a,b,sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub link_id: String,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl LinkRecord {
    pub fn segment(&self) -> LinkSegment {
        LinkSegment::new([self.x0, self.y0], [self.x1, self.y1])
    }
}

pub fn read_topology<R: Read>(reader: R) -> Result<Vec<LinkRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<LinkRecord>, _>>()?;
    for (i, r) in records.iter().enumerate() {
        r.segment().validate().map_err(|e| Error::Segment {
            index: i,
            source: Box::new(e),
        })?;
    }
    Ok(records)
}

pub fn write_topology<W: Write>(writer: W, links: &[LinkRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for l in links {
        wtr.serialize(l)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_topology(path: &Path) -> Result<Vec<LinkRecord>> {
    read_topology(std::fs::File::open(path)?)
}
