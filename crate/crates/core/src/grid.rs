//! 2D occupancy grid over the world `x`/`z` plane.
//!
//! Row `i`, column `j` covers `x in [x0 + j*cell, x0 + (j+1)*cell)` and
//! `z in [z0 + i*cell, z0 + (i+1)*cell)`. Grid rows use `#` for walls,
//! `o` for cells occupied by the target object and `.` for free space.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Object,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cell_size: f64,
    /// World `(x, z)` of the corner of cell `(0, 0)`.
    pub origin: [f64; 2],
    pub rows: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    rows: usize,
    cols: usize,
    cell_size: f64,
    origin: [f64; 2],
    cells: Vec<Cell>,
}

const DIAG: f64 = std::f64::consts::SQRT_2;

impl OccupancyGrid {
    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        if !(spec.cell_size > 0.0) {
            return Err(Error::InvalidScene("occupancy cell_size must be positive".into()));
        }
        let rows = spec.rows.len();
        let cols = spec.rows.first().map_or(0, |r| r.chars().count());
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidScene("occupancy grid is empty".into()));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        for (i, line) in spec.rows.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::InvalidScene(format!(
                    "occupancy row {i} has {} cells, expected {cols}",
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Wall,
                    'o' => Cell::Object,
                    other => {
                        return Err(Error::InvalidScene(format!(
                            "unknown occupancy symbol `{other}` in row {i}"
                        )))
                    }
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            cell_size: spec.cell_size,
            origin: spec.origin,
            cells,
        })
    }

    pub fn spec(&self) -> GridSpec {
        let rows = (0..self.rows)
            .map(|r| {
                (0..self.cols)
                    .map(|c| match self.cells[r * self.cols + c] {
                        Cell::Free => '.',
                        Cell::Wall => '#',
                        Cell::Object => 'o',
                    })
                    .collect()
            })
            .collect();
        GridSpec {
            cell_size: self.cell_size,
            origin: self.origin,
            rows,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell(&self, idx: usize) -> Cell {
        self.cells[idx]
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.cells[idx] == Cell::Free
    }

    pub fn free_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cells.len()).filter(|&i| self.is_free(i))
    }

    /// Cell index containing world point `(x, z)`.
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        let c = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let r = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some(r as usize * self.cols + c as usize)
    }

    /// World `(x, z)` of a cell center.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (r, c) = (idx / self.cols, idx % self.cols);
        [
            self.origin[0] + (c as f64 + 0.5) * self.cell_size,
            self.origin[1] + (r as f64 + 0.5) * self.cell_size,
        ]
    }

    /// 8-connected moves out of `idx` through cells accepted by `pass`, with
    /// their lengths in meters. Diagonal moves may not cut a blocked corner.
    pub fn neighbors(&self, idx: usize, pass: impl Fn(usize) -> bool) -> Vec<(usize, f64)> {
        let (r, c) = ((idx / self.cols) as isize, (idx % self.cols) as isize);
        let at = |rr: isize, cc: isize| -> Option<usize> {
            (rr >= 0 && cc >= 0 && rr < self.rows as isize && cc < self.cols as isize)
                .then(|| rr as usize * self.cols + cc as usize)
        };
        let mut out = Vec::with_capacity(8);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let Some(n) = at(r + dr, c + dc) else { continue };
                if !pass(n) {
                    continue;
                }
                if dr != 0 && dc != 0 {
                    let side_a = at(r + dr, c).is_some_and(&pass);
                    let side_b = at(r, c + dc).is_some_and(&pass);
                    if !(side_a && side_b) {
                        continue;
                    }
                    out.push((n, DIAG * self.cell_size));
                } else {
                    out.push((n, self.cell_size));
                }
            }
        }
        out
    }

    /// Dijkstra from `sources` over cells accepted by `pass`. Returns the
    /// distance to every cell (infinity when unreachable) and the
    /// predecessor of each reached cell.
    pub fn distances(
        &self,
        sources: &[usize],
        pass: impl Fn(usize) -> bool,
    ) -> (Vec<f64>, Vec<Option<usize>>) {
        let mut dist = vec![f64::INFINITY; self.cells.len()];
        let mut prev = vec![None; self.cells.len()];
        let mut heap = BinaryHeap::new();
        for &s in sources {
            dist[s] = 0.0;
            heap.push(Entry { dist: 0.0, idx: s });
        }
        while let Some(Entry { dist: d, idx }) = heap.pop() {
            if d > dist[idx] {
                continue;
            }
            for (n, w) in self.neighbors(idx, &pass) {
                let nd = d + w;
                if nd < dist[n] {
                    dist[n] = nd;
                    prev[n] = Some(idx);
                    heap.push(Entry { dist: nd, idx: n });
                }
            }
        }
        (dist, prev)
    }

    /// Length in meters of the shortest 8-connected path between the cells
    /// containing `start` and `goal`; infinity when they are disconnected.
    pub fn shortest_path_length(&self, start: [f64; 2], goal: [f64; 2]) -> Result<f64> {
        let s = self.free_cell_at(start)?;
        let g = self.free_cell_at(goal)?;
        let (dist, _) = self.distances(&[s], |i| self.is_free(i));
        Ok(dist[g])
    }

    pub fn free_cell_at(&self, p: [f64; 2]) -> Result<usize> {
        match self.locate(p) {
            Some(i) if self.is_free(i) => Ok(i),
            _ => Err(Error::Blocked(format!("({:.3}, {:.3})", p[0], p[1]))),
        }
    }

    /// True when the straight segment from `a` to `b` crosses no wall cell
    /// (and no object cell unless `through_object`). Endpoint cells are not
    /// tested.
    pub fn line_of_sight(&self, a: [f64; 2], b: [f64; 2], through_object: bool) -> bool {
        let (dx, dz) = (b[0] - a[0], b[1] - a[1]);
        let len = (dx * dx + dz * dz).sqrt();
        let steps = ((len / (self.cell_size * 0.25)).ceil() as usize).max(1);
        let start = self.locate(a);
        let end = self.locate(b);
        for k in 1..steps {
            let t = k as f64 / steps as f64;
            let Some(idx) = self.locate([a[0] + t * dx, a[1] + t * dz]) else {
                return false;
            };
            if Some(idx) == start || Some(idx) == end {
                continue;
            }
            match self.cells[idx] {
                Cell::Wall => return false,
                Cell::Object if !through_object => return false,
                _ => {}
            }
        }
        true
    }
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on distance, then on index, so expansion order is total.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
