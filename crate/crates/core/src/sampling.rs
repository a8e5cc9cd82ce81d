//! Bilinear texture sampling with edge-clamp addressing.
//!
//! Texel `(row, col)` of an `h`x`w` texture has its center at
//! `u = (col + 0.5) / w`, `v = (row + 0.5) / h`; `v = 0` is the top row.

/// The four texels (flat indices `row * w + col`) and weights that make up
/// a bilinear lookup. Weights sum to one; clamped edges may repeat an index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    /// Horizontal and vertical interpolation fractions.
    pub frac: [f64; 2],
}

impl Footprint {
    pub fn new(u: f64, v: f64, h: usize, w: usize) -> Self {
        let (c0, c1, fx) = axis(u, w);
        let (r0, r1, fy) = axis(v, h);
        Self {
            index: [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1],
            weight: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
            frac: [fx, fy],
        }
    }

    /// Interpolates a single-channel buffer. Evaluated as nested lerps so
    /// that constant data is reproduced exactly.
    #[inline]
    pub fn scalar(&self, data: &[f64]) -> f64 {
        let [fx, fy] = self.frac;
        let d = self.index.map(|i| data[i]);
        let top = d[0] + fx * (d[1] - d[0]);
        let bottom = d[2] + fx * (d[3] - d[2]);
        top + fy * (bottom - top)
    }

    /// Interpolates an interleaved RGB buffer.
    #[inline]
    pub fn rgb(&self, data: &[f64]) -> [f64; 3] {
        let [fx, fy] = self.frac;
        [0, 1, 2].map(|ch| {
            let d = self.index.map(|i| data[i * 3 + ch]);
            let top = d[0] + fx * (d[1] - d[0]);
            let bottom = d[2] + fx * (d[3] - d[2]);
            top + fy * (bottom - top)
        })
    }
}

#[inline]
fn axis(t: f64, n: usize) -> (usize, usize, f64) {
    let x = t * n as f64 - 0.5;
    let x0 = x.floor();
    let frac = x - x0;
    let last = n as isize - 1;
    let i0 = (x0 as isize).clamp(0, last) as usize;
    let i1 = (x0 as isize + 1).clamp(0, last) as usize;
    (i0, i1, frac)
}
