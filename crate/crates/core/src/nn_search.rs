//! Exact nearest-neighbour queries over 3-D point sets.
//!
//! Small sets are scanned linearly; larger ones are bucketed into a uniform
//! grid searched in growing shells. Both strategies return the same index,
//! resolving equal distances toward the lower index.

use nalgebra::Point3;
use rayon::prelude::*;

/// Point count at which the grid replaces the linear scan.
pub const BRUTE_FORCE_LIMIT: usize = 20_000;

#[inline]
fn dist2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
struct Grid {
    origin: Point3<f64>,
    cell: f64,
    dims: [usize; 3],
    /// Start offsets into `order`, one per cell plus a terminator.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl Grid {
    fn new(points: &[Point3<f64>]) -> Self {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        let extent = hi - lo;
        let longest = extent.max().max(f64::MIN_POSITIVE);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = longest / per_axis;
        let dims = [0, 1, 2].map(|i| ((extent[i] / cell).floor() as usize + 1).min(1 << 10));
        let mut grid = Self {
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let cells: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; total + 1];
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &c) in cells.iter().enumerate() {
            order[fill[c]] = i;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        grid
    }

    fn cell_of(&self, p: &Point3<f64>) -> [usize; 3] {
        [0, 1, 2].map(|i| {
            let t = ((p[i] - self.origin[i]) / self.cell).floor();
            if t <= 0.0 {
                0
            } else {
                (t as usize).min(self.dims[i] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// Distance from `q` to the outside of the block of cells within
    /// Chebyshev radius `r` of `center`; infinite once the block covers the
    /// grid.
    fn clearance(&self, q: &Point3<f64>, center: [usize; 3], r: usize) -> f64 {
        let mut clear = f64::INFINITY;
        let mut covers = true;
        for i in 0..3 {
            let lo_cell = center[i].saturating_sub(r);
            let hi_cell = (center[i] + r).min(self.dims[i] - 1);
            if lo_cell > 0 {
                covers = false;
                let lo = self.origin[i] + lo_cell as f64 * self.cell;
                clear = clear.min(q[i] - lo);
            }
            if hi_cell + 1 < self.dims[i] {
                covers = false;
                let hi = self.origin[i] + (hi_cell + 1) as f64 * self.cell;
                clear = clear.min(hi - q[i]);
            }
        }
        if covers {
            f64::INFINITY
        } else {
            clear.max(0.0)
        }
    }

    fn nearest(&self, points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
        let center = self.cell_of(q);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_r = *self.dims.iter().max().unwrap();
        for r in 0..=max_r {
            self.visit_shell(center, r, |cell| {
                for &i in &self.order[self.starts[cell]..self.starts[cell + 1]] {
                    let d = dist2(&points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        best = (i, d);
                    }
                }
            });
            let clear = self.clearance(q, center, r);
            // strict: an equally distant point outside may have a lower index
            if best.1 < clear * clear || clear.is_infinite() {
                break;
            }
        }
        best
    }

    fn visit_shell(&self, center: [usize; 3], r: usize, mut visit: impl FnMut(usize)) {
        let range = |i: usize| {
            let lo = center[i] as isize - r as isize;
            let hi = center[i] as isize + r as isize;
            (lo.max(0), hi.min(self.dims[i] as isize - 1))
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        let r = r as isize;
        let c = center.map(|v| v as isize);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let ring = (x - c[0]).abs().max((y - c[1]).abs()).max((z - c[2]).abs());
                    if ring == r {
                        visit(self.flat([x as usize, y as usize, z as usize]));
                    }
                }
            }
        }
    }
}

/// Index over a fixed point set answering exact nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point3<f64>>,
    grid: Option<Grid>,
}

impl PointIndex {
    /// Panics on an empty point set.
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        assert!(!points.is_empty(), "nearest-neighbour index over no points");
        let grid = (points.len() >= BRUTE_FORCE_LIMIT).then(|| Grid::new(&points));
        Self { points, grid }
    }

    /// Always scan linearly, regardless of size.
    pub fn brute_force(points: Vec<Point3<f64>>) -> Self {
        assert!(!points.is_empty(), "nearest-neighbour index over no points");
        Self { points, grid: None }
    }

    /// Always use the grid, regardless of size.
    pub fn gridded(points: Vec<Point3<f64>>) -> Self {
        assert!(!points.is_empty(), "nearest-neighbour index over no points");
        let grid = Some(Grid::new(&points));
        Self { points, grid }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn uses_grid(&self) -> bool {
        self.grid.is_some()
    }

    /// Index and squared distance of the closest point.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        match &self.grid {
            Some(g) => g.nearest(&self.points, q),
            None => {
                let mut best = (0, dist2(&self.points[0], q));
                for (i, p) in self.points.iter().enumerate().skip(1) {
                    let d = dist2(p, q);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                best
            }
        }
    }

    /// Nearest index for every query, computed in parallel.
    pub fn nearest_all(&self, queries: &[Point3<f64>]) -> Vec<usize> {
        queries.par_iter().map(|q| self.nearest(q).0).collect()
    }
}
