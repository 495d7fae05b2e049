//! Row orderings for the rank estimators.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::points::PointSet;

/// Indices sorted by value, ties kept in row order.
pub fn sort_path(xu: &[f64]) -> Result<Vec<usize>> {
    if xu.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN input in rank ordering"));
    }
    let mut idx: Vec<usize> = (0..xu.len()).collect();
    idx.sort_by(|&a, &b| xu[a].partial_cmp(&xu[b]).unwrap_or(Ordering::Equal));
    Ok(idx)
}

/// Greedy nearest-neighbour path on standardized coordinates.
///
/// Starts at the row with the smallest first coordinate and repeatedly moves
/// to the closest unvisited row (Euclidean, ties to the lower row index).
/// Candidates are looked up on a uniform grid with about two rows per cell,
/// scanning rings of cells outward until no closer row can remain.
pub fn nn_path(xu: &PointSet) -> Result<Vec<usize>> {
    let n = xu.len();
    let d = xu.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    if xu.as_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "non-finite input in nearest-neighbour ordering",
        ));
    }

    // Standardize each column.
    let mut pts = xu.as_flat().to_vec();
    for j in 0..d {
        let mean = (0..n).map(|i| pts[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (pts[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for i in 0..n {
            let v = pts[i * d + j] - mean;
            pts[i * d + j] = if sd > 0.0 { v / sd } else { v };
        }
    }
    let point = |i: usize| &pts[i * d..(i + 1) * d];

    let grid = Grid::build(&pts, n, d);
    let mut cells = grid.fill(&pts, n);
    let mut slot = vec![0usize; n];
    for members in cells.iter() {
        for (pos, &i) in members.iter().enumerate() {
            slot[i] = pos;
        }
    }

    let first_col = xu.column(0);
    let mut current = (0..n)
        .min_by(|&a, &b| {
            first_col[a]
                .partial_cmp(&first_col[b])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        })
        .expect("n > 0");

    let mut path = Vec::with_capacity(n);
    let remove = |i: usize, cells: &mut Vec<Vec<usize>>, slot: &mut Vec<usize>| {
        let c = grid.cell_of(point(i));
        let pos = slot[i];
        let members = &mut cells[c];
        members.swap_remove(pos);
        if pos < members.len() {
            slot[members[pos]] = pos;
        }
    };

    remove(current, &mut cells, &mut slot);
    path.push(current);
    let mut offsets = vec![0i64; d];
    while path.len() < n {
        let here = point(current);
        let origin = grid.coords_of(here);
        let mut best: Option<(f64, usize)> = None;
        let mut r = 0i64;
        loop {
            grid.for_each_ring_cell(&origin, r, &mut offsets, |c| {
                for &i in &cells[c] {
                    let dist: f64 = point(i)
                        .iter()
                        .zip(here)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    let better = match best {
                        None => true,
                        Some((bd, bi)) => dist < bd || (dist == bd && i < bi),
                    };
                    if better {
                        best = Some((dist, i));
                    }
                }
            });
            if let Some((bd, _)) = best {
                // Rows outside rings 0..=r are at least r cell widths away.
                let reach = r as f64 * grid.min_width;
                if bd.sqrt() < reach {
                    break;
                }
            }
            if r > grid.max_extent {
                break;
            }
            r += 1;
        }
        let (_, next) = best.expect("unvisited rows remain");
        remove(next, &mut cells, &mut slot);
        path.push(next);
        current = next;
    }
    Ok(path)
}

struct Grid {
    d: usize,
    lower: Vec<f64>,
    width: Vec<f64>,
    cells_per_axis: usize,
    min_width: f64,
    max_extent: i64,
}

impl Grid {
    fn build(pts: &[f64], n: usize, d: usize) -> Grid {
        let per_axis = ((n as f64 / 2.0).powf(1.0 / d as f64).floor() as usize).clamp(1, 1 << 12);
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for i in 0..n {
            for j in 0..d {
                lower[j] = lower[j].min(pts[i * d + j]);
                upper[j] = upper[j].max(pts[i * d + j]);
            }
        }
        let width: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(lo, hi)| {
                let w = (hi - lo) / per_axis as f64;
                if w > 0.0 {
                    w
                } else {
                    1.0
                }
            })
            .collect();
        let min_width = width.iter().cloned().fold(f64::INFINITY, f64::min);
        Grid {
            d,
            lower,
            width,
            cells_per_axis: per_axis,
            min_width,
            max_extent: per_axis as i64,
        }
    }

    fn coords_of(&self, p: &[f64]) -> Vec<i64> {
        (0..self.d)
            .map(|j| {
                let c = ((p[j] - self.lower[j]) / self.width[j]).floor() as i64;
                c.clamp(0, self.cells_per_axis as i64 - 1)
            })
            .collect()
    }

    fn index(&self, coords: &[i64]) -> usize {
        coords
            .iter()
            .fold(0usize, |acc, &c| acc * self.cells_per_axis + c as usize)
    }

    fn cell_of(&self, p: &[f64]) -> usize {
        self.index(&self.coords_of(p))
    }

    fn fill(&self, pts: &[f64], n: usize) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.cells_per_axis.pow(self.d as u32)];
        for i in 0..n {
            cells[self.cell_of(&pts[i * self.d..(i + 1) * self.d])].push(i);
        }
        cells
    }

    /// Calls `f` on every in-grid cell at Chebyshev distance exactly `r` from `origin`.
    fn for_each_ring_cell(
        &self,
        origin: &[i64],
        r: i64,
        offsets: &mut [i64],
        mut f: impl FnMut(usize),
    ) {
        let g = self.cells_per_axis as i64;
        let d = self.d;
        let mut coords = vec![0i64; d];
        let mut visit = |offsets: &[i64], f: &mut dyn FnMut(usize)| {
            for j in 0..d {
                let c = origin[j] + offsets[j];
                if c < 0 || c >= g {
                    return;
                }
                coords[j] = c;
            }
            f(self.index(&coords));
        };
        if r == 0 {
            offsets.iter_mut().for_each(|o| *o = 0);
            visit(offsets, &mut f);
            return;
        }
        // Face where axis `pin` sits at ±r; earlier axes stay strictly inside
        // so each ring cell is visited once.
        for pin in 0..d {
            for side in [-r, r] {
                let lo = |j: usize| if j < pin { -r + 1 } else { -r };
                let hi = |j: usize| if j < pin { r - 1 } else { r };
                if (0..d).any(|j| j != pin && lo(j) > hi(j)) {
                    continue;
                }
                for (j, o) in offsets.iter_mut().enumerate() {
                    *o = if j == pin { side } else { lo(j) };
                }
                loop {
                    visit(offsets, &mut f);
                    let mut j = 0;
                    loop {
                        if j == d {
                            break;
                        }
                        if j == pin {
                            j += 1;
                            continue;
                        }
                        if offsets[j] < hi(j) {
                            offsets[j] += 1;
                            break;
                        }
                        offsets[j] = lo(j);
                        j += 1;
                    }
                    if j == d {
                        break;
                    }
                }
            }
        }
    }
}
