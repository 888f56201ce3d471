//! Cell-centred rectangular grids and the fields living on them.
//!
//! Values are stored row-major (`index = j * nx + i`) and each value is read
//! both as the cell average and as the point value at the cell centre.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub x0: f64,
    pub y0: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid2D {
    pub fn new(x0: f64, y0: f64, nx: usize, ny: usize, dx: f64, dy: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need nx, ny >= 2, got {nx}x{ny}"
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "cell widths must be positive, got dx={dx} dy={dy}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self {
            x0,
            y0,
            nx,
            ny,
            dx,
            dy,
        })
    }

    /// Grid of `nx × ny` cells covering `[x0, x1] × [y0, y1]`.
    pub fn over_box(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidGrid(format!(
                "empty box [{x0},{x1}]x[{y0},{y1}]"
            )));
        }
        Self::new(x0, y0, nx, ny, (x1 - x0) / nx as f64, (y1 - y0) / ny as f64)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    // Centres are laid out symmetrically about the middle of the box, so a
    // grid centred on the origin has exactly mirror-symmetric coordinates.
    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (self.x0 + 0.5 * self.nx as f64 * self.dx)
            + (i as f64 - 0.5 * (self.nx - 1) as f64) * self.dx
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (self.y0 + 0.5 * self.ny as f64 * self.dy)
            + (j as f64 - 0.5 * (self.ny - 1) as f64) * self.dy
    }

    /// The same cells translated by `shift`.
    pub fn translated(&self, shift: Vec2) -> Self {
        Self {
            x0: self.x0 + shift.x,
            y0: self.y0 + shift.y,
            ..*self
        }
    }

    /// Grid of `nx × ny` cells of the given total size, centred on the origin.
    pub fn centered(width: f64, height: f64, nx: usize, ny: usize) -> Result<Self> {
        let (dx, dy) = (width / nx as f64, height / ny as f64);
        Self::new(
            -(0.5 * nx as f64 * dx),
            -(0.5 * ny as f64 * dy),
            nx,
            ny,
            dx,
            dy,
        )
    }

    #[inline]
    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(self.x_center(i), self.y_center(j))
    }

    pub fn x1(&self) -> f64 {
        self.x0 + self.nx as f64 * self.dx
    }

    pub fn y1(&self) -> f64 {
        self.y0 + self.ny as f64 * self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Whole domain as a box.
    pub fn bounds(&self) -> BBox {
        BBox {
            xmin: self.x0,
            xmax: self.x1(),
            ymin: self.y0,
            ymax: self.y1(),
        }
    }
}

/// One real value per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every cell centre.
    pub fn from_fn(grid: Grid2D, f: impl Fn(Vec2) -> f64 + Sync) -> Self {
        let mut values = vec![0.0; grid.len()];
        values
            .par_chunks_mut(grid.nx)
            .enumerate()
            .for_each(|(j, row)| {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = f(grid.cell_center(i, j));
                }
            });
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.grid.nx..(j + 1) * self.grid.nx]
    }

    /// `∫ f dx` by the midpoint rule.
    /// `Σ f(index, value) · cell_area` in the fixed reduction order of [`grid_sum`].
    fn sum_cells(&self, f: impl Fn(usize, f64) -> f64 + Sync) -> f64 {
        let g = &self.grid;
        let sum = grid_sum(g, 0.0, |i, j| {
            let k = g.index(i, j);
            Ok::<f64, std::convert::Infallible>(f(k, self.values[k]))
        });
        match sum {
            Ok(v) => v * g.cell_area(),
            Err(never) => match never {},
        }
    }

    /// Same values on the grid translated by `shift`.
    pub fn translated(&self, shift: Vec2) -> Self {
        Self {
            grid: self.grid.translated(shift),
            values: self.values.clone(),
        }
    }

    pub fn total(&self) -> f64 {
        self.sum_cells(|_, v| v)
    }

    /// `∫ |f| dx`.
    pub fn l1_norm(&self) -> f64 {
        self.sum_cells(|_, v| v.abs())
    }

    /// `∫ |f - g| dx`; both fields must share the grid.
    pub fn l1_distance(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "l1_distance needs a common grid");
        self.sum_cells(|k, v| (v - other.values[k]).abs())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Linear combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        assert_eq!(self.grid, other.grid);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        ScalarField {
            grid: self.grid,
            values,
        }
    }

    /// CSV export: a `#` header line with the grid, then one line per row `j`.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::with_capacity(g.len() * 20);
        let _ = writeln!(
            out,
            "# nx={} ny={} x0={} y0={} dx={} dy={}",
            g.nx, g.ny, g.x0, g.y0, g.dx, g.dy
        );
        for j in 0..g.ny {
            for (i, v) in self.row(j).iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::FieldFormat("empty input".into()))?;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::FieldFormat("missing `#` header".into()))?;
        let mut nx = None;
        let mut ny = None;
        let (mut x0, mut y0, mut dx, mut dy) = (None, None, None, None);
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::FieldFormat(format!("bad header token `{kv}`")))?;
            let bad = |_| Error::FieldFormat(format!("bad header value `{kv}`"));
            match k {
                "nx" => nx = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "ny" => ny = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "x0" => x0 = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "y0" => y0 = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "dx" => dx = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "dy" => dy = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(Error::FieldFormat(format!("unknown header key `{k}`"))),
            }
        }
        let missing = |k: &str| Error::FieldFormat(format!("header lacks `{k}`"));
        let grid = Grid2D::new(
            x0.ok_or_else(|| missing("x0"))?,
            y0.ok_or_else(|| missing("y0"))?,
            nx.ok_or_else(|| missing("nx"))?,
            ny.ok_or_else(|| missing("ny"))?,
            dx.ok_or_else(|| missing("dx"))?,
            dy.ok_or_else(|| missing("dy"))?,
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for (j, line) in lines.enumerate() {
            if j >= grid.ny {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(Error::FieldFormat("too many rows".into()));
            }
            let before = values.len();
            for tok in line.split(',') {
                let v = tok
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::FieldFormat(format!("row {j}: bad value `{tok}`")))?;
                values.push(v);
            }
            if values.len() - before != grid.nx {
                return Err(Error::FieldFormat(format!(
                    "row {j}: expected {} values",
                    grid.nx
                )));
            }
        }
        Self::from_values(grid, values)
    }

    /// Plain-text greyscale image, top row = largest `y`.
    pub fn to_pgm(&self) -> String {
        let g = &self.grid;
        let max = self.max_abs();
        let mut out = String::with_capacity(g.len() * 4 + 32);
        let _ = writeln!(out, "P2\n{} {}\n255", g.nx, g.ny);
        for j in (0..g.ny).rev() {
            let row = self.row(j);
            for (i, v) in row.iter().enumerate() {
                let level = if max > 0.0 {
                    (255.0 * v.abs() / max).round() as u32
                } else {
                    0
                };
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{level}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

/// Two components per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField2 {
    grid: Grid2D,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField2 {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Vec2 {
        let k = self.grid.index(i, j);
        Vec2::new(self.x[k], self.y[k])
    }

    pub fn x_component(&self) -> &[f64] {
        &self.x
    }

    pub fn y_component(&self) -> &[f64] {
        &self.y
    }
}

/// Axis-aligned box `[xmin, xmax] × [ymin, ymax]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Self {
        Self {
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn inflate(&self, r: f64) -> BBox {
        BBox::new(self.xmin - r, self.xmax + r, self.ymin - r, self.ymax + r)
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.xmin >= self.xmin
            && other.xmax <= self.xmax
            && other.ymin >= self.ymin
            && other.ymax <= self.ymax
    }

    pub fn contains_point(&self, p: Vec2) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Smallest `r ≥ 0` with `other ⊆ self.inflate(r)`.
    pub fn outward_growth(&self, other: &BBox) -> f64 {
        [
            self.xmin - other.xmin,
            other.xmax - self.xmax,
            self.ymin - other.ymin,
            other.ymax - self.ymax,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    /// Area of the Minkowski sum of the box with a disc of radius `r`.
    pub fn inflated_area(&self, r: f64) -> f64 {
        self.area() + 2.0 * r * (self.width() + self.height()) + std::f64::consts::PI * r * r
    }
}

/// `Σ_{i,j} f(i,j) w(center(i,j)) dx dy`.
///
/// Rows are summed in parallel; every row is summed left to right and the row
/// sums are then added in row order, so the result does not depend on the
/// thread count.
pub fn integrate_weighted(f: &ScalarField, w: impl Fn(Vec2) -> f64 + Sync) -> Result<f64> {
    let g = *f.grid();
    let total = grid_sum(&g, 0.0, |i, j| {
        let c = g.cell_center(i, j);
        let wc = w(c);
        if !wc.is_finite() {
            return Err(Error::WeightNotFinite { x: c.x, y: c.y });
        }
        Ok(f.values[g.index(i, j)] * wc)
    })?;
    Ok(total * g.cell_area())
}

/// Central differences inside, first-order one-sided differences on the
/// boundary cells.
pub fn gradient_field(f: &ScalarField) -> VectorField2 {
    let g = *f.grid();
    let (nx, ny) = (g.nx, g.ny);
    let v = f.values();
    let mut out = VectorField2::zeros(g);
    out.x
        .par_chunks_mut(nx)
        .zip(out.y.par_chunks_mut(nx))
        .enumerate()
        .for_each(|(j, (gx, gy))| {
            for i in 0..nx {
                let at = |ii: usize, jj: usize| v[jj * nx + ii];
                gx[i] = if i == 0 {
                    (at(1, j) - at(0, j)) / g.dx
                } else if i == nx - 1 {
                    (at(nx - 1, j) - at(nx - 2, j)) / g.dx
                } else {
                    (at(i + 1, j) - at(i - 1, j)) / (2.0 * g.dx)
                };
                gy[i] = if j == 0 {
                    (at(i, 1) - at(i, 0)) / g.dy
                } else if j == ny - 1 {
                    (at(i, ny - 1) - at(i, ny - 2)) / g.dy
                } else {
                    (at(i, j + 1) - at(i, j - 1)) / (2.0 * g.dy)
                };
            }
        });
    out
}

/// Noise floor used for support tracking: `1e-12 · max|f|`.
pub fn default_support_threshold(f: &ScalarField) -> f64 {
    1e-12 * f.max_abs()
}

/// Smallest box holding every cell centre where `|f| > threshold`.
pub fn support_bbox(f: &ScalarField, threshold: f64) -> Option<BBox> {
    let g = f.grid();
    let (mut imin, mut imax, mut jmin, mut jmax) = (usize::MAX, 0, usize::MAX, 0);
    for j in 0..g.ny {
        for (i, v) in f.row(j).iter().enumerate() {
            if v.abs() > threshold {
                imin = imin.min(i);
                imax = imax.max(i);
                jmin = jmin.min(j);
                jmax = jmax.max(j);
            }
        }
    }
    (imin != usize::MAX).then(|| {
        BBox::new(
            g.x_center(imin),
            g.x_center(imax),
            g.y_center(jmin),
            g.y_center(jmax),
        )
    })
}

/// Adds `f(k)` for `k` in `0..n`, combining `k` with its mirror `n - 1 - k`
/// first, so reversing the inputs reproduces the sum bit for bit (and an
/// antisymmetric input gives exactly the negated sum).
#[inline]
fn mirror_fold<T, E>(
    n: usize,
    zero: T,
    mut f: impl FnMut(usize) -> std::result::Result<T, E>,
) -> std::result::Result<T, E>
where
    T: Copy + std::ops::Add<Output = T>,
{
    let mut acc = zero;
    for k in 0..n / 2 {
        acc = acc + (f(k)? + f(n - 1 - k)?);
    }
    if n % 2 == 1 {
        acc = acc + f(n / 2)?;
    }
    Ok(acc)
}

/// Sums `cell(i, j)` over all cells: rows in parallel, then a fixed-order
/// reduction, so the result does not depend on the thread count and is exactly
/// mirror-covariant in both directions.
pub(crate) fn grid_sum<T, E>(
    grid: &Grid2D,
    zero: T,
    cell: impl Fn(usize, usize) -> std::result::Result<T, E> + Sync,
) -> std::result::Result<T, E>
where
    T: Copy + Send + Sync + std::ops::Add<Output = T>,
    E: Send,
{
    let rows: Vec<std::result::Result<T, E>> = (0..grid.ny)
        .into_par_iter()
        .map(|j| mirror_fold(grid.nx, zero, |i| cell(i, j)))
        .collect();
    let mut rows = rows.into_iter().map(Some).collect::<Vec<_>>();
    mirror_fold(grid.ny, zero, |j| rows[j].take().expect("row used once"))
}
