//! Masked scalar fields on uniform rectangular grids, finite-difference
//! operators, interpolation, node quadrature and the `gridtxt` text format.
//!
//! Node `(i, j)` sits at `(origin[0] + i·dx, origin[1] + j·dy)` and is stored
//! at linear index `j·nx + i` (row-major, rows are lines of constant x₂).

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{LmaError, Node, Result};

/// Geometry of a uniform grid, without any field data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub spacing: [f64; 2],
}

impl Grid {
    pub fn new(nx: usize, ny: usize, origin: [f64; 2], spacing: [f64; 2]) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(LmaError::InvalidGrid(format!("empty grid {nx}x{ny}")));
        }
        if !(spacing[0] > 0.0 && spacing[1] > 0.0) || !spacing.iter().all(|s| s.is_finite()) {
            return Err(LmaError::InvalidGrid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if !origin.iter().all(|o| o.is_finite()) {
            return Err(LmaError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Grid {
            nx,
            ny,
            origin,
            spacing,
        })
    }

    /// `n × n` nodes covering `[lo, hi]²` including both ends.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(LmaError::InvalidGrid(format!(
                "square grid needs n >= 2 and hi > lo (n={n}, [{lo}, {hi}])"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        Grid::new(n, n, [lo, lo], [h, h])
    }

    /// Rectangle `[x_lo, x_hi] × [y_lo, y_hi]` with `nx × ny` nodes.
    pub fn rect(nx: usize, ny: usize, x: [f64; 2], y: [f64; 2]) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(LmaError::InvalidGrid("rect grid needs at least 2x2 nodes".into()));
        }
        let dx = (x[1] - x[0]) / (nx - 1) as f64;
        let dy = (y[1] - y[0]) / (ny - 1) as f64;
        Grid::new(nx, ny, [x[0], y[0]], [dx, dy])
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
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node_of(&self, k: usize) -> Node {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.spacing[0]
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.spacing[1]
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        [self.x(i), self.y(j)]
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.y(self.ny - 1)
    }

    /// Nearest node to a point, clamped into the grid.
    pub fn nearest(&self, p: [f64; 2]) -> Node {
        let fi = ((p[0] - self.origin[0]) / self.spacing[0]).round();
        let fj = ((p[1] - self.origin[1]) / self.spacing[1]).round();
        let i = fi.clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = fj.clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    /// Cell containing `p` and the local coordinates in `[0, 1]²`, or `None`
    /// outside the grid rectangle.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, usize, f64, f64)> {
        let fx = (p[0] - self.origin[0]) / self.spacing[0];
        let fy = (p[1] - self.origin[1]) / self.spacing[1];
        let tol = 1e-9;
        if !(fx >= -tol && fy >= -tol)
            || fx > (self.nx - 1) as f64 + tol
            || fy > (self.ny - 1) as f64 + tol
        {
            return None;
        }
        let i = (fx.floor().max(0.0) as usize).min(self.nx.saturating_sub(2));
        let j = (fy.floor().max(0.0) as usize).min(self.ny.saturating_sub(2));
        let tx = (fx - i as f64).clamp(0.0, 1.0);
        let ty = (fy - j as f64).clamp(0.0, 1.0);
        Some((i, j, tx, ty))
    }
}

/// A scalar field sampled on a [`Grid`], with a mask of in-domain nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction2D {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GridFunction2D {
    /// Validated constructor: finite values on the mask, connected mask.
    pub fn new(grid: Grid, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let g = Self::from_parts(grid, values, mask)?;
        g.validate()?;
        Ok(g)
    }

    /// Shape-checked constructor with no finiteness or connectivity check.
    /// Derived fields (derivatives, residuals) use this.
    pub fn from_parts(grid: Grid, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(LmaError::InvalidGrid(format!(
                "expected {} values and mask entries, got {} and {}",
                grid.len(),
                values.len(),
                mask.len()
            )));
        }
        Ok(GridFunction2D { grid, values, mask })
    }

    pub fn zeros(grid: Grid, mask: Vec<bool>) -> Self {
        let n = grid.len();
        GridFunction2D {
            grid,
            values: vec![0.0; n],
            mask,
        }
    }

    pub fn full_mask(grid: &Grid) -> Vec<bool> {
        vec![true; grid.len()]
    }

    /// Samples `f` at every node; unmasked nodes get `0`.
    pub fn from_fn(grid: Grid, mask: Vec<bool>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let k = grid.idx(i, j);
                if mask[k] {
                    values[k] = f(grid.x(i), grid.y(j));
                }
            }
        }
        GridFunction2D { grid, values, mask }
    }

    /// Same geometry and mask, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        GridFunction2D {
            grid: self.grid,
            values,
            mask: self.mask.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| if m { f(v) } else { v })
            .collect();
        self.with_values(values)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = (0..self.grid.len()).find(|&k| self.mask[k] && !self.values[k].is_finite())
        {
            return Err(LmaError::InvalidGrid(format!(
                "non-finite value at node {:?}",
                self.grid.node_of(k)
            )));
        }
        if !mask_connected(&self.grid, &self.mask) {
            return Err(LmaError::InvalidGrid("mask is not connected".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.grid.ny
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.idx(i, j);
        self.values[k] = v;
    }

    /// Mask lookup with signed indices; anything off-grid is unmasked.
    #[inline]
    pub fn masked(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.grid.nx
            && (j as usize) < self.grid.ny
            && self.mask[self.grid.idx(i as usize, j as usize)]
    }

    /// Masked node whose four axis neighbours are masked too.
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i as isize, j as isize);
        self.masked(i, j)
            && self.masked(i - 1, j)
            && self.masked(i + 1, j)
            && self.masked(i, j - 1)
            && self.masked(i, j + 1)
    }

    /// Masked node whose full 3×3 neighbourhood is masked.
    pub fn is_interior8(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i as isize, j as isize);
        (-1..=1).all(|a| (-1..=1).all(|b| self.masked(i + a, j + b)))
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.nodes_where(|i, j| self.is_interior(i, j))
    }

    pub fn interior8_mask(&self) -> Vec<bool> {
        self.nodes_where(|i, j| self.is_interior8(i, j))
    }

    fn nodes_where(&self, pred: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let mut out = vec![false; self.grid.len()];
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                out[self.grid.idx(i, j)] = pred(i, j);
            }
        }
        out
    }

    pub fn masked_nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.grid.len())
            .filter(move |&k| self.mask[k])
            .map(move |k| self.grid.node_of(k))
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Area of the masked region by node counting.
    pub fn measure(&self) -> f64 {
        self.masked_count() as f64 * self.grid.cell_area()
    }

    pub fn max_masked(&self) -> f64 {
        self.masked_values().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_masked(&self) -> f64 {
        self.masked_values().fold(f64::INFINITY, f64::min)
    }

    pub fn masked_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
    }

    /// Node quadrature weight: the cell area, halved along each axis where
    /// the node has a missing neighbour (trapezoidal rule on rectangles).
    pub fn quad_weight(&self, i: usize, j: usize) -> f64 {
        let (ii, jj) = (i as isize, j as isize);
        let mut w = self.grid.cell_area();
        if !(self.masked(ii - 1, jj) && self.masked(ii + 1, jj)) {
            w *= 0.5;
        }
        if !(self.masked(ii, jj - 1) && self.masked(ii, jj + 1)) {
            w *= 0.5;
        }
        w
    }

    /// `∑ w_k · f(i, j, u_k)` over masked nodes.
    pub fn integrate_with(&self, f: impl Fn(usize, usize, f64) -> f64) -> f64 {
        let mut s = 0.0;
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let k = self.grid.idx(i, j);
                if self.mask[k] {
                    s += self.quad_weight(i, j) * f(i, j, self.values[k]);
                }
            }
        }
        s
    }

    pub fn integral(&self) -> f64 {
        self.integrate_with(|_, _, v| v)
    }

    /// `‖u‖_{L^p}` by node quadrature; `p = ∞` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.masked_values().fold(0.0, |m, v| m.max(v.abs()));
        }
        self.integrate_with(|_, _, v| v.abs().powf(p)).powf(1.0 / p)
    }

    // ---------------------------------------------------------------------
    // finite differences

    fn line_step(axis: usize) -> (isize, isize) {
        if axis == 0 {
            (1, 0)
        } else {
            (0, 1)
        }
    }

    fn value_off(&self, i: usize, j: usize, s: (isize, isize), m: isize) -> Option<f64> {
        let (a, b) = (i as isize + s.0 * m, j as isize + s.1 * m);
        if self.masked(a, b) {
            Some(self.at(a as usize, b as usize))
        } else {
            None
        }
    }

    /// First derivative along `axis`: centred where both neighbours exist,
    /// one-sided second order at the mask boundary.
    pub fn d1(&self, axis: usize) -> GridFunction2D {
        let h = self.grid.spacing[axis];
        let s = Self::line_step(axis);
        self.derive(|i, j| {
            let f0 = self.at(i, j);
            let v = |m| self.value_off(i, j, s, m);
            match (v(-2), v(-1), v(1), v(2)) {
                (_, Some(fm), Some(fp), _) => Some((fp - fm) / (2.0 * h)),
                (_, _, Some(f1), Some(f2)) => Some((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)),
                (Some(f2), Some(f1), _, _) => Some((3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h)),
                (_, _, Some(f1), None) => Some((f1 - f0) / h),
                (_, Some(f1), None, _) => Some((f0 - f1) / h),
                _ => None,
            }
        })
    }

    /// Fourth-order centred first derivative where the 5-point stencil fits,
    /// otherwise [`GridFunction2D::d1`].
    pub fn d1_fourth(&self, axis: usize) -> GridFunction2D {
        let h = self.grid.spacing[axis];
        let s = Self::line_step(axis);
        let low = self.d1(axis);
        self.derive(|i, j| {
            let v = |m| self.value_off(i, j, s, m);
            match (v(-2), v(-1), v(1), v(2)) {
                (Some(fm2), Some(fm1), Some(fp1), Some(fp2)) => {
                    Some((fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h))
                }
                _ => {
                    let k = self.grid.idx(i, j);
                    low.mask[k].then(|| low.values[k])
                }
            }
        })
    }

    /// Centred 7-point sixth-order first derivative, falling back to
    /// [`Self::d1_fourth`] near the mask boundary.
    pub fn d1_sixth(&self, axis: usize) -> GridFunction2D {
        let h = self.grid.spacing[axis];
        let s = Self::line_step(axis);
        let low = self.d1_fourth(axis);
        self.derive(|i, j| {
            let v = |m| self.value_off(i, j, s, m);
            match (v(-3), v(-2), v(-1), v(1), v(2), v(3)) {
                (Some(a), Some(b), Some(c), Some(d), Some(e), Some(f)) => {
                    Some((f - a + 9.0 * (b - e) + 45.0 * (d - c)) / (60.0 * h))
                }
                _ => {
                    let k = self.grid.idx(i, j);
                    low.mask[k].then(|| low.values[k])
                }
            }
        })
    }

    /// Second derivative along `axis`: centred 3-point, one-sided 4-point
    /// (second order) at the mask boundary.
    pub fn d2(&self, axis: usize) -> GridFunction2D {
        let h2 = self.grid.spacing[axis].powi(2);
        let s = Self::line_step(axis);
        self.derive(|i, j| {
            let f0 = self.at(i, j);
            let v = |m| self.value_off(i, j, s, m);
            if let (Some(fm), Some(fp)) = (v(-1), v(1)) {
                return Some((fp - 2.0 * f0 + fm) / h2);
            }
            if let (Some(f1), Some(f2), Some(f3)) = (v(1), v(2), v(3)) {
                return Some((2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / h2);
            }
            if let (Some(f1), Some(f2), Some(f3)) = (v(-1), v(-2), v(-3)) {
                return Some((2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / h2);
            }
            if let (Some(f1), Some(f2)) = (v(1), v(2)) {
                return Some((f0 - 2.0 * f1 + f2) / h2);
            }
            if let (Some(f1), Some(f2)) = (v(-1), v(-2)) {
                return Some((f0 - 2.0 * f1 + f2) / h2);
            }
            None
        })
    }

    /// Mixed derivative ∂²/∂x₁∂x₂ as the x₂-derivative of the x₁-derivative.
    pub fn d12(&self) -> GridFunction2D {
        self.d1(0).d1(1)
    }

    fn derive(&self, f: impl Fn(usize, usize) -> Option<f64>) -> GridFunction2D {
        let n = self.grid.len();
        let mut values = vec![f64::NAN; n];
        let mut mask = vec![false; n];
        for j in 0..self.grid.ny {
            for i in 0..self.grid.nx {
                let k = self.grid.idx(i, j);
                if self.mask[k] {
                    if let Some(v) = f(i, j) {
                        values[k] = v;
                        mask[k] = true;
                    }
                }
            }
        }
        GridFunction2D {
            grid: self.grid,
            values,
            mask,
        }
    }

    // ---------------------------------------------------------------------
    // interpolation

    /// Bilinear interpolation; `None` unless all four cell corners are masked.
    pub fn bilinear(&self, p: [f64; 2]) -> Option<f64> {
        let (i, j, tx, ty) = self.grid.locate(p)?;
        if self.grid.nx < 2 || self.grid.ny < 2 {
            return None;
        }
        let corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
        if !corners
            .iter()
            .all(|&(a, b)| self.mask[self.grid.idx(a, b)])
        {
            return None;
        }
        let f00 = self.at(i, j);
        let f10 = self.at(i + 1, j);
        let f01 = self.at(i, j + 1);
        let f11 = self.at(i + 1, j + 1);
        Some(
            (1.0 - ty) * ((1.0 - tx) * f00 + tx * f10) + ty * ((1.0 - tx) * f01 + tx * f11),
        )
    }

    /// The contiguous run of masked nodes on row `j`, or `None` if the row is
    /// empty. Errors if the row has more than one run.
    pub fn row_run(&self, j: usize) -> Result<Option<(usize, usize)>> {
        let mut run: Option<(usize, usize)> = None;
        let mut closed = false;
        for i in 0..self.grid.nx {
            if self.mask[self.grid.idx(i, j)] {
                match run {
                    None => run = Some((i, i)),
                    Some((lo, hi)) if hi + 1 == i && !closed => run = Some((lo, i)),
                    Some(_) => {
                        return Err(LmaError::InvalidGrid(format!(
                            "row {j} of the mask is not a single interval"
                        )))
                    }
                }
            } else if run.is_some() {
                closed = true;
            }
        }
        Ok(run)
    }

    /// Cubic Lagrange interpolation along row `j` at abscissa `x`, restricted
    /// to the run `[lo, hi]`. Falls back to linear on runs shorter than 4.
    pub fn row_cubic(&self, j: usize, run: (usize, usize), x: f64) -> f64 {
        row_cubic_slice(
            &self.values[self.grid.idx(0, j)..self.grid.idx(0, j) + self.grid.nx],
            self.grid.origin[0],
            self.grid.spacing[0],
            run,
            x,
        )
    }

    /// Six-point Lagrange interpolation along row `j`, exact for quintics.
    pub fn row_quintic(&self, j: usize, run: (usize, usize), x: f64) -> f64 {
        row_lagrange_slice(
            &self.values[self.grid.idx(0, j)..self.grid.idx(0, j) + self.grid.nx],
            self.grid.origin[0],
            self.grid.spacing[0],
            run,
            x,
            6,
        )
    }

    // ---------------------------------------------------------------------
    // gridtxt

    /// Writes `nx ny x0 y0 dx dy` and the values, one grid row per line.
    pub fn write_gridtxt<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_table(w, &self.grid, |k| fmt_f64(self.values[k]))
    }

    /// Writes the mask in the same layout with `0`/`1` entries.
    pub fn write_mask_gridtxt<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write_table(w, &self.grid, |k| {
            if self.mask[k] { "1" } else { "0" }.to_string()
        })
    }

    /// Reads values and an optional mask; with no mask every node is in-domain.
    pub fn read_gridtxt<R: Read>(values: R, mask: Option<R>) -> Result<Self> {
        let (grid, vals) = read_table(values)?;
        let mask = match mask {
            None => vec![true; grid.len()],
            Some(r) => {
                let (mgrid, m) = read_table(r)?;
                if mgrid != grid {
                    return Err(LmaError::Parse {
                        line: 1,
                        msg: "mask header differs from value header".into(),
                    });
                }
                m.into_iter()
                    .map(|v| {
                        if v == 0.0 {
                            Ok(false)
                        } else if v == 1.0 {
                            Ok(true)
                        } else {
                            Err(LmaError::Parse {
                                line: 0,
                                msg: format!("mask entry {v} is not 0 or 1"),
                            })
                        }
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        GridFunction2D::new(grid, vals, mask)
    }

    pub fn save(&self, path: &Path, mask_path: Option<&Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_gridtxt(&mut buf).map_err(|e| LmaError::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| LmaError::io(path, e))?;
        if let Some(mp) = mask_path {
            let mut buf = Vec::new();
            self.write_mask_gridtxt(&mut buf)
                .map_err(|e| LmaError::io(mp, e))?;
            std::fs::write(mp, buf).map_err(|e| LmaError::io(mp, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path, mask_path: Option<&Path>) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| LmaError::io(path, e))?;
        let m = match mask_path {
            Some(mp) => Some(std::fs::File::open(mp).map_err(|e| LmaError::io(mp, e))?),
            None => None,
        };
        Self::read_gridtxt(f, m)
    }
}

pub(crate) fn row_cubic_slice(
    row: &[f64],
    x0: f64,
    dx: f64,
    run: (usize, usize),
    x: f64,
) -> f64 {
    row_lagrange_slice(row, x0, dx, run, x, 4)
}

/// Lagrange interpolation on `points` consecutive nodes of `row` around `x`,
/// shifted to stay inside `run`; fewer points on short runs, linear below 4.
pub(crate) fn row_lagrange_slice(
    row: &[f64],
    x0: f64,
    dx: f64,
    run: (usize, usize),
    x: f64,
    points: usize,
) -> f64 {
    let (lo, hi) = run;
    if hi == lo {
        return row[lo];
    }
    let t = (x - x0) / dx;
    let c = (t.floor() as isize).clamp(lo as isize, hi as isize - 1) as usize;
    let np = points.min(hi - lo + 1);
    if np < 4 {
        let s = t - c as f64;
        return (1.0 - s) * row[c] + s * row[c + 1];
    }
    let start = (c as isize + 1 - (np / 2) as isize).clamp(lo as isize, (hi + 1 - np) as isize) as usize;
    let mut acc = 0.0;
    for a in 0..np {
        let xa = (start + a) as f64;
        let mut w = 1.0;
        for b in 0..np {
            if a != b {
                let xb = (start + b) as f64;
                w *= (t - xb) / (xa - xb);
            }
        }
        acc += w * row[start + a];
    }
    acc
}

/// Shortest decimal form that parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_table<W: Write>(w: &mut W, g: &Grid, cell: impl Fn(usize) -> String) -> std::io::Result<()> {
    writeln!(
        w,
        "{} {} {} {} {} {}",
        g.nx,
        g.ny,
        fmt_f64(g.origin[0]),
        fmt_f64(g.origin[1]),
        fmt_f64(g.spacing[0]),
        fmt_f64(g.spacing[1])
    )?;
    let mut line = String::new();
    for j in 0..g.ny {
        line.clear();
        for i in 0..g.nx {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{}", cell(g.idx(i, j)));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn read_table<R: Read>(r: R) -> Result<(Grid, Vec<f64>)> {
    let reader = BufReader::new(r);
    let mut header: Option<Grid> = None;
    let mut vals = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LmaError::Parse {
            line: ln + 1,
            msg: e.to_string(),
        })?;
        let mut toks = line.split_whitespace().peekable();
        if toks.peek().is_none() {
            continue;
        }
        if header.is_none() {
            let t: Vec<&str> = toks.collect();
            if t.len() != 6 {
                return Err(LmaError::Parse {
                    line: ln + 1,
                    msg: format!("header needs 6 fields (nx ny x0 y0 dx dy), got {}", t.len()),
                });
            }
            let pu = |s: &str| {
                s.parse::<usize>().map_err(|e| LmaError::Parse {
                    line: ln + 1,
                    msg: format!("{s}: {e}"),
                })
            };
            let pf = |s: &str| {
                s.parse::<f64>().map_err(|e| LmaError::Parse {
                    line: ln + 1,
                    msg: format!("{s}: {e}"),
                })
            };
            let g = Grid::new(
                pu(t[0])?,
                pu(t[1])?,
                [pf(t[2])?, pf(t[3])?],
                [pf(t[4])?, pf(t[5])?],
            )?;
            vals.reserve(g.len());
            header = Some(g);
            continue;
        }
        for t in toks {
            vals.push(t.parse::<f64>().map_err(|e| LmaError::Parse {
                line: ln + 1,
                msg: format!("{t}: {e}"),
            })?);
        }
    }
    let grid = header.ok_or(LmaError::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    if vals.len() != grid.len() {
        return Err(LmaError::Parse {
            line: 0,
            msg: format!("expected {} values, found {}", grid.len(), vals.len()),
        });
    }
    Ok((grid, vals))
}

/// 4-connectivity of the masked set (an empty mask counts as connected).
pub fn mask_connected(grid: &Grid, mask: &[bool]) -> bool {
    let Some(start) = mask.iter().position(|&m| m) else {
        return true;
    };
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1usize;
    while let Some(k) = queue.pop_front() {
        let (i, j) = grid.node_of(k);
        let mut push = |a: usize, b: usize| {
            let q = grid.idx(a, b);
            if mask[q] && !seen[q] {
                seen[q] = true;
                count += 1;
                queue.push_back(q);
            }
        };
        if i > 0 {
            push(i - 1, j);
        }
        if i + 1 < grid.nx {
            push(i + 1, j);
        }
        if j > 0 {
            push(i, j - 1);
        }
        if j + 1 < grid.ny {
            push(i, j + 1);
        }
    }
    count == mask.iter().filter(|&&m| m).count()
}

/// Mask of the nodes strictly inside the disk `|x - c| < r`.
pub fn disk_mask(grid: &Grid, c: [f64; 2], r: f64) -> Vec<bool> {
    let mut m = vec![false; grid.len()];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let dx = grid.x(i) - c[0];
            let dy = grid.y(j) - c[1];
            m[grid.idx(i, j)] = dx * dx + dy * dy < r * r;
        }
    }
    m
}
