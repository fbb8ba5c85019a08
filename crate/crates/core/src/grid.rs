//! Uniform cell-centred Cartesian grids in one or two dimensions and the
//! discrete calculus used by the solvers and diagnostics.
//!
//! Cells are stored with the x index running fastest. Every stencil treats
//! the exterior as a layer of zero-valued ghost cells; the model sizes the
//! domain so that densities never reach the boundary.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    cells: [usize; 2],
    origin: [f64; 2],
    h: f64,
}

impl GridSpec {
    /// Builds a grid from per-axis cell counts, origins and physical extents.
    /// The spacing `extent / cells` must agree on every axis.
    pub fn new(cells: &[usize], origin: &[f64], extent: &[f64]) -> Result<Self> {
        let dim = cells.len();
        if !(1..=2).contains(&dim) {
            return Err(Error::invalid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if origin.len() != dim || extent.len() != dim {
            return Err(Error::invalid("cells, origin and extent must have one entry per axis"));
        }
        if cells.iter().any(|&c| c < 3) {
            return Err(Error::invalid("each axis needs at least 3 cells"));
        }
        if extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("extent must be positive and finite, origin finite"));
        }
        let h = extent[0] / cells[0] as f64;
        for axis in 1..dim {
            let hk = extent[axis] / cells[axis] as f64;
            if ((hk - h) / h).abs() > 1e-12 {
                return Err(Error::invalid(format!("unequal spacing: {h} on axis 0, {hk} on axis {axis}")));
            }
        }
        let mut c = [1usize; 2];
        let mut o = [0.0; 2];
        c[..dim].copy_from_slice(cells);
        o[..dim].copy_from_slice(origin);
        Ok(GridSpec { dim, cells: c, origin: o, h })
    }

    /// Grid of `cells` per axis covering `[-extent/2, extent/2]^dim`.
    pub fn centered(dim: usize, cells: usize, extent: f64) -> Result<Self> {
        let cells = vec![cells; dim];
        let origin = vec![-extent / 2.0; dim];
        let extent = vec![extent; dim];
        GridSpec::new(&cells, &origin, &extent)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells[..self.dim]
    }

    pub fn nx(&self) -> usize {
        self.cells[0]
    }

    pub fn ny(&self) -> usize {
        self.cells[1]
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin[..self.dim]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.cells[axis] as f64 * self.h
    }

    pub fn len(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.cells[0] * j
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells[0], idx / self.cells[0])
    }

    /// Cell-centre coordinates; the second component is 0 in 1D.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        let mut x = [0.0; 2];
        x[0] = self.origin[0] + (i as f64 + 0.5) * self.h;
        if self.dim == 2 {
            x[1] = self.origin[1] + (j as f64 + 0.5) * self.h;
        }
        x
    }

    /// Distance from the cell to the nearest domain edge, counted in cells
    /// (0 for the outermost layer).
    pub fn layer(&self, idx: usize) -> usize {
        let (i, j) = self.ij(idx);
        let mut d = i.min(self.cells[0] - 1 - i);
        if self.dim == 2 {
            d = d.min(j.min(self.cells[1] - 1 - j));
        }
        d
    }

    /// True when the ball `B(0, radius)` lies inside the grid box.
    pub fn contains_ball(&self, radius: f64) -> bool {
        (0..self.dim).all(|k| self.origin[k] <= -radius && self.origin[k] + self.extent(k) >= radius)
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.dim == other.dim
            && self.cells == other.cells
            && (self.h - other.h).abs() <= 1e-14 * self.h
            && (0..self.dim).all(|k| (self.origin[k] - other.origin[k]).abs() <= 1e-12 * (1.0 + self.origin[k].abs()))
    }
}

/// Cell-centred scalar field on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &GridSpec) -> Self {
        Field { grid: *grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Field { grid: *grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center(i))).collect();
        Field { grid: *grid, values }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain { index: i, message: "non-finite value".into() });
        }
        Ok(Field { grid: *grid, values })
    }

    /// Skips the finiteness scan; callers guarantee finite values.
    pub(crate) fn from_values_unchecked(grid: &GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid: *grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert!(self.grid.same_as(&other.grid));
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid, values }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn at(&self, i: isize, j: isize) -> f64 {
        let g = &self.grid;
        if i < 0 || j < 0 || i as usize >= g.cells[0] || j as usize >= g.cells[1] {
            0.0
        } else {
            self.values[g.index(i as usize, j as usize)]
        }
    }

    /// Partial derivative along `axis`: centred differences inside, second
    /// order one-sided differences on the first and last cell of each line.
    pub fn gradient(&self, axis: usize) -> Result<Field> {
        let g = &self.grid;
        if axis >= g.dim {
            return Err(Error::invalid(format!("axis {axis} out of range for a {}-d grid", g.dim)));
        }
        let n = g.cells[axis];
        let stride = if axis == 0 { 1 } else { g.cells[0] };
        let inv2h = 0.5 / g.h;
        let v = &self.values;
        let mut out = vec![0.0; v.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let (i, j) = g.ij(idx);
            let k = if axis == 0 { i } else { j };
            *o = if k == 0 {
                (-3.0 * v[idx] + 4.0 * v[idx + stride] - v[idx + 2 * stride]) * inv2h
            } else if k == n - 1 {
                (3.0 * v[idx] - 4.0 * v[idx - stride] + v[idx - 2 * stride]) * inv2h
            } else {
                (v[idx + stride] - v[idx - stride]) * inv2h
            };
        }
        Ok(Field::from_values_unchecked(g, out))
    }

    /// `(2·dim + 1)`-point Laplacian with zero ghost cells outside the grid.
    pub fn laplacian(&self) -> Field {
        let g = &self.grid;
        let mut out = vec![0.0; self.values.len()];
        laplacian_into(g, &self.values, &mut out);
        Field::from_values_unchecked(g, out)
    }

    /// `Σ_k ∂_k components[k]`, built from [`Field::gradient`].
    pub fn divergence(components: &[Field]) -> Result<Field> {
        let first = components.first().ok_or_else(|| Error::invalid("divergence of an empty vector field"))?;
        let g = first.grid;
        if components.len() != g.dim {
            return Err(Error::invalid("divergence needs one component per axis"));
        }
        let mut acc = Field::zeros(&g);
        for (axis, c) in components.iter().enumerate() {
            let d = c.gradient(axis)?;
            acc.values.iter_mut().zip(d.values).for_each(|(a, b)| *a += b);
        }
        Ok(acc)
    }

    /// Euclidean norm of the discrete gradient, cellwise.
    pub fn gradient_magnitude(&self) -> Field {
        let mut sq = vec![0.0; self.values.len()];
        for axis in 0..self.grid.dim {
            let d = self.gradient(axis).expect("axis in range");
            sq.iter_mut().zip(d.values).for_each(|(s, v)| *s += v * v);
        }
        Field::from_values_unchecked(&self.grid, sq.into_iter().map(f64::sqrt).collect())
    }

    pub fn integrate(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Discrete `L^p` norm; `p = f64::INFINITY` gives the max norm.
    pub fn norm_lp(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::invalid(format!("L^p norm needs p >= 1, got {p}")));
        }
        if p.is_infinite() {
            return Ok(self.values.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        let s: f64 = if p == 1.0 {
            self.values.iter().map(|v| v.abs()).sum()
        } else if p == 2.0 {
            self.values.iter().map(|v| v * v).sum()
        } else {
            self.values.iter().map(|v| v.abs().powf(p)).sum()
        };
        Ok((s * self.grid.cell_volume()).powf(1.0 / p))
    }

    /// Total variation `Σ_k ∫ |∂_k f|` using forward differences across every
    /// face, including the faces to the zero ghost layer.
    pub fn total_variation(&self) -> f64 {
        let g = &self.grid;
        let mut tv = 0.0;
        for j in 0..g.cells[1] as isize {
            for i in -1..g.cells[0] as isize {
                tv += (self.at(i + 1, j) - self.at(i, j)).abs();
            }
        }
        if g.dim == 2 {
            for j in -1..g.cells[1] as isize {
                for i in 0..g.cells[0] as isize {
                    tv += (self.at(i, j + 1) - self.at(i, j)).abs();
                }
            }
        }
        // each jump counts h^(dim-1) of face area
        tv * g.h.powi(g.dim as i32 - 1)
    }

    /// Largest distance from the origin among cells whose value exceeds
    /// `threshold`; 0 when no cell does.
    pub fn support_radius(&self, threshold: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > threshold)
            .map(|(i, _)| {
                let x = self.grid.center(i);
                (x[0] * x[0] + x[1] * x[1]).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn laplacian_into(g: &GridSpec, v: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / (g.h * g.h);
    let nx = g.cells[0];
    if g.dim == 1 {
        for i in 0..nx {
            let l = if i > 0 { v[i - 1] } else { 0.0 };
            let r = if i + 1 < nx { v[i + 1] } else { 0.0 };
            out[i] = (l - 2.0 * v[i] + r) * inv_h2;
        }
        return;
    }
    let ny = g.cells[1];
    for j in 0..ny {
        for i in 0..nx {
            let idx = i + nx * j;
            let l = if i > 0 { v[idx - 1] } else { 0.0 };
            let r = if i + 1 < nx { v[idx + 1] } else { 0.0 };
            let d = if j > 0 { v[idx - nx] } else { 0.0 };
            let u = if j + 1 < ny { v[idx + nx] } else { 0.0 };
            out[idx] = (l + r + d + u - 4.0 * v[idx]) * inv_h2;
        }
    }
}

/// Writes a field snapshot as CSV: `x,n,p` in 1D, `x,y,n,p` in 2D.
pub fn write_snapshot_csv<W: Write>(mut w: W, n: &Field, p: &Field) -> Result<()> {
    let g = n.grid();
    if !g.same_as(p.grid()) {
        return Err(Error::invalid("density and pressure live on different grids"));
    }
    if g.dim() == 1 {
        writeln!(w, "x,n,p")?;
    } else {
        writeln!(w, "x,y,n,p")?;
    }
    for idx in 0..g.len() {
        let x = g.center(idx);
        if g.dim() == 1 {
            writeln!(w, "{:.15e},{:.15e},{:.15e}", x[0], n.values[idx], p.values[idx])?;
        } else {
            writeln!(w, "{:.15e},{:.15e},{:.15e},{:.15e}", x[0], x[1], n.values[idx], p.values[idx])?;
        }
    }
    Ok(())
}
