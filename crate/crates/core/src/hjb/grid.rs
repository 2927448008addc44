use std::io::Write;
use std::sync::Arc;

use crate::error::SolverError;
use crate::model::{MarkovControl, SimplexControl};

/// Memory guard on the number of grid points.
pub const MAX_GRID_POINTS: usize = 4_000_000;

/// Tensor grid on the box `Π [−Lᵢ, Lᵢ]` with spacing `hᵢ`; the origin is
/// always a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    half_width: Vec<f64>,
    spacing: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(half_width: Vec<f64>, spacing: Vec<f64>) -> Result<Self, SolverError> {
        let d = half_width.len();
        if d == 0 || spacing.len() != d {
            return Err(SolverError::Grid(format!(
                "half-width and spacing must have the same positive length ({} vs {})",
                d,
                spacing.len()
            )));
        }
        let mut counts = Vec::with_capacity(d);
        for (&l, &h) in half_width.iter().zip(&spacing) {
            if !(l > 0.0 && h > 0.0 && l.is_finite() && h.is_finite()) {
                return Err(SolverError::Grid(format!(
                    "L = {l}, h = {h} must be positive"
                )));
            }
            let cells = l / h;
            if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
                return Err(SolverError::Grid(format!(
                    "L/h = {cells} is not an integer"
                )));
            }
            counts.push(2 * cells.round() as usize + 1);
        }
        let mut len: usize = 1;
        for &c in &counts {
            len = len.checked_mul(c).filter(|&v| v <= MAX_GRID_POINTS).ok_or(
                SolverError::GridTooLarge {
                    points: counts.iter().fold(1usize, |a, &c| a.saturating_mul(c)),
                    limit: MAX_GRID_POINTS,
                },
            )?;
        }
        let mut strides = vec![1; d];
        for i in (0..d - 1).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(Self {
            half_width,
            spacing,
            counts,
            strides,
            len,
        })
    }

    /// Same half-width and spacing in every dimension.
    pub fn uniform(d: usize, half_width: f64, spacing: f64) -> Result<Self, SolverError> {
        Self::new(vec![half_width; d], vec![spacing; d])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Largest half-width; the box is contained in the ball of radius `√d·max L`.
    pub fn max_half_width(&self) -> f64 {
        self.half_width.iter().cloned().fold(0.0, f64::max)
    }

    pub fn origin_index(&self) -> usize {
        (0..self.dim())
            .map(|i| (self.counts[i] / 2) * self.strides[i])
            .sum()
    }

    /// Per-dimension node position of a flat index.
    pub fn multi_index(&self, index: usize, out: &mut [usize]) {
        let mut rest = index;
        for i in 0..self.dim() {
            out[i] = rest / self.strides[i];
            rest %= self.strides[i];
        }
    }

    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rest = index;
        for i in 0..self.dim() {
            let k = rest / self.strides[i];
            rest %= self.strides[i];
            out[i] = -self.half_width[i] + k as f64 * self.spacing[i];
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(index, &mut out);
        out
    }

    /// Neighbour one step along `dim` (`up` towards larger coordinates), if
    /// it lies inside the box.
    #[inline]
    pub fn neighbor(&self, index: usize, dim: usize, up: bool) -> Option<usize> {
        let k = (index / self.strides[dim]) % self.counts[dim];
        if up {
            (k + 1 < self.counts[dim]).then(|| index + self.strides[dim])
        } else {
            (k > 0).then(|| index - self.strides[dim])
        }
    }

    /// The grid with doubled spacing on the same box, when every `Lᵢ/hᵢ` is even.
    pub fn coarsened(&self) -> Option<Grid> {
        if self.counts.iter().any(|&c| (c - 1) % 4 != 0) {
            return None;
        }
        Grid::new(
            self.half_width.clone(),
            self.spacing.iter().map(|h| 2.0 * h).collect(),
        )
        .ok()
    }

    /// Nearest node, or `None` when `x` lies more than half a cell outside.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let mut index = 0;
        for i in 0..self.dim() {
            let k = ((x[i] + self.half_width[i]) / self.spacing[i]).round();
            if !(k >= 0.0 && k < self.counts[i] as f64) {
                return None;
            }
            index += k as usize * self.strides[i];
        }
        Some(index)
    }
}

/// Values indexed by grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ValueField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at_origin(&self) -> f64 {
        self.values[self.grid.origin_index()]
    }

    pub fn at(&self, x: &[f64]) -> Option<f64> {
        self.grid.nearest(x).map(|i| self.values[i])
    }

    /// Multilinear interpolation, with `x` clamped into the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let d = self.grid.dim();
        let mut base = 0;
        let mut frac = Vec::with_capacity(d);
        let mut steps = Vec::with_capacity(d);
        for i in 0..d {
            let cells = (self.grid.counts[i] - 1) as f64;
            let s = ((x[i] + self.grid.half_width[i]) / self.grid.spacing[i]).clamp(0.0, cells);
            let k = (s.floor() as usize).min(self.grid.counts[i].saturating_sub(2));
            base += k * self.grid.strides[i];
            frac.push(s - k as f64);
            steps.push(if self.grid.counts[i] > 1 {
                self.grid.strides[i]
            } else {
                0
            });
        }
        let mut total = 0.0;
        for corner in 0..1usize << d {
            let mut weight = 1.0;
            let mut index = base;
            for i in 0..d {
                if corner >> i & 1 == 1 {
                    weight *= frac[i];
                    index += steps[i];
                } else {
                    weight *= 1.0 - frac[i];
                }
            }
            if weight != 0.0 {
                total += weight * self.values[index];
            }
        }
        total
    }

    /// Copy shifted so that the origin value is zero.
    pub fn normalized(&self) -> Self {
        let v0 = self.at_origin();
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v - v0).collect(),
        }
    }

    /// `sup |self − other|` over nodes with `|x| ≤ radius`.
    pub fn sup_distance_within(&self, other: &ValueField, radius: f64) -> f64 {
        assert_eq!(self.grid.as_ref(), other.grid.as_ref());
        let mut x = vec![0.0; self.grid.dim()];
        let mut sup: f64 = 0.0;
        for i in 0..self.grid.len() {
            self.grid.point_into(i, &mut x);
            if x.iter().map(|v| v * v).sum::<f64>() <= radius * radius {
                sup = sup.max((self.values[i] - other.values[i]).abs());
            }
        }
        sup
    }
}

/// Simplex controls indexed by grid node, with a fallback outside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    grid: Arc<Grid>,
    controls: Vec<f64>,
    outside: SimplexControl,
}

impl ControlField {
    /// `controls` is row-major, `d` entries per node.
    pub fn new(grid: Arc<Grid>, controls: Vec<f64>, outside: SimplexControl) -> Self {
        assert_eq!(controls.len(), grid.len() * grid.dim());
        assert_eq!(outside.dim(), grid.dim());
        Self {
            grid,
            controls,
            outside,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn at_index(&self, index: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.controls[index * d..(index + 1) * d]
    }

    pub fn outside(&self) -> &SimplexControl {
        &self.outside
    }

    /// Nearest-node lookup; `u0` outside the box.
    pub fn lookup(&self, x: &[f64]) -> &[f64] {
        match self.grid.nearest(x) {
            Some(i) => self.at_index(i),
            None => self.outside.as_slice(),
        }
    }
}

impl MarkovControl for ControlField {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn control_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.lookup(x));
    }
}

/// Plain-text dump: a `#` header, then one line per node with the
/// coordinates, the value and the control vector.
pub fn write_fields<W: Write>(
    mut out: W,
    values: &ValueField,
    controls: &ControlField,
) -> std::io::Result<()> {
    let grid = values.grid();
    let d = grid.dim();
    let mut header = String::from("#");
    for i in 0..d {
        header.push_str(&format!(" x{}", i + 1));
    }
    header.push_str(" V");
    for i in 0..d {
        header.push_str(&format!(" u{}", i + 1));
    }
    writeln!(out, "{header}")?;
    let mut x = vec![0.0; d];
    for i in 0..grid.len() {
        grid.point_into(i, &mut x);
        let mut line = String::new();
        for v in &x {
            line.push_str(&format!("{v} "));
        }
        line.push_str(&format!("{}", values.values()[i]));
        for u in controls.at_index(i) {
            line.push_str(&format!(" {u}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_origin() {
        let g = Grid::uniform(2, 1.0, 0.5).unwrap();
        assert_eq!(g.counts(), &[5, 5]);
        assert_eq!(g.len(), 25);
        assert_eq!(g.point(g.origin_index()), vec![0.0, 0.0]);
        assert_eq!(g.point(0), vec![-1.0, -1.0]);
        assert_eq!(
            g.nearest(&[0.26, -0.74]),
            Some(g.nearest(&[0.5, -0.5]).unwrap())
        );
        assert_eq!(g.nearest(&[1.3, 0.0]), None);
    }

    #[test]
    fn neighbours_stop_at_the_boundary() {
        let g = Grid::uniform(2, 1.0, 0.5).unwrap();
        assert_eq!(g.neighbor(0, 0, false), None);
        assert_eq!(g.neighbor(0, 1, false), None);
        assert_eq!(g.point(g.neighbor(0, 0, true).unwrap()), vec![-0.5, -1.0]);
        assert_eq!(g.point(g.neighbor(0, 1, true).unwrap()), vec![-1.0, -0.5]);
        assert_eq!(g.neighbor(24, 1, true), None);
    }

    #[test]
    fn rejects_non_integral_ratio() {
        assert!(Grid::uniform(1, 1.0, 0.3).is_err());
        assert!(Grid::uniform(1, -1.0, 0.5).is_err());
    }

    #[test]
    fn memory_guard() {
        assert!(matches!(
            Grid::uniform(4, 10.0, 0.01),
            Err(SolverError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn dump_has_one_line_per_node() {
        let g = Arc::new(Grid::uniform(1, 1.0, 0.5).unwrap());
        let v = ValueField::new(g.clone(), vec![0.0; 5]);
        let c = ControlField::new(g, vec![1.0; 5], SimplexControl::last_vertex(1));
        let mut buf = Vec::new();
        write_fields(&mut buf, &v, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().nth(1).unwrap(), "-1 0 1");
    }

    #[test]
    fn coarsening_needs_even_cell_counts() {
        let g = Grid::uniform(2, 1.0, 0.25).unwrap();
        let c = g.coarsened().unwrap();
        assert_eq!(c.counts(), &[5, 5]);
        assert_eq!(c.spacing(), &[0.5, 0.5]);
        assert!(Grid::uniform(1, 1.5, 0.5).unwrap().coarsened().is_none());
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_data() {
        let g = Arc::new(Grid::uniform(2, 1.0, 0.5).unwrap());
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let values = (0..g.len()).map(|i| f(&g.point(i))).collect();
        let v = ValueField::new(g, values);
        for x in [[0.1, -0.3], [-0.99, 0.77], [1.0, 1.0], [0.5, -0.5]] {
            assert!((v.interpolate(&x) - f(&x)).abs() < 1e-12);
        }
        assert!((v.interpolate(&[3.0, 0.0]) - f(&[1.0, 0.0])).abs() < 1e-12);
    }
}
