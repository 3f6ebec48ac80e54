//! Uniform 1D grids, sampled fields and the finite-difference stencils used on them.

use std::io::{self, Write};

use thiserror::Error;

use crate::quad::trapezoid;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field has {got} values but the grid has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
    #[error("non-finite field value at node {0}")]
    NonFinite(usize),
    #[error("grids differ")]
    GridMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Values outside the grid are zero.
    DirichletZero,
    /// `n` distinct nodes with period `n · dx`.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
    pub boundary: Boundary,
}

impl FieldGrid {
    pub const MIN_NODES: usize = 16;

    pub fn new(x_min: f64, x_max: f64, n: usize, boundary: Boundary) -> Result<Self, FieldError> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(FieldError::InvalidGrid(format!("need x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if n < Self::MIN_NODES {
            return Err(FieldError::InvalidGrid(format!("need at least {} nodes, got {n}", Self::MIN_NODES)));
        }
        Ok(FieldGrid { x_min, x_max, n, boundary })
    }

    pub fn dirichlet(x_min: f64, x_max: f64, n: usize) -> Result<Self, FieldError> {
        Self::new(x_min, x_max, n, Boundary::DirichletZero)
    }

    pub fn periodic(x_min: f64, x_max: f64, n: usize) -> Result<Self, FieldError> {
        Self::new(x_min, x_max, n, Boundary::Periodic)
    }

    /// Dirichlet grid centered at `center` with half-width `half` and spacing at most `dx`.
    pub fn centered(center: f64, half: f64, dx: f64) -> Result<Self, FieldError> {
        let n = ((2.0 * half / dx).ceil() as usize + 1).max(Self::MIN_NODES);
        Self::dirichlet(center - half, center + half, n)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Period of a periodic grid (`n · dx`).
    pub fn period(&self) -> f64 {
        self.n as f64 * self.dx()
    }

    /// Trapezoid weights (rectangle weights on a periodic grid).
    pub fn weights(&self) -> Vec<f64> {
        let dx = self.dx();
        let mut w = vec![dx; self.n];
        if self.boundary == Boundary::DirichletZero {
            w[0] *= 0.5;
            w[self.n - 1] *= 0.5;
        }
        w
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: *self, values: self.nodes().into_iter().map(f).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: FieldGrid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: FieldGrid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.n {
            return Err(FieldError::LengthMismatch { got: values.len(), expected: grid.n });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite(i));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: FieldGrid) -> Self {
        Field { grid, values: vec![0.0; grid.n] }
    }

    pub fn integral(&self) -> f64 {
        match self.grid.boundary {
            Boundary::DirichletZero => trapezoid(&self.values, self.grid.dx()),
            Boundary::Periodic => self.values.iter().sum::<f64>() * self.grid.dx(),
        }
    }

    /// `∫ g(x) f(x) dx` with the grid weights.
    pub fn weighted_integral(&self, g: impl Fn(f64) -> f64) -> f64 {
        let w = self.grid.weights();
        (0..self.grid.n).map(|i| w[i] * g(self.grid.x(i)) * self.values[i]).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.weights();
        self.values.iter().zip(&w).map(|(v, w)| v * v * w).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    /// Largest end-point magnitude relative to the field maximum.
    pub fn boundary_ratio(&self) -> f64 {
        let m = self.max_abs();
        if m == 0.0 {
            return 0.0;
        }
        self.values[0].abs().max(self.values[self.grid.n - 1].abs()) / m
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<(), FieldError> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(FieldError::GridMismatch)
        }
    }

    /// `‖self − other‖ / ‖other‖` in the grid L² norm.
    pub fn relative_l2_distance(&self, other: &Field) -> Result<f64, FieldError> {
        self.check_same_grid(other)?;
        let w = self.grid.weights();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.grid.n {
            num += w[i] * (self.values[i] - other.values[i]).powi(2);
            den += w[i] * other.values[i].powi(2);
        }
        Ok((num / den).sqrt())
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().enumerate().map(|(i, v)| f(self.grid.x(i), *v)).collect() }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,u")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", self.grid.x(i), v)?;
        }
        Ok(())
    }
}

/// Value at index `i + off`, honouring the boundary condition.
#[inline]
fn at(values: &[f64], i: usize, off: isize, boundary: Boundary) -> f64 {
    let n = values.len() as isize;
    let j = i as isize + off;
    match boundary {
        Boundary::Periodic => values[j.rem_euclid(n) as usize],
        Boundary::DirichletZero => {
            if j < 0 || j >= n {
                0.0
            } else {
                values[j as usize]
            }
        }
    }
}

/// Fourth-order central second derivative.
pub fn laplacian4(values: &[f64], dx: f64, boundary: Boundary, out: &mut [f64]) {
    let c = 1.0 / (12.0 * dx * dx);
    let n = values.len();
    for i in 0..n {
        let interior = i >= 2 && i + 2 < n;
        out[i] = if interior {
            c * (-values[i - 2] + 16.0 * values[i - 1] - 30.0 * values[i] + 16.0 * values[i + 1] - values[i + 2])
        } else {
            c * (-at(values, i, -2, boundary) + 16.0 * at(values, i, -1, boundary) - 30.0 * values[i]
                + 16.0 * at(values, i, 1, boundary)
                - at(values, i, 2, boundary))
        };
    }
}

/// Fourth-order central first derivative.
pub fn derivative4(values: &[f64], dx: f64, boundary: Boundary, out: &mut [f64]) {
    let c = 1.0 / (12.0 * dx);
    for i in 0..values.len() {
        out[i] = c
            * (at(values, i, -2, boundary) - 8.0 * at(values, i, -1, boundary) + 8.0 * at(values, i, 1, boundary)
                - at(values, i, 2, boundary));
    }
}

/// Second-order central first derivative.
pub fn derivative2(values: &[f64], dx: f64, boundary: Boundary, out: &mut [f64]) {
    let c = 0.5 / dx;
    for i in 0..values.len() {
        out[i] = c * (at(values, i, 1, boundary) - at(values, i, -1, boundary));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(FieldGrid::dirichlet(1.0, 0.0, 32).is_err());
        assert!(FieldGrid::dirichlet(0.0, 1.0, 8).is_err());
        let g = FieldGrid::dirichlet(0.0, 1.0, 101).unwrap();
        assert!((g.dx() - 0.01).abs() < 1e-15);
        assert_eq!(g.x(100), 1.0);
        assert!(Field::new(g, vec![0.0; 3]).is_err());
        let mut v = vec![0.0; 101];
        v[5] = f64::NAN;
        assert_eq!(Field::new(g, v), Err(FieldError::NonFinite(5)));
    }

    #[test]
    fn gaussian_integral_and_norm() {
        let g = FieldGrid::dirichlet(-10.0, 10.0, 2001).unwrap();
        let f = g.sample(|x| (-x * x).exp());
        assert!((f.integral() - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((f.l2_norm().powi(2) - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-12);
        assert!(f.boundary_ratio() < 1e-40);
    }

    #[test]
    fn stencils_converge_at_fourth_order() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [64, 128, 256] {
            let g = FieldGrid::periodic(0.0, 2.0 * std::f64::consts::PI * (n as f64 - 1.0) / n as f64, n).unwrap();
            let f = g.sample(|x| x.sin());
            let mut d2 = vec![0.0; n];
            laplacian4(&f.values, g.dx(), g.boundary, &mut d2);
            let e = (0..n).map(|i| (d2[i] + g.x(i).sin()).abs()).fold(0.0, f64::max);
            errs.push(e);
            hs.push(g.dx());
        }
        let order = crate::quad::loglog_order(&hs, &errs);
        assert!((order - 4.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn first_derivatives() {
        let g = FieldGrid::dirichlet(-8.0, 8.0, 801).unwrap();
        let f = g.sample(|x| (-x * x).exp());
        let mut d = vec![0.0; g.n];
        derivative4(&f.values, g.dx(), g.boundary, &mut d);
        let e4 = (0..g.n).map(|i| (d[i] + 2.0 * g.x(i) * (-g.x(i).powi(2)).exp()).abs()).fold(0.0, f64::max);
        derivative2(&f.values, g.dx(), g.boundary, &mut d);
        let e2 = (0..g.n).map(|i| (d[i] + 2.0 * g.x(i) * (-g.x(i).powi(2)).exp()).abs()).fold(0.0, f64::max);
        assert!(e4 < 1e-5 && e2 < 1e-3 && e4 < e2);
    }

    #[test]
    fn csv_has_header() {
        let g = FieldGrid::dirichlet(0.0, 1.0, 16).unwrap();
        let mut buf = Vec::new();
        g.sample(|x| x).write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x,u\n0,0\n"));
        assert_eq!(s.lines().count(), 17);
    }
}
