//! Uniform grid on (a, b) with homogeneous Dirichlet data.
//!
//! Only interior nodes `x_j = a + j h`, `j = 1..=n`, carry unknowns; the
//! boundary values are zero and never stored.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid domain ({a}, {b}): need finite a < b")]
    Domain { a: f64, b: f64 },
    #[error("grid needs at least one interior node")]
    Empty,
    #[error("fields live on different grids")]
    Mismatch,
    #[error("requested {requested} eigenpairs but the grid resolves only {available}")]
    TooManyModes { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    a: f64,
    b: f64,
    n_interior: usize,
}

impl Grid {
    pub fn new(a: f64, b: f64, n_interior: usize) -> Result<Self, GridError> {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(GridError::Domain { a, b });
        }
        if n_interior == 0 {
            return Err(GridError::Empty);
        }
        Ok(Self { a, b, n_interior })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    pub fn h(&self) -> f64 {
        (self.b - self.a) / (self.n_interior + 1) as f64
    }

    /// Coordinate of interior node `j` (0-based, so `j = 0` is `a + h`).
    pub fn x(&self, j: usize) -> f64 {
        self.a + (j + 1) as f64 * self.h()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_interior).map(|j| self.x(j))
    }

    /// The grid with halved spacing; its even nodes coincide with ours.
    pub fn refined(&self) -> Self {
        Self {
            n_interior: 2 * self.n_interior + 1,
            ..*self
        }
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Values at the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_interior],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_interior {
            return Err(GridError::Mismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64) -> f64) -> Self {
        let values = grid.nodes().map(&mut f).collect();
        Self { grid, values }
    }

    pub fn try_from_fn<E>(
        grid: Grid,
        mut f: impl FnMut(f64) -> Result<f64, E>,
    ) -> Result<Self, E> {
        let values = grid.nodes().map(&mut f).collect::<Result<_, _>>()?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
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

    /// Values including the two zero boundary nodes.
    pub fn with_boundary(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.values.len() + 2);
        v.push(0.0);
        v.extend_from_slice(&self.values);
        v.push(0.0);
        v
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Field) {
        debug_assert!(self.grid.same_as(&other.grid));
        for (y, x) in self.values.iter_mut().zip(&other.values) {
            *y += alpha * x;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Linear interpolation onto another grid over the same domain.
    pub fn interpolate_to(&self, target: &Grid) -> Result<Field, GridError> {
        if self.grid.a != target.a || self.grid.b != target.b {
            return Err(GridError::Mismatch);
        }
        let full = self.with_boundary();
        let h = self.grid.h();
        let last = full.len() - 1;
        Ok(Field::from_fn(*target, |x| {
            let s = (x - self.grid.a) / h;
            let nearest = s.round();
            // shared nodes of nested grids are copied, not interpolated
            if (s - nearest).abs() < 1e-9 {
                return full[(nearest as usize).min(last)];
            }
            let k = (s.floor() as usize).min(last - 1);
            let th = s - k as f64;
            (1.0 - th) * full[k] + th * full[k + 1]
        }))
    }
}

/// Central second difference with zero ghost values.
pub fn laplacian_apply(f: &Field) -> Field {
    let mut out = Field::zeros(f.grid);
    laplacian_into(f.values(), f.grid.h(), out.values_mut());
    out
}

pub(crate) fn laplacian_into(u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len();
    let inv = 1.0 / (h * h);
    for j in 0..n {
        let left = if j > 0 { u[j - 1] } else { 0.0 };
        let right = if j + 1 < n { u[j + 1] } else { 0.0 };
        out[j] = (left - 2.0 * u[j] + right) * inv;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    /// Continuous Dirichlet eigenvalue `(i pi / L)^2`.
    pub lambda: f64,
    /// `sqrt(2/L) sin(i pi (x - a) / L)` on the grid.
    pub mode: Field,
}

impl Eigenpair {
    /// Eigenvalue of the discrete three-point Laplacian for the same sine vector.
    pub fn discrete_lambda(&self, index: usize) -> f64 {
        let g = self.mode.grid();
        let h = g.h();
        let s = (index as f64 * PI * h / (2.0 * g.length())).sin();
        4.0 / (h * h) * s * s
    }
}

/// First `count` Dirichlet eigenpairs, modes `i = 1..=count`.
pub fn dirichlet_eigenpairs(grid: &Grid, count: usize) -> Result<Vec<Eigenpair>, GridError> {
    if count > grid.n_interior {
        return Err(GridError::TooManyModes {
            requested: count,
            available: grid.n_interior,
        });
    }
    let l = grid.length();
    let amp = (2.0 / l).sqrt();
    Ok((1..=count)
        .map(|i| {
            let k = i as f64 * PI / l;
            Eigenpair {
                lambda: k * k,
                mode: Field::from_fn(*grid, |x| amp * (k * (x - grid.a)).sin()),
            }
        })
        .collect())
}

/// Discrete L2 inner product `h sum f_j w_j`.
pub fn project(f: &Field, w: &Field) -> Result<f64, GridError> {
    if !f.grid.same_as(&w.grid) {
        return Err(GridError::Mismatch);
    }
    Ok(f.grid.h() * f.values.iter().zip(&w.values).map(|(a, b)| a * b).sum::<f64>())
}
