//! Time marching for `u_tt = G(0) u_xx + int_0^t Gdot(t - tau) u_xx(tau) dtau + f`.
//!
//! Two schemes are provided:
//!
//! * **integral**: marches the twice-integrated form
//!   `u(t) = int_0^t K(t - tau) u_xx(tau) dtau + u1 t + u0 + int_0^t int_0^tau f`
//!   with trapezoidal product quadrature. Only K is used, so kernels whose
//!   derivative jumps need no special treatment. Because `K(0) = 0` the newest
//!   history point has zero weight and every step is explicit.
//! * **differential**: explicit central differences in time with the memory
//!   term `int_0^t Gdot(t - tau) u_xx(tau) dtau` by the trapezoid rule, panels
//!   split at kinks of G.
//!
//! Both schemes keep the Laplacian of every past step. Prony kernels get an
//! O(1)-per-step recursive update of the memory term instead of the direct sum.

use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::discretization::{laplacian_into, Field, Grid, GridError};
use crate::exprparse::{EvalError, Expr};
use crate::kernels::{KernelError, KinkPolicy, MemoryKernel, PronyTerm, Side};
use crate::quadrature::{cumulative_trapezoid, trapezoid_weight};

/// Safety factor in `dt <= CFL_SAFETY * h / sqrt(G(0))`.
pub const CFL_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("time step {dt} violates the stability limit {limit} (0.9 h / sqrt(G(0)))")]
    Cfl { dt: f64, limit: f64 },
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("evaluating {which}: {source}")]
    Data {
        which: &'static str,
        #[source]
        source: EvalError,
    },
    #[error("non-finite value at step {step} (t = {time}); the run diverged")]
    NonFinite { step: usize, time: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Integral,
    Differential,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Integral => "integral",
            Scheme::Differential => "differential",
        }
    }
}

/// Which convolution the memory term is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryForm {
    /// `int_0^t K(t - tau) u_xx(tau) dtau`, history `u^0..u^{n-1}`.
    KForm,
    /// `int_0^t Gdot(t - tau) u_xx(tau) dtau`, history `u^0..u^n`.
    GdotForm,
}

/// How the memory convolution is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MemoryPath {
    /// Recursive update for Prony kernels, direct sum otherwise.
    #[default]
    Auto,
    Direct,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub horizon: f64,
    pub n_steps: usize,
    pub kernel: Arc<dyn MemoryKernel>,
    pub u0: Expr,
    pub u1: Expr,
    pub f: Expr,
    pub scheme: Scheme,
    /// Keep every `stride`-th step; must divide `n_steps`.
    pub stride: usize,
    pub kink_policy: Option<KinkPolicy>,
    pub memory_path: MemoryPath,
}

impl ProblemSpec {
    /// Zero data, unit stride, left-limit kink policy.
    pub fn new(
        grid: Grid,
        horizon: f64,
        n_steps: usize,
        kernel: Arc<dyn MemoryKernel>,
        scheme: Scheme,
    ) -> Self {
        Self {
            grid,
            horizon,
            n_steps,
            kernel,
            u0: Expr::constant(0.0),
            u1: Expr::constant(0.0),
            f: Expr::constant(0.0),
            scheme,
            stride: 1,
            kink_policy: Some(KinkPolicy::LeftLimit),
            memory_path: MemoryPath::Auto,
        }
    }

    pub fn with_data(mut self, u0: Expr, u1: Expr, f: Expr) -> Self {
        self.u0 = u0;
        self.u1 = u1;
        self.f = f;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `CFL_SAFETY * h / sqrt(G(0))`.
    pub fn cfl_limit(&self) -> Result<f64, SolverError> {
        let g0 = self.kernel.value(0.0)?;
        if !(g0 > 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok(CFL_SAFETY * self.grid.h() / g0.sqrt())
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SolverError::InvalidSpec(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.n_steps < 2 {
            return Err(SolverError::InvalidSpec(format!(
                "need at least 2 time steps, got {}",
                self.n_steps
            )));
        }
        if self.stride == 0 || !self.n_steps.is_multiple_of(self.stride) {
            return Err(SolverError::InvalidSpec(format!(
                "stride {} must be positive and divide n_steps = {}",
                self.stride, self.n_steps
            )));
        }
        if self.scheme == Scheme::Differential {
            let limit = self.cfl_limit()?;
            if self.dt() > limit {
                return Err(SolverError::Cfl {
                    dt: self.dt(),
                    limit,
                });
            }
            let kinks = self.kernel.kinks();
            if !kinks.is_empty() && self.kink_policy.is_none() {
                return Err(SolverError::UnsupportedKernel(format!(
                    "{} has derivative jumps at {:?} and no kink policy was given",
                    self.kernel.describe(),
                    kinks
                )));
            }
        }
        Ok(())
    }

    fn sample(&self, expr: &Expr, t: f64, which: &'static str) -> Result<Field, SolverError> {
        Field::try_from_fn(self.grid, |x| expr.eval(x, t))
            .map_err(|source| SolverError::Data { which, source })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetadata {
    pub scheme: Scheme,
    pub kernel: String,
    pub dt: f64,
    pub h: f64,
    pub memory_path: &'static str,
    pub quadrature: &'static str,
    /// `dt sqrt(G(0)) / h`
    pub cfl_number: f64,
    pub elapsed_secs: f64,
}

/// Snapshots of a run, boundary values excluded.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub spec: ProblemSpec,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    /// `u_t` at the saved steps (differential scheme only).
    pub velocities: Option<Vec<Field>>,
    pub meta: RunMetadata,
}

impl SolutionField {
    /// Spacing of the saved snapshots.
    pub fn snapshot_dt(&self) -> f64 {
        self.spec.dt() * self.spec.stride as f64
    }

    /// `(int_D |u|^2)^(1/2)` by trapezoid in time and the interior sum in space.
    pub fn l2_norm(&self) -> f64 {
        let n = self.snapshots.len() - 1;
        let dt = self.snapshot_dt();
        let h = self.spec.grid.h();
        self.snapshots
            .iter()
            .enumerate()
            .map(|(k, u)| {
                trapezoid_weight(k, n, dt) * h * u.values().iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// L2(D) distance to `other`, measured on this solution's grid and times.
    ///
    /// `other` may be finer in space and time as long as it stores every time
    /// stored here.
    pub fn l2_distance(&self, other: &SolutionField) -> Result<f64, SolverError> {
        let tol = 1e-9 * self.spec.horizon;
        let mut j = 0;
        let mut diffs = Vec::with_capacity(self.snapshots.len());
        for (t, u) in self.times.iter().zip(&self.snapshots) {
            while j < other.times.len() && other.times[j] < t - tol {
                j += 1;
            }
            if j == other.times.len() || (other.times[j] - t).abs() > tol {
                return Err(SolverError::InvalidSpec(format!(
                    "time {t} is not stored in the reference solution"
                )));
            }
            let v = other.snapshots[j].interpolate_to(&self.spec.grid)?;
            diffs.push(
                u.values()
                    .iter()
                    .zip(v.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
        let n = diffs.len() - 1;
        let dt = self.snapshot_dt();
        let h = self.spec.grid.h();
        Ok(diffs
            .iter()
            .enumerate()
            .map(|(k, d)| trapezoid_weight(k, n, dt) * h * d)
            .sum::<f64>()
            .sqrt())
    }

    /// L2(D) distance to an analytic field `exact(x, t)`.
    pub fn l2_error(&self, mut exact: impl FnMut(f64, f64) -> f64) -> f64 {
        let n = self.snapshots.len() - 1;
        let dt = self.snapshot_dt();
        let h = self.spec.grid.h();
        let grid = self.spec.grid;
        self.times
            .iter()
            .zip(&self.snapshots)
            .enumerate()
            .map(|(k, (&t, u))| {
                let s: f64 = grid
                    .nodes()
                    .zip(u.values())
                    .map(|(x, v)| {
                        let e = v - exact(x, t);
                        e * e
                    })
                    .sum();
                trapezoid_weight(k, n, dt) * h * s
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn final_field(&self) -> &Field {
        self.snapshots.last().expect("a solution has at least one snapshot")
    }
}

pub fn solve(spec: &ProblemSpec) -> Result<SolutionField, SolverError> {
    match spec.scheme {
        Scheme::Integral => solve_integral(spec),
        Scheme::Differential => solve_differential(spec),
    }
}

/// Trapezoid weight of history point `m` (of `0..n`) in the K-form sum.
fn k_form_weight(m: usize, dt: f64) -> f64 {
    if m == 0 {
        0.5 * dt
    } else {
        dt
    }
}

/// Trapezoid coefficients of `int_0^{n dt} Gdot(s) v(s) ds` per panel
/// `[k dt, (k+1) dt]`: `(left, right)` multiply `v(k dt)` and `v((k+1) dt)`.
///
/// Panels containing a kink of G are split there and `v` is interpolated
/// linearly; Gdot is always taken as the limit from inside each sub-panel.
pub fn gdot_panel_coefficients(
    kernel: &dyn MemoryKernel,
    dt: f64,
    n_panels: usize,
) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    let kinks = kernel.kinks();
    let mut left = Vec::with_capacity(n_panels);
    let mut right = Vec::with_capacity(n_panels);
    for k in 0..n_panels {
        let s0 = k as f64 * dt;
        let s1 = (k + 1) as f64 * dt;
        let mut pts = vec![s0];
        pts.extend(kinks.iter().copied().filter(|&c| c > s0 && c < s1));
        pts.push(s1);
        let (mut cl, mut cr) = (0.0, 0.0);
        for w in pts.windows(2) {
            let (p, q) = (w[0], w[1]);
            let half = 0.5 * (q - p);
            let gp = kernel.derivative(p, Side::Right)?;
            let gq = kernel.derivative(q, Side::Left)?;
            let (tp, tq) = ((p - s0) / dt, (q - s0) / dt);
            cl += half * (gp * (1.0 - tp) + gq * (1.0 - tq));
            cr += half * (gp * tp + gq * tq);
        }
        left.push(cl);
        right.push(cr);
    }
    Ok((left, right))
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    if alpha == 0.0 {
        return;
    }
    for (a, b) in y.iter_mut().zip(x) {
        *a += alpha * b;
    }
}

/// `sum_{m<n} w_m K((n-m) dt) L^m` into `out`.
fn assemble_k_form(lap: &[Vec<f64>], k_table: &[f64], n: usize, dt: f64, out: &mut [f64]) {
    for m in 0..n {
        axpy(out, k_form_weight(m, dt) * k_table[n - m], &lap[m]);
    }
}

/// `sum_k left_k L^{n-k} + right_k L^{n-k-1}` into `out`.
fn assemble_gdot_form(lap: &[Vec<f64>], left: &[f64], right: &[f64], n: usize, out: &mut [f64]) {
    for k in 0..n {
        axpy(out, left[k], &lap[n - k]);
        axpy(out, right[k], &lap[n - k - 1]);
    }
}

/// The memory convolution at `t_n` from a stored history of displacements.
///
/// K-form expects `u^0..u^{n-1}` (the `u^n` term has zero weight); Gdot-form
/// expects `u^0..u^n`. The step is `dt = t_n / n`.
pub fn memory_term(
    grid: &Grid,
    history: &[Field],
    kernel: &dyn MemoryKernel,
    t_n: f64,
    form: MemoryForm,
) -> Result<Field, SolverError> {
    let n = match form {
        MemoryForm::KForm => history.len(),
        MemoryForm::GdotForm => history.len().saturating_sub(1),
    };
    let mut out = Field::zeros(*grid);
    if n == 0 {
        return Ok(out);
    }
    if history.iter().any(|f| !f.grid().same_as(grid)) {
        return Err(GridError::Mismatch.into());
    }
    if !(t_n > 0.0) {
        return Err(SolverError::InvalidSpec(format!(
            "memory term needs t_n > 0 for a non-empty history, got {t_n}"
        )));
    }
    let dt = t_n / n as f64;
    let h = grid.h();
    let lap: Vec<Vec<f64>> = history
        .iter()
        .map(|u| {
            let mut l = vec![0.0; grid.n_interior()];
            laplacian_into(u.values(), h, &mut l);
            l
        })
        .collect();
    match form {
        MemoryForm::KForm => {
            let k_table = kernel.integrated_table(dt, n)?;
            assemble_k_form(&lap, &k_table, n, dt, out.values_mut());
        }
        MemoryForm::GdotForm => {
            let (left, right) = gdot_panel_coefficients(kernel, dt, n)?;
            assemble_gdot_form(&lap, &left, &right, n, out.values_mut());
        }
    }
    Ok(out)
}

/// `F(t_n) = int_0^{t_n} int_0^tau f` per node, by iterated trapezoid.
fn double_time_integral(spec: &ProblemSpec) -> Result<Option<Vec<Vec<f64>>>, SolverError> {
    if spec.f.is_literal_zero() {
        return Ok(None);
    }
    let n = spec.n_steps;
    let dt = spec.dt();
    let nx = spec.grid.n_interior();
    let mut by_time = Vec::with_capacity(n + 1);
    for k in 0..=n {
        by_time.push(spec.sample(&spec.f, k as f64 * dt, "f")?.into_values());
    }
    let mut out = vec![vec![0.0; nx]; n + 1];
    let mut column = vec![0.0; n + 1];
    for j in 0..nx {
        for k in 0..=n {
            column[k] = by_time[k][j];
        }
        let once = cumulative_trapezoid(&column, dt);
        let twice = cumulative_trapezoid(&once, dt);
        for k in 0..=n {
            out[k][j] = twice[k];
        }
    }
    Ok(Some(out))
}

fn prony_view(spec: &ProblemSpec) -> Option<(f64, Vec<PronyTerm>)> {
    if spec.memory_path == MemoryPath::Direct {
        return None;
    }
    spec.kernel.prony_parts().map(|(g, t)| (g, t.to_vec()))
}

fn check_finite(u: &[f64], step: usize, dt: f64) -> Result<(), SolverError> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFinite {
            step,
            time: step as f64 * dt,
        })
    }
}

struct Recorder {
    stride: usize,
    grid: Grid,
    dt: f64,
    steps: Vec<usize>,
    times: Vec<f64>,
    snapshots: Vec<Field>,
}

impl Recorder {
    fn new(spec: &ProblemSpec) -> Self {
        let saved = spec.n_steps / spec.stride + 1;
        Self {
            stride: spec.stride,
            grid: spec.grid,
            dt: spec.dt(),
            steps: Vec::with_capacity(saved),
            times: Vec::with_capacity(saved),
            snapshots: Vec::with_capacity(saved),
        }
    }

    fn wants(&self, step: usize) -> bool {
        step.is_multiple_of(self.stride)
    }

    fn offer(&mut self, step: usize, u: &[f64]) {
        if self.wants(step) {
            self.steps.push(step);
            self.times.push(step as f64 * self.dt);
            self.snapshots
                .push(Field::from_values(self.grid, u.to_vec()).expect("grid-sized state"));
        }
    }
}

fn metadata(spec: &ProblemSpec, path: &'static str, quadrature: &'static str, started: Instant) -> RunMetadata {
    let g0 = spec.kernel.value(0.0).unwrap_or(f64::NAN);
    RunMetadata {
        scheme: spec.scheme,
        kernel: spec.kernel.describe(),
        dt: spec.dt(),
        h: spec.grid.h(),
        memory_path: path,
        quadrature,
        cfl_number: spec.dt() * g0.max(0.0).sqrt() / spec.grid.h(),
        elapsed_secs: started.elapsed().as_secs_f64(),
    }
}

/// Integral-form marching; never consults Gdot.
pub fn solve_integral(spec: &ProblemSpec) -> Result<SolutionField, SolverError> {
    spec.validate()?;
    let started = Instant::now();
    let n_steps = spec.n_steps;
    let dt = spec.dt();
    let h = spec.grid.h();
    let nx = spec.grid.n_interior();

    let u0 = spec.sample(&spec.u0, 0.0, "u0")?.into_values();
    let u1 = spec.sample(&spec.u1, 0.0, "u1")?.into_values();
    let forcing = double_time_integral(spec)?;
    let prony = prony_view(spec);

    let mut rec = Recorder::new(spec);
    rec.offer(0, &u0);

    let mut lap0 = vec![0.0; nx];
    laplacian_into(&u0, h, &mut lap0);

    let mut u = vec![0.0; nx];
    let path;
    match prony {
        Some((ginf, terms)) => {
            path = "prony-recursive";
            let decay: Vec<f64> = terms.iter().map(|p| (-dt / p.relaxation_time).exp()).collect();
            let mut acc_a = vec![0.0; nx];
            let mut acc_r = vec![0.0; nx];
            let mut acc_e = vec![vec![0.0; nx]; terms.len()];
            let mut lap = lap0;
            for n in 1..=n_steps {
                // fold in L^{n-1}
                let w = k_form_weight(n - 1, dt);
                axpy(&mut acc_a, w, &lap);
                axpy(&mut acc_r, dt, &acc_a);
                for (e, &q) in acc_e.iter_mut().zip(&decay) {
                    for (ej, lj) in e.iter_mut().zip(&lap) {
                        *ej = q * (*ej + w * lj);
                    }
                }
                let t = n as f64 * dt;
                for j in 0..nx {
                    let mut m = ginf * acc_r[j];
                    for (p, e) in terms.iter().zip(&acc_e) {
                        m += p.modulus * p.relaxation_time * (acc_a[j] - e[j]);
                    }
                    u[j] = m + u1[j] * t + u0[j];
                }
                if let Some(ff) = &forcing {
                    axpy(&mut u, 1.0, &ff[n]);
                }
                check_finite(&u, n, dt)?;
                rec.offer(n, &u);
                laplacian_into(&u, h, &mut lap);
            }
        }
        None => {
            path = "direct";
            let k_table = spec.kernel.integrated_table(dt, n_steps)?;
            let mut lap_hist = Vec::with_capacity(n_steps + 1);
            lap_hist.push(lap0);
            for n in 1..=n_steps {
                let t = n as f64 * dt;
                for j in 0..nx {
                    u[j] = u1[j] * t + u0[j];
                }
                if let Some(ff) = &forcing {
                    axpy(&mut u, 1.0, &ff[n]);
                }
                assemble_k_form(&lap_hist, &k_table, n, dt, &mut u);
                check_finite(&u, n, dt)?;
                rec.offer(n, &u);
                let mut l = vec![0.0; nx];
                laplacian_into(&u, h, &mut l);
                lap_hist.push(l);
            }
        }
    }

    Ok(SolutionField {
        spec: spec.clone(),
        steps: rec.steps,
        times: rec.times,
        snapshots: rec.snapshots,
        velocities: None,
        meta: metadata(spec, path, "trapezoidal product rule on K", started),
    })
}

/// Differential-form marching (explicit central differences).
pub fn solve_differential(spec: &ProblemSpec) -> Result<SolutionField, SolverError> {
    spec.validate()?;
    let started = Instant::now();
    let n_steps = spec.n_steps;
    let dt = spec.dt();
    let dt2 = dt * dt;
    let h = spec.grid.h();
    let nx = spec.grid.n_interior();
    let g0 = spec.kernel.value(0.0)?;

    let u0 = spec.sample(&spec.u0, 0.0, "u0")?.into_values();
    let u1 = spec.sample(&spec.u1, 0.0, "u1")?.into_values();
    let f_zero = spec.f.is_literal_zero();
    let f_at = |n: usize| -> Result<Option<Vec<f64>>, SolverError> {
        if f_zero {
            Ok(None)
        } else {
            Ok(Some(spec.sample(&spec.f, n as f64 * dt, "f")?.into_values()))
        }
    };
    let prony = prony_view(spec);

    let mut rec = Recorder::new(spec);
    let mut velocities = Vec::with_capacity(n_steps / spec.stride + 1);
    rec.offer(0, &u0);
    velocities.push(Field::from_values(spec.grid, u1.clone())?);

    let mut lap = vec![0.0; nx];
    laplacian_into(&u0, h, &mut lap);

    // Taylor start
    let mut cur = vec![0.0; nx];
    for j in 0..nx {
        cur[j] = u0[j] + dt * u1[j] + 0.5 * dt2 * g0 * lap[j];
    }
    if let Some(f0) = f_at(0)? {
        axpy(&mut cur, 0.5 * dt2, &f0);
    }
    check_finite(&cur, 1, dt)?;
    let mut prev = u0;
    let mut next = vec![0.0; nx];
    let mut memory = vec![0.0; nx];

    enum Memory {
        Direct {
            left: Vec<f64>,
            right: Vec<f64>,
            lap_hist: Vec<Vec<f64>>,
        },
        Prony {
            rates: Vec<f64>,
            decay: Vec<f64>,
            acc: Vec<Vec<f64>>,
            last_lap: Vec<f64>,
        },
    }
    let mut mem = match prony {
        Some((_, terms)) => Memory::Prony {
            rates: terms.iter().map(|p| -p.modulus / p.relaxation_time).collect(),
            decay: terms.iter().map(|p| (-dt / p.relaxation_time).exp()).collect(),
            acc: vec![vec![0.0; nx]; terms.len()],
            last_lap: lap.clone(),
        },
        None => {
            let (left, right) = gdot_panel_coefficients(spec.kernel.as_ref(), dt, n_steps)?;
            let mut lap_hist = Vec::with_capacity(n_steps + 1);
            lap_hist.push(lap.clone());
            Memory::Direct {
                left,
                right,
                lap_hist,
            }
        }
    };
    let path = match mem {
        Memory::Direct { .. } => "direct",
        Memory::Prony { .. } => "prony-recursive",
    };

    // state: older = u^{n-2}, prev = u^{n-1}, cur = u^n
    let mut older = vec![0.0; nx];
    for n in 1..n_steps {
        laplacian_into(&cur, h, &mut lap);
        memory.iter_mut().for_each(|m| *m = 0.0);
        match &mut mem {
            Memory::Direct {
                left,
                right,
                lap_hist,
            } => {
                lap_hist.push(lap.clone());
                assemble_gdot_form(lap_hist, left, right, n, &mut memory);
            }
            Memory::Prony {
                rates,
                decay,
                acc,
                last_lap,
            } => {
                for ((a, &q), &r) in acc.iter_mut().zip(decay.iter()).zip(rates.iter()) {
                    for j in 0..nx {
                        a[j] = q * a[j] + 0.5 * dt * (q * last_lap[j] + lap[j]);
                    }
                    axpy(&mut memory, r, a);
                }
                last_lap.copy_from_slice(&lap);
            }
        }
        for j in 0..nx {
            next[j] = 2.0 * cur[j] - prev[j] + dt2 * (g0 * lap[j] + memory[j]);
        }
        if let Some(fn_) = f_at(n)? {
            axpy(&mut next, dt2, &fn_);
        }
        check_finite(&next, n + 1, dt)?;
        if rec.wants(n) {
            let v: Vec<f64> = next
                .iter()
                .zip(&prev)
                .map(|(a, b)| (a - b) / (2.0 * dt))
                .collect();
            velocities.push(Field::from_values(spec.grid, v)?);
        }
        rec.offer(n, &cur);
        std::mem::swap(&mut older, &mut prev);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    // second-order backward difference for the final velocity
    rec.offer(n_steps, &cur);
    let v: Vec<f64> = (0..nx)
        .map(|j| (3.0 * cur[j] - 4.0 * prev[j] + older[j]) / (2.0 * dt))
        .collect();
    velocities.push(Field::from_values(spec.grid, v)?);

    Ok(SolutionField {
        spec: spec.clone(),
        steps: rec.steps,
        times: rec.times,
        snapshots: rec.snapshots,
        velocities: Some(velocities),
        meta: metadata(spec, path, "trapezoid on Gdot, split at kinks", started),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RelaxationKernel;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    fn expr(s: &str) -> Expr {
        s.parse().unwrap()
    }

    fn prony() -> Arc<dyn MemoryKernel> {
        Arc::new(RelaxationKernel::prony1(1.0, 1.0, 0.5).unwrap())
    }

    fn wedge() -> Arc<dyn MemoryKernel> {
        Arc::new(RelaxationKernel::wedge(2.0, 1.0, 1.0).unwrap())
    }

    const MANUFACTURED_F: &str =
        "sin(pi*x)*((2*pi^2-1)*cos(t) - 2*pi^2*(2*cos(t)+sin(t)-2*exp(-2*t))/5)";

    fn manufactured(n: usize, steps: usize, scheme: Scheme) -> ProblemSpec {
        ProblemSpec::new(grid(n), 1.0, steps, prony(), scheme).with_data(
            expr("sin(pi*x)"),
            expr("0"),
            expr(MANUFACTURED_F),
        )
    }

    fn exact(x: f64, t: f64) -> f64 {
        (PI * x).sin() * t.cos()
    }

    #[test]
    fn zero_data_is_bitwise_zero() {
        for scheme in [Scheme::Integral, Scheme::Differential] {
            for k in [prony(), wedge()] {
                let sol = solve(&ProblemSpec::new(grid(15), 1.0, 40, k, scheme)).unwrap();
                assert!(sol
                    .snapshots
                    .iter()
                    .all(|u| u.values().iter().all(|v| v.to_bits() == 0)));
            }
        }
    }

    #[test]
    fn vanishing_kernel_reproduces_data_terms() {
        let k: Arc<dyn MemoryKernel> = Arc::new(RelaxationKernel::constant(0.0).unwrap());
        let spec = ProblemSpec::new(grid(7), 1.0, 10, k, Scheme::Integral)
            .with_data(expr("sin(pi*x)"), expr("x*(1-x)"), expr("2"))
            .with_scheme(Scheme::Integral);
        let sol = solve_integral(&spec).unwrap();
        for (t, u) in sol.times.iter().zip(&sol.snapshots) {
            for (x, v) in grid(7).nodes().zip(u.values()) {
                // the trapezoid rule integrates the constant forcing exactly
                let want = (PI * x).sin() + x * (1.0 - x) * t + t * t;
                assert!((v - want).abs() < 1e-14, "t={t} x={x}");
            }
        }
    }

    #[test]
    fn memory_term_cases() {
        let g = grid(9);
        let k = prony();
        let empty = memory_term(&g, &[], k.as_ref(), 0.0, MemoryForm::KForm).unwrap();
        assert_eq!(empty.max_abs(), 0.0);

        let v = Field::from_fn(g, |x| (PI * x).sin() + x * x);
        let dt = 0.1;
        let one = memory_term(&g, std::slice::from_ref(&v), k.as_ref(), dt, MemoryForm::KForm)
            .unwrap();
        let lap = crate::discretization::laplacian_apply(&v);
        let w = 0.5 * dt * k.integrated(dt).unwrap();
        for (a, b) in one.values().iter().zip(lap.values()) {
            assert!((a - w * b).abs() < 1e-12 * b.abs().max(1.0));
        }

        // constant history: int_0^t K(t - tau) dtau * lap(v) + O(dt^2)
        let t = 1.0;
        let kk = RelaxationKernel::prony1(1.0, 1.0, 0.5).unwrap();
        // int_0^1 K = int_0^1 (1 - s) G(s) ds, closed form for G = 1 + e^{-2s}
        let exact_weight = 0.5 + (1.0 + (-2.0f64).exp()) / 4.0;
        let mut prev_err = f64::INFINITY;
        for n in [10, 20, 40] {
            let hist = vec![v.clone(); n];
            let m = memory_term(&g, &hist, &kk, t, MemoryForm::KForm).unwrap();
            let err = m
                .values()
                .iter()
                .zip(lap.values())
                .map(|(a, b)| (a - exact_weight * b).abs())
                .fold(0.0, f64::max)
                / lap.max_abs();
            assert!(err < 0.1 / (n * n) as f64 * 10.0, "n={n} err={err}");
            assert!(err < prev_err / 3.5);
            prev_err = err;
        }
    }

    #[test]
    fn gdot_form_of_wedge_ignores_late_panels() {
        let (left, right) = gdot_panel_coefficients(wedge().as_ref(), 0.3, 10).unwrap();
        // kink at 1 lies inside panel [0.9, 1.2]
        assert!((left[3] + right[3] + 0.1).abs() < 1e-15);
        for k in 4..10 {
            assert_eq!((left[k], right[k]), (0.0, 0.0));
        }
    }

    #[test]
    fn prony_recursion_matches_direct_sum() {
        for scheme in [Scheme::Integral, Scheme::Differential] {
            let mut spec = manufactured(31, 64, scheme);
            let fast = solve(&spec).unwrap();
            spec.memory_path = MemoryPath::Direct;
            let slow = solve(&spec).unwrap();
            assert_eq!(fast.meta.memory_path, "prony-recursive");
            assert_eq!(slow.meta.memory_path, "direct");
            for (a, b) in fast.snapshots.iter().zip(&slow.snapshots) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    assert!((x - y).abs() <= 1e-10 * y.abs().max(1e-3), "{scheme:?}");
                }
            }
        }
    }

    #[test]
    fn manufactured_order() {
        for scheme in [Scheme::Integral, Scheme::Differential] {
            let errs: Vec<f64> = [(15, 32), (31, 64), (63, 128)]
                .iter()
                .map(|&(n, s)| solve(&manufactured(n, s, scheme)).unwrap().l2_error(exact))
                .collect();
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!(order >= 1.8, "{scheme:?} {errs:?}");
            }
        }
    }

    #[test]
    fn schemes_agree() {
        let a = solve(&manufactured(63, 128, Scheme::Integral)).unwrap();
        let b = solve(&manufactured(63, 128, Scheme::Differential)).unwrap();
        let d = a.l2_distance(&b).unwrap();
        assert!(d < a.l2_error(exact) + b.l2_error(exact), "{d}");
    }

    #[test]
    fn cfl_and_kink_policy() {
        let spec = ProblemSpec::new(grid(63), 1.0, 32, prony(), Scheme::Differential);
        assert!(matches!(spec.validate(), Err(SolverError::Cfl { .. })));
        assert!(spec.clone().with_scheme(Scheme::Integral).validate().is_ok());
        let mut spec = ProblemSpec::new(grid(15), 1.0, 64, wedge(), Scheme::Differential);
        spec.kink_policy = None;
        assert!(matches!(solve(&spec), Err(SolverError::UnsupportedKernel(_))));
        spec.stride = 3;
        assert!(matches!(spec.validate(), Err(SolverError::InvalidSpec(_))));
    }

    #[derive(Debug)]
    struct NoDerivative(RelaxationKernel);

    impl MemoryKernel for NoDerivative {
        fn value(&self, t: f64) -> Result<f64, KernelError> {
            self.0.value(t)
        }
        fn derivative(&self, _t: f64, _side: Side) -> Result<f64, KernelError> {
            panic!("integral scheme consulted Gdot")
        }
        fn second_derivative(&self, _t: f64) -> Option<Result<f64, KernelError>> {
            panic!("integral scheme consulted Gddot")
        }
        fn integrated(&self, xi: f64) -> Result<f64, KernelError> {
            self.0.integrated(xi)
        }
        fn integrated_table(&self, dt: f64, n: usize) -> Result<Vec<f64>, KernelError> {
            self.0.integrated_table(dt, n)
        }
        fn kinks(&self) -> Vec<f64> {
            panic!("integral scheme consulted the kinks")
        }
        fn describe(&self) -> String {
            "no-derivative".into()
        }
    }

    #[test]
    fn wedge_integral_run_never_touches_gdot() {
        let k = Arc::new(NoDerivative(RelaxationKernel::wedge(2.0, 1.0, 0.3).unwrap()));
        let mut spec = ProblemSpec::new(grid(31), 1.0, 128, k, Scheme::Integral)
            .with_data(expr("sin(pi*x)"), expr("0"), expr("0"));
        spec.kink_policy = None;
        let sol = solve(&spec).unwrap();
        assert!(sol.final_field().is_finite());
    }

    #[test]
    fn velocities_and_storage() {
        let spec = manufactured(15, 32, Scheme::Differential).with_stride(4);
        let sol = solve(&spec).unwrap();
        assert_eq!(sol.steps, vec![0, 4, 8, 12, 16, 20, 24, 28, 32]);
        assert_eq!(sol.snapshots[0].values().len(), 15);
        let v = sol.velocities.as_ref().unwrap();
        assert_eq!(v.len(), sol.snapshots.len());
        // u_t = -sin(pi x) sin t
        for (t, vk) in sol.times.iter().zip(v) {
            for (x, val) in grid(15).nodes().zip(vk.values()) {
                assert!((val + (PI * x).sin() * t.sin()).abs() < 2e-2, "t={t}");
            }
        }
    }

    #[test]
    fn linearity() {
        let d1 = (expr("sin(pi*x)"), expr("x*(1-x)"), expr("t*x"));
        let d2 = (expr("x^2*(1-x)"), expr("sin(2*pi*x)"), expr("cos(3*t)*x"));
        let (a, b) = (0.7, -1.3);
        let combo = |p: &Expr, q: &Expr| expr(&format!("{a}*({p}) + ({b})*({q})"));
        let d3 = (combo(&d1.0, &d2.0), combo(&d1.1, &d2.1), combo(&d1.2, &d2.2));
        for scheme in [Scheme::Integral, Scheme::Differential] {
            let base = ProblemSpec::new(grid(31), 1.0, 64, wedge(), scheme);
            let run = |d: &(Expr, Expr, Expr)| {
                solve(&base.clone().with_data(d.0.clone(), d.1.clone(), d.2.clone())).unwrap()
            };
            let (s1, s2, s3) = (run(&d1), run(&d2), run(&d3));
            let scale = s3.snapshots.iter().map(Field::max_abs).fold(0.0, f64::max);
            for k in 0..s3.snapshots.len() {
                for j in 0..31 {
                    let lin = a * s1.snapshots[k].values()[j] + b * s2.snapshots[k].values()[j];
                    assert!((s3.snapshots[k].values()[j] - lin).abs() <= 1e-12 * scale);
                }
            }
        }
    }
}
