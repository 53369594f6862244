//! Energy bookkeeping for computed solutions.
//!
//! ```text
//! E(t) = 1/2 int G(t) |u_x|^2 + 1/2 int |u_t|^2
//!        - 1/2 int_0^t ds Gdot(s) int |u_x(t) - u_x(t - s)|^2
//! ```
//!
//! For admissible kernels (Gdot <= 0, Gddot >= 0) and f = 0, E is
//! nonincreasing, and for any data
//! `E(t) <= alpha e^T C` with `alpha = max(1 / G(T + 1), 1)` and
//! `C = 1/2 G(0) |u0'|^2 + 1/2 |u1|^2 + 1/2 int_0^T |f|^2`.

use thiserror::Error;

use crate::discretization::{dirichlet_eigenpairs, project, Field, GridError};
use crate::exprparse::EvalError;
use crate::kernels::{KernelError, MemoryKernel};
use crate::quadrature::trapezoid_weight;
use crate::solver::{gdot_panel_coefficients, SolutionField};

/// Relative tolerance for energy monotonicity.
pub const MONOTONE_TOL: f64 = 1e-3;
/// Absolute floor for the history term.
pub const HISTORY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("insufficient snapshots: {0}")]
    InsufficientSnapshots(String),
    #[error("incompatible solutions: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("evaluating f: {0}")]
    Data(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub t: f64,
    pub elastic: f64,
    pub kinetic: f64,
    pub history: f64,
    pub total: f64,
    /// `int f u_t`
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub alpha: f64,
    /// `C(f, u1, u0)`
    pub data_constant: f64,
    /// `alpha e^T C`
    pub bound: f64,
    /// `E(t_k) - E(0) - int_0^{t_k} (power + dissipation)`; `None` when Gddot
    /// is not an ordinary function.
    pub identity_residual: Option<Vec<f64>>,
    pub identity_note: Option<String>,
}

impl EnergyReport {
    pub fn initial_energy(&self) -> f64 {
        self.rows[0].total
    }
}

/// `u_x` at all nodes (boundaries included): central inside, one-sided
/// second order at the two ends.
fn gradient_with_boundary(u: &Field) -> Vec<f64> {
    let full = u.with_boundary();
    let h = u.grid().h();
    let m = full.len();
    let mut g = vec![0.0; m];
    if m >= 3 {
        g[0] = (-3.0 * full[0] + 4.0 * full[1] - full[2]) / (2.0 * h);
        g[m - 1] = (3.0 * full[m - 1] - 4.0 * full[m - 2] + full[m - 3]) / (2.0 * h);
    }
    for j in 1..m - 1 {
        g[j] = (full[j + 1] - full[j - 1]) / (2.0 * h);
    }
    g
}

/// Trapezoid over all nodes including the boundary ones.
fn trapezoid_sum(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    values
        .iter()
        .enumerate()
        .map(|(k, v)| trapezoid_weight(k, n, h) * v)
        .sum()
}

fn interior_sq_integral(u: &[f64], h: f64) -> f64 {
    // zero boundary values: the trapezoid reduces to the interior sum
    h * u.iter().map(|v| v * v).sum::<f64>()
}

/// Velocities at the saved steps, reconstructed by differences when the
/// solver did not record them. The first entry is the initial velocity.
pub fn velocities(sol: &SolutionField) -> Result<Vec<Field>, EnergyError> {
    if let Some(v) = &sol.velocities {
        return Ok(v.clone());
    }
    let k = sol.snapshots.len();
    if k < 3 {
        return Err(EnergyError::InsufficientSnapshots(format!(
            "velocity reconstruction needs 3 snapshots, have {k}"
        )));
    }
    let ds = sol.snapshot_dt();
    let grid = sol.spec.grid;
    let u1 = Field::try_from_fn(grid, |x| sol.spec.u1.eval(x, 0.0))?;
    let mut out = Vec::with_capacity(k);
    out.push(u1);
    for i in 1..k - 1 {
        let v = sol.snapshots[i + 1]
            .values()
            .iter()
            .zip(sol.snapshots[i - 1].values())
            .map(|(a, b)| (a - b) / (2.0 * ds))
            .collect();
        out.push(Field::from_values(grid, v)?);
    }
    let (a, b, c) = (&sol.snapshots[k - 1], &sol.snapshots[k - 2], &sol.snapshots[k - 3]);
    let v = (0..grid.n_interior())
        .map(|j| (3.0 * a.values()[j] - 4.0 * b.values()[j] + c.values()[j]) / (2.0 * ds))
        .collect();
    out.push(Field::from_values(grid, v)?);
    Ok(out)
}

fn check_history_resolution(sol: &SolutionField) -> Result<(), EnergyError> {
    let k = sol.snapshots.len();
    if k < 3 {
        return Err(EnergyError::InsufficientSnapshots(format!(
            "need at least 3 saved steps, have {k}"
        )));
    }
    let ds = sol.snapshot_dt();
    if let Some(&kink) = sol
        .spec
        .kernel
        .kinks()
        .iter()
        .filter(|&&c| c > 0.0)
        .min_by(|a, b| a.total_cmp(b))
    {
        if ds > kink {
            return Err(EnergyError::InsufficientSnapshots(format!(
                "snapshot spacing {ds} exceeds the kernel's kink at {kink}; lower output.stride"
            )));
        }
    }
    Ok(())
}

/// Per-panel contributions to `int_0^{t_k} Gdot(s) phi_k(s) ds` for saved step
/// `k`, where `phi_k(s) = int |u_x(t_k) - u_x(t_k - s)|^2`. Entry `l` is the
/// panel starting at `s = l * snapshot_dt`.
pub fn history_panel_contributions(
    sol: &SolutionField,
    step_index: usize,
) -> Result<Vec<(f64, f64)>, EnergyError> {
    check_history_resolution(sol)?;
    let ds = sol.snapshot_dt();
    let grads: Vec<Vec<f64>> = sol.snapshots[..=step_index]
        .iter()
        .map(gradient_with_boundary)
        .collect();
    let phi = history_phi(&grads, step_index, sol.spec.grid.h());
    let (left, right) = gdot_panel_coefficients(sol.spec.kernel.as_ref(), ds, step_index)?;
    Ok((0..step_index)
        .map(|l| (l as f64 * ds, left[l] * phi[l] + right[l] * phi[l + 1]))
        .collect())
}

// phi(l) for l = 0..=k
fn history_phi(grads: &[Vec<f64>], k: usize, h: f64) -> Vec<f64> {
    let now = &grads[k];
    let mut diff = vec![0.0; now.len()];
    (0..=k)
        .map(|l| {
            for (d, (a, b)) in diff.iter_mut().zip(now.iter().zip(&grads[k - l])) {
                *d = (a - b) * (a - b);
            }
            trapezoid_sum(&diff, h)
        })
        .collect()
}

pub fn energy_series(sol: &SolutionField) -> Result<EnergyReport, EnergyError> {
    check_history_resolution(sol)?;
    let kernel: &dyn MemoryKernel = sol.spec.kernel.as_ref();
    let grid = sol.spec.grid;
    let h = grid.h();
    let ds = sol.snapshot_dt();
    let k_count = sol.snapshots.len();
    let vel = velocities(sol)?;
    let grads: Vec<Vec<f64>> = sol.snapshots.iter().map(gradient_with_boundary).collect();
    let grad_sq: Vec<f64> = grads
        .iter()
        .map(|g| trapezoid_sum(&g.iter().map(|v| v * v).collect::<Vec<_>>(), h))
        .collect();
    let (left, right) = gdot_panel_coefficients(kernel, ds, k_count - 1)?;

    let second: Option<Vec<f64>> = match kernel.second_derivative(0.0) {
        None => None,
        Some(_) => Some(
            (0..k_count)
                .map(|l| kernel.second_derivative(l as f64 * ds).expect("available at 0"))
                .collect::<Result<_, _>>()?,
        ),
    };

    let f_zero = sol.spec.f.is_literal_zero();
    let mut rows = Vec::with_capacity(k_count);
    let mut dissipation = Vec::with_capacity(k_count);
    for k in 0..k_count {
        let t = sol.times[k];
        let g = kernel.value(t)?;
        let elastic = 0.5 * g * grad_sq[k];
        let kinetic = 0.5 * interior_sq_integral(vel[k].values(), h);
        let phi = history_phi(&grads, k, h);
        let conv: f64 = (0..k)
            .map(|l| left[l] * phi[l] + right[l] * phi[l + 1])
            .sum();
        let history = -0.5 * conv;
        let power = if f_zero {
            0.0
        } else {
            let f = Field::try_from_fn(grid, |x| sol.spec.f.eval(x, t))?;
            h * f
                .values()
                .iter()
                .zip(vel[k].values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        if let Some(gdd) = &second {
            let inner: f64 = (0..=k)
                .map(|l| trapezoid_weight(l, k, ds) * gdd[l] * phi[l])
                .sum();
            let gdot_t = kernel.derivative(t, crate::kernels::Side::Left)?;
            dissipation.push(0.5 * gdot_t * grad_sq[k] - 0.5 * inner);
        }
        rows.push(EnergyRow {
            t,
            elastic,
            kinetic,
            history,
            total: elastic + kinetic + history,
            power,
        });
    }

    let (identity_residual, identity_note) = if second.is_some() {
        let mut out = Vec::with_capacity(k_count);
        let mut integral = 0.0;
        for k in 0..k_count {
            if k > 0 {
                let a = rows[k - 1].power + dissipation[k - 1];
                let b = rows[k].power + dissipation[k];
                integral += 0.5 * ds * (a + b);
            }
            out.push(rows[k].total - rows[0].total - integral);
        }
        (Some(out), None)
    } else {
        (
            None,
            Some(format!(
                "energy identity not evaluated: the second derivative of {} has point masses",
                kernel.describe()
            )),
        )
    };

    let horizon = sol.spec.horizon;
    let alpha = (1.0 / kernel.value(horizon + 1.0)?).max(1.0);
    let g0 = kernel.value(0.0)?;
    let u1 = Field::try_from_fn(grid, |x| sol.spec.u1.eval(x, 0.0))?;
    let mut data_constant = 0.5 * g0 * grad_sq[0] + 0.5 * interior_sq_integral(u1.values(), h);
    if !f_zero {
        let n = sol.spec.n_steps;
        let dt = sol.spec.dt();
        let mut acc = 0.0;
        for i in 0..=n {
            let f = Field::try_from_fn(grid, |x| sol.spec.f.eval(x, i as f64 * dt))?;
            acc += trapezoid_weight(i, n, dt) * interior_sq_integral(f.values(), h);
        }
        data_constant += 0.5 * acc;
    }
    let bound = alpha * horizon.exp() * data_constant;

    Ok(EnergyReport {
        rows,
        alpha,
        data_constant,
        bound,
        identity_residual,
        identity_note,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckOutcome {
    Pass,
    Fail { t: f64, detail: String },
    NotApplicable(String),
}

impl CheckOutcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, CheckOutcome::Pass)
    }

    /// Pass or not applicable.
    pub fn is_ok(&self) -> bool {
        !matches!(self, CheckOutcome::Fail { .. })
    }

    pub fn label(&self) -> String {
        match self {
            CheckOutcome::Pass => "pass".into(),
            CheckOutcome::Fail { t, detail } => format!("FAIL at t={t}: {detail}"),
            CheckOutcome::NotApplicable(why) => format!("n/a ({why})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipationVerdict {
    pub monotone: CheckOutcome,
    pub bounded: CheckOutcome,
    pub history_nonnegative: CheckOutcome,
}

impl DissipationVerdict {
    pub fn passed(&self) -> bool {
        self.monotone.is_ok() && self.bounded.is_ok() && self.history_nonnegative.is_ok()
    }
}

/// Monotonicity (only when `f = 0`), the `alpha e^T C` bound and the sign of
/// the history term.
pub fn dissipation_check(report: &EnergyReport, f_is_zero: bool, tol: f64) -> DissipationVerdict {
    let e0 = report.initial_energy();
    let monotone = if !f_is_zero {
        CheckOutcome::NotApplicable("forcing is nonzero".into())
    } else {
        report
            .rows
            .windows(2)
            .find(|w| w[1].total > w[0].total + tol * e0)
            .map_or(CheckOutcome::Pass, |w| CheckOutcome::Fail {
                t: w[1].t,
                detail: format!("E rose from {} to {}", w[0].total, w[1].total),
            })
    };
    let bounded = report
        .rows
        .iter()
        .find(|r| r.total > report.bound * (1.0 + tol))
        .map_or(CheckOutcome::Pass, |r| CheckOutcome::Fail {
            t: r.t,
            detail: format!("E = {} exceeds bound {}", r.total, report.bound),
        });
    let history_nonnegative = report
        .rows
        .iter()
        .find(|r| r.history < -HISTORY_TOL)
        .map_or(CheckOutcome::Pass, |r| CheckOutcome::Fail {
            t: r.t,
            detail: format!("history term {}", r.history),
        });
    DissipationVerdict {
        monotone,
        bounded,
        history_nonnegative,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecay {
    pub times: Vec<f64>,
    /// `series[i][k] = |(w(t_k), w^{i+1})|`
    pub series: Vec<Vec<f64>>,
}

impl ModeDecay {
    /// `sup_t |(w, w^i)|` per mode.
    pub fn sup(&self) -> Vec<f64> {
        self.series
            .iter()
            .map(|s| s.iter().copied().fold(0.0, f64::max))
            .collect()
    }
}

/// Projections of `w = u_a - u_b` on the first `n_modes` Dirichlet modes,
/// on the coarser of the two grids and at the times stored by the solution
/// with fewer snapshots.
pub fn mode_decay_diagnostic(
    sol_a: &SolutionField,
    sol_b: &SolutionField,
    n_modes: usize,
) -> Result<ModeDecay, EnergyError> {
    let (ga, gb) = (sol_a.spec.grid, sol_b.spec.grid);
    if ga.a() != gb.a() || ga.b() != gb.b() {
        return Err(EnergyError::Incompatible(format!(
            "domains ({}, {}) and ({}, {}) differ",
            ga.a(),
            ga.b(),
            gb.a(),
            gb.b()
        )));
    }
    let target = if ga.n_interior() <= gb.n_interior() { ga } else { gb };
    let modes = dirichlet_eigenpairs(&target, n_modes)?;
    let (base, other) = if sol_a.times.len() <= sol_b.times.len() {
        (sol_a, sol_b)
    } else {
        (sol_b, sol_a)
    };
    let tol = 1e-9 * base.spec.horizon.max(other.spec.horizon);
    let mut series = vec![Vec::with_capacity(base.times.len()); n_modes];
    let mut j = 0;
    for (t, u) in base.times.iter().zip(&base.snapshots) {
        while j < other.times.len() && other.times[j] < t - tol {
            j += 1;
        }
        if j == other.times.len() || (other.times[j] - t).abs() > tol {
            return Err(EnergyError::Incompatible(format!(
                "time {t} is missing from the second solution"
            )));
        }
        let ua = u.interpolate_to(&target)?;
        let ub = other.snapshots[j].interpolate_to(&target)?;
        let w: Vec<f64> = ua.values().iter().zip(ub.values()).map(|(a, b)| a - b).collect();
        let w = Field::from_values(target, w)?;
        for (i, m) in modes.iter().enumerate() {
            series[i].push(project(&w, &m.mode)?.abs());
        }
    }
    Ok(ModeDecay {
        times: base.times.clone(),
        series,
    })
}
