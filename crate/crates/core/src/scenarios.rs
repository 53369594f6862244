//! The studies behind the `viscokern` subcommands.
//!
//! Each runner takes a resolved [`RunConfig`] and returns the CSV tables it
//! produced together with pass/fail verdicts. Nothing is written to disk
//! until [`ScenarioOutput::write`] is called.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::config::{KernelKind, Reference, RunConfig, ScenarioKind, SchemeChoice};
use crate::discretization::{dirichlet_eigenpairs, project, Field, Grid};
use crate::energy::{dissipation_check, energy_series, mode_decay_diagnostic, EnergyError, MONOTONE_TOL};
use crate::kernels::{check_admissibility, KernelError, MemoryKernel, RelaxationKernel, AUDIT_POINTS, AUDIT_TOL};
use crate::mollify::{mollify, sup_distance_k, Mollifier};
use crate::quadrature::trapezoid_weight;
use crate::report::{format_float, snapshot_table, Cell, Table};
use crate::solver::{solve, ProblemSpec, Scheme, SolutionField, SolverError};

/// Distances below this count as zero in "strictly decreasing" checks.
pub const NEGLIGIBLE: f64 = 1e-9;
/// Required error reduction from the first to the last `a` in the wave-limit study.
pub const WAVE_LIMIT_REDUCTION: f64 = 0.8;
/// Required drop of the mode projections per resolution doubling.
pub const MODE_DECAY_FACTOR: f64 = 2.0;
pub const MANUFACTURED_MIN_ORDER: f64 = 1.8;
pub const SELF_MIN_ORDER: f64 = 1.5;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} ({})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub scenario: ScenarioKind,
    /// `(file name, table)`
    pub tables: Vec<(String, Table)>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
    pub elapsed_secs: f64,
}

impl ScenarioOutput {
    fn new(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            tables: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
            elapsed_secs: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Writes every table plus `meta.txt` (resolved config, verdicts, timing).
    pub fn write(&self, dir: &Path, config_echo: &str) -> io::Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for (name, table) in &self.tables {
            paths.push(crate::report::write_into(dir, name, table)?);
        }
        let mut meta = format!("scenario = {}\n\n[config]\n{config_echo}\n[verdicts]\n", self.scenario);
        for v in &self.verdicts {
            meta.push_str(&v.line());
            meta.push('\n');
        }
        if !self.notes.is_empty() {
            meta.push_str("\n[notes]\n");
            for n in &self.notes {
                meta.push_str(n);
                meta.push('\n');
            }
        }
        meta.push_str(&format!("\nelapsed_secs = {:.3}\n", self.elapsed_secs));
        paths.push(crate::report::write_text(dir, "meta.txt", &meta)?);
        Ok(paths)
    }
}

pub fn run(kind: ScenarioKind, cfg: &RunConfig) -> Result<ScenarioOutput, ScenarioError> {
    let started = Instant::now();
    let mut out = match kind {
        ScenarioKind::Solve => run_solve(cfg),
        ScenarioKind::WaveLimit => run_wave_limit(cfg),
        ScenarioKind::MollifyStudy => run_mollify_study(cfg),
        ScenarioKind::Convergence => run_convergence(cfg),
        ScenarioKind::EnergyAudit => run_energy_audit(cfg),
    }?;
    out.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(out)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn decreasing_or_negligible(xs: &[f64], scale: f64) -> bool {
    strictly_decreasing(xs) || xs.iter().all(|&x| x <= NEGLIGIBLE * scale.max(1.0))
}

fn list_text(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

/// One solve per scheme; snapshots at `output.stride`.
pub fn run_solve(cfg: &RunConfig) -> Result<ScenarioOutput, ScenarioError> {
    let mut out = ScenarioOutput::new(ScenarioKind::Solve);
    let mut sols = Vec::new();
    for scheme in cfg.scenario.scheme.schemes() {
        let sol = solve(&cfg.problem_spec(scheme))?;
        out.tables
            .push((format!("snapshots_{}.csv", scheme.name()), snapshot_table(&sol)));
        out.verdicts.push(Verdict::new(
            format!("{} run", scheme.name()),
            true,
            format!(
                "{} steps, |u(T)|_max = {}",
                cfg.n_steps,
                format_float(sol.final_field().max_abs())
            ),
        ));
        out.notes.push(format!(
            "{}: memory path {}, CFL number {:.4}, {:.3} s",
            scheme.name(),
            sol.meta.memory_path,
            sol.meta.cfl_number,
            sol.meta.elapsed_secs
        ));
        sols.push(sol);
    }
    if let [a, b] = sols.as_slice() {
        out.notes.push(format!(
            "L2(D) distance between schemes: {}",
            format_float(a.l2_distance(b)?)
        ));
    }
    Ok(out)
}

/// Sine-series solution of `u_tt = c^2 u_xx` at the grid nodes.
fn wave_solution(grid: &Grid, u0: &Field, u1: &Field, c: f64, times: &[f64]) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let modes = dirichlet_eigenpairs(grid, grid.n_interior()).map_err(SolverError::from)?;
    let mut active = Vec::new();
    for m in &modes {
        let p = project(u0, &m.mode).map_err(SolverError::from)?;
        let q = project(u1, &m.mode).map_err(SolverError::from)?;
        active.push((p, q, c * m.lambda.sqrt(), m));
    }
    let scale = active.iter().fold(0.0f64, |s, a| s.max(a.0.abs()).max(a.1.abs()));
    active.retain(|a| a.0.abs() > 1e-15 * scale || a.1.abs() > 1e-15 * scale);
    Ok(times
        .iter()
        .map(|&t| {
            let mut u = vec![0.0; grid.n_interior()];
            for (p, q, omega, m) in &active {
                let coef = p * (omega * t).cos() + q * (omega * t).sin() / omega;
                for (uj, wj) in u.iter_mut().zip(m.mode.values()) {
                    *uj += coef * wj;
                }
            }
            u
        })
        .collect())
}

/// `(|u - v|_{L2(D)}, |v|_{L2(D)})` with `v` given at the stored times.
fn l2_against(sol: &SolutionField, v: &[Vec<f64>]) -> (f64, f64) {
    let n = sol.snapshots.len() - 1;
    let dt = sol.snapshot_dt();
    let h = sol.spec.grid.h();
    let (mut diff, mut norm) = (0.0, 0.0);
    for (k, (u, w)) in sol.snapshots.iter().zip(v).enumerate() {
        let wt = trapezoid_weight(k, n, dt) * h;
        for (a, b) in u.values().iter().zip(w) {
            diff += wt * (a - b) * (a - b);
            norm += wt * b * b;
        }
    }
    (diff.sqrt(), norm.sqrt())
}

/// Relative L2(D) distance to the wave equation with `c^2 = Ginf` as the
/// wedge width `a` shrinks.
pub fn run_wave_limit(cfg: &RunConfig) -> Result<ScenarioOutput, ScenarioError> {
    if cfg.kernel.kind != KernelKind::Wedge {
        return Err(ScenarioError::Config("wave-limit needs kernel.type = wedge".into()));
    }
    if !cfg.problem.f.is_literal_zero() {
        return Err(ScenarioError::Config(
            "wave-limit compares against the free wave equation; set problem.f = 0".into(),
        ));
    }
    let a_list = &cfg.scenario.a_list;
    if a_list.is_empty() || !strictly_decreasing(a_list) {
        return Err(ScenarioError::Config(format!(
            "scenario.a_list must be nonempty and strictly decreasing, got [{}]",
            list_text(a_list)
        )));
    }
    let mut out = ScenarioOutput::new(ScenarioKind::WaveLimit);
    let grid = cfg.grid();
    let c = cfg.kernel.ginf.sqrt();
    let mut errors = Vec::with_capacity(a_list.len());
    let mut exact: Option<Vec<Vec<f64>>> = None;
    for &a in a_list {
        let kernel = Arc::new(RelaxationKernel::wedge(cfg.kernel.g0, cfg.kernel.ginf, a)?);
        let mut spec = cfg.problem_spec(Scheme::Integral).with_stride(1);
        spec.kernel = kernel;
        let sol = solve(&spec)?;
        if exact.is_none() {
            let u0 = Field::from_values(grid, sol.snapshots[0].values().to_vec()).map_err(SolverError::from)?;
            let u1 = Field::try_from_fn(grid, |x| cfg.problem.u1.eval(x, 0.0))
                .map_err(|source| SolverError::Data { which: "u1", source })?;
            exact = Some(wave_solution(&grid, &u0, &u1, c, &sol.times)?);
        }
        let (d, norm) = l2_against(&sol, exact.as_ref().expect("set above"));
        let rel = if norm > 0.0 { d / norm } else { d };
        errors.push(rel);
        out.notes.push(format!("a = {a}: {:.3} s", sol.meta.elapsed_secs));
    }
    let mut table = Table::new(["a", "relative_l2_error"]);
    table.comment(format!("wedge G0 = {}, Ginf = {}; limit speed c = {}", cfg.kernel.g0, cfg.kernel.ginf, format_float(c)));
    table.comment(format!("n_interior = {}, n_steps = {}, T = {}", cfg.n_interior, cfg.n_steps, cfg.problem.horizon));
    for (&a, &e) in a_list.iter().zip(&errors) {
        table.push(vec![a.into(), e.into()]);
    }
    out.tables.push(("wave_limit.csv".into(), table));
    out.verdicts.push(Verdict::new(
        "errors strictly decreasing in a",
        strictly_decreasing(&errors),
        list_text(&errors),
    ));
    if errors.len() >= 2 {
        let ratio = errors[errors.len() - 1] / errors[0];
        out.verdicts.push(Verdict::new(
            "last/first error ratio",
            ratio <= WAVE_LIMIT_REDUCTION,
            format!("{ratio:.4} <= {WAVE_LIMIT_REDUCTION}"),
        ));
    }
    Ok(out)
}

/// `K_eps -> K` and `u_eps -> u` along `scenario.epsilon_list`.
pub fn run_mollify_study(cfg: &RunConfig) -> Result<ScenarioOutput, ScenarioError> {
    let eps_list = &cfg.scenario.epsilon_list;
    if eps_list.is_empty() || !strictly_decreasing(eps_list) {
        return Err(ScenarioError::Config(format!(
            "scenario.epsilon_list must be nonempty and strictly decreasing, got [{}]",
            list_text(eps_list)
        )));
    }
    if eps_list.iter().any(|&e| 2.0 * e > 1.0) {
        return Err(ScenarioError::Config("scenario.epsilon_list needs 2 eps <= 1".into()));
    }
    let base = cfg.kernel.base.clone();
    let horizon = cfg.scenario.distance_horizon.unwrap_or(cfg.problem.horizon);
    let distances = sup_distance_k(&base, eps_list, horizon)?;
    let base_admissible = check_admissibility(&base, horizon, AUDIT_POINTS, AUDIT_TOL).is_admissible();
    let floor = base.value(1.0 + horizon)?;

    let mut spec = cfg.problem_spec(Scheme::Integral).with_stride(1);
    spec.kernel = Arc::new(base.clone());
    let reference = solve(&spec)?;
    let ref_norm = reference.l2_norm();

    let mut out = ScenarioOutput::new(ScenarioKind::MollifyStudy);
    let mut table = Table::new([
        "epsilon",
        "sup_K_distance",
        "min_Geps_over_grid",
        "admissible_flag",
        "solution_distance",
    ]);
    table.comment(format!("base kernel: {}", base.describe()));
    table.comment(format!("K distances on [0, {horizon}], {} points", crate::mollify::DISTANCE_GRID_POINTS));
    table.comment(format!(
        "solutions: integral scheme, n_interior = {}, n_steps = {}, T = {}",
        cfg.n_interior, cfg.n_steps, cfg.problem.horizon
    ));
    let mut sol_dist = Vec::new();
    let mut all_admissible = true;
    let mut bound_ok = true;
    for &(eps, kd) in &distances {
        let mk = mollify(base.clone(), eps, Mollifier::standard())?;
        let admissible = check_admissibility(&mk, horizon, AUDIT_POINTS, AUDIT_TOL).is_admissible();
        all_admissible &= admissible;
        let mut min_g = f64::INFINITY;
        for k in 0..AUDIT_POINTS {
            let t = horizon * k as f64 / (AUDIT_POINTS - 1) as f64;
            min_g = min_g.min(mk.value(t)?);
        }
        bound_ok &= min_g >= floor - 1e-9;
        let mut s = spec.clone();
        s.kernel = Arc::new(mk);
        let sol = solve(&s)?;
        let d = sol.l2_distance(&reference)?;
        sol_dist.push(d);
        table.push(vec![eps.into(), kd.into(), min_g.into(), admissible.into(), d.into()]);
    }
    out.tables.push(("mollify_study.csv".into(), table));
    let kd: Vec<f64> = distances.iter().map(|d| d.1).collect();
    out.verdicts.push(Verdict::new(
        "sup |K_eps - K| decreasing",
        decreasing_or_negligible(&kd, 1.0),
        list_text(&kd),
    ));
    if let Some(lip) = base.lipschitz() {
        let ok = distances.iter().all(|&(e, d)| d <= 2.0 * lip * e * horizon + NEGLIGIBLE);
        out.verdicts.push(Verdict::new(
            "sup |K_eps - K| <= 2 Lip eps T",
            ok,
            format!("Lip = {lip}, T = {horizon}"),
        ));
    }
    out.verdicts.push(Verdict::new(
        "solution distance decreasing",
        decreasing_or_negligible(&sol_dist, ref_norm),
        list_text(&sol_dist),
    ));
    out.verdicts.push(Verdict::new(
        "admissibility preserved",
        !base_admissible || all_admissible,
        if base_admissible {
            "base admissible"
        } else {
            "base not admissible; nothing to preserve"
        },
    ));
    out.verdicts.push(Verdict::new(
        "G_eps >= G(1 + T)",
        bound_ok,
        format!("G(1 + T) = {}", format_float(floor)),
    ));
    Ok(out)
}

fn level_spec(cfg: &RunConfig, scheme: Scheme, level: u32) -> ProblemSpec {
    let mut spec = cfg.problem_spec(scheme).with_stride(1);
    let n = (cfg.n_interior + 1) * (1 << level) - 1;
    spec.grid = Grid::new(cfg.problem.a, cfg.problem.b, n).expect("validated domain");
    spec.n_steps = cfg.n_steps << level;
    spec
}

fn orders(errors: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .map(|w| (w[0] > 0.0 && w[1] > 0.0).then(|| (w[0] / w[1]).log2()))
        .collect()
}

/// Errors and observed orders under simultaneous halving of h and dt.
pub fn run_convergence(cfg: &RunConfig) -> Result<ScenarioOutput, ScenarioError> {
    let levels = cfg.scenario.levels;
    if levels < 3 {
        return Err(ScenarioError::Config(format!("scenario.levels must be at least 3, got {levels}")));
    }
    let reference = cfg.scenario.reference;
    let min_order = cfg.scenario.min_order.unwrap_or(match reference {
        Reference::Manufactured => MANUFACTURED_MIN_ORDER,
        Reference::SelfConvergence => SELF_MIN_ORDER,
    });
    let solves = match reference {
        Reference::Manufactured => levels,
        Reference::SelfConvergence => levels + 1,
    };
    let schemes = cfg.scenario.scheme.schemes();
    let mut out = ScenarioOutput::new(ScenarioKind::Convergence);
    let mut table = Table::new(["scheme", "level", "n_interior", "n_steps", "h", "dt", "error", "order"]);
    table.comment(format!("kernel: {}", cfg.kernel().describe()));
    table.comment(match reference {
        Reference::Manufactured => "error: L2(D) distance to scenario.exact".to_string(),
        Reference::SelfConvergence => "error: L2(D) distance to the next finer level".to_string(),
    });

    let mut finest: Vec<(SolutionField, f64)> = Vec::new();
    let mut per_level: Vec<Vec<SolutionField>> = vec![Vec::new(); levels];
    for &scheme in &schemes {
        let sols: Vec<SolutionField> = (0..solves)
            .map(|l| solve(&level_spec(cfg, scheme, l as u32)))
            .collect::<Result<_, _>>()?;
        let errors: Vec<f64> = match reference {
            Reference::Manufactured => {
                let exact = cfg.scenario.exact.as_ref().expect("checked by the config");
                let mut errs = Vec::with_capacity(levels);
                for s in &sols {
                    let mut bad = None;
                    let e = s.l2_error(|x, t| {
                        exact.eval(x, t).unwrap_or_else(|err| {
                            bad = Some(err);
                            f64::NAN
                        })
                    });
                    if let Some(source) = bad {
                        return Err(SolverError::Data { which: "scenario.exact", source }.into());
                    }
                    errs.push(e);
                }
                errs
            }
            Reference::SelfConvergence => sols
                .windows(2)
                .map(|w| w[0].l2_distance(&w[1]))
                .collect::<Result<_, _>>()?,
        };
        let ords = orders(&errors);
        for l in 0..levels {
            let s = &sols[l];
            let order = if l == 0 {
                Cell::from("")
            } else {
                ords[l - 1].map_or(Cell::from("n/a"), Cell::from)
            };
            table.push(vec![
                scheme.name().into(),
                l.into(),
                s.spec.grid.n_interior().into(),
                s.spec.n_steps.into(),
                s.spec.grid.h().into(),
                s.spec.dt().into(),
                errors[l].into(),
                order,
            ]);
        }
        let (passed, detail) = if errors.iter().all(|&e| e == 0.0) {
            (true, "all errors exactly zero; orders n/a".to_string())
        } else {
            let shown: Vec<String> = ords
                .iter()
                .map(|o| o.map_or("n/a".into(), |v| format!("{v:.3}")))
                .collect();
            (
                ords.iter().all(|o| o.is_some_and(|v| v >= min_order)),
                format!("orders [{}] vs minimum {min_order}", shown.join(", ")),
            )
        };
        out.verdicts.push(Verdict::new(format!("{} observed order", scheme.name()), passed, detail));
        let mut sols = sols;
        sols.truncate(levels);
        let last_err = errors[levels - 1];
        for (l, s) in sols.into_iter().enumerate() {
            if l == levels - 1 {
                finest.push((s.clone(), last_err));
            }
            per_level[l].push(s);
        }
    }
    out.tables.push(("convergence.csv".into(), table));

    if let [(a, ea), (b, eb)] = finest.as_slice() {
        let d = a.l2_distance(b)?;
        out.verdicts.push(Verdict::new(
            "scheme agreement at the finest level",
            d <= ea + eb,
            format!("discrepancy {} vs error sum {}", format_float(d), format_float(ea + eb)),
        ));
    }

    let n_modes = cfg.scenario.n_modes;
    if n_modes > 0 && cfg.scenario.scheme == SchemeChoice::Both {
        let mut header = vec!["level".to_string(), "n_interior".into(), "n_steps".into()];
        header.extend((1..=n_modes).map(|i| format!("sup_mode_{i}")));
        let mut modes = Table::new(header);
        modes.comment("sup over t of |(u_integral - u_differential, w_i)|");
        let mut sups: Vec<Vec<f64>> = Vec::new();
        for (l, pair) in per_level.iter().enumerate() {
            let decay = mode_decay_diagnostic(&pair[0], &pair[1], n_modes)?;
            let sup = decay.sup();
            let mut row = vec![Cell::from(l), pair[0].spec.grid.n_interior().into(), pair[0].spec.n_steps.into()];
            row.extend(sup.iter().map(|&s| Cell::from(s)));
            modes.push(row);
            sups.push(sup);
        }
        out.tables.push(("mode_decay.csv".into(), modes));
        let scale = sups[0].iter().copied().fold(0.0, f64::max);
        let mut worst: f64 = f64::INFINITY;
        for w in sups.windows(2) {
            for (c, f) in w[0].iter().zip(&w[1]) {
                // modes the data does not excite carry only rounding noise
                if *c > 1e-10 * scale {
                    worst = worst.min(c / f);
                }
            }
        }
        out.verdicts.push(Verdict::new(
            "mode projections shrink under refinement",
            worst >= MODE_DECAY_FACTOR,
            format!("smallest reduction factor {worst:.3} vs {MODE_DECAY_FACTOR}"),
        ));
    }
    Ok(out)
}

/// Energy series, monotonicity and the `alpha e^T C` bound.
pub fn run_energy_audit(cfg: &RunConfig) -> Result<ScenarioOutput, ScenarioError> {
    let scheme = match cfg.scenario.scheme {
        SchemeChoice::Integral => Scheme::Integral,
        SchemeChoice::Differential => Scheme::Differential,
        SchemeChoice::Both => {
            return Err(ScenarioError::Config("energy-audit needs a single scenario.scheme".into()))
        }
    };
    let sol = solve(&cfg.problem_spec(scheme))?;
    let report = energy_series(&sol)?;
    let f_zero = cfg.problem.f.is_literal_zero();
    let verdict = dissipation_check(&report, f_zero, MONOTONE_TOL);

    let mut out = ScenarioOutput::new(ScenarioKind::EnergyAudit);
    let mut table = Table::new(["t", "elastic", "kinetic", "history", "total", "bound"]);
    table.comment(format!("kernel: {}, scheme: {}", sol.meta.kernel, scheme.name()));
    table.comment(format!(
        "alpha = {}, C = {}, bound = alpha e^T C",
        format_float(report.alpha),
        format_float(report.data_constant)
    ));
    match (&report.identity_residual, &report.identity_note) {
        (Some(res), _) => {
            let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            let msg = format!("max |energy identity residual| = {}", format_float(worst));
            table.comment(msg.clone());
            out.notes.push(msg);
        }
        (None, Some(note)) => {
            table.comment(note.clone());
            out.notes.push(note.clone());
        }
        (None, None) => {}
    }
    table.comment(format!(
        "verdict: monotone = {}; bounded = {}; history >= 0: {}",
        verdict.monotone.label(),
        verdict.bounded.label(),
        verdict.history_nonnegative.label()
    ));
    for r in &report.rows {
        table.push(vec![
            r.t.into(),
            r.elastic.into(),
            r.kinetic.into(),
            r.history.into(),
            r.total.into(),
            report.bound.into(),
        ]);
    }
    out.tables.push(("energy.csv".into(), table));
    out.verdicts.push(Verdict::new("energy monotone", verdict.monotone.is_ok(), verdict.monotone.label()));
    out.verdicts.push(Verdict::new("energy bounded", verdict.bounded.is_ok(), verdict.bounded.label()));
    out.verdicts.push(Verdict::new(
        "history term nonnegative",
        verdict.history_nonnegative.is_ok(),
        verdict.history_nonnegative.label(),
    ));
    Ok(out)
}
