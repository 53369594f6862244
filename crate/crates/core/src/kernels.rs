//! Relaxation functions G(t), their admissibility audit and the integrated
//! relaxation function K(xi) = int_0^xi G.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::exprparse::{self, EvalError, Expr};
use crate::quadrature::adaptive_simpson;

/// Absolute tolerance used when integrating expression-defined kernels.
pub const EXPRESSION_QUAD_TOL: f64 = 1e-8;
/// Default audit tolerance for monotonicity and convexity checks.
pub const AUDIT_TOL: f64 = 1e-9;
/// Default number of audit points.
pub const AUDIT_POINTS: usize = 512;

const FD_STEP: f64 = 1e-5;
const FD2_STEP: f64 = 1e-4;
const SIMPSON_DEPTH: u32 = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("negative time {0} passed to a relaxation function")]
    NegativeTime(f64),
    #[error("t = {t} is outside the tabulated interval [{min}, {max}]")]
    OutOfRange { t: f64, min: f64, max: f64 },
    #[error("derivative undefined at kink t = {t}; no kink policy given")]
    DerivativeUndefined { t: f64 },
    #[error("expression kernel: {0}")]
    Expression(#[from] EvalError),
    #[error("quadrature did not reach tolerance {tol} on [{a}, {b}]")]
    Quadrature { a: f64, b: f64, tol: f64 },
    #[error("kernel table: {0}")]
    Table(String),
    #[error("smoothing width {epsilon} is below the resolvable scale at t = {t}")]
    Resolution { epsilon: f64, t: f64 },
}

/// Which one-sided limit to take when a derivative is requested at a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Declared policy for evaluating Gdot exactly at a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinkPolicy {
    LeftLimit,
    RightLimit,
}

impl KinkPolicy {
    pub fn side(self) -> Side {
        match self {
            KinkPolicy::LeftLimit => Side::Left,
            KinkPolicy::RightLimit => Side::Right,
        }
    }
}

/// Anything the solvers can use as a memory kernel: raw relaxation functions
/// and their mollified counterparts.
pub trait MemoryKernel: fmt::Debug + Send + Sync {
    /// G(t) for t >= 0.
    fn value(&self, t: f64) -> Result<f64, KernelError>;

    /// One-sided derivative. Away from kinks both sides agree.
    fn derivative(&self, t: f64, side: Side) -> Result<f64, KernelError>;

    /// Second derivative where it is an ordinary function; `None` when it
    /// carries point masses (piecewise-linear kernels).
    fn second_derivative(&self, t: f64) -> Option<Result<f64, KernelError>>;

    /// K(xi) = int_0^xi G.
    fn integrated(&self, xi: f64) -> Result<f64, KernelError>;

    /// K(k dt) for k = 0..=n.
    fn integrated_table(&self, dt: f64, n: usize) -> Result<Vec<f64>, KernelError> {
        (0..=n).map(|k| self.integrated(k as f64 * dt)).collect()
    }

    /// Points where G is continuous but Gdot jumps.
    fn kinks(&self) -> Vec<f64>;

    fn describe(&self) -> String;

    /// `(G_inf, terms)` when G is a Prony series, enabling recursive convolution.
    fn prony_parts(&self) -> Option<(f64, &[PronyTerm])> {
        None
    }

    /// Gdot(t) with an explicit policy for kink points.
    fn gdot(&self, t: f64, policy: Option<KinkPolicy>) -> Result<f64, KernelError> {
        if t < 0.0 {
            return Err(KernelError::NegativeTime(t));
        }
        if self.kinks().iter().any(|&k| is_same_point(k, t)) {
            let policy = policy.ok_or(KernelError::DerivativeUndefined { t })?;
            return self.derivative(t, policy.side());
        }
        self.derivative(t, Side::Right)
    }
}

fn is_same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PronyTerm {
    pub modulus: f64,
    pub relaxation_time: f64,
}

/// Piecewise-linear relaxation function through `(t, G)` samples, starting at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    times: Vec<f64>,
    values: Vec<f64>,
    // cumulative integral at each sample
    prefix: Vec<f64>,
}

impl Table {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, KernelError> {
        if samples.len() < 2 {
            return Err(KernelError::Table("at least two samples are required".into()));
        }
        if samples[0].0 != 0.0 {
            return Err(KernelError::Table(format!(
                "first sample must be at t = 0, got {}",
                samples[0].0
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(KernelError::Table(format!(
                    "times must be strictly increasing (row {})",
                    i + 2
                )));
            }
        }
        if let Some(&(t, g)) = samples.iter().find(|s| !s.0.is_finite() || !s.1.is_finite()) {
            return Err(KernelError::Table(format!("non-finite sample ({t}, {g})")));
        }
        let (times, values): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let mut prefix = vec![0.0; times.len()];
        for k in 1..times.len() {
            prefix[k] = prefix[k - 1] + 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
        }
        Ok(Self {
            times,
            values,
            prefix,
        })
    }

    /// Reads a two-column `t,G` CSV. A non-numeric first row is taken as a header.
    pub fn from_csv_path(path: &Path) -> Result<Self, KernelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KernelError::Table(format!("{}: {e}", path.display())))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self, KernelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut samples = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| KernelError::Table(e.to_string()))?;
            if rec.len() != 2 {
                return Err(KernelError::Table(format!(
                    "row {} has {} columns, expected 2",
                    i + 1,
                    rec.len()
                )));
            }
            let t = rec[0].parse::<f64>();
            let g = rec[1].parse::<f64>();
            match (t, g) {
                (Ok(t), Ok(g)) => samples.push((t, g)),
                _ if i == 0 => continue,
                _ => {
                    return Err(KernelError::Table(format!(
                        "row {} is not numeric: {:?}",
                        i + 1,
                        rec
                    )))
                }
            }
        }
        Self::new(samples)
    }

    pub fn max_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn check_range(&self, t: f64) -> Result<(), KernelError> {
        if t < 0.0 || t > self.max_time() {
            return Err(KernelError::OutOfRange {
                t,
                min: 0.0,
                max: self.max_time(),
            });
        }
        Ok(())
    }

    // index k of the segment [t_k, t_{k+1}] holding t; ties go to the right segment
    fn segment(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k])
    }

    fn value(&self, t: f64) -> Result<f64, KernelError> {
        self.check_range(t)?;
        let k = self.segment(t);
        Ok(self.values[k] + self.slope(k) * (t - self.times[k]))
    }

    fn derivative(&self, t: f64, side: Side) -> Result<f64, KernelError> {
        self.check_range(t)?;
        let mut k = self.segment(t);
        if side == Side::Left && k > 0 && t == self.times[k] {
            k -= 1;
        }
        Ok(self.slope(k))
    }

    fn integrated(&self, xi: f64) -> Result<f64, KernelError> {
        self.check_range(xi)?;
        let k = self.segment(xi);
        let d = xi - self.times[k];
        Ok(self.prefix[k] + self.values[k] * d + 0.5 * self.slope(k) * d * d)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

/// The relaxation function G of the material.
#[derive(Debug, Clone, PartialEq)]
pub enum RelaxationKernel {
    /// Linear drop from `g0` to `ginf` over `[0, a]`, constant afterwards.
    Wedge { g0: f64, ginf: f64, a: f64 },
    /// `ginf + sum g_i exp(-t / tau_i)`.
    Prony { ginf: f64, terms: Vec<PronyTerm> },
    Tabulated(Table),
    Expression { expr: Expr, source: String },
}

impl RelaxationKernel {
    pub fn wedge(g0: f64, ginf: f64, a: f64) -> Result<Self, KernelError> {
        if !(g0 > 0.0 && g0.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("wedge G0 must be positive, got {g0}")));
        }
        if !(ginf > 0.0 && ginf.is_finite()) {
            return Err(KernelError::InvalidParameter(format!(
                "wedge Ginf must be positive, got {ginf}"
            )));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("wedge a must be positive, got {a}")));
        }
        Ok(Self::Wedge { g0, ginf, a })
    }

    pub fn prony(ginf: f64, terms: Vec<PronyTerm>) -> Result<Self, KernelError> {
        if !(ginf >= 0.0 && ginf.is_finite()) {
            return Err(KernelError::InvalidParameter(format!(
                "Prony Ginf must be nonnegative, got {ginf}"
            )));
        }
        for (i, term) in terms.iter().enumerate() {
            if !(term.modulus > 0.0 && term.modulus.is_finite()) {
                return Err(KernelError::InvalidParameter(format!(
                    "Prony term {i}: modulus must be positive, got {}",
                    term.modulus
                )));
            }
            if !(term.relaxation_time > 0.0 && term.relaxation_time.is_finite()) {
                return Err(KernelError::InvalidParameter(format!(
                    "Prony term {i}: relaxation time must be positive, got {}",
                    term.relaxation_time
                )));
            }
        }
        Ok(Self::Prony { ginf, terms })
    }

    /// Single-term Prony kernel `ginf + g exp(-t/tau)`.
    pub fn prony1(ginf: f64, g: f64, tau: f64) -> Result<Self, KernelError> {
        Self::prony(
            ginf,
            vec![PronyTerm {
                modulus: g,
                relaxation_time: tau,
            }],
        )
    }

    /// G identically equal to `c`.
    pub fn constant(c: f64) -> Result<Self, KernelError> {
        Self::prony(c, Vec::new())
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self, KernelError> {
        Table::new(samples).map(Self::Tabulated)
    }

    pub fn expression(source: &str) -> Result<Self, KernelError> {
        let expr = exprparse::parse(source)
            .map_err(|e| KernelError::InvalidParameter(format!("kernel expression: {e}")))?;
        if expr.uses_x() {
            return Err(KernelError::InvalidParameter(
                "kernel expression may only depend on t".into(),
            ));
        }
        Ok(Self::Expression {
            expr,
            source: source.to_string(),
        })
    }

    /// Lipschitz constant of G on [0, inf), when it is known in closed form.
    pub fn lipschitz(&self) -> Option<f64> {
        match self {
            Self::Wedge { g0, ginf, a } => Some((g0 - ginf).abs() / a),
            Self::Prony { terms, .. } => {
                Some(terms.iter().map(|p| p.modulus / p.relaxation_time).sum())
            }
            Self::Tabulated(tab) => Some(
                (0..tab.times.len() - 1)
                    .map(|k| tab.slope(k).abs())
                    .fold(0.0, f64::max),
            ),
            Self::Expression { .. } => None,
        }
    }

    /// Equilibrium modulus G(inf), when the variant defines one.
    pub fn equilibrium_modulus(&self) -> Option<f64> {
        match self {
            Self::Wedge { ginf, .. } | Self::Prony { ginf, .. } => Some(*ginf),
            Self::Tabulated(tab) => tab.values.last().copied(),
            Self::Expression { .. } => None,
        }
    }

    fn expr_eval(expr: &Expr, t: f64) -> Result<f64, KernelError> {
        Ok(expr.eval(0.0, t)?)
    }
}

impl MemoryKernel for RelaxationKernel {
    fn value(&self, t: f64) -> Result<f64, KernelError> {
        if t < 0.0 {
            return Err(KernelError::NegativeTime(t));
        }
        match self {
            Self::Wedge { g0, ginf, a } => Ok(if t <= *a {
                (ginf - g0) / a * t + g0
            } else {
                *ginf
            }),
            Self::Prony { ginf, terms } => Ok(ginf
                + terms
                    .iter()
                    .map(|p| p.modulus * (-t / p.relaxation_time).exp())
                    .sum::<f64>()),
            Self::Tabulated(tab) => tab.value(t),
            Self::Expression { expr, .. } => Self::expr_eval(expr, t),
        }
    }

    fn derivative(&self, t: f64, side: Side) -> Result<f64, KernelError> {
        if t < 0.0 {
            return Err(KernelError::NegativeTime(t));
        }
        match self {
            Self::Wedge { g0, ginf, a } => {
                let on_slope = t < *a || (t == *a && side == Side::Left);
                Ok(if on_slope { (ginf - g0) / a } else { 0.0 })
            }
            Self::Prony { terms, .. } => Ok(-terms
                .iter()
                .map(|p| p.modulus / p.relaxation_time * (-t / p.relaxation_time).exp())
                .sum::<f64>()),
            Self::Tabulated(tab) => tab.derivative(t, side),
            Self::Expression { expr, .. } => {
                let h = FD_STEP * t.max(1.0);
                if t >= h {
                    let fp = Self::expr_eval(expr, t + h)?;
                    let fm = Self::expr_eval(expr, t - h)?;
                    Ok((fp - fm) / (2.0 * h))
                } else {
                    let f0 = Self::expr_eval(expr, t)?;
                    let f1 = Self::expr_eval(expr, t + h)?;
                    let f2 = Self::expr_eval(expr, t + 2.0 * h)?;
                    Ok((-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h))
                }
            }
        }
    }

    fn second_derivative(&self, t: f64) -> Option<Result<f64, KernelError>> {
        if t < 0.0 {
            return Some(Err(KernelError::NegativeTime(t)));
        }
        match self {
            Self::Wedge { .. } | Self::Tabulated(_) => None,
            Self::Prony { terms, .. } => Some(Ok(terms
                .iter()
                .map(|p| {
                    p.modulus / (p.relaxation_time * p.relaxation_time)
                        * (-t / p.relaxation_time).exp()
                })
                .sum())),
            Self::Expression { expr, .. } => Some((|| {
                let h = FD2_STEP * t.max(1.0);
                if t >= h {
                    let fp = Self::expr_eval(expr, t + h)?;
                    let f0 = Self::expr_eval(expr, t)?;
                    let fm = Self::expr_eval(expr, t - h)?;
                    Ok((fp - 2.0 * f0 + fm) / (h * h))
                } else {
                    let f0 = Self::expr_eval(expr, t)?;
                    let f1 = Self::expr_eval(expr, t + h)?;
                    let f2 = Self::expr_eval(expr, t + 2.0 * h)?;
                    let f3 = Self::expr_eval(expr, t + 3.0 * h)?;
                    Ok((2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h))
                }
            })()),
        }
    }

    fn integrated(&self, xi: f64) -> Result<f64, KernelError> {
        if xi < 0.0 {
            return Err(KernelError::NegativeTime(xi));
        }
        match self {
            Self::Wedge { g0, ginf, a } => Ok(if xi <= *a {
                g0 * xi + (ginf - g0) * xi * xi / (2.0 * a)
            } else {
                0.5 * a * (g0 + ginf) + ginf * (xi - a)
            }),
            Self::Prony { ginf, terms } => Ok(ginf * xi
                + terms
                    .iter()
                    .map(|p| {
                        p.modulus * p.relaxation_time * -(-xi / p.relaxation_time).exp_m1()
                    })
                    .sum::<f64>()),
            Self::Tabulated(tab) => tab.integrated(xi),
            Self::Expression { expr, .. } => {
                let mut f = |t: f64| Self::expr_eval(expr, t);
                adaptive_simpson(&mut f, 0.0, xi, EXPRESSION_QUAD_TOL, SIMPSON_DEPTH)?.map_err(
                    |nc| KernelError::Quadrature {
                        a: nc.a,
                        b: nc.b,
                        tol: EXPRESSION_QUAD_TOL,
                    },
                )
            }
        }
    }

    fn integrated_table(&self, dt: f64, n: usize) -> Result<Vec<f64>, KernelError> {
        let Self::Expression { expr, .. } = self else {
            return (0..=n).map(|k| self.integrated(k as f64 * dt)).collect();
        };
        // panel-wise accumulation keeps the cost linear in n
        let tol = EXPRESSION_QUAD_TOL / (n.max(1) as f64);
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        out.push(0.0);
        let mut f = |t: f64| Self::expr_eval(expr, t);
        for k in 0..n {
            let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
            acc += adaptive_simpson(&mut f, a, b, tol, SIMPSON_DEPTH)?
                .map_err(|nc| KernelError::Quadrature { a: nc.a, b: nc.b, tol })?;
            out.push(acc);
        }
        Ok(out)
    }

    fn kinks(&self) -> Vec<f64> {
        match self {
            Self::Wedge { a, .. } => vec![*a],
            Self::Tabulated(tab) => tab.times[1..tab.times.len() - 1].to_vec(),
            Self::Prony { .. } | Self::Expression { .. } => Vec::new(),
        }
    }

    fn prony_parts(&self) -> Option<(f64, &[PronyTerm])> {
        match self {
            Self::Prony { ginf, terms } => Some((*ginf, terms)),
            _ => None,
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::Wedge { g0, ginf, a } => format!("wedge(G0={g0}, Ginf={ginf}, a={a})"),
            Self::Prony { ginf, terms } => {
                let mut s = format!("prony(Ginf={ginf}");
                for p in terms {
                    s.push_str(&format!(", g={} tau={}", p.modulus, p.relaxation_time));
                }
                s.push(')');
                s
            }
            Self::Tabulated(tab) => format!(
                "tabulated({} samples on [0, {}])",
                tab.times.len(),
                tab.max_time()
            ),
            Self::Expression { source, .. } => format!("expression({source})"),
        }
    }
}

/// K(xi) = int_0^xi G for a given kernel.
#[derive(Debug, Clone)]
pub struct IntegratedKernel {
    source: Arc<dyn MemoryKernel>,
}

impl IntegratedKernel {
    pub fn new(source: Arc<dyn MemoryKernel>) -> Self {
        Self { source }
    }

    pub fn source(&self) -> &Arc<dyn MemoryKernel> {
        &self.source
    }

    pub fn eval(&self, xi: f64) -> Result<f64, KernelError> {
        self.source.integrated(xi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Positivity,
    Monotonicity,
    Convexity,
    /// G could not be evaluated at an audit point.
    Evaluation,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Positivity => "positivity",
            Condition::Monotonicity => "monotonicity",
            Condition::Convexity => "convexity",
            Condition::Evaluation => "evaluation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub condition: Condition,
    /// First offending audit time.
    pub t: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub horizon: f64,
    pub n_audit: usize,
    pub tol: f64,
    pub violations: Vec<Violation>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, condition: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

/// Audits positivity, monotonicity and convexity of G on a uniform grid of
/// `n_audit` points over `[0, horizon]`.
///
/// This is a necessary-condition check only: properties between audit points
/// are not examined.
pub fn check_admissibility(
    kernel: &dyn MemoryKernel,
    horizon: f64,
    n_audit: usize,
    tol: f64,
) -> AdmissibilityReport {
    assert!(horizon > 0.0, "audit horizon must be positive");
    assert!(n_audit >= 3, "audit needs at least three points");
    let h = horizon / (n_audit - 1) as f64;
    let mut report = AdmissibilityReport {
        horizon,
        n_audit,
        tol,
        violations: Vec::new(),
    };
    let mut samples = Vec::with_capacity(n_audit);
    for k in 0..n_audit {
        let t = k as f64 * h;
        match kernel.value(t) {
            Ok(g) => samples.push((t, g)),
            Err(e) => {
                report.violations.push(Violation {
                    condition: Condition::Evaluation,
                    t,
                    detail: e.to_string(),
                });
                return report;
            }
        }
    }
    if let Some(&(t, g)) = samples.iter().find(|(_, g)| !(*g > 0.0)) {
        report.violations.push(Violation {
            condition: Condition::Positivity,
            t,
            detail: format!("G({t}) = {g}"),
        });
    }
    if let Some(w) = samples.windows(2).find(|w| w[1].1 > w[0].1 + tol) {
        report.violations.push(Violation {
            condition: Condition::Monotonicity,
            t: w[1].0,
            detail: format!("G increases from {} to {}", w[0].1, w[1].1),
        });
    }
    if let Some(w) = samples
        .windows(3)
        .find(|w| (w[2].1 - 2.0 * w[1].1 + w[0].1) / (h * h) < -tol)
    {
        let dd = (w[2].1 - 2.0 * w[1].1 + w[0].1) / (h * h);
        report.violations.push(Violation {
            condition: Condition::Convexity,
            t: w[1].0,
            detail: format!("second divided difference {dd}"),
        });
    }
    report
}
