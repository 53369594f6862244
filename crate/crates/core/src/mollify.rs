//! Mollified relaxation functions
//!
//! ```text
//! G_eps(t) = int rho((t - tau)/eps) / eps * G(eps + tau) dtau
//!          = int_{-1}^{1} rho(s) G(eps + t - eps s) ds
//! ```
//!
//! with `rho` the normalised standard bump on (-1, 1). The forward shift by
//! `eps` keeps the argument of G nonnegative for every t >= 0, so in general
//! `G_eps(0) != G(0)`.

use crate::kernels::{KernelError, MemoryKernel, RelaxationKernel, Side};
use crate::quadrature::GaussLegendre;

/// Default Gauss order per sub-panel.
pub const DEFAULT_ORDER: usize = 16;
/// Number of uniform sub-panels the support (-1, 1) is split into before
/// kink splitting. The bump is flat to all orders at +-1, which a single
/// Gauss panel resolves only to ~1e-5.
pub const SUPPORT_PANELS: usize = 32;

// below this ratio eps / max(1, t) the shifted arguments are no longer distinct doubles
const MIN_RELATIVE_EPS: f64 = 1e-12;

/// Standard bump `exp(1 / (s^2 - 1))` normalised to unit mass.
#[derive(Debug, Clone)]
pub struct Mollifier {
    scale: f64,
}

impl Default for Mollifier {
    fn default() -> Self {
        Self::standard()
    }
}

impl Mollifier {
    pub fn standard() -> Self {
        let rule = GaussLegendre::new(32);
        let panels = 64;
        let w = 2.0 / panels as f64;
        let mass: f64 = (0..panels)
            .map(|p| {
                let a = -1.0 + p as f64 * w;
                rule.integrate(a, a + w, bump)
            })
            .sum();
        Self { scale: 1.0 / mass }
    }

    /// The normalisation factor applied to the raw bump.
    pub fn normalization(&self) -> f64 {
        self.scale
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.scale * bump(s)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = s * s - 1.0;
        self.eval(s) * (-2.0 * s / (q * q))
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = s * s - 1.0;
        let d1 = -2.0 * s / (q * q);
        let dd1 = -2.0 / (q * q) + 8.0 * s * s / (q * q * q);
        self.eval(s) * (d1 * d1 + dd1)
    }
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 / (s * s - 1.0)).exp()
    }
}

/// G_eps for a given base relaxation function and smoothing width.
#[derive(Debug, Clone)]
pub struct MollifiedKernel {
    base: RelaxationKernel,
    epsilon: f64,
    mollifier: Mollifier,
    rule: GaussLegendre,
}

/// Builds G_eps with the default quadrature order.
pub fn mollify(
    base: RelaxationKernel,
    epsilon: f64,
    mollifier: Mollifier,
) -> Result<MollifiedKernel, KernelError> {
    MollifiedKernel::with_order(base, epsilon, mollifier, DEFAULT_ORDER)
}

impl MollifiedKernel {
    pub fn with_order(
        base: RelaxationKernel,
        epsilon: f64,
        mollifier: Mollifier,
        order: usize,
    ) -> Result<Self, KernelError> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(KernelError::InvalidParameter(format!(
                "smoothing width must be positive, got {epsilon}"
            )));
        }
        if epsilon < MIN_RELATIVE_EPS {
            return Err(KernelError::Resolution { epsilon, t: 0.0 });
        }
        if order == 0 {
            return Err(KernelError::InvalidParameter("quadrature order must be positive".into()));
        }
        Ok(Self {
            base,
            epsilon,
            mollifier,
            rule: GaussLegendre::new(order),
        })
    }

    pub fn base(&self) -> &RelaxationKernel {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    /// `int_{-1}^{1} weight(s) G(eps + t - eps s) ds`, split at the support
    /// panels and at every kink of the shifted base kernel. `moment` is the
    /// exact integral of `weight`; the quadrature only sees `G - G(eps + t)`,
    /// so its mass error does not leak into the result.
    fn smooth_against(
        &self,
        t: f64,
        weight: impl Fn(f64) -> f64,
        moment: f64,
    ) -> Result<f64, KernelError> {
        if t < 0.0 {
            return Err(KernelError::NegativeTime(t));
        }
        let eps = self.epsilon;
        if eps < MIN_RELATIVE_EPS * t.max(1.0) {
            return Err(KernelError::Resolution { epsilon: eps, t });
        }
        let mut edges: Vec<f64> = (0..=SUPPORT_PANELS)
            .map(|p| -1.0 + 2.0 * p as f64 / SUPPORT_PANELS as f64)
            .collect();
        for kink in self.base.kinks() {
            let s = (eps + t - kink) / eps;
            if s > -1.0 && s < 1.0 {
                edges.push(s);
            }
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

        let centre = self.base.value(eps + t)?;
        let mut acc = 0.0;
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            for (s, wt) in self.rule.mapped(lo, hi) {
                let g = self.base.value(eps + t - eps * s)?;
                acc += wt * weight(s) * (g - centre);
            }
        }
        Ok(acc + moment * centre)
    }

    /// Breakpoints for integrating G_eps itself over [a, b].
    fn outer_edges(&self, a: f64, b: f64) -> Vec<f64> {
        let eps = self.epsilon;
        let mut edges = vec![a, b];
        for kink in self.base.kinks() {
            for p in [kink - 2.0 * eps, kink - eps, kink] {
                if p > a && p < b {
                    edges.push(p);
                }
            }
        }
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        let max_width = (2.0 * eps).min(0.1);
        let mut out = vec![edges[0]];
        for w in edges.windows(2) {
            let pieces = ((w[1] - w[0]) / max_width).ceil().max(1.0) as usize;
            let step = (w[1] - w[0]) / pieces as f64;
            for k in 1..pieces {
                out.push(w[0] + k as f64 * step);
            }
            out.push(w[1]);
        }
        out
    }

    fn integrate_range(&self, a: f64, b: f64) -> Result<f64, KernelError> {
        let mut acc = 0.0;
        for w in self.outer_edges(a, b).windows(2) {
            for (t, wt) in self.rule.mapped(w[0], w[1]) {
                acc += wt * self.value(t)?;
            }
        }
        Ok(acc)
    }
}

impl MemoryKernel for MollifiedKernel {
    fn value(&self, t: f64) -> Result<f64, KernelError> {
        let m = &self.mollifier;
        self.smooth_against(t, |s| m.eval(s), 1.0)
    }

    /// Differentiates under the integral: `int rho'(s) G(eps + t - eps s) ds / eps`.
    fn derivative(&self, t: f64, _side: Side) -> Result<f64, KernelError> {
        let m = &self.mollifier;
        Ok(self.smooth_against(t, |s| m.derivative(s), 0.0)? / self.epsilon)
    }

    fn second_derivative(&self, t: f64) -> Option<Result<f64, KernelError>> {
        let m = &self.mollifier;
        let eps2 = self.epsilon * self.epsilon;
        Some(self.smooth_against(t, |s| m.second_derivative(s), 0.0).map(|v| v / eps2))
    }

    fn integrated(&self, xi: f64) -> Result<f64, KernelError> {
        if xi < 0.0 {
            return Err(KernelError::NegativeTime(xi));
        }
        self.integrate_range(0.0, xi)
    }

    fn integrated_table(&self, dt: f64, n: usize) -> Result<Vec<f64>, KernelError> {
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in 0..n {
            acc += self.integrate_range(k as f64 * dt, (k + 1) as f64 * dt)?;
            out.push(acc);
        }
        Ok(out)
    }

    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }

    fn describe(&self) -> String {
        format!(
            "mollified[eps={}, order={}]({})",
            self.epsilon,
            self.rule.order(),
            self.base.describe()
        )
    }
}

/// Number of points of the grid on which K distances are measured.
pub const DISTANCE_GRID_POINTS: usize = 3001;

/// `sup |K_eps - K|` over a uniform grid on `[0, horizon]`, one entry per eps.
pub fn sup_distance_k(
    base: &RelaxationKernel,
    epsilons: &[f64],
    horizon: f64,
) -> Result<Vec<(f64, f64)>, KernelError> {
    if !(horizon > 0.0) {
        return Err(KernelError::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let n = DISTANCE_GRID_POINTS - 1;
    let dt = horizon / n as f64;
    let exact = base.integrated_table(dt, n)?;
    epsilons
        .iter()
        .map(|&eps| {
            let mk = mollify(base.clone(), eps, Mollifier::standard())?;
            let approx = mk.integrated_table(dt, n)?;
            let d = exact
                .iter()
                .zip(&approx)
                .map(|(k, ke)| (k - ke).abs())
                .fold(0.0, f64::max);
            Ok((eps, d))
        })
        .collect()
}
