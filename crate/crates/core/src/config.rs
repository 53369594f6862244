//! Run configuration: flat `section.key = value` lines with `#` comments.
//!
//! ```text
//! # wedge kernel, integral scheme
//! problem.T = 1
//! problem.u0 = sin(pi*x)
//! kernel.type = wedge
//! kernel.G0 = 2
//! kernel.Ginf = 1
//! scenario.a_list = 0.1, 0.05, 0.025
//! ```
//!
//! Keys not listed in [`KEYS`] are rejected. Every problem found is reported,
//! each with the line it came from.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::discretization::Grid;
use crate::exprparse::{self, Expr};
use crate::kernels::{KinkPolicy, MemoryKernel, PronyTerm, RelaxationKernel, Table};
use crate::mollify::{mollify, Mollifier};
use crate::solver::{ProblemSpec, Scheme};

/// Every accepted key with its built-in default (`""` means unset).
pub const KEYS: &[(&str, &str)] = &[
    ("problem.a", "0"),
    ("problem.b", "1"),
    ("problem.T", "1"),
    ("problem.u0", "sin(pi*x)"),
    ("problem.u1", "0"),
    ("problem.f", "0"),
    ("kernel.type", "wedge"),
    ("kernel.G0", "2"),
    ("kernel.Ginf", "1"),
    ("kernel.a", "1"),
    ("kernel.g", ""),
    ("kernel.tau", ""),
    ("kernel.table", ""),
    ("kernel.expression", ""),
    ("kernel.epsilon", ""),
    ("kernel.kink_policy", "left"),
    ("discretization.n_interior", "63"),
    ("discretization.n_steps", "256"),
    ("scenario.name", ""),
    ("scenario.scheme", "integral"),
    ("scenario.epsilon_list", "0.1, 0.05, 0.025"),
    ("scenario.a_list", "0.1, 0.05, 0.025"),
    ("scenario.levels", "3"),
    ("scenario.n_modes", "0"),
    ("scenario.reference", "self"),
    ("scenario.exact", ""),
    ("scenario.min_order", ""),
    ("scenario.distance_horizon", ""),
    ("output.directory", "out"),
    ("output.stride", "1"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Solve,
    WaveLimit,
    MollifyStudy,
    Convergence,
    EnergyAudit,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Solve,
        ScenarioKind::WaveLimit,
        ScenarioKind::MollifyStudy,
        ScenarioKind::Convergence,
        ScenarioKind::EnergyAudit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Solve => "solve",
            ScenarioKind::WaveLimit => "wave-limit",
            ScenarioKind::MollifyStudy => "mollify-study",
            ScenarioKind::Convergence => "convergence",
            ScenarioKind::EnergyAudit => "energy-audit",
        }
    }

    /// Preset applied by `--default`.
    pub fn defaults(self) -> &'static str {
        match self {
            ScenarioKind::Solve => "",
            ScenarioKind::WaveLimit => WAVE_LIMIT_DEFAULTS,
            ScenarioKind::MollifyStudy => MOLLIFY_DEFAULTS,
            ScenarioKind::Convergence => CONVERGENCE_DEFAULTS,
            ScenarioKind::EnergyAudit => ENERGY_DEFAULTS,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scenario '{s}', expected one of {}", scenario_names()))
    }
}

fn scenario_names() -> String {
    ScenarioKind::ALL.map(|k| k.name()).join(", ")
}

const WAVE_LIMIT_DEFAULTS: &str = "\
problem.a = 0
problem.b = 1
problem.T = 1
problem.u0 = sin(pi*x)
problem.u1 = 0
problem.f = 0
kernel.type = wedge
kernel.G0 = 2
kernel.Ginf = 1
discretization.n_interior = 255
discretization.n_steps = 2048
scenario.scheme = integral
scenario.a_list = 0.1, 0.05, 0.025
";

const MOLLIFY_DEFAULTS: &str = "\
problem.a = 0
problem.b = 1
problem.T = 1
problem.u0 = sin(pi*x)
problem.u1 = 0
problem.f = 0
kernel.type = wedge
kernel.G0 = 2
kernel.Ginf = 1
kernel.a = 1
discretization.n_interior = 63
discretization.n_steps = 256
scenario.scheme = integral
scenario.epsilon_list = 0.1, 0.05, 0.025
scenario.distance_horizon = 3
";

const CONVERGENCE_DEFAULTS: &str = "\
problem.a = 0
problem.b = 1
problem.T = 1
problem.u0 = sin(pi*x)
problem.u1 = 0
problem.f = sin(pi*x)*((2*pi^2-1)*cos(t) - 2*pi^2*(2*cos(t)+sin(t)-2*exp(-2*t))/5)
kernel.type = prony
kernel.Ginf = 1
kernel.g = 1
kernel.tau = 0.5
discretization.n_interior = 15
discretization.n_steps = 32
scenario.scheme = both
scenario.levels = 3
scenario.reference = manufactured
scenario.exact = sin(pi*x)*cos(t)
scenario.n_modes = 5
";

const ENERGY_DEFAULTS: &str = "\
problem.a = 0
problem.b = 1
problem.T = 2
problem.u0 = sin(pi*x) + 0.5*sin(2*pi*x)
problem.u1 = 0
problem.f = 0
kernel.type = prony
kernel.Ginf = 1
kernel.g = 1
kernel.tau = 0.5
discretization.n_interior = 63
discretization.n_steps = 256
scenario.scheme = differential
";

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line in the user file; `None` for problems with built-in values.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// All problems found in one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Wedge,
    Prony,
    Tabulated,
    Expression,
}

impl KernelKind {
    const NAMES: [(&'static str, KernelKind); 4] = [
        ("wedge", KernelKind::Wedge),
        ("prony", KernelKind::Prony),
        ("tabulated", KernelKind::Tabulated),
        ("expression", KernelKind::Expression),
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Integral,
    Differential,
    Both,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<Scheme> {
        match self {
            SchemeChoice::Integral => vec![Scheme::Integral],
            SchemeChoice::Differential => vec![Scheme::Differential],
            SchemeChoice::Both => vec![Scheme::Integral, Scheme::Differential],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    /// Errors against `scenario.exact`.
    Manufactured,
    /// Differences between successive refinement levels.
    SelfConvergence,
}

#[derive(Debug, Clone)]
pub struct ProblemBlock {
    pub a: f64,
    pub b: f64,
    pub horizon: f64,
    pub u0: Expr,
    pub u1: Expr,
    pub f: Expr,
}

#[derive(Debug, Clone)]
pub struct KernelBlock {
    pub kind: KernelKind,
    pub g0: f64,
    pub ginf: f64,
    pub a: f64,
    /// The configured G before any smoothing.
    pub base: RelaxationKernel,
    pub epsilon: Option<f64>,
    pub kink_policy: KinkPolicy,
}

#[derive(Debug, Clone)]
pub struct ScenarioBlock {
    pub name: Option<ScenarioKind>,
    pub scheme: SchemeChoice,
    pub epsilon_list: Vec<f64>,
    pub a_list: Vec<f64>,
    pub levels: usize,
    pub n_modes: usize,
    pub reference: Reference,
    pub exact: Option<Expr>,
    pub min_order: Option<f64>,
    pub distance_horizon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub kernel: KernelBlock,
    pub n_interior: usize,
    pub n_steps: usize,
    pub scenario: ScenarioBlock,
    pub output_directory: PathBuf,
    pub stride: usize,
    resolved: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn grid(&self) -> Grid {
        Grid::new(self.problem.a, self.problem.b, self.n_interior).expect("validated at parse time")
    }

    /// G, or G_eps when `kernel.epsilon` is set.
    pub fn kernel(&self) -> Arc<dyn MemoryKernel> {
        match self.kernel.epsilon {
            None => Arc::new(self.kernel.base.clone()),
            Some(eps) => Arc::new(
                mollify(self.kernel.base.clone(), eps, Mollifier::standard())
                    .expect("validated at parse time"),
            ),
        }
    }

    pub fn problem_spec(&self, scheme: Scheme) -> ProblemSpec {
        let mut spec = ProblemSpec::new(
            self.grid(),
            self.problem.horizon,
            self.n_steps,
            self.kernel(),
            scheme,
        )
        .with_data(
            self.problem.u0.clone(),
            self.problem.u1.clone(),
            self.problem.f.clone(),
        )
        .with_stride(self.stride);
        spec.kink_policy = Some(self.kernel.kink_policy);
        spec
    }

    /// `key = value` lines of the resolved configuration, sorted by key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.resolved.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
}

/// Splits text into entries; syntax problems go to `errors`.
fn scan(text: &str, user: bool, out: &mut BTreeMap<String, Entry>, errors: &mut Vec<ConfigError>) {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = user.then_some(line_no);
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(ConfigError {
                line,
                message: format!("expected 'section.key = value', found '{content}'"),
            });
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.iter().any(|(k, _)| *k == key) {
            errors.push(ConfigError {
                line,
                message: format!("unknown key '{key}'{}", suggestion(key)),
            });
            continue;
        }
        if let Some(first) = seen.insert(key.to_string(), line_no) {
            errors.push(ConfigError {
                line,
                message: format!("duplicate key '{key}' (first set on line {first})"),
            });
            continue;
        }
        out.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
}

fn suggestion(key: &str) -> String {
    let section = key.split('.').next().unwrap_or("");
    let known: Vec<&str> = KEYS
        .iter()
        .map(|(k, _)| *k)
        .filter(|k| k.split('.').next() == Some(section))
        .collect();
    if known.is_empty() {
        "; sections are problem, kernel, discretization, scenario, output".to_string()
    } else {
        format!("; valid keys in '{section}': {}", known.join(", "))
    }
}

struct Reader<'a> {
    entries: &'a BTreeMap<String, Entry>,
    errors: Vec<ConfigError>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> (&str, Option<usize>) {
        let e = &self.entries[key];
        (e.value.as_str(), e.line)
    }

    fn fail(&mut self, key: &str, message: String) {
        let line = self.entries.get(key).and_then(|e| e.line);
        self.errors.push(ConfigError {
            line,
            message: format!("{key}: {message}"),
        });
    }

    fn is_set(&self, key: &str) -> bool {
        !self.raw(key).0.is_empty()
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        let (v, _) = self.raw(key);
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Some(x),
            _ => {
                let msg = format!("expected a number, found '{v}'");
                self.fail(key, msg);
                None
            }
        }
    }

    fn positive(&mut self, key: &str) -> Option<f64> {
        let x = self.number(key)?;
        if x > 0.0 {
            Some(x)
        } else {
            self.fail(key, format!("must be positive, got {x}"));
            None
        }
    }

    fn optional_positive(&mut self, key: &str) -> Option<Option<f64>> {
        if self.is_set(key) {
            self.positive(key).map(Some)
        } else {
            Some(None)
        }
    }

    fn count(&mut self, key: &str, min: usize) -> Option<usize> {
        let (v, _) = self.raw(key);
        match v.parse::<usize>() {
            Ok(n) if n >= min => Some(n),
            Ok(n) => {
                self.fail(key, format!("must be at least {min}, got {n}"));
                None
            }
            Err(_) => {
                let msg = format!("expected a nonnegative integer, found '{v}'");
                self.fail(key, msg);
                None
            }
        }
    }

    fn list(&mut self, key: &str) -> Option<Vec<f64>> {
        let (v, _) = self.raw(key);
        let inner = v.trim_start_matches(['{', '[']).trim_end_matches(['}', ']']);
        if inner.trim().is_empty() {
            return Some(Vec::new());
        }
        let parsed: Result<Vec<f64>, _> = inner.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match parsed {
            Ok(xs) if xs.iter().all(|x| x.is_finite() && *x > 0.0) => Some(xs),
            Ok(_) => {
                self.fail(key, "entries must be positive".into());
                None
            }
            Err(_) => {
                let msg = format!("expected a comma-separated list of numbers, found '{v}'");
                self.fail(key, msg);
                None
            }
        }
    }

    fn expr(&mut self, key: &str) -> Option<Expr> {
        let (v, _) = self.raw(key);
        match exprparse::parse(v) {
            Ok(e) => Some(e),
            Err(err) => {
                self.fail(key, format!("{err}"));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, options: &[(&str, T)]) -> Option<T> {
        let (v, _) = self.raw(key);
        if let Some((_, t)) = options.iter().find(|(n, _)| *n == v) {
            return Some(*t);
        }
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        let msg = format!("unknown variant '{v}', expected one of {}", names.join(", "));
        self.fail(key, msg);
        None
    }
}

/// Parses a configuration on top of the built-in defaults. Relative table
/// paths resolve against the working directory.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    parse_layered("", text, None)
}

/// Reads a configuration file; relative table paths resolve against its
/// directory. `preset` is applied below the file (see [`ScenarioKind::defaults`]).
pub fn load_config(path: &Path, preset: &str) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError {
            line: None,
            message: format!("{}: {e}", path.display()),
        }])
    })?;
    parse_layered(preset, &text, path.parent())
}

/// Built-in defaults, then `preset`, then `text`.
pub fn parse_layered(
    preset: &str,
    text: &str,
    base_dir: Option<&Path>,
) -> Result<RunConfig, ConfigErrors> {
    let mut entries: BTreeMap<String, Entry> = KEYS
        .iter()
        .map(|(k, v)| {
            (
                k.to_string(),
                Entry {
                    value: v.to_string(),
                    line: None,
                },
            )
        })
        .collect();
    let mut errors = Vec::new();
    scan(preset, false, &mut entries, &mut errors);
    scan(text, true, &mut entries, &mut errors);
    let mut r = Reader {
        entries: &entries,
        errors,
    };

    let a = r.number("problem.a");
    let b = r.number("problem.b");
    if let (Some(a), Some(b)) = (a, b) {
        if b <= a {
            r.fail("problem.b", format!("domain needs a < b, got a = {a}, b = {b}"));
        }
    }
    let horizon = r.positive("problem.T");
    let u0 = r.expr("problem.u0");
    let u1 = r.expr("problem.u1");
    let f = r.expr("problem.f");
    for (key, e) in [("problem.u0", &u0), ("problem.u1", &u1)] {
        if e.as_ref().is_some_and(Expr::uses_t) {
            r.fail(key, "initial data may depend on x only".into());
        }
    }

    let kind = r.choice("kernel.type", &KernelKind::NAMES);
    let g0 = r.number("kernel.G0");
    let ginf = r.number("kernel.Ginf");
    let ka = r.number("kernel.a");
    let epsilon = r.optional_positive("kernel.epsilon");
    let kink_policy = r.choice(
        "kernel.kink_policy",
        &[("left", KinkPolicy::LeftLimit), ("right", KinkPolicy::RightLimit)],
    );
    let base = match kind {
        Some(kind) => build_kernel(&mut r, kind, g0, ginf, ka, base_dir),
        None => None,
    };
    if let (Some(eps), Some(base)) = (epsilon.flatten(), &base) {
        if let Err(e) = mollify(base.clone(), eps, Mollifier::standard()) {
            r.fail("kernel.epsilon", e.to_string());
        }
    }

    let n_interior = r.count("discretization.n_interior", 1);
    let n_steps = r.count("discretization.n_steps", 2);
    let stride = r.count("output.stride", 1);
    if let (Some(n), Some(s)) = (n_steps, stride) {
        if n % s != 0 {
            r.fail("output.stride", format!("must divide discretization.n_steps = {n}, got {s}"));
        }
    }

    let name = if r.is_set("scenario.name") {
        let names: Vec<(&str, ScenarioKind)> =
            ScenarioKind::ALL.iter().map(|k| (k.name(), *k)).collect();
        r.choice("scenario.name", &names).map(Some)
    } else {
        Some(None)
    };
    let scheme = r.choice(
        "scenario.scheme",
        &[
            ("integral", SchemeChoice::Integral),
            ("differential", SchemeChoice::Differential),
            ("both", SchemeChoice::Both),
        ],
    );
    let epsilon_list = r.list("scenario.epsilon_list");
    let a_list = r.list("scenario.a_list");
    let levels = r.count("scenario.levels", 1);
    let n_modes = r.count("scenario.n_modes", 0);
    let reference = r.choice(
        "scenario.reference",
        &[
            ("manufactured", Reference::Manufactured),
            ("self", Reference::SelfConvergence),
        ],
    );
    let exact = if r.is_set("scenario.exact") {
        r.expr("scenario.exact").map(Some)
    } else {
        Some(None)
    };
    if reference == Some(Reference::Manufactured) && exact == Some(None) {
        r.fail("scenario.reference", "manufactured reference needs scenario.exact".into());
    }
    let min_order = r.optional_positive("scenario.min_order");
    let distance_horizon = r.optional_positive("scenario.distance_horizon");
    let directory = r.raw("output.directory").0.to_string();
    if directory.is_empty() {
        r.fail("output.directory", "must not be empty".into());
    }

    let errors = std::mem::take(&mut r.errors);
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    let resolved = entries
        .iter()
        .map(|(k, e)| (k.clone(), e.value.clone()))
        .collect();
    // every Option below is Some once no error was recorded
    Ok(RunConfig {
        problem: ProblemBlock {
            a: a.unwrap(),
            b: b.unwrap(),
            horizon: horizon.unwrap(),
            u0: u0.unwrap(),
            u1: u1.unwrap(),
            f: f.unwrap(),
        },
        kernel: KernelBlock {
            kind: kind.unwrap(),
            g0: g0.unwrap(),
            ginf: ginf.unwrap(),
            a: ka.unwrap(),
            base: base.unwrap(),
            epsilon: epsilon.unwrap(),
            kink_policy: kink_policy.unwrap(),
        },
        n_interior: n_interior.unwrap(),
        n_steps: n_steps.unwrap(),
        scenario: ScenarioBlock {
            name: name.unwrap(),
            scheme: scheme.unwrap(),
            epsilon_list: epsilon_list.unwrap(),
            a_list: a_list.unwrap(),
            levels: levels.unwrap(),
            n_modes: n_modes.unwrap(),
            reference: reference.unwrap(),
            exact: exact.unwrap(),
            min_order: min_order.unwrap(),
            distance_horizon: distance_horizon.unwrap(),
        },
        output_directory: PathBuf::from(directory),
        stride: stride.unwrap(),
        resolved,
    })
}

fn build_kernel(
    r: &mut Reader<'_>,
    kind: KernelKind,
    g0: Option<f64>,
    ginf: Option<f64>,
    a: Option<f64>,
    base_dir: Option<&Path>,
) -> Option<RelaxationKernel> {
    let built = match kind {
        KernelKind::Wedge => RelaxationKernel::wedge(g0?, ginf?, a?),
        KernelKind::Prony => {
            let g = r.list("kernel.g")?;
            let tau = r.list("kernel.tau")?;
            if g.len() != tau.len() {
                let msg = format!("{} moduli but {} relaxation times in kernel.tau", g.len(), tau.len());
                r.fail("kernel.g", msg);
                return None;
            }
            let terms = g
                .into_iter()
                .zip(tau)
                .map(|(modulus, relaxation_time)| PronyTerm {
                    modulus,
                    relaxation_time,
                })
                .collect();
            RelaxationKernel::prony(ginf?, terms)
        }
        KernelKind::Tabulated => {
            let (path, _) = r.raw("kernel.table");
            if path.is_empty() {
                r.fail("kernel.table", "tabulated kernel needs a CSV path".into());
                return None;
            }
            let mut full = PathBuf::from(path);
            if full.is_relative() {
                if let Some(dir) = base_dir {
                    full = dir.join(full);
                }
            }
            Table::from_csv_path(&full).map(RelaxationKernel::Tabulated)
        }
        KernelKind::Expression => {
            let (src, _) = r.raw("kernel.expression");
            if src.is_empty() {
                r.fail("kernel.expression", "expression kernel needs kernel.expression".into());
                return None;
            }
            let src = src.to_string();
            RelaxationKernel::expression(&src)
        }
    };
    let key = match kind {
        KernelKind::Tabulated => "kernel.table",
        KernelKind::Expression => "kernel.expression",
        _ => "kernel.type",
    };
    match built {
        Ok(k) => Some(k),
        Err(e) => {
            r.fail(key, e.to_string());
            None
        }
    }
}
