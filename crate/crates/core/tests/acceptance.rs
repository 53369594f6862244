//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use viscokern::config::{parse_layered, ScenarioKind};
use viscokern::discretization::Grid;
use viscokern::energy::{dissipation_check, energy_series, mode_decay_diagnostic, HISTORY_TOL};
use viscokern::exprparse::{parse, EvalError, Expr, ParseError};
use viscokern::kernels::{
    check_admissibility, Condition, MemoryKernel, PronyTerm, RelaxationKernel, AUDIT_POINTS,
    AUDIT_TOL,
};
use viscokern::mollify::{mollify, sup_distance_k, Mollifier};
use viscokern::quadrature::adaptive_simpson;
use viscokern::scenarios;
use viscokern::solver::{solve, ProblemSpec, Scheme, SolutionField};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn wedge() -> RelaxationKernel {
    RelaxationKernel::wedge(2.0, 1.0, 1.0).unwrap()
}

/// G(t) = 1 + exp(-2t)
fn prony() -> RelaxationKernel {
    RelaxationKernel::prony1(1.0, 1.0, 0.5).unwrap()
}

fn expr(s: &str) -> Expr {
    parse(s).unwrap()
}

fn unit_grid(n: usize) -> Grid {
    Grid::new(0.0, 1.0, n).unwrap()
}

// composite Simpson, independent of the library's Gauss rules
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for k in 1..panels {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn criterion_1() -> Outcome {
    let g = wedge();
    for (xi, want) in [(1.0, 1.5), (2.0, 2.5)] {
        let closed = g.integrated(xi).map_err(e)?;
        let mut f = |t: f64| g.value(t);
        let quad = adaptive_simpson(&mut f, 0.0, xi, 1e-13, 50)
            .map_err(e)?
            .map_err(|nc| format!("{nc:?}"))?;
        check((closed - want).abs() <= 1e-10, format!("K({xi}) = {closed}, want {want}"))?;
        check((quad - want).abs() <= 1e-10, format!("quadrature K({xi}) = {quad}"))?;
    }
    let catalog: Vec<(&str, RelaxationKernel)> = vec![
        ("wedge", wedge()),
        ("prony", prony()),
        (
            "prony-3",
            RelaxationKernel::prony(
                0.5,
                vec![
                    PronyTerm { modulus: 1.0, relaxation_time: 0.1 },
                    PronyTerm { modulus: 0.5, relaxation_time: 1.0 },
                    PronyTerm { modulus: 0.2, relaxation_time: 10.0 },
                ],
            )
            .map_err(e)?,
        ),
        ("constant", RelaxationKernel::constant(1.0).map_err(e)?),
        (
            "table",
            RelaxationKernel::tabulated(vec![(0.0, 3.0), (0.5, 2.0), (1.5, 1.5), (4.0, 1.0)]).map_err(e)?,
        ),
        ("expression", RelaxationKernel::expression("1 + exp(-t)/(1+t)").map_err(e)?),
    ];
    for (name, k) in &catalog {
        let rep = check_admissibility(k, 3.0, AUDIT_POINTS, AUDIT_TOL);
        check(rep.is_admissible(), format!("{name} rejected: {:?}", rep.violations))?;
    }
    let planted =
        RelaxationKernel::tabulated(vec![(0.0, 2.0), (1.0, 1.9), (2.0, 1.0), (6.0, 0.9)]).map_err(e)?;
    let rep = check_admissibility(&planted, 6.0, AUDIT_POINTS, AUDIT_TOL);
    check(rep.violates(Condition::Convexity), "planted non-convex table accepted")?;
    Ok(format!("K(1), K(2) exact; {} catalog kernels admissible; planted table rejected", catalog.len()))
}

fn criterion_2() -> Outcome {
    let m = Mollifier::standard();
    let mass = simpson(|s| m.eval(s), -1.0, 1.0, 10_000);
    check((mass - 1.0).abs() <= 1e-10, format!("mass {mass}"))?;
    for s in [1.0, -1.0, 1.0 + 1e-15, -1.5, 2.0, 1e6] {
        check(m.eval(s) == 0.0, format!("rho({s}) = {}", m.eval(s)))?;
    }
    check(m.eval(0.999) > 0.0 && m.eval(-0.999) > 0.0, "bump vanishes inside its support")?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let s: f64 = rng.gen_range(-1.2..1.2);
        check(m.eval(s).to_bits() == m.eval(-s).to_bits(), format!("rho not even at {s}"))?;
    }
    Ok(format!("|mass - 1| = {:.1e}", (mass - 1.0).abs()))
}

fn criterion_3() -> Outcome {
    let horizon = 3.0;
    let mut count = 0;
    for (name, base) in [("wedge", wedge()), ("prony", prony())] {
        let floor = base.value(1.0 + horizon).map_err(e)?;
        for eps in [0.1, 0.01] {
            let mk = mollify(base.clone(), eps, Mollifier::standard()).map_err(e)?;
            let rep = check_admissibility(&mk, horizon, AUDIT_POINTS, AUDIT_TOL);
            check(rep.is_admissible(), format!("{name} eps={eps}: {:?}", rep.violations))?;
            for k in 0..AUDIT_POINTS {
                let t = horizon * k as f64 / (AUDIT_POINTS - 1) as f64;
                let g = mk.value(t).map_err(e)?;
                check(g >= floor - 1e-9, format!("{name} eps={eps}: G_eps({t}) = {g} < {floor}"))?;
            }
            count += 1;
        }
    }
    Ok(format!("{count} mollified kernels admissible and above G(1 + T)"))
}

fn criterion_4() -> Outcome {
    let eps = [0.1, 0.05, 0.025];
    let horizon = 3.0;
    let d = sup_distance_k(&wedge(), &eps, horizon).map_err(e)?;
    let lip = wedge().lipschitz().unwrap();
    check(d[0].1 > d[1].1 && d[1].1 > d[2].1, format!("not decreasing: {d:?}"))?;
    for &(ep, dist) in &d {
        check(dist <= 2.0 * lip * ep * horizon, format!("eps={ep}: {dist} above bound"))?;
    }
    Ok(format!("sup|K_eps - K| = {:.4e}, {:.4e}, {:.4e}", d[0].1, d[1].1, d[2].1))
}

fn criterion_5() -> Outcome {
    let spec = |k: Arc<dyn MemoryKernel>| {
        ProblemSpec::new(unit_grid(63), 1.0, 256, k, Scheme::Integral).with_data(
            expr("sin(pi*x)"),
            expr("0"),
            expr("0"),
        )
    };
    let reference = solve(&spec(Arc::new(wedge()))).map_err(e)?;
    let mut dist = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let mk = mollify(wedge(), eps, Mollifier::standard()).map_err(e)?;
        let sol = solve(&spec(Arc::new(mk))).map_err(e)?;
        dist.push(sol.l2_distance(&reference).map_err(e)?);
    }
    check(dist[0] > dist[1] && dist[1] > dist[2], format!("not decreasing: {dist:?}"))?;
    Ok(format!("|u_eps - u| = {:.4e}, {:.4e}, {:.4e}", dist[0], dist[1], dist[2]))
}

fn relative_wave_error(sol: &SolutionField) -> f64 {
    let exact = |x: f64, t: f64| (PI * t).cos() * (PI * x).sin();
    let err = sol.l2_error(exact);
    let exact_norm = {
        let n = sol.times.len() - 1;
        let dt = sol.snapshot_dt();
        let h = sol.spec.grid.h();
        let mut acc = 0.0;
        for (k, &t) in sol.times.iter().enumerate() {
            let w = if k == 0 || k == n { 0.5 * dt } else { dt };
            acc += w * h * sol.spec.grid.nodes().map(|x| exact(x, t).powi(2)).sum::<f64>();
        }
        acc.sqrt()
    };
    err / exact_norm
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let a_list = [0.1, 0.05, 0.025];
    let mut errs = Vec::new();
    for a in a_list {
        let k = Arc::new(RelaxationKernel::wedge(2.0, 1.0, a).map_err(e)?);
        let spec = ProblemSpec::new(Grid::new(0.0, 1.0, 255).unwrap(), 1.0, 2048, k, Scheme::Integral)
            .with_data(expr("sin(pi*x)"), expr("0"), expr("0"));
        errs.push(relative_wave_error(&solve(&spec).map_err(e)?));
    }
    check(errs[0] > errs[1] && errs[1] > errs[2], format!("not decreasing: {errs:?}"))?;
    check(errs[2] <= 0.8 * errs[0], format!("a=0.025 error {} above 0.8 x {}", errs[2], errs[0]))?;
    // the CLI preset must reproduce the same table
    let cfg = parse_layered(ScenarioKind::WaveLimit.defaults(), "", None).map_err(e)?;
    let out = scenarios::run(ScenarioKind::WaveLimit, &cfg).map_err(e)?;
    let table = out.table("wave_limit.csv").ok_or("missing wave_limit.csv")?;
    let col = table.column("relative_l2_error").ok_or("missing error column")?;
    for (c, d) in col.iter().zip(&errs) {
        check((c - d).abs() <= 1e-8 * d, format!("preset error {c} differs from {d}"))?;
    }
    check(out.passed(), "wave-limit preset verdicts failed")?;
    let took = started.elapsed();
    check(took < Duration::from_secs(120), format!("took {took:?}"))?;
    Ok(format!("relative errors {:.4e}, {:.4e}, {:.4e}", errs[0], errs[1], errs[2]))
}

const MANUFACTURED_F: &str =
    "sin(pi*x)*((2*pi^2-1)*cos(t) - 2*pi^2*(2*cos(t)+sin(t)-2*exp(-2*t))/5)";

fn criterion_7() -> Outcome {
    let exact = |x: f64, t: f64| (PI * x).sin() * t.cos();
    let mut finest = Vec::new();
    let mut report = Vec::new();
    for scheme in [Scheme::Integral, Scheme::Differential] {
        let mut errs = Vec::new();
        let mut last = None;
        for (n, steps) in [(15, 32), (31, 64), (63, 128)] {
            let spec = ProblemSpec::new(unit_grid(n), 1.0, steps, Arc::new(prony()), scheme)
                .with_data(expr("sin(pi*x)"), expr("0"), expr(MANUFACTURED_F));
            let sol = solve(&spec).map_err(e)?;
            errs.push(sol.l2_error(exact));
            last = Some(sol);
        }
        let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        check(
            orders.iter().all(|&o| o >= 1.8),
            format!("{} orders {orders:?}", scheme.name()),
        )?;
        report.push(format!("{} orders {:.3}, {:.3}", scheme.name(), orders[0], orders[1]));
        finest.push((last.unwrap(), errs[2]));
    }
    let d = finest[0].0.l2_distance(&finest[1].0).map_err(e)?;
    let sum = finest[0].1 + finest[1].1;
    check(d < sum, format!("discrepancy {d} not below {sum}"))?;
    Ok(format!("{}; discrepancy {d:.3e} < {sum:.3e}", report.join("; ")))
}

fn criterion_8() -> Outcome {
    let mut worst_rise: f64 = 0.0;
    for scheme in [Scheme::Differential, Scheme::Integral] {
        let spec = ProblemSpec::new(unit_grid(63), 2.0, 256, Arc::new(prony()), scheme).with_data(
            expr("sin(pi*x)"),
            expr("0"),
            expr("0"),
        );
        let sol = solve(&spec).map_err(e)?;
        let rep = energy_series(&sol).map_err(e)?;
        let v = dissipation_check(&rep, true, 1e-3);
        check(v.passed(), format!("{}: {v:?}", scheme.name()))?;
        let e0 = rep.initial_energy();
        for w in rep.rows.windows(2) {
            worst_rise = worst_rise.max((w[1].total - w[0].total) / e0);
        }
        check(rep.rows.iter().all(|r| r.total <= rep.bound), "bound exceeded")?;
        check(rep.rows.iter().all(|r| r.history >= -HISTORY_TOL), "negative history term")?;
        let g_t1 = prony().value(3.0).map_err(e)?;
        check(rep.alpha == (1.0 / g_t1).max(1.0), "alpha")?;
    }
    Ok(format!("largest relative step increase {worst_rise:.2e}"))
}

fn criterion_9() -> Outcome {
    let data = expr("sin(pi*x) + 0.5*sin(2*pi*x) + 0.25*sin(3*pi*x) + 0.125*sin(4*pi*x) + 0.0625*sin(5*pi*x)");
    let mut sups: Vec<Vec<f64>> = Vec::new();
    for (n, steps) in [(31, 64), (63, 128), (127, 256)] {
        let run = |scheme| {
            let spec = ProblemSpec::new(unit_grid(n), 1.0, steps, Arc::new(prony()), scheme)
                .with_data(data.clone(), expr("0"), expr("0"));
            solve(&spec)
        };
        let a = run(Scheme::Integral).map_err(e)?;
        let b = run(Scheme::Differential).map_err(e)?;
        sups.push(mode_decay_diagnostic(&a, &b, 5).map_err(e)?.sup());
    }
    let mut worst = f64::INFINITY;
    for w in sups.windows(2) {
        for (i, (c, f)) in w[0].iter().zip(&w[1]).enumerate() {
            check(c / f >= 2.0, format!("mode {}: {c:.3e} -> {f:.3e}", i + 1))?;
            worst = worst.min(c / f);
        }
    }
    Ok(format!("smallest reduction factor {worst:.3} over modes 1-5"))
}

fn random_data(rng: &mut ChaCha8Rng) -> (Expr, Expr, Expr) {
    let mut c = || rng.gen_range(-1.0..1.0);
    let u0 = format!("{}*sin(pi*x) + {}*sin(3*pi*x) + {}*x*(1-x)", c(), c(), c());
    let u1 = format!("{}*sin(2*pi*x) + {}*x*x*(1-x)", c(), c());
    let f = format!("{}*sin(pi*x)*cos(t) + {}*x*(1-x)*exp(-t) + {}*t", c(), c(), c());
    (expr(&u0), expr(&u1), expr(&f))
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let kernels: [Arc<dyn MemoryKernel>; 2] = [Arc::new(wedge()), Arc::new(prony())];
    let mut worst: f64 = 0.0;
    for scheme in [Scheme::Integral, Scheme::Differential] {
        for k in &kernels {
            let zero = solve(&ProblemSpec::new(unit_grid(31), 1.0, 64, k.clone(), scheme)).map_err(e)?;
            check(
                zero.snapshots.iter().all(|u| u.values().iter().all(|v| *v == 0.0)),
                "zero data gave a nonzero solution",
            )?;
        }
    }
    for trial in 0..10 {
        let (alpha, beta) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let d1 = random_data(&mut rng);
        let d2 = random_data(&mut rng);
        let mix = |p: &Expr, q: &Expr| expr(&format!("{alpha}*({p}) + {beta}*({q})"));
        let d3 = (mix(&d1.0, &d2.0), mix(&d1.1, &d2.1), mix(&d1.2, &d2.2));
        for scheme in [Scheme::Integral, Scheme::Differential] {
            let base = ProblemSpec::new(unit_grid(31), 1.0, 64, kernels[trial % 2].clone(), scheme);
            let run = |d: &(Expr, Expr, Expr)| solve(&base.clone().with_data(d.0.clone(), d.1.clone(), d.2.clone()));
            let (s1, s2, s3) = (run(&d1).map_err(e)?, run(&d2).map_err(e)?, run(&d3).map_err(e)?);
            let scale = s3.snapshots.iter().map(|u| u.max_abs()).fold(0.0, f64::max);
            for k in 0..s3.snapshots.len() {
                for j in 0..31 {
                    let lin = alpha * s1.snapshots[k].values()[j] + beta * s2.snapshots[k].values()[j];
                    let rel = (s3.snapshots[k].values()[j] - lin).abs() / scale;
                    worst = worst.max(rel);
                }
            }
        }
    }
    check(worst <= 1e-12, format!("linearity defect {worst:.3e}"))?;
    Ok(format!("zero data exact; worst linearity defect {worst:.2e}"))
}

fn criterion_11() -> Outcome {
    let cases: [(&str, f64, f64, f64); 8] = [
        ("sin(pi*x)", 0.5, 0.0, 1.0),
        ("2^3^2", 0.0, 0.0, 512.0),
        ("-2^2", 0.0, 0.0, -4.0),
        ("1+2*3", 0.0, 0.0, 7.0),
        ("x*t", 2.0, 3.0, 6.0),
        ("exp(0)", 0.0, 0.0, 1.0),
        ("cos(t)*sin(pi*x)", 0.5, 0.0, 1.0),
        ("2^-1", 0.0, 0.0, 0.5),
    ];
    for (src, x, t, want) in cases {
        let got = parse(src).map_err(e)?.eval(x, t).map_err(e)?;
        check(got == want, format!("{src} -> {got}, want {want}"))?;
    }
    match parse("1 + * 2") {
        Err(ParseError::Syntax { offset: 4, .. }) => {}
        other => return Err(format!("'1 + * 2' gave {other:?}")),
    }
    match parse("x + y") {
        Err(err @ ParseError::UnknownIdentifier { .. }) if err.offset() == 4 => {}
        other => return Err(format!("'x + y' gave {other:?}")),
    }
    match parse("sin(x") {
        Err(ParseError::Syntax { offset: 5, .. }) => {}
        other => return Err(format!("'sin(x' gave {other:?}")),
    }
    match parse("1/(x-x)").unwrap().eval(1.0, 0.0) {
        Err(EvalError::DivisionByZero { offset: 1 }) => {}
        other => return Err(format!("'1/(x-x)' gave {other:?}")),
    }
    match parse("2 + sqrt(x)").unwrap().eval(-1.0, 0.0) {
        Err(EvalError::NegativeSqrt { offset: 4, .. }) => {}
        other => return Err(format!("'2 + sqrt(x)' gave {other:?}")),
    }
    Ok(format!("{} value cases and 5 error cases", cases.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 11] = [
        ("kernel algebra", criterion_1, Some(Duration::from_secs(1))),
        ("mollifier contract", criterion_2, None),
        ("property preservation", criterion_3, Some(Duration::from_secs(10))),
        ("K_eps -> K", criterion_4, None),
        ("solution eps-convergence", criterion_5, None),
        ("wave limit", criterion_6, Some(Duration::from_secs(120))),
        ("scheme cross-validation", criterion_7, None),
        ("energy", criterion_8, None),
        ("uniqueness diagnostic", criterion_9, None),
        ("linearity and zero data", criterion_10, None),
        ("expression parser", criterion_11, None),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let mut result = run();
        let took = started.elapsed();
        if let (Ok(_), Some(limit)) = (&result, budget) {
            if took > *limit {
                result = Err(format!("runtime {took:.2?} exceeds {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("PASS criterion {:>2} ({name}): {detail} [{took:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({name}): {detail} [{took:.2?}]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
