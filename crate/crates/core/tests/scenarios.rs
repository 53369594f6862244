use viscokern::config::{parse_layered, RunConfig, ScenarioKind};
use viscokern::scenarios::{self, ScenarioError};

fn preset(kind: ScenarioKind, extra: &str) -> RunConfig {
    parse_layered(kind.defaults(), extra, None).unwrap()
}

fn csv(out: &scenarios::ScenarioOutput) -> Vec<String> {
    out.tables.iter().map(|(_, t)| t.to_csv_string()).collect()
}

#[test]
fn outputs_are_deterministic() {
    for kind in [ScenarioKind::Convergence, ScenarioKind::EnergyAudit, ScenarioKind::Solve] {
        let cfg = preset(kind, "");
        let a = scenarios::run(kind, &cfg).unwrap();
        let b = scenarios::run(kind, &cfg).unwrap();
        assert_eq!(csv(&a), csv(&b), "{kind}");
    }
}

#[test]
fn zero_data_convergence_has_no_orders() {
    let cfg = preset(
        ScenarioKind::Convergence,
        "problem.u0 = 0\nproblem.f = 0\nscenario.exact = 0\n",
    );
    let out = scenarios::run_convergence(&cfg).unwrap();
    assert!(out.passed(), "{:?}", out.verdicts);
    let table = out.table("convergence.csv").unwrap();
    assert!(table.column("error").unwrap().iter().all(|&e| e == 0.0));
    let text = table.to_csv_string();
    assert!(text.contains(",n/a\n"), "{text}");
}

#[test]
fn too_few_levels() {
    let cfg = preset(ScenarioKind::Convergence, "scenario.levels = 2\n");
    assert!(matches!(scenarios::run_convergence(&cfg), Err(ScenarioError::Config(_))));
}

#[test]
fn wedge_self_convergence() {
    let cfg = preset(
        ScenarioKind::Convergence,
        "kernel.type = wedge\nkernel.a = 0.3\nproblem.f = 0\nscenario.reference = self\nscenario.scheme = integral\nscenario.n_modes = 0\n",
    );
    let out = scenarios::run_convergence(&cfg).unwrap();
    assert!(out.passed(), "{:?}", out.verdicts);
}

#[test]
fn energy_audit_on_raw_wedge_skips_identity() {
    let cfg = preset(
        ScenarioKind::EnergyAudit,
        "kernel.type = wedge\nkernel.a = 0.5\n",
    );
    let out = scenarios::run_energy_audit(&cfg).unwrap();
    assert!(out.passed(), "{:?}", out.verdicts);
    assert!(out.notes.iter().any(|n| n.contains("not evaluated")));
    let text = out.table("energy.csv").unwrap().to_csv_string();
    assert!(text.starts_with("# kernel"));
    assert!(text.contains("t,elastic,kinetic,history,total,bound\n"));
}

#[test]
fn energy_audit_zero_data() {
    let cfg = preset(ScenarioKind::EnergyAudit, "problem.u0 = 0\n");
    let out = scenarios::run_energy_audit(&cfg).unwrap();
    assert!(out.passed());
    let t = out.table("energy.csv").unwrap();
    for col in ["elastic", "kinetic", "history", "total", "bound"] {
        assert!(t.column(col).unwrap().iter().all(|&v| v == 0.0), "{col}");
    }
}

#[test]
fn energy_audit_coarse_stride_is_rejected() {
    let cfg = preset(
        ScenarioKind::EnergyAudit,
        "kernel.type = wedge\nkernel.a = 0.01\noutput.stride = 4\n",
    );
    assert!(matches!(
        scenarios::run_energy_audit(&cfg),
        Err(ScenarioError::Energy(_))
    ));
}

#[test]
fn wave_limit_rejects_other_kernels() {
    let cfg = preset(ScenarioKind::WaveLimit, "kernel.type = prony\nkernel.g = 1\nkernel.tau = 1\n");
    assert!(matches!(scenarios::run_wave_limit(&cfg), Err(ScenarioError::Config(_))));
    let cfg = preset(ScenarioKind::WaveLimit, "scenario.a_list = 0.05, 0.1\n");
    assert!(matches!(scenarios::run_wave_limit(&cfg), Err(ScenarioError::Config(_))));
}

#[test]
fn wave_limit_constant_kernel_and_faster_wave() {
    // G0 = Ginf: the wedge is constant and the only error is the scheme's own
    let cfg = preset(
        ScenarioKind::WaveLimit,
        "kernel.G0 = 1\nkernel.Ginf = 1\nscenario.a_list = 5\ndiscretization.n_interior = 63\ndiscretization.n_steps = 256\n",
    );
    let out = scenarios::run_wave_limit(&cfg).unwrap();
    let err = out.table("wave_limit.csv").unwrap().column("relative_l2_error").unwrap()[0];
    assert!(err < 1e-3, "{err}");

    // c = 2: the limit solution is cos(2 pi t) sin(pi x)
    let cfg = preset(
        ScenarioKind::WaveLimit,
        "kernel.G0 = 5\nkernel.Ginf = 4\ndiscretization.n_interior = 127\ndiscretization.n_steps = 1024\n",
    );
    let out = scenarios::run_wave_limit(&cfg).unwrap();
    assert!(out.verdicts[0].passed, "{:?}", out.verdicts);
}

#[test]
fn mollify_study_constant_kernel() {
    let cfg = preset(ScenarioKind::MollifyStudy, "kernel.G0 = 1\nkernel.Ginf = 1\n");
    let out = scenarios::run_mollify_study(&cfg).unwrap();
    assert!(out.passed(), "{:?}", out.verdicts);
    let t = out.table("mollify_study.csv").unwrap();
    assert!(t.column("sup_K_distance").unwrap().iter().all(|&d| d <= 1e-8));
    assert!(t.column("solution_distance").unwrap().iter().all(|&d| d <= 1e-8));
}

#[test]
fn mollify_study_rejects_wide_eps() {
    let cfg = preset(ScenarioKind::MollifyStudy, "scenario.epsilon_list = 0.6, 0.1\n");
    assert!(scenarios::run_mollify_study(&cfg).is_err());
}

#[test]
fn solve_both_schemes() {
    let cfg = parse_layered(
        "",
        "kernel.type = prony\nkernel.g = 1\nkernel.tau = 0.5\nscenario.scheme = both\noutput.stride = 64\n",
        None,
    )
    .unwrap();
    let out = scenarios::run_solve(&cfg).unwrap();
    assert_eq!(out.tables.len(), 2);
    let t = &out.tables[0].1;
    assert_eq!(t.header.len(), 64);
    assert_eq!(t.rows.len(), 5);
    assert_eq!(t.header[0], "time");
}
