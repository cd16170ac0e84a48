//! Command-line front end: loads a problem from a file or the built-in
//! registry, runs the requested analysis and writes reports to the output
//! directory. Everything is callable in-process so the commands can be
//! exercised from tests without spawning binaries.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use subreg_core::coercivity::{certify_coercivity, CertMethod, CoercivityOptions};
use subreg_core::error::Error;
use subreg_core::mayer::{check_strict_mf_mayer, critical_cone_mayer, optimality_residuals_mayer, quadratic_form_mayer};
use subreg_core::mesh::Mesh;
use subreg_core::nlp::{
    active_sets, check_mfcq, check_strict_mfcq, critical_cone_nlp, kkt_residual,
    quadratic_form_nlp, quadratic_growth_probe, Tolerances,
};
use subreg_core::ocp::{
    certify_coercivity_ocp, check_hamiltonian_growth, check_legendre, critical_cone_ocp,
    optimality_residuals_ocp, ConeRep,
};
use subreg_core::parse::{parse_problem_file, ProblemFile};
use subreg_core::problem::Problem;
use subreg_core::registry;
use subreg_core::report::{
    fmt_float, render_csv, render_text, stationary_csv, write_atomic, Report, Status,
};
use subreg_core::smsr::{
    estimate_kappa_mayer, estimate_kappa_nlp, estimate_kappa_ocp, example1_counterexample,
    halving_magnitudes, ocp_distances, perturbation_norm_ocp, sample_perturbation_ocp,
    solve_perturbed_ocp, KappaOptions,
};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_REFUTED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

/// Relative tolerance on the total first-order residual for `analyze`.
const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "subreg-kit", version, about = "Optimality system checks, second-order certificates and perturbation sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify the first-order optimality system and qualifications
    Analyze(CommonArgs),
    /// Certify the second-order condition over the delta sweep
    Certify(CommonArgs),
    /// Perturb the optimality system and estimate the stability modulus
    Perturb(CommonArgs),
    /// Tabulate the descent sequence of the built-in counterexample
    Counterexample(CounterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path to a problem file
    #[arg(long, conflicts_with = "registry")]
    pub problem: Option<PathBuf>,
    /// Name of a built-in problem
    #[arg(long)]
    pub registry: Option<String>,
    /// Number of mesh intervals for control problems
    #[arg(long, default_value_t = 100)]
    pub mesh_n: usize,
    /// Comma-separated deltas for the extended-cone sweep, largest first
    #[arg(long, value_delimiter = ',', default_values_t = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])]
    pub delta_sweep: Vec<f64>,
    /// Activity tolerance (scale-aware)
    #[arg(long, default_value_t = 1e-7)]
    pub tol_act: f64,
    /// Multiplier positivity threshold
    #[arg(long, default_value_t = 1e-8)]
    pub tol_mul: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated perturbation magnitudes, largest first
    /// (default: six halvings of 1e-2)
    #[arg(long, value_delimiter = ',')]
    pub magnitudes: Option<Vec<f64>>,
    /// Perturbation samples per magnitude
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    /// Output directory (default: $SUBREG_OUT or the current directory)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CounterArgs {
    #[arg(long, default_value_t = 1000)]
    pub mesh_n: usize,
    /// Comma-separated descent indices s; each must divide mesh-n
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4])]
    pub s_values: Vec<usize>,
    #[arg(long, default_value_t = 1e-7)]
    pub tol_act: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_mul: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Run a parsed invocation and return the process exit code. Errors in
/// the input (bad paths, unknown names, unparsable files) map to exit 2.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Analyze(args) => cmd_analyze(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Perturb(args) => cmd_perturb(args),
        Command::Counterexample(args) => cmd_counterexample(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
    }
}

/// Convenience wrapper used by tests: parse an argument vector and run it.
pub fn run_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            eprintln!("{e}");
            EXIT_INPUT
        }
    }
}

fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone()
        .or_else(|| std::env::var_os("SUBREG_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_problem(args: &CommonArgs) -> Result<(ProblemFile, String), String> {
    match (&args.problem, &args.registry) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let file = parse_problem_file(&text).map_err(|e| e.to_string())?;
            Ok((file, path.display().to_string()))
        }
        (None, Some(name)) => {
            let file = registry::load(name).map_err(|e| e.to_string())?;
            Ok((file, name.clone()))
        }
        _ => Err("exactly one of --problem or --registry is required".into()),
    }
}

fn tolerances(args: &CommonArgs) -> Result<Tolerances, String> {
    if args.tol_act <= 0.0 || args.tol_mul <= 0.0 {
        return Err("tolerances must be positive".into());
    }
    Ok(Tolerances { t_act: args.tol_act, t_mul: args.tol_mul, ..Default::default() })
}

fn mesh_for(problem: &Problem, mesh_n: usize) -> Result<Mesh, String> {
    if mesh_n < 2 {
        return Err("--mesh-n must be at least 2".into());
    }
    match problem {
        Problem::Mayer(p) => Mesh::new(mesh_n, p.horizon.0, p.horizon.1),
        _ => Mesh::unit(mesh_n),
    }
    .map_err(|e| e.to_string())
}

fn echo_config(report: &mut Report, args: &CommonArgs, source: &str) {
    report.config("version", env!("CARGO_PKG_VERSION"));
    report.config("problem", source);
    report.config("mesh_n", args.mesh_n.to_string());
    report.config(
        "delta_sweep",
        args.delta_sweep.iter().map(|d| fmt_float(*d)).collect::<Vec<_>>().join(" "),
    );
    report.config("tol_act", fmt_float(args.tol_act));
    report.config("tol_mul", fmt_float(args.tol_mul));
    report.config("seed", args.seed.to_string());
    report.config(
        "magnitudes",
        magnitudes(args).iter().map(|m| fmt_float(*m)).collect::<Vec<_>>().join(" "),
    );
    report.config("samples", args.samples.to_string());
}

fn magnitudes(args: &CommonArgs) -> Vec<f64> {
    args.magnitudes.clone().unwrap_or_else(|| halving_magnitudes(1e-2, 6))
}

fn write_report(report: &Report, dir: &Path, stem: &str, format: Format) -> Result<(), String> {
    let (name, content) = match format {
        Format::Text => (format!("{stem}.txt"), render_text(report)),
        Format::Csv => (format!("{stem}.csv"), render_csv(report)),
    };
    write_atomic(&dir.join(name), &content).map_err(|e| e.to_string())?;
    print!("{}", render_text(report));
    Ok(())
}

fn pass(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

// ---------------------------------------------------------------------------
// analyze

fn cmd_analyze(args: &CommonArgs) -> Result<i32, String> {
    let (file, source) = load_problem(args)?;
    let tols = tolerances(args)?;
    let dir = out_dir(&args.out);
    let mut report = Report::new("first-order analysis");
    echo_config(&mut report, args, &source);
    let mesh = mesh_for(&file.problem, args.mesh_n)?;
    let all_ok;
    match &file.problem {
        Problem::Nlp(p) => {
            let tuple = registry::nlp_reference(p, &file.solution).map_err(|e| e.to_string())?;
            let res = kkt_residual(p, &tuple).map_err(|e| e.to_string())?;
            let tol = RESIDUAL_TOL * (1.0 + tuple.x.amax());
            let sec = report.section("RESIDUALS");
            sec.line("stationarity", pass(res.zeta.norm() <= tol), Some(res.zeta.norm()), "");
            sec.line("equalities", pass(res.eta.norm() <= tol), Some(res.eta.norm()), "");
            sec.line("complementarity", pass(res.xi.norm() <= tol), Some(res.xi.norm()), "");
            sec.line("total", pass(res.norm_z <= tol), Some(res.norm_z), "dual weak norm on the stationarity block");
            all_ok = res.norm_z <= tol;
            let sets = active_sets(p, &tuple, &tols).map_err(|e| e.to_string())?;
            let mf = check_mfcq(p, &tuple.x, &tols).map_err(|e| e.to_string())?;
            let smf = check_strict_mfcq(p, &tuple, &tols).map_err(|e| e.to_string())?;
            let sec = report.section("QUALIFICATIONS");
            sec.line("active inequalities", Status::Info, Some(sets.active.len() as f64), "");
            sec.line("zero-multiplier active", Status::Info, Some(sets.zero_mult.len() as f64), "");
            sec.line("positive independence", Status::Info, None, if mf.holds { "holds" } else { "fails" });
            sec.line("strict positive independence", Status::Info, None, if smf.holds { "holds" } else { "fails" });
        }
        Problem::Mayer(p) => {
            let tuple = registry::mayer_reference(p, &file.solution, &mesh).map_err(|e| e.to_string())?;
            let res = optimality_residuals_mayer(p, &tuple, &mesh, &tols).map_err(|e| e.to_string())?;
            let sup = tuple.traj.x.iter().map(|v| v.amax()).fold(0.0f64, f64::max);
            let tol = RESIDUAL_TOL * (1.0 + sup);
            let sec = report.section("RESIDUALS");
            sec.line("transversality", pass(res.nu.norm() <= tol), Some(res.nu.norm()), "");
            sec.line("endpoint equalities", pass(res.mu.norm() <= tol), Some(res.mu.norm()), "");
            sec.line("endpoint inequalities", pass(res.xi.norm() <= tol), Some(res.xi.norm()), "minimal selection");
            sec.line("total", pass(res.norm <= tol), Some(res.norm), "");
            all_ok = res.norm <= tol;
            let smf = check_strict_mf_mayer(p, &tuple, &mesh, &tols).map_err(|e| e.to_string())?;
            let sec = report.section("QUALIFICATIONS");
            sec.line("active endpoint inequalities", Status::Info, Some(smf.active.len() as f64), "");
            sec.line("strict positive independence", Status::Info, None, if smf.holds { "holds" } else { "fails" });
        }
        Problem::Ocp(p) => {
            let tuple =
                registry::ocp_reference(p, &file.solution, &mesh, &tols).map_err(|e| e.to_string())?;
            let res = optimality_residuals_ocp(p, &tuple, &mesh, &tols).map_err(|e| e.to_string())?;
            let sup = tuple.traj.x.iter().map(|v| v.amax()).fold(0.0f64, f64::max);
            let tol = RESIDUAL_TOL * (1.0 + sup);
            let sec = report.section("RESIDUALS");
            sec.line("transversality", pass(res.nu.norm() <= tol), Some(res.nu.norm()), "");
            sec.line("total", pass(res.norm <= tol), Some(res.norm), "transversality + adjoint + stationarity + dynamics + constraints");
            all_ok = res.norm <= tol;
            let cone = critical_cone_ocp(p, &tuple, &mesh, ConeRep::MultiplierRows, &tols)
                .map_err(|e| e.to_string())?;
            let (trivial, free) = cone.control_triviality(&mesh);
            let sec = report.section("CRITICAL CONE");
            sec.line("control component trivial", Status::Info, None, if trivial { "yes" } else { "no" });
            sec.line("free-control measure", Status::Info, Some(free), "");
            if trivial || free <= 2.0 * mesh.h() {
                sec.line(
                    "warning",
                    Status::Info,
                    None,
                    "trivial cone alone does not certify a minimum; run certify and counterexample",
                );
            }
            write_atomic(&dir.join("trajectory.csv"), &stationary_csv(&tuple, &mesh))
                .map_err(|e| e.to_string())?;
        }
    }
    write_report(&report, &dir, "analyze", args.format)?;
    Ok(if all_ok { EXIT_SUCCESS } else { EXIT_REFUTED })
}

// ---------------------------------------------------------------------------
// certify

fn cmd_certify(args: &CommonArgs) -> Result<i32, String> {
    let (file, source) = load_problem(args)?;
    let tols = tolerances(args)?;
    let dir = out_dir(&args.out);
    let mut report = Report::new("second-order certification");
    echo_config(&mut report, args, &source);
    let mesh = mesh_for(&file.problem, args.mesh_n)?;
    let copts = CoercivityOptions { seed: args.seed, ..Default::default() };
    let code = match &file.problem {
        Problem::Nlp(p) => {
            let tuple = registry::nlp_reference(p, &file.solution).map_err(|e| e.to_string())?;
            let sets = active_sets(p, &tuple, &tols).map_err(|e| e.to_string())?;
            let cone = critical_cone_nlp(p, &tuple, &sets).map_err(|e| e.to_string())?;
            let form = quadratic_form_nlp(p, &tuple, None).map_err(|e| e.to_string())?;
            let cert = certify_coercivity(&form, &cone, &copts).map_err(|e| e.to_string())?;
            let sec = report.section("COERCIVITY");
            sec.line("method", Status::Info, None, format!("{:?}", cert.method));
            sec.line("c0", pass(cert.certified), Some(cert.c0), cert.warning.clone().unwrap_or_default());
            if cert.certified {
                let growth = quadratic_growth_probe(p, &tuple, 1e-2, 1000, args.seed, None)
                    .map_err(|e| e.to_string())?;
                let sec = report.section("GROWTH PROBE");
                sec.line("fitted c", pass(growth.violations.is_empty()), Some(growth.fitted_c), "");
                sec.line("accepted samples", Status::Info, Some(growth.accepted as f64), "");
            }
            certificate_code(cert.certified, cert.counterexample.is_some(), cert.method)
        }
        Problem::Mayer(p) => {
            let tuple = registry::mayer_reference(p, &file.solution, &mesh).map_err(|e| e.to_string())?;
            let cone = critical_cone_mayer(p, &tuple, &mesh, &tols).map_err(|e| e.to_string())?;
            let form = quadratic_form_mayer(p, &tuple, &mesh).map_err(|e| e.to_string())?;
            let cert = certify_coercivity(&form, &cone, &copts).map_err(|e| e.to_string())?;
            let sec = report.section("COERCIVITY");
            sec.line("method", Status::Info, None, format!("{:?}", cert.method));
            sec.line("c0", pass(cert.certified), Some(cert.c0), cert.warning.clone().unwrap_or_default());
            certificate_code(cert.certified, cert.counterexample.is_some(), cert.method)
        }
        Problem::Ocp(p) => {
            let tuple =
                registry::ocp_reference(p, &file.solution, &mesh, &tols).map_err(|e| e.to_string())?;
            // coercivity on the exact cone (delta at the multiplier
            // threshold); the pointwise conditions on the band can only
            // complement this, not replace it
            let rep_exact = certify_coercivity_ocp(p, &tuple, &mesh, tols.t_mul, &tols, &copts)
                .map_err(|e| e.to_string())?;
            let sec = report.section("EXACT CONE");
            sec.line(
                "coercivity c0",
                if rep_exact.certificate.certified { Status::Pass } else { Status::Info },
                Some(rep_exact.certificate.c0),
                format!("{:?}", rep_exact.certificate.method),
            );
            let mut coercive_at = None;
            let mut pointwise_at = None;
            let mut refuted = rep_exact.certificate.counterexample.is_some();
            let mut sampled_only = false;
            for &delta in &args.delta_sweep {
                let rep = certify_coercivity_ocp(p, &tuple, &mesh, delta, &tols, &copts)
                    .map_err(|e| e.to_string())?;
                let leg = check_legendre(p, &tuple, &mesh, delta, &tols, &copts)
                    .map_err(|e| e.to_string())?;
                let gro = check_hamiltonian_growth(p, &tuple, &mesh, delta, 1e-3, 40, args.seed, &tols)
                    .map_err(|e| e.to_string())?;
                let sec = report.section(format!("DELTA {}", fmt_float(delta)));
                sec.line(
                    "coercivity c0",
                    if rep.certificate.certified { Status::Pass } else { Status::Info },
                    Some(rep.certificate.c0),
                    format!("{:?}", rep.certificate.method),
                );
                if let Some(r) = rep.sup_norm_ratio {
                    sec.line("counterexample ratio (sup-norm)", Status::Info, Some(r), "");
                }
                sec.line(
                    "pointwise constant",
                    if leg.satisfied { Status::Pass } else { Status::Info },
                    Some(leg.c_l),
                    format!("band measure {}", fmt_float(leg.band_measure)),
                );
                sec.line(
                    "growth constant",
                    if gro.satisfied { Status::Pass } else { Status::Info },
                    Some(gro.c_h),
                    format!("{} samples", gro.samples_used),
                );
                if rep.certificate.certified && coercive_at.is_none() {
                    coercive_at = Some(delta);
                }
                if rep_exact.certificate.certified
                    && leg.satisfied
                    && gro.satisfied
                    && pointwise_at.is_none()
                {
                    pointwise_at = Some(delta);
                }
                if rep.certificate.counterexample.is_some() {
                    refuted = true;
                }
                if rep.certificate.method == CertMethod::Sampled {
                    sampled_only = true;
                }
            }
            let sec = report.section("VERDICT");
            let code = if let Some(d) = coercive_at {
                sec.line("assumption set", Status::Pass, Some(d), "coercivity on the extended cone");
                EXIT_SUCCESS
            } else if let Some(d) = pointwise_at {
                sec.line(
                    "assumption set",
                    Status::Pass,
                    Some(d),
                    "coercivity on the exact cone plus pointwise conditions on the band",
                );
                EXIT_SUCCESS
            } else if refuted {
                sec.line("assumption set", Status::Fail, None, "refuted; counterexample direction found");
                EXIT_REFUTED
            } else {
                sec.line(
                    "assumption set",
                    Status::Inconclusive,
                    None,
                    if sampled_only { "sampled-only evidence" } else { "no certificate found" },
                );
                EXIT_INCONCLUSIVE
            };
            code
        }
    };
    write_report(&report, &dir, "certify", args.format)?;
    Ok(code)
}

fn certificate_code(certified: bool, has_counterexample: bool, method: CertMethod) -> i32 {
    if certified {
        EXIT_SUCCESS
    } else if has_counterexample {
        EXIT_REFUTED
    } else if method == CertMethod::Sampled {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_REFUTED
    }
}

// ---------------------------------------------------------------------------
// perturb

fn cmd_perturb(args: &CommonArgs) -> Result<i32, String> {
    let (file, source) = load_problem(args)?;
    let tols = tolerances(args)?;
    let dir = out_dir(&args.out);
    let mut report = Report::new("perturbation sweep");
    echo_config(&mut report, args, &source);
    let mesh = mesh_for(&file.problem, args.mesh_n)?;
    let kopts = KappaOptions {
        magnitudes: magnitudes(args),
        samples: args.samples,
        seed: args.seed,
        ..Default::default()
    };
    if kopts.magnitudes.is_empty() || kopts.magnitudes.iter().any(|m| *m <= 0.0) {
        return Err("--magnitudes must be positive".into());
    }
    let estimate = match &file.problem {
        Problem::Nlp(p) => {
            let tuple = registry::nlp_reference(p, &file.solution).map_err(|e| e.to_string())?;
            estimate_kappa_nlp(p, &tuple, &tols, &kopts).map_err(|e| e.to_string())?
        }
        Problem::Mayer(p) => {
            let tuple = registry::mayer_reference(p, &file.solution, &mesh).map_err(|e| e.to_string())?;
            estimate_kappa_mayer(p, &tuple, &mesh, &tols, &kopts).map_err(|e| e.to_string())?
        }
        Problem::Ocp(p) => {
            let tuple =
                registry::ocp_reference(p, &file.solution, &mesh, &tols).map_err(|e| e.to_string())?;
            // one representative solve at the largest magnitude so the
            // report shows the per-block distances behind the ratios
            let mut rng = rand_chacha_seeded(args.seed);
            let pert = sample_perturbation_ocp(p, &mesh, &mut rng, kopts.magnitudes[0]);
            if let Ok(Some(sol)) =
                solve_perturbed_ocp(p, &tuple, &mesh, &pert, &tols, &kopts.newton)
            {
                let d = ocp_distances(&sol, &tuple, mesh.h());
                let z = perturbation_norm_ocp(&pert, mesh.h());
                let sec = report.section("BLOCK DISTANCES");
                sec.line("state (L1,1)", Status::Info, Some(d.dx_11), "");
                sec.line("control (L2)", Status::Info, Some(d.du_2), "");
                sec.line("adjoint (L1,1)", Status::Info, Some(d.dp_11), "");
                sec.line("multiplier (L2)", Status::Info, Some(d.dlambda_2), "");
                sec.line("disturbance norm", Status::Info, Some(z), "");
            }
            estimate_kappa_ocp(p, &tuple, &mesh, &tols, &kopts).map_err(|e| e.to_string())?
        }
    };
    let sec = report.section("RATIOS");
    for (i, mag) in estimate.magnitudes.iter().enumerate() {
        sec.line(
            format!("magnitude {}", fmt_float(*mag)),
            Status::Info,
            Some(estimate.max_ratio[i]),
            format!("mean {}", fmt_float(estimate.mean_ratio[i])),
        );
    }
    let sec = report.section("ESTIMATE");
    sec.line("kappa", Status::Info, Some(estimate.kappa), "max ratio over all magnitudes");
    sec.line("plateau", pass(estimate.plateau), None, if estimate.plateau { "ratios level off" } else { "ratios keep growing" });
    sec.line("failed solves", Status::Info, Some(estimate.failures as f64), "");
    write_report(&report, &dir, "perturb", args.format)?;
    if estimate.kappa.is_nan() {
        return Ok(EXIT_INCONCLUSIVE);
    }
    Ok(if estimate.plateau { EXIT_SUCCESS } else { EXIT_REFUTED })
}

fn rand_chacha_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// counterexample

fn cmd_counterexample(args: &CounterArgs) -> Result<i32, String> {
    let tols = Tolerances { t_act: args.tol_act, t_mul: args.tol_mul, ..Default::default() };
    let dir = out_dir(&args.out);
    let table = match example1_counterexample(args.mesh_n, &args.s_values, &tols) {
        Ok(t) => t,
        Err(Error::MeshIndivisible { n, s }) => {
            return Err(format!("mesh size {n} is not divisible by s = {s}"));
        }
        Err(e) => return Err(e.to_string()),
    };
    let mut report = Report::new("descent-sequence counterexample");
    report.config("version", env!("CARGO_PKG_VERSION"));
    report.config("mesh_n", args.mesh_n.to_string());
    report.config(
        "s_values",
        args.s_values.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
    );
    let sec = report.section("CONE");
    sec.line(
        "control component trivial",
        Status::Info,
        None,
        if table.cone_exactly_trivial { "yes" } else { "up to the free-control measure" },
    );
    sec.line("free-control measure", Status::Info, Some(table.free_control_measure), "");
    let sec = report.section("DESCENT SEQUENCE");
    for e in &table.entries {
        sec.line(
            format!("s = {}", e.s),
            pass(e.rel_err <= 0.02),
            Some(e.j_discrete),
            format!("closed form {} rel err {}", fmt_float(e.j_continuous), fmt_float(e.rel_err)),
        );
    }
    let mut csv = String::from("s,j_discrete,j_continuous,rel_err,control_sup\n");
    for e in &table.entries {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            e.s,
            fmt_float(e.j_discrete),
            fmt_float(e.j_continuous),
            fmt_float(e.rel_err),
            fmt_float(e.control_sup)
        ));
    }
    write_atomic(&dir.join("counterexample_table.csv"), &csv).map_err(|e| e.to_string())?;
    let (name, content) = match args.format {
        Format::Text => ("counterexample.txt", render_text(&report)),
        Format::Csv => ("counterexample.csv", render_csv(&report)),
    };
    write_atomic(&dir.join(name), &content).map_err(|e| e.to_string())?;
    print!("{}", render_text(&report));
    Ok(if report.all_passed() { EXIT_SUCCESS } else { EXIT_REFUTED })
}
