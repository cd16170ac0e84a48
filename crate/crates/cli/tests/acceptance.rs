//! End-to-end acceptance checks. Each test prints one pass/fail line for
//! the criterion it covers; a failed assertion marks the criterion failed.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use subreg_core::coercivity::{certify_coercivity, CertMethod, CoercivityOptions};
use subreg_core::cone::PolyhedralCone;
use subreg_core::mayer::{critical_cone_mayer, quadratic_form_mayer};
use subreg_core::mesh::{euler_forward, norm_u_l2, norm_x_inf, DiscreteTrajectory, Mesh};
use subreg_core::nlp::{active_sets, critical_cone_nlp, quadratic_form_nlp, quadratic_growth_probe, Tolerances};
use subreg_core::ocp::{
    certify_coercivity_ocp, check_hamiltonian_growth, check_legendre, critical_cone_ocp,
    multiplier_from_stationarity, solve_adjoint, trajectory_cost, ConeRep, StationaryTupleOcp,
};
use subreg_core::field::ScalarField;
use subreg_core::par::ExecStrategy;
use subreg_core::poly::{Polynomial, Term};
use subreg_core::problem::{OcpProblem, Problem, VectorField};
use subreg_core::registry;
use subreg_core::smsr::{estimate_kappa_nlp, estimate_kappa_ocp, example1_counterexample, KappaOptions};

use subreg_kit::{run_args, EXIT_REFUTED, EXIT_SUCCESS};

fn criterion(n: usize, what: &str) {
    println!("criterion {n}: pass - {what}");
}

fn ocp_fixture(name: &str, mesh: &Mesh) -> (OcpProblem, StationaryTupleOcp) {
    let file = registry::load(name).unwrap();
    let ocp = match file.problem {
        Problem::Ocp(p) => p,
        _ => panic!("{name} is not a control problem"),
    };
    let tols = Tolerances::default();
    let tuple = registry::ocp_reference(&ocp, &file.solution, mesh, &tols).unwrap();
    (ocp, tuple)
}

/// Random scalar control problem with the control on a box bound and the
/// multipliers recovered from stationarity; None if no bound works.
fn random_boundary_instance(
    rng: &mut ChaCha8Rng,
    mesh: &Mesh,
    tols: &Tolerances,
) -> Option<(OcpProblem, StationaryTupleOcp)> {
    let (a, b, c, d) = (
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.8..0.8),
        rng.gen_range(-0.5..0.5),
    );
    let dynamics = VectorField::new(
        2,
        vec![ScalarField::poly(Polynomial::new(
            2,
            vec![
                Term { coef: a, powers: vec![(0, 1)] },
                Term { coef: b, powers: vec![(1, 1)] },
                Term { coef: c, powers: vec![(1, 2)] },
                Term::constant(d),
            ],
        ))],
    )
    .unwrap();
    let cost = ScalarField::poly(Polynomial::new(
        2,
        vec![
            Term { coef: rng.gen_range(-1.0..1.0), powers: vec![(1, 1)] },
            Term { coef: rng.gen_range(0.0..0.5), powers: vec![(1, 2)] },
        ],
    ));
    let bound = |s: f64| {
        ScalarField::poly(Polynomial::new(
            1,
            vec![Term { coef: s, powers: vec![(0, 1)] }, Term::constant(-1.0)],
        ))
    };
    let ocp = OcpProblem {
        n: 1,
        m: 1,
        k: 2,
        dynamics,
        endpoint_cost: cost,
        control_constraints: VectorField::new(1, vec![bound(1.0), bound(-1.0)]).unwrap(),
    };
    let x0 = DVector::from_element(1, rng.gen_range(-1.0..1.0));
    for uval in [1.0, -1.0] {
        let u = vec![DVector::from_element(1, uval); mesh.n_intervals];
        let x = euler_forward(&ocp.dynamics, &x0, &u, mesh).ok()?;
        let traj = DiscreteTrajectory { x, u };
        let (p, _) = solve_adjoint(&ocp, &traj, mesh).ok()?;
        if let Ok(rec) = multiplier_from_stationarity(&ocp, &traj, &p, mesh, tols) {
            let tuple = StationaryTupleOcp { traj: traj.clone(), p, lambda: rec.lambda };
            if tuple.validate(&ocp, mesh).is_ok() {
                return Some((ocp, tuple));
            }
        }
    }
    None
}

#[test]
fn criterion_1_descent_sequence_and_refutation() {
    let tols = Tolerances::default();
    let start = Instant::now();
    let table = example1_counterexample(1000, &[1, 2, 4], &tols).unwrap();
    let elapsed = start.elapsed();
    let expected = [-0.5, -0.0625, -0.0078125];
    for (e, want) in table.entries.iter().zip(expected) {
        assert!((e.j_continuous - want).abs() < 1e-12);
        assert!(e.rel_err <= 0.02, "s = {} rel err {}", e.s, e.rel_err);
    }
    // the cone control component vanishes up to at most two intervals
    assert!(table.free_control_measure <= 2.0 / 1000.0);
    assert!(elapsed.as_secs_f64() < 2.0, "table took {elapsed:?}");
    // the second-order check refutes the same point
    let dir = tempfile::tempdir().unwrap();
    let code = run_args([
        "subreg-kit",
        "certify",
        "--registry",
        "example1",
        "--mesh-n",
        "40",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_REFUTED);
    criterion(1, "descent sequence matches the closed form and certification refutes");
}

#[test]
fn criterion_2_recovered_multipliers() {
    let mesh = Mesh::unit(100).unwrap();
    let (_, tuple) = ocp_fixture("example1", &mesh);
    let h = mesh.h();
    for i in 0..mesh.n_intervals {
        // the multiplier follows the clock state
        assert!(
            (tuple.lambda.lambda[i][0] - mesh.node(i)).abs() <= h,
            "interval {i}: lambda {} node {}",
            tuple.lambda.lambda[i][0],
            mesh.node(i)
        );
    }
    for p in &tuple.p.p {
        assert!((p[1] - 1.0).abs() <= 1e-9, "adjoint component 2 deviates: {}", p[1]);
    }
    criterion(2, "recovered multipliers match the closed-form adjoint and bound multiplier");
}

#[test]
fn criterion_3_plateau_signature() {
    let tols = Tolerances::default();
    let kopts = KappaOptions::default();
    // Lipschitz-stable instances level off
    let start = Instant::now();
    let mesh = Mesh::unit(200).unwrap();
    let (ocp, tuple) = ocp_fixture("lq_bound", &mesh);
    let est = estimate_kappa_ocp(&ocp, &tuple, &mesh, &tols, &kopts).unwrap();
    assert!(est.plateau, "ratios {:?}", est.max_ratio);
    let spread = est.max_ratio.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        / est.max_ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 1.25, "spread {spread}");
    assert!(start.elapsed().as_secs_f64() < 30.0);
    let file = registry::load("nlp_eq_quadratic").unwrap();
    let p = match &file.problem {
        Problem::Nlp(p) => p.clone(),
        _ => unreachable!(),
    };
    let t = registry::nlp_reference(&p, &file.solution).unwrap();
    let est = estimate_kappa_nlp(&p, &t, &tols, &kopts).unwrap();
    assert!(est.plateau, "ratios {:?}", est.max_ratio);
    // the degenerate instance keeps growing as the disturbance shrinks
    let file = registry::load("nlp_scalar_quartic").unwrap();
    let p = match &file.problem {
        Problem::Nlp(p) => p.clone(),
        _ => unreachable!(),
    };
    let t = registry::nlp_reference(&p, &file.solution).unwrap();
    let kopts = KappaOptions { radius_factor: 0.5, ..Default::default() };
    let est = estimate_kappa_nlp(&p, &t, &tols, &kopts).unwrap();
    assert!(!est.plateau);
    assert!(
        est.max_ratio.last().unwrap() >= &(4.0 * est.max_ratio.first().unwrap()),
        "ratios {:?}",
        est.max_ratio
    );
    criterion(3, "ratio plateau separates the Lipschitz instances from the degenerate one");
}

#[test]
fn criterion_4_closed_form_modulus() {
    let tols = Tolerances::default();
    let file = registry::load("nlp_diag_quadratic").unwrap();
    let p = match &file.problem {
        Problem::Nlp(p) => p.clone(),
        _ => unreachable!(),
    };
    let t = registry::nlp_reference(&p, &file.solution).unwrap();
    let est = estimate_kappa_nlp(&p, &t, &tols, &KappaOptions::default()).unwrap();
    // x = Q^{-1} zeta with Q = diag(1, 4): worst ratio 1 / lambda_min = 1
    assert!((est.kappa - 1.0).abs() <= 0.01, "kappa {}", est.kappa);
    criterion(4, "estimated modulus matches 1/lambda_min on the diagonal quadratic");
}

#[test]
fn criterion_5_certification_oracles_agree() {
    use subreg_core::coercivity::QuadraticFormRep;
    let mut rng = ChaCha8Rng::seed_from_u64(0xace);
    let exact_opts = CoercivityOptions { strategy: ExecStrategy::Sequential, ..Default::default() };
    let sampled_opts = CoercivityOptions {
        row_cap: 0,
        d_max: 0,
        budget: 0.0,
        sample_restarts: 96,
        sample_iters: 600,
        strategy: ExecStrategy::Sequential,
        ..Default::default()
    };
    let mut compared = 0usize;
    let mut attempts = 0usize;
    while compared < 50 && attempts < 400 {
        attempts += 1;
        let dim = rng.gen_range(2..=5);
        let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let matrix = (&a + a.transpose()) * 0.5;
        let rows = rng.gen_range(1..=3);
        let eqs = rng.gen_range(0..=1);
        let cone = PolyhedralCone::new(
            nalgebra::DMatrix::from_fn(rows, dim, |_, _| rng.gen_range(-1.0..1.0)),
            nalgebra::DMatrix::from_fn(eqs, dim, |_, _| rng.gen_range(-1.0..1.0)),
        );
        let form = QuadraticFormRep::with_identity_gram(matrix);
        let exact = certify_coercivity(&form, &cone, &exact_opts).unwrap();
        if exact.method != CertMethod::Exact || (exact.c0.is_finite() && exact.c0.abs() < 5e-3) {
            continue;
        }
        if exact.c0.is_infinite() {
            continue;
        }
        let sampled = certify_coercivity(&form, &cone, &sampled_opts).unwrap();
        assert!(
            (sampled.c0 - exact.c0).abs() <= 1e-3 * (1.0 + exact.c0.abs()),
            "sampled {} vs exact {}",
            sampled.c0,
            exact.c0
        );
        // a certified pair never shows a sampled negative value
        if exact.certified {
            assert!(sampled.c0 > 0.0);
        }
        compared += 1;
    }
    assert!(compared >= 50, "only {compared} comparisons");
    criterion(5, "face enumeration and sampling agree on small instances");
}

#[test]
fn criterion_6_cone_laws() {
    let tols = Tolerances::default();
    let mesh = Mesh::unit(12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut instances = 0usize;
    let mut membership_checks = 0usize;
    while instances < 20 {
        let Some((ocp, tuple)) = random_boundary_instance(&mut rng, &mesh, &tols) else {
            continue;
        };
        instances += 1;
        let lmax = tuple.lambda.lambda.iter().map(|l| l.amax()).fold(0.0f64, f64::max);
        let (d1, d2) = (0.3 * lmax + 1e-6, 1.1 * lmax + 1e-5);
        let k0 = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::MultiplierRows, &tols).unwrap();
        let k1 = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::Extended(d1), &tols).unwrap();
        let k2 = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::Extended(d2), &tols).unwrap();
        let kh = critical_cone_ocp(&ocp, &tuple, &mesh, ConeRep::HamiltonianRows, &tols).unwrap();
        let (p0, p1, p2, ph) =
            (k0.to_polyhedral(), k1.to_polyhedral(), k2.to_polyhedral(), kh.to_polyhedral());
        for trial in 0..100 {
            let mut v = DVector::from_fn(p0.dim, |_, _| rng.gen_range(-1.0f64..1.0));
            if trial % 2 == 0 {
                // construct a member of the base cone so the inclusion is
                // exercised nonvacuously
                for i in 0..mesh.n_intervals {
                    let pinned = k0.eq_rows.iter().any(|(j, _)| *j == i);
                    v[1 + i] = if pinned { 0.0 } else { -rng.gen_range(0.0..1.0) };
                }
                for (i, row) in &k0.ineq_rows {
                    if row[0] < 0.0 {
                        v[1 + i] = -v[1 + i];
                    }
                }
            }
            if p0.contains(&v, 1e-9) {
                assert!(p1.contains(&v, 1e-9), "base member left the first extension");
                membership_checks += 1;
            }
            if p1.contains(&v, 1e-9) {
                assert!(p2.contains(&v, 1e-9), "nesting violated between extensions");
            }
            // the two exact representations agree on every direction
            assert_eq!(p0.contains(&v, 1e-9), ph.contains(&v, 1e-9));
        }
    }
    assert!(membership_checks >= 100, "only {membership_checks} nontrivial membership checks");
    criterion(6, "cone extensions nest in delta and the two representations agree");
}

#[test]
fn criterion_7_pointwise_and_growth_consistency() {
    let tols = Tolerances::default();
    let mesh = Mesh::unit(8).unwrap();
    let opts = CoercivityOptions { strategy: ExecStrategy::Sequential, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut implications = 0usize;
    let eval_case = |ocp: &OcpProblem, tuple: &StationaryTupleOcp| -> usize {
        let mut hits = 0usize;
        let lmax = tuple.lambda.lambda.iter().map(|l| l.amax()).fold(0.0f64, f64::max);
        for delta in [1e-2, 0.4 * lmax + 1e-3, 1.1 * lmax + 1e-3] {
            let leg = check_legendre(ocp, tuple, &mesh, delta, &tols, &opts).unwrap();
            let gro = check_hamiltonian_growth(ocp, tuple, &mesh, delta, 1e-3, 40, 5, &tols).unwrap();
            if leg.satisfied && gro.samples_used > 0 && leg.band_measure > 0.0 {
                hits += 1;
                assert!(gro.c_h > 0.0, "pointwise pass without growth pass (c_h {})", gro.c_h);
            }
        }
        hits
    };
    for name in ["lq_bound", "example1"] {
        let (ocp, tuple) = ocp_fixture(name, &mesh);
        implications += eval_case(&ocp, &tuple);
    }
    // random boundary instances often have vacuously empty bands; keep
    // drawing until enough nonvacuous antecedents have been exercised
    let mut attempts = 0usize;
    while implications < 3 && attempts < 300 {
        attempts += 1;
        if let Some((ocp, tuple)) = random_boundary_instance(&mut rng, &mesh, &tols) {
            implications += eval_case(&ocp, &tuple);
        }
    }
    // mutual refutation on the counterexample
    let mesh40 = Mesh::unit(40).unwrap();
    let (ocp, tuple) = ocp_fixture("example1", &mesh40);
    let leg = check_legendre(&ocp, &tuple, &mesh40, 0.1, &tols, &opts).unwrap();
    let gro = check_hamiltonian_growth(&ocp, &tuple, &mesh40, 0.1, 0.05, 60, 5, &tols).unwrap();
    assert!(!leg.satisfied && leg.c_l < 0.0);
    assert!(!gro.satisfied && gro.c_h < 0.0);
    assert!(implications >= 3, "only {implications} nonvacuous implications");
    criterion(7, "every pointwise pass implies a growth pass; refutations are mutual");
}

#[test]
fn criterion_8_quadratic_growth_of_certified_problems() {
    let tols = Tolerances::default();
    let copts = CoercivityOptions::default();
    // finite-dimensional certified problems
    for name in ["nlp_scalar_quadratic", "nlp_eq_quadratic", "nlp_diag_quadratic"] {
        let file = registry::load(name).unwrap();
        let p = match &file.problem {
            Problem::Nlp(p) => p.clone(),
            _ => unreachable!(),
        };
        let t = registry::nlp_reference(&p, &file.solution).unwrap();
        let sets = active_sets(&p, &t, &tols).unwrap();
        let cone = critical_cone_nlp(&p, &t, &sets).unwrap();
        let form = quadratic_form_nlp(&p, &t, None).unwrap();
        let cert = certify_coercivity(&form, &cone, &copts).unwrap();
        assert!(cert.certified, "{name} expected certified");
        let growth = quadratic_growth_probe(&p, &t, 1e-2, 1000, 5, None).unwrap();
        assert!(growth.violations.is_empty(), "{name}: {} violations", growth.violations.len());
        assert!(
            growth.fitted_c >= 0.25 * cert.c0,
            "{name}: fitted {} certified {}",
            growth.fitted_c,
            cert.c0
        );
    }
    // certified control problem: probe the cost over feasible trajectories
    let mesh = Mesh::unit(50).unwrap();
    let (ocp, tuple) = ocp_fixture("lq_bound", &mesh);
    let rep = certify_coercivity_ocp(&ocp, &tuple, &mesh, 0.1, &tols, &copts).unwrap();
    assert!(rep.certificate.certified);
    let j_hat = trajectory_cost(&ocp, &tuple.traj).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut fitted = f64::INFINITY;
    for _ in 0..1000 {
        // feasible variation: keep the control inside the box
        let dx0 = rng.gen_range(-1e-2..1e-2);
        let u: Vec<DVector<f64>> = tuple
            .traj
            .u
            .iter()
            .map(|u| DVector::from_element(1, (u[0] + rng.gen_range(0.0..1e-2)).clamp(-1.0, 1.0)))
            .collect();
        let x0 = DVector::from_element(1, tuple.traj.x[0][0] + dx0);
        let x = euler_forward(&ocp.dynamics, &x0, &u, &mesh).unwrap();
        let traj = DiscreteTrajectory { x, u };
        let dj = trajectory_cost(&ocp, &traj).unwrap() - j_hat;
        let dx: Vec<DVector<f64>> =
            traj.x.iter().zip(&tuple.traj.x).map(|(a, b)| a - b).collect();
        let du: Vec<DVector<f64>> =
            traj.u.iter().zip(&tuple.traj.u).map(|(a, b)| a - b).collect();
        let denom = norm_x_inf(&dx).powi(2) + norm_u_l2(&du, mesh.h()).powi(2);
        if denom <= 1e-20 {
            continue;
        }
        assert!(dj >= 0.0, "cost decreased along a feasible variation: {dj}");
        fitted = fitted.min(dj / denom);
    }
    assert!(
        fitted >= 0.25 * rep.certificate.c0,
        "control problem: fitted {} certified {}",
        fitted,
        rep.certificate.c0
    );
    // certified Mayer problem: variations that respect the endpoint rows
    let file = registry::load("mayer_terminal_eq").unwrap();
    let mayer = match &file.problem {
        Problem::Mayer(p) => p.clone(),
        _ => unreachable!(),
    };
    let mesh = Mesh::new(50, mayer.horizon.0, mayer.horizon.1).unwrap();
    let mt = registry::mayer_reference(&mayer, &file.solution, &mesh).unwrap();
    let cone = critical_cone_mayer(&mayer, &mt, &mesh, &tols).unwrap();
    let form = quadratic_form_mayer(&mayer, &mt, &mesh).unwrap();
    let cert = certify_coercivity(&form, &cone, &copts).unwrap();
    assert!(cert.certified);
    let j_hat = mayer.endpoint_cost.value(&mt.traj.endpoint_pair()).unwrap();
    let mut fitted = f64::INFINITY;
    for _ in 0..1000 {
        // zero-mean control variation keeps the terminal equality exact
        let mut du: Vec<f64> = (0..mesh.n_intervals).map(|_| rng.gen_range(-1e-2..1e-2)).collect();
        let mean = du.iter().sum::<f64>() / du.len() as f64;
        for d in &mut du {
            *d -= mean;
        }
        let u: Vec<DVector<f64>> = mt
            .traj
            .u
            .iter()
            .zip(&du)
            .map(|(u, d)| DVector::from_element(1, u[0] + d))
            .collect();
        let x = euler_forward(&mayer.dynamics, &mt.traj.x[0], &u, &mesh).unwrap();
        let traj = DiscreteTrajectory { x, u };
        let dj = mayer.endpoint_cost.value(&traj.endpoint_pair()).unwrap() - j_hat;
        let dxv: Vec<DVector<f64>> = traj.x.iter().zip(&mt.traj.x).map(|(a, b)| a - b).collect();
        let duv: Vec<DVector<f64>> = traj.u.iter().zip(&mt.traj.u).map(|(a, b)| a - b).collect();
        let denom = norm_x_inf(&dxv).powi(2) + norm_u_l2(&duv, mesh.h()).powi(2);
        if denom <= 1e-20 {
            continue;
        }
        assert!(dj >= -1e-12, "cost decreased along a feasible variation: {dj}");
        fitted = fitted.min(dj / denom);
    }
    assert!(
        fitted >= 0.25 * cert.c0,
        "terminal-constrained problem: fitted {} certified {}",
        fitted,
        cert.c0
    );
    criterion(8, "growth probes respect the certified constants with slack 0.25");
}

#[test]
fn criterion_9_reports_are_deterministic() {
    let commands: Vec<Vec<&str>> = vec![
        vec!["analyze", "--registry", "lq_bound", "--mesh-n", "30"],
        vec!["certify", "--registry", "lq_bound", "--mesh-n", "30"],
        vec!["perturb", "--registry", "nlp_eq_quadratic", "--seed", "7"],
        vec!["perturb", "--registry", "lq_bound", "--mesh-n", "20", "--seed", "7"],
        vec!["counterexample", "--mesh-n", "400"],
    ];
    for cmd in &commands {
        let mut contents: Vec<Vec<(String, String)>> = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut args = vec!["subreg-kit"];
            args.extend(cmd.iter().cloned());
            args.extend(["--format", "csv", "--out", dir.path().to_str().unwrap()]);
            let code = run_args(args);
            assert_eq!(code, EXIT_SUCCESS, "{cmd:?}");
            let mut files: Vec<(String, String)> = std::fs::read_dir(dir.path())
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (
                        e.file_name().to_string_lossy().into_owned(),
                        std::fs::read_to_string(e.path()).unwrap(),
                    )
                })
                .collect();
            files.sort();
            assert!(!files.is_empty());
            contents.push(files);
        }
        assert_eq!(contents[0], contents[1], "{cmd:?} produced differing reports");
    }
    criterion(9, "repeated runs with a fixed seed emit byte-identical reports");
}
