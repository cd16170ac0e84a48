//! Serialize/parse round trips: a problem rendered back into the file
//! grammar must evaluate identically after reparsing.

use nalgebra::DVector;
use proptest::prelude::*;

use subreg_core::field::ScalarField;
use subreg_core::parse::{parse_problem_file, serialize_problem};
use subreg_core::poly::{Polynomial, Term};
use subreg_core::problem::{MayerProblem, NlpProblem, OcpProblem, Problem, VectorField};

fn term_strategy(dim: usize) -> impl Strategy<Value = Term> {
    let coef = prop_oneof![
        (-3.0f64..3.0),
        Just(0.0),
        (-3.0f64..3.0).prop_map(|c| c * 1e-3),
    ];
    let powers = proptest::collection::vec((0..dim, 0u32..=3), 0..=2);
    (coef, powers).prop_map(|(coef, powers)| Term { coef, powers })
}

fn poly_strategy(dim: usize) -> impl Strategy<Value = Polynomial> {
    proptest::collection::vec(term_strategy(dim), 0..=4)
        .prop_map(move |terms| Polynomial::new(dim, terms))
}

fn assert_fields_agree(a: &ScalarField, b: &ScalarField, points: &[DVector<f64>]) {
    for x in points {
        let ea = a.eval(x).unwrap();
        let eb = b.eval(x).unwrap();
        let scale = 1.0 + ea.value.abs() + ea.gradient.amax() + ea.hessian.amax();
        assert!((ea.value - eb.value).abs() <= 1e-12 * scale);
        assert!((&ea.gradient - &eb.gradient).amax() <= 1e-12 * scale);
        assert!((&ea.hessian - &eb.hessian).amax() <= 1e-12 * scale);
    }
}

fn sample_points(dim: usize, count: usize, salt: u64) -> Vec<DVector<f64>> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xf00d ^ salt);
    (0..count)
        .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn nlp_roundtrip(
        n in 1usize..=3,
        objective in (1usize..=3).prop_flat_map(poly_strategy),
        ineq in proptest::collection::vec((1usize..=3).prop_flat_map(poly_strategy), 0..=2),
        eq in proptest::collection::vec((1usize..=3).prop_flat_map(poly_strategy), 0..=2),
    ) {
        // clamp every polynomial to the chosen dimension
        let fix = |p: Polynomial| {
            let terms = p
                .terms
                .into_iter()
                .map(|mut t| {
                    t.powers.retain(|&(v, _)| v < n);
                    t
                })
                .collect();
            ScalarField::poly(Polynomial::new(n, terms))
        };
        let problem = NlpProblem::new(
            n,
            fix(objective),
            ineq.into_iter().map(fix).collect(),
            eq.into_iter().map(fix).collect(),
        )
        .unwrap();
        let text = serialize_problem(&Problem::Nlp(problem.clone()));
        let reparsed = match parse_problem_file(&text).unwrap().problem {
            Problem::Nlp(p) => p,
            _ => panic!("class changed in round trip"),
        };
        let points = sample_points(n, 5, n as u64);
        assert_fields_agree(&problem.objective, &reparsed.objective, &points);
        for (a, b) in problem.inequalities.iter().zip(&reparsed.inequalities) {
            assert_fields_agree(a, b, &points);
        }
        for (a, b) in problem.equalities.iter().zip(&reparsed.equalities) {
            assert_fields_agree(a, b, &points);
        }
    }

    #[test]
    fn ocp_roundtrip(
        seed in 0u64..1000,
        dyn_polys in proptest::collection::vec((1usize..=3).prop_flat_map(poly_strategy), 2),
        cost in (2usize..=4).prop_flat_map(poly_strategy),
    ) {
        let (n, m) = (2usize, 1usize);
        let fix = |p: Polynomial, dim: usize| {
            let terms = p
                .terms
                .into_iter()
                .map(|mut t| {
                    t.powers.retain(|&(v, _)| v < dim);
                    t
                })
                .collect();
            ScalarField::poly(Polynomial::new(dim, terms))
        };
        // box |u| <= 1 + small jitter keeps U nonempty
        let c = 1.0 + (seed as f64) * 1e-3;
        let bound = |s: f64| {
            ScalarField::poly(Polynomial::new(
                m,
                vec![Term { coef: s, powers: vec![(0, 1)] }, Term::constant(-c)],
            ))
        };
        let problem = OcpProblem {
            n,
            m,
            k: 2,
            dynamics: VectorField::new(
                n + m,
                dyn_polys.into_iter().map(|p| fix(p, n + m)).collect(),
            )
            .unwrap(),
            endpoint_cost: fix(cost, 2 * n),
            control_constraints: VectorField::new(m, vec![bound(1.0), bound(-1.0)]).unwrap(),
        };
        let text = serialize_problem(&Problem::Ocp(problem.clone()));
        let reparsed = match parse_problem_file(&text).unwrap().problem {
            Problem::Ocp(p) => p,
            _ => panic!("class changed in round trip"),
        };
        let xu = sample_points(n + m, 5, seed);
        for (a, b) in problem
            .dynamics
            .components
            .iter()
            .zip(&reparsed.dynamics.components)
        {
            assert_fields_agree(a, b, &xu);
        }
        let q = sample_points(2 * n, 5, seed ^ 1);
        assert_fields_agree(&problem.endpoint_cost, &reparsed.endpoint_cost, &q);
        let u = sample_points(m, 5, seed ^ 2);
        for (a, b) in problem
            .control_constraints
            .components
            .iter()
            .zip(&reparsed.control_constraints.components)
        {
            assert_fields_agree(a, b, &u);
        }
    }

    #[test]
    fn mayer_roundtrip(
        dyn_polys in proptest::collection::vec((1usize..=3).prop_flat_map(poly_strategy), 2),
        cost in (2usize..=4).prop_flat_map(poly_strategy),
        eqs in proptest::collection::vec((2usize..=4).prop_flat_map(poly_strategy), 0..=2),
    ) {
        let (n, m) = (2usize, 1usize);
        let fix = |p: Polynomial, dim: usize| {
            let terms = p
                .terms
                .into_iter()
                .map(|mut t| {
                    t.powers.retain(|&(v, _)| v < dim);
                    t
                })
                .collect();
            ScalarField::poly(Polynomial::new(dim, terms))
        };
        let problem = MayerProblem {
            n,
            m,
            dynamics: VectorField::new(
                n + m,
                dyn_polys.into_iter().map(|p| fix(p, n + m)).collect(),
            )
            .unwrap(),
            endpoint_cost: fix(cost, 2 * n),
            endpoint_equalities: eqs.into_iter().map(|p| fix(p, 2 * n)).collect(),
            endpoint_inequalities: Vec::new(),
            horizon: (0.0, 1.0),
        };
        let text = serialize_problem(&Problem::Mayer(problem.clone()));
        let reparsed = match parse_problem_file(&text).unwrap().problem {
            Problem::Mayer(p) => p,
            _ => panic!("class changed in round trip"),
        };
        let xu = sample_points(n + m, 5, 11);
        for (a, b) in problem
            .dynamics
            .components
            .iter()
            .zip(&reparsed.dynamics.components)
        {
            assert_fields_agree(a, b, &xu);
        }
        let q = sample_points(2 * n, 5, 12);
        assert_fields_agree(&problem.endpoint_cost, &reparsed.endpoint_cost, &q);
        for (a, b) in problem
            .endpoint_equalities
            .iter()
            .zip(&reparsed.endpoint_equalities)
        {
            assert_fields_agree(a, b, &q);
        }
        assert_eq!(problem.horizon, reparsed.horizon);
    }
}

#[test]
fn registry_texts_roundtrip_exactly() {
    for name in subreg_core::registry::NAMES {
        let file = subreg_core::registry::load(name).unwrap();
        let text = serialize_problem(&file.problem);
        // the rendered text must parse back to the same class
        let again = parse_problem_file(&text).unwrap();
        assert_eq!(
            std::mem::discriminant(&file.problem),
            std::mem::discriminant(&again.problem),
            "{name}"
        );
    }
}
