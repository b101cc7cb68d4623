use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convres::conic::{self, Constraint, ConvexProgram, SolveOptions, Status};

/// Convex QCQP with a strictly feasible center: ellipsoids and half-spaces
/// around `center`, a box, and a random linear objective.
fn random_program(seed: u64, d: usize, ellipsoids: usize, halfspaces: usize) -> ConvexProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prog = ConvexProgram::new(d);
    prog.objective = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    prog.lower = vec![-3.0; d];
    prog.upper = vec![3.0; d];
    let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
    for _ in 0..ellipsoids {
        let g = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shift: f64 = (0..d)
            .map(|r| (0..d).map(|j| g[(r, j)] * (center[j] - a[j])).sum::<f64>().powi(2))
            .sum();
        let mut c = Constraint::ineq(Vec::new(), -(shift + rng.gen_range(0.2..1.5)));
        for r in 0..d {
            let alpha: Vec<(usize, f64)> = (0..d).map(|j| (j, g[(r, j)])).collect();
            let off = -(0..d).map(|j| g[(r, j)] * a[j]).sum::<f64>();
            c.add_square(1.0, &alpha, off);
        }
        prog.constraints.push(c);
    }
    for _ in 0..halfspaces {
        let n: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at: f64 = n.iter().zip(&center).map(|(a, b)| a * b).sum();
        prog.constraints
            .push(Constraint::ineq(n.into_iter().enumerate().collect(), -at - rng.gen_range(0.2..1.0)));
    }
    prog
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn optimal_points_are_feasible_and_complementary(
        seed in any::<u64>(),
        d in 1usize..=6,
        ellipsoids in 1usize..=4,
        halfspaces in 0usize..=4,
    ) {
        let prog = random_program(seed, d, ellipsoids, halfspaces);
        let opts = SolveOptions::default();
        let sol = conic::solve(&prog, &opts).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        prop_assert!(prog.max_violation(&sol.x) <= 1e-7);
        prop_assert_eq!(sol.duals.len(), prog.constraints.len());
        for (c, &lam) in prog.constraints.iter().zip(&sol.duals) {
            prop_assert!(lam >= -1e-9);
            let slack = -c.value(&sol.x);
            prop_assert!((lam * slack).abs() <= 1e-6, "lambda {} slack {}", lam, slack);
        }
        prop_assert!((sol.objective - prog.objective_value(&sol.x)).abs() <= 1e-9 * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn repeated_solves_are_bitwise_identical(seed in any::<u64>(), d in 1usize..=4) {
        let prog = random_program(seed, d, 2, 1);
        let a = conic::solve(&prog, &SolveOptions::default()).unwrap();
        let b = conic::solve(&prog, &SolveOptions::default()).unwrap();
        prop_assert_eq!(a.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        prop_assert_eq!(a.duals, b.duals);
    }
}

#[test]
fn parabola_vertex_is_the_origin() {
    // min y s.t. x^2 - y <= 0
    let mut prog = ConvexProgram::new(2);
    prog.objective = vec![0.0, 1.0];
    let mut c = Constraint::ineq(vec![(1, -1.0)], 0.0);
    c.add_square(1.0, &[(0, 1.0)], 0.0);
    prog.constraints.push(c);
    let sol = conic::solve(&prog, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!(sol.x[0].abs() < 1e-4 && sol.x[1].abs() < 1e-7, "{:?}", sol.x);
}

#[test]
fn contradictory_halfspaces_are_infeasible() {
    let mut prog = ConvexProgram::new(1);
    prog.objective = vec![1.0];
    prog.constraints.push(Constraint::ineq(vec![(0, 1.0)], 0.0));
    prog.constraints.push(Constraint::ineq(vec![(0, -1.0)], 1.0));
    let sol = conic::solve(&prog, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
}

#[test]
fn unbounded_direction_is_reported() {
    let mut prog = ConvexProgram::new(2);
    prog.objective = vec![-1.0, 0.0];
    let mut c = Constraint::ineq(Vec::new(), -1.0);
    c.add_square(1.0, &[(1, 1.0)], 0.0);
    prog.constraints.push(c);
    let sol = conic::solve(&prog, &SolveOptions::default()).unwrap();
    assert_eq!(sol.status, Status::Unbounded);
}

/// Evaluate every constraint of a dumped program from its text alone.
fn eval_dump(text: &str, x: &[f64]) -> (usize, Vec<f64>, f64) {
    let mut values: Vec<f64> = Vec::new();
    let mut obj = 0.0;
    let mut vars = 0;
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap();
        let idx = |i: usize| f[i].parse::<usize>().unwrap();
        match f[0] {
            "program" => vars = idx(1),
            "objective" => obj += num(1),
            "c" => obj += num(2) * x[idx(1)],
            "bound" => {}
            "con" => values.push(num(3)),
            "a" => *values.last_mut().unwrap() += num(2) * x[idx(1)],
            "q" => *values.last_mut().unwrap() += num(3) * x[idx(1)] * x[idx(2)],
            other => panic!("unknown record {other}"),
        }
    }
    (vars, values, obj)
}

#[test]
fn dump_reproduces_constraint_values() {
    let prog = random_program(17, 4, 3, 2);
    let text = prog.dump();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (vars, values, obj) = eval_dump(&text, &x);
        assert_eq!(vars, 4);
        assert_eq!(values.len(), prog.constraints.len());
        for (c, v) in prog.constraints.iter().zip(&values) {
            assert!((c.value(&x) - v).abs() < 1e-12 * (1.0 + v.abs()));
        }
        assert!((prog.objective_value(&x) - obj).abs() < 1e-12);
    }
    assert!(text.lines().any(|l| l.starts_with("bound 0 ")));
}
