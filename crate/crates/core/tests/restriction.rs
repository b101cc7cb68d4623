use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convres::catalog::{self, ParkStart};
use convres::conic::SolveOptions;
use convres::model::{AffineForm, BasisFunction, DecomposedSystem, NominalPoint};
use convres::restriction::{self, NormKind, Objective, Radius, UncertaintyModel};
use convres::scrs;
use convres::Error;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

#[test]
fn k_times_residual_recovers_polytope_point() {
    for name in ["quadratic", "disk", "poly-chain(8,3)", "park-poly", "park-poly-b", "netflow(5)"] {
        let p = catalog::get(name).unwrap();
        let pt = &p.nominal;
        let kd = restriction::compute_k(&p.system, pt).unwrap();
        let g = p.system.residual(&kd.lambda, &pt.z0, &pt.u0, &pt.w0);
        let lhs = &kd.k * g;
        let a = restriction::polytope_matrix(&p.system);
        // M psi = f0 - B w0, so K g = A x0 - A J^-1 (f0 - B w0); f0 vanishes at an exact root
        let f0 = convres::model::evaluate_f(&p.system, &pt.x0, &pt.u0, &pt.w0).unwrap();
        let rhs = &a * &pt.x0 - &a * &kd.jacobian_inverse * (f0 - &p.system.b_mat * &pt.w0);
        assert!((lhs - rhs).amax() < 1e-10, "{name}");
    }
}

/// `x = u` with `|x| <= 1`.
fn clipped_identity() -> (DecomposedSystem, NominalPoint) {
    let basis = vec![
        BasisFunction::linear(AffineForm::z(0)),
        BasisFunction::linear(AffineForm::u(0)),
        BasisFunction::linear(AffineForm::constant(1.0)),
    ];
    let sys = DecomposedSystem::nominal(
        1,
        DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]),
        DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, -1.0, 0.0, -1.0]),
        DMatrix::identity(1, 1),
        basis,
    )
    .unwrap();
    let pt = NominalPoint::at_zero_w(&sys, DVector::from_element(1, 0.2), DVector::from_element(1, 0.2)).unwrap();
    (sys, pt)
}

#[test]
fn linear_system_restriction_is_exact() {
    let (sys, pt) = clipped_identity();
    let prog = restriction::build_nominal(&sys, &pt, Objective::Feasibility).unwrap();
    for u in [-1.0, -0.5, 0.0, 0.99, 1.0] {
        assert!(prog.contains(&[u], &opts()).unwrap(), "u = {u}");
    }
    for u in [-1.05, 1.01, 3.0] {
        assert!(!prog.contains(&[u], &opts()).unwrap(), "u = {u}");
    }
}

#[test]
fn quadratic_rows_match_closed_form() {
    let p = catalog::quadratic().unwrap();
    let prog = restriction::build_nominal(&p.system, &p.nominal, Objective::Feasibility).unwrap();
    let x0 = p.nominal.x0[0];
    let u10 = p.nominal.u0[0];
    let j0 = 2.0 * x0 + u10;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let u = [rng.gen_range(-2.0..8.0), rng.gen_range(-3.0..5.0)];
        let zl = rng.gen_range(-3.0..1.0);
        let zu = zl + rng.gen_range(0.0..3.0);
        let d = u[0] - u10;
        let base = x0 * d - x0 * x0 + u[1];
        let upper = -(base - 0.25 * d * d) / j0.abs() - zu;
        let at = |b: f64| (base + 0.25 * (2.0 * b - 2.0 * x0 + d).powi(2)) / j0.abs();
        let lower = at(zu).max(at(zl)) + zl;
        let mut expected = vec![upper, lower, zu - 2.0, -zl - 2.0];
        let mut got = prog.reduced_row_values(&u, &[zu], &[zl], 0.0);
        expected.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        assert_eq!(got.len(), 4);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{got:?} vs {expected:?}");
        }
    }
}

#[test]
fn quadratic_far_point_is_excluded() {
    let p = catalog::quadratic().unwrap();
    let prog = restriction::build_nominal(&p.system, &p.nominal, Objective::Feasibility).unwrap();
    // discriminant 0 - 40 < 0: no real root at all
    assert!(!prog.contains(&[0.0, 10.0], &opts()).unwrap());
    assert!(prog.contains(&[4.0, 0.0], &opts()).unwrap());
}

#[test]
fn ray_crossing_separates_inside_from_outside() {
    let p = catalog::quadratic().unwrap();
    let prog = restriction::build_nominal(&p.system, &p.nominal, Objective::Feasibility).unwrap();
    let u0 = [4.0, 0.0];
    for dir in [[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8], [0.3, -1.0]] {
        let at = |t: f64| [u0[0] + t * dir[0], u0[1] + t * dir[1]];
        let mut inside = 0.0;
        let mut outside = 64.0;
        assert!(!prog.contains(&at(outside), &opts()).unwrap());
        for _ in 0..40 {
            let mid = 0.5 * (inside + outside);
            if prog.contains(&at(mid), &opts()).unwrap() {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        assert!(inside > 0.0, "restriction has interior along {dir:?}");
        for frac in [0.1, 0.5, 0.9, 0.999] {
            assert!(prog.contains(&at(frac * inside), &opts()).unwrap());
        }
        for extra in [1.001, 1.1, 2.0] {
            assert!(!prog.contains(&at(extra * outside), &opts()).unwrap());
        }
    }
}

#[test]
fn zero_radius_matches_nominal_program() {
    let p = catalog::park_poly(ParkStart::A).unwrap();
    let nominal = restriction::build_nominal(&p.system, &p.nominal, Objective::Feasibility).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for norm in [NormKind::Two, NormKind::InfTable, NormKind::InfExact] {
        let robust =
            restriction::build_robust_additive(&p.system, &p.nominal, norm, Radius::Fixed(0.0), Objective::Feasibility)
                .unwrap();
        assert_eq!(robust.rows.len(), nominal.rows.len());
        for _ in 0..200 {
            let u: Vec<f64> = (0..3).map(|i| p.nominal.u0[i] + rng.gen_range(-0.3..0.3)).collect();
            let zl: Vec<f64> = (0..3).map(|i| p.nominal.z0[i] - rng.gen_range(0.0..0.3)).collect();
            let zu: Vec<f64> = (0..3).map(|i| p.nominal.z0[i] + rng.gen_range(0.0..0.3)).collect();
            let a = nominal.reduced_row_values(&u, &zu, &zl, 0.0);
            let b = robust.reduced_row_values(&u, &zu, &zl, 0.0);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-13 * (1.0 + x.abs()));
            }
        }
    }
}

#[test]
fn support_coefficients_against_sampled_balls() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut two: f64 = 0.0;
        let mut inf: f64 = 0.0;
        for _ in 0..10_000 {
            let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dot: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
            inf = inf.max(dot);
            let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            two = two.max(dot / n);
        }
        let vertex: f64 = v.iter().map(|x| x.abs()).sum();
        assert!(NormKind::Two.support(&v) >= two - 1e-12);
        assert!(NormKind::Two.support(&v) - two < 0.05 * NormKind::Two.support(&v));
        assert!(NormKind::InfExact.support(&v) >= inf - 1e-12);
        assert!((NormKind::InfExact.support(&v) - vertex).abs() < 1e-12);
        // the tabulated coefficient never exceeds the exact one
        assert!(NormKind::InfTable.support(&v) <= NormKind::InfExact.support(&v) + 1e-15);
    }
}

#[test]
fn degenerate_intervals_match_nominal_program() {
    let p = catalog::netflow(5).unwrap();
    let nominal = restriction::build_nominal(&p.system, &p.nominal, Objective::Feasibility).unwrap();
    let bounds: Vec<(f64, f64)> = p.nominal.w0.iter().map(|&w| (w, w)).collect();
    let interval = restriction::build_robust_parametric(&p.system, &p.nominal, bounds, Objective::Feasibility).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = p.system.dims().q;
    for _ in 0..200 {
        let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let zl: Vec<f64> = (0..q).map(|_| rng.gen_range(-0.6..0.0)).collect();
        let zu: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..0.6)).collect();
        let a = nominal.reduced_row_values(&u, &zu, &zl, 0.0);
        let b = interval.reduced_row_values(&u, &zu, &zl, 0.0);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn netflow_restriction_shrinks_as_intervals_widen() {
    let p = catalog::netflow(5).unwrap();
    let progs: Vec<_> = [0.0, 0.1, 0.2]
        .iter()
        .map(|&h| {
            let bounds = vec![(1.0 - h, 1.0 + h); 5];
            restriction::build_robust_parametric(&p.system, &p.nominal, bounds, Objective::Feasibility).unwrap()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0usize; 3];
    for _ in 0..300 {
        let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let inside: Vec<bool> = progs.iter().map(|pr| pr.contains(&u, &opts()).unwrap()).collect();
        assert!(!inside[2] || inside[1], "{u:?}");
        assert!(!inside[1] || inside[0], "{u:?}");
        for (c, &i) in counts.iter_mut().zip(&inside) {
            *c += usize::from(i);
        }
    }
    assert!(counts[0] > counts[1] && counts[1] > counts[2], "{counts:?}");
    assert!(counts[2] > 0, "{counts:?}");
}

/// `x = u`, `x - 1 + w <= 0`: the margin at `x0` is `1 - x0`.
fn coupled_row(x0: f64) -> (DecomposedSystem, NominalPoint) {
    let basis = vec![
        BasisFunction::linear(AffineForm::z(0)),
        BasisFunction::linear(AffineForm::u(0)),
        BasisFunction::linear(AffineForm::constant(1.0)),
    ];
    let sys = DecomposedSystem::new(
        1,
        1,
        DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, -1.0]),
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        basis,
    )
    .unwrap();
    let pt = NominalPoint::at_zero_w(&sys, DVector::from_element(1, x0), DVector::from_element(1, x0)).unwrap();
    (sys, pt)
}

#[test]
fn margin_of_an_active_row_is_zero() {
    let (sys, pt) = coupled_row(1.0);
    let g = scrs::robustness_margin(&sys, &pt, NormKind::Two, &opts()).unwrap();
    assert!(g.abs() < 1e-7, "{g}");
    let (sys, pt) = coupled_row(0.25);
    let g = scrs::robustness_margin(&sys, &pt, NormKind::Two, &opts()).unwrap();
    assert!((g - 0.75).abs() < 1e-6, "{g}");
}

#[test]
fn margin_without_channels_is_infinite() {
    let p = catalog::quadratic().unwrap();
    assert!(matches!(
        restriction::build_margin(&p.system, &p.nominal, NormKind::Two),
        Err(Error::InfiniteMargin)
    ));
    assert!(matches!(
        scrs::robustness_margin(&p.system, &p.nominal, NormKind::Two, &opts()),
        Err(Error::InfiniteMargin)
    ));
}

#[test]
fn bad_uncertainty_is_rejected() {
    let p = catalog::park_poly(ParkStart::A).unwrap();
    assert!(matches!(
        restriction::build(
            &p.system,
            &p.nominal,
            &UncertaintyModel::Additive {
                norm: NormKind::Two,
                radius: Radius::Fixed(-0.1)
            },
            Objective::Feasibility
        ),
        Err(Error::NegativeRadius(_))
    ));
}

/// Random nonsingular point of the sphere system with `h <= 0`.
fn park_point(theta: f64, phi: f64, slack: f64) -> Option<NominalPoint> {
    let p = catalog::park_poly(ParkStart::A).unwrap();
    let x = [phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()];
    let u1 = x[0] * x[0];
    let u2 = x[1] * x[2];
    let u3 = x[0] * u1 - 2.0 * x[0] * u2 + x[1] + slack;
    let pt = NominalPoint::at_zero_w(&p.system, DVector::from_row_slice(&x), DVector::from_vec(vec![u1, u2, u3])).ok()?;
    (pt.jacobian_condition < 1e6).then_some(pt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn anchor_satisfies_its_own_restriction(theta in 0.0..6.28f64, phi in 0.1..3.0f64, slack in 0.0..1.0f64) {
        let Some(pt) = park_point(theta, phi, slack) else { return Ok(()) };
        let p = catalog::park_poly(ParkStart::A).unwrap();
        let prog = restriction::build_nominal(&p.system, &pt, Objective::Feasibility).unwrap();
        let z0 = pt.z0.as_slice();
        let rows = prog.reduced_row_values(pt.u0.as_slice(), z0, z0, 0.0);
        for v in rows {
            prop_assert!(v <= 1e-12, "row value {}", v);
        }
        prop_assert!(prog.contains(pt.u0.as_slice(), &opts()).unwrap());
    }

    #[test]
    fn certified_controls_have_a_root_in_the_box(u1 in -2.0..10.0f64, u2 in -4.0..6.0f64) {
        let p = catalog::quadratic().unwrap();
        let prog = restriction::build_nominal(&p.system, &p.nominal, Objective::Feasibility).unwrap();
        if prog.contains(&[u1, u2], &opts()).unwrap() {
            let disc = u1 * u1 - 4.0 * u2;
            prop_assert!(disc >= 0.0);
            let roots = [(-u1 + disc.sqrt()) / 2.0, (-u1 - disc.sqrt()) / 2.0];
            prop_assert!(roots.iter().any(|r| (-2.0..=2.0).contains(r)), "{:?}", roots);
        }
    }
}
