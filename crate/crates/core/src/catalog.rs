//! Built-in example problems.
//!
//! | name | system |
//! |---|---|
//! | `quadratic` | `x^2 + u1 x + u2 = 0`, `-2 <= x <= 2` |
//! | `disk` | `x = u`, `x1^2 + x2^2 <= 4` |
//! | `poly-chain(n,k)` | `x1 (x2 + .. + xn) + u1 = 0`, `xi + ui = 0`, `x1 (x2 + .. + xn) <= 10` |
//! | `park-poly[-b|-c]` | sphere-constrained polynomial program, three starting points |
//! | `netflow(N)` | sine flows on an `N`-node ring with uncertain line weights |
//!
//! Indices in the formulas above are 1-based; code indices are 0-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{AffineForm, BasisFunction, DecomposedSystem, LinearObjective, NominalPoint, Var};
use crate::problem::Problem;
use crate::restriction::UncertaintyModel;

pub const NAMES: &[&str] = &[
    "quadratic",
    "disk",
    "poly-chain(n,k)",
    "park-poly",
    "park-poly-b",
    "park-poly-c",
    "netflow(N)",
];

/// Look up a catalog entry by name, e.g. `poly-chain(10,3)` or `netflow(5)`.
pub fn get(name: &str) -> Result<Problem> {
    let name = name.trim();
    let (base, params) = match name.find('(') {
        Some(i) if name.ends_with(')') => {
            let inner = &name[i + 1..name.len() - 1];
            let ps = inner
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::UnknownCatalog(name.to_string()))?;
            (&name[..i], ps)
        }
        _ => (name, Vec::new()),
    };
    match (base, params.as_slice()) {
        ("quadratic", []) => quadratic(),
        ("disk", []) => disk(),
        ("poly-chain", []) => poly_chain(10, 10),
        ("poly-chain", [n, k]) => poly_chain(*n, *k),
        ("park-poly" | "park-poly-a", []) => park_poly(ParkStart::A),
        ("park-poly-b", []) => park_poly(ParkStart::B),
        ("park-poly-c", []) => park_poly(ParkStart::C),
        ("netflow", []) => netflow(5),
        ("netflow", [n]) => netflow(*n),
        _ => Err(Error::UnknownCatalog(name.to_string())),
    }
}

fn z(i: usize) -> AffineForm {
    AffineForm::z(i)
}

fn u(i: usize) -> AffineForm {
    AffineForm::u(i)
}

fn sparse(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for &(i, j, v) in entries {
        m[(i, j)] = v;
    }
    m
}

/// `x^2 + u1 x + u2 = 0` with `|x| <= 2`, nominal `(x, u) = (0, (4, 0))`.
pub fn quadratic() -> Result<Problem> {
    let basis = vec![
        BasisFunction::bilinear(z(0), z(0).plus(Var::U(0), 1.0)),
        BasisFunction::linear(u(1)),
        BasisFunction::linear(z(0).with_offset(-2.0)),
        BasisFunction::linear(AffineForm::new(vec![(Var::Z(0), -1.0)], -2.0)),
    ];
    let system = DecomposedSystem::nominal(
        2,
        sparse(1, 4, &[(0, 0, 1.0), (0, 1, 1.0)]),
        sparse(2, 4, &[(0, 2, 1.0), (1, 3, 1.0)]),
        DMatrix::identity(1, 1),
        basis,
    )?;
    let nominal = NominalPoint::at_zero_w(&system, DVector::from_vec(vec![0.0]), DVector::from_vec(vec![4.0, 0.0]))?;
    Ok(Problem {
        name: "quadratic".into(),
        system,
        nominal,
        uncertainty: UncertaintyModel::None,
        objective: LinearObjective::minimize(2, 1),
    })
}

/// Linear equalities `x = u` with the convex constraint `|x|_2^2 <= 4`.
pub fn disk() -> Result<Problem> {
    let basis = vec![
        BasisFunction::linear(z(0).plus(Var::U(0), -1.0)),
        BasisFunction::linear(z(1).plus(Var::U(1), -1.0)),
        BasisFunction::square(z(0)),
        BasisFunction::square(z(1)),
        BasisFunction::linear(AffineForm::constant(-4.0)),
    ];
    let system = DecomposedSystem::nominal(
        2,
        sparse(2, 5, &[(0, 0, 1.0), (1, 1, 1.0)]),
        sparse(1, 5, &[(0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0)]),
        DMatrix::identity(2, 2),
        basis,
    )?;
    let nominal = NominalPoint::at_zero_w(&system, DVector::zeros(2), DVector::zeros(2))?;
    Ok(Problem {
        name: "disk".into(),
        system,
        nominal,
        uncertainty: UncertaintyModel::None,
        objective: LinearObjective::new(DVector::from_vec(vec![1.0, 1.0])),
    })
}

/// Nominal implicit point of the chain problem: `x1 = x2 = 1`, `x_j = 0`
/// otherwise. The grouped sum then equals `x1` at every grouping, so the
/// grouped envelope with unit `rho` is tracked at two vertices.
pub const POLY_CHAIN_X1: f64 = 1.0;

/// Chain problem with the first `k - 1` products grouped into one basis
/// function `x1 (x2 + .. + xk)`; `k = 2` is fully decomposed.
pub fn poly_chain(n: usize, k: usize) -> Result<Problem> {
    if n < 2 || k < 2 || k > n {
        return Err(Error::UnknownCatalog(format!("poly-chain({n},{k}) needs 2 <= k <= n")));
    }
    let mut basis = Vec::new();
    let group = (1..k).fold(AffineForm::new(Vec::new(), 0.0), |a, i| a.plus(Var::Z(i), 1.0));
    basis.push(BasisFunction::bilinear(z(0), group));
    for j in k..n {
        basis.push(BasisFunction::bilinear(z(0), z(j)));
    }
    let nprod = basis.len();
    for i in 0..n {
        basis.push(BasisFunction::linear(z(i)));
    }
    for i in 0..n {
        basis.push(BasisFunction::linear(u(i)));
    }
    basis.push(BasisFunction::linear(AffineForm::constant(-10.0)));
    let p = basis.len();
    let (zoff, uoff) = (nprod, nprod + n);
    let mut m = DMatrix::zeros(n, p);
    let mut l = DMatrix::zeros(1, p);
    for j in 0..nprod {
        m[(0, j)] = 1.0;
        l[(0, j)] = 1.0;
    }
    l[(0, p - 1)] = 1.0;
    m[(0, uoff)] = 1.0;
    for i in 1..n {
        m[(i, zoff + i)] = 1.0;
        m[(i, uoff + i)] = 1.0;
    }
    let system = DecomposedSystem::nominal(n, m, l, DMatrix::identity(n, n), basis)?;
    let mut x0 = DVector::zeros(n);
    x0[0] = POLY_CHAIN_X1;
    x0[1] = POLY_CHAIN_X1;
    let mut u0 = -x0.clone();
    u0[0] = -POLY_CHAIN_X1 * x0.rows(1, n - 1).sum();
    let nominal = NominalPoint::at_zero_w(&system, x0, u0)?;
    Ok(Problem {
        name: format!("poly-chain({n},{k})"),
        system,
        nominal,
        uncertainty: UncertaintyModel::None,
        objective: LinearObjective::minimize(n, 0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParkStart {
    A,
    B,
    C,
}

impl ParkStart {
    pub fn x0(self) -> [f64; 3] {
        match self {
            ParkStart::A => [0.5, -0.866, 0.0],
            ParkStart::B => [-0.5, -0.866, 0.0],
            ParkStart::C => [0.5, 0.0, 0.866],
        }
    }
}

/// Minimize `u3` subject to
/// `x1^2 + x2^2 + x3^2 = 1`, `u1 - x1^2 + w1 = 0`, `u2 - x2 x3 + w2 = 0`,
/// `x1 u1 - 2 x1 u2 + x2 <= u3`, started at `u = (0.25, 0, 2)`.
pub fn park_poly(start: ParkStart) -> Result<Problem> {
    let basis = vec![
        BasisFunction::square(z(0)),
        BasisFunction::square(z(1)),
        BasisFunction::square(z(2)),
        BasisFunction::bilinear(z(1), z(2)),
        BasisFunction::bilinear(z(0), u(0).plus(Var::U(1), -2.0)),
        BasisFunction::linear(z(1).plus(Var::U(2), -1.0)),
        BasisFunction::linear(AffineForm::constant(-1.0)),
        BasisFunction::linear(u(0)),
        BasisFunction::linear(u(1)),
    ];
    let m = sparse(
        3,
        9,
        &[
            (0, 0, 1.0),
            (0, 1, 1.0),
            (0, 2, 1.0),
            (0, 6, 1.0),
            (1, 0, -1.0),
            (1, 7, 1.0),
            (2, 3, -1.0),
            (2, 8, 1.0),
        ],
    );
    let l = sparse(1, 9, &[(0, 4, 1.0), (0, 5, 1.0)]);
    let b = sparse(3, 2, &[(1, 0, 1.0), (2, 1, 1.0)]);
    let system = DecomposedSystem::new(3, 2, m, l, DMatrix::identity(3, 3), b, DMatrix::zeros(1, 2), basis)?;
    let nominal = NominalPoint::at_zero_w(
        &system,
        DVector::from_row_slice(&start.x0()),
        DVector::from_vec(vec![0.25, 0.0, 2.0]),
    )?;
    let suffix = match start {
        ParkStart::A => "",
        ParkStart::B => "-b",
        ParkStart::C => "-c",
    };
    Ok(Problem {
        name: format!("park-poly{suffix}"),
        system,
        nominal,
        uncertainty: UncertaintyModel::None,
        objective: LinearObjective::minimize(3, 2),
    })
}

/// Angle-difference limit on every line of the ring.
pub const NETFLOW_ANGLE_LIMIT: f64 = 0.6;

/// Ring `0 -> 1 -> .. -> N-1 -> 0` with flows `w_e sin(theta_i - theta_j)`.
///
/// Node 0 is the reference (`theta_0 = 0`) and its supply `b_0` balances the
/// network. `x = (theta_1 .. theta_{N-1}, b_0)`, `u = (b_1 .. b_{N-1})`,
/// `z = (E^T theta, b_0)`. Line weights `w` are uncertain around 1.
pub fn netflow(nodes: usize) -> Result<Problem> {
    if nodes < 3 {
        return Err(Error::UnknownCatalog(format!("netflow({nodes}) needs at least 3 nodes")));
    }
    let e = nodes;
    let n = nodes;
    let m = nodes - 1;
    let q = e + 1;
    let mut inc = DMatrix::zeros(nodes, e);
    for l in 0..e {
        inc[(l, l)] = 1.0;
        inc[(((l + 1) % nodes), l)] = -1.0;
    }
    let mut c = DMatrix::zeros(q, n);
    for l in 0..e {
        for j in 1..nodes {
            c[(l, j - 1)] = inc[(j, l)];
        }
    }
    c[(e, n - 1)] = 1.0;
    let mut basis = Vec::new();
    for l in 0..e {
        basis.push(BasisFunction::sin(z(l)).scaled_by_w(l));
    }
    basis.push(BasisFunction::linear(z(e)));
    for i in 0..m {
        basis.push(BasisFunction::linear(u(i)));
    }
    for l in 0..e {
        basis.push(BasisFunction::linear(z(l).with_offset(-NETFLOW_ANGLE_LIMIT)));
        basis.push(BasisFunction::linear(AffineForm::new(vec![(Var::Z(l), -1.0)], -NETFLOW_ANGLE_LIMIT)));
    }
    let p = basis.len();
    let mut mm = DMatrix::zeros(n, p);
    for i in 0..nodes {
        for l in 0..e {
            mm[(i, l)] = -inc[(i, l)];
        }
    }
    mm[(0, e)] = 1.0;
    for i in 0..m {
        mm[(i + 1, e + 1 + i)] = 1.0;
    }
    let s = 2 * e;
    let mut l = DMatrix::zeros(s, p);
    for j in 0..s {
        l[(j, e + 1 + m + j)] = 1.0;
    }
    let system = DecomposedSystem::new(m, e, mm, l, c, DMatrix::zeros(n, e), DMatrix::zeros(s, e), basis)?;
    let nominal = NominalPoint::new(&system, DVector::zeros(n), DVector::zeros(m), DVector::from_element(e, 1.0))?;
    Ok(Problem {
        name: format!("netflow({nodes})"),
        system,
        nominal,
        uncertainty: UncertaintyModel::None,
        objective: LinearObjective::minimize(m, 0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;

    #[test]
    fn every_entry_builds_with_consistent_nominal() {
        for name in ["quadratic", "disk", "poly-chain(10,4)", "park-poly", "park-poly-b", "park-poly-c", "netflow"] {
            let p = get(name).unwrap();
            let v = model::validate(&p.system, &p.nominal, 1e-4).unwrap();
            assert!(v.all_ok(), "{name}: {:?}", v.failures());
        }
    }

    #[test]
    fn unknown_names_fail() {
        for name in ["nope", "poly-chain(3)", "poly-chain(5,6)", "netflow(x)", "netflow(2)"] {
            assert!(matches!(get(name), Err(Error::UnknownCatalog(_))), "{name}");
        }
    }

    #[test]
    fn park_poly_matches_direct_expressions() {
        let p = get("park-poly").unwrap();
        let x = DVector::from_vec(vec![0.3, -0.4, 0.7]);
        let uu = DVector::from_vec(vec![0.2, -0.1, 1.5]);
        let w = DVector::from_vec(vec![0.01, -0.02]);
        let f = model::evaluate_f(&p.system, &x, &uu, &w).unwrap();
        let h = model::evaluate_h(&p.system, &x, &uu, &w).unwrap();
        let direct = [
            x[0] * x[0] + x[1] * x[1] + x[2] * x[2] - 1.0,
            uu[0] - x[0] * x[0] + w[0],
            uu[1] - x[1] * x[2] + w[1],
        ];
        for i in 0..3 {
            assert!((f[i] - direct[i]).abs() < 1e-15);
        }
        let hd = x[0] * uu[0] - 2.0 * x[0] * uu[1] + x[1] - uu[2];
        assert!((h[0] - hd).abs() < 1e-15);
    }

    #[test]
    fn netflow_conserves_flow() {
        let p = get("netflow(4)").unwrap();
        // theta = (0, 0.1, 0.2, -0.1), b0 chosen freely: the sum of f equals sum of supplies
        let x = DVector::from_vec(vec![0.1, 0.2, -0.1, 0.3]);
        let uu = DVector::from_vec(vec![0.5, -0.2, 0.1]);
        let f = model::evaluate_f(&p.system, &x, &uu, &p.nominal.w0).unwrap();
        assert!((f.sum() - (0.3 + 0.5 - 0.2 + 0.1)).abs() < 1e-14);
    }
}
