//! Convex programs with affine and convex-quadratic constraints.
//!
//! Programs are lowered to a conic form (zero, nonnegative and second-order
//! cones) and solved with the Clarabel interior-point method. Each PSD
//! quadratic constraint `a.x + c + x'Px <= 0` becomes the rotated cone
//! `||F x||^2 <= -(a.x + c)` with `P = F'F`.

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// `expr <= 0`
    Ineq,
    /// `expr = 0`, affine only
    Eq,
}

/// `x[vars]' * matrix * x[vars]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPart {
    pub vars: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl QuadraticPart {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v: Vec<f64> = self.vars.iter().map(|&j| x[j]).collect();
        let mut s = 0.0;
        for (a, va) in v.iter().enumerate() {
            for (b, vb) in v.iter().enumerate() {
                s += va * self.matrix[(a, b)] * vb;
            }
        }
        s
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (a, &ja) in self.vars.iter().enumerate() {
            let mut g = 0.0;
            for (b, &jb) in self.vars.iter().enumerate() {
                g += (self.matrix[(a, b)] + self.matrix[(b, a)]) * x[jb];
            }
            out[ja] += g;
        }
    }
}

/// `coeffs . x + constant [+ quad(x)]  (<= | =)  0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub coeffs: Vec<(usize, f64)>,
    pub constant: f64,
    pub quad: Option<QuadraticPart>,
}

impl Constraint {
    pub fn ineq(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Constraint {
            kind: ConstraintKind::Ineq,
            coeffs,
            constant,
            quad: None,
        }
    }

    pub fn eq(coeffs: Vec<(usize, f64)>, constant: f64) -> Self {
        Constraint {
            kind: ConstraintKind::Eq,
            coeffs,
            constant,
            quad: None,
        }
    }

    /// Add `kappa * (alpha . x + c)^2`, expanded into the quadratic, affine
    /// and constant parts. `kappa` must be nonnegative.
    pub fn add_square(&mut self, kappa: f64, alpha: &[(usize, f64)], c: f64) {
        if kappa == 0.0 || alpha.is_empty() {
            self.constant += kappa * c * c;
            return;
        }
        self.constant += kappa * c * c;
        for &(j, a) in alpha {
            self.coeffs.push((j, 2.0 * kappa * c * a));
        }
        let quad = self.quad.get_or_insert_with(|| QuadraticPart {
            vars: Vec::new(),
            matrix: DMatrix::zeros(0, 0),
        });
        let mut pos = Vec::with_capacity(alpha.len());
        for &(j, _) in alpha {
            let p = match quad.vars.iter().position(|&v| v == j) {
                Some(p) => p,
                None => {
                    quad.vars.push(j);
                    let k = quad.vars.len();
                    quad.matrix = quad.matrix.clone().resize(k, k, 0.0);
                    k - 1
                }
            };
            pos.push(p);
        }
        for (ia, &(_, a)) in alpha.iter().enumerate() {
            for (ib, &(_, b)) in alpha.iter().enumerate() {
                quad.matrix[(pos[ia], pos[ib])] += kappa * a * b;
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
        lin + self.constant + self.quad.as_ref().map_or(0.0, |q| q.eval(x))
    }

    /// Amount by which `x` violates this constraint.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.value(x);
        match self.kind {
            ConstraintKind::Ineq => v.max(0.0),
            ConstraintKind::Eq => v.abs(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for &(j, c) in &self.coeffs {
            g[j] += c;
        }
        if let Some(q) = &self.quad {
            q.gradient_into(x, &mut g);
        }
        g
    }
}

/// Minimize `objective . x + objective_constant` subject to constraints and bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvexProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_constant: f64,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConvexProgram {
    pub fn new(num_vars: usize) -> Self {
        ConvexProgram {
            num_vars,
            objective: vec![0.0; num_vars],
            objective_constant: 0.0,
            constraints: Vec::new(),
            lower: vec![f64::NEG_INFINITY; num_vars],
            upper: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() + self.objective_constant
    }

    /// Largest constraint or bound violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let cons = self.constraints.iter().map(|c| c.violation(x)).fold(0.0, f64::max);
        let bounds = (0..self.num_vars)
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        cons.max(bounds)
    }

    /// Check dimensions, finiteness and positive semidefiniteness.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        let bad = |m: String| Err(Error::InvalidProgram(m));
        if self.objective.len() != n || self.lower.len() != n || self.upper.len() != n {
            return bad("objective or bound length differs from variable count".into());
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return bad("non-finite objective coefficient".into());
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return bad(format!("invalid bounds on variable {j}"));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.constant.is_finite() {
                return bad(format!("constraint {i}: non-finite constant"));
            }
            for &(j, v) in &c.coeffs {
                if j >= n || !v.is_finite() {
                    return bad(format!("constraint {i}: bad coefficient on variable {j}"));
                }
            }
            if let Some(q) = &c.quad {
                if c.kind == ConstraintKind::Eq {
                    return bad(format!("constraint {i}: quadratic equality is not convex"));
                }
                let k = q.vars.len();
                if q.matrix.nrows() != k || q.matrix.ncols() != k {
                    return bad(format!("constraint {i}: quadratic matrix shape"));
                }
                if q.vars.iter().any(|&j| j >= n) || q.matrix.iter().any(|v| !v.is_finite()) {
                    return bad(format!("constraint {i}: quadratic part out of range"));
                }
                let sym = (&q.matrix + q.matrix.transpose()) * 0.5;
                let eig = sym.symmetric_eigenvalues();
                let scale = eig.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
                if eig.iter().any(|&l| l < -PSD_TOL * scale) {
                    return bad(format!("constraint {i}: quadratic part is not positive semidefinite"));
                }
            }
        }
        Ok(())
    }

    /// Sparse triplet text dump; see `docs/program-dump.md`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "program {} {}", self.num_vars, self.constraints.len());
        let _ = writeln!(s, "objective {:.17e}", self.objective_constant);
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = writeln!(s, "c {j} {c:.17e}");
            }
        }
        for j in 0..self.num_vars {
            if self.lower[j].is_finite() || self.upper[j].is_finite() {
                let _ = writeln!(s, "bound {j} {:.17e} {:.17e}", self.lower[j], self.upper[j]);
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            let kind = match c.kind {
                ConstraintKind::Ineq => "le",
                ConstraintKind::Eq => "eq",
            };
            let _ = writeln!(s, "con {i} {kind} {:.17e}", c.constant);
            for &(j, v) in &c.coeffs {
                let _ = writeln!(s, "a {j} {v:.17e}");
            }
            if let Some(q) = &c.quad {
                for (a, &ja) in q.vars.iter().enumerate() {
                    for (b, &jb) in q.vars.iter().enumerate() {
                        let v = q.matrix[(a, b)];
                        if v != 0.0 {
                            let _ = writeln!(s, "q {ja} {jb} {v:.17e}");
                        }
                    }
                }
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per constraint; nonnegative on inequalities.
    pub duals: Vec<f64>,
    pub max_violation: f64,
    pub iterations: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            max_iter: 200,
        }
    }
}

enum Block {
    Zero(usize),
    Nonneg(usize),
    Soc(usize),
}

/// Where each program constraint landed in the conic rows.
enum RowMap {
    Linear(usize),
    Soc(usize),
}

struct Lowered {
    rows: usize,
    ti: Vec<usize>,
    tj: Vec<usize>,
    tv: Vec<f64>,
    b: Vec<f64>,
    blocks: Vec<Block>,
    map: Vec<RowMap>,
}

impl Lowered {
    fn push(&mut self, coeffs: &[(usize, f64)], b: f64) -> usize {
        let r = self.rows;
        let mut merged: Vec<(usize, f64)> = coeffs.to_vec();
        merged.sort_by_key(|t| t.0);
        merged.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        for &(j, v) in &merged {
            if v != 0.0 {
                self.ti.push(r);
                self.tj.push(j);
                self.tv.push(v);
            }
        }
        self.b.push(b);
        self.rows += 1;
        r
    }
}

/// Rows `F` with `F'F = P` (symmetrized), dropping null directions.
fn psd_factor(q: &QuadraticPart) -> Vec<Vec<(usize, f64)>> {
    let sym = (&q.matrix + q.matrix.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut rows = Vec::new();
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l <= PSD_TOL * scale || l <= 0.0 {
            continue;
        }
        let s = l.sqrt();
        let row: Vec<(usize, f64)> = q
            .vars
            .iter()
            .enumerate()
            .map(|(a, &j)| (j, s * eig.eigenvectors[(a, k)]))
            .filter(|t| t.1 != 0.0)
            .collect();
        rows.push(row);
    }
    rows
}

fn lower(prog: &ConvexProgram) -> Lowered {
    let mut low = Lowered {
        rows: 0,
        ti: Vec::new(),
        tj: Vec::new(),
        tv: Vec::new(),
        b: Vec::new(),
        blocks: Vec::new(),
        map: Vec::with_capacity(prog.constraints.len()),
    };
    let mut map: Vec<Option<RowMap>> = (0..prog.constraints.len()).map(|_| None).collect();

    let eqs: Vec<usize> = (0..prog.constraints.len())
        .filter(|&i| prog.constraints[i].kind == ConstraintKind::Eq)
        .collect();
    for &i in &eqs {
        let c = &prog.constraints[i];
        map[i] = Some(RowMap::Linear(low.push(&c.coeffs, -c.constant)));
    }
    if !eqs.is_empty() {
        low.blocks.push(Block::Zero(eqs.len()));
    }

    let start = low.rows;
    let mut factors: Vec<(usize, Vec<Vec<(usize, f64)>>)> = Vec::new();
    for (i, c) in prog.constraints.iter().enumerate() {
        if c.kind != ConstraintKind::Ineq {
            continue;
        }
        let f = c.quad.as_ref().map(psd_factor).unwrap_or_default();
        if f.is_empty() {
            // a zero quadratic part contributes nothing
            map[i] = Some(RowMap::Linear(low.push(&c.coeffs, -c.constant)));
        } else {
            factors.push((i, f));
        }
    }
    for j in 0..prog.num_vars {
        if prog.upper[j].is_finite() {
            low.push(&[(j, 1.0)], prog.upper[j]);
        }
        if prog.lower[j].is_finite() {
            low.push(&[(j, -1.0)], -prog.lower[j]);
        }
    }
    if low.rows > start {
        low.blocks.push(Block::Nonneg(low.rows - start));
    }

    for (i, f) in factors {
        let c = &prog.constraints[i];
        let first = low.push(&c.coeffs, 1.0 - c.constant);
        low.push(&c.coeffs, -1.0 - c.constant);
        for row in &f {
            let scaled: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (j, -2.0 * v)).collect();
            low.push(&scaled, 0.0);
        }
        low.blocks.push(Block::Soc(2 + f.len()));
        map[i] = Some(RowMap::Soc(first));
    }
    low.map = map.into_iter().map(|m| m.expect("every constraint lowered")).collect();
    low
}

fn run(prog: &ConvexProgram, opts: &SolveOptions) -> Result<(Status, Vec<f64>, Vec<f64>, u32)> {
    let n = prog.num_vars;
    let low = lower(prog);
    let a = CscMatrix::new_from_triplets(low.rows, n, low.ti.clone(), low.tj.clone(), low.tv.clone());
    let p = CscMatrix::zeros((n, n));
    let cones: Vec<SupportedConeT<f64>> = low
        .blocks
        .iter()
        .map(|b| match *b {
            Block::Zero(k) => SupportedConeT::ZeroConeT(k),
            Block::Nonneg(k) => SupportedConeT::NonnegativeConeT(k),
            Block::Soc(k) => SupportedConeT::SecondOrderConeT(k),
        })
        .collect();
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_feas(0.1 * opts.feas_tol)
        .tol_gap_abs(opts.opt_tol)
        .tol_gap_rel(opts.opt_tol)
        .presolve_enable(false)
        .build()
        .map_err(|e| Error::InvalidOption(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &prog.objective, &a, &low.b, &cones, settings)
        .map_err(|e| Error::InvalidProgram(format!("{e:?}")))?;
    solver.solve();
    let sol = &solver.solution;
    let duals = low
        .map
        .iter()
        .map(|m| match *m {
            RowMap::Linear(r) => sol.z[r],
            RowMap::Soc(r) => sol.z[r] + sol.z[r + 1],
        })
        .collect();
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Status::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
        SolverStatus::MaxIterations => Status::MaxIter,
        _ => Status::NumericalFailure,
    };
    Ok((status, sol.x.clone(), duals, sol.iterations))
}

/// Solve `prog`. Solver failures are reported through [`Status`]; only a
/// malformed program is an error.
pub fn solve(prog: &ConvexProgram, opts: &SolveOptions) -> Result<Solution> {
    prog.validate()?;
    let (mut status, x, duals, iterations) = run(prog, opts)?;
    let max_violation = prog.max_violation(&x);
    if status == Status::Optimal && max_violation > opts.feas_tol {
        status = Status::NumericalFailure;
    }
    Ok(Solution {
        status,
        objective: prog.objective_value(&x),
        x,
        duals,
        max_violation,
        iterations,
    })
}

/// Phase-1 membership test: minimize `s` subject to every inequality and
/// bound relaxed by `s`, with `s >= -1`. `Optimal` iff `s* <= feas_tol`.
pub fn solve_feasibility(prog: &ConvexProgram, opts: &SolveOptions) -> Result<Solution> {
    prog.validate()?;
    let n = prog.num_vars;
    let s = n;
    let mut p1 = ConvexProgram::new(n + 1);
    p1.objective[s] = 1.0;
    p1.lower[s] = -1.0;
    for c in &prog.constraints {
        let mut c = c.clone();
        if c.kind == ConstraintKind::Ineq {
            c.coeffs.push((s, -1.0));
        }
        p1.constraints.push(c);
    }
    for j in 0..n {
        if prog.upper[j].is_finite() {
            p1.constraints.push(Constraint::ineq(vec![(j, 1.0), (s, -1.0)], -prog.upper[j]));
        }
        if prog.lower[j].is_finite() {
            p1.constraints.push(Constraint::ineq(vec![(j, -1.0), (s, -1.0)], prog.lower[j]));
        }
    }
    let (status, mut x, duals, iterations) = run(&p1, opts)?;
    let sigma = x.get(s).copied().unwrap_or(f64::NAN);
    x.truncate(n);
    let max_violation = prog.max_violation(&x);
    let status = match status {
        Status::Optimal if sigma <= opts.feas_tol && max_violation <= opts.feas_tol => Status::Optimal,
        Status::Optimal if sigma > opts.feas_tol => Status::Infeasible,
        Status::Optimal => Status::NumericalFailure,
        other => other,
    };
    Ok(Solution {
        status,
        objective: prog.objective_value(&x),
        x,
        duals: duals[..prog.constraints.len()].to_vec(),
        max_violation,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_vertex() {
        // min u2 s.t. u1^2 - u2 <= 0
        let mut p = ConvexProgram::new(2);
        p.objective[1] = 1.0;
        let mut c = Constraint::ineq(vec![(1, -1.0)], 0.0);
        c.add_square(1.0, &[(0, 1.0)], 0.0);
        p.constraints.push(c);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!(s.x[0].abs() < 1e-4 && s.x[1].abs() < 1e-7, "{:?}", s.x);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = ConvexProgram::new(1);
        p.constraints.push(Constraint::ineq(vec![(0, 1.0)], 0.0));
        p.constraints.push(Constraint::ineq(vec![(0, -1.0)], 1.0));
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Infeasible);
        assert_eq!(solve_feasibility(&p, &SolveOptions::default()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn unbounded_is_detected() {
        let mut p = ConvexProgram::new(1);
        p.objective[0] = -1.0;
        p.constraints.push(Constraint::ineq(vec![(0, -1.0)], 0.0));
        assert_eq!(solve(&p, &SolveOptions::default()).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn non_psd_rejected() {
        let mut p = ConvexProgram::new(1);
        let mut c = Constraint::ineq(vec![], 0.0);
        c.quad = Some(QuadraticPart {
            vars: vec![0],
            matrix: DMatrix::from_element(1, 1, -1.0),
        });
        p.constraints.push(c);
        assert!(matches!(p.validate(), Err(Error::InvalidProgram(_))));
    }

    #[test]
    fn quadratic_dual_matches_gradient() {
        // min -x s.t. x^2 - 1 <= 0: x* = 1, multiplier 1/2
        let mut p = ConvexProgram::new(1);
        p.objective[0] = -1.0;
        let mut c = Constraint::ineq(vec![], -1.0);
        c.add_square(1.0, &[(0, 1.0)], 0.0);
        p.constraints.push(c);
        let s = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-7);
        assert!((s.duals[0] - 0.5).abs() < 1e-6, "{}", s.duals[0]);
    }

    #[test]
    fn feasibility_of_interior_point() {
        let mut p = ConvexProgram::new(2);
        let mut c = Constraint::ineq(vec![], -1.0);
        c.add_square(1.0, &[(0, 1.0)], 0.0);
        c.add_square(1.0, &[(1, 1.0)], -0.5);
        p.constraints.push(c);
        let s = solve_feasibility(&p, &SolveOptions::default()).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!(p.max_violation(&s.x) <= 1e-8);
    }

    #[test]
    fn dump_lists_triplets() {
        let mut p = ConvexProgram::new(2);
        p.objective[1] = 1.0;
        let mut c = Constraint::ineq(vec![(1, -1.0)], 0.0);
        c.add_square(1.0, &[(0, 1.0)], 0.0);
        p.constraints.push(c);
        let d = p.dump();
        assert!(d.starts_with("program 2 1\n"));
        assert!(d.contains("\nq 0 0 1.00000000000000000e0\n"));
    }
}
