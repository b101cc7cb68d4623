//! Sequential convex restriction: solve the restriction anchored at the
//! current point, retrieve the implicit variables, re-anchor, repeat.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::{SolveOptions, Status};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, DecomposedSystem, LinearObjective, NominalPoint};
use crate::restriction::{self, NormKind, Objective, RestrictionProgram, RowKind, UncertaintyModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Chord iteration `x <- x - (M Lambda C)^{-1} f(x)` with `Lambda` fixed.
    Picard,
    /// Newton with the Jacobian refreshed every step.
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScrsOptions {
    /// Step tolerance on `||u^{k+1} - u^k||_2`.
    pub eps1: f64,
    /// Objective-change tolerance.
    pub eps2: f64,
    /// Retrieval residual tolerance on `||f||_2`.
    pub eps3: f64,
    pub max_outer: usize,
    pub max_picard: usize,
    pub retrieval: RetrievalMode,
    /// Step halvings tried when retrieval fails.
    pub max_halvings: usize,
    /// Above this condition number of `M Lambda C` a stalled or failed run is
    /// reported as a singular limit.
    pub boundary_condition: f64,
    /// Subproblem tolerances. Near a fixed point the achievable decrease is
    /// second order in the step, so the gap tolerance is far below `eps2`.
    pub solver: SolveOptions,
}

impl Default for ScrsOptions {
    fn default() -> Self {
        ScrsOptions {
            eps1: 1e-6,
            eps2: 1e-8,
            eps3: 1e-9,
            max_outer: 100,
            max_picard: 500,
            retrieval: RetrievalMode::Picard,
            max_halvings: 5,
            boundary_condition: 1e5,
            solver: SolveOptions {
                feas_tol: 1e-7,
                opt_tol: 1e-12,
                max_iter: 200,
            },
        }
    }
}

impl ScrsOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("eps3", self.eps3),
            ("boundary_condition", self.boundary_condition),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidOption(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_outer == 0 || self.max_picard == 0 {
            return Err(Error::InvalidOption("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub mode: RetrievalMode,
    /// Iterates including the start, when recorded.
    pub trajectory: Vec<DVector<f64>>,
}

fn residual_norm(sys: &DecomposedSystem, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    let f = model::evaluate_f(sys, x, u, w)?;
    Ok(if f.iter().all(|v| v.is_finite()) { f.norm() } else { f64::NAN })
}

fn iterate(
    sys: &DecomposedSystem,
    u: &DVector<f64>,
    w: &DVector<f64>,
    x_init: &DVector<f64>,
    chord: Option<&nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    opts: &ScrsOptions,
    record: bool,
) -> Result<std::result::Result<Retrieval, (usize, f64)>> {
    let mode = if chord.is_some() { RetrievalMode::Picard } else { RetrievalMode::Newton };
    let mut x = x_init.clone();
    let mut trajectory = if record { vec![x.clone()] } else { Vec::new() };
    let r0 = residual_norm(sys, &x, u, w)?;
    if r0 <= opts.eps3 {
        return Ok(Ok(Retrieval { x, iterations: 0, residual: r0, mode, trajectory }));
    }
    let limit = 10.0 * r0.max(opts.eps3);
    let mut r = r0;
    for it in 1..=opts.max_picard {
        let f = model::evaluate_f(sys, &x, u, w)?;
        let step = match chord {
            Some(lu) => lu.solve(&f),
            None => {
                let jx = model::constraint_jacobians(sys, &x, u, w)?.f_x;
                jx.lu().solve(&f)
            }
        };
        let Some(step) = step else { return Ok(Err((it, r))) };
        x -= step;
        if record {
            trajectory.push(x.clone());
        }
        r = residual_norm(sys, &x, u, w)?;
        if !r.is_finite() || r > limit {
            return Ok(Err((it, r)));
        }
        if r <= opts.eps3 {
            return Ok(Ok(Retrieval { x, iterations: it, residual: r, mode, trajectory }));
        }
    }
    Ok(Err((opts.max_picard, r)))
}

/// Retrieve `x` with `f(x, u, w) = 0` starting from `x_init`, using `Lambda`
/// taken at `(C x_init, u, w)` for the Picard chord.
pub fn retrieve_implicit(
    sys: &DecomposedSystem,
    u: &DVector<f64>,
    w: &DVector<f64>,
    x_init: &DVector<f64>,
    opts: &ScrsOptions,
) -> Result<Retrieval> {
    let z = sys.transform(x_init);
    let lambda = model::jacobian_z(sys, &z, u, w)?;
    retrieve_with_lambda(sys, &lambda, u, w, x_init, opts, false)
}

/// Retrieval with a caller-supplied `Lambda` (the anchor of a restriction).
/// Picard mode falls back to Newton once on divergence or stall.
pub fn retrieve_with_lambda(
    sys: &DecomposedSystem,
    lambda: &DMatrix<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    x_init: &DVector<f64>,
    opts: &ScrsOptions,
    record: bool,
) -> Result<Retrieval> {
    sys.check_xuw(x_init, u, w)?;
    let first = match opts.retrieval {
        RetrievalMode::Picard => {
            let jac = &sys.m_mat * lambda * &sys.c_mat;
            if linalg::condition_number(&jac) > model::SINGULAR_CONDITION {
                Err((0, f64::NAN))
            } else {
                let lu = jac.lu();
                iterate(sys, u, w, x_init, Some(&lu), opts, record)?
            }
        }
        RetrievalMode::Newton => iterate(sys, u, w, x_init, None, opts, record)?,
    };
    match first {
        Ok(r) => Ok(r),
        Err((iterations, residual)) if opts.retrieval == RetrievalMode::Newton => {
            Err(Error::RetrievalFailed { iterations, residual })
        }
        Err((it0, _)) => match iterate(sys, u, w, x_init, None, opts, record)? {
            Ok(mut r) => {
                r.iterations += it0;
                Ok(r)
            }
            Err((iterations, residual)) => Err(Error::RetrievalFailed {
                iterations: iterations + it0,
                residual,
            }),
        },
    }
}

/// Raw chord iterates `x <- x - (M Lambda C)^{-1} f(x)` from `x_init`, at most
/// `steps` of them, stopping early once `||f|| <= eps3`. No divergence check.
pub fn picard_trajectory(
    sys: &DecomposedSystem,
    lambda: &DMatrix<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    x_init: &DVector<f64>,
    steps: usize,
    eps3: f64,
) -> Result<Vec<DVector<f64>>> {
    sys.check_xuw(x_init, u, w)?;
    let jac = &sys.m_mat * lambda * &sys.c_mat;
    let condition = linalg::condition_number(&jac);
    if condition > model::SINGULAR_CONDITION {
        return Err(Error::SingularJacobian { condition });
    }
    let lu = jac.lu();
    let mut x = x_init.clone();
    let mut out = vec![x.clone()];
    for _ in 0..steps {
        let f = model::evaluate_f(sys, &x, u, w)?;
        if f.norm() <= eps3 || !f.iter().all(|v| v.is_finite()) {
            break;
        }
        x -= lu.solve(&f).ok_or(Error::SingularJacobian { condition })?;
        out.push(x.clone());
    }
    Ok(out)
}

/// Stationarity, complementarity, dual and primal feasibility of the
/// fixed-point-form problem at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub complementarity: f64,
    pub dual_infeasibility: f64,
    pub primal_infeasibility: f64,
    pub residual: f64,
}

/// KKT residual at `pt` with solvability multipliers `lambda_upper`
/// (rows bounding `z^u`), `lambda_lower` (rows bounding `-z^l`) and
/// inequality multipliers `mu`.
pub fn kkt_from_duals(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    objective: &LinearObjective,
    lambda_upper: &[f64],
    lambda_lower: &[f64],
    mu: &[f64],
) -> Result<KktReport> {
    let d = sys.dims();
    if lambda_upper.len() != d.q || lambda_lower.len() != d.q {
        return Err(Error::dims("solvability multipliers", d.q, lambda_upper.len().min(lambda_lower.len())));
    }
    if mu.len() != d.s {
        return Err(Error::dims("inequality multipliers", d.s, mu.len()));
    }
    if objective.coefficients.len() != d.m {
        return Err(Error::dims("objective", d.m, objective.coefficients.len()));
    }
    let jz = model::jacobian_z(sys, &pt.z0, &pt.u0, &pt.w0)?;
    let jac = &sys.m_mat * jz * &sys.c_mat;
    let condition = linalg::condition_number(&jac);
    if condition > model::SINGULAR_CONDITION {
        return Err(Error::SingularJacobian { condition });
    }
    let jinv = jac.try_inverse().ok_or(Error::SingularJacobian { condition })?;
    let cj = model::constraint_jacobians(sys, &pt.x0, &pt.u0, &pt.w0)?;
    let diff = DVector::from_iterator(d.q, lambda_lower.iter().zip(lambda_upper).map(|(a, b)| a - b));
    let nu = sys.c_mat.transpose() * diff;
    let mu_v = DVector::from_column_slice(mu);
    let st_x = &nu + cj.h_x.transpose() * &mu_v;
    let st_u = &objective.coefficients + (jinv * &cj.f_u).transpose() * &nu + cj.h_u.transpose() * &mu_v;
    let stationarity = (st_x.norm_squared() + st_u.norm_squared()).sqrt();

    let h = model::evaluate_h(sys, &pt.x0, &pt.u0, &pt.w0)?;
    let f = model::evaluate_f(sys, &pt.x0, &pt.u0, &pt.w0)?;
    let complementarity = h.iter().zip(mu).fold(0.0_f64, |a, (hj, mj)| a.max((hj * mj).abs()));
    let dual_infeasibility = lambda_upper
        .iter()
        .chain(lambda_lower)
        .chain(mu)
        .fold(0.0_f64, |a, &v| a.max(-v));
    let primal_infeasibility = h.iter().fold(f.norm(), |a, &v| a.max(v));
    let residual = stationarity.max(complementarity).max(dual_infeasibility).max(primal_infeasibility);
    Ok(KktReport {
        stationarity,
        complementarity,
        dual_infeasibility,
        primal_infeasibility,
        residual,
    })
}

fn split_duals(prog: &RestrictionProgram, row_duals: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let q = prog.q();
    let mut up = vec![0.0; q];
    let mut lo = vec![0.0; q];
    let mut mu = vec![0.0; prog.dims.s];
    for (row, &d) in prog.rows.iter().zip(row_duals) {
        match row.kind {
            RowKind::Solvability(i) if i < q => up[i] += d,
            RowKind::Solvability(i) => lo[i - q] += d,
            RowKind::Inequality(j) => mu[j] += d,
        }
    }
    (up, lo, mu)
}

/// KKT residual at `pt` using multipliers of the nominal restriction
/// anchored at `pt` itself.
pub fn kkt_residual(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    objective: &LinearObjective,
    solver: &SolveOptions,
) -> Result<KktReport> {
    let prog = restriction::build_nominal(sys, pt, Objective::Minimize(objective.coefficients.clone()))?;
    let sol = prog.solve(None, solver)?;
    if sol.status != Status::Optimal {
        return Err(Error::Subproblem(format!("anchored restriction ended with status {:?}", sol.status)));
    }
    let (up, lo, mu) = split_duals(&prog, &sol.row_duals);
    kkt_from_duals(sys, pt, objective, &up, &lo, &mu)
}

/// Largest uncertainty radius certified at `pt` with `u = u0` fixed.
pub fn robustness_margin(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    norm: NormKind,
    solver: &SolveOptions,
) -> Result<f64> {
    let prog = restriction::build_margin(sys, pt, norm)?;
    let sol = prog.solve(Some(pt.u0.as_slice()), solver)?;
    match sol.status {
        Status::Optimal => Ok(sol.gamma.unwrap_or(0.0).max(0.0)),
        Status::Unbounded => Err(Error::InfiniteMargin),
        s => Err(Error::Subproblem(format!("margin program ended with status {s:?}"))),
    }
}

/// `f0(u*_robust) - f0(u*_nominal)`. The nominal value is the optimum found
/// by the solver, not a certified global optimum.
pub fn optimality_gap_bound(robust: &SolveReport, nominal: &SolveReport) -> f64 {
    robust.final_objective() - nominal.final_objective()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxOuter,
    SubproblemFailed,
    RetrievalFailed,
    SingularAtLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub index: usize,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Status of the subproblem that produced this iterate.
    pub subproblem_status: Option<Status>,
    pub retrieval_iterations: usize,
    pub step_norm: f64,
    /// Fraction of the subproblem step taken after halving.
    pub step_fraction: f64,
    pub jacobian_condition: f64,
    /// KKT residual with the producing subproblem's multipliers.
    pub kkt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterates: Vec<Iterate>,
    pub termination: Termination,
    pub kkt_residual: Option<f64>,
    pub margin: Option<f64>,
    pub gap_bound: Option<f64>,
    pub message: Option<String>,
}

impl SolveReport {
    pub fn last(&self) -> &Iterate {
        self.iterates.last().expect("report has the initial iterate")
    }

    pub fn final_u(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.last().u)
    }

    pub fn final_x(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.last().x)
    }

    pub fn final_objective(&self) -> f64 {
        self.last().objective
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.iterates.iter().map(|i| i.objective).collect()
    }

    /// Largest increase between consecutive objectives.
    pub fn max_increase(&self) -> f64 {
        self.iterates
            .windows(2)
            .map(|w| w[1].objective - w[0].objective)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `iter,objective,step_norm,kkt` with 17 significant digits.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,objective,step_norm,kkt\n");
        for it in &self.iterates {
            let kkt = it.kkt.map_or_else(|| "NA".to_string(), |v| format!("{v:.16e}"));
            out.push_str(&format!("{},{:.16e},{:.16e},{}\n", it.index, it.objective, it.step_norm, kkt));
        }
        out
    }
}

fn point(sys: &DecomposedSystem, x: DVector<f64>, u: DVector<f64>, w: DVector<f64>) -> Result<NominalPoint> {
    NominalPoint::new(sys, x, u, w)
}

/// Run the sequential convex restriction from `pt`.
pub fn run_scrs(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    unc: &UncertaintyModel,
    objective: &LinearObjective,
    opts: &ScrsOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    let report = model::validate(sys, pt, opts.eps3)?;
    if !report.rank_ok {
        return Err(Error::Validation(format!(
            "C has rank {} but n = {}",
            report.rank_c,
            sys.dims().n
        )));
    }
    if objective.coefficients.len() != sys.dims().m {
        return Err(Error::dims("objective", sys.dims().m, objective.coefficients.len()));
    }
    let robust = !matches!(unc, UncertaintyModel::None);

    // polish the starting point onto f = 0
    let mut cur = if pt.eq_residual > opts.eps3 {
        let newton = ScrsOptions { retrieval: RetrievalMode::Newton, ..*opts };
        match retrieve_implicit(sys, &pt.u0, &pt.w0, &pt.x0, &newton) {
            Ok(r) => point(sys, r.x, pt.u0.clone(), pt.w0.clone())?,
            Err(e) => {
                return Ok(SolveReport {
                    iterates: vec![initial_iterate(pt, objective, 0)],
                    termination: Termination::RetrievalFailed,
                    kkt_residual: None,
                    margin: None,
                    gap_bound: None,
                    message: Some(format!("initial point: {e}")),
                })
            }
        }
    } else {
        pt.clone()
    };
    let mut iterates = vec![initial_iterate(&cur, objective, 0)];
    let mut termination = Termination::MaxOuter;
    let mut message = None;

    for k in 0..opts.max_outer {
        let prog = match restriction::build(sys, &cur, unc, Objective::Minimize(objective.coefficients.clone())) {
            Ok(p) => p,
            Err(Error::SingularJacobian { condition }) => {
                termination = Termination::SingularAtLimit;
                message = Some(format!("M Lambda C singular at iterate {k} (condition {condition:e})"));
                break;
            }
            Err(e) => return Err(e),
        };
        let sol = match prog.solve(None, &opts.solver) {
            Ok(s) if s.status == Status::Optimal => s,
            Ok(s) => {
                termination = Termination::SubproblemFailed;
                message = Some(format!("subproblem {k} ended with status {:?}", s.status));
                break;
            }
            Err(e) => {
                termination = Termination::SubproblemFailed;
                message = Some(format!("subproblem {k}: {e}"));
                break;
            }
        };
        let lambda = &prog.kdata.lambda;
        let mut t = 1.0;
        let mut u_next = sol.u.clone();
        let mut found = None;
        for h in 0..=opts.max_halvings {
            if h > 0 {
                t *= 0.5;
                u_next = &cur.u0 + (&sol.u - &cur.u0) * t;
                if !prog.contains(u_next.as_slice(), &opts.solver)? {
                    continue;
                }
            }
            if let Ok(r) = retrieve_with_lambda(sys, lambda, &u_next, &cur.w0, &cur.x0, opts, false) {
                found = Some(r);
                break;
            }
        }
        let Some(ret) = found else {
            termination = Termination::RetrievalFailed;
            message = Some(format!("no retrievable x after {} halvings at iterate {}", opts.max_halvings, k + 1));
            break;
        };
        let next = point(sys, ret.x, u_next, cur.w0.clone())?;
        // the anchor is feasible in its own nominal restriction, so a rise is solver noise
        let rise = objective.value(&next.u0) - objective.value(&cur.u0);
        if !robust && rise > 0.0 {
            if rise <= opts.eps2 {
                termination = Termination::Converged;
            } else {
                termination = Termination::SubproblemFailed;
                message = Some(format!("subproblem {k} raised the objective by {rise:e}"));
            }
            break;
        }
        let kkt = if robust {
            None
        } else {
            let (up, lo, mu) = split_duals(&prog, &sol.row_duals);
            kkt_from_duals(sys, &next, objective, &up, &lo, &mu).ok().map(|r| r.residual)
        };
        let step_norm = linalg::dist2(&next.u0, &cur.u0);
        let f_prev = objective.value(&cur.u0);
        let f_next = objective.value(&next.u0);
        iterates.push(Iterate {
            index: k + 1,
            u: next.u0.iter().copied().collect(),
            x: next.x0.iter().copied().collect(),
            objective: f_next,
            subproblem_status: Some(sol.status),
            retrieval_iterations: ret.iterations,
            step_norm,
            step_fraction: t,
            jacobian_condition: next.jacobian_condition,
            kkt,
        });
        cur = next;
        if step_norm <= opts.eps1 && (f_next - f_prev).abs() <= opts.eps2 {
            termination = Termination::Converged;
            break;
        }
    }

    if termination != Termination::SingularAtLimit && cur.jacobian_condition > opts.boundary_condition
    {
        message = Some(format!(
            "terminal point at the solvability boundary (condition {:e})",
            cur.jacobian_condition
        ));
        termination = Termination::SingularAtLimit;
    }

    let kkt_residual = if !robust && termination == Termination::Converged {
        kkt_residual(sys, &cur, objective, &opts.solver).ok().map(|r| r.residual)
    } else {
        None
    };
    let margin = match unc {
        UncertaintyModel::Additive { norm, .. } if termination == Termination::Converged => {
            match robustness_margin(sys, &cur, *norm, &opts.solver) {
                Ok(g) => Some(g),
                Err(Error::InfiniteMargin) => Some(f64::INFINITY),
                Err(_) => None,
            }
        }
        _ => None,
    };
    Ok(SolveReport {
        iterates,
        termination,
        kkt_residual,
        margin,
        gap_bound: None,
        message,
    })
}

fn initial_iterate(pt: &NominalPoint, objective: &LinearObjective, index: usize) -> Iterate {
    Iterate {
        index,
        u: pt.u0.iter().copied().collect(),
        x: pt.x0.iter().copied().collect(),
        objective: objective.value(&pt.u0),
        subproblem_status: None,
        retrieval_iterations: 0,
        step_norm: 0.0,
        step_fraction: 0.0,
        jacobian_condition: pt.jacobian_condition,
        kkt: None,
    }
}

/// Points on the boundary of the uncertainty set around `w0`.
pub fn sample_uncertainty_surface(
    w0: &DVector<f64>,
    norm: NormKind,
    gamma: f64,
    count: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let r = w0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            if r == 0 {
                return w0.clone();
            }
            let dir = match norm {
                NormKind::Two => {
                    let g = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let n = g.norm();
                    if n == 0.0 {
                        let mut e = DVector::zeros(r);
                        e[0] = 1.0;
                        e
                    } else {
                        g / n
                    }
                }
                NormKind::InfTable | NormKind::InfExact => {
                    let mut v = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..=1.0));
                    let face = rng.gen_range(0..r);
                    v[face] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    v
                }
            };
            w0 + dir * gamma
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustCheck {
    pub samples: usize,
    pub passed: usize,
    pub worst_residual: f64,
    pub worst_violation: f64,
}

/// Newton-retrieve `x` for sampled `w` on the uncertainty surface and check
/// `||f|| <= tol`, `h <= tol`.
#[allow(clippy::too_many_arguments)]
pub fn verify_robust_samples(
    sys: &DecomposedSystem,
    u: &DVector<f64>,
    x_init: &DVector<f64>,
    w0: &DVector<f64>,
    norm: NormKind,
    gamma: f64,
    count: usize,
    seed: u64,
    tol: f64,
) -> Result<RobustCheck> {
    let samples = sample_uncertainty_surface(w0, norm, gamma, count, seed);
    let opts = ScrsOptions {
        retrieval: RetrievalMode::Newton,
        eps3: tol.min(1e-9),
        max_picard: 100,
        ..ScrsOptions::default()
    };
    let results: Vec<(bool, f64, f64)> = samples
        .par_iter()
        .map(|w| -> Result<(bool, f64, f64)> {
            match retrieve_implicit(sys, u, w, x_init, &opts) {
                Ok(r) => {
                    let h = model::evaluate_h(sys, &r.x, u, w)?;
                    let hv = h.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                    Ok((r.residual <= tol && hv <= tol, r.residual, hv))
                }
                Err(Error::RetrievalFailed { residual, .. }) => Ok((false, residual, f64::NAN)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(RobustCheck {
        samples: count,
        passed: results.iter().filter(|r| r.0).count(),
        worst_residual: results.iter().fold(0.0_f64, |a, r| a.max(r.1)),
        worst_violation: results.iter().fold(f64::NEG_INFINITY, |a, r| a.max(r.2)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AffineForm, BasisFunction, Var};
    use nalgebra::{dmatrix, dvector};

    fn quadratic() -> (DecomposedSystem, NominalPoint) {
        let basis = vec![
            BasisFunction::bilinear(AffineForm::z(0), AffineForm::z(0).plus(Var::U(0), 1.0)),
            BasisFunction::linear(AffineForm::u(1)),
            BasisFunction::linear(AffineForm::z(0).with_offset(-2.0)),
            BasisFunction::linear(AffineForm::new(vec![(Var::Z(0), -1.0)], -2.0)),
        ];
        let sys = DecomposedSystem::nominal(
            2,
            dmatrix![1.0, 1.0, 0.0, 0.0],
            dmatrix![0.0, 0.0, 1.0, 0.0; 0.0, 0.0, 0.0, 1.0],
            dmatrix![1.0],
            basis,
        )
        .unwrap();
        let pt = NominalPoint::at_zero_w(&sys, dvector![0.0], dvector![4.0, 0.0]).unwrap();
        (sys, pt)
    }

    #[test]
    fn retrieval_at_nominal_is_immediate() {
        let (sys, pt) = quadratic();
        let r = retrieve_implicit(&sys, &pt.u0, &pt.w0, &pt.x0, &ScrsOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.x, pt.x0);
    }

    #[test]
    fn picard_finds_root_of_x2_4x_1() {
        let (sys, pt) = quadratic();
        let u = dvector![4.0, 1.0];
        let r = retrieve_implicit(&sys, &u, &pt.w0, &pt.x0, &ScrsOptions::default()).unwrap();
        assert_eq!(r.mode, RetrievalMode::Picard);
        assert!((r.x[0] - (-2.0 + 3f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn retrieval_without_root_fails() {
        let (sys, pt) = quadratic();
        let u = dvector![0.0, 1.0];
        let err = retrieve_implicit(&sys, &u, &pt.w0, &pt.x0, &ScrsOptions::default());
        assert!(matches!(err, Err(Error::RetrievalFailed { .. })));
    }

    #[test]
    fn options_are_checked() {
        let o = ScrsOptions { eps1: 0.0, ..ScrsOptions::default() };
        assert!(o.validate().is_err());
        let o = ScrsOptions { max_outer: 0, ..ScrsOptions::default() };
        assert!(o.validate().is_err());
    }

    #[test]
    fn surface_samples_lie_on_sphere() {
        let w0 = dvector![0.5, -0.5];
        for w in sample_uncertainty_surface(&w0, NormKind::Two, 0.1, 50, 3) {
            assert!(((&w - &w0).norm() - 0.1).abs() < 1e-14);
        }
        for w in sample_uncertainty_surface(&w0, NormKind::InfExact, 0.1, 50, 3) {
            assert!(((&w - &w0).amax() - 0.1).abs() < 1e-14);
        }
    }
}
