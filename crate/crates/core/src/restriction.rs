//! Lifted convex program certifying feasibility of explicit variables.
//!
//! With `Lambda = grad_z psi` at the nominal point, `J = M Lambda C` and
//! `g = psi - Lambda z`, the equality constraints read
//! `x = -J^{-1} (M g + B w)`. On the box `P(b) = {x : z^l <= Cx <= z^u}`
//! every row `i` of `A = [C; -C]` must satisfy
//!
//! ```text
//! K+ g^u_P + K- g^l_P + xi   <= b        (solvability, 2q rows)
//! L+ psi^u_P + L- psi^l_P + zeta <= 0    (inequality, s rows)
//! ```
//!
//! with `K = -A J^{-1} M`, `b = (z^u, -z^l)`. The box bounds `g^u_P`, ... are
//! maxima/minima of quadratic envelopes over pruned box vertices, so every
//! row is convex in `(u, z^u, z^l, gamma)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conic::{self, Constraint, ConvexProgram, SolveOptions, Status};
use crate::envelopes::{
    self, extreme_vertices, make_envelope, make_uncertain_envelope, residual_envelope, vertex_point,
    EnvelopePair, Quadratic, Vertex,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, DecomposedSystem, Dims, NominalPoint, Var, SINGULAR_CONDITION};

const ZERO_ENTRY_TOL: f64 = 1e-13;

/// Norm of the additive uncertainty ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `||w - w0||_2 <= gamma`, support `gamma ||v||_2`.
    Two,
    /// `||w - w0||_inf <= gamma` with margins `gamma ||v||_inf` as tabulated.
    #[serde(rename = "inf")]
    InfTable,
    /// `||w - w0||_inf <= gamma` with the exact support `gamma ||v||_1`.
    #[serde(rename = "exact")]
    InfExact,
}

impl NormKind {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "two" => Some(NormKind::Two),
            "inf" => Some(NormKind::InfTable),
            "exact" => Some(NormKind::InfExact),
            _ => None,
        }
    }

    /// Support-function coefficient of `v` on the unit ball.
    pub fn support(self, v: &[f64]) -> f64 {
        match self {
            NormKind::Two => linalg::norm2(v),
            NormKind::InfTable => linalg::norm_inf(v),
            NormKind::InfExact => linalg::norm1(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Radius {
    Fixed(f64),
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub enum UncertaintyModel {
    None,
    /// Additive `B w`, `D w` with `w` in a norm ball centred at `w0`.
    Additive { norm: NormKind, radius: Radius },
    /// Box `w_j in [lo_j, hi_j]`, entering the basis multiplicatively and
    /// through `B`, `D`.
    Interval { bounds: Vec<(f64, f64)> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    Minimize(DVector<f64>),
    MaximizeGamma,
    Feasibility,
}

/// `K`, `Lambda` and the inverse Jacobian at a nominal point.
#[derive(Clone, Debug, PartialEq)]
pub struct KData {
    /// `2q x p`; rows `0..q` pair with `z^u`, rows `q..2q` with `-z^l`.
    pub k: DMatrix<f64>,
    /// `p x q`.
    pub lambda: DMatrix<f64>,
    /// `(M Lambda C)^{-1}`.
    pub jacobian_inverse: DMatrix<f64>,
    pub condition: f64,
}

/// `A = [C; -C]`.
pub fn polytope_matrix(sys: &DecomposedSystem) -> DMatrix<f64> {
    let c = &sys.c_mat;
    let q = c.nrows();
    let mut a = DMatrix::zeros(2 * q, c.ncols());
    a.rows_mut(0, q).copy_from(c);
    a.rows_mut(q, q).copy_from(&(-c));
    a
}

pub fn compute_k(sys: &DecomposedSystem, pt: &NominalPoint) -> Result<KData> {
    let lambda = model::jacobian_z(sys, &pt.z0, &pt.u0, &pt.w0)?;
    let jac = &sys.m_mat * &lambda * &sys.c_mat;
    let condition = linalg::condition_number(&jac);
    if !(condition <= SINGULAR_CONDITION) {
        return Err(Error::SingularJacobian { condition });
    }
    let jinv = jac
        .clone()
        .try_inverse()
        .ok_or(Error::SingularJacobian { condition: f64::INFINITY })?;
    let k = -polytope_matrix(sys) * &jinv * &sys.m_mat;
    Ok(KData {
        k,
        lambda,
        jacobian_inverse: jinv,
        condition,
    })
}

pub fn positive_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.max(0.0))
}

pub fn negative_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v.min(0.0))
}

/// Decision variables of the lifted program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProgVar {
    U(usize),
    Zu(usize),
    Zl(usize),
    Gamma,
    /// Epigraph (or hypograph) variable of an envelope term.
    T(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    /// Residual `g_k = psi_k - Lambda_k z`, used in solvability rows.
    Residual,
    /// Basis `psi_k`, used in inequality rows.
    Basis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundSide {
    Upper,
    Lower,
}

/// One box bound `max` (or `min`) of an envelope over tracked vertices and
/// uncertainty branches.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeTerm {
    pub basis: usize,
    pub source: Source,
    pub side: BoundSide,
    pub support: Vec<usize>,
    /// Estimator per uncertainty branch (over for `Upper`, under for `Lower`).
    pub branches: Vec<Quadratic>,
    /// Tracked vertices per branch after pruning.
    pub vertices: Vec<Vec<Vertex>>,
    /// Whether the term is carried by an epigraph variable.
    pub epigraph: Option<usize>,
}

impl EnvelopeTerm {
    pub fn combos(&self) -> usize {
        self.vertices.iter().map(Vec::len).sum()
    }

    /// Bound value at fixed `(u, z^l, z^u)`.
    pub fn value(&self, u: &[f64], zl: &[f64], zu: &[f64]) -> f64 {
        let vals = self.branches.iter().zip(&self.vertices).flat_map(|(q, vs)| {
            vs.iter()
                .map(move |v| q.eval(&vertex_point(&self.support, v, zl, zu), u))
        });
        match self.side {
            BoundSide::Upper => vals.fold(f64::NEG_INFINITY, f64::max),
            BoundSide::Lower => vals.fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKind {
    /// Row `i` of `K`; `i < q` bounds `z^u_i`, otherwise `-z^l_{i-q}`.
    Solvability(usize),
    Inequality(usize),
}

/// `sum coef * bound(term) + margin_const + margin_gamma * gamma - b_i <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub kind: RowKind,
    pub terms: Vec<(usize, f64)>,
    pub margin_const: f64,
    pub margin_gamma: f64,
}

/// A `(term, branch, vertex)` selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combo {
    pub term: usize,
    pub branch: usize,
    pub vertex: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    /// Row constraint, expanded over one term's combos when `combo` is set.
    Row { row: usize, combo: Option<Combo> },
    /// Epigraph constraint `t >= e(vertex)` (or `t <= e(vertex)`).
    Envelope(Combo),
}

/// `kappa * (linear . v + constant)^2`, `kappa >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Square {
    pub kappa: f64,
    pub linear: Vec<(ProgVar, f64)>,
    pub constant: f64,
}

/// Convex expression over program variables.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Expr {
    pub linear: Vec<(ProgVar, f64)>,
    pub constant: f64,
    pub squares: Vec<Square>,
}

impl Expr {
    fn add_scaled(&mut self, other: &Expr, c: f64) {
        self.linear.extend(other.linear.iter().map(|&(v, k)| (v, k * c)));
        self.constant += c * other.constant;
        for s in &other.squares {
            self.squares.push(Square {
                kappa: s.kappa * c,
                linear: s.linear.clone(),
                constant: s.constant,
            });
        }
    }

    fn push(&mut self, v: ProgVar, c: f64) {
        self.linear.push((v, c));
    }

    pub fn eval(&self, value: &dyn Fn(ProgVar) -> f64) -> f64 {
        let lin: f64 = self.linear.iter().map(|&(v, c)| c * value(v)).sum();
        let sq: f64 = self
            .squares
            .iter()
            .map(|s| {
                let a: f64 = s.linear.iter().map(|&(v, c)| c * value(v)).sum::<f64>() + s.constant;
                s.kappa * a * a
            })
            .sum();
        lin + self.constant + sq
    }
}

/// `expr <= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProgConstraint {
    pub tag: Tag,
    pub expr: Expr,
}

fn lift_affine(a: &model::AffineForm, support: &[usize], vertex: &[bool]) -> (Vec<(ProgVar, f64)>, f64) {
    let mut lin = Vec::with_capacity(a.terms.len());
    for &(v, c) in &a.terms {
        let pv = match v {
            Var::Z(j) => {
                let pos = support.iter().position(|&s| s == j).expect("z index within support");
                if vertex[pos] {
                    ProgVar::Zu(j)
                } else {
                    ProgVar::Zl(j)
                }
            }
            Var::U(i) => ProgVar::U(i),
            Var::W(_) => unreachable!("envelopes are w-free"),
        };
        lin.push((pv, c));
    }
    (lin, a.offset)
}

/// Envelope expression at a box vertex, over program variables.
fn instantiate(q: &Quadratic, support: &[usize], vertex: &[bool]) -> Expr {
    let (linear, constant) = lift_affine(&q.affine, support, vertex);
    let mut e = Expr {
        linear,
        constant,
        squares: Vec::new(),
    };
    if q.curvature != 0.0 {
        let (sl, sc) = lift_affine(&q.square, support, vertex);
        e.squares.push(Square {
            kappa: q.curvature,
            linear: sl,
            constant: sc,
        });
    }
    e
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    None,
    Fixed(f64),
    Free,
}

/// The lifted restriction program.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictionProgram {
    pub dims: Dims,
    pub kdata: KData,
    /// `-A J^{-1} B`, `2q x r`.
    pub k_w: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub gamma: GammaMode,
    pub terms: Vec<EnvelopeTerm>,
    pub rows: Vec<Row>,
    pub constraints: Vec<ProgConstraint>,
    pub objective: Objective,
    pub num_epigraph: usize,
    /// `|I|` of the system.
    pub sparsity_degree: usize,
}

/// Variable layout of the lowered [`ConvexProgram`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub fixed_u: Option<Vec<f64>>,
    pub m: usize,
    pub q: usize,
    pub has_gamma: bool,
    pub num_vars: usize,
}

impl Layout {
    pub fn index(&self, v: ProgVar) -> Option<usize> {
        let off_u = if self.fixed_u.is_some() { 0 } else { self.m };
        let off_g = off_u + 2 * self.q;
        let off_t = off_g + usize::from(self.has_gamma);
        match v {
            ProgVar::U(i) => self.fixed_u.is_none().then_some(i),
            ProgVar::Zu(j) => Some(off_u + j),
            ProgVar::Zl(j) => Some(off_u + self.q + j),
            ProgVar::Gamma => self.has_gamma.then_some(off_g),
            ProgVar::T(t) => Some(off_t + t),
        }
    }
}

/// Solution of a restriction program mapped back to its variables.
#[derive(Clone, Debug, PartialEq)]
pub struct RestrictionSolution {
    pub status: Status,
    pub u: DVector<f64>,
    pub zu: DVector<f64>,
    pub zl: DVector<f64>,
    pub gamma: Option<f64>,
    pub objective: f64,
    /// Summed multipliers per row (expanded copies added together).
    pub row_duals: Vec<f64>,
    pub max_violation: f64,
}

impl RestrictionProgram {
    pub fn q(&self) -> usize {
        self.dims.q
    }

    pub fn k_plus(&self) -> DMatrix<f64> {
        positive_part(&self.kdata.k)
    }

    pub fn k_minus(&self) -> DMatrix<f64> {
        negative_part(&self.kdata.k)
    }

    pub fn l_plus(&self) -> DMatrix<f64> {
        positive_part(&self.l)
    }

    pub fn l_minus(&self) -> DMatrix<f64> {
        negative_part(&self.l)
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    /// `q * 2^(|I| + 2) + 2n + s`, saturating.
    pub fn constraint_bound(&self) -> usize {
        let Dims { n, q, s, .. } = self.dims;
        let pow = 1usize.checked_shl((self.sparsity_degree + 2) as u32).unwrap_or(usize::MAX);
        q.saturating_mul(pow).saturating_add(2 * n + s)
    }

    pub fn layout(&self, fixed_u: Option<&[f64]>) -> Layout {
        let has_gamma = self.gamma == GammaMode::Free;
        let num_u = if fixed_u.is_some() { 0 } else { self.dims.m };
        Layout {
            fixed_u: fixed_u.map(<[f64]>::to_vec),
            m: self.dims.m,
            q: self.dims.q,
            has_gamma,
            num_vars: num_u + 2 * self.dims.q + usize::from(has_gamma) + self.num_epigraph,
        }
    }

    /// Lower to a [`ConvexProgram`], optionally with `u` fixed.
    pub fn to_convex(&self, fixed_u: Option<&[f64]>) -> Result<(ConvexProgram, Layout)> {
        if let Some(u) = fixed_u {
            if u.len() != self.dims.m {
                return Err(Error::dims("fixed u", self.dims.m, u.len()));
            }
        }
        let layout = self.layout(fixed_u);
        let mut prog = ConvexProgram::new(layout.num_vars);
        let map = |lin: &[(ProgVar, f64)]| -> (Vec<(usize, f64)>, f64) {
            let mut out = Vec::with_capacity(lin.len());
            let mut shift = 0.0;
            for &(v, c) in lin {
                match (v, &layout.fixed_u) {
                    (ProgVar::U(i), Some(u)) => shift += c * u[i],
                    _ => out.push((layout.index(v).expect("variable present in layout"), c)),
                }
            }
            (out, shift)
        };
        for pc in &self.constraints {
            let (coeffs, shift) = map(&pc.expr.linear);
            let mut c = Constraint::ineq(coeffs, pc.expr.constant + shift);
            for s in &pc.expr.squares {
                let (alpha, sh) = map(&s.linear);
                c.add_square(s.kappa, &alpha, s.constant + sh);
            }
            prog.constraints.push(c);
        }
        if let Some(g) = layout.index(ProgVar::Gamma) {
            prog.lower[g] = 0.0;
        }
        match &self.objective {
            Objective::Minimize(c) => {
                if c.len() != self.dims.m {
                    return Err(Error::dims("objective", self.dims.m, c.len()));
                }
                for (i, &ci) in c.iter().enumerate() {
                    match &layout.fixed_u {
                        Some(u) => prog.objective_constant += ci * u[i],
                        None => prog.objective[i] = ci,
                    }
                }
            }
            Objective::MaximizeGamma => {
                let g = layout
                    .index(ProgVar::Gamma)
                    .ok_or_else(|| Error::InvalidOption("maximizing gamma needs a free radius".into()))?;
                prog.objective[g] = -1.0;
            }
            Objective::Feasibility => {}
        }
        Ok((prog, layout))
    }

    fn extract(&self, layout: &Layout, sol: &conic::Solution) -> RestrictionSolution {
        let get = |v: ProgVar| layout.index(v).map_or(0.0, |i| sol.x[i]);
        let Dims { m, q, .. } = self.dims;
        let u = match &layout.fixed_u {
            Some(u) => DVector::from_column_slice(u),
            None => DVector::from_fn(m, |i, _| get(ProgVar::U(i))),
        };
        let mut row_duals = vec![0.0; self.rows.len()];
        for (pc, &d) in self.constraints.iter().zip(&sol.duals) {
            if let Tag::Row { row, .. } = pc.tag {
                row_duals[row] += d;
            }
        }
        let gamma = match self.gamma {
            GammaMode::None => None,
            GammaMode::Fixed(g) => Some(g),
            GammaMode::Free => Some(get(ProgVar::Gamma)),
        };
        RestrictionSolution {
            status: sol.status,
            u,
            zu: DVector::from_fn(q, |j, _| get(ProgVar::Zu(j))),
            zl: DVector::from_fn(q, |j, _| get(ProgVar::Zl(j))),
            gamma,
            objective: match self.objective {
                Objective::MaximizeGamma => -sol.objective,
                _ => sol.objective,
            },
            row_duals,
            max_violation: sol.max_violation,
        }
    }

    pub fn solve(&self, fixed_u: Option<&[f64]>, opts: &SolveOptions) -> Result<RestrictionSolution> {
        let (prog, layout) = self.to_convex(fixed_u)?;
        let sol = conic::solve(&prog, opts)?;
        Ok(self.extract(&layout, &sol))
    }

    /// Phase-1 membership test of `u`.
    pub fn check_membership(&self, u: &[f64], opts: &SolveOptions) -> Result<RestrictionSolution> {
        let (prog, layout) = self.to_convex(Some(u))?;
        let sol = conic::solve_feasibility(&prog, opts)?;
        Ok(self.extract(&layout, &sol))
    }

    pub fn contains(&self, u: &[f64], opts: &SolveOptions) -> Result<bool> {
        Ok(self.check_membership(u, opts)?.status == Status::Optimal)
    }

    /// Left-hand side minus right-hand side of every row at fixed
    /// `(u, z^u, z^l, gamma)`, with exact vertex maxima instead of epigraphs.
    /// Nonpositive entries mean the row holds.
    pub fn reduced_row_values(&self, u: &[f64], zu: &[f64], zl: &[f64], gamma: f64) -> Vec<f64> {
        let q = self.dims.q;
        let values: Vec<f64> = self.terms.iter().map(|t| t.value(u, zl, zu)).collect();
        self.rows
            .iter()
            .map(|r| {
                let body: f64 = r.terms.iter().map(|&(t, c)| c * values[t]).sum();
                let b = match r.kind {
                    RowKind::Solvability(i) if i < q => zu[i],
                    RowKind::Solvability(i) => -zl[i - q],
                    RowKind::Inequality(_) => 0.0,
                };
                body + r.margin_const + r.margin_gamma * gamma - b
            })
            .collect()
    }

    /// Largest number of constraints generated for a single envelope bound
    /// of basis `k`: per term for epigraph constraints, per (row, term) for
    /// expanded rows.
    pub fn constraints_per_bound(&self, basis: usize) -> usize {
        let mut counts: std::collections::BTreeMap<(Option<usize>, usize), usize> = Default::default();
        for c in &self.constraints {
            let key = match c.tag {
                Tag::Envelope(cb) => (None, cb.term),
                Tag::Row { row, combo: Some(cb) } => (Some(row), cb.term),
                _ => continue,
            };
            if self.terms[key.1].basis == basis {
                *counts.entry(key).or_default() += 1;
            }
        }
        counts.values().copied().max().unwrap_or(0)
    }

    /// Envelope constraints generated for basis `k`.
    pub fn envelope_constraints_for(&self, basis: usize) -> usize {
        self.constraints
            .iter()
            .filter(|c| match c.tag {
                Tag::Envelope(cb) | Tag::Row { combo: Some(cb), .. } => self.terms[cb.term].basis == basis,
                _ => false,
            })
            .count()
    }
}

fn row_expr(q: usize, kind: RowKind) -> Expr {
    let mut e = Expr::default();
    match kind {
        RowKind::Solvability(i) if i < q => e.push(ProgVar::Zu(i), -1.0),
        RowKind::Solvability(i) => e.push(ProgVar::Zl(i - q), 1.0),
        RowKind::Inequality(_) => {}
    }
    e
}

struct TermSpec {
    branches: Vec<EnvelopePair>,
}

fn sparse_row(m: &DMatrix<f64>, i: usize) -> Vec<(usize, f64)> {
    let scale = m.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    (0..m.ncols())
        .filter_map(|k| {
            let v = m[(i, k)];
            (v.abs() > ZERO_ENTRY_TOL * scale).then_some((k, v))
        })
        .collect()
}

/// Build the restriction program for any uncertainty model.
pub fn build(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    unc: &UncertaintyModel,
    objective: Objective,
) -> Result<RestrictionProgram> {
    let dims = sys.dims();
    let Dims { q, r, s, .. } = dims;
    sys.check_xuw(&pt.x0, &pt.u0, &pt.w0)?;
    let gamma = match unc {
        UncertaintyModel::Additive { radius: Radius::Fixed(g), .. } => {
            if !(*g >= 0.0) {
                return Err(Error::NegativeRadius(*g));
            }
            GammaMode::Fixed(*g)
        }
        UncertaintyModel::Additive { radius: Radius::Free, .. } => GammaMode::Free,
        _ => GammaMode::None,
    };
    if let UncertaintyModel::Additive { .. } = unc {
        if let Some(k) = sys.basis.iter().position(|b| !envelopes::uncertain_indices(b).is_empty()) {
            return Err(Error::InvalidUncertainty(format!(
                "basis #{k} depends on w; additive norm-ball uncertainty requires w to enter only through B and D"
            )));
        }
    }
    if let UncertaintyModel::Interval { bounds } = unc {
        if bounds.len() != r {
            return Err(Error::dims("interval bounds", r, bounds.len()));
        }
    }
    if objective == Objective::MaximizeGamma && gamma != GammaMode::Free {
        return Err(Error::InvalidOption("maximizing gamma needs a free radius".into()));
    }

    let kdata = compute_k(sys, pt)?;
    let z0 = pt.z0.as_slice();
    let u0 = pt.u0.as_slice();
    let w0 = pt.w0.as_slice();

    // per-basis envelope branches (psi) and their residuals (g)
    let specs: Vec<(TermSpec, TermSpec)> = sys
        .basis
        .par_iter()
        .enumerate()
        .map(|(k, b)| -> Result<(TermSpec, TermSpec)> {
            let branches = match unc {
                UncertaintyModel::Interval { bounds } => make_uncertain_envelope(k, b, z0, u0, w0, bounds)?.branches,
                _ => vec![make_envelope(b, z0, u0, w0)?],
            };
            let lam: Vec<(usize, f64)> = (0..q)
                .filter_map(|j| {
                    let v = kdata.lambda[(k, j)];
                    (v != 0.0).then_some((j, v))
                })
                .collect();
            let resid = branches.iter().map(|e| residual_envelope(e, &lam)).collect();
            Ok((TermSpec { branches }, TermSpec { branches: resid }))
        })
        .collect::<Result<Vec<_>>>()?;

    let k_w = if r > 0 {
        -polytope_matrix(sys) * &kdata.jacobian_inverse * &sys.b_mat
    } else {
        DMatrix::zeros(2 * q, 0)
    };

    // margins per row
    let margin = |v: &[f64]| -> (f64, f64) {
        match unc {
            UncertaintyModel::None => (dot(v, w0), 0.0),
            UncertaintyModel::Additive { norm, radius } => {
                let sup = norm.support(v);
                match radius {
                    Radius::Fixed(g) => (dot(v, w0) + g * sup, 0.0),
                    Radius::Free => (dot(v, w0), sup),
                }
            }
            UncertaintyModel::Interval { bounds } => (
                v.iter()
                    .zip(bounds)
                    .map(|(&c, &(lo, hi))| (c * lo).max(c * hi))
                    .sum(),
                0.0,
            ),
        }
    };

    let mut registry: BTreeMap<(usize, Source, BoundSide), usize> = BTreeMap::new();
    let mut terms: Vec<EnvelopeTerm> = Vec::new();
    let mut rows: Vec<Row> = Vec::with_capacity(2 * q + s);
    let mut get_term = |k: usize, source: Source, side: BoundSide, terms: &mut Vec<EnvelopeTerm>| -> usize {
        *registry.entry((k, source, side)).or_insert_with(|| {
            let spec = match source {
                Source::Residual => &specs[k].1,
                Source::Basis => &specs[k].0,
            };
            let support = spec.branches[0].support.clone();
            let branches: Vec<Quadratic> = spec
                .branches
                .iter()
                .map(|e| match side {
                    BoundSide::Upper => e.over.clone(),
                    BoundSide::Lower => e.under.clone(),
                })
                .collect();
            let vertices = branches
                .iter()
                .map(|qd| extreme_vertices(qd, &support, side == BoundSide::Upper))
                .collect();
            terms.push(EnvelopeTerm {
                basis: k,
                source,
                side,
                support,
                branches,
                vertices,
                epigraph: None,
            });
            terms.len() - 1
        })
    };

    for i in 0..2 * q {
        let mut rt = Vec::new();
        for (k, v) in sparse_row(&kdata.k, i) {
            let side = if v > 0.0 { BoundSide::Upper } else { BoundSide::Lower };
            rt.push((get_term(k, Source::Residual, side, &mut terms), v));
        }
        let kw: Vec<f64> = (0..r).map(|j| k_w[(i, j)]).collect();
        let (mc, mg) = margin(&kw);
        rows.push(Row {
            kind: RowKind::Solvability(i),
            terms: rt,
            margin_const: mc,
            margin_gamma: mg,
        });
    }
    for j in 0..s {
        let mut rt = Vec::new();
        for (k, v) in sparse_row(&sys.l_mat, j) {
            let side = if v > 0.0 { BoundSide::Upper } else { BoundSide::Lower };
            rt.push((get_term(k, Source::Basis, side, &mut terms), v));
        }
        let d: Vec<f64> = (0..r).map(|c| sys.d_mat[(j, c)]).collect();
        let (mc, mg) = margin(&d);
        rows.push(Row {
            kind: RowKind::Inequality(j),
            terms: rt,
            margin_const: mc,
            margin_gamma: mg,
        });
    }

    // epigraphs for rows with more than one multi-combo term
    let mut num_epigraph = 0;
    for row in &rows {
        let multi: Vec<usize> = row.terms.iter().map(|t| t.0).filter(|&t| terms[t].combos() > 1).collect();
        if multi.len() > 1 {
            for t in multi {
                if terms[t].epigraph.is_none() {
                    terms[t].epigraph = Some(num_epigraph);
                    num_epigraph += 1;
                }
            }
        }
    }

    let mut constraints = Vec::new();
    for (ri, row) in rows.iter().enumerate() {
        let mut base = row_expr(q, row.kind);
        base.constant += row.margin_const;
        if row.margin_gamma != 0.0 {
            base.push(ProgVar::Gamma, row.margin_gamma);
        }
        let mut expand: Option<usize> = None;
        for &(t, c) in &row.terms {
            let term = &terms[t];
            if let Some(e) = term.epigraph {
                base.push(ProgVar::T(e), c);
            } else if term.combos() == 1 {
                let (b, v) = first_combo(term);
                base.add_scaled(&instantiate(&term.branches[b], &term.support, &term.vertices[b][v]), c);
            } else {
                expand = Some(t);
            }
        }
        match expand {
            None => constraints.push(ProgConstraint {
                tag: Tag::Row { row: ri, combo: None },
                expr: base,
            }),
            Some(t) => {
                let c = row.terms.iter().filter(|x| x.0 == t).map(|x| x.1).sum::<f64>();
                let term = &terms[t];
                for (b, vs) in term.vertices.iter().enumerate() {
                    for (vi, v) in vs.iter().enumerate() {
                        let mut e = base.clone();
                        e.add_scaled(&instantiate(&term.branches[b], &term.support, v), c);
                        constraints.push(ProgConstraint {
                            tag: Tag::Row {
                                row: ri,
                                combo: Some(Combo {
                                    term: t,
                                    branch: b,
                                    vertex: vi,
                                }),
                            },
                            expr: e,
                        });
                    }
                }
            }
        }
    }
    for (ti, term) in terms.iter().enumerate() {
        let Some(e) = term.epigraph else { continue };
        let sign = match term.side {
            BoundSide::Upper => 1.0,
            BoundSide::Lower => -1.0,
        };
        for (b, vs) in term.vertices.iter().enumerate() {
            for (vi, v) in vs.iter().enumerate() {
                // Upper: e(v) - t <= 0; Lower: t - e(v) <= 0
                let mut expr = Expr::default();
                expr.add_scaled(&instantiate(&term.branches[b], &term.support, v), sign);
                expr.push(ProgVar::T(e), -sign);
                constraints.push(ProgConstraint {
                    tag: Tag::Envelope(Combo {
                        term: ti,
                        branch: b,
                        vertex: vi,
                    }),
                    expr,
                });
            }
        }
    }

    Ok(RestrictionProgram {
        dims,
        kdata,
        k_w,
        l: sys.l_mat.clone(),
        gamma,
        terms,
        rows,
        constraints,
        objective,
        num_epigraph,
        sparsity_degree: model::sparsity_profile(sys).degree,
    })
}

fn first_combo(term: &EnvelopeTerm) -> (usize, usize) {
    for (b, vs) in term.vertices.iter().enumerate() {
        if !vs.is_empty() {
            return (b, 0);
        }
    }
    unreachable!("term with one combo")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn build_nominal(sys: &DecomposedSystem, pt: &NominalPoint, objective: Objective) -> Result<RestrictionProgram> {
    build(sys, pt, &UncertaintyModel::None, objective)
}

pub fn build_robust_additive(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    norm: NormKind,
    radius: Radius,
    objective: Objective,
) -> Result<RestrictionProgram> {
    build(sys, pt, &UncertaintyModel::Additive { norm, radius }, objective)
}

pub fn build_robust_parametric(
    sys: &DecomposedSystem,
    pt: &NominalPoint,
    bounds: Vec<(f64, f64)>,
    objective: Objective,
) -> Result<RestrictionProgram> {
    build(sys, pt, &UncertaintyModel::Interval { bounds }, objective)
}

/// Maximize `gamma` with `u` meant to be fixed at `u0` when solving.
/// Fails with [`Error::InfiniteMargin`] when the uncertainty never enters a row.
pub fn build_margin(sys: &DecomposedSystem, pt: &NominalPoint, norm: NormKind) -> Result<RestrictionProgram> {
    let prog = build(
        sys,
        pt,
        &UncertaintyModel::Additive {
            norm,
            radius: Radius::Free,
        },
        Objective::MaximizeGamma,
    )?;
    if prog.rows.iter().all(|r| r.margin_gamma == 0.0) {
        return Err(Error::InfiniteMargin);
    }
    Ok(prog)
}
