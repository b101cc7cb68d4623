//! Decomposed representation of a constrained nonlinear system.
//!
//! The equality and inequality constraints are written as fixed matrices
//! times a vector of basis functions of the transformed implicit variable
//! `z = C x`, the explicit variable `u` and the uncertain variable `w`:
//!
//! ```text
//! f(x, u, w) = M psi(C x, u, w) + B w      (n rows)
//! h(x, u, w) = L psi(C x, u, w) + D w      (s rows)
//! ```
//!
//! Each basis function is one entry of a closed catalog ([`BasisKind`])
//! applied to affine forms of `(z, u, w)`. Every catalog kind has a
//! certified envelope in [`crate::envelopes`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Threshold on `cond(M Lambda C)` above which the equality Jacobian is
/// treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// A scalar variable reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    Z(usize),
    U(usize),
    W(usize),
}

/// `sum_i c_i * v_i + offset` over `(z, u, w)` coordinates.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AffineForm {
    pub terms: Vec<(Var, f64)>,
    pub offset: f64,
}

impl AffineForm {
    pub fn new(terms: Vec<(Var, f64)>, offset: f64) -> Self {
        AffineForm { terms, offset }
    }

    pub fn var(v: Var) -> Self {
        AffineForm {
            terms: vec![(v, 1.0)],
            offset: 0.0,
        }
    }

    pub fn z(i: usize) -> Self {
        Self::var(Var::Z(i))
    }

    pub fn u(i: usize) -> Self {
        Self::var(Var::U(i))
    }

    pub fn constant(c: f64) -> Self {
        AffineForm {
            terms: Vec::new(),
            offset: c,
        }
    }

    pub fn plus(mut self, v: Var, c: f64) -> Self {
        self.terms.push((v, c));
        self
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn eval(&self, z: &[f64], u: &[f64], w: &[f64]) -> f64 {
        self.terms.iter().fold(self.offset, |acc, &(v, c)| {
            acc + c * match v {
                Var::Z(i) => z[i],
                Var::U(i) => u[i],
                Var::W(i) => w[i],
            }
        })
    }

    pub fn coef(&self, v: Var) -> f64 {
        self.terms
            .iter()
            .filter(|(t, _)| *t == v)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn z_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().filter_map(|(v, _)| match v {
            Var::Z(i) => Some(*i),
            _ => None,
        })
    }

    pub fn has_w(&self) -> bool {
        self.terms.iter().any(|(v, _)| matches!(v, Var::W(_)))
    }

    /// Merge duplicate variables, drop zero coefficients and sort by variable.
    pub fn canonical(&self) -> AffineForm {
        let mut terms = self.terms.clone();
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Var, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        AffineForm {
            terms: out,
            offset: self.offset,
        }
    }

    pub fn scaled(&self, c: f64) -> AffineForm {
        AffineForm {
            terms: self.terms.iter().map(|&(v, k)| (v, k * c)).collect(),
            offset: self.offset * c,
        }
    }

    /// `self + c * other`, canonicalized.
    pub fn add_scaled(&self, other: &AffineForm, c: f64) -> AffineForm {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|&(v, k)| (v, k * c)));
        AffineForm {
            terms,
            offset: self.offset + c * other.offset,
        }
        .canonical()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0.0)
    }

    /// Replace every `w` coordinate by its value in `w`.
    pub fn fix_w(&self, w: &[f64]) -> AffineForm {
        let mut out = AffineForm::constant(self.offset);
        for &(v, c) in &self.terms {
            match v {
                Var::W(i) => out.offset += c * w[i],
                _ => out.terms.push((v, c)),
            }
        }
        out
    }
}

/// The closed catalog of basis nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisKind {
    Linear,
    Square,
    Bilinear,
    Sin,
    Cos,
    Logistic,
}

impl BasisKind {
    pub fn arity(self) -> usize {
        match self {
            BasisKind::Bilinear => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Linear => "linear",
            BasisKind::Square => "square",
            BasisKind::Bilinear => "bilinear",
            BasisKind::Sin => "sin",
            BasisKind::Cos => "cos",
            BasisKind::Logistic => "logistic",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "linear" => BasisKind::Linear,
            "square" => BasisKind::Square,
            "bilinear" => BasisKind::Bilinear,
            "sin" => BasisKind::Sin,
            "cos" => BasisKind::Cos,
            "logistic" => BasisKind::Logistic,
            _ => return None,
        })
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One basis function `psi_k = [w_j *] kind(args...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisFunction {
    pub kind: BasisKind,
    pub args: Vec<AffineForm>,
    /// Optional multiplicative uncertain parameter `w_j`.
    pub w_scale: Option<usize>,
    /// Bilinear envelope parameter of the over-estimator.
    pub rho_over: f64,
    /// Bilinear envelope parameter of the under-estimator.
    pub rho_under: f64,
}

impl BasisFunction {
    fn with_kind(kind: BasisKind, args: Vec<AffineForm>) -> Self {
        BasisFunction {
            kind,
            args,
            w_scale: None,
            rho_over: 1.0,
            rho_under: 1.0,
        }
    }

    pub fn linear(a: AffineForm) -> Self {
        Self::with_kind(BasisKind::Linear, vec![a])
    }

    pub fn square(a: AffineForm) -> Self {
        Self::with_kind(BasisKind::Square, vec![a])
    }

    pub fn bilinear(a: AffineForm, b: AffineForm) -> Self {
        Self::with_kind(BasisKind::Bilinear, vec![a, b])
    }

    pub fn sin(a: AffineForm) -> Self {
        Self::with_kind(BasisKind::Sin, vec![a])
    }

    pub fn cos(a: AffineForm) -> Self {
        Self::with_kind(BasisKind::Cos, vec![a])
    }

    pub fn logistic(a: AffineForm) -> Self {
        Self::with_kind(BasisKind::Logistic, vec![a])
    }

    pub fn scaled_by_w(mut self, j: usize) -> Self {
        self.w_scale = Some(j);
        self
    }

    pub fn with_rho(mut self, rho_over: f64, rho_under: f64) -> Self {
        self.rho_over = rho_over;
        self.rho_under = rho_under;
        self
    }

    /// Sorted, deduplicated indices of `z` this function depends on (the set `I_k`).
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.args.iter().flat_map(|a| a.z_indices()).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    fn arg_values(&self, z: &[f64], u: &[f64], w: &[f64]) -> [f64; 2] {
        let a = self.args[0].eval(z, u, w);
        let b = self.args.get(1).map_or(0.0, |f| f.eval(z, u, w));
        [a, b]
    }

    fn scale(&self, w: &[f64]) -> f64 {
        self.w_scale.map_or(1.0, |j| w[j])
    }

    /// Value of the unscaled nonlinearity and its derivatives w.r.t. the arguments.
    pub(crate) fn kernel(&self, args: [f64; 2]) -> (f64, [f64; 2]) {
        let [a, b] = args;
        match self.kind {
            BasisKind::Linear => (a, [1.0, 0.0]),
            BasisKind::Square => (a * a, [2.0 * a, 0.0]),
            BasisKind::Bilinear => (a * b, [b, a]),
            BasisKind::Sin => (a.sin(), [a.cos(), 0.0]),
            BasisKind::Cos => (a.cos(), [-a.sin(), 0.0]),
            BasisKind::Logistic => {
                let s = logistic(a);
                (s, [s * (1.0 - s), 0.0])
            }
        }
    }

    pub fn eval(&self, z: &[f64], u: &[f64], w: &[f64]) -> f64 {
        self.scale(w) * self.kernel(self.arg_values(z, u, w)).0
    }

    /// Gradient w.r.t. `z` (length `q`) and `u` (length `m`).
    pub fn gradient(&self, z: &[f64], u: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = self.scale(w);
        let (_, d) = self.kernel(self.arg_values(z, u, w));
        let mut gz = vec![0.0; z.len()];
        let mut gu = vec![0.0; u.len()];
        for (arg, da) in self.args.iter().zip(d) {
            for &(v, c) in &arg.terms {
                match v {
                    Var::Z(i) => gz[i] += s * da * c,
                    Var::U(i) => gu[i] += s * da * c,
                    Var::W(_) => {}
                }
            }
        }
        (gz, gu)
    }

    fn check(&self, index: usize, q: usize, m: usize, r: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidBasis { index, reason };
        if self.args.len() != self.kind.arity() {
            return Err(bad(format!(
                "{} takes {} argument(s), got {}",
                self.kind.name(),
                self.kind.arity(),
                self.args.len()
            )));
        }
        for arg in &self.args {
            let mut seen = Vec::with_capacity(arg.terms.len());
            for &(v, c) in &arg.terms {
                let (limit, idx, name) = match v {
                    Var::Z(i) => (q, i, "z"),
                    Var::U(i) => (m, i, "u"),
                    Var::W(i) => (r, i, "w"),
                };
                if idx >= limit {
                    return Err(bad(format!("{name}[{idx}] out of range (size {limit})")));
                }
                if !c.is_finite() {
                    return Err(bad(format!("non-finite coefficient on {name}[{idx}]")));
                }
                if seen.contains(&v) {
                    return Err(bad(format!("duplicate argument {name}[{idx}]")));
                }
                seen.push(v);
            }
            if !arg.offset.is_finite() {
                return Err(bad("non-finite offset".into()));
            }
        }
        if let Some(j) = self.w_scale {
            if j >= r {
                return Err(bad(format!("w scale index {j} out of range (size {r})")));
            }
        }
        if !(self.rho_over > 0.0 && self.rho_under > 0.0) {
            return Err(bad("bilinear rho parameters must be positive".into()));
        }
        Ok(())
    }
}

/// The system `f = M psi(Cx,u,w) + B w`, `h = L psi(Cx,u,w) + D w`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedSystem {
    n: usize,
    m: usize,
    q: usize,
    r: usize,
    pub m_mat: DMatrix<f64>,
    pub l_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub d_mat: DMatrix<f64>,
    pub basis: Vec<BasisFunction>,
}

/// Dimensions `(n, m, q, p, r, s)` of a [`DecomposedSystem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub p: usize,
    pub r: usize,
    pub s: usize,
}

impl DecomposedSystem {
    /// Build and structurally check a system. `rank(C) = n` is *not* enforced
    /// here; [`validate`] reports it.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        r: usize,
        m_mat: DMatrix<f64>,
        l_mat: DMatrix<f64>,
        c_mat: DMatrix<f64>,
        b_mat: DMatrix<f64>,
        d_mat: DMatrix<f64>,
        basis: Vec<BasisFunction>,
    ) -> Result<Self> {
        let n = m_mat.nrows();
        let p = basis.len();
        let q = c_mat.nrows();
        let s = l_mat.nrows();
        if m_mat.ncols() != p {
            return Err(Error::dims("M columns vs basis count", p, m_mat.ncols()));
        }
        if l_mat.ncols() != p {
            return Err(Error::dims("L columns vs basis count", p, l_mat.ncols()));
        }
        if c_mat.ncols() != n {
            return Err(Error::dims("C columns vs n", n, c_mat.ncols()));
        }
        if b_mat.nrows() != n || b_mat.ncols() != r {
            return Err(Error::dims("B shape (n x r)", n * r, b_mat.nrows() * b_mat.ncols()));
        }
        if d_mat.nrows() != s || d_mat.ncols() != r {
            return Err(Error::dims("D shape (s x r)", s * r, d_mat.nrows() * d_mat.ncols()));
        }
        for (name, mat) in [("M", &m_mat), ("L", &l_mat), ("C", &c_mat), ("B", &b_mat), ("D", &d_mat)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("matrix {name} has non-finite entries")));
            }
        }
        for (k, b) in basis.iter().enumerate() {
            b.check(k, q, m, r)?;
        }
        Ok(DecomposedSystem {
            n,
            m,
            q,
            r,
            m_mat,
            l_mat,
            c_mat,
            b_mat,
            d_mat,
            basis,
        })
    }

    /// Nominal system (`r = 0`).
    pub fn nominal(
        m: usize,
        m_mat: DMatrix<f64>,
        l_mat: DMatrix<f64>,
        c_mat: DMatrix<f64>,
        basis: Vec<BasisFunction>,
    ) -> Result<Self> {
        let n = m_mat.nrows();
        let s = l_mat.nrows();
        Self::new(
            m,
            0,
            m_mat,
            l_mat,
            c_mat,
            DMatrix::zeros(n, 0),
            DMatrix::zeros(s, 0),
            basis,
        )
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.n,
            m: self.m,
            q: self.q,
            p: self.basis.len(),
            r: self.r,
            s: self.l_mat.nrows(),
        }
    }

    pub(crate) fn check_xuw(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::dims("x", self.n, x.len()));
        }
        self.check_zuw_tail(u, w)
    }

    fn check_zuw_tail(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::dims("u", self.m, u.len()));
        }
        if w.len() != self.r {
            return Err(Error::dims("w", self.r, w.len()));
        }
        Ok(())
    }

    pub fn transform(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c_mat * x
    }

    /// Basis vector `psi(z, u, w)`.
    pub fn psi(&self, z: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.basis.len(),
            self.basis
                .iter()
                .map(|b| b.eval(z.as_slice(), u.as_slice(), w.as_slice())),
        )
    }

    /// Residual basis vector `g(z, u, w) = psi(z, u, w) - Lambda z`.
    pub fn residual(
        &self,
        lambda: &DMatrix<f64>,
        z: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        self.psi(z, u, w) - lambda * z
    }

    /// `(grad_z psi, grad_u psi)` as `p x q` and `p x m` matrices.
    pub fn basis_jacobians(
        &self,
        z: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = self.basis.len();
        let mut jz = DMatrix::zeros(p, self.q);
        let mut ju = DMatrix::zeros(p, self.m);
        for (k, b) in self.basis.iter().enumerate() {
            let (gz, gu) = b.gradient(z.as_slice(), u.as_slice(), w.as_slice());
            for (j, v) in gz.into_iter().enumerate() {
                jz[(k, j)] = v;
            }
            for (j, v) in gu.into_iter().enumerate() {
                ju[(k, j)] = v;
            }
        }
        (jz, ju)
    }
}

/// `f(x, u, w) = M psi(Cx, u, w) + B w`.
pub fn evaluate_f(
    sys: &DecomposedSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.check_xuw(x, u, w)?;
    let z = sys.transform(x);
    Ok(&sys.m_mat * sys.psi(&z, u, w) + &sys.b_mat * w)
}

/// `h(x, u, w) = L psi(Cx, u, w) + D w`.
pub fn evaluate_h(
    sys: &DecomposedSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    sys.check_xuw(x, u, w)?;
    let z = sys.transform(x);
    Ok(&sys.l_mat * sys.psi(&z, u, w) + &sys.d_mat * w)
}

/// `grad_z psi(z, u, w)` as a `p x q` matrix. Entry `(k, j)` is zero for `j` outside `I_k`.
pub fn jacobian_z(
    sys: &DecomposedSystem,
    z: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    if z.len() != sys.q {
        return Err(Error::dims("z", sys.q, z.len()));
    }
    sys.check_zuw_tail(u, w)?;
    Ok(sys.basis_jacobians(z, u, w).0)
}

/// Jacobians of `f` and `h` w.r.t. `x` and `u`.
#[derive(Clone, Debug)]
pub struct ConstraintJacobians {
    pub f_x: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub h_x: DMatrix<f64>,
    pub h_u: DMatrix<f64>,
}

pub fn constraint_jacobians(
    sys: &DecomposedSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<ConstraintJacobians> {
    sys.check_xuw(x, u, w)?;
    let z = sys.transform(x);
    let (jz, ju) = sys.basis_jacobians(&z, u, w);
    let jzc = &jz * &sys.c_mat;
    Ok(ConstraintJacobians {
        f_x: &sys.m_mat * &jzc,
        f_u: &sys.m_mat * &ju,
        h_x: &sys.l_mat * &jzc,
        h_u: &sys.l_mat * &ju,
    })
}

/// A reference point `(x0, u0, w0)` with its feasibility metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct NominalPoint {
    pub x0: DVector<f64>,
    pub u0: DVector<f64>,
    pub w0: DVector<f64>,
    /// `C x0`, always recomputed.
    pub z0: DVector<f64>,
    /// `||f(x0, u0, w0)||_2`.
    pub eq_residual: f64,
    /// `max(0, max_j h_j(x0, u0, w0))`.
    pub ineq_violation: f64,
    /// Condition number of `M Lambda C`, `+inf` when numerically singular.
    pub jacobian_condition: f64,
}

impl NominalPoint {
    pub fn new(
        sys: &DecomposedSystem,
        x0: DVector<f64>,
        u0: DVector<f64>,
        w0: DVector<f64>,
    ) -> Result<Self> {
        let f = evaluate_f(sys, &x0, &u0, &w0)?;
        let h = evaluate_h(sys, &x0, &u0, &w0)?;
        let z0 = sys.transform(&x0);
        let jz = jacobian_z(sys, &z0, &u0, &w0)?;
        let jac = &sys.m_mat * jz * &sys.c_mat;
        let ineq_violation = h.iter().fold(0.0_f64, |acc, &v| acc.max(v));
        Ok(NominalPoint {
            eq_residual: f.norm(),
            ineq_violation,
            jacobian_condition: linalg::condition_number(&jac),
            x0,
            u0,
            w0,
            z0,
        })
    }

    /// Nominal point with `w0 = 0`.
    pub fn at_zero_w(sys: &DecomposedSystem, x0: DVector<f64>, u0: DVector<f64>) -> Result<Self> {
        let r = sys.dims().r;
        Self::new(sys, x0, u0, DVector::zeros(r))
    }
}

/// Index sets `I_k` and the degree of sparsity `|I| = max_k |I_k|`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityProfile {
    pub per_basis: Vec<Vec<usize>>,
    pub degree: usize,
}

pub fn sparsity_profile(sys: &DecomposedSystem) -> SparsityProfile {
    let per_basis: Vec<Vec<usize>> = sys.basis.iter().map(|b| b.support()).collect();
    let degree = per_basis.iter().map(Vec::len).max().unwrap_or(0);
    SparsityProfile { per_basis, degree }
}

/// Outcome of [`validate`]. Soft failures are flagged, not raised.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rank_c: usize,
    pub rank_ok: bool,
    pub eq_residual: f64,
    pub eq_ok: bool,
    pub ineq_violation: f64,
    pub ineq_ok: bool,
    pub jacobian_condition: f64,
    pub jacobian_ok: bool,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.rank_ok && self.eq_ok && self.ineq_ok && self.jacobian_ok
    }

    /// Human-readable list of failed checks.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.rank_ok {
            out.push(format!("rank(C) = {} is below n", self.rank_c));
        }
        if !self.eq_ok {
            out.push(format!("equality residual {:e} above tolerance", self.eq_residual));
        }
        if !self.ineq_ok {
            out.push(format!("inequality violation {:e} above tolerance", self.ineq_violation));
        }
        if !self.jacobian_ok {
            out.push(format!("M Lambda C condition number {:e}", self.jacobian_condition));
        }
        out
    }
}

/// Structural (rank of `C`) and nominal-point (feasibility, Jacobian) checks.
pub fn validate(sys: &DecomposedSystem, pt: &NominalPoint, tol_feas: f64) -> Result<ValidationReport> {
    // recompute rather than trust the cached fields
    let fresh = NominalPoint::new(sys, pt.x0.clone(), pt.u0.clone(), pt.w0.clone())?;
    let rank_c = linalg::numerical_rank(&sys.c_mat);
    Ok(ValidationReport {
        rank_c,
        rank_ok: rank_c == sys.n,
        eq_residual: fresh.eq_residual,
        eq_ok: fresh.eq_residual <= tol_feas,
        ineq_violation: fresh.ineq_violation,
        ineq_ok: fresh.ineq_violation <= tol_feas,
        jacobian_condition: fresh.jacobian_condition,
        jacobian_ok: fresh.jacobian_condition <= SINGULAR_CONDITION,
    })
}

/// Linear objective `f0(u) = c . u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearObjective {
    pub coefficients: DVector<f64>,
}

impl LinearObjective {
    pub fn new(coefficients: DVector<f64>) -> Self {
        LinearObjective { coefficients }
    }

    /// Minimize `u_index`.
    pub fn minimize(m: usize, index: usize) -> Self {
        let mut c = DVector::zeros(m);
        c[index] = 1.0;
        LinearObjective { coefficients: c }
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        self.coefficients.dot(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    /// f = x - u, no inequalities.
    fn identity_system() -> DecomposedSystem {
        let basis = vec![
            BasisFunction::linear(AffineForm::z(0)),
            BasisFunction::linear(AffineForm::u(0)),
        ];
        DecomposedSystem::nominal(1, dmatrix![1.0, -1.0], DMatrix::zeros(0, 2), dmatrix![1.0], basis).unwrap()
    }

    #[test]
    fn linear_identity_residual_vanishes() {
        let sys = identity_system();
        let f = evaluate_f(&sys, &dvector![3.5], &dvector![3.5], &dvector![]).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn sin_derivative_at_zero_is_one() {
        let sys = DecomposedSystem::nominal(
            0,
            dmatrix![1.0],
            DMatrix::zeros(0, 1),
            dmatrix![1.0],
            vec![BasisFunction::sin(AffineForm::z(0))],
        )
        .unwrap();
        let j = jacobian_z(&sys, &dvector![0.0], &dvector![], &dvector![]).unwrap();
        assert_eq!(j[(0, 0)], 1.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = identity_system();
        let err = evaluate_f(&sys, &dvector![1.0, 2.0], &dvector![1.0], &dvector![]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
        let err = evaluate_h(&sys, &dvector![1.0], &dvector![], &dvector![]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn basis_arity_and_ranges_are_checked() {
        let bad = BasisFunction {
            kind: BasisKind::Bilinear,
            args: vec![AffineForm::z(0)],
            w_scale: None,
            rho_over: 1.0,
            rho_under: 1.0,
        };
        let err = DecomposedSystem::nominal(0, dmatrix![1.0], DMatrix::zeros(0, 1), dmatrix![1.0], vec![bad]);
        assert!(matches!(err, Err(Error::InvalidBasis { .. })));

        let out_of_range = BasisFunction::square(AffineForm::z(3));
        let err = DecomposedSystem::nominal(0, dmatrix![1.0], DMatrix::zeros(0, 1), dmatrix![1.0], vec![out_of_range]);
        assert!(matches!(err, Err(Error::InvalidBasis { .. })));

        let dup = BasisFunction::square(AffineForm::z(0).plus(Var::Z(0), 2.0));
        let err = DecomposedSystem::nominal(0, dmatrix![1.0], DMatrix::zeros(0, 1), dmatrix![1.0], vec![dup]);
        assert!(matches!(err, Err(Error::InvalidBasis { .. })));
    }

    #[test]
    fn zero_c_is_flagged_not_raised() {
        let basis = vec![BasisFunction::linear(AffineForm::z(0))];
        let sys = DecomposedSystem::nominal(0, dmatrix![1.0], DMatrix::zeros(0, 1), dmatrix![0.0], basis).unwrap();
        let pt = NominalPoint::at_zero_w(&sys, dvector![0.0], dvector![]).unwrap();
        let report = validate(&sys, &pt, 1e-9).unwrap();
        assert!(!report.rank_ok);
        assert_eq!(report.rank_c, 0);
        assert!(!report.jacobian_ok);
        assert!(report.jacobian_condition.is_infinite());
    }

    #[test]
    fn sparsity_degree_is_max_support() {
        let basis = vec![
            BasisFunction::bilinear(AffineForm::z(0), AffineForm::z(1).plus(Var::Z(2), 1.0)),
            BasisFunction::sin(AffineForm::z(1)),
            BasisFunction::linear(AffineForm::u(0)),
        ];
        let sys = DecomposedSystem::nominal(
            1,
            DMatrix::zeros(3, 3),
            DMatrix::zeros(0, 3),
            DMatrix::identity(3, 3),
            basis,
        )
        .unwrap();
        let sp = sparsity_profile(&sys);
        assert_eq!(sp.per_basis, vec![vec![0, 1, 2], vec![1], vec![]]);
        assert_eq!(sp.degree, 3);
    }
}
