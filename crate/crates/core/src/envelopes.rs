//! Quadratic concave envelopes for the basis catalog, box bounds by vertex
//! tracking, and interval-uncertain envelopes.
//!
//! Every envelope produced here has the form
//! `affine(z, u) + curvature * square(z, u)^2` with `square` affine. The
//! over-estimator has `curvature >= 0` (convex) and the under-estimator
//! `curvature <= 0` (concave).

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::model::{AffineForm, BasisFunction, BasisKind, Var};

/// Taylor remainder constant of the logistic function, `sup|sigma''| / 2`.
pub const LOGISTIC_CURVATURE: f64 = 0.048_112_522_432_468_82; // sqrt(3)/36

const PARALLEL_TOL: f64 = 1e-12;
const CANCEL_TOL: f64 = 1e-12;

/// `affine + curvature * square^2` over `(z, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub affine: AffineForm,
    pub curvature: f64,
    pub square: AffineForm,
}

impl Quadratic {
    pub fn affine(a: AffineForm) -> Self {
        Quadratic {
            affine: a.canonical(),
            curvature: 0.0,
            square: AffineForm::default(),
        }
    }

    pub fn new(affine: AffineForm, curvature: f64, square: AffineForm) -> Self {
        let mut q = Quadratic {
            affine: affine.canonical(),
            curvature,
            square: square.canonical(),
        };
        if q.square.is_constant() || q.curvature == 0.0 {
            q.affine.offset += q.curvature * q.square.offset * q.square.offset;
            q.curvature = 0.0;
            q.square = AffineForm::default();
        }
        q
    }

    pub fn eval(&self, z: &[f64], u: &[f64]) -> f64 {
        let s = if self.curvature == 0.0 {
            0.0
        } else {
            self.square.eval(z, u, &[])
        };
        self.affine.eval(z, u, &[]) + self.curvature * s * s
    }

    pub fn scaled(&self, c: f64) -> Self {
        Quadratic::new(self.affine.scaled(c), self.curvature * c, self.square.clone())
    }

    pub fn is_affine(&self) -> bool {
        self.curvature == 0.0
    }

    /// `(linear coefficient, square coefficient)` of `z_j`.
    pub fn direction(&self, j: usize) -> (f64, f64) {
        (self.affine.coef(Var::Z(j)), self.square.coef(Var::Z(j)))
    }

    pub fn depends_on_z(&self) -> bool {
        self.affine.z_indices().next().is_some() || (self.curvature != 0.0 && self.square.z_indices().next().is_some())
    }

    /// Gradient w.r.t. `z` and `u`.
    pub fn gradient(&self, z: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut gz = vec![0.0; z.len()];
        let mut gu = vec![0.0; u.len()];
        let mut push = |v: Var, c: f64| match v {
            Var::Z(i) => gz[i] += c,
            Var::U(i) => gu[i] += c,
            Var::W(_) => {}
        };
        for &(v, c) in &self.affine.terms {
            push(v, c);
        }
        if self.curvature != 0.0 {
            let s = self.square.eval(z, u, &[]);
            for &(v, c) in &self.square.terms {
                push(v, 2.0 * self.curvature * s * c);
            }
        }
        (gz, gu)
    }
}

/// Convex over-estimator and concave under-estimator of one function.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopePair {
    pub over: Quadratic,
    pub under: Quadratic,
    /// Sorted `z` indices the pair may depend on.
    pub support: Vec<usize>,
    /// Argument values at the anchor point.
    pub anchor_args: Vec<f64>,
}

impl EnvelopePair {
    fn from_parts(over: Quadratic, under: Quadratic, support: Vec<usize>, anchor_args: Vec<f64>) -> Self {
        EnvelopePair {
            over,
            under,
            support,
            anchor_args,
        }
    }

    /// Multiply by `c`, swapping the roles of the estimators when `c < 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let (over, under) = if c >= 0.0 {
            (self.over.scaled(c), self.under.scaled(c))
        } else {
            (self.under.scaled(c), self.over.scaled(c))
        };
        EnvelopePair {
            over,
            under,
            support: self.support.clone(),
            anchor_args: self.anchor_args.clone(),
        }
    }
}

/// Envelope of the unscaled kernel applied to `w`-free arguments.
fn kernel_envelope(basis: &BasisFunction, args: &[AffineForm], a0: &[f64]) -> (Quadratic, Quadratic) {
    let a = &args[0];
    let x0 = a0[0];
    // a - a0
    let da = a.add_scaled(&AffineForm::constant(x0), -1.0);
    let taylor = |v: f64, d: f64, curv: f64| {
        let lin = AffineForm::constant(v).add_scaled(&da, d);
        (
            Quadratic::new(lin.clone(), curv, da.clone()),
            Quadratic::new(lin, -curv, da.clone()),
        )
    };
    match basis.kind {
        BasisKind::Linear => {
            let q = Quadratic::affine(a.clone());
            (q.clone(), q)
        }
        BasisKind::Square => {
            let tangent = AffineForm::constant(-x0 * x0).add_scaled(a, 2.0 * x0);
            (Quadratic::new(AffineForm::default(), 1.0, a.clone()), Quadratic::affine(tangent))
        }
        BasisKind::Bilinear => {
            let b = &args[1];
            let y0 = a0[1];
            let db = b.add_scaled(&AffineForm::constant(y0), -1.0);
            let base = AffineForm::constant(-x0 * y0).add_scaled(a, y0).add_scaled(b, x0);
            let (ro, ru) = (basis.rho_over, basis.rho_under);
            let sq_over = da.scaled(ro).add_scaled(&db, 1.0 / ro);
            let sq_under = da.scaled(ru).add_scaled(&db, -1.0 / ru);
            (
                Quadratic::new(base.clone(), 0.25, sq_over),
                Quadratic::new(base, -0.25, sq_under),
            )
        }
        BasisKind::Sin => taylor(x0.sin(), x0.cos(), 0.5),
        BasisKind::Cos => taylor(x0.cos(), -x0.sin(), 0.5),
        BasisKind::Logistic => {
            let s = crate::model::logistic(x0);
            taylor(s, s * (1.0 - s), LOGISTIC_CURVATURE)
        }
    }
}

/// Envelope pair of `basis` anchored at `(z0, u0, w0)`; `w` is held at `w0`.
pub fn make_envelope(basis: &BasisFunction, z0: &[f64], u0: &[f64], w0: &[f64]) -> Result<EnvelopePair> {
    check_anchor(basis, z0, u0, w0)?;
    let args: Vec<AffineForm> = basis.args.iter().map(|a| a.fix_w(w0).canonical()).collect();
    let a0: Vec<f64> = args.iter().map(|a| a.eval(z0, u0, &[])).collect();
    let (over, under) = kernel_envelope(basis, &args, &a0);
    let pair = EnvelopePair::from_parts(over, under, basis.support(), a0);
    Ok(match basis.w_scale {
        Some(j) => pair.scaled(w0[j]),
        None => pair,
    })
}

fn check_anchor(basis: &BasisFunction, z0: &[f64], u0: &[f64], w0: &[f64]) -> Result<()> {
    for arg in &basis.args {
        for &(v, _) in &arg.terms {
            let (i, len, ctx) = match v {
                Var::Z(i) => (i, z0.len(), "anchor z"),
                Var::U(i) => (i, u0.len(), "anchor u"),
                Var::W(i) => (i, w0.len(), "anchor w"),
            };
            if i >= len {
                return Err(Error::dims(ctx, i + 1, len));
            }
        }
    }
    if let Some(j) = basis.w_scale {
        if j >= w0.len() {
            return Err(Error::dims("anchor w", j + 1, w0.len()));
        }
    }
    Ok(())
}

fn snap_subtract(q: &Quadratic, lambda: &[(usize, f64)]) -> Quadratic {
    let mut affine = q.affine.clone();
    for &(j, l) in lambda {
        if l == 0.0 {
            continue;
        }
        let c = affine.coef(Var::Z(j));
        let d = c - l;
        let snapped = if d.abs() <= CANCEL_TOL * c.abs().max(l.abs()) { 0.0 } else { d };
        affine.terms.retain(|t| t.0 != Var::Z(j));
        if snapped != 0.0 {
            affine.terms.push((Var::Z(j), snapped));
        }
    }
    Quadratic::new(affine, q.curvature, q.square.clone())
}

/// Envelope of `g_k = psi_k - Lambda_k z` from the envelope of `psi_k`.
/// `lambda_row` lists `(j, Lambda_kj)` pairs.
pub fn residual_envelope(pair: &EnvelopePair, lambda_row: &[(usize, f64)]) -> EnvelopePair {
    let mut support = pair.support.clone();
    for &(j, l) in lambda_row {
        if l != 0.0 && !support.contains(&j) {
            support.push(j);
        }
    }
    support.sort_unstable();
    EnvelopePair {
        over: snap_subtract(&pair.over, lambda_row),
        under: snap_subtract(&pair.under, lambda_row),
        support,
        anchor_args: pair.anchor_args.clone(),
    }
}

/// A vertex of the box over a pair's support: `true` selects the upper end.
pub type Vertex = Vec<bool>;

/// Vertex subsets at which the over-estimator's maximum and the
/// under-estimator's minimum can occur.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedVertices {
    pub upper: Vec<Vertex>,
    pub lower: Vec<Vertex>,
}

/// Candidate vertices for the extremum of `q` over any box on `support`.
///
/// `q` depends on `z` only through the planar projection
/// `z -> (linear . z, square . z)`, so its extremum over a box sits at a
/// vertex of a zonotope whose generators are the per-coordinate directions.
/// The vertex set depends only on those directions, not on the box or `u`.
pub fn extreme_vertices(q: &Quadratic, support: &[usize], maximize: bool) -> Vec<Vertex> {
    let dirs: Vec<(f64, f64)> = support
        .iter()
        .map(|&j| {
            let (l, s) = q.direction(j);
            if q.curvature == 0.0 {
                (l, 0.0)
            } else {
                (l, s)
            }
        })
        .collect();
    let curved = q.curvature != 0.0 && dirs.iter().any(|d| d.1 != 0.0);
    if !curved {
        let v = dirs.iter().map(|d| if maximize { d.0 > 0.0 } else { d.0 < 0.0 }).collect();
        return vec![v];
    }
    let norm = |d: &(f64, f64)| d.0.hypot(d.1);
    let reference = *dirs
        .iter()
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("curved implies nonempty support");
    let rn = norm(&reference);
    let rank_one = dirs
        .iter()
        .all(|d| (reference.0 * d.1 - reference.1 * d.0).abs() <= PARALLEL_TOL * rn * norm(d));
    let pattern = |t: (f64, f64)| -> Vertex { dirs.iter().map(|d| d.0 * t.0 + d.1 * t.1 > 0.0).collect() };
    let mut out: Vec<Vertex> = if rank_one {
        vec![pattern(reference), pattern((-reference.0, -reference.1))]
    } else {
        let tau = std::f64::consts::TAU;
        let mut crit: Vec<f64> = Vec::with_capacity(2 * dirs.len());
        for d in dirs.iter().filter(|d| norm(d) > 0.0) {
            let phi = d.1.atan2(d.0);
            for t in [phi + FRAC_PI_2, phi - FRAC_PI_2] {
                crit.push(t.rem_euclid(tau));
            }
        }
        crit.sort_by(f64::total_cmp);
        crit.dedup();
        let m = crit.len();
        (0..m)
            .map(|i| {
                let a = crit[i];
                let b = if i + 1 < m { crit[i + 1] } else { crit[0] + tau };
                let mid = 0.5 * (a + b);
                pattern((mid.cos(), mid.sin()))
            })
            .collect()
    };
    out.sort();
    out.dedup();
    out
}

pub fn prune_vertices(pair: &EnvelopePair) -> PrunedVertices {
    PrunedVertices {
        upper: extreme_vertices(&pair.over, &pair.support, true),
        lower: extreme_vertices(&pair.under, &pair.support, false),
    }
}

/// Full `z` vector at a vertex: support coordinates from the box, others from `zl`.
pub fn vertex_point(support: &[usize], vertex: &[bool], zl: &[f64], zu: &[f64]) -> Vec<f64> {
    let mut z = zl.to_vec();
    for (&j, &up) in support.iter().zip(vertex) {
        z[j] = if up { zu[j] } else { zl[j] };
    }
    z
}

/// Interval bound of a pair over a box, with the vertices that attain it.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBound {
    pub value_u: f64,
    pub value_l: f64,
    pub active_upper: Vec<Vertex>,
    pub active_lower: Vec<Vertex>,
}

fn check_box(support: &[usize], zl: &[f64], zu: &[f64]) -> Result<()> {
    if zl.len() != zu.len() {
        return Err(Error::dims("box bounds", zl.len(), zu.len()));
    }
    for &j in support {
        if j >= zl.len() {
            return Err(Error::dims("box", j + 1, zl.len()));
        }
        if !(zl[j] <= zu[j]) {
            return Err(Error::EmptyBox {
                index: j,
                lower: zl[j],
                upper: zu[j],
            });
        }
    }
    Ok(())
}

fn extremum(
    q: &Quadratic,
    support: &[usize],
    vertices: &[Vertex],
    zl: &[f64],
    zu: &[f64],
    u: &[f64],
    maximize: bool,
) -> (f64, Vec<Vertex>) {
    let values: Vec<f64> = vertices
        .iter()
        .map(|v| q.eval(&vertex_point(support, v, zl, zu), u))
        .collect();
    let best = values
        .iter()
        .copied()
        .fold(if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, |a, b| {
            if maximize {
                a.max(b)
            } else {
                a.min(b)
            }
        });
    let active = vertices
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v == best)
        .map(|(x, _)| x.clone())
        .collect();
    (best, active)
}

/// Bound of the pair over the box `[zl, zu]` (full-length `q` vectors) at fixed `u`.
pub fn box_bound(pair: &EnvelopePair, zl: &[f64], zu: &[f64], u: &[f64]) -> Result<BoxBound> {
    check_box(&pair.support, zl, zu)?;
    let pruned = prune_vertices(pair);
    let (value_u, active_upper) = extremum(&pair.over, &pair.support, &pruned.upper, zl, zu, u, true);
    let (value_l, active_lower) = extremum(&pair.under, &pair.support, &pruned.lower, zl, zu, u, false);
    Ok(BoxBound {
        value_u,
        value_l,
        active_upper,
        active_lower,
    })
}

/// Envelope branches over the extreme values of an interval uncertainty.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertainEnvelopePair {
    pub branches: Vec<EnvelopePair>,
    /// `(w index, value)` assignments defining each branch.
    pub branch_values: Vec<Vec<(usize, f64)>>,
}

impl UncertainEnvelopePair {
    pub fn over(&self, z: &[f64], u: &[f64]) -> f64 {
        self.branches
            .iter()
            .map(|b| b.over.eval(z, u))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn under(&self, z: &[f64], u: &[f64]) -> f64 {
        self.branches
            .iter()
            .map(|b| b.under.eval(z, u))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn residual(&self, lambda_row: &[(usize, f64)]) -> Self {
        UncertainEnvelopePair {
            branches: self.branches.iter().map(|b| residual_envelope(b, lambda_row)).collect(),
            branch_values: self.branch_values.clone(),
        }
    }

    pub fn box_bound(&self, zl: &[f64], zu: &[f64], u: &[f64]) -> Result<BoxBound> {
        let mut out = BoxBound {
            value_u: f64::NEG_INFINITY,
            value_l: f64::INFINITY,
            active_upper: Vec::new(),
            active_lower: Vec::new(),
        };
        for b in &self.branches {
            let bb = box_bound(b, zl, zu, u)?;
            if bb.value_u > out.value_u {
                out.value_u = bb.value_u;
                out.active_upper = bb.active_upper;
            }
            if bb.value_l < out.value_l {
                out.value_l = bb.value_l;
                out.active_lower = bb.active_lower;
            }
        }
        Ok(out)
    }
}

/// `w` coordinates a basis function depends on (scale first, then arguments).
pub fn uncertain_indices(basis: &BasisFunction) -> Vec<usize> {
    let mut idx: Vec<usize> = basis.w_scale.into_iter().collect();
    for arg in &basis.args {
        for &(v, _) in &arg.terms {
            if let Var::W(j) = v {
                if !idx.contains(&j) {
                    idx.push(j);
                }
            }
        }
    }
    idx
}

/// Envelope valid for every `w` in the box `intervals` (one `(lo, hi)` per
/// `w` coordinate). Supported forms: `w_j * sin(a)`, `w_j * cos(a)` and
/// `[w_j *] linear(a(z, u, w))` with the scale index absent from `a`.
pub fn make_uncertain_envelope(
    index: usize,
    basis: &BasisFunction,
    z0: &[f64],
    u0: &[f64],
    w0: &[f64],
    intervals: &[(f64, f64)],
) -> Result<UncertainEnvelopePair> {
    check_anchor(basis, z0, u0, w0)?;
    if intervals.len() != w0.len() {
        return Err(Error::dims("interval uncertainty", w0.len(), intervals.len()));
    }
    for (j, &(lo, hi)) in intervals.iter().enumerate() {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidUncertainty(format!("interval {j} is empty or non-finite: [{lo}, {hi}]")));
        }
    }
    let involved = uncertain_indices(basis);
    if involved.is_empty() {
        return Ok(UncertainEnvelopePair {
            branches: vec![make_envelope(basis, z0, u0, w0)?],
            branch_values: vec![Vec::new()],
        });
    }
    let unsupported = |reason: &str| Error::UnsupportedUncertaintyForm {
        index,
        reason: reason.to_string(),
    };
    let arg_has_w = basis.args.iter().any(AffineForm::has_w);
    match basis.kind {
        BasisKind::Linear => {}
        BasisKind::Sin | BasisKind::Cos if !arg_has_w => {}
        BasisKind::Sin | BasisKind::Cos => {
            return Err(unsupported("uncertainty inside a trigonometric argument"));
        }
        _ => {
            return Err(unsupported("only linear, sin and cos bases accept interval uncertainty"));
        }
    }
    if let Some(j) = basis.w_scale {
        if basis.args.iter().any(|a| a.coef(Var::W(j)) != 0.0) {
            return Err(unsupported("scale parameter also appears in the argument"));
        }
    }

    let mut branch_values: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    for &j in &involved {
        let (lo, hi) = intervals[j];
        let ends: Vec<f64> = if lo == hi { vec![lo] } else { vec![lo, hi] };
        branch_values = branch_values
            .into_iter()
            .flat_map(|prefix| {
                ends.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push((j, v));
                    p
                })
            })
            .collect();
    }

    // anchor arguments are taken at w0 so trig envelopes share the nominal expansion point
    let a0: Vec<f64> = basis.args.iter().map(|a| a.eval(z0, u0, w0)).collect();
    let mut branches = Vec::with_capacity(branch_values.len());
    for values in &branch_values {
        let mut w = w0.to_vec();
        for &(j, v) in values {
            w[j] = v;
        }
        let args: Vec<AffineForm> = basis.args.iter().map(|a| a.fix_w(&w).canonical()).collect();
        let (over, under) = kernel_envelope(basis, &args, &a0);
        let pair = EnvelopePair::from_parts(over, under, basis.support(), a0.clone());
        branches.push(match basis.w_scale {
            Some(j) => pair.scaled(w[j]),
            None => pair,
        });
    }
    Ok(UncertainEnvelopePair {
        branches,
        branch_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(i: usize) -> AffineForm {
        AffineForm::z(i)
    }

    #[test]
    fn square_pair_at_anchor() {
        let b = BasisFunction::square(z(0));
        let p = make_envelope(&b, &[1.5], &[], &[]).unwrap();
        assert_eq!(p.over.eval(&[3.0], &[]), 9.0);
        assert_eq!(p.under.eval(&[3.0], &[]), 2.0 * 1.5 * 3.0 - 2.25);
        assert!((p.over.eval(&[1.5], &[]) - 2.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_tight_at_anchor() {
        let b = BasisFunction::bilinear(z(0), z(1));
        let p = make_envelope(&b, &[0.3, -1.2], &[], &[]).unwrap();
        let v = 0.3 * -1.2;
        assert!((p.over.eval(&[0.3, -1.2], &[]) - v).abs() < 1e-15);
        assert!((p.under.eval(&[0.3, -1.2], &[]) - v).abs() < 1e-15);
    }

    #[test]
    fn sin_gap_bounded_by_half_square() {
        let b = BasisFunction::sin(z(0));
        let p = make_envelope(&b, &[0.7], &[], &[]).unwrap();
        let t = 1.3_f64;
        let up = p.over.eval(&[t], &[]) - t.sin();
        let lo = t.sin() - p.under.eval(&[t], &[]);
        assert!(up >= 0.0 && lo >= 0.0);
        // each estimator sits half a square away from the tangent line
        assert!((up + lo - 0.36).abs() < 1e-14);
        assert!(up <= 0.36 && lo <= 0.36);
    }

    #[test]
    fn linear_residual_vanishes() {
        let b = BasisFunction::linear(AffineForm::z(0).plus(Var::Z(1), -2.0));
        let p = make_envelope(&b, &[0.0, 0.0], &[], &[]).unwrap();
        let g = residual_envelope(&p, &[(0, 1.0), (1, -2.0)]);
        for pt in [[1.0, 2.0], [-3.0, 0.5]] {
            assert_eq!(g.over.eval(&pt, &[]), 0.0);
            assert_eq!(g.under.eval(&pt, &[]), 0.0);
        }
    }

    #[test]
    fn quadratic_catalog_residual_is_pure_square() {
        // g = z (z + u1) - 4 z at anchor z0 = 0, u0 = (4, 0)
        let b = BasisFunction::bilinear(z(0), z(0).plus(Var::U(0), 1.0));
        let p = make_envelope(&b, &[0.0], &[4.0, 0.0], &[]).unwrap();
        let g = residual_envelope(&p, &[(0, 4.0)]);
        assert!(g.over.affine.z_indices().next().is_none());
        let (zz, u1) = (0.7, 3.1);
        let expect = 0.25 * (2.0 * zz + u1 - 4.0) * (2.0 * zz + u1 - 4.0);
        assert!((g.over.eval(&[zz], &[u1, 0.0]) - expect).abs() < 1e-14);
        assert!((g.under.eval(&[zz], &[u1, 0.0]) + 0.25 * (u1 - 4.0) * (u1 - 4.0)).abs() < 1e-14);
    }

    #[test]
    fn bilinear_box_bound_on_unit_square() {
        let b = BasisFunction::bilinear(z(0), z(1));
        let p = make_envelope(&b, &[0.0, 0.0], &[], &[]).unwrap();
        let bb = box_bound(&p, &[-1.0, -1.0], &[1.0, 1.0], &[]).unwrap();
        assert_eq!(bb.value_u, 1.0);
        assert_eq!(bb.active_upper, vec![vec![false, false], vec![true, true]]);
        assert_eq!(bb.value_l, -1.0);
    }

    #[test]
    fn sin_box_bound() {
        let p = make_envelope(&BasisFunction::sin(z(0)), &[0.0], &[], &[]).unwrap();
        let bb = box_bound(&p, &[-0.5], &[0.5], &[]).unwrap();
        assert!((bb.value_u - 0.625).abs() < 1e-15);
        assert!((bb.value_l + 0.625).abs() < 1e-15);
    }

    #[test]
    fn point_box_is_function_value() {
        let p = make_envelope(&BasisFunction::logistic(z(0)), &[0.4], &[], &[]).unwrap();
        let bb = box_bound(&p, &[0.4], &[0.4], &[]).unwrap();
        let s = crate::model::logistic(0.4);
        assert!((bb.value_u - s).abs() < 1e-15 && (bb.value_l - s).abs() < 1e-15);
    }

    #[test]
    fn empty_box_rejected() {
        let p = make_envelope(&BasisFunction::cos(z(0)), &[0.0], &[], &[]).unwrap();
        assert!(matches!(box_bound(&p, &[1.0], &[0.0], &[]), Err(Error::EmptyBox { .. })));
    }

    #[test]
    fn pruning_counts() {
        let p = make_envelope(&BasisFunction::bilinear(z(0), z(1)), &[0.0, 0.0], &[], &[]).unwrap();
        let pv = prune_vertices(&p);
        assert_eq!(pv.upper.len(), 2);
        assert_eq!(pv.lower.len(), 2);
        assert_eq!(pv.lower, vec![vec![false, true], vec![true, false]]);
        let sq = make_envelope(&BasisFunction::square(z(0)), &[1.0], &[], &[]).unwrap();
        assert_eq!(prune_vertices(&sq).upper.len(), 2);
        assert_eq!(prune_vertices(&sq).lower.len(), 1);
    }

    #[test]
    fn grouped_bilinear_residual_tracks_two_vertices() {
        let sum = AffineForm::new((1..6).map(|i| (Var::Z(i), 1.0)).collect(), 0.0);
        let b = BasisFunction::bilinear(z(0), sum);
        let z0 = [1.0, 0.1, 0.1, 0.1, 0.1, 0.1];
        let p = make_envelope(&b, &z0, &[], &[]).unwrap();
        let lam: Vec<(usize, f64)> = vec![(0, 0.5), (1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0), (5, 1.0)];
        let g = residual_envelope(&p, &lam);
        let pv = prune_vertices(&g);
        assert_eq!(pv.upper.len(), 2);
        assert_eq!(pv.lower.len(), 2);
    }

    #[test]
    fn degenerate_interval_matches_nominal() {
        let b = BasisFunction::sin(z(0)).scaled_by_w(0);
        let u = make_uncertain_envelope(0, &b, &[0.2], &[], &[1.0], &[(1.0, 1.0)]).unwrap();
        let n = make_envelope(&b, &[0.2], &[], &[1.0]).unwrap();
        assert_eq!(u.branches, vec![n]);
    }

    #[test]
    fn uncertain_square_rejected() {
        let b = BasisFunction::square(z(0)).scaled_by_w(0);
        let err = make_uncertain_envelope(3, &b, &[0.2], &[], &[1.0], &[(0.9, 1.1)]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedUncertaintyForm { index: 3, .. }));
    }
}
