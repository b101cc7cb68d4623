//! TOML problem files. The grammar is documented in `docs/problem-format.md`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{AffineForm, BasisFunction, BasisKind, DecomposedSystem, LinearObjective, NominalPoint, Var};
use crate::restriction::{NormKind, Radius, UncertaintyModel};

pub const SCHEMA_VERSION: u32 = 1;

/// A complete problem: system, nominal point, uncertainty and objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub name: String,
    pub system: DecomposedSystem,
    pub nominal: NominalPoint,
    pub uncertainty: UncertaintyModel,
    pub objective: LinearObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dimensions: Dimensions,
    pub matrices: Matrices,
    #[serde(default)]
    pub basis: Vec<Spanned<BasisSpec>>,
    pub nominal: NominalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintySpec>,
    pub objective: ObjectiveSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    #[serde(default)]
    pub r: usize,
    #[serde(default)]
    pub s: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrices {
    pub m: MatrixSpec,
    pub c: MatrixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<MatrixSpec>,
}

/// Dense rows or `(row, col, value)` triplets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Dense(Vec<Vec<f64>>),
    Sparse(SparseSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseSpec {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: String,
    /// Affine expressions such as `"z0 + 2*u1 - 0.5"`.
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_scale: Option<usize>,
    /// `[rho_over, rho_under]` of a bilinear term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalSpec {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintySpec {
    None,
    /// Radius `gamma`; omitted means free.
    Additive {
        norm: NormKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
    Interval { bounds: Vec<(f64, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    /// `f0(u) = coefficients . u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// Minimize the epigraph variable `u[epigraph]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epigraph: Option<usize>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        message: message.into(),
    }
}

/// Parse an affine expression in `z`, `u`, `w`.
pub fn parse_affine(src: &str) -> std::result::Result<AffineForm, String> {
    let s = src.trim();
    if s.is_empty() {
        return Err("empty expression".into());
    }
    let bytes = s.as_bytes();
    let mut pos = 0;
    let mut terms = Vec::new();
    let mut offset = 0.0;
    let skip_ws = |pos: &mut usize| {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
    };
    let mut first = true;
    while pos < bytes.len() {
        skip_ws(&mut pos);
        let mut sign = 1.0;
        if pos < bytes.len() && (bytes[pos] == b'+' || bytes[pos] == b'-') {
            if bytes[pos] == b'-' {
                sign = -1.0;
            }
            pos += 1;
            skip_ws(&mut pos);
        } else if !first {
            return Err(format!("expected '+' or '-' at column {}", pos + 1));
        }
        first = false;
        let mut coef = None;
        let start = pos;
        while pos < bytes.len() && (bytes[pos].is_ascii_digit() || bytes[pos] == b'.') {
            pos += 1;
        }
        if pos > start {
            if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
                pos += 1;
                if pos < bytes.len() && (bytes[pos] == b'+' || bytes[pos] == b'-') {
                    pos += 1;
                }
                while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                    pos += 1;
                }
            }
            let num: f64 = s[start..pos]
                .parse()
                .map_err(|_| format!("bad number '{}'", &s[start..pos]))?;
            coef = Some(num);
            skip_ws(&mut pos);
            if pos < bytes.len() && bytes[pos] == b'*' {
                pos += 1;
                skip_ws(&mut pos);
            } else {
                offset += sign * num;
                continue;
            }
        }
        let vstart = pos;
        if pos >= bytes.len() || !matches!(bytes[pos], b'z' | b'u' | b'w') {
            return Err(format!("expected a number or variable at column {}", pos + 1));
        }
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == vstart + 1 {
            return Err(format!("variable without index at column {}", vstart + 1));
        }
        let idx: usize = s[vstart + 1..pos].parse().map_err(|_| "bad variable index".to_string())?;
        let var = match bytes[vstart] {
            b'z' => Var::Z(idx),
            b'u' => Var::U(idx),
            _ => Var::W(idx),
        };
        terms.push((var, sign * coef.unwrap_or(1.0)));
    }
    Ok(AffineForm::new(terms, offset))
}

/// Inverse of [`parse_affine`]; exact for every finite coefficient.
pub fn format_affine(a: &AffineForm) -> String {
    let mut out = String::new();
    let mut push = |c: f64, body: Option<String>| {
        let neg = c.is_sign_negative();
        let mag = c.abs();
        if out.is_empty() {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        match body {
            Some(v) if mag == 1.0 => out.push_str(&v),
            Some(v) => out.push_str(&format!("{mag:?}*{v}")),
            None => out.push_str(&format!("{mag:?}")),
        }
    };
    for &(v, c) in &a.terms {
        let name = match v {
            Var::Z(i) => format!("z{i}"),
            Var::U(i) => format!("u{i}"),
            Var::W(i) => format!("w{i}"),
        };
        push(c, Some(name));
    }
    if a.offset != 0.0 || a.terms.is_empty() {
        push(a.offset, None);
    }
    out
}

fn matrix_from(spec: Option<&MatrixSpec>, rows: usize, cols: usize, name: &str) -> Result<DMatrix<f64>> {
    let Some(spec) = spec else { return Ok(DMatrix::zeros(rows, cols)) };
    match spec {
        MatrixSpec::Dense(data) => {
            if data.len() != rows {
                return Err(Error::dims(&format!("matrix {name} rows"), rows, data.len()));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for (i, row) in data.iter().enumerate() {
                if row.len() != cols {
                    return Err(Error::dims(&format!("matrix {name} row {i} length"), cols, row.len()));
                }
                for (j, &v) in row.iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            Ok(m)
        }
        MatrixSpec::Sparse(sp) => {
            if sp.rows != rows || sp.cols != cols {
                return Err(Error::dims(&format!("matrix {name} shape"), rows * cols, sp.rows * sp.cols));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for &(i, j, v) in &sp.entries {
                if i >= rows || j >= cols {
                    return Err(Error::Validation(format!("matrix {name} entry ({i}, {j}) out of range")));
                }
                m[(i, j)] += v;
            }
            Ok(m)
        }
    }
}

fn dense(m: &DMatrix<f64>) -> MatrixSpec {
    MatrixSpec::Dense(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

impl ProblemFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            let field = e.message().split('`').nth(1).unwrap_or("").to_string();
            parse_err(line, field, e.message().trim())
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(format!("serializing problem: {e}")))
    }

    /// Build the problem objects; `text` (when given) is used for line numbers.
    pub fn into_problem(&self, text: Option<&str>) -> Result<Problem> {
        if self.version != SCHEMA_VERSION {
            return Err(parse_err(1, "version", format!("unsupported schema version {}", self.version)));
        }
        let Dimensions { n, m, q, r, s } = self.dimensions;
        let p = self.basis.len();
        let mm = matrix_from(Some(&self.matrices.m), n, p, "m")?;
        let cm = matrix_from(Some(&self.matrices.c), q, n, "c")?;
        let lm = matrix_from(self.matrices.l.as_ref(), s, p, "l")?;
        let bm = matrix_from(self.matrices.b.as_ref(), n, r, "b")?;
        let dm = matrix_from(self.matrices.d.as_ref(), s, r, "d")?;
        let mut basis = Vec::with_capacity(p);
        for (k, spanned) in self.basis.iter().enumerate() {
            let line = text.map_or(0, |t| line_of(t, spanned.span().start));
            let b = spanned.get_ref();
            let field = format!("basis[{k}]");
            let kind = BasisKind::from_name(&b.kind)
                .ok_or_else(|| parse_err(line, format!("{field}.kind"), format!("unknown basis kind '{}'", b.kind)))?;
            let args = b
                .args
                .iter()
                .enumerate()
                .map(|(i, a)| parse_affine(a).map_err(|msg| parse_err(line, format!("{field}.args[{i}]"), msg)))
                .collect::<Result<Vec<_>>>()?;
            let mut f = BasisFunction {
                kind,
                args,
                w_scale: b.w_scale,
                rho_over: 1.0,
                rho_under: 1.0,
            };
            if let Some([ro, ru]) = b.rho {
                f = f.with_rho(ro, ru);
            }
            basis.push(f);
        }
        let system = DecomposedSystem::new(m, r, mm, lm, cm, bm, dm, basis)?;
        let rank = linalg::numerical_rank(&system.c_mat);
        if rank != n {
            return Err(Error::Validation(format!("C has rank {rank} but n = {n}")));
        }
        let w = self.nominal.w.clone().unwrap_or_else(|| vec![0.0; r]);
        let nominal = NominalPoint::new(
            &system,
            DVector::from_vec(self.nominal.x.clone()),
            DVector::from_vec(self.nominal.u.clone()),
            DVector::from_vec(w),
        )?;
        let uncertainty = match &self.uncertainty {
            None | Some(UncertaintySpec::None) => UncertaintyModel::None,
            Some(UncertaintySpec::Additive { norm, gamma }) => UncertaintyModel::Additive {
                norm: *norm,
                radius: match gamma {
                    Some(g) if *g < 0.0 => return Err(Error::NegativeRadius(*g)),
                    Some(g) => Radius::Fixed(*g),
                    None => Radius::Free,
                },
            },
            Some(UncertaintySpec::Interval { bounds }) => {
                if bounds.len() != r {
                    return Err(Error::dims("interval bounds", r, bounds.len()));
                }
                if let Some(j) = bounds.iter().position(|(lo, hi)| !(lo <= hi)) {
                    return Err(Error::InvalidUncertainty(format!("interval {j} has lower bound above upper bound")));
                }
                UncertaintyModel::Interval { bounds: bounds.clone() }
            }
        };
        let objective = match (&self.objective.coefficients, self.objective.epigraph) {
            (Some(c), None) => {
                if c.len() != m {
                    return Err(Error::dims("objective coefficients", m, c.len()));
                }
                LinearObjective::new(DVector::from_vec(c.clone()))
            }
            (None, Some(j)) if j < m => LinearObjective::minimize(m, j),
            (None, Some(j)) => return Err(Error::Validation(format!("epigraph index {j} out of range (m = {m})"))),
            _ => {
                return Err(parse_err(
                    0,
                    "objective",
                    "exactly one of 'coefficients' or 'epigraph' is required",
                ))
            }
        };
        Ok(Problem {
            name: self.name.clone().unwrap_or_default(),
            system,
            nominal,
            uncertainty,
            objective,
        })
    }

    pub fn from_problem(p: &Problem) -> Self {
        let sys = &p.system;
        let d = sys.dims();
        let basis = sys
            .basis
            .iter()
            .map(|b| {
                Spanned::new(
                    0..0,
                    BasisSpec {
                        kind: b.kind.name().to_string(),
                        args: b.args.iter().map(format_affine).collect(),
                        w_scale: b.w_scale,
                        rho: (b.rho_over != 1.0 || b.rho_under != 1.0).then_some([b.rho_over, b.rho_under]),
                    },
                )
            })
            .collect();
        let uncertainty = match &p.uncertainty {
            UncertaintyModel::None => None,
            UncertaintyModel::Additive { norm, radius } => Some(UncertaintySpec::Additive {
                norm: *norm,
                gamma: match radius {
                    Radius::Fixed(g) => Some(*g),
                    Radius::Free => None,
                },
            }),
            UncertaintyModel::Interval { bounds } => Some(UncertaintySpec::Interval { bounds: bounds.clone() }),
        };
        ProblemFile {
            version: SCHEMA_VERSION,
            name: (!p.name.is_empty()).then(|| p.name.clone()),
            dimensions: Dimensions {
                n: d.n,
                m: d.m,
                q: d.q,
                r: d.r,
                s: d.s,
            },
            matrices: Matrices {
                m: dense(&sys.m_mat),
                c: dense(&sys.c_mat),
                l: (d.s > 0).then(|| dense(&sys.l_mat)),
                b: (d.r > 0).then(|| dense(&sys.b_mat)),
                d: (d.r > 0 && d.s > 0).then(|| dense(&sys.d_mat)),
            },
            basis,
            nominal: NominalSpec {
                x: p.nominal.x0.iter().copied().collect(),
                u: p.nominal.u0.iter().copied().collect(),
                w: (d.r > 0).then(|| p.nominal.w0.iter().copied().collect()),
            },
            uncertainty,
            objective: ObjectiveSpec {
                coefficients: Some(p.objective.coefficients.iter().copied().collect()),
                epigraph: None,
            },
        }
    }
}

pub fn parse_problem(text: &str) -> Result<Problem> {
    ProblemFile::from_toml(text)?.into_problem(Some(text))
}

pub fn serialize_problem(p: &Problem) -> Result<String> {
    ProblemFile::from_problem(p).to_toml()
}
