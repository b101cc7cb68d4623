//! Command-line front end: problem loading, subcommands and output files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::catalog;
use crate::error::{Error, Result};
use crate::model::{self, NominalPoint};
use crate::problem::{self, Problem};
use crate::restriction::{self, NormKind, Objective, Radius, UncertaintyModel};
use crate::scrs::{self, RetrievalMode, ScrsOptions};

#[derive(Debug, Parser)]
#[command(name = "convres", version, about = "Convex restriction and sequential convex restriction solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the sequential convex restriction solver; writes report.json and trace.csv.
    Solve(SolveArgs),
    /// Largest certified uncertainty radius; prints it and writes margin.json.
    Margin(MarginArgs),
    /// Classify a 2-D grid of u values; writes region.csv.
    SampleRegion(RegionArgs),
    /// Built-in problems.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Print the conic program of the restriction at the nominal point.
    DumpProgram(DumpArgs),
}

#[derive(Debug, Subcommand)]
pub enum CatalogAction {
    /// List entry names.
    List,
    /// Print an entry as a problem file.
    Dump { name: String },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Problem file or `catalog:<name>`.
    #[arg(value_name = "PROBLEM")]
    pub problem_arg: Option<String>,
    /// Same as the positional argument.
    #[arg(long = "problem", value_name = "PROBLEM")]
    pub problem_flag: Option<String>,
    /// Additive uncertainty radius; overrides the file.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Uncertainty norm: two, inf or exact.
    #[arg(long)]
    pub norm: Option<String>,
    /// Use the exact support function `gamma ||.||_1` for the inf-norm ball.
    #[arg(long)]
    pub support_exact: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub eps1: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps2: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub eps3: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,
    /// Retrieve with Newton instead of the Picard chord.
    #[arg(long)]
    pub newton: bool,
    /// Keep the tabulated `gamma ||.||_inf` margin for inf-norm balls
    /// (robust solves use the exact support otherwise).
    #[arg(long, conflicts_with = "support_exact")]
    pub support_table: bool,
}

#[derive(Debug, Clone, Args)]
pub struct MarginArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Maximize the radius (the default; excludes `--gamma`).
    #[arg(long, conflicts_with = "gamma")]
    pub gamma_free: bool,
    /// Run the nominal solver first and evaluate at its final point.
    #[arg(long)]
    pub solve_first: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RegionArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Points per axis.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// 1-based u indices of the two axes.
    #[arg(long, default_value = "1,2")]
    pub axes: String,
    /// `lo,hi` for both axes or `lo1,hi1,lo2,hi2`.
    #[arg(long, default_value = "-8,8", allow_hyphen_values = true)]
    pub range: String,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Load `catalog:<name>` or a problem file.
pub fn load_problem(spec: &str) -> Result<Problem> {
    match spec.strip_prefix("catalog:") {
        Some(name) => catalog::get(name),
        None => {
            let text = fs::read_to_string(spec).map_err(|e| Error::Io(format!("{spec}: {e}")))?;
            problem::parse_problem(&text)
        }
    }
}

fn exact_support(unc: UncertaintyModel) -> UncertaintyModel {
    match unc {
        UncertaintyModel::Additive {
            norm: NormKind::InfTable,
            radius,
        } => UncertaintyModel::Additive {
            norm: NormKind::InfExact,
            radius,
        },
        other => other,
    }
}

fn norm_from(s: &str) -> Result<NormKind> {
    NormKind::from_name(s).ok_or_else(|| Error::InvalidOption(format!("unknown norm '{s}' (two, inf, exact)")))
}

impl CommonArgs {
    fn problem_spec(&self) -> Result<&str> {
        match (&self.problem_arg, &self.problem_flag) {
            (Some(_), Some(_)) => Err(Error::InvalidOption("give the problem once".into())),
            (Some(p), None) | (None, Some(p)) => Ok(p),
            (None, None) => Err(Error::InvalidOption("no problem given".into())),
        }
    }

    /// The problem with `--gamma` and `--norm` applied.
    pub fn load(&self) -> Result<Problem> {
        let mut p = load_problem(self.problem_spec()?)?;
        let norm = self.norm.as_deref().map(norm_from).transpose()?;
        if let Some(g) = self.gamma {
            if g < 0.0 {
                return Err(Error::NegativeRadius(g));
            }
            let norm = norm.unwrap_or(match p.uncertainty {
                UncertaintyModel::Additive { norm, .. } => norm,
                _ => NormKind::Two,
            });
            p.uncertainty = UncertaintyModel::Additive {
                norm,
                radius: Radius::Fixed(g),
            };
        } else if let (Some(n), UncertaintyModel::Additive { radius, .. }) = (norm, &p.uncertainty) {
            p.uncertainty = UncertaintyModel::Additive { norm: n, radius: *radius };
        }
        if self.support_exact {
            p.uncertainty = exact_support(p.uncertainty);
        }
        Ok(p)
    }

    fn norm(&self, p: &Problem) -> Result<NormKind> {
        let n = match (&p.uncertainty, &self.norm) {
            (_, Some(n)) => norm_from(n)?,
            (UncertaintyModel::Additive { norm, .. }, None) => *norm,
            _ => NormKind::Two,
        };
        Ok(if self.support_exact && n == NormKind::InfTable { NormKind::InfExact } else { n })
    }

    pub fn scrs_options(&self) -> ScrsOptions {
        ScrsOptions {
            eps1: self.eps1,
            eps2: self.eps2,
            eps3: self.eps3,
            ..ScrsOptions::default()
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn to_json(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn cmd_solve(args: &SolveArgs) -> Result<String> {
    let mut p = args.common.load()?;
    if !args.support_table {
        p.uncertainty = exact_support(p.uncertainty);
    }
    let mut opts = args.common.scrs_options();
    opts.max_outer = args.max_outer;
    if args.newton {
        opts.retrieval = RetrievalMode::Newton;
    }
    let report = scrs::run_scrs(&p.system, &p.nominal, &p.uncertainty, &p.objective, &opts)?;
    let doc = json!({ "problem": p.name, "report": report });
    write_file(&args.common.out, "report.json", &to_json(&doc))?;
    write_file(&args.common.out, "trace.csv", &report.trace_csv())?;
    Ok(format!(
        "{:?} after {} iterations, objective {}\n",
        report.termination,
        report.iterates.len() - 1,
        csv_float(report.final_objective())
    ))
}

pub fn cmd_margin(args: &MarginArgs) -> Result<String> {
    let p = args.common.load()?;
    let norm = args.common.norm(&p)?;
    let opts = args.common.scrs_options();
    let pt = if args.solve_first {
        let report = scrs::run_scrs(&p.system, &p.nominal, &UncertaintyModel::None, &p.objective, &opts)?;
        NominalPoint::new(&p.system, report.final_x(), report.final_u(), p.nominal.w0.clone())?
    } else {
        p.nominal.clone()
    };
    let gamma_star = match scrs::robustness_margin(&p.system, &pt, norm, &opts.solver) {
        Ok(g) => g,
        Err(Error::InfiniteMargin) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    let shown = if gamma_star.is_finite() { csv_float(gamma_star) } else { "inf".into() };
    let mut doc = json!({
        "problem": p.name,
        "norm": norm,
        "gamma_star": if gamma_star.is_finite() { json!(gamma_star) } else { json!("inf") },
        "u": pt.u0.as_slice(),
        "x": pt.x0.as_slice(),
    });
    if let Some(g) = args.common.gamma {
        doc["gamma"] = json!(g);
        doc["certified"] = json!(gamma_star >= g);
    }
    write_file(&args.common.out, "margin.json", &to_json(&doc))?;
    Ok(format!("{shown}\n"))
}

/// One grid cell of a region scan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionRow {
    pub ui: f64,
    pub uj: f64,
    pub in_restriction: bool,
    /// `None` where no oracle applies.
    pub in_true_set: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionSpec {
    /// 0-based u indices.
    pub axes: (usize, usize),
    pub grid: usize,
    pub range_i: (f64, f64),
    pub range_j: (f64, f64),
    pub seed: u64,
}

fn grid_value(range: (f64, f64), k: usize, grid: usize) -> f64 {
    if grid == 1 {
        return 0.5 * (range.0 + range.1);
    }
    range.0 + (range.1 - range.0) * k as f64 / (grid - 1) as f64
}

/// `x^2 + u1 x + u2 = 0` has a root in `[-2, 2]`.
pub fn quadratic_oracle(u1: f64, u2: f64) -> bool {
    let disc = u1 * u1 - 4.0 * u2;
    if disc < 0.0 {
        return false;
    }
    let s = disc.sqrt();
    [(-u1 + s) / 2.0, (-u1 - s) / 2.0].iter().any(|r| r.abs() <= 2.0)
}

const TRUE_SET_TOL: f64 = 1e-9;
const MULTISTARTS: usize = 8;

fn true_set_member(p: &Problem, u: &DVector<f64>, starts: &[DVector<f64>]) -> Result<bool> {
    let opts = ScrsOptions {
        retrieval: RetrievalMode::Newton,
        eps3: TRUE_SET_TOL,
        max_picard: 100,
        ..ScrsOptions::default()
    };
    let w = &p.nominal.w0;
    for x in starts {
        match scrs::retrieve_implicit(&p.system, u, w, x, &opts) {
            Ok(r) => {
                let h = model::evaluate_h(&p.system, &r.x, u, w)?;
                if h.iter().all(|&v| v <= TRUE_SET_TOL) {
                    return Ok(true);
                }
            }
            Err(Error::RetrievalFailed { .. }) | Err(Error::SingularJacobian { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(false)
}

/// Classify every grid cell against the restriction at the nominal point
/// and, for problems without uncertainty, against the true feasible set.
/// Rows come in row-major order over `(u_i, u_j)`.
pub fn sample_region(p: &Problem, spec: &RegionSpec, opts: &ScrsOptions) -> Result<Vec<RegionRow>> {
    let m = p.system.dims().m;
    let (ai, aj) = spec.axes;
    if ai >= m || aj >= m || ai == aj {
        return Err(Error::InvalidOption(format!("axes must be two distinct indices in 1..={m}")));
    }
    if spec.grid == 0 {
        return Err(Error::InvalidOption("grid must be at least 1".into()));
    }
    let prog = restriction::build(
        &p.system,
        &p.nominal,
        &p.uncertainty,
        Objective::Minimize(p.objective.coefficients.clone()),
    )?;
    let robust = !matches!(p.uncertainty, UncertaintyModel::None);
    let closed_form = p.name == "quadratic" && m == 2 && !robust;
    let lambda = prog.kdata.lambda.clone();
    let c_svd = p.system.c_mat.clone().svd(true, true);
    let n = p.system.dims().n;
    let x0 = &p.nominal.x0;
    let cells: Vec<(usize, usize)> = (0..spec.grid).flat_map(|a| (0..spec.grid).map(move |b| (a, b))).collect();
    cells
        .par_iter()
        .map(|&(a, b)| -> Result<RegionRow> {
            let ui = grid_value(spec.range_i, a, spec.grid);
            let uj = grid_value(spec.range_j, b, spec.grid);
            let mut u = p.nominal.u0.clone();
            u[ai] = ui;
            u[aj] = uj;
            let member = prog.check_membership(u.as_slice(), &opts.solver)?;
            let in_restriction = member.status == crate::conic::Status::Optimal;
            let in_true_set = if robust {
                None
            } else if closed_form {
                Some(quadratic_oracle(u[0], u[1]))
            } else {
                let mut starts = Vec::with_capacity(MULTISTARTS + 2);
                if in_restriction {
                    let zc = (&member.zl + &member.zu) * 0.5;
                    if let Ok(xc) = c_svd.solve(&zc, 1e-12) {
                        if let Ok(r) = scrs::retrieve_with_lambda(&p.system, &lambda, &u, &p.nominal.w0, &xc, opts, false) {
                            starts.push(r.x);
                        }
                    }
                }
                starts.push(x0.clone());
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((a * spec.grid + b) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                for _ in 0..MULTISTARTS {
                    starts.push(DVector::from_fn(n, |k, _| {
                        x0[k] + (1.0 + x0[k].abs()) * rng.gen_range(-2.0..=2.0)
                    }));
                }
                Some(true_set_member(p, &u, &starts)?)
            };
            Ok(RegionRow {
                ui,
                uj,
                in_restriction,
                in_true_set,
            })
        })
        .collect()
}

pub fn region_csv(rows: &[RegionRow], axes: (usize, usize)) -> String {
    let mut out = format!("u_{},u_{},in_restriction,in_true_set\n", axes.0 + 1, axes.1 + 1);
    for r in rows {
        let t = match r.in_true_set {
            Some(true) => "1",
            Some(false) => "0",
            None => "NA",
        };
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_float(r.ui),
            csv_float(r.uj),
            u8::from(r.in_restriction),
            t
        ));
    }
    out
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::InvalidOption(format!("bad {what} '{s}'")))
}

pub fn cmd_sample_region(args: &RegionArgs) -> Result<String> {
    let p = args.common.load()?;
    let axes = parse_list(&args.axes, "axes")?;
    let [i, j] = axes[..] else {
        return Err(Error::InvalidOption("axes take two indices, e.g. 1,2".into()));
    };
    if i < 1.0 || j < 1.0 || i.fract() != 0.0 || j.fract() != 0.0 {
        return Err(Error::InvalidOption("axes are 1-based integers".into()));
    }
    let axes = (i as usize - 1, j as usize - 1);
    let (range_i, range_j) = match parse_list(&args.range, "range")?[..] {
        [lo, hi] => ((lo, hi), (lo, hi)),
        [a, b, c, d] => ((a, b), (c, d)),
        _ => return Err(Error::InvalidOption("range takes lo,hi or lo1,hi1,lo2,hi2".into())),
    };
    let spec = RegionSpec {
        axes,
        grid: args.grid,
        range_i,
        range_j,
        seed: args.common.seed,
    };
    let rows = sample_region(&p, &spec, &args.common.scrs_options())?;
    write_file(&args.common.out, "region.csv", &region_csv(&rows, axes))?;
    let inside = rows.iter().filter(|r| r.in_restriction).count();
    Ok(format!("{inside} of {} grid points in the restriction\n", rows.len()))
}

pub fn cmd_dump_program(args: &DumpArgs) -> Result<String> {
    let p = args.common.load()?;
    let prog = restriction::build(
        &p.system,
        &p.nominal,
        &p.uncertainty,
        Objective::Minimize(p.objective.coefficients.clone()),
    )?;
    let (convex, _) = prog.to_convex(None)?;
    Ok(convex.dump())
}

pub fn cmd_catalog(action: &CatalogAction) -> Result<String> {
    match action {
        CatalogAction::List => Ok(catalog::NAMES.iter().map(|n| format!("{n}\n")).collect()),
        CatalogAction::Dump { name } => problem::serialize_problem(&catalog::get(name)?),
    }
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Margin(a) => cmd_margin(a),
        Command::SampleRegion(a) => cmd_sample_region(a),
        Command::Catalog { action } => cmd_catalog(action),
        Command::DumpProgram(a) => cmd_dump_program(a),
    }
}

/// Error JSON written to stderr on failure.
pub fn error_json(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}
