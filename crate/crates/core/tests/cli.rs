use std::path::Path;
use std::process::{Command, Output};

fn convres(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convres"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn bare(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convres")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn solve_is_byte_for_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = convres(&["solve", "catalog:park-poly", "--gamma", "0.05"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(read(a.path(), "report.json"), read(b.path(), "report.json"));
    assert_eq!(read(a.path(), "trace.csv"), read(b.path(), "trace.csv"));
}

#[test]
fn solve_trace_descends() {
    let dir = tempfile::tempdir().unwrap();
    let o = convres(&["solve", "--problem", "catalog:park-poly"], dir.path());
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("Converged after "), "{stdout}");
    let trace = read(dir.path(), "trace.csv");
    let objectives: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(objectives.len() > 2);
    assert!(objectives.windows(2).all(|w| w[1] <= w[0]), "{objectives:?}");
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["problem"], "park-poly");
    let last = *objectives.last().unwrap();
    assert!((last + 1.047632).abs() < 1e-5, "{last}");
}

#[test]
fn quadratic_region_never_certifies_an_infeasible_control() {
    let dir = tempfile::tempdir().unwrap();
    let o = convres(
        &["sample-region", "catalog:quadratic", "--grid", "200", "--axes", "1,2", "--range", "-8,8"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(dir.path(), "region.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("u_1,u_2,in_restriction,in_true_set"));
    let mut inside = 0;
    let mut rows = 0;
    for line in lines {
        rows += 1;
        let f: Vec<&str> = line.split(',').collect();
        let (u1, u2): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        if f[2] == "1" {
            inside += 1;
            assert_eq!(f[3], "1", "{line}");
            // a root of x^2 + u1 x + u2 in [-2, 2]
            let disc = u1 * u1 - 4.0 * u2;
            assert!(disc >= 0.0, "{line}");
            let roots = [(-u1 + disc.sqrt()) / 2.0, (-u1 - disc.sqrt()) / 2.0];
            assert!(roots.iter().any(|r| r.abs() <= 2.0 + 1e-9), "{line}");
        }
    }
    assert_eq!(rows, 200 * 200);
    assert!(inside > 0);
}

#[test]
fn margin_at_the_park_start_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    let o = convres(&["margin", "catalog:park-poly", "--norm", "two", "--gamma", "0.01"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let shown: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(shown > 0.0);
    let doc: serde_json::Value = serde_json::from_str(&read(dir.path(), "margin.json")).unwrap();
    assert_eq!(doc["gamma_star"].as_f64().unwrap(), shown);
    assert_eq!(doc["certified"].as_bool().unwrap(), shown >= 0.01);
}

#[test]
fn margin_without_uncertainty_channels_prints_inf() {
    let dir = tempfile::tempdir().unwrap();
    let o = convres(&["margin", "catalog:quadratic"], dir.path());
    assert!(o.status.success());
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "inf\n");
}

#[test]
fn failures_emit_error_json_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = convres(&["solve", "catalog:no-such-thing"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "unknown_catalog");
    assert!(err["message"].as_str().unwrap().contains("no-such-thing"));
    assert!(!dir.path().join("report.json").exists());

    let o = convres(&["solve", "catalog:park-poly", "--gamma=-1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "negative_radius");
}

#[test]
fn catalog_dump_loads_back_as_a_file() {
    let o = bare(&["catalog", "dump", "park-poly"]);
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("park.toml");
    std::fs::write(&file, &o.stdout).unwrap();
    let from_file = convres(&["solve", file.to_str().unwrap()], dir.path());
    let file_report = read(dir.path(), "trace.csv");
    let from_catalog = convres(&["solve", "catalog:park-poly"], dir.path());
    assert!(from_file.status.success() && from_catalog.status.success());
    assert_eq!(file_report, read(dir.path(), "trace.csv"));

    let list = String::from_utf8(bare(&["catalog", "list"]).stdout).unwrap();
    assert!(list.lines().any(|l| l == "park-poly"));
}

#[test]
fn dump_program_prints_the_restriction() {
    let o = bare(&["dump-program", "catalog:quadratic"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("program "), "{text}");
    assert!(text.lines().any(|l| l.starts_with("con ")));
}
