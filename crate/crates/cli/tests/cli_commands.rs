use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).to_string_lossy().into_owned()
}

fn feeder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feeder")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn missing_case_is_an_input_error_naming_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = feeder(&["powerflow", "--case", "/nonexistent/case.m", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/case.m"));
}

#[test]
fn powerflow_on_case33_writes_one_row_per_bus() {
    let tmp = tempfile::tempdir().unwrap();
    let out = feeder(&["powerflow", "--case", &data("case33bw.m"), "--out", s(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let buses = read(tmp.path().join("buses.csv"));
    assert_eq!(buses.lines().next(), Some("bus,v_pu,u_pu,v_kv"));
    assert_eq!(buses.lines().count(), 34);
    assert!(!buses.contains('\r'));
    assert_eq!(read(tmp.path().join("flows.csv")).lines().count(), 33);
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn out_of_range_eps_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    for eps in ["0", "0.5", "-0.1"] {
        let out = feeder(&["opf", "--case", &data("case33bw.m"), "--pv", &data("pv_fleet33.cfg"), "--model", "chance", "--eps", eps, "--out", s(tmp.path())]);
        assert_eq!(out.status.code(), Some(2), "eps {eps}");
    }
}

#[test]
fn admm_cut_short_exits_with_non_convergence() {
    let tmp = tempfile::tempdir().unwrap();
    let out = feeder(&["opf", "--case", &data("case33bw.m"), "--pv", &data("pv_fleet33.cfg"), "--mode", "admm", "--max-iters", "5", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    // Partial results are still written.
    assert!(read(tmp.path().join("summary.csv")).contains(",false,5,"));
}

#[test]
fn validation_is_seeded_and_zero_without_uncertainty() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("flat.cfg");
    let fleet = read(PathBuf::from(data("pv_fleet33.cfg")));
    std::fs::write(&cfg, fleet.replace("sigma_frac = 0.1", "sigma_frac = 0")).unwrap();
    let run = tmp.path().join("run");
    let out = feeder(&["opf", "--case", &data("case33bw.m"), "--pv", s(&cfg), "--model", "chance", "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = feeder(&["validate-cc", s(&run), "--samples", "5000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read(run.join("validation/violations.csv"));
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let rate = rdr.headers().unwrap().iter().position(|h| h == "rate").unwrap();
    for rec in rdr.records() {
        assert_eq!(rec.unwrap()[rate].parse::<f64>().unwrap(), 0.0);
    }

    let fleet_run = tmp.path().join("fleet");
    assert!(feeder(&["opf", "--case", &data("case33bw.m"), "--pv", &data("pv_fleet33.cfg"), "--model", "chance", "--out", s(&fleet_run)]).status.success());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        assert!(feeder(&["validate-cc", s(&fleet_run), "--samples", "20000", "--seed", "7", "--out", s(dir)]).status.success());
    }
    assert_eq!(read(a.join("violations.csv")), read(b.join("violations.csv")));
    assert_eq!(read(a.join("summary.csv")), read(b.join("summary.csv")));
}

#[test]
fn rerun_accepts_a_directory_and_reproduces_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let out = feeder(&["policy-sweep", "--case", &data("case33bw.m"), "--pv", &data("pv_case1.cfg"), "--variant", "II", "--droop", "0:5:0.5", "--out", s(&first)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let second = tmp.path().join("second");
    assert!(feeder(&["rerun", s(&first), "--out", s(&second)]).status.success());
    for f in ["summary.csv", "sweep_flow-pq.csv", "references.csv"] {
        assert_eq!(read(first.join(f)), read(second.join(f)), "{f}");
    }
    assert!(read(first.join("summary.csv")).contains("flow-pq"));
}
