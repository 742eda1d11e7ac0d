use std::path::Path;
use std::process::{Command, Output};

fn tlz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlz")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SCAN_2D: &str = "\
m=0.5e6
axis1.param=F
axis1.lo=0.05
axis1.hi=0.5
axis1.count=5
axis2.param=kappa
axis2.lo=-0.4e-6
axis2.hi=0.4e-6
axis2.count=3
";

#[test]
fn sweep_prints_probability() {
    let out = tlz(&["sweep", "--m", "0.5e6", "--F", "0.1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let p: f64 = text.lines().find_map(|l| l.strip_prefix("P=")).unwrap().parse().unwrap();
    assert!((p - 0.7814).abs() < 2e-3, "{text}");
}

#[test]
fn deterministic_csv_is_byte_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN_2D);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (jobs, path) in [("1", &a), ("4", &b)] {
        let out = tlz(&[
            "--config", &cfg, "--jobs", jobs, "--deterministic", "--out", path.to_str().unwrap(), "scan",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# tlz-scan v"));
    assert!(!text.contains("wall_time"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 15);
}

#[test]
fn non_deterministic_csv_records_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN_2D);
    let out = tlz(&["--config", &cfg, "scan", "--set", "axis2.count=0"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("# wall_time_s="));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", "m=0.5e6\nsweep_rate=3\n");
    let out = tlz(&["--config", &cfg, "scan"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn malformed_set_is_rejected() {
    let out = tlz(&["scan", "--set", "axis1.param"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn strict_scan_with_failed_points_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // Default tolerances are too loose for α ≥ 2.5 here; the guard drops those rows.
    let cfg = write_config(
        dir.path(),
        "alpha.cfg",
        "mode=amplitude-error\nkappa=2e-6\nF=-0.031415926\nrel_tol=1e-10\nabs_tol=1e-12\n\
         axis1.param=alpha\naxis1.lo=0.5\naxis1.hi=4\naxis1.count=8\n",
    );
    let lenient = tlz(&["--config", &cfg, "--deterministic", "scan"]);
    assert_eq!(lenient.status.code(), Some(0));
    let text = String::from_utf8(lenient.stdout).unwrap();
    assert!(text.contains("# missing row="));
    assert!(text.contains("NaN"));

    let strict = tlz(&["--config", &cfg, "--strict", "scan"]);
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn svg_scan_has_cells_and_locus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scan.cfg", SCAN_2D);
    let out = tlz(&["--config", &cfg, "--format", "svg", "scan", "--set", "mode=analytic"]);
    assert!(out.status.success());
    let svg = String::from_utf8(out.stdout).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg.matches("class=\"cell\"").count(), 15);
}

#[test]
fn svg_is_refused_where_unsupported() {
    let out = tlz(&["--format", "svg", "sweep"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pt_locus_matches_closed_form() {
    let out = tlz(&[
        "pt-locus", "--m", "0.5e6", "--kappa-lo", "0.2e-6", "--kappa-hi", "1.4e-6", "--count", "3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    let f: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!((f + 0.0449).abs() < 1e-4, "{last}");
}

#[test]
fn pulse_reports_limits_on_stderr() {
    let out = tlz(&["pulse", "--m", "0.5e6", "--kappa", "0.2e-6", "--F", "0.3142", "--iq"]);
    assert!(out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("rabi:") && err.contains("duration:"));
    assert!(!err.contains("VIOLATED"));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.lines().count() > 100);
}

#[test]
fn strict_pulse_over_limits_exits_one() {
    let args = ["pulse", "--m", "0.5e6", "--kappa", "0.2e-6", "--F", "0.3142", "--T", "2e-5"];
    assert_eq!(tlz(&args).status.code(), Some(0));
    let mut strict = vec!["--strict"];
    strict.extend(args);
    assert_eq!(tlz(&strict).status.code(), Some(1));
}

#[test]
fn rabi_robustness_interval() {
    let out = tlz(&["robustness", "--method", "rabi"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# interval=[0.7949, 1.2051]"), "{text}");
}

#[test]
fn dephase_without_broadening_matches_sweep() {
    let lw = tlz(&["dephase", "--m", "0.5e6", "--F", "0.1", "--fwhm", "0"]);
    let sweep = tlz(&["sweep", "--m", "0.5e6", "--F", "0.1"]);
    let get = |o: &Output, key: &str| -> String {
        String::from_utf8(o.stdout.clone())
            .unwrap()
            .lines()
            .find_map(|l| l.strip_prefix(key).map(str::to_string))
            .unwrap()
    };
    assert_eq!(get(&lw, "P_lw="), get(&sweep, "P="));
}
