use tlz::pulse::{synthesize_drive, write_waveform_csv, WaveformColumns};
use tlz::scan::{export_csv, export_svg, parse_csv, run_scan, Axis, Param, ScanMode, ScanSpec};
use tlz::DriveParams;

fn two_axis_spec(mode: ScanMode) -> ScanSpec {
    ScanSpec::new(
        vec![Axis::linear(Param::F, -0.5, 0.5, 5), Axis::linear(Param::Kappa, 0.2e-6, 1.0e-6, 3)],
        DriveParams::new(0.5e6, 1e14, 0.0, 0.1),
        mode,
    )
}

#[test]
fn csv_file_round_trips_to_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let result = run_scan(&two_axis_spec(ScanMode::Numeric)).unwrap();
    export_csv(&result, &path, true).unwrap();
    let table = parse_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(table.columns, ["F", "kappa", "P", "norm_drift", "n_steps"]);
    let p = table.column("P").unwrap();
    for (cell, point) in p.iter().zip(&result.points) {
        assert_eq!(*cell, point.p);
    }
    // the exact F = 0 grid point was moved off the singular sweep
    assert!(table.column("F").unwrap().iter().all(|f| f.unwrap() != 0.0));
}

#[test]
fn analytic_scan_flags_the_limit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.csv");
    let result = run_scan(&two_axis_spec(ScanMode::Analytic)).unwrap();
    export_csv(&result, &path, true).unwrap();
    let table = parse_csv(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(table.columns, ["F", "kappa", "P"]);
    let limits: Vec<_> = table.comments.iter().filter(|c| c.starts_with("limit row=")).collect();
    assert_eq!(limits.len(), 3);
    assert_eq!(table.rows.len(), 15);
}

#[test]
fn svg_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scan.svg");
    export_svg(&run_scan(&two_axis_spec(ScanMode::Analytic)).unwrap(), &path).unwrap();
    let svg = std::fs::read_to_string(&path).unwrap();
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("pt-locus"));
}

#[test]
fn waveform_file_has_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wave.csv");
    let prog = synthesize_drive(&DriveParams::new(0.5e6, 1e14, 0.2e-6, 0.3142), 1e9).unwrap();
    write_waveform_csv(&prog, WaveformColumns::Iq, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let data = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(data, prog.samples.len() + 1);
}

#[test]
fn unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("scan.csv");
    let result = run_scan(&two_axis_spec(ScanMode::Analytic)).unwrap();
    assert!(matches!(export_csv(&result, &path, true), Err(tlz::TlzError::Io { .. })));
}
