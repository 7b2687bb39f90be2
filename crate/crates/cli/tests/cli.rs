use std::path::Path;
use std::process::{Command, Output};

fn allpath(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_allpath"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn simulate_writes_reports_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = allpath(
        dir.path(),
        &[
            "simulate",
            "--topology",
            "grid:2",
            "--protocol",
            "flow-path",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.json",
        "links.csv",
        "tables.csv",
        "table_dump.csv",
        "simulate.manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["protocol"], "flow_path");
    let m: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "simulate.manifest.json")).unwrap();
    assert_eq!(m["subcommand"], "simulate");
    assert_eq!(m["seed"], 1);
    assert!(m["wall_clock_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn same_arguments_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "balance",
        "--rho",
        "0.5,0.9",
        "--replications",
        "3",
        "--duration",
        "50",
        "--seed",
        "9",
    ];
    assert!(allpath(a.path(), &args).status.success());
    assert!(allpath(b.path(), &args).status.success());
    assert_eq!(read(a.path(), "balance.csv"), read(b.path(), "balance.csv"));
}

#[test]
fn scalability_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = allpath(
        dir.path(),
        &[
            "scalability",
            "--grid",
            "crossed",
            "--n-range",
            "2..4",
            "--hosts",
            "4",
        ],
    );
    assert!(o.status.success());
    let csv = read(dir.path(), "scalability.csv");
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("n,H,B_E,b,L_e"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn qbd_rows_per_load() {
    let dir = tempfile::tempdir().unwrap();
    let o = allpath(
        dir.path(),
        &["qbd", "--c1", "5", "--c2", "5", "--rho", "1,4"],
    );
    assert!(o.status.success());
    let csv = read(dir.path(), "qbd.csv");
    assert_eq!(csv.lines().count(), 3);
    // Eleven gap values per load.
    assert_eq!(read(dir.path(), "qbd_gap.csv").lines().count(), 1 + 2 * 11);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_allpath"))
        .env("ALLPATH_OUT", dir.path())
        .args(["qbd", "--c1", "1", "--c2", "1", "--rho", "1"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("qbd.manifest.json").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["simulate", "--protocol", "stp"],
        &["simulate", "--workload", "everything"],
        &["simulate", "--topology", "grid:x"],
        &["qbd", "--c1", "0", "--c2", "3", "--rho", "1"],
        &["qbd", "--c1", "2", "--c2", "3"],
        &["scalability", "--n-range", "5..2"],
        &["balance", "--paths", "0"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = allpath(dir.path(), args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("not-a-dir");
    std::fs::write(&blocker, "").unwrap();
    let o = allpath(&blocker, &["qbd", "--c1", "1", "--c2", "1", "--rho", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_of_missing_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = allpath(dir.path(), &["replay", "nowhere.json"]);
    assert_eq!(o.status.code(), Some(2));
}
