use std::path::PathBuf;
use std::process::{Command, Output};

fn pdrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdrl"))
        .args(args)
        .output()
        .expect("spawn pdrl")
}

fn instance() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/two_state.json")
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_tabular_prints_closed_form_values() {
    let out = pdrl(&["solve-tabular", &instance()]);
    assert!(out.status.success());
    let text = stdout(&out);
    // V(1) = 1 / (1 - 0.81), V(0) = 0.9 V(1)
    assert!(text.contains("V* 4.7368421053 5.2631578947"), "{text}");
    assert!(text.contains("greedy actions 1 0"));
}

#[test]
fn pd_tabular_writes_gap_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gaps.csv");
    let args = [
        "pd-tabular",
        &instance(),
        "--iters",
        "3000",
        "--window",
        "1000",
        "--seed",
        "4",
        "--out",
        path.to_str().unwrap(),
    ];
    let out = pdrl(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,duality_gap");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3000,"));

    let again = dir.path().join("again.csv");
    let mut args2 = args;
    args2[9] = again.to_str().unwrap();
    assert!(pdrl(&args2).status.success());
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn train_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let curves = dir.path().join("curves.csv");
    let out = pdrl(&[
        "train",
        "--algo",
        "both",
        "--trials",
        "2",
        "--episodes",
        "5",
        "--hidden",
        "8",
        "--seed",
        "3",
        "--out",
        csv.to_str().unwrap(),
        "--curves",
        curves.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 5);
    assert_eq!(
        std::fs::read_to_string(&curves).unwrap().lines().count(),
        1 + 2 * 5
    );

    let path = csv.to_str().unwrap();
    let out = pdrl(&["compare", "--pd", path, "--ac", path]);
    assert!(out.status.success());
    let report = stdout(&out);
    assert!(report.contains("solved 0/2"), "{report}");
    assert!(report.contains("median difference (pd - ac): 0.0"));
}

#[test]
fn train_is_deterministic_on_stdout() {
    let args = [
        "train",
        "--algo",
        "ac",
        "--trials",
        "2",
        "--episodes",
        "4",
        "--hidden",
        "4",
        "--seed",
        "9",
    ];
    assert_eq!(pdrl(&args).stdout, pdrl(&args).stdout);
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let out = pdrl(&[
        "train",
        "--trials",
        "1",
        "--episodes",
        "2",
        "--hidden",
        "4",
        "--sweep-eta-v",
        "1e-3,1e-2",
        "--sweep-eta-pi",
        "1e-5,1e-4,1e-3",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.starts_with("eta_v,eta_pi,algorithm"));
}

#[test]
fn gradcheck_passes() {
    let out = pdrl(&["gradcheck", "--nets", "5"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn configuration_errors_exit_nonzero_with_message() {
    for args in [
        vec!["train", "--trials", "0"],
        vec!["train", "--gamma", "1.5"],
        vec!["train", "--eta-v", "-1"],
        vec!["solve-tabular", "/nonexistent/instance.json"],
        vec!["frobnicate"],
    ] {
        let out = pdrl(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
    let out = pdrl(&["pd-tabular", &instance(), "--eta-v", "0"]);
    assert!(!out.status.success());
}

#[test]
fn invalid_instance_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"n_states":1,"n_actions":1,"transition":[[[0.5]]],"reward":[[0.0]],"gamma":0.9,"q":[1.0]}"#,
    )
    .unwrap();
    let out = pdrl(&["solve-tabular", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sums to 0.5"));
}
