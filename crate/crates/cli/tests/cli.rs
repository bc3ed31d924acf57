use std::path::{Path, PathBuf};
use std::process::Command;

fn jcas() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jcas"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"
seed = 5
trials = 2

[joint]
packets = 2
slots = 8
gamp_max_iter = 30

[sweep]
axis = "ebn0_db"
values = [10.0]
"#;

fn run_to(cfg: &Path, out: &Path) -> std::process::Output {
    jcas()
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run_to(&cfg, &a).status.success());
    assert!(run_to(&cfg, &b).status.success());
    for f in ["trace.csv", "summary.csv", "xhat_ebn0_db_10.txt"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# schema: jcas-trace/1\n"));
    assert_eq!(trace.lines().count(), 2 + 2 * 2);

    let out = jcas()
        .args(["compare", a.join("trace.csv").to_str().unwrap(), b.join("trace.csv").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn output_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let target = dir.path().join("from_env");
    let status = jcas()
        .args(["run", cfg.to_str().unwrap()])
        .env("JCAS_OUTPUT_DIR", &target)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(target.join("trace.csv").exists());
}

#[test]
fn compare_fails_beyond_tolerance_and_on_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let s = dir.path().join("s.csv");
    std::fs::write(&a, "# schema: jcas-trace/1\nk,mse\n1,0.5\n").unwrap();
    std::fs::write(&b, "# schema: jcas-trace/1\nk,mse\n1,0.5000000005\n").unwrap();
    std::fs::write(&s, "# schema: jcas-summary/1\nk,mse\n1,0.5\n").unwrap();
    let tol = dir.path().join("tol.toml");
    std::fs::write(&tol, "[columns]\nmse = 1e-6\n").unwrap();

    let code = |args: &[&Path]| {
        let mut c = jcas();
        c.arg("compare");
        for a in args {
            c.arg(a);
        }
        c.status().unwrap().code()
    };
    assert_eq!(code(&[&a, &b]), Some(1));
    assert_eq!(code(&[&a, &s]), Some(1));
    let st = jcas()
        .args(["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--tol-file", tol.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
}

#[test]
fn validate_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "not a codebook\n").unwrap();
    for kind in ["codebook", "scene", "geometry"] {
        let st = jcas().args(["validate", kind, bad.to_str().unwrap()]).status().unwrap();
        assert_eq!(st.code(), Some(1), "{kind}");
    }
    let bundled = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/scma_6x4.txt");
    let out = jcas().args(["validate", "codebook", bundled]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("6 users"));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "trials = 0\n[sweep]\naxis = \"mu\"\nvalues = [0.0]\n");
    assert_eq!(run_to(&cfg, &dir.path().join("o")).status.code(), Some(1));
}

#[test]
fn failing_point_is_reported_and_others_continue() {
    let dir = tempfile::tempdir().unwrap();
    // 2 users cannot use the bundled 6-user codebook file.
    let body = format!(
        "seed = 1\ntrials = 1\n[scenario]\ncodebook = \"{}\"\n[joint]\npackets = 1\nslots = 4\ngamp_max_iter = 20\n[sweep]\naxis = \"n_users\"\nvalues = [2, 6]\n",
        concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/scma_6x4.txt")
    );
    let cfg = write_config(dir.path(), &body);
    let out_dir = dir.path().join("o");
    let out = run_to(&cfg, &out_dir);
    assert_eq!(out.status.code(), Some(2));
    let errors = std::fs::read_to_string(out_dir.join("errors.txt")).unwrap();
    assert!(errors.contains("n_users = 2"));
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.contains("n_users,6.0,0,1,"));
}
