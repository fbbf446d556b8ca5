use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dhym_core::{load_field, load_records, save_records, AlmostHermitianStructure, GridSpec, Preset};
use tempfile::TempDir;

fn dhym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhym"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn result(dir: &Path) -> toml::Table {
    let text = fs::read_to_string(dir.join("result.toml")).unwrap();
    let doc: toml::Table = text.parse().unwrap();
    doc["result"].as_table().unwrap().clone()
}

fn f(t: &toml::Table, key: &str) -> f64 {
    t[key].as_float().unwrap_or_else(|| panic!("{key} missing"))
}

const CONSTANT_SOLVE: &str = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 16
[omega]
constant_multiple = 1.5574077246549023
[problem]
mode = "solve"
h = 2.0
[output]
directory = "out"
"#;

#[test]
fn constant_coefficient_solve() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", CONSTANT_SOLVE);
    let out = dhym(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    let r = result(&dir);
    assert_eq!(r["status"].as_str(), Some("converged"));
    assert!(f(&r, "c").abs() <= 1e-12);
    assert!(f(&r, "u_max_abs") <= 1e-10);
    let rec = load_field(dir.join("solution.field")).unwrap();
    assert!(rec.field.max_abs() <= 1e-10);
    let doc: toml::Table = fs::read_to_string(dir.join("result.toml")).unwrap().parse().unwrap();
    assert_eq!(doc["config"]["problem"]["h"].as_float(), Some(2.0));
    assert_eq!(doc["config"]["solver"]["residual_tol"].as_float(), Some(1e-10));
}

#[test]
fn solve_is_deterministic_and_roundtrips() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[geometry]
preset = "twisted"
epsilon = 0.25
n = 2
points_per_axis = 8
[omega]
constant_multiple = 2.0
[problem]
mode = "manufactured"
h = "from_u_star"
u_star = "reference"
[output]
directory = "out"
"#;
    let cfg = write_config(tmp.path(), "run.toml", text);
    let dir = tmp.path().join("out");
    assert_eq!(code(&dhym(&["solve", cfg.to_str().unwrap()])), 0);
    let field_a = fs::read(dir.join("solution.field")).unwrap();
    let result_a = fs::read(dir.join("result.toml")).unwrap();
    assert_eq!(code(&dhym(&["solve", cfg.to_str().unwrap()])), 0);
    assert_eq!(field_a, fs::read(dir.join("solution.field")).unwrap());
    assert_eq!(result_a, fs::read(dir.join("result.toml")).unwrap());

    let r = result(&dir);
    let err = f(&r, "max_error_vs_u_star");
    assert!(err > 0.0 && err < 1e-2, "{err}");
    let rec = load_field(dir.join("solution.field")).unwrap();
    save_records(tmp.path().join("copy.field"), std::slice::from_ref(&rec)).unwrap();
    assert_eq!(fs::read(tmp.path().join("copy.field")).unwrap(), field_a);
    assert_eq!(load_field(tmp.path().join("copy.field")).unwrap(), rec);
}

#[test]
fn subcritical_h_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &CONSTANT_SOLVE.replace("h = 2.0", "h = 1.0"));
    let out = dhym(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hypercritical"));
}

#[test]
fn unknown_keys_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{CONSTANT_SOLVE}\n[solver]\nresidual_tolerance = 1e-8\n");
    let cfg = write_config(tmp.path(), "run.toml", &text);
    assert_eq!(code(&dhym(&["solve", cfg.to_str().unwrap()])), 2);
    let text = CONSTANT_SOLVE.replace("h = 2.0", "h = 2.0\nu_sub = { file = \"a\", extra = 1 }");
    let cfg = write_config(tmp.path(), "run2.toml", &text);
    assert_eq!(code(&dhym(&["solve", cfg.to_str().unwrap()])), 2);
    assert_eq!(code(&dhym(&["solve", tmp.path().join("missing.toml").to_str().unwrap()])), 2);
}

#[test]
fn nonconvergence_exit_code() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 8
[omega]
constant_multiple = 2.0
[problem]
mode = "manufactured"
h = "from_u_star"
u_star = "reference"
[solver]
max_newton_iters = 1
[output]
directory = "out"
"#;
    let cfg = write_config(tmp.path(), "run.toml", text);
    let out = dhym(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert_eq!(result(&tmp.path().join("out"))["status"].as_str(), Some("failed"));
}

const CONSTANT_PATH: &str = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 16
[omega]
constant_multiple = 1.2601582175503392
[problem]
mode = "path"
h = 2.2
[output]
directory = "out"
checkpoint_every = 2
"#;

#[test]
fn constant_path_reaches_t1() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", CONSTANT_PATH);
    let out = dhym(&["path", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    let r = result(&dir);
    assert_eq!(r["completed"].as_bool(), Some(true));
    assert_eq!(f(&r, "final_t"), 1.0);
    assert!((f(&r, "final_c") + 0.4).abs() <= 1e-8);
    let series = fs::read_to_string(dir.join("series.csv")).unwrap();
    assert!(series.starts_with("t,c_t,residual,"));
    assert_eq!(series.lines().count() as i64, r["states"].as_integer().unwrap() + 1);
    let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    let last = manifest.lines().last().unwrap();
    assert!(last.starts_with(|c: char| c.is_ascii_digit()));
    assert_eq!(last.split(';').nth(1), Some("1"));

    // Restarting from the final checkpoint finishes immediately.
    let out = dhym(&["path", cfg.to_str().unwrap(), "--restart"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(f(&result(&dir), "final_t"), 1.0);
}

#[test]
fn path_below_theta0_reports_supersolution_failure() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", &CONSTANT_PATH.replace("h = 2.2", "h = 1.7"));
    let out = dhym(&["path", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("supersolution.is_supersolution:false"));
}

#[test]
fn hostile_path_underflows_and_keeps_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 8
[omega]
constant_multiple = 1.2601582175503392
[problem]
mode = "path"
h = 2.2
u_hat = "reference"
[solver]
residual_tol = 1e-300
max_newton_iters = 8
[path]
dt_init = 0.1
dt_min = 0.02
[output]
directory = "out"
"#;
    let cfg = write_config(tmp.path(), "run.toml", text);
    let out = dhym(&["path", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    let last = manifest.lines().last().unwrap().split(';').collect::<Vec<_>>();
    let rec = load_field(dir.join(last[3])).unwrap();
    assert_eq!(rec.get_f64("t").unwrap(), 0.0);
    assert!(result(&dir)["failure"].as_str().unwrap().contains("dt_min"));
}

const CHECK: &str = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 8
[omega]
constant_multiple = 2.0
[problem]
mode = "solve"
h = 2.356194490192345
"#;

#[test]
fn check_subsolution_margins() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", CHECK);
    let out = dhym(&["check", cfg.to_str().unwrap(), "--subsolution"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let margin: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("subsolution.worst_margin:"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((margin - 0.3217505543966422).abs() < 1e-12, "{margin}");

    let cfg = write_config(tmp.path(), "run1.toml", &CHECK.replace("2.0", "1.0"));
    let out = dhym(&["check", cfg.to_str().unwrap(), "--subsolution"]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("subsolution.is_subsolution:false"));

    let out = dhym(&["check", cfg.to_str().unwrap()]);
    assert!(stdout(&out).contains("structure.all_pass:true"));
    assert!(stdout(&out).contains("supersolution.is_supersolution:"));
}

#[test]
fn corrupted_frame_file_exits_4() {
    let tmp = TempDir::new().unwrap();
    let spec = GridSpec::new(2, 8).unwrap();
    let s = AlmostHermitianStructure::build(Preset::Flat, spec).unwrap();
    let mut records = s.frame_records();
    // e₂ := e₁ makes the frame degenerate.
    for part in ["re", "im"] {
        for a in 1..=4 {
            let src = records
                .iter()
                .find(|r| r.name == format!("frame[1][{a}].{part}"))
                .unwrap()
                .field
                .clone();
            let dst = records
                .iter_mut()
                .find(|r| r.name == format!("frame[2][{a}].{part}"))
                .unwrap();
            dst.field = src;
        }
    }
    save_records(tmp.path().join("frame.field"), &records).unwrap();
    assert_eq!(load_records(tmp.path().join("frame.field")).unwrap().len(), records.len());
    let text = CHECK.replace(
        "preset = \"flat\"\nn = 2\npoints_per_axis = 8",
        "preset = \"tabulated\"\nframe_file = \"frame.field\"",
    );
    let cfg = write_config(tmp.path(), "run.toml", &text);
    let out = dhym(&["check", cfg.to_str().unwrap(), "--structure"]);
    assert_eq!(code(&out), 4);
    assert!(stdout(&out).contains("structure.frame_independent:false"));
    let out = dhym(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn manufacture_writes_h() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
[geometry]
preset = "flat"
n = 2
points_per_axis = 8
[omega]
constant_multiple = 2.0
[problem]
mode = "manufactured"
h = "from_u_star"
u_star = { terms = [{ amplitude = 0.05, wave = [1.0] }] }
"#;
    let cfg = write_config(tmp.path(), "run.toml", text);
    let out_dir = tmp.path().join("m");
    let out = dhym(&["manufacture", cfg.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let h = load_field(out_dir.join("h.field")).unwrap().field;
    assert!(h.min() > std::f64::consts::FRAC_PI_2);
    let doc: toml::Table = fs::read_to_string(out_dir.join("result.toml")).unwrap().parse().unwrap();
    assert_eq!(doc["config"]["seed"].as_integer(), Some(3));
}
