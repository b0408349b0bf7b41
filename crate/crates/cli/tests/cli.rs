use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn frt_reach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frt-reach")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_1D: &str = "[system]\nname = integrator1d\n[grid]\nmin = 0\nmax = 6\ncount = 121\n\
                        [target]\nshape = affine\noffset = 2\ncoeffs = -1\nclip_low = -2\nclip_high = 10\n\
                        [solver]\nformulations = frt, brt\ngamma = 2\ndt_vi = 0.02\n";

const SMALL_PENDULUM: &str = "[system]\nname = pendulum\n[grid]\nmin = 1.2707963267948966, -1.3\n\
                              max = 6.583185307179586, 1.3\ncount = 61, 41\n\
                              [target]\nshape = pendulum\nclip_low = -1\nclip_high = 1\n\
                              [solver]\ngamma = 5\ndt_vi = 0.05\n";

#[test]
fn missing_grid_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", "[system]\nname = integrator1d\n[target]\nshape = interval\na = 0\nb = 1\n");
    let out = frt_reach(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid"));
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.cfg", &SMALL_1D.replace("gamma = 2", "gamma = 2\ngamme = 3"));
    let out = frt_reach(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamme"));
}

#[test]
fn foot_point_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fast.cfg", &SMALL_1D.replace("dt_vi = 0.02", "dt_vi = 0.5"));
    let out = frt_reach(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_1D);
    let out = frt_reach(&["--out-dir", d, "solve", "--config", &cfg, "--formulation", "brt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("formulation=brt\n") && stdout.contains("converged=true\n"), "{stdout}");
    assert!(dir.path().join("brt.hjf").exists());
    let residuals = fs::read_to_string(dir.path().join("brt.residuals.csv")).unwrap();
    assert!(residuals.starts_with("iteration,residual\n1,"));

    let field = dir.path().join("frt.hjf");
    let out = frt_reach(&["solve", "--config", &cfg, "--out", field.to_str().unwrap()]);
    assert!(out.status.success());
    let f = field.to_str().unwrap();
    let out = frt_reach(&["--out-dir", d, "check", "--value", f, "--set", f, "--system", "integrator1d", "--gamma", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("verdict=fixed_point\n"), "{report}");
    assert_eq!(fs::read_to_string(dir.path().join("check_report.txt")).unwrap(), report);
    assert!(fs::read_to_string(dir.path().join("check_violations.csv")).unwrap().starts_with("x1,residual,suspected_kink\n"));
}

#[test]
fn single_pendulum_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "pend.cfg", SMALL_PENDULUM);
    let out = frt_reach(&["--out-dir", d, "solve", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let value = dir.path().join("frt.hjf");
    let out = frt_reach(&["--out-dir", d, "pendulum", "--value", value.to_str().unwrap(), "--x0", "4,0.4", "--T", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("steps=201\n"));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,u,d,h,lhs,feasible\n"));
    assert_eq!(csv.lines().count(), 202);
}

#[test]
fn di_config_prints_four_verdicts() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/di_frt.cfg");
    let text = fs::read_to_string(cfg).unwrap().replace("count = 401, 301", "count = 161, 121");
    let dir = tempfile::tempdir().unwrap();
    let small = write(dir.path(), "di.cfg", &text.replace("dt_vi = 0.02", "dt_vi = 0.05"));
    let out = frt_reach(&["--out-dir", dir.path().to_str().unwrap(), "run", "--config", &small]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let verdicts: Vec<String> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter(|l| l.split(' ').count() == 2)
        .map(str::to_string)
        .collect();
    assert_eq!(verdicts, ["Sa strict_superset", "Sb strict_superset", "Sc fixed_point", "Sd fixed_point"]);
    for set in ["Sa", "Sb", "Sc", "Sd"] {
        assert!(dir.path().join(format!("{set}_frt.hjf")).exists());
        assert!(dir.path().join(format!("contours_{set}_frt.csv")).exists());
    }
    assert!(dir.path().join("manifest.txt").exists());
}

#[test]
fn bundled_configs_parse() {
    for name in ["1d_comparison", "di_frt", "pendulum_distance_filter"] {
        let path = format!("{}/examples/{name}.cfg", env!("CARGO_MANIFEST_DIR"));
        frt_reach::cli_io::ExperimentConfig::load(Path::new(&path)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn repeated_runs_write_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.cfg", SMALL_1D);
    let read = |sub: &str| {
        let d = dir.path().join(sub);
        let out = frt_reach(&["--out-dir", d.to_str().unwrap(), "--seed", "3", "run", "--config", &cfg]);
        assert!(out.status.success());
        frt_reach::cli_io::Manifest::parse(&fs::read_to_string(d.join("manifest.txt")).unwrap()).unwrap().without_timing()
    };
    assert_eq!(read("a"), read("b"));
}
