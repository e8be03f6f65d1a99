use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[g]
sigma_lo = 0.8
sigma_hi = 1.2

[coefficients]
b = "0.5*sin(y)"
h = "0.2*cos(y)"
sigma = "1 + 0.25*tanh(y)"
f = "0.3*sin(x) - 0.2*y"
phi = "tanh(x)"
T = 0.2

[grid]
nx = 61

[run]
n_paths = 200
n_steps = 20
seed = 7
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gfbsde"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_flags() {
    for (cmd, flags) in [
        ("gheat", &["--config", "--steps", "--out"][..]),
        ("solve-pde", &["--config", "--out", "--emit-meta"]),
        ("simulate", &["--scenario", "--paths", "--steps", "--seed", "--gaussian"]),
        ("picard", &["--horizon", "--tol", "--max-iter"]),
        ("stitch", &["--delta0"]),
        ("mollify", &["--in", "--n"]),
        ("perturb", &["--config2", "--alpha", "--ladder"]),
        ("validate", &["--config", "--out"]),
    ] {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for f in flags.iter().chain(&["--threads"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
    let top = String::from_utf8(run(&["--help"]).stdout).unwrap();
    assert!(top.contains("3 numerical"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["solve-pde"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.toml", "[g]\nsgima_lo = 0.8\nsigma_hi = 1.2\n[coefficients]\n");
    let out = run(&["solve-pde", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.toml:2"), "{err}");
    assert!(err.contains("sigma_lo"), "{err}");
}

#[test]
fn solve_pde_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let (a, b, meta) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("m.txt"));
    for out in [&a, &b] {
        let o = run(&["solve-pde", "--config", s(&cfg), "--out", s(out), "--emit-meta", s(&meta)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let first = std::fs::read(&a).unwrap();
    assert_eq!(first, std::fs::read(&b).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("t,x,u,u_x,u_xx\n"));
    let meta = std::fs::read_to_string(meta).unwrap();
    for key in ["m0 = ", "lip = ", "cfl_dt_max = ", "terminal_residual = 0.0000000000000000e0"] {
        assert!(meta.contains(key), "{meta}");
    }
}

#[test]
fn simulate_scenarios() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = run(&["--threads", "2", "simulate", "--config", s(&cfg), "--paths", "50", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("path_id,t,X,Y,Z,K\n"));
    assert_eq!(text.lines().count(), 1 + 50 * 21);

    let pieces = write(&dir, "s.csv", "t,gamma\n0,0.64\n0.1,1.44\n");
    let o = run(&["simulate", "--config", s(&cfg), "--paths", "10", "--scenario", &format!("file:{}", s(&pieces)), "--out", s(&a)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&["simulate", "--config", s(&cfg), "--scenario", "const:2.0", "--out", s(&a)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gheat_triples() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let out = dir.path().join("v.csv");
    let o = run(&["gheat", "--config", s(&cfg), "--steps", "10", "--out", s(&out)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("t,x,v\n"));
    // levels hold 1, 3, ..., 21 nodes
    assert_eq!(text.lines().count(), 1 + 121);
    assert!(String::from_utf8(o.stderr).unwrap().contains("N = 10"));
}

#[test]
fn picard_and_stitch() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let meta = dir.path().join("m.txt");
    let o = run(&["picard", "--config", s(&cfg), "--horizon", "0.15,0.2", "--out", s(&dir.path().join("p.csv")), "--emit-meta", s(&meta)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&meta).unwrap().contains("converged = true"));

    let o = run(&["picard", "--config", s(&cfg), "--horizon", "0.3,0.1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["stitch", "--config", s(&cfg), "--delta0", "0.05", "--out", s(&dir.path().join("s.csv")), "--emit-meta", s(&meta)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta = std::fs::read_to_string(&meta).unwrap();
    assert!(meta.contains("cells = 4"));
    assert!(meta.contains("seam_gap = 0.0000000000000000e0"));
}

#[test]
fn mollify_csv() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("x,value\n");
    for i in 0..=400 {
        let x = -1.0 + i as f64 * 0.005;
        text.push_str(&format!("{x},{}\n", x.abs()));
    }
    let input = write(&dir, "in.csv", &text);
    let out = dir.path().join("out.csv");
    let o = run(&["mollify", "--in", s(&input), "--n", "10", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 401);
    let dev = rows.iter().map(|r| (r[2] - r[1]).abs()).fold(0.0, f64::max);
    assert!(dev > 0.0 && dev <= 0.1 + 1e-6, "{dev}");

    let o = run(&["mollify", "--in", s(&input), "--n", "1000"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn perturb_identical_configs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", SMALL);
    let o = run(&["perturb", "--config", s(&cfg), "--config2", s(&cfg), "--paths", "50", "--steps", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("lhs = 0.0000000000000000e0"));
    assert!(text.contains("exact_match = true"));
}

#[test]
fn validate_cfl_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.toml", &SMALL.replace("nx = 61", "nx = 61\nnt = 2"));
    let o = run(&["validate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let report = String::from_utf8(o.stdout).unwrap();
    assert!(report.contains("[solve-pde]\nstatus = \"fail\""));
    assert!(report.contains("CFL"));
    assert!(String::from_utf8(o.stderr).unwrap().contains("solve-pde"));
}
