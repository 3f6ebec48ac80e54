use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fkpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkpp")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL_LARGETIME: &str = "[largetime]\ntimes = [0.0, 1.0]\npoints = 401\nmode_t_end = 5.0\nmode_dt = 0.5\n";

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "[model]\ndiffusion = -0.1\n[ee]\norder = 7\n");
    let o = fkpp(&["ee", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.lines().any(|l| l.starts_with("config-error\tmodel.diffusion\t")), "{err}");
    assert!(err.lines().any(|l| l.starts_with("config-error\tee.order\t")), "{err}");
    assert!(!out.exists());

    let cfg = write_config(tmp.path(), "[model]\ndifusion = 0.1\n");
    assert_eq!(fkpp(&["ee", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "[model\n");
    assert_eq!(fkpp(&["ee", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(fkpp(&["ee", "--config", "/nonexistent.toml", "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn numeric_failure_exits_3_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    // far beyond the diffusive stability bound
    let cfg = write_config(tmp.path(), "[oracle]\ndt = 0.5\ntimes = [0.0, 20.0]\n");
    let o = fkpp(&["direct", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("numeric-error\t"));
    assert!(!out.exists());
}

#[test]
fn largetime_reports_unit_initial_coefficient() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_LARGETIME);
    let o = fkpp(&["largetime", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("C_0(0) at t = 0 is 1\n"), "{stdout}");
    let csv = fs::read_to_string(tmp.path().join("largetime_coefficients.csv")).unwrap();
    assert!(csv.starts_with("t,m,C_m\n0,0,1e0\n"), "{csv}");
    for name in ["largetime_background", "largetime_modes", "largetime_u_t0", "largetime_u_t1"] {
        let meta = fs::read_to_string(tmp.path().join(format!("{name}.meta.toml"))).unwrap();
        assert!(meta.contains("command = \"largetime\"") && meta.contains("[config.largetime]"), "{meta}");
        assert!(tmp.path().join(format!("{name}.gp")).exists());
    }
}

#[test]
fn identical_inputs_give_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL_LARGETIME}[compare]\ndiffusions = [0.02, 0.01]\n"));
    for cmd in ["largetime", "residual", "compare", "germ"] {
        let a = tmp.path().join(format!("{cmd}_a"));
        let b = tmp.path().join(format!("{cmd}_b"));
        assert!(fkpp(&[cmd, "--config", &cfg, "--out", a.to_str().unwrap(), "--jobs", "1"]).status.success());
        assert!(fkpp(&[cmd, "--config", &cfg, "--out", b.to_str().unwrap(), "--jobs", "3"]).status.success());
        // sidecars differ only in the recorded output directory
        let csv = |d: &Path| listing(d).into_iter().filter(|(n, _)| n.ends_with(".csv")).collect::<Vec<_>>();
        let (la, lb) = (csv(&a), csv(&b));
        assert!(!la.is_empty());
        assert_eq!(la.len(), lb.len(), "{cmd}");
        for ((na, ba), (nb, bb)) in la.iter().zip(&lb) {
            assert!(na == nb && ba == bb, "{cmd}: {na} differs");
        }
    }
}

#[test]
fn every_csv_has_header_and_sidecar() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg =
        write_config(tmp.path(), "[oracle]\ntimes = [0.0, 0.25]\n[coherent]\nstates = [0, 1]\nallow_odd_zero = true\n");
    for cmd in ["ee", "germ", "coherent", "direct"] {
        let out = tmp.path().join(cmd);
        let o = fkpp(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        for (name, bytes) in listing(&out) {
            if let Some(stem) = name.strip_suffix(".csv") {
                let text = String::from_utf8(bytes).unwrap();
                let header = text.lines().next().unwrap();
                assert!(header.chars().next().unwrap().is_ascii_alphabetic(), "{name}: {header}");
                assert!(out.join(format!("{stem}.meta.toml")).exists(), "{name}");
            }
        }
    }
    let ee = fs::read_to_string(tmp.path().join("ee/ee_trajectory.csv")).unwrap();
    assert!(ee.starts_with("t,sigma,x,alpha2\n"));
    let germ = fs::read_to_string(tmp.path().join("germ/germ_variations.csv")).unwrap();
    assert!(germ.starts_with("t,Wm,Zm,Wp,Zp,skew,Q\n"));
    let traj = fs::read_to_string(tmp.path().join("direct/direct_trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,mass,center,variance\n"));
}

#[test]
fn strict_promotes_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[coherent]\nstates = [1]\ntimes = [0.0]\nallow_odd_zero = true\n");
    let out = tmp.path().join("out");
    assert!(fkpp(&["coherent", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let strict = tmp.path().join("strict");
    let o = fkpp(&["coherent", "--config", &cfg, "--out", strict.to_str().unwrap(), "--strict"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!strict.exists());
}

#[test]
fn acceptance_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("acc");
    let o = fkpp(&["acceptance", "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).count(), 11, "{stdout}");
    // only the known-unattainable criteria may fail; they do not fail the run unless --strict
    assert!(o.status.success(), "{stdout}");
    let o = fkpp(&["acceptance", "--out", tmp.path().join("acc2").to_str().unwrap(), "--strict"]);
    let failing = String::from_utf8(o.stdout).unwrap().lines().filter(|l| l.starts_with("FAIL")).count();
    assert_eq!(o.status.code(), Some(if failing > 0 { 4 } else { 0 }));
}
