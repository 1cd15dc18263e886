use std::process::Command;

fn wpmec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wpmec"))
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[users]\ngains = [[0.9, 8e-4], [0.6, 1e-4]]\n[sweep]\nstation_power = [1e-4, 0.025]\ncb_max = true\n").unwrap();
    let out = dir.path().join("out");
    let status = wpmec()
        .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--parallel", "2", "--regimes", "tdma_partial,noma_binary"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert!(lines[0].starts_with("Ps_W,regime,eta_star_bits_per_J"));
    assert_eq!(lines.len(), 5);
    assert!(lines[1].contains("infeasible"));
    for f in ["cbmax.csv", "traces.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[users]\ngains = [[0.9, 8e-4]]\nunknown_key = 1\n").unwrap();
    let out = dir.path().join("out");
    let output = wpmec().args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown_key"));
    let missing = wpmec().args(["run", "/nonexistent.toml", "--out", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
}

#[test]
fn unknown_regime_is_rejected() {
    let status = wpmec().args(["run", "x.toml", "--out", "o", "--regimes", "fdma"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}
