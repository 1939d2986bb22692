use std::path::Path;
use std::process::{Command, Output};

use massdesign::sim::{preset, run_pipeline};
use massdesign_cli::io::{read_drive_log, read_profile};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_massdesign"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    assert_eq!(code(o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn two_row_log_gives_the_exact_slope() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("log.csv"), "t,a_meas,f_res\n0.1,1,2\n0.2,3,6\n").unwrap();
    let out = json(&run(dir.path(), &["estimate", "--log", "log.csv"]));
    assert_eq!(out["m_hat"].as_f64().unwrap(), 2.0);
    assert_eq!(out["excitation"].as_f64().unwrap(), 10.0);
}

#[test]
fn constant_acceleration_with_offset_is_unidentifiable() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("log.csv"), "t,a_meas,f_res\n0.1,1,2\n0.2,1,2.5\n0.3,1,1.5\n").unwrap();
    let o = run(dir.path(), &["estimate", "--log", "log.csv", "--offset"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dependent"), "{}", String::from_utf8_lossy(&o.stderr));
    // Without the offset the same log is fine.
    json(&run(dir.path(), &["estimate", "--log", "log.csv"]));
}

#[test]
fn malformed_inputs_exit_with_parse_code() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("log.csv"), "t,a_meas,f_res\n0.1,1,2\n0.2,nope,2\n").unwrap();
    let o = run(dir.path(), &["estimate", "--log", "log.csv"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    std::fs::write(dir.path().join("c.toml"), "grid.ts = 0.01\nsolver.tolerance = 1e-3\n").unwrap();
    let o = run(dir.path(), &["--config", "c.toml", "design"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    assert_eq!(code(&run(dir.path(), &["design", "--no-such-flag"])), 3);
    assert_eq!(code(&run(dir.path(), &["analyze", "--gap-grid", "1:x:3"])), 3);
}

#[test]
fn kmh_and_ms_configs_design_the_same_profile() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(p.join("kmh.toml"), "bounds.v_min_kmh = 3.6\nbounds.v_max_kmh = 9\n").unwrap();
    std::fs::write(p.join("ms.toml"), "[bounds]\nv_min = 1.0\nv_max = 2.5\n").unwrap();
    for (cfg, out) in [("kmh.toml", "a.csv"), ("ms.toml", "b.csv")] {
        let o = run(p, &["--config", cfg, "design", "--output", out, "--report", "/dev/null"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read_to_string(p.join("a.csv")).unwrap();
    assert!(a.starts_with("k,t,u,a,v,d\n1,0.01,"));
    assert_eq!(a, std::fs::read_to_string(p.join("b.csv")).unwrap());
}

#[test]
fn infeasible_and_budget_exit_codes() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(p.join("inf.toml"), "grid.n = 20\ntarget.r_designed = 1e6\n").unwrap();
    let o = run(p, &["--config", "inf.toml", "design"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("certified upper bound"));
    let o = run(p, &["--config", "inf.toml", "design", "--objective", "min_distance", "--report", "rep.json"]);
    assert_eq!(code(&o), 2);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["solver"]["status"], "infeasible");
    assert!(rep["solver"]["upper_bound"].as_f64().unwrap() < 1e6);

    std::fs::write(
        p.join("budget.toml"),
        "objective = \"min_distance\"\ngrid.n = 24\nactuator.p = 0.5\ntarget.r_designed = 0.4\nsolver.node_budget = 1\nsolver.tol = 1e-12\n",
    )
    .unwrap();
    let o = run(p, &["--config", "budget.toml", "design", "--report", "/dev/null"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn certified_design_on_a_short_horizon() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), "objective = \"max_accuracy\"\ngrid.n = 12\ngrid.ts = 0.5\n").unwrap();
    let o = run(p, &["--config", "c.toml", "design", "--output", "p.csv", "--report", "r.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!(rep["method"], "certified");
    assert_eq!(rep["feasible"], true);
    let prof = read_profile(std::fs::File::open(p.join("p.csv")).unwrap()).unwrap();
    assert_eq!(prof.len(), 12);
    assert!((prof.excitation() - rep["excitation"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn presets_design_feasible_profiles() {
    let dir = TempDir::new().unwrap();
    for name in ["paper-vii-a", "paper-vii-b", "paper-viii"] {
        let o = run(dir.path(), &["--preset", name, "design", "--output", "p.csv", "--report", "r.json"]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let rep: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(rep["feasible"], true, "{name}");
        assert!(rep["excitation"].as_f64().unwrap() >= 600.0);
        assert!(rep["duration"].as_f64().unwrap() <= 60.0);
    }
}

#[test]
fn simulate_then_estimate_matches_the_library() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let o = run(p, &["--preset", "paper-viii", "design", "--output", "p.csv", "--report", "/dev/null"]);
    assert_eq!(code(&o), 0);
    let o = run(p, &["--preset", "paper-viii", "--seed", "11", "simulate", "--profile", "p.csv", "--trial", "4", "--output", "log.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // The same log straight from the library.
    let profile = read_profile(std::fs::File::open(p.join("p.csv")).unwrap()).unwrap();
    let mut sim = preset("paper-viii").unwrap().sim;
    sim.seed = 11;
    let direct = massdesign::sim::synthesize_log(&profile, &sim, 4).unwrap();
    let from_file = read_drive_log(std::fs::File::open(p.join("log.csv")).unwrap()).unwrap();
    assert_eq!(direct, from_file);

    let out = json(&run(p, &["estimate", "--log", "log.csv", "--offset"]));
    let est = run_pipeline(&direct, false, true).unwrap();
    assert_eq!(out["m_hat"].as_f64().unwrap().to_bits(), est.m_hat.to_bits());
    assert_eq!(out["delta_hat"].as_f64().unwrap().to_bits(), est.delta_hat.unwrap().to_bits());
}

#[test]
fn filter_keeps_the_log_shape() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), "sim.sigma_a_meas = 0.3\n").unwrap();
    assert_eq!(code(&run(p, &["design", "--output", "p.csv", "--report", "/dev/null"])), 0);
    assert_eq!(code(&run(p, &["--config", "c.toml", "simulate", "--profile", "p.csv", "--output", "noisy.csv"])), 0);
    let o = run(p, &["filter", "--log", "noisy.csv", "--output", "smooth.csv", "--report", "fit.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let noisy = read_drive_log(std::fs::File::open(p.join("noisy.csv")).unwrap()).unwrap();
    let smooth = read_drive_log(std::fs::File::open(p.join("smooth.csv")).unwrap()).unwrap();
    assert_eq!(noisy.t, smooth.t);
    assert_eq!(noisy.f_res, smooth.f_res);
    let var = |x: &[f64]| {
        let d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        d.iter().map(|v| v * v).sum::<f64>()
    };
    assert!(var(&smooth.a_meas) < 0.1 * var(&noisy.a_meas));
}

#[test]
fn monte_carlo_and_analyze_produce_json() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(p, &["design", "--output", "p.csv", "--report", "/dev/null"])), 0);
    let mc = json(&run(p, &["simulate", "--profile", "p.csv", "--monte-carlo", "--trials", "50"]));
    assert_eq!(mc["m_hat"].as_array().unwrap().len(), 50);
    assert!(mc["fraction"].as_f64().unwrap() > 0.8);

    let an = json(&run(p, &["analyze", "--gap-grid", "0.1,0.2,0.3"]));
    assert_eq!(an["gap"]["rows"].as_array().unwrap().len(), 3);
    assert_eq!(an["critical_ratio_holds"], true);
}

#[test]
fn export_lifted_writes_sdpa() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    std::fs::write(p.join("c.toml"), "grid.n = 4\n").unwrap();
    let o = run(p, &["--config", "c.toml", "export-lifted"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('"')).collect();
    assert_eq!(data[0].trim().parse::<usize>().unwrap(), 4 * 5 / 2 + 4);
    let lifted = json(&run(p, &["--config", "c.toml", "export-lifted", "--json"]));
    assert_eq!(lifted["n"], 4);
    // The default horizon is too long to lift.
    assert_eq!(code(&run(p, &["export-lifted"])), 1);
}
