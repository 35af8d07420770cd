use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use collisional::dynamics::population_rate_matrix;
use collisional::io::{parse_trajectory_csv, RateFile};
use collisional::scattering::{pair_cross_section, ChannelSet, KMatrixModel};
use collisional::thermal::{maxwell_speed_pdf, outgoing_speed, GasParameters};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_collisional"));
    c.env_remove("COLLISIONAL_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn base(a: [[f64; 2]; 2], energies: [f64; 2]) -> Value {
    json!({
        "channels": [{"label": "g", "energy": energies[0]}, {"label": "e", "energy": energies[1]}],
        "gas": {"n_gas": 0.05, "mass": 1.0, "beta": 1.0},
        "scattering": {"k_matrix": {"a": a}},
        "evolve": {"t_max": 10.0, "n_steps": 20, "initial": {"pure": [[0.6, 0.0], [0.0, 0.8]]}},
        "trajectories": {"n_traj": 200, "seed": 11}
    })
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rates(dir: &TempDir, cfg: &Value) -> RateFile {
    let c = write_config(dir.path(), "c.json", cfg);
    let out = run(&["rates", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    RateFile::read(dir.path().join("rates.json")).unwrap()
}

#[test]
fn zero_reactance_gives_zero_tensor() {
    let dir = TempDir::new().unwrap();
    let file = rates(&dir, &base([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.5]));
    assert_eq!(file.m.len(), 16);
    assert!(file.m.iter().all(|e| e.re == 0.0 && e.im == 0.0));
    assert!(file.epsilon.iter().all(|&e| e == 0.0));
}

#[test]
fn diagonal_entries_match_population_rate_integral() {
    let dir = TempDir::new().unwrap();
    let a = [[0.8, 0.3], [0.3, -0.4]];
    let file = rates(&dir, &base(a, [0.0, 0.5]));
    let tensor = file.rate_tensor().unwrap();
    let r = population_rate_matrix(&tensor);

    let channels = ChannelSet::new(vec!["g".into(), "e".into()], vec![0.0, 0.5]).unwrap();
    let model = KMatrixModel::new(channels.clone(), DMatrix::from_fn(2, 2, |i, j| a[i][j]), 1.0).unwrap();
    let gas = GasParameters::new(0.05, 1.0, 1.0).unwrap();
    // composite Simpson on a fine uniform speed grid
    let n = 40_000;
    let h = 8.0 / n as f64;
    for al in 0..2 {
        for a0 in 0..2 {
            let f = |v: f64| {
                let v_out = outgoing_speed(&channels, 1.0, al, a0, v);
                if v_out <= 0.0 {
                    return 0.0;
                }
                let sigma = pair_cross_section(&model, al, a0, channels.energy(a0) + 0.5 * v * v).unwrap_or(0.0);
                gas.n_gas * maxwell_speed_pdf(&gas, v) * v_out * sigma
            };
            let mut acc = f(0.0) + f(8.0);
            for k in 1..n {
                acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            let oracle = acc * h / 3.0;
            let m = tensor.get(al, al, a0, a0).re;
            assert!((m - oracle).abs() < 1e-4 * oracle, "{al}<-{a0}: {m} vs {oracle}");
            if al != a0 {
                assert_eq!(r[(al, a0)], m);
            }
        }
    }
}

#[test]
fn malformed_and_invalid_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"channels\": [").unwrap();
    assert_eq!(code(&run(&["rates", "--config", s(&bad)])), 2);

    let mut v = base([[0.1, 0.0], [0.0, 0.1]], [0.0, 0.5]);
    v["gas"]["temperature"] = json!(300.0);
    let c = write_config(dir.path(), "unknown.json", &v);
    let out = run(&["rates", "--config", s(&c)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gas") && stderr(&out).contains("temperature"), "{}", stderr(&out));

    let v = base([[0.1, 0.2], [0.0, 0.1]], [0.0, 0.5]);
    let c = write_config(dir.path(), "asym.json", &v);
    let out = run(&["evolve", "--config", s(&c)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("scattering.k_matrix.a"), "{}", stderr(&out));

    assert_eq!(code(&run(&["rates"])), 2);
    let good = write_config(dir.path(), "good.json", &base([[0.1, 0.0], [0.0, 0.1]], [0.0, 0.5]));
    assert_eq!(code(&bin().args(["rates", "--config", s(&good)]).env("COLLISIONAL_THREADS", "0").output().unwrap()), 2);
}

#[test]
fn quadrature_failure_exits_3() {
    let dir = TempDir::new().unwrap();
    let mut v = base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]);
    v["quadrature"] = json!({"speed_nodes": 2, "rel_tol": 1e-15});
    let c = write_config(dir.path(), "c.json", &v);
    let out = run(&["rates", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("quadrature"));
}

#[test]
fn zero_duration_gives_initial_state() {
    let dir = TempDir::new().unwrap();
    let mut v = base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]);
    v["evolve"]["t_max"] = json!(0.0);
    let c = write_config(dir.path(), "c.json", &v);
    let out = run(&["evolve", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(text.starts_with("# units:"));
    let (t, states) = parse_trajectory_csv(&text).unwrap();
    assert_eq!(t, vec![0.0]);
    let rho = &states[0];
    assert_eq!(rho[(0, 0)].re, 0.36);
    assert_eq!(rho[(1, 1)].re, 0.6400000000000001);
    assert_eq!(rho[(0, 1)].im, -0.48);
}

#[test]
fn elastic_coherence_decays_at_rate_from_file() {
    let dir = TempDir::new().unwrap();
    let v = base([[0.9, 0.0], [0.0, -0.3]], [0.0, 0.5]);
    let file = rates(&dir, &v);
    let c = dir.path().join("c.json");
    let out = run(&["evolve", "--config", s(&c), "--out", s(dir.path()), "--rates", s(&dir.path().join("rates.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let t = file.rate_tensor().unwrap();
    let gamma = 0.5 * (t.get(0, 0, 0, 0).re + t.get(1, 1, 1, 1).re) - t.get(0, 1, 0, 1).re;
    assert!(gamma > 0.0);
    let (times, states) = parse_trajectory_csv(&std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    let c0 = states[0][(0, 1)].norm();
    for (tk, rho) in times.iter().zip(&states) {
        let expected = c0 * (-gamma * tk).exp();
        assert!((rho[(0, 1)].norm() - expected).abs() <= 1e-6 * expected, "t={tk}");
        let tr = rho[(0, 0)].re + rho[(1, 1)].re;
        assert!((tr - 1.0).abs() < 1e-10);
    }
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("trajectory.json")).unwrap()).unwrap();
    assert!(sidecar["max_trace_error"].as_f64().unwrap() < 1e-10);
    assert!(sidecar["config"]["gas"]["n_gas"].is_number());
}

#[test]
fn trace_drift_is_small_for_inelastic_model() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "c.json", &base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]));
    assert_eq!(code(&run(&["evolve", "--config", s(&c), "--out", s(dir.path())])), 0);
    let (_, states) = parse_trajectory_csv(&std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    for rho in &states {
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
    }
}

#[test]
fn single_trajectory_without_dissipation_is_unitary() {
    let dir = TempDir::new().unwrap();
    let mut v = base([[0.0, 0.0], [0.0, 0.0]], [0.0, 0.5]);
    v["trajectories"]["n_traj"] = json!(1);
    let c = write_config(dir.path(), "c.json", &v);
    let out = run(&["trajectories", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (times, states) = parse_trajectory_csv(&std::fs::read_to_string(dir.path().join("ensemble.csv")).unwrap()).unwrap();
    for (t, rho) in times.iter().zip(&states) {
        let expected = num_complex::Complex64::new(0.0, -0.48) * num_complex::Complex64::from_polar(1.0, 0.5 * t);
        assert!((rho[(0, 1)] - expected).norm() < 1e-10, "t={t}");
        assert!((rho[(0, 0)].re - 0.36).abs() < 1e-12);
    }
}

#[test]
fn same_seed_gives_identical_output_for_any_thread_count() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "c.json", &base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]));
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "3", "3"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = run(&["trajectories", "--config", s(&c), "--out", s(&out_dir), "--threads", threads]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(std::fs::read(out_dir.join("ensemble.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
    let other = dir.path().join("other");
    assert_eq!(code(&run(&["trajectories", "--config", s(&c), "--out", s(&other), "--seed", "12"])), 0);
    assert_ne!(std::fs::read(other.join("ensemble.csv")).unwrap(), outputs[0]);
}

#[test]
fn ensemble_agrees_with_deterministic_evolution() {
    let dir = TempDir::new().unwrap();
    let mut v = base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]);
    v["trajectories"] = json!({"n_traj": 4000, "seed": 3});
    v["evolve"]["n_steps"] = json!(5);
    let c = write_config(dir.path(), "c.json", &v);
    assert_eq!(code(&run(&["evolve", "--config", s(&c), "--out", s(dir.path())])), 0);
    assert_eq!(code(&run(&["trajectories", "--config", s(&c), "--out", s(dir.path())])), 0);
    let (_, exact) = parse_trajectory_csv(&std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("ensemble.csv")).unwrap();
    let (_, mean) = parse_trajectory_csv(&text).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    for (k, row) in rows.iter().enumerate() {
        for ij in 0..4 {
            let (i, j) = (ij / 2, ij % 2);
            let d = mean[k][(i, j)] - exact[k][(i, j)];
            let (se_re, se_im) = (row[9 + 2 * ij], row[10 + 2 * ij]);
            assert!(d.re.abs() <= 3.0 * se_re + 1e-12, "row {k} ({i},{j}) re");
            assert!(d.im.abs() <= 3.0 * se_im + 1e-12, "row {k} ({i},{j}) im");
        }
    }
}

#[test]
fn rates_file_round_trip_reproduces_trajectories() {
    let dir = TempDir::new().unwrap();
    let c = write_config(dir.path(), "c.json", &base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]));
    let mem = dir.path().join("mem");
    let file = dir.path().join("file");
    assert_eq!(code(&run(&["rates", "--config", s(&c), "--out", s(&file)])), 0);
    let rates_path = file.join("rates.json");
    for cmd in ["evolve", "trajectories"] {
        assert_eq!(code(&run(&[cmd, "--config", s(&c), "--out", s(&mem)])), 0);
        assert_eq!(code(&run(&[cmd, "--config", s(&c), "--out", s(&file), "--rates", s(&rates_path)])), 0);
    }
    for name in ["trajectory.csv", "ensemble.csv"] {
        let a = std::fs::read(mem.join(name)).unwrap();
        let b = std::fs::read(file.join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn default_verify_passes() {
    let dir = TempDir::new().unwrap();
    let out = run(&["verify", "--out", s(dir.path())]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().len() > 20);
}

#[test]
fn non_unitary_fixture_fails_verify() {
    let dir = TempDir::new().unwrap();
    let mut v = base([[0.8, 0.3], [0.3, -0.4]], [0.0, 0.5]);
    let id2 = json!([[1, 0], [0, 1]]);
    v["verify"] = json!({
        "collision_models": [{
            "dim_sys": 2, "dim_env": 1,
            "s": [[1.0, 0.0], [0.0, [0.9, 0.0]]],
            "gamma": id2, "rho_env": [[1.0]]
        }],
        "mc_samples": 20000
    });
    let c = write_config(dir.path(), "c.json", &v);
    let out = run(&["verify", "--config", s(&c), "--out", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("t_unitarity_residual"), "{}", stderr(&out));
}

#[test]
fn negative_rate_tensor_fails_verify() {
    let dir = TempDir::new().unwrap();
    let mut file = rates(&dir, &base([[0.9, 0.0], [0.0, -0.3]], [0.0, 0.5]));
    // coherence entry far larger than the geometric mean of the populations
    for e in file.m.iter_mut() {
        if (e.a.as_str(), e.b.as_str(), e.a0.as_str(), e.b0.as_str()) == ("g", "e", "g", "e")
            || (e.a.as_str(), e.b.as_str(), e.a0.as_str(), e.b0.as_str()) == ("e", "g", "e", "g")
        {
            e.re = 100.0;
        }
    }
    let bad = dir.path().join("bad_rates.json");
    file.write(&bad).unwrap();
    let out = run(&["verify", "--out", s(dir.path()), "--rates", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("rate_tensor_psd"), "{}", stderr(&out));

    let c = dir.path().join("c.json");
    let out = run(&["evolve", "--config", s(&c), "--out", s(dir.path()), "--rates", s(&bad)]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
