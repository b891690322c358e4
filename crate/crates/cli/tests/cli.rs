//! End-to-end runs of the `vinerisk` binary.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{factor_panel, write_panel};
use serde_json::Value;

const T: usize = 260;

fn vinerisk(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vinerisk"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("VINERISK_WORKERS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Two assets and one index, plus a config echoing `extra` keys.
fn setup(dir: &Path, windows: &str, extra: &str) {
    let (mut cols, index) = factor_panel(5, T, 2, 0.6, 0.01);
    cols.push(index);
    write_panel(&dir.join("panel.csv"), &["A", "B", "I"], &cols);
    let config = format!(
        r#"{{
        "data": "panel.csv", "assets": ["A", "B"], "weights": [1, 1], "conditioning": ["I"],
        "windows": {windows},
        "n_samples": 1000, "alpha": [0.01, 0.05], "alpha_I": [0.1, 0.5],
        "strategies": ["unconditional", "quantile", "prior_residual", "realized_residual"],
        "measures": ["VaR", "ES_mean", "ES_median"],
        "families": ["gaussian", "clayton", "gumbel"],
        "innovation": "normal", "seed": 3, "n_boot": 99{extra}
    }}"#
    );
    std::fs::write(dir.join("config.json"), config).unwrap();
}

const WINDOWS: &str = r#"{"Gamma": 200, "gamma": 30, "Psi": 150, "kappa": 30}"#;

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), WINDOWS, "");
    let o = vinerisk(&["run", "--config", "config.json", "--out", "a", "--workers", "1x1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("a");
    for f in ["risk_series.csv", "backtests.json", "diagnostics.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    let csv = std::fs::read_to_string(out.join("risk_series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "date,measure,alpha,strategy,alpha_I,estimate,realized_return,cond_value_return_scale"
    );
    // (T - Gamma) days x 3 measures x 2 alphas x (2 quantile levels + 3 other strategies)
    assert_eq!(lines.count(), (T - 200) * 3 * 2 * (2 + 3));

    for f in ["backtests.json", "diagnostics.json", "manifest.json"] {
        let v: Value = serde_json::from_slice(&std::fs::read(out.join(f)).unwrap()).unwrap();
        assert!(!v.is_null(), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);

    // same seed, other worker layout: identical series
    let o = vinerisk(&["run", "--config", "config.json", "--out", "b", "--workers", "2x3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("risk_series.csv")).unwrap(), std::fs::read(dir.path().join("b/risk_series.csv")).unwrap());

    // a different seed changes the estimates but not the layout
    let o = vinerisk(&["run", "--config", "config.json", "--out", "c", "--seed", "4"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let other = std::fs::read_to_string(dir.path().join("c/risk_series.csv")).unwrap();
    assert_eq!(other.lines().count(), csv.lines().count());
    assert_ne!(other, csv);

    // backtests can be recomputed from the written series
    let o = vinerisk(
        &["backtest", "--risk-series", "a/risk_series.csv", "--config", "config.json", "--out", "bt"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let again: Value = serde_json::from_slice(&std::fs::read(dir.path().join("bt/backtests.json")).unwrap()).unwrap();
    let first: Value = serde_json::from_slice(&std::fs::read(out.join("backtests.json")).unwrap()).unwrap();
    assert_eq!(again, first);
}

#[test]
fn kappa_above_gamma_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), r#"{"Gamma": 200, "gamma": 20, "Psi": 150, "kappa": 30}"#, "");
    for args in [&["run", "--config", "config.json"][..], &["validate", "--config", "config.json"]] {
        let o = vinerisk(args, dir.path());
        assert_eq!(o.status.code(), Some(2));
        assert!(stderr(&o).contains("kappa"), "{}", stderr(&o));
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_keys_and_bad_data_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path(), WINDOWS, r#", "colour": "blue""#);
    let o = vinerisk(&["validate", "--config", "config.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    setup(dir.path(), WINDOWS, "");
    let o = vinerisk(&["validate", "--config", "config.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    // blank out one cell
    let csv = std::fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let cells: Vec<&str> = lines[7].split(',').collect();
    lines[7] = format!("{},,{},{}", cells[0], cells[2], cells[3]);
    std::fs::write(dir.path().join("panel.csv"), lines.join("\n") + "\n").unwrap();
    let o = vinerisk(&["run", "--config", "config.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains('A'), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn prices_mode_matches_returns_mode() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cols, index) = factor_panel(6, T + 1, 1, 0.5, 0.01);
    cols.push(index);
    // prices from cumulative log returns, dropping the first return
    let prices: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let mut level = 100.0f64;
            let mut p = vec![level];
            for r in &c[1..] {
                level *= r.exp();
                p.push(level);
            }
            p
        })
        .collect();
    let returns: Vec<Vec<f64>> = prices.iter().map(|p| p.windows(2).map(|w| (w[1] / w[0]).ln()).collect()).collect();
    write_panel(&dir.path().join("prices.csv"), &["A", "I"], &prices);
    // the returns file starts one day later, like the converted prices
    let mut returns_csv = String::from("date,A,I\n");
    for t in 0..T {
        returns_csv += &format!("{},{},{}\n", common::chrono_like_date(t + 1), returns[0][t], returns[1][t]);
    }
    std::fs::write(dir.path().join("returns.csv"), returns_csv).unwrap();
    for (name, data, mode) in [("p.json", "prices.csv", "prices"), ("r.json", "returns.csv", "returns")] {
        let cfg = format!(
            r#"{{"data": "{data}", "mode": "{mode}", "assets": ["A"], "weights": [1], "conditioning": ["I"],
                "windows": {WINDOWS}, "n_samples": 500, "alpha": [0.05], "alpha_I": [0.5],
                "strategies": ["quantile"], "measures": ["VaR"], "families": ["gaussian"], "seed": 1}}"#
        );
        std::fs::write(dir.path().join(name), cfg).unwrap();
    }
    let a = vinerisk(&["run", "--config", "p.json", "--out", "p"], dir.path());
    let b = vinerisk(&["run", "--config", "r.json", "--out", "r"], dir.path());
    assert!(a.status.success() && b.status.success(), "{}{}", stderr(&a), stderr(&b));
    let read = |d: &str| std::fs::read_to_string(dir.path().join(d).join("risk_series.csv")).unwrap();
    let (p, r) = (read("p"), read("r"));
    assert_eq!(p.lines().count(), T - 200 + 1);
    // conversion round-off allowed; compare numerically
    for (x, y) in p.lines().zip(r.lines()).skip(1) {
        let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
        assert_eq!(x[0], y[0]);
        for k in [5, 6, 7] {
            let (a, b): (f64, f64) = (x[k].parse().unwrap(), y[k].parse().unwrap());
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
