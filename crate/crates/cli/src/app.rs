//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde_json::{json, Value};
use vinerisk_core::rolling::{self, Panel, Pools, RollingOutput, Strategy};

use crate::config::{RunConfig, Workers};
use crate::error::{CliError, CliResult};
use crate::panel::ReturnPanel;
use crate::report::{backtest_rows, read_rows, rows_from_series, write_rows, BacktestSettings, SeriesRow};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const WORKERS_ENV: &str = "VINERISK_WORKERS";

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub workers: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Worker counts: flag, then environment, then config, then one window
/// worker and all cores for days.
pub fn resolve_workers(flag: Option<&str>, cfg: &RunConfig) -> CliResult<Workers> {
    if let Some(w) = flag {
        return w.parse();
    }
    if let Ok(w) = std::env::var(WORKERS_ENV) {
        return w
            .parse()
            .map_err(|e: CliError| CliError::Config(format!("{WORKERS_ENV}: {e}")));
    }
    if let Some(w) = &cfg.workers {
        return w.parse();
    }
    Ok(Workers {
        level1: 1,
        level2: std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}

/// Loaded inputs for a run.
pub struct Prepared {
    pub config: RunConfig,
    pub panel: ReturnPanel,
    pub spec: rolling::RollingSpec,
    pub engine_panel: Panel,
}

pub fn prepare(config_path: &Path, ov: &Overrides) -> CliResult<Prepared> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = ov.seed {
        config.seed = s;
    }
    if let Some(o) = &ov.out {
        config.output_dir = o.clone();
    }
    config.check_static()?;
    let panel = ReturnPanel::load(&config.data, config.mode)?;
    let w = &config.windows;
    if panel.len() < w.fit_margin + w.use_margin {
        return Err(CliError::Config(format!(
            "panel has {} rows but Gamma + gamma = {} are required",
            panel.len(),
            w.fit_margin + w.use_margin
        )));
    }
    let take = |names: &[String]| -> CliResult<Vec<Vec<f64>>> {
        names.iter().map(|n| panel.column(n).map(<[f64]>::to_vec)).collect()
    };
    let engine_panel = Panel {
        assets: take(&config.assets)?,
        indices: take(&config.conditioning)?,
    };
    let spec = config.rolling_spec(panel.len())?;
    spec.validate(&engine_panel)?;
    Ok(Prepared {
        config,
        panel,
        spec,
        engine_panel,
    })
}

fn build_pool(threads: usize, name: &'static str) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .thread_name(move |i| format!("{name}-{i}"))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// Run the engine with the given worker layout.
pub fn execute(p: &Prepared, workers: Workers) -> CliResult<RollingOutput> {
    let windows = build_pool(workers.level1, "window")?;
    let days = build_pool(workers.level2, "day")?;
    let out = rolling::run(
        &p.engine_panel,
        &p.spec,
        Some(Pools {
            windows: &windows,
            days: &days,
        }),
    )?;
    Ok(out)
}

fn diagnostics(p: &Prepared, out: &RollingOutput) -> Value {
    let names: Vec<&String> = p.config.assets.iter().chain(&p.config.conditioning).collect();
    let marginals: Vec<Value> = out
        .marginals
        .iter()
        .map(|m| {
            json!({
                "window": m.window,
                "column": names[m.column],
                "phi0": m.fit.phi0,
                "phi1": m.fit.phi1,
                "theta1": m.fit.theta1,
                "alpha0": m.fit.alpha0,
                "alpha1": m.fit.alpha1,
                "beta1": m.fit.beta1,
                "innovation": m.fit.innovation,
                "loglik": m.fit.loglik,
                "warnings": m.fit.warnings,
                "ljung_box": m.ljung_box,
                "ljung_box_squared": m.ljung_box_squared,
            })
        })
        .collect();
    let vines: Vec<Value> = out
        .vines
        .iter()
        .map(|v| {
            let order: Vec<&String> = v.vine.order().iter().map(|&i| names[i]).collect();
            json!({
                "window": v.window,
                "marginal_window": v.marginal_window,
                "conditional": v.conditional,
                "order_names": order,
                "model": v.vine,
                "loglik": v.loglik,
                "aic": v.aic,
                "warnings": v.warnings,
            })
        })
        .collect();
    json!({
        "plan": p.spec.plan,
        "marginals": marginals,
        "vines": vines,
    })
}

fn settings(cfg: &RunConfig) -> BacktestSettings {
    BacktestSettings {
        n_boot: cfg.n_boot,
        eta: cfg.eta,
        seed: cfg.seed,
    }
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("json value serializes");
    b.push(b'\n');
    b
}

/// Write artifacts through a staging directory so that a failure leaves
/// no partial output behind.
fn publish(out_dir: &Path, files: &[(&str, Vec<u8>)]) -> CliResult<()> {
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let staging = out_dir.join(format!(".staging-{}", std::process::id()));
    let result = (|| {
        fs::create_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        for (name, bytes) in files {
            let p = staging.join(name);
            fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        }
        for (name, _) in files {
            let (from, to) = (staging.join(name), out_dir.join(name));
            fs::rename(&from, &to).map_err(|e| CliError::io(&to, e))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for (name, _) in files {
            let _ = fs::remove_file(out_dir.join(name));
        }
    }
    let _ = fs::remove_dir_all(&staging);
    result
}

pub fn run(config_path: &Path, ov: &Overrides) -> CliResult<PathBuf> {
    let started = Instant::now();
    let started_at = chrono::Utc::now();
    let p = prepare(config_path, ov)?;
    let workers = resolve_workers(ov.workers.as_deref(), &p.config)?;
    for w in &p.spec.plan.warnings {
        warn!("{w}");
    }
    info!(
        "{} rows, {} assets, {} conditioning columns, {} vine windows, workers {}x{}",
        p.panel.len(),
        p.config.assets.len(),
        p.config.conditioning.len(),
        p.spec.plan.n_vine_windows(),
        workers.level1,
        workers.level2
    );
    let out = execute(&p, workers)?;
    let rows = rows_from_series(&out.series, &p.panel.dates);
    let mut csv = Vec::new();
    write_rows(&mut csv, &rows)?;
    let backtests = backtest_rows(&rows, settings(&p.config))?;
    let oracle: Vec<&str> = p
        .spec
        .strategies
        .iter()
        .filter(|s| **s == Strategy::RealizedResidual)
        .map(|s| s.label())
        .collect();
    let manifest = json!({
        "artifact_version": ARTIFACT_VERSION,
        "config": p.config,
        "seed": p.config.seed,
        "workers": workers,
        "started_at": started_at.to_rfc3339(),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "rows": rows.len(),
        "oracle_strategies": oracle,
        "notes": if oracle.is_empty() { Value::Null } else {
            json!("realized_residual conditions on the same day's realized index return and is not a genuine forecast")
        },
    });
    publish(
        &p.config.output_dir,
        &[
            ("risk_series.csv", csv),
            ("backtests.json", json_bytes(&Value::Array(backtests))),
            ("diagnostics.json", json_bytes(&diagnostics(&p, &out))),
            ("manifest.json", json_bytes(&manifest)),
        ],
    )?;
    info!("wrote {} risk rows to {}", rows.len(), p.config.output_dir.display());
    Ok(p.config.output_dir)
}

pub fn backtest(series_path: &Path, config_path: &Path, ov: &Overrides) -> CliResult<PathBuf> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(s) = ov.seed {
        config.seed = s;
    }
    if let Some(o) = &ov.out {
        config.output_dir = o.clone();
    }
    config.check_static()?;
    let file = fs::File::open(series_path).map_err(|e| CliError::io(series_path, e))?;
    let rows: Vec<SeriesRow> = read_rows(file)?;
    let reports = backtest_rows(&rows, settings(&config))?;
    publish(&config.output_dir, &[("backtests.json", json_bytes(&Value::Array(reports)))])?;
    Ok(config.output_dir)
}

/// Check a config and its data without estimating anything.
pub fn validate(config_path: &Path, ov: &Overrides) -> CliResult<String> {
    let p = prepare(config_path, ov)?;
    resolve_workers(ov.workers.as_deref(), &p.config)?;
    let keys = p.spec.series_keys().len();
    let days = p.spec.plan.n_forecast_days();
    let mut msg = format!(
        "ok: {} rows, {} forecast days, {} marginal windows, {} vine windows, {} risk rows",
        p.panel.len(),
        days,
        p.spec.plan.n_marginal_windows(),
        p.spec.plan.n_vine_windows(),
        days * keys * p.spec.alphas.len() * p.spec.measures.len()
    );
    for w in &p.spec.plan.warnings {
        msg.push_str(&format!("\nwarning: {w}"));
    }
    Ok(msg)
}
