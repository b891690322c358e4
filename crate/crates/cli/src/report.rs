//! Risk-series CSV and backtest report assembly.

use std::io::{Read, Write};

use serde::Serialize;
use serde_json::{json, Map, Value};
use vinerisk_core::backtest::{
    comparative_backtest, conditional_calibration_test, exceedance_residual_test, lr_conditional_coverage,
    lr_independence, lr_unconditional_coverage, Forecasts, Sided, TestKind, ViolationProcess,
};
use vinerisk_core::numerics::derive_seed;
use vinerisk_core::risk::RiskMeasure;
use vinerisk_core::rolling::{RiskSeries, Strategy};

use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 8] = [
    "date",
    "measure",
    "alpha",
    "strategy",
    "alpha_I",
    "estimate",
    "realized_return",
    "cond_value_return_scale",
];

/// One row of `risk_series.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub date: String,
    pub measure: RiskMeasure,
    pub alpha: f64,
    pub strategy: Strategy,
    pub alpha_i: Option<f64>,
    pub estimate: f64,
    pub realized: f64,
    pub cond_value: Option<f64>,
}

pub fn rows_from_series(series: &RiskSeries, dates: &[String]) -> Vec<SeriesRow> {
    series
        .records
        .iter()
        .map(|r| SeriesRow {
            date: dates[r.day].clone(),
            measure: r.measure,
            alpha: r.alpha,
            strategy: r.strategy,
            alpha_i: r.alpha_i,
            estimate: r.estimate,
            realized: r.realized,
            cond_value: r.cond_value,
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows<W: Write>(out: W, rows: &[SeriesRow]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io = |e: csv::Error| CliError::Data(format!("writing risk series: {e}"));
    w.write_record(HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.date.clone(),
            r.measure.label().to_string(),
            r.alpha.to_string(),
            r.strategy.label().to_string(),
            opt(r.alpha_i),
            r.estimate.to_string(),
            r.realized.to_string(),
            opt(r.cond_value),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Data(format!("writing risk series: {e}")))?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> CliResult<Vec<SeriesRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| CliError::Data(format!("risk series header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(CliError::Data(format!("risk series header must be {}", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Data(format!("risk series row {row}: {e}")))?;
        let num = |c: usize| -> CliResult<f64> {
            rec[c]
                .parse()
                .map_err(|_| CliError::Data(format!("risk series row {row}, column '{}': '{}' is not a number", HEADER[c], &rec[c])))
        };
        let opt_num = |c: usize| -> CliResult<Option<f64>> {
            if rec[c].is_empty() {
                Ok(None)
            } else {
                num(c).map(Some)
            }
        };
        rows.push(SeriesRow {
            date: rec[0].to_string(),
            measure: RiskMeasure::parse(&rec[1])
                .ok_or_else(|| CliError::Data(format!("risk series row {row}: unknown measure '{}'", &rec[1])))?,
            alpha: num(2)?,
            strategy: Strategy::parse(&rec[3])
                .ok_or_else(|| CliError::Data(format!("risk series row {row}: unknown strategy '{}'", &rec[3])))?,
            alpha_i: opt_num(4)?,
            estimate: num(5)?,
            realized: num(6)?,
            cond_value: opt_num(7)?,
        });
    }
    Ok(rows)
}

/// Settings for [`backtest_rows`].
#[derive(Debug, Clone, Copy)]
pub struct BacktestSettings {
    pub n_boot: usize,
    pub eta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    strategy: Strategy,
    alpha_i: Option<f64>,
}

struct Series {
    estimate: Vec<f64>,
    realized: Vec<f64>,
}

fn to_object<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v).expect("report serializes") {
        Value::Object(m) => m,
        _ => unreachable!("reports are structs"),
    }
}

fn tag(mut m: Map<String, Value>, key: Key) -> Value {
    m.insert("strategy".into(), json!(key.strategy.label()));
    m.insert("alpha_I".into(), json!(key.alpha_i));
    Value::Object(m)
}

fn not_applicable(test: TestKind, measure: &str, alpha: f64, key: Key, reason: String) -> Value {
    let mut m = Map::new();
    m.insert("test".into(), serde_json::to_value(test).expect("test kind"));
    m.insert("measure".into(), json!(measure));
    m.insert("alpha".into(), json!(alpha));
    m.insert("statistic".into(), Value::Null);
    m.insert("p_value".into(), Value::Null);
    m.insert("status".into(), json!("NOT_APPLICABLE"));
    m.insert("reason".into(), json!(reason));
    tag(m, key)
}

/// All traditional and comparative backtests for a risk-series table.
///
/// Comparative backtests score every series against the first listed
/// series (same measure and alpha), which plays the standard model.
pub fn backtest_rows(rows: &[SeriesRow], settings: BacktestSettings) -> CliResult<Vec<Value>> {
    let mut keys: Vec<Key> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut measures: Vec<RiskMeasure> = Vec::new();
    for r in rows {
        let k = Key {
            strategy: r.strategy,
            alpha_i: r.alpha_i,
        };
        if !keys.contains(&k) {
            keys.push(k);
        }
        if !alphas.contains(&r.alpha) {
            alphas.push(r.alpha);
        }
        if !measures.contains(&r.measure) {
            measures.push(r.measure);
        }
    }
    let get = |k: Key, m: RiskMeasure, a: f64| -> Option<Series> {
        let sel: Vec<&SeriesRow> = rows
            .iter()
            .filter(|r| r.strategy == k.strategy && r.alpha_i == k.alpha_i && r.measure == m && r.alpha == a)
            .collect();
        if sel.is_empty() {
            return None;
        }
        Some(Series {
            estimate: sel.iter().map(|r| r.estimate).collect(),
            realized: sel.iter().map(|r| r.realized).collect(),
        })
    };

    let mut out = Vec::new();
    for (ki, &key) in keys.iter().enumerate() {
        for (ai, &alpha) in alphas.iter().enumerate() {
            let Some(var) = get(key, RiskMeasure::VaR, alpha) else {
                continue;
            };
            let x = &var.realized;
            let vp = ViolationProcess::from_series(x, &var.estimate, alpha)?;
            let mut push = |r: vinerisk_core::Result<vinerisk_core::backtest::TestReport>, test: TestKind, measure: &str| {
                match r {
                    Ok(rep) => out.push(tag(to_object(&rep.with_measure(measure, alpha)), key)),
                    Err(e) => out.push(not_applicable(test, measure, alpha, key, e.to_string())),
                }
            };
            push(lr_unconditional_coverage(&vp), TestKind::LrUc, "VaR");
            push(lr_independence(&vp), TestKind::LrInd, "VaR");
            push(lr_conditional_coverage(&vp), TestKind::LrCc, "VaR");
            for sided in [Sided::Two, Sided::One] {
                push(
                    conditional_calibration_test(x, &var.estimate, None, alpha, sided),
                    TestKind::ConditionalCalibration,
                    "VaR",
                );
            }
            for (mi, &m) in measures.iter().enumerate() {
                if !m.is_es() {
                    continue;
                }
                let Some(es) = get(key, m, alpha) else {
                    continue;
                };
                for (si, sided) in [Sided::Two, Sided::One].into_iter().enumerate() {
                    let seed = derive_seed(settings.seed, &[0xb0, ki as u64, ai as u64, mi as u64, si as u64]);
                    push(
                        exceedance_residual_test(x, &var.estimate, &es.estimate, sided, settings.n_boot, seed),
                        TestKind::ExceedanceResidual,
                        m.label(),
                    );
                    push(
                        conditional_calibration_test(x, &var.estimate, Some(&es.estimate), alpha, sided),
                        TestKind::ConditionalCalibration,
                        m.label(),
                    );
                }
            }
        }
    }

    // comparative: every later series against the first one
    if let Some((&standard, others)) = keys.split_first() {
        for &key in others {
            for &alpha in &alphas {
                let (Some(sv), Some(iv)) = (get(standard, RiskMeasure::VaR, alpha), get(key, RiskMeasure::VaR, alpha))
                else {
                    continue;
                };
                let mut push = |r: vinerisk_core::Result<vinerisk_core::backtest::ComparativeResult>, measure: &str| {
                    match r {
                        Ok(c) => {
                            let mut m = to_object(&c);
                            m.insert("measure".into(), json!(measure));
                            m.insert("standard_strategy".into(), json!(standard.strategy.label()));
                            m.insert("standard_alpha_I".into(), json!(standard.alpha_i));
                            out.push(tag(m, key));
                        }
                        Err(e) => out.push(not_applicable(TestKind::Comparative, measure, alpha, key, e.to_string())),
                    }
                };
                push(
                    comparative_backtest(Forecasts::VaR(&iv.estimate), Forecasts::VaR(&sv.estimate), &iv.realized, alpha, settings.eta),
                    "VaR",
                );
                for &m in measures.iter().filter(|m| m.is_es()) {
                    let (Some(se), Some(ie)) = (get(standard, m, alpha), get(key, m, alpha)) else {
                        continue;
                    };
                    push(
                        comparative_backtest(
                            Forecasts::VarEs {
                                var: &iv.estimate,
                                es: &ie.estimate,
                            },
                            Forecasts::VarEs {
                                var: &sv.estimate,
                                es: &se.estimate,
                            },
                            &iv.realized,
                            alpha,
                            settings.eta,
                        ),
                        m.label(),
                    );
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(day: usize, m: RiskMeasure, est: f64) -> SeriesRow {
        SeriesRow {
            date: format!("2021-01-{:02}", day + 1),
            measure: m,
            alpha: 0.05,
            strategy: Strategy::Unconditional,
            alpha_i: None,
            estimate: est,
            realized: 0.001 * day as f64 - 0.01,
            cond_value: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(0, RiskMeasure::VaR, -0.0123456789), row(1, RiskMeasure::EsMean, -0.02)];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains('\r'));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }
}
