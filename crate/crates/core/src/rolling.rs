//! Rolling-window forecasting engine.
//!
//! Marginal ARMA-GARCH models are refitted every `gamma` days on the last
//! `Gamma` observations; D-vines are refitted every `kappa` days on the
//! last `Psi` copula observations. Each forecast day simulates portfolio
//! returns one step ahead and reports VaR/ES estimates per strategy.

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::copulas::Family;
use crate::distributions::Prepared;
use crate::dvine::{fit_dvine, outer_index_value, sample_conditional, sample_unconditional, select_order, DVine};
use crate::error::{Error, Result};
use crate::margins::{fit_arma_garch, ljung_box, Innovation, LjungBox, MarginalFit};
use crate::numerics::{derive_seed, open_unit, seeded_rng};
use crate::risk::{RiskMeasure, SortedSamples};

/// Lags reported by the Ljung–Box diagnostics.
pub const LJUNG_BOX_LAGS: [usize; 2] = [5, 10];

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

/// The Γ/γ/Ψ/κ rolling schedule over `T` observations.
///
/// Days are numbered `1..=T`; forecasts are made for days `Γ+1..=T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub total: usize,
    pub fit_margin: usize,
    pub use_margin: usize,
    pub fit_vine: usize,
    pub use_vine: usize,
    pub warnings: Vec<String>,
}

impl WindowPlan {
    /// Validate `(T, Gamma, gamma, Psi, kappa)`; errors name the offending parameter.
    pub fn new(total: usize, fit_margin: usize, use_margin: usize, fit_vine: usize, use_vine: usize) -> Result<Self> {
        for (name, v) in [("Gamma", fit_margin), ("gamma", use_margin), ("Psi", fit_vine), ("kappa", use_vine)] {
            if v == 0 {
                return config_err(format!("{name} must be positive"));
            }
        }
        if fit_margin >= total {
            return config_err(format!("Gamma = {fit_margin} must be smaller than T = {total}"));
        }
        if fit_vine > fit_margin {
            return config_err(format!("Psi = {fit_vine} must not exceed Gamma = {fit_margin}"));
        }
        if use_margin > total - fit_margin {
            return config_err(format!("gamma = {use_margin} must not exceed T - Gamma = {}", total - fit_margin));
        }
        if use_vine > use_margin {
            return config_err(format!("kappa = {use_vine} must not exceed gamma = {use_margin}"));
        }
        let mut warnings = Vec::new();
        if !(total - fit_margin).is_multiple_of(use_margin) {
            warnings.push(format!(
                "T - Gamma = {} is not a multiple of gamma = {use_margin}; the last marginal window is partial",
                total - fit_margin
            ));
        }
        if !use_margin.is_multiple_of(use_vine) {
            warnings.push(format!(
                "gamma = {use_margin} is not a multiple of kappa = {use_vine}; some vine windows straddle marginal refits"
            ));
        }
        Ok(WindowPlan {
            total,
            fit_margin,
            use_margin,
            fit_vine,
            use_vine,
            warnings,
        })
    }

    pub fn n_forecast_days(&self) -> usize {
        self.total - self.fit_margin
    }

    pub fn n_marginal_windows(&self) -> usize {
        self.n_forecast_days().div_ceil(self.use_margin)
    }

    pub fn n_vine_windows(&self) -> usize {
        self.n_forecast_days().div_ceil(self.use_vine)
    }

    fn check_day(&self, t: usize) {
        assert!(t > self.fit_margin && t <= self.total, "day {t} outside the forecast range");
    }

    /// Marginal window (1-based) containing forecast day `t`.
    pub fn marginal_window(&self, t: usize) -> usize {
        self.check_day(t);
        (t - self.fit_margin).div_ceil(self.use_margin)
    }

    /// Vine window (1-based) containing forecast day `t`.
    pub fn vine_window(&self, t: usize) -> usize {
        self.check_day(t);
        (t - self.fit_margin).div_ceil(self.use_vine)
    }

    /// Forecast days `(first, last)` of vine window `v`.
    pub fn vine_days(&self, v: usize) -> (usize, usize) {
        let first = self.fit_margin + (v - 1) * self.use_vine + 1;
        (first, (first + self.use_vine - 1).min(self.total))
    }

    /// Forecast days `(first, last)` of marginal window `m`.
    pub fn marginal_days(&self, m: usize) -> (usize, usize) {
        let first = self.fit_margin + (m - 1) * self.use_margin + 1;
        (first, (first + self.use_margin - 1).min(self.total))
    }

    /// Marginal window whose models serve every day of vine window `v`:
    /// the one in force on the vine window's first day.
    pub fn owning_marginal_window(&self, v: usize) -> usize {
        self.marginal_window(self.vine_days(v).0)
    }
}

/// Normalise (or check) portfolio weights.
pub fn portfolio_weights(weights: &[f64], raw: bool) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return config_err("weights are empty");
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return config_err(format!("weights must be finite and nonnegative, got {w}"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return config_err("weights are all zero");
    }
    Ok(if raw {
        weights.to_vec()
    } else {
        weights.iter().map(|w| w / total).collect()
    })
}

/// Weighted row sums of per-asset sample columns.
pub fn aggregate_portfolio(columns: &[Vec<f64>], weights: &[f64], raw: bool) -> Result<Vec<f64>> {
    let w = portfolio_weights(weights, raw)?;
    crate::risk::aggregate(columns, &w)
}

/// How the conditioning index values are chosen for a forecast day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// No conditioning; asset-only vine.
    Unconditional,
    /// Index fixed at each configured copula-scale level.
    Quantile,
    /// Index fixed at its previous day's copula value.
    PriorResidual,
    /// Index fixed at the current day's realized copula value. Uses
    /// information not available at forecast time.
    RealizedResidual,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Unconditional => "unconditional",
            Strategy::Quantile => "quantile",
            Strategy::PriorResidual => "prior_residual",
            Strategy::RealizedResidual => "realized_residual",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Strategy::Unconditional,
            Strategy::Quantile,
            Strategy::PriorResidual,
            Strategy::RealizedResidual,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }

    pub fn is_conditional(self) -> bool {
        self != Strategy::Unconditional
    }

    fn code(self) -> u64 {
        self as u64
    }
}

/// Return panel split into portfolio assets and conditioning indices.
#[derive(Debug, Clone)]
pub struct Panel {
    /// One log-return column per asset.
    pub assets: Vec<Vec<f64>>,
    /// Zero to two index columns.
    pub indices: Vec<Vec<f64>>,
}

impl Panel {
    pub fn len(&self) -> usize {
        self.assets.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn column(&self, c: usize) -> &[f64] {
        if c < self.assets.len() {
            &self.assets[c]
        } else {
            &self.indices[c - self.assets.len()]
        }
    }

    fn n_columns(&self) -> usize {
        self.assets.len() + self.indices.len()
    }
}

/// Everything a rolling run needs besides the data.
#[derive(Debug, Clone)]
pub struct RollingSpec {
    pub plan: WindowPlan,
    pub weights: Vec<f64>,
    pub raw_weights: bool,
    pub families: Vec<Family>,
    pub n_samples: usize,
    pub alphas: Vec<f64>,
    pub measures: Vec<RiskMeasure>,
    pub strategies: Vec<Strategy>,
    /// Copula-scale index levels for [`Strategy::Quantile`].
    pub alpha_i: Vec<f64>,
    pub cutoff_depth: Option<usize>,
    pub innovation: Innovation,
    pub n_mc: usize,
    pub seed: u64,
}

impl RollingSpec {
    pub fn validate(&self, panel: &Panel) -> Result<()> {
        let d = panel.assets.len();
        if d == 0 {
            return config_err("no asset columns");
        }
        if panel.indices.len() > 2 {
            return config_err("at most two conditioning columns are supported");
        }
        if panel.assets.iter().chain(&panel.indices).any(|c| c.len() != panel.len()) {
            return Err(Error::InvalidInput("panel columns differ in length".into()));
        }
        if panel.len() != self.plan.total {
            return config_err(format!(
                "window plan expects T = {} observations but the panel has {}",
                self.plan.total,
                panel.len()
            ));
        }
        if self.weights.len() != d {
            return config_err(format!("{} weights for {d} assets", self.weights.len()));
        }
        portfolio_weights(&self.weights, self.raw_weights)?;
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return config_err("alpha levels must be nonempty and inside (0, 1)");
        }
        if let Some(a) = self.alphas.iter().find(|a| self.n_samples < (1.0 / **a - 1e-9).ceil() as usize) {
            return config_err(format!("n_samples = {} is too small for alpha = {a}", self.n_samples));
        }
        if self.measures.is_empty() {
            return config_err("no risk measures requested");
        }
        if self.measures.contains(&RiskMeasure::EsMc) && self.n_mc < 100 {
            return config_err(format!("n_mc = {} is below the minimum of 100", self.n_mc));
        }
        if self.strategies.is_empty() {
            return config_err("no strategies requested");
        }
        let conditional = self.strategies.iter().any(|s| s.is_conditional());
        if conditional && panel.indices.is_empty() {
            return config_err("conditional strategies need at least one conditioning column");
        }
        if self.strategies.contains(&Strategy::Quantile) {
            if self.alpha_i.is_empty() {
                return config_err("alpha_I levels are required for the quantile strategy");
            }
            if let Some(a) = self.alpha_i.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
                return config_err(format!("alpha_I level {a} outside (0, 1)"));
            }
            for (i, a) in self.alpha_i.iter().enumerate() {
                if self.alpha_i[..i].contains(a) {
                    return config_err(format!("alpha_I level {a} is repeated"));
                }
            }
        }
        if self.families.is_empty() {
            return config_err("no copula families allowed");
        }
        if self.cutoff_depth == Some(0) {
            return config_err("cutoff_depth must be at least 1");
        }
        if self.plan.fit_vine < 2 {
            return config_err("Psi must be at least 2");
        }
        Ok(())
    }

    /// Number of series (strategy, alpha_I) pairs per day.
    pub fn series_keys(&self) -> Vec<(Strategy, Option<usize>)> {
        let mut keys = Vec::new();
        for &s in &self.strategies {
            if s == Strategy::Quantile {
                keys.extend((0..self.alpha_i.len()).map(|i| (s, Some(i))));
            } else {
                keys.push((s, None));
            }
        }
        keys
    }
}

/// One risk estimate for one forecast day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    /// 0-based row in the panel.
    pub day: usize,
    pub measure: RiskMeasure,
    pub alpha: f64,
    pub strategy: Strategy,
    pub alpha_i: Option<f64>,
    pub estimate: f64,
    pub realized: f64,
    /// First conditioning column's value on the return scale.
    pub cond_value: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RiskSeries {
    pub records: Vec<RiskRecord>,
}

impl RiskSeries {
    /// Estimates of one series, in day order.
    pub fn select(&self, measure: RiskMeasure, alpha: f64, strategy: Strategy, alpha_i: Option<f64>) -> Vec<&RiskRecord> {
        self.records
            .iter()
            .filter(|r| r.measure == measure && r.alpha == alpha && r.strategy == strategy && r.alpha_i == alpha_i)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalDiagnostics {
    pub window: usize,
    pub column: usize,
    pub fit: MarginalFit,
    pub ljung_box: Vec<LjungBox>,
    pub ljung_box_squared: Vec<LjungBox>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VineDiagnostics {
    pub window: usize,
    pub marginal_window: usize,
    pub conditional: bool,
    pub vine: DVine,
    pub loglik: f64,
    pub aic: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RollingOutput {
    pub series: RiskSeries,
    pub marginals: Vec<MarginalDiagnostics>,
    pub vines: Vec<VineDiagnostics>,
}

/// Worker pools for the two parallel levels: windows, then days.
#[derive(Clone, Copy)]
pub struct Pools<'a> {
    pub windows: &'a ThreadPool,
    pub days: &'a ThreadPool,
}

/// A fitted marginal model with its filtered path over the whole panel tail.
struct MarginState {
    fit: MarginalFit,
    law: Prepared,
    /// Row of the panel where the filter starts.
    start: usize,
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl MarginState {
    fn forecast(&self, row: usize) -> (f64, f64) {
        (self.mu[row - self.start], self.sigma[row - self.start])
    }

    fn copula_value(&self, x: f64, row: usize) -> f64 {
        let (m, s) = self.forecast(row);
        crate::distributions::clamp_unit(self.law.cdf((x - m) / s))
    }
}

fn fit_margin(panel: &Panel, plan: &WindowPlan, m: usize, c: usize, inn: Innovation) -> Result<MarginState> {
    // rows t0 - Gamma .. t0 are observed when the window starts
    let t0 = plan.fit_margin + (m - 1) * plan.use_margin;
    let start = t0 - plan.fit_margin;
    let col = panel.column(c);
    let fit = fit_arma_garch(&col[start..t0], inn)
        .map_err(|e| Error::Fit(format!("marginal window {m}, column {c}: {e}")))?;
    let f = fit.filter(&col[start..]);
    Ok(MarginState {
        law: fit.law(),
        fit,
        start,
        mu: f.mu,
        sigma: f.sigma,
    })
}

/// Copula-scale data for the `Psi` rows before `end`, one column per panel column in `cols`.
fn copula_data(panel: &Panel, margins: &[MarginState], cols: &[usize], end: usize, psi: usize) -> Vec<Vec<f64>> {
    cols.iter()
        .map(|&c| {
            let x = panel.column(c);
            (end - psi..end).map(|r| margins[c].copula_value(x[r], r)).collect()
        })
        .collect()
}

fn fit_vine_on(
    data: &[Vec<f64>],
    n_cond: usize,
    spec: &RollingSpec,
    v: usize,
    m: usize,
) -> Result<Option<VineDiagnostics>> {
    if data.len() < 2 {
        return Ok(None);
    }
    let order = select_order(data, n_cond, spec.cutoff_depth)?;
    let fit = fit_dvine(data, &order, n_cond, &spec.families)
        .map_err(|e| Error::Fit(format!("vine window {v}: {e}")))?;
    Ok(Some(VineDiagnostics {
        window: v,
        marginal_window: m,
        conditional: n_cond > 0,
        vine: fit.vine,
        loglik: fit.loglik,
        aic: fit.aic,
        warnings: fit.warnings,
    }))
}

/// Independent uniforms in the same sharded layout as vine sampling.
fn sample_uniform_column(n: usize, seed: u64) -> Vec<f64> {
    let shard = crate::dvine::SHARD_ROWS;
    (0..n.div_ceil(shard))
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = seeded_rng(derive_seed(seed, &[k as u64]));
            let len = shard.min(n - k * shard);
            (0..len).map(move |_| open_unit(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

struct WindowModels<'a> {
    v: usize,
    margins: &'a [MarginState],
    uncond: Option<&'a VineDiagnostics>,
    cond: Option<&'a VineDiagnostics>,
}

fn day_records(panel: &Panel, spec: &RollingSpec, weights: &[f64], w: &WindowModels<'_>, row: usize) -> Result<Vec<RiskRecord>> {
    let d = panel.assets.len();
    let n_idx = panel.indices.len();
    let realized: f64 = (0..d).map(|j| weights[j] * panel.assets[j][row]).sum();
    let forecasts: Vec<(f64, f64)> = w.margins.iter().map(|m| m.forecast(row)).collect();

    // copula values of each index under the prior and realized strategies
    let index_u = |r: usize, c: usize| w.margins[c].copula_value(panel.column(c)[r], r);
    let mut out = Vec::new();
    for (strategy, ai) in spec.series_keys() {
        let seed = derive_seed(
            spec.seed,
            &[w.v as u64, row as u64, strategy.code(), ai.map_or(u64::MAX, |i| i as u64)],
        );
        let mut cond_value = None;
        let u_cols: Vec<Vec<f64>> = match strategy {
            Strategy::Unconditional => match w.uncond {
                Some(vd) => sample_unconditional(&vd.vine, spec.n_samples, seed),
                None => vec![sample_uniform_column(spec.n_samples, seed)],
            },
            _ => {
                let vd = w.cond.expect("conditional vine fitted");
                let vine = &vd.vine;
                // u per index column (offset from d)
                let mut u_idx = vec![0.0; n_idx];
                match strategy {
                    Strategy::Quantile => {
                        let a = spec.alpha_i[ai.expect("quantile level")];
                        let dim = vine.dim();
                        u_idx[vine.order()[dim - n_idx] - d] = a;
                        if n_idx == 2 {
                            u_idx[vine.order()[dim - 1] - d] = outer_index_value(vine, a);
                        }
                    }
                    Strategy::PriorResidual => {
                        for (k, u) in u_idx.iter_mut().enumerate() {
                            *u = index_u(row - 1, d + k);
                        }
                    }
                    Strategy::RealizedResidual => {
                        for (k, u) in u_idx.iter_mut().enumerate() {
                            *u = index_u(row, d + k);
                        }
                    }
                    Strategy::Unconditional => unreachable!(),
                }
                let (mu, sigma) = forecasts[d];
                cond_value = Some(mu + sigma * w.margins[d].law.quantile(u_idx[0]));
                let dim = vine.dim();
                let fixed: Vec<f64> = (dim - n_idx..dim).map(|p| u_idx[vine.order()[p] - d]).collect();
                sample_conditional(vine, &fixed, spec.n_samples, seed)?
            }
        };
        let returns: Vec<Vec<f64>> = u_cols
            .iter()
            .enumerate()
            .map(|(j, col)| {
                let (mu, sigma) = forecasts[j];
                let law = &w.margins[j].law;
                col.iter().map(|u| mu + sigma * law.quantile(*u)).collect()
            })
            .collect();
        let portfolio = crate::risk::aggregate(&returns, weights)?;
        if portfolio.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite simulated portfolio return on row {row}")));
        }
        let sorted = SortedSamples::new(&portfolio)?;
        for (ia, &alpha) in spec.alphas.iter().enumerate() {
            for &measure in &spec.measures {
                let estimate = sorted.measure(measure, alpha, spec.n_mc, derive_seed(seed, &[ia as u64, 0xe5]))?;
                out.push(RiskRecord {
                    day: row,
                    measure,
                    alpha,
                    strategy,
                    alpha_i: ai.map(|i| spec.alpha_i[i]),
                    estimate,
                    realized,
                    cond_value,
                });
            }
        }
    }
    Ok(out)
}

fn in_pool<T: Send>(pool: Option<&ThreadPool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

/// Run the rolling estimation.
///
/// With `pools = None` the current rayon context is used for both levels.
/// Output does not depend on the number of workers.
pub fn run(panel: &Panel, spec: &RollingSpec, pools: Option<Pools<'_>>) -> Result<RollingOutput> {
    spec.validate(panel)?;
    let plan = &spec.plan;
    let d = panel.assets.len();
    let n_idx = panel.indices.len();
    let n_cols = panel.n_columns();
    let weights = portfolio_weights(&spec.weights, spec.raw_weights)?;
    let want_uncond = spec.strategies.contains(&Strategy::Unconditional);
    let want_cond = spec.strategies.iter().any(|s| s.is_conditional());
    // index margins are only needed for conditional strategies
    let fitted_cols = if want_cond { n_cols } else { d };

    let window_pool = pools.map(|p| p.windows);
    let day_pool = pools.map(|p| p.days);

    // level 1a: marginal fits
    let n_m = plan.n_marginal_windows();
    let tasks: Vec<(usize, usize)> = (1..=n_m).flat_map(|m| (0..fitted_cols).map(move |c| (m, c))).collect();
    let fitted: Vec<Result<MarginState>> = in_pool(window_pool, || {
        tasks
            .par_iter()
            .map(|&(m, c)| fit_margin(panel, plan, m, c, spec.innovation))
            .collect()
    });
    let mut margins: Vec<Vec<MarginState>> = (0..n_m).map(|_| Vec::with_capacity(fitted_cols)).collect();
    for ((m, _), f) in tasks.iter().zip(fitted) {
        margins[m - 1].push(f?);
    }

    // level 1b: vine windows, level 2: days inside each window
    let n_v = plan.n_vine_windows();
    let per_window: Vec<Result<(Vec<RiskRecord>, Vec<VineDiagnostics>)>> = in_pool(window_pool, || {
        (1..=n_v)
            .into_par_iter()
            .map(|v| {
                let m = plan.owning_marginal_window(v);
                let ms = &margins[m - 1];
                let (first, last) = plan.vine_days(v);
                // rows are 0-based: day t is row t - 1
                let end = first - 1;
                let asset_cols: Vec<usize> = (0..d).collect();
                let uncond = if want_uncond {
                    fit_vine_on(&copula_data(panel, ms, &asset_cols, end, plan.fit_vine), 0, spec, v, m)?
                } else {
                    None
                };
                let cond = if want_cond {
                    let cols: Vec<usize> = (0..n_cols).collect();
                    fit_vine_on(&copula_data(panel, ms, &cols, end, plan.fit_vine), n_idx, spec, v, m)?
                } else {
                    None
                };
                let models = WindowModels {
                    v,
                    margins: ms,
                    uncond: uncond.as_ref(),
                    cond: cond.as_ref(),
                };
                let days: Vec<Result<Vec<RiskRecord>>> = in_pool(day_pool, || {
                    (first - 1..last)
                        .into_par_iter()
                        .map(|row| day_records(panel, spec, &weights, &models, row))
                        .collect()
                });
                let mut recs = Vec::new();
                for r in days {
                    recs.extend(r?);
                }
                let diags = uncond.into_iter().chain(cond).collect();
                Ok((recs, diags))
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut vines = Vec::new();
    for r in per_window {
        let (recs, diags) = r?;
        records.extend(recs);
        vines.extend(diags);
    }

    let mut marginals = Vec::new();
    for (m, ms) in margins.into_iter().enumerate() {
        for (c, st) in ms.into_iter().enumerate() {
            let t0 = plan.fit_margin + m * plan.use_margin;
            let z = st.fit.std_residuals(&panel.column(c)[st.start..t0]);
            let z2: Vec<f64> = z.iter().map(|x| x * x).collect();
            let lb = |x: &[f64]| LJUNG_BOX_LAGS.iter().filter_map(|&h| ljung_box(x, h).ok()).collect::<Vec<_>>();
            marginals.push(MarginalDiagnostics {
                window: m + 1,
                column: c,
                ljung_box: lb(&z),
                ljung_box_squared: lb(&z2),
                fit: st.fit,
            });
        }
    }

    Ok(RollingOutput {
        series: RiskSeries { records },
        marginals,
        vines,
    })
}
