//! Backtests for VaR/ES forecast series.
//!
//! Traditional tests: likelihood-ratio coverage tests on the violation
//! process, a bootstrap test on exceedance residuals and the Wald-type
//! conditional calibration test. Comparative tests: strictly consistent
//! scoring functions and the three-zone classification.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::distributions::norm_cdf;
use crate::error::{domain, invalid, Result};
use crate::numerics::{derive_seed, mean, sample_variance, seeded_rng};

/// Default number of bootstrap resamples.
pub const DEFAULT_BOOT: usize = 4999;

/// Identifiers used in serialized reports.
///
/// The `Esr*` names are reserved for regression-based ES backtests; no
/// function in this crate produces them yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    LrUc,
    LrInd,
    LrCc,
    ExceedanceResidual,
    ConditionalCalibration,
    LjungBox,
    Comparative,
    EsrIntercept,
    EsrBivariate,
    EsrStrict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Ok,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: TestKind,
    pub measure: Option<String>,
    pub alpha: Option<f64>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub sided: Sided,
    pub status: Status,
    pub aux: BTreeMap<String, f64>,
}

impl TestReport {
    fn ok(test: TestKind, statistic: f64, p_value: f64, sided: Sided) -> Self {
        TestReport {
            test,
            measure: None,
            alpha: None,
            statistic: Some(statistic),
            p_value: Some(p_value.clamp(0.0, 1.0)),
            sided,
            status: Status::Ok,
            aux: BTreeMap::new(),
        }
    }

    fn not_applicable(test: TestKind, sided: Sided) -> Self {
        TestReport {
            test,
            measure: None,
            alpha: None,
            statistic: None,
            p_value: None,
            sided,
            status: Status::NotApplicable,
            aux: BTreeMap::new(),
        }
    }

    pub fn with_measure(mut self, measure: &str, alpha: f64) -> Self {
        self.measure = Some(measure.to_string());
        self.alpha = Some(alpha);
        self
    }

    fn with_aux(mut self, key: &str, v: f64) -> Self {
        self.aux.insert(key.to_string(), v);
        self
    }

    pub fn rejects(&self, level: f64) -> bool {
        self.p_value.is_some_and(|p| p <= level)
    }
}

/// Violation indicators `1{r_t < VaR_t}` at level `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationProcess {
    pub hits: Vec<bool>,
    pub alpha: f64,
}

impl ViolationProcess {
    pub fn new(hits: Vec<bool>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return domain(format!("alpha = {alpha} outside (0, 1)"));
        }
        Ok(ViolationProcess { hits, alpha })
    }

    pub fn from_series(returns: &[f64], var: &[f64], alpha: f64) -> Result<Self> {
        check_aligned(returns, var)?;
        Self::new(returns.iter().zip(var).map(|(r, v)| r < v).collect(), alpha)
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn violations(&self) -> usize {
        self.hits.iter().filter(|h| **h).count()
    }

    /// Transition counts `[n00, n01, n10, n11]` over consecutive pairs.
    pub fn transitions(&self) -> [usize; 4] {
        let mut n = [0; 4];
        for w in self.hits.windows(2) {
            n[2 * w[0] as usize + w[1] as usize] += 1;
        }
        n
    }
}

fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return invalid(format!("series lengths differ ({} vs {})", a.len(), b.len()));
    }
    Ok(())
}

/// `k * ln(p)` with the convention `0 * ln 0 = 0`.
fn xlogy(k: usize, p: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * p.ln()
    }
}

fn bernoulli_ll(zeros: usize, ones: usize, p: f64) -> f64 {
    xlogy(zeros, 1.0 - p) + xlogy(ones, p)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn chi2_sf(x: f64, df: f64) -> f64 {
    let chi = ChiSquared::new(df).expect("positive degrees of freedom");
    (1.0 - chi.cdf(x.max(0.0))).clamp(0.0, 1.0)
}

fn lr_uc_stat(vp: &ViolationProcess) -> f64 {
    let n = vp.len();
    let x = vp.violations();
    let pi = ratio(x, n);
    (-2.0 * (bernoulli_ll(n - x, x, vp.alpha) - bernoulli_ll(n - x, x, pi))).max(0.0)
}

fn lr_ind_stat(vp: &ViolationProcess) -> f64 {
    let [n00, n01, n10, n11] = vp.transitions();
    let p01 = ratio(n01, n00 + n01);
    let p11 = ratio(n11, n10 + n11);
    let p = ratio(n01 + n11, n00 + n01 + n10 + n11);
    let alt = bernoulli_ll(n00, n01, p01) + bernoulli_ll(n10, n11, p11);
    let null = bernoulli_ll(n00 + n10, n01 + n11, p);
    (-2.0 * (null - alt)).max(0.0)
}

fn with_transitions(r: TestReport, vp: &ViolationProcess) -> TestReport {
    let [n00, n01, n10, n11] = vp.transitions();
    r.with_aux("n00", n00 as f64)
        .with_aux("n01", n01 as f64)
        .with_aux("n10", n10 as f64)
        .with_aux("n11", n11 as f64)
}

/// Likelihood-ratio test of unconditional coverage, χ²(1).
pub fn lr_unconditional_coverage(vp: &ViolationProcess) -> Result<TestReport> {
    if vp.is_empty() {
        return invalid("empty violation process");
    }
    let lr = lr_uc_stat(vp);
    Ok(TestReport::ok(TestKind::LrUc, lr, chi2_sf(lr, 1.0), Sided::Two)
        .with_aux("violations", vp.violations() as f64)
        .with_aux("n", vp.len() as f64))
}

/// Likelihood-ratio test of independence against a first-order Markov chain, χ²(1).
pub fn lr_independence(vp: &ViolationProcess) -> Result<TestReport> {
    if vp.len() < 2 {
        return invalid("independence test needs at least two observations");
    }
    let lr = lr_ind_stat(vp);
    let r = TestReport::ok(TestKind::LrInd, lr, chi2_sf(lr, 1.0), Sided::Two)
        .with_aux("violations", vp.violations() as f64);
    Ok(with_transitions(r, vp))
}

/// Conditional coverage: `LR_uc + LR_ind`, χ²(2).
pub fn lr_conditional_coverage(vp: &ViolationProcess) -> Result<TestReport> {
    if vp.len() < 2 {
        return invalid("conditional coverage test needs at least two observations");
    }
    let uc = lr_uc_stat(vp);
    let ind = lr_ind_stat(vp);
    let lr = uc + ind;
    let r = TestReport::ok(TestKind::LrCc, lr, chi2_sf(lr, 2.0), Sided::Two)
        .with_aux("lr_uc", uc)
        .with_aux("lr_ind", ind)
        .with_aux("violations", vp.violations() as f64);
    Ok(with_transitions(r, vp))
}

/// Residuals `r_t - ES_t` on the days where `r_t < VaR_t`.
pub fn exceedance_residuals(returns: &[f64], var: &[f64], es: &[f64]) -> Result<Vec<f64>> {
    check_aligned(returns, var)?;
    check_aligned(returns, es)?;
    Ok(returns
        .iter()
        .zip(var)
        .zip(es)
        .filter(|((r, v), _)| r < v)
        .map(|((r, _), e)| r - e)
        .collect())
}

/// Bootstrap test that exceedance residuals have zero mean.
///
/// Two-sided: H0 mean = 0. One-sided: H0 mean ≥ 0 against the alternative
/// that ES forecasts are not conservative enough (mean < 0). The statistic
/// is the residual mean; its null distribution is approximated by
/// resampling the centred residuals.
pub fn exceedance_residual_test(
    returns: &[f64],
    var: &[f64],
    es: &[f64],
    sided: Sided,
    n_boot: usize,
    seed: u64,
) -> Result<TestReport> {
    if n_boot == 0 {
        return invalid("n_boot must be positive");
    }
    let res = exceedance_residuals(returns, var, es)?;
    if res.is_empty() {
        return Ok(TestReport::not_applicable(TestKind::ExceedanceResidual, sided).with_aux("exceedances", 0.0));
    }
    let n = res.len();
    let m = mean(&res);
    let centred: Vec<f64> = res.iter().map(|r| r - m).collect();
    let spread = centred.iter().fold(0.0f64, |a, c| a.max(c.abs()));

    let p = if spread == 0.0 {
        // degenerate resampling distribution: a point mass at zero
        match sided {
            Sided::Two if m == 0.0 => 1.0,
            Sided::Two => 0.0,
            Sided::One if m >= 0.0 => 1.0,
            Sided::One => 0.0,
        }
    } else {
        let mut rng = seeded_rng(derive_seed(seed, &[0xe5]));
        let mut extreme = 0usize;
        for _ in 0..n_boot {
            let mut s = 0.0;
            for _ in 0..n {
                s += centred[rng.random_range(0..n)];
            }
            let mb = s / n as f64;
            let hit = match sided {
                Sided::Two => mb.abs() >= m.abs(),
                Sided::One => mb <= m,
            };
            extreme += hit as usize;
        }
        (extreme + 1) as f64 / (n_boot + 1) as f64
    };
    Ok(TestReport::ok(TestKind::ExceedanceResidual, m, p, sided)
        .with_aux("exceedances", n as f64)
        .with_aux("n_boot", n_boot as f64))
}

/// Identification-function values for (VaR, ES) at level `alpha`.
///
/// Both components have zero expectation when the forecasts are the true
/// conditional VaR and ES, and positive expectation when the forecasts are
/// more conservative than the truth.
pub fn identification(m_var: f64, m_es: Option<f64>, x: f64, alpha: f64) -> (f64, Option<f64>) {
    let hit = if x < m_var { 1.0 } else { 0.0 };
    let v1 = alpha - hit;
    let v2 = m_es.map(|e| (m_var - e) - hit * (m_var - x) / alpha);
    (v1, v2)
}

/// Simple conditional calibration test (test function `H_t = 1`).
///
/// With `es = None` only the VaR component is tested (k = 1). Two-sided
/// uses the Wald statistic `n V̄ᵀ Σ̂⁻ V̄` with χ²(rank) reference; one-sided
/// tests super-calibration component-wise with a Bonferroni correction.
pub fn conditional_calibration_test(
    returns: &[f64],
    var: &[f64],
    es: Option<&[f64]>,
    alpha: f64,
    sided: Sided,
) -> Result<TestReport> {
    check_aligned(returns, var)?;
    if let Some(e) = es {
        check_aligned(returns, e)?;
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha = {alpha} outside (0, 1)"));
    }
    let n = returns.len();
    if n < 30 {
        return invalid(format!("conditional calibration needs at least 30 observations, got {n}"));
    }
    let k = if es.is_some() { 2 } else { 1 };
    let mut v = DMatrix::<f64>::zeros(n, k);
    for t in 0..n {
        let (v1, v2) = identification(var[t], es.map(|e| e[t]), returns[t], alpha);
        v[(t, 0)] = v1;
        if let Some(v2) = v2 {
            v[(t, 1)] = v2;
        }
    }
    let vbar = DVector::from_fn(k, |i, _| v.column(i).mean());
    let sigma = v.transpose() * &v / n as f64;

    let report = match sided {
        Sided::Two => {
            let svd = sigma.clone().svd(true, true);
            let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
            let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
            if rank == 0 {
                return Ok(TestReport::not_applicable(TestKind::ConditionalCalibration, sided));
            }
            let pinv = svd.pseudo_inverse(tol).map_err(|e| crate::Error::Numerical(e.to_string()))?;
            let stat = (n as f64 * (vbar.transpose() * pinv * &vbar)[(0, 0)]).max(0.0);
            TestReport::ok(TestKind::ConditionalCalibration, stat, chi2_sf(stat, rank as f64), sided)
                .with_aux("rank", rank as f64)
        }
        Sided::One => {
            // H0: E[V_i] >= 0 for each component
            let mut min_t = f64::INFINITY;
            let mut min_p: f64 = 1.0;
            let mut used = 0usize;
            for i in 0..k {
                let s = sigma[(i, i)].sqrt();
                if s == 0.0 {
                    continue;
                }
                used += 1;
                let t = (n as f64).sqrt() * vbar[i] / s;
                min_t = min_t.min(t);
                min_p = min_p.min(norm_cdf(t));
            }
            if used == 0 {
                return Ok(TestReport::not_applicable(TestKind::ConditionalCalibration, sided));
            }
            TestReport::ok(TestKind::ConditionalCalibration, min_t, (k as f64 * min_p).min(1.0), sided)
        }
    };
    let mut report = report.with_aux("n", n as f64).with_aux("mean_v_var", vbar[0]);
    if k == 2 {
        report = report.with_aux("mean_v_es", vbar[1]);
    }
    Ok(report)
}

/// Pinball (quantile) score of forecast `m` for outcome `x`.
pub fn pinball_score(m: f64, x: f64, alpha: f64) -> f64 {
    let hit = if x < m { 1.0 } else { 0.0 };
    (hit - alpha) * m - hit * x
}

/// Strictly consistent joint score for (VaR, ES); requires `m_es <= m_var < 0`.
pub fn joint_var_es_score(m_var: f64, m_es: f64, x: f64, alpha: f64) -> Result<f64> {
    if !(m_es < 0.0) {
        return domain(format!("ES forecast {m_es} must be negative"));
    }
    if !(m_var < 0.0) || m_es > m_var {
        return domain(format!("need ES ({m_es}) <= VaR ({m_var}) < 0"));
    }
    let hit = if x < m_var { 1.0 } else { 0.0 };
    Ok(alpha * (m_var / m_es - 1.0 + (-m_es).ln()) - hit * (m_var - x) / m_es)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    Passed,
    Failed,
    FurtherInvestigation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeResult {
    pub test: TestKind,
    pub measure: String,
    pub alpha: f64,
    pub statistic: f64,
    pub phi: f64,
    pub zone: Zone,
    pub eta: f64,
    pub n: usize,
    pub mean_score_diff: f64,
}

/// Three-zone classification of a score-difference series `internal - standard`.
pub fn classify_differences(diff: &[f64], eta: f64) -> Result<(f64, f64, Zone)> {
    if diff.len() < 30 {
        return invalid(format!("comparative backtest needs at least 30 observations, got {}", diff.len()));
    }
    if !(eta > 0.0 && eta < 0.5) {
        return domain(format!("confidence eta = {eta} outside (0, 0.5)"));
    }
    let n = diff.len() as f64;
    let sd = sample_variance(diff).sqrt();
    let t = if sd > 0.0 && sd.is_finite() { mean(diff) / (sd / n.sqrt()) } else { 0.0 };
    let phi = norm_cdf(t);
    let zone = if sd == 0.0 {
        Zone::FurtherInvestigation
    } else if phi <= eta {
        Zone::Passed
    } else if 1.0 - phi <= eta {
        Zone::Failed
    } else {
        Zone::FurtherInvestigation
    };
    Ok((t, phi, zone))
}

/// Which forecasts a comparative backtest scores.
#[derive(Debug, Clone, Copy)]
pub enum Forecasts<'a> {
    VaR(&'a [f64]),
    VarEs { var: &'a [f64], es: &'a [f64] },
}

fn scores(f: Forecasts<'_>, x: &[f64], alpha: f64) -> Result<Vec<f64>> {
    match f {
        Forecasts::VaR(v) => {
            check_aligned(x, v)?;
            Ok(v.iter().zip(x).map(|(m, x)| pinball_score(*m, *x, alpha)).collect())
        }
        Forecasts::VarEs { var, es } => {
            check_aligned(x, var)?;
            check_aligned(x, es)?;
            (0..x.len()).map(|t| joint_var_es_score(var[t], es[t], x[t], alpha)).collect()
        }
    }
}

/// Compare an internal model against a standard model on the same realizations.
pub fn comparative_backtest(
    internal: Forecasts<'_>,
    standard: Forecasts<'_>,
    returns: &[f64],
    alpha: f64,
    eta: f64,
) -> Result<ComparativeResult> {
    let measure = match (internal, standard) {
        (Forecasts::VaR(_), Forecasts::VaR(_)) => "VaR",
        (Forecasts::VarEs { .. }, Forecasts::VarEs { .. }) => "ES",
        _ => return invalid("internal and standard forecasts are of different kinds"),
    };
    let a = scores(internal, returns, alpha)?;
    let b = scores(standard, returns, alpha)?;
    let diff: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
    let (t, phi, zone) = classify_differences(&diff, eta)?;
    Ok(ComparativeResult {
        test: TestKind::Comparative,
        measure: measure.to_string(),
        alpha,
        statistic: t,
        phi,
        zone,
        eta,
        n: diff.len(),
        mean_score_diff: mean(&diff),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vp(bits: &[u8], alpha: f64) -> ViolationProcess {
        ViolationProcess::new(bits.iter().map(|b| *b == 1).collect(), alpha).unwrap()
    }

    #[test]
    fn lr_uc_reference() {
        let mut bits = vec![0u8; 250];
        bits[..5].fill(1);
        let r = lr_unconditional_coverage(&vp(&bits, 0.01)).unwrap();
        // oracle: hand-evaluated log-likelihoods
        let l0 = 245.0 * 0.99f64.ln() + 5.0 * 0.01f64.ln();
        let l1 = 245.0 * 0.98f64.ln() + 5.0 * 0.02f64.ln();
        assert!((r.statistic.unwrap() - (-2.0 * (l0 - l1))).abs() < 1e-12);
        assert!((r.statistic.unwrap() - 1.9568).abs() < 1e-3);
        assert!((r.p_value.unwrap() - 0.1618).abs() < 2e-3);
    }

    #[test]
    fn lr_uc_at_exact_rate() {
        let mut bits = vec![0u8; 100];
        bits[..5].fill(1);
        let r = lr_unconditional_coverage(&vp(&bits, 0.05)).unwrap();
        assert!(r.statistic.unwrap().abs() < 1e-12);
        assert!((r.p_value.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_counts_are_finite() {
        let r = lr_unconditional_coverage(&vp(&[0; 50], 0.05)).unwrap();
        assert!(r.statistic.unwrap().is_finite());
        let r = lr_conditional_coverage(&vp(&[1; 50], 0.05)).unwrap();
        assert!(r.statistic.unwrap().is_finite());
    }

    #[test]
    fn clustered_process_rejects_independence() {
        let bits: Vec<u8> = (0..120).map(|i| ((i / 3) % 2) as u8).collect();
        let r = lr_independence(&vp(&bits, 0.5)).unwrap();
        assert!(r.p_value.unwrap() < 0.01);
        assert_eq!(r.aux["n01"] + r.aux["n00"] + r.aux["n10"] + r.aux["n11"], 119.0);
    }

    #[test]
    fn cc_is_sum() {
        let bits: Vec<u8> = (0..200).map(|i| (i % 7 == 0 || i % 11 == 0) as u8).collect();
        let p = vp(&bits, 0.05);
        let cc = lr_conditional_coverage(&p).unwrap();
        let uc = lr_unconditional_coverage(&p).unwrap();
        let ind = lr_independence(&p).unwrap();
        assert_eq!(cc.statistic.unwrap(), uc.statistic.unwrap() + ind.statistic.unwrap());
    }

    #[test]
    fn scores_reference() {
        assert!((pinball_score(-1.0, -2.0, 0.05) - 1.05).abs() < 1e-15);
        assert!((pinball_score(-1.0, 0.0, 0.05) - 0.05).abs() < 1e-15);
        let s = joint_var_es_score(-1.0, -2.0, 0.0, 0.05).unwrap();
        assert!((s - 0.009657).abs() < 1e-6);
        assert!(joint_var_es_score(-1.0, 0.5, 0.0, 0.05).is_err());
        assert!(joint_var_es_score(-1.0, -0.5, 0.0, 0.05).is_err());
    }

    #[test]
    fn calibration_var_only_hand_value() {
        let n = 100;
        let x = vec![1.0; n];
        let var = vec![-1.0; n];
        let r = conditional_calibration_test(&x, &var, None, 0.05, Sided::Two).unwrap();
        assert!((r.statistic.unwrap() - 100.0).abs() < 1e-8);
        assert!(r.p_value.unwrap() < 1e-10);
    }

    #[test]
    fn exceedance_zero_residuals() {
        let x = vec![-2.0; 40];
        let var = vec![-1.0; 40];
        let r = exceedance_residual_test(&x, &var, &x, Sided::Two, 999, 3).unwrap();
        assert_eq!(r.statistic, Some(0.0));
        assert_eq!(r.p_value, Some(1.0));
        let none = exceedance_residual_test(&var, &var, &var, Sided::Two, 999, 3).unwrap();
        assert_eq!(none.status, Status::NotApplicable);
    }

    #[test]
    fn identical_series_are_inconclusive() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let v = vec![-1.0; 50];
        let r = comparative_backtest(Forecasts::VaR(&v), Forecasts::VaR(&v), &x, 0.05, 0.05).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.phi, 0.5);
        assert_eq!(r.zone, Zone::FurtherInvestigation);
    }
}
