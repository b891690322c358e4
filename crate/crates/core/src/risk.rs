//! Monte Carlo Value-at-Risk and Expected Shortfall estimators on simulated
//! portfolio returns. Losses are negative returns, so risk figures are
//! (typically) negative numbers in the left tail.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};
use crate::numerics::{median, seeded_rng};

/// Risk measure reported for each forecast day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskMeasure {
    #[serde(rename = "VaR")]
    VaR,
    /// Mean of the samples at or below the VaR estimate.
    #[serde(rename = "ES_mean")]
    EsMean,
    /// Median of the samples at or below the VaR estimate.
    #[serde(rename = "ES_median")]
    EsMedian,
    /// Monte Carlo average of VaR over uniformly drawn levels in (0, alpha).
    #[serde(rename = "ES_mc")]
    EsMc,
}

impl RiskMeasure {
    pub fn label(self) -> &'static str {
        match self {
            RiskMeasure::VaR => "VaR",
            RiskMeasure::EsMean => "ES_mean",
            RiskMeasure::EsMedian => "ES_median",
            RiskMeasure::EsMc => "ES_mc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [RiskMeasure::VaR, RiskMeasure::EsMean, RiskMeasure::EsMedian, RiskMeasure::EsMc]
            .into_iter()
            .find(|m| m.label() == s)
    }

    pub fn is_es(self) -> bool {
        self != RiskMeasure::VaR
    }
}

/// Portfolio samples sorted once for repeated risk queries.
#[derive(Debug, Clone)]
pub struct SortedSamples {
    sorted: Vec<f64>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        domain(format!("alpha = {alpha} outside (0, 1)"))
    }
}

impl SortedSamples {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return invalid("no samples");
        }
        if samples.iter().any(|v| v.is_nan()) {
            return invalid("samples contain NaN");
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(SortedSamples { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Index (0-based) of the `ceil(alpha * S)`-th order statistic.
    #[inline]
    fn var_index(&self, alpha: f64) -> usize {
        let s = self.sorted.len() as f64;
        // guard against representation error in alpha * S
        let k = (alpha * s - 1e-9).ceil().max(1.0) as usize;
        k.min(self.sorted.len()) - 1
    }

    fn check_size(&self, alpha: f64) -> Result<()> {
        check_alpha(alpha)?;
        let need = (1.0 / alpha - 1e-9).ceil() as usize;
        if self.sorted.len() < need {
            return invalid(format!("{} samples are fewer than ceil(1/alpha) = {need}", self.sorted.len()));
        }
        Ok(())
    }

    /// Empirical lower `alpha`-quantile.
    pub fn var(&self, alpha: f64) -> Result<f64> {
        self.check_size(alpha)?;
        Ok(self.sorted[self.var_index(alpha)])
    }

    /// Samples at or below the VaR estimate.
    fn tail(&self, alpha: f64) -> Result<&[f64]> {
        let v = self.var(alpha)?;
        let end = self.sorted.partition_point(|x| *x <= v);
        Ok(&self.sorted[..end])
    }

    pub fn es_mean(&self, alpha: f64) -> Result<f64> {
        let t = self.tail(alpha)?;
        Ok(t.iter().sum::<f64>() / t.len() as f64)
    }

    pub fn es_median(&self, alpha: f64) -> Result<f64> {
        Ok(median(self.tail(alpha)?))
    }

    /// Average of VaR at `n_mc` levels drawn uniformly from (0, alpha).
    pub fn es_mc(&self, alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
        self.check_size(alpha)?;
        if n_mc < 100 {
            return invalid(format!("n_mc = {n_mc} is below the minimum of 100"));
        }
        let mut rng = seeded_rng(seed);
        let mut total = 0.0;
        for _ in 0..n_mc {
            let u: f64 = alpha * rng.random::<f64>();
            total += self.sorted[self.var_index(u.max(f64::MIN_POSITIVE))];
        }
        Ok(total / n_mc as f64)
    }

    pub fn measure(&self, m: RiskMeasure, alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
        match m {
            RiskMeasure::VaR => self.var(alpha),
            RiskMeasure::EsMean => self.es_mean(alpha),
            RiskMeasure::EsMedian => self.es_median(alpha),
            RiskMeasure::EsMc => self.es_mc(alpha, n_mc, seed),
        }
    }
}

/// VaR of unsorted samples.
pub fn var_estimate(samples: &[f64], alpha: f64) -> Result<f64> {
    SortedSamples::new(samples)?.var(alpha)
}

pub fn es_mean(samples: &[f64], alpha: f64) -> Result<f64> {
    SortedSamples::new(samples)?.es_mean(alpha)
}

pub fn es_median(samples: &[f64], alpha: f64) -> Result<f64> {
    SortedSamples::new(samples)?.es_median(alpha)
}

pub fn es_mc(samples: &[f64], alpha: f64, n_mc: usize, seed: u64) -> Result<f64> {
    SortedSamples::new(samples)?.es_mc(alpha, n_mc, seed)
}

/// Portfolio returns from per-asset sample columns and weights.
pub fn aggregate(columns: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if columns.len() != weights.len() {
        return invalid(format!("{} asset columns but {} weights", columns.len(), weights.len()));
    }
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) {
        return invalid("sample columns differ in length");
    }
    let mut out = vec![0.0; n];
    for (c, &w) in columns.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(c) {
            *o += w * x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let s: Vec<f64> = (1..=100).map(|i| -(i as f64)).collect();
        assert_eq!(var_estimate(&s, 0.05).unwrap(), -96.0);
        assert_eq!(es_mean(&s, 0.05).unwrap(), -98.0);
        assert_eq!(es_median(&s, 0.05).unwrap(), -98.0);
        let s: Vec<f64> = (1..=10).map(|i| -(i as f64)).collect();
        assert_eq!(var_estimate(&s, 0.2).unwrap(), -9.0);
    }

    #[test]
    fn median_is_robust_to_an_outlier() {
        let mut s = vec![0.0; 95];
        s.extend([-50.0, -10.0, -9.0, -8.0, -7.0]);
        assert_eq!(var_estimate(&s, 0.05).unwrap(), -7.0);
        assert_eq!(es_median(&s, 0.05).unwrap(), -9.0);
        assert!(es_mean(&s, 0.05).unwrap() < -9.0);

        let s = [-50.0, -10.0, -9.0, -8.0, -7.0];
        assert_eq!(es_median(&s, 0.9).unwrap(), -9.0);
        assert!((es_mean(&s, 0.9).unwrap() + 16.8).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(var_estimate(&[1.0; 10], 0.05).is_err());
        assert!(var_estimate(&[1.0; 10], 0.0).is_err());
        assert!(es_mc(&[1.0; 100], 0.05, 10, 1).is_err());
        assert!(var_estimate(&[], 0.5).is_err());
    }

    #[test]
    fn es_mc_converges() {
        let s: Vec<f64> = (1..=100).map(|i| -(i as f64)).collect();
        let v = es_mc(&s, 0.05, 100_000, 42).unwrap();
        assert!((v + 98.0).abs() < 0.6);
    }
}
