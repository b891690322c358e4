//! ARMA(1,1)-GARCH(1,1) marginal models.
//!
//! Estimation runs in two passes: the ARMA mean is fitted first by
//! conditional Gaussian quasi-likelihood (least squares on the innovations),
//! then the GARCH variance and the innovation shape parameters are fitted by
//! maximum likelihood on the ARMA residuals. Both passes use Nelder–Mead on
//! unconstrained transforms of the parameters.
//!
//! The recursions start from the sample mean of the returns and the sample
//! variance of the residuals.

use serde::{Deserialize, Serialize};

use crate::distributions::{clamp_unit, Prepared, Univariate};
use crate::error::{invalid, Error, Result};
use crate::numerics::{mean, nelder_mead, sample_variance};

/// Smallest series accepted by the estimator.
pub const MIN_OBS: usize = 100;

const MAX_EVAL: usize = 2000;
const TOL: f64 = 1e-8;
const EDGE: f64 = 1e-6;

/// Innovation law family; shape parameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Innovation {
    Normal,
    StudentT,
    SkewedStudentT,
}

impl Innovation {
    fn law(self, shape: &[f64]) -> Univariate {
        match self {
            Innovation::Normal => Univariate::Normal,
            Innovation::StudentT => Univariate::StudentT {
                nu: shape[0],
                standardized: true,
            },
            Innovation::SkewedStudentT => Univariate::SkewedStudentT {
                nu: shape[0],
                xi: shape[1],
            },
        }
    }

    fn n_shape(self) -> usize {
        match self {
            Innovation::Normal => 0,
            Innovation::StudentT => 1,
            Innovation::SkewedStudentT => 2,
        }
    }
}

/// Fitted ARMA(1,1)-GARCH(1,1) model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginalFit {
    pub phi0: f64,
    pub phi1: f64,
    pub theta1: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    /// Innovation law with fitted shape parameters.
    pub innovation: Univariate,
    /// Conditional log-likelihood at the estimate.
    pub loglik: f64,
    /// Conditional log-likelihood at the method-of-moments starting point.
    pub start_loglik: f64,
    /// Starting value of the conditional mean recursion.
    pub init_mean: f64,
    /// Starting value of the conditional variance recursion.
    pub init_var: f64,
    /// In-sample conditional means, one per observation.
    pub fitted_mu: Vec<f64>,
    /// In-sample conditional standard deviations.
    pub fitted_sigma: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Output of running a fitted model's recursion over a series.
#[derive(Debug, Clone)]
pub struct Filtered {
    /// `mu[t]` for `t = 0..=n`; the last entry is the one-step forecast.
    pub mu: Vec<f64>,
    /// `sigma[t]` for `t = 0..=n`.
    pub sigma: Vec<f64>,
    /// Standardised residuals `(r_t - mu_t) / sigma_t`, `t < n`.
    pub z: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Params {
    phi0: f64,
    phi1: f64,
    theta1: f64,
    alpha0: f64,
    alpha1: f64,
    beta1: f64,
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// ARMA residuals `w_t = r_t - mu_t`.
fn arma_residuals(r: &[f64], phi0: f64, phi1: f64, theta1: f64, init_mean: f64, w: &mut [f64]) {
    w[0] = r[0] - init_mean;
    for t in 1..r.len() {
        let mu = phi0 + phi1 * r[t - 1] + theta1 * w[t - 1];
        w[t] = r[t] - mu;
    }
}

/// GARCH log-likelihood of residuals `w` under a prepared innovation law.
fn garch_loglik(w: &[f64], a0: f64, a1: f64, b1: f64, init_var: f64, law: &Prepared) -> f64 {
    let mut s2 = init_var;
    let mut ll = 0.0;
    for t in 0..w.len() {
        if t > 0 {
            s2 = a0 + a1 * w[t - 1] * w[t - 1] + b1 * s2;
        }
        let s = s2.sqrt();
        ll += law.logpdf(w[t] / s) - s.ln();
    }
    ll
}

fn shape_from(inn: Innovation, z: &[f64]) -> Vec<f64> {
    match inn {
        Innovation::Normal => vec![],
        Innovation::StudentT => vec![2.05 + z[0].exp()],
        Innovation::SkewedStudentT => vec![2.05 + z[0].exp(), z[1].exp()],
    }
}

/// Fit an ARMA(1,1)-GARCH(1,1) model with the given innovation family.
pub fn fit_arma_garch(series: &[f64], innovation: Innovation) -> Result<MarginalFit> {
    let n = series.len();
    if n < MIN_OBS {
        return Err(Error::Fit(format!("series has {n} observations, need at least {MIN_OBS}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return invalid("series contains non-finite values");
    }
    let var_r = sample_variance(series);
    if !(var_r > 0.0) || series.iter().all(|v| *v == series[0]) {
        return Err(Error::Fit("series is constant".into()));
    }
    let init_mean = mean(series);
    let mut warnings = Vec::new();

    // ---- pass 1: ARMA mean by conditional least squares
    let lag1 = {
        let m = init_mean;
        let num: f64 = series.windows(2).map(|p| (p[0] - m) * (p[1] - m)).sum();
        let den: f64 = series.iter().map(|v| (v - m) * (v - m)).sum();
        (num / den).clamp(-0.9, 0.9)
    };
    let mom_arma = [init_mean * (1.0 - lag1), lag1, 0.0];
    let scale = var_r.sqrt();
    let mut w = vec![0.0; n];
    let arma_obj = |x: &[f64], w: &mut [f64]| {
        let (phi0, phi1, theta1) = (x[0] * scale, x[1].tanh(), x[2].tanh());
        arma_residuals(series, phi0, phi1, theta1, init_mean, w);
        w.iter().map(|v| v * v).sum::<f64>() / (var_r * n as f64)
    };
    let x0 = [mom_arma[0] / scale, mom_arma[1].atanh(), 0.0];
    let m1 = nelder_mead(|x| arma_obj(x, &mut w), &x0, &[0.1, 0.2, 0.2], MAX_EVAL, TOL);
    let (mut phi0, mut phi1, mut theta1) = (m1.x[0] * scale, m1.x[1].tanh(), m1.x[2].tanh());
    for (name, v) in [("phi1", &mut phi1), ("theta1", &mut theta1)] {
        if v.abs() > 1.0 - EDGE {
            *v = v.signum() * (1.0 - EDGE);
            warnings.push(format!("{name} converged to the invertibility boundary and was clipped"));
        }
    }
    if !phi0.is_finite() {
        phi0 = mom_arma[0];
    }
    arma_residuals(series, phi0, phi1, theta1, init_mean, &mut w);
    let init_var = sample_variance(&w);
    if !(init_var > 0.0) {
        return Err(Error::Fit("ARMA residuals have zero variance".into()));
    }

    // ---- pass 2: GARCH variance and innovation shape by maximum likelihood
    let k = innovation.n_shape();
    let nll = |x: &[f64]| -> f64 {
        let a0 = init_var * x[0].exp();
        let p = logistic(x[1]);
        let s = logistic(x[2]);
        let (a1, b1) = (p * s, p * (1.0 - s));
        let shape = shape_from(innovation, &x[3..]);
        let law = innovation.law(&shape);
        if law.validate().is_err() {
            return f64::INFINITY;
        }
        -garch_loglik(&w, a0, a1, b1, init_var, &law.prepare_unchecked())
    };
    let mut g0 = vec![(0.05f64).ln(), logit(0.95), logit(0.05 / 0.95)];
    match innovation {
        Innovation::Normal => {}
        Innovation::StudentT => g0.push((8.0f64 - 2.05).ln()),
        Innovation::SkewedStudentT => {
            g0.push((8.0f64 - 2.05).ln());
            g0.push(0.0);
        }
    }
    let step: Vec<f64> = (0..3 + k).map(|i| if i < 3 { 0.5 } else { 0.3 }).collect();
    let m2 = nelder_mead(nll, &g0, &step, MAX_EVAL, TOL);
    if !m2.converged {
        warnings.push(format!("variance optimiser stopped after {} evaluations", m2.evaluations));
    }
    let x = &m2.x;
    let alpha0 = init_var * x[0].exp();
    let p = logistic(x[1]);
    let s = logistic(x[2]);
    let (alpha1, beta1) = (p * s, p * (1.0 - s));
    if alpha1 + beta1 > 1.0 - EDGE {
        warnings.push("alpha1 + beta1 converged to the stationarity boundary".into());
    }
    let law = innovation.law(&shape_from(innovation, &x[3..]));
    law.validate()?;

    let mut params = Params {
        phi0,
        phi1,
        theta1,
        alpha0,
        alpha1,
        beta1,
    };
    let mut law = law;
    let mut init_var = init_var;
    let mut loglik = full_loglik(series, &params, init_mean, init_var, &law);

    // method-of-moments starting point, evaluated with the same recursions
    let start = Params {
        phi0: mom_arma[0],
        phi1: mom_arma[1],
        theta1: 0.0,
        alpha0: 0.05 * var_r,
        alpha1: 0.05,
        beta1: 0.90,
    };
    let mut w0 = vec![0.0; n];
    arma_residuals(series, start.phi0, start.phi1, start.theta1, init_mean, &mut w0);
    let start_var = sample_variance(&w0);
    let start_law = innovation.law(&shape_from(innovation, &g0[3..]));
    let start_loglik = full_loglik(series, &start, init_mean, start_var, &start_law);
    if !(loglik >= start_loglik) {
        warnings.push("estimate did not improve on the starting point; keeping the starting point".into());
        params = start;
        law = start_law;
        init_var = start_var;
        loglik = start_loglik;
    }
    if !loglik.is_finite() {
        return Err(Error::Fit("likelihood is not finite at the estimate".into()));
    }
    let Params {
        phi0,
        phi1,
        theta1,
        alpha0,
        alpha1,
        beta1,
    } = params;

    let mut fit = MarginalFit {
        phi0,
        phi1,
        theta1,
        alpha0,
        alpha1,
        beta1,
        innovation: law,
        loglik,
        start_loglik,
        init_mean,
        init_var,
        fitted_mu: Vec::new(),
        fitted_sigma: Vec::new(),
        warnings,
    };
    let f = fit.filter(series);
    fit.fitted_mu = f.mu[..n].to_vec();
    fit.fitted_sigma = f.sigma[..n].to_vec();
    Ok(fit)
}

fn full_loglik(r: &[f64], p: &Params, init_mean: f64, init_var: f64, law: &Univariate) -> f64 {
    let mut w = vec![0.0; r.len()];
    arma_residuals(r, p.phi0, p.phi1, p.theta1, init_mean, &mut w);
    garch_loglik(&w, p.alpha0, p.alpha1, p.beta1, init_var, &law.prepare_unchecked())
}

impl MarginalFit {
    /// Run the recursions over `series` (which starts where the fitting
    /// window started) with fixed parameters.
    pub fn filter(&self, series: &[f64]) -> Filtered {
        let n = series.len();
        let mut mu = Vec::with_capacity(n + 1);
        let mut sigma = Vec::with_capacity(n + 1);
        let mut z = Vec::with_capacity(n);
        let mut m = self.init_mean;
        let mut s2 = self.init_var;
        for t in 0..=n {
            if t > 0 {
                let w = series[t - 1] - m;
                m = self.phi0 + self.phi1 * series[t - 1] + self.theta1 * w;
                s2 = self.alpha0 + self.alpha1 * w * w + self.beta1 * s2;
            }
            let s = s2.sqrt();
            mu.push(m);
            sigma.push(s);
            if t < n {
                z.push((series[t] - m) / s);
            }
        }
        Filtered { mu, sigma, z }
    }

    /// One-step-ahead forecast `(mu, sigma)` after observing `history`.
    pub fn forecast(&self, history: &[f64]) -> (f64, f64) {
        let f = self.filter(history);
        (f.mu[history.len()], f.sigma[history.len()])
    }

    /// In-sample standardised residuals.
    pub fn std_residuals(&self, series: &[f64]) -> Vec<f64> {
        self.filter(series).z
    }

    /// `F((x - mu) / sigma)`, clamped to the copula working range.
    pub fn to_copula_scale(&self, x: f64, mu: f64, sigma: f64) -> f64 {
        clamp_unit(self.innovation.prepare_unchecked().cdf((x - mu) / sigma))
    }

    /// `mu + sigma * F^{-1}(u)`.
    pub fn from_copula_scale(&self, u: f64, mu: f64, sigma: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("copula value {u} outside (0, 1)")));
        }
        Ok(mu + sigma * self.innovation.prepare_unchecked().quantile(u))
    }

    /// Prepared innovation law for bulk transforms.
    pub fn law(&self) -> Prepared {
        self.innovation.prepare_unchecked()
    }
}

/// Ljung–Box portmanteau statistic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LjungBox {
    pub lags: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Ljung–Box statistic from precomputed autocorrelations `acf[h-1]`, `h = 1..=H`.
pub fn ljung_box_from_acf(n: usize, acf: &[f64]) -> Result<LjungBox> {
    let h = acf.len();
    if h == 0 {
        return invalid("at least one lag is required");
    }
    if n <= h + 1 {
        return invalid(format!("{n} observations are too few for {h} lags"));
    }
    let nf = n as f64;
    let q = nf * (nf + 2.0)
        * acf
            .iter()
            .enumerate()
            .map(|(i, r)| r * r / (nf - (i + 1) as f64))
            .sum::<f64>();
    let p = 1.0 - Univariate::ChiSquare { df: h as f64 }.cdf(q)?;
    Ok(LjungBox {
        lags: h,
        statistic: q,
        p_value: p.clamp(0.0, 1.0),
    })
}

/// Sample autocorrelations at lags `1..=lags`.
pub fn autocorrelations(x: &[f64], lags: usize) -> Vec<f64> {
    let m = mean(x);
    let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (1..=lags)
        .map(|h| {
            if den == 0.0 {
                return 0.0;
            }
            x[h..].iter().zip(x).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / den
        })
        .collect()
}

/// Ljung–Box test on a residual series.
pub fn ljung_box(x: &[f64], lags: usize) -> Result<LjungBox> {
    if lags == 0 || x.len() <= lags + 1 {
        return invalid(format!("need more than {} observations for {lags} lags", lags + 1));
    }
    ljung_box_from_acf(x.len(), &autocorrelations(x, lags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ljung_box_reference() {
        let lb = ljung_box_from_acf(100, &[0.2]).unwrap();
        assert!((lb.statistic - 100.0 * 102.0 * 0.04 / 99.0).abs() < 1e-12);
        assert!((lb.statistic - 4.1212).abs() < 1e-4);
        assert!((lb.p_value - 0.0424).abs() < 1e-4);
    }

    #[test]
    fn ljung_box_zero_acf() {
        // mean zero with vanishing lag-1 and lag-2 products
        let x = [1.0, 0.0, 0.0, -1.0];
        let lb = ljung_box(&x, 1).unwrap();
        assert_eq!(lb.statistic, 0.0);
        assert_eq!(lb.p_value, 1.0);
        let lb = ljung_box(&x, 2).unwrap();
        assert_eq!(lb.statistic, 0.0);
        assert!(matches!(ljung_box(&x, 3), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn constant_and_short_series_fail() {
        assert!(matches!(fit_arma_garch(&[0.01; 100], Innovation::Normal), Err(Error::Fit(_))));
        assert!(matches!(fit_arma_garch(&[0.01, 0.02, 0.0], Innovation::Normal), Err(Error::Fit(_))));
    }
}
