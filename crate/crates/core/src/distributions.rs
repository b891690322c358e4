//! Univariate laws used for GARCH innovations and test statistics.
//!
//! The Student-t and skewed Student-t laws used as innovation distributions
//! are standardised to mean zero and unit variance, which requires `nu > 2`.
//! The skewed variant follows the Fernández–Steel construction: a symmetric
//! density is stretched by `xi` on the right of the mode and by `1/xi` on
//! the left, then recentred and rescaled.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use statrs::function::beta::beta_reg;
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{domain, Result};

/// Probability integral transforms are clamped to `[PIT_EPS, 1 - PIT_EPS]`.
pub const PIT_EPS: f64 = 1e-10;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Clamp a probability into the open unit interval used by copula code.
#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(PIT_EPS, 1.0 - PIT_EPS)
}

/// A univariate distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Univariate {
    /// Standard normal.
    Normal,
    /// Student-t with `nu` degrees of freedom; unit scale, or unit variance if `standardized`.
    StudentT { nu: f64, standardized: bool },
    /// Standardised Fernández–Steel skewed Student-t.
    SkewedStudentT { nu: f64, xi: f64 },
    /// Uniform on (0, 1).
    Uniform,
    /// Chi-square with `df` degrees of freedom.
    ChiSquare { df: f64 },
}

// ---------------------------------------------------------------------------
// Standard normal
// ---------------------------------------------------------------------------

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[inline]
pub fn norm_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

// ---------------------------------------------------------------------------
// Unit-scale Student-t
// ---------------------------------------------------------------------------

/// CDF of the unit-scale Student-t.
#[inline]
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    if nu > 1e7 {
        return norm_cdf(x);
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of the unit-scale Student-t.
///
/// Hill's approximation (CACM algorithm 396) refined by Newton steps on the
/// lower tail, falling back to the regularised-beta inverse if the
/// refinement does not settle.
pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if nu > 1e7 {
        return norm_quantile(p);
    }
    if p == 0.5 {
        return 0.0;
    }
    if !(p > 0.0 && p < 1.0) || !(nu > 0.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    // symmetric: evaluate in the lower tail for accuracy
    let (q, sign) = if p < 0.5 { (p, -1.0) } else { (1.0 - p, 1.0) };
    if nu == 1.0 {
        return sign * (std::f64::consts::PI * (0.5 - q)).tan();
    }
    if nu == 2.0 {
        return sign * (1.0 - 2.0 * q) / (2.0 * q * (1.0 - q)).sqrt();
    }
    // Hill's expansion is built for nu >= 1
    let steps = if nu >= 1.0 { 6 } else { 0 };
    let mut x = if nu >= 1.0 { -hill_upper(2.0 * q, nu) } else { 0.0 };
    let ln_norm = t_log_norm(nu);
    for _ in 0..steps {
        let f = t_logpdf_with(x, nu, ln_norm).exp();
        let step = (t_cdf(x, nu) - q) / f;
        if !step.is_finite() {
            break;
        }
        x -= step;
        // quadratic convergence: the error left after a step of relative
        // size 1e-7 is of order 1e-14
        if step.abs() <= 1e-7 * x.abs() {
            return sign * x.abs();
        }
    }
    match StudentsT::new(0.0, 1.0, nu) {
        Ok(d) => sign * d.inverse_cdf(q).abs(),
        Err(_) => f64::NAN,
    }
}

/// Upper point `t` with two-sided tail probability `p2 = P(|T| > t)`.
fn hill_upper(p2: f64, n: f64) -> f64 {
    let a = 1.0 / (n - 0.5);
    let b = 48.0 / (a * a);
    let mut c = ((20700.0 * a / b - 98.0) * a - 16.0) * a + 96.36;
    let d = ((94.5 / (b + c) - 3.0) / b + 1.0) * (a * std::f64::consts::FRAC_PI_2).sqrt() * n;
    let x = d * p2;
    let mut y = x.powf(2.0 / n);
    if y > 0.05 + a {
        // asymptotic inverse expansion about the normal
        let x = norm_quantile(0.5 * p2);
        y = x * x;
        if n < 5.0 {
            c += 0.3 * (n - 4.5) * (x + 0.6);
        }
        c += (((0.05 * d * x - 5.0) * x - 7.0) * x - 2.0) * x + b;
        y = (((((0.4 * y + 6.3) * y + 36.0) * y + 94.5) / c - y - 3.0) / b + 1.0) * x;
        y = (a * y * y).exp_m1();
    } else {
        y = ((1.0 / (((n + 6.0) / (n * y) - 0.089 * d - 0.822) * (n + 2.0) * 3.0) + 0.5 / (n + 4.0)) * y - 1.0)
            * (n + 1.0)
            / (n + 2.0)
            + 1.0 / y;
    }
    (n * y).sqrt()
}

/// Log normalising constant of the unit-scale Student-t density.
#[inline]
pub fn t_log_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln()
}

#[inline]
fn t_logpdf_with(x: f64, nu: f64, log_norm: f64) -> f64 {
    log_norm - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

// ---------------------------------------------------------------------------
// Skewed Student-t helpers
// ---------------------------------------------------------------------------

/// Mean and standard deviation of the unstandardised Fernández–Steel variable
/// built on a unit-variance Student-t.
fn sst_moments(nu: f64, xi: f64) -> (f64, f64) {
    let abs_mean = ((nu - 2.0).sqrt() * (ln_gamma(0.5 * (nu - 1.0)) - ln_gamma(0.5 * nu)).exp())
        / std::f64::consts::PI.sqrt();
    let m = abs_mean * (xi - 1.0 / xi);
    let s2 = (xi * xi + 1.0 / (xi * xi) - 1.0) - m * m;
    (m, s2.sqrt())
}

/// Unit-variance Student-t scale factor.
#[inline]
fn std_scale(nu: f64) -> f64 {
    ((nu - 2.0) / nu).sqrt()
}

/// Parameters of a law precomputed for repeated evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Prepared {
    law: Univariate,
    log_norm: f64,
    scale: f64,
    m: f64,
    s: f64,
}

impl Prepared {
    #[inline]
    pub fn logpdf(&self, x: f64) -> f64 {
        match self.law {
            Univariate::Normal => norm_logpdf(x),
            Univariate::StudentT { nu, .. } => t_logpdf_with(x / self.scale, nu, self.log_norm) - self.scale.ln(),
            Univariate::SkewedStudentT { nu, xi } => {
                let y = self.m + self.s * x;
                let arg = if y < 0.0 { y * xi } else { y / xi };
                // unit-variance t density at arg
                let g = t_logpdf_with(arg / self.scale, nu, self.log_norm) - self.scale.ln();
                (2.0 / (xi + 1.0 / xi)).ln() + g + self.s.ln()
            }
            Univariate::Uniform => {
                if (0.0..=1.0).contains(&x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Univariate::ChiSquare { df } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (0.5 * df - 1.0) * x.ln() - 0.5 * x - 0.5 * df * std::f64::consts::LN_2 - ln_gamma(0.5 * df)
                }
            }
        }
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        match self.law {
            Univariate::Normal => norm_cdf(x),
            Univariate::StudentT { nu, .. } => t_cdf(x / self.scale, nu),
            Univariate::SkewedStudentT { nu, xi } => {
                let y = self.m + self.s * x;
                let k = xi * xi + 1.0;
                if y < 0.0 {
                    2.0 / k * t_cdf(y * xi / self.scale, nu)
                } else {
                    1.0 - 2.0 * xi * xi / k * t_cdf(-(y / xi) / self.scale, nu)
                }
            }
            Univariate::Uniform => x.clamp(0.0, 1.0),
            Univariate::ChiSquare { df } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(0.5 * df, 0.5 * x)
                }
            }
        }
    }

    #[inline]
    pub fn quantile(&self, p: f64) -> f64 {
        match self.law {
            Univariate::Normal => norm_quantile(p),
            Univariate::StudentT { nu, .. } => self.scale * t_quantile(p, nu),
            Univariate::SkewedStudentT { nu, xi } => {
                let k = xi * xi + 1.0;
                let y = if p < 1.0 / k {
                    self.scale * t_quantile(p * k / 2.0, nu) / xi
                } else {
                    -xi * self.scale * t_quantile((1.0 - p) * k / (2.0 * xi * xi), nu)
                };
                (y - self.m) / self.s
            }
            Univariate::Uniform => p,
            Univariate::ChiSquare { df } => match ChiSquared::new(df) {
                Ok(d) => d.inverse_cdf(p),
                Err(_) => f64::NAN,
            },
        }
    }

    /// `F(x)` clamped to the copula working range.
    #[inline]
    pub fn pit(&self, x: f64) -> f64 {
        clamp_unit(self.cdf(x))
    }
}

impl Univariate {
    /// Check parameter domains.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Univariate::StudentT { nu, standardized } => {
                if !(nu > 0.0) {
                    return domain(format!("Student-t degrees of freedom must be positive, got {nu}"));
                }
                if standardized && !(nu > 2.0) {
                    return domain(format!("standardised Student-t needs nu > 2, got {nu}"));
                }
            }
            Univariate::SkewedStudentT { nu, xi } => {
                if !(nu > 2.0) {
                    return domain(format!("skewed Student-t needs nu > 2, got {nu}"));
                }
                if !(xi > 0.0) || !xi.is_finite() {
                    return domain(format!("skewed Student-t needs xi > 0, got {xi}"));
                }
            }
            Univariate::ChiSquare { df } => {
                if !(df > 0.0) {
                    return domain(format!("chi-square degrees of freedom must be positive, got {df}"));
                }
            }
            Univariate::Normal | Univariate::Uniform => {}
        }
        Ok(())
    }

    /// Validate and precompute constants.
    pub fn prepare(&self) -> Result<Prepared> {
        self.validate()?;
        Ok(self.prepare_unchecked())
    }

    pub(crate) fn prepare_unchecked(&self) -> Prepared {
        let (mut log_norm, mut scale, mut m, mut s) = (0.0, 1.0, 0.0, 1.0);
        match *self {
            Univariate::StudentT { nu, standardized } => {
                log_norm = t_log_norm(nu);
                if standardized {
                    scale = std_scale(nu);
                }
            }
            Univariate::SkewedStudentT { nu, xi } => {
                log_norm = t_log_norm(nu);
                scale = std_scale(nu);
                (m, s) = sst_moments(nu, xi);
            }
            _ => {}
        }
        Prepared {
            law: *self,
            log_norm,
            scale,
            m,
            s,
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return domain("cdf argument is NaN");
        }
        Ok(self.prepare()?.cdf(x))
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return domain(format!("probability {p} outside [0, 1]"));
        }
        let prep = self.prepare()?;
        if p == 0.0 || p == 1.0 {
            return Ok(match self {
                Univariate::Uniform => p,
                Univariate::ChiSquare { .. } if p == 0.0 => 0.0,
                _ if p == 0.0 => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            });
        }
        Ok(prep.quantile(p))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        Ok(self.logpdf(x)?.exp())
    }

    pub fn logpdf(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return domain("density argument is NaN");
        }
        Ok(self.prepare()?.logpdf(x))
    }

    /// Probability integral transform clamped to `[PIT_EPS, 1 - PIT_EPS]`.
    pub fn pit(&self, x: f64) -> Result<f64> {
        Ok(clamp_unit(self.cdf(x)?))
    }

    /// Inverse of [`Univariate::pit`]: the quantile at a copula-scale value.
    pub fn inverse_pit(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return domain(format!("copula-scale value {u} outside (0, 1)"));
        }
        Ok(self.prepare()?.quantile(u))
    }

    /// Number of free shape parameters.
    pub fn n_shape(&self) -> usize {
        match self {
            Univariate::StudentT { .. } => 1,
            Univariate::SkewedStudentT { .. } => 2,
            _ => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate;

    #[test]
    fn t_quantile_closed_forms() {
        for &p in &[1e-10, 1e-6, 0.01, 0.3, 0.5001, 0.9, 1.0 - 1e-10] {
            let cauchy = (std::f64::consts::PI * (p - 0.5)).tan();
            assert!((t_quantile(p, 1.0) - cauchy).abs() <= 1e-9 * (1.0 + cauchy.abs()), "p {p}");
            let two = (2.0 * p - 1.0) / (2.0 * p * (1.0 - p)).sqrt();
            let got = t_quantile(p, 2.0);
            assert!((got - two).abs() <= 1e-9 * (1.0 + two.abs()), "p {p}: {got} vs {two}");
        }
    }

    #[test]
    fn t_quantile_inverts_cdf() {
        for &nu in &[2.01, 2.5, 3.0, 4.7, 8.0, 15.0, 30.0, 49.9, 200.0] {
            let oracle = StudentsT::new(0.0, 1.0, nu).unwrap();
            for &p in &[1e-10, 1e-6, 1e-3, 0.01, 0.05, 0.2, 0.4999, 0.5001, 0.7, 0.95, 0.999, 1.0 - 1e-10] {
                let got = t_quantile(p, nu);
                let tail = if p < 0.5 { oracle.cdf(got) } else { oracle.sf(got) };
                let want = p.min(1.0 - p);
                assert!((tail - want).abs() <= 1e-9 * want, "nu {nu} p {p}: tail {tail}");
                if (1e-3..=0.999).contains(&p) {
                    let q = oracle.inverse_cdf(p);
                    assert!((got - q).abs() <= 1e-9 * (1.0 + q.abs()), "nu {nu} p {p}: {got} vs {q}");
                }
            }
        }
    }

    #[test]
    fn normal_reference_values() {
        let q = Univariate::Normal.quantile(0.975).unwrap();
        assert!((q - 1.959_963_984_540_054).abs() < 1e-12);
        let q = Univariate::Normal.quantile(1e-10).unwrap();
        assert!(((q + 6.361_340_902_404_056) / 6.361_340_902_404_056).abs() < 1e-12);
    }

    #[test]
    fn chi_square_reference() {
        let c = Univariate::ChiSquare { df: 1.0 }.cdf(1.9569).unwrap();
        // P(|Z| <= sqrt(1.9569))
        let z = 1.9569f64.sqrt();
        assert!((c - (2.0 * norm_cdf(z) - 1.0)).abs() < 1e-10);
        assert!((c - 0.8382).abs() < 1e-4);
    }

    #[test]
    fn skew_t_symmetric_case_matches_standardised_t() {
        let a = Univariate::SkewedStudentT { nu: 7.0, xi: 1.0 };
        let b = Univariate::StudentT { nu: 7.0, standardized: true };
        for &p in &[0.001, 0.05, 0.3, 0.5, 0.8, 0.99] {
            assert!((a.quantile(p).unwrap() - b.quantile(p).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn skew_t_moments_by_quadrature() {
        for &(nu, xi) in &[(5.0, 0.7), (8.0, 1.4), (30.0, 1.1)] {
            let d = Univariate::SkewedStudentT { nu, xi }.prepare().unwrap();
            // piecewise over a wide range so the adaptive rule sees the mass
            let moment = |k: i32| -> f64 {
                (-400..400)
                    .map(|i| integrate(|x| x.powi(k) * d.logpdf(x).exp(), i as f64 * 0.5, (i + 1) as f64 * 0.5, 1e-14))
                    .sum()
            };
            let (m0, m1, m2) = (moment(0), moment(1), moment(2));
            assert!((m0 - 1.0).abs() < 1e-6, "mass {m0}");
            assert!(m1.abs() < 1e-4, "mean {m1}");
            assert!((m2 - 1.0).abs() < 1e-2, "var {m2}");
            // cdf is the integral of the density
            let c = integrate(|x| d.logpdf(x).exp(), -60.0, 0.3, 1e-12);
            assert!((c - d.cdf(0.3)).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(Univariate::SkewedStudentT { nu: 2.0, xi: 1.0 }.validate().is_err());
        assert!(Univariate::SkewedStudentT { nu: 5.0, xi: 0.0 }.validate().is_err());
        assert!(Univariate::StudentT { nu: -1.0, standardized: false }.validate().is_err());
        assert!(Univariate::Normal.quantile(1.5).is_err());
    }

    #[test]
    fn t_with_two_degrees_has_zero_median() {
        let d = Univariate::StudentT { nu: 2.0, standardized: false };
        assert_eq!(d.quantile(0.5).unwrap(), 0.0);
    }
}
