//! Bivariate pair-copula families: CDF, density, h-functions and their
//! inverses, Kendall's tau, rotations and maximum-likelihood selection.
//!
//! Rotations follow the usual convention: the 180° rotation is the survival
//! copula, the 90° rotation flips the first argument and the 270° rotation
//! flips the second. Only families without reflection symmetry are rotated.

mod families;
mod fit;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

pub use fit::{empirical_kendall_tau, fit_pair, FitCandidate, PairFit};

/// Pair-copula family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Independence,
    Gaussian,
    StudentT,
    Clayton,
    Gumbel,
    Frank,
    Joe,
    Bb1,
    Bb7,
    Bb8,
}

impl Family {
    /// All families in the deterministic order used to break ties during selection.
    pub const ALL: [Family; 10] = [
        Family::Independence,
        Family::Gaussian,
        Family::StudentT,
        Family::Clayton,
        Family::Gumbel,
        Family::Frank,
        Family::Joe,
        Family::Bb1,
        Family::Bb7,
        Family::Bb8,
    ];

    pub fn n_params(self) -> usize {
        match self {
            Family::Independence => 0,
            Family::StudentT | Family::Bb1 | Family::Bb7 | Family::Bb8 => 2,
            _ => 1,
        }
    }

    /// Families without reflection symmetry; only these are rotated.
    pub fn is_rotatable(self) -> bool {
        matches!(
            self,
            Family::Clayton | Family::Gumbel | Family::Joe | Family::Bb1 | Family::Bb7 | Family::Bb8
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::StudentT => "student_t",
            Family::Clayton => "clayton",
            Family::Gumbel => "gumbel",
            Family::Frank => "frank",
            Family::Joe => "joe",
            Family::Bb1 => "bb1",
            Family::Bb7 => "bb7",
            Family::Bb8 => "bb8",
        }
    }

    /// Parameter box used by the estimator.
    pub(crate) fn fit_bounds(self) -> [(f64, f64); 2] {
        match self {
            Family::Independence => [(0.0, 0.0); 2],
            Family::Gaussian => [(-0.999, 0.999), (0.0, 0.0)],
            Family::StudentT => [(-0.999, 0.999), (2.01, 50.0)],
            Family::Clayton => [(1e-4, 28.0), (0.0, 0.0)],
            Family::Gumbel => [(1.0, 50.0), (0.0, 0.0)],
            Family::Frank => [(-35.0, 35.0), (0.0, 0.0)],
            Family::Joe => [(1.0, 30.0), (0.0, 0.0)],
            Family::Bb1 => [(1e-4, 7.0), (1.0, 7.0)],
            Family::Bb7 => [(1.0, 6.0), (1e-4, 25.0)],
            Family::Bb8 => [(1.0, 8.0), (1e-4, 1.0)],
        }
    }

    fn check_params(self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return domain(format!(
                "{} takes {} parameter(s), got {}",
                self.name(),
                self.n_params(),
                p.len()
            ));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return domain(format!("{} parameters must be finite", self.name()));
        }
        let ok = match self {
            Family::Independence => true,
            Family::Gaussian => p[0].abs() < 1.0,
            Family::StudentT => p[0].abs() < 1.0 && p[1] > 0.0,
            Family::Clayton => p[0] > 0.0,
            Family::Gumbel | Family::Joe => p[0] >= 1.0,
            Family::Frank => p[0] != 0.0,
            Family::Bb1 => p[0] > 0.0 && p[1] >= 1.0,
            Family::Bb7 => p[0] >= 1.0 && p[1] > 0.0,
            Family::Bb8 => p[0] >= 1.0 && p[1] > 0.0 && p[1] <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            domain(format!("parameters {:?} outside the {} domain", p, self.name()))
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown copula family '{s}'")))
    }
}

/// Rotation angle in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl From<Rotation> for u16 {
    fn from(r: Rotation) -> u16 {
        match r {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

impl TryFrom<u16> for Rotation {
    type Error = String;

    fn try_from(v: u16) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Rotation::R0),
            90 => Ok(Rotation::R90),
            180 => Ok(Rotation::R180),
            270 => Ok(Rotation::R270),
            _ => Err(format!("invalid rotation {v}")),
        }
    }
}

/// Which argument is conditioned on in an h-function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HDirection {
    /// `C(u1 | u2) = dC/du2`.
    FirstGivenSecond,
    /// `C(u2 | u1) = dC/du1`.
    SecondGivenFirst,
}

/// A parametrised, possibly rotated, bivariate copula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PairCopulaRepr", try_from = "PairCopulaRepr")]
pub struct PairCopula {
    family: Family,
    rotation: Rotation,
    params: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairCopulaRepr {
    family: Family,
    rotation: Rotation,
    params: Vec<f64>,
}

impl From<PairCopula> for PairCopulaRepr {
    fn from(c: PairCopula) -> Self {
        PairCopulaRepr {
            family: c.family,
            rotation: c.rotation,
            params: c.params().to_vec(),
        }
    }
}

impl TryFrom<PairCopulaRepr> for PairCopula {
    type Error = Error;

    fn try_from(r: PairCopulaRepr) -> Result<Self> {
        PairCopula::new(r.family, r.rotation, &r.params)
    }
}

impl PairCopula {
    /// Build a copula, validating the parameter domain and rotation.
    pub fn new(family: Family, rotation: Rotation, params: &[f64]) -> Result<Self> {
        family.check_params(params)?;
        if rotation != Rotation::R0 && !family.is_rotatable() {
            return domain(format!("{} is not rotated", family.name()));
        }
        let mut p = [0.0; 2];
        p[..params.len()].copy_from_slice(params);
        Ok(PairCopula {
            family,
            rotation,
            params: p,
        })
    }

    pub fn independence() -> Self {
        PairCopula {
            family: Family::Independence,
            rotation: Rotation::R0,
            params: [0.0; 2],
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn rotation(&self) -> Rotation {
        self.rotation
    }

    pub fn params(&self) -> &[f64] {
        &self.params[..self.family.n_params()]
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    /// `C(u1, u2)`.
    pub fn cdf(&self, u1: f64, u2: f64) -> f64 {
        let (f, p) = (self.family, self.params);
        let (u1, u2) = (families::clamp(u1), families::clamp(u2));
        match self.rotation {
            Rotation::R0 => families::cdf(f, p, u1, u2),
            Rotation::R90 => u2 - families::cdf(f, p, 1.0 - u1, u2),
            Rotation::R180 => u1 + u2 - 1.0 + families::cdf(f, p, 1.0 - u1, 1.0 - u2),
            Rotation::R270 => u1 - families::cdf(f, p, u1, 1.0 - u2),
        }
    }

    /// `ln c(u1, u2)`.
    pub fn log_density(&self, u1: f64, u2: f64) -> f64 {
        let (f, p) = (self.family, self.params);
        match self.rotation {
            Rotation::R0 => families::ln_pdf(f, p, u1, u2),
            Rotation::R90 => families::ln_pdf(f, p, 1.0 - u1, u2),
            Rotation::R180 => families::ln_pdf(f, p, 1.0 - u1, 1.0 - u2),
            Rotation::R270 => families::ln_pdf(f, p, u1, 1.0 - u2),
        }
    }

    /// `c(u1, u2)`.
    pub fn density(&self, u1: f64, u2: f64) -> f64 {
        self.log_density(u1, u2).exp()
    }

    /// Conditional distribution; the arguments are always `(u1, u2)`.
    pub fn h(&self, u1: f64, u2: f64, dir: HDirection) -> f64 {
        let (f, p) = (self.family, self.params);
        let base = |a: f64, b: f64| families::h(f, p, a, b);
        let v = match (dir, self.rotation) {
            (HDirection::FirstGivenSecond, Rotation::R0) => base(u1, u2),
            (HDirection::FirstGivenSecond, Rotation::R90) => 1.0 - base(1.0 - u1, u2),
            (HDirection::FirstGivenSecond, Rotation::R180) => 1.0 - base(1.0 - u1, 1.0 - u2),
            (HDirection::FirstGivenSecond, Rotation::R270) => base(u1, 1.0 - u2),
            (HDirection::SecondGivenFirst, Rotation::R0) => base(u2, u1),
            (HDirection::SecondGivenFirst, Rotation::R90) => base(u2, 1.0 - u1),
            (HDirection::SecondGivenFirst, Rotation::R180) => 1.0 - base(1.0 - u2, 1.0 - u1),
            (HDirection::SecondGivenFirst, Rotation::R270) => 1.0 - base(1.0 - u2, u1),
        };
        families::open_unit(v)
    }

    /// Inverse h-function: returns the conditioned argument `x` such that
    /// `h(x | given) = w` in the requested direction.
    pub fn h_inverse(&self, w: f64, given: f64, dir: HDirection) -> f64 {
        let (f, p) = (self.family, self.params);
        let inv = |w: f64, b: f64| families::h_inv(f, p, w, b);
        let v = match (dir, self.rotation) {
            (HDirection::FirstGivenSecond, Rotation::R0) => inv(w, given),
            (HDirection::FirstGivenSecond, Rotation::R90) => 1.0 - inv(1.0 - w, given),
            (HDirection::FirstGivenSecond, Rotation::R180) => 1.0 - inv(1.0 - w, 1.0 - given),
            (HDirection::FirstGivenSecond, Rotation::R270) => inv(w, 1.0 - given),
            (HDirection::SecondGivenFirst, Rotation::R0) => inv(w, given),
            (HDirection::SecondGivenFirst, Rotation::R90) => inv(w, 1.0 - given),
            (HDirection::SecondGivenFirst, Rotation::R180) => 1.0 - inv(1.0 - w, 1.0 - given),
            (HDirection::SecondGivenFirst, Rotation::R270) => 1.0 - inv(1.0 - w, given),
        };
        families::clamp(v)
    }

    /// Population Kendall's tau.
    pub fn kendall_tau(&self) -> f64 {
        let t = families::kendall_tau(self.family, self.params);
        match self.rotation {
            Rotation::R90 | Rotation::R270 => -t,
            _ => t,
        }
    }

    /// Log-likelihood of paired observations.
    pub fn log_likelihood(&self, u1: &[f64], u2: &[f64]) -> f64 {
        u1.iter().zip(u2).map(|(&a, &b)| self.log_density(a, b)).sum()
    }
}

fn check_unit(name: &str, u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        domain(format!("{name} = {u} outside [0, 1]"))
    }
}

/// Checked `C(u1, u2)`.
pub fn pair_cdf(c: &PairCopula, u1: f64, u2: f64) -> Result<f64> {
    check_unit("u1", u1)?;
    check_unit("u2", u2)?;
    Ok(c.cdf(u1, u2))
}

/// Checked density `c(u1, u2)`.
pub fn pair_density(c: &PairCopula, u1: f64, u2: f64) -> Result<f64> {
    check_unit("u1", u1)?;
    check_unit("u2", u2)?;
    Ok(c.density(u1, u2))
}

/// Checked h-function.
pub fn h_function(c: &PairCopula, u1: f64, u2: f64, dir: HDirection) -> Result<f64> {
    check_unit("u1", u1)?;
    check_unit("u2", u2)?;
    Ok(c.h(u1, u2, dir))
}

/// Checked inverse h-function.
pub fn h_inverse(c: &PairCopula, w: f64, given: f64, dir: HDirection) -> Result<f64> {
    check_unit("w", w)?;
    check_unit("given", given)?;
    Ok(c.h_inverse(w, given, dir))
}
