//! Per-UE application utilities.
//!
//! Two families are supported:
//!
//! * **Sigmoidal** (inelastic, real-time traffic), with steepness `a` and
//!   inflection rate `b`:
//!   `U(r) = c * (1 / (1 + exp(-a (r - b))) - d)` where
//!   `c = (1 + exp(ab)) / exp(ab)` and `d = 1 / (1 + exp(ab))`.
//!   Both constants are implied by `a` and `b`. Substituting them gives the
//!   cancellation-free form `U(r) = (1 - exp(-a r)) / (1 + exp(a (b - r)))`,
//!   which is what is evaluated, so `U(0)` is exactly zero.
//! * **Logarithmic** (elastic, delay-tolerant traffic), with growth rate `k`
//!   and saturation rate `r_max`:
//!   `U(r) = ln(1 + k r) / ln(1 + k r_max)`.
//!
//! The scheduler never needs `U'` alone. It ranks UEs by the log-derivative
//! `U'(r) / U(r)`, which both families express in closed form without
//! forming the ratio of two small numbers.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default rate floor applied wherever a utility is evaluated at a UE's
/// current rate. Keeps `U'/U` finite at start-up when every rate is zero.
pub const DEFAULT_RATE_FLOOR: f64 = 1e-6;

/// A validated utility function. Construct through [`UtilityFunction::sigmoidal`]
/// or [`UtilityFunction::logarithmic`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "UtilitySpec")]
pub enum UtilityFunction {
    Sigmoidal { a: f64, b: f64 },
    Logarithmic { k: f64, r_max: f64 },
}

/// Unvalidated mirror of [`UtilityFunction`] used for deserialization.
#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilitySpec {
    Sigmoidal { a: f64, b: f64 },
    Logarithmic { k: f64, r_max: f64 },
}

impl TryFrom<UtilitySpec> for UtilityFunction {
    type Error = Error;

    fn try_from(spec: UtilitySpec) -> Result<Self> {
        match spec {
            UtilitySpec::Sigmoidal { a, b } => Self::sigmoidal(a, b),
            UtilitySpec::Logarithmic { k, r_max } => Self::logarithmic(k, r_max),
        }
    }
}

fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and > 0, got {value}")))
    }
}

fn require_rate(r: f64) -> Result<()> {
    if r >= 0.0 && !r.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain(format!("rate must be >= 0, got {r}")))
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + exp(-x))`, stable for large `|x|`.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl UtilityFunction {
    pub fn sigmoidal(a: f64, b: f64) -> Result<Self> {
        require_positive("sigmoidal steepness a", a)?;
        require_positive("sigmoidal inflection b", b)?;
        Ok(Self::Sigmoidal { a, b })
    }

    pub fn logarithmic(k: f64, r_max: f64) -> Result<Self> {
        require_positive("logarithmic growth k", k)?;
        require_positive("logarithmic saturation r_max", r_max)?;
        Ok(Self::Logarithmic { k, r_max })
    }

    pub fn is_sigmoidal(&self) -> bool {
        matches!(self, Self::Sigmoidal { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Sigmoidal { .. } => "sigmoidal",
            Self::Logarithmic { .. } => "logarithmic",
        }
    }

    /// Parameters rendered as `name=value` pairs joined by `;`.
    pub fn params(&self) -> String {
        match *self {
            Self::Sigmoidal { a, b } => format!("a={a};b={b}"),
            Self::Logarithmic { k, r_max } => format!("k={k};r_max={r_max}"),
        }
    }

    /// Scale constant `c = (1 + e^{ab}) / e^{ab}` of the sigmoidal form.
    /// `None` for logarithmic utilities.
    pub fn sigmoid_scale(&self) -> Option<f64> {
        match *self {
            Self::Sigmoidal { a, b } => Some(1.0 + (-a * b).exp()),
            Self::Logarithmic { .. } => None,
        }
    }

    /// Offset constant `d = 1 / (1 + e^{ab})` of the sigmoidal form.
    pub fn sigmoid_offset(&self) -> Option<f64> {
        match *self {
            Self::Sigmoidal { a, b } => Some(logistic(-a * b)),
            Self::Logarithmic { .. } => None,
        }
    }

    /// Utility at rate `r`, in `[0, 1]` (logarithmic utilities exceed 1 past `r_max`).
    pub fn eval(&self, r: f64) -> Result<f64> {
        require_rate(r)?;
        Ok(match *self {
            Self::Sigmoidal { a, b } => {
                let num = -(-a * r).exp_m1();
                let tail = a * (b - r);
                if tail > 700.0 {
                    (num.ln() - softplus(tail)).exp()
                } else {
                    num / (1.0 + tail.exp())
                }
            }
            Self::Logarithmic { k, r_max } => (k * r).ln_1p() / (k * r_max).ln_1p(),
        })
    }

    /// `ln U(r)`. Stays finite for tiny positive rates where `U(r)` itself
    /// would lose all relative precision. Returns `-inf` at `r = 0`.
    pub fn log_eval(&self, r: f64) -> Result<f64> {
        require_rate(r)?;
        Ok(match *self {
            Self::Sigmoidal { a, b } => (-(-a * r).exp_m1()).ln() - softplus(a * (b - r)),
            Self::Logarithmic { k, r_max } => (k * r).ln_1p().ln() - (k * r_max).ln_1p().ln(),
        })
    }

    /// Analytic `dU/dr`.
    pub fn derivative(&self, r: f64) -> Result<f64> {
        require_rate(r)?;
        Ok(match *self {
            Self::Sigmoidal { a, b } => {
                // d/dr of (1 - e^{-ar}) / (1 + e^{a(b-r)}), written via the
                // logistic s = 1 / (1 + e^{a(b-r)}):
                // U' = a e^{-ar} s + a (1 - e^{-ar}) s (1 - s)
                let s = logistic(a * (r - b));
                let s_complement = logistic(a * (b - r));
                let decay = (-a * r).exp();
                let grown = -(-a * r).exp_m1();
                a * s * (decay + grown * s_complement)
            }
            Self::Logarithmic { k, r_max } => k / ((1.0 + k * r) * (k * r_max).ln_1p()),
        })
    }

    /// `U'(r) / U(r)` for `r > 0`.
    pub fn log_derivative(&self, r: f64) -> Result<f64> {
        require_rate(r)?;
        if r == 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(match *self {
            Self::Sigmoidal { a, b } => {
                let ar = a * r;
                let head = if ar > 700.0 { 0.0 } else { a / ar.exp_m1() };
                head + a * logistic(a * (b - r))
            }
            Self::Logarithmic { k, .. } => k / ((1.0 + k * r) * (k * r).ln_1p()),
        })
    }

    /// Scheduling metric `U'(r~) * h / U(r~)` with `r~ = max(r_total, eps)`.
    pub fn marginal_metric(&self, r_total: f64, h: f64, eps: f64) -> Result<f64> {
        require_rate(r_total)?;
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("gain must be finite and >= 0, got {h}")));
        }
        require_positive("rate floor eps", eps)?;
        if h == 0.0 {
            return Ok(0.0);
        }
        Ok(self.log_derivative(r_total.max(eps))? * h)
    }
}

impl fmt::Display for UtilityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind(), self.params())
    }
}

/// The named utilities used by the reference experiment and its figure.
pub mod catalog {
    use super::UtilityFunction;

    const fn sig(a: f64, b: f64) -> UtilityFunction {
        UtilityFunction::Sigmoidal { a, b }
    }

    const fn log(k: f64) -> UtilityFunction {
        UtilityFunction::Logarithmic { k, r_max: 100.0 }
    }

    /// Step-like voice traffic.
    pub const VOIP: UtilityFunction = sig(5.0, 10.0);
    /// Standard-definition adaptive video.
    pub const SD_VIDEO: UtilityFunction = sig(3.0, 20.0);
    /// High-definition adaptive video.
    pub const HD_VIDEO: UtilityFunction = sig(1.0, 30.0);
    /// Gentler adaptive real-time curve.
    pub const ADAPTIVE_REALTIME: UtilityFunction = sig(0.5, 20.0);

    pub const ELASTIC_FAST: UtilityFunction = log(15.0);
    pub const ELASTIC_MEDIUM: UtilityFunction = log(3.0);
    pub const ELASTIC_SLOW: UtilityFunction = log(0.5);
    pub const ELASTIC_VERY_SLOW: UtilityFunction = log(0.1);

    /// The six UEs of the reference experiment, in UE order.
    pub const REFERENCE_SIX: [UtilityFunction; 6] = [
        VOIP,
        SD_VIDEO,
        HD_VIDEO,
        ELASTIC_FAST,
        ELASTIC_MEDIUM,
        ELASTIC_SLOW,
    ];

    pub fn all() -> Vec<UtilityFunction> {
        vec![
            VOIP,
            SD_VIDEO,
            HD_VIDEO,
            ADAPTIVE_REALTIME,
            ELASTIC_FAST,
            ELASTIC_MEDIUM,
            ELASTIC_SLOW,
            ELASTIC_VERY_SLOW,
        ]
    }
}
