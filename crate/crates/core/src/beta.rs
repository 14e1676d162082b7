//! Extended-real inverse temperatures and the estimation problem box.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A value of the Gibbs parameter: either a finite real or `-inf`.
///
/// `+inf` and NaN are unrepresentable, so the type is totally ordered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beta(f64);

impl Beta {
    pub const NEG_INF: Beta = Beta(f64::NEG_INFINITY);
    pub const ZERO: Beta = Beta(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value == f64::INFINITY {
            return Err(Error::InvalidBeta(value));
        }
        // -0.0 and 0.0 must compare equal under total ordering.
        Ok(Beta(if value == 0.0 { 0.0 } else { value }))
    }

    /// Like [`Beta::new`] but rejects `-inf`.
    pub fn finite(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidBeta(value));
        }
        Beta::new(value)
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_neg_inf(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Midpoint of `[self, other]`; the midpoint of `(-inf, b)` is `-inf`.
    pub fn midpoint(self, other: Beta) -> Beta {
        if self.is_neg_inf() || other.is_neg_inf() {
            Beta::NEG_INF
        } else {
            Beta(0.5 * (self.0 + other.0))
        }
    }
}

impl Eq for Beta {}

impl PartialOrd for Beta {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Beta {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl TryFrom<f64> for Beta {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Beta::new(value)
    }
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_neg_inf() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("-inf") {
            return Ok(Beta::NEG_INF);
        }
        let value: f64 = s.parse().map_err(|_| Error::Parse {
            what: "beta",
            message: format!("expected a number or \"-inf\", got {s:?}"),
        })?;
        Beta::new(value)
    }
}

// JSON has no infinity literal, so -inf travels as the string "-inf".
impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_neg_inf() {
            serializer.serialize_str("-inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        let beta = match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Beta::new(v),
            Repr::Str(s) => s.parse(),
        };
        beta.map_err(serde::de::Error::custom)
    }
}

/// The bounding box of an estimation problem: `[beta_min, beta_max]`, the
/// energy bound `n`, and the promised bound `q >= log Q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProblemSpec {
    beta_min: Beta,
    beta_max: f64,
    n: f64,
    q: f64,
}

impl ProblemSpec {
    pub fn new(beta_min: Beta, beta_max: f64, n: f64, q: f64) -> Result<Self> {
        if !beta_max.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "beta_max must be finite, got {beta_max}"
            )));
        }
        if beta_min.get() >= beta_max {
            return Err(Error::InvalidSpec(format!(
                "beta_min ({beta_min}) must be below beta_max ({beta_max})"
            )));
        }
        if !(n.is_finite() && n >= 2.0) {
            return Err(Error::InvalidSpec(format!("n must be a finite real >= 2, got {n}")));
        }
        if !(q.is_finite() && q >= 2.0) {
            return Err(Error::InvalidSpec(format!("q must be a finite real >= 2, got {q}")));
        }
        Ok(ProblemSpec {
            beta_min,
            beta_max,
            n,
            q,
        })
    }

    pub fn beta_min(&self) -> Beta {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn beta_max_beta(&self) -> Beta {
        Beta(self.beta_max)
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Whether `beta` lies in the closed box `[beta_min, beta_max]`.
    pub fn contains(&self, beta: Beta) -> bool {
        beta >= self.beta_min && beta.get() <= self.beta_max
    }
}

#[derive(Deserialize)]
struct SpecRepr {
    beta_min: Beta,
    beta_max: f64,
    n: f64,
    q: f64,
}

impl<'de> Deserialize<'de> for ProblemSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = SpecRepr::deserialize(deserializer)?;
        ProblemSpec::new(r.beta_min, r.beta_max, r.n, r.q).map_err(serde::de::Error::custom)
    }
}
