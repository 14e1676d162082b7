use serde::{Deserialize, Deserializer, Serialize};

use crate::beta::{Beta, ProblemSpec};
use crate::error::{Error, Result};

/// Points closer than this are treated as the same schedule value.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// A cooling schedule `beta_min = b_0 < b_1 < ... < b_t = beta_max`.
///
/// Only the first point may be `-inf`; there are always at least two points.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Schedule {
    betas: Vec<Beta>,
}

impl Schedule {
    /// Validates an explicit, already sorted list of points.
    pub fn new(betas: Vec<Beta>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least two points, got {}",
                betas.len()
            )));
        }
        if let Some(b) = betas[1..].iter().find(|b| !b.is_finite()) {
            return Err(Error::InvalidSchedule(format!(
                "only the first point may be -inf, found {b} later"
            )));
        }
        if let Some(w) = betas.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSchedule(format!(
                "points must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Schedule { betas })
    }

    /// Builds the schedule `({beta_min, beta_max} ∪ points) ∩ [beta_min, beta_max]`,
    /// merging points within [`MERGE_TOLERANCE`] of each other.
    pub fn from_points<I>(beta_min: Beta, beta_max: f64, points: I) -> Self
    where
        I: IntoIterator<Item = Beta>,
    {
        let mut interior: Vec<f64> = points
            .into_iter()
            .map(Beta::get)
            .filter(|&p| p > beta_min.get() && p < beta_max)
            .collect();
        interior.sort_by(f64::total_cmp);

        let mut betas = Vec::with_capacity(interior.len() + 2);
        betas.push(beta_min);
        let mut last = beta_min.get();
        for p in interior {
            if p - last > MERGE_TOLERANCE {
                betas.push(Beta::new(p).expect("interior point is finite"));
                last = p;
            }
        }
        if betas.len() > 1 && beta_max - last <= MERGE_TOLERANCE {
            betas.pop();
        }
        betas.push(Beta::new(beta_max).expect("beta_max is finite"));
        Schedule { betas }
    }

    /// The two-point schedule `{beta_min, beta_max}`.
    pub fn endpoints(spec: &ProblemSpec) -> Self {
        Schedule {
            betas: vec![spec.beta_min(), spec.beta_max_beta()],
        }
    }

    pub fn betas(&self) -> &[Beta] {
        &self.betas
    }

    /// `len(B) = t + 1`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_pairs(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn first(&self) -> Beta {
        self.betas[0]
    }

    pub fn last(&self) -> Beta {
        self.betas[self.betas.len() - 1]
    }

    /// Adjacent pairs `(b_i, b_{i+1})`.
    pub fn pairs(&self) -> impl ExactSizeIterator<Item = (Beta, Beta)> + '_ {
        self.betas.windows(2).map(|w| (w[0], w[1]))
    }

    /// Index `v` with `x ∈ [b_v, b_{v+1})`, for `x` strictly inside the schedule.
    pub fn bracket(&self, x: f64) -> Result<usize> {
        let (lo, hi) = (self.first().get(), self.last().get());
        if !(x > lo && x < hi) {
            return Err(Error::OutOfRange { value: x, lo, hi });
        }
        Ok(self.betas.partition_point(|b| b.get() <= x) - 1)
    }

    pub fn into_betas(self) -> Vec<Beta> {
        self.betas
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let betas = Vec::<Beta>::deserialize(deserializer)?;
        Schedule::new(betas).map_err(serde::de::Error::custom)
    }
}
