//! Schedule generators: the sample-free static schedule, the sequential TPA
//! process, and the two-round PseudoTPA.

use rand::Rng;
use serde::Serialize;

use crate::beta::{Beta, ProblemSpec};
use crate::error::{Error, Result};
use crate::oracle::{exp1, phase, BatchRequest, OracleSession, StreamKey};
use crate::schedule::Schedule;

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "theta",
            value: theta,
            reason: "must lie in (0, 1]",
        })
    }
}

/// The iterates of a static-schedule run, kept for verification.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StaticTrace {
    /// `b_0 = beta_max > b_1 > ... > b_i`, the iterates that were kept.
    pub iterates: Vec<f64>,
    /// `s_j = min{n, q / (beta_max - b_j)}` for each kept iterate.
    pub bounds: Vec<f64>,
    pub schedule: Schedule,
}

/// Static schedule with max-width at most `theta`. Draws no samples.
pub fn static_schedule(spec: &ProblemSpec, theta: f64) -> Result<Schedule> {
    static_schedule_trace(spec, theta).map(|t| t.schedule)
}

pub fn static_schedule_trace(spec: &ProblemSpec, theta: f64) -> Result<StaticTrace> {
    check_theta(theta)?;
    let (beta_max, beta_min) = (spec.beta_max(), spec.beta_min().get());
    let mut iterates = vec![beta_max];
    let mut bounds = Vec::new();
    loop {
        let beta = iterates[iterates.len() - 1];
        // q / 0 = +inf at the first iterate, so s_0 = n.
        let s = spec.n().min(spec.q() / (beta_max - beta));
        bounds.push(s);
        let next = beta - theta / s;
        if s < theta / 2.0 || next < beta_min {
            break;
        }
        iterates.push(next);
    }
    let points = iterates.iter().map(|&b| Beta::new(b).expect("iterates are finite"));
    let schedule = Schedule::from_points(spec.beta_min(), beta_max, points);
    Ok(StaticTrace {
        iterates,
        bounds,
        schedule,
    })
}

/// One run of the TPA process. Every step is a single-sample oracle round.
///
/// `stream` separates independent runs that share a session.
pub fn tpa_run(session: &mut OracleSession<'_>, stream: u64) -> Result<Schedule> {
    let mut eta_rng = session.aux_rng(StreamKey::new(phase::TPA_ETA, stream, 0));
    let points = tpa_points(session, stream, || exp1(&mut eta_rng))?;
    let spec = *session.spec();
    Ok(Schedule::from_points(spec.beta_min(), spec.beta_max(), points))
}

/// The descending TPA points `b_0 = beta_max > b_1 > ... > b_i > beta_min`,
/// with the exponential steps supplied by `eta`.
pub fn tpa_points<F>(session: &mut OracleSession<'_>, stream: u64, mut eta: F) -> Result<Vec<Beta>>
where
    F: FnMut() -> f64,
{
    let spec = *session.spec();
    let mut points = vec![spec.beta_max_beta()];
    for step in 0u64.. {
        let beta = points[points.len() - 1];
        let mut req = BatchRequest::new();
        req.push_keyed(beta, 1, stream, step);
        let x = session.execute_batch(&req, phase::TPA_DRAW)?[0][0];
        let eta = eta();
        let next = if x == 0.0 {
            f64::NEG_INFINITY
        } else {
            beta.get() - eta / x
        };
        if next <= spec.beta_min().get() {
            break;
        }
        points.push(Beta::new(next)?);
    }
    Ok(points)
}

/// TPA(k): the union of `k` independent TPA runs.
pub fn tpa_union(session: &mut OracleSession<'_>, k: usize) -> Result<Schedule> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let mut points = Vec::new();
    for run in 0..k as u64 {
        points.extend(tpa_run(session, run)?.into_betas());
    }
    let spec = *session.spec();
    Ok(Schedule::from_points(spec.beta_min(), spec.beta_max(), points))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PseudoTpaConfig {
    /// Target expected width.
    pub theta: f64,
    /// Samples per inclusion test (`d`).
    pub inclusion_samples: usize,
    /// Max-width of the underlying static grid (`θ'`).
    pub grid_theta: f64,
}

impl PseudoTpaConfig {
    pub fn new(theta: f64) -> Result<Self> {
        check_theta(theta)?;
        Ok(PseudoTpaConfig {
            theta,
            inclusion_samples: 2,
            grid_theta: 0.25,
        })
    }

    /// Local TPA steps per kept point, `ceil(8 / theta)`.
    pub fn refinement_count(&self) -> usize {
        (8.0 / self.theta).ceil() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PseudoTpaOutcome {
    /// The static grid `B`.
    pub grid: Schedule,
    /// The subsampled schedule `B'`.
    pub kept: Schedule,
    /// The returned schedule `B''`.
    pub schedule: Schedule,
    pub round1_samples: u64,
    pub round2_samples: u64,
}

/// PseudoTPA: static grid, one round of subsampling, one round of local TPA
/// refinement.
pub fn pseudo_tpa(session: &mut OracleSession<'_>, config: &PseudoTpaConfig) -> Result<PseudoTpaOutcome> {
    check_theta(config.theta)?;
    check_theta(config.grid_theta)?;
    let spec = *session.spec();
    let grid = static_schedule(&spec, config.grid_theta)?;
    let betas = grid.betas();
    let t = betas.len() - 1;
    let d = config.inclusion_samples;

    // Round one: d samples at b_{i+1} for each interior b_i.
    let mut req = BatchRequest::new();
    for i in 1..t {
        req.push_keyed(betas[i + 1], d, i as u64, 0);
    }
    let sums = session.execute_batch_map(&req, phase::PSEUDO_ROUND1, |_, xs| xs.iter().sum::<f64>())?;
    let mut kept_idx = vec![0];
    for (i, sum) in (1..t).zip(sums) {
        let gap = betas[i + 1].get() - betas[i].get();
        // P[keep] = 1 - e^{-sum * gap}, realized with one keyed uniform.
        let keep_prob = -(-sum * gap).exp_m1();
        let u: f64 = session
            .aux_rng(StreamKey::new(phase::PSEUDO_INCLUDE, i as u64, 0))
            .gen();
        if u < keep_prob {
            kept_idx.push(i);
        }
    }
    kept_idx.push(t);
    let kept = Schedule::new(kept_idx.iter().map(|&i| betas[i]).collect())?;

    // Round two: k local TPA steps from every point of B', endpoints included.
    let k = config.refinement_count();
    let mut req = BatchRequest::new();
    for &i in &kept_idx {
        req.push_keyed(betas[i], k, i as u64, 0);
    }
    let new_points = session.execute_batch(&req, phase::PSEUDO_ROUND2)?;
    let mut points: Vec<Beta> = kept.betas().to_vec();
    for (&i, ys) in kept_idx.iter().zip(new_points) {
        let mut eta_rng = session.aux_rng(StreamKey::new(phase::PSEUDO_ETA, i as u64, 0));
        let base = betas[i].get();
        for y in ys {
            let eta = exp1(&mut eta_rng);
            if y > 0.0 {
                points.push(Beta::new(base - eta / y)?);
            }
        }
    }
    let schedule = Schedule::from_points(spec.beta_min(), spec.beta_max(), points);
    Ok(PseudoTpaOutcome {
        grid: grid.clone(),
        round1_samples: (d * (t.saturating_sub(1))) as u64,
        round2_samples: (k * kept.len()) as u64,
        kept,
        schedule,
    })
}
