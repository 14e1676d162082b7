//! The paired product estimator and the end-to-end estimation pipelines.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::{Beta, ProblemSpec};
use crate::error::{Error, Result};
use crate::gibbs::{log_sum_exp, GrossModel};
use crate::oracle::{derive_seed, phase, BatchRequest, OracleSession, OracleStats, SampleOracle, MAX_ITEM_SAMPLES};
use crate::schedule::Schedule;
use crate::schedules::{pseudo_tpa, static_schedule, tpa_union, PseudoTpaConfig};

/// Curvature cap of the one-round pipeline.
pub const NONADAPTIVE_KAPPA: f64 = 3.0;
/// Curvature cap of the three-round pipeline.
pub const THREE_ROUND_KAPPA: f64 = 30.0;

/// `ceil(100 (e^kappa - 1) / eps^2)`, at least 1.
pub fn ppe_sample_size(kappa: f64, epsilon: f64) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must lie in (0, 1/2)",
        });
    }
    if kappa.is_nan() {
        return Err(Error::InvalidParameter {
            name: "kappa",
            value: kappa,
            reason: "must be a nonnegative real",
        });
    }
    // Exact curvatures may come out as -1e-17.
    let raw = (100.0 * kappa.max(0.0).exp_m1() / (epsilon * epsilon)).ceil();
    if raw >= u64::MAX as f64 {
        return Err(Error::SampleSizeOverflow { kappa, epsilon });
    }
    Ok((raw as u64).max(1))
}

/// The width target `1 / (4 ln n)` shared by the headline pipelines.
pub fn default_theta(n: f64) -> f64 {
    1.0 / (4.0 * n.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PpeOutcome {
    pub log_q_hat: f64,
    /// `log(U_1 ... U_t)`.
    pub log_u: f64,
    /// `log(V_1 ... V_t)`.
    pub log_v: f64,
    pub k: u64,
}

// exp(scale * x) with the convention inf * 0 = 0.
#[inline]
fn exponent(scale: f64, x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        scale * x
    }
}

/// Runs the paired product estimator on `schedule` with `k` samples per side
/// of every pair. All `2k (len(B) - 1)` draws form a single round.
pub fn ppe(session: &mut OracleSession<'_>, schedule: &Schedule, k: u64) -> Result<PpeOutcome> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let count = usize::try_from(k).map_err(|_| Error::InvalidParameter {
        name: "k",
        value: k as f64,
        reason: "does not fit in memory on this platform",
    })?;
    let pairs: Vec<(Beta, Beta)> = schedule.pairs().collect();
    let mut req = BatchRequest::new();
    for (i, &(lo, hi)) in pairs.iter().enumerate() {
        req.push_keyed(lo, count, i as u64, 0);
        req.push_keyed(hi, count, i as u64, 1);
    }
    let log_k = (k as f64).ln();
    let log_means = session.execute_batch_map(&req, phase::PPE, |j, xs| {
        let (lo, hi) = pairs[j / 2];
        // +inf when lo = -inf.
        let half_gap = 0.5 * (hi.get() - lo.get());
        let scale = if j % 2 == 0 { half_gap } else { -half_gap };
        let exps: Vec<f64> = xs.iter().map(|&x| exponent(scale, x)).collect();
        log_sum_exp(&exps) - log_k
    })?;

    let (mut log_u, mut log_v) = (0.0, 0.0);
    for (i, lm) in log_means.chunks_exact(2).enumerate() {
        if lm[0] == f64::INFINITY {
            return Err(Error::DegenerateEstimate {
                pair: i,
                reason: "U_i is infinite",
            });
        }
        if lm[1] == f64::NEG_INFINITY {
            return Err(Error::DegenerateEstimate {
                pair: i,
                reason: "V_i = 0: no sample hit x = 0 across an infinite gap",
            });
        }
        log_u += lm[0];
        log_v += lm[1];
    }
    Ok(PpeOutcome {
        log_q_hat: log_u - log_v,
        log_u,
        log_v,
        k,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairMoments {
    /// `log E[U_i] = z(b_i, m_i)`.
    pub log_mean_u: f64,
    /// `log E[V_i] = -z(m_i, b_{i+1})`.
    pub log_mean_v: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PpeMoments {
    pub pairs: Vec<PairMoments>,
    /// `-1 + prod(1 + (e^{kappa_i} - 1) / k)`.
    pub relative_variance: f64,
    /// `(e^{kappa(B)} - 1) / k`, which dominates `relative_variance`.
    pub relative_variance_bound: f64,
    /// `sum(log E[U_i] - log E[V_i])`, equal to `log Q`.
    pub telescoped_log_q: f64,
}

/// Exact per-pair moments and relative variance of the PPE on a known model.
pub fn ppe_exact_moments(model: &GrossModel, schedule: &Schedule, k: u64) -> Result<PpeMoments> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            name: "k",
            value: 0.0,
            reason: "must be at least 1",
        });
    }
    let kf = k as f64;
    let pairs = schedule
        .pairs()
        .map(|(lo, hi)| {
            let mid = lo.midpoint(hi);
            Ok(PairMoments {
                log_mean_u: model.log_ratio(lo, mid)?,
                log_mean_v: -model.log_ratio(mid, hi)?,
                kappa: model.curvature(lo, hi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let log_growth: f64 = pairs.iter().map(|p| (p.kappa.exp_m1() / kf).ln_1p()).sum();
    let total_kappa: f64 = pairs.iter().map(|p| p.kappa).sum();
    Ok(PpeMoments {
        relative_variance: log_growth.exp_m1(),
        relative_variance_bound: total_kappa.exp_m1() / kf,
        telescoped_log_q: pairs.iter().map(|p| p.log_mean_u - p.log_mean_v).sum(),
        pairs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineKind {
    /// Static schedule + PPE: one round.
    Nonadaptive,
    /// PseudoTPA + PPE: three rounds.
    ThreeRound,
    /// TPA(k) + PPE: sequential baseline.
    TpaBaseline,
    /// PPE on a static schedule with caller-chosen parameters.
    PpeOnly,
}

impl PipelineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Nonadaptive => "nonadaptive",
            PipelineKind::ThreeRound => "three-round",
            PipelineKind::TpaBaseline => "tpa-baseline",
            PipelineKind::PpeOnly => "ppe-only",
        }
    }
}

/// How the curvature fed into the sample size is obtained.
#[derive(Clone, Copy, Debug)]
pub enum KappaPolicy<'a> {
    /// A fixed cap, as in the black-box pipelines.
    Cap(f64),
    /// The exact `kappa(B)` of each generated schedule; needs the model.
    Exact(&'a GrossModel),
}

#[derive(Clone, Copy, Debug)]
pub enum SampleSize<'a> {
    Fixed(u64),
    FromKappa {
        epsilon: f64,
        kappa: KappaPolicy<'a>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scheduler {
    Static { theta: f64 },
    PseudoTpa { theta: f64 },
    Tpa { runs: usize },
}

#[derive(Clone, Copy, Debug)]
pub struct Pipeline<'a> {
    pub kind: PipelineKind,
    pub scheduler: Scheduler,
    pub sample_size: SampleSize<'a>,
}

impl<'a> Pipeline<'a> {
    /// Static schedule with `theta = 1/(4 ln n)`, PPE with curvature cap 3.
    pub fn nonadaptive(spec: &ProblemSpec, epsilon: f64) -> Self {
        Pipeline {
            kind: PipelineKind::Nonadaptive,
            scheduler: Scheduler::Static {
                theta: default_theta(spec.n()),
            },
            sample_size: SampleSize::FromKappa {
                epsilon,
                kappa: KappaPolicy::Cap(NONADAPTIVE_KAPPA),
            },
        }
    }

    /// PseudoTPA with `theta = 1/(4 ln n)`, then PPE.
    pub fn three_round(spec: &ProblemSpec, epsilon: f64, kappa: KappaPolicy<'a>) -> Self {
        Pipeline {
            kind: PipelineKind::ThreeRound,
            scheduler: Scheduler::PseudoTpa {
                theta: default_theta(spec.n()),
            },
            sample_size: SampleSize::FromKappa { epsilon, kappa },
        }
    }

    /// TPA(k) with `k = ceil(8 ln n)`, so the expected width is `1/(4 ln n)`.
    pub fn tpa_baseline(spec: &ProblemSpec, epsilon: f64, kappa: KappaPolicy<'a>) -> Self {
        Pipeline {
            kind: PipelineKind::TpaBaseline,
            scheduler: Scheduler::Tpa {
                runs: (2.0 / default_theta(spec.n())).ceil() as usize,
            },
            sample_size: SampleSize::FromKappa { epsilon, kappa },
        }
    }

    pub fn ppe_only(theta: f64, sample_size: SampleSize<'a>) -> Self {
        Pipeline {
            kind: PipelineKind::PpeOnly,
            scheduler: Scheduler::Static { theta },
            sample_size,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self.sample_size {
            SampleSize::FromKappa { epsilon, .. } => Some(epsilon),
            SampleSize::Fixed(_) => None,
        }
    }

    /// Rejects bad parameters before any sample is drawn.
    pub fn validate(&self) -> Result<()> {
        match self.scheduler {
            Scheduler::Static { theta } | Scheduler::PseudoTpa { theta } => {
                PseudoTpaConfig::new(theta)?;
            }
            Scheduler::Tpa { runs: 0 } => {
                return Err(Error::InvalidParameter {
                    name: "tpa_runs",
                    value: 0.0,
                    reason: "must be at least 1",
                })
            }
            Scheduler::Tpa { .. } => {}
        }
        match self.sample_size {
            SampleSize::Fixed(0) => Err(Error::InvalidParameter {
                name: "k",
                value: 0.0,
                reason: "must be at least 1",
            }),
            SampleSize::Fixed(_) => Ok(()),
            SampleSize::FromKappa { epsilon, kappa } => {
                let probe = match kappa {
                    KappaPolicy::Cap(cap) if cap.is_nan() || cap < 0.0 => {
                        return Err(Error::InvalidParameter {
                            name: "kappa_cap",
                            value: cap,
                            reason: "must be a nonnegative real",
                        })
                    }
                    KappaPolicy::Cap(cap) => cap,
                    KappaPolicy::Exact(_) => 0.0,
                };
                let k = ppe_sample_size(probe, epsilon)?;
                if k > MAX_ITEM_SAMPLES {
                    return Err(Error::SampleBudget {
                        requested: k,
                        limit: MAX_ITEM_SAMPLES,
                        scope: "per inverse temperature for this kappa cap",
                    });
                }
                Ok(())
            }
        }
    }

    /// Runs the pipeline once against a fresh oracle session.
    pub fn run(&self, spec: &ProblemSpec, oracle: &dyn SampleOracle, seed: u64) -> Result<EstimateReport> {
        self.validate()?;
        let mut session = OracleSession::new(oracle, *spec, seed);
        let (schedule, theta, tpa_runs) = match self.scheduler {
            Scheduler::Static { theta } => (static_schedule(spec, theta)?, Some(theta), None),
            Scheduler::PseudoTpa { theta } => {
                let config = PseudoTpaConfig::new(theta)?;
                (pseudo_tpa(&mut session, &config)?.schedule, Some(theta), None)
            }
            Scheduler::Tpa { runs } => (tpa_union(&mut session, runs)?, None, Some(runs)),
        };
        let (k, kappa_cap) = match self.sample_size {
            SampleSize::Fixed(k) => (k, None),
            SampleSize::FromKappa { epsilon, kappa } => {
                let cap = match kappa {
                    KappaPolicy::Cap(cap) => cap,
                    KappaPolicy::Exact(model) => model.schedule_stats(&schedule)?.curvature,
                };
                (ppe_sample_size(cap, epsilon)?, Some(cap))
            }
        };
        let outcome = ppe(&mut session, &schedule, k)?;
        Ok(EstimateReport {
            pipeline: self.kind,
            log_q_hat: outcome.log_q_hat,
            schedule_len: schedule.len(),
            schedule,
            stats: session.into_stats(),
            params: ReportParams {
                theta,
                epsilon: self.epsilon(),
                k,
                kappa_cap,
                tpa_runs,
                seed,
            },
            exact_log_q: None,
            abs_err: None,
            replicas: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportParams {
    pub theta: Option<f64>,
    pub epsilon: Option<f64>,
    pub k: u64,
    /// The curvature the sample size was computed from.
    pub kappa_cap: Option<f64>,
    pub tpa_runs: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaSummary {
    pub count: usize,
    pub failed: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub pipeline: PipelineKind,
    pub log_q_hat: f64,
    pub schedule_len: usize,
    pub schedule: Schedule,
    pub stats: OracleStats,
    pub params: ReportParams,
    pub exact_log_q: Option<f64>,
    pub abs_err: Option<f64>,
    pub replicas: Option<ReplicaSummary>,
}

impl EstimateReport {
    /// Attaches the exact `log Q` and the absolute error of the estimate.
    pub fn with_exact(mut self, model: &GrossModel, spec: &ProblemSpec) -> Result<Self> {
        let exact = model.exact_log_q(spec)?;
        self.exact_log_q = Some(exact);
        self.abs_err = Some((self.log_q_hat - exact).abs());
        Ok(self)
    }
}

/// One-round estimator: static schedule plus PPE with curvature cap 3.
pub fn estimate_nonadaptive(
    spec: &ProblemSpec,
    oracle: &dyn SampleOracle,
    epsilon: f64,
    seed: u64,
) -> Result<EstimateReport> {
    Pipeline::nonadaptive(spec, epsilon).run(spec, oracle, seed)
}

/// Three-round estimator: two PseudoTPA rounds plus one PPE round.
pub fn estimate_three_round(
    spec: &ProblemSpec,
    oracle: &dyn SampleOracle,
    epsilon: f64,
    kappa: KappaPolicy<'_>,
    seed: u64,
) -> Result<EstimateReport> {
    Pipeline::three_round(spec, epsilon, kappa).run(spec, oracle, seed)
}

/// Replica count `ceil(18 ln(1/delta))` for median boosting.
pub fn boost_replicas(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            value: delta,
            reason: "must lie in (0, 1)",
        });
    }
    Ok(((18.0 * (1.0 / delta).ln()).ceil() as usize).max(1))
}

/// Runs independent replicas of `pipeline` and reports the median estimate.
///
/// Failed replicas are excluded from the median and counted in the summary.
pub fn median_boost(
    pipeline: &Pipeline<'_>,
    spec: &ProblemSpec,
    oracle: &dyn SampleOracle,
    delta: f64,
    seed: u64,
) -> Result<EstimateReport> {
    let m = boost_replicas(delta)?;
    pipeline.validate()?;
    let runs: Vec<Result<EstimateReport>> = (0..m as u64)
        .into_par_iter()
        .map(|r| pipeline.run(spec, oracle, derive_seed(seed, phase::REPLICA, r)))
        .collect();

    let mut stats = OracleStats::default();
    let mut ok: Vec<EstimateReport> = Vec::with_capacity(m);
    for report in runs.into_iter().flatten() {
        stats.merge_parallel(&report.stats);
        ok.push(report);
    }
    if ok.is_empty() {
        return Err(Error::AllReplicasFailed(m));
    }
    let values: Vec<f64> = ok.iter().map(|r| r.log_q_hat).collect();
    let mut order: Vec<usize> = (0..ok.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let lower = order[(ok.len() - 1) / 2];
    let upper = order[ok.len() / 2];
    let median = 0.5 * (values[lower] + values[upper]);

    let mut report = ok.swap_remove(lower);
    report.log_q_hat = median;
    report.stats = stats;
    report.params.seed = seed;
    report.replicas = Some(ReplicaSummary {
        count: m,
        failed: m - values.len(),
        values,
    });
    Ok(report)
}
