//! Exact and Monte-Carlo checks of the estimator's guarantees.
//!
//! Every check reports what it observed and the bound it was held to.
//! Statistical checks fold a `3 * SE` slack into the bound and report the
//! standard error and trial count alongside.

use rayon::prelude::*;
use serde::Serialize;

use crate::beta::{Beta, ProblemSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    default_theta, median_boost, ppe, ppe_exact_moments, ppe_sample_size, KappaPolicy, Pipeline,
};
use crate::fixtures::{self, Fixture};
use crate::gibbs::{GrossModel, EXACT_TOLERANCE};
use crate::oracle::{derive_seed, phase, ExactSampler, OracleSession, SampleOracle, TvPerturbed};
use crate::schedule::Schedule;
use crate::schedules::{pseudo_tpa, static_schedule, static_schedule_trace, tpa_run, tpa_union, PseudoTpaConfig};

/// Number of standard errors of slack granted to statistical checks.
pub const SE_SLACK: f64 = 3.0;
/// Asymptotic Kolmogorov-Smirnov critical value at significance 0.01.
pub const KS_CRITICAL_001: f64 = 1.628;
pub const KS_MIN_SAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    Exact,
    Statistical,
}

/// Direction of the comparison between `observed` and `bound`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub passed: bool,
    pub observed: f64,
    pub relation: Relation,
    pub bound: f64,
    pub std_err: Option<f64>,
    pub trials: Option<usize>,
}

impl CheckResult {
    pub fn exact(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        CheckResult {
            name: name.into(),
            kind: CheckKind::Exact,
            passed: observed <= bound,
            observed,
            relation: Relation::AtMost,
            bound,
            std_err: None,
            trials: None,
        }
    }

    pub fn statistical(
        name: impl Into<String>,
        observed: f64,
        relation: Relation,
        bound: f64,
        std_err: f64,
        trials: usize,
    ) -> Self {
        let passed = match relation {
            Relation::AtMost => observed <= bound,
            Relation::AtLeast => observed >= bound,
        };
        CheckResult {
            name: name.into(),
            kind: CheckKind::Statistical,
            passed,
            observed,
            relation,
            bound,
            std_err: Some(std_err),
            trials: Some(trials),
        }
    }
}

/// Sample mean and its standard error.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn proportion_se(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Runs `trials` independent jobs, each with its own derived seed, and
/// returns their results in trial order.
pub fn par_trials<T, F>(trials: usize, seed: u64, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..trials as u64)
        .into_par_iter()
        .map(|t| job(derive_seed(seed, phase::TRIAL, t)))
        .collect()
}

/// One-sample Kolmogorov-Smirnov test against the unit exponential.
pub fn ks_exponential(samples: &[f64]) -> Result<CheckResult> {
    if samples.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            need: KS_MIN_SAMPLES,
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let stat = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = -(-x.max(0.0)).exp_m1();
            let above = (i + 1) as f64 / n - cdf;
            let below = cdf - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max);
    let scale = 1.0 / n.sqrt();
    Ok(CheckResult::statistical(
        "ks_exponential",
        stat,
        Relation::AtMost,
        KS_CRITICAL_001 * scale,
        scale,
        sorted.len(),
    ))
}

/// A 20-point grid reaching well below `beta_min` (where `z' <= 1/2`) and
/// slightly above `beta_max`.
pub fn analytics_grid(spec: &ProblemSpec) -> Vec<f64> {
    let lo = if spec.beta_min().is_finite() {
        spec.beta_min().get() - 6.0
    } else {
        spec.beta_max() - 12.0
    };
    let hi = spec.beta_max() + 1.0;
    (0..20).map(|i| lo + (hi - lo) * i as f64 / 19.0).collect()
}

fn fb(v: f64) -> Beta {
    Beta::finite(v).expect("grid points are finite")
}

/// Exact identities of `z`: the moment generating function identity, the
/// monotonicity of `z'`, `z'' >= 0`, the zero-atom bound, the curvature bound
/// and nonnegativity, and telescoping of schedule gaps.
pub fn check_analytics(model: &GrossModel, spec: &ProblemSpec) -> Result<Vec<CheckResult>> {
    let grid = analytics_grid(spec);
    let z: Vec<f64> = grid.iter().map(|&b| model.log_partition(fb(b))).collect::<Result<_>>()?;
    let mean: Vec<f64> = grid.iter().map(|&b| model.mean_energy(fb(b))).collect::<Result<_>>()?;

    // log E_beta[e^{alpha X}] by direct summation vs z(alpha + beta) - z(beta).
    let mut mgf_err: f64 = 0.0;
    for &beta in &grid {
        let probs: Vec<f64> = model.log_probabilities(fb(beta))?.into_iter().map(f64::exp).collect();
        for &alpha in &grid {
            let direct: f64 = model
                .atoms()
                .iter()
                .zip(&probs)
                .map(|(a, p)| p * (alpha * a.x).exp())
                .sum::<f64>()
                .ln();
            let closed = model.log_partition(fb(alpha + beta))? - model.log_partition(fb(beta))?;
            mgf_err = mgf_err.max((direct - closed).abs());
        }
    }

    let monotone = mean.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let mut neg_var: f64 = 0.0;
    for &b in &grid {
        neg_var = neg_var.max(-model.variance_energy(fb(b))?);
    }

    let mut zero_atom: f64 = 0.0;
    if model.c0() > 0.0 {
        let z_neg_inf = model.log_partition(Beta::NEG_INF)?;
        for (zb, &m) in z.iter().zip(&mean) {
            if m <= 0.5 {
                zero_atom = zero_atom.max(zb - z_neg_inf - 2.0 * m);
            }
        }
    }

    let (mut prop7, mut neg_kappa): (f64, f64) = (0.0, 0.0);
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let kappa = model.curvature(fb(grid[i]), fb(grid[j]))?;
            neg_kappa = neg_kappa.max(-kappa);
            if mean[i] > 0.0 {
                let gap = z[j] - z[i];
                let factor = (mean[j] / mean[i]).ln().min(1.0);
                prop7 = prop7.max(kappa - gap * factor);
            }
        }
    }

    let exact = model.exact_log_q(spec)?;
    let mut telescoping: f64 = 0.0;
    for theta in [1.0, 0.5, 0.1] {
        let stats = model.schedule_stats(&static_schedule(spec, theta)?)?;
        let total: f64 = stats.per_pair.iter().map(|p| p.gap).sum();
        telescoping = telescoping.max((total - exact).abs());
    }

    Ok(vec![
        CheckResult::exact("mgf_identity", mgf_err, EXACT_TOLERANCE),
        CheckResult::exact("mean_energy_monotone", monotone, EXACT_TOLERANCE),
        CheckResult::exact("variance_nonnegative", neg_var, 0.0),
        CheckResult::exact("zero_atom_bound", zero_atom, EXACT_TOLERANCE),
        CheckResult::exact("curvature_bound", prop7, EXACT_TOLERANCE),
        CheckResult::exact("curvature_nonnegative", neg_kappa, 1e-12),
        CheckResult::exact("gap_telescoping", telescoping, EXACT_TOLERANCE),
    ])
}

/// Max-width, curvature and telescoping checks for an arbitrary schedule that
/// claims max-width `theta`.
pub fn check_schedule_bounds(
    model: &GrossModel,
    spec: &ProblemSpec,
    schedule: &Schedule,
    theta: f64,
) -> Result<Vec<CheckResult>> {
    let stats = model.schedule_stats(schedule)?;
    let delta = stats.max_width;
    let mut out = vec![CheckResult::exact(
        format!("max_width[theta={theta}]"),
        delta,
        theta + EXACT_TOLERANCE,
    )];
    // The curvature bound only applies to schedules with max-width <= 1.
    if delta <= 1.0 {
        let bound = if delta > 0.0 {
            4.0 * delta * (spec.n() / delta).ln()
        } else {
            0.0
        };
        out.push(CheckResult::exact(
            format!("curvature_vs_width[theta={theta}]"),
            stats.curvature,
            bound + EXACT_TOLERANCE,
        ));
    }
    if schedule.first() == spec.beta_min() && schedule.last() == spec.beta_max_beta() {
        let total: f64 = stats.per_pair.iter().map(|p| p.gap).sum();
        out.push(CheckResult::exact(
            format!("gap_telescoping[theta={theta}]"),
            (total - model.exact_log_q(spec)?).abs(),
            EXACT_TOLERANCE,
        ));
    }
    Ok(out)
}

/// `len(B) <= 2 + q/theta + (1 + q/theta) ln(2n/theta)`.
pub fn static_length_bound(spec: &ProblemSpec, theta: f64) -> f64 {
    let r = spec.q() / theta;
    2.0 + r + (1.0 + r) * (2.0 * spec.n() / theta).ln()
}

/// Exact checks of the static schedule for one `theta`.
pub fn check_static_suite(model: &GrossModel, spec: &ProblemSpec, theta: f64) -> Result<Vec<CheckResult>> {
    let trace = static_schedule_trace(spec, theta)?;
    let mut slope_excess = f64::NEG_INFINITY;
    for (&b, &s) in trace.iterates.iter().zip(&trace.bounds) {
        slope_excess = slope_excess.max(model.mean_energy(fb(b))? - s);
    }
    let mut out = vec![CheckResult::exact(
        format!("slope_bound[theta={theta}]"),
        slope_excess,
        EXACT_TOLERANCE,
    )];
    out.extend(check_schedule_bounds(model, spec, &trace.schedule, theta)?);
    out.push(CheckResult::exact(
        format!("static_length[theta={theta}]"),
        trace.schedule.len() as f64,
        static_length_bound(spec, theta),
    ));
    Ok(out)
}

/// `z(b_{t-1}, beta_max)` of one TPA run: the first step below `beta_max`.
/// With `beta_min = -inf` this is exactly unit exponential (clipped at
/// `z(-inf, beta_max)`).
pub fn tpa_leading_gaps(
    oracle: &dyn SampleOracle,
    model: &GrossModel,
    spec: &ProblemSpec,
    runs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    par_trials(runs, seed, |s| {
        let mut session = OracleSession::new(oracle, *spec, s);
        let schedule = tpa_run(&mut session, 0)?;
        let betas = schedule.betas();
        model.log_ratio(betas[betas.len() - 2], betas[betas.len() - 1])
    })
    .into_iter()
    .collect()
}

/// Point-process checks of TPA: unit-exponential leading gaps and the
/// expected interior count `k log Q` of TPA(k).
pub fn check_tpa(
    model: &GrossModel,
    gap_spec: &ProblemSpec,
    spec: &ProblemSpec,
    gap_runs: usize,
    k: usize,
    union_runs: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let oracle = ExactSampler::new(model.clone());
    let gaps = tpa_leading_gaps(&oracle, model, gap_spec, gap_runs, derive_seed(seed, phase::TEST, 0))?;
    let mut out = vec![ks_exponential(&gaps)?];

    let lens = par_trials(union_runs, derive_seed(seed, phase::TEST, 1), |s| {
        let mut session = OracleSession::new(&oracle, *spec, s);
        tpa_union(&mut session, k).map(|b| b.len() as f64)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let interior: Vec<f64> = lens.iter().map(|l| l - 2.0).collect();
    let exact = model.exact_log_q(spec)?;
    let (mean, se) = mean_and_se(&interior);
    out.push(CheckResult::statistical(
        format!("tpa_union_interior_count[k={k}]"),
        (mean - k as f64 * exact).abs(),
        Relation::AtMost,
        SE_SLACK * se,
        se,
        union_runs,
    ));
    let (mean_len, se_len) = mean_and_se(&lens);
    out.push(CheckResult::statistical(
        format!("tpa_union_length[k={k}]"),
        mean_len,
        Relation::AtMost,
        k as f64 * exact + 2.0 + SE_SLACK * se_len,
        se_len,
        union_runs,
    ));
    Ok(out)
}

/// 20 evenly spaced points strictly inside the problem box.
pub fn interior_grid(spec: &ProblemSpec, grid: &Schedule) -> Vec<f64> {
    let hi = spec.beta_max();
    let lo = if spec.beta_min().is_finite() {
        spec.beta_min().get()
    } else {
        grid.betas()[1].get() - 1.0
    };
    (0..20).map(|j| lo + (hi - lo) * (j as f64 + 0.5) / 20.0).collect()
}

/// Monte-Carlo checks of PseudoTPA: per-point inclusion probabilities, the
/// expected size of `B'`, the tail of `w+(B', x)`, the expected width of the
/// final schedule, and the two-round sample accounting.
pub fn mc_pseudo_tpa_suite(
    model: &GrossModel,
    spec: &ProblemSpec,
    theta: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let config = PseudoTpaConfig::new(theta)?;
    let oracle = ExactSampler::new(model.clone());
    let runs = par_trials(trials, seed, |s| {
        let mut session = OracleSession::new(&oracle, *spec, s);
        let outcome = pseudo_tpa(&mut session, &config)?;
        Ok((outcome, session.into_stats()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let grid = static_schedule(spec, config.grid_theta)?;
    let betas = grid.betas();
    let d = config.inclusion_samples as f64;
    let n = trials as f64;
    let mut out = Vec::new();

    for i in 1..betas.len() - 1 {
        let p = -(-d * model.log_ratio(betas[i], betas[i + 1])?).exp_m1();
        let hits = runs.iter().filter(|(o, _)| o.kept.betas().contains(&betas[i])).count();
        let se = proportion_se(p, trials);
        out.push(CheckResult::statistical(
            format!("inclusion_probability[i={i}]"),
            (hits as f64 / n - p).abs(),
            Relation::AtMost,
            SE_SLACK * se,
            se,
            trials,
        ));
    }

    let kept_lens: Vec<f64> = runs.iter().map(|(o, _)| o.kept.len() as f64).collect();
    let (mean, se) = mean_and_se(&kept_lens);
    out.push(CheckResult::statistical(
        "kept_length",
        mean,
        Relation::AtMost,
        d * spec.q() + 2.0 + SE_SLACK * se,
        se,
        trials,
    ));

    let xs = interior_grid(spec, &grid);
    for s in [0.5, 1.0] {
        for &x in &xs {
            let base = model.widths(&grid, x)?.plus;
            let mut exceed = 0usize;
            for (o, _) in &runs {
                if model.widths(&o.kept, x)?.plus - base > s {
                    exceed += 1;
                }
            }
            let f = exceed as f64 / n;
            let se = proportion_se(f, trials);
            out.push(CheckResult::statistical(
                format!("kept_width_tail[s={s},x={x:.4}]"),
                f,
                Relation::AtMost,
                (-d * s).exp() + SE_SLACK * se,
                se,
                trials,
            ));
        }
    }

    for &x in &xs {
        let widths = runs
            .iter()
            .map(|(o, _)| model.widths(&o.schedule, x).map(|w| w.total))
            .collect::<Result<Vec<f64>>>()?;
        let (mean, se) = mean_and_se(&widths);
        out.push(CheckResult::statistical(
            format!("final_width[x={x:.4}]"),
            mean,
            Relation::AtMost,
            theta + SE_SLACK * se,
            se,
            trials,
        ));
    }

    let k = config.refinement_count() as u64;
    let bad_rounds = runs.iter().filter(|(_, st)| st.rounds != 2).count();
    let bad_accounting = runs
        .iter()
        .filter(|(o, st)| {
            o.round1_samples != config.inclusion_samples as u64 * (o.grid.len() as u64 - 2)
                || o.round2_samples != k * o.kept.len() as u64
                || st.total_samples != o.round1_samples + o.round2_samples
        })
        .count();
    out.push(CheckResult::exact("two_rounds", bad_rounds as f64, 0.0));
    out.push(CheckResult::exact("sample_accounting", bad_accounting as f64, 0.0));
    Ok(out)
}

/// Fraction of trials with `|log Q̂ - log Q| <= epsilon`. Errors count as
/// failures. Returns the fraction and the per-trial outcomes.
pub fn success_rate(
    pipeline: &Pipeline<'_>,
    oracle: &dyn SampleOracle,
    model: &GrossModel,
    spec: &ProblemSpec,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<(f64, Vec<Result<crate::EstimateReport>>)> {
    let exact = model.exact_log_q(spec)?;
    let reports = par_trials(trials, seed, |s| pipeline.run(spec, oracle, s));
    let ok = reports
        .iter()
        .filter(|r| matches!(r, Ok(r) if (r.log_q_hat - exact).abs() <= epsilon))
        .count();
    Ok((ok as f64 / trials as f64, reports))
}

/// Success frequency of a pipeline against a target probability, with
/// `3 * SE` slack below the target.
#[allow(clippy::too_many_arguments)]
pub fn mc_estimator_success(
    name: &str,
    pipeline: &Pipeline<'_>,
    oracle: &dyn SampleOracle,
    model: &GrossModel,
    spec: &ProblemSpec,
    epsilon: f64,
    trials: usize,
    seed: u64,
    target: f64,
) -> Result<CheckResult> {
    let (rate, _) = success_rate(pipeline, oracle, model, spec, epsilon, trials, seed)?;
    let se = proportion_se(target, trials);
    Ok(CheckResult::statistical(
        name,
        rate,
        Relation::AtLeast,
        target - SE_SLACK * se,
        se,
        trials,
    ))
}

/// PPE checks on a static schedule with `k` sized from the exact curvature:
/// success frequency, the relative variance of `U` against its closed form,
/// and the exact moment identities.
pub fn check_ppe(
    model: &GrossModel,
    spec: &ProblemSpec,
    theta: f64,
    epsilon: f64,
    trials: usize,
    variance_runs: usize,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let schedule = static_schedule(spec, theta)?;
    let kappa = model.schedule_stats(&schedule)?.curvature;
    let k = ppe_sample_size(kappa, epsilon)?;
    let moments = ppe_exact_moments(model, &schedule, k)?;
    let exact = model.exact_log_q(spec)?;
    let oracle = ExactSampler::new(model.clone());

    let outcomes = par_trials(trials.max(variance_runs), seed, |s| {
        let mut session = OracleSession::new(&oracle, *spec, s);
        ppe(&mut session, &schedule, k)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let hits = outcomes[..trials]
        .iter()
        .filter(|o| (o.log_q_hat - exact).abs() <= epsilon)
        .count();
    let mut out = vec![CheckResult::statistical(
        format!("ppe_success[k={k}]"),
        hits as f64 / trials as f64,
        Relation::AtLeast,
        0.78,
        proportion_se(0.8, trials),
        trials,
    )];

    let log_mean_u: f64 = moments.pairs.iter().map(|p| p.log_mean_u).sum();
    let sq_dev: Vec<f64> = outcomes[..variance_runs]
        .iter()
        .map(|o| (o.log_u - log_mean_u).exp_m1().powi(2))
        .collect();
    let (rel_var, se) = mean_and_se(&sq_dev);
    out.push(CheckResult::statistical(
        "relative_variance_of_u",
        (rel_var - moments.relative_variance).abs(),
        Relation::AtMost,
        SE_SLACK * se,
        se,
        variance_runs,
    ));
    out.push(CheckResult::exact(
        "moment_telescoping",
        (moments.telescoped_log_q - exact).abs(),
        EXACT_TOLERANCE,
    ));
    out.push(CheckResult::exact(
        "relative_variance_concavity",
        moments.relative_variance - moments.relative_variance_bound,
        1e-12,
    ));
    Ok(out)
}

/// Every pipeline must reproduce `log Q` on models whose samples are constant.
pub fn check_zero_variance(fixture: &Fixture, seed: u64) -> Result<Vec<CheckResult>> {
    let (model, spec) = (&fixture.model, &fixture.spec);
    let oracle = ExactSampler::new(model.clone());
    let exact = model.exact_log_q(spec)?;
    let epsilon = 0.2;
    let pipelines = [
        Pipeline::nonadaptive(spec, epsilon),
        Pipeline::three_round(spec, epsilon, KappaPolicy::Cap(1.0)),
        Pipeline::tpa_baseline(spec, epsilon, KappaPolicy::Cap(1.0)),
        Pipeline::ppe_only(0.5, crate::SampleSize::Fixed(3)),
    ];
    let mut out = Vec::new();
    for p in &pipelines {
        let r = p.run(spec, &oracle, seed)?;
        out.push(CheckResult::exact(
            format!("zero_variance[{},{}]", fixture.name, p.kind.as_str()),
            (r.log_q_hat - exact).abs(),
            EXACT_TOLERANCE,
        ));
    }
    Ok(out)
}

/// Markov step of the three-round analysis: `P[kappa(B) <= 10 E[kappa(B)]]`.
pub fn check_curvature_markov(
    model: &GrossModel,
    spec: &ProblemSpec,
    draws: usize,
    seed: u64,
) -> Result<CheckResult> {
    let config = PseudoTpaConfig::new(default_theta(spec.n()))?;
    let oracle = ExactSampler::new(model.clone());
    let kappas = par_trials(draws, seed, |s| {
        let mut session = OracleSession::new(&oracle, *spec, s);
        let b = pseudo_tpa(&mut session, &config)?.schedule;
        Ok(model.schedule_stats(&b)?.curvature)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (mean, _) = mean_and_se(&kappas);
    let frac = kappas.iter().filter(|&&k| k <= 10.0 * mean).count() as f64 / draws as f64;
    let se = proportion_se(0.9, draws);
    Ok(CheckResult::statistical(
        "curvature_markov",
        frac,
        Relation::AtLeast,
        0.9 - SE_SLACK * se,
        se,
        draws,
    ))
}

/// Fraction of rounds/accounting violations over a batch of reports.
fn round_check(name: &str, reports: &[Result<crate::EstimateReport>], rounds: u64) -> CheckResult {
    let bad = reports
        .iter()
        .filter(|r| match r {
            Ok(r) => {
                r.stats.rounds != rounds
                    || r.stats.total_samples
                        < 2 * r.params.k * (r.schedule_len as u64 - 1)
            }
            Err(_) => false,
        })
        .count();
    CheckResult::exact(name, bad as f64, 0.0)
}

/// Trial counts and tolerances of the bundled suites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub tpa_gap_runs: usize,
    pub tpa_union_runs: usize,
    pub tpa_union_k: usize,
    pub pseudo_trials: usize,
    pub pseudo_theta: f64,
    pub ppe_theta: f64,
    pub ppe_epsilon: f64,
    pub ppe_trials: usize,
    pub ppe_variance_runs: usize,
    pub nonadaptive_epsilon: f64,
    pub nonadaptive_trials: usize,
    pub three_round_epsilon: f64,
    pub three_round_trials: usize,
    pub markov_draws: usize,
    pub boost_delta: f64,
    pub boost_runs: usize,
    pub tv_delta: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            tpa_gap_runs: 10_000,
            tpa_union_runs: 1_000,
            tpa_union_k: 8,
            pseudo_trials: 2_000,
            pseudo_theta: 0.25,
            ppe_theta: 0.5,
            ppe_epsilon: 0.2,
            ppe_trials: 500,
            ppe_variance_runs: 1_000,
            nonadaptive_epsilon: 0.25,
            nonadaptive_trials: 200,
            three_round_epsilon: 0.2,
            three_round_trials: 500,
            markov_draws: 1_000,
            boost_delta: 0.05,
            boost_runs: 200,
            tv_delta: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Static,
    Tpa,
    PseudoTpa,
    Ppe,
    EndToEnd,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Static, Suite::Tpa, Suite::PseudoTpa, Suite::Ppe, Suite::EndToEnd];
}

fn fixture(name: &str) -> Fixture {
    fixtures::get(name).expect("bundled fixture")
}

/// The binomial fixture with `beta_min = -inf`, where leading TPA gaps are
/// unit exponential up to a clip at `z(-inf, 1) ≈ 10.5`.
pub fn binomial_gap_spec() -> ProblemSpec {
    let fx = fixture("binomial");
    ProblemSpec::new(Beta::NEG_INF, fx.spec.beta_max(), fx.spec.n(), 11.0).expect("valid spec")
}

/// The seed a suite derives from the caller's seed.
pub fn suite_seed(suite: Suite, seed: u64) -> u64 {
    derive_seed(seed, phase::TEST, suite as u64)
}

/// Runs one bundled suite on the shipped fixtures.
pub fn run_suite(suite: Suite, config: &SuiteConfig, seed: u64) -> Result<Vec<CheckResult>> {
    let seed = suite_seed(suite, seed);
    let mut out = Vec::new();
    match suite {
        Suite::Static => {
            for fx in fixtures::all() {
                for mut c in check_analytics(&fx.model, &fx.spec)? {
                    c.name = format!("{}:{}", fx.name, c.name);
                    out.push(c);
                }
                for theta in [1.0, 0.5, 0.1] {
                    for mut c in check_static_suite(&fx.model, &fx.spec, theta)? {
                        c.name = format!("{}:{}", fx.name, c.name);
                        out.push(c);
                    }
                }
            }
        }
        Suite::Tpa => {
            let fx = fixture("binomial");
            out.extend(check_tpa(
                &fx.model,
                &binomial_gap_spec(),
                &fx.spec,
                config.tpa_gap_runs,
                config.tpa_union_k,
                config.tpa_union_runs,
                seed,
            )?);
        }
        Suite::PseudoTpa => {
            let fx = fixture("three");
            out.extend(mc_pseudo_tpa_suite(
                &fx.model,
                &fx.spec,
                config.pseudo_theta,
                config.pseudo_trials,
                seed,
            )?);
        }
        Suite::Ppe => {
            let fx = fixture("three");
            out.extend(check_ppe(
                &fx.model,
                &fx.spec,
                config.ppe_theta,
                config.ppe_epsilon,
                config.ppe_trials,
                config.ppe_variance_runs,
                seed,
            )?);
            for name in ["zero", "single"] {
                out.extend(check_zero_variance(&fixture(name), seed)?);
            }
        }
        Suite::EndToEnd => {
            out.extend(check_end_to_end(config, seed)?);
            out.push(check_boost(config, seed)?);
        }
    }
    Ok(out)
}

/// Headline pipelines on the binomial fixture: one-round success and round
/// count, robustness to a small TV perturbation, three-round success and
/// round count, and the curvature Markov step.
pub fn check_end_to_end(config: &SuiteConfig, seed: u64) -> Result<Vec<CheckResult>> {
    let fx = fixture("binomial");
    let (model, spec) = (&fx.model, &fx.spec);
    let oracle = ExactSampler::new(model.clone());
    let mut out = Vec::new();

    let eps = config.nonadaptive_epsilon;
    let one_round = Pipeline::nonadaptive(spec, eps);
    let s1 = derive_seed(seed, phase::TEST, 10);
    let (rate, reports) =
        success_rate(&one_round, &oracle, model, spec, eps, config.nonadaptive_trials, s1)?;
    let se = proportion_se(0.7, config.nonadaptive_trials);
    out.push(CheckResult::statistical(
        "nonadaptive_success",
        rate,
        Relation::AtLeast,
        0.7 - SE_SLACK * se,
        se,
        config.nonadaptive_trials,
    ));
    out.push(round_check("nonadaptive_one_round", &reports, 1));
    drop(reports);

    let perturbed = TvPerturbed::new(ExactSampler::new(model.clone()), config.tv_delta)?;
    let (tv_rate, _) =
        success_rate(&one_round, &perturbed, model, spec, eps, config.nonadaptive_trials, s1)?;
    out.push(CheckResult::exact(
        format!("tv_robustness[delta={}]", config.tv_delta),
        rate - tv_rate,
        0.05,
    ));

    let eps = config.three_round_epsilon;
    let three = Pipeline::three_round(spec, eps, KappaPolicy::Exact(model));
    let (rate, reports) = success_rate(
        &three,
        &oracle,
        model,
        spec,
        eps,
        config.three_round_trials,
        derive_seed(seed, phase::TEST, 11),
    )?;
    out.push(CheckResult::statistical(
        "three_round_success",
        rate,
        Relation::AtLeast,
        0.78,
        proportion_se(0.8, config.three_round_trials),
        config.three_round_trials,
    ));
    out.push(round_check("three_round_three_rounds", &reports, 3));
    drop(reports);

    out.push(check_curvature_markov(
        model,
        spec,
        config.markov_draws,
        derive_seed(seed, phase::TEST, 12),
    )?);

    Ok(out)
}

/// Median boosting of the three-round pipeline on the binomial fixture.
pub fn check_boost(config: &SuiteConfig, seed: u64) -> Result<CheckResult> {
    let fx = fixture("binomial");
    let (model, spec) = (&fx.model, &fx.spec);
    let oracle = ExactSampler::new(model.clone());
    let eps = config.three_round_epsilon;
    let three = Pipeline::three_round(spec, eps, KappaPolicy::Exact(model));
    check_median_boost(
        &three,
        &oracle,
        model,
        spec,
        eps,
        config.boost_delta,
        config.boost_runs,
        derive_seed(seed, phase::TEST, 13),
    )
}

/// Failure rate of median-boosted estimates against `delta`.
#[allow(clippy::too_many_arguments)]
pub fn check_median_boost(
    pipeline: &Pipeline<'_>,
    oracle: &dyn SampleOracle,
    model: &GrossModel,
    spec: &ProblemSpec,
    epsilon: f64,
    delta: f64,
    runs: usize,
    seed: u64,
) -> Result<CheckResult> {
    let exact = model.exact_log_q(spec)?;
    let failures = par_trials(runs, seed, |s| median_boost(pipeline, spec, oracle, delta, s))
        .into_iter()
        .filter(|r| !matches!(r, Ok(r) if (r.log_q_hat - exact).abs() <= epsilon))
        .count();
    let se = proportion_se(delta, runs);
    Ok(CheckResult::statistical(
        format!("median_boost_failure[delta={delta}]"),
        failures as f64 / runs as f64,
        Relation::AtMost,
        delta + SE_SLACK * se,
        se,
        runs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exp1, stream_rng, StreamKey};

    #[test]
    fn ks_accepts_exponential_samples() {
        let mut rng = stream_rng(5, StreamKey::new(phase::TEST, 0, 0));
        let samples: Vec<f64> = (0..10_000).map(|_| exp1(&mut rng)).collect();
        let r = ks_exponential(&samples).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.trials, Some(10_000));
    }

    #[test]
    fn ks_rejects_constant() {
        let r = ks_exponential(&[0.5; 1000]).unwrap();
        assert!(!r.passed);
        assert!(matches!(
            ks_exponential(&[1.0; 10]),
            Err(Error::TooFewSamples { got: 10, need: 100 })
        ));
    }

    #[test]
    fn ks_statistic_by_hand() {
        // Quantiles (i + 0.5)/n of Exp(1) have D = 0.5/n exactly.
        let n = 200;
        let xs: Vec<f64> = (0..n)
            .map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln())
            .collect();
        let r = ks_exponential(&xs).unwrap();
        assert!((r.observed - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn mean_and_se_by_hand() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn static_suite_passes_on_single_atom() {
        let fx = fixtures::get("single").unwrap();
        let checks = check_static_suite(&fx.model, &fx.spec, 1.0).unwrap();
        assert!(checks.iter().all(|c| c.passed), "{checks:#?}");
        let kappa = fx.model.schedule_stats(&static_schedule(&fx.spec, 1.0).unwrap()).unwrap();
        assert!(kappa.curvature.abs() < 1e-12);
    }

    #[test]
    fn fabricated_wide_schedule_fails() {
        let fx = fixtures::get("binomial").unwrap();
        let bad = Schedule::endpoints(&fx.spec);
        let checks = check_schedule_bounds(&fx.model, &fx.spec, &bad, 0.5).unwrap();
        let width = checks.iter().find(|c| c.name.starts_with("max_width")).unwrap();
        assert!(!width.passed);
        let tele = checks.iter().find(|c| c.name.starts_with("gap_telescoping")).unwrap();
        assert!(tele.passed);
    }

    #[test]
    fn fabricated_curvature_violation_fails() {
        // A two-point model with its jump inside a single pair: Delta <= 1
        // but kappa is large relative to 4 Delta ln(n / Delta) for tiny n.
        let fx = fixtures::get("three").unwrap();
        let s = Schedule::new(vec![Beta::ZERO, Beta::new(0.05).unwrap(), Beta::new(1.0).unwrap()])
            .unwrap();
        let checks = check_schedule_bounds(&fx.model, &fx.spec, &s, 0.1).unwrap();
        assert!(!checks[0].passed);
    }

    #[test]
    fn relation_semantics() {
        let c = CheckResult::statistical("x", 0.5, Relation::AtLeast, 0.6, 0.01, 10);
        assert!(!c.passed);
        let c = CheckResult::statistical("x", 0.7, Relation::AtLeast, 0.6, 0.01, 10);
        assert!(c.passed);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains(r#""relation":">=""#), "{json}");
    }
}
