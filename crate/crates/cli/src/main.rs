use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gibbs_ratio::estimators::{default_theta, median_boost, KappaPolicy, Pipeline, SampleSize};
use gibbs_ratio::oracle::{derive_seed, phase};
use gibbs_ratio::schedules::{pseudo_tpa, static_schedule, tpa_union, PseudoTpaConfig};
use gibbs_ratio::verify::{check_schedule_bounds, run_suite, CheckResult, Suite, SuiteConfig};
use gibbs_ratio::{fixtures, Beta, EstimateReport, ExactSampler, GrossModel, OracleSession, ProblemSpec, Schedule};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "gibbs-ratio", version, about = "Estimate log partition ratios of Gibbs distributions from samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize a model and, when a spec is given, its exact log Q.
    Model(RunArgs),
    /// Build a cooling schedule.
    Schedule(RunArgs),
    /// Run an estimation pipeline for one or more trials.
    Estimate(RunArgs),
    /// Run verification checks.
    Verify(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PipelineArg {
    Nonadaptive,
    #[value(alias = "pseudo-tpa")]
    #[serde(alias = "pseudo-tpa")]
    ThreeRound,
    TpaBaseline,
    PpeOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SuiteArg {
    Static,
    Tpa,
    PseudoTpa,
    Ppe,
    EndToEnd,
    All,
}

/// Flags shared by all subcommands. Every field may also come from a JSON
/// config file; flags given on the command line win.
#[derive(Args, Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunArgs {
    /// JSON file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Model JSON file.
    #[arg(long = "model")]
    #[serde(alias = "model")]
    model_path: Option<PathBuf>,
    /// Problem spec JSON file.
    #[arg(long = "spec")]
    #[serde(alias = "spec")]
    spec_path: Option<PathBuf>,
    /// Bundled fixture supplying both model and spec.
    #[arg(long)]
    fixture: Option<String>,
    /// Lower inverse temperature; accepts "-inf".
    #[arg(long, allow_hyphen_values = true)]
    beta_min: Option<Beta>,
    #[arg(long, allow_hyphen_values = true)]
    beta_max: Option<f64>,
    /// Promised bound on log Q.
    #[arg(long)]
    q: Option<f64>,
    /// Energy bound; defaults to the model's.
    #[arg(long)]
    n: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Fixed PPE sample size per pair (ppe-only).
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    kappa_cap: Option<f64>,
    /// Use the exact curvature of each schedule instead of a cap.
    #[arg(long)]
    exact_kappa: Option<bool>,
    #[arg(long, value_enum)]
    pipeline: Option<PipelineArg>,
    #[arg(long)]
    trials: Option<usize>,
    /// Median-boost each trial to failure probability delta.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, action = clap::ArgAction::SetTrue)]
    #[serde(skip)]
    no_timestamp: bool,
    #[arg(long, value_enum)]
    suite: Option<SuiteArg>,
    /// Check a schedule (JSON array of betas) against the width bounds for `theta`.
    #[arg(long = "schedule")]
    #[serde(alias = "schedule")]
    schedule_path: Option<PathBuf>,
}

macro_rules! merge {
    ($flags:ident, $file:ident, $($f:ident),*) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f.clone(); } )*
    };
}

impl RunArgs {
    fn resolve(mut self) -> anyhow::Result<Self> {
        if let Some(path) = &self.config {
            let text = read(path)?;
            let file: RunArgs =
                serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))?;
            let base = path.parent().unwrap_or(Path::new(""));
            let rebase = |p: &Option<PathBuf>| p.as_ref().map(|p| base.join(p));
            let file = RunArgs {
                model_path: rebase(&file.model_path),
                spec_path: rebase(&file.spec_path),
                schedule_path: rebase(&file.schedule_path),
                ..file
            };
            merge!(self, file, model_path, spec_path, fixture, beta_min, beta_max, q, n, theta, epsilon, k,
                kappa_cap, exact_kappa, pipeline, trials, delta, seed, out, format, workers, suite, schedule_path);
        }
        Ok(self)
    }
}

/// A failure with its exit code: 1 for failed checks or estimates, 2 for
/// usage and configuration errors.
enum Failure {
    Check(String),
    Config(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

impl From<gibbs_ratio::Error> for Failure {
    fn from(e: gibbs_ratio::Error) -> Self {
        Failure::Config(e.into())
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_model(args: &RunArgs) -> anyhow::Result<Option<GrossModel>> {
    match (&args.model_path, &args.fixture) {
        (Some(_), Some(_)) => bail!("--model and --fixture are mutually exclusive"),
        (Some(path), None) => {
            let model = GrossModel::from_json(&read(path)?).with_context(|| format!("model {}", path.display()))?;
            Ok(Some(model))
        }
        (None, Some(name)) => Ok(Some(fixture(name)?.model)),
        (None, None) => Ok(None),
    }
}

fn fixture(name: &str) -> anyhow::Result<fixtures::Fixture> {
    fixtures::get(name).ok_or_else(|| {
        let names: Vec<&str> = fixtures::names().collect();
        anyhow!("unknown fixture {name:?}; available: {}", names.join(", "))
    })
}

/// Spec from `--spec` or the fixture, with individual flags overriding.
fn load_spec(args: &RunArgs, model: Option<&GrossModel>) -> anyhow::Result<Option<ProblemSpec>> {
    let base = match (&args.spec_path, &args.fixture) {
        (Some(path), _) => {
            let spec: ProblemSpec =
                serde_json::from_str(&read(path)?).with_context(|| format!("spec {}", path.display()))?;
            Some(spec)
        }
        (None, Some(name)) => Some(fixture(name)?.spec),
        (None, None) => None,
    };
    let flags_given = args.beta_min.is_some() || args.beta_max.is_some() || args.q.is_some() || args.n.is_some();
    if base.is_none() && !flags_given {
        return Ok(None);
    }
    let missing = |what: &str| anyhow!("--{what} is required when no spec file or fixture is given");
    let beta_min = match args.beta_min.or(base.map(|s| s.beta_min())) {
        Some(b) => b,
        None => return Err(missing("beta-min")),
    };
    let beta_max = args.beta_max.or(base.map(|s| s.beta_max())).ok_or_else(|| missing("beta-max"))?;
    let q = args.q.or(base.map(|s| s.q())).ok_or_else(|| missing("q"))?;
    let n = args
        .n
        .or(base.map(|s| s.n()))
        .or(model.map(|m| m.n()))
        .ok_or_else(|| missing("n"))?;
    Ok(Some(ProblemSpec::new(beta_min, beta_max, n, q)?))
}

fn require_spec(spec: Option<ProblemSpec>) -> anyhow::Result<ProblemSpec> {
    spec.ok_or_else(|| anyhow!("a problem spec is required: use --spec, --fixture, or --beta-min/--beta-max/--q"))
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn stamp(mut value: Value, args: &RunArgs) -> Value {
    if !args.no_timestamp {
        if let Value::Object(map) = &mut value {
            map.insert("timestamp".into(), json!(timestamp()));
        }
    }
    value
}

fn emit(args: &RunArgs, text: &str) -> anyhow::Result<()> {
    match &args.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn cmd_model(args: &RunArgs) -> Result<(), Failure> {
    let model = load_model(args)?.ok_or_else(|| anyhow!("--model or --fixture is required"))?;
    let spec = load_spec(args, Some(&model))?;
    let mut out = json!({
        "atoms": model.atoms().len(),
        "n": model.n(),
        "max_energy": model.max_energy(),
        "c0": model.c0(),
    });
    if let Some(spec) = spec {
        let z_min = model.log_partition(spec.beta_min())?;
        let z_max = model.log_partition(spec.beta_max_beta())?;
        let log_q = z_max - z_min;
        out["spec"] = serde_json::to_value(spec).map_err(anyhow::Error::from)?;
        out["z_beta_min"] = json!(if z_min.is_finite() { json!(z_min) } else { json!("-inf") });
        out["z_beta_max"] = json!(z_max);
        out["log_q"] = json!(log_q);
        out["within_q"] = json!(log_q <= spec.q() + gibbs_ratio::gibbs::EXACT_TOLERANCE);
    }
    emit(args, &to_json(&stamp(out, args))?)?;
    Ok(())
}

fn theta_for(args: &RunArgs, spec: &ProblemSpec) -> f64 {
    args.theta.unwrap_or_else(|| default_theta(spec.n()))
}

fn cmd_schedule(args: &RunArgs) -> Result<(), Failure> {
    let model = load_model(args)?;
    let spec = require_spec(load_spec(args, model.as_ref())?)?;
    if let Some(m) = &model {
        m.check_spec(&spec)?;
    }
    let theta = theta_for(args, &spec);
    let pipeline = args.pipeline.unwrap_or(PipelineArg::Nonadaptive);
    let seed = args.seed.unwrap_or(0);
    PseudoTpaConfig::new(theta)?;

    let (schedule, stats) = match pipeline {
        PipelineArg::Nonadaptive | PipelineArg::PpeOnly => (static_schedule(&spec, theta)?, None),
        PipelineArg::ThreeRound | PipelineArg::TpaBaseline => {
            let model = model
                .as_ref()
                .ok_or_else(|| anyhow!("sampling schedulers need --model or --fixture"))?;
            let oracle = ExactSampler::new(model.clone());
            let mut session = OracleSession::new(&oracle, spec, seed);
            let schedule = if pipeline == PipelineArg::ThreeRound {
                pseudo_tpa(&mut session, &PseudoTpaConfig::new(theta)?)?.schedule
            } else {
                tpa_union(&mut session, (2.0 / theta).ceil() as usize)?
            };
            (schedule, Some(session.into_stats()))
        }
    };
    let mut out = json!({ "schedule": schedule, "theta": theta, "seed": seed });
    if let Some(m) = &model {
        out["stats"] = serde_json::to_value(m.schedule_stats(&schedule)?).map_err(anyhow::Error::from)?;
    }
    if let Some(stats) = stats {
        out["oracle"] = serde_json::to_value(stats).map_err(anyhow::Error::from)?;
    }
    emit(args, &to_json(&stamp(out, args))?)?;
    Ok(())
}

fn build_pipeline<'a>(args: &RunArgs, spec: &ProblemSpec, model: &'a GrossModel) -> anyhow::Result<Pipeline<'a>> {
    let epsilon = args.epsilon.unwrap_or(0.2);
    let kind = args.pipeline.unwrap_or(PipelineArg::Nonadaptive);
    let kappa = |default: f64| match (args.exact_kappa.unwrap_or(false), args.kappa_cap) {
        (true, Some(_)) => Err(anyhow!("--exact-kappa and --kappa-cap are mutually exclusive")),
        (true, None) => Ok(KappaPolicy::Exact(model)),
        (false, cap) => Ok(KappaPolicy::Cap(cap.unwrap_or(default))),
    };
    let mut pipeline = match kind {
        PipelineArg::Nonadaptive => {
            let mut p = Pipeline::nonadaptive(spec, epsilon);
            p.sample_size = SampleSize::FromKappa {
                epsilon,
                kappa: kappa(gibbs_ratio::estimators::NONADAPTIVE_KAPPA)?,
            };
            p
        }
        PipelineArg::ThreeRound => {
            Pipeline::three_round(spec, epsilon, kappa(gibbs_ratio::estimators::THREE_ROUND_KAPPA)?)
        }
        PipelineArg::TpaBaseline => {
            Pipeline::tpa_baseline(spec, epsilon, kappa(gibbs_ratio::estimators::NONADAPTIVE_KAPPA)?)
        }
        PipelineArg::PpeOnly => {
            let size = match args.k {
                Some(k) => SampleSize::Fixed(k),
                None => SampleSize::FromKappa {
                    epsilon,
                    kappa: kappa(gibbs_ratio::estimators::NONADAPTIVE_KAPPA)?,
                },
            };
            Pipeline::ppe_only(theta_for(args, spec), size)
        }
    };
    if let Some(theta) = args.theta {
        pipeline.scheduler = match pipeline.scheduler {
            gibbs_ratio::estimators::Scheduler::Static { .. } => gibbs_ratio::estimators::Scheduler::Static { theta },
            gibbs_ratio::estimators::Scheduler::PseudoTpa { .. } => {
                gibbs_ratio::estimators::Scheduler::PseudoTpa { theta }
            }
            gibbs_ratio::estimators::Scheduler::Tpa { .. } => gibbs_ratio::estimators::Scheduler::Tpa {
                runs: (2.0 / theta).ceil() as usize,
            },
        };
    }
    if args.k.is_some() && kind != PipelineArg::PpeOnly {
        bail!("--k applies only to --pipeline ppe-only");
    }
    pipeline.validate()?;
    Ok(pipeline)
}

const CSV_HEADER: [&str; 9] = [
    "trial",
    "log_q_hat",
    "exact_log_q",
    "abs_err",
    "samples",
    "rounds",
    "schedule_len",
    "seed",
    "error",
];

fn csv_rows(results: &[(u64, gibbs_ratio::Result<EstimateReport>)]) -> Vec<[String; 9]> {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    results
        .iter()
        .enumerate()
        .map(|(t, (seed, r))| match r {
            Ok(r) => [
                t.to_string(),
                r.log_q_hat.to_string(),
                opt(r.exact_log_q),
                opt(r.abs_err),
                r.stats.total_samples.to_string(),
                r.stats.rounds.to_string(),
                r.schedule_len.to_string(),
                seed.to_string(),
                String::new(),
            ],
            Err(e) => [
                t.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                seed.to_string(),
                e.to_string(),
            ],
        })
        .collect()
}

fn write_csv(args: &RunArgs, rows: &[[String; 9]]) -> anyhow::Result<()> {
    match &args.out {
        Some(path) => {
            let fresh = fs::metadata(path).map_or(true, |m| m.len() == 0);
            let file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let mut w = csv::Writer::from_writer(file);
            if fresh {
                w.write_record(CSV_HEADER)?;
            }
            for row in rows {
                w.write_record(row)?;
            }
            w.flush()?;
        }
        None => {
            let mut w = csv::Writer::from_writer(io::stdout());
            w.write_record(CSV_HEADER)?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_estimate(args: &RunArgs) -> Result<(), Failure> {
    let model = load_model(args)?.ok_or_else(|| anyhow!("--model or --fixture is required"))?;
    let spec = require_spec(load_spec(args, Some(&model))?)?;
    model.check_spec(&spec)?;
    let pipeline = build_pipeline(args, &spec, &model)?;
    if let Some(delta) = args.delta {
        gibbs_ratio::estimators::boost_replicas(delta)?;
    }
    let trials = args.trials.unwrap_or(1);
    if trials == 0 {
        return Err(anyhow!("--trials must be at least 1").into());
    }
    let seed = args.seed.unwrap_or(0);
    let oracle = ExactSampler::new(model.clone());

    use rayon::prelude::*;
    let results: Vec<(u64, gibbs_ratio::Result<EstimateReport>)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = derive_seed(seed, phase::TRIAL, t);
            let report = match args.delta {
                Some(delta) => median_boost(&pipeline, &spec, &oracle, delta, s),
                None => pipeline.run(&spec, &oracle, s),
            };
            (s, report.and_then(|r| r.with_exact(&model, &spec)))
        })
        .collect();

    match args.format.unwrap_or(Format::Json) {
        Format::Csv => write_csv(args, &csv_rows(&results))?,
        Format::Json => {
            let items: Vec<Value> = results
                .iter()
                .enumerate()
                .map(|(t, (s, r))| {
                    let mut v = match r {
                        Ok(r) => serde_json::to_value(r).expect("report serializes"),
                        Err(e) => json!({ "seed": s, "error": e.to_string() }),
                    };
                    v["trial"] = json!(t);
                    stamp(v, args)
                })
                .collect();
            let text = if trials == 1 {
                to_json(&items[0])?
            } else {
                to_json(&items)?
            };
            emit(args, &text)?;
        }
    }

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    if trials > 1 {
        if let Some(eps) = pipeline.epsilon() {
            let ok = results
                .iter()
                .filter(|(_, r)| matches!(r, Ok(r) if r.abs_err.is_some_and(|e| e <= eps)))
                .count();
            let rate = ok as f64 / trials as f64;
            let se = (rate * (1.0 - rate) / trials as f64).sqrt();
            eprintln!("success rate {rate:.4} (SE {se:.4}) at epsilon {eps} over {trials} trials");
        }
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {trials} trials failed")));
    }
    Ok(())
}

fn cmd_verify(args: &RunArgs) -> Result<(), Failure> {
    let checks: Vec<CheckResult> = if let Some(path) = &args.schedule_path {
        let model = load_model(args)?.ok_or_else(|| anyhow!("--schedule needs --model or --fixture"))?;
        let spec = require_spec(load_spec(args, Some(&model))?)?;
        model.check_spec(&spec)?;
        let schedule: Schedule = serde_json::from_str(&read(path)?)
            .with_context(|| format!("schedule {}", path.display()))?;
        let theta = args.theta.ok_or_else(|| anyhow!("--schedule needs --theta"))?;
        if theta.is_nan() || theta <= 0.0 {
            return Err(anyhow!("--theta must be positive").into());
        }
        check_schedule_bounds(&model, &spec, &schedule, theta)?
    } else {
        let suites: Vec<Suite> = match args.suite.unwrap_or(SuiteArg::All) {
            SuiteArg::Static => vec![Suite::Static],
            SuiteArg::Tpa => vec![Suite::Tpa],
            SuiteArg::PseudoTpa => vec![Suite::PseudoTpa],
            SuiteArg::Ppe => vec![Suite::Ppe],
            SuiteArg::EndToEnd => vec![Suite::EndToEnd],
            SuiteArg::All => Suite::ALL.to_vec(),
        };
        let seed = args.seed.unwrap_or(0);
        let config = SuiteConfig::default();
        let mut out = Vec::new();
        for s in suites {
            out.extend(run_suite(s, &config, seed)?);
        }
        out
    };
    emit(args, &to_json(&checks)?)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed checks: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Command::Model(a) => ("model", a),
        Command::Schedule(a) => ("schedule", a),
        Command::Estimate(a) => ("estimate", a),
        Command::Verify(a) => ("verify", a),
    };
    let result = args.resolve().map_err(Failure::Config).and_then(|args| {
        if let Some(w) = args.workers {
            if w == 0 {
                return Err(Failure::Config(anyhow!("--workers must be at least 1")));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build_global()
                .map_err(|e| Failure::Config(e.into()))?;
        }
        match cmd {
            "model" => cmd_model(&args),
            "schedule" => cmd_schedule(&args),
            "estimate" => cmd_estimate(&args),
            _ => cmd_verify(&args),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("gibbs-ratio: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("gibbs-ratio: {e:#}");
            ExitCode::from(2)
        }
    }
}
