use proptest::prelude::*;

use gibbs_ratio::estimators::{ppe_sample_size, Pipeline};
use gibbs_ratio::oracle::{phase, BatchRequest};
use gibbs_ratio::schedules::static_schedule_trace;
use gibbs_ratio::verify::static_length_bound;
use gibbs_ratio::{Atom, Beta, ExactSampler, GrossModel, OracleSession, ProblemSpec, Schedule};

const TOL: f64 = 1e-9;

fn model_strategy() -> impl Strategy<Value = GrossModel> {
    (
        2.0f64..20.0,
        any::<bool>(),
        prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 1..12),
    )
        .prop_map(|(n, zero, raw)| {
            let mut atoms: Vec<Atom> = raw
                .into_iter()
                .map(|(u, lc)| Atom {
                    x: (((1.0 + u * (n - 1.0)) * 1000.0).round() / 1000.0).min(n),
                    c: lc.exp(),
                })
                .collect();
            atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
            atoms.dedup_by(|a, b| a.x == b.x);
            if zero {
                atoms.push(Atom { x: 0.0, c: 1.0 });
            }
            GrossModel::new(atoms, n).unwrap()
        })
}

/// A model with a spec it satisfies.
fn problem_strategy() -> impl Strategy<Value = (GrossModel, ProblemSpec)> {
    (model_strategy(), -3.0f64..1.0, 0.05f64..2.0, 0.0f64..3.0).prop_map(|(m, lo, width, slack)| {
        let probe = ProblemSpec::new(Beta::new(lo).unwrap(), lo + width, m.n(), 1e6).unwrap();
        let q = (m.exact_log_q(&probe).unwrap() + slack).max(2.0);
        let spec = ProblemSpec::new(Beta::new(lo).unwrap(), lo + width, m.n(), q).unwrap();
        (m, spec)
    })
}

fn b(v: f64) -> Beta {
    Beta::new(v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn log_partition_is_convex(m in model_strategy(), a in -5.0f64..5.0, d1 in 0.01f64..3.0, d2 in 0.01f64..3.0) {
        let (x, y, z) = (a, a + d1, a + d1 + d2);
        let t = d1 / (d1 + d2);
        let zy = m.log_partition(b(y)).unwrap();
        let chord = (1.0 - t) * m.log_partition(b(x)).unwrap() + t * m.log_partition(b(z)).unwrap();
        prop_assert!(zy <= chord + TOL);
    }

    #[test]
    fn curvature_nonnegative(m in model_strategy(), a in -5.0f64..5.0, d in 0.0f64..4.0) {
        let k = m.curvature(b(a), b(a + d)).unwrap();
        prop_assert!(k >= -1e-12, "{}", k);
    }

    #[test]
    fn mean_energy_monotone(m in model_strategy(), a in -5.0f64..5.0, d in 0.0f64..3.0) {
        prop_assert!(m.mean_energy(b(a)).unwrap() <= m.mean_energy(b(a + d)).unwrap() + TOL);
        prop_assert!(m.variance_energy(b(a)).unwrap() >= 0.0);
    }

    #[test]
    fn from_points_is_valid(lo in -5.0f64..0.0, w in 0.1f64..5.0, pts in prop::collection::vec(-10.0f64..10.0, 0..40)) {
        let s = Schedule::from_points(b(lo), lo + w, pts.into_iter().map(b));
        let v = s.betas();
        prop_assert_eq!(v[0], b(lo));
        prop_assert_eq!(v[v.len() - 1], b(lo + w));
        prop_assert!(v.windows(2).all(|p| p[1].get() - p[0].get() > 1e-12));
        prop_assert!(Schedule::new(v.to_vec()).is_ok());
    }

    #[test]
    fn static_schedule_bounds((m, spec) in problem_strategy(), theta in 0.05f64..=1.0) {
        let trace = static_schedule_trace(&spec, theta).unwrap();
        for (&beta, &s) in trace.iterates.iter().zip(&trace.bounds) {
            prop_assert!(m.mean_energy(b(beta)).unwrap() <= s + TOL);
        }
        let stats = m.schedule_stats(&trace.schedule).unwrap();
        prop_assert!(stats.max_width <= theta + TOL);
        prop_assert!((trace.schedule.len() as f64) <= static_length_bound(&spec, theta));
        if stats.max_width > 0.0 {
            let bound = 4.0 * stats.max_width * (spec.n() / stats.max_width).ln();
            prop_assert!(stats.curvature <= bound + TOL);
        }
        let total: f64 = stats.per_pair.iter().map(|p| p.gap).sum();
        prop_assert!((total - m.exact_log_q(&spec).unwrap()).abs() <= TOL);
    }

    #[test]
    fn widths_sum_to_bracket_gap((m, spec) in problem_strategy(), u in 0.0f64..1.0) {
        let s = gibbs_ratio::static_schedule(&spec, 0.5).unwrap();
        let x = spec.beta_min().get() + u * (spec.beta_max() - spec.beta_min().get());
        prop_assume!(x > spec.beta_min().get() && x < spec.beta_max());
        let w = m.widths(&s, x).unwrap();
        prop_assert!(w.minus >= 0.0 && w.plus >= 0.0);
        prop_assert!((w.minus + w.plus - w.total).abs() <= TOL);
        prop_assert!(w.total <= 0.5 + TOL);
    }

    #[test]
    fn sample_size_monotone(k1 in 0.0f64..5.0, dk in 0.0f64..5.0, e1 in 0.01f64..0.49, de in 0.0f64..0.4) {
        let e2 = (e1 + de).min(0.49);
        prop_assert!(ppe_sample_size(k1, e1).unwrap() <= ppe_sample_size(k1 + dk, e1).unwrap());
        prop_assert!(ppe_sample_size(k1, e2).unwrap() <= ppe_sample_size(k1, e1).unwrap());
        prop_assert!(ppe_sample_size(k1, e1).unwrap() >= 1);
    }

    #[test]
    fn beta_serde_round_trip(v in prop::num::f64::NORMAL, neg_inf in any::<bool>()) {
        let beta = if neg_inf { Beta::NEG_INF } else { b(v) };
        let text = serde_json::to_string(&beta).unwrap();
        prop_assert_eq!(serde_json::from_str::<Beta>(&text).unwrap(), beta);
        prop_assert_eq!(beta.to_string().parse::<Beta>().unwrap(), beta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipelines_are_deterministic((m, spec) in problem_strategy(), seed in any::<u64>()) {
        let oracle = ExactSampler::new(m.clone());
        let p = Pipeline::nonadaptive(&spec, 0.45);
        let a = p.run(&spec, &oracle, seed).unwrap();
        let again = p.run(&spec, &oracle, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&again).unwrap());
        prop_assert_eq!(a.stats.rounds, 1);
        prop_assert_eq!(a.stats.total_samples, 2 * a.params.k * (a.schedule_len as u64 - 1));
    }

    #[test]
    fn batch_results_ignore_item_order((m, spec) in problem_strategy(), seed in any::<u64>(), n in 1usize..8) {
        let oracle = ExactSampler::new(m);
        let betas: Vec<Beta> = (0..n)
            .map(|i| b(spec.beta_min().get() + (spec.beta_max() - spec.beta_min().get()) * i as f64 / n as f64))
            .collect();
        let mut fwd = BatchRequest::new();
        let mut rev = BatchRequest::new();
        for (i, &beta) in betas.iter().enumerate() {
            fwd.push_keyed(beta, 5, i as u64, 0);
        }
        for (i, &beta) in betas.iter().enumerate().rev() {
            rev.push_keyed(beta, 5, i as u64, 0);
        }
        let a = OracleSession::new(&oracle, spec, seed).execute_batch(&fwd, phase::TEST).unwrap();
        let mut c = OracleSession::new(&oracle, spec, seed).execute_batch(&rev, phase::TEST).unwrap();
        c.reverse();
        prop_assert_eq!(a, c);
    }
}
