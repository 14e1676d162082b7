//! Explicit gross Gibbs models and their exact analytics.
//!
//! A [`GrossModel`] is a finite list of atoms `(x, c_x)` with energies in
//! `{0} ∪ [1, n]`. Everything here is computed in log space: `Z(beta)` itself
//! is never materialized, since `log Q` may be far beyond `f64` range.

use serde::{Deserialize, Serialize};

use crate::beta::{Beta, ProblemSpec};
use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// Slack allowed when comparing an exact `log Q` against the promised `q`.
pub const EXACT_TOLERANCE: f64 = 1e-9;

/// `log(sum(exp(v)))`, shifted by the maximum. Returns `-inf` for an empty or
/// all-`-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Energy value `H(ω)`.
    pub x: f64,
    /// Multiplicity `c_x = |H⁻¹(x)|`, generalized to any positive weight.
    pub c: f64,
}

#[derive(Deserialize, Serialize)]
struct ModelFile {
    atoms: Vec<Atom>,
    n: f64,
}

/// The gross Gibbs distribution `mu_beta(x) = c_x e^{beta x} / Z(beta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrossModel {
    atoms: Vec<Atom>,
    log_c: Vec<f64>,
    n: f64,
}

impl GrossModel {
    pub fn new(mut atoms: Vec<Atom>, n: f64) -> Result<Self> {
        if !(n.is_finite() && n >= 1.0) {
            return Err(Error::InvalidModel(format!("n must be a finite real >= 1, got {n}")));
        }
        if atoms.is_empty() {
            return Err(Error::InvalidModel("at least one atom is required".into()));
        }
        for a in &atoms {
            if !a.x.is_finite() || a.x < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "atom x={} is not an admissible energy; H(Ω) ⊆ {{0}} ∪ [1, n] is required",
                    a.x
                )));
            }
            if a.x > 0.0 && a.x < 1.0 {
                return Err(Error::InvalidModel(format!(
                    "x={} in forbidden gap (0,1); H(Ω) ⊆ {{0}} ∪ [1, n] is required",
                    a.x
                )));
            }
            if a.x > n {
                return Err(Error::InvalidModel(format!(
                    "x={} exceeds n={n}; H(Ω) ⊆ {{0}} ∪ [1, n] is required",
                    a.x
                )));
            }
            if !(a.c.is_finite() && a.c > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "weight c={} at x={} must be a positive finite real",
                    a.c, a.x
                )));
            }
        }
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        if let Some(w) = atoms.windows(2).find(|w| w[0].x == w[1].x) {
            return Err(Error::InvalidModel(format!("duplicate atom at x={}", w[0].x)));
        }
        let log_c = atoms.iter().map(|a| a.c.ln()).collect();
        Ok(GrossModel { atoms, log_c, n })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "model",
            message: e.to_string(),
        })?;
        GrossModel::new(file.atoms, file.n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile {
            atoms: self.atoms.clone(),
            n: self.n,
        })
        .expect("model serializes")
    }

    /// Atoms sorted by energy.
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn max_energy(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].x
    }

    /// `c_0 = Z(-inf)`, zero when there is no atom at `x = 0`.
    pub fn c0(&self) -> f64 {
        match self.atoms[0] {
            Atom { x: 0.0, c } => c,
            _ => 0.0,
        }
    }

    /// `log(c_x) + beta x` for a finite `beta`.
    pub fn log_weights(&self, beta: f64) -> Vec<f64> {
        self.atoms
            .iter()
            .zip(&self.log_c)
            .map(|(a, lc)| if a.x == 0.0 { *lc } else { lc + beta * a.x })
            .collect()
    }

    /// `log mu_beta(x)` for each atom, in atom order.
    pub fn log_probabilities(&self, beta: Beta) -> Result<Vec<f64>> {
        if beta.is_neg_inf() {
            self.require_zero_atom()?;
            return Ok(self
                .atoms
                .iter()
                .map(|a| if a.x == 0.0 { 0.0 } else { f64::NEG_INFINITY })
                .collect());
        }
        let lw = self.log_weights(beta.get());
        let z = log_sum_exp(&lw);
        Ok(lw.into_iter().map(|v| v - z).collect())
    }

    fn require_zero_atom(&self) -> Result<()> {
        if self.c0() > 0.0 {
            Ok(())
        } else {
            Err(Error::UndefinedPartition)
        }
    }

    /// `z(beta) = log Z(beta)`, with `Z(-inf) = c_0`.
    pub fn log_partition(&self, beta: Beta) -> Result<f64> {
        if beta.is_neg_inf() {
            self.require_zero_atom()?;
            return Ok(self.c0().ln());
        }
        Ok(log_sum_exp(&self.log_weights(beta.get())))
    }

    /// `z'(beta) = E[X]` under `mu_beta`.
    pub fn mean_energy(&self, beta: Beta) -> Result<f64> {
        if beta.is_neg_inf() {
            self.require_zero_atom()?;
            return Ok(0.0);
        }
        let (weights, total) = self.shifted_weights(beta.get());
        let s: f64 = weights.iter().zip(&self.atoms).map(|(w, a)| w * a.x).sum();
        Ok(s / total)
    }

    /// `z''(beta) = Var[X]` under `mu_beta`.
    pub fn variance_energy(&self, beta: Beta) -> Result<f64> {
        if beta.is_neg_inf() {
            self.require_zero_atom()?;
            return Ok(0.0);
        }
        let (weights, total) = self.shifted_weights(beta.get());
        let mean = weights.iter().zip(&self.atoms).map(|(w, a)| w * a.x).sum::<f64>() / total;
        let var = weights
            .iter()
            .zip(&self.atoms)
            .map(|(w, a)| w * (a.x - mean).powi(2))
            .sum::<f64>()
            / total;
        Ok(var.max(0.0))
    }

    fn shifted_weights(&self, beta: f64) -> (Vec<f64>, f64) {
        let lw = self.log_weights(beta);
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = lw.iter().map(|v| (v - max).exp()).collect();
        let total = w.iter().sum();
        (w, total)
    }

    /// `z(b1, b2) = z(b2) - z(b1) >= 0` for `b1 <= b2`.
    pub fn log_ratio(&self, b1: Beta, b2: Beta) -> Result<f64> {
        if b1 > b2 {
            return Err(Error::Ordering {
                b1: b1.get(),
                b2: b2.get(),
            });
        }
        if b1 == b2 {
            // Also covers (-inf, -inf), whose difference would be NaN only
            // if c_0 were zero; that case still has to be reported.
            if b1.is_neg_inf() {
                self.require_zero_atom()?;
            }
            return Ok(0.0);
        }
        Ok((self.log_partition(b2)? - self.log_partition(b1)?).max(0.0))
    }

    /// `kappa(b1, b2) = z(b1) - 2 z((b1 + b2) / 2) + z(b2)`.
    ///
    /// With `b1 = -inf` the midpoint is `-inf`, giving `kappa = z(-inf, b2)`.
    pub fn curvature(&self, b1: Beta, b2: Beta) -> Result<f64> {
        if b1 > b2 {
            return Err(Error::Ordering {
                b1: b1.get(),
                b2: b2.get(),
            });
        }
        if b1.is_neg_inf() {
            return self.log_ratio(b1, b2);
        }
        if b1 == b2 {
            return Ok(0.0);
        }
        // Centered form: kappa = log E_m[e^{h(X - x̄)}] + log E_m[e^{-h(X - x̄)}]
        // with m the midpoint, h the half gap and x̄ = E_m[X]. Both terms are
        // nonnegative by Jensen, so small gaps lose no precision.
        let mid = b1.midpoint(b2);
        let h = 0.5 * (b2.get() - b1.get());
        let log_p = self.log_probabilities(mid)?;
        let mean = self.mean_energy(mid)?;
        let up: Vec<f64> = log_p
            .iter()
            .zip(&self.atoms)
            .map(|(lp, a)| lp + h * (a.x - mean))
            .collect();
        let down: Vec<f64> = log_p
            .iter()
            .zip(&self.atoms)
            .map(|(lp, a)| lp - h * (a.x - mean))
            .collect();
        Ok(log_sum_exp(&up) + log_sum_exp(&down))
    }

    /// Max-width, curvature and per-pair contributions of a schedule.
    pub fn schedule_stats(&self, schedule: &Schedule) -> Result<ScheduleStats> {
        let per_pair = schedule
            .pairs()
            .map(|(b1, b2)| {
                Ok(PairStat {
                    gap: self.log_ratio(b1, b2)?,
                    kappa: self.curvature(b1, b2)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScheduleStats {
            len: schedule.len(),
            max_width: per_pair.iter().map(|p| p.gap).fold(0.0, f64::max),
            curvature: per_pair.iter().map(|p| p.kappa).sum(),
            per_pair,
        })
    }

    /// `(w⁻(B, x), w⁺(B, x), w(B, x))` for `x` strictly inside the schedule.
    pub fn widths(&self, schedule: &Schedule, x: f64) -> Result<Widths> {
        let v = schedule.bracket(x)?;
        let xb = Beta::finite(x)?;
        let minus = self.log_ratio(schedule.betas()[v], xb)?;
        let plus = self.log_ratio(xb, schedule.betas()[v + 1])?;
        Ok(Widths {
            minus,
            plus,
            total: minus + plus,
        })
    }

    /// Exact `log Q = z(beta_min, beta_max)`, validated against `q`.
    pub fn exact_log_q(&self, spec: &ProblemSpec) -> Result<f64> {
        let log_q = self.log_ratio(spec.beta_min(), spec.beta_max_beta())?;
        if log_q > spec.q() + EXACT_TOLERANCE {
            return Err(Error::InconsistentSpec { log_q, q: spec.q() });
        }
        Ok(log_q)
    }

    /// Checks every promise the spec makes about this model.
    pub fn check_spec(&self, spec: &ProblemSpec) -> Result<()> {
        if self.max_energy() > spec.n() {
            return Err(Error::InvalidSpec(format!(
                "model has energy {} above spec n = {}",
                self.max_energy(),
                spec.n()
            )));
        }
        if spec.beta_min().is_neg_inf() {
            self.require_zero_atom()?;
        }
        self.exact_log_q(spec).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairStat {
    /// `z(b_i, b_{i+1})`.
    pub gap: f64,
    /// `kappa(b_i, b_{i+1})`.
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleStats {
    pub len: usize,
    /// `Delta(B)`.
    pub max_width: f64,
    /// `kappa(B)`.
    pub curvature: f64,
    pub per_pair: Vec<PairStat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Widths {
    pub minus: f64,
    pub plus: f64,
    pub total: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: f64) -> Beta {
        Beta::new(v).unwrap()
    }

    fn model(atoms: &[(f64, f64)], n: f64) -> GrossModel {
        GrossModel::new(atoms.iter().map(|&(x, c)| Atom { x, c }).collect(), n).unwrap()
    }

    fn binomial() -> GrossModel {
        let mut c = 1.0;
        let atoms = (0..=8)
            .map(|x| {
                let a = (x as f64, c);
                c = c * (8 - x) as f64 / (x + 1) as f64;
                a
            })
            .collect::<Vec<_>>();
        model(&atoms, 8.0)
    }

    // (1 + e^beta)^8, straight from the binomial theorem.
    fn binomial_closed_form(beta: f64) -> f64 {
        8.0 * (1.0 + beta.exp()).ln()
    }

    #[test]
    fn log_partition_examples() {
        assert_eq!(model(&[(0.0, 1.0)], 2.0).log_partition(b(7.0)).unwrap(), 0.0);
        assert_eq!(model(&[(4.0, 1.0)], 4.0).log_partition(b(0.5)).unwrap(), 2.0);
        let m = binomial();
        assert!((m.log_partition(b(0.0)).unwrap() - 8.0 * 2f64.ln()).abs() < 1e-12);
        for beta in [-3.0, -0.5, 0.7, 2.0] {
            let z = m.log_partition(b(beta)).unwrap();
            assert!((z - binomial_closed_form(beta)).abs() < 1e-12);
        }
    }

    #[test]
    fn neg_inf_needs_zero_atom() {
        let m = model(&[(4.0, 1.0)], 4.0);
        assert_eq!(m.log_partition(Beta::NEG_INF), Err(Error::UndefinedPartition));
        assert_eq!(m.mean_energy(Beta::NEG_INF), Err(Error::UndefinedPartition));
        let m = model(&[(0.0, 3.0), (4.0, 1.0)], 4.0);
        assert_eq!(m.log_partition(Beta::NEG_INF).unwrap(), 3f64.ln());
        assert_eq!(m.mean_energy(Beta::NEG_INF).unwrap(), 0.0);
    }

    #[test]
    fn moments() {
        let single = model(&[(4.0, 1.0)], 4.0);
        let zero = model(&[(0.0, 1.0)], 2.0);
        for beta in [-2.0, 0.0, 3.0] {
            assert_eq!(single.mean_energy(b(beta)).unwrap(), 4.0);
            assert_eq!(single.variance_energy(b(beta)).unwrap(), 0.0);
            assert_eq!(zero.mean_energy(b(beta)).unwrap(), 0.0);
        }
        assert!((binomial().mean_energy(b(0.0)).unwrap() - 4.0).abs() < 1e-12);
        let two = model(&[(0.0, 1.0), (4.0, 1.0)], 4.0);
        assert!((two.variance_energy(b(0.0)).unwrap() - 4.0).abs() < 1e-12);
        let m = binomial();
        for i in 0..20 {
            assert!(m.variance_energy(b(-5.0 + 0.5 * i as f64)).unwrap() >= 0.0);
        }
    }

    #[test]
    fn log_ratio_examples() {
        let m = binomial();
        assert_eq!(m.log_ratio(b(0.3), b(0.3)).unwrap(), 0.0);
        assert_eq!(model(&[(4.0, 1.0)], 4.0).log_ratio(b(0.0), b(1.0)).unwrap(), 4.0);
        let expected = 8.0 * ((1.0 + 1f64.exp()) / 2.0).ln();
        assert!((m.log_ratio(b(0.0), b(1.0)).unwrap() - expected).abs() < 1e-12);
        assert!(matches!(m.log_ratio(b(1.0), b(0.0)), Err(Error::Ordering { .. })));
    }

    #[test]
    fn curvature_examples() {
        let single = model(&[(4.0, 1.0)], 4.0);
        assert!(single.curvature(b(-1.0), b(2.0)).unwrap().abs() < 1e-12);

        // Direct evaluation at 0, 1, 2 with Z(beta) = 1 + e^beta + 2 e^{4 beta}.
        let three = model(&[(0.0, 1.0), (1.0, 1.0), (4.0, 2.0)], 4.0);
        let z = |beta: f64| (1.0 + beta.exp() + 2.0 * (4.0 * beta).exp()).ln();
        let expected = z(0.0) - 2.0 * z(1.0) + z(2.0);
        assert!((three.curvature(b(0.0), b(2.0)).unwrap() - expected).abs() < 1e-12);

        let two = model(&[(0.0, 1.0), (4.0, 1.0)], 4.0);
        let expected = (1.0 + 4f64.exp()).ln();
        assert!((two.curvature(Beta::NEG_INF, b(1.0)).unwrap() - expected).abs() < 1e-12);
        assert!(two.curvature(b(1.0), b(0.0)).is_err());
    }

    #[test]
    fn curvature_small_gap_is_quadratic() {
        // kappa ≈ h² z''(m) for a half gap h.
        let m = binomial();
        let h = 1e-4;
        let k = m.curvature(b(0.5 - h), b(0.5 + h)).unwrap();
        let approx = h * h * m.variance_energy(b(0.5)).unwrap();
        assert!(k > 0.0);
        assert!((k - approx).abs() < 1e-6 * approx);
    }

    #[test]
    fn schedule_stats_examples() {
        let s = Schedule::new(vec![b(0.0), b(1.0)]).unwrap();
        let st = model(&[(4.0, 1.0)], 4.0).schedule_stats(&s).unwrap();
        assert_eq!(st.len, 2);
        assert_eq!(st.max_width, 4.0);
        assert!(st.curvature.abs() < 1e-12);

        let s = Schedule::new(vec![b(0.0), b(0.5), b(1.0)]).unwrap();
        let st = binomial().schedule_stats(&s).unwrap();
        let z = binomial_closed_form;
        let gaps = [z(0.5) - z(0.0), z(1.0) - z(0.5)];
        let kappas = [
            z(0.0) - 2.0 * z(0.25) + z(0.5),
            z(0.5) - 2.0 * z(0.75) + z(1.0),
        ];
        assert!((st.max_width - gaps[0].max(gaps[1])).abs() < 1e-12);
        assert!((st.curvature - kappas.iter().sum::<f64>()).abs() < 1e-12);

        let st = model(&[(0.0, 1.0)], 2.0).schedule_stats(&s).unwrap();
        assert_eq!((st.max_width, st.curvature), (0.0, 0.0));
    }

    #[test]
    fn widths_examples() {
        let s = Schedule::new(vec![b(0.0), b(1.0)]).unwrap();
        let w = model(&[(4.0, 1.0)], 4.0).widths(&s, 0.5).unwrap();
        assert_eq!((w.minus, w.plus, w.total), (2.0, 2.0, 4.0));

        let s = Schedule::new(vec![b(0.0), b(0.5), b(1.0)]).unwrap();
        let w = binomial().widths(&s, 0.5).unwrap();
        assert_eq!(w.minus, 0.0);

        let z = binomial_closed_form;
        let w = binomial().widths(&s, 0.25).unwrap();
        assert!((w.minus - (z(0.25) - z(0.0))).abs() < 1e-12);
        assert!((w.plus - (z(0.5) - z(0.25))).abs() < 1e-12);
        assert!(binomial().widths(&s, 1.0).is_err());
        assert!(binomial().widths(&s, -0.1).is_err());
    }

    #[test]
    fn exact_log_q_examples() {
        let spec = ProblemSpec::new(b(0.0), 1.0, 4.0, 4.0).unwrap();
        assert_eq!(model(&[(0.0, 1.0)], 2.0).exact_log_q(&spec).unwrap(), 0.0);
        assert_eq!(model(&[(4.0, 1.0)], 4.0).exact_log_q(&spec).unwrap(), 4.0);
        let spec = ProblemSpec::new(Beta::NEG_INF, 0.0, 8.0, 6.0).unwrap();
        assert!((binomial().exact_log_q(&spec).unwrap() - 8.0 * 2f64.ln()).abs() < 1e-12);
        let tight = ProblemSpec::new(Beta::NEG_INF, 0.0, 8.0, 5.0).unwrap();
        assert!(matches!(
            binomial().exact_log_q(&tight),
            Err(Error::InconsistentSpec { .. })
        ));
    }

    #[test]
    fn model_validation() {
        let err = GrossModel::from_json(r#"{"atoms":[{"x":0.5,"c":1}],"n":2}"#).unwrap_err();
        assert!(err.to_string().contains("forbidden gap (0,1)"), "{err}");
        assert!(GrossModel::from_json(r#"{"atoms":[],"n":2}"#).is_err());
        assert!(GrossModel::from_json(r#"{"atoms":[{"x":3,"c":1}],"n":2}"#).is_err());
        assert!(GrossModel::from_json(r#"{"atoms":[{"x":1,"c":0}],"n":2}"#).is_err());
        assert!(GrossModel::from_json(r#"{"atoms":[{"x":1,"c":1},{"x":1,"c":2}],"n":2}"#).is_err());
        let err = GrossModel::from_json("{\"atoms\": [\n  {\"x\": 1,}\n]}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
