//! Black-box sample sources and the instrumented session that queries them.
//!
//! Every draw comes from a keyed ChaCha8 stream whose key is
//! `(seed, phase, index_a, index_b)`, so the samples a batch item receives
//! depend only on its key, never on evaluation order or thread count.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::beta::{Beta, ProblemSpec};
use crate::error::{Error, Result};
use crate::gibbs::GrossModel;

pub type StreamRng = ChaCha8Rng;

/// Phase tags separating the random streams of different algorithm steps.
pub mod phase {
    pub const PPE: u32 = 1;
    pub const TPA_DRAW: u32 = 2;
    pub const TPA_ETA: u32 = 3;
    pub const PSEUDO_ROUND1: u32 = 4;
    pub const PSEUDO_INCLUDE: u32 = 5;
    pub const PSEUDO_ROUND2: u32 = 6;
    pub const PSEUDO_ETA: u32 = 7;
    pub const TRIAL: u32 = 8;
    pub const REPLICA: u32 = 9;
    pub const TEST: u32 = 100;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct StreamKey {
    pub phase: u32,
    pub index_a: u64,
    pub index_b: u64,
}

impl StreamKey {
    pub fn new(phase: u32, index_a: u64, index_b: u64) -> Self {
        StreamKey {
            phase,
            index_a,
            index_b,
        }
    }
}

/// The ChaCha key is the little-endian concatenation of seed and key.
pub fn stream_rng(seed: u64, key: StreamKey) -> StreamRng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..12].copy_from_slice(&key.phase.to_le_bytes());
    bytes[16..24].copy_from_slice(&key.index_a.to_le_bytes());
    bytes[24..32].copy_from_slice(&key.index_b.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Derives an independent child seed, e.g. one per trial or replica.
pub fn derive_seed(seed: u64, phase: u32, index: u64) -> u64 {
    stream_rng(seed, StreamKey::new(phase, index, u64::MAX)).next_u64()
}

/// A unit-rate exponential draw by inverse CDF.
pub fn exp1(rng: &mut StreamRng) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

/// A source of draws from the gross Gibbs distribution `mu_beta`.
pub trait SampleOracle: Send + Sync {
    fn draw(&self, beta: Beta, rng: &mut StreamRng) -> Result<f64>;

    fn draw_many(&self, beta: Beta, count: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        (0..count).map(|_| self.draw(beta, rng)).collect()
    }

    /// The distinct energy values the oracle can return.
    fn support(&self) -> &[f64];
}

/// Exact inverse-CDF sampling from an explicit [`GrossModel`].
#[derive(Clone, Debug)]
pub struct ExactSampler {
    model: GrossModel,
    support: Vec<f64>,
}

impl ExactSampler {
    pub fn new(model: GrossModel) -> Self {
        let support = model.atoms().iter().map(|a| a.x).collect();
        ExactSampler { model, support }
    }

    pub fn model(&self) -> &GrossModel {
        &self.model
    }

    fn cdf(&self, beta: Beta) -> Result<Option<Vec<f64>>> {
        if beta.is_neg_inf() {
            if self.model.c0() > 0.0 {
                return Ok(None);
            }
            return Err(Error::UndefinedPartition);
        }
        let lw = self.model.log_weights(beta.get());
        let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = lw
            .iter()
            .map(|v| {
                acc += (v - max).exp();
                acc
            })
            .collect();
        let total = acc;
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Some(cdf))
    }

    fn lookup(&self, cdf: &[f64], u: f64) -> f64 {
        let i = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        self.support[i]
    }
}

impl SampleOracle for ExactSampler {
    fn draw(&self, beta: Beta, rng: &mut StreamRng) -> Result<f64> {
        Ok(match self.cdf(beta)? {
            None => 0.0,
            Some(cdf) => self.lookup(&cdf, rng.gen()),
        })
    }

    fn draw_many(&self, beta: Beta, count: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(match self.cdf(beta)? {
            None => vec![0.0; count],
            Some(cdf) => (0..count).map(|_| self.lookup(&cdf, rng.gen())).collect(),
        })
    }

    fn support(&self) -> &[f64] {
        &self.support
    }
}

/// With probability `delta` replaces a draw by a uniform pick from the
/// support, so each output law is within total variation `delta` of `mu_beta`.
pub struct TvPerturbed<O> {
    inner: O,
    delta: f64,
}

impl<O: SampleOracle> TvPerturbed<O> {
    pub fn new(inner: O, delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "must lie in [0, 1)",
            });
        }
        Ok(TvPerturbed { inner, delta })
    }
}

impl<O: SampleOracle> SampleOracle for TvPerturbed<O> {
    fn draw(&self, beta: Beta, rng: &mut StreamRng) -> Result<f64> {
        let u: f64 = rng.gen();
        if u < self.delta {
            let support = self.inner.support();
            return Ok(support[rng.gen_range(0..support.len())]);
        }
        self.inner.draw(beta, rng)
    }

    fn support(&self) -> &[f64] {
        self.inner.support()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchItem {
    pub beta: Beta,
    pub count: usize,
    pub key_a: u64,
    pub key_b: u64,
}

/// One adaptivity round: no item may depend on the results of the same batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchRequest {
    pub items: Vec<BatchItem>,
}

impl BatchRequest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an item keyed by its position in the request.
    pub fn push(&mut self, beta: Beta, count: usize) -> &mut Self {
        let i = self.items.len() as u64;
        self.push_keyed(beta, count, i, 0)
    }

    pub fn push_keyed(&mut self, beta: Beta, count: usize, key_a: u64, key_b: u64) -> &mut Self {
        self.items.push(BatchItem {
            beta,
            count,
            key_a,
            key_b,
        });
        self
    }

    pub fn total_count(&self) -> u64 {
        self.items.iter().map(|i| i.count as u64).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleStats {
    pub total_samples: u64,
    pub rounds: u64,
    #[serde(serialize_with = "per_beta_entries")]
    pub per_beta: BTreeMap<Beta, u64>,
}

impl OracleStats {
    /// Folds in the stats of an independent session that ran concurrently.
    pub fn merge_parallel(&mut self, other: &OracleStats) {
        self.total_samples += other.total_samples;
        self.rounds = self.rounds.max(other.rounds);
        for (beta, count) in &other.per_beta {
            *self.per_beta.entry(*beta).or_default() += count;
        }
    }
}

fn per_beta_entries<S: Serializer>(
    map: &BTreeMap<Beta, u64>,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Entry {
        beta: Beta,
        count: u64,
    }
    serializer.collect_seq(map.iter().map(|(&beta, &count)| Entry { beta, count }))
}

/// Samples held in memory at once for one batch item.
pub const MAX_ITEM_SAMPLES: u64 = 1 << 27;
/// Samples drawn by one batch.
pub const MAX_BATCH_SAMPLES: u64 = 10_000_000_000;

fn check_budget(request: &BatchRequest) -> Result<()> {
    if let Some(item) = request.items.iter().find(|i| i.count as u64 > MAX_ITEM_SAMPLES) {
        return Err(Error::SampleBudget {
            requested: item.count as u64,
            limit: MAX_ITEM_SAMPLES,
            scope: "at one inverse temperature",
        });
    }
    let total = request.total_count();
    if total > MAX_BATCH_SAMPLES {
        return Err(Error::SampleBudget {
            requested: total,
            limit: MAX_BATCH_SAMPLES,
            scope: "in one batch",
        });
    }
    Ok(())
}

/// An oracle bound to a problem box and a seed, counting samples and rounds.
pub struct OracleSession<'a> {
    oracle: &'a dyn SampleOracle,
    spec: ProblemSpec,
    seed: u64,
    stats: OracleStats,
}

impl<'a> OracleSession<'a> {
    pub fn new(oracle: &'a dyn SampleOracle, spec: ProblemSpec, seed: u64) -> Self {
        OracleSession {
            oracle,
            spec,
            seed,
            stats: OracleStats::default(),
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stats(&self) -> &OracleStats {
        &self.stats
    }

    pub fn into_stats(self) -> OracleStats {
        self.stats
    }

    /// A non-oracle random stream (exponentials, coin flips) for this session.
    pub fn aux_rng(&self, key: StreamKey) -> StreamRng {
        stream_rng(self.seed, key)
    }

    pub fn execute_batch(&mut self, request: &BatchRequest, phase: u32) -> Result<Vec<Vec<f64>>> {
        self.execute_batch_map(request, phase, |_, samples| samples.to_vec())
    }

    /// Runs one round, reducing each item's samples with `reduce` as soon as
    /// they are drawn. Items may be evaluated concurrently; results come back
    /// in request order.
    ///
    /// An empty request is a no-op and does not count as a round.
    pub fn execute_batch_map<T, F>(
        &mut self,
        request: &BatchRequest,
        phase: u32,
        reduce: F,
    ) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &[f64]) -> T + Sync,
    {
        if request.items.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(item) = request.items.iter().find(|i| !self.spec.contains(i.beta)) {
            return Err(Error::OutOfRange {
                value: item.beta.get(),
                lo: self.spec.beta_min().get(),
                hi: self.spec.beta_max(),
            });
        }
        check_budget(request)?;
        let oracle = self.oracle;
        let seed = self.seed;
        let results = request
            .items
            .par_iter()
            .enumerate()
            .map(|(i, item)| {
                let mut rng = stream_rng(seed, StreamKey::new(phase, item.key_a, item.key_b));
                let samples = oracle.draw_many(item.beta, item.count, &mut rng)?;
                Ok(reduce(i, &samples))
            })
            .collect::<Result<Vec<T>>>()?;

        self.stats.rounds += 1;
        for item in &request.items {
            self.stats.total_samples += item.count as u64;
            *self.stats.per_beta.entry(item.beta).or_default() += item.count as u64;
        }
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::Atom;

    fn b(v: f64) -> Beta {
        Beta::new(v).unwrap()
    }

    fn model(atoms: &[(f64, f64)], n: f64) -> GrossModel {
        GrossModel::new(atoms.iter().map(|&(x, c)| Atom { x, c }).collect(), n).unwrap()
    }

    fn spec() -> ProblemSpec {
        ProblemSpec::new(b(0.0), 1.0, 4.0, 4.0).unwrap()
    }

    #[test]
    fn degenerate_samplers() {
        let mut rng = stream_rng(1, StreamKey::new(phase::TEST, 0, 0));
        let zero = ExactSampler::new(model(&[(0.0, 1.0)], 2.0));
        let four = ExactSampler::new(model(&[(4.0, 1.0)], 4.0));
        for beta in [Beta::NEG_INF, b(-3.0), b(2.0)] {
            assert_eq!(zero.draw(beta, &mut rng).unwrap(), 0.0);
        }
        assert_eq!(four.draw_many(b(0.3), 5, &mut rng).unwrap(), vec![4.0; 5]);
        assert_eq!(four.draw(Beta::NEG_INF, &mut rng), Err(Error::UndefinedPartition));
        let perturbed = TvPerturbed::new(four, 0.5).unwrap();
        assert_eq!(perturbed.draw_many(b(0.3), 50, &mut rng).unwrap(), vec![4.0; 50]);
    }

    #[test]
    fn tv_delta_range() {
        let zero = ExactSampler::new(model(&[(0.0, 1.0)], 2.0));
        assert!(TvPerturbed::new(zero.clone(), 1.0).is_err());
        assert!(TvPerturbed::new(zero, -0.1).is_err());
    }

    #[test]
    fn tv_zero_matches_inner_law() {
        let m = model(&[(0.0, 1.0), (1.0, 2.0), (4.0, 1.0)], 4.0);
        let inner = ExactSampler::new(m.clone());
        let tv = TvPerturbed::new(ExactSampler::new(m), 0.0).unwrap();
        let mut r1 = stream_rng(3, StreamKey::new(phase::TEST, 0, 0));
        let mut r2 = stream_rng(4, StreamKey::new(phase::TEST, 0, 0));
        let n = 20_000;
        let a = inner.draw_many(b(0.2), n, &mut r1).unwrap();
        let c = tv.draw_many(b(0.2), n, &mut r2).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // Both are unbiased for z'(0.2); std dev of X is below 2.
        assert!((mean(&a) - mean(&c)).abs() < 4.0 * 2.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn binomial_mean() {
        let mut c = 1.0;
        let atoms: Vec<_> = (0..=8)
            .map(|x| {
                let a = (x as f64, c);
                c = c * (8 - x) as f64 / (x + 1) as f64;
                a
            })
            .collect();
        let s = ExactSampler::new(model(&atoms, 8.0));
        let mut rng = stream_rng(11, StreamKey::new(phase::TEST, 0, 0));
        let draws = s.draw_many(b(0.0), 10_000, &mut rng).unwrap();
        let mean = draws.iter().sum::<f64>() / 1e4;
        assert!((mean - 4.0).abs() <= 3.0 * 2f64.sqrt() / 100.0, "mean {mean}");
    }

    #[test]
    fn chi_square_fit() {
        let m = model(&[(0.0, 1.0), (1.0, 2.0), (4.0, 1.0)], 4.0);
        let probs: Vec<f64> = m
            .log_probabilities(b(0.7))
            .unwrap()
            .into_iter()
            .map(f64::exp)
            .collect();
        let s = ExactSampler::new(m);
        let mut rng = stream_rng(5, StreamKey::new(phase::TEST, 0, 0));
        let n = 100_000;
        let draws = s.draw_many(b(0.7), n, &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for x in draws {
            counts[[0.0, 1.0, 4.0].iter().position(|&v| v == x).unwrap()] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&o, p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // Upper 1% point of chi-square with 2 degrees of freedom: -2 ln(0.01).
        assert!(chi2 < -2.0 * 0.01f64.ln(), "chi2 = {chi2}");
    }

    #[test]
    fn batch_accounting() {
        let four = ExactSampler::new(model(&[(4.0, 1.0)], 4.0));
        let mut session = OracleSession::new(&four, spec(), 9);
        let out = session.execute_batch(&BatchRequest::new(), phase::TEST).unwrap();
        assert!(out.is_empty());
        assert_eq!(session.stats().rounds, 0);

        let mut req = BatchRequest::new();
        req.push(b(0.0), 3).push(b(1.0), 2);
        let out = session.execute_batch(&req, phase::TEST).unwrap();
        assert_eq!(out, vec![vec![4.0; 3], vec![4.0; 2]]);
        assert_eq!(session.stats().rounds, 1);
        assert_eq!(session.stats().total_samples, 5);
        session.execute_batch(&req, phase::TEST).unwrap();
        assert_eq!(session.stats().rounds, 2);
        assert_eq!(session.stats().per_beta[&b(0.0)], 6);
        let total: u64 = session.stats().per_beta.values().sum();
        assert_eq!(total, session.stats().total_samples);
    }

    #[test]
    fn batch_rejects_out_of_range() {
        let four = ExactSampler::new(model(&[(4.0, 1.0)], 4.0));
        let mut session = OracleSession::new(&four, spec(), 9);
        let mut req = BatchRequest::new();
        req.push(b(1.5), 1);
        assert!(matches!(
            session.execute_batch(&req, phase::TEST),
            Err(Error::OutOfRange { .. })
        ));
        assert_eq!(session.stats().rounds, 0);
        assert_eq!(session.stats().total_samples, 0);
    }

    #[test]
    fn keyed_items_ignore_order() {
        let m = model(&[(0.0, 1.0), (1.0, 2.0), (4.0, 1.0)], 4.0);
        let s = ExactSampler::new(m);
        let mut forward = BatchRequest::new();
        forward.push_keyed(b(0.1), 50, 0, 0).push_keyed(b(0.9), 50, 1, 0);
        let mut reversed = BatchRequest::new();
        reversed.push_keyed(b(0.9), 50, 1, 0).push_keyed(b(0.1), 50, 0, 0);
        let a = OracleSession::new(&s, spec(), 42)
            .execute_batch(&forward, phase::TEST)
            .unwrap();
        let c = OracleSession::new(&s, spec(), 42)
            .execute_batch(&reversed, phase::TEST)
            .unwrap();
        assert_eq!(a[0], c[1]);
        assert_eq!(a[1], c[0]);
        let d = OracleSession::new(&s, spec(), 43)
            .execute_batch(&forward, phase::TEST)
            .unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn streams_differ_by_key() {
        let mut a = stream_rng(1, StreamKey::new(1, 0, 0));
        let mut b = stream_rng(1, StreamKey::new(1, 0, 1));
        let mut c = stream_rng(1, StreamKey::new(1, 0, 0));
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_eq!(x, z);
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
    }
}

#[cfg(test)]
mod budget_tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn oversized_batches_fail_before_sampling() {
        let fx = fixtures::get("three").unwrap();
        let oracle = ExactSampler::new(fx.model.clone());
        let mut session = OracleSession::new(&oracle, fx.spec, 1);
        let mut req = BatchRequest::new();
        req.push(Beta::ZERO, (MAX_ITEM_SAMPLES + 1) as usize);
        assert!(matches!(
            session.execute_batch(&req, phase::TEST),
            Err(Error::SampleBudget { scope: "at one inverse temperature", .. })
        ));
        let mut req = BatchRequest::new();
        for _ in 0..(MAX_BATCH_SAMPLES / MAX_ITEM_SAMPLES + 1) {
            req.push(Beta::ZERO, MAX_ITEM_SAMPLES as usize);
        }
        assert!(matches!(
            session.execute_batch(&req, phase::TEST),
            Err(Error::SampleBudget { scope: "in one batch", .. })
        ));
        assert_eq!(session.stats(), &OracleStats::default());
    }
}
