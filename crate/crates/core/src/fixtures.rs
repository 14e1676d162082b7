//! Models and problem boxes shipped with the crate.

use rand::Rng;

use crate::beta::ProblemSpec;
use crate::gibbs::{Atom, GrossModel};
use crate::oracle::{phase, stream_rng, StreamKey};

/// Seed the 100-atom random fixture was generated from.
pub const RANDOM_MODEL_SEED: u64 = 7177;

#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub model: GrossModel,
    pub spec: ProblemSpec,
}

macro_rules! fixture_source {
    ($name:literal) => {
        (
            $name,
            include_str!(concat!("../fixtures/", $name, ".model.json")),
            include_str!(concat!("../fixtures/", $name, ".spec.json")),
        )
    };
}

const SOURCES: [(&str, &str, &str); 6] = [
    fixture_source!("zero"),
    fixture_source!("single"),
    fixture_source!("two"),
    fixture_source!("three"),
    fixture_source!("binomial"),
    fixture_source!("random100"),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|s| s.0)
}

pub fn get(name: &str) -> Option<Fixture> {
    SOURCES.iter().find(|s| s.0 == name).map(|&(name, model, spec)| Fixture {
        name,
        model: GrossModel::from_json(model).expect("fixture model parses"),
        spec: serde_json::from_str(spec).expect("fixture spec parses"),
    })
}

pub fn all() -> Vec<Fixture> {
    names().map(|n| get(n).expect("listed fixture")).collect()
}

/// A model with an atom `(0, 1)` plus `atoms - 1` random atoms with energies
/// in `[1, n]` (3 decimals) and weights in `[e^-2, e^2]` (4 decimals).
pub fn random_model(seed: u64, atoms: usize, n: f64) -> GrossModel {
    let mut rng = stream_rng(seed, StreamKey::new(phase::TEST, 0, 0));
    let mut list = vec![Atom { x: 0.0, c: 1.0 }];
    while list.len() < atoms {
        let x = ((1.0 + (n - 1.0) * rng.gen::<f64>()) * 1e3).round() / 1e3;
        let c = ((rng.gen::<f64>() * 4.0 - 2.0).exp() * 1e4).round() / 1e4;
        if list.iter().all(|a| a.x != x) {
            list.push(Atom { x, c });
        }
    }
    GrossModel::new(list, n).expect("generated atoms are admissible")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_consistent() {
        for fx in all() {
            fx.model.check_spec(&fx.spec).unwrap_or_else(|e| panic!("{}: {e}", fx.name));
        }
    }

    #[test]
    fn random_fixture_matches_generator() {
        let fx = get("random100").unwrap();
        assert_eq!(fx.model, random_model(RANDOM_MODEL_SEED, 100, 16.0));
    }
}
