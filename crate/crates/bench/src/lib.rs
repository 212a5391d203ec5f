//! Shared fixtures for the benchmarks.

use smoothlin_core::spectrum::lyapunov_exponents;
use smoothlin_core::{catalog, ConstantsBudget, RandomMapSystem, Spectrum};

pub struct Fixture {
    pub sys: RandomMapSystem,
    pub spec: Spectrum,
    pub budget: ConstantsBudget,
}

/// Extended catalog system with its spectrum and constants; panics on unknown names.
pub fn fixture(name: &str) -> Fixture {
    let (_, raw) = catalog::all().into_iter().find(|(n, _)| *n == name).expect("catalog system");
    let sys = raw.extend();
    let spec = lyapunov_exponents(&sys, 3000, 0).expect("spectrum");
    let budget = ConstantsBudget::new(&spec, sys.alpha()).expect("non-resonant");
    Fixture { sys, spec, budget }
}
