//! Benchmark systems used by the tests, the CLI and the bundled JSON files.

use serde_json::json;

use crate::driving::{DrivingKind, DrivingSpec};
use crate::system::{LinearPartSpec, NonlinearitySpec, RandomMapSystem, SystemFile};

fn diag_rows(diag: &[f64]) -> Vec<Vec<f64>> {
    (0..diag.len())
        .map(|i| (0..diag.len()).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
        .collect()
}

fn identity_driving() -> DrivingSpec {
    DrivingSpec { kind: DrivingKind::Identity, seed: 0 }
}

fn coin(seed: u64) -> DrivingSpec {
    DrivingSpec { kind: DrivingKind::Bernoulli { alphabet: 2, probabilities: vec![0.5, 0.5] }, seed }
}

fn build(file: SystemFile) -> RandomMapSystem {
    RandomMapSystem::from_file(&file).expect("catalog systems are valid")
}

fn quadratic(terms: &[(usize, usize, usize, f64)]) -> NonlinearitySpec {
    NonlinearitySpec { name: "quadratic".into(), params: json!({ "terms": terms }) }
}

fn zero() -> NonlinearitySpec {
    NonlinearitySpec { name: "zero".into(), params: json!({}) }
}

/// Constant diagonal linear map with scalar blocks.
pub fn linear_diag(diag: &[f64]) -> RandomMapSystem {
    linear_named("linear_diag", diag)
}

/// Λ = diag(2, 1/2), f = 0.
pub fn linear_saddle() -> RandomMapSystem {
    linear_named("linear_saddle", &[2.0, 0.5])
}

fn linear_named(name: &str, diag: &[f64]) -> RandomMapSystem {
    build(SystemFile {
        name: name.into(),
        dimension: diag.len(),
        blocks: vec![1; diag.len()],
        driving: identity_driving(),
        linear_part: LinearPartSpec { constant: Some(diag_rows(diag)), per_symbol: None },
        nonlinearity: zero(),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Λ = diag(1/2, 2, 3) with x₃ += φ(x₂), φ(s) = c·s²·b(s/w) a compactly supported bump.
pub fn bump_3d() -> RandomMapSystem {
    build(SystemFile {
        name: "bump_3d".into(),
        dimension: 3,
        blocks: vec![1, 1, 1],
        driving: identity_driving(),
        linear_part: LinearPartSpec { constant: Some(diag_rows(&[0.5, 2.0, 3.0])), per_symbol: None },
        nonlinearity: NonlinearitySpec {
            name: "bump_coupling".into(),
            params: json!({"source": 1, "target": 2, "scale": 0.5, "width": 1.0}),
        },
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Λ = diag(3, 1/2) with f = (a x_u² + b x_u x_s, c x_u x_s + e x_s²).
pub fn saddle_2d() -> RandomMapSystem {
    build(SystemFile {
        name: "saddle_2d".into(),
        dimension: 2,
        blocks: vec![1, 1],
        driving: identity_driving(),
        linear_part: LinearPartSpec { constant: Some(diag_rows(&[3.0, 0.5])), per_symbol: None },
        nonlinearity: quadratic(&[(0, 0, 0, 0.5), (0, 0, 1, 0.3), (1, 0, 1, 0.4), (1, 1, 1, 0.2)]),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Λ = diag(2, 1/2) with f = (0, c·x_u·x_s): the mixed-term normal-form benchmark.
pub fn coupled_2d(c: f64) -> RandomMapSystem {
    build(SystemFile {
        name: "coupled_2d".into(),
        dimension: 2,
        blocks: vec![1, 1],
        driving: identity_driving(),
        linear_part: LinearPartSpec { constant: Some(diag_rows(&[2.0, 0.5])), per_symbol: None },
        nonlinearity: quadratic(&[(1, 0, 1, c)]),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Fair-coin cocycle switching between diag(2, 1/8) and diag(4, 1/2).
pub fn bernoulli_diag() -> RandomMapSystem {
    build(SystemFile {
        name: "bernoulli_diag".into(),
        dimension: 2,
        blocks: vec![1, 1],
        driving: coin(7),
        linear_part: LinearPartSpec {
            constant: None,
            per_symbol: Some(vec![diag_rows(&[2.0, 0.125]), diag_rows(&[4.0, 0.5])]),
        },
        nonlinearity: zero(),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// The same random cocycle with an axis-preserving quadratic term.
pub fn bernoulli_quadratic() -> RandomMapSystem {
    build(SystemFile {
        name: "bernoulli_quadratic".into(),
        dimension: 2,
        blocks: vec![1, 1],
        driving: coin(7),
        linear_part: LinearPartSpec {
            constant: None,
            per_symbol: Some(vec![diag_rows(&[2.0, 0.125]), diag_rows(&[4.0, 0.5])]),
        },
        nonlinearity: quadratic(&[(0, 0, 0, 0.4), (1, 0, 1, 0.5)]),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Spectrum (ln4, ln2, −ln2): λ_1 + λ_3 = λ_2.
pub fn resonant_3d() -> RandomMapSystem {
    build(SystemFile {
        name: "resonant_3d".into(),
        dimension: 3,
        blocks: vec![1, 1, 1],
        driving: identity_driving(),
        linear_part: LinearPartSpec { constant: Some(diag_rows(&[4.0, 2.0, 0.5])), per_symbol: None },
        nonlinearity: quadratic(&[(1, 0, 2, 0.3)]),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Spectrum (ln8, ln2, −ln2): non-resonant but not bunched.
pub fn unbunched_3d() -> RandomMapSystem {
    build(SystemFile {
        name: "unbunched_3d".into(),
        dimension: 3,
        blocks: vec![1, 1, 1],
        driving: identity_driving(),
        linear_part: LinearPartSpec { constant: Some(diag_rows(&[8.0, 2.0, 0.5])), per_symbol: None },
        nonlinearity: quadratic(&[(0, 0, 1, 0.2), (2, 1, 2, 0.3)]),
        rho: 0.2,
        alpha: 1.0,
    })
}

/// Every bundled system, by file stem.
pub fn all() -> Vec<(&'static str, RandomMapSystem)> {
    vec![
        ("bump_3d", bump_3d()),
        ("saddle_2d", saddle_2d()),
        ("coupled_2d", coupled_2d(1.0)),
        ("bernoulli_diag", bernoulli_diag()),
        ("bernoulli_quadratic", bernoulli_quadratic()),
        ("linear_saddle", linear_saddle()),
        ("resonant_3d", resonant_3d()),
        ("unbunched_3d", unbunched_3d()),
    ]
}

/// The Belitskii-admissible subset used by the verification suites.
pub fn admissible() -> Vec<(&'static str, RandomMapSystem)> {
    all().into_iter().filter(|(n, _)| *n != "resonant_3d").collect()
}
