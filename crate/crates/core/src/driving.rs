//! Driving systems θ on Ω and their orbits (θ^n ω).
//!
//! A driving state is addressed by an integer time index relative to a
//! seeded base point, so `state(n)` is θ^n ω. Bernoulli symbols are drawn
//! from a counter-based stream keyed by `(seed, n)`, which makes any finite
//! window reproducible and lets it be extended in both directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DrivingKind {
    Identity,
    /// Circle rotation by `angle` turns.
    Rotation { angle: f64 },
    /// Full shift on `alphabet` symbols with i.i.d. letters.
    Bernoulli { alphabet: usize, probabilities: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingSpec {
    #[serde(flatten)]
    pub kind: DrivingKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DrivingState {
    Fixed,
    Phase(f64),
    Symbol(usize),
}

impl DrivingState {
    /// Index of the linear part used at this state when `count` matrices are given.
    /// Phases are split into `count` equal arcs.
    pub fn symbol(&self, count: usize) -> usize {
        match *self {
            DrivingState::Fixed => 0,
            DrivingState::Symbol(s) => s.min(count.saturating_sub(1)),
            DrivingState::Phase(p) => ((p * count as f64) as usize).min(count.saturating_sub(1)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DrivingSystem {
    spec: DrivingSpec,
    phase0: f64,
    cumulative: Vec<f64>,
}

fn zigzag(n: i64) -> u64 {
    ((n << 1) ^ (n >> 63)) as u64
}

impl DrivingSystem {
    /// Validates the spec and builds the sampler.
    pub fn new(spec: DrivingSpec) -> Result<Self> {
        let mut cumulative = Vec::new();
        match &spec.kind {
            DrivingKind::Identity => {}
            DrivingKind::Rotation { angle } => {
                if !(0.0..1.0).contains(angle) {
                    return Err(Error::Invalid(format!("rotation angle {angle} outside [0,1)")));
                }
            }
            DrivingKind::Bernoulli { alphabet, probabilities } => {
                if *alphabet == 0 || probabilities.len() != *alphabet {
                    return Err(Error::Invalid(format!(
                        "bernoulli alphabet {alphabet} needs {alphabet} probabilities, got {}",
                        probabilities.len()
                    )));
                }
                if probabilities.iter().any(|p| !(*p >= 0.0)) {
                    return Err(Error::Invalid("probabilities must be non-negative".into()));
                }
                let total: f64 = probabilities.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Invalid(format!("probabilities sum to {total}, not 1")));
                }
                let mut acc = 0.0;
                for p in probabilities {
                    acc += p;
                    cumulative.push(acc);
                }
            }
        }
        let phase0 = match spec.kind {
            DrivingKind::Rotation { .. } => ChaCha8Rng::seed_from_u64(spec.seed).random::<f64>(),
            _ => 0.0,
        };
        Ok(Self { spec, phase0, cumulative })
    }

    pub fn identity() -> Self {
        Self::new(DrivingSpec { kind: DrivingKind::Identity, seed: 0 }).expect("identity is valid")
    }

    pub fn spec(&self) -> &DrivingSpec {
        &self.spec
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.spec.kind, DrivingKind::Identity)
    }

    /// θ^n ω for the seeded base point ω.
    pub fn state(&self, n: i64) -> DrivingState {
        match &self.spec.kind {
            DrivingKind::Identity => DrivingState::Fixed,
            DrivingKind::Rotation { angle } => {
                DrivingState::Phase((self.phase0 + n as f64 * angle).rem_euclid(1.0))
            }
            DrivingKind::Bernoulli { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
                rng.set_stream(zigzag(n));
                let u: f64 = rng.random();
                let s = self.cumulative.iter().position(|&c| u < c).unwrap_or(self.cumulative.len() - 1);
                DrivingState::Symbol(s)
            }
        }
    }

    /// The window (θ^n ω) for n in [-half, half].
    pub fn orbit(&self, half: usize) -> OmegaOrbit {
        self.orbit_around(0, half)
    }

    /// The window around θ^center ω.
    pub fn orbit_around(&self, center: i64, half: usize) -> OmegaOrbit {
        let h = half as i64;
        let states = (-h..=h).map(|n| self.state(center + n)).collect();
        OmegaOrbit { states, origin: half, center }
    }
}

/// A finite window of a driving orbit, indexed by n in [-N, N].
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaOrbit {
    states: Vec<DrivingState>,
    origin: usize,
    center: i64,
}

impl OmegaOrbit {
    pub fn half_width(&self) -> usize {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Absolute time index of the window's origin.
    pub fn center(&self) -> i64 {
        self.center
    }

    pub fn get(&self, n: i64) -> Option<DrivingState> {
        let idx = self.origin as i64 + n;
        if idx < 0 {
            return None;
        }
        self.states.get(idx as usize).copied()
    }

    pub fn states(&self) -> &[DrivingState] {
        &self.states
    }
}
