use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::density::Channel;
use crate::error::{invalid, Result};

/// Noise applied to the reservoir circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    /// Finite number of measurement shots per step.
    Sampling { shots: u64 },
    Depolarizing { p: f64 },
    AmplitudeDamping { p: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Sampling { shots } if shots == 0 => Err(invalid("shot count must be at least 1")),
            NoiseModel::Depolarizing { p } | NoiseModel::AmplitudeDamping { p } if !(0.0..=1.0).contains(&p) => {
                Err(invalid("noise probability must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    pub fn channel(&self) -> Option<Channel> {
        match *self {
            NoiseModel::Depolarizing { p } => Some(Channel::Depolarizing(p)),
            NoiseModel::AmplitudeDamping { p } => Some(Channel::AmplitudeDamping(p)),
            _ => None,
        }
    }
}

/// Empirical frequencies of `shots` multinomial draws from `probs`.
///
/// Drawn as a chain of conditional binomials.
pub fn sample_shots<R: Rng>(probs: &[f64], shots: u64, rng: &mut R) -> Result<Vec<f64>> {
    if shots == 0 {
        return Err(invalid("shot count must be at least 1"));
    }
    let mut remaining = shots;
    let mut mass: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    let mut out = Vec::with_capacity(probs.len());
    for &p in probs {
        let p = p.max(0.0);
        let count = if remaining == 0 || mass <= 0.0 {
            0
        } else if p >= mass {
            remaining
        } else {
            Binomial::new(remaining, (p / mass).clamp(0.0, 1.0))
                .map_err(|_| invalid("invalid binomial parameters"))?
                .sample(rng)
        };
        remaining -= count;
        mass -= p;
        out.push(count as f64 / shots as f64);
    }
    Ok(out)
}
