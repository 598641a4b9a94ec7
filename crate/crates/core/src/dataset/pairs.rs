use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{Candidate, CandidateSet};
use crate::error::{Error, Result};

pub const DEFAULT_POINT_LIGHT_PROBABILITY: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairSamplerConfig {
    /// Probability that the first reference comes from the point-light tier.
    pub p: f64,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        PairSamplerConfig {
            p: DEFAULT_POINT_LIGHT_PROBABILITY,
        }
    }
}

impl PairSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("pair sampler p = {} outside [0, 1]", self.p)));
        }
        Ok(())
    }
}

/// Indices of the two reference images inside their candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferencePair {
    pub first: usize,
    pub second: usize,
}

impl ReferencePair {
    pub fn resolve<'a>(&self, cands: &'a CandidateSet) -> (&'a Candidate, &'a Candidate) {
        (&cands.entries[self.first], &cands.entries[self.second])
    }
}

/// Draws `I1` from the point-light tier with probability `p` (else from the
/// environment tier), uniformly within the tier, then `I2` uniformly from the
/// candidates at the same azimuth or one grid step away. `I2` may carry any
/// lighting, and may coincide with `I1`.
pub fn sample_reference_pair<R: Rng + ?Sized>(
    cands: &CandidateSet,
    cfg: &PairSamplerConfig,
    rng: &mut R,
) -> Result<ReferencePair> {
    cfg.validate()?;
    let point = cands.point_tier();
    let env = cands.env_tier();
    if (cfg.p > 0.0 && point.is_empty()) || (cfg.p < 1.0 && env.is_empty()) {
        return Err(Error::Config(format!(
            "candidate set has an empty lighting tier ({} point, {} env) for p = {}",
            point.len(),
            env.len(),
            cfg.p
        )));
    }
    let tier = if rng.gen::<f64>() < cfg.p { &point } else { &env };
    let first = tier[rng.gen_range(0..tier.len())];
    let neighbors = cands.azimuth_neighbors(first);
    let second = neighbors[rng.gen_range(0..neighbors.len())];
    Ok(ReferencePair { first, second })
}
