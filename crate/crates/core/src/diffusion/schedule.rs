use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tokenizer::MASK;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `beta(t) = t`, `w(t) = 1/t`.
    #[default]
    Linear,
    /// `beta(t) = 1 - cos(pi t / 2)`, `w(t) = beta'(t) / beta(t)`.
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::invalid(format!("unknown schedule {s:?}"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Cosine => "cosine",
        })
    }
}

/// Absorbing-state masking schedule over `t in (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub t_eps: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            t_eps: 1e-3,
        }
    }
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    /// Probability that a token is masked at time `t`.
    pub fn mask_prob(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t,
            ScheduleKind::Cosine => 1.0 - (FRAC_PI_2 * t).cos(),
        }
    }

    /// Loss weight at time `t`.
    pub fn weight(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0 / t,
            ScheduleKind::Cosine => FRAC_PI_2 * (FRAC_PI_2 * t).sin() / self.mask_prob(t),
        }
    }

    pub fn sample_t<R: Rng>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.t_eps..=1.0)
    }

    /// Masks each position independently with probability `mask_prob(t)`.
    pub fn mask_with<R: Rng>(&self, x0: &[u32], t: f64, rng: &mut R) -> (Vec<u32>, Vec<bool>) {
        let p = self.mask_prob(t);
        let mut xt = Vec::with_capacity(x0.len());
        let mut flags = Vec::with_capacity(x0.len());
        for &x in x0 {
            let m = rng.gen::<f64>() < p;
            xt.push(if m { MASK } else { x });
            flags.push(m);
        }
        (xt, flags)
    }
}

/// Linear-schedule forward process on one block, seeded.
pub fn forward_mask(x0: &[u32], t: f64, seed: u64) -> Result<(Vec<u32>, Vec<bool>)> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("t = {t} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(NoiseSchedule::default().mask_with(x0, t, &mut rng))
}
