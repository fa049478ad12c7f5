use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::variance_bounds::SamplingRegime;

/// One-dimensional training input distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sampler {
    Uniform { lo: f64, hi: f64 },
    /// Density `4 |1 - x|` on `[0.5, 1.5]`, vanishing at `x = 1`.
    VanishingAbs,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::Uniform { lo: 0.5, hi: 1.5 }
    }
}

impl Sampler {
    pub fn regime(&self) -> SamplingRegime {
        match self {
            Sampler::Uniform { .. } => SamplingRegime::Uniform,
            Sampler::VanishingAbs => SamplingRegime::Vanishing,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match *self {
            Sampler::Uniform { lo, hi } => lo + (hi - lo) * u,
            // inverse of F(x) = 4x - 2x^2 - 1.5 on [0.5, 1], mirrored above 1
            Sampler::VanishingAbs => {
                if u < 0.5 {
                    1.0 - 0.5 * (1.0 - 2.0 * u).sqrt()
                } else {
                    1.0 + 0.5 * (2.0 * u - 1.0).sqrt()
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

/// Generator for replication `stream` under a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Text recorded in output headers describing [`stream_rng`].
pub fn seed_scheme(seed: u64) -> String {
    format!("seed={seed}; replication r uses ChaCha8(seed_from_u64({seed})) on stream r")
}
