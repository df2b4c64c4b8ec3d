//! Seeded random streams. Everything stochastic in the crate goes through
//! ChaCha8 so that a `u64` seed pins results across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type FmRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> FmRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent stream for `(seed, stream)`; used to give each sub-task
/// (trajectory, ensemble member, repetition) its own reproducible randomness.
pub fn substream(seed: u64, stream: u64) -> FmRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn normal_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn uniform_box_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// The latent distribution `p0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// `N(0, I_d)`.
    #[default]
    Gaussian,
    /// Uniform on `[-1, 1]^d`.
    UniformBox,
}

impl SourceKind {
    pub fn draw(self, rng: &mut impl Rng, d: usize) -> Vec<f64> {
        match self {
            SourceKind::Gaussian => normal_vec(rng, d),
            SourceKind::UniformBox => uniform_box_vec(rng, d),
        }
    }

    pub fn draw_batch(self, rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.draw(rng, d)).collect()
    }
}
