//! Seeded randomness shared by every stochastic routine.
//!
//! All streams are ChaCha8 seeded from a `u64`; normal deviates come from the
//! Box–Muller transform so results depend only on the seed and this build.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded_stream(seed: u64, stream: u64) -> Rng64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard normal deviates, generated in Box–Muller pairs.
pub struct BoxMuller {
    rng: Rng64,
    spare: Option<f64>,
}

impl BoxMuller {
    pub fn new(rng: Rng64) -> Self {
        Self { rng, spare: None }
    }

    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U maps [0, 1) onto (0, 1] so the log is finite.
        let u1 = 1.0 - self.rng.gen::<f64>();
        let u2 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn into_inner(self) -> Rng64 {
        self.rng
    }
}
