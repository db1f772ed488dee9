//! Uniform variates for the sampler.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A stream of uniform variates in `[0, 1)`.
pub trait EntropySource: Send {
    fn next_uniform(&mut self) -> f64;
}

/// Cryptographically secure generator seeded from the operating system.
pub struct SystemEntropy(StdRng);

impl SystemEntropy {
    pub fn new() -> Self {
        SystemEntropy(StdRng::from_os_rng())
    }
}

impl Default for SystemEntropy {
    fn default() -> Self {
        Self::new()
    }
}

impl EntropySource for SystemEntropy {
    fn next_uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

/// Deterministic ChaCha20 stream for reproducible runs and tests.
#[derive(Clone)]
pub struct SeededEntropy(ChaCha20Rng);

impl SeededEntropy {
    pub fn new(seed: u64) -> Self {
        SeededEntropy(ChaCha20Rng::seed_from_u64(seed))
    }
}

impl EntropySource for SeededEntropy {
    fn next_uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

/// Replays a fixed list of variates, then repeats the last one.
#[derive(Debug, Clone)]
pub struct ScriptedEntropy {
    values: Vec<f64>,
    pos: usize,
}

impl ScriptedEntropy {
    pub fn new(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "scripted entropy needs at least one value");
        assert!(
            values.iter().all(|v| (0.0..1.0).contains(v)),
            "variates must lie in [0, 1)"
        );
        ScriptedEntropy { values, pos: 0 }
    }
}

impl EntropySource for ScriptedEntropy {
    fn next_uniform(&mut self) -> f64 {
        let v = self.values[self.pos.min(self.values.len() - 1)];
        self.pos += 1;
        v
    }
}

impl<E: EntropySource + ?Sized> EntropySource for Box<E> {
    fn next_uniform(&mut self) -> f64 {
        (**self).next_uniform()
    }
}
