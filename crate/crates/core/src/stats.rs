//! Empirical distributions and total-variation checks.

use serde::{Deserialize, Serialize};

use crate::behavior::{Alphabets, Behavior, Side};
use crate::sampling::TransactionSample;

/// Half the L1 distance between two distributions on the same support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share a support");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Normalizes counts; an all-zero vector stays all zero.
pub fn frequencies(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Counts of `(a, b)` per input pair `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalBehavior {
    pub alphabets: Alphabets,
    pub counts: Vec<u64>,
}

impl EmpiricalBehavior {
    pub fn new(alphabets: Alphabets) -> Self {
        EmpiricalBehavior {
            alphabets,
            counts: vec![0; alphabets.table_len()],
        }
    }

    pub fn from_samples(alphabets: Alphabets, samples: &[TransactionSample]) -> Self {
        let mut emp = Self::new(alphabets);
        for s in samples {
            emp.record(s.x, s.y, s.a, s.b);
        }
        emp
    }

    pub fn record(&mut self, x: usize, y: usize, a: usize, b: usize) {
        self.counts[self.alphabets.index(x, y, a, b)] += 1;
    }

    fn block(&self, x: usize, y: usize) -> &[u64] {
        let start = self.alphabets.index(x, y, 0, 0);
        &self.counts[start..start + self.alphabets.a_size * self.alphabets.b_size]
    }

    pub fn total(&self, x: usize, y: usize) -> u64 {
        self.block(x, y).iter().sum()
    }

    /// Empirical `P(a,b|x,y)` flattened with `b` fastest.
    pub fn distribution(&self, x: usize, y: usize) -> Vec<f64> {
        frequencies(self.block(x, y))
    }

    /// TV distance to `behavior` for every input pair, as `((x, y), tv)`.
    pub fn tv_against(&self, behavior: &Behavior) -> Vec<((usize, usize), f64)> {
        let al = self.alphabets;
        let mut out = Vec::with_capacity(al.x_size * al.y_size);
        for x in 0..al.x_size {
            for y in 0..al.y_size {
                out.push(((x, y), tv_distance(&self.distribution(x, y), behavior.joint(x, y))));
            }
        }
        out
    }

    /// TV distance to another empirical table for every input pair.
    pub fn tv_between(&self, other: &EmpiricalBehavior) -> Vec<((usize, usize), f64)> {
        let al = self.alphabets;
        let mut out = Vec::new();
        for x in 0..al.x_size {
            for y in 0..al.y_size {
                out.push(((x, y), tv_distance(&self.distribution(x, y), &other.distribution(x, y))));
            }
        }
        out
    }
}

/// How samples were grouped when comparing one party's output distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stratum {
    /// By the counterpart's input.
    CounterpartInput,
    /// By which party used the transaction first.
    FirstMover,
}

/// Largest TV distance between strata of one party's output distribution
/// for one of its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratifiedDeviation {
    pub side: Side,
    pub input: usize,
    pub stratum: Stratum,
    pub max_tv: f64,
    /// Smallest stratum size that entered the comparison.
    pub min_stratum_size: u64,
}

/// Observable no-signaling check: for each party and input, compares the
/// party's output distribution across strata of the counterpart's input and
/// of the first mover.
pub fn stratified_no_signaling(alphabets: Alphabets, samples: &[TransactionSample]) -> Vec<StratifiedDeviation> {
    let mut out = Vec::new();
    for side in [Side::Alice, Side::Bob] {
        let n_inputs = alphabets.input_size(side);
        let n_outputs = alphabets.output_size(side);
        let n_counter = alphabets.input_size(side.other());
        for input in 0..n_inputs {
            for stratum in [Stratum::CounterpartInput, Stratum::FirstMover] {
                let groups = match stratum {
                    Stratum::CounterpartInput => n_counter,
                    Stratum::FirstMover => 2,
                };
                let mut counts = vec![vec![0u64; n_outputs]; groups];
                for s in samples {
                    let (own_in, own_out, counter_in) = match side {
                        Side::Alice => (s.x, s.a, s.y),
                        Side::Bob => (s.y, s.b, s.x),
                    };
                    if own_in != input {
                        continue;
                    }
                    let g = match stratum {
                        Stratum::CounterpartInput => counter_in,
                        Stratum::FirstMover => usize::from(s.first == Side::Bob),
                    };
                    counts[g][own_out] += 1;
                }
                let populated: Vec<&Vec<u64>> = counts.iter().filter(|c| c.iter().sum::<u64>() > 0).collect();
                let min_stratum_size = populated.iter().map(|c| c.iter().sum::<u64>()).min().unwrap_or(0);
                let mut max_tv: f64 = 0.0;
                for (i, p) in populated.iter().enumerate() {
                    for q in &populated[i + 1..] {
                        max_tv = max_tv.max(tv_distance(&frequencies(p), &frequencies(q)));
                    }
                }
                out.push(StratifiedDeviation {
                    side,
                    input,
                    stratum,
                    max_tv,
                    min_stratum_size,
                });
            }
        }
    }
    out
}

/// Output distribution of `side` for its `input`, pooled over everything else.
pub fn local_marginal(alphabets: Alphabets, samples: &[TransactionSample], side: Side, input: usize) -> Vec<f64> {
    let mut counts = vec![0u64; alphabets.output_size(side)];
    for s in samples {
        match side {
            Side::Alice if s.x == input => counts[s.a] += 1,
            Side::Bob if s.y == input => counts[s.b] += 1,
            _ => {}
        }
    }
    frequencies(&counts)
}
