//! Locality decision: is a behavior a convex mixture of deterministic
//! product boxes?
//!
//! Every local strategy is a mixture of "vertices" where Alice answers a fixed
//! function `a(x)` and Bob a fixed `b(y)`. The decision enumerates all
//! `a_size^x_size * b_size^y_size` vertices and solves
//!
//! ```text
//! minimize t  subject to  |sum_k w_k D_k(cell) - P(cell)| <= t  for every cell,
//!                         sum_k w_k = 1,  w >= 0,  t >= 0
//! ```
//!
//! The optimum `t` is the infinity-norm distance from the behavior to the
//! local polytope; the behavior is local when it does not exceed the
//! tolerance.

use serde::{Deserialize, Serialize};

use crate::behavior::{Alphabets, Behavior, BehaviorError};
use crate::lp::{LinearProgram, LpError, Relation};

/// Default cap on the number of enumerated deterministic boxes.
pub const DEFAULT_VERTEX_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityCertificate {
    pub is_local: bool,
    /// Mixture weights, one per vertex in [`DeterministicVertex::from_index`]
    /// order. Present when local.
    pub weights: Option<Vec<f64>>,
    /// Infinity-norm distance to the local polytope. Present when nonlocal.
    pub violation_gap: Option<f64>,
}

/// One deterministic product box: Alice's answer per `x`, Bob's per `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeterministicVertex {
    pub alice: Vec<usize>,
    pub bob: Vec<usize>,
}

impl DeterministicVertex {
    /// Decodes vertex `index`. Alice's assignment varies slowest; within each
    /// assignment the answer for input 0 is the least significant digit.
    pub fn from_index(alphabets: &Alphabets, index: usize) -> Self {
        let bob_count = alphabets.b_size.pow(alphabets.y_size as u32);
        let digits = |mut code: usize, base: usize, len: usize| {
            (0..len)
                .map(|_| {
                    let d = code % base;
                    code /= base;
                    d
                })
                .collect::<Vec<_>>()
        };
        DeterministicVertex {
            alice: digits(index / bob_count, alphabets.a_size, alphabets.x_size),
            bob: digits(index % bob_count, alphabets.b_size, alphabets.y_size),
        }
    }

    pub fn prob(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        if self.alice[x] == a && self.bob[y] == b {
            1.0
        } else {
            0.0
        }
    }
}

/// Number of deterministic product boxes for the alphabets, if it fits in `u128`.
pub fn vertex_count(alphabets: &Alphabets) -> Option<u128> {
    let alice = (alphabets.a_size as u128).checked_pow(alphabets.x_size.try_into().ok()?)?;
    let bob = (alphabets.b_size as u128).checked_pow(alphabets.y_size.try_into().ok()?)?;
    alice.checked_mul(bob)
}

pub fn vertices(alphabets: &Alphabets, cap: usize) -> Result<Vec<DeterministicVertex>, BehaviorError> {
    let count = vertex_count(alphabets).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(BehaviorError::TooLargeToEnumerate { vertices: count, cap });
    }
    Ok((0..count as usize)
        .map(|k| DeterministicVertex::from_index(alphabets, k))
        .collect())
}

/// Decides locality at tolerance `tol` with the default vertex cap.
pub fn is_local(behavior: &Behavior, tol: f64) -> Result<LocalityCertificate, BehaviorError> {
    is_local_capped(behavior, tol, DEFAULT_VERTEX_CAP)
}

pub fn is_local_capped(behavior: &Behavior, tol: f64, cap: usize) -> Result<LocalityCertificate, BehaviorError> {
    let (distance, weights) = local_distance_capped(behavior, cap)?;
    Ok(if distance <= tol {
        LocalityCertificate {
            is_local: true,
            weights: Some(weights),
            violation_gap: None,
        }
    } else {
        LocalityCertificate {
            is_local: false,
            weights: None,
            violation_gap: Some(distance),
        }
    })
}

/// Infinity-norm distance from `behavior` to the local polytope, with the
/// optimal mixture weights.
pub fn local_distance(behavior: &Behavior) -> Result<(f64, Vec<f64>), BehaviorError> {
    local_distance_capped(behavior, DEFAULT_VERTEX_CAP)
}

fn local_distance_capped(behavior: &Behavior, cap: usize) -> Result<(f64, Vec<f64>), BehaviorError> {
    let alphabets = behavior.alphabets();
    let verts = vertices(&alphabets, cap)?;
    let nv = verts.len();
    let t = nv;

    let mut objective = vec![0.0; nv + 1];
    objective[t] = 1.0;
    let mut lp = LinearProgram::minimize(objective);

    for (x, y, a, b) in alphabets.cells() {
        let target = behavior.prob(x, y, a, b);
        let mut upper: Vec<f64> = verts.iter().map(|v| v.prob(x, y, a, b)).collect();
        let mut lower = upper.clone();
        upper.push(-1.0);
        lower.push(1.0);
        lp.add(upper, Relation::Le, target).map_err(internal)?;
        lp.add(lower, Relation::Ge, target).map_err(internal)?;
    }
    let mut simplex = vec![1.0; nv + 1];
    simplex[t] = 0.0;
    lp.add(simplex, Relation::Eq, 1.0).map_err(internal)?;

    let solution = lp.solve().map_err(internal)?;
    let mut weights = solution.x[..nv].to_vec();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok((solution.x[t], weights))
}

fn internal(e: LpError) -> BehaviorError {
    // The program is always feasible (any vertex with a large enough t) and
    // bounded below by t >= 0.
    BehaviorError::Malformed(format!("locality program failed: {e}"))
}

/// Reconstructs the table mixed by `weights` over the vertices.
pub fn mix_vertices(alphabets: &Alphabets, weights: &[f64]) -> Vec<f64> {
    let mut table = vec![0.0; alphabets.table_len()];
    for (k, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let v = DeterministicVertex::from_index(alphabets, k);
        for (x, &a) in v.alice.iter().enumerate() {
            for (y, &b) in v.bob.iter().enumerate() {
                table[alphabets.index(x, y, a, b)] += w;
            }
        }
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::{self, EPS_LP};

    #[test]
    fn vertex_decoding_covers_all_assignments() {
        let al = Alphabets::BINARY;
        let all = vertices(&al, DEFAULT_VERTEX_CAP).unwrap();
        assert_eq!(all.len(), 16);
        assert_eq!(
            all[0],
            DeterministicVertex {
                alice: vec![0, 0],
                bob: vec![0, 0]
            }
        );
        assert_eq!(
            all[1],
            DeterministicVertex {
                alice: vec![0, 0],
                bob: vec![1, 0]
            }
        );
        assert_eq!(
            all[4],
            DeterministicVertex {
                alice: vec![1, 0],
                bob: vec![0, 0]
            }
        );
        let mut seen = std::collections::HashSet::new();
        for v in &all {
            assert!(seen.insert((v.alice.clone(), v.bob.clone())));
        }
    }

    #[test]
    fn pr_box_is_nonlocal() {
        let cert = is_local(&behavior::pr_box(), EPS_LP).unwrap();
        assert!(!cert.is_local);
        // The CHSH payoff moves by at most 4t when each cell moves by t, and
        // PR exceeds the local bound by 1/2, so t >= 1/8.
        assert!(cert.violation_gap.unwrap() >= 0.125 - 1e-9);
        assert!(cert.weights.is_none());
    }

    #[test]
    fn deterministic_box_is_its_own_vertex() {
        let b = behavior::local_deterministic(2, 2, &[0, 0], &[0, 0]).unwrap();
        let cert = is_local(&b, EPS_LP).unwrap();
        assert!(cert.is_local);
        let w = cert.weights.unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
        assert!(w[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn uniform_box_is_local_and_reconstructed() {
        let u = behavior::uniform_box();
        let cert = is_local(&u, EPS_LP).unwrap();
        assert!(cert.is_local);
        let mixed = mix_vertices(&u.alphabets(), &cert.weights.unwrap());
        for (m, p) in mixed.iter().zip(u.table()) {
            assert!((m - p).abs() <= EPS_LP);
        }
    }

    #[test]
    fn larger_alphabets_within_cap() {
        // Three outputs for Alice, three inputs for Bob: 3^2 * 2^3 = 72 vertices.
        let b = behavior::local_deterministic(3, 2, &[2, 1], &[0, 1, 1]).unwrap();
        assert!(is_local(&b, EPS_LP).unwrap().is_local);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let b = behavior::local_deterministic(2, 2, &[0; 7], &[0; 7]).unwrap();
        assert!(matches!(
            is_local(&b, EPS_LP),
            Err(BehaviorError::TooLargeToEnumerate {
                vertices: 16384,
                cap: 4096
            })
        ));
        let smaller = behavior::local_deterministic(2, 2, &[1; 5], &[0; 5]).unwrap();
        assert!(matches!(
            is_local_capped(&smaller, EPS_LP, 1000),
            Err(BehaviorError::TooLargeToEnumerate {
                vertices: 1024,
                cap: 1000
            })
        ));
        assert!(is_local_capped(&smaller, EPS_LP, 1024).unwrap().is_local);
    }
}
