//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the crate's own LP or payoff code.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nlbox::behavior::Behavior;

/// The 16 deterministic strategies for binary inputs and outputs, as
/// `(a(0), a(1), b(0), b(1))`.
pub fn binary_vertices() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(16);
    for code in 0..16usize {
        out.push([code & 1, (code >> 1) & 1, (code >> 2) & 1, (code >> 3) & 1]);
    }
    out
}

/// Infinity-norm distance to the local polytope of a 2x2x2x2 behavior,
/// solved with minilp.
pub fn oracle_local_distance(p: &Behavior) -> f64 {
    let verts = binary_vertices();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let w: Vec<_> = verts.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect();
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    for x in 0..2 {
        for y in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let mut upper = vec![(t, -1.0)];
                    let mut lower = vec![(t, 1.0)];
                    for (k, v) in verts.iter().enumerate() {
                        if v[x] == a && v[2 + y] == b {
                            upper.push((w[k], 1.0));
                            lower.push((w[k], 1.0));
                        }
                    }
                    let target = p.prob(x, y, a, b);
                    lp.add_constraint(upper.as_slice(), ComparisonOp::Le, target);
                    lp.add_constraint(lower.as_slice(), ComparisonOp::Ge, target);
                }
            }
        }
    }
    let sum: Vec<_> = w.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(sum.as_slice(), ComparisonOp::Eq, 1.0);
    lp.solve().expect("oracle program solves").objective()
}

/// Winning probabilities of the eight CHSH variants
/// `a xor b = xy xor ax xor by xor c` under uniform inputs. Every local
/// behavior scores at most 3/4 on each; a 2x2x2x2 no-signaling behavior is
/// local iff it does.
pub fn chsh_facets(p: &Behavior) -> Vec<f64> {
    let mut out = Vec::with_capacity(8);
    for alpha in 0..2 {
        for beta in 0..2 {
            for gamma in 0..2 {
                let mut win = 0.0;
                for x in 0..2 {
                    for y in 0..2 {
                        for a in 0..2 {
                            for b in 0..2 {
                                if a ^ b == (x & y) ^ (alpha & x) ^ (beta & y) ^ gamma {
                                    win += p.prob(x, y, a, b);
                                }
                            }
                        }
                    }
                }
                out.push(win / 4.0);
            }
        }
    }
    out
}

/// Expected CHSH payoff by direct summation over the 16 cells.
pub fn brute_force_chsh(p: &Behavior) -> f64 {
    let mut total = 0.0;
    for x in 0..2usize {
        for y in 0..2usize {
            for a in 0..2usize {
                for b in 0..2usize {
                    let sign = if (x * y) % 2 == (a + b) % 2 { 1.0 } else { -1.0 };
                    total += 0.25 * sign * p.prob(x, y, a, b);
                }
            }
        }
    }
    total
}

/// PR box conditional probabilities written out cell by cell.
pub fn pr_table(x: usize, y: usize, a: usize, b: usize) -> f64 {
    match (x, y) {
        (1, 1) if a != b => 0.5,
        (1, 1) => 0.0,
        _ if a == b => 0.5,
        _ => 0.0,
    }
}
