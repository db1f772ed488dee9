//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min c.x` subject to row constraints (`<=`, `>=`, `=`) and `x >= 0`.
//! Dantzig pricing with a lexicographic ratio test. Sized for the few
//! hundred rows and few thousand columns the locality decision produces.

use thiserror::Error;

const PIVOT_EPS: f64 = 1e-9;
const REDUCED_EPS: f64 = 1e-10;
const RATIO_EPS: f64 = 1e-12;
const FEASIBILITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    IterationLimit(usize),
    #[error("constraint has {actual} coefficients, expected {expected}")]
    Shape { expected: usize, actual: usize },
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl LinearProgram {
    /// A program minimizing `objective . x`.
    pub fn minimize(objective: Vec<f64>) -> Self {
        LinearProgram {
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Result<(), LpError> {
        if coeffs.len() != self.num_vars() {
            return Err(LpError::Shape {
                expected: self.num_vars(),
                actual: coeffs.len(),
            });
        }
        self.constraints.push(Constraint { coeffs, relation, rhs });
        Ok(())
    }

    pub fn solve(&self) -> Result<Solution, LpError> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 2)`: coefficients, then the right-hand side, then a
    /// perturbation column that breaks ratio-test ties lexicographically.
    cells: Vec<f64>,
    basis: Vec<usize>,
    first_artificial: usize,
    max_pivots: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.constraints.len();
        let slacks = lp.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        let first_artificial = n + slacks;
        // rows whose slack starts feasible need no artificial
        let needs_artificial: Vec<bool> = lp
            .constraints
            .iter()
            .map(|c| match c.relation {
                Relation::Le => c.rhs < 0.0,
                Relation::Ge => c.rhs > 0.0,
                Relation::Eq => true,
            })
            .collect();
        let artificials = needs_artificial.iter().filter(|&&a| a).count();
        let cols = first_artificial + artificials;
        let width = cols + 2;
        let mut cells = vec![0.0; m * width];
        let mut basis = Vec::with_capacity(m);

        let mut slack = n;
        let mut artificial = first_artificial;
        for (i, c) in lp.constraints.iter().enumerate() {
            let row = &mut cells[i * width..(i + 1) * width];
            row[..n].copy_from_slice(&c.coeffs);
            row[cols] = c.rhs;
            let own_slack = match c.relation {
                Relation::Le => Some((slack, 1.0)),
                Relation::Ge => Some((slack, -1.0)),
                Relation::Eq => None,
            };
            if let Some((j, sign)) = own_slack {
                row[j] = sign;
                slack += 1;
            }
            if row[cols] < 0.0 || (c.relation == Relation::Ge && row[cols] == 0.0) {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row[cols + 1] = perturbation(i);
            if needs_artificial[i] {
                row[artificial] = 1.0;
                basis.push(artificial);
                artificial += 1;
            } else {
                basis.push(own_slack.expect("only slack rows skip the artificial").0);
            }
        }

        Tableau {
            rows: m,
            cols,
            cells,
            basis,
            first_artificial,
            max_pivots: 50 * (m + cols) + 1000,
        }
    }

    #[inline]
    fn width(&self) -> usize {
        self.cols + 2
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn run(mut self, lp: &LinearProgram) -> Result<Solution, LpError> {
        let mut pivots = 0;

        // Phase 1: drive the artificial variables to zero.
        if self.first_artificial < self.cols {
            let phase1: Vec<f64> = (0..self.cols)
                .map(|j| if j >= self.first_artificial { 1.0 } else { 0.0 })
                .collect();
            self.optimize(&phase1, self.cols, &mut pivots)?;
            let infeasibility: f64 = (0..self.rows)
                .filter(|&r| self.basis[r] >= self.first_artificial)
                .map(|r| self.rhs(r))
                .sum();
            if infeasibility > FEASIBILITY_EPS {
                return Err(LpError::Infeasible);
            }
            self.evict_artificials();
        }

        // Phase 2: the real objective over structural and slack columns.
        let mut phase2 = vec![0.0; self.cols];
        phase2[..lp.num_vars()].copy_from_slice(&lp.objective);
        self.optimize(&phase2, self.first_artificial, &mut pivots)?;

        let mut x = vec![0.0; lp.num_vars()];
        for (r, &var) in self.basis.iter().enumerate() {
            if var < x.len() {
                x[var] = self.rhs(r).max(0.0);
            }
        }
        let objective = x.iter().zip(&lp.objective).map(|(a, b)| a * b).sum();
        Ok(Solution { x, objective })
    }

    /// Minimizes `cost` allowing only columns `< entering_limit` to enter,
    /// with most-negative reduced cost pricing.
    fn optimize(&mut self, cost: &[f64], entering_limit: usize, pivots: &mut usize) -> Result<(), LpError> {
        let mut reduced = self.reduced_costs(cost);
        loop {
            let entering = (0..entering_limit)
                .filter(|&j| reduced[j] < -REDUCED_EPS)
                .min_by(|&a, &b| reduced[a].total_cmp(&reduced[b]));
            let Some(entering) = entering else {
                return Ok(());
            };
            let row = self.leaving_row(entering).ok_or(LpError::Unbounded)?;
            self.pivot(row, entering);
            let factor = reduced[entering];
            let width = self.width();
            for (c, p) in reduced
                .iter_mut()
                .zip(&self.cells[row * width..row * width + self.cols])
            {
                *c -= factor * p;
            }
            reduced[entering] = 0.0;
            *pivots += 1;
            if *pivots > self.max_pivots {
                return Err(LpError::IterationLimit(self.max_pivots));
            }
        }
    }

    /// Ratio test on `(rhs, perturbation)` taken lexicographically, which
    /// rules out cycling on degenerate vertices.
    fn leaving_row(&self, entering: usize) -> Option<usize> {
        let mut best: Option<(usize, f64, f64)> = None;
        for r in 0..self.rows {
            let coef = self.at(r, entering);
            if coef <= PIVOT_EPS {
                continue;
            }
            let ratio = self.rhs(r).max(0.0) / coef;
            let tie = self.at(r, self.cols + 1) / coef;
            let better = match best {
                None => true,
                Some((_, br, bt)) => ratio < br - RATIO_EPS || (ratio <= br + RATIO_EPS && tie < bt),
            };
            if better {
                best = Some((r, ratio, tie));
            }
        }
        best.map(|(r, _, _)| r)
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut reduced = cost.to_vec();
        for (row, &var) in self.basis.iter().enumerate() {
            let cb = cost[var];
            if cb == 0.0 {
                continue;
            }
            for (j, r) in reduced.iter_mut().enumerate() {
                *r -= cb * self.at(row, j);
            }
        }
        for &var in &self.basis {
            reduced[var] = 0.0;
        }
        reduced
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.width();
        let p = self.at(row, col);
        for c in 0..width {
            self.cells[row * width + c] /= p;
        }
        let (before, rest) = self.cells.split_at_mut(row * width);
        let (pivot_row, after) = rest.split_at_mut(width);
        for target in before.chunks_exact_mut(width).chain(after.chunks_exact_mut(width)) {
            let factor = target[col];
            if factor == 0.0 {
                continue;
            }
            for (t, p) in target.iter_mut().zip(pivot_row.iter()) {
                *t -= factor * p;
            }
            target[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Pivots zero-valued artificials out of the basis where possible. Rows
    /// where that fails are redundant and keep a harmless zero artificial.
    fn evict_artificials(&mut self) {
        for r in 0..self.rows {
            if self.basis[r] < self.first_artificial {
                continue;
            }
            let candidate = (0..self.first_artificial)
                .filter(|&j| self.at(r, j).abs() > PIVOT_EPS && !self.basis.contains(&j))
                .max_by(|&a, &b| self.at(r, a).abs().total_cmp(&self.at(r, b).abs()));
            if let Some(j) = candidate {
                self.pivot(r, j);
            }
        }
    }
}

/// Distinct positive values, one per row.
fn perturbation(row: usize) -> f64 {
    // golden-ratio sequence keeps them well separated
    1.0 + ((row as f64 + 1.0) * 0.618_033_988_749_895).fract()
}
