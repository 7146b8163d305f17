//! Dense two-phase simplex for `max c^T x  s.t.  A x <= b, x >= 0`.
//!
//! Bland's rule picks both the entering column (lowest index with positive
//! reduced cost) and the leaving row (lowest basic index among ratio ties), so
//! the method terminates; an iteration guard still turns any numerical
//! trouble into an error instead of a hang.

use thiserror::Error;

pub const LP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("constraint matrix row {row} has {got} columns, expected {expected}")]
    Shape {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("problem data contains a non-finite value")]
    NonFinite,
    #[error("no point satisfies the constraints")]
    Infeasible,
    #[error("objective is unbounded above")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    NumericalFailure(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Some nonbasic column has zero reduced cost at the optimum, so another
    /// optimal vertex may exist.
    pub alternative_optima: bool,
    pub pivots: usize,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Reduced costs; the last entry is minus the objective value.
    cost: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cost.len() - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width();
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            let f = row[c];
            if i != r && f != 0.0 {
                for j in 0..=w {
                    row[j] -= f * pivot_row[j];
                }
                row[c] = 0.0;
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for j in 0..=w {
                self.cost[j] -= f * pivot_row[j];
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Rebuilds the reduced-cost row for objective `c` over the current basis.
    fn set_objective(&mut self, c: &[f64]) {
        let w = self.width();
        self.cost = c.to_vec();
        self.cost.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = self.cost[b];
            if cb != 0.0 {
                for j in 0..=w {
                    self.cost[j] -= cb * self.rows[i][j];
                }
            }
        }
    }

    /// Runs Bland pivots over columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize) -> Result<bool, LpError> {
        let w = self.width();
        loop {
            if self.pivots >= self.max_pivots {
                return Err(LpError::NumericalFailure(self.max_pivots));
            }
            let Some(c) = (0..allowed).find(|&j| self.cost[j] > LP_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c] > LP_TOL {
                    let ratio = row[w] / row[c];
                    let better = match leave {
                        None => true,
                        Some((k, best)) => {
                            ratio < best - LP_TOL
                                || (ratio <= best + LP_TOL && self.basis[i] < self.basis[k])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, c),
                None => return Ok(false),
            }
        }
    }
}

impl LinearProgram {
    fn check(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.rhs.len() != self.rows.len() {
            return Err(LpError::Shape {
                row: self.rows.len().min(self.rhs.len()),
                expected: self.rows.len(),
                got: self.rhs.len(),
            });
        }
        for (row, a) in self.rows.iter().enumerate() {
            if a.len() != n {
                return Err(LpError::Shape {
                    row,
                    expected: n,
                    got: a.len(),
                });
            }
        }
        let finite = self
            .objective
            .iter()
            .chain(&self.rhs)
            .chain(self.rows.iter().flatten())
            .all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(LpError::NonFinite)
        }
    }

    /// Largest violation of `A x <= b` or `x >= 0`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.rows.iter().zip(&self.rhs).map(|(a, b)| {
            let lhs: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
            lhs - b
        });
        rows.chain(x.iter().map(|v| -v)).fold(0.0, f64::max)
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.check()?;
        let n = self.objective.len();
        let m = self.rows.len();
        let negative: Vec<usize> = (0..m).filter(|&i| self.rhs[i] < 0.0).collect();
        let artificial_start = n + m;
        let width = artificial_start + negative.len();

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut next_art = artificial_start;
        for i in 0..m {
            let mut row = vec![0.0; width + 1];
            let sign = if self.rhs[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                row[j] = sign * self.rows[i][j];
            }
            row[n + i] = sign;
            row[width] = sign * self.rhs[i];
            if sign < 0.0 {
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            } else {
                basis.push(n + i);
            }
            rows.push(row);
        }
        let mut t = Tableau {
            rows,
            cost: vec![0.0; width + 1],
            basis,
            pivots: 0,
            max_pivots: 50 * (width + m) + 1000,
        };

        if !negative.is_empty() {
            let mut phase1 = vec![0.0; width];
            phase1[artificial_start..]
                .iter_mut()
                .for_each(|c| *c = -1.0);
            t.set_objective(&phase1);
            t.optimize(width)?;
            let scale = self.rhs.iter().fold(1.0f64, |s, b| s.max(b.abs()));
            if -t.cost[width] < -LP_TOL * scale {
                return Err(LpError::Infeasible);
            }
            // Drive remaining artificials out; rows where that is impossible are redundant.
            let mut r = 0;
            while r < t.rows.len() {
                if t.basis[r] >= artificial_start {
                    match (0..artificial_start).find(|&j| t.rows[r][j].abs() > LP_TOL) {
                        Some(c) => t.pivot(r, c),
                        None => {
                            t.rows.remove(r);
                            t.basis.remove(r);
                            continue;
                        }
                    }
                }
                r += 1;
            }
        }

        let mut objective = self.objective.clone();
        objective.resize(width, 0.0);
        t.set_objective(&objective);
        if !t.optimize(artificial_start)? {
            return Err(LpError::Unbounded);
        }

        let mut x = vec![0.0; n];
        for (i, &b) in t.basis.iter().enumerate() {
            if b < n {
                x[b] = t.rows[i][width].max(0.0);
            }
        }
        let alternative_optima = (0..artificial_start)
            .filter(|j| !t.basis.contains(j))
            .any(|j| t.cost[j].abs() <= LP_TOL);
        let objective = self.objective.iter().zip(&x).map(|(c, x)| c * x).sum();
        Ok(LpSolution {
            x,
            objective,
            alternative_optima,
            pivots: t.pivots,
        })
    }
}
