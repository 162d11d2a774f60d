//! Euclidean projection of a reference input onto a 2-D polygon:
//!
//! ```text
//!     minimize    1/2 |u - u0|^2
//!     subject to  a_i . u >= b_i
//!                 lo <= u <= hi
//! ```
//!
//! A small dual active-set iteration handles the common cases; anything it
//! cannot certify falls back to exhaustive enumeration of candidate active
//! sets, which is exact in two dimensions.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Allowed constraint violation on normalized rows.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Rows closer than this (after normalization) are treated as duplicates.
pub const DEDUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub a: [f64; 2],
    pub b: f64,
}

impl Constraint {
    pub fn new(a: [f64; 2], b: f64) -> Self {
        Self { a, b }
    }

    /// `a . u - b`; non-negative when satisfied.
    pub fn slack(&self, u: [f64; 2]) -> f64 {
        self.a[0] * u[0] + self.a[1] * u[1] - self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    pub u0: [f64; 2],
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    pub bounds: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QpSolution {
    Feasible { u: [f64; 2], objective: f64 },
    Infeasible,
}

impl QpSolution {
    pub fn point(&self) -> Option<[f64; 2]> {
        match self {
            QpSolution::Feasible { u, .. } => Some(*u),
            QpSolution::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, QpSolution::Feasible { .. })
    }
}

impl QpProblem {
    pub fn new(u0: [f64; 2], bounds: [[f64; 2]; 2]) -> Self {
        Self {
            u0,
            constraints: Vec::new(),
            bounds,
        }
    }

    pub fn with_constraint(mut self, a: [f64; 2], b: f64) -> Self {
        self.constraints.push(Constraint::new(a, b));
        self
    }

    /// Parse and validate a JSON problem description.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: QpProblem = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        if !self.u0.iter().copied().all(finite) {
            return Err(Error::InvalidProblem("non-finite reference input".into()));
        }
        for (i, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(finite(*lo) && finite(*hi)) || lo > hi {
                return Err(Error::InvalidProblem(format!("bad bounds on coordinate {i}: [{lo}, {hi}]")));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !(c.a.iter().copied().all(finite) && finite(c.b)) {
                return Err(Error::InvalidProblem(format!("constraint {i} is not finite")));
            }
        }
        Ok(())
    }

    /// Largest violation over the original rows (scaled to unit normals) and
    /// the box.
    pub fn max_violation(&self, u: [f64; 2]) -> f64 {
        let rows = self.constraints.iter().map(|c| {
            let n = c.a[0].hypot(c.a[1]);
            if n > 0.0 {
                -c.slack(u) / n
            } else {
                c.b
            }
        });
        let boxes = (0..2).flat_map(|i| [self.bounds[i][0] - u[i], u[i] - self.bounds[i][1]]);
        rows.chain(boxes).fold(0.0, f64::max)
    }
}

fn objective(u: [f64; 2], u0: [f64; 2]) -> f64 {
    0.5 * ((u[0] - u0[0]).powi(2) + (u[1] - u0[1]).powi(2))
}

fn is_feasible(rows: &[Constraint], u: [f64; 2]) -> bool {
    rows.iter().all(|r| r.slack(u) >= -FEASIBILITY_TOL)
}

/// Unit-normal rows including the box. `None` when a degenerate row is
/// trivially violated.
fn normalized_rows(p: &QpProblem) -> Option<Vec<Constraint>> {
    let mut rows: Vec<Constraint> = Vec::with_capacity(p.constraints.len() + 4);
    for c in &p.constraints {
        let n = c.a[0].hypot(c.a[1]);
        if n < DEDUP_TOL {
            if c.b > FEASIBILITY_TOL {
                return None;
            }
            continue;
        }
        rows.push(Constraint::new([c.a[0] / n, c.a[1] / n], c.b / n));
    }
    for i in 0..2 {
        let mut e = [0.0; 2];
        e[i] = 1.0;
        rows.push(Constraint::new(e, p.bounds[i][0]));
        e[i] = -1.0;
        rows.push(Constraint::new(e, -p.bounds[i][1]));
    }
    // Keep the tightest of rows sharing a normal.
    let mut kept: Vec<Constraint> = Vec::with_capacity(rows.len());
    for r in rows {
        match kept
            .iter_mut()
            .find(|k| (k.a[0] - r.a[0]).abs() < DEDUP_TOL && (k.a[1] - r.a[1]).abs() < DEDUP_TOL)
        {
            Some(k) => k.b = k.b.max(r.b),
            None => kept.push(r),
        }
    }
    Some(kept)
}

/// Projection of `u0` onto the intersection of the hyperplanes in `active`,
/// with the multipliers. `None` if the rows are dependent.
fn equality_projection(rows: &[Constraint], active: &[usize], u0: [f64; 2]) -> Option<([f64; 2], Vec<f64>)> {
    match active {
        [] => Some((u0, vec![])),
        [i] => {
            let r = &rows[*i];
            let lam = -r.slack(u0);
            Some(([u0[0] + lam * r.a[0], u0[1] + lam * r.a[1]], vec![lam]))
        }
        [i, j] => {
            let (ri, rj) = (&rows[*i], &rows[*j]);
            let gij = ri.a[0] * rj.a[0] + ri.a[1] * rj.a[1];
            let det = 1.0 - gij * gij;
            if det.abs() < 1e-12 {
                return None;
            }
            let (ci, cj) = (-ri.slack(u0), -rj.slack(u0));
            let li = (ci - gij * cj) / det;
            let lj = (cj - gij * ci) / det;
            let u = [
                u0[0] + li * ri.a[0] + lj * rj.a[0],
                u0[1] + li * ri.a[1] + lj * rj.a[1],
            ];
            Some((u, vec![li, lj]))
        }
        _ => None,
    }
}

/// Dual active-set iteration. Returns a point only when it is feasible and
/// all multipliers are non-negative, i.e. a certified optimum.
fn active_set(rows: &[Constraint], u0: [f64; 2]) -> Option<[f64; 2]> {
    let mut active: Vec<usize> = Vec::new();
    let mut u = u0;
    for _ in 0..(3 * rows.len() + 8) {
        let worst = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| !active.contains(i))
            .map(|(i, r)| (i, r.slack(u)))
            .filter(|(_, s)| *s < -FEASIBILITY_TOL)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((j, _)) = worst else {
            return Some(u);
        };
        if active.len() == 2 {
            return None;
        }
        active.push(j);
        loop {
            let (next, lambdas) = equality_projection(rows, &active, u0)?;
            let drop = lambdas
                .iter()
                .enumerate()
                .filter(|(_, l)| **l < -1e-12)
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k);
            match drop {
                Some(k) => {
                    active.remove(k);
                }
                None => {
                    u = next;
                    break;
                }
            }
        }
    }
    None
}

/// Exhaustive enumeration: the optimum is `u0`, the foot on one row, or the
/// vertex of two rows; the closest feasible candidate wins.
fn enumerate(rows: &[Constraint], u0: [f64; 2]) -> Option<[f64; 2]> {
    let mut best: Option<([f64; 2], f64)> = None;
    let mut consider = |u: [f64; 2]| {
        if is_feasible(rows, u) {
            let f = objective(u, u0);
            if best.is_none_or(|(_, bf)| f < bf) {
                best = Some((u, f));
            }
        }
    };
    consider(u0);
    for i in 0..rows.len() {
        if let Some((u, _)) = equality_projection(rows, &[i], u0) {
            consider(u);
        }
    }
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (ri, rj) = (&rows[i], &rows[j]);
            let det = ri.a[0] * rj.a[1] - ri.a[1] * rj.a[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let u = [
                (ri.b * rj.a[1] - rj.b * ri.a[1]) / det,
                (ri.a[0] * rj.b - rj.a[0] * ri.b) / det,
            ];
            consider(u);
        }
    }
    best.map(|(u, _)| u)
}

/// Solve the projection QP.
pub fn solve(p: &QpProblem) -> Result<QpSolution> {
    p.validate()?;
    let Some(rows) = normalized_rows(p) else {
        return Ok(QpSolution::Infeasible);
    };
    let found = active_set(&rows, p.u0).or_else(|| enumerate(&rows, p.u0));
    Ok(match found {
        Some(u) => {
            let u = [
                u[0].clamp(p.bounds[0][0], p.bounds[0][1]),
                u[1].clamp(p.bounds[1][0], p.bounds[1][1]),
            ];
            QpSolution::Feasible {
                u,
                objective: objective(u, p.u0),
            }
        }
        None => QpSolution::Infeasible,
    })
}
