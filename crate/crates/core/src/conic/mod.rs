//! Solver-agnostic description of a semidefinite program over one symmetric
//! matrix variable `H ⪰ 0`, with linear equalities and second-order-cone rows
//! expressed over the entries of `H`, plus the backend contract.
//!
//! Entries of `H` are addressed through the upper-triangular, column-major
//! vectorization: entry `(i, j)` with `i <= j` lives at `j(j+1)/2 + i`, and each
//! off-diagonal entry appears once.

mod dump;
mod ipm;

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use dump::{parse_problem, write_problem};
pub use ipm::InteriorPoint;

/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Length of the vectorization of an `m × m` symmetric matrix.
pub const fn vec_len(m: usize) -> usize {
    m * (m + 1) / 2
}

/// Position of entry `(i, j)` (either order) in the vectorization.
pub fn vec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// Inverse of [`vec_index`]: returns `(i, j)` with `i <= j`.
pub fn vec_position(k: usize) -> (usize, usize) {
    // Largest j with j(j+1)/2 <= k.
    let mut j = (((8 * k + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    while (j + 1) * (j + 2) / 2 <= k {
        j += 1;
    }
    while j * (j + 1) / 2 > k {
        j -= 1;
    }
    (k - j * (j + 1) / 2, j)
}

/// Sparse linear functional over the vectorization of `H`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm(pub Vec<(usize, f64)>);

impl LinearForm {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Adds `coef · H[i, j]`.
    pub fn add(&mut self, i: usize, j: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.0.push((vec_index(i, j), coef));
        }
        self
    }

    pub fn entry(i: usize, j: usize) -> Self {
        let mut f = Self::new();
        f.add(i, j, 1.0);
        f
    }

    pub fn eval(&self, h: &DMatrix<f64>) -> f64 {
        self.0
            .iter()
            .map(|&(k, c)| {
                let (i, j) = vec_position(k);
                c * h[(i, j)]
            })
            .sum()
    }
}

/// `‖selector · vec(H)‖ ≤ rhs · vec(H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocRow {
    pub rhs: LinearForm,
    pub selector: Vec<LinearForm>,
}

impl SocRow {
    /// Signed slack `rhs − ‖selector‖`; non-negative when satisfied.
    pub fn slack(&self, h: &DMatrix<f64>) -> f64 {
        let norm = self
            .selector
            .iter()
            .map(|f| f.eval(h).powi(2))
            .sum::<f64>()
            .sqrt();
        self.rhs.eval(h) - norm
    }
}

/// `tr{A H} = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equality {
    pub a: DMatrix<f64>,
    pub b: f64,
}

impl Equality {
    pub fn residual(&self, h: &DMatrix<f64>) -> f64 {
        self.a.dot(h) - self.b
    }
}

/// `minimize tr{M₀ H}` subject to equalities, SOC rows, and `H ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub dim: usize,
    pub objective: DMatrix<f64>,
    pub equalities: Vec<Equality>,
    pub socs: Vec<SocRow>,
}

impl ConicProblem {
    pub fn new(objective: DMatrix<f64>) -> Self {
        Self {
            dim: objective.nrows(),
            objective,
            equalities: Vec::new(),
            socs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.dim;
        let check_sym = |a: &DMatrix<f64>, what: &str| -> Result<()> {
            if a.nrows() != m || a.ncols() != m {
                return Err(Error::InvalidInput(format!("{what} is not {m}x{m}")));
            }
            let tol = 1e-12 * a.amax().max(1.0);
            if (a - a.transpose()).amax() > tol {
                return Err(Error::InvalidInput(format!("{what} is not symmetric")));
            }
            Ok(())
        };
        if m == 0 {
            return Err(Error::InvalidInput("empty matrix variable".into()));
        }
        check_sym(&self.objective, "objective")?;
        for (k, eq) in self.equalities.iter().enumerate() {
            check_sym(&eq.a, &format!("equality {k}"))?;
            if !eq.b.is_finite() {
                return Err(Error::InvalidInput(format!("equality {k} has non-finite rhs")));
            }
        }
        let n = vec_len(m);
        for (k, soc) in self.socs.iter().enumerate() {
            let forms = std::iter::once(&soc.rhs).chain(soc.selector.iter());
            for f in forms {
                if f.0.iter().any(|&(idx, c)| idx >= n || !c.is_finite()) {
                    return Err(Error::InvalidInput(format!("SOC row {k} has an invalid entry")));
                }
            }
        }
        Ok(())
    }

    /// Largest equality violation `|tr{A_k H} − b_k|`.
    pub fn max_equality_residual(&self, h: &DMatrix<f64>) -> f64 {
        self.equalities
            .iter()
            .map(|e| e.residual(h).abs())
            .fold(0.0, f64::max)
    }

    /// Largest SOC violation `max(0, ‖selector‖ − rhs)`.
    pub fn max_soc_violation(&self, h: &DMatrix<f64>) -> f64 {
        self.socs
            .iter()
            .map(|s| (-s.slack(h)).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn objective_value(&self, h: &DMatrix<f64>) -> f64 {
        self.objective.dot(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    /// Stopped short of the requested tolerance but within a loose one.
    NearOptimal,
    /// A primal or dual infeasibility certificate was found.
    Infeasible,
    NumericalFailure,
}

impl SolverStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, Self::Optimal | Self::NearOptimal)
    }
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Optimal => "optimal",
            Self::NearOptimal => "near_optimal",
            Self::Infeasible => "infeasible",
            Self::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub status: SolverStatus,
    pub objective_value: f64,
    pub iterations: usize,
    pub max_equality_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub h: DMatrix<f64>,
    pub report: SolverReport,
}

/// A conic solver backend. Implementations must be deterministic for a fixed
/// problem and tolerance.
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(&self, problem: &ConicProblem, tol: f64) -> Result<Solution>;
}

/// Names accepted by [`backend_by_name`].
pub const BACKENDS: &[&str] = &["ipm"];

pub fn backend_by_name(name: &str) -> Result<Box<dyn ConicBackend>> {
    match name {
        "ipm" | "" => Ok(Box::new(InteriorPoint::default())),
        other => Err(Error::InvalidInput(format!(
            "unknown solver backend {other:?} (available: {})",
            BACKENDS.join(", ")
        ))),
    }
}

/// Solves with the default backend.
pub fn solve(problem: &ConicProblem, tol: f64) -> Result<Solution> {
    InteriorPoint::default().solve(problem, tol)
}
