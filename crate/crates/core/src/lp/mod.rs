//! Linear programs over activation patterns.
//!
//! [`LpProblem`] is a plain model (bounded variables, affine rows, a linear
//! objective to minimize); [`DenseSimplex`] solves it; [`encode`] builds the
//! problems used for input synthesis.

use std::fmt::Write as _;

pub mod encode;
mod simplex;

pub use encode::{
    add_chebyshev_objective, build_synthesis_lp, encode_pattern, nbc_constraint, nc_target_pattern,
    ssc_target_pattern, symbolic_lp, NbcBranch, PatternEncoding, Synthesis, STRICT_MARGIN,
};
pub use simplex::DenseSimplex;

/// Residual tolerance an optimal assignment must meet.
pub const LP_TOLERANCE: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn lhs(&self, values: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Amount by which `values` violates this row (zero when satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs = self.lhs(values);
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// Minimize `objective · x` subject to the rows and variable bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpProblem {
    vars: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Vec<(VarId, f64)>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with bounds `lower..=upper`; either may be infinite.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn add_free_var(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn add_constraint(&mut self, terms: Vec<(VarId, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(terms.iter().all(|(v, _)| v.0 < self.vars.len()));
        self.constraints.push(Constraint {
            terms,
            relation,
            rhs,
        });
    }

    pub fn set_objective(&mut self, terms: Vec<(VarId, f64)>) {
        self.objective = terms;
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[(VarId, f64)] {
        &self.objective
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Largest violation over rows and bounds.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(values))
            .fold(0.0, f64::max);
        self.vars
            .iter()
            .zip(values)
            .map(|(v, &x)| (v.lower - x).max(x - v.upper).max(0.0))
            .fold(rows, f64::max)
    }

    /// CPLEX-LP style text rendering, for debugging dumps.
    pub fn to_lp_format(&self) -> String {
        fn term_list(out: &mut String, vars: &[Variable], terms: &[(VarId, f64)]) {
            if terms.is_empty() {
                out.push_str(" 0");
            }
            for (n, &(v, c)) in terms.iter().enumerate() {
                let sign = if c < 0.0 {
                    " -"
                } else if n == 0 {
                    ""
                } else {
                    " +"
                };
                let _ = write!(out, "{sign} {:?} {}", c.abs(), vars[v.0].name);
            }
        }
        let mut out = String::from("Minimize\n obj:");
        term_list(&mut out, &self.vars, &self.objective);
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{i}:");
            term_list(&mut out, &self.vars, &c.terms);
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            let _ = writeln!(out, " {rel} {:?}", c.rhs);
        }
        out.push_str("Bounds\n");
        for v in &self.vars {
            match (v.lower.is_finite(), v.upper.is_finite()) {
                (true, true) => {
                    let _ = writeln!(out, " {:?} <= {} <= {:?}", v.lower, v.name, v.upper);
                }
                (true, false) => {
                    let _ = writeln!(out, " {} >= {:?}", v.name, v.lower);
                }
                (false, true) => {
                    let _ = writeln!(out, " -inf <= {} <= {:?}", v.name, v.upper);
                }
                (false, false) => {
                    let _ = writeln!(out, " {} free", v.name);
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Variable assignment; meaningful only when optimal.
    pub values: Vec<f64>,
    pub objective: f64,
}

impl LpOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }
}

/// Back-end that solves an [`LpProblem`].
pub trait LpSolver {
    fn solve(&self, problem: &LpProblem) -> LpOutcome;
}

/// Solves with the default embedded simplex.
pub fn solve(problem: &LpProblem) -> LpOutcome {
    DenseSimplex::default().solve(problem)
}
