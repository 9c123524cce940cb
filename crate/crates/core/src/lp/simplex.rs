//! Two-phase dense tableau simplex with Bland's pivoting rule.

use super::{LpOutcome, LpProblem, LpSolver, LpStatus, Relation};

#[derive(Clone, Debug)]
pub struct DenseSimplex {
    pub max_pivots: usize,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Reduced costs above `-opt_tol` count as non-negative.
    pub opt_tol: f64,
    /// Phase-one objective at or below this is treated as feasible.
    pub feas_tol: f64,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        DenseSimplex {
            max_pivots: 200_000,
            pivot_tol: 1e-9,
            opt_tol: 1e-10,
            feas_tol: 1e-8,
        }
    }
}

/// How a model variable is expressed through non-negative columns.
#[derive(Clone, Copy, Debug)]
enum ColMap {
    /// `x = lower + y`
    Shift { col: usize, lower: f64 },
    /// `x = upper - y`
    Mirror { col: usize, upper: f64 },
    /// `x = y+ - y-`
    Split { pos: usize, neg: usize },
}

struct StdRow {
    coefs: Vec<f64>,
    relation: Relation,
    rhs: f64,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    width: usize,
    pivots: usize,
}

enum Phase {
    Optimal,
    Unbounded,
    Limit,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        self.rows[r][c] = 1.0;
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (x, &y) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (x, &y) in self.obj.iter_mut().zip(&pivot_row) {
                *x -= f * y;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Loads cost vector `cost` (length `width`) and prices out the basis.
    fn set_costs(&mut self, cost: &[f64]) {
        self.obj = cost.to_vec();
        self.obj.push(0.0);
        for i in 0..self.rows.len() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (x, &y) in self.obj.iter_mut().zip(&self.rows[i]) {
                    *x -= cb * y;
                }
            }
        }
    }

    /// Runs Bland's rule over the first `limit` columns.
    fn iterate(&mut self, limit: usize, s: &DenseSimplex) -> Phase {
        loop {
            if self.pivots >= s.max_pivots {
                return Phase::Limit;
            }
            let Some(enter) = (0..limit).find(|&j| self.obj[j] < -s.opt_tol) else {
                return Phase::Optimal;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a <= s.pivot_tol {
                    continue;
                }
                let ratio = self.rhs(i).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((bi, br)) => {
                        let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                        if (tie && self.basis[i] < self.basis[bi]) || (!tie && ratio < br) {
                            Some((i, ratio))
                        } else {
                            Some((bi, br))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Phase::Unbounded;
            };
            self.pivot(r, enter);
        }
    }
}

impl DenseSimplex {
    fn fail(status: LpStatus, n: usize) -> LpOutcome {
        LpOutcome {
            status,
            values: vec![f64::NAN; n],
            objective: f64::NAN,
        }
    }
}

impl LpSolver for DenseSimplex {
    fn solve(&self, problem: &LpProblem) -> LpOutcome {
        let nvars = problem.num_vars();

        let mut maps = Vec::with_capacity(nvars);
        let mut ncols = 0usize;
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for v in problem.vars() {
            if v.lower > v.upper {
                return Self::fail(LpStatus::Infeasible, nvars);
            }
            let map = if v.lower.is_finite() {
                if v.upper.is_finite() {
                    bound_rows.push((ncols, v.upper - v.lower));
                }
                ColMap::Shift {
                    col: ncols,
                    lower: v.lower,
                }
            } else if v.upper.is_finite() {
                ColMap::Mirror {
                    col: ncols,
                    upper: v.upper,
                }
            } else {
                ncols += 1;
                ColMap::Split {
                    pos: ncols - 1,
                    neg: ncols,
                }
            };
            ncols += 1;
            maps.push(map);
        }

        // Substitute the column maps into each row.
        let mut rows: Vec<StdRow> =
            Vec::with_capacity(problem.num_constraints() + bound_rows.len());
        for c in problem.constraints() {
            let mut coefs = vec![0.0; ncols];
            let mut rhs = c.rhs;
            for &(v, a) in &c.terms {
                match maps[v.0] {
                    ColMap::Shift { col, lower } => {
                        coefs[col] += a;
                        rhs -= a * lower;
                    }
                    ColMap::Mirror { col, upper } => {
                        coefs[col] -= a;
                        rhs -= a * upper;
                    }
                    ColMap::Split { pos, neg } => {
                        coefs[pos] += a;
                        coefs[neg] -= a;
                    }
                }
            }
            rows.push(StdRow {
                coefs,
                relation: c.relation,
                rhs,
            });
        }
        for &(col, span) in &bound_rows {
            let mut coefs = vec![0.0; ncols];
            coefs[col] = 1.0;
            rows.push(StdRow {
                coefs,
                relation: Relation::Le,
                rhs: span,
            });
        }

        let mut cost = vec![0.0; ncols];
        for &(v, a) in problem.objective() {
            match maps[v.0] {
                ColMap::Shift { col, .. } => cost[col] += a,
                ColMap::Mirror { col, .. } => cost[col] -= a,
                ColMap::Split { pos, neg } => {
                    cost[pos] += a;
                    cost[neg] -= a;
                }
            }
        }

        for row in rows.iter_mut() {
            if row.rhs < 0.0 {
                row.rhs = -row.rhs;
                row.coefs.iter_mut().for_each(|x| *x = -*x);
                row.relation = match row.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
            }
        }

        let m = rows.len();
        let nslack = rows.iter().filter(|r| r.relation != Relation::Eq).count();
        let nart = rows.iter().filter(|r| r.relation != Relation::Le).count();
        let width = ncols + nslack + nart;
        let art_start = ncols + nslack;

        let mut t = Tableau {
            rows: Vec::with_capacity(m),
            obj: Vec::new(),
            basis: Vec::with_capacity(m),
            width,
            pivots: 0,
        };
        let (mut s_at, mut a_at) = (ncols, art_start);
        for row in &rows {
            let mut line = vec![0.0; width + 1];
            line[..ncols].copy_from_slice(&row.coefs);
            line[width] = row.rhs;
            match row.relation {
                Relation::Le => {
                    line[s_at] = 1.0;
                    t.basis.push(s_at);
                    s_at += 1;
                }
                Relation::Ge => {
                    line[s_at] = -1.0;
                    s_at += 1;
                    line[a_at] = 1.0;
                    t.basis.push(a_at);
                    a_at += 1;
                }
                Relation::Eq => {
                    line[a_at] = 1.0;
                    t.basis.push(a_at);
                    a_at += 1;
                }
            }
            t.rows.push(line);
        }
        // Original standardized rows, kept for the final basis re-solve.
        let original: Vec<Vec<f64>> = t.rows.clone();
        let mut kept: Vec<usize> = (0..m).collect();

        if nart > 0 {
            let mut phase1 = vec![0.0; width];
            phase1[art_start..].iter_mut().for_each(|x| *x = 1.0);
            t.set_costs(&phase1);
            match t.iterate(width, self) {
                Phase::Optimal => {}
                Phase::Limit => return Self::fail(LpStatus::IterationLimit, nvars),
                // Phase one is bounded below by zero.
                Phase::Unbounded => unreachable!("phase one cannot be unbounded"),
            }
            let scale = 1.0 + rows.iter().map(|r| r.rhs).fold(0.0, f64::max);
            if -t.obj[width] > self.feas_tol * scale {
                return Self::fail(LpStatus::Infeasible, nvars);
            }
            // Drive zero-level artificials out of the basis; drop redundant rows.
            let mut i = 0;
            while i < t.rows.len() {
                if t.basis[i] >= art_start {
                    let col = (0..art_start)
                        .filter(|&j| t.rows[i][j].abs() > self.pivot_tol)
                        .max_by(|&a, &b| t.rows[i][a].abs().total_cmp(&t.rows[i][b].abs()));
                    match col {
                        Some(j) => t.pivot(i, j),
                        None => {
                            t.rows.remove(i);
                            t.basis.remove(i);
                            kept.remove(i);
                            continue;
                        }
                    }
                }
                i += 1;
            }
        }

        let mut phase2 = vec![0.0; width];
        phase2[..ncols].copy_from_slice(&cost);
        t.set_costs(&phase2);
        match t.iterate(art_start, self) {
            Phase::Optimal => {}
            Phase::Unbounded => return Self::fail(LpStatus::Unbounded, nvars),
            Phase::Limit => return Self::fail(LpStatus::IterationLimit, nvars),
        }

        let mut y = vec![0.0; width];
        for (i, &b) in t.basis.iter().enumerate() {
            y[b] = t.rhs(i).max(0.0);
        }
        if let Some(refined) = resolve_basis(&original, &kept, &t.basis, width) {
            if refined.iter().all(|&v| v >= -1e-9) {
                y.iter_mut().for_each(|v| *v = 0.0);
                for (&b, v) in t.basis.iter().zip(refined) {
                    y[b] = v.max(0.0);
                }
            }
        }

        let values: Vec<f64> = maps
            .iter()
            .map(|m| match *m {
                ColMap::Shift { col, lower } => lower + y[col],
                ColMap::Mirror { col, upper } => upper - y[col],
                ColMap::Split { pos, neg } => y[pos] - y[neg],
            })
            .collect();
        LpOutcome {
            status: LpStatus::Optimal,
            objective: problem.objective_value(&values),
            values,
        }
    }
}

/// Solves `B y_B = b` against the untouched standardized rows to shed
/// accumulated pivoting error.
fn resolve_basis(
    original: &[Vec<f64>],
    kept: &[usize],
    basis: &[usize],
    width: usize,
) -> Option<Vec<f64>> {
    let n = basis.len();
    let mut a: Vec<Vec<f64>> = kept
        .iter()
        .map(|&r| {
            let mut line: Vec<f64> = basis.iter().map(|&b| original[r][b]).collect();
            line.push(original[r][width]);
            line
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        for i in 0..n {
            if i != col {
                let f = a[i][col] / a[col][col];
                if f != 0.0 {
                    let (src, dst) = if i < col {
                        let (lo, hi) = a.split_at_mut(col);
                        (&hi[0], &mut lo[i])
                    } else {
                        let (lo, hi) = a.split_at_mut(i);
                        (&lo[col], &mut hi[0])
                    };
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d -= f * s;
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}
