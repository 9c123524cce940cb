//! Brute-force LP oracle: enumerate vertices and extreme rays of
//! `{x : G x <= h}` for small, pointed polyhedra.

#![allow(clippy::needless_range_loop)]

use concolic_dnn::lp::{LpProblem, Relation};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub enum Oracle {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

/// A small LP in inequality form over free variables.
#[derive(Clone, Debug)]
pub struct SmallLp {
    pub n: usize,
    pub rows: Vec<(Vec<f64>, f64)>,
    pub cost: Vec<f64>,
    pub problem: LpProblem,
}

/// Solves the square system `a x = b`; `None` when (numerically) singular.
pub fn solve_square(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &bi)| {
            let mut r = r.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-9 {
            return None;
        }
        m.swap(col, piv);
        for i in 0..n {
            if i != col {
                let f = m[i][col] / m[col][col];
                for j in col..=n {
                    m[i][j] -= f * m[col][j];
                }
            }
        }
    }
    Some((0..n).map(|i| m[i][n] / m[i][i]).collect())
}

/// Row-echelon rank.
pub fn rank(rows: &[Vec<f64>], n: usize) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let mut r = 0;
    for col in 0..n {
        let Some(piv) = (r..m.len()).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
        else {
            break;
        };
        if m[piv][col].abs() < 1e-9 {
            continue;
        }
        m.swap(r, piv);
        for i in 0..m.len() {
            if i != r {
                let f = m[i][col] / m[r][col];
                for j in col..n {
                    m[i][j] -= f * m[r][j];
                }
            }
        }
        r += 1;
    }
    r
}

/// Unit-free direction spanning the null space of `rows` when it is one-dimensional.
pub fn null_direction(rows: &[Vec<f64>], n: usize) -> Option<Vec<f64>> {
    if rank(rows, n) != n.saturating_sub(1) {
        return None;
    }
    // Fix each coordinate to 1 in turn and solve for the rest.
    for free in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != free).collect();
        if others.is_empty() {
            return Some(vec![1.0]);
        }
        let a: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| others.iter().map(|&j| r[j]).collect())
            .collect();
        let b: Vec<f64> = rows.iter().map(|r| -r[free]).collect();
        // Pick a square, non-singular subsystem.
        for subset in combinations(rows.len(), others.len()) {
            let sa: Vec<Vec<f64>> = subset.iter().map(|&i| a[i].clone()).collect();
            let sb: Vec<f64> = subset.iter().map(|&i| b[i]).collect();
            if let Some(sol) = solve_square(&sa, &sb) {
                let mut d = vec![0.0; n];
                d[free] = 1.0;
                for (&j, v) in others.iter().zip(sol) {
                    d[j] = v;
                }
                if rows
                    .iter()
                    .all(|r| r.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>().abs() < 1e-7)
                {
                    return Some(d);
                }
            }
        }
    }
    None
}

pub fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Optimum of `min cost·x s.t. rows` by exhaustive vertex and ray enumeration.
/// Requires the constraint matrix to have full column rank.
pub fn vertex_oracle(n: usize, rows: &[(Vec<f64>, f64)], cost: &[f64]) -> Oracle {
    let g: Vec<Vec<f64>> = rows.iter().map(|(a, _)| a.clone()).collect();
    assert_eq!(rank(&g, n), n, "oracle needs a pointed polyhedron");
    let feasible = |x: &[f64]| rows.iter().all(|(a, h)| dot(a, x) <= h + 1e-9);
    let mut best: Option<f64> = None;
    for subset in combinations(rows.len(), n) {
        let a: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].0.clone()).collect();
        let b: Vec<f64> = subset.iter().map(|&i| rows[i].1).collect();
        if let Some(x) = solve_square(&a, &b) {
            if feasible(&x) {
                let v = dot(cost, &x);
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
    }
    let Some(best) = best else {
        return Oracle::Infeasible;
    };
    for subset in combinations(rows.len(), n - 1) {
        let a: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].0.clone()).collect();
        if let Some(d) = null_direction(&a, n) {
            for sign in [1.0, -1.0] {
                let d: Vec<f64> = d.iter().map(|x| x * sign).collect();
                let scale = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
                let recession = g.iter().all(|r| dot(r, &d) <= 1e-9 * scale);
                if recession && dot(cost, &d) < -1e-9 * scale {
                    return Oracle::Unbounded;
                }
            }
        }
    }
    Oracle::Optimal(best)
}

/// Random LP with at most `max_vars` variables and at most `max_rows`
/// inequality rows once bounds and equalities are counted.
pub fn random_small_lp<R: Rng>(rng: &mut R, max_vars: usize, max_rows: usize) -> SmallLp {
    loop {
        let n = rng.gen_range(1..=max_vars);
        let mut p = LpProblem::new();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let construct_feasible = rng.gen_bool(0.75);

        let mut vars = Vec::with_capacity(n);
        for j in 0..n {
            let lower = if rng.gen_bool(0.3) {
                Some(rng.gen_range(-4..=0) as f64)
            } else {
                None
            };
            let upper = if rng.gen_bool(0.15) {
                Some(rng.gen_range(0..=4) as f64)
            } else {
                None
            };
            let (lo, hi) = (
                lower.unwrap_or(f64::NEG_INFINITY),
                upper.unwrap_or(f64::INFINITY),
            );
            vars.push(p.add_var(format!("x{j}"), lo, hi));
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            if let Some(l) = lower {
                rows.push((e.iter().map(|x| -x).collect(), -l));
            }
            if let Some(u) = upper {
                rows.push((e, u));
            }
        }
        if rows.len() > max_rows {
            continue;
        }
        let budget = max_rows - rows.len();
        if budget == 0 {
            continue;
        }
        let count = rng.gen_range(0..=budget);
        let mut used = 0;
        while used < count {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4..=4) as f64).collect();
            if a.iter().all(|&x| x == 0.0) {
                continue;
            }
            let base = dot(&a, &anchor);
            let kind = rng.gen_range(0..10);
            let terms = vars
                .iter()
                .zip(&a)
                .map(|(&v, &c)| (v, c))
                .collect::<Vec<_>>();
            let slack = if construct_feasible {
                rng.gen_range(0..=3) as f64
            } else {
                rng.gen_range(-3..=3) as f64
            };
            if kind == 0 && used + 2 <= count {
                let rhs = if construct_feasible {
                    base
                } else {
                    base + slack
                };
                p.add_constraint(terms, Relation::Eq, rhs);
                rows.push((a.clone(), rhs));
                rows.push((a.iter().map(|x| -x).collect(), -rhs));
                used += 2;
            } else if kind < 5 {
                let rhs = base + slack;
                p.add_constraint(terms, Relation::Le, rhs);
                rows.push((a, rhs));
                used += 1;
            } else {
                let rhs = base - slack;
                p.add_constraint(terms, Relation::Ge, rhs);
                rows.push((a.iter().map(|x| -x).collect(), -rhs));
                used += 1;
            }
        }
        let g: Vec<Vec<f64>> = rows.iter().map(|(a, _)| a.clone()).collect();
        if rows.len() < n || rank(&g, n) < n {
            continue;
        }
        let cost: Vec<f64> = (0..n).map(|_| rng.gen_range(-5..=5) as f64).collect();
        p.set_objective(vars.iter().zip(&cost).map(|(&v, &c)| (v, c)).collect());
        return SmallLp {
            n,
            rows,
            cost,
            problem: p,
        };
    }
}
