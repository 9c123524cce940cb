//! Lipschitz test pairs: alternating compass search inside the Δ-box of a
//! seed, plus uniform random sampling as a baseline.
//!
//! Stage one moves `t1` away from the seed `t0` to maximise the output
//! distance. Stage two keeps `t1*` fixed and moves `t2`; when it converges
//! the result becomes the new anchor. The loop ends once the ratio stops
//! improving or the execution budget is spent, returning the best pair seen.

use std::cell::RefCell;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{DistTarget, Subspace};
use crate::network::Network;
use crate::ranking::LipMetric;

#[derive(Clone, Debug, PartialEq)]
pub struct LipConfig {
    /// Constant the search tries to exceed.
    pub c: f64,
    /// L∞ radius of the search box around the seed.
    pub delta: f64,
    /// Added to the input distance so the ratio stays finite.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Compass runs allowed per seed, stage one included.
    pub max_executions: usize,
    pub sigma0: f64,
    pub theta: f64,
    pub sigma_min: f64,
    /// Stage two stops when an anchor change improves the ratio by less.
    pub progress_tol: f64,
    /// Cap on forward evaluations per seed.
    pub max_evals: Option<usize>,
    pub metric: LipMetric,
}

impl LipConfig {
    pub fn new(c: f64, delta: f64) -> Self {
        LipConfig {
            c,
            delta,
            epsilon: 1e-9,
            max_iters: 150,
            max_executions: 30,
            sigma0: delta / 4.0,
            theta: 0.5,
            sigma_min: 1e-5,
            progress_tol: 1e-6,
            max_evals: None,
            metric: LipMetric::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c", self.c),
            ("delta", self.delta),
            ("epsilon", self.epsilon),
            ("sigma0", self.sigma0),
            ("sigma_min", self.sigma_min),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "Lipschitz setting {name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!(
                "Lipschitz setting theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        if self.max_iters == 0 || self.max_executions == 0 {
            return Err(Error::Config(
                "Lipschitz iteration and execution limits must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn compass(&self, max_evals: usize) -> CompassConfig {
        CompassConfig {
            sigma0: self.sigma0,
            theta: self.theta,
            sigma_min: self.sigma_min,
            max_iters: self.max_iters,
            max_evals,
        }
    }
}

impl Default for LipConfig {
    fn default() -> Self {
        LipConfig::new(1.0, 0.1)
    }
}

/// `||out(t1) - out(t2)|| / (||t1 - t2|| + ε)`.
pub fn lip_ratio(
    net: &Network,
    t1: &[f64],
    t2: &[f64],
    epsilon: f64,
    metric: LipMetric,
) -> Result<f64> {
    let o1 = observe(net, t1, metric)?;
    let o2 = observe(net, t2, metric)?;
    Ok(ratio_of(&o1, &o2, t1, t2, epsilon, metric))
}

fn observe(net: &Network, x: &[f64], metric: LipMetric) -> Result<Vec<f64>> {
    match metric.target {
        DistTarget::Output => Ok(net.forward(x)?.output().to_vec()),
        DistTarget::Input => {
            if x.len() != net.input_dim() {
                return Err(Error::InputShape {
                    expected: net.input_dim(),
                    got: x.len(),
                });
            }
            Ok(x.to_vec())
        }
    }
}

fn ratio_of(o1: &[f64], o2: &[f64], t1: &[f64], t2: &[f64], eps: f64, metric: LipMetric) -> f64 {
    metric.norm.distance(o1, o2) / (metric.norm.distance(t1, t2) + eps)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompassConfig {
    pub sigma0: f64,
    pub theta: f64,
    pub sigma_min: f64,
    pub max_iters: usize,
    pub max_evals: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompassResult {
    pub best: Vec<f64>,
    pub value: f64,
    /// Start point followed by every accepted iterate.
    pub trace: Vec<Vec<f64>>,
    pub iterations: usize,
    pub evals: usize,
    /// Whether `early_stop` ended the run.
    pub stopped_early: bool,
}

/// Derivative-free minimisation of `f` over the box `lower..=upper`.
///
/// Each iteration polls `x ± σ e_i` coordinate by coordinate (plus before
/// minus), projected onto the box, and moves to the first strictly better
/// point. If no poll improves, `σ` shrinks by `theta`. The run ends after
/// `max_iters` iterations, when `σ < sigma_min`, when the evaluation budget
/// is spent, or when `early_stop(x, f(x))` holds at an accepted point (the
/// start included).
pub fn compass_minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    cfg: &CompassConfig,
    mut early_stop: impl FnMut(&[f64], f64) -> bool,
) -> CompassResult {
    let mut x: Vec<f64> = start
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&s, (&lo, &hi))| s.clamp(lo, hi))
        .collect();
    let mut fx = f(&x);
    let mut evals = 1;
    let mut trace = vec![x.clone()];
    let mut sigma = cfg.sigma0;
    let mut iterations = 0;
    let done = |x: Vec<f64>, value, trace, iterations, evals, stopped_early| CompassResult {
        best: x,
        value,
        trace,
        iterations,
        evals,
        stopped_early,
    };
    if early_stop(&x, fx) {
        return done(x, fx, trace, 0, evals, true);
    }
    'outer: while iterations < cfg.max_iters && sigma >= cfg.sigma_min {
        iterations += 1;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let moved = (x[i] + dir * sigma).clamp(lower[i], upper[i]);
                if moved == x[i] {
                    continue;
                }
                if evals >= cfg.max_evals {
                    break 'outer;
                }
                let mut y = x.clone();
                y[i] = moved;
                let fy = f(&y);
                evals += 1;
                if fy < fx {
                    x = y;
                    fx = fy;
                    trace.push(x.clone());
                    if early_stop(&x, fx) {
                        return done(x, fx, trace, iterations, evals, true);
                    }
                    continue 'outer;
                }
            }
        }
        sigma *= cfg.theta;
    }
    done(x, fx, trace, iterations, evals, false)
}

/// A pair of inputs inside a seed's box and its ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipWitness {
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub ratio: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipSearch {
    pub witness: LipWitness,
    /// Compass runs performed.
    pub executions: usize,
    pub forward_evals: usize,
    /// Accepted iterates of every run, in order.
    pub trace: Vec<Vec<f64>>,
}

struct Searcher<'a> {
    net: &'a Network,
    cfg: &'a LipConfig,
    lower: Vec<f64>,
    upper: Vec<f64>,
    evals: usize,
    best: LipWitness,
    trace: Vec<Vec<f64>>,
}

impl Searcher<'_> {
    fn remaining(&self) -> usize {
        self.cfg
            .max_evals
            .map_or(usize::MAX, |m| m.saturating_sub(self.evals))
    }

    /// One compass run moving a point from `start` away from `anchor`.
    fn run(&mut self, anchor: &[f64], start: &[f64]) -> Result<Vec<f64>> {
        let metric = self.cfg.metric;
        let forwards = metric.target == DistTarget::Output;
        if self.remaining() < 2 {
            return Ok(start.to_vec());
        }
        let out_anchor = observe(self.net, anchor, metric)?;
        if forwards {
            self.evals += 1;
        }
        let cfg = self.cfg.compass(self.remaining());
        let (net, eps, c) = (self.net, self.cfg.epsilon, self.cfg.c);
        let err = RefCell::new(None);
        let last_out = RefCell::new(Vec::new());
        let mut best = self.best.clone();
        let mut accepted = Vec::new();
        let result = compass_minimize(
            |x| match observe(net, x, metric) {
                Ok(o) => {
                    let v = -metric.norm.distance(&o, &out_anchor);
                    *last_out.borrow_mut() = o;
                    v
                }
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    f64::INFINITY
                }
            },
            start,
            &self.lower,
            &self.upper,
            &cfg,
            |x, _| {
                let r = ratio_of(&last_out.borrow(), &out_anchor, x, anchor, eps, metric);
                accepted.push(x.to_vec());
                if r > best.ratio {
                    best = LipWitness {
                        t1: anchor.to_vec(),
                        t2: x.to_vec(),
                        ratio: r,
                        satisfied: r > c,
                    };
                }
                r > c
            },
        );
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        if forwards {
            self.evals += result.evals;
        }
        self.best = best;
        self.trace.extend(accepted);
        Ok(result.best)
    }
}

/// Stage one: push `t1` away from `t0`. Returns the searcher state so that
/// stage two can continue with the same budget.
fn stage_one_inner<'a>(
    net: &'a Network,
    t0: &[f64],
    cfg: &'a LipConfig,
) -> Result<(Searcher<'a>, Vec<f64>)> {
    cfg.validate()?;
    let bx = Subspace {
        center: t0.to_vec(),
        radius: cfg.delta,
    };
    let mut s = Searcher {
        net,
        cfg,
        lower: bx.lower(),
        upper: bx.upper(),
        evals: 0,
        best: LipWitness {
            t1: t0.to_vec(),
            t2: t0.to_vec(),
            ratio: 0.0,
            satisfied: false,
        },
        trace: Vec::new(),
    };
    let t1 = s.run(t0, t0)?;
    Ok((s, t1))
}

/// Outcome of stage one: a satisfying pair, or the converged `t1*`.
#[derive(Clone, Debug, PartialEq)]
pub enum StageOne {
    Satisfied(LipSearch),
    Converged { t1: Vec<f64>, search: LipSearch },
}

pub fn stage_one(net: &Network, t0: &[f64], cfg: &LipConfig) -> Result<StageOne> {
    let (s, t1) = stage_one_inner(net, t0, cfg)?;
    let search = LipSearch {
        witness: s.best,
        executions: 1,
        forward_evals: s.evals,
        trace: s.trace,
    };
    Ok(if search.witness.satisfied {
        StageOne::Satisfied(search)
    } else {
        StageOne::Converged { t1, search }
    })
}

fn stage_two_from(mut s: Searcher<'_>, t1: Vec<f64>, mut executions: usize) -> Result<LipSearch> {
    let mut anchor = t1;
    let mut last = s.best.ratio;
    while !s.best.satisfied && executions < s.cfg.max_executions && s.remaining() > 0 {
        let t2 = s.run(&anchor, &anchor.clone())?;
        executions += 1;
        if s.best.satisfied || s.best.ratio < last + s.cfg.progress_tol {
            break;
        }
        last = s.best.ratio;
        anchor = t2;
    }
    Ok(LipSearch {
        witness: s.best,
        executions,
        forward_evals: s.evals,
        trace: s.trace,
    })
}

/// Stage two and three from an explicit `t1*`.
pub fn stage_two_loop(net: &Network, t0: &[f64], t1: &[f64], cfg: &LipConfig) -> Result<LipSearch> {
    cfg.validate()?;
    let bx = Subspace {
        center: t0.to_vec(),
        radius: cfg.delta,
    };
    let s = Searcher {
        net,
        cfg,
        lower: bx.lower(),
        upper: bx.upper(),
        evals: 0,
        best: LipWitness {
            t1: t1.to_vec(),
            t2: t1.to_vec(),
            ratio: 0.0,
            satisfied: false,
        },
        trace: Vec::new(),
    };
    stage_two_from(s, t1.to_vec(), 0)
}

/// The full alternating scheme from seed `t0`.
pub fn lipschitz_search(net: &Network, t0: &[f64], cfg: &LipConfig) -> Result<LipSearch> {
    let (s, t1) = stage_one_inner(net, t0, cfg)?;
    if s.best.satisfied {
        return Ok(LipSearch {
            witness: s.best,
            executions: 1,
            forward_evals: s.evals,
            trace: s.trace,
        });
    }
    stage_two_from(s, t1, 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomSearch {
    pub witness: LipWitness,
    pub attempts: usize,
    pub forward_evals: usize,
}

/// Uniform pairs from the Δ-box of `t0`; stops at the first pair above `c`,
/// otherwise reports the best of `pairs` attempts.
pub fn random_baseline<R: Rng>(
    net: &Network,
    t0: &[f64],
    cfg: &LipConfig,
    pairs: usize,
    rng: &mut R,
) -> Result<RandomSearch> {
    if pairs == 0 {
        return Err(Error::Config(
            "random baseline needs at least one pair".into(),
        ));
    }
    let bx = Subspace {
        center: t0.to_vec(),
        radius: cfg.delta,
    };
    let (lo, hi) = (bx.lower(), bx.upper());
    let sample = |rng: &mut R| -> Vec<f64> {
        lo.iter()
            .zip(&hi)
            .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
            .collect()
    };
    let mut best = LipWitness {
        t1: t0.to_vec(),
        t2: t0.to_vec(),
        ratio: 0.0,
        satisfied: false,
    };
    let per_pair = if cfg.metric.target == DistTarget::Output {
        2
    } else {
        0
    };
    for attempt in 1..=pairs {
        let t1 = sample(rng);
        let t2 = sample(rng);
        let r = lip_ratio(net, &t1, &t2, cfg.epsilon, cfg.metric)?;
        if r > best.ratio || attempt == 1 {
            best = LipWitness {
                t1,
                t2,
                ratio: r,
                satisfied: r > cfg.c,
            };
        }
        if best.satisfied {
            return Ok(RandomSearch {
                witness: best,
                attempts: attempt,
                forward_evals: attempt * per_pair,
            });
        }
    }
    Ok(RandomSearch {
        witness: best,
        attempts: pairs,
        forward_evals: pairs * per_pair,
    })
}

/// One line of the per-seed comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipRow {
    pub seed: usize,
    pub method: String,
    pub best_ratio: f64,
    pub satisfied: bool,
    pub forward_evals: usize,
}

pub fn lip_csv(rows: &[LipRow]) -> String {
    let mut out = String::from("seed,method,best_ratio,satisfied,forward_evals\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:?},{},{}",
            r.seed, r.method, r.best_ratio, r.satisfied, r.forward_evals
        );
    }
    out
}
