//! Reference evaluator for requirement formulas.
//!
//! It runs its own forward pass over dense layers, rewrites every formula to
//! the core grammar first, and checks quantifiers by enumerating all tests
//! or all ordered pairs. Nothing here goes through `Network::forward` or
//! `Requirement::holds_on`.

use concolic_dnn::logic::{
    ArithExpr, Arity, BoolExpr, DistTarget, InputVar, Quantifier, Rel, Requirement, ValueKind,
};
use concolic_dnn::{Layer, Network, Norm};

/// Per layer (index 0 = input layer), pre- and post-activation values.
pub struct Trace {
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

pub fn dense_trace(net: &Network, x: &[f64]) -> Trace {
    let k_max = net.num_layers();
    let mut pre = vec![x.to_vec()];
    let mut post = vec![x.to_vec()];
    for (j, layer) in net.layers().iter().enumerate() {
        let Layer::Dense {
            weights,
            bias,
            relu,
        } = layer
        else {
            panic!("reference evaluator handles dense layers only");
        };
        let prev = post.last().unwrap();
        let mut u = bias.clone();
        for (h, row) in weights.iter().enumerate() {
            for (l, w) in row.iter().enumerate() {
                u[l] += w * prev[h];
            }
        }
        let hidden = j + 2 < k_max;
        let v = if *relu && hidden {
            u.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect()
        } else {
            u.clone()
        };
        pre.push(u);
        post.push(v);
    }
    Trace { pre, post }
}

fn norm(kind: Norm, a: &[f64], b: &[f64]) -> f64 {
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    match kind {
        Norm::Linf => diffs.fold(0.0, f64::max),
        Norm::L1 => diffs.sum(),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Norm::L0 => diffs.filter(|&d| d > 1.0 / 510.0).count() as f64,
    }
}

fn lookup<'a>(env: &[(InputVar, &'a Trace)], v: InputVar) -> &'a Trace {
    env.iter()
        .find(|(k, _)| *k == v)
        .map(|(_, t)| *t)
        .expect("bound variable")
}

fn arith(a: &ArithExpr, env: &[(InputVar, &Trace)]) -> f64 {
    match a {
        ArithExpr::Var {
            kind,
            input,
            neuron,
        } => {
            let t = lookup(env, *input);
            let layer = neuron.layer - 1;
            match kind {
                ValueKind::Pre => t.pre[layer][neuron.index],
                ValueKind::Post => t.post[layer][neuron.index],
            }
        }
        ArithExpr::Const(p) => *p,
        ArithExpr::Scaled(c, e) => c * arith(e, env),
        ArithExpr::Add(x, y) => arith(x, env) + arith(y, env),
        ArithExpr::Sub(x, y) => arith(x, env) - arith(y, env),
        ArithExpr::Dist {
            target,
            norm: n,
            a,
            b,
        } => {
            let (ta, tb) = (lookup(env, *a), lookup(env, *b));
            let pick = |t: &Trace| match target {
                DistTarget::Input => t.post[0].clone(),
                DistTarget::Output => t.post.last().unwrap().clone(),
            };
            norm(*n, &pick(ta), &pick(tb))
        }
    }
}

fn compare(rel: Rel, x: f64, y: f64) -> bool {
    match rel {
        Rel::Le => x <= y,
        Rel::Lt => x < y,
        Rel::Eq => x == y,
        Rel::Gt => x > y,
        Rel::Ge => x >= y,
    }
}

/// Evaluates a core-grammar formula; panics on shorthand nodes.
pub fn core_eval(e: &BoolExpr, env: &[(InputVar, &Trace)]) -> bool {
    match e {
        BoolExpr::Atom(a, rel) => compare(*rel, arith(a, env), 0.0),
        BoolExpr::And(a, b) => core_eval(a, env) && core_eval(b, env),
        BoolExpr::Not(a) => !core_eval(a, env),
        BoolExpr::Count(items, rel, q) => {
            let n = items.iter().filter(|i| core_eval(i, env)).count();
            compare(*rel, n as f64, *q as f64)
        }
        other => panic!("shorthand node left after expansion: {other:?}"),
    }
}

pub fn brute_satisfies(net: &Network, suite: &[Vec<f64>], r: &Requirement) -> bool {
    let traces: Vec<Trace> = suite.iter().map(|x| dense_trace(net, x)).collect();
    brute_on_traces(&traces, r)
}

pub fn brute_on_traces(traces: &[Trace], r: &Requirement) -> bool {
    let body = r.body.expand();
    let mut verdicts = Vec::new();
    match r.arity {
        Arity::One => {
            for t in traces {
                verdicts.push(core_eval(&body, &[(InputVar::X, t)]));
            }
        }
        Arity::Two => {
            for t1 in traces {
                for t2 in traces {
                    verdicts.push(core_eval(&body, &[(InputVar::X1, t1), (InputVar::X2, t2)]));
                }
            }
        }
    }
    match r.quantifier {
        Quantifier::Exists => verdicts.iter().any(|&b| b),
        Quantifier::Forall => verdicts.iter().all(|&b| b),
    }
}

pub fn brute_coverage(net: &Network, suite: &[Vec<f64>], reqs: &[Requirement]) -> f64 {
    let traces: Vec<Trace> = suite.iter().map(|x| dense_trace(net, x)).collect();
    let hit = reqs.iter().filter(|r| brute_on_traces(&traces, r)).count();
    hit as f64 / reqs.len() as f64
}
