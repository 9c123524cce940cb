//! LP encodings of a network under a fixed activation pattern.
//!
//! Every neuron up to layer `k*` gets a pre-activation variable tied to the
//! previous layer by an equality row. A constrained ReLU neuron adds two
//! rows: `u >= ε_s, v = u` when activated, `u <= -ε_s, v = 0` otherwise.
//! Layers beyond `k*` are not encoded at all.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::logic::Tag;
use crate::network::{pool_window, ActivationPattern, Activations, Layer, Network, NeuronId};

use super::{solve, LpProblem, LpStatus, Relation, VarId};

/// Margin standing in for strict sign constraints.
pub const STRICT_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PatternEncoding {
    pub problem: LpProblem,
    pub inputs: Vec<VarId>,
    /// Pre-activation variable of every encoded neuron (layers `2..=k*`).
    pub pre: BTreeMap<NeuronId, VarId>,
    pub k_star: usize,
    /// Number of layer-equation rows.
    pub affine_rows: usize,
    /// Number of rows fixing activation signs.
    pub sign_rows: usize,
    pub distance: Option<VarId>,
}

/// Encodes `pattern` on layers `2..=k_star`.
///
/// Every ReLU neuron below `k_star` must carry a bit; neurons at `k_star`
/// without a bit are left unconstrained. `winners` fixes which input wins
/// each max-pooling window (take them from the source run).
pub fn encode_pattern(
    net: &Network,
    pattern: &ActivationPattern,
    k_star: usize,
    winners: &[Option<Vec<usize>>],
) -> Result<PatternEncoding> {
    let k_max = net.num_layers();
    if k_star < 2 || k_star > k_max {
        return Err(Error::Encoding(format!(
            "encoding depth {k_star} outside 2..={k_max}"
        )));
    }
    if let Some(n) = pattern
        .bits
        .keys()
        .find(|n| n.layer > k_star || !net.is_relu_layer(n.layer))
    {
        return Err(Error::Encoding(format!(
            "pattern bit for {n}, which is not a ReLU neuron within layer {k_star}"
        )));
    }
    let mut p = LpProblem::new();
    let inputs: Vec<VarId> = (0..net.input_dim())
        .map(|i| p.add_var(format!("x{i}"), 0.0, 1.0))
        .collect();
    let mut pre = BTreeMap::new();
    let mut affine_rows = 0;
    let mut sign_rows = 0;
    let mut prev: Vec<VarId> = inputs.clone();

    for k in 2..=k_star {
        let layer = net.layer(k);
        let in_shape = net.shape(k - 1);
        let current: Vec<VarId> = match layer {
            Layer::Dense { .. } | Layer::Conv2d { .. } => {
                let rows = layer.affine_rows(in_shape).expect("affine layer");
                let relu = net.is_relu_layer(k);
                let mut out = Vec::with_capacity(rows.len());
                for (i, row) in rows.into_iter().enumerate() {
                    let n = NeuronId::new(k, i);
                    let u = p.add_free_var(format!("u_{k}_{i}"));
                    let mut terms = vec![(u, 1.0)];
                    terms.extend(row.terms.iter().map(|&(h, w)| (prev[h], -w)));
                    p.add_constraint(terms, Relation::Eq, row.bias);
                    affine_rows += 1;
                    pre.insert(n, u);
                    if !relu {
                        out.push(u);
                        continue;
                    }
                    match pattern.get(n) {
                        Some(true) => {
                            let v = p.add_var(format!("v_{k}_{i}"), 0.0, f64::INFINITY);
                            p.add_constraint(vec![(u, 1.0)], Relation::Ge, STRICT_MARGIN);
                            p.add_constraint(vec![(v, 1.0), (u, -1.0)], Relation::Eq, 0.0);
                            sign_rows += 2;
                            out.push(v);
                        }
                        Some(false) => {
                            let v = p.add_var(format!("v_{k}_{i}"), 0.0, f64::INFINITY);
                            p.add_constraint(vec![(u, 1.0)], Relation::Le, -STRICT_MARGIN);
                            p.add_constraint(vec![(v, 1.0)], Relation::Eq, 0.0);
                            sign_rows += 2;
                            out.push(v);
                        }
                        None if k == k_star => out.push(u),
                        None => {
                            return Err(Error::Encoding(format!(
                                "pattern has no bit for {n} below layer {k_star}"
                            )))
                        }
                    }
                }
                out
            }
            Layer::MaxPool { window } => {
                let wins = winners.get(k - 2).and_then(Option::as_ref).ok_or_else(|| {
                    Error::Encoding(format!("no pooling winners recorded for layer {k}"))
                })?;
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (h.div_ceil(window[0]), w.div_ceil(window[1]));
                let mut out = Vec::with_capacity(c * oh * ow);
                let mut o = 0;
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let win = wins[o];
                            let var = p.add_free_var(format!("p_{k}_{o}"));
                            p.add_constraint(
                                vec![(var, 1.0), (prev[win], -1.0)],
                                Relation::Eq,
                                0.0,
                            );
                            for other in pool_window(ch, oy, ox, h, w, *window) {
                                if other != win {
                                    p.add_constraint(
                                        vec![(prev[win], 1.0), (prev[other], -1.0)],
                                        Relation::Ge,
                                        0.0,
                                    );
                                }
                            }
                            out.push(var);
                            o += 1;
                        }
                    }
                }
                out
            }
            Layer::Flatten => prev.clone(),
        };
        prev = current;
    }

    Ok(PatternEncoding {
        problem: p,
        inputs,
        pre,
        k_star,
        affine_rows,
        sign_rows,
        distance: None,
    })
}

/// Adds `d >= |x(i) - anchor(i)|` for every input and sets `min d`.
pub fn add_chebyshev_objective(
    problem: &mut LpProblem,
    inputs: &[VarId],
    anchor: &[f64],
) -> Result<VarId> {
    if inputs.len() != anchor.len() {
        return Err(Error::Dimension(inputs.len(), anchor.len()));
    }
    let d = problem.add_var("d", 0.0, f64::INFINITY);
    for (&x, &t) in inputs.iter().zip(anchor) {
        problem.add_constraint(vec![(x, 1.0), (d, -1.0)], Relation::Le, t);
        problem.add_constraint(vec![(x, -1.0), (d, -1.0)], Relation::Le, -t);
    }
    problem.set_objective(vec![(d, 1.0)]);
    Ok(d)
}

/// Source bits below layer `k`, the target neuron negated, nothing else.
pub fn nc_target_pattern(
    source: &ActivationPattern,
    neuron: NeuronId,
) -> Result<(ActivationPattern, usize)> {
    let bit = source
        .get(neuron)
        .ok_or_else(|| Error::Encoding(format!("{neuron} is not a ReLU neuron")))?;
    let mut target = ActivationPattern::default();
    for (&n, &b) in source.bits.range(..NeuronId::new(neuron.layer, 0)) {
        target.set(n, b);
    }
    target.set(neuron, !bit);
    Ok((target, neuron.layer))
}

/// Source bits below layer `k` and on the rest of layer `k`; both the
/// condition and the decision neuron negated.
pub fn ssc_target_pattern(
    source: &ActivationPattern,
    condition: NeuronId,
    decision: NeuronId,
) -> Result<(ActivationPattern, usize)> {
    if decision.layer != condition.layer + 1 {
        return Err(Error::Encoding(format!(
            "{condition} and {decision} are not in adjacent layers"
        )));
    }
    let c_bit = source
        .get(condition)
        .ok_or_else(|| Error::Encoding(format!("{condition} is not a ReLU neuron")))?;
    let d_bit = source
        .get(decision)
        .ok_or_else(|| Error::Encoding(format!("{decision} is not a ReLU neuron")))?;
    let mut target = ActivationPattern::default();
    for (&n, &b) in source.bits.range(..NeuronId::new(decision.layer, 0)) {
        target.set(n, b);
    }
    target.set(condition, !c_bit);
    target.set(decision, !d_bit);
    Ok((target, decision.layer))
}

/// Which side of the boundary an NBC synthesis pushes towards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NbcBranch {
    /// `u >= high + ε_s`
    Above(f64),
    /// `u <= low - ε_s`
    Below(f64),
}

/// Picks the bound the source activation is closer to exceeding.
pub fn nbc_constraint(source: &Activations, neuron: NeuronId, high: f64, low: f64) -> NbcBranch {
    let u = source.pre(neuron);
    if u - high > low - u {
        NbcBranch::Above(high + STRICT_MARGIN)
    } else {
        NbcBranch::Below(low - STRICT_MARGIN)
    }
}

/// Full synthesis LP for requirement `tag` anchored at `source`.
pub fn build_synthesis_lp(
    net: &Network,
    source: &Activations,
    tag: &Tag,
) -> Result<PatternEncoding> {
    let ap = source.pattern();
    let mut enc = match tag {
        Tag::Nc { neuron } => {
            let (target, k) = nc_target_pattern(&ap, *neuron)?;
            encode_pattern(net, &target, k, &source.pool_winners)?
        }
        Tag::Ssc {
            condition,
            decision,
        } => {
            let (target, k) = ssc_target_pattern(&ap, *condition, *decision)?;
            encode_pattern(net, &target, k, &source.pool_winners)?
        }
        Tag::NbcHigh { neuron, .. } | Tag::NbcLow { neuron, .. } => {
            let (high, low) = match tag {
                Tag::NbcHigh { bound, .. } => (*bound, f64::NEG_INFINITY),
                Tag::NbcLow { bound, .. } => (f64::INFINITY, *bound),
                _ => unreachable!(),
            };
            let branch = nbc_constraint(source, *neuron, high, low);
            let k_star = net.num_layers() - 1;
            let mut enc = encode_pattern(net, &ap, k_star, &source.pool_winners)?;
            let u = *enc
                .pre
                .get(neuron)
                .ok_or_else(|| Error::Encoding(format!("{neuron} not encoded")))?;
            match branch {
                NbcBranch::Above(b) => enc.problem.add_constraint(vec![(u, 1.0)], Relation::Ge, b),
                NbcBranch::Below(b) => enc.problem.add_constraint(vec![(u, 1.0)], Relation::Le, b),
            }
            enc
        }
        other => {
            return Err(Error::Encoding(format!(
                "no LP synthesis for requirement {other}"
            )))
        }
    };
    let d = add_chebyshev_objective(&mut enc.problem, &enc.inputs, &source.input)?;
    enc.distance = Some(d);
    Ok(enc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub input: Vec<f64>,
    /// L∞ distance to the source test, as reported by the solver.
    pub distance: f64,
}

/// Solves the synthesis LP for `tag`; `Ok(None)` when the LP has no optimum.
pub fn symbolic_lp(net: &Network, source: &Activations, tag: &Tag) -> Result<Option<Synthesis>> {
    let enc = build_synthesis_lp(net, source, tag)?;
    let out = solve(&enc.problem);
    if out.status != LpStatus::Optimal {
        return Ok(None);
    }
    let input = enc
        .inputs
        .iter()
        .map(|&x| out.value(x).clamp(0.0, 1.0))
        .collect();
    Ok(Some(Synthesis {
        input,
        distance: out.value(enc.distance.expect("objective added")),
    }))
}
