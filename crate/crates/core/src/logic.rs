//! Requirement formulas over network activations, their satisfaction by a
//! finite test suite, the coverage metric, and generators for the NC, SSC,
//! NBC and Lipschitz requirement families.

use std::fmt;
use std::ops::Not;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activations, Network, NeuronId};
use crate::norm::Norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InputVar {
    X,
    X1,
    X2,
}

impl fmt::Display for InputVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputVar::X => "x",
            InputVar::X1 => "x1",
            InputVar::X2 => "x2",
        })
    }
}

/// Pre-activation (`u`) or post-activation (`v`) value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueKind {
    Pre,
    Post,
}

/// Which vector a distance term compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistTarget {
    /// The raw inputs.
    Input,
    /// Output-layer logits.
    #[default]
    Output,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArithExpr {
    /// `u[x]_{k,l}` or `v[x]_{k,l}`; layer 1 reads input coordinate `l`.
    Var {
        kind: ValueKind,
        input: InputVar,
        neuron: NeuronId,
    },
    Const(f64),
    Scaled(f64, Box<ArithExpr>),
    Add(Box<ArithExpr>, Box<ArithExpr>),
    Sub(Box<ArithExpr>, Box<ArithExpr>),
    /// `||target(a) - target(b)||` under `norm`.
    Dist {
        target: DistTarget,
        norm: Norm,
        a: InputVar,
        b: InputVar,
    },
}

impl ArithExpr {
    pub fn pre(input: InputVar, neuron: NeuronId) -> Self {
        ArithExpr::Var {
            kind: ValueKind::Pre,
            input,
            neuron,
        }
    }

    pub fn post(input: InputVar, neuron: NeuronId) -> Self {
        ArithExpr::Var {
            kind: ValueKind::Post,
            input,
            neuron,
        }
    }

    /// Input coordinate `i` of `input`.
    pub fn coord(input: InputVar, i: usize) -> Self {
        ArithExpr::post(input, NeuronId::new(1, i))
    }

    pub fn minus(self, rhs: ArithExpr) -> Self {
        ArithExpr::Sub(Box::new(self), Box::new(rhs))
    }

    pub fn plus(self, rhs: ArithExpr) -> Self {
        ArithExpr::Add(Box::new(self), Box::new(rhs))
    }

    pub fn scaled(self, c: f64) -> Self {
        ArithExpr::Scaled(c, Box::new(self))
    }

    pub fn eval(&self, env: &Binding<'_>) -> Result<f64> {
        Ok(match self {
            ArithExpr::Var {
                kind,
                input,
                neuron,
            } => {
                let acts = env.get(*input)?;
                match kind {
                    ValueKind::Pre => acts.pre(*neuron),
                    ValueKind::Post => acts.post(*neuron),
                }
            }
            ArithExpr::Const(p) => *p,
            ArithExpr::Scaled(c, a) => c * a.eval(env)?,
            ArithExpr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            ArithExpr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            ArithExpr::Dist { target, norm, a, b } => {
                let (a, b) = (env.get(*a)?, env.get(*b)?);
                match target {
                    DistTarget::Input => norm.distance(&a.input, &b.input),
                    DistTarget::Output => norm.distance(a.output(), b.output()),
                }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rel {
    Le,
    Lt,
    Eq,
    Gt,
    Ge,
}

impl Rel {
    pub fn holds<T: PartialOrd>(self, lhs: T, rhs: T) -> bool {
        match self {
            Rel::Le => lhs <= rhs,
            Rel::Lt => lhs < rhs,
            Rel::Eq => lhs == rhs,
            Rel::Gt => lhs > rhs,
            Rel::Ge => lhs >= rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Rel::Le => "<=",
            Rel::Lt => "<",
            Rel::Eq => "=",
            Rel::Gt => ">",
            Rel::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoolExpr {
    /// `a ⋈ 0`.
    Atom(ArithExpr, Rel),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
    /// `|{e1..em}| ⋈ q`.
    Count(Vec<BoolExpr>, Rel, usize),
    /// Same activation bit of `neuron` under both inputs.
    SignEq {
        a: InputVar,
        b: InputVar,
        neuron: NeuronId,
    },
    /// Different activation bits of `neuron` under the two inputs.
    SignNeq {
        a: InputVar,
        b: InputVar,
        neuron: NeuronId,
    },
    /// `lower <= input <= upper` coordinatewise.
    InBox {
        input: InputVar,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl Not for BoolExpr {
    type Output = BoolExpr;

    fn not(self) -> BoolExpr {
        BoolExpr::Not(Box::new(self))
    }
}

impl BoolExpr {
    pub fn truth() -> Self {
        BoolExpr::Atom(ArithExpr::Const(1.0), Rel::Gt)
    }

    /// `ap[x]_{k,i} = true`, i.e. `u[x]_{k,i} >= 0`.
    pub fn active(input: InputVar, neuron: NeuronId) -> Self {
        BoolExpr::Atom(ArithExpr::pre(input, neuron), Rel::Ge)
    }

    pub fn and(self, rhs: BoolExpr) -> Self {
        BoolExpr::And(Box::new(self), Box::new(rhs))
    }

    pub fn or(self, rhs: BoolExpr) -> Self {
        self.not().and(rhs.not()).not()
    }

    /// Right-nested conjunction; the empty conjunction is true.
    pub fn all(parts: impl IntoIterator<Item = BoolExpr>) -> Self {
        let mut parts: Vec<_> = parts.into_iter().collect();
        let Some(mut acc) = parts.pop() else {
            return BoolExpr::truth();
        };
        while let Some(prev) = parts.pop() {
            acc = prev.and(acc);
        }
        acc
    }

    pub fn eval(&self, env: &Binding<'_>) -> Result<bool> {
        Ok(match self {
            BoolExpr::Atom(a, rel) => rel.holds(a.eval(env)?, 0.0),
            BoolExpr::And(a, b) => a.eval(env)? && b.eval(env)?,
            BoolExpr::Not(a) => !a.eval(env)?,
            BoolExpr::Count(items, rel, q) => {
                let mut n = 0usize;
                for e in items {
                    if e.eval(env)? {
                        n += 1;
                    }
                }
                rel.holds(n, *q)
            }
            BoolExpr::SignEq { a, b, neuron } => {
                (env.get(*a)?.pre(*neuron) >= 0.0) == (env.get(*b)?.pre(*neuron) >= 0.0)
            }
            BoolExpr::SignNeq { a, b, neuron } => {
                (env.get(*a)?.pre(*neuron) >= 0.0) != (env.get(*b)?.pre(*neuron) >= 0.0)
            }
            BoolExpr::InBox {
                input,
                lower,
                upper,
            } => {
                let x = &env.get(*input)?.input;
                x.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
            }
        })
    }

    /// Rewrites the sign and box shorthands into atoms, conjunction and
    /// negation only.
    pub fn expand(&self) -> BoolExpr {
        match self {
            BoolExpr::Atom(..) => self.clone(),
            BoolExpr::And(a, b) => a.expand().and(b.expand()),
            BoolExpr::Not(a) => a.expand().not(),
            BoolExpr::Count(items, rel, q) => {
                BoolExpr::Count(items.iter().map(BoolExpr::expand).collect(), *rel, *q)
            }
            BoolExpr::SignEq { a, b, neuron } => {
                let pa = BoolExpr::active(*a, *neuron);
                let pb = BoolExpr::active(*b, *neuron);
                pa.clone().and(pb.clone()).or(pa.not().and(pb.not()))
            }
            BoolExpr::SignNeq { a, b, neuron } => BoolExpr::SignEq {
                a: *a,
                b: *b,
                neuron: *neuron,
            }
            .expand()
            .not(),
            BoolExpr::InBox {
                input,
                lower,
                upper,
            } => BoolExpr::all(
                lower
                    .iter()
                    .zip(upper)
                    .enumerate()
                    .flat_map(|(i, (&lo, &hi))| {
                        [
                            BoolExpr::Atom(
                                ArithExpr::coord(*input, i).minus(ArithExpr::Const(hi)),
                                Rel::Le,
                            ),
                            BoolExpr::Atom(
                                ArithExpr::coord(*input, i).minus(ArithExpr::Const(lo)),
                                Rel::Ge,
                            ),
                        ]
                    }),
            ),
        }
    }
}

/// Assignment of concrete (already executed) tests to input variables.
#[derive(Clone, Copy, Debug, Default)]
pub struct Binding<'a> {
    x: Option<&'a Activations>,
    x1: Option<&'a Activations>,
    x2: Option<&'a Activations>,
}

impl<'a> Binding<'a> {
    pub fn single(t: &'a Activations) -> Self {
        Binding {
            x: Some(t),
            ..Default::default()
        }
    }

    pub fn pair(t1: &'a Activations, t2: &'a Activations) -> Self {
        Binding {
            x1: Some(t1),
            x2: Some(t2),
            ..Default::default()
        }
    }

    pub fn with(mut self, var: InputVar, t: &'a Activations) -> Self {
        match var {
            InputVar::X => self.x = Some(t),
            InputVar::X1 => self.x1 = Some(t),
            InputVar::X2 => self.x2 = Some(t),
        }
        self
    }

    pub fn get(&self, var: InputVar) -> Result<&'a Activations> {
        match var {
            InputVar::X => self.x,
            InputVar::X1 => self.x1,
            InputVar::X2 => self.x2,
        }
        .ok_or_else(|| Error::UnboundVariable(var.to_string()))
    }
}

/// Evaluates `e` with each bound variable executed on `net`.
pub fn eval_bool(e: &BoolExpr, binding: &[(InputVar, &[f64])], net: &Network) -> Result<bool> {
    let acts = binding
        .iter()
        .map(|(_, x)| net.forward(x))
        .collect::<Result<Vec<_>>>()?;
    let mut env = Binding::default();
    for ((var, _), a) in binding.iter().zip(&acts) {
        env = env.with(*var, a);
    }
    e.eval(&env)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantifier {
    Exists,
    Forall,
}

/// One quantified input `x`, or a pair `x1, x2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arity {
    One,
    Two,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    #[default]
    Open,
    Satisfied,
    Failed,
}

/// Requirement family, carried so that ranking and synthesis can dispatch
/// without inspecting formula shape.
#[derive(Clone, Debug, PartialEq)]
pub enum Tag {
    Nc {
        neuron: NeuronId,
    },
    Ssc {
        condition: NeuronId,
        decision: NeuronId,
    },
    NbcHigh {
        neuron: NeuronId,
        bound: f64,
    },
    NbcLow {
        neuron: NeuronId,
        bound: f64,
    },
    Lipschitz {
        subspace: usize,
        c: f64,
    },
    Custom(String),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Nc { neuron: n } => write!(f, "NC({},{})", n.layer, n.index),
            Tag::Ssc {
                condition: c,
                decision: d,
            } => write!(f, "SSC({},{},{},{})", c.layer, c.index, d.layer, d.index),
            Tag::NbcHigh { neuron: n, .. } => write!(f, "NBC-hi({},{})", n.layer, n.index),
            Tag::NbcLow { neuron: n, .. } => write!(f, "NBC-lo({},{})", n.layer, n.index),
            Tag::Lipschitz { subspace, .. } => write!(f, "LIP({subspace})"),
            Tag::Custom(name) => f.write_str(name),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Requirement {
    pub quantifier: Quantifier,
    pub arity: Arity,
    pub body: BoolExpr,
    pub tag: Tag,
    pub status: Status,
}

impl Requirement {
    pub fn exists(arity: Arity, body: BoolExpr, tag: Tag) -> Self {
        Requirement {
            quantifier: Quantifier::Exists,
            arity,
            body,
            tag,
            status: Status::Open,
        }
    }

    /// Whether this requirement holds over already-executed tests.
    pub fn holds_on(&self, suite: &[Activations]) -> Result<bool> {
        let want = self.quantifier == Quantifier::Exists;
        match self.arity {
            Arity::One => {
                for t in suite {
                    if self.body.eval(&Binding::single(t))? == want {
                        return Ok(want);
                    }
                }
            }
            Arity::Two => {
                for t1 in suite {
                    for t2 in suite {
                        if self.body.eval(&Binding::pair(t1, t2))? == want {
                            return Ok(want);
                        }
                    }
                }
            }
        }
        Ok(!want)
    }

    /// Like [`Requirement::holds_on`] for existential requirements, but only
    /// looks at witnesses that involve a test at index `from` or later.
    /// Universal requirements are re-checked in full.
    pub fn holds_with_new(&self, suite: &[Activations], from: usize) -> Result<bool> {
        if self.quantifier == Quantifier::Forall {
            return self.holds_on(suite);
        }
        match self.arity {
            Arity::One => {
                for t in suite.iter().skip(from) {
                    if self.body.eval(&Binding::single(t))? {
                        return Ok(true);
                    }
                }
            }
            Arity::Two => {
                for (i, t1) in suite.iter().enumerate() {
                    let start = if i >= from { 0 } else { from };
                    for t2 in suite.iter().skip(start) {
                        if self.body.eval(&Binding::pair(t1, t2))? {
                            return Ok(true);
                        }
                    }
                }
            }
        }
        Ok(false)
    }

    pub fn record(&self) -> RequirementRecord {
        RequirementRecord {
            tag: self.tag.to_string(),
            quantifier: self.quantifier,
            arity: match self.arity {
                Arity::One => 1,
                Arity::Two => 2,
            },
            body: self.body.to_string(),
            status: self.status,
        }
    }
}

/// Audit form of a requirement: tag, quantifier and an S-expression body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequirementRecord {
    pub tag: String,
    pub quantifier: Quantifier,
    pub arity: u8,
    pub body: String,
    pub status: Status,
}

/// `T ⊨ r` for a suite of raw inputs.
pub fn satisfies(suite: &[Vec<f64>], r: &Requirement, net: &Network) -> Result<bool> {
    let acts = execute(suite, net)?;
    r.holds_on(&acts)
}

/// Fraction of `reqs` satisfied by the suite.
pub fn coverage(suite: &[Vec<f64>], reqs: &[Requirement], net: &Network) -> Result<f64> {
    let acts = execute(suite, net)?;
    coverage_on(&acts, reqs)
}

pub fn coverage_on(suite: &[Activations], reqs: &[Requirement]) -> Result<f64> {
    if reqs.is_empty() {
        return Err(Error::EmptyRequirements);
    }
    let mut hit = 0usize;
    for r in reqs {
        if r.holds_on(suite)? {
            hit += 1;
        }
    }
    Ok(hit as f64 / reqs.len() as f64)
}

pub fn execute(suite: &[Vec<f64>], net: &Network) -> Result<Vec<Activations>> {
    suite.iter().map(|t| net.forward(t)).collect()
}

/// One requirement per hidden ReLU neuron asking for a test that activates it.
pub fn gen_nc(net: &Network) -> Vec<Requirement> {
    net.relu_neurons()
        .into_iter()
        .map(|n| {
            Requirement::exists(
                Arity::One,
                BoolExpr::active(InputVar::X, n),
                Tag::Nc { neuron: n },
            )
        })
        .collect()
}

/// Sign-sign pairs of adjacent hidden ReLU layers; `None` selects every pair.
pub fn gen_ssc(net: &Network, pairs: Option<&[(NeuronId, NeuronId)]>) -> Result<Vec<Requirement>> {
    let all;
    let pairs = match pairs {
        Some(p) => p,
        None => {
            all = ssc_pairs(net);
            &all
        }
    };
    let k_max = net.num_layers();
    let mut out = Vec::with_capacity(pairs.len());
    for &(cond, dec) in pairs {
        if dec.layer != cond.layer + 1 {
            return Err(Error::Generation(format!(
                "SSC pair {cond}, {dec} spans non-adjacent layers"
            )));
        }
        if cond.layer < 2 || cond.layer + 2 > k_max {
            return Err(Error::Generation(format!(
                "SSC condition layer {} outside 2..={}",
                cond.layer,
                k_max - 2
            )));
        }
        if !net.is_relu_layer(cond.layer) || !net.is_relu_layer(dec.layer) {
            return Err(Error::Generation(format!(
                "SSC pair {cond}, {dec} must sit on ReLU layers"
            )));
        }
        if cond.index >= net.width(cond.layer) || dec.index >= net.width(dec.layer) {
            return Err(Error::Generation(format!(
                "SSC pair {cond}, {dec} out of range"
            )));
        }
        let mut parts = vec![
            BoolExpr::SignNeq {
                a: InputVar::X1,
                b: InputVar::X2,
                neuron: cond,
            },
            BoolExpr::SignNeq {
                a: InputVar::X1,
                b: InputVar::X2,
                neuron: dec,
            },
        ];
        parts.extend(
            (0..net.width(cond.layer))
                .filter(|&l| l != cond.index)
                .map(|l| BoolExpr::SignEq {
                    a: InputVar::X1,
                    b: InputVar::X2,
                    neuron: NeuronId::new(cond.layer, l),
                }),
        );
        out.push(Requirement::exists(
            Arity::Two,
            BoolExpr::all(parts),
            Tag::Ssc {
                condition: cond,
                decision: dec,
            },
        ));
    }
    Ok(out)
}

/// Every (condition, decision) pair over adjacent hidden ReLU layers.
pub fn ssc_pairs(net: &Network) -> Vec<(NeuronId, NeuronId)> {
    let mut out = Vec::new();
    for k in 2..net.num_layers().saturating_sub(1) {
        if !net.is_relu_layer(k) || !net.is_relu_layer(k + 1) {
            continue;
        }
        for i in 0..net.width(k) {
            for j in 0..net.width(k + 1) {
                out.push((NeuronId::new(k, i), NeuronId::new(k + 1, j)));
            }
        }
    }
    out
}

/// Per-neuron activation bounds for boundary coverage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeuronBounds {
    pub entries: Vec<NeuronBound>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronBound {
    pub neuron: NeuronId,
    pub low: f64,
    pub high: f64,
}

impl NeuronBounds {
    /// Min/max of each hidden ReLU pre-activation over `samples`, widened on
    /// both sides by `widen` times the observed range.
    pub fn from_samples(net: &Network, samples: &[Activations], widen: f64) -> Self {
        let entries = net
            .relu_neurons()
            .into_iter()
            .map(|n| {
                let (lo, hi) = samples
                    .iter()
                    .map(|a| a.pre(n))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
                        (lo.min(u), hi.max(u))
                    });
                let pad = (hi - lo) * widen;
                NeuronBound {
                    neuron: n,
                    low: lo - pad,
                    high: hi + pad,
                }
            })
            .collect();
        NeuronBounds { entries }
    }

    pub fn get(&self, n: NeuronId) -> Option<&NeuronBound> {
        self.entries.iter().find(|b| b.neuron == n)
    }
}

/// Two requirements per bounded neuron: exceed the high bound, undercut the
/// low bound.
pub fn gen_nbc(net: &Network, bounds: &NeuronBounds) -> Result<Vec<Requirement>> {
    let mut out = Vec::with_capacity(2 * bounds.entries.len());
    for b in &bounds.entries {
        let n = b.neuron;
        if !net.is_relu_layer(n.layer) || n.index >= net.width(n.layer) {
            return Err(Error::Generation(format!(
                "{n} is not a hidden ReLU neuron"
            )));
        }
        if !b.low.is_finite() || !b.high.is_finite() {
            return Err(Error::Generation(format!("{n} has a non-finite bound")));
        }
        if b.high < b.low {
            return Err(Error::Generation(format!(
                "{n}: high bound {} below low bound {}",
                b.high, b.low
            )));
        }
        out.push(Requirement::exists(
            Arity::One,
            BoolExpr::Atom(
                ArithExpr::pre(InputVar::X, n).minus(ArithExpr::Const(b.high)),
                Rel::Gt,
            ),
            Tag::NbcHigh {
                neuron: n,
                bound: b.high,
            },
        ));
        out.push(Requirement::exists(
            Arity::One,
            BoolExpr::Atom(
                ArithExpr::pre(InputVar::X, n).minus(ArithExpr::Const(b.low)),
                Rel::Lt,
            ),
            Tag::NbcLow {
                neuron: n,
                bound: b.low,
            },
        ));
    }
    Ok(out)
}

/// An L∞ box `center ± radius`, clipped to the unit input domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subspace {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Subspace {
    pub fn lower(&self) -> Vec<f64> {
        self.center
            .iter()
            .map(|c| (c - self.radius).max(0.0))
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center
            .iter()
            .map(|c| (c + self.radius).min(1.0))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower().iter().zip(self.upper()))
            .all(|(&xi, (&lo, hi))| xi >= lo && xi <= hi)
    }
}

/// Subspaces of interest: one box around each seed input.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubspacePartition {
    pub boxes: Vec<Subspace>,
}

impl SubspacePartition {
    pub fn around(seeds: &[Vec<f64>], radius: f64) -> Self {
        SubspacePartition {
            boxes: seeds
                .iter()
                .map(|s| Subspace {
                    center: s.clone(),
                    radius,
                })
                .collect(),
        }
    }
}

/// Per box: two inputs inside it whose `target` distance exceeds `c` times
/// their input distance.
pub fn gen_lipschitz(
    partition: &SubspacePartition,
    c: f64,
    norm: Norm,
    target: DistTarget,
) -> Result<Vec<Requirement>> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Generation(format!(
            "Lipschitz constant must be positive, got {c}"
        )));
    }
    Ok(partition
        .boxes
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let gap = ArithExpr::Dist {
                target,
                norm,
                a: InputVar::X1,
                b: InputVar::X2,
            }
            .minus(
                ArithExpr::Dist {
                    target: DistTarget::Input,
                    norm,
                    a: InputVar::X1,
                    b: InputVar::X2,
                }
                .scaled(c),
            );
            let (lower, upper) = (b.lower(), b.upper());
            let body = BoolExpr::all([
                BoolExpr::Atom(gap, Rel::Gt),
                BoolExpr::InBox {
                    input: InputVar::X1,
                    lower: lower.clone(),
                    upper: upper.clone(),
                },
                BoolExpr::InBox {
                    input: InputVar::X2,
                    lower,
                    upper,
                },
            ]);
            Requirement::exists(Arity::Two, body, Tag::Lipschitz { subspace: j, c })
        })
        .collect())
}

impl fmt::Display for ArithExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArithExpr::Var {
                kind,
                input,
                neuron,
            } => {
                let k = match kind {
                    ValueKind::Pre => "u",
                    ValueKind::Post => "v",
                };
                write!(f, "({k} {input} {} {})", neuron.layer, neuron.index)
            }
            ArithExpr::Const(p) => write!(f, "{p}"),
            ArithExpr::Scaled(c, a) => write!(f, "(* {c} {a})"),
            ArithExpr::Add(a, b) => write!(f, "(+ {a} {b})"),
            ArithExpr::Sub(a, b) => write!(f, "(- {a} {b})"),
            ArithExpr::Dist { target, norm, a, b } => {
                let t = match target {
                    DistTarget::Input => "dist-in",
                    DistTarget::Output => "dist-out",
                };
                write!(f, "({t} {norm} {a} {b})")
            }
        }
    }
}

fn write_vec(f: &mut fmt::Formatter<'_>, head: &str, xs: &[f64]) -> fmt::Result {
    write!(f, "({head}")?;
    for x in xs {
        write!(f, " {x}")?;
    }
    f.write_str(")")
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Atom(a, rel) => write!(f, "({} {a} 0)", rel.symbol()),
            BoolExpr::And(a, b) => write!(f, "(and {a} {b})"),
            BoolExpr::Not(a) => write!(f, "(not {a})"),
            BoolExpr::Count(items, rel, q) => {
                write!(f, "(count {} {q}", rel.symbol())?;
                for e in items {
                    write!(f, " {e}")?;
                }
                f.write_str(")")
            }
            BoolExpr::SignEq { a, b, neuron } => {
                write!(f, "(sign= {a} {b} {} {})", neuron.layer, neuron.index)
            }
            BoolExpr::SignNeq { a, b, neuron } => {
                write!(f, "(sign!= {a} {b} {} {})", neuron.layer, neuron.index)
            }
            BoolExpr::InBox {
                input,
                lower,
                upper,
            } => {
                write!(f, "(in-box {input} ")?;
                write_vec(f, "lo", lower)?;
                f.write_str(" ")?;
                write_vec(f, "hi", upper)?;
                f.write_str(")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Network {
        // 2 inputs -> 3 relu -> 2 relu -> 2 logits
        Network::dense(
            2,
            vec![
                (
                    vec![vec![1.0, -1.0, 0.5], vec![-1.0, 1.0, 0.5]],
                    vec![0.0, 0.0, -0.5],
                    true,
                ),
                (
                    vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![1.0, 1.0]],
                    vec![0.0, 0.1],
                    true,
                ),
                (
                    vec![vec![1.0, -1.0], vec![-1.0, 1.0]],
                    vec![0.0, 0.0],
                    false,
                ),
            ],
        )
        .unwrap()
    }

    fn identity2() -> Network {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        Network::dense(
            2,
            vec![(id.clone(), vec![0.0; 2], true), (id, vec![0.0; 2], false)],
        )
        .unwrap()
    }

    #[test]
    fn trivial_atoms_and_counts() {
        let env = Binding::default();
        let f = BoolExpr::Atom(ArithExpr::Const(-1.0), Rel::Gt);
        assert!(!f.eval(&env).unwrap());
        let t = BoolExpr::truth();
        let c = BoolExpr::Count(vec![t.clone(), f.clone(), t.clone()], Rel::Ge, 2);
        assert!(c.eval(&env).unwrap());
        let c3 = BoolExpr::Count(vec![t.clone(), f, t], Rel::Ge, 3);
        assert!(!c3.eval(&env).unwrap());
    }

    #[test]
    fn unbound_variable_errors() {
        let e = BoolExpr::active(InputVar::X1, NeuronId::new(2, 0));
        assert!(matches!(
            e.eval(&Binding::default()),
            Err(Error::UnboundVariable(v)) if v == "x1"
        ));
    }

    #[test]
    fn sign_neq_on_opposite_signs() {
        let net = fixture();
        let n = NeuronId::new(2, 0);
        // u_{2,0} = x0 - x1
        let a = [0.9, 0.1];
        let b = [0.1, 0.9];
        assert!(net.forward(&a).unwrap().pre(n) > 0.0);
        assert!(net.forward(&b).unwrap().pre(n) < 0.0);
        let e = BoolExpr::SignNeq {
            a: InputVar::X1,
            b: InputVar::X2,
            neuron: n,
        };
        assert!(eval_bool(&e, &[(InputVar::X1, &a), (InputVar::X2, &b)], &net).unwrap());
        assert!(!eval_bool(&e, &[(InputVar::X1, &a), (InputVar::X2, &a)], &net).unwrap());
    }

    #[test]
    fn exists_with_trivial_body() {
        let net = fixture();
        let r = Requirement::exists(Arity::One, BoolExpr::truth(), Tag::Custom("t".into()));
        assert!(satisfies(&[vec![0.3, 0.3]], &r, &net).unwrap());
    }

    #[test]
    fn unsatisfied_activation_requirement() {
        let net = fixture();
        // u_{2,2} = 0.5 x0 + 0.5 x1 - 0.5 < 0 for this input
        let t = vec![0.2, 0.2];
        let n = NeuronId::new(2, 2);
        assert!(net.forward(&t).unwrap().pre(n) < 0.0);
        let r = Requirement::exists(
            Arity::One,
            BoolExpr::Atom(ArithExpr::pre(InputVar::X, n), Rel::Gt),
            Tag::Nc { neuron: n },
        );
        assert!(!satisfies(&[t], &r, &net).unwrap());
    }

    #[test]
    fn coverage_fractions() {
        let net = fixture();
        let t = BoolExpr::truth();
        let f = t.clone().not();
        let mk = |b: &BoolExpr| Requirement::exists(Arity::One, b.clone(), Tag::Custom("c".into()));
        let suite = vec![vec![0.5, 0.5]];
        let reqs = vec![mk(&t), mk(&t), mk(&t), mk(&f)];
        assert_eq!(coverage(&suite, &reqs, &net).unwrap(), 0.75);
        assert_eq!(coverage(&suite, &reqs[..3], &net).unwrap(), 1.0);
        assert_eq!(coverage(&suite, &reqs[3..], &net).unwrap(), 0.0);
        assert!(matches!(
            coverage(&suite, &[], &net),
            Err(Error::EmptyRequirements)
        ));
    }

    #[test]
    fn forall_over_pairs() {
        let net = fixture();
        let r = Requirement {
            quantifier: Quantifier::Forall,
            arity: Arity::Two,
            body: BoolExpr::SignEq {
                a: InputVar::X1,
                b: InputVar::X2,
                neuron: NeuronId::new(2, 0),
            },
            tag: Tag::Custom("all-same".into()),
            status: Status::Open,
        };
        assert!(satisfies(&[vec![0.9, 0.1], vec![0.8, 0.2]], &r, &net).unwrap());
        assert!(!satisfies(&[vec![0.9, 0.1], vec![0.1, 0.9]], &r, &net).unwrap());
    }

    #[test]
    fn nc_generation_counts() {
        let net = Network::dense(
            3,
            vec![
                (vec![vec![0.1; 8]; 3], vec![0.0; 8], true),
                (vec![vec![0.1; 8]; 8], vec![0.0; 8], true),
                (vec![vec![0.1; 2]; 8], vec![0.0; 2], false),
            ],
        )
        .unwrap();
        assert_eq!(gen_nc(&net).len(), 16);
    }

    #[test]
    fn nc_body_tracks_activation() {
        let net = fixture();
        let reqs = gen_nc(&net);
        assert_eq!(reqs.len(), 5);
        for step in 0..=10 {
            let x = vec![step as f64 / 10.0, 1.0 - step as f64 / 13.0];
            let acts = net.forward(&x).unwrap();
            for r in &reqs {
                let Tag::Nc { neuron } = r.tag else {
                    unreachable!()
                };
                assert_eq!(
                    r.body.eval(&Binding::single(&acts)).unwrap(),
                    acts.pre(neuron) >= 0.0
                );
            }
        }
    }

    #[test]
    fn ssc_generation_shape() {
        let net = fixture();
        let reqs = gen_ssc(&net, None).unwrap();
        assert_eq!(reqs.len(), 6);
        // "others unchanged" has s_k - 1 = 2 SignEq conjuncts
        let s = reqs[0].body.to_string();
        assert_eq!(s.matches("sign=").count(), 2);
        assert_eq!(s.matches("sign!=").count(), 2);
        let bad = gen_ssc(&net, Some(&[(NeuronId::new(2, 0), NeuronId::new(4, 0))]));
        assert!(matches!(bad, Err(Error::Generation(_))));
    }

    #[test]
    fn ssc_grid_witness_satisfies_body() {
        let net = fixture();
        let reqs = gen_ssc(&net, None).unwrap();
        let grid: Vec<Vec<f64>> = (0..=20)
            .flat_map(|i| (0..=20).map(move |j| vec![i as f64 / 20.0, j as f64 / 20.0]))
            .collect();
        let acts = execute(&grid, &net).unwrap();
        let mut found = 0;
        for r in &reqs {
            let Tag::Ssc {
                condition,
                decision,
            } = r.tag
            else {
                unreachable!()
            };
            // Independent pattern-level search for a witness pair.
            let witness = acts.iter().enumerate().find_map(|(a, t1)| {
                acts.iter().enumerate().find_map(|(b, t2)| {
                    let p1 = t1.pattern();
                    let p2 = t2.pattern();
                    let flips = |n: NeuronId| p1.get(n) != p2.get(n);
                    let ok = flips(condition)
                        && flips(decision)
                        && (0..3)
                            .map(|l| NeuronId::new(condition.layer, l))
                            .filter(|&n| n != condition)
                            .all(|n| !flips(n));
                    ok.then_some((a, b))
                })
            });
            if let Some((a, b)) = witness {
                found += 1;
                assert!(r.body.eval(&Binding::pair(&acts[a], &acts[b])).unwrap());
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn nbc_generation() {
        let net = fixture();
        let neurons = net.relu_neurons();
        let bounds = NeuronBounds {
            entries: neurons
                .iter()
                .map(|&n| NeuronBound {
                    neuron: n,
                    low: -1.0,
                    high: 1.0,
                })
                .collect(),
        };
        assert_eq!(gen_nbc(&net, &bounds).unwrap().len(), 2 * neurons.len());
        let mut inverted = bounds.clone();
        inverted.entries[0].high = -2.0;
        assert!(gen_nbc(&net, &inverted).is_err());
        let mut infinite = bounds;
        infinite.entries[0].high = f64::INFINITY;
        assert!(gen_nbc(&net, &infinite).is_err());
    }

    #[test]
    fn nbc_bounds_from_samples_are_not_reached_by_samples() {
        use rand::{Rng, SeedableRng};
        let net = fixture();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..2).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let acts = execute(&samples, &net).unwrap();
        for widen in [0.0, 0.05] {
            let bounds = NeuronBounds::from_samples(&net, &acts, widen);
            let reqs = gen_nbc(&net, &bounds).unwrap();
            assert_eq!(coverage_on(&acts, &reqs).unwrap(), 0.0);
        }
    }

    #[test]
    fn lipschitz_generation() {
        let seeds: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 50.0, 0.5]).collect();
        let part = SubspacePartition::around(&seeds, 0.1);
        let reqs = gen_lipschitz(&part, 1.0, Norm::Linf, DistTarget::Output).unwrap();
        assert_eq!(reqs.len(), 50);
        assert!(gen_lipschitz(&part, 0.0, Norm::Linf, DistTarget::Output).is_err());
    }

    #[test]
    fn lipschitz_body_on_identity_net() {
        let net = identity2();
        let part = SubspacePartition::around(&[vec![0.5, 0.5]], 0.1);
        let r = &gen_lipschitz(&part, 0.5, Norm::Linf, DistTarget::Output).unwrap()[0];
        let t1 = net.forward(&[0.45, 0.5]).unwrap();
        let t2 = net.forward(&[0.55, 0.52]).unwrap();
        assert!(r.body.eval(&Binding::pair(&t1, &t2)).unwrap());
        // Same point twice: numerator zero.
        assert!(!r.body.eval(&Binding::pair(&t1, &t1)).unwrap());
        // Outside the box.
        let far = net.forward(&[0.9, 0.5]).unwrap();
        assert!(!r.body.eval(&Binding::pair(&t1, &far)).unwrap());
    }

    #[test]
    fn s_expression_form() {
        let e = BoolExpr::Atom(
            ArithExpr::pre(InputVar::X, NeuronId::new(2, 1)).minus(ArithExpr::Const(0.5)),
            Rel::Gt,
        );
        assert_eq!(e.to_string(), "(> (- (u x 2 1) 0.5) 0)");
        let rec = Requirement::exists(
            Arity::One,
            e,
            Tag::NbcHigh {
                neuron: NeuronId::new(2, 1),
                bound: 0.5,
            },
        )
        .record();
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"tag\":\"NBC-hi(2,1)\""), "{json}");
        assert!(json.contains("\"quantifier\":\"exists\""), "{json}");
    }
}
