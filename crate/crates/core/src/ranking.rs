//! Concrete-execution heuristics: score every open (test, requirement)
//! candidate against the current suite and pick the most promising one.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::logic::{DistTarget, Requirement, Status, SubspacePartition, Tag};
use crate::network::{Activations, Network, NeuronId};
use crate::norm::Norm;

/// Floor on the mean absolute activation before taking its reciprocal.
pub const FACTOR_FLOOR: f64 = 1e-12;

/// Per-layer normalisation `c_k` making scores comparable across layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerFactors {
    factors: BTreeMap<usize, f64>,
}

impl LayerFactors {
    /// `c_k = 1 / max(mean |u_k|, 1e-12)` over `samples` and the neurons of
    /// every hidden layer.
    pub fn estimate(net: &Network, samples: &[Activations]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config(
                "layer factors need at least one sample".into(),
            ));
        }
        let mut factors = BTreeMap::new();
        for k in 2..net.num_layers() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for a in samples {
                for &u in &a.u[k - 2] {
                    sum += u.abs();
                    count += 1;
                }
            }
            let mean = if count == 0 { 0.0 } else { sum / count as f64 };
            factors.insert(k, 1.0 / mean.max(FACTOR_FLOOR));
        }
        Ok(LayerFactors { factors })
    }

    /// `c_k = 1` everywhere.
    pub fn uniform() -> Self {
        LayerFactors::default()
    }

    pub fn get(&self, layer: usize) -> f64 {
        self.factors.get(&layer).copied().unwrap_or(1.0)
    }
}

/// The chosen requirement with its witness tests and score.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedCandidate {
    /// Index into the requirement list.
    pub requirement: usize,
    /// Indices into the suite: one test, or an ordered pair.
    pub witnesses: Vec<usize>,
    pub score: f64,
}

/// `val(t, δ(r))` for single-input families; `None` for other tags.
pub fn single_score(tag: &Tag, t: &Activations, factors: &LayerFactors) -> Option<f64> {
    Some(match *tag {
        Tag::Nc { neuron } => factors.get(neuron.layer) * t.pre(neuron),
        Tag::Ssc { condition, .. } => -factors.get(condition.layer) * t.pre(condition).abs(),
        Tag::NbcHigh { neuron, bound } => factors.get(neuron.layer) * (t.pre(neuron) - bound),
        Tag::NbcLow { neuron, bound } => factors.get(neuron.layer) * (bound - t.pre(neuron)),
        Tag::Lipschitz { .. } | Tag::Custom(_) => return None,
    })
}

/// Neuron order used to break score ties.
fn tie_key(tag: &Tag) -> (NeuronId, NeuronId) {
    let none = NeuronId::new(usize::MAX, usize::MAX);
    match *tag {
        Tag::Nc { neuron } | Tag::NbcHigh { neuron, .. } | Tag::NbcLow { neuron, .. } => {
            (neuron, none)
        }
        Tag::Ssc {
            condition,
            decision,
        } => (condition, decision),
        _ => (none, none),
    }
}

type Key = (NeuronId, NeuronId, usize, Vec<usize>);

fn better(score: f64, key: &Key, best: &Option<(f64, Key, RankedCandidate)>) -> bool {
    match best {
        None => true,
        Some((s, k, _)) => score > *s || (score == *s && key < k),
    }
}

/// Argmax of [`single_score`] over open requirements accepted by `family`
/// and every test, skipping pairs for which `skip(requirement, test)`
/// holds. Ties go to the lowest neuron, then the earliest test.
pub fn rank_single(
    suite: &[Activations],
    reqs: &[Requirement],
    factors: &LayerFactors,
    family: impl Fn(&Tag) -> bool,
    skip: impl Fn(usize, usize) -> bool,
) -> Option<RankedCandidate> {
    let mut best: Option<(f64, Key, RankedCandidate)> = None;
    for (ri, r) in reqs.iter().enumerate() {
        if r.status != Status::Open || !family(&r.tag) {
            continue;
        }
        let (a, b) = tie_key(&r.tag);
        for (ti, t) in suite.iter().enumerate() {
            if skip(ri, ti) {
                continue;
            }
            let Some(score) = single_score(&r.tag, t, factors) else {
                continue;
            };
            if !score.is_finite() {
                continue;
            }
            let key = (a, b, ri, vec![ti]);
            if better(score, &key, &best) {
                best = Some((
                    score,
                    key,
                    RankedCandidate {
                        requirement: ri,
                        witnesses: vec![ti],
                        score,
                    },
                ));
            }
        }
    }
    best.map(|(_, _, c)| c)
}

pub fn rank_nc(
    suite: &[Activations],
    reqs: &[Requirement],
    factors: &LayerFactors,
    skip: impl Fn(usize, usize) -> bool,
) -> Option<RankedCandidate> {
    rank_single(suite, reqs, factors, |t| matches!(t, Tag::Nc { .. }), skip)
}

pub fn rank_ssc(
    suite: &[Activations],
    reqs: &[Requirement],
    factors: &LayerFactors,
    skip: impl Fn(usize, usize) -> bool,
) -> Option<RankedCandidate> {
    rank_single(suite, reqs, factors, |t| matches!(t, Tag::Ssc { .. }), skip)
}

pub fn rank_nbc(
    suite: &[Activations],
    reqs: &[Requirement],
    factors: &LayerFactors,
    skip: impl Fn(usize, usize) -> bool,
) -> Option<RankedCandidate> {
    rank_single(
        suite,
        reqs,
        factors,
        |t| matches!(t, Tag::NbcHigh { .. } | Tag::NbcLow { .. }),
        skip,
    )
}

/// How Lipschitz distances are measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipMetric {
    pub norm: Norm,
    pub target: DistTarget,
}

impl Default for LipMetric {
    fn default() -> Self {
        LipMetric {
            norm: Norm::Linf,
            target: DistTarget::Output,
        }
    }
}

impl LipMetric {
    pub fn gap(&self, a: &Activations, b: &Activations, c: f64) -> f64 {
        let out = match self.target {
            DistTarget::Output => self.norm.distance(a.output(), b.output()),
            DistTarget::Input => self.norm.distance(&a.input, &b.input),
        };
        out - c * self.norm.distance(&a.input, &b.input)
    }
}

/// Per open Lipschitz requirement, the best ordered pair of in-box tests
/// by `||out(t1) - out(t2)|| - c ||t1 - t2||`; the global best is returned.
/// Boxes holding no test are skipped.
pub fn rank_lipschitz(
    suite: &[Activations],
    reqs: &[Requirement],
    partition: &SubspacePartition,
    metric: LipMetric,
) -> Option<RankedCandidate> {
    let mut best: Option<(f64, Key, RankedCandidate)> = None;
    let none = NeuronId::new(usize::MAX, usize::MAX);
    for (ri, r) in reqs.iter().enumerate() {
        let Tag::Lipschitz { subspace, c } = r.tag else {
            continue;
        };
        if r.status != Status::Open {
            continue;
        }
        let Some(bx) = partition.boxes.get(subspace) else {
            continue;
        };
        let inside: Vec<usize> = (0..suite.len())
            .filter(|&i| bx.contains(&suite[i].input))
            .collect();
        for &i in &inside {
            for &j in &inside {
                let score = metric.gap(&suite[i], &suite[j], c);
                let key = (none, none, ri, vec![i, j]);
                if score.is_finite() && better(score, &key, &best) {
                    best = Some((
                        score,
                        key,
                        RankedCandidate {
                            requirement: ri,
                            witnesses: vec![i, j],
                            score,
                        },
                    ));
                }
            }
        }
    }
    best.map(|(_, _, c)| c)
}
