//! Post-hoc oracles over a finished suite: validity against a reference set
//! and label agreement with the nearest reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logic::{Requirement, RequirementRecord, Status};
use crate::network::{Activations, Network};
use crate::norm::Norm;

/// Inputs assumed to be classified correctly, optionally with their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub inputs: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
}

impl ReferenceSet {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Config("reference set is empty".into()));
        }
        if let Some(l) = &labels {
            if l.len() != inputs.len() {
                return Err(Error::Config(format!(
                    "{} reference labels for {} inputs",
                    l.len(),
                    inputs.len()
                )));
            }
        }
        Ok(ReferenceSet { inputs, labels })
    }

    pub fn unlabelled(inputs: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(inputs, None)
    }

    pub fn check_labels(&self, classes: usize) -> Result<()> {
        match &self.labels {
            Some(l) if l.iter().any(|&c| c >= classes) => Err(Error::Config(format!(
                "reference label out of range for {classes} classes"
            ))),
            _ => Ok(()),
        }
    }

    pub fn trusted_label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }
}

/// Index of the closest reference and its distance; ties go to the
/// earliest reference.
pub fn nearest(refs: &ReferenceSet, t: &[f64], norm: Norm) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, r) in refs.inputs.iter().enumerate() {
        let d = norm.distance(r, t);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Some reference lies within `bound` of `t`.
pub fn validity_check(refs: &ReferenceSet, t: &[f64], bound: f64, norm: Norm) -> bool {
    nearest(refs, t, norm).1 <= bound
}

/// A valid test whose label disagrees with its nearest reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRecord {
    /// Position of the test in the suite.
    pub test: usize,
    pub input: Vec<f64>,
    pub reference: usize,
    pub distance: f64,
    pub label: usize,
    pub reference_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trusted_label: Option<usize>,
    pub norm: Norm,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Robustness {
    Pass,
    Fail(AdversarialRecord),
}

/// Compares the label of `t` with the label of its nearest reference.
pub fn robustness_check(
    net: &Network,
    refs: &ReferenceSet,
    test: usize,
    t: &[f64],
    norm: Norm,
    bound: f64,
) -> Result<Robustness> {
    let (r, distance) = nearest(refs, t, norm);
    let label = net.label(t)?;
    let reference_label = net.label(&refs.inputs[r])?;
    if label == reference_label {
        return Ok(Robustness::Pass);
    }
    Ok(Robustness::Fail(AdversarialRecord {
        test,
        input: t.to_vec(),
        reference: r,
        distance,
        label,
        reference_label,
        trusted_label: refs.trusted_label(r),
        norm,
        bound,
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub total: usize,
    pub satisfied: usize,
    pub open: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub totals: Totals,
    pub requirements: Vec<RequirementRecord>,
    pub suite_size: usize,
    pub adversarial: Vec<AdversarialRecord>,
    /// Adversarial tests as a percentage of the suite.
    pub adversary_percent: f64,
    pub distance_min: Option<f64>,
    pub distance_mean: Option<f64>,
}

/// Coverage of `reqs` by `suite` plus the robustness verdict on every valid
/// test. Requirements the suite satisfies are reported as such; the others
/// keep their status (open or failed).
pub fn suite_report(
    net: &Network,
    refs: &ReferenceSet,
    suite: &[Activations],
    reqs: &[Requirement],
    norm: Norm,
    bound: f64,
) -> Result<CoverageReport> {
    let mut records = Vec::with_capacity(reqs.len());
    let mut totals = Totals {
        total: reqs.len(),
        ..Totals::default()
    };
    for r in reqs {
        let mut rec = r.record();
        rec.status = if r.holds_on(suite)? {
            Status::Satisfied
        } else if r.status == Status::Failed {
            Status::Failed
        } else {
            Status::Open
        };
        match rec.status {
            Status::Satisfied => totals.satisfied += 1,
            Status::Open => totals.open += 1,
            Status::Failed => totals.failed += 1,
        }
        records.push(rec);
    }
    let coverage = if reqs.is_empty() {
        1.0
    } else {
        totals.satisfied as f64 / reqs.len() as f64
    };

    let mut adversarial = Vec::new();
    for (i, t) in suite.iter().enumerate() {
        if !validity_check(refs, &t.input, bound, norm) {
            continue;
        }
        if let Robustness::Fail(rec) = robustness_check(net, refs, i, &t.input, norm, bound)? {
            adversarial.push(rec);
        }
    }
    let dists: Vec<f64> = adversarial.iter().map(|a| a.distance).collect();
    let distance_min = dists.iter().copied().reduce(f64::min);
    let distance_mean = (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64);
    let adversary_percent = if suite.is_empty() {
        0.0
    } else {
        100.0 * adversarial.len() as f64 / suite.len() as f64
    };
    Ok(CoverageReport {
        coverage,
        totals,
        requirements: records,
        suite_size: suite.len(),
        adversarial,
        adversary_percent,
        distance_min,
        distance_mean,
    })
}

/// Result of re-checking one record from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordCheck {
    pub test: usize,
    pub ok: bool,
    pub problems: Vec<String>,
}

/// Recomputes nearest reference, distance and both labels for `rec` and
/// confirms the labels differ, the distance is within the bound, and the
/// stored values match.
pub fn reverify(
    net: &Network,
    refs: &ReferenceSet,
    rec: &AdversarialRecord,
) -> Result<RecordCheck> {
    let mut problems = Vec::new();
    let (r, distance) = nearest(refs, &rec.input, rec.norm);
    let label = net.label(&rec.input)?;
    let reference_label = net.label(&refs.inputs[r])?;
    if label == reference_label {
        problems.push(format!("labels agree ({label})"));
    }
    if distance > rec.bound {
        problems.push(format!("distance {distance} exceeds bound {}", rec.bound));
    }
    if r != rec.reference {
        problems.push(format!(
            "nearest reference is {r}, record says {}",
            rec.reference
        ));
    }
    if distance != rec.distance {
        problems.push(format!(
            "distance is {distance}, record says {}",
            rec.distance
        ));
    }
    if label != rec.label || reference_label != rec.reference_label {
        problems.push(format!(
            "labels are {label}/{reference_label}, record says {}/{}",
            rec.label, rec.reference_label
        ));
    }
    Ok(RecordCheck {
        test: rec.test,
        ok: problems.is_empty(),
        problems,
    })
}
