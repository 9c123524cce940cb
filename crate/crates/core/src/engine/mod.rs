//! The concolic loop: rank a (test, requirement) candidate, synthesize a new
//! input for it, keep the input when it is valid, and repeat until every
//! requirement is satisfied or given up on.

pub mod suite;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l0::{symbolic_l0, L0Budget};
use crate::lipschitz::{lipschitz_search, random_baseline, LipConfig, LipRow};
use crate::logic::{
    gen_lipschitz, gen_nbc, gen_nc, gen_ssc, NeuronBounds, Requirement, Status, SubspacePartition,
    Tag,
};
use crate::lp::{build_synthesis_lp, symbolic_lp};
use crate::network::{Activations, Network};
use crate::norm::Norm;
use crate::oracle::{suite_report, validity_check, CoverageReport, ReferenceSet};
use crate::ranking::{rank_lipschitz, rank_single, LayerFactors};

pub use suite::{load_inputs, InputSet, Provenance, TestCase, TestSuite};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Nc,
    Ssc,
    Nbc,
    Lipschitz,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Nc => "nc",
            Criterion::Ssc => "ssc",
            Criterion::Nbc => "nbc",
            Criterion::Lipschitz => "lipschitz",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nc" => Ok(Criterion::Nc),
            "ssc" => Ok(Criterion::Ssc),
            "nbc" => Ok(Criterion::Nbc),
            "lipschitz" => Ok(Criterion::Lipschitz),
            other => Err(Error::Config(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub criterion: Criterion,
    pub norm: Norm,
    /// L∞ validity bound.
    pub bound: f64,
    /// Pixel budget for L0 synthesis; also the L0 validity bound.
    pub l0_budget: usize,
    /// Ranked candidates tried per requirement before giving up on it.
    pub max_attempts: usize,
    /// Wall-clock limit; ignored where no clock is available.
    pub timeout: Option<Duration>,
    pub rng_seed: u64,
    pub lip: LipConfig,
    /// Round synthesized inputs to a grid of `1/levels`.
    pub quantize: Option<u32>,
    /// Relative widening of sampled neuron ranges for boundary coverage.
    pub nbc_widen: f64,
    /// Extra inputs loaded into the suite before generation (SSC and NBC).
    pub samples: Vec<Vec<f64>>,
    /// Keep the text of every synthesis LP.
    pub dump_lp: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            criterion: Criterion::Nc,
            norm: Norm::Linf,
            bound: 0.3,
            l0_budget: 100,
            max_attempts: 3,
            timeout: Some(Duration::from_secs(600)),
            rng_seed: 0,
            lip: LipConfig::default(),
            quantize: None,
            nbc_widen: 0.05,
            samples: Vec::new(),
            dump_lp: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.norm, Norm::Linf | Norm::L0) {
            return Err(Error::Config(format!(
                "norm {} is not supported for synthesis",
                self.norm
            )));
        }
        if self.norm == Norm::L0 && self.criterion == Criterion::Ssc {
            return Err(Error::Config(
                "SSC is not available under the L0 norm".into(),
            ));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::Config(format!(
                "validity bound must be positive, got {}",
                self.bound
            )));
        }
        if self.l0_budget == 0 {
            return Err(Error::Config("--l0-budget must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("--max-attempts must be at least 1".into()));
        }
        if self.timeout == Some(Duration::ZERO) {
            return Err(Error::Config("--timeout must be positive".into()));
        }
        if self.quantize == Some(0) {
            return Err(Error::Config(
                "quantization needs at least one level".into(),
            ));
        }
        if !(self.nbc_widen >= 0.0 && self.nbc_widen.is_finite()) {
            return Err(Error::Config("NBC widening must be non-negative".into()));
        }
        self.lip.validate()
    }

    /// Bound used by the validity check, in units of the configured norm.
    pub fn validity_bound(&self) -> f64 {
        match self.norm {
            Norm::L0 => self.l0_budget as f64,
            _ => self.bound,
        }
    }

    fn validity_norm(&self) -> Norm {
        if self.criterion == Criterion::Lipschitz {
            Norm::Linf
        } else {
            self.norm
        }
    }
}

/// Rounds `x` onto the `1/levels` grid, moving each changed coordinate away
/// from `anchor` so that the change the synthesis made is not undone.
pub fn quantize_away(x: &[f64], anchor: &[f64], levels: u32) -> Vec<f64> {
    let n = f64::from(levels);
    x.iter()
        .zip(anchor)
        .map(|(&xi, &ai)| {
            let scaled = xi * n;
            let k = if (xi - ai).abs() <= 1e-9 {
                (ai * n).round()
            } else if xi > ai {
                (scaled - 1e-9).ceil()
            } else {
                (scaled + 1e-9).floor()
            };
            k.clamp(0.0, n) / n
        })
        .collect()
}

/// Nearest point of the `1/levels` grid.
pub fn quantize_nearest(x: &[f64], levels: u32) -> Vec<f64> {
    let n = f64::from(levels);
    x.iter()
        .map(|&v| (v * n).round().clamp(0.0, n) / n)
        .collect()
}

/// Counters describing one run; free of timing so reports stay reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub attempts: usize,
    pub syntheses: usize,
    pub appended: usize,
    pub no_solution: usize,
    pub invalid: usize,
    pub duplicates: usize,
    pub timed_out: bool,
}

/// Everything written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub criterion: Criterion,
    pub norm: Norm,
    pub bound: f64,
    pub l0_budget: usize,
    pub max_attempts: usize,
    pub rng_seed: u64,
    pub quantize: Option<u32>,
    pub stats: RunStats,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lipschitz: Vec<LipRow>,
    pub report: CoverageReport,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub suite: TestSuite,
    pub requirements: Vec<Requirement>,
    pub report: RunReport,
    /// `(name, text)` of each synthesis LP when dumping is enabled.
    pub lp_dumps: Vec<(String, String)>,
}

impl RunOutcome {
    pub fn timed_out(&self) -> bool {
        self.report.stats.timed_out
    }
}

#[cfg(not(target_arch = "wasm32"))]
struct Clock(Option<(std::time::Instant, Duration)>);

#[cfg(not(target_arch = "wasm32"))]
impl Clock {
    fn start(limit: Option<Duration>) -> Self {
        Clock(limit.map(|d| (std::time::Instant::now(), d)))
    }
    fn expired(&self) -> bool {
        self.0.is_some_and(|(t, d)| t.elapsed() >= d)
    }
}

#[cfg(target_arch = "wasm32")]
struct Clock;

#[cfg(target_arch = "wasm32")]
impl Clock {
    fn start(_: Option<Duration>) -> Self {
        Clock
    }
    fn expired(&self) -> bool {
        false
    }
}

fn requirements_for(
    net: &Network,
    cfg: &RunConfig,
    seeds: &[Vec<f64>],
    bound_samples: &[Activations],
) -> Result<(Vec<Requirement>, SubspacePartition)> {
    let partition = SubspacePartition::around(seeds, cfg.lip.delta);
    let reqs = match cfg.criterion {
        Criterion::Nc => gen_nc(net),
        Criterion::Ssc => gen_ssc(net, None)?,
        Criterion::Nbc => {
            let bounds = NeuronBounds::from_samples(net, bound_samples, cfg.nbc_widen);
            gen_nbc(net, &bounds)?
        }
        Criterion::Lipschitz => gen_lipschitz(
            &partition,
            cfg.lip.c,
            cfg.lip.metric.norm,
            cfg.lip.metric.target,
        )?,
    };
    if reqs.is_empty() {
        return Err(Error::Config(format!(
            "the network yields no {} requirements",
            cfg.criterion
        )));
    }
    Ok((reqs, partition))
}

/// Runs the concolic loop from `seeds` and reports on the resulting suite.
pub fn run(
    net: &Network,
    refs: &ReferenceSet,
    seeds: &[Vec<f64>],
    cfg: &RunConfig,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed input is required".into()));
    }
    for x in seeds.iter().chain(&cfg.samples).chain(&refs.inputs) {
        if x.len() != net.input_dim() {
            return Err(Error::Config(format!(
                "input has {} values, the model expects {}",
                x.len(),
                net.input_dim()
            )));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("inputs must lie in [0, 1]".into()));
        }
    }
    refs.check_labels(net.output_dim())?;

    let clock = Clock::start(cfg.timeout);
    let mut suite = TestSuite::new();
    for s in seeds {
        suite.push(s.clone(), Provenance::Seed)?;
    }
    if matches!(cfg.criterion, Criterion::Ssc | Criterion::Nbc) {
        for s in &cfg.samples {
            suite.push(s.clone(), Provenance::Sample)?;
        }
    }
    let mut acts: Vec<Activations> = suite
        .tests
        .iter()
        .map(|t| net.forward(&t.input))
        .collect::<Result<_>>()?;

    // Boundaries and layer factors come from every input at hand.
    let mut sample_acts = acts.clone();
    for x in cfg.samples.iter().chain(&refs.inputs) {
        sample_acts.push(net.forward(x)?);
    }
    let factors = LayerFactors::estimate(net, &sample_acts)?;
    let (mut reqs, partition) = requirements_for(net, cfg, seeds, &sample_acts)?;

    let mut stats = RunStats::default();
    let mut lip_rows = Vec::new();
    let mut lp_dumps = Vec::new();
    let mut attempts = vec![0usize; reqs.len()];
    let mut tried: HashSet<(usize, usize)> = HashSet::new();
    let mut checked_upto = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let vnorm = cfg.validity_norm();
    let vbound = if cfg.criterion == Criterion::Lipschitz {
        cfg.bound
    } else {
        cfg.validity_bound()
    };

    loop {
        // Drop requirements satisfied by tests added since the last pass.
        for r in reqs.iter_mut().filter(|r| r.status == Status::Open) {
            if r.holds_with_new(&acts, checked_upto)? {
                r.status = Status::Satisfied;
            }
        }
        checked_upto = acts.len();
        if reqs.iter().all(|r| r.status != Status::Open) {
            break;
        }
        if clock.expired() {
            stats.timed_out = true;
            break;
        }

        let candidate = if cfg.criterion == Criterion::Lipschitz {
            rank_lipschitz(&acts, &reqs, &partition, cfg.lip.metric)
        } else {
            rank_single(
                &acts,
                &reqs,
                &factors,
                |_| true,
                |r, t| tried.contains(&(r, t)),
            )
        };
        let Some(cand) = candidate else {
            for r in reqs.iter_mut().filter(|r| r.status == Status::Open) {
                r.status = Status::Failed;
            }
            break;
        };
        let ri = cand.requirement;
        let parent = cand.witnesses[0];
        tried.insert((ri, parent));
        attempts[ri] += 1;
        stats.attempts += 1;
        let tag = reqs[ri].tag.clone();

        let mut produced: Vec<(Vec<f64>, usize)> = Vec::new();
        match &tag {
            Tag::Lipschitz { subspace, .. } => {
                let seed = &partition.boxes[*subspace].center;
                let search = lipschitz_search(net, seed, &cfg.lip)?;
                stats.syntheses += 1;
                let budget = search.forward_evals.max(2);
                let random = random_baseline(net, seed, &cfg.lip, budget / 2, &mut rng)?;
                lip_rows.push(LipRow {
                    seed: *subspace,
                    method: "compass".into(),
                    best_ratio: search.witness.ratio,
                    satisfied: search.witness.satisfied,
                    forward_evals: search.forward_evals,
                });
                lip_rows.push(LipRow {
                    seed: *subspace,
                    method: "random".into(),
                    best_ratio: random.witness.ratio,
                    satisfied: random.witness.satisfied,
                    forward_evals: random.forward_evals,
                });
                let seed_idx = suite
                    .tests
                    .iter()
                    .position(|t| &t.input == seed)
                    .unwrap_or(parent);
                produced.push((search.witness.t1.clone(), seed_idx));
                produced.push((search.witness.t2.clone(), seed_idx));
                // One search per box: a miss is final.
                if !search.witness.satisfied {
                    reqs[ri].status = Status::Failed;
                }
            }
            _ => {
                let source = &acts[parent];
                let synthesized = match cfg.norm {
                    Norm::L0 => {
                        symbolic_l0(net, &source.input, &tag, &L0Budget::pixels(cfg.l0_budget))?
                            .map(|s| s.input)
                    }
                    _ => {
                        if cfg.dump_lp {
                            let enc = build_synthesis_lp(net, source, &tag)?;
                            lp_dumps.push((
                                format!("{:05}-{}", stats.attempts - 1, tag),
                                enc.problem.to_lp_format(),
                            ));
                        }
                        symbolic_lp(net, source, &tag)?.map(|s| s.input)
                    }
                };
                match synthesized {
                    Some(x) => {
                        stats.syntheses += 1;
                        let x = match cfg.quantize {
                            Some(levels) => quantize_away(&x, &source.input, levels),
                            None => x,
                        };
                        produced.push((x, parent));
                    }
                    None => stats.no_solution += 1,
                }
            }
        }

        for (x, parent) in produced {
            if !validity_check(refs, &x, vbound, vnorm) {
                stats.invalid += 1;
                continue;
            }
            if suite.contains(&x) {
                stats.duplicates += 1;
                continue;
            }
            let a = net.forward(&x)?;
            suite.push(
                x,
                Provenance::Generated {
                    requirement: tag.to_string(),
                    parent,
                },
            )?;
            acts.push(a);
            stats.appended += 1;
        }

        if reqs[ri].status == Status::Open
            && attempts[ri] >= cfg.max_attempts
            && !reqs[ri].holds_with_new(&acts, checked_upto)?
        {
            reqs[ri].status = Status::Failed;
        }
    }

    let report = suite_report(net, refs, &acts, &reqs, vnorm, vbound)?;
    Ok(RunOutcome {
        report: RunReport {
            criterion: cfg.criterion,
            norm: cfg.norm,
            bound: cfg.bound,
            l0_budget: cfg.l0_budget,
            max_attempts: cfg.max_attempts,
            rng_seed: cfg.rng_seed,
            quantize: cfg.quantize,
            stats,
            lipschitz: lip_rows,
            report,
        },
        suite,
        requirements: reqs,
        lp_dumps,
    })
}
