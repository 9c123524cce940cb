//! Two-input playground for the concolic test generator.
//!
//! Every entry point takes and returns JSON strings so the page can stay a
//! plain script. The same functions are exported to JavaScript on wasm32 and
//! called directly by the native tests.

use concolic_dnn::engine::{run, Criterion, RunConfig};
use concolic_dnn::lipschitz::{lipschitz_search, random_baseline, LipConfig, LipWitness};
use concolic_dnn::oracle::{AdversarialRecord, ReferenceSet};
use concolic_dnn::{ActivationPattern, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[cfg(target_arch = "wasm32")]
mod bindings;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// A 2-10-10-3 ReLU classifier drawn from a fixed seed.
pub fn demo_network(seed: u64) -> String {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let widths = [2usize, 10, 10, 3];
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let weights = (0..w[0])
                .map(|_| (0..w[1]).map(|_| r.gen_range(-2.0..=2.0)).collect())
                .collect();
            let bias = (0..w[1]).map(|_| r.gen_range(-1.0..=1.0)).collect();
            (weights, bias, j + 2 < widths.len())
        })
        .collect();
    Network::dense(2, layers)
        .expect("demo network is well formed")
        .to_json()
}

fn two_input(net_json: &str) -> Result<Network, String> {
    let net = Network::from_json(net_json).map_err(err)?;
    if net.input_dim() != 2 {
        return Err(format!(
            "the demo draws 2-input networks, this one has {}",
            net.input_dim()
        ));
    }
    Ok(net)
}

#[derive(Serialize)]
struct RegionMap {
    resolution: usize,
    /// Row-major from the top-left cell, i.e. x1 = 1 on the first row.
    labels: Vec<usize>,
    /// Index of the cell's activation pattern in order of first appearance.
    regions: Vec<usize>,
    region_count: usize,
}

/// Predicted label and activation region on a `resolution`² grid over the
/// unit square.
pub fn region_map(net_json: &str, resolution: usize) -> Result<String, String> {
    let net = two_input(net_json)?;
    if !(2..=400).contains(&resolution) {
        return Err(format!(
            "resolution must be between 2 and 400, got {resolution}"
        ));
    }
    let mut seen: Vec<ActivationPattern> = Vec::new();
    let mut labels = Vec::with_capacity(resolution * resolution);
    let mut regions = Vec::with_capacity(resolution * resolution);
    let step = 1.0 / (resolution - 1) as f64;
    for row in 0..resolution {
        for col in 0..resolution {
            let x = [col as f64 * step, 1.0 - row as f64 * step];
            let acts = net.forward(&x).map_err(err)?;
            labels.push(concolic_dnn::network::argmax(acts.output()));
            let p = acts.pattern();
            let id = match seen.iter().position(|q| *q == p) {
                Some(i) => i,
                None => {
                    seen.push(p);
                    seen.len() - 1
                }
            };
            regions.push(id);
        }
    }
    serde_json::to_string(&RegionMap {
        resolution,
        labels,
        regions,
        region_count: seen.len(),
    })
    .map_err(err)
}

#[derive(Deserialize)]
struct CoverageRequest {
    seeds: Vec<Vec<f64>>,
    #[serde(default = "default_criterion")]
    criterion: Criterion,
    #[serde(default = "default_bound")]
    bound: f64,
    #[serde(default)]
    rng_seed: u64,
}

fn default_criterion() -> Criterion {
    Criterion::Nc
}

fn default_bound() -> f64 {
    0.3
}

#[derive(Serialize)]
struct GeneratedTest {
    input: Vec<f64>,
    label: usize,
    /// Requirement the test was synthesized for; `None` for seeds.
    requirement: Option<String>,
    parent: Option<usize>,
}

#[derive(Serialize)]
struct CoverageResult {
    coverage: f64,
    satisfied: usize,
    failed: usize,
    total: usize,
    tests: Vec<GeneratedTest>,
    adversarial: Vec<AdversarialRecord>,
}

/// Runs the coverage-guided generator from the given seeds. The request is
/// `{"seeds": [[x0, x1], ...], "criterion": "nc", "bound": 0.3}`.
pub fn coverage_run(net_json: &str, request_json: &str) -> Result<String, String> {
    let net = two_input(net_json)?;
    let req: CoverageRequest = serde_json::from_str(request_json).map_err(err)?;
    if req.criterion == Criterion::Lipschitz {
        return Err("use the Lipschitz panel for Lipschitz search".into());
    }
    let refs = ReferenceSet::unlabelled(req.seeds.clone()).map_err(err)?;
    let cfg = RunConfig {
        criterion: req.criterion,
        bound: req.bound,
        rng_seed: req.rng_seed,
        timeout: None,
        ..RunConfig::default()
    };
    let out = run(&net, &refs, &req.seeds, &cfg).map_err(err)?;
    let tests = out
        .suite
        .tests
        .iter()
        .map(|t| {
            let (requirement, parent) = match &t.provenance {
                concolic_dnn::engine::Provenance::Generated {
                    requirement,
                    parent,
                } => (Some(requirement.clone()), Some(*parent)),
                _ => (None, None),
            };
            Ok(GeneratedTest {
                label: net.label(&t.input)?,
                input: t.input.clone(),
                requirement,
                parent,
            })
        })
        .collect::<concolic_dnn::Result<Vec<_>>>()
        .map_err(err)?;
    let r = out.report.report;
    serde_json::to_string(&CoverageResult {
        coverage: r.coverage,
        satisfied: r.totals.satisfied,
        failed: r.totals.failed,
        total: r.totals.total,
        tests,
        adversarial: r.adversarial,
    })
    .map_err(err)
}

#[derive(Serialize)]
struct SearchSummary {
    witness: LipWitness,
    forward_evals: usize,
}

#[derive(Serialize)]
struct LipschitzComparison {
    compass: SearchSummary,
    executions: usize,
    /// Accepted compass iterates, in order.
    trace: Vec<Vec<f64>>,
    random: SearchSummary,
    random_pairs: usize,
}

/// Compass search against uniform random pairs with the same number of
/// forward evaluations, both inside the box of radius `delta` around `seed`.
pub fn lipschitz_compare(
    net_json: &str,
    seed_json: &str,
    c: f64,
    delta: f64,
    rng_seed: u64,
) -> Result<String, String> {
    let net = two_input(net_json)?;
    let seed: Vec<f64> = serde_json::from_str(seed_json).map_err(err)?;
    let mut cfg = LipConfig::new(c, delta);
    cfg.max_evals = Some(20_000);
    let compass = lipschitz_search(&net, &seed, &cfg).map_err(err)?;
    let pairs = (compass.forward_evals / 2).max(1);
    let mut r = ChaCha8Rng::seed_from_u64(rng_seed);
    let random = random_baseline(&net, &seed, &cfg, pairs, &mut r).map_err(err)?;
    serde_json::to_string(&LipschitzComparison {
        compass: SearchSummary {
            witness: compass.witness,
            forward_evals: compass.forward_evals,
        },
        executions: compass.executions,
        trace: compass.trace,
        random: SearchSummary {
            witness: random.witness,
            forward_evals: random.forward_evals,
        },
        random_pairs: random.attempts,
    })
    .map_err(err)
}
