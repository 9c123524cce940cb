use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use concolic_dnn::engine::suite::{read_vector, write_vector};
use concolic_dnn::engine::{load_inputs, run, Criterion, RunConfig, RunReport, TestSuite};
use concolic_dnn::lipschitz::{lip_csv, LipConfig};
use concolic_dnn::logic::DistTarget;
use concolic_dnn::oracle::{reverify, ReferenceSet};
use concolic_dnn::ranking::LipMetric;
use concolic_dnn::{Error, Network, Norm};

const EXIT_MISMATCH: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;

/// Concolic test generation for feedforward ReLU networks.
#[derive(Parser, Debug)]
#[command(name = "concolic-dnn", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Re-check every adversarial record of a finished run from its files.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CriterionArg {
    Nc,
    Ssc,
    Nbc,
    Lipschitz,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormArg {
    Linf,
    L0,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LipTargetArg {
    Output,
    Input,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Model JSON file.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "nc")]
    criterion: CriterionArg,
    #[arg(long, value_enum, default_value = "linf")]
    norm: NormArg,
    /// Seed inputs: a directory of .vec files, a .vec file, or a JSON file.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Reference inputs for the validity and robustness oracles (defaults to the seeds).
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Extra inputs preloaded for SSC and NBC runs.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// L∞ validity bound.
    #[arg(long, default_value_t = 0.3)]
    bound: f64,
    /// Pixel budget for L0 synthesis and validity.
    #[arg(long, default_value_t = 100)]
    l0_budget: usize,
    #[arg(long, default_value_t = 1.0)]
    lip_c: f64,
    #[arg(long, default_value_t = 0.1)]
    lip_delta: f64,
    /// Measure Lipschitz numerators on output logits or on the input layer.
    #[arg(long, value_enum, default_value = "output")]
    lip_target: LipTargetArg,
    /// Forward-evaluation cap per Lipschitz seed.
    #[arg(long)]
    lip_max_evals: Option<usize>,
    #[arg(long, default_value_t = 3)]
    max_attempts: usize,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Round generated inputs to a grid of 1/LEVELS (e.g. 255).
    #[arg(long)]
    quantize: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Write every synthesis LP under OUTDIR/lp/.
    #[arg(long)]
    dump_lp: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Reference inputs the run used.
    #[arg(long)]
    refs: PathBuf,
    /// Output directory of the run.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Verify(v)) => verify(&v),
        None => run_cli(&cli.run),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf, Error> {
    p.as_ref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn load_refs(path: &Path) -> Result<ReferenceSet, Error> {
    let set = load_inputs(path)?;
    ReferenceSet::new(set.inputs, set.labels)
}

fn run_cli(a: &RunArgs) -> Result<ExitCode, Error> {
    let net = Network::load(required(&a.model, "model")?)?;
    let seeds_path = required(&a.seeds, "seeds")?;
    let out = required(&a.out, "out")?;
    let seeds = load_inputs(seeds_path)?.inputs;
    let refs = load_refs(a.refs.as_ref().unwrap_or(seeds_path))?;
    let samples = match &a.samples {
        Some(p) => load_inputs(p)?.inputs,
        None => Vec::new(),
    };
    let mut lip = LipConfig::new(a.lip_c, a.lip_delta);
    lip.max_evals = a.lip_max_evals;
    lip.metric = LipMetric {
        norm: Norm::Linf,
        target: match a.lip_target {
            LipTargetArg::Output => DistTarget::Output,
            LipTargetArg::Input => DistTarget::Input,
        },
    };
    let cfg = RunConfig {
        criterion: match a.criterion {
            CriterionArg::Nc => Criterion::Nc,
            CriterionArg::Ssc => Criterion::Ssc,
            CriterionArg::Nbc => Criterion::Nbc,
            CriterionArg::Lipschitz => Criterion::Lipschitz,
        },
        norm: match a.norm {
            NormArg::Linf => Norm::Linf,
            NormArg::L0 => Norm::L0,
        },
        bound: a.bound,
        l0_budget: a.l0_budget,
        max_attempts: a.max_attempts,
        timeout: Some(Duration::from_secs(a.timeout)),
        rng_seed: a.rng_seed,
        lip,
        quantize: a.quantize,
        samples,
        dump_lp: a.dump_lp,
        ..RunConfig::default()
    };
    let outcome = run(&net, &refs, &seeds, &cfg)?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for sub in ["suite", "adversarial", "lp"] {
        let p = out.join(sub);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    outcome.suite.save(&out.join("suite"))?;
    let adv = out.join("adversarial");
    fs::create_dir_all(&adv).map_err(|e| Error::io(&adv, e))?;
    for rec in &outcome.report.report.adversarial {
        write_vector(&adv.join(format!("{:05}.vec", rec.test)), &rec.input)?;
    }
    let report_path = out.join("report.json");
    let text = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    fs::write(&report_path, text + "\n").map_err(|e| Error::io(&report_path, e))?;
    if cfg.criterion == Criterion::Lipschitz {
        let p = out.join("lipschitz.csv");
        fs::write(&p, lip_csv(&outcome.report.lipschitz)).map_err(|e| Error::io(&p, e))?;
    }
    if cfg.dump_lp {
        let dir = out.join("lp");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (name, text) in &outcome.lp_dumps {
            let safe: String = name
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let p = dir.join(format!("{safe}.lp"));
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
    }

    let r = &outcome.report.report;
    println!(
        "criterion {} norm {}: coverage {:.4} ({} satisfied, {} failed, {} open of {}), suite {} tests, {} adversarial ({:.2}%)",
        cfg.criterion,
        cfg.norm,
        r.coverage,
        r.totals.satisfied,
        r.totals.failed,
        r.totals.open,
        r.totals.total,
        r.suite_size,
        r.adversarial.len(),
        r.adversary_percent
    );
    if outcome.timed_out() {
        eprintln!(
            "time limit reached; partial results written to {}",
            out.display()
        );
        return Ok(ExitCode::from(EXIT_TIMEOUT));
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: &VerifyArgs) -> Result<ExitCode, Error> {
    let net = Network::load(&a.model)?;
    let refs = load_refs(&a.refs)?;
    let report_path = a.out.join("report.json");
    let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let report: RunReport = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", report_path.display())))?;
    let suite = TestSuite::load(&a.out.join("suite"))?;
    let mut bad = 0usize;
    for rec in &report.report.adversarial {
        let mut problems = Vec::new();
        let file = a
            .out
            .join("adversarial")
            .join(format!("{:05}.vec", rec.test));
        let stored = read_vector(&file)?;
        let mut rec = rec.clone();
        if stored != rec.input {
            problems.push(format!("{} differs from the report", file.display()));
        }
        match suite.tests.get(rec.test) {
            Some(t) if t.input == stored => {}
            _ => problems.push(format!("suite test {} does not match", rec.test)),
        }
        rec.input = stored;
        let check = reverify(&net, &refs, &rec)?;
        problems.extend(check.problems);
        if problems.is_empty() {
            println!(
                "ok   test {:5} label {} vs {} at distance {:?}",
                rec.test, rec.label, rec.reference_label, rec.distance
            );
        } else {
            bad += 1;
            println!("FAIL test {:5}: {}", rec.test, problems.join("; "));
        }
    }
    println!(
        "{} of {} adversarial records re-verified",
        report.report.adversarial.len() - bad,
        report.report.adversarial.len()
    );
    Ok(if bad == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_MISMATCH)
    })
}
