//! Command-line orchestration: dataset generation, grid training, search,
//! ablations, and report assembly. Exit codes: 0 success, 1 search failure
//! (no feasible design found), 2 usage or configuration error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::context::{self, CONTEXT_DIM};
use crate::dataset::{self, OfflineDataset};
use crate::design_space::DesignSpace;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::oracle::{Oracle, OracleSpec, Phase};
use crate::search::{self, SearchReport, SearchSpec};
use crate::surrogate::SurrogateArchitecture;
use crate::trainer::{self, Checkpoint, HyperGrid, TrainConfig};

#[derive(Parser)]
#[command(
    name = "accelopt",
    about = "Offline accelerator design optimization with a conservative learned surrogate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the design space through the simulator and write a dataset.
    GenData(GenDataArgs),
    /// Train surrogates (single cell or full hyper grid) on a dataset.
    Train(TrainArgs),
    /// Optimize a trained checkpoint and evaluate candidates.
    Search(SearchArgs),
    /// Train + search the four loss variants and tabulate the comparison.
    Ablate(AblateArgs),
    /// Assemble cross-method comparison tables from existing outputs.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Comma-separated application ids.
    #[arg(long, default_value = "m4")]
    apps: String,
    /// Samples drawn per application.
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Optional design-space file; defaults to the built-in space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Optional oracle spec JSON; defaults to the built-in spec.
    #[arg(long)]
    oracle: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Sweep the full (alpha, beta) grid instead of a single cell.
    #[arg(long, conflicts_with_all = ["alpha", "beta"])]
    grid: bool,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 50_000)]
    steps: u64,
    #[arg(long, default_value_t = 2_500)]
    checkpoint_interval: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Condition the surrogate on application contexts.
    #[arg(long)]
    contextual: bool,
    /// Use the reduced desk-scale architecture.
    #[arg(long)]
    small: bool,
    /// Worst-k feasible points kept per application.
    #[arg(long, default_value_t = 2000)]
    max_feasible: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 128)]
    feasible_batch: usize,
    #[arg(long, default_value_t = 128)]
    infeasible_batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long)]
    space: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated application ids to optimize for.
    #[arg(long)]
    apps: String,
    #[arg(long, default_value_t = 29.0)]
    area: f64,
    #[arg(long, default_value_t = 256)]
    n_top: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Independent runs with seeds base..base+seeds.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Require that the checkpoint never trained on the target apps.
    #[arg(long)]
    zero_shot: bool,
    /// Original training-time area budget; set to rerun a checkpoint under a
    /// tighter constraint via rejection over the original trajectory.
    #[arg(long)]
    original_area: Option<f64>,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Variants to run, comma-separated subset of full,-opt,-infeasible,standard.
    #[arg(long, default_value = "full,-opt,-infeasible,standard")]
    which: String,
    /// Conservative weights used by the full variant.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 2_000)]
    steps: u64,
    #[arg(long, default_value_t = 500)]
    checkpoint_interval: u64,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 256)]
    n_top: usize,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 2000)]
    max_feasible: usize,
    #[arg(long)]
    small: bool,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    oracle: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Dataset used for the best-in-training reference.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 2000)]
    max_feasible: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    /// Search report CSVs from the offline pipeline.
    #[arg(long)]
    surrogate_report: Vec<PathBuf>,
    /// Search report CSVs from the online baseline.
    #[arg(long)]
    baseline_report: Vec<PathBuf>,
    /// Ledger CSVs to total simulated time from.
    #[arg(long)]
    ledger: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Search(a) => cmd_search(a),
        Cmd::Ablate(a) => cmd_ablate(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_space(path: &Option<PathBuf>) -> Result<DesignSpace> {
    match path {
        Some(p) => DesignSpace::load(p),
        None => Ok(DesignSpace::default_accelerator()),
    }
}

fn load_oracle(path: &Option<PathBuf>) -> Result<Oracle> {
    let spec = match path {
        Some(p) => OracleSpec::load(p)?,
        None => OracleSpec::default(),
    };
    Ok(Oracle::new(spec))
}

fn parse_apps(list: &str) -> Vec<String> {
    list.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn ledger_path(base: &Path) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(".ledger.csv");
    base.with_file_name(name)
}

/// Fails when a phase that must not have touched the oracle shows queries.
fn audit_ledger(oracle: &Oracle, allowed: &[Phase]) -> Result<()> {
    for phase in Phase::ALL {
        if !allowed.contains(&phase) && oracle.ledger.queries(phase) > 0 {
            return Err(Error::Config(format!(
                "ledger audit failed: {} queries recorded in phase {}",
                oracle.ledger.queries(phase),
                phase.name()
            )));
        }
    }
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<i32> {
    let space = load_space(&args.space)?;
    let oracle = load_oracle(&args.oracle)?;
    let apps = parse_apps(&args.apps);
    if apps.is_empty() {
        return Err(Error::Argument("--apps must name at least one application".into()));
    }
    let contexts = context::contexts_for(&apps)?;
    let ds = dataset::generate(&space, &oracle, &contexts, args.n_samples, args.seed)?;
    ds.save(&space, &args.out)?;
    write_atomic(&ledger_path(&args.out), oracle.ledger.report_csv().as_bytes())?;

    println!("dataset written to {}", args.out.display());
    for id in contexts.keys() {
        let nf = ds.feasible.iter().filter(|r| &r.app_id == id).count();
        let ni = ds.infeasible.iter().filter(|(_, a)| a == id).count();
        println!(
            "{id}: {nf} feasible / {ni} infeasible ({:.1}% feasible)",
            100.0 * nf as f64 / (nf + ni) as f64
        );
    }
    print!("{}", oracle.ledger.report_csv());
    audit_ledger(&oracle, &[Phase::DatasetGen])?;
    Ok(0)
}

fn variant_label(alpha: f64, beta: f64) -> String {
    if alpha == 0.0 && beta == 0.0 {
        "Standard".to_string()
    } else {
        format!("a{alpha}_b{beta}")
    }
}

fn train_one(
    split: &dataset::DatasetSplit,
    space: &DesignSpace,
    arch: &SurrogateArchitecture,
    cfg: &TrainConfig,
    contextual: bool,
) -> Result<trainer::TrainReport> {
    if contextual {
        trainer::train_contextual(split, space, arch, cfg)
    } else {
        trainer::train(split, space, arch, cfg)
    }
}

fn pick_arch(small: bool, contextual: bool) -> SurrogateArchitecture {
    let d = if contextual { CONTEXT_DIM } else { 0 };
    if small {
        SurrogateArchitecture::small(d)
    } else {
        SurrogateArchitecture {
            context_dim: d,
            ..SurrogateArchitecture::default()
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let space = load_space(&args.space)?;
    let ds = OfflineDataset::load(&space, &args.dataset)?;
    let split = ds.select_training_subset(args.max_feasible)?.split_validation(args.val_fraction)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let cells: Vec<(f64, f64)> = if args.grid {
        HyperGrid::default().cells()
    } else {
        vec![(args.alpha, args.beta)]
    };
    let arch = pick_arch(args.small, args.contextual);

    let mut all_checkpoints: Vec<Checkpoint> = Vec::new();
    for (alpha, beta) in cells {
        let cfg = TrainConfig {
            alpha,
            beta,
            lr: args.lr,
            total_gradient_steps: args.steps,
            checkpoint_interval: args.checkpoint_interval,
            feasible_batch: args.feasible_batch,
            infeasible_batch: args.infeasible_batch,
            rng_seed: args.seed,
            ..TrainConfig::default()
        };
        let label = variant_label(alpha, beta);
        let report = train_one(&split, &space, &arch, &cfg, args.contextual)?;
        report.write_log_csv(&args.out_dir.join(format!("{label}.log.csv")))?;
        let best = trainer::select_model(&report.checkpoints)?;
        best.save(&args.out_dir.join(format!("{label}.ckpt")))?;
        println!(
            "{label}: best step {} validation tau {:.4}",
            best.gradient_step, best.validation_tau
        );
        all_checkpoints.extend(report.checkpoints);
    }

    let selected = trainer::select_model(&all_checkpoints)?;
    selected.save(&args.out_dir.join("selected.ckpt"))?;
    println!(
        "selected: {} step {} validation tau {:.4}",
        variant_label(selected.alpha, selected.beta),
        selected.gradient_step,
        selected.validation_tau
    );
    println!("training oracle queries: 0");
    Ok(0)
}

fn write_search_summary(
    out_dir: &Path,
    per_seed: &[(u64, SearchReport)],
) -> Result<()> {
    let mut csv = String::from("seed,best_latency,median_latency,queries,failure\n");
    let mut bests = Vec::new();
    for (seed, r) in per_seed {
        if let Some(b) = r.best_latency {
            bests.push(b);
        }
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            seed,
            r.best_latency.map(|v| v.to_string()).unwrap_or_default(),
            r.median_latency.map(|v| v.to_string()).unwrap_or_default(),
            r.oracle_queries,
            r.failure.clone().unwrap_or_default()
        ));
    }
    bests.sort_by(f64::total_cmp);
    if !bests.is_empty() {
        let mid = if bests.len() % 2 == 1 {
            bests[bests.len() / 2]
        } else {
            0.5 * (bests[bests.len() / 2 - 1] + bests[bests.len() / 2])
        };
        csv.push_str(&format!("overall,best={},median_of_best={}\n", bests[0], mid));
    } else {
        csv.push_str("overall,no feasible design in any seed\n");
    }
    write_atomic(&out_dir.join("summary.csv"), csv.as_bytes())
}

fn cmd_search(args: SearchArgs) -> Result<i32> {
    let space = load_space(&args.space)?;
    let oracle = load_oracle(&args.oracle)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    ck.surrogate.check_space(&space)?;
    let apps = parse_apps(&args.apps);
    let contexts = context::contexts_for(&apps)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut per_seed = Vec::new();
    for i in 0..args.seeds {
        let seed = args.seed_base + i;
        let mut spec = SearchSpec::new(contexts.clone(), seed);
        spec.area_constraint = args.area;
        spec.n_top = args.n_top;
        spec.iterations = args.iterations;
        let report = if let Some(orig) = args.original_area {
            search::reoptimize_constraint(&ck, &space, &oracle, &spec, orig)?
        } else if args.zero_shot {
            search::optimize_zero_shot(&ck, &space, &oracle, &spec)?
        } else {
            search::optimize(&ck, &space, &oracle, &spec)?
        };
        report.save_csv(&args.out_dir.join(format!("seed{seed}.csv")))?;
        println!(
            "seed {seed}: best {:?} median {:?} queries {}",
            report.best_latency, report.median_latency, report.oracle_queries
        );
        per_seed.push((seed, report));
    }
    write_search_summary(&args.out_dir, &per_seed)?;
    write_atomic(
        &ledger_path(&args.out_dir.join("search")),
        oracle.ledger.report_csv().as_bytes(),
    )?;
    print!("{}", oracle.ledger.report_csv());
    audit_ledger(&oracle, &[Phase::Evaluation])?;
    if per_seed.iter().all(|(_, r)| r.failure.is_some()) {
        eprintln!("search failed: no feasible design found in any seed");
        return Ok(1);
    }
    Ok(0)
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let space = load_space(&args.space)?;
    let oracle = load_oracle(&args.oracle)?;
    let ds = OfflineDataset::load(&space, &args.dataset)?;
    let split = ds.select_training_subset(args.max_feasible)?.split_validation(0.2)?;
    if split.apps.len() != 1 {
        return Err(Error::Config(
            "ablation expects a single-application dataset".into(),
        ));
    }
    let app_ids: Vec<String> = split.apps.keys().cloned().collect();
    let contexts = context::contexts_for(&app_ids)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let variants: Vec<(String, f64, f64)> = parse_apps(&args.which)
        .into_iter()
        .map(|w| match w.as_str() {
            "full" => Ok(("full".to_string(), args.alpha, args.beta)),
            "-opt" => Ok(("-opt".to_string(), 0.0, args.beta)),
            "-infeasible" => Ok(("-infeasible".to_string(), args.alpha, 0.0)),
            "standard" => Ok(("standard".to_string(), 0.0, 0.0)),
            other => Err(Error::Argument(format!("unknown ablation variant `{other}`"))),
        })
        .collect::<Result<_>>()?;

    let arch = pick_arch(args.small, false);
    let mut csv = String::from(
        "variant,seed,best_latency,median_latency,feasible_fraction,overestimation_fraction\n",
    );
    type VariantStats = (Vec<f64>, Vec<f64>, Vec<f64>);
    let mut medians: BTreeMap<String, VariantStats> = BTreeMap::new();
    for (name, alpha, beta) in &variants {
        for seed in 0..args.seeds {
            let cfg = TrainConfig {
                alpha: *alpha,
                beta: *beta,
                lr: args.lr,
                total_gradient_steps: args.steps,
                checkpoint_interval: args.checkpoint_interval,
                rng_seed: seed,
                ..TrainConfig::default()
            };
            let report = trainer::train(&split, &space, &arch, &cfg)?;
            let ck = trainer::select_model(&report.checkpoints)?;
            let mut spec = SearchSpec::new(contexts.clone(), seed);
            spec.n_top = args.n_top;
            spec.iterations = args.iterations;
            let sr = search::optimize(ck, &space, &oracle, &spec)?;

            let n = sr.candidates.len().max(1);
            let feasible = sr.candidates.iter().filter(|c| c.oracle_feasible).count();
            // candidates whose (denormalized) prediction was optimistic
            let over = sr
                .candidates
                .iter()
                .filter(|c| match c.oracle_latency {
                    Some(actual) => c.surrogate_score * ck.latency_scale < actual,
                    None => false,
                })
                .count();
            let feas_frac = feasible as f64 / n as f64;
            let over_frac = over as f64 / n as f64;
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                name,
                seed,
                sr.best_latency.map(|v| v.to_string()).unwrap_or_default(),
                sr.median_latency.map(|v| v.to_string()).unwrap_or_default(),
                feas_frac,
                over_frac
            ));
            let entry = medians.entry(name.clone()).or_default();
            if let Some(b) = sr.best_latency {
                entry.0.push(b);
            }
            entry.1.push(feas_frac);
            entry.2.push(over_frac);
        }
    }
    let med = |v: &mut Vec<f64>| -> String {
        if v.is_empty() {
            return String::new();
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let m = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        m.to_string()
    };
    for (name, (mut bests, mut feas, mut over)) in medians {
        csv.push_str(&format!(
            "median,{},{},,{},{}\n",
            name,
            med(&mut bests),
            med(&mut feas),
            med(&mut over)
        ));
    }
    let out = args.out_dir.join("ablation.csv");
    write_atomic(&out, csv.as_bytes())?;
    print!("{csv}");
    println!("table written to {}", out.display());
    audit_ledger(&oracle, &[Phase::Evaluation])?;
    Ok(0)
}

/// Pull `best=` out of a report CSV summary line.
fn parse_report_best(path: &Path) -> Result<Option<f64>> {
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("summary,") {
            for field in rest.split(',') {
                if let Some(v) = field.strip_prefix("best=") {
                    if v.is_empty() {
                        return Ok(None);
                    }
                    return Ok(Some(v.parse().map_err(|_| Error::Parse {
                        line: 0,
                        reason: format!("bad best value `{v}` in {}", path.display()),
                    })?));
                }
            }
        }
    }
    Err(Error::Parse {
        line: 0,
        reason: format!("no summary line in {}", path.display()),
    })
}

fn ledger_total_seconds(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path)?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("total,") {
            let secs = rest.split(',').nth(1).ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("malformed total row in {}", path.display()),
            })?;
            return secs.parse().map_err(|_| Error::Parse {
                line: 0,
                reason: format!("bad seconds `{secs}` in {}", path.display()),
            });
        }
    }
    Err(Error::Parse {
        line: 0,
        reason: format!("no total row in {}", path.display()),
    })
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    let space = load_space(&args.space)?;
    let ds = OfflineDataset::load(&space, &args.dataset)?;
    let split = ds.select_training_subset(args.max_feasible)?.split_validation(args.val_fraction)?;
    let best_in_training = split
        .train
        .iter()
        .map(|r| r.latency_ms)
        .fold(f64::INFINITY, f64::min);

    let best_of = |paths: &[PathBuf]| -> Result<Option<f64>> {
        let mut best: Option<f64> = None;
        for p in paths {
            if let Some(v) = parse_report_best(p)? {
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        Ok(best)
    };
    let surrogate_best = best_of(&args.surrogate_report)?;
    let baseline_best = best_of(&args.baseline_report)?;

    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("best_in_training,{best_in_training}\n"));
    if let Some(p) = surrogate_best {
        csv.push_str(&format!("surrogate_best,{p}\n"));
        csv.push_str(&format!("improvement_over_dataset,{}\n", best_in_training / p));
    }
    if let Some(b) = baseline_best {
        csv.push_str(&format!("baseline_best,{b}\n"));
        if let Some(p) = surrogate_best {
            csv.push_str(&format!("surrogate_vs_baseline_latency,{}\n", b / p));
        }
    }
    let mut total = 0.0;
    for path in &args.ledger {
        let secs = ledger_total_seconds(path)?;
        total += secs;
        csv.push_str(&format!(
            "sim_seconds[{}],{}\n",
            path.file_name().unwrap_or_default().to_string_lossy(),
            secs
        ));
    }
    if !args.ledger.is_empty() {
        csv.push_str(&format!("sim_seconds_total,{total}\n"));
    }
    write_atomic(&args.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(0)
}
