//! Final design search against a trained surrogate, plus the online
//! evolutionary baseline that queries the simulator directly.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::ContextVector;
use crate::design_space::{AcceleratorConfig, DesignSpace};
use crate::error::{Error, Result};
use crate::firefly::{self, FireflyHyper, FireflySwarm};
use crate::fsutil::write_atomic;
use crate::oracle::{Oracle, Phase};
use crate::trainer::Checkpoint;

/// Penalty added to the objective of constraint-violating configs; strictly
/// dominates any clipped surrogate value.
pub const LARGE_PENALTY: f64 = 100_000.0;

/// Parameters of one search run.
#[derive(Debug, Clone)]
pub struct SearchSpec {
    /// Area budget in mm^2.
    pub area_constraint: f64,
    /// Candidates kept for oracle evaluation.
    pub n_top: usize,
    /// Firefly iterations.
    pub iterations: usize,
    /// Applications to optimize for; singleton for single-app search.
    pub contexts: BTreeMap<String, ContextVector>,
    pub rng_seed: u64,
    /// Swarm settings for the search phase. Defaults to a wider-attraction,
    /// noisier profile than `FireflyHyper::default()`: over index-scale
    /// distances the stock attraction decays to ~0 and the swarm degrades
    /// into a frozen random walk.
    pub hyper: FireflyHyper,
}

impl SearchSpec {
    pub fn new(contexts: BTreeMap<String, ContextVector>, rng_seed: u64) -> Self {
        Self {
            area_constraint: 29.0,
            n_top: 256,
            iterations: 1000,
            contexts,
            rng_seed,
            hyper: Self::search_hyper(),
        }
    }

    /// Swarm profile tuned for the final search over the surrogate.
    pub fn search_hyper() -> FireflyHyper {
        FireflyHyper {
            gamma: 0.1,
            noise_scale: 0.5,
            noise_anneal: 0.995,
            ..FireflyHyper::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area_constraint > 0.0) {
            return Err(Error::Argument("area_constraint must be positive".into()));
        }
        if self.n_top < 1 || self.iterations < 1 {
            return Err(Error::Argument("n_top and iterations must be >= 1".into()));
        }
        if self.contexts.is_empty() {
            return Err(Error::Argument("contexts must be non-empty".into()));
        }
        Ok(())
    }
}

/// One candidate after oracle evaluation.
#[derive(Debug, Clone)]
pub struct CandidateResult {
    pub rank: usize,
    pub config: AcceleratorConfig,
    pub surrogate_score: f64,
    pub area: f64,
    /// Feasible in every requested context.
    pub oracle_feasible: bool,
    /// Mean ground-truth latency over contexts; absent when infeasible.
    pub oracle_latency: Option<f64>,
}

/// Outcome of one search run.
#[derive(Debug, Clone, Default)]
pub struct SearchReport {
    pub candidates: Vec<CandidateResult>,
    pub best_latency: Option<f64>,
    pub median_latency: Option<f64>,
    pub oracle_queries: u64,
    /// Diagnostics when no candidate satisfied the constraint; the run is
    /// still a normal return.
    pub failure: Option<String>,
    /// Baseline only: (oracle queries so far, simulated seconds, best
    /// feasible latency so far).
    pub trace: Vec<(u64, f64, f64)>,
}

impl SearchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rank,indices,surrogate_score,area,oracle_feasible,oracle_latency\n",
        );
        for c in &self.candidates {
            let idx: Vec<String> = c.config.indices.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.rank,
                idx.join(";"),
                c.surrogate_score,
                c.area,
                c.oracle_feasible,
                c.oracle_latency.map(|l| l.to_string()).unwrap_or_default()
            ));
        }
        out.push_str(&format!(
            "summary,best={},median={},queries={},failure={}\n",
            self.best_latency.map(|l| l.to_string()).unwrap_or_default(),
            self.median_latency.map(|l| l.to_string()).unwrap_or_default(),
            self.oracle_queries,
            self.failure.clone().unwrap_or_default()
        ));
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("queries,sim_seconds,best_latency\n");
        for (q, s, b) in &self.trace {
            out.push_str(&format!("{},{},{}\n", q, s, b));
        }
        out
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn surrogate_context<'a>(ck: &Checkpoint, ctx: &'a ContextVector) -> Result<&'a [f64]> {
    let d = ck.surrogate.arch().context_dim;
    if d == 0 {
        Ok(&[])
    } else if ctx.normalized.len() == d {
        Ok(&ctx.normalized)
    } else {
        Err(Error::Config(format!(
            "context vector has {} features, surrogate expects {}",
            ctx.normalized.len(),
            d
        )))
    }
}

/// Mean surrogate score over the requested contexts, plus the area penalty
/// applied at `area_constraint`.
fn penalized_objective(
    ck: &Checkpoint,
    space: &DesignSpace,
    oracle: &Oracle,
    contexts: &BTreeMap<String, ContextVector>,
    area_constraint: f64,
    config: &AcceleratorConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for ctx in contexts.values() {
        sum += ck.surrogate.forward(config, surrogate_context(ck, ctx)?)?;
    }
    let mut score = sum / contexts.len() as f64;
    if oracle.area(space, config) > area_constraint {
        score += LARGE_PENALTY;
    }
    Ok(score)
}

fn evaluate_candidates(
    space: &DesignSpace,
    oracle: &Oracle,
    spec: &SearchSpec,
    ranked: Vec<(AcceleratorConfig, f64)>,
) -> Result<SearchReport> {
    let mut report = SearchReport::default();
    if ranked.is_empty() {
        report.failure = Some(format!(
            "no candidate satisfied area <= {} mm^2; consider more iterations or a looser budget",
            spec.area_constraint
        ));
        return Ok(report);
    }
    let mut feasible_latencies = Vec::new();
    for (rank, (config, score)) in ranked.into_iter().enumerate() {
        let mut feasible = true;
        let mut latency_sum = 0.0;
        for ctx in spec.contexts.values() {
            let sim = oracle.simulate(space, &config, ctx, Phase::Evaluation)?;
            report.oracle_queries += 1;
            match sim.latency_ms {
                Some(l) if sim.feasible => latency_sum += l,
                _ => feasible = false,
            }
        }
        let latency = feasible.then(|| latency_sum / spec.contexts.len() as f64);
        if let Some(l) = latency {
            feasible_latencies.push(l);
        }
        report.candidates.push(CandidateResult {
            rank: rank + 1,
            config: config.clone(),
            surrogate_score: score,
            area: oracle.area(space, &config),
            oracle_feasible: feasible,
            oracle_latency: latency,
        });
    }
    if feasible_latencies.is_empty() {
        report.failure = Some("no evaluated candidate was feasible under the oracle".into());
    } else {
        feasible_latencies.sort_by(f64::total_cmp);
        report.best_latency = Some(feasible_latencies[0]);
        report.median_latency = Some(median(&feasible_latencies));
    }
    Ok(report)
}

/// Run the firefly against the surrogate and evaluate the top candidates.
///
/// The swarm minimizes the mean predicted score over contexts, with the area
/// penalty applied at `penalty_constraint`; the final candidate list is then
/// filtered at `filter_constraint`. Plain optimization uses the same value
/// for both.
fn optimize_inner(
    ck: &Checkpoint,
    space: &DesignSpace,
    oracle: &Oracle,
    spec: &SearchSpec,
    penalty_constraint: f64,
) -> Result<SearchReport> {
    spec.validate()?;
    ck.surrogate.check_space(space)?;
    let mut obj = |c: &AcceleratorConfig| {
        penalized_objective(ck, space, oracle, &spec.contexts, penalty_constraint, c)
    };
    let population = firefly::population_size(space.num_params());
    let mut swarm = FireflySwarm::new(
        space,
        spec.hyper,
        population,
        spec.rng_seed,
        &mut obj,
    )?;
    for _ in 0..spec.iterations {
        swarm.step(&mut obj)?;
    }
    // A collapsed swarm may not have visited n_top distinct constraint-
    // satisfying configs; scatter and keep exploring until the pool is big
    // enough. The pool is counted at the penalty constraint so that a
    // tighter filter constraint reuses the identical trajectory.
    let pool_size = |swarm: &FireflySwarm| -> usize {
        swarm
            .top_n(usize::MAX)
            .iter()
            .filter(|(c, _)| oracle.area(space, c) <= penalty_constraint)
            .count()
    };
    let mut rounds = 0;
    while pool_size(&swarm) < spec.n_top && rounds < 40 {
        swarm.reinitialize(&mut obj)?;
        for _ in 0..50 {
            swarm.step(&mut obj)?;
        }
        rounds += 1;
    }
    let ranked: Vec<(AcceleratorConfig, f64)> = swarm
        .top_n(usize::MAX)
        .into_iter()
        .filter(|(c, _)| oracle.area(space, c) <= spec.area_constraint)
        .take(spec.n_top)
        .collect();
    evaluate_candidates(space, oracle, spec, ranked)
}

/// Optimize the trained surrogate under the spec's area constraint and
/// evaluate the top candidates against the oracle.
pub fn optimize(
    ck: &Checkpoint,
    space: &DesignSpace,
    oracle: &Oracle,
    spec: &SearchSpec,
) -> Result<SearchReport> {
    optimize_inner(ck, space, oracle, spec, spec.area_constraint)
}

/// Optimize for applications the checkpoint never trained on.
pub fn optimize_zero_shot(
    ck: &Checkpoint,
    space: &DesignSpace,
    oracle: &Oracle,
    spec: &SearchSpec,
) -> Result<SearchReport> {
    for id in spec.contexts.keys() {
        if ck.trained_apps.iter().any(|a| a == id) {
            return Err(Error::Config(format!(
                "application `{}` was in the training set; zero-shot targets must be unseen",
                id
            )));
        }
    }
    if ck.surrogate.arch().context_dim == 0 {
        return Err(Error::Config(
            "zero-shot search needs a contextual surrogate".into(),
        ));
    }
    optimize(ck, space, oracle, spec)
}

/// Re-run the search under a tighter area budget without retraining.
///
/// The swarm follows the same trajectory as the original run (penalty still
/// applied at `original_constraint`, same seed); the tighter budget only
/// rejects candidates from the final ranking. The tighter run's candidate
/// pool is therefore a subset of the original's.
pub fn reoptimize_constraint(
    ck: &Checkpoint,
    space: &DesignSpace,
    oracle: &Oracle,
    spec: &SearchSpec,
    original_constraint: f64,
) -> Result<SearchReport> {
    if spec.area_constraint > original_constraint {
        return Err(Error::Argument(
            "reoptimize_constraint expects a tighter area budget than the original".into(),
        ));
    }
    optimize_inner(ck, space, oracle, spec, original_constraint)
}

/// Online baseline: the firefly queries the oracle directly, one metered
/// query per fitness evaluation, stopping at exactly `query_budget` queries.
pub fn evolutionary_baseline(
    space: &DesignSpace,
    oracle: &Oracle,
    context: &ContextVector,
    spec: &SearchSpec,
    query_budget: u64,
) -> Result<SearchReport> {
    spec.validate()?;
    let population = firefly::population_size(space.num_params());
    if query_budget < population as u64 {
        return Err(Error::Argument(format!(
            "query_budget {} is below the population size {}",
            query_budget, population
        )));
    }

    let mut queries = 0u64;
    let mut best: Option<(AcceleratorConfig, f64)> = None;
    let mut trace: Vec<(u64, f64, f64)> = Vec::new();
    let start_seconds = oracle.ledger.total_sim_seconds();

    // every fitness evaluation is one simulator query
    macro_rules! eval {
        ($config:expr) => {{
            let config: &AcceleratorConfig = $config;
            let sim = oracle.simulate(space, config, context, Phase::Baseline)?;
            queries += 1;
            let fitness = match sim.latency_ms {
                Some(l)
                    if sim.feasible && oracle.area(space, config) <= spec.area_constraint =>
                {
                    if best.as_ref().map_or(true, |(_, b)| l < *b) {
                        best = Some((config.clone(), l));
                    }
                    l
                }
                _ => LARGE_PENALTY,
            };
            if let Some((_, b)) = &best {
                trace.push((queries, oracle.ledger.total_sim_seconds() - start_seconds, *b));
            }
            Result::<f64>::Ok(fitness)
        }};
    }

    let mut obj = |c: &AcceleratorConfig| eval!(c);
    let mut swarm = FireflySwarm::new(
        space,
        spec.hyper,
        population,
        spec.rng_seed,
        &mut obj,
    )?;
    let steps = (query_budget - population as u64) / population as u64;
    for _ in 0..steps {
        let mut obj = |c: &AcceleratorConfig| eval!(c);
        swarm.step(&mut obj)?;
    }
    // spend the remainder of the budget on uniform samples
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed ^ 0x5eed);
    while queries < query_budget {
        let config = space.sample_uniform(&mut rng, 1).remove(0);
        eval!(&config)?;
    }

    let mut report = SearchReport {
        oracle_queries: queries,
        trace,
        ..SearchReport::default()
    };
    match best {
        Some((config, latency)) => {
            report.best_latency = Some(latency);
            report.median_latency = Some(latency);
            report.candidates.push(CandidateResult {
                rank: 1,
                config: config.clone(),
                surrogate_score: latency,
                area: oracle.area(space, &config),
                oracle_feasible: true,
                oracle_latency: Some(latency),
            });
        }
        None => {
            report.failure = Some("baseline found no feasible design within budget".into());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context;
    use crate::dataset;
    use crate::oracle::OracleSpec;
    use crate::surrogate::SurrogateArchitecture;
    use crate::trainer::{self, TrainConfig};

    fn trained_checkpoint(apps: &[&str], n: usize, contextual: bool) -> (DesignSpace, Oracle, Checkpoint) {
        let space = DesignSpace::default_accelerator();
        let oracle = Oracle::new(OracleSpec::default());
        let ids: Vec<String> = apps.iter().map(|s| s.to_string()).collect();
        let contexts = context::contexts_for(&ids).unwrap();
        let ds = dataset::generate(&space, &oracle, &contexts, n, 11).unwrap();
        let split = ds.split_validation(0.2).unwrap();
        let cfg = TrainConfig {
            total_gradient_steps: 400,
            checkpoint_interval: 400,
            feasible_batch: 32,
            infeasible_batch: 16,
            alpha: 0.1,
            beta: 0.1,
            rng_seed: 4,
            ..TrainConfig::default()
        };
        let report = if contextual {
            let arch = SurrogateArchitecture::small(crate::context::CONTEXT_DIM);
            trainer::train_contextual(&split, &space, &arch, &cfg).unwrap()
        } else {
            trainer::train(&split, &space, &SurrogateArchitecture::small(0), &cfg).unwrap()
        };
        (space, oracle, report.checkpoints.into_iter().last().unwrap())
    }

    fn spec_for(apps: &[&str], seed: u64, n_top: usize, iterations: usize) -> SearchSpec {
        let ids: Vec<String> = apps.iter().map(|s| s.to_string()).collect();
        let mut s = SearchSpec::new(context::contexts_for(&ids).unwrap(), seed);
        s.n_top = n_top;
        s.iterations = iterations;
        s
    }

    #[test]
    fn optimize_meters_n_top_times_contexts_queries() {
        let (space, oracle, ck) = trained_checkpoint(&["m4"], 150, false);
        let spec = spec_for(&["m4"], 1, 16, 60);
        let before = oracle.ledger.queries(Phase::Evaluation);
        let report = optimize(&ck, &space, &oracle, &spec).unwrap();
        assert!(report.failure.is_none());
        assert_eq!(report.candidates.len(), 16);
        assert_eq!(report.oracle_queries, 16);
        assert_eq!(oracle.ledger.queries(Phase::Evaluation) - before, 16);
        for c in &report.candidates {
            assert!(c.area <= spec.area_constraint);
        }
        // ranked ascending by surrogate score, distinct configs
        for w in report.candidates.windows(2) {
            assert!(w[0].surrogate_score <= w[1].surrogate_score);
            assert_ne!(w[0].config, w[1].config);
        }
        assert!(report.best_latency.is_some());
        assert!(report.best_latency.unwrap() <= report.median_latency.unwrap());
    }

    #[test]
    fn multi_context_costs_scale_with_context_count() {
        let (space, oracle, ck) = trained_checkpoint(&["m4", "m5"], 120, true);
        let spec = spec_for(&["m4", "m5"], 2, 8, 40);
        let report = optimize(&ck, &space, &oracle, &spec).unwrap();
        assert_eq!(report.oracle_queries, 8 * 2);
    }

    #[test]
    fn impossible_constraint_is_a_failure_report_not_an_error() {
        let (space, oracle, ck) = trained_checkpoint(&["m4"], 120, false);
        let mut spec = spec_for(&["m4"], 3, 8, 30);
        spec.area_constraint = 1e-3;
        let report = optimize(&ck, &space, &oracle, &spec).unwrap();
        assert!(report.failure.is_some());
        assert!(report.candidates.is_empty());
        assert_eq!(report.oracle_queries, 0);
    }

    #[test]
    fn zero_shot_rejects_overlapping_apps() {
        let (space, oracle, ck) = trained_checkpoint(&["m4", "m5"], 120, true);
        let spec = spec_for(&["m4"], 1, 8, 20);
        assert!(matches!(
            optimize_zero_shot(&ck, &space, &oracle, &spec),
            Err(Error::Config(_))
        ));
        let unseen = spec_for(&["unet"], 1, 8, 20);
        let report = optimize_zero_shot(&ck, &space, &oracle, &unseen).unwrap();
        assert_eq!(report.candidates.len(), 8);
    }

    #[test]
    fn tighter_budget_candidates_are_a_subset_and_never_better() {
        let (space, oracle, ck) = trained_checkpoint(&["m4"], 150, false);
        let spec = spec_for(&["m4"], 7, 32, 60);
        let loose = optimize(&ck, &space, &oracle, &spec).unwrap();

        let mut tight_spec = spec.clone();
        tight_spec.area_constraint = 18.0;
        let tight =
            reoptimize_constraint(&ck, &space, &oracle, &tight_spec, spec.area_constraint)
                .unwrap();
        for c in &tight.candidates {
            assert!(c.area <= 18.0);
        }
        if let (Some(lb), Some(tb)) = (loose.best_latency, tight.best_latency) {
            assert!(tb >= lb, "tighter budget produced better latency: {tb} < {lb}");
        }
        // loosening instead of tightening is rejected
        let mut wider = spec.clone();
        wider.area_constraint = 40.0;
        assert!(reoptimize_constraint(&ck, &space, &oracle, &wider, 29.0).is_err());
    }

    #[test]
    fn baseline_spends_exactly_the_budget_with_monotone_trace() {
        let space = DesignSpace::default_accelerator();
        let oracle = Oracle::new(OracleSpec::default());
        let ctx = context::contexts_for(&["m4".to_string()]).unwrap()["m4"].clone();
        let spec = spec_for(&["m4"], 5, 8, 10);
        let before = oracle.ledger.queries(Phase::Baseline);
        let report = evolutionary_baseline(&space, &oracle, &ctx, &spec, 300).unwrap();
        assert_eq!(report.oracle_queries, 300);
        assert_eq!(oracle.ledger.queries(Phase::Baseline) - before, 300);
        for w in report.trace.windows(2) {
            assert!(w[1].2 <= w[0].2);
            assert!(w[1].0 > w[0].0);
        }
        assert!(evolutionary_baseline(&space, &oracle, &ctx, &spec, 5).is_err());
    }

    #[test]
    fn report_csv_has_one_row_per_candidate_plus_summary() {
        let (space, oracle, ck) = trained_checkpoint(&["m4"], 120, false);
        let spec = spec_for(&["m4"], 1, 5, 30);
        let report = optimize(&ck, &space, &oracle, &spec).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 1 + report.candidates.len() + 1);
        assert!(lines[0].starts_with("rank,indices,"));
        assert!(lines.last().unwrap().starts_with("summary,"));
    }
}
