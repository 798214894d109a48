//! Multi-application optimization: one contextual surrogate trained jointly
//! on three workloads, then a single accelerator optimized for their average
//! predicted latency.

use accelopt::context::{self, CONTEXT_DIM};
use accelopt::dataset;
use accelopt::design_space::DesignSpace;
use accelopt::oracle::{Oracle, OracleSpec, Phase};
use accelopt::search::{self, SearchSpec};
use accelopt::surrogate::SurrogateArchitecture;
use accelopt::trainer::{self, TrainConfig};

fn main() -> accelopt::Result<()> {
    let apps: Vec<String> = ["m4", "m5", "m6"].iter().map(|s| s.to_string()).collect();
    let space = DesignSpace::default_accelerator();
    let oracle = Oracle::new(OracleSpec::default());
    let contexts = context::contexts_for(&apps)?;
    let ds = dataset::generate(&space, &oracle, &contexts, 600, 13)?;
    let split = ds.select_training_subset(250)?.split_validation(0.2)?;

    let cfg = TrainConfig {
        alpha: 0.01,
        beta: 0.1,
        lr: 1e-3,
        total_gradient_steps: 1200,
        checkpoint_interval: 300,
        feasible_batch: 64,
        infeasible_batch: 32,
        rng_seed: 8,
        ..TrainConfig::default()
    };
    let arch = SurrogateArchitecture::small(CONTEXT_DIM);
    let report = trainer::train_contextual(&split, &space, &arch, &cfg)?;
    let ck = trainer::select_model(&report.checkpoints)?;
    for (app, tau) in &ck.per_app_tau {
        println!("{app}: validation tau {tau:+.4}");
    }

    let mut spec = SearchSpec::new(contexts, 0);
    spec.n_top = 32;
    spec.iterations = 150;
    let result = search::optimize(ck, &space, &oracle, &spec)?;
    println!(
        "best average latency across {} apps: {:.1} ms (median {:.1} ms)",
        apps.len(),
        result.best_latency.unwrap(),
        result.median_latency.unwrap()
    );
    println!(
        "evaluation queries: {} ({} candidates x {} contexts)",
        oracle.ledger.queries(Phase::Evaluation),
        result.candidates.len(),
        apps.len()
    );
    Ok(())
}
