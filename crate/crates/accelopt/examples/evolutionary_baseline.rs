//! Offline pipeline vs online evolutionary search at a matched oracle
//! budget: the offline method spends its queries on the logged dataset plus
//! one final candidate evaluation, the baseline spends all of them driving
//! the firefly directly against the simulator.

use accelopt::context;
use accelopt::dataset;
use accelopt::design_space::DesignSpace;
use accelopt::oracle::{Oracle, OracleSpec, Phase};
use accelopt::search::{self, SearchSpec};
use accelopt::surrogate::SurrogateArchitecture;
use accelopt::trainer::{self, TrainConfig};

fn main() -> accelopt::Result<()> {
    let space = DesignSpace::default_accelerator();
    let contexts = context::contexts_for(&["m4".to_string()])?;
    let n_samples = 1200;
    let n_top = 64;

    // offline: dataset -> conservative surrogate -> one evaluation round
    let offline_oracle = Oracle::new(OracleSpec::default());
    let ds = dataset::generate(&space, &offline_oracle, &contexts, n_samples, 9)?;
    let split = ds.select_training_subset(300)?.split_validation(0.2)?;
    let cfg = TrainConfig {
        alpha: 0.01,
        beta: 0.1,
        lr: 1e-3,
        total_gradient_steps: 1200,
        checkpoint_interval: 300,
        feasible_batch: 64,
        infeasible_batch: 32,
        rng_seed: 3,
        ..TrainConfig::default()
    };
    let report = trainer::train(&split, &space, &SurrogateArchitecture::small(0), &cfg)?;
    let ck = trainer::select_model(&report.checkpoints)?;
    let mut spec = SearchSpec::new(contexts.clone(), 0);
    spec.n_top = n_top;
    spec.iterations = 200;
    let offline = search::optimize(ck, &space, &offline_oracle, &spec)?;

    // online: the same total budget spent on live queries
    let online_oracle = Oracle::new(OracleSpec::default());
    let budget = n_samples as u64 + n_top as u64;
    let ctx = &contexts["m4"];
    let online = search::evolutionary_baseline(&space, &online_oracle, ctx, &spec, budget)?;

    println!(
        "offline: best {:.1} ms, {} queries ({} dataset + {} evaluation)",
        offline.best_latency.unwrap(),
        offline_oracle.ledger.total_queries(),
        offline_oracle.ledger.queries(Phase::DatasetGen),
        offline_oracle.ledger.queries(Phase::Evaluation)
    );
    println!(
        "online:  best {} ms, {} queries",
        online
            .best_latency
            .map(|l| format!("{l:.1}"))
            .unwrap_or_else(|| "-".to_string()),
        online_oracle.ledger.total_queries()
    );
    println!(
        "simulated seconds: offline {} vs online {}",
        offline_oracle.ledger.total_sim_seconds(),
        online_oracle.ledger.total_sim_seconds()
    );
    Ok(())
}
