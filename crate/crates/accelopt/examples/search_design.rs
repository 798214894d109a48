//! Full single-application pipeline: dataset, conservative training, firefly
//! search over the surrogate under the 29 mm^2 area budget, and oracle
//! evaluation of the top candidates.

use accelopt::context;
use accelopt::dataset;
use accelopt::design_space::DesignSpace;
use accelopt::oracle::{Oracle, OracleSpec};
use accelopt::search::{self, SearchSpec};
use accelopt::surrogate::SurrogateArchitecture;
use accelopt::trainer::{self, TrainConfig};

fn main() -> accelopt::Result<()> {
    let space = DesignSpace::default_accelerator();
    let oracle = Oracle::new(OracleSpec::default());
    let contexts = context::contexts_for(&["m4".to_string()])?;
    let ds = dataset::generate(&space, &oracle, &contexts, 1500, 5)?;
    let split = ds.select_training_subset(400)?.split_validation(0.2)?;
    let best_in_training = split
        .train
        .iter()
        .map(|r| r.latency_ms)
        .fold(f64::INFINITY, f64::min);

    let cfg = TrainConfig {
        alpha: 0.01,
        beta: 0.1,
        lr: 1e-3,
        total_gradient_steps: 1200,
        checkpoint_interval: 300,
        feasible_batch: 64,
        infeasible_batch: 32,
        rng_seed: 2,
        ..TrainConfig::default()
    };
    let report = trainer::train(&split, &space, &SurrogateArchitecture::small(0), &cfg)?;
    let ck = trainer::select_model(&report.checkpoints)?;
    println!("trained: tau {:+.4} at step {}", ck.validation_tau, ck.gradient_step);

    let mut spec = SearchSpec::new(contexts, 0);
    spec.n_top = 64;
    spec.iterations = 200;
    let result = search::optimize(ck, &space, &oracle, &spec)?;

    for c in result.candidates.iter().take(5) {
        println!(
            "rank {:>2}  area {:>5.1} mm^2  oracle {}",
            c.rank,
            c.area,
            c.oracle_latency
                .map(|l| format!("{l:.1} ms"))
                .unwrap_or_else(|| "infeasible".to_string())
        );
    }
    println!(
        "best {:.1} ms / median {:.1} ms over {} evaluated candidates",
        result.best_latency.unwrap(),
        result.median_latency.unwrap(),
        result.candidates.len()
    );
    println!("best latency in the training split: {best_in_training:.1} ms");
    print!("{}", oracle.ledger.report_csv());
    Ok(())
}
