//! Train a conservative surrogate on a logged dataset: negative mining
//! against the current model, the infeasible penalty, and checkpoint
//! selection by validation rank correlation. No simulator queries are spent.

use accelopt::context;
use accelopt::dataset;
use accelopt::design_space::DesignSpace;
use accelopt::oracle::{Oracle, OracleSpec, Phase};
use accelopt::surrogate::SurrogateArchitecture;
use accelopt::trainer::{self, TrainConfig};

fn main() -> accelopt::Result<()> {
    let space = DesignSpace::default_accelerator();
    let oracle = Oracle::new(OracleSpec::default());
    let contexts = context::contexts_for(&["m4".to_string()])?;
    let ds = dataset::generate(&space, &oracle, &contexts, 1200, 3)?;
    let split = ds.select_training_subset(300)?.split_validation(0.2)?;

    let queries_before_training = oracle.ledger.total_queries();
    let cfg = TrainConfig {
        alpha: 0.01,
        beta: 0.1,
        lr: 1e-3,
        total_gradient_steps: 1000,
        checkpoint_interval: 250,
        feasible_batch: 64,
        infeasible_batch: 32,
        rng_seed: 1,
        ..TrainConfig::default()
    };
    let report = trainer::train(&split, &space, &SurrogateArchitecture::small(0), &cfg)?;

    for ck in &report.checkpoints {
        println!(
            "step {:>5}  validation tau {:+.4}",
            ck.gradient_step, ck.validation_tau
        );
    }
    let best = trainer::select_model(&report.checkpoints)?;
    println!(
        "selected checkpoint: step {} tau {:+.4} (target scale {:.1} ms)",
        best.gradient_step, best.validation_tau, best.latency_scale
    );

    let path = std::env::temp_dir().join("accelopt_example.ckpt");
    best.save(&path)?;
    println!("checkpoint written to {}", path.display());
    assert_eq!(oracle.ledger.total_queries(), queries_before_training);
    assert_eq!(oracle.ledger.queries(Phase::Training), 0);
    println!("oracle queries during training: 0");
    Ok(())
}
