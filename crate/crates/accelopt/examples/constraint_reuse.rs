//! Constraint change without retraining: a checkpoint searched under the
//! default 29 mm^2 budget is reused as-is for a tighter 18 mm^2 budget. The
//! tighter run rejects candidates from the same search trajectory, so its
//! best latency can never beat the looser run's.

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
    let ds = dataset::generate(&space, &oracle, &contexts, 1200, 17)?;
    let split = ds.select_training_subset(300)?.split_validation(0.2)?;

    let cfg = TrainConfig {
        alpha: 0.01,
        beta: 0.1,
        lr: 1e-3,
        total_gradient_steps: 1000,
        checkpoint_interval: 250,
        feasible_batch: 64,
        infeasible_batch: 32,
        rng_seed: 6,
        ..TrainConfig::default()
    };
    let report = trainer::train(&split, &space, &SurrogateArchitecture::small(0), &cfg)?;
    let ck = trainer::select_model(&report.checkpoints)?;

    let mut spec = SearchSpec::new(contexts, 0);
    spec.n_top = 64;
    spec.iterations = 200;
    let loose = search::optimize(ck, &space, &oracle, &spec)?;
    println!(
        "area <= 29 mm^2: best {:.1} ms",
        loose.best_latency.unwrap()
    );

    let mut tight_spec = spec.clone();
    tight_spec.area_constraint = 18.0;
    let tight = search::reoptimize_constraint(ck, &space, &oracle, &tight_spec, 29.0)?;
    match tight.best_latency {
        Some(b) => {
            println!("area <= 18 mm^2: best {b:.1} ms (same checkpoint, no retraining)");
            assert!(b >= loose.best_latency.unwrap());
        }
        None => println!("area <= 18 mm^2: {}", tight.failure.unwrap()),
    }
    for c in tight.candidates.iter().take(3) {
        assert!(c.area <= 18.0);
        println!("  rank {} area {:.1} mm^2", c.rank, c.area);
    }
    Ok(())
}
