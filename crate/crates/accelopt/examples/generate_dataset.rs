//! Sample the design space through the simulator and build the offline
//! dataset: feasible/infeasible partition, worst-k training selection and the
//! best-20% validation split.

use accelopt::context;
use accelopt::dataset;
use accelopt::design_space::DesignSpace;
use accelopt::oracle::{Oracle, OracleSpec};

fn main() -> accelopt::Result<()> {
    let space = DesignSpace::default_accelerator();
    let oracle = Oracle::new(OracleSpec::default());
    let contexts = context::contexts_for(&["m4".to_string()])?;

    let ds = dataset::generate(&space, &oracle, &contexts, 1000, 7)?;
    println!(
        "sampled 1000 designs: {} feasible, {} infeasible",
        ds.feasible.len(),
        ds.infeasible.len()
    );

    let subset = ds.select_training_subset(200)?;
    let split = subset.split_validation(0.2)?;
    println!(
        "worst-200 selection -> {} train / {} validation (best 20% held out)",
        split.train.len(),
        split.validation.len()
    );
    let worst = split.train.iter().map(|r| r.latency_ms).fold(0.0, f64::max);
    let best = split
        .validation
        .iter()
        .map(|r| r.latency_ms)
        .fold(f64::INFINITY, f64::min);
    println!("train worst latency {worst:.1} ms, validation best {best:.1} ms");

    let path = std::env::temp_dir().join("accelopt_example_dataset.csv");
    ds.save(&space, &path)?;
    println!("dataset written to {}", path.display());
    print!("{}", oracle.ledger.report_csv());
    Ok(())
}
