//! Zero-shot generalization: a contextual surrogate trained on three
//! applications is optimized for a fourth it never saw, using only that
//! application's context vector. Compared against a uniform-random baseline
//! with the same oracle evaluation budget.

use accelopt::context::{self, CONTEXT_DIM};
use accelopt::dataset;
use accelopt::design_space::DesignSpace;
use accelopt::oracle::{Oracle, OracleSpec, Phase};
use accelopt::search::{self, SearchSpec};
use accelopt::surrogate::SurrogateArchitecture;
use accelopt::trainer::{self, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> accelopt::Result<()> {
    let train_apps: Vec<String> = ["mobilenet_edge", "m5", "m6"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let target = "m4".to_string();

    let space = DesignSpace::default_accelerator();
    let oracle = Oracle::new(OracleSpec::default());
    let train_contexts = context::contexts_for(&train_apps)?;
    let ds = dataset::generate(&space, &oracle, &train_contexts, 8000, 2001)?;
    assert!(ds.feasible.iter().all(|r| r.app_id != target));
    let split = ds.split_validation(0.2)?;

    let cfg = TrainConfig {
        alpha: 0.01,
        beta: 0.1,
        lr: 1e-3,
        total_gradient_steps: 8000,
        checkpoint_interval: 500,
        rng_seed: 1,
        ..TrainConfig::default()
    };
    let arch = SurrogateArchitecture::small(CONTEXT_DIM);
    let report = trainer::train_contextual(&split, &space, &arch, &cfg)?;
    let ck = trainer::select_model(&report.checkpoints)?;
    println!("trained on {:?}, optimizing unseen `{target}`", ck.trained_apps);

    let target_contexts = context::contexts_for(std::slice::from_ref(&target))?;
    let spec = SearchSpec::new(target_contexts.clone(), 1 ^ 0x2E20);
    let zs = search::optimize_zero_shot(ck, &space, &oracle, &spec)?;
    println!(
        "zero-shot best: {}",
        zs.best_latency
            .map(|l| format!("{l:.1} ms"))
            .unwrap_or_else(|| "no feasible design".to_string())
    );

    // random baseline with the same evaluation budget
    let mut rng = ChaCha8Rng::seed_from_u64(3001);
    let ctx = &target_contexts[&target];
    let mut baseline_best = f64::INFINITY;
    for config in space.sample_uniform(&mut rng, 256) {
        let sim = oracle.simulate(&space, &config, ctx, Phase::Baseline)?;
        if sim.feasible && oracle.area(&space, &config) <= spec.area_constraint {
            baseline_best = baseline_best.min(sim.latency_ms.unwrap());
        }
    }
    println!("random-256 baseline best: {baseline_best:.1} ms");
    Ok(())
}
