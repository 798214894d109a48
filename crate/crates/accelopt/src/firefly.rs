//! Firefly metaheuristic over a continuous relaxation of the discrete design
//! space. Minimizes a caller-supplied objective; used both to mine negatives
//! against the surrogate and to run the final (or baseline) search.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design_space::{AcceleratorConfig, DesignSpace};
use crate::error::{Error, Result};

/// Swarm hyperparameters. Noise is Gaussian per coordinate in level-index
/// units and is annealed multiplicatively each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FireflyHyper {
    pub gamma: f64,
    pub beta0: f64,
    pub noise_scale: f64,
    pub noise_anneal: f64,
}

impl Default for FireflyHyper {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta0: 1.0,
            noise_scale: 0.1,
            noise_anneal: 0.97,
        }
    }
}

impl FireflyHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.beta0 > 0.0) {
            return Err(Error::Argument("gamma and beta0 must be positive".into()));
        }
        if !(self.noise_scale >= 0.0) || !(self.noise_anneal > 0.0 && self.noise_anneal <= 1.0) {
            return Err(Error::Argument(
                "noise_scale must be >= 0 and noise_anneal in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Swarm size as a function of the number of design parameters.
pub fn population_size(c: usize) -> usize {
    let c = c as f64;
    10 + (0.5 * (c.powf(1.2) + c)).round() as usize
}

/// Attraction strength at distance `r`.
pub fn attractiveness(hyper: &FireflyHyper, r: f64) -> f64 {
    hyper.beta0 * (-hyper.gamma * r * r).exp()
}

/// Floor each coordinate and clamp into the valid index range.
pub fn decode(space: &DesignSpace, position: &[f64]) -> AcceleratorConfig {
    let indices = position
        .iter()
        .zip(space.params())
        .map(|(&p, spec)| (p.floor().max(0.0) as usize).min(spec.cardinality() - 1))
        .collect();
    AcceleratorConfig::new(indices)
}

/// A population of continuous positions plus their cached fitness.
pub struct FireflySwarm {
    cards: Vec<usize>,
    hyper: FireflyHyper,
    positions: Vec<Vec<f64>>,
    fitness: Vec<f64>,
    best: Option<(AcceleratorConfig, f64)>,
    evaluated: BTreeMap<AcceleratorConfig, f64>,
    rng: ChaCha8Rng,
    steps_since_init: u64,
}

impl FireflySwarm {
    pub fn new<F>(
        space: &DesignSpace,
        hyper: FireflyHyper,
        population: usize,
        rng_seed: u64,
        objective: &mut F,
    ) -> Result<Self>
    where
        F: FnMut(&AcceleratorConfig) -> Result<f64>,
    {
        hyper.validate()?;
        if population == 0 {
            return Err(Error::Argument("population must be >= 1".into()));
        }
        let mut swarm = Self {
            cards: space.cardinalities(),
            hyper,
            positions: Vec::new(),
            fitness: Vec::new(),
            best: None,
            evaluated: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            steps_since_init: 0,
        };
        swarm.scatter(population, objective)?;
        Ok(swarm)
    }

    fn scatter<F>(&mut self, population: usize, objective: &mut F) -> Result<()>
    where
        F: FnMut(&AcceleratorConfig) -> Result<f64>,
    {
        self.positions = (0..population)
            .map(|_| {
                self.cards
                    .iter()
                    .map(|&c| self.rng.gen_range(0.0..c as f64))
                    .collect()
            })
            .collect();
        self.fitness = vec![0.0; population];
        self.steps_since_init = 0;
        for i in 0..population {
            self.fitness[i] = self.evaluate(i, objective)?;
        }
        Ok(())
    }

    /// Resample every position uniformly; keeps the rng stream and the record
    /// of everything evaluated so far.
    pub fn reinitialize<F>(&mut self, objective: &mut F) -> Result<()>
    where
        F: FnMut(&AcceleratorConfig) -> Result<f64>,
    {
        let population = self.positions.len();
        self.scatter(population, objective)
    }

    fn decode_row(&self, position: &[f64]) -> AcceleratorConfig {
        let indices = position
            .iter()
            .zip(&self.cards)
            .map(|(&p, &c)| (p.floor().max(0.0) as usize).min(c - 1))
            .collect();
        AcceleratorConfig::new(indices)
    }

    fn evaluate<F>(&mut self, i: usize, objective: &mut F) -> Result<f64>
    where
        F: FnMut(&AcceleratorConfig) -> Result<f64>,
    {
        let config = self.decode_row(&self.positions[i]);
        let value = objective(&config)?;
        if !value.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        self.evaluated.insert(config.clone(), value);
        match &self.best {
            Some((_, b)) if *b <= value => {}
            _ => self.best = Some((config, value)),
        }
        Ok(value)
    }

    /// Re-evaluate every particle against a (possibly changed) objective.
    pub fn refresh_fitness<F>(&mut self, objective: &mut F) -> Result<()>
    where
        F: FnMut(&AcceleratorConfig) -> Result<f64>,
    {
        for i in 0..self.positions.len() {
            self.fitness[i] = self.evaluate(i, objective)?;
        }
        Ok(())
    }

    /// One sweep: every particle accumulates attraction toward all strictly
    /// better particles (distances taken at pre-step positions), adds
    /// annealed Gaussian noise, clamps, and is re-evaluated.
    pub fn step<F>(&mut self, objective: &mut F) -> Result<()>
    where
        F: FnMut(&AcceleratorConfig) -> Result<f64>,
    {
        let n = self.positions.len();
        let k = self.cards.len();
        let noise = self.hyper.noise_scale * self.hyper.noise_anneal.powf(self.steps_since_init as f64);
        let old = self.positions.clone();
        let old_fit = self.fitness.clone();

        // sweep in fitness order, best first
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| old_fit[a].total_cmp(&old_fit[b]).then(a.cmp(&b)));

        for &i in &order {
            let mut pos = old[i].clone();
            for &j in &order {
                if !(old_fit[j] < old_fit[i]) {
                    continue;
                }
                let r2: f64 = (0..k).map(|t| (old[i][t] - old[j][t]).powi(2)).sum();
                let beta = self.hyper.beta0 * (-self.hyper.gamma * r2).exp();
                for t in 0..k {
                    pos[t] += beta * (old[j][t] - old[i][t]);
                }
            }
            for (t, &c) in self.cards.iter().enumerate() {
                let eps: f64 = self.rng.sample(StandardNormal);
                pos[t] = (pos[t] + noise * eps).clamp(0.0, c as f64 - 1e-9);
            }
            self.positions[i] = pos;
            match self.evaluate(i, objective) {
                Ok(v) => self.fitness[i] = v,
                Err(e) => {
                    // leave the particle where it was
                    self.positions[i] = old[i].clone();
                    self.fitness[i] = old_fit[i];
                    return Err(e);
                }
            }
        }
        self.steps_since_init += 1;
        Ok(())
    }

    /// Best (config, value) ever evaluated.
    pub fn best(&self) -> Option<(&AcceleratorConfig, f64)> {
        self.best.as_ref().map(|(c, v)| (c, *v))
    }

    /// Best particle of the current population.
    pub fn population_best(&self) -> (AcceleratorConfig, f64) {
        let i = (0..self.fitness.len())
            .min_by(|&a, &b| self.fitness[a].total_cmp(&self.fitness[b]).then(a.cmp(&b)))
            .expect("non-empty population");
        (self.decode_row(&self.positions[i]), self.fitness[i])
    }

    /// The `n` best distinct configs ever evaluated, ascending by value.
    pub fn top_n(&self, n: usize) -> Vec<(AcceleratorConfig, f64)> {
        let mut all: Vec<(AcceleratorConfig, f64)> = self
            .evaluated
            .iter()
            .map(|(c, &v)| (c.clone(), v))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(n);
        all
    }

    pub fn distinct_evaluated(&self) -> usize {
        self.evaluated.len()
    }
}

/// Convenience wrapper: init, run a fixed number of steps, return the top
/// distinct configs ascending. Optionally records (iteration, best_value).
pub fn run<F>(
    space: &DesignSpace,
    objective: &mut F,
    hyper: FireflyHyper,
    iterations: usize,
    rng_seed: u64,
    top_n: usize,
    mut trace: Option<&mut Vec<(usize, f64)>>,
) -> Result<Vec<(AcceleratorConfig, f64)>>
where
    F: FnMut(&AcceleratorConfig) -> Result<f64>,
{
    if iterations == 0 || top_n == 0 {
        return Err(Error::Argument("iterations and top_n must be >= 1".into()));
    }
    let population = population_size(space.num_params());
    let mut swarm = FireflySwarm::new(space, hyper, population, rng_seed, objective)?;
    for it in 0..iterations {
        swarm.step(objective)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push((it + 1, swarm.best().unwrap().1));
        }
    }
    Ok(swarm.top_n(top_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::ParamSpec;

    fn grid(cards: &[usize]) -> DesignSpace {
        DesignSpace::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    ParamSpec::new(format!("p{}", i), (0..c).map(|v| v as f64).collect()).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn population_size_examples() {
        assert_eq!(population_size(10), 23);
        assert_eq!(population_size(1), 11);
        assert_eq!(population_size(4), 15);
    }

    #[test]
    fn attractiveness_examples() {
        let h = FireflyHyper::default();
        assert_eq!(attractiveness(&h, 0.0), 1.0);
        assert!((attractiveness(&h, 1.0) - (-1.0f64).exp()).abs() < 1e-12);
        let mut prev = attractiveness(&h, 0.0);
        for i in 1..20 {
            let v = attractiveness(&h, i as f64 * 0.25);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn decode_floors_and_clamps() {
        let space = grid(&[3, 5]);
        assert_eq!(decode(&space, &[0.0, 0.0]).indices, vec![0, 0]);
        assert_eq!(decode(&space, &[2.9, 4.0 - 1e-9]).indices, vec![2, 3]);
        assert_eq!(decode(&space, &[-0.5, 99.0]).indices, vec![0, 4]);
    }

    #[test]
    fn decode_idempotent_through_midpoint() {
        let space = grid(&[4, 4, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let p: Vec<f64> = space
                .cardinalities()
                .iter()
                .map(|&c| rng.gen_range(0.0..c as f64))
                .collect();
            let d = decode(&space, &p);
            let mid: Vec<f64> = d.indices.iter().map(|&i| i as f64 + 0.5).collect();
            assert_eq!(decode(&space, &mid), d);
        }
    }

    #[test]
    fn single_particle_moves_by_pure_noise() {
        let space = grid(&[10, 10]);
        let mut obj = |c: &AcceleratorConfig| Ok(c.indices[0] as f64);
        let mut swarm =
            FireflySwarm::new(&space, FireflyHyper::default(), 1, 5, &mut obj).unwrap();
        let before = swarm.positions[0].clone();
        swarm.step(&mut obj).unwrap();
        assert_ne!(swarm.positions[0], before);
        for (t, &c) in swarm.cards.iter().enumerate() {
            assert!(swarm.positions[0][t] >= 0.0 && swarm.positions[0][t] < c as f64);
        }
    }

    #[test]
    fn noiseless_pair_moves_exactly_by_attraction() {
        let space = grid(&[10, 10]);
        let hyper = FireflyHyper {
            noise_scale: 0.0,
            ..FireflyHyper::default()
        };
        let mut obj = |c: &AcceleratorConfig| Ok((c.indices[0] + c.indices[1]) as f64);
        let mut swarm = FireflySwarm::new(&space, hyper, 2, 9, &mut obj).unwrap();
        swarm.positions[0] = vec![1.0, 1.0];
        swarm.positions[1] = vec![4.0, 5.0];
        swarm.refresh_fitness(&mut obj).unwrap();
        swarm.step(&mut obj).unwrap();
        // better particle (index 0) has no better neighbor: stays put
        assert_eq!(swarm.positions[0], vec![1.0, 1.0]);
        let r2: f64 = 9.0 + 16.0;
        let b = 1.0 * (-r2).exp();
        let expect = [4.0 + b * (1.0 - 4.0), 5.0 + b * (1.0 - 5.0)];
        for (t, e) in expect.iter().enumerate() {
            assert!((swarm.positions[1][t] - e).abs() < 1e-12);
        }
    }

    #[test]
    fn best_is_monotone_over_steps() {
        let space = grid(&[8, 8, 8]);
        let mut obj = |c: &AcceleratorConfig| {
            Ok(c.indices.iter().map(|&i| (i as f64 - 3.0).powi(2)).sum())
        };
        let mut swarm =
            FireflySwarm::new(&space, FireflyHyper::default(), 12, 1, &mut obj).unwrap();
        let mut prev = swarm.best().unwrap().1;
        for _ in 0..30 {
            swarm.step(&mut obj).unwrap();
            let cur = swarm.best().unwrap().1;
            assert!(cur <= prev);
            prev = cur;
        }
    }

    #[test]
    fn non_finite_objective_is_an_error_and_leaves_particle() {
        let space = grid(&[6, 6]);
        let mut calls = 0usize;
        let mut obj = |c: &AcceleratorConfig| {
            calls += 1;
            if calls > 3 {
                Ok(f64::NAN)
            } else {
                Ok(c.indices[0] as f64)
            }
        };
        let mut swarm =
            FireflySwarm::new(&space, FireflyHyper::default(), 3, 2, &mut obj).unwrap();
        let before = swarm.positions.clone();
        let err = swarm.step(&mut obj).unwrap_err();
        assert!(matches!(err, Error::NonFiniteObjective));
        // the particle that hit the bad value is back at its old position
        let moved: Vec<usize> = (0..3).filter(|&i| swarm.positions[i] != before[i]).collect();
        assert!(moved.len() < 3);
    }

    #[test]
    fn same_seed_same_ranked_list() {
        let space = grid(&[5, 5, 5]);
        let hyper = FireflyHyper::default();
        let mut obj = |c: &AcceleratorConfig| {
            Ok(c.indices.iter().map(|&i| (i as f64 - 2.0).powi(2)).sum())
        };
        let a = run(&space, &mut obj, hyper, 50, 77, 10, None).unwrap();
        let b = run(&space, &mut obj, hyper, 50, 77, 10, None).unwrap();
        assert_eq!(a, b);
        let c = run(&space, &mut obj, hyper, 50, 78, 10, None).unwrap();
        assert!(c == a || c != a); // different seed may or may not differ; just must run
    }

    #[test]
    fn top_n_larger_than_distinct_returns_all() {
        let space = grid(&[2, 2]);
        let mut obj = |c: &AcceleratorConfig| Ok(c.indices[0] as f64);
        let list = run(&space, &mut obj, FireflyHyper::default(), 20, 3, 1000, None).unwrap();
        assert!(list.len() <= 4);
        for w in list.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn finds_brute_force_optimum_of_separable_quadratic() {
        let space = grid(&[4, 4, 4, 4, 4]);
        let target = [3usize, 0, 2, 1, 3];
        let objective = |c: &AcceleratorConfig| -> f64 {
            c.indices
                .iter()
                .zip(&target)
                .map(|(&i, &t)| (i as f64 - t as f64).powi(2))
                .sum()
        };
        // brute force the optimum
        let mut best = (AcceleratorConfig::new(vec![0; 5]), f64::INFINITY);
        let mut idx = vec![0usize; 5];
        'outer: loop {
            let cfg = AcceleratorConfig::new(idx.clone());
            let v = objective(&cfg);
            if v < best.1 {
                best = (cfg, v);
            }
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < 4 {
                    continue 'outer;
                }
                *slot = 0;
            }
            break;
        }
        assert_eq!(best.0.indices, target.to_vec());

        let mut hits = 0;
        for seed in 0..5 {
            let mut obj = |c: &AcceleratorConfig| Ok(objective(c));
            let list =
                run(&space, &mut obj, FireflyHyper::default(), 500, seed, 1, None).unwrap();
            if list[0].0 == best.0 {
                hits += 1;
            }
        }
        assert!(hits >= 4, "optimum found in {}/5 seeds", hits);
    }

    #[test]
    fn trace_records_every_iteration() {
        let space = grid(&[5, 5]);
        let mut obj = |c: &AcceleratorConfig| Ok(c.indices[0] as f64);
        let mut trace = Vec::new();
        run(&space, &mut obj, FireflyHyper::default(), 25, 1, 5, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 25);
        for w in trace.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }
}
