//! Surrogate training: interleaved negative mining and Adam steps, periodic
//! miner refresh, checkpointing with validation rank correlation, hyper grid
//! model selection, and contextual multi-application training.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::CONTEXT_DIM;
use crate::dataset::{DatasetSplit, LabeledDesign};
use crate::design_space::{AcceleratorConfig, DesignSpace};
use crate::error::{Error, Result};
use crate::firefly::{self, FireflyHyper, FireflySwarm};
use crate::fsutil::write_atomic;
use crate::surrogate::{
    AdamHyper, AdamState, FeasibleSample, LossBatch, Surrogate, SurrogateArchitecture,
    UnlabeledSample,
};

/// Knobs for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub total_gradient_steps: u64,
    /// Inner firefly steps per gradient step.
    pub miner_inner_steps: u64,
    /// Gradient steps between swarm reinitializations.
    pub miner_refresh_period: u64,
    pub feasible_batch: usize,
    pub infeasible_batch: usize,
    pub checkpoint_interval: u64,
    pub rng_seed: u64,
    /// Targets are trained as latency / scale; `None` uses the mean training
    /// latency. The scale is stored in every checkpoint.
    pub latency_scale: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            lr: 1e-4,
            total_gradient_steps: 50_000,
            miner_inner_steps: 5,
            miner_refresh_period: 20_000,
            feasible_batch: 128,
            infeasible_batch: 128,
            checkpoint_interval: 2_500,
            rng_seed: 0,
            latency_scale: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Argument("alpha and beta must be >= 0".into()));
        }
        if self.miner_inner_steps < 1 || self.miner_refresh_period < 1 {
            return Err(Error::Argument(
                "miner_inner_steps and miner_refresh_period must be >= 1".into(),
            ));
        }
        if self.total_gradient_steps < 1 || self.checkpoint_interval < 1 {
            return Err(Error::Argument(
                "total_gradient_steps and checkpoint_interval must be >= 1".into(),
            ));
        }
        if self.feasible_batch == 0 {
            return Err(Error::Argument("feasible_batch must be >= 1".into()));
        }
        if let Some(s) = self.latency_scale {
            if !(s > 0.0) {
                return Err(Error::Argument("latency_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A parameter snapshot plus everything needed to use and compare it later.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub surrogate: Surrogate,
    pub gradient_step: u64,
    pub validation_tau: f64,
    pub per_app_tau: BTreeMap<String, f64>,
    pub alpha: f64,
    pub beta: f64,
    pub latency_scale: f64,
    pub trained_apps: Vec<String>,
}

/// The (alpha, beta) grid swept during model selection.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.01, 0.1, 0.5, 1.0, 5.0],
            betas: vec![0.0, 0.01, 5.0, 0.1, 1.0],
        }
    }
}

impl HyperGrid {
    /// Cells in sweep order.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.alphas.len() * self.betas.len());
        for &a in &self.alphas {
            for &b in &self.betas {
                out.push((a, b));
            }
        }
        out
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy)]
pub struct LogRow {
    pub step: u64,
    pub train_loss: f64,
    pub mse_term: f64,
    pub negative_term: f64,
    pub infeasible_term: f64,
    pub validation_tau: Option<f64>,
}

/// Output of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRow>,
}

impl TrainReport {
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "step,train_loss,mse_term,negative_term,infeasible_term,validation_tau\n",
        );
        for r in &self.log {
            let tau = r
                .validation_tau
                .map(|t| t.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.train_loss, r.mse_term, r.negative_term, r.infeasible_term, tau
            ));
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Rank correlation over ordered pairs: concordant pairs count +1, every
/// other pair (including ties) counts -1, normalized by N(N-1).
pub fn kendall_tau(truths: &[f64], preds: &[f64]) -> Result<f64> {
    if truths.len() != preds.len() {
        return Err(Error::Argument(format!(
            "kendall_tau length mismatch: {} vs {}",
            truths.len(),
            preds.len()
        )));
    }
    let n = truths.len();
    if n < 2 {
        return Err(Error::Argument("kendall_tau needs at least 2 points".into()));
    }
    let mut concordant = 0i64;
    let mut other = 0i64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if (truths[i] - truths[j]) * (preds[i] - preds[j]) > 0.0 {
                concordant += 1;
            } else {
                other += 1;
            }
        }
    }
    Ok((concordant - other) as f64 / (n * (n - 1)) as f64)
}

/// Highest validation tau wins; ties break to lower alpha, then lower beta,
/// then earlier step.
pub fn select_model(checkpoints: &[Checkpoint]) -> Result<&Checkpoint> {
    checkpoints
        .iter()
        .min_by(|a, b| {
            b.validation_tau
                .total_cmp(&a.validation_tau)
                .then(a.alpha.total_cmp(&b.alpha))
                .then(a.beta.total_cmp(&b.beta))
                .then(a.gradient_step.cmp(&b.gradient_step))
        })
        .ok_or_else(|| Error::Argument("no checkpoints to select from".into()))
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn batch_hash(indices: &[usize]) -> u64 {
    let mut h = 0xacc0u64;
    for &i in indices {
        h = mix64(h ^ i as u64);
    }
    h
}

struct AppData<'a> {
    id: String,
    context: Vec<f64>,
    feasible: Vec<&'a LabeledDesign>,
    infeasible: Vec<&'a AcceleratorConfig>,
    validation: Vec<&'a LabeledDesign>,
}

fn organize<'a>(split: &'a DatasetSplit, contextual: bool) -> Result<Vec<AppData<'a>>> {
    let mut by_app: BTreeMap<String, AppData<'a>> = BTreeMap::new();
    for (id, ctx) in &split.apps {
        by_app.insert(
            id.clone(),
            AppData {
                id: id.clone(),
                context: if contextual {
                    ctx.normalized.clone()
                } else {
                    Vec::new()
                },
                feasible: Vec::new(),
                infeasible: Vec::new(),
                validation: Vec::new(),
            },
        );
    }
    let missing = |id: &str| Error::Config(format!("no context for application `{}`", id));
    for r in &split.train {
        by_app
            .get_mut(&r.app_id)
            .ok_or_else(|| missing(&r.app_id))?
            .feasible
            .push(r);
    }
    for r in &split.validation {
        by_app
            .get_mut(&r.app_id)
            .ok_or_else(|| missing(&r.app_id))?
            .validation
            .push(r);
    }
    for (c, id) in &split.infeasible_train {
        by_app.get_mut(id).ok_or_else(|| missing(id))?.infeasible.push(c);
    }
    let apps: Vec<AppData> = by_app
        .into_values()
        .filter(|a| !a.feasible.is_empty())
        .collect();
    if apps.is_empty() {
        return Err(Error::Argument("training split has no feasible records".into()));
    }
    Ok(apps)
}

fn validation_taus(
    surrogate: &Surrogate,
    apps: &[AppData],
) -> Result<(f64, BTreeMap<String, f64>)> {
    let mut per_app = BTreeMap::new();
    let mut sum = 0.0;
    let mut counted = 0usize;
    for app in apps {
        if app.validation.len() < 2 {
            continue;
        }
        let truths: Vec<f64> = app.validation.iter().map(|r| r.latency_ms).collect();
        let preds: Vec<f64> = app
            .validation
            .iter()
            .map(|r| surrogate.forward(&r.config, &app.context))
            .collect::<Result<_>>()?;
        let tau = kendall_tau(&truths, &preds)?;
        per_app.insert(app.id.clone(), tau);
        sum += tau;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Argument(
            "no application has enough validation points for tau".into(),
        ));
    }
    Ok((sum / counted as f64, per_app))
}

/// Single-context training: application identity is ignored and the
/// architecture must not expect a context vector.
pub fn train(
    split: &DatasetSplit,
    space: &DesignSpace,
    arch: &SurrogateArchitecture,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if arch.context_dim != 0 {
        return Err(Error::Config(
            "plain train expects context_dim 0; use train_contextual".into(),
        ));
    }
    train_impl(split, space, arch, cfg, false)
}

/// Contextual training: each gradient step samples one application uniformly
/// and mines negatives with that application's context fixed.
pub fn train_contextual(
    split: &DatasetSplit,
    space: &DesignSpace,
    arch: &SurrogateArchitecture,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if arch.context_dim != CONTEXT_DIM {
        return Err(Error::Config(format!(
            "contextual training needs context_dim {}, architecture has {}",
            CONTEXT_DIM, arch.context_dim
        )));
    }
    train_impl(split, space, arch, cfg, true)
}

fn train_impl(
    split: &DatasetSplit,
    space: &DesignSpace,
    arch: &SurrogateArchitecture,
    cfg: &TrainConfig,
    contextual: bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    let apps = organize(split, contextual)?;

    let scale = match cfg.latency_scale {
        Some(s) => s,
        None => {
            let n: usize = apps.iter().map(|a| a.feasible.len()).sum();
            let sum: f64 = apps
                .iter()
                .flat_map(|a| a.feasible.iter().map(|r| r.latency_ms))
                .sum();
            sum / n as f64
        }
    };
    if !(scale > 0.0) {
        return Err(Error::Argument("derived latency scale is not positive".into()));
    }

    let mut surrogate = Surrogate::init(space, arch, mix64(cfg.rng_seed))?;
    let mut adam = AdamState::new(surrogate.param_count());
    let adam_hyper = AdamHyper {
        lr: cfg.lr,
        ..AdamHyper::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    let population = firefly::population_size(space.num_params());
    // the miner runs against -f_theta: its "best" particle is the point the
    // surrogate scores highest, which the loss then pushes back down
    let mut miner_ctx: Vec<f64> = apps[0].context.clone();
    let mut swarm = {
        let s = &surrogate;
        let ctx = &miner_ctx;
        let mut obj = |c: &AcceleratorConfig| s.forward(c, ctx).map(|v| -v);
        FireflySwarm::new(space, FireflyHyper::default(), population, mix64(cfg.rng_seed ^ 1), &mut obj)?
    };

    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let trained_apps: Vec<String> = apps.iter().map(|a| a.id.clone()).collect();

    for step in 1..=cfg.total_gradient_steps {
        let app = if contextual {
            &apps[rng.gen_range(0..apps.len())]
        } else {
            &apps[0]
        };
        if contextual {
            miner_ctx = app.context.clone();
        }

        if step > 1 && (step - 1) % cfg.miner_refresh_period == 0 {
            let s = &surrogate;
            let ctx = &miner_ctx;
            let mut obj = |c: &AcceleratorConfig| s.forward(c, ctx).map(|v| -v);
            swarm.reinitialize(&mut obj)?;
        }
        let negative = {
            let s = &surrogate;
            let ctx = &miner_ctx;
            let mut obj = |c: &AcceleratorConfig| s.forward(c, ctx).map(|v| -v);
            swarm.refresh_fitness(&mut obj)?;
            for _ in 0..cfg.miner_inner_steps {
                swarm.step(&mut obj)?;
            }
            swarm.population_best().0
        };

        // feasible mini-batch, pooled in the plain case or per-app in the
        // contextual case
        let pool: &[&LabeledDesign] = if contextual {
            &app.feasible
        } else {
            &apps[0].feasible
        };
        let mut fidx: Vec<usize> = (0..cfg.feasible_batch.min(pool.len()))
            .map(|_| rng.gen_range(0..pool.len()))
            .collect();
        let ipool: &[&AcceleratorConfig] = &app.infeasible;
        let iidx: Vec<usize> = (0..cfg.infeasible_batch.min(ipool.len()))
            .map(|_| rng.gen_range(0..ipool.len()))
            .collect();

        let batch = LossBatch {
            feasible: fidx
                .iter()
                .map(|&i| FeasibleSample {
                    config: pool[i].config.clone(),
                    latency: pool[i].latency_ms / scale,
                    context: app.context.clone(),
                })
                .collect(),
            negatives: vec![UnlabeledSample {
                config: negative,
                context: app.context.clone(),
            }],
            infeasibles: iidx
                .iter()
                .map(|&i| UnlabeledSample {
                    config: ipool[i].clone(),
                    context: app.context.clone(),
                })
                .collect(),
        };

        fidx.extend(iidx.iter());
        let (terms, grad) = surrogate
            .gradient(&batch, cfg.alpha, cfg.beta)
            .map_err(|_| Error::NonFiniteLoss {
                step,
                batch_hash: batch_hash(&fidx),
            })?;
        if !terms.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                batch_hash: batch_hash(&fidx),
            });
        }
        adam.step(&mut surrogate.params, &grad, &adam_hyper)?;

        let mut row = LogRow {
            step,
            train_loss: terms.total,
            mse_term: terms.mse,
            negative_term: terms.negative_mean,
            infeasible_term: terms.infeasible_mean,
            validation_tau: None,
        };
        if step % cfg.checkpoint_interval == 0 {
            let (tau, per_app) = validation_taus(&surrogate, &apps)?;
            row.validation_tau = Some(tau);
            checkpoints.push(Checkpoint {
                surrogate: surrogate.clone(),
                gradient_step: step,
                validation_tau: tau,
                per_app_tau: per_app,
                alpha: cfg.alpha,
                beta: cfg.beta,
                latency_scale: scale,
                trained_apps: trained_apps.clone(),
            });
        }
        log.push(row);
    }

    Ok(TrainReport { checkpoints, log })
}

// ---- checkpoint files ----

const CKPT_MAGIC: &[u8; 4] = b"ACKP";
const CKPT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.gradient_step.to_le_bytes());
        out.extend_from_slice(&self.validation_tau.to_le_bytes());
        out.extend_from_slice(&self.alpha.to_le_bytes());
        out.extend_from_slice(&self.beta.to_le_bytes());
        out.extend_from_slice(&self.latency_scale.to_le_bytes());
        let write_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(&(self.trained_apps.len() as u32).to_le_bytes());
        for id in &self.trained_apps {
            write_str(&mut out, id);
            let tau = self.per_app_tau.get(id).copied().unwrap_or(f64::NAN);
            out.extend_from_slice(&tau.to_le_bytes());
        }
        out.extend_from_slice(&self.surrogate.to_bytes());
        write_atomic(path, &out)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::CheckpointMismatch("truncated checkpoint".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != CKPT_MAGIC {
            return Err(Error::CheckpointMismatch("bad checkpoint magic".into()));
        }
        let r32 = |pos: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
        };
        let r64 = |pos: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        let rf = |pos: &mut usize| -> Result<f64> {
            Ok(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()))
        };
        if r32(&mut pos)? != CKPT_VERSION {
            return Err(Error::CheckpointMismatch("unsupported checkpoint version".into()));
        }
        let gradient_step = r64(&mut pos)?;
        let validation_tau = rf(&mut pos)?;
        let alpha = rf(&mut pos)?;
        let beta = rf(&mut pos)?;
        let latency_scale = rf(&mut pos)?;
        let n_apps = r32(&mut pos)? as usize;
        let mut trained_apps = Vec::with_capacity(n_apps);
        let mut per_app_tau = BTreeMap::new();
        for _ in 0..n_apps {
            let len = r32(&mut pos)? as usize;
            let id = String::from_utf8(take(&mut pos, len)?.to_vec())
                .map_err(|_| Error::CheckpointMismatch("bad app id encoding".into()))?;
            let tau = rf(&mut pos)?;
            if tau.is_finite() {
                per_app_tau.insert(id.clone(), tau);
            }
            trained_apps.push(id);
        }
        let (surrogate, used) = Surrogate::from_bytes(&bytes[pos..])?;
        if pos + used != bytes.len() {
            return Err(Error::CheckpointMismatch("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint {
            surrogate,
            gradient_step,
            validation_tau,
            per_app_tau,
            alpha,
            beta,
            latency_scale,
            trained_apps,
        })
    }
}
