//! The conservative surrogate network: embeddings, self-attention blocks,
//! multiple prediction heads pooled by a learned mixing head, with exact
//! hand-written reverse-mode gradients and an Adam optimizer.

mod net;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::design_space::{AcceleratorConfig, DesignSpace};
use crate::error::{Error, Result};

/// Hyperparameters fixing the network shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateArchitecture {
    pub embed_dim: usize,
    pub attention_layers: usize,
    pub prediction_heads: usize,
    pub head_hidden: usize,
    pub mixing_hidden: Vec<usize>,
    pub clip_bound: f64,
    /// 0 for a non-contextual surrogate.
    pub context_dim: usize,
}

impl Default for SurrogateArchitecture {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            attention_layers: 2,
            prediction_heads: 7,
            head_hidden: 64,
            mixing_hidden: vec![256, 256],
            clip_bound: 10_000.0,
            context_dim: 0,
        }
    }
}

impl SurrogateArchitecture {
    /// A small shape for fast desk-scale experiments.
    pub fn small(context_dim: usize) -> Self {
        Self {
            embed_dim: 16,
            attention_layers: 1,
            prediction_heads: 3,
            head_hidden: 32,
            mixing_hidden: vec![64],
            clip_bound: 10_000.0,
            context_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.prediction_heads == 0 || self.head_hidden == 0 {
            return Err(Error::Config("surrogate dimensions must be >= 1".into()));
        }
        if !(self.clip_bound > 0.0) {
            return Err(Error::Config("clip_bound must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerOffsets {
    pub ln1_gamma: usize,
    pub ln1_beta: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_gamma: usize,
    pub ln2_beta: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadOffsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct MixLayer {
    pub w: usize,
    pub b: usize,
    pub din: usize,
    pub dout: usize,
}

/// Flat-parameter layout for a (design space, architecture) pair.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub k: usize,
    pub e: usize,
    pub l: usize,
    pub m: usize,
    pub head_hidden: usize,
    pub ff_hidden: usize,
    pub flat_dim: usize,
    pub clip_bound: f64,
    pub embed_off: Vec<usize>,
    pub layers: Vec<LayerOffsets>,
    pub heads: Vec<HeadOffsets>,
    pub mix: Vec<MixLayer>,
    pub total: usize,
}

impl Layout {
    fn new(cards: &[usize], arch: &SurrogateArchitecture) -> Self {
        let k = cards.len();
        let e = arch.embed_dim;
        let ff_hidden = 2 * e;
        let flat_dim = k * e + arch.context_dim;
        let mut off = 0usize;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let embed_off: Vec<usize> = cards.iter().map(|&c| take(c * e)).collect();
        let layers: Vec<LayerOffsets> = (0..arch.attention_layers)
            .map(|_| LayerOffsets {
                ln1_gamma: take(e),
                ln1_beta: take(e),
                wq: take(e * e),
                bq: take(e),
                wk: take(e * e),
                bk: take(e),
                wv: take(e * e),
                bv: take(e),
                wo: take(e * e),
                bo: take(e),
                ln2_gamma: take(e),
                ln2_beta: take(e),
                w1: take(e * ff_hidden),
                b1: take(ff_hidden),
                w2: take(ff_hidden * e),
                b2: take(e),
            })
            .collect();
        let heads: Vec<HeadOffsets> = (0..arch.prediction_heads)
            .map(|_| HeadOffsets {
                w1: take(flat_dim * arch.head_hidden),
                b1: take(arch.head_hidden),
                w2: take(arch.head_hidden),
                b2: take(1),
            })
            .collect();
        let mut mix = Vec::new();
        let mut din = flat_dim;
        for &h in arch.mixing_hidden.iter().chain([arch.prediction_heads].iter()) {
            mix.push(MixLayer {
                w: take(din * h),
                b: take(h),
                din,
                dout: h,
            });
            din = h;
        }
        Layout {
            k,
            e,
            l: arch.attention_layers,
            m: arch.prediction_heads,
            head_hidden: arch.head_hidden,
            ff_hidden,
            flat_dim,
            clip_bound: arch.clip_bound,
            embed_off,
            layers,
            heads,
            mix,
            total: off,
        }
    }
}

/// A labeled sample for the regression term.
#[derive(Debug, Clone)]
pub struct FeasibleSample {
    pub config: AcceleratorConfig,
    pub latency: f64,
    pub context: Vec<f64>,
}

/// An unlabeled sample for the negative / infeasible penalty terms.
#[derive(Debug, Clone)]
pub struct UnlabeledSample {
    pub config: AcceleratorConfig,
    pub context: Vec<f64>,
}

/// One training batch for the conservative loss.
#[derive(Debug, Clone, Default)]
pub struct LossBatch {
    pub feasible: Vec<FeasibleSample>,
    pub negatives: Vec<UnlabeledSample>,
    pub infeasibles: Vec<UnlabeledSample>,
}

/// Loss value decomposed into its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub negative_mean: f64,
    pub infeasible_mean: f64,
}

/// The surrogate: architecture, the design-space cardinalities it was built
/// for, and one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    arch: SurrogateArchitecture,
    cards: Vec<usize>,
    pub params: Vec<f64>,
}

impl Surrogate {
    /// Seeded initialization: weights uniform in +-1/sqrt(fan_in), biases
    /// zero, layer-norm gains one. Embedding rows use scale 1/sqrt(E).
    pub fn init(space: &DesignSpace, arch: &SurrogateArchitecture, rng_seed: u64) -> Result<Self> {
        arch.validate()?;
        let cards = space.cardinalities();
        let layout = Layout::new(&cards, arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut fill = |params: &mut [f64], off: usize, n: usize, scale: f64| {
            for v in &mut params[off..off + n] {
                *v = rng.gen_range(-scale..scale);
            }
        };
        let e = layout.e;
        let es = 1.0 / (e as f64).sqrt();
        for (k, &card) in cards.iter().enumerate() {
            fill(&mut params, layout.embed_off[k], card * e, es);
        }
        for lo in &layout.layers {
            for off in [lo.ln1_gamma, lo.ln2_gamma] {
                params[off..off + e].fill(1.0);
            }
            for off in [lo.wq, lo.wk, lo.wv, lo.wo] {
                fill(&mut params, off, e * e, es);
            }
            fill(&mut params, lo.w1, e * layout.ff_hidden, es);
            fill(
                &mut params,
                lo.w2,
                layout.ff_hidden * e,
                1.0 / (layout.ff_hidden as f64).sqrt(),
            );
        }
        let fs = 1.0 / (layout.flat_dim as f64).sqrt();
        for ho in &layout.heads {
            fill(&mut params, ho.w1, layout.flat_dim * layout.head_hidden, fs);
            fill(
                &mut params,
                ho.w2,
                layout.head_hidden,
                1.0 / (layout.head_hidden as f64).sqrt(),
            );
        }
        for ml in &layout.mix {
            fill(&mut params, ml.w, ml.din * ml.dout, 1.0 / (ml.din as f64).sqrt());
        }
        Ok(Self {
            arch: arch.clone(),
            cards,
            params,
        })
    }

    pub fn arch(&self) -> &SurrogateArchitecture {
        &self.arch
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cards
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.cards, &self.arch)
    }

    fn check_input(&self, config: &AcceleratorConfig, context: &[f64]) -> Result<()> {
        if config.indices.len() != self.cards.len() {
            return Err(Error::ConfigLength {
                expected: self.cards.len(),
                got: config.indices.len(),
            });
        }
        for (k, (&idx, &card)) in config.indices.iter().zip(&self.cards).enumerate() {
            if idx >= card {
                return Err(Error::IndexOutOfRange {
                    param: format!("x{}", k + 1),
                    index: idx,
                    cardinality: card,
                });
            }
        }
        if context.len() != self.arch.context_dim {
            return Err(Error::Argument(format!(
                "context has {} entries, surrogate expects {}",
                context.len(),
                self.arch.context_dim
            )));
        }
        Ok(())
    }

    /// Predicted objective value, clipped to +-clip_bound.
    pub fn forward(&self, config: &AcceleratorConfig, context: &[f64]) -> Result<f64> {
        self.check_input(config, context)?;
        let layout = self.layout();
        Ok(net::forward_cached(&layout, &self.params, &config.indices, context).out)
    }

    /// Mixing weights for one input (non-negative, summing to one).
    pub fn mixing_weights(&self, config: &AcceleratorConfig, context: &[f64]) -> Result<Vec<f64>> {
        self.check_input(config, context)?;
        let layout = self.layout();
        Ok(net::forward_cached(&layout, &self.params, &config.indices, context).weights_vec())
    }

    /// The conservative loss: MSE over feasible pairs minus `alpha` times the
    /// mean prediction on mined negatives minus `beta` times the mean
    /// prediction on infeasible points.
    pub fn loss(&self, batch: &LossBatch, alpha: f64, beta: f64) -> Result<LossTerms> {
        let (terms, _) = self.loss_and_maybe_grad(batch, alpha, beta, false)?;
        Ok(terms)
    }

    /// Loss plus the exact gradient with respect to every parameter.
    pub fn gradient(&self, batch: &LossBatch, alpha: f64, beta: f64) -> Result<(LossTerms, Vec<f64>)> {
        let (terms, grad) = self.loss_and_maybe_grad(batch, alpha, beta, true)?;
        Ok((terms, grad.unwrap()))
    }

    fn loss_and_maybe_grad(
        &self,
        batch: &LossBatch,
        alpha: f64,
        beta: f64,
        want_grad: bool,
    ) -> Result<(LossTerms, Option<Vec<f64>>)> {
        if alpha < 0.0 || beta < 0.0 {
            return Err(Error::Argument("alpha and beta must be >= 0".into()));
        }
        let layout = self.layout();

        enum Kind {
            Feasible(f64),
            Negative,
            Infeasible,
        }
        let mut samples: Vec<(&AcceleratorConfig, &[f64], Kind)> = Vec::new();
        for s in &batch.feasible {
            self.check_input(&s.config, &s.context)?;
            samples.push((&s.config, &s.context, Kind::Feasible(s.latency)));
        }
        for s in &batch.negatives {
            self.check_input(&s.config, &s.context)?;
            samples.push((&s.config, &s.context, Kind::Negative));
        }
        for s in &batch.infeasibles {
            self.check_input(&s.config, &s.context)?;
            samples.push((&s.config, &s.context, Kind::Infeasible));
        }
        let nf = batch.feasible.len().max(1) as f64;
        let nn = batch.negatives.len().max(1) as f64;
        let ni = batch.infeasibles.len().max(1) as f64;

        // Fixed-size chunks with an ordered sequential reduce keep the
        // result bit-identical regardless of thread count.
        const CHUNK: usize = 32;
        let process = |chunk: &[(&AcceleratorConfig, &[f64], Kind)]| {
            let mut grad = if want_grad {
                Some(vec![0.0; layout.total])
            } else {
                None
            };
            let (mut sse, mut neg_sum, mut inf_sum) = (0.0, 0.0, 0.0);
            for (config, context, kind) in chunk {
                let cache = net::forward_cached(&layout, &self.params, &config.indices, context);
                let pred = cache.out;
                let upstream = match kind {
                    Kind::Feasible(y) => {
                        sse += (pred - y) * (pred - y);
                        2.0 * (pred - y) / nf
                    }
                    Kind::Negative => {
                        neg_sum += pred;
                        -alpha / nn
                    }
                    Kind::Infeasible => {
                        inf_sum += pred;
                        -beta / ni
                    }
                };
                if let Some(g) = grad.as_deref_mut() {
                    net::backward(&layout, &self.params, &config.indices, &cache, upstream, g);
                }
            }
            (sse, neg_sum, inf_sum, grad)
        };

        let partials: Vec<_> = if samples.len() > 2 * CHUNK {
            use rayon::prelude::*;
            samples.par_chunks(CHUNK).map(process).collect()
        } else {
            samples.chunks(CHUNK).map(process).collect()
        };

        let mut grad = want_grad.then(|| vec![0.0; layout.total]);
        let (mut sse, mut neg_sum, mut inf_sum) = (0.0, 0.0, 0.0);
        for (s, n, i, g) in partials {
            sse += s;
            neg_sum += n;
            inf_sum += i;
            if let (Some(acc), Some(part)) = (grad.as_deref_mut(), g) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }

        let mse = if batch.feasible.is_empty() { 0.0 } else { sse / nf };
        let negative_mean = if batch.negatives.is_empty() { 0.0 } else { neg_sum / nn };
        let infeasible_mean = if batch.infeasibles.is_empty() { 0.0 } else { inf_sum / ni };
        let total = mse - alpha * negative_mean - beta * infeasible_mean;
        if !total.is_finite() {
            return Err(Error::Config("non-finite loss".into()));
        }
        Ok((
            LossTerms {
                total,
                mse,
                negative_mean,
                infeasible_mean,
            },
            grad,
        ))
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], hyper: &AdamHyper) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state {} vs params {} vs grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let b1t = 1.0 - hyper.beta1.powi(self.t as i32);
        let b2t = 1.0 - hyper.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = hyper.beta1 * self.m[i] + (1.0 - hyper.beta1) * grad[i];
            self.v[i] = hyper.beta2 * self.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
        Ok(())
    }
}

// ---- binary serialization of (arch, cards, params) ----

const MAGIC: &[u8; 4] = b"ACSG";
const VERSION: u32 = 1;

impl Surrogate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let w32 = |out: &mut Vec<u8>, v: u32| out.extend_from_slice(&v.to_le_bytes());
        let w64f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
        w32(&mut out, VERSION);
        w32(&mut out, self.arch.embed_dim as u32);
        w32(&mut out, self.arch.attention_layers as u32);
        w32(&mut out, self.arch.prediction_heads as u32);
        w32(&mut out, self.arch.head_hidden as u32);
        w32(&mut out, self.arch.mixing_hidden.len() as u32);
        for &h in &self.arch.mixing_hidden {
            w32(&mut out, h as u32);
        }
        w64f(&mut out, self.arch.clip_bound);
        w32(&mut out, self.arch.context_dim as u32);
        w32(&mut out, self.cards.len() as u32);
        for &c in &self.cards {
            w32(&mut out, c as u32);
        }
        w32(&mut out, self.params.len() as u32);
        for &p in &self.params {
            w64f(&mut out, p);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut pos = 0usize;
        let need = |pos: usize, n: usize| -> Result<()> {
            if pos + n > bytes.len() {
                Err(Error::CheckpointMismatch("truncated surrogate blob".into()))
            } else {
                Ok(())
            }
        };
        let r32 = |pos: &mut usize| -> Result<u32> {
            need(*pos, 4)?;
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        let r64f = |pos: &mut usize| -> Result<f64> {
            need(*pos, 8)?;
            let v = f64::from_le_bytes(bytes[*pos..*pos + 8].try_into().unwrap());
            *pos += 8;
            Ok(v)
        };
        need(pos, 4)?;
        if &bytes[..4] != MAGIC {
            return Err(Error::CheckpointMismatch("bad magic".into()));
        }
        pos += 4;
        if r32(&mut pos)? != VERSION {
            return Err(Error::CheckpointMismatch("unsupported version".into()));
        }
        let embed_dim = r32(&mut pos)? as usize;
        let attention_layers = r32(&mut pos)? as usize;
        let prediction_heads = r32(&mut pos)? as usize;
        let head_hidden = r32(&mut pos)? as usize;
        let n_mix = r32(&mut pos)? as usize;
        let mut mixing_hidden = Vec::with_capacity(n_mix);
        for _ in 0..n_mix {
            mixing_hidden.push(r32(&mut pos)? as usize);
        }
        let clip_bound = r64f(&mut pos)?;
        let context_dim = r32(&mut pos)? as usize;
        let n_cards = r32(&mut pos)? as usize;
        let mut cards = Vec::with_capacity(n_cards);
        for _ in 0..n_cards {
            cards.push(r32(&mut pos)? as usize);
        }
        let arch = SurrogateArchitecture {
            embed_dim,
            attention_layers,
            prediction_heads,
            head_hidden,
            mixing_hidden,
            clip_bound,
            context_dim,
        };
        let layout = Layout::new(&cards, &arch);
        let n_params = r32(&mut pos)? as usize;
        if n_params != layout.total {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} does not match layout {}",
                n_params, layout.total
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            params.push(r64f(&mut pos)?);
        }
        Ok((
            Self {
                arch,
                cards,
                params,
            },
            pos,
        ))
    }

    /// Fails when the checkpoint was built for a different space.
    pub fn check_space(&self, space: &DesignSpace) -> Result<()> {
        if self.cards != space.cardinalities() {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint cardinalities {:?} vs space {:?}",
                self.cards,
                space.cardinalities()
            )));
        }
        Ok(())
    }
}

impl net::Cache {
    pub(crate) fn weights_vec(&self) -> Vec<f64> {
        self.weights_slice().to_vec()
    }
}
