//! Embedding-based KG completion models (ComplEx, RotatE) trained from
//! scratch at desk scale.
//!
//! Entity embeddings are complex vectors stored as interleaved `[re, im]`
//! pairs. ComplEx relations are complex vectors too; RotatE relations are
//! phase vectors in `(-pi, pi]`. Scoring follows the original formulations:
//! ComplEx `Re(<e_h, w_r, conj(e_t)>)`, RotatE `-||e_h o e_r - e_t||` with
//! the L1 norm over per-dimension complex moduli.
//!
//! Training is deliberately single-threaded and fully seeded: the same seed
//! yields bit-identical embedding tables, which the pipelines rely on for
//! replay. ComplEx trains with logistic loss plus N3 regularization;
//! RotatE with margin loss and self-adversarial negative weighting.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ContextGraph, EntityId, RelationId, Split};
use crate::ranked::RankedList;

#[derive(Error, Debug)]
pub enum KgeError {
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("unknown relation: {0}")]
    UnknownRelation(String),
    #[error("train split is empty")]
    EmptyTrainSplit,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint vocabulary hash mismatch: expected {expected}, found {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    ComplEx,
    RotatE,
}

/// Training hyperparameters. The seed fixes all stochasticity:
/// initialization, shuffling and negative sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dimension: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Self-adversarial softmax temperature (RotatE).
    pub adversarial_temperature: f64,
    /// Margin gamma (RotatE).
    pub margin: f64,
    /// N3 regularization weight (ComplEx).
    pub regularization: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dimension: 256,
            negatives: 256,
            learning_rate: 1e-3,
            batch_size: 512,
            epochs: 100,
            adversarial_temperature: 1.0,
            margin: 9.0,
            regularization: 1e-3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    /// Small-graph settings used by toy fixtures and tests.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            dimension: 32,
            negatives: 8,
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 200,
            seed,
            ..Default::default()
        }
    }
}

/// Full entity ranking for a canonical tail-missing query. Head queries are
/// expressed through the reversed relation before reaching this trait.
pub trait EntityRanker {
    fn rank_all_tail(&self, h: &EntityId, r: &RelationId) -> Result<RankedList, KgeError>;
}

/// Fixed lookup-table ranker for scripted runs and tests.
#[derive(Debug, Clone, Default)]
pub struct TableRanker {
    table: HashMap<(EntityId, RelationId), RankedList>,
}

impl TableRanker {
    pub fn insert(&mut self, h: EntityId, r: RelationId, list: RankedList) {
        self.table.insert((h, r), list);
    }
}

impl EntityRanker for TableRanker {
    fn rank_all_tail(&self, h: &EntityId, r: &RelationId) -> Result<RankedList, KgeError> {
        self.table
            .get(&(h.clone(), r.clone()))
            .cloned()
            .ok_or_else(|| KgeError::UnknownRelation(format!("no ranking for ({h}, {r}, ?)")))
    }
}

/// A query over the embedding model.
#[derive(Debug, Clone)]
pub enum RankQuery {
    TailMissing { h: EntityId, r: RelationId },
    HeadMissing { r: RelationId, t: EntityId },
}

/// Embedding tables plus the vocabulary they were trained over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KgeModel {
    kind: ModelKind,
    dim: usize,
    entities: Vec<EntityId>,
    relations: Vec<RelationId>,
    #[serde(skip)]
    ent_index: HashMap<EntityId, usize>,
    #[serde(skip)]
    rel_index: HashMap<RelationId, usize>,
    /// `|E| * 2 * dim` interleaved `[re, im]`.
    ent_emb: Vec<f64>,
    /// ComplEx: `|R| * 2 * dim` interleaved; RotatE: `|R| * dim` phases.
    rel_emb: Vec<f64>,
    vocab_hash: String,
    config: TrainConfig,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    // Numerically stable log(1 + exp(x)).
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ComplEx score `Re(<h, r, conj(t)>)` over interleaved complex slices.
pub fn complex_score(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in (0..h.len()).step_by(2) {
        let (hr, hi) = (h[j], h[j + 1]);
        let (rr, ri) = (r[j], r[j + 1]);
        let (tr, ti) = (t[j], t[j + 1]);
        s += hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr;
    }
    s
}

/// RotatE score `-sum_j |h_j * e^{i theta_j} - t_j|`; 0 is the maximum.
pub fn rotate_score(h: &[f64], theta: &[f64], t: &[f64]) -> f64 {
    -rotate_distance(h, theta, t)
}

fn rotate_distance(h: &[f64], theta: &[f64], t: &[f64]) -> f64 {
    let mut d = 0.0;
    for j in 0..theta.len() {
        let (c, s) = (theta[j].cos(), theta[j].sin());
        let (hr, hi) = (h[2 * j], h[2 * j + 1]);
        let u = hr * c - hi * s - t[2 * j];
        let v = hr * s + hi * c - t[2 * j + 1];
        d += (u * u + v * v).sqrt();
    }
    d
}

/// Per-sample gradients for one positive triple and its negatives.
/// `grads` maps embedding rows back to the caller's tables.
pub struct SampleGrads {
    pub loss: f64,
    pub grad_h: Vec<f64>,
    pub grad_r: Vec<f64>,
    pub grad_t: Vec<f64>,
    pub grad_negs: Vec<Vec<f64>>,
}

/// ComplEx logistic loss with N3 regularization on the positive triple.
/// Negatives share `h` and `r`; their gradient contributions to both are
/// folded into `grad_h` / `grad_r`.
pub fn complex_loss_grads(h: &[f64], r: &[f64], t: &[f64], negs: &[&[f64]], reg: f64) -> SampleGrads {
    let dim2 = h.len();
    let mut grad_h = vec![0.0; dim2];
    let mut grad_r = vec![0.0; dim2];
    let mut grad_t = vec![0.0; dim2];
    let mut grad_negs = vec![vec![0.0; dim2]; negs.len()];

    let accumulate = |coef: f64,
                      t_emb: &[f64],
                      grad_h: &mut [f64],
                      grad_r: &mut [f64],
                      grad_t: &mut [f64]| {
        for j in (0..dim2).step_by(2) {
            let (hr, hi) = (h[j], h[j + 1]);
            let (rr, ri) = (r[j], r[j + 1]);
            let (tr, ti) = (t_emb[j], t_emb[j + 1]);
            grad_h[j] += coef * (rr * tr + ri * ti);
            grad_h[j + 1] += coef * (rr * ti - ri * tr);
            grad_r[j] += coef * (hr * tr + hi * ti);
            grad_r[j + 1] += coef * (hr * ti - hi * tr);
            grad_t[j] += coef * (hr * rr - hi * ri);
            grad_t[j + 1] += coef * (hi * rr + hr * ri);
        }
    };

    let s_pos = complex_score(h, r, t);
    let mut loss = softplus(-s_pos);
    accumulate(-sigmoid(-s_pos), t, &mut grad_h, &mut grad_r, &mut grad_t);

    if !negs.is_empty() {
        let w = 1.0 / negs.len() as f64;
        for (i, neg) in negs.iter().enumerate() {
            let s_neg = complex_score(h, r, neg);
            loss += w * softplus(s_neg);
            // Negatives feed gradient into h, r and the corrupted tail.
            accumulate(w * sigmoid(s_neg), neg, &mut grad_h, &mut grad_r, &mut grad_negs[i]);
        }
    }

    if reg > 0.0 {
        for (emb, grad) in [(h, &mut grad_h), (r, &mut grad_r), (t, &mut grad_t)] {
            for j in (0..dim2).step_by(2) {
                let modulus = (emb[j] * emb[j] + emb[j + 1] * emb[j + 1]).sqrt();
                loss += reg * modulus.powi(3);
                grad[j] += reg * 3.0 * modulus * emb[j];
                grad[j + 1] += reg * 3.0 * modulus * emb[j + 1];
            }
        }
    }

    SampleGrads {
        loss,
        grad_h,
        grad_r,
        grad_t,
        grad_negs,
    }
}

/// Self-adversarial negative weights: a softmax over the negatives' scores
/// scaled by `temperature`. Computed once per sample and then treated as
/// constants — no gradient flows through the softmax.
pub fn adversarial_weights(
    h: &[f64],
    theta: &[f64],
    negs: &[&[f64]],
    temperature: f64,
) -> Vec<f64> {
    if negs.is_empty() {
        return Vec::new();
    }
    let logits: Vec<f64> = negs
        .iter()
        .map(|n| -temperature * rotate_distance(h, theta, n))
        .collect();
    let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max_logit).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// RotatE margin loss; `weights` are the per-negative constants from
/// `adversarial_weights`.
pub fn rotate_loss_grads(
    h: &[f64],
    theta: &[f64],
    t: &[f64],
    negs: &[&[f64]],
    weights: &[f64],
    margin: f64,
) -> SampleGrads {
    let dim = theta.len();
    let dim2 = 2 * dim;
    let mut grad_h = vec![0.0; dim2];
    let mut grad_r = vec![0.0; dim];
    let mut grad_t = vec![0.0; dim2];
    let mut grad_negs = vec![vec![0.0; dim2]; negs.len()];

    // d(distance)/d(params) for one (h, theta, t) triple, scaled by coef.
    let accumulate = |coef: f64,
                      t_emb: &[f64],
                      grad_h: &mut [f64],
                      grad_r: &mut [f64],
                      grad_t: &mut [f64]| {
        for j in 0..dim {
            let (c, s) = (theta[j].cos(), theta[j].sin());
            let (hr, hi) = (h[2 * j], h[2 * j + 1]);
            let u = hr * c - hi * s - t_emb[2 * j];
            let v = hr * s + hi * c - t_emb[2 * j + 1];
            let m = (u * u + v * v).sqrt();
            if m < 1e-12 {
                continue;
            }
            let (du, dv) = (u / m, v / m);
            grad_h[2 * j] += coef * (du * c + dv * s);
            grad_h[2 * j + 1] += coef * (-du * s + dv * c);
            grad_r[j] += coef * (du * (-hr * s - hi * c) + dv * (hr * c - hi * s));
            grad_t[2 * j] += coef * (-du);
            grad_t[2 * j + 1] += coef * (-dv);
        }
    };

    let d_pos = rotate_distance(h, theta, t);
    let mut loss = softplus(d_pos - margin);
    accumulate(sigmoid(d_pos - margin), t, &mut grad_h, &mut grad_r, &mut grad_t);

    debug_assert_eq!(weights.len(), negs.len());
    for (i, neg) in negs.iter().enumerate() {
        let p = weights[i];
        let d_neg = rotate_distance(h, theta, neg);
        loss += p * softplus(margin - d_neg);
        let coef = -p * sigmoid(margin - d_neg);
        accumulate(coef, neg, &mut grad_h, &mut grad_r, &mut grad_negs[i]);
    }

    SampleGrads {
        loss,
        grad_h,
        grad_r,
        grad_t,
        grad_negs,
    }
}

/// Loss curve, one mean-loss entry per epoch.
pub type LossCurve = Vec<f64>;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
        }
    }

    /// Applies a sparse gradient (offset -> grad slice) to `params`.
    /// Rows untouched by the batch keep stale moments (lazy Adam); this
    /// keeps updates deterministic and cheap on large vocabularies.
    fn apply(&mut self, params: &mut [f64], grads: &BTreeMap<usize, Vec<f64>>) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for (&offset, grad) in grads {
            for (k, &g) in grad.iter().enumerate() {
                let idx = offset + k;
                self.m[idx] = Self::BETA1 * self.m[idx] + (1.0 - Self::BETA1) * g;
                self.v[idx] = Self::BETA2 * self.v[idx] + (1.0 - Self::BETA2) * g * g;
                let m_hat = self.m[idx] / bc1;
                let v_hat = self.v[idx] / bc2;
                params[idx] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        }
    }
}

fn wrap_phase(x: f64) -> f64 {
    // into (-pi, pi]
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y <= -std::f64::consts::PI {
        y += two_pi;
    } else if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

impl KgeModel {
    /// Seeded random initialization over the graph vocabulary.
    pub fn init(graph: &ContextGraph, kind: ModelKind, config: TrainConfig) -> Result<Self, KgeError> {
        if graph.split_len(Split::Train) == 0 {
            return Err(KgeError::EmptyTrainSplit);
        }
        let entities: Vec<EntityId> = graph.entities().cloned().collect();
        let relations: Vec<RelationId> = graph.relations().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.dimension;
        let scale = match kind {
            ModelKind::ComplEx => 0.1,
            // RotatE convention: (margin + 2) / dim
            ModelKind::RotatE => (config.margin + 2.0) / d as f64,
        };
        let mut ent_emb = vec![0.0; entities.len() * 2 * d];
        for x in ent_emb.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
        let rel_emb = match kind {
            ModelKind::ComplEx => {
                let mut v = vec![0.0; relations.len() * 2 * d];
                for x in v.iter_mut() {
                    *x = rng.gen_range(-scale..scale);
                }
                v
            }
            ModelKind::RotatE => {
                let mut v = vec![0.0; relations.len() * d];
                for x in v.iter_mut() {
                    *x = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                }
                v
            }
        };
        let mut model = KgeModel {
            kind,
            dim: d,
            entities,
            relations,
            ent_index: HashMap::new(),
            rel_index: HashMap::new(),
            ent_emb,
            rel_emb,
            vocab_hash: graph.vocab_hash(),
            config,
        };
        model.rebuild_lookup();
        Ok(model)
    }

    fn rebuild_lookup(&mut self) {
        self.ent_index = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        self.rel_index = self
            .relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i))
            .collect();
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    fn rel_width(&self) -> usize {
        match self.kind {
            ModelKind::ComplEx => 2 * self.dim,
            ModelKind::RotatE => self.dim,
        }
    }

    fn ent_slice(&self, idx: usize) -> &[f64] {
        &self.ent_emb[idx * 2 * self.dim..(idx + 1) * 2 * self.dim]
    }

    fn rel_slice(&self, idx: usize) -> &[f64] {
        let w = self.rel_width();
        &self.rel_emb[idx * w..(idx + 1) * w]
    }

    fn ent_idx(&self, e: &EntityId) -> Result<usize, KgeError> {
        self.ent_index
            .get(e)
            .copied()
            .ok_or_else(|| KgeError::UnknownEntity(e.to_string()))
    }

    fn rel_idx(&self, r: &RelationId) -> Result<usize, KgeError> {
        self.rel_index
            .get(r)
            .copied()
            .ok_or_else(|| KgeError::UnknownRelation(r.to_string()))
    }

    /// Plausibility of `(h, r, t)`; higher is more plausible.
    pub fn score(&self, h: &EntityId, r: &RelationId, t: &EntityId) -> Result<f64, KgeError> {
        let (hi, ri, ti) = (self.ent_idx(h)?, self.rel_idx(r)?, self.ent_idx(t)?);
        let s = match self.kind {
            ModelKind::ComplEx => {
                complex_score(self.ent_slice(hi), self.rel_slice(ri), self.ent_slice(ti))
            }
            ModelKind::RotatE => {
                rotate_score(self.ent_slice(hi), self.rel_slice(ri), self.ent_slice(ti))
            }
        };
        Ok(s)
    }

    /// Full entity ranking for a query; head queries go through the
    /// reversed relation.
    pub fn rank_all(&self, query: &RankQuery) -> Result<RankedList, KgeError> {
        let (h, r) = match query {
            RankQuery::TailMissing { h, r } => (h.clone(), r.clone()),
            RankQuery::HeadMissing { r, t } => (t.clone(), r.reverse()),
        };
        self.rank_all_tail(&h, &r)
    }

    /// Trains in place; returns the per-epoch loss curve.
    pub fn train(&mut self, graph: &ContextGraph) -> Result<LossCurve, KgeError> {
        // Reversed relations train as ordinary relations: the sample set is
        // every train quad plus its reversed twin, all tail-corrupted.
        let mut samples: Vec<(usize, usize, usize)> = Vec::new();
        for q in graph.split_quads(Split::Train) {
            samples.push((self.ent_idx(&q.h)?, self.rel_idx(&q.r)?, self.ent_idx(&q.t)?));
            samples.push((
                self.ent_idx(&q.t)?,
                self.rel_idx(&q.r.reverse())?,
                self.ent_idx(&q.h)?,
            ));
        }
        if samples.is_empty() {
            return Err(KgeError::EmptyTrainSplit);
        }
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let mut ent_adam = Adam::new(self.ent_emb.len(), cfg.learning_rate);
        let mut rel_adam = Adam::new(self.rel_emb.len(), cfg.learning_rate);
        let ent_width = 2 * self.dim;
        let rel_width = self.rel_width();
        let n_entities = self.entities.len();
        let mut curve = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            samples.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in samples.chunks(cfg.batch_size.max(1)) {
                let mut ent_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                let mut rel_grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
                for &(hi, ri, ti) in batch {
                    let neg_idx: Vec<usize> = (0..cfg.negatives)
                        .map(|_| rng.gen_range(0..n_entities))
                        .collect();
                    let negs: Vec<&[f64]> = neg_idx.iter().map(|&i| self.ent_slice(i)).collect();
                    let grads = match self.kind {
                        ModelKind::ComplEx => complex_loss_grads(
                            self.ent_slice(hi),
                            self.rel_slice(ri),
                            self.ent_slice(ti),
                            &negs,
                            cfg.regularization,
                        ),
                        ModelKind::RotatE => {
                            let weights = adversarial_weights(
                                self.ent_slice(hi),
                                self.rel_slice(ri),
                                &negs,
                                cfg.adversarial_temperature,
                            );
                            rotate_loss_grads(
                                self.ent_slice(hi),
                                self.rel_slice(ri),
                                self.ent_slice(ti),
                                &negs,
                                &weights,
                                cfg.margin,
                            )
                        }
                    };
                    epoch_loss += grads.loss;
                    add_grad(&mut ent_grads, hi * ent_width, &grads.grad_h);
                    add_grad(&mut rel_grads, ri * rel_width, &grads.grad_r);
                    add_grad(&mut ent_grads, ti * ent_width, &grads.grad_t);
                    for (g, &ni) in grads.grad_negs.iter().zip(&neg_idx) {
                        add_grad(&mut ent_grads, ni * ent_width, g);
                    }
                }
                ent_adam.apply(&mut self.ent_emb, &ent_grads);
                rel_adam.apply(&mut self.rel_emb, &rel_grads);
                if self.kind == ModelKind::RotatE {
                    for (&offset, grad) in &rel_grads {
                        for k in 0..grad.len() {
                            self.rel_emb[offset + k] = wrap_phase(self.rel_emb[offset + k]);
                        }
                    }
                }
            }
            let mean_loss = epoch_loss / samples.len() as f64;
            if !mean_loss.is_finite() {
                return Err(KgeError::Diverged { epoch });
            }
            curve.push(mean_loss);
        }
        Ok(curve)
    }

    /// Writes a self-describing JSON checkpoint (header with model kind,
    /// dimension, vocabulary hash and config, then the raw tables).
    pub fn checkpoint_save(&self, path: impl AsRef<Path>) -> Result<(), KgeError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::create(path.as_ref()).map_err(|source| KgeError::Io {
            path: path_str.clone(),
            source,
        })?;
        serde_json::to_writer(BufWriter::new(file), self).map_err(|e| KgeError::CorruptCheckpoint {
            path: path_str,
            message: e.to_string(),
        })
    }

    /// Loads a checkpoint, refusing one whose vocabulary hash does not
    /// match `expected_vocab_hash` when given.
    pub fn checkpoint_load(
        path: impl AsRef<Path>,
        expected_vocab_hash: Option<&str>,
    ) -> Result<KgeModel, KgeError> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(path.as_ref()).map_err(|source| KgeError::Io {
            path: path_str.clone(),
            source,
        })?;
        let mut model: KgeModel =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| KgeError::CorruptCheckpoint {
                path: path_str.clone(),
                message: e.to_string(),
            })?;
        let ent_width = 2 * model.dim;
        let rel_width = match model.kind {
            ModelKind::ComplEx => 2 * model.dim,
            ModelKind::RotatE => model.dim,
        };
        if model.ent_emb.len() != model.entities.len() * ent_width
            || model.rel_emb.len() != model.relations.len() * rel_width
        {
            return Err(KgeError::CorruptCheckpoint {
                path: path_str,
                message: "table sizes disagree with header".into(),
            });
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != model.vocab_hash {
                return Err(KgeError::VocabMismatch {
                    expected: expected.to_string(),
                    found: model.vocab_hash,
                });
            }
        }
        model.rebuild_lookup();
        Ok(model)
    }
}

impl EntityRanker for KgeModel {
    fn rank_all_tail(&self, h: &EntityId, r: &RelationId) -> Result<RankedList, KgeError> {
        let (hi, ri) = (self.ent_idx(h)?, self.rel_idx(r)?);
        let h_emb = self.ent_slice(hi);
        let r_emb = self.rel_slice(ri);
        let scores: Vec<(EntityId, f64)> = self
            .entities
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let s = match self.kind {
                    ModelKind::ComplEx => complex_score(h_emb, r_emb, self.ent_slice(i)),
                    ModelKind::RotatE => rotate_score(h_emb, r_emb, self.ent_slice(i)),
                };
                (e.clone(), s)
            })
            .collect();
        Ok(RankedList::from_scores(scores))
    }
}

fn add_grad(map: &mut BTreeMap<usize, Vec<f64>>, offset: usize, grad: &[f64]) {
    let slot = map.entry(offset).or_insert_with(|| vec![0.0; grad.len()]);
    for (a, b) in slot.iter_mut().zip(grad) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ContextGraph, Split};

    fn e(s: &str) -> EntityId {
        EntityId::new(s).unwrap()
    }

    fn r(s: &str) -> RelationId {
        RelationId::new(s).unwrap()
    }

    /// 12-triple chain-ish toy graph.
    fn toy_graph() -> ContextGraph {
        let mut g = ContextGraph::new();
        let names: Vec<String> = (0..6).map(|i| format!("e{i}")).collect();
        for i in 0..6 {
            g.add_triple(e(&names[i]), r("next"), e(&names[(i + 1) % 6]), Split::Train)
                .unwrap();
            g.add_triple(e(&names[i]), r("skip"), e(&names[(i + 2) % 6]), Split::Train)
                .unwrap();
        }
        g.freeze();
        g
    }

    #[test]
    fn rotate_identity_rotation_scores_zero_max() {
        let h = [0.3, -0.2, 0.5, 0.1];
        let theta = [0.0, 0.0];
        assert_eq!(rotate_score(&h, &theta, &h), 0.0);
        // Any perturbation strictly decreases the score.
        let mut t = h;
        t[0] += 0.05;
        assert!(rotate_score(&h, &theta, &t) < 0.0);
    }

    #[test]
    fn complex_score_matches_hand_arithmetic() {
        // d = 2: h = [1+2i, 0+1i], r = [0.5+0i, 1-1i], t = [1+0i, 2+2i]
        let h = [1.0, 2.0, 0.0, 1.0];
        let r = [0.5, 0.0, 1.0, -1.0];
        let t = [1.0, 0.0, 2.0, 2.0];
        // dim0: Re((1+2i)(0.5)(conj(1))) = Re(0.5 + i) = 0.5
        // dim1: Re((i)(1-i)(2-2i)) = Re((i + 1)(2-2i)) = Re(2-2i+2i+2) = 4
        assert!((complex_score(&h, &r, &t) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn rotate_score_decreases_with_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        // t exactly at h rotated: score 0
        let mut t = vec![0.0; 8];
        for j in 0..4 {
            let (c, s) = (theta[j].cos(), theta[j].sin());
            t[2 * j] = h[2 * j] * c - h[2 * j + 1] * s;
            t[2 * j + 1] = h[2 * j] * s + h[2 * j + 1] * c;
        }
        let base = rotate_score(&h, &theta, &t);
        assert!(base.abs() < 1e-12);
        t[3] += 0.1;
        assert!(rotate_score(&h, &theta, &t) < base);
    }

    #[test]
    fn rotate_global_phase_shift_is_invariant() {
        // Rotating h and t by the same global phase leaves scores unchanged.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let phi: f64 = rng.gen_range(-3.0..3.0);
            let rotate = |v: &[f64]| -> Vec<f64> {
                let (c, s) = (phi.cos(), phi.sin());
                let mut out = vec![0.0; v.len()];
                for j in 0..v.len() / 2 {
                    out[2 * j] = v[2 * j] * c - v[2 * j + 1] * s;
                    out[2 * j + 1] = v[2 * j] * s + v[2 * j + 1] * c;
                }
                out
            };
            let a = rotate_score(&h, &theta, &t);
            let b = rotate_score(&rotate(&h), &theta, &rotate(&t));
            assert!((a - b).abs() < 1e-9, "|{a} - {b}| too large");
        }
    }

    fn finite_diff_check(kind: ModelKind, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8usize;
        let h: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let t: Vec<f64> = (0..2 * d).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let rel: Vec<f64> = match kind {
            ModelKind::ComplEx => (0..2 * d).map(|_| rng.gen_range(-0.8..0.8)).collect(),
            ModelKind::RotatE => (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        };
        let negs_data: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2 * d).map(|_| rng.gen_range(-0.8..0.8)).collect())
            .collect();
        let refs: Vec<&[f64]> = negs_data.iter().map(|n| n.as_slice()).collect();
        // Adversarial weights are constants of the sample: fixed at the
        // unperturbed point for both the analytic and the numeric side.
        let weights = match kind {
            ModelKind::RotatE => adversarial_weights(&h, &rel, &refs, 1.0),
            ModelKind::ComplEx => Vec::new(),
        };
        let loss_of = |h: &[f64], rel: &[f64], t: &[f64], negs: &[Vec<f64>]| -> f64 {
            let refs: Vec<&[f64]> = negs.iter().map(|n| n.as_slice()).collect();
            match kind {
                ModelKind::ComplEx => complex_loss_grads(h, rel, t, &refs, 1e-2).loss,
                ModelKind::RotatE => rotate_loss_grads(h, rel, t, &refs, &weights, 4.0).loss,
            }
        };
        let grads = match kind {
            ModelKind::ComplEx => complex_loss_grads(&h, &rel, &t, &refs, 1e-2),
            ModelKind::RotatE => rotate_loss_grads(&h, &rel, &t, &refs, &weights, 4.0),
        };
        let eps = 1e-6;
        let mut max_rel_err: f64 = 0.0;
        let perturbed = |which: usize, k: usize, delta: f64| -> f64 {
            let mut hp = h.clone();
            let mut rp = rel.clone();
            let mut tp = t.clone();
            let mut np = negs_data.clone();
            match which {
                0 => hp[k] += delta,
                1 => rp[k] += delta,
                2 => tp[k] += delta,
                i => np[i - 3][k] += delta,
            }
            loss_of(&hp, &rp, &tp, &np)
        };
        let mut check = |analytic: &[f64], which: usize| {
            for k in 0..analytic.len() {
                let plus = perturbed(which, k, eps);
                let minus = perturbed(which, k, -eps);
                let numeric = (plus - minus) / (2.0 * eps);
                let denom = analytic[k].abs().max(numeric.abs()).max(1e-3);
                max_rel_err = max_rel_err.max((analytic[k] - numeric).abs() / denom);
            }
        };
        check(&grads.grad_h, 0);
        check(&grads.grad_r, 1);
        check(&grads.grad_t, 2);
        for (i, g) in grads.grad_negs.iter().enumerate() {
            check(g, 3 + i);
        }
        max_rel_err
    }

    #[test]
    fn complex_gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = finite_diff_check(ModelKind::ComplEx, seed);
            assert!(err < 1e-4, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn rotate_gradients_match_finite_differences() {
        for seed in 0..5 {
            let err = finite_diff_check(ModelKind::RotatE, seed);
            assert!(err < 1e-4, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let g = toy_graph();
        let mut cfg = TrainConfig::toy(3);
        cfg.epochs = 50;
        let mut m1 = KgeModel::init(&g, ModelKind::ComplEx, cfg.clone()).unwrap();
        let curve = m1.train(&g).unwrap();
        assert!(curve.last().unwrap() < curve.first().unwrap());
        let mut m2 = KgeModel::init(&g, ModelKind::ComplEx, cfg).unwrap();
        m2.train(&g).unwrap();
        assert_eq!(m1.ent_emb, m2.ent_emb);
        assert_eq!(m1.rel_emb, m2.rel_emb);
    }

    #[test]
    fn rank_all_is_permutation_and_head_query_uses_reverse() {
        let g = toy_graph();
        let mut model = KgeModel::init(&g, ModelKind::RotatE, TrainConfig::toy(5)).unwrap();
        model.train(&g).unwrap();
        let tail = model
            .rank_all(&RankQuery::TailMissing {
                h: e("e0"),
                r: r("next"),
            })
            .unwrap();
        assert_eq!(tail.len(), g.num_entities());
        let mut seen: Vec<&str> = tail.ids().map(|x| x.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), g.num_entities());
        // (?, r, t) equals rank_all on (t, r^-1, ?)
        let head = model
            .rank_all(&RankQuery::HeadMissing {
                r: r("next"),
                t: e("e1"),
            })
            .unwrap();
        let via_reverse = model.rank_all_tail(&e("e1"), &r("next").reverse()).unwrap();
        assert_eq!(head, via_reverse);
    }

    #[test]
    fn rank_all_orders_by_score_then_id() {
        let list = RankedList::from_scores(vec![(e("a"), 3.0), (e("b"), 1.0), (e("c"), 2.0)]);
        let order: Vec<&str> = list.ids().map(|x| x.as_str()).collect();
        assert_eq!(order, ["a", "c", "b"]);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let g = toy_graph();
        let model = KgeModel::init(&g, ModelKind::ComplEx, TrainConfig::toy(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.checkpoint_save(&path).unwrap();
        let loaded = KgeModel::checkpoint_load(&path, Some(&g.vocab_hash())).unwrap();
        assert_eq!(loaded.ent_emb, model.ent_emb);
        assert_eq!(loaded.rel_emb, model.rel_emb);
    }

    #[test]
    fn checkpoint_rejects_vocab_mismatch_and_truncation() {
        let g = toy_graph();
        let model = KgeModel::init(&g, ModelKind::RotatE, TrainConfig::toy(9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.checkpoint_save(&path).unwrap();
        assert!(matches!(
            KgeModel::checkpoint_load(&path, Some("deadbeef")),
            Err(KgeError::VocabMismatch { .. })
        ));
        let bytes = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("truncated.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            KgeModel::checkpoint_load(&truncated, None),
            Err(KgeError::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn unknown_ids_error() {
        let g = toy_graph();
        let model = KgeModel::init(&g, ModelKind::ComplEx, TrainConfig::toy(1)).unwrap();
        assert!(model.score(&e("nope"), &r("next"), &e("e0")).is_err());
        assert!(model.rank_all_tail(&e("e0"), &r("nope")).is_err());
    }

    #[test]
    fn zero_epochs_keeps_seeded_init() {
        let g = toy_graph();
        let mut cfg = TrainConfig::toy(4);
        cfg.epochs = 0;
        let init = KgeModel::init(&g, ModelKind::ComplEx, cfg.clone()).unwrap();
        let mut trained = KgeModel::init(&g, ModelKind::ComplEx, cfg).unwrap();
        let curve = trained.train(&g).unwrap();
        assert!(curve.is_empty());
        assert_eq!(init.ent_emb, trained.ent_emb);
    }
}
