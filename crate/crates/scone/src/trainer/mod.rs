//! Training, contrastive pretraining, evaluation, and attribute search over
//! the attribute-prediction model. All loops are bit-deterministic under a
//! fixed seed.

pub mod checkpoint;
pub mod plots;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::preprocess::{preprocess_instance, ModelInput, PreprocessConfig};
use crate::dataset::{compute_stats, DatasetSplit, DatasetStats};
use crate::embedding::EmbeddingProvider;
use crate::error::{Result, SconeError};
use crate::losses::{
    compute_class_weights, div_loss, rel_loss, rw_bce, supcon_multilabel, LossComponents,
    LossWeights, SupConConfig,
};
use crate::metrics::{evaluate_table, EvalTable, MetricReport};
use crate::model::{
    ModelConfig, ModelMode, OutputGrads, ProjectionHead, SconeModel,
};
use crate::nn::adam::{Adam, AdamConfig};
use crate::nn::{ParamVisit, Params};
use crate::sampling::{
    class_aware_sample, class_balanced_weights, compute_repeat_factors, inverse_frequency_weights,
};
use crate::taxonomy::{AttributeVocabulary, RelationGraph, POS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    None,
    Rfs,
    Cas,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReweightKind {
    None,
    RwBce,
    If,
    Cb,
}

/// Full run configuration; every field has a default and the whole struct is
/// echoed into checkpoints and reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Backbone parameter group learning rate.
    pub lr_backbone: f64,
    /// Learning rate for everything else.
    pub lr_rest: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub sampler: SamplerKind,
    pub rfs_threshold: f64,
    pub reweighting: ReweightKind,
    pub alpha: f64,
    pub cb_beta: f64,
    pub missing_weight: f64,
    pub lambda_rel: f64,
    pub lambda_div: f64,
    pub lambda_sup: f64,
    pub supcon_temperature: f64,
    pub supcon_epochs: usize,
    pub supcon_batch: usize,
    pub supcon_embed_dim: usize,
    pub supcon_head_hidden: usize,
    pub joint_supcon: bool,
    pub expand_negatives: bool,
    /// Softmax cross-entropy variant over one sampled positive per instance.
    pub ce_loss: bool,
    pub augment: bool,
    pub eval_k: usize,
    pub ma_threshold: f64,
    pub head_min: u64,
    pub tail_max: u64,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 12,
            batch_size: 64,
            lr_backbone: 1e-5,
            lr_rest: 7e-4,
            weight_decay: 1e-5,
            plateau_factor: 0.1,
            plateau_patience: 2,
            sampler: SamplerKind::None,
            rfs_threshold: 0.0006,
            reweighting: ReweightKind::None,
            alpha: 0.1,
            cb_beta: 0.999,
            missing_weight: 0.05,
            lambda_rel: 0.25,
            lambda_div: 0.004,
            lambda_sup: 0.5,
            supcon_temperature: 0.25,
            supcon_epochs: 10,
            supcon_batch: 384,
            supcon_embed_dim: 128,
            supcon_head_hidden: 2048,
            joint_supcon: false,
            expand_negatives: false,
            ce_loss: false,
            augment: true,
            eval_k: 15,
            ma_threshold: 0.5,
            head_min: 500,
            tail_max: 50,
            model: ModelConfig {
                backbone: crate::model::backbone::BackboneConfig::resnet50_geometry(),
                num_classes: 620,
                embed_dim: 100,
                gate_hidden: 512,
                num_heads: 3,
                proj_dim: 128,
                mode: ModelMode::StrongBaseline,
            },
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl RunConfig {
    /// Desk-scale defaults: toy backbone, 32x32 inputs, small batches.
    pub fn default_toy(num_classes: usize) -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            supcon_batch: 16,
            supcon_embed_dim: 16,
            supcon_head_hidden: 32,
            supcon_epochs: 2,
            model: ModelConfig::toy(num_classes),
            preprocess: PreprocessConfig { input_size: 32, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 || self.supcon_batch == 0 {
            return Err(SconeError::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.rfs_threshold > 0.0 && self.rfs_threshold <= 1.0) {
            return Err(SconeError::InvalidConfig("rfs_threshold must be in (0, 1]".into()));
        }
        if self.supcon_temperature <= 0.0 {
            return Err(SconeError::InvalidConfig("supcon_temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of the loss decomposition and validation score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub bce: f64,
    pub rel: f64,
    pub div: f64,
    pub sup: f64,
    pub total: f64,
    pub val_map: f64,
    pub lr_scale: f64,
    pub zero_pair_batches: usize,
}

pub fn write_jsonl(log: &[EpochLog], path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: SconeModel,
    /// Checkpoint of the best-validation-mAP model.
    pub best: checkpoint::Checkpoint,
    pub best_val_map: f64,
    pub log: Vec<EpochLog>,
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}

/// Per-class contrastive probe matrices as a trainable parameter block.
struct SupConParams {
    a: Vec<Array2<f64>>,
    grad: Vec<Array2<f64>>,
}

impl SupConParams {
    fn identity(num_classes: usize, dim: usize) -> Self {
        Self {
            a: (0..num_classes).map(|_| Array2::eye(dim)).collect(),
            grad: (0..num_classes).map(|_| Array2::zeros((dim, dim))).collect(),
        }
    }

    fn config(&self, temperature: f64) -> SupConConfig {
        SupConConfig { a_matrices: self.a.clone(), temperature }
    }
}

impl Params for SupConParams {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        for (c, (a, g)) in self.a.iter_mut().zip(self.grad.iter_mut()).enumerate() {
            f(ParamVisit {
                name: format!("{prefix}supcon.a{c:04}"),
                value: a.view_mut().into_dyn(),
                grad: g.view_mut().into_dyn(),
            });
        }
    }
}

/// Everything the optimizer updates in one run.
struct FullState {
    model: SconeModel,
    head: Option<ProjectionHead>,
    supcon: Option<SupConParams>,
}

impl Params for FullState {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(ParamVisit<'_>)) {
        self.model.visit(prefix, f);
        if let Some(head) = &mut self.head {
            head.visit(prefix, f);
        }
        if let Some(supcon) = &mut self.supcon {
            supcon.visit(prefix, f);
        }
    }
}

fn check_vocab(config: &RunConfig, split: &DatasetSplit, vocab: &AttributeVocabulary) -> Result<()> {
    if split.num_classes != vocab.len() || config.model.num_classes != vocab.len() {
        return Err(SconeError::VocabMismatch(format!(
            "classes: split {}, vocab {}, model {}",
            split.num_classes,
            vocab.len(),
            config.model.num_classes
        )));
    }
    Ok(())
}

fn loss_weights_for(config: &RunConfig, stats: &DatasetStats) -> LossWeights {
    match config.reweighting {
        ReweightKind::None => LossWeights::uniform(stats.n_pos.len(), config.missing_weight),
        ReweightKind::RwBce => compute_class_weights(stats, config.alpha, config.missing_weight),
        ReweightKind::If => {
            let mut weights = LossWeights::uniform(stats.n_pos.len(), config.missing_weight);
            weights.w = inverse_frequency_weights(stats, config.alpha);
            weights.alpha = config.alpha;
            weights
        }
        ReweightKind::Cb => {
            let mut weights = LossWeights::uniform(stats.n_pos.len(), config.missing_weight);
            weights.w = class_balanced_weights(stats, config.cb_beta);
            weights
        }
    }
}

fn epoch_indices(
    config: &RunConfig,
    split: &DatasetSplit,
    stats: &DatasetStats,
    epoch: usize,
) -> Vec<usize> {
    let seed = mix_seed(&[config.seed, epoch as u64, 0xA]);
    match config.sampler {
        SamplerKind::None => {
            let mut indices: Vec<usize> = (0..split.records.len()).collect();
            indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            indices
        }
        SamplerKind::Rfs => {
            compute_repeat_factors(stats, split, config.rfs_threshold, seed, false).epoch_indices
        }
        SamplerKind::Cas => class_aware_sample(split, split.records.len(), seed),
    }
}

fn preprocess_for(
    config: &RunConfig,
    vocab: &AttributeVocabulary,
    split: &DatasetSplit,
    record_idx: usize,
    augment: bool,
    seed: u64,
) -> Result<ModelInput> {
    preprocess_instance(&split.records[record_idx], vocab, &config.preprocess, augment, seed)
}

/// Softmax cross-entropy on the logits against one sampled positive class.
/// Returns (loss, grad_logits); instances without positives contribute zero.
fn ce_loss_sampled(
    logits: &Array1<f64>,
    labels: &[i8],
    rng: &mut ChaCha8Rng,
) -> (f64, Array1<f64>) {
    let positives: Vec<usize> =
        labels.iter().enumerate().filter(|(_, &l)| l == POS).map(|(c, _)| c).collect();
    if positives.is_empty() {
        return (0.0, Array1::zeros(logits.len()));
    }
    let target = positives[rng.gen_range(0..positives.len())];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum = exps.sum();
    let loss = -(logits[target] - max - sum.ln());
    let mut grad = exps / sum;
    grad[target] -= 1.0;
    (loss, grad)
}

/// Supervised training with per-epoch validation, plateau learning-rate
/// decay, and best-validation checkpointing.
pub fn train(
    config: &RunConfig,
    split_train: &DatasetSplit,
    split_val: &DatasetSplit,
    vocab: &AttributeVocabulary,
    graph: Option<&RelationGraph>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x11]));
    let model = SconeModel::new(config.model.clone(), &mut rng)?;
    train_with_model(config, model, split_train, split_val, vocab, graph)
}

/// Same as [`train`] but starting from the given (possibly pretrained) model.
pub fn train_with_model(
    config: &RunConfig,
    model: SconeModel,
    split_train: &DatasetSplit,
    split_val: &DatasetSplit,
    vocab: &AttributeVocabulary,
    graph: Option<&RelationGraph>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_vocab(config, split_train, vocab)?;
    check_vocab(config, split_val, vocab)?;

    // negative expansion runs before statistics so weights see expanded counts
    let expanded;
    let split_train = if config.expand_negatives {
        let graph = graph.ok_or_else(|| {
            SconeError::InvalidConfig("expand_negatives requires a relation graph".into())
        })?;
        expanded = crate::taxonomy::expand_dataset(split_train, vocab, graph).0;
        &expanded
    } else {
        split_train
    };
    let stats = compute_stats(split_train)?;
    let weights = loss_weights_for(config, &stats);
    let embedding = EmbeddingProvider::hashed(config.model.embed_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x22]));
    let d = config.model.backbone.high_channels();
    let mut state = FullState {
        model,
        head: config
            .joint_supcon
            .then(|| ProjectionHead::new(d, config.supcon_head_hidden, config.supcon_embed_dim, &mut rng)),
        supcon: config
            .joint_supcon
            .then(|| SupConParams::identity(vocab.len(), config.supcon_embed_dim)),
    };
    let mut adam = Adam::new(AdamConfig { weight_decay: config.weight_decay, ..Default::default() });

    let mut log = Vec::new();
    let mut lr_scale = 1.0f64;
    let mut best_val_map = f64::NEG_INFINITY;
    let mut best = checkpoint::Checkpoint::capture(config, &mut state.model);
    let mut bad_epochs = 0usize;

    for epoch in 0..config.epochs {
        let indices = epoch_indices(config, split_train, &stats, epoch);
        let mut sums = LossComponents::default();
        let mut total_sum = 0.0;
        let mut n_seen = 0usize;
        let mut zero_pair_batches = 0usize;
        let mut ce_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, epoch as u64, 0xCE]));

        for (batch_no, batch) in indices.chunks(config.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut forwards = Vec::with_capacity(batch.len());
            for (pos, &idx) in batch.iter().enumerate() {
                let seed = mix_seed(&[config.seed, epoch as u64, batch_no as u64, pos as u64]);
                let input = preprocess_for(config, vocab, split_train, idx, config.augment, seed)?;
                let phi = embedding.embed_phrase(&input.object_phrase);
                let (output, cache) = state.model.forward(&input.image, &phi)?;
                if output.logits.iter().any(|v| !v.is_finite()) {
                    return Err(SconeError::NonFiniteLoss { epoch, indices: batch.to_vec() });
                }
                forwards.push((input, output, cache));
            }

            state.zero_grads();
            let mut batch_components = LossComponents::default();
            let mut grads_per_instance: Vec<OutputGrads> = Vec::with_capacity(batch.len());
            for (input, output, _) in &forwards {
                let mut grads = OutputGrads::default();
                let (cls_loss, d_logits) = if config.ce_loss {
                    ce_loss_sampled(&output.logits, &input.labels, &mut ce_rng)
                } else {
                    let (loss, d_scores) = rw_bce(&output.scores, &input.labels, &weights);
                    let d_logits = Array1::from_shape_fn(d_scores.len(), |c| {
                        d_scores[c] * output.scores[c] * (1.0 - output.scores[c])
                    });
                    (loss, d_logits)
                };
                batch_components.bce += cls_loss;
                grads.logits = Some(d_logits * scale);

                if let (Some(g), Some(mask)) = (&output.g, &input.mask) {
                    let (loss, d_g) = rel_loss(g, mask, config.lambda_rel);
                    batch_components.rel += loss;
                    grads.g = Some(d_g * scale);
                }
                if output.e_maps.len() >= 2 {
                    let (loss, d_e, _) = div_loss(&output.e_maps);
                    batch_components.div += loss;
                    grads.e_maps =
                        d_e.into_iter().map(|g| g * (config.lambda_div * scale)).collect();
                }
                grads_per_instance.push(grads);
            }

            // joint contrastive term over the whole batch
            if let (Some(head), Some(supcon)) = (&mut state.head, &mut state.supcon) {
                let mut embeddings = Vec::with_capacity(batch.len());
                let mut pres = Vec::with_capacity(batch.len());
                let labels: Vec<Vec<i8>> =
                    forwards.iter().map(|(input, _, _)| input.labels.clone()).collect();
                for (_, output, _) in &forwards {
                    let (z, pre) = head.forward(&output.x_pooled);
                    embeddings.push(z);
                    pres.push(pre);
                }
                let cfg = supcon.config(config.supcon_temperature);
                let result = supcon_multilabel(&embeddings, &labels, &cfg)?;
                if result.loss == 0.0 {
                    zero_pair_batches += 1;
                }
                batch_components.sup = result.loss;
                let factor = config.lambda_sup * scale;
                for (c, g) in result.grad_a_matrices.into_iter().enumerate() {
                    supcon.grad[c].scaled_add(factor, &g);
                }
                for (i, d_emb) in result.grad_embeddings.iter().enumerate() {
                    let d_xpool =
                        head.backward(&forwards[i].1.x_pooled, &pres[i], &(d_emb * factor));
                    grads_per_instance[i].x_pooled = Some(d_xpool);
                }
            }

            let batch_total = crate::losses::total_loss(
                &LossComponents {
                    bce: batch_components.bce * scale,
                    rel: batch_components.rel * scale,
                    div: batch_components.div * scale,
                    sup: batch_components.sup,
                },
                config.lambda_div,
                config.lambda_sup,
                config.joint_supcon,
            );
            if !batch_total.is_finite() {
                return Err(SconeError::NonFiniteLoss { epoch, indices: batch.to_vec() });
            }

            for ((_, _, cache), grads) in forwards.iter().zip(grads_per_instance.iter()) {
                state.model.backward(cache, grads);
            }

            let lr_backbone = config.lr_backbone * lr_scale;
            let lr_rest = config.lr_rest * lr_scale;
            adam.step(&mut state, &|name: &str| {
                if name.starts_with("backbone") {
                    lr_backbone
                } else {
                    lr_rest
                }
            });

            sums.bce += batch_components.bce;
            sums.rel += batch_components.rel;
            sums.div += batch_components.div;
            sums.sup += batch_components.sup * batch.len() as f64;
            total_sum += batch_total * batch.len() as f64;
            n_seen += batch.len();
        }

        let n = n_seen.max(1) as f64;
        let val_report = evaluate(&state.model, split_val, vocab, &stats, config)?;
        let entry = EpochLog {
            epoch,
            bce: sums.bce / n,
            rel: sums.rel / n,
            div: sums.div / n,
            sup: sums.sup / n,
            total: total_sum / n,
            val_map: val_report.map,
            lr_scale,
            zero_pair_batches,
        };

        if entry.val_map > best_val_map {
            best_val_map = entry.val_map;
            best = checkpoint::Checkpoint::capture(config, &mut state.model);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.plateau_patience {
                lr_scale *= config.plateau_factor;
                bad_epochs = 0;
            }
        }
        log.push(entry);
    }

    Ok(TrainOutcome { model: state.model, best, best_val_map, log })
}

/// Contrastive pretraining over augmentation pairs. Only the contrastive
/// objective is optimized; the projection head and probe matrices are
/// training-time auxiliaries the caller should discard when saving.
pub fn pretrain_supcon(
    config: &RunConfig,
    split: &DatasetSplit,
    vocab: &AttributeVocabulary,
) -> Result<(SconeModel, Vec<EpochLog>)> {
    config.validate()?;
    check_vocab(config, split, vocab)?;
    let embedding = EmbeddingProvider::hashed(config.model.embed_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, 0x33]));
    let d = config.model.backbone.high_channels();
    let mut state = FullState {
        model: SconeModel::new(config.model.clone(), &mut rng)?,
        head: Some(ProjectionHead::new(
            d,
            config.supcon_head_hidden,
            config.supcon_embed_dim,
            &mut rng,
        )),
        supcon: Some(SupConParams::identity(vocab.len(), config.supcon_embed_dim)),
    };
    let mut adam = Adam::new(AdamConfig { weight_decay: config.weight_decay, ..Default::default() });
    let mut log = Vec::new();

    for epoch in 0..config.supcon_epochs {
        let mut indices: Vec<usize> = (0..split.records.len()).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(&[
            config.seed,
            epoch as u64,
            0xB,
        ])));
        let mut sup_sum = 0.0;
        let mut n_batches = 0usize;
        let mut zero_pair_batches = 0usize;

        for (batch_no, batch) in indices.chunks(config.supcon_batch).enumerate() {
            // two augmented views per instance
            let mut forwards = Vec::with_capacity(batch.len() * 2);
            let mut labels = Vec::with_capacity(batch.len() * 2);
            for (pos, &idx) in batch.iter().enumerate() {
                for view in 0..2u64 {
                    let seed =
                        mix_seed(&[config.seed, epoch as u64, batch_no as u64, pos as u64, view]);
                    let input = preprocess_for(config, vocab, split, idx, true, seed)?;
                    let phi = embedding.embed_phrase(&input.object_phrase);
                    let (output, cache) = state.model.forward(&input.image, &phi)?;
                    if output.x_pooled.iter().any(|v| !v.is_finite()) {
                        return Err(SconeError::NonFiniteLoss { epoch, indices: batch.to_vec() });
                    }
                    labels.push(input.labels.clone());
                    forwards.push((output, cache));
                }
            }

            state.zero_grads();
            let head = state.head.as_mut().unwrap();
            let supcon = state.supcon.as_mut().unwrap();
            let mut embeddings = Vec::with_capacity(forwards.len());
            let mut pres = Vec::with_capacity(forwards.len());
            for (output, _) in &forwards {
                let (z, pre) = head.forward(&output.x_pooled);
                embeddings.push(z);
                pres.push(pre);
            }
            let cfg = supcon.config(config.supcon_temperature);
            let result = supcon_multilabel(&embeddings, &labels, &cfg)?;
            if !result.loss.is_finite() {
                return Err(SconeError::NonFiniteLoss { epoch, indices: batch.to_vec() });
            }
            if result.loss == 0.0 {
                zero_pair_batches += 1;
            }
            sup_sum += result.loss;
            n_batches += 1;

            let scale = 1.0 / forwards.len() as f64;
            for (c, g) in result.grad_a_matrices.into_iter().enumerate() {
                supcon.grad[c].scaled_add(scale, &g);
            }
            for (i, d_emb) in result.grad_embeddings.iter().enumerate() {
                let d_xpool = head.backward(&forwards[i].0.x_pooled, &pres[i], &(d_emb * scale));
                let grads = OutputGrads { x_pooled: Some(d_xpool), ..Default::default() };
                state.model.backward(&forwards[i].1, &grads);
            }

            let lr_backbone = config.lr_backbone;
            let lr_rest = config.lr_rest;
            adam.step(&mut state, &|name: &str| {
                if name.starts_with("backbone") {
                    lr_backbone
                } else {
                    lr_rest
                }
            });
        }

        if zero_pair_batches == n_batches && n_batches > 0 {
            eprintln!("warning: epoch {epoch}: every batch had zero shared-positive pairs");
        }
        log.push(EpochLog {
            epoch,
            bce: 0.0,
            rel: 0.0,
            div: 0.0,
            sup: sup_sum / n_batches.max(1) as f64,
            total: sup_sum / n_batches.max(1) as f64,
            val_map: f64::NAN,
            lr_scale: 1.0,
            zero_pair_batches,
        });
    }

    Ok((state.model, log))
}

/// Deterministic score table over a split (no augmentation).
pub fn predict_table(
    model: &SconeModel,
    split: &DatasetSplit,
    vocab: &AttributeVocabulary,
    preprocess: &PreprocessConfig,
) -> Result<EvalTable> {
    if split.num_classes != model.config.num_classes || vocab.len() != model.config.num_classes {
        return Err(SconeError::VocabMismatch(format!(
            "classes: split {}, vocab {}, model {}",
            split.num_classes,
            vocab.len(),
            model.config.num_classes
        )));
    }
    let embedding = EmbeddingProvider::hashed(model.config.embed_dim);
    let n = split.records.len();
    let c = split.num_classes;
    let mut scores = Array2::zeros((n, c));
    let mut labels = Array2::zeros((n, c));
    let mut ids = Vec::with_capacity(n);
    for (i, record) in split.records.iter().enumerate() {
        let input = preprocess_instance(record, vocab, preprocess, false, 0)?;
        let phi = embedding.embed_phrase(&input.object_phrase);
        let (output, _) = model.forward(&input.image, &phi)?;
        for cls in 0..c {
            scores[[i, cls]] = output.scores[cls];
            labels[[i, cls]] = input.labels[cls];
        }
        ids.push(record.image_id.clone());
    }
    Ok(EvalTable { scores, labels, instance_image_id: ids })
}

/// Full evaluation of a model on a split, grouped by the training statistics.
pub fn evaluate(
    model: &SconeModel,
    split: &DatasetSplit,
    vocab: &AttributeVocabulary,
    train_stats: &DatasetStats,
    config: &RunConfig,
) -> Result<MetricReport> {
    let table = predict_table(model, split, vocab, &config.preprocess)?;
    evaluate_table(
        &table,
        vocab,
        train_stats,
        config.eval_k,
        config.ma_threshold,
        config.head_min,
        config.tail_max,
    )
}

/// Instances ranked by the product of the queried attributes' scores.
/// Returns (row index, image id, combined score), descending.
pub fn search_rank(
    table: &EvalTable,
    vocab: &AttributeVocabulary,
    query: &[String],
    top_n: usize,
) -> Result<Vec<(usize, String, f64)>> {
    let classes: Vec<usize> = query
        .iter()
        .map(|name| {
            vocab
                .lookup(name)
                .ok_or_else(|| SconeError::UnknownAttribute(name.clone()))
        })
        .collect::<Result<_>>()?;
    let mut ranked: Vec<(usize, String, f64)> = (0..table.scores.nrows())
        .map(|row| {
            let score = classes.iter().map(|&c| table.scores[[row, c]]).product();
            (row, table.instance_image_id[row].clone(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{generate_synthetic, SyntheticConfig};
    use crate::losses::total_loss;

    fn toy_setup(n: usize, seed: u64) -> (DatasetSplit, AttributeVocabulary, RunConfig) {
        let synth = SyntheticConfig { n_instances: n, image_size: 16, seed, ..Default::default() };
        let (split, vocab) = generate_synthetic(&synth).unwrap();
        let mut config = RunConfig::default_toy(vocab.len());
        config.epochs = 2;
        config.batch_size = 8;
        config.preprocess.input_size = 16;
        config.eval_k = 5;
        (split, vocab, config)
    }

    fn split_in_two(split: &DatasetSplit) -> (DatasetSplit, DatasetSplit) {
        let mid = split.records.len() / 2;
        (
            DatasetSplit {
                records: split.records[..mid].to_vec(),
                num_classes: split.num_classes,
            },
            DatasetSplit {
                records: split.records[mid..].to_vec(),
                num_classes: split.num_classes,
            },
        )
    }

    #[test]
    fn defaults_match_documented_values() {
        let config = RunConfig::default();
        assert_eq!(config.epochs, 12);
        assert_eq!(config.batch_size, 64);
        assert_eq!(config.lr_backbone, 1e-5);
        assert_eq!(config.lr_rest, 7e-4);
        assert_eq!(config.weight_decay, 1e-5);
        assert_eq!(config.plateau_factor, 0.1);
        assert_eq!(config.plateau_patience, 2);
        assert_eq!(config.rfs_threshold, 0.0006);
        assert_eq!(config.alpha, 0.1);
        assert_eq!(config.cb_beta, 0.999);
        assert_eq!(config.lambda_rel, 0.25);
        assert_eq!(config.lambda_div, 0.004);
        assert_eq!(config.lambda_sup, 0.5);
        assert_eq!(config.supcon_temperature, 0.25);
        assert_eq!(config.supcon_epochs, 10);
        assert_eq!(config.supcon_batch, 384);
        assert_eq!(config.supcon_embed_dim, 128);
        assert_eq!(config.eval_k, 15);
        assert_eq!(config.model.num_heads, 3);
        assert_eq!(config.model.proj_dim, 128);
        assert_eq!(config.preprocess.input_size, 224);
    }

    #[test]
    fn toml_overrides_merge_with_defaults() {
        let config = RunConfig::from_toml_str("epochs = 3\nsampler = \"rfs\"\n").unwrap();
        assert_eq!(config.epochs, 3);
        assert_eq!(config.sampler, SamplerKind::Rfs);
        assert_eq!(config.batch_size, 64);
        // full round trip
        let text = toml::to_string(&config).unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut config = RunConfig::default_toy(4);
        config.rfs_threshold = 0.0;
        assert!(config.validate().is_err());
        let mut config = RunConfig::default_toy(4);
        config.batch_size = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn training_runs_and_logs_decomposition() {
        let (split, vocab, config) = toy_setup(24, 0);
        let (train_split, val_split) = split_in_two(&split);
        let outcome = train(&config, &train_split, &val_split, &vocab, None).unwrap();
        assert_eq!(outcome.log.len(), config.epochs);
        for entry in &outcome.log {
            assert!(entry.total.is_finite());
            assert!(entry.val_map.is_finite());
            let recomputed = total_loss(
                &LossComponents {
                    bce: entry.bce,
                    rel: entry.rel,
                    div: entry.div,
                    sup: entry.sup,
                },
                config.lambda_div,
                config.lambda_sup,
                config.joint_supcon,
            );
            assert!(
                (recomputed - entry.total).abs() < 1e-6,
                "decomposition drift: {recomputed} vs {}",
                entry.total
            );
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (split, vocab, config) = toy_setup(16, 1);
        let (train_split, val_split) = split_in_two(&split);
        let mut a = train(&config, &train_split, &val_split, &vocab, None).unwrap();
        let mut b = train(&config, &train_split, &val_split, &vocab, None).unwrap();
        let ca = checkpoint::Checkpoint::capture(&config, &mut a.model);
        let cb = checkpoint::Checkpoint::capture(&config, &mut b.model);
        assert_eq!(
            serde_json::to_string(&ca).unwrap(),
            serde_json::to_string(&cb).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&a.log).unwrap(),
            serde_json::to_string(&b.log).unwrap()
        );
    }

    #[test]
    fn nan_weight_aborts_with_batch_indices() {
        let (split, vocab, config) = toy_setup(8, 2);
        let (train_split, val_split) = split_in_two(&split);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = SconeModel::new(config.model.clone(), &mut rng).unwrap();
        model.visit("", &mut |mut p| {
            if p.name == "classifier.bias" {
                p.value.fill(f64::NAN);
            }
        });
        let err = train_with_model(&config, model, &train_split, &val_split, &vocab, None)
            .unwrap_err();
        match err {
            SconeError::NonFiniteLoss { epoch, indices } => {
                assert_eq!(epoch, 0);
                assert!(!indices.is_empty());
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let (split, vocab, mut config) = toy_setup(8, 3);
        config.model.num_classes = vocab.len() + 1;
        let (train_split, val_split) = split_in_two(&split);
        assert!(matches!(
            train(&config, &train_split, &val_split, &vocab, None),
            Err(SconeError::VocabMismatch(_))
        ));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let (split, vocab, config) = toy_setup(10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = SconeModel::new(config.model.clone(), &mut rng).unwrap();
        let stats = compute_stats(&split).unwrap();
        let a = evaluate(&model, &split, &vocab, &stats, &config).unwrap();
        let b = evaluate(&model, &split, &vocab, &stats, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.group_map.contains_key("color"));
        assert!(a.group_map.contains_key("shape"));
    }

    #[test]
    fn pretrain_then_finetune_loads_cleanly() {
        let (split, vocab, mut config) = toy_setup(12, 6);
        config.supcon_epochs = 1;
        config.supcon_batch = 6;
        let (pretrained, log) = pretrain_supcon(&config, &split, &vocab).unwrap();
        assert_eq!(log.len(), 1);
        assert!(log[0].sup.is_finite());

        // save without the pretraining-only auxiliaries, restore, finetune
        let mut holder = pretrained;
        let checkpoint = checkpoint::Checkpoint::capture(&config, &mut holder);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut fresh = SconeModel::new(config.model.clone(), &mut rng).unwrap();
        checkpoint.restore(&mut fresh).unwrap();
        config.epochs = 1;
        let (train_split, val_split) = split_in_two(&split);
        train_with_model(&config, fresh, &train_split, &val_split, &vocab, None).unwrap();
    }

    #[test]
    fn joint_supcon_trains() {
        let (split, vocab, mut config) = toy_setup(16, 7);
        config.joint_supcon = true;
        config.epochs = 1;
        let (train_split, val_split) = split_in_two(&split);
        let outcome = train(&config, &train_split, &val_split, &vocab, None).unwrap();
        assert!(outcome.log[0].sup.is_finite());
    }

    #[test]
    fn ce_variant_trains() {
        let (split, vocab, mut config) = toy_setup(12, 8);
        config.ce_loss = true;
        config.model.mode = ModelMode::ResnetBaseline;
        config.epochs = 1;
        let (train_split, val_split) = split_in_two(&split);
        let outcome = train(&config, &train_split, &val_split, &vocab, None).unwrap();
        assert!(outcome.log[0].bce.is_finite());
    }

    #[test]
    fn search_rank_is_score_product() {
        let vocab = AttributeVocabulary::parse("red\tcolor\nround\tshape\n").unwrap();
        let scores =
            Array2::from_shape_vec((2, 2), vec![0.9, 0.5, 0.2, 0.8]).unwrap();
        let labels = Array2::from_shape_vec((2, 2), vec![1i8, 0, 0, 1]).unwrap();
        let table = EvalTable {
            scores,
            labels,
            instance_image_id: vec!["a".into(), "b".into()],
        };
        let ranked =
            search_rank(&table, &vocab, &["red".into(), "round".into()], 10).unwrap();
        assert_eq!(ranked[0].1, "a");
        assert!((ranked[0].2 - 0.45).abs() < 1e-12);
        assert!((ranked[1].2 - 0.16).abs() < 1e-12);
        assert!(matches!(
            search_rank(&table, &vocab, &["blue".into()], 1),
            Err(SconeError::UnknownAttribute(_))
        ));
    }
}
