//! Fine-tuning with class-weighted cross-entropy and AdamW.
//!
//! The ensemble trains in two phases: each view's encoder first learns with
//! its own throwaway head, then everything except the top
//! `unfreeze_top_k` layers of both encoders is frozen and a joint head is
//! trained on top.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{build_input, Model, ModelInput, ModelVariant};
use crate::context::ContextBundle;
use crate::corpus::{Corpus, QaInstance};
use crate::encoder::{EncoderConfig, TokenizerConfig};
use crate::error::{Error, Result};
use crate::eval::precision_at_1;
use crate::nn::{Grads, ParamSet, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of optimizer steps spent in linear warmup.
    pub warmup_frac: f64,
    pub seed: u64,
    pub unfreeze_top_k: usize,
    /// Upper bound on the positive-class weight `negatives / positives`.
    pub class_weight_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            warmup_frac: 0.1,
            seed: 0,
            unfreeze_top_k: 3,
            class_weight_cap: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, encoder: &EncoderConfig, variant: ModelVariant) -> Result<()> {
        let bad = |field, message: String| Err(Error::Config { field, message });
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.learning_rate));
        }
        if variant == ModelVariant::ContextEnsemble && self.unfreeze_top_k > encoder.layers {
            return bad(
                "unfreeze_top_k",
                format!("{} exceeds {} encoder layers", self.unfreeze_top_k, encoder.layers),
            );
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return bad("warmup_frac", "must be in [0, 1)".into());
        }
        Ok(())
    }
}

/// A training or dev example: the instance (for labels and grouping) and
/// its packed input.
#[derive(Debug, Clone)]
pub struct Example {
    pub instance: QaInstance,
    pub input: ModelInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_p_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub variant: ModelVariant,
    pub positive_weight: f64,
    /// Weighted training loss before the first update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_dev_p_at_1(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.dev_p_at_1)
    }
}

struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|(_, m)| vec![0.0; m.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64, wd: f64, trainable: &[bool]) {
        self.step += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.step);
        let bc2 = 1.0 - Self::BETA2.powi(self.step);
        for id in params.ids().collect::<Vec<_>>() {
            if !trainable[id.0] {
                continue;
            }
            let g = grads.dense(id);
            let value = params.get_mut(id);
            // Decay matrices only; biases, gains and single rows are exempt.
            let decay = if value.rows > 1 && value.cols > 1 { wd } else { 0.0 };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for i in 0..g.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                value.data[i] -= lr * (mh / (vh.sqrt() + Self::EPS) + decay * value.data[i]);
            }
        }
    }
}

fn class_weight(examples: &[Example], cap: f64) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("training set is empty"));
    }
    let pos = examples.iter().filter(|e| e.instance.label == 1).count();
    let neg = examples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((neg as f64 / pos as f64).min(cap))
}

fn weight_of(label: u8, positive_weight: f64) -> f64 {
    if label == 1 {
        positive_weight
    } else {
        1.0
    }
}

/// Weighted mean cross-entropy over `examples` (no updates).
pub fn mean_loss(model: &Model, examples: &[Example], positive_weight: f64) -> Result<f64> {
    let mut total = 0.0;
    let mut weights = 0.0;
    for ex in examples {
        let w = weight_of(ex.instance.label, positive_weight);
        let mut t = Tape::new(model.params());
        let logits = model.logits(&mut t, &ex.input)?;
        let loss = t.cross_entropy(logits, usize::from(ex.instance.label), w);
        total += t.value(loss).data[0];
        weights += w;
    }
    Ok(total / weights)
}

/// P@1 of `model` over `dev`; `None` if no dev question is answerable.
pub fn dev_precision(model: &Model, dev: &[Example]) -> Result<Option<f64>> {
    if dev.is_empty() {
        return Ok(None);
    }
    let instances: Vec<QaInstance> = dev.iter().map(|e| e.instance.clone()).collect();
    let inputs: Vec<ModelInput> = dev.iter().map(|e| e.input.clone()).collect();
    let lists = super::rank_all(model, &instances, &inputs)?;
    match precision_at_1(&lists) {
        Ok(p) => Ok(Some(p)),
        Err(Error::NoAnswerable) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs `cfg.epochs` epochs of mini-batch AdamW over the trainable tensors.
fn fit(
    model: &mut Model,
    train_set: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
    trainable: &[bool],
    phase: &str,
    phase_seed: u64,
) -> Result<Vec<EpochLog>> {
    let positive_weight = class_weight(train_set, cfg.class_weight_cap)?;
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let warmup = (cfg.warmup_frac * total_steps).round().max(1.0);
    let mut opt = AdamW::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(phase_seed << 32)
                .wrapping_add(epoch as u64),
        );
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Grads::for_params(model.params());
            let mut batch_loss = 0.0;
            let mut batch_weight = 0.0;
            for &i in batch {
                let ex = &train_set[i];
                let w = weight_of(ex.instance.label, positive_weight);
                let mut t = Tape::new(model.params());
                let logits = model.logits(&mut t, &ex.input)?;
                let loss = t.cross_entropy(logits, usize::from(ex.instance.label), w);
                batch_loss += t.value(loss).data[0];
                batch_weight += w;
                t.backward(loss, &mut grads);
            }
            if !batch_loss.is_finite() || grads.has_non_finite() {
                return Err(Error::Diverged { epoch });
            }
            grads.scale(1.0 / batch_weight);
            let s = step as f64;
            let lr = if s < warmup {
                cfg.learning_rate * (s + 1.0) / warmup
            } else {
                cfg.learning_rate * ((total_steps - s) / (total_steps - warmup).max(1.0)).max(0.0)
            };
            opt.update(model.params_mut(), &grads, lr, cfg.weight_decay, trainable);
            step += 1;
            epoch_loss += batch_loss;
            epoch_weight += batch_weight;
        }
        let train_loss = epoch_loss / epoch_weight;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        logs.push(EpochLog {
            phase: phase.to_string(),
            epoch,
            train_loss,
            dev_p_at_1: dev_precision(model, dev)?,
        });
    }
    Ok(logs)
}

fn view(examples: &[Example], pick_local: bool) -> Result<Vec<Example>> {
    examples
        .iter()
        .map(|e| match &e.input {
            ModelInput::Pair { local, global } => Ok(Example {
                instance: e.instance.clone(),
                input: ModelInput::Single(if pick_local { local.clone() } else { global.clone() }),
            }),
            ModelInput::Single(_) => Err(Error::Config {
                field: "variant",
                message: "ensemble training needs paired inputs".into(),
            }),
        })
        .collect()
}

/// Phase 1: trains the local-view and global-view encoders independently,
/// each with its own classification head.
pub fn ensemble_phase_one(
    encoder_cfg: EncoderConfig,
    tokenizer: TokenizerConfig,
    train_set: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
) -> Result<(Model, Model, Vec<EpochLog>)> {
    let mut logs = Vec::new();
    let mut local = Model::new(
        ModelVariant::LocalOnly,
        encoder_cfg,
        tokenizer,
        cfg.seed.wrapping_add(1),
    )?;
    let all = vec![true; local.params().len()];
    logs.extend(fit(
        &mut local,
        &view(train_set, true)?,
        &view(dev, true)?,
        cfg,
        &all,
        "local_view",
        1,
    )?);
    let mut global = Model::new(
        ModelVariant::GlobalOnly,
        encoder_cfg,
        tokenizer,
        cfg.seed.wrapping_add(2),
    )?;
    logs.extend(fit(
        &mut global,
        &view(train_set, false)?,
        &view(dev, false)?,
        cfg,
        &all,
        "global_view",
        2,
    )?);
    Ok((local, global, logs))
}

/// Phase 2: copies both trained encoders into an ensemble (their phase-1
/// heads are dropped), freezes all but the top `unfreeze_top_k` layers and
/// trains the joint head.
pub fn ensemble_phase_two(
    local: &Model,
    global: &Model,
    train_set: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochLog>)> {
    let enc_cfg = *local.encoder_config();
    let mut model = Model::new(ModelVariant::ContextEnsemble, enc_cfg, *local.tokenizer(), cfg.seed)?;
    for (src, dst_prefix) in [(local, "enc0."), (global, "enc1.")] {
        for (name, value) in src.params().iter() {
            if let Some(rest) = name.strip_prefix("enc0.") {
                let id = model
                    .params()
                    .id(&format!("{dst_prefix}{rest}"))
                    .expect("ensemble encoders mirror the single-encoder layout");
                *model.params_mut().get_mut(id) = value.clone();
            }
        }
    }
    let first_open = enc_cfg.layers - cfg.unfreeze_top_k;
    let trainable: Vec<bool> = model
        .params()
        .iter()
        .map(|(name, _)| {
            if name.starts_with("head.") {
                return true;
            }
            let rest = name.split_once('.').map(|x| x.1).unwrap_or("");
            if rest.starts_with("ln_f.") {
                return cfg.unfreeze_top_k > 0;
            }
            rest.strip_prefix("layer")
                .and_then(|r| r.split('.').next())
                .and_then(|l| l.parse::<usize>().ok())
                .is_some_and(|l| l >= first_open)
        })
        .collect();
    let logs = fit(&mut model, train_set, dev, cfg, &trainable, "joint", 3)?;
    Ok((model, logs))
}

/// Trains a fresh model of `variant` and returns it with its training log.
pub fn train(
    variant: ModelVariant,
    encoder_cfg: EncoderConfig,
    tokenizer: TokenizerConfig,
    train_set: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    cfg.validate(&encoder_cfg, variant)?;
    let positive_weight = class_weight(train_set, cfg.class_weight_cap)?;
    let fresh = Model::new(variant, encoder_cfg, tokenizer, cfg.seed)?;
    let initial_loss = mean_loss(&fresh, train_set, positive_weight)?;
    let (model, epochs) = if variant == ModelVariant::ContextEnsemble {
        let (local, global, mut logs) = ensemble_phase_one(encoder_cfg, tokenizer, train_set, dev, cfg)?;
        let (model, joint) = ensemble_phase_two(&local, &global, train_set, dev, cfg)?;
        logs.extend(joint);
        (model, logs)
    } else {
        let mut model = fresh;
        let all = vec![true; model.params().len()];
        let logs = fit(&mut model, train_set, dev, cfg, &all, "fine_tune", 0)?;
        (model, logs)
    };
    Ok((
        model,
        TrainLog {
            variant,
            positive_weight,
            initial_loss,
            epochs,
        },
    ))
}

/// Packs every instance with its context bundle for `variant`.
pub fn build_examples(
    variant: ModelVariant,
    tokenizer: &TokenizerConfig,
    max_len: usize,
    corpus: &Corpus,
    instances: &[QaInstance],
    bundles: &[ContextBundle],
) -> Result<Vec<Example>> {
    if instances.len() != bundles.len() {
        return Err(Error::DimensionMismatch {
            expected: instances.len(),
            actual: bundles.len(),
        });
    }
    instances
        .iter()
        .zip(bundles)
        .map(|(inst, bundle)| {
            let candidate = corpus.candidate_text(inst)?;
            Ok(Example {
                instance: inst.clone(),
                input: build_input(variant, tokenizer, max_len, &inst.question_text, candidate, bundle)?,
            })
        })
        .collect()
}
