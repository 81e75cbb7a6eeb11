//! Minibatch training with Adam and dev-set model selection.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{dev_split, EmbeddingLoadReport, PretrainedVectors, SegmentedSentence, Vocabulary};
use crate::decode::Decoder;
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::eval::{f1, EvalReport};
use crate::model::{ModelConfig, Segmenter};
use crate::optim::{AdamConfig, AdamState};
use crate::params::Gradients;
use crate::scalar::Scalar;
use crate::tagset::TagSetKind;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Decoder used for dev evaluation.
    pub decoder: Decoder,
    /// Whether the embedding table is updated.
    pub train_embeddings: bool,
}

/// Learning rate tuned per tag set.
pub fn default_learning_rate(kind: TagSetKind) -> f64 {
    match kind {
        TagSetKind::Binary => 0.001,
        TagSetKind::BeginEnd => 0.0012,
        TagSetKind::Bems => 0.002,
    }
}

impl TrainConfig {
    pub fn for_tagset(kind: TagSetKind) -> Self {
        TrainConfig {
            learning_rate: default_learning_rate(kind),
            batch_size: DEFAULT_BATCH_SIZE,
            max_epochs: 100,
            patience: DEFAULT_PATIENCE,
            clip_norm: DEFAULT_CLIP_NORM,
            seed: 0,
            decoder: Decoder::default_for(kind),
            train_embeddings: true,
        }
    }

    pub fn validate(&self, kind: TagSetKind) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip norm must be positive, got {}", self.clip_norm)));
        }
        self.decoder.check(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub improved: bool,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} train_loss={:.6} dev_f1={:.6}{}",
            self.epoch,
            self.train_loss,
            self.dev_f1,
            if self.improved { " best" } else { "" }
        )
    }
}

/// Where the selected parameters came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: usize,
    pub dev_f1: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the epoch with the best dev F1.
    pub model: Segmenter<T>,
    pub meta: TrainMeta,
    pub log: Vec<EpochLog>,
    /// Present when pretrained vectors were supplied.
    pub embeddings: Option<EmbeddingLoadReport>,
}

/// Segments `sentences` with `model` and scores against them.
pub fn evaluate<T: Scalar>(
    model: &Segmenter<T>,
    gold: &[SegmentedSentence],
    decoder: Decoder,
) -> Result<(EvalReport, Vec<SegmentedSentence>)> {
    let pred = gold
        .par_iter()
        .map(|s| model.segment(s.chars(), decoder))
        .collect::<Result<Vec<_>>>()?;
    Ok((f1(gold, &pred)?, pred))
}

/// Mean loss and mean gradient over the sentences of one batch. Sentences
/// run on separate tapes, possibly in parallel; the reduction is in batch
/// order so the result does not depend on scheduling.
pub fn batch_gradients<T: Scalar>(
    model: &Segmenter<T>,
    batch: &[&SegmentedSentence],
    dropout_seeds: &[u64],
) -> Result<Option<(T, Gradients<T>)>> {
    let parts = batch
        .par_iter()
        .zip(dropout_seeds)
        .map(|(s, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.loss_and_gradients(s, &mut Mode::Train(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total: Option<(T, Gradients<T>)> = None;
    let mut count = 0usize;
    for (loss, grads) in parts.into_iter().flatten() {
        count += 1;
        match &mut total {
            None => total = Some((loss, grads)),
            Some((l, g)) => {
                *l += loss;
                g.accumulate(&grads)?;
            }
        }
    }
    Ok(total.map(|(l, mut g)| {
        let k = T::one() / T::of(count as f64);
        g.scale(k);
        (l * k, g)
    }))
}

/// Builds a model for `corpus` and trains it. The last tenth of the corpus
/// is held out for model selection and the vocabulary comes from the rest.
/// Pretrained vectors, if given, seed the rows of known characters.
/// `on_epoch` sees each epoch's log line as it is produced.
pub fn train<T: Scalar>(
    corpus: &[SegmentedSentence],
    model_config: ModelConfig,
    config: &TrainConfig,
    embeddings: Option<&PretrainedVectors>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    if corpus.len() < 2 {
        return Err(Error::Training(format!(
            "training needs at least 2 sentences, got {}",
            corpus.len()
        )));
    }
    model_config.validate()?;
    config.validate(model_config.tagset)?;
    let (train_part, dev) = dev_split(corpus);
    let vocab = Vocabulary::build(&train_part);
    let (mut model, report) = match embeddings {
        Some(vectors) => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
            let (table, report) = vectors.apply(&vocab, model_config.encoder.embedding_dim, &mut rng)?;
            (Segmenter::with_embeddings(model_config, vocab, table, config.seed)?, Some(report))
        }
        None => (Segmenter::new(model_config, vocab, config.seed)?, None),
    };
    model.set_embeddings_trainable(config.train_embeddings);
    let mut outcome = train_model(model, &train_part, &dev, config, &mut on_epoch)?;
    outcome.embeddings = report;
    Ok(outcome)
}

/// Trains an existing model on `train_part`, selecting on `dev`.
pub fn train_model<T: Scalar>(
    mut model: Segmenter<T>,
    train_part: &[SegmentedSentence],
    dev: &[SegmentedSentence],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    config.validate(model.config().tagset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), model.params());
    let clip = T::of(config.clip_norm);

    let mut best: Option<(Segmenter<T>, TrainMeta)> = None;
    let mut best_f1 = f64::NEG_INFINITY;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_part.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SegmentedSentence> = chunk.iter().map(|&i| &train_part[i]).collect();
            let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
            let at = |msg: String| Error::Training(format!("epoch {epoch}, batch {}: {msg}", b + 1));
            let Some((loss, mut grads)) = batch_gradients(&model, &batch, &seeds)? else {
                continue;
            };
            if !loss.is_finite() {
                return Err(at(format!("non-finite loss {loss}")));
            }
            grads.clip_global_norm(clip);
            adam.step(model.params_mut(), &grads).map_err(|e| at(e.to_string()))?;
            loss_sum += loss.as_f64();
            batches += 1;
        }
        let train_loss = if batches == 0 { 0.0 } else { loss_sum / batches as f64 };
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(evaluate(&model, dev, config.decoder)?.0.f1)
        };
        let score = dev_f1.unwrap_or(-train_loss);
        let improved = score > best_f1;
        if improved {
            best_f1 = score;
            since_best = 0;
            let meta = TrainMeta {
                epoch,
                dev_f1,
                seed: config.seed,
            };
            best = Some((model.clone(), meta));
        } else {
            since_best += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss,
            dev_f1: dev_f1.unwrap_or(0.0),
            improved,
        };
        log::info!("{entry}");
        on_epoch(&entry);
        log.push(entry);
        if since_best >= config.patience {
            break;
        }
    }
    let (model, meta) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        meta,
        log,
        embeddings: None,
    })
}
