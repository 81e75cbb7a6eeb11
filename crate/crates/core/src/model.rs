//! The full segmenter: embeddings, BiLSTM encoder and biaffine gap scorer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{to_gap_labels, EmbeddingTable, SegmentedSentence, Vocabulary};
use crate::decode::{segment, Decoder};
use crate::encoder::{encode, EncoderConfig, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::scalar::Scalar;
use crate::scorer::{score_sentence, ScorerParams};
use crate::tagset::{TagSet, TagSetKind};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub tagset: TagSetKind,
    pub encoder: EncoderConfig,
    pub biaffine_dim: usize,
}

impl ModelConfig {
    pub fn for_tagset(tagset: TagSetKind) -> Self {
        ModelConfig {
            tagset,
            encoder: EncoderConfig::for_tagset(tagset),
            biaffine_dim: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.biaffine_dim == 0 {
            return Err(Error::Config("biaffine_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn label_count(&self) -> usize {
        self.tagset.label_count()
    }
}

/// A trainable segmenter over scalar type `T`.
#[derive(Clone, Debug)]
pub struct Segmenter<T: Scalar> {
    config: ModelConfig,
    vocab: Vocabulary,
    params: ParamStore<T>,
    encoder: EncoderParams,
    scorer: ScorerParams,
}

impl<T: Scalar> Segmenter<T> {
    /// Randomly initialised model; all draws come from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::random(&vocab, config.encoder.embedding_dim, &mut rng);
        Self::build(config, vocab, table, &mut rng)
    }

    /// Model with a prepared embedding table, e.g. from pretrained vectors.
    pub fn with_embeddings(
        config: ModelConfig,
        vocab: Vocabulary,
        table: EmbeddingTable<T>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, vocab, table, &mut rng)
    }

    fn build(config: ModelConfig, vocab: Vocabulary, table: EmbeddingTable<T>, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let expected = [vocab.size(), config.encoder.embedding_dim];
        if table.matrix.shape() != expected {
            return Err(Error::shape("embedding table", &expected, table.matrix.shape()));
        }
        let mut params = ParamStore::new();
        let encoder = EncoderParams::register(&mut params, &config.encoder, table, rng);
        let scorer = ScorerParams::register(
            &mut params,
            config.encoder.output_dim(),
            config.biaffine_dim,
            config.label_count(),
            rng,
        );
        Ok(Segmenter {
            config,
            vocab,
            params,
            encoder,
            scorer,
        })
    }

    /// Rebuilds a model from named tensors, checking names and shapes
    /// against the layout implied by `config` and `vocab`.
    pub fn from_tensors(
        config: ModelConfig,
        vocab: Vocabulary,
        tensors: Vec<(String, Tensor<T>, bool)>,
    ) -> Result<Self> {
        let mut model = Self::new(config, vocab, 0)?;
        if tensors.len() != model.params.len() {
            return Err(Error::checkpoint(
                "tensors",
                format!("expected {} tensors, found {}", model.params.len(), tensors.len()),
            ));
        }
        for (param, (name, value, trainable)) in model.params.iter_mut().zip(tensors) {
            if param.name != name {
                return Err(Error::checkpoint(
                    "tensors",
                    format!("expected tensor `{}`, found `{name}`", param.name),
                ));
            }
            if param.value.shape() != value.shape() {
                return Err(Error::checkpoint(
                    &name,
                    format!("shape {:?} does not match expected {:?}", value.shape(), param.value.shape()),
                ));
            }
            param.value = value;
            param.trainable = trainable;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tagset(&self) -> &'static TagSet {
        self.config.tagset.tagset()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn scorer_params(&self) -> &ScorerParams {
        &self.scorer
    }

    /// Freezes or unfreezes the embedding table.
    pub fn set_embeddings_trainable(&mut self, trainable: bool) {
        self.params.get_mut(self.encoder.embedding).trainable = trainable;
    }

    /// Encoder output `[n, 2H]` recorded on `tape`.
    pub fn encode_on(&self, tape: &mut Tape<'_, T>, indices: &[usize], mode: &mut Mode<'_>) -> Result<Var> {
        encode(tape, &self.encoder, &self.config.encoder, indices, mode)
    }

    /// Gap scores `[n-1, L]` from an encoder output.
    pub fn score_on(&self, tape: &mut Tape<'_, T>, encoded: Var, mode: &mut Mode<'_>) -> Result<Var> {
        score_sentence(tape, encoded, &self.scorer, self.config.encoder.dropout, mode)
    }

    /// Gap scores for a raw character sequence, in inference mode.
    pub fn scores(&self, chars: &[char]) -> Result<Tensor<T>> {
        if chars.is_empty() {
            return Ok(Tensor::zeros(vec![0, self.config.label_count()]));
        }
        let indices = self.vocab.encode(chars);
        let mut tape = Tape::new(&self.params);
        let g = self.encode_on(&mut tape, &indices, &mut Mode::Inference)?;
        let s = self.score_on(&mut tape, g, &mut Mode::Inference)?;
        Ok(tape.value(s).clone())
    }

    pub fn segment(&self, chars: &[char], decoder: Decoder) -> Result<SegmentedSentence> {
        let scores = self.scores(chars)?;
        segment(chars, &scores, self.tagset(), decoder)
    }

    /// Segments many sentences, in parallel where available; output order
    /// follows input order. Empty inputs stay empty.
    pub fn segment_batch(&self, sentences: &[Vec<char>], decoder: Decoder) -> Result<Vec<Option<SegmentedSentence>>> {
        decoder.check(self.config.tagset)?;
        sentences
            .par_iter()
            .map(|chars| {
                if chars.is_empty() {
                    Ok(None)
                } else {
                    self.segment(chars, decoder).map(Some)
                }
            })
            .collect()
    }

    /// Mean per-gap cross-entropy of one sentence and its gradient. Returns
    /// `None` for sentences without gaps.
    pub fn loss_and_gradients(
        &self,
        sentence: &SegmentedSentence,
        mode: &mut Mode<'_>,
    ) -> Result<Option<(T, Gradients<T>)>> {
        if sentence.len() < 2 {
            return Ok(None);
        }
        let gold = to_gap_labels(sentence, self.tagset());
        let indices = self.vocab.encode(sentence.chars());
        let mut tape = Tape::new(&self.params);
        let g = self.encode_on(&mut tape, &indices, mode)?;
        let s = self.score_on(&mut tape, g, mode)?;
        let loss = gap_loss(&mut tape, s, &gold)?;
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss)?;
        Ok(Some((value, grads)))
    }

    /// Loss only, in inference mode.
    pub fn loss(&self, sentence: &SegmentedSentence) -> Result<Option<T>> {
        if sentence.len() < 2 {
            return Ok(None);
        }
        let gold = to_gap_labels(sentence, self.tagset());
        let indices = self.vocab.encode(sentence.chars());
        let mut tape = Tape::new(&self.params);
        let g = self.encode_on(&mut tape, &indices, &mut Mode::Inference)?;
        let s = self.score_on(&mut tape, g, &mut Mode::Inference)?;
        let loss = gap_loss(&mut tape, s, &gold)?;
        Ok(Some(tape.value(loss).data()[0]))
    }
}

/// Mean over gaps of the softmax cross-entropy against the gold labels.
pub fn gap_loss<T: Scalar>(tape: &mut Tape<'_, T>, scores: Var, gold: &[usize]) -> Result<Var> {
    let rows = tape.value(scores).shape()[0];
    if rows != gold.len() {
        return Err(Error::Contract(format!(
            "{rows} score rows but {} gold labels",
            gold.len()
        )));
    }
    tape.softmax_xent(scores, gold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: TagSetKind) -> ModelConfig {
        ModelConfig {
            tagset: kind,
            encoder: EncoderConfig {
                embedding_dim: 4,
                hidden_size: 3,
                num_layers: 2,
                dropout: 0.0,
            },
            biaffine_dim: 5,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_chars("abcdefg".chars()).unwrap()
    }

    #[test]
    fn published_defaults() {
        let c = ModelConfig::for_tagset(TagSetKind::BeginEnd);
        assert_eq!(c.encoder.embedding_dim, 300);
        assert_eq!(c.encoder.hidden_size, 300);
        assert_eq!(c.encoder.num_layers, 3);
        assert_eq!(c.biaffine_dim, 300);
        assert_eq!(c.encoder.dropout, 0.39);
    }

    #[test]
    fn score_shapes() {
        for kind in TagSetKind::ALL {
            let m = Segmenter::<f64>::new(tiny(kind), vocab(), 1).unwrap();
            let chars: Vec<char> = "abcde".chars().collect();
            assert_eq!(m.scores(&chars).unwrap().shape(), &[4, kind.label_count()]);
            assert_eq!(m.scores(&chars[..1]).unwrap().shape(), &[0, kind.label_count()]);
        }
    }

    #[test]
    fn gap_loss_rejects_length_mismatch() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let s = tape.constant(Tensor::zeros(vec![3, 2]));
        assert!(matches!(gap_loss(&mut tape, s, &[0, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn from_tensors_round_trip_and_mismatch() {
        let m = Segmenter::<f64>::new(tiny(TagSetKind::Bems), vocab(), 3).unwrap();
        let tensors: Vec<_> = m
            .params()
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone(), p.trainable))
            .collect();
        let back = Segmenter::from_tensors(*m.config(), vocab(), tensors.clone()).unwrap();
        assert_eq!(back.params(), m.params());

        let mut bad = tensors;
        bad[1].1 = Tensor::zeros(vec![1]);
        assert!(matches!(
            Segmenter::from_tensors(*m.config(), vocab(), bad),
            Err(Error::Checkpoint { .. })
        ));
    }
}
