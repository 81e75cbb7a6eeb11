//! Chinese word segmentation by classifying the gaps between characters.
//!
//! A sentence is embedded character by character, run through a stacked
//! bidirectional LSTM, and every adjacent pair of characters is scored with
//! a biaffine layer over one of three gap label schemes. Labels are decoded
//! greedily, with beam search or with Viterbi, and turned back into words.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` and `*32` aliases below fix the type.

pub mod bench;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod scorer;
pub mod synth;
pub mod tagset;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use corpus::{SegmentedSentence, Vocabulary};
pub use decode::Decoder;
pub use encoder::EncoderConfig;
pub use error::{Error, Result};
pub use eval::{EvalReport, LengthBuckets};
pub use model::{ModelConfig, Segmenter};
pub use scalar::Scalar;
pub use tagset::{TagSet, TagSetKind};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainMeta, TrainOutcome};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Segmenter64 = Segmenter<f64>;
pub type Segmenter32 = Segmenter<f32>;
pub type Checkpoint64 = Checkpoint<f64>;
pub type Checkpoint32 = Checkpoint<f32>;
