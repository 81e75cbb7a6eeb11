//! Affine heads and the biaffine gap scorer.

use rand_chacha::ChaCha8Rng;

use crate::encoder::{dropout, Mode};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{dot, Tensor};

pub use crate::decode::greedy_labels;

pub const GAP_WEIGHT_INIT_RANGE: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub struct AffineHead {
    /// `[d, in]`
    pub w: ParamId,
    /// `[d]`
    pub b: ParamId,
}

impl AffineHead {
    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let r = 1.0 / (input as f64).sqrt();
        AffineHead {
            w: store.insert(format!("{prefix}.w"), Tensor::uniform(vec![output, input], r, rng)),
            b: store.insert(format!("{prefix}.b"), Tensor::zeros(vec![output])),
        }
    }

    /// `x Wᵀ + b` for every row of `x`.
    pub fn apply<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matmul_nt(x, w)?;
        tape.add(y, b)
    }
}

/// Parameter handles for both heads and the biaffine layer.
#[derive(Clone, Debug)]
pub struct ScorerParams {
    pub front: AffineHead,
    pub rear: AffineHead,
    /// `[L, d, d]`
    pub w_gap: ParamId,
    /// `[L, 2d]`
    pub u_gap: ParamId,
    /// `[L]`
    pub b_gap: ParamId,
}

impl ScorerParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        input: usize,
        biaffine_dim: usize,
        labels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = biaffine_dim;
        let front = AffineHead::register(store, "scorer.front", input, d, rng);
        let rear = AffineHead::register(store, "scorer.rear", input, d, rng);
        let w_gap = store.insert(
            "scorer.w_gap",
            Tensor::uniform(vec![labels, d, d], GAP_WEIGHT_INIT_RANGE, rng),
        );
        let u_range = 1.0 / ((2 * d) as f64).sqrt();
        let u_gap = store.insert("scorer.u_gap", Tensor::uniform(vec![labels, 2 * d], u_range, rng));
        let b_gap = store.insert("scorer.b_gap", Tensor::zeros(vec![labels]));
        ScorerParams {
            front,
            rear,
            w_gap,
            u_gap,
            b_gap,
        }
    }

    pub fn label_count<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.b_gap).len()
    }

    /// Copies of the biaffine tensors, for the reference scoring functions.
    pub fn biaffine_values<T: Scalar>(&self, store: &ParamStore<T>) -> BiaffineParams<T> {
        BiaffineParams {
            w_gap: store.value(self.w_gap).clone(),
            u_gap: store.value(self.u_gap).clone(),
            b_gap: store.value(self.b_gap).clone(),
        }
    }
}

/// Front and rear projections of every encoder row, with dropout on the
/// encoder output before each head.
pub fn affine_heads<T: Scalar>(
    tape: &mut Tape<'_, T>,
    g: Var,
    params: &ScorerParams,
    dropout_p: f64,
    mode: &mut Mode<'_>,
) -> Result<(Var, Var)> {
    let gf = dropout(tape, g, dropout_p, mode)?;
    let front = params.front.apply(tape, gf)?;
    let gr = dropout(tape, g, dropout_p, mode)?;
    let rear = params.rear.apply(tape, gr)?;
    Ok((front, rear))
}

/// Gap scores `[n-1, L]`. Row `i` pairs the front vector of character `i`
/// with the rear vector of character `i + 1`. Sentences shorter than two
/// characters give an empty `[0, L]` matrix.
pub fn score_sentence<T: Scalar>(
    tape: &mut Tape<'_, T>,
    g: Var,
    params: &ScorerParams,
    dropout_p: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let n = tape.value(g).shape()[0];
    let labels = params.label_count(tape.params());
    if n < 2 {
        return Ok(tape.constant(Tensor::zeros(vec![0, labels])));
    }
    let (front, rear) = affine_heads(tape, g, params, dropout_p, mode)?;
    let hf = tape.slice(front, 0, 0, n - 1)?;
    let hr = tape.slice(rear, 0, 1, n - 1)?;
    let w = tape.param(params.w_gap);
    let u = tape.param(params.u_gap);
    let b = tape.param(params.b_gap);
    let bilinear = tape.bilinear(hf, hr, w)?;
    let pair = tape.concat(&[hf, hr], 1)?;
    let linear = tape.matmul_nt(pair, u)?;
    let s = tape.add(bilinear, linear)?;
    tape.add(s, b)
}

/// Plain-tensor copy of the biaffine parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BiaffineParams<T> {
    pub w_gap: Tensor<T>,
    pub u_gap: Tensor<T>,
    pub b_gap: Tensor<T>,
}

impl<T: Scalar> BiaffineParams<T> {
    pub fn label_count(&self) -> usize {
        self.b_gap.len()
    }

    pub fn dim(&self) -> usize {
        self.w_gap.shape().get(1).copied().unwrap_or(0)
    }

    /// Slice `l` of the gap weight tensor as a `[d, d]` matrix.
    pub fn w_slice(&self, l: usize) -> Tensor<T> {
        let d = self.dim();
        let data = self.w_gap.data()[l * d * d..(l + 1) * d * d].to_vec();
        Tensor::new(vec![d, d], data).expect("slice shape matches")
    }
}

/// `h_tᵀ W h_s` for a single `[d, d]` matrix.
pub fn bilinear_score<T: Scalar>(h_t: &[T], h_s: &[T], w: &Tensor<T>) -> Result<T> {
    let (rows, cols) = w.dims2()?;
    if rows != h_t.len() || cols != h_s.len() || w.shape().len() != 2 {
        return Err(Error::shape("bilinear_score", &[h_t.len(), h_s.len()], w.shape()));
    }
    Ok((0..rows).map(|i| h_t[i] * dot(w.row(i), h_s)).sum())
}

/// Score vector for one gap.
pub fn biaffine_score<T: Scalar>(
    h_front: &[T],
    h_rear: &[T],
    params: &BiaffineParams<T>,
    expected_labels: usize,
) -> Result<Vec<T>> {
    let labels = params.label_count();
    if labels != expected_labels {
        return Err(Error::Config(format!(
            "scorer has {labels} labels, tag set has {expected_labels}"
        )));
    }
    let d = params.dim();
    if params.w_gap.shape() != [labels, d, d] || params.u_gap.shape() != [labels, 2 * d] {
        return Err(Error::shape("biaffine_score", params.w_gap.shape(), params.u_gap.shape()));
    }
    if h_front.len() != d || h_rear.len() != d {
        return Err(Error::shape("biaffine_score", &[h_front.len(), h_rear.len()], &[d, d]));
    }
    let pair: Vec<T> = h_front.iter().chain(h_rear).copied().collect();
    (0..labels)
        .map(|l| {
            let bil = bilinear_score(h_front, h_rear, &params.w_slice(l))?;
            Ok(bil + dot(params.u_gap.row(l), &pair) + params.b_gap.data()[l])
        })
        .collect()
}
