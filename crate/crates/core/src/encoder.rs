//! Character embeddings and the stacked bidirectional LSTM.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tagset::TagSetKind;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    /// Per direction; the combined output is twice this.
    pub hidden_size: usize,
    pub num_layers: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn for_tagset(kind: TagSetKind) -> Self {
        EncoderConfig {
            embedding_dim: 300,
            hidden_size: 300,
            num_layers: 3,
            dropout: default_dropout(kind),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::Config(format!("encoder sizes must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Dropout probability tuned per tag set.
pub fn default_dropout(kind: TagSetKind) -> f64 {
    match kind {
        TagSetKind::Binary => 0.6,
        TagSetKind::BeginEnd => 0.39,
        TagSetKind::Bems => 0.45,
    }
}

/// Forward pass mode. Training draws dropout masks from the given generator.
pub enum Mode<'r> {
    Inference,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Inverted dropout: surviving entries are scaled by `1 / (1 - p)` so
/// inference needs no rescaling.
pub fn dropout<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - p));
    let shape = tape.value(x).shape().to_vec();
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        if rng.gen::<f64>() >= p {
            *m = keep;
        }
    }
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}

/// Gate order inside the stacked weights: input, forget, output, candidate.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[4H, in]`
    pub w_ih: ParamId,
    /// `[4H, H]`
    pub w_hh: ParamId,
    /// `[4H]`, one bias per gate unit.
    pub bias: ParamId,
}

impl LstmWeights {
    fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let r = 1.0 / (hidden as f64).sqrt();
        LstmWeights {
            w_ih: store.insert(format!("{prefix}.w_ih"), Tensor::uniform(vec![4 * hidden, input], r, rng)),
            w_hh: store.insert(format!("{prefix}.w_hh"), Tensor::uniform(vec![4 * hidden, hidden], r, rng)),
            bias: store.insert(format!("{prefix}.bias"), Tensor::uniform(vec![4 * hidden], r, rng)),
        }
    }

    fn hidden<T: Scalar>(&self, store: &ParamStore<T>) -> usize {
        store.value(self.w_hh).shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    /// `[forward, backward]` per layer, bottom first.
    pub layers: Vec<[LstmWeights; 2]>,
}

impl EncoderParams {
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &EncoderConfig,
        embeddings: EmbeddingTable<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let embedding = store.insert_with("embedding", embeddings.matrix, embeddings.trainable);
        let mut layers = Vec::with_capacity(config.num_layers);
        for layer in 0..config.num_layers {
            let input = if layer == 0 {
                config.embedding_dim
            } else {
                config.output_dim()
            };
            let fwd = LstmWeights::register(store, &format!("encoder.l{layer}.fwd"), input, config.hidden_size, rng);
            let bwd = LstmWeights::register(store, &format!("encoder.l{layer}.bwd"), input, config.hidden_size, rng);
            layers.push([fwd, bwd]);
        }
        EncoderParams { embedding, layers }
    }
}

/// Looks up one embedding row per character index.
pub fn embed<T: Scalar>(tape: &mut Tape<'_, T>, table: ParamId, indices: &[usize]) -> Result<Var> {
    let t = tape.param(table);
    tape.gather(t, indices)
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// One recurrence step on a `[1, in]` input. `prev = None` is the zero state.
pub fn lstm_cell<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    prev: Option<LstmState>,
    w: &LstmWeights,
) -> Result<LstmState> {
    let w_ih = tape.param(w.w_ih);
    let bias = tape.param(w.bias);
    let proj = tape.matmul_nt(x, w_ih)?;
    let proj = tape.add(proj, bias)?;
    lstm_step(tape, proj, prev, w)
}

/// Recurrence given the input projection `x W_ihᵀ + b` as a `[1, 4H]` row.
fn lstm_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    proj: Var,
    prev: Option<LstmState>,
    w: &LstmWeights,
) -> Result<LstmState> {
    let hidden = w.hidden(tape.params());
    let z = match prev {
        Some(s) => {
            let w_hh = tape.param(w.w_hh);
            let rec = tape.matmul_nt(s.h, w_hh)?;
            tape.add(proj, rec)?
        }
        None => proj,
    };
    let gate = |tape: &mut Tape<'_, T>, k: usize| tape.slice(z, 1, k * hidden, hidden);
    let i = gate(tape, 0)?;
    let i = tape.sigmoid(i);
    let f = gate(tape, 1)?;
    let f = tape.sigmoid(f);
    let o = gate(tape, 2)?;
    let o = tape.sigmoid(o);
    let g = gate(tape, 3)?;
    let g = tape.tanh(g);
    let ig = tape.mul(i, g)?;
    let c = match prev {
        Some(s) => {
            let fc = tape.mul(f, s.c)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Runs one direction over `[n, in]` inputs and returns `[n, H]` hidden
/// states in sentence order.
fn run_direction<T: Scalar>(tape: &mut Tape<'_, T>, input: Var, w: &LstmWeights, reverse: bool) -> Result<Var> {
    let n = tape.value(input).shape()[0];
    let w_ih = tape.param(w.w_ih);
    let bias = tape.param(w.bias);
    let proj = tape.matmul_nt(input, w_ih)?;
    let proj = tape.add(proj, bias)?;
    let mut outputs = vec![None; n];
    let mut state = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let row = tape.slice(proj, 0, t, 1)?;
        let s = lstm_step(tape, row, state, w)?;
        outputs[t] = Some(s.h);
        state = Some(s);
    }
    let rows: Vec<Var> = outputs.into_iter().map(|h| h.expect("every step ran")).collect();
    tape.concat(&rows, 0)
}

/// Contextual vectors `[n, 2H]` for a sentence of character indices: each
/// row is the forward hidden state followed by the backward one.
pub fn encode<T: Scalar>(
    tape: &mut Tape<'_, T>,
    params: &EncoderParams,
    config: &EncoderConfig,
    indices: &[usize],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    if indices.is_empty() {
        return Err(Error::Contract("cannot encode an empty sentence".into()));
    }
    let mut x = embed(tape, params.embedding, indices)?;
    for [fwd, bwd] in &params.layers {
        x = dropout(tape, x, config.dropout, mode)?;
        let f = run_direction(tape, x, fwd, false)?;
        let b = run_direction(tape, x, bwd, true)?;
        x = tape.concat(&[f, b], 1)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid;
    use rand::SeedableRng;

    fn single_cell(input: usize, hidden: usize, seed: u64) -> (ParamStore<f64>, LstmWeights) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = LstmWeights::register(&mut store, "cell", input, hidden, &mut rng);
        (store, w)
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        let (mut store, w) = single_cell(3, 2, 0);
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(vec![1, 3]));
        let h0 = tape.constant(Tensor::zeros(vec![1, 2]));
        let c0 = tape.constant(Tensor::zeros(vec![1, 2]));
        let s = lstm_cell(&mut tape, x, Some(LstmState { h: h0, c: c0 }), &w).unwrap();
        assert_eq!(tape.value(s.h).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(s.c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn scalar_cell_matches_hand_computation() {
        let (mut store, w) = single_cell(1, 1, 0);
        // gates i, f, o, g
        store.get_mut(w.w_ih).value = Tensor::new(vec![4, 1], vec![0.5, -0.3, 0.8, 1.2]).unwrap();
        store.get_mut(w.w_hh).value = Tensor::new(vec![4, 1], vec![0.1, 0.2, -0.4, 0.7]).unwrap();
        store.get_mut(w.bias).value = Tensor::vector(vec![0.05, 0.4, -0.1, 0.0]);
        let (x, h_prev, c_prev) = (2.0, 0.5, -0.25);

        let i = sigmoid(0.5 * x + 0.1 * h_prev + 0.05);
        let f = sigmoid(-0.3 * x + 0.2 * h_prev + 0.4);
        let o = sigmoid(0.8 * x - 0.4 * h_prev - 0.1);
        let g = f64::tanh(1.2 * x + 0.7 * h_prev);
        let c = f * c_prev + i * g;
        let h = o * c.tanh();

        let mut tape = Tape::new(&store);
        let xv = tape.constant(Tensor::new(vec![1, 1], vec![x]).unwrap());
        let hv = tape.constant(Tensor::new(vec![1, 1], vec![h_prev]).unwrap());
        let cv = tape.constant(Tensor::new(vec![1, 1], vec![c_prev]).unwrap());
        let s = lstm_cell(&mut tape, xv, Some(LstmState { h: hv, c: cv }), &w).unwrap();
        assert!((tape.value(s.h).data()[0] - h).abs() < 1e-14);
        assert!((tape.value(s.c).data()[0] - c).abs() < 1e-14);
    }

    #[test]
    fn cell_shape_mismatch_is_shape_error() {
        let (store, w) = single_cell(3, 2, 0);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::zeros(vec![1, 4]));
        assert!(matches!(lstm_cell(&mut tape, x, None, &w), Err(Error::Shape { .. })));
    }

    #[test]
    fn dropout_is_identity_at_inference_and_scales_in_training() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::filled(vec![50, 4], 1.0));
        let y = dropout(&mut tape, x, 0.5, &mut Mode::Inference).unwrap();
        assert_eq!(x, y);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = dropout(&mut tape, x, 0.5, &mut Mode::Train(&mut rng)).unwrap();
        let v = tape.value(y).data();
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        let kept = v.iter().filter(|&&e| e == 2.0).count();
        assert!((60..140).contains(&kept), "{kept}");
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::for_tagset(TagSetKind::Bems);
        assert_eq!(c.dropout, 0.45);
        assert!(c.validate().is_ok());
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        c.dropout = 0.0;
        c.num_layers = 0;
        assert!(c.validate().is_err());
    }

    fn small_encoder(layers: usize, seed: u64) -> (ParamStore<f64>, EncoderParams, EncoderConfig) {
        let config = EncoderConfig {
            embedding_dim: 4,
            hidden_size: 3,
            num_layers: layers,
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable {
            matrix: Tensor::uniform(vec![10, 4], 0.5, &mut rng),
            trainable: true,
        };
        let mut store = ParamStore::new();
        let params = EncoderParams::register(&mut store, &config, table, &mut rng);
        (store, params, config)
    }

    fn run(store: &ParamStore<f64>, params: &EncoderParams, config: &EncoderConfig, idx: &[usize]) -> Tensor<f64> {
        let mut tape = Tape::new(store);
        let g = encode(&mut tape, params, config, idx, &mut Mode::Inference).unwrap();
        tape.value(g).clone()
    }

    #[test]
    fn cell_gradient_matches_finite_differences() {
        let (store, w) = single_cell(3, 2, 11);
        let x = Tensor::new(vec![1, 3], vec![0.4, -0.7, 0.2]).unwrap();
        let h0 = Tensor::new(vec![1, 2], vec![0.3, -0.1]).unwrap();
        let c0 = Tensor::new(vec![1, 2], vec![-0.5, 0.6]).unwrap();
        let loss_of = |store: &ParamStore<f64>| {
            let mut tape = Tape::new(store);
            let xv = tape.constant(x.clone());
            let h = tape.constant(h0.clone());
            let c = tape.constant(c0.clone());
            let s = lstm_cell(&mut tape, xv, Some(LstmState { h, c }), &w).unwrap();
            let both = tape.concat(&[s.h, s.c], 1).unwrap();
            let sq = tape.mul(both, both).unwrap();
            let loss = tape.sum(sq);
            (tape.value(loss).data()[0], tape.backward(loss).unwrap())
        };
        let (_, grads) = loss_of(&store);
        let h = 1e-5;
        for (id, p) in store.iter() {
            for k in 0..p.value.len() {
                let mut plus = store.clone();
                plus.get_mut(id).value.data_mut()[k] += h;
                let mut minus = store.clone();
                minus.get_mut(id).value.data_mut()[k] -= h;
                let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * h);
                let analytic = grads.get(id).data()[k];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "{} [{k}]: {analytic} vs {numeric}", p.name);
            }
        }
    }

    #[test]
    fn reversed_input_with_mirrored_weights() {
        let (store, params, config) = small_encoder(1, 5);
        let mut mirrored = store.clone();
        let [fwd, bwd] = params.layers[0];
        for (a, b) in [(fwd.w_ih, bwd.w_ih), (fwd.w_hh, bwd.w_hh), (fwd.bias, bwd.bias)] {
            mirrored.get_mut(a).value = store.value(b).clone();
            mirrored.get_mut(b).value = store.value(a).clone();
        }
        let idx = [1, 4, 2, 7, 3, 9];
        let rev: Vec<usize> = idx.iter().rev().copied().collect();
        let orig = run(&store, &params, &config, &idx);
        let flipped = run(&mirrored, &params, &config, &rev);
        let n = idx.len();
        for i in 0..n {
            let a = &orig.row(i)[3..];
            let b = &flipped.row(n - 1 - i)[..3];
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let (store, params, config) = small_encoder(3, 6);
        assert_eq!(run(&store, &params, &config, &[2]).shape(), &[1, 6]);
        let a = run(&store, &params, &config, &[2, 5, 1, 0]);
        assert_eq!(a.shape(), &[4, 6]);
        assert_eq!(a, run(&store, &params, &config, &[2, 5, 1, 0]));
    }

    #[test]
    fn zero_dropout_train_equals_inference() {
        let (store, params, config) = small_encoder(2, 7);
        let idx = [3, 1, 4, 1, 5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new(&store);
        let g = encode(&mut tape, &params, &config, &idx, &mut Mode::Train(&mut rng)).unwrap();
        assert_eq!(tape.value(g), &run(&store, &params, &config, &idx));
    }

    #[test]
    fn distant_substitution_changes_output() {
        let (store, params, config) = small_encoder(2, 8);
        let idx = [1, 2, 3, 4, 5, 6, 7];
        let base = run(&store, &params, &config, &idx);
        let mut changed = idx;
        changed[6] = 9;
        let other = run(&store, &params, &config, &changed);
        assert_ne!(base.row(2), other.row(2));
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let (store, params, config) = small_encoder(1, 9);
        let mut tape = Tape::new(&store);
        assert!(encode(&mut tape, &params, &config, &[], &mut Mode::Inference).is_err());
    }
}
