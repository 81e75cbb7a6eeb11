//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every operation appends one node holding its output value, so node order
//! is a topological order and the backward pass is a single reverse sweep.
//! Parameters are read from a borrowed [`ParamStore`] instead of being
//! copied onto the tape.

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    /// Exact-shape add, or a vector added to every row of a matrix.
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, T),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize, len: usize },
    Gather { table: Var, indices: Vec<usize> },
    Sum(Var),
    Bilinear { front: Var, rear: Var, weight: Var },
    SoftmaxXent { scores: Var, gold: Vec<usize>, probs: Tensor<T> },
}

#[derive(Clone, Debug)]
enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Value<T>,
}

/// Record of applied operations for one forward pass.
pub struct Tape<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    /// Drops every recorded operation; parameters stay bound.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Value::Owned(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Constant, value)
    }

    /// Binds a parameter; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Value::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    /// `a · bᵀ`, the layout used by every weight matrix in the model.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatMulNt(a, b), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let out = if x.shape() == y.shape() {
            x.zip_map(y, "add", |p, q| p + q)?
        } else if x.shape().len() == 2 && y.shape() == [x.shape()[1]] {
            let cols = x.shape()[1];
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(cols) {
                for (o, &b) in row.iter_mut().zip(y.data()) {
                    *o += b;
                }
            }
            out
        } else {
            return Err(Error::shape("add", x.shape(), y.shape()));
        };
        Ok(self.push(Op::Add(a, b), out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |p, q| p * q)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, args: &[Var]) -> Result<Var> {
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Error::Contract(format!(
                    "{op:?} takes {n} argument(s), got {}",
                    args.len()
                )))
            }
        };
        match op {
            ElementwiseOp::Add => {
                arity(2)?;
                self.add(args[0], args[1])
            }
            ElementwiseOp::Mul => {
                arity(2)?;
                self.mul(args[0], args[1])
            }
            ElementwiseOp::Tanh => {
                arity(1)?;
                Ok(self.tanh(args[0]))
            }
            ElementwiseOp::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(args[0]))
            }
        }
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(Op::Scale(a, k), out)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let rank = self.value(*first).shape().len();
        if axis >= rank {
            return Err(Error::shape("concat axis", self.value(*first).shape(), &[axis]));
        }
        let base = self.value(*first).shape().to_vec();
        let mut axis_len = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            let same_rest = s.len() == rank
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(Error::shape("concat", &base, s));
            }
            axis_len += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let mut shape = base.clone();
        shape[axis] = axis_len;
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.len() / outer;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            out,
        ))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        let shape = t.shape();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape("slice", shape, &[axis, start, len]));
        }
        let outer: usize = shape[..axis].iter().product();
        let stride: usize = shape[axis + 1..].iter().product();
        let chunk = shape[axis] * stride;
        let mut data = Vec::with_capacity(outer * len * stride);
        for o in 0..outer {
            let base = o * chunk + start * stride;
            data.extend_from_slice(&t.data()[base..base + len * stride]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(
            Op::Slice {
                input,
                axis,
                start,
                len,
            },
            out,
        ))
    }

    /// Row lookup into a `[rows, dim]` table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, dim) = match *t.shape() {
            [r, d] => (r, d),
            _ => return Err(Error::shape("gather", t.shape(), &[])),
        };
        let mut data = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= rows {
                return Err(Error::Contract(format!(
                    "gather index {i} out of range for table with {rows} rows"
                )));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), dim], data)?;
        Ok(self.push(
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    /// Per row `i` and slice `l`: `front_i · weight[l] · rear_iᵀ`.
    ///
    /// `front`, `rear`: `[m, d]`; `weight`: `[L, d, d]`; output `[m, L]`.
    pub fn bilinear(&mut self, front: Var, rear: Var, weight: Var) -> Result<Var> {
        let (f, r, w) = (self.value(front), self.value(rear), self.value(weight));
        let (m, d) = f.dims2()?;
        let (labels, d1, d2) = match *w.shape() {
            [l, a, b] => (l, a, b),
            _ => return Err(Error::shape("bilinear weight", w.shape(), &[])),
        };
        if f.shape() != r.shape() || d1 != d || d2 != d {
            return Err(Error::shape("bilinear", f.shape(), w.shape()));
        }
        let mut out = Vec::with_capacity(m * labels);
        let mut tmp = vec![T::zero(); d];
        for i in 0..m {
            let fi = f.row(i);
            let ri = r.row(i);
            for l in 0..labels {
                let wl = &w.data()[l * d * d..(l + 1) * d * d];
                // tmp = W_l · r_i
                for (j, t) in tmp.iter_mut().enumerate() {
                    *t = dot(&wl[j * d..(j + 1) * d], ri);
                }
                out.push(dot(fi, &tmp));
            }
        }
        let out = Tensor::new(vec![m, labels], out)?;
        Ok(self.push(Op::Bilinear { front, rear, weight }, out))
    }

    /// Mean softmax cross-entropy of `[m, L]` score rows against gold labels.
    pub fn softmax_xent(&mut self, scores: Var, gold: &[usize]) -> Result<Var> {
        let s = self.value(scores);
        let (m, labels) = s.dims2()?;
        if s.shape().len() != 2 || m != gold.len() {
            return Err(Error::Contract(format!(
                "loss over {} score rows with {} gold labels",
                m,
                gold.len()
            )));
        }
        if m == 0 {
            return Err(Error::Contract("loss over zero gaps".into()));
        }
        let mut probs = Vec::with_capacity(m * labels);
        let mut loss = T::zero();
        for (i, &g) in gold.iter().enumerate() {
            if g >= labels {
                return Err(Error::Contract(format!(
                    "gold label {g} out of range for {labels} labels"
                )));
            }
            let row = s.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - max).exp()).sum();
            let log_z = max + z.ln();
            loss += log_z - row[g];
            probs.extend(row.iter().map(|&x| (x - log_z).exp()));
        }
        let mean = loss / T::of(m as f64);
        let probs = Tensor::new(vec![m, labels], probs)?;
        Ok(self.push(
            Op::SoftmaxXent {
                scores,
                gold: gold.to_vec(),
                probs,
            },
            Tensor::scalar(mean),
        ))
    }

    /// Gradients of a scalar `loss` with respect to every parameter in the
    /// bound store. Parameters not reached by `loss` get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape().to_vec(), T::one()));
        let mut out = Gradients::zeros_like(self.params);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Constant => {}
                Op::Param(id) => *out.get_mut(*id) = g,
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::MatMulNt(a, b) => {
                    // out = a bᵀ: da = g b, db = gᵀ a
                    let da = g.matmul(self.value(*b))?;
                    let db = g.matmul_tn(self.value(*a))?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    let bshape = self.value(*b).shape().to_vec();
                    let db = if bshape.as_slice() == g.shape() {
                        g.clone()
                    } else {
                        let cols = bshape[0];
                        let mut acc = vec![T::zero(); cols];
                        for row in g.data().chunks(cols) {
                            for (s, &x) in acc.iter_mut().zip(row) {
                                *s += x;
                            }
                        }
                        Tensor::vector(acc)
                    };
                    accumulate(&mut grads, *a, g)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), "mul backward", |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), "mul backward", |x, y| x * y)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    let da = g.zip_map(y, "tanh backward", |x, t| x * (T::one() - t * t))?;
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(idx));
                    let da = g.zip_map(y, "sigmoid backward", |x, s| x * s * (T::one() - s))?;
                    accumulate(&mut grads, *a, da)?;
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    accumulate(&mut grads, *a, g.map(|x| x * k))?;
                }
                Op::Concat { inputs, axis } => {
                    let shape = g.shape().to_vec();
                    let outer: usize = shape[..*axis].iter().product();
                    let out_chunk = g.len() / outer;
                    let mut offset = 0;
                    for &v in inputs {
                        let vshape = self.value(v).shape().to_vec();
                        let chunk = self.value(v).len() / outer;
                        let mut data = Vec::with_capacity(chunk * outer);
                        for o in 0..outer {
                            let base = o * out_chunk + offset;
                            data.extend_from_slice(&g.data()[base..base + chunk]);
                        }
                        offset += chunk;
                        accumulate(&mut grads, v, Tensor::new(vshape, data)?)?;
                    }
                }
                Op::Slice {
                    input,
                    axis,
                    start,
                    len,
                } => {
                    let shape = self.value(*input).shape().to_vec();
                    let outer: usize = shape[..*axis].iter().product();
                    let stride: usize = shape[axis + 1..].iter().product();
                    let chunk = shape[*axis] * stride;
                    let mut full = Tensor::zeros(shape);
                    let piece = len * stride;
                    for o in 0..outer {
                        let base = o * chunk + start * stride;
                        full.data_mut()[base..base + piece]
                            .copy_from_slice(&g.data()[o * piece..(o + 1) * piece]);
                    }
                    accumulate(&mut grads, *input, full)?;
                }
                Op::Gather { table, indices } => {
                    let shape = self.value(*table).shape().to_vec();
                    let dim = shape[1];
                    let mut full = Tensor::zeros(shape);
                    for (k, &i) in indices.iter().enumerate() {
                        let dst = &mut full.data_mut()[i * dim..(i + 1) * dim];
                        for (d, &x) in dst.iter_mut().zip(&g.data()[k * dim..(k + 1) * dim]) {
                            *d += x;
                        }
                    }
                    accumulate(&mut grads, *table, full)?;
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::filled(shape, g.data()[0]))?;
                }
                Op::Bilinear { front, rear, weight } => {
                    let (f, r, w) = (self.value(*front), self.value(*rear), self.value(*weight));
                    let (m, d) = f.dims2()?;
                    let labels = w.shape()[0];
                    let mut df = Tensor::zeros(f.shape().to_vec());
                    let mut dr = Tensor::zeros(r.shape().to_vec());
                    let mut dw = Tensor::zeros(w.shape().to_vec());
                    for i in 0..m {
                        let (fi, ri) = (f.row(i), r.row(i));
                        for l in 0..labels {
                            let gl = g.data()[i * labels + l];
                            if gl == T::zero() {
                                continue;
                            }
                            let wl = &w.data()[l * d * d..(l + 1) * d * d];
                            let dwl = &mut dw.data_mut()[l * d * d..(l + 1) * d * d];
                            for j in 0..d {
                                let wrow = &wl[j * d..(j + 1) * d];
                                // df_i[j] += g · (W_l r_i)[j]
                                df.data_mut()[i * d + j] += gl * dot(wrow, ri);
                                let gf = gl * fi[j];
                                let drow = &mut dwl[j * d..(j + 1) * d];
                                let dri = &mut dr.data_mut()[i * d..(i + 1) * d];
                                for k in 0..d {
                                    // dr_i[k] += g f_i[j] W_l[j,k]
                                    dri[k] += gf * wrow[k];
                                    drow[k] += gf * ri[k];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *front, df)?;
                    accumulate(&mut grads, *rear, dr)?;
                    accumulate(&mut grads, *weight, dw)?;
                }
                Op::SoftmaxXent {
                    scores,
                    gold,
                    probs,
                } => {
                    let m = gold.len();
                    let labels = probs.len() / m;
                    let k = g.data()[0] / T::of(m as f64);
                    let mut ds = probs.clone();
                    for (i, &y) in gold.iter().enumerate() {
                        ds.data_mut()[i * labels + y] -= T::one();
                    }
                    ds.scale(k);
                    accumulate(&mut grads, *scores, ds)?;
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference gradient check over every element of every
    /// parameter. Returns the worst relative error.
    fn check<F>(store: &mut ParamStore<f64>, f: F) -> f64
    where
        F: Fn(&mut Tape<'_, f64>) -> Var,
    {
        let analytic = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss).unwrap()
        };
        let eval = |s: &ParamStore<f64>| {
            let mut tape = Tape::new(s);
            let loss = f(&mut tape);
            tape.value(loss).data()[0]
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for k in 0..store.value(id).len() {
                let orig = store.value(id).data()[k];
                store.get_mut(id).value.data_mut()[k] = orig + h;
                let up = eval(store);
                store.get_mut(id).value.data_mut()[k] = orig - h;
                let down = eval(store);
                store.get_mut(id).value.data_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic.get(id).data()[k];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }

    fn rand_store(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in shapes {
            store.insert(*name, Tensor::uniform(shape.clone(), 1.0, &mut rng));
        }
        store
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(t).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_derivative_matches_central_difference() {
        let x = 0.3f64;
        let h = 1e-5;
        let s = sigmoid(x);
        let numeric = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
        assert!((s * (1.0 - s) - numeric).abs() < 1e-8);

        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(x));
        let mut tape = Tape::new(&store);
        let v = tape.param(ParamId(0));
        let y = tape.sigmoid(v);
        let g = tape.backward(y).unwrap();
        assert!((g.get(ParamId(0)).data()[0] - numeric).abs() < 1e-8);
    }

    #[test]
    fn sum_gives_all_ones_and_unused_gives_zero() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::vector(vec![1.0, -2.0, 3.0]));
        let q = store.insert("q", Tensor::vector(vec![5.0]));
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        let s = tape.sum(v);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(p).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(g.get(q).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new(&store);
        let v = tape.param(p);
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn concat_vectors() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let d = tape.constant(Tensor::vector(vec![0.0; 4]));
        let e = tape.concat(&[d, d], 0).unwrap();
        assert_eq!(tape.value(e).len(), 8);
    }

    #[test]
    fn concat_errors() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 4]));
        assert!(tape.concat(&[a, b], 0).is_err());
        assert!(tape.concat(&[a, b], 1).is_ok());
        assert!(tape.concat(&[a, b], 2).is_err());
    }

    #[test]
    fn add_rejects_general_broadcast() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2]));
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        let c = tape.constant(Tensor::zeros(vec![3, 2]));
        assert!(tape.mul(a, c).is_err());
    }

    #[test]
    fn gradcheck_matmul_add_activations() {
        let mut store = rand_store(
            &[
                ("x", vec![3, 4]),
                ("w", vec![5, 4]),
                ("v", vec![4, 5]),
                ("b", vec![5]),
            ],
            1,
        );
        let worst = check(&mut store, |t| {
            let x = t.param(ParamId(0));
            let w = t.param(ParamId(1));
            let v = t.param(ParamId(2));
            let b = t.param(ParamId(3));
            let h = t.matmul_nt(x, w).unwrap();
            let h = t.add(h, b).unwrap();
            let a = t.tanh(h);
            let s = t.sigmoid(h);
            let p = t.mul(a, s).unwrap();
            let q = t.matmul(x, v).unwrap();
            let r = t.elementwise(ElementwiseOp::Add, &[p, q]).unwrap();
            let r = t.scale(r, 0.7);
            t.sum(r)
        });
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradcheck_concat_slice_gather() {
        let mut store = rand_store(&[("a", vec![2, 3]), ("b", vec![2, 2]), ("e", vec![4, 3])], 2);
        let worst = check(&mut store, |t| {
            let a = t.param(ParamId(0));
            let b = t.param(ParamId(1));
            let e = t.param(ParamId(2));
            let c = t.concat(&[a, b], 1).unwrap();
            let c2 = t.concat(&[c, c], 0).unwrap();
            let s = t.slice(c2, 1, 1, 3).unwrap();
            let s = t.slice(s, 0, 1, 2).unwrap();
            let g = t.gather(e, &[3, 0, 3]).unwrap();
            let g = t.slice(g, 0, 0, 2).unwrap();
            let m = t.mul(s, g).unwrap();
            let m = t.tanh(m);
            t.sum(m)
        });
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn concat_gradient_routes_slices() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::vector(vec![1.0, 2.0]));
        let b = store.insert("b", Tensor::vector(vec![3.0]));
        let mut tape = Tape::new(&store);
        let (va, vb) = (tape.param(a), tape.param(b));
        let c = tape.concat(&[va, vb], 0).unwrap();
        let w = tape.constant(Tensor::vector(vec![10.0, 20.0, 30.0]));
        let m = tape.mul(c, w).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).data(), &[10.0, 20.0]);
        assert_eq!(g.get(b).data(), &[30.0]);
    }

    #[test]
    fn repeated_gather_doubles_gradient() {
        let mut store = ParamStore::new();
        let e = store.insert("e", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mut tape = Tape::new(&store);
        let v = tape.param(e);
        let g = tape.gather(v, &[1, 1]).unwrap();
        assert_eq!(tape.value(g).row(0), tape.value(g).row(1));
        let s = tape.sum(g);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(e).data(), &[0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn gradcheck_bilinear_and_xent() {
        let mut store = rand_store(
            &[("f", vec![3, 2]), ("r", vec![3, 2]), ("w", vec![4, 2, 2])],
            3,
        );
        let worst = check(&mut store, |t| {
            let f = t.param(ParamId(0));
            let r = t.param(ParamId(1));
            let w = t.param(ParamId(2));
            let s = t.bilinear(f, r, w).unwrap();
            t.softmax_xent(s, &[0, 3, 1]).unwrap()
        });
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn uniform_two_way_scores_cost_ln2() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let s = tape.constant(Tensor::zeros(vec![3, 2]));
        let l = tape.softmax_xent(s, &[0, 1, 1]).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let sat = tape.constant(Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap());
        let l = tape.softmax_xent(sat, &[0]).unwrap();
        assert!(tape.value(l).data()[0].abs() < 1e-12);
    }

    #[test]
    fn replay_after_reset_is_identical() {
        let mut store = rand_store(&[("x", vec![2, 3]), ("w", vec![3, 3])], 4);
        store.insert("unused", Tensor::zeros(vec![2]));
        let run = |tape: &mut Tape<'_, f64>| {
            let x = tape.param(ParamId(0));
            let w = tape.param(ParamId(1));
            let y = tape.matmul(x, w).unwrap();
            let y = tape.sigmoid(y);
            let l = tape.sum(y);
            tape.backward(l).unwrap()
        };
        let mut tape = Tape::new(&store);
        let first = run(&mut tape);
        let again = {
            let l = Var(tape.len() - 1);
            tape.backward(l).unwrap()
        };
        tape.reset();
        assert!(tape.is_empty());
        let second = run(&mut tape);
        assert_eq!(first, second);
        assert_eq!(first, again);
    }
}
