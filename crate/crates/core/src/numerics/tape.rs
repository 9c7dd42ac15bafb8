//! Reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles.
//! [`Tape::backward`] walks the record in exact reverse order and
//! accumulates adjoints. Operations work at tensor granularity and several
//! are fused (attention, leaky averaging, layer norm, losses) so a whole
//! sequence model costs a few dozen nodes per layer.
//!
//! Shape errors inside the recorded graph are programming errors and panic;
//! callers at the public model boundary validate their inputs first.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which stored positions a query row may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    /// Every stored row (persistent memories).
    None,
    /// Rows `j <= i` (standard decoder self-attention).
    Causal,
    /// Rows `j < i`: the main diagonal is excluded because the value at
    /// `j` already looks one step ahead.
    StrictCausal,
}

impl Mask {
    fn allowed(self, row: usize, n_keys: usize) -> usize {
        match self {
            Mask::None => n_keys,
            Mask::Causal => (row + 1).min(n_keys),
            Mask::StrictCausal => row.min(n_keys),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        a_t: bool,
        b_t: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale(Var, f64),
    Sum(Var),
    Sigmoid(Var),
    Softplus(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    NormalizeHeads {
        x: Var,
        heads: usize,
        norms: Vec<f64>,
    },
    LeakyAverage {
        x: Var,
        lambda: Var,
        heads: usize,
    },
    ShiftMix {
        x: Var,
        lambda: Var,
        heads: usize,
    },
    Attention(Box<AttentionRecord>),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherCols {
        x: Var,
        idx: Vec<usize>,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    ClippedSqErr {
        pred: Var,
        target: Var,
        clip: f64,
        rows: Vec<bool>,
    },
}

#[derive(Debug)]
struct AttentionRecord {
    q: Var,
    k: Var,
    v: Var,
    beta: Var,
    heads: usize,
    mask: Mask,
    /// Softmax weights, `[heads, tq, tk]`, zero where masked.
    weights: Vec<f64>,
    /// Raw dot products `q_i . k_j`, same layout.
    dots: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward/backward step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient of the output w.r.t. `v`; zero when `v` is off the path.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Node indices whose adjoints were propagated, in visiting order.
    pub fn visited(&self) -> &[usize] {
        &self.visited
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Strided matrix product `c = a * b + beta * c` where each operand is
/// addressed by (offset, row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm_view(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, isize, isize),
    b: (&[f64], usize, isize, isize),
    c: (&mut [f64], usize, isize, isize),
    beta: f64,
) {
    if m == 0 || n == 0 || k == 0 {
        if k == 0 && m > 0 && n > 0 {
            for i in 0..m {
                for j in 0..n {
                    let idx = c.1 as isize + i as isize * c.2 + j as isize * c.3;
                    c.0[idx as usize] *= beta;
                }
            }
        }
        return;
    }
    let last = |off: usize, rows: usize, cols: usize, rs: isize, cs: isize| {
        off as isize + (rows as isize - 1) * rs + (cols as isize - 1) * cs
    };
    assert!(last(a.1, m, k, a.2, a.3) < a.0.len() as isize);
    assert!(last(b.1, k, n, b.2, b.3) < b.0.len() as isize);
    assert!(last(c.1, m, n, c.2, c.3) < c.0.len() as isize);
    // SAFETY: the asserts above bound the last addressed element of every
    // operand; strides are non-negative.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr().add(a.1),
            a.2,
            a.3,
            b.0.as_ptr().add(b.1),
            b.2,
            b.3,
            beta,
            c.0.as_mut_ptr().add(c.1),
            c.2,
            c.3,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable input: gradients flow into it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Fixed input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Softmax weights recorded by an attention node, as
    /// `(weights, heads, query_rows, key_rows)`.
    pub fn attention_weights(&self, v: Var) -> Option<(&[f64], usize, usize, usize)> {
        match &self.nodes[v.0].op {
            Op::Attention(rec) => {
                let tq = self.nodes[rec.q.0].value.rows();
                let tk = self.nodes[rec.k.0].value.rows();
                Some((&rec.weights, rec.heads, tq, tk))
            }
            _ => None,
        }
    }

    // ----------------------------------------------------------------- ops

    /// `op(a) * op(b)` where `op` transposes when the flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, a_t: bool, b_t: bool) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = if a_t {
            (av.cols(), av.rows())
        } else {
            (av.rows(), av.cols())
        };
        let (k2, n) = if b_t {
            (bv.cols(), bv.rows())
        } else {
            (bv.rows(), bv.cols())
        };
        assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, av.data(), a_t, bv.data(), b_t, out.data_mut(), 0.0);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul { a, b, a_t, b_t }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// `x * w^T`: applies a `[out, in]` weight matrix to each row of `x`.
    pub fn linear(&mut self, x: Var, w: Var) -> Var {
        self.matmul_t(x, w, false, true)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("shape");
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let n = xv.cols();
        assert_eq!(bv.len(), n, "bias length");
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push(out, Op::AddRow { x, bias }, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.nodes[x.0].value.map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(softplus);
        let rg = self.rg(&[x]);
        self.push(out, Op::Softplus(x), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.map(gelu);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Row-wise layer normalization with elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let (g, b) = (&self.nodes[gain.0].value, &self.nodes[bias.0].value);
        let n = xv.cols();
        assert!(g.len() == n && b.len() == n, "layer norm parameter length");
        let rows = xv.rows();
        let mut out = Tensor::zeros(xv.shape());
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mu) * rs;
                xhat[r * n + c] = h;
                out.data_mut()[r * n + c] = h * g.data()[c] + b.data()[c];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// Scales each head's column block of every row to unit norm, with the
    /// norm floored at [`NORM_EPS`](super::NORM_EPS).
    pub fn normalize_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let n = xv.cols();
        assert!(heads > 0 && n.is_multiple_of(heads), "heads must divide width");
        let dh = n / heads;
        let rows = xv.rows();
        let mut out = xv.clone();
        let mut norms = vec![0.0; rows * heads];
        for r in 0..rows {
            for h in 0..heads {
                let seg = &mut out.row_mut(r)[h * dh..(h + 1) * dh];
                let nrm = seg.iter().map(|v| v * v).sum::<f64>().sqrt();
                norms[r * heads + h] = nrm;
                let d = nrm.max(super::NORM_EPS);
                seg.iter_mut().for_each(|v| *v /= d);
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::NormalizeHeads { x, heads, norms }, rg)
    }

    /// Per-head leaky running sum down the rows:
    /// `out_t = x_t + lambda_h * out_{t-1}`, `out_{-1} = 0`.
    pub fn leaky_average(&mut self, x: Var, lambda: Var, heads: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let lam = self.nodes[lambda.0].value.data();
        let n = xv.cols();
        assert!(heads > 0 && n.is_multiple_of(heads) && lam.len() == heads);
        let dh = n / heads;
        let mut out = xv.clone();
        for r in 1..xv.rows() {
            for c in 0..n {
                let prev = out.data()[(r - 1) * n + c];
                out.data_mut()[r * n + c] += lam[c / dh] * prev;
            }
        }
        let rg = self.rg(&[x, lambda]);
        self.push(out, Op::LeakyAverage { x, lambda, heads }, rg)
    }

    /// One-step look-ahead mix: `out_t = x_t + lambda_h * x_{t+1}` for
    /// `t = 0..rows-2`. The output has one row fewer than the input.
    pub fn shift_mix(&mut self, x: Var, lambda: Var, heads: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let lam = self.nodes[lambda.0].value.data();
        let n = xv.cols();
        assert!(heads > 0 && n.is_multiple_of(heads) && lam.len() == heads);
        let dh = n / heads;
        let rows = xv.rows().saturating_sub(1);
        let mut out = Tensor::zeros(&[rows, n]);
        for r in 0..rows {
            for c in 0..n {
                out.data_mut()[r * n + c] = xv.data()[r * n + c] + lam[c / dh] * xv.data()[(r + 1) * n + c];
            }
        }
        let rg = self.rg(&[x, lambda]);
        self.push(out, Op::ShiftMix { x, lambda, heads }, rg)
    }

    /// Multi-head kernel-smoothing retrieval.
    ///
    /// `q` is `[tq, heads*dk]`, `k` is `[tk, heads*dk]`, `v` is
    /// `[tk, heads*dv]` and `beta` holds one bandwidth per head. For each
    /// head and query row `i` the output is
    /// `sum_j softmax_j(beta_h * q_i . k_j) v_j` over the rows the mask
    /// allows; a row with nothing to attend to yields zeros.
    #[allow(clippy::needless_range_loop)]
    pub fn attention(&mut self, q: Var, k: Var, v: Var, beta: Var, heads: usize, mask: Mask) -> Var {
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let bv = self.nodes[beta.0].value.data();
        assert_eq!(bv.len(), heads, "one beta per head");
        assert_eq!(qv.cols(), kv.cols(), "query/key width");
        assert_eq!(kv.rows(), vv.rows(), "key/value count");
        assert!(qv.cols() % heads == 0 && vv.cols() % heads == 0);
        let (tq, tk) = (qv.rows(), kv.rows());
        let (wq, wv) = (qv.cols(), vv.cols());
        let (dk, dv) = (wq / heads, wv / heads);
        let mut weights = vec![0.0; heads * tq * tk];
        let mut dots = vec![0.0; heads * tq * tk];
        let mut out = Tensor::zeros(&[tq, wv]);
        for h in 0..heads {
            let base = h * tq * tk;
            let sl = &mut dots[base..base + tq * tk];
            gemm_view(
                tq,
                dk,
                tk,
                (qv.data(), h * dk, wq as isize, 1),
                (kv.data(), h * dk, 1, wq as isize),
                (sl, 0, tk as isize, 1),
                0.0,
            );
            let b = bv[h];
            for i in 0..tq {
                let n = mask.allowed(i, tk);
                if n == 0 {
                    continue;
                }
                let row = &dots[base + i * tk..base + i * tk + n];
                let w = &mut weights[base + i * tk..base + i * tk + n];
                let mx = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(b * s));
                let mut z = 0.0;
                for (wj, &s) in w.iter_mut().zip(row) {
                    *wj = (b * s - mx).exp();
                    z += *wj;
                }
                w.iter_mut().for_each(|x| *x /= z);
            }
            gemm_view(
                tq,
                tk,
                dv,
                (&weights, base, tk as isize, 1),
                (vv.data(), h * dv, wv as isize, 1),
                (out.data_mut(), h * dv, wv as isize, 1),
                0.0,
            );
        }
        let rg = self.rg(&[q, k, v, beta]);
        self.push(
            out,
            Op::Attention(Box::new(AttentionRecord {
                q,
                k,
                v,
                beta,
                heads,
                mask,
                weights,
                dots,
            })),
            rg,
        )
    }

    /// Row lookup into a `[vocab, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = &self.nodes[table.0].value;
        let d = tv.cols();
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (r, &id) in ids.iter().enumerate() {
            assert!(id < tv.rows(), "token id {id} out of range");
            out.row_mut(r).copy_from_slice(tv.row(id));
        }
        let rg = self.rg(&[table]);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Selects (and reorders) columns: `out[:, j] = x[:, idx[j]]`.
    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        let n = xv.cols();
        let mut out = Tensor::zeros(&[xv.rows(), idx.len()]);
        for r in 0..xv.rows() {
            for (j, &c) in idx.iter().enumerate() {
                assert!(c < n);
                out.data_mut()[r * idx.len() + j] = xv.data()[r * n + c];
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::GatherCols { x, idx: idx.to_vec() }, rg)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert!(start <= end && end <= xv.rows());
        let n = xv.cols();
        let out = Tensor::new(vec![end - start, n], xv.data()[start * n..end * n].to_vec()).expect("shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceRows { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[rows, total]);
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.rows(), rows, "concat row mismatch");
            for r in 0..rows {
                out.data_mut()[r * total + off..r * total + off + w].copy_from_slice(pv.row(r));
            }
            off += w;
        }
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Rows whose target is `None` are skipped; with no counted
    /// rows the loss is 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = &self.nodes[logits.0].value;
        let (rows, vocab) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::contract(format!(
                "{} targets for {} logit rows",
                targets.len(),
                rows
            )));
        }
        let mut probs = vec![0.0; rows * vocab];
        let mut loss = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..vocab {
                probs[r * vocab + c] = (row[c] - mx).exp() / z;
            }
            if let Some(t) = *t {
                if t >= vocab {
                    return Err(Error::contract(format!("target id {t} outside vocab {vocab}")));
                }
                loss += z.ln() + mx - row[t];
                count += 1;
            }
        }
        let value = if count > 0 { loss / count as f64 } else { 0.0 };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Mean over the selected rows of `min(||pred_r - target_r||^2, clip)`.
    pub fn clipped_sq_err(&mut self, pred: Var, target: Var, clip: f64, rows: &[bool]) -> Var {
        let (pv, tv) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        assert_eq!(pv.shape(), tv.shape());
        assert_eq!(rows.len(), pv.rows());
        let mut total = 0.0;
        let mut count = 0;
        for (r, &use_row) in rows.iter().enumerate() {
            if !use_row {
                continue;
            }
            let e: f64 = pv.row(r).iter().zip(tv.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
            total += e.min(clip);
            count += 1;
        }
        let value = if count > 0 { total / count as f64 } else { 0.0 };
        let rg = self.rg(&[pred, target]);
        self.push(
            Tensor::scalar(value),
            Op::ClippedSqErr {
                pred,
                target,
                clip,
                rows: rows.to_vec(),
            },
            rg,
        )
    }

    // ------------------------------------------------------------ backward

    /// Propagates adjoints from the scalar `out` back to every node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.nodes[out.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[out.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads[out.0] = Some(Tensor::filled(self.nodes[out.0].value.shape(), 1.0));
        let mut visited = Vec::new();
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes, visited })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let g = make();
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, a_t, b_t } => {
                let (av, bv) = (val(*a), val(*b));
                let (m, n) = (g.rows(), g.cols());
                let k = if *a_t { av.rows() } else { av.cols() };
                self.acc(grads, *a, || {
                    let mut da = Tensor::zeros(av.shape());
                    if *a_t {
                        gemm(k, n, m, bv.data(), *b_t, g.data(), true, da.data_mut(), 0.0);
                    } else {
                        gemm(m, n, k, g.data(), false, bv.data(), !*b_t, da.data_mut(), 0.0);
                    }
                    da
                });
                self.acc(grads, *b, || {
                    let mut db = Tensor::zeros(bv.shape());
                    if *b_t {
                        gemm(n, m, k, g.data(), true, av.data(), *a_t, db.data_mut(), 0.0);
                    } else {
                        gemm(k, m, n, av.data(), !*a_t, g.data(), false, db.data_mut(), 0.0);
                    }
                    db
                });
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, || g.clone());
                self.acc(grads, *b, || g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.acc(grads, *a, || {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    Tensor::new(g.shape().to_vec(), d).expect("shape")
                });
                self.acc(grads, *b, || {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    Tensor::new(g.shape().to_vec(), d).expect("shape")
                });
            }
            Op::AddRow { x, bias } => {
                self.acc(grads, *x, || g.clone());
                self.acc(grads, *bias, || {
                    let n = g.cols();
                    let mut db = Tensor::zeros(val(*bias).shape());
                    for row in g.data().chunks(n) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    db
                });
            }
            Op::Scale(x, c) => self.acc(grads, *x, || g.map(|v| v * c)),
            Op::Sum(x) => {
                let s = g.item();
                self.acc(grads, *x, || Tensor::filled(val(*x).shape(), s));
            }
            Op::Sigmoid(x) => self.acc(grads, *x, || {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(y, gv)| gv * y * (1.0 - y))
                    .collect();
                Tensor::new(g.shape().to_vec(), d).expect("shape")
            }),
            Op::Softplus(x) => self.acc(grads, *x, || {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(xv, gv)| gv * sigmoid(*xv))
                    .collect();
                Tensor::new(g.shape().to_vec(), d).expect("shape")
            }),
            Op::Gelu(x) => self.acc(grads, *x, || {
                let d = val(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(xv, gv)| gv * gelu_grad(*xv))
                    .collect();
                Tensor::new(g.shape().to_vec(), d).expect("shape")
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = g.cols();
                let gv = val(*gain).data();
                self.acc(grads, *x, || {
                    let mut dx = Tensor::zeros(g.shape());
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let xh = &xhat[r * n..(r + 1) * n];
                        let dxh: Vec<f64> = (0..n).map(|c| gr[c] * gv[c]).collect();
                        let m1 = dxh.iter().sum::<f64>() / n as f64;
                        let m2 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        let out = dx.row_mut(r);
                        for c in 0..n {
                            out[c] = rstd[r] * (dxh[c] - m1 - xh[c] * m2);
                        }
                    }
                    dx
                });
                self.acc(grads, *gain, || {
                    let mut dg = Tensor::zeros(val(*gain).shape());
                    for r in 0..g.rows() {
                        for c in 0..n {
                            dg.data_mut()[c] += g.row(r)[c] * xhat[r * n + c];
                        }
                    }
                    dg
                });
                self.acc(grads, *bias, || {
                    let mut db = Tensor::zeros(val(*bias).shape());
                    for r in 0..g.rows() {
                        for c in 0..n {
                            db.data_mut()[c] += g.row(r)[c];
                        }
                    }
                    db
                });
            }
            Op::NormalizeHeads { x, heads, norms } => self.acc(grads, *x, || {
                let y = &node.value;
                let n = g.cols();
                let dh = n / heads;
                let mut dx = Tensor::zeros(g.shape());
                for r in 0..g.rows() {
                    for h in 0..*heads {
                        let nrm = norms[r * heads + h];
                        let sl = r * n + h * dh..r * n + (h + 1) * dh;
                        let (ys, gs) = (&y.data()[sl.clone()], &g.data()[sl.clone()]);
                        let out = &mut dx.data_mut()[sl];
                        if nrm > super::NORM_EPS {
                            let yg: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                            for c in 0..dh {
                                out[c] = (gs[c] - ys[c] * yg) / nrm;
                            }
                        } else {
                            for c in 0..dh {
                                out[c] = gs[c] / super::NORM_EPS;
                            }
                        }
                    }
                }
                dx
            }),
            Op::LeakyAverage { x, lambda, heads } => {
                let lam = val(*lambda).data();
                let n = g.cols();
                let dh = n / heads;
                let rows = g.rows();
                // acc_t = g_t + lambda * acc_{t+1}: total adjoint of out_t.
                let mut accg = g.clone();
                for r in (0..rows.saturating_sub(1)).rev() {
                    for c in 0..n {
                        let next = accg.data()[(r + 1) * n + c];
                        accg.data_mut()[r * n + c] += lam[c / dh] * next;
                    }
                }
                self.acc(grads, *lambda, || {
                    let mut dl = Tensor::zeros(val(*lambda).shape());
                    for r in 1..rows {
                        for c in 0..n {
                            dl.data_mut()[c / dh] += accg.data()[r * n + c] * node.value.data()[(r - 1) * n + c];
                        }
                    }
                    dl
                });
                self.acc(grads, *x, || accg);
            }
            Op::ShiftMix { x, lambda, heads } => {
                let lam = val(*lambda).data();
                let xv = val(*x);
                let n = g.cols();
                let dh = n / heads;
                self.acc(grads, *x, || {
                    let mut dx = Tensor::zeros(xv.shape());
                    for r in 0..g.rows() {
                        for c in 0..n {
                            let gv = g.data()[r * n + c];
                            dx.data_mut()[r * n + c] += gv;
                            dx.data_mut()[(r + 1) * n + c] += lam[c / dh] * gv;
                        }
                    }
                    dx
                });
                self.acc(grads, *lambda, || {
                    let mut dl = Tensor::zeros(val(*lambda).shape());
                    for r in 0..g.rows() {
                        for c in 0..n {
                            dl.data_mut()[c / dh] += g.data()[r * n + c] * xv.data()[(r + 1) * n + c];
                        }
                    }
                    dl
                });
            }
            Op::Attention(rec) => self.attention_backward(rec, g, grads),
            Op::Embedding { table, ids } => self.acc(grads, *table, || {
                let mut dt = Tensor::zeros(val(*table).shape());
                for (r, &id) in ids.iter().enumerate() {
                    for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                dt
            }),
            Op::GatherCols { x, idx } => self.acc(grads, *x, || {
                let xv = val(*x);
                let n = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for r in 0..g.rows() {
                    for (j, &c) in idx.iter().enumerate() {
                        dx.data_mut()[r * n + c] += g.data()[r * idx.len() + j];
                    }
                }
                dx
            }),
            Op::SliceRows { x, start } => self.acc(grads, *x, || {
                let xv = val(*x);
                let n = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                dx.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                dx
            }),
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for p in parts {
                    let pv = val(*p);
                    let w = pv.cols();
                    self.acc(grads, *p, || {
                        let mut dp = Tensor::zeros(pv.shape());
                        for r in 0..g.rows() {
                            dp.row_mut(r)
                                .copy_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        dp
                    });
                    off += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => self.acc(grads, *logits, || {
                let lv = val(*logits);
                let vocab = lv.cols();
                let mut dl = Tensor::zeros(lv.shape());
                if *count == 0 {
                    return dl;
                }
                let s = g.item() / *count as f64;
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let row = dl.row_mut(r);
                        for c in 0..vocab {
                            row[c] = s * probs[r * vocab + c];
                        }
                        row[t] -= s;
                    }
                }
                dl
            }),
            Op::ClippedSqErr {
                pred,
                target,
                clip,
                rows,
            } => {
                let (pv, tv) = (val(*pred), val(*target));
                let count = rows.iter().filter(|&&b| b).count();
                if count == 0 {
                    return;
                }
                let s = g.item() / count as f64;
                let mut d = Tensor::zeros(pv.shape());
                for (r, &use_row) in rows.iter().enumerate() {
                    if !use_row {
                        continue;
                    }
                    let e: f64 = pv.row(r).iter().zip(tv.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
                    if e < *clip {
                        for c in 0..pv.cols() {
                            d.row_mut(r)[c] = 2.0 * s * (pv.row(r)[c] - tv.row(r)[c]);
                        }
                    }
                }
                self.acc(grads, *target, || d.map(|x| -x));
                self.acc(grads, *pred, || d);
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn attention_backward(&self, rec: &AttentionRecord, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let (qv, kv, vv) = (
            &self.nodes[rec.q.0].value,
            &self.nodes[rec.k.0].value,
            &self.nodes[rec.v.0].value,
        );
        let bv = self.nodes[rec.beta.0].value.data();
        let heads = rec.heads;
        let (tq, tk) = (qv.rows(), kv.rows());
        let (wq, wv) = (qv.cols(), vv.cols());
        let (dk, dv) = (wq / heads, wv / heads);
        let mut dq = Tensor::zeros(qv.shape());
        let mut dkt = Tensor::zeros(kv.shape());
        let mut dvt = Tensor::zeros(vv.shape());
        let mut dbeta = Tensor::zeros(self.nodes[rec.beta.0].value.shape());
        let mut dw = vec![0.0; tq * tk];
        let mut ds = vec![0.0; tq * tk];
        for h in 0..heads {
            let base = h * tq * tk;
            let w = &rec.weights[base..base + tq * tk];
            // dW = G_h V_h^T
            gemm_view(
                tq,
                dv,
                tk,
                (g.data(), h * dv, wv as isize, 1),
                (vv.data(), h * dv, 1, wv as isize),
                (&mut dw, 0, tk as isize, 1),
                0.0,
            );
            // dV_h = W^T G_h
            gemm_view(
                tk,
                tq,
                dv,
                (w, 0, 1, tk as isize),
                (g.data(), h * dv, wv as isize, 1),
                (dvt.data_mut(), h * dv, wv as isize, 1),
                0.0,
            );
            let mut db = 0.0;
            for i in 0..tq {
                let n = rec.mask.allowed(i, tk);
                let wr = &w[i * tk..i * tk + n];
                let dwr = &dw[i * tk..i * tk + n];
                let inner: f64 = wr.iter().zip(dwr).map(|(a, b)| a * b).sum();
                let dsr = &mut ds[i * tk..(i + 1) * tk];
                dsr.iter_mut().for_each(|x| *x = 0.0);
                for j in 0..n {
                    let s = wr[j] * (dwr[j] - inner);
                    dsr[j] = s;
                    db += s * rec.dots[base + i * tk + j];
                }
            }
            dbeta.data_mut()[h] = db;
            let b = bv[h];
            ds.iter_mut().for_each(|x| *x *= b);
            // dQ_h = beta dS K_h ; dK_h = beta dS^T Q_h
            gemm_view(
                tq,
                tk,
                dk,
                (&ds, 0, tk as isize, 1),
                (kv.data(), h * dk, wq as isize, 1),
                (dq.data_mut(), h * dk, wq as isize, 1),
                0.0,
            );
            gemm_view(
                tk,
                tq,
                dk,
                (&ds, 0, 1, tk as isize),
                (qv.data(), h * dk, wq as isize, 1),
                (dkt.data_mut(), h * dk, wq as isize, 1),
                0.0,
            );
        }
        self.acc(grads, rec.q, || dq);
        self.acc(grads, rec.k, || dkt);
        self.acc(grads, rec.v, || dvt);
        self.acc(grads, rec.beta, || dbeta);
    }
}
