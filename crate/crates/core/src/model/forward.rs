//! Pre-norm decoder-only transformer: forward pass, activation capture and
//! hand-written backward pass.
//!
//! A batch of equal-length sequences is flattened into one `(B·T) × d` matrix
//! so the linear maps run as single products; attention is computed per
//! sequence and head with causal masking.

use crate::error::{Error, Result};
use crate::numerics::{
    softmax_backward_row, GELU_A, GELU_C,
    gemm_acc, gemm_tn_acc, layer_norm_rows, layer_norm_rows_backward,
    matmul, matmul_nt, row_nll, softmax_in_place, LayerNormCache, Matrix, LAYER_NORM_EPS,
};

use super::checkpoint::{LayerTensor, Layout, Tensor};
use super::ModelCheckpoint;

struct LayerTrace {
    ln1: LayerNormCache,
    h1: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities, `T × T` per (sequence, head), zero above the diagonal.
    probs: Vec<f64>,
    attn: Matrix,
    ln2: LayerNormCache,
    h2: Matrix,
    u: Matrix,
    /// `tanh` term of the GELU at each pre-activation, reused by backward.
    gelu_tanh: Vec<f64>,
    g: Matrix,
}

/// Everything the backward pass and activation capture need from one forward run.
pub(crate) struct Trace {
    batch: usize,
    seq_len: usize,
    tokens: Vec<u8>,
    layers: Vec<LayerTrace>,
    lnf: LayerNormCache,
    xf: Matrix,
    pub logits: Matrix,
}

impl Trace {
    /// Input activations of every prunable matrix, in prunable-set order.
    pub fn prunable_inputs(&self, layout: &Layout) -> Vec<(usize, &Matrix)> {
        let mut out = Vec::with_capacity(self.layers.len() * 6);
        for (l, lt) in self.layers.iter().enumerate() {
            out.push((layout.layer(l, LayerTensor::AttnQ), &lt.h1));
            out.push((layout.layer(l, LayerTensor::AttnK), &lt.h1));
            out.push((layout.layer(l, LayerTensor::AttnV), &lt.h1));
            out.push((layout.layer(l, LayerTensor::AttnO), &lt.attn));
            out.push((layout.layer(l, LayerTensor::MlpIn), &lt.h2));
            out.push((layout.layer(l, LayerTensor::MlpOut), &lt.g));
        }
        out
    }
}

/// Input activations captured for each prunable matrix (one row per token position).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationCache {
    entries: Vec<(String, Matrix)>,
}

impl ActivationCache {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Gradient of the loss with respect to every checkpoint tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    #[inline]
    pub(crate) fn at(&self, index: usize) -> &Matrix {
        &self.tensors[index].value
    }
}

fn check_batch(ckpt: &ModelCheckpoint, seqs: &[&[u8]]) -> Result<usize> {
    let cfg = ckpt.config();
    let first = seqs
        .first()
        .ok_or_else(|| Error::Sequence("empty batch".into()))?;
    let t = first.len();
    if t == 0 {
        return Err(Error::Sequence("empty token sequence".into()));
    }
    if t > cfg.ctx_len {
        return Err(Error::Sequence(format!(
            "sequence of {t} tokens exceeds context length {}",
            cfg.ctx_len
        )));
    }
    for s in seqs {
        if s.len() != t {
            return Err(Error::Sequence("batch sequences differ in length".into()));
        }
        if let Some(&b) = s.iter().find(|&&b| b as usize >= cfg.vocab_size) {
            return Err(Error::Sequence(format!(
                "token {b} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(t)
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

/// Copy the `cols` slice of rows `rows` into a contiguous buffer.
fn gather(m: &Matrix, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for r in rows {
        out.extend_from_slice(&m.row(r)[cols.clone()]);
    }
    out
}

fn scatter_add(m: &mut Matrix, row0: usize, cols: std::ops::Range<usize>, src: &[f64], scale: f64) {
    let w = cols.len();
    for (i, chunk) in src.chunks_exact(w).enumerate() {
        for (o, &v) in m.row_mut(row0 + i)[cols.clone()].iter_mut().zip(chunk) {
            *o += v * scale;
        }
    }
}

fn transpose_buf(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    batch: usize,
    t: usize,
    heads: usize,
) -> (Matrix, Vec<f64>) {
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Matrix::zeros(batch * t, d);
    let mut probs = vec![0.0; batch * heads * t * t];
    for b in 0..batch {
        let rows = b * t..(b + 1) * t;
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = gather(q, rows.clone(), cols.clone());
            let kt = transpose_buf(&gather(k, rows.clone(), cols.clone()), t, dh);
            let vh = gather(v, rows.clone(), cols.clone());
            let p = &mut probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
            gemm_acc(&qh, t, dh, &kt, t, p);
            for i in 0..t {
                let prow = &mut p[i * t..(i + 1) * t];
                for s in &mut prow[..=i] {
                    *s *= scale;
                }
                softmax_in_place(&mut prow[..=i]);
                prow[i + 1..].fill(0.0);
            }
            let mut oh = vec![0.0; t * dh];
            gemm_acc(p, t, t, &vh, dh, &mut oh);
            scatter_add(&mut out, b * t, cols, &oh, 1.0);
        }
    }
    (out, probs)
}

fn attention_backward(
    lt: &LayerTrace,
    d_attn: &Matrix,
    batch: usize,
    t: usize,
    heads: usize,
) -> (Matrix, Matrix, Matrix) {
    let d = lt.q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Matrix::zeros(batch * t, d);
    let mut dk = Matrix::zeros(batch * t, d);
    let mut dv = Matrix::zeros(batch * t, d);
    for b in 0..batch {
        let rows = b * t..(b + 1) * t;
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &lt.probs[(b * heads + h) * t * t..(b * heads + h + 1) * t * t];
            let dout = gather(d_attn, rows.clone(), cols.clone());
            let vh = gather(&lt.v, rows.clone(), cols.clone());
            let vt = transpose_buf(&vh, t, dh);

            let mut dp = vec![0.0; t * t];
            gemm_acc(&dout, t, dh, &vt, t, &mut dp);
            let mut dvh = vec![0.0; t * dh];
            gemm_tn_acc(p, t, t, &dout, dh, &mut dvh);
            scatter_add(&mut dv, b * t, cols.clone(), &dvh, 1.0);

            let mut ds = vec![0.0; t * t];
            for i in 0..t {
                let r = i * t..i * t + i + 1;
                softmax_backward_row(&p[r.clone()], &dp[r.clone()], &mut ds[r]);
            }
            let qh = gather(&lt.q, rows.clone(), cols.clone());
            let kh = gather(&lt.k, rows.clone(), cols.clone());
            let mut dqh = vec![0.0; t * dh];
            gemm_acc(&ds, t, t, &kh, dh, &mut dqh);
            scatter_add(&mut dq, b * t, cols.clone(), &dqh, scale);
            let mut dkh = vec![0.0; t * dh];
            gemm_tn_acc(&ds, t, t, &qh, dh, &mut dkh);
            scatter_add(&mut dk, b * t, cols, &dkh, scale);
        }
    }
    (dq, dk, dv)
}

/// Forward over a batch of equal-length sequences, keeping every intermediate.
pub(crate) fn forward_trace(ckpt: &ModelCheckpoint, seqs: &[&[u8]]) -> Result<Trace> {
    let t = check_batch(ckpt, seqs)?;
    let cfg = ckpt.config();
    let layout = ckpt.layout();
    let batch = seqs.len();
    let d = cfg.d_model;
    let tokens: Vec<u8> = seqs.iter().flat_map(|s| s.iter().copied()).collect();

    let tok_emb = ckpt.at(Layout::TOK_EMB);
    let pos_emb = ckpt.at(Layout::POS_EMB);
    let mut x = Matrix::zeros(batch * t, d);
    for (n, &tok) in tokens.iter().enumerate() {
        let pos = n % t;
        let te = tok_emb.row(tok as usize);
        let pe = pos_emb.row(pos);
        for ((o, &a), &b) in x.row_mut(n).iter_mut().zip(te).zip(pe) {
            *o = a + b;
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let w = |tensor| ckpt.at(layout.layer(l, tensor));
        let (h1, ln1) = layer_norm_rows(
            &x,
            w(LayerTensor::Ln1Gain).data(),
            w(LayerTensor::Ln1Shift).data(),
            LAYER_NORM_EPS,
        );
        let q = matmul(&h1, w(LayerTensor::AttnQ))?;
        let k = matmul(&h1, w(LayerTensor::AttnK))?;
        let v = matmul(&h1, w(LayerTensor::AttnV))?;
        let (attn, probs) = attention(&q, &k, &v, batch, t, cfg.n_heads);
        add_in_place(&mut x, &matmul(&attn, w(LayerTensor::AttnO))?);

        let (h2, ln2) = layer_norm_rows(
            &x,
            w(LayerTensor::Ln2Gain).data(),
            w(LayerTensor::Ln2Shift).data(),
            LAYER_NORM_EPS,
        );
        let u = matmul(&h2, w(LayerTensor::MlpIn))?;
        let gelu_tanh: Vec<f64> = u
            .data()
            .iter()
            .map(|&x| (GELU_C * (x + GELU_A * x * x * x)).tanh())
            .collect();
        let g = Matrix::from_vec(
            u.rows(),
            u.cols(),
            u.data()
                .iter()
                .zip(&gelu_tanh)
                .map(|(&x, &th)| 0.5 * x * (1.0 + th))
                .collect(),
        )?;
        add_in_place(&mut x, &matmul(&g, w(LayerTensor::MlpOut))?);

        layers.push(LayerTrace {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            attn,
            ln2,
            h2,
            u,
            gelu_tanh,
            g,
        });
    }

    let (xf, lnf) = layer_norm_rows(
        &x,
        ckpt.at(layout.lnf_gain()).data(),
        ckpt.at(layout.lnf_shift()).data(),
        LAYER_NORM_EPS,
    );
    let logits = matmul(&xf, ckpt.at(layout.head()))?;
    Ok(Trace {
        batch,
        seq_len: t,
        tokens,
        layers,
        lnf,
        xf,
        logits,
    })
}

/// Logits for one sequence; with `capture`, also the input activations of
/// every prunable matrix.
pub fn forward(
    ckpt: &ModelCheckpoint,
    tokens: &[u8],
    capture: bool,
) -> Result<(Matrix, ActivationCache)> {
    let trace = forward_trace(ckpt, &[tokens])?;
    let cache = if capture {
        let layout = ckpt.layout();
        ActivationCache {
            entries: trace
                .prunable_inputs(&layout)
                .into_iter()
                .map(|(i, m)| (ckpt.tensors()[i].name.clone(), m.clone()))
                .collect(),
        }
    } else {
        ActivationCache::default()
    };
    Ok((trace.logits, cache))
}

/// Mean next-token loss over the batch and its gradient w.r.t. the logits.
fn next_token_loss(trace: &Trace) -> (f64, Matrix) {
    let t = trace.seq_len;
    let predicted = trace.batch * (t - 1);
    let inv = 1.0 / predicted as f64;
    let mut d = Matrix::zeros(trace.logits.rows(), trace.logits.cols());
    let mut total = 0.0;
    for b in 0..trace.batch {
        for i in 0..t - 1 {
            let n = b * t + i;
            let target = trace.tokens[n + 1] as usize;
            let row = trace.logits.row(n);
            total += row_nll(row, target);
            let drow = d.row_mut(n);
            drow.copy_from_slice(row);
            softmax_in_place(drow);
            drow[target] -= 1.0;
            for v in drow.iter_mut() {
                *v *= inv;
            }
        }
    }
    (total * inv, d)
}

fn backward(ckpt: &ModelCheckpoint, trace: &Trace, d_logits: &Matrix) -> Result<Gradients> {
    let cfg = ckpt.config();
    let layout = ckpt.layout();
    let (batch, t) = (trace.batch, trace.seq_len);
    let mut grads: Vec<Matrix> = ckpt
        .tensors()
        .iter()
        .map(|tn| Matrix::zeros(tn.value.rows(), tn.value.cols()))
        .collect();

    // dW += inputᵀ · d_out
    let acc_weight = |grads: &mut Vec<Matrix>, idx: usize, input: &Matrix, d_out: &Matrix| {
        let g = &mut grads[idx];
        let (m, n) = g.shape();
        gemm_tn_acc(input.data(), input.rows(), m, d_out.data(), n, g.data_mut());
    };

    let head = layout.head();
    acc_weight(&mut grads, head, &trace.xf, d_logits);
    let d_xf = matmul_nt(d_logits, ckpt.at(head))?;
    let mut d_x = {
        let (gi, si) = (layout.lnf_gain(), layout.lnf_shift());
        let mut dg = vec![0.0; cfg.d_model];
        let mut ds = vec![0.0; cfg.d_model];
        let dx = layer_norm_rows_backward(&trace.lnf, ckpt.at(gi).data(), &d_xf, &mut dg, &mut ds);
        grads[gi].data_mut().copy_from_slice(&dg);
        grads[si].data_mut().copy_from_slice(&ds);
        dx
    };

    for l in (0..cfg.n_layers).rev() {
        let lt = &trace.layers[l];
        let idx = |tensor| layout.layer(l, tensor);
        let w = |tensor| ckpt.at(layout.layer(l, tensor));

        // MLP branch: x_out = x_mid + gelu(h2·W_in)·W_out
        acc_weight(&mut grads, idx(LayerTensor::MlpOut), &lt.g, &d_x);
        let mut d_u = matmul_nt(&d_x, w(LayerTensor::MlpOut))?;
        for ((du, &x), &th) in d_u.data_mut().iter_mut().zip(lt.u.data()).zip(&lt.gelu_tanh) {
            let d_inner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
            *du *= 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner;
        }
        acc_weight(&mut grads, idx(LayerTensor::MlpIn), &lt.h2, &d_u);
        let d_h2 = matmul_nt(&d_u, w(LayerTensor::MlpIn))?;
        {
            let (gi, si) = (idx(LayerTensor::Ln2Gain), idx(LayerTensor::Ln2Shift));
            let mut dg = vec![0.0; cfg.d_model];
            let mut ds = vec![0.0; cfg.d_model];
            let dx = layer_norm_rows_backward(&lt.ln2, ckpt.at(gi).data(), &d_h2, &mut dg, &mut ds);
            grads[gi].data_mut().copy_from_slice(&dg);
            grads[si].data_mut().copy_from_slice(&ds);
            add_in_place(&mut d_x, &dx);
        }

        // Attention branch: x_mid = x_in + attn(h1)·W_o
        acc_weight(&mut grads, idx(LayerTensor::AttnO), &lt.attn, &d_x);
        let d_attn = matmul_nt(&d_x, w(LayerTensor::AttnO))?;
        let (dq, dk, dv) = attention_backward(lt, &d_attn, batch, t, cfg.n_heads);
        acc_weight(&mut grads, idx(LayerTensor::AttnQ), &lt.h1, &dq);
        acc_weight(&mut grads, idx(LayerTensor::AttnK), &lt.h1, &dk);
        acc_weight(&mut grads, idx(LayerTensor::AttnV), &lt.h1, &dv);
        let mut d_h1 = matmul_nt(&dq, w(LayerTensor::AttnQ))?;
        add_in_place(&mut d_h1, &matmul_nt(&dk, w(LayerTensor::AttnK))?);
        add_in_place(&mut d_h1, &matmul_nt(&dv, w(LayerTensor::AttnV))?);
        {
            let (gi, si) = (idx(LayerTensor::Ln1Gain), idx(LayerTensor::Ln1Shift));
            let mut dg = vec![0.0; cfg.d_model];
            let mut ds = vec![0.0; cfg.d_model];
            let dx = layer_norm_rows_backward(&lt.ln1, ckpt.at(gi).data(), &d_h1, &mut dg, &mut ds);
            grads[gi].data_mut().copy_from_slice(&dg);
            grads[si].data_mut().copy_from_slice(&ds);
            add_in_place(&mut d_x, &dx);
        }
    }

    for (n, &tok) in trace.tokens.iter().enumerate() {
        let src = d_x.row(n);
        for (a, &g) in grads[Layout::TOK_EMB].row_mut(tok as usize).iter_mut().zip(src) {
            *a += g;
        }
        for (a, &g) in grads[Layout::POS_EMB].row_mut(n % t).iter_mut().zip(src) {
            *a += g;
        }
    }

    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("backward"));
    }
    Ok(Gradients {
        tensors: ckpt
            .tensors()
            .iter()
            .zip(grads)
            .map(|(tn, value)| Tensor {
                name: tn.name.clone(),
                value,
            })
            .collect(),
    })
}

/// Mean next-token loss over a batch of equal-length sequences and its gradients.
pub(crate) fn batch_loss_and_grads(
    ckpt: &ModelCheckpoint,
    seqs: &[&[u8]],
) -> Result<(f64, Gradients)> {
    if seqs.first().map_or(0, |s| s.len()) < 2 {
        return Err(Error::Sequence(
            "need at least 2 tokens to form a next-token loss".into(),
        ));
    }
    let trace = forward_trace(ckpt, seqs)?;
    let (loss, d_logits) = next_token_loss(&trace);
    let grads = backward(ckpt, &trace, &d_logits)?;
    Ok((loss, grads))
}

/// Next-token cross entropy of one sequence and gradients for every tensor.
pub fn loss_and_grads(ckpt: &ModelCheckpoint, tokens: &[u8]) -> Result<(f64, Gradients)> {
    batch_loss_and_grads(ckpt, &[tokens])
}
