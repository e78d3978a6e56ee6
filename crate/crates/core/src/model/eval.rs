use crate::error::{Error, Result};

use super::forward::forward_trace;
use super::ModelCheckpoint;
use crate::numerics::row_nll;

/// Full-length blocks evaluated per forward call.
const EVAL_BATCH: usize = 16;

/// Total next-token NLL (natural log) and number of predicted tokens.
///
/// The corpus is cut into consecutive non-overlapping `ctx_len` blocks; a
/// trailing partial block is kept when it has at least two bytes. Within each
/// block, positions `1..` are predicted from their prefix.
pub fn corpus_nll(ckpt: &ModelCheckpoint, corpus: &[u8]) -> Result<(f64, usize)> {
    if corpus.len() < 2 {
        return Err(Error::Corpus(format!(
            "perplexity needs at least 2 bytes, got {}",
            corpus.len()
        )));
    }
    let ctx = ckpt.config().ctx_len;
    let blocks: Vec<&[u8]> = corpus.chunks(ctx).filter(|b| b.len() >= 2).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start < blocks.len() {
        // Group consecutive equal-length blocks; only the final one can be short.
        let len = blocks[start].len();
        let mut end = start + 1;
        while end < blocks.len() && end - start < EVAL_BATCH && blocks[end].len() == len {
            end += 1;
        }
        let group = &blocks[start..end];
        let trace = forward_trace(ckpt, group)?;
        for (b, block) in group.iter().enumerate() {
            for i in 0..len - 1 {
                total += row_nll(trace.logits.row(b * len + i), block[i + 1] as usize);
            }
            count += len - 1;
        }
        start = end;
    }
    Ok((total, count))
}

/// `exp(total NLL / predicted tokens)`.
pub fn perplexity(ckpt: &ModelCheckpoint, corpus: &[u8]) -> Result<f64> {
    let (total, count) = corpus_nll(ckpt, corpus)?;
    let ppl = (total / count as f64).exp();
    if !ppl.is_finite() {
        return Err(Error::NonFinite("perplexity"));
    }
    Ok(ppl)
}
