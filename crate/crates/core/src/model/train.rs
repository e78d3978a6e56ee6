use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Prng, Stream};

use super::forward::batch_loss_and_grads;
use super::{init_model, ModelCheckpoint, ModelConfig};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.99;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 16,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: ModelCheckpoint,
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Draw `count` random `len`-byte windows from `corpus`.
pub(crate) fn sample_windows<'a>(
    corpus: &'a [u8],
    len: usize,
    count: usize,
    rng: &mut Prng,
) -> Vec<&'a [u8]> {
    let span = corpus.len() - len + 1;
    (0..count)
        .map(|_| {
            let start = rng.below(span);
            &corpus[start..start + len]
        })
        .collect()
}

pub fn train(config: &ModelConfig, corpus: &[u8], hyper: &TrainHyper) -> Result<ModelCheckpoint> {
    train_with_report(config, corpus, hyper, |_, _| {}).map(|r| r.checkpoint)
}

/// Adam on random context windows; `on_step(step, loss)` observes progress.
pub fn train_with_report(
    config: &ModelConfig,
    corpus: &[u8],
    hyper: &TrainHyper,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    let min_len = 10 * config.ctx_len;
    if corpus.len() < min_len {
        return Err(Error::Corpus(format!(
            "training needs at least {min_len} bytes, got {}",
            corpus.len()
        )));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) || !hyper.lr.is_finite() {
        return Err(Error::Invalid(format!(
            "invalid training hyperparameters: batch {} lr {}",
            hyper.batch, hyper.lr
        )));
    }

    // The working copy keeps full 64-bit weights; they are rounded once at the end.
    let mut model = init_model(config)?;
    let mut rng = Prng::for_stream(config.seed, Stream::Train);
    let mut m: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.value.len()]).collect();
    let mut v = m.clone();
    let mut losses = Vec::with_capacity(hyper.steps);

    for step in 0..hyper.steps {
        let windows = sample_windows(corpus, config.ctx_len, hyper.batch, &mut rng);
        let (loss, grads) = batch_loss_and_grads(&model, &windows)?;
        losses.push(loss);
        on_step(step, loss);

        let t = (step + 1) as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (i, tensor) in model.tensors_mut().iter_mut().enumerate() {
            let g = grads.at(i).data();
            let (mi, vi) = (&mut m[i], &mut v[i]);
            for (j, w) in tensor.value.data_mut().iter_mut().enumerate() {
                mi[j] = BETA1 * mi[j] + (1.0 - BETA1) * g[j];
                vi[j] = BETA2 * vi[j] + (1.0 - BETA2) * g[j] * g[j];
                let mhat = mi[j] / bc1;
                let vhat = vi[j] / bc2;
                *w -= hyper.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
    model.round_to_f32();
    Ok(TrainReport {
        checkpoint: model,
        losses,
    })
}
