//! Tiny byte-level decoder-only transformer used as the pruning subject.

mod checkpoint;
mod config;
mod eval;
mod forward;
mod io;
mod train;

pub use checkpoint::{init_model, tensor_specs, LayerTensor, ModelCheckpoint, PrunableSet, Tensor};
pub use config::ModelConfig;
pub use eval::{corpus_nll, perplexity};
pub use forward::{forward, loss_and_grads, ActivationCache, Gradients};
pub(crate) use forward::{batch_loss_and_grads, forward_trace};
pub use io::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub(crate) use train::sample_windows;
pub use train::{train, train_with_report, TrainHyper, TrainReport};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::numerics::{nll_sum, Matrix};

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            ctx_len: 16,
            ..Default::default()
        }
    }

    #[test]
    fn single_token_logit_shape() {
        let ckpt = init_model(&ModelConfig::default()).unwrap();
        let (logits, cache) = forward(&ckpt, b"a", false).unwrap();
        assert_eq!(logits.shape(), (1, 256));
        assert!(cache.is_empty());
    }

    #[test]
    fn rejects_empty_and_overlong_sequences() {
        let ckpt = init_model(&small()).unwrap();
        assert!(matches!(forward(&ckpt, b"", false), Err(Error::Sequence(_))));
        assert!(matches!(forward(&ckpt, &[b'x'; 17], false), Err(Error::Sequence(_))));
        assert!(loss_and_grads(&ckpt, b"a").is_err());
    }

    #[test]
    fn causal_masking() {
        let ckpt = init_model(&small()).unwrap();
        let a = b"hello world!";
        let mut b = *a;
        b[7] = b'Q';
        b[11] = b'#';
        let (la, _) = forward(&ckpt, a, false).unwrap();
        let (lb, _) = forward(&ckpt, &b, false).unwrap();
        for t in 0..7 {
            assert_eq!(la.row(t), lb.row(t), "position {t}");
        }
        assert_ne!(la.row(7), lb.row(7));
    }

    #[test]
    fn capture_holds_inputs_for_every_prunable_matrix() {
        let ckpt = init_model(&small()).unwrap();
        let (_, cache) = forward(&ckpt, b"abcdef", true).unwrap();
        assert_eq!(cache.len(), ckpt.prunable_set().len());
        assert_eq!(cache.get("layers.0.attn_q").unwrap().shape(), (6, 16));
        assert_eq!(cache.get("layers.0.mlp_out").unwrap().shape(), (6, 64));
    }

    #[test]
    fn untrained_loss_is_near_uniform() {
        let ckpt = init_model(&ModelConfig::default()).unwrap();
        let (loss, grads) = loss_and_grads(&ckpt, b"The quick brown fox jumps over the lazy dog.").unwrap();
        assert!((loss - 256f64.ln()).abs() < 0.5, "loss {loss}");
        assert_eq!(grads.tensors().len(), ckpt.tensors().len());
    }

    #[test]
    fn uniform_logits_give_vocab_perplexity() {
        let mut ckpt = init_model(&small()).unwrap();
        let head = ckpt.tensors().iter().position(|t| t.name == "head").unwrap();
        ckpt.set_tensor(head, Matrix::zeros(16, 256)).unwrap();
        let corpus: Vec<u8> = (0..100u8).collect();
        let ppl = perplexity(&ckpt, &corpus).unwrap();
        assert!((ppl - 256.0).abs() < 1e-6, "{ppl}");
        assert!(perplexity(&ckpt, b"a").is_err());
    }

    #[test]
    fn perplexity_matches_direct_recomputation() {
        let ckpt = init_model(&small()).unwrap();
        let corpus: Vec<u8> = b"Blocks are cut at the context length; a short tail is kept.".to_vec();
        let ppl = perplexity(&ckpt, &corpus).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for block in corpus.chunks(16).filter(|b| b.len() >= 2) {
            let (logits, _) = forward(&ckpt, block, false).unwrap();
            let head = Matrix::from_vec(block.len() - 1, 256, logits.data()[..(block.len() - 1) * 256].to_vec()).unwrap();
            let targets: Vec<usize> = block[1..].iter().map(|&b| b as usize).collect();
            total += nll_sum(&head, &targets).unwrap();
            count += block.len() - 1;
        }
        let direct = (total / count as f64).exp();
        assert!((ppl - direct).abs() / direct < 1e-9);
    }

    #[test]
    fn training_zero_steps_is_init() {
        let cfg = small();
        let corpus: Vec<u8> = (0..2000).map(|i| (i % 251) as u8).collect();
        let hyper = TrainHyper {
            steps: 0,
            ..Default::default()
        };
        assert_eq!(train(&cfg, &corpus, &hyper).unwrap(), init_model(&cfg).unwrap());
        assert!(matches!(train(&cfg, &corpus[..100], &hyper), Err(Error::Corpus(_))));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let cfg = small();
        let corpus: Vec<u8> = b"abcabcabdabcabcabd".iter().cycle().take(4000).copied().collect();
        let hyper = TrainHyper {
            steps: 60,
            batch: 4,
            lr: 1e-2,
        };
        let a = train_with_report(&cfg, &corpus, &hyper, |_, _| {}).unwrap();
        let b = train(&cfg, &corpus, &hyper).unwrap();
        assert_eq!(a.checkpoint, b);
        assert!(a.final_loss().unwrap() < a.initial_loss().unwrap());
    }

    #[test]
    fn repeated_byte_perplexity_approaches_one() {
        let cfg = small();
        let corpus = vec![b'z'; 2000];
        let hyper = TrainHyper {
            steps: 150,
            batch: 2,
            lr: 1e-2,
        };
        let ckpt = train(&cfg, &corpus, &hyper).unwrap();
        let ppl = perplexity(&ckpt, &corpus[..500]).unwrap();
        assert!(ppl > 1.0 && ppl < 1.05, "{ppl}");
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            ctx_len: 16,
            ff_mult: 2,
            ..Default::default()
        };
        // Larger-than-init weights so attention and GELU leave their linear regime.
        let mut ckpt = init_model(&cfg).unwrap();
        let mut rng = crate::rng::Prng::new(11);
        for t in ckpt.tensors_mut() {
            let base = if t.name.ends_with(".gain") { 1.0 } else { 0.0 };
            for w in t.value.data_mut() {
                *w = base + 0.3 * rng.normal();
            }
        }
        let tokens = b"pack my box with";
        let (_, grads) = loss_and_grads(&ckpt, tokens).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..ckpt.tensors().len() {
            let n = ckpt.tensors()[i].value.len();
            for _ in 0..5 {
                let j = rng.below(n);
                let orig = ckpt.tensors()[i].value.data()[j];
                let mut at = |v: f64| {
                    ckpt.tensors_mut()[i].value.data_mut()[j] = v;
                    loss_and_grads(&ckpt, tokens).unwrap().0
                };
                let numeric = (at(orig + h) - at(orig - h)) / (2.0 * h);
                at(orig);
                let analytic = grads.tensors()[i].value.data()[j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel < 1e-3,
                    "{} [{j}]: analytic {analytic} numeric {numeric}",
                    ckpt.tensors()[i].name
                );
                worst = worst.max(rel);
            }
        }
        assert!(worst.is_finite());
    }
}
