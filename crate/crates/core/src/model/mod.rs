//! Spatio-temporal video transformer.
//!
//! A clip is cut into tubelets, each projected to a `D`-dim token. A CLS
//! token is prepended, a learned positional table added, and the sequence
//! runs through `L` pre-norm encoder blocks:
//!
//! ```text
//! Y   = y + MSA(LN(y))
//! out = Y + MLP(LN(Y))        MLP = dense(D → rD) · GeLU · dense(rD → D)
//! ```
//!
//! The head reads only the final CLS row.

mod attention;
mod config;
mod embed;
mod params;

pub use attention::{msa, self_attention_head, AttentionObserver};
pub use config::{tubelet_grid, AttentionScale, HeadVariant, InputShape, ModelConfig, Tubelet, TubeletGrid};
pub use embed::{assemble_sequence, extract_tubelets, tubelet_embed};
pub use params::{init_params, layout, HeadWeights, Init, LayerWeights, ModelParams, ParamVars, Weights, INIT_STD};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{GradTape, Tensor, Var};
use crate::vision::VideoClip;

/// Receives `(layer, head, attention matrix)`.
pub type AttentionHook<'a, T> = dyn FnMut(usize, usize, &Tensor<T>) + 'a;
/// May rewrite the final sequence before the head reads it.
pub type FinalTokensHook<'a, T> = dyn FnMut(&mut Tensor<T>) + 'a;

/// Instrumentation for a forward pass.
#[derive(Default)]
pub struct ForwardHooks<'a, T> {
    pub attention: Option<&'a mut AttentionHook<'a, T>>,
    /// The rewritten value is recorded as a constant, so gradients stop there.
    pub final_tokens: Option<&'a mut FinalTokensHook<'a, T>>,
}

/// `y + MSA(LN(y))` followed by `Y + MLP(LN(Y))`.
pub fn encoder_block<T: Scalar>(
    tape: &mut GradTape<T>,
    y: Var,
    layer: &LayerWeights<Var>,
    config: &ModelConfig,
    observer: Option<&mut AttentionObserver<'_, T>>,
) -> Result<Var> {
    let eps = config.ln_eps;
    let n1 = tape.layer_norm(y, layer.ln1_gain, layer.ln1_bias, eps)?;
    let attn = msa(tape, n1, layer, config, observer)?;
    let mid = tape.add(y, attn)?;

    let n2 = tape.layer_norm(mid, layer.ln2_gain, layer.ln2_bias, eps)?;
    let h = tape.matmul(n2, layer.mlp_w1)?;
    let h = tape.add_row(h, layer.mlp_b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, layer.mlp_w2)?;
    let h = tape.add_row(h, layer.mlp_b2)?;
    tape.add(mid, h)
}

/// Runs the encoder stack on embedded tokens (`N × D`, no CLS) and returns
/// the final `(N + 1) × D` sequence.
pub fn encode<T: Scalar>(
    tape: &mut GradTape<T>,
    vars: &ParamVars,
    config: &ModelConfig,
    tokens: Var,
    hooks: &mut ForwardHooks<'_, T>,
) -> Result<Var> {
    let mut y = assemble_sequence(tape, tokens, vars.cls_token, vars.pos_embed)?;
    for (li, layer) in vars.layers.iter().enumerate() {
        let y_next = match hooks.attention.as_deref_mut() {
            Some(hook) => {
                let mut obs = |h: usize, a: &Tensor<T>| hook(li, h, a);
                encoder_block(tape, y, layer, config, Some(&mut obs))?
            }
            None => encoder_block(tape, y, layer, config, None)?,
        };
        y = y_next;
    }
    Ok(y)
}

/// Logits (`1 × classes`) from the CLS row of the final sequence.
pub fn head_logits<T: Scalar>(tape: &mut GradTape<T>, vars: &ParamVars, final_seq: Var) -> Result<Var> {
    let c0 = tape.slice_rows(final_seq, 0, 1)?;
    match &vars.head {
        HeadWeights::Linear { weight, bias } => {
            let z = tape.matmul(c0, *weight)?;
            tape.add_row(z, *bias)
        }
        HeadWeights::TanhHidden {
            hidden_w,
            hidden_b,
            out_w,
            out_b,
        } => {
            let h = tape.matmul(c0, *hidden_w)?;
            let h = tape.add_row(h, *hidden_b)?;
            let h = tape.tanh(h)?;
            let z = tape.matmul(h, *out_w)?;
            tape.add_row(z, *out_b)
        }
    }
}

/// Full forward pass of one clip; returns `1 × classes` logits.
pub fn forward_logits<T: Scalar>(
    tape: &mut GradTape<T>,
    vars: &ParamVars,
    config: &ModelConfig,
    clip: &VideoClip,
    hooks: &mut ForwardHooks<'_, T>,
) -> Result<Var> {
    let patches = tape.constant(extract_tubelets(clip, config)?);
    let tokens = tubelet_embed(tape, patches, vars)?;
    let mut final_seq = encode(tape, vars, config, tokens, hooks)?;
    if let Some(hook) = hooks.final_tokens.as_deref_mut() {
        let mut v = tape.value(final_seq).clone();
        hook(&mut v);
        final_seq = tape.constant(v);
    }
    head_logits(tape, vars, final_seq)
}

/// Class probabilities for one clip, index order `[violent, non-violent]`.
pub fn classify<T: Scalar>(clip: &VideoClip, params: &ModelParams<T>, config: &ModelConfig) -> Result<Vec<T>> {
    Model::from_parts(config.clone(), params.clone())?.classify(clip)
}

/// Config and parameters together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn logits_with(&self, clip: &VideoClip, hooks: &mut ForwardHooks<'_, T>) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let vars = self.params.record_constant(&mut tape);
        let z = forward_logits(&mut tape, &vars, &self.config, clip, hooks)?;
        Ok(tape.value(z).clone())
    }

    pub fn logits(&self, clip: &VideoClip) -> Result<Tensor<T>> {
        self.logits_with(clip, &mut ForwardHooks::default())
    }

    pub fn classify(&self, clip: &VideoClip) -> Result<Vec<T>> {
        Ok(self.logits(clip)?.softmax(1)?.into_data())
    }

    /// Embedded tokens (`N × D`) before CLS and positions are added.
    pub fn embed_tokens(&self, clip: &VideoClip) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let vars = self.params.record_constant(&mut tape);
        let patches = tape.constant(extract_tubelets(clip, &self.config)?);
        let tokens = tubelet_embed(&mut tape, patches, &vars)?;
        Ok(tape.value(tokens).clone())
    }

    /// Final encoder sequence for already-embedded tokens.
    pub fn encode_tokens(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = GradTape::new();
        let vars = self.params.record_constant(&mut tape);
        let t = tape.constant(tokens.clone());
        let out = encode(&mut tape, &vars, &self.config, t, &mut ForwardHooks::default())?;
        Ok(tape.value(out).clone())
    }

    /// Every attention matrix of a forward pass as `(layer, head, matrix)`.
    pub fn attention_maps(&self, clip: &VideoClip) -> Result<Vec<(usize, usize, Tensor<T>)>> {
        let mut maps = Vec::new();
        let mut record = |l: usize, h: usize, a: &Tensor<T>| maps.push((l, h, a.clone()));
        self.logits_with(
            clip,
            &mut ForwardHooks {
                attention: Some(&mut record),
                final_tokens: None,
            },
        )?;
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::{Frame, Label};

    fn random_clip(cfg: &ModelConfig, seed: u64) -> VideoClip {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(seed);
        let s = cfg.input;
        let frames = (0..s.frames)
            .map(|_| {
                let n = s.height * s.width * s.channels;
                Frame::new(s.height, s.width, s.channels, (0..n).map(|_| rng.random()).collect()).unwrap()
            })
            .collect();
        VideoClip::new(frames, Some(Label::NonViolent), format!("r{seed}")).unwrap()
    }

    #[test]
    fn zeroed_block_is_pass_through() {
        let cfg = ModelConfig::tiny();
        let mut params = init_params::<f64>(&cfg, 2).unwrap();
        for l in params.layers.iter_mut() {
            for t in [
                &mut l.ln1_gain,
                &mut l.ln2_gain,
                &mut l.w_q,
                &mut l.w_k,
                &mut l.w_v,
                &mut l.w_o,
                &mut l.mlp_w1,
                &mut l.mlp_w2,
            ] {
                *t = Tensor::zeros(t.shape());
            }
        }
        let mut tape = GradTape::new();
        let vars = params.record_constant(&mut tape);
        let y = tape.constant(params.pos_embed.clone());
        let out = encoder_block(&mut tape, y, &vars.layers[0], &cfg, None).unwrap();
        assert_eq!(tape.value(out), &params.pos_embed);
    }

    #[test]
    fn zero_head_predicts_uniform() {
        let cfg = ModelConfig::tiny();
        let mut m = Model::<f64>::new(cfg.clone(), 3).unwrap();
        m.params.zero_head();
        let p = m.classify(&random_clip(&cfg, 1)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = ModelConfig {
            head: HeadVariant::TanhHidden,
            ..ModelConfig::tiny()
        };
        let m = Model::<f32>::new(cfg.clone(), 4).unwrap();
        for s in 0..4 {
            let p = m.classify(&random_clip(&cfg, s)).unwrap();
            assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn head_reads_only_cls_row() {
        let cfg = ModelConfig::tiny();
        let m = Model::<f64>::new(cfg.clone(), 5).unwrap();
        let clip = random_clip(&cfg, 2);
        let base = m.logits(&clip).unwrap();
        let mut scramble = |t: &mut Tensor<f64>| {
            let d = t.shape()[1];
            for v in &mut t.data_mut()[d..] {
                *v = -*v * 3.0 + 1.0;
            }
        };
        let perturbed = m
            .logits_with(
                &clip,
                &mut ForwardHooks {
                    attention: None,
                    final_tokens: Some(&mut scramble),
                },
            )
            .unwrap();
        assert_eq!(base, perturbed);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let cfg = ModelConfig::tiny();
        let m = Model::<f32>::new(cfg.clone(), 6).unwrap();
        let clip = random_clip(&cfg, 3);
        let a = m.logits(&clip).unwrap();
        let b = m.logits(&clip).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn attention_maps_cover_every_layer_and_head() {
        let cfg = ModelConfig::tiny();
        let m = Model::<f64>::new(cfg.clone(), 7).unwrap();
        let maps = m.attention_maps(&random_clip(&cfg, 4)).unwrap();
        assert_eq!(maps.len(), cfg.layers * cfg.heads);
        let seq = cfg.sequence_len().unwrap();
        for (_, _, a) in &maps {
            assert_eq!(a.shape(), &[seq, seq]);
        }
    }
}
