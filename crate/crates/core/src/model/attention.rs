use super::config::ModelConfig;
use super::params::LayerWeights;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{GradTape, Tensor, Var};

/// Receives `(head, attention matrix)` for every head of one MSA call.
pub type AttentionObserver<'a, T> = dyn FnMut(usize, &Tensor<T>) + 'a;

/// Scaled dot-product attention for one head.
///
/// `Q = y·W_q`, `K = y·W_k`, `V = y·W_v`, `A = softmax(Q·Kᵀ · factor)`,
/// output `A·V`. Returns `(output, A)`.
pub fn self_attention_head<T: Scalar>(
    tape: &mut GradTape<T>,
    y: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    factor: f64,
) -> Result<(Var, Var)> {
    let q = tape.matmul(y, w_q)?;
    let k = tape.matmul(y, w_k)?;
    let v = tape.matmul(y, w_v)?;
    attend(tape, q, k, v, factor)
}

fn attend<T: Scalar>(tape: &mut GradTape<T>, q: Var, k: Var, v: Var, factor: f64) -> Result<(Var, Var)> {
    let scores = tape.matmul_nt(q, k)?;
    let scaled = tape.scale(scores, factor)?;
    let weights = tape.softmax(scaled)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head self-attention.
///
/// Head `i` uses columns `i·d_h .. (i+1)·d_h` of `W_q`, `W_k` and `W_v`
/// (`d_h = D / heads`); the head outputs are concatenated in head order and
/// projected by `W_o`.
pub fn msa<T: Scalar>(
    tape: &mut GradTape<T>,
    y: Var,
    layer: &LayerWeights<Var>,
    config: &ModelConfig,
    mut observer: Option<&mut AttentionObserver<'_, T>>,
) -> Result<Var> {
    let dh = config.head_dim();
    let factor = config.attention_factor();
    let q = tape.matmul(y, layer.w_q)?;
    let k = tape.matmul(y, layer.w_k)?;
    let v = tape.matmul(y, layer.w_v)?;
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let (out, weights) = attend(tape, qh, kh, vh, factor)?;
        if let Some(obs) = observer.as_deref_mut() {
            obs(h, tape.value(weights));
        }
        heads.push(out);
    }
    let concat = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    tape.matmul(concat, layer.w_o)
}
