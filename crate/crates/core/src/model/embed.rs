use super::config::ModelConfig;
use super::params::ParamVars;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GradTape, Tensor, Var};
use crate::vision::VideoClip;

/// Cuts the clip into non-overlapping tubelets, one flattened row per token.
///
/// Rows are ordered time-major, then height, then width. Within a row,
/// voxels are laid out (time, height, width, channel). Voxels past the last
/// whole tubelet on any axis are discarded.
pub fn extract_tubelets<T: Scalar>(clip: &VideoClip, config: &ModelConfig) -> Result<Tensor<T>> {
    let want = config.input.as_tuple();
    let have = clip.shape();
    if have != want {
        return Err(Error::Shape {
            op: "clip vs model input",
            lhs: vec![have.0, have.1, have.2, have.3],
            rhs: vec![want.0, want.1, want.2, want.3],
        });
    }
    let grid = config.grid()?;
    let tb = config.tubelet;
    let c = config.input.channels;
    let vol = config.tubelet_volume();
    let mut data = Vec::with_capacity(grid.tokens() * vol);
    for it in 0..grid.n_t {
        for ih in 0..grid.n_h {
            for iw in 0..grid.n_w {
                for dt in 0..tb.t {
                    let frame = &clip.frames[it * tb.t + dt];
                    for dy in 0..tb.h {
                        for dx in 0..tb.w {
                            for ch in 0..c {
                                data.push(T::lit(frame.at(ih * tb.h + dy, iw * tb.w + dx, ch) as f64));
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![grid.tokens(), vol], data)
}

/// Linear projection of tubelet rows: `patches · embed_weight + embed_bias`.
pub fn tubelet_embed<T: Scalar>(tape: &mut GradTape<T>, patches: Var, w: &ParamVars) -> Result<Var> {
    let proj = tape.matmul(patches, w.embed_weight)?;
    tape.add_row(proj, w.embed_bias)
}

/// Prepends the CLS token and adds the positional table to every row.
pub fn assemble_sequence<T: Scalar>(tape: &mut GradTape<T>, tokens: Var, cls: Var, pos: Var) -> Result<Var> {
    let n = tape.value(tokens).dims2()?.0;
    let pos_rows = tape.value(pos).dims2()?.0;
    if pos_rows != n + 1 {
        return Err(Error::Shape {
            op: "positional table vs token count + 1",
            lhs: tape.value(pos).shape().to_vec(),
            rhs: vec![n + 1, tape.value(tokens).shape()[1]],
        });
    }
    let seq = tape.concat_rows(&[cls, tokens])?;
    tape.add(seq, pos)
}
