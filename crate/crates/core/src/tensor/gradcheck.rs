//! Central finite-difference verification of [`GradTape::backward`].

use super::{GradTape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Tensors with more elements than this are checked on an evenly
    /// strided subset of this many coordinates.
    pub max_coords_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_coords_per_tensor: 10_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coords_checked: usize,
}

/// Compares backward gradients of `f` against `(f(p+h) − f(p−h)) / 2h`.
///
/// `f` receives a fresh tape and one var per entry of `params`, and must
/// return a scalar var. Relative error is `|a−b| / max(|a|, |b|, 1e-8)`.
pub fn check_gradients<T, F>(f: F, params: &[Tensor<T>], step: f64) -> Result<GradCheck>
where
    T: Scalar,
    F: Fn(&mut GradTape<T>, &[Var]) -> Result<Var>,
{
    check_gradients_with(
        f,
        params,
        &GradCheckOptions {
            step,
            ..Default::default()
        },
    )
}

pub fn check_gradients_with<T, F>(f: F, params: &[Tensor<T>], opts: &GradCheckOptions) -> Result<GradCheck>
where
    T: Scalar,
    F: Fn(&mut GradTape<T>, &[Var]) -> Result<Var>,
{
    if !(opts.step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    for p in params {
        p.ensure_finite("check_gradients input")?;
    }

    let forward = |ps: &[Tensor<T>]| -> Result<f64> {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::Gradient(format!("function output has shape {:?}", v.shape())));
        }
        Ok(v.item().as_f64())
    };

    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.value(out).item().as_f64();
    if forward(params)?.to_bits() != base.to_bits() {
        return Err(Error::Gradient("function is not deterministic".into()));
    }
    let grads = tape.backward(out)?;

    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let h = T::lit(opts.step);
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .ok_or_else(|| Error::Gradient(format!("no gradient for parameter {pi}")))?
            .clone();
        let n = analytic.numel();
        let stride = n.div_ceil(opts.max_coords_per_tensor.max(1)).max(1);
        for coord in (0..n).step_by(stride) {
            let orig = work[pi].data()[coord];
            work[pi].data_mut()[coord] = orig + h;
            let up = forward(&work)?;
            work[pi].data_mut()[coord] = orig - h;
            let down = forward(&work)?;
            work[pi].data_mut()[coord] = orig;
            // Use the step actually representable in T.
            let span = ((orig + h) - (orig - h)).as_f64();
            let numeric = (up - down) / span;
            let a = analytic.data()[coord].as_f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err;
                report.worst = Some((pi, coord));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let report = check_gradients(
            |tape, vs| {
                let sq = tape.mul(vs[0], vs[0])?;
                tape.sum(sq)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 2);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let report = check_gradients(
            |tape, vs| {
                let z = tape.scale(vs[0], 0.0)?;
                let s = tape.sum(z)?;
                let c = tape.constant(Tensor::scalar(4.0));
                tape.add(s, c)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn nondeterministic_function_is_detected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::<f64>::ones(&[1]);
        let err = check_gradients(
            |tape, vs| {
                calls.set(calls.get() + 1.0);
                let s = tape.sum(vs[0])?;
                let c = tape.constant(Tensor::scalar(calls.get()));
                tape.add(s, c)
            },
            &[x],
            1e-4,
        )
        .unwrap_err();
        assert!(err.to_string().contains("deterministic"));
    }

    #[test]
    fn large_tensors_are_sampled() {
        let x = Tensor::<f64>::ones(&[100]);
        let report = check_gradients_with(
            |tape, vs| tape.sum(vs[0]),
            &[x],
            &GradCheckOptions {
                step: 1e-4,
                max_coords_per_tensor: 10,
            },
        )
        .unwrap();
        assert_eq!(report.coords_checked, 10);
    }
}
