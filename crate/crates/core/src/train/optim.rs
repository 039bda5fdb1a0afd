//! Adaptive-moment optimizer with decoupled weight decay.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter name, plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamWState<T> {
    pub step: u64,
    moments: HashMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            moments: HashMap::new(),
        }
    }
}

/// One update of every named parameter.
///
/// `p ← p − lr·wd·p`, then the bias-corrected adaptive step
/// `p ← p − lr · m̂ / (√v̂ + ε)`.
pub fn optimizer_step<T: Scalar>(
    params: Vec<(String, &mut Tensor<T>)>,
    grads: &HashMap<String, Tensor<T>>,
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, p) in &params {
        match grads.get(name) {
            None => return Err(Error::Gradient(format!("missing gradient for {name}"))),
            Some(g) if g.shape() != p.shape() => return Err(Error::shape("optimizer gradient", g.shape(), p.shape())),
            Some(_) => {}
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    let decay = T::lit(1.0 - cfg.lr * cfg.weight_decay);
    let eps = T::lit(cfg.eps);

    for (name, p) in params {
        let g = &grads[&name];
        let (m, v) = state
            .moments
            .entry(name)
            .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + (one - b1) * gi;
            vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] = pd[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p: &mut Tensor<f64>, g: Tensor<f64>, state: &mut AdamWState<f64>, cfg: &AdamWConfig) -> Result<()> {
        let grads = HashMap::from([("p".to_owned(), g)]);
        optimizer_step(vec![("p".to_owned(), p)], &grads, state, cfg)
    }

    #[test]
    fn zero_gradients_no_decay_leave_params() {
        let mut p = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let mut s = AdamWState::new();
        for _ in 0..3 {
            run(&mut p, Tensor::zeros(&[3]), &mut s, &AdamWConfig::new(1e-3, 0.0)).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamWState::new();
        run(&mut p, Tensor::scalar(1.0), &mut s, &AdamWConfig::new(0.1, 0.0)).unwrap();
        // m̂ = v̂ = 1 ⇒ Δ = 0.1 / (1 + 1e-8)
        assert!((p.item() - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn decoupled_decay_shrinks_multiplicatively() {
        let mut p = Tensor::scalar(2.0);
        let mut s = AdamWState::new();
        let cfg = AdamWConfig::new(0.1, 0.01);
        for k in 1..=5 {
            run(&mut p, Tensor::scalar(0.0), &mut s, &cfg).unwrap();
            assert!((p.item() - 2.0 * (1.0f64 - 0.001).powi(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamWState::<f64>::new();
        let err = optimizer_step(
            vec![("w".to_owned(), &mut p)],
            &HashMap::new(),
            &mut s,
            &AdamWConfig::new(0.1, 0.0),
        );
        assert!(err.unwrap_err().to_string().contains("missing gradient for w"));
        assert_eq!(s.step, 0);
    }
}
