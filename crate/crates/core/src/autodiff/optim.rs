use serde::{Deserialize, Serialize};

use super::{DiffError, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to parameter `i`;
/// `None` leaves the parameter and its moments untouched, as do
/// non-trainable buffers.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), DiffError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(DiffError::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (ob1, ob2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step_size = T::of(cfg.lr / bc1);
    let bc2_sqrt = T::of(bc2.sqrt());
    let eps = T::of(cfg.eps);
    for (i, grad) in grads.iter().enumerate() {
        let (name, p) = params.at_mut(i);
        if !p.trainable {
            continue;
        }
        let Some(g) = grad else { continue };
        if g.shape() != p.tensor.shape() {
            return Err(DiffError::ShapeMismatch(format!(
                "adam: gradient {:?} for {name} {:?}",
                g.shape(),
                p.tensor.shape()
            )));
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gi), mi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + ob1 * gi;
            *vi = b2 * *vi + ob2 * gi * gi;
            *w = *w - step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x), true);
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(1.5);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Some(Tensor::scalar(0.0))], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("x").unwrap().tensor.item(), 1.5);
        assert_eq!(st.m[0].item(), 0.0);
        assert_eq!(st.v[0].item(), 0.0);
    }

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        for g in [3.0, -0.25] {
            let mut p = store(0.0);
            let mut st = AdamState::new(&p);
            let cfg = AdamConfig {
                lr: 0.1,
                ..Default::default()
            };
            adam_step(&mut p, &[Some(Tensor::scalar(g))], &mut st, &cfg).unwrap();
            // Bias-corrected first step is -lr * g / (|g| + eps).
            let expected = -0.1 * g / (g.abs() + 1e-8);
            assert!((p.get("x").unwrap().tensor.item() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut p = store(5.0);
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        for _ in 0..100 {
            let x = p.get("x").unwrap().tensor.item();
            adam_step(&mut p, &[Some(Tensor::scalar(2.0 * x))], &mut st, &cfg).unwrap();
        }
        assert!(p.get("x").unwrap().tensor.item().abs() < 0.5);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = store(1.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Some(Tensor::zeros(&[2]))], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(DiffError::ShapeMismatch(_))));
    }
}
