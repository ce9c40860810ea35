use serde::{Deserialize, Serialize};

use crate::backbone::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Momentum buffers (one per parameter, same shapes) and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub momentum: f64,
    pub buffers: Vec<Tensor>,
    pub step: usize,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct SgdMeta {
    pub momentum: f64,
    pub step: usize,
}

impl SgdState {
    pub fn new(params: &ParamStore, momentum: f64) -> Self {
        Self {
            momentum,
            buffers: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }
}

/// Classic momentum: `v ← μ·v + g`, `p ← p − lr·v`.
pub fn sgd_step(params: &mut ParamStore, grads: &[Tensor], state: &mut SgdState, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.buffers.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "sgd_step: {} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.buffers.len()
        )));
    }
    for ((p, g), v) in params.tensors().zip(grads).zip(&state.buffers) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
    }
    let mu = state.momentum;
    for ((p, g), v) in params.tensors_mut().zip(grads).zip(&mut state.buffers) {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        ParamStore::from_entries(vec![("w".into(), Tensor::scalar(value))])
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = single(1.0);
        let mut s = SgdState::new(&p, 0.0);
        sgd_step(&mut p, &[Tensor::scalar(2.0)], &mut s, 0.1).unwrap();
        assert!((p.get("w").unwrap().item().unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_decays_buffers() {
        let mut p = single(1.0);
        let mut s = SgdState::new(&p, 0.9);
        s.buffers[0] = Tensor::scalar(2.0);
        sgd_step(&mut p, &[Tensor::scalar(0.0)], &mut s, 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().item().unwrap(), 1.0);
        assert!((s.buffers[0].item().unwrap() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_recurrence() {
        // v1 = g = 1, p1 = 1 − 0.1 = 0.9
        // v2 = 0.9·1 + 1 = 1.9, p2 = 0.9 − 0.19 = 0.71
        let mut p = single(1.0);
        let mut s = SgdState::new(&p, 0.9);
        let g = [Tensor::scalar(1.0)];
        sgd_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!((s.buffers[0].item().unwrap() - 1.0).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!((s.buffers[0].item().unwrap() - 1.9).abs() < 1e-15);
        assert!((p.get("w").unwrap().item().unwrap() - 0.71).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = single(1.0);
        let mut s = SgdState::new(&p, 0.9);
        let err = sgd_step(&mut p, &[Tensor::zeros(&[2])], &mut s, 0.1);
        assert!(err.is_err());
        assert_eq!(s.step, 0);
    }
}
