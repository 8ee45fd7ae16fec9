//! Adam with decoupled weight decay, and the parameter-collection trait it
//! (and the gradient checker, and checkpoints) iterate over.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// A fixed, ordered collection of named parameter tensors.
///
/// Gradients are represented by a value of the same type, so the order of
/// `tensors` and `tensors_mut` must agree.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<(String, &Tensor2)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor2>;

    fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl AdamState {
    pub fn new<P: ParamTensors>(params: &P, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor2> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor2::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One optimizer step: `p ← p − α·γ·p`, then the bias-corrected Adam update.
pub fn adam_step<P: ParamTensors>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    if grads.len() != params.len() || params.len() != state.m.len() {
        return Err(Error::dims("adam_step tensors", state.m.len(), params.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    for (k, p) in params.iter_mut().enumerate() {
        let g = grads[k].1;
        if g.shape() != p.shape() {
            return Err(Error::dims("adam_step shape", format!("{:?}", p.shape()), format!("{:?}", g.shape())));
        }
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (i, (pv, &gv)) in p.as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
            *pv *= decay;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gv;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gv * gv;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *pv -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
