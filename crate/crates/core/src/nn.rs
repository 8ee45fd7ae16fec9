//! Layer kernels with hand-written backward passes.
//!
//! Each forward returns whatever the matching backward needs; nothing is
//! recorded globally. Backward functions accumulate parameter gradients into
//! a gradient struct of the same shape as the parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Affine map `x · weight + bias` with `weight` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor2::zeros(input, output),
            bias: Tensor2::zeros(1, output),
        }
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: Tensor2::from_fn(input, output, |_, _| rng.gen_range(-bound..bound)),
            bias: Tensor2::from_fn(1, output, |_, _| rng.gen_range(-bound..bound)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        linear(x, &self.weight, &self.bias)
    }

    /// Accumulates weight/bias gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Tensor2, dy: &Tensor2, grad: &mut Linear) -> Result<Tensor2> {
        grad.weight.add_assign(&x.matmul_tn(dy)?);
        grad.bias.add_assign(&dy.col_sums());
        dy.matmul_nt(&self.weight)
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn linear(h: &Tensor2, weight: &Tensor2, bias: &Tensor2) -> Result<Tensor2> {
    if bias.shape() != (1, weight.cols()) {
        return Err(Error::dims("linear bias", format!("1x{}", weight.cols()), format!("{:?}", bias.shape())));
    }
    let mut out = h.matmul(weight)?;
    out.add_row_broadcast(bias);
    Ok(out)
}

pub fn relu(h: &Tensor2) -> Tensor2 {
    h.map(|v| v.max(0.0))
}

/// Passes `dy` where the pre-activation was strictly positive.
pub fn relu_backward(pre: &Tensor2, dy: &Tensor2) -> Tensor2 {
    pre.zip_map(dy, |p, g| if p > 0.0 { g } else { 0.0 })
}

/// Per-entry multipliers applied by dropout: `0` for dropped entries,
/// `1/(1 − rate)` for kept ones. `None` means identity.
#[derive(Debug, Clone, Default)]
pub struct DropoutMask(Option<Tensor2>);

impl DropoutMask {
    pub fn apply(&self, dy: &Tensor2) -> Tensor2 {
        match &self.0 {
            Some(m) => m.zip_map(dy, |a, b| a * b),
            None => dy.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }
}

/// Inverted dropout. Identity in eval mode or when `rate == 0`.
pub fn dropout<R: Rng>(h: &Tensor2, rate: f64, train: bool, rng: &mut R) -> (Tensor2, DropoutMask) {
    if !train || rate <= 0.0 {
        return (h.clone(), DropoutMask(None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor2::from_fn(h.rows(), h.cols(), |_, _| if rng.gen::<f64>() < rate { 0.0 } else { keep });
    (h.zip_map(&mask, |a, b| a * b), DropoutMask(Some(mask)))
}

/// Symmetric `d × d` weight parametrizations.
///
/// `DiagDominant` realizes `W_ij = (M_ij + M_ji)/2` off the diagonal and
/// `W_ii = tanh(gate_i) · Σ_{j≠i} |W_ij| + residual_i` on it, so the gate
/// controls how strongly the diagonal dominates each row. The diagonal of
/// `m` does not enter the realized matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum SymmetricWeight {
    DiagDominant {
        m: Tensor2,
        gate: Tensor2,
        residual: Tensor2,
    },
    Plain {
        m: Tensor2,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SymmetricKind {
    #[default]
    DiagDominant,
    Plain,
}

impl SymmetricWeight {
    pub fn zeros(kind: SymmetricKind, d: usize) -> Self {
        match kind {
            SymmetricKind::DiagDominant => SymmetricWeight::DiagDominant {
                m: Tensor2::zeros(d, d),
                gate: Tensor2::zeros(1, d),
                residual: Tensor2::zeros(1, d),
            },
            SymmetricKind::Plain => SymmetricWeight::Plain { m: Tensor2::zeros(d, d) },
        }
    }

    pub fn init<R: Rng>(kind: SymmetricKind, d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d.max(1) as f64).sqrt();
        let mut w = Self::zeros(kind, d);
        match &mut w {
            SymmetricWeight::DiagDominant { m, gate, residual } => {
                m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                gate.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                residual.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
            SymmetricWeight::Plain { m } => {
                m.as_mut_slice().iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
            }
        }
        w
    }

    pub fn kind(&self) -> SymmetricKind {
        match self {
            SymmetricWeight::DiagDominant { .. } => SymmetricKind::DiagDominant,
            SymmetricWeight::Plain { .. } => SymmetricKind::Plain,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymmetricWeight::DiagDominant { m, .. } | SymmetricWeight::Plain { m } => m.rows(),
        }
    }

    pub fn realize(&self) -> Tensor2 {
        match self {
            SymmetricWeight::Plain { m } => symmetrize(m),
            SymmetricWeight::DiagDominant { m, gate, residual } => {
                let mut w = symmetrize(m);
                let d = w.rows();
                for i in 0..d {
                    let off: f64 = (0..d).filter(|&j| j != i).map(|j| w[(i, j)].abs()).sum();
                    w[(i, i)] = gate.as_slice()[i].tanh() * off + residual.as_slice()[i];
                }
                w
            }
        }
    }

    /// Chain rule from `dL/dW` (entries treated independently) to the raw parameters.
    pub fn backward(&self, grad_w: &Tensor2, grad: &mut SymmetricWeight) {
        let d = self.dim();
        match (self, grad) {
            (SymmetricWeight::Plain { .. }, SymmetricWeight::Plain { m: gm }) => {
                for i in 0..d {
                    for j in 0..d {
                        gm[(i, j)] += 0.5 * (grad_w[(i, j)] + grad_w[(j, i)]);
                    }
                }
            }
            (
                SymmetricWeight::DiagDominant { m, gate, .. },
                SymmetricWeight::DiagDominant {
                    m: gm,
                    gate: gg,
                    residual: gr,
                },
            ) => {
                let t: Vec<f64> = gate.as_slice().iter().map(|q| q.tanh()).collect();
                for i in 0..d {
                    let gii = grad_w[(i, i)];
                    gr.as_mut_slice()[i] += gii;
                    let mut off = 0.0;
                    for j in 0..d {
                        if j == i {
                            continue;
                        }
                        let s = 0.5 * (m[(i, j)] + m[(j, i)]);
                        off += s.abs();
                        // sign(0) = 0 by convention
                        let sign = if s > 0.0 {
                            1.0
                        } else if s < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        // M_ij feeds W_ij, W_ji, and the diagonals W_ii, W_jj via |S_ij|.
                        gm[(i, j)] += 0.5 * (grad_w[(i, j)] + grad_w[(j, i)])
                            + 0.5 * sign * (t[i] * gii + t[j] * grad_w[(j, j)]);
                    }
                    gg.as_mut_slice()[i] += gii * (1.0 - t[i] * t[i]) * off;
                }
            }
            _ => panic!("gradient parametrization does not match parameters"),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor2)> {
        match self {
            SymmetricWeight::DiagDominant { m, gate, residual } => vec![("m", m), ("gate", gate), ("residual", residual)],
            SymmetricWeight::Plain { m } => vec![("m", m)],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        match self {
            SymmetricWeight::DiagDominant { m, gate, residual } => vec![m, gate, residual],
            SymmetricWeight::Plain { m } => vec![m],
        }
    }
}

/// `(M + Mᵀ)/2`, with each off-diagonal pair computed once so the result is bitwise symmetric.
pub fn symmetrize(m: &Tensor2) -> Tensor2 {
    let d = m.rows();
    let mut w = Tensor2::zeros(d, d);
    for i in 0..d {
        w[(i, i)] = m[(i, i)];
        for j in i + 1..d {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            w[(i, j)] = s;
            w[(j, i)] = s;
        }
    }
    w
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor2,
    pub beta: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormRunning {
    pub fn new(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            var: vec![1.0; d],
        }
    }

    /// Exponential update with the batch mean and unbiased batch variance.
    pub fn update(&mut self, cache: &BatchNormCache) {
        let n = cache.x_hat.rows() as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for k in 0..self.mean.len() {
            self.mean[k] = (1.0 - BN_MOMENTUM) * self.mean[k] + BN_MOMENTUM * cache.mean[k];
            self.var[k] = (1.0 - BN_MOMENTUM) * self.var[k] + BN_MOMENTUM * cache.var[k] * correction;
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Tensor2,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    /// False when running statistics were used; backward then treats them as constants.
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor2::filled(1, d, 1.0),
            beta: Tensor2::zeros(1, d),
        }
    }

    pub fn forward(&self, x: &Tensor2, train: bool, running: &BatchNormRunning) -> (Tensor2, BatchNormCache) {
        let (n, d) = x.shape();
        let (mean, var) = if train && n > 0 {
            let mut mean = vec![0.0; d];
            let mut var = vec![0.0; d];
            for r in 0..n {
                for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            for r in 0..n {
                for ((s, &v), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= n as f64);
            (mean, var)
        } else {
            (running.mean.clone(), running.var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let x_hat = Tensor2::from_fn(n, d, |r, c| (x[(r, c)] - mean[c]) * inv_std[c]);
        let g = self.gamma.as_slice();
        let b = self.beta.as_slice();
        let y = Tensor2::from_fn(n, d, |r, c| g[c] * x_hat[(r, c)] + b[c]);
        (
            y,
            BatchNormCache {
                x_hat,
                inv_std,
                mean,
                var,
                batch_stats: train && n > 0,
            },
        )
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor2, grad: &mut BatchNorm) -> Tensor2 {
        let (n, d) = dy.shape();
        let g = self.gamma.as_slice();
        let mut sum_dxh = vec![0.0; d];
        let mut sum_dxh_xh = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let dyv = dy[(r, c)];
                let xh = cache.x_hat[(r, c)];
                grad.gamma.as_mut_slice()[c] += dyv * xh;
                grad.beta.as_mut_slice()[c] += dyv;
                let dxh = dyv * g[c];
                sum_dxh[c] += dxh;
                sum_dxh_xh[c] += dxh * xh;
            }
        }
        if !cache.batch_stats {
            return Tensor2::from_fn(n, d, |r, c| dy[(r, c)] * g[c] * cache.inv_std[c]);
        }
        let nf = n as f64;
        Tensor2::from_fn(n, d, |r, c| {
            let dxh = dy[(r, c)] * g[c];
            cache.inv_std[c] / nf * (nf * dxh - sum_dxh[c] - cache.x_hat[(r, c)] * sum_dxh_xh[c])
        })
    }
}

/// Mean binary cross-entropy on logits and its gradient with respect to each logit.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::dims("bce_with_logits", logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(Error::InvalidConfig("bce_with_logits on an empty batch".into()));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.iter().zip(labels) {
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - y) / n);
    }
    Ok((loss / n, grad))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
