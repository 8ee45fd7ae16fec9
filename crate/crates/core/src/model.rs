//! Encode → message passing → readout → decode, for GRAFF-LP and the GCN
//! and MLP baselines.
//!
//! The forward pass records exactly what the fixed-topology backward pass
//! needs. There is no general autodiff graph: the architecture family is
//! closed, so each stage has a matching hand-written backward.
//!
//! GRAFF-LP message passing is the residual update
//! `H ← H + τ σ(−H Ω + 𝔸 H W − H⁰ W̃)` with a diagonal `Ω`, a symmetric `W`
//! and a symmetric `W̃`, all shared by every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NormalizedAdjacency};
use crate::nn::{
    self, dropout, relu, relu_backward, BatchNorm, BatchNormCache, BatchNormRunning, DropoutMask, Linear,
    SymmetricKind, SymmetricWeight,
};
use crate::optim::ParamTensors;
use crate::tensor::{spmm, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Graff,
    Gcn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Hadamard,
    #[default]
    Gradient,
}

/// Nonlinearity inside the GRAFF-LP step. `Identity` turns the step into an
/// explicit Euler step of the linear gradient flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: &Tensor2) -> Tensor2 {
        match self {
            Activation::Relu => relu(x),
            Activation::Identity => x.clone(),
        }
    }

    fn backward(self, pre: &Tensor2, dy: &Tensor2) -> Tensor2 {
        match self {
            Activation::Relu => relu_backward(pre, dy),
            Activation::Identity => dy.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraffConfig {
    pub kind: ModelKind,
    /// Message-passing steps `L`.
    pub layers: usize,
    /// Step size `τ`.
    pub step_size: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub decoder_layers: usize,
    pub decoder_width: usize,
    pub decoder_dropout: f64,
    pub batch_norm: bool,
    pub readout: Readout,
    pub source_term: bool,
    pub symmetric: SymmetricKind,
    pub activation: Activation,
}

impl Default for GraffConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Graff,
            layers: 3,
            step_size: 0.25,
            hidden: 64,
            dropout: 0.1,
            decoder_layers: 1,
            decoder_width: 32,
            decoder_dropout: 0.1,
            batch_norm: false,
            readout: Readout::Gradient,
            source_term: true,
            symmetric: SymmetricKind::DiagDominant,
            activation: Activation::Relu,
        }
    }
}

impl GraffConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.kind == ModelKind::Graff && self.layers == 0 {
            return bad("GRAFF-LP needs at least one message-passing step");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size must be positive");
        }
        if self.hidden == 0 || (self.decoder_layers > 0 && self.decoder_width == 0) {
            return bad("widths must be at least 1");
        }
        for r in [self.dropout, self.decoder_dropout] {
            if !(0.0..1.0).contains(&r) {
                return bad("dropout rates must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraffParams {
    /// Diagonal of `Ω`, stored 1×d.
    pub omega: Tensor2,
    pub w: SymmetricWeight,
    /// Source-term weight `W̃`; `None` when the source term is disabled.
    pub w_source: Option<SymmetricWeight>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessagePassing {
    Graff(GraffParams),
    /// One unconstrained `d × d` matrix per layer.
    Gcn(Vec<Tensor2>),
    Mlp(Vec<Linear>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub hidden: Vec<DecoderLayer>,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Linear,
    pub mp: MessagePassing,
    pub decoder: Decoder,
}

impl ModelParams {
    /// Random initialization for `cfg` with input feature width `input_dim`.
    pub fn init(cfg: &GraffConfig, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.hidden;
        let encoder = Linear::init(input_dim, d, &mut rng);
        let mp = match cfg.kind {
            ModelKind::Graff => MessagePassing::Graff(GraffParams {
                omega: Tensor2::from_fn(1, d, |_, _| rng.gen_range(-0.1..0.1)),
                w: SymmetricWeight::init(cfg.symmetric, d, &mut rng),
                w_source: cfg
                    .source_term
                    .then(|| SymmetricWeight::init(SymmetricKind::Plain, d, &mut rng)),
            }),
            ModelKind::Gcn => {
                let bound = (6.0 / (2 * d) as f64).sqrt();
                MessagePassing::Gcn(
                    (0..cfg.layers)
                        .map(|_| Tensor2::from_fn(d, d, |_, _| rng.gen_range(-bound..bound)))
                        .collect(),
                )
            }
            ModelKind::Mlp => MessagePassing::Mlp((0..cfg.layers).map(|_| Linear::init(d, d, &mut rng)).collect()),
        };
        let mut width = d;
        let mut hidden = Vec::with_capacity(cfg.decoder_layers);
        for _ in 0..cfg.decoder_layers {
            hidden.push(DecoderLayer {
                linear: Linear::init(width, cfg.decoder_width, &mut rng),
                bn: cfg.batch_norm.then(|| BatchNorm::new(cfg.decoder_width)),
            });
            width = cfg.decoder_width;
        }
        let out = Linear::init(width, 1, &mut rng);
        ModelParams {
            encoder,
            mp,
            decoder: Decoder { hidden, out },
        }
    }

    /// All-zero tensors with the same layout, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Trainable scalars in the message-passing block only.
    pub fn message_passing_count(&self) -> usize {
        match &self.mp {
            MessagePassing::Graff(p) => {
                p.omega.len()
                    + p.w.tensors().iter().map(|(_, t)| t.len()).sum::<usize>()
                    + p.w_source
                        .as_ref()
                        .map_or(0, |w| w.tensors().iter().map(|(_, t)| t.len()).sum())
            }
            MessagePassing::Gcn(ws) => ws.iter().map(Tensor2::len).sum(),
            MessagePassing::Mlp(ls) => ls.iter().map(Linear::num_params).sum(),
        }
    }
}

impl ParamTensors for ModelParams {
    fn tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut out: Vec<(String, &Tensor2)> = vec![
            ("encoder.weight".into(), &self.encoder.weight),
            ("encoder.bias".into(), &self.encoder.bias),
        ];
        match &self.mp {
            MessagePassing::Graff(p) => {
                out.push(("mp.omega".into(), &p.omega));
                for (n, t) in p.w.tensors() {
                    out.push((format!("mp.w.{n}"), t));
                }
                if let Some(ws) = &p.w_source {
                    for (n, t) in ws.tensors() {
                        out.push((format!("mp.w_source.{n}"), t));
                    }
                }
            }
            MessagePassing::Gcn(ws) => {
                for (l, w) in ws.iter().enumerate() {
                    out.push((format!("mp.{l}.weight"), w));
                }
            }
            MessagePassing::Mlp(ls) => {
                for (l, lin) in ls.iter().enumerate() {
                    out.push((format!("mp.{l}.weight"), &lin.weight));
                    out.push((format!("mp.{l}.bias"), &lin.bias));
                }
            }
        }
        for (l, layer) in self.decoder.hidden.iter().enumerate() {
            out.push((format!("dec.{l}.weight"), &layer.linear.weight));
            out.push((format!("dec.{l}.bias"), &layer.linear.bias));
            if let Some(bn) = &layer.bn {
                out.push((format!("dec.{l}.bn.gamma"), &bn.gamma));
                out.push((format!("dec.{l}.bn.beta"), &bn.beta));
            }
        }
        out.push(("dec.out.weight".into(), &self.decoder.out.weight));
        out.push(("dec.out.bias".into(), &self.decoder.out.bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = vec![&mut self.encoder.weight, &mut self.encoder.bias];
        match &mut self.mp {
            MessagePassing::Graff(p) => {
                out.push(&mut p.omega);
                out.extend(p.w.tensors_mut());
                if let Some(ws) = &mut p.w_source {
                    out.extend(ws.tensors_mut());
                }
            }
            MessagePassing::Gcn(ws) => out.extend(ws.iter_mut()),
            MessagePassing::Mlp(ls) => {
                for lin in ls {
                    out.push(&mut lin.weight);
                    out.push(&mut lin.bias);
                }
            }
        }
        for layer in &mut self.decoder.hidden {
            out.push(&mut layer.linear.weight);
            out.push(&mut layer.linear.bias);
            if let Some(bn) = &mut layer.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.decoder.out.weight);
        out.push(&mut self.decoder.out.bias);
        out
    }
}

/// Hidden states `H⁰ … H^L` from one forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub states: Vec<Tensor2>,
}

impl LayerTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &Tensor2 {
        self.states.last().expect("trace holds at least H⁰")
    }
}

/// GRAFF-LP weights in the form the step consumes.
#[derive(Debug, Clone)]
pub struct RealizedGraff {
    pub omega: Vec<f64>,
    pub w: Tensor2,
    pub w_source: Option<Tensor2>,
    pub activation: Activation,
}

impl GraffParams {
    pub fn realize(&self, activation: Activation) -> RealizedGraff {
        RealizedGraff {
            omega: self.omega.as_slice().to_vec(),
            w: self.w.realize(),
            w_source: self.w_source.as_ref().map(SymmetricWeight::realize),
            activation,
        }
    }
}

struct StepOut {
    next: Tensor2,
    ah: Tensor2,
    pre: Tensor2,
}

fn graff_step_inner(h: &Tensor2, source: Option<&Tensor2>, adj: &NormalizedAdjacency, p: &RealizedGraff, tau: f64) -> Result<StepOut> {
    let ah = spmm(adj, h)?;
    let mut pre = ah.matmul(&p.w)?;
    pre.axpy(-1.0, &h.mul_cols(&p.omega));
    if let Some(s) = source {
        pre.axpy(-1.0, s);
    }
    let mut next = h.clone();
    next.axpy(tau, &p.activation.apply(&pre));
    Ok(StepOut { next, ah, pre })
}

/// One residual step `H^{t+τ} = H^t + τ σ(−H^t Ω + 𝔸 H^t W − H⁰ W̃)`.
pub fn graff_step(h: &Tensor2, h0: &Tensor2, adj: &NormalizedAdjacency, params: &RealizedGraff, tau: f64) -> Result<Tensor2> {
    let d = h.cols();
    if h0.shape() != h.shape() || params.w.shape() != (d, d) || params.omega.len() != d {
        return Err(Error::dims("graff_step", format!("{}x{d} states and {d}x{d} weights", h.rows()), format!("H⁰ {:?}, W {:?}", h0.shape(), params.w.shape())));
    }
    let source = match &params.w_source {
        Some(ws) => Some(h0.matmul(ws)?),
        None => None,
    };
    Ok(graff_step_inner(h, source.as_ref(), adj, params, tau)?.next)
}

pub fn readout_hadamard(zi: &[f64], zj: &[f64]) -> Vec<f64> {
    zi.iter().zip(zj).map(|(a, b)| a * b).collect()
}

/// Elementwise square of the edge gradient at the final state.
pub fn readout_gradient(h: &Tensor2, adj: &NormalizedAdjacency, i: usize, j: usize) -> Result<Vec<f64>> {
    Ok(crate::graph::edge_gradient(h, adj, i, j)?.into_iter().map(|g| g * g).collect())
}

fn readout_batch(kind: Readout, z: &Tensor2, adj: &NormalizedAdjacency, edges: &[Edge]) -> Result<Tensor2> {
    let d = z.cols();
    let mut out = Tensor2::zeros(edges.len(), d);
    for (k, e) in edges.iter().enumerate() {
        let (i, j) = (e.lo(), e.hi());
        if j >= z.rows() {
            return Err(Error::IndexOutOfRange { index: j, num_nodes: z.rows() });
        }
        let row = out.row_mut(k);
        match kind {
            Readout::Hadamard => {
                for ((o, &a), &b) in row.iter_mut().zip(z.row(i)).zip(z.row(j)) {
                    *o = a * b;
                }
            }
            Readout::Gradient => {
                let (si, sj) = (adj.scale(i), adj.scale(j));
                for ((o, &a), &b) in row.iter_mut().zip(z.row(i)).zip(z.row(j)) {
                    let g = sj * b - si * a;
                    *o = g * g;
                }
            }
        }
    }
    Ok(out)
}

fn readout_backward(kind: Readout, z: &Tensor2, adj: &NormalizedAdjacency, edges: &[Edge], dr: &Tensor2) -> Tensor2 {
    let mut dz = Tensor2::zeros(z.rows(), z.cols());
    for (k, e) in edges.iter().enumerate() {
        let (i, j) = (e.lo(), e.hi());
        let g = dr.row(k);
        match kind {
            Readout::Hadamard => {
                for c in 0..z.cols() {
                    let (zi, zj) = (z[(i, c)], z[(j, c)]);
                    dz[(i, c)] += g[c] * zj;
                    dz[(j, c)] += g[c] * zi;
                }
            }
            Readout::Gradient => {
                let (si, sj) = (adj.scale(i), adj.scale(j));
                for c in 0..z.cols() {
                    let de = 2.0 * (sj * z[(j, c)] - si * z[(i, c)]) * g[c];
                    dz[(j, c)] += sj * de;
                    dz[(i, c)] -= si * de;
                }
            }
        }
    }
    dz
}

enum StepCache {
    Graff { ah: Tensor2, pre: Tensor2 },
    Gcn { ah: Tensor2, pre: Tensor2 },
    Mlp { pre: Tensor2 },
}

struct NodeCache {
    enc_mask: DropoutMask,
    steps: Vec<StepCache>,
    realized: Option<RealizedGraff>,
    trace: LayerTrace,
}

struct DecoderLayerCache {
    input: Tensor2,
    bn: Option<BatchNormCache>,
    pre_act: Tensor2,
    mask: DropoutMask,
}

pub struct DecoderCache {
    layers: Vec<DecoderLayerCache>,
    out_input: Tensor2,
}

impl DecoderCache {
    /// Batch-norm statistics of this pass, in layer order.
    pub fn bn_caches(&self) -> impl Iterator<Item = &BatchNormCache> {
        self.layers.iter().filter_map(|l| l.bn.as_ref())
    }
}

/// A configured model with its parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: GraffConfig,
    pub params: ModelParams,
    pub bn_running: Vec<BatchNormRunning>,
}

/// Everything one training step produces.
pub struct LossGrad {
    pub loss: f64,
    pub grads: ModelParams,
    pub logits: Vec<f64>,
    pub decoder_cache: DecoderCache,
}

impl Model {
    pub fn new(cfg: GraffConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = ModelParams::init(&cfg, input_dim, seed);
        Self::from_params(cfg, params)
    }

    pub fn from_params(cfg: GraffConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        let bn_running = params
            .decoder
            .hidden
            .iter()
            .filter(|l| l.bn.is_some())
            .map(|l| BatchNormRunning::new(l.linear.output_dim()))
            .collect();
        Ok(Self { cfg, params, bn_running })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn input_dim(&self) -> usize {
        self.params.encoder.input_dim()
    }

    fn check_inputs(&self, x: &Tensor2, adj: &NormalizedAdjacency) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("model input features", self.input_dim(), x.cols()));
        }
        if x.rows() != adj.num_nodes() {
            return Err(Error::dims("model adjacency", x.rows(), adj.num_nodes()));
        }
        Ok(())
    }

    /// `H⁰ = dropout(X W_enc + b_enc)`
    pub fn encode<R: Rng>(&self, x: &Tensor2, train: bool, rng: &mut R) -> Result<Tensor2> {
        Ok(self.encode_inner(x, train, rng)?.0)
    }

    fn encode_inner<R: Rng>(&self, x: &Tensor2, train: bool, rng: &mut R) -> Result<(Tensor2, DropoutMask)> {
        let a = self.params.encoder.forward(x)?;
        Ok(dropout(&a, self.cfg.dropout, train, rng))
    }

    fn node_forward<R: Rng>(&self, x: &Tensor2, adj: &NormalizedAdjacency, train: bool, rng: &mut R) -> Result<NodeCache> {
        self.check_inputs(x, adj)?;
        let (h0, enc_mask) = self.encode_inner(x, train, rng)?;
        let mut states = vec![h0];
        let mut steps = Vec::new();
        let mut realized = None;
        match &self.params.mp {
            MessagePassing::Graff(p) => {
                let r = p.realize(self.cfg.activation);
                let source = match &r.w_source {
                    Some(ws) => Some(states[0].matmul(ws)?),
                    None => None,
                };
                for _ in 0..self.cfg.layers {
                    let out = graff_step_inner(states.last().unwrap(), source.as_ref(), adj, &r, self.cfg.step_size)?;
                    states.push(out.next);
                    steps.push(StepCache::Graff { ah: out.ah, pre: out.pre });
                }
                realized = Some(r);
            }
            MessagePassing::Gcn(ws) => {
                for w in ws {
                    let ah = spmm(adj, states.last().unwrap())?;
                    let pre = ah.matmul(w)?;
                    states.push(relu(&pre));
                    steps.push(StepCache::Gcn { ah, pre });
                }
            }
            MessagePassing::Mlp(ls) => {
                for lin in ls {
                    let pre = lin.forward(states.last().unwrap())?;
                    states.push(relu(&pre));
                    steps.push(StepCache::Mlp { pre });
                }
            }
        }
        Ok(NodeCache {
            enc_mask,
            steps,
            realized,
            trace: LayerTrace { states },
        })
    }

    /// Node embeddings `Z = H^L` and the full trace.
    pub fn forward<R: Rng>(&self, x: &Tensor2, adj: &NormalizedAdjacency, train: bool, rng: &mut R) -> Result<(Tensor2, LayerTrace)> {
        let cache = self.node_forward(x, adj, train, rng)?;
        Ok((cache.trace.last().clone(), cache.trace))
    }

    /// Eval-mode trace, no dropout.
    pub fn trace(&self, x: &Tensor2, adj: &NormalizedAdjacency) -> Result<LayerTrace> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.node_forward(x, adj, false, &mut rng)?.trace)
    }

    pub fn readout(&self, z: &Tensor2, adj: &NormalizedAdjacency, edges: &[Edge]) -> Result<Tensor2> {
        readout_batch(self.cfg.readout, z, adj, edges)
    }

    /// Logits for a batch of readout vectors.
    pub fn decode<R: Rng>(&self, r: &Tensor2, train: bool, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.decode_inner(r, train, rng)?.0)
    }

    fn decode_inner<R: Rng>(&self, r: &Tensor2, train: bool, rng: &mut R) -> Result<(Vec<f64>, DecoderCache)> {
        let mut x = r.clone();
        let mut layers = Vec::with_capacity(self.params.decoder.hidden.len());
        let mut bn_idx = 0;
        for layer in &self.params.decoder.hidden {
            let a = layer.linear.forward(&x)?;
            let (pre_act, bn) = match &layer.bn {
                Some(bn) => {
                    let (y, c) = bn.forward(&a, train, &self.bn_running[bn_idx]);
                    bn_idx += 1;
                    (y, Some(c))
                }
                None => (a, None),
            };
            let (out, mask) = dropout(&relu(&pre_act), self.cfg.decoder_dropout, train, rng);
            layers.push(DecoderLayerCache {
                input: x,
                bn,
                pre_act,
                mask,
            });
            x = out;
        }
        let logits = self.params.decoder.out.forward(&x)?.into_vec();
        Ok((logits, DecoderCache { layers, out_input: x }))
    }

    fn decode_backward(&self, cache: &DecoderCache, dlogits: &[f64], grads: &mut Decoder) -> Result<Tensor2> {
        let dy = Tensor2::from_vec(dlogits.len(), 1, dlogits.to_vec())?;
        let mut dx = self.params.decoder.out.backward(&cache.out_input, &dy, &mut grads.out)?;
        for (k, layer) in self.params.decoder.hidden.iter().enumerate().rev() {
            let c = &cache.layers[k];
            let g = &mut grads.hidden[k];
            let d_act = c.mask.apply(&dx);
            let mut d_pre = relu_backward(&c.pre_act, &d_act);
            if let (Some(bn), Some(bc)) = (&layer.bn, &c.bn) {
                d_pre = bn.backward(bc, &d_pre, g.bn.as_mut().expect("grad layout"));
            }
            dx = layer.linear.backward(&c.input, &d_pre, &mut g.linear)?;
        }
        Ok(dx)
    }

    fn node_backward(&self, x: &Tensor2, adj: &NormalizedAdjacency, cache: &NodeCache, dz: Tensor2, grads: &mut ModelParams) -> Result<()> {
        let states = &cache.trace.states;
        let mut dh = dz;
        match (&self.params.mp, &mut grads.mp) {
            (MessagePassing::Graff(p), MessagePassing::Graff(gp)) => {
                let r = cache.realized.as_ref().expect("graff forward realizes weights");
                let tau = self.cfg.step_size;
                let d = self.cfg.hidden;
                let mut grad_w = Tensor2::zeros(d, d);
                let mut d_source = Tensor2::zeros(dh.rows(), d);
                for (t, step) in cache.steps.iter().enumerate().rev() {
                    let StepCache::Graff { ah, pre } = step else { unreachable!() };
                    let h = &states[t];
                    let mut d_pre = r.activation.backward(pre, &dh);
                    d_pre.scale_in_place(tau);
                    // dH^t = dH^{t+1} − dPre Ω + 𝔸 dPre Wᵀ
                    dh.axpy(-1.0, &d_pre.mul_cols(&r.omega));
                    dh.add_assign(&spmm(adj, &d_pre.matmul_nt(&r.w)?)?);
                    let go = gp.omega.as_mut_slice();
                    for row in 0..h.rows() {
                        for (k, (&hv, &gv)) in h.row(row).iter().zip(d_pre.row(row)).enumerate() {
                            go[k] -= hv * gv;
                        }
                    }
                    grad_w.add_assign(&ah.matmul_tn(&d_pre)?);
                    d_source.add_assign(&d_pre);
                }
                p.w.backward(&grad_w, &mut gp.w);
                if let (Some(ws), Some(ws_real), Some(gws)) = (&p.w_source, &r.w_source, &mut gp.w_source) {
                    // source = H⁰ W̃ enters every step with a minus sign
                    dh.axpy(-1.0, &d_source.matmul_nt(ws_real)?);
                    let grad_ws = states[0].matmul_tn(&d_source)?.scale(-1.0);
                    ws.backward(&grad_ws, gws);
                }
            }
            (MessagePassing::Gcn(ws), MessagePassing::Gcn(gws)) => {
                for (t, step) in cache.steps.iter().enumerate().rev() {
                    let StepCache::Gcn { ah, pre } = step else { unreachable!() };
                    let d_pre = relu_backward(pre, &dh);
                    gws[t].add_assign(&ah.matmul_tn(&d_pre)?);
                    dh = spmm(adj, &d_pre.matmul_nt(&ws[t])?)?;
                }
            }
            (MessagePassing::Mlp(ls), MessagePassing::Mlp(gls)) => {
                for (t, step) in cache.steps.iter().enumerate().rev() {
                    let StepCache::Mlp { pre } = step else { unreachable!() };
                    let d_pre = relu_backward(pre, &dh);
                    dh = ls[t].backward(&states[t], &d_pre, &mut gls[t])?;
                }
            }
            _ => unreachable!("gradient layout mismatch"),
        }
        let da = cache.enc_mask.apply(&dh);
        self.params.encoder.backward(x, &da, &mut grads.encoder)?;
        Ok(())
    }

    /// Train-mode forward and backward of the mean BCE loss over `edges`.
    ///
    /// Running batch-norm statistics are not touched; the caller applies
    /// [`Model::update_running_stats`] if the step is kept.
    pub fn loss_and_grad<R: Rng>(
        &self,
        x: &Tensor2,
        adj: &NormalizedAdjacency,
        edges: &[Edge],
        labels: &[f64],
        rng: &mut R,
    ) -> Result<LossGrad> {
        let node = self.node_forward(x, adj, true, rng)?;
        let z = node.trace.last();
        let r = self.readout(z, adj, edges)?;
        let (logits, decoder_cache) = self.decode_inner(&r, true, rng)?;
        let (loss, dlogits) = nn::bce_with_logits(&logits, labels)?;
        let mut grads = self.params.zeros_like();
        let dr = self.decode_backward(&decoder_cache, &dlogits, &mut grads.decoder)?;
        let dz = readout_backward(self.cfg.readout, z, adj, edges, &dr);
        self.node_backward(x, adj, &node, dz, &mut grads)?;
        Ok(LossGrad {
            loss,
            grads,
            logits,
            decoder_cache,
        })
    }

    /// Train-mode loss only; consumes the RNG exactly like [`Model::loss_and_grad`].
    pub fn loss<R: Rng>(&self, x: &Tensor2, adj: &NormalizedAdjacency, edges: &[Edge], labels: &[f64], rng: &mut R) -> Result<f64> {
        let node = self.node_forward(x, adj, true, rng)?;
        let r = self.readout(node.trace.last(), adj, edges)?;
        let (logits, _) = self.decode_inner(&r, true, rng)?;
        Ok(nn::bce_with_logits(&logits, labels)?.0)
    }

    pub fn update_running_stats(&mut self, cache: &DecoderCache) {
        for (running, c) in self.bn_running.iter_mut().zip(cache.bn_caches()) {
            running.update(c);
        }
    }

    /// Eval-mode logits for `edges`.
    pub fn predict_logits(&self, x: &Tensor2, adj: &NormalizedAdjacency, edges: &[Edge]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let node = self.node_forward(x, adj, false, &mut rng)?;
        let r = self.readout(node.trace.last(), adj, edges)?;
        self.decode(&r, false, &mut rng)
    }
}

/// Eval-mode link probabilities for `edges`, using `adj` for message passing and degree scales.
pub fn predict_edges(model: &Model, g: &Graph, adj: &NormalizedAdjacency, edges: &[Edge]) -> Result<Vec<f64>> {
    Ok(model
        .predict_logits(g.features(), adj, edges)?
        .into_iter()
        .map(nn::sigmoid)
        .collect())
}

pub fn param_count(model: &Model) -> usize {
    model.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, normalized_adjacency};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn two_node() -> NormalizedAdjacency {
        let g = build_graph(&[(0, 1)], Tensor2::zeros(2, 1), vec![0, 0]).unwrap();
        normalized_adjacency(&g)
    }

    fn small_cfg(kind: ModelKind) -> GraffConfig {
        GraffConfig {
            kind,
            layers: 2,
            hidden: 3,
            decoder_layers: 1,
            decoder_width: 4,
            dropout: 0.0,
            decoder_dropout: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn graff_step_with_zero_params_is_identity() {
        let adj = two_node();
        let h = Tensor2::from_rows(&[[0.3, -1.0], [2.0, 0.5]]);
        let p = RealizedGraff {
            omega: vec![0.0; 2],
            w: Tensor2::zeros(2, 2),
            w_source: Some(Tensor2::zeros(2, 2)),
            activation: Activation::Relu,
        };
        assert_eq!(graff_step(&h, &h, &adj, &p, 0.5).unwrap(), h);
    }

    #[test]
    fn graff_step_hand_example() {
        let adj = two_node();
        let h = Tensor2::from_rows(&[[1.0, 0.0], [1.0, 0.0]]);
        let p = RealizedGraff {
            omega: vec![0.0; 2],
            w: Tensor2::identity(2),
            w_source: None,
            activation: Activation::Relu,
        };
        let next = graff_step(&h, &h, &adj, &p, 0.5).unwrap();
        assert_eq!(next, Tensor2::from_rows(&[[1.5, 0.0], [1.5, 0.0]]));
    }

    #[test]
    fn graff_step_negative_preactivation_clamped() {
        let adj = two_node();
        let h = Tensor2::from_rows(&[[1.0, 2.0], [3.0, 0.5]]);
        let p = RealizedGraff {
            omega: vec![5.0; 2],
            w: Tensor2::zeros(2, 2),
            w_source: None,
            activation: Activation::Relu,
        };
        assert_eq!(graff_step(&h, &h, &adj, &p, 0.5).unwrap(), h);
    }

    #[test]
    fn graff_step_rejects_bad_shapes() {
        let adj = two_node();
        let h = Tensor2::zeros(2, 2);
        let p = RealizedGraff {
            omega: vec![0.0; 3],
            w: Tensor2::zeros(3, 3),
            w_source: None,
            activation: Activation::Relu,
        };
        assert!(graff_step(&h, &h, &adj, &p, 0.5).is_err());
    }

    #[test]
    fn encode_identity_and_zero() {
        let cfg = GraffConfig {
            hidden: 2,
            dropout: 0.0,
            ..Default::default()
        };
        let mut m = Model::new(cfg, 2, 0).unwrap();
        m.params.encoder.weight = Tensor2::identity(2);
        m.params.encoder.bias = Tensor2::zeros(1, 2);
        let x = Tensor2::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(m.encode(&x, true, &mut rng()).unwrap(), x);
        m.params.encoder.weight.fill(0.0);
        let h0 = m.encode(&x, true, &mut rng()).unwrap();
        assert_eq!(h0.shape(), (3, 2));
        assert_eq!(h0.max_abs(), 0.0);
    }

    #[test]
    fn hadamard_readout_cases() {
        assert_eq!(readout_hadamard(&[1.0, 2.0], &[3.0, -1.0]), vec![3.0, -2.0]);
        assert_eq!(readout_hadamard(&[1.0, 2.0], &[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(readout_hadamard(&[0.5, 7.0], &[2.0, 3.0]), readout_hadamard(&[2.0, 3.0], &[0.5, 7.0]));
    }

    #[test]
    fn gradient_readout_cases() {
        let adj = two_node();
        let h = Tensor2::from_rows(&[[1.0, -2.0], [1.0, -2.0]]);
        assert_eq!(readout_gradient(&h, &adj, 0, 1).unwrap(), vec![0.0, 0.0]);
        let h = Tensor2::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let a = readout_gradient(&h, &adj, 0, 1).unwrap();
        assert_eq!(a, readout_gradient(&h, &adj, 1, 0).unwrap());
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn decode_shapes_and_zero_input() {
        let mut m = Model::new(small_cfg(ModelKind::Graff), 2, 0).unwrap();
        for l in &mut m.params.decoder.hidden {
            l.linear.bias.fill(0.0);
        }
        m.params.decoder.out.bias.fill(0.0);
        let logits = m.decode(&Tensor2::zeros(5, 3), false, &mut rng()).unwrap();
        assert_eq!(logits, vec![0.0; 5]);
        assert_eq!(nn::sigmoid(logits[0]), 0.5);

        let cfg = GraffConfig {
            decoder_layers: 0,
            ..small_cfg(ModelKind::Graff)
        };
        let m = Model::new(cfg, 2, 0).unwrap();
        assert!(m.params.decoder.hidden.is_empty());
        let r = Tensor2::from_rows(&[[1.0, 0.0, 0.0]]);
        let logit = m.decode(&r, false, &mut rng()).unwrap()[0];
        let expect = m.params.decoder.out.weight[(0, 0)] + m.params.decoder.out.bias[(0, 0)];
        assert!((logit - expect).abs() < 1e-15);
    }

    #[test]
    fn gcn_with_no_layers_returns_encoder_output() {
        let cfg = GraffConfig {
            layers: 0,
            ..small_cfg(ModelKind::Gcn)
        };
        let m = Model::new(cfg, 2, 3).unwrap();
        let adj = two_node();
        let x = Tensor2::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]);
        let (z, trace) = m.forward(&x, &adj, false, &mut rng()).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(z, m.encode(&x, false, &mut rng()).unwrap());
    }

    #[test]
    fn gcn_two_node_hand_example() {
        // identity encoder, W = I: 𝔸 H averages the two equal-degree rows
        let cfg = GraffConfig {
            layers: 1,
            hidden: 2,
            ..small_cfg(ModelKind::Gcn)
        };
        let mut m = Model::new(cfg, 2, 0).unwrap();
        m.params.encoder.weight = Tensor2::identity(2);
        m.params.encoder.bias.fill(0.0);
        m.params.mp = MessagePassing::Gcn(vec![Tensor2::identity(2)]);
        let x = Tensor2::from_rows(&[[2.0, -4.0], [0.0, 2.0]]);
        let (z, _) = m.forward(&x, &two_node(), false, &mut rng()).unwrap();
        let expect = [1.0, 0.0, 1.0, 0.0];
        for (a, b) in z.as_slice().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_matches_linear_stack_and_ignores_edges() {
        let m = Model::new(small_cfg(ModelKind::Mlp), 2, 9).unwrap();
        let x = Tensor2::from_rows(&[[1.0, 2.0], [-1.0, 0.5], [0.2, 0.1]]);
        let g1 = build_graph(&[(0, 1)], x.clone(), vec![0; 3]).unwrap();
        let g2 = build_graph(&[(1, 2), (0, 2)], x.clone(), vec![0; 3]).unwrap();
        let (z1, _) = m.forward(&x, &normalized_adjacency(&g1), false, &mut rng()).unwrap();
        let (z2, _) = m.forward(&x, &normalized_adjacency(&g2), false, &mut rng()).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(z1.shape(), (3, 3));

        let MessagePassing::Mlp(ls) = &m.params.mp else { panic!() };
        let mut h = m.params.encoder.forward(&x).unwrap();
        for l in ls {
            h = relu(&l.forward(&h).unwrap());
        }
        assert_eq!(h, z1);
    }

    #[test]
    fn weight_sharing_single_storage() {
        let cfg = small_cfg(ModelKind::Graff);
        let mut m = Model::new(cfg, 2, 4).unwrap();
        let adj = two_node();
        let x = Tensor2::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]);
        let before = m.trace(&x, &adj).unwrap();
        let MessagePassing::Graff(p) = &mut m.params.mp else { panic!() };
        p.w.tensors_mut()[0].as_mut_slice()[1] += 0.5;
        let after = m.trace(&x, &adj).unwrap();
        assert_eq!(before.states[0], after.states[0]);
        for t in 1..before.len() {
            assert_ne!(before.states[t], after.states[t], "step {t} unaffected");
        }
    }

    #[test]
    fn param_count_rules() {
        let base = GraffConfig {
            hidden: 16,
            ..small_cfg(ModelKind::Graff)
        };
        let counts: Vec<usize> = [1, 3, 12]
            .iter()
            .map(|&l| Model::new(GraffConfig { layers: l, ..base.clone() }, 5, 0).unwrap().param_count())
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));

        let gcn: Vec<usize> = (0..5)
            .map(|l| {
                Model::new(
                    GraffConfig {
                        layers: l,
                        kind: ModelKind::Gcn,
                        ..base.clone()
                    },
                    5,
                    0,
                )
                .unwrap()
                .param_count()
            })
            .collect();
        for w in gcn.windows(2) {
            assert_eq!(w[1] - w[0], 16 * 16);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GraffConfig { layers: 0, ..Default::default() }.validate().is_err());
        assert!(GraffConfig { step_size: 0.0, ..Default::default() }.validate().is_err());
        assert!(GraffConfig { hidden: 0, ..Default::default() }.validate().is_err());
        assert!(GraffConfig { dropout: 1.0, ..Default::default() }.validate().is_err());
        assert!(GraffConfig {
            layers: 0,
            kind: ModelKind::Gcn,
            ..Default::default()
        }
        .validate()
        .is_ok());
    }
}
