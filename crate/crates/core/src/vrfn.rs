//! The VR function `f(s) = r(s) + gamma * V*(s)` as a fully connected network,
//! together with the Q, V and reward maps derived from it.
//!
//! Gradients are propagated by hand in reverse through a fixed structure:
//! network -> VR values -> (Q, V, reward) -> scalar loss. Each derived map has
//! a matching `*_backward` that pulls a cotangent back onto the VR values.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{backup, backup_weights, BackupOperator, Mdp};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network shape. The output is always a single scalar per state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Arch {
    pub fn new(input_dim: usize, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "layer widths must be positive: input {input_dim}, hidden {hidden:?}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden,
            activation,
        })
    }

    /// `[input, hidden..., 1]`
    fn dims(&self) -> Vec<usize> {
        let mut d = Vec::with_capacity(self.hidden.len() + 2);
        d.push(self.input_dim);
        d.extend_from_slice(&self.hidden);
        d.push(1);
        d
    }

    pub fn n_params(&self) -> usize {
        self.dims().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn layout(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.dims()
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    n_in: w[0],
                    n_out: w[1],
                    w: offset,
                    b: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                slot
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    n_in: usize,
    n_out: usize,
    /// Offset of the row-major `n_out x n_in` weight block.
    w: usize,
    /// Offset of the bias vector.
    b: usize,
}

/// Network parameters stored contiguously, layer by layer (weights then bias).
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct VrParams {
    arch: Arch,
    data: Vec<f64>,
}

impl VrParams {
    pub fn zeros(arch: &Arch) -> Self {
        Self {
            data: vec![0.0; arch.n_params()],
            arch: arch.clone(),
        }
    }

    pub fn from_values(arch: &Arch, data: Vec<f64>) -> Result<Self> {
        if data.len() != arch.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "arch needs {} values, got {}",
                arch.n_params(),
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self {
            arch: arch.clone(),
            data,
        })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `(weights, bias)` of layer `l`; weights are row-major `n_out x n_in`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let slot = self.arch.layout()[l];
        (
            &self.data[slot.w..slot.b],
            &self.data[slot.b..slot.b + slot.n_out],
        )
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let slot = self.arch.layout()[l];
        let (w, rest) = self.data[slot.w..slot.b + slot.n_out].split_at_mut(slot.b - slot.w);
        (w, rest)
    }

    pub fn n_layers(&self) -> usize {
        self.arch.hidden.len() + 1
    }
}

/// Per-state network inputs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    dim: usize,
    data: Vec<f64>,
}

impl StateFeatures {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::ShapeMismatch("feature rows must share a positive dimension".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite feature".into()));
        }
        Ok(Self {
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(arch: &Arch, seed: u64) -> VrParams {
    let mut rng = seed::rng(seed);
    let mut p = VrParams::zeros(arch);
    for slot in arch.layout() {
        let bound = 1.0 / (slot.n_in as f64).sqrt();
        for w in &mut p.data[slot.w..slot.b] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    p
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-activation outputs of each hidden layer, row-major `n_states x width`.
    hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward_cached(params: &VrParams, features: &StateFeatures) -> Result<ForwardCache> {
    if features.dim() != params.arch.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have dimension {}, network expects {}",
            features.dim(),
            params.arch.input_dim
        )));
    }
    let n = features.n_states();
    let act = params.arch.activation;
    let layout = params.arch.layout();
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(layout.len() - 1);
    for (l, slot) in layout.iter().enumerate() {
        let input: &[f64] = if l == 0 { &features.data } else { &hidden[l - 1] };
        let w = &params.data[slot.w..slot.b];
        let b = &params.data[slot.b..slot.b + slot.n_out];
        let mut out = vec![0.0; n * slot.n_out];
        for (x, z) in input.chunks_exact(slot.n_in).zip(out.chunks_exact_mut(slot.n_out)) {
            for ((zo, wrow), bo) in z.iter_mut().zip(w.chunks_exact(slot.n_in)).zip(b) {
                *zo = bo + dot(wrow, x);
            }
        }
        if l + 1 < layout.len() {
            out.iter_mut().for_each(|z| *z = act.apply(*z));
            hidden.push(out);
        } else {
            return Ok(ForwardCache { hidden, output: out });
        }
    }
    unreachable!("network has an output layer")
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// VR value of every state.
pub fn forward(params: &VrParams, features: &StateFeatures) -> Result<Vec<f64>> {
    Ok(forward_cached(params, features)?.output)
}

/// Gradient of a scalar loss with respect to the parameters, given
/// `d_out[s] = dLoss / d output[s]`. Adds into `grad`.
pub fn backward(
    params: &VrParams,
    features: &StateFeatures,
    cache: &ForwardCache,
    d_out: &[f64],
    grad: &mut VrParams,
) {
    debug_assert_eq!(grad.arch, params.arch);
    let n = features.n_states();
    let act = params.arch.activation;
    let layout = params.arch.layout();
    let mut delta = d_out.to_vec();
    for l in (0..layout.len()).rev() {
        let slot = layout[l];
        let input: &[f64] = if l == 0 { &features.data } else { &cache.hidden[l - 1] };
        let w = &params.data[slot.w..slot.b];
        {
            let (gw, gb) = grad.data[slot.w..slot.b + slot.n_out].split_at_mut(slot.b - slot.w);
            for (x, d) in input.chunks_exact(slot.n_in).zip(delta.chunks_exact(slot.n_out)) {
                for ((gwrow, gbo), &dk) in gw.chunks_exact_mut(slot.n_in).zip(gb.iter_mut()).zip(d) {
                    if dk == 0.0 {
                        continue;
                    }
                    *gbo += dk;
                    for (g, xi) in gwrow.iter_mut().zip(x) {
                        *g += dk * xi;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; n * slot.n_in];
        for ((p, d), a) in prev
            .chunks_exact_mut(slot.n_in)
            .zip(delta.chunks_exact(slot.n_out))
            .zip(input.chunks_exact(slot.n_in))
        {
            for (&dk, wrow) in d.iter().zip(w.chunks_exact(slot.n_in)) {
                if dk == 0.0 {
                    continue;
                }
                for (pi, wi) in p.iter_mut().zip(wrow) {
                    *pi += dk * wi;
                }
            }
            for (pi, ai) in p.iter_mut().zip(a) {
                *pi *= act.slope_from_output(*ai);
            }
        }
        delta = prev;
    }
}

/// `q[s, a] = E[vr[s'] | s, a]`, row-major `n_states x n_actions`.
pub fn q_from_vr(vr: &[f64], mdp: &Mdp) -> Vec<f64> {
    mdp.expect(vr)
}

/// Adds `dLoss/dvr` given `dq[s, a] = dLoss/dq[s, a]`.
pub fn q_from_vr_backward(mdp: &Mdp, dq: &[f64], dvr: &mut [f64]) {
    let n_a = mdp.n_actions();
    for (idx, &g) in dq.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for &(next, p) in mdp.successors(idx / n_a, idx % n_a) {
            dvr[next] += p * g;
        }
    }
}

pub fn v_from_vr(vr: &[f64], mdp: &Mdp, op: BackupOperator) -> Vec<f64> {
    let n_a = mdp.n_actions();
    q_from_vr(vr, mdp)
        .chunks_exact(n_a)
        .map(|row| backup(row, op))
        .collect()
}

/// `r[s] = vr[s] - gamma * V(s)`.
pub fn r_from_vr(vr: &[f64], mdp: &Mdp, op: BackupOperator) -> Vec<f64> {
    let g = mdp.gamma();
    vr.iter()
        .zip(v_from_vr(vr, mdp, op))
        .map(|(f, v)| f - g * v)
        .collect()
}

/// Adds `dLoss/dvr` given `dr[s] = dLoss/dr[s]` for `r = r_from_vr(vr)`.
/// `q` must be `q_from_vr(vr)`.
pub fn r_from_vr_backward(q: &[f64], mdp: &Mdp, op: BackupOperator, dr: &[f64], dvr: &mut [f64]) {
    let n_a = mdp.n_actions();
    let g = mdp.gamma();
    let mut weights = vec![0.0; n_a];
    let mut dq = vec![0.0; q.len()];
    for (s, &d) in dr.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        dvr[s] += d;
        backup_weights(&q[s * n_a..(s + 1) * n_a], op, &mut weights);
        for (dqa, w) in dq[s * n_a..(s + 1) * n_a].iter_mut().zip(&weights) {
            *dqa -= g * d * w;
        }
    }
    q_from_vr_backward(mdp, &dq, dvr);
}

/// A ReLU network that reproduces `table` (one value per cell of a
/// `width x height` grid) on the grid's normalized coordinate features.
///
/// The first layer recovers the cell index `t = x + width * y`; the second
/// holds hinges `relu(t - k)`; the output sums them into the piecewise-linear
/// interpolant of the table.
pub fn table_params(table: &[f64], width: usize, height: usize) -> Result<VrParams> {
    let n = width * height;
    if table.len() != n || width < 2 || height < 2 {
        return Err(Error::ShapeMismatch(format!(
            "table of {} values for a {width}x{height} grid",
            table.len()
        )));
    }
    let arch = Arch::new(2, vec![1, n], Activation::Relu)?;
    let mut p = VrParams::zeros(&arch);
    {
        let (w, _) = p.layer_mut(0);
        w[0] = (width - 1) as f64;
        w[1] = (width * (height - 1)) as f64;
    }
    {
        let (w, b) = p.layer_mut(1);
        for k in 0..n {
            w[k] = 1.0;
            b[k] = -(k as f64);
        }
    }
    let (w, b) = p.layer_mut(2);
    b[0] = table[0];
    let mut prev_slope = 0.0;
    for k in 0..n - 1 {
        let slope = table[k + 1] - table[k];
        w[k] = slope - prev_slope;
        prev_slope = slope;
    }
    Ok(p)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerJson {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointJson {
    arch: Arch,
    layers: Vec<LayerJson>,
}

/// JSON checkpoint: the architecture plus each layer's shape and row-major values.
/// Floats use shortest round-trip formatting, so write/read/write is exact.
pub fn params_to_json(params: &VrParams) -> String {
    let layers = (0..params.n_layers())
        .map(|l| {
            let (w, b) = params.layer(l);
            LayerJson {
                rows: b.len(),
                cols: w.len() / b.len(),
                weights: w.to_vec(),
                bias: b.to_vec(),
            }
        })
        .collect();
    let doc = CheckpointJson {
        arch: params.arch.clone(),
        layers,
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
}

pub fn params_from_json(text: &str) -> Result<VrParams> {
    let doc: CheckpointJson = serde_json::from_str(text)?;
    let arch = Arch::new(doc.arch.input_dim, doc.arch.hidden, doc.arch.activation)?;
    let layout = arch.layout();
    if layout.len() != doc.layers.len() {
        return Err(Error::ShapeMismatch(format!(
            "arch has {} layers, checkpoint has {}",
            layout.len(),
            doc.layers.len()
        )));
    }
    let mut data = Vec::with_capacity(arch.n_params());
    for (slot, layer) in layout.iter().zip(doc.layers) {
        if layer.rows != slot.n_out
            || layer.cols != slot.n_in
            || layer.weights.len() != slot.n_out * slot.n_in
            || layer.bias.len() != slot.n_out
        {
            return Err(Error::ShapeMismatch(format!(
                "layer expected {}x{}, got {}x{}",
                slot.n_out, slot.n_in, layer.rows, layer.cols
            )));
        }
        data.extend(layer.weights);
        data.extend(layer.bias);
    }
    VrParams::from_values(&arch, data)
}
