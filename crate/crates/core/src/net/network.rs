use serde::{Deserialize, Serialize};

use super::activation::ResolvedActivation;
use super::loss::softmax_cross_entropy;
use super::model::{Linearization, Model};
use super::spec::{ArchitectureSpec, Normalization, SkipStart};
use crate::error::{NlcError, Result};
use crate::tensor::{Matrix, Vector};

pub const DEFAULT_BN_EPSILON: f64 = 1e-8;

/// An instantiated network.
///
/// Layer `l` computes `a_l = W_l h_{l-1} + b_l` (plus an incoming skip),
/// then `h_l = act(norm(a_l))`; the last layer outputs `a_L` directly.
#[derive(Clone, Debug)]
pub struct Network {
    spec: ArchitectureSpec,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub skip_projection: Option<Matrix>,
    pub c_loss: f64,
    /// Multiplies the training loss; 1 unless a confounder experiment scales it.
    pub loss_scale: f64,
    pub bn_epsilon: f64,
    acts: Vec<Option<ResolvedActivation>>,
}

/// Values recorded by a forward pass for the reverse sweep.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    batch: usize,
    /// `h_{l-1}` for every layer; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Normalized pre-activations `n_l` of hidden layers.
    normalized: Vec<Matrix>,
    /// Per-feature (batchnorm) or per-column (layernorm) inverse std.
    inv_std: Vec<Option<Vector>>,
    output: Matrix,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn input(&self) -> &Matrix {
        &self.inputs[0]
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl Gradients {
    pub fn squared_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.biases.iter().map(|b| b.norm_squared()).sum::<f64>()
    }
}

fn affine(w: &Matrix, b: &Vector, h: &Matrix) -> Matrix {
    let mut out = w * h;
    for mut col in out.column_iter_mut() {
        col += b;
    }
    out
}

fn batchnorm_forward(a: &Matrix, eps: f64) -> (Matrix, Vector) {
    let b = a.ncols() as f64;
    let mut y = a.clone();
    let mut inv = Vector::zeros(a.nrows());
    for r in 0..a.nrows() {
        let row = a.row(r);
        let mean = row.sum() / b;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / b;
        let s = 1.0 / (var + eps).sqrt();
        inv[r] = s;
        for (dst, v) in y.row_mut(r).iter_mut().zip(row.iter()) {
            *dst = (v - mean) * s;
        }
    }
    (y, inv)
}

fn layernorm_forward(a: &Matrix, eps: f64) -> (Matrix, Vector) {
    let d = a.nrows() as f64;
    let mut y = a.clone();
    let mut inv = Vector::zeros(a.ncols());
    for (c, mut col) in y.column_iter_mut().enumerate() {
        let mean = col.sum() / d;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let s = 1.0 / (var + eps).sqrt();
        inv[c] = s;
        col.apply(|v| *v = (*v - mean) * s);
    }
    (y, inv)
}

// dx = s * (dy - mean(dy) - y * mean(dy * y)), along rows.
fn batchnorm_backward(dy: &Matrix, y: &Matrix, inv: &Vector) -> Matrix {
    let b = dy.ncols() as f64;
    let mut dx = dy.clone();
    for r in 0..dy.nrows() {
        let g = dy.row(r);
        let yr = y.row(r);
        let mg = g.sum() / b;
        let mgy = g.dot(&yr) / b;
        let s = inv[r];
        for ((dst, gv), yv) in dx.row_mut(r).iter_mut().zip(g.iter()).zip(yr.iter()) {
            *dst = s * (gv - mg - yv * mgy);
        }
    }
    dx
}

fn layernorm_backward(dy: &Matrix, y: &Matrix, inv: &Vector) -> Matrix {
    let d = dy.nrows() as f64;
    let mut dx = dy.clone();
    for (c, mut col) in dx.column_iter_mut().enumerate() {
        let yc = y.column(c);
        let mg = col.sum() / d;
        let mgy = col.dot(&yc) / d;
        let s = inv[c];
        for (dst, yv) in col.iter_mut().zip(yc.iter()) {
            *dst = s * (*dst - mg - yv * mgy);
        }
    }
    dx
}

impl Network {
    /// Assembles a network from explicit parameters. Activations are
    /// resolved through the registry; `c_loss` starts at 1.
    pub fn from_parts(
        spec: ArchitectureSpec,
        weights: Vec<Matrix>,
        biases: Vec<Vector>,
        skip_projection: Option<Matrix>,
    ) -> Result<Self> {
        spec.validate()?;
        if weights.len() != spec.depth || biases.len() != spec.depth {
            return Err(NlcError::Consistency(format!(
                "{} weight and {} bias arrays for depth {}",
                weights.len(),
                biases.len(),
                spec.depth
            )));
        }
        for (i, l) in spec.layers.iter().enumerate() {
            if weights[i].shape() != (l.fan_out, l.fan_in) || biases[i].len() != l.fan_out {
                return Err(NlcError::Consistency(format!(
                    "layer {} parameters have the wrong shape",
                    i + 1
                )));
            }
        }
        let needs_projection = spec.skip.enabled && spec.skip_source(spec.depth - 1).is_some();
        match (&skip_projection, needs_projection) {
            (Some(p), true) => {
                let src = spec.layers[spec.depth - 3].fan_out;
                if p.shape() != (spec.d_out, src) {
                    return Err(NlcError::Consistency("skip projection has the wrong shape".into()));
                }
            }
            (None, false) => {}
            (None, true) => {
                return Err(NlcError::Consistency("missing final skip projection".into()))
            }
            (Some(_), false) => {
                return Err(NlcError::Consistency("unexpected skip projection".into()))
            }
        }
        let acts = spec
            .layers
            .iter()
            .map(|l| l.activation.as_ref().map(|a| a.resolve()).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            spec,
            weights,
            biases,
            skip_projection,
            c_loss: 1.0,
            loss_scale: 1.0,
            bn_epsilon: DEFAULT_BN_EPSILON,
            acts,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn depth(&self) -> usize {
        self.spec.depth
    }

    pub fn activation(&self, layer: usize) -> Option<&ResolvedActivation> {
        self.acts[layer].as_ref()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.spec.has_batchnorm()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.nrows() != self.spec.d_in || x.ncols() == 0 {
            return Err(NlcError::Dimension(format!(
                "network expects {} x B input, got {} x {}",
                self.spec.d_in,
                x.nrows(),
                x.ncols()
            )));
        }
        if self.has_batchnorm() && x.ncols() < 2 {
            return Err(NlcError::BatchSize(
                "batchnorm needs at least 2 columns per batch".into(),
            ));
        }
        Ok(())
    }

    fn skip_matrix_apply(&self, target: usize, s: &Matrix) -> Matrix {
        let k = self.spec.skip.strength;
        if target + 1 == self.spec.depth {
            self.skip_projection.as_ref().expect("validated") * s * k
        } else {
            s * k
        }
    }

    fn skip_matrix_transpose_apply(&self, target: usize, g: &Matrix) -> Matrix {
        let k = self.spec.skip.strength;
        if target + 1 == self.spec.depth {
            self.skip_projection.as_ref().expect("validated").tr_mul(g) * k
        } else {
            g * k
        }
    }

    fn run(&self, x: &Matrix, record: bool) -> Result<(Matrix, Option<ForwardTrace>)> {
        self.check_input(x)?;
        let depth = self.spec.depth;
        let mut skip_src: Vec<Option<Matrix>> = vec![None; depth];
        let mut inputs = Vec::with_capacity(if record { depth } else { 0 });
        let mut normalized = Vec::new();
        let mut inv_std = Vec::new();
        let mut h = x.clone();
        for i in 0..depth {
            let mut a = affine(&self.weights[i], &self.biases[i], &h);
            if let Some(src) = self.spec.skip_source(i) {
                let s = skip_src[src].take().expect("skip source recorded");
                a += self.skip_matrix_apply(i, &s);
            }
            if !a.iter().all(|v| v.is_finite()) {
                return Err(NlcError::overflow(i + 1, "non-finite pre-activation"));
            }
            if record {
                inputs.push(h);
            }
            if i + 1 == depth {
                let trace = record.then(|| ForwardTrace {
                    batch: x.ncols(),
                    inputs,
                    normalized,
                    inv_std,
                    output: a.clone(),
                });
                return Ok((a, trace));
            }
            let (n, inv) = match self.spec.layers[i].normalization {
                Normalization::None => (a.clone(), None),
                Normalization::BatchNorm => {
                    let (y, s) = batchnorm_forward(&a, self.bn_epsilon);
                    (y, Some(s))
                }
                Normalization::LayerNorm => {
                    let (y, s) = layernorm_forward(&a, self.bn_epsilon);
                    (y, Some(s))
                }
            };
            if !n.iter().all(|v| v.is_finite()) {
                return Err(NlcError::overflow(i + 1, "non-finite normalization"));
            }
            if self.spec.skip_target(i).is_some() {
                skip_src[i] = Some(match self.spec.skip.start {
                    SkipStart::AfterLinear => a,
                    SkipStart::AfterNormalization => n.clone(),
                });
            }
            let act = self.acts[i].as_ref().expect("hidden layer activation");
            h = n.map(|s| act.eval(s));
            if !h.iter().all(|v| v.is_finite()) {
                return Err(NlcError::overflow(i + 1, "non-finite activation output"));
            }
            if record {
                normalized.push(n);
                inv_std.push(inv);
            }
        }
        unreachable!("depth >= 1")
    }

    /// Output only.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.run(x, false)?.0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        let (f, t) = self.run(x, true)?;
        Ok((f, t.expect("recorded")))
    }

    fn check_trace(&self, trace: &ForwardTrace, v: &Matrix) -> Result<()> {
        let depth = self.spec.depth;
        if trace.inputs.len() != depth || trace.normalized.len() + 1 != depth {
            return Err(NlcError::Consistency("trace does not match network depth".into()));
        }
        for (i, l) in self.spec.layers.iter().enumerate() {
            if trace.inputs[i].nrows() != l.fan_in {
                return Err(NlcError::Consistency(format!(
                    "trace layer {} does not match network",
                    i + 1
                )));
            }
        }
        if v.shape() != trace.output.shape() {
            return Err(NlcError::Consistency(format!(
                "V is {:?} but output is {:?}",
                v.shape(),
                trace.output.shape()
            )));
        }
        Ok(())
    }

    /// Reverse sweep: returns `V`-contraction of the batch Jacobian, and
    /// the parameter gradients of `<V, F>` when requested.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        v: &Matrix,
        param_grads: bool,
    ) -> Result<(Matrix, Option<Gradients>)> {
        self.check_trace(trace, v)?;
        let depth = self.spec.depth;
        let mut grad_skip: Vec<Option<Matrix>> = vec![None; depth];
        let mut gw = Vec::new();
        let mut gb = Vec::new();
        let mut g_h: Option<Matrix> = None;
        for i in (0..depth).rev() {
            let g_a = if i + 1 == depth {
                v.clone()
            } else {
                let n = &trace.normalized[i];
                let act = self.acts[i].as_ref().expect("hidden layer activation");
                let upstream = g_h.take().expect("gradient from next layer");
                let mut g_n = upstream.zip_map(n, |g, s| g * act.grad(s));
                let skip_grad = grad_skip[i].take();
                let after_norm = self.spec.skip.start == SkipStart::AfterNormalization;
                if let (Some(gs), true) = (&skip_grad, after_norm) {
                    g_n += gs;
                }
                let mut g_a = match (&self.spec.layers[i].normalization, &trace.inv_std[i]) {
                    (Normalization::None, _) => g_n,
                    (Normalization::BatchNorm, Some(s)) => batchnorm_backward(&g_n, n, s),
                    (Normalization::LayerNorm, Some(s)) => layernorm_backward(&g_n, n, s),
                    _ => {
                        return Err(NlcError::Consistency(
                            "trace lacks normalization statistics".into(),
                        ))
                    }
                };
                if let (Some(gs), false) = (&skip_grad, after_norm) {
                    g_a += gs;
                }
                g_a
            };
            if !g_a.iter().all(|v| v.is_finite()) {
                return Err(NlcError::overflow(i + 1, "non-finite gradient"));
            }
            if let Some(src) = self.spec.skip_source(i) {
                grad_skip[src] = Some(self.skip_matrix_transpose_apply(i, &g_a));
            }
            if param_grads {
                gw.push(&g_a * trace.inputs[i].transpose());
                gb.push(Vector::from_iterator(
                    g_a.nrows(),
                    g_a.row_iter().map(|r| r.sum()),
                ));
            }
            g_h = Some(self.weights[i].tr_mul(&g_a));
        }
        let grads = param_grads.then(|| {
            gw.reverse();
            gb.reverse();
            Gradients {
                weights: gw,
                biases: gb,
            }
        });
        Ok((g_h.expect("depth >= 1"), grads))
    }

    pub fn vjp(&self, trace: &ForwardTrace, v: &Matrix) -> Result<Matrix> {
        Ok(self.backward(trace, v, false)?.0)
    }

    /// Mean softmax cross-entropy on `F / c_loss`, times `loss_scale`,
    /// with its gradient with respect to the input batch.
    pub fn loss_and_input_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
        let (f, trace) = self.forward(x)?;
        let (loss, mut df) = softmax_cross_entropy(&f, labels, self.c_loss)?;
        df *= self.loss_scale;
        Ok((loss * self.loss_scale, self.vjp(&trace, &df)?))
    }

    /// Training loss on a batch and its parameter gradients.
    pub fn loss_and_param_grads(
        &self,
        x: &Matrix,
        labels: &[usize],
    ) -> Result<(f64, Gradients)> {
        let (f, trace) = self.forward(x)?;
        let (loss, mut df) = softmax_cross_entropy(&f, labels, self.c_loss)?;
        df *= self.loss_scale;
        let (_, g) = self.backward(&trace, &df, true)?;
        Ok((loss * self.loss_scale, g.expect("requested")))
    }

    /// Predicted class per column.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let f = self.apply(x)?;
        Ok(argmax_columns(&f))
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            spec: self.spec.clone(),
            weights: self.weights.iter().map(FlatMatrix::from).collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().collect()).collect(),
            skip_projection: self.skip_projection.as_ref().map(FlatMatrix::from),
            c_loss: self.c_loss,
            loss_scale: self.loss_scale,
            bn_epsilon: self.bn_epsilon,
        }
    }

    pub fn from_file(file: NetworkFile) -> Result<Self> {
        if file.format_version != NETWORK_FORMAT_VERSION {
            return Err(NlcError::Configuration(format!(
                "unsupported network format version {}",
                file.format_version
            )));
        }
        let weights = file
            .weights
            .iter()
            .map(FlatMatrix::to_matrix)
            .collect::<Result<Vec<_>>>()?;
        let biases = file.biases.into_iter().map(Vector::from_vec).collect();
        let proj = file.skip_projection.as_ref().map(FlatMatrix::to_matrix).transpose()?;
        let mut net = Network::from_parts(file.spec, weights, biases, proj)?;
        net.c_loss = file.c_loss;
        net.loss_scale = file.loss_scale;
        net.bn_epsilon = file.bn_epsilon;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }
}

pub fn argmax_columns(f: &Matrix) -> Vec<usize> {
    f.column_iter()
        .map(|c| {
            let mut best = 0;
            for (j, v) in c.iter().enumerate() {
                if *v > c[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Row-major matrix for text serialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for FlatMatrix {
    fn from(m: &Matrix) -> Self {
        let data = m.transpose().iter().copied().collect();
        FlatMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl FlatMatrix {
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(NlcError::Consistency(format!(
                "flat matrix {}x{} holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format_version: u32,
    pub spec: ArchitectureSpec,
    pub weights: Vec<FlatMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub skip_projection: Option<FlatMatrix>,
    pub c_loss: f64,
    pub loss_scale: f64,
    pub bn_epsilon: f64,
}

struct NetworkLinearization<'a> {
    net: &'a Network,
    trace: ForwardTrace,
}

impl Linearization for NetworkLinearization<'_> {
    fn output(&self) -> &Matrix {
        &self.trace.output
    }

    fn vjp(&self, v: &Matrix) -> Result<Matrix> {
        self.net.vjp(&self.trace, v)
    }
}

impl Model for Network {
    fn d_in(&self) -> usize {
        self.spec.d_in
    }

    fn d_out(&self) -> usize {
        self.spec.d_out
    }

    fn batch_coupled(&self) -> bool {
        self.has_batchnorm()
    }

    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Network::apply(self, x)
    }

    fn linearize<'a>(&'a self, x: &Matrix) -> Result<Box<dyn Linearization + 'a>> {
        let (_, trace) = self.forward(x)?;
        Ok(Box::new(NetworkLinearization { net: self, trace }))
    }
}
