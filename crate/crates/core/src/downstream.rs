//! Node classifier over a sampled GoG: a plain GCN whose node features are
//! the encoder embeddings and whose edge weights are sample multiplicities.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{propagate, propagate_transpose, SparseOp};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, dropout_mask, relu_backward, relu_inplace, ParamLayout, Params, TensorKind};
use crate::rng::stream_rng;
use crate::sampler::GoGGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoGClassifierConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub symmetrize: bool,
}

impl Default for GoGClassifierConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 64,
            dropout: 0.0,
            symmetrize: true,
        }
    }
}

impl GoGClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("downstream.num_layers must be >= 1".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("downstream.hidden_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("downstream.dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Normalised propagation operator for a weighted directed edge list.
///
/// Symmetrised: `W + Wᵀ` (parallel edges merge), self-loops of weight 1,
/// then `D^{-1/2} Ã D^{-1/2}`. Directed: `Ã = W + I` scaled by the row
/// degree on the left and the column degree on the right. Row `i` of the
/// result aggregates over the nodes `i` points to.
pub fn normalize_weighted(num_nodes: usize, edges: &[(usize, usize, f64)], symmetrize: bool) -> Result<SparseOp> {
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * edges.len() + num_nodes);
    for &(i, j, w) in edges {
        if i >= num_nodes || j >= num_nodes {
            return Err(Error::Shape(format!("edge ({i}, {j}) outside {num_nodes} nodes")));
        }
        if i == j || w == 0.0 {
            continue;
        }
        entries.push((i, j, w));
        if symmetrize {
            entries.push((j, i, w));
        }
    }
    entries.extend((0..num_nodes).map(|i| (i, i, 1.0)));
    entries.sort_by_key(|a| (a.0, a.1));
    let mut merged: SparseOp = Vec::with_capacity(entries.len());
    for (i, j, w) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == i && last.1 == j => last.2 += w,
            _ => merged.push((i, j, w)),
        }
    }
    let mut row_deg = vec![0.0f64; num_nodes];
    let mut col_deg = vec![0.0f64; num_nodes];
    for &(i, j, w) in &merged {
        row_deg[i] += w;
        col_deg[j] += w;
    }
    for e in &mut merged {
        e.2 /= (row_deg[e.0] * col_deg[e.1]).sqrt();
    }
    Ok(merged)
}

pub fn normalize_gog(gog: &GoGGraph, symmetrize: bool) -> Result<SparseOp> {
    let edges: Vec<(usize, usize, f64)> = gog.edges.iter().map(|e| (e.src, e.dst, f64::from(e.mult))).collect();
    normalize_weighted(gog.num_nodes, &edges, symmetrize)
}

#[derive(Debug, Clone)]
pub struct GoGClassifier {
    pub config: GoGClassifierConfig,
    pub in_dim: usize,
    pub num_classes: usize,
    layout: ParamLayout,
    layers: Vec<(usize, usize)>,
}

/// Activations of one downstream pass.
#[derive(Debug, Clone)]
pub struct DownstreamForward {
    pub logits: Array2<f64>,
    /// Output of the last hidden layer (the input itself for one layer).
    pub hidden: Array2<f64>,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

impl GoGClassifier {
    pub fn new(config: GoGClassifierConfig, in_dim: usize, num_classes: usize) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || num_classes == 0 {
            return Err(Error::Shape("downstream needs positive input and class dimensions".into()));
        }
        let mut layout = ParamLayout::new();
        let mut layers = Vec::new();
        for l in 0..config.num_layers {
            let d_in = if l == 0 { in_dim } else { config.hidden_dim };
            let d_out = if l + 1 == config.num_layers { num_classes } else { config.hidden_dim };
            let w = layout.push(format!("downstream.gcn{l}.w"), d_in, d_out, TensorKind::Weight);
            let b = layout.push(format!("downstream.gcn{l}.b"), 1, d_out, TensorKind::Bias);
            layers.push((w, b));
        }
        Ok(Self {
            config,
            in_dim,
            num_classes,
            layout,
            layers,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init_params(&self, seed: u64) -> Params {
        Params {
            data: self.layout.glorot_init(seed),
            layout: self.layout.clone(),
        }
    }

    /// `Z_l = Â X_l W_l + b_l`, ReLU and dropout between layers.
    pub fn forward(
        &self,
        params: &[f64],
        op: &[(usize, usize, f64)],
        features: &Array2<f64>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<DownstreamForward> {
        if features.ncols() != self.in_dim {
            return Err(Error::Shape(format!(
                "downstream expects {} input columns, got {}",
                self.in_dim,
                features.ncols()
            )));
        }
        if let Some(&(i, j, _)) = op.iter().find(|e| e.0 >= features.nrows() || e.1 >= features.nrows()) {
            return Err(Error::Shape(format!("operator entry ({i}, {j}) outside {} nodes", features.nrows())));
        }
        let l = &self.layout;
        let last = self.layers.len() - 1;
        let mut x = features.clone();
        let mut hidden = features.clone();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let mut z = propagate(op, x.dot(&l.view(params, w)).view());
            z += &l.view(params, b);
            inputs.push(std::mem::take(&mut x));
            if k == last {
                pre.push(z.clone());
                masks.push(None);
                x = z;
            } else {
                let mut a = z.clone();
                relu_inplace(&mut a);
                hidden = a.clone();
                let mask = match rng.as_deref_mut() {
                    Some(r) if self.config.dropout > 0.0 => {
                        let m = dropout_mask(a.nrows(), a.ncols(), self.config.dropout, r);
                        a *= &m;
                        Some(m)
                    }
                    _ => None,
                };
                pre.push(z);
                masks.push(mask);
                x = a;
            }
        }
        Ok(DownstreamForward {
            logits: x,
            hidden,
            inputs,
            pre,
            masks,
        })
    }

    /// Adds the parameter gradient for upstream `dlogits` into `grad`.
    pub fn backward(&self, params: &[f64], op: &[(usize, usize, f64)], fwd: &DownstreamForward, dlogits: &Array2<f64>, grad: &mut [f64]) {
        let l = &self.layout;
        let last = self.layers.len() - 1;
        let mut dz = dlogits.clone();
        for k in (0..self.layers.len()).rev() {
            let (w, b) = self.layers[k];
            if k != last {
                if let Some(m) = &fwd.masks[k] {
                    dz *= m;
                }
                dz = relu_backward(&dz, &fwd.pre[k]);
            }
            l.view_mut(grad, b).row_mut(0).scaled_add(1.0, &dz.sum_axis(Axis(0)));
            let du = propagate_transpose(op, dz.view());
            l.view_mut(grad, w).scaled_add(1.0, &fwd.inputs[k].t().dot(&du));
            if k > 0 {
                dz = du.dot(&l.view(params, w).t());
            }
        }
    }
}

/// Eval-mode logits for one GoG.
pub fn downstream_forward(
    classifier: &GoGClassifier,
    params: &[f64],
    gog: &GoGGraph,
    embeddings: &Array2<f64>,
) -> Result<Array2<f64>> {
    if gog.num_nodes != embeddings.nrows() {
        return Err(Error::Shape(format!(
            "GoG has {} nodes, embeddings {} rows",
            gog.num_nodes,
            embeddings.nrows()
        )));
    }
    let op = normalize_gog(gog, classifier.config.symmetrize)?;
    Ok(classifier.forward(params, &op, embeddings, None)?.logits)
}

/// Cross-entropy on `targets`, averaged over the given operators (one per
/// sampled GoG), with its parameter gradient. Operator `s` draws dropout
/// masks from stream `(dropout_seed, s)`.
pub fn downstream_loss_and_grad(
    classifier: &GoGClassifier,
    params: &[f64],
    ops: &[SparseOp],
    embeddings: &Array2<f64>,
    targets: &[(usize, usize)],
    dropout_seed: Option<u64>,
) -> Result<(f64, Vec<f64>)> {
    if ops.is_empty() {
        return Err(Error::EmptyInput("no GoG samples".into()));
    }
    let scale = 1.0 / ops.len() as f64;
    let parts: Vec<(f64, Vec<f64>)> = ops
        .par_iter()
        .enumerate()
        .map(|(s, op)| -> Result<(f64, Vec<f64>)> {
            let mut rng = dropout_seed.map(|seed| stream_rng(seed, &[s as u64]));
            let fwd = classifier.forward(params, op, embeddings, rng.as_mut())?;
            let (loss, dlogits) = cross_entropy(&fwd.logits, targets)?;
            let mut grad = vec![0.0; classifier.num_params()];
            classifier.backward(params, op, &fwd, &(dlogits * scale), &mut grad);
            Ok((loss * scale, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; classifier.num_params()];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}
