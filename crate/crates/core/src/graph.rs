//! Conversation graph: three nodes per utterance (one per modality), edges
//! between same-modality utterance pairs and between the modalities of one
//! utterance, weighted by angular similarity. Includes the symmetric
//! normalization and the deep residual propagation stack that runs on it.
//!
//! Node order is turn-major: utterance `i` occupies nodes `3i` (text),
//! `3i + 1` (audio), `3i + 2` (visual).

use rand::Rng;

use crate::autodiff::tape::angular_similarity_kernel;
use crate::autodiff::{NodeId, Tape, Tensor};
use crate::data::{Dialogue, ModalityDims};
use crate::error::{Error, Result};

pub const MODALITIES: usize = 3;

/// One undirected edge between graph nodes, with the cross-modal flag that
/// decides whether the weight discount applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub cross_modal: bool,
}

/// Enumerate the edges for a dialogue of `n` utterances in deterministic
/// (a, b) lexicographic order: every same-modality pair plus the three
/// modality pairs inside each utterance.
pub fn edges(n: usize) -> Vec<Edge> {
    let nodes = MODALITIES * n;
    let mut out = Vec::with_capacity(MODALITIES * n * n.saturating_sub(1) / 2 + MODALITIES * n);
    for a in 0..nodes {
        for b in (a + 1)..nodes {
            let same_modality = a % MODALITIES == b % MODALITIES;
            let same_utterance = a / MODALITIES == b / MODALITIES;
            if same_modality || same_utterance {
                out.push(Edge { a, b, cross_modal: same_utterance && !same_modality });
            }
        }
    }
    out
}

/// Angular similarity weight of one edge: `1 - arccos(cos(u, v)) / pi`,
/// multiplied by `omega` only on cross-modal edges.
pub fn angular_weight(u: &[f64], v: &[f64], omega: f64, cross_modal: bool) -> f64 {
    let factor = if cross_modal { omega } else { 1.0 };
    factor * angular_similarity_kernel(u, v)
}

/// Raw per-modality feature vectors of a dialogue, zero-padded to the
/// largest modality dimension, in node order. Parameter-free graph inputs
/// for inspection tooling.
pub fn padded_raw_features(dialogue: &Dialogue, dims: ModalityDims) -> Vec<Vec<f64>> {
    let width = dims.max();
    let mut rows = Vec::with_capacity(MODALITIES * dialogue.utterances.len());
    for u in &dialogue.utterances {
        for raw in [&u.text, &u.audio, &u.visual] {
            let mut row = vec![0.0; width];
            row[..raw.len()].copy_from_slice(raw);
            rows.push(row);
        }
    }
    rows
}

/// Dense symmetric adjacency (zero diagonal) from node feature rows; flat
/// row-major `[3n * 3n]`. Pure reference path for the on-tape builder.
pub fn build_adjacency(rows: &[Vec<f64>], omega: f64) -> Result<Vec<f64>> {
    if rows.is_empty() || !rows.len().is_multiple_of(MODALITIES) {
        return Err(Error::invalid(format!(
            "node count {} is not a positive multiple of {MODALITIES}",
            rows.len()
        )));
    }
    if !omega.is_finite() || omega <= 0.0 || omega > 1.0 {
        return Err(Error::invalid(format!("omega must lie in (0, 1], got {omega}")));
    }
    let nodes = rows.len();
    let n = nodes / MODALITIES;
    let mut adj = vec![0.0; nodes * nodes];
    for e in edges(n) {
        let w = angular_weight(&rows[e.a], &rows[e.b], omega, e.cross_modal);
        adj[e.a * nodes + e.b] = w;
        adj[e.b * nodes + e.a] = w;
    }
    Ok(adj)
}

/// Symmetric normalization `(D + I)^(-1/2) (A + I) (D + I)^(-1/2)` of a flat
/// adjacency; pure reference path.
pub fn normalize_adjacency(adj: &[f64], nodes: usize) -> Result<Vec<f64>> {
    if adj.len() != nodes * nodes {
        return Err(Error::invalid("adjacency length does not match node count"));
    }
    let scale: Vec<f64> = (0..nodes)
        .map(|i| {
            let deg: f64 = adj[i * nodes..(i + 1) * nodes].iter().sum();
            1.0 / (deg + 1.0).sqrt()
        })
        .collect();
    let mut out = vec![0.0; nodes * nodes];
    for i in 0..nodes {
        for j in 0..nodes {
            let hat = adj[i * nodes + j] + if i == j { 1.0 } else { 0.0 };
            out[i * nodes + j] = hat * scale[i] * scale[j];
        }
    }
    Ok(out)
}

/// Smallest and largest eigenvalue of a symmetric matrix (flat row-major).
pub fn extremal_eigenvalues(m: &[f64], n: usize) -> Result<(f64, f64)> {
    if m.len() != n * n || n == 0 {
        return Err(Error::invalid("eigenvalues need a non-empty square matrix"));
    }
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m);
    let eig = mat.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

/// Build the adjacency on the tape from per-node feature vectors so that
/// gradients flow through every edge weight.
pub fn adjacency_on_tape(tape: &mut Tape, nodes: &[NodeId], omega: f64) -> Result<NodeId> {
    if nodes.is_empty() || !nodes.len().is_multiple_of(MODALITIES) {
        return Err(Error::invalid(format!(
            "node count {} is not a positive multiple of {MODALITIES}",
            nodes.len()
        )));
    }
    if !omega.is_finite() || omega <= 0.0 || omega > 1.0 {
        return Err(Error::invalid(format!("omega must lie in (0, 1], got {omega}")));
    }
    let n = nodes.len() / MODALITIES;
    let mut entries = Vec::new();
    for e in edges(n) {
        let factor = if e.cross_modal { omega } else { 1.0 };
        let w = tape.angular_weight(nodes[e.a], nodes[e.b], factor)?;
        entries.push((e.a, e.b, w));
    }
    tape.symmetric_from_entries(nodes.len(), &entries)
}

/// Symmetric normalization on the tape: degrees, `(d + 1)^(-1/2)` scaling,
/// and the scaled self-loop matrix, all differentiable.
pub fn normalize_on_tape(tape: &mut Tape, adj: NodeId) -> Result<NodeId> {
    let deg = tape.row_sum(adj)?;
    let shifted = tape.affine(deg, 1.0, 1.0)?;
    let scale = tape.powf(shifted, -0.5)?;
    let hat = tape.add_diag(adj, 1.0)?;
    tape.scale_rows_cols(hat, scale)
}

/// Per-layer transform weights of the propagation stack, all `[d x d]`.
#[derive(Debug, Clone)]
pub struct GcnParams {
    pub layers: Vec<Tensor>,
    /// Initial-features restart strength in [0, 1].
    pub kappa: f64,
    /// Decay constant of the per-layer identity mixing schedule.
    pub lambda_decay: f64,
}

#[derive(Debug, Clone)]
pub struct GcnIds {
    layers: Vec<NodeId>,
}

impl GcnParams {
    pub fn init<R: Rng>(d: usize, n_layers: usize, kappa: f64, lambda_decay: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&kappa) {
            return Err(Error::invalid(format!("kappa must lie in [0, 1], got {kappa}")));
        }
        if !lambda_decay.is_finite() || lambda_decay < 0.0 {
            return Err(Error::invalid(format!(
                "lambda_decay must be finite and non-negative, got {lambda_decay}"
            )));
        }
        let bound = 1.0 / (d as f64).sqrt();
        let layers = (0..n_layers)
            .map(|_| Ok(Tensor::uniform(vec![d, d], bound, rng)?.with_grad()))
            .collect::<Result<Vec<_>>>()?;
        Ok(GcnParams { layers, kappa, lambda_decay })
    }

    pub fn register(&self, tape: &mut Tape) -> GcnIds {
        GcnIds { layers: self.layers.iter().map(|t| tape.leaf(t)).collect() }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().collect()
    }

    /// Identity-mixing strength of layer `l` (0-based):
    /// `ln(1 + lambda_decay / (l + 1))`, clamped to [0, 1].
    pub fn mixing(&self, l: usize) -> f64 {
        (1.0 + self.lambda_decay / (l + 1) as f64).ln().clamp(0.0, 1.0)
    }
}

/// Deep residual propagation: each layer blends the normalized-adjacency
/// smoothing of the current state with the initial features (strength
/// `kappa`), applies a transform shrunk toward the identity by the layer's
/// mixing schedule, and a ReLU.
pub fn gcn_propagate(
    tape: &mut Tape,
    params: &GcnParams,
    ids: &GcnIds,
    p_norm: NodeId,
    h0: NodeId,
) -> Result<NodeId> {
    let kappa = params.kappa;
    let mut h = h0;
    for (l, &w) in ids.layers.iter().enumerate() {
        let rho = params.mixing(l);
        let ph = tape.matmul(p_norm, h)?;
        let smooth = tape.affine(ph, 1.0 - kappa, 0.0)?;
        let restart = tape.affine(h0, kappa, 0.0)?;
        let mixed = tape.add(smooth, restart)?;
        let w_scaled = tape.affine(w, rho, 0.0)?;
        let w_mix = tape.add_diag(w_scaled, 1.0 - rho)?;
        let z = tape.matmul(mixed, w_mix)?;
        h = tape.relu(z)?;
    }
    Ok(h)
}
