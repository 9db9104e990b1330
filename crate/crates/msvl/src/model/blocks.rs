//! Tape builders for the model blocks: the grouped-convolution residual
//! encoder, the channel-gating attention module, the multi-head graph
//! attention layer, and the two-class classifier head.
//!
//! Each builder takes parameter node ids (bound leaves of the current tape)
//! and wires one forward pass; the same builders serve training and
//! inference.

use crate::error::Result;
use crate::graph::GraphTopology;
use crate::nn::{Graph, NodeId};

use super::{EncoderConfig, LEAKY_SLOPE};

pub(crate) struct BoundStage {
    pub reduce_w: NodeId,
    pub reduce_b: NodeId,
    pub group_w: NodeId,
    pub group_b: NodeId,
    pub expand_w: NodeId,
    pub expand_b: NodeId,
    pub shortcut: Option<(NodeId, NodeId)>,
    pub stride: usize,
    pub groups: usize,
}

pub(crate) struct BoundEncoder {
    pub stem_w: NodeId,
    pub stem_b: NodeId,
    pub stem_stride: usize,
    pub stem_pad: usize,
    pub stages: Vec<BoundStage>,
    pub proj_w: NodeId,
    pub proj_b: NodeId,
}

pub(crate) struct BoundAttention {
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
}

pub(crate) struct BoundGatHead {
    pub w: NodeId,
    pub a_src: NodeId,
    pub a_dst: NodeId,
}

pub(crate) struct BoundClassifier {
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
}

/// Stem -> residual stages -> GAP -> linear projection to the feature dim.
pub(crate) fn encoder_forward(
    g: &mut Graph,
    enc: &BoundEncoder,
    _cfg: &EncoderConfig,
    input: NodeId,
) -> Result<NodeId> {
    let stem = g.conv2d(input, enc.stem_w, enc.stem_b, enc.stem_stride, enc.stem_pad, 1)?;
    let mut x = g.relu(stem)?;
    for stage in &enc.stages {
        let reduced = g.conv2d(x, stage.reduce_w, stage.reduce_b, 1, 0, 1)?;
        let reduced = g.relu(reduced)?;
        let grouped = g.conv2d(reduced, stage.group_w, stage.group_b, stage.stride, 1, stage.groups)?;
        let grouped = g.relu(grouped)?;
        let expanded = g.conv2d(grouped, stage.expand_w, stage.expand_b, 1, 0, 1)?;
        let shortcut = match stage.shortcut {
            Some((w, b)) => g.conv2d(x, w, b, stage.stride, 0, 1)?,
            None => x,
        };
        let joined = g.add(expanded, shortcut)?;
        x = g.relu(joined)?;
    }
    let pooled = g.global_average_pool(x)?;
    g.fully_connected(pooled, enc.proj_w, Some(enc.proj_b))
}

/// Squeeze-excitation style gate on a pooled feature vector:
/// `feature * sigmoid(fc2(relu(fc1(feature))))`.
pub(crate) fn attention_forward(
    g: &mut Graph,
    attn: &BoundAttention,
    feature: NodeId,
) -> Result<NodeId> {
    let squeezed = g.fully_connected(feature, attn.fc1_w, Some(attn.fc1_b))?;
    let squeezed = g.relu(squeezed)?;
    let gate_pre = g.fully_connected(squeezed, attn.fc2_w, Some(attn.fc2_b))?;
    let gate = g.sigmoid(gate_pre)?;
    g.mul(feature, gate)
}

/// Multi-head graph attention over the node features.
///
/// Per head `h` with projection `W_h` and attention halves `(a_src, a_dst)`:
/// `e_ij = leaky_relu(a_src . W_h x_i + a_dst . W_h x_j)` over
/// `j in neighbors(i) + {i}`, softmax-normalized per node, then
/// `z_i = sum_j alpha_ij W_h x_j`. Heads are concatenated and rectified.
pub(crate) fn gat_forward(
    g: &mut Graph,
    heads: &[BoundGatHead],
    features: &[NodeId],
    topology: &GraphTopology,
) -> Result<Vec<NodeId>> {
    let n = features.len();
    let adjacency = topology.adjacency();

    // Neighbor lists with the self-loop added, in ascending order so the
    // per-node softmax always sums in the same order.
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut nbrs = adjacency[i].clone();
            let pos = nbrs.partition_point(|&j| j < i);
            nbrs.insert(pos, i);
            nbrs
        })
        .collect();

    // Per head: projected features and their attention scores, cached per
    // node before the per-edge pass.
    let mut head_outputs: Vec<Vec<NodeId>> = vec![Vec::with_capacity(heads.len()); n];
    for head in heads {
        let mut projected = Vec::with_capacity(n);
        let mut src_scores = Vec::with_capacity(n);
        let mut dst_scores = Vec::with_capacity(n);
        for &f in features {
            let p = g.fully_connected(f, head.w, None)?;
            let src_terms = g.mul(p, head.a_src)?;
            let dst_terms = g.mul(p, head.a_dst)?;
            src_scores.push(g.sum(src_terms)?);
            dst_scores.push(g.sum(dst_terms)?);
            projected.push(p);
        }
        for i in 0..n {
            let mut logits = Vec::with_capacity(neighborhoods[i].len());
            for &j in &neighborhoods[i] {
                let raw = g.add(src_scores[i], dst_scores[j])?;
                logits.push(g.leaky_relu(raw, LEAKY_SLOPE)?);
            }
            let stacked = g.stack(&logits)?;
            let alpha = g.softmax(stacked)?;
            let mut aggregate: Option<NodeId> = None;
            for (jj, &j) in neighborhoods[i].iter().enumerate() {
                let weight = g.index(alpha, jj)?;
                let term = g.scalar_mul(weight, projected[j])?;
                aggregate = Some(match aggregate {
                    Some(acc) => g.add(acc, term)?,
                    None => term,
                });
            }
            head_outputs[i].push(aggregate.expect("every node has at least its self-loop"));
        }
    }

    let mut outputs = Vec::with_capacity(n);
    for per_head in head_outputs {
        let joined = g.concat(&per_head)?;
        outputs.push(g.relu(joined)?);
    }
    Ok(outputs)
}

/// Mean readout over node features, then FC -> relu -> FC to two logits.
pub(crate) fn classifier_logits(
    g: &mut Graph,
    clf: &BoundClassifier,
    node_features: &[NodeId],
) -> Result<NodeId> {
    let readout = g.mean_vectors(node_features)?;
    let hidden = g.fully_connected(readout, clf.fc1_w, Some(clf.fc1_b))?;
    let hidden = g.relu(hidden)?;
    g.fully_connected(hidden, clf.fc2_w, Some(clf.fc2_b))
}
