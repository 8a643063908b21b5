//! The prototypical model: a shared encoder producing (value, query, key)
//! triplets, attention from batch queries to candidate keys, and a decision
//! head applied to a convex mix of a sample's own value and the
//! attention-weighted candidate values. The mixing weight alpha interpolates
//! between a plain classifier (alpha 0) and a purely prototype-driven one
//! (alpha 1).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::database::CandidateDatabase;
use crate::graph::{Graph, NodeId};
use crate::simplex;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalization {
    Softmax,
    Sparsemax,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::Softmax => "softmax",
            Normalization::Sparsemax => "sparsemax",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "softmax" => Ok(Normalization::Softmax),
            "sparsemax" => Ok(Normalization::Sparsemax),
            other => Err(format!("unknown normalization '{other}' (expected softmax or sparsemax)")),
        }
    }
}

/// Which alpha values the training objective averages the task loss over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveVariant {
    AlphaZero,
    AlphaOne,
    AlphaHalf,
    SumZeroOne,
    AnnealedZeroToOne,
    SumZeroOneHalf,
}

impl ObjectiveVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveVariant::AlphaZero => "alpha_zero",
            ObjectiveVariant::AlphaOne => "alpha_one",
            ObjectiveVariant::AlphaHalf => "alpha_half",
            ObjectiveVariant::SumZeroOne => "sum_zero_one",
            ObjectiveVariant::AnnealedZeroToOne => "annealed_zero_to_one",
            ObjectiveVariant::SumZeroOneHalf => "sum_zero_one_half",
        }
    }

    pub const ALL: [ObjectiveVariant; 6] = [
        ObjectiveVariant::AlphaZero,
        ObjectiveVariant::AlphaOne,
        ObjectiveVariant::AlphaHalf,
        ObjectiveVariant::SumZeroOne,
        ObjectiveVariant::AnnealedZeroToOne,
        ObjectiveVariant::SumZeroOneHalf,
    ];
}

impl std::str::FromStr for ObjectiveVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ObjectiveVariant::ALL
            .iter()
            .find(|v| v.as_str() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = ObjectiveVariant::ALL.iter().map(|v| v.as_str()).collect();
                format!("unknown objective '{s}' (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub d_att: usize,
    pub d_out: usize,
    pub normalization: Normalization,
    /// Mixing weight used at prediction time.
    pub alpha_predict: f64,
    pub lambda_sparse: f64,
    pub lambda_conf: f64,
    pub objective: ObjectiveVariant,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            input_dim: 16,
            encoder_hidden_dims: vec![64, 32],
            num_classes: 4,
            d_att: 16,
            d_out: 32,
            normalization: Normalization::Softmax,
            alpha_predict: 1.0,
            lambda_sparse: 0.0,
            lambda_conf: 0.0,
            objective: ObjectiveVariant::SumZeroOneHalf,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.input_dim == 0 {
            return Err("input_dim must be at least 1".into());
        }
        if self.num_classes < 2 {
            return Err(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.d_att == 0 || self.d_out == 0 {
            return Err("d_att and d_out must be at least 1".into());
        }
        if self.encoder_hidden_dims.iter().any(|&d| d == 0) {
            return Err("hidden layer widths must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha_predict) {
            return Err(format!("alpha_predict must lie in [0, 1], got {}", self.alpha_predict));
        }
        if self.lambda_sparse < 0.0 || self.lambda_conf < 0.0 {
            return Err("regularizer weights must be non-negative".into());
        }
        Ok(())
    }

}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct ModelParameters {
    pub trunk: Vec<LinearLayer>,
    pub query_head: LinearLayer,
    pub key_head: LinearLayer,
    pub value_head: LinearLayer,
    pub value_norm: LayerNormParams,
    pub decision: LinearLayer,
}

fn init_linear(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> LinearLayer {
    let bound = (6.0 / d_in as f64).sqrt();
    let weight = Tensor::new(
        vec![d_in, d_out],
        (0..d_in * d_out).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .with_grad();
    let bias = Tensor::zeros(vec![d_out]).with_grad();
    LinearLayer { weight, bias }
}

impl ModelParameters {
    /// Fan-in scaled uniform init for weights, zero biases, identity layer
    /// norm. Fully determined by the seed.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::new();
        let mut d_in = config.input_dim;
        for &width in &config.encoder_hidden_dims {
            trunk.push(init_linear(&mut rng, d_in, width));
            d_in = width;
        }
        let query_head = init_linear(&mut rng, d_in, config.d_att);
        let key_head = init_linear(&mut rng, d_in, config.d_att);
        let value_head = init_linear(&mut rng, d_in, config.d_out);
        let value_norm = LayerNormParams {
            gain: Tensor::new(vec![config.d_out], vec![1.0; config.d_out]).with_grad(),
            bias: Tensor::zeros(vec![config.d_out]).with_grad(),
        };
        let decision = init_linear(&mut rng, config.d_out, config.num_classes);
        ModelParameters { trunk, query_head, key_head, value_head, value_norm, decision }
    }

    /// Stable (name, tensor) listing; the order defines optimizer state and
    /// checkpoint layout.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter().enumerate() {
            out.push((format!("trunk.{i}.weight"), &layer.weight));
            out.push((format!("trunk.{i}.bias"), &layer.bias));
        }
        out.push(("query.weight".to_string(), &self.query_head.weight));
        out.push(("query.bias".to_string(), &self.query_head.bias));
        out.push(("key.weight".to_string(), &self.key_head.weight));
        out.push(("key.bias".to_string(), &self.key_head.bias));
        out.push(("value.weight".to_string(), &self.value_head.weight));
        out.push(("value.bias".to_string(), &self.value_head.bias));
        out.push(("value_norm.gain".to_string(), &self.value_norm.gain));
        out.push(("value_norm.bias".to_string(), &self.value_norm.bias));
        out.push(("decision.weight".to_string(), &self.decision.weight));
        out.push(("decision.bias".to_string(), &self.decision.bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.trunk.iter_mut().enumerate() {
            out.push((format!("trunk.{i}.weight"), &mut layer.weight));
            out.push((format!("trunk.{i}.bias"), &mut layer.bias));
        }
        out.push(("query.weight".to_string(), &mut self.query_head.weight));
        out.push(("query.bias".to_string(), &mut self.query_head.bias));
        out.push(("key.weight".to_string(), &mut self.key_head.weight));
        out.push(("key.bias".to_string(), &mut self.key_head.bias));
        out.push(("value.weight".to_string(), &mut self.value_head.weight));
        out.push(("value.bias".to_string(), &mut self.value_head.bias));
        out.push(("value_norm.gain".to_string(), &mut self.value_norm.gain));
        out.push(("value_norm.bias".to_string(), &mut self.value_norm.bias));
        out.push(("decision.weight".to_string(), &mut self.decision.weight));
        out.push(("decision.bias".to_string(), &mut self.decision.bias));
        out
    }

    /// Digest of all parameter names, shapes, and payloads; used to detect a
    /// candidate database encoded under different weights.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, t) in self.named() {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &d in &t.shape {
                hasher.update((d as u32).to_le_bytes());
            }
            for &v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Encoder outputs for a batch: one value, query, and key row per input.
#[derive(Clone, Debug)]
pub struct EncodedBatch {
    pub values: Tensor,
    pub queries: Tensor,
    pub keys: Tensor,
}

/// Run the shared trunk and the three heads. Works for any row count,
/// including zero.
pub fn encode(x: &Tensor, params: &ModelParameters, config: &ModelConfig) -> EncodedBatch {
    assert_eq!(
        x.cols(),
        config.input_dim,
        "encode: input has {} columns, model expects {}",
        x.cols(),
        config.input_dim
    );
    let rows = x.rows();
    let mut h = x.data.clone();
    let mut width = config.input_dim;
    for layer in &params.trunk {
        let out_w = layer.weight.cols();
        h = tensor::relu_forward(&tensor::linear_forward(&h, rows, &layer.weight.data, width, out_w, &layer.bias.data));
        width = out_w;
    }
    let head = |layer: &LinearLayer| {
        tensor::relu_forward(&tensor::linear_forward(
            &h,
            rows,
            &layer.weight.data,
            width,
            layer.weight.cols(),
            &layer.bias.data,
        ))
    };
    let queries = Tensor::new(vec![rows, config.d_att], head(&params.query_head));
    let keys = Tensor::new(vec![rows, config.d_att], head(&params.key_head));
    let v_pre = head(&params.value_head);
    let values = Tensor::new(
        vec![rows, config.d_out],
        tensor::layer_norm_forward(&v_pre, config.d_out, &params.value_norm.gain.data, &params.value_norm.bias.data),
    );
    EncodedBatch { values, queries, keys }
}

/// Attention weights with every row validated to lie on the simplex.
#[derive(Clone, Debug)]
pub struct AttentionMatrix {
    weights: Tensor,
}

impl AttentionMatrix {
    pub fn new(weights: Tensor) -> AttentionMatrix {
        let cols = weights.cols();
        for (i, row) in weights.data.chunks_exact(cols).enumerate() {
            let sum: f64 = row.iter().sum();
            assert!(
                (sum - 1.0).abs() <= 1e-6 && row.iter().all(|&p| p >= 0.0),
                "attention row {i} is not on the simplex (sum {sum})"
            );
        }
        AttentionMatrix { weights }
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.weights.row(i)
    }
}

/// Scaled dot-product scores from batch queries to candidate keys, each row
/// normalized onto the simplex.
pub fn relational_attention(queries: &Tensor, keys: &Tensor, normalization: Normalization) -> AttentionMatrix {
    assert_eq!(
        queries.cols(),
        keys.cols(),
        "attention: query width {} does not match key width {}",
        queries.cols(),
        keys.cols()
    );
    assert!(keys.rows() > 0, "attention needs at least one candidate");
    let d_att = queries.cols();
    let scale = 1.0 / (d_att as f64).sqrt();
    let kt = tensor::transpose(&keys.data, keys.rows(), d_att);
    let mut scores = tensor::matmul_nn(&queries.data, queries.rows(), d_att, &kt, keys.rows());
    for v in scores.iter_mut() {
        *v *= scale;
    }
    let cols = keys.rows();
    let mut weights = Vec::with_capacity(scores.len());
    for row in scores.chunks_exact(cols) {
        match normalization {
            Normalization::Softmax => weights.extend(simplex::softmax_row(row)),
            Normalization::Sparsemax => weights.extend(simplex::sparsemax_row(row).0),
        }
    }
    AttentionMatrix::new(Tensor::new(vec![queries.rows(), cols], weights))
}

/// (1-alpha)·V_in + alpha·P·V_c. The endpoints skip the unused side entirely,
/// so alpha 0 is bitwise the plain value rows and alpha 1 bitwise the
/// attention-mixed candidate rows.
pub fn mix_values(v_in: &Tensor, v_candidates: &Tensor, p: &AttentionMatrix, alpha: f64) -> Tensor {
    assert!((0.0..=1.0).contains(&alpha), "mix weight must lie in [0,1], got {alpha}");
    assert_eq!(v_in.cols(), v_candidates.cols(), "value width mismatch");
    assert_eq!(p.weights().rows(), v_in.rows(), "attention rows must match batch size");
    assert_eq!(p.weights().cols(), v_candidates.rows(), "attention columns must match candidate count");
    if alpha == 0.0 {
        return v_in.clone();
    }
    let pw = p.weights();
    let pv = tensor::matmul_nn(&pw.data, pw.rows(), pw.cols(), &v_candidates.data, v_candidates.cols());
    if alpha == 1.0 {
        return Tensor::new(vec![v_in.rows(), v_in.cols()], pv);
    }
    let data = v_in
        .data
        .iter()
        .zip(&pv)
        .map(|(o, b)| (1.0 - alpha) * o + alpha * b)
        .collect();
    Tensor::new(vec![v_in.rows(), v_in.cols()], data)
}

/// Linear decision head over mixed value rows.
pub fn decide(mixed: &Tensor, head: &LinearLayer) -> Tensor {
    assert_eq!(
        mixed.cols(),
        head.weight.rows(),
        "decide: value width {} does not match head input {}",
        mixed.cols(),
        head.weight.rows()
    );
    Tensor::new(
        vec![mixed.rows(), head.weight.cols()],
        tensor::linear_forward(&mixed.data, mixed.rows(), &head.weight.data, head.weight.rows(), head.weight.cols(), &head.bias.data),
    )
}

/// Lowest index wins ties, everywhere a class is picked in this crate.
pub fn argmax(row: &[f64]) -> usize {
    assert!(!row.is_empty());
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Total attention weight on candidates whose label agrees with the
/// prediction. Lies in [0, 1] because the weights lie on the simplex.
pub fn confidence_conformity(weights: &[f64], candidate_labels: &[usize], predicted: usize) -> f64 {
    assert_eq!(weights.len(), candidate_labels.len());
    weights
        .iter()
        .zip(candidate_labels)
        .filter(|(_, &y)| y == predicted)
        .map(|(&w, _)| w)
        .sum()
}

/// Mean attention mass on label-matching candidates, negated: minimizing it
/// pushes attention toward same-class candidates. Lies in [-1, 0].
pub fn confidence_regularizer(p: &AttentionMatrix, candidate_labels: &[usize], true_labels: &[usize]) -> f64 {
    let w = p.weights();
    assert_eq!(w.rows(), true_labels.len());
    assert_eq!(w.cols(), candidate_labels.len());
    let mut total = 0.0;
    for (row, &y) in w.data.chunks_exact(w.cols()).zip(true_labels) {
        for (&pij, &cand_y) in row.iter().zip(candidate_labels) {
            if cand_y == y {
                total += pij;
            }
        }
    }
    -total / w.rows() as f64
}

/// Additive pieces of the training loss; the columns sum to `total`. Terms a
/// variant does not use are zero; the annealed variant records its weighted
/// contributions.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha_half: f64,
    pub sparse: f64,
    pub conf: f64,
}

pub(crate) struct ParamNodes {
    trunk: Vec<(NodeId, NodeId)>,
    query: (NodeId, NodeId),
    key: (NodeId, NodeId),
    value: (NodeId, NodeId),
    value_norm: (NodeId, NodeId),
    decision: (NodeId, NodeId),
}

impl ParamNodes {
    /// Node ids in the same order as `ModelParameters::named`.
    pub(crate) fn ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(w, b) in &self.trunk {
            out.push(w);
            out.push(b);
        }
        for &(a, b) in [&self.query, &self.key, &self.value, &self.value_norm, &self.decision] {
            out.push(a);
            out.push(b);
        }
        out
    }
}

pub(crate) fn insert_params(g: &mut Graph, params: &ModelParameters) -> ParamNodes {
    let pair = |layer: &LinearLayer, g: &mut Graph| {
        (g.leaf(layer.weight.clone()), g.leaf(layer.bias.clone()))
    };
    ParamNodes {
        trunk: params.trunk.iter().map(|l| pair(l, g)).collect(),
        query: pair(&params.query_head, g),
        key: pair(&params.key_head, g),
        value: pair(&params.value_head, g),
        value_norm: (g.leaf(params.value_norm.gain.clone()), g.leaf(params.value_norm.bias.clone())),
        decision: pair(&params.decision, g),
    }
}

/// Graph twin of `encode`: returns (values, queries, keys) node ids.
pub(crate) fn encode_nodes(g: &mut Graph, x: NodeId, p: &ParamNodes) -> (NodeId, NodeId, NodeId) {
    let mut h = x;
    for &(w, b) in &p.trunk {
        let lin = g.linear(h, w, b);
        h = g.relu(lin);
    }
    let head = |g: &mut Graph, (w, b): (NodeId, NodeId)| {
        let lin = g.linear(h, w, b);
        g.relu(lin)
    };
    let queries = head(g, p.query);
    let keys = head(g, p.key);
    let v_pre = head(g, p.value);
    let values = g.layer_norm(v_pre, p.value_norm.0, p.value_norm.1);
    (values, queries, keys)
}

/// Task-loss mixing weights per variant, in the fixed order alpha 0, 1, 0.5.
fn alpha_weights(variant: ObjectiveVariant, iteration: u64, total_iterations: u64) -> Vec<(f64, f64)> {
    match variant {
        ObjectiveVariant::AlphaZero => vec![(0.0, 1.0)],
        ObjectiveVariant::AlphaOne => vec![(1.0, 1.0)],
        ObjectiveVariant::AlphaHalf => vec![(0.5, 1.0)],
        ObjectiveVariant::SumZeroOne => vec![(0.0, 1.0), (1.0, 1.0)],
        ObjectiveVariant::SumZeroOneHalf => vec![(0.0, 1.0), (1.0, 1.0), (0.5, 1.0)],
        ObjectiveVariant::AnnealedZeroToOne => {
            assert!(
                iteration <= total_iterations,
                "iteration {iteration} past the end of the anneal ({total_iterations})"
            );
            let frac = if total_iterations == 0 { 0.0 } else { iteration as f64 / total_iterations as f64 };
            vec![(0.0, 1.0 - frac), (1.0, frac)]
        }
    }
}

pub(crate) struct ObjectiveGraph {
    pub graph: Graph,
    pub param_nodes: ParamNodes,
    pub total: NodeId,
    pub breakdown: LossBreakdown,
}

/// Build the full training objective on a fresh graph. Candidate encoding is
/// skipped when no term can observe it (pure alpha-0 task loss with both
/// regularizers off), which leaves the recorded metrics unchanged.
pub(crate) fn build_objective(
    inputs: &Tensor,
    labels: &[usize],
    candidates: &Tensor,
    candidate_labels: &[usize],
    params: &ModelParameters,
    config: &ModelConfig,
    iteration: u64,
    total_iterations: u64,
) -> ObjectiveGraph {
    assert_eq!(inputs.rows(), labels.len(), "batch size vs label count");
    assert_eq!(candidates.rows(), candidate_labels.len(), "candidate count vs label count");
    assert!(inputs.rows() > 0, "objective needs a non-empty batch");
    let weights = alpha_weights(config.objective, iteration, total_iterations);
    let needs_attention =
        weights.iter().any(|&(a, _)| a > 0.0) || config.lambda_sparse > 0.0 || config.lambda_conf > 0.0;
    let needs_mixed_values = weights.iter().any(|&(a, _)| a > 0.0);

    let mut g = Graph::new();
    let param_nodes = insert_params(&mut g, params);
    let x = g.leaf(inputs.clone());
    let (v_in, q_in, _) = encode_nodes(&mut g, x, &param_nodes);

    let mut attention = None;
    let mut pv = None;
    if needs_attention {
        assert!(!candidate_labels.is_empty(), "objective needs at least one candidate");
        let c = g.leaf(candidates.clone());
        let (v_c, _, k_c) = encode_nodes(&mut g, c, &param_nodes);
        let raw = g.matmul_nt(q_in, k_c);
        let scores = g.scale(raw, 1.0 / (config.d_att as f64).sqrt());
        let p = match config.normalization {
            Normalization::Softmax => g.softmax_rows(scores),
            Normalization::Sparsemax => g.sparsemax_rows(scores),
        };
        attention = Some(p);
        if needs_mixed_values {
            pv = Some(g.matmul(p, v_c));
        }
    }

    let mut breakdown = LossBreakdown::default();
    let mut total: Option<NodeId> = None;
    let accumulate = |g: &mut Graph, node: NodeId, total: &mut Option<NodeId>| -> f64 {
        *total = Some(match *total {
            None => node,
            Some(t) => g.add(t, node),
        });
        g.value(node).data[0]
    };

    for &(alpha, weight) in &weights {
        let mixed = if alpha == 0.0 {
            g.mix(v_in, v_in, 0.0)
        } else {
            g.mix(v_in, pv.expect("attention branch required for alpha > 0"), alpha)
        };
        let logits = g.linear(mixed, param_nodes.decision.0, param_nodes.decision.1);
        let task = g.cross_entropy(logits, labels.to_vec());
        let contribution = g.scale(task, weight);
        let value = accumulate(&mut g, contribution, &mut total);
        if alpha == 0.0 {
            breakdown.alpha0 = value;
        } else if alpha == 1.0 {
            breakdown.alpha1 = value;
        } else {
            breakdown.alpha_half = value;
        }
    }

    if config.lambda_sparse > 0.0 {
        let p = attention.expect("attention exists when lambda_sparse > 0");
        let entropy = g.entropy_mean(p);
        let contribution = g.scale(entropy, config.lambda_sparse);
        breakdown.sparse = accumulate(&mut g, contribution, &mut total);
    }
    if config.lambda_conf > 0.0 {
        let p = attention.expect("attention exists when lambda_conf > 0");
        let b = inputs.rows();
        let mask_data: Vec<f64> = labels
            .iter()
            .flat_map(|&y| candidate_labels.iter().map(move |&cy| if cy == y { 1.0 } else { 0.0 }))
            .collect();
        let mask = Tensor::new(vec![b, candidate_labels.len()], mask_data);
        let masked = g.mul_const(p, mask);
        let summed = g.sum_all(masked);
        let conf = g.scale(summed, -1.0 / b as f64);
        let contribution = g.scale(conf, config.lambda_conf);
        breakdown.conf = accumulate(&mut g, contribution, &mut total);
    }

    let total = total.expect("every variant has at least one task term");
    breakdown.total = g.value(total).data[0];
    ObjectiveGraph { graph: g, param_nodes, total, breakdown }
}

/// Training loss split into its additive components, without gradients.
#[allow(clippy::too_many_arguments)]
pub fn objective_components(
    inputs: &Tensor,
    labels: &[usize],
    candidates: &Tensor,
    candidate_labels: &[usize],
    params: &ModelParameters,
    config: &ModelConfig,
    iteration: u64,
    total_iterations: u64,
) -> LossBreakdown {
    build_objective(inputs, labels, candidates, candidate_labels, params, config, iteration, total_iterations)
        .breakdown
}

/// Scalar training loss for the configured variant.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    inputs: &Tensor,
    labels: &[usize],
    candidates: &Tensor,
    candidate_labels: &[usize],
    params: &ModelParameters,
    config: &ModelConfig,
    iteration: u64,
    total_iterations: u64,
) -> f64 {
    objective_components(inputs, labels, candidates, candidate_labels, params, config, iteration, total_iterations)
        .total
}

/// Loss breakdown plus the gradient of the total with respect to every
/// parameter, keyed and ordered as in `ModelParameters::named`. Parameters the
/// configured variant never touches get zero gradients.
#[allow(clippy::too_many_arguments)]
pub fn objective_gradients(
    inputs: &Tensor,
    labels: &[usize],
    candidates: &Tensor,
    candidate_labels: &[usize],
    params: &ModelParameters,
    config: &ModelConfig,
    iteration: u64,
    total_iterations: u64,
) -> (LossBreakdown, Vec<(String, Vec<f64>)>) {
    let mut obj =
        build_objective(inputs, labels, candidates, candidate_labels, params, config, iteration, total_iterations);
    obj.graph.backward(obj.total);
    let grads = params
        .named()
        .into_iter()
        .zip(obj.param_nodes.ids())
        .map(|((name, tensor), node)| {
            let g = obj.graph.grad(node).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tensor.numel()]);
            (name, g)
        })
        .collect();
    (obj.breakdown, grads)
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("candidate database was encoded under different parameters; re-encode it before predicting")]
    StaleDatabase,
}

/// One prototype behind a prediction.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Prototype {
    /// Row position inside the candidate database.
    pub database_index: usize,
    /// Row position in the dataset the database was sampled from.
    pub source_index: usize,
    pub label: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct PredictionReport {
    pub predicted_class: usize,
    pub confidence: f64,
    pub logits: Vec<f64>,
    /// Highest-weight candidates, descending; ties broken by database index.
    pub prototypes: Vec<Prototype>,
}

/// Classify one input against a candidate database and report the prototypes
/// behind the decision. Uses the database's precomputed encoding when present
/// (after checking it matches `params`), otherwise encodes on the fly.
pub fn predict(
    x: &[f64],
    db: &CandidateDatabase,
    params: &ModelParameters,
    config: &ModelConfig,
    top_m: usize,
) -> Result<PredictionReport, ModelError> {
    assert_eq!(x.len(), config.input_dim, "input has {} features, model expects {}", x.len(), config.input_dim);
    assert!(top_m >= 1, "top_m must be at least 1");
    assert!(!db.is_empty(), "candidate database is empty");

    let fresh;
    let (keys, values) = match db.encoded() {
        Some(enc) => {
            if enc.params_fingerprint != params.fingerprint() {
                return Err(ModelError::StaleDatabase);
            }
            (&enc.keys, &enc.values)
        }
        None => {
            fresh = encode(&db.features, params, config);
            (&fresh.keys, &fresh.values)
        }
    };

    let input = Tensor::new(vec![1, config.input_dim], x.to_vec());
    let enc_in = encode(&input, params, config);
    let p = relational_attention(&enc_in.queries, keys, config.normalization);
    let mixed = mix_values(&enc_in.values, values, &p, config.alpha_predict);
    let logits = decide(&mixed, &params.decision);
    let predicted_class = argmax(logits.row(0));
    let confidence = confidence_conformity(p.row(0), db.labels(), predicted_class);

    let row = p.row(0);
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    order.truncate(top_m);
    let prototypes = order
        .into_iter()
        .map(|j| Prototype {
            database_index: j,
            source_index: db.source_indices()[j],
            label: db.labels()[j],
            weight: row[j],
        })
        .collect();

    Ok(PredictionReport { predicted_class, confidence, logits: logits.data, prototypes })
}
