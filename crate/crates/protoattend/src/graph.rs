//! Reverse-mode autodiff over a flat tape of tensor ops. Forward methods
//! append a node and compute its value eagerly; `backward` walks the tape in
//! reverse exactly once, accumulating gradients only into subtrees that
//! contain a `requires_grad` leaf.

use crate::simplex::{self, SparsemaxSupport};
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

enum Op {
    Leaf,
    /// x·W + b
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId },
    /// a (m,k) · b (k,n)
    MatMul { a: NodeId, b: NodeId },
    /// a (m,k) · b^T with b (n,k); used for query-key scores
    MatMulNT { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// Elementwise product with a constant mask (no gradient into the mask)
    MulConst { x: NodeId, mask: Tensor },
    /// (1-alpha)·own + alpha·borrowed, with exact copies at the endpoints
    Mix { own: NodeId, borrowed: NodeId, alpha: f64 },
    SoftmaxRows { x: NodeId },
    SparsemaxRows { x: NodeId, supports: Vec<SparsemaxSupport> },
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
    /// Mean row entropy of an attention matrix
    EntropyMean { p: NodeId },
    SumAll { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

pub struct Graph {
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::with_capacity(64) }
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(Op::Leaf, t, needs)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient accumulated by the last `backward`, if any reached this node.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad, grad: None });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        assert_eq!(
            xv.cols(),
            wv.rows(),
            "linear: input shape {:?} does not match weight shape {:?}",
            xv.shape,
            wv.shape
        );
        assert_eq!(bv.numel(), wv.cols(), "linear: bias shape {:?} vs weight shape {:?}", bv.shape, wv.shape);
        let value = Tensor::new(
            vec![xv.rows(), wv.cols()],
            tensor::linear_forward(&xv.data, xv.rows(), &wv.data, wv.rows(), wv.cols(), &bv.data),
        );
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(Op::Linear { x, w, b }, value, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = Tensor { shape: xv.shape.clone(), data: tensor::relu_forward(&xv.data), requires_grad: false, grad: None };
        let needs = self.needs(x);
        self.push(Op::Relu { x }, value, needs)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let cols = xv.cols();
        assert_eq!(gv.numel(), cols, "layer_norm: gain shape {:?} vs input shape {:?}", gv.shape, xv.shape);
        assert_eq!(bv.numel(), cols, "layer_norm: bias shape {:?} vs input shape {:?}", bv.shape, xv.shape);
        let value = Tensor::new(
            xv.shape.clone(),
            tensor::layer_norm_forward(&xv.data, cols, &gv.data, &bv.data),
        );
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(Op::LayerNorm { x, gain, bias }, value, needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.rows(),
            "matmul: lhs shape {:?} does not match rhs shape {:?}",
            av.shape,
            bv.shape
        );
        let value = Tensor::new(
            vec![av.rows(), bv.cols()],
            tensor::matmul_nn(&av.data, av.rows(), av.cols(), &bv.data, bv.cols()),
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul { a, b }, value, needs)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols(),
            bv.cols(),
            "matmul_nt: lhs shape {:?} and rhs shape {:?} must share the inner dimension",
            av.shape,
            bv.shape
        );
        let bt = tensor::transpose(&bv.data, bv.rows(), bv.cols());
        let value = Tensor::new(
            vec![av.rows(), bv.rows()],
            tensor::matmul_nn(&av.data, av.rows(), av.cols(), &bt, bv.rows()),
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMulNT { a, b }, value, needs)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let xv = self.value(x);
        let value = Tensor::new(xv.shape.clone(), xv.data.iter().map(|v| v * factor).collect());
        let needs = self.needs(x);
        self.push(Op::Scale { x, factor }, value, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "add: shape mismatch {:?} vs {:?}", av.shape, bv.shape);
        let value = Tensor::new(av.shape.clone(), av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect());
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add { a, b }, value, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape, bv.shape, "mul: shape mismatch {:?} vs {:?}", av.shape, bv.shape);
        let value = Tensor::new(av.shape.clone(), av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect());
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul { a, b }, value, needs)
    }

    pub fn mul_const(&mut self, x: NodeId, mask: Tensor) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.shape, mask.shape, "mul_const: shape mismatch {:?} vs {:?}", xv.shape, mask.shape);
        let value = Tensor::new(xv.shape.clone(), xv.data.iter().zip(&mask.data).map(|(a, m)| a * m).collect());
        let needs = self.needs(x);
        self.push(Op::MulConst { x, mask }, value, needs)
    }

    /// Convex combination of a sample's own value row and its attention-mixed
    /// candidate values. At alpha 0 or 1 the unused side contributes neither
    /// value nor gradient, so those configurations are exactly the pure paths.
    pub fn mix(&mut self, own: NodeId, borrowed: NodeId, alpha: f64) -> NodeId {
        assert!((0.0..=1.0).contains(&alpha), "mix weight must lie in [0,1], got {alpha}");
        let (ov, bv) = (self.value(own), self.value(borrowed));
        assert_eq!(ov.shape, bv.shape, "mix: shape mismatch {:?} vs {:?}", ov.shape, bv.shape);
        let data = if alpha == 0.0 {
            ov.data.clone()
        } else if alpha == 1.0 {
            bv.data.clone()
        } else {
            ov.data
                .iter()
                .zip(&bv.data)
                .map(|(o, b)| (1.0 - alpha) * o + alpha * b)
                .collect()
        };
        let value = Tensor::new(ov.shape.clone(), data);
        let needs = self.needs(own) || self.needs(borrowed);
        self.push(Op::Mix { own, borrowed, alpha }, value, needs)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(xv.numel());
        for row in xv.data.chunks_exact(cols) {
            data.extend(simplex::softmax_row(row));
        }
        let value = Tensor::new(xv.shape.clone(), data);
        let needs = self.needs(x);
        self.push(Op::SoftmaxRows { x }, value, needs)
    }

    pub fn sparsemax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = Vec::with_capacity(xv.numel());
        let mut supports = Vec::with_capacity(xv.rows());
        for row in xv.data.chunks_exact(cols) {
            let (p, sup) = simplex::sparsemax_row(row);
            data.extend(p);
            supports.push(sup);
        }
        let value = Tensor::new(xv.shape.clone(), data);
        let needs = self.needs(x);
        self.push(Op::SparsemaxRows { x, supports }, value, needs)
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let lv = self.value(logits);
        let value = Tensor::scalar(simplex::softmax_cross_entropy(lv, &labels));
        let needs = self.needs(logits);
        self.push(Op::CrossEntropy { logits, labels }, value, needs)
    }

    pub fn entropy_mean(&mut self, p: NodeId) -> NodeId {
        let pv = self.value(p);
        let value = Tensor::scalar(simplex::entropy_sparsity(pv));
        let needs = self.needs(p);
        self.push(Op::EntropyMean { p }, value, needs)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data.iter().sum());
        let needs = self.needs(x);
        self.push(Op::SumAll { x }, value, needs)
    }

    /// Backpropagate from a scalar loss. Gradients land on every node whose
    /// subtree contains a `requires_grad` leaf and are read back via `grad`.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.nodes[loss.0].value.shape
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.grad = g;
        }
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let add_to = |grads: &mut [Option<Vec<f64>>], target: NodeId, contribution: Vec<f64>| {
            match &mut grads[target.0] {
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(contribution) {
                        *a += c;
                    }
                }
                slot @ None => *slot = Some(contribution),
            }
        };

        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (r, d_in, d_out) = (xv.rows(), wv.rows(), wv.cols());
                if self.needs(*x) {
                    let wt = tensor::transpose(&wv.data, d_in, d_out);
                    add_to(grads, *x, tensor::matmul_nn(g, r, d_out, &wt, d_in));
                }
                if self.needs(*w) {
                    let xt = tensor::transpose(&xv.data, r, d_in);
                    add_to(grads, *w, tensor::matmul_nn(&xt, d_in, r, g, d_out));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; d_out];
                    for row in g.chunks_exact(d_out) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    add_to(grads, *b, db);
                }
            }
            Op::Relu { x } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let dx = xv.data.iter().zip(g).map(|(&v, &u)| if v > 0.0 { u } else { 0.0 }).collect();
                    add_to(grads, *x, dx);
                }
            }
            Op::LayerNorm { x, gain, bias } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (dx, dgain, dbias) = tensor::layer_norm_backward(&xv.data, xv.cols(), &gv.data, g);
                if self.needs(*x) {
                    add_to(grads, *x, dx);
                }
                if self.needs(*gain) {
                    add_to(grads, *gain, dgain);
                }
                if self.needs(*bias) {
                    add_to(grads, *bias, dbias);
                }
            }
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let bt = tensor::transpose(&bv.data, k, n);
                    add_to(grads, *a, tensor::matmul_nn(g, m, n, &bt, k));
                }
                if self.needs(*b) {
                    let at = tensor::transpose(&av.data, m, k);
                    add_to(grads, *b, tensor::matmul_nn(&at, k, m, g, n));
                }
            }
            Op::MatMulNT { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.needs(*a) {
                    add_to(grads, *a, tensor::matmul_nn(g, m, n, &bv.data, k));
                }
                if self.needs(*b) {
                    let gt = tensor::transpose(g, m, n);
                    add_to(grads, *b, tensor::matmul_nn(&gt, n, m, &av.data, k));
                }
            }
            Op::Scale { x, factor } => {
                if self.needs(*x) {
                    add_to(grads, *x, g.iter().map(|v| v * factor).collect());
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    add_to(grads, *a, g.to_vec());
                }
                if self.needs(*b) {
                    add_to(grads, *b, g.to_vec());
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    add_to(grads, *a, g.iter().zip(&bv.data).map(|(u, v)| u * v).collect());
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    add_to(grads, *b, g.iter().zip(&av.data).map(|(u, v)| u * v).collect());
                }
            }
            Op::MulConst { x, mask } => {
                if self.needs(*x) {
                    add_to(grads, *x, g.iter().zip(&mask.data).map(|(u, m)| u * m).collect());
                }
            }
            Op::Mix { own, borrowed, alpha } => {
                if self.needs(*own) {
                    add_to(grads, *own, g.iter().map(|v| (1.0 - alpha) * v).collect());
                }
                if self.needs(*borrowed) {
                    add_to(grads, *borrowed, g.iter().map(|v| alpha * v).collect());
                }
            }
            Op::SoftmaxRows { x } => {
                if self.needs(*x) {
                    let out = &self.nodes[id].value;
                    let cols = out.cols();
                    let mut dx = Vec::with_capacity(out.numel());
                    for (s_row, g_row) in out.data.chunks_exact(cols).zip(g.chunks_exact(cols)) {
                        let dot: f64 = s_row.iter().zip(g_row).map(|(s, u)| s * u).sum();
                        dx.extend(s_row.iter().zip(g_row).map(|(s, u)| s * (u - dot)));
                    }
                    add_to(grads, *x, dx);
                }
            }
            Op::SparsemaxRows { x, supports } => {
                if self.needs(*x) {
                    let cols = self.nodes[id].value.cols();
                    let mut dx = Vec::with_capacity(self.nodes[id].value.numel());
                    for (sup, g_row) in supports.iter().zip(g.chunks_exact(cols)) {
                        dx.extend(simplex::sparsemax_jvp(sup, g_row));
                    }
                    add_to(grads, *x, dx);
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if self.needs(*logits) {
                    let lv = self.value(*logits);
                    let (b, c) = (lv.rows(), lv.cols());
                    let scale = g[0] / b as f64;
                    let mut dl = Vec::with_capacity(lv.numel());
                    for (row, &y) in lv.data.chunks_exact(c).zip(labels) {
                        let probs = simplex::softmax_row(row);
                        dl.extend(
                            probs
                                .iter()
                                .enumerate()
                                .map(|(j, &p)| scale * (p - if j == y { 1.0 } else { 0.0 })),
                        );
                    }
                    add_to(grads, *logits, dl);
                }
            }
            Op::EntropyMean { p } => {
                if self.needs(*p) {
                    let pv = self.value(*p);
                    let scale = -g[0] / pv.rows() as f64;
                    let dp = pv
                        .data
                        .iter()
                        .map(|&v| scale * ((v + simplex::ENTROPY_EPS).ln() + v / (v + simplex::ENTROPY_EPS)))
                        .collect();
                    add_to(grads, *p, dp);
                }
            }
            Op::SumAll { x } => {
                if self.needs(*x) {
                    add_to(grads, *x, vec![g[0]; self.value(*x).numel()]);
                }
            }
        }
    }
}
