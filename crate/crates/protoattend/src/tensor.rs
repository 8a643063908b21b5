//! Dense row-major f64 tensors plus the numeric kernels shared by the
//! autodiff graph and the tape-free inference path. Keeping one kernel per
//! operation is what makes "precomputed database" and "encode on the fly"
//! agree bitwise.

/// Variance floor added inside the layer norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Dense tensor. `data` is row-major; a 2-D tensor with shape `[r, c]` stores
/// row `i` at `data[i * c .. (i + 1) * c]`.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} elements but {} were provided",
            shape,
            numel,
            data.len()
        );
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v])
    }

    pub fn with_grad(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected 2-D tensor, got shape {:?}", self.shape);
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "expected 2-D tensor, got shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// (m,k) · (k,n) -> (m,n). Accumulates row-by-row so the inner loop stays
/// contiguous; this is the hot path of every training step.
pub fn matmul_nn(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k, "lhs has {} elements, expected {}x{}", a.len(), m, k);
    assert_eq!(b.len(), k * n, "rhs has {} elements, expected {}x{}", b.len(), k, n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub(crate) fn add_bias_rows(x: &mut [f64], cols: usize, bias: &[f64]) {
    assert_eq!(bias.len(), cols, "bias has {} entries, rows have {} columns", bias.len(), cols);
    for row in x.chunks_exact_mut(cols) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// x·W + b with x (rows,in), W (in,out), b (out).
pub(crate) fn linear_forward(x: &[f64], rows: usize, w: &[f64], d_in: usize, d_out: usize, b: &[f64]) -> Vec<f64> {
    let mut out = matmul_nn(x, rows, d_in, w, d_out);
    add_bias_rows(&mut out, d_out, b);
    out
}

pub(crate) fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Per-row layer norm with population variance and the eps floor inside the
/// square root: y = gain * (x - mean) / sqrt(var + eps) + bias.
pub(crate) fn layer_norm_forward(x: &[f64], cols: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    assert!(cols > 0, "layer norm needs at least one column");
    assert_eq!(gain.len(), cols);
    assert_eq!(bias.len(), cols);
    let mut out = vec![0.0; x.len()];
    for (row, out_row) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for j in 0..cols {
            out_row[j] = gain[j] * (row[j] - mean) * istd + bias[j];
        }
    }
    out
}

/// Gradients of `layer_norm_forward` w.r.t. input, gain, and bias.
pub(crate) fn layer_norm_backward(
    x: &[f64],
    cols: usize,
    gain: &[f64],
    upstream: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dgain = vec![0.0; cols];
    let mut dbias = vec![0.0; cols];
    let inv_m = 1.0 / cols as f64;
    for ((row, u_row), dx_row) in x
        .chunks_exact(cols)
        .zip(upstream.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
    {
        let mean = row.iter().sum::<f64>() * inv_m;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() * inv_m;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..cols {
            let xh = (row[j] - mean) * istd;
            let dxh = u_row[j] * gain[j];
            dgain[j] += u_row[j] * xh;
            dbias[j] += u_row[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh;
        }
        mean_dxh *= inv_m;
        mean_dxh_xh *= inv_m;
        for j in 0..cols {
            let xh = (row[j] - mean) * istd;
            let dxh = u_row[j] * gain[j];
            dx_row[j] = istd * (dxh - mean_dxh - xh * mean_dxh_xh);
        }
    }
    (dx, dgain, dbias)
}
