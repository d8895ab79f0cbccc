//! Dense kernels for the transformer: chunk-parallel matmul, layer norm,
//! GELU, softmax. Chunk sizes depend only on problem size, so the parallel
//! and sequential paths produce bitwise-identical results.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::par;

/// Rows per parallel chunk for matrix products.
const MATMUL_CHUNK: usize = 128;

/// `a · b` with the row dimension split into fixed chunks. Each chunk is an
/// independent GEMM over identical inputs, so thread count cannot change the
/// result.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (m, n) = (a.nrows(), b.ncols());
    if m <= MATMUL_CHUNK {
        return a.dot(&b);
    }
    let ranges: Vec<(usize, usize)> = (0..m)
        .step_by(MATMUL_CHUNK)
        .map(|lo| (lo, (lo + MATMUL_CHUNK).min(m)))
        .collect();
    let parts = par::map_items(ranges, |(lo, hi)| a.slice(s![lo..hi, ..]).dot(&b));
    let mut out = Array2::zeros((m, n));
    let mut lo = 0;
    for part in parts {
        let hi = lo + part.nrows();
        out.slice_mut(s![lo..hi, ..]).assign(&part);
        lo = hi;
    }
    out
}

/// Linear layer weights: `w` is out×in, `b` is out.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    /// y = x·wᵀ + b for row-major token matrices.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = matmul(x, self.w.t());
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients and returns dx.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        grad.w += &matmul(dy.t(), x);
        grad.b += &dy.sum_axis(Axis(0));
        matmul(dy, self.w.view())
    }
}

/// Layer norm state needed for the backward pass.
pub struct LnCache {
    /// (x − μ)/σ rows.
    pub normed: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm with affine parameters.
pub fn layer_norm(
    x: ArrayView2<f64>,
    gain: ArrayView1<f64>,
    bias: ArrayView1<f64>,
) -> (Array2<f64>, LnCache) {
    let (m, d) = (x.nrows(), x.ncols());
    let mut normed = Array2::zeros((m, d));
    let mut inv_std = Array1::zeros(m);
    for r in 0..m {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            normed[(r, c)] = (x[(r, c)] - mean) * istd;
        }
    }
    let mut y = normed.clone();
    for r in 0..m {
        for c in 0..d {
            y[(r, c)] = y[(r, c)] * gain[c] + bias[c];
        }
    }
    (y, LnCache { normed, inv_std })
}

/// Backward through layer norm; returns dx and accumulates dgain/dbias.
pub fn layer_norm_backward(
    dy: ArrayView2<f64>,
    cache: &LnCache,
    gain: ArrayView1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    let (m, d) = (dy.nrows(), dy.ncols());
    let mut dx = Array2::zeros((m, d));
    for r in 0..m {
        let mut sum_dn = 0.0;
        let mut sum_dn_x = 0.0;
        for c in 0..d {
            let dn = dy[(r, c)] * gain[c];
            sum_dn += dn;
            sum_dn_x += dn * cache.normed[(r, c)];
            dgain[c] += dy[(r, c)] * cache.normed[(r, c)];
            dbias[c] += dy[(r, c)];
        }
        let istd = cache.inv_std[r];
        for c in 0..d {
            let dn = dy[(r, c)] * gain[c];
            dx[(r, c)] =
                istd * (dn - sum_dn / d as f64 - cache.normed[(r, c)] * sum_dn_x / d as f64);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// tanh-approximate GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Numerically stable binary cross-entropy with logits and its dz = σ(z) − y.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    let sigma = 1.0 / (1.0 + (-z).exp());
    (loss, sigma - y)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn chunked_matmul_matches_plain_dot() {
        let mut rng = crate::seed::rng_from(2);
        let a = Array2::from_shape_fn((300, 17), |_| rand::Rng::gen::<f64>(&mut rng));
        let b = Array2::from_shape_fn((17, 23), |_| rand::Rng::gen::<f64>(&mut rng));
        let fast = matmul(a.view(), b.view());
        let plain = a.dot(&b);
        // Chunks are independent GEMMs over the same rows.
        assert_eq!(fast, plain);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]];
        let gain = Array1::ones(4);
        let bias = Array1::zeros(4);
        let (y, _) = layer_norm(x.view(), gain.view(), bias.view());
        for row in y.rows() {
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shifts variance slightly
        }
    }

    #[test]
    fn gelu_grad_matches_finite_difference()
    {
        let h = 1e-6;
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "at {x}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]];
        softmax_rows(&mut x);
        for row in x.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_matches_naive_formula_in_safe_range() {
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (1.5, 0.0), (0.0, 1.0)] {
            let naive = -(y * sigmoid(z).ln() + (1.0 - y) * (1.0 - sigmoid(z)).ln());
            let (stable, dz) = bce_with_logits(z, y);
            assert!((stable - naive).abs() < 1e-12);
            assert!((dz - (sigmoid(z) - y)).abs() < 1e-12);
        }
        // Extreme logits must not overflow.
        assert!(bce_with_logits(1e4, 0.0).0.is_finite());
        assert!(bce_with_logits(-1e4, 1.0).0.is_finite());
    }
}
