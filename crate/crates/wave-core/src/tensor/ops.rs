//! Matrix ops and losses with explicit backward companions.
//!
//! Every backward takes the upstream gradient plus whatever the forward
//! cached, and returns gradients in the same shapes as the inputs. Reduction
//! order is fixed (plain loops over row-major data), so results are
//! bit-identical from run to run.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Batch of classifier outputs, one row per sample.
#[derive(Clone, Debug)]
pub struct Logits(pub Matrix);

impl Logits {
    pub fn batch(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    /// Argmax per row.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.0.rows())
            .map(|r| {
                let row = self.0.row(r);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Fraction of rows whose argmax equals the label, as a percentage.
    pub fn top1(&self, labels: &[usize]) -> f64 {
        assert_eq!(labels.len(), self.0.rows(), "top1 label count mismatch");
        let hits = self
            .predictions()
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        100.0 * hits as f64 / labels.len() as f64
    }
}

/// a (m x k) times b (k x n).
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul: left is {}x{}, right is {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for p in 0..k {
            let av = arow[p];
            let brow = b.row(p);
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    Ok(c)
}

/// a times b-transpose, i.e. c[i][j] = <a.row(i), b.row(j)>.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "matmul_nt: left is {}x{}, right-transposed is {}x{}",
            a.rows(),
            a.cols(),
            b.cols(),
            b.rows()
        )));
    }
    let (m, n) = (a.rows(), b.rows());
    let mut c = Matrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = 0.0;
            for p in 0..arow.len() {
                acc += arow[p] * brow[p];
            }
            crow[j] = acc;
        }
    }
    Ok(c)
}

/// a-transpose times b, i.e. c[p][j] = sum_i a[i][p] * b[i][j].
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!(
            "matmul_tn: left-transposed is {}x{}, right is {}x{}",
            a.cols(),
            a.rows(),
            b.rows(),
            b.cols()
        )));
    }
    let (k, n) = (a.cols(), b.cols());
    let mut c = Matrix::zeros(k, n);
    for i in 0..a.rows() {
        let arow = a.row(i);
        let brow = b.row(i);
        for p in 0..k {
            let av = arow[p];
            let crow = c.row_mut(p);
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    Ok(c)
}

/// Gradients of c = a*b given upstream dC: (dA, dB) = (dC b^T, a^T dC).
pub fn matmul_backward(upstream: &Matrix, a: &Matrix, b: &Matrix) -> Result<(Matrix, Matrix)> {
    if upstream.shape() != (a.rows(), b.cols()) {
        return Err(Error::Shape(format!(
            "matmul_backward: upstream is {}x{}, product is {}x{}",
            upstream.rows(),
            upstream.cols(),
            a.rows(),
            b.cols()
        )));
    }
    let da = matmul_nt(upstream, b)?;
    let db = matmul_tn(a, upstream)?;
    Ok((da, db))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mut max = f64::NEG_INFINITY;
        for v in row.iter() {
            if *v > max {
                max = *v;
            }
        }
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Backward of row-wise softmax. `probs` is the forward output.
/// dx[i][j] = p[i][j] * (up[i][j] - sum_k up[i][k] p[i][k]).
pub fn softmax_rows_backward(upstream: &Matrix, probs: &Matrix) -> Matrix {
    assert_eq!(upstream.shape(), probs.shape(), "softmax backward shape mismatch");
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let u = upstream.row(r);
        let mut dot = 0.0;
        for j in 0..p.len() {
            dot += u[j] * p[j];
        }
        let o = out.row_mut(r);
        for j in 0..p.len() {
            o[j] = p[j] * (u[j] - dot);
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-row statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    /// Normalized activations before the affine map.
    pub x_hat: Matrix,
    /// 1 / sqrt(var + eps) per row.
    pub inv_std: Vec<f64>,
}

/// Row-wise layer norm with affine parameters gamma, beta (both 1 x cols).
/// Variance is the population variance; eps sits inside the sqrt.
pub fn layer_norm(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> Result<Matrix> {
    Ok(layer_norm_cached(x, gamma, beta)?.0)
}

pub fn layer_norm_cached(
    x: &Matrix,
    gamma: &Matrix,
    beta: &Matrix,
) -> Result<(Matrix, LayerNormCache)> {
    let d = x.cols();
    if gamma.shape() != (1, d) || beta.shape() != (1, d) {
        return Err(Error::Shape(format!(
            "layer_norm: x has {d} columns, gamma is {}x{}, beta is {}x{}",
            gamma.rows(),
            gamma.cols(),
            beta.rows(),
            beta.cols()
        )));
    }
    let mut out = Matrix::zeros(x.rows(), d);
    let mut x_hat = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    let g = gamma.row(0);
    let b = beta.row(0);
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(istd);
        let xh = x_hat.row_mut(r);
        let o = out.row_mut(r);
        for j in 0..d {
            xh[j] = (row[j] - mean) * istd;
            o[j] = g[j] * xh[j] + b[j];
        }
    }
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

/// Backward of layer_norm. Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward(
    upstream: &Matrix,
    cache: &LayerNormCache,
    gamma: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let (rows, d) = cache.x_hat.shape();
    assert_eq!(upstream.shape(), (rows, d), "layer_norm backward shape mismatch");
    let mut dx = Matrix::zeros(rows, d);
    let mut dgamma = Matrix::zeros(1, d);
    let mut dbeta = Matrix::zeros(1, d);
    let g = gamma.row(0);
    for r in 0..rows {
        let u = upstream.row(r);
        let xh = cache.x_hat.row(r);
        let istd = cache.inv_std[r];
        // dxh[j] = u[j]*g[j]; dx = (dxh - mean(dxh) - xh*mean(dxh*xh)) * istd
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            let dxh = u[j] * g[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        let dxr = dx.row_mut(r);
        for j in 0..d {
            let dxh = u[j] * g[j];
            dxr[j] = (dxh - mean_dxh - xh[j] * mean_dxh_xh) * istd;
        }
        let dg = dgamma.row_mut(0);
        let db = dbeta.row_mut(0);
        for j in 0..d {
            dg[j] += u[j] * xh[j];
            db[j] += u[j];
        }
    }
    (dx, dgamma, dbeta)
}

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
pub fn gelu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for v in out.as_mut_slice() {
        *v = gelu_scalar(*v);
    }
    out
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Backward of GELU given the forward input.
/// d/dx [x Phi(x)] = Phi(x) + x phi(x).
pub fn gelu_backward(upstream: &Matrix, x: &Matrix) -> Matrix {
    assert_eq!(upstream.shape(), x.shape(), "gelu backward shape mismatch");
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let u = upstream.as_slice();
    let xs = x.as_slice();
    let o = out.as_mut_slice();
    for i in 0..xs.len() {
        o[i] = u[i] * gelu_grad_scalar(xs[i]);
    }
    out
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    for (i, y) in labels.iter().enumerate() {
        if *y >= logits.cols() {
            return Err(Error::Input(format!(
                "label {y} at index {i} out of range for {} classes",
                logits.cols()
            )));
        }
    }
    Ok(())
}

/// Per-row log softmax, numerically stable via log-sum-exp.
fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for v in row {
        if *v > max {
            max = *v;
        }
    }
    let mut sum = 0.0;
    for v in row {
        sum += (*v - max).exp();
    }
    let lse = max + sum.ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = *v - lse;
    }
}

/// Mean cross-entropy of integer labels under softmax(logits).
pub fn cross_entropy(logits: &Logits, labels: &[usize]) -> Result<f64> {
    check_labels(&logits.0, labels)?;
    let z = &logits.0;
    let mut buf = vec![0.0; z.cols()];
    let mut total = 0.0;
    for (r, y) in labels.iter().enumerate() {
        log_softmax_row(z.row(r), &mut buf);
        total -= buf[*y];
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of mean cross-entropy w.r.t. the logits:
/// (softmax - onehot) / batch.
pub fn cross_entropy_backward(logits: &Logits, labels: &[usize]) -> Result<Matrix> {
    check_labels(&logits.0, labels)?;
    let mut grad = softmax_rows(&logits.0);
    let inv_b = 1.0 / labels.len() as f64;
    for (r, y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        row[*y] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_b;
        }
    }
    Ok(grad)
}

fn check_kl_inputs(zt: &Matrix, zs: &Matrix, tau: f64) -> Result<()> {
    if zt.shape() != zs.shape() {
        return Err(Error::Shape(format!(
            "kl_soft: teacher logits are {}x{}, student logits are {}x{}",
            zt.rows(),
            zt.cols(),
            zs.rows(),
            zs.cols()
        )));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Input(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Mean over rows of KL(softmax(zt/tau) || softmax(zs/tau)).
pub fn kl_soft(z_teacher: &Logits, z_student: &Logits, tau: f64) -> Result<f64> {
    let (zt, zs) = (&z_teacher.0, &z_student.0);
    check_kl_inputs(zt, zs, tau)?;
    let c = zt.cols();
    let mut log_pt = vec![0.0; c];
    let mut log_ps = vec![0.0; c];
    let mut rt = vec![0.0; c];
    let mut rs = vec![0.0; c];
    let mut total = 0.0;
    for r in 0..zt.rows() {
        for j in 0..c {
            rt[j] = zt.row(r)[j] / tau;
            rs[j] = zs.row(r)[j] / tau;
        }
        log_softmax_row(&rt, &mut log_pt);
        log_softmax_row(&rs, &mut log_ps);
        for j in 0..c {
            total += log_pt[j].exp() * (log_pt[j] - log_ps[j]);
        }
    }
    Ok(total / zt.rows() as f64)
}

/// Gradient of kl_soft w.r.t. the student logits only:
/// (softmax(zs/tau) - softmax(zt/tau)) / (tau * batch).
pub fn kl_soft_backward(z_teacher: &Logits, z_student: &Logits, tau: f64) -> Result<Matrix> {
    let (zt, zs) = (&z_teacher.0, &z_student.0);
    check_kl_inputs(zt, zs, tau)?;
    let mut scaled_t = zt.clone();
    scaled_t.scale(1.0 / tau);
    let mut scaled_s = zs.clone();
    scaled_s.scale(1.0 / tau);
    let pt = softmax_rows(&scaled_t);
    let mut grad = softmax_rows(&scaled_s);
    let coef = 1.0 / (tau * zt.rows() as f64);
    for (g, p) in grad.as_mut_slice().iter_mut().zip(pt.as_slice()) {
        *g = (*g - p) * coef;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, vals.to_vec()).unwrap()
    }

    const TOL: f64 = 1e-15;

    #[test]
    fn matmul_small_exact() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(2, 1, &[5.0, 6.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.as_slice(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_operands() {
        let a = mat(2, 3, &[0.0; 6]);
        let b = mat(4, 1, &[0.0; 4]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x1"), "{msg}");
    }

    #[test]
    fn matmul_transposed_variants_agree() {
        let a = mat(2, 3, &[1.0, -2.0, 0.5, 3.0, 1.5, -1.0]);
        let b = mat(3, 2, &[2.0, 0.0, -1.0, 4.0, 0.5, 1.0]);
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        let plain = matmul(&a, &b).unwrap();
        assert!(plain.max_abs_diff(&nt) < TOL);
        assert!(plain.max_abs_diff(&tn) < TOL);
    }

    #[test]
    fn softmax_rows_reference_values() {
        // softmax([1,2,3]) computed with 50-digit arithmetic.
        let x = mat(1, 3, &[1.0, 2.0, 3.0]);
        let p = softmax_rows(&x);
        let want = [
            0.090030573170380457998,
            0.24472847105479765247,
            0.66524095577482188953,
        ];
        for (a, b) in p.as_slice().iter().zip(&want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let sum: f64 = p.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant_and_overflow_safe() {
        let x = mat(1, 3, &[1000.0, 1001.0, 1002.0]);
        let p = softmax_rows(&x);
        let q = softmax_rows(&mat(1, 3, &[0.0, 1.0, 2.0]));
        assert!(p.max_abs_diff(&q) < 1e-15);
        assert!(p.is_finite());
    }

    #[test]
    fn gelu_reference_values() {
        // gelu(1) with exact erf; gelu(10) ~ 10; gelu(-0.5) from 50-digit arithmetic.
        assert!((gelu_scalar(1.0) - 0.84134474606854294859).abs() < 1e-15);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-12);
        assert!((gelu_scalar(-0.5) - (-0.15426876936299344818)).abs() < 1e-15);
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_grad_scalar(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_reference_values() {
        // Frozen from 50-digit arithmetic: x=[0.2,-1.1,0.7,0.4],
        // gamma=[1.2,0.8,-0.5,1.0], beta=[0.1,0,-0.2,0.3], eps=1e-6.
        let x = mat(1, 4, &[0.2, -1.1, 0.7, 0.4]);
        let gamma = mat(1, 4, &[1.2, 0.8, -0.5, 1.0]);
        let beta = mat(1, 4, &[0.1, 0.0, -0.2, 0.3]);
        let out = layer_norm(&x, &gamma, &beta).unwrap();
        let want = [
            0.36186119118154786196,
            -1.3384016438168001834,
            -0.67280492852223919521,
            0.80917453840856528715,
        ];
        for (a, b) in out.as_slice().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn layer_norm_unit_gamma_zero_beta_normalizes() {
        let x = mat(2, 4, &[3.0, 5.0, 7.0, 9.0, -1.0, 0.0, 1.0, 2.0]);
        let gamma = Matrix::filled(1, 4, 1.0);
        let beta = Matrix::zeros(1, 4);
        let out = layer_norm(&x, &gamma, &beta).unwrap();
        for r in 0..2 {
            let row = out.row(r);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "eps shifts variance slightly: {var}");
        }
    }

    #[test]
    fn cross_entropy_reference_value() {
        // Frozen from 50-digit arithmetic.
        let z = Logits(mat(2, 3, &[0.5, -0.2, 0.3, 2.0, 1.0, -1.0]));
        let loss = cross_entropy(&z, &[2, 0]).unwrap();
        assert!((loss - 0.69427921031656571435).abs() < 1e-15, "{loss}");
    }

    #[test]
    fn cross_entropy_uniform_is_log_c() {
        let z = Logits(Matrix::zeros(4, 7));
        let loss = cross_entropy(&z, &[0, 3, 5, 6]).unwrap();
        assert!((loss - (7.0f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let z = Logits(Matrix::zeros(2, 3));
        assert!(matches!(cross_entropy(&z, &[0, 3]), Err(Error::Input(_))));
        assert!(matches!(cross_entropy(&z, &[0]), Err(Error::Shape(_))));
    }

    #[test]
    fn kl_soft_reference_value() {
        // KL(softmax([2,0]) || softmax([0,2])) frozen from 50-digit arithmetic.
        let zt = Logits(mat(1, 2, &[2.0, 0.0]));
        let zs = Logits(mat(1, 2, &[0.0, 2.0]));
        let kl = kl_soft(&zt, &zs, 1.0).unwrap();
        assert!((kl - 1.5231883119115297762).abs() < 1e-15, "{kl}");
    }

    #[test]
    fn kl_soft_identical_logits_is_zero() {
        let z = Logits(mat(2, 3, &[0.3, -1.0, 2.0, 0.0, 0.5, -0.5]));
        let kl = kl_soft(&z, &z, 2.0).unwrap();
        assert_eq!(kl, 0.0);
        let g = kl_soft_backward(&z, &z, 2.0).unwrap();
        assert!(g.max_abs_diff(&Matrix::zeros(2, 3)) < TOL);
    }

    #[test]
    fn kl_soft_rejects_bad_temperature() {
        let z = Logits(Matrix::zeros(1, 2));
        assert!(matches!(kl_soft(&z, &z, 0.0), Err(Error::Input(_))));
        assert!(matches!(kl_soft(&z, &z, -1.0), Err(Error::Input(_))));
    }

    // Finite-difference checks for every backward, using a fixed random
    // projection so the scalar loss exercises all coordinates.

    fn fd_check(
        mut f: impl FnMut(&[f64]) -> f64,
        x0: &[f64],
        analytic: &[f64],
        tol: f64,
    ) {
        let mut x = x0.to_vec();
        for i in 0..x.len() {
            let h = 1e-5 * (1.0 + x0[i].abs());
            x[i] = x0[i] + h;
            let fp = f(&x);
            x[i] = x0[i] - h;
            let fm = f(&x);
            x[i] = x0[i];
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            let rel = (fd - analytic[i]).abs() / denom;
            assert!(rel < tol, "coord {i}: fd {fd} vs analytic {}", analytic[i]);
        }
    }

    fn proj_for(rows: usize, cols: usize, seed: u64) -> Matrix {
        // Deterministic pseudo-random values in [-1, 1].
        let mut v = Vec::with_capacity(rows * cols);
        let mut s = seed ^ 0x9e3779b97f4a7c15u64;
        for _ in 0..rows * cols {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            v.push(((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0);
        }
        Matrix::from_vec(rows, cols, v).unwrap()
    }

    #[test]
    fn matmul_backward_matches_fd() {
        let a0 = proj_for(3, 4, 1);
        let b0 = proj_for(4, 2, 2);
        let r = proj_for(3, 2, 3);
        let (da, db) = matmul_backward(&r, &a0, &b0).unwrap();
        fd_check(
            |av| {
                let a = Matrix::from_vec(3, 4, av.to_vec()).unwrap();
                matmul(&a, &b0).unwrap().frob_dot(&r)
            },
            a0.as_slice(),
            da.as_slice(),
            1e-6,
        );
        fd_check(
            |bv| {
                let b = Matrix::from_vec(4, 2, bv.to_vec()).unwrap();
                matmul(&a0, &b).unwrap().frob_dot(&r)
            },
            b0.as_slice(),
            db.as_slice(),
            1e-6,
        );
    }

    #[test]
    fn softmax_backward_matches_fd() {
        let x0 = proj_for(2, 5, 4);
        let r = proj_for(2, 5, 5);
        let probs = softmax_rows(&x0);
        let dx = softmax_rows_backward(&r, &probs);
        fd_check(
            |xv| {
                let x = Matrix::from_vec(2, 5, xv.to_vec()).unwrap();
                softmax_rows(&x).frob_dot(&r)
            },
            x0.as_slice(),
            dx.as_slice(),
            1e-5,
        );
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let x0 = proj_for(3, 6, 6);
        let gamma0 = proj_for(1, 6, 7);
        let beta0 = proj_for(1, 6, 8);
        let r = proj_for(3, 6, 9);
        let (_, cache) = layer_norm_cached(&x0, &gamma0, &beta0).unwrap();
        let (dx, dgamma, dbeta) = layer_norm_backward(&r, &cache, &gamma0);
        fd_check(
            |xv| {
                let x = Matrix::from_vec(3, 6, xv.to_vec()).unwrap();
                layer_norm(&x, &gamma0, &beta0).unwrap().frob_dot(&r)
            },
            x0.as_slice(),
            dx.as_slice(),
            1e-4,
        );
        fd_check(
            |gv| {
                let g = Matrix::from_vec(1, 6, gv.to_vec()).unwrap();
                layer_norm(&x0, &g, &beta0).unwrap().frob_dot(&r)
            },
            gamma0.as_slice(),
            dgamma.as_slice(),
            1e-6,
        );
        fd_check(
            |bv| {
                let b = Matrix::from_vec(1, 6, bv.to_vec()).unwrap();
                layer_norm(&x0, &gamma0, &b).unwrap().frob_dot(&r)
            },
            beta0.as_slice(),
            dbeta.as_slice(),
            1e-6,
        );
    }

    #[test]
    fn gelu_backward_matches_fd() {
        let x0 = proj_for(2, 8, 10);
        let r = proj_for(2, 8, 11);
        let dx = gelu_backward(&r, &x0);
        fd_check(
            |xv| {
                let x = Matrix::from_vec(2, 8, xv.to_vec()).unwrap();
                gelu(&x).frob_dot(&r)
            },
            x0.as_slice(),
            dx.as_slice(),
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_backward_matches_fd() {
        let z0 = proj_for(3, 4, 12);
        let labels = [1usize, 0, 3];
        let grad = cross_entropy_backward(&Logits(z0.clone()), &labels).unwrap();
        fd_check(
            |zv| {
                let z = Logits(Matrix::from_vec(3, 4, zv.to_vec()).unwrap());
                cross_entropy(&z, &labels).unwrap()
            },
            z0.as_slice(),
            grad.as_slice(),
            1e-6,
        );
    }

    #[test]
    fn kl_soft_backward_matches_fd() {
        let zt = proj_for(3, 4, 13);
        let zs0 = proj_for(3, 4, 14);
        for tau in [1.0, 2.0, 4.0] {
            let grad = kl_soft_backward(&Logits(zt.clone()), &Logits(zs0.clone()), tau).unwrap();
            fd_check(
                |zv| {
                    let zs = Logits(Matrix::from_vec(3, 4, zv.to_vec()).unwrap());
                    kl_soft(&Logits(zt.clone()), &zs, tau).unwrap()
                },
                zs0.as_slice(),
                grad.as_slice(),
                1e-5,
            );
        }
    }

    #[test]
    fn top1_counts_argmax_hits() {
        let z = Logits(mat(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]));
        assert_eq!(z.top1(&[0, 1, 2]), 100.0);
        assert!((z.top1(&[0, 1, 0]) - 200.0 / 3.0).abs() < 1e-12);
    }
}
