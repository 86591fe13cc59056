//! Kronecker-product weight factorization.
//!
//! A weight W (R x C) is represented as sum_i T_i (x) S_i where each template
//! T_i is t1 x t2 and each scaler S_i is (R/t1) x (C/t2). The helpers here
//! compose weights from factors and push gradients back onto the factors
//! without materializing any Kronecker intermediate.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Shared factor, one of the bank entries. t1 x t2.
#[derive(Clone, Debug, PartialEq)]
pub struct Template(pub Matrix);

/// Per-weight factor paired with a template. s1 x s2.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler(pub Matrix);

impl Template {
    pub fn t1(&self) -> usize {
        self.0.rows()
    }
    pub fn t2(&self) -> usize {
        self.0.cols()
    }
}

impl Scaler {
    pub fn s1(&self) -> usize {
        self.0.rows()
    }
    pub fn s2(&self) -> usize {
        self.0.cols()
    }
}

/// Plain Kronecker product a (x) b, ((ra*rb) x (ca*cb)).
/// Block (j,k) of the result is a[j][k] * b.
pub fn kron_product(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = Matrix::zeros(ra * rb, ca * cb);
    for j in 0..ra {
        for k in 0..ca {
            let v = a.get(j, k);
            for p in 0..rb {
                let brow = b.row(p);
                let orow = out.row_mut(j * rb + p);
                for q in 0..cb {
                    orow[k * cb + q] = v * brow[q];
                }
            }
        }
    }
    out
}

fn check_pairs(templates: &[Template], scalers: &[Scaler]) -> Result<(usize, usize, usize, usize)> {
    if templates.is_empty() {
        return Err(Error::Input("compose_weight requires at least one template".into()));
    }
    if templates.len() != scalers.len() {
        return Err(Error::Shape(format!(
            "{} templates paired with {} scalers",
            templates.len(),
            scalers.len()
        )));
    }
    let (t1, t2) = templates[0].0.shape();
    let (s1, s2) = scalers[0].0.shape();
    for (i, t) in templates.iter().enumerate() {
        if t.0.shape() != (t1, t2) {
            return Err(Error::Shape(format!(
                "template {i} is {}x{}, expected {t1}x{t2}",
                t.t1(),
                t.t2()
            )));
        }
    }
    for (i, s) in scalers.iter().enumerate() {
        if s.0.shape() != (s1, s2) {
            return Err(Error::Shape(format!(
                "scaler {i} is {}x{}, expected {s1}x{s2}",
                s.s1(),
                s.s2()
            )));
        }
    }
    Ok((t1, t2, s1, s2))
}

/// W = sum_i T_i (x) S_i, computed block-wise: block (j,k) of W is
/// sum_i T_i[j][k] * S_i. No Kronecker intermediate is allocated.
pub fn compose_weight(templates: &[Template], scalers: &[Scaler]) -> Result<Matrix> {
    let (t1, t2, s1, s2) = check_pairs(templates, scalers)?;
    let mut w = Matrix::zeros(t1 * s1, t2 * s2);
    for j in 0..t1 {
        for k in 0..t2 {
            for p in 0..s1 {
                let orow = w.row_mut(j * s1 + p);
                for (t, s) in templates.iter().zip(scalers) {
                    let coef = t.0.get(j, k);
                    let srow = s.0.row(p);
                    for q in 0..s2 {
                        orow[k * s2 + q] += coef * srow[q];
                    }
                }
            }
        }
    }
    Ok(w)
}

fn check_grid(
    upstream: &Matrix,
    t1: usize,
    t2: usize,
    what: &str,
) -> Result<(usize, usize)> {
    let (rows, cols) = upstream.shape();
    if rows % t1 != 0 {
        return Err(Error::Shape(format!(
            "{what}: upstream rows {rows} not divisible by template rows {t1}"
        )));
    }
    if cols % t2 != 0 {
        return Err(Error::Shape(format!(
            "{what}: upstream cols {cols} not divisible by template cols {t2}"
        )));
    }
    Ok((rows / t1, cols / t2))
}

/// Gradient of <G, W> w.r.t. each scaler, where W = sum T_i (x) S_i:
/// dS_i = sum_{j,k} T_i[j][k] * G_{jk} with G partitioned into a t1 x t2
/// grid of s1 x s2 blocks.
pub fn grad_scalers(upstream: &Matrix, templates: &[Template]) -> Result<Vec<Matrix>> {
    if templates.is_empty() {
        return Err(Error::Input("grad_scalers requires at least one template".into()));
    }
    let (t1, t2) = templates[0].0.shape();
    for (i, t) in templates.iter().enumerate() {
        if t.0.shape() != (t1, t2) {
            return Err(Error::Shape(format!(
                "template {i} is {}x{}, expected {t1}x{t2}",
                t.t1(),
                t.t2()
            )));
        }
    }
    let (s1, s2) = check_grid(upstream, t1, t2, "grad_scalers")?;
    let mut grads = vec![Matrix::zeros(s1, s2); templates.len()];
    for j in 0..t1 {
        for k in 0..t2 {
            for p in 0..s1 {
                let urow = upstream.row(j * s1 + p);
                for (t, g) in templates.iter().zip(grads.iter_mut()) {
                    let coef = t.0.get(j, k);
                    if coef == 0.0 {
                        continue;
                    }
                    let grow = g.row_mut(p);
                    for q in 0..s2 {
                        grow[q] += coef * urow[k * s2 + q];
                    }
                }
            }
        }
    }
    Ok(grads)
}

/// Gradient of <G, W> w.r.t. each template:
/// dT_i[j][k] = <S_i, G_{jk}> (Frobenius inner product with block (j,k)).
pub fn grad_templates(upstream: &Matrix, scalers: &[Scaler]) -> Result<Vec<Matrix>> {
    if scalers.is_empty() {
        return Err(Error::Input("grad_templates requires at least one scaler".into()));
    }
    let (s1, s2) = scalers[0].0.shape();
    for (i, s) in scalers.iter().enumerate() {
        if s.0.shape() != (s1, s2) {
            return Err(Error::Shape(format!(
                "scaler {i} is {}x{}, expected {s1}x{s2}",
                s.s1(),
                s.s2()
            )));
        }
    }
    let (rows, cols) = upstream.shape();
    if rows % s1 != 0 {
        return Err(Error::Shape(format!(
            "grad_templates: upstream rows {rows} not divisible by scaler rows {s1}"
        )));
    }
    if cols % s2 != 0 {
        return Err(Error::Shape(format!(
            "grad_templates: upstream cols {cols} not divisible by scaler cols {s2}"
        )));
    }
    let (t1, t2) = (rows / s1, cols / s2);
    let mut grads = vec![Matrix::zeros(t1, t2); scalers.len()];
    for j in 0..t1 {
        for k in 0..t2 {
            for (s, g) in scalers.iter().zip(grads.iter_mut()) {
                let mut acc = 0.0;
                for p in 0..s1 {
                    let urow = upstream.row(j * s1 + p);
                    let srow = s.0.row(p);
                    for q in 0..s2 {
                        acc += srow[q] * urow[k * s2 + q];
                    }
                }
                g.set(j, k, acc);
            }
        }
    }
    Ok(grads)
}

/// A matrix cut into an even grid of equally sized blocks.
#[derive(Clone, Debug)]
pub struct BlockGrid {
    grid_rows: usize,
    grid_cols: usize,
    block_rows: usize,
    block_cols: usize,
    blocks: Vec<Matrix>,
}

impl BlockGrid {
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn block_shape(&self) -> (usize, usize) {
        (self.block_rows, self.block_cols)
    }

    pub fn block(&self, j: usize, k: usize) -> &Matrix {
        assert!(j < self.grid_rows && k < self.grid_cols, "block index out of range");
        &self.blocks[j * self.grid_cols + k]
    }

    /// Inverse of block_partition.
    pub fn reassemble(&self) -> Matrix {
        let mut out = Matrix::zeros(
            self.grid_rows * self.block_rows,
            self.grid_cols * self.block_cols,
        );
        for j in 0..self.grid_rows {
            for k in 0..self.grid_cols {
                let b = self.block(j, k);
                for p in 0..self.block_rows {
                    let brow = b.row(p);
                    let orow = out.row_mut(j * self.block_rows + p);
                    orow[k * self.block_cols..(k + 1) * self.block_cols].copy_from_slice(brow);
                }
            }
        }
        out
    }
}

/// Cuts w into a (rows/t1) x (cols/t2) grid of t1 x t2 blocks.
pub fn block_partition(w: &Matrix, t1: usize, t2: usize) -> Result<BlockGrid> {
    if t1 == 0 || t2 == 0 {
        return Err(Error::Input("block size must be nonzero".into()));
    }
    let (rows, cols) = w.shape();
    if rows % t1 != 0 || cols % t2 != 0 {
        return Err(Error::Shape(format!(
            "block_partition: {rows}x{cols} matrix does not tile with {t1}x{t2} blocks"
        )));
    }
    let (grid_rows, grid_cols) = (rows / t1, cols / t2);
    let mut blocks = Vec::with_capacity(grid_rows * grid_cols);
    for j in 0..grid_rows {
        for k in 0..grid_cols {
            let mut b = Matrix::zeros(t1, t2);
            for p in 0..t1 {
                let wrow = w.row(j * t1 + p);
                b.row_mut(p).copy_from_slice(&wrow[k * t2..(k + 1) * t2]);
            }
            blocks.push(b);
        }
    }
    Ok(BlockGrid { grid_rows, grid_cols, block_rows: t1, block_cols: t2, blocks })
}

/// Reference composition that does materialize every Kronecker product.
/// Kept for tests; quadratic in memory, never used by the pipeline.
pub fn compose_weight_bruteforce(templates: &[Template], scalers: &[Scaler]) -> Result<Matrix> {
    let (t1, t2, s1, s2) = check_pairs(templates, scalers)?;
    let mut w = Matrix::zeros(t1 * s1, t2 * s2);
    for (t, s) in templates.iter().zip(scalers) {
        w.add_assign(&kron_product(&t.0, &s.0));
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> Matrix {
        Matrix::from_vec(rows, cols, vals.to_vec()).unwrap()
    }

    #[test]
    fn kron_small_exact() {
        // [[1,2]] (x) [[3],[4]] = [[3,6],[4,8]]
        let a = mat(1, 2, &[1.0, 2.0]);
        let b = mat(2, 1, &[3.0, 4.0]);
        let k = kron_product(&a, &b);
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k.as_slice(), &[3.0, 6.0, 4.0, 8.0]);
    }

    #[test]
    fn kron_identity_blocks() {
        let a = Matrix::identity(2);
        let b = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron_product(&a, &b);
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 1), 4.0);
        assert_eq!(k.get(2, 2), 1.0);
        assert_eq!(k.get(0, 2), 0.0);
    }

    fn rand_mat(rows: usize, cols: usize, seed: u64) -> Matrix {
        crate::rng::normal(&mut crate::rng::seeded(seed), rows, cols, 1.0)
    }

    #[test]
    fn compose_matches_bruteforce() {
        for (l, t, s1, s2, seed) in [(1, 2, 3, 2, 1u64), (3, 4, 2, 5, 2), (2, 3, 1, 1, 3)] {
            let templates: Vec<Template> =
                (0..l).map(|i| Template(rand_mat(t, t, seed * 100 + i))).collect();
            let scalers: Vec<Scaler> =
                (0..l).map(|i| Scaler(rand_mat(s1, s2, seed * 100 + 50 + i))).collect();
            let fast = compose_weight(&templates, &scalers).unwrap();
            let slow = compose_weight_bruteforce(&templates, &scalers).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn compose_rejects_mismatched_factors() {
        let t = vec![Template(rand_mat(2, 2, 1)), Template(rand_mat(3, 2, 2))];
        let s = vec![Scaler(rand_mat(2, 2, 3)), Scaler(rand_mat(2, 2, 4))];
        assert!(matches!(compose_weight(&t, &s), Err(Error::Shape(_))));
        let t2 = vec![Template(rand_mat(2, 2, 1))];
        assert!(matches!(compose_weight(&t2, &s), Err(Error::Shape(_))));
        assert!(matches!(compose_weight(&[], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn partition_reassemble_roundtrip() {
        let w = rand_mat(6, 8, 11);
        let grid = block_partition(&w, 2, 4).unwrap();
        assert_eq!(grid.grid_shape(), (3, 2));
        assert_eq!(grid.reassemble(), w);
        assert!(matches!(block_partition(&w, 4, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn partition_of_kron_gives_scaled_copies() {
        let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = rand_mat(3, 3, 5);
        let k = kron_product(&a, &b);
        // Blocks of a (x) b at grid (j,k) equal a[j][k] * b.
        let grid = block_partition(&k, 3, 3).unwrap();
        for j in 0..2 {
            for kk in 0..2 {
                let mut want = b.clone();
                want.scale(a.get(j, kk));
                assert!(grid.block(j, kk).max_abs_diff(&want) < 1e-12);
            }
        }
    }

    #[test]
    fn factor_grads_match_finite_differences() {
        let l = 3usize;
        let (t, s1, s2) = (2, 3, 2);
        let templates: Vec<Template> =
            (0..l).map(|i| Template(rand_mat(t, t, 20 + i as u64))).collect();
        let scalers: Vec<Scaler> =
            (0..l).map(|i| Scaler(rand_mat(s1, s2, 30 + i as u64))).collect();
        let r = rand_mat(t * s1, t * s2, 99);
        // Loss = <R, compose(T, S)>; exact gradient vs central differences.
        let ds = grad_scalers(&r, &templates).unwrap();
        let dt = grad_templates(&r, &scalers).unwrap();
        let h = 1e-5;
        for i in 0..l {
            for idx in 0..s1 * s2 {
                let mut plus = scalers.to_vec();
                let mut minus = scalers.to_vec();
                plus[i].0.as_mut_slice()[idx] += h;
                minus[i].0.as_mut_slice()[idx] -= h;
                let fp = compose_weight(&templates, &plus).unwrap().frob_dot(&r);
                let fm = compose_weight(&templates, &minus).unwrap().frob_dot(&r);
                let fd = (fp - fm) / (2.0 * h);
                let got = ds[i].as_slice()[idx];
                assert!((fd - got).abs() / fd.abs().max(1.0) < 1e-6, "{fd} vs {got}");
            }
            for idx in 0..t * t {
                let mut plus = templates.to_vec();
                let mut minus = templates.to_vec();
                plus[i].0.as_mut_slice()[idx] += h;
                minus[i].0.as_mut_slice()[idx] -= h;
                let fp = compose_weight(&plus, &scalers).unwrap().frob_dot(&r);
                let fm = compose_weight(&minus, &scalers).unwrap().frob_dot(&r);
                let fd = (fp - fm) / (2.0 * h);
                let got = dt[i].as_slice()[idx];
                assert!((fd - got).abs() / fd.abs().max(1.0) < 1e-6, "{fd} vs {got}");
            }
        }
    }

    #[test]
    fn grad_shapes_reject_uneven_grids() {
        let templates = vec![Template(rand_mat(2, 2, 1))];
        let up = rand_mat(5, 4, 2);
        assert!(matches!(grad_scalers(&up, &templates), Err(Error::Shape(_))));
        let scalers = vec![Scaler(rand_mat(3, 3, 3))];
        assert!(matches!(grad_templates(&up, &scalers), Err(Error::Shape(_))));
    }
}
