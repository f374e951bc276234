//! Dense row-major `f64` matrices and the forward/backward primitives used by
//! the mask generator network.
//!
//! Every backward function takes the upstream gradient of the op's output and
//! returns gradients for its inputs. Nothing here allocates shared state, so
//! all functions are safe to call from any thread.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("{cols} cols"),
                    format!("{} cols", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Result<Matrix> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape(
                "add_row_broadcast",
                self.shape_str(),
                row.shape_str(),
            ));
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 x cols` row.
    pub fn sum_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Copies columns `start..start + width`.
    pub fn cols_slice(&self, start: usize, width: usize) -> Matrix {
        Matrix::from_fn(self.rows, width, |i, j| self[(i, start + j)])
    }

    /// Writes `block` into columns starting at `start`.
    pub fn set_cols(&mut self, start: usize, block: &Matrix) {
        debug_assert_eq!(block.rows, self.rows);
        for i in 0..self.rows {
            let dst = &mut self.data[i * self.cols + start..i * self.cols + start + block.cols];
            dst.copy_from_slice(block.row(i));
        }
    }

    /// Copies rows `start..start + count`.
    pub fn rows_slice(&self, start: usize, count: usize) -> Matrix {
        Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    fn check_same(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Matrix,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        self.check_same(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape_str(), b.shape_str()));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_nt", a.shape_str(), b.shape_str()));
    }
    let (n, m) = (a.rows, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let a_row = a.row(i);
        for j in 0..m {
            out[i * m + j] = a_row.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape("matmul_tn", a.shape_str(), b.shape_str()));
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(Matrix {
        rows: n,
        cols: m,
        data: out,
    })
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Gradient of the softmax input given its output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    y.check_same(dy, "softmax_rows_backward")?;
    let mut dx = Matrix::zeros(y.rows, y.cols);
    for i in 0..y.rows {
        let yr = y.row(i);
        let dyr = dy.row(i);
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &g) in dx.row_mut(i).iter_mut().zip(yr).zip(dyr) {
            *o = yv * (g - dot);
        }
    }
    Ok(dx)
}

/// Intermediate values kept by [`layer_norm`] for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

/// Per-row normalization followed by the affine `γ·x̂ + β`.
pub fn layer_norm(
    m: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Matrix, LayerNormCache)> {
    if gamma.len() != m.cols || beta.len() != m.cols {
        return Err(Error::shape(
            "layer_norm",
            m.shape_str(),
            format!("gamma {} / beta {}", gamma.len(), beta.len()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::Range(format!(
            "layer_norm eps must be positive, got {eps}"
        )));
    }
    let n = m.cols as f64;
    let mut normalized = Matrix::zeros(m.rows, m.cols);
    let mut out = Matrix::zeros(m.rows, m.cols);
    let mut inv_std = Vec::with_capacity(m.rows);
    for i in 0..m.rows {
        let row = m.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..m.cols {
            let xh = (row[j] - mean) * is;
            normalized[(i, j)] = xh;
            out[(i, j)] = gamma[j] * xh + beta[j];
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    dy: &Matrix,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    cache.normalized.check_same(dy, "layer_norm_backward")?;
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    for i in 0..rows {
        let xh = cache.normalized.row(i);
        let g = dy.row(i);
        let mut sum_dxh = 0.0;
        let mut sum_dxh_xh = 0.0;
        for j in 0..cols {
            dgamma[j] += g[j] * xh[j];
            dbeta[j] += g[j];
            let dxh = g[j] * gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        let is = cache.inv_std[i];
        for j in 0..cols {
            let dxh = g[j] * gamma[j];
            dx[(i, j)] = is * (dxh - sum_dxh / n - xh[j] * sum_dxh_xh / n);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_scalar(x: f64) -> f64 {
    x * phi(x)
}

fn gelu_derivative(x: f64) -> f64 {
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi(x) + x * density
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(m: &Matrix) -> Matrix {
    m.map(gelu_scalar)
}

/// Gradient of GELU at input `x`, given upstream `dy`.
pub fn gelu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix> {
    x.zip_with(dy, "gelu_backward", |xv, g| g * gelu_derivative(xv))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

/// Fully connected layer `y = x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        matmul(x, &self.weight)?.add_row_broadcast(&self.bias)
    }

    /// Accumulates parameter gradients into `grad` and returns `dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Affine) -> Result<Matrix> {
        grad.weight.add_assign(&matmul_tn(x, dy)?)?;
        grad.bias.add_assign(&dy.sum_rows())?;
        matmul_nt(dy, &self.weight)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Maximum relative error between `analytic` gradients and central finite
/// differences of `f` evaluated around `params`.
///
/// The per-entry error is `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check<F>(params: &[Matrix], analytic: &[Matrix], h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> f64,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Range(format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(
            "grad_check",
            format!("{} params", params.len()),
            format!("{} gradients", analytic.len()),
        ));
    }
    for (p, g) in params.iter().zip(analytic) {
        p.check_same(g, "grad_check")?;
    }

    let mut work = params.to_vec();
    let base = f(&work);
    if !base.is_finite() {
        return Err(Error::Numeric("grad_check loss".into()));
    }
    let mut worst: f64 = 0.0;
    for t in 0..work.len() {
        for idx in 0..work[t].len() {
            let orig = work[t].data[idx];
            work[t].data[idx] = orig + h;
            let plus = f(&work);
            work[t].data[idx] = orig - h;
            let minus = f(&work);
            work[t].data[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check loss at tensor {t} entry {idx}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[t].data[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_hand_cases() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        let a = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[&[3.0], &[4.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(5, 7, &mut rng);
        let b = random(7, 3, &mut rng);
        let fast = matmul(&a, &b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        for ((x, y), z) in nt.data().iter().zip(tn.data()).zip(slow.data()) {
            assert!((x - z).abs() < 1e-12 && (y - z).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let m = Matrix::from_rows(&[&[0.0, 0.0], &[1000.0, 1000.0], &[0.0, 3f64.ln()]]).unwrap();
        let s = softmax_rows(&m);
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert_eq!(s.row(1), &[0.5, 0.5]);
        assert!((s[(2, 0)] - 0.25).abs() < 1e-15);
        assert!((s[(2, 1)] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_cases() {
        let eps = 1e-5;
        let (out, _) = layer_norm(&Matrix::filled(1, 4, 3.0), &[1.0; 4], &[0.0; 4], eps).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let m = Matrix::from_rows(&[&[1.0, -1.0]]).unwrap();
        let (out, _) = layer_norm(&m, &[1.0; 2], &[0.0; 2], eps).unwrap();
        let expect = 1.0 / (1.0 + eps).sqrt();
        assert!((out[(0, 0)] - expect).abs() < 1e-15);
        assert!((out[(0, 1)] + expect).abs() < 1e-15);

        let (shifted, _) = layer_norm(&m, &[1.0; 2], &[5.0; 2], eps).unwrap();
        for (a, b) in shifted.data().iter().zip(out.data()) {
            assert_eq!(*a, b + 5.0);
        }

        assert!(layer_norm(&m, &[1.0; 3], &[0.0; 2], eps).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!((sigmoid_scalar(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn grad_check_trivial_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = vec![random(3, 4, &mut rng), random(2, 2, &mut rng)];
        let analytic: Vec<Matrix> = p.iter().map(|m| m.scale(2.0)).collect();
        let err = grad_check(&p, &analytic, 1e-5, |ps| {
            ps.iter().flat_map(|m| m.data()).map(|v| v * v).sum()
        })
        .unwrap();
        assert!(err <= 1e-8, "{err}");

        let zeros: Vec<Matrix> = p
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        let err = grad_check(&p, &zeros, 1e-5, |_| 4.2).unwrap();
        assert_eq!(err, 0.0);

        assert!(matches!(
            grad_check(&p, &zeros, 1e-5, |_| f64::NAN),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            grad_check(&p, &zeros, 1.0, |_| 0.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn primitive_backward_passes_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(3, 5, &mut rng);
        let w = random(5, 4, &mut rng);
        let gamma: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
        // Random projection turns each op output into a scalar loss.
        let proj5 = random(3, 5, &mut rng);
        let proj4 = random(3, 4, &mut rng);
        let dot = |a: &Matrix, b: &Matrix| a.hadamard(b).unwrap().sum();

        // matmul
        let dy = proj4.clone();
        let dx = matmul_nt(&dy, &w).unwrap();
        let dw = matmul_tn(&x, &dy).unwrap();
        let err = grad_check(&[x.clone(), w.clone()], &[dx, dw], 1e-5, |p| {
            dot(&matmul(&p[0], &p[1]).unwrap(), &proj4)
        })
        .unwrap();
        assert!(err < 1e-6, "matmul {err}");

        // softmax
        let y = softmax_rows(&x);
        let dx = softmax_rows_backward(&y, &proj5).unwrap();
        let err = grad_check(std::slice::from_ref(&x), &[dx], 1e-5, |p| {
            dot(&softmax_rows(&p[0]), &proj5)
        })
        .unwrap();
        assert!(err < 1e-6, "softmax {err}");

        // layer norm, including gamma and beta
        let (_, cache) = layer_norm(&x, &gamma, &beta, 1e-5).unwrap();
        let (dx, dg, db) = layer_norm_backward(&cache, &gamma, &proj5).unwrap();
        let params = [
            x.clone(),
            Matrix::row_vector(gamma.clone()),
            Matrix::row_vector(beta.clone()),
        ];
        let grads = [dx, Matrix::row_vector(dg), Matrix::row_vector(db)];
        let err = grad_check(&params, &grads, 1e-5, |p| {
            dot(
                &layer_norm(&p[0], p[1].data(), p[2].data(), 1e-5).unwrap().0,
                &proj5,
            )
        })
        .unwrap();
        assert!(err < 1e-6, "layer_norm {err}");

        // gelu
        let dx = gelu_backward(&x, &proj5).unwrap();
        let err = grad_check(std::slice::from_ref(&x), &[dx], 1e-5, |p| {
            dot(&gelu(&p[0]), &proj5)
        })
        .unwrap();
        assert!(err < 1e-6, "gelu {err}");

        // affine
        let layer = Affine {
            weight: w.clone(),
            bias: random(1, 4, &mut rng),
        };
        let mut grad = Affine::zeros(5, 4);
        let dx = layer.backward(&x, &proj4, &mut grad).unwrap();
        let err = grad_check(
            &[x.clone(), layer.weight.clone(), layer.bias.clone()],
            &[dx, grad.weight, grad.bias],
            1e-5,
            |p| {
                let l = Affine {
                    weight: p[1].clone(),
                    bias: p[2].clone(),
                };
                dot(&l.forward(&p[0]).unwrap(), &proj4)
            },
        )
        .unwrap();
        assert!(err < 1e-6, "affine {err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(rows: usize, cols: usize, mag: f64) -> impl Strategy<Value = Matrix> {
            prop::collection::vec(-mag..mag, rows * cols)
                .prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
        }

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(m in matrix(4, 6, 1e4)) {
                let s = softmax_rows(&m);
                for i in 0..s.rows() {
                    let total: f64 = s.row(i).iter().sum();
                    prop_assert!((total - 1.0).abs() <= 1e-12);
                    prop_assert!(s.row(i).iter().all(|&v| v >= 0.0));
                }
            }

            #[test]
            fn matmul_is_associative(a in matrix(3, 4, 2.0), b in matrix(4, 5, 2.0), c in matrix(5, 2, 2.0)) {
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                let scale = left.max_abs().max(1.0);
                for (x, y) in left.data().iter().zip(right.data()) {
                    prop_assert!((x - y).abs() / scale <= 1e-9);
                }
            }
        }
    }
}
