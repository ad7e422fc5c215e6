//! Dense tensors and matrices.
//!
//! Every array in the crate is stored contiguously with the first index
//! varying fastest. A matrix is therefore column-major, and a vector of
//! length `n1 * n2 * ... * nd` reshapes to an `n1 x ... x nd` tensor without
//! moving any data: entry `(i1, ..., id)` sits at `i1 + n1 * (i2 + n2 * (...))`.
//!
//! Axes (modes) are 0-based throughout.

use std::ops::{Index, IndexMut};

use crate::error::{invalid, shape_err, Error, Result};

fn checked_size(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return invalid("tensor order must be at least 1");
    }
    if shape.iter().any(|&e| e == 0) {
        return invalid(format!("tensor extents must be positive, got {shape:?}"));
    }
    Ok(shape.iter().product())
}

/// A d-way array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = checked_size(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![0.0; len] })
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_size(&shape)?;
        if len != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {len} entries but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_size(shape)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            advance(&mut idx, shape);
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (&i, &n) in idx.iter().zip(&self.shape).rev() {
            debug_assert!(i < n);
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    /// Reinterprets the data with a new shape. No entries move.
    pub fn reshape(self, new_shape: &[usize]) -> Result<Self> {
        let len = checked_size(new_shape)?;
        if len != self.data.len() {
            return shape_err(format!(
                "cannot reshape {:?} ({} entries) to {new_shape:?}",
                self.shape,
                self.data.len()
            ));
        }
        Ok(Self { shape: new_shape.to_vec(), data: self.data })
    }

    /// Axis permutation: axis `k` of the result is axis `perm[k]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let d = self.order();
        if perm.len() != d {
            return shape_err(format!("permutation of length {} for order {d}", perm.len()));
        }
        let mut seen = vec![false; d];
        for &p in perm {
            if p >= d || seen[p] {
                return invalid(format!("{perm:?} is not a permutation of 0..{d}"));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let strides = strides(&self.shape);
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let new_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; d];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            // odometer over the new shape, tracking the source offset
            for k in 0..d {
                idx[k] += 1;
                src += new_strides[k];
                if idx[k] < new_shape[k] {
                    break;
                }
                src -= new_strides[k] * new_shape[k];
                idx[k] = 0;
            }
        }
        Ok(Self { shape: new_shape, data })
    }

    /// Mode-`mode` unfolding: an `n_mode x (product of the other extents)`
    /// matrix whose columns run over the remaining indices in order.
    pub fn unfold(&self, mode: usize) -> Result<DenseMatrix> {
        if mode >= self.order() {
            return invalid(format!("mode {mode} out of range for order {}", self.order()));
        }
        let mut perm = vec![mode];
        perm.extend((0..self.order()).filter(|&k| k != mode));
        let p = self.permute(&perm)?;
        let rows = self.shape[mode];
        let cols = self.len() / rows;
        DenseMatrix::from_col_major(rows, cols, p.data)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &DenseMatrix, mode: usize, shape: &[usize]) -> Result<Self> {
        let len = checked_size(shape)?;
        if mode >= shape.len() || m.rows() != shape[mode] || m.rows() * m.cols() != len {
            return shape_err(format!(
                "{}x{} matrix does not fold into {shape:?} along mode {mode}",
                m.rows(),
                m.cols()
            ));
        }
        let mut fwd = vec![mode];
        fwd.extend((0..shape.len()).filter(|&k| k != mode));
        let perm_shape: Vec<usize> = fwd.iter().map(|&k| shape[k]).collect();
        let t = Self { shape: perm_shape, data: m.data().to_vec() };
        let mut inv = vec![0usize; shape.len()];
        for (k, &p) in fwd.iter().enumerate() {
            inv[p] = k;
        }
        t.permute(&inv)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }
}

/// Wraps a vector as a tensor of the given shape.
pub fn vec_to_tensor(v: Vec<f64>, shape: &[usize]) -> Result<DenseTensor> {
    DenseTensor::from_vec(shape.to_vec(), v)
}

pub fn tensor_to_vec(t: DenseTensor) -> Vec<f64> {
    t.into_vec()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &e in shape {
        s.push(acc);
        acc *= e;
    }
    s
}

/// Steps a multi-index through `shape` with the first index fastest.
pub(crate) fn advance(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// A column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return shape_err(format!("{rows}x{cols} matrix from {} entries", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Convenience constructor from row-major literals.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return shape_err("ragged rows");
        }
        Ok(Self::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return shape_err(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        gemm(&mut out.data, self.view(), other.view());
        Ok(out)
    }

    /// `self^T * other` without forming the transpose.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return shape_err(format!(
                "({}x{})^T times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        gemm(&mut out.data, self.view().t(), other.view());
        Ok(out)
    }

    /// `self * other^T` without forming the transpose.
    pub fn matmul_t(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.cols {
            return shape_err(format!(
                "{}x{} times ({}x{})^T",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        gemm(&mut out.data, self.view(), other.view().t());
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return shape_err(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            ));
        }
        let mut y = vec![0.0; self.rows];
        self.matvec_add(x, &mut y);
        Ok(y)
    }

    /// `y += self * x`. Lengths are the caller's responsibility.
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(y, xj, self.col(j));
            }
        }
    }

    /// `self^T * x`.
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return shape_err(format!(
                "({}x{})^T times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            ));
        }
        Ok((0..self.cols).map(|j| dot(self.col(j), x)).collect())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `max |Q^T Q - I|` over all entries.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.t_matmul(self).expect("square Gram matrix");
        g.max_abs_diff(&DenseMatrix::identity(self.cols))
    }

    pub fn into_tensor(self) -> DenseTensor {
        DenseTensor { shape: vec![self.rows, self.cols], data: self.data }
    }

    pub fn from_tensor(t: DenseTensor) -> Result<Self> {
        if t.order() != 2 {
            return shape_err(format!("order-{} tensor is not a matrix", t.order()));
        }
        Ok(Self { rows: t.shape[0], cols: t.shape[1], data: t.data })
    }

    pub(crate) fn view(&self) -> MatView<'_> {
        MatView { data: &self.data, rows: self.rows, cols: self.cols, trans: false }
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

// ---------------------------------------------------------------------------
// kernels

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Borrowed matrix with an optional logical transpose.
///
/// Logical entry `(i, j)` is `data[i + j * rows]` when `trans` is false and
/// `data[j + i * cols]` when it is true (the storage is then `cols x rows`).
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub trans: bool,
}

impl<'a> MatView<'a> {
    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, trans: !self.trans }
    }
}

/// `c = a * b`, overwriting `c` (column-major, `a.rows x b.cols`).
pub(crate) fn gemm(c: &mut [f64], a: MatView<'_>, b: MatView<'_>) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(k, b.rows);
    debug_assert_eq!(c.len(), m * n);
    match (a.trans, b.trans) {
        (false, false) => {
            for j in 0..n {
                let cj = &mut c[j * m..(j + 1) * m];
                cj.iter_mut().for_each(|x| *x = 0.0);
                for l in 0..k {
                    let s = b.data[l + j * k];
                    if s != 0.0 {
                        axpy(cj, s, &a.data[l * m..(l + 1) * m]);
                    }
                }
            }
        }
        (true, false) => {
            for j in 0..n {
                let bj = &b.data[j * k..(j + 1) * k];
                for i in 0..m {
                    c[i + j * m] = dot(&a.data[i * k..(i + 1) * k], bj);
                }
            }
        }
        (false, true) => {
            for j in 0..n {
                let cj = &mut c[j * m..(j + 1) * m];
                cj.iter_mut().for_each(|x| *x = 0.0);
                for l in 0..k {
                    let s = b.data[j + l * n];
                    if s != 0.0 {
                        axpy(cj, s, &a.data[l * m..(l + 1) * m]);
                    }
                }
            }
        }
        (true, true) => {
            for j in 0..n {
                for i in 0..m {
                    let ai = &a.data[i * k..(i + 1) * k];
                    c[i + j * m] = (0..k).map(|l| ai[l] * b.data[j + l * n]).sum();
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// mode products and contractions

fn mode_apply(t: &DenseTensor, m: MatView<'_>, mode: usize) -> Result<DenseTensor> {
    if mode >= t.order() {
        return invalid(format!("mode {mode} out of range for order {}", t.order()));
    }
    let nm = t.shape[mode];
    if m.cols != nm {
        return shape_err(format!(
            "mode-{mode} product needs {nm} matrix columns, got {}x{}",
            m.rows, m.cols
        ));
    }
    let left: usize = t.shape[..mode].iter().product();
    let right: usize = t.shape[mode + 1..].iter().product();
    let r = m.rows;
    let mut shape = t.shape.clone();
    shape[mode] = r;
    let mut data = vec![0.0; left * r * right];
    if left == 1 {
        let src = MatView { data: &t.data, rows: nm, cols: right, trans: false };
        gemm(&mut data, m, src);
    } else {
        let mt = m.t();
        for rr in 0..right {
            let src = MatView {
                data: &t.data[rr * left * nm..(rr + 1) * left * nm],
                rows: left,
                cols: nm,
                trans: false,
            };
            gemm(&mut data[rr * left * r..(rr + 1) * left * r], src, mt);
        }
    }
    Ok(DenseTensor { shape, data })
}

/// `t x_mode m`: contracts axis `mode` of `t` with the columns of `m`.
pub fn mode_product(t: &DenseTensor, m: &DenseMatrix, mode: usize) -> Result<DenseTensor> {
    mode_apply(t, m.view(), mode)
}

/// `t x_mode m^T` without forming the transpose.
pub fn mode_product_transposed(t: &DenseTensor, m: &DenseMatrix, mode: usize) -> Result<DenseTensor> {
    mode_apply(t, m.view().t(), mode)
}

fn check_distinct_modes<'a>(modes: impl Iterator<Item = &'a usize>) -> Result<()> {
    let mut seen = Vec::new();
    for &m in modes {
        if seen.contains(&m) {
            return invalid(format!("mode {m} listed twice"));
        }
        seen.push(m);
    }
    Ok(())
}

/// Applies a sequence of mode products, one per listed `(matrix, mode)`.
///
/// On the linearized vector this is the action of the Kronecker product of
/// the factors (the factor on the last mode leftmost), with identities on
/// modes that are not listed.
pub fn multi_mode_apply(t: &DenseTensor, factors: &[(&DenseMatrix, usize)]) -> Result<DenseTensor> {
    check_distinct_modes(factors.iter().map(|(_, m)| m))?;
    let mut acc = t.clone();
    for &(m, mode) in factors {
        acc = mode_product(&acc, m, mode)?;
    }
    Ok(acc)
}

/// As [`multi_mode_apply`] with every factor transposed.
pub fn multi_mode_apply_transposed(
    t: &DenseTensor,
    factors: &[(&DenseMatrix, usize)],
) -> Result<DenseTensor> {
    check_distinct_modes(factors.iter().map(|(_, m)| m))?;
    let mut acc = t.clone();
    for &(m, mode) in factors {
        acc = mode_product_transposed(&acc, m, mode)?;
    }
    Ok(acc)
}

/// Contracts `a` and `b` over the paired axes `dims_a[k] <-> dims_b[k]`.
///
/// The result carries the free axes of `a` followed by the free axes of `b`,
/// each in their original order. A full contraction yields shape `[1]`.
pub fn contract(
    a: &DenseTensor,
    b: &DenseTensor,
    dims_a: &[usize],
    dims_b: &[usize],
) -> Result<DenseTensor> {
    if dims_a.len() != dims_b.len() {
        return invalid(format!("{} axes paired with {}", dims_a.len(), dims_b.len()));
    }
    check_distinct_modes(dims_a.iter())?;
    check_distinct_modes(dims_b.iter())?;
    for (&da, &db) in dims_a.iter().zip(dims_b) {
        if da >= a.order() || db >= b.order() {
            return invalid(format!("contraction axis out of range ({da}, {db})"));
        }
        if a.shape[da] != b.shape[db] {
            return shape_err(format!(
                "axis {da} of extent {} paired with axis {db} of extent {}",
                a.shape[da], b.shape[db]
            ));
        }
    }
    let free_a: Vec<usize> = (0..a.order()).filter(|k| !dims_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|k| !dims_b.contains(k)).collect();
    let perm_a: Vec<usize> = free_a.iter().chain(dims_a).copied().collect();
    let perm_b: Vec<usize> = dims_b.iter().chain(&free_b).copied().collect();
    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;
    let m: usize = free_a.iter().map(|&k| a.shape[k]).product();
    let k: usize = dims_a.iter().map(|&k| a.shape[k]).product();
    let n: usize = free_b.iter().map(|&k| b.shape[k]).product();
    let mut data = vec![0.0; m * n];
    gemm(
        &mut data,
        MatView { data: &ap.data, rows: m, cols: k, trans: false },
        MatView { data: &bp.data, rows: k, cols: n, trans: false },
    );
    let mut shape: Vec<usize> = free_a.iter().map(|&k| a.shape[k]).collect();
    shape.extend(free_b.iter().map(|&k| b.shape[k]));
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(DenseTensor { shape, data })
}

/// Standard Kronecker product `a ⊗ b`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (rb, cb) = (b.rows, b.cols);
    DenseMatrix::from_fn(a.rows * rb, a.cols * cb, |i, j| {
        a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
    })
}

/// `F_d ⊗ ... ⊗ F_1` for `factors = [F_1, ..., F_d]`, matching the
/// first-index-fastest linearization.
pub fn kron_chain(factors: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let (first, rest) = factors
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("empty Kronecker chain".into()))?;
    let mut acc = (*first).clone();
    for f in rest {
        acc = kron(f, &acc);
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// QR

/// Thin QR factorization `m = q * r`.
#[derive(Debug, Clone)]
pub struct QrResult {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
}

/// Column-pivoted thin QR: `m[:, perm[k]] = (q * r)[:, k]`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    pub q: DenseMatrix,
    pub r: DenseMatrix,
    pub perm: Vec<usize>,
}

impl PivotedQr {
    /// Number of leading diagonal entries of `r` with `|r_kk| > tol * |r_00|`.
    pub fn rank(&self, tol: f64) -> usize {
        let n = self.r.cols.min(self.r.rows);
        if n == 0 {
            return 0;
        }
        let r00 = self.r[(0, 0)].abs();
        if r00 == 0.0 {
            return 0;
        }
        (0..n).take_while(|&k| self.r[(k, k)].abs() > tol * r00).count()
    }

    /// Keeps `rank` columns of `q` and returns `(q_r, r_r)` with
    /// `m ≈ q_r * r_r`, where `r_r` has the pivoting undone.
    pub fn truncate(&self, rank: usize) -> (DenseMatrix, DenseMatrix) {
        let m = self.q.rows;
        let n = self.r.cols;
        let q = DenseMatrix { rows: m, cols: rank, data: self.q.data[..m * rank].to_vec() };
        let mut r = DenseMatrix::zeros(rank, n);
        for (k, &p) in self.perm.iter().enumerate() {
            for i in 0..rank {
                r[(i, p)] = self.r[(i, k)];
            }
        }
        (q, r)
    }
}

struct Householder {
    a: DenseMatrix,
    tau: Vec<f64>,
}

impl Householder {
    /// Reflects column `k` below the diagonal; stores `v` (with implicit
    /// leading one) in place.
    fn reflect_column(&mut self, k: usize) {
        let m = self.a.rows;
        let col = &mut self.a.data[k * m..(k + 1) * m];
        let alpha = col[k];
        let tail = norm2(&col[k + 1..]);
        if tail == 0.0 {
            self.tau.push(0.0);
            return;
        }
        let beta = if alpha >= 0.0 { -alpha.hypot(tail) } else { alpha.hypot(tail) };
        let tau = (beta - alpha) / beta;
        let s = 1.0 / (alpha - beta);
        col[k + 1..].iter_mut().for_each(|x| *x *= s);
        col[k] = beta;
        self.tau.push(tau);
    }

    /// Applies reflector `k` to columns `from..` of `target` (rows `k..`).
    fn apply(v_col: &[f64], tau: f64, k: usize, target: &mut DenseMatrix, from: usize) {
        if tau == 0.0 {
            return;
        }
        let m = target.rows;
        for j in from..target.cols {
            let c = &mut target.data[j * m..(j + 1) * m];
            let w = c[k] + dot(&v_col[k + 1..], &c[k + 1..]);
            c[k] -= tau * w;
            axpy(&mut c[k + 1..], -tau * w, &v_col[k + 1..]);
        }
    }

    fn factor(&mut self, k: usize) {
        self.reflect_column(k);
        let m = self.a.rows;
        let v = self.a.data[k * m..(k + 1) * m].to_vec();
        let tau = self.tau[k];
        Self::apply(&v, tau, k, &mut self.a, k + 1);
    }

    fn finish(self) -> QrResult {
        let (m, n) = (self.a.rows, self.a.cols);
        let mut r = DenseMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                r[(i, j)] = self.a[(i, j)];
            }
        }
        let mut q = DenseMatrix::zeros(m, n);
        for k in 0..n {
            q[(k, k)] = 1.0;
        }
        for k in (0..n).rev() {
            let v = &self.a.data[k * m..(k + 1) * m];
            Self::apply(v, self.tau[k], k, &mut q, k);
        }
        // positive diagonal
        for k in 0..n {
            if r[(k, k)] < 0.0 {
                for j in k..n {
                    r[(k, j)] = -r[(k, j)];
                }
                q.col_mut(k).iter_mut().for_each(|x| *x = -*x);
            }
        }
        QrResult { q, r }
    }
}

/// Thin Householder QR of a tall matrix (`rows >= cols`). The diagonal of
/// `r` is non-negative and everything below it is exactly zero.
pub fn qr(m: &DenseMatrix) -> Result<QrResult> {
    if m.rows < m.cols {
        return invalid(format!("QR needs rows >= cols, got {}x{}", m.rows, m.cols));
    }
    let mut h = Householder { a: m.clone(), tau: Vec::with_capacity(m.cols) };
    for k in 0..m.cols {
        h.factor(k);
    }
    Ok(h.finish())
}

/// Householder QR with column pivoting on the largest remaining column norm.
pub fn qr_pivoted(m: &DenseMatrix) -> Result<PivotedQr> {
    if m.rows < m.cols {
        return invalid(format!("QR needs rows >= cols, got {}x{}", m.rows, m.cols));
    }
    let (rows, n) = (m.rows, m.cols);
    let mut h = Householder { a: m.clone(), tau: Vec::with_capacity(n) };
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let best = (k..n)
            .map(|j| (j, norm2(&h.a.data[j * rows + k..(j + 1) * rows])))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0;
        if best != k {
            for i in 0..rows {
                h.a.data.swap(i + k * rows, i + best * rows);
            }
            perm.swap(k, best);
        }
        h.factor(k);
    }
    let QrResult { q, r } = h.finish();
    Ok(PivotedQr { q, r, perm })
}
