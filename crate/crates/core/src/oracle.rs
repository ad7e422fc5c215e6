//! Ground truth: dense assembly, direct row summation, truncated SVD,
//! sequentially truncated HOSVD and Frobenius errors.

use rayon::prelude::*;

use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::UniformGrid;
use crate::htlr::RowOracle;
use crate::kernel::{CoefficientFn, KernelSpec, Nystrom, QuadratureConfig};
use crate::tensor::{mode_product, mode_product_transposed, norm2, DenseMatrix, DenseTensor};

/// Largest `N` [`dense_assemble`] accepts by default.
pub const DENSE_LIMIT: usize = 1 << 15;

/// The fully assembled `N x N` system matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub matrix: DenseMatrix,
}

impl DenseOperator {
    pub fn matvec(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(u)
    }
}

pub fn dense_assemble(k: &KernelSpec, a: &CoefficientFn, grid: &UniformGrid, cfg: &QuadratureConfig) -> Result<DenseOperator> {
    dense_assemble_with_limit(k, a, grid, cfg, DENSE_LIMIT)
}

pub fn dense_assemble_with_limit(
    k: &KernelSpec,
    a: &CoefficientFn,
    grid: &UniformGrid,
    cfg: &QuadratureConfig,
    limit: usize,
) -> Result<DenseOperator> {
    let n = grid.num_points();
    if n > limit {
        return Err(Error::TooLarge { n, limit });
    }
    let nys = Nystrom::new(k.clone(), a.clone(), *grid, *cfg)?;
    Ok(DenseOperator { matrix: DenseMatrix::from_fn(n, n, |i, j| nys.entry(i, j)) })
}

/// Rows of the system matrix summed directly from the kernel, so memory
/// stays `O(N)`.
#[derive(Debug, Clone)]
pub struct DirectRows {
    nys: Nystrom,
}

impl DirectRows {
    pub fn new(nys: Nystrom) -> Self {
        Self { nys }
    }

    pub fn from_parts(k: &KernelSpec, a: &CoefficientFn, grid: &UniformGrid, cfg: &QuadratureConfig) -> Result<Self> {
        Ok(Self { nys: Nystrom::new(k.clone(), a.clone(), *grid, *cfg)? })
    }

    pub fn row_times(&self, i: usize, u: &[f64]) -> f64 {
        u.iter().enumerate().map(|(j, &uj)| self.nys.entry(i, j) * uj).sum()
    }

    /// The full product `A u`, row by row on the current rayon pool.
    pub fn matvec(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.size() {
            return shape_err(format!("operator of size {} applied to vector of length {}", self.size(), u.len()));
        }
        Ok((0..u.len()).into_par_iter().map(|i| self.row_times(i, u)).collect())
    }
}

impl RowOracle for DirectRows {
    fn size(&self) -> usize {
        self.nys.grid().num_points()
    }

    fn rows_times(&self, rows: &[usize], u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.size() {
            return shape_err("input length differs from operator size");
        }
        if let Some(&i) = rows.iter().find(|&&i| i >= self.size()) {
            return invalid(format!("row {i} out of range"));
        }
        Ok(rows.par_iter().map(|&i| self.row_times(i, u)).collect())
    }
}

/// `‖approx - exact‖ / ‖exact‖` over flattened entries.
pub fn rel_fro_error(approx: &[f64], exact: &[f64]) -> Result<f64> {
    if approx.len() != exact.len() {
        return shape_err(format!("lengths {} and {} differ", approx.len(), exact.len()));
    }
    let den = norm2(exact);
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = approx.iter().zip(exact).map(|(a, e)| (a - e) * (a - e)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn to_faer(m: &DenseMatrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Thin SVD `m = U diag(s) V^T` with nonincreasing `s`.
pub fn svd(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let f = to_faer(m);
    let dec = f.thin_svd().map_err(|e| Error::Decomposition(format!("{e:?}")))?;
    let (u, v) = (dec.U(), dec.V());
    let k = m.rows().min(m.cols());
    let s: Vec<f64> = (0..k).map(|i| dec.S().column_vector()[i]).collect();
    let um = DenseMatrix::from_fn(m.rows(), k, |i, j| u[(i, j)]);
    let vm = DenseMatrix::from_fn(m.cols(), k, |i, j| v[(i, j)]);
    Ok((um, s, vm))
}

/// Rank-`r` truncation of an SVD.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub v: DenseMatrix,
    /// Every singular value of the input.
    pub spectrum: Vec<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.col_mut(j).iter_mut().for_each(|x| *x *= s);
        }
        us.matmul_t(&self.v)
    }

    /// `sqrt(sum_{i > r} s_i^2) / ‖M‖_F`, from the spectrum.
    pub fn tail_rel_error(&self) -> f64 {
        let r = self.rank();
        norm2(&self.spectrum[r..]) / norm2(&self.spectrum)
    }
}

pub fn svd_lowrank(m: &DenseMatrix, r: usize) -> Result<TruncatedSvd> {
    let k = m.rows().min(m.cols());
    if r == 0 || r > k {
        return invalid(format!("rank {r} outside 1..={k}"));
    }
    let (u, s, v) = svd(m)?;
    let keep = |a: &DenseMatrix| DenseMatrix::from_col_major(a.rows(), r, a.data()[..a.rows() * r].to_vec());
    Ok(TruncatedSvd { u: keep(&u)?, s: s[..r].to_vec(), v: keep(&v)?, spectrum: s })
}

/// Tucker decomposition with orthonormal factors.
#[derive(Debug, Clone)]
pub struct Tucker {
    pub core: DenseTensor,
    pub factors: Vec<DenseMatrix>,
    /// Squared singular values dropped at each mode, in processing order.
    pub discarded: Vec<f64>,
}

impl Tucker {
    pub fn to_full(&self) -> Result<DenseTensor> {
        let mut t = self.core.clone();
        for (mode, f) in self.factors.iter().enumerate() {
            t = mode_product(&t, f, mode)?;
        }
        Ok(t)
    }

    /// `sqrt(sum of discarded energies)`: an upper bound on the absolute
    /// reconstruction error.
    pub fn discarded_norm(&self) -> f64 {
        self.discarded.iter().sum::<f64>().sqrt()
    }
}

/// Left singular vectors and singular values of a (possibly very wide)
/// unfolding. Wide inputs are reduced through the thin QR of the transpose.
fn left_svd(m: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>)> {
    if m.cols() <= 4 * m.rows() {
        let (u, s, _) = svd(m)?;
        return Ok((u, s));
    }
    let ft = faer::Mat::from_fn(m.cols(), m.rows(), |i, j| m[(j, i)]);
    let r = ft.qr().thin_R().to_owned();
    // m = R^T Q^T, so the left singular pairs of m are those of R^T
    let rt = DenseMatrix::from_fn(r.ncols(), r.nrows(), |i, j| r[(j, i)]);
    let (u, s, _) = svd(&rt)?;
    Ok((u, s))
}

/// Sequentially truncated HOSVD, processing modes in ascending order.
pub fn sthosvd(t: &DenseTensor, ranks: &[usize]) -> Result<Tucker> {
    if ranks.len() != t.order() {
        return shape_err(format!("{} ranks for an order-{} tensor", ranks.len(), t.order()));
    }
    if let Some((m, &r)) = ranks.iter().enumerate().find(|&(m, &r)| r == 0 || r > t.shape()[m]) {
        return invalid(format!("rank {r} invalid for mode {m} of extent {}", t.shape()[m]));
    }
    let mut core = t.clone();
    let mut factors = Vec::with_capacity(t.order());
    let mut discarded = Vec::with_capacity(t.order());
    for (mode, &r) in ranks.iter().enumerate() {
        let (u, s) = left_svd(&core.unfold(mode)?)?;
        discarded.push(s.iter().skip(r).map(|x| x * x).sum());
        let ur = DenseMatrix::from_col_major(u.rows(), r, u.data()[..u.rows() * r].to_vec())?;
        core = mode_product_transposed(&core, &ur, mode)?;
        factors.push(ur);
    }
    Ok(Tucker { core, factors, discarded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::IndexBox;
    use crate::htlr::{construct, BuildConfig};
    use crate::grid::AdmissibilityRule;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// One-sided Jacobi: singular values of `m`, sorted descending.
    fn jacobi_singular_values(m: &DenseMatrix) -> Vec<f64> {
        let mut a = m.clone();
        let n = a.cols();
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for i in 0..a.rows() {
                        alpha += a[(i, p)] * a[(i, p)];
                        beta += a[(i, q)] * a[(i, q)];
                        gamma += a[(i, p)] * a[(i, q)];
                    }
                    if gamma == 0.0 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..a.rows() {
                        let (x, y) = (a[(i, p)], a[(i, q)]);
                        a[(i, p)] = c * x - s * y;
                        a[(i, q)] = s * x + c * y;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut s: Vec<f64> = (0..n).map(|j| norm2(a.col(j))).collect();
        s.sort_by(|x, y| y.partial_cmp(x).unwrap());
        s
    }

    #[test]
    fn dense_assemble_examples() {
        let g1 = UniformGrid::new(2, 1).unwrap();
        let op = dense_assemble(&KernelSpec::constant(1.0), &CoefficientFn::Constant(0.0), &g1, &QuadratureConfig::default())
            .unwrap();
        assert_eq!(op.matrix.data(), &[1.0]);

        let g = UniformGrid::new(2, 8).unwrap();
        let k = KernelSpec::gaussian(2f64.sqrt()).unwrap();
        let op = dense_assemble(&k, &CoefficientFn::Constant(0.0), &g, &QuadratureConfig::default()).unwrap();
        assert!(op.matrix.max_abs_diff(&op.matrix.transpose()) <= 1e-14);

        let big = UniformGrid::new(2, 256).unwrap();
        assert!(matches!(
            dense_assemble(&k, &CoefficientFn::Constant(0.0), &big, &QuadratureConfig::default()),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn dense_matches_single_leaf_operator_bitwise() {
        let g = UniformGrid::new(2, 16).unwrap();
        let k = KernelSpec::slp2d();
        let cfg = BuildConfig::new(k.clone(), 8, 256, AdmissibilityRule::Weak);
        let a = construct(&cfg, &g).unwrap();
        let dense = dense_assemble(&k, &cfg.coeff, &g, &cfg.quadrature).unwrap();
        assert_eq!(a.to_dense().unwrap().data(), dense.matrix.data());
        let u: Vec<f64> = (0..256).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(a.matvec(&u).unwrap(), dense.matvec(&u).unwrap());
    }

    #[test]
    fn direct_rows_match_dense() {
        let g = UniformGrid::new(2, 16).unwrap();
        let k = KernelSpec::slp2d();
        let a = CoefficientFn::Constant(0.5);
        let q = QuadratureConfig::default();
        let dense = dense_assemble(&k, &a, &g, &q).unwrap();
        let rows = DirectRows::from_parts(&k, &a, &g, &q).unwrap();
        let u: Vec<f64> = (0..256).map(|i| (i as f64).cos()).collect();
        let f = dense.matvec(&u).unwrap();
        let r = rows.rows_times(&[0, 17, 255], &u).unwrap();
        for (v, i) in r.iter().zip([0, 17, 255]) {
            assert!((v - f[i]).abs() <= 1e-13 * f[i].abs().max(1.0));
        }
        assert!(rel_fro_error(&rows.matvec(&u).unwrap(), &f).unwrap() <= 1e-14);
    }

    #[test]
    fn rel_fro_error_examples() {
        let x = [1.0, -2.0, 3.0];
        assert_eq!(rel_fro_error(&x, &x).unwrap(), 0.0);
        assert_eq!(rel_fro_error(&[0.0; 3], &x).unwrap(), 1.0);
        let eps = 1e-3;
        let y: Vec<f64> = x.iter().map(|v| (1.0 + eps) * v).collect();
        assert!((rel_fro_error(&y, &x).unwrap() - eps).abs() <= 1e-14);
        assert!(matches!(rel_fro_error(&x, &[0.0; 3]), Err(Error::ZeroReference)));
        assert!(rel_fro_error(&x, &[0.0; 2]).is_err());
    }

    #[test]
    fn svd_rank_one_and_full() {
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [3.0, -1.0, 2.0];
        let m = DenseMatrix::from_fn(4, 3, |i, j| a[i] * b[j]);
        let t = svd_lowrank(&m, 1).unwrap();
        assert!(rel_fro_error(t.to_dense().unwrap().data(), m.data()).unwrap() <= 1e-13);
        let r = random_matrix(7, 5, 1);
        let t = svd_lowrank(&r, 5).unwrap();
        assert!(rel_fro_error(t.to_dense().unwrap().data(), r.data()).unwrap() <= 1e-13);
        assert!(svd_lowrank(&r, 0).is_err());
        assert!(svd_lowrank(&r, 6).is_err());
    }

    #[test]
    fn svd_error_matches_jacobi_spectrum() {
        let m = random_matrix(64, 64, 2);
        let sigma = jacobi_singular_values(&m);
        let total = norm2(&sigma);
        let mut last = f64::INFINITY;
        for r in [1, 2, 4, 8, 16, 32, 48, 63] {
            let t = svd_lowrank(&m, r).unwrap();
            let err = rel_fro_error(t.to_dense().unwrap().data(), m.data()).unwrap();
            let expect = norm2(&sigma[r..]) / total;
            assert!((err - expect).abs() <= 1e-12, "r={r}: {err} vs {expect}");
            assert!(err <= last);
            last = err;
        }
    }

    #[test]
    fn svd_error_nonincreasing_in_rank() {
        let m = random_matrix(40, 30, 3);
        let errs: Vec<f64> = (1..=16)
            .map(|r| rel_fro_error(svd_lowrank(&m, r).unwrap().to_dense().unwrap().data(), m.data()).unwrap())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn random_tucker(shape: &[usize], ranks: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = DenseTensor::from_fn(ranks, |_| rng.gen_range(-1.0..1.0)).unwrap();
        for (mode, (&n, &r)) in shape.iter().zip(ranks).enumerate() {
            let f = DenseMatrix::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
            t = mode_product(&t, &f, mode).unwrap();
        }
        t
    }

    #[test]
    fn sthosvd_exact_rank_recovery() {
        let t = random_tucker(&[6, 7, 5], &[2, 2, 2], 4);
        let tk = sthosvd(&t, &[2, 2, 2]).unwrap();
        assert!(rel_fro_error(tk.to_full().unwrap().data(), t.data()).unwrap() <= 1e-12);
        assert!(tk.factors.iter().all(|f| f.orthonormality_defect() <= 1e-13));
        let full = sthosvd(&t, &[6, 7, 5]).unwrap();
        assert!(rel_fro_error(full.to_full().unwrap().data(), t.data()).unwrap() <= 1e-13);
        assert!(sthosvd(&t, &[2, 2]).is_err());
        assert!(sthosvd(&t, &[7, 2, 2]).is_err());
    }

    #[test]
    fn sthosvd_error_bounded_by_discarded_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = DenseTensor::from_fn(&[8, 8, 8], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let tk = sthosvd(&t, &[4, 4, 4]).unwrap();
        let diff: Vec<f64> = tk.to_full().unwrap().data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
        let err = norm2(&diff);
        assert!(err <= tk.discarded_norm() * (1.0 + 1e-12));
        // sequential truncation: the error equals the discarded energy exactly
        assert!((err - tk.discarded_norm()).abs() <= 1e-10 * err);
    }

    #[test]
    fn wide_unfolding_path_matches_direct_svd() {
        let m = random_matrix(5, 200, 6);
        let (_, s_direct, _) = svd(&m).unwrap();
        let (u, s) = left_svd(&m).unwrap();
        for (a, b) in s.iter().zip(&s_direct) {
            assert!((a - b).abs() <= 1e-12 * s_direct[0]);
        }
        assert!(u.orthonormality_defect() <= 1e-13);
    }

    #[test]
    fn tucker_of_kernel_block_is_compressible() {
        let g = UniformGrid::new(2, 32).unwrap();
        let nys = Nystrom::new(
            KernelSpec::gaussian(2f64.sqrt()).unwrap(),
            CoefficientFn::Constant(0.0),
            g,
            QuadratureConfig::default(),
        )
        .unwrap();
        let tau = IndexBox::new(vec![0, 0], vec![8, 8]).unwrap();
        let sigma = IndexBox::new(vec![8, 0], vec![16, 8]).unwrap();
        let m = crate::block::build_dense(&nys, &tau, &sigma).matrix().clone();
        let t = m.into_tensor().reshape(&[8, 8, 8, 8]).unwrap();
        let tk = sthosvd(&t, &[4, 4, 4, 4]).unwrap();
        assert!(rel_fro_error(tk.to_full().unwrap().data(), t.data()).unwrap() <= 1e-6);
    }
}
