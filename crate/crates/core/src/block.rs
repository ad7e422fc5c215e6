//! Leaf blocks: Tucker low-rank blocks, flat low-rank blocks and dense blocks.
//!
//! For an admissible pair `(τ, σ)` the kernel is interpolated on the tensor
//! Chebyshev grids of the two domains:
//! `K_τσ ≈ (U_d ⊗ … ⊗ U_1) G (V_d ⊗ … ⊗ V_1)^T`, with `U_l`, `V_l` the
//! per-dimension Lagrange factor matrices and `G` the kernel at node pairs.
//! A Tucker block keeps the `2d` small factors; a flat low-rank block
//! materializes the Kronecker products.

use crate::cheb::{cheb_points, core_tensor, factor_matrix, ChebGrid1D};
use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::{AdmissibilityRule, IndexBox};
use crate::kernel::Nystrom;
use crate::tensor::{
    axpy, kron_chain, mode_product, multi_mode_apply, multi_mode_apply_transposed, qr, qr_pivoted, DenseMatrix, DenseTensor,
};

/// Scalar counts of a stored block or operator, by category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct StorageCounts {
    pub dense: usize,
    pub factor: usize,
    pub core: usize,
}

impl StorageCounts {
    pub fn total(&self) -> usize {
        self.dense + self.factor + self.core
    }
}

impl std::ops::AddAssign for StorageCounts {
    fn add_assign(&mut self, o: Self) {
        self.dense += o.dense;
        self.factor += o.factor;
        self.core += o.core;
    }
}

/// Optional rank trimming by column-pivoted QR of the factor matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum RankTrim {
    #[default]
    Off,
    /// Drop columns whose `|R_kk|` falls below `tol * |R_00|`.
    Pivoted { tol: f64 },
}

impl RankTrim {
    pub const DEFAULT_TOL: f64 = 1e-14;
}

/// Interpolation data shared by the Tucker and flat builders.
struct Interpolant {
    u: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    core: DenseTensor,
}

fn chebyshev_grids(nys: &Nystrom, b: &IndexBox, p: usize) -> Result<Vec<ChebGrid1D>> {
    let dom = nys.grid().domain_of(b);
    (0..b.dim()).map(|l| cheb_points(dom.lo[l], dom.hi[l], p)).collect()
}

fn factors(nys: &Nystrom, b: &IndexBox, grids: &[ChebGrid1D]) -> Result<Vec<DenseMatrix>> {
    (0..b.dim())
        .map(|l| {
            let pts: Vec<f64> = (b.lo[l]..b.hi[l]).map(|i| nys.grid().coord(i)).collect();
            factor_matrix(&pts, &grids[l])
        })
        .collect()
}

fn interpolate(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, p: usize) -> Result<Interpolant> {
    let grid = nys.grid();
    if tau.dim() != grid.dim() || sigma.dim() != grid.dim() {
        return shape_err("index boxes do not match the grid dimension");
    }
    if !AdmissibilityRule::Weak.is_admissible(&grid.domain_of(tau), &grid.domain_of(sigma)) {
        return Err(Error::NotAdmissible);
    }
    if p == 0 {
        return invalid("rank must be positive");
    }
    for b in [tau, sigma] {
        if let Some(side) = b.sides().into_iter().find(|&s| s < p) {
            return Err(Error::RankTooLarge { rank: p, side });
        }
    }
    let gt = chebyshev_grids(nys, tau, p)?;
    let gs = chebyshev_grids(nys, sigma, p)?;
    Ok(Interpolant { u: factors(nys, tau, &gt)?, v: factors(nys, sigma, &gs)?, core: core_tensor(nys.kernel(), &gt, &gs)? })
}

/// Tucker low-rank block: `A_τσ = (U_d ⊗ … ⊗ U_1) G (V_d ⊗ … ⊗ V_1)^T`
/// with the order-`2d` core `G` of shape `[r_1..r_d, s_1..s_d]`.
#[derive(Debug, Clone)]
pub struct TuckerBlock {
    core: DenseTensor,
    u: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
}

impl TuckerBlock {
    pub fn from_parts(core: DenseTensor, u: Vec<DenseMatrix>, v: Vec<DenseMatrix>) -> Result<Self> {
        let d = u.len();
        if d == 0 || v.len() != d || core.order() != 2 * d {
            return shape_err("Tucker block needs d row factors, d column factors and an order-2d core");
        }
        for l in 0..d {
            if u[l].cols() != core.shape()[l] || v[l].cols() != core.shape()[d + l] {
                return shape_err(format!("factor {l} does not match core shape {:?}", core.shape()));
            }
        }
        Ok(Self { core, u, v })
    }

    /// Chebyshev interpolant scaled by `h^d`, before orthonormalization.
    pub fn interpolate(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, p: usize) -> Result<Self> {
        let Interpolant { u, v, mut core } = interpolate(nys, tau, sigma, p)?;
        core.scale(nys.weight());
        Ok(Self { core, u, v })
    }

    /// Replaces every factor by the `Q` of its QR factorization and absorbs
    /// the triangular factors into the core.
    pub fn orthonormalize(self, trim: RankTrim) -> Result<Self> {
        let d = self.u.len();
        let mut core = self.core;
        let mut qs = Vec::with_capacity(2 * d);
        // u factors act on modes 0..d, v factors on d..2d
        for (mode, f) in self.u.into_iter().chain(self.v).enumerate() {
            let (q, r) = match trim {
                RankTrim::Off => {
                    let qr = qr(&f)?;
                    (qr.q, qr.r)
                }
                RankTrim::Pivoted { tol } => {
                    let p = qr_pivoted(&f)?;
                    p.truncate(p.rank(tol).max(1))
                }
            };
            core = mode_product(&core, &r, mode)?;
            qs.push(q);
        }
        let v = qs.split_off(d);
        Ok(Self { core, u: qs, v })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn u_factors(&self) -> &[DenseMatrix] {
        &self.u
    }

    pub fn v_factors(&self) -> &[DenseMatrix] {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn rows(&self) -> usize {
        self.u.iter().map(|m| m.rows()).product()
    }

    pub fn cols(&self) -> usize {
        self.v.iter().map(|m| m.rows()).product()
    }

    fn core_rows(&self) -> usize {
        self.core.shape()[..self.dim()].iter().product()
    }

    /// `y += A x` via mode products with `V_l^T`, the core, and `U_l`.
    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.cols() || y.len() != self.rows() {
            return shape_err(format!(
                "{}x{} Tucker block applied to {} -> {}",
                self.rows(),
                self.cols(),
                x.len(),
                y.len()
            ));
        }
        let d = self.dim();
        let sides: Vec<usize> = self.v.iter().map(|m| m.rows()).collect();
        let w = DenseTensor::from_vec(sides, x.to_vec())?;
        let vf: Vec<(&DenseMatrix, usize)> = self.v.iter().zip(0..d).collect();
        let w = multi_mode_apply_transposed(&w, &vf)?;
        let rows = self.core_rows();
        let mut z = vec![0.0; rows];
        for (col, &wj) in self.core.data().chunks_exact(rows).zip(w.data()) {
            axpy(&mut z, wj, col);
        }
        let z = DenseTensor::from_vec(self.core.shape()[..d].to_vec(), z)?;
        let uf: Vec<(&DenseMatrix, usize)> = self.u.iter().zip(0..d).collect();
        let f = multi_mode_apply(&z, &uf)?;
        y.iter_mut().zip(f.data()).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let uf: Vec<&DenseMatrix> = self.u.iter().collect();
        let vf: Vec<&DenseMatrix> = self.v.iter().collect();
        let (ku, kv) = (kron_chain(&uf)?, kron_chain(&vf)?);
        let g = DenseMatrix::from_col_major(ku.cols(), kv.cols(), self.core.data().to_vec())?;
        ku.matmul(&g)?.matmul_t(&kv)
    }

    pub fn storage(&self) -> StorageCounts {
        let factor = self.u.iter().chain(&self.v).map(|m| m.rows() * m.cols()).sum();
        StorageCounts { dense: 0, factor, core: self.core.len() }
    }

    /// Multiply-adds of one application.
    pub fn apply_flops(&self) -> usize {
        let d = self.dim();
        let (mut flops, mut size) = (0, self.cols());
        for l in 0..d {
            let (n, r) = (self.v[l].rows(), self.v[l].cols());
            flops += size / n * n * r;
            size = size / n * r;
        }
        flops += self.core.len();
        size = self.core_rows();
        for l in 0..d {
            let (n, r) = (self.u[l].rows(), self.u[l].cols());
            flops += size / r * n * r;
            size = size / r * n;
        }
        flops
    }

    /// `2 d n p + p^(2d)` for cubic blocks of side `n`, generalized to boxes.
    pub fn planned_storage(tau: &[usize], sigma: &[usize], p: usize) -> StorageCounts {
        let factor = (tau.iter().chain(sigma).sum::<usize>()) * p;
        StorageCounts { dense: 0, factor, core: p.pow(2 * tau.len() as u32) }
    }
}

/// Builds the orthonormalized Tucker block of an admissible pair.
pub fn build_tlr(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, p: usize, trim: RankTrim) -> Result<TuckerBlock> {
    TuckerBlock::interpolate(nys, tau, sigma, p)?.orthonormalize(trim)
}

/// Flat low-rank block `U G V^T` with orthonormal `U`, `V` of `p^d` columns.
#[derive(Debug, Clone)]
pub struct LowRankBlock {
    u: DenseMatrix,
    g: DenseMatrix,
    v: DenseMatrix,
}

impl LowRankBlock {
    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn g(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.v.rows() || y.len() != self.u.rows() {
            return shape_err(format!(
                "{}x{} low-rank block applied to {} -> {}",
                self.u.rows(),
                self.v.rows(),
                x.len(),
                y.len()
            ));
        }
        let w = self.v.matvec_t(x)?;
        let z = self.g.matvec(&w)?;
        self.u.matvec_add(&z, y);
        Ok(())
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        self.u.matmul(&self.g)?.matmul_t(&self.v)
    }

    pub fn storage(&self) -> StorageCounts {
        StorageCounts {
            dense: 0,
            factor: self.u.rows() * self.u.cols() + self.v.rows() * self.v.cols(),
            core: self.g.rows() * self.g.cols(),
        }
    }

    pub fn apply_flops(&self) -> usize {
        self.u.rows() * self.u.cols() + self.g.rows() * self.g.cols() + self.v.rows() * self.v.cols()
    }

    /// `2 n^d p^d + p^(2d)` for cubic blocks, generalized to boxes.
    pub fn planned_storage(tau: &[usize], sigma: &[usize], p: usize) -> StorageCounts {
        let r = p.pow(tau.len() as u32);
        let (nt, ns): (usize, usize) = (tau.iter().product(), sigma.iter().product());
        StorageCounts { dense: 0, factor: (nt + ns) * r, core: r * r }
    }
}

/// Same interpolant as [`build_tlr`], with the Kronecker factors
/// materialized before orthonormalization.
pub fn build_lowrank(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, p: usize) -> Result<LowRankBlock> {
    let Interpolant { u, v, core } = interpolate(nys, tau, sigma, p)?;
    let uf: Vec<&DenseMatrix> = u.iter().collect();
    let vf: Vec<&DenseMatrix> = v.iter().collect();
    let qu = qr(&kron_chain(&uf)?)?;
    let qv = qr(&kron_chain(&vf)?)?;
    let mut g = DenseMatrix::from_col_major(qu.r.cols(), qv.r.cols(), core.into_vec())?;
    g.scale(nys.weight());
    let g = qu.r.matmul(&g)?.matmul_t(&qv.r)?;
    Ok(LowRankBlock { u: qu.q, g, v: qv.q })
}

/// Dense block of operator entries `a(x_i) δ_ij + h^d K_ij`.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    matrix: DenseMatrix,
}

impl DenseBlock {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.matrix.cols() || y.len() != self.matrix.rows() {
            return shape_err("dense block applied to vectors of the wrong length");
        }
        self.matrix.matvec_add(x, y);
        Ok(())
    }

    pub fn storage(&self) -> StorageCounts {
        StorageCounts { dense: self.matrix.rows() * self.matrix.cols(), factor: 0, core: 0 }
    }
}

pub fn build_dense(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox) -> DenseBlock {
    let n = nys.grid().n();
    let rows = tau.global_indices(n);
    let cols = sigma.global_indices(n);
    DenseBlock { matrix: DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| nys.entry(rows[i], cols[j])) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::UniformGrid;
    use crate::kernel::{CoefficientFn, KernelSpec, QuadratureConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nys(k: KernelSpec, n: usize) -> Nystrom {
        let g = UniformGrid::new(2, n).unwrap();
        Nystrom::new(k, CoefficientFn::Constant(0.0), g, QuadratureConfig::default()).unwrap()
    }

    fn ib(lo: [usize; 2], hi: [usize; 2]) -> IndexBox {
        IndexBox::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    /// `h^d k(x_i, y_j)` assembled entry by entry from grid coordinates.
    fn kernel_block(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox) -> DenseMatrix {
        let g = nys.grid();
        let rows = tau.global_indices(g.n());
        let cols = sigma.global_indices(g.n());
        DenseMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            nys.weight() * nys.kernel().value(&g.point(rows[i])[..2], &g.point(cols[j])[..2])
        })
    }

    fn max_rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_kernel_reconstructs_exactly() {
        let ny = nys(KernelSpec::constant(3.0), 32);
        let (t, s) = (ib([0, 0], [8, 8]), ib([16, 0], [24, 8]));
        let want = 3.0 / (32.0 * 32.0);
        for m in [build_tlr(&ny, &t, &s, 4, RankTrim::Off).unwrap().to_dense().unwrap(), build_lowrank(&ny, &t, &s, 4).unwrap().to_dense().unwrap()] {
            assert!(m.data().iter().all(|v| (v - want).abs() <= 1e-12));
        }
    }

    #[test]
    fn separable_polynomial_kernel_is_exact() {
        let ny = nys(KernelSpec::custom(|x, y| x[0] * y[0], true), 32);
        let (t, s) = (ib([0, 8], [8, 16]), ib([16, 0], [24, 8]));
        let want = kernel_block(&ny, &t, &s);
        let b = build_tlr(&ny, &t, &s, 2, RankTrim::Off).unwrap();
        assert!(b.to_dense().unwrap().max_abs_diff(&want) <= 1e-12);
        assert!(build_lowrank(&ny, &t, &s, 2).unwrap().to_dense().unwrap().max_abs_diff(&want) <= 1e-12);
    }

    #[test]
    fn gaussian_block_accuracy() {
        let ny = nys(KernelSpec::gaussian(2f64.sqrt()).unwrap(), 128);
        let (t, s) = (ib([0, 0], [32, 32]), ib([64, 0], [96, 32]));
        let want = kernel_block(&ny, &t, &s);
        let tlr = build_tlr(&ny, &t, &s, 8, RankTrim::Off).unwrap();
        assert!(max_rel(&tlr.to_dense().unwrap(), &want) <= 1e-9);
        let lr = build_lowrank(&ny, &t, &s, 8).unwrap();
        assert!(max_rel(&lr.to_dense().unwrap(), &want) <= 1e-9);
    }

    #[test]
    fn factors_are_orthonormal() {
        let ny = nys(KernelSpec::slp2d(), 64);
        let b = build_tlr(&ny, &ib([0, 0], [16, 16]), &ib([16, 16], [32, 32]), 8, RankTrim::Off).unwrap();
        for f in b.u_factors().iter().chain(b.v_factors()) {
            assert!(f.orthonormality_defect() <= 1e-12);
        }
        assert_eq!(b.core().shape(), &[8; 4]);
    }

    #[test]
    fn orthonormalization_preserves_block() {
        let ny = nys(KernelSpec::slp2d(), 64);
        let (t, s) = (ib([0, 0], [16, 16]), ib([32, 0], [48, 16]));
        let raw = TuckerBlock::interpolate(&ny, &t, &s, 6).unwrap();
        let before = raw.to_dense().unwrap();
        let after = raw.orthonormalize(RankTrim::Off).unwrap().to_dense().unwrap();
        assert!(after.max_abs_diff(&before) <= 1e-12 * before.frobenius_norm().max(1.0));
    }

    #[test]
    fn rank_trim_keeps_full_rank_interpolants() {
        // Lagrange factors on distinct points have full column rank, so the
        // pivoted variant only reorders and reproduces the same block
        let ny = nys(KernelSpec::slp2d(), 64);
        let (t, s) = (ib([0, 0], [16, 16]), ib([32, 0], [48, 16]));
        let plain = build_tlr(&ny, &t, &s, 6, RankTrim::Off).unwrap().to_dense().unwrap();
        let trimmed = build_tlr(&ny, &t, &s, 6, RankTrim::Pivoted { tol: RankTrim::DEFAULT_TOL }).unwrap();
        assert_eq!(trimmed.core().shape(), &[6; 4]);
        assert!(trimmed.to_dense().unwrap().max_abs_diff(&plain) <= 1e-12 * plain.frobenius_norm());
    }

    #[test]
    fn rank_trim_drops_dependent_factor_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let base = DenseMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
        // third column = sum of the first two
        let u1 = DenseMatrix::from_fn(8, 3, |i, j| if j < 2 { base[(i, j)] } else { base[(i, 0)] + base[(i, 1)] });
        let mut other = || DenseMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let (u2, v1, v2) = (other(), other(), other());
        let core = DenseTensor::from_fn(&[3; 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let b = TuckerBlock::from_parts(core, vec![u1, u2], vec![v1, v2]).unwrap();
        let before = b.to_dense().unwrap();
        let t = b.orthonormalize(RankTrim::Pivoted { tol: 1e-12 }).unwrap();
        assert_eq!(t.core().shape(), &[2, 3, 3, 3]);
        assert!(t.to_dense().unwrap().max_abs_diff(&before) <= 1e-12);
    }

    #[test]
    fn inadmissible_and_oversized_requests_fail() {
        let ny = nys(KernelSpec::slp2d(), 32);
        let t = ib([0, 0], [8, 8]);
        assert!(matches!(build_tlr(&ny, &t, &ib([4, 4], [12, 12]), 4, RankTrim::Off), Err(Error::NotAdmissible)));
        assert!(matches!(build_lowrank(&ny, &t, &t, 4), Err(Error::NotAdmissible)));
        assert!(matches!(
            build_tlr(&ny, &t, &ib([8, 0], [16, 8]), 9, RankTrim::Off),
            Err(Error::RankTooLarge { rank: 9, side: 8 })
        ));
    }

    #[test]
    fn dense_block_examples() {
        let g = UniformGrid::new(2, 4).unwrap();
        let id = Nystrom::new(KernelSpec::constant(0.0), CoefficientFn::Constant(1.0), g, QuadratureConfig::default()).unwrap();
        let b = build_dense(&id, &ib([0, 0], [2, 2]), &ib([0, 0], [2, 2]));
        assert_eq!(b.matrix(), &DenseMatrix::identity(4));

        let g1 = UniformGrid::new(2, 1).unwrap();
        let one = Nystrom::new(KernelSpec::constant(1.0), CoefficientFn::Constant(0.0), g1, QuadratureConfig::default()).unwrap();
        let b = build_dense(&one, &g1.full_box(), &g1.full_box());
        assert!((b.matrix()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn apply_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // identity factors with the reshaped kernel block as core give K u
        let k = DenseMatrix::from_fn(16, 16, |_, _| rng.gen_range(-1.0..1.0));
        let core = DenseTensor::from_vec(vec![4, 4, 4, 4], k.data().to_vec()).unwrap();
        let id = DenseMatrix::identity(4);
        let b = TuckerBlock::from_parts(core, vec![id.clone(), id.clone()], vec![id.clone(), id]).unwrap();
        let u: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; 16];
        b.apply_add(&u, &mut y).unwrap();
        let want = k.matvec(&u).unwrap();
        assert!(y.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-14));
        let mut z = vec![0.0; 16];
        b.apply_add(&[0.0; 16], &mut z).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(b.apply_add(&[0.0; 3], &mut z).is_err());
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DenseMatrix {
        qr(&DenseMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0))).unwrap().q
    }

    #[test]
    fn random_tucker_apply_matches_materialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = vec![random_orthonormal(&mut rng, 8, 3), random_orthonormal(&mut rng, 8, 3)];
        let v = vec![random_orthonormal(&mut rng, 8, 3), random_orthonormal(&mut rng, 8, 3)];
        let core = DenseTensor::from_fn(&[3; 4], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let b = TuckerBlock::from_parts(core, u, v).unwrap();
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; 64];
        b.apply_add(&x, &mut y).unwrap();
        let want = b.to_dense().unwrap().matvec(&x).unwrap();
        assert!(y.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn storage_counts() {
        let t = TuckerBlock::planned_storage(&[32, 32], &[32, 32], 8);
        assert_eq!(t.total(), 5120);
        let l = LowRankBlock::planned_storage(&[32, 32], &[32, 32], 8);
        assert_eq!(l.total(), 135168);

        let ny = nys(KernelSpec::gaussian(2f64.sqrt()).unwrap(), 128);
        let (ta, sa) = (ib([0, 0], [32, 32]), ib([64, 0], [96, 32]));
        assert_eq!(build_tlr(&ny, &ta, &sa, 8, RankTrim::Off).unwrap().storage(), t);
        assert_eq!(build_lowrank(&ny, &ta, &sa, 8).unwrap().storage(), l);

        let ny = nys(KernelSpec::slp2d(), 16);
        assert_eq!(build_dense(&ny, &ib([0, 0], [4, 4]), &ib([0, 0], [4, 4])).storage().total(), 256);
    }

    #[test]
    fn dense_leaf_matches_direct_formula() {
        let ny = nys(KernelSpec::slp2d(), 16);
        let t = ib([4, 4], [8, 8]);
        let b = build_dense(&ny, &t, &t);
        let idx = t.global_indices(16);
        for (i, &gi) in idx.iter().enumerate() {
            for (j, &gj) in idx.iter().enumerate() {
                assert_eq!(b.matrix()[(i, j)], ny.entry(gi, gj));
            }
        }
    }

    #[test]
    fn slp_block_error_decays_with_rank() {
        let ny = nys(KernelSpec::slp2d(), 128);
        let (t, s) = (ib([0, 0], [32, 32]), ib([64, 0], [96, 32]));
        let want = kernel_block(&ny, &t, &s);
        let errs: Vec<f64> = [4, 8, 12, 16]
            .iter()
            .map(|&p| max_rel(&build_tlr(&ny, &t, &s, p, RankTrim::Off).unwrap().to_dense().unwrap(), &want))
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn flop_count_of_square_block() {
        let ny = nys(KernelSpec::slp2d(), 32);
        let b = build_tlr(&ny, &ib([0, 0], [8, 8]), &ib([8, 0], [16, 8]), 4, RankTrim::Off).unwrap();
        // V^T: 8*8*4 + 4*8*4, core: 256, U: 4*8*4 + 8*8*4
        assert_eq!(b.apply_flops(), 256 + 128 + 256 + 128 + 256);
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn tlr_and_lowrank_agree(ox in 0usize..4, oy in 0usize..4, pk in 0usize..2, seed in 0u64..1000) {
                let p = [4, 8][pk];
                let ny = nys(KernelSpec::slp2d(), 64);
                let t = ib([0, 0], [16, 16]);
                let s = ib([16 + 8 * ox, 8 * oy], [32 + 8 * ox, 16 + 8 * oy]);
                let a = build_tlr(&ny, &t, &s, p, RankTrim::Off).unwrap();
                let b = build_lowrank(&ny, &t, &s, p).unwrap();
                prop_assert!(a.to_dense().unwrap().max_abs_diff(&b.to_dense().unwrap()) <= 1e-12);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (mut ya, mut yb) = (vec![0.0; 256], vec![0.0; 256]);
                a.apply_add(&x, &mut ya).unwrap();
                b.apply_add(&x, &mut yb).unwrap();
                prop_assert!(ya.iter().zip(&yb).all(|(u, v)| (u - v).abs() <= 1e-12));
            }

            #[test]
            fn tlr_apply_is_linear(seed in 0u64..1000, alpha in -2.0..2.0f64, beta in -2.0..2.0f64) {
                let ny = nys(KernelSpec::gaussian(2f64.sqrt()).unwrap(), 32);
                let b = build_tlr(&ny, &ib([0, 0], [8, 8]), &ib([8, 8], [16, 16]), 4, RankTrim::Off).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let u: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let v: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let w: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
                let (mut fu, mut fv, mut fw) = (vec![0.0; 64], vec![0.0; 64], vec![0.0; 64]);
                b.apply_add(&u, &mut fu).unwrap();
                b.apply_add(&v, &mut fv).unwrap();
                b.apply_add(&w, &mut fw).unwrap();
                for i in 0..64 {
                    prop_assert!((fw[i] - alpha * fu[i] - beta * fv[i]).abs() <= 1e-12);
                }
            }
        }
    }
}
