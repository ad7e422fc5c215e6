//! Hierarchical operators: construction over the block cluster tree,
//! matrix-vector products, storage accounting and sampled error estimates.
//!
//! [`HtlrMatrix`] stores admissible blocks in Tucker form; [`HMatrix`] is
//! the conventional baseline with flat low-rank blocks built from the same
//! interpolant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::block::{build_dense, build_lowrank, build_tlr, DenseBlock, LowRankBlock, RankTrim, StorageCounts, TuckerBlock};
use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::{AdmissibilityRule, BlockClusterTree, BlockKind, ClusterTree, IndexBox, UniformGrid};
use crate::kernel::{CoefficientFn, KernelSpec, Nystrom, QuadratureConfig};
use crate::tensor::{norm2, DenseMatrix};

/// Everything needed to build an operator on a given grid.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// Tucker rank `p` per mode.
    pub rank: usize,
    /// Leaf threshold `N_0`: boxes with more points are split.
    pub leaf_threshold: usize,
    pub rule: AdmissibilityRule,
    pub kernel: KernelSpec,
    pub coeff: CoefficientFn,
    pub quadrature: QuadratureConfig,
    pub trim: RankTrim,
}

impl BuildConfig {
    /// Kernel-only operator (`a ≡ 0`) with default quadrature and no trimming.
    pub fn new(kernel: KernelSpec, rank: usize, leaf_threshold: usize, rule: AdmissibilityRule) -> Self {
        Self {
            rank,
            leaf_threshold,
            rule,
            kernel,
            coeff: CoefficientFn::Constant(0.0),
            quadrature: QuadratureConfig::default(),
            trim: RankTrim::Off,
        }
    }

    pub fn with_coeff(mut self, coeff: CoefficientFn) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn with_trim(mut self, trim: RankTrim) -> Self {
        self.trim = trim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return invalid("rank must be positive");
        }
        if self.leaf_threshold == 0 {
            return invalid("leaf threshold must be positive");
        }
        if let AdmissibilityRule::Strong { eta } = self.rule {
            AdmissibilityRule::strong(eta)?;
        }
        self.quadrature.validate()
    }
}

/// A block type usable on admissible leaves.
pub trait AdmissibleBlock: Sized + Send + Sync {
    const VARIANT: &'static str;
    fn build(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, cfg: &BuildConfig) -> Result<Self>;
    fn apply_add(&self, x: &[f64], y: &mut [f64]) -> Result<()>;
    fn storage(&self) -> StorageCounts;
    fn to_dense(&self) -> Result<DenseMatrix>;
    fn apply_flops(&self) -> usize;
    fn planned_storage(tau: &[usize], sigma: &[usize], p: usize) -> StorageCounts;
    /// Closed-form storage bound for the whole operator, where one is known.
    fn storage_bound(_cfg: &BuildConfig, _grid: &UniformGrid) -> Option<f64> {
        None
    }
}

impl AdmissibleBlock for TuckerBlock {
    const VARIANT: &'static str = "htlr";

    fn build(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, cfg: &BuildConfig) -> Result<Self> {
        build_tlr(nys, tau, sigma, cfg.rank, cfg.trim)
    }

    fn apply_add(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        TuckerBlock::apply_add(self, x, y)
    }

    fn storage(&self) -> StorageCounts {
        TuckerBlock::storage(self)
    }

    fn to_dense(&self) -> Result<DenseMatrix> {
        TuckerBlock::to_dense(self)
    }

    fn apply_flops(&self) -> usize {
        TuckerBlock::apply_flops(self)
    }

    fn planned_storage(tau: &[usize], sigma: &[usize], p: usize) -> StorageCounts {
        TuckerBlock::planned_storage(tau, sigma, p)
    }

    /// `(16 d p^(2-d) + p^d + 2^d p^d) N` under weak admissibility.
    fn storage_bound(cfg: &BuildConfig, grid: &UniformGrid) -> Option<f64> {
        if cfg.rule != AdmissibilityRule::Weak {
            return None;
        }
        let (d, p) = (grid.dim() as i32, cfg.rank as f64);
        let per_point = 16.0 * d as f64 * p.powi(2 - d) + p.powi(d) + 2f64.powi(d) * p.powi(d);
        Some(per_point * grid.num_points() as f64)
    }
}

impl AdmissibleBlock for LowRankBlock {
    const VARIANT: &'static str = "hmatrix";

    fn build(nys: &Nystrom, tau: &IndexBox, sigma: &IndexBox, cfg: &BuildConfig) -> Result<Self> {
        build_lowrank(nys, tau, sigma, cfg.rank)
    }

    fn apply_add(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        LowRankBlock::apply_add(self, x, y)
    }

    fn storage(&self) -> StorageCounts {
        LowRankBlock::storage(self)
    }

    fn to_dense(&self) -> Result<DenseMatrix> {
        LowRankBlock::to_dense(self)
    }

    fn apply_flops(&self) -> usize {
        LowRankBlock::apply_flops(self)
    }

    fn planned_storage(tau: &[usize], sigma: &[usize], p: usize) -> StorageCounts {
        LowRankBlock::planned_storage(tau, sigma, p)
    }
}

#[derive(Debug, Clone)]
pub enum Payload<B> {
    Admissible(B),
    Dense(DenseBlock),
}

#[derive(Debug, Clone)]
pub struct Leaf<B> {
    /// Row and column cluster-tree nodes.
    pub row: usize,
    pub col: usize,
    pub payload: Payload<B>,
}

/// Totals by category, plus the closed-form bound where one applies.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StorageReport {
    pub dense_scalars: usize,
    pub factor_scalars: usize,
    pub core_scalars: usize,
    pub total_scalars: usize,
    pub theoretical_bound: Option<f64>,
}

impl StorageReport {
    fn new(c: StorageCounts, bound: Option<f64>) -> Self {
        Self {
            dense_scalars: c.dense,
            factor_scalars: c.factor,
            core_scalars: c.core,
            total_scalars: c.total(),
            theoretical_bound: bound,
        }
    }

    pub fn within_bound(&self) -> Option<bool> {
        self.theoretical_bound.map(|b| self.total_scalars as f64 <= b)
    }
}

/// Hierarchical operator with admissible blocks of type `B`.
#[derive(Debug)]
pub struct HierarchicalMatrix<B> {
    config: BuildConfig,
    nys: Nystrom,
    cluster: ClusterTree,
    blocks: BlockClusterTree,
    /// Global point indices of every cluster-tree node.
    indices: Vec<Vec<usize>>,
    leaves: Vec<Leaf<B>>,
}

pub type HtlrMatrix = HierarchicalMatrix<TuckerBlock>;
pub type HMatrix = HierarchicalMatrix<LowRankBlock>;

fn trees(cfg: &BuildConfig, grid: &UniformGrid) -> Result<(ClusterTree, BlockClusterTree)> {
    cfg.validate()?;
    let cluster = ClusterTree::new(grid, cfg.leaf_threshold)?;
    let blocks = BlockClusterTree::new(&cluster, cfg.rule, grid);
    Ok((cluster, blocks))
}

fn warn_rank_leaf_relation(cfg: &BuildConfig, cluster: &ClusterTree) {
    let leaf = cluster.node(cluster.leaves()[0]).index_box.side(0);
    if cluster.nodes().len() > 1 && !(cfg.rank <= leaf && leaf <= 2 * cfg.rank) {
        log::warn!("leaf side {leaf} is outside [p, 2p] for p = {}; storage estimates assume it is inside", cfg.rank);
    }
}

impl<B: AdmissibleBlock> HierarchicalMatrix<B> {
    /// Builds every leaf of the block cluster tree. Leaf payloads are built
    /// on the current rayon pool and collected in tree order.
    pub fn construct(cfg: &BuildConfig, grid: &UniformGrid) -> Result<Self> {
        let (cluster, blocks) = trees(cfg, grid)?;
        warn_rank_leaf_relation(cfg, &cluster);
        let nys = Nystrom::new(cfg.kernel.clone(), cfg.coeff.clone(), *grid, cfg.quadrature)?;
        let indices: Vec<Vec<usize>> = cluster.nodes().iter().map(|c| c.index_box.global_indices(grid.n())).collect();
        let leaves = blocks
            .leaves()
            .par_iter()
            .map(|&k| {
                let node = blocks.node(k);
                let (tau, sigma) = (&cluster.node(node.row).index_box, &cluster.node(node.col).index_box);
                let payload = match node.kind {
                    BlockKind::AdmissibleLeaf => Payload::Admissible(B::build(&nys, tau, sigma, cfg)?),
                    BlockKind::InadmissibleLeaf => {
                        assert!(
                            cluster.node(node.row).is_leaf() && cluster.node(node.col).is_leaf(),
                            "inadmissible block above the leaf level"
                        );
                        Payload::Dense(build_dense(&nys, tau, sigma))
                    }
                    BlockKind::Internal => unreachable!("internal node listed as leaf"),
                };
                Ok(Leaf { row: node.row, col: node.col, payload })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config: cfg.clone(), nys, cluster, blocks, indices, leaves })
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn grid(&self) -> &UniformGrid {
        self.nys.grid()
    }

    pub fn nystrom(&self) -> &Nystrom {
        &self.nys
    }

    pub fn cluster_tree(&self) -> &ClusterTree {
        &self.cluster
    }

    pub fn block_tree(&self) -> &BlockClusterTree {
        &self.blocks
    }

    pub fn leaves(&self) -> &[Leaf<B>] {
        &self.leaves
    }

    pub fn size(&self) -> usize {
        self.grid().num_points()
    }

    /// Global indices of the points in cluster-tree node `k`.
    pub fn indices(&self, k: usize) -> &[usize] {
        &self.indices[k]
    }

    fn apply_leaf(&self, leaf: &Leaf<B>, u: &[f64], f: &mut [f64], xbuf: &mut Vec<f64>, ybuf: &mut Vec<f64>) -> Result<()> {
        let (rows, cols) = (&self.indices[leaf.row], &self.indices[leaf.col]);
        xbuf.clear();
        xbuf.extend(cols.iter().map(|&j| u[j]));
        ybuf.clear();
        ybuf.resize(rows.len(), 0.0);
        match &leaf.payload {
            Payload::Admissible(b) => b.apply_add(xbuf, ybuf)?,
            Payload::Dense(b) => b.apply_add(xbuf, ybuf)?,
        }
        for (&i, &v) in rows.iter().zip(ybuf.iter()) {
            f[i] += v;
        }
        Ok(())
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.size() {
            return shape_err(format!("operator of size {} applied to vector of length {}", self.size(), u.len()));
        }
        Ok(())
    }

    /// `f = A u`, accumulating leaf contributions in depth-first order.
    pub fn matvec(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let mut f = vec![0.0; self.size()];
        let (mut xb, mut yb) = (Vec::new(), Vec::new());
        for leaf in &self.leaves {
            self.apply_leaf(leaf, u, &mut f, &mut xb, &mut yb)?;
        }
        Ok(f)
    }

    /// `f = A u` on the current rayon pool. Leaves are cut into a fixed
    /// number of contiguous chunks whose partial sums are added in chunk
    /// order, so the result does not depend on the thread count.
    pub fn par_matvec(&self, u: &[f64]) -> Result<Vec<f64>> {
        const CHUNKS: usize = 64;
        self.check_len(u)?;
        let n = self.size();
        let chunk = self.leaves.len().div_ceil(CHUNKS).max(1);
        let partials = self
            .leaves
            .par_chunks(chunk)
            .map(|leaves| {
                let mut f = vec![0.0; n];
                let (mut xb, mut yb) = (Vec::new(), Vec::new());
                for leaf in leaves {
                    self.apply_leaf(leaf, u, &mut f, &mut xb, &mut yb)?;
                }
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut f = vec![0.0; n];
        for p in partials {
            f.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
        }
        Ok(f)
    }

    pub fn storage_report(&self) -> StorageReport {
        let mut c = StorageCounts::default();
        for leaf in &self.leaves {
            c += match &leaf.payload {
                Payload::Admissible(b) => b.storage(),
                Payload::Dense(b) => b.storage(),
            };
        }
        StorageReport::new(c, B::storage_bound(&self.config, self.grid()))
    }

    /// Multiply-adds of one matrix-vector product.
    pub fn apply_flops(&self) -> usize {
        self.leaves
            .iter()
            .map(|leaf| match &leaf.payload {
                Payload::Admissible(b) => b.apply_flops(),
                Payload::Dense(b) => b.storage().dense,
            })
            .sum()
    }

    /// Materializes the operator (small problems only).
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let n = self.size();
        if n > 1 << 13 {
            return Err(Error::TooLarge { n, limit: 1 << 13 });
        }
        let mut a = DenseMatrix::zeros(n, n);
        for leaf in &self.leaves {
            let m = match &leaf.payload {
                Payload::Admissible(b) => b.to_dense()?,
                Payload::Dense(b) => b.matrix().clone(),
            };
            for (jj, &j) in self.indices[leaf.col].iter().enumerate() {
                for (ii, &i) in self.indices[leaf.row].iter().enumerate() {
                    a[(i, j)] = m[(ii, jj)];
                }
            }
        }
        Ok(a)
    }
}

/// Storage of the operator [`HierarchicalMatrix::construct`] would build,
/// counted from the block tree alone.
pub fn storage_plan<B: AdmissibleBlock>(cfg: &BuildConfig, grid: &UniformGrid) -> Result<StorageReport> {
    let (cluster, blocks) = trees(cfg, grid)?;
    let mut c = StorageCounts::default();
    for &k in blocks.leaves() {
        let node = blocks.node(k);
        let (tau, sigma) = (&cluster.node(node.row).index_box, &cluster.node(node.col).index_box);
        match node.kind {
            BlockKind::AdmissibleLeaf => {
                if let Some(side) = tau.sides().into_iter().chain(sigma.sides()).find(|&s| s < cfg.rank) {
                    return Err(Error::RankTooLarge { rank: cfg.rank, side });
                }
                c += B::planned_storage(&tau.sides(), &sigma.sides(), cfg.rank);
            }
            _ => c.dense += tau.len() * sigma.len(),
        }
    }
    Ok(StorageReport::new(c, B::storage_bound(cfg, grid)))
}

pub fn construct(cfg: &BuildConfig, grid: &UniformGrid) -> Result<HtlrMatrix> {
    HtlrMatrix::construct(cfg, grid)
}

pub fn construct_hmatrix(cfg: &BuildConfig, grid: &UniformGrid) -> Result<HMatrix> {
    HMatrix::construct(cfg, grid)
}

/// Exact rows of an operator, evaluated on demand.
pub trait RowOracle {
    fn size(&self) -> usize;
    /// `(A u)_i` for each requested `i`.
    fn rows_times(&self, rows: &[usize], u: &[f64]) -> Result<Vec<f64>>;
}

/// `k` distinct indices of `0..n`, drawn uniformly with a seeded generator.
pub fn sample_rows(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return invalid(format!("cannot sample {k} rows out of {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, k).into_vec())
}

/// `‖f̃(I) - f(I)‖ / ‖f(I)‖` over a seeded random row sample `I`.
pub fn sampled_rel_error(approx: &[f64], oracle: &dyn RowOracle, u: &[f64], sample_size: usize, seed: u64) -> Result<f64> {
    if approx.len() != oracle.size() || u.len() != oracle.size() {
        return shape_err("approximate product, input and oracle sizes differ");
    }
    let rows = sample_rows(oracle.size(), sample_size, seed)?;
    let exact = oracle.rows_times(&rows, u)?;
    let diff: Vec<f64> = rows.iter().zip(&exact).map(|(&i, e)| approx[i] - e).collect();
    let den = norm2(&exact);
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(norm2(&diff) / den)
}

/// Sampled relative error of `a u` against `oracle`; 1000 rows by default.
pub fn estimate_rel_error_random<B: AdmissibleBlock>(
    a: &HierarchicalMatrix<B>,
    oracle: &dyn RowOracle,
    u: &[f64],
    sample_size: usize,
    seed: u64,
) -> Result<f64> {
    let f = a.matvec(u)?;
    sampled_rel_error(&f, oracle, u, sample_size.min(a.size()), seed)
}

pub const DEFAULT_SAMPLE_SIZE: usize = 1000;
