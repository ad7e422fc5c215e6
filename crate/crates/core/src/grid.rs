//! Uniform grids, index boxes, cluster trees and block cluster trees.
//!
//! Grid indices are 0-based. The point with multi-index `(i_1, ..., i_d)`
//! sits at `((i_1 + 1/2) h, ..., (i_d + 1/2) h)` with `h = 1/n` and has
//! global index `i_1 + n i_2 + n^2 i_3`.

use crate::error::{invalid, Error, Result};

/// `n^d` cell-centred points on the unit cube, `d ∈ {2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformGrid {
    dim: usize,
    n: usize,
}

impl UniformGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return invalid(format!("dimension must be 2 or 3, got {dim}"));
        }
        if n == 0 {
            return invalid("grid needs at least one point per direction");
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total point count `N = n^d`.
    pub fn num_points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    /// Coordinates of the point with global index `g`.
    pub fn point(&self, g: usize) -> [f64; 3] {
        let mut x = [0.0; 3];
        let mut r = g;
        for xl in x.iter_mut().take(self.dim) {
            *xl = self.coord(r % self.n);
            r /= self.n;
        }
        x
    }

    pub fn full_box(&self) -> IndexBox {
        IndexBox { lo: vec![0; self.dim], hi: vec![self.n; self.dim] }
    }

    /// `[lo h, hi h]` per dimension: the union of the cells of the box.
    pub fn domain_of(&self, b: &IndexBox) -> DomainBox {
        let h = self.h();
        DomainBox {
            lo: b.lo.iter().map(|&l| l as f64 * h).collect(),
            hi: b.hi.iter().map(|&u| u as f64 * h).collect(),
        }
    }
}

/// A tensor product of half-open index ranges `lo[l]..hi[l]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexBox {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl IndexBox {
    pub fn new(lo: Vec<usize>, hi: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return invalid("index box needs matching, non-empty bounds");
        }
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return invalid(format!("empty index range in {lo:?}..{hi:?}"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, l: usize) -> usize {
        self.hi[l] - self.lo[l]
    }

    pub fn sides(&self) -> Vec<usize> {
        (0..self.dim()).map(|l| self.side(l)).collect()
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|l| self.side(l)).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, idx: &[usize]) -> bool {
        idx.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&i, (&l, &h))| l <= i && i < h)
    }

    pub fn intersects(&self, other: &IndexBox) -> bool {
        (0..self.dim()).all(|l| self.lo[l] < other.hi[l] && other.lo[l] < self.hi[l])
    }

    /// Global indices of the box points, first dimension fastest, so that the
    /// gathered vector reshapes to a tensor of shape [`IndexBox::sides`].
    pub fn global_indices(&self, n: usize) -> Vec<usize> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = self.lo.clone();
        for _ in 0..self.len() {
            let mut g = 0;
            for l in (0..d).rev() {
                g = g * n + idx[l];
            }
            out.push(g);
            for l in 0..d {
                idx[l] += 1;
                if idx[l] < self.hi[l] {
                    break;
                }
                idx[l] = self.lo[l];
            }
        }
        out
    }

    /// The `2^d` halves; bit `l` of the child number selects the upper half
    /// in dimension `l`. Every side must be even.
    pub fn split(&self) -> Option<Vec<IndexBox>> {
        let d = self.dim();
        if (0..d).any(|l| self.side(l) % 2 != 0) {
            return None;
        }
        Some(
            (0..1usize << d)
                .map(|c| {
                    let mut lo = self.lo.clone();
                    let mut hi = self.hi.clone();
                    for l in 0..d {
                        let mid = self.lo[l] + self.side(l) / 2;
                        if c >> l & 1 == 0 {
                            hi[l] = mid;
                        } else {
                            lo[l] = mid;
                        }
                    }
                    IndexBox { lo, hi }
                })
                .collect(),
        )
    }
}

/// An axis-aligned box `[lo_l, hi_l]` in space.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return invalid(format!("invalid domain box {lo:?}..{hi:?}"));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diam(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    /// Euclidean distance between the closest points of the two boxes.
    pub fn dist(&self, other: &DomainBox) -> f64 {
        (0..self.dim())
            .map(|l| {
                let gap = (other.lo[l] - self.hi[l]).max(self.lo[l] - other.hi[l]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn overlap_volume(&self, other: &DomainBox) -> f64 {
        (0..self.dim())
            .map(|l| (self.hi[l].min(other.hi[l]) - self.lo[l].max(other.lo[l])).max(0.0))
            .product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdmissibilityRule {
    /// Admissible iff the domains do not overlap (touching is allowed).
    Weak,
    /// Admissible iff `max(diam) <= eta * dist`.
    Strong { eta: f64 },
}

impl AdmissibilityRule {
    pub fn strong(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return invalid(format!("eta must be positive, got {eta}"));
        }
        Ok(Self::Strong { eta })
    }

    pub fn is_admissible(&self, a: &DomainBox, b: &DomainBox) -> bool {
        match *self {
            Self::Weak => a.overlap_volume(b) == 0.0,
            Self::Strong { eta } => a.diam().max(b.diam()) <= eta * a.dist(b),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Weak => "weak",
            Self::Strong { .. } => "strong",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterNode {
    pub index_box: IndexBox,
    pub children: Vec<usize>,
    pub level: usize,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Recursive `2^d` bisection of the grid. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    nodes: Vec<ClusterNode>,
    leaf_threshold: usize,
}

impl ClusterTree {
    /// Splits every box with more than `leaf_threshold` points into halves
    /// along each dimension. Fails if a box that must be split has an odd side.
    pub fn new(grid: &UniformGrid, leaf_threshold: usize) -> Result<Self> {
        if leaf_threshold == 0 {
            return invalid("leaf threshold must be positive");
        }
        let mut nodes = vec![ClusterNode { index_box: grid.full_box(), children: vec![], level: 0 }];
        let mut k = 0;
        while k < nodes.len() {
            if nodes[k].index_box.len() > leaf_threshold {
                let kids = nodes[k].index_box.split().ok_or_else(|| Error::IndivisibleGrid {
                    n: grid.n(),
                    reason: format!(
                        "box with sides {:?} exceeds {leaf_threshold} points but cannot be halved",
                        nodes[k].index_box.sides()
                    ),
                })?;
                let level = nodes[k].level + 1;
                let first = nodes.len();
                nodes.extend(kids.into_iter().map(|b| ClusterNode { index_box: b, children: vec![], level }));
                nodes[k].children = (first..nodes.len()).collect();
            }
            k += 1;
        }
        Ok(Self { nodes, leaf_threshold })
    }

    /// Tree with leaves of exactly `leaf_side^d` points; requires
    /// `n = leaf_side * 2^L`.
    pub fn with_leaf_side(grid: &UniformGrid, leaf_side: usize) -> Result<Self> {
        levels_for_leaf_side(grid.n(), leaf_side)?;
        Self::new(grid, leaf_side.pow(grid.dim() as u32))
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, k: usize) -> &ClusterNode {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn leaf_threshold(&self) -> usize {
        self.leaf_threshold
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&k| self.nodes[k].is_leaf()).collect()
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }
}

/// `L` with `n = leaf_side * 2^L`, or an error naming the constraint.
pub fn levels_for_leaf_side(n: usize, leaf_side: usize) -> Result<usize> {
    if leaf_side == 0 || n % leaf_side != 0 || !(n / leaf_side).is_power_of_two() {
        return Err(Error::IndivisibleGrid {
            n,
            reason: format!("n must equal leaf side {leaf_side} times a power of two"),
        });
    }
    Ok((n / leaf_side).trailing_zeros() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    AdmissibleLeaf,
    InadmissibleLeaf,
    Internal,
}

#[derive(Debug, Clone)]
pub struct BlockNode {
    /// Cluster-tree node of the row box.
    pub row: usize,
    /// Cluster-tree node of the column box.
    pub col: usize,
    pub kind: BlockKind,
    pub children: Vec<usize>,
}

/// Hierarchical partition of index pairs. Node 0 is `(root, root)`.
#[derive(Debug, Clone)]
pub struct BlockClusterTree {
    nodes: Vec<BlockNode>,
    leaves: Vec<usize>,
    rule: AdmissibilityRule,
}

impl BlockClusterTree {
    pub fn new(tree: &ClusterTree, rule: AdmissibilityRule, grid: &UniformGrid) -> Self {
        let mut bt = Self { nodes: Vec::new(), leaves: Vec::new(), rule };
        bt.visit(tree, grid, tree.root(), tree.root());
        bt
    }

    fn visit(&mut self, tree: &ClusterTree, grid: &UniformGrid, row: usize, col: usize) -> usize {
        let id = self.nodes.len();
        let (rn, cn) = (tree.node(row), tree.node(col));
        let kind = if self.rule.is_admissible(&grid.domain_of(&rn.index_box), &grid.domain_of(&cn.index_box)) {
            BlockKind::AdmissibleLeaf
        } else if rn.is_leaf() || cn.is_leaf() {
            BlockKind::InadmissibleLeaf
        } else {
            BlockKind::Internal
        };
        self.nodes.push(BlockNode { row, col, kind, children: vec![] });
        if kind == BlockKind::Internal {
            let mut children = Vec::with_capacity(rn.children.len() * cn.children.len());
            for &r in &rn.children {
                for &c in &cn.children {
                    children.push(self.visit(tree, grid, r, c));
                }
            }
            self.nodes[id].children = children;
        } else {
            self.leaves.push(id);
        }
        id
    }

    pub fn nodes(&self) -> &[BlockNode] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &BlockNode {
        &self.nodes[k]
    }

    /// Leaf ids in depth-first order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn rule(&self) -> AdmissibilityRule {
        self.rule
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.leaves.iter().filter(|&&k| self.nodes[k].kind == kind).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dbox(lo: &[f64], hi: &[f64]) -> DomainBox {
        DomainBox::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn sixteen_squared_with_sixteen_point_leaves() {
        let g = UniformGrid::new(2, 16).unwrap();
        let t = ClusterTree::new(&g, 16).unwrap();
        let leaves = t.leaves();
        assert_eq!(leaves.len(), 16);
        for &k in &leaves {
            assert_eq!(t.node(k).index_box.sides(), vec![4, 4]);
            assert_eq!(t.node(k).level, 2);
        }
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn small_grid_is_single_leaf() {
        let g = UniformGrid::new(2, 4).unwrap();
        let t = ClusterTree::new(&g, 16).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert!(t.node(0).is_leaf());
    }

    #[test]
    fn thirty_two_squared_gives_64_leaves() {
        let g = UniformGrid::new(2, 32).unwrap();
        let t = ClusterTree::new(&g, 16).unwrap();
        assert_eq!(t.leaves().len(), 64);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn odd_side_is_rejected() {
        let g = UniformGrid::new(2, 24).unwrap();
        // 24 -> 12 -> 6 -> 3, and 3x3 = 9 > 4 must be split again
        assert!(matches!(ClusterTree::new(&g, 4), Err(Error::IndivisibleGrid { .. })));
        assert!(ClusterTree::new(&g, 9).is_ok());
        assert!(levels_for_leaf_side(48, 16).is_err());
        assert_eq!(levels_for_leaf_side(64, 16).unwrap(), 2);
    }

    #[test]
    fn domain_boxes() {
        let g = UniformGrid::new(2, 16).unwrap();
        assert_eq!(g.domain_of(&g.full_box()), dbox(&[0.0, 0.0], &[1.0, 1.0]));
        let b = IndexBox::new(vec![0, 0], vec![4, 4]).unwrap();
        assert_eq!(g.domain_of(&b), dbox(&[0.0, 0.0], &[0.25, 0.25]));
        let g3 = UniformGrid::new(3, 8).unwrap();
        let b = IndexBox::new(vec![4, 0, 0], vec![8, 4, 4]).unwrap();
        assert_eq!(g3.domain_of(&b), dbox(&[0.5, 0.0, 0.0], &[1.0, 0.5, 0.5]));
    }

    #[test]
    fn admissibility_examples() {
        let a = dbox(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(!AdmissibilityRule::Weak.is_admissible(&a, &a));
        let b = dbox(&[1.0, 0.0], &[2.0, 1.0]);
        assert!(AdmissibilityRule::Weak.is_admissible(&a, &b));
        let s = AdmissibilityRule::strong(2f64.sqrt()).unwrap();
        let c = dbox(&[2.0, 0.0], &[3.0, 1.0]);
        assert!(s.is_admissible(&a, &c));
        assert!(!s.is_admissible(&a, &b));
        assert!(AdmissibilityRule::strong(0.0).is_err());
    }

    #[test]
    fn global_indices_first_dimension_fastest() {
        let b = IndexBox::new(vec![1, 2], vec![3, 4]).unwrap();
        assert_eq!(b.global_indices(8), vec![17, 18, 25, 26]);
    }

    fn leaf_rows_inadmissible_counts(rule: AdmissibilityRule) -> Vec<usize> {
        let g = UniformGrid::new(2, 16).unwrap();
        let t = ClusterTree::new(&g, 16).unwrap();
        let bt = BlockClusterTree::new(&t, rule, &g);
        t.leaves()
            .iter()
            .map(|&r| {
                bt.leaves()
                    .iter()
                    .filter(|&&k| bt.node(k).row == r && bt.node(k).kind == BlockKind::InadmissibleLeaf)
                    .count()
            })
            .collect()
    }

    #[test]
    fn weak_rule_leaves_only_the_diagonal_dense() {
        assert!(leaf_rows_inadmissible_counts(AdmissibilityRule::Weak).iter().all(|&c| c == 1));
    }

    #[test]
    fn strong_rule_has_at_most_nine_dense_per_row() {
        let counts = leaf_rows_inadmissible_counts(AdmissibilityRule::strong(2f64.sqrt()).unwrap());
        assert!(counts.iter().all(|&c| (1..=9).contains(&c)));
        assert!(counts.contains(&9));
    }

    #[test]
    fn tiny_problem_is_one_dense_block() {
        let g = UniformGrid::new(2, 4).unwrap();
        let t = ClusterTree::new(&g, 16).unwrap();
        let bt = BlockClusterTree::new(&t, AdmissibilityRule::Weak, &g);
        assert_eq!(bt.leaves(), &[0]);
        assert_eq!(bt.node(0).kind, BlockKind::InadmissibleLeaf);
    }

    #[test]
    fn leaves_tile_the_index_square() {
        for n in [8usize, 16, 32] {
            for rule in [AdmissibilityRule::Weak, AdmissibilityRule::Strong { eta: 2f64.sqrt() }] {
                let g = UniformGrid::new(2, n).unwrap();
                let t = ClusterTree::new(&g, 16).unwrap();
                let bt = BlockClusterTree::new(&t, rule, &g);
                let big_n = g.num_points();
                let mut hits = vec![0u8; big_n * big_n];
                for &k in bt.leaves() {
                    let node = bt.node(k);
                    let rows = t.node(node.row).index_box.global_indices(n);
                    let cols = t.node(node.col).index_box.global_indices(n);
                    for &i in &rows {
                        for &j in &cols {
                            hits[i + j * big_n] += 1;
                        }
                    }
                    if node.kind == BlockKind::AdmissibleLeaf {
                        assert!(rule.is_admissible(
                            &g.domain_of(&t.node(node.row).index_box),
                            &g.domain_of(&t.node(node.col).index_box)
                        ));
                    } else {
                        assert!(t.node(node.row).is_leaf() && t.node(node.col).is_leaf());
                    }
                }
                assert!(hits.iter().all(|&h| h == 1), "n = {n}");
            }
        }
    }

    #[test]
    fn weak_admissible_iff_distinct_at_equal_level() {
        let g = UniformGrid::new(2, 16).unwrap();
        let t = ClusterTree::new(&g, 16).unwrap();
        for (a, na) in t.nodes().iter().enumerate() {
            for (b, nb) in t.nodes().iter().enumerate() {
                if na.level != nb.level {
                    continue;
                }
                let adm = AdmissibilityRule::Weak
                    .is_admissible(&g.domain_of(&na.index_box), &g.domain_of(&nb.index_box));
                assert_eq!(adm, a != b);
            }
        }
    }

    #[test]
    fn children_partition_parent() {
        let g = UniformGrid::new(3, 16).unwrap();
        let t = ClusterTree::new(&g, 8).unwrap();
        for node in t.nodes().iter().filter(|n| !n.is_leaf()) {
            let mut all: Vec<usize> = node
                .children
                .iter()
                .flat_map(|&c| t.node(c).index_box.global_indices(16))
                .collect();
            all.sort_unstable();
            let mut parent = node.index_box.global_indices(16);
            parent.sort_unstable();
            assert_eq!(all, parent);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_box() -> impl Strategy<Value = DomainBox> {
            (0.0..4.0f64, 0.0..4.0f64, 0.01..2.0f64, 0.01..2.0f64)
                .prop_map(|(x, y, w, h)| DomainBox::new(vec![x, y], vec![x + w, y + h]).unwrap())
        }

        proptest! {
            #[test]
            fn strong_rule_is_monotone_in_eta(a in arb_box(), b in arb_box(), e1 in 0.1..4.0f64, de in 0.0..4.0f64) {
                let r1 = AdmissibilityRule::Strong { eta: e1 };
                let r2 = AdmissibilityRule::Strong { eta: e1 + de };
                if r1.is_admissible(&a, &b) {
                    prop_assert!(r2.is_admissible(&a, &b));
                }
            }

            #[test]
            fn strong_implies_weak(a in arb_box(), b in arb_box(), eta in 0.1..8.0f64) {
                if (AdmissibilityRule::Strong { eta }).is_admissible(&a, &b) {
                    prop_assert!(AdmissibilityRule::Weak.is_admissible(&a, &b));
                }
            }

            #[test]
            fn siblings_are_disjoint(dim in 2usize..=3, lvl in 0u32..3, leaf in 1usize..4) {
                let g = UniformGrid::new(dim, leaf << lvl).unwrap();
                let t = ClusterTree::new(&g, leaf.pow(dim as u32)).unwrap();
                for node in t.nodes() {
                    for (i, &a) in node.children.iter().enumerate() {
                        for &b in &node.children[i + 1..] {
                            prop_assert!(!t.node(a).index_box.intersects(&t.node(b).index_box));
                        }
                    }
                }
            }
        }
    }
}
