//! Quasi-uniform triangle grids on the unit square: mesh I/O, overlap-area
//! transfer matrices to and from an auxiliary uniform grid, and the
//! three-stage product `T Â S u`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::{ClusterTree, UniformGrid};
use crate::htlr::{construct, BuildConfig, HtlrMatrix, RowOracle};
use crate::kernel::{CoefficientFn, KernelSpec, QuadratureConfig};
use crate::quadrature::integrate_triangle_centroid_singular;

pub type Point2 = [f64; 2];
pub type Triangle = [Point2; 3];

/// Tolerance on `|sum of areas - 1|` accepted when building a mesh.
pub const COVERAGE_TOL: f64 = 1e-8;

/// Triangulation of `[0, 1]^2` with per-triangle centroids and areas.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    centers: Vec<Point2>,
    areas: Vec<f64>,
}

fn signed_area(t: &Triangle) -> f64 {
    0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]))
}

impl TriMesh {
    pub fn new(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut centers = Vec::with_capacity(triangles.len());
        let mut areas = Vec::with_capacity(triangles.len());
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(&v) = tri.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {f} references vertex {v} of {}", vertices.len())));
            }
            let t = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            let area = signed_area(&t).abs();
            if area <= f64::EPSILON * 1e-3 {
                return Err(Error::Mesh(format!("triangle {f} has zero area")));
            }
            centers.push([(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0]);
            areas.push(area);
        }
        let total: f64 = areas.iter().sum();
        if (total - 1.0).abs() > COVERAGE_TOL {
            return Err(Error::Mesh(format!("triangles cover area {total}, expected 1")));
        }
        Ok(Self { vertices, triangles, centers, areas })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn centers(&self) -> &[Point2] {
        &self.centers
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Corners of triangle `f`, counter-clockwise.
    pub fn triangle(&self, f: usize) -> Triangle {
        let [a, b, c] = self.triangles[f];
        let t = [self.vertices[a], self.vertices[b], self.vertices[c]];
        if signed_area(&t) < 0.0 {
            [t[0], t[2], t[1]]
        } else {
            t
        }
    }

    /// Text form: `V F`, then `x y` per vertex, then 1-based `i j k` per
    /// triangle.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?}", v[0], v[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut next = |what: &str| tokens.next().ok_or_else(|| Error::Mesh(format!("unexpected end of input reading {what}")));
        let count = |s: &str| s.parse::<usize>().map_err(|_| Error::Mesh(format!("bad count {s:?}")));
        let nv = count(next("vertex count")?)?;
        let nf = count(next("triangle count")?)?;
        let mut vertices = Vec::with_capacity(nv);
        for k in 0..nv {
            let mut c = [0.0; 2];
            for x in &mut c {
                let s = next("vertex coordinate")?;
                *x = s.parse().map_err(|_| Error::Mesh(format!("vertex {}: bad coordinate {s:?}", k + 1)))?;
            }
            vertices.push(c);
        }
        let mut triangles = Vec::with_capacity(nf);
        for f in 0..nf {
            let mut t = [0usize; 3];
            for v in &mut t {
                let s = next("triangle index")?;
                let i: usize = s.parse().map_err(|_| Error::Mesh(format!("triangle {}: bad index {s:?}", f + 1)))?;
                if i == 0 || i > nv {
                    return Err(Error::Mesh(format!("triangle {}: index {i} outside 1..={nv}", f + 1)));
                }
                *v = i - 1;
            }
            triangles.push(t);
        }
        if let Some(extra) = next("").ok() {
            return Err(Error::Mesh(format!("trailing token {extra:?}")));
        }
        Self::new(vertices, triangles)
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    TriMesh::parse(&std::fs::read_to_string(path)?)
}

pub fn write_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    Ok(std::fs::write(path, mesh.to_text())?)
}

fn vid(k: usize, i: usize, j: usize) -> usize {
    i + (k + 1) * j
}

/// `k x k` cells, each split along its anti-diagonal into a lower-left and
/// an upper-right triangle. Triangles `2c` and `2c + 1` belong to cell
/// `c = i + k j`.
pub fn structured_trimesh(k: usize) -> Result<TriMesh> {
    if k == 0 {
        return invalid("need at least one cell per side");
    }
    let h = 1.0 / k as f64;
    let vertices = (0..=k).flat_map(|j| (0..=k).map(move |i| [i as f64 * h, j as f64 * h])).collect();
    let mut triangles = Vec::with_capacity(2 * k * k);
    for j in 0..k {
        for i in 0..k {
            let (a, b, c, d) = (vid(k, i, j), vid(k, i + 1, j), vid(k, i + 1, j + 1), vid(k, i, j + 1));
            triangles.push([a, b, d]);
            triangles.push([b, c, d]);
        }
    }
    TriMesh::new(vertices, triangles)
}

/// [`structured_trimesh`] with interior vertices moved by up to
/// `amplitude` cell widths per coordinate and boundary vertices slid along
/// their edge. Corners stay fixed, so the square stays covered.
pub fn perturbed_trimesh(k: usize, amplitude: f64, seed: u64) -> Result<TriMesh> {
    if !(0.0..0.25).contains(&amplitude) {
        return invalid("perturbation amplitude must lie in [0, 0.25)");
    }
    let base = structured_trimesh(k)?;
    let h = 1.0 / k as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = base.vertices.clone();
    for j in 0..=k {
        for i in 0..=k {
            let v = &mut vertices[vid(k, i, j)];
            let (dx, dy): (f64, f64) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            if i != 0 && i != k {
                v[0] += amplitude * h * dx;
            }
            if j != 0 && j != k {
                v[1] += amplitude * h * dy;
            }
        }
    }
    TriMesh::new(vertices, base.triangles)
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`.
pub fn clip_polygon(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut out = subject.to_vec();
    for e in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[e], clip[(e + 1) % clip.len()]);
        let side = |p: &Point2| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for (k, cur) in input.iter().enumerate() {
            let prev = &input[(k + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(*cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: &Point2, q: &Point2, sp: f64, sq: f64) -> Point2 {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let s: f64 = (0..n).map(|k| {
        let (p, q) = (poly[k], poly[(k + 1) % n]);
        p[0] * q[1] - q[0] * p[1]
    }).sum();
    0.5 * s.abs()
}

fn square(lo: Point2, hi: Point2) -> [Point2; 4] {
    [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]]
}

/// `|tri ∩ [lo, hi]|` for an axis-aligned cell.
pub fn overlap_area(tri: &Triangle, lo: Point2, hi: Point2) -> f64 {
    let t = if signed_area(tri) < 0.0 { [tri[0], tri[2], tri[1]] } else { *tri };
    polygon_area(&clip_polygon(&t, &square(lo, hi)))
}

/// The same area computed by clipping the cell against the triangle.
pub fn overlap_area_reversed(tri: &Triangle, lo: Point2, hi: Point2) -> f64 {
    let t = if signed_area(tri) < 0.0 { [tri[0], tri[2], tri[1]] } else { *tri };
    polygon_area(&clip_polygon(&square(lo, hi), &t))
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInterpMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseInterpMatrix {
    /// From `(row, col, value)` triplets already sorted by row.
    fn from_sorted(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx: entries.iter().map(|e| e.1).collect(),
            values: entries.iter().map(|e| e.2).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, weight)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return shape_err(format!("{}x{} sparse matrix applied to length {}", self.rows, self.cols, x.len()));
        }
        Ok((0..self.rows).map(|r| self.row(r).map(|(j, v)| v * x[j]).sum()).collect())
    }
}

/// Nonzero overlaps `(triangle, cell, area)` between the mesh and an
/// `m x m` cell grid, ordered by triangle then cell.
fn overlaps(mesh: &TriMesh, m: usize) -> Vec<(usize, usize, f64)> {
    let h = 1.0 / m as f64;
    let cell_range = |a: f64, b: f64| {
        let lo = ((a * m as f64).floor().max(0.0) as usize).min(m - 1);
        let hi = ((b * m as f64).ceil().max(1.0) as usize).min(m);
        lo..hi
    };
    (0..mesh.len())
        .into_par_iter()
        .flat_map_iter(|f| {
            let t = mesh.triangle(f);
            let (xs, ys) = (t.map(|p| p[0]), t.map(|p| p[1]));
            let fold = |v: [f64; 3], g: fn(f64, f64) -> f64| v[1..].iter().fold(v[0], |a, &b| g(a, b));
            let (ci, cj) = (cell_range(fold(xs, f64::min), fold(xs, f64::max)), cell_range(fold(ys, f64::min), fold(ys, f64::max)));
            let mut out = Vec::new();
            for j in cj {
                for i in ci.clone() {
                    let lo = [i as f64 * h, j as f64 * h];
                    let a = overlap_area(&t, lo, [lo[0] + h, lo[1] + h]);
                    if a > 0.0 {
                        out.push((f, i + m * j, a));
                    }
                }
            }
            out
        })
        .collect()
}

fn check_stochastic(mat: &SparseInterpMatrix, what: &str) -> Result<()> {
    for (r, s) in mat.row_sums().into_iter().enumerate() {
        if (s - 1.0).abs() > COVERAGE_TOL {
            return Err(Error::Mesh(format!("row {r} of {what} sums to {s}; the mesh does not cover its cell")));
        }
    }
    Ok(())
}

/// `S_{t,i} = |cell_t ∩ tri_i| / |cell_t|`, of size `m^2 x N`.
pub fn build_s(mesh: &TriMesh, m_side: usize) -> Result<SparseInterpMatrix> {
    if m_side == 0 {
        return invalid("uniform grid needs at least one cell per side");
    }
    let cell = 1.0 / (m_side * m_side) as f64;
    let mut e: Vec<(usize, usize, f64)> = overlaps(mesh, m_side).into_iter().map(|(f, t, a)| (t, f, a / cell)).collect();
    e.sort_by_key(|&(t, f, _)| (t, f));
    let s = SparseInterpMatrix::from_sorted(m_side * m_side, mesh.len(), &e);
    check_stochastic(&s, "S")?;
    Ok(s)
}

/// `T_{i,t} = |tri_i ∩ cell_t| / |tri_i|`, of size `N x m^2`.
pub fn build_t(mesh: &TriMesh, m_side: usize) -> Result<SparseInterpMatrix> {
    if m_side == 0 {
        return invalid("uniform grid needs at least one cell per side");
    }
    let e: Vec<(usize, usize, f64)> = overlaps(mesh, m_side).into_iter().map(|(f, t, a)| (f, t, a / mesh.areas[f])).collect();
    let t = SparseInterpMatrix::from_sorted(mesh.len(), m_side * m_side, &e);
    check_stochastic(&t, "T")?;
    Ok(t)
}

/// The cell count per side nearest `rho * sqrt(N / 2)` that the cluster
/// tree can split with leaf threshold `leaf_threshold`.
pub fn choose_m_side(n: usize, rho: f64, leaf_threshold: usize) -> Result<usize> {
    if !(rho.is_finite() && rho > 0.0) {
        return invalid(format!("oversampling ratio {rho} must be positive"));
    }
    let target = (rho * rho * n as f64 / 2.0).sqrt();
    let splittable = |m: usize| UniformGrid::new(2, m).and_then(|g| ClusterTree::new(&g, leaf_threshold)).is_ok();
    let base = target.round().max(1.0) as usize;
    for delta in 0..=base {
        for m in [base + delta, base.saturating_sub(delta)] {
            if m > 0 && splittable(m) {
                return Ok(m);
            }
        }
    }
    invalid(format!("no splittable grid near {target:.1} cells per side"))
}

/// `f ≈ T Â S u` for a triangle mesh.
#[derive(Debug)]
pub struct QuasiPipeline {
    pub t_mat: SparseInterpMatrix,
    pub op: HtlrMatrix,
    pub s_mat: SparseInterpMatrix,
    pub m_side: usize,
    /// Realized oversampling ratio `sqrt(2M / N)`.
    pub rho: f64,
}

impl QuasiPipeline {
    /// Builds the transfer matrices and the operator on the uniform grid
    /// nearest the requested oversampling ratio.
    pub fn build(mesh: &TriMesh, rho: f64, cfg: &BuildConfig) -> Result<Self> {
        let m_side = choose_m_side(mesh.len(), rho, cfg.leaf_threshold)?;
        Self::with_m_side(mesh, m_side, cfg)
    }

    pub fn with_m_side(mesh: &TriMesh, m_side: usize, cfg: &BuildConfig) -> Result<Self> {
        let grid = UniformGrid::new(2, m_side)?;
        let op = construct(cfg, &grid)?;
        let s_mat = build_s(mesh, m_side)?;
        let t_mat = build_t(mesh, m_side)?;
        let rho = (2.0 * (m_side * m_side) as f64 / mesh.len() as f64).sqrt();
        Ok(Self { t_mat, op, s_mat, m_side, rho })
    }

    pub fn size(&self) -> usize {
        self.t_mat.rows()
    }

    pub fn m(&self) -> usize {
        self.m_side * self.m_side
    }
}

pub fn apply_pipeline(p: &QuasiPipeline, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() != p.size() {
        return shape_err(format!("pipeline of size {} applied to length {}", p.size(), u.len()));
    }
    let su = p.s_mat.apply(u)?;
    let f = p.op.matvec(&su)?;
    p.t_mat.apply(&f)
}

/// Rows of the collocation system on the mesh, summed directly:
/// `a(x_i) u_i + sum_j K_ij |tri_j| u_j` with the self term integrated over
/// the triangle.
#[derive(Debug, Clone)]
pub struct QuasiDirect {
    mesh: TriMesh,
    kernel: KernelSpec,
    coeff: CoefficientFn,
    /// `∫_{tri_i} k(x_i, y) dy`.
    self_terms: Vec<f64>,
}

impl QuasiDirect {
    pub fn new(mesh: &TriMesh, kernel: &KernelSpec, coeff: &CoefficientFn, quad: &QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        let self_terms = (0..mesh.len())
            .into_par_iter()
            .map(|i| {
                let c = mesh.centers[i];
                integrate_triangle_centroid_singular(&|y: &[f64]| kernel.value(&c, y), mesh.triangle(i), quad.order)
            })
            .collect();
        Ok(Self { mesh: mesh.clone(), kernel: kernel.clone(), coeff: coeff.clone(), self_terms })
    }

    pub fn row_times(&self, i: usize, u: &[f64]) -> f64 {
        let xi = self.mesh.centers[i];
        let mut s = self.coeff.eval(&xi) * u[i] + self.self_terms[i] * u[i];
        for (j, (xj, aj)) in self.mesh.centers.iter().zip(&self.mesh.areas).enumerate() {
            if j != i {
                s += self.kernel.value(&xi, xj) * aj * u[j];
            }
        }
        s
    }
}

impl RowOracle for QuasiDirect {
    fn size(&self) -> usize {
        self.mesh.len()
    }

    fn rows_times(&self, rows: &[usize], u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.size() {
            return shape_err("input length differs from mesh size");
        }
        Ok(rows.par_iter().map(|&i| self.row_times(i, u)).collect())
    }
}

/// Smooth test input `1 + 0.5 exp(-(x-0.3)^2 - (y-0.6)^2) + sin(5 x y)`.
pub fn smooth_input(x: &Point2) -> f64 {
    1.0 + 0.5 * (-(x[0] - 0.3).powi(2) - (x[1] - 0.6).powi(2)).exp() + (5.0 * x[0] * x[1]).sin()
}

/// [`smooth_input`] sampled at the triangle centroids.
pub fn sample_input(mesh: &TriMesh) -> Vec<f64> {
    mesh.centers.iter().map(smooth_input).collect()
}
