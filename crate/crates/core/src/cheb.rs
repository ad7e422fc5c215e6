//! Chebyshev interpolation on boxes: nodes, Lagrange basis, interpolation
//! factors and cores, and the a-priori error bound for asymptotically
//! smooth kernels.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelSpec;
use crate::tensor::{DenseMatrix, DenseTensor};

/// `p` Chebyshev points of the first kind on `[a, b]`, in decreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid1D {
    a: f64,
    b: f64,
    nodes: Vec<f64>,
}

/// Node `t` (0-based) is `(b - a)/2 cos((2t + 1)π / (2p)) + (b + a)/2`.
pub fn cheb_points(a: f64, b: f64, p: usize) -> Result<ChebGrid1D> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return invalid(format!("invalid interval [{a}, {b}]"));
    }
    if p == 0 {
        return invalid("interpolation order must be at least 1");
    }
    let (half, mid) = (0.5 * (b - a), 0.5 * (b + a));
    let nodes = (0..p)
        .map(|t| half * ((2 * t + 1) as f64 * PI / (2 * p) as f64).cos() + mid)
        .collect();
    Ok(ChebGrid1D { a, b, nodes })
}

impl ChebGrid1D {
    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `L_t(x) = Π_{j≠t} (x - ξ_j) / (ξ_t - ξ_j)`.
    pub fn lagrange(&self, t: usize, x: f64) -> f64 {
        let xt = self.nodes[t];
        self.nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != t)
            .map(|(_, &xj)| (x - xj) / (xt - xj))
            .product()
    }

    fn check_inside(&self, x: f64) -> Result<()> {
        let slack = 1e-12 * (self.b - self.a);
        if x < self.a - slack || x > self.b + slack || x.is_nan() {
            return Err(Error::OutsideInterval { value: x, lo: self.a, hi: self.b });
        }
        Ok(())
    }
}

/// Checked Lagrange evaluation.
pub fn lagrange_eval(grid: &ChebGrid1D, t: usize, x: f64) -> Result<f64> {
    if t >= grid.order() {
        return invalid(format!("node index {t} out of range for order {}", grid.order()));
    }
    grid.check_inside(x)?;
    Ok(grid.lagrange(t, x))
}

/// `n x p` matrix with entry `(i, t) = L_t(points[i])`.
pub fn factor_matrix(points: &[f64], grid: &ChebGrid1D) -> Result<DenseMatrix> {
    for &x in points {
        grid.check_inside(x)?;
    }
    Ok(DenseMatrix::from_fn(points.len(), grid.order(), |i, t| grid.lagrange(t, points[i])))
}

/// Order-`2d` tensor of kernel values at node pairs: entry
/// `(t_1..t_d, s_1..s_d)` is `k(ξ_t, η_s)`.
pub fn core_tensor(k: &KernelSpec, grids_tau: &[ChebGrid1D], grids_sigma: &[ChebGrid1D]) -> Result<DenseTensor> {
    let d = grids_tau.len();
    if d == 0 || grids_sigma.len() != d {
        return invalid("core tensor needs the same positive number of grids on both sides");
    }
    let shape: Vec<usize> = grids_tau.iter().chain(grids_sigma).map(|g| g.order()).collect();
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut err = None;
    let t = DenseTensor::from_fn(&shape, |idx| {
        for l in 0..d {
            x[l] = grids_tau[l].nodes[idx[l]];
            y[l] = grids_sigma[l].nodes[idx[d + l]];
        }
        k.eval(&x, &y).unwrap_or_else(|e| {
            err.get_or_insert(e);
            f64::NAN
        })
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(t),
    }
}

/// `max_x Σ_t |L_t(x)|` over a uniform sample of `[-1, 1]` (endpoints
/// included, at least `10^4` points).
pub fn lebesgue_constant(p: usize) -> Result<f64> {
    let g = cheb_points(-1.0, 1.0, p)?;
    let samples = 20_001;
    Ok((0..samples)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / (samples - 1) as f64;
            (0..p).map(|t| g.lagrange(t, x).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Inputs to [`asymptotic_error_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    pub c_as: f64,
    pub gamma: f64,
    pub eta: f64,
    pub p: usize,
    pub d: usize,
    pub lambda_p: f64,
}

impl BoundParams {
    /// Fills `lambda_p` from [`lebesgue_constant`].
    pub fn new(c_as: f64, gamma: f64, eta: f64, p: usize, d: usize) -> Result<Self> {
        let b = Self { c_as, gamma, eta, p, d, lambda_p: lebesgue_constant(p)? };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.c_as, self.gamma, self.eta, self.lambda_p].iter().all(|v| *v > 0.0 && v.is_finite());
        if !ok || self.p == 0 || self.d == 0 {
            return invalid(format!("bound parameters must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Relative interpolation error bound on an `eta`-admissible box pair:
/// `4 C γ^(p+1) Λ_p^(2d-1) d / (4η)^(p+1)`.
pub fn asymptotic_error_bound(b: &BoundParams) -> f64 {
    let e = (b.p + 1) as i32;
    4.0 * b.c_as * (b.gamma / (4.0 * b.eta)).powi(e) * b.lambda_p.powi(2 * b.d as i32 - 1) * b.d as f64
}
