//! Kernel functions, the coefficient `a(x)`, and Nyström matrix entries.
//!
//! The discretized operator has entries `A_ij = a(x_i) δ_ij + h^d K_ij` with
//! `K_ij = k(x_i, x_j)` off the diagonal and `K_ii` the cell average of
//! `k(x_i, ·)` over the cell of `x_i`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::grid::UniformGrid;
use crate::quadrature::{integrate_box, integrate_cube_corner_singular};

pub type KernelFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum KernelKind {
    /// `exp(-|x - y|^2 / (2 sigma^2))`.
    Gaussian { sigma: f64 },
    /// `-log|x - y| / (2π)`.
    Slp2d,
    /// `1 / (4π |x - y|)`.
    Slp3d,
    /// `k ≡ c`.
    Constant(f64),
    /// Any user function; must be safe to call concurrently.
    Custom(KernelFn),
}

#[derive(Clone)]
pub struct KernelSpec {
    kind: KernelKind,
    smooth_at_diagonal: bool,
    translation_invariant: bool,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name())
            .field("smooth_at_diagonal", &self.smooth_at_diagonal)
            .finish()
    }
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return invalid(format!("Gaussian bandwidth must be positive, got {sigma}"));
        }
        Ok(Self { kind: KernelKind::Gaussian { sigma }, smooth_at_diagonal: true, translation_invariant: true })
    }

    pub fn slp2d() -> Self {
        Self { kind: KernelKind::Slp2d, smooth_at_diagonal: false, translation_invariant: true }
    }

    pub fn slp3d() -> Self {
        Self { kind: KernelKind::Slp3d, smooth_at_diagonal: false, translation_invariant: true }
    }

    pub fn constant(c: f64) -> Self {
        Self { kind: KernelKind::Constant(c), smooth_at_diagonal: true, translation_invariant: true }
    }

    /// A user kernel. `smooth_at_diagonal` selects the diagonal quadrature;
    /// custom kernels are never assumed translation-invariant.
    pub fn custom(f: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static, smooth_at_diagonal: bool) -> Self {
        Self { kind: KernelKind::Custom(Arc::new(f)), smooth_at_diagonal, translation_invariant: false }
    }

    /// `"gaussian"` (bandwidth `sqrt(dim)`), `"slp2d"` or `"slp3d"`.
    pub fn from_name(name: &str, dim: usize) -> Result<Self> {
        match name {
            "gaussian" => Self::gaussian((dim as f64).sqrt()),
            "slp2d" if dim == 2 => Ok(Self::slp2d()),
            "slp3d" if dim == 3 => Ok(Self::slp3d()),
            "slp2d" | "slp3d" => invalid(format!("kernel {name} is not defined for dimension {dim}")),
            _ => invalid(format!("unknown kernel {name:?}; expected gaussian, slp2d or slp3d")),
        }
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn smooth_at_diagonal(&self) -> bool {
        self.smooth_at_diagonal
    }

    pub fn translation_invariant(&self) -> bool {
        self.translation_invariant
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KernelKind::Gaussian { .. } => "gaussian",
            KernelKind::Slp2d => "slp2d",
            KernelKind::Slp3d => "slp3d",
            KernelKind::Constant(_) => "constant",
            KernelKind::Custom(_) => "custom",
        }
    }

    /// Unchecked evaluation; singular kernels return `±inf` at `x = y`.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2 = || x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        match &self.kind {
            KernelKind::Gaussian { sigma } => (-r2() / (2.0 * sigma * sigma)).exp(),
            KernelKind::Slp2d => -r2().ln() / (4.0 * PI),
            KernelKind::Slp3d => 1.0 / (4.0 * PI * r2().sqrt()),
            KernelKind::Constant(c) => *c,
            KernelKind::Custom(f) => f(x, y),
        }
    }

    /// Checked evaluation: singular kernels reject coincident points.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return invalid("points of different dimension");
        }
        if !self.smooth_at_diagonal && x == y {
            return Err(Error::SingularEvaluation);
        }
        Ok(self.value(x, y))
    }
}

/// The coefficient `a(x)` of the identity term.
#[derive(Clone)]
pub enum CoefficientFn {
    Constant(f64),
    Function(PointFn),
}

impl fmt::Debug for CoefficientFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl CoefficientFn {
    pub fn function(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Function(f) => f(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureScheme {
    /// Duffy rule for kernels singular at the diagonal, tensor rule otherwise.
    Auto,
    Duffy,
    Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureConfig {
    /// Gauss–Legendre points per direction.
    pub order: usize,
    pub scheme: QuadratureScheme,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { order: 10, scheme: QuadratureScheme::Auto }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return invalid(format!("quadrature order must be at least 2, got {}", self.order));
        }
        Ok(())
    }
}

/// Cell average `∫_{cell} k(center, y) dy / h^d` over the cube of side `h`
/// centred at `center`.
pub fn diagonal_entry(k: &KernelSpec, center: &[f64], h: f64, cfg: &QuadratureConfig) -> f64 {
    if let KernelKind::Constant(c) = k.kind() {
        return *c;
    }
    let d = center.len();
    let duffy = match cfg.scheme {
        QuadratureScheme::Auto => !k.smooth_at_diagonal(),
        QuadratureScheme::Duffy => true,
        QuadratureScheme::Tensor => false,
    };
    let f = |y: &[f64]| k.value(center, y);
    let integral = if duffy {
        integrate_cube_corner_singular(&f, center, 0.5 * h, cfg.order)
    } else {
        let lo: Vec<f64> = center.iter().map(|c| c - 0.5 * h).collect();
        let hi: Vec<f64> = center.iter().map(|c| c + 0.5 * h).collect();
        integrate_box(&f, &lo, &hi, cfg.order)
    };
    integral / h.powi(d as i32)
}

/// Entry evaluator for the discretized operator on a uniform grid. Dense
/// blocks and the dense oracle both go through this type, so their entries
/// agree bit for bit.
#[derive(Clone, Debug)]
pub struct Nystrom {
    kernel: KernelSpec,
    coeff: CoefficientFn,
    grid: UniformGrid,
    quad: QuadratureConfig,
    /// `K_ii`, shared by every cell when the kernel is translation-invariant.
    diag: Option<f64>,
    hd: f64,
}

impl Nystrom {
    pub fn new(kernel: KernelSpec, coeff: CoefficientFn, grid: UniformGrid, quad: QuadratureConfig) -> Result<Self> {
        quad.validate()?;
        let diag = kernel
            .translation_invariant()
            .then(|| diagonal_entry(&kernel, &grid.point(0)[..grid.dim()], grid.h(), &quad));
        let hd = grid.h().powi(grid.dim() as i32);
        Ok(Self { kernel, coeff, grid, quad, diag, hd })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn coeff(&self) -> &CoefficientFn {
        &self.coeff
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quad
    }

    /// `h^d`.
    pub fn weight(&self) -> f64 {
        self.hd
    }

    /// `K_ii` at the point with global index `i`.
    pub fn kernel_diagonal(&self, i: usize) -> f64 {
        match self.diag {
            Some(v) => v,
            None => {
                let x = self.grid.point(i);
                diagonal_entry(&self.kernel, &x[..self.grid.dim()], self.grid.h(), &self.quad)
            }
        }
    }

    /// `A_ij` for global indices `i`, `j`.
    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let d = self.grid.dim();
        let xi = self.grid.point(i);
        if i == j {
            self.coeff.eval(&xi[..d]) + self.hd * self.kernel_diagonal(i)
        } else {
            let xj = self.grid.point(j);
            self.hd * self.kernel.value(&xi[..d], &xj[..d])
        }
    }
}
