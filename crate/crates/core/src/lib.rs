//! Hierarchical Tucker low-rank (HTLR) matrices.
//!
//! Kernel matrices on uniform tensor grids are compressed block-wise: a
//! hierarchical block partition separates interactions between overlapping
//! boxes (stored densely) from interactions between admissible box pairs,
//! which are interpolated with tensor Chebyshev polynomials and stored in
//! Tucker form. A conventional hierarchical matrix with flat low-rank
//! blocks is provided as a baseline, together with dense and SVD-based
//! oracles and a quasi-uniform triangle-mesh front end.

pub mod bench;
pub mod block;
pub mod cheb;
pub mod error;
pub mod grid;
pub mod htlr;
pub mod kernel;
pub mod oracle;
pub mod quadrature;
pub mod quasi;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DenseMatrix, DenseTensor, PivotedQr, QrResult};
