//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/tensors.md")]
pub mod tensors {}

#[doc = include_str!("../../../book/src/grids.md")]
pub mod grids {}

#[doc = include_str!("../../../book/src/interpolation.md")]
pub mod interpolation {}

#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}

#[doc = include_str!("../../../book/src/blocks.md")]
pub mod blocks {}

#[doc = include_str!("../../../book/src/hierarchical.md")]
pub mod hierarchical {}

#[doc = include_str!("../../../book/src/quasi_uniform.md")]
pub mod quasi_uniform {}

#[doc = include_str!("../../../book/src/benchmarks.md")]
pub mod benchmarks {}
